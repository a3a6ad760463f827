use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dgcnn,
    PointTransformer,
}

/// Architecture family plus the three mechanism switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub use_attention: bool,
    pub use_position_encoding: bool,
    pub use_downsampling: bool,
    pub k_neighbors: usize,
    /// Five widths: four stage widths plus the final embedding width.
    pub layer_widths: Vec<usize>,
    /// Hidden widths of the classification head.
    pub head_widths: Vec<usize>,
    pub num_classes: usize,
    pub points_in: usize,
    pub downsample_stride: usize,
}

/// The six named configurations compared in the ablation and hybrid studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "dgcnn")]
    Dgcnn,
    #[serde(rename = "dgcnn-ds")]
    DgcnnDs,
    #[serde(rename = "pt")]
    Pt,
    #[serde(rename = "pt-noattn")]
    PtNoAttn,
    #[serde(rename = "pt-nope")]
    PtNoPe,
    #[serde(rename = "pt-nods")]
    PtNoDs,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Dgcnn, Variant::DgcnnDs, Variant::Pt, Variant::PtNoAttn, Variant::PtNoPe, Variant::PtNoDs];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dgcnn => "dgcnn",
            Variant::DgcnnDs => "dgcnn-ds",
            Variant::Pt => "pt",
            Variant::PtNoAttn => "pt-noattn",
            Variant::PtNoPe => "pt-nope",
            Variant::PtNoDs => "pt-nods",
        }
    }

    /// Label used in figure tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Dgcnn => "DGCNN",
            Variant::DgcnnDs => "DGCNN + DS",
            Variant::Pt => "Original",
            Variant::PtNoAttn => "NoAttn",
            Variant::PtNoPe => "NoPE",
            Variant::PtNoDs => "NoDS",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::InvalidSpec(format!("unknown variant {s:?}")))
    }
}

fn scale(widths: &[usize], factor: f64) -> Vec<usize> {
    widths.iter().map(|&w| ((w as f64 * factor).round() as usize).max(1)).collect()
}

impl ModelSpec {
    /// Full-size DGCNN: EdgeConv widths 64, 64, 128, 256 and a 1024 embedding.
    pub fn dgcnn(num_classes: usize) -> Self {
        ModelSpec {
            family: Family::Dgcnn,
            use_attention: false,
            use_position_encoding: false,
            use_downsampling: false,
            k_neighbors: 20,
            layer_widths: vec![64, 64, 128, 256, 1024],
            head_widths: vec![512, 256],
            num_classes,
            points_in: 1024,
            downsample_stride: 4,
        }
    }

    /// Full-size Point Transformer: widths 32..512, four stride-4 downsampling stages.
    pub fn point_transformer(num_classes: usize) -> Self {
        ModelSpec {
            family: Family::PointTransformer,
            use_attention: true,
            use_position_encoding: true,
            use_downsampling: true,
            k_neighbors: 16,
            layer_widths: vec![32, 64, 128, 256, 512],
            head_widths: vec![256, 128],
            num_classes,
            points_in: 1024,
            downsample_stride: 4,
        }
    }

    pub fn for_variant(variant: Variant, num_classes: usize) -> Self {
        match variant {
            Variant::Dgcnn => Self::dgcnn(num_classes),
            Variant::DgcnnDs => ModelSpec { use_downsampling: true, ..Self::dgcnn(num_classes) },
            Variant::Pt => Self::point_transformer(num_classes),
            Variant::PtNoAttn => ModelSpec { use_attention: false, ..Self::point_transformer(num_classes) },
            Variant::PtNoPe => ModelSpec { use_position_encoding: false, ..Self::point_transformer(num_classes) },
            Variant::PtNoDs => ModelSpec { use_downsampling: false, ..Self::point_transformer(num_classes) },
        }
    }

    /// Desk-scale version: widths multiplied by `width_factor`, `points_in` points.
    pub fn desk(variant: Variant, num_classes: usize, width_factor: f64, points_in: usize) -> Self {
        let mut s = Self::for_variant(variant, num_classes);
        s.layer_widths = scale(&s.layer_widths, width_factor);
        s.head_widths = scale(&s.head_widths, width_factor);
        s.points_in = points_in;
        s
    }

    /// Every width set to `width` (used for tiny gradient-check models).
    pub fn uniform_width(mut self, width: usize) -> Self {
        self.layer_widths = vec![width; 5];
        self.head_widths = vec![width; self.head_widths.len()];
        self
    }

    pub fn variant(&self) -> Option<Variant> {
        Variant::ALL.into_iter().find(|&v| {
            let base = Self::for_variant(v, self.num_classes);
            base.family == self.family
                && base.use_attention == self.use_attention
                && base.use_position_encoding == self.use_position_encoding
                && base.use_downsampling == self.use_downsampling
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.layer_widths.len() != 5 || self.layer_widths.contains(&0) {
            return bad("layer_widths must hold five positive widths");
        }
        if self.head_widths.contains(&0) {
            return bad("head widths must be positive");
        }
        if self.k_neighbors == 0 || self.num_classes == 0 || self.points_in == 0 || self.downsample_stride == 0 {
            return bad("k_neighbors, num_classes, points_in and downsample_stride must be positive");
        }
        if self.family == Family::Dgcnn && (self.use_attention || self.use_position_encoding) {
            return bad("DGCNN has no attention or position encoding");
        }
        Ok(())
    }

    /// Smallest cloud the model accepts.
    pub fn min_points(&self) -> usize {
        self.k_neighbors
    }
}
