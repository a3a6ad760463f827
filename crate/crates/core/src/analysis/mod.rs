//! Response ingestion, accuracy profiles, and human/model correlation tests.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::rng::seeded;
use crate::stimulus::{Condition, StimulusManifest};
use crate::trainer::{normal_interval, EvalReport};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("record {index}: unknown stimulus {stimulus_id:?}")]
    UnknownStimulus { index: usize, stimulus_id: String },
    #[error("record {index}: {msg}")]
    SchemaViolation { index: usize, msg: String },
    #[error("no records for condition {0}")]
    EmptyCondition(Condition),
    #[error("vectors must have equal length >= 3, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("profiles do not share condition axes: {0}")]
    AxisMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// One forced-choice response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant_id: String,
    pub stimulus_id: String,
    pub condition: Condition,
    pub true_category: String,
    pub chosen_category: String,
    pub correct: bool,
    pub response_ms: f64,
    pub timestamp: String,
}

/// Raw log line. Trial lines may omit `correct`; a line with
/// `record_type = "demographics"` carries participant-level flags.
#[derive(Deserialize)]
struct RawLine {
    #[serde(default)]
    record_type: Option<String>,
    participant_id: Option<String>,
    stimulus_id: Option<String>,
    condition: Option<Condition>,
    true_category: Option<String>,
    chosen_category: Option<String>,
    correct: Option<bool>,
    response_ms: Option<f64>,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    serious: Option<bool>,
    #[serde(default)]
    phase: Option<String>,
}

/// Which participants to drop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionRules {
    /// Drop everyone who reported `serious: false`.
    pub drop_not_serious: bool,
    pub exclude_participants: Vec<String>,
}

impl ExclusionRules {
    pub fn standard() -> Self {
        ExclusionRules { drop_not_serious: true, exclude_participants: Vec::new() }
    }
}

/// Parse and validate a JSONL response log against its manifest. Practice
/// and demographics lines are skipped; excluded participants are dropped.
pub fn ingest_responses<R: BufRead>(input: R, manifest: &StimulusManifest, rules: &ExclusionRules) -> Result<Vec<TrialRecord>> {
    let by_id: HashMap<&str, &crate::stimulus::Trial> = manifest.trials.iter().map(|t| (t.stimulus_id.as_str(), t)).collect();
    let mut records = Vec::new();
    let mut dropped: BTreeSet<String> = rules.exclude_participants.iter().cloned().collect();
    for (index, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| AnalysisError::SchemaViolation { index, msg };
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let participant_id = raw.participant_id.ok_or_else(|| bad("missing participant_id".into()))?;
        if rules.drop_not_serious && raw.serious == Some(false) {
            dropped.insert(participant_id.clone());
        }
        match raw.record_type.as_deref() {
            Some("demographics") => continue,
            None | Some("trial") => {}
            Some(other) => return Err(bad(format!("unknown record_type {other:?}"))),
        }
        if raw.phase.as_deref() == Some("practice") {
            continue;
        }
        let stimulus_id = raw.stimulus_id.ok_or_else(|| bad("missing stimulus_id".into()))?;
        let trial = by_id.get(stimulus_id.as_str()).ok_or_else(|| AnalysisError::UnknownStimulus { index, stimulus_id: stimulus_id.clone() })?;
        let chosen = raw.chosen_category.ok_or_else(|| bad("missing chosen_category".into()))?;
        if !manifest.categories.contains(&chosen) {
            return Err(bad(format!("chosen category {chosen:?} not offered")));
        }
        if let Some(c) = raw.condition {
            if c != trial.condition {
                return Err(bad(format!("condition {c} does not match manifest {}", trial.condition)));
            }
        }
        if let Some(t) = &raw.true_category {
            if *t != trial.category {
                return Err(bad(format!("true category {t:?} does not match manifest {:?}", trial.category)));
            }
        }
        let correct = chosen == trial.category;
        if raw.correct.is_some_and(|c| c != correct) {
            return Err(bad("correct flag disagrees with chosen category".into()));
        }
        let response_ms = raw.response_ms.ok_or_else(|| bad("missing response_ms".into()))?;
        if !(response_ms >= 0.0 && response_ms.is_finite()) {
            return Err(bad(format!("bad response_ms {response_ms}")));
        }
        records.push(TrialRecord {
            participant_id,
            stimulus_id,
            condition: trial.condition,
            true_category: trial.category.clone(),
            chosen_category: chosen,
            correct,
            response_ms,
            timestamp: raw.timestamp.unwrap_or_default(),
        });
    }
    records.retain(|r| !dropped.contains(&r.participant_id));
    Ok(records)
}

pub fn write_records<W: Write>(records: &[TrialRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub condition: Condition,
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// Accuracy per condition for one series, canonical condition order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyProfile {
    pub series: String,
    pub points: Vec<ProfilePoint>,
}

impl AccuracyProfile {
    pub fn conditions(&self) -> Vec<Condition> {
        self.points.iter().map(|p| p.condition).collect()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.accuracy).collect()
    }

    pub fn get(&self, c: &Condition) -> Option<&ProfilePoint> {
        self.points.iter().find(|p| &p.condition == c)
    }

    /// The points at `conditions`, in that order.
    pub fn select(&self, conditions: &[Condition]) -> Result<AccuracyProfile> {
        let points = conditions
            .iter()
            .map(|c| self.get(c).copied().ok_or_else(|| AnalysisError::AxisMismatch(format!("{} lacks {c}", self.series))))
            .collect::<Result<_>>()?;
        Ok(AccuracyProfile { series: self.series.clone(), points })
    }

    /// Concatenate profiles over disjoint condition sets, re-sorted.
    pub fn pooled(series: &str, parts: &[&AccuracyProfile]) -> AccuracyProfile {
        let mut points: Vec<ProfilePoint> = parts.iter().flat_map(|p| p.points.iter().copied()).collect();
        points.sort_by(|a, b| a.condition.cmp(&b.condition));
        AccuracyProfile { series: series.to_string(), points }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Every trial weighs the same; binomial interval.
    Pooled,
    /// Per-participant accuracy first, then mean and normal interval across
    /// participants.
    ByParticipant,
}

/// Accuracy per condition. With `conditions` given, each must have records
/// and the output follows that order; otherwise every observed condition is
/// reported in canonical order.
pub fn accuracy_profile(series: &str, records: &[TrialRecord], conditions: Option<&[Condition]>, mode: Aggregation) -> Result<AccuracyProfile> {
    let mut cells: BTreeMap<Condition, BTreeMap<&str, (usize, usize)>> = BTreeMap::new();
    for r in records {
        let cell = cells.entry(r.condition).or_default().entry(r.participant_id.as_str()).or_default();
        cell.0 += usize::from(r.correct);
        cell.1 += 1;
    }
    let wanted: Vec<Condition> = match conditions {
        Some(cs) => cs.to_vec(),
        None => cells.keys().copied().collect(),
    };
    let mut points = Vec::with_capacity(wanted.len());
    for c in wanted {
        let per = cells.get(&c).ok_or(AnalysisError::EmptyCondition(c))?;
        let point = match mode {
            Aggregation::Pooled => {
                let (k, n) = per.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
                let (ci_lo, ci_hi) = normal_interval(k, n);
                ProfilePoint { condition: c, accuracy: k as f64 / n as f64, ci_lo, ci_hi, n }
            }
            Aggregation::ByParticipant => {
                let accs: Vec<f64> = per.values().map(|&(k, n)| k as f64 / n as f64).collect();
                let m = accs.len() as f64;
                let mean = accs.iter().sum::<f64>() / m;
                let sd = if accs.len() > 1 {
                    (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
                } else {
                    0.0
                };
                let half = 1.96 * sd / m.sqrt();
                ProfilePoint { condition: c, accuracy: mean, ci_lo: (mean - half).max(0.0), ci_hi: (mean + half).min(1.0), n: accs.len() }
            }
        };
        points.push(point);
    }
    Ok(AccuracyProfile { series: series.to_string(), points })
}

/// A model report as a profile; numbers are passed through unchanged.
pub fn profile_from_report(series: &str, report: &EvalReport) -> AccuracyProfile {
    AccuracyProfile {
        series: series.to_string(),
        points: report
            .rows
            .iter()
            .map(|r| ProfilePoint { condition: r.condition, accuracy: r.accuracy, ci_lo: r.ci_lo, ci_hi: r.ci_hi, n: r.total })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

/// Pearson correlation with a two-sided t-test p value (n - 2 df).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(AnalysisError::LengthMismatch(n, y.len()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Correlation { r, p, n })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependentComparison {
    pub z: f64,
    pub p: f64,
}

/// Steiger's test for two correlations that share one variable: `r1 =
/// r(x, y1)`, `r2 = r(x, y2)`, with `r12 = r(y1, y2)` over `n` observations.
pub fn compare_dependent_correlations(r1: f64, r2: f64, r12: f64, n: usize) -> Result<DependentComparison> {
    if n < 4 {
        return Err(AnalysisError::DegenerateInput(format!("n = {n} < 4")));
    }
    for r in [r1, r2, r12] {
        if !(r > -1.0 && r < 1.0) {
            return Err(AnalysisError::DegenerateInput(format!("correlation {r} outside (-1, 1)")));
        }
    }
    let rbar = (r1 + r2) / 2.0;
    let rb2 = rbar * rbar;
    let psi = r12 * (1.0 - 2.0 * rb2) - 0.5 * rb2 * (1.0 - 2.0 * rb2 - r12 * r12);
    let c = psi / ((1.0 - rb2) * (1.0 - rb2));
    let denom = 2.0 - 2.0 * c;
    if denom <= 0.0 {
        return Err(AnalysisError::DegenerateInput("non-positive variance of the difference".into()));
    }
    let z = (r1.atanh() - r2.atanh()) * ((n - 3) as f64).sqrt() / denom.sqrt();
    let p = 2.0 * (1.0 - Normal::standard().cdf(z.abs()));
    Ok(DependentComparison { z, p })
}

/// Trial outcomes of one series, grouped by condition (same order across series).
pub type Outcomes = Vec<Vec<bool>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// `r(x, y1) - r(x, y2)` on the observed data.
    pub observed: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Two-sided: twice the smaller tail share of resampled differences beyond zero.
    pub p: f64,
    pub reps: usize,
}

fn accuracies(o: &Outcomes) -> Vec<f64> {
    o.iter().map(|c| c.iter().filter(|&&b| b).count() as f64 / c.len() as f64).collect()
}

/// Trial-level bootstrap of the difference between two correlations with a
/// shared reference series. Trials are resampled with replacement within
/// each condition, independently per series.
pub fn bootstrap_correlation_difference(x: &Outcomes, y1: &Outcomes, y2: &Outcomes, reps: usize, seed: u64) -> Result<BootstrapResult> {
    let k = x.len();
    if y1.len() != k || y2.len() != k || k < 3 {
        return Err(AnalysisError::LengthMismatch(y1.len(), y2.len()));
    }
    if [x, y1, y2].iter().any(|s| s.iter().any(|c| c.is_empty())) {
        return Err(AnalysisError::DegenerateInput("condition without trials".into()));
    }
    let diff = |a: &Outcomes, b: &Outcomes, c: &Outcomes| -> Option<f64> {
        let (ax, bx, cx) = (accuracies(a), accuracies(b), accuracies(c));
        Some(pearson(&ax, &bx).ok()?.r - pearson(&ax, &cx).ok()?.r)
    };
    let observed = diff(x, y1, y2).ok_or(AnalysisError::ZeroVariance)?;
    let mut rng = seeded(seed);
    let resample = |s: &Outcomes, rng: &mut crate::rng::LabRng| -> Outcomes {
        s.iter().map(|c| (0..c.len()).map(|_| c[rng.gen_range(0..c.len())]).collect()).collect()
    };
    let mut draws = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (a, b, c) = (resample(x, &mut rng), resample(y1, &mut rng), resample(y2, &mut rng));
        if let Some(d) = diff(&a, &b, &c) {
            draws.push(d);
        }
    }
    if draws.is_empty() {
        return Err(AnalysisError::ZeroVariance);
    }
    draws.sort_by(f64::total_cmp);
    let q = |f: f64| draws[((f * (draws.len() - 1) as f64).round() as usize).min(draws.len() - 1)];
    let below = draws.iter().filter(|&&d| d <= 0.0).count() as f64 / draws.len() as f64;
    let above = draws.iter().filter(|&&d| d >= 0.0).count() as f64 / draws.len() as f64;
    Ok(BootstrapResult { observed, ci_lo: q(0.025), ci_hi: q(0.975), p: (2.0 * below.min(above)).min(1.0), reps: draws.len() })
}

/// Per-condition outcomes of a set of human records, following `conditions`.
pub fn outcomes_from_records(records: &[TrialRecord], conditions: &[Condition]) -> Outcomes {
    conditions.iter().map(|c| records.iter().filter(|r| &r.condition == c).map(|r| r.correct).collect()).collect()
}

/// Per-condition outcomes of a model report, following `conditions`.
pub fn outcomes_from_report(report: &EvalReport, conditions: &[Condition]) -> Outcomes {
    conditions.iter().map(|c| report.predictions.iter().filter(|p| &p.condition == c).map(|p| p.correct).collect()).collect()
}

/// One line of the long-format figure table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub series: String,
    pub condition_kind: String,
    pub condition_value: f64,
    pub accuracy: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// Write profiles as a long-format CSV. All profiles must share one
/// condition axis.
pub fn emit_figure_data<W: Write>(profiles: &[AccuracyProfile], w: W) -> Result<()> {
    if let Some(first) = profiles.first() {
        let axis = first.conditions();
        for p in &profiles[1..] {
            if p.conditions() != axis {
                return Err(AnalysisError::AxisMismatch(format!("{} vs {}", first.series, p.series)));
            }
        }
    }
    let mut out = csv::Writer::from_writer(w);
    if profiles.is_empty() {
        out.write_record(["series", "condition_kind", "condition_value", "accuracy", "ci_lo", "ci_hi", "n"])?;
    }
    for prof in profiles {
        for pt in &prof.points {
            out.serialize(FigureRow {
                series: prof.series.clone(),
                condition_kind: pt.condition.kind.name().to_string(),
                condition_value: pt.condition.value(),
                accuracy: pt.accuracy,
                ci_lo: pt.ci_lo,
                ci_hi: pt.ci_hi,
                n: pt.n,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parse a figure CSV back into profiles, in order of first appearance.
pub fn read_figure_data<R: Read>(r: R) -> Result<Vec<AccuracyProfile>> {
    let mut profiles: Vec<AccuracyProfile> = Vec::new();
    for (index, row) in csv::Reader::from_reader(r).deserialize::<FigureRow>().enumerate() {
        let row = row?;
        let condition = Condition::from_parts(&row.condition_kind, row.condition_value)
            .ok_or_else(|| AnalysisError::SchemaViolation { index, msg: format!("unknown condition kind {:?}", row.condition_kind) })?;
        let pt = ProfilePoint { condition, accuracy: row.accuracy, ci_lo: row.ci_lo, ci_hi: row.ci_hi, n: row.n };
        match profiles.iter_mut().find(|p| p.series == row.series) {
            Some(p) => p.points.push(pt),
            None => profiles.push(AccuracyProfile { series: row.series, points: vec![pt] }),
        }
    }
    Ok(profiles)
}

/// Pairwise Pearson r between the accuracy vectors of `profiles`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub series: Vec<String>,
    pub r: Vec<Vec<f64>>,
}

pub fn correlation_matrix(profiles: &[AccuracyProfile]) -> Result<CorrelationMatrix> {
    let axis = profiles.first().map(|p| p.conditions()).unwrap_or_default();
    if profiles.iter().any(|p| p.conditions() != axis) {
        return Err(AnalysisError::AxisMismatch("correlation matrix".into()));
    }
    let vs: Vec<Vec<f64>> = profiles.iter().map(|p| p.accuracies()).collect();
    let mut r = vec![vec![1.0; vs.len()]; vs.len()];
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let c = pearson(&vs[i], &vs[j]).map(|c| c.r).unwrap_or(f64::NAN);
            r[i][j] = c;
            r[j][i] = c;
        }
    }
    Ok(CorrelationMatrix { series: profiles.iter().map(|p| p.series.clone()).collect(), r })
}
