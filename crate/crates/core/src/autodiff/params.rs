use std::collections::HashMap;

use super::tensor::{Real, Tensor};
use super::{AutodiffError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// `false` for buffers such as batch-norm running statistics.
    pub trainable: bool,
}

/// Named parameters and buffers, addressed by insertion index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> usize {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        self.params.push(Param { name: name.to_string(), tensor, trainable });
        self.by_name.insert(name.to_string(), self.params.len() - 1);
        self.params.len() - 1
    }

    pub fn add_param(&mut self, name: &str, tensor: Tensor<T>) -> usize {
        self.insert(name, tensor, true)
    }

    pub fn add_buffer(&mut self, name: &str, tensor: Tensor<T>) -> usize {
        self.insert(name, tensor, false)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Param<T> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Param<T> {
        &mut self.params[id]
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.numel()).sum()
    }

    /// Overwrite values by name; every stored entry must be present with the same shape.
    pub fn assign(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        let lookup: HashMap<&str, &Tensor<T>> = named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for p in &mut self.params {
            let t = lookup.get(p.name.as_str()).ok_or_else(|| AutodiffError::MissingTensor(p.name.clone()))?;
            if t.shape() != p.tensor.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "assign",
                    detail: format!("{}: {:?} vs {:?}", p.name, t.shape(), p.tensor.shape()),
                });
            }
            p.tensor = (*t).clone();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), tensor: p.tensor.cast(), trainable: p.trainable })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
