use serde::{Deserialize, Serialize};

use crate::diffkit::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Updated by Adam.
    Euclidean,
    /// Columns are Poincaré-ball points, updated by Riemannian Adam.
    Ball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) {
        self.params.push(Param {
            name: name.into(),
            kind,
            value,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        Ok(&self.params[self.index(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        let i = self.index(name)?;
        Ok(&mut self.params[i])
    }

    pub fn ball_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind == ParamKind::Ball).count()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
