use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    /// Batch-norm scale, initialized to one.
    Scale,
    /// Batch-norm shift, initialized to zero.
    Shift,
    RunningMean,
    RunningVar,
    /// Fixed input transform (conditioning normalization).
    Constant,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        matches!(
            self,
            ParamKind::Weight | ParamKind::Bias | ParamKind::Scale | ParamKind::Shift
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// Fan-in used by the weight initializer.
    pub fan_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub spec: ParamSpec,
    pub tensor: Tensor<T>,
}

/// Ordered named tensors belonging to one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<NamedTensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn from_entries(entries: Vec<NamedTensor<T>>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[NamedTensor<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].tensor
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].tensor
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|e| e.spec.name == name)
            .map(|e| &e.tensor)
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            tensors: self
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.tensor.shape()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| NamedTensor {
                    spec: e.spec.clone(),
                    tensor: e.tensor.cast(),
                })
                .collect(),
        }
    }

    pub fn trainable_len(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.spec.kind.is_trainable())
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Trainable values concatenated in entry order.
    pub fn flatten_trainable(&self) -> Vec<T> {
        self.entries
            .iter()
            .filter(|e| e.spec.kind.is_trainable())
            .flat_map(|e| e.tensor.data().iter().copied())
            .collect()
    }

    pub fn set_trainable(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.trainable_len());
        let mut offset = 0;
        for e in self.entries.iter_mut().filter(|e| e.spec.kind.is_trainable()) {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Checks names and shapes against the layout the architecture expects.
    pub fn check_layout(&self, specs: &[ParamSpec], what: &str) -> Result<()> {
        if specs.len() != self.entries.len() {
            return Err(Error::Shape(format!(
                "{what}: expected {} tensors, found {}",
                specs.len(),
                self.entries.len()
            )));
        }
        for (spec, e) in specs.iter().zip(&self.entries) {
            if spec.name != e.spec.name || spec.shape != e.tensor.shape() {
                return Err(Error::Shape(format!(
                    "{what}: expected {} {:?}, found {} {:?}",
                    spec.name,
                    spec.shape,
                    e.spec.name,
                    e.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamSet`]; non-trainable slots stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn add(&mut self, other: &Grads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn flatten_trainable(&self, params: &ParamSet<T>) -> Vec<T> {
        params
            .entries()
            .iter()
            .zip(&self.tensors)
            .filter(|(e, _)| e.spec.kind.is_trainable())
            .flat_map(|(_, g)| g.data().iter().copied())
            .collect()
    }
}
