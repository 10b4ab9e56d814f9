use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Index of a tensor inside a [`ParamSet`].
pub type ParamId = usize;

/// How a freshly registered parameter is initialised.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

/// Ordered, named collection of parameter tensors. Gradients and optimizer
/// moments use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn add<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        let mut t = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Ones => t.data.iter_mut().for_each(|v| *v = S::ONE),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                t.data.iter_mut().for_each(|v| *v = S::from_f64(dist.sample(rng)));
            }
        }
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        Self { names: self.names.clone(), tensors: self.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = S::ZERO);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: S) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    /// Appends tensors in the given order.
    pub fn extend_named(&mut self, named: Vec<(String, Tensor<S>)>) {
        for (name, t) in named {
            self.names.push(name);
            self.tensors.push(t);
        }
    }

    /// Rebuilds a set from named tensors, checking it matches `self`'s layout.
    pub fn load_named(&mut self, named: Vec<(String, Tensor<S>)>) -> crate::Result<()> {
        if named.len() != self.tensors.len() {
            return Err(crate::Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, model expects {}",
                named.len(),
                self.tensors.len()
            )));
        }
        for (name, t) in named {
            let id =
                self.find(&name).ok_or_else(|| crate::Error::ShapeMismatch(format!("unexpected tensor {name}")))?;
            if self.tensors[id].shape != t.shape {
                return Err(crate::Error::ShapeMismatch(format!(
                    "tensor {name}: expected {:?}, got {:?}",
                    self.tensors[id].shape, t.shape
                )));
            }
            self.tensors[id] = t;
        }
        Ok(())
    }
}
