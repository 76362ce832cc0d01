//! Parameter collections as seen by the optimizer, regularizer and
//! checkpoint writer.

use crate::tensor::{Real, Tensor};

/// Role of a parameter tensor. Decay and the L2 penalty apply to
/// `Weight` (decay) and `Weight`/`Bias` (penalty) only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }

    pub fn penalized(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Bias)
    }
}

/// A fixed, ordered set of parameter tensors.
///
/// `tensors` and `tensors_mut` must list the same tensors in the same order.
pub trait ParamSet<T: Real> {
    fn tensors(&self) -> Vec<(ParamKind, &Tensor<T>)>;
    fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    fn fill_zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Shapes in canonical order.
    fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|(_, t)| t.shape().to_vec()).collect()
    }
}

/// Plain list of tensors; handy for tests and small models.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorList<T: Real> {
    pub items: Vec<(ParamKind, Tensor<T>)>,
}

impl<T: Real> TensorList<T> {
    pub fn new(items: Vec<(ParamKind, Tensor<T>)>) -> Self {
        Self { items }
    }
}

impl<T: Real> ParamSet<T> for TensorList<T> {
    fn tensors(&self) -> Vec<(ParamKind, &Tensor<T>)> {
        self.items.iter().map(|(k, t)| (*k, t)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut Tensor<T>)> {
        self.items.iter_mut().map(|(k, t)| (*k, t)).collect()
    }
}
