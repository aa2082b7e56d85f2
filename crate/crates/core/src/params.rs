use crate::tensor::Tensor;

/// A fixed, ordered collection of named weight tensors.
///
/// The order returned by [`Parameters::named_tensors`] and
/// [`Parameters::tensors_mut`] must agree; the optimizer, gradient checker
/// and checkpoint container all rely on it.
pub trait Parameters {
    fn named_tensors(&self) -> Vec<(&'static str, &Tensor)>;

    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.squared_norm()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Zero tensors of the same shapes, for gradient accumulation.
    fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect()
    }
}
