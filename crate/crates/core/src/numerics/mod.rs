//! Dense f64 tensors, affine layers with hand-written backpropagation,
//! momentum SGD and a central-difference gradient checker.

mod gradcheck;
mod layer;
mod matrix;
mod sgd;

pub use gradcheck::{finite_diff_check, GradCheckConfig, GradCheckReport, Probe};
pub use layer::{
    elementwise_product_backward, Activation, AffineLayer, LayerCache, Mlp, MlpCache,
};
pub use matrix::Matrix;
pub use sgd::SgdState;

pub(crate) use matrix::{axpy, dot, norm as matrix_norm};

/// Anything that owns a fixed, ordered list of parameter tensors.
///
/// The order returned by `tensors` and `tensors_mut` must agree, and a
/// gradient container of the same type must use the same layout.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
