//! Differentiable primitive layers with hand-derived backward passes,
//! a small dense-tensor toolkit, and a finite-difference gradient checker.

pub mod eig;
pub mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod scalar;
pub mod tensor;

pub use eig::sym_eig;
pub use gemm::gemm;
pub use gradcheck::{check_gradients, CheckConfig, CheckReport, TensorReport};
pub use scalar::{canonical_sum, Scalar};
pub use tensor::{Mat, Tensor4};
