//! Reverse-mode differentiation over small dense arrays.
//!
//! The op set is exactly what the training losses need: matrix products,
//! elementwise arithmetic, ReLU/sigmoid/exp/log, row-wise L2 normalization,
//! softmax and log-sum-exp, reductions, and a few reshaping ops.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{
    analytic_grads, eval_scalar, finite_diff_check, finite_diff_sweep, CheckOptions, GradCheck,
};
pub(crate) use gradcheck::{check_against, sweep_on};
pub use tape::{Fault, Gradients, Precision, Tape, Var, NAMED_OPS, NORM_EPS};

pub(crate) use tape::{row_norm, softmax_row};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
