//! Dense tensors, reverse-mode differentiation, optimizers and gradient checking.

mod fit;
mod gradcheck;
mod graph;
pub mod ops;
mod optim;
mod params;
pub mod rng;
mod tensor;

pub use fit::{fit, mean_loss, FitOptions, FitReport};
pub use gradcheck::{grad_check, grad_check_coords, DEFAULT_COORDS};
pub use graph::{Grads, Graph, Var};
pub(crate) use graph::crf_forward_backward;
pub use ops::{argmax, cosine, forward_op, softmax, OpKind};
pub use optim::Adam;
pub use params::{accumulate, init_normal, ParamSet};
pub use tensor::{log_sum_exp, Tensor};
pub(crate) use tensor::dot;
