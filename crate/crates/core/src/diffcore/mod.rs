//! Dense numeric kernels: arrays, activations with analytic gradients,
//! losses, masked softmax, optimizers, a finite-difference gradient checker
//! and a conjugate-gradient solver.

pub mod array;
pub mod cg;
pub mod gradcheck;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod softmax;

pub use array::{axpy, dot, norm, DenseArray};
pub use cg::{cg_solve, CgOutcome};
pub use gradcheck::finite_diff_check;
pub use loss::{bce_loss, bce_with_logit, clamp_prob, label};
pub use ops::{
    dropout_apply, dropout_mask, relu, relu_backward, relu_forward, sigmoid, sigmoid_vec,
    tanh_backward, tanh_forward, Affine, AffineGrad,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use softmax::{log_prob_grad, masked_softmax, softmax_backward};
