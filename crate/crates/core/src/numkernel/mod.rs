//! Dense matrix primitives with analytic gradients.

mod fd;
pub mod kernels;
mod matrix;
pub mod tape;

pub use fd::finite_difference_gradient;
pub use kernels::{
    add_bias, concat_cols, cosine_similarity_matrix, kl_rows, l2_normalize_rows, leaky_relu,
    leaky_sigmoid, matmul, matmul_nt, relu, row_softmax, sigmoid,
};
pub use matrix::Matrix;
pub use tape::{Grads, Tape, Var};
