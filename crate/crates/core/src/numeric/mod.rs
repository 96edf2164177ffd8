//! Dense linear algebra for the training and analysis code.

mod eigen;
mod gradcheck;
mod matrix;
mod ops;
mod params;

pub use eigen::{sym_eigenvalues, EigenSpectrum};
pub use gradcheck::grad_check;
pub use matrix::{dot, norm, Matrix};
pub use ops::{l2_normalize_rows, normalize_in_place, similarity_matrix, softmax_rows, Normalized};
pub(crate) use ops::softmax_in_place;
pub use params::{Gradients, Params};
