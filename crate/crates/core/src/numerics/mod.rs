//! Dense linear algebra, seeded random numbers and reverse-mode gradients.

mod gaussian;
mod matrix;
mod params;
mod rng;
mod tape;

pub use gaussian::{standard_normal_entropy, standard_normal_logpdf, HALF_LN_2PI};
pub use matrix::DenseMatrix;
pub use params::{ParamId, ParamSet};
pub use rng::{standard_normal_sample, Rng};
pub use tape::{Gradients, Tape, Var};

