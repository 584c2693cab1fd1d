//! Numerical laboratory for deep convolutional networks: dense tensors with
//! reverse-mode gradients, CNN/LCN/FCN models, exact weight constructions,
//! optimizer equivariance checks and minimax bound calculators.

pub mod bounds;
pub mod constructor;
pub mod error;
pub mod experiments;
pub mod nets;
pub mod rng;
pub mod symmetry;
pub mod tasks;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
