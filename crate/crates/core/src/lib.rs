//! Compressed video enhancement with a multi-branch residual generator,
//! a hypersphere adversarial objective and a perceptually calibrated loss.

pub mod block;
pub mod error;
pub mod evalcli;
pub mod losscal;
pub mod metrics;
pub mod nnarch;
pub mod spheregan;
pub mod tensor;
pub mod trainer;
pub mod videopipe;

pub use block::BlockTensor;
pub use error::{Error, Result};
