pub mod ablation;
pub mod archive;
pub mod continuity;
pub mod error;
mod par;
pub mod plot;
pub mod probe;
pub mod seed;
pub mod stats;
pub mod stimulus;
pub mod tensor;
pub mod toy;
pub mod vit;

pub use error::{Error, ErrorClass, Result};
