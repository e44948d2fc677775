pub mod ablate;
pub mod activations;
pub mod continuity;
pub mod generate;
pub mod probe;
pub mod report;
