//! Network-assisted full-duplex cell-free massive MIMO: channel generation,
//! closed-form performance models, SCA-based joint mode/power/LSFD optimization,
//! baselines, verification oracles and an experiment harness.

pub mod mat;
pub mod netgen;
pub mod baselines;
pub mod harness;
pub mod oracle;
pub mod perfmodel;
pub mod scasolver;

pub use mat::Mat;
