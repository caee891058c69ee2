//! Sharpness measures over loss Hessians: spectral oracles, Monte-Carlo
//! estimators, constructive reconstructions and sharpness-aware optimizers.

pub mod error;
pub mod linalg;
pub mod losses;
pub mod measures;
pub mod optim;
pub mod sharpness;
pub mod universality;

pub use error::{Error, Result};
