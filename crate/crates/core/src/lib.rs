//! Finite-code-length key size analysis for decoy-state BB84.

pub mod channel;
pub mod decomposition;
pub mod error;
pub mod estimation;
pub mod fluctuation;
pub mod keysize;
pub mod linalg;
pub mod params;
pub mod runner;

pub use error::{AbortReason, Error, Result};
pub use params::{Basis, DeltaRule, ProtocolParams, Variant};
