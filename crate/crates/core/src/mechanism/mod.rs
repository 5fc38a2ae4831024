//! Learned auction: an allocation network with a softmax head and a payment
//! network with a sigmoid head, both reading the normalised bid matrix.
//!
//! Allocations are scaled to `min(m, total requirement)` and projected onto
//! the per-consumer requirement boxes. A consumer pays the reserve on every
//! unit it receives plus a learned share of its bid surplus over the reserve.

mod adam;
mod mlp;
mod network;
mod persist;
mod rounding;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Mlp, MlpTape};
pub use network::{
    Architecture, ForwardTape, MechanismGrads, MechanismOutput, MechanismParams, ProfileBatch, RoundedOutcome,
    ScenarioFingerprint,
};
pub use persist::{load_weights, save_weights, weights_from_json, weights_to_json, WEIGHTS_FORMAT, WEIGHTS_VERSION};
pub use rounding::round_allocation;

use crate::auction::AuctionError;

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error(transparent)]
    Auction(#[from] AuctionError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unsupported weights file version {0}")]
    UnsupportedVersion(u32),
    #[error("weights were trained for {found:?}, expected {expected:?}")]
    FingerprintMismatch {
        expected: Box<ScenarioFingerprint>,
        found: Box<ScenarioFingerprint>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed weights file: {0}")]
    Json(#[from] serde_json::Error),
}
