//! Federated smoothing proximal gradient (FSPG) for sparse penalized quantile
//! regression.
//!
//! Clients hold their rows and answer gradient / Gram-product requests; the
//! coordinator smooths the check loss with a shrinking Huber width, grows its
//! proximal weight, and applies the MCP/SCAD/L1 proximal map coordinate-wise.

pub mod client;
pub mod coordinator;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod model;
pub mod normal;
pub mod penalty;
pub mod smoothloss;
pub mod transport;

pub use client::{ClientDataset, ClientNode};
pub use error::{Error, Result};
pub use model::ModelVector;
pub use penalty::{PenaltyConfig, PenaltyKind, WeakConvexityRho};
pub use smoothloss::SmoothingParam;
