//! Double-spend probabilities for proof-of-work longest-chain consensus under
//! the k-deep confirmation rule, when the honest hashrate ramps up after every
//! block as it propagates through the network.
//!
//! The pipeline:
//!
//! 1. [`delaymodel`] turns a piecewise-constant hashrate profile into a
//!    matrix-exponential law for the honest inter-mining time Θ, calibrated so
//!    that E\[Θ\] matches the target block interval.
//! 2. [`phi`] derives the matrix-geometric pmf of Φ, the number of adversary
//!    blocks mined during one honest interval.
//! 3. [`ruin`] gives the stationary pre-mining lead (Lindley recursion) and the
//!    ultimate ruin probabilities of the post-confirmation race.
//! 4. [`doublespend`] combines them through truncated pgf algebra into the
//!    violation probability q.
//!
//! [`simulate`] is an independent Monte Carlo model of the same attack and
//! [`ingest`] builds hashrate profiles from block propagation measurements.

pub mod delaymodel;
pub mod doublespend;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod medist;
pub mod phi;
pub mod ruin;
pub mod simulate;

pub use delaymodel::{CalibrationResult, DelayModel, HashrateProfile};
pub use doublespend::{AnalysisConfig, DoubleSpendResult, PartialPgf, Regime};
pub use error::{Error, Result};
pub use medist::MeDistribution;
pub use phi::PhiDistribution;
pub use ruin::{LeadDistribution, RuinTable};

/// Target mean block interval of Bitcoin, in seconds.
pub const BITCOIN_BLOCK_INTERVAL: f64 = 600.0;

/// Order used for every concentrated-ME delay segment unless overridden.
pub const DEFAULT_CME_ORDER: usize = 27;
