//! Quickest detection of a change in the law of a Lévy process.
//!
//! The crate covers the whole pipeline: pre/post-change specifications and
//! their admissibility ([`model`]), path simulation with an exact jump
//! ledger ([`paths`]), the log-likelihood-ratio process ([`likelihood`]),
//! CUSUM and competitor stopping rules ([`detector`]) and a Monte Carlo
//! evaluation harness ([`eval`]).

pub mod detector;
pub mod error;
pub mod eval;
pub mod likelihood;
pub mod model;
pub mod numeric;
pub mod parallel;
pub mod paths;
pub mod rng;
pub mod stats;

pub use detector::{DetectorConfig, Rule, StopResult};
pub use error::{Error, Result};
pub use eval::{EvalReport, SimSettings};
pub use likelihood::{llr_path, LLRPath};
pub use model::{build_change_model, ChangeModel, LevySpec};
pub use parallel::Execution;
pub use paths::{sample_changed_path, SamplePath};
pub use rng::RngStream;
