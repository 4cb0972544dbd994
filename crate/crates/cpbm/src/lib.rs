//! Context-dependent examination-bias estimation for learning-to-rank.
//!
//! Click feedback in ranked search is confounded by position: users examine
//! the top of a ranking far more often than the tail. Under the Position-Based
//! Model (PBM) the click probability factors as
//!
//! ```text
//! Pr(C=1 | x, d, k) = Pr(E=1 | k, x) * rel(x, d)
//! ```
//!
//! where `k` is the displayed position and `rel` is binary relevance. The
//! contextual variant (CPBM) lets the examination probability depend on a
//! query/user context vector `x` in addition to the position, which matters
//! because different kinds of queries have different propensity curves.
//!
//! This crate provides the full experimental loop around estimating
//! `Pr(E=1 | k, x)` (up to a per-context scale) from logged clicks of
//! multiple historic rankers, without explicit result randomization:
//!
//! - [`corpus`]: synthetic ranking corpora with controllable context-relevance
//!   coupling, svmlight ingestion, and deterministic linear rankers.
//! - [`clicksim`]: click simulation under a parametric contextual examination
//!   model, A/B serving across rankers, and explicit swap interventions.
//! - [`harvest`]: interventional sets, assignment weights, and IPS-corrected
//!   labels extracted from a multi-ranker click log.
//! - [`estimator`]: the AllPairs objective, its grouped cross-entropy form,
//!   PBM/CPBM models with analytic gradients, and a deterministic trainer.
//! - [`eval`]: relative-error metrics against known ground truth, held-out
//!   objectives, swap-intervention gold standards, bootstrap intervals.
//! - [`ltr`]: IPS-weighted pairwise ranker training and AvgRank evaluation.
//!
//! Everything is deterministic given the seeds carried in the various config
//! structs; repeated runs produce bit-identical artifacts.

pub mod clicksim;
pub mod corpus;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod harvest;
pub mod ltr;
pub mod rng;
pub mod stats;
#[doc(hidden)]
pub mod testutil;

pub use error::{Error, Result};
