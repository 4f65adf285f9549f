// SPDX-License-Identifier: MIT OR Apache-2.0

//! Offline change point detection.
//!
//! Two families of detectors live here:
//!
//! - the optimisation approach: a penalised sum of segment costs minimised
//!   exactly with [`search::pelt`] or approximately with the sliding-window
//!   discrepancy search [`search::win`], over seven segment costs
//!   ([`costs::CostKind`]) including ridge and lasso regularised regression;
//! - the exact Bayesian approach: segment marginal likelihoods under a
//!   conjugate Normal-Inverse-Gamma prior, the backward `Q` recursion and a
//!   per-position change point probability curve ([`bayes`]).
//!
//! Around them sit a seeded dataset simulator ([`simulate`]), the evaluation
//! metrics ([`metrics`]) and the sweep/experiment harness ([`harness`]).

#![forbid(unsafe_code)]

pub mod bayes;
pub mod costs;
mod error;
pub mod harness;
mod linalg;
pub mod metrics;
pub mod search;
pub mod series;
pub mod simulate;

pub use bayes::{
    bayes_detect, cp_posterior, detect_peaks, fuse_user_belief, seg_marginal, BayesConfig,
    BayesError, DistancePrior, FusedBelief, NigPrior, PosteriorResult,
};
pub use costs::{segment_cost, sum_of_costs, CostError, CostKind, CostModel, SegmentCost};
pub use error::Error;
pub use harness::{
    aggregate_union, gamma_sweep, penalty_sweep, run_experiment, standard_penalty_grid,
    ExperimentConfig, SweepOptions, SweepResult, SweepRow,
};
pub use metrics::{evaluate, MarginRule, MetricsError, MetricsReport};
pub use search::{
    dp_oracle, pelt, win, ChangePointSet, SearchConfig, SearchError, SearchMethod, Segmentation,
};
pub use series::{SeriesError, SignalBundle, TimeSeries};
pub use simulate::{simulate, Family, SimError, SimSpec};
