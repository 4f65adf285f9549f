// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

use crate::bayes::BayesError;
use crate::costs::CostError;
use crate::metrics::MetricsError;
use crate::search::SearchError;
use crate::series::SeriesError;
use crate::simulate::SimError;

/// Any error raised by the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
