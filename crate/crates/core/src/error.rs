use thiserror::Error;

use crate::field::Point2;
use crate::planner::SessionResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate candidate set: {0}")]
    DegenerateCandidates(String),

    #[error("kernel matrix not PD; increase noise_variance")]
    NotPositiveDefinite,

    #[error("refit required")]
    RefitRequired,

    #[error("length mismatch: {xs} locations vs {ys} values")]
    LengthMismatch { xs: usize, ys: usize },

    #[error("region exhausted")]
    RegionExhausted,

    #[error("no recorded observation at point ({}, {})", .0.x, .0.y)]
    NoRecordedObservation(Point2),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("session aborted after {} observations: {source}", .partial.total_observations)]
    SessionAborted {
        partial: Box<SessionResult>,
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
