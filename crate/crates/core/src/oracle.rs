//! Sources of quality observations.
//!
//! The planner only needs something that maps a location to a quality in
//! `[0, 1]`. Simulation uses a ground-truth field; recorded sessions can be
//! replayed from their exported trace. Any external estimator (for instance a
//! process scoring real recordings) plugs in by implementing [`QualityOracle`].

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{Point2, QualityField};
use crate::planner::read_trace;

pub trait QualityOracle {
    fn observe(&mut self, p: Point2) -> Result<f64>;
}

impl<F> QualityOracle for F
where
    F: FnMut(Point2) -> Result<f64>,
{
    fn observe(&mut self, p: Point2) -> Result<f64> {
        self(p)
    }
}

/// Ground-truth field plus optional Gaussian observation noise, clamped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    truth: QualityField,
    noise_std: f64,
    rng: ChaCha8Rng,
}

impl SimulatedOracle {
    pub fn new(truth: QualityField, noise_std: f64, seed: u64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise_std {noise_std} must be >= 0"
            )));
        }
        Ok(Self {
            truth,
            noise_std,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn noiseless(truth: QualityField) -> Self {
        Self {
            truth,
            noise_std: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn truth(&self) -> &QualityField {
        &self.truth
    }
}

impl QualityOracle for SimulatedOracle {
    fn observe(&mut self, p: Point2) -> Result<f64> {
        let clean = self.truth.eval(p);
        if self.noise_std == 0.0 {
            return Ok(clean);
        }
        let noise = self.noise_std * self.rng.sample::<f64, _>(StandardNormal);
        Ok((clean + noise).clamp(0.0, 1.0))
    }
}

/// Answers only at locations recorded in a previous session.
#[derive(Debug, Clone, Default)]
pub struct ReplayOracle {
    recorded: HashMap<(u64, u64), f64>,
}

impl ReplayOracle {
    pub fn new(observations: impl IntoIterator<Item = (Point2, f64)>) -> Self {
        Self {
            recorded: observations
                .into_iter()
                .map(|(p, q)| (p.key(), q))
                .collect(),
        }
    }

    /// Load from an exported session trace CSV.
    pub fn from_trace_file(path: impl AsRef<Path>) -> Result<Self> {
        let records = read_trace(path)?;
        Ok(Self::new(records.iter().map(|r| (r.location, r.quality))))
    }

    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }
}

impl QualityOracle for ReplayOracle {
    fn observe(&mut self, p: Point2) -> Result<f64> {
        self.recorded
            .get(&p.key())
            .copied()
            .ok_or(Error::NoRecordedObservation(p))
    }
}
