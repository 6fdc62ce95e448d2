//! Sequential per-region Bayesian optimization with one shared model.
//!
//! Regions are visited once, in configuration order. Within a region each
//! iteration picks the acquisition maximizer among unobserved candidates,
//! checks the termination rule, and only then observes and updates the model.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::{argmax_acquisition, AcquisitionSpec};
use crate::error::{Error, Result};
use crate::field::{Point2, QualityField, Region};
use crate::oracle::QualityOracle;
use crate::spar::{LatentParams, ModelConfig, PriorMode, SparModel};

/// Which observations define the incumbent used by EI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BestScope {
    /// Everything observed so far in the session.
    #[default]
    Global,
    /// Only the current region.
    Region,
}

impl std::str::FromStr for BestScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "global" => Ok(BestScope::Global),
            "region" => Ok(BestScope::Region),
            other => Err(Error::Config(format!("unknown best scope '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub structure: String,
    /// Reference map the prior mean is built from.
    pub reference: QualityField,
    pub regions: Vec<Region>,
    pub n_max: usize,
    pub early_term_threshold: Option<f64>,
    pub acquisition: AcquisitionSpec,
    pub prior_mode: PriorMode,
    pub model: ModelConfig,
    pub ei_best_scope: BestScope,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(Error::InvalidParameter("n_max must be >= 1".into()));
        }
        if let Some(t) = self.early_term_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "termination threshold {t} outside (0, 1]"
                )));
            }
        }
        if let Some(r) = self.regions.iter().find(|r| r.candidates.is_empty()) {
            return Err(Error::InvalidParameter(format!(
                "region '{}' has no candidates",
                r.id
            )));
        }
        self.acquisition.validate()?;
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub region_id: String,
    /// 1-based iteration within the region.
    pub iteration: usize,
    pub location: Point2,
    pub quality: f64,
    pub theta_after: LatentParams,
    pub acquisition_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBest {
    pub location: Point2,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionResult {
    pub per_region_best: BTreeMap<String, RegionBest>,
    pub trace: Vec<ObservationRecord>,
    pub total_observations: usize,
}

impl SessionResult {
    fn push(&mut self, record: ObservationRecord) {
        let entry = self
            .per_region_best
            .entry(record.region_id.clone())
            .or_insert(RegionBest {
                location: record.location,
                quality: record.quality,
            });
        if record.quality > entry.quality {
            *entry = RegionBest {
                location: record.location,
                quality: record.quality,
            };
        }
        self.trace.push(record);
        self.total_observations += 1;
    }

    /// Mean over regions of the best observed quality.
    pub fn mean_region_best(&self) -> f64 {
        if self.per_region_best.is_empty() {
            return 0.0;
        }
        self.per_region_best.values().map(|b| b.quality).sum::<f64>()
            / self.per_region_best.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Done,
}

/// Done once the region's best quality reaches `threshold` (if any) or the
/// region has used its budget.
pub fn check_termination(region_qualities: &[f64], threshold: Option<f64>, n_max: usize) -> Termination {
    let met = threshold.is_some_and(|t| region_qualities.iter().any(|&q| q >= t));
    if met || region_qualities.len() >= n_max {
        Termination::Done
    } else {
        Termination::Continue
    }
}

pub fn run_session(config: &SessionConfig, oracle: &mut dyn QualityOracle) -> Result<SessionResult> {
    run_session_with_model(config, oracle).map(|(r, _)| r)
}

/// Run a session and also return the final model, e.g. for posterior maps.
pub fn run_session_with_model(
    config: &SessionConfig,
    oracle: &mut dyn QualityOracle,
) -> Result<(SessionResult, SparModel)> {
    config.validate()?;
    let mut model = SparModel::new(config.reference.clone(), &config.model, config.prior_mode)?;
    let mut result = SessionResult::default();
    let mut observed: HashSet<(u64, u64)> = HashSet::new();
    let mut global_best: Option<f64> = None;

    let abort = |result: SessionResult, e: Error| Error::SessionAborted {
        partial: Box::new(result),
        source: Box::new(e),
    };

    for region in &config.regions {
        let mut region_qualities: Vec<f64> = Vec::new();
        for k in 1..=config.n_max {
            let incumbent = match config.ei_best_scope {
                BestScope::Global => global_best,
                BestScope::Region => region_qualities.iter().copied().reduce(f64::max),
            }
            // Qualities are non-negative, so 0 is the floor before any observation.
            .unwrap_or(0.0);
            let (x, acq) = match argmax_acquisition(
                &model,
                &region.candidates,
                &observed,
                &config.acquisition,
                incumbent,
            ) {
                Ok(pick) => pick,
                Err(Error::RegionExhausted) => break,
                Err(e) => return Err(abort(result, e)),
            };
            if check_termination(&region_qualities, config.early_term_threshold, config.n_max)
                == Termination::Done
            {
                break;
            }
            let e = match oracle.observe(x) {
                Ok(e) => e,
                Err(e) => return Err(abort(result, e)),
            };
            if let Err(err) = model.update(x, e) {
                return Err(abort(result, err));
            }
            observed.insert(x.key());
            region_qualities.push(e);
            global_best = Some(global_best.map_or(e, |b| b.max(e)));
            result.push(ObservationRecord {
                region_id: region.id.clone(),
                iteration: k,
                location: x,
                quality: e,
                theta_after: model.theta(),
                acquisition_value: acq,
            });
        }
    }
    Ok((result, model))
}

pub const TRACE_HEADER: [&str; 9] = [
    "region_id", "iter", "x", "y", "quality", "acq_value", "t_x", "t_y", "c",
];

/// Write a trace as CSV. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_trace<W: Write>(trace: &[ObservationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record([
            r.region_id.clone(),
            r.iteration.to_string(),
            r.location.x.to_string(),
            r.location.y.to_string(),
            r.quality.to_string(),
            r.acquisition_value.to_string(),
            r.theta_after.t_x.to_string(),
            r.theta_after.t_y.to_string(),
            r.theta_after.c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(trace: &[ObservationRecord], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trace(trace, std::io::BufWriter::new(file))
}

pub fn parse_trace<R: Read>(reader: R) -> Result<Vec<ObservationRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(Error::Config(format!(
            "unexpected trace header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let num = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Config(format!("bad {what} value '{s}' in trace")))
    };
    rdr.records()
        .map(|row| {
            let row = row?;
            Ok(ObservationRecord {
                region_id: row[0].to_string(),
                iteration: row[1]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad iter value '{}'", &row[1])))?,
                location: Point2::new(num(&row[2], "x")?, num(&row[3], "y")?),
                quality: num(&row[4], "quality")?,
                acquisition_value: num(&row[5], "acq_value")?,
                theta_after: LatentParams::new(
                    num(&row[6], "t_x")?,
                    num(&row[7], "t_y")?,
                    num(&row[8], "c")?,
                ),
            })
        })
        .collect()
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<ObservationRecord>> {
    let file = std::fs::File::open(path)?;
    parse_trace(file)
}
