//! Monte-Carlo experiment runner.
//!
//! Each trial draws one random shift/scale, builds the ground truth and the
//! prior map from it, and runs every condition (acquisition x prior mode x
//! budget) against that same truth. Per-trial seeds are derived from the
//! master seed, so results do not depend on scheduling.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionSpec;
use crate::error::{Error, Result};
use crate::field::{FieldFile, PerturbationSpec, QualityField, Region};
use crate::oracle::SimulatedOracle;
use crate::planner::{run_session, BestScope, SessionConfig};
use crate::spar::{LatentParams, ModelConfig, PriorMode};

/// Which map the random perturbation is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbDirection {
    /// The truth is fixed and the prior is a shifted, scaled copy of it.
    #[default]
    Paper,
    /// The prior is the reference and the truth is a shifted, scaled copy.
    Inverse,
}

impl std::str::FromStr for PerturbDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(PerturbDirection::Paper),
            "inverse" => Ok(PerturbDirection::Inverse),
            other => Err(Error::Config(format!("unknown perturb direction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSource {
    Path(PathBuf),
    Inline(FieldFile),
}

fn default_structure() -> String {
    "heart".into()
}
fn default_grid_step() -> f64 {
    0.005
}
fn default_trials() -> usize {
    500
}
fn default_acquisitions() -> Vec<AcquisitionSpec> {
    vec![
        AcquisitionSpec::Ei,
        AcquisitionSpec::Ucb { beta: 0.5 },
        AcquisitionSpec::Ucb { beta: 1.0 },
        AcquisitionSpec::Ucb { beta: 1.5 },
    ]
}
fn default_modes() -> Vec<PriorMode> {
    PriorMode::ALL.to_vec()
}
fn default_budgets() -> Vec<usize> {
    vec![3, 10]
}
fn default_perturbation() -> PerturbationSpec {
    PerturbationSpec {
        shift_range: 0.02,
        scale_range: (0.7, 1.3),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_structure")]
    pub structure: String,
    /// Field definition file (relative to the config file) or inline definition.
    pub field: FieldSource,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    /// Overrides the radius of every region when present.
    #[serde(default)]
    pub region_radius: Option<f64>,
    #[serde(default = "default_perturbation")]
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub perturb_direction: PerturbDirection,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_acquisitions")]
    pub acquisitions: Vec<AcquisitionSpec>,
    #[serde(default = "default_modes")]
    pub prior_modes: Vec<PriorMode>,
    #[serde(default = "default_budgets")]
    pub n_max: Vec<usize>,
    #[serde(default)]
    pub early_term_threshold: Option<f64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub ei_best_scope: BestScope,
    #[serde(default)]
    pub observation_noise_std: f64,
}

impl ExperimentConfig {
    /// Load a JSON config, resolving a field path relative to the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("malformed config {}: {e}", path.display())))?;
        if let FieldSource::Path(p) = &cfg.field {
            let resolved = if p.is_relative() {
                path.parent().unwrap_or(Path::new(".")).join(p)
            } else {
                p.clone()
            };
            cfg.field = FieldSource::Inline(FieldFile::load(resolved)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn field_file(&self) -> Result<FieldFile> {
        match &self.field {
            FieldSource::Inline(f) => Ok(f.clone()),
            FieldSource::Path(p) => FieldFile::load(p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.acquisitions.is_empty() || self.prior_modes.is_empty() || self.n_max.is_empty() {
            return Err(Error::Config("condition lists must be nonempty".into()));
        }
        if self.n_max.contains(&0) {
            return Err(Error::Config("every n_max must be >= 1".into()));
        }
        if self.observation_noise_std.is_nan() || self.observation_noise_std < 0.0 {
            return Err(Error::Config("observation_noise_std must be >= 0".into()));
        }
        for a in &self.acquisitions {
            a.validate()?;
        }
        self.perturbation.validate()?;
        self.model.validate()
    }

    /// Conditions in output order: acquisition, then prior mode, then budget.
    pub fn conditions(&self) -> Vec<Condition> {
        let mut out = Vec::new();
        for (ai, &acquisition) in self.acquisitions.iter().enumerate() {
            for (mi, &prior_mode) in self.prior_modes.iter().enumerate() {
                for &n_max in &self.n_max {
                    out.push(Condition {
                        acquisition,
                        acquisition_index: ai,
                        prior_mode,
                        mode_index: mi,
                        n_max,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub acquisition: AcquisitionSpec,
    pub acquisition_index: usize,
    pub prior_mode: PriorMode,
    pub mode_index: usize,
    pub n_max: usize,
}

/// Truth and prior maps for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub truth: QualityField,
    pub prior: QualityField,
    /// Parameters that map the prior onto the truth.
    pub true_theta: LatentParams,
}

/// SplitMix64 finalizer over a sequence of words.
pub fn derive_seed(words: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &w in words {
        h ^= w;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

pub fn trial_setup(
    reference: &QualityField,
    spec: &PerturbationSpec,
    direction: PerturbDirection,
    master_seed: u64,
    trial: usize,
) -> TrialSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[master_seed, trial as u64]));
    let draw = spec.sample(&mut rng);
    match direction {
        PerturbDirection::Inverse => TrialSetup {
            truth: reference.transformed(&draw),
            prior: reference.clone(),
            true_theta: draw,
        },
        PerturbDirection::Paper => {
            // Truth fixed up to a global translation; prior = truth shifted by
            // the draw and scaled by it. Shift the truth instead so the prior
            // (and the regions built on it) stay anchored at the reference.
            let truth = reference.transformed(&LatentParams::new(-draw.t_x, -draw.t_y, 1.0));
            let prior = reference.transformed(&LatentParams::new(0.0, 0.0, draw.c));
            TrialSetup {
                truth,
                prior,
                true_theta: LatentParams::new(-draw.t_x, -draw.t_y, 1.0 / draw.c),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial: usize,
    pub truth_hash: u64,
    pub true_theta: LatentParams,
    /// Per condition; `None` if that session failed.
    pub scores: Vec<Option<TrialScore>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    /// Mean over regions of the best observed quality.
    pub mean: f64,
    /// Best observed quality per region, in region order.
    pub region_best: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub acquisition: String,
    pub beta: Option<f64>,
    pub prior_mode: PriorMode,
    pub n_max: usize,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub rows: Vec<ConditionSummary>,
}

impl AggregateResult {
    pub const HEADER: [&'static str; 8] = [
        "acquisition",
        "beta",
        "prior_mode",
        "n_max",
        "mean",
        "stderr",
        "trials",
        "failures",
    ];

    pub fn find(&self, acquisition: &AcquisitionSpec, mode: PriorMode, n_max: usize) -> Option<&ConditionSummary> {
        let (name, beta) = acquisition_columns(acquisition);
        self.rows
            .iter()
            .find(|r| r.acquisition == name && r.beta == beta && r.prior_mode == mode && r.n_max == n_max)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.acquisition.clone(),
                r.beta.map(|b| b.to_string()).unwrap_or_default(),
                r.prior_mode.label().to_string(),
                r.n_max.to_string(),
                format!("{:.6}", r.mean),
                format!("{:.6}", r.stderr),
                r.trials.to_string(),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Config(e.to_string()))
    }
}

fn acquisition_columns(a: &AcquisitionSpec) -> (String, Option<f64>) {
    match *a {
        AcquisitionSpec::Ei => ("ei".into(), None),
        AcquisitionSpec::Ucb { beta } => ("ucb".into(), Some(beta)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub conditions: Vec<Condition>,
    pub trials: Vec<TrialOutcome>,
    pub aggregate: AggregateResult,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let field_file = config.field_file()?;
    let reference = field_file.field()?;
    let regions = field_file.regions(config.grid_step, config.region_radius)?;
    if regions.is_empty() {
        return Err(Error::Config("field definition has no regions".into()));
    }
    let conditions = config.conditions();

    let trials: Vec<TrialOutcome> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, &reference, &regions, &conditions, t))
        .collect();

    let rows = conditions
        .iter()
        .enumerate()
        .map(|(ci, c)| summarize(c, trials.iter().map(|t| t.scores[ci].as_ref().map(|s| s.mean))))
        .collect();
    Ok(ExperimentOutcome {
        conditions,
        trials,
        aggregate: AggregateResult { rows },
    })
}

fn run_trial(
    config: &ExperimentConfig,
    reference: &QualityField,
    regions: &[Region],
    conditions: &[Condition],
    trial: usize,
) -> TrialOutcome {
    let setup = trial_setup(
        reference,
        &config.perturbation,
        config.perturb_direction,
        config.seed,
        trial,
    );
    let scores = conditions
        .iter()
        .map(|c| {
            let session = SessionConfig {
                structure: config.structure.clone(),
                reference: setup.prior.clone(),
                regions: regions.to_vec(),
                n_max: c.n_max,
                early_term_threshold: config.early_term_threshold,
                acquisition: c.acquisition,
                prior_mode: c.prior_mode,
                model: config.model,
                ei_best_scope: config.ei_best_scope,
            };
            // Budget is left out of the stream so larger budgets extend smaller ones.
            let seed = derive_seed(&[
                config.seed,
                trial as u64,
                c.acquisition_index as u64,
                c.mode_index as u64,
            ]);
            let mut oracle =
                SimulatedOracle::new(setup.truth.clone(), config.observation_noise_std, seed).ok()?;
            match run_session(&session, &mut oracle) {
                Ok(r) => Some(TrialScore {
                    mean: r.mean_region_best(),
                    region_best: regions
                        .iter()
                        .map(|reg| r.per_region_best.get(&reg.id).map_or(0.0, |b| b.quality))
                        .collect(),
                }),
                Err(e) => {
                    log::warn!("trial {trial} condition {c:?} failed: {e}");
                    None
                }
            }
        })
        .collect();
    TrialOutcome {
        trial,
        truth_hash: setup.truth.content_hash(),
        true_theta: setup.true_theta,
        scores,
    }
}

fn summarize(condition: &Condition, scores: impl Iterator<Item = Option<f64>>) -> ConditionSummary {
    let mut ok = Vec::new();
    let mut failures = 0;
    for s in scores {
        match s {
            Some(v) => ok.push(v),
            None => failures += 1,
        }
    }
    let n = ok.len();
    let mean = if n > 0 { ok.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let stderr = if n > 1 {
        let var = ok.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    let (acquisition, beta) = acquisition_columns(&condition.acquisition);
    ConditionSummary {
        acquisition,
        beta,
        prior_mode: condition.prior_mode,
        n_max: condition.n_max,
        mean,
        stderr,
        trials: n,
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{CombineRule, PeakDef, RegionDef};

    fn small_field() -> FieldFile {
        FieldFile {
            combine_rule: CombineRule::PointwiseMax,
            peaks: vec![
                PeakDef { cx: 0.0, cy: 0.0, amplitude: 0.7, decay_length: 0.02 },
                PeakDef { cx: 0.07, cy: 0.0, amplitude: 0.7, decay_length: 0.02 },
            ],
            regions: vec![
                RegionDef { id: "a".into(), cx: 0.0, cy: 0.0, radius: 0.03 },
                RegionDef { id: "b".into(), cx: 0.07, cy: 0.0, radius: 0.03 },
            ],
        }
    }

    fn config(trials: usize) -> ExperimentConfig {
        serde_json::from_value(serde_json::json!({
            "field": small_field(),
            "trials": trials,
            "seed": 5,
            "acquisitions": [{"kind": "ei"}, {"kind": "ucb", "beta": 1.0}],
            "n_max": [2, 4],
        }))
        .unwrap()
    }

    #[test]
    fn defaults_and_condition_order() {
        let c = config(1);
        assert_eq!(c.perturb_direction, PerturbDirection::Paper);
        assert_eq!(c.grid_step, 0.005);
        let conds = c.conditions();
        assert_eq!(conds.len(), 2 * 3 * 2);
        assert_eq!(conds[0].prior_mode, PriorMode::Zero);
        assert_eq!(conds[1].n_max, 4);
        assert_eq!(conds[2].prior_mode, PriorMode::Fixed);
    }

    #[test]
    fn unknown_field_rejected() {
        let r: std::result::Result<ExperimentConfig, _> = serde_json::from_value(serde_json::json!({
            "field": small_field(),
            "trails": 3,
        }));
        assert!(r.is_err());
    }

    #[test]
    fn paper_direction_setup() {
        let reference = small_field().field().unwrap();
        let spec = default_perturbation();
        let s = trial_setup(&reference, &spec, PerturbDirection::Paper, 1, 0);
        // truth = (1/c) prior(x - t) wherever the prior is not clamped
        let th = s.true_theta;
        for p in [crate::field::Point2::new(0.01, 0.003), crate::field::Point2::new(0.06, -0.01)] {
            let lhs = s.truth.eval(p);
            let rhs = th.c * s.prior.eval(p - th.shift());
            assert!((lhs - rhs).abs() < 1e-12);
        }
        assert_eq!(s, trial_setup(&reference, &spec, PerturbDirection::Paper, 1, 0));
        assert_ne!(s, trial_setup(&reference, &spec, PerturbDirection::Paper, 1, 1));
        let inv = trial_setup(&reference, &spec, PerturbDirection::Inverse, 1, 0);
        assert_eq!(inv.prior, reference);
    }

    #[test]
    fn deterministic_csv_and_paired_truth() {
        let cfg = config(3);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.aggregate.to_csv_string().unwrap(), b.aggregate.to_csv_string().unwrap());
        assert_eq!(a.trials, b.trials);
        let csv = a.aggregate.to_csv_string().unwrap();
        assert!(csv.starts_with("acquisition,beta,prior_mode,n_max,mean,stderr,trials,failures\n"));
        assert_eq!(csv.lines().count(), 1 + 12);
        for row in &a.aggregate.rows {
            assert_eq!(row.trials, 3);
            assert_eq!(row.failures, 0);
            assert!((0.0..=1.0).contains(&row.mean));
        }
    }

    #[test]
    fn larger_budget_never_hurts_first_region() {
        // Later regions start from different shared histories, so only the
        // first region is an exact prefix of the larger-budget run.
        let cfg = config(2);
        let out = run_experiment(&cfg).unwrap();
        for t in &out.trials {
            for (i, c) in out.conditions.iter().enumerate() {
                if c.n_max != 2 {
                    continue;
                }
                let j = out
                    .conditions
                    .iter()
                    .position(|d| {
                        d.n_max == 4
                            && d.acquisition_index == c.acquisition_index
                            && d.mode_index == c.mode_index
                    })
                    .unwrap();
                let small = t.scores[i].as_ref().unwrap();
                let large = t.scores[j].as_ref().unwrap();
                assert!(large.region_best[0] >= small.region_best[0]);
            }
        }
    }

    #[test]
    fn unperturbed_spar_finds_each_region_peak() {
        // With zero perturbation and enough budget, spar mode observes the
        // truth's best candidate in each region.
        let mut cfg = config(1);
        cfg.perturbation = PerturbationSpec { shift_range: 0.0, scale_range: (1.0, 1.0) };
        cfg.acquisitions = vec![AcquisitionSpec::Ei];
        cfg.prior_modes = vec![PriorMode::Spar];
        cfg.n_max = vec![4];
        let out = run_experiment(&cfg).unwrap();

        let ff = small_field();
        let truth = ff.field().unwrap();
        let regions = ff.regions(0.005, None).unwrap();
        let expected: f64 = regions
            .iter()
            .map(|r| r.candidates.iter().map(|&p| truth.eval(p)).fold(0.0, f64::max))
            .sum::<f64>()
            / regions.len() as f64;
        assert!((out.aggregate.rows[0].mean - expected).abs() < 1e-12);
    }
}
