//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::acquisition::AcquisitionSpec;
use crate::error::{Error, Result};
use crate::field::{FieldFile, PerturbationSpec, QualityField};
use crate::harness::{run_experiment, trial_setup, ExperimentConfig, PerturbDirection};
use crate::oracle::{QualityOracle, ReplayOracle, SimulatedOracle};
use crate::planner::{run_session_with_model, write_trace_file, BestScope, SessionConfig, SessionResult};
use crate::raster::{GridSpec, Raster};
use crate::spar::{ModelConfig, PriorMode, SparModel};

#[derive(Debug, Parser)]
#[command(name = "sparbo", version, about = "Bayesian optimization of sensing locations with a semi-parametric residual GP")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo comparison of acquisitions and prior modes; writes an aggregate CSV.
    Simulate(SimulateArgs),
    /// Run one session against a simulated ground truth; writes the trace.
    Plan(PlanArgs),
    /// Field utilities.
    Field {
        #[command(subcommand)]
        command: FieldCommand,
    },
    /// Re-run a session whose observations come from a recorded trace.
    Replay(ReplayArgs),
}

#[derive(Debug, Subcommand)]
pub enum FieldCommand {
    /// Rasterize a field definition.
    Grid(GridArgs),
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got '{s}'")),
    }
}

fn parse_bounds(s: &str) -> std::result::Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number '{t}'")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into()
        .map_err(|_| "expected xmin,xmax,ymin,ymax".to_string())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Aggregate CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub perturb_direction: Option<PerturbDirection>,
    #[arg(long, value_parser = parse_bool)]
    pub recompute_residuals: Option<bool>,
    #[arg(long)]
    pub ei_best_scope: Option<BestScope>,
    /// Optional per-trial CSV (trial, truth hash, one column per condition).
    #[arg(long)]
    pub per_trial: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct SessionArgs {
    /// Field definition (reference map and regions).
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, default_value = "spar")]
    pub prior_mode: PriorMode,
    /// `ei`, `ucb` or `ucb<beta>`.
    #[arg(long, default_value = "ei")]
    pub acq: AcquisitionSpec,
    #[arg(long, default_value_t = 10)]
    pub n_max: usize,
    /// Early-termination quality threshold; disabled when absent.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 0.005)]
    pub grid_step: f64,
    /// Overrides every region radius.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    pub length_scale: f64,
    /// GP observation noise variance.
    #[arg(long, default_value_t = 0.0417)]
    pub alpha: f64,
    #[arg(long)]
    pub likelihood_sigma: Option<f64>,
    #[arg(long, value_parser = parse_bool, default_value = "true")]
    pub recompute_residuals: bool,
    #[arg(long, default_value = "global")]
    pub ei_best_scope: BestScope,
    #[arg(long, default_value = "heart")]
    pub structure: String,
    /// Final posterior mean/std raster destination.
    #[arg(long)]
    pub posterior_grid: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0025)]
    pub posterior_step: f64,
    /// Session result as JSON.
    #[arg(long)]
    pub result_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Ground-truth field; when absent the truth is a seeded random
    /// perturbation of the reference.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub shift_range: f64,
    #[arg(long, default_value_t = 0.7)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 1.3)]
    pub scale_max: f64,
    #[arg(long, default_value = "paper")]
    pub perturb_direction: PerturbDirection,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Recorded trace providing the observations.
    #[arg(long)]
    pub trace: PathBuf,
    /// Trace of the replayed session.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, default_value_t = 0.005)]
    pub step: f64,
    /// `xmin,xmax,ymin,ymax`; defaults to the regions' bounding box.
    #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
    pub bounds: Option<[f64; 4]>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Plan(a) => plan(a),
        Command::Replay(a) => replay(a),
        Command::Field {
            command: FieldCommand::Grid(a),
        } => field_grid(a),
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    cfg.seed = args.seed;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(d) = args.perturb_direction {
        cfg.perturb_direction = d;
    }
    if let Some(r) = args.recompute_residuals {
        cfg.model.recompute_residuals = r;
    }
    if let Some(s) = args.ei_best_scope {
        cfg.ei_best_scope = s;
    }
    let outcome = run_experiment(&cfg)?;
    match &args.out {
        Some(path) => outcome.aggregate.write_csv(std::fs::File::create(path)?)?,
        None => outcome.aggregate.write_csv(std::io::stdout().lock())?,
    }
    if let Some(path) = &args.per_trial {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["trial".to_string(), "truth_hash".to_string()];
        header.extend(outcome.conditions.iter().map(|c| {
            format!("{}/{}/{}", c.acquisition.label(), c.prior_mode.label(), c.n_max)
        }));
        w.write_record(&header)?;
        for t in &outcome.trials {
            let mut row = vec![t.trial.to_string(), format!("{:016x}", t.truth_hash)];
            row.extend(
                t.scores
                    .iter()
                    .map(|s| s.as_ref().map(|v| v.mean.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn session_config(args: &SessionArgs) -> Result<(SessionConfig, FieldFile)> {
    let ff = FieldFile::load(&args.field)?;
    let reference = ff.field()?;
    let regions = ff.regions(args.grid_step, args.radius)?;
    if regions.is_empty() {
        return Err(Error::Config(format!(
            "{} defines no regions",
            args.field.display()
        )));
    }
    let mut model = ModelConfig::default();
    model.kernel.length_scale = args.length_scale;
    model.kernel.noise_variance = args.alpha;
    model.likelihood_sigma = args.likelihood_sigma;
    model.recompute_residuals = args.recompute_residuals;
    let cfg = SessionConfig {
        structure: args.structure.clone(),
        reference,
        regions,
        n_max: args.n_max,
        early_term_threshold: args.threshold,
        acquisition: args.acq,
        prior_mode: args.prior_mode,
        model,
        ei_best_scope: args.ei_best_scope,
    };
    cfg.validate()?;
    Ok((cfg, ff))
}

fn run_and_export(
    args: &SessionArgs,
    cfg: &SessionConfig,
    oracle: &mut dyn QualityOracle,
    trace_out: &Path,
) -> Result<()> {
    let (result, model) = match run_session_with_model(cfg, oracle) {
        Ok(v) => v,
        Err(Error::SessionAborted { partial, source }) => {
            write_trace_file(&partial.trace, trace_out)?;
            return Err(Error::SessionAborted { partial, source });
        }
        Err(e) => return Err(e),
    };
    write_trace_file(&result.trace, trace_out)?;
    export_extras(args, cfg, &result, &model)
}

fn export_extras(
    args: &SessionArgs,
    cfg: &SessionConfig,
    result: &SessionResult,
    model: &SparModel,
) -> Result<()> {
    if let Some(path) = &args.result_json {
        std::fs::write(path, result.to_json()?)?;
    }
    if let Some(path) = &args.posterior_grid {
        let grid = GridSpec::covering(&cfg.reference, &cfg.regions, args.posterior_step)?;
        Raster::of_model(model, grid)?.write_file(path)?;
    }
    Ok(())
}

fn plan(args: PlanArgs) -> Result<()> {
    let (cfg, _) = session_config(&args.session)?;
    let truth: QualityField = match &args.truth {
        Some(path) => FieldFile::load(path)?.field()?,
        None => {
            let spec = PerturbationSpec {
                shift_range: args.shift_range,
                scale_range: (args.scale_min, args.scale_max),
            };
            spec.validate()?;
            let setup = trial_setup(&cfg.reference, &spec, args.perturb_direction, args.seed, 0);
            // The session's prior follows the perturbation direction too.
            let mut cfg = cfg;
            cfg.reference = setup.prior;
            let mut oracle = SimulatedOracle::new(setup.truth, args.noise_std, args.seed)?;
            return run_and_export(&args.session, &cfg, &mut oracle, &args.trace);
        }
    };
    let mut oracle = SimulatedOracle::new(truth, args.noise_std, args.seed)?;
    run_and_export(&args.session, &cfg, &mut oracle, &args.trace)
}

fn replay(args: ReplayArgs) -> Result<()> {
    let (cfg, _) = session_config(&args.session)?;
    let mut oracle = ReplayOracle::from_trace_file(&args.trace)?;
    run_and_export(&args.session, &cfg, &mut oracle, &args.out)
}

fn field_grid(args: GridArgs) -> Result<()> {
    let ff = FieldFile::load(&args.field)?;
    let field = ff.field()?;
    let grid = match &args.bounds {
        Some(b) => GridSpec {
            xmin: b[0],
            xmax: b[1],
            ymin: b[2],
            ymax: b[3],
            step: args.step,
        },
        None => {
            let regions = ff.regions(args.step.min(0.005), None)?;
            GridSpec::covering(&field, &regions, args.step)?
        }
    };
    Raster::of_field(&field, grid)?.write_file(&args.out)
}
