//! Semi-parametric residual GP belief.
//!
//! Quality is modelled as `mu_theta(x) + f(x)` where
//! `mu_theta(x) = c * reference(x - t)` is a shifted and scaled copy of a
//! reference map and `f` is a zero-mean GP over the residuals. The latent
//! `theta = [t_x, t_y, c]` carries a diagonal Gaussian prior and is
//! re-estimated by MAP after every observation.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Point2, QualityField};
use crate::gp::{GpState, KernelParams};
use crate::optim::NelderMead;

/// Lower bound enforced on the quality scale.
pub const MIN_SCALE: f64 = 1e-3;
/// Box used by the MAP search for `c`.
pub const SCALE_BOUNDS: (f64, f64) = (0.1, 3.0);
/// Shift bound, in prior standard deviations per axis.
pub const SHIFT_BOUND_STDS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    pub t_x: f64,
    pub t_y: f64,
    pub c: f64,
}

impl Default for LatentParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl LatentParams {
    pub const fn new(t_x: f64, t_y: f64, c: f64) -> Self {
        Self { t_x, t_y, c }
    }

    /// No shift, unit scale.
    pub const fn identity() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }

    pub fn shift(&self) -> Point2 {
        Point2::new(self.t_x, self.t_y)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.t_x, self.t_y, self.c]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Diagonal Gaussian prior over [`LatentParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrior {
    pub mean: LatentParams,
    /// Diagonal of the covariance: `[var t_x, var t_y, var c]`.
    pub variance: [f64; 3],
}

impl Default for ThetaPrior {
    fn default() -> Self {
        Self {
            mean: LatentParams::identity(),
            variance: [1.33e-4, 1.33e-4, 0.03],
        }
    }
}

impl ThetaPrior {
    pub fn validate(&self) -> Result<()> {
        if self.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "theta prior variances {:?} must be positive",
                self.variance
            )));
        }
        if self.mean.c.is_nan() || self.mean.c <= 0.0 {
            return Err(Error::InvalidParameter("theta prior mean c must be > 0".into()));
        }
        Ok(())
    }

    pub fn std(&self) -> [f64; 3] {
        self.variance.map(f64::sqrt)
    }

    /// Squared Mahalanobis distance from the prior mean.
    pub fn mahalanobis2(&self, theta: &LatentParams) -> f64 {
        let m = self.mean.to_array();
        theta
            .to_array()
            .iter()
            .zip(m)
            .zip(self.variance)
            .map(|((v, m), s2)| (v - m) * (v - m) / s2)
            .sum()
    }

    /// Log density up to an additive constant.
    pub fn log_density(&self, theta: &LatentParams) -> f64 {
        -0.5 * self.mahalanobis2(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Plain GP, no prior mean.
    Zero,
    /// Residual GP over the reference map at the prior mean, never re-estimated.
    Fixed,
    /// Residual GP with MAP re-estimation of theta.
    #[default]
    Spar,
}

impl PriorMode {
    pub const ALL: [PriorMode; 3] = [PriorMode::Zero, PriorMode::Fixed, PriorMode::Spar];

    pub fn label(self) -> &'static str {
        match self {
            PriorMode::Zero => "zero",
            PriorMode::Fixed => "fixed",
            PriorMode::Spar => "spar",
        }
    }
}

impl std::str::FromStr for PriorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(PriorMode::Zero),
            "fixed" => Ok(PriorMode::Fixed),
            "spar" => Ok(PriorMode::Spar),
            other => Err(Error::Config(format!("unknown prior mode '{other}'"))),
        }
    }
}

/// Hyperparameters shared by every model in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kernel: KernelParams,
    pub theta_prior: ThetaPrior,
    /// Noise std of the MAP likelihood; defaults to `sqrt(kernel.noise_variance)`.
    pub likelihood_sigma: Option<f64>,
    /// Recompute every residual under the latest theta (otherwise only the newest).
    pub recompute_residuals: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernel: KernelParams::default(),
            theta_prior: ThetaPrior::default(),
            likelihood_sigma: None,
            recompute_residuals: true,
        }
    }
}

impl ModelConfig {
    pub fn likelihood_sigma(&self) -> f64 {
        self.likelihood_sigma
            .unwrap_or_else(|| self.kernel.noise_variance.sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.theta_prior.validate()?;
        let s = self.likelihood_sigma();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "likelihood sigma {s} must be positive (set likelihood_sigma when noise_variance is 0)"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SparModel {
    reference: QualityField,
    theta: LatentParams,
    theta_prior: ThetaPrior,
    gp: GpState,
    history_x: Vec<Point2>,
    history_e: Vec<f64>,
    likelihood_sigma: f64,
    prior_mode: PriorMode,
    recompute_residuals: bool,
    solver: NelderMead,
}

impl SparModel {
    pub fn new(reference: QualityField, config: &ModelConfig, prior_mode: PriorMode) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            reference,
            theta: config.theta_prior.mean,
            theta_prior: config.theta_prior,
            gp: GpState::new(config.kernel)?,
            history_x: Vec::new(),
            history_e: Vec::new(),
            likelihood_sigma: config.likelihood_sigma(),
            prior_mode,
            recompute_residuals: config.recompute_residuals,
            solver: NelderMead {
                max_evals: 1500,
                x_tol: 1e-6,
                f_tol: 1e-10,
                initial_step: 0.5,
            },
        })
    }

    pub fn reference(&self) -> &QualityField {
        &self.reference
    }

    pub fn theta(&self) -> LatentParams {
        self.theta
    }

    pub fn theta_prior(&self) -> &ThetaPrior {
        &self.theta_prior
    }

    pub fn prior_mode(&self) -> PriorMode {
        self.prior_mode
    }

    pub fn gp(&self) -> &GpState {
        &self.gp
    }

    pub fn history(&self) -> (&[Point2], &[f64]) {
        (&self.history_x, &self.history_e)
    }

    pub fn likelihood_sigma(&self) -> f64 {
        self.likelihood_sigma
    }

    /// `c * reference(p - t)` for an arbitrary theta. Not re-clamped.
    #[inline]
    pub fn prior_mean_with(&self, theta: &LatentParams, p: Point2) -> f64 {
        theta.c * self.reference.eval(p - theta.shift())
    }

    /// Prior mean under the model's current mode and theta.
    pub fn prior_mean(&self, p: Point2) -> f64 {
        match self.prior_mode {
            PriorMode::Zero => 0.0,
            PriorMode::Fixed => self.prior_mean_with(&self.theta_prior.mean, p),
            PriorMode::Spar => self.prior_mean_with(&self.theta, p),
        }
    }

    /// Gaussian log-likelihood of the history plus log prior, constants dropped.
    pub fn log_posterior_theta(&self, theta: &LatentParams) -> f64 {
        let s2 = self.likelihood_sigma * self.likelihood_sigma;
        let sse: f64 = self
            .history_x
            .iter()
            .zip(&self.history_e)
            .map(|(&x, &e)| {
                let r = e - self.prior_mean_with(theta, x);
                r * r
            })
            .sum();
        -0.5 * sse / s2 + self.theta_prior.log_density(theta)
    }

    /// MAP estimate of theta from the current history.
    ///
    /// Local searches start from the incumbent and from the prior mean. The
    /// result is never worse than either start; among equally good optima the
    /// one closest to the prior mean (Mahalanobis) wins.
    pub fn map_estimate(&self) -> LatentParams {
        let prior_mean = self.theta_prior.mean;
        if self.history_x.is_empty() {
            return prior_mean;
        }
        let m = prior_mean.to_array();
        let sd = self.theta_prior.std();
        let to_theta = |z: &[f64]| {
            LatentParams::new(m[0] + z[0] * sd[0], m[1] + z[1] * sd[1], m[2] + z[2] * sd[2])
        };
        let to_z = |th: &LatentParams| {
            let a = th.to_array();
            [(a[0] - m[0]) / sd[0], (a[1] - m[1]) / sd[1], (a[2] - m[2]) / sd[2]]
        };
        let lower = [
            -SHIFT_BOUND_STDS,
            -SHIFT_BOUND_STDS,
            (SCALE_BOUNDS.0 - m[2]) / sd[2],
        ];
        let upper = [
            SHIFT_BOUND_STDS,
            SHIFT_BOUND_STDS,
            (SCALE_BOUNDS.1 - m[2]) / sd[2],
        ];
        let objective = |z: &[f64]| -self.log_posterior_theta(&to_theta(z));

        let mut candidates = vec![
            (prior_mean, self.log_posterior_theta(&prior_mean)),
            (self.theta, self.log_posterior_theta(&self.theta)),
        ];
        let mut failed = false;
        for start in [self.theta, prior_mean] {
            let mut z = to_z(&start).to_vec();
            // One restart from the first optimum guards against a collapsed simplex.
            for _ in 0..2 {
                let res = self.solver.minimize(objective, &z, &lower, &upper);
                if !res.value.is_finite() {
                    failed = true;
                    break;
                }
                z = res.x;
            }
            let th = to_theta(&z);
            candidates.push((th, self.log_posterior_theta(&th)));
        }
        if failed {
            warn!("MAP search failed; keeping incumbent theta");
        }

        let best = candidates
            .iter()
            .map(|c| c.1)
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !best.is_finite() {
            warn!("MAP objective not finite; keeping incumbent theta");
            return self.theta;
        }
        let tol = 1e-12 * best.abs().max(1.0);
        let mut chosen = candidates
            .into_iter()
            .filter(|c| c.1 >= best - tol)
            .min_by(|a, b| {
                self.theta_prior
                    .mahalanobis2(&a.0)
                    .total_cmp(&self.theta_prior.mahalanobis2(&b.0))
            })
            .map(|c| c.0)
            .unwrap_or(self.theta);
        chosen.c = chosen.c.max(MIN_SCALE);
        chosen
    }

    /// Record an observation, re-estimate theta (spar mode only), rebuild
    /// residuals and refit the GP.
    pub fn update(&mut self, p: Point2, e: f64) -> Result<()> {
        self.update_with(p, e, SparModel::map_estimate)
    }

    /// As [`SparModel::update`] with a caller-supplied theta estimator, which
    /// is consulted in spar mode only.
    pub fn update_with<F>(&mut self, p: Point2, e: f64, estimate: F) -> Result<()>
    where
        F: FnOnce(&SparModel) -> LatentParams,
    {
        let mut next = self.clone();
        next.history_x.push(p);
        next.history_e.push(e);
        if next.prior_mode == PriorMode::Spar {
            next.theta = estimate(&next);
        }
        if next.recompute_residuals {
            let ys = next
                .history_x
                .iter()
                .zip(&next.history_e)
                .map(|(&x, &e)| e - next.prior_mean(x))
                .collect();
            next.gp.reset_observations(next.history_x.clone(), ys)?;
        } else {
            let y = e - next.prior_mean(p);
            next.gp.add_observation(p, y);
        }
        next.gp.fit()?;
        *self = next;
        Ok(())
    }

    /// Posterior mean and standard deviation of quality at `p`.
    pub fn predict(&self, p: Point2) -> (f64, f64) {
        let (m, v) = self
            .gp
            .posterior(p)
            .expect("model GP is refit on every update");
        (self.prior_mean(p) + m, v.sqrt())
    }

    /// Largest `|y_i - (e_i - mu_theta(x_i))|` over the history.
    pub fn residual_error(&self) -> f64 {
        self.gp
            .xs()
            .iter()
            .zip(self.gp.ys())
            .zip(&self.history_e)
            .map(|((&x, &y), &e)| (y - (e - self.prior_mean(x))).abs())
            .fold(0.0, f64::max)
    }
}
