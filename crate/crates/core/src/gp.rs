//! Zero-mean Gaussian process regression with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Point2;

/// Diagonal jitter added on the single retry after a failed factorization.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub length_scale: f64,
    pub signal_variance: f64,
    /// Observation noise, added to the diagonal of the kernel matrix as a variance.
    pub noise_variance: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            length_scale: 0.02,
            signal_variance: 1.0,
            noise_variance: 0.0417,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "length_scale {} must be positive",
                self.length_scale
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "signal_variance {} must be positive",
                self.signal_variance
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise_variance {} must be >= 0",
                self.noise_variance
            )));
        }
        Ok(())
    }
}

/// `signal_variance * exp(-|a - b|^2 / (2 length_scale^2))`
#[inline]
pub fn kernel_eval(params: &KernelParams, a: Point2, b: Point2) -> f64 {
    let l2 = params.length_scale * params.length_scale;
    params.signal_variance * (-a.squared_distance(b) / (2.0 * l2)).exp()
}

#[derive(Debug, Clone)]
struct Factorization {
    /// Lower Cholesky factor of `K + noise_variance * I`.
    lower: DMatrix<f64>,
    /// `K^-1 y`
    weights: DVector<f64>,
}

/// Observation history plus the cached factorization of its kernel matrix.
///
/// Mutations mark the cache stale; [`GpState::posterior`] refuses to answer
/// until [`GpState::fit`] has been called again.
#[derive(Debug, Clone)]
pub struct GpState {
    params: KernelParams,
    xs: Vec<Point2>,
    ys: Vec<f64>,
    factor: Option<Factorization>,
}

impl GpState {
    /// A fitted state with no observations.
    pub fn new(params: KernelParams) -> Result<Self> {
        params.validate()?;
        let mut s = Self {
            params,
            xs: Vec::new(),
            ys: Vec::new(),
            factor: None,
        };
        s.fit()?;
        Ok(s)
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn xs(&self) -> &[Point2] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn is_fitted(&self) -> bool {
        self.factor.is_some()
    }

    pub fn add_observation(&mut self, p: Point2, y: f64) {
        self.xs.push(p);
        self.ys.push(y);
        self.factor = None;
    }

    pub fn reset_observations(&mut self, xs: Vec<Point2>, ys: Vec<f64>) -> Result<()> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                xs: xs.len(),
                ys: ys.len(),
            });
        }
        self.xs = xs;
        self.ys = ys;
        self.factor = None;
        Ok(())
    }

    /// Factorize `K + noise_variance * I`, retrying once with extra jitter.
    pub fn fit(&mut self) -> Result<()> {
        let n = self.xs.len();
        if self.params.noise_variance == 0.0 && has_duplicates(&self.xs) {
            // Exactly singular; jitter would only hide it.
            return Err(Error::NotPositiveDefinite);
        }
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = kernel_eval(&self.params, self.xs[i], self.xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        let chol = [self.params.noise_variance, self.params.noise_variance + JITTER]
            .iter()
            .find_map(|&noise| {
                let mut kn = k.clone();
                for i in 0..n {
                    kn[(i, i)] += noise;
                }
                Cholesky::new(kn)
            })
            .ok_or(Error::NotPositiveDefinite)?;
        let weights = chol.solve(&DVector::from_column_slice(&self.ys));
        self.factor = Some(Factorization {
            lower: chol.unpack(),
            weights,
        });
        Ok(())
    }

    /// Lower Cholesky factor of the last fit, if current.
    pub fn factor(&self) -> Option<&DMatrix<f64>> {
        self.factor.as_ref().map(|f| &f.lower)
    }

    /// Posterior mean and variance of the latent function at `p`.
    pub fn posterior(&self, p: Point2) -> Result<(f64, f64)> {
        let (mean, var) = self.posterior_unclamped(p)?;
        Ok((mean, var.max(0.0)))
    }

    /// As [`GpState::posterior`] but without the zero floor on the variance.
    pub fn posterior_unclamped(&self, p: Point2) -> Result<(f64, f64)> {
        let f = self.factor.as_ref().ok_or(Error::RefitRequired)?;
        let prior = self.params.signal_variance;
        if self.xs.is_empty() {
            return Ok((0.0, prior));
        }
        let kvec = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|&x| kernel_eval(&self.params, p, x)),
        );
        let mean = kvec.dot(&f.weights);
        let v = f
            .lower
            .solve_lower_triangular(&kvec)
            .ok_or(Error::NotPositiveDefinite)?;
        Ok((mean, prior - v.norm_squared()))
    }
}

fn has_duplicates(xs: &[Point2]) -> bool {
    let mut keys: Vec<_> = xs.iter().map(|p| p.key()).collect();
    keys.sort_unstable();
    keys.windows(2).any(|w| w[0] == w[1])
}
