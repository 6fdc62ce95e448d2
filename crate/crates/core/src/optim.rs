//! Box-bounded Nelder-Mead simplex minimizer.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMead {
    pub max_evals: usize,
    /// Stop once the simplex fits in a box of this half-width...
    pub x_tol: f64,
    /// ...and its vertex values agree within this.
    pub f_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            x_tol: 1e-7,
            f_tol: 1e-12,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

impl NelderMead {
    /// Minimize `f` within `[lower, upper]` starting from `x0`. Trial points
    /// are projected onto the box. The returned point is never worse than `x0`.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], lower: &[f64], upper: &[f64]) -> Minimum
    where
        F: FnMut(&[f64]) -> f64,
    {
        let n = x0.len();
        assert!(n > 0 && lower.len() == n && upper.len() == n);
        let project = |x: &mut [f64]| {
            for i in 0..n {
                x[i] = x[i].clamp(lower[i], upper[i]);
            }
        };
        let mut evals = 0usize;
        let mut eval = |x: &[f64], evals: &mut usize| {
            *evals += 1;
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut start = x0.to_vec();
        project(&mut start);
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        let f0 = eval(&start, &mut evals);
        simplex.push((start.clone(), f0));
        for i in 0..n {
            let mut v = start.clone();
            let step = self.initial_step;
            v[i] = if v[i] + step <= upper[i] { v[i] + step } else { v[i] - step };
            project(&mut v);
            let fv = eval(&v, &mut evals);
            simplex.push((v, fv));
        }

        let mut converged = false;
        while evals < self.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[n].1;
            let spread = simplex
                .iter()
                .skip(1)
                .flat_map(|(v, _)| v.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread <= self.x_tol && (worst - best).abs() <= self.f_tol {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|i| simplex[..n].iter().map(|(v, _)| v[i]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                let mut p: Vec<f64> = (0..n)
                    .map(|i| centroid[i] + t * (simplex[n].0[i] - centroid[i]))
                    .collect();
                project(&mut p);
                p
            };

            let xr = along(-1.0);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = along(-2.0);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
                continue;
            }
            // Shrink toward the best vertex.
            let best_x = simplex[0].0.clone();
            for vertex in simplex.iter_mut().skip(1) {
                let mut p: Vec<f64> = (0..n)
                    .map(|i| best_x[i] + 0.5 * (vertex.0[i] - best_x[i]))
                    .collect();
                project(&mut p);
                let fp = eval(&p, &mut evals);
                *vertex = (p, fp);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, value) = simplex.swap_remove(0);
        Minimum {
            x,
            value,
            evals,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let nm = NelderMead {
            max_evals: 10_000,
            x_tol: 1e-10,
            f_tol: 1e-16,
            initial_step: 0.5,
        };
        let m = nm.minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m);
    }

    #[test]
    fn respects_bounds() {
        let m = NelderMead::default().minimize(
            |x| (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2) + (x[2]).abs(),
            &[0.0, 0.0, 0.3],
            &[-1.0, -1.0, -1.0],
            &[1.0, 1.0, 1.0],
        );
        assert!((m.x[0] - 1.0).abs() < 1e-6);
        assert!((m.x[1] + 1.0).abs() < 1e-6);
        assert!(m.x[2].abs() < 1e-6);
    }

    #[test]
    fn never_worse_than_start() {
        // Flat objective: nothing to improve.
        let m = NelderMead::default().minimize(|_| 1.0, &[0.2, 0.3], &[-1.0, -1.0], &[1.0, 1.0]);
        assert_eq!(m.value, 1.0);
    }
}
