//! Maximum-likelihood calibration of the GJR-GARCH coefficients.
//!
//! The five free coefficients `(mu, omega, alpha, gamma, beta)` are mapped to
//! unconstrained coordinates: a logistic map onto each box interval (in log
//! space for `omega`). BFGS then runs on the mean negative log-likelihood.
//! Points that violate positivity or stationarity evaluate to `+inf`, so the
//! backtracking line search never accepts them.

use serde::{Deserialize, Serialize};

use super::{log_likelihood, GarchParams};
use crate::error::{ensure, Error, Result};

/// Box constraints for the free coefficients, as `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBounds {
    pub mu: (f64, f64),
    pub omega: (f64, f64),
    pub alpha: (f64, f64),
    pub gamma: (f64, f64),
    pub beta: (f64, f64),
    pub max_iter: usize,
    /// Convergence tolerance on the change of the mean negative log-likelihood.
    pub tol: f64,
}

impl Default for CalibrationBounds {
    fn default() -> Self {
        Self {
            mu: (-0.01, 0.01),
            omega: (1e-9, 1e-3),
            alpha: (0.0, 0.6),
            gamma: (-0.5, 0.8),
            beta: (0.0, 0.999),
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: GarchParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Volatility used to start the variance filter (sample standard deviation).
    pub sigma1: f64,
}

struct Transform {
    bounds: CalibrationBounds,
    base: GarchParams,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

impl Transform {
    fn intervals(&self) -> [(f64, f64); 5] {
        let b = &self.bounds;
        [
            b.mu,
            (b.omega.0.ln(), b.omega.1.ln()),
            b.alpha,
            b.gamma,
            b.beta,
        ]
    }

    fn to_params(&self, z: &[f64; 5]) -> GarchParams {
        let iv = self.intervals();
        let x: Vec<f64> = (0..5)
            .map(|k| iv[k].0 + (iv[k].1 - iv[k].0) * logistic(z[k]))
            .collect();
        GarchParams {
            mu: x[0],
            omega: x[1].exp(),
            alpha: x[2],
            gamma: x[3],
            beta: x[4],
            ..self.base
        }
    }

    fn encode(&self, p: &GarchParams) -> [f64; 5] {
        let iv = self.intervals();
        let x = [p.mu, p.omega.ln(), p.alpha, p.gamma, p.beta];
        let mut z = [0.0; 5];
        for k in 0..5 {
            let (lo, hi) = iv[k];
            let u = ((x[k] - lo) / (hi - lo)).clamp(1e-6, 1.0 - 1e-6);
            z[k] = logit(u);
        }
        z
    }
}

fn objective(tf: &Transform, returns: &[f64], sigma1: f64, z: &[f64; 5]) -> f64 {
    let p = tf.to_params(z);
    if p.alpha + p.gamma < 0.0 || !p.is_stationary() {
        return f64::INFINITY;
    }
    match log_likelihood(&p, returns, sigma1) {
        Ok(ll) if ll.is_finite() => -ll / returns.len() as f64,
        _ => f64::INFINITY,
    }
}

fn gradient(f: &dyn Fn(&[f64; 5]) -> f64, z: &[f64; 5], fz: f64) -> [f64; 5] {
    const H: f64 = 1e-5;
    let mut g = [0.0; 5];
    for k in 0..5 {
        let mut up = *z;
        let mut dn = *z;
        up[k] += H;
        dn[k] -= H;
        let (fu, fd) = (f(&up), f(&dn));
        g[k] = match (fu.is_finite(), fd.is_finite()) {
            (true, true) => (fu - fd) / (2.0 * H),
            (true, false) => (fu - fz) / H,
            (false, true) => (fz - fd) / H,
            (false, false) => 0.0,
        };
    }
    g
}

fn dot(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes the Gaussian GJR-GARCH likelihood of `returns`.
///
/// `init` provides the starting coefficients and the fixed market constants
/// (`r`, `q`, `lambda`). On hitting `bounds.max_iter` the error carries the
/// best iterate found.
pub fn calibrate(
    returns: &[f64],
    init: &GarchParams,
    bounds: &CalibrationBounds,
) -> Result<Calibration> {
    ensure!(!returns.is_empty(), "return series is empty");
    if let Some(i) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("return #{i} = {}", returns[i])));
    }
    if returns.len() < 250 {
        log::warn!(
            "calibrating on only {} returns; estimates will be noisy",
            returns.len()
        );
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    ensure!(var > 0.0, "return series has zero variance");
    let sigma1 = var.sqrt();

    let tf = Transform {
        bounds: *bounds,
        base: *init,
    };
    let f = |z: &[f64; 5]| objective(&tf, returns, sigma1, z);

    let mut z = tf.encode(init);
    let mut fz = f(&z);
    ensure!(
        fz.is_finite(),
        "initial parameters are infeasible or outside the bounds: {init:?}"
    );
    let mut g = gradient(&f, &z, fz);
    let mut hinv = identity();
    let mut calm = 0;

    for iter in 1..=bounds.max_iter {
        let mut dir = matvec(&hinv, &g).map(|v| -v);
        if dot(&dir, &g) >= 0.0 {
            hinv = identity();
            dir = g.map(|v| -v);
        }
        let slope = dot(&dir, &g);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: [f64; 5] = std::array::from_fn(|k| z[k] + step * dir[k]);
            let ft = f(&trial);
            if ft.is_finite() && ft <= fz + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }

        let Some((znew, fnew)) = accepted else {
            if hinv != identity() {
                hinv = identity();
                continue;
            }
            // No descent possible along the gradient: stationary to working precision.
            return Ok(finish(&tf, &z, fz, n, iter, sigma1));
        };

        let gnew = gradient(&f, &znew, fnew);
        let s: [f64; 5] = std::array::from_fn(|k| znew[k] - z[k]);
        let y: [f64; 5] = std::array::from_fn(|k| gnew[k] - g[k]);
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            bfgs_update(&mut hinv, &s, &y, sy);
        }

        let change = fz - fnew;
        z = znew;
        fz = fnew;
        g = gnew;

        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        calm = if change.abs() < bounds.tol {
            calm + 1
        } else {
            0
        };
        if calm >= 2 || gnorm < 1e-9 {
            return Ok(finish(&tf, &z, fz, n, iter, sigma1));
        }
    }

    Err(Error::NoConvergence {
        iterations: bounds.max_iter,
        best_loglik: -fz * n,
        best: Box::new(tf.to_params(&z)),
    })
}

fn finish(
    tf: &Transform,
    z: &[f64; 5],
    fz: f64,
    n: f64,
    iterations: usize,
    sigma1: f64,
) -> Calibration {
    Calibration {
        params: tf.to_params(z),
        log_likelihood: -fz * n,
        iterations,
        sigma1,
    }
}

type Mat5 = [[f64; 5]; 5];

fn identity() -> Mat5 {
    std::array::from_fn(|i| std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 }))
}

fn matvec(m: &Mat5, v: &[f64; 5]) -> [f64; 5] {
    std::array::from_fn(|i| dot(&m[i], v))
}

fn bfgs_update(h: &mut Mat5, s: &[f64; 5], y: &[f64; 5], sy: f64) {
    let rho = 1.0 / sy;
    let hy = matvec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..5 {
        for j in 0..5 {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::simulate_p;

    fn start() -> GarchParams {
        GarchParams {
            mu: 0.0,
            omega: 2e-6,
            alpha: 0.05,
            gamma: 0.1,
            beta: 0.8,
            ..GarchParams::default()
        }
    }

    #[test]
    fn empty_series_is_rejected() {
        assert!(calibrate(&[], &start(), &CalibrationBounds::default()).is_err());
    }

    #[test]
    fn transform_round_trips() {
        let tf = Transform {
            bounds: CalibrationBounds::default(),
            base: GarchParams::default(),
        };
        let p = GarchParams::default();
        let back = tf.to_params(&tf.encode(&p));
        assert!((back.alpha - p.alpha).abs() < 1e-12);
        assert!((back.gamma - p.gamma).abs() < 1e-12);
        assert!((back.beta - p.beta).abs() < 1e-12);
        assert!((back.omega / p.omega - 1.0).abs() < 1e-12);
        assert!((back.mu - p.mu).abs() < 1e-12);
    }

    #[test]
    fn calibrated_likelihood_beats_start_and_truth() {
        let truth = GarchParams::default();
        let series = simulate_p(&truth, 100.0, 0.01, 3000, 1, 5)
            .unwrap()
            .log_returns(0);
        let fit = calibrate(&series, &start(), &CalibrationBounds::default()).unwrap();
        let ll_truth = log_likelihood(&truth, &series, fit.sigma1).unwrap();
        assert!(fit.log_likelihood >= ll_truth - 1e-6);
        assert!(fit.params.is_stationary());
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let series = simulate_p(&GarchParams::default(), 100.0, 0.01, 1000, 1, 8)
            .unwrap()
            .log_returns(0);
        let bounds = CalibrationBounds {
            max_iter: 1,
            ..CalibrationBounds::default()
        };
        match calibrate(&series, &start(), &bounds) {
            Err(Error::NoConvergence {
                best, best_loglik, ..
            }) => {
                assert!(best_loglik.is_finite());
                assert!(best.validate().is_ok());
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }
}
