//! GJR-GARCH(1,1) market: variance recursion, path simulation under the
//! physical (P) and risk-neutral (Q) measures, and Gaussian likelihood.
//!
//! Under P the daily log-return is `R_t = mu + sigma_t * eps_t` and
//!
//! ```text
//! sigma2_{t+1} = omega + sigma2_t * (alpha + gamma * 1{eps_t < 0}) * eps_t^2 + beta * sigma2_t
//! ```
//!
//! Under Q the return drift becomes `(r - q) * lambda - sigma2_t / 2` and the
//! variance recursion is driven by the shifted innovation `eps~_t - eta_t`
//! with `eta_t = (mu - (r - q) * lambda + sigma2_t / 2) / sigma_t`.

mod calibrate;
mod pathset;

pub use calibrate::{calibrate, Calibration, CalibrationBounds};
pub use pathset::{read_returns_csv, Measure, PathSet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::rng::{InnovationSource, SeededNormal};

/// Trading days per year; one simulation step is `1 / TRADING_DAYS` years.
pub const TRADING_DAYS: f64 = 252.0;

/// Physical-measure GJR-GARCH(1,1) coefficients plus market constants.
///
/// `mu` and `omega` are daily quantities in decimal units, `r` and `q` are
/// annualized continuously compounded rates, `lambda` is the step length in
/// years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub mu: f64,
    pub omega: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub r: f64,
    pub q: f64,
    pub lambda: f64,
}

impl Default for GarchParams {
    /// S&P 500 estimates (2016-2020) with `omega` read as a daily variance
    /// of 1e-6, i.e. about 15.9% annualized unconditional volatility.
    ///
    /// The printed value "0.01%" taken as 1e-4 would imply roughly 159%
    /// annualized volatility and could not produce the reported ATM price of
    /// 3.16; 1e-6 does.
    fn default() -> Self {
        Self {
            mu: 0.0006,
            omega: 1e-6,
            alpha: 0.11,
            gamma: 0.20,
            beta: 0.78,
            r: 0.0266,
            q: 0.0177,
            lambda: 1.0 / TRADING_DAYS,
        }
    }
}

impl GarchParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mu", self.mu),
            ("omega", self.omega),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("r", self.r),
            ("q", self.q),
            ("lambda", self.lambda),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("GARCH parameter {name} = {v}")));
            }
        }
        ensure!(
            self.omega > 0.0,
            "omega must be positive, got {}",
            self.omega
        );
        ensure!(
            self.alpha >= 0.0,
            "alpha must be non-negative, got {}",
            self.alpha
        );
        ensure!(
            self.beta >= 0.0,
            "beta must be non-negative, got {}",
            self.beta
        );
        ensure!(
            self.alpha + self.gamma >= 0.0,
            "alpha + gamma must be non-negative, got {}",
            self.alpha + self.gamma
        );
        ensure!(
            self.lambda > 0.0,
            "lambda must be positive, got {}",
            self.lambda
        );
        Ok(())
    }

    /// `alpha + gamma / 2 + beta`.
    pub fn persistence(&self) -> f64 {
        self.alpha + 0.5 * self.gamma + self.beta
    }

    pub fn is_stationary(&self) -> bool {
        self.persistence() < 1.0
    }

    /// Unconditional daily variance, if the process is stationary.
    pub fn stationary_variance(&self) -> Option<f64> {
        self.is_stationary()
            .then(|| self.omega / (1.0 - self.persistence()))
    }

    pub fn stationary_vol(&self) -> Option<f64> {
        self.stationary_variance().map(f64::sqrt)
    }

    /// One-step discount factor `e^{-r lambda}`.
    pub fn discount(&self) -> f64 {
        (-self.r * self.lambda).exp()
    }

    /// One-step accrual `e^{r lambda}`.
    pub fn growth(&self) -> f64 {
        (self.r * self.lambda).exp()
    }

    /// One-step dividend factor `e^{q lambda}`.
    pub fn dividend_growth(&self) -> f64 {
        (self.q * self.lambda).exp()
    }

    /// Risk-neutral daily drift `(r - q) lambda` before the convexity term.
    pub fn carry(&self) -> f64 {
        (self.r - self.q) * self.lambda
    }

    /// Q-measure innovation shift `eta_t` for the given daily volatility.
    pub fn eta(&self, sigma: f64) -> f64 {
        (self.mu - self.carry() + 0.5 * sigma * sigma) / sigma
    }

    #[inline]
    pub(crate) fn variance_update(&self, sigma2: f64, eps: f64) -> f64 {
        let arch = if eps < 0.0 {
            self.alpha + self.gamma
        } else {
            self.alpha
        };
        self.omega + sigma2 * arch * eps * eps + self.beta * sigma2
    }
}

/// Next-day variance under P given today's variance and innovation.
pub fn step_variance_p(sigma2: f64, eps: f64, params: &GarchParams) -> Result<f64> {
    if !sigma2.is_finite() || !eps.is_finite() {
        return Err(Error::NonFinite(format!(
            "variance step inputs sigma2={sigma2}, eps={eps}"
        )));
    }
    ensure!(sigma2 > 0.0, "variance must be positive, got {sigma2}");
    Ok(params.variance_update(sigma2, eps))
}

/// Next-day variance under Q, driven by `eps_tilde - eta(sigma)`.
pub fn step_variance_q(sigma2: f64, eps_tilde: f64, params: &GarchParams) -> Result<f64> {
    if !sigma2.is_finite() || !eps_tilde.is_finite() {
        return Err(Error::NonFinite(format!(
            "variance step inputs sigma2={sigma2}, eps={eps_tilde}"
        )));
    }
    ensure!(sigma2 > 0.0, "variance must be positive, got {sigma2}");
    let shifted = eps_tilde - params.eta(sigma2.sqrt());
    Ok(params.variance_update(sigma2, shifted))
}

/// Advances one path by one day: returns `(log_return, next_variance)`.
#[inline]
pub(crate) fn advance(params: &GarchParams, measure: Measure, sigma2: f64, z: f64) -> (f64, f64) {
    let sigma = sigma2.sqrt();
    match measure {
        Measure::P => (params.mu + sigma * z, params.variance_update(sigma2, z)),
        Measure::Q => {
            let ret = params.carry() - 0.5 * sigma2 + sigma * z;
            let shifted = z - (params.mu - params.carry() + 0.5 * sigma2) / sigma;
            (ret, params.variance_update(sigma2, shifted))
        }
    }
}

/// Shape and initial state of a simulation request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub s0: f64,
    pub sigma1: f64,
    pub steps: usize,
    pub n_paths: usize,
}

fn check_sim(params: &GarchParams, spec: &SimSpec) -> Result<()> {
    params.validate()?;
    ensure!(spec.steps >= 1, "need at least one step");
    ensure!(spec.n_paths >= 1, "need at least one path");
    ensure!(
        spec.s0 > 0.0 && spec.s0.is_finite(),
        "initial price must be positive, got {}",
        spec.s0
    );
    ensure!(
        spec.sigma1 > 0.0 && spec.sigma1.is_finite(),
        "initial volatility must be positive, got {}",
        spec.sigma1
    );
    if !params.is_stationary() {
        log::warn!(
            "GARCH persistence {:.4} >= 1: process is not covariance stationary",
            params.persistence()
        );
    }
    Ok(())
}

/// Simulates paths under `measure` with an explicit innovation source.
///
/// `seed` is recorded as metadata only; the draws come from `source`.
pub fn simulate_with(
    params: &GarchParams,
    measure: Measure,
    spec: SimSpec,
    seed: u64,
    source: &dyn InnovationSource,
) -> Result<PathSet> {
    check_sim(params, &spec)?;
    let width = spec.steps + 1;
    let mut prices = vec![0.0; spec.n_paths * width];
    let mut vols = vec![0.0; spec.n_paths * width];

    use rayon::prelude::*;
    prices
        .par_chunks_mut(width)
        .zip(vols.par_chunks_mut(width))
        .enumerate()
        .for_each_init(
            || vec![0.0; spec.steps],
            |z, (path, (p_row, v_row))| {
                source.fill(path, z);
                let mut log_s = spec.s0.ln();
                let mut sigma2 = spec.sigma1 * spec.sigma1;
                p_row[0] = spec.s0;
                v_row[0] = spec.sigma1;
                for t in 0..spec.steps {
                    let (ret, next) = advance(params, measure, sigma2, z[t]);
                    log_s += ret;
                    sigma2 = next;
                    p_row[t + 1] = log_s.exp();
                    v_row[t + 1] = sigma2.sqrt();
                }
            },
        );

    PathSet::from_raw(
        measure,
        seed,
        spec.s0,
        spec.sigma1,
        spec.n_paths,
        spec.steps,
        prices,
        vols,
    )
}

/// Physical-measure paths with Gaussian innovations from per-path streams.
pub fn simulate_p(
    params: &GarchParams,
    s0: f64,
    sigma1: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    let spec = SimSpec {
        s0,
        sigma1,
        steps,
        n_paths,
    };
    simulate_with(params, Measure::P, spec, seed, &SeededNormal { seed })
}

/// Risk-neutral paths with Gaussian innovations from per-path streams.
pub fn simulate_q(
    params: &GarchParams,
    s0: f64,
    sigma1: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet> {
    let spec = SimSpec {
        s0,
        sigma1,
        steps,
        n_paths,
    };
    simulate_with(params, Measure::Q, spec, seed, &SeededNormal { seed })
}

/// Gaussian GJR-GARCH log-likelihood of `returns`, filtering the variance
/// forward from `sigma1`.
pub fn log_likelihood(params: &GarchParams, returns: &[f64], sigma1: f64) -> Result<f64> {
    ensure!(!returns.is_empty(), "return series is empty");
    ensure!(
        sigma1 > 0.0 && sigma1.is_finite(),
        "initial volatility must be positive, got {sigma1}"
    );
    if let Some(bad) = returns.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!(
            "return #{bad} = {}",
            returns[bad]
        )));
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut sigma2 = sigma1 * sigma1;
    let mut ll = 0.0;
    for (t, &ret) in returns.iter().enumerate() {
        if sigma2.is_nan() || sigma2 <= 0.0 || !sigma2.is_finite() {
            return Err(Error::NonFinite(format!(
                "filtered variance {sigma2} at observation {t}"
            )));
        }
        let resid = ret - params.mu;
        ll -= 0.5 * (ln_2pi + sigma2.ln()) + resid * resid / (2.0 * sigma2);
        let eps = resid / sigma2.sqrt();
        sigma2 = params.variance_update(sigma2, eps);
    }
    Ok(ll)
}
