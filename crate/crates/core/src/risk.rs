//! Empirical VaR / CVaR estimators and the statistical-arbitrage test.
//!
//! `VaR_alpha` is the `ceil(alpha * N)`-th order statistic of the sample
//! (ascending, 1-indexed) and
//!
//! ```text
//! CVaR_alpha = VaR_alpha + 1 / ((1 - alpha) N) * sum_i max(x_i - VaR_alpha, 0)
//! ```
//!
//! The same estimator is the training objective and the reporting metric.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

fn check(sample: &[f64], alpha: f64) -> Result<()> {
    ensure!(
        !sample.is_empty(),
        "risk estimator needs a non-empty sample"
    );
    ensure!(
        alpha > 0.0 && alpha < 1.0,
        "confidence level must lie in (0, 1), got {alpha}"
    );
    ensure!(
        sample.iter().all(|x| x.is_finite()),
        "risk estimator sample contains non-finite values"
    );
    Ok(())
}

/// 1-indexed rank `ceil(alpha * n)` of the VaR order statistic.
///
/// Products within 1e-9 of an integer snap to it, so `0.07 * 100` is rank 7
/// rather than 8.
pub fn var_rank(n: usize, alpha: f64) -> usize {
    let x = alpha * n as f64;
    let nearest = x.round();
    let rank = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (rank as usize).clamp(1, n)
}

/// Sample indices sorted ascending by value; ties keep input order.
fn ascending_order(sample: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sample.len()).collect();
    order.sort_by(|&a, &b| sample[a].total_cmp(&sample[b]));
    order
}

pub fn var_hat(sample: &[f64], alpha: f64) -> Result<f64> {
    check(sample, alpha)?;
    let order = ascending_order(sample);
    Ok(sample[order[var_rank(sample.len(), alpha) - 1]])
}

pub fn cvar_hat(sample: &[f64], alpha: f64) -> Result<f64> {
    let var = var_hat(sample, alpha)?;
    Ok(cvar_at(sample, alpha, var))
}

fn cvar_at(sample: &[f64], alpha: f64, var: f64) -> f64 {
    let excess: f64 = sample.iter().map(|&x| (x - var).max(0.0)).sum();
    var + excess / ((1.0 - alpha) * sample.len() as f64)
}

/// CVaR estimate together with its derivative with respect to each sample.
///
/// Samples strictly above VaR get weight `1 / ((1 - alpha) N)`; the sample
/// that is the VaR order statistic gets `1 - m / ((1 - alpha) N)` where `m`
/// is the number of strict exceedances; all others get zero. Ties with the
/// VaR value route the whole VaR term through the order-statistic sample.
pub fn cvar_with_weights(sample: &[f64], alpha: f64) -> Result<(f64, Vec<f64>)> {
    check(sample, alpha)?;
    let n = sample.len();
    let order = ascending_order(sample);
    let var_index = order[var_rank(n, alpha) - 1];
    let var = sample[var_index];
    let tail = 1.0 / ((1.0 - alpha) * n as f64);
    let mut weights = vec![0.0; n];
    let mut exceed = 0usize;
    for (w, &x) in weights.iter_mut().zip(sample) {
        if x > var {
            *w = tail;
            exceed += 1;
        }
    }
    weights[var_index] = 1.0 - exceed as f64 * tail;
    Ok((cvar_at(sample, alpha, var), weights))
}

/// Risk summary of one loss (or P&L) vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub strategy_tag: String,
    pub alpha: f64,
    pub var_hat: f64,
    pub cvar_hat: f64,
    pub mean: f64,
    pub n: usize,
    /// Only meaningful when the report was built from a zero-capital P&L.
    pub is_stat_arb: bool,
}

impl RiskReport {
    /// Report on a loss sample (e.g. hedging errors).
    pub fn from_losses(tag: &str, losses: &[f64], alpha: f64) -> Result<Self> {
        let var = var_hat(losses, alpha)?;
        let cvar = cvar_at(losses, alpha, var);
        Ok(Self {
            strategy_tag: tag.to_string(),
            alpha,
            var_hat: var,
            cvar_hat: cvar,
            mean: mean(losses),
            n: losses.len(),
            is_stat_arb: false,
        })
    }

    /// Report on a zero-capital terminal P&L; risk is measured on `-pnl` and
    /// `mean` is the mean P&L.
    pub fn from_pnl(tag: &str, pnl: &[f64], alpha: f64) -> Result<Self> {
        let verdict = stat_arb_verdict(pnl, alpha)?;
        let losses: Vec<f64> = pnl.iter().map(|v| -v).collect();
        Ok(Self {
            strategy_tag: tag.to_string(),
            alpha,
            var_hat: var_hat(&losses, alpha)?,
            cvar_hat: verdict.rho,
            mean: verdict.mean,
            n: pnl.len(),
            is_stat_arb: verdict.is_stat_arb,
        })
    }

    pub const CSV_HEADER: &'static str = "strategy,alpha,var_hat,cvar_hat,mean,n,is_stat_arb";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            self.strategy_tag,
            self.alpha,
            self.var_hat,
            self.cvar_hat,
            self.mean,
            self.n,
            self.is_stat_arb
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatArbVerdict {
    /// `CVaR_alpha(-pnl)`.
    pub rho: f64,
    pub mean: f64,
    pub is_stat_arb: bool,
}

/// A zero-capital strategy is a statistical arbitrage when the risk of its
/// negated terminal value is strictly negative.
pub fn stat_arb_verdict(pnl: &[f64], alpha: f64) -> Result<StatArbVerdict> {
    let losses: Vec<f64> = pnl.iter().map(|v| -v).collect();
    let rho = cvar_hat(&losses, alpha)?;
    Ok(StatArbVerdict {
        rho,
        mean: mean(pnl),
        is_stat_arb: rho < 0.0,
    })
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
