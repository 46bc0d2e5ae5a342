//! Self-financing hedging rollouts.
//!
//! With `a = e^{r lambda}` and `d = e^{q lambda}`, a position `delta_{t+1}`
//! chosen at `t` and held over `(t, t+1]` moves the portfolio value by
//!
//! ```text
//! V_{t+1} = a V_t + delta_{t+1} (d S_{t+1} - a S_t)
//! ```
//!
//! which is the one-step form of `V_t = beta^{-t} (V_0 + G_t)`. Training uses
//! the same step through [`portfolio_step`].

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::binio::{BinReader, BinWriter};
use crate::error::{ensure, Error, Result};
use crate::garch::{GarchParams, PathSet};
use crate::pricer::DeltaSurface;

/// European call being hedged from the short side.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Contract {
    pub strike: f64,
    pub steps: usize,
    /// Initial hedge capital, normally the call price.
    pub v0: f64,
}

impl Contract {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.strike > 0.0,
            "strike must be positive, got {}",
            self.strike
        );
        ensure!(self.steps >= 1, "maturity must be at least one step");
        ensure!(
            self.v0 >= 0.0 && self.v0.is_finite(),
            "initial capital must be non-negative, got {}",
            self.v0
        );
        Ok(())
    }

    pub fn payoff(&self, s_t: f64) -> f64 {
        (s_t - self.strike).max(0.0)
    }
}

#[inline]
pub(crate) fn portfolio_step(
    v: f64,
    delta: f64,
    s_now: f64,
    s_next: f64,
    growth: f64,
    div: f64,
) -> f64 {
    growth * v + delta * (div * s_next - growth * s_now)
}

/// Time-`t` information handed to a strategy, one entry per path.
#[derive(Debug, Clone, Copy)]
pub struct StepState<'a> {
    pub t: usize,
    /// Days to maturity, `T - t`.
    pub tau: usize,
    /// Pre-rebalancing portfolio value `V_t` of the strategy's own account.
    pub values: &'a [f64],
    pub prices: &'a [f64],
    /// `sigma_{t+1}`, known at `t`.
    pub vols: &'a [f64],
}

/// A rule mapping time-`t` state to the position `delta_{t+1}`.
///
/// Strategies only ever see time-`t` information, so positions are
/// predictable by construction.
pub trait HedgeStrategy: Sync {
    fn tag(&self) -> String;

    fn positions(&self, state: &StepState<'_>, out: &mut [f64]) -> Result<()>;
}

/// Delta hedging with deltas read off a precomputed surface.
impl HedgeStrategy for DeltaSurface {
    fn tag(&self) -> String {
        "delta".into()
    }

    fn positions(&self, state: &StepState<'_>, out: &mut [f64]) -> Result<()> {
        for ((o, &s), &v) in out.iter_mut().zip(state.prices).zip(state.vols) {
            *o = self.lookup(s, v, state.tau)?;
        }
        Ok(())
    }
}

/// Strategy defined by a closure over the step state.
pub struct FnStrategy<F> {
    pub tag: String,
    pub rule: F,
}

impl<F> FnStrategy<F>
where
    F: Fn(&StepState<'_>, &mut [f64]) + Sync,
{
    pub fn new(tag: &str, rule: F) -> Self {
        Self {
            tag: tag.to_string(),
            rule,
        }
    }
}

impl<F> HedgeStrategy for FnStrategy<F>
where
    F: Fn(&StepState<'_>, &mut [f64]) + Sync,
{
    fn tag(&self) -> String {
        self.tag.clone()
    }

    fn positions(&self, state: &StepState<'_>, out: &mut [f64]) -> Result<()> {
        (self.rule)(state, out);
        Ok(())
    }
}

/// Holds the same number of shares at every step.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPosition(pub f64);

impl HedgeStrategy for ConstantPosition {
    fn tag(&self) -> String {
        format!("constant({})", self.0)
    }

    fn positions(&self, _state: &StepState<'_>, out: &mut [f64]) -> Result<()> {
        out.fill(self.0);
        Ok(())
    }
}

/// Per-path record of one strategy over a path set.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLedger {
    pub strategy_tag: String,
    /// `positions[[i, t]]` is `delta_{t+1}`, held over `(t, t+1]`.
    pub positions: Array2<f64>,
    /// `values[[i, t]]` is `V_t`.
    pub values: Array2<f64>,
    pub terminal_value: Vec<f64>,
    /// `max(S_T - K, 0) - V_T`.
    pub terminal_error: Vec<f64>,
}

fn check_alignment(paths: &PathSet, contract: &Contract) -> Result<()> {
    contract.validate()?;
    ensure!(
        paths.steps() == contract.steps,
        "path set has {} steps but the contract matures after {}",
        paths.steps(),
        contract.steps
    );
    Ok(())
}

/// Rolls `strategy` through the self-financing recursion on every path.
pub fn rollout(
    strategy: &dyn HedgeStrategy,
    paths: &PathSet,
    contract: &Contract,
    params: &GarchParams,
) -> Result<EpisodeLedger> {
    check_alignment(paths, contract)?;
    let n = paths.n_paths();
    let steps = contract.steps;
    let growth = params.growth();
    let div = params.dividend_growth();

    let mut positions = Array2::zeros((n, steps));
    let mut values = Array2::zeros((n, steps + 1));
    values.column_mut(0).fill(contract.v0);

    let mut v_now = vec![contract.v0; n];
    let mut delta = vec![0.0; n];
    for t in 0..steps {
        let s_now = paths.prices().column(t).to_vec();
        let vol_now = paths.vols().column(t).to_vec();
        let state = StepState {
            t,
            tau: steps - t,
            values: &v_now,
            prices: &s_now,
            vols: &vol_now,
        };
        strategy.positions(&state, &mut delta)?;
        if let Some(path) = delta.iter().position(|d| !d.is_finite()) {
            return Err(Error::NonFinitePosition { path, step: t });
        }
        for i in 0..n {
            let s_next = paths.price(i, t + 1);
            v_now[i] = portfolio_step(v_now[i], delta[i], s_now[i], s_next, growth, div);
            positions[[i, t]] = delta[i];
            values[[i, t + 1]] = v_now[i];
        }
    }
    Ok(finish_ledger(
        strategy.tag(),
        positions,
        values,
        paths,
        contract,
    ))
}

/// Rolls an exogenous position matrix (`[n_paths x T]`) from capital `v0`.
pub fn rollout_positions(
    tag: &str,
    positions: &Array2<f64>,
    paths: &PathSet,
    contract: &Contract,
    params: &GarchParams,
) -> Result<EpisodeLedger> {
    check_alignment(paths, contract)?;
    ensure!(
        positions.dim() == (paths.n_paths(), contract.steps),
        "position matrix shape {:?} does not match paths ({}, {})",
        positions.dim(),
        paths.n_paths(),
        contract.steps
    );
    let growth = params.growth();
    let div = params.dividend_growth();
    let mut values = Array2::zeros((paths.n_paths(), contract.steps + 1));
    for i in 0..paths.n_paths() {
        let mut v = contract.v0;
        values[[i, 0]] = v;
        for t in 0..contract.steps {
            let d = positions[[i, t]];
            if !d.is_finite() {
                return Err(Error::NonFinitePosition { path: i, step: t });
            }
            v = portfolio_step(v, d, paths.price(i, t), paths.price(i, t + 1), growth, div);
            values[[i, t + 1]] = v;
        }
    }
    Ok(finish_ledger(
        tag.to_string(),
        positions.clone(),
        values,
        paths,
        contract,
    ))
}

fn finish_ledger(
    tag: String,
    positions: Array2<f64>,
    values: Array2<f64>,
    paths: &PathSet,
    contract: &Contract,
) -> EpisodeLedger {
    let steps = contract.steps;
    let terminal_value = values.column(steps).to_vec();
    let terminal_error = hedging_error_raw(&terminal_value, contract, paths);
    EpisodeLedger {
        strategy_tag: tag,
        positions,
        values,
        terminal_value,
        terminal_error,
    }
}

fn hedging_error_raw(terminal_value: &[f64], contract: &Contract, paths: &PathSet) -> Vec<f64> {
    terminal_value
        .iter()
        .enumerate()
        .map(|(i, v)| contract.payoff(paths.price(i, contract.steps)) - v)
        .collect()
}

/// Per-path hedging error `max(S_T - K, 0) - V_T`.
pub fn hedging_error(
    ledger: &EpisodeLedger,
    contract: &Contract,
    paths: &PathSet,
) -> Result<Vec<f64>> {
    ensure!(
        ledger.terminal_value.len() == paths.n_paths() && paths.steps() == contract.steps,
        "ledger, contract and paths are not aligned"
    );
    Ok(hedging_error_raw(&ledger.terminal_value, contract, paths))
}

impl EpisodeLedger {
    pub fn n_paths(&self) -> usize {
        self.positions.nrows()
    }

    /// Largest discrepancy between stored `V_t` and an independent evaluation
    /// of `beta^{-t} (V_0 + G_t)` with discounted gains, relative to
    /// `max(|V_t|, S_0)`.
    pub fn self_financing_error(&self, paths: &PathSet, params: &GarchParams) -> f64 {
        let beta = params.discount();
        let div = params.dividend_growth();
        let steps = self.positions.ncols();
        let mut worst = 0.0f64;
        for i in 0..self.n_paths() {
            let v0 = self.values[[i, 0]];
            let mut gain = 0.0;
            for t in 1..=steps {
                let bt = beta.powi(t as i32);
                let bt1 = beta.powi(t as i32 - 1);
                gain += self.positions[[i, t - 1]]
                    * (bt * paths.price(i, t) * div - bt1 * paths.price(i, t - 1));
                let recomputed = (v0 + gain) / bt;
                let stored = self.values[[i, t]];
                let scale = stored.abs().max(paths.s0());
                worst = worst.max((stored - recomputed).abs() / scale);
            }
        }
        worst
    }

    /// Long CSV: `path_id,t,S_t,sigma,delta,V_t`; `delta` is the position
    /// chosen at `t` and is empty at maturity.
    pub fn to_csv(&self, paths: &PathSet) -> String {
        let steps = self.positions.ncols();
        let mut out = String::from("path_id,t,S_t,sigma,delta,V_t\n");
        for i in 0..self.n_paths() {
            for t in 0..=steps {
                let delta = if t < steps {
                    self.positions[[i, t]].to_string()
                } else {
                    String::new()
                };
                let _ = writeln!(
                    out,
                    "{i},{t},{},{},{delta},{}",
                    paths.price(i, t),
                    paths.vol(i, t),
                    self.values[[i, t]]
                );
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path)?;
        w.magic(b"HLLG", 1)?;
        w.string(&self.strategy_tag)?;
        w.u64(self.n_paths() as u64)?;
        w.u64(self.positions.ncols() as u64)?;
        w.f64s(self.positions.as_standard_layout().as_slice().unwrap())?;
        w.f64s(self.values.as_standard_layout().as_slice().unwrap())?;
        w.f64s(&self.terminal_value)?;
        w.f64s(&self.terminal_error)?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        r.expect_magic(b"HLLG", 1)?;
        let strategy_tag = r.string(1 << 16)?;
        let n = r.usize(1 << 32)?;
        let steps = r.usize(1 << 20)?;
        let positions = Array2::from_shape_vec((n, steps), r.f64s(n * steps)?)
            .map_err(|e| r.bad(e.to_string()))?;
        let values = Array2::from_shape_vec((n, steps + 1), r.f64s(n * (steps + 1))?)
            .map_err(|e| r.bad(e.to_string()))?;
        let terminal_value = r.f64s(n)?;
        let terminal_error = r.f64s(n)?;
        r.expect_eof()?;
        Ok(Self {
            strategy_tag,
            positions,
            values,
            terminal_value,
            terminal_error,
        })
    }
}

/// Position rule `delta_DH - Delta`, evaluated on two parallel base accounts.
pub struct DifferenceStrategy<'a> {
    deep: &'a dyn HedgeStrategy,
    delta: &'a dyn HedgeStrategy,
}

/// Base ledgers plus the zero-capital ledger of their difference.
#[derive(Debug, Clone)]
pub struct DifferenceOutcome {
    pub deep: EpisodeLedger,
    pub delta: EpisodeLedger,
    /// Positions `deep - delta` rolled from `V_0 = 0`. Its `terminal_error`
    /// is `-V_T`: the two option payoffs cancel.
    pub difference: EpisodeLedger,
}

pub fn difference_strategy<'a>(
    deep: &'a dyn HedgeStrategy,
    delta: &'a dyn HedgeStrategy,
) -> DifferenceStrategy<'a> {
    DifferenceStrategy { deep, delta }
}

impl DifferenceStrategy<'_> {
    pub fn tag(&self) -> String {
        format!("{}-minus-{}", self.deep.tag(), self.delta.tag())
    }

    /// Each base strategy sees its own account value; the difference
    /// positions are then rolled from zero capital.
    pub fn rollout(
        &self,
        paths: &PathSet,
        contract: &Contract,
        params: &GarchParams,
    ) -> Result<DifferenceOutcome> {
        let deep = rollout(self.deep, paths, contract, params)?;
        let delta = rollout(self.delta, paths, contract, params)?;
        let diff_positions = &deep.positions - &delta.positions;
        let zero = Contract {
            v0: 0.0,
            ..*contract
        };
        let mut difference = rollout_positions(&self.tag(), &diff_positions, paths, &zero, params)?;
        difference.terminal_error = difference.terminal_value.iter().map(|v| -v).collect();
        Ok(DifferenceOutcome {
            deep,
            delta,
            difference,
        })
    }
}
