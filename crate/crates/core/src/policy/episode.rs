//! Empirical CVaR of the hedging error over a batch of paths, and its exact
//! gradient with respect to the network parameters.
//!
//! The gradient flows backwards through every rebalancing date: the position
//! at `t` changes `V_{t+1}`, which is both the next cap `(V + B) / S` and the
//! first input feature of the next network evaluation.

use std::ops::Range;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::{capped, Dense, PolicyNetwork, HIDDEN_LAYERS};
use crate::error::{Error, Result};
use crate::garch::{GarchParams, PathSet};
use crate::hedge::{portfolio_step, rollout, Contract};
use crate::risk::{cvar_hat, cvar_with_weights};

/// Paths per forward/backward work unit. Fixed so that gradient reduction
/// order does not depend on the thread count.
const CHUNK: usize = 250;

#[derive(Debug, Clone)]
pub struct EpisodeGradient {
    /// Batch CVaR of the hedging error.
    pub loss: f64,
    /// Gradient in [`PolicyNetwork::flat_params`] order.
    pub gradient: Vec<f64>,
    pub terminal_errors: Vec<f64>,
    /// Share of (path, step) decisions where the leverage cap bound.
    pub capped_fraction: f64,
    /// Hash of every ReLU pattern, cap branch and the CVaR order statistic.
    /// Two parameter vectors with equal fingerprints lie in the same smooth
    /// piece of the loss.
    pub activation_fingerprint: u64,
}

struct StepTape {
    x: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    raw_branch: Vec<bool>,
}

struct ChunkTape {
    rows: Range<usize>,
    steps: Vec<StepTape>,
    terminal_errors: Vec<f64>,
}

fn forward_chunk(
    net: &PolicyNetwork,
    paths: &PathSet,
    rows: Range<usize>,
    contract: &Contract,
    params: &GarchParams,
) -> Result<ChunkTape> {
    let growth = params.growth();
    let div = params.dividend_growth();
    let n = rows.len();
    let mut values = vec![contract.v0; n];
    let mut steps = Vec::with_capacity(contract.steps);
    let mut prices = vec![0.0; n];
    let mut vols = vec![0.0; n];
    for t in 0..contract.steps {
        for (k, i) in rows.clone().enumerate() {
            prices[k] = paths.price(i, t);
            vols[k] = paths.vol(i, t);
        }
        let x = net.feature_rows(&values, &prices, &vols, contract.steps - t);
        let mut hidden = Vec::with_capacity(HIDDEN_LAYERS);
        let raw = net.raw_output(x.view(), Some(&mut hidden));
        let mut raw_branch = vec![false; n];
        for (k, i) in rows.clone().enumerate() {
            let delta = capped(raw[k], values[k], prices[k], net.leverage_bound);
            if !delta.is_finite() {
                return Err(Error::NonFinitePosition { path: i, step: t });
            }
            raw_branch[k] = raw[k] < (values[k] + net.leverage_bound) / prices[k];
            values[k] = portfolio_step(
                values[k],
                delta,
                prices[k],
                paths.price(i, t + 1),
                growth,
                div,
            );
        }
        steps.push(StepTape {
            x,
            hidden,
            raw_branch,
        });
    }
    let terminal_errors = rows
        .clone()
        .enumerate()
        .map(|(k, i)| contract.payoff(paths.price(i, contract.steps)) - values[k])
        .collect();
    Ok(ChunkTape {
        rows,
        steps,
        terminal_errors,
    })
}

fn zero_grads(net: &PolicyNetwork) -> Vec<Dense> {
    net.layers
        .iter()
        .map(|l| Dense {
            weights: Array2::zeros(l.weights.raw_dim()),
            bias: Array1::zeros(l.bias.len()),
        })
        .collect()
}

/// Reverse sweep for one chunk given `dL/dxi` per path.
fn backward_chunk(
    net: &PolicyNetwork,
    paths: &PathSet,
    tape: &ChunkTape,
    loss_weights: &[f64],
    params: &GarchParams,
) -> Vec<Dense> {
    let growth = params.growth();
    let div = params.dividend_growth();
    let n = tape.rows.len();
    let mut grads = zero_grads(net);
    // dL/dV_t, starting from dL/dV_T = -dL/dxi.
    let mut lam: Vec<f64> = loss_weights.iter().map(|w| -w).collect();
    let value_scale = net.features.scale[0];
    let mut dz = Array1::<f64>::zeros(n);

    for (t, step) in tape.steps.iter().enumerate().rev() {
        let mut any_raw = false;
        for (k, i) in tape.rows.clone().enumerate() {
            let s_now = paths.price(i, t);
            let gain = div * paths.price(i, t + 1) - growth * s_now;
            let d_delta = lam[k] * gain;
            lam[k] *= growth;
            if step.raw_branch[k] {
                dz[k] = d_delta;
                any_raw |= d_delta != 0.0;
            } else {
                dz[k] = 0.0;
                lam[k] += d_delta / s_now;
            }
        }
        if !any_raw {
            continue;
        }

        // Output layer.
        let top = &step.hidden[HIDDEN_LAYERS - 1];
        {
            let g = &mut grads[HIDDEN_LAYERS];
            let gw = dz.view().insert_axis(Axis(0)).dot(top);
            g.weights += &gw;
            g.bias[0] += dz.sum();
        }
        let mut d_hidden = dz
            .view()
            .insert_axis(Axis(1))
            .dot(&net.layers[HIDDEN_LAYERS].weights);

        for l in (0..HIDDEN_LAYERS).rev() {
            let h = &step.hidden[l];
            ndarray::Zip::from(&mut d_hidden).and(h).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            let input = if l == 0 {
                step.x.view()
            } else {
                step.hidden[l - 1].view()
            };
            let g = &mut grads[l];
            g.weights += &d_hidden.t().dot(&input);
            g.bias += &d_hidden.sum_axis(Axis(0));
            d_hidden = d_hidden.dot(&net.layers[l].weights);
        }
        // d_hidden now holds dL/dx for the standardized inputs; column 0 is V_t.
        for k in 0..n {
            lam[k] += d_hidden[[k, 0]] / value_scale;
        }
    }
    grads
}

fn fingerprint(tapes: &[ChunkTape], var_index: usize, weights: &[f64]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    let mut mix = |bit: bool| {
        h ^= bit as u64 + 1;
        h = h.wrapping_mul(PRIME);
    };
    for tape in tapes {
        for step in &tape.steps {
            step.raw_branch.iter().for_each(|&b| mix(b));
            for layer in &step.hidden {
                layer.iter().for_each(|&a| mix(a > 0.0));
            }
        }
    }
    weights.iter().for_each(|&w| mix(w > 0.0));
    h ^ var_index as u64
}

fn check_batch(paths: &PathSet, contract: &Contract) -> Result<()> {
    contract.validate()?;
    crate::error::ensure!(paths.n_paths() >= 2, "batch needs at least two paths");
    crate::error::ensure!(
        paths.steps() == contract.steps,
        "batch has {} steps, contract {}",
        paths.steps(),
        contract.steps
    );
    Ok(())
}

/// Batch CVaR of the hedging error and its gradient.
///
/// At ties with the VaR order statistic the subgradient documented on
/// [`cvar_with_weights`] is used.
pub fn episode_gradient(
    net: &PolicyNetwork,
    batch: &PathSet,
    contract: &Contract,
    params: &GarchParams,
    alpha: f64,
) -> Result<EpisodeGradient> {
    check_batch(batch, contract)?;
    let n = batch.n_paths();
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(CHUNK)
        .map(|start| start..(start + CHUNK).min(n))
        .collect();

    let tapes: Vec<ChunkTape> = ranges
        .into_par_iter()
        .map(|rows| forward_chunk(net, batch, rows, contract, params))
        .collect::<Result<_>>()?;

    let errors: Vec<f64> = tapes
        .iter()
        .flat_map(|t| t.terminal_errors.iter().copied())
        .collect();
    let (loss, weights) = cvar_with_weights(&errors, alpha)?;

    let partials: Vec<Vec<Dense>> = tapes
        .par_iter()
        .map(|tape| backward_chunk(net, batch, tape, &weights[tape.rows.clone()], params))
        .collect();

    let mut total = zero_grads(net);
    for part in &partials {
        for (acc, g) in total.iter_mut().zip(part) {
            acc.weights += &g.weights;
            acc.bias += &g.bias;
        }
    }
    let mut gradient = Vec::with_capacity(net.n_params());
    for g in &total {
        gradient.extend(g.weights.iter());
        gradient.extend(g.bias.iter());
    }

    let decisions = (n * contract.steps) as f64;
    let capped = tapes
        .iter()
        .flat_map(|t| t.steps.iter())
        .map(|s| s.raw_branch.iter().filter(|&&b| !b).count())
        .sum::<usize>() as f64;
    let var_index = weights
        .iter()
        .zip(&errors)
        .position(|(&w, _)| w != 0.0 && w != 1.0 / ((1.0 - alpha) * n as f64))
        .unwrap_or(usize::MAX);

    Ok(EpisodeGradient {
        loss,
        gradient,
        activation_fingerprint: fingerprint(&tapes, var_index, &weights),
        terminal_errors: errors,
        capped_fraction: capped / decisions,
    })
}

/// Batch CVaR of the hedging error from a plain rollout (no tape).
pub fn episode_loss(
    net: &PolicyNetwork,
    batch: &PathSet,
    contract: &Contract,
    params: &GarchParams,
    alpha: f64,
) -> Result<f64> {
    check_batch(batch, contract)?;
    let ledger = rollout(net, batch, contract, params)?;
    cvar_hat(&ledger.terminal_error, alpha)
}
