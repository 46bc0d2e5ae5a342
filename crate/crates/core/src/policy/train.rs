//! Mini-batch ADAM training of the hedging network on the batch CVaR loss.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{episode_gradient, episode_loss, AdamState, PolicyNetwork};
use crate::error::{ensure, Error, Result};
use crate::garch::{GarchParams, Measure, PathSet};
use crate::hedge::Contract;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Index of the first epoch to run; non-zero when resuming.
    pub start_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            learning_rate: 5e-4,
            epochs: 10,
            alpha: 0.95,
            seed: 0,
            start_epoch: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    pub valid_cvar: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation CVaR, the starting network included.
    pub best: PolicyNetwork,
    pub best_valid_cvar: f64,
    /// `None` when the starting network was never beaten.
    pub best_epoch: Option<usize>,
    pub last: PolicyNetwork,
    pub adam: AdamState,
    pub log: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str = "epoch,train_loss,valid_cvar,wall_time";

pub fn write_log_csv(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for r in log {
        out.push_str(&format!(
            "{},{:.10e},{:.10e},{:.3}\n",
            r.epoch, r.train_loss, r.valid_cvar, r.wall_time
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Permutation of the training rows used in `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Trains `net` in place of a copy and returns the best and final networks.
///
/// Passing the `adam` state and `log` of an interrupted run together with
/// `config.start_epoch` continues it exactly.
pub fn train(
    net: PolicyNetwork,
    adam: Option<AdamState>,
    train_paths: &PathSet,
    valid_paths: &PathSet,
    contract: &Contract,
    params: &GarchParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    net.validate()?;
    ensure!(
        train_paths.measure() == Measure::P,
        "training paths must be P-measure"
    );
    ensure!(config.batch_size >= 2, "batch size must be at least 2");
    ensure!(
        train_paths.n_paths() >= config.batch_size,
        "{} training paths cannot fill a batch of {}",
        train_paths.n_paths(),
        config.batch_size
    );
    ensure!(
        config.learning_rate > 0.0 && config.learning_rate.is_finite(),
        "learning rate must be positive"
    );
    ensure!(
        config.alpha > 0.0 && config.alpha < 1.0,
        "alpha must lie in (0, 1)"
    );
    ensure!(
        config.start_epoch <= config.epochs,
        "start epoch beyond epoch count"
    );

    let mut adam = adam.unwrap_or_else(|| AdamState::new(net.n_params(), config.learning_rate));
    ensure!(
        adam.m.len() == net.n_params(),
        "optimizer state does not match network size"
    );

    let mut current = net.clone();
    let mut best = net;
    let mut best_valid_cvar = episode_loss(&best, valid_paths, contract, params, config.alpha)?;
    let mut best_epoch = None;
    let mut log = Vec::new();
    let mut theta = current.flat_params();
    let batches = train_paths.n_paths() / config.batch_size;

    for epoch in config.start_epoch..config.epochs {
        let started = Instant::now();
        let order = epoch_order(train_paths.n_paths(), config.seed, epoch);
        let mut loss_sum = 0.0;
        for (b, rows) in order
            .chunks_exact(config.batch_size)
            .take(batches)
            .enumerate()
        {
            let batch = train_paths.select(rows);
            let g = episode_gradient(&current, &batch, contract, params, config.alpha)?;
            if !g.loss.is_finite() || g.gradient.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("loss {}", g.loss),
                });
            }
            loss_sum += g.loss;
            adam.update(&mut theta, &g.gradient)?;
            current.set_flat_params(&theta);
        }
        let valid_cvar = episode_loss(&current, valid_paths, contract, params, config.alpha)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            valid_cvar,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} valid {:.5} ({:.1}s)",
            record.train_loss,
            valid_cvar,
            record.wall_time
        );
        log.push(record);
        if valid_cvar < best_valid_cvar {
            best_valid_cvar = valid_cvar;
            best = current.clone();
            best_epoch = Some(epoch);
        }
    }

    Ok(TrainOutcome {
        best,
        best_valid_cvar,
        best_epoch,
        last: current,
        adam,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::simulate_p;
    use crate::policy::{glorot_init, FeatureStats};

    fn fixture() -> (PolicyNetwork, PathSet, PathSet, Contract, GarchParams) {
        let params = GarchParams::default();
        let train = simulate_p(&params, 100.0, 0.01, 10, 400, 1).unwrap();
        let valid = simulate_p(&params, 100.0, 0.01, 10, 200, 2).unwrap();
        let contract = Contract {
            strike: 100.0,
            steps: 10,
            v0: 1.3,
        };
        let mut net = glorot_init(9);
        net.features = FeatureStats::from_paths(&train, contract.v0);
        (net, train, valid, contract, params)
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 100,
            learning_rate: 1e-3,
            epochs,
            alpha: 0.9,
            seed: 5,
            start_epoch: 0,
        }
    }

    #[test]
    fn zero_epochs_returns_the_input_network() {
        let (net, train_p, valid, contract, params) = fixture();
        let out = train(
            net.clone(),
            None,
            &train_p,
            &valid,
            &contract,
            &params,
            &config(0),
        )
        .unwrap();
        assert_eq!(out.best, net);
        assert_eq!(out.last, net);
        assert!(out.log.is_empty());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (net, train_p, valid, contract, params) = fixture();
        let start = episode_loss(&net, &valid, &contract, &params, 0.9).unwrap();
        let a = train(
            net.clone(),
            None,
            &train_p,
            &valid,
            &contract,
            &params,
            &config(6),
        )
        .unwrap();
        let b = train(net, None, &train_p, &valid, &contract, &params, &config(6)).unwrap();
        assert!(a.best_valid_cvar <= start);
        assert_eq!(a.last, b.last);
        assert_eq!(a.log.len(), 6);
        assert_eq!(a.adam.step, 6 * 4);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let (net, train_p, valid, contract, params) = fixture();
        let full = train(
            net.clone(),
            None,
            &train_p,
            &valid,
            &contract,
            &params,
            &config(4),
        )
        .unwrap();
        let first = train(net, None, &train_p, &valid, &contract, &params, &config(2)).unwrap();
        let mut rest_cfg = config(4);
        rest_cfg.start_epoch = 2;
        let rest = train(
            first.last,
            Some(first.adam),
            &train_p,
            &valid,
            &contract,
            &params,
            &rest_cfg,
        )
        .unwrap();
        assert_eq!(rest.last, full.last);
        assert_eq!(rest.log[1].valid_cvar, full.log[3].valid_cvar);
    }

    #[test]
    fn rejects_q_paths_and_oversized_batches() {
        let (net, _, valid, contract, params) = fixture();
        let q = crate::garch::simulate_q(&params, 100.0, 0.01, 10, 200, 3).unwrap();
        assert!(train(
            net.clone(),
            None,
            &q,
            &valid,
            &contract,
            &params,
            &config(1)
        )
        .is_err());
        let mut cfg = config(1);
        cfg.batch_size = 1000;
        assert!(train(net, None, &valid, &valid, &contract, &params, &cfg).is_err());
    }

    #[test]
    fn log_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log_csv(
            &path,
            &[EpochRecord {
                epoch: 0,
                train_loss: 1.0,
                valid_cvar: 2.0,
                wall_time: 0.5,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with(LOG_HEADER));
        assert_eq!(text.lines().count(), 2);
    }
}
