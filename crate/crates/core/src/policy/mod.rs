//! Feed-forward hedging policy with a leverage-capped output.
//!
//! Inputs are the time-`t` features `(V_t, log S_t, sigma_{t+1}, tau)`,
//! affinely standardized; four ReLU layers of width 56 feed one affine
//! output `Z`, and the position is `min(Z, (V_t + B) / S_t)`, which keeps the
//! cash account `V_t - delta S_t` above `-B`.

mod adam;
mod episode;
mod train;

pub use adam::AdamState;
pub use episode::{episode_gradient, episode_loss, EpisodeGradient};
pub use train::{
    epoch_order, train, write_log_csv, EpochRecord, TrainConfig, TrainOutcome, LOG_HEADER,
};

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{read_json, write_json, BinReader, BinWriter};
use crate::error::{ensure, Error, Result};
use crate::garch::PathSet;
use crate::hedge::{HedgeStrategy, StepState};
use crate::rng::stream_rng;

pub const INPUT_DIM: usize = 4;
pub const HIDDEN_WIDTH: usize = 56;
pub const HIDDEN_LAYERS: usize = 4;
pub const DEFAULT_LEVERAGE_BOUND: f64 = 100.0;

/// Affine layer `y = W x + b` with `W` stored `[out x in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    /// Batched `X W^T + b` for rows of `x`.
    #[inline]
    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weights.t());
        y += &self.bias;
        y
    }
}

/// Per-feature location and scale used to standardize policy inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: [f64; INPUT_DIM],
    pub scale: [f64; INPUT_DIM],
}

impl Default for FeatureStats {
    fn default() -> Self {
        Self {
            mean: [0.0; INPUT_DIM],
            scale: [1.0; INPUT_DIM],
        }
    }
}

impl FeatureStats {
    /// Statistics from the states a rollout visits on `paths`.
    ///
    /// Log-price and volatility use their empirical mean and standard
    /// deviation over `t = 0..T-1`; time to maturity uses the moments of the
    /// uniform grid `1..=T`; portfolio value is centred at `v0` and scaled by
    /// the initial price.
    pub fn from_paths(paths: &PathSet, v0: f64) -> Self {
        let steps = paths.steps();
        let mut acc = [[0.0f64; 2]; 2];
        let mut count = 0.0;
        for i in 0..paths.n_paths() {
            for t in 0..steps {
                let ls = paths.price(i, t).ln();
                let vol = paths.vol(i, t);
                acc[0][0] += ls;
                acc[0][1] += ls * ls;
                acc[1][0] += vol;
                acc[1][1] += vol * vol;
                count += 1.0;
            }
        }
        let moments = |a: [f64; 2]| {
            let m = a[0] / count;
            let sd = (a[1] / count - m * m).max(0.0).sqrt();
            (m, if sd > 1e-12 { sd } else { 1.0 })
        };
        let (ls_mean, ls_sd) = moments(acc[0]);
        let (vol_mean, vol_sd) = moments(acc[1]);
        let t = steps as f64;
        let tau_sd = ((t * t - 1.0) / 12.0).sqrt();
        Self {
            mean: [v0, ls_mean, vol_mean, (t + 1.0) / 2.0],
            scale: [
                paths.s0(),
                ls_sd,
                vol_sd,
                if tau_sd > 0.0 { tau_sd } else { 1.0 },
            ],
        }
    }

    pub fn standardize(&self, raw: [f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        std::array::from_fn(|k| (raw[k] - self.mean[k]) / self.scale[k])
    }

    pub fn destandardize(&self, z: [f64; INPUT_DIM]) -> [f64; INPUT_DIM] {
        std::array::from_fn(|k| z[k] * self.scale[k] + self.mean[k])
    }
}

/// The hedging network `delta_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
    /// Maximum cash borrowing `B`, in currency units.
    pub leverage_bound: f64,
    pub features: FeatureStats,
}

/// Glorot-uniform network with leverage bound 100 and identity feature stats.
pub fn glorot_init(seed: u64) -> PolicyNetwork {
    PolicyNetwork::glorot(seed, DEFAULT_LEVERAGE_BOUND)
}

impl PolicyNetwork {
    /// Weights drawn uniform on `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot(seed: u64, leverage_bound: f64) -> Self {
        let mut dims = vec![INPUT_DIM];
        dims.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
        dims.push(1);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = stream_rng(seed, k as u64);
                let mut layer = Dense::zeros(fan_in, fan_out);
                layer
                    .weights
                    .mapv_inplace(|_| rng.gen_range(-bound..=bound));
                layer
            })
            .collect();
        Self {
            layers,
            leverage_bound,
            features: FeatureStats::default(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.layers.len() == HIDDEN_LAYERS + 1,
            "expected {} layers, found {}",
            HIDDEN_LAYERS + 1,
            self.layers.len()
        );
        let mut fan_in = INPUT_DIM;
        for (k, l) in self.layers.iter().enumerate() {
            let fan_out = if k == HIDDEN_LAYERS { 1 } else { HIDDEN_WIDTH };
            ensure!(
                l.fan_in() == fan_in && l.fan_out() == fan_out && l.bias.len() == fan_out,
                "layer {k} has shape {}x{}, expected {fan_out}x{fan_in}",
                l.fan_out(),
                l.fan_in()
            );
            fan_in = fan_out;
        }
        ensure!(
            self.leverage_bound > 0.0 && self.leverage_bound.is_finite(),
            "leverage bound must be positive"
        );
        ensure!(
            self.features
                .scale
                .iter()
                .all(|&s| s > 0.0 && s.is_finite()),
            "feature scales must be positive"
        );
        if !self.flat_params().iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(())
    }

    /// All parameters, layer by layer: row-major weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "parameter vector length");
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = flat[at];
                at += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[at];
                at += 1;
            }
        }
    }

    /// Standardized feature rows for one time step.
    pub(crate) fn feature_rows(
        &self,
        values: &[f64],
        prices: &[f64],
        vols: &[f64],
        tau: usize,
    ) -> Array2<f64> {
        let fs = &self.features;
        let n = values.len();
        let mut x = Array2::zeros((n, INPUT_DIM));
        let tau_z = (tau as f64 - fs.mean[3]) / fs.scale[3];
        for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
            row[0] = (values[i] - fs.mean[0]) / fs.scale[0];
            row[1] = (prices[i].ln() - fs.mean[1]) / fs.scale[1];
            row[2] = (vols[i] - fs.mean[2]) / fs.scale[2];
            row[3] = tau_z;
        }
        x
    }

    /// Raw outputs `Z` for standardized inputs. When `hidden` is given it
    /// receives the post-ReLU activations of each hidden layer.
    pub(crate) fn raw_output(
        &self,
        x: ArrayView2<'_, f64>,
        mut hidden: Option<&mut Vec<Array2<f64>>>,
    ) -> Array1<f64> {
        let mut h = self.layers[0].apply(x);
        h.mapv_inplace(|a| a.max(0.0));
        for layer in &self.layers[1..HIDDEN_LAYERS] {
            let next = {
                let mut a = layer.apply(h.view());
                a.mapv_inplace(|v| v.max(0.0));
                a
            };
            if let Some(store) = hidden.as_deref_mut() {
                store.push(std::mem::replace(&mut h, next));
            } else {
                h = next;
            }
        }
        let z = self.layers[HIDDEN_LAYERS]
            .apply(h.view())
            .column(0)
            .to_owned();
        if let Some(store) = hidden {
            store.push(h);
        }
        z
    }

    /// Writes the binary checkpoint and a `.json` metadata sidecar.
    pub fn save<M: Serialize>(&self, path: &Path, meta: &M) -> Result<()> {
        let mut w = BinWriter::create(path)?;
        w.magic(CKPT_MAGIC, CKPT_VERSION)?;
        w.u64(self.layers.len() as u64)?;
        for l in &self.layers {
            w.u64(l.fan_out() as u64)?;
            w.u64(l.fan_in() as u64)?;
        }
        for l in &self.layers {
            w.f64s(l.weights.as_standard_layout().as_slice().unwrap())?;
            w.f64s(l.bias.as_slice().unwrap())?;
        }
        w.f64s(&self.features.mean)?;
        w.f64s(&self.features.scale)?;
        w.f64(self.leverage_bound)?;
        w.finish()?;
        write_json(&path.with_extension("json"), meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        r.expect_magic(CKPT_MAGIC, CKPT_VERSION)?;
        let n_layers = r.usize(64)?;
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            dims.push((r.usize(1 << 16)?, r.usize(1 << 16)?));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for &(out, inp) in &dims {
            let weights = Array2::from_shape_vec((out, inp), r.f64s(out * inp)?)
                .map_err(|e| r.bad(e.to_string()))?;
            let bias = Array1::from(r.f64s(out)?);
            layers.push(Dense { weights, bias });
        }
        let mean = r.f64s(INPUT_DIM)?;
        let scale = r.f64s(INPUT_DIM)?;
        let leverage_bound = r.f64()?;
        r.expect_eof()?;
        let net = Self {
            layers,
            leverage_bound,
            features: FeatureStats {
                mean: mean.try_into().unwrap(),
                scale: scale.try_into().unwrap(),
            },
        };
        net.validate().map_err(|e| r.bad(e.to_string()))?;
        Ok(net)
    }

    pub fn load_meta<M: serde::de::DeserializeOwned>(path: &Path) -> Result<M> {
        read_json(&path.with_extension("json"))
    }
}

const CKPT_MAGIC: &[u8; 4] = b"HLNN";
const CKPT_VERSION: u32 = 1;

/// Position for one state: `min(Z, (v_t + B) / s_t)`.
///
/// `features` are the raw `(V_t, log S_t, sigma_{t+1}, tau)`.
pub fn policy_forward(
    net: &PolicyNetwork,
    features: [f64; INPUT_DIM],
    s_t: f64,
    v_t: f64,
) -> Result<f64> {
    if let Some(k) = features.iter().position(|f| !f.is_finite()) {
        return Err(Error::NonFinite(format!(
            "policy feature {k} = {}",
            features[k]
        )));
    }
    ensure!(
        s_t > 0.0 && s_t.is_finite(),
        "price must be positive, got {s_t}"
    );
    ensure!(v_t.is_finite(), "portfolio value must be finite, got {v_t}");
    let z = net.features.standardize(features);
    let x = Array2::from_shape_vec((1, INPUT_DIM), z.to_vec()).expect("one row");
    let raw = net.raw_output(x.view(), None)[0];
    Ok(capped(raw, v_t, s_t, net.leverage_bound))
}

#[inline]
pub(crate) fn capped(raw: f64, v: f64, s: f64, bound: f64) -> f64 {
    let cap = (v + bound) / s;
    if raw < cap {
        raw
    } else {
        cap
    }
}

impl HedgeStrategy for PolicyNetwork {
    fn tag(&self) -> String {
        "deep".into()
    }

    fn positions(&self, state: &StepState<'_>, out: &mut [f64]) -> Result<()> {
        let x = self.feature_rows(state.values, state.prices, state.vols, state.tau);
        let raw = self.raw_output(x.view(), None);
        for (i, o) in out.iter_mut().enumerate() {
            *o = capped(
                raw[i],
                state.values[i],
                state.prices[i],
                self.leverage_bound,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::{simulate_p, GarchParams};

    #[test]
    fn architecture_is_fixed() {
        let net = glorot_init(1);
        net.validate().unwrap();
        let shapes: Vec<_> = net
            .layers
            .iter()
            .map(|l| (l.fan_out(), l.fan_in()))
            .collect();
        assert_eq!(shapes, vec![(56, 4), (56, 56), (56, 56), (56, 56), (1, 56)]);
        assert_eq!(net.n_params(), 4 * 56 + 56 + 3 * (56 * 56 + 56) + 57);
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let net = glorot_init(3);
        let bound = (6.0f64 / 60.0).sqrt();
        assert!((bound - 0.3162).abs() < 1e-4);
        assert!(net.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn glorot_variance_matches_uniform_law() {
        let net = glorot_init(5);
        let bound2 = 6.0 / 112.0;
        for l in &net.layers[1..4] {
            let n = l.weights.len() as f64;
            let var = l.weights.iter().map(|w| w * w).sum::<f64>() / n;
            assert!((var / (bound2 / 3.0) - 1.0).abs() < 0.1, "{var}");
        }
    }

    #[test]
    fn glorot_is_seed_deterministic() {
        assert_eq!(glorot_init(9), glorot_init(9));
        assert_ne!(glorot_init(9), glorot_init(10));
    }

    fn net_with_output(bias: f64) -> PolicyNetwork {
        let mut net = glorot_init(2);
        for l in &mut net.layers {
            l.weights.fill(0.0);
        }
        net.layers[HIDDEN_LAYERS].bias[0] = bias;
        net
    }

    #[test]
    fn cap_binds_for_large_output() {
        let net = net_with_output(10.0);
        let d = policy_forward(&net, [0.0, 100f64.ln(), 0.01, 63.0], 100.0, 0.0).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn negative_output_passes_through() {
        let net = net_with_output(-0.3);
        let d = policy_forward(&net, [0.0, 100f64.ln(), 0.01, 63.0], 100.0, 0.0).unwrap();
        assert_eq!(d, -0.3);
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let net = glorot_init(1);
        assert!(policy_forward(&net, [f64::NAN, 4.6, 0.01, 1.0], 100.0, 0.0).is_err());
    }

    #[test]
    fn cash_never_below_minus_bound() {
        let net = glorot_init(4);
        for (k, &out) in [-50.0, 0.0, 0.7, 3.0, 1e6].iter().enumerate() {
            let mut n2 = net.clone();
            n2.layers[HIDDEN_LAYERS].bias[0] = out;
            for (v, s) in [(3.0, 100.0), (-40.0, 80.0), (150.0, 130.0)] {
                let d = policy_forward(&n2, [v, f64::ln(s), 0.01, (k + 1) as f64], s, v).unwrap();
                assert!(v - d * s >= -net.leverage_bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn batched_and_single_forward_agree() {
        let mut net = glorot_init(8);
        net.features = FeatureStats {
            mean: [3.0, 4.6, 0.01, 32.0],
            scale: [100.0, 0.05, 0.003, 18.0],
        };
        let values = [3.0, 5.5, -2.0];
        let prices = [100.0, 104.0, 97.0];
        let vols = [0.01, 0.012, 0.009];
        let state = StepState {
            t: 10,
            tau: 53,
            values: &values,
            prices: &prices,
            vols: &vols,
        };
        let mut out = [0.0; 3];
        net.positions(&state, &mut out).unwrap();
        for i in 0..3 {
            let single = policy_forward(
                &net,
                [values[i], prices[i].ln(), vols[i], 53.0],
                prices[i],
                values[i],
            )
            .unwrap();
            assert!((single - out[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn feature_standardization_round_trips() {
        let paths = simulate_p(&GarchParams::default(), 100.0, 0.01, 63, 200, 1).unwrap();
        let fs = FeatureStats::from_paths(&paths, 3.16);
        assert_eq!(fs.scale[0], 100.0);
        for raw in [[3.1, 4.61, 0.011, 17.0], [-20.0, 4.4, 0.03, 1.0]] {
            let back = fs.destandardize(fs.standardize(raw));
            for k in 0..4 {
                assert!((back[k] - raw[k]).abs() <= 1e-12 * raw[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let net = glorot_init(6);
        let mut other = glorot_init(7);
        other.set_flat_params(&net.flat_params());
        assert_eq!(net.layers, other.layers);
    }

    #[test]
    fn checkpoint_round_trip_and_bad_magic() {
        let mut net = glorot_init(11);
        net.features.mean = [1.0, 2.0, 3.0, 4.0];
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("agent.hlnn");
        net.save(&file, &serde_json::json!({"alpha": 0.95}))
            .unwrap();
        assert_eq!(PolicyNetwork::load(&file).unwrap(), net);
        let meta: serde_json::Value = PolicyNetwork::load_meta(&file).unwrap();
        assert_eq!(meta["alpha"], 0.95);
        let mut bytes = std::fs::read(&file).unwrap();
        bytes[0] = b'X';
        std::fs::write(&file, bytes).unwrap();
        let err = PolicyNetwork::load(&file).unwrap_err().to_string();
        assert!(err.contains("agent.hlnn"), "{err}");
    }
}
