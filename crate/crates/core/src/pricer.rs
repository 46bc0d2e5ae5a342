//! Risk-neutral Monte Carlo for the call price and its hedge ratio.
//!
//! The Q-dynamics of `S_{t+tau} / S_t` depend only on the conditioning
//! volatility, so the delta is a function of `(K / S_t, sigma_{t+1}, tau)`.
//! [`DeltaSurface`] tabulates it on a grid and [`DeltaSurface::lookup`]
//! interpolates; [`delta_nested_mc`] is the direct estimator kept as an
//! oracle.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_json, write_json, BinReader, BinWriter};
use crate::error::{ensure, Error, Result};
use crate::garch::{advance, GarchParams, Measure};
use crate::rng::{Antithetic, InnovationSource, SeededNormal};

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Cumulative Q log-returns `log(S_{t+k} / S_t)` for `k = 1..=steps`, laid
/// out row-major `[path][k - 1]`. Paths come in antithetic pairs.
fn cumulative_q_log_returns(
    params: &GarchParams,
    sigma_start: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Vec<f64> {
    let source = Antithetic {
        inner: SeededNormal { seed },
    };
    let mut out = vec![0.0; n_paths * steps];
    out.par_chunks_mut(steps).enumerate().for_each_init(
        || vec![0.0; steps],
        |z, (path, row)| {
            source.fill(path, z);
            let mut sigma2 = sigma_start * sigma_start;
            let mut x = 0.0;
            for k in 0..steps {
                let (ret, next) = advance(params, Measure::Q, sigma2, z[k]);
                x += ret;
                sigma2 = next;
                row[k] = x;
            }
        },
    );
    out
}

/// Mean and standard error of antithetic pair averages.
fn pair_estimate(values: &[f64]) -> McEstimate {
    let pairs = values.len() / 2;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..pairs {
        let y = 0.5 * (values[2 * k] + values[2 * k + 1]);
        sum += y;
        sum_sq += y * y;
    }
    let n = pairs as f64;
    let mean = sum / n;
    let var = if pairs > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

fn check_common(
    params: &GarchParams,
    s: f64,
    sigma: f64,
    strike: f64,
    steps: usize,
    n: usize,
) -> Result<()> {
    params.validate()?;
    ensure!(s > 0.0 && s.is_finite(), "price must be positive, got {s}");
    ensure!(
        sigma > 0.0 && sigma.is_finite(),
        "volatility must be positive, got {sigma}"
    );
    ensure!(
        strike >= 0.0 && strike.is_finite(),
        "strike must be non-negative, got {strike}"
    );
    ensure!(steps >= 1, "maturity must be at least one step");
    ensure!(
        n >= 2,
        "need at least two paths (one antithetic pair), got {n}"
    );
    Ok(())
}

/// Call price `e^{-r T lambda} E^Q[max(S_T - K, 0)]` with antithetic pairs.
///
/// `n_paths` is rounded down to an even count.
pub fn price_call_mc(
    params: &GarchParams,
    s0: f64,
    sigma1: f64,
    strike: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_common(params, s0, sigma1, strike, steps, n_paths)?;
    let n = n_paths / 2 * 2;
    let source = Antithetic {
        inner: SeededNormal { seed },
    };
    let payoffs: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; steps],
            |z, path| {
                source.fill(path, z);
                let mut sigma2 = sigma1 * sigma1;
                let mut x = 0.0;
                for &zk in z.iter() {
                    let (ret, next) = advance(params, Measure::Q, sigma2, zk);
                    x += ret;
                    sigma2 = next;
                }
                (s0 * x.exp() - strike).max(0.0)
            },
        )
        .collect();
    let disc = (-params.r * steps as f64 * params.lambda).exp();
    let est = pair_estimate(&payoffs);
    Ok(McEstimate {
        value: disc * est.value,
        std_error: disc * est.std_error,
    })
}

#[inline]
fn delta_term(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x.exp()
    } else {
        0.0
    }
}

/// Hedge ratio `e^{-r tau lambda} E^Q[(S_{t+tau} / S_t) 1{S_{t+tau} > K}]`
/// from inner paths started at `(s_t, sigma_next)`.
pub fn delta_nested_mc(
    params: &GarchParams,
    s_t: f64,
    sigma_next: f64,
    strike: f64,
    tau: usize,
    n_inner: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_common(params, s_t, sigma_next, strike, tau, n_inner)?;
    let n = n_inner / 2 * 2;
    let xs = cumulative_q_log_returns(params, sigma_next, tau, n, seed);
    let threshold = (strike / s_t).ln();
    let terms: Vec<f64> = (0..n)
        .map(|i| delta_term(xs[i * tau + tau - 1], threshold))
        .collect();
    let disc = (-params.r * tau as f64 * params.lambda).exp();
    let est = pair_estimate(&terms);
    Ok(McEstimate {
        value: disc * est.value,
        std_error: disc * est.std_error,
    })
}

/// Moneyness (`K / S`) and volatility grids of a delta surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub moneyness: Vec<f64>,
    pub vols: Vec<f64>,
}

impl SurfaceGrid {
    /// 41 moneyness points on [0.6, 1.6] and 21 geometrically spaced
    /// volatilities spanning [0.2, 5] times the stationary volatility.
    pub fn default_for(params: &GarchParams) -> Result<Self> {
        let base = params.stationary_vol().ok_or_else(|| {
            Error::InvalidInput("default volatility grid needs stationary parameters".into())
        })?;
        Ok(Self::linear_geometric(
            (0.6, 1.6, 41),
            (0.2 * base, 5.0 * base, 21),
        ))
    }

    pub fn linear_geometric(m: (f64, f64, usize), v: (f64, f64, usize)) -> Self {
        let moneyness = (0..m.2)
            .map(|i| m.0 + (m.1 - m.0) * i as f64 / (m.2 - 1) as f64)
            .collect();
        let ratio = (v.1 / v.0).ln();
        let vols = (0..v.2)
            .map(|j| v.0 * (ratio * j as f64 / (v.2 - 1) as f64).exp())
            .collect();
        Self { moneyness, vols }
    }

    fn validate(&self) -> Result<()> {
        for (name, g) in [("moneyness", &self.moneyness), ("volatility", &self.vols)] {
            ensure!(g.len() >= 4, "{name} grid needs at least 4 points");
            ensure!(
                g.windows(2).all(|w| w[0] < w[1]),
                "{name} grid must be strictly ascending"
            );
            ensure!(
                g.iter().all(|&x| x > 0.0 && x.is_finite()),
                "{name} grid must be positive"
            );
        }
        Ok(())
    }
}

/// Monte Carlo settings recorded with a surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMeta {
    pub params: GarchParams,
    pub strike: f64,
    pub n_inner: usize,
    pub seed: u64,
}

/// Tabulated delta on `moneyness x vol x tau`, `tau = 1..=T`.
#[derive(Debug)]
pub struct DeltaSurface {
    grid: SurfaceGrid,
    steps: usize,
    values: Vec<f64>,
    meta: SurfaceMeta,
    clamped: AtomicU64,
}

impl Clone for DeltaSurface {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            steps: self.steps,
            values: self.values.clone(),
            meta: self.meta,
            clamped: AtomicU64::new(0),
        }
    }
}

impl PartialEq for DeltaSurface {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.steps == other.steps
            && self.values == other.values
            && self.meta == other.meta
    }
}

/// Builds the surface. Every volatility node reuses the same inner-path
/// seed, so node `(m, v, tau)` equals
/// `delta_nested_mc(params, 1, v, m, tau, n_inner, seed)` bit for bit.
pub fn build_delta_surface(
    params: &GarchParams,
    strike: f64,
    steps: usize,
    grid: SurfaceGrid,
    n_inner: usize,
    seed: u64,
) -> Result<DeltaSurface> {
    grid.validate()?;
    check_common(params, 1.0, grid.vols[0], strike, steps, n_inner)?;
    let n = n_inner / 2 * 2;
    let n_m = grid.moneyness.len();
    let thresholds: Vec<f64> = grid.moneyness.iter().map(|m| m.ln()).collect();
    let discounts: Vec<f64> = (1..=steps)
        .map(|tau| (-params.r * tau as f64 * params.lambda).exp())
        .collect();

    // One block of [tau][moneyness] per volatility node.
    let blocks: Vec<Vec<f64>> = grid
        .vols
        .par_iter()
        .map(|&vol| {
            let xs = cumulative_q_log_returns(params, vol, steps, n, seed);
            let mut block = vec![0.0; steps * n_m];
            let mut terms = vec![0.0; n];
            for tau in 1..=steps {
                for (im, &thr) in thresholds.iter().enumerate() {
                    for (i, term) in terms.iter_mut().enumerate() {
                        *term = delta_term(xs[i * steps + tau - 1], thr);
                    }
                    block[(tau - 1) * n_m + im] = discounts[tau - 1] * pair_estimate(&terms).value;
                }
            }
            block
        })
        .collect();

    let n_v = grid.vols.len();
    let mut values = vec![0.0; n_m * n_v * steps];
    for (iv, block) in blocks.iter().enumerate() {
        for tau in 1..=steps {
            for im in 0..n_m {
                values[index(n_v, steps, im, iv, tau)] = block[(tau - 1) * n_m + im];
            }
        }
    }

    Ok(DeltaSurface {
        grid,
        steps,
        values,
        meta: SurfaceMeta {
            params: *params,
            strike,
            n_inner: n,
            seed,
        },
        clamped: AtomicU64::new(0),
    })
}

#[inline]
fn index(n_v: usize, steps: usize, im: usize, iv: usize, tau: usize) -> usize {
    (im * n_v + iv) * steps + (tau - 1)
}

/// Lower bracket index and weight of `x` on `grid`, clamped to the hull.
fn bracket(grid: &[f64], x: f64) -> (usize, f64, bool) {
    let last = grid.len() - 1;
    if x.is_nan() || x <= grid[0] {
        return (0, 0.0, x < grid[0]);
    }
    if x >= grid[last] {
        return (last - 1, 1.0, x > grid[last]);
    }
    let upper = grid.partition_point(|&g| g <= x);
    let i = upper - 1;
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]), false)
}

const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"HLDS";

impl DeltaSurface {
    pub fn grid(&self) -> &SurfaceGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn meta(&self) -> &SurfaceMeta {
        &self.meta
    }

    pub fn strike(&self) -> f64 {
        self.meta.strike
    }

    /// Stored node value.
    pub fn node(&self, im: usize, iv: usize, tau: usize) -> f64 {
        self.values[index(self.grid.vols.len(), self.steps, im, iv, tau)]
    }

    /// Number of lookups so far that fell outside the grid hull.
    pub fn clamped_queries(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Bilinear interpolation in `(K / s_t, sigma_next)` on the exact `tau`
    /// slice; queries outside the grid hull are clamped to it.
    pub fn lookup(&self, s_t: f64, sigma_next: f64, tau: usize) -> Result<f64> {
        ensure!(
            (1..=self.steps).contains(&tau),
            "tau {tau} outside surface range 1..={}",
            self.steps
        );
        ensure!(s_t > 0.0, "price must be positive, got {s_t}");
        let m = self.meta.strike / s_t;
        let (im, wm, out_m) = bracket(&self.grid.moneyness, m);
        let (iv, wv, out_v) = bracket(&self.grid.vols, sigma_next);
        if out_m || out_v {
            let seen = self.clamped.fetch_add(1, Ordering::Relaxed);
            if seen == 0 {
                log::warn!(
                    "delta lookup outside surface hull (K/S={m:.4}, sigma={sigma_next:.5}); clamping"
                );
            }
        }
        let n_v = self.grid.vols.len();
        let at = |a, b| self.values[index(n_v, self.steps, a, b, tau)];
        let lo = (1.0 - wv) * at(im, iv) + wv * at(im, iv + 1);
        let hi = (1.0 - wv) * at(im + 1, iv) + wv * at(im + 1, iv + 1);
        Ok((1.0 - wm) * lo + wm * hi)
    }

    /// Largest increase of delta between adjacent moneyness nodes.
    pub fn max_monotonicity_violation(&self) -> f64 {
        let n_m = self.grid.moneyness.len();
        let mut worst = 0.0f64;
        for iv in 0..self.grid.vols.len() {
            for tau in 1..=self.steps {
                for im in 1..n_m {
                    worst = worst.max(self.node(im, iv, tau) - self.node(im - 1, iv, tau));
                }
            }
        }
        worst
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Writes the binary surface and a `.json` sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path)?;
        w.magic(MAGIC, FORMAT_VERSION)?;
        w.f64_vec(&self.grid.moneyness)?;
        w.f64_vec(&self.grid.vols)?;
        w.u64(self.steps as u64)?;
        w.f64(self.meta.strike)?;
        w.u64(self.meta.n_inner as u64)?;
        w.u64(self.meta.seed)?;
        let p = &self.meta.params;
        w.f64s(&[p.mu, p.omega, p.alpha, p.gamma, p.beta, p.r, p.q, p.lambda])?;
        w.f64s(&self.values)?;
        w.finish()?;
        write_json(&path.with_extension("json"), &SurfaceSidecar::of(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        r.expect_magic(MAGIC, FORMAT_VERSION)?;
        let moneyness = r.f64_vec(1 << 20)?;
        let vols = r.f64_vec(1 << 20)?;
        let steps = r.usize(1 << 20)?;
        let strike = r.f64()?;
        let n_inner = r.usize(usize::MAX)?;
        let seed = r.u64()?;
        let p = r.f64s(8)?;
        let params = GarchParams {
            mu: p[0],
            omega: p[1],
            alpha: p[2],
            gamma: p[3],
            beta: p[4],
            r: p[5],
            q: p[6],
            lambda: p[7],
        };
        let values = r.f64s(moneyness.len() * vols.len() * steps)?;
        r.expect_eof()?;
        let grid = SurfaceGrid { moneyness, vols };
        grid.validate().map_err(|e| r.bad(e.to_string()))?;
        if steps == 0 {
            return Err(r.bad("surface has no maturities"));
        }
        Ok(Self {
            grid,
            steps,
            values,
            meta: SurfaceMeta {
                params,
                strike,
                n_inner,
                seed,
            },
            clamped: AtomicU64::new(0),
        })
    }

    /// Sidecar description as written by [`DeltaSurface::save`].
    pub fn load_sidecar(path: &Path) -> Result<SurfaceSidecar> {
        read_json(&path.with_extension("json"))
    }
}

/// Human-readable description of a saved surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSidecar {
    pub format: String,
    pub version: u32,
    pub moneyness: Vec<f64>,
    pub vols: Vec<f64>,
    pub tau_min: usize,
    pub tau_max: usize,
    pub strike: f64,
    pub n_inner: usize,
    pub seed: u64,
    pub params: GarchParams,
    pub value_min: f64,
    pub value_max: f64,
}

impl SurfaceSidecar {
    fn of(s: &DeltaSurface) -> Self {
        let (value_min, value_max) = s.value_range();
        Self {
            format: "HLDS".into(),
            version: FORMAT_VERSION,
            moneyness: s.grid.moneyness.clone(),
            vols: s.grid.vols.clone(),
            tau_min: 1,
            tau_max: s.steps,
            strike: s.meta.strike,
            n_inner: s.meta.n_inner,
            seed: s.meta.seed,
            params: s.meta.params,
            value_min,
            value_max,
        }
    }
}
