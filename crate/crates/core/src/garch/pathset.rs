use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::binio::{BinReader, BinWriter};
use crate::error::{ensure, Error, Result};

const MAGIC: &[u8; 4] = b"HLPS";
const VERSION: u32 = 1;
const MAX_CELLS: usize = 1 << 34;

/// Probability measure a path set was generated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Measure {
    /// Physical measure, used for training and performance evaluation.
    P,
    /// Risk-neutral measure, used for pricing and deltas.
    Q,
}

impl Measure {
    fn code(self) -> u8 {
        match self {
            Measure::P => 0,
            Measure::Q => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Measure::P),
            1 => Some(Measure::Q),
            _ => None,
        }
    }
}

/// Simulated prices `S_t` and daily volatilities for `t = 0..=T`.
///
/// `vols[[i, t]]` is the volatility of the return from `t` to `t + 1`, which
/// is known at time `t`; `vols[[i, 0]]` is the initial volatility.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    prices: Array2<f64>,
    vols: Array2<f64>,
    measure: Measure,
    seed: u64,
    s0: f64,
    sigma1: f64,
}

impl PathSet {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_raw(
        measure: Measure,
        seed: u64,
        s0: f64,
        sigma1: f64,
        n_paths: usize,
        steps: usize,
        prices: Vec<f64>,
        vols: Vec<f64>,
    ) -> Result<Self> {
        let shape = (n_paths, steps + 1);
        let prices = Array2::from_shape_vec(shape, prices)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let vols =
            Array2::from_shape_vec(shape, vols).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Self {
            prices,
            vols,
            measure,
            seed,
            s0,
            sigma1,
        })
    }

    /// Builds a path set from explicit matrices, checking the invariants.
    pub fn new(
        prices: Array2<f64>,
        vols: Array2<f64>,
        measure: Measure,
        seed: u64,
    ) -> Result<Self> {
        ensure!(
            prices.dim() == vols.dim(),
            "price and volatility matrices differ in shape"
        );
        ensure!(prices.ncols() >= 2, "need at least one step");
        ensure!(prices.nrows() >= 1, "need at least one path");
        ensure!(
            prices.iter().all(|&s| s > 0.0 && s.is_finite()),
            "prices must be positive and finite"
        );
        ensure!(
            vols.iter().all(|&v| v > 0.0 && v.is_finite()),
            "volatilities must be positive and finite"
        );
        let s0 = prices[[0, 0]];
        let sigma1 = vols[[0, 0]];
        ensure!(
            prices.column(0).iter().all(|&s| s == s0),
            "all paths must start at the same price"
        );
        ensure!(
            vols.column(0).iter().all(|&v| v == sigma1),
            "all paths must start at the same volatility"
        );
        Ok(Self {
            prices,
            vols,
            measure,
            seed,
            s0,
            sigma1,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.prices.nrows()
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.prices.ncols() - 1
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn prices(&self) -> ArrayView2<'_, f64> {
        self.prices.view()
    }

    pub fn vols(&self) -> ArrayView2<'_, f64> {
        self.vols.view()
    }

    #[inline]
    pub fn price(&self, path: usize, t: usize) -> f64 {
        self.prices[[path, t]]
    }

    #[inline]
    pub fn vol(&self, path: usize, t: usize) -> f64 {
        self.vols[[path, t]]
    }

    pub fn price_path(&self, path: usize) -> ArrayView1<'_, f64> {
        self.prices.row(path)
    }

    /// Daily log-returns of one path.
    pub fn log_returns(&self, path: usize) -> Vec<f64> {
        let row = self.prices.row(path);
        row.windows(2)
            .into_iter()
            .map(|w| (w[1] / w[0]).ln())
            .collect()
    }

    /// Paths `start..end` as a new set with the same metadata.
    pub fn slice(&self, start: usize, end: usize) -> PathSet {
        use ndarray::s;
        PathSet {
            prices: self.prices.slice(s![start..end, ..]).to_owned(),
            vols: self.vols.slice(s![start..end, ..]).to_owned(),
            ..*self
        }
    }

    /// Subset of paths in the given order.
    pub fn select(&self, rows: &[usize]) -> PathSet {
        PathSet {
            prices: self.prices.select(ndarray::Axis(0), rows),
            vols: self.vols.select(ndarray::Axis(0), rows),
            ..*self
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::create(path)?;
        w.magic(MAGIC, VERSION)?;
        w.u8(self.measure.code())?;
        w.u64(self.seed)?;
        w.u64(self.n_paths() as u64)?;
        w.u64(self.steps() as u64)?;
        w.f64(self.s0)?;
        w.f64(self.sigma1)?;
        w.f64s(self.prices.as_slice().expect("standard layout"))?;
        w.f64s(self.vols.as_slice().expect("standard layout"))?;
        w.finish()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::open(path)?;
        r.expect_magic(MAGIC, VERSION)?;
        let code = r.u8()?;
        let measure =
            Measure::from_code(code).ok_or_else(|| r.bad(format!("bad measure {code}")))?;
        let seed = r.u64()?;
        let n_paths = r.usize(MAX_CELLS)?;
        let steps = r.usize(MAX_CELLS)?;
        let s0 = r.f64()?;
        let sigma1 = r.f64()?;
        let cells = n_paths
            .checked_mul(steps + 1)
            .filter(|&c| c <= MAX_CELLS)
            .ok_or_else(|| r.bad("path matrix too large"))?;
        let prices = r.f64s(cells)?;
        let vols = r.f64s(cells)?;
        r.expect_eof()?;
        PathSet::from_raw(measure, seed, s0, sigma1, n_paths, steps, prices, vols)
            .map_err(|e| Error::format(r.path(), e.to_string()))
    }

    /// Long-format CSV: `path_id,t,price,vol`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path_id,t,price,vol\n");
        for i in 0..self.n_paths() {
            for t in 0..=self.steps() {
                let _ = writeln!(out, "{i},{t},{},{}", self.price(i, t), self.vol(i, t));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a single-column CSV of daily log-returns; a non-numeric first line is
/// treated as a header.
pub fn read_returns_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_returns(&text).map_err(|detail| Error::format(path, detail))
}

fn parse_returns(text: &str) -> std::result::Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(v) => return Err(format!("line {}: non-finite return {v}", lineno + 1)),
            Err(_) if lineno == 0 => {}
            Err(_) => return Err(format!("line {}: cannot parse {field:?}", lineno + 1)),
        }
    }
    if out.is_empty() {
        return Err("no returns found".into());
    }
    Ok(out)
}
