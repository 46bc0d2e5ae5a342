//! Run configuration: market, contract, Monte Carlo, training and path-set
//! settings, stored as TOML.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garch::GarchParams;
use crate::hedge::Contract;
use crate::policy::DEFAULT_LEVERAGE_BOUND;
use crate::pricer::SurfaceGrid;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Reduced path counts and epochs; a full pipeline runs in minutes.
    Desk,
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!(
                "unknown profile {other:?}; expected desk or full"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub mu: f64,
    pub omega: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub r: f64,
    pub q: f64,
    pub lambda: f64,
    /// Volatility for the first day of every simulated path.
    pub sigma1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractConfig {
    pub s0: f64,
    pub strike: f64,
    pub steps: usize,
    pub leverage_bound: f64,
    /// Initial hedge capital. When absent, the Monte Carlo option price is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premium: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_inner: usize,
    pub price_seed: u64,
    pub surface_seed: u64,
    pub moneyness_min: f64,
    pub moneyness_max: f64,
    pub moneyness_points: usize,
    /// Vol grid bounds as multiples of the stationary daily volatility.
    pub vol_min_factor: f64,
    pub vol_max_factor: f64,
    pub vol_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Training paths per agent; every agent gets its own disjoint set.
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub market: MarketConfig,
    pub contract: ContractConfig,
    pub mc: McConfig,
    pub train: TrainSection,
    pub paths: PathsConfig,
    pub output: OutputConfig,
}

/// Purpose of a derived seed, so distinct artifacts never share a stream.
#[derive(Debug, Clone, Copy)]
pub enum SeedRole {
    TrainPaths(usize),
    ValidPaths,
    TestPaths,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let params = GarchParams::default();
        let (n_train, n_valid, n_test, epochs) = match profile {
            Profile::Desk => (50_000, 10_000, 20_000, 10),
            Profile::Full => (400_000, 40_000, 100_000, 50),
        };
        Self {
            profile,
            market: MarketConfig {
                mu: params.mu,
                omega: params.omega,
                alpha: params.alpha,
                gamma: params.gamma,
                beta: params.beta,
                r: params.r,
                q: params.q,
                lambda: params.lambda,
                sigma1: params.stationary_vol().unwrap_or(0.01),
            },
            contract: ContractConfig {
                s0: 100.0,
                strike: 100.0,
                steps: 63,
                leverage_bound: DEFAULT_LEVERAGE_BOUND,
                premium: None,
            },
            mc: McConfig {
                n_paths: 200_000,
                n_inner: 50_000,
                price_seed: 101,
                surface_seed: 202,
                moneyness_min: 0.6,
                moneyness_max: 1.6,
                moneyness_points: 41,
                vol_min_factor: 0.2,
                vol_max_factor: 5.0,
                vol_points: 21,
            },
            train: TrainSection {
                batch_size: 1000,
                learning_rate: 5e-4,
                epochs,
                alphas: vec![0.01, 0.2, 0.9, 0.95],
                seed: 303,
                init_seed: 404,
            },
            paths: PathsConfig {
                n_train,
                n_valid,
                n_test,
                seed: 505,
            },
            output: OutputConfig {
                dir: PathBuf::from("runs").join(match profile {
                    Profile::Desk => "desk",
                    Profile::Full => "full",
                }),
            },
        }
    }

    pub fn garch_params(&self) -> GarchParams {
        let m = &self.market;
        GarchParams {
            mu: m.mu,
            omega: m.omega,
            alpha: m.alpha,
            gamma: m.gamma,
            beta: m.beta,
            r: m.r,
            q: m.q,
            lambda: m.lambda,
        }
    }

    pub fn contract(&self, premium: f64) -> Contract {
        Contract {
            strike: self.contract.strike,
            steps: self.contract.steps,
            v0: premium,
        }
    }

    pub fn surface_grid(&self) -> Result<SurfaceGrid> {
        let base = self
            .garch_params()
            .stationary_vol()
            .ok_or_else(|| Error::Config("the surface grid needs a stationary market".into()))?;
        let mc = &self.mc;
        Ok(SurfaceGrid::linear_geometric(
            (mc.moneyness_min, mc.moneyness_max, mc.moneyness_points),
            (
                base * mc.vol_min_factor,
                base * mc.vol_max_factor,
                mc.vol_points,
            ),
        ))
    }

    pub fn seed(&self, role: SeedRole) -> u64 {
        match role {
            SeedRole::TrainPaths(agent) => derive_seed(self.paths.seed, 1000 + agent as u64),
            SeedRole::ValidPaths => derive_seed(self.paths.seed, 1),
            SeedRole::TestPaths => derive_seed(self.paths.seed, 2),
        }
    }

    /// Position of `alpha` in the configured list.
    pub fn agent_index(&self, alpha: f64) -> Result<usize> {
        self.train
            .alphas
            .iter()
            .position(|&a| a == alpha)
            .ok_or_else(|| {
                Error::Config(format!(
                    "alpha {alpha} is not in the configured list {:?}",
                    self.train.alphas
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.garch_params()
            .validate()
            .map_err(|e| Error::Config(format!("market: {e}")))?;
        if !(self.market.sigma1 > 0.0 && self.market.sigma1.is_finite()) {
            return bad("market.sigma1 must be positive".into());
        }
        let c = &self.contract;
        if !(c.s0 > 0.0 && c.strike >= 0.0 && c.steps >= 1 && c.leverage_bound >= 0.0) {
            return bad(
                "contract needs s0 > 0, strike >= 0, steps >= 1, leverage_bound >= 0".into(),
            );
        }
        if let Some(p) = c.premium {
            if !p.is_finite() {
                return bad("contract.premium must be finite".into());
            }
        }
        let mc = &self.mc;
        if mc.n_paths < 2 || mc.n_inner < 2 {
            return bad("mc.n_paths and mc.n_inner must be at least 2".into());
        }
        if !(mc.moneyness_min > 0.0
            && mc.moneyness_max > mc.moneyness_min
            && mc.moneyness_points >= 2)
        {
            return bad("moneyness grid needs 0 < min < max and at least 2 points".into());
        }
        if !(mc.vol_min_factor > 0.0 && mc.vol_max_factor > mc.vol_min_factor && mc.vol_points >= 2)
        {
            return bad("vol grid needs 0 < min factor < max factor and at least 2 points".into());
        }
        let t = &self.train;
        if t.alphas.is_empty() {
            return bad("train.alphas is empty".into());
        }
        if let Some(a) = t.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alpha {a} is outside (0, 1)"));
        }
        for (i, a) in t.alphas.iter().enumerate() {
            if t.alphas[..i].contains(a) {
                return bad(format!("alpha {a} is listed twice"));
            }
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("train.learning_rate must be positive".into());
        }
        if t.batch_size < 2 || t.batch_size > self.paths.n_train {
            return bad(format!(
                "train.batch_size {} must lie in [2, paths.n_train = {}]",
                t.batch_size, self.paths.n_train
            ));
        }
        if self.paths.n_valid < 2 || self.paths.n_test < 2 {
            return bad("paths.n_valid and paths.n_test must be at least 2".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// TOML with a comment after every setting explaining its default.
    pub fn annotated_toml(&self) -> Result<String> {
        let plain = self.to_toml()?;
        let mut section = String::new();
        let mut out = String::new();
        for line in plain.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') {
                section = trimmed.trim_matches(|c| c == '[' || c == ']').to_string();
            }
            let key = trimmed.split('=').next().unwrap_or("").trim();
            match note(&section, key) {
                Some(n) if trimmed.contains('=') => out.push_str(&format!("{line}  # {n}\n")),
                _ => {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

fn note(section: &str, key: &str) -> Option<&'static str> {
    Some(match (section, key) {
        ("", "profile") => "desk: reduced scale; full: 400k training paths per agent, 50 epochs",
        ("market", "mu") => "daily P-drift of log returns",
        ("market", "omega") => "variance intercept; 1e-6 gives a 1% stationary daily vol",
        ("market", "alpha") => "ARCH loading",
        ("market", "gamma") => "extra loading on negative shocks (leverage effect)",
        ("market", "beta") => "GARCH persistence",
        ("market", "r") => "annual risk-free rate, continuously compounded",
        ("market", "q") => "annual dividend yield, continuously compounded",
        ("market", "lambda") => "year fraction of one trading day (1/252)",
        ("market", "sigma1") => "first-day vol; defaults to the stationary level",
        ("contract", "s0") => "spot at inception",
        ("contract", "strike") => "call strike (at the money)",
        ("contract", "steps") => "trading days to maturity; one rebalance per day",
        ("contract", "leverage_bound") => "maximum cash borrowing B; caps positions at (V+B)/S",
        ("contract", "premium") => "initial capital; omitted means the MC option price",
        ("mc", "n_paths") => "antithetic paths for the option price",
        ("mc", "n_inner") => "inner Q-paths per delta surface node",
        ("mc", "price_seed") => "seed for the option price",
        ("mc", "surface_seed") => "seed shared by every surface node",
        ("mc", "moneyness_min") => "lowest K/S on the surface",
        ("mc", "moneyness_max") => "highest K/S on the surface",
        ("mc", "moneyness_points") => "evenly spaced moneyness nodes",
        ("mc", "vol_min_factor") => "lowest surface vol, as a multiple of the stationary vol",
        ("mc", "vol_max_factor") => "highest surface vol, as a multiple of the stationary vol",
        ("mc", "vol_points") => "geometrically spaced vol nodes",
        ("train", "batch_size") => "paths per ADAM step",
        ("train", "learning_rate") => "ADAM step size",
        ("train", "epochs") => "passes over each agent's training set",
        ("train", "alphas") => "CVaR levels, one agent each",
        ("train", "seed") => "mini-batch shuffling seed",
        ("train", "init_seed") => "Glorot initialisation seed",
        ("paths", "n_train") => "training paths per agent (disjoint across agents)",
        ("paths", "n_valid") => "validation paths for checkpoint selection",
        ("paths", "n_test") => "held-out evaluation paths",
        ("paths", "seed") => "root seed for all path sets",
        ("output", "dir") => "run directory; DEEPHEDGE_OUT overrides when no --out is given",
        _ => return None,
    })
}
