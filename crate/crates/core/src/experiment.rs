//! Pipeline stages over a run directory.
//!
//! ```text
//! <run>/manifest.json            config snapshot, versions, stage history
//! <run>/paths/{train_<i>,valid,test}.hlps
//! <run>/price.json
//! <run>/calibration.json
//! <run>/surface/delta.hlds       (+ .json sidecar)
//! <run>/agents/alpha_<a>/{policy,last}.hlnn, adam.bin, train_log.csv
//! <run>/eval/alpha_<a>/{risk.csv,terminal.csv}
//! <run>/arbtest.csv
//! <run>/report/...
//! ```
//!
//! Every stage refuses to replace an existing artifact unless `force` is set,
//! and refuses to touch a run directory created from a different config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    build_table1, build_table2, evaluate_agents, per_day_association, per_day_csv, pnl_histogram,
    table1_csv, table1_text, table2_csv, table2_text, Agent, Table1Row, Table2Row,
};
use crate::binio::{read_json, write_json};
use crate::config::{RunConfig, SeedRole};
use crate::error::{Error, Result};
use crate::garch::{
    calibrate, read_returns_csv, simulate_p, Calibration, CalibrationBounds, GarchParams, PathSet,
};
use crate::hedge::{difference_strategy, rollout, Contract};
use crate::policy::{
    glorot_init, train, write_log_csv, AdamState, EpochRecord, FeatureStats, PolicyNetwork,
    TrainConfig,
};
use crate::pricer::{build_delta_surface, price_call_mc, DeltaSurface, McEstimate};
use crate::risk::{cvar_hat, RiskReport};
use crate::rng::derive_seed;

const HISTOGRAM_BINS: usize = 60;

type TrainedAgent = (f64, PolicyNetwork);

/// File locations inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

fn alpha_dir(alpha: f64) -> String {
    format!("alpha_{alpha}")
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn train_paths(&self, agent: usize) -> PathBuf {
        self.root.join("paths").join(format!("train_{agent}.hlps"))
    }

    pub fn valid_paths(&self) -> PathBuf {
        self.root.join("paths/valid.hlps")
    }

    pub fn test_paths(&self) -> PathBuf {
        self.root.join("paths/test.hlps")
    }

    pub fn price(&self) -> PathBuf {
        self.root.join("price.json")
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.json")
    }

    pub fn surface(&self) -> PathBuf {
        self.root.join("surface/delta.hlds")
    }

    pub fn agent_dir(&self, alpha: f64) -> PathBuf {
        self.root.join("agents").join(alpha_dir(alpha))
    }

    pub fn policy(&self, alpha: f64) -> PathBuf {
        self.agent_dir(alpha).join("policy.hlnn")
    }

    pub fn last_policy(&self, alpha: f64) -> PathBuf {
        self.agent_dir(alpha).join("last.hlnn")
    }

    pub fn adam(&self, alpha: f64) -> PathBuf {
        self.agent_dir(alpha).join("adam.bin")
    }

    pub fn train_log(&self, alpha: f64) -> PathBuf {
        self.agent_dir(alpha).join("train_log.csv")
    }

    pub fn eval_dir(&self, alpha: f64) -> PathBuf {
        self.root.join("eval").join(alpha_dir(alpha))
    }

    pub fn arbtest(&self) -> PathBuf {
        self.root.join("arbtest.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub finished_unix: u64,
    pub artifacts: Vec<PathBuf>,
}

/// Everything needed to rebuild a run directory bit-exactly at a fixed
/// worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config: RunConfig,
    pub workers: usize,
    pub stages: Vec<StageRecord>,
}

/// A run directory bound to a config.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub layout: Layout,
    pub force: bool,
}

fn need(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Premium stored by the price stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceRecord {
    pub price: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Sidecar metadata of a trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub alpha: f64,
    pub premium: f64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_valid_cvar: f64,
    pub train_seed: u64,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    /// `rho(xi_Delta)` at every configured level.
    pub delta_risk: Vec<(f64, f64)>,
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
    pub checks: Vec<SignCheck>,
    /// Alphas with no trained agent.
    pub missing_agents: Vec<f64>,
    pub clamped_lookups: u64,
}

impl ReportSummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Sign checks on the performance table: deep beats delta at the 95% level,
/// the difference strategy is a statistical arbitrage at low levels and is
/// not one at high levels.
pub fn sign_checks(rows: &[Table1Row]) -> Vec<SignCheck> {
    let mut checks = Vec::new();
    for r in rows {
        if r.alpha == 0.95 {
            checks.push(SignCheck {
                name: format!("deep improves on delta at alpha={}", r.alpha),
                passed: r.rho_gap < 0.0,
                detail: format!("rho gap {:.4}", r.rho_gap),
            });
        }
        let regime = if r.alpha <= 0.2 {
            Some((
                "statistical arbitrage",
                r.rho_difference < 0.0 && r.mean_difference > 0.0,
            ))
        } else if r.alpha >= 0.9 {
            Some((
                "no statistical arbitrage",
                r.rho_difference > 0.0 && r.mean_difference < 0.0,
            ))
        } else {
            None
        };
        if let Some((label, passed)) = regime {
            checks.push(SignCheck {
                name: format!("{label} at alpha={}", r.alpha),
                passed,
                detail: format!(
                    "rho(-V) {:.4}, E[V] {:.4}",
                    r.rho_difference, r.mean_difference
                ),
            });
        }
    }
    checks
}

impl Run {
    /// Binds `config` to its output directory, creating or checking the manifest.
    pub fn open(config: RunConfig, force: bool, workers: usize) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config.output.dir);
        mkdir(&layout.root)?;
        let path = layout.manifest();
        if path.exists() {
            let existing: Manifest = read_json(&path)?;
            if existing.config != config {
                if !force {
                    return Err(Error::Config(format!(
                        "{} was created with a different configuration; pass --force to reset it",
                        layout.root.display()
                    )));
                }
                log::warn!(
                    "configuration changed; resetting manifest in {}",
                    layout.root.display()
                );
                write_json(&path, &Manifest::new(&config, workers))?;
            }
        } else {
            write_json(&path, &Manifest::new(&config, workers))?;
        }
        write_text(&layout.root.join("config.toml"), &config.annotated_toml()?)?;
        Ok(Self {
            config,
            layout,
            force,
        })
    }

    pub fn manifest(&self) -> Result<Manifest> {
        read_json(&self.layout.manifest())
    }

    fn record(&self, stage: &str, alpha: Option<f64>, artifacts: Vec<PathBuf>) -> Result<()> {
        let mut m = self.manifest()?;
        m.stages.push(StageRecord {
            stage: stage.to_string(),
            alpha,
            finished_unix: now_unix(),
            artifacts,
        });
        write_json(&self.layout.manifest(), &m)
    }

    fn guard(&self, outputs: &[PathBuf]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        match outputs.iter().find(|p| p.exists()) {
            Some(p) => Err(Error::OutputExists(p.clone())),
            None => Ok(()),
        }
    }

    pub fn params(&self) -> GarchParams {
        self.config.garch_params()
    }

    fn simulate(&self, n: usize, seed: u64) -> Result<PathSet> {
        let c = &self.config;
        simulate_p(
            &self.params(),
            c.contract.s0,
            c.market.sigma1,
            c.contract.steps,
            n,
            seed,
        )
    }

    /// Training sets (one per agent), validation and test P-paths.
    pub fn simulate_paths(&self) -> Result<Vec<PathBuf>> {
        let n_agents = self.config.train.alphas.len();
        let mut outputs: Vec<PathBuf> = (0..n_agents).map(|i| self.layout.train_paths(i)).collect();
        outputs.push(self.layout.valid_paths());
        outputs.push(self.layout.test_paths());
        self.guard(&outputs)?;
        mkdir(&self.layout.root.join("paths"))?;
        let p = &self.config.paths;
        for (i, out) in outputs.iter().enumerate().take(n_agents) {
            self.simulate(p.n_train, self.config.seed(SeedRole::TrainPaths(i)))?
                .save(out)?;
        }
        self.simulate(p.n_valid, self.config.seed(SeedRole::ValidPaths))?
            .save(&self.layout.valid_paths())?;
        self.simulate(p.n_test, self.config.seed(SeedRole::TestPaths))?
            .save(&self.layout.test_paths())?;
        self.record("simulate", None, outputs.clone())?;
        Ok(outputs)
    }

    /// Maximum-likelihood fit to `returns`, or to a synthetic series from
    /// the configured market when no returns are given.
    pub fn calibrate(&self, returns: Option<&Path>, n_synthetic: usize) -> Result<Calibration> {
        let out = self.layout.calibration();
        self.guard(std::slice::from_ref(&out))?;
        let series = match returns {
            Some(path) => read_returns_csv(path)?,
            None => {
                let seed = derive_seed(self.config.paths.seed, 3);
                let ps = simulate_p(
                    &self.params(),
                    1.0,
                    self.config.market.sigma1,
                    n_synthetic,
                    1,
                    seed,
                )?;
                ps.log_returns(0)
            }
        };
        let fit = calibrate(
            &series,
            &GarchParams::default(),
            &CalibrationBounds::default(),
        )?;
        write_json(&out, &fit)?;
        self.record("calibrate", None, vec![out])?;
        Ok(fit)
    }

    pub fn price(&self) -> Result<McEstimate> {
        let out = self.layout.price();
        self.guard(std::slice::from_ref(&out))?;
        let c = &self.config;
        let est = price_call_mc(
            &self.params(),
            c.contract.s0,
            c.market.sigma1,
            c.contract.strike,
            c.contract.steps,
            c.mc.n_paths,
            c.mc.price_seed,
        )?;
        write_json(
            &out,
            &PriceRecord {
                price: est.value,
                std_error: est.std_error,
                n_paths: c.mc.n_paths,
                seed: c.mc.price_seed,
            },
        )?;
        self.record("price", None, vec![out])?;
        Ok(est)
    }

    /// Initial hedge capital: the configured premium or the priced value.
    pub fn premium(&self) -> Result<f64> {
        if let Some(p) = self.config.contract.premium {
            return Ok(p);
        }
        let path = self.layout.price();
        need(&path, "run the price stage first")?;
        Ok(read_json::<PriceRecord>(&path)?.price)
    }

    pub fn contract(&self) -> Result<Contract> {
        Ok(self.config.contract(self.premium()?))
    }

    pub fn build_surface(&self) -> Result<DeltaSurface> {
        let out = self.layout.surface();
        self.guard(std::slice::from_ref(&out))?;
        mkdir(out.parent().expect("surface path has a parent"))?;
        let c = &self.config;
        let surface = build_delta_surface(
            &self.params(),
            c.contract.strike,
            c.contract.steps,
            c.surface_grid()?,
            c.mc.n_inner,
            c.mc.surface_seed,
        )?;
        surface.save(&out)?;
        self.record("surface", None, vec![out])?;
        Ok(surface)
    }

    pub fn load_surface(&self) -> Result<DeltaSurface> {
        let path = self.layout.surface();
        need(&path, "run the surface stage first")?;
        DeltaSurface::load(&path)
    }

    fn load_paths(path: &Path, stage: &str) -> Result<PathSet> {
        need(path, &format!("run the {stage} stage first"))?;
        PathSet::load(path)
    }

    pub fn load_test_paths(&self) -> Result<PathSet> {
        Self::load_paths(&self.layout.test_paths(), "simulate")
    }

    fn train_config(&self, alpha: f64, start_epoch: usize) -> TrainConfig {
        let t = &self.config.train;
        TrainConfig {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            alpha,
            seed: derive_seed(t.seed, alpha.to_bits()),
            start_epoch,
        }
    }

    /// Trains the agent for `alpha`. With `resume`, continues from the last
    /// saved epoch and optimizer state.
    pub fn train_agent(&self, alpha: f64, resume: bool) -> Result<PolicyMeta> {
        let index = self.config.agent_index(alpha)?;
        let layout = &self.layout;
        if !resume {
            self.guard(&[layout.policy(alpha)])?;
        }
        let train_paths = Self::load_paths(&layout.train_paths(index), "simulate")?;
        let valid_paths = Self::load_paths(&layout.valid_paths(), "simulate")?;
        let contract = self.contract()?;
        let params = self.params();
        let init_seed = derive_seed(self.config.train.init_seed, alpha.to_bits());

        let (net, adam, mut log, previous_best) = if resume {
            need(
                &layout.last_policy(alpha),
                "nothing to resume; train without --resume",
            )?;
            need(
                &layout.adam(alpha),
                "optimizer state missing; train without --resume",
            )?;
            let log = read_log_csv(&layout.train_log(alpha))?;
            let meta: PolicyMeta = PolicyNetwork::load_meta(&layout.policy(alpha))?;
            let best = PolicyNetwork::load(&layout.policy(alpha))?;
            (
                PolicyNetwork::load(&layout.last_policy(alpha))?,
                Some(AdamState::load(&layout.adam(alpha))?),
                log,
                Some((best, meta)),
            )
        } else {
            let mut net = glorot_init(init_seed);
            net.leverage_bound = self.config.contract.leverage_bound;
            net.features = FeatureStats::from_paths(&train_paths, contract.v0);
            (net, None, Vec::new(), None)
        };

        let cfg = self.train_config(alpha, log.len());
        let outcome = train(
            net,
            adam,
            &train_paths,
            &valid_paths,
            &contract,
            &params,
            &cfg,
        )?;
        log.extend(outcome.log.iter().cloned());

        let (mut best, mut meta) = (
            outcome.best,
            PolicyMeta {
                alpha,
                premium: contract.v0,
                epochs_run: log.len(),
                best_epoch: outcome.best_epoch,
                best_valid_cvar: outcome.best_valid_cvar,
                train_seed: cfg.seed,
                init_seed,
            },
        );
        if let Some((prev, prev_meta)) = previous_best {
            if outcome.best_epoch.is_none() || prev_meta.best_valid_cvar <= outcome.best_valid_cvar
            {
                best = prev;
                meta.best_epoch = prev_meta.best_epoch;
                meta.best_valid_cvar = prev_meta.best_valid_cvar;
            }
        }

        mkdir(&layout.agent_dir(alpha))?;
        best.save(&layout.policy(alpha), &meta)?;
        outcome.last.save(&layout.last_policy(alpha), &meta)?;
        outcome.adam.save(&layout.adam(alpha))?;
        write_log_csv(&layout.train_log(alpha), &log)?;
        self.record(
            "train",
            Some(alpha),
            vec![
                layout.policy(alpha),
                layout.last_policy(alpha),
                layout.adam(alpha),
                layout.train_log(alpha),
            ],
        )?;
        Ok(meta)
    }

    pub fn load_policy(&self, alpha: f64) -> Result<PolicyNetwork> {
        let path = self.layout.policy(alpha);
        need(&path, &format!("train the agent for alpha={alpha} first"))?;
        PolicyNetwork::load(&path)
    }

    /// Risk of the hedging errors of deep and delta hedging and of the
    /// difference strategy, on the test paths.
    pub fn evaluate(&self, alpha: f64) -> Result<Vec<RiskReport>> {
        let dir = self.layout.eval_dir(alpha);
        let outputs = [dir.join("risk.csv"), dir.join("terminal.csv")];
        self.guard(&outputs)?;
        let net = self.load_policy(alpha)?;
        let surface = self.load_surface()?;
        let test = self.load_test_paths()?;
        let contract = self.contract()?;
        let outcome =
            difference_strategy(&net, &surface).rollout(&test, &contract, &self.params())?;
        let reports = vec![
            RiskReport::from_losses("deep", &outcome.deep.terminal_error, alpha)?,
            RiskReport::from_losses("delta", &outcome.delta.terminal_error, alpha)?,
            RiskReport::from_pnl(
                &outcome.difference.strategy_tag,
                &outcome.difference.terminal_value,
                alpha,
            )?,
        ];
        let mut risk = format!("{}\n", RiskReport::CSV_HEADER);
        for r in &reports {
            risk.push_str(&r.csv_row());
            risk.push('\n');
        }
        let mut terminal = String::from("path_id,xi_deep,xi_delta,v_difference\n");
        for i in 0..test.n_paths() {
            let _ = writeln!(
                terminal,
                "{i},{},{},{}",
                outcome.deep.terminal_error[i],
                outcome.delta.terminal_error[i],
                outcome.difference.terminal_value[i]
            );
        }
        write_text(&outputs[0], &risk)?;
        write_text(&outputs[1], &terminal)?;
        self.record("evaluate", Some(alpha), outputs.to_vec())?;
        Ok(reports)
    }

    fn trained_agents(&self) -> Result<(Vec<TrainedAgent>, Vec<f64>)> {
        let mut found = Vec::new();
        let mut missing = Vec::new();
        for &alpha in &self.config.train.alphas {
            if self.layout.policy(alpha).exists() {
                found.push((alpha, self.load_policy(alpha)?));
            } else {
                missing.push(alpha);
            }
        }
        Ok((found, missing))
    }

    /// Statistical-arbitrage verdict of the difference strategy per agent.
    pub fn arbtest(&self) -> Result<Vec<RiskReport>> {
        let out = self.layout.arbtest();
        self.guard(std::slice::from_ref(&out))?;
        let (agents, missing) = self.trained_agents()?;
        if agents.is_empty() {
            return Err(Error::MissingArtifact {
                path: self.layout.policy(missing[0]),
                hint: "train at least one agent first".into(),
            });
        }
        let surface = self.load_surface()?;
        let test = self.load_test_paths()?;
        let contract = self.contract()?;
        let mut text = format!("{}\n", RiskReport::CSV_HEADER);
        let mut reports = Vec::new();
        for (alpha, net) in &agents {
            let outcome =
                difference_strategy(net, &surface).rollout(&test, &contract, &self.params())?;
            let r = RiskReport::from_pnl(
                &outcome.difference.strategy_tag,
                &outcome.difference.terminal_value,
                *alpha,
            )?;
            text.push_str(&r.csv_row());
            text.push('\n');
            reports.push(r);
        }
        write_text(&out, &text)?;
        self.record("arbtest", None, vec![out])?;
        Ok(reports)
    }

    /// Performance and association tables, per-day association, P&L
    /// histograms and the sign checks.
    pub fn report(&self) -> Result<ReportSummary> {
        let dir = self.layout.report_dir();
        self.guard(&[dir.join("table1.csv")])?;
        let surface = self.load_surface()?;
        let test = self.load_test_paths()?;
        let contract = self.contract()?;
        let params = self.params();
        let (agents, missing_agents) = self.trained_agents()?;
        for a in &missing_agents {
            log::warn!("no trained agent for alpha={a}; its rows are omitted");
        }

        let delta_ledger = rollout(&surface, &test, &contract, &params)?;
        let delta_risk: Vec<(f64, f64)> = self
            .config
            .train
            .alphas
            .iter()
            .map(|&a| Ok((a, cvar_hat(&delta_ledger.terminal_error, a)?)))
            .collect::<Result<_>>()?;

        let handles: Vec<Agent<'_>> = agents
            .iter()
            .map(|(alpha, net)| Agent {
                alpha: *alpha,
                policy: net,
            })
            .collect();
        let alphas: Vec<f64> = agents.iter().map(|(a, _)| *a).collect();
        let outcomes = evaluate_agents(&handles, &alphas, &surface, &test, &contract, &params)?;
        let table1 = build_table1(&outcomes)?;
        let table2 = build_table2(&outcomes)?;

        mkdir(&dir)?;
        let mut delta_csv = String::from("alpha,rho_delta\n");
        let mut delta_txt = format!("{:>8} {:>12}\n", "CVaR", "rho(xi_D)");
        for (a, rho) in &delta_risk {
            let _ = writeln!(delta_csv, "{a},{rho}");
            let _ = writeln!(delta_txt, "{:>8} {:>12.3}", format!("{}%", a * 100.0), rho);
        }
        write_text(&dir.join("delta_risk.csv"), &delta_csv)?;
        write_text(&dir.join("delta_risk.txt"), &delta_txt)?;
        write_text(&dir.join("table1.csv"), &table1_csv(&table1))?;
        write_text(&dir.join("table1.txt"), &table1_text(&table1))?;
        write_text(&dir.join("table2.csv"), &table2_csv(&table2))?;
        write_text(&dir.join("table2.txt"), &table2_text(&table2))?;
        for (alpha, o) in &outcomes {
            let tag = alpha_dir(*alpha);
            let days = per_day_association(o.deep.positions.view(), o.delta.positions.view())?;
            write_text(&dir.join(format!("per_day_{tag}.csv")), &per_day_csv(&days))?;
            let pnl = &o.difference.terminal_value;
            write_text(
                &dir.join(format!("hist_{tag}.csv")),
                &pnl_histogram(pnl, HISTOGRAM_BINS).to_csv(),
            )?;
            let mut raw = String::from("pnl\n");
            for v in pnl {
                let _ = writeln!(raw, "{v}");
            }
            write_text(&dir.join(format!("pnl_{tag}.csv")), &raw)?;
        }

        let summary = ReportSummary {
            delta_risk,
            checks: sign_checks(&table1),
            table1,
            table2,
            missing_agents,
            clamped_lookups: surface.clamped_queries(),
        };
        write_json(&dir.join("summary.json"), &summary)?;
        self.record("report", None, vec![dir])?;
        Ok(summary)
    }
}

impl Manifest {
    fn new(config: &RunConfig, workers: usize) -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            workers,
            stages: Vec::new(),
        }
    }
}

/// Reads a training log written by [`write_log_csv`].
pub fn read_log_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    need(path, "training log missing")?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::format(path, format!("line {}: malformed record", n + 1)))
        };
        out.push(EpochRecord {
            epoch: parse(0)? as usize,
            train_loss: parse(1)?,
            valid_cvar: parse(2)?,
            wall_time: parse(3)?,
        });
    }
    Ok(out)
}
