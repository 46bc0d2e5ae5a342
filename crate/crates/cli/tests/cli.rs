use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deephedge::config::RunConfig;

fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.contract.steps = 5;
    cfg.mc.n_paths = 2_000;
    cfg.mc.n_inner = 2_000;
    cfg.mc.moneyness_points = 9;
    cfg.mc.vol_points = 5;
    cfg.train.alphas = vec![0.5, 0.95];
    cfg.train.batch_size = 100;
    cfg.train.epochs = 1;
    cfg.paths.n_train = 300;
    cfg.paths.n_valid = 100;
    cfg.paths.n_test = 200;
    cfg.output.dir = out.to_path_buf();
    cfg
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        let cfg = tiny_config(&dir.path().join("run"));
        std::fs::write(&config, cfg.to_toml().unwrap()).unwrap();
        Self { dir, config }
    }

    fn run_dir(&self) -> PathBuf {
        self.dir.path().join("run")
    }

    fn cli(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_deephedge"))
            .arg("--config")
            .arg(&self.config)
            .arg("--workers")
            .arg("1")
            .args(args)
            .env_remove("DEEPHEDGE_OUT")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.cli(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn print_config_round_trips() {
    let out = Command::new(env!("CARGO_BIN_EXE_deephedge"))
        .args(["--profile", "full", "--print-config"])
        .env_remove("DEEPHEDGE_OUT")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed = RunConfig::from_toml(&text).unwrap();
    assert_eq!(parsed, RunConfig::profile(deephedge::config::Profile::Full));
    assert!(text
        .lines()
        .filter(|l| l.contains('='))
        .all(|l| l.contains('#')));
}

#[test]
fn out_flag_and_environment_select_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_deephedge"))
        .arg("--print-config")
        .env("DEEPHEDGE_OUT", dir.path())
        .output()
        .unwrap();
    let cfg = RunConfig::from_toml(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.output.dir, dir.path());
}

#[test]
fn bad_inputs_map_to_distinct_exit_codes() {
    let f = Fixture::new();
    // Alpha outside (0, 1) is a configuration error.
    assert_eq!(code(&f.cli(&["train", "--alpha", "1.5"])), 2);
    // Unknown profile.
    let out = Command::new(env!("CARGO_BIN_EXE_deephedge"))
        .args(["--profile", "weekly", "--print-config"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    // Training before simulating reports the missing artifact.
    let out = f.cli(&["train", "--alpha", "0.5"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));
}

#[test]
fn simulate_refuses_to_overwrite_and_is_reproducible() {
    let f = Fixture::new();
    f.ok(&["simulate"]);
    let test_paths = f.run_dir().join("paths/test.hlps");
    let first = std::fs::read(&test_paths).unwrap();
    assert_eq!(code(&f.cli(&["simulate"])), 5);
    f.ok(&["simulate", "--force"]);
    assert_eq!(std::fs::read(&test_paths).unwrap(), first);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(f.run_dir().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["stages"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["workers"], 1);
}

#[test]
fn full_tiny_pipeline() {
    let f = Fixture::new();
    f.ok(&["simulate"]);
    let price = f.ok(&["price"]);
    assert!(price.starts_with("price "));
    f.ok(&["surface"]);

    // Report with no trained agents renders the delta table only.
    let out = f.cli(&["report"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("agents not trained"));
    assert_eq!(
        std::fs::read_to_string(f.run_dir().join("report/table1.csv"))
            .unwrap()
            .lines()
            .count(),
        1
    );

    f.ok(&["train"]);
    assert!(f.run_dir().join("agents/alpha_0.95/policy.hlnn").exists());
    assert!(f.run_dir().join("agents/alpha_0.5/train_log.csv").exists());
    let eval = f.ok(&["evaluate", "--alpha", "0.95"]);
    assert_eq!(eval.lines().count(), 3);
    let arb = f.ok(&["arbtest"]);
    assert_eq!(arb.lines().count(), 2);

    // Report exit code reflects the sign checks: 0 or 6, never an error.
    let out = f.cli(&["report", "--force"]);
    let c = code(&out);
    assert!(c == 0 || c == 6, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS") || stdout.contains("FAIL"));
    for name in [
        "table1.csv",
        "table2.txt",
        "hist_alpha_0.95.csv",
        "per_day_alpha_0.5.csv",
        "summary.json",
    ] {
        assert!(f.run_dir().join("report").join(name).exists(), "{name}");
    }

    // Resume continues from the saved epoch count.
    f.ok(&["train", "--alpha", "0.5", "--resume"]);
    let log = std::fs::read_to_string(f.run_dir().join("agents/alpha_0.5/train_log.csv")).unwrap();
    assert_eq!(
        log.lines().count(),
        2,
        "epochs already complete: nothing new to run"
    );

    // A corrupted checkpoint is reported by name.
    let policy = f.run_dir().join("agents/alpha_0.95/policy.hlnn");
    std::fs::write(&policy, b"JUNKJUNKJUNK").unwrap();
    let out = f.cli(&["evaluate", "--alpha", "0.95", "--force"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("policy.hlnn") && err.contains("bad magic"),
        "{err}"
    );
}

#[test]
fn changed_config_needs_force() {
    let f = Fixture::new();
    f.ok(&["simulate"]);
    let out = f.cli(&["--seed", "9", "price"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("different configuration"));
}

#[test]
fn calibrate_on_a_returns_file() {
    let f = Fixture::new();
    let series = deephedge::garch::simulate_p(
        &deephedge::garch::GarchParams::default(),
        1.0,
        0.01,
        3000,
        1,
        4,
    )
    .unwrap()
    .log_returns(0);
    let csv = f.dir.path().join("returns.csv");
    let mut text = String::from("return\n");
    for r in series {
        text.push_str(&format!("{r}\n"));
    }
    std::fs::write(&csv, text).unwrap();
    let out = f.ok(&["calibrate", "--returns", csv.to_str().unwrap()]);
    let fit: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(fit["params"]["beta"].as_f64().unwrap() > 0.5);
    assert!(f.run_dir().join("calibration.json").exists());
}
