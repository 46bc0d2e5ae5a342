//! Association statistics between position processes, the per-α performance
//! table, the position-association table and P&L histograms.

use std::fmt::Write as _;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::garch::{GarchParams, PathSet};
use crate::hedge::{difference_strategy, Contract, DifferenceOutcome, HedgeStrategy};
use crate::risk::{cvar_hat, mean, stat_arb_verdict};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationStats {
    pub spearman: f64,
    pub r2: f64,
    pub kappa0: f64,
    pub kappa1: f64,
    pub n_obs: usize,
}

/// Ranks starting at 1, with tied values sharing the mean of their ranks.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn centred_moments(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let ma = mean(a);
    let mb = mean(b);
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    (ma, mb, saa, sbb, sab)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(
        a.len() == b.len(),
        "samples differ in length: {} vs {}",
        a.len(),
        b.len()
    );
    ensure!(a.len() >= 2, "correlation needs at least two observations");
    let (_, _, saa, sbb, sab) = centred_moments(a, b);
    ensure!(
        saa > 0.0 && sbb > 0.0,
        "correlation undefined for a zero-variance sample"
    );
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(
        a.len() == b.len(),
        "samples differ in length: {} vs {}",
        a.len(),
        b.len()
    );
    pearson(&midranks(a), &midranks(b))
}

fn pooled(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure!(
        a.dim() == b.dim(),
        "position matrices differ in shape: {:?} vs {:?}",
        a.dim(),
        b.dim()
    );
    Ok((a.iter().copied().collect(), b.iter().copied().collect()))
}

/// Spearman correlation of two position matrices pooled over every path and
/// rebalancing day.
pub fn spearman_pooled(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    let (x, y) = pooled(a, b)?;
    spearman(&x, &y)
}

/// OLS of `a` on `b`: `a = kappa0 + kappa1 * b + e`.
pub fn regress_slices(a: &[f64], b: &[f64]) -> Result<AssociationStats> {
    ensure!(
        a.len() == b.len(),
        "samples differ in length: {} vs {}",
        a.len(),
        b.len()
    );
    ensure!(a.len() >= 2, "regression needs at least two observations");
    let (ma, mb, saa, sbb, sab) = centred_moments(a, b);
    ensure!(sbb > 0.0, "regressor has zero variance");
    let kappa1 = sab / sbb;
    let kappa0 = ma - kappa1 * mb;
    let r2 = if saa > 0.0 {
        let sse: f64 = a
            .iter()
            .zip(b)
            .map(|(&y, &x)| (y - kappa0 - kappa1 * x).powi(2))
            .sum();
        (1.0 - sse / saa).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(AssociationStats {
        spearman: spearman(a, b)?,
        r2,
        kappa0,
        kappa1,
        n_obs: a.len(),
    })
}

/// Pooled regression of dependent positions `a` on regressor positions `b`.
pub fn regress(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<AssociationStats> {
    let (x, y) = pooled(a, b)?;
    regress_slices(&x, &y)
}

/// Association statistics for each rebalancing day separately. Days where
/// either strategy holds a constant position across paths yield `None`.
pub fn per_day_association(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
) -> Result<Vec<Option<AssociationStats>>> {
    ensure!(a.dim() == b.dim(), "position matrices differ in shape");
    Ok(a.axis_iter(Axis(1))
        .zip(b.axis_iter(Axis(1)))
        .map(|(ca, cb)| {
            let x: Vec<f64> = ca.to_vec();
            let y: Vec<f64> = cb.to_vec();
            regress_slices(&x, &y).ok()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub alpha: f64,
    /// `rho(xi_DH)`.
    pub rho_deep: f64,
    /// `rho(xi_Delta)` at the same α, kept so the gap column can be audited.
    pub rho_delta: f64,
    /// `rho(xi_DH) - rho(xi_Delta)`.
    pub rho_gap: f64,
    /// `rho(-V_T)` of the zero-capital difference strategy.
    pub rho_difference: f64,
    /// `E[V_T]` of the difference strategy.
    pub mean_difference: f64,
}

impl Table1Row {
    pub fn from_outcome(alpha: f64, outcome: &DifferenceOutcome) -> Result<Self> {
        let rho_deep = cvar_hat(&outcome.deep.terminal_error, alpha)?;
        let rho_delta = cvar_hat(&outcome.delta.terminal_error, alpha)?;
        let verdict = stat_arb_verdict(&outcome.difference.terminal_value, alpha)?;
        Ok(Self {
            alpha,
            rho_deep,
            rho_delta,
            rho_gap: rho_deep - rho_delta,
            rho_difference: verdict.rho,
            mean_difference: verdict.mean,
        })
    }

    /// Signs of (gap, difference risk, difference mean).
    pub fn signs(&self) -> [i8; 3] {
        let s = |v: f64| {
            if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            }
        };
        [
            s(self.rho_gap),
            s(self.rho_difference),
            s(self.mean_difference),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub alpha: f64,
    pub stats: AssociationStats,
}

/// A trained deep-hedging agent and the CVaR level it was trained for.
#[derive(Clone, Copy)]
pub struct Agent<'a> {
    pub alpha: f64,
    pub policy: &'a dyn HedgeStrategy,
}

/// Rolls every requested agent against the delta rule on `test_paths`.
/// Requested levels without an agent are skipped with a warning.
pub fn evaluate_agents(
    agents: &[Agent<'_>],
    alphas: &[f64],
    delta: &dyn HedgeStrategy,
    test_paths: &PathSet,
    contract: &Contract,
    params: &GarchParams,
) -> Result<Vec<(f64, DifferenceOutcome)>> {
    let mut out = Vec::new();
    for &alpha in alphas {
        let Some(agent) = agents.iter().find(|a| a.alpha == alpha) else {
            log::warn!("no trained agent for alpha={alpha}; row skipped");
            continue;
        };
        let outcome =
            difference_strategy(agent.policy, delta).rollout(test_paths, contract, params)?;
        out.push((alpha, outcome));
    }
    Ok(out)
}

pub fn build_table1(outcomes: &[(f64, DifferenceOutcome)]) -> Result<Vec<Table1Row>> {
    outcomes
        .iter()
        .map(|(alpha, o)| Table1Row::from_outcome(*alpha, o))
        .collect()
}

/// Pooled regression of deep positions on delta positions for each agent.
pub fn build_table2(outcomes: &[(f64, DifferenceOutcome)]) -> Result<Vec<Table2Row>> {
    outcomes
        .iter()
        .map(|(alpha, o)| {
            Ok(Table2Row {
                alpha: *alpha,
                stats: regress(o.deep.positions.view(), o.delta.positions.view())?,
            })
        })
        .collect()
}

pub const TABLE1_CSV_HEADER: &str =
    "alpha,rho_deep,rho_delta,rho_gap,rho_difference,mean_difference";
pub const TABLE2_CSV_HEADER: &str = "alpha,spearman,r2,kappa0,kappa1,n_obs";

pub fn table1_csv(rows: &[Table1Row]) -> String {
    let mut s = format!("{TABLE1_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.alpha, r.rho_deep, r.rho_delta, r.rho_gap, r.rho_difference, r.mean_difference
        );
    }
    s
}

pub fn table2_csv(rows: &[Table2Row]) -> String {
    let mut s = format!("{TABLE2_CSV_HEADER}\n");
    for r in rows {
        let a = &r.stats;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.alpha, a.spearman, a.r2, a.kappa0, a.kappa1, a.n_obs
        );
    }
    s
}

fn pct(alpha: f64) -> String {
    format!("{}%", (alpha * 1000.0).round() / 10.0)
}

pub fn table1_text(rows: &[Table1Row]) -> String {
    let mut s = format!(
        "{:>8} {:>12} {:>18} {:>14} {:>12}\n",
        "CVaR", "rho(xi_DH)", "rho(xi_DH)-rho(xi_D)", "rho(-V_diff)", "E[V_diff]"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>8} {:>12.3} {:>18.3} {:>14.3} {:>12.3}",
            pct(r.alpha),
            r.rho_deep,
            r.rho_gap,
            r.rho_difference,
            r.mean_difference
        );
    }
    s
}

pub fn table2_text(rows: &[Table2Row]) -> String {
    let mut s = format!(
        "{:>8} {:>10} {:>8} {:>10} {:>10} {:>10}\n",
        "CVaR", "spearman", "R2", "kappa0", "kappa1", "n_obs"
    );
    for r in rows {
        let a = &r.stats;
        let _ = writeln!(
            s,
            "{:>8} {:>10.3} {:>8.3} {:>10.4} {:>10.4} {:>10}",
            pct(r.alpha),
            a.spearman,
            a.r2,
            a.kappa0,
            a.kappa1,
            a.n_obs
        );
    }
    s
}

pub fn per_day_csv(days: &[Option<AssociationStats>]) -> String {
    let mut s = String::from("t,spearman,r2,kappa0,kappa1\n");
    for (t, d) in days.iter().enumerate() {
        match d {
            Some(a) => {
                let _ = writeln!(s, "{t},{},{},{},{}", a.spearman, a.r2, a.kappa0, a.kappa1);
            }
            None => {
                let _ = writeln!(s, "{t},,,,");
            }
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Non-finite inputs left out of the counts.
    pub dropped: usize,
}

/// Equal-width histogram over the sample range. A constant sample puts
/// everything in the first bin.
pub fn pnl_histogram(pnl: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let finite: Vec<f64> = pnl.iter().copied().filter(|v| v.is_finite()).collect();
    let dropped = pnl.len() - finite.len();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    if finite.is_empty() {
        return Histogram {
            edges: vec![0.0; bins + 1],
            counts: vec![0; bins],
            dropped,
        };
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + width * k as f64 })
        .collect();
    let mut counts = vec![0; bins];
    for v in finite {
        let k = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    Histogram {
        edges,
        counts,
        dropped,
    }
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("edge_lo,edge_hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", self.edges[k], self.edges[k + 1], c);
        }
        s
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::simulate_p;
    use crate::hedge::{ConstantPosition, FnStrategy, StepState};
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn midranks_share_tied_ranks() {
        assert_eq!(midranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_of_monotone_transform_is_one() {
        let a = Array2::from_shape_fn((30, 5), |(i, j)| ((i * 7 + j * 13) % 17) as f64 - 8.0);
        let b = a.mapv(f64::exp);
        assert_eq!(spearman_pooled(a.view(), b.view()).unwrap(), 1.0);
        let c = a.mapv(|v| -v);
        assert_eq!(spearman_pooled(a.view(), c.view()).unwrap(), -1.0);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let a = Array2::from_elem((4, 3), 1.0);
        let b = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
        assert!(spearman_pooled(a.view(), b.view()).is_err());
        assert!(regress(b.view(), a.view()).is_err());
    }

    #[test]
    fn exact_linear_relation() {
        let b = Array2::from_shape_fn((10, 4), |(i, j)| (i as f64).sin() + j as f64);
        let a = b.mapv(|v| 2.0 * v + 3.0);
        let s = regress(a.view(), b.view()).unwrap();
        assert!((s.kappa1 - 2.0).abs() < 1e-12 && (s.kappa0 - 3.0).abs() < 1e-12);
        assert!((s.r2 - 1.0).abs() < 1e-12);
        assert_eq!(s.n_obs, 40);
    }

    #[test]
    fn independent_noise_has_small_r2() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(3, 0);
        let a: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..20_000).map(|_| rng.gen::<f64>()).collect();
        let s = regress_slices(&a, &b).unwrap();
        assert!(s.r2 < 1e-3, "{}", s.r2);
    }

    proptest! {
        #[test]
        fn r2_is_squared_pearson(pairs in prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..60)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let (Ok(s), Ok(r)) = (regress_slices(&a, &b), pearson(&a, &b)) {
                prop_assert!((s.r2 - r * r).abs() < 1e-12);
            }
        }

        #[test]
        fn spearman_invariant_under_increasing_maps(a in prop::collection::vec(-5.0..5.0f64, 3..40), b in prop::collection::vec(-5.0..5.0f64, 3..40)) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            if let Ok(base) = spearman(a, b) {
                let ta: Vec<f64> = a.iter().map(|v| v.powi(3) + 2.0 * v).collect();
                let tb: Vec<f64> = b.iter().map(|v| v.exp()).collect();
                prop_assert_eq!(spearman(&ta, &tb).unwrap(), base);
                prop_assert!((-1.0..=1.0).contains(&base));
            }
        }
    }

    #[test]
    fn histogram_edge_cases() {
        let h = pnl_histogram(&[2.0; 50], 10);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 50);
        let h = pnl_histogram(&[1.0, 5.0, -3.0, f64::NAN], 1);
        assert_eq!(h.counts, vec![3]);
        assert_eq!(h.dropped, 1);
        assert_eq!(h.edges, vec![-3.0, 5.0]);
        let h = pnl_histogram(&[0.0, 1.0, 2.0, 3.0], 3);
        assert_eq!(h.counts, vec![1, 1, 2]);
        assert!(h.to_csv().starts_with("edge_lo,edge_hi,count\n"));
    }

    fn setup() -> (PathSet, Contract, GarchParams) {
        let params = GarchParams::default();
        let paths = simulate_p(&params, 100.0, 0.01, 10, 300, 8).unwrap();
        let contract = Contract {
            strike: 100.0,
            steps: 10,
            v0: 1.2,
        };
        (paths, contract, params)
    }

    #[test]
    fn strategy_against_itself_gives_zero_difference_columns() {
        let (paths, contract, params) = setup();
        let rule = FnStrategy::new("half", |s: &StepState<'_>, out: &mut [f64]| {
            for (o, &p) in out.iter_mut().zip(s.prices) {
                *o = if p > 100.0 { 0.7 } else { 0.3 };
            }
        });
        let agents = [Agent {
            alpha: 0.9,
            policy: &rule,
        }];
        let outcomes =
            evaluate_agents(&agents, &[0.9, 0.5], &rule, &paths, &contract, &params).unwrap();
        assert_eq!(outcomes.len(), 1, "missing agent row must be skipped");
        let rows = build_table1(&outcomes).unwrap();
        assert_eq!(rows[0].rho_gap, 0.0);
        assert_eq!(rows[0].rho_difference, 0.0);
        assert_eq!(rows[0].mean_difference, 0.0);
        let t2 = build_table2(&outcomes).unwrap();
        assert!((t2[0].stats.r2 - 1.0).abs() < 1e-12);
        assert_eq!(t2[0].stats.spearman, 1.0);
    }

    #[test]
    fn gap_column_recovers_delta_risk() {
        let (paths, contract, params) = setup();
        let a = ConstantPosition(0.2);
        let b = ConstantPosition(0.6);
        let delta = FnStrategy::new("rule", |s: &StepState<'_>, out: &mut [f64]| {
            for (o, &p) in out.iter_mut().zip(s.prices) {
                *o = p / 200.0;
            }
        });
        let agents = [
            Agent {
                alpha: 0.5,
                policy: &a,
            },
            Agent {
                alpha: 0.95,
                policy: &b,
            },
        ];
        let outcomes =
            evaluate_agents(&agents, &[0.5, 0.95], &delta, &paths, &contract, &params).unwrap();
        for row in build_table1(&outcomes).unwrap() {
            assert_eq!(row.rho_deep - row.rho_gap, row.rho_delta);
        }
        let text = table1_text(&build_table1(&outcomes).unwrap());
        assert_eq!(text.lines().count(), 3);
        assert!(table1_csv(&[]).starts_with(TABLE1_CSV_HEADER));
    }
}
