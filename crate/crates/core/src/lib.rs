//! Deep hedging versus delta hedging of a short European call under a
//! GJR-GARCH(1,1) market, and a test of whether their difference behaves as
//! a statistical arbitrage.
//!
//! Module map:
//!
//! - [`garch`]: P/Q path simulation and maximum-likelihood calibration.
//! - [`pricer`]: Monte Carlo call price, nested-MC delta and the delta surface.
//! - [`policy`]: the capped feed-forward hedging network and its training.
//! - [`hedge`]: self-financing rollouts, ledgers and the difference strategy.
//! - [`risk`]: empirical VaR/CVaR and the statistical-arbitrage verdict.
//! - [`analysis`]: association statistics, result tables and P&L histograms.
//! - [`config`] / [`experiment`]: run configuration and pipeline stages.

pub mod analysis;
mod binio;
pub mod config;
pub mod error;
pub mod experiment;
pub mod garch;
pub mod hedge;
pub mod policy;
pub mod pricer;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
