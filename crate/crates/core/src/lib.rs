//! Agent-based simulator for multi-asset over-collateralized lending markets.
//!
//! A population of passive borrowers is marked to market against a
//! per-minute price grid; profit-maximizing liquidators close out accounts
//! that cross their liquidation loan-to-value threshold, paying slippage
//! and trading fees on the collateral they swap. Ensembles of such runs
//! feed stress statistics and (liquidation LTV, incentive) risk-frontier
//! sweeps.

pub mod config;
pub mod error;
pub mod execution;
pub mod harness;
pub mod liquidation;
pub mod population;
pub mod prices;
pub mod protocol;
pub mod report;

pub use config::ScenarioConfig;
pub use error::{Result, SimError};
pub use harness::{run_ensemble, run_once, sweep_frontier, EnsembleStats, RunMetrics, Scenario};
pub use liquidation::LiquidationPlan;
pub use prices::{PriceGrid, TICKS_PER_DAY};
pub use protocol::{AssetParams, LiquidityMatrix, LtvThresholdDenominator, UserAccount};
