//! Run orchestration: single seeded runs, parallel ensembles with quantile
//! bands, and (liquidation LTV, incentive) frontier sweeps.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::liquidation::{self, TickSettings};
use crate::population::{self, PopulationParams};
use crate::prices::{self, History, PriceGrid, TICKS_PER_DAY};
use crate::protocol::{
    is_undercollateralized, user_ltv, AssetParams, LiquidityMatrix, LtvThresholdDenominator,
    UserAccount,
};

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum PopulationSource {
    Generated(PopulationParams),
    /// Every run reuses this exact population (loaded from CSV).
    Fixed(Vec<UserAccount>),
}

#[derive(Debug, Clone)]
pub enum PriceProvider {
    /// Fresh correlated grid per run; volatilities are already effective
    /// (multiplier or explicit targets baked in at resolution).
    Synthetic {
        initial: Vec<f64>,
        hourly_vols: Vec<f64>,
        pegged: Vec<bool>,
        correlation: Option<Vec<Vec<f64>>>,
    },
    /// Fresh historical window per run, optionally rescaled.
    Sampled {
        history: Arc<History>,
        /// Explicit per-asset targets; `None` entries stay untouched.
        targets: Option<Vec<Option<f64>>>,
        multiplier: f64,
    },
    /// One grid for every run (replay mode).
    Fixed(PriceGrid),
}

/// A fully resolved, runnable scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub assets: Vec<AssetParams>,
    pub liquidity: LiquidityMatrix,
    pub population: PopulationSource,
    pub prices: PriceProvider,
    pub n_users: usize,
    pub n_runs: usize,
    pub master_seed: u64,
    pub trading_fee: f64,
    pub ltv_mode: LtvThresholdDenominator,
    pub repeat_within_tick: bool,
    /// `(populations, grids)`: run k pairs population k/grids with grid
    /// k%grids, crossing the two pools.
    pub crossed: Option<(usize, usize)>,
}

const STREAMS_PER_RUN: u64 = 4;
const STREAM_GRID: u64 = 0;
const STREAM_POPULATION: u64 = 1;

/// Independent deterministic stream: a pure function of (seed, stream id).
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

impl Scenario {
    pub fn symbols(&self) -> Vec<String> {
        self.assets.iter().map(|a| a.symbol.clone()).collect()
    }

    /// (population stream index, grid stream index) for one run.
    fn stream_ids(&self, run_index: usize) -> (u64, u64) {
        match self.crossed {
            Some((_, grids)) => ((run_index / grids) as u64, (run_index % grids) as u64),
            None => (run_index as u64, run_index as u64),
        }
    }

    pub fn grid_for_run(&self, run_index: usize) -> Result<PriceGrid> {
        let (_, grid_id) = self.stream_ids(run_index);
        let mut rng = stream_rng(self.master_seed, grid_id * STREAMS_PER_RUN + STREAM_GRID);
        match &self.prices {
            PriceProvider::Synthetic { initial, hourly_vols, pegged, correlation } => {
                prices::synthetic_grid(initial, hourly_vols, pegged, correlation.as_deref(), &mut rng)
            }
            PriceProvider::Sampled { history, targets, multiplier } => {
                let grid = prices::sample_window(history, &self.assets, &mut rng)?;
                if let Some(targets) = targets {
                    prices::rescale_to_vol(&grid, targets)
                } else if *multiplier != 1.0 {
                    let targets: Vec<Option<f64>> = self
                        .assets
                        .iter()
                        .enumerate()
                        .map(|(i, a)| {
                            (!a.is_numeraire_pegged).then(|| {
                                multiplier * prices::realized_hourly_vol(&grid.asset_series(i))
                            })
                        })
                        .collect();
                    prices::rescale_to_vol(&grid, &targets)
                } else {
                    Ok(grid)
                }
            }
            PriceProvider::Fixed(grid) => Ok(grid.clone()),
        }
    }

    pub fn population_for_run(&self, run_index: usize, initial_prices: &[f64]) -> Result<Vec<UserAccount>> {
        match &self.population {
            PopulationSource::Fixed(users) => Ok(users.clone()),
            PopulationSource::Generated(params) => {
                let (pop_id, _) = self.stream_ids(run_index);
                let mut rng =
                    stream_rng(self.master_seed, pop_id * STREAMS_PER_RUN + STREAM_POPULATION);
                population::generate_population(
                    params,
                    &self.assets,
                    self.n_users,
                    initial_prices,
                    &mut rng,
                )
            }
        }
    }

    fn tick_settings(&self) -> TickSettings {
        TickSettings {
            trading_fee: self.trading_fee,
            ltv_mode: self.ltv_mode,
            repeat_within_tick: self.repeat_within_tick,
        }
    }
}

// ---------------------------------------------------------------------------
// Per-run metrics
// ---------------------------------------------------------------------------

/// Per-tick series and end-of-run aggregates for one simulation run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    /// Mean LTV over accounts that still hold collateral.
    pub mean_ltv: Vec<f64>,
    /// Cumulative seized collateral value.
    pub liquidated_funds_cum: Vec<f64>,
    /// Outstanding loan value as a percent of the initial loan value.
    pub outstanding_debt_pct: Vec<f64>,
    /// Liquidation events in each minute (not cumulative).
    pub liquidation_events: Vec<u32>,
    pub liquidator_profit_cum: Vec<f64>,
    pub slippage_fees_cum: Vec<f64>,
    pub trading_fees_cum: Vec<f64>,
    pub final_undercollateralized_fraction: f64,
    pub final_mean_ltv: f64,
    /// Per-user final (LTV, net portfolio value); LTV is +inf for frozen
    /// accounts.
    pub final_scatter: Vec<(f64, f64)>,
}

/// Runs the full day: population and grid from the run's derived streams,
/// then 1440 ticks of mark-to-market plus liquidation, recording metrics
/// after each tick.
pub fn run_once(scenario: &Scenario, run_index: usize) -> Result<RunMetrics> {
    let grid = scenario.grid_for_run(run_index)?;
    let initial_prices = grid.initial_prices();
    let mut users = scenario.population_for_run(run_index, initial_prices)?;
    let n_users = users.len();
    let initial_loans: f64 = users.iter().map(|u| u.loan_value(initial_prices)).sum();
    let settings = scenario.tick_settings();

    let mut m = RunMetrics {
        mean_ltv: Vec::with_capacity(TICKS_PER_DAY),
        liquidated_funds_cum: Vec::with_capacity(TICKS_PER_DAY),
        outstanding_debt_pct: Vec::with_capacity(TICKS_PER_DAY),
        liquidation_events: Vec::with_capacity(TICKS_PER_DAY),
        liquidator_profit_cum: Vec::with_capacity(TICKS_PER_DAY),
        slippage_fees_cum: Vec::with_capacity(TICKS_PER_DAY),
        trading_fees_cum: Vec::with_capacity(TICKS_PER_DAY),
        final_undercollateralized_fraction: 0.0,
        final_mean_ltv: 0.0,
        final_scatter: Vec::with_capacity(n_users),
    };

    let (mut funds, mut profit, mut slippage, mut trading) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for tick in 0..TICKS_PER_DAY {
        let tick_prices = grid.tick_prices(tick);
        let plans = liquidation::liquidation_tick(
            &mut users,
            &scenario.assets,
            &scenario.liquidity,
            tick_prices,
            tick,
            &settings,
        );
        for p in &plans {
            funds += p.seize;
            profit += p.profit;
            // book the fee residual symmetrically: a - p = profit + 2*sigma*a + 2*t*a
            slippage += 2.0 * p.slippage_fee;
            trading += 2.0 * p.trading_fee;
        }

        let mut ltv_sum = 0.0;
        let mut live = 0usize;
        let mut loans_now = 0.0;
        for u in &users {
            let c = u.collateral_value(tick_prices);
            let l = u.loan_value(tick_prices);
            loans_now += l;
            if c > 0.0 {
                ltv_sum += l / c;
                live += 1;
            }
        }
        m.mean_ltv.push(if live > 0 { ltv_sum / live as f64 } else { 0.0 });
        m.liquidated_funds_cum.push(funds);
        m.outstanding_debt_pct.push(if initial_loans > 0.0 {
            100.0 * loans_now / initial_loans
        } else {
            0.0
        });
        m.liquidation_events.push(plans.len() as u32);
        m.liquidator_profit_cum.push(profit);
        m.slippage_fees_cum.push(slippage);
        m.trading_fees_cum.push(trading);
    }

    let last_prices = grid.tick_prices(TICKS_PER_DAY - 1);
    let undercollateralized =
        users.iter().filter(|u| is_undercollateralized(u, last_prices)).count();
    m.final_undercollateralized_fraction = undercollateralized as f64 / n_users as f64;
    m.final_mean_ltv = *m.mean_ltv.last().expect("one day of ticks");
    m.final_scatter = users
        .iter()
        .map(|u| (user_ltv(u, last_prices), crate::protocol::portfolio_value(u, last_prices)))
        .collect();
    Ok(m)
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Per-tick mean with empirical 2.5%/97.5% bands across runs.
#[derive(Debug, Clone)]
pub struct SeriesBand {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct ScalarStats {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct ScatterPoint {
    pub run: usize,
    pub user: usize,
    pub ltv: f64,
    pub portfolio: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub n_runs: usize,
    pub failures: Vec<(usize, String)>,
    pub mean_ltv: SeriesBand,
    pub liquidated_funds_cum: SeriesBand,
    pub outstanding_debt_pct: SeriesBand,
    pub liquidation_events: SeriesBand,
    pub liquidator_profit_cum: SeriesBand,
    pub slippage_fees_cum: SeriesBand,
    pub trading_fees_cum: SeriesBand,
    pub final_undercollateralized: ScalarStats,
    pub final_mean_ltv: ScalarStats,
    /// Pooled per-user final (LTV, portfolio) points across all runs.
    pub scatter: Vec<ScatterPoint>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn scalar_stats(values: &[f64]) -> ScalarStats {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mean =
        if sorted.is_empty() { 0.0 } else { sorted.iter().sum::<f64>() / sorted.len() as f64 };
    // bands must always bracket the mean, even under extreme skew
    ScalarStats { mean, lo: quantile(&sorted, 0.025).min(mean), hi: quantile(&sorted, 0.975).max(mean) }
}

fn series_band<F>(runs: &[RunMetrics], extract: F) -> SeriesBand
where
    F: Fn(&RunMetrics, usize) -> f64,
{
    let mut mean = Vec::with_capacity(TICKS_PER_DAY);
    let mut lo = Vec::with_capacity(TICKS_PER_DAY);
    let mut hi = Vec::with_capacity(TICKS_PER_DAY);
    let mut column = vec![0.0f64; runs.len()];
    for t in 0..TICKS_PER_DAY {
        for (k, r) in runs.iter().enumerate() {
            column[k] = extract(r, t);
        }
        let m = column.iter().sum::<f64>() / column.len().max(1) as f64;
        column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        mean.push(m);
        lo.push(quantile(&column, 0.025).min(m));
        hi.push(quantile(&column, 0.975).max(m));
    }
    SeriesBand { mean, lo, hi }
}

/// Pooled per-user final (LTV, portfolio) scatter across completed runs.
pub fn aggregate_final_distribution(runs: &[RunMetrics]) -> Vec<ScatterPoint> {
    runs.iter()
        .enumerate()
        .flat_map(|(run, r)| {
            r.final_scatter
                .iter()
                .enumerate()
                .map(move |(user, &(ltv, portfolio))| ScatterPoint { run, user, ltv, portfolio })
        })
        .collect()
}

/// Runs `scenario.n_runs` independent runs in parallel and aggregates the
/// bands. Individual failures are tolerated up to 1% of the ensemble.
pub fn run_ensemble(scenario: &Scenario) -> Result<EnsembleStats> {
    let results: Vec<(usize, Result<RunMetrics>)> = (0..scenario.n_runs)
        .into_par_iter()
        .map(|k| (k, run_once(scenario, k)))
        .collect();

    let mut runs = Vec::with_capacity(scenario.n_runs);
    let mut failures = Vec::new();
    for (k, r) in results {
        match r {
            Ok(m) => runs.push(m),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    if failures.len() as f64 > 0.01 * scenario.n_runs as f64 {
        let (k, e) = &failures[0];
        return Err(SimError::Generation(format!(
            "{} of {} runs failed (first: run {k}: {e})",
            failures.len(),
            scenario.n_runs
        )));
    }

    let finals: Vec<f64> = runs.iter().map(|r| r.final_undercollateralized_fraction).collect();
    let final_ltvs: Vec<f64> = runs.iter().map(|r| r.final_mean_ltv).collect();
    Ok(EnsembleStats {
        n_runs: runs.len(),
        failures,
        mean_ltv: series_band(&runs, |r, t| r.mean_ltv[t]),
        liquidated_funds_cum: series_band(&runs, |r, t| r.liquidated_funds_cum[t]),
        outstanding_debt_pct: series_band(&runs, |r, t| r.outstanding_debt_pct[t]),
        liquidation_events: series_band(&runs, |r, t| r.liquidation_events[t] as f64),
        liquidator_profit_cum: series_band(&runs, |r, t| r.liquidator_profit_cum[t]),
        slippage_fees_cum: series_band(&runs, |r, t| r.slippage_fees_cum[t]),
        trading_fees_cum: series_band(&runs, |r, t| r.trading_fees_cum[t]),
        final_undercollateralized: scalar_stats(&finals),
        final_mean_ltv: scalar_stats(&final_ltvs),
        scatter: aggregate_final_distribution(&runs),
    })
}

// ---------------------------------------------------------------------------
// Frontier sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SweepCell {
    pub liq_ltv: f64,
    pub incentive: f64,
    pub undercollateralized_fraction: f64,
    pub final_mean_ltv: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FrontierPoint {
    pub liq_ltv: f64,
    pub incentive: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub threshold: f64,
    /// Full grid surface in (liqLtv-major, incentive ascending) order.
    pub surface: Vec<SweepCell>,
    /// Per liqLtv column, the first incentive whose mean undercollateralized
    /// fraction exceeds the threshold.
    pub boundary: Vec<FrontierPoint>,
}

/// Overrides every non-pegged asset with the cell's thresholds. The borrow
/// cap follows the liquidation threshold so initial LTVs can approach it.
fn apply_cell(template: &Scenario, liq_ltv: f64, incentive: f64) -> Scenario {
    let mut s = template.clone();
    for a in &mut s.assets {
        if !a.is_numeraire_pegged {
            a.liq_ltv = liq_ltv;
            a.max_ltv = liq_ltv;
            a.liquidation_incentive = incentive;
        }
    }
    s
}

/// Maps the undercollateralization surface over a (liqLtv, incentive) grid
/// and extracts the risk frontier. Every cell sees the same RNG streams so
/// cells differ only in their parameters.
pub fn sweep_frontier(
    template: &Scenario,
    liq_ltv_grid: &[f64],
    incentive_grid: &[f64],
    threshold: f64,
) -> Result<SweepResult> {
    if liq_ltv_grid.is_empty() || incentive_grid.is_empty() {
        return Err(SimError::InvalidInput("sweep grids must be non-empty".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(SimError::InvalidInput(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let cells: Vec<(f64, f64)> = liq_ltv_grid
        .iter()
        .flat_map(|&l| incentive_grid.iter().map(move |&i| (l, i)))
        .collect();

    let surface: Vec<SweepCell> = cells
        .par_iter()
        .map(|&(liq_ltv, incentive)| -> Result<SweepCell> {
            let scenario = apply_cell(template, liq_ltv, incentive);
            let mut fraction_sum = 0.0;
            let mut ltv_sum = 0.0;
            for run in 0..scenario.n_runs {
                let m = run_once(&scenario, run)?;
                fraction_sum += m.final_undercollateralized_fraction;
                ltv_sum += m.final_mean_ltv;
            }
            Ok(SweepCell {
                liq_ltv,
                incentive,
                undercollateralized_fraction: fraction_sum / scenario.n_runs as f64,
                final_mean_ltv: ltv_sum / scenario.n_runs as f64,
            })
        })
        .collect::<Result<_>>()?;

    let mut boundary = Vec::new();
    for &liq_ltv in liq_ltv_grid {
        let first = surface
            .iter()
            .filter(|c| c.liq_ltv == liq_ltv && c.undercollateralized_fraction > threshold)
            .min_by(|a, b| a.incentive.total_cmp(&b.incentive));
        if let Some(cell) = first {
            boundary.push(FrontierPoint { liq_ltv, incentive: cell.incentive });
        }
    }
    Ok(SweepResult { threshold, surface, boundary })
}
