//! `lendsim` — scenario runner for the lending-market risk simulator.
//!
//! Subcommands map onto the harness: `simulate` runs a Monte Carlo ensemble,
//! `replay` re-runs a fixed historical day across fresh populations, `sweep`
//! maps the (liquidation LTV, incentive) risk frontier, and the `gen-*`
//! commands produce population and price CSVs for replays.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration/input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lendsim_core::config::{PriceSourceKind, ScenarioConfig};
use lendsim_core::harness::{
    run_ensemble, stream_rng, sweep_frontier, EnsembleStats, PriceProvider, Scenario, SweepResult,
};
use lendsim_core::population::write_population_csv;
use lendsim_core::prices::{synthetic_grid, TICKS_PER_DAY};
use lendsim_core::report;

#[derive(Parser)]
#[command(name = "lendsim", version, about = "Agent-based lending-market risk simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo ensemble and write a result bundle
    Simulate(SimulateArgs),
    /// Re-run one fixed historical day across freshly sampled populations
    Replay(ReplayArgs),
    /// Sweep the (liquidation LTV, incentive) grid and emit the risk frontier
    Sweep(SweepArgs),
    /// Generate one population and dump it as CSV
    GenPopulation(GenPopulationArgs),
    /// Generate synthetic minute-bar price history as CSV
    GenPrices(GenPricesArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's masterSeed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for the result bundle
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Paper-scale ensembles (simulate/replay: 1000 users x 1000 runs;
    /// sweep: 2000 users x 200 runs per cell). Expect long runtimes.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Multiply every asset's volatility by this factor
    #[arg(long)]
    vol_multiplier: Option<f64>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Replay the day starting at this UTC date (YYYY-MM-DD)
    #[arg(long, conflicts_with = "worst_drawdown")]
    date: Option<String>,
    /// Replay the worst-drawdown day of this asset
    #[arg(long)]
    worst_drawdown: Option<String>,
    /// Multiply every asset's volatility by this factor
    #[arg(long)]
    vol_multiplier: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Liquidation-LTV grid as lo:hi:step
    #[arg(long, default_value = "0.50:0.95:0.05")]
    liq_ltv_grid: String,
    /// Incentive grid as lo:hi:step
    #[arg(long, default_value = "0.01:0.49:0.02")]
    inc_grid: String,
    /// Undercollateralized-fraction threshold defining the frontier
    #[arg(long, default_value_t = 0.01)]
    threshold: f64,
}

#[derive(Args)]
struct GenPopulationArgs {
    /// Scenario config file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's masterSeed
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenPricesArgs {
    /// Scenario config file (TOML, synthetic price source)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's masterSeed
    #[arg(long)]
    seed: Option<u64>,
    /// Days of history to generate
    #[arg(long, default_value_t = 3)]
    days: u32,
    /// UTC date of the first generated day
    #[arg(long, default_value = "2020-02-19")]
    start_date: String,
    /// Output CSV file
    #[arg(long)]
    out: PathBuf,
    /// Emit a single day grid dump (minute,asset,price) instead of history
    #[arg(long)]
    grid: bool,
}

/// Error carrying the process exit code.
struct AppError {
    code: u8,
    err: anyhow::Error,
}

type AppResult<T> = Result<T, AppError>;

trait Exit<T> {
    fn or_config_error(self) -> AppResult<T>;
    fn or_runtime_error(self) -> AppResult<T>;
}

impl<T, E: Into<anyhow::Error>> Exit<T> for Result<T, E> {
    fn or_config_error(self) -> AppResult<T> {
        self.map_err(|e| AppError { code: 2, err: e.into() })
    }
    fn or_runtime_error(self) -> AppResult<T> {
        self.map_err(|e| AppError { code: 1, err: e.into() })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::GenPopulation(args) => cmd_gen_population(args),
        Command::GenPrices(args) => cmd_gen_prices(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

// ---------------------------------------------------------------------------
// Config loading
// ---------------------------------------------------------------------------

/// Loads the config and applies CLI overrides. Relative data paths are
/// pinned to the config file's directory so the echoed config reproduces
/// the run from anywhere.
fn load_config(path: &Path, seed: Option<u64>) -> AppResult<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path).or_config_error()?;
    let base = path.parent().unwrap_or(Path::new("."));
    let absolutize = |p: &mut Option<PathBuf>| {
        if let Some(rel) = p {
            if rel.is_relative() {
                *p = Some(base.join(&rel));
            }
        }
    };
    absolutize(&mut cfg.prices.csv_path);
    absolutize(&mut cfg.population.csv_path);
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn apply_vol_multiplier(cfg: &mut ScenarioConfig, multiplier: Option<f64>) -> AppResult<()> {
    if let Some(m) = multiplier {
        if cfg.prices.hourly_vol_targets.is_some() {
            return Err(anyhow!("--vol-multiplier conflicts with prices.hourlyVolTargets"))
                .or_config_error();
        }
        cfg.prices.vol_multiplier = m;
    }
    Ok(())
}

fn thread_pool(threads: Option<usize>) -> AppResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("building worker pool")
        .or_runtime_error()
}

fn prepare_out_dir(dir: &Path, cfg: &ScenarioConfig) -> AppResult<()> {
    fs::create_dir_all(dir).or_runtime_error()?;
    let echo = cfg.to_toml_string().or_config_error()?;
    fs::write(dir.join("config_echo.toml"), echo).or_runtime_error()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Summary document
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ScalarSummary {
    mean: f64,
    #[serde(rename = "p2_5")]
    p2_5: f64,
    #[serde(rename = "p97_5")]
    p97_5: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RunSummary {
    command: String,
    name: String,
    version: String,
    seed: u64,
    n_runs: usize,
    n_users: usize,
    failures: Vec<String>,
    undercollateralized_fraction: ScalarSummary,
    final_mean_ltv: ScalarSummary,
    total_liquidated_funds_mean: f64,
    liquidator_profit_mean: f64,
    slippage_fees_mean: f64,
    trading_fees_mean: f64,
}

fn write_bundle(
    dir: &Path,
    command: &str,
    scenario: &Scenario,
    stats: &EnsembleStats,
) -> AppResult<()> {
    report::write_series_files(dir, stats).or_runtime_error()?;
    report::write_final_distribution(dir, &stats.scatter).or_runtime_error()?;
    let last = TICKS_PER_DAY - 1;
    let summary = RunSummary {
        command: command.into(),
        name: scenario.name.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: scenario.master_seed,
        n_runs: scenario.n_runs,
        n_users: scenario.n_users,
        failures: stats.failures.iter().map(|(k, e)| format!("run {k}: {e}")).collect(),
        undercollateralized_fraction: ScalarSummary {
            mean: stats.final_undercollateralized.mean,
            p2_5: stats.final_undercollateralized.lo,
            p97_5: stats.final_undercollateralized.hi,
        },
        final_mean_ltv: ScalarSummary {
            mean: stats.final_mean_ltv.mean,
            p2_5: stats.final_mean_ltv.lo,
            p97_5: stats.final_mean_ltv.hi,
        },
        total_liquidated_funds_mean: stats.liquidated_funds_cum.mean[last],
        liquidator_profit_mean: stats.liquidator_profit_cum.mean[last],
        slippage_fees_mean: stats.slippage_fees_cum.mean[last],
        trading_fees_mean: stats.trading_fees_cum.mean[last],
    };
    let json = serde_json::to_string_pretty(&summary).or_runtime_error()?;
    fs::write(dir.join("summary.json"), json).or_runtime_error()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_simulate(args: SimulateArgs) -> AppResult<()> {
    let mut cfg = load_config(&args.common.config, args.common.seed)?;
    apply_vol_multiplier(&mut cfg, args.vol_multiplier)?;
    if args.common.full_scale {
        cfg.n_users = 1000;
        cfg.n_runs = 1000;
    }
    let scenario = cfg.resolve(Path::new(".")).or_config_error()?;
    prepare_out_dir(&args.common.out, &cfg)?;
    let pool = thread_pool(args.common.threads)?;
    let stats = pool.install(|| run_ensemble(&scenario)).or_runtime_error()?;
    write_bundle(&args.common.out, "simulate", &scenario, &stats)?;
    println!(
        "simulate {}: {} runs x {} users; undercollateralized fraction {:.6}; bundle in {}",
        scenario.name,
        stats.n_runs,
        scenario.n_users,
        stats.final_undercollateralized.mean,
        args.common.out.display()
    );
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> AppResult<()> {
    let mut cfg = load_config(&args.common.config, args.common.seed)?;
    apply_vol_multiplier(&mut cfg, args.vol_multiplier)?;
    if args.common.full_scale {
        cfg.n_users = 1000;
        cfg.n_runs = 1000;
    }
    if cfg.prices.csv_path.is_none() {
        return Err(anyhow!("replay requires a price history: set prices.csvPath"))
            .or_config_error();
    }
    cfg.prices.source = PriceSourceKind::HistoricalReplay;
    if let Some(date) = &args.date {
        cfg.prices.replay_date = Some(date.clone());
        cfg.prices.worst_drawdown_asset = None;
    }
    if let Some(asset) = &args.worst_drawdown {
        cfg.prices.worst_drawdown_asset = Some(asset.clone());
        cfg.prices.replay_date = None;
    }
    if cfg.prices.replay_date.is_none() && cfg.prices.worst_drawdown_asset.is_none() {
        return Err(anyhow!("replay needs --date or --worst-drawdown")).or_config_error();
    }
    let scenario = cfg.resolve(Path::new(".")).or_config_error()?;

    prepare_out_dir(&args.common.out, &cfg)?;
    // the replayed grid itself is part of the bundle
    if let PriceProvider::Fixed(grid) = &scenario.prices {
        let mut buf = Vec::new();
        grid.write_debug_csv(&mut buf, &scenario.symbols()).or_runtime_error()?;
        fs::write(args.common.out.join("grid.csv"), buf).or_runtime_error()?;
    }
    let pool = thread_pool(args.common.threads)?;
    let stats = pool.install(|| run_ensemble(&scenario)).or_runtime_error()?;
    write_bundle(&args.common.out, "replay", &scenario, &stats)?;
    println!(
        "replay {}: {} runs x {} users on the fixed day; bundle in {}",
        scenario.name,
        stats.n_runs,
        scenario.n_users,
        args.common.out.display()
    );
    Ok(())
}

fn parse_grid(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(anyhow!("grid `{spec}` must be lo:hi:step"));
    }
    let lo: f64 = parts[0].parse().context("grid lo")?;
    let hi: f64 = parts[1].parse().context("grid hi")?;
    let step: f64 = parts[2].parse().context("grid step")?;
    if !(step > 0.0) || hi < lo {
        return Err(anyhow!("grid `{spec}` must satisfy lo <= hi, step > 0"));
    }
    let mut grid = Vec::new();
    let mut k = 0;
    loop {
        let v = lo + step * k as f64;
        if v > hi + 1e-12 {
            break;
        }
        grid.push(v);
        k += 1;
    }
    Ok(grid)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SweepSummary {
    command: String,
    name: String,
    version: String,
    seed: u64,
    n_runs_per_cell: usize,
    n_users: usize,
    threshold: f64,
    cells: usize,
    boundary_points: usize,
}

fn cmd_sweep(args: SweepArgs) -> AppResult<()> {
    let mut cfg = load_config(&args.common.config, args.common.seed)?;
    if args.common.full_scale {
        cfg.n_users = 2000;
        cfg.n_runs = 200;
    }
    let liq_grid = parse_grid(&args.liq_ltv_grid).or_config_error()?;
    let inc_grid = parse_grid(&args.inc_grid).or_config_error()?;
    let scenario = cfg.resolve(Path::new(".")).or_config_error()?;
    prepare_out_dir(&args.common.out, &cfg)?;
    let pool = thread_pool(args.common.threads)?;
    let result: SweepResult = pool
        .install(|| sweep_frontier(&scenario, &liq_grid, &inc_grid, args.threshold))
        .or_runtime_error()?;
    report::write_sweep(&args.common.out, &result).or_runtime_error()?;
    let summary = SweepSummary {
        command: "sweep".into(),
        name: scenario.name.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: scenario.master_seed,
        n_runs_per_cell: scenario.n_runs,
        n_users: scenario.n_users,
        threshold: args.threshold,
        cells: result.surface.len(),
        boundary_points: result.boundary.len(),
    };
    fs::write(
        args.common.out.join("summary.json"),
        serde_json::to_string_pretty(&summary).or_runtime_error()?,
    )
    .or_runtime_error()?;
    println!(
        "sweep {}: {} cells, {} boundary points above threshold {}; bundle in {}",
        scenario.name,
        result.surface.len(),
        result.boundary.len(),
        args.threshold,
        args.common.out.display()
    );
    Ok(())
}

fn cmd_gen_population(args: GenPopulationArgs) -> AppResult<()> {
    let cfg = load_config(&args.config, args.seed)?;
    let scenario = cfg.resolve(Path::new(".")).or_config_error()?;
    let grid = scenario.grid_for_run(0).or_runtime_error()?;
    let users = scenario
        .population_for_run(0, grid.initial_prices())
        .or_runtime_error()?;
    let mut buf = Vec::new();
    write_population_csv(&mut buf, &users, &scenario.symbols()).or_runtime_error()?;
    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent).or_runtime_error()?;
    }
    fs::write(&args.out, buf).or_runtime_error()?;
    println!("gen-population: {} users -> {}", users.len(), args.out.display());
    Ok(())
}

fn cmd_gen_prices(args: GenPricesArgs) -> AppResult<()> {
    let cfg = load_config(&args.config, args.seed)?;
    let scenario = cfg.resolve(Path::new(".")).or_config_error()?;
    let PriceProvider::Synthetic { initial, hourly_vols, pegged, correlation } = &scenario.prices
    else {
        return Err(anyhow!("gen-prices needs a config with prices.source = \"synthetic\""))
            .or_config_error();
    };
    let start = chrono::NaiveDate::parse_from_str(&args.start_date, "%Y-%m-%d")
        .map_err(|_| anyhow!("bad --start-date `{}`, want YYYY-MM-DD", args.start_date))
        .or_config_error()?
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp();
    if args.days == 0 {
        return Err(anyhow!("--days must be at least 1")).or_config_error();
    }

    let symbols = scenario.symbols();
    if let Some(parent) = args.out.parent() {
        fs::create_dir_all(parent).or_runtime_error()?;
    }

    if args.grid {
        let mut rng = stream_rng(scenario.master_seed, 0);
        let grid = synthetic_grid(initial, hourly_vols, pegged, correlation.as_deref(), &mut rng)
            .or_runtime_error()?;
        let mut buf = Vec::new();
        grid.write_debug_csv(&mut buf, &symbols).or_runtime_error()?;
        fs::write(&args.out, buf).or_runtime_error()?;
        println!("gen-prices: one day grid dump -> {}", args.out.display());
        return Ok(());
    }

    let mut body = String::from("timestamp,asset,price\n");
    let mut anchor = initial.clone();
    for day in 0..args.days {
        let mut rng = stream_rng(scenario.master_seed, day as u64);
        let grid = synthetic_grid(&anchor, hourly_vols, pegged, correlation.as_deref(), &mut rng)
            .or_runtime_error()?;
        for minute in 0..TICKS_PER_DAY {
            let ts = start + (day as i64 * TICKS_PER_DAY as i64 + minute as i64) * 60;
            let prices = grid.tick_prices(minute);
            for (i, sym) in symbols.iter().enumerate() {
                body.push_str(&format!("{ts},{sym},{}\n", prices[i]));
            }
        }
        // next day continues from this day's close
        anchor = grid.tick_prices(TICKS_PER_DAY - 1).to_vec();
    }
    fs::write(&args.out, body).or_runtime_error()?;
    println!(
        "gen-prices: {} days x {} assets -> {}",
        args.days,
        symbols.len(),
        args.out.display()
    );
    Ok(())
}
