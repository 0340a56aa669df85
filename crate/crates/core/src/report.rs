//! Plot-ready CSV emission for result bundles. Bodies are plain `Display`
//! formatting throughout, so identical inputs reproduce byte-identical
//! files.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::harness::{EnsembleStats, ScatterPoint, SeriesBand, SweepResult};

/// The per-tick metric series of a bundle, in emission order.
pub fn series_names() -> [&'static str; 7] {
    [
        "meanLtv",
        "totalLiquidatedFunds",
        "outstandingDebtPct",
        "liquidationEvents",
        "liquidatorProfitCum",
        "slippageFeesCum",
        "tradingFeesCum",
    ]
}

fn band_of<'a>(stats: &'a EnsembleStats, name: &str) -> &'a SeriesBand {
    match name {
        "meanLtv" => &stats.mean_ltv,
        "totalLiquidatedFunds" => &stats.liquidated_funds_cum,
        "outstandingDebtPct" => &stats.outstanding_debt_pct,
        "liquidationEvents" => &stats.liquidation_events,
        "liquidatorProfitCum" => &stats.liquidator_profit_cum,
        "slippageFeesCum" => &stats.slippage_fees_cum,
        "tradingFeesCum" => &stats.trading_fees_cum,
        _ => unreachable!("unknown series {name}"),
    }
}

fn series_csv(band: &SeriesBand) -> String {
    let mut out = String::from("tick,mean,p2_5,p97_5\n");
    for t in 0..band.mean.len() {
        out.push_str(&format!("{t},{},{},{}\n", band.mean[t], band.lo[t], band.hi[t]));
    }
    out
}

/// Writes one `series_<name>.csv` per metric into `dir`.
pub fn write_series_files(dir: &Path, stats: &EnsembleStats) -> Result<()> {
    for name in series_names() {
        fs::write(dir.join(format!("series_{name}.csv")), series_csv(band_of(stats, name)))?;
    }
    Ok(())
}

pub fn final_distribution_csv(scatter: &[ScatterPoint]) -> String {
    let mut out = String::from("run,user,ltv,portfolioValue\n");
    for p in scatter {
        out.push_str(&format!("{},{},{},{}\n", p.run, p.user, p.ltv, p.portfolio));
    }
    out
}

pub fn write_final_distribution(dir: &Path, scatter: &[ScatterPoint]) -> Result<()> {
    fs::write(dir.join("final_distribution.csv"), final_distribution_csv(scatter))?;
    Ok(())
}

pub fn surface_csv(result: &SweepResult) -> String {
    let mut out = String::from("liqLtv,incentive,undercollateralizedFraction,finalMeanLtv\n");
    for c in &result.surface {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.liq_ltv, c.incentive, c.undercollateralized_fraction, c.final_mean_ltv
        ));
    }
    out
}

/// Boundary cells plus the constant-fee reference line `inc = 1 - liqLtv`.
pub fn frontier_csv(result: &SweepResult) -> String {
    let mut out = String::from("liqLtv,incStar,incTheory\n");
    for p in &result.boundary {
        out.push_str(&format!("{},{},{}\n", p.liq_ltv, p.incentive, 1.0 - p.liq_ltv));
    }
    out
}

pub fn write_sweep(dir: &Path, result: &SweepResult) -> Result<()> {
    fs::write(dir.join("surface.csv"), surface_csv(result))?;
    fs::write(dir.join("frontier.csv"), frontier_csv(result))?;
    Ok(())
}
