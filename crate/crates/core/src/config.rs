//! Scenario configuration: the serde-facing schema (camelCase keys, unknown
//! keys rejected) and its resolution into runtime structures.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::harness::{PopulationSource, PriceProvider, Scenario};
use crate::population::{self, PopulationParams};
use crate::prices::{self, cholesky_psd};
use crate::protocol::{AssetParams, LiquidityMatrix, LtvThresholdDenominator};

fn one() -> f64 {
    1.0
}

fn paper_scale() -> usize {
    1000
}

fn default_trading_fee() -> f64 {
    0.003
}

/// Full scenario description as read from a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "paper_scale")]
    pub n_runs: usize,
    #[serde(default = "paper_scale")]
    pub n_users: usize,
    /// Constant per-swap trading-fee fraction (0 disables it).
    #[serde(default = "default_trading_fee")]
    pub trading_fee: f64,
    #[serde(default)]
    pub ltv_threshold_denominator: LtvThresholdDenominator,
    #[serde(default)]
    pub repeat_within_tick: bool,
    /// Reserved hook; must stay false.
    #[serde(default)]
    pub liquidity_depletion: bool,
    pub assets: Vec<AssetParams>,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub liquidity: LiquidityConfig,
    pub prices: PricesConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossed_ensemble: Option<CrossedEnsembleConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PopulationConfig {
    #[serde(default = "default_mean_portfolio")]
    pub mean_portfolio: f64,
    #[serde(default = "one")]
    pub portfolio_log_std: f64,
    #[serde(default = "default_mean_ltv")]
    pub mean_ltv: f64,
    #[serde(default = "default_ltv_log_std")]
    pub ltv_log_std: f64,
    #[serde(default = "default_min_ltv")]
    pub min_ltv: f64,
    /// Assets users may post as collateral (default: all).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collateral_assets: Option<Vec<String>>,
    /// Assets users may borrow (default: all).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loan_assets: Option<Vec<String>>,
    /// Fixed population CSV (`userId,asset,collateralUnits,loanUnits`); when
    /// set, every run reuses it instead of generating a fresh ensemble.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
}

fn default_mean_portfolio() -> f64 {
    5000.0
}

fn default_mean_ltv() -> f64 {
    0.6
}

fn default_ltv_log_std() -> f64 {
    0.25
}

fn default_min_ltv() -> f64 {
    0.45
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            mean_portfolio: default_mean_portfolio(),
            portfolio_log_std: one(),
            mean_ltv: default_mean_ltv(),
            ltv_log_std: default_ltv_log_std(),
            min_ltv: default_min_ltv(),
            collateral_assets: None,
            loan_assets: None,
            csv_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LiquidityConfig {
    #[serde(default = "one")]
    pub slippage_coefficient: f64,
    #[serde(default = "one")]
    pub slippage_exponent: f64,
    #[serde(default = "default_volume")]
    pub default_volume: f64,
    /// Per-pair sell-side volumes, keyed `"A-B"`, applied in both directions.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub volume_overrides: BTreeMap<String, f64>,
}

fn default_volume() -> f64 {
    1e9
}

impl Default for LiquidityConfig {
    fn default() -> Self {
        LiquidityConfig {
            slippage_coefficient: one(),
            slippage_exponent: one(),
            default_volume: default_volume(),
            volume_overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceSourceKind {
    #[serde(rename = "synthetic")]
    Synthetic,
    #[serde(rename = "sampled")]
    Sampled,
    #[serde(rename = "historical-replay")]
    HistoricalReplay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PricesConfig {
    pub source: PriceSourceKind,
    /// History CSV (`timestamp,asset,price`); required for sampled and
    /// historical-replay sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    /// Common multiplier on each asset's own (realized or base) volatility.
    #[serde(default = "one")]
    pub vol_multiplier: f64,
    /// Explicit per-asset hourly volatility targets; mutually exclusive with
    /// a non-unit volMultiplier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hourly_vol_targets: Option<BTreeMap<String, f64>>,
    /// Return correlation over the non-pegged assets in declaration order
    /// (synthetic source only; identity when omitted).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Vec<Vec<f64>>>,
    /// Replay anchor: `YYYY-MM-DD` (historical-replay only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_date: Option<String>,
    /// Replay anchor: worst-drawdown day of this asset (historical-replay only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_drawdown_asset: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CrossedEnsembleConfig {
    pub populations: usize,
    pub grids: usize,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| SimError::Config(e.to_string()))
    }

    fn asset_index(&self, symbol: &str) -> Result<usize> {
        self.assets.iter().position(|a| a.symbol == symbol).ok_or_else(|| {
            SimError::Config(format!("unknown asset `{symbol}` (declared: {})", self.symbol_list()))
        })
    }

    fn symbol_list(&self) -> String {
        self.assets.iter().map(|a| a.symbol.as_str()).collect::<Vec<_>>().join(", ")
    }

    fn resolve_subset(&self, subset: &Option<Vec<String>>, side: &str) -> Result<Vec<usize>> {
        match subset {
            None => Ok((0..self.assets.len()).collect()),
            Some(symbols) => {
                if symbols.is_empty() {
                    return Err(SimError::Config(format!("{side} must name at least one asset")));
                }
                let mut idx: Vec<usize> =
                    symbols.iter().map(|s| self.asset_index(s)).collect::<Result<_>>()?;
                idx.sort_unstable();
                idx.dedup();
                Ok(idx)
            }
        }
    }

    fn build_liquidity(&self) -> Result<LiquidityMatrix> {
        let mut matrix = LiquidityMatrix::new(
            self.assets.len(),
            self.liquidity.default_volume,
            self.liquidity.slippage_coefficient,
            self.liquidity.slippage_exponent,
        )?;
        for (pair, volume) in &self.liquidity.volume_overrides {
            let (a, b) = pair.split_once('-').ok_or_else(|| {
                SimError::Config(format!("volume override key `{pair}` must look like `A-B`"))
            })?;
            matrix.set_pair_volume(self.asset_index(a.trim())?, self.asset_index(b.trim())?, *volume)?;
        }
        Ok(matrix)
    }

    fn build_prices(&self, base_dir: &Path) -> Result<PriceProvider> {
        let p = &self.prices;
        if p.vol_multiplier != 1.0 && p.hourly_vol_targets.is_some() {
            return Err(SimError::Config(
                "set either hourlyVolTargets or a non-unit volMultiplier, not both".into(),
            ));
        }
        if !(p.vol_multiplier >= 0.0) {
            return Err(SimError::Config("volMultiplier must be >= 0".into()));
        }
        let explicit_targets: Option<Vec<Option<f64>>> = match &p.hourly_vol_targets {
            None => None,
            Some(map) => {
                for sym in map.keys() {
                    let i = self.asset_index(sym)?;
                    if self.assets[i].is_numeraire_pegged {
                        return Err(SimError::Config(format!(
                            "pegged asset {sym} cannot take a volatility target"
                        )));
                    }
                }
                Some(
                    self.assets
                        .iter()
                        .map(|a| map.get(&a.symbol).copied())
                        .collect(),
                )
            }
        };

        let need_csv = |what: &str| {
            SimError::Config(format!("prices.source = \"{what}\" requires prices.csvPath"))
        };
        let load = |path: &Option<PathBuf>, what: &str| -> Result<prices::History> {
            let path = path.as_ref().ok_or_else(|| need_csv(what))?;
            let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            prices::load_history(&full)
        };

        match p.source {
            PriceSourceKind::Synthetic => {
                if p.csv_path.is_some() {
                    return Err(SimError::Config("synthetic source takes no csvPath".into()));
                }
                if p.replay_date.is_some() || p.worst_drawdown_asset.is_some() {
                    return Err(SimError::Config("replay anchors need historical-replay".into()));
                }
                let initial: Vec<f64> = self.assets.iter().map(|a| a.initial_price).collect();
                let pegged: Vec<bool> = self.assets.iter().map(|a| a.is_numeraire_pegged).collect();
                let vols: Vec<f64> = self
                    .assets
                    .iter()
                    .enumerate()
                    .map(|(i, a)| match &explicit_targets {
                        Some(t) => t[i].unwrap_or(a.hourly_vol),
                        None => a.hourly_vol * p.vol_multiplier,
                    })
                    .collect();
                if let Some(c) = &p.correlation {
                    let non_pegged = pegged.iter().filter(|&&x| !x).count();
                    if c.len() != non_pegged {
                        return Err(SimError::Config(format!(
                            "correlation matrix must span the {non_pegged} non-pegged assets"
                        )));
                    }
                    for (k, row) in c.iter().enumerate() {
                        if row.len() != c.len() || (row[k] - 1.0).abs() > 1e-9 {
                            return Err(SimError::Config(
                                "correlation matrix must be square with unit diagonal".into(),
                            ));
                        }
                    }
                    cholesky_psd(c)?;
                }
                Ok(PriceProvider::Synthetic {
                    initial,
                    hourly_vols: vols,
                    pegged,
                    correlation: p.correlation.clone(),
                })
            }
            PriceSourceKind::Sampled => {
                if p.replay_date.is_some() || p.worst_drawdown_asset.is_some() {
                    return Err(SimError::Config("replay anchors need historical-replay".into()));
                }
                if p.correlation.is_some() {
                    return Err(SimError::Config("correlation applies to synthetic grids only".into()));
                }
                let history = load(&p.csv_path, "sampled")?;
                for a in &self.assets {
                    if !a.is_numeraire_pegged && history.asset_index(&a.symbol).is_none() {
                        return Err(SimError::Config(format!(
                            "asset {} not present in price history",
                            a.symbol
                        )));
                    }
                }
                Ok(PriceProvider::Sampled {
                    history: std::sync::Arc::new(history),
                    targets: explicit_targets,
                    multiplier: p.vol_multiplier,
                })
            }
            PriceSourceKind::HistoricalReplay => {
                if p.correlation.is_some() {
                    return Err(SimError::Config("correlation applies to synthetic grids only".into()));
                }
                let history = load(&p.csv_path, "historical-replay")?;
                let grid = match (&p.replay_date, &p.worst_drawdown_asset) {
                    (Some(date), None) => {
                        let date = chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d")
                            .map_err(|_| SimError::Config(format!("bad replayDate `{date}`, want YYYY-MM-DD")))?;
                        prices::window_for_date(&history, &self.assets, date)?
                    }
                    (None, Some(sym)) => prices::worst_drawdown_window(&history, &self.assets, sym)?,
                    _ => {
                        return Err(SimError::Config(
                            "historical-replay needs exactly one of replayDate or worstDrawdownAsset".into(),
                        ))
                    }
                };
                let grid = if explicit_targets.is_some() || p.vol_multiplier != 1.0 {
                    let targets: Vec<Option<f64>> = match &explicit_targets {
                        Some(t) => t.clone(),
                        None => self
                            .assets
                            .iter()
                            .enumerate()
                            .map(|(i, a)| {
                                (!a.is_numeraire_pegged).then(|| {
                                    p.vol_multiplier * prices::realized_hourly_vol(&grid.asset_series(i))
                                })
                            })
                            .collect(),
                    };
                    prices::rescale_to_vol(&grid, &targets)?
                } else {
                    grid
                };
                Ok(PriceProvider::Fixed(grid))
            }
        }
    }

    /// Validates the whole document and resolves it into a runnable
    /// [`Scenario`]. Relative paths are taken against `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Scenario> {
        if self.assets.is_empty() {
            return Err(SimError::Config("at least one asset is required".into()));
        }
        for a in &self.assets {
            a.validate()?;
        }
        for (i, a) in self.assets.iter().enumerate() {
            if self.assets[..i].iter().any(|b| b.symbol == a.symbol) {
                return Err(SimError::Config(format!("duplicate asset symbol {}", a.symbol)));
            }
        }
        if self.n_runs == 0 || self.n_users == 0 {
            return Err(SimError::Config("nRuns and nUsers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.trading_fee) {
            return Err(SimError::Config("tradingFee must lie in [0, 1)".into()));
        }
        if self.liquidity_depletion {
            return Err(SimError::Config(
                "liquidityDepletion is a reserved hook and must be false".into(),
            ));
        }
        let pop = &self.population;
        if !(pop.mean_portfolio > 0.0) {
            return Err(SimError::Config("population.meanPortfolio must be positive".into()));
        }
        if !(0.0..1.0).contains(&pop.mean_ltv) || !(0.0..1.0).contains(&pop.min_ltv) {
            return Err(SimError::Config("population LTV parameters must lie in [0, 1)".into()));
        }
        if !(pop.portfolio_log_std >= 0.0) || !(pop.ltv_log_std >= 0.0) {
            return Err(SimError::Config("population log-stds must be >= 0".into()));
        }

        let symbols: Vec<String> = self.assets.iter().map(|a| a.symbol.clone()).collect();
        let population = match &pop.csv_path {
            Some(path) => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let file = File::open(&full)
                    .map_err(|e| SimError::Config(format!("{}: {e}", full.display())))?;
                let users = population::read_population_csv(BufReader::new(file), &symbols)?;
                PopulationSource::Fixed(users)
            }
            None => PopulationSource::Generated(PopulationParams {
                mean_portfolio: pop.mean_portfolio,
                portfolio_log_std: pop.portfolio_log_std,
                mean_ltv: pop.mean_ltv,
                ltv_log_std: pop.ltv_log_std,
                min_ltv: pop.min_ltv,
                collateral_assets: self.resolve_subset(&pop.collateral_assets, "collateralAssets")?,
                loan_assets: self.resolve_subset(&pop.loan_assets, "loanAssets")?,
            }),
        };

        let crossed = match self.crossed_ensemble {
            None => None,
            Some(c) => {
                if c.populations == 0 || c.grids == 0 {
                    return Err(SimError::Config("crossedEnsemble sizes must be at least 1".into()));
                }
                Some((c.populations, c.grids))
            }
        };
        let n_runs = crossed.map_or(self.n_runs, |(p, g)| p * g);

        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            assets: self.assets.clone(),
            liquidity: self.build_liquidity()?,
            population,
            prices: self.build_prices(base_dir)?,
            n_users: self.n_users,
            n_runs,
            master_seed: self.master_seed,
            trading_fee: self.trading_fee,
            ltv_mode: self.ltv_threshold_denominator,
            repeat_within_tick: self.repeat_within_tick,
            crossed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        masterSeed = 7
        nRuns = 3
        nUsers = 10

        [[assets]]
        symbol = "MATIC"
        maxLtv = 0.65
        liqLtv = 0.70
        liquidationIncentive = 0.10
        initialPrice = 0.85
        hourlyVol = 0.02

        [[assets]]
        symbol = "USDC"
        maxLtv = 0.80
        liqLtv = 0.85
        liquidationIncentive = 0.05
        isNumerairePegged = true

        [population]
        collateralAssets = ["MATIC"]
        loanAssets = ["USDC"]

        [liquidity]
        defaultVolume = 1e9
        [liquidity.volumeOverrides]
        "MATIC-USDC" = 1e8

        [prices]
        source = "synthetic"
    "#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.trading_fee, 0.003);
        assert_eq!(cfg.population.mean_portfolio, 5000.0);
        let scenario = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(scenario.n_runs, 3);
        assert_eq!(scenario.liquidity.volume(0, 1), 1e8);
        assert_eq!(scenario.liquidity.volume(1, 0), 1e8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("masterSeed = 7", "masterSeed = 7\nbogusKey = 1");
        let err = ScenarioConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn depletion_hook_must_stay_off() {
        let text = MINIMAL.replace("masterSeed = 7", "masterSeed = 7\nliquidityDepletion = true");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert!(cfg.resolve(Path::new(".")).is_err());
    }

    #[test]
    fn both_vol_controls_rejected() {
        let text = MINIMAL.replace(
            "source = \"synthetic\"",
            "source = \"synthetic\"\nvolMultiplier = 2.0\n[prices.hourlyVolTargets]\nMATIC = 0.05",
        );
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let err = cfg.resolve(Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("not both"), "{err}");
    }

    #[test]
    fn replay_without_history_is_a_config_error() {
        let text = MINIMAL.replace("source = \"synthetic\"", "source = \"historical-replay\"\nreplayDate = \"2020-02-20\"");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let err = cfg.resolve(Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("csvPath"), "{err}");
    }

    #[test]
    fn bad_pair_key_is_rejected() {
        let text = MINIMAL.replace("\"MATIC-USDC\" = 1e8", "\"MATICUSDC\" = 1e8");
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        assert!(cfg.resolve(Path::new(".")).is_err());
    }

    #[test]
    fn config_echo_round_trips() {
        let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let echoed = cfg.to_toml_string().unwrap();
        let back = ScenarioConfig::from_toml_str(&echoed).unwrap();
        assert_eq!(back.master_seed, cfg.master_seed);
        assert_eq!(back.assets.len(), cfg.assets.len());
        assert_eq!(back.liquidity.volume_overrides, cfg.liquidity.volume_overrides);
        back.resolve(Path::new(".")).unwrap();
    }

    #[test]
    fn correlation_must_match_non_pegged_count() {
        let text = MINIMAL.replace(
            "source = \"synthetic\"",
            "source = \"synthetic\"\ncorrelation = [[1.0, 0.5], [0.5, 1.0]]",
        );
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let err = cfg.resolve(Path::new(".")).unwrap_err().to_string();
        assert!(err.contains("non-pegged"), "{err}");
    }
}
