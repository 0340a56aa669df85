//! Asset and user state, mark-to-market valuation, and LTV accounting.
//!
//! All values are expressed in the numeraire (USD). Accounts store token
//! *quantities* so that a moving price grid revalues positions; every LTV
//! quantity here is a plain ratio of numeraire values.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Per-asset protocol parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AssetParams {
    pub symbol: String,
    /// Borrow cap: above the weighted max LTV no new borrowing is allowed.
    pub max_ltv: f64,
    /// Liquidation threshold: above the weighted liq LTV a user is liquidatable.
    pub liq_ltv: f64,
    /// Maximal fraction of a single loan position repayable per liquidation call.
    #[serde(default = "default_close_factor")]
    pub close_factor: f64,
    /// Bonus fraction of seized collateral granted to the liquidator.
    pub liquidation_incentive: f64,
    /// Pegged assets trade at exactly 1 numeraire per token on every tick.
    #[serde(default)]
    pub is_numeraire_pegged: bool,
    /// Start price for synthetic grids.
    #[serde(default = "default_price")]
    pub initial_price: f64,
    /// Base hourly volatility for synthetic grids.
    #[serde(default)]
    pub hourly_vol: f64,
}

fn default_close_factor() -> f64 {
    0.5
}

fn default_price() -> f64 {
    1.0
}

impl AssetParams {
    pub fn validate(&self) -> Result<()> {
        let e = |msg: String| Err(SimError::Config(msg));
        if self.symbol.is_empty() {
            return e("asset symbol must be non-empty".into());
        }
        if !(0.0..1.0).contains(&self.max_ltv) || !(0.0..1.0).contains(&self.liq_ltv) {
            return e(format!("{}: maxLtv and liqLtv must lie in [0,1)", self.symbol));
        }
        if self.max_ltv > self.liq_ltv {
            return e(format!("{}: maxLtv must not exceed liqLtv", self.symbol));
        }
        if !(self.close_factor > 0.0 && self.close_factor <= 1.0) {
            return e(format!("{}: closeFactor must lie in (0,1]", self.symbol));
        }
        if !(0.0..1.0).contains(&self.liquidation_incentive) {
            return e(format!("{}: liquidationIncentive must lie in [0,1)", self.symbol));
        }
        if !(self.initial_price > 0.0) {
            return e(format!("{}: initialPrice must be positive", self.symbol));
        }
        if !(self.hourly_vol >= 0.0) || (self.is_numeraire_pegged && self.hourly_vol != 0.0) {
            return e(format!("{}: invalid hourlyVol", self.symbol));
        }
        Ok(())
    }
}

/// Which denominator the weighted LTV thresholds divide by.
///
/// `Collateral` is the standard convention (thresholds are collateral-value
/// weighted means). `NetPortfolio` divides by collateral minus loans instead,
/// which blows up as LTV approaches 1; it is kept for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LtvThresholdDenominator {
    #[default]
    #[serde(rename = "collateral")]
    Collateral,
    #[serde(rename = "netPortfolio")]
    NetPortfolio,
}

/// One user's position: token quantities per asset, collateral and loan side.
#[derive(Debug, Clone, PartialEq)]
pub struct UserAccount {
    pub collateral_units: Vec<f64>,
    pub loan_units: Vec<f64>,
}

impl UserAccount {
    pub fn new(n_assets: usize) -> Self {
        UserAccount {
            collateral_units: vec![0.0; n_assets],
            loan_units: vec![0.0; n_assets],
        }
    }

    pub fn n_assets(&self) -> usize {
        self.collateral_units.len()
    }

    pub fn collateral_value(&self, prices: &[f64]) -> f64 {
        dot(&self.collateral_units, prices)
    }

    pub fn loan_value(&self, prices: &[f64]) -> f64 {
        dot(&self.loan_units, prices)
    }

    /// No collateral left but loans remain: the account is frozen — counted
    /// undercollateralized and excluded from further liquidation.
    pub fn is_frozen(&self) -> bool {
        self.collateral_units.iter().all(|&c| c == 0.0)
            && self.loan_units.iter().any(|&l| l > 0.0)
    }
}

fn dot(units: &[f64], prices: &[f64]) -> f64 {
    units.iter().zip(prices).map(|(u, p)| u * p).sum()
}

pub fn validate_prices(prices: &[f64]) -> Result<()> {
    if prices.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(SimError::InvalidInput(format!(
            "prices must be strictly positive and finite, got {prices:?}"
        )));
    }
    Ok(())
}

/// Per-asset numeraire values of both sides of an account at the given prices.
pub fn mark_to_market(user: &UserAccount, prices: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    validate_prices(prices)?;
    let c = user.collateral_units.iter().zip(prices).map(|(u, p)| u * p).collect();
    let l = user.loan_units.iter().zip(prices).map(|(u, p)| u * p).collect();
    Ok((c, l))
}

/// Net account value: total collateral minus total loans.
pub fn portfolio_value(user: &UserAccount, prices: &[f64]) -> f64 {
    user.collateral_value(prices) - user.loan_value(prices)
}

/// Loan-to-value ratio. Zero collateral with loans outstanding yields the
/// +inf sentinel (undercollateralized-degenerate); an empty account is 0.
pub fn user_ltv(user: &UserAccount, prices: &[f64]) -> f64 {
    let c = user.collateral_value(prices);
    let l = user.loan_value(prices);
    if c > 0.0 {
        l / c
    } else if l > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn weighted_threshold<F>(
    user: &UserAccount,
    prices: &[f64],
    mode: LtvThresholdDenominator,
    per_asset: F,
) -> f64
where
    F: Fn(usize) -> f64,
{
    let mut weighted = 0.0;
    let mut collateral = 0.0;
    for (i, (&u, &p)) in user.collateral_units.iter().zip(prices).enumerate() {
        let v = u * p;
        weighted += v * per_asset(i);
        collateral += v;
    }
    if collateral <= 0.0 {
        return 0.0;
    }
    match mode {
        LtvThresholdDenominator::Collateral => weighted / collateral,
        // Literal form: divide by the net portfolio value. Degenerates as the
        // account approaches insolvency (inf at C = L, negative beyond).
        LtvThresholdDenominator::NetPortfolio => weighted / (collateral - user.loan_value(prices)),
    }
}

/// Collateral-weighted liquidation threshold; a user is liquidatable when
/// their LTV strictly exceeds this.
pub fn user_liq_ltv(
    user: &UserAccount,
    assets: &[AssetParams],
    prices: &[f64],
    mode: LtvThresholdDenominator,
) -> f64 {
    weighted_threshold(user, prices, mode, |i| assets[i].liq_ltv)
}

/// Collateral-weighted borrow cap.
pub fn user_max_ltv(
    user: &UserAccount,
    assets: &[AssetParams],
    prices: &[f64],
    mode: LtvThresholdDenominator,
) -> f64 {
    weighted_threshold(user, prices, mode, |i| assets[i].max_ltv)
}

/// Loans meet or exceed collateral value (includes frozen accounts).
pub fn is_undercollateralized(user: &UserAccount, prices: &[f64]) -> bool {
    user_ltv(user, prices) >= 1.0
}

/// Sell-side swap volumes per ordered asset pair plus the slippage law
/// sigma(a) = s * (a / V[j][i])^gamma.
#[derive(Debug, Clone)]
pub struct LiquidityMatrix {
    n: usize,
    volumes: Vec<f64>,
    /// Slippage coefficient s.
    pub coefficient: f64,
    /// Slippage exponent gamma.
    pub exponent: f64,
}

impl LiquidityMatrix {
    pub fn new(n_assets: usize, default_volume: f64, coefficient: f64, exponent: f64) -> Result<Self> {
        if !(default_volume > 0.0) {
            return Err(SimError::Config("pair volumes must be strictly positive".into()));
        }
        if !(coefficient >= 0.0) {
            return Err(SimError::Config("slippageCoefficient must be >= 0".into()));
        }
        if !(exponent > 0.0) {
            return Err(SimError::Config("slippageExponent must be > 0".into()));
        }
        Ok(LiquidityMatrix {
            n: n_assets,
            volumes: vec![default_volume; n_assets * n_assets],
            coefficient,
            exponent,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.n
    }

    /// Sell-side volume for swapping asset `j` into asset `i`.
    pub fn volume(&self, j: usize, i: usize) -> f64 {
        self.volumes[j * self.n + i]
    }

    /// Sets the volume for both directions of the pair.
    pub fn set_pair_volume(&mut self, a: usize, b: usize, volume: f64) -> Result<()> {
        if !(volume > 0.0) {
            return Err(SimError::Config("pair volumes must be strictly positive".into()));
        }
        self.volumes[a * self.n + b] = volume;
        self.volumes[b * self.n + a] = volume;
        Ok(())
    }

    /// Normalized slippage slope s / V[j][i].
    pub fn s_tilde(&self, j: usize, i: usize) -> f64 {
        self.coefficient / self.volume(j, i)
    }

    /// Multiplies every pair volume by `factor` (scale-invariance stress).
    pub fn scale_volumes(&mut self, factor: f64) {
        for v in &mut self.volumes {
            *v *= factor;
        }
    }
}
