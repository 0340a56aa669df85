//! Initial ensemble generation: random portfolio allocation, same-asset
//! unwinding, and exact rescaling to lognormal portfolio-size and LTV
//! targets.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1, LogNormal};

use crate::error::{Result, SimError};
use crate::protocol::{self, AssetParams, UserAccount};

/// Runtime generation parameters (asset subsets are indices into the
/// scenario's asset list).
#[derive(Debug, Clone)]
pub struct PopulationParams {
    pub mean_portfolio: f64,
    pub portfolio_log_std: f64,
    pub mean_ltv: f64,
    pub ltv_log_std: f64,
    pub min_ltv: f64,
    pub collateral_assets: Vec<usize>,
    pub loan_assets: Vec<usize>,
}

const REDRAW_LIMIT: usize = 100;

/// Lognormal with the requested *arithmetic* mean: mu = ln(mean) - s^2/2.
fn lognormal_mean(mean: f64, log_std: f64) -> LogNormal<f64> {
    let mu = mean.ln() - 0.5 * log_std * log_std;
    LogNormal::new(mu, log_std).expect("log_std is finite and non-negative")
}

/// Draws one user's (portfolio value, LTV) targets. The LTV draw is clamped
/// to `[min_ltv, weighted_max_ltv]` so the account starts protocol-legal;
/// when the borrow cap sits below the hard minimum, the cap wins.
pub fn draw_targets<R: Rng>(
    params: &PopulationParams,
    weighted_max_ltv: f64,
    rng: &mut R,
) -> (f64, f64) {
    let portfolio = if params.portfolio_log_std == 0.0 {
        params.mean_portfolio
    } else {
        lognormal_mean(params.mean_portfolio, params.portfolio_log_std).sample(rng)
    };
    let raw_ltv = if params.ltv_log_std == 0.0 {
        params.mean_ltv
    } else {
        lognormal_mean(params.mean_ltv, params.ltv_log_std).sample(rng)
    };
    let hi = weighted_max_ltv;
    let lo = params.min_ltv.min(hi);
    (portfolio, raw_ltv.clamp(lo, hi))
}

/// Flat-Dirichlet weights over `subset`, embedded in a length-`n` vector.
fn dirichlet_weights<R: Rng>(n: usize, subset: &[usize], rng: &mut R) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if subset.len() == 1 {
        w[subset[0]] = 1.0;
        return w;
    }
    // Dirichlet(1,..,1) = normalized iid Exp(1) draws
    let mut total = 0.0;
    for &i in subset {
        let e: f64 = Exp1.sample(rng);
        w[i] = e;
        total += e;
    }
    for &i in subset {
        w[i] /= total;
    }
    w
}

/// Raw (unscaled) collateral and loan value weights for one user.
pub fn allocate<R: Rng>(
    n_assets: usize,
    collateral_assets: &[usize],
    loan_assets: &[usize],
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    (
        dirichlet_weights(n_assets, collateral_assets, rng),
        dirichlet_weights(n_assets, loan_assets, rng),
    )
}

/// Removes the overlap between the two sides: per asset the smaller of
/// (collateral, loan) is subtracted from both, so at most one side of each
/// asset is left non-zero.
pub fn unwind(collateral: &[f64], loans: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut c = collateral.to_vec();
    let mut l = loans.to_vec();
    for (ci, li) in c.iter_mut().zip(l.iter_mut()) {
        let m = ci.min(*li);
        *ci -= m;
        *li -= m;
    }
    (c, l)
}

/// Scales both sides so the account hits its net-portfolio and LTV targets
/// exactly: `r_C = target / ((1 - ltv) * sum(c))`, `r_L = r_C * ltv * sum(c) / sum(l)`.
pub fn rescale_user(
    collateral: &[f64],
    loans: &[f64],
    portfolio_target: f64,
    ltv_target: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let total_c: f64 = collateral.iter().sum();
    let total_l: f64 = loans.iter().sum();
    if !(total_c > 0.0) {
        return Err(SimError::InvalidInput("rescale needs positive collateral".into()));
    }
    if !(0.0..1.0).contains(&ltv_target) {
        return Err(SimError::InvalidInput(format!(
            "ltv target must lie in [0, 1), got {ltv_target}"
        )));
    }
    if ltv_target > 0.0 && !(total_l > 0.0) {
        return Err(SimError::InvalidInput("positive ltv target needs loan weights".into()));
    }
    if !(portfolio_target > 0.0) {
        return Err(SimError::InvalidInput(format!(
            "portfolio target must be positive, got {portfolio_target}"
        )));
    }
    let r_c = portfolio_target / ((1.0 - ltv_target) * total_c);
    let r_l = if ltv_target == 0.0 { 0.0 } else { r_c * ltv_target * total_c / total_l };
    Ok((
        collateral.iter().map(|v| v * r_c).collect(),
        loans.iter().map(|v| v * r_l).collect(),
    ))
}

/// Generates `n_users` accounts: allocate, unwind (redrawing degenerate
/// allocations), draw targets, rescale, and convert values to token units at
/// the initial prices.
pub fn generate_population<R: Rng>(
    params: &PopulationParams,
    assets: &[AssetParams],
    n_users: usize,
    initial_prices: &[f64],
    rng: &mut R,
) -> Result<Vec<UserAccount>> {
    protocol::validate_prices(initial_prices)?;
    let n = assets.len();
    let mut users = Vec::with_capacity(n_users);
    for user in 0..n_users {
        let mut drawn = None;
        for _ in 0..REDRAW_LIMIT {
            let (c_raw, l_raw) = allocate(n, &params.collateral_assets, &params.loan_assets, rng);
            let (c, l) = unwind(&c_raw, &l_raw);
            if c.iter().sum::<f64>() > 0.0 && l.iter().sum::<f64>() > 0.0 {
                drawn = Some((c, l));
                break;
            }
        }
        let (c, l) = drawn.ok_or_else(|| {
            SimError::Generation(format!(
                "user {user}: unwinding zeroed a side {REDRAW_LIMIT} times in a row"
            ))
        })?;

        let total_c: f64 = c.iter().sum();
        let weighted_max =
            c.iter().enumerate().map(|(i, v)| v * assets[i].max_ltv).sum::<f64>() / total_c;
        let (portfolio_target, ltv_target) = draw_targets(params, weighted_max, rng);
        let (c_values, l_values) = rescale_user(&c, &l, portfolio_target, ltv_target)?;

        let account = UserAccount {
            collateral_units: c_values.iter().zip(initial_prices).map(|(v, p)| v / p).collect(),
            loan_units: l_values.iter().zip(initial_prices).map(|(v, p)| v / p).collect(),
        };
        users.push(account);
    }
    Ok(users)
}

// ---------------------------------------------------------------------------
// CSV dump / load for exact replays
// ---------------------------------------------------------------------------

pub fn write_population_csv<W: Write>(
    w: &mut W,
    users: &[UserAccount],
    symbols: &[String],
) -> Result<()> {
    writeln!(w, "userId,asset,collateralUnits,loanUnits")?;
    for (id, user) in users.iter().enumerate() {
        for (i, sym) in symbols.iter().enumerate() {
            writeln!(w, "{id},{sym},{},{}", user.collateral_units[i], user.loan_units[i])?;
        }
    }
    Ok(())
}

pub fn read_population_csv<R: BufRead>(reader: R, symbols: &[String]) -> Result<Vec<UserAccount>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| SimError::Generation("population csv is empty".into()))?;
    if header.trim() != "userId,asset,collateralUnits,loanUnits" {
        return Err(SimError::Generation(format!("unexpected population csv header `{header}`")));
    }
    let mut users: Vec<UserAccount> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || SimError::Generation(format!("population csv line {}: `{line}`", lineno + 2));
        let mut fields = line.split(',');
        let id: usize = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let sym = fields.next().ok_or_else(bad)?.trim();
        let c: f64 = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        let l: f64 = fields.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        if fields.next().is_some() || !(c >= 0.0) || !(l >= 0.0) {
            return Err(bad());
        }
        let asset = symbols
            .iter()
            .position(|s| s == sym)
            .ok_or_else(|| SimError::Generation(format!("population csv names unknown asset {sym}")))?;
        if id >= users.len() {
            users.resize_with(id + 1, || UserAccount::new(symbols.len()));
        }
        users[id].collateral_units[asset] = c;
        users[id].loan_units[asset] = l;
    }
    if users.is_empty() {
        return Err(SimError::Generation("population csv has no rows".into()));
    }
    Ok(users)
}
