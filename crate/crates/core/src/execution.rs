//! Swap economics for liquidations: slippage fee, repay amount, the
//! closed-form swap inverse, feasibility cap, optimal swap size, and
//! liquidator profit.
//!
//! Swapping a numeraire value `a` of collateral asset `j` into loan asset
//! `i` loses a slippage fraction `sigma(a) = s * (a / V[j][i])^gamma` plus a
//! constant trading-fee fraction `t`, and grants the liquidator the
//! incentive fraction `inc` of the seized value:
//!
//! ```text
//! profit(a) = (inc - sigma(a) - t) * a
//! repay(a)  = (1 - inc - sigma(a) - t) * a
//! ```
//!
//! With `t = 0` these are the standard liquidation-bonus equations; the
//! trading fee enters exactly parallel to slippage. Same-asset "swaps"
//! (`j == i`) are plain transfers: repay equals seize and profit is zero.

use crate::error::{Result, SimError};
use crate::protocol::LiquidityMatrix;

/// Fractional value lost to market impact when swapping `a` of asset `j`
/// into asset `i`. Zero when no swap is needed (`j == i`).
pub fn slippage_fraction(a: f64, j: usize, i: usize, liquidity: &LiquidityMatrix) -> Result<f64> {
    if !(a >= 0.0) {
        return Err(SimError::InvalidInput(format!("swap amount must be >= 0, got {a}")));
    }
    if j == i || a == 0.0 {
        return Ok(0.0);
    }
    let share = a / liquidity.volume(j, i);
    Ok(liquidity.coefficient * share.powf(liquidity.exponent))
}

/// Liquidator profit for seizing value `a`: `(inc - sigma(a) - t) * a`.
/// May be negative; callers must reject non-positive-profit plans.
pub fn liquidator_profit(
    a: f64,
    j: usize,
    i: usize,
    incentive: f64,
    liquidity: &LiquidityMatrix,
    trading_fee: f64,
) -> Result<f64> {
    if j == i {
        // Same-asset transfer: no swap, no incentive, no profit.
        return Ok(0.0);
    }
    let sigma = slippage_fraction(a, j, i, liquidity)?;
    Ok((incentive - sigma - trading_fee) * a)
}

/// Loan value repaid when seizing `a`: `(1 - inc - sigma(a) - t) * a`.
pub fn repay_for_seize(
    a: f64,
    j: usize,
    i: usize,
    incentive: f64,
    liquidity: &LiquidityMatrix,
    trading_fee: f64,
) -> Result<f64> {
    if j == i {
        if !(a >= 0.0) {
            return Err(SimError::InvalidInput(format!("swap amount must be >= 0, got {a}")));
        }
        return Ok(a);
    }
    let sigma = slippage_fraction(a, j, i, liquidity)?;
    let fees = incentive + sigma + trading_fee;
    if a > 0.0 && fees >= 1.0 {
        return Err(SimError::InfeasibleSwap { fees });
    }
    Ok((1.0 - fees) * a)
}

/// Seize amount whose swap repays exactly `p`.
///
/// For `gamma == 1` the quadratic `p = F*a - s~*a^2` (with `F = 1 - inc - t`
/// and `s~ = s / V[j][i]`) is inverted in closed form, evaluated as
///
/// ```text
/// a = 2p / (F * (1 + sqrt(1 - 4*s~*p / F^2)))
/// ```
///
/// which stays stable for small `s~ * p` and degrades gracefully to `p / F`
/// at `s~ = 0`. The repay is only reachable while `p < F^2 / (4 s~)`; beyond
/// that bound no swap size produces it. Other exponents dispatch to
/// [`seize_for_repay_numeric`].
pub fn seize_for_repay(
    p: f64,
    j: usize,
    i: usize,
    incentive: f64,
    liquidity: &LiquidityMatrix,
    trading_fee: f64,
) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(SimError::InvalidInput(format!("repay amount must be >= 0, got {p}")));
    }
    if j == i {
        return Ok(p);
    }
    if liquidity.exponent != 1.0 {
        return seize_for_repay_numeric(p, j, i, incentive, liquidity, trading_fee);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let fee_free = 1.0 - incentive - trading_fee;
    if fee_free <= 0.0 {
        return Err(SimError::InfeasibleSwap { fees: incentive + trading_fee });
    }
    let s_tilde = liquidity.s_tilde(j, i);
    let disc = 1.0 - 4.0 * s_tilde * p / (fee_free * fee_free);
    if disc < 0.0 {
        return Err(SimError::InfeasibleRepay {
            repay: p,
            bound: fee_free * fee_free / (4.0 * s_tilde),
        });
    }
    Ok(2.0 * p / (fee_free * (1.0 + disc.sqrt())))
}

/// Root-finds `repay_for_seize(a) == p` for arbitrary slippage exponents.
/// Returns the smallest such `a` (the ascending branch of the repay curve).
pub fn seize_for_repay_numeric(
    p: f64,
    j: usize,
    i: usize,
    incentive: f64,
    liquidity: &LiquidityMatrix,
    trading_fee: f64,
) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(SimError::InvalidInput(format!("repay amount must be >= 0, got {p}")));
    }
    if j == i || p == 0.0 {
        return Ok(p);
    }
    let fee_free = 1.0 - incentive - trading_fee;
    if fee_free <= 0.0 {
        return Err(SimError::InfeasibleSwap { fees: incentive + trading_fee });
    }
    let s = liquidity.coefficient;
    if s == 0.0 {
        return Ok(p / fee_free);
    }
    let gamma = liquidity.exponent;
    let volume = liquidity.volume(j, i);
    // Repay peaks where its derivative F - s*(gamma+1)*(a/V)^gamma vanishes.
    let a_peak = volume * (fee_free / (s * (gamma + 1.0))).powf(1.0 / gamma);
    let repay = |a: f64| (1.0 - incentive - trading_fee - s * (a / volume).powf(gamma)) * a;
    let p_max = repay(a_peak);
    if p > p_max {
        return Err(SimError::InfeasibleRepay { repay: p, bound: p_max });
    }
    let tol = 1e-12 * p.max(1.0);
    let (mut lo, mut hi) = (0.0_f64, a_peak);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = repay(mid);
        if (r - p).abs() <= tol {
            return Ok(mid);
        }
        if r < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Profit-maximizing seize amount and its repay.
///
/// For `j != i` the profit `(inc - t)*a - s~*a^(gamma)*a` is stationary at
/// `a_bar = V * ((inc - t) / (s * (gamma + 1)))^(1/gamma)`, which reduces to
/// `(inc - t) / (2 s~)` for `gamma = 1`. When market impact never binds
/// (`s = 0`, or `j == i`) the sentinel `(inf, inf)` is returned and callers
/// cap the size by their other constraints.
pub fn optimal_seize(
    j: usize,
    i: usize,
    incentive: f64,
    liquidity: &LiquidityMatrix,
    trading_fee: f64,
) -> Result<(f64, f64)> {
    if j == i || liquidity.coefficient == 0.0 {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let net = incentive - trading_fee;
    if net <= 0.0 {
        // No profitable liquidation at any size.
        return Ok((0.0, 0.0));
    }
    let gamma = liquidity.exponent;
    let a_bar = liquidity.volume(j, i) * (net / (liquidity.coefficient * (gamma + 1.0))).powf(1.0 / gamma);
    let p_bar = repay_for_seize(a_bar, j, i, incentive, liquidity, trading_fee)?;
    Ok((a_bar, p_bar))
}

/// Full economics of one candidate swap.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapQuote {
    pub pair_from: usize,
    pub pair_to: usize,
    pub seize: f64,
    pub slippage_fraction: f64,
    pub trading_fee_fraction: f64,
    pub repaid: f64,
    pub profit: f64,
}

pub fn quote(
    a: f64,
    j: usize,
    i: usize,
    incentive: f64,
    liquidity: &LiquidityMatrix,
    trading_fee: f64,
) -> Result<SwapQuote> {
    let repaid = repay_for_seize(a, j, i, incentive, liquidity, trading_fee)?;
    let profit = liquidator_profit(a, j, i, incentive, liquidity, trading_fee)?;
    let slippage = slippage_fraction(a, j, i, liquidity)?;
    Ok(SwapQuote {
        pair_from: j,
        pair_to: i,
        seize: a,
        slippage_fraction: slippage,
        trading_fee_fraction: if j == i { 0.0 } else { trading_fee },
        repaid,
        profit,
    })
}
