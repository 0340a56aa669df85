//! Per-tick liquidation engine: find liquidatable users, solve each
//! liquidator's constrained pair-selection problem, and apply the resulting
//! state transitions.

use crate::error::{Result, SimError};
use crate::execution;
use crate::protocol::{
    user_liq_ltv, user_ltv, AssetParams, LiquidityMatrix, LtvThresholdDenominator, UserAccount,
};

/// One executed liquidator action. Fee fields are single-counted
/// (`sigma * a` and `t * a`); the run ledger books each twice so that
/// `seize - repaid = profit + 2*slippage_fee + 2*trading_fee` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LiquidationPlan {
    pub user_id: usize,
    pub collateral_asset: usize,
    pub loan_asset: usize,
    pub seize: f64,
    pub repaid: f64,
    pub profit: f64,
    pub slippage_fee: f64,
    pub trading_fee: f64,
    pub tick: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TickSettings {
    pub trading_fee: f64,
    pub ltv_mode: LtvThresholdDenominator,
    /// Re-liquidate a user within the same tick until they are healthy or no
    /// profitable plan remains (default off: one plan per user per tick).
    pub repeat_within_tick: bool,
}

impl Default for TickSettings {
    fn default() -> Self {
        TickSettings {
            trading_fee: 0.0,
            ltv_mode: LtvThresholdDenominator::Collateral,
            repeat_within_tick: false,
        }
    }
}

fn is_liquidatable(
    user: &UserAccount,
    assets: &[AssetParams],
    prices: &[f64],
    mode: LtvThresholdDenominator,
) -> bool {
    if user.is_frozen() || user.loan_value(prices) <= 0.0 {
        return false;
    }
    user_ltv(user, prices) > user_liq_ltv(user, assets, prices, mode)
}

/// Users whose LTV strictly exceeds their weighted liquidation threshold,
/// excluding frozen accounts and accounts without loans.
pub fn find_liquidatable(
    users: &[UserAccount],
    assets: &[AssetParams],
    prices: &[f64],
    mode: LtvThresholdDenominator,
) -> Vec<usize> {
    users
        .iter()
        .enumerate()
        .filter(|(_, u)| is_liquidatable(u, assets, prices, mode))
        .map(|(id, _)| id)
        .collect()
}

/// Solves the liquidator's pair-selection problem for one user: across all
/// (collateral j, loan i) pairs, seize the profit-optimal amount subject to
/// the market-impact optimum, the collateral balance, and the close-factor
/// repay ceiling. Returns `None` when no pair yields positive profit.
pub fn best_plan(
    user_id: usize,
    user: &UserAccount,
    assets: &[AssetParams],
    prices: &[f64],
    liquidity: &LiquidityMatrix,
    trading_fee: f64,
    tick: usize,
) -> Option<LiquidationPlan> {
    let n = assets.len();
    let mut best: Option<LiquidationPlan> = None;
    for j in 0..n {
        let collateral_value = user.collateral_units[j] * prices[j];
        if collateral_value <= 0.0 {
            continue;
        }
        let incentive = assets[j].liquidation_incentive;
        for i in 0..n {
            let loan_value = user.loan_units[i] * prices[i];
            if loan_value <= 0.0 {
                continue;
            }
            let (a_bar, _) = match execution::optimal_seize(j, i, incentive, liquidity, trading_fee) {
                Ok(opt) => opt,
                Err(_) => continue,
            };
            let repay_ceiling = assets[i].close_factor * loan_value;
            let seize_ceiling =
                match execution::seize_for_repay(repay_ceiling, j, i, incentive, liquidity, trading_fee) {
                    Ok(a) => a,
                    // ceiling beyond the swappable bound: no size can repay
                    // that much, so the constraint never binds
                    Err(SimError::InfeasibleRepay { .. }) => f64::INFINITY,
                    Err(_) => continue,
                };
            let a_star = a_bar.min(collateral_value).min(seize_ceiling);
            if !(a_star > 0.0) || !a_star.is_finite() {
                continue;
            }
            let q = match execution::quote(a_star, j, i, incentive, liquidity, trading_fee) {
                Ok(q) => q,
                Err(_) => continue,
            };
            if q.profit <= 0.0 || q.repaid <= 0.0 {
                continue;
            }
            // strict improvement keeps the lowest (j, i) pair on exact ties
            if best.as_ref().map_or(true, |b| q.profit > b.profit) {
                best = Some(LiquidationPlan {
                    user_id,
                    collateral_asset: j,
                    loan_asset: i,
                    seize: q.seize,
                    repaid: q.repaid,
                    profit: q.profit,
                    slippage_fee: q.slippage_fraction * q.seize,
                    trading_fee: q.trading_fee_fraction * q.seize,
                    tick,
                });
            }
        }
    }
    best
}

/// Seized collateral may exceed the balance (and repaid the loans) by at most
/// this relative slack before a plan is rejected as stale.
const STALE_TOLERANCE: f64 = 1e-9;

/// Applies a plan: collateral value of `j` drops by the seize amount, loan
/// value of `i` by the repaid amount, converted to token units at current
/// prices. Floating-point dust below zero is clamped; real violations of the
/// plan's constraints reject it as stale.
pub fn apply_plan(user: &mut UserAccount, plan: &LiquidationPlan, prices: &[f64]) -> Result<()> {
    if plan.seize == 0.0 {
        return Ok(());
    }
    let j = plan.collateral_asset;
    let i = plan.loan_asset;
    let collateral_value = user.collateral_units[j] * prices[j];
    let loan_value = user.loan_units[i] * prices[i];
    if plan.seize > collateral_value * (1.0 + STALE_TOLERANCE) {
        return Err(SimError::StalePlan(format!(
            "seize {} exceeds collateral value {collateral_value}",
            plan.seize
        )));
    }
    if plan.repaid > loan_value * (1.0 + STALE_TOLERANCE) {
        return Err(SimError::StalePlan(format!(
            "repay {} exceeds loan value {loan_value}",
            plan.repaid
        )));
    }
    let clamp = |units: f64, pre: f64| -> Result<f64> {
        if units >= 0.0 {
            Ok(units)
        } else if units >= -STALE_TOLERANCE * (1.0 + pre) {
            Ok(0.0)
        } else {
            Err(SimError::StalePlan(format!("token balance driven to {units}")))
        }
    };
    let pre_c = user.collateral_units[j];
    let pre_l = user.loan_units[i];
    user.collateral_units[j] = clamp(pre_c - plan.seize / prices[j], pre_c)?;
    user.loan_units[i] = clamp(pre_l - plan.repaid / prices[i], pre_l)?;
    Ok(())
}

/// Runs one minute of liquidations. Users are processed in id order and each
/// receives at most one applied plan per tick unless `repeat_within_tick`.
/// Returns the executed plans (canonically ordered by user id).
pub fn liquidation_tick(
    users: &mut [UserAccount],
    assets: &[AssetParams],
    liquidity: &LiquidityMatrix,
    prices: &[f64],
    tick: usize,
    settings: &TickSettings,
) -> Vec<LiquidationPlan> {
    let mut executed = Vec::new();
    let candidates = find_liquidatable(users, assets, prices, settings.ltv_mode);
    for id in candidates {
        loop {
            let Some(plan) =
                best_plan(id, &users[id], assets, prices, liquidity, settings.trading_fee, tick)
            else {
                break;
            };
            apply_plan(&mut users[id], &plan, prices)
                .expect("freshly computed plan cannot be stale");
            executed.push(plan);
            if !settings.repeat_within_tick
                || !is_liquidatable(&users[id], assets, prices, settings.ltv_mode)
            {
                break;
            }
        }
    }
    executed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::portfolio_value;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn asset(symbol: &str, liq_ltv: f64, incentive: f64) -> AssetParams {
        AssetParams {
            symbol: symbol.into(),
            max_ltv: liq_ltv - 0.05,
            liq_ltv,
            close_factor: 0.5,
            liquidation_incentive: incentive,
            is_numeraire_pegged: false,
            initial_price: 1.0,
            hourly_vol: 0.0,
        }
    }

    fn account(c: &[f64], l: &[f64]) -> UserAccount {
        UserAccount { collateral_units: c.to_vec(), loan_units: l.to_vec() }
    }

    fn frictionless(n: usize) -> LiquidityMatrix {
        LiquidityMatrix::new(n, 1e12, 0.0, 1.0).unwrap()
    }

    #[test]
    fn below_threshold_not_listed() {
        let assets = vec![asset("A", 0.85, 0.05), asset("B", 0.85, 0.05)];
        let users = vec![account(&[100.0, 0.0], &[0.0, 70.0])]; // ltv 0.70
        let got = find_liquidatable(&users, &assets, &[1.0, 1.0], LtvThresholdDenominator::Collateral);
        assert!(got.is_empty());
    }

    #[test]
    fn strictly_above_threshold_listed() {
        let assets = vec![asset("A", 0.85, 0.05), asset("B", 0.85, 0.05)];
        let users = vec![
            account(&[100.0, 0.0], &[0.0, 86.0]), // 0.86 > 0.85
            account(&[100.0, 0.0], &[0.0, 85.0]), // exactly at threshold: not listed
        ];
        let got = find_liquidatable(&users, &assets, &[1.0, 1.0], LtvThresholdDenominator::Collateral);
        assert_eq!(got, vec![0]);
    }

    #[test]
    fn frozen_accounts_excluded() {
        let assets = vec![asset("A", 0.85, 0.05)];
        let users = vec![account(&[0.0], &[10.0])];
        assert!(users[0].is_frozen());
        let got = find_liquidatable(&users, &assets, &[1.0], LtvThresholdDenominator::Collateral);
        assert!(got.is_empty());
    }

    #[test]
    fn close_factor_binds_the_plan() {
        // huge liquidity, huge collateral: only the repay ceiling binds
        let assets = vec![asset("A", 0.8, 0.05), asset("B", 0.8, 0.05)];
        let liq = LiquidityMatrix::new(2, 1e12, 1.0, 1.0).unwrap();
        let user = account(&[1000.0, 0.0], &[0.0, 900.0]);
        let plan = best_plan(0, &user, &assets, &[1.0, 1.0], &liq, 0.0, 3).unwrap();
        assert_relative_eq!(plan.repaid, 450.0, max_relative = 1e-9);
        assert_eq!(plan.collateral_asset, 0);
        assert_eq!(plan.loan_asset, 1);
        assert_eq!(plan.tick, 3);
    }

    #[test]
    fn higher_incentive_pair_wins() {
        let assets = vec![
            asset("LOW", 0.8, 0.05),
            asset("HIGH", 0.8, 0.10),
            asset("USD", 0.8, 0.0),
        ];
        let liq = LiquidityMatrix::new(3, 1e9, 1.0, 1.0).unwrap();
        let user = account(&[500.0, 500.0, 0.0], &[0.0, 0.0, 900.0]);
        let plan = best_plan(0, &user, &assets, &[1.0, 1.0, 1.0], &liq, 0.0, 0).unwrap();
        assert_eq!(plan.collateral_asset, 1);
    }

    #[test]
    fn no_incentive_means_no_plan() {
        let assets = vec![asset("A", 0.8, 0.0), asset("B", 0.8, 0.0)];
        let user = account(&[1000.0, 0.0], &[0.0, 900.0]);
        assert!(best_plan(0, &user, &assets, &[1.0, 1.0], &frictionless(2), 0.0, 0).is_none());
    }

    #[test]
    fn exact_ties_pick_lowest_pair() {
        // two identical collateral positions; profits tie exactly
        let assets = vec![asset("A", 0.8, 0.05), asset("B", 0.8, 0.05), asset("C", 0.8, 0.0)];
        let liq = LiquidityMatrix::new(3, 1e9, 1.0, 1.0).unwrap();
        let user = account(&[400.0, 400.0, 0.0], &[0.0, 0.0, 900.0]);
        let plan = best_plan(0, &user, &assets, &[1.0, 1.0, 1.0], &liq, 0.0, 0).unwrap();
        assert_eq!((plan.collateral_asset, plan.loan_asset), (0, 2));
    }

    #[test]
    fn apply_decreases_ltv_below_fee_boundary() {
        // ltv 0.9 < 1 - x = 0.95
        let assets = vec![asset("A", 0.8, 0.05), asset("B", 0.8, 0.05)];
        let prices = [1.0, 1.0];
        let mut user = account(&[1000.0, 0.0], &[0.0, 900.0]);
        let plan = best_plan(0, &user, &assets, &prices, &frictionless(2), 0.0, 0).unwrap();
        apply_plan(&mut user, &plan, &prices).unwrap();
        let ltv = user_ltv(&user, &prices);
        assert!(ltv < 0.9, "ltv {ltv}");
    }

    #[test]
    fn apply_increases_ltv_above_fee_boundary() {
        // ltv 0.98 > 1 - x = 0.95: the runaway regime
        let assets = vec![asset("A", 0.8, 0.05), asset("B", 0.8, 0.05)];
        let prices = [1.0, 1.0];
        let mut user = account(&[1000.0, 0.0], &[0.0, 980.0]);
        let plan = best_plan(0, &user, &assets, &prices, &frictionless(2), 0.0, 0).unwrap();
        apply_plan(&mut user, &plan, &prices).unwrap();
        let ltv = user_ltv(&user, &prices);
        assert!(ltv > 0.98, "ltv {ltv}");
    }

    #[test]
    fn zero_seize_plan_is_a_noop() {
        let prices = [1.0, 1.0];
        let mut user = account(&[10.0, 0.0], &[0.0, 5.0]);
        let before = user.clone();
        let plan = LiquidationPlan {
            user_id: 0,
            collateral_asset: 0,
            loan_asset: 1,
            seize: 0.0,
            repaid: 0.0,
            profit: 0.0,
            slippage_fee: 0.0,
            trading_fee: 0.0,
            tick: 0,
        };
        apply_plan(&mut user, &plan, &prices).unwrap();
        assert_eq!(user, before);
    }

    #[test]
    fn stale_plan_rejected() {
        let prices = [1.0, 1.0];
        let mut user = account(&[10.0, 0.0], &[0.0, 9.0]);
        let plan = LiquidationPlan {
            user_id: 0,
            collateral_asset: 0,
            loan_asset: 1,
            seize: 11.0, // more than the collateral is worth
            repaid: 4.0,
            profit: 0.5,
            slippage_fee: 0.0,
            trading_fee: 0.0,
            tick: 0,
        };
        assert!(matches!(apply_plan(&mut user, &plan, &prices), Err(SimError::StalePlan(_))));
    }

    #[test]
    fn calm_tick_executes_nothing() {
        let assets = vec![asset("A", 0.8, 0.05), asset("B", 0.8, 0.05)];
        let mut users = vec![account(&[100.0, 0.0], &[0.0, 60.0])];
        let plans = liquidation_tick(
            &mut users,
            &assets,
            &frictionless(2),
            &[1.0, 1.0],
            0,
            &TickSettings::default(),
        );
        assert!(plans.is_empty());
    }

    #[test]
    fn users_processed_independently_in_id_order() {
        let assets = vec![asset("A", 0.8, 0.05), asset("B", 0.8, 0.05)];
        let mut users = vec![
            account(&[1000.0, 0.0], &[0.0, 900.0]),
            account(&[100.0, 0.0], &[0.0, 60.0]), // healthy
            account(&[500.0, 0.0], &[0.0, 450.0]),
        ];
        let plans = liquidation_tick(
            &mut users,
            &assets,
            &frictionless(2),
            &[1.0, 1.0],
            7,
            &TickSettings::default(),
        );
        assert_eq!(plans.len(), 2);
        assert_eq!(plans[0].user_id, 0);
        assert_eq!(plans[1].user_id, 2);
        assert!(plans.iter().all(|p| p.profit > 0.0));
    }

    #[test]
    fn repeat_within_tick_heals_the_user() {
        let assets = vec![asset("A", 0.8, 0.05), asset("B", 0.8, 0.05)];
        let mut users = vec![account(&[1000.0, 0.0], &[0.0, 900.0])];
        let settings = TickSettings { repeat_within_tick: true, ..TickSettings::default() };
        let plans =
            liquidation_tick(&mut users, &assets, &frictionless(2), &[1.0, 1.0], 0, &settings);
        assert!(plans.len() > 1);
        let mode = LtvThresholdDenominator::Collateral;
        assert!(!is_liquidatable(&users[0], &assets, &[1.0, 1.0], mode));
    }

    #[test]
    fn conservation_per_plan() {
        let assets = vec![asset("A", 0.8, 0.07), asset("B", 0.8, 0.04)];
        let liq = LiquidityMatrix::new(2, 1e7, 1.0, 1.0).unwrap();
        let prices = [2.0, 0.5];
        let mut user = account(&[500.0, 0.0], &[0.0, 1900.0]);
        let plan = best_plan(0, &user, &assets, &prices, &liq, 0.003, 0).unwrap();
        let c_before = user.collateral_value(&prices);
        let l_before = user.loan_value(&prices);
        apply_plan(&mut user, &plan, &prices).unwrap();
        assert_relative_eq!(c_before - user.collateral_value(&prices), plan.seize, max_relative = 1e-12);
        assert_relative_eq!(l_before - user.loan_value(&prices), plan.repaid, max_relative = 1e-12);
        // a - p = profit + 2*slippage + 2*trading, exactly
        assert_relative_eq!(
            plan.seize - plan.repaid,
            plan.profit + 2.0 * plan.slippage_fee + 2.0 * plan.trading_fee,
            max_relative = 1e-12
        );
    }

    proptest! {
        // With constant total fee x, one liquidation moves LTV strictly down
        // iff the pre-LTV is below 1 - x (and strictly up above it).
        #[test]
        fn ltv_dichotomy_under_constant_fees(
            inc in 0.01..0.4f64,
            t in 0.0..0.05f64,
            pre_ltv in 0.3..1.2f64,
            collateral in 100.0..10_000.0f64,
        ) {
            let x = inc + t;
            prop_assume!((pre_ltv - (1.0 - x)).abs() > 0.005);
            let mut a = asset("A", 0.8, inc);
            a.close_factor = 0.5;
            let assets = vec![a, asset("B", 0.8, 0.0)];
            let prices = [1.0, 1.0];
            let mut user = account(&[collateral, 0.0], &[0.0, pre_ltv * collateral]);
            let Some(plan) = best_plan(0, &user, &assets, &prices, &frictionless(2), t, 0) else {
                // no profitable plan (never happens with positive inc - t)
                prop_assert!(inc <= t);
                return Ok(());
            };
            let before = user_ltv(&user, &prices);
            apply_plan(&mut user, &plan, &prices).unwrap();
            let after = user_ltv(&user, &prices);
            if pre_ltv < 1.0 - x {
                prop_assert!(after < before, "{before} -> {after}");
            } else {
                prop_assert!(after > before, "{before} -> {after}");
            }
        }

        // Executed plans always respect the live close-factor ceiling and
        // positive profit, and never grow the portfolio's net value.
        #[test]
        fn plans_respect_caps(
            loans in 50.0..5000.0f64,
            collateral_a in 50.0..5000.0f64,
            collateral_b in 50.0..5000.0f64,
            volume in 1e4..1e9f64,
        ) {
            let assets = vec![
                asset("A", 0.5, 0.08),
                asset("B", 0.5, 0.03),
                asset("USD", 0.5, 0.0),
            ];
            let liq = LiquidityMatrix::new(3, volume, 1.0, 1.0).unwrap();
            let prices = [1.0, 3.0, 1.0];
            let mut users = vec![UserAccount {
                collateral_units: vec![collateral_a, collateral_b / 3.0, 0.0],
                loan_units: vec![0.0, 0.0, loans],
            }];
            let before_net = portfolio_value(&users[0], &prices);
            let plans = liquidation_tick(
                &mut users,
                &assets,
                &liq,
                &prices,
                0,
                &TickSettings { trading_fee: 0.003, ..TickSettings::default() },
            );
            for p in &plans {
                prop_assert!(p.profit > 0.0);
                prop_assert!(p.repaid <= 0.5 * loans * (1.0 + 1e-9));
            }
            let after_net = portfolio_value(&users[0], &prices);
            prop_assert!(after_net <= before_net + 1e-9 * before_net.abs());
        }
    }
}
