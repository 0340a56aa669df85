//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `--nocapture` to see them). Criterion 8 (byte-identical CLI
//! output across thread counts) lives in the CLI crate's acceptance tests.

use lendsim_core::execution::{liquidator_profit, optimal_seize, repay_for_seize, seize_for_repay};
use lendsim_core::harness::{
    run_ensemble, run_once, stream_rng, sweep_frontier, PopulationSource, PriceProvider, Scenario,
};
use lendsim_core::population::{
    allocate, draw_targets, generate_population, rescale_user, unwind, PopulationParams,
};
use lendsim_core::prices::{
    realized_hourly_vol, rescale_to_vol, sample_window, History, Segment, TICKS_PER_DAY,
};
use lendsim_core::protocol::{
    portfolio_value, user_ltv, AssetParams, LiquidityMatrix, LtvThresholdDenominator,
};
use lendsim_core::liquidation::{apply_plan, best_plan};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "[criterion {criterion}] {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn asset(
    symbol: &str,
    max_ltv: f64,
    liq_ltv: f64,
    incentive: f64,
    pegged: bool,
    initial_price: f64,
    hourly_vol: f64,
) -> AssetParams {
    AssetParams {
        symbol: symbol.into(),
        max_ltv,
        liq_ltv,
        close_factor: 0.5,
        liquidation_incentive: incentive,
        is_numeraire_pegged: pegged,
        initial_price,
        hourly_vol,
    }
}

/// Dual-asset long-only market: volatile collateral, pegged loans.
fn dual_asset_scenario(
    n_users: usize,
    n_runs: usize,
    hourly_vol: f64,
    liq_ltv: f64,
    incentive: f64,
    pair_volume: f64,
    trading_fee: f64,
) -> Scenario {
    Scenario {
        name: "dual".into(),
        assets: vec![
            asset("MATIC", liq_ltv, liq_ltv, incentive, false, 0.85, hourly_vol),
            asset("USDC", 0.80, 0.85, 0.05, true, 1.0, 0.0),
        ],
        liquidity: LiquidityMatrix::new(2, pair_volume, 1.0, 1.0).unwrap(),
        population: PopulationSource::Generated(PopulationParams {
            mean_portfolio: 5000.0,
            portfolio_log_std: 1.0,
            mean_ltv: 0.6,
            ltv_log_std: 0.25,
            min_ltv: 0.45,
            collateral_assets: vec![0],
            loan_assets: vec![1],
        }),
        prices: PriceProvider::Synthetic {
            initial: vec![0.85, 1.0],
            hourly_vols: vec![hourly_vol, 0.0],
            pegged: vec![false, true],
            correlation: None,
        },
        n_users,
        n_runs,
        master_seed: 20_260_809,
        trading_fee,
        ltv_mode: LtvThresholdDenominator::Collateral,
        repeat_within_tick: false,
        crossed: None,
    }
}

/// Four-asset market with paper-style parameters, volumes scaled to the
/// requested user count (the reference volumes pair with 1000 users).
fn multi_asset_scenario(n_users: usize, n_runs: usize, vol_multiplier: f64) -> Scenario {
    let scale = n_users as f64 / 1000.0;
    // base hourly vols sit at typical crypto realized levels (~4-7% daily)
    let assets = vec![
        asset("ETH", 0.75, 0.80, 0.08, false, 1800.0, 0.010 * vol_multiplier),
        asset("BTC", 0.75, 0.80, 0.08, false, 27000.0, 0.008 * vol_multiplier),
        asset("MATIC", 0.75, 0.80, 0.08, false, 0.85, 0.015 * vol_multiplier),
        asset("USDC", 0.80, 0.85, 0.08, true, 1.0, 0.0),
    ];
    let mut liquidity = LiquidityMatrix::new(4, 1e9 * scale, 1.0, 1.0).unwrap();
    for other in 0..3usize {
        if assets[other].symbol != "MATIC" {
            liquidity.set_pair_volume(other, 2, 1e8 * scale).unwrap();
        }
    }
    liquidity.set_pair_volume(3, 2, 1e8 * scale).unwrap();
    let correlation = vec![
        vec![1.0, 0.8, 0.6],
        vec![0.8, 1.0, 0.6],
        vec![0.6, 0.6, 1.0],
    ];
    Scenario {
        name: "multi".into(),
        prices: PriceProvider::Synthetic {
            initial: assets.iter().map(|a| a.initial_price).collect(),
            hourly_vols: assets.iter().map(|a| a.hourly_vol).collect(),
            pegged: assets.iter().map(|a| a.is_numeraire_pegged).collect(),
            correlation: Some(correlation),
        },
        assets,
        liquidity,
        population: PopulationSource::Generated(PopulationParams {
            mean_portfolio: 5000.0,
            portfolio_log_std: 1.0,
            mean_ltv: 0.6,
            ltv_log_std: 0.25,
            min_ltv: 0.45,
            collateral_assets: vec![0, 1, 2, 3],
            loan_assets: vec![0, 1, 2, 3],
        }),
        n_users,
        n_runs,
        master_seed: 4242,
        trading_fee: 0.003,
        ltv_mode: LtvThresholdDenominator::Collateral,
        repeat_within_tick: false,
        crossed: None,
    }
}

// ---------------------------------------------------------------------------
// 1. Frontier vs constant-fee theory
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_frontier_matches_constant_fee_boundary() {
    // Desk scale: 200 users, 50 runs per cell, one volatile/pegged pair,
    // high volatility, zero trading fee. At this liquidity the mean
    // slippage at execution is below 1e-4 and is folded into the 0.05
    // tolerance together with the 0.02 incentive grid pitch.
    let template = dual_asset_scenario(200, 50, 0.05, 0.7, 0.1, 1e8, 0.0);
    let liq_grid: Vec<f64> = (0..10).map(|k| 0.50 + 0.05 * k as f64).collect();
    let inc_grid: Vec<f64> = (0..23).map(|k| 0.01 + 0.02 * k as f64).collect();
    let result = sweep_frontier(&template, &liq_grid, &inc_grid, 0.01).unwrap();

    let mut worst: (f64, f64, f64) = (0.0, f64::NAN, f64::NAN); // |dev|, liq, inc*
    let mut checked = 0;
    let mut pass = true;
    for point in &result.boundary {
        let theory = 1.0 - point.liq_ltv;
        let dev = point.incentive - theory;
        if point.liq_ltv >= 0.7 - 1e-9 {
            checked += 1;
            if dev.abs() > worst.0 {
                worst = (dev.abs(), point.liq_ltv, point.incentive);
            }
            if dev.abs() > 0.05 {
                pass = false;
            }
        } else {
            // low-threshold columns: the hard 0.45 initial-LTV floor drags
            // the empirical boundary at or below the theory line
            if dev > 0.05 {
                pass = false;
            }
            println!(
                "    low-liqLtv deviation: liqLtv {} boundary inc {} vs theory {theory:.2}",
                point.liq_ltv, point.incentive
            );
        }
    }
    // every column in the checked range must have detected a boundary
    let columns_checked = liq_grid.iter().filter(|&&l| l >= 0.7 - 1e-9).count();
    if checked != columns_checked {
        pass = false;
    }
    report(
        1,
        "undercollateralization frontier vs 1 - liqLtv",
        pass,
        &format!(
            "{checked}/{columns_checked} columns detected; worst |dev| {:.3} at liqLtv {} (inc* {})",
            worst.0, worst.1, worst.2
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Safe-region default risk under 10x volatility
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_safe_region_under_ten_x_volatility() {
    let scenario = multi_asset_scenario(500, 50, 10.0);
    let stats = run_ensemble(&scenario).unwrap();
    let fraction = stats.final_undercollateralized.mean;
    let pass = fraction < 0.001;
    report(
        2,
        "default risk below 0.1% at liqLtv 0.8 / inc 0.08 under 10x volatility",
        pass,
        &format!("ensemble mean undercollateralized fraction {fraction:.6}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Swap-math oracle equivalence
// ---------------------------------------------------------------------------

/// Independent inverse: bisection on the ascending branch of the forward
/// repay curve, which ends at the curve's vertex.
fn bisect_seize(p: f64, incentive: f64, s_tilde: f64) -> f64 {
    let forward = |a: f64| (1.0 - incentive - s_tilde * a) * a;
    let mut hi = (1.0 - incentive) / (2.0 * s_tilde);
    debug_assert!(forward(hi) >= p);
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if forward(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Independent optimum: grid scan of the profit curve plus one exact
/// parabolic refinement around the best grid point.
fn grid_scan_optimum(incentive: f64, s_tilde: f64) -> f64 {
    let profit = |a: f64| (incentive - s_tilde * a) * a;
    // profit returns to zero at a = inc / s_tilde
    let hi = incentive / s_tilde;
    let n = 4096usize;
    let mut best_k = 0usize;
    let mut best = f64::MIN;
    for k in 0..=n {
        let a = hi * k as f64 / n as f64;
        let v = profit(a);
        if v > best {
            best = v;
            best_k = k;
        }
    }
    let h = hi / n as f64;
    let (a0, a1, a2) = (
        hi * (best_k.saturating_sub(1)) as f64 / n as f64,
        hi * best_k as f64 / n as f64,
        hi * (best_k + 1).min(n) as f64 / n as f64,
    );
    let (y0, y1, y2) = (profit(a0), profit(a1), profit(a2));
    let denom = y0 - 2.0 * y1 + y2;
    if denom.abs() < f64::MIN_POSITIVE {
        return a1;
    }
    a1 + h * 0.5 * (y0 - y2) / denom
}

#[test]
fn criterion_3_swap_math_matches_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst_inverse = 0.0f64;
    for _ in 0..10_000 {
        let incentive = rng.random_range(0.0..0.6);
        let s_tilde = 10f64.powf(rng.random_range(-12.0..-3.0));
        let bound = (1.0 - incentive) * (1.0 - incentive) / (4.0 * s_tilde);
        let p = rng.random_range(0.01..0.99) * bound;
        let liquidity = LiquidityMatrix::new(2, 1.0 / s_tilde, 1.0, 1.0).unwrap();
        let closed = seize_for_repay(p, 0, 1, incentive, &liquidity, 0.0).unwrap();
        let oracle = bisect_seize(p, incentive, s_tilde);
        worst_inverse = worst_inverse.max((closed - oracle).abs() / oracle.max(1e-300));
    }
    let inverse_ok = worst_inverse <= 1e-9;

    let mut worst_opt = 0.0f64;
    for _ in 0..1000 {
        let incentive = rng.random_range(0.01..0.6);
        let s_tilde = 10f64.powf(rng.random_range(-12.0..-3.0));
        let liquidity = LiquidityMatrix::new(2, 1.0 / s_tilde, 1.0, 1.0).unwrap();
        let (a_bar, _) = optimal_seize(0, 1, incentive, &liquidity, 0.0).unwrap();
        let scanned = grid_scan_optimum(incentive, s_tilde);
        worst_opt = worst_opt.max((a_bar - scanned).abs() / scanned);
    }
    let opt_ok = worst_opt <= 1e-6;

    let pass = inverse_ok && opt_ok;
    report(
        3,
        "closed-form swap inverse and optimal seize vs numeric oracles",
        pass,
        &format!("worst inverse rel err {worst_inverse:.2e}; worst optimum rel err {worst_opt:.2e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. LTV-monotonicity dichotomy
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_ltv_dichotomy_under_constant_fees() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut checked = 0;
    let mut violations = 0;
    while checked < 1000 {
        let incentive: f64 = rng.random_range(0.02..0.45);
        let trading_fee: f64 = rng.random_range(0.0..0.02);
        let x = incentive + trading_fee; // sigma = 0: frictionless pool
        let pre_ltv: f64 = rng.random_range(0.3..1.3);
        if (pre_ltv - (1.0 - x)).abs() <= 0.005 {
            continue;
        }
        let collateral = rng.random_range(100.0..10_000.0);
        let assets = vec![
            asset("C", 0.7, 0.75, incentive, false, 1.0, 0.0),
            asset("L", 0.7, 0.75, 0.0, true, 1.0, 0.0),
        ];
        let liquidity = LiquidityMatrix::new(2, 1e9, 0.0, 1.0).unwrap();
        let prices = [1.0, 1.0];
        let mut user = lendsim_core::UserAccount {
            collateral_units: vec![collateral, 0.0],
            loan_units: vec![0.0, pre_ltv * collateral],
        };
        let Some(plan) = best_plan(0, &user, &assets, &prices, &liquidity, trading_fee, 0) else {
            continue;
        };
        apply_plan(&mut user, &plan, &prices).unwrap();
        let post = user_ltv(&user, &prices);
        let decreased = post < pre_ltv;
        if (pre_ltv < 1.0 - x) != decreased || post == pre_ltv {
            violations += 1;
        }
        checked += 1;
    }
    let pass = violations == 0;
    report(
        4,
        "liquidations decrease LTV iff pre-LTV < 1 - x",
        pass,
        &format!("{violations} violations over {checked} randomized accounts"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. Scale invariance
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_scale_invariance_at_lambda_ten() {
    let lambda = 10.0;
    let base = multi_asset_scenario(100, 10, 3.0);
    let mut scaled = base.clone();
    scaled.liquidity.scale_volumes(lambda);
    if let PopulationSource::Generated(p) = &mut scaled.population {
        p.mean_portfolio *= lambda;
    }

    let mut worst_fraction = 0.0f64;
    let mut events_equal = true;
    let mut worst_value = 0.0f64;
    for run in 0..base.n_runs {
        let a = run_once(&base, run).unwrap();
        let b = run_once(&scaled, run).unwrap();
        for t in 0..TICKS_PER_DAY {
            let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-12);
            worst_fraction = worst_fraction.max(rel(a.mean_ltv[t], b.mean_ltv[t]));
            worst_fraction =
                worst_fraction.max(rel(a.outstanding_debt_pct[t], b.outstanding_debt_pct[t]));
            if a.liquidation_events[t] != b.liquidation_events[t] {
                events_equal = false;
            }
            // value series scale by lambda
            let scaled_funds = a.liquidated_funds_cum[t] * lambda;
            worst_value = worst_value.max(
                (scaled_funds - b.liquidated_funds_cum[t]).abs() / scaled_funds.abs().max(1e-9),
            );
        }
        worst_fraction = worst_fraction.max(
            (a.final_undercollateralized_fraction - b.final_undercollateralized_fraction).abs(),
        );
    }
    let pass = worst_fraction < 1e-9 && events_equal && worst_value < 1e-9;
    report(
        5,
        "fractional metrics invariant under lambda = 10 portfolio/volume scaling",
        pass,
        &format!(
            "worst fractional rel diff {worst_fraction:.2e}; events equal: {events_equal}; worst value rel diff {worst_value:.2e}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. Initialization exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_initialization_exactness() {
    let scenario = multi_asset_scenario(1000, 1, 1.0);
    let PopulationSource::Generated(params) = &scenario.population else { unreachable!() };
    let prices: Vec<f64> = scenario.assets.iter().map(|a| a.initial_price).collect();

    let users = generate_population(
        params,
        &scenario.assets,
        1000,
        &prices,
        &mut stream_rng(scenario.master_seed, 1),
    )
    .unwrap();

    // independent replay of the generation pipeline from the same stream,
    // capturing the drawn targets that the accounts must hit exactly
    let mut rng = stream_rng(scenario.master_seed, 1);
    let mut worst_pf = 0.0f64;
    let mut worst_ltv = 0.0f64;
    for user in &users {
        let (c, l) = loop {
            let (c_raw, l_raw) = allocate(4, &params.collateral_assets, &params.loan_assets, &mut rng);
            let (c, l) = unwind(&c_raw, &l_raw);
            if c.iter().sum::<f64>() > 0.0 && l.iter().sum::<f64>() > 0.0 {
                break (c, l);
            }
        };
        let total: f64 = c.iter().sum();
        let weighted_max = c
            .iter()
            .enumerate()
            .map(|(i, v)| v * scenario.assets[i].max_ltv)
            .sum::<f64>()
            / total;
        let (pf_target, ltv_target) = draw_targets(params, weighted_max, &mut rng);
        let _ = rescale_user(&c, &l, pf_target, ltv_target).unwrap();

        let pf = portfolio_value(user, &prices);
        let ltv = user_ltv(user, &prices);
        worst_pf = worst_pf.max((pf - pf_target).abs() / pf_target);
        worst_ltv = worst_ltv.max((ltv - ltv_target).abs());
    }

    let mean_pf: f64 =
        users.iter().map(|u| portfolio_value(u, &prices)).sum::<f64>() / users.len() as f64;
    let mean_ltv: f64 = users.iter().map(|u| user_ltv(u, &prices)).sum::<f64>() / users.len() as f64;
    let exact = worst_pf <= 1e-9 && worst_ltv <= 1e-9;
    let centered = (mean_pf - 5000.0).abs() < 0.05 * 5000.0 && (mean_ltv - 0.6).abs() < 0.05 * 0.6;
    let pass = exact && centered;
    report(
        6,
        "generated users hit (portfolio, LTV) targets exactly",
        pass,
        &format!(
            "worst rel errors {worst_pf:.2e}/{worst_ltv:.2e}; ensemble means {mean_pf:.0}/{mean_ltv:.3}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7. Volatility rescaling
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_rescaled_windows_hit_targets() {
    // ten days of synthetic minute history, sampled 100 times
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut series = vec![2.0f64];
    for _ in 0..(10 * TICKS_PER_DAY) {
        let z: f64 = StandardNormal.sample(&mut rng);
        let prev = *series.last().unwrap();
        series.push(prev * (0.002 * z).exp());
    }
    let history = History {
        assets: vec!["X".into()],
        segments: vec![vec![Segment { start_minute: 0, prices: series }]],
        report: Default::default(),
    };
    let assets = [asset("X", 0.7, 0.75, 0.05, false, 1.0, 0.0)];

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let grid = sample_window(&history, &assets, &mut rng).unwrap();
        let target = rng.random_range(0.005..0.2);
        let out = rescale_to_vol(&grid, &[Some(target)]).unwrap();
        let realized = realized_hourly_vol(&out.asset_series(0));
        worst = worst.max((realized - target).abs() / target);
    }
    let pass = worst <= 1e-9;
    report(
        7,
        "realized hourly volatility equals the rescale target",
        pass,
        &format!("worst rel err {worst:.2e} over 100 windows"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9. Stress monotonicity
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_stress_response_is_monotone() {
    let multipliers = [1.0, 2.0, 5.0, 10.0];
    let mut funds = Vec::new();
    let mut debt = Vec::new();
    let mut widths = Vec::new();
    for &m in &multipliers {
        let scenario = dual_asset_scenario(200, 30, 0.012 * m, 0.70, 0.10, 1e8, 0.0);
        let stats = run_ensemble(&scenario).unwrap();
        let last = TICKS_PER_DAY - 1;
        funds.push(stats.liquidated_funds_cum.mean[last]);
        debt.push(stats.outstanding_debt_pct.mean[last]);
        widths.push(stats.liquidated_funds_cum.hi[last] - stats.liquidated_funds_cum.lo[last]);
    }
    let funds_monotone = funds.windows(2).all(|w| w[1] >= w[0]);
    let debt_monotone = debt.windows(2).all(|w| w[1] <= w[0]);
    let widths_monotone =
        widths.windows(2).all(|w| w[1] >= w[0]) && widths[3] > widths[0];
    let pass = funds_monotone && debt_monotone && widths_monotone;
    report(
        9,
        "liquidated funds, debt, and band widths monotone in volatility",
        pass,
        &format!("funds {funds:.0?}; debt% {debt:.1?}; widths {widths:.0?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// supporting check: profit formula consistency used by the oracles above
// ---------------------------------------------------------------------------

#[test]
fn oracle_support_profit_consistency() {
    // the bisection/grid oracles assume gamma = 1 economics; pin that the
    // engine's formulas agree on a spot check before trusting criterion 3
    let liquidity = LiquidityMatrix::new(2, 1e8, 1.0, 1.0).unwrap();
    let p = repay_for_seize(1e6, 0, 1, 0.05, &liquidity, 0.0).unwrap();
    assert!((p - (1.0 - 0.05 - 0.01) * 1e6).abs() < 1e-6);
    let profit = liquidator_profit(1e6, 0, 1, 0.05, &liquidity, 0.0).unwrap();
    assert!((profit - (0.05 - 0.01) * 1e6).abs() < 1e-6);
}

/// The sweep's fixed-stream design means cell (0.8, inc) for tiny inc is the
/// healthiest configuration; sanity-pin it before criterion 1's long run.
#[test]
fn sweep_support_healthy_cell_is_clean() {
    let template = dual_asset_scenario(100, 6, 0.05, 0.7, 0.1, 1e8, 0.0);
    let result = sweep_frontier(&template, &[0.6], &[0.05], 0.01).unwrap();
    let cell = result.surface[0];
    assert!(cell.undercollateralized_fraction < 0.01, "{}", cell.undercollateralized_fraction);
}
