//! Per-minute multi-asset price grids: historical CSV ingestion, aligned
//! window sampling, hourly-volatility rescaling, correlated synthetic
//! generation, and notable-day selection.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, SimError};
use crate::protocol::AssetParams;

/// Simulations cover exactly one day of minute ticks.
pub const TICKS_PER_DAY: usize = 1440;

const SQRT_MINUTES_PER_HOUR: f64 = 7.745966692414834; // sqrt(60)

// ---------------------------------------------------------------------------
// Price grid
// ---------------------------------------------------------------------------

/// Aligned per-minute prices for all assets over one simulation day.
/// Stored tick-major so a tick's price vector is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrid {
    n_assets: usize,
    timestamps: Vec<i64>, // epoch minutes
    data: Vec<f64>,       // data[t * n_assets + i]
}

impl PriceGrid {
    /// Builds a grid from per-asset series, validating shape and positivity.
    pub fn from_series(series: &[Vec<f64>], timestamps: Vec<i64>) -> Result<Self> {
        let n = series.len();
        if n == 0 {
            return Err(SimError::InvalidInput("grid needs at least one asset".into()));
        }
        if timestamps.len() != TICKS_PER_DAY {
            return Err(SimError::InvalidInput(format!(
                "grid must cover {TICKS_PER_DAY} minutes, got {}",
                timestamps.len()
            )));
        }
        let mut data = vec![0.0; TICKS_PER_DAY * n];
        for (i, s) in series.iter().enumerate() {
            if s.len() != TICKS_PER_DAY {
                return Err(SimError::InvalidInput(format!(
                    "asset #{i} series has {} ticks, expected {TICKS_PER_DAY}",
                    s.len()
                )));
            }
            for (t, &p) in s.iter().enumerate() {
                if !(p > 0.0) || !p.is_finite() {
                    return Err(SimError::InvalidInput(format!(
                        "asset #{i} tick {t}: price {p} is not strictly positive"
                    )));
                }
                data[t * n + i] = p;
            }
        }
        Ok(PriceGrid { n_assets: n, timestamps, data })
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    /// Prices of all assets at minute `t`.
    pub fn tick_prices(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_assets..(t + 1) * self.n_assets]
    }

    pub fn initial_prices(&self) -> &[f64] {
        self.tick_prices(0)
    }

    /// Copy of one asset's full series.
    pub fn asset_series(&self, asset: usize) -> Vec<f64> {
        (0..TICKS_PER_DAY).map(|t| self.data[t * self.n_assets + asset]).collect()
    }

    /// Debug dump: `minute,asset,price` rows.
    pub fn write_debug_csv<W: Write>(&self, w: &mut W, symbols: &[String]) -> Result<()> {
        writeln!(w, "minute,asset,price")?;
        for t in 0..TICKS_PER_DAY {
            for (i, sym) in symbols.iter().enumerate() {
                writeln!(w, "{t},{sym},{}", self.data[t * self.n_assets + i])?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Historical data
// ---------------------------------------------------------------------------

/// A run of consecutive minutes with a price for every one of them.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start_minute: i64,
    pub prices: Vec<f64>,
}

impl Segment {
    pub fn end_minute(&self) -> i64 {
        self.start_minute + self.prices.len() as i64 - 1
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub rows: usize,
    pub filled_gaps: usize,
    pub segment_splits: usize,
}

/// Dense per-asset minute series loaded from a history CSV.
#[derive(Debug, Clone)]
pub struct History {
    pub assets: Vec<String>,
    pub segments: Vec<Vec<Segment>>,
    pub report: LoadReport,
}

impl History {
    pub fn asset_index(&self, symbol: &str) -> Option<usize> {
        self.assets.iter().position(|s| s == symbol)
    }

    fn segment_containing(&self, asset: usize, start: i64, len: i64) -> Option<&Segment> {
        self.segments[asset]
            .iter()
            .find(|s| s.start_minute <= start && s.end_minute() >= start + len - 1)
    }
}

/// Maximum number of consecutive missing minutes that are forward-filled;
/// longer gaps split the series into separate segments.
const MAX_FILL_MINUTES: i64 = 5;

/// Loads a `timestamp,asset,price` CSV (UTC epoch seconds, ascending per
/// asset) into dense per-asset minute segments.
pub fn load_history(path: &Path) -> Result<History> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| SimError::PriceData(format!("{}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| SimError::PriceData(format!("{}: {e}", path.display())))?;
        let expect = ["timestamp", "asset", "price"];
        if headers.iter().collect::<Vec<_>>() != expect {
            return Err(SimError::PriceData(format!(
                "{}: header must be `timestamp,asset,price`, got `{}`",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }

    let mut assets: Vec<String> = Vec::new();
    let mut segments: Vec<Vec<Segment>> = Vec::new();
    let mut report = LoadReport::default();

    for record in reader.records() {
        let record = record.map_err(|e| SimError::PriceData(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |what: &str| {
            SimError::PriceData(format!(
                "{} line {line}: {what} `{}`",
                path.display(),
                record.iter().collect::<Vec<_>>().join(",")
            ))
        };
        if record.len() != 3 {
            return Err(bad("expected 3 fields in"));
        }
        let ts: i64 = record[0].trim().parse().map_err(|_| bad("unparseable timestamp in"))?;
        let symbol = record[1].trim();
        if symbol.is_empty() {
            return Err(bad("empty asset in"));
        }
        let price: f64 = record[2].trim().parse().map_err(|_| bad("unparseable price in"))?;
        if !(price > 0.0) || !price.is_finite() {
            return Err(bad("non-positive price in"));
        }

        let minute = ts.div_euclid(60);
        let idx = match assets.iter().position(|s| s == symbol) {
            Some(i) => i,
            None => {
                assets.push(symbol.to_string());
                segments.push(Vec::new());
                assets.len() - 1
            }
        };

        let segs = &mut segments[idx];
        match segs.last_mut() {
            Some(seg) => {
                let prev = seg.end_minute();
                if minute <= prev {
                    return Err(bad("timestamp not ascending at"));
                }
                let missing = minute - prev - 1;
                if missing == 0 {
                    seg.prices.push(price);
                } else if missing <= MAX_FILL_MINUTES {
                    let fill = *seg.prices.last().expect("segment is non-empty");
                    seg.prices.extend(std::iter::repeat(fill).take(missing as usize));
                    seg.prices.push(price);
                    report.filled_gaps += 1;
                } else {
                    report.segment_splits += 1;
                    segs.push(Segment { start_minute: minute, prices: vec![price] });
                }
            }
            None => segs.push(Segment { start_minute: minute, prices: vec![price] }),
        }
        report.rows += 1;
    }

    Ok(History { assets, segments, report })
}

// ---------------------------------------------------------------------------
// Window selection
// ---------------------------------------------------------------------------

/// Maps scenario assets onto history indices; pegged assets need no data.
fn history_indices(history: &History, assets: &[AssetParams]) -> Result<Vec<Option<usize>>> {
    assets
        .iter()
        .map(|a| {
            if a.is_numeraire_pegged {
                Ok(None)
            } else {
                history.asset_index(&a.symbol).map(Some).ok_or_else(|| {
                    SimError::PriceData(format!("asset {} not present in price history", a.symbol))
                })
            }
        })
        .collect()
}

/// Inclusive runs `[lo, hi]` of window-start minutes for which every
/// non-pegged asset has a full 1440-minute span of data.
fn eligible_start_runs(history: &History, indices: &[Option<usize>]) -> Vec<(i64, i64)> {
    let mut coverage: Option<Vec<(i64, i64)>> = None;
    for idx in indices.iter().flatten() {
        let intervals: Vec<(i64, i64)> = history.segments[*idx]
            .iter()
            .map(|s| (s.start_minute, s.end_minute()))
            .collect();
        coverage = Some(match coverage {
            None => intervals,
            Some(acc) => intersect_intervals(&acc, &intervals),
        });
    }
    // No non-pegged asset: any anchor works; expose a single run at minute 0.
    let coverage = coverage.unwrap_or_else(|| vec![(0, TICKS_PER_DAY as i64 - 1)]);
    coverage
        .into_iter()
        .filter(|(lo, hi)| hi - lo + 1 >= TICKS_PER_DAY as i64)
        .map(|(lo, hi)| (lo, hi - TICKS_PER_DAY as i64 + 1))
        .collect()
}

fn intersect_intervals(a: &[(i64, i64)], b: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo <= hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn build_grid_at(
    history: &History,
    assets: &[AssetParams],
    indices: &[Option<usize>],
    start: i64,
) -> Result<PriceGrid> {
    let mut series = Vec::with_capacity(assets.len());
    for (asset, idx) in assets.iter().zip(indices) {
        match idx {
            None => series.push(vec![1.0; TICKS_PER_DAY]),
            Some(h) => {
                let seg = history.segment_containing(*h, start, TICKS_PER_DAY as i64).ok_or_else(|| {
                    SimError::InsufficientData(format!(
                        "asset {} lacks data for the window starting at minute {start}",
                        asset.symbol
                    ))
                })?;
                let off = (start - seg.start_minute) as usize;
                series.push(seg.prices[off..off + TICKS_PER_DAY].to_vec());
            }
        }
    }
    PriceGrid::from_series(&series, (start..start + TICKS_PER_DAY as i64).collect())
}

/// Draws one uniformly-random day window shared by all assets, preserving
/// their cross correlations.
pub fn sample_window<R: Rng>(history: &History, assets: &[AssetParams], rng: &mut R) -> Result<PriceGrid> {
    let indices = history_indices(history, assets)?;
    let runs = eligible_start_runs(history, &indices);
    let total: i64 = runs.iter().map(|(lo, hi)| hi - lo + 1).sum();
    if total == 0 {
        return Err(SimError::InsufficientData(
            "no 1440-minute window is covered by every asset".into(),
        ));
    }
    let mut k = rng.random_range(0..total);
    for (lo, hi) in runs {
        let len = hi - lo + 1;
        if k < len {
            return build_grid_at(history, assets, &indices, lo + k);
        }
        k -= len;
    }
    unreachable!("window index within total count");
}

/// The day window pinned to a UTC calendar date.
pub fn window_for_date(history: &History, assets: &[AssetParams], date: NaiveDate) -> Result<PriceGrid> {
    let indices = history_indices(history, assets)?;
    let start = date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp() / 60;
    build_grid_at(history, assets, &indices, start)
        .map_err(|_| SimError::InsufficientData(format!("history does not fully cover {date}")))
}

/// The eligible day window with the deepest peak-to-trough drawdown of the
/// named asset (smallest `price[t] / running_max[t]`); ties break earliest.
pub fn worst_drawdown_window(
    history: &History,
    assets: &[AssetParams],
    target_symbol: &str,
) -> Result<PriceGrid> {
    let indices = history_indices(history, assets)?;
    let target_pos = assets
        .iter()
        .position(|a| a.symbol == target_symbol)
        .ok_or_else(|| SimError::InvalidInput(format!("unknown asset {target_symbol}")))?;
    let target_hist = indices[target_pos].ok_or_else(|| {
        SimError::InvalidInput(format!("{target_symbol} is pegged; it has no drawdown day"))
    })?;

    let runs = eligible_start_runs(history, &indices);
    let mut best: Option<(f64, i64)> = None;
    for (lo, hi) in runs {
        for start in lo..=hi {
            let seg = history
                .segment_containing(target_hist, start, TICKS_PER_DAY as i64)
                .expect("eligible start lies inside a segment");
            let off = (start - seg.start_minute) as usize;
            let window = &seg.prices[off..off + TICKS_PER_DAY];
            let mut peak = window[0];
            let mut ratio = 1.0f64;
            for &p in window {
                peak = peak.max(p);
                ratio = ratio.min(p / peak);
            }
            if best.map_or(true, |(r, _)| ratio < r) {
                best = Some((ratio, start));
            }
        }
    }
    let (_, start) = best.ok_or_else(|| {
        SimError::InsufficientData("no 1440-minute window is covered by every asset".into())
    })?;
    build_grid_at(history, assets, &indices, start)
}

// ---------------------------------------------------------------------------
// Volatility
// ---------------------------------------------------------------------------

/// Standard deviation of minute log-returns scaled to one hour.
pub fn realized_hourly_vol(series: &[f64]) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    let n = (series.len() - 1) as f64;
    let returns = series.windows(2).map(|w| (w[1] / w[0]).ln());
    let mean: f64 = returns.clone().sum::<f64>() / n;
    let var: f64 = returns.map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    var.sqrt() * SQRT_MINUTES_PER_HOUR
}

/// Rescales each asset's log-returns so its realized hourly volatility hits
/// the target, anchored at the window's first price. `None` leaves an asset
/// untouched (pegged assets must be `None`).
pub fn rescale_to_vol(grid: &PriceGrid, targets: &[Option<f64>]) -> Result<PriceGrid> {
    if targets.len() != grid.n_assets() {
        return Err(SimError::InvalidInput(format!(
            "expected {} volatility targets, got {}",
            grid.n_assets(),
            targets.len()
        )));
    }
    let mut series: Vec<Vec<f64>> = Vec::with_capacity(grid.n_assets());
    for (i, target) in targets.iter().enumerate() {
        let s = grid.asset_series(i);
        match target {
            None => series.push(s),
            Some(target) => {
                if !(*target >= 0.0) {
                    return Err(SimError::InvalidInput(format!(
                        "volatility target {target} for asset #{i}"
                    )));
                }
                let realized = realized_hourly_vol(&s);
                if realized == 0.0 {
                    if *target == 0.0 {
                        series.push(s);
                        continue;
                    }
                    return Err(SimError::CannotRescale { asset: format!("#{i}") });
                }
                let k = target / realized;
                let p0 = s[0];
                series.push(s.iter().map(|&p| p0 * (k * (p / p0).ln()).exp()).collect());
            }
        }
    }
    PriceGrid::from_series(&series, grid.timestamps().to_vec())
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// Lower-triangular Cholesky factor tolerating positive-semidefinite input
/// (zero pivots are allowed when the residual column is zero too).
pub fn cholesky_psd(matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = matrix.len();
    for row in matrix {
        if row.len() != n {
            return Err(SimError::InvalidInput("correlation matrix must be square".into()));
        }
    }
    for i in 0..n {
        for j in 0..n {
            if (matrix[i][j] - matrix[j][i]).abs() > 1e-9 {
                return Err(SimError::InvalidInput("correlation matrix must be symmetric".into()));
            }
        }
    }
    let tol = 1e-9;
    let mut l = vec![vec![0.0; n]; n];
    for k in 0..n {
        let mut d = matrix[k][k];
        for m in 0..k {
            d -= l[k][m] * l[k][m];
        }
        if d < -tol {
            return Err(SimError::InvalidInput(
                "correlation matrix is not positive semi-definite".into(),
            ));
        }
        if d <= tol {
            l[k][k] = 0.0;
            for r in (k + 1)..n {
                let mut resid = matrix[r][k];
                for m in 0..k {
                    resid -= l[r][m] * l[k][m];
                }
                if resid.abs() > 1e-6 {
                    return Err(SimError::InvalidInput(
                        "correlation matrix is not positive semi-definite".into(),
                    ));
                }
            }
            continue;
        }
        let pivot = d.sqrt();
        l[k][k] = pivot;
        for r in (k + 1)..n {
            let mut v = matrix[r][k];
            for m in 0..k {
                v -= l[r][m] * l[k][m];
            }
            l[r][k] = v / pivot;
        }
    }
    Ok(l)
}

/// Driftless correlated log-normal minute grid hitting the requested hourly
/// volatilities. `correlation` spans the non-pegged assets in order; `None`
/// means independent.
pub fn synthetic_grid<R: Rng>(
    initial: &[f64],
    hourly_vols: &[f64],
    pegged: &[bool],
    correlation: Option<&[Vec<f64>]>,
    rng: &mut R,
) -> Result<PriceGrid> {
    let n = initial.len();
    if hourly_vols.len() != n || pegged.len() != n {
        return Err(SimError::InvalidInput("mismatched synthetic grid inputs".into()));
    }
    if hourly_vols.iter().any(|v| !(*v >= 0.0)) {
        return Err(SimError::InvalidInput("hourly volatilities must be >= 0".into()));
    }
    let live: Vec<usize> = (0..n).filter(|&i| !pegged[i]).collect();
    let m = live.len();
    let chol = match correlation {
        Some(c) => {
            if c.len() != m {
                return Err(SimError::InvalidInput(format!(
                    "correlation matrix must span the {m} non-pegged assets, got {}",
                    c.len()
                )));
            }
            cholesky_psd(c)?
        }
        None => {
            let mut eye = vec![vec![0.0; m]; m];
            for (k, row) in eye.iter_mut().enumerate() {
                row[k] = 1.0;
            }
            eye
        }
    };

    let mut series: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if pegged[i] {
                vec![1.0; TICKS_PER_DAY]
            } else {
                let mut s = Vec::with_capacity(TICKS_PER_DAY);
                s.push(initial[i]);
                s
            }
        })
        .collect();

    let minute_vols: Vec<f64> = live.iter().map(|&i| hourly_vols[i] / SQRT_MINUTES_PER_HOUR).collect();
    let mut z = vec![0.0f64; m];
    for _ in 1..TICKS_PER_DAY {
        for zk in z.iter_mut() {
            *zk = StandardNormal.sample(rng);
        }
        for (k, &i) in live.iter().enumerate() {
            let mut e = 0.0;
            for (mcol, &zm) in z.iter().enumerate().take(k + 1) {
                e += chol[k][mcol] * zm;
            }
            let prev = *series[i].last().expect("seeded with the initial price");
            series[i].push(prev * (minute_vols[k] * e).exp());
        }
    }

    PriceGrid::from_series(&series, (0..TICKS_PER_DAY as i64).collect())
}
