//! Weighted quantile loss over scoped `(series, creation time, horizon)`
//! triples, and the variant × seed ablation report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Horizon, SampleWindow, SeriesRecord};
use crate::error::{Error, Result};
use crate::model::{ForecastGrid, ModelConfig, VariantFlag};
use crate::tensor::pinball_value;
use crate::training::{train_split, TrainConfig};

/// Default length of the post-peak window, in periods.
pub const DEFAULT_POST_PEAK_WINDOW: usize = 4;

/// `QL(y, ŷ; q) = q(y−ŷ)₊ + (1−q)(ŷ−y)₊`.
pub fn quantile_loss(y: f64, y_hat: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 1)")));
    }
    Ok(pinball_value(y, y_hat, q))
}

/// Targets to score, per series and creation time. `None` marks a horizon
/// whose target window falls outside the evaluation span.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSet {
    pub horizons: Vec<Horizon>,
    pub series: Vec<EvalSeries>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSeries {
    pub series_id: String,
    pub peaks: Vec<bool>,
    pub creation_times: Vec<usize>,
    /// `[n_t × H]`, row-major.
    pub targets: Vec<Option<f64>>,
}

impl EvalSet {
    pub fn from_windows(records: &[SeriesRecord], windows: &[SampleWindow], horizons: &[Horizon]) -> Self {
        let series = windows
            .iter()
            .map(|w| {
                let r = &records[w.record];
                EvalSeries {
                    series_id: r.series_id.clone(),
                    peaks: r.peaks.clone(),
                    creation_times: w.creation_times.clone(),
                    targets: w
                        .targets
                        .iter()
                        .zip(&w.valid)
                        .map(|(&y, &ok)| ok.then_some(y))
                        .collect(),
                }
            })
            .collect();
        EvalSet {
            horizons: horizons.to_vec(),
            series,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesFilter {
    All,
    /// Series with at least one peak horizon in the evaluation set.
    PeSeries,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HorizonFilter {
    All,
    /// Target window contains a peak period.
    Pe,
    /// Target window starts within `W` periods after a peak and contains no
    /// peak itself.
    PostPeak,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricScope {
    pub series: SeriesFilter,
    pub horizons: HorizonFilter,
    pub post_peak_window: usize,
}

/// The three scopes of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScopeName {
    Overall,
    Peak,
    PostPeak,
}

impl ScopeName {
    pub const ALL: [ScopeName; 3] = [ScopeName::Overall, ScopeName::Peak, ScopeName::PostPeak];

    pub fn scope(self, window: usize) -> Result<MetricScope> {
        match self {
            ScopeName::Overall => MetricScope::new(SeriesFilter::All, HorizonFilter::All, window),
            ScopeName::Peak => MetricScope::new(SeriesFilter::PeSeries, HorizonFilter::Pe, window),
            ScopeName::PostPeak => MetricScope::new(SeriesFilter::All, HorizonFilter::PostPeak, window),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ScopeName::Overall => "Overall",
            ScopeName::Peak => "Peak",
            ScopeName::PostPeak => "PostPeak",
        }
    }
}

impl MetricScope {
    pub fn new(series: SeriesFilter, horizons: HorizonFilter, post_peak_window: usize) -> Result<Self> {
        if post_peak_window == 0 {
            return Err(Error::InvalidArgument("post-peak window must be ≥ 1".into()));
        }
        Ok(MetricScope {
            series,
            horizons,
            post_peak_window,
        })
    }

    pub fn overall() -> Self {
        MetricScope {
            series: SeriesFilter::All,
            horizons: HorizonFilter::All,
            post_peak_window: DEFAULT_POST_PEAK_WINDOW,
        }
    }

    fn describe(&self) -> String {
        format!("{:?}/{:?}/W={}", self.series, self.horizons, self.post_peak_window)
    }
}

/// Does the target window of `hz` created at `t` contain a peak?
pub fn is_pe_horizon(peaks: &[bool], t: usize, hz: Horizon) -> bool {
    hz.window(t).any(|s| peaks.get(s).copied().unwrap_or(false))
}

/// Does the target window of `hz` at `t` overlap `(τ, τ+W]` for some peak
/// `τ`, without containing a peak itself?
pub fn is_post_peak_horizon(peaks: &[bool], t: usize, hz: Horizon, w: usize) -> bool {
    if is_pe_horizon(peaks, t, hz) {
        return false;
    }
    let win = hz.window(t);
    let lo = win.start.saturating_sub(w);
    (lo..win.end.min(peaks.len())).any(|tau| peaks[tau] && tau + w >= win.start && tau < win.end)
}

fn in_scope(series: &EvalSeries, t: usize, hz: Horizon, scope: &MetricScope) -> bool {
    match scope.horizons {
        HorizonFilter::All => true,
        HorizonFilter::Pe => is_pe_horizon(&series.peaks, t, hz),
        HorizonFilter::PostPeak => is_post_peak_horizon(&series.peaks, t, hz, scope.post_peak_window),
    }
}

fn pe_series(series: &EvalSeries, horizons: &[Horizon]) -> bool {
    let h_len = horizons.len();
    series.creation_times.iter().enumerate().any(|(i, &t)| {
        horizons
            .iter()
            .enumerate()
            .any(|(h, &hz)| series.targets[i * h_len + h].is_some() && is_pe_horizon(&series.peaks, t, hz))
    })
}

/// Sums `(Σ QL, Σ y)` over the scoped triples.
pub fn scoped_sums(set: &EvalSet, grid: &ForecastGrid, q: f64, scope: &MetricScope) -> Result<(f64, f64)> {
    if scope.post_peak_window == 0 {
        return Err(Error::InvalidArgument("post-peak window must be ≥ 1".into()));
    }
    let qi = grid
        .quantile_index(q)
        .ok_or_else(|| Error::InvalidArgument(format!("quantile {q} not in forecast grid {:?}", grid.quantiles)))?;
    if grid.horizons != set.horizons || grid.series.len() != set.series.len() {
        return Err(Error::Data("forecast grid does not cover the evaluation set".into()));
    }
    let h_len = set.horizons.len();
    let (mut num, mut den) = (0.0, 0.0);
    for (si, s) in set.series.iter().enumerate() {
        let fs = &grid.series[si];
        if fs.series_id != s.series_id {
            return Err(Error::Data(format!(
                "forecast grid series `{}` does not match `{}`",
                fs.series_id, s.series_id
            )));
        }
        if scope.series == SeriesFilter::PeSeries && !pe_series(s, &set.horizons) {
            continue;
        }
        for (i, &t) in s.creation_times.iter().enumerate() {
            let row = &s.targets[i * h_len..(i + 1) * h_len];
            if row.iter().all(Option::is_none) {
                continue;
            }
            let ti = fs
                .creation_times
                .binary_search(&t)
                .map_err(|_| Error::Data(format!("no forecast for series `{}` at creation time {t}", s.series_id)))?;
            for (h, &hz) in set.horizons.iter().enumerate() {
                let Some(y) = row[h] else { continue };
                if !in_scope(s, t, hz, scope) {
                    continue;
                }
                num += pinball_value(y, grid.value(si, ti, h, qi), q);
                den += y;
            }
        }
    }
    Ok((num, den))
}

/// `Σ QL / Σ y` over the scoped triples.
pub fn wql(set: &EvalSet, grid: &ForecastGrid, q: f64, scope: &MetricScope) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside (0, 1)")));
    }
    let (num, den) = scoped_sums(set, grid, q, scope)?;
    if den <= 0.0 {
        return Err(Error::UndefinedMetric {
            scope: scope.describe(),
            reason: "total target demand in scope is zero".into(),
        });
    }
    Ok(num / den)
}

/// WQL over peak horizons of series that have one.
pub fn wql_pe(set: &EvalSet, grid: &ForecastGrid, q: f64, w: usize) -> Result<f64> {
    wql(
        set,
        grid,
        q,
        &MetricScope::new(SeriesFilter::PeSeries, HorizonFilter::Pe, w)?,
    )
}

/// WQL over post-peak horizons of all series.
pub fn wql_ppe(set: &EvalSet, grid: &ForecastGrid, q: f64, w: usize) -> Result<f64> {
    wql(
        set,
        grid,
        q,
        &MetricScope::new(SeriesFilter::All, HorizonFilter::PostPeak, w)?,
    )
}

pub fn relative_wql(candidate: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reference WQL must be positive, got {reference}"
        )));
    }
    Ok(candidate / reference)
}

/// Metrics of one variant for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub variant: VariantFlag,
    pub seed: u64,
    /// `values[scope][quantile]`, `None` when the scope is empty.
    pub values: Vec<Vec<Option<f64>>>,
}

/// Every scope × quantile metric of one forecast grid.
pub fn evaluate_scopes(set: &EvalSet, grid: &ForecastGrid, window: usize) -> Result<Vec<Vec<Option<f64>>>> {
    ScopeName::ALL
        .iter()
        .map(|name| {
            let scope = name.scope(window)?;
            grid.quantiles
                .iter()
                .map(|&q| match wql(set, grid, q, &scope) {
                    Ok(v) => Ok(Some(v)),
                    Err(Error::UndefinedMetric { .. }) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub scope: ScopeName,
    pub quantile: f64,
    pub per_seed: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub ci_half_width: Option<f64>,
    /// `100·(mean − reference mean)/reference mean` against the Original
    /// variant.
    pub diff_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: VariantFlag,
    pub metrics: Vec<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seeds: Vec<u64>,
    pub quantiles: Vec<f64>,
    pub post_peak_window: usize,
    pub variants: Vec<VariantSummary>,
}

/// Sample mean and `1.96·sd/√n` (sample standard deviation); a single value
/// has zero half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

impl MetricReport {
    /// Aggregates per-seed cells. A scope that is undefined for any seed has
    /// no mean.
    pub fn aggregate(cells: &[CellMetrics], quantiles: &[f64], post_peak_window: usize) -> Self {
        let mut variants: Vec<VariantFlag> = Vec::new();
        let mut seeds: Vec<u64> = Vec::new();
        for c in cells {
            if !variants.contains(&c.variant) {
                variants.push(c.variant);
            }
            if !seeds.contains(&c.seed) {
                seeds.push(c.seed);
            }
        }
        let summarize = |v: VariantFlag| -> Vec<MetricSummary> {
            let mine: Vec<&CellMetrics> = cells.iter().filter(|c| c.variant == v).collect();
            let mut out = Vec::new();
            for (si, &scope) in ScopeName::ALL.iter().enumerate() {
                for (qi, &quantile) in quantiles.iter().enumerate() {
                    let per_seed: Vec<Option<f64>> = mine.iter().map(|c| c.values[si][qi]).collect();
                    let defined: Option<Vec<f64>> = per_seed.iter().copied().collect();
                    let (mean, ci) = match defined {
                        Some(vals) if !vals.is_empty() => {
                            let (m, c) = mean_ci(&vals);
                            (Some(m), Some(c))
                        }
                        _ => (None, None),
                    };
                    out.push(MetricSummary {
                        scope,
                        quantile,
                        per_seed,
                        mean,
                        ci_half_width: ci,
                        diff_pct: None,
                    });
                }
            }
            out
        };
        let mut summaries: Vec<VariantSummary> = variants
            .iter()
            .map(|&v| VariantSummary {
                variant: v,
                metrics: summarize(v),
            })
            .collect();
        if let Some(reference) = summaries.iter().find(|s| s.variant == VariantFlag::Original).cloned() {
            for s in &mut summaries {
                for (m, r) in s.metrics.iter_mut().zip(&reference.metrics) {
                    m.diff_pct = match (m.mean, r.mean) {
                        (Some(a), Some(b)) if b > 0.0 => Some(100.0 * (a - b) / b),
                        _ => None,
                    };
                }
            }
        }
        MetricReport {
            seeds,
            quantiles: quantiles.to_vec(),
            post_peak_window,
            variants: summaries,
        }
    }

    pub fn get(&self, variant: VariantFlag, scope: ScopeName, quantile: f64) -> Option<&MetricSummary> {
        self.variants
            .iter()
            .find(|v| v.variant == variant)?
            .metrics
            .iter()
            .find(|m| m.scope == scope && (m.quantile - quantile).abs() < 1e-12)
    }

    /// Aligned text table: one row per scope and quantile, one column group
    /// per variant.
    pub fn to_table(&self) -> String {
        let fmt_cell = |m: &MetricSummary| match (m.mean, m.ci_half_width) {
            (Some(mean), Some(ci)) => format!("{mean:.4} ± {ci:.4}"),
            _ => "undefined".to_string(),
        };
        let fmt_diff = |m: &MetricSummary| m.diff_pct.map_or("-".to_string(), |d| format!("{d:+.2}%"));
        let mut header = vec!["Scope".to_string(), "Q".to_string()];
        for v in &self.variants {
            header.push(v.variant.name().to_string());
            if v.variant != VariantFlag::Original {
                header.push("Diff".to_string());
            }
        }
        let mut rows = vec![header];
        for scope in ScopeName::ALL {
            for &q in &self.quantiles {
                let mut row = vec![scope.label().to_string(), format!("P{}", (q * 100.0).round())];
                for v in &self.variants {
                    let m = self.get(v.variant, scope, q).expect("every cell present");
                    row.push(fmt_cell(m));
                    if v.variant != VariantFlag::Original {
                        row.push(fmt_diff(m));
                    }
                }
                rows.push(row);
            }
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
            }
        }
        let _ = writeln!(
            out,
            "{} seeds, mean ± 95% CI, post-peak window {}",
            self.seeds.len(),
            self.post_peak_window
        );
        out
    }
}

/// Trains every `(variant, seed)` cell on the training prefix, evaluates on
/// the holdout suffix and aggregates. `jobs > 1` runs cells on that many
/// threads; results do not depend on `jobs`.
pub fn ablation_grid(
    records: &[SeriesRecord],
    variants: &[VariantFlag],
    seeds: &[u64],
    model: &ModelConfig,
    train: &TrainConfig,
    post_peak_window: usize,
    jobs: usize,
) -> Result<MetricReport> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("an ablation needs at least 2 seeds".into()));
    }
    if variants.is_empty() {
        return Err(Error::InvalidArgument("an ablation needs at least one variant".into()));
    }
    MetricScope::new(SeriesFilter::All, HorizonFilter::All, post_peak_window)?;
    let cells: Vec<(VariantFlag, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let run = |&(variant, seed): &(VariantFlag, u64)| -> Result<CellMetrics> {
        let cfg = TrainConfig { seed, ..train.clone() };
        let (_, _, set, grid) = train_split(records, variant, model, &cfg).map_err(|e| annotate(e, variant, seed))?;
        let values = evaluate_scopes(&set, &grid, post_peak_window)?;
        Ok(CellMetrics { variant, seed, values })
    };
    let results = run_cells(&cells, jobs.max(1), run)?;
    Ok(MetricReport::aggregate(&results, &model.quantiles, post_peak_window))
}

fn annotate(e: Error, variant: VariantFlag, seed: u64) -> Error {
    let cell = format!("cell (variant {variant}, seed {seed})");
    match e {
        Error::NumericFailure(m) => Error::NumericFailure(format!("{cell}: {m}")),
        Error::Data(m) => Error::Data(format!("{cell}: {m}")),
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{cell}: {m}")),
        Error::Config(m) => Error::Config(format!("{cell}: {m}")),
        other => other,
    }
}

/// Runs `f` over `items` on up to `jobs` threads, preserving input order.
pub fn run_cells<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<R>>>> = items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every cell ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SeriesForecast;

    fn h1() -> Vec<Horizon> {
        vec![Horizon::new(1, 1).unwrap()]
    }

    fn toy(
        y: &[f64],
        peaks: &[bool],
        yhat: &[f64],
        quantiles: &[f64],
        horizons: &[Horizon],
    ) -> (EvalSet, ForecastGrid) {
        // creation times 0..n with one horizon of (1,1): target at t is y[t+1]
        let n = y.len() - 1;
        let h_len = horizons.len();
        let q_len = quantiles.len();
        let set = EvalSet {
            horizons: horizons.to_vec(),
            series: vec![EvalSeries {
                series_id: "a".into(),
                peaks: peaks.to_vec(),
                creation_times: (0..n).collect(),
                targets: (0..n)
                    .flat_map(|t| horizons.iter().map(move |hz| (t, *hz)))
                    .map(|(t, hz)| (hz.window(t).end <= y.len()).then(|| y[hz.window(t)].iter().sum()))
                    .collect(),
            }],
        };
        let grid = ForecastGrid {
            quantiles: quantiles.to_vec(),
            horizons: horizons.to_vec(),
            series: vec![SeriesForecast {
                series_id: "a".into(),
                creation_times: (0..n).collect(),
                values: (0..n * h_len * q_len).map(|i| yhat[i % yhat.len()]).collect(),
            }],
        };
        (set, grid)
    }

    #[test]
    fn quantile_loss_examples() {
        assert_eq!(quantile_loss(1.0, 0.0, 0.5).unwrap(), 0.5);
        assert!((quantile_loss(0.0, 1.0, 0.9).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(quantile_loss(7.0, 7.0, 0.3).unwrap(), 0.0);
        assert!(quantile_loss(1.0, 1.0, 1.0).is_err());
        assert!(quantile_loss(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn wql_examples() {
        let (set, grid) = toy(&[0.0, 2.0], &[false, false], &[1.0], &[0.5], &h1());
        assert_eq!(wql(&set, &grid, 0.5, &MetricScope::overall()).unwrap(), 0.25);
        let (set, grid) = toy(&[0.0, 2.0, 3.0], &[false; 3], &[2.0, 3.0], &[0.5], &h1());
        assert_eq!(wql(&set, &grid, 0.5, &MetricScope::overall()).unwrap(), 0.0);
    }

    #[test]
    fn wql_is_scale_invariant() {
        let y = [1.0, 4.0, 2.0, 5.0, 3.0];
        let yhat = [3.0, 1.0, 2.5, 4.0];
        let (set, grid) = toy(&y, &[false; 5], &yhat, &[0.9], &h1());
        let y2: Vec<f64> = y.iter().map(|v| v * 3.5).collect();
        let yh2: Vec<f64> = yhat.iter().map(|v| v * 3.5).collect();
        let (set2, grid2) = toy(&y2, &[false; 5], &yh2, &[0.9], &h1());
        let a = wql(&set, &grid, 0.9, &MetricScope::overall()).unwrap();
        let b = wql(&set2, &grid2, 0.9, &MetricScope::overall()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn empty_scopes_are_undefined() {
        let (set, grid) = toy(&[1.0, 2.0, 3.0, 4.0], &[false; 4], &[1.0], &[0.5], &h1());
        assert!(matches!(
            wql_pe(&set, &grid, 0.5, 4),
            Err(Error::UndefinedMetric { .. })
        ));
        assert!(matches!(
            wql_ppe(&set, &grid, 0.5, 4),
            Err(Error::UndefinedMetric { .. })
        ));
        assert!(wql_ppe(&set, &grid, 0.5, 0).is_err());
        assert!(wql(&set, &grid, 0.7, &MetricScope::overall()).is_err());
        let (zero, zgrid) = toy(&[0.0; 4], &[false; 4], &[1.0], &[0.5], &h1());
        let err = wql(&zero, &zgrid, 0.5, &MetricScope::overall()).unwrap_err();
        assert!(err.to_string().contains("All/All"), "{err}");
    }

    #[test]
    fn post_peak_window_arithmetic() {
        // peak at 5, W = 2: targets at 6 and 7 are post-peak
        let mut peaks = vec![false; 12];
        peaks[5] = true;
        let hz = Horizon::new(1, 1).unwrap();
        let scored: Vec<usize> = (0..11)
            .filter(|&t| is_post_peak_horizon(&peaks, t, hz, 2))
            .map(|t| t + 1)
            .collect();
        assert_eq!(scored, vec![6, 7]);
        let pe: Vec<usize> = (0..11).filter(|&t| is_pe_horizon(&peaks, t, hz)).collect();
        assert_eq!(pe, vec![4]);
        // a span window touching the peak is PE, not post-peak
        let wide = Horizon::new(1, 3).unwrap();
        assert!(is_pe_horizon(&peaks, 3, wide));
        assert!(!is_post_peak_horizon(&peaks, 3, wide, 2));
        assert!(is_post_peak_horizon(&peaks, 5, wide, 2));
        assert!(!is_post_peak_horizon(&peaks, 7, wide, 2));
    }

    #[test]
    fn all_pe_horizons_collapse_to_overall() {
        let y = [1.0, 3.0, 2.0, 6.0];
        let (set, grid) = toy(&y, &[true; 4], &[2.0, 1.0, 5.0], &[0.5], &h1());
        let a = wql_pe(&set, &grid, 0.5, 4).unwrap();
        let b = wql(&set, &grid, 0.5, &MetricScope::overall()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relative_wql_examples() {
        assert_eq!(relative_wql(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(relative_wql(0.9912, 1.0).unwrap(), 0.9912);
        assert_eq!(relative_wql(1.0, 2.0).unwrap(), 0.5);
        assert!(relative_wql(1.0, 0.0).is_err());
    }

    #[test]
    fn aggregation_counts_and_self_diff() {
        let q = [0.5, 0.9];
        let cell = |variant, seed, base: f64| CellMetrics {
            variant,
            seed,
            values: (0..3)
                .map(|s| (0..2).map(|qi| Some(base + s as f64 + qi as f64 * 0.1)).collect())
                .collect(),
        };
        let cells: Vec<CellMetrics> = [1, 2, 3]
            .iter()
            .flat_map(|&s| {
                [
                    cell(VariantFlag::Original, s, 1.0 + s as f64 * 0.01),
                    cell(VariantFlag::MaskedConvOnly, s, 0.5),
                ]
            })
            .collect();
        let r = MetricReport::aggregate(&cells, &q, 4);
        assert_eq!(r.seeds.len(), 3);
        let n: usize = r.variants.iter().map(|v| v.metrics.len()).sum();
        assert_eq!(n, 12);
        for m in &r.variants[0].metrics {
            assert_eq!(m.diff_pct, Some(0.0));
            assert!(m.ci_half_width.unwrap() > 0.0);
        }
        let mc = r.get(VariantFlag::MaskedConvOnly, ScopeName::Overall, 0.5).unwrap();
        assert_eq!(mc.ci_half_width, Some(0.0));
        assert!(mc.diff_pct.unwrap() < 0.0);
        let table = r.to_table();
        assert!(table.contains("PostPeak") && table.contains("Diff"));
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn mean_ci_matches_formula() {
        let (m, c) = mean_ci(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((c - 1.96 * 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn run_cells_preserves_order() {
        let items: Vec<u64> = (0..7).collect();
        let a = run_cells(&items, 1, |&x| Ok(x * x)).unwrap();
        let b = run_cells(&items, 3, |&x| Ok(x * x)).unwrap();
        assert_eq!(a, b);
        assert!(run_cells(&items, 2, |&x| if x == 4 {
            Err(Error::Data("x".into()))
        } else {
            Ok(x)
        })
        .is_err());
    }
}
