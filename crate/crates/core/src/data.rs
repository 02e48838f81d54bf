//! Series records, CSV ingestion, peak masks, forward fill, multi-horizon
//! windowing and the synthetic corpus/contamination generators.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Months, NaiveDate};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A forecast target: demand summed over `[t + lead, t + lead + span)` for a
/// forecast created at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Horizon {
    pub lead: usize,
    pub span: usize,
}

impl Horizon {
    pub fn new(lead: usize, span: usize) -> Result<Self> {
        if lead == 0 || span == 0 {
            return Err(Error::InvalidArgument(format!(
                "horizon needs lead ≥ 1 and span ≥ 1, got ({lead}, {span})"
            )));
        }
        Ok(Horizon { lead, span })
    }

    /// Periods past the creation time needed to observe the whole target.
    pub fn reach(&self) -> usize {
        self.lead + self.span
    }

    pub fn window(&self, t: usize) -> std::ops::Range<usize> {
        t + self.lead..t + self.lead + self.span
    }
}

pub fn max_reach(horizons: &[Horizon]) -> usize {
    horizons.iter().map(Horizon::reach).max().unwrap_or(0)
}

pub fn max_span(horizons: &[Horizon]) -> usize {
    horizons.iter().map(|h| h.span).max().unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Weekly,
    Monthly,
}

impl Frequency {
    pub fn next(self, d: NaiveDate) -> Option<NaiveDate> {
        match self {
            Frequency::Daily => d.succ_opt(),
            Frequency::Weekly => d.checked_add_days(chrono::Days::new(7)),
            Frequency::Monthly => d.checked_add_months(Months::new(1)),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(Frequency::Daily),
            "weekly" => Ok(Frequency::Weekly),
            "monthly" => Ok(Frequency::Monthly),
            other => Err(Error::Config(format!("unknown frequency `{other}`"))),
        }
    }
}

/// One time series.
///
/// `demand` is the single past channel; `peaks` is the causal PE indicator
/// `d`; `covariates` hold per-period known-future columns (e.g. calendar
/// phase) from which the per-horizon future tensor is assembled.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRecord {
    pub series_id: String,
    pub timestamps: Vec<NaiveDate>,
    pub demand: Vec<f64>,
    pub peaks: Vec<bool>,
    pub static_names: Vec<String>,
    pub static_features: Vec<f64>,
    pub covariate_names: Vec<String>,
    /// `covariates[c][t]`
    pub covariates: Vec<Vec<f64>>,
}

impl SeriesRecord {
    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }

    /// Past features `x^(p)` as a `[1×T]` matrix.
    pub fn past(&self) -> Tensor {
        Tensor::new([1, self.len()], self.demand.clone()).expect("non-empty series")
    }

    pub fn peak_indicator(&self) -> Vec<f64> {
        self.peaks.iter().map(|&p| f64::from(u8::from(p))).collect()
    }

    /// Number of channels in the per-horizon future tensor: the PE indicator
    /// plus one per covariate column.
    pub fn future_channels(&self) -> usize {
        1 + self.covariates.len()
    }

    /// Known-future tensor `x^(f)` of shape `[F×T×H]`.
    ///
    /// Channel 0 is 1 when any period of the horizon's target window is a PE.
    /// The remaining channels carry each covariate at the first target period.
    /// Positions beyond the end of the series read as 0.
    pub fn future(&self, horizons: &[Horizon]) -> Tensor {
        let (t_len, h_len, f_len) = (self.len(), horizons.len(), self.future_channels());
        let mut data = vec![0.0; f_len * t_len * h_len];
        for t in 0..t_len {
            for (h, hz) in horizons.iter().enumerate() {
                let window = hz.window(t);
                let pe = window.clone().any(|p| p < t_len && self.peaks[p]);
                data[t * h_len + h] = f64::from(u8::from(pe));
                if window.start < t_len {
                    for (c, col) in self.covariates.iter().enumerate() {
                        data[((c + 1) * t_len + t) * h_len + h] = col[window.start];
                    }
                }
            }
        }
        Tensor::new([f_len, t_len, h_len.max(1)], data).expect("future tensor shape")
    }

    /// Per-period known covariates as a `[T×F]` matrix in the same channel
    /// layout as [`SeriesRecord::future`], read at the period itself.
    pub fn period_covariates(&self) -> Tensor {
        let (t_len, f_len) = (self.len(), self.future_channels());
        let mut data = Vec::with_capacity(t_len * f_len);
        for t in 0..t_len {
            data.push(f64::from(u8::from(self.peaks[t])));
            data.extend(self.covariates.iter().map(|c| c[t]));
        }
        Tensor::new([t_len, f_len], data).expect("covariate shape")
    }

    /// Targets `y[t][h]` as `[T×H]` plus a validity flag per entry; a target is
    /// valid only when its whole window lies inside the series.
    pub fn target(&self, horizons: &[Horizon]) -> (Tensor, Vec<bool>) {
        let (t_len, h_len) = (self.len(), horizons.len());
        let mut y = vec![0.0; t_len * h_len];
        let mut valid = vec![false; t_len * h_len];
        for t in 0..t_len {
            for (h, hz) in horizons.iter().enumerate() {
                let w = hz.window(t);
                if w.end <= t_len {
                    y[t * h_len + h] = self.demand[w].iter().sum();
                    valid[t * h_len + h] = true;
                }
            }
        }
        (Tensor::new([t_len, h_len.max(1)], y).expect("target shape"), valid)
    }

    fn validate(&self) -> Result<()> {
        let t = self.len();
        if t == 0 {
            return Err(Error::Data(format!("series `{}` is empty", self.series_id)));
        }
        if self.peaks.len() != t || self.covariates.iter().any(|c| c.len() != t) {
            return Err(Error::Data(format!(
                "series `{}`: temporal dimensions disagree",
                self.series_id
            )));
        }
        if let Some(v) = self.demand.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Data(format!(
                "series `{}`: demand must be finite and non-negative, got {v}",
                self.series_id
            )));
        }
        Ok(())
    }
}

/// Binary peak mask: `history[t] = d_t`, `horizon[t][h]` = PE indicator of
/// horizon `h` from creation time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeakMask {
    pub history: Vec<f64>,
    /// `[T×H]`
    pub horizon: Tensor,
}

impl PeakMask {
    pub fn horizon_column(&self, h: usize) -> Vec<f64> {
        let (t_len, h_len) = self.horizon.dims2();
        (0..t_len).map(|t| self.horizon.data()[t * h_len + h]).collect()
    }
}

pub fn build_peak_mask(record: &SeriesRecord, horizons: &[Horizon]) -> Result<PeakMask> {
    if record.peaks.len() != record.len() {
        return Err(Error::Data(format!(
            "series `{}` has no peak indicator channel",
            record.series_id
        )));
    }
    let future = record.future(horizons);
    let (t_len, h_len) = (record.len(), horizons.len());
    let horizon = Tensor::new([t_len, h_len.max(1)], future.data()[..t_len * h_len].to_vec())?;
    Ok(PeakMask {
        history: record.peak_indicator(),
        horizon,
    })
}

/// Replaces masked observations with the most recent unmasked observation
/// of the same channel. Masked positions with no earlier unmasked time read
/// as 0.
pub fn forward_fill(past: &Tensor, history_mask: &[f64]) -> Result<Tensor> {
    let (channels, t_len) = past.dims2();
    if history_mask.len() != t_len {
        return Err(Error::shape("forward_fill", past.shape(), &[history_mask.len()]));
    }
    let mut out = past.clone();
    for c in 0..channels {
        let row = &mut out.data_mut()[c * t_len..(c + 1) * t_len];
        let mut last = 0.0;
        for (v, &m) in row.iter_mut().zip(history_mask) {
            if m == 0.0 {
                last = *v;
            } else {
                *v = last;
            }
        }
    }
    Ok(out)
}

/// Injects `max(1, round(rate·T))` non-negative spikes `|N(0, σ²)|` per series,
/// with `σ²` the sample variance of that series, at positions drawn without
/// replacement. Injected positions are flagged as PEs. Returns the perturbed
/// records and the sorted injected positions of each.
pub fn contaminate(records: &[SeriesRecord], rate: f64, seed: u64) -> Result<(Vec<SeriesRecord>, Vec<Vec<usize>>)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "contamination rate must be in (0, 1), got {rate}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let t_len = r.len();
        if t_len < 2 {
            return Err(Error::Data(format!(
                "series `{}` needs at least 2 observations to contaminate",
                r.series_id
            )));
        }
        let count = ((rate * t_len as f64).round() as usize).max(1);
        let sigma = sample_variance(&r.demand).sqrt();
        let mut positions = sample(&mut rng, t_len, count).into_vec();
        positions.sort_unstable();
        let mut rec = r.clone();
        for &p in &positions {
            let noise: f64 = if sigma > 0.0 {
                Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng).abs()
            } else {
                0.0
            };
            rec.demand[p] += noise;
            rec.peaks[p] = true;
        }
        out.push(rec);
        labels.push(positions);
    }
    Ok((out, labels))
}

pub(crate) fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Monthly seasonal corpus: `level · (1 + a·sin(2π(t+φ)/12)) · LogNormal(0, s)`
/// with per-series level, amplitude, phase and noise scale drawn from the seed.
/// Each record carries a `static_log_level` feature and a `future_phase`
/// covariate (month of year / 12).
pub fn synthesize_tourism_like(n_series: usize, t_len: usize, seed: u64) -> Result<Vec<SeriesRecord>> {
    synthesize_with_persistence(n_series, t_len, seed, DEFAULT_NOISE_PERSISTENCE)
}

/// Default lag-one autocorrelation of the log-noise.
pub const DEFAULT_NOISE_PERSISTENCE: f64 = 0.0;

/// Like [`synthesize_tourism_like`], with log-noise following a stationary
/// AR(1) process of lag-one correlation `persistence`. Each period's noise
/// stays lognormal with the series' noise scale.
pub fn synthesize_with_persistence(
    n_series: usize,
    t_len: usize,
    seed: u64,
    persistence: f64,
) -> Result<Vec<SeriesRecord>> {
    if !(0.0..1.0).contains(&persistence) {
        return Err(Error::InvalidArgument(format!(
            "noise persistence must be in [0, 1), got {persistence}"
        )));
    }
    if n_series == 0 {
        return Err(Error::InvalidArgument("n_series must be ≥ 1".into()));
    }
    if t_len < 24 {
        return Err(Error::InvalidArgument(format!("T must be ≥ 24, got {t_len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(1998, 1, 1).expect("valid date");
    let timestamps: Vec<NaiveDate> = (0..t_len).map(|i| start + Months::new(i as u32)).collect();
    let phase: Vec<f64> = timestamps.iter().map(|d| d.month0() as f64 / 12.0).collect();
    let level_dist = LogNormal::new(5.0, 0.8).expect("valid lognormal");
    let width = (n_series as f64).log10().floor() as usize + 1;
    let mut out = Vec::with_capacity(n_series);
    for i in 0..n_series {
        let level: f64 = level_dist.sample(&mut rng);
        let amplitude = rng.gen_range(0.1..0.5);
        let shift = rng.gen_range(0.0..12.0);
        let noise_scale = rng.gen_range(0.05..0.2);
        let innovation = Normal::new(0.0, noise_scale).expect("valid normal");
        let carry = (1.0 - persistence * persistence).sqrt();
        let mut log_noise = innovation.sample(&mut rng);
        let demand = (0..t_len)
            .map(|t| {
                if t > 0 {
                    log_noise = persistence * log_noise + carry * innovation.sample(&mut rng);
                }
                let season = 1.0 + amplitude * (2.0 * std::f64::consts::PI * (t as f64 + shift) / 12.0).sin();
                level * season * log_noise.exp()
            })
            .collect();
        out.push(SeriesRecord {
            series_id: format!("S{i:0width$}"),
            timestamps: timestamps.clone(),
            demand,
            peaks: vec![false; t_len],
            static_names: vec!["static_log_level".into()],
            static_features: vec![level.ln()],
            covariate_names: vec!["future_phase".into()],
            covariates: vec![phase.clone()],
        });
    }
    Ok(out)
}

/// Column mapping for [`load_csv`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub series_id: String,
    pub timestamp: String,
    pub demand: String,
    pub peak_indicator: String,
    pub frequency: Frequency,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            series_id: "series_id".into(),
            timestamp: "timestamp".into(),
            demand: "demand".into(),
            peak_indicator: "peak_indicator".into(),
            frequency: Frequency::Monthly,
        }
    }
}

/// Reads one record per `series_id`. Columns prefixed `static_` must be
/// constant within a series; columns prefixed `future_` become covariates.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<SeriesRecord>> {
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                path: path.to_path_buf(),
            })
    };
    let id_col = col(&schema.series_id)?;
    let ts_col = col(&schema.timestamp)?;
    let demand_col = col(&schema.demand)?;
    let peak_col = col(&schema.peak_indicator)?;
    let static_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("static_"))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    let future_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("future_"))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    struct Row {
        ts: NaiveDate,
        demand: f64,
        peak: bool,
        statics: Vec<f64>,
        futures: Vec<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Row>> = HashMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let num = |i: usize, what: &str| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("").trim();
            raw.parse::<f64>()
                .map_err(|_| Error::Data(format!("line {line}: non-numeric {what} `{raw}`")))
        };
        let id = rec.get(id_col).unwrap_or("").to_string();
        let ts_raw = rec.get(ts_col).unwrap_or("").trim();
        let ts = NaiveDate::parse_from_str(ts_raw, "%Y-%m-%d")
            .map_err(|_| Error::Data(format!("line {line}: bad ISO-8601 date `{ts_raw}`")))?;
        let demand = num(demand_col, "demand")?;
        if !(demand.is_finite() && demand >= 0.0) {
            return Err(Error::Data(format!("line {line}: demand must be ≥ 0, got {demand}")));
        }
        let peak = match rec.get(peak_col).unwrap_or("").trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Data(format!(
                    "line {line}: peak_indicator must be 0 or 1, got `{other}`"
                )))
            }
        };
        let statics = static_cols
            .iter()
            .map(|(i, n)| num(*i, n))
            .collect::<Result<Vec<_>>>()?;
        let futures = future_cols
            .iter()
            .map(|(i, n)| num(*i, n))
            .collect::<Result<Vec<_>>>()?;
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(Row {
            ts,
            demand,
            peak,
            statics,
            futures,
        });
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).expect("grouped id");
        rows.sort_by_key(|r| r.ts);
        for pair in rows.windows(2) {
            if pair[0].ts == pair[1].ts {
                return Err(Error::Data(format!(
                    "series `{id}`: duplicate timestamp {}",
                    pair[0].ts
                )));
            }
            if schema.frequency.next(pair[0].ts) != Some(pair[1].ts) {
                return Err(Error::Data(format!(
                    "series `{id}`: gap or irregular step between {} and {}",
                    pair[0].ts, pair[1].ts
                )));
            }
        }
        let statics = rows[0].statics.clone();
        if rows.iter().any(|r| r.statics != statics) {
            return Err(Error::Data(format!("series `{id}`: static columns vary over time")));
        }
        let record = SeriesRecord {
            series_id: id,
            timestamps: rows.iter().map(|r| r.ts).collect(),
            demand: rows.iter().map(|r| r.demand).collect(),
            peaks: rows.iter().map(|r| r.peak).collect(),
            static_names: static_cols.iter().map(|(_, n)| n.clone()).collect(),
            static_features: statics,
            covariate_names: future_cols.iter().map(|(_, n)| n.clone()).collect(),
            covariates: (0..future_cols.len())
                .map(|c| rows.iter().map(|r| r.futures[c]).collect())
                .collect(),
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

/// Writes records in the ingestion schema. All records must share the same
/// static and covariate column names.
pub fn write_csv(path: &Path, records: &[SeriesRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let Some(first) = records.first() else {
        w.write_record(["series_id", "timestamp", "demand", "peak_indicator"])?;
        w.flush().map_err(|e| Error::io("writing csv", e))?;
        return Ok(());
    };
    let mut header = vec![
        "series_id".to_string(),
        "timestamp".into(),
        "demand".into(),
        "peak_indicator".into(),
    ];
    header.extend(first.static_names.iter().cloned());
    header.extend(first.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        if r.static_names != first.static_names || r.covariate_names != first.covariate_names {
            return Err(Error::Data(format!(
                "series `{}` has a different column set",
                r.series_id
            )));
        }
        for t in 0..r.len() {
            let mut row = vec![
                r.series_id.clone(),
                r.timestamps[t].format("%Y-%m-%d").to_string(),
                r.demand[t].to_string(),
                u8::from(r.peaks[t]).to_string(),
            ];
            row.extend(r.static_features.iter().map(f64::to_string));
            row.extend(r.covariates.iter().map(|c| c[t].to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("writing csv", e))?;
    Ok(())
}

/// Sidecar listing injected positions: `series_id,timestamp,index`.
pub fn write_labels(path: &Path, records: &[SeriesRecord], labels: &[Vec<usize>]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut buf = String::from("series_id,timestamp,index\n");
    for (r, pos) in records.iter().zip(labels) {
        for &p in pos {
            buf.push_str(&format!(
                "{},{},{}\n",
                r.series_id,
                r.timestamps[p].format("%Y-%m-%d"),
                p
            ));
        }
    }
    f.write_all(buf.as_bytes())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Which creation-time targets a window admits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    /// Every target window inside the series.
    All,
    /// Target windows ending before the last `holdout` periods.
    Train { holdout: usize },
    /// Target windows inside the last `holdout` periods.
    Holdout { holdout: usize },
}

impl Split {
    fn bounds(self, t_len: usize) -> (usize, usize) {
        match self {
            Split::All => (0, t_len),
            Split::Train { holdout } => (0, t_len.saturating_sub(holdout)),
            Split::Holdout { holdout } => (t_len.saturating_sub(holdout), t_len),
        }
    }
}

/// Creation times of one record together with their multi-horizon targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    pub record: usize,
    pub creation_times: Vec<usize>,
    /// `[n_t × H]`, row-major.
    pub targets: Vec<f64>,
    pub valid: Vec<bool>,
}

impl SampleWindow {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub horizons: Vec<Horizon>,
    pub windows: Vec<SampleWindow>,
}

/// All creation times `t ≥ context_length − 1` with their targets
/// `y[t][h] = Σ demand[t+lead .. t+lead+span)` for every horizon whose window
/// fits in the series. Targets past the series end are excluded.
pub fn window(records: &[SeriesRecord], context_length: usize, horizons: &[Horizon]) -> Result<Vec<SampleWindow>> {
    window_split(records, context_length, horizons, Split::All)
}

pub fn window_split(
    records: &[SeriesRecord],
    context_length: usize,
    horizons: &[Horizon],
    split: Split,
) -> Result<Vec<SampleWindow>> {
    if context_length == 0 {
        return Err(Error::InvalidArgument("context_length must be ≥ 1".into()));
    }
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("empty horizon set".into()));
    }
    let reach = max_reach(horizons);
    let mut out = Vec::with_capacity(records.len());
    for (idx, r) in records.iter().enumerate() {
        let t_len = r.len();
        let (lo, hi) = split.bounds(t_len);
        let too_short = match split {
            Split::Holdout { holdout } => holdout < max_span(horizons) || context_length - 1 + reach > hi,
            _ => context_length - 1 + reach > hi,
        };
        if too_short {
            return Err(Error::Data(format!(
                "series `{}` (T={t_len}) is too short for context {context_length} and reach {reach} under {split:?}",
                r.series_id
            )));
        }
        let mut times = Vec::new();
        let mut targets = Vec::new();
        let mut valid = Vec::new();
        for t in context_length - 1..t_len {
            let row: Vec<Option<f64>> = horizons
                .iter()
                .map(|hz| {
                    let w = hz.window(t);
                    (w.start >= lo && w.end <= hi).then(|| r.demand[w].iter().sum())
                })
                .collect();
            if row.iter().all(Option::is_none) {
                continue;
            }
            times.push(t);
            for v in row {
                targets.push(v.unwrap_or(0.0));
                valid.push(v.is_some());
            }
        }
        out.push(SampleWindow {
            record: idx,
            creation_times: times,
            targets,
            valid,
        });
    }
    Ok(out)
}

/// Groups windows into batches of at most `batch_size`, visiting them in `order`.
pub fn batches(windows: &[SampleWindow], horizons: &[Horizon], batch_size: usize, order: &[usize]) -> Vec<SampleBatch> {
    order
        .chunks(batch_size.max(1))
        .map(|chunk| SampleBatch {
            horizons: horizons.to_vec(),
            windows: chunk.iter().map(|&i| windows[i].clone()).collect(),
        })
        .collect()
}
