//! The multi-quantile objective and the seeded Adam training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{batches, max_span, window_split, SampleBatch, SampleWindow, SeriesRecord, Split};
use crate::error::{Error, Result};
use crate::evaluation::{wql, EvalSet, MetricScope};
use crate::model::{ForecastGrid, ModelConfig, ModelInput, SeriesForecast, SpadeModel, VariantFlag};
use crate::optim::AdamState;
use crate::tensor::{pinball_value, Graph, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Series per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// First creation time is `context_length − 1`.
    pub context_length: usize,
    /// Trailing periods held out for validation; 0 trains on everything.
    pub validation_periods: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 10,
            batch_size: 32,
            seed: 0,
            context_length: 12,
            validation_periods: 12,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if self.context_length == 0 {
            return Err(Error::Config("context length must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective per scored `(series, t, h)` term, averaged over the epoch.
    pub loss: f64,
    /// Seconds since training started.
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: VariantFlag,
    pub seed: u64,
    pub parameters: usize,
    /// Training objective per term before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// `(quantile, WQL)` on the held-out suffix; empty without validation.
    pub validation_wql: Vec<(f64, Option<f64>)>,
    pub wall_seconds: f64,
    pub checksum: String,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// One JSON object per epoch; the last also carries the validation
    /// metrics, wall time and checksum.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for (i, e) in self.epochs.iter().enumerate() {
            let mut v = serde_json::json!({
                "variant": self.variant,
                "seed": self.seed,
                "epoch": e.epoch,
                "loss": e.loss,
                "elapsed_seconds": e.elapsed_seconds,
            });
            if i == 0 {
                v["initial_loss"] = self.initial_loss.into();
                v["parameters"] = self.parameters.into();
            }
            if i + 1 == self.epochs.len() {
                v["validation_wql"] = serde_json::to_value(&self.validation_wql)?;
                v["wall_seconds"] = self.wall_seconds.into();
                v["checksum"] = self.checksum.clone().into();
            }
            out.push_str(&serde_json::to_string(&v)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Windows and model inputs for a training run.
pub struct Prepared {
    pub inputs: Vec<ModelInput>,
    pub train: Vec<SampleWindow>,
    pub holdout: Option<Vec<SampleWindow>>,
}

impl Prepared {
    pub fn new(records: &[SeriesRecord], model: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        let hz = &model.horizons;
        let (train, holdout) = if cfg.validation_periods == 0 {
            (window_split(records, cfg.context_length, hz, Split::All)?, None)
        } else {
            let holdout = cfg.validation_periods;
            (
                window_split(records, cfg.context_length, hz, Split::Train { holdout })?,
                Some(window_split(
                    records,
                    cfg.context_length,
                    hz,
                    Split::Holdout { holdout },
                )?),
            )
        };
        let inputs = records
            .iter()
            .map(|r| ModelInput::from_record(r, hz, r.len().saturating_sub(cfg.validation_periods)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared { inputs, train, holdout })
    }
}

/// Records the span-normalized pinball loss of one series window on `g`.
/// Returns the loss node and the number of scored `(t, h)` terms.
pub fn series_loss(
    g: &mut Graph,
    model: &SpadeModel,
    input: &ModelInput,
    window: &SampleWindow,
) -> Result<(Var, Vec<Var>, usize)> {
    let nodes = model.build(g, input)?;
    let cfg = model.config();
    let t_len = input.len();
    let h_len = cfg.horizons.len();
    let mut total: Option<Var> = None;
    let mut count = 0;
    for (h, hz) in cfg.horizons.iter().enumerate() {
        let mut y = vec![0.0; t_len];
        let mut w = vec![0.0; t_len];
        for (i, &t) in window.creation_times.iter().enumerate() {
            if window.valid[i * h_len + h] {
                y[t] = window.targets[i * h_len + h];
                w[t] = 1.0 / hz.span as f64;
                count += 1;
            }
        }
        let l = g.pinball(nodes.predictions[h], &y, &w, &cfg.quantiles)?;
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    Ok((total.expect("non-empty horizons"), nodes.params, count))
}

/// Forecasts (quantiles sorted) at each window's creation times.
pub fn predict(
    model: &SpadeModel,
    records: &[SeriesRecord],
    inputs: &[ModelInput],
    windows: &[SampleWindow],
) -> Result<ForecastGrid> {
    let cfg = model.config();
    let per_t = cfg.horizons.len() * cfg.quantiles.len();
    let series = windows
        .iter()
        .map(|w| {
            let full = model.forecast_input(&inputs[w.record])?;
            let mut values = Vec::with_capacity(w.creation_times.len() * per_t);
            for &t in &w.creation_times {
                values.extend_from_slice(&full.data()[t * per_t..(t + 1) * per_t]);
            }
            Ok(SeriesForecast {
                series_id: records[w.record].series_id.clone(),
                creation_times: w.creation_times.clone(),
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForecastGrid {
        quantiles: cfg.quantiles.clone(),
        horizons: cfg.horizons.clone(),
        series,
    })
}

/// `Σ_q Σ_i Σ_t Σ_h QL(y/span, ŷ/span; q)` over the valid targets of `batch`.
/// `grid.series` is indexed by record, as the windows' `record` fields are.
pub fn objective(batch: &SampleBatch, grid: &ForecastGrid) -> Result<f64> {
    if grid.horizons != batch.horizons {
        return Err(Error::Data("forecast grid horizons differ from the batch".into()));
    }
    let h_len = batch.horizons.len();
    let mut total = 0.0;
    for w in &batch.windows {
        let fs = grid
            .series
            .get(w.record)
            .ok_or_else(|| Error::Data(format!("forecast grid has no series for record {}", w.record)))?;
        for (i, &t) in w.creation_times.iter().enumerate() {
            let ti = fs
                .creation_times
                .binary_search(&t)
                .map_err(|_| Error::Data(format!("forecast grid misses creation time {t} of `{}`", fs.series_id)))?;
            for (h, hz) in batch.horizons.iter().enumerate() {
                if !w.valid[i * h_len + h] {
                    continue;
                }
                let span = hz.span as f64;
                let y = w.targets[i * h_len + h] / span;
                for (qi, &q) in grid.quantiles.iter().enumerate() {
                    total += pinball_value(y, grid.value(w.record, ti, h, qi) / span, q);
                }
            }
        }
    }
    Ok(total)
}

fn mean_loss(model: &SpadeModel, prepared: &Prepared) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for w in &prepared.train {
        let mut g = Graph::new();
        let (loss, _, n) = series_loss(&mut g, model, &prepared.inputs[w.record], w)?;
        sum += g.value(loss).item();
        count += n;
    }
    Ok(sum / count.max(1) as f64)
}

/// Trains a fresh model of `variant` and returns it with its report.
pub fn train(
    records: &[SeriesRecord],
    variant: VariantFlag,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(SpadeModel, TrainReport)> {
    let prepared = Prepared::new(records, model, cfg)?;
    train_prepared(records, &prepared, variant, model, cfg)
}

/// Like [`train`], also returning the holdout evaluation set and its
/// forecasts.
pub fn train_split(
    records: &[SeriesRecord],
    variant: VariantFlag,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(SpadeModel, TrainReport, EvalSet, ForecastGrid)> {
    if cfg.validation_periods == 0 {
        return Err(Error::Config(
            "a holdout evaluation needs validation_periods ≥ 1".into(),
        ));
    }
    let prepared = Prepared::new(records, model, cfg)?;
    let (m, report) = train_prepared(records, &prepared, variant, model, cfg)?;
    let holdout = prepared.holdout.as_ref().expect("holdout windows");
    let set = EvalSet::from_windows(records, holdout, &model.horizons);
    let grid = predict(&m, records, &prepared.inputs, holdout)?;
    Ok((m, report, set, grid))
}

pub fn train_prepared(
    records: &[SeriesRecord],
    prepared: &Prepared,
    variant: VariantFlag,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(SpadeModel, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = SpadeModel::new(model_cfg.clone(), variant, cfg.seed)?;
    let sizes: Vec<usize> = model.params().iter().map(|p| p.value.numel()).collect();
    let mut adam = AdamState::new(cfg.learning_rate, &sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let initial_loss = mean_loss(&model, prepared)?;
    if !initial_loss.is_finite() {
        return Err(Error::NumericFailure(format!("initial loss is {initial_loss}")));
    }

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..prepared.train.len()).collect();
    let mut acc: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0;
        for (b, batch) in batches(&prepared.train, &model_cfg.horizons, cfg.batch_size, &order)
            .iter()
            .enumerate()
        {
            acc.iter_mut().for_each(|a| a.iter_mut().for_each(|v| *v = 0.0));
            for w in &batch.windows {
                let mut g = Graph::new();
                let (loss, params, n) = series_loss(&mut g, &model, &prepared.inputs[w.record], w)?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::NumericFailure(format!(
                        "loss is {value} at epoch {epoch}, batch {b}, series `{}`",
                        records[w.record].series_id
                    )));
                }
                epoch_sum += value;
                epoch_count += n;
                let grads = g.backward(loss)?;
                for (a, &p) in acc.iter_mut().zip(&params) {
                    if let Some(gp) = grads.get(p) {
                        a.iter_mut().zip(gp).for_each(|(x, y)| *x += y);
                    }
                }
            }
            if acc.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NumericFailure(format!(
                    "non-finite gradient at epoch {epoch}, batch {b}"
                )));
            }
            let grad_refs: Vec<&[f64]> = acc.iter().map(Vec::as_slice).collect();
            let mut param_refs: Vec<&mut [f64]> = model.params_mut().iter_mut().map(|p| p.value.data_mut()).collect();
            adam.step(&mut param_refs, &grad_refs)?;
        }
        epochs.push(EpochRecord {
            epoch,
            loss: epoch_sum / epoch_count.max(1) as f64,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
    }

    let validation_wql = match &prepared.holdout {
        Some(windows) => {
            let set = EvalSet::from_windows(records, windows, &model_cfg.horizons);
            let grid = predict(&model, records, &prepared.inputs, windows)?;
            model_cfg
                .quantiles
                .iter()
                .map(|&q| match wql(&set, &grid, q, &MetricScope::overall()) {
                    Ok(v) => Ok((q, Some(v))),
                    Err(Error::UndefinedMetric { .. }) => Ok((q, None)),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    let report = TrainReport {
        variant,
        seed: cfg.seed,
        parameters: model.count_parameters(),
        initial_loss,
        epochs,
        validation_wql,
        wall_seconds: start.elapsed().as_secs_f64(),
        checksum: checkpoint::checksum(&model),
    };
    Ok((model, report))
}

/// Largest relative error between the autodiff gradient of the summed
/// training objective over `windows` and central differences, over every
/// model parameter.
pub fn model_gradient_check(
    model: &SpadeModel,
    inputs: &[ModelInput],
    windows: &[SampleWindow],
    step: f64,
    floor: f64,
) -> Result<f64> {
    let loss_of = |m: &SpadeModel| -> Result<f64> {
        let mut total = 0.0;
        for w in windows {
            let mut g = Graph::new();
            let (loss, _, _) = series_loss(&mut g, m, &inputs[w.record], w)?;
            total += g.value(loss).item();
        }
        Ok(total)
    };
    let mut analytic: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.value.numel()]).collect();
    for w in windows {
        let mut g = Graph::new();
        let (loss, params, _) = series_loss(&mut g, model, &inputs[w.record], w)?;
        let grads = g.backward(loss)?;
        for (a, &p) in analytic.iter_mut().zip(&params) {
            if let Some(gp) = grads.get(p) {
                a.iter_mut().zip(gp).for_each(|(x, y)| *x += y);
            }
        }
    }
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        for (j, &aj) in a.iter().enumerate() {
            let x = model.params()[i].value.data()[j];
            probe.params_mut()[i].value.data_mut()[j] = x + step;
            let up = loss_of(&probe)?;
            probe.params_mut()[i].value.data_mut()[j] = x - step;
            let down = loss_of(&probe)?;
            probe.params_mut()[i].value.data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max((aj - numeric).abs() / aj.abs().max(numeric.abs()).max(floor));
        }
    }
    Ok(worst)
}

/// Every `(learning rate, epochs)` combination on top of `base`.
pub fn hyperparameter_grid(base: &TrainConfig, learning_rates: &[f64], epochs: &[usize]) -> Vec<TrainConfig> {
    learning_rates
        .iter()
        .flat_map(|&lr| {
            epochs.iter().map(move |&e| TrainConfig {
                learning_rate: lr,
                epochs: e,
                ..base.clone()
            })
        })
        .collect()
}

/// Scores each candidate and returns the lowest, ties going to fewer epochs
/// and then the lower learning rate, along with every score.
pub fn select_with(
    candidates: &[TrainConfig],
    mut score: impl FnMut(&TrainConfig) -> Result<f64>,
) -> Result<(TrainConfig, Vec<(TrainConfig, f64)>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty hyperparameter grid".into()));
    }
    let scored = candidates
        .iter()
        .map(|c| Ok((c.clone(), score(c)?)))
        .collect::<Result<Vec<_>>>()?;
    let best = scored
        .iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.epochs.cmp(&b.0.epochs))
                .then(a.0.learning_rate.total_cmp(&b.0.learning_rate))
        })
        .expect("non-empty")
        .0
        .clone();
    Ok((best, scored))
}

/// Picks the grid point with the lowest summed validation WQL over the
/// configured quantiles.
pub fn select_hyperparameters(
    records: &[SeriesRecord],
    variant: VariantFlag,
    model: &ModelConfig,
    candidates: &[TrainConfig],
) -> Result<(TrainConfig, Vec<(TrainConfig, f64)>)> {
    for c in candidates {
        if c.validation_periods < max_span(&model.horizons) {
            return Err(Error::Config(format!(
                "validation window of {} periods is shorter than the longest horizon span {}",
                c.validation_periods,
                max_span(&model.horizons)
            )));
        }
    }
    select_with(candidates, |c| {
        let (_, report) = train(records, variant, model, c)?;
        report
            .validation_wql
            .iter()
            .map(|(q, v)| {
                v.ok_or_else(|| Error::UndefinedMetric {
                    scope: format!("validation P{}", q * 100.0),
                    reason: "zero validation demand".into(),
                })
            })
            .sum()
    })
}
