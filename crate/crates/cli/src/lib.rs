//! The `spade` command line: corpus synthesis, training, evaluation,
//! ablation grids and forecast plots.

pub mod config;
pub mod forecasts;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;
use spade::checkpoint;
use spade::data::{
    contaminate, load_csv, synthesize_with_persistence, window_split, write_csv, write_labels, CsvSchema, Horizon,
    SeriesRecord, Split,
};
use spade::evaluation::{ablation_grid, evaluate_scopes, CellMetrics, EvalSet, MetricReport};
use spade::model::{ForecastGrid, ModelInput, SpadeModel};
use spade::training::{predict, train};
use spade::{Error, Result};

pub use config::RunConfig;
use config::{create_dir, write_file};

#[derive(Debug, Parser)]
#[command(name = "spade", version, about = "Peak-aware multi-horizon quantile forecasting")]
pub struct Cli {
    /// JSON config file with flat dotted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the ablation grid.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Use the full-size layer widths.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Override any config key, e.g. `--set train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a contaminated corpus.
    Generate,
    /// Train one model variant.
    Train {
        /// Dataset CSV (`data.path`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint or a forecasts file.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint file (`eval.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Precomputed forecasts CSV (`eval.forecasts`), used instead of a
        /// checkpoint.
        #[arg(long)]
        forecasts: Option<PathBuf>,
    },
    /// Train and score every variant × seed cell.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Draw actuals and forecasts of selected series.
    Plot {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Forecasts CSV written by `evaluate`.
        #[arg(long)]
        forecasts: Option<PathBuf>,
        /// Series to draw (`plot.series`); defaults to the first.
        #[arg(long = "series")]
        series: Vec<String>,
    },
}

impl Cli {
    /// Resolved configuration: defaults, config file, `--paper-scale`,
    /// `--set` overrides, then the dedicated flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut overrides = self
            .overrides
            .iter()
            .map(|s| RunConfig::parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        let path = |p: &Path| json!(p.to_string_lossy());
        if let Some(s) = self.seed {
            overrides.push(("seed".into(), json!(s)));
        }
        if let Some(o) = &self.out {
            overrides.push(("out".into(), path(o)));
        }
        if let Some(j) = self.jobs {
            overrides.push(("jobs".into(), json!(j)));
        }
        match &self.command {
            Command::Generate => {}
            Command::Train { data } | Command::Ablate { data } => {
                if let Some(d) = data {
                    overrides.push(("data.path".into(), path(d)));
                }
            }
            Command::Evaluate {
                data,
                checkpoint,
                forecasts,
            } => {
                if let Some(d) = data {
                    overrides.push(("data.path".into(), path(d)));
                }
                if let Some(c) = checkpoint {
                    overrides.push(("eval.checkpoint".into(), path(c)));
                }
                if let Some(f) = forecasts {
                    overrides.push(("eval.forecasts".into(), path(f)));
                }
            }
            Command::Plot {
                data,
                forecasts,
                series,
            } => {
                if let Some(d) = data {
                    overrides.push(("data.path".into(), path(d)));
                }
                if let Some(f) = forecasts {
                    overrides.push(("eval.forecasts".into(), path(f)));
                }
                if !series.is_empty() {
                    overrides.push(("plot.series".into(), json!(series)));
                }
            }
        }
        RunConfig::resolve(self.config.as_deref(), self.paper_scale, &overrides)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    match cli.command {
        Command::Generate => cmd_generate(&cfg),
        Command::Train { .. } => cmd_train(&cfg).map(|_| ()),
        Command::Evaluate { .. } => cmd_evaluate(&cfg).map(|_| ()),
        Command::Ablate { .. } => cmd_ablate(&cfg).map(|_| ()),
        Command::Plot { .. } => cmd_plot(&cfg).map(|_| ()),
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir()?;
    create_dir(&dir)?;
    cfg.echo(&dir)?;
    Ok(dir)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<SeriesRecord>> {
    let path = cfg.required_path("data.path")?;
    let records = load_csv(&path, &CsvSchema::default())?;
    if records.is_empty() {
        return Err(Error::Data(format!("dataset {} is empty", path.display())));
    }
    Ok(records)
}

/// Synthesizes `data.n_series` × `data.periods`, contaminates it and writes
/// `data.csv`, `labels.csv` and `manifest.json`.
pub fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let rate = cfg.f64("data.contamination_rate")?;
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "contamination rate must be in (0, 1), got {rate}"
        )));
    }
    let (n, periods) = (cfg.usize("data.n_series")?, cfg.usize("data.periods")?);
    let persistence = cfg.f64("data.noise_persistence")?;
    let clean = synthesize_with_persistence(n, periods, seed, persistence)?;
    let (records, labels) = contaminate(&clean, rate, seed.wrapping_add(1))?;
    let dir = prepare_out(cfg)?;
    write_csv(&dir.join("data.csv"), &records)?;
    write_labels(&dir.join("labels.csv"), &records, &labels)?;
    let manifest = json!({
        "seed": seed,
        "contamination_rate": rate,
        "noise_persistence": persistence,
        "n_series": n,
        "periods": periods,
        "injected_points": labels.iter().map(Vec::len).sum::<usize>(),
    });
    write_file(
        &dir.join("manifest.json"),
        (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes(),
    )
}

fn input_widths(records: &[SeriesRecord]) -> (usize, usize) {
    let first = &records[0];
    (first.static_features.len(), first.future_channels())
}

/// Trains `model.variant` and writes `model.ckpt` and `train_report.jsonl`.
/// Returns the checkpoint checksum.
pub fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let records = load_dataset(cfg)?;
    let (s, f) = input_widths(&records);
    let model_cfg = cfg.model_config(s, f)?;
    let train_cfg = cfg.train_config()?;
    let (model, report) = train(&records, cfg.variant()?, &model_cfg, &train_cfg)?;
    let dir = prepare_out(cfg)?;
    checkpoint::save(&model, &dir.join("model.ckpt"))?;
    write_file(&dir.join("train_report.jsonl"), report.to_json_lines()?.as_bytes())?;
    Ok(report.checksum)
}

fn eval_split(
    cfg: &RunConfig,
    records: &[SeriesRecord],
    horizons: &[Horizon],
) -> Result<(EvalSet, Vec<spade::data::SampleWindow>)> {
    let split = match cfg.string("eval.split")?.as_str() {
        "holdout" => Split::Holdout {
            holdout: cfg.usize("train.validation_periods")?,
        },
        "all" => Split::All,
        other => {
            return Err(Error::Config(format!(
                "eval.split must be `holdout` or `all`, got `{other}`"
            )))
        }
    };
    let windows = window_split(records, cfg.usize("train.context_length")?, horizons, split)?;
    Ok((EvalSet::from_windows(records, &windows, horizons), windows))
}

/// Scores `eval.checkpoint` (or `eval.forecasts`) on the evaluation split and
/// writes `metrics.json`, `metrics.txt` and, for a checkpoint,
/// `forecasts.csv`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<MetricReport> {
    let records = load_dataset(cfg)?;
    let (s, f) = input_widths(&records);
    let expected = cfg.model_config(s, f)?;
    let window = cfg.usize("eval.post_peak_window")?;
    let (grid, set, variant, from_model) = match (cfg.path("eval.checkpoint"), cfg.path("eval.forecasts")) {
        (Some(ckpt), _) => {
            let model = checkpoint::load_expecting(&ckpt, &expected)?;
            let (set, windows) = eval_split(cfg, &records, &model.config().horizons)?;
            let grid = model_forecasts(cfg, &model, &records, &windows)?;
            (grid, set, model.variant(), true)
        }
        (None, Some(path)) => {
            let (set, _) = eval_split(cfg, &records, &expected.horizons)?;
            let grid = forecasts::read_for(&path, &set, &expected.quantiles)?;
            (grid, set, cfg.variant()?, false)
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "evaluate needs `eval.checkpoint` or `eval.forecasts`".into(),
            ))
        }
    };
    let values = evaluate_scopes(&set, &grid, window)?;
    let cell = CellMetrics {
        variant,
        seed: cfg.seed()?,
        values,
    };
    let report = MetricReport::aggregate(&[cell], &grid.quantiles, window);
    let dir = prepare_out(cfg)?;
    write_file(
        &dir.join("metrics.json"),
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    write_file(&dir.join("metrics.txt"), report.to_table().as_bytes())?;
    if from_model {
        forecasts::write(&dir.join("forecasts.csv"), &grid, &records)?;
    }
    Ok(report)
}

fn model_forecasts(
    cfg: &RunConfig,
    model: &SpadeModel,
    records: &[SeriesRecord],
    windows: &[spade::data::SampleWindow],
) -> Result<ForecastGrid> {
    let holdout = cfg.usize("train.validation_periods")?;
    let inputs = records
        .iter()
        .map(|r| ModelInput::from_record(r, &model.config().horizons, r.len().saturating_sub(holdout)))
        .collect::<Result<Vec<_>>>()?;
    predict(model, records, &inputs, windows)
}

/// Runs the ablation grid and writes `ablation.json` and `ablation.txt`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<MetricReport> {
    let records = load_dataset(cfg)?;
    let (s, f) = input_widths(&records);
    let model_cfg = cfg.model_config(s, f)?;
    let report = ablation_grid(
        &records,
        &cfg.variants()?,
        &cfg.ablation_seeds()?,
        &model_cfg,
        &cfg.train_config()?,
        cfg.usize("eval.post_peak_window")?,
        cfg.usize("jobs")?,
    )?;
    let dir = prepare_out(cfg)?;
    write_file(
        &dir.join("ablation.json"),
        (serde_json::to_string_pretty(&report)? + "\n").as_bytes(),
    )?;
    write_file(&dir.join("ablation.txt"), report.to_table().as_bytes())?;
    Ok(report)
}

/// Writes `plot_<series>.svg` for each selected series: actual demand, the
/// P50 and P90 forecasts of horizon `plot.horizon` placed at their target
/// period and divided by the span, and shaded peak periods. Returns the
/// files written.
pub fn cmd_plot(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let records = load_dataset(cfg)?;
    let forecasts_path = cfg.required_path("eval.forecasts")?;
    let horizons = cfg.horizons()?;
    let h = cfg.usize("plot.horizon")?;
    let hz = *horizons.get(h).ok_or_else(|| {
        Error::Config(format!(
            "plot.horizon {h} is out of range for {} horizons",
            horizons.len()
        ))
    })?;
    let mut wanted = cfg.strings("plot.series")?;
    if wanted.is_empty() {
        wanted.push(records[0].series_id.clone());
    }
    let dir = prepare_out(cfg)?;
    let mut written = Vec::new();
    for id in &wanted {
        let record = records
            .iter()
            .find(|r| &r.series_id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown series id `{id}`")))?;
        let rows = forecasts::read_series(&forecasts_path, id, hz)?;
        let trace = |q: f64, label: &str, color: &'static str| {
            let mut points: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| (r.1 - q).abs() < 1e-12)
                .map(|&(t, _, v)| (t + hz.lead, v / hz.span as f64))
                .collect();
            points.sort_by_key(|p| p.0);
            plot::Trace {
                label: label.to_string(),
                color,
                points,
            }
        };
        let traces = [trace(0.5, "P50", "steelblue"), trace(0.9, "P90", "firebrick")];
        let title = format!("{id}, horizon lead {} span {}", hz.lead, hz.span);
        let svg = plot::render(record, &traces, &title);
        let path = dir.join(format!("plot_{}.svg", sanitize(id)));
        write_file(&path, svg.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}
