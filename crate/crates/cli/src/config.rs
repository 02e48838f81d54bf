//! Run configuration: a flat map of dotted keys, layered as defaults, then
//! the `--config` file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use spade::data::Horizon;
use spade::evaluation::DEFAULT_POST_PEAK_WINDOW;
use spade::model::{validate_quantiles, ModelConfig, VariantFlag};
use spade::training::TrainConfig;
use spade::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

fn defaults() -> BTreeMap<String, Value> {
    let desk = ModelConfig::desk(Vec::new(), 0, 0);
    let train = TrainConfig::default();
    let pairs = [
        ("seed", json!(0)),
        ("out", json!("out")),
        ("jobs", json!(1)),
        ("data.path", Value::Null),
        ("data.n_series", json!(555)),
        ("data.periods", json!(228)),
        ("data.contamination_rate", json!(0.03)),
        ("data.noise_persistence", json!(spade::data::DEFAULT_NOISE_PERSISTENCE)),
        ("model.variant", json!("full")),
        ("model.quantiles", json!(desk.quantiles)),
        ("model.horizons", json!([[1, 1], [2, 1], [3, 1], [1, 3]])),
        ("model.conv_layers", json!(desk.conv_layers)),
        ("model.conv_filters", json!(desk.conv_filters)),
        ("model.kernel_size", json!(desk.kernel_size)),
        ("model.static_width", json!(desk.static_width)),
        ("model.future_width", json!(desk.future_width)),
        ("model.agnostic_width", json!(desk.agnostic_width)),
        ("model.specific_width", json!(desk.specific_width)),
        ("model.attention_width", json!(desk.attention_width)),
        ("model.attention_heads", json!(desk.attention_heads)),
        ("train.learning_rate", json!(train.learning_rate)),
        ("train.epochs", json!(train.epochs)),
        ("train.batch_size", json!(train.batch_size)),
        ("train.context_length", json!(train.context_length)),
        ("train.validation_periods", json!(train.validation_periods)),
        ("eval.checkpoint", Value::Null),
        ("eval.forecasts", Value::Null),
        ("eval.split", json!("holdout")),
        ("eval.post_peak_window", json!(DEFAULT_POST_PEAK_WINDOW)),
        (
            "ablate.variants",
            json!(["original", "masked-conv", "peak-attention", "full"]),
        ),
        ("ablate.seeds", json!(5)),
        ("plot.series", json!([])),
        ("plot.horizon", json!(0)),
    ];
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Layer widths that the paper-scale flag restores.
fn paper_scale() -> Vec<(&'static str, Value)> {
    let p = ModelConfig::paper_scale(Vec::new(), 0, 0);
    vec![
        ("model.conv_filters", json!(p.conv_filters)),
        ("model.kernel_size", json!(p.kernel_size)),
        ("model.future_width", json!(p.future_width)),
        ("model.agnostic_width", json!(p.agnostic_width)),
        ("model.attention_width", json!(p.attention_width)),
    ]
}

/// Parses an override value: JSON when it parses, otherwise a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults, then `file`, then `--paper-scale`, then `overrides`.
    pub fn resolve(file: Option<&Path>, paper: bool, overrides: &[(String, Value)]) -> Result<Self> {
        let mut values = defaults();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
            let Value::Object(map) = parsed else {
                return Err(Error::Config("config file must hold a JSON object".into()));
            };
            for (k, v) in map {
                Self::set_checked(&mut values, &k, v)?;
            }
        }
        if paper {
            for (k, v) in paper_scale() {
                values.insert(k.to_string(), v);
            }
        }
        for (k, v) in overrides {
            Self::set_checked(&mut values, k, v.clone())?;
        }
        let cfg = RunConfig { values };
        cfg.model_config(0, 0)?;
        cfg.train_config()?;
        Ok(cfg)
    }

    fn set_checked(values: &mut BTreeMap<String, Value>, key: &str, v: Value) -> Result<()> {
        match values.get_mut(key) {
            Some(slot) => {
                *slot = v;
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key `{key}`"))),
        }
    }

    /// Parses `key=value` override strings.
    pub fn parse_override(raw: &str) -> Result<(String, Value)> {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
        Ok((k.trim().to_string(), parse_value(v.trim())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.values).expect("config serializes") + "\n"
    }

    /// Writes the resolved config into `dir` as `config.json`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("config.json"), self.to_json().as_bytes())
    }

    fn get(&self, key: &str) -> &Value {
        self.values.get(key).unwrap_or(&Value::Null)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::Config(format!("`{key}` must be a non-negative integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.get(key)
            .as_u64()
            .ok_or_else(|| Error::Config(format!("`{key}` must be a non-negative integer")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)
            .as_f64()
            .ok_or_else(|| Error::Config(format!("`{key}` must be a number")))
    }

    pub fn string(&self, key: &str) -> Result<String> {
        self.get(key)
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Config(format!("`{key}` must be a string")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).as_str().map(PathBuf::from)
    }

    pub fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::InvalidArgument(format!("`{key}` is required for this command")))
    }

    pub fn strings(&self, key: &str) -> Result<Vec<String>> {
        self.get(key)
            .as_array()
            .and_then(|a| a.iter().map(|v| v.as_str().map(str::to_string)).collect())
            .ok_or_else(|| Error::Config(format!("`{key}` must be a list of strings")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64("seed")
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.string("out")?))
    }

    pub fn variant(&self) -> Result<VariantFlag> {
        self.string("model.variant")?.parse()
    }

    pub fn variants(&self) -> Result<Vec<VariantFlag>> {
        self.strings("ablate.variants")?.iter().map(|s| s.parse()).collect()
    }

    /// `ablate.seeds` as a count (seeds `seed, seed+1, …`) or an explicit list.
    pub fn ablation_seeds(&self) -> Result<Vec<u64>> {
        let base = self.seed()?;
        match self.get("ablate.seeds") {
            Value::Number(n) => {
                let n = n
                    .as_u64()
                    .ok_or_else(|| Error::Config("`ablate.seeds` must be a count".into()))?;
                Ok((0..n).map(|i| base + i).collect())
            }
            Value::Array(a) => a
                .iter()
                .map(|v| {
                    v.as_u64()
                        .ok_or_else(|| Error::Config("`ablate.seeds` entries must be integers".into()))
                })
                .collect(),
            _ => Err(Error::Config("`ablate.seeds` must be a count or a list".into())),
        }
    }

    pub fn horizons(&self) -> Result<Vec<Horizon>> {
        let err = || Error::Config("`model.horizons` must be a list of [lead, span] pairs".into());
        let list = self.get("model.horizons").as_array().ok_or_else(err)?;
        list.iter()
            .map(|pair| {
                let p = pair.as_array().filter(|p| p.len() == 2).ok_or_else(err)?;
                let lead = p[0].as_u64().ok_or_else(err)? as usize;
                let span = p[1].as_u64().ok_or_else(err)? as usize;
                Horizon::new(lead, span).map_err(|e| Error::Config(e.to_string()))
            })
            .collect()
    }

    pub fn quantiles(&self) -> Result<Vec<f64>> {
        let q = self
            .get("model.quantiles")
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| Error::Config("`model.quantiles` must be a list of numbers".into()))?;
        validate_quantiles(&q)?;
        Ok(q)
    }

    /// Model architecture for a dataset with the given input widths.
    pub fn model_config(&self, static_features: usize, future_channels: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            past_channels: 1,
            static_features,
            future_channels,
            horizons: self.horizons()?,
            quantiles: self.quantiles()?,
            conv_layers: self.usize("model.conv_layers")?,
            conv_filters: self.usize("model.conv_filters")?,
            kernel_size: self.usize("model.kernel_size")?,
            static_width: self.usize("model.static_width")?,
            future_width: self.usize("model.future_width")?,
            agnostic_width: self.usize("model.agnostic_width")?,
            specific_width: self.usize("model.specific_width")?,
            attention_width: self.usize("model.attention_width")?,
            attention_heads: self.usize("model.attention_heads")?,
        };
        // input widths are validated once the data is known
        ModelConfig {
            future_channels: future_channels.max(1),
            ..cfg.clone()
        }
        .validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.f64("train.learning_rate")?,
            epochs: self.usize("train.epochs")?,
            batch_size: self.usize("train.batch_size")?,
            seed: self.seed()?,
            context_length: self.usize("train.context_length")?,
            validation_periods: self.usize("train.validation_periods")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        context: format!("writing {}", path.display()),
        source: e,
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        context: format!("creating {}", dir.display()),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"train.epochs": 3, "model.conv_filters": 5}"#).unwrap();
        let cfg = RunConfig::resolve(
            Some(&file),
            false,
            &[RunConfig::parse_override("train.epochs=7").unwrap()],
        )
        .unwrap();
        assert_eq!(cfg.usize("train.epochs").unwrap(), 7);
        assert_eq!(cfg.usize("model.conv_filters").unwrap(), 5);
        let paper = RunConfig::resolve(Some(&file), true, &[]).unwrap();
        assert_eq!(paper.usize("model.conv_filters").unwrap(), 30);
        assert_eq!(paper.usize("model.kernel_size").unwrap(), 32);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let unknown = RunConfig::parse_override("model.depth=3").unwrap();
        assert!(matches!(
            RunConfig::resolve(None, false, &[unknown]),
            Err(Error::Config(_))
        ));
        let zero = RunConfig::parse_override("model.conv_filters=0").unwrap();
        assert!(RunConfig::resolve(None, false, &[zero]).is_err());
        let q = RunConfig::parse_override("model.quantiles=[0.9,0.5]").unwrap();
        assert!(RunConfig::resolve(None, false, &[q]).is_err());
        assert!(RunConfig::parse_override("novalue").is_err());
    }

    #[test]
    fn override_values_parse() {
        let (k, v) = RunConfig::parse_override("data.path=some/file.csv").unwrap();
        assert_eq!((k.as_str(), v), ("data.path", json!("some/file.csv")));
        let (_, v) = RunConfig::parse_override("model.horizons=[[1,1],[2,3]]").unwrap();
        let cfg = RunConfig::resolve(None, false, &[("model.horizons".into(), v)]).unwrap();
        assert_eq!(cfg.horizons().unwrap()[1], Horizon::new(2, 3).unwrap());
        let seeds = RunConfig::resolve(None, false, &[("seed".into(), json!(10))]).unwrap();
        assert_eq!(seeds.ablation_seeds().unwrap(), vec![10, 11, 12, 13, 14]);
    }
}
