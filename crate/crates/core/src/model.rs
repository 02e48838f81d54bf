//! The forecaster: peak-masked dilated causal encoder, static and future
//! encoders, a two-stage MLP decoder and the peak attention correction.
//!
//! All parameters live in one flat list of named tensors. A forward pass
//! copies them onto a fresh [`Graph`] as trainable leaves, so gradients come
//! back in the same order as [`SpadeModel::params`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_peak_mask, forward_fill, Horizon, PeakMask, SeriesRecord};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Architecture variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantFlag {
    /// Raw history into the encoder, no peak attention.
    Original,
    /// Forward-filled history into the encoder.
    MaskedConvOnly,
    /// Raw history plus the peak attention correction.
    PeakAttentionOnly,
    /// Forward-filled history plus peak attention.
    Full,
    /// Approximation of an attention-decoder baseline: raw history plus an
    /// unmasked causal attention over the full history whose correction is
    /// applied at every horizon.
    MqtLike,
}

impl VariantFlag {
    pub const ALL: [VariantFlag; 5] = [
        VariantFlag::Original,
        VariantFlag::MaskedConvOnly,
        VariantFlag::PeakAttentionOnly,
        VariantFlag::Full,
        VariantFlag::MqtLike,
    ];

    pub fn masked_conv(self) -> bool {
        matches!(self, VariantFlag::MaskedConvOnly | VariantFlag::Full)
    }

    pub fn attention(self) -> bool {
        matches!(
            self,
            VariantFlag::PeakAttentionOnly | VariantFlag::Full | VariantFlag::MqtLike
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            VariantFlag::Original => "original",
            VariantFlag::MaskedConvOnly => "masked-conv",
            VariantFlag::PeakAttentionOnly => "peak-attention",
            VariantFlag::Full => "full",
            VariantFlag::MqtLike => "mqt-like",
        }
    }
}

impl fmt::Display for VariantFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantFlag::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub past_channels: usize,
    pub static_features: usize,
    pub future_channels: usize,
    pub horizons: Vec<Horizon>,
    pub quantiles: Vec<f64>,
    pub conv_layers: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub static_width: usize,
    pub future_width: usize,
    pub agnostic_width: usize,
    pub specific_width: usize,
    pub attention_width: usize,
    pub attention_heads: usize,
}

impl ModelConfig {
    /// Scaled-down sizes that train on a desktop CPU.
    pub fn desk(horizons: Vec<Horizon>, static_features: usize, future_channels: usize) -> Self {
        ModelConfig {
            past_channels: 1,
            static_features,
            future_channels,
            horizons,
            quantiles: vec![0.5, 0.9],
            conv_layers: 6,
            conv_filters: 8,
            kernel_size: 8,
            static_width: 30,
            future_width: 16,
            agnostic_width: 32,
            specific_width: 20,
            attention_width: 16,
            attention_heads: 4,
        }
    }

    /// Full-size layer widths.
    pub fn paper_scale(horizons: Vec<Horizon>, static_features: usize, future_channels: usize) -> Self {
        ModelConfig {
            conv_filters: 30,
            kernel_size: 32,
            future_width: 50,
            agnostic_width: 100,
            attention_width: 32,
            ..Self::desk(horizons, static_features, future_channels)
        }
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << layer
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            ("past_channels", self.past_channels),
            ("future_channels", self.future_channels),
            ("conv_layers", self.conv_layers),
            ("conv_filters", self.conv_filters),
            ("kernel_size", self.kernel_size),
            ("static_width", self.static_width),
            ("future_width", self.future_width),
            ("agnostic_width", self.agnostic_width),
            ("specific_width", self.specific_width),
            ("attention_width", self.attention_width),
            ("attention_heads", self.attention_heads),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.conv_layers > 16 {
            return Err(Error::Config("model.conv_layers must be ≤ 16".into()));
        }
        if !self.attention_width.is_multiple_of(self.attention_heads) {
            return Err(Error::Config(format!(
                "attention width {} is not divisible by {} heads",
                self.attention_width, self.attention_heads
            )));
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("empty horizon set".into()));
        }
        validate_quantiles(&self.quantiles)
    }
}

pub fn validate_quantiles(q: &[f64]) -> Result<()> {
    if q.is_empty() || q.iter().any(|&v| !(v > 0.0 && v < 1.0)) || q.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "quantiles must be strictly increasing inside (0, 1), got {q:?}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Mlp {
    hidden: Dense,
    out: Dense,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    conv: Vec<Dense>,
    static_enc: Option<Mlp>,
    future: Dense,
    agnostic: Dense,
    specific: Vec<Mlp>,
    attention: Option<AttentionLayout>,
}

#[derive(Clone, Debug, PartialEq)]
struct AttentionLayout {
    query: Mlp,
    key: Mlp,
    value: Mlp,
    delta: Mlp,
}

struct Init {
    rng: ChaCha8Rng,
    params: Vec<Param>,
}

impl Init {
    fn push(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    /// Uniform in `±1/√fan_in`.
    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        let t = Tensor::new(shape, data).expect("positive init shape");
        self.push(name, t)
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let weight = self.weight(format!("{name}.weight"), vec![fan_in, fan_out], fan_in);
        let bias = self.push(format!("{name}.bias"), Tensor::zeros([fan_out]));
        Dense { weight, bias }
    }

    fn mlp(&mut self, name: &str, fan_in: usize, hidden: usize, fan_out: usize) -> Mlp {
        Mlp {
            hidden: self.dense(&format!("{name}.hidden"), fan_in, hidden),
            out: self.dense(&format!("{name}.out"), hidden, fan_out),
        }
    }
}

/// Model inputs derived from one series.
#[derive(Clone, Debug)]
pub struct ModelInput {
    /// `[P×T]`, divided by `scale`.
    pub past: Tensor,
    pub static_features: Vec<f64>,
    /// One `[T×F]` matrix per horizon.
    pub future: Vec<Tensor>,
    /// `[T×F]` covariates read at each period itself.
    pub period_covariates: Tensor,
    pub mask: PeakMask,
    pub scale: f64,
}

impl ModelInput {
    /// Builds inputs with the series scaled by its mean demand over the first
    /// `scale_periods` periods (1 when that mean is zero).
    pub fn from_record(record: &SeriesRecord, horizons: &[Horizon], scale_periods: usize) -> Result<Self> {
        let t_len = record.len();
        if t_len == 0 {
            return Err(Error::Data(format!("series `{}` is empty", record.series_id)));
        }
        let n = scale_periods.clamp(1, t_len);
        let mean = record.demand[..n].iter().sum::<f64>() / n as f64;
        let scale = if mean > 0.0 { mean } else { 1.0 };
        let mut past = record.past();
        past.data_mut().iter_mut().for_each(|v| *v /= scale);
        let future_all = record.future(horizons);
        let f_len = record.future_channels();
        let h_len = horizons.len();
        let future = (0..h_len)
            .map(|h| {
                let mut m = vec![0.0; t_len * f_len];
                for t in 0..t_len {
                    for c in 0..f_len {
                        m[t * f_len + c] = future_all.data()[(c * t_len + t) * h_len + h];
                    }
                }
                Tensor::new([t_len, f_len], m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelInput {
            past,
            static_features: record.static_features.clone(),
            future,
            period_covariates: record.period_covariates(),
            mask: build_peak_mask(record, horizons)?,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.past.dims2().1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handles into the graph built by [`SpadeModel::build`].
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// Parameter leaves in [`SpadeModel::params`] order.
    pub params: Vec<Var>,
    /// `e^(p)`, `[C×T]`.
    pub embedding: Var,
    /// Per-horizon `[T×Q]` baseline in scaled units.
    pub baseline: Vec<Var>,
    /// Per-horizon `[T×Q]` correction in scaled units, when the variant has one.
    pub delta: Option<Vec<Var>>,
    /// Attention values for every history position, `[T×A]`.
    pub values: Option<Var>,
    /// Per-horizon `[T×Q]` predictions in demand units (unsorted quantiles).
    pub predictions: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpadeModel {
    config: ModelConfig,
    variant: VariantFlag,
    params: Vec<Param>,
    layout: Layout,
}

impl SpadeModel {
    /// Randomly initialised model. Shared components are drawn first, so two
    /// variants built from the same seed start from identical shared weights.
    pub fn new(config: ModelConfig, variant: VariantFlag, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
        };
        let c = &config;
        let mut conv = Vec::with_capacity(c.conv_layers);
        for l in 0..c.conv_layers {
            let cin = if l == 0 { c.past_channels } else { c.conv_filters };
            let weight = init.weight(
                format!("conv.{l}.kernel"),
                vec![c.conv_filters, cin, c.kernel_size],
                cin * c.kernel_size,
            );
            let bias = init.push(format!("conv.{l}.bias"), Tensor::zeros([c.conv_filters]));
            conv.push(Dense { weight, bias });
        }
        let static_enc =
            (c.static_features > 0).then(|| init.mlp("static", c.static_features, c.static_width, c.static_width));
        let static_out = if c.static_features > 0 { c.static_width } else { 0 };
        let future = init.dense("future", c.future_channels, c.future_width);
        let agnostic = init.dense("agnostic", c.conv_filters + static_out, c.agnostic_width);
        let specific = (0..c.horizons.len())
            .map(|h| {
                init.mlp(
                    &format!("specific.{h}"),
                    c.agnostic_width + c.future_width,
                    c.specific_width,
                    c.quantiles.len(),
                )
            })
            .collect();
        let attention = variant.attention().then(|| {
            let a = c.attention_width;
            let kv_in = c.conv_filters + 2 * c.past_channels + c.future_channels;
            AttentionLayout {
                query: init.mlp("attention.query", c.conv_filters + c.future_channels, a, a),
                key: init.mlp("attention.key", kv_in, a, a),
                value: init.mlp("attention.value", kv_in, a, a),
                delta: init.mlp("attention.delta", a, a, c.quantiles.len()),
            }
        });
        Ok(SpadeModel {
            config,
            variant,
            params: init.params,
            layout: Layout {
                conv,
                static_enc,
                future,
                agnostic,
                specific,
                attention,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> VariantFlag {
        self.variant
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Zeroes the output layer of the peak attention correction so that it
    /// contributes nothing until trained.
    pub fn zero_delta_path(&mut self) {
        if let Some(a) = &self.layout.attention {
            for idx in [a.delta.out.weight, a.delta.out.bias] {
                self.params[idx].value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        let c = &self.config;
        let (p, t) = input.past.dims2();
        if p != c.past_channels {
            return Err(Error::shape("model past channels", &[c.past_channels], &[p]));
        }
        if input.static_features.len() != c.static_features {
            return Err(Error::shape(
                "model static features",
                &[c.static_features],
                &[input.static_features.len()],
            ));
        }
        if input.future.len() != c.horizons.len() {
            return Err(Error::shape(
                "model horizons",
                &[c.horizons.len()],
                &[input.future.len()],
            ));
        }
        for f in input.future.iter().chain(std::iter::once(&input.period_covariates)) {
            if f.shape() != [t, c.future_channels] {
                return Err(Error::shape(
                    "model future covariates",
                    &[t, c.future_channels],
                    f.shape(),
                ));
            }
        }
        if input.mask.history.len() != t || input.mask.horizon.shape() != [t, c.horizons.len()] {
            return Err(Error::shape(
                "model peak mask",
                &[t, c.horizons.len()],
                input.mask.horizon.shape(),
            ));
        }
        Ok(())
    }

    /// Records the full forward pass for `input` on `g`.
    pub fn build(&self, g: &mut Graph, input: &ModelInput) -> Result<ForwardNodes> {
        self.check_input(input)?;
        let params: Vec<Var> = self.params.iter().map(|p| g.param(p.value.clone())).collect();
        let t_len = input.len();

        let encoder_in = if self.variant.masked_conv() {
            forward_fill(&input.past, &input.mask.history)?
        } else {
            input.past.clone()
        };
        let x = g.constant(encoder_in.clone());
        let embedding = self.encode_history(g, &params, x)?;
        let e_t = g.transpose(embedding)?;
        let e_s = self.encode_static(g, &params, &input.static_features)?;
        let e_s_rows = e_s.map(|e| g.repeat_rows(e, t_len)).transpose()?;

        let baseline = self.decode_baseline(g, &params, e_t, e_s_rows, &input.future)?;

        let (delta, values) = match &self.layout.attention {
            Some(_) => {
                let raw_t = g.constant(transpose(&input.past));
                let filt_t = g.constant(transpose(&encoder_in));
                let (d, v) = self.peak_attention(g, &params, e_t, raw_t, filt_t, input)?;
                (Some(d), Some(v))
            }
            None => (None, None),
        };

        let mut predictions = Vec::with_capacity(baseline.len());
        for (h, &b) in baseline.iter().enumerate() {
            let combined = match &delta {
                Some(d) => g.add(b, d[h])?,
                None => b,
            };
            predictions.push(g.scale(combined, input.scale));
        }
        Ok(ForwardNodes {
            params,
            embedding,
            baseline,
            delta,
            values,
            predictions,
        })
    }

    /// Stack of dilated causal convolutions over `x[P×T]`, with ReLU between
    /// layers. Returns `e^(p)` as `[C×T]`.
    pub fn encode_history(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let (p, _) = g.value(x).dims2();
        if p != self.config.past_channels {
            return Err(Error::shape("encode_history", &[self.config.past_channels], &[p]));
        }
        let mut h = x;
        for (l, layer) in self.layout.conv.iter().enumerate() {
            if l > 0 {
                h = g.relu(h);
            }
            let y = g.conv1d_causal(h, params[layer.weight], self.config.dilation(l))?;
            h = g.add_channel_bias(y, params[layer.bias])?;
        }
        Ok(h)
    }

    /// One-hidden-layer MLP over the static features; `None` when the model
    /// has no static inputs.
    pub fn encode_static(&self, g: &mut Graph, params: &[Var], features: &[f64]) -> Result<Option<Var>> {
        if features.len() != self.config.static_features {
            return Err(Error::shape(
                "encode_static",
                &[self.config.static_features],
                &[features.len()],
            ));
        }
        let Some(mlp) = &self.layout.static_enc else {
            return Ok(None);
        };
        let x = g.constant(Tensor::new([1, features.len()], features.to_vec())?);
        let h = dense(g, params, &mlp.hidden, x)?;
        let h = g.relu(h);
        Ok(Some(dense(g, params, &mlp.out, h)?))
    }

    /// Horizon-agnostic MLP over `(e^(p)_t, e^(s))`, then per-horizon heads
    /// over `(agnostic_t, future_encoder(x^(f)_{t,h}))` emitting one value per
    /// quantile. Returns `[T×Q]` per horizon.
    pub fn decode_baseline(
        &self,
        g: &mut Graph,
        params: &[Var],
        e_t: Var,
        e_s_rows: Option<Var>,
        future: &[Tensor],
    ) -> Result<Vec<Var>> {
        if future.len() != self.layout.specific.len() {
            return Err(Error::shape(
                "decode_baseline",
                &[self.layout.specific.len()],
                &[future.len()],
            ));
        }
        let inputs = match e_s_rows {
            Some(s) => g.concat_cols(&[e_t, s])?,
            None => e_t,
        };
        let agnostic = dense(g, params, &self.layout.agnostic, inputs)?;
        let agnostic = g.relu(agnostic);
        let mut out = Vec::with_capacity(future.len());
        for (head, f) in self.layout.specific.iter().zip(future) {
            let fx = g.constant(f.clone());
            let fe = dense(g, params, &self.layout.future, fx)?;
            let fe = g.relu(fe);
            let z = g.concat_cols(&[agnostic, fe])?;
            let h = dense(g, params, &head.hidden, z)?;
            let h = g.relu(h);
            out.push(dense(g, params, &head.out, h)?);
        }
        Ok(out)
    }

    /// Multi-head attention from each `(t, h)` query to the history positions
    /// `τ ≤ t` flagged as peaks, followed by an MLP whose output is zeroed
    /// wherever the horizon mask is 0. Returns per-horizon `[T×Q]` corrections
    /// and the `[T×A]` value matrix.
    fn peak_attention(
        &self,
        g: &mut Graph,
        params: &[Var],
        e_t: Var,
        raw_t: Var,
        filtered_t: Var,
        input: &ModelInput,
    ) -> Result<(Vec<Var>, Var)> {
        let layout = self.layout.attention.as_ref().expect("attention layout");
        let c = &self.config;
        let t_len = input.len();
        let heads = c.attention_heads;
        let head_dim = c.attention_width / heads;
        if head_dim * heads != c.attention_width {
            return Err(Error::Config("attention heads must divide the attention width".into()));
        }
        let unmasked = self.variant == VariantFlag::MqtLike;

        let period = g.constant(input.period_covariates.clone());
        let kv_in = g.concat_cols(&[e_t, raw_t, filtered_t, period])?;
        let keys = mlp(g, params, &layout.key, kv_in)?;
        let values = mlp(g, params, &layout.value, kv_in)?;

        let history: Vec<usize> = (0..t_len)
            .filter(|&tau| unmasked || input.mask.history[tau] == 1.0)
            .collect();

        let mut out = Vec::with_capacity(input.future.len());
        if history.is_empty() {
            for _ in &input.future {
                out.push(g.constant(Tensor::zeros([t_len, c.quantiles.len()])));
            }
            return Ok((out, values));
        }

        let k_sel = g.gather_rows(keys, &history)?;
        let v_sel = g.gather_rows(values, &history)?;
        let mut k_heads = Vec::with_capacity(heads);
        let mut v_heads = Vec::with_capacity(heads);
        for j in 0..heads {
            let k = g.slice_cols(k_sel, j * head_dim, head_dim)?;
            k_heads.push(g.transpose(k)?);
            v_heads.push(g.slice_cols(v_sel, j * head_dim, head_dim)?);
        }
        let n = history.len();
        let mut causal = vec![0.0; t_len * n];
        for t in 0..t_len {
            for (k, &tau) in history.iter().enumerate() {
                if tau <= t {
                    causal[t * n + k] = 1.0;
                }
            }
        }
        let causal = Tensor::new([t_len, n], causal)?;
        let inv_sqrt = 1.0 / (head_dim as f64).sqrt();

        for (h, fut) in input.future.iter().enumerate() {
            let fx = g.constant(fut.clone());
            let q_in = g.concat_cols(&[e_t, fx])?;
            let q = mlp(g, params, &layout.query, q_in)?;
            let mut per_head = Vec::with_capacity(heads);
            for j in 0..heads {
                let qj = g.slice_cols(q, j * head_dim, head_dim)?;
                let logits = g.matmul(qj, k_heads[j])?;
                let logits = g.scale(logits, inv_sqrt);
                let weights = g.softmax_masked(logits, &causal)?;
                per_head.push(g.matmul(weights, v_heads[j])?);
            }
            let attended = g.concat_cols(&per_head)?;
            let d = mlp(g, params, &layout.delta, attended)?;
            let gate = if unmasked {
                vec![1.0; t_len]
            } else {
                input.mask.horizon_column(h)
            };
            out.push(g.scale_rows(d, &gate)?);
        }
        Ok((out, values))
    }

    /// Forecasts for every creation time of `record` as `[T×H×Q]`, in
    /// demand units with quantiles sorted ascending per `(t, h)`.
    pub fn forecast(&self, record: &SeriesRecord, scale_periods: usize) -> Result<Tensor> {
        let input = ModelInput::from_record(record, &self.config.horizons, scale_periods)?;
        self.forecast_input(&input)
    }

    pub fn forecast_input(&self, input: &ModelInput) -> Result<Tensor> {
        let mut g = Graph::new();
        let nodes = self.build(&mut g, input)?;
        let (t_len, h_len, q_len) = (input.len(), self.config.horizons.len(), self.config.quantiles.len());
        let mut out = vec![0.0; t_len * h_len * q_len];
        for (h, &p) in nodes.predictions.iter().enumerate() {
            let v = g.value(p).data();
            for t in 0..t_len {
                let dst = &mut out[(t * h_len + h) * q_len..(t * h_len + h + 1) * q_len];
                dst.copy_from_slice(&v[t * q_len..(t + 1) * q_len]);
                dst.sort_by(f64::total_cmp);
            }
        }
        let grid = Tensor::new([t_len, h_len, q_len], out)?;
        if !grid.is_finite() {
            return Err(Error::NumericFailure("non-finite forecast".into()));
        }
        Ok(grid)
    }

    /// `e^(p)` for `past[P×T]` without recording gradients.
    pub fn embed_history(&self, past: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        let x = g.constant(past.clone());
        let e = self.encode_history(&mut g, &params, x)?;
        Ok(g.value(e).clone())
    }

    /// `e^(s)` without recording gradients.
    pub fn embed_static(&self, features: &[f64]) -> Result<Option<Tensor>> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.value.clone())).collect();
        Ok(self
            .encode_static(&mut g, &params, features)?
            .map(|v| g.value(v).clone()))
    }

    pub(crate) fn from_parts(config: ModelConfig, variant: VariantFlag, params: Vec<Param>) -> Result<Self> {
        let mut model = SpadeModel::new(config, variant, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (slot, p) in model.params.iter_mut().zip(params) {
            if slot.name != p.name || slot.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected `{}` {:?}, found `{}` {:?}",
                    slot.name,
                    slot.value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            *slot = p;
        }
        Ok(model)
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    let mut d = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            d[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new([c, r], d).expect("transpose shape")
}

fn dense(g: &mut Graph, params: &[Var], layer: &Dense, x: Var) -> Result<Var> {
    let y = g.matmul(x, params[layer.weight])?;
    g.add_row_bias(y, params[layer.bias])
}

fn mlp(g: &mut Graph, params: &[Var], m: &Mlp, x: Var) -> Result<Var> {
    let h = dense(g, params, &m.hidden, x)?;
    let h = g.relu(h);
    dense(g, params, &m.out, h)
}

/// Predicted quantiles indexed by `(series, creation time, horizon, quantile)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastGrid {
    pub quantiles: Vec<f64>,
    pub horizons: Vec<Horizon>,
    pub series: Vec<SeriesForecast>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesForecast {
    pub series_id: String,
    pub creation_times: Vec<usize>,
    /// `[n_t × H × Q]`, row-major.
    pub values: Vec<f64>,
}

impl ForecastGrid {
    pub fn value(&self, series: usize, t_index: usize, h: usize, q: usize) -> f64 {
        let (hl, ql) = (self.horizons.len(), self.quantiles.len());
        self.series[series].values[(t_index * hl + h) * ql + q]
    }

    pub fn quantile_index(&self, q: f64) -> Option<usize> {
        self.quantiles.iter().position(|&v| (v - q).abs() < 1e-12)
    }
}
