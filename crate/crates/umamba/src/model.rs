//! The full forecasting network and two naive references.
//!
//! Pipeline per window: instance-normalize the lookback, tokenize each channel
//! to the widest feature scale, walk down the scale ladder with a temporal
//! signal processor tapped at every rung, walk back up concatenating those
//! taps, map to the horizon, denormalize. Channels ride along the row axis the
//! whole way; every linear map acts on the feature axis.

use crate::autodiff::{Tape, VarId};
use crate::error::{Error, Result};
use crate::mamba::{uniform, MambaConfig};
use crate::mtsp::{init_mtsp, mtsp_apply, ChannelMode, MtspConfig, MtspParamIds, SkipPath};
use crate::params::{ParamId, ParamStore};
use crate::rng::{SeedStreams, STREAM_DROPOUT};
use crate::ssm::DiscretizeMode;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Per-channel first and second moments of one lookback window. The stored
/// std is already floored, so denormalization reuses exactly what the
/// normalization divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-5;

/// Z-score each channel of an N x L window with population std, floored at
/// 1e-5 so constant channels map to zeros instead of NaN.
pub fn revin_norm(x: &Tensor) -> (Tensor, NormStats) {
    let (n, l) = (x.rows(), x.cols());
    let mut mean = Vec::with_capacity(n);
    let mut std = Vec::with_capacity(n);
    for c in 0..n {
        let row = x.row(c);
        let mu = row.iter().sum::<f64>() / l as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / l as f64;
        mean.push(mu);
        std.push(var.sqrt().max(STD_FLOOR));
    }
    let out = Tensor::from_fn(vec![n, l], |idx| (x.data()[idx] - mean[idx / l]) / std[idx / l]);
    (out, NormStats { mean, std })
}

/// Apply stored stats to another window of the same channels (used to put the
/// target in normalized space for the loss).
pub fn revin_apply(y: &Tensor, stats: &NormStats) -> Result<Tensor> {
    check_stats(y, stats)?;
    let cols = y.cols();
    Ok(Tensor::from_fn(y.shape().to_vec(), |idx| {
        (y.data()[idx] - stats.mean[idx / cols]) / stats.std[idx / cols]
    }))
}

/// Undo the normalization on an N x T forecast: y*std + mean per channel.
pub fn revin_denorm(y: &Tensor, stats: &NormStats) -> Result<Tensor> {
    check_stats(y, stats)?;
    let cols = y.cols();
    Ok(Tensor::from_fn(y.shape().to_vec(), |idx| {
        y.data()[idx] * stats.std[idx / cols] + stats.mean[idx / cols]
    }))
}

fn check_stats(y: &Tensor, stats: &NormStats) -> Result<()> {
    if y.rows() != stats.mean.len() {
        return Err(Error::ShapeMismatch {
            op: "revin stats",
            left: y.shape().to_vec(),
            right: vec![stats.mean.len()],
        });
    }
    Ok(())
}

/// Every knob of the network. Flags mirror the documented alternatives so an
/// ablation can switch any one of them without touching code.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub lookback: usize,
    pub horizon: usize,
    /// Feature widths per scale, strictly decreasing, last at least 4.
    pub scales: Vec<usize>,
    /// Residual reconstruction layers per scale.
    pub k: usize,
    pub channel_mode: ChannelMode,
    pub dropout: f64,
    pub expand: usize,
    pub d_state: usize,
    pub conv_width: usize,
    pub use_rml: bool,
    pub use_cam: bool,
    pub use_d_skip: bool,
    pub out_bias: bool,
    pub discretize: DiscretizeMode,
    pub share_rml: bool,
    pub skip_path: SkipPath,
    pub per_channel_tokenizer: bool,
    pub extra_projection: bool,
    pub revin_affine: bool,
}

impl ModelConfig {
    pub fn new(n_channels: usize, lookback: usize, horizon: usize) -> Self {
        ModelConfig {
            n_channels,
            lookback,
            horizon,
            scales: vec![256, 128, 64],
            k: 3,
            channel_mode: ChannelMode::Integration,
            dropout: 0.1,
            expand: 2,
            d_state: 16,
            conv_width: 4,
            use_rml: true,
            use_cam: true,
            use_d_skip: true,
            out_bias: true,
            discretize: DiscretizeMode::Zoh,
            share_rml: false,
            skip_path: SkipPath::Input,
            per_channel_tokenizer: false,
            extra_projection: false,
            revin_affine: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.scales.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.lookback < 2 || self.horizon == 0 {
            return Err(Error::Config(format!(
                "need channels >= 1, lookback >= 2, horizon >= 1 (got {}, {}, {})",
                self.n_channels, self.lookback, self.horizon
            )));
        }
        if self.scales.is_empty() {
            return Err(Error::Config("at least one scale width is required".into()));
        }
        if !self.scales.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Config(format!(
                "scale widths must strictly decrease, got {:?}",
                self.scales
            )));
        }
        if *self.scales.last().unwrap() < 4 {
            return Err(Error::Config(format!(
                "smallest scale width must be at least 4, got {}",
                self.scales.last().unwrap()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.use_rml && self.k == 0 {
            return Err(Error::Config("residual layer count K must be at least 1".into()));
        }
        if self.scales[0] <= self.lookback {
            log::warn!(
                "widest scale {} does not exceed the lookback {}; tokenization will compress",
                self.scales[0],
                self.lookback
            );
        }
        self.rml_block_cfg().validate()?;
        for i in 0..self.depth() {
            self.cam_block_cfg(i).validate()?;
        }
        Ok(())
    }

    /// Width-1 block used by the residual layers (channels are batch items).
    pub fn rml_block_cfg(&self) -> MambaConfig {
        MambaConfig {
            d_model: 1,
            expand: self.expand,
            d_state: self.d_state,
            conv_width: self.conv_width,
            use_d_skip: self.use_d_skip,
            out_bias: self.out_bias,
            discretize: self.discretize,
        }
    }

    /// Channel-path block at scale index i; its token width follows the mode.
    pub fn cam_block_cfg(&self, scale_idx: usize) -> MambaConfig {
        MambaConfig {
            d_model: self.channel_mode.token_width(self.n_channels, self.scales[scale_idx]),
            ..self.rml_block_cfg()
        }
    }

    fn mtsp_cfg(&self) -> MtspConfig {
        MtspConfig {
            k: self.k,
            mode: self.channel_mode,
            use_rml: self.use_rml,
            use_cam: self.use_cam,
            share_rml: self.share_rml,
            skip_path: self.skip_path,
        }
    }

    /// Rebuild a config from checkpoint header pairs (inverse of the umamba
    /// [`Forecaster::header_lines`]).
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing header key {key}")))
        };
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Checkpoint(format!("bad header value {key}={v}")))
        }
        let scales = get("scales")?
            .split(',')
            .map(|s| num::<usize>("scales", s))
            .collect::<Result<Vec<_>>>()?;
        let discretize = match get("discretize")? {
            "zoh" => DiscretizeMode::Zoh,
            "euler" => DiscretizeMode::Euler,
            other => {
                return Err(Error::Checkpoint(format!("bad header value discretize={other}")))
            }
        };
        let cfg = ModelConfig {
            n_channels: num("n_channels", get("n_channels")?)?,
            lookback: num("lookback", get("lookback")?)?,
            horizon: num("horizon", get("horizon")?)?,
            scales,
            k: num("k", get("k")?)?,
            channel_mode: ChannelMode::parse(get("channel_mode")?)?,
            dropout: num("dropout", get("dropout")?)?,
            expand: num("expand", get("expand")?)?,
            d_state: num("d_state", get("d_state")?)?,
            conv_width: num("conv_width", get("conv_width")?)?,
            use_rml: num("use_rml", get("use_rml")?)?,
            use_cam: num("use_cam", get("use_cam")?)?,
            use_d_skip: num("use_d_skip", get("use_d_skip")?)?,
            out_bias: num("out_bias", get("out_bias")?)?,
            discretize,
            share_rml: num("share_rml", get("share_rml")?)?,
            skip_path: SkipPath::parse(get("skip_path")?)?,
            per_channel_tokenizer: num("per_channel_tokenizer", get("per_channel_tokenizer")?)?,
            extra_projection: num("extra_projection", get("extra_projection")?)?,
            revin_affine: num("revin_affine", get("revin_affine")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
enum TokenizerIds {
    Shared { w: ParamId, b: ParamId },
    PerChannel(Vec<(ParamId, ParamId)>),
}

#[derive(Debug, Clone)]
struct ModelParamIds {
    tokenizer: TokenizerIds,
    encoder: Vec<(ParamId, ParamId)>,
    mtsp: Vec<MtspParamIds>,
    decoder: Vec<(ParamId, ParamId)>,
    extra: Option<(ParamId, ParamId)>,
    revin: Option<(ParamId, ParamId)>,
}

/// Tape ids of every intermediate the forward pass produced, from widest
/// encoder feature to the final horizon map. Kept for shape tracing in tests.
pub struct ScaleFeatures {
    /// Encoder features per scale (index 0 is the tokenizer output).
    pub x: Vec<VarId>,
    /// Processor outputs tapped at each scale.
    pub xm: Vec<VarId>,
    /// Decoder features, starting from the deepest tap.
    pub xp: Vec<VarId>,
    /// Concatenations feeding each up-projection.
    pub cat: Vec<VarId>,
}

pub struct UmambaModel {
    cfg: ModelConfig,
    store: ParamStore,
    ids: ModelParamIds,
}

impl UmambaModel {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let n = cfg.depth();
        let l = cfg.lookback;
        let m1 = cfg.scales[0];

        let tokenizer = if cfg.per_channel_tokenizer {
            let mut per = Vec::with_capacity(cfg.n_channels);
            for c in 0..cfg.n_channels {
                let bound = 1.0 / (l as f64).sqrt();
                let w = store.register(format!("tokenizer.ch{c}.w"), uniform(vec![l, m1], bound, rng));
                let b = store.register(format!("tokenizer.ch{c}.b"), Tensor::zeros(vec![m1]));
                per.push((w, b));
            }
            TokenizerIds::PerChannel(per)
        } else {
            let bound = 1.0 / (l as f64).sqrt();
            let w = store.register("tokenizer.w", uniform(vec![l, m1], bound, rng));
            let b = store.register("tokenizer.b", Tensor::zeros(vec![m1]));
            TokenizerIds::Shared { w, b }
        };

        let mut encoder = Vec::new();
        for i in 1..n {
            let (from, to) = (cfg.scales[i - 1], cfg.scales[i]);
            let bound = 1.0 / (from as f64).sqrt();
            let w = store.register(format!("encoder{}.w", i + 1), uniform(vec![from, to], bound, rng));
            let b = store.register(format!("encoder{}.b", i + 1), Tensor::zeros(vec![to]));
            encoder.push((w, b));
        }

        let mut mtsp = Vec::new();
        let mtsp_cfg = cfg.mtsp_cfg();
        let rml_cfg = cfg.rml_block_cfg();
        for i in 0..n {
            let cam_cfg = cfg.cam_block_cfg(i);
            mtsp.push(init_mtsp(&mtsp_cfg, &rml_cfg, &cam_cfg, &mut store, &format!("scale{}", i + 1), rng)?);
        }

        let mut decoder = Vec::new();
        if n == 1 {
            // lone scale: the tap is concatenated with itself so the final
            // map keeps its doubled input width
            let from = 2 * cfg.scales[0];
            let bound = 1.0 / (from as f64).sqrt();
            let w = store.register("decoder1.w", uniform(vec![from, cfg.horizon], bound, rng));
            let b = store.register("decoder1.b", Tensor::zeros(vec![cfg.horizon]));
            decoder.push((w, b));
        } else {
            let (from, to) = (cfg.scales[n - 1], cfg.scales[n - 2]);
            let bound = 1.0 / (from as f64).sqrt();
            let w = store.register("decoder1.w", uniform(vec![from, to], bound, rng));
            let b = store.register("decoder1.b", Tensor::zeros(vec![to]));
            decoder.push((w, b));
            for j in 1..n {
                let from = 2 * cfg.scales[n - 1 - j];
                let to = if j == n - 1 { cfg.horizon } else { cfg.scales[n - 2 - j] };
                let bound = 1.0 / (from as f64).sqrt();
                let w = store.register(format!("decoder{}.w", j + 1), uniform(vec![from, to], bound, rng));
                let b = store.register(format!("decoder{}.b", j + 1), Tensor::zeros(vec![to]));
                decoder.push((w, b));
            }
        }

        let extra = if cfg.extra_projection {
            let t = cfg.horizon;
            let bound = 1.0 / (t as f64).sqrt();
            let w = store.register("extra.w", uniform(vec![t, t], bound, rng));
            let b = store.register("extra.b", Tensor::zeros(vec![t]));
            Some((w, b))
        } else {
            None
        };

        let revin = if cfg.revin_affine {
            let g = store.register("revin.gamma", Tensor::full(vec![cfg.n_channels], 1.0));
            let b = store.register("revin.beta", Tensor::zeros(vec![cfg.n_channels]));
            Some((g, b))
        } else {
            None
        };

        let ids = ModelParamIds { tokenizer, encoder, mtsp, decoder, extra, revin };
        Ok(UmambaModel { cfg, store, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn linear(tape: &mut Tape, x: VarId, leaves: &[VarId], w: ParamId, b: ParamId) -> Result<VarId> {
        let y = tape.matmul(x, leaves[w])?;
        tape.add_bias(y, leaves[b])
    }

    /// Full normalized-space forward: N x L in, N x T out, plus every
    /// intermediate. `rng` feeds dropout masks and is untouched in eval mode.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &[VarId],
        x_norm: VarId,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(VarId, ScaleFeatures)> {
        let cfg = &self.cfg;
        let n = cfg.depth();

        let mut cur = x_norm;
        if let Some((g, b)) = self.ids.revin {
            let t = tape.transpose(cur);
            let t = tape.mul_cols(t, leaves[g])?;
            let t = tape.add_bias(t, leaves[b])?;
            cur = tape.transpose(t);
        }

        let tokens = match &self.ids.tokenizer {
            TokenizerIds::Shared { w, b } => Self::linear(tape, cur, leaves, *w, *b)?,
            TokenizerIds::PerChannel(per) => {
                let xt = tape.transpose(cur); // L x N
                let mut rows = Vec::with_capacity(per.len());
                for (c, (w, b)) in per.iter().enumerate() {
                    let col = tape.slice_cols(xt, c, 1)?; // L x 1
                    let row = tape.transpose(col); // 1 x L
                    rows.push(Self::linear(tape, row, leaves, *w, *b)?);
                }
                // reassemble channels along rows: transpose each 1 x M row to
                // a column, concatenate, transpose back
                let cols: Vec<VarId> = rows.into_iter().map(|r| tape.transpose(r)).collect();
                let cat = tape.concat_cols(&cols)?; // M x N
                tape.transpose(cat)
            }
        };
        let tokens = tape.dropout(tokens, cfg.dropout, training, rng)?;

        let mut x_feats = vec![tokens];
        for (w, b) in &self.ids.encoder {
            let prev = *x_feats.last().unwrap();
            let next = Self::linear(tape, prev, leaves, *w, *b)?;
            let next = tape.dropout(next, cfg.dropout, training, rng)?;
            x_feats.push(next);
        }

        let mtsp_cfg = cfg.mtsp_cfg();
        let rml_cfg = cfg.rml_block_cfg();
        let mut xm = Vec::with_capacity(n);
        for i in 0..n {
            let cam_cfg = cfg.cam_block_cfg(i);
            xm.push(mtsp_apply(tape, &mtsp_cfg, &rml_cfg, &cam_cfg, &self.ids.mtsp[i], leaves, x_feats[i])?);
        }

        let mut xp = vec![xm[n - 1]];
        let mut cats = Vec::new();
        let out = if n == 1 {
            let cat = tape.concat_cols(&[xm[0], xm[0]])?;
            cats.push(cat);
            let (w, b) = self.ids.decoder[0];
            let y = Self::linear(tape, cat, leaves, w, b)?;
            xp.push(y);
            y
        } else {
            let (w0, b0) = self.ids.decoder[0];
            let mut curd = Self::linear(tape, xm[n - 1], leaves, w0, b0)?;
            xp.push(curd);
            for j in 1..n {
                let cat = tape.concat_cols(&[curd, xm[n - 1 - j]])?;
                cats.push(cat);
                let (w, b) = self.ids.decoder[j];
                curd = Self::linear(tape, cat, leaves, w, b)?;
                xp.push(curd);
            }
            curd
        };

        let out = match self.ids.extra {
            Some((w, b)) => Self::linear(tape, out, leaves, w, b)?,
            None => out,
        };

        Ok((out, ScaleFeatures { x: x_feats, xm, xp, cat: cats }))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.cfg.n_channels, self.cfg.lookback] {
            return Err(Error::ShapeMismatch {
                op: "forecast input",
                left: x.shape().to_vec(),
                right: vec![self.cfg.n_channels, self.cfg.lookback],
            });
        }
        let l = self.cfg.lookback;
        for (idx, v) in x.data().iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite input value {v} at channel {}, position {}",
                    idx / l,
                    idx % l
                )));
            }
        }
        Ok(())
    }
}

fn check_window(x: &Tensor, y: &Tensor, n: usize, l: usize, t: usize) -> Result<()> {
    if x.shape() != [n, l] {
        return Err(Error::ShapeMismatch { op: "loss input", left: x.shape().to_vec(), right: vec![n, l] });
    }
    if y.shape() != [n, t] {
        return Err(Error::ShapeMismatch { op: "loss target", left: y.shape().to_vec(), right: vec![n, t] });
    }
    Ok(())
}

/// Anything the training loop can fit and the evaluator can score.
pub trait Forecaster {
    fn n_channels(&self) -> usize;
    fn lookback(&self) -> usize;
    fn horizon(&self) -> usize;
    fn kind(&self) -> &'static str;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Key/value lines describing the architecture, stored in checkpoints.
    fn header_lines(&self) -> Vec<(String, String)>;
    /// Build the normalized-space squared-error loss for one window.
    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &[VarId],
        x: &Tensor,
        y: &Tensor,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<VarId>;
    /// Raw-space forecast for one window (evaluation mode).
    fn forecast(&self, x: &Tensor) -> Result<Tensor>;
}

impl<T: Forecaster + ?Sized> Forecaster for Box<T> {
    fn n_channels(&self) -> usize {
        (**self).n_channels()
    }
    fn lookback(&self) -> usize {
        (**self).lookback()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn kind(&self) -> &'static str {
        (**self).kind()
    }
    fn params(&self) -> &ParamStore {
        (**self).params()
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        (**self).params_mut()
    }
    fn header_lines(&self) -> Vec<(String, String)> {
        (**self).header_lines()
    }
    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &[VarId],
        x: &Tensor,
        y: &Tensor,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<VarId> {
        (**self).loss_on_tape(tape, leaves, x, y, training, rng)
    }
    fn forecast(&self, x: &Tensor) -> Result<Tensor> {
        (**self).forecast(x)
    }
}

impl Forecaster for UmambaModel {
    fn n_channels(&self) -> usize {
        self.cfg.n_channels
    }
    fn lookback(&self) -> usize {
        self.cfg.lookback
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn kind(&self) -> &'static str {
        "umamba"
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn header_lines(&self) -> Vec<(String, String)> {
        let c = &self.cfg;
        vec![
            ("kind".into(), "umamba".into()),
            ("n_channels".into(), c.n_channels.to_string()),
            ("lookback".into(), c.lookback.to_string()),
            ("horizon".into(), c.horizon.to_string()),
            (
                "scales".into(),
                c.scales.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("k".into(), c.k.to_string()),
            ("channel_mode".into(), c.channel_mode.name().into()),
            ("dropout".into(), c.dropout.to_string()),
            ("expand".into(), c.expand.to_string()),
            ("d_state".into(), c.d_state.to_string()),
            ("conv_width".into(), c.conv_width.to_string()),
            ("use_rml".into(), c.use_rml.to_string()),
            ("use_cam".into(), c.use_cam.to_string()),
            ("use_d_skip".into(), c.use_d_skip.to_string()),
            ("out_bias".into(), c.out_bias.to_string()),
            (
                "discretize".into(),
                match c.discretize {
                    DiscretizeMode::Zoh => "zoh".into(),
                    DiscretizeMode::Euler => "euler".into(),
                },
            ),
            ("share_rml".into(), c.share_rml.to_string()),
            ("skip_path".into(), c.skip_path.name().into()),
            ("per_channel_tokenizer".into(), c.per_channel_tokenizer.to_string()),
            ("extra_projection".into(), c.extra_projection.to_string()),
            ("revin_affine".into(), c.revin_affine.to_string()),
        ]
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &[VarId],
        x: &Tensor,
        y: &Tensor,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<VarId> {
        check_window(x, y, self.cfg.n_channels, self.cfg.lookback, self.cfg.horizon)?;
        let (x_norm, stats) = revin_norm(x);
        let y_norm = revin_apply(y, &stats)?;
        let xi = tape.constant(x_norm);
        let (pred, _) = self.forward_on_tape(tape, leaves, xi, training, rng)?;
        tape.mean_sq_diff(pred, &y_norm)
    }

    fn forecast(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (x_norm, stats) = revin_norm(x);
        let mut tape = Tape::new_no_grad();
        let leaves = self.store.leaves_on(&mut tape);
        let xi = tape.constant(x_norm);
        let mut dummy = SeedStreams::new(0).stream(STREAM_DROPOUT);
        let (pred, _) = self.forward_on_tape(&mut tape, &leaves, xi, false, &mut dummy)?;
        revin_denorm(tape.value(pred), &stats)
    }
}

/// One shared lookback-to-horizon linear map on the normalized window.
pub struct LinearModel {
    n_channels: usize,
    lookback: usize,
    horizon: usize,
    store: ParamStore,
    w: ParamId,
    b: ParamId,
}

impl LinearModel {
    pub fn new(n_channels: usize, lookback: usize, horizon: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let bound = 1.0 / (lookback as f64).sqrt();
        let w = store.register("linear.w", uniform(vec![lookback, horizon], bound, rng));
        let b = store.register("linear.b", Tensor::zeros(vec![horizon]));
        LinearModel { n_channels, lookback, horizon, store, w, b }
    }
}

impl Forecaster for LinearModel {
    fn n_channels(&self) -> usize {
        self.n_channels
    }
    fn lookback(&self) -> usize {
        self.lookback
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn kind(&self) -> &'static str {
        "linear"
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn header_lines(&self) -> Vec<(String, String)> {
        vec![
            ("kind".into(), "linear".into()),
            ("n_channels".into(), self.n_channels.to_string()),
            ("lookback".into(), self.lookback.to_string()),
            ("horizon".into(), self.horizon.to_string()),
        ]
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &[VarId],
        x: &Tensor,
        y: &Tensor,
        _training: bool,
        _rng: &mut ChaCha8Rng,
    ) -> Result<VarId> {
        check_window(x, y, self.n_channels, self.lookback, self.horizon)?;
        let (x_norm, stats) = revin_norm(x);
        let y_norm = revin_apply(y, &stats)?;
        let xi = tape.constant(x_norm);
        let h = tape.matmul(xi, leaves[self.w])?;
        let pred = tape.add_bias(h, leaves[self.b])?;
        tape.mean_sq_diff(pred, &y_norm)
    }

    fn forecast(&self, x: &Tensor) -> Result<Tensor> {
        let (x_norm, stats) = revin_norm(x);
        let pred = x_norm.matmul(self.store.get(self.w))?;
        let bias = self.store.get(self.b);
        let t = self.horizon;
        let with_bias =
            Tensor::from_fn(pred.shape().to_vec(), |idx| pred.data()[idx] + bias.data()[idx % t]);
        revin_denorm(&with_bias, &stats)
    }
}

/// Holds the last observed value flat across the horizon. No parameters.
pub struct RepeatLast {
    n_channels: usize,
    lookback: usize,
    horizon: usize,
    store: ParamStore,
}

impl RepeatLast {
    pub fn new(n_channels: usize, lookback: usize, horizon: usize) -> Self {
        RepeatLast { n_channels, lookback, horizon, store: ParamStore::new() }
    }
}

impl Forecaster for RepeatLast {
    fn n_channels(&self) -> usize {
        self.n_channels
    }
    fn lookback(&self) -> usize {
        self.lookback
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn kind(&self) -> &'static str {
        "repeat_last"
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn header_lines(&self) -> Vec<(String, String)> {
        vec![
            ("kind".into(), "repeat_last".into()),
            ("n_channels".into(), self.n_channels.to_string()),
            ("lookback".into(), self.lookback.to_string()),
            ("horizon".into(), self.horizon.to_string()),
        ]
    }

    fn loss_on_tape(
        &self,
        tape: &mut Tape,
        _leaves: &[VarId],
        x: &Tensor,
        y: &Tensor,
        _training: bool,
        _rng: &mut ChaCha8Rng,
    ) -> Result<VarId> {
        check_window(x, y, self.n_channels, self.lookback, self.horizon)?;
        let pred = tape.constant(self.forecast(x)?);
        tape.mean_sq_diff(pred, y)
    }

    fn forecast(&self, x: &Tensor) -> Result<Tensor> {
        let l = self.lookback;
        Ok(Tensor::from_fn(vec![self.n_channels, self.horizon], |idx| {
            x.data()[(idx / self.horizon) * l + (l - 1)]
        }))
    }
}
