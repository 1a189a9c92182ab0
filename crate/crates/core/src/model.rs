//! The recognition network (per-modality CNN branches, post-CNN fusion,
//! windowed self-attention, dilated convolutions, dense softmax) and the
//! CNN-only authentication variant.

use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{SignalSource, WindowInstance, N_CHANNELS, SAMPLING_RATE_HZ, WINDOW_LEN};
use crate::nn::{self, ops, Bound, Checkpoint, ForwardCtx, LayerSpec, NnError, Padding, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Activity classification with the full attention head.
    Recognition,
    /// Subject classification with CNN branches and a dense classifier only.
    Authentication,
}

/// Architecture constants. The defaults follow the published network; the
/// widths are fields so tests can build small variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub source: SignalSource,
    pub sampling_rate: usize,
    pub window_len: usize,
    pub n_classes: usize,
    pub conv1_maps: usize,
    pub depth_multiplier: usize,
    pub conv3_maps: usize,
    pub conv3_kernel: usize,
    pub pool: usize,
    pub dropout: f64,
    pub attention_windows: usize,
    pub heads: usize,
    pub dilated_layers: usize,
    pub dilated_filters: usize,
    pub dilated_kernel: usize,
    pub dilation: usize,
    /// One attention/dilated block shared by all windows, or one per window.
    pub share_window_weights: bool,
}

impl ModelConfig {
    pub fn recognition(source: SignalSource) -> Self {
        Self {
            task: Task::Recognition,
            source,
            sampling_rate: SAMPLING_RATE_HZ,
            window_len: WINDOW_LEN,
            n_classes: crate::dataio::ActivityLabel::COUNT,
            conv1_maps: 32,
            depth_multiplier: 2,
            conv3_maps: 128,
            conv3_kernel: 10,
            pool: 2,
            dropout: 0.1,
            attention_windows: 4,
            heads: 4,
            dilated_layers: 2,
            dilated_filters: 32,
            dilated_kernel: 3,
            dilation: 2,
            share_window_weights: true,
        }
    }

    pub fn authentication(source: SignalSource) -> Self {
        Self { task: Task::Authentication, n_classes: 10, ..Self::recognition(source) }
    }

    pub fn conv1_kernel(&self) -> usize {
        self.sampling_rate / 2
    }

    /// Sequence length after the two pools.
    pub fn feature_len(&self) -> usize {
        self.window_len / (self.pool * self.pool)
    }

    /// Feature width entering the head.
    pub fn model_dim(&self) -> usize {
        self.conv3_maps * self.branch_sources().len()
    }

    fn branch_sources(&self) -> Vec<SignalSource> {
        match self.source {
            SignalSource::Combined => vec![SignalSource::Hbc, SignalSource::Imu],
            s => vec![s],
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::Config(m));
        if self.sampling_rate == 0 || self.sampling_rate % 2 != 0 {
            return bad(format!("sampling rate {} must be even", self.sampling_rate));
        }
        let positive = [
            self.n_classes,
            self.conv1_maps,
            self.depth_multiplier,
            self.conv3_maps,
            self.conv3_kernel,
            self.pool,
            self.attention_windows,
            self.heads,
            self.dilated_filters,
            self.dilated_kernel,
            self.dilation,
        ];
        if positive.contains(&0) {
            return bad("architecture sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.window_len % (self.pool * self.pool) != 0 || self.feature_len() == 0 {
            return bad(format!("window length {} not divisible by the pooling", self.window_len));
        }
        if self.task == Task::Recognition {
            if self.feature_len() % self.attention_windows != 0 {
                return bad(format!(
                    "feature length {} not divisible into {} attention windows",
                    self.feature_len(),
                    self.attention_windows
                ));
            }
            if self.model_dim() % self.heads != 0 {
                return bad(format!("model dim {} not divisible by {} heads", self.model_dim(), self.heads));
            }
        }
        Ok(())
    }
}

/// Layer pipeline of one modality branch: `[b, 1, C, L] → [b, conv3_maps, 1, L/4]`.
pub fn build_cnn_branch(cfg: &ModelConfig, n_channels: usize) -> Result<Vec<LayerSpec>, NnError> {
    if n_channels != 1 && n_channels != 6 {
        return Err(NnError::Config(format!("CNN branch needs 1 or 6 channels, got {n_channels}")));
    }
    let norm = || LayerSpec::LayerNorm { axes: vec![1, 2] };
    let pool = LayerSpec::AvgPool2d { pool: (1, cfg.pool) };
    let drop = LayerSpec::Dropout { rate: cfg.dropout };
    Ok(vec![
        LayerSpec::Conv2d { out_maps: cfg.conv1_maps, kernel: (1, cfg.conv1_kernel()), padding: Padding::Same },
        norm(),
        LayerSpec::Elu,
        LayerSpec::DepthwiseConv2d { kernel: (n_channels, 1), depth_multiplier: cfg.depth_multiplier },
        norm(),
        LayerSpec::Elu,
        pool.clone(),
        drop.clone(),
        LayerSpec::Conv2d { out_maps: cfg.conv3_maps, kernel: (1, cfg.conv3_kernel), padding: Padding::Same },
        norm(),
        LayerSpec::Elu,
        pool,
        drop,
    ])
}

/// One modality branch with its input channel range (within the 7-channel window).
#[derive(Clone, Debug)]
pub struct Branch {
    pub name: &'static str,
    pub channels: Range<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Network structure derived from a [`ModelConfig`]. Holds no weights.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub branches: Vec<Branch>,
    attention: LayerSpec,
    dilated: Vec<LayerSpec>,
    dense: LayerSpec,
}

/// Model inputs for one mini-batch, one `[b, 1, C, L]` tensor per branch.
pub struct Batch {
    pub inputs: Vec<Tensor>,
    pub size: usize,
}

impl Network {
    pub fn build(config: &ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let branches = config
            .branch_sources()
            .into_iter()
            .map(|s| {
                let channels = WindowInstance::source_channels(s);
                Ok(Branch { name: s.as_str(), layers: build_cnn_branch(config, channels.len())?, channels })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        let dilated = (0..config.dilated_layers)
            .map(|_| LayerSpec::DilatedConv1d {
                filters: config.dilated_filters,
                kernel: config.dilated_kernel,
                dilation: config.dilation,
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            branches,
            attention: LayerSpec::MultiHeadSelfAttention { heads: config.heads, model_dim: config.model_dim() },
            dilated,
            dense: LayerSpec::Dense { out_dim: config.n_classes },
        })
    }

    fn head_prefixes(&self) -> Vec<String> {
        if self.config.share_window_weights {
            vec!["head".to_string()]
        } else {
            (0..self.config.attention_windows).map(|k| format!("head.w{k}")).collect()
        }
    }

    /// Parameter names and shapes, in initialization order.
    pub fn param_layout(&self) -> Result<Vec<(String, nn::ParamSpec)>, NnError> {
        let cfg = &self.config;
        let mut out = Vec::new();
        for br in &self.branches {
            let mut shape = vec![1, 1, br.channels.len(), cfg.window_len];
            for (i, layer) in br.layers.iter().enumerate() {
                for p in layer.param_specs(&shape)? {
                    out.push((format!("{}.{i}.{}", br.name, p.name), p));
                }
                shape = layer.output_shape(&shape)?;
            }
        }
        let (t, d) = (cfg.feature_len(), cfg.model_dim());
        let dense_in = match cfg.task {
            Task::Recognition => {
                let tw = t / cfg.attention_windows;
                for prefix in self.head_prefixes() {
                    let mut shape = vec![1, tw, d];
                    for p in self.attention.param_specs(&shape)? {
                        out.push((format!("{prefix}.attn.{}", p.name), p));
                    }
                    for (j, layer) in self.dilated.iter().enumerate() {
                        for p in layer.param_specs(&shape)? {
                            out.push((format!("{prefix}.dil{j}.{}", p.name), p));
                        }
                        shape = layer.output_shape(&shape)?;
                    }
                }
                t * self.head_width()
            }
            Task::Authentication => t * d,
        };
        for p in self.dense.param_specs(&[1, dense_in])? {
            out.push((format!("head.dense.{}", p.name), p));
        }
        Ok(out)
    }

    fn head_width(&self) -> usize {
        if self.dilated.is_empty() {
            self.config.model_dim()
        } else {
            self.config.dilated_filters
        }
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, p) in self.param_layout()? {
            store.init(name, &p.shape, p.init, &mut rng);
        }
        Ok(store)
    }

    pub fn param_count(&self) -> Result<usize, NnError> {
        Ok(self.param_layout()?.iter().map(|(_, p)| p.shape.iter().product::<usize>()).sum())
    }

    /// Builds branch inputs from standardized `[7 × L]` windows.
    pub fn batch(&self, windows: &[&[f64]]) -> Result<Batch, NnError> {
        let l = self.config.window_len;
        if let Some(w) = windows.iter().find(|w| w.len() != N_CHANNELS * l) {
            return Err(NnError::Shape { op: "batch".into(), detail: format!("window of {} values, expected {}", w.len(), N_CHANNELS * l) });
        }
        let b = windows.len();
        let inputs = self
            .branches
            .iter()
            .map(|br| {
                let mut data = Vec::with_capacity(b * br.channels.len() * l);
                for w in windows {
                    data.extend_from_slice(&w[br.channels.start * l..br.channels.end * l]);
                }
                Tensor::new(data, &[b, 1, br.channels.len(), l])
            })
            .collect::<Result<_, _>>()?;
        Ok(Batch { inputs, size: b })
    }

    /// Fused CNN feature sequence `[b, T, D]`.
    pub fn branch_features(&self, params: &Bound, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Tensor, NnError> {
        let mut feats: Option<Tensor> = None;
        for (br, input) in self.branches.iter().zip(&batch.inputs) {
            let mut x = input.clone();
            for (i, layer) in br.layers.iter().enumerate() {
                x = nn::forward(layer, params, &format!("{}.{i}", br.name), &x, ctx)?;
            }
            let (b, maps, h, t) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let seq = ops::permute(&ops::reshape(&x, &[b, maps * h, t])?, &[0, 2, 1])?;
            feats = Some(match feats {
                None => seq,
                Some(prev) => ops::concat_last(&prev, &seq)?,
            });
        }
        feats.ok_or_else(|| NnError::Config("network has no branches".into()))
    }

    fn window_block(&self, params: &Bound, prefix: &str, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor, NnError> {
        let mut h = nn::forward(&self.attention, params, &format!("{prefix}.attn"), x, ctx)?;
        for (j, layer) in self.dilated.iter().enumerate() {
            h = nn::forward(layer, params, &format!("{prefix}.dil{j}"), &h, ctx)?;
            h = ops::elu(&h);
        }
        Ok(h)
    }

    /// Recognition head up to (excluding) the flatten: `[b, T, D] → [b, W, T/W, F]`.
    pub fn head_features(&self, params: &Bound, seq: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor, NnError> {
        let w = self.config.attention_windows;
        let [b, t, d] = <[usize; 3]>::try_from(seq.shape())
            .map_err(|_| NnError::Shape { op: "head".into(), detail: format!("expected [b, t, d], got {:?}", seq.shape()) })?;
        if t % w != 0 {
            return Err(NnError::Shape { op: "head".into(), detail: format!("time length {t} not divisible into {w} windows") });
        }
        let tw = t / w;
        let out = if self.config.share_window_weights {
            let x = ops::reshape(seq, &[b * w, tw, d])?;
            self.window_block(params, "head", &x, ctx)?
        } else {
            let x = ops::reshape(seq, &[b, w, tw, d])?;
            let x = ops::reshape(&ops::permute(&x, &[1, 0, 2, 3])?, &[w * b, tw, d])?;
            let parts = (0..w)
                .map(|k| self.window_block(params, &format!("head.w{k}"), &ops::narrow_first(&x, k * b, b)?, ctx))
                .collect::<Result<Vec<_>, _>>()?;
            let y = ops::concat_first(&parts)?;
            let f = y.shape()[2];
            return ops::permute(&ops::reshape(&y, &[w, b, tw, f])?, &[1, 0, 2, 3]);
        };
        let f = out.shape()[2];
        ops::reshape(&out, &[b, w, tw, f])
    }

    /// Class probabilities `[b, n_classes]`.
    pub fn forward(&self, params: &Bound, batch: &Batch, ctx: &mut ForwardCtx) -> Result<Tensor, NnError> {
        let seq = self.branch_features(params, batch, ctx)?;
        let flat = match self.config.task {
            Task::Recognition => self.head_features(params, &seq, ctx)?,
            Task::Authentication => seq,
        };
        let b = batch.size;
        let flat = ops::reshape(&flat, &[b, flat.numel() / b.max(1)])?;
        let logits = nn::forward(&self.dense, params, "head.dense", &flat, ctx)?;
        ops::softmax(&logits)
    }
}

/// Per-channel z-scoring fitted on training windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self { mean: vec![0.0; N_CHANNELS], std: vec![1.0; N_CHANNELS] }
    }

    pub fn fit<'a>(windows: impl IntoIterator<Item = &'a WindowInstance>) -> Self {
        let mut sum = [0.0; N_CHANNELS];
        let mut sq = [0.0; N_CHANNELS];
        let mut n = 0usize;
        for w in windows {
            for c in 0..N_CHANNELS {
                for v in w.channel(c) {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += w.len;
        }
        if n == 0 {
            return Self::identity();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n as f64 - m * m).max(0.0);
                if var.sqrt() > 1e-9 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, w: &WindowInstance) -> Vec<f64> {
        let mut out = Vec::with_capacity(w.channels.len());
        for c in 0..N_CHANNELS {
            out.extend(w.channel(c).iter().map(|v| (v - self.mean[c]) / self.std[c]));
        }
        out
    }
}

/// Provenance of a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    /// Held-out subject (recognition) or day (authentication).
    pub fold: Option<u32>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_lr: f64,
    pub steps: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub standardizer: Standardizer,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct StoredMeta {
    config: ModelConfig,
    standardizer: Standardizer,
    train: TrainMeta,
}

impl TrainedModel {
    /// Class probabilities for every window, evaluated in chunks.
    pub fn predict_proba(&self, windows: &[&WindowInstance]) -> Result<Vec<Vec<f64>>, NnError> {
        let net = Network::build(&self.config)?;
        let bound = self.params.bind(false);
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|w| self.standardizer.apply(w)).collect();
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let probs = net.forward(&bound, &net.batch(&refs)?, &mut ForwardCtx::eval())?;
            out.extend(probs.data().chunks(self.config.n_classes).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Arg-max class per window (lowest index on ties).
    pub fn predict(&self, windows: &[&WindowInstance]) -> Result<Vec<usize>, NnError> {
        Ok(self.predict_proba(windows)?.iter().map(|p| argmax(p)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let meta = StoredMeta { config: self.config.clone(), standardizer: self.standardizer.clone(), train: self.meta.clone() };
        let meta = serde_json::to_value(meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        nn::write_checkpoint(path, &Checkpoint { meta, params: self.params.clone(), adam: None })
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let ck = nn::read_checkpoint(path)?;
        let meta: StoredMeta = serde_json::from_value(ck.meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let expected = Network::build(&meta.config)?.param_layout()?;
        for (name, p) in &expected {
            match ck.params.get(name) {
                Some(stored) if stored.shape == p.shape => {}
                _ => return Err(NnError::Checkpoint(format!("parameter `{name}` missing or misshapen"))),
            }
        }
        if expected.len() != ck.params.len() {
            return Err(NnError::Checkpoint("unexpected extra parameters".into()));
        }
        Ok(Self { config: meta.config, params: ck.params, standardizer: meta.standardizer, meta: meta.train })
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}
