use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Padding};
use super::{Bound, Init, NnError, Tensor};

/// Layer inventory. Shapes include the batch axis first: image-like layers
/// take `[b, maps, h, w]`, sequence layers take `[n, t, features]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { out_maps: usize, kernel: (usize, usize), padding: Padding },
    DepthwiseConv2d { kernel: (usize, usize), depth_multiplier: usize },
    /// Normalizes jointly over the listed non-batch axes.
    LayerNorm { axes: Vec<usize> },
    Elu,
    AvgPool2d { pool: (usize, usize) },
    Dropout { rate: f64 },
    /// Affine map on the last axis.
    Dense { out_dim: usize },
    MultiHeadSelfAttention { heads: usize, model_dim: usize },
    DilatedConv1d { filters: usize, kernel: usize, dilation: usize },
    /// Softmax over the last axis.
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Forward-pass context: mode plus the RNG that drives dropout masks.
pub struct ForwardCtx {
    pub mode: Mode,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        Self { mode: Mode::Train, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn eval() -> Self {
        Self { mode: Mode::Eval, rng: ChaCha8Rng::seed_from_u64(0) }
    }
}

/// A parameter a layer needs: name suffix, shape and initializer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: &'static str, shape: Vec<usize>, init: Init) -> Self {
        Self { name, shape, init }
    }
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::DepthwiseConv2d { .. } => "depthwise_conv2d",
            LayerSpec::LayerNorm { .. } => "layer_norm",
            LayerSpec::Elu => "elu",
            LayerSpec::AvgPool2d { .. } => "avg_pool2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::MultiHeadSelfAttention { .. } => "multi_head_self_attention",
            LayerSpec::DilatedConv1d { .. } => "dilated_conv1d",
            LayerSpec::Softmax => "softmax",
        }
    }

    fn invalid(&self, message: impl Into<String>) -> NnError {
        NnError::InvalidLayer { layer: self.name().to_string(), message: message.into() }
    }

    fn shape_err(&self, input: &[usize], want: &str) -> NnError {
        NnError::Shape { op: self.name().to_string(), detail: format!("input {input:?}, expected {want}") }
    }

    /// Checks hyperparameters.
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = match self {
            LayerSpec::Conv2d { out_maps, kernel, .. } => *out_maps > 0 && kernel.0 > 0 && kernel.1 > 0,
            LayerSpec::DepthwiseConv2d { kernel, depth_multiplier } => *depth_multiplier > 0 && kernel.0 > 0 && kernel.1 > 0,
            LayerSpec::LayerNorm { axes } => !axes.is_empty() && axes.iter().all(|&a| a > 0),
            LayerSpec::AvgPool2d { pool } => pool.0 > 0 && pool.1 > 0,
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(rate),
            LayerSpec::Dense { out_dim } => *out_dim > 0,
            LayerSpec::MultiHeadSelfAttention { heads, model_dim } => *heads > 0 && *model_dim > 0 && model_dim % heads == 0,
            LayerSpec::DilatedConv1d { filters, kernel, dilation } => *filters > 0 && *kernel > 0 && *dilation > 0,
            LayerSpec::Elu | LayerSpec::Softmax => true,
        };
        if ok {
            Ok(())
        } else {
            Err(self.invalid(format!("bad hyperparameters {self:?}")))
        }
    }

    /// Output shape for a given input shape (batch axis included).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        self.validate()?;
        match self {
            LayerSpec::Conv2d { out_maps, kernel, padding } => {
                let [b, _, h, w] = rank4(self, input)?;
                match padding {
                    Padding::Same => Ok(vec![b, *out_maps, h, w]),
                    Padding::Valid if kernel.0 <= h && kernel.1 <= w => Ok(vec![b, *out_maps, h - kernel.0 + 1, w - kernel.1 + 1]),
                    Padding::Valid => Err(self.shape_err(input, "spatial dims at least the kernel")),
                }
            }
            LayerSpec::DepthwiseConv2d { kernel, depth_multiplier } => {
                let [b, c, h, w] = rank4(self, input)?;
                if kernel.0 > h || kernel.1 > w {
                    return Err(self.shape_err(input, &format!("spatial dims at least {kernel:?}")));
                }
                Ok(vec![b, c * depth_multiplier, h - kernel.0 + 1, w - kernel.1 + 1])
            }
            LayerSpec::LayerNorm { axes } => {
                if axes.iter().any(|&a| a >= input.len()) {
                    return Err(self.shape_err(input, &format!("axes {axes:?} in range")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::AvgPool2d { pool } => {
                let [b, c, h, w] = rank4(self, input)?;
                if pool.0 > h || pool.1 > w {
                    return Err(self.shape_err(input, &format!("spatial dims at least {pool:?}")));
                }
                Ok(vec![b, c, h / pool.0, w / pool.1])
            }
            LayerSpec::Dense { out_dim } => {
                if input.len() < 2 {
                    return Err(self.shape_err(input, "rank ≥ 2"));
                }
                let mut s = input.to_vec();
                *s.last_mut().unwrap() = *out_dim;
                Ok(s)
            }
            LayerSpec::MultiHeadSelfAttention { model_dim, .. } => {
                if input.len() != 3 || input[2] != *model_dim {
                    return Err(self.shape_err(input, &format!("[n, t, {model_dim}]")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::DilatedConv1d { filters, .. } => {
                if input.len() != 3 {
                    return Err(self.shape_err(input, "[n, t, channels]"));
                }
                Ok(vec![input[0], input[1], *filters])
            }
            LayerSpec::Elu | LayerSpec::Dropout { .. } | LayerSpec::Softmax => {
                if input.is_empty() {
                    return Err(self.shape_err(input, "rank ≥ 1"));
                }
                Ok(input.to_vec())
            }
        }
    }

    /// Parameters required for a given input shape.
    pub fn param_specs(&self, input: &[usize]) -> Result<Vec<ParamSpec>, NnError> {
        self.output_shape(input)?;
        Ok(match self {
            LayerSpec::Conv2d { out_maps, kernel, .. } => {
                let c = input[1];
                vec![
                    ParamSpec::new("weight", vec![*out_maps, c, kernel.0, kernel.1], Init::TruncatedNormal { fan_in: c * kernel.0 * kernel.1 }),
                    ParamSpec::new("bias", vec![*out_maps], Init::Zeros),
                ]
            }
            LayerSpec::DepthwiseConv2d { kernel, depth_multiplier } => {
                let co = input[1] * depth_multiplier;
                vec![
                    ParamSpec::new("weight", vec![co, kernel.0, kernel.1], Init::TruncatedNormal { fan_in: kernel.0 * kernel.1 }),
                    ParamSpec::new("bias", vec![co], Init::Zeros),
                ]
            }
            LayerSpec::LayerNorm { axes } => {
                let f: usize = axes.iter().map(|&a| input[a]).product();
                vec![ParamSpec::new("gamma", vec![f], Init::Ones), ParamSpec::new("beta", vec![f], Init::Zeros)]
            }
            LayerSpec::Dense { out_dim } => {
                let fin = *input.last().unwrap();
                vec![
                    ParamSpec::new("weight", vec![fin, *out_dim], Init::TruncatedNormal { fan_in: fin }),
                    ParamSpec::new("bias", vec![*out_dim], Init::Zeros),
                ]
            }
            LayerSpec::MultiHeadSelfAttention { model_dim, .. } => {
                let d = *model_dim;
                let g = Init::GlorotUniform { fan_in: d, fan_out: d };
                ["q", "k", "v", "o"]
                    .iter()
                    .flat_map(|p| {
                        let (w, b) = match *p {
                            "q" => ("wq", "bq"),
                            "k" => ("wk", "bk"),
                            "v" => ("wv", "bv"),
                            _ => ("wo", "bo"),
                        };
                        [ParamSpec::new(w, vec![d, d], g), ParamSpec::new(b, vec![d], Init::Zeros)]
                    })
                    .collect()
            }
            LayerSpec::DilatedConv1d { filters, kernel, .. } => {
                let c = input[2];
                vec![
                    ParamSpec::new("weight", vec![*kernel, c, *filters], Init::TruncatedNormal { fan_in: kernel * c }),
                    ParamSpec::new("bias", vec![*filters], Init::Zeros),
                ]
            }
            LayerSpec::Elu | LayerSpec::AvgPool2d { .. } | LayerSpec::Dropout { .. } | LayerSpec::Softmax => Vec::new(),
        })
    }
}

fn rank4(spec: &LayerSpec, input: &[usize]) -> Result<[usize; 4], NnError> {
    input.try_into().map_err(|_| spec.shape_err(input, "[b, maps, h, w]"))
}

/// Applies `spec` to `x`, reading parameters named `<prefix>.<suffix>`.
pub fn forward(spec: &LayerSpec, params: &Bound, prefix: &str, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor, NnError> {
    spec.output_shape(x.shape())?;
    let p = |suffix: &str| params.get(&format!("{prefix}.{suffix}"));
    match spec {
        LayerSpec::Conv2d { padding, .. } => ops::conv2d(x, p("weight")?, p("bias")?, *padding),
        LayerSpec::DepthwiseConv2d { depth_multiplier, .. } => ops::depthwise_conv2d(x, p("weight")?, p("bias")?, *depth_multiplier),
        LayerSpec::LayerNorm { axes } => layer_norm_axes(x, axes, p("gamma")?, p("beta")?),
        LayerSpec::Elu => Ok(ops::elu(x)),
        LayerSpec::AvgPool2d { pool } => ops::avg_pool2d(x, *pool),
        LayerSpec::Dropout { rate } => dropout(x, *rate, ctx),
        LayerSpec::Dense { .. } => ops::linear(x, p("weight")?, p("bias")?),
        LayerSpec::MultiHeadSelfAttention { heads, .. } => {
            let q = ops::linear(x, p("wq")?, p("bq")?)?;
            let k = ops::linear(x, p("wk")?, p("bk")?)?;
            let v = ops::linear(x, p("wv")?, p("bv")?)?;
            let o = ops::multi_head_attention(&q, &k, &v, *heads)?;
            ops::linear(&o, p("wo")?, p("bo")?)
        }
        LayerSpec::DilatedConv1d { dilation, .. } => ops::conv1d(x, p("weight")?, p("bias")?, *dilation),
        LayerSpec::Softmax => ops::softmax(x),
    }
}

/// Inverted dropout; identity outside training or at rate 0.
fn dropout(x: &Tensor, rate: f64, ctx: &mut ForwardCtx) -> Result<Tensor, NnError> {
    if ctx.mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..x.numel()).map(|_| if ctx.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    ops::mul_const(x, Rc::new(mask))
}

/// Layer norm over arbitrary non-batch axes: move them last, flatten,
/// normalize, and move them back.
fn layer_norm_axes(x: &Tensor, axes: &[usize], gamma: &Tensor, beta: &Tensor) -> Result<Tensor, NnError> {
    let rank = x.shape().len();
    let mut order: Vec<usize> = (0..rank).filter(|a| !axes.contains(a)).collect();
    order.extend_from_slice(axes);
    let identity = order.iter().enumerate().all(|(i, &a)| i == a);
    let moved = if identity { x.clone() } else { ops::permute(x, &order)? };
    let f: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let moved_shape = moved.shape().to_vec();
    let flat = ops::reshape(&moved, &[x.numel() / f, f])?;
    let normed = ops::layer_norm(&flat, gamma, beta, 1e-5)?;
    let back = ops::reshape(&normed, &moved_shape)?;
    if identity {
        return Ok(back);
    }
    let mut inverse = vec![0; rank];
    for (i, &a) in order.iter().enumerate() {
        inverse[a] = i;
    }
    ops::permute(&back, &inverse)
}
