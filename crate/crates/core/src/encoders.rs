//! Sequence encoders mapping an `N x 6` command/state window to a latent vector.
//!
//! Five interchangeable architectures share one interface: a batched
//! [`Encoder::forward`] on an autodiff graph for training and
//! [`Encoder::encode`] for inference.

use drf_autodiff::params::glorot_uniform;
use drf_autodiff::{conv1d_output_len, rng, Binding, Graph, ParamId, ParamSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DrfError, Result};
use crate::vehicle::{ControlCommand, Pose, VehicleState};

/// Columns per window row: throttle, brake, steering, speed, acceleration, heading.
pub const FEATURES: usize = 6;
pub const DEFAULT_WINDOW: usize = 100;

/// Raw encoder input: `N` rows of [`FEATURES`] values, heading unwrapped and
/// made relative to the first row.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub data: Vec<f64>,
    pub start: usize,
    pub start_pose: Pose,
}

impl Window {
    pub fn from_ticks(commands: &[ControlCommand], states: &[VehicleState], start: usize, start_pose: Pose) -> Self {
        Window {
            data: window_features(commands, states),
            start,
            start_pose,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / FEATURES
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn mean(&self, column: usize) -> f64 {
        let n = self.len().max(1) as f64;
        self.data.chunks_exact(FEATURES).map(|r| r[column]).sum::<f64>() / n
    }
}

/// Row-major feature rows for paired commands and states.
pub fn window_features(commands: &[ControlCommand], states: &[VehicleState]) -> Vec<f64> {
    let n = commands.len().min(states.len());
    let mut out = Vec::with_capacity(n * FEATURES);
    let h0 = states.first().map(|s| s.heading).unwrap_or(0.0);
    let mut rel = 0.0;
    let mut prev = h0;
    for (c, s) in commands.iter().zip(states).take(n) {
        rel += crate::vehicle::wrap_angle(s.heading - prev);
        prev = s.heading;
        out.extend_from_slice(&[c.throttle, c.brake, c.steering, s.speed, s.acceleration, rel]);
    }
    out
}

fn default_channels() -> usize {
    32
}

fn default_attention_dim() -> usize {
    32
}

fn default_true() -> bool {
    true
}

/// Architecture and hyperparameters. Defaults follow the published table;
/// unpublished widths (conv channels, attention width, model width) are
/// configurable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    Cnn {
        kernel: usize,
        stride: usize,
        #[serde(default = "default_channels")]
        channels: usize,
        latent_dim: usize,
    },
    DilatedCnn {
        kernel: usize,
        dilation: usize,
        stride: usize,
        #[serde(default = "default_channels")]
        channels: usize,
        latent_dim: usize,
    },
    Lstm {
        hidden: usize,
        latent_dim: usize,
    },
    Attention {
        kernel: usize,
        stride: usize,
        #[serde(default = "default_attention_dim")]
        dim: usize,
        latent_dim: usize,
    },
    Transformer {
        d_model: usize,
        heads: usize,
        ff_dim: usize,
        dropout: f64,
        #[serde(default = "default_true")]
        positional_encoding: bool,
    },
}

impl EncoderSpec {
    pub fn cnn() -> Self {
        EncoderSpec::Cnn {
            kernel: 6,
            stride: 4,
            channels: default_channels(),
            latent_dim: 250,
        }
    }

    pub fn dilated_cnn() -> Self {
        EncoderSpec::DilatedCnn {
            kernel: 6,
            dilation: 5,
            stride: 4,
            channels: default_channels(),
            latent_dim: 200,
        }
    }

    pub fn lstm() -> Self {
        EncoderSpec::Lstm {
            hidden: 128,
            latent_dim: 128,
        }
    }

    pub fn attention() -> Self {
        EncoderSpec::Attention {
            kernel: 5,
            stride: 5,
            dim: default_attention_dim(),
            latent_dim: 200,
        }
    }

    pub fn transformer() -> Self {
        EncoderSpec::Transformer {
            d_model: 64,
            heads: 1,
            ff_dim: 1024,
            dropout: 0.1,
            positional_encoding: true,
        }
    }

    /// Accepts the canonical kind names and the short aliases
    /// `trans`, `attn`, `dilated`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cnn" => Ok(Self::cnn()),
            "dilated" | "dilated_cnn" | "dilated-cnn" => Ok(Self::dilated_cnn()),
            "lstm" => Ok(Self::lstm()),
            "attention" | "attn" => Ok(Self::attention()),
            "transformer" | "trans" => Ok(Self::transformer()),
            other => Err(invalid(format!(
                "unknown encoder {other:?}; expected cnn, dilated_cnn, lstm, attention or transformer"
            ))),
        }
    }

    pub fn all_defaults() -> [EncoderSpec; 5] {
        [Self::cnn(), Self::dilated_cnn(), Self::lstm(), Self::attention(), Self::transformer()]
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderSpec::Cnn { .. } => "cnn",
            EncoderSpec::DilatedCnn { .. } => "dilated_cnn",
            EncoderSpec::Lstm { .. } => "lstm",
            EncoderSpec::Attention { .. } => "attention",
            EncoderSpec::Transformer { .. } => "transformer",
        }
    }

    pub fn latent_dim(&self) -> usize {
        match *self {
            EncoderSpec::Cnn { latent_dim, .. }
            | EncoderSpec::DilatedCnn { latent_dim, .. }
            | EncoderSpec::Lstm { latent_dim, .. }
            | EncoderSpec::Attention { latent_dim, .. } => latent_dim,
            EncoderSpec::Transformer { d_model, .. } => d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive: Vec<usize> = match *self {
            EncoderSpec::Cnn {
                kernel,
                stride,
                channels,
                latent_dim,
            } => vec![kernel, stride, channels, latent_dim],
            EncoderSpec::DilatedCnn {
                kernel,
                dilation,
                stride,
                channels,
                latent_dim,
            } => vec![kernel, dilation, stride, channels, latent_dim],
            EncoderSpec::Lstm { hidden, latent_dim } => vec![hidden, latent_dim],
            EncoderSpec::Attention {
                kernel,
                stride,
                dim,
                latent_dim,
            } => vec![kernel, stride, dim, latent_dim],
            EncoderSpec::Transformer {
                d_model,
                heads,
                ff_dim,
                dropout,
                ..
            } => {
                if heads != 1 {
                    return Err(invalid("the transformer encoder supports exactly one head"));
                }
                if !(0.0..1.0).contains(&dropout) {
                    return Err(invalid(format!("dropout must be in [0, 1), got {dropout}")));
                }
                vec![d_model, ff_dim]
            }
        };
        if positive.contains(&0) {
            return Err(invalid(format!("{} hyperparameters must be positive", self.name())));
        }
        Ok(())
    }

    /// Smallest window length the architecture accepts.
    pub fn min_window_length(&self) -> usize {
        match *self {
            EncoderSpec::Cnn { kernel, stride, .. } => conv_chain_min(&[(kernel, stride, 1), (kernel, stride, 1)]),
            EncoderSpec::DilatedCnn {
                kernel,
                dilation,
                stride,
                ..
            } => conv_chain_min(&[(kernel, stride, dilation), (kernel, stride, 1)]),
            EncoderSpec::Lstm { .. } | EncoderSpec::Transformer { .. } => 1,
            EncoderSpec::Attention { kernel, stride, .. } => conv_chain_min(&[(kernel, stride, 1), (kernel, stride, 1)]),
        }
    }

    fn check_window(&self, n: usize) -> Result<()> {
        let min = self.min_window_length();
        if n < min {
            return Err(DrfError::WindowTooShort {
                encoder: self.name(),
                given: n,
                min,
            });
        }
        Ok(())
    }
}

/// Smallest input length for which every `(kernel, stride, dilation)` stage
/// yields at least one output.
fn conv_chain_min(stages: &[(usize, usize, usize)]) -> usize {
    let mut need = 1;
    for &(k, s, d) in stages.iter().rev() {
        need = (need - 1) * s + d * (k - 1) + 1;
    }
    need
}

/// Number of segments a `kernel`/`stride` pooling stage yields on `len` positions.
fn segments(len: usize, kernel: usize, stride: usize) -> usize {
    conv1d_output_len(len, kernel, stride, 1).unwrap_or(0)
}

#[derive(Clone, Debug)]
enum Layout {
    Conv {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
        fc: ParamId,
        fc_b: ParamId,
    },
    Lstm {
        wx: ParamId,
        wh: ParamId,
        b: ParamId,
        fc: ParamId,
        fc_b: ParamId,
    },
    Attention {
        embed: ParamId,
        embed_b: ParamId,
        blocks: Vec<[ParamId; 3]>,
        fc: ParamId,
        fc_b: ParamId,
    },
    Transformer {
        embed: ParamId,
        embed_b: ParamId,
        wq: ParamId,
        wk: ParamId,
        wv: ParamId,
        wo: ParamId,
        ff1: ParamId,
        ff1_b: ParamId,
        ff2: ParamId,
        ff2_b: ParamId,
    },
}

/// An encoder instance: architecture, fixed window length and weights.
#[derive(Clone, Debug)]
pub struct Encoder {
    spec: EncoderSpec,
    window: usize,
    params: ParamSet,
    layout: Layout,
}

impl Encoder {
    pub fn new(spec: EncoderSpec, window: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        spec.check_window(window)?;
        let mut r = rng::stream(seed, rng::derive_seed(seed, spec.name()));
        let mut p = ParamSet::new();
        let mut mat = |p: &mut ParamSet, name: &str, shape: &[usize], fan_in: usize, fan_out: usize| {
            p.add(name, glorot_uniform(shape, fan_in, fan_out, &mut r))
        };
        let layout = match spec {
            EncoderSpec::Cnn {
                kernel,
                stride,
                channels,
                latent_dim,
            }
            | EncoderSpec::DilatedCnn {
                kernel,
                stride,
                channels,
                latent_dim,
                ..
            } => {
                let dilation = match spec {
                    EncoderSpec::DilatedCnn { dilation, .. } => dilation,
                    _ => 1,
                };
                let l1 = conv1d_output_len(window, kernel, stride, dilation).expect("checked window");
                let l2 = conv1d_output_len(l1, kernel, stride, 1).expect("checked window");
                let w1 = mat(&mut p, "conv1.w", &[channels, FEATURES, kernel], FEATURES * kernel, channels * kernel);
                let b1 = p.add("conv1.b", Tensor::zeros([channels, 1]));
                let w2 = mat(&mut p, "conv2.w", &[channels, channels, kernel], channels * kernel, channels * kernel);
                let b2 = p.add("conv2.b", Tensor::zeros([channels, 1]));
                let flat = channels * l2;
                let fc = mat(&mut p, "fc.w", &[flat, latent_dim], flat, latent_dim);
                let fc_b = p.add("fc.b", Tensor::zeros([latent_dim]));
                Layout::Conv {
                    w1,
                    b1,
                    w2,
                    b2,
                    fc,
                    fc_b,
                }
            }
            EncoderSpec::Lstm { hidden, latent_dim } => {
                let wx = mat(&mut p, "lstm.wx", &[FEATURES, 4 * hidden], FEATURES, hidden);
                let wh = mat(&mut p, "lstm.wh", &[hidden, 4 * hidden], hidden, hidden);
                // Gate order i, f, g, o; forget gate biased open.
                let mut bias = vec![0.0; 4 * hidden];
                bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
                let b = p.add("lstm.b", Tensor::vector(bias));
                let fc = mat(&mut p, "fc.w", &[hidden, latent_dim], hidden, latent_dim);
                let fc_b = p.add("fc.b", Tensor::zeros([latent_dim]));
                Layout::Lstm { wx, wh, b, fc, fc_b }
            }
            EncoderSpec::Attention {
                kernel,
                stride,
                dim,
                latent_dim,
            } => {
                let embed = mat(&mut p, "embed.w", &[FEATURES, dim], FEATURES, dim);
                let embed_b = p.add("embed.b", Tensor::zeros([dim]));
                let blocks = (0..2)
                    .map(|bi| ["q", "k", "v"].map(|name| mat(&mut p, &format!("attn{bi}.{name}"), &[dim, dim], dim, dim)))
                    .collect();
                let s2 = segments(segments(window, kernel, stride), kernel, stride);
                let flat = s2 * dim;
                let fc = mat(&mut p, "fc.w", &[flat, latent_dim], flat, latent_dim);
                let fc_b = p.add("fc.b", Tensor::zeros([latent_dim]));
                Layout::Attention {
                    embed,
                    embed_b,
                    blocks,
                    fc,
                    fc_b,
                }
            }
            EncoderSpec::Transformer { d_model, ff_dim, .. } => {
                let embed = mat(&mut p, "embed.w", &[FEATURES, d_model], FEATURES, d_model);
                let embed_b = p.add("embed.b", Tensor::zeros([d_model]));
                let wq = mat(&mut p, "attn.q", &[d_model, d_model], d_model, d_model);
                let wk = mat(&mut p, "attn.k", &[d_model, d_model], d_model, d_model);
                let wv = mat(&mut p, "attn.v", &[d_model, d_model], d_model, d_model);
                let wo = mat(&mut p, "attn.o", &[d_model, d_model], d_model, d_model);
                let ff1 = mat(&mut p, "ff1.w", &[d_model, ff_dim], d_model, ff_dim);
                let ff1_b = p.add("ff1.b", Tensor::zeros([ff_dim]));
                let ff2 = mat(&mut p, "ff2.w", &[ff_dim, d_model], ff_dim, d_model);
                let ff2_b = p.add("ff2.b", Tensor::zeros([d_model]));
                Layout::Transformer {
                    embed,
                    embed_b,
                    wq,
                    wk,
                    wv,
                    wo,
                    ff1,
                    ff1_b,
                    ff2,
                    ff2_b,
                }
            }
        };
        Ok(Encoder {
            spec,
            window,
            params: p,
            layout,
        })
    }

    /// Rebuilds an encoder around stored weights; names and shapes must match
    /// a freshly initialised instance.
    pub fn from_params(spec: EncoderSpec, window: usize, params: ParamSet) -> Result<Self> {
        let mut enc = Encoder::new(spec, window, 0)?;
        drf_autodiff::checkpoint::restore_into(&mut enc.params, &params)?;
        Ok(enc)
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Latents `[B, latent_dim]` for an input `[B, N, FEATURES]`.
    pub fn forward(&self, g: &mut Graph, bind: &Binding, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.window || shape[2] != FEATURES {
            return Err(invalid(format!(
                "{} encoder expects [batch, {}, {FEATURES}] input, got {shape:?}",
                self.spec.name(),
                self.window
            )));
        }
        let batch = shape[0];
        let v = |id: ParamId| bind.var(id);
        let out = match (&self.layout, &self.spec) {
            (Layout::Conv { w1, b1, w2, b2, fc, fc_b }, spec) => {
                let (stride, dilation) = match *spec {
                    EncoderSpec::Cnn { stride, .. } => (stride, 1),
                    EncoderSpec::DilatedCnn { stride, dilation, .. } => (stride, dilation),
                    _ => unreachable!("conv layout"),
                };
                let xt = g.transpose(x)?;
                let h = g.conv1d(xt, v(*w1), stride, dilation)?;
                let h = g.add(h, v(*b1))?;
                let h = g.relu(h);
                let h = g.conv1d(h, v(*w2), stride, 1)?;
                let h = g.add(h, v(*b2))?;
                let h = g.relu(h);
                let flat = g.shape(h)[1] * g.shape(h)[2];
                let h = g.reshape(h, &[batch, flat])?;
                let z = g.matmul(h, v(*fc))?;
                g.add(z, v(*fc_b))?
            }
            (Layout::Lstm { wx, wh, b, fc, fc_b }, EncoderSpec::Lstm { hidden, .. }) => {
                let hd = *hidden;
                let mut h = g.constant(Tensor::zeros([batch, hd]));
                let mut c = g.constant(Tensor::zeros([batch, hd]));
                let xw = g.matmul(x, v(*wx))?;
                let xw = g.add(xw, v(*b))?;
                for t in 0..self.window {
                    let xt = g.slice(xw, 1, t, t + 1)?;
                    let xt = g.reshape(xt, &[batch, 4 * hd])?;
                    let hh = g.matmul(h, v(*wh))?;
                    let gates = g.add(xt, hh)?;
                    let i = g.slice(gates, 1, 0, hd)?;
                    let f = g.slice(gates, 1, hd, 2 * hd)?;
                    let gg = g.slice(gates, 1, 2 * hd, 3 * hd)?;
                    let o = g.slice(gates, 1, 3 * hd, 4 * hd)?;
                    let (i, f, gg, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(gg), g.sigmoid(o));
                    let keep = g.mul(f, c)?;
                    let write = g.mul(i, gg)?;
                    c = g.add(keep, write)?;
                    let tc = g.tanh(c);
                    h = g.mul(o, tc)?;
                }
                let z = g.matmul(h, v(*fc))?;
                g.add(z, v(*fc_b))?
            }
            (
                Layout::Attention {
                    embed,
                    embed_b,
                    blocks,
                    fc,
                    fc_b,
                },
                EncoderSpec::Attention { kernel, stride, dim, .. },
            ) => {
                let e = g.matmul(x, v(*embed))?;
                let mut h = g.add(e, v(*embed_b))?;
                for block in blocks {
                    h = local_attention(g, h, [v(block[0]), v(block[1]), v(block[2])], *kernel, *stride, *dim)?;
                }
                let flat = g.shape(h)[1] * dim;
                let h = g.reshape(h, &[batch, flat])?;
                let z = g.matmul(h, v(*fc))?;
                g.add(z, v(*fc_b))?
            }
            (
                Layout::Transformer {
                    embed,
                    embed_b,
                    wq,
                    wk,
                    wv,
                    wo,
                    ff1,
                    ff1_b,
                    ff2,
                    ff2_b,
                },
                EncoderSpec::Transformer {
                    d_model,
                    dropout,
                    positional_encoding,
                    ..
                },
            ) => {
                let e = g.matmul(x, v(*embed))?;
                let mut h = g.add(e, v(*embed_b))?;
                if *positional_encoding {
                    let pe = g.constant(sinusoidal_encoding(self.window, *d_model));
                    h = g.add(h, pe)?;
                }
                let q = g.matmul(h, v(*wq))?;
                let k = g.matmul(h, v(*wk))?;
                let val = g.matmul(h, v(*wv))?;
                let kt = g.transpose(k)?;
                let scores = g.matmul(q, kt)?;
                let scores = g.scale(scores, 1.0 / (*d_model as f64).sqrt());
                let attn = g.softmax(scores)?;
                let a = g.matmul(attn, val)?;
                let a = g.matmul(a, v(*wo))?;
                let h1 = g.add(h, a)?;
                let h1 = g.layer_norm(h1, 1e-5)?;
                let f = g.matmul(h1, v(*ff1))?;
                let f = g.add(f, v(*ff1_b))?;
                let f = g.relu(f);
                let f = g.dropout(f, *dropout);
                let f = g.matmul(f, v(*ff2))?;
                let f = g.add(f, v(*ff2_b))?;
                let h2 = g.add(h1, f)?;
                let h2 = g.layer_norm(h2, 1e-5)?;
                g.mean_axis(h2, 1)?
            }
            _ => unreachable!("layout always matches its spec"),
        };
        Ok(out)
    }

    /// Inference on row-major `[B, N, FEATURES]` data; returns `[B, latent]`
    /// row-major. Evaluated in chunks to bound memory.
    pub fn encode(&self, windows: &[f64]) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let per = self.window * FEATURES;
        if windows.len() % per != 0 {
            return Err(invalid(format!(
                "encode input of {} values is not a multiple of {per}",
                windows.len()
            )));
        }
        let mut out = Vec::with_capacity(windows.len() / per * self.latent_dim());
        for chunk in windows.chunks(CHUNK * per) {
            let b = chunk.len() / per;
            let mut g = Graph::new();
            let bind = self.params.bind_frozen(&mut g);
            let x = g.constant(Tensor::new([b, self.window, FEATURES], chunk.to_vec())?);
            let z = self.forward(&mut g, &bind, x)?;
            out.extend_from_slice(g.value(z).data());
        }
        Ok(out)
    }
}

/// Self-attention inside non-overlapping `kernel`-long segments, each
/// segment pooled to its mean (`stride` apart). `[B, L, D] -> [B, S, D]`.
fn local_attention(g: &mut Graph, h: Var, w: [Var; 3], kernel: usize, stride: usize, dim: usize) -> Result<Var> {
    let s = g.shape(h).to_vec();
    let (batch, len) = (s[0], s[1]);
    let n = segments(len, kernel, stride);
    if n == 0 {
        return Err(invalid(format!("attention stage needs at least {kernel} positions, got {len}")));
    }
    // Segments are aligned to the end of the window so the newest ticks are always kept.
    let offset = len - ((n - 1) * stride + kernel);
    let mut pooled = Vec::with_capacity(n);
    for j in 0..n {
        let start = offset + j * stride;
        let seg = g.slice(h, 1, start, start + kernel)?;
        let q = g.matmul(seg, w[0])?;
        let k = g.matmul(seg, w[1])?;
        let v = g.matmul(seg, w[2])?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dim as f64).sqrt());
        let attn = g.softmax(scores)?;
        let a = g.matmul(attn, v)?;
        let r = g.add(seg, a)?;
        let m = g.mean_axis(r, 1)?;
        pooled.push(g.reshape(m, &[batch, 1, dim])?);
    }
    Ok(g.concat(&pooled, 1)?)
}

/// Standard sine/cosine positional table `[len, dim]`.
pub fn sinusoidal_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * freq;
            data[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new([len, dim], data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_window_lengths() {
        assert_eq!(EncoderSpec::cnn().min_window_length(), 26);
        assert_eq!(EncoderSpec::dilated_cnn().min_window_length(), 46);
        assert_eq!(EncoderSpec::lstm().min_window_length(), 1);
        assert_eq!(EncoderSpec::transformer().min_window_length(), 1);
        assert_eq!(EncoderSpec::attention().min_window_length(), 25);
    }

    #[test]
    fn short_window_is_rejected_with_minimum() {
        let err = Encoder::new(EncoderSpec::cnn(), 25, 0).unwrap_err();
        assert!(matches!(err, DrfError::WindowTooShort { min: 26, given: 25, .. }), "{err}");
        assert!(Encoder::new(EncoderSpec::cnn(), 26, 0).is_ok());
    }

    #[test]
    fn spec_names_round_trip() {
        for spec in EncoderSpec::all_defaults() {
            assert_eq!(EncoderSpec::from_name(spec.name()).unwrap(), spec);
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<EncoderSpec>(&json).unwrap(), spec);
        }
        assert_eq!(EncoderSpec::from_name("trans").unwrap(), EncoderSpec::transformer());
        assert!(EncoderSpec::from_name("gru").is_err());
    }

    #[test]
    fn heading_is_unwrapped_and_relative() {
        let cmds = vec![ControlCommand::default(); 3];
        let states = [3.1, -3.1, -3.0]
            .iter()
            .map(|&heading| VehicleState {
                speed: 1.0,
                acceleration: 0.0,
                heading,
            })
            .collect::<Vec<_>>();
        let f = window_features(&cmds, &states);
        let want = [0.0, 2.0 * std::f64::consts::PI - 6.2, 2.0 * std::f64::consts::PI - 6.1];
        for (k, w) in want.iter().enumerate() {
            assert!((f[k * FEATURES + 5] - w).abs() < 1e-12, "{k}: {}", f[k * FEATURES + 5]);
        }
    }

    #[test]
    fn sinusoidal_table_values() {
        let pe = sinusoidal_encoding(3, 4);
        assert_eq!(pe.at2(0, 0), 0.0);
        assert_eq!(pe.at2(0, 1), 1.0);
        assert!((pe.at2(2, 0) - 2f64.sin()).abs() < 1e-15);
        assert!((pe.at2(2, 3) - (2.0 / 100.0f64).cos()).abs() < 1e-15);
    }
}
