//! Frozen convolutional + transformer encoder.
//!
//! The encoder is initialized deterministically from a seed and never
//! trained; its role is to map a preprocessed window to a stack of `L + 1`
//! per-layer embeddings (the conv front-end output plus every transformer
//! layer output). Downstream fusion treats each entry of that stack as one
//! expert. The whole forward path runs in `f32` so that a cached stack and a
//! recomputed one are bit-identical.

use crate::binio;
use crate::seeds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("invalid backbone config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

// ── Config ─────────────────────────────────────────────────────────────────

/// One valid (no padding) strided conv block followed by GELU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlockSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// Model width; every transformer layer emits `t_prime x d`.
    pub d: usize,
    /// Transformer layer count (the stack then has `n_layers + 1` experts).
    pub n_layers: usize,
    pub n_heads: usize,
    /// FFN hidden width as a multiple of `d`.
    pub ffn_mult: usize,
    pub conv_blocks: Vec<ConvBlockSpec>,
    /// Window length in samples the encoder accepts.
    pub input_len: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n_layers: 12,
            n_heads: 4,
            ffn_mult: 4,
            conv_blocks: vec![
                ConvBlockSpec { out_channels: 16, kernel: 8, stride: 4 },
                ConvBlockSpec { out_channels: 32, kernel: 5, stride: 2 },
                ConvBlockSpec { out_channels: 64, kernel: 4, stride: 2 },
                ConvBlockSpec { out_channels: 64, kernel: 4, stride: 2 },
            ],
            input_len: 2560,
            seed: 42,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.d == 0 || self.n_layers == 0 || self.ffn_mult == 0 {
            return Err(BackboneError::InvalidConfig(
                "d, n_layers, and ffn_mult must be positive".into(),
            ));
        }
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(BackboneError::InvalidConfig(format!(
                "n_heads {} must divide d {}",
                self.n_heads, self.d
            )));
        }
        if self.conv_blocks.is_empty() {
            return Err(BackboneError::InvalidConfig("need at least one conv block".into()));
        }
        if self.conv_blocks.last().unwrap().out_channels != self.d {
            return Err(BackboneError::InvalidConfig(format!(
                "last conv block must emit d = {} channels",
                self.d
            )));
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 {
                return Err(BackboneError::InvalidConfig(format!(
                    "conv block {i} has a zero field"
                )));
            }
        }
        self.time_lengths()?;
        Ok(())
    }

    /// Time length after each conv block, starting with the raw input:
    /// `t_out = floor((t_in - kernel) / stride) + 1`.
    pub fn time_lengths(&self) -> Result<Vec<usize>, BackboneError> {
        let mut t = self.input_len;
        let mut out = vec![t];
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if t < b.kernel {
                return Err(BackboneError::InvalidConfig(format!(
                    "conv block {i}: time length {t} shorter than kernel {}",
                    b.kernel
                )));
            }
            t = (t - b.kernel) / b.stride + 1;
            out.push(t);
        }
        Ok(out)
    }

    /// Frames per window after the conv front-end.
    pub fn t_prime(&self) -> Result<usize, BackboneError> {
        Ok(*self.time_lengths()?.last().unwrap())
    }
}

// ── Parameters ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
struct ConvBlock {
    spec: ConvBlockSpec,
    in_channels: usize,
    /// `[c_out][c_in][k]` row-major.
    weight: Vec<f32>,
    bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerNorm {
    gamma: Vec<f32>,
    beta: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
struct TransformerLayer {
    /// Attention projections, each `[d][d]` row-major `[in][out]`.
    wq: Vec<f32>,
    bq: Vec<f32>,
    wk: Vec<f32>,
    bk: Vec<f32>,
    wv: Vec<f32>,
    bv: Vec<f32>,
    wo: Vec<f32>,
    bo: Vec<f32>,
    ln1: LayerNorm,
    /// FFN: `[d][ffn]` and `[ffn][d]`.
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: Vec<f32>,
    ln2: LayerNorm,
}

/// The full frozen parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    pub cfg: BackboneConfig,
    conv: Vec<ConvBlock>,
    layers: Vec<TransformerLayer>,
}

impl BackboneParams {
    /// Deterministic initialization in a fixed draw order (conv blocks first,
    /// then per layer q/k/v/o then FFN). Conv weights use Kaiming-uniform
    /// bounds `sqrt(6 / fan_in)` (variance-preserving under GELU); transformer
    /// matrices use Xavier-uniform bounds `sqrt(6 / (fan_in + fan_out))`.
    /// Biases start at zero and layer norms at identity.
    pub fn init(cfg: &BackboneConfig) -> Result<Self, BackboneError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut draw = |n: usize, bound: f32| -> Vec<f32> {
            (0..n).map(|_| (2.0 * rng.random::<f32>() - 1.0) * bound).collect()
        };
        let kaiming = |fan_in: usize| (6.0 / fan_in as f32).sqrt();
        let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f32).sqrt();
        let mut conv = Vec::with_capacity(cfg.conv_blocks.len());
        let mut in_channels = 1;
        for &spec in &cfg.conv_blocks {
            let fan_in = in_channels * spec.kernel;
            conv.push(ConvBlock {
                spec,
                in_channels,
                weight: draw(spec.out_channels * fan_in, kaiming(fan_in)),
                bias: vec![0.0; spec.out_channels],
            });
            in_channels = spec.out_channels;
        }
        let d = cfg.d;
        let ffn = cfg.ffn_mult * d;
        let layers = (0..cfg.n_layers)
            .map(|_| TransformerLayer {
                wq: draw(d * d, xavier(d, d)),
                bq: vec![0.0; d],
                wk: draw(d * d, xavier(d, d)),
                bk: vec![0.0; d],
                wv: draw(d * d, xavier(d, d)),
                bv: vec![0.0; d],
                wo: draw(d * d, xavier(d, d)),
                bo: vec![0.0; d],
                ln1: LayerNorm { gamma: vec![1.0; d], beta: vec![0.0; d] },
                w1: draw(d * ffn, xavier(d, ffn)),
                b1: vec![0.0; ffn],
                w2: draw(ffn * d, xavier(ffn, d)),
                b2: vec![0.0; d],
                ln2: LayerNorm { gamma: vec![1.0; d], beta: vec![0.0; d] },
            })
            .collect();
        Ok(Self { cfg: cfg.clone(), conv, layers })
    }

    /// Visit every parameter tensor in canonical order.
    fn visit(&self, mut f: impl FnMut(&[f32])) {
        for b in &self.conv {
            f(&b.weight);
            f(&b.bias);
        }
        for l in &self.layers {
            for t in [
                &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1.gamma,
                &l.ln1.beta, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2.gamma, &l.ln2.beta,
            ] {
                f(t);
            }
        }
    }

    /// Total parameter count (frozen; none of these are ever trained).
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|t| n += t.len());
        n
    }

    /// FNV-1a checksum over the little-endian bytes of every parameter in
    /// canonical order. Training must leave this value unchanged.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        self.visit(|t| {
            for v in t {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        });
        seeds::fnv1a(&bytes)
    }
}

// ── Forward ────────────────────────────────────────────────────────────────

fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_56;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

/// `y[t][j] = b[j] + sum_i x[t][i] * w[i][j]` for row-major `x: t x din`,
/// `w: din x dout`.
fn matmul_bias(x: &[f32], w: &[f32], b: &[f32], t: usize, din: usize, dout: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; t * dout];
    for row in 0..t {
        let xr = &x[row * din..(row + 1) * din];
        let yr = &mut y[row * dout..(row + 1) * dout];
        yr.copy_from_slice(b);
        for (i, &xi) in xr.iter().enumerate() {
            let wr = &w[i * dout..(i + 1) * dout];
            for (yj, &wj) in yr.iter_mut().zip(wr) {
                *yj += xi * wj;
            }
        }
    }
    y
}

fn layer_norm(x: &mut [f32], d: usize, ln: &LayerNorm) {
    const EPS: f32 = 1e-5;
    for row in x.chunks_exact_mut(d) {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * ln.gamma[j] + ln.beta[j];
        }
    }
}

/// Sinusoidal positional encoding, `t_prime x d` row-major:
/// `pe[t][2i] = sin(t / 10000^(2i/d))`, `pe[t][2i+1] = cos(t / 10000^(2i/d))`.
pub fn positional_encoding(t_prime: usize, d: usize) -> Vec<f32> {
    let mut pe = vec![0.0f32; t_prime * d];
    for t in 0..t_prime {
        for j in 0..d {
            let pair = (j / 2 * 2) as f32;
            let rate = (t as f32) / 10000f32.powf(pair / d as f32);
            pe[t * d + j] = if j % 2 == 0 { rate.sin() } else { rate.cos() };
        }
    }
    pe
}

/// Conv front-end only: maps `input_len` samples to `t_prime x d` frames
/// (row-major, no positional encoding yet).
pub fn conv_forward(params: &BackboneParams, samples: &[f64]) -> Result<Vec<f32>, BackboneError> {
    if samples.len() != params.cfg.input_len {
        return Err(BackboneError::ShapeMismatch {
            expected: format!("{} samples", params.cfg.input_len),
            got: format!("{}", samples.len()),
        });
    }
    // Channel-major `[c][t]` through the conv stack.
    let mut x: Vec<f32> = samples.iter().map(|&v| v as f32).collect();
    let mut channels = 1usize;
    let mut t_in = x.len();
    for block in &params.conv {
        let (k, s, c_out) = (block.spec.kernel, block.spec.stride, block.spec.out_channels);
        let t_out = (t_in - k) / s + 1;
        let mut y = vec![0.0f32; c_out * t_out];
        for co in 0..c_out {
            let yrow = &mut y[co * t_out..(co + 1) * t_out];
            yrow.fill(block.bias[co]);
            for ci in 0..channels {
                let xrow = &x[ci * t_in..(ci + 1) * t_in];
                let wrow = &block.weight[(co * channels + ci) * k..(co * channels + ci + 1) * k];
                for (t, yv) in yrow.iter_mut().enumerate() {
                    let base = t * s;
                    let mut acc = 0.0f32;
                    for (kk, &w) in wrow.iter().enumerate() {
                        acc += w * xrow[base + kk];
                    }
                    *yv += acc;
                }
            }
        }
        for v in y.iter_mut() {
            *v = gelu(*v);
        }
        x = y;
        channels = c_out;
        t_in = t_out;
    }
    // Transpose `[c][t]` to frame-major `[t][c]`.
    let (t_prime, d) = (t_in, channels);
    let mut frames = vec![0.0f32; t_prime * d];
    for c in 0..d {
        for t in 0..t_prime {
            frames[t * d + c] = x[c * t_prime + t];
        }
    }
    Ok(frames)
}

/// One pre-norm transformer layer applied to a `t_prime x d` input:
/// `x = x + MHA(LN1(x))`, then `x = x + FFN(LN2(x))`. The un-normalized
/// residual stream is the layer's output, so per-window information in the
/// conv features survives through every captured expert.
pub fn layer_forward(
    params: &BackboneParams,
    layer_idx: usize,
    input: &[f32],
) -> Result<Vec<f32>, BackboneError> {
    let d = params.cfg.d;
    let t_prime = params.cfg.t_prime()?;
    if layer_idx >= params.layers.len() {
        return Err(BackboneError::ShapeMismatch {
            expected: format!("layer index < {}", params.layers.len()),
            got: format!("{layer_idx}"),
        });
    }
    if input.len() != t_prime * d {
        return Err(BackboneError::ShapeMismatch {
            expected: format!("{t_prime} x {d} input"),
            got: format!("{} values", input.len()),
        });
    }
    let l = &params.layers[layer_idx];
    let heads = params.cfg.n_heads;
    let hw = d / heads;

    let mut normed = input.to_vec();
    layer_norm(&mut normed, d, &l.ln1);
    let q = matmul_bias(&normed, &l.wq, &l.bq, t_prime, d, d);
    let k = matmul_bias(&normed, &l.wk, &l.bk, t_prime, d, d);
    let v = matmul_bias(&normed, &l.wv, &l.bv, t_prime, d, d);

    let scale = 1.0 / (hw as f32).sqrt();
    let mut ctx = vec![0.0f32; t_prime * d];
    let mut scores = vec![0.0f32; t_prime];
    for h in 0..heads {
        let off = h * hw;
        for tq in 0..t_prime {
            let qrow = &q[tq * d + off..tq * d + off + hw];
            for (tk, sc) in scores.iter_mut().enumerate() {
                let krow = &k[tk * d + off..tk * d + off + hw];
                *sc = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            let max = scores.iter().cloned().fold(f32::MIN, f32::max);
            let mut denom = 0.0f32;
            for sc in scores.iter_mut() {
                *sc = (*sc - max).exp();
                denom += *sc;
            }
            let crow = &mut ctx[tq * d + off..tq * d + off + hw];
            for (tk, &a) in scores.iter().enumerate() {
                let w = a / denom;
                let vrow = &v[tk * d + off..tk * d + off + hw];
                for (cv, &vv) in crow.iter_mut().zip(vrow) {
                    *cv += w * vv;
                }
            }
        }
    }
    let attn_out = matmul_bias(&ctx, &l.wo, &l.bo, t_prime, d, d);

    let mut x: Vec<f32> = input.iter().zip(&attn_out).map(|(a, b)| a + b).collect();

    let mut normed = x.clone();
    layer_norm(&mut normed, d, &l.ln2);
    let ffn = params.cfg.ffn_mult * d;
    let mut hidden = matmul_bias(&normed, &l.w1, &l.b1, t_prime, d, ffn);
    for v in hidden.iter_mut() {
        *v = gelu(*v);
    }
    let ffn_out = matmul_bias(&hidden, &l.w2, &l.b2, t_prime, ffn, d);
    for (xv, &fv) in x.iter_mut().zip(&ffn_out) {
        *xv += fv;
    }
    Ok(x)
}

/// Run the whole encoder, capturing every expert's output: entry 0 is the
/// positionally-encoded conv output and entry `i` is transformer layer `i`.
pub fn forward_all(params: &BackboneParams, samples: &[f64]) -> Result<EmbeddingStack, BackboneError> {
    let d = params.cfg.d;
    let t_prime = params.cfg.t_prime()?;
    let mut frames = conv_forward(params, samples)?;
    let pe = positional_encoding(t_prime, d);
    for (f, &p) in frames.iter_mut().zip(&pe) {
        *f += p;
    }
    let mut layers = Vec::with_capacity(params.cfg.n_layers + 1);
    layers.push(frames.clone());
    let mut x = frames;
    for i in 0..params.cfg.n_layers {
        x = layer_forward(params, i, &x)?;
        layers.push(x.clone());
    }
    Ok(EmbeddingStack { t_prime, d, layers })
}

// ── Embedding stack ────────────────────────────────────────────────────────

const STACK_MAGIC: &[u8; 4] = b"NMOE";
const STACK_VERSION: u32 = 1;

/// Captured per-expert embeddings for one window: `n_experts` matrices of
/// shape `t_prime x d`, stored row-major in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStack {
    pub t_prime: usize,
    pub d: usize,
    pub layers: Vec<Vec<f32>>,
}

impl EmbeddingStack {
    pub fn n_experts(&self) -> usize {
        self.layers.len()
    }

    /// Mean over time of one expert's output, accumulated in f64.
    pub fn pooled_expert(&self, expert: usize) -> Vec<f64> {
        let layer = &self.layers[expert];
        let mut out = vec![0.0f64; self.d];
        for frame in layer.chunks_exact(self.d) {
            for (o, &v) in out.iter_mut().zip(frame) {
                *o += v as f64;
            }
        }
        for o in out.iter_mut() {
            *o /= self.t_prime as f64;
        }
        out
    }

    /// Time-pooled vectors for every expert, `n_experts x d`.
    pub fn pooled(&self) -> Vec<Vec<f64>> {
        (0..self.n_experts()).map(|e| self.pooled_expert(e)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), BackboneError> {
        let io = |source| BackboneError::Io { path: path.to_path_buf(), source };
        let file = fs::File::create(path).map_err(io)?;
        let mut w = BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            binio::write_tag(&mut w, STACK_MAGIC)?;
            binio::write_u32(&mut w, STACK_VERSION)?;
            binio::write_u32(&mut w, self.layers.len() as u32)?;
            binio::write_u32(&mut w, self.t_prime as u32)?;
            binio::write_u32(&mut w, self.d as u32)?;
            for layer in &self.layers {
                binio::write_f32_slice(&mut w, layer)?;
            }
            w.flush()
        })();
        res.map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, BackboneError> {
        let io = |source| BackboneError::Io { path: path.to_path_buf(), source };
        let file = fs::File::open(path).map_err(io)?;
        let mut r = BufReader::new(file);
        let fmt = |reason: String| BackboneError::Format { path: path.to_path_buf(), reason };
        let tag = binio::read_tag(&mut r).map_err(io)?;
        if &tag != STACK_MAGIC {
            return Err(fmt(format!("bad magic {tag:?}")));
        }
        let version = binio::read_u32(&mut r).map_err(io)?;
        if version != STACK_VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let n = binio::read_u32(&mut r).map_err(io)? as usize;
        let t_prime = binio::read_u32(&mut r).map_err(io)? as usize;
        let d = binio::read_u32(&mut r).map_err(io)? as usize;
        if n == 0 || t_prime == 0 || d == 0 || n > 1 << 20 || t_prime * d > 1 << 28 {
            return Err(fmt(format!("implausible dimensions {n} x {t_prime} x {d}")));
        }
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let layer = binio::read_f32_vec(&mut r, t_prime * d)
                .map_err(|_| fmt(format!("truncated payload at expert {i}")))?;
            layers.push(layer);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(fmt("trailing bytes after payload".into()));
        }
        Ok(Self { t_prime, d, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn tiny_cfg() -> BackboneConfig {
        BackboneConfig {
            d: 8,
            n_layers: 2,
            n_heads: 2,
            ffn_mult: 2,
            conv_blocks: vec![
                ConvBlockSpec { out_channels: 4, kernel: 4, stride: 2 },
                ConvBlockSpec { out_channels: 8, kernel: 3, stride: 2 },
            ],
            input_len: 64,
            seed: 9,
        }
    }

    #[test]
    fn default_time_chain_ends_at_78_frames() {
        let cfg = BackboneConfig::default();
        assert_eq!(cfg.time_lengths().unwrap(), vec![2560, 639, 318, 158, 78]);
        assert_eq!(cfg.t_prime().unwrap(), 78);
    }

    #[test]
    fn forward_produces_thirteen_experts_of_78_by_64() {
        let cfg = BackboneConfig::default();
        let params = BackboneParams::init(&cfg).unwrap();
        let samples: Vec<f64> = (0..2560).map(|i| (i as f64 * 0.01).sin()).collect();
        let stack = forward_all(&params, &samples).unwrap();
        assert_eq!(stack.n_experts(), 13);
        assert_eq!((stack.t_prime, stack.d), (78, 64));
        for layer in &stack.layers {
            assert_eq!(layer.len(), 78 * 64);
            assert!(layer.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn captured_stack_obeys_the_nesting_invariant_bitwise() {
        let cfg = tiny_cfg();
        let params = BackboneParams::init(&cfg).unwrap();
        let samples: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).cos()).collect();
        let stack = forward_all(&params, &samples).unwrap();
        for i in 0..cfg.n_layers {
            let recomputed = layer_forward(&params, i, &stack.layers[i]).unwrap();
            assert_eq!(recomputed, stack.layers[i + 1], "layer {i} output must match capture");
        }
    }

    #[test]
    fn expert_zero_is_conv_output_plus_positions() {
        let cfg = tiny_cfg();
        let params = BackboneParams::init(&cfg).unwrap();
        let samples: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        let stack = forward_all(&params, &samples).unwrap();
        let conv = conv_forward(&params, &samples).unwrap();
        let pe = positional_encoding(stack.t_prime, stack.d);
        let expected: Vec<f32> = conv.iter().zip(&pe).map(|(a, b)| a + b).collect();
        assert_eq!(stack.layers[0], expected);
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = BackboneConfig::default();
        let a = BackboneParams::init(&cfg).unwrap();
        let b = BackboneParams::init(&cfg).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a, b);
        let c = BackboneParams::init(&BackboneConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = BackboneConfig::default();
        let params = BackboneParams::init(&cfg).unwrap();
        let (d, f) = (cfg.d, cfg.ffn_mult * cfg.d);
        let mut expect = 0;
        let mut c_in = 1;
        for b in &cfg.conv_blocks {
            expect += b.out_channels * c_in * b.kernel + b.out_channels;
            c_in = b.out_channels;
        }
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 2 * 2 * d;
        expect += cfg.n_layers * per_layer;
        assert_eq!(params.param_count(), expect);
        assert_eq!(params.param_count(), 627_248);
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let params = BackboneParams::init(&cfg).unwrap();
        let samples: Vec<f64> = (0..64).map(|i| ((i * 7) % 13) as f64).collect();
        let a = forward_all(&params, &samples).unwrap();
        let b = forward_all(&params, &samples).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_input_length_is_a_shape_error() {
        let params = BackboneParams::init(&tiny_cfg()).unwrap();
        assert!(matches!(
            forward_all(&params, &[0.0; 63]),
            Err(BackboneError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = BackboneConfig { n_heads: 5, ..BackboneConfig::default() };
        assert!(matches!(cfg.validate(), Err(BackboneError::InvalidConfig(_))));
        let cfg = BackboneConfig { input_len: 4, ..BackboneConfig::default() };
        assert!(matches!(cfg.validate(), Err(BackboneError::InvalidConfig(_))));
        let mut cfg = BackboneConfig::default();
        cfg.conv_blocks.last_mut().unwrap().out_channels = 32;
        assert!(matches!(cfg.validate(), Err(BackboneError::InvalidConfig(_))));
    }

    #[test]
    fn stack_survives_a_save_load_round_trip() {
        let dir = tempdir().unwrap();
        let params = BackboneParams::init(&tiny_cfg()).unwrap();
        let samples: Vec<f64> = (0..64).map(|i| (i as f64).sqrt()).collect();
        let stack = forward_all(&params, &samples).unwrap();
        let path = dir.path().join("w.emb");
        stack.save(&path).unwrap();
        let back = EmbeddingStack::load(&path).unwrap();
        assert_eq!(stack, back);
    }

    #[test]
    fn corrupt_stack_files_are_rejected() {
        let dir = tempdir().unwrap();
        let params = BackboneParams::init(&tiny_cfg()).unwrap();
        let samples = vec![0.5f64; 64];
        let stack = forward_all(&params, &samples).unwrap();
        let path = dir.path().join("w.emb");
        stack.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();

        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(EmbeddingStack::load(&path), Err(BackboneError::Format { .. })));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&path, &bad).unwrap();
        assert!(matches!(EmbeddingStack::load(&path), Err(BackboneError::Format { .. })));

        let mut extended = bytes;
        extended.push(0);
        fs::write(&path, &extended).unwrap();
        assert!(matches!(EmbeddingStack::load(&path), Err(BackboneError::Format { .. })));
    }

    #[test]
    fn pooled_matches_a_manual_mean()
    {
        let stack = EmbeddingStack {
            t_prime: 2,
            d: 3,
            layers: vec![vec![1.0, 2.0, 3.0, 5.0, 6.0, 7.0]],
        };
        assert_eq!(stack.pooled_expert(0), vec![3.0, 4.0, 5.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn shape_law_holds_for_random_configs(
            d_base in 1usize..3,
            heads in 1usize..3,
            layers in 1usize..3,
            k1 in 2usize..6,
            s1 in 1usize..4,
            extra in 16usize..64,
            seed in 0u64..1000,
        ) {
            let d = d_base * heads * 2;
            let input_len = k1 + extra;
            let cfg = BackboneConfig {
                d,
                n_layers: layers,
                n_heads: heads,
                ffn_mult: 2,
                conv_blocks: vec![ConvBlockSpec { out_channels: d, kernel: k1, stride: s1 }],
                input_len,
                seed,
            };
            prop_assume!(cfg.validate().is_ok());
            let params = BackboneParams::init(&cfg).unwrap();
            let samples: Vec<f64> = (0..input_len).map(|i| (i as f64 * 0.17).sin()).collect();
            let stack = forward_all(&params, &samples).unwrap();
            let t_expected = (input_len - k1) / s1 + 1;
            prop_assert_eq!(stack.t_prime, t_expected);
            prop_assert_eq!(stack.n_experts(), layers + 1);
            for layer in &stack.layers {
                prop_assert_eq!(layer.len(), t_expected * d);
                prop_assert!(layer.iter().all(|v| v.is_finite()));
            }
        }
    }
}
