//! Gated fusion over the frozen expert stack, plus the trainable
//! classification head.
//!
//! Every expert contributes one time-pooled `d`-vector per window. A softmax
//! gate assigns one weight per expert (Static mode: one free logit per
//! expert; Conditioned mode: each expert's logit is a dot product with the
//! time-pooled input that the expert itself consumed). The fused vector then
//! passes through dense-128 / ReLU / batch-norm / dropout / dense-5. All
//! trainable math runs in f64 with hand-derived analytic gradients,
//! including the batch-statistics path through batch norm.

use crate::backbone::EmbeddingStack;
use crate::binio;
use crate::signals::EmotionClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DROPOUT_RATE: f64 = 0.3;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("batch too small: got {got}, need at least 2 for batch norm")]
    BatchTooSmall { got: usize },
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

// ── Gating ─────────────────────────────────────────────────────────────────

/// Gate parameters. Both modes start at zero, so the initial gate is exactly
/// uniform (`alpha_i = 1 / n_experts`).
#[derive(Debug, Clone, PartialEq)]
pub enum GatingParams {
    /// One free logit per expert, independent of the input.
    Static { theta: Vec<f64> },
    /// One weight row per expert; expert `i`'s logit is
    /// `w[i] . pooled_input(i)`, where expert `i`'s input is expert `i - 1`'s
    /// output (expert 0, the conv front-end, gates on its own output).
    Conditioned { w: Vec<f64>, n_experts: usize, d: usize },
}

impl GatingParams {
    pub fn new_static(n_experts: usize) -> Self {
        Self::Static { theta: vec![0.0; n_experts] }
    }

    pub fn new_conditioned(n_experts: usize, d: usize) -> Self {
        Self::Conditioned { w: vec![0.0; n_experts * d], n_experts, d }
    }

    pub fn n_experts(&self) -> usize {
        match self {
            Self::Static { theta } => theta.len(),
            Self::Conditioned { n_experts, .. } => *n_experts,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            Self::Static { .. } => "static",
            Self::Conditioned { .. } => "conditioned",
        }
    }
}

/// Index of the pooled vector that conditions expert `i`'s logit.
fn gate_input_index(expert: usize) -> usize {
    expert.saturating_sub(1)
}

/// Per-expert gate weights for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphas {
    /// Pre-softmax logits, one per expert.
    pub z: Vec<f64>,
    /// Softmax weights; positive, summing to 1.
    pub weights: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::MIN, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

/// Compute the gate for one window from its pooled expert vectors.
pub fn compute_alphas(gating: &GatingParams, pooled: &[Vec<f64>]) -> Result<Alphas, FusionError> {
    let n = gating.n_experts();
    if pooled.len() != n {
        return Err(FusionError::ShapeMismatch {
            expected: format!("{n} pooled expert vectors"),
            got: format!("{}", pooled.len()),
        });
    }
    let z = match gating {
        GatingParams::Static { theta } => theta.clone(),
        GatingParams::Conditioned { w, d, .. } => (0..n)
            .map(|i| {
                let input = &pooled[gate_input_index(i)];
                w[i * d..(i + 1) * d].iter().zip(input).map(|(a, b)| a * b).sum()
            })
            .collect(),
    };
    let weights = softmax(&z);
    Ok(Alphas { z, weights })
}

/// Fused representation: the alpha-weighted sum of pooled expert vectors.
pub fn fuse(alphas: &Alphas, pooled: &[Vec<f64>]) -> Vec<f64> {
    let d = pooled[0].len();
    let mut v = vec![0.0f64; d];
    for (a, p) in alphas.weights.iter().zip(pooled) {
        for (vo, &pi) in v.iter_mut().zip(p) {
            *vo += a * pi;
        }
    }
    v
}

// ── Head ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub d: usize,
    pub hidden: usize,
    pub n_classes: usize,
    /// `[d][hidden]` row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Batch-norm running statistics (not trainable).
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// `[hidden][n_classes]` row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl HeadParams {
    pub fn init(d: usize, hidden: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound).collect()
        };
        Self {
            d,
            hidden,
            n_classes,
            w1: draw(d * hidden, d),
            b1: vec![0.0; hidden],
            gamma: vec![1.0; hidden],
            beta: vec![0.0; hidden],
            running_mean: vec![0.0; hidden],
            running_var: vec![1.0; hidden],
            w2: draw(hidden * n_classes, hidden),
            b2: vec![0.0; n_classes],
        }
    }
}

/// Gate plus head: everything that trains.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub gating: GatingParams,
    pub head: HeadParams,
}

impl Model {
    /// Deterministic init: head weights uniform in `[-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)]`, gate at zero (uniform alphas).
    pub fn init(
        n_experts: usize,
        d: usize,
        hidden: usize,
        n_classes: usize,
        conditioned: bool,
        seed: u64,
    ) -> Self {
        let gating = if conditioned {
            GatingParams::new_conditioned(n_experts, d)
        } else {
            GatingParams::new_static(n_experts)
        };
        Self { gating, head: HeadParams::init(d, hidden, n_classes, seed) }
    }

    fn gating_vec(&self) -> &Vec<f64> {
        match &self.gating {
            GatingParams::Static { theta } => theta,
            GatingParams::Conditioned { w, .. } => w,
        }
    }

    #[cfg(test)]
    fn gating_vec_mut(&mut self) -> &mut Vec<f64> {
        match &mut self.gating {
            GatingParams::Static { theta } => theta,
            GatingParams::Conditioned { w, .. } => w,
        }
    }

    /// Trainable tensors in optimizer order:
    /// `[gating, w1, b1, gamma, beta, w2, b2]`.
    pub fn tensors(&self) -> [&Vec<f64>; 7] {
        [
            self.gating_vec(),
            &self.head.w1,
            &self.head.b1,
            &self.head.gamma,
            &self.head.beta,
            &self.head.w2,
            &self.head.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 7] {
        let Model { gating, head } = self;
        let g = match gating {
            GatingParams::Static { theta } => theta,
            GatingParams::Conditioned { w, .. } => w,
        };
        [g, &mut head.w1, &mut head.b1, &mut head.gamma, &mut head.beta, &mut head.w2, &mut head.b2]
    }

    /// Trainable parameter count (running batch-norm stats excluded).
    pub fn trainable_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

// ── Loss and gradients ─────────────────────────────────────────────────────

/// One window ready for the trainable stage: its pooled expert vectors and
/// its label.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledWindow {
    /// `n_experts` vectors of length `d`.
    pub pooled: Vec<Vec<f64>>,
    pub label: EmotionClass,
}

impl PooledWindow {
    pub fn from_stack(stack: &EmbeddingStack, label: EmotionClass) -> Self {
        Self { pooled: stack.pooled(), label }
    }
}

/// Gradients for every trainable tensor, in the same order as
/// [`Model::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub gating: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GradientSet {
    fn zeros_like(model: &Model) -> Self {
        Self {
            gating: vec![0.0; model.gating_vec().len()],
            w1: vec![0.0; model.head.w1.len()],
            b1: vec![0.0; model.head.b1.len()],
            gamma: vec![0.0; model.head.gamma.len()],
            beta: vec![0.0; model.head.beta.len()],
            w2: vec![0.0; model.head.w2.len()],
            b2: vec![0.0; model.head.b2.len()],
        }
    }

    pub fn tensors(&self) -> [&Vec<f64>; 7] {
        [&self.gating, &self.w1, &self.b1, &self.gamma, &self.beta, &self.w2, &self.b2]
    }
}

/// Batch statistics produced by a train-phase forward; the train loop folds
/// them into the running statistics with [`apply_batch_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// `running = (1 - momentum) * running + momentum * batch`.
pub fn apply_batch_stats(head: &mut HeadParams, stats: &BatchStats, momentum: f64) {
    for (r, &b) in head.running_mean.iter_mut().zip(&stats.mean) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
    for (r, &b) in head.running_var.iter_mut().zip(&stats.var) {
        *r = (1.0 - momentum) * *r + momentum * b;
    }
}

/// Mean cross-entropy over the batch plus analytic gradients for every
/// trainable tensor. Pure: never mutates the model. Train phase normalizes
/// with batch statistics (batch size must be >= 2) and applies inverted
/// dropout driven by `dropout_seed`; eval phase uses running statistics and
/// no dropout. Returns the batch statistics in train phase so the caller
/// can update the running estimates.
pub fn loss_and_grads(
    model: &Model,
    batch: &[PooledWindow],
    phase: Phase,
    dropout_seed: u64,
) -> Result<(f64, GradientSet, Option<BatchStats>), FusionError> {
    let bsz = batch.len();
    if bsz == 0 {
        return Err(FusionError::ShapeMismatch {
            expected: "non-empty batch".into(),
            got: "0 windows".into(),
        });
    }
    if phase == Phase::Train && bsz < 2 {
        return Err(FusionError::BatchTooSmall { got: bsz });
    }
    let head = &model.head;
    let (d, hid, nc) = (head.d, head.hidden, head.n_classes);
    let n_experts = model.gating.n_experts();
    for w in batch {
        if w.pooled.len() != n_experts || w.pooled.iter().any(|p| p.len() != d) {
            return Err(FusionError::ShapeMismatch {
                expected: format!("{n_experts} pooled vectors of length {d}"),
                got: format!(
                    "{} vectors of length {}",
                    w.pooled.len(),
                    w.pooled.first().map_or(0, |p| p.len())
                ),
            });
        }
    }

    // Forward.
    let mut alphas = Vec::with_capacity(bsz);
    let mut fused = Vec::with_capacity(bsz);
    for w in batch {
        let a = compute_alphas(&model.gating, &w.pooled)?;
        fused.push(fuse(&a, &w.pooled));
        alphas.push(a);
    }

    // Dense-128 + ReLU.
    let mut pre = vec![0.0f64; bsz * hid]; // pre-activation
    let mut act = vec![0.0f64; bsz * hid]; // post-ReLU
    for (s, v) in fused.iter().enumerate() {
        let prow = &mut pre[s * hid..(s + 1) * hid];
        prow.copy_from_slice(&head.b1);
        for (i, &vi) in v.iter().enumerate() {
            let wrow = &head.w1[i * hid..(i + 1) * hid];
            for (pj, &wj) in prow.iter_mut().zip(wrow) {
                *pj += vi * wj;
            }
        }
        for (aj, &pj) in act[s * hid..(s + 1) * hid].iter_mut().zip(prow.iter()) {
            *aj = pj.max(0.0);
        }
    }

    // Batch norm.
    let (mean, var) = match phase {
        Phase::Train => {
            let mut mean = vec![0.0f64; hid];
            for s in 0..bsz {
                for j in 0..hid {
                    mean[j] += act[s * hid + j];
                }
            }
            for m in mean.iter_mut() {
                *m /= bsz as f64;
            }
            let mut var = vec![0.0f64; hid];
            for s in 0..bsz {
                for j in 0..hid {
                    let dlt = act[s * hid + j] - mean[j];
                    var[j] += dlt * dlt;
                }
            }
            for v in var.iter_mut() {
                *v /= bsz as f64;
            }
            (mean, var)
        }
        Phase::Eval => (head.running_mean.clone(), head.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0f64; bsz * hid];
    let mut bn = vec![0.0f64; bsz * hid];
    for s in 0..bsz {
        for j in 0..hid {
            let xh = (act[s * hid + j] - mean[j]) * inv_std[j];
            xhat[s * hid + j] = xh;
            bn[s * hid + j] = head.gamma[j] * xh + head.beta[j];
        }
    }

    // Inverted dropout (train only): mask entries are 0 or 1/keep.
    let keep = 1.0 - DROPOUT_RATE;
    let mask: Vec<f64> = match phase {
        Phase::Train => {
            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
            (0..bsz * hid)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        }
        Phase::Eval => vec![1.0; bsz * hid],
    };
    let dropped: Vec<f64> = bn.iter().zip(&mask).map(|(b, m)| b * m).collect();

    // Final dense + softmax cross-entropy.
    let mut loss = 0.0f64;
    let mut dlogits = vec![0.0f64; bsz * nc];
    let mut logits = vec![0.0f64; bsz * nc];
    for s in 0..bsz {
        let drow = &dropped[s * hid..(s + 1) * hid];
        let lrow = &mut logits[s * nc..(s + 1) * nc];
        lrow.copy_from_slice(&head.b2);
        for (j, &dj) in drow.iter().enumerate() {
            let wrow = &head.w2[j * nc..(j + 1) * nc];
            for (lc, &wc) in lrow.iter_mut().zip(wrow) {
                *lc += dj * wc;
            }
        }
        let probs = softmax(lrow);
        let y = batch[s].label.index();
        loss -= probs[y].max(1e-300).ln();
        for (c, &p) in probs.iter().enumerate() {
            dlogits[s * nc + c] = (p - if c == y { 1.0 } else { 0.0 }) / bsz as f64;
        }
    }
    loss /= bsz as f64;

    // Backward.
    let mut grads = GradientSet::zeros_like(model);
    let mut d_dropped = vec![0.0f64; bsz * hid];
    for s in 0..bsz {
        let drow = &dropped[s * hid..(s + 1) * hid];
        let glrow = &dlogits[s * nc..(s + 1) * nc];
        for c in 0..nc {
            grads.b2[c] += glrow[c];
        }
        for j in 0..hid {
            let wrow = &head.w2[j * nc..(j + 1) * nc];
            let mut acc = 0.0;
            for (c, &wc) in wrow.iter().enumerate() {
                grads.w2[j * nc + c] += drow[j] * glrow[c];
                acc += wc * glrow[c];
            }
            d_dropped[s * hid + j] = acc;
        }
    }
    // Through dropout and the affine part of batch norm.
    let mut d_xhat = vec![0.0f64; bsz * hid];
    for s in 0..bsz {
        for j in 0..hid {
            let dbn = d_dropped[s * hid + j] * mask[s * hid + j];
            grads.gamma[j] += dbn * xhat[s * hid + j];
            grads.beta[j] += dbn;
            d_xhat[s * hid + j] = dbn * head.gamma[j];
        }
    }
    // Through the normalization itself.
    let mut d_act = vec![0.0f64; bsz * hid];
    match phase {
        Phase::Train => {
            // Batch statistics depend on the activations, so the full
            // Jacobian applies:
            // d_act = inv_std * (d_xhat - mean(d_xhat) - xhat * mean(d_xhat * xhat)).
            for j in 0..hid {
                let mut sum_dx = 0.0;
                let mut sum_dx_xhat = 0.0;
                for s in 0..bsz {
                    sum_dx += d_xhat[s * hid + j];
                    sum_dx_xhat += d_xhat[s * hid + j] * xhat[s * hid + j];
                }
                let mean_dx = sum_dx / bsz as f64;
                let mean_dx_xhat = sum_dx_xhat / bsz as f64;
                for s in 0..bsz {
                    d_act[s * hid + j] = inv_std[j]
                        * (d_xhat[s * hid + j] - mean_dx - xhat[s * hid + j] * mean_dx_xhat);
                }
            }
        }
        Phase::Eval => {
            for s in 0..bsz {
                for j in 0..hid {
                    d_act[s * hid + j] = d_xhat[s * hid + j] * inv_std[j];
                }
            }
        }
    }
    // Through ReLU and dense-128, into the fused vector.
    let mut d_fused = vec![0.0f64; bsz * d];
    for s in 0..bsz {
        let vrow = &fused[s];
        for j in 0..hid {
            let dh = if pre[s * hid + j] > 0.0 { d_act[s * hid + j] } else { 0.0 };
            if dh == 0.0 {
                continue;
            }
            grads.b1[j] += dh;
            for i in 0..d {
                grads.w1[i * hid + j] += vrow[i] * dh;
                d_fused[s * d + i] += head.w1[i * hid + j] * dh;
            }
        }
    }
    // Through the fusion into the gate.
    for (s, w) in batch.iter().enumerate() {
        let dv = &d_fused[s * d..(s + 1) * d];
        let a = &alphas[s];
        // d_alpha_i = dv . pooled_i, then the softmax Jacobian.
        let d_alpha: Vec<f64> =
            w.pooled.iter().map(|p| p.iter().zip(dv).map(|(pi, di)| pi * di).sum()).collect();
        let inner: f64 = a.weights.iter().zip(&d_alpha).map(|(ai, dai)| ai * dai).sum();
        let dz: Vec<f64> =
            a.weights.iter().zip(&d_alpha).map(|(ai, dai)| ai * (dai - inner)).collect();
        match &model.gating {
            GatingParams::Static { .. } => {
                for (g, &dzi) in grads.gating.iter_mut().zip(&dz) {
                    *g += dzi;
                }
            }
            GatingParams::Conditioned { .. } => {
                for (i, &dzi) in dz.iter().enumerate() {
                    let input = &w.pooled[gate_input_index(i)];
                    for (g, &pi) in grads.gating[i * d..(i + 1) * d].iter_mut().zip(input) {
                        *g += dzi * pi;
                    }
                }
            }
        }
    }

    let stats = match phase {
        Phase::Train => Some(BatchStats { mean, var }),
        Phase::Eval => None,
    };
    Ok((loss, grads, stats))
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_tiebreak_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Eval-phase logits for one window (running batch-norm statistics, no
/// dropout).
pub fn eval_logits(model: &Model, pooled: &[Vec<f64>]) -> Result<Vec<f64>, FusionError> {
    let head = &model.head;
    let alphas = compute_alphas(&model.gating, pooled)?;
    let v = fuse(&alphas, pooled);
    if v.len() != head.d {
        return Err(FusionError::ShapeMismatch {
            expected: format!("fused vector of length {}", head.d),
            got: format!("{}", v.len()),
        });
    }
    let mut h = head.b1.clone();
    for (i, &vi) in v.iter().enumerate() {
        let wrow = &head.w1[i * head.hidden..(i + 1) * head.hidden];
        for (hj, &wj) in h.iter_mut().zip(wrow) {
            *hj += vi * wj;
        }
    }
    let mut logits = head.b2.clone();
    for j in 0..head.hidden {
        let r = h[j].max(0.0);
        let xh = (r - head.running_mean[j]) / (head.running_var[j] + BN_EPS).sqrt();
        let bn = head.gamma[j] * xh + head.beta[j];
        let wrow = &head.w2[j * head.n_classes..(j + 1) * head.n_classes];
        for (lc, &wc) in logits.iter_mut().zip(wrow) {
            *lc += bn * wc;
        }
    }
    Ok(logits)
}

/// Predicted class for one window (eval phase; ties go to the lowest class
/// index).
pub fn predict(model: &Model, pooled: &[Vec<f64>]) -> Result<EmotionClass, FusionError> {
    let logits = eval_logits(model, pooled)?;
    let idx = argmax_tiebreak_lowest(&logits);
    EmotionClass::from_index(idx).ok_or_else(|| FusionError::ShapeMismatch {
        expected: format!("class index < {}", EmotionClass::COUNT),
        got: format!("{idx}"),
    })
}

// ── Checkpoint ─────────────────────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 4] = b"NMCK";
const CKPT_VERSION: u32 = 1;
const TAG_GATE: &[u8; 4] = b"GATE";
const TAG_HEAD: &[u8; 4] = b"HEAD";

impl Model {
    pub fn save(&self, path: &Path) -> Result<(), FusionError> {
        let io = |source| FusionError::Io { path: path.to_path_buf(), source };
        let file = fs::File::create(path).map_err(io)?;
        let mut w = BufWriter::new(file);
        let res: std::io::Result<()> = (|| {
            binio::write_tag(&mut w, CKPT_MAGIC)?;
            binio::write_u32(&mut w, CKPT_VERSION)?;
            binio::write_tag(&mut w, TAG_GATE)?;
            match &self.gating {
                GatingParams::Static { theta } => {
                    binio::write_u32(&mut w, 0)?;
                    binio::write_u32(&mut w, theta.len() as u32)?;
                    binio::write_u32(&mut w, 0)?;
                    binio::write_f64_slice(&mut w, theta)?;
                }
                GatingParams::Conditioned { w: wg, n_experts, d } => {
                    binio::write_u32(&mut w, 1)?;
                    binio::write_u32(&mut w, *n_experts as u32)?;
                    binio::write_u32(&mut w, *d as u32)?;
                    binio::write_f64_slice(&mut w, wg)?;
                }
            }
            binio::write_tag(&mut w, TAG_HEAD)?;
            let h = &self.head;
            binio::write_u32(&mut w, h.d as u32)?;
            binio::write_u32(&mut w, h.hidden as u32)?;
            binio::write_u32(&mut w, h.n_classes as u32)?;
            for t in [
                &h.w1, &h.b1, &h.gamma, &h.beta, &h.running_mean, &h.running_var, &h.w2, &h.b2,
            ] {
                binio::write_f64_slice(&mut w, t)?;
            }
            w.flush()
        })();
        res.map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        let io = |source| FusionError::Io { path: path.to_path_buf(), source };
        let fmt = |reason: String| FusionError::Format { path: path.to_path_buf(), reason };
        let file = fs::File::open(path).map_err(io)?;
        let mut r = BufReader::new(file);
        if &binio::read_tag(&mut r).map_err(io)? != CKPT_MAGIC {
            return Err(fmt("bad magic".into()));
        }
        let version = binio::read_u32(&mut r).map_err(io)?;
        if version != CKPT_VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        if &binio::read_tag(&mut r).map_err(io)? != TAG_GATE {
            return Err(fmt("missing GATE section".into()));
        }
        let kind = binio::read_u32(&mut r).map_err(io)?;
        let n_experts = binio::read_u32(&mut r).map_err(io)? as usize;
        let gd = binio::read_u32(&mut r).map_err(io)? as usize;
        if n_experts == 0 || n_experts > 1 << 16 || gd > 1 << 16 {
            return Err(fmt(format!("implausible gate dimensions {n_experts} x {gd}")));
        }
        let gating = match kind {
            0 => GatingParams::Static {
                theta: binio::read_f64_vec(&mut r, n_experts)
                    .map_err(|_| fmt("truncated gate payload".into()))?,
            },
            1 => GatingParams::Conditioned {
                w: binio::read_f64_vec(&mut r, n_experts * gd)
                    .map_err(|_| fmt("truncated gate payload".into()))?,
                n_experts,
                d: gd,
            },
            k => return Err(fmt(format!("unknown gate kind {k}"))),
        };
        if &binio::read_tag(&mut r).map_err(io)? != TAG_HEAD {
            return Err(fmt("missing HEAD section".into()));
        }
        let d = binio::read_u32(&mut r).map_err(io)? as usize;
        let hidden = binio::read_u32(&mut r).map_err(io)? as usize;
        let n_classes = binio::read_u32(&mut r).map_err(io)? as usize;
        if d == 0 || hidden == 0 || n_classes == 0 || d * hidden > 1 << 28 {
            return Err(fmt(format!("implausible head dimensions {d} x {hidden} x {n_classes}")));
        }
        let mut tensor = |n: usize| {
            binio::read_f64_vec(&mut r, n)
                .map_err(|_| FusionError::Format {
                    path: path.to_path_buf(),
                    reason: "truncated head payload".into(),
                })
        };
        let head = HeadParams {
            d,
            hidden,
            n_classes,
            w1: tensor(d * hidden)?,
            b1: tensor(hidden)?,
            gamma: tensor(hidden)?,
            beta: tensor(hidden)?,
            running_mean: tensor(hidden)?,
            running_var: tensor(hidden)?,
            w2: tensor(hidden * n_classes)?,
            b2: tensor(n_classes)?,
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(fmt("trailing bytes after payload".into()));
        }
        Ok(Self { gating, head })
    }
}
