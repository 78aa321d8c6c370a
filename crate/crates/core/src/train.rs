//! Training and evaluation harness: Adam over the trainable stage, k-fold
//! cross-validation inside the train split, noise-robustness sweeps, and the
//! fused-vs-last-layer comparison.
//!
//! Everything here consumes time-pooled window embeddings; the frozen
//! backbone is only needed for the stages that (re)encode windows, and is
//! never mutated.

use crate::backbone::{forward_all, BackboneError, BackboneParams, EmbeddingStack};
use crate::dataset::{DatasetError, SplitPlan};
use crate::fusion::{
    apply_batch_stats, compute_alphas, loss_and_grads, predict, FusionError, GradientSet, Model,
    Phase, PooledWindow, BN_MOMENTUM,
};
use crate::metrics::{evaluate, Metrics};
use crate::seeds;
use crate::signals::{
    inject_noise, noise_seed, segment_overlap, stride_for_overlap, EcgRecord, EmotionClass,
    SignalError, Window,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("empty {0} split: no windows to work with")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Hyperparameters of the trainable stage and the evaluation protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Trial-level train fraction for the stratified split.
    pub train_fraction: f64,
    /// Cross-validation folds inside the train split.
    pub folds: usize,
    pub window_len: usize,
    pub overlap_pct: u32,
    pub highpass_hz: f64,
    /// Conditioned gating (true) or static gating (false).
    pub conditioned: bool,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            train_fraction: 0.8,
            folds: 5,
            window_len: 2560,
            overlap_pct: 50,
            highpass_hz: 0.5,
            conditioned: true,
            hidden: 128,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be >= 2 (batch norm needs at least two windows)".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(TrainError::InvalidConfig("lr must be positive and finite".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(TrainError::InvalidConfig(
                "train_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if self.folds < 2 {
            return Err(TrainError::InvalidConfig("folds must be >= 2".into()));
        }
        if self.window_len == 0 {
            return Err(TrainError::InvalidConfig("window_len must be >= 1".into()));
        }
        if self.overlap_pct >= 100 {
            return Err(TrainError::InvalidConfig("overlap_pct must be < 100".into()));
        }
        if self.hidden == 0 {
            return Err(TrainError::InvalidConfig("hidden must be >= 1".into()));
        }
        Ok(())
    }
}

// ── Window embeddings ──────────────────────────────────────────────────────

/// A window after encoding: its provenance plus the pooled expert vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowEmbedding {
    pub trial_id: String,
    pub label: EmotionClass,
    pub start_index: usize,
    /// `n_experts x d`.
    pub pooled: Vec<Vec<f64>>,
}

impl WindowEmbedding {
    pub fn new(window: &Window, stack: &EmbeddingStack) -> Self {
        Self {
            trial_id: window.trial_id.clone(),
            label: window.label,
            start_index: window.start_index,
            pooled: stack.pooled(),
        }
    }
}

/// Segment already-preprocessed records and run each window through the
/// frozen encoder, capturing the full stack.
pub fn embed_records(
    backbone: &BackboneParams,
    records: &[EcgRecord],
    window_len: usize,
    overlap_pct: u32,
) -> Result<Vec<(Window, EmbeddingStack)>, TrainError> {
    let stride = stride_for_overlap(window_len, overlap_pct);
    let mut out = Vec::new();
    for rec in records {
        for window in segment_overlap(rec, window_len, stride)? {
            let stack = forward_all(backbone, &window.samples)?;
            out.push((window, stack));
        }
    }
    Ok(out)
}

// ── Adam ───────────────────────────────────────────────────────────────────

/// Adam with bias correction, applied tensor-by-tensor in the fixed
/// [`Model::tensors`] order.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Model, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: shapes.clone(), v: shapes }
    }

    pub fn step(&mut self, model: &mut Model, grads: &GradientSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let gts = grads.tensors();
        for (ti, params) in model.tensors_mut().into_iter().enumerate() {
            let g = gts[ti];
            let (m, v) = (&mut self.m[ti], &mut self.v[ti]);
            for k in 0..params.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                params[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

// ── Training loops ─────────────────────────────────────────────────────────

fn filter_by<'a>(
    windows: &'a [WindowEmbedding],
    ids: &[String],
) -> Vec<&'a WindowEmbedding> {
    windows.iter().filter(|w| ids.iter().any(|id| *id == w.trial_id)).collect()
}

/// Train one head on the given windows. `run_tag` keeps the random streams
/// of independent runs (folds, final, baselines) apart.
pub fn train_head(
    windows: &[&WindowEmbedding],
    cfg: &TrainConfig,
    run_tag: u64,
) -> Result<(Model, Vec<f64>), TrainError> {
    cfg.validate()?;
    if windows.len() < 2 {
        return Err(TrainError::EmptySplit("train"));
    }
    let n_experts = windows[0].pooled.len();
    let d = windows[0].pooled[0].len();
    let mut model = Model::init(
        n_experts,
        d,
        cfg.hidden,
        EmotionClass::COUNT,
        cfg.conditioned,
        seeds::derive(cfg.seed, &[run_tag, 1]),
    );
    let mut adam = AdamState::new(&model, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[run_tag, 2, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_seen = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // a trailing singleton cannot be batch-normalized
            }
            let batch: Vec<PooledWindow> = chunk
                .iter()
                .map(|&i| PooledWindow {
                    pooled: windows[i].pooled.clone(),
                    label: windows[i].label,
                })
                .collect();
            let dropout_seed =
                seeds::derive(cfg.seed, &[run_tag, 3, epoch as u64, step as u64]);
            let (loss, grads, stats) =
                loss_and_grads(&model, &batch, Phase::Train, dropout_seed)?;
            apply_batch_stats(&mut model.head, &stats.expect("train phase"), BN_MOMENTUM);
            adam.step(&mut model, &grads);
            loss_sum += loss * chunk.len() as f64;
            n_seen += chunk.len();
        }
        if n_seen == 0 {
            return Err(TrainError::EmptySplit("train"));
        }
        history.push(loss_sum / n_seen as f64);
    }
    Ok((model, history))
}

/// Score a model on a window set (eval phase, window-level).
pub fn evaluate_model(
    model: &Model,
    windows: &[&WindowEmbedding],
) -> Result<Metrics, TrainError> {
    let mut pairs = Vec::with_capacity(windows.len());
    for w in windows {
        pairs.push((w.label, predict(model, &w.pooled)?));
    }
    Ok(evaluate(&pairs))
}

/// Per-expert mean and standard deviation of the gate weights over a window
/// set.
pub fn alpha_stats(
    model: &Model,
    windows: &[&WindowEmbedding],
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let n_experts = model.gating.n_experts();
    let mut mean = vec![0.0; n_experts];
    let mut sq = vec![0.0; n_experts];
    for w in windows {
        let a = compute_alphas(&model.gating, &w.pooled)?;
        for (i, &ai) in a.weights.iter().enumerate() {
            mean[i] += ai;
            sq[i] += ai * ai;
        }
    }
    let n = windows.len().max(1) as f64;
    for i in 0..n_experts {
        mean[i] /= n;
        sq[i] = (sq[i] / n - mean[i] * mean[i]).max(0.0).sqrt();
    }
    Ok((mean, sq))
}

/// Everything `fit` produces: the final model, its loss history, per-fold
/// validation metrics, the held-out test metrics, and the gate profile on
/// the test windows.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: Model,
    pub history: Vec<f64>,
    pub fold_histories: Vec<Vec<f64>>,
    pub fold_metrics: Vec<Metrics>,
    pub test_metrics: Metrics,
    pub alpha_mean: Vec<f64>,
    pub alpha_std: Vec<f64>,
}

const TAG_FINAL: u64 = 0;
const TAG_COMPARE_FUSED: u64 = 0x10;
const TAG_COMPARE_LAST: u64 = 0x11;

/// The full protocol: k-fold cross-validation inside the train split, then a
/// final model trained on the whole train split and scored on the held-out
/// test trials. Deterministic in `cfg.seed`.
pub fn fit(
    windows: &[WindowEmbedding],
    plan: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<FitReport, TrainError> {
    cfg.validate()?;
    let train = filter_by(windows, &plan.train);
    let test = filter_by(windows, &plan.test);
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let mut fold_metrics = Vec::with_capacity(plan.folds.len());
    let mut fold_histories = Vec::with_capacity(plan.folds.len());
    for (i, val_ids) in plan.folds.iter().enumerate() {
        let val: Vec<&WindowEmbedding> =
            train.iter().copied().filter(|w| val_ids.contains(&w.trial_id)).collect();
        let tr: Vec<&WindowEmbedding> =
            train.iter().copied().filter(|w| !val_ids.contains(&w.trial_id)).collect();
        if val.is_empty() || tr.is_empty() {
            return Err(TrainError::EmptySplit("fold"));
        }
        let (model, history) = train_head(&tr, cfg, 1 + i as u64)?;
        fold_metrics.push(evaluate_model(&model, &val)?);
        fold_histories.push(history);
    }
    let (model, history) = train_head(&train, cfg, TAG_FINAL)?;
    let test_metrics = evaluate_model(&model, &test)?;
    let (alpha_mean, alpha_std) = alpha_stats(&model, &test)?;
    Ok(FitReport {
        model,
        history,
        fold_histories,
        fold_metrics,
        test_metrics,
        alpha_mean,
        alpha_std,
    })
}

// ── Noise sweep ────────────────────────────────────────────────────────────

/// Re-encode the given (already preprocessed) trials with additive noise at
/// each SNR and score the model. Noise is injected into the raw window
/// before the encoder, so robustness is measured end to end.
pub fn noise_sweep(
    backbone: &BackboneParams,
    model: &Model,
    records: &[EcgRecord],
    cfg: &TrainConfig,
    snrs_db: &[f64],
    noise_seed_base: u64,
) -> Result<Vec<(f64, Metrics)>, TrainError> {
    cfg.validate()?;
    let stride = stride_for_overlap(cfg.window_len, cfg.overlap_pct);
    let mut out = Vec::with_capacity(snrs_db.len());
    for (si, &snr) in snrs_db.iter().enumerate() {
        let mut pairs = Vec::new();
        for rec in records {
            for window in segment_overlap(rec, cfg.window_len, stride)? {
                let seed = noise_seed(noise_seed_base, &window, si);
                let noisy = inject_noise(&window, snr, seed)?;
                let stack = forward_all(backbone, &noisy.samples)?;
                pairs.push((window.label, predict(model, &stack.pooled())?));
            }
        }
        if pairs.is_empty() {
            return Err(TrainError::EmptySplit("sweep"));
        }
        out.push((snr, evaluate(&pairs)));
    }
    Ok(out)
}

// ── Fused vs last layer ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub fused: Metrics,
    pub last_layer: Metrics,
}

/// Keep only the last expert of each window, as a single-expert stack.
fn last_layer_view(windows: &[&WindowEmbedding]) -> Vec<WindowEmbedding> {
    windows
        .iter()
        .map(|w| WindowEmbedding {
            trial_id: w.trial_id.clone(),
            label: w.label,
            start_index: w.start_index,
            pooled: vec![w.pooled.last().expect("non-empty stack").clone()],
        })
        .collect()
}

/// Train the gated-fusion head and a last-layer-only baseline under the same
/// protocol and score both on the held-out test trials. The baseline sees a
/// single expert, so its gate is the constant `alpha = [1]` and the fused
/// vector is exactly the last layer's pooled output.
pub fn compare_last_layer(
    windows: &[WindowEmbedding],
    plan: &SplitPlan,
    cfg: &TrainConfig,
) -> Result<CompareReport, TrainError> {
    cfg.validate()?;
    let train = filter_by(windows, &plan.train);
    let test = filter_by(windows, &plan.test);
    if train.is_empty() || test.is_empty() {
        return Err(TrainError::EmptySplit(if train.is_empty() { "train" } else { "test" }));
    }
    let (fused_model, _) = train_head(&train, cfg, TAG_COMPARE_FUSED)?;
    let fused = evaluate_model(&fused_model, &test)?;

    let last_train_owned = last_layer_view(&train);
    let last_test_owned = last_layer_view(&test);
    let last_train: Vec<&WindowEmbedding> = last_train_owned.iter().collect();
    let last_test: Vec<&WindowEmbedding> = last_test_owned.iter().collect();
    let last_cfg = TrainConfig { conditioned: false, ..cfg.clone() };
    let (last_model, _) = train_head(&last_train, &last_cfg, TAG_COMPARE_LAST)?;
    let last_layer = evaluate_model(&last_model, &last_test)?;
    Ok(CompareReport { fused, last_layer })
}
