//! ECG emotion classification with a frozen encoder and gated layer fusion.
//!
//! The pipeline turns raw single-lead ECG trials into five-class emotion
//! predictions without fine-tuning the encoder:
//!
//! 1. [`signals`] — Butterworth high-pass, per-trial z-score, overlapping
//!    window segmentation, and SNR-calibrated noise injection.
//! 2. [`dataset`] — a synthetic five-class trial generator, plain-text
//!    dataset files, and leakage-safe trial-level splits.
//! 3. [`backbone`] — a deterministic frozen conv + transformer encoder that
//!    captures every layer's output; each captured layer acts as one expert.
//! 4. [`fusion`] — softmax gating over the experts plus the trainable
//!    classification head, with hand-derived analytic gradients.
//! 5. [`train`] — Adam, k-fold cross-validation, noise sweeps, and the
//!    fused-vs-last-layer comparison.
//! 6. [`metrics`] / [`reports`] — scoring and stable report files.
//!
//! Every random choice flows from explicit seeds ([`seeds`]), so any result
//! in the pipeline can be reproduced bit for bit.

pub mod backbone;
mod binio;
pub mod dataset;
pub mod fusion;
pub mod metrics;
pub mod reports;
pub mod seeds;
pub mod signals;
pub mod train;

pub use backbone::{
    BackboneConfig, BackboneError, BackboneParams, ConvBlockSpec, EmbeddingStack,
};
pub use dataset::{DatasetError, DatasetManifest, ManifestEntry, SplitPlan, SynthConfig};
pub use fusion::{
    Alphas, FusionError, GatingParams, GradientSet, HeadParams, Model, Phase, PooledWindow,
};
pub use metrics::{ClassMetrics, Metrics};
pub use signals::{BiquadCoeffs, EcgRecord, EmotionClass, SignalError, Window};
pub use train::{
    AdamState, CompareReport, FitReport, TrainConfig, TrainError, WindowEmbedding,
};
