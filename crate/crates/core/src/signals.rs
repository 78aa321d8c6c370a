//! Deterministic ECG preprocessing: biquad high-pass filtering, z-score
//! normalization, overlapping-window segmentation, and SNR-controlled
//! Gaussian noise injection.
//!
//! All operations are pure functions of their arguments; the pipeline order
//! is filter -> z-score (per trial) -> segment -> optional noise.

use crate::seeds;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("invalid cutoff: fc={fc} Hz must lie in (0, {nyquist}) for fs={fs} Hz")]
    InvalidCutoff { fc: f64, fs: f64, nyquist: f64 },
    #[error("non-finite input sample at index {0}")]
    NonFiniteInput(usize),
    #[error("degenerate signal: population std {std} below 1e-12")]
    DegenerateSignal { std: f64 },
    #[error("not enough samples: record length {len} < window length {window}")]
    NotEnoughSamples { len: usize, window: usize },
    #[error("zero-power signal: cannot scale noise against silence")]
    ZeroPowerSignal,
}

/// The five emotion classes, in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmotionClass {
    Anger,
    Fear,
    Neutral,
    Sadness,
    Surprise,
}

impl EmotionClass {
    pub const COUNT: usize = 5;
    pub const ALL: [EmotionClass; 5] = [
        EmotionClass::Anger,
        EmotionClass::Fear,
        EmotionClass::Neutral,
        EmotionClass::Sadness,
        EmotionClass::Surprise,
    ];

    pub fn index(self) -> usize {
        match self {
            EmotionClass::Anger => 0,
            EmotionClass::Fear => 1,
            EmotionClass::Neutral => 2,
            EmotionClass::Sadness => 3,
            EmotionClass::Surprise => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<EmotionClass> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionClass::Anger => "anger",
            EmotionClass::Fear => "fear",
            EmotionClass::Neutral => "neutral",
            EmotionClass::Sadness => "sadness",
            EmotionClass::Surprise => "surprise",
        }
    }

    /// Parse the canonical lowercase label. `None` for anything else.
    pub fn parse(s: &str) -> Option<EmotionClass> {
        Self::ALL.iter().copied().find(|c| c.as_str() == s)
    }
}

impl std::fmt::Display for EmotionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labelled trial: a single-channel sample sequence (mV) at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub trial_id: String,
    pub label: EmotionClass,
    /// Sampling rate in Hz.
    pub fs: f64,
    pub samples: Vec<f64>,
}

impl EcgRecord {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.fs > 0.0) {
            return Err(SignalError::InvalidCutoff { fc: 0.0, fs: self.fs, nyquist: 0.0 });
        }
        check_finite(&self.samples)?;
        if self.samples.is_empty() {
            return Err(SignalError::NotEnoughSamples { len: 0, window: 1 });
        }
        Ok(())
    }
}

/// Fixed-length preprocessed segment carrying its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub trial_id: String,
    pub label: EmotionClass,
    /// Sample offset of this window in the source record.
    pub start_index: usize,
    pub samples: Vec<f64>,
}

/// Second-order IIR section, normalized so a0 = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    /// Both poles of z^2 + a1 z + a2 strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Magnitude response |H(e^{j 2 pi f / fs})|.
    pub fn magnitude_at(&self, freq_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs;
        let (c1, s1) = (w.cos(), -w.sin()); // z^-1
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin()); // z^-2
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = self.b1 * s1 + self.b2 * s2;
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = self.a1 * s1 + self.a2 * s2;
        (num_re * num_re + num_im * num_im).sqrt() / (den_re * den_re + den_im * den_im).sqrt()
    }
}

/// Design a second-order Butterworth high-pass via the bilinear transform
/// with frequency prewarping. The returned section has an exact DC null
/// (b0 + b1 + b2 == 0 in floating point, since b1 = -2*b0 and b2 = b0).
pub fn design_highpass(fc: f64, fs: f64) -> Result<BiquadCoeffs, SignalError> {
    let nyquist = fs / 2.0;
    if !fc.is_finite() || !fs.is_finite() || fs <= 0.0 || fc <= 0.0 || fc >= nyquist {
        return Err(SignalError::InvalidCutoff { fc, fs, nyquist });
    }
    // Prewarped analog prototype H(s) = s^2 / (s^2 + sqrt(2) wc s + wc^2),
    // discretized with s = (1 - z^-1) / (c (1 + z^-1)), c = tan(pi fc / fs).
    let c = (PI * fc / fs).tan();
    let sqrt2 = std::f64::consts::SQRT_2;
    let norm = 1.0 + sqrt2 * c + c * c;
    let b0 = 1.0 / norm;
    Ok(BiquadCoeffs {
        b0,
        b1: -2.0 * b0,
        b2: b0,
        a1: 2.0 * (c * c - 1.0) / norm,
        a2: (1.0 - sqrt2 * c + c * c) / norm,
    })
}

/// Run the biquad once, forward, from zero initial state (direct form I):
/// y[n] = b0 x[n] + b1 x[n-1] + b2 x[n-2] - a1 y[n-1] - a2 y[n-2].
pub fn apply_iir(coeffs: &BiquadCoeffs, x: &[f64]) -> Result<Vec<f64>, SignalError> {
    check_finite(x)?;
    let mut y = Vec::with_capacity(x.len());
    let (mut x1, mut x2, mut y1, mut y2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &xn in x {
        let yn = coeffs.b0 * xn + coeffs.b1 * x1 + coeffs.b2 * x2 - coeffs.a1 * y1 - coeffs.a2 * y2;
        x2 = x1;
        x1 = xn;
        y2 = y1;
        y1 = yn;
        y.push(yn);
    }
    Ok(y)
}

/// Normalize to mean 0 and population std 1 (divide by n).
pub fn zscore(x: &[f64]) -> Result<Vec<f64>, SignalError> {
    let n = x.len();
    if n < 2 {
        return Err(SignalError::DegenerateSignal { std: 0.0 });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std < 1e-12 {
        return Err(SignalError::DegenerateSignal { std });
    }
    Ok(x.iter().map(|v| (v - mean) / std).collect())
}

/// High-pass filter then z-score a whole trial, preserving its identity.
pub fn preprocess_record(record: &EcgRecord, coeffs: &BiquadCoeffs) -> Result<EcgRecord, SignalError> {
    let filtered = apply_iir(coeffs, &record.samples)?;
    let normalized = zscore(&filtered)?;
    Ok(EcgRecord {
        trial_id: record.trial_id.clone(),
        label: record.label,
        fs: record.fs,
        samples: normalized,
    })
}

/// Stride (in samples) realizing an overlap percentage for windows of length
/// `n`: floor(n * (1 - pct/100)), clamped to at least one sample.
pub fn stride_for_overlap(n: usize, overlap_pct: u32) -> usize {
    assert!(overlap_pct < 100, "overlap percentage must be below 100");
    let stride = (n as f64 * (1.0 - overlap_pct as f64 / 100.0)).floor() as usize;
    stride.max(1)
}

/// Cut a record into overlapping windows of `n` samples at the given stride.
/// Returns exactly floor((L - n) / stride) + 1 windows with start indices
/// 0, stride, 2*stride, ...
pub fn segment_overlap(
    record: &EcgRecord,
    n: usize,
    stride: usize,
) -> Result<Vec<Window>, SignalError> {
    assert!(n >= 1, "window length must be at least 1");
    assert!(stride >= 1, "stride must be at least 1");
    let len = record.samples.len();
    if len < n {
        return Err(SignalError::NotEnoughSamples { len, window: n });
    }
    let count = (len - n) / stride + 1;
    let mut windows = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * stride;
        windows.push(Window {
            trial_id: record.trial_id.clone(),
            label: record.label,
            start_index: start,
            samples: record.samples[start..start + n].to_vec(),
        });
    }
    Ok(windows)
}

/// Add i.i.d. zero-mean Gaussian noise at the requested SNR, defined against
/// the window's own mean-square power: noise variance = P / 10^(snr_db/10).
/// Deterministic in `seed`.
pub fn inject_noise(w: &Window, snr_db: f64, seed: u64) -> Result<Window, SignalError> {
    let n = w.samples.len();
    let power = w.samples.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if power <= 0.0 {
        return Err(SignalError::ZeroPowerSignal);
    }
    let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = w
        .samples
        .iter()
        .map(|&v| v + noise_std * standard_normal(&mut rng))
        .collect();
    Ok(Window {
        trial_id: w.trial_id.clone(),
        label: w.label,
        start_index: w.start_index,
        samples,
    })
}

/// One standard-normal draw via Box-Muller. Consumes two uniforms per call so
/// the stream layout is fixed and portable.
pub(crate) fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn check_finite(x: &[f64]) -> Result<(), SignalError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SignalError::NonFiniteInput(i)),
        None => Ok(()),
    }
}

/// Derive the noise seed for one (window, snr) pair of a sweep.
pub fn noise_seed(base: u64, w: &Window, snr_index: usize) -> u64 {
    seeds::derive(
        base,
        &[seeds::fnv1a(w.trial_id.as_bytes()), w.start_index as u64, snr_index as u64],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(samples: Vec<f64>) -> EcgRecord {
        EcgRecord { trial_id: "t0".into(), label: EmotionClass::Neutral, fs: 256.0, samples }
    }

    #[test]
    fn highpass_matches_reference_design() {
        // Reference coefficients from an independent filter-design tool
        // (scipy.signal.butter(2, 0.8, 'highpass', fs=256)).
        let c = design_highpass(0.8, 256.0).unwrap();
        assert!((c.b0 - 0.9862119246270825).abs() < 1e-10, "b0 = {}", c.b0);
        assert!((c.b1 - -1.972423849254165).abs() < 1e-10, "b1 = {}", c.b1);
        assert!((c.b2 - 0.9862119246270825).abs() < 1e-10, "b2 = {}", c.b2);
        assert!((c.a1 - -1.9722337291952663).abs() < 1e-10, "a1 = {}", c.a1);
        assert!((c.a2 - 0.9726139693130632).abs() < 1e-10, "a2 = {}", c.a2);
    }

    #[test]
    fn highpass_has_exact_dc_null_and_is_stable() {
        let c = design_highpass(0.8, 256.0).unwrap();
        assert!((c.b0 + c.b1 + c.b2).abs() < 1e-12);
        assert!(c.is_stable());
    }

    #[test]
    fn highpass_passband_matches_analog_prototype() {
        let c = design_highpass(0.8, 256.0).unwrap();
        let digital = c.magnitude_at(10.0, 256.0);
        let r = 10.0f64 / 0.8;
        let analog = r * r / (1.0 + r.powi(4)).sqrt();
        assert!((digital - analog).abs() / analog < 1e-3, "digital {digital} vs analog {analog}");
    }

    #[test]
    fn highpass_rejects_bad_cutoffs() {
        assert!(matches!(design_highpass(0.0, 256.0), Err(SignalError::InvalidCutoff { .. })));
        assert!(matches!(design_highpass(-1.0, 256.0), Err(SignalError::InvalidCutoff { .. })));
        assert!(matches!(design_highpass(128.0, 256.0), Err(SignalError::InvalidCutoff { .. })));
        assert!(matches!(design_highpass(200.0, 256.0), Err(SignalError::InvalidCutoff { .. })));
    }

    #[test]
    fn iir_zero_input_gives_zero_output() {
        let c = design_highpass(0.8, 256.0).unwrap();
        let y = apply_iir(&c, &[0.0; 100]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn iir_impulse_response_matches_unrolled_recurrence() {
        let c = design_highpass(0.8, 256.0).unwrap();
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        let y = apply_iir(&c, &x).unwrap();
        let y0 = c.b0;
        let y1 = c.b1 - c.a1 * y0;
        let y2 = c.b2 - c.a1 * y1 - c.a2 * y0;
        assert!((y[0] - y0).abs() < 1e-15);
        assert!((y[1] - y1).abs() < 1e-15);
        assert!((y[2] - y2).abs() < 1e-15);
    }

    #[test]
    fn iir_constant_input_decays_to_zero() {
        let c = design_highpass(0.8, 256.0).unwrap();
        let x = vec![3.5; 5120]; // 20 s at 256 Hz
        let y = apply_iir(&c, &x).unwrap();
        // Past 10 s the high-pass steady state must be numerically gone.
        for (i, &v) in y.iter().enumerate().skip(2560) {
            assert!(v.abs() < 1e-6 * 3.5, "y[{i}] = {v}");
        }
    }

    #[test]
    fn iir_rejects_non_finite_input() {
        let c = design_highpass(0.8, 256.0).unwrap();
        let r = apply_iir(&c, &[1.0, f64::NAN, 0.0]);
        assert!(matches!(r, Err(SignalError::NonFiniteInput(1))));
    }

    #[test]
    fn zscore_hand_example() {
        let y = zscore(&[1.0, 2.0, 3.0]).unwrap();
        // population std of [1,2,3] is sqrt(2/3)
        let e = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((y[0] + e).abs() < 1e-12);
        assert!(y[1].abs() < 1e-12);
        assert!((y[2] - e).abs() < 1e-12);
    }

    #[test]
    fn zscore_is_idempotent() {
        let y = zscore(&[0.3, -1.4, 2.2, 0.0, 5.5]).unwrap();
        let z = zscore(&y).unwrap();
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zscore_rejects_constant_input() {
        assert!(matches!(zscore(&[2.0; 10]), Err(SignalError::DegenerateSignal { .. })));
        assert!(matches!(zscore(&[1.0]), Err(SignalError::DegenerateSignal { .. })));
    }

    #[test]
    fn segment_example_75_percent_overlap() {
        let r = record(vec![0.0; 5120]);
        let ws = segment_overlap(&r, 2560, 640).unwrap();
        let starts: Vec<usize> = ws.iter().map(|w| w.start_index).collect();
        assert_eq!(starts, vec![0, 640, 1280, 1920, 2560]);
        assert!(ws.iter().all(|w| w.samples.len() == 2560));
        assert!(ws.iter().all(|w| w.trial_id == "t0" && w.label == EmotionClass::Neutral));
    }

    #[test]
    fn segment_exact_fit_and_zero_overlap() {
        let r = record(vec![0.0; 2560]);
        assert_eq!(segment_overlap(&r, 2560, 640).unwrap().len(), 1);
        let r = record(vec![0.0; 5120]);
        assert_eq!(segment_overlap(&r, 2560, 2560).unwrap().len(), 2);
    }

    #[test]
    fn segment_too_short_errors() {
        let r = record(vec![0.0; 100]);
        assert!(matches!(
            segment_overlap(&r, 2560, 640),
            Err(SignalError::NotEnoughSamples { len: 100, window: 2560 })
        ));
    }

    #[test]
    fn stride_mapping_floors_and_clamps() {
        assert_eq!(stride_for_overlap(2560, 0), 2560);
        assert_eq!(stride_for_overlap(2560, 25), 1920);
        assert_eq!(stride_for_overlap(2560, 50), 1280);
        assert_eq!(stride_for_overlap(2560, 75), 640);
        assert_eq!(stride_for_overlap(1, 99), 1);
    }

    fn unit_power_window(n: usize) -> Window {
        Window {
            trial_id: "t0".into(),
            label: EmotionClass::Anger,
            start_index: 0,
            samples: (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect(),
        }
    }

    #[test]
    fn noise_at_0db_doubles_power() {
        let w = unit_power_window(2560);
        let noisy = inject_noise(&w, 0.0, 7).unwrap();
        let p = noisy.samples.iter().map(|v| v * v).sum::<f64>() / 2560.0;
        assert!((p - 2.0).abs() < 0.1, "power {p}");
    }

    #[test]
    fn noise_at_300db_is_negligible() {
        let w = unit_power_window(256);
        let noisy = inject_noise(&w, 300.0, 7).unwrap();
        for (a, b) in w.samples.iter().zip(&noisy.samples) {
            assert!((a - b).abs() <= 1e-6 * a.abs());
        }
    }

    #[test]
    fn noise_is_deterministic_in_seed() {
        let w = unit_power_window(512);
        let a = inject_noise(&w, 10.0, 99).unwrap();
        let b = inject_noise(&w, 10.0, 99).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = inject_noise(&w, 10.0, 100).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn noise_rejects_silent_window() {
        let w = Window {
            trial_id: "t0".into(),
            label: EmotionClass::Anger,
            start_index: 0,
            samples: vec![0.0; 16],
        };
        assert!(matches!(inject_noise(&w, 0.0, 1), Err(SignalError::ZeroPowerSignal)));
    }

    proptest! {
        #[test]
        fn any_valid_cutoff_designs_a_stable_dc_null_filter(
            fc in 0.01f64..127.0,
            fs in proptest::sample::select(vec![256.0f64, 500.0, 1000.0])
        ) {
            prop_assume!(fc < fs / 2.0);
            let c = design_highpass(fc, fs).unwrap();
            prop_assert!(c.is_stable());
            prop_assert!((c.b0 + c.b1 + c.b2).abs() < 1e-12);
        }

        #[test]
        fn segment_count_matches_brute_force(
            len in 1usize..4000,
            n in 1usize..512,
            stride in 1usize..700
        ) {
            prop_assume!(len >= n);
            let r = record(vec![0.0; len]);
            let ws = segment_overlap(&r, n, stride).unwrap();
            let brute = (0..len)
                .filter(|s| s % stride == 0 && s + n <= len)
                .count();
            prop_assert_eq!(ws.len(), brute);
            prop_assert_eq!(ws.len(), (len - n) / stride + 1);
        }

        #[test]
        fn iir_is_linear(
            xs in proptest::collection::vec(-10.0f64..10.0, 8..64),
            ys in proptest::collection::vec(-10.0f64..10.0, 8..64),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0
        ) {
            let n = xs.len().min(ys.len());
            let c = design_highpass(0.8, 256.0).unwrap();
            let fx = apply_iir(&c, &xs[..n]).unwrap();
            let fy = apply_iir(&c, &ys[..n]).unwrap();
            let mixed: Vec<f64> = (0..n).map(|i| a * xs[i] + b * ys[i]).collect();
            let fm = apply_iir(&c, &mixed).unwrap();
            for i in 0..n {
                prop_assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn zscore_output_is_standardized(
            xs in proptest::collection::vec(-100.0f64..100.0, 4..256)
        ) {
            if let Ok(y) = zscore(&xs) {
                let n = y.len() as f64;
                let mean = y.iter().sum::<f64>() / n;
                let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }
}
