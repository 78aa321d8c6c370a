//! Synthetic five-class ECG-like trials, dataset files, and leakage-safe
//! trial-level splitting.
//!
//! Each class gets its own mean heart rate and beat-to-beat variability, so
//! the five classes are separable by construction. Trial files and the
//! manifest are plain UTF-8 text with LF line endings: diffable, and free of
//! serialization dependencies.

use crate::seeds;
use crate::signals::{standard_normal, EcgRecord, EmotionClass};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("unknown label {label:?} in {path}")]
    UnknownLabel { path: PathBuf, label: String },
    #[error("too few trials: {0}")]
    TooFewTrials(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

// ── Synthesis ──────────────────────────────────────────────────────────────

/// Configuration of the synthetic trial generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Mean heart rate per class, bpm (canonical class order).
    pub mean_hr_bpm: [f64; 5],
    /// RR-interval standard deviation per class, seconds.
    pub rr_std_s: [f64; 5],
    /// P-wave amplitude, mV.
    pub p_amp_mv: f64,
    /// QRS complex amplitude scale, mV.
    pub qrs_amp_mv: f64,
    /// T-wave amplitude, mV.
    pub t_amp_mv: f64,
    /// Sensor noise floor, mV (standard deviation).
    pub sensor_noise_mv: f64,
    /// Trial duration, seconds. `duration_s * fs` must be an integer.
    pub duration_s: f64,
    /// Sampling rate, Hz.
    pub fs: f64,
    pub trials_per_class: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mean_hr_bpm: [60.0, 75.0, 90.0, 105.0, 120.0],
            rr_std_s: [0.02, 0.04, 0.06, 0.08, 0.10],
            p_amp_mv: 0.15,
            qrs_amp_mv: 1.0,
            t_amp_mv: 0.30,
            sensor_noise_mv: 0.02,
            duration_s: 40.0,
            fs: 256.0,
            trials_per_class: 12,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (i, &hr) in self.mean_hr_bpm.iter().enumerate() {
            if !(30.0..=200.0).contains(&hr) {
                return Err(DatasetError::InvalidConfig(format!(
                    "mean heart rate {hr} bpm for class {i} outside [30, 200]"
                )));
            }
        }
        if self.rr_std_s.iter().any(|&s| !s.is_finite() || s < 0.0) {
            return Err(DatasetError::InvalidConfig("RR std must be finite and >= 0".into()));
        }
        if !(self.fs > 0.0) || !(self.duration_s > 0.0) {
            return Err(DatasetError::InvalidConfig("fs and duration must be positive".into()));
        }
        let n = self.duration_s * self.fs;
        if (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
            return Err(DatasetError::InvalidConfig(format!(
                "duration_s * fs = {n} is not a positive integer sample count"
            )));
        }
        if self.trials_per_class < 1 {
            return Err(DatasetError::InvalidConfig("trials_per_class must be >= 1".into()));
        }
        for (name, v) in [
            ("p_amp_mv", self.p_amp_mv),
            ("qrs_amp_mv", self.qrs_amp_mv),
            ("t_amp_mv", self.t_amp_mv),
            ("sensor_noise_mv", self.sensor_noise_mv),
        ] {
            if !v.is_finite() {
                return Err(DatasetError::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn samples_per_trial(&self) -> usize {
        (self.duration_s * self.fs).round() as usize
    }
}

/// PQRST template: per-wave (offset from R peak, Gaussian sigma), seconds.
const WAVE_P: (f64, f64) = (-0.20, 0.025);
const WAVE_Q: (f64, f64) = (-0.030, 0.010);
const WAVE_R: (f64, f64) = (0.0, 0.012);
const WAVE_S: (f64, f64) = (0.030, 0.010);
const WAVE_T: (f64, f64) = (0.20, 0.045);

/// Render one synthetic trial: a train of PQRST Gaussian bumps whose beat
/// times follow the class's mean RR interval and RR variability, plus a
/// small sensor noise floor. Deterministic in `(class, cfg, trial_seed)`.
pub fn generate_trial(
    class: EmotionClass,
    cfg: &SynthConfig,
    trial_seed: u64,
) -> Result<EcgRecord, DatasetError> {
    cfg.validate()?;
    let n = cfg.samples_per_trial();
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let mean_rr = 60.0 / cfg.mean_hr_bpm[class.index()];
    let rr_std = cfg.rr_std_s[class.index()];

    // Beat times, starting with a random phase inside the first interval so
    // trials of one class are not all aligned.
    let mut beats = Vec::new();
    let mut t = rand::Rng::random::<f64>(&mut rng) * mean_rr;
    while t < cfg.duration_s + 0.5 {
        beats.push(t);
        let rr = mean_rr + rr_std * standard_normal(&mut rng);
        t += rr.max(0.3); // refractory floor keeps beats physically ordered
    }

    let mut samples = vec![0.0f64; n];
    let waves = [
        (WAVE_P, cfg.p_amp_mv),
        (WAVE_Q, -0.15 * cfg.qrs_amp_mv),
        (WAVE_R, cfg.qrs_amp_mv),
        (WAVE_S, -0.25 * cfg.qrs_amp_mv),
        (WAVE_T, cfg.t_amp_mv),
    ];
    for &beat in &beats {
        for &((offset, sigma), amp) in &waves {
            let center = beat + offset;
            let lo = (((center - 4.0 * sigma) * cfg.fs).floor().max(0.0)) as usize;
            let hi = ((((center + 4.0 * sigma) * cfg.fs).ceil()) as usize).min(n.saturating_sub(1));
            for (i, s) in samples.iter_mut().enumerate().take(hi + 1).skip(lo.min(n)) {
                let dt = i as f64 / cfg.fs - center;
                *s += amp * (-dt * dt / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    if cfg.sensor_noise_mv > 0.0 {
        for s in samples.iter_mut() {
            *s += cfg.sensor_noise_mv * standard_normal(&mut rng);
        }
    }

    Ok(EcgRecord {
        trial_id: format!("{}_{:016x}", class.as_str(), trial_seed),
        label: class,
        fs: cfg.fs,
        samples,
    })
}

/// Generate the full dataset: `trials_per_class` trials for each of the five
/// classes, with friendly sequential trial ids and per-trial seeds derived
/// from `cfg.seed`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<EcgRecord>, DatasetError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(5 * cfg.trials_per_class);
    for class in EmotionClass::ALL {
        for idx in 0..cfg.trials_per_class {
            let trial_seed = seeds::derive(cfg.seed, &[class.index() as u64, idx as u64]);
            let mut rec = generate_trial(class, cfg, trial_seed)?;
            rec.trial_id = format!("{}_{:03}", class.as_str(), idx);
            out.push(rec);
        }
    }
    Ok(out)
}

// ── Files ──────────────────────────────────────────────────────────────────

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_VERSION: u32 = 1;
const TRIAL_HEADER: &str = "trial_id,label,fs";
const MANIFEST_HEADER: &str = "path,trial_id,label,fs";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Trial file path relative to the manifest's directory.
    pub path: PathBuf,
    pub trial_id: String,
    pub label: EmotionClass,
    pub fs: f64,
}

/// Index of a dataset on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn label_of(&self, trial_id: &str) -> Option<EmotionClass> {
        self.entries.iter().find(|e| e.trial_id == trial_id).map(|e| e.label)
    }

    /// Trial ids of one class, in manifest order.
    pub fn ids_of_class(&self, class: EmotionClass) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.label == class)
            .map(|e| e.trial_id.clone())
            .collect()
    }
}

/// Write one trial per file plus `manifest.csv` into `dir`. Samples are
/// stored as shortest-round-trip f32 decimal text, one per line.
pub fn write_dataset(records: &[EcgRecord], dir: &Path) -> Result<DatasetManifest, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::InvalidConfig("cannot write an empty dataset".into()));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        let file_name = format!("{}.ecg", rec.trial_id);
        let path = dir.join(&file_name);
        let mut body = String::with_capacity(rec.samples.len() * 12 + 64);
        let _ = writeln!(body, "{TRIAL_HEADER}");
        let _ = writeln!(body, "{},{},{}", rec.trial_id, rec.label, rec.fs);
        for &s in &rec.samples {
            let _ = writeln!(body, "{}", s as f32);
        }
        fs::write(&path, body).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            path: PathBuf::from(file_name),
            trial_id: rec.trial_id.clone(),
            label: rec.label,
            fs: rec.fs,
        });
    }
    let manifest = DatasetManifest { version: MANIFEST_VERSION, root: dir.to_path_buf(), entries };
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut body = String::new();
    let _ = writeln!(body, "# version={}", manifest.version);
    let _ = writeln!(body, "{MANIFEST_HEADER}");
    for e in &manifest.entries {
        let _ = writeln!(body, "{},{},{},{}", e.path.display(), e.trial_id, e.label, e.fs);
    }
    fs::write(&manifest_path, body).map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Parse `manifest.csv` (or a directory containing one).
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let manifest_path =
        if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let file = fs::File::open(&manifest_path).map_err(io_err(&manifest_path))?;
    let mut lines = BufReader::new(file).lines();
    let version_line = next_line(&mut lines, &manifest_path)?;
    let version = version_line
        .strip_prefix("# version=")
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| DatasetError::Format {
            path: manifest_path.clone(),
            reason: format!("expected '# version=N' first line, got {version_line:?}"),
        })?;
    if version != MANIFEST_VERSION {
        return Err(DatasetError::Format {
            path: manifest_path,
            reason: format!("unsupported manifest version {version}"),
        });
    }
    let header = next_line(&mut lines, &manifest_path)?;
    if header != MANIFEST_HEADER {
        return Err(DatasetError::Format {
            path: manifest_path,
            reason: format!("bad header {header:?}"),
        });
    }
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for line in lines {
        let line = line.map_err(io_err(&manifest_path))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(DatasetError::Format {
                path: manifest_path,
                reason: format!("expected 4 columns, got {} in {line:?}", cols.len()),
            });
        }
        let label = EmotionClass::parse(cols[2]).ok_or_else(|| DatasetError::UnknownLabel {
            path: manifest_path.clone(),
            label: cols[2].to_string(),
        })?;
        let fs = cols[3].parse::<f64>().map_err(|_| DatasetError::Format {
            path: manifest_path.clone(),
            reason: format!("bad fs {:?}", cols[3]),
        })?;
        if !seen.insert(cols[1].to_string()) {
            return Err(DatasetError::Format {
                path: manifest_path.clone(),
                reason: format!("duplicate trial_id {:?}", cols[1]),
            });
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(cols[0]),
            trial_id: cols[1].to_string(),
            label,
            fs,
        });
    }
    let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok(DatasetManifest { version, root, entries })
}

/// Load every trial referenced by a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<EcgRecord>, DatasetError> {
    let manifest = load_manifest(manifest_path)?;
    manifest.entries.iter().map(|e| load_trial(&manifest.root.join(&e.path), e)).collect()
}

fn load_trial(path: &Path, entry: &ManifestEntry) -> Result<EcgRecord, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = next_line(&mut lines, path)?;
    if header != TRIAL_HEADER {
        return Err(DatasetError::Format {
            path: path.to_path_buf(),
            reason: format!("bad header {header:?}"),
        });
    }
    let meta = next_line(&mut lines, path)?;
    let cols: Vec<&str> = meta.split(',').collect();
    if cols.len() != 3 {
        return Err(DatasetError::Format {
            path: path.to_path_buf(),
            reason: format!("expected 3 metadata columns, got {}", cols.len()),
        });
    }
    let label = EmotionClass::parse(cols[1]).ok_or_else(|| DatasetError::UnknownLabel {
        path: path.to_path_buf(),
        label: cols[1].to_string(),
    })?;
    let fs = cols[2].parse::<f64>().map_err(|_| DatasetError::Format {
        path: path.to_path_buf(),
        reason: format!("bad fs {:?}", cols[2]),
    })?;
    if cols[0] != entry.trial_id {
        return Err(DatasetError::Format {
            path: path.to_path_buf(),
            reason: format!("trial_id {:?} does not match manifest {:?}", cols[0], entry.trial_id),
        });
    }
    let mut samples = Vec::new();
    for line in lines {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let v = line.parse::<f64>().map_err(|_| DatasetError::Format {
            path: path.to_path_buf(),
            reason: format!("bad sample {line:?}"),
        })?;
        samples.push(v);
    }
    Ok(EcgRecord { trial_id: entry.trial_id.clone(), label, fs, samples })
}

fn next_line(
    lines: &mut std::io::Lines<BufReader<fs::File>>,
    path: &Path,
) -> Result<String, DatasetError> {
    match lines.next() {
        Some(Ok(l)) => Ok(l),
        Some(Err(e)) => Err(DatasetError::Io { path: path.to_path_buf(), source: e }),
        None => Err(DatasetError::Format {
            path: path.to_path_buf(),
            reason: "unexpected end of file".into(),
        }),
    }
}

// ── Splitting ──────────────────────────────────────────────────────────────

/// Trial-level train/test split with optional cross-validation folds.
/// Windows inherit their trial's side, so overlapping windows never leak
/// across a boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl SplitPlan {
    pub fn is_train(&self, trial_id: &str) -> bool {
        self.train.iter().any(|t| t == trial_id)
    }
}

/// Per-class stratified split: round(train_fraction * count) trials of each
/// class go to train, the rest to test. Deterministic in `seed`.
pub fn split_stratified(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train_fraction must lie strictly between 0 and 1"
    );
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in EmotionClass::ALL {
        let mut ids = manifest.ids_of_class(class);
        if ids.len() < 2 {
            return Err(DatasetError::TooFewTrials(format!(
                "class {class} has {} trial(s), need at least 2 to split",
                ids.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[class.index() as u64]));
        ids.shuffle(&mut rng);
        let n_train = (train_fraction * ids.len() as f64).round() as usize;
        train.extend(ids.drain(..n_train.min(ids.len())));
        test.extend(ids);
    }
    Ok(SplitPlan { train, test, folds: Vec::new() })
}

/// Class-stratified partition of the train trials into k disjoint folds with
/// per-class sizes differing by at most one. Deterministic in `seed`.
pub fn make_folds(
    manifest: &DatasetManifest,
    train_ids: &[String],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>, DatasetError> {
    assert!(k >= 2, "fold count must be at least 2");
    let mut folds = vec![Vec::new(); k];
    for class in EmotionClass::ALL {
        let mut ids: Vec<String> = train_ids
            .iter()
            .filter(|id| manifest.label_of(id) == Some(class))
            .cloned()
            .collect();
        if ids.len() < k {
            return Err(DatasetError::TooFewTrials(format!(
                "class {class} has {} train trial(s), need at least {k} for {k} folds",
                ids.len()
            )));
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[0xf01d, class.index() as u64]));
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            folds[i % k].push(id);
        }
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// Independent heart-rate oracle: threshold peak counting.
    fn detected_hr_bpm(rec: &EcgRecord) -> f64 {
        let max = rec.samples.iter().cloned().fold(f64::MIN, f64::max);
        let thresh = 0.6 * max;
        let min_gap = (0.3 * rec.fs) as usize;
        let mut peaks: Vec<usize> = Vec::new();
        for i in 1..rec.samples.len() - 1 {
            let v = rec.samples[i];
            if v > thresh && v >= rec.samples[i - 1] && v >= rec.samples[i + 1] {
                if peaks.last().map_or(true, |&p| i - p >= min_gap) {
                    peaks.push(i);
                }
            }
        }
        assert!(peaks.len() >= 2, "oracle needs at least two beats");
        let span_s = (peaks[peaks.len() - 1] - peaks[0]) as f64 / rec.fs;
        60.0 * (peaks.len() - 1) as f64 / span_s
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate_trial(EmotionClass::Fear, &cfg, 1234).unwrap();
        let b = generate_trial(EmotionClass::Fear, &cfg, 1234).unwrap();
        assert_eq!(a, b);
        let c = generate_trial(EmotionClass::Fear, &cfg, 1235).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn thirty_second_trial_has_7680_samples() {
        let cfg = SynthConfig { duration_s: 30.0, ..SynthConfig::default() };
        let rec = generate_trial(EmotionClass::Neutral, &cfg, 1).unwrap();
        assert_eq!(rec.samples.len(), 7680);
    }

    #[test]
    fn detected_heart_rate_tracks_configured_rate() {
        let cfg = SynthConfig::default();
        for class in EmotionClass::ALL {
            let mut rates = Vec::new();
            for idx in 0..4u64 {
                let rec = generate_trial(class, &cfg, seeds::derive(99, &[class.index() as u64, idx])).unwrap();
                rates.push(detected_hr_bpm(&rec));
            }
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            let want = cfg.mean_hr_bpm[class.index()];
            assert!((mean - want).abs() <= 3.0, "{class}: detected {mean} vs configured {want}");
        }
    }

    #[test]
    fn classes_are_separable_by_heart_rate() {
        let cfg = SynthConfig::default();
        let mut means = Vec::new();
        for class in EmotionClass::ALL {
            let mut rates = Vec::new();
            for idx in 0..4u64 {
                let rec = generate_trial(class, &cfg, seeds::derive(5, &[class.index() as u64, idx])).unwrap();
                rates.push(detected_hr_bpm(&rec));
            }
            means.push(rates.iter().sum::<f64>() / rates.len() as f64);
        }
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                assert!(
                    (means[i] - means[j]).abs() >= 5.0,
                    "classes {i} and {j} too close: {} vs {}",
                    means[i],
                    means[j]
                );
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.mean_hr_bpm[0] = 250.0;
        assert!(matches!(
            generate_trial(EmotionClass::Anger, &cfg, 1),
            Err(DatasetError::InvalidConfig(_))
        ));
        let cfg = SynthConfig { duration_s: 10.001, ..SynthConfig::default() };
        assert!(matches!(cfg.validate(), Err(DatasetError::InvalidConfig(_))));
        let cfg = SynthConfig { trials_per_class: 0, ..SynthConfig::default() };
        assert!(matches!(cfg.validate(), Err(DatasetError::InvalidConfig(_))));
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let dir = tempdir().unwrap();
        let cfg = SynthConfig { trials_per_class: 2, duration_s: 5.0, ..SynthConfig::default() };
        let records = generate_dataset(&cfg).unwrap();
        let manifest = write_dataset(&records, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 10);
        let loaded = load_dataset(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(loaded.len(), records.len());
        for (orig, back) in records.iter().zip(&loaded) {
            assert_eq!(orig.trial_id, back.trial_id);
            assert_eq!(orig.label, back.label);
            assert_eq!(orig.fs, back.fs);
            assert_eq!(orig.samples.len(), back.samples.len());
            for (a, b) in orig.samples.iter().zip(&back.samples) {
                let tol = 1e-6 * a.abs().max(1e-12);
                assert!((a - b).abs() <= tol, "sample drifted: {a} vs {b}");
            }
        }
    }

    #[test]
    fn missing_trial_file_is_an_io_error_naming_the_path() {
        let dir = tempdir().unwrap();
        let cfg = SynthConfig { trials_per_class: 1, duration_s: 2.0, ..SynthConfig::default() };
        let records = generate_dataset(&cfg).unwrap();
        write_dataset(&records, dir.path()).unwrap();
        fs::remove_file(dir.path().join("anger_000.ecg")).unwrap();
        match load_dataset(&dir.path().join(MANIFEST_FILE)) {
            Err(DatasetError::Io { path, .. }) => {
                assert!(path.to_string_lossy().contains("anger_000.ecg"))
            }
            other => panic!("expected Io error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_rejected() {
        let dir = tempdir().unwrap();
        let cfg = SynthConfig { trials_per_class: 1, duration_s: 2.0, ..SynthConfig::default() };
        let records = generate_dataset(&cfg).unwrap();
        write_dataset(&records, dir.path()).unwrap();
        let path = dir.path().join("anger_000.ecg");
        let body = fs::read_to_string(&path).unwrap().replace("anger_000,anger,", "anger_000,disgust,");
        fs::write(&path, body).unwrap();
        assert!(matches!(
            load_dataset(&dir.path().join(MANIFEST_FILE)),
            Err(DatasetError::UnknownLabel { label, .. }) if label == "disgust"
        ));
    }

    #[test]
    fn corrupt_headers_are_format_errors() {
        let dir = tempdir().unwrap();
        let cfg = SynthConfig { trials_per_class: 1, duration_s: 2.0, ..SynthConfig::default() };
        write_dataset(&generate_dataset(&cfg).unwrap(), dir.path()).unwrap();
        let manifest = dir.path().join(MANIFEST_FILE);
        let body = fs::read_to_string(&manifest).unwrap().replace("# version=1", "# version=9");
        fs::write(&manifest, body).unwrap();
        assert!(matches!(load_manifest(&manifest), Err(DatasetError::Format { .. })));
    }

    fn fake_manifest(per_class: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for class in EmotionClass::ALL {
            for i in 0..per_class {
                let id = format!("{}_{:03}", class.as_str(), i);
                entries.push(ManifestEntry {
                    path: PathBuf::from(format!("{id}.ecg")),
                    trial_id: id,
                    label: class,
                    fs: 256.0,
                });
            }
        }
        DatasetManifest { version: 1, root: PathBuf::from("."), entries }
    }

    #[test]
    fn split_counts_match_rounded_fraction() {
        let manifest = fake_manifest(50);
        let plan = split_stratified(&manifest, 0.8, 42).unwrap();
        for class in EmotionClass::ALL {
            let in_train =
                plan.train.iter().filter(|id| manifest.label_of(id) == Some(class)).count();
            let in_test =
                plan.test.iter().filter(|id| manifest.label_of(id) == Some(class)).count();
            assert_eq!((in_train, in_test), (40, 10));
        }
    }

    #[test]
    fn split_is_a_partition_and_deterministic() {
        let manifest = fake_manifest(7);
        let plan = split_stratified(&manifest, 0.8, 42).unwrap();
        let mut all: Vec<&String> = plan.train.iter().chain(plan.test.iter()).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), manifest.entries.len());
        assert_eq!(plan, split_stratified(&manifest, 0.8, 42).unwrap());
        assert_ne!(plan, split_stratified(&manifest, 0.8, 43).unwrap());
    }

    #[test]
    fn split_needs_two_trials_per_class() {
        let manifest = fake_manifest(1);
        assert!(matches!(
            split_stratified(&manifest, 0.8, 1),
            Err(DatasetError::TooFewTrials(_))
        ));
    }

    #[test]
    fn folds_partition_the_train_set_evenly() {
        let manifest = fake_manifest(50);
        let plan = split_stratified(&manifest, 0.8, 42).unwrap();
        let folds = make_folds(&manifest, &plan.train, 5, 42).unwrap();
        assert_eq!(folds.len(), 5);
        for fold in &folds {
            for class in EmotionClass::ALL {
                let n = fold.iter().filter(|id| manifest.label_of(id) == Some(class)).count();
                assert_eq!(n, 8, "40 train trials per class over 5 folds");
            }
        }
        let mut union: Vec<&String> = folds.iter().flatten().collect();
        union.sort();
        union.dedup();
        assert_eq!(union.len(), plan.train.len());
    }

    #[test]
    fn folds_need_k_trials_per_class() {
        let manifest = fake_manifest(4);
        let plan = split_stratified(&manifest, 0.8, 42).unwrap();
        // 3 train trials per class cannot fill 5 folds
        assert!(matches!(
            make_folds(&manifest, &plan.train, 5, 42),
            Err(DatasetError::TooFewTrials(_))
        ));
    }
}
