//! One function per pipeline stage. Every stage loads its `--config`
//! overlay, echoes the effective configuration, does the work, and reports
//! the files it wrote.

use crate::config::{resolve, Echo, Overlay};
use crate::index::{self, IndexHeader, IndexRow};
use crate::{args::*, CliError};
use nmoe::backbone::{forward_all, BackboneConfig, BackboneParams};
use nmoe::dataset::{
    generate_dataset, load_dataset, make_folds, split_stratified, write_dataset, DatasetManifest,
    SplitPlan, SynthConfig,
};
use nmoe::fusion::Model;
use nmoe::reports;
use nmoe::signals::{design_highpass, preprocess_record, segment_overlap, stride_for_overlap};
use nmoe::train::{
    alpha_stats, compare_last_layer, evaluate_model, fit, noise_sweep, TrainConfig,
    WindowEmbedding,
};
use nmoe::Metrics;
use std::fs;
use std::path::{Path, PathBuf};

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn write_report(path: &Path, body: &str) -> Result<(), CliError> {
    reports::write_text(path, body)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn make_plan(
    manifest: &DatasetManifest,
    train_fraction: f64,
    folds: Option<usize>,
    seed: u64,
) -> Result<SplitPlan, CliError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CliError::Validation(
            "train_fraction must lie strictly between 0 and 1".into(),
        ));
    }
    let mut plan = split_stratified(manifest, train_fraction, seed)?;
    if let Some(k) = folds {
        if k < 2 {
            return Err(CliError::Validation("folds must be >= 2".into()));
        }
        plan.folds = make_folds(manifest, &plan.train, k, seed)?;
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SplitSel {
    Train,
    Test,
    All,
}

fn parse_split(s: &str) -> Result<SplitSel, CliError> {
    match s {
        "train" => Ok(SplitSel::Train),
        "test" => Ok(SplitSel::Test),
        "all" => Ok(SplitSel::All),
        other => Err(CliError::Validation(format!(
            "unknown split {other:?}; expected train, test, or all"
        ))),
    }
}

fn select_windows<'a>(
    windows: &'a [WindowEmbedding],
    plan: &SplitPlan,
    sel: SplitSel,
) -> Vec<&'a WindowEmbedding> {
    windows
        .iter()
        .filter(|w| match sel {
            SplitSel::Train => plan.is_train(&w.trial_id),
            SplitSel::Test => !plan.is_train(&w.trial_id),
            SplitSel::All => true,
        })
        .collect()
}

fn parse_gating(s: &str) -> Result<bool, CliError> {
    match s {
        "conditioned" => Ok(true),
        "static" => Ok(false),
        other => Err(CliError::Validation(format!(
            "unknown gating mode {other:?}; expected static or conditioned"
        ))),
    }
}

fn parse_snrs(s: &str) -> Result<Vec<f64>, CliError> {
    let snrs: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let snrs =
        snrs.map_err(|_| CliError::Validation(format!("bad snr list {s:?}; expected numbers")))?;
    if snrs.is_empty() || snrs.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Validation("snr list must be non-empty and finite".into()));
    }
    Ok(snrs)
}

fn backbone_for(window_len: usize, seed: u64) -> Result<BackboneParams, CliError> {
    let cfg = BackboneConfig { input_len: window_len, seed, ..BackboneConfig::default() };
    Ok(BackboneParams::init(&cfg)?)
}

// ── synth ──────────────────────────────────────────────────────────────────

pub fn run_synth(a: SynthArgs) -> Result<(), CliError> {
    let o = Overlay::load(a.config.as_deref())?;
    o.check_keys(&["trials_per_class", "duration_s", "fs", "seed"])?;
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        trials_per_class: resolve(
            a.trials_per_class,
            o.get_usize("trials_per_class")?,
            defaults.trials_per_class,
        ),
        duration_s: resolve(a.duration_s, o.get_f64("duration_s")?, defaults.duration_s),
        fs: resolve(a.fs, o.get_f64("fs")?, defaults.fs),
        seed: resolve(a.seed, o.get_u64("seed")?, defaults.seed),
        ..defaults
    };
    let mut echo = Echo::new();
    echo.put("out", a.out.display());
    echo.put("trials_per_class", cfg.trials_per_class);
    echo.put("duration_s", cfg.duration_s);
    echo.put("fs", cfg.fs);
    echo.put("seed", cfg.seed);
    echo.print();
    let records = generate_dataset(&cfg)?;
    ensure_dir(&a.out)?;
    write_dataset(&records, &a.out)?;
    println!("wrote {} trials to {}", records.len(), a.out.display());
    Ok(())
}

// ── preprocess ─────────────────────────────────────────────────────────────

pub fn run_preprocess(a: PreprocessArgs) -> Result<(), CliError> {
    let o = Overlay::load(a.config.as_deref())?;
    o.check_keys(&["highpass_hz"])?;
    let highpass_hz = resolve(a.highpass_hz, o.get_f64("highpass_hz")?, 0.5);
    let mut echo = Echo::new();
    echo.put("data", a.data.display());
    echo.put("out", a.out.display());
    echo.put("highpass_hz", highpass_hz);
    echo.print();
    let records = load_dataset(&a.data)?;
    let mut out = Vec::with_capacity(records.len());
    for rec in &records {
        let coeffs = design_highpass(highpass_hz, rec.fs)?;
        out.push(preprocess_record(rec, &coeffs)?);
    }
    ensure_dir(&a.out)?;
    write_dataset(&out, &a.out)?;
    println!("preprocessed {} trials into {}", out.len(), a.out.display());
    Ok(())
}

// ── embed ──────────────────────────────────────────────────────────────────

pub fn run_embed(a: EmbedArgs) -> Result<(), CliError> {
    let o = Overlay::load(a.config.as_deref())?;
    o.check_keys(&["window_len", "overlap_pct", "backbone_seed"])?;
    let window_len = resolve(a.window_len, o.get_usize("window_len")?, 2560);
    let overlap_pct = resolve(a.overlap_pct, o.get_u32("overlap_pct")?, 50);
    let backbone_seed = resolve(a.backbone_seed, o.get_u64("backbone_seed")?, 42);
    if window_len == 0 {
        return Err(CliError::Validation("window_len must be >= 1".into()));
    }
    if overlap_pct >= 100 {
        return Err(CliError::Validation("overlap_pct must be < 100".into()));
    }
    let mut echo = Echo::new();
    echo.put("data", a.data.display());
    echo.put("out", a.out.display());
    echo.put("window_len", window_len);
    echo.put("overlap_pct", overlap_pct);
    echo.put("backbone_seed", backbone_seed);
    echo.print();

    let records = load_dataset(&a.data)?;
    let backbone = backbone_for(window_len, backbone_seed)?;
    let checksum = backbone.checksum();
    ensure_dir(&a.out)?;
    let stride = stride_for_overlap(window_len, overlap_pct);
    let mut rows: Vec<IndexRow> = Vec::new();
    let mut n_trials = 0usize;
    for rec in &records {
        n_trials += 1;
        for window in segment_overlap(rec, window_len, stride)? {
            let stack = forward_all(&backbone, &window.samples)?;
            let file = index::emb_file_name(&window.trial_id, window.start_index);
            stack.save(&a.out.join(&file))?;
            rows.push(IndexRow {
                path: PathBuf::from(file),
                trial_id: window.trial_id.clone(),
                label: window.label,
                start_index: window.start_index,
            });
        }
    }
    let header = IndexHeader { backbone_seed, window_len, overlap_pct, checksum };
    index::write_index(&a.out, &header, &rows)?;
    println!("embedded {} windows from {n_trials} trials", rows.len());
    println!("backbone_checksum={checksum:016x}");
    println!("wrote {}", a.out.join(index::INDEX_FILE).display());
    Ok(())
}

// ── train ──────────────────────────────────────────────────────────────────

fn train_config_from(
    a_epochs: Option<usize>,
    a_batch: Option<usize>,
    a_lr: Option<f64>,
    a_frac: Option<f64>,
    a_folds: Option<usize>,
    a_gating: Option<String>,
    a_seed: Option<u64>,
    o: &Overlay,
    header: &IndexHeader,
) -> Result<TrainConfig, CliError> {
    let defaults = TrainConfig::default();
    let gating = resolve(a_gating, o.get_string("gating")?, "conditioned".to_string());
    Ok(TrainConfig {
        epochs: resolve(a_epochs, o.get_usize("epochs")?, defaults.epochs),
        batch_size: resolve(a_batch, o.get_usize("batch_size")?, defaults.batch_size),
        lr: resolve(a_lr, o.get_f64("lr")?, defaults.lr),
        train_fraction: resolve(a_frac, o.get_f64("train_fraction")?, defaults.train_fraction),
        folds: resolve(a_folds, o.get_usize("folds")?, defaults.folds),
        window_len: header.window_len,
        overlap_pct: header.overlap_pct,
        conditioned: parse_gating(&gating)?,
        seed: resolve(a_seed, o.get_u64("seed")?, defaults.seed),
        ..defaults
    })
}

fn echo_train(echo: &mut Echo, cfg: &TrainConfig) {
    echo.put("epochs", cfg.epochs);
    echo.put("batch_size", cfg.batch_size);
    echo.put("lr", cfg.lr);
    echo.put("train_fraction", cfg.train_fraction);
    echo.put("folds", cfg.folds);
    echo.put("gating", if cfg.conditioned { "conditioned" } else { "static" });
    echo.put("seed", cfg.seed);
}

pub fn run_train(a: TrainArgs) -> Result<(), CliError> {
    let o = Overlay::load(a.config.as_deref())?;
    o.check_keys(&[
        "epochs",
        "batch_size",
        "lr",
        "train_fraction",
        "folds",
        "gating",
        "seed",
    ])?;
    let (header, windows) = index::load_embeddings(&a.emb)?;
    let cfg = train_config_from(
        a.epochs,
        a.batch_size,
        a.lr,
        a.train_fraction,
        a.folds,
        a.gating,
        a.seed,
        &o,
        &header,
    )?;
    let mut echo = Echo::new();
    echo.put("emb", a.emb.display());
    echo.put("out", a.out.display());
    echo_train(&mut echo, &cfg);
    echo.print();

    // The cache must come from the backbone we think it does, and training
    // must leave that backbone untouched.
    let backbone = backbone_for(header.window_len, header.backbone_seed)?;
    let before = backbone.checksum();
    if before != header.checksum {
        return Err(CliError::Runtime(format!(
            "embedding cache at {} was built with a different backbone \
             (cache checksum {:016x}, current {:016x})",
            a.emb.display(),
            header.checksum,
            before
        )));
    }

    let manifest = index::manifest_from_windows(&windows);
    let plan = make_plan(&manifest, cfg.train_fraction, Some(cfg.folds), cfg.seed)?;
    let report = fit(&windows, &plan, &cfg)?;
    let after = backbone.checksum();

    ensure_dir(&a.out)?;
    let model_path = a.out.join("model.ckpt");
    report.model.save(&model_path)?;
    println!("wrote {}", model_path.display());

    let mut metric_rows: Vec<(String, String, Metrics)> = Vec::new();
    for (i, m) in report.fold_metrics.iter().enumerate() {
        metric_rows.push((format!("fold_{}", i + 1), "val".to_string(), m.clone()));
    }
    metric_rows.push(("final".to_string(), "test".to_string(), report.test_metrics.clone()));
    write_report(&a.out.join("metrics.csv"), &reports::metrics_csv(&metric_rows))?;

    let mut history_rows: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, h) in report.fold_histories.iter().enumerate() {
        history_rows.push((format!("fold_{}", i + 1), h.clone()));
    }
    history_rows.push(("final".to_string(), report.history.clone()));
    write_report(&a.out.join("history.csv"), &reports::history_csv(&history_rows))?;

    write_report(&a.out.join("alphas.csv"), &reports::alphas_csv(&report.alpha_mean))?;

    println!("trainable_params={}", report.model.trainable_count());
    for (i, m) in report.fold_metrics.iter().enumerate() {
        println!(
            "fold_{} val_accuracy={} val_macro_f1={}",
            i + 1,
            f6(m.accuracy),
            f6(m.macro_f1)
        );
    }
    if !report.fold_metrics.is_empty() {
        let k = report.fold_metrics.len() as f64;
        let acc = report.fold_metrics.iter().map(|m| m.accuracy).sum::<f64>() / k;
        let mf1 = report.fold_metrics.iter().map(|m| m.macro_f1).sum::<f64>() / k;
        println!("cv_mean val_accuracy={} val_macro_f1={}", f6(acc), f6(mf1));
    }
    println!(
        "final test_accuracy={} test_macro_f1={}",
        f6(report.test_metrics.accuracy),
        f6(report.test_metrics.macro_f1)
    );
    println!("backbone_checksum before={before:016x} after={after:016x}");
    Ok(())
}

// ── eval ───────────────────────────────────────────────────────────────────

pub fn run_eval(a: EvalArgs) -> Result<(), CliError> {
    let o = Overlay::load(a.config.as_deref())?;
    o.check_keys(&["split", "train_fraction", "seed"])?;
    let split = resolve(a.split, o.get_string("split")?, "test".to_string());
    let sel = parse_split(&split)?;
    let train_fraction = resolve(a.train_fraction, o.get_f64("train_fraction")?, 0.8);
    let seed = resolve(a.seed, o.get_u64("seed")?, 7);
    let mut echo = Echo::new();
    echo.put("emb", a.emb.display());
    echo.put("model", a.model.display());
    echo.put("out", a.out.display());
    echo.put("split", &split);
    echo.put("train_fraction", train_fraction);
    echo.put("seed", seed);
    echo.print();

    let (_, windows) = index::load_embeddings(&a.emb)?;
    let model = Model::load(&a.model)?;
    let manifest = index::manifest_from_windows(&windows);
    let plan = make_plan(&manifest, train_fraction, None, seed)?;
    let selected = select_windows(&windows, &plan, sel);
    if selected.is_empty() {
        return Err(CliError::Runtime(format!("no windows in split {split:?}")));
    }
    let metrics = evaluate_model(&model, &selected)?;
    ensure_dir(&a.out)?;
    let rows = vec![("eval".to_string(), split.clone(), metrics.clone())];
    write_report(&a.out.join("metrics.csv"), &reports::metrics_csv(&rows))?;
    println!(
        "eval split={split} n={} accuracy={} macro_f1={}",
        metrics.n,
        f6(metrics.accuracy),
        f6(metrics.macro_f1)
    );
    Ok(())
}

// ── sweep-noise ────────────────────────────────────────────────────────────

pub fn run_sweep_noise(a: SweepNoiseArgs) -> Result<(), CliError> {
    let o = Overlay::load(a.config.as_deref())?;
    o.check_keys(&[
        "snrs",
        "window_len",
        "overlap_pct",
        "backbone_seed",
        "train_fraction",
        "seed",
    ])?;
    let snrs_text = resolve(a.snrs, o.get_string("snrs")?, "300,20,10,0,-10,-40".to_string());
    let snrs = parse_snrs(&snrs_text)?;
    let window_len = resolve(a.window_len, o.get_usize("window_len")?, 2560);
    let overlap_pct = resolve(a.overlap_pct, o.get_u32("overlap_pct")?, 50);
    let backbone_seed = resolve(a.backbone_seed, o.get_u64("backbone_seed")?, 42);
    let train_fraction = resolve(a.train_fraction, o.get_f64("train_fraction")?, 0.8);
    let seed = resolve(a.seed, o.get_u64("seed")?, 7);
    let mut echo = Echo::new();
    echo.put("data", a.data.display());
    echo.put("model", a.model.display());
    echo.put("out", a.out.display());
    echo.put("snrs", &snrs_text);
    echo.put("window_len", window_len);
    echo.put("overlap_pct", overlap_pct);
    echo.put("backbone_seed", backbone_seed);
    echo.put("train_fraction", train_fraction);
    echo.put("seed", seed);
    echo.print();

    let records = load_dataset(&a.data)?;
    let manifest_path = a.data.join(nmoe::dataset::MANIFEST_FILE);
    let manifest = nmoe::dataset::load_manifest(&manifest_path)?;
    let plan = make_plan(&manifest, train_fraction, None, seed)?;
    let test_records: Vec<_> =
        records.into_iter().filter(|r| !plan.is_train(&r.trial_id)).collect();
    if test_records.is_empty() {
        return Err(CliError::Runtime("no test trials to sweep".into()));
    }
    let model = Model::load(&a.model)?;
    let backbone = backbone_for(window_len, backbone_seed)?;
    let cfg = TrainConfig {
        window_len,
        overlap_pct,
        train_fraction,
        seed,
        ..TrainConfig::default()
    };
    let sweep = noise_sweep(&backbone, &model, &test_records, &cfg, &snrs, seed)?;
    ensure_dir(&a.out)?;
    write_report(&a.out.join("noise_sweep.csv"), &reports::noise_sweep_csv(&sweep))?;
    for (snr, m) in &sweep {
        println!("snr_db={snr} n={} accuracy={} macro_f1={}", m.n, f6(m.accuracy), f6(m.macro_f1));
    }
    Ok(())
}

// ── compare ────────────────────────────────────────────────────────────────

pub fn run_compare(a: CompareArgs) -> Result<(), CliError> {
    let o = Overlay::load(a.config.as_deref())?;
    o.check_keys(&[
        "epochs",
        "batch_size",
        "lr",
        "train_fraction",
        "folds",
        "gating",
        "seed",
    ])?;
    let (header, windows) = index::load_embeddings(&a.emb)?;
    let cfg = train_config_from(
        a.epochs,
        a.batch_size,
        a.lr,
        a.train_fraction,
        a.folds,
        a.gating,
        a.seed,
        &o,
        &header,
    )?;
    let mut echo = Echo::new();
    echo.put("emb", a.emb.display());
    echo.put("out", a.out.display());
    echo_train(&mut echo, &cfg);
    echo.print();

    let manifest = index::manifest_from_windows(&windows);
    let plan = make_plan(&manifest, cfg.train_fraction, None, cfg.seed)?;
    let report = compare_last_layer(&windows, &plan, &cfg)?;
    ensure_dir(&a.out)?;
    let body = reports::compare_text(&report);
    write_report(&a.out.join("compare.txt"), &body)?;
    print!("{body}");
    Ok(())
}

// ── report-alphas ──────────────────────────────────────────────────────────

pub fn run_report_alphas(a: ReportAlphasArgs) -> Result<(), CliError> {
    let o = Overlay::load(a.config.as_deref())?;
    o.check_keys(&["split", "train_fraction", "seed"])?;
    let split = resolve(a.split, o.get_string("split")?, "test".to_string());
    let sel = parse_split(&split)?;
    let train_fraction = resolve(a.train_fraction, o.get_f64("train_fraction")?, 0.8);
    let seed = resolve(a.seed, o.get_u64("seed")?, 7);
    let mut echo = Echo::new();
    echo.put("emb", a.emb.display());
    echo.put("model", a.model.display());
    echo.put("out", a.out.display());
    echo.put("split", &split);
    echo.put("train_fraction", train_fraction);
    echo.put("seed", seed);
    echo.print();

    let (_, windows) = index::load_embeddings(&a.emb)?;
    let model = Model::load(&a.model)?;
    let manifest = index::manifest_from_windows(&windows);
    let plan = make_plan(&manifest, train_fraction, None, seed)?;
    let selected = select_windows(&windows, &plan, sel);
    if selected.is_empty() {
        return Err(CliError::Runtime(format!("no windows in split {split:?}")));
    }
    let (mean, std) = alpha_stats(&model, &selected)?;
    ensure_dir(&a.out)?;
    write_report(&a.out.join("alphas.csv"), &reports::alphas_csv(&mean))?;
    write_report(&a.out.join("alphas.svg"), &reports::alpha_svg(&mean))?;
    for (i, (m, s)) in mean.iter().zip(&std).enumerate() {
        println!("expert_{i} mean={} std={}", f6(*m), f6(*s));
    }
    Ok(())
}
