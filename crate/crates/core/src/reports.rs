//! Report writers with stable, versionless schemas: identical inputs must
//! produce byte-identical files.

use crate::metrics::Metrics;
use crate::signals::EmotionClass;
use crate::train::CompareReport;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

fn f(v: f64) -> String {
    format!("{v:.6}")
}

/// `context,split,n,accuracy,macro_f1`, then `precision_c,recall_c,f1_c` per
/// class, then the flattened confusion matrix `c_<true>_<pred>`.
pub fn metrics_csv(rows: &[(String, String, Metrics)]) -> String {
    let k = EmotionClass::COUNT;
    let mut out = String::from("context,split,n,accuracy,macro_f1");
    for c in 0..k {
        let _ = write!(out, ",precision_{c},recall_{c},f1_{c}");
    }
    for t in 0..k {
        for p in 0..k {
            let _ = write!(out, ",c_{t}_{p}");
        }
    }
    out.push('\n');
    for (context, split, m) in rows {
        let _ = write!(out, "{context},{split},{},{},{}", m.n, f(m.accuracy), f(m.macro_f1));
        for cm in &m.per_class {
            let _ = write!(out, ",{},{},{}", f(cm.precision), f(cm.recall), f(cm.f1));
        }
        for row in &m.confusion {
            for v in row {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    out
}

/// `context,epoch,mean_loss` with 1-based epochs.
pub fn history_csv(rows: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("context,epoch,mean_loss\n");
    for (context, history) in rows {
        for (i, loss) in history.iter().enumerate() {
            let _ = writeln!(out, "{context},{},{}", i + 1, f(*loss));
        }
    }
    out
}

/// `expert,weight`: the mean gate weight per expert. Weights carry nine
/// decimals so the rounded values still sum to 1 within 1e-6.
pub fn alphas_csv(mean: &[f64]) -> String {
    let mut out = String::from("expert,weight\n");
    for (i, w) in mean.iter().enumerate() {
        let _ = writeln!(out, "{i},{w:.9}");
    }
    out
}

/// `snr_db,n,accuracy,macro_f1`.
pub fn noise_sweep_csv(rows: &[(f64, Metrics)]) -> String {
    let mut out = String::from("snr_db,n,accuracy,macro_f1\n");
    for (snr, m) in rows {
        let _ = writeln!(out, "{snr},{},{},{}", m.n, f(m.accuracy), f(m.macro_f1));
    }
    out
}

/// Human-readable fused-vs-last-layer comparison.
pub fn compare_text(report: &CompareReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "fused       n={} accuracy={} macro_f1={}",
        report.fused.n,
        f(report.fused.accuracy),
        f(report.fused.macro_f1)
    );
    let _ = writeln!(
        out,
        "last_layer  n={} accuracy={} macro_f1={}",
        report.last_layer.n,
        f(report.last_layer.accuracy),
        f(report.last_layer.macro_f1)
    );
    let _ = writeln!(
        out,
        "delta       accuracy={} macro_f1={}",
        f(report.fused.accuracy - report.last_layer.accuracy),
        f(report.fused.macro_f1 - report.last_layer.macro_f1)
    );
    out
}

/// A minimal bar chart of the mean gate weight per expert.
pub fn alpha_svg(mean: &[f64]) -> String {
    let bar_w = 28.0;
    let gap = 8.0;
    let plot_h = 160.0;
    let margin = 30.0;
    let width = margin * 2.0 + mean.len() as f64 * (bar_w + gap);
    let height = plot_h + margin * 2.0;
    let max = mean.iter().cloned().fold(f64::MIN, f64::max).max(1e-12);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.0}\" y=\"18\" font-family=\"monospace\" font-size=\"12\">mean gate \
         weight per expert</text>",
        margin
    );
    for (i, &w) in mean.iter().enumerate() {
        let h = (w / max) * plot_h;
        let x = margin + i as f64 * (bar_w + gap);
        let y = margin + (plot_h - h);
        let _ = writeln!(
            out,
            "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" \
             fill=\"#4477aa\"/>"
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"10\" \
             text-anchor=\"middle\">{i}</text>",
            x + bar_w / 2.0,
            margin + plot_h + 14.0
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_text(path: &Path, body: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, body)
}
