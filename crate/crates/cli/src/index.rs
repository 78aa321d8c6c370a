//! Embedding cache layout: one `.emb` stack per window plus an `index.csv`
//! that records provenance and the exact backbone the cache was built with.

use crate::CliError;
use nmoe::dataset::{DatasetManifest, ManifestEntry};
use nmoe::{EmbeddingStack, EmotionClass, WindowEmbedding};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const INDEX_FILE: &str = "index.csv";
const INDEX_HEADER: &str = "path,trial_id,label,start_index";

#[derive(Debug, Clone, PartialEq)]
pub struct IndexHeader {
    pub backbone_seed: u64,
    pub window_len: usize,
    pub overlap_pct: u32,
    /// Checksum of the frozen backbone parameters used for the cache.
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRow {
    pub path: PathBuf,
    pub trial_id: String,
    pub label: EmotionClass,
    pub start_index: usize,
}

pub fn emb_file_name(trial_id: &str, start_index: usize) -> String {
    format!("{trial_id}_{start_index:08}.emb")
}

pub fn write_index(dir: &Path, header: &IndexHeader, rows: &[IndexRow]) -> Result<(), CliError> {
    let mut body = String::new();
    let _ = writeln!(body, "# version=1");
    let _ = writeln!(body, "# backbone_seed={}", header.backbone_seed);
    let _ = writeln!(body, "# window_len={}", header.window_len);
    let _ = writeln!(body, "# overlap_pct={}", header.overlap_pct);
    let _ = writeln!(body, "# checksum={:016x}", header.checksum);
    let _ = writeln!(body, "{INDEX_HEADER}");
    for r in rows {
        let _ = writeln!(body, "{},{},{},{}", r.path.display(), r.trial_id, r.label, r.start_index);
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, body)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn load_index(dir: &Path) -> Result<(IndexHeader, Vec<IndexRow>), CliError> {
    let path = dir.join(INDEX_FILE);
    let body = fs::read_to_string(&path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let bad = |reason: String| CliError::Runtime(format!("{}: {reason}", path.display()));
    let mut lines = body.lines();
    let mut meta = std::collections::BTreeMap::new();
    let mut header_line = None;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some((k, v)) = rest.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        } else {
            header_line = Some(line);
            break;
        }
    }
    if meta.get("version").map(String::as_str) != Some("1") {
        return Err(bad("unsupported or missing index version".into()));
    }
    if header_line != Some(INDEX_HEADER) {
        return Err(bad(format!("bad column header {header_line:?}")));
    }
    let field = |key: &str| {
        meta.get(key).ok_or_else(|| bad(format!("missing header field {key:?}"))).cloned()
    };
    let header = IndexHeader {
        backbone_seed: field("backbone_seed")?
            .parse()
            .map_err(|_| bad("bad backbone_seed".into()))?,
        window_len: field("window_len")?.parse().map_err(|_| bad("bad window_len".into()))?,
        overlap_pct: field("overlap_pct")?.parse().map_err(|_| bad("bad overlap_pct".into()))?,
        checksum: u64::from_str_radix(&field("checksum")?, 16)
            .map_err(|_| bad("bad checksum".into()))?,
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(format!("expected 4 columns, got {} in {line:?}", cols.len())));
        }
        let label = EmotionClass::parse(cols[2])
            .ok_or_else(|| bad(format!("unknown label {:?}", cols[2])))?;
        rows.push(IndexRow {
            path: PathBuf::from(cols[0]),
            trial_id: cols[1].to_string(),
            label,
            start_index: cols[3].parse().map_err(|_| bad("bad start_index".into()))?,
        });
    }
    if rows.is_empty() {
        return Err(bad("index lists no windows".into()));
    }
    Ok((header, rows))
}

/// Load every cached stack and pool it into a [`WindowEmbedding`].
pub fn load_embeddings(dir: &Path) -> Result<(IndexHeader, Vec<WindowEmbedding>), CliError> {
    let (header, rows) = load_index(dir)?;
    let mut out = Vec::with_capacity(rows.len());
    for r in &rows {
        let stack = EmbeddingStack::load(&dir.join(&r.path))?;
        out.push(WindowEmbedding {
            trial_id: r.trial_id.clone(),
            label: r.label,
            start_index: r.start_index,
            pooled: stack.pooled(),
        });
    }
    Ok((header, out))
}

/// Rebuild the trial-level view of the dataset from the pooled windows
/// (first appearance order, which follows the dataset manifest).
pub fn manifest_from_windows(windows: &[WindowEmbedding]) -> DatasetManifest {
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for w in windows {
        if !entries.iter().any(|e| e.trial_id == w.trial_id) {
            entries.push(ManifestEntry {
                path: PathBuf::from(format!("{}.ecg", w.trial_id)),
                trial_id: w.trial_id.clone(),
                label: w.label,
                fs: 0.0,
            });
        }
    }
    DatasetManifest { version: 1, root: PathBuf::from("."), entries }
}
