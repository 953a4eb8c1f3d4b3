//! CSV and text reports derived from a [`RunLog`].
//!
//! | file | header |
//! |------|--------|
//! | `nonzeros.csv` | `phase,layer,before,after` |
//! | `hist_<layer>.csv` | `phase,bin,lower,upper,pre,post` |
//! | `summary.csv` | `row,original,pruned` |
//! | `threshold_<phase>.csv` | `t,nonzero_count,val_metric` |
//! | `decisions_<phase>.txt` | `layer,index,reason,splevel_f,splevel_g` |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{bytes_to_mb, count_flops, count_params, filter_counts, model_size_bytes};
use crate::pipeline::{PhaseRecord, RunLog};
use crate::prune::{PruneDecision, Reason};
use crate::sparsify::SweepPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonzeroCsvRow {
    pub phase: String,
    pub layer: String,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCsvRow {
    pub phase: String,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub pre: u64,
    pub post: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCsvRow {
    pub row: String,
    pub original: f64,
    pub pruned: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionCsvRow {
    pub layer: String,
    pub index: usize,
    pub reason: String,
    pub splevel_f: f64,
    pub splevel_g: Option<f64>,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn decision_rows(decisions: &[PruneDecision]) -> Vec<DecisionCsvRow> {
    decisions
        .iter()
        .flat_map(|d| {
            d.filters.iter().map(|f| DecisionCsvRow {
                layer: d.layer.clone(),
                index: f.index,
                reason: f.reason.to_string(),
                splevel_f: f.splevel_f,
                splevel_g: f.splevel_g,
            })
        })
        .collect()
}

pub fn write_decisions(path: &Path, decisions: &[PruneDecision]) -> Result<()> {
    write_rows(path, &decision_rows(decisions))
}

/// Reads a decisions file back, checking every reason string.
pub fn read_decisions(path: &Path) -> Result<Vec<DecisionCsvRow>> {
    let rows: Vec<DecisionCsvRow> = read_rows(path)?;
    for r in &rows {
        r.reason.parse::<Reason>()?;
    }
    Ok(rows)
}

pub fn write_sweep(path: &Path, sweep: &[SweepPoint]) -> Result<()> {
    write_rows(path, sweep)
}

pub fn nonzero_rows(log: &RunLog) -> Vec<NonzeroCsvRow> {
    log.phases
        .iter()
        .flat_map(|p| {
            p.nonzeros.iter().map(|n| NonzeroCsvRow {
                phase: p.name.clone(),
                layer: n.layer.clone(),
                before: n.before,
                after: n.after,
            })
        })
        .collect()
}

/// Histogram rows per layer, phases in order.
pub fn histogram_rows(log: &RunLog) -> BTreeMap<String, Vec<HistogramCsvRow>> {
    let mut out: BTreeMap<String, Vec<HistogramCsvRow>> = BTreeMap::new();
    for p in &log.phases {
        for h in &p.histograms {
            let rows = out.entry(h.layer.clone()).or_default();
            for b in 0..h.bins() {
                let (lower, upper) = h.edges(b);
                rows.push(HistogramCsvRow {
                    phase: p.name.clone(),
                    bin: b,
                    lower,
                    upper,
                    pre: h.pre[b],
                    post: h.post[b],
                });
            }
        }
    }
    out
}

/// Per-layer output counts, then `params`, `size_mb`, `flops` and `val_acc`.
pub fn summary_rows(log: &RunLog) -> Result<Vec<SummaryCsvRow>> {
    let pruned: BTreeMap<String, usize> = filter_counts(&log.final_spec).into_iter().collect();
    let mut rows: Vec<SummaryCsvRow> = filter_counts(&log.original_spec)
        .into_iter()
        .map(|(layer, n)| SummaryCsvRow {
            original: n as f64,
            pruned: pruned.get(&layer).copied().unwrap_or(0) as f64,
            row: layer,
        })
        .collect();
    let (a, b) = (&log.original_spec, &log.final_spec);
    rows.push(SummaryCsvRow {
        row: "params".into(),
        original: count_params(a, true)?.total as f64,
        pruned: count_params(b, true)?.total as f64,
    });
    rows.push(SummaryCsvRow {
        row: "size_mb".into(),
        original: bytes_to_mb(model_size_bytes(a)?),
        pruned: bytes_to_mb(model_size_bytes(b)?),
    });
    rows.push(SummaryCsvRow {
        row: "flops".into(),
        original: count_flops(a)?.total as f64,
        pruned: count_flops(b)?.total as f64,
    });
    rows.push(SummaryCsvRow {
        row: "val_acc".into(),
        original: log.baseline_metric,
        pruned: log.final_metric,
    });
    Ok(rows)
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn phase_files(outdir: &Path, p: &PhaseRecord) -> (PathBuf, PathBuf) {
    let name = file_safe(&p.name);
    (
        outdir.join(format!("threshold_{name}.csv")),
        outdir.join(format!("decisions_{name}.txt")),
    )
}

/// Writes every report for `log` into `outdir` and returns the paths.
pub fn emit_reports(log: &RunLog, outdir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut written = Vec::new();
    let path = outdir.join("nonzeros.csv");
    write_rows(&path, &nonzero_rows(log))?;
    written.push(path);
    for (layer, rows) in histogram_rows(log) {
        let path = outdir.join(format!("hist_{}.csv", file_safe(&layer)));
        write_rows(&path, &rows)?;
        written.push(path);
    }
    let path = outdir.join("summary.csv");
    write_rows(&path, &summary_rows(log)?)?;
    written.push(path);
    for p in &log.phases {
        let (sweep, decisions) = phase_files(outdir, p);
        write_sweep(&sweep, &p.threshold.sweep)?;
        write_decisions(&decisions, &p.decisions)?;
        written.push(sweep);
        written.push(decisions);
    }
    Ok(written)
}
