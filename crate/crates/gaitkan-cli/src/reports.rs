//! Report files shared by every run mode. Scores are rendered x100 to match
//! the presentation units of the study tables; metrics.json carries no wall
//! times, so reruns from a recorded config + seed reproduce it byte for
//! byte. All files are written atomically (temp file + rename).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gaitkan::metrics::ConfusionMatrix;
use gaitkan::models::EvalReport;
use gaitkan::stats::HarnessReport;

use crate::commands::CliError;

pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| {
        CliError::Io(format!("cannot write `{}`: {e}", path.display()))
    };
    let tmp: PathBuf = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

pub fn ensure_outdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create `{}`: {e}", dir.display())))
}

/// One evaluated (subject, model, condition) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub subject: String,
    pub model: String,
    /// "specific" or "pooled".
    pub condition: String,
    pub window: usize,
    pub seed: u64,
    pub n_test_windows: usize,
    pub fold_checksum: String,
    #[serde(flatten)]
    pub scores: ScoreBlock,
    #[serde(skip)]
    pub report: Option<EvalReport>,
    #[serde(skip)]
    pub train_seconds: f64,
    #[serde(skip)]
    pub inference_seconds: f64,
}

/// Percent-scaled scores as presented in the study tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreBlock {
    pub macro_f1_pct: f64,
    pub f1_pct: [f64; 3],
    pub precision_pct: [f64; 3],
    pub recall_pct: [f64; 3],
}

impl ScoreBlock {
    pub fn from_report(report: &EvalReport) -> Self {
        let mut f1 = [0.0; 3];
        let mut precision = [0.0; 3];
        let mut recall = [0.0; 3];
        for k in 0..3 {
            f1[k] = 100.0 * report.per_class[k].f1;
            precision[k] = 100.0 * report.per_class[k].precision;
            recall[k] = 100.0 * report.per_class[k].recall;
        }
        Self {
            macro_f1_pct: 100.0 * report.macro_f1,
            f1_pct: f1,
            precision_pct: precision,
            recall_pct: recall,
        }
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    label_order: [&'static str; 3],
    runs: &'a [RunEntry],
}

pub fn emit_metrics(outdir: &Path, runs: &[RunEntry]) -> Result<(), CliError> {
    let file = MetricsFile {
        label_order: ["SW", "ST", "SP"],
        runs,
    };
    let json = serde_json::to_string_pretty(&file).expect("serializable");
    write_atomic(&outdir.join("metrics.json"), &json)
}

/// Raw counts and row-normalized rates, one block of six rows per run.
pub fn emit_confusion(outdir: &Path, runs: &[RunEntry]) -> Result<(), CliError> {
    let mut out = String::from("subject,model,condition,kind,true_label,SW,ST,SP\n");
    for r in runs {
        let Some(report) = &r.report else { continue };
        let cm: &ConfusionMatrix = &report.confusion;
        for (i, label) in ["SW", "ST", "SP"].iter().enumerate() {
            let row = cm.counts[i];
            let _ = writeln!(
                out,
                "{},{},{},raw,{label},{},{},{}",
                r.subject, r.model, r.condition, row[0], row[1], row[2]
            );
        }
        let norm = cm.row_normalized();
        for (i, label) in ["SW", "ST", "SP"].iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},row_normalized,{label},{:.6},{:.6},{:.6}",
                r.subject, r.model, r.condition, norm[i][0], norm[i][1], norm[i][2]
            );
        }
    }
    write_atomic(&outdir.join("confusion.csv"), &out)
}

/// Ten paired division scores per run, plot-ready for violin rendering.
pub fn emit_divisions(outdir: &Path, runs: &[RunEntry]) -> Result<(), CliError> {
    let mut out = String::from("subject,model,condition,division,macro_f1\n");
    for r in runs {
        let Some(report) = &r.report else { continue };
        for (i, f1) in report.division_f1.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                r.subject, r.model, r.condition, i, f1
            );
        }
    }
    write_atomic(&outdir.join("divisions.csv"), &out)
}

#[derive(Serialize)]
struct StatsFile<'a> {
    /// Per-subject fold checksums; equal values across compared runs
    /// certify the paired design.
    fold_checksums: Vec<(String, String)>,
    harnesses: &'a [HarnessReport],
}

pub fn emit_stats(
    outdir: &Path,
    fold_checksums: Vec<(String, String)>,
    harnesses: &[HarnessReport],
) -> Result<(), CliError> {
    let file = StatsFile {
        fold_checksums,
        harnesses,
    };
    let json = serde_json::to_string_pretty(&file).expect("serializable");
    write_atomic(&outdir.join("stats.json"), &json)
}

pub fn emit_timing(outdir: &Path, runs: &[RunEntry]) -> Result<(), CliError> {
    let mut out =
        String::from("subject,model,condition,train_seconds,inference_seconds_per_window\n");
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.9}",
            r.subject, r.model, r.condition, r.train_seconds, r.inference_seconds
        );
    }
    write_atomic(&outdir.join("timing.csv"), &out)
}

pub fn emit_resolved_config<C: Serialize>(outdir: &Path, config: &C) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(config).expect("serializable");
    write_atomic(&outdir.join("config.json"), &json)
}
