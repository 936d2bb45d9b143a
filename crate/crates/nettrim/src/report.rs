//! Per-iteration records of the trim loop, file emission, and the
//! side-by-side weight-initialization comparison table.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apoz::{ApozReport, ThresholdCounts, HISTOGRAM_BINS};
use crate::error::{Error, Result};

/// Condensed APoZ statistics for one target layer at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerApozSummary {
    pub name: String,
    /// Neuron count of this layer at this iteration.
    pub width: usize,
    pub mean: f64,
    pub stddev: f64,
    pub threshold_counts: ThresholdCounts,
    pub histogram: Vec<u64>,
}

impl LayerApozSummary {
    pub fn from_report(report: &ApozReport) -> Vec<LayerApozSummary> {
        report
            .layers
            .iter()
            .map(|l| LayerApozSummary {
                name: l.name.clone(),
                width: l.apoz.len(),
                mean: l.mean,
                stddev: l.stddev,
                threshold_counts: l.threshold_counts,
                histogram: l.histogram.clone(),
            })
            .collect()
    }
}

/// One row of the loop record: what the network looked like after this
/// iteration's (re)training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// Widths of parameterized layers, e.g. "20-41-426-10".
    pub config: String,
    pub params: usize,
    /// Parameter ratio versus iteration 0.
    pub compression: f64,
    /// Accuracy entering retraining (for iteration 0: the untrained net).
    pub pre_accuracy: f64,
    /// Test accuracy after this iteration's training.
    pub post_accuracy: f64,
    pub apoz: Vec<LayerApozSummary>,
    pub checkpoint_digest: String,
    pub wall_secs: f64,
}

impl IterationReport {
    pub fn apoz_for(&self, layer: &str) -> Option<&LayerApozSummary> {
        self.apoz.iter().find(|l| l.name == layer)
    }
}

/// Write the run record: reports.jsonl, summary.csv, and one histogram
/// CSV per iteration per target layer. Returns the paths written.
/// The CSV summary contains no timing fields, so identical runs produce
/// byte-identical files.
pub fn emit_reports(reports: &[IterationReport], dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::Input("no reports to emit".into()));
    }
    if reports[0].apoz.is_empty() {
        return Err(Error::Config(
            "reports carry no target layers; nothing to emit".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let jsonl_path = dir.join("reports.jsonl");
    {
        let mut f = fs::File::create(&jsonl_path).map_err(|e| Error::io(&jsonl_path, e))?;
        for r in reports {
            let line =
                serde_json::to_string(r).map_err(|e| Error::Config(format!("encode: {e}")))?;
            writeln!(f, "{line}").map_err(|e| Error::io(&jsonl_path, e))?;
        }
    }
    written.push(jsonl_path);

    let csv_path = dir.join("summary.csv");
    {
        let mut out = String::from("iteration,config,params,compression,pre_acc,post_acc");
        for l in &reports[0].apoz {
            out.push_str(&format!(",mean_apoz_{}", l.name));
        }
        out.push('\n');
        for r in reports {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6}",
                r.iteration, r.config, r.params, r.compression, r.pre_accuracy, r.post_accuracy
            ));
            for l in &reports[0].apoz {
                let mean = r.apoz_for(&l.name).map(|s| s.mean).unwrap_or(f64::NAN);
                out.push_str(&format!(",{mean:.6}"));
            }
            out.push('\n');
        }
        fs::write(&csv_path, out).map_err(|e| Error::io(&csv_path, e))?;
    }
    written.push(csv_path);

    for r in reports {
        for l in &r.apoz {
            let path = dir.join(format!("hist-iter{:02}-{}.csv", r.iteration, l.name));
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "bin_low,bin_high,count").map_err(|e| Error::io(&path, e))?;
            for (b, count) in l.histogram.iter().enumerate() {
                let lo = b as f64 / HISTOGRAM_BINS as f64;
                let hi = (b + 1) as f64 / HISTOGRAM_BINS as f64;
                writeln!(f, "{lo:.2},{hi:.2},{count}").map_err(|e| Error::io(&path, e))?;
            }
            written.push(path);
        }
    }
    Ok(written)
}

/// Read back a reports.jsonl file.
pub fn load_reports(path: &Path) -> Result<Vec<IterationReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Data(format!("reports.jsonl: {e}"))))
        .collect()
}

/// One iteration column of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationColumn {
    pub neurons: usize,
    pub accuracy: f64,
    pub mean_apoz: f64,
    pub threshold_counts: ThresholdCounts,
}

/// Side-by-side record of two runs (with and without ancestor weights)
/// for one target layer, over their common iteration prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub layer: String,
    pub with_init: Vec<AblationColumn>,
    pub from_scratch: Vec<AblationColumn>,
}

fn column(report: &IterationReport, layer: &str) -> Result<AblationColumn> {
    let s = report
        .apoz_for(layer)
        .ok_or_else(|| Error::Input(format!("layer '{layer}' missing from report")))?;
    Ok(AblationColumn {
        neurons: s.width,
        accuracy: report.post_accuracy,
        mean_apoz: s.mean,
        threshold_counts: s.threshold_counts,
    })
}

/// Build the comparison over the common iteration prefix of both runs.
/// Both runs must have completed at least two iterations.
pub fn ablation_table(
    with_init: &[IterationReport],
    from_scratch: &[IterationReport],
    layer: &str,
) -> Result<AblationTable> {
    let common = with_init.len().min(from_scratch.len());
    if common < 2 {
        return Err(Error::Input(format!(
            "need at least 2 common iterations, have {common}"
        )));
    }
    Ok(AblationTable {
        layer: layer.to_string(),
        with_init: with_init[..common]
            .iter()
            .map(|r| column(r, layer))
            .collect::<Result<_>>()?,
        from_scratch: from_scratch[..common]
            .iter()
            .map(|r| column(r, layer))
            .collect::<Result<_>>()?,
    })
}

impl AblationTable {
    /// Fixed row labels of the rendered table.
    pub fn row_labels(&self) -> Vec<String> {
        vec![
            format!("Number of Neurons in {}", self.layer.to_uppercase()),
            "Accuracy (%)".to_string(),
            "Mean APoZ (%)".to_string(),
            "#{APoZ>0.6}".to_string(),
            "#{APoZ>0.7}".to_string(),
            "#{APoZ>0.8}".to_string(),
            "#{APoZ>0.9}".to_string(),
        ]
    }

    fn rows(cols: &[AblationColumn]) -> Vec<Vec<String>> {
        vec![
            cols.iter().map(|c| c.neurons.to_string()).collect(),
            cols.iter().map(|c| format!("{:.2}", c.accuracy * 100.0)).collect(),
            cols.iter().map(|c| format!("{:.2}", c.mean_apoz * 100.0)).collect(),
            cols.iter().map(|c| c.threshold_counts.gt_0_6.to_string()).collect(),
            cols.iter().map(|c| c.threshold_counts.gt_0_7.to_string()).collect(),
            cols.iter().map(|c| c.threshold_counts.gt_0_8.to_string()).collect(),
            cols.iter().map(|c| c.threshold_counts.gt_0_9.to_string()).collect(),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for i in 0..self.with_init.len() {
            out.push_str(&format!(",with_init_{i}"));
        }
        for i in 0..self.from_scratch.len() {
            out.push_str(&format!(",from_scratch_{i}"));
        }
        out.push('\n');
        let left = Self::rows(&self.with_init);
        let right = Self::rows(&self.from_scratch);
        for (label, (l, r)) in self.row_labels().iter().zip(left.iter().zip(right.iter())) {
            out.push_str(&format!("\"{label}\",{},{}\n", l.join(","), r.join(",")));
        }
        out
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let left = Self::rows(&self.with_init);
        let right = Self::rows(&self.from_scratch);
        writeln!(f, "{:<28} | {:^23} | {:^23}", "", "With Weight Init", "Without Weight Init")?;
        for (label, (l, r)) in self.row_labels().iter().zip(left.iter().zip(right.iter())) {
            writeln!(
                f,
                "{label:<28} | {:<23} | {:<23}",
                l.join("  "),
                r.join("  ")
            )?;
        }
        Ok(())
    }
}
