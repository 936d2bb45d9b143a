//! Per-neuron average-percentage-of-zeros (APoZ) statistics.
//!
//! A neuron is one output channel of a conv layer (its zeros are pooled
//! over all spatial positions) or one feature of a dense layer. The
//! statistic is the exact fraction of post-ReLU outputs equal to zero over
//! a dataset, tracked with integer counts so any sharding or batch size
//! yields identical results. Counting uses exact equality with 0.0: ReLU
//! emits exact zeros, and a tolerance would silently change the statistic.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forward::ActivationTrace;
use crate::layer::LayerSpec;
use crate::network::Network;

pub const HISTOGRAM_BINS: usize = 20;

/// Counts of neurons strictly above the standard report thresholds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    #[serde(rename = "0.6")]
    pub gt_0_6: usize,
    #[serde(rename = "0.7")]
    pub gt_0_7: usize,
    #[serde(rename = "0.8")]
    pub gt_0_8: usize,
    #[serde(rename = "0.9")]
    pub gt_0_9: usize,
}

impl ThresholdCounts {
    pub const THRESHOLDS: [f64; 4] = [0.6, 0.7, 0.8, 0.9];

    pub fn as_array(&self) -> [(f64, usize); 4] {
        [
            (0.6, self.gt_0_6),
            (0.7, self.gt_0_7),
            (0.8, self.gt_0_8),
            (0.9, self.gt_0_9),
        ]
    }
}

/// A resolved measurement point: a parameterized layer and the ReLU whose
/// output carries its zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApozTarget {
    /// Index of the owning conv/dense layer (the prunable one).
    pub owner: usize,
    pub owner_name: String,
    /// Index of the ReLU layer actually measured.
    pub relu: usize,
    /// Neuron count (channels or features).
    pub channels: usize,
    /// Feature-map size M per neuron per example (1 for dense).
    pub spatial: usize,
}

/// Resolve a target name. Accepts a ReLU-activated conv/dense layer
/// ("conv2", "fc1") or a ReLU layer directly ("relu2" or its index);
/// anything whose output is not a post-ReLU map is a configuration error.
pub fn resolve_target(net: &Network, name: &str) -> Result<ApozTarget> {
    let idx = net
        .layer_by_name(name)
        .ok_or_else(|| Error::Config(format!("no layer named '{name}'")))?;
    let (owner, relu) = match net.layers()[idx] {
        LayerSpec::Relu => {
            let owner = (0..idx)
                .rev()
                .find(|&j| net.layers()[j].is_parameterized())
                .ok_or_else(|| {
                    Error::Config(format!("'{name}' has no parameterized layer upstream"))
                })?;
            (owner, idx)
        }
        LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => {
            let relu = net.activation_of(idx).ok_or_else(|| {
                Error::Config(format!("layer '{name}' is not ReLU-activated"))
            })?;
            (idx, relu)
        }
        _ => {
            return Err(Error::Config(format!(
                "layer '{name}' ({}) is not a post-ReLU measurement point",
                net.layers()[idx].kind_name()
            )))
        }
    };
    let shape = net.output_shape_of(relu);
    Ok(ApozTarget {
        owner,
        owner_name: net.name_of(owner).to_string(),
        relu,
        channels: shape[0],
        spatial: shape[1..].iter().product::<usize>().max(1),
    })
}

pub fn resolve_targets(net: &Network, names: &[String]) -> Result<Vec<ApozTarget>> {
    if names.is_empty() {
        return Err(Error::Config("no target layers given".into()));
    }
    let mut targets = Vec::with_capacity(names.len());
    for name in names {
        let t = resolve_target(net, name)?;
        if targets.iter().any(|u: &ApozTarget| u.owner == t.owner) {
            return Err(Error::Config(format!(
                "target layer '{name}' listed twice"
            )));
        }
        targets.push(t);
    }
    Ok(targets)
}

/// Exact integer zero counts per neuron, mergeable across dataset shards.
#[derive(Debug, Clone)]
pub struct ApozAccumulator {
    targets: Vec<ApozTarget>,
    zero_counts: Vec<Vec<u64>>,
    /// Per target: running N x M (examples seen x map size).
    elements: Vec<u64>,
}

impl ApozAccumulator {
    pub fn new(net: &Network, target_names: &[String]) -> Result<Self> {
        Ok(Self::from_targets(resolve_targets(net, target_names)?))
    }

    pub fn from_targets(targets: Vec<ApozTarget>) -> Self {
        let zero_counts = targets.iter().map(|t| vec![0u64; t.channels]).collect();
        let elements = vec![0u64; targets.len()];
        ApozAccumulator {
            targets,
            zero_counts,
            elements,
        }
    }

    pub fn targets(&self) -> &[ApozTarget] {
        &self.targets
    }

    /// Raw counts, exposed for exact cross-checks.
    pub fn counts(&self) -> (&[Vec<u64>], &[u64]) {
        (&self.zero_counts, &self.elements)
    }

    /// Count the exact zeros of one forward trace into the accumulator.
    pub fn accumulate(&mut self, trace: &ActivationTrace) -> Result<()> {
        for (ti, target) in self.targets.iter().enumerate() {
            let out = trace.outputs.get(target.relu).ok_or_else(|| {
                Error::Input(format!(
                    "trace has no layer {} (different network?)",
                    target.relu
                ))
            })?;
            let shape = out.shape();
            let n = shape[0];
            let c = shape[1];
            let m: usize = shape[2..].iter().product::<usize>().max(1);
            if c != target.channels || m != target.spatial {
                return Err(Error::Input(format!(
                    "trace layer {} has {c}x{m} outputs, accumulator expects {}x{} \
                     (different network?)",
                    target.relu, target.channels, target.spatial
                )));
            }
            let data = out.as_slice();
            let counts = &mut self.zero_counts[ti];
            for ex in 0..n {
                for (ch, count) in counts.iter_mut().enumerate() {
                    let base = (ex * c + ch) * m;
                    let zeros = data[base..base + m].iter().filter(|&&v| v == 0.0).count();
                    *count += zeros as u64;
                }
            }
            self.elements[ti] += (n * m) as u64;
        }
        Ok(())
    }

    /// Sum another accumulator's counts into this one; integer arithmetic,
    /// so any partition of the data yields identical totals.
    pub fn merge(&mut self, other: &ApozAccumulator) -> Result<()> {
        if self.targets != other.targets {
            return Err(Error::Input(
                "cannot merge accumulators with different targets".into(),
            ));
        }
        for (a, b) in self.zero_counts.iter_mut().zip(&other.zero_counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.elements.iter_mut().zip(&other.elements) {
            *a += b;
        }
        Ok(())
    }

    /// Per-neuron APoZ per target layer: zero_count / (N x M), in [0, 1].
    pub fn apoz(&self) -> Result<Vec<Vec<f64>>> {
        self.targets
            .iter()
            .enumerate()
            .map(|(ti, t)| {
                let denom = self.elements[ti];
                if denom == 0 {
                    return Err(Error::Input(format!(
                        "no data accumulated for layer '{}'",
                        t.owner_name
                    )));
                }
                Ok(self.zero_counts[ti]
                    .iter()
                    .map(|&z| z as f64 / denom as f64)
                    .collect())
            })
            .collect()
    }
}

/// Mean, population standard deviation, threshold counts and a 20-bin
/// histogram over [0, 1] for one layer's APoZ values.
pub fn layer_summary(apoz: &[f64]) -> (f64, f64, ThresholdCounts, Vec<u64>) {
    assert!(!apoz.is_empty(), "layer_summary on empty array");
    let n = apoz.len() as f64;
    let mean = apoz.iter().sum::<f64>() / n;
    let var = apoz.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let stddev = var.sqrt();
    let mut counts = ThresholdCounts::default();
    for &v in apoz {
        if v > 0.6 {
            counts.gt_0_6 += 1;
        }
        if v > 0.7 {
            counts.gt_0_7 += 1;
        }
        if v > 0.8 {
            counts.gt_0_8 += 1;
        }
        if v > 0.9 {
            counts.gt_0_9 += 1;
        }
    }
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    for &v in apoz {
        let bin = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        histogram[bin] += 1;
    }
    (mean, stddev, counts, histogram)
}

/// One layer's entry in an [`ApozReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerApoz {
    pub layer: usize,
    pub name: String,
    pub relu_layer: usize,
    pub apoz: Vec<f64>,
    pub mean: f64,
    pub stddev: f64,
    pub threshold_counts: ThresholdCounts,
    pub histogram: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApozReport {
    pub layers: Vec<LayerApoz>,
}

impl ApozReport {
    pub fn from_accumulator(acc: &ApozAccumulator) -> Result<ApozReport> {
        let per_layer = acc.apoz()?;
        let layers = acc
            .targets()
            .iter()
            .zip(per_layer)
            .map(|(t, apoz)| {
                let (mean, stddev, threshold_counts, histogram) = layer_summary(&apoz);
                LayerApoz {
                    layer: t.owner,
                    name: t.owner_name.clone(),
                    relu_layer: t.relu,
                    apoz,
                    mean,
                    stddev,
                    threshold_counts,
                    histogram,
                }
            })
            .collect();
        Ok(ApozReport { layers })
    }

    pub fn layer(&self, name: &str) -> Option<&LayerApoz> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<ApozReport> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("report decode: {e}")))
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded. Trim plans
    /// record it so a plan can be traced back to the exact measurement.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("report serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// CSV rows: layer, neuron_index, apoz.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("layer,neuron_index,apoz\n");
        for l in &self.layers {
            for (i, v) in l.apoz.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", l.name, i, v));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// One histogram CSV per layer: bin_low, bin_high, count.
    pub fn write_histograms(&self, dir: &Path, prefix: &str) -> Result<Vec<std::path::PathBuf>> {
        let mut written = Vec::new();
        for l in &self.layers {
            let path = dir.join(format!("{prefix}{}.csv", l.name));
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "bin_low,bin_high,count").map_err(|e| Error::io(&path, e))?;
            for (b, count) in l.histogram.iter().enumerate() {
                let lo = b as f64 / HISTOGRAM_BINS as f64;
                let hi = (b + 1) as f64 / HISTOGRAM_BINS as f64;
                writeln!(f, "{lo:.2},{hi:.2},{count}").map_err(|e| Error::io(&path, e))?;
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Stream the dataset through the network and summarize APoZ for the
/// requested target layers. The result is independent of `batch_size`,
/// and of `threads`: shards accumulate independently and merge exactly.
pub fn measure_apoz(
    net: &Network,
    dataset: &Dataset,
    target_names: &[String],
    batch_size: usize,
    threads: usize,
) -> Result<ApozReport> {
    if dataset.is_empty() {
        return Err(Error::Input("statistics set is empty".into()));
    }
    let targets = resolve_targets(net, target_names)?;
    let acc = if threads <= 1 {
        accumulate_range(net, dataset, &targets, batch_size, 0, dataset.len())?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let n = dataset.len();
        let chunk = n.div_ceil(threads * 4).max(1);
        let ranges: Vec<(usize, usize)> = (0..n)
            .step_by(chunk)
            .map(|s| (s, (s + chunk).min(n)))
            .collect();
        use rayon::prelude::*;
        let shards: Vec<ApozAccumulator> = pool.install(|| {
            ranges
                .par_iter()
                .map(|&(s, e)| accumulate_range(net, dataset, &targets, batch_size, s, e))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut merged = ApozAccumulator::from_targets(targets);
        for shard in &shards {
            merged.merge(shard)?;
        }
        merged
    };
    ApozReport::from_accumulator(&acc)
}

fn accumulate_range(
    net: &Network,
    dataset: &Dataset,
    targets: &[ApozTarget],
    batch_size: usize,
    start: usize,
    end: usize,
) -> Result<ApozAccumulator> {
    let mut acc = ApozAccumulator::from_targets(targets.to_vec());
    let mut pos = start;
    while pos < end {
        let stop = (pos + batch_size).min(end);
        let idx: Vec<usize> = (pos..stop).collect();
        let sub = dataset.subset(&idx)?;
        let trace = net.forward(sub.images())?;
        acc.accumulate(&trace)?;
        pos = stop;
    }
    Ok(acc)
}
