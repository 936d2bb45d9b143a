//! Neuron selection and structural surgery.
//!
//! Selection prunes neurons whose APoZ sits strictly above the layer mean
//! plus a sigma multiple of the population standard deviation. Surgery
//! removes each selected neuron's outgoing filter/row and bias entry, and
//! the matching input weights of the next parameterized layer — including
//! the conv-to-dense boundary, where one channel owns a contiguous block
//! of flattened columns. Surviving weights are copied bit-exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::apoz::ApozReport;
use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::network::{LayerParams, Network, NetworkT};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrimPolicy {
    /// Names of the conv/dense layers to trim, in network order.
    pub target_layers: Vec<String>,
    #[serde(default = "default_sigma")]
    pub sigma_multiplier: f64,
    #[serde(default = "default_min_remaining")]
    pub min_remaining: usize,
    #[serde(default = "default_max_prune_fraction")]
    pub max_prune_fraction: f64,
}

fn default_sigma() -> f64 {
    1.0
}
fn default_min_remaining() -> usize {
    1
}
fn default_max_prune_fraction() -> f64 {
    1.0
}

impl TrimPolicy {
    pub fn new(target_layers: Vec<String>) -> Self {
        TrimPolicy {
            target_layers,
            sigma_multiplier: default_sigma(),
            min_remaining: default_min_remaining(),
            max_prune_fraction: default_max_prune_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_layers.is_empty() {
            return Err(Error::Config("policy has no target layers".into()));
        }
        if self.min_remaining < 1 {
            return Err(Error::Config("min_remaining must be >= 1".into()));
        }
        if !(self.sigma_multiplier >= 0.0 && self.sigma_multiplier.is_finite()) {
            return Err(Error::Config("sigma_multiplier must be >= 0".into()));
        }
        if !(self.max_prune_fraction > 0.0 && self.max_prune_fraction <= 1.0) {
            return Err(Error::Config(
                "max_prune_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Sorted unique neuron indices to remove from one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRemoval {
    pub name: String,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimPlan {
    pub removals: Vec<LayerRemoval>,
    pub policy: TrimPolicy,
    pub report_digest: String,
}

impl TrimPlan {
    pub fn is_empty(&self) -> bool {
        self.removals.iter().all(|r| r.indices.is_empty())
    }

    pub fn total_pruned(&self) -> usize {
        self.removals.iter().map(|r| r.indices.len()).sum()
    }

    pub fn removal(&self, name: &str) -> Option<&LayerRemoval> {
        self.removals.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<TrimPlan> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("plan decode: {e}")))
    }

    /// Layer-index keyed removal map for a given network.
    fn as_index_map(&self, net: &Network) -> Result<BTreeMap<usize, Vec<usize>>> {
        let mut map = BTreeMap::new();
        for r in &self.removals {
            let idx = net
                .layer_by_name(&r.name)
                .ok_or_else(|| Error::Input(format!("plan names unknown layer '{}'", r.name)))?;
            let spec = &net.layers()[idx];
            if !spec.is_parameterized() {
                return Err(Error::Input(format!(
                    "plan targets '{}' which is not a conv/dense layer",
                    r.name
                )));
            }
            let width = spec.out_units().unwrap();
            if r.indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Input(format!(
                    "plan indices for '{}' are not sorted unique",
                    r.name
                )));
            }
            if let Some(&bad) = r.indices.iter().find(|&&i| i >= width) {
                return Err(Error::Input(format!(
                    "plan index {bad} out of range for '{}' (width {width})",
                    r.name
                )));
            }
            map.insert(idx, r.indices.clone());
        }
        Ok(map)
    }
}

/// Apply the mean + sigma rule to an APoZ report.
///
/// Per target layer the prune set is `{c : apoz[c] > mean + k * stddev}`,
/// capped by `max_prune_fraction` and `min_remaining` keeping the
/// highest-APoZ offenders; on equal APoZ the lower index is kept.
pub fn select_neurons(report: &ApozReport, policy: &TrimPolicy) -> Result<TrimPlan> {
    policy.validate()?;
    let mut removals = Vec::with_capacity(policy.target_layers.len());
    for name in &policy.target_layers {
        let layer = report.layer(name).ok_or_else(|| {
            Error::Input(format!("target layer '{name}' missing from APoZ report"))
        })?;
        let width = layer.apoz.len();
        let threshold = layer.mean + policy.sigma_multiplier * layer.stddev;
        let mut offenders: Vec<usize> = (0..width)
            .filter(|&c| layer.apoz[c] > threshold)
            .collect();
        let cap = ((policy.max_prune_fraction * width as f64).floor() as usize)
            .min(width.saturating_sub(policy.min_remaining));
        if offenders.len() > cap {
            // Highest APoZ first; ties prune the higher index so the lower
            // index is the one kept.
            offenders.sort_by(|&a, &b| {
                layer.apoz[b]
                    .partial_cmp(&layer.apoz[a])
                    .unwrap()
                    .then(b.cmp(&a))
            });
            offenders.truncate(cap);
        }
        offenders.sort_unstable();
        removals.push(LayerRemoval {
            name: name.clone(),
            indices: offenders,
        });
    }
    Ok(TrimPlan {
        removals,
        policy: policy.clone(),
        report_digest: report.digest(),
    })
}

/// Structurally remove the planned neurons, transplanting every surviving
/// weight bit-exactly. Refuses to touch the final classifier layer.
pub fn prune(net: &Network, plan: &TrimPlan) -> Result<Network> {
    let removals = plan.as_index_map(net)?;
    for (&idx, indices) in &removals {
        if net.parameterized_successor(idx).is_none() {
            return Err(Error::Input(format!(
                "refusing to prune the output layer '{}'",
                net.name_of(idx)
            )));
        }
        let width = net.layers()[idx].out_units().unwrap();
        if indices.len() >= width {
            return Err(Error::Input(format!(
                "plan would empty layer '{}'",
                net.name_of(idx)
            )));
        }
    }

    // New specs with reduced widths.
    let mut specs = net.layers().to_vec();
    for (&idx, indices) in &removals {
        let removed = indices.len();
        match &mut specs[idx] {
            LayerSpec::Conv2d { out_channels, .. } => *out_channels -= removed,
            LayerSpec::Dense { out_features, .. } => *out_features -= removed,
            _ => unreachable!("validated parameterized"),
        }
    }

    // For every parameterized layer, removing rows for its own plan entry
    // and input columns for its parameterized predecessor's entry.
    let mut params: Vec<Option<LayerParams<f32>>> = Vec::with_capacity(net.layer_count());
    for i in 0..net.layer_count() {
        let Some(p) = net.params(i) else {
            params.push(None);
            continue;
        };
        let rows_removed: &[usize] = removals.get(&i).map(Vec::as_slice).unwrap_or(&[]);
        let pred = net
            .parameterized_layers()
            .into_iter()
            .filter(|&j| j < i)
            .next_back();
        let cols_removed: &[usize] = pred
            .and_then(|j| removals.get(&j))
            .map(Vec::as_slice)
            .unwrap_or(&[]);

        let weight = match &net.layers()[i] {
            LayerSpec::Conv2d { .. } => {
                prune_conv_weight(&p.weight, rows_removed, cols_removed)?
            }
            LayerSpec::Dense { .. } => {
                // Column granularity: one column per upstream feature. A
                // removed upstream channel owns a contiguous block of
                // spatial positions under (channel, row, col) flattening.
                let input_shape = net.input_shape_of(i);
                let block: usize = input_shape[1..].iter().product::<usize>().max(1);
                prune_dense_weight(&p.weight, rows_removed, cols_removed, block)?
            }
            _ => unreachable!("parameterized layer"),
        };
        let bias = remove_entries(&p.bias, rows_removed)?;
        params.push(Some(LayerParams { weight, bias }));
    }

    NetworkT::assemble(net.input_shape(), specs, params)
}

fn keep_mask(len: usize, removed: &[usize]) -> Vec<bool> {
    let mut mask = vec![true; len];
    for &r in removed {
        mask[r] = false;
    }
    mask
}

fn remove_entries(t: &Tensor, removed: &[usize]) -> Result<Tensor> {
    let len = t.shape()[0];
    let mask = keep_mask(len, removed);
    let data: Vec<f32> = t
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask[*i])
        .map(|(_, &v)| v)
        .collect();
    Tensor::new(vec![len - removed.len()], data)
}

/// Conv weight (O, I, kh, kw): drop output filters and input channels.
fn prune_conv_weight(w: &Tensor, rows: &[usize], cols: &[usize]) -> Result<Tensor> {
    let s = w.shape().to_vec();
    let (o, i, kh, kw) = (s[0], s[1], s[2], s[3]);
    let row_mask = keep_mask(o, rows);
    let col_mask = keep_mask(i, cols);
    let ksz = kh * kw;
    let mut data = Vec::with_capacity((o - rows.len()) * (i - cols.len()) * ksz);
    let src = w.as_slice();
    for oc in 0..o {
        if !row_mask[oc] {
            continue;
        }
        for ic in 0..i {
            if !col_mask[ic] {
                continue;
            }
            let base = (oc * i + ic) * ksz;
            data.extend_from_slice(&src[base..base + ksz]);
        }
    }
    Tensor::new(vec![o - rows.len(), i - cols.len(), kh, kw], data)
}

/// Dense weight (O, F): drop output rows and per-upstream-unit column
/// blocks of `block` contiguous columns each.
fn prune_dense_weight(w: &Tensor, rows: &[usize], cols: &[usize], block: usize) -> Result<Tensor> {
    let s = w.shape().to_vec();
    let (o, f) = (s[0], s[1]);
    let row_mask = keep_mask(o, rows);
    let units = f / block;
    debug_assert_eq!(units * block, f, "flatten block must divide the width");
    let unit_mask = keep_mask(units, cols);
    let new_f = (units - cols.len()) * block;
    let mut data = Vec::with_capacity((o - rows.len()) * new_f);
    let src = w.as_slice();
    for r in 0..o {
        if !row_mask[r] {
            continue;
        }
        let row = &src[r * f..(r + 1) * f];
        for u in 0..units {
            if unit_mask[u] {
                data.extend_from_slice(&row[u * block..(u + 1) * block]);
            }
        }
    }
    Tensor::new(vec![o - rows.len(), new_f], data)
}

/// Forward pass with the planned neurons' outputs forced to zero.
/// The behavioral oracle for [`prune`]: for any network, plan and batch,
/// its probabilities match `prune(net, plan)`'s forward within 1e-5.
pub fn masked_forward(net: &Network, plan: &TrimPlan, batch: &Tensor) -> Result<Tensor> {
    let masks = plan.as_index_map(net)?;
    let mut trace = net.forward_masked(batch, &masks)?;
    Ok(trace.outputs.pop().expect("network has layers"))
}

/// Ratio of total parameter counts, original over trimmed.
pub fn compression_rate(original: &Network, trimmed: &Network) -> Result<f64> {
    let t = trimmed.param_count();
    if t == 0 {
        return Err(Error::Input("trimmed network has no parameters".into()));
    }
    Ok(original.param_count() as f64 / t as f64)
}
