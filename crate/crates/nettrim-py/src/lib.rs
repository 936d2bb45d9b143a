//! Python bindings: networks, datasets, zero-activation reports, trim
//! plans and the surgery operations, with list-based tensor exchange.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use nettrim::apoz::ApozReport;
use nettrim::checkpoint::{load_checkpoint, save_checkpoint, TrainMeta};
use nettrim::data::{split_stat_set, Dataset, SplitSpec};
use nettrim::error::Error;
use nettrim::network::{init_network, lenet_sized, Network};
use nettrim::synth::synthetic_digits;
use nettrim::tensor::Tensor;
use nettrim::train::{evaluate_threaded, train, TrainConfig};
use nettrim::trim::{self, select_neurons, TrimPlan, TrimPolicy};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::ShapeChain { .. } | Error::Input(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Data(_)
        | Error::Io { .. }
        | Error::BadMagic
        | Error::VersionMismatch { .. }
        | Error::TruncatedPayload { .. }
        | Error::PayloadMismatch(_) => PyIOError::new_err(e.to_string()),
        Error::Numeric { .. } | Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Dataset", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Deterministic synthetic digit dataset (28x28, 10 classes).
    #[staticmethod]
    fn synthetic(n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: synthetic_digits(n, seed).map_err(err)?,
        })
    }

    /// Load an IDX image/label file pair (raw or gzipped).
    #[staticmethod]
    fn from_idx(images_path: PathBuf, labels_path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: nettrim::idx::load_idx(&images_path, &labels_path).map_err(err)?,
        })
    }

    /// Build from a flat pixel list in (N, C, H, W) row-major order.
    #[staticmethod]
    fn from_arrays(
        images: Vec<f32>,
        shape: (usize, usize, usize, usize),
        labels: Vec<u8>,
    ) -> PyResult<Self> {
        let (n, c, h, w) = shape;
        let t = Tensor::new(vec![n, c, h, w], images).map_err(err)?;
        Ok(PyDataset {
            inner: Dataset::new(t, labels).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.labels().to_vec()
    }

    fn example_shape(&self) -> (usize, usize, usize) {
        self.inner.example_shape()
    }

    /// Seeded disjoint split: (remainder, stat_set).
    fn split_stat(&self, stat_set_size: usize, seed: u64) -> PyResult<(PyDataset, PyDataset)> {
        let (rest, stat) = split_stat_set(
            &self.inner,
            &SplitSpec {
                stat_set_size,
                seed,
            },
        )
        .map_err(err)?;
        Ok((PyDataset { inner: rest }, PyDataset { inner: stat }))
    }
}

#[pyclass(name = "Network", skip_from_py_object)]
#[derive(Clone)]
struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    /// The 20-50-500-10 stack with ReLU-activated conv and fc1 layers.
    #[staticmethod]
    fn lenet(seed: u64) -> PyResult<Self> {
        Self::lenet_sized(20, 50, 500, 10, seed)
    }

    /// LeNet-shaped stack with explicit widths.
    #[staticmethod]
    fn lenet_sized(
        conv1: usize,
        conv2: usize,
        fc1: usize,
        classes: usize,
        seed: u64,
    ) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: init_network(&lenet_sized(conv1, conv2, fc1, classes), (1, 28, 28), seed)
                .map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: load_checkpoint(&path).map_err(err)?.network,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<String> {
        save_checkpoint(&self.inner, &TrainMeta::default(), &[], &path).map_err(err)
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn config_string(&self) -> String {
        self.inner.config_string()
    }

    fn layer_names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    /// Class probabilities for every example, flattened (N * classes).
    fn predict(&self, dataset: &PyDataset) -> PyResult<Vec<f32>> {
        let probs = self.inner.predict(dataset.inner.images()).map_err(err)?;
        Ok(probs.into_data())
    }

    #[pyo3(signature = (dataset, threads = 1))]
    fn evaluate(&self, dataset: &PyDataset, threads: usize) -> PyResult<f64> {
        evaluate_threaded(&self.inner, &dataset.inner, threads).map_err(err)
    }

    /// Minibatch SGD; returns (trained_network, mean_loss_per_epoch).
    #[pyo3(signature = (
        dataset,
        epochs = 4,
        learning_rate = 0.01,
        batch_size = 32,
        seed = 1,
        momentum = 0.9,
        weight_decay = 0.0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &self,
        dataset: &PyDataset,
        epochs: usize,
        learning_rate: f32,
        batch_size: usize,
        seed: u64,
        momentum: f32,
        weight_decay: f32,
    ) -> PyResult<(PyNetwork, Vec<f64>)> {
        let cfg = TrainConfig {
            learning_rate,
            momentum,
            batch_size,
            epochs,
            seed,
            lr_decay: None,
            weight_decay,
        };
        let (trained, stats) =
            train(self.inner.clone(), &dataset.inner, None, &cfg, &mut |_| {}).map_err(err)?;
        Ok((
            PyNetwork { inner: trained },
            stats.iter().map(|s| s.mean_loss).collect(),
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(config='{}', params={})",
            self.inner.config_string(),
            self.inner.param_count()
        )
    }
}

#[pyclass(name = "ApozReport", skip_from_py_object)]
#[derive(Clone)]
struct PyApozReport {
    inner: ApozReport,
}

#[pymethods]
impl PyApozReport {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyApozReport {
            inner: ApozReport::from_json(s).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn layers(&self) -> Vec<String> {
        self.inner.layers.iter().map(|l| l.name.clone()).collect()
    }

    fn apoz(&self, layer: &str) -> PyResult<Vec<f64>> {
        Ok(self.layer(layer)?.apoz.clone())
    }

    fn mean(&self, layer: &str) -> PyResult<f64> {
        Ok(self.layer(layer)?.mean)
    }

    fn stddev(&self, layer: &str) -> PyResult<f64> {
        Ok(self.layer(layer)?.stddev)
    }

    /// Count of neurons with APoZ strictly above a standard threshold
    /// (0.6, 0.7, 0.8 or 0.9).
    fn count_above(&self, layer: &str, threshold: f64) -> PyResult<usize> {
        let l = self.layer(layer)?;
        for (t, c) in l.threshold_counts.as_array() {
            if (t - threshold).abs() < 1e-9 {
                return Ok(c);
            }
        }
        Err(PyValueError::new_err(format!(
            "threshold {threshold} is not one of 0.6/0.7/0.8/0.9"
        )))
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }
}

impl PyApozReport {
    fn layer(&self, name: &str) -> PyResult<&nettrim::apoz::LayerApoz> {
        self.inner
            .layer(name)
            .ok_or_else(|| PyValueError::new_err(format!("no layer '{name}' in report")))
    }
}

#[pyclass(name = "TrimPlan", skip_from_py_object)]
#[derive(Clone)]
struct PyTrimPlan {
    inner: TrimPlan,
}

#[pymethods]
impl PyTrimPlan {
    fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    fn total_pruned(&self) -> usize {
        self.inner.total_pruned()
    }

    fn indices(&self, layer: &str) -> PyResult<Vec<usize>> {
        self.inner
            .removal(layer)
            .map(|r| r.indices.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no layer '{layer}' in plan")))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyTrimPlan {
            inner: TrimPlan::from_json(s).map_err(err)?,
        })
    }
}

/// Stream the dataset through the network and report per-neuron APoZ for
/// the named ReLU-activated layers.
#[pyfunction]
#[pyo3(signature = (net, dataset, layers, batch_size = 256, threads = 1))]
fn measure_apoz(
    net: &PyNetwork,
    dataset: &PyDataset,
    layers: Vec<String>,
    batch_size: usize,
    threads: usize,
) -> PyResult<PyApozReport> {
    Ok(PyApozReport {
        inner: nettrim::apoz::measure_apoz(&net.inner, &dataset.inner, &layers, batch_size, threads)
            .map_err(err)?,
    })
}

/// Mean + sigma selection rule over a measured report.
#[pyfunction]
#[pyo3(signature = (
    report,
    target_layers,
    sigma_multiplier = 1.0,
    min_remaining = 1,
    max_prune_fraction = 1.0
))]
fn select(
    report: &PyApozReport,
    target_layers: Vec<String>,
    sigma_multiplier: f64,
    min_remaining: usize,
    max_prune_fraction: f64,
) -> PyResult<PyTrimPlan> {
    let policy = TrimPolicy {
        target_layers,
        sigma_multiplier,
        min_remaining,
        max_prune_fraction,
    };
    Ok(PyTrimPlan {
        inner: select_neurons(&report.inner, &policy).map_err(err)?,
    })
}

/// Structurally remove the planned neurons, transplanting survivors.
#[pyfunction]
fn prune(net: &PyNetwork, plan: &PyTrimPlan) -> PyResult<PyNetwork> {
    Ok(PyNetwork {
        inner: trim::prune(&net.inner, &plan.inner).map_err(err)?,
    })
}

/// Forward pass with planned neurons' outputs forced to zero; the
/// behavioral oracle for `prune`.
#[pyfunction]
fn masked_forward(net: &PyNetwork, plan: &PyTrimPlan, dataset: &PyDataset) -> PyResult<Vec<f32>> {
    Ok(
        trim::masked_forward(&net.inner, &plan.inner, dataset.inner.images())
            .map_err(err)?
            .into_data(),
    )
}

/// Parameter ratio, original over trimmed.
#[pyfunction]
fn compression_rate(original: &PyNetwork, trimmed: &PyNetwork) -> PyResult<f64> {
    trim::compression_rate(&original.inner, &trimmed.inner).map_err(err)
}

#[pymodule]
fn nettrim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyApozReport>()?;
    m.add_class::<PyTrimPlan>()?;
    m.add_function(wrap_pyfunction!(measure_apoz, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(prune, m)?)?;
    m.add_function(wrap_pyfunction!(masked_forward, m)?)?;
    m.add_function(wrap_pyfunction!(compression_rate, m)?)?;
    Ok(())
}
