//! Minibatch SGD training and top-1 evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::optim::{sgd_step, SgdState};

/// Step learning-rate decay: multiply by `gamma` every `step_epochs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub gamma: f32,
    pub step_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub lr_decay: Option<LrDecay>,
    #[serde(default)]
    pub weight_decay: f32,
}

impl TrainConfig {
    /// Defaults that train the 20-50-500-10 stack to >= 99% on MNIST.
    pub fn lenet_baseline() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 20,
            seed: 1,
            lr_decay: Some(LrDecay {
                gamma: 0.1,
                step_epochs: 15,
            }),
            weight_decay: 5e-4,
        }
    }

    /// Defaults for the retraining step after a trim.
    pub fn lenet_retrain() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            seed: 1,
            lr_decay: Some(LrDecay {
                gamma: 0.1,
                step_epochs: 8,
            }),
            weight_decay: 5e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0, 1)".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if let Some(d) = &self.lr_decay {
            if !(d.gamma > 0.0 && d.gamma.is_finite()) || d.step_epochs < 1 {
                return Err(Error::Config(
                    "lr_decay requires gamma > 0 and step_epochs >= 1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f32 {
        match &self.lr_decay {
            Some(d) => self.learning_rate * d.gamma.powi((epoch / d.step_epochs) as i32),
            None => self.learning_rate,
        }
    }
}

/// Per-epoch training record handed to the progress sink.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f32,
    pub mean_loss: f64,
    /// Top-1 accuracy on the eval set, when one was supplied.
    pub eval_accuracy: Option<f64>,
}

/// Run seeded shuffled minibatch SGD for `cfg.epochs` epochs.
///
/// On divergence (non-finite loss or layer output) the error carries the
/// weights from the last completed epoch so callers can checkpoint them.
/// With `epochs` 0 the input network is returned bit-identical.
pub fn train(
    net: Network,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<(Network, Vec<EpochStats>)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut net = net;
    let mut stats = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok((net, stats));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SgdState::new(&net);
    let mut last_good = net.clone();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let shuffle_seed: u64 = shuffle_rng.random();
        let mut loss_sum = 0.0f64;
        let mut batch_count = 0usize;
        for batch in batches(train_set, cfg.batch_size, Some(shuffle_seed))? {
            let step = (|| -> Result<f32> {
                let trace = net.forward(&batch.images)?;
                let (grads, loss) = net.backward(&trace, &batch.labels)?;
                sgd_step(&mut net, &grads, lr, cfg.momentum, cfg.weight_decay, &mut state)?;
                Ok(loss)
            })();
            let loss = match step {
                Ok(loss) if loss.is_finite() => loss,
                Ok(_) | Err(Error::Numeric { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        last_good: Box::new(last_good),
                    })
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss as f64;
            batch_count += 1;
        }
        let eval_accuracy = match eval_set {
            Some(ds) => Some(evaluate(&net, ds)?),
            None => None,
        };
        let s = EpochStats {
            epoch,
            lr,
            mean_loss: loss_sum / batch_count as f64,
            eval_accuracy,
        };
        progress(&s);
        stats.push(s);
        last_good = net.clone();
    }
    Ok((net, stats))
}

/// Top-1 accuracy as a fraction in [0, 1]; deterministic.
pub fn evaluate(net: &Network, dataset: &Dataset) -> Result<f64> {
    evaluate_threaded(net, dataset, 1)
}

/// Top-1 accuracy, optionally sharding examples across threads. Each
/// example's prediction is independent, so the result is identical to the
/// single-threaded path for any thread count.
pub fn evaluate_threaded(net: &Network, dataset: &Dataset, threads: usize) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let n = dataset.len();
    let correct = if threads <= 1 {
        correct_in_range(net, dataset, 0, n)?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let chunk = n.div_ceil(threads * 4).max(1);
        let ranges: Vec<(usize, usize)> = (0..n)
            .step_by(chunk)
            .map(|s| (s, (s + chunk).min(n)))
            .collect();
        use rayon::prelude::*;
        pool.install(|| {
            ranges
                .par_iter()
                .map(|&(s, e)| correct_in_range(net, dataset, s, e))
                .try_fold(|| 0usize, |acc, r| r.map(|c| acc + c))
                .try_reduce(|| 0usize, |a, b| Ok(a + b))
        })?
    };
    Ok(correct as f64 / n as f64)
}

fn correct_in_range(net: &Network, dataset: &Dataset, start: usize, end: usize) -> Result<usize> {
    const EVAL_BATCH: usize = 256;
    let mut correct = 0usize;
    let mut pos = start;
    while pos < end {
        let stop = (pos + EVAL_BATCH).min(end);
        let idx: Vec<usize> = (pos..stop).collect();
        let sub = dataset.subset(&idx)?;
        let probs = net.predict(sub.images())?;
        let classes = probs.shape()[1];
        for (row, &label) in probs
            .as_slice()
            .chunks_exact(classes)
            .zip(sub.labels().iter())
        {
            if argmax(row) == label as usize {
                correct += 1;
            }
        }
        pos = stop;
    }
    Ok(correct)
}

/// Index of the first maximal element.
pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerSpec;
    use crate::network::{init_network, lenet_sized};
    use crate::synth::synthetic_digits;

    fn small_specs() -> Vec<LayerSpec> {
        lenet_sized(6, 8, 32, 10)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let net = init_network(&small_specs(), (1, 28, 28), 5).unwrap();
        let ds = synthetic_digits(16, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::lenet_baseline()
        };
        let (out, stats) = train(net.clone(), &ds, None, &cfg, &mut |_| {}).unwrap();
        assert!(stats.is_empty());
        assert!(out.params_bit_eq(&net));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = synthetic_digits(64, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            lr_decay: None,
            ..TrainConfig::lenet_baseline()
        };
        let run = || {
            let net = init_network(&small_specs(), (1, 28, 28), 5).unwrap();
            train(net, &ds, None, &cfg, &mut |_| {}).unwrap().0
        };
        assert!(run().params_bit_eq(&run()));
    }

    #[test]
    fn overfits_a_small_subset() {
        let ds = synthetic_digits(200, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 25,
            batch_size: 32,
            lr_decay: None,
            ..TrainConfig::lenet_baseline()
        };
        let net = init_network(&small_specs(), (1, 28, 28), 5).unwrap();
        let (trained, _) = train(net, &ds, None, &cfg, &mut |_| {}).unwrap();
        let acc = evaluate(&trained, &ds).unwrap();
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn final_reported_accuracy_matches_evaluate() {
        let train_ds = synthetic_digits(128, 4).unwrap();
        let eval_ds = synthetic_digits(64, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::lenet_baseline()
        };
        let net = init_network(&small_specs(), (1, 28, 28), 6).unwrap();
        let (trained, stats) = train(net, &train_ds, Some(&eval_ds), &cfg, &mut |_| {}).unwrap();
        let reported = stats.last().unwrap().eval_accuracy.unwrap();
        assert_eq!(reported, evaluate(&trained, &eval_ds).unwrap());
    }

    #[test]
    fn constant_predictor_scores_chance_on_balanced_set() {
        // Zero weights everywhere: logits all equal, argmax ties to class 0.
        let mut net = init_network(&small_specs(), (1, 28, 28), 7).unwrap();
        for i in net.parameterized_layers() {
            let p = net.params_mut(i).unwrap();
            p.weight.as_mut_slice().fill(0.0);
            p.bias.as_mut_slice().fill(0.0);
        }
        let ds = synthetic_digits(100, 8).unwrap(); // balanced: classes cycle
        let acc = evaluate(&net, &ds).unwrap();
        assert!((acc - 0.10).abs() < 1e-12);
    }

    #[test]
    fn threaded_evaluation_matches_reference() {
        let ds = synthetic_digits(150, 9).unwrap();
        let net = init_network(&small_specs(), (1, 28, 28), 10).unwrap();
        let a = evaluate(&net, &ds).unwrap();
        let b = evaluate_threaded(&net, &ds, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_reports_last_good_weights() {
        let ds = synthetic_digits(64, 11).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e12,
            momentum: 0.0,
            batch_size: 16,
            epochs: 3,
            seed: 1,
            lr_decay: None,
            weight_decay: 0.0,
        };
        let net = init_network(&small_specs(), (1, 28, 28), 12).unwrap();
        match train(net.clone(), &ds, None, &cfg, &mut |_| {}) {
            Err(Error::Diverged { last_good, .. }) => {
                for p in last_good.all_params().iter().flatten() {
                    assert!(p.weight.all_finite());
                    assert!(p.bias.all_finite());
                }
            }
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn lr_schedule_steps_down() {
        let cfg = TrainConfig::lenet_baseline();
        assert_eq!(cfg.lr_at_epoch(0), 0.01);
        assert_eq!(cfg.lr_at_epoch(14), 0.01);
        assert!((cfg.lr_at_epoch(15) - 0.001).abs() < 1e-9);
        assert!((cfg.lr_at_epoch(19) - 0.001).abs() < 1e-9);
    }
}
