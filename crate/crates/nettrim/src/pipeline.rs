//! The iterative trim loop: train a baseline, measure zero-activation
//! statistics on the stat set, select and prune, re-initialize, retrain,
//! report; repeat until the plan comes up empty, accuracy falls through
//! the floor, or the iteration budget runs out.
//!
//! Every iteration persists a checkpoint and appends its report line
//! before the next one starts, so a killed process loses at most the
//! in-flight iteration and a rerun resumes after the last complete one.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::apoz::{measure_apoz, ApozReport};
use crate::checkpoint::{load_checkpoint, save_checkpoint, TrainMeta};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layer::LayerSpec;
use crate::network::{init_network, Network};
use crate::report::{emit_reports, load_reports, IterationReport, LayerApozSummary};
use crate::train::{evaluate_threaded, train, TrainConfig};
use crate::trim::{prune, select_neurons, TrimPolicy};

/// How a trimmed network is initialized before retraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Transplant the surviving weights of the pre-trim network.
    AncestorWeights,
    /// Fresh seeded initialization of the trimmed shape.
    FromScratch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    pub input_shape: (usize, usize, usize),
    pub specs: Vec<LayerSpec>,
    /// Seed for the baseline weight initialization.
    pub init_seed: u64,
    pub baseline: TrainConfig,
    pub retrain: TrainConfig,
    pub policy: TrimPolicy,
    /// Total report rows including iteration 0 (the baseline).
    pub iterations: usize,
    pub init_mode: InitMode,
    /// Stop when final accuracy drops more than this many percentage
    /// points below the baseline's.
    pub accuracy_floor: f64,
    pub out_dir: PathBuf,
    pub stat_batch_size: usize,
    pub threads: usize,
}

impl LoopConfig {
    /// The shipped LeNet preset: 20-50-500-10, trim conv2 and fc1.
    pub fn lenet_preset(out_dir: PathBuf) -> Self {
        LoopConfig {
            input_shape: (1, 28, 28),
            specs: crate::network::lenet_specs(),
            init_seed: 1,
            baseline: TrainConfig::lenet_baseline(),
            retrain: TrainConfig::lenet_retrain(),
            policy: TrimPolicy::new(vec!["conv2".into(), "fc1".into()]),
            iterations: 5,
            init_mode: InitMode::AncestorWeights,
            accuracy_floor: 1.0,
            out_dir,
            stat_batch_size: 256,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.accuracy_floor >= 0.0 && self.accuracy_floor.is_finite()) {
            return Err(Error::Config("accuracy_floor must be >= 0".into()));
        }
        if self.stat_batch_size < 1 {
            return Err(Error::Config("stat_batch_size must be >= 1".into()));
        }
        self.baseline.validate()?;
        self.retrain.validate()?;
        self.policy.validate()?;
        Ok(())
    }
}

/// The datasets the loop runs on: training data, the held-out slice where
/// APoZ is measured, and the test set used only for accuracy.
pub struct LoopData<'a> {
    pub train: &'a Dataset,
    pub stat: &'a Dataset,
    pub test: &'a Dataset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// Ran the full iteration budget.
    Completed,
    /// The selection rule found nothing to prune.
    EmptyPlan { iteration: usize },
    /// Final accuracy fell more than `accuracy_floor` points below baseline.
    AccuracyFloor { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub reports: Vec<IterationReport>,
    pub stop: StopReason,
    pub checkpoints: Vec<PathBuf>,
}

fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("iter-{iteration:02}.ntrm"))
}

fn plan_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("plan-iter-{iteration:02}.json"))
}

/// Run (or resume) the trim loop. `progress` receives human-readable
/// status lines; all machine-readable output lands in `cfg.out_dir`.
pub fn run_loop(
    cfg: &LoopConfig,
    data: &LoopData<'_>,
    progress: &mut dyn FnMut(&str),
) -> Result<LoopOutcome> {
    cfg.validate()?;
    if data.train.is_empty() || data.stat.is_empty() || data.test.is_empty() {
        return Err(Error::Input("all three datasets must be nonempty".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;

    // Resume: an iteration is complete when both its report line and its
    // checkpoint exist and the checkpoint loads.
    let jsonl = cfg.out_dir.join("reports.jsonl");
    let mut reports: Vec<IterationReport> = if jsonl.exists() {
        load_reports(&jsonl).unwrap_or_default()
    } else {
        Vec::new()
    };
    while !reports.is_empty() {
        let k = reports.len() - 1;
        if reports[k].iteration == k && load_checkpoint(&checkpoint_path(&cfg.out_dir, k)).is_ok()
        {
            break;
        }
        reports.pop();
    }
    let resume_from = reports.len();
    if resume_from > 0 {
        progress(&format!(
            "resuming after {resume_from} completed iteration(s)"
        ));
    }

    let mut net: Option<Network> = None;
    let mut lineage: Vec<String> = Vec::new();
    let mut apoz_report: Option<ApozReport> = None;
    if resume_from > 0 {
        let ck = load_checkpoint(&checkpoint_path(&cfg.out_dir, resume_from - 1))?;
        lineage = ck.lineage.clone();
        lineage.push(ck.digest());
        apoz_report = Some(measure_apoz(
            &ck.network,
            data.stat,
            &cfg.policy.target_layers,
            cfg.stat_batch_size,
            cfg.threads,
        )?);
        net = Some(ck.network);
    }

    let mut checkpoints: Vec<PathBuf> = (0..resume_from)
        .map(|k| checkpoint_path(&cfg.out_dir, k))
        .collect();
    let mut stop = StopReason::Completed;

    for k in resume_from..cfg.iterations {
        let started = Instant::now();
        let (candidate, pre_accuracy) = if k == 0 {
            let fresh = init_network(&cfg.specs, cfg.input_shape, cfg.init_seed)?;
            let pre = evaluate_threaded(&fresh, data.test, cfg.threads)?;
            (fresh, pre)
        } else {
            let prev_net = net.as_ref().expect("iteration k-1 left a network");
            let plan = select_neurons(apoz_report.as_ref().expect("measured"), &cfg.policy)?;
            if plan.is_empty() {
                progress(&format!("iteration {k}: selection found nothing to prune, stopping"));
                stop = StopReason::EmptyPlan { iteration: k };
                break;
            }
            let pruned = prune(prev_net, &plan)?;
            std::fs::write(plan_path(&cfg.out_dir, k), plan.to_json())
                .map_err(|e| Error::io(plan_path(&cfg.out_dir, k), e))?;
            progress(&format!(
                "iteration {k}: pruned {} neurons -> {}",
                plan.total_pruned(),
                pruned.config_string()
            ));
            let start_net = match cfg.init_mode {
                InitMode::AncestorWeights => pruned,
                InitMode::FromScratch => {
                    // Same trimmed shape, fresh weights; per-iteration seed.
                    init_network(
                        &pruned.layers().to_vec(),
                        cfg.input_shape,
                        cfg.init_seed.wrapping_add(k as u64),
                    )?
                }
            };
            let pre = evaluate_threaded(&start_net, data.test, cfg.threads)?;
            (start_net, pre)
        };

        let train_cfg = if k == 0 {
            cfg.baseline.clone()
        } else {
            TrainConfig {
                seed: cfg.retrain.seed.wrapping_add(k as u64),
                ..cfg.retrain.clone()
            }
        };
        let trained = match train(candidate, data.train, None, &train_cfg, &mut |s| {
            progress(&format!(
                "iteration {k} epoch {}: loss {:.4} (lr {})",
                s.epoch, s.mean_loss, s.lr
            ))
        }) {
            Ok((trained, _)) => trained,
            Err(Error::Diverged { epoch, last_good }) => {
                let rescue = cfg.out_dir.join(format!("diverged-iter-{k:02}.ntrm"));
                save_checkpoint(
                    &last_good,
                    &TrainMeta {
                        epochs_completed: epoch,
                        final_accuracy: None,
                    },
                    &lineage,
                    &rescue,
                )?;
                progress(&format!(
                    "iteration {k}: training diverged in epoch {epoch}; last finite weights \
                     saved to {}",
                    rescue.display()
                ));
                return Err(Error::Diverged { epoch, last_good });
            }
            Err(e) => return Err(e),
        };

        let post_accuracy = evaluate_threaded(&trained, data.test, cfg.threads)?;
        let measured = measure_apoz(
            &trained,
            data.stat,
            &cfg.policy.target_layers,
            cfg.stat_batch_size,
            cfg.threads,
        )?;

        let meta = TrainMeta {
            epochs_completed: train_cfg.epochs,
            final_accuracy: Some(post_accuracy),
        };
        let ck_path = checkpoint_path(&cfg.out_dir, k);
        let digest = save_checkpoint(&trained, &meta, &lineage, &ck_path)?;

        let params = trained.param_count();
        let baseline_params = if k == 0 { params } else { reports[0].params };
        let report = IterationReport {
            iteration: k,
            config: trained.config_string(),
            params,
            compression: baseline_params as f64 / params as f64,
            pre_accuracy,
            post_accuracy,
            apoz: LayerApozSummary::from_report(&measured),
            checkpoint_digest: digest.clone(),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        append_report(&jsonl, &report)?;
        progress(&format!(
            "iteration {k}: config {} compression {:.2} pre {:.4} post {:.4}",
            report.config, report.compression, report.pre_accuracy, report.post_accuracy
        ));
        reports.push(report);
        checkpoints.push(ck_path);

        lineage.push(digest);
        net = Some(trained);
        apoz_report = Some(measured);

        let baseline_acc = reports[0].post_accuracy;
        if k > 0 && (baseline_acc - post_accuracy) * 100.0 > cfg.accuracy_floor {
            progress(&format!(
                "iteration {k}: accuracy {:.4} breached the floor ({} points below {:.4}), stopping",
                post_accuracy, cfg.accuracy_floor, baseline_acc
            ));
            stop = StopReason::AccuracyFloor { iteration: k };
            break;
        }
    }

    emit_reports(&reports, &cfg.out_dir)?;
    Ok(LoopOutcome {
        reports,
        stop,
        checkpoints,
    })
}

fn append_report(jsonl: &Path, report: &IterationReport) -> Result<()> {
    use std::io::Write;
    let line =
        serde_json::to_string(report).map_err(|e| Error::Config(format!("encode: {e}")))?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(jsonl)
        .map_err(|e| Error::io(jsonl, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(jsonl, e))?;
    f.sync_all().map_err(|e| Error::io(jsonl, e))?;
    Ok(())
}
