//! Command-line front end: train / stats / trim / loop / eval / report.
//!
//! Progress goes to stderr; machine-readable output goes to files in the
//! output directory (or stdout for `eval`). Exit codes: 1 configuration
//! error, 2 data error, 3 numeric fault.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nettrim::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainMeta};
use nettrim::config::CliConfig;
use nettrim::data::{split_stat_set, Dataset, SplitSpec};
use nettrim::error::{Error, Result};
use nettrim::idx::load_mnist_dir;
use nettrim::network::init_network;
use nettrim::pipeline::{run_loop, InitMode, LoopData};
use nettrim::report::{ablation_table, emit_reports, load_reports};
use nettrim::train::{evaluate_threaded, train, TrainConfig};
use nettrim::trim::{compression_rate, prune, select_neurons};
use nettrim::apoz::{measure_apoz, ApozReport};

#[derive(Parser)]
#[command(
    name = "nettrim",
    version,
    about = "Train small CNNs, measure per-neuron zero-activation rates, trim and retrain"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML or JSON config file; flags override its scalars.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the four standard MNIST IDX files (raw or .gz).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "nettrim-out")]
    out: PathBuf,
    /// Master seed override (initialization and shuffling).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation and statistics (1 = reference mode).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network from scratch and write a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f32>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Measure per-neuron zero-activation statistics from a checkpoint.
    Stats {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated target layers (e.g. conv2,fc1).
        #[arg(long, value_delimiter = ',')]
        layers: Vec<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        stat_size: Option<usize>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Select and structurally remove high-APoZ neurons.
    Trim {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// APoZ report JSON produced by `stats`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_delimiter = ',')]
        layers: Vec<String>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        min_remaining: Option<usize>,
        #[arg(long)]
        max_prune_fraction: Option<f64>,
    },
    /// Run the full iterative trim/retrain loop.
    Loop {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_parser = parse_init_mode)]
        init_mode: Option<InitMode>,
        #[arg(long)]
        accuracy_floor: Option<f64>,
        #[arg(long)]
        stat_size: Option<usize>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Print a checkpoint's top-1 accuracy.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to score: test or train.
        #[arg(long, default_value = "test")]
        on: String,
    },
    /// Regenerate summaries for a finished run; compare two runs.
    Report {
        /// Run directory containing reports.jsonl.
        #[arg(long)]
        run: PathBuf,
        /// Second run directory for a side-by-side comparison.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Layer for the comparison table.
        #[arg(long, default_value = "fc1")]
        layer: String,
    },
}

fn parse_init_mode(s: &str) -> std::result::Result<InitMode, String> {
    match s {
        "ancestor_weights" => Ok(InitMode::AncestorWeights),
        "from_scratch" => Ok(InitMode::FromScratch),
        other => Err(format!(
            "unknown init mode '{other}' (expected ancestor_weights or from_scratch)"
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<CliConfig> {
    match path {
        Some(p) => CliConfig::load(p),
        None => Ok(CliConfig::default()),
    }
}

fn mnist(common: &CommonArgs, cfg: &CliConfig) -> Result<(Dataset, Dataset)> {
    let dir = common
        .mnist_dir
        .clone()
        .or_else(|| cfg.data.mnist_dir.clone())
        .ok_or_else(|| {
            Error::Config("no dataset: pass --mnist-dir or set [data] mnist_dir".into())
        })?;
    load_mnist_dir(&dir)
}

fn stat_split(
    train_full: &Dataset,
    cfg: &CliConfig,
    stat_size: Option<usize>,
    split_seed: Option<u64>,
) -> Result<(Dataset, Dataset)> {
    // Explicit sizes are validated as-is; only the default adapts to
    // small datasets (10k on MNIST-sized sets).
    let stat_set_size = stat_size
        .or(cfg.data.stat_set_size)
        .unwrap_or_else(|| 10_000.min(train_full.len() / 6).max(1));
    let spec = SplitSpec {
        stat_set_size,
        seed: split_seed.or(cfg.data.split_seed).unwrap_or(1),
    };
    split_stat_set(train_full, &spec)
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    eprintln!(
        "loaded checkpoint {} (config {}, {} params)",
        path.display(),
        ck.network.config_string(),
        ck.network.param_count()
    );
    Ok(ck)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train {
            common,
            epochs,
            learning_rate,
            batch_size,
        } => {
            let cfg = load_config(&common.config)?;
            let (input_shape, specs) = cfg.network()?;
            let mut tc: TrainConfig = cfg.baseline.merged_over(TrainConfig::lenet_baseline());
            if let Some(e) = epochs {
                tc.epochs = e;
            }
            if let Some(lr) = learning_rate {
                tc.learning_rate = lr;
            }
            if let Some(b) = batch_size {
                tc.batch_size = b;
            }
            if let Some(s) = common.seed {
                tc.seed = s;
            }
            let init_seed = common
                .seed
                .or(cfg.loop_section.init_seed)
                .unwrap_or(1);
            let (train_set, test_set) = mnist(&common, &cfg)?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;

            let net = init_network(&specs, input_shape, init_seed)?;
            eprintln!(
                "training {} ({} params) for {} epochs",
                net.config_string(),
                net.param_count(),
                tc.epochs
            );
            let mut lines = Vec::new();
            let (trained, stats) = train(net, &train_set, Some(&test_set), &tc, &mut |s| {
                eprintln!(
                    "epoch {:>3}: loss {:.4} test_acc {:.4} (lr {})",
                    s.epoch,
                    s.mean_loss,
                    s.eval_accuracy.unwrap_or(f64::NAN),
                    s.lr
                );
                lines.push(serde_json::to_string(s).expect("stats serialize"));
            })?;
            let final_acc = stats.last().and_then(|s| s.eval_accuracy);
            let ck_path = common.out.join("checkpoint.ntrm");
            let digest = save_checkpoint(
                &trained,
                &TrainMeta {
                    epochs_completed: tc.epochs,
                    final_accuracy: final_acc,
                },
                &[],
                &ck_path,
            )?;
            let metrics_path = common.out.join("train-metrics.jsonl");
            std::fs::write(&metrics_path, lines.join("\n") + "\n")
                .map_err(|e| Error::io(&metrics_path, e))?;
            eprintln!(
                "wrote {} (digest {}) and {}",
                ck_path.display(),
                &digest[..12],
                metrics_path.display()
            );
            Ok(())
        }

        Cmd::Stats {
            common,
            checkpoint,
            layers,
            batch_size,
            stat_size,
            split_seed,
        } => {
            let cfg = load_config(&common.config)?;
            let ck = read_checkpoint(&checkpoint)?;
            let (train_full, _) = mnist(&common, &cfg)?;
            let (_, stat_set) = stat_split(&train_full, &cfg, stat_size, split_seed)?;
            let targets = if layers.is_empty() {
                cfg.policy
                    .target_layers
                    .clone()
                    .unwrap_or_else(|| vec!["conv2".into(), "fc1".into()])
            } else {
                layers
            };
            let report = measure_apoz(
                &ck.network,
                &stat_set,
                &targets,
                batch_size.unwrap_or(256),
                common.threads,
            )?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            let json_path = common.out.join("apoz.json");
            std::fs::write(&json_path, report.to_json())
                .map_err(|e| Error::io(&json_path, e))?;
            let csv_path = common.out.join("apoz.csv");
            report.write_csv(&csv_path)?;
            report.write_histograms(&common.out, "hist-")?;
            for l in &report.layers {
                eprintln!(
                    "{}: {} neurons, mean APoZ {:.4}, stddev {:.4}, #>0.8 {}",
                    l.name,
                    l.apoz.len(),
                    l.mean,
                    l.stddev,
                    l.threshold_counts.gt_0_8
                );
            }
            eprintln!("wrote {} and {}", json_path.display(), csv_path.display());
            Ok(())
        }

        Cmd::Trim {
            common,
            checkpoint,
            report,
            layers,
            sigma,
            min_remaining,
            max_prune_fraction,
        } => {
            let cfg = load_config(&common.config)?;
            let ck = read_checkpoint(&checkpoint)?;
            let text = std::fs::read_to_string(&report).map_err(|e| Error::io(&report, e))?;
            let apoz = ApozReport::from_json(&text)?;
            let mut policy = cfg.policy.merged_over(nettrim::trim::TrimPolicy::new(
                apoz.layers.iter().map(|l| l.name.clone()).collect(),
            ));
            if !layers.is_empty() {
                policy.target_layers = layers;
            }
            if let Some(s) = sigma {
                policy.sigma_multiplier = s;
            }
            if let Some(m) = min_remaining {
                policy.min_remaining = m;
            }
            if let Some(f) = max_prune_fraction {
                policy.max_prune_fraction = f;
            }
            let plan = select_neurons(&apoz, &policy)?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            let out_ck = common.out.join("trimmed.ntrm");
            let plan_path = common.out.join("plan.json");
            std::fs::write(&plan_path, plan.to_json()).map_err(|e| Error::io(&plan_path, e))?;
            if plan.is_empty() {
                eprintln!("warning: nothing pruned (no neuron above threshold)");
                save_checkpoint(&ck.network, &ck.meta, &ck.lineage, &out_ck)?;
                eprintln!("wrote {} (unchanged network)", out_ck.display());
                return Ok(());
            }
            let trimmed = prune(&ck.network, &plan)?;
            let mut lineage = ck.lineage.clone();
            lineage.push(ck.digest());
            save_checkpoint(
                &trimmed,
                &TrainMeta {
                    epochs_completed: 0,
                    final_accuracy: None,
                },
                &lineage,
                &out_ck,
            )?;
            eprintln!(
                "pruned {} neurons: {} -> {} ({} -> {} params, compression {:.2})",
                plan.total_pruned(),
                ck.network.config_string(),
                trimmed.config_string(),
                ck.network.param_count(),
                trimmed.param_count(),
                compression_rate(&ck.network, &trimmed)?
            );
            eprintln!("wrote {} and {}", out_ck.display(), plan_path.display());
            Ok(())
        }

        Cmd::Loop {
            common,
            iterations,
            init_mode,
            accuracy_floor,
            stat_size,
            split_seed,
        } => {
            let cfg = load_config(&common.config)?;
            let mut lc = cfg.loop_config(common.out.clone())?;
            if let Some(i) = iterations {
                lc.iterations = i;
            }
            if let Some(m) = init_mode {
                lc.init_mode = m;
            }
            if let Some(f) = accuracy_floor {
                lc.accuracy_floor = f;
            }
            if let Some(s) = common.seed {
                lc.init_seed = s;
                lc.baseline.seed = s;
                lc.retrain.seed = s;
            }
            lc.threads = common.threads;
            let (train_full, test_set) = mnist(&common, &cfg)?;
            let (train_set, stat_set) = stat_split(&train_full, &cfg, stat_size, split_seed)?;
            eprintln!(
                "loop: {} iterations, init {:?}, train {} stat {} test {}",
                lc.iterations,
                lc.init_mode,
                train_set.len(),
                stat_set.len(),
                test_set.len()
            );
            let outcome = run_loop(
                &lc,
                &LoopData {
                    train: &train_set,
                    stat: &stat_set,
                    test: &test_set,
                },
                &mut |s| eprintln!("{s}"),
            )?;
            eprintln!(
                "done: {} iteration(s), stop: {:?}; summary at {}",
                outcome.reports.len(),
                outcome.stop,
                lc.out_dir.join("summary.csv").display()
            );
            Ok(())
        }

        Cmd::Eval {
            common,
            checkpoint,
            on,
        } => {
            let cfg = load_config(&common.config)?;
            let ck = read_checkpoint(&checkpoint)?;
            let (train_set, test_set) = mnist(&common, &cfg)?;
            let ds = match on.as_str() {
                "test" => &test_set,
                "train" => &train_set,
                other => {
                    return Err(Error::Config(format!(
                        "unknown split '{other}' (expected test or train)"
                    )))
                }
            };
            let acc = evaluate_threaded(&ck.network, ds, common.threads)?;
            println!("{acc:.6}");
            Ok(())
        }

        Cmd::Report {
            run,
            compare,
            layer,
        } => {
            let reports = load_reports(&run.join("reports.jsonl"))?;
            emit_reports(&reports, &run)?;
            println!(
                "{:<5} {:<16} {:>9} {:>12} {:>9} {:>9}",
                "iter", "config", "params", "compression", "pre_acc", "post_acc"
            );
            for r in &reports {
                println!(
                    "{:<5} {:<16} {:>9} {:>12.2} {:>9.4} {:>9.4}",
                    r.iteration, r.config, r.params, r.compression, r.pre_accuracy,
                    r.post_accuracy
                );
            }
            if let Some(other_dir) = compare {
                let other = load_reports(&other_dir.join("reports.jsonl"))?;
                let table = ablation_table(&reports, &other, &layer)?;
                let csv_path = run.join("ablation.csv");
                std::fs::write(&csv_path, table.to_csv())
                    .map_err(|e| Error::io(&csv_path, e))?;
                println!();
                println!("{table}");
                eprintln!("wrote {}", csv_path.display());
            }
            Ok(())
        }
    }
}
