//! Activation-guided neuron pruning for small convolutional networks.
//!
//! The crate trains LeNet-class networks with plain SGD, measures how often
//! each neuron's post-ReLU output is exactly zero over a dataset (APoZ, the
//! average percentage of zeros), selects chronically-zero neurons with a
//! mean-plus-sigma rule, removes them structurally while transplanting the
//! surviving weights, and iterates the trim/retrain cycle until compression
//! stalls or accuracy degrades.
//!
//! Everything is deterministic under a fixed seed: initialization, shuffle
//! order, trained weights, statistics, and selection.

pub mod apoz;
pub mod backward;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod forward;
pub mod idx;
pub mod layer;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod trim;

pub use apoz::{measure_apoz, ApozAccumulator, ApozReport};
pub use backward::{backward, Gradients};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainMeta};
pub use data::{batches, split_stat_set, Dataset, SplitSpec};
pub use error::{Error, Result};
pub use forward::ActivationTrace;
pub use idx::load_idx;
pub use layer::LayerSpec;
pub use network::{init_network, Network};
pub use optim::{sgd_step, SgdState};
pub use pipeline::{run_loop, InitMode, LoopConfig, LoopOutcome};
pub use report::{ablation_table, emit_reports, IterationReport};
pub use tensor::Tensor;
pub use train::{evaluate, train, TrainConfig};
pub use trim::{compression_rate, masked_forward, prune, select_neurons, TrimPlan, TrimPolicy};
