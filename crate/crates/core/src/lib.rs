//! Continual-learning laboratory: a small reverse-mode autodiff engine, a
//! patch-based segmentation network with per-task heads, diagonal Fisher
//! estimation with the elastic weight consolidation penalty, a synthetic
//! two-task phantom generator, and Dice evaluation.

pub mod autodiff;
pub mod checkpoint;
pub mod continual;
pub mod error;
pub mod metrics;
pub mod network;
pub mod params;
pub mod synthtasks;
pub mod tensor;

pub use autodiff::{finite_diff_grad, GradientMap, Graph, NodeId};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use continual::{
    build_regime, estimate_fisher, ewc_penalty, total_loss, AnchorParams, FisherDiagonal,
    FisherMode, RegimeKind, RegimePlan, RegularizerConfig,
};
pub use error::{Error, Result};
pub use metrics::{aggregate_curves, dice, evaluate_model, DiceRecord, EvalSet, Scope};
pub use network::{forward_pass, init_network, NetworkSpec, SegNet};
pub use params::ParamStore;
pub use synthtasks::{generate_sample, make_splits, GeneratorConfig, ScanSample, Split, Task};
pub use tensor::Tensor;
