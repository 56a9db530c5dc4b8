//! Diagonal Fisher information, the quadratic consolidation penalty, and the
//! experiment regimes built on them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::error::{Error, Result};
use crate::network::SegNet;
use crate::params::{EntryLayout, ParamStore};
use crate::synthtasks::{LabeledPatch, Split, Task};
use crate::tensor::Tensor;

/// How labels are chosen when estimating the Fisher diagonal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FisherMode {
    /// Labels are the dataset's reference labels.
    #[default]
    Empirical,
    /// Labels are drawn per pixel from the model's predictive distribution.
    Sampled,
}

impl FisherMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FisherMode::Empirical => "empirical",
            FisherMode::Sampled => "sampled",
        }
    }
}

impl fmt::Display for FisherMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FisherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(FisherMode::Empirical),
            "sampled" => Ok(FisherMode::Sampled),
            other => Err(Error::Config(format!(
                "fisher mode must be `empirical` or `sampled`, got `{other}`"
            ))),
        }
    }
}

/// Where a Fisher estimate came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FisherProvenance {
    pub dataset: String,
    pub head: String,
    pub mode: FisherMode,
    pub samples: usize,
}

/// Per-parameter importance values aligned to a parameter layout.
///
/// Indices past the estimated layout (heads attached later) read as zero.
#[derive(Clone, Debug)]
pub struct FisherDiagonal {
    layout: Vec<EntryLayout>,
    values: Vec<f64>,
    provenance: FisherProvenance,
}

impl FisherDiagonal {
    pub fn new(
        layout: Vec<EntryLayout>,
        values: Vec<f64>,
        provenance: FisherProvenance,
    ) -> Result<Self> {
        let expected: usize = layout.iter().map(EntryLayout::numel).sum();
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "Fisher layout covers {expected} parameters, {} values given",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract(format!(
                "Fisher value {} at index {i} is not a finite non-negative number",
                values[i]
            )));
        }
        Ok(Self {
            layout,
            values,
            provenance,
        })
    }

    /// All-ones importance over a layout: the plain L2 penalty.
    pub fn ones(layout: Vec<EntryLayout>) -> Self {
        let n = layout.iter().map(EntryLayout::numel).sum();
        Self {
            layout,
            values: vec![1.0; n],
            provenance: FisherProvenance {
                dataset: "none".into(),
                head: "none".into(),
                mode: FisherMode::Empirical,
                samples: 0,
            },
        }
    }

    pub fn layout(&self) -> &[EntryLayout] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn provenance(&self) -> &FisherProvenance {
        &self.provenance
    }

    /// Importance at a flat index, zero for indices added after estimation.
    pub fn get(&self, index: usize) -> f64 {
        self.values.get(index).copied().unwrap_or(0.0)
    }

    pub fn entry_values(&self, name: &str) -> Option<&[f64]> {
        let mut offset = 0;
        for e in &self.layout {
            let n = e.numel();
            if e.name == name {
                return Some(&self.values[offset..offset + n]);
            }
            offset += n;
        }
        None
    }
}

/// Frozen copy of the converged task-A parameters.
#[derive(Clone, Debug)]
pub struct AnchorParams {
    layout: Vec<EntryLayout>,
    values: Vec<f64>,
}

impl AnchorParams {
    pub fn snapshot(params: &ParamStore) -> Self {
        Self {
            layout: params.layout(),
            values: params.flatten(),
        }
    }

    pub fn layout(&self) -> &[EntryLayout] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A model exposing per-pixel log-probabilities for one input.
pub trait LogProbModel {
    fn params(&self) -> &ParamStore;

    /// Builds `[K×N]` log-probabilities for `input`, registering the
    /// parameters it reads with `graph`.
    fn log_probs(&self, graph: &mut Graph, input: &Tensor) -> Result<NodeId>;
}

/// One head of a [`SegNet`] viewed as a classifier.
pub struct HeadModel<'a> {
    net: &'a SegNet,
    head: String,
}

impl<'a> HeadModel<'a> {
    pub fn new(net: &'a SegNet, head: &str) -> Result<Self> {
        if !net.has_head(head) {
            return Err(Error::UnknownHead(head.to_string()));
        }
        Ok(Self {
            net,
            head: head.to_string(),
        })
    }
}

impl LogProbModel for HeadModel<'_> {
    fn params(&self) -> &ParamStore {
        self.net.params()
    }

    fn log_probs(&self, graph: &mut Graph, input: &Tensor) -> Result<NodeId> {
        let x = graph.constant(input.clone());
        let logits = self.net.logits_node(graph, x, &self.head)?;
        graph.log_softmax(logits)
    }
}

/// Diagonal Fisher of `head` over `data`.
///
/// `dataset` is recorded in the provenance only.
pub fn estimate_fisher(
    net: &SegNet,
    data: &[LabeledPatch],
    head: &str,
    mode: FisherMode,
    rng_seed: u64,
    dataset: &str,
) -> Result<FisherDiagonal> {
    let model = HeadModel::new(net, head)?;
    let values = fisher_values(&model, data, mode, rng_seed)?;
    FisherDiagonal::new(
        net.params().layout(),
        values,
        FisherProvenance {
            dataset: dataset.to_string(),
            head: head.to_string(),
            mode,
            samples: data.len(),
        },
    )
}

/// `F_i = (1/M)·Σ_m g_{m,i}²`, with `g_m` the gradient of sample `m`'s mean
/// per-pixel log-likelihood.
///
/// In sampled mode one `ChaCha8Rng` seeded with `rng_seed` is consumed in
/// sample order then pixel order, one uniform `f64` per pixel, and the label
/// is the first class whose cumulative probability exceeds it.
pub fn fisher_values<M: LogProbModel>(
    model: &M,
    data: &[LabeledPatch],
    mode: FisherMode,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Data("Fisher estimation needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut acc = vec![0.0; model.params().num_params()];
    for sample in data {
        let score = sample_score(model, sample, mode, &mut rng)?;
        for (a, g) in acc.iter_mut().zip(&score) {
            *a += g * g;
        }
    }
    let m = data.len() as f64;
    acc.iter_mut().for_each(|v| *v /= m);
    Ok(acc)
}

/// Score `∇_θ log p(y|x,θ)` of one sample (mean over pixels), flattened.
pub fn sample_score<M: LogProbModel, R: Rng>(
    model: &M,
    sample: &LabeledPatch,
    mode: FisherMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let lp = model.log_probs(&mut g, &sample.input)?;
    let labels = match mode {
        FisherMode::Empirical => sample.labels.clone(),
        FisherMode::Sampled => sample_labels(g.value(lp), rng),
    };
    let nll = g.nll_loss(lp, &labels, None)?;
    let loglik = g.scale(nll, -1.0);
    let grads = g.backward(loglik)?;
    Ok(grads.to_flat(model.params()))
}

/// Draws one label per column of `[K×N]` log-probabilities.
pub fn sample_labels<R: Rng>(log_probs: &Tensor, rng: &mut R) -> Vec<u8> {
    let (k, n) = (log_probs.shape()[0], log_probs.shape()[1]);
    let d = log_probs.data();
    (0..n)
        .map(|col| {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            for c in 0..k {
                cum += d[c * n + col].exp();
                if u < cum {
                    return c as u8;
                }
            }
            (k - 1) as u8
        })
        .collect()
}

fn check_alignment(params: &ParamStore, anchor: &AnchorParams, fisher: &FisherDiagonal) -> Result<()> {
    let have = params.layout();
    for (i, a) in anchor.layout().iter().enumerate() {
        match have.get(i) {
            Some(p) if p == a => {}
            Some(p) => {
                return Err(Error::Alignment {
                    entry: a.name.clone(),
                    message: format!(
                        "anchor has `{}` {:?}, parameters have `{}` {:?}",
                        a.name, a.shape, p.name, p.shape
                    ),
                })
            }
            None => {
                return Err(Error::Alignment {
                    entry: a.name.clone(),
                    message: "missing from the parameter store".into(),
                })
            }
        }
        match fisher.layout().get(i) {
            Some(f) if f == a => {}
            Some(f) => {
                return Err(Error::Alignment {
                    entry: a.name.clone(),
                    message: format!("Fisher has `{}` {:?} at this position", f.name, f.shape),
                })
            }
            None => {
                return Err(Error::Alignment {
                    entry: a.name.clone(),
                    message: "missing from the Fisher diagonal".into(),
                })
            }
        }
    }
    if fisher.layout().len() != anchor.layout().len() {
        let extra = &fisher.layout()[anchor.layout().len().min(fisher.layout().len())];
        return Err(Error::Alignment {
            entry: extra.name.clone(),
            message: "Fisher diagonal has entries the anchor lacks".into(),
        });
    }
    Ok(())
}

/// `λ·Σ_i F_i (θ_i − θ*_i)²` over the anchored entries.
///
/// Entries appended after the anchor was taken contribute nothing.
pub fn ewc_penalty(
    g: &mut Graph,
    params: &ParamStore,
    anchor: &AnchorParams,
    fisher: &FisherDiagonal,
    lambda: f64,
) -> Result<NodeId> {
    check_alignment(params, anchor, fisher)?;
    let mut total: Option<NodeId> = None;
    let mut offset = 0;
    for entry in anchor.layout() {
        let n = entry.numel();
        let values = params.get(&entry.name).expect("alignment checked");
        let node = g.param(&entry.name, values);
        let term = g.weighted_sq_dist(
            node,
            &anchor.values()[offset..offset + n],
            &fisher.values()[offset..offset + n],
        )?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
        offset += n;
    }
    let sum = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)),
    };
    Ok(g.scale(sum, lambda))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegMode {
    None,
    L2,
    Ewc,
}

/// Regularizer of the task-B objective.
#[derive(Clone, Debug)]
pub struct RegularizerConfig {
    mode: RegMode,
    lambda: f64,
    anchor: Option<Arc<AnchorParams>>,
    weights: Option<Arc<FisherDiagonal>>,
}

impl RegularizerConfig {
    pub fn none() -> Self {
        Self {
            mode: RegMode::None,
            lambda: 0.0,
            anchor: None,
            weights: None,
        }
    }

    /// Quadratic pull towards `anchor` with unit importance everywhere.
    pub fn l2(lambda: f64, anchor: Arc<AnchorParams>) -> Result<Self> {
        check_lambda(lambda)?;
        let ones = FisherDiagonal::ones(anchor.layout().to_vec());
        Ok(Self {
            mode: RegMode::L2,
            lambda,
            anchor: Some(anchor),
            weights: Some(Arc::new(ones)),
        })
    }

    pub fn ewc(lambda: f64, anchor: Arc<AnchorParams>, fisher: Arc<FisherDiagonal>) -> Result<Self> {
        check_lambda(lambda)?;
        if anchor.layout() != fisher.layout() {
            let entry = anchor
                .layout()
                .iter()
                .zip(fisher.layout())
                .find(|(a, f)| a != f)
                .map(|(a, _)| a.name.clone())
                .unwrap_or_else(|| "<length>".into());
            return Err(Error::Alignment {
                entry,
                message: "anchor and Fisher layouts differ".into(),
            });
        }
        Ok(Self {
            mode: RegMode::Ewc,
            lambda,
            anchor: Some(anchor),
            weights: Some(fisher),
        })
    }

    pub fn mode(&self) -> RegMode {
        self.mode
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn anchor(&self) -> Option<&AnchorParams> {
        self.anchor.as_deref()
    }

    pub fn fisher(&self) -> Option<&FisherDiagonal> {
        self.weights.as_deref()
    }

    /// Whether the penalty term contributes at all.
    pub fn is_active(&self) -> bool {
        self.mode != RegMode::None && self.lambda != 0.0
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "lambda must be a finite non-negative number, got {lambda}"
        )))
    }
}

/// Loss nodes of one optimisation step.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub penalty: Option<NodeId>,
}

/// `task_loss + penalty`; inactive regularizers return `task_loss` unchanged.
pub fn total_loss(
    g: &mut Graph,
    task_loss: NodeId,
    reg: &RegularizerConfig,
    params: &ParamStore,
) -> Result<LossNodes> {
    if !reg.is_active() {
        return Ok(LossNodes {
            total: task_loss,
            penalty: None,
        });
    }
    let anchor = reg.anchor().expect("active regularizer has an anchor");
    let fisher = reg.fisher().expect("active regularizer has weights");
    let penalty = ewc_penalty(g, params, anchor, fisher, reg.lambda())?;
    Ok(LossNodes {
        total: g.add(task_loss, penalty)?,
        penalty: Some(penalty),
    })
}

/// The six experiment regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegimeKind {
    DmA,
    DmB,
    Multitask,
    Finetune,
    L2,
    Ewc,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 6] = [
        RegimeKind::DmA,
        RegimeKind::DmB,
        RegimeKind::Multitask,
        RegimeKind::Finetune,
        RegimeKind::L2,
        RegimeKind::Ewc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::DmA => "dm-a",
            RegimeKind::DmB => "dm-b",
            RegimeKind::Multitask => "multitask",
            RegimeKind::Finetune => "finetune",
            RegimeKind::L2 => "l2",
            RegimeKind::Ewc => "ewc",
        }
    }

    /// Regimes that start from the task-A checkpoint and train on task B only.
    pub fn is_sequential(self) -> bool {
        matches!(self, RegimeKind::Finetune | RegimeKind::L2 | RegimeKind::Ewc)
    }

    pub fn uses_lambda(self) -> bool {
        matches!(self, RegimeKind::L2 | RegimeKind::Ewc)
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown regime `{s}` (expected dm-a, dm-b, multitask, finetune, l2 or ewc)"
                ))
            })
    }
}

/// How the network of a run is initialised.
#[derive(Clone, Debug)]
pub enum InitSource {
    /// Fresh network with one head per listed task.
    Scratch(Vec<Task>),
    /// The task-A checkpoint, with a new head attached for `attach`.
    Checkpoint { base: Arc<Checkpoint>, attach: Task },
}

/// Everything a training run needs besides hyperparameters.
#[derive(Clone, Debug)]
pub struct RegimePlan {
    pub kind: RegimeKind,
    pub lambda: f64,
    pub init: InitSource,
    /// Tasks whose training split is streamed; the loss sums one term per task.
    pub train_tasks: Vec<Task>,
    /// Tasks evaluated on the validation split.
    pub eval_tasks: Vec<Task>,
    pub regularizer: RegularizerConfig,
}

impl RegimePlan {
    /// Training splits this plan may read.
    pub fn training_splits(&self) -> Vec<Split> {
        self.train_tasks.iter().map(|t| t.train_split()).collect()
    }
}

/// Resolves a regime into a plan, loading the task-A checkpoint for the
/// sequential regimes.
pub fn build_regime(
    kind: RegimeKind,
    lambda: f64,
    dm_a_checkpoint: Option<&Path>,
) -> Result<RegimePlan> {
    check_lambda(lambda)?;
    let scratch = |heads: Vec<Task>, train: Vec<Task>| RegimePlan {
        kind,
        lambda: 0.0,
        init: InitSource::Scratch(heads.clone()),
        train_tasks: train,
        eval_tasks: heads,
        regularizer: RegularizerConfig::none(),
    };
    match kind {
        RegimeKind::DmA => Ok(scratch(vec![Task::A], vec![Task::A])),
        RegimeKind::DmB => Ok(scratch(vec![Task::B], vec![Task::B])),
        RegimeKind::Multitask => Ok(scratch(vec![Task::A, Task::B], vec![Task::A, Task::B])),
        RegimeKind::Finetune | RegimeKind::L2 | RegimeKind::Ewc => {
            let path = dm_a_checkpoint.ok_or_else(|| {
                Error::Prerequisite(format!("regime {kind} needs a task-A checkpoint"))
            })?;
            if !path.exists() {
                return Err(Error::Prerequisite(format!(
                    "task-A checkpoint {} does not exist",
                    path.display()
                )));
            }
            let base = load_checkpoint(path)?;
            if base.spec.head_classes(Task::A.head()).is_none() {
                return Err(Error::Prerequisite(format!(
                    "checkpoint {} has no `{}` head",
                    path.display(),
                    Task::A.head()
                )));
            }
            let anchor = Arc::new(AnchorParams::snapshot(&base.params));
            let regularizer = match kind {
                RegimeKind::Finetune => RegularizerConfig::none(),
                RegimeKind::L2 => RegularizerConfig::l2(lambda, anchor)?,
                _ => {
                    let fisher = base.fisher.clone().ok_or_else(|| {
                        Error::Prerequisite(format!(
                            "checkpoint {} carries no Fisher payload",
                            path.display()
                        ))
                    })?;
                    RegularizerConfig::ewc(lambda, anchor, Arc::new(fisher))?
                }
            };
            Ok(RegimePlan {
                kind,
                lambda: if kind == RegimeKind::Finetune { 0.0 } else { lambda },
                init: InitSource::Checkpoint {
                    base: Arc::new(base),
                    attach: Task::B,
                },
                train_tasks: vec![Task::B],
                eval_tasks: vec![Task::A, Task::B],
                regularizer,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_network, NetworkSpec};

    fn tiny_store() -> ParamStore {
        let mut p = ParamStore::new();
        p.push("a", Tensor::vector(vec![1.0, 3.0]).unwrap()).unwrap();
        p.push("b", Tensor::vector(vec![-1.0]).unwrap()).unwrap();
        p
    }

    #[test]
    fn penalty_zero_at_anchor() {
        let p = tiny_store();
        let anchor = AnchorParams::snapshot(&p);
        let fisher = FisherDiagonal::ones(p.layout());
        let mut g = Graph::new();
        let pen = ewc_penalty(&mut g, &p, &anchor, &fisher, 3.0).unwrap();
        assert_eq!(g.value(pen).item().unwrap(), 0.0);
    }

    #[test]
    fn penalty_direct_evaluation() {
        let mut p = ParamStore::new();
        p.push("w", Tensor::vector(vec![1.0, 1.0]).unwrap()).unwrap();
        let mut a = ParamStore::new();
        a.push("w", Tensor::vector(vec![0.0, 0.0]).unwrap()).unwrap();
        let anchor = AnchorParams::snapshot(&a);
        let fisher = FisherDiagonal::new(
            p.layout(),
            vec![1.0, 2.0],
            FisherDiagonal::ones(p.layout()).provenance().clone(),
        )
        .unwrap();
        let mut g = Graph::new();
        let pen = ewc_penalty(&mut g, &p, &anchor, &fisher, 0.5).unwrap();
        assert_eq!(g.value(pen).item().unwrap(), 1.5);
        let grads = g.backward(pen).unwrap();
        // 2λF(θ−θ*) = [1, 2]
        assert_eq!(grads.get("w").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn lambda_zero_gives_zero_penalty_and_gradient() {
        let p = tiny_store();
        let mut moved = p.clone();
        moved.set("a", Tensor::vector(vec![4.0, -2.0]).unwrap()).unwrap();
        let anchor = AnchorParams::snapshot(&p);
        let fisher = FisherDiagonal::ones(p.layout());
        let mut g = Graph::new();
        let pen = ewc_penalty(&mut g, &moved, &anchor, &fisher, 0.0).unwrap();
        assert_eq!(g.value(pen).item().unwrap(), 0.0);
        let grads = g.backward(pen).unwrap();
        assert!(grads.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn alignment_error_names_entry() {
        let p = tiny_store();
        let mut other = ParamStore::new();
        other.push("a", Tensor::vector(vec![1.0, 3.0]).unwrap()).unwrap();
        other.push("c", Tensor::vector(vec![0.0]).unwrap()).unwrap();
        let anchor = AnchorParams::snapshot(&other);
        let fisher = FisherDiagonal::ones(other.layout());
        let mut g = Graph::new();
        match ewc_penalty(&mut g, &p, &anchor, &fisher, 1.0) {
            Err(Error::Alignment { entry, .. }) => assert_eq!(entry, "c"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fisher_lookup_past_layout_is_zero() {
        let p = tiny_store();
        let f = FisherDiagonal::ones(p.layout());
        assert_eq!(f.get(2), 1.0);
        assert_eq!(f.get(3), 0.0);
        assert_eq!(f.entry_values("b"), Some(&[1.0][..]));
    }

    #[test]
    fn fisher_rejects_negative_values() {
        let p = tiny_store();
        let prov = FisherDiagonal::ones(p.layout()).provenance().clone();
        assert!(FisherDiagonal::new(p.layout(), vec![1.0, -0.5, 0.0], prov).is_err());
    }

    #[test]
    fn none_mode_total_is_task_loss() {
        let p = tiny_store();
        let mut g = Graph::new();
        let a = g.param("a", p.get("a").unwrap());
        let loss = g.sum(a);
        let nodes = total_loss(&mut g, loss, &RegularizerConfig::none(), &p).unwrap();
        assert_eq!(nodes.total, loss);
        assert!(nodes.penalty.is_none());
    }

    #[test]
    fn estimate_fisher_errors() {
        let net = init_network(&NetworkSpec::default(), 1).unwrap();
        assert!(matches!(
            estimate_fisher(&net, &[], "taskA", FisherMode::Empirical, 0, "d"),
            Err(Error::Data(_))
        ));
        let patch = LabeledPatch {
            input: Tensor::zeros(&[2, 7, 7]),
            labels: vec![0],
        };
        assert!(matches!(
            estimate_fisher(&net, &[patch], "nope", FisherMode::Empirical, 0, "d"),
            Err(Error::UnknownHead(_))
        ));
    }

    #[test]
    fn regime_names_round_trip() {
        for k in RegimeKind::ALL {
            assert_eq!(k.as_str().parse::<RegimeKind>().unwrap(), k);
        }
        assert!("dm-c".parse::<RegimeKind>().is_err());
    }

    #[test]
    fn scratch_regimes() {
        let plan = build_regime(RegimeKind::DmA, 0.0, None).unwrap();
        assert_eq!(plan.train_tasks, vec![Task::A]);
        assert!(!plan.regularizer.is_active());
        assert!(matches!(&plan.init, InitSource::Scratch(h) if h == &vec![Task::A]));

        let mt = build_regime(RegimeKind::Multitask, 0.0, None).unwrap();
        assert_eq!(mt.training_splits(), vec![Split::TrainA, Split::TrainB]);
    }

    #[test]
    fn sequential_regimes_need_checkpoint() {
        for kind in [RegimeKind::Finetune, RegimeKind::L2, RegimeKind::Ewc] {
            assert!(matches!(
                build_regime(kind, 1.0, None),
                Err(Error::Prerequisite(_))
            ));
            assert!(matches!(
                build_regime(kind, 1.0, Some(Path::new("/nonexistent/ckpt.ewc"))),
                Err(Error::Prerequisite(_))
            ));
        }
    }
}
