//! SGD training of one regime plan.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ewc_core::continual::{total_loss, InitSource};
use ewc_core::metrics::{evaluate_model, DiceRecord, EvalSet};
use ewc_core::synthtasks::LabeledPatch;
use ewc_core::{init_network, save_checkpoint, Checkpoint, Graph, NetworkSpec, RegimePlan, SegNet, Split, Task};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{patches_from, Dataset};
use crate::error::{HarnessError, Result};

/// splitmix64 finaliser, used to derive independent stream seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, epoch: usize, task: Task, salt: u64) -> u64 {
    let t = match task {
        Task::A => 1,
        Task::B => 2,
    };
    mix(mix(mix(seed) ^ epoch as u64) ^ (t << 8 | salt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceRow {
    pub scope: String,
    pub task: String,
    pub class: String,
    pub dice: f64,
}

impl From<&DiceRecord> for DiceRow {
    fn from(r: &DiceRecord) -> Self {
        DiceRow {
            scope: r.scope.to_string(),
            task: r.task.id().to_string(),
            class: r.class_name().to_string(),
            dice: r.dice.unwrap_or(f64::NAN),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean task loss over the epoch's steps; 0 at epoch 0.
    pub train_loss: f64,
    /// Mean regularizer value; exactly 0 without a regularizer.
    pub penalty: f64,
    pub dice: Vec<DiceRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub regime: String,
    pub lambda: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Canonical dump of the resolved config.
    pub config: String,
    pub epochs: Vec<EpochMetrics>,
    /// Full-image Dice after the last epoch.
    pub final_dice: Vec<DiceRow>,
    pub checkpoints: Vec<PathBuf>,
    /// Dataset splits the run read.
    pub splits_read: Vec<String>,
    pub duration_secs: f64,
}

impl RunRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        a.duration_secs = other.duration_secs;
        a == *other
    }

    pub fn final_dice_of(&self, task: &str, class: &str) -> Option<f64> {
        self.final_dice
            .iter()
            .find(|r| r.task == task && r.class == class)
            .map(|r| r.dice)
    }

    /// Mean final Dice over the reported classes of `task`.
    pub fn final_task_mean(&self, task: Task) -> Option<f64> {
        let vals: Vec<f64> = self
            .final_dice
            .iter()
            .filter(|r| r.task == task.id())
            .map(|r| r.dice)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn run_id(regime: &str, lambda: f64, seed: u64, config_hash: &str) -> String {
    ewc_core::synthtasks::short_hash(format!("{regime}|{lambda:?}|{seed}|{config_hash}").as_bytes())
}

/// The initial network of a plan.
pub fn initial_network(plan: &RegimePlan, cfg: &ExperimentConfig, seed: u64) -> Result<SegNet> {
    match &plan.init {
        InitSource::Scratch(tasks) => {
            let spec = NetworkSpec {
                in_channels: 2,
                trunk: cfg.trunk.clone(),
                heads: tasks.iter().map(|t| (t.head().to_string(), t.classes())).collect(),
            };
            Ok(init_network(&spec, seed)?)
        }
        InitSource::Checkpoint { base, attach } => {
            let mut net = base.network()?;
            net.attach_head(attach.head(), attach.classes(), mix(seed ^ 0xB0B0))?;
            Ok(net)
        }
    }
}

/// Mean over patches of the per-patch mean pixel NLL.
fn batch_loss(g: &mut Graph, net: &SegNet, task: Task, batch: &[LabeledPatch]) -> Result<ewc_core::NodeId> {
    let mut acc = None;
    for p in batch {
        let x = g.constant(p.input.clone());
        let logits = net.logits_node(g, x, task.head())?;
        let lp = g.log_softmax(logits)?;
        let l = g.nll_loss(lp, &p.labels, None)?;
        acc = Some(match acc {
            None => l,
            Some(a) => g.add(a, l)?,
        });
    }
    let sum = acc.ok_or_else(|| ewc_core::Error::Data("empty batch".into()))?;
    Ok(g.scale(sum, 1.0 / batch.len() as f64))
}

fn evaluate(
    net: &SegNet,
    plan: &RegimePlan,
    cfg: &ExperimentConfig,
    data: &Dataset,
    epoch: usize,
    full: bool,
) -> Result<Vec<DiceRow>> {
    let margin = net.spec().margin();
    let window = cfg.patch_size - 2 * margin;
    let mut rows = Vec::new();
    for &task in &plan.eval_tasks {
        let patches = data.validation_patches(task, cfg.eval_patches_per_image, window, margin)?;
        let recs = evaluate_model(net, task, EvalSet::Patches(&patches), epoch)?;
        rows.extend(recs.iter().map(DiceRow::from));
        if full {
            let samples = data.split(Split::Validation)?;
            let recs = evaluate_model(
                net,
                task,
                EvalSet::Full {
                    samples,
                    window: cfg.eval_window,
                },
                epoch,
            )?;
            rows.extend(recs.iter().map(DiceRow::from));
        }
    }
    Ok(rows)
}

fn write_checkpoint(
    net: &SegNet,
    plan: &RegimePlan,
    seed: u64,
    epoch: usize,
    path: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::new(net)
        .with_meta("regime", plan.kind)
        .with_meta("lambda", plan.lambda)
        .with_meta("seed", seed)
        .with_meta("epoch", epoch);
    save_checkpoint(&ckpt, path)?;
    Ok(())
}

/// Trains `plan` and returns the record and the final network.
///
/// Checkpoints `epoch0.ckpt` and `final.ckpt` are written under `run_dir`
/// when given. Only the plan's training splits and the validation split are
/// read from `data`.
pub fn train(
    plan: &RegimePlan,
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<(RunRecord, SegNet)> {
    let started = Instant::now();
    let config_hash = cfg.config_hash(&data.hash());
    let regime = plan.kind.to_string();
    let id = run_id(&regime, plan.lambda, seed, &config_hash);

    data.clear_access_log();
    let mut net = initial_network(plan, cfg, seed)?;
    let margin = net.spec().margin();
    if cfg.patch_size <= 2 * margin {
        return Err(HarnessError::config(
            "patch_size",
            format!("{} leaves no output for margin {margin}", cfg.patch_size),
        ));
    }
    let window = cfg.patch_size - 2 * margin;

    let mut checkpoints = Vec::new();
    if let Some(dir) = run_dir {
        let p = dir.join("epoch0.ckpt");
        write_checkpoint(&net, plan, seed, 0, &p)?;
        checkpoints.push(p);
    }

    let mut epochs = vec![EpochMetrics {
        epoch: 0,
        train_loss: 0.0,
        penalty: 0.0,
        dice: evaluate(&net, plan, cfg, data, 0, true)?,
    }];

    let names: Vec<String> = net.params().names().map(str::to_string).collect();
    let mut velocity: Vec<Vec<f64>> = net
        .params()
        .entries()
        .iter()
        .map(|e| vec![0.0; e.tensor().len()])
        .collect();

    for epoch in 1..=cfg.epochs {
        let mut task_batches = Vec::new();
        for &task in &plan.train_tasks {
            let samples = data.split(task.train_split())?;
            let mut patches = patches_from(
                samples,
                task,
                cfg.patches_per_image,
                window,
                margin,
                stream_seed(seed, epoch, task, 0),
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, epoch, task, 1));
            patches.shuffle(&mut rng);
            let batches: Vec<Vec<LabeledPatch>> =
                patches.chunks(cfg.batch_size).map(<[_]>::to_vec).collect();
            task_batches.push((task, batches));
        }
        let steps = task_batches.iter().map(|(_, b)| b.len()).max().unwrap_or(0);

        let (mut loss_sum, mut pen_sum) = (0.0, 0.0);
        for step in 0..steps {
            let mut g = Graph::new();
            let mut task_loss = None;
            for (task, batches) in &task_batches {
                let l = batch_loss(&mut g, &net, *task, &batches[step % batches.len()])?;
                task_loss = Some(match task_loss {
                    None => l,
                    Some(a) => g.add(a, l)?,
                });
            }
            let task_loss = task_loss.expect("at least one training task");
            let nodes = total_loss(&mut g, task_loss, &plan.regularizer, net.params())?;
            let total = g.value(nodes.total).item()?;
            if !total.is_finite() {
                return Err(HarnessError::Divergence {
                    epoch,
                    batch: step,
                    loss: total,
                });
            }
            loss_sum += g.value(task_loss).item()?;
            if let Some(p) = nodes.penalty {
                pen_sum += g.value(p).item()?;
            }
            let grads = g.backward(nodes.total)?;
            for (name, vel) in names.iter().zip(velocity.iter_mut()) {
                let Some(grad) = grads.get(name) else { continue };
                let theta = net.params_mut().values_mut(name).expect("parameter exists");
                for ((t, v), &d) in theta.iter_mut().zip(vel.iter_mut()).zip(grad.data()) {
                    *v = cfg.momentum * *v + d;
                    *t -= cfg.learning_rate * *v;
                }
            }
        }
        let denom = steps.max(1) as f64;
        let last = epoch == cfg.epochs;
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / denom,
            penalty: pen_sum / denom,
            dice: evaluate(&net, plan, cfg, data, epoch, last)?,
        });
        log::debug!("{regime} λ={} seed={seed} epoch {epoch}: loss {:.4}", plan.lambda, loss_sum / denom);
    }

    if let Some(dir) = run_dir {
        let p = dir.join("final.ckpt");
        write_checkpoint(&net, plan, seed, cfg.epochs, &p)?;
        checkpoints.push(p);
    }

    let read = data.accessed();
    let mut allowed = plan.training_splits();
    allowed.push(Split::Validation);
    if let Some(s) = read.iter().find(|s| !allowed.contains(s)) {
        return Err(HarnessError::Prerequisite(format!(
            "{regime} run read the {s} split outside its plan"
        )));
    }

    let last = epochs.last().expect("epoch 0 exists");
    let final_dice = last.dice.iter().filter(|r| r.scope == "full").cloned().collect();
    let record = RunRecord {
        run_id: id,
        regime,
        lambda: plan.lambda,
        seed,
        config_hash,
        config: cfg.dump(),
        epochs,
        final_dice,
        checkpoints,
        splits_read: read.iter().map(|s| s.to_string()).collect(),
        duration_secs: started.elapsed().as_secs_f64(),
    };
    Ok((record, net))
}
