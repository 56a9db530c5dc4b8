//! Dice similarity coefficient and model evaluation.

use std::cmp::Ordering;
use std::fmt;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::network::SegNet;
use crate::synthtasks::{tile_origins, LabelMap, LabeledPatch, ScanSample, Task};
use crate::tensor::Tensor;

/// Per-class pixel counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    /// Adds the counts of one prediction/reference pair.
    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Dimension(format!(
                "prediction has {} pixels, reference {}",
                pred.len(),
                truth.len()
            )));
        }
        let k = self.classes();
        for (index, (&p, &t)) in pred.iter().zip(truth).enumerate() {
            let (p, t) = (p as usize, t as usize);
            if p >= k || t >= k {
                return Err(Error::Label {
                    index,
                    label: p.max(t),
                    classes: k,
                });
            }
            if p == t {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[t] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        for (a, b) in self.fn_.iter_mut().zip(&other.fn_) {
            *a += b;
        }
    }

    /// `2TP / (2TP + FP + FN)`, or `None` when the class is absent from both.
    pub fn dice(&self, class: usize) -> Option<f64> {
        let denom = 2 * self.tp[class] + self.fp[class] + self.fn_[class];
        (denom > 0).then(|| 2.0 * self.tp[class] as f64 / denom as f64)
    }
}

/// Dice of `class_id` between two label maps; `None` if neither contains it.
pub fn dice(pred: &LabelMap, truth: &LabelMap, class_id: u8) -> Result<Option<f64>> {
    if (pred.height, pred.width) != (truth.height, truth.width) {
        return Err(Error::Dimension(format!(
            "prediction is {}×{}, reference is {}×{}",
            pred.height, pred.width, truth.height, truth.width
        )));
    }
    let mut both = 0u64;
    let mut p_count = 0u64;
    let mut t_count = 0u64;
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        let (pi, ti) = (p == class_id, t == class_id);
        p_count += pi as u64;
        t_count += ti as u64;
        both += (pi && ti) as u64;
    }
    let denom = p_count + t_count;
    Ok((denom > 0).then(|| 2.0 * both as f64 / denom as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    /// Fixed set of validation patches.
    Patch,
    /// Whole validation images, tiled.
    Full,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Patch => "patch",
            Scope::Full => "full",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dice of one class of one task at one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct DiceRecord {
    pub task: Task,
    pub class_id: u8,
    pub dice: Option<f64>,
    pub scope: Scope,
    pub epoch: usize,
}

impl DiceRecord {
    pub fn class_name(&self) -> &'static str {
        self.task.class_names()[self.class_id as usize]
    }
}

/// What to evaluate on.
#[derive(Clone, Copy, Debug)]
pub enum EvalSet<'a> {
    Patches(&'a [LabeledPatch]),
    /// Whole images, covered by tiles whose output window is `window` pixels.
    Full {
        samples: &'a [ScanSample],
        window: usize,
    },
}

/// Argmax over classes of `[K×N]` logits.
pub fn argmax_labels(logits: &Tensor) -> Vec<u8> {
    let (k, n) = (logits.shape()[0], logits.shape()[1]);
    let d = logits.data();
    (0..n)
        .map(|col| {
            let mut best = 0;
            for c in 1..k {
                if d[c * n + col].partial_cmp(&d[best * n + col]) == Some(Ordering::Greater) {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

fn predict(net: &SegNet, input: &Tensor, head: &str) -> Result<Vec<u8>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let logits = net.logits_node(&mut g, x, head)?;
    Ok(argmax_labels(g.value(logits)))
}

/// Segments a whole image by tiling; returns the `H×W` label map.
pub fn segment_full(net: &SegNet, sample: &ScanSample, task: Task, window: usize) -> Result<LabelMap> {
    let n = sample.size();
    let margin = net.spec().margin();
    let origins = tile_origins(n, window);
    let window = window.min(n);
    let mut out = vec![0u8; n * n];
    for &y0 in &origins {
        for &x0 in &origins {
            let patch = crate::synthtasks::extract_patch(sample, task, y0, x0, window, margin)?;
            let pred = predict(net, &patch.input, task.head())?;
            for wy in 0..window {
                let row = &pred[wy * window..(wy + 1) * window];
                out[(y0 + wy) * n + x0..(y0 + wy) * n + x0 + window].copy_from_slice(row);
            }
        }
    }
    LabelMap::new(n, n, out)
}

/// Pooled confusion counts of `task` over an evaluation set.
pub fn confusion(net: &SegNet, task: Task, set: EvalSet<'_>) -> Result<ConfusionCounts> {
    if !net.has_head(task.head()) {
        return Err(Error::UnknownHead(task.head().to_string()));
    }
    let mut counts = ConfusionCounts::new(task.classes());
    match set {
        EvalSet::Patches(patches) => {
            for p in patches {
                let pred = predict(net, &p.input, task.head())?;
                counts.add(&pred, &p.labels)?;
            }
        }
        EvalSet::Full { samples, window } => {
            for s in samples {
                let pred = segment_full(net, s, task, window)?;
                counts.add(&pred.data, &s.labels(task).data)?;
            }
        }
    }
    Ok(counts)
}

/// Per-class Dice (background excluded) from counts pooled over the set.
/// Classes absent from every prediction and reference are left out.
pub fn evaluate_model(
    net: &SegNet,
    task: Task,
    set: EvalSet<'_>,
    epoch: usize,
) -> Result<Vec<DiceRecord>> {
    let scope = match set {
        EvalSet::Patches(_) => Scope::Patch,
        EvalSet::Full { .. } => Scope::Full,
    };
    let counts = confusion(net, task, set)?;
    Ok(records_from_counts(&counts, task, scope, epoch))
}

pub fn records_from_counts(
    counts: &ConfusionCounts,
    task: Task,
    scope: Scope,
    epoch: usize,
) -> Vec<DiceRecord> {
    task.reported_classes()
        .filter_map(|c| {
            counts.dice(c as usize).map(|d| DiceRecord {
                task,
                class_id: c,
                dice: Some(d),
                scope,
                epoch,
            })
        })
        .collect()
}

/// One row of a long-format curve table.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub task: Task,
    pub class_id: u8,
    pub scope: Scope,
    pub dice: f64,
}

/// Long-format table sorted by (task, class, scope, epoch); undefined
/// entries are dropped.
pub fn aggregate_curves(records: &[DiceRecord]) -> Vec<CurveRow> {
    let mut rows: Vec<CurveRow> = records
        .iter()
        .filter_map(|r| {
            r.dice.map(|dice| CurveRow {
                epoch: r.epoch,
                task: r.task,
                class_id: r.class_id,
                scope: r.scope,
                dice,
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.task, a.class_id, a.scope, a.epoch).cmp(&(b.task, b.class_id, b.scope, b.epoch))
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, d: &[u8]) -> LabelMap {
        LabelMap::new(h, w, d.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let t = map(2, 2, &[1, 0, 1, 0]);
        assert_eq!(dice(&t, &t, 1).unwrap(), Some(1.0));

        let a = map(2, 2, &[1, 1, 0, 0]);
        let b = map(2, 2, &[0, 0, 1, 1]);
        assert_eq!(dice(&a, &b, 1).unwrap(), Some(0.0));

        let p = map(2, 2, &[1, 1, 0, 0]);
        let q = map(2, 2, &[1, 0, 1, 0]);
        assert_eq!(dice(&p, &q, 1).unwrap(), Some(0.5));

        let z = map(2, 2, &[0, 0, 0, 0]);
        assert_eq!(dice(&z, &z, 1).unwrap(), None);
    }

    #[test]
    fn dice_shape_mismatch() {
        let a = map(2, 2, &[0; 4]);
        let b = map(1, 4, &[0; 4]);
        assert!(matches!(dice(&a, &b, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn pooled_differs_from_per_image_mean() {
        // image 1: TP=1, FP=0, FN=0 -> 1.0; image 2: TP=1, FP=3, FN=0 -> 0.4
        let p1 = map(1, 4, &[1, 0, 0, 0]);
        let t1 = map(1, 4, &[1, 0, 0, 0]);
        let p2 = map(1, 4, &[1, 1, 1, 1]);
        let t2 = map(1, 4, &[1, 0, 0, 0]);
        let mean = (dice(&p1, &t1, 1).unwrap().unwrap() + dice(&p2, &t2, 1).unwrap().unwrap()) / 2.0;
        assert!((mean - 0.7).abs() < 1e-15);

        let mut c = ConfusionCounts::new(2);
        c.add(&p1.data, &t1.data).unwrap();
        c.add(&p2.data, &t2.data).unwrap();
        // pooled: TP=2, FP=3, FN=0 -> 4/7
        assert_eq!(c.dice(1), Some(4.0 / 7.0));
    }

    #[test]
    fn curves_are_sorted() {
        let rec = |epoch, class_id, dice| DiceRecord {
            task: Task::A,
            class_id,
            dice: Some(dice),
            scope: Scope::Patch,
            epoch,
        };
        let rows = aggregate_curves(&[rec(2, 1, 0.3), rec(0, 2, 0.1), rec(1, 1, 0.2), rec(0, 1, 0.0)]);
        let order: Vec<(u8, usize)> = rows.iter().map(|r| (r.class_id, r.epoch)).collect();
        assert_eq!(order, vec![(1, 0), (1, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let t = Tensor::new(vec![3, 2], vec![0.0, 1.0, 0.0, 5.0, 0.0, 5.0]).unwrap();
        assert_eq!(argmax_labels(&t), vec![0, 1]);
    }
}
