//! Metrics CSV and the final-DSC summary table.

use std::fmt::Write as _;

use ewc_core::{RegimeKind, Task};

use crate::train::RunRecord;

pub const METRICS_HEADER: &str = "run_id,regime,lambda,seed,epoch,scope,task,class,dice";

/// Long-format metrics, one row per (run, epoch, scope, task, class).
pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        for e in &r.epochs {
            for d in &e.dice {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{}",
                    r.run_id, r.regime, r.lambda, r.seed, e.epoch, d.scope, d.task, d.class, d.dice
                );
            }
        }
    }
    s
}

/// Summary columns: task-A classes, then the task-B class.
pub fn summary_columns() -> Vec<(Task, &'static str)> {
    [Task::A, Task::B]
        .into_iter()
        .flat_map(|t| t.reported_classes().map(move |c| (t, t.class_names()[c as usize])))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub regime: String,
    pub lambda: f64,
    pub seeds: usize,
    /// Mean final full-image Dice per column; `None` for untrained tasks.
    pub values: Vec<Option<f64>>,
}

fn method_name(regime: &str, lambda: f64) -> String {
    match regime {
        "dm-a" => "DM-A".into(),
        "dm-b" => "DM-B".into(),
        "multitask" => "Multi-task".into(),
        "finetune" => "Fine-tune".into(),
        "l2" => format!("L2 λ={lambda}"),
        "ewc" => format!("EWC λ={lambda}"),
        other => format!("{other} λ={lambda}"),
    }
}

fn regime_rank(regime: &str) -> usize {
    RegimeKind::ALL
        .iter()
        .position(|k| k.as_str() == regime)
        .unwrap_or(RegimeKind::ALL.len())
}

/// One row per (regime, λ), finals averaged over seeds.
pub fn summary_rows(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(String, f64, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match groups
            .iter_mut()
            .find(|(g, l, _)| *g == r.regime && l.to_bits() == r.lambda.to_bits())
        {
            Some((_, _, v)) => v.push(r),
            None => groups.push((r.regime.clone(), r.lambda, vec![r])),
        }
    }
    groups.sort_by(|a, b| {
        regime_rank(&a.0)
            .cmp(&regime_rank(&b.0))
            .then(a.1.total_cmp(&b.1))
    });
    let columns = summary_columns();
    groups
        .into_iter()
        .map(|(regime, lambda, runs)| {
            let values = columns
                .iter()
                .map(|(task, class)| {
                    let vals: Vec<f64> = runs
                        .iter()
                        .filter_map(|r| r.final_dice_of(task.id(), class))
                        .collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            SummaryRow {
                method: method_name(&regime, lambda),
                regime,
                lambda,
                seeds: runs.len(),
                values,
            }
        })
        .collect()
}

/// DSC% to one decimal, `-` when missing.
pub fn format_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |d| format!("{:.1}", 100.0 * d))
}

fn header() -> Vec<String> {
    let mut h = vec!["method".to_string()];
    h.extend(summary_columns().into_iter().map(|(_, c)| c.to_string()));
    h
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = header().join(",");
    s.push('\n');
    for r in rows {
        let mut cells = vec![r.method.clone()];
        cells.extend(r.values.iter().map(|v| format_cell(*v)));
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Aligned plain-text table.
pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut table = vec![header()];
    for r in rows {
        let mut cells = vec![r.method.clone()];
        cells.extend(r.values.iter().map(|v| format_cell(*v)));
        table.push(cells);
    }
    let ncol = table[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for (i, row) in table.iter().enumerate() {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        s.push_str(line.trim_end());
        s.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (ncol - 1);
            s.push_str(&"-".repeat(total));
            s.push('\n');
        }
    }
    s
}
