//! SVG learning curves: one panel per class, one line per λ.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ewc_core::Task;

use crate::error::Result;
use crate::experiment::write_file;
use crate::report::summary_columns;
use crate::train::RunRecord;

const PANEL_W: f64 = 240.0;
const PANEL_H: f64 = 180.0;
const PAD_L: f64 = 48.0;
const PAD_R: f64 = 12.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 40.0;
const COLORS: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// Seed-averaged patch-scope curve of one class for one λ.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub lambda: f64,
    pub task: Task,
    pub class: &'static str,
    /// `(epoch, DSC%)`, ascending epochs.
    pub points: Vec<(usize, f64)>,
}

/// Curves of `regime`, sorted by class column then ascending λ.
pub fn curves_for(records: &[RunRecord], regime: &str) -> Vec<Curve> {
    let mut lambdas: Vec<f64> = records
        .iter()
        .filter(|r| r.regime == regime)
        .map(|r| r.lambda)
        .collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup_by(|a, b| a.to_bits() == b.to_bits());

    let mut out = Vec::new();
    for (task, class) in summary_columns() {
        for &lambda in &lambdas {
            let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for r in records
                .iter()
                .filter(|r| r.regime == regime && r.lambda.to_bits() == lambda.to_bits())
            {
                for e in &r.epochs {
                    for d in &e.dice {
                        if d.scope == "patch" && d.task == task.id() && d.class == class {
                            let slot = acc.entry(e.epoch).or_insert((0.0, 0));
                            slot.0 += d.dice;
                            slot.1 += 1;
                        }
                    }
                }
            }
            if acc.is_empty() {
                continue;
            }
            out.push(Curve {
                lambda,
                task,
                class,
                points: acc
                    .into_iter()
                    .map(|(e, (s, n))| (e, 100.0 * s / n as f64))
                    .collect(),
            });
        }
    }
    out
}

/// Renders a row of panels, one per class, in a fixed order.
pub fn render_svg(title: &str, curves: &[Curve]) -> String {
    let columns: Vec<(Task, &str)> = summary_columns()
        .into_iter()
        .filter(|(t, c)| curves.iter().any(|cv| cv.task == *t && cv.class == *c))
        .collect();
    let mut lambdas: Vec<f64> = curves.iter().map(|c| c.lambda).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let max_epoch = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1);

    let width = PANEL_W * columns.len().max(1) as f64 + 120.0;
    let height = PANEL_H + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="8" y="16" font-size="14">{title}</text>"#);

    for (i, (task, class)) in columns.iter().enumerate() {
        let x0 = i as f64 * PANEL_W;
        let (left, right) = (x0 + PAD_L, x0 + PANEL_W - PAD_R);
        let (top, bottom) = (PAD_T, PANEL_H - PAD_B + 30.0);
        let px = |e: usize| left + (right - left) * e as f64 / max_epoch as f64;
        let py = |d: f64| bottom - (bottom - top) * d / 100.0;

        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">task {} {}</text>"#,
            (left + right) / 2.0,
            top - 8.0,
            task.id(),
            class
        );
        let _ = writeln!(
            s,
            r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            right - left,
            bottom - top
        );
        for tick in [0.0, 25.0, 50.0, 75.0, 100.0] {
            let y = py(tick);
            let _ = writeln!(
                s,
                r##"<line x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{tick:.0}</text>"##,
                left - 4.0,
                y + 4.0
            );
        }
        let step = (max_epoch / 5).max(1);
        for e in (0..=max_epoch).step_by(step) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{e}</text>"#,
                px(e),
                bottom + 14.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
            (left + right) / 2.0,
            bottom + 28.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">DSC%</text>"#,
            x0 + 14.0,
            (top + bottom) / 2.0,
            x0 + 14.0,
            (top + bottom) / 2.0
        );
        for c in curves.iter().filter(|c| c.task == *task && c.class == *class) {
            let li = lambdas.iter().position(|l| l.to_bits() == c.lambda.to_bits()).unwrap_or(0);
            let pts: Vec<String> = c
                .points
                .iter()
                .map(|&(e, d)| format!("{:.2},{:.2}", px(e), py(d)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                COLORS[li % COLORS.len()],
                pts.join(" ")
            );
        }
    }

    let lx = PANEL_W * columns.len().max(1) as f64 + 10.0;
    for (i, l) in lambdas.iter().enumerate() {
        let y = PAD_T + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">λ={l}</text>"#,
            lx + 20.0,
            COLORS[i % COLORS.len()],
            lx + 26.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `l2.svg` and `ewc.svg` for whichever regularizers have runs.
pub fn write_plots(dir: &Path, records: &[RunRecord]) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for (regime, title) in [("l2", "L2"), ("ewc", "EWC")] {
        let curves = curves_for(records, regime);
        if curves.is_empty() {
            continue;
        }
        let path = dir.join(format!("{regime}.svg"));
        write_file(&path, render_svg(title, &curves).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
