//! Sweeps over regimes × λ × seeds with a shared task-A prerequisite.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ewc_core::continual::FisherMode;
use ewc_core::{build_regime, estimate_fisher, load_checkpoint, save_checkpoint, RegimeKind, SegNet, Split, Task};

use crate::config::ExperimentConfig;
use crate::data::{patches_from, Dataset};
use crate::error::{HarnessError, Result};
use crate::plot::write_plots;
use crate::report::{metrics_csv, summary_csv, summary_rows, summary_text};
use crate::train::{mix, run_id, train, RunRecord};

/// One cell of the sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunSpec {
    pub regime: RegimeKind,
    pub lambda: f64,
    pub seed: u64,
}

/// Cross product in config order; regimes without λ get one run per seed.
pub fn plan_runs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for &regime in &cfg.regimes {
        let lambdas = if regime.uses_lambda() {
            cfg.lambdas.clone()
        } else {
            vec![0.0]
        };
        for &lambda in &lambdas {
            for &seed in &cfg.seeds {
                out.push(RunSpec { regime, lambda, seed });
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Failure {
    pub run: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Default)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    /// The shared task-A run, when a sequential regime was requested.
    pub prerequisite: Option<RunRecord>,
    pub failures: Vec<Failure>,
    /// Runs loaded from disk instead of trained.
    pub skipped: usize,
}

impl ExperimentOutcome {
    /// Exit code of the first failure, 0 when every run succeeded.
    pub fn exit_code(&self) -> i32 {
        self.failures.first().map_or(0, |f| f.exit_code)
    }
}

pub fn run_dir(out: &Path, id: &str) -> PathBuf {
    out.join("runs").join(id)
}

fn record_path(dir: &Path) -> PathBuf {
    dir.join("record.json")
}

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Record {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn save_record(record: &RunRecord, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(record).expect("records serialize");
    write_file(path, text.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Fisher of the task-A head over `fisher_patches_per_image` samples per
/// task-A training case, each with a `fisher_window` output window.
pub fn task_a_fisher(
    net: &SegNet,
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    mode: FisherMode,
) -> Result<ewc_core::FisherDiagonal> {
    let margin = net.spec().margin();
    let samples = data.split(Split::TrainA)?;
    let patches = patches_from(
        samples,
        Task::A,
        cfg.fisher_patches_per_image,
        cfg.fisher_window,
        margin,
        mix(seed ^ 0xF15E),
    )?;
    Ok(estimate_fisher(
        net,
        &patches,
        Task::A.head(),
        mode,
        mix(seed ^ 0xF1),
        Split::TrainA.as_str(),
    )?)
}

/// Trains (or loads) one run and persists its record.
fn execute(
    spec: RunSpec,
    cfg: &ExperimentConfig,
    data: &Dataset,
    dm_a: Option<&Path>,
    skipped: &mut usize,
) -> Result<RunRecord> {
    let hash = cfg.config_hash(&data.hash());
    let lambda = if spec.regime.uses_lambda() { spec.lambda } else { 0.0 };
    let id = run_id(spec.regime.as_str(), lambda, spec.seed, &hash);
    let dir = run_dir(&cfg.out, &id);
    let rec_path = record_path(&dir);
    if rec_path.exists() {
        *skipped += 1;
        return load_record(&rec_path);
    }
    let plan = build_regime(spec.regime, lambda, dm_a)?;
    let (record, _) = train(&plan, cfg, data, spec.seed, Some(&dir))?;
    save_record(&record, &rec_path)?;
    Ok(record)
}

/// Runs the shared task-A prerequisite and embeds its Fisher in the final
/// checkpoint. Returns the record and the checkpoint path.
fn prerequisite(
    cfg: &ExperimentConfig,
    data: &Dataset,
    skipped: &mut usize,
) -> Result<(RunRecord, PathBuf)> {
    let seed = cfg.seeds[0];
    let spec = RunSpec {
        regime: RegimeKind::DmA,
        lambda: 0.0,
        seed,
    };
    let record = execute(spec, cfg, data, None, skipped)?;
    let path = run_dir(&cfg.out, &record.run_id).join("final.ckpt");
    let mut ckpt = load_checkpoint(&path)?;
    if ckpt.fisher.is_none() {
        let net = ckpt.network()?;
        ckpt.fisher = Some(task_a_fisher(&net, cfg, data, seed, cfg.fisher_mode)?);
        save_checkpoint(&ckpt, &path)?;
    }
    Ok((record, path))
}

/// Executes the sweep and writes every artifact under `cfg.out`.
///
/// A failing run is recorded in `failures.txt` and does not stop the sweep.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::io(&cfg.out, e))?;
    write_file(&cfg.out.join("config.txt"), cfg.dump().as_bytes())?;
    write_file(&cfg.out.join("manifest.txt"), data.manifest().to_text().as_bytes())?;

    let mut outcome = ExperimentOutcome::default();
    let runs = plan_runs(cfg);
    let mut dm_a_path = None;
    if runs.iter().any(|r| r.regime.is_sequential()) {
        match prerequisite(cfg, data, &mut outcome.skipped) {
            Ok((record, path)) => {
                outcome.prerequisite = Some(record);
                dm_a_path = Some(path);
            }
            Err(e) => outcome.failures.push(Failure {
                run: format!("dm-a prerequisite seed={}", cfg.seeds[0]),
                message: e.to_string(),
                exit_code: e.exit_code(),
            }),
        }
    }

    for spec in runs {
        let label = format!("{} λ={} seed={}", spec.regime, spec.lambda, spec.seed);
        let dm_a = if spec.regime.is_sequential() {
            match &dm_a_path {
                Some(p) => Some(p.as_path()),
                None => {
                    let e = HarnessError::Prerequisite("task-A prerequisite run failed".into());
                    outcome.failures.push(Failure {
                        run: label,
                        message: e.to_string(),
                        exit_code: e.exit_code(),
                    });
                    continue;
                }
            }
        } else {
            None
        };
        log::info!("run {label}");
        match execute(spec, cfg, data, dm_a, &mut outcome.skipped) {
            Ok(r) => outcome.records.push(r),
            Err(e) => {
                log::warn!("run {label} failed: {e}");
                outcome.failures.push(Failure {
                    run: label,
                    message: e.to_string(),
                    exit_code: e.exit_code(),
                })
            }
        }
    }

    write_outputs(&cfg.out, &outcome.records)?;
    let failures_path = cfg.out.join("failures.txt");
    if outcome.failures.is_empty() {
        if failures_path.exists() {
            std::fs::remove_file(&failures_path).map_err(|e| HarnessError::io(&failures_path, e))?;
        }
    } else {
        let mut text = String::new();
        for f in &outcome.failures {
            let _ = writeln!(text, "{}\texit={}\t{}", f.run, f.exit_code, f.message);
        }
        write_file(&failures_path, text.as_bytes())?;
    }
    Ok(outcome)
}

/// Metrics CSV, summary table and plots for `records`.
pub fn write_outputs(out: &Path, records: &[RunRecord]) -> Result<()> {
    write_file(&out.join("metrics.csv"), metrics_csv(records).as_bytes())?;
    let rows = summary_rows(records);
    write_file(&out.join("summary.txt"), summary_text(&rows).as_bytes())?;
    write_file(&out.join("summary.csv"), summary_csv(&rows).as_bytes())?;
    write_plots(&out.join("plots"), records)?;
    Ok(())
}

/// Every record stored under `out/runs`, ordered by file name.
pub fn collect_records(out: &Path) -> Result<Vec<RunRecord>> {
    let dir = out.join("runs");
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .map(|e| record_path(&e.path()))
            .filter(|p| p.exists())
            .collect(),
        Err(e) => return Err(HarnessError::io(dir, e)),
    };
    paths.sort();
    paths.iter().map(|p| load_record(p)).collect()
}
