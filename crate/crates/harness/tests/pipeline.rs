use std::path::Path;
use std::process::Command;

use ewc_core::{build_regime, load_checkpoint, RegimeKind, Task};
use ewc_harness::experiment::{collect_records, run_dir};
use ewc_harness::{run_experiment, train, Dataset, ExperimentConfig, HarnessError};

const TINY: &str = "\
regime = dm-a, dm-b, multitask, finetune, l2, ewc
lambda = 0.5, 5
seeds = 3
epochs = 2
trunk = 4, 4
patch_size = 9
split_factor = 0.05
patches_per_image = 4
eval_patches_per_image = 2
fisher_patches_per_image = 4
eval_window = 16
";

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(TINY).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn sweep_is_reproducible_and_resumable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg_a = tiny(a.path());
    let first = run_experiment(&cfg_a, &Dataset::from_config(&cfg_a).unwrap()).unwrap();
    assert!(first.failures.is_empty(), "{:?}", first.failures);
    assert_eq!(first.records.len(), 3 + 2 * 2 + 1);
    // the dm-a cell is the shared task-A run
    assert_eq!(first.skipped, 1);

    let cfg_b = tiny(b.path());
    run_experiment(&cfg_b, &Dataset::from_config(&cfg_b).unwrap()).unwrap();
    for file in ["metrics.csv", "summary.csv", "summary.txt", "plots/l2.svg", "plots/ewc.svg"] {
        assert_eq!(read(&a.path().join(file)), read(&b.path().join(file)), "{file}");
    }

    // a second pass reuses every stored run
    let again = run_experiment(&cfg_a, &Dataset::from_config(&cfg_a).unwrap()).unwrap();
    assert_eq!(again.skipped, again.records.len() + 1);
    assert_eq!(read(&a.path().join("metrics.csv")), read(&b.path().join("metrics.csv")));
    assert_eq!(collect_records(a.path()).unwrap().len(), first.records.len());

    let header = String::from_utf8(read(&a.path().join("metrics.csv"))).unwrap();
    assert_eq!(header.lines().next().unwrap(), "run_id,regime,lambda,seed,epoch,scope,task,class,dice");
    assert!(!a.path().join("failures.txt").exists());
}

#[test]
fn sequential_runs_start_from_the_task_a_model_and_never_read_its_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let data = Dataset::from_config(&cfg).unwrap();
    let outcome = run_experiment(&cfg, &data).unwrap();
    let dm_a = outcome.prerequisite.as_ref().unwrap();
    let dm_a_last = dm_a.epochs.last().unwrap();
    let a_rows = |rows: &[ewc_harness::train::DiceRow]| -> Vec<(String, String, String, u64)> {
        rows.iter()
            .filter(|r| r.task == Task::A.id())
            .map(|r| (r.scope.clone(), r.task.clone(), r.class.clone(), r.dice.to_bits()))
            .collect()
    };
    for r in &outcome.records {
        let kind: RegimeKind = r.regime.parse().unwrap();
        let unregularized = !kind.uses_lambda() || r.lambda == 0.0;
        if unregularized {
            assert!(r.epochs.iter().all(|e| e.penalty == 0.0), "{}", r.regime);
        }
        if kind.is_sequential() {
            assert_eq!(r.splits_read, vec!["train_b".to_string(), "validation".to_string()]);
            // epoch 0 is the task-A model, evaluated exactly as at the end of its own run
            assert_eq!(a_rows(&r.epochs[0].dice), a_rows(&dm_a_last.dice), "{}", r.regime);
        } else {
            assert!(r.splits_read.contains(&"validation".to_string()));
        }
    }
    let fisher_ckpt = load_checkpoint(&run_dir(&cfg.out, &dm_a.run_id).join("final.ckpt")).unwrap();
    assert!(fisher_ckpt.fisher.is_some());
}

#[test]
fn ewc_without_fisher_is_a_prerequisite_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let data = Dataset::from_config(&cfg).unwrap();
    let plan = build_regime(RegimeKind::DmA, 0.0, None).unwrap();
    train(&plan, &cfg, &data, 1, Some(&dir.path().join("a"))).unwrap();
    let err = build_regime(RegimeKind::Ewc, 1.0, Some(&dir.path().join("a/final.ckpt"))).unwrap_err();
    assert_eq!(HarnessError::from(err).exit_code(), 3);
}

#[test]
fn diverging_run_is_recorded_and_the_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.regimes = vec![RegimeKind::DmB, RegimeKind::DmA];
    cfg.learning_rate = 1e300;
    let outcome = run_experiment(&cfg, &Dataset::from_config(&cfg).unwrap()).unwrap();
    // one run blows up; the other ends with dead units but finite loss
    assert_eq!(outcome.failures.len(), 1, "{:?}", outcome.failures);
    assert_eq!(outcome.records.len(), 1);
    assert_eq!(outcome.records[0].regime, "dm-a");
    assert!(outcome.failures[0].run.starts_with("dm-b"), "{:?}", outcome.failures);
    assert_eq!(outcome.exit_code(), 4);
    let text = std::fs::read_to_string(dir.path().join("failures.txt")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("exit=4"));
}

fn ewclab(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ewclab"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg_path = dir.path().join("tiny.cfg");
    std::fs::write(&cfg_path, TINY).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let (code, text) = ewclab(&["run-experiment", "--config", cfg, "--out", out, "--learning-rat", "0.1"]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("learning_rat"), "{text}");

    let (code, _) = ewclab(&["run-experiment", "--out", out]);
    assert_eq!(code, 2);

    let (code, text) = ewclab(&["train", "--config", cfg, "--out", out, "--regime", "dm-a", "--seed", "4"]);
    assert_eq!(code, 0, "{text}");
    let ckpt = std::fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path()
        .join("final.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let (code, text) = ewclab(&["train", "--config", cfg, "--out", out, "--regime", "ewc", "--checkpoint", ckpt]);
    assert_eq!(code, 3, "{text}");

    let (code, text) = ewclab(&["fisher", "--config", cfg, "--out", out, "--checkpoint", ckpt]);
    assert_eq!(code, 0, "{text}");
    let (code, text) = ewclab(&["train", "--config", cfg, "--out", out, "--regime", "ewc", "--checkpoint", ckpt]);
    assert_eq!(code, 0, "{text}");

    let (code, text) = ewclab(&["evaluate", "--config", cfg, "--checkpoint", ckpt]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("task A WM"), "{text}");

    let (code, text) = ewclab(&["train", "--config", cfg, "--out", out, "--regime", "dm-b", "--learning-rate", "1e300"]);
    assert_eq!(code, 4, "{text}");

    let (code, text) = ewclab(&["report", "--out", out]);
    assert_eq!(code, 0, "{text}");
    assert!(dir.path().join("summary.csv").exists());
    let (code, _) = ewclab(&["plot", "--out", out]);
    assert_eq!(code, 0);
}
