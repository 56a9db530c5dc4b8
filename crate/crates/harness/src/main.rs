use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ewc_core::metrics::{evaluate_model, EvalSet};
use ewc_core::synthtasks::{channel_pgm, labels_pgm, write_samples};
use ewc_core::{build_regime, load_checkpoint, save_checkpoint, Split, Task};
use ewc_harness::config::normalize_key;
use ewc_harness::experiment::{
    collect_records, run_dir, save_record, task_a_fisher, write_outputs,
};
use ewc_harness::plot::write_plots;
use ewc_harness::report::{summary_rows, summary_text};
use ewc_harness::{run_experiment, train, Dataset, ExperimentConfig, HarnessError, Result};

/// Continual-learning lab: synthetic two-task segmentation with EWC.
#[derive(Parser)]
#[command(name = "ewclab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic splits and write them under --out.
    GenerateData {
        /// Also write PGM images of every case.
        #[arg(long)]
        pgm: bool,
        #[command(flatten)]
        args: Overrides,
    },
    /// Train one run: first regime, first λ and first seed of the config.
    Train(Overrides),
    /// Estimate the task-A Fisher of --checkpoint and embed it.
    Fisher(Overrides),
    /// Evaluate --checkpoint on the validation images.
    Evaluate(Overrides),
    /// Run the full regime × λ × seed sweep.
    RunExperiment(Overrides),
    /// Redraw the plots from the records under --out.
    Plot(Overrides),
    /// Rewrite metrics and the summary table from the records under --out.
    Report(Overrides),
}

/// `--config PATH`, `--out DIR`, `--seed N` and `--key value` for any config key.
#[derive(clap::Args)]
struct Overrides {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    raw: Vec<String>,
}

impl Overrides {
    fn load(&self, require_regime: bool) -> Result<ExperimentConfig> {
        let mut path = None;
        let mut pairs = Vec::new();
        let mut it = self.raw.iter();
        while let Some(flag) = it.next() {
            if !flag.starts_with("--") {
                return Err(HarnessError::config(flag.as_str(), "expected `--key value`"));
            }
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (normalize_key(k), v.to_string()),
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| HarnessError::config(normalize_key(flag), "missing value"))?;
                    (normalize_key(flag), v.clone())
                }
            };
            if key == "config" {
                path = Some(PathBuf::from(value));
            } else {
                pairs.push((key, value));
            }
        }
        if !require_regime && !pairs.iter().any(|(k, _)| k == "regime") {
            pairs.insert(0, ("regime".into(), "dm-a".into()));
        }
        ExperimentConfig::load(path.as_deref(), &pairs)
    }
}

fn checkpoint_arg(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.checkpoint
        .clone()
        .ok_or_else(|| HarnessError::config("checkpoint", "required by this command"))
}

fn generate_data(cfg: &ExperimentConfig, pgm: bool) -> Result<()> {
    let data = Dataset::from_config(cfg)?;
    let out = &cfg.out;
    data.manifest()
        .save(&out.join("manifest.txt"))
        .map_err(HarnessError::from)?;
    for split in Dataset::all_splits() {
        let samples = data.split(split)?;
        write_samples(&out.join(format!("{split}.bin")), samples)?;
        if pgm {
            let dir = out.join("images").join(split.as_str());
            std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            for s in samples {
                let files = [
                    (format!("{}_t1.pgm", s.seed), channel_pgm(s, 0)),
                    (format!("{}_flair.pgm", s.seed), channel_pgm(s, 1)),
                    (format!("{}_taskA.pgm", s.seed), labels_pgm(s.labels(Task::A), 4)),
                    (format!("{}_taskB.pgm", s.seed), labels_pgm(s.labels(Task::B), 2)),
                ];
                for (name, bytes) in files {
                    let p = dir.join(name);
                    std::fs::write(&p, bytes).map_err(|e| HarnessError::io(&p, e))?;
                }
            }
        }
        println!("{split}: {} cases", samples.len());
    }
    Ok(())
}

fn train_one(cfg: &ExperimentConfig) -> Result<()> {
    let data = Dataset::from_config(cfg)?;
    let regime = cfg.regimes[0];
    let lambda = if regime.uses_lambda() { cfg.lambdas[0] } else { 0.0 };
    let seed = cfg.seeds[0];
    let plan = build_regime(regime, lambda, cfg.checkpoint.as_deref())?;
    let id = ewc_harness::train::run_id(regime.as_str(), plan.lambda, seed, &cfg.config_hash(&data.hash()));
    let dir = run_dir(&cfg.out, &id);
    let (record, _) = train(&plan, cfg, &data, seed, Some(&dir))?;
    save_record(&record, &dir.join("record.json"))?;
    print!("{}", summary_text(&summary_rows(std::slice::from_ref(&record))));
    println!("run {id} written to {}", dir.display());
    Ok(())
}

fn fisher(cfg: &ExperimentConfig) -> Result<()> {
    let path = checkpoint_arg(cfg)?;
    let mut ckpt = load_checkpoint(&path)?;
    let net = ckpt.network()?;
    let data = Dataset::from_config(cfg)?;
    let f = task_a_fisher(&net, cfg, &data, cfg.seeds[0], cfg.fisher_mode)?;
    let (sum, max) = f
        .values()
        .iter()
        .fold((0.0, 0.0f64), |(s, m), &v| (s + v, m.max(v)));
    println!("fisher: {} entries, mean {:.3e}, max {:.3e}", f.len(), sum / f.len() as f64, max);
    ckpt.fisher = Some(f);
    save_checkpoint(&ckpt, &path)?;
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let path = checkpoint_arg(cfg)?;
    let net = load_checkpoint(&path)?.network()?;
    let data = Dataset::from_config(cfg)?;
    let samples = data.split(Split::Validation)?;
    for task in [Task::A, Task::B] {
        if !net.has_head(task.head()) {
            continue;
        }
        let set = EvalSet::Full {
            samples,
            window: cfg.eval_window,
        };
        for r in evaluate_model(&net, task, set, 0)? {
            println!(
                "task {} {:<4} {}",
                task.id(),
                r.class_name(),
                r.dice.map_or("-".into(), |d| format!("{:.1}", 100.0 * d))
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenerateData { pgm, args } => generate_data(&args.load(false)?, pgm)?,
        Command::Train(a) => train_one(&a.load(true)?)?,
        Command::Fisher(a) => fisher(&a.load(false)?)?,
        Command::Evaluate(a) => evaluate(&a.load(false)?)?,
        Command::RunExperiment(a) => {
            let cfg = a.load(true)?;
            let data = Dataset::from_config(&cfg)?;
            let outcome = run_experiment(&cfg, &data)?;
            println!(
                "{} runs ({} reused), {} failures",
                outcome.records.len(),
                outcome.skipped,
                outcome.failures.len()
            );
            print!("{}", summary_text(&summary_rows(&outcome.records)));
            for f in &outcome.failures {
                eprintln!("failed: {}: {}", f.run, f.message);
            }
            return Ok(outcome.exit_code());
        }
        Command::Plot(a) => {
            let cfg = a.load(false)?;
            let records = collect_records(&cfg.out)?;
            for p in write_plots(&cfg.out.join("plots"), &records)? {
                println!("{}", p.display());
            }
        }
        Command::Report(a) => {
            let cfg = a.load(false)?;
            let records = collect_records(&cfg.out)?;
            write_outputs(&cfg.out, &records)?;
            print!("{}", summary_text(&summary_rows(&records)));
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
