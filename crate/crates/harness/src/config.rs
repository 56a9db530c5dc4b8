//! Experiment configuration: `key = value` files plus `--key value` overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ewc_core::continual::FisherMode;
use ewc_core::synthtasks::{short_hash, SplitCounts};
use ewc_core::RegimeKind;

use crate::error::{HarnessError, Result};

pub const DEFAULT_LAMBDAS: [f64; 4] = [0.1, 1.0, 10.0, 100.0];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub regimes: Vec<RegimeKind>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Split manifest; generated from `master_seed` when absent.
    pub manifest: Option<PathBuf>,
    pub out: PathBuf,
    pub fisher_mode: FisherMode,
    pub master_seed: u64,
    pub split_factor: f64,
    pub trunk: Vec<usize>,
    /// Input side of a training patch.
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub eval_patches_per_image: usize,
    pub fisher_patches_per_image: usize,
    /// Output window of a Fisher sample; 1 makes every sample one pixel.
    pub fisher_window: usize,
    /// Output window of the tiles used for full-image evaluation.
    pub eval_window: usize,
    /// Task-A checkpoint for single sequential runs.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regimes: Vec::new(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            seeds: vec![1],
            epochs: 20,
            batch_size: 8,
            learning_rate: 0.015,
            momentum: 0.9,
            manifest: None,
            out: PathBuf::from("runs"),
            fisher_mode: FisherMode::Empirical,
            master_seed: 2018,
            split_factor: 0.25,
            trunk: vec![16, 16, 32],
            patch_size: 17,
            patches_per_image: 16,
            eval_patches_per_image: 4,
            fisher_patches_per_image: 64,
            fisher_window: 1,
            eval_window: 32,
            checkpoint: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "regime",
    "lambda",
    "seeds",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "manifest",
    "out",
    "fisher_mode",
    "master_seed",
    "split_factor",
    "trunk",
    "patch_size",
    "patches_per_image",
    "eval_patches_per_image",
    "fisher_patches_per_image",
    "fisher_window",
    "eval_window",
    "checkpoint",
];

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| HarnessError::config(key, format!("cannot parse `{}`: {e}", value.trim())))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_one(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

/// Normalises `--learning-rate` style keys to `learning_rate`.
pub fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        let path = |v: &str| {
            let v = v.trim();
            (!v.is_empty()).then(|| PathBuf::from(v))
        };
        match k {
            "regime" => self.regimes = parse_list(k, value)?,
            "lambda" => self.lambdas = parse_list(k, value)?,
            "seeds" | "seed" => self.seeds = parse_list(k, value)?,
            "epochs" => self.epochs = parse_one(k, value)?,
            "batch_size" => self.batch_size = parse_one(k, value)?,
            "learning_rate" => self.learning_rate = parse_one(k, value)?,
            "momentum" => self.momentum = parse_one(k, value)?,
            "manifest" => self.manifest = path(value),
            "out" => {
                self.out = path(value).ok_or_else(|| HarnessError::config(k, "empty path"))?
            }
            "fisher_mode" => self.fisher_mode = parse_one(k, value)?,
            "master_seed" => self.master_seed = parse_one(k, value)?,
            "split_factor" => self.split_factor = parse_one(k, value)?,
            "trunk" => self.trunk = parse_list(k, value)?,
            "patch_size" => self.patch_size = parse_one(k, value)?,
            "patches_per_image" => self.patches_per_image = parse_one(k, value)?,
            "eval_patches_per_image" => self.eval_patches_per_image = parse_one(k, value)?,
            "fisher_patches_per_image" => self.fisher_patches_per_image = parse_one(k, value)?,
            "fisher_window" => self.fisher_window = parse_one(k, value)?,
            "eval_window" => self.eval_window = parse_one(k, value)?,
            "checkpoint" => self.checkpoint = path(value),
            _ => return Err(HarnessError::config(k, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Does not validate.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::config(line, format!("line {} is not `key = value`", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// File (optional) then overrides, then validation.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |k: &str, m: &str| HarnessError::config(k, m);
        if self.regimes.is_empty() {
            return Err(err("regime", "required"));
        }
        if self.seeds.is_empty() {
            return Err(err("seeds", "at least one seed is required"));
        }
        if self.regimes.iter().any(|r| r.uses_lambda()) && self.lambdas.is_empty() {
            return Err(err("lambda", "l2 and ewc need at least one λ"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(err("lambda", &format!("{l} is not a finite non-negative number")));
        }
        for (key, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
            ("patches_per_image", self.patches_per_image),
            ("eval_patches_per_image", self.eval_patches_per_image),
            ("fisher_patches_per_image", self.fisher_patches_per_image),
            ("fisher_window", self.fisher_window),
            ("eval_window", self.eval_window),
        ] {
            if v == 0 {
                return Err(err(key, "must be positive"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(err("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(err("momentum", "must lie in [0, 1)"));
        }
        if !(self.split_factor > 0.0 && self.split_factor <= 1.0) {
            return Err(err("split_factor", "must lie in (0, 1]"));
        }
        if self.trunk.is_empty() || self.trunk.contains(&0) {
            return Err(err("trunk", "needs at least one non-empty layer"));
        }
        if self.patch_size <= 2 * self.trunk.len() {
            return Err(err(
                "patch_size",
                &format!("{} leaves no output for {} conv layers", self.patch_size, self.trunk.len()),
            ));
        }
        Ok(())
    }

    /// Output side of a training patch.
    pub fn window(&self) -> usize {
        self.patch_size - 2 * self.trunk.len()
    }

    pub fn split_counts(&self) -> SplitCounts {
        SplitCounts::scaled(self.split_factor)
    }

    /// Canonical text holding every key; `parse(dump())` reproduces `self`.
    pub fn dump(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("regime", join(&self.regimes));
        line("lambda", join(&self.lambdas));
        line("seeds", join(&self.seeds));
        line("epochs", self.epochs.to_string());
        line("batch_size", self.batch_size.to_string());
        line("learning_rate", self.learning_rate.to_string());
        line("momentum", self.momentum.to_string());
        line("manifest", opt(&self.manifest));
        line("out", self.out.display().to_string());
        line("fisher_mode", self.fisher_mode.to_string());
        line("master_seed", self.master_seed.to_string());
        line("split_factor", self.split_factor.to_string());
        line("trunk", join(&self.trunk));
        line("patch_size", self.patch_size.to_string());
        line("patches_per_image", self.patches_per_image.to_string());
        line("eval_patches_per_image", self.eval_patches_per_image.to_string());
        line("fisher_patches_per_image", self.fisher_patches_per_image.to_string());
        line("fisher_window", self.fisher_window.to_string());
        line("eval_window", self.eval_window.to_string());
        line("checkpoint", opt(&self.checkpoint));
        s
    }

    /// Hash of everything that influences a run's numbers except regime, λ,
    /// seed and output locations.
    pub fn config_hash(&self, data_hash: &str) -> String {
        let text = format!(
            "epochs={}\nbatch_size={}\nlearning_rate={:?}\nmomentum={:?}\nfisher_mode={}\n\
             trunk={}\npatch_size={}\npatches_per_image={}\neval_patches_per_image={}\n\
             fisher_patches_per_image={}\nfisher_window={}\neval_window={}\ndata={}\n",
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.momentum,
            self.fisher_mode,
            join(&self.trunk),
            self.patch_size,
            self.patches_per_image,
            self.eval_patches_per_image,
            self.fisher_patches_per_image,
            self.fisher_window,
            self.eval_window,
            data_hash,
        );
        short_hash(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_needs_regime() {
        let e = ExperimentConfig::parse("").unwrap_err();
        assert!(matches!(e, HarnessError::Config { ref key, .. } if key == "regime"));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn lambda_list() {
        let c = ExperimentConfig::parse("regime = l2\nlambda = 0.1, 1, 10\n").unwrap();
        assert_eq!(c.lambdas, vec![0.1, 1.0, 10.0]);
        assert_eq!(c.regimes, vec![RegimeKind::L2]);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_named() {
        let e = ExperimentConfig::parse("regime = ewc\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { ref key, .. } if key == "bogus"));
        let e = ExperimentConfig::parse("regime = ewc\nepochs = many\n").unwrap_err();
        assert!(matches!(e, HarnessError::Config { ref key, .. } if key == "epochs"));
    }

    #[test]
    fn overrides_win_and_dump_reparses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "regime = ewc, l2\nepochs = 5\n# comment\n").unwrap();
        let c = ExperimentConfig::load(
            Some(&path),
            &[("--epochs".into(), "7".into()), ("learning-rate".into(), "0.01".into())],
        )
        .unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.learning_rate, 0.01);
        let again = ExperimentConfig::parse(&c.dump()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.dump(), c.dump());
    }

    #[test]
    fn invariants() {
        assert!(ExperimentConfig::parse("regime = l2\nlambda =\n").is_err());
        assert!(ExperimentConfig::parse("regime = dm-a\nlambda =\n").is_ok());
        assert!(ExperimentConfig::parse("regime = dm-a\nmomentum = 1\n").is_err());
        assert!(ExperimentConfig::parse("regime = dm-a\nbatch_size = 0\n").is_err());
        assert!(ExperimentConfig::parse("regime = dm-a\nlambda = -1\n").is_err());
    }
}
