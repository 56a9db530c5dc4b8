//! Lazily generated splits with an access log.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use ewc_core::synthtasks::{
    extract_patch, make_splits, read_samples, sample_windows, LabeledPatch, SplitManifest,
};
use ewc_core::{generate_sample, GeneratorConfig, ScanSample, Split, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

const SPLITS: [Split; 3] = [Split::TrainA, Split::TrainB, Split::Validation];

fn split_index(split: Split) -> usize {
    match split {
        Split::TrainA => 0,
        Split::TrainB => 1,
        Split::Validation => 2,
    }
}

/// Task, patches per image, window, margin.
type PatchKey = (Task, usize, usize, usize);

/// The cases of one manifest, generated on first access.
///
/// Every split request is logged so tests can check which data a run touched.
#[derive(Debug)]
pub struct Dataset {
    manifest: SplitManifest,
    generator: GeneratorConfig,
    samples: [OnceLock<Vec<ScanSample>>; 3],
    val_patches: Mutex<HashMap<PatchKey, Arc<Vec<LabeledPatch>>>>,
    accessed: Mutex<BTreeSet<Split>>,
}

impl Dataset {
    pub fn new(mut manifest: SplitManifest, generator: GeneratorConfig) -> Result<Self> {
        generator.validate()?;
        manifest.config_hash = generator.hash();
        Ok(Self {
            manifest,
            generator,
            samples: Default::default(),
            val_patches: Default::default(),
            accessed: Mutex::new(BTreeSet::new()),
        })
    }

    /// The manifest named in the config, or fresh splits from its master seed.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let manifest = match &cfg.manifest {
            Some(path) => SplitManifest::load(path)?,
            None => make_splits(cfg.split_counts(), cfg.master_seed)?,
        };
        Self::new(manifest, GeneratorConfig::default())
    }

    /// Uses pre-generated samples instead of regenerating them.
    pub fn with_samples(self, split: Split, path: &Path) -> Result<Self> {
        let samples = read_samples(path)?;
        let seeds: Vec<u64> = samples.iter().map(|s| s.seed).collect();
        if seeds != self.manifest.seeds(split) {
            return Err(HarnessError::Prerequisite(format!(
                "{} does not hold the {split} cases of the manifest",
                path.display()
            )));
        }
        let _ = self.samples[split_index(split)].set(samples);
        Ok(self)
    }

    pub fn manifest(&self) -> &SplitManifest {
        &self.manifest
    }

    pub fn generator(&self) -> &GeneratorConfig {
        &self.generator
    }

    /// Identifies the cases: manifest seeds plus generator settings.
    pub fn hash(&self) -> String {
        ewc_core::synthtasks::short_hash(self.manifest.to_text().as_bytes())
    }

    pub fn split(&self, split: Split) -> Result<&[ScanSample]> {
        self.accessed.lock().expect("access log").insert(split);
        let cell = &self.samples[split_index(split)];
        if let Some(s) = cell.get() {
            return Ok(s);
        }
        let generated = self
            .manifest
            .seeds(split)
            .iter()
            .map(|&seed| generate_sample(seed, &self.generator))
            .collect::<ewc_core::Result<Vec<_>>>()?;
        Ok(cell.get_or_init(|| generated))
    }

    /// Splits requested so far.
    pub fn accessed(&self) -> Vec<Split> {
        self.accessed.lock().expect("access log").iter().copied().collect()
    }

    pub fn clear_access_log(&self) {
        self.accessed.lock().expect("access log").clear();
    }

    /// Fixed validation patches of `task`, identical for every run.
    pub fn validation_patches(
        &self,
        task: Task,
        per_image: usize,
        window: usize,
        margin: usize,
    ) -> Result<Arc<Vec<LabeledPatch>>> {
        let samples = self.split(Split::Validation)?;
        let key = (task, per_image, window, margin);
        let mut cache = self.val_patches.lock().expect("patch cache");
        if let Some(p) = cache.get(&key) {
            return Ok(Arc::clone(p));
        }
        let seed = self.manifest.master_seed ^ 0x5641_4C00 ^ task_index(task) as u64;
        let patches = Arc::new(patches_from(samples, task, per_image, window, margin, seed)?);
        cache.insert(key, Arc::clone(&patches));
        Ok(patches)
    }

    pub fn all_splits() -> [Split; 3] {
        SPLITS
    }
}

fn task_index(task: Task) -> usize {
    match task {
        Task::A => 0,
        Task::B => 1,
    }
}

/// `per_image` patches from every sample, windows drawn from one RNG.
pub fn patches_from(
    samples: &[ScanSample],
    task: Task,
    per_image: usize,
    window: usize,
    margin: usize,
    seed: u64,
) -> Result<Vec<LabeledPatch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples.len() * per_image);
    for s in samples {
        for (y0, x0) in sample_windows(s, task, per_image, window, &mut rng) {
            out.push(extract_patch(s, task, y0, x0, window, margin)?);
        }
    }
    Ok(out)
}
