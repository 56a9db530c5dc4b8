//! Synthetic two-channel phantoms with paired segmentation tasks.
//!
//! Each phantom is a set of nested, perturbed ellipses (CSF ⊃ GM ⊃ WM
//! analogues) with small lesions placed inside the innermost region. Task A
//! labels the three tissues, task B labels the lesions. Channel 0 separates
//! the tissues; lesions are hyperintense only in channel 1.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BACKGROUND: u8 = 0;
pub const CSF: u8 = 1;
pub const GM: u8 = 2;
pub const WM: u8 = 3;
pub const LESION: u8 = 1;

/// The two segmentation tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Tissue segmentation: background, CSF, GM, WM.
    A,
    /// Lesion segmentation: background, lesion.
    B,
}

impl Task {
    pub fn head(self) -> &'static str {
        match self {
            Task::A => "taskA",
            Task::B => "taskB",
        }
    }

    /// Short id used in tables and CSV files.
    pub fn id(self) -> &'static str {
        match self {
            Task::A => "A",
            Task::B => "B",
        }
    }

    pub fn classes(self) -> usize {
        self.class_names().len()
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::A => &["background", "CSF", "GM", "WM"],
            Task::B => &["background", "WML"],
        }
    }

    /// Classes reported in evaluations (background excluded).
    pub fn reported_classes(self) -> std::ops::Range<u8> {
        1..self.classes() as u8
    }

    pub fn train_split(self) -> Split {
        match self {
            Task::A => Split::TrainA,
            Task::B => Split::TrainB,
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" | "taskA" => Ok(Task::A),
            "B" | "b" | "taskB" => Ok(Task::B),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Dataset splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    TrainA,
    TrainB,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainA => "train_a",
            Split::TrainB => "train_b",
            Split::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A 2-D map of class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "label map {height}×{width} needs {} labels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Copy of the `h×w` window whose top-left corner is `(y0, x0)`.
    pub fn window(&self, y0: usize, x0: usize, h: usize, w: usize) -> LabelMap {
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        LabelMap {
            height: h,
            width: w,
            data,
        }
    }
}

/// Phantom generator settings. Radii are in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub size: usize,
    pub csf_radius: (f64, f64),
    pub gm_radius: (f64, f64),
    pub wm_radius: (f64, f64),
    pub center_jitter: f64,
    pub aspect_range: (f64, f64),
    /// Relative amplitude of the angular boundary perturbation, in `[0, 1)`.
    pub perturbation: f64,
    /// Channel-0 means for background, CSF, GM, WM.
    pub t1_means: [f64; 4],
    /// Channel-1 means for background, CSF, GM, WM.
    pub flair_means: [f64; 4],
    pub lesion_t1: f64,
    pub lesion_flair: f64,
    pub noise_std: f64,
    /// Inclusive range of the number of lesions.
    pub lesion_count: (usize, usize),
    pub lesion_radius: (f64, f64),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            size: 64,
            csf_radius: (23.0, 27.0),
            gm_radius: (16.0, 21.0),
            wm_radius: (9.0, 14.0),
            center_jitter: 3.0,
            aspect_range: (0.85, 1.15),
            perturbation: 0.08,
            t1_means: [0.0, 0.2, 0.5, 0.8],
            flair_means: [0.0, 0.15, 0.55, 0.4],
            lesion_t1: 0.75,
            lesion_flair: 0.9,
            noise_std: 0.08,
            lesion_count: (1, 3),
            lesion_radius: (2.0, 3.5),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        for (name, r) in [
            ("csf_radius", self.csf_radius),
            ("gm_radius", self.gm_radius),
            ("wm_radius", self.wm_radius),
            ("aspect_range", self.aspect_range),
            ("lesion_radius", self.lesion_radius),
        ] {
            if !range_ok(r) {
                return Err(Error::Config(format!("{name} {r:?} is not a positive range")));
            }
        }
        if !(self.wm_radius.1 < self.gm_radius.0 && self.gm_radius.1 < self.csf_radius.0) {
            return Err(Error::Config(
                "radius ranges must be strictly nested: wm < gm < csf".into(),
            ));
        }
        if self.size < 8 {
            return Err(Error::Config("image size must be at least 8".into()));
        }
        if !(0.0..1.0).contains(&self.perturbation) {
            return Err(Error::Config("perturbation must lie in [0, 1)".into()));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be positive".into()));
        }
        if self.lesion_radius.0 < 1.0 {
            return Err(Error::Config("lesion radius must be at least one pixel".into()));
        }
        if self.lesion_count.0 > self.lesion_count.1 {
            return Err(Error::Config("lesion_count range is reversed".into()));
        }
        if self.center_jitter < 0.0 {
            return Err(Error::Config("center_jitter must be non-negative".into()));
        }
        Ok(())
    }

    /// Stable textual form used for hashing.
    pub fn canonical(&self) -> String {
        format!(
            "size={};csf={:?};gm={:?};wm={:?};jitter={:?};aspect={:?};perturb={:?};t1={:?};flair={:?};lesion_t1={:?};lesion_flair={:?};noise={:?};lesion_count={:?};lesion_radius={:?}",
            self.size,
            self.csf_radius,
            self.gm_radius,
            self.wm_radius,
            self.center_jitter,
            self.aspect_range,
            self.perturbation,
            self.t1_means,
            self.flair_means,
            self.lesion_t1,
            self.lesion_flair,
            self.noise_std,
            self.lesion_count,
            self.lesion_radius
        )
    }

    pub fn hash(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// One synthetic scan with both label maps.
#[derive(Clone, Debug)]
pub struct ScanSample {
    pub seed: u64,
    /// `[2×H×W]`, z-score normalized per channel.
    pub channels: Tensor,
    pub labels_a: LabelMap,
    pub labels_b: LabelMap,
}

impl ScanSample {
    pub fn labels(&self, task: Task) -> &LabelMap {
        match task {
            Task::A => &self.labels_a,
            Task::B => &self.labels_b,
        }
    }

    pub fn size(&self) -> usize {
        self.labels_a.height
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

/// Generates the phantom for `seed`. Pure in `(seed, config)`.
pub fn generate_sample(seed: u64, config: &GeneratorConfig) -> Result<ScanSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.size;
    let half = (n as f64 - 1.0) / 2.0;
    let jitter = (-config.center_jitter, config.center_jitter);
    let cy = half + uniform(&mut rng, jitter);
    let cx = half + uniform(&mut rng, jitter);
    let ay = uniform(&mut rng, config.aspect_range);
    let ax = uniform(&mut rng, config.aspect_range);
    let r_csf = uniform(&mut rng, config.csf_radius);
    let r_gm = uniform(&mut rng, config.gm_radius);
    let r_wm = uniform(&mut rng, config.wm_radius);
    // shared angular perturbation keeps the rings nested
    let harmonics: Vec<(f64, f64, f64)> = (2..=4)
        .map(|k| {
            let amp = rng.random_range(-1.0..1.0) / 3.0;
            let phase = rng.random_range(0.0..2.0 * PI);
            (k as f64, amp, phase)
        })
        .collect();

    let mut labels_a = vec![BACKGROUND; n * n];
    for y in 0..n {
        for x in 0..n {
            let dy = (y as f64 - cy) / ay;
            let dx = (x as f64 - cx) / ax;
            let rho = (dx * dx + dy * dy).sqrt();
            let phi = dy.atan2(dx);
            let wobble: f64 = harmonics
                .iter()
                .map(|&(k, a, p)| a * (k * phi + p).sin())
                .sum();
            let scale = 1.0 + config.perturbation * wobble;
            labels_a[y * n + x] = if rho < r_wm * scale {
                WM
            } else if rho < r_gm * scale {
                GM
            } else if rho < r_csf * scale {
                CSF
            } else {
                BACKGROUND
            };
        }
    }

    let wm_pixels: Vec<usize> = (0..n * n).filter(|&i| labels_a[i] == WM).collect();
    let mut labels_b = vec![BACKGROUND; n * n];
    let count = rng.random_range(config.lesion_count.0..=config.lesion_count.1);
    if !wm_pixels.is_empty() {
        for _ in 0..count {
            let center = wm_pixels[rng.random_range(0..wm_pixels.len())];
            let radius = uniform(&mut rng, config.lesion_radius);
            let (ly, lx) = ((center / n) as f64, (center % n) as f64);
            for &i in &wm_pixels {
                let (py, px) = ((i / n) as f64, (i % n) as f64);
                if (py - ly).powi(2) + (px - lx).powi(2) <= radius * radius {
                    labels_b[i] = LESION;
                }
            }
        }
    }

    let noise = Normal::new(0.0, config.noise_std).expect("validated noise std");
    let mut t1 = Vec::with_capacity(n * n);
    let mut flair = Vec::with_capacity(n * n);
    for i in 0..n * n {
        let class = labels_a[i] as usize;
        let (m0, m1) = if labels_b[i] == LESION {
            (config.lesion_t1, config.lesion_flair)
        } else {
            (config.t1_means[class], config.flair_means[class])
        };
        t1.push(m0 + noise.sample(&mut rng));
        flair.push(m1 + noise.sample(&mut rng));
    }
    let t1 = zscore_normalize(&Tensor::new(vec![n, n], t1)?)?;
    let flair = zscore_normalize(&Tensor::new(vec![n, n], flair)?)?;
    let mut data = t1.into_data();
    data.extend(flair.into_data());

    Ok(ScanSample {
        seed,
        channels: Tensor::new(vec![2, n, n], data)?,
        labels_a: LabelMap::new(n, n, labels_a)?,
        labels_b: LabelMap::new(n, n, labels_b)?,
    })
}

/// `(x − mean) / std` with the population standard deviation.
pub fn zscore_normalize(channel: &Tensor) -> Result<Tensor> {
    let n = channel.len() as f64;
    let mean = channel.data().iter().sum::<f64>() / n;
    let var = channel.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std.is_finite() && std > 1e-12 * (1.0 + mean.abs())) {
        return Err(Error::Degenerate(format!(
            "channel has (near) zero variance (std = {std:e})"
        )));
    }
    Ok(channel.map(|v| (v - mean) / std))
}

/// Number of cases per split.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train_a: usize,
    pub train_b: usize,
    pub validation: usize,
}

impl SplitCounts {
    pub const FULL: SplitCounts = SplitCounts {
        train_a: 87,
        train_b: 88,
        validation: 100,
    };

    /// Full-scale counts multiplied by `factor`, rounded, at least one each.
    pub fn scaled(factor: f64) -> Self {
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        Self {
            train_a: s(Self::FULL.train_a),
            train_b: s(Self::FULL.train_b),
            validation: s(Self::FULL.validation),
        }
    }

    pub fn total(&self) -> usize {
        self.train_a + self.train_b + self.validation
    }
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self::scaled(0.25)
    }
}

/// Seeds of every case, per split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitManifest {
    pub master_seed: u64,
    pub train_a: Vec<u64>,
    pub train_b: Vec<u64>,
    pub validation: Vec<u64>,
    /// Hash of the generator config the seeds are meant for.
    pub config_hash: String,
}

/// Draws pairwise-disjoint seed lists from `master_seed`.
pub fn make_splits(counts: SplitCounts, master_seed: u64) -> Result<SplitManifest> {
    if counts.train_a == 0 || counts.train_b == 0 || counts.validation == 0 {
        return Err(Error::Config(format!(
            "every split needs at least one case, got {counts:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut seen = HashSet::new();
    let mut draw = |n: usize| {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s: u64 = rng.random();
            if seen.insert(s) {
                out.push(s);
            }
        }
        out
    };
    let train_a = draw(counts.train_a);
    let train_b = draw(counts.train_b);
    let validation = draw(counts.validation);
    Ok(SplitManifest {
        master_seed,
        train_a,
        train_b,
        validation,
        config_hash: GeneratorConfig::default().hash(),
    })
}

impl SplitManifest {
    pub fn seeds(&self, split: Split) -> &[u64] {
        match split {
            Split::TrainA => &self.train_a,
            Split::TrainB => &self.train_b,
            Split::Validation => &self.validation,
        }
    }

    pub fn counts(&self) -> SplitCounts {
        SplitCounts {
            train_a: self.train_a.len(),
            train_b: self.train_b.len(),
            validation: self.validation.len(),
        }
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let c = self.counts();
        format!(
            "counts={},{},{}\nmaster_seed={}\nconfig_hash={}\ntrain_a={}\ntrain_b={}\nvalidation={}\n",
            c.train_a,
            c.train_b,
            c.validation,
            self.master_seed,
            self.config_hash,
            list(&self.train_a),
            list(&self.train_b),
            list(&self.validation)
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line `{line}` lacks `=`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::Config(format!("manifest is missing `{k}`")))
        };
        let seeds = |k: &str| -> Result<Vec<u64>> {
            get(k)?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("manifest `{k}`: bad seed `{s}`")))
                })
                .collect()
        };
        let manifest = SplitManifest {
            master_seed: get("master_seed")?
                .parse()
                .map_err(|_| Error::Config("manifest `master_seed` is not an integer".into()))?,
            config_hash: get("config_hash")?.clone(),
            train_a: seeds("train_a")?,
            train_b: seeds("train_b")?,
            validation: seeds("validation")?,
        };
        let declared = get("counts")?;
        let c = manifest.counts();
        if declared != &format!("{},{},{}", c.train_a, c.train_b, c.validation) {
            return Err(Error::Config(format!(
                "manifest counts `{declared}` disagree with the seed lists"
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Network input and the labels of its output window.
#[derive(Clone, Debug)]
pub struct LabeledPatch {
    /// `[C×P×P]` input.
    pub input: Tensor,
    /// Labels of the central `(P − 2·margin)²` window, row-major.
    pub labels: Vec<u8>,
}

/// Cuts the patch whose output window has top-left corner `(y0, x0)`.
///
/// The input extends `margin` pixels beyond the window on every side; pixels
/// outside the image read as zero (the normalized mean).
pub fn extract_patch(
    sample: &ScanSample,
    task: Task,
    y0: usize,
    x0: usize,
    window: usize,
    margin: usize,
) -> Result<LabeledPatch> {
    let n = sample.size();
    if window == 0 || y0 + window > n || x0 + window > n {
        return Err(Error::Dimension(format!(
            "window {window}×{window} at ({y0}, {x0}) leaves the {n}×{n} image"
        )));
    }
    let side = window + 2 * margin;
    let channels = sample.channels.shape()[0];
    let mut data = vec![0.0; channels * side * side];
    let src = sample.channels.data();
    for c in 0..channels {
        for py in 0..side {
            let iy = (y0 + py) as isize - margin as isize;
            if iy < 0 || iy >= n as isize {
                continue;
            }
            for px in 0..side {
                let ix = (x0 + px) as isize - margin as isize;
                if ix < 0 || ix >= n as isize {
                    continue;
                }
                data[(c * side + py) * side + px] = src[(c * n + iy as usize) * n + ix as usize];
            }
        }
    }
    Ok(LabeledPatch {
        input: Tensor::new(vec![channels, side, side], data)?,
        labels: sample.labels(task).window(y0, x0, window, window).data,
    })
}

/// Picks `count` output-window origins: even draws are centred on a
/// foreground pixel of `task` (when there is one), odd draws on any pixel.
pub fn sample_windows<R: Rng>(
    sample: &ScanSample,
    task: Task,
    count: usize,
    window: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let n = sample.size();
    let labels = sample.labels(task);
    let foreground: Vec<usize> = (0..n * n).filter(|&i| labels.data[i] != BACKGROUND).collect();
    let max0 = n.saturating_sub(window);
    (0..count)
        .map(|i| {
            let center = if i % 2 == 0 && !foreground.is_empty() {
                foreground[rng.random_range(0..foreground.len())]
            } else {
                rng.random_range(0..n * n)
            };
            let (cy, cx) = (center / n, center % n);
            let y0 = cy.saturating_sub(window / 2).min(max0);
            let x0 = cx.saturating_sub(window / 2).min(max0);
            (y0, x0)
        })
        .collect()
}

/// Tile origins covering `0..n` with windows of `window` pixels; the last
/// tile is shifted back so it ends at the border.
pub fn tile_origins(n: usize, window: usize) -> Vec<usize> {
    let window = window.min(n);
    let mut out: Vec<usize> = (0..n).step_by(window).collect();
    if let Some(last) = out.last_mut() {
        *last = (*last).min(n - window);
    }
    out.dedup();
    out
}

const SAMPLES_MAGIC: &[u8; 4] = b"EWS1";

/// Writes samples as flat binary records.
///
/// `"EWS1"`, u8 version 1, u32 count, then per sample: u64 seed, u32 H,
/// u32 W, `2·H·W` f64 channel values, `H·W` u8 task-A labels, `H·W` u8
/// task-B labels. Integers and floats are little-endian.
pub fn write_samples(path: &Path, samples: &[ScanSample]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(SAMPLES_MAGIC);
    out.push(1);
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.seed.to_le_bytes());
        out.extend_from_slice(&(s.labels_a.height as u32).to_le_bytes());
        out.extend_from_slice(&(s.labels_a.width as u32).to_le_bytes());
        for v in s.channels.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&s.labels_a.data);
        out.extend_from_slice(&s.labels_b.data);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<ScanSample>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(Error::format(pos as u64, "truncated sample file"));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    if take(4)? != SAMPLES_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"EWS1\""));
    }
    if take(1)?[0] != 1 {
        return Err(Error::format(4, "unsupported sample file version"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let h = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let w = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let channels = take(2 * h * w * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let labels_a = take(h * w)?.to_vec();
        let labels_b = take(h * w)?.to_vec();
        samples.push(ScanSample {
            seed,
            channels: Tensor::new(vec![2, h, w], channels)?,
            labels_a: LabelMap::new(h, w, labels_a)?,
            labels_b: LabelMap::new(h, w, labels_b)?,
        });
    }
    Ok(samples)
}

/// Binary PGM (P5) of one channel, min-max scaled to 0..=255.
pub fn channel_pgm(sample: &ScanSample, channel: usize) -> Vec<u8> {
    let n = sample.size();
    let plane = &sample.channels.data()[channel * n * n..(channel + 1) * n * n];
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let pixels = plane
        .iter()
        .map(|&v| ((v - lo) / span * 255.0).round() as u8)
        .collect::<Vec<_>>();
    pgm(n, n, &pixels)
}

/// Binary PGM of a label map with classes spread over 0..=255.
pub fn labels_pgm(labels: &LabelMap, classes: usize) -> Vec<u8> {
    let step = 255 / (classes.max(2) - 1);
    let pixels = labels
        .data
        .iter()
        .map(|&c| (c as usize * step).min(255) as u8)
        .collect::<Vec<_>>();
    pgm(labels.height, labels.width, &pixels)
}

fn pgm(h: usize, w: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    write!(out, "P5\n{w} {h}\n255\n").expect("write to vec");
    out.extend_from_slice(pixels);
    out
}
