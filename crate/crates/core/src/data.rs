//! Dataset splits: ingestion from class-per-directory image trees,
//! procedural fine-grained synthetic data, and K-way N-shot episode
//! sampling.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Image channels; all images are RGB.
pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Val,
    Novel,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Base, Split::Val, Split::Novel];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Base => "base",
            Split::Val => "val",
            Split::Novel => "novel",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Split::Base),
            "val" => Ok(Split::Val),
            "novel" => Ok(Split::Novel),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// One class with its images, each `3×R×R` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    pub name: String,
    pub split: Split,
    pub images: Vec<Vec<f64>>,
}

/// Disjoint base/val/novel classes with normalized images.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub resolution: usize,
    pub classes: Vec<ClassData>,
    /// Per-channel statistics of the base split used for normalization.
    pub channel_mean: [f64; CHANNELS],
    pub channel_std: [f64; CHANNELS],
}

impl DatasetSplits {
    /// Normalizes raw `[0,1]` images to zero mean and unit variance per
    /// channel, using statistics of the base split only.
    pub fn from_raw(resolution: usize, mut classes: Vec<ClassData>) -> Result<Self> {
        let plane = resolution * resolution;
        let mut names = HashSet::new();
        for c in &classes {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Data(format!("class {:?} listed twice", c.name)));
            }
            if let Some(bad) = c.images.iter().find(|im| im.len() != CHANNELS * plane) {
                return Err(Error::Data(format!(
                    "class {:?} has an image of {} values, expected {}",
                    c.name,
                    bad.len(),
                    CHANNELS * plane
                )));
            }
        }
        let mut sum = [0.0; CHANNELS];
        let mut sq = [0.0; CHANNELS];
        let mut count = 0usize;
        for c in classes.iter().filter(|c| c.split == Split::Base) {
            for im in &c.images {
                for ch in 0..CHANNELS {
                    for v in &im[ch * plane..(ch + 1) * plane] {
                        sum[ch] += v;
                        sq[ch] += v * v;
                    }
                }
                count += plane;
            }
        }
        if count == 0 {
            return Err(Error::Data("the base split has no images".into()));
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [0.0; CHANNELS];
        for ch in 0..CHANNELS {
            let var = (sq[ch] / n - mean[ch] * mean[ch]).max(0.0);
            std[ch] = var.sqrt().max(1e-8);
        }
        for c in &mut classes {
            for im in &mut c.images {
                for ch in 0..CHANNELS {
                    for v in &mut im[ch * plane..(ch + 1) * plane] {
                        *v = (*v - mean[ch]) / std[ch];
                    }
                }
            }
        }
        Ok(DatasetSplits {
            resolution,
            classes,
            channel_mean: mean,
            channel_std: std,
        })
    }

    /// Indices of the classes in `split`, in storage order.
    pub fn classes_in(&self, split: Split) -> Vec<usize> {
        (0..self.classes.len())
            .filter(|&i| self.classes[i].split == split)
            .collect()
    }

    pub fn image(&self, class: usize, instance: usize) -> &[f64] {
        &self.classes[class].images[instance]
    }

    /// Stacks `(class, instance)` images into a `B×3×R×R` tensor.
    pub fn batch(&self, items: &[(usize, usize)]) -> Tensor {
        let r = self.resolution;
        let mut data = Vec::with_capacity(items.len() * CHANNELS * r * r);
        for &(c, i) in items {
            data.extend_from_slice(self.image(c, i));
        }
        Tensor::new([items.len(), CHANNELS, r, r], data).expect("image sizes are validated")
    }
}

/// Reads a splits file: one `class<TAB>{base|val|novel}` line per class.
pub fn read_splits(path: &Path) -> Result<Vec<(String, Split)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read splits file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, split) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!(
                "{}:{}: expected \"class<TAB>split\"",
                path.display(),
                n + 1
            ))
        })?;
        let split = split.trim().parse().map_err(|_| {
            Error::Data(format!(
                "{}:{}: unknown split {:?} for class {name:?}",
                path.display(),
                n + 1,
                split.trim()
            ))
        })?;
        out.push((name.to_string(), split));
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "splits file {} lists no classes",
            path.display()
        )));
    }
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    matches!(
        ext.as_deref(),
        Some("png" | "jpg" | "jpeg" | "pgm" | "ppm" | "pnm")
    )
}

/// Decodes an image file, resizes it bilinearly to `R×R` and returns its
/// `[0,1]` RGB planes.
pub fn load_image(path: &Path, resolution: usize) -> Result<Vec<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("unreadable image {}: {e}", path.display())))?;
    let r = resolution as u32;
    let rgb = image::imageops::resize(&img.to_rgb8(), r, r, FilterType::Triangle);
    let plane = resolution * resolution;
    let mut out = vec![0.0; CHANNELS * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for ch in 0..CHANNELS {
            out[ch * plane + i] = px.0[ch] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Loads a class-per-directory image tree according to a splits file.
pub fn ingest_dataset(root: &Path, splits_file: &Path, resolution: usize) -> Result<DatasetSplits> {
    let listed = read_splits(splits_file)?;
    let listed_names: HashSet<&str> = listed.iter().map(|(n, _)| n.as_str()).collect();
    let entries = fs::read_dir(root)
        .map_err(|e| Error::Data(format!("cannot read dataset root {}: {e}", root.display())))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            dirs.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    dirs.sort();
    if let Some(stray) = dirs.iter().find(|d| !listed_names.contains(d.as_str())) {
        return Err(Error::Data(format!(
            "class directory {stray:?} is not assigned to any split"
        )));
    }
    let mut classes = Vec::with_capacity(listed.len());
    for (name, split) in listed {
        let dir = root.join(&name);
        if !dir.is_dir() {
            return Err(Error::Data(format!(
                "missing class directory {}",
                dir.display()
            )));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        files.sort();
        let images = files
            .iter()
            .map(|p| load_image(p, resolution))
            .collect::<Result<Vec<_>>>()?;
        classes.push(ClassData {
            name,
            split,
            images,
        });
    }
    DatasetSplits::from_raw(resolution, classes)
}

/// Shape of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub base: usize,
    pub val: usize,
    pub novel: usize,
    pub per_class: usize,
    pub resolution: usize,
    pub seed: u64,
}

/// Number of super-groups sharing a coarse shape.
pub const SYNTH_GROUPS: usize = 4;
/// Side of the class-identifying glyph.
pub const GLYPH: usize = 5;
const GLYPH_PATTERN: [[u8; GLYPH]; GLYPH] = [
    [1, 1, 1, 1, 1],
    [1, 0, 0, 0, 0],
    [1, 1, 1, 0, 0],
    [1, 0, 0, 0, 0],
    [1, 0, 0, 1, 1],
];
const GROUP_COLORS: [[f64; 3]; SYNTH_GROUPS] = [
    [0.85, 0.35, 0.30],
    [0.30, 0.70, 0.40],
    [0.35, 0.45, 0.85],
    [0.80, 0.75, 0.30],
];
const MAX_JITTER: i64 = 3;
const NOISE_STD: f64 = 0.06;

/// Where a class places its glyph: top-left corner and number of quarter
/// turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlyphPlacement {
    pub row: usize,
    pub col: usize,
    pub turns: usize,
}

/// Class layout: its super-group and glyph placement.
pub fn synth_class_layout(class: usize, resolution: usize, seed: u64) -> (usize, GlyphPlacement) {
    let group = class % SYNTH_GROUPS;
    let variant = class / SYNTH_GROUPS;
    // 3×3 anchor grid × 4 orientations, enumerated in a seed-shuffled order
    // so distinct classes of a group never share a placement (up to 36).
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000 ^ group as u64);
    let order = sample(&mut rng, 36, 36).into_vec();
    let slot = order[variant % 36];
    let (anchor, turns) = (slot / 4, slot % 4);
    let span = resolution as f64;
    let at = |i: usize| ((0.28 + 0.22 * i as f64) * span) as usize - GLYPH / 2;
    (
        group,
        GlyphPlacement {
            row: at(anchor / 3),
            col: at(anchor % 3),
            turns,
        },
    )
}

fn glyph_bit(r: usize, c: usize, turns: usize) -> bool {
    let n = GLYPH - 1;
    let (r, c) = match turns % 4 {
        0 => (r, c),
        1 => (n - c, r),
        2 => (n - r, n - c),
        _ => (c, n - r),
    };
    GLYPH_PATTERN[r][c] == 1
}

fn in_shape(group: usize, y: f64, x: f64) -> bool {
    // Centered coordinates scaled to [-1, 1].
    match group {
        0 => x * x + y * y < 0.42,
        1 => x.abs() < 0.55 && y.abs() < 0.55,
        2 => y > -0.6 && y < 0.55 && x.abs() < (y + 0.6) * 0.55,
        _ => {
            let r2 = x * x + y * y;
            r2 < 0.45 && r2 > 0.15
        }
    }
}

/// Renders one raw `[0,1]` synthetic image. Background noise and jitter
/// depend only on `(seed, group, instance)`, so two classes of a group
/// differ exactly inside their glyph squares.
pub fn synth_render(class: usize, instance: usize, resolution: usize, seed: u64) -> Vec<f64> {
    let r = resolution;
    let (group, glyph) = synth_class_layout(class, r, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((group as u64) << 40) ^ instance as u64,
    );
    let dy = rng.gen_range(-MAX_JITTER..=MAX_JITTER);
    let dx = rng.gen_range(-MAX_JITTER..=MAX_JITTER);
    let gain = rng.gen_range(0.9..1.1);
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    let plane = r * r;
    let mut out = vec![0.0; CHANNELS * plane];
    let color = GROUP_COLORS[group];
    for y in 0..r {
        for x in 0..r {
            let sy = y as i64 - dy;
            let sx = x as i64 - dx;
            let ny = (sy as f64 + 0.5) / r as f64 * 2.0 - 1.0;
            let nx = (sx as f64 + 0.5) / r as f64 * 2.0 - 1.0;
            let mut px = if in_shape(group, ny, nx) {
                color
            } else {
                [0.25; 3]
            };
            let gy = sy - glyph.row as i64;
            let gx = sx - glyph.col as i64;
            if (0..GLYPH as i64).contains(&gy) && (0..GLYPH as i64).contains(&gx) {
                let v = if glyph_bit(gy as usize, gx as usize, glyph.turns) {
                    1.0
                } else {
                    0.0
                };
                px = [v; 3];
            }
            for ch in 0..CHANNELS {
                out[ch * plane + y * r + x] = px[ch] * gain;
            }
        }
    }
    for v in &mut out {
        *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
    }
    out
}

/// Raw `[0,1]` synthetic classes: `base`, then `val`, then `novel`.
pub fn synth_raw(spec: &SynthSpec) -> Vec<ClassData> {
    let splits = std::iter::repeat_n(Split::Base, spec.base)
        .chain(std::iter::repeat_n(Split::Val, spec.val))
        .chain(std::iter::repeat_n(Split::Novel, spec.novel));
    splits
        .enumerate()
        .map(|(c, split)| ClassData {
            name: format!("class{c:03}"),
            split,
            images: (0..spec.per_class)
                .map(|i| synth_render(c, i, spec.resolution, spec.seed))
                .collect(),
        })
        .collect()
}

/// Generates and normalizes a synthetic dataset.
pub fn synth_generate(spec: &SynthSpec) -> Result<DatasetSplits> {
    if spec.base == 0 || spec.per_class == 0 {
        return Err(Error::Config(
            "synthetic data needs base classes and images per class".into(),
        ));
    }
    if spec.resolution < 16 {
        return Err(Error::Config(format!(
            "synthetic resolution must be at least 16, got {}",
            spec.resolution
        )));
    }
    DatasetSplits::from_raw(spec.resolution, synth_raw(spec))
}

/// Writes raw classes as a class-per-directory PNG tree plus `splits.tsv`.
pub fn write_dataset(classes: &[ClassData], resolution: usize, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let plane = resolution * resolution;
    let mut splits = String::new();
    for c in classes {
        let cdir = dir.join(&c.name);
        fs::create_dir_all(&cdir)?;
        for (i, im) in c.images.iter().enumerate() {
            let mut buf = image::RgbImage::new(resolution as u32, resolution as u32);
            for (p, px) in buf.pixels_mut().enumerate() {
                for ch in 0..CHANNELS {
                    px.0[ch] = (im[ch * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
            buf.save(cdir.join(format!("{i:04}.png")))
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        splits.push_str(&format!("{}\t{}\n", c.name, c.split));
    }
    let path = dir.join("splits.tsv");
    fs::write(&path, splits)?;
    Ok(path)
}

/// Ways, shots and queries per class of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

/// A sampled episode as `(class, instance)` references. Labels are
/// episode-local, assigned in class-draw order; support and query are
/// grouped by label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub classes: Vec<usize>,
    pub support: Vec<(usize, usize)>,
    pub support_labels: Vec<usize>,
    pub query: Vec<(usize, usize)>,
    pub query_labels: Vec<usize>,
}

impl Episode {
    pub fn support_images(&self, data: &DatasetSplits) -> Tensor {
        data.batch(&self.support)
    }

    pub fn query_images(&self, data: &DatasetSplits) -> Tensor {
        data.batch(&self.query)
    }
}

/// Draws `way` classes of `split` and, for each, `shot + query` distinct
/// instances, all uniformly without replacement.
pub fn sample_episode(
    data: &DatasetSplits,
    split: Split,
    spec: EpisodeSpec,
    rng: &mut impl Rng,
) -> Result<Episode> {
    if spec.way == 0 || spec.shot == 0 || spec.query == 0 {
        return Err(Error::Sampling(format!(
            "episode needs positive way/shot/query, got {spec:?}"
        )));
    }
    let pool = data.classes_in(split);
    if pool.len() < spec.way {
        return Err(Error::Sampling(format!(
            "{split} split has {} classes, {}-way episodes need {}",
            pool.len(),
            spec.way,
            spec.way
        )));
    }
    let need = spec.shot + spec.query;
    if let Some(&short) = pool.iter().find(|&&c| data.classes[c].images.len() < need) {
        return Err(Error::Sampling(format!(
            "class {:?} has {} images, episodes need {need}",
            data.classes[short].name,
            data.classes[short].images.len()
        )));
    }
    let mut ep = Episode {
        classes: Vec::with_capacity(spec.way),
        support: Vec::with_capacity(spec.way * spec.shot),
        support_labels: Vec::with_capacity(spec.way * spec.shot),
        query: Vec::with_capacity(spec.way * spec.query),
        query_labels: Vec::with_capacity(spec.way * spec.query),
    };
    for (label, pick) in sample(rng, pool.len(), spec.way).into_iter().enumerate() {
        let class = pool[pick];
        ep.classes.push(class);
        let n = data.classes[class].images.len();
        let inst = sample(rng, n, need).into_vec();
        for &i in &inst[..spec.shot] {
            ep.support.push((class, i));
            ep.support_labels.push(label);
        }
        for &i in &inst[spec.shot..] {
            ep.query.push((class, i));
            ep.query_labels.push(label);
        }
    }
    Ok(ep)
}

/// Class-name → split map of a dataset, for reporting.
pub fn split_summary(data: &DatasetSplits) -> BTreeMap<Split, usize> {
    let mut out = BTreeMap::new();
    for c in &data.classes {
        *out.entry(c.split).or_insert(0) += 1;
    }
    out
}
