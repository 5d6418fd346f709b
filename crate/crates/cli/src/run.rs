//! Run directories, data loading and report files shared by the commands.

use std::collections::HashMap;
use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use lcn4_core::config::RunConfig;
use lcn4_core::data::{ingest_dataset, synth_generate, DatasetSplits};
use lcn4_core::metrics::{EvalReport, Encoder};
use lcn4_core::tensor::Tensor;

use crate::failure::{Failure, Outcome};

/// Environment variable naming the directory that holds run directories.
pub const RUN_DIR_ENV: &str = "LCN4_RUN_DIR";
pub const DEFAULT_RUN_ROOT: &str = "runs";

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.lcn4";
pub const REPORT_FILE: &str = "report.csv";
pub const HEATMAP_FILE: &str = "confusion.pgm";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Root for run directories: the `run_dir` key, else `$LCN4_RUN_DIR`, else
/// `./runs`.
pub fn run_root(cfg: &RunConfig) -> PathBuf {
    cfg.run_dir
        .clone()
        .or_else(|| std::env::var_os(RUN_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
}

/// `--out` if given, else `<root>/<command>-<profile>-seed<seed>`.
pub fn run_dir(out: Option<&Path>, cfg: &RunConfig, command: &str) -> PathBuf {
    match out {
        Some(dir) => dir.to_path_buf(),
        None => run_root(cfg).join(format!("{command}-{}-seed{}", cfg.profile, cfg.seed)),
    }
}

/// Creates an empty output directory. An existing non-empty directory is
/// only replaced with `force`.
pub fn prepare_dir(dir: &Path, force: bool) -> Outcome<()> {
    let occupied = match fs::read_dir(dir) {
        Ok(mut entries) => entries.next().is_some(),
        Err(_) => false,
    };
    if occupied {
        if !force {
            return Err(Failure::config(format!(
                "output directory {} already exists; pass --force to overwrite it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| {
            Failure::io(format!("cannot clear {}: {e}", dir.display()))
        })?;
    }
    fs::create_dir_all(dir)
        .map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))
}

/// Writes the resolved configuration into the run directory.
pub fn echo_config(dir: &Path, cfg: &RunConfig) -> Outcome<()> {
    write(&dir.join(CONFIG_FILE), cfg.to_json().as_bytes())
}

pub fn write(path: &Path, bytes: &[u8]) -> Outcome<()> {
    fs::write(path, bytes).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

/// The generated dataset, or the image tree under `data_root`.
pub fn load_data(cfg: &RunConfig) -> Outcome<DatasetSplits> {
    if cfg.synthetic {
        return Ok(synth_generate(&cfg.synth_spec())?);
    }
    let root = cfg
        .data_root
        .as_deref()
        .ok_or_else(|| Failure::config("data_root is required unless synthetic is true"))?;
    if !root.is_dir() {
        return Err(Failure::config(format!(
            "dataset directory {} does not exist",
            root.display()
        )));
    }
    let splits = cfg
        .splits_file
        .clone()
        .unwrap_or_else(|| root.join("splits.tsv"));
    Ok(ingest_dataset(root, &splits, cfg.resolution)?)
}

/// Writes `report.csv` and `confusion.pgm`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Outcome<()> {
    report.write_csv(&dir.join(REPORT_FILE))?;
    report.write_heatmap(&dir.join(HEATMAP_FILE), 16)?;
    Ok(())
}

fn image_key(image: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for v in image {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Embeds every image as the one-hot vector of its true class on all four
/// branches. Evaluation against it must be perfect, which checks the
/// episode, similarity and aggregation plumbing in isolation.
pub struct ClassOracle {
    classes: usize,
    lookup: HashMap<u64, usize>,
    plane: usize,
}

impl ClassOracle {
    pub fn new(data: &DatasetSplits) -> Self {
        let mut lookup = HashMap::new();
        for (c, class) in data.classes.iter().enumerate() {
            for im in &class.images {
                lookup.insert(image_key(im), c);
            }
        }
        ClassOracle {
            classes: data.classes.len(),
            lookup,
            plane: 3 * data.resolution * data.resolution,
        }
    }
}

impl Encoder for ClassOracle {
    fn embed(&self, images: &Tensor) -> lcn4_core::Result<[Tensor; 4]> {
        let n = images.shape()[0];
        let mut rows = vec![0.0; n * self.classes];
        for (i, im) in images.data().chunks_exact(self.plane).enumerate() {
            let class = self.lookup.get(&image_key(im)).ok_or_else(|| {
                lcn4_core::Error::Data("oracle asked to embed an unknown image".into())
            })?;
            rows[i * self.classes + class] = 1.0;
        }
        let t = Tensor::new([n, self.classes], rows)?;
        Ok([t.clone(), t.clone(), t.clone(), t])
    }
}
