//! Dataset directories and their manifest.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::s;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{column_offset, make_patches, synthesize_pair, Sample, DEFAULT_TARGET_RATE};
use crate::cube::{read_cube, write_cube, AxisKind, Cube, Dtype, InstrumentProfile};
use crate::degrade::{DegradationParams, NoiseMode};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, RngHandle};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub stride: usize,
    pub target_rate: f64,
    pub master_seed: u64,
    /// File stems of sources kept whole for the test split.
    pub test_sources: Vec<String>,
    /// Upper bound on train patches taken from one source.
    pub max_patches_per_image: Option<usize>,
    pub dtype: Dtype,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            patch_h: 32,
            patch_w: 32,
            stride: 32,
            target_rate: DEFAULT_TARGET_RATE,
            master_seed: 0,
            test_sources: Vec::new(),
            max_patches_per_image: None,
            dtype: Dtype::F32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub split: Split,
    pub index: usize,
    /// Source file stem.
    pub source: String,
    /// Top-left corner `[y, x]` in the source image.
    pub origin: [usize; 2],
    /// `[H, W]` of the sample.
    pub size: [usize; 2],
    /// First detector column whose parameters were used.
    pub column_offset: usize,
    pub seed: u64,
    pub stream: u64,
    pub scale_factor: f64,
    pub interferogram: String,
    pub gt_nu: String,
    pub gt_hsi: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// SHA-256 of the instrument profile's grids.
    pub profile_id: String,
    pub params_dir: String,
    pub config: DatasetConfig,
    /// Source stem to path, in the order they were read.
    pub sources: Vec<(String, PathBuf)>,
    pub samples: Vec<SampleEntry>,
}

/// Stable identifier for a profile's sampling grids (spatial size excluded).
pub fn profile_digest(profile: &InstrumentProfile) -> String {
    let canonical = profile.with_rows(1).with_width(1);
    let json = serde_json::to_vec(&canonical).expect("profile serializes");
    hex::encode(Sha256::digest(json))
}

struct Job {
    split: Split,
    index: usize,
    source: usize,
    patch_index: usize,
    origin: (usize, usize),
    size: (usize, usize),
}

fn list_sources(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("ihic") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

fn crop(cube: &Cube, origin: (usize, usize), size: (usize, usize)) -> Result<Cube> {
    let (y, x) = origin;
    let (h, w) = size;
    cube.with_data(cube.data().slice(s![y..y + h, x..x + w, ..]).to_owned())
}

fn sample_stream(master: u64, source: &str, split: Split, patch_index: usize) -> u64 {
    derive_seed(master, &[source, split.name(), &patch_index.to_string()])
}

/// Writes the three cubes of a sample under `dir/<stem>.*.ihic`.
pub fn write_sample(sample: &Sample, dir: &Path, stem: &str, dtype: Dtype) -> Result<[String; 3]> {
    let names = [
        format!("{stem}.interf.ihic"),
        format!("{stem}.gt_nu.ihic"),
        format!("{stem}.gt_hsi.ihic"),
    ];
    write_cube(&sample.interferogram, &dir.join(&names[0]), dtype)?;
    write_cube(&sample.gt_nu, &dir.join(&names[1]), dtype)?;
    write_cube(&sample.gt_hsi, &dir.join(&names[2]), dtype)?;
    Ok(names)
}

/// Patches the train sources, keeps test sources whole, synthesizes every
/// sample and writes `train/`, `test/`, `params/` and `manifest.json` under `out`.
pub fn make_dataset(
    source_dir: &Path,
    params: &DegradationParams,
    cfg: &DatasetConfig,
    out: &Path,
) -> Result<DatasetManifest> {
    let sources = list_sources(source_dir)?;
    if sources.is_empty() {
        return Err(Error::Config(format!(
            "no .ihic source cubes in {}",
            source_dir.display()
        )));
    }
    for name in &cfg.test_sources {
        if !sources.iter().any(|(s, _)| s == name) {
            return Err(Error::Config(format!("test source {name:?} not found")));
        }
    }
    let cubes: Vec<Cube> = sources
        .iter()
        .map(|(_, p)| {
            let c = read_cube(p)?;
            c.require_axis(AxisKind::Wavelength)?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let detector_w = params.width();
    if cfg.patch_w > detector_w {
        return Err(Error::Config(format!(
            "patch width {} exceeds detector width {detector_w}",
            cfg.patch_w
        )));
    }

    let mut jobs = Vec::new();
    let mut counters = [0usize; 2];
    for (s, ((name, _), cube)) in sources.iter().zip(&cubes).enumerate() {
        let (h, w, _) = cube.dim();
        if cfg.test_sources.contains(name) {
            if w > detector_w {
                return Err(Error::Config(format!(
                    "test scene {name} is {w} columns wide, detector has {detector_w}"
                )));
            }
            jobs.push(Job {
                split: Split::Test,
                index: counters[1],
                source: s,
                patch_index: 0,
                origin: (0, 0),
                size: (h, w),
            });
            counters[1] += 1;
        } else {
            let patches = make_patches(cube, cfg.patch_h, cfg.patch_w, cfg.stride)?;
            let cap = cfg.max_patches_per_image.unwrap_or(usize::MAX);
            for (k, p) in patches.iter().take(cap).enumerate() {
                jobs.push(Job {
                    split: Split::Train,
                    index: counters[0],
                    source: s,
                    patch_index: k,
                    origin: p.origin,
                    size: (cfg.patch_h, cfg.patch_w),
                });
                counters[0] += 1;
            }
        }
    }

    for split in [Split::Train, Split::Test] {
        let d = out.join(split.name());
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let samples: Vec<SampleEntry> = jobs
        .par_iter()
        .map(|job| {
            let name = &sources[job.source].0;
            let patch = crop(&cubes[job.source], job.origin, job.size)?;
            let offset = column_offset(job.origin.1, job.size.1, detector_w);
            let window = params.column_window(offset, job.size.1)?;
            let seed = sample_stream(cfg.master_seed, name, job.split, job.patch_index);
            let rng = RngHandle::with_stream(seed, 0);
            let sample = synthesize_pair(&patch, &window, &rng, cfg.target_rate, NoiseMode::Stochastic)?;
            let stem = format!("{:04}", job.index);
            let dir = out.join(job.split.name());
            let [interf, gt_nu, gt_hsi] = write_sample(&sample, &dir, &stem, cfg.dtype)?;
            let rel = |f: String| format!("{}/{f}", job.split.name());
            Ok(SampleEntry {
                split: job.split,
                index: job.index,
                source: name.clone(),
                origin: [job.origin.0, job.origin.1],
                size: [job.size.0, job.size.1],
                column_offset: offset,
                seed,
                stream: 0,
                scale_factor: sample.scale.factor,
                interferogram: rel(interf),
                gt_nu: rel(gt_nu),
                gt_hsi: rel(gt_hsi),
            })
        })
        .collect::<Result<_>>()?;

    params.save(&out.join("params"))?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        profile_id: profile_digest(params.profile()),
        params_dir: "params".into(),
        config: cfg.clone(),
        sources,
        samples,
    };
    let path = out.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dataset: &Path) -> Result<DatasetManifest> {
    let path = dataset.join("manifest.json");
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "{}: unsupported manifest version {}",
            path.display(),
            m.version
        )));
    }
    Ok(m)
}

/// Re-synthesizes one sample from its manifest entry, the source image and
/// the dataset's parameter copy.
pub fn replay_sample(dataset: &Path, manifest: &DatasetManifest, entry: &SampleEntry) -> Result<Sample> {
    let (_, source_path) = manifest
        .sources
        .iter()
        .find(|(s, _)| *s == entry.source)
        .ok_or_else(|| Error::Config(format!("source {} not in manifest", entry.source)))?;
    let source = read_cube(source_path)?;
    let patch = crop(
        &source,
        (entry.origin[0], entry.origin[1]),
        (entry.size[0], entry.size[1]),
    )?;
    let params = DegradationParams::load(&dataset.join(&manifest.params_dir))?;
    let window = params.column_window(entry.column_offset, entry.size[1])?;
    let rng = RngHandle::with_stream(entry.seed, entry.stream);
    synthesize_pair(
        &patch,
        &window,
        &rng,
        manifest.config.target_rate,
        NoiseMode::Stochastic,
    )
}
