//! Image-quality metrics and dataset-level evaluation reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cube::{read_cube, resample_wavenumber_to_hsi, write_cube, Cube, Dtype};
use crate::degrade::DegradationParams;
use crate::error::{Error, Result};
use crate::reconstruct::{Method, Reconstructor};
use crate::synthesize::{read_manifest, Split};

/// `10·log10(peak² / MSE)` over every element. Returns `+∞` when the cubes
/// are identical. `peak` defaults to the maximum of `reference`.
pub fn psnr(x: &Cube, reference: &Cube, peak: Option<f64>) -> Result<f64> {
    x.same_shape(reference, "psnr")?;
    let peak = peak.unwrap_or_else(|| reference.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Degenerate(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = (x.data() - reference.data()).mapv(|v| v * v).mean().unwrap_or(0.0);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range; defaults to the maximum of the reference.
    pub peak: Option<f64>,
}

impl Default for SsimOptions {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: None,
        }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Array1<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k = Array1::from_shape_fn(size, |i| (-0.5 * ((i as f64 - c) / sigma).powi(2)).exp());
    let s = k.sum();
    k / s
}

/// Separable filtering keeping only positions where the window fits.
fn filter_valid(img: ArrayView2<f64>, k: &Array1<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let rows = Array2::from_shape_fn((h, ow), |(i, j)| (0..n).map(|t| k[t] * img[[i, j + t]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..n).map(|t| k[t] * rows[[i + t, j]]).sum::<f64>())
}

fn ssim_plane(x: ArrayView2<f64>, y: ArrayView2<f64>, k: &Array1<f64>, c1: f64, c2: f64) -> f64 {
    let mx = filter_valid(x, k);
    let my = filter_valid(y, k);
    let xx = filter_valid((&x * &x).view(), k);
    let yy = filter_valid((&y * &y).view(), k);
    let xy = filter_valid((&x * &y).view(), k);
    let mut total = 0.0;
    for i in 0..mx.nrows() {
        for j in 0..mx.ncols() {
            let (a, b) = (mx[[i, j]], my[[i, j]]);
            let vx = xx[[i, j]] - a * a;
            let vy = yy[[i, j]] - b * b;
            let cov = xy[[i, j]] - a * b;
            total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
        }
    }
    total / mx.len() as f64
}

/// Gaussian-windowed SSIM per channel over the spatial axes, averaged over
/// channels and valid window positions.
pub fn ssim(x: &Cube, reference: &Cube, opts: &SsimOptions) -> Result<f64> {
    x.same_shape(reference, "ssim")?;
    let (h, w, channels) = x.dim();
    if opts.window == 0 || opts.window > h || opts.window > w {
        return Err(Error::Degenerate(format!(
            "ssim window {} does not fit a {h}x{w} image",
            opts.window
        )));
    }
    let peak = opts
        .peak
        .unwrap_or_else(|| reference.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Degenerate(format!("ssim dynamic range must be positive, got {peak}")));
    }
    let k = gaussian_kernel(opts.window, opts.sigma);
    let (c1, c2) = ((opts.k1 * peak).powi(2), (opts.k2 * peak).powi(2));
    let per_channel: Vec<f64> = (0..channels)
        .into_par_iter()
        .map(|c| {
            ssim_plane(
                x.data().index_axis(Axis(2), c),
                reference.data().index_axis(Axis(2), c),
                &k,
                c1,
                c2,
            )
        })
        .collect();
    Ok(per_channel.iter().sum::<f64>() / channels as f64)
}

/// What to score in [`evaluate_run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMethod {
    /// Returns the reference itself.
    GroundTruth,
    Reconstruct(Method),
}

impl EvalMethod {
    pub fn id(&self) -> &'static str {
        match self {
            EvalMethod::GroundTruth => "ground-truth",
            EvalMethod::Reconstruct(m) => m.id(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub method: EvalMethod,
    pub ssim: SsimOptions,
    /// Writes `|x − ref|` per scene under this directory.
    pub error_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub index: usize,
    pub source: String,
    /// `None` when the reconstruction is exact.
    pub psnr_db: Option<f64>,
    pub psnr_infinite: bool,
    pub ssim: f64,
}

impl SceneScore {
    pub fn psnr(&self) -> f64 {
        self.psnr_db.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub config: EvalConfig,
    pub params_digest: String,
    /// Hash of the configuration, the parameter directory and the manifest.
    pub config_digest: String,
    pub scenes: Vec<SceneScore>,
    pub mean_psnr_db: Option<f64>,
    pub mean_psnr_infinite: bool,
    pub mean_ssim: f64,
    /// Hash of the configuration digest and every score, independent of runtime.
    pub digest: String,
    pub runtime_s: f64,
}

/// SHA-256 over every regular file in `dir` (names and contents, sorted by name).
pub fn directory_digest(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    names.retain(|p| p.is_file());
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn sha_json<T: Serialize>(parts: &[&T]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(serde_json::to_vec(p).expect("serializable"));
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Reconstructs every test scene of a dataset and scores it in the
/// wavelength domain against the stored spectrum, both in source units.
pub fn evaluate_run(dataset: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    let start = Instant::now();
    let manifest = read_manifest(dataset)?;
    let params_dir = dataset.join(&manifest.params_dir);
    let params = DegradationParams::load(&params_dir)?;
    let params_digest = directory_digest(&params_dir)?;
    let config_digest = sha_json(&[
        &serde_json::to_value(cfg).expect("serializable"),
        &serde_json::Value::String(params_digest.clone()),
        &serde_json::to_value(&manifest).expect("serializable"),
    ]);
    if let Some(dir) = &cfg.error_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tests: Vec<_> = manifest.samples.iter().filter(|e| e.split == Split::Test).collect();
    if tests.is_empty() {
        return Err(Error::Config(format!("{}: dataset has no test scenes", dataset.display())));
    }
    let scenes = tests
        .par_iter()
        .map(|entry| {
            let scene = || format!("test scene {} ({})", entry.index, entry.source);
            let wrap = |e: Error| Error::Config(format!("{}: {e}", scene()));
            let gt_nu = read_cube(&dataset.join(&entry.gt_nu)).map_err(wrap)?;
            let reference = resample_wavenumber_to_hsi(&gt_nu).map_err(wrap)?;
            let x = match &cfg.method {
                EvalMethod::GroundTruth => reference.clone(),
                EvalMethod::Reconstruct(method) => {
                    let y = read_cube(&dataset.join(&entry.interferogram)).map_err(wrap)?;
                    let window = params
                        .column_window(entry.column_offset, entry.size[1])
                        .map_err(wrap)?;
                    let rec = Reconstructor::new(&window).map_err(wrap)?;
                    rec.run(&y, method).map_err(wrap)?
                }
            };
            let unscale = |c: &Cube| c.with_data(c.data() / entry.scale_factor);
            let x = unscale(&x)?;
            let reference = unscale(&reference)?;
            let p = psnr(&x, &reference, None).map_err(wrap)?;
            let s = ssim(&x, &reference, &cfg.ssim).map_err(wrap)?;
            if let Some(dir) = &cfg.error_dir {
                let err = x.with_data((x.data() - reference.data()).mapv(f64::abs))?;
                let path = dir.join(format!("{:04}.abs_err.ihic", entry.index));
                write_cube(&err, &path, Dtype::F32)?;
            }
            Ok(SceneScore {
                index: entry.index,
                source: entry.source.clone(),
                psnr_db: p.is_finite().then_some(p),
                psnr_infinite: p.is_infinite(),
                ssim: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scenes.len() as f64;
    let mean_psnr = scenes.iter().map(SceneScore::psnr).sum::<f64>() / n;
    let mean_ssim = scenes.iter().map(|s| s.ssim).sum::<f64>() / n;
    let digest = sha_json(&[
        &serde_json::Value::String(config_digest.clone()),
        &serde_json::to_value(&scenes).expect("serializable"),
    ]);
    Ok(EvalReport {
        method: cfg.method.id().into(),
        config: cfg.clone(),
        params_digest,
        config_digest,
        scenes,
        mean_psnr_db: mean_psnr.is_finite().then_some(mean_psnr),
        mean_psnr_infinite: mean_psnr.is_infinite(),
        mean_ssim,
        digest,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}
