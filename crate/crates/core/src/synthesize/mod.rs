//! Paired training data: hyperspectral patches pushed through the calibrated
//! degradation model.

mod dataset;
mod scene;

use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::cube::{resample_hsi_to_wavenumber, AxisKind, Cube};
use crate::degrade::{degrade_with, DegradationParams, NoiseMode};
use crate::error::{Error, Result};
use crate::rng::RngHandle;

pub use dataset::{
    make_dataset, profile_digest, read_manifest, replay_sample, write_sample, DatasetConfig,
    DatasetManifest,
    SampleEntry, Split, MANIFEST_VERSION,
};
pub use scene::synthetic_scene;

pub const DEFAULT_TARGET_RATE: f64 = 1e4;

/// One grid-aligned crop and its top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize),
    pub cube: Cube,
}

/// Crops `patch_h × patch_w` windows at multiples of `stride`, row-major by
/// origin. Windows that would cross the image edge are dropped.
pub fn make_patches(hsi: &Cube, patch_h: usize, patch_w: usize, stride: usize) -> Result<Vec<Patch>> {
    let (h, w, _) = hsi.dim();
    if patch_h == 0 || patch_w == 0 || stride == 0 {
        return Err(Error::Degenerate(format!(
            "patch {patch_h}x{patch_w} with stride {stride}"
        )));
    }
    if patch_h > h || patch_w > w {
        return Err(Error::Degenerate(format!(
            "patch {patch_h}x{patch_w} larger than image {h}x{w}"
        )));
    }
    let mut out = Vec::new();
    for y in (0..=h - patch_h).step_by(stride) {
        for x in (0..=w - patch_w).step_by(stride) {
            let data = hsi
                .data()
                .slice(s![y..y + patch_h, x..x + patch_w, ..])
                .to_owned();
            out.push(Patch {
                origin: (y, x),
                cube: hsi.with_data(data)?,
            });
        }
    }
    Ok(out)
}

/// Multiplier that maps source values to photoelectron rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub factor: f64,
    pub target_rate: f64,
}

impl ScaleRecord {
    /// Maps a scaled cube back to source units.
    pub fn invert(&self, cube: &Cube) -> Result<Cube> {
        cube.with_data(cube.data() / self.factor)
    }
}

/// Scales a wavelength patch so its in-band wavenumber mean equals `target_rate`.
pub fn photometric_scale(hsi: &Cube, target_rate: f64) -> Result<(Cube, ScaleRecord)> {
    hsi.require_axis(AxisKind::Wavelength)?;
    if !(target_rate.is_finite() && target_rate > 0.0) {
        return Err(Error::Config(format!("target rate must be positive, got {target_rate}")));
    }
    if hsi.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Degenerate("hyperspectral patch has negative values".into()));
    }
    let nu = resample_hsi_to_wavenumber(hsi)?;
    let band = hsi.profile().band_range();
    let mean = nu.data().slice(s![.., .., band]).mean().unwrap_or(0.0);
    if mean.is_nan() || mean <= 0.0 {
        return Err(Error::Degenerate("patch is zero inside the band".into()));
    }
    let factor = target_rate / mean;
    let scaled = hsi.with_data(hsi.data() * factor)?;
    Ok((scaled, ScaleRecord { factor, target_rate }))
}

/// Interferogram and ground truth for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub interferogram: Cube,
    /// Scaled spectrum on the wavenumber grid (the degradation input).
    pub gt_nu: Cube,
    /// Scaled wavelength patch.
    pub gt_hsi: Cube,
    pub scale: ScaleRecord,
}

/// `B₀ = resample(scale(patch))`, `I_d = G_Ω(B₀)` with the given stream.
///
/// `params` must already be restricted to the patch's detector columns.
pub fn synthesize_pair(
    patch: &Cube,
    params: &DegradationParams,
    rng: &RngHandle,
    target_rate: f64,
    mode: NoiseMode,
) -> Result<Sample> {
    let (scaled, scale) = photometric_scale(patch, target_rate)?;
    let gt_nu = resample_hsi_to_wavenumber(&scaled)?;
    let interferogram = degrade_with(&gt_nu, params, rng, mode)?;
    Ok(Sample {
        interferogram,
        gt_nu,
        gt_hsi: scaled,
        scale,
    })
}

/// First detector column used for a patch whose left edge is `origin_x`.
pub fn column_offset(origin_x: usize, patch_w: usize, detector_w: usize) -> usize {
    origin_x.min(detector_w.saturating_sub(patch_w))
}
