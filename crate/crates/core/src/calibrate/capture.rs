//! Calibration captures: container, directory form and a synthetic generator.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::cube::{read_cube, write_cube, AxisKind, Cube, Dtype};
use crate::degrade::{electronic_degrade, optical_degrade, DegradationParams, ElectronicGain};
use crate::error::{Error, Result};
use crate::rng::RngHandle;

pub const MIN_ROWS: usize = 16;

/// Dark, relative (no fringes) and absolute (fringed) uniform-light captures.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub dark: Cube,
    pub relative: Vec<Cube>,
    pub absolute: Vec<Cube>,
    /// Reference spectrum of each absolute capture, `N` wavenumber bins.
    pub reference: Vec<Array1<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReferenceFile {
    reference: Vec<Vec<f64>>,
}

impl CalibrationSet {
    pub fn validate(&self) -> Result<()> {
        let cal = |reason: String| Error::Calibration {
            stage: "input",
            reason,
        };
        let all = std::iter::once(&self.dark)
            .chain(&self.relative)
            .chain(&self.absolute);
        for cube in all {
            cube.require_axis(AxisKind::Opd)?;
            self.dark.same_shape(cube, "calibration capture")?;
        }
        let (h, _, _) = self.dark.dim();
        if h < MIN_ROWS {
            return Err(Error::Degenerate(format!(
                "calibration captures need H >= {MIN_ROWS}, got {h}"
            )));
        }
        if self.relative.len() < 2 || self.absolute.len() < 2 {
            return Err(cal(format!(
                "need at least two brightness levels, got {} relative and {} absolute",
                self.relative.len(),
                self.absolute.len()
            )));
        }
        if self.reference.len() != self.absolute.len() {
            return Err(cal(format!(
                "{} reference spectra for {} absolute captures",
                self.reference.len(),
                self.absolute.len()
            )));
        }
        let n = self.dark.profile().n_nu();
        for r in &self.reference {
            if r.len() != n {
                return Err(Error::shape("reference spectrum", &[n], &[r.len()]));
            }
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(cal("reference spectra must be finite and non-negative".into()));
            }
        }
        let levels: Vec<f64> = self
            .relative
            .iter()
            .map(|c| c.data().mean().unwrap_or(0.0))
            .collect();
        for (a, x) in levels.iter().enumerate() {
            for y in &levels[a + 1..] {
                if (x - y).abs() <= 1e-3 * x.abs().max(y.abs()) {
                    return Err(cal("relative captures must have distinct brightness levels".into()));
                }
            }
        }
        Ok(())
    }

    /// Writes `dark.ihic`, `relative_NN.ihic`, `absolute_NN.ihic` and `reference.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_cube(&self.dark, &dir.join("dark.ihic"), Dtype::F64)?;
        for (i, c) in self.relative.iter().enumerate() {
            write_cube(c, &dir.join(format!("relative_{i:02}.ihic")), Dtype::F64)?;
        }
        for (i, c) in self.absolute.iter().enumerate() {
            write_cube(c, &dir.join(format!("absolute_{i:02}.ihic")), Dtype::F64)?;
        }
        let path = dir.join("reference.json");
        let refs = ReferenceFile {
            reference: self.reference.iter().map(|r| r.to_vec()).collect(),
        };
        let json = serde_json::to_vec_pretty(&refs).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let dark = read_cube(&dir.join("dark.ihic"))?;
        let numbered = |prefix: &str| -> Result<Vec<Cube>> {
            let mut out = Vec::new();
            loop {
                let p = dir.join(format!("{prefix}_{:02}.ihic", out.len()));
                if !p.exists() {
                    return Ok(out);
                }
                out.push(read_cube(&p)?);
            }
        };
        let relative = numbered("relative")?;
        let absolute = numbered("absolute")?;
        let path = dir.join("reference.json");
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let refs: ReferenceFile = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
        let set = Self {
            dark,
            relative,
            absolute,
            reference: refs.reference.into_iter().map(Array1::from).collect(),
        };
        set.validate()?;
        Ok(set)
    }
}

/// Flat in-band reference spectrum whose background `β·μ_N` is about `rate`
/// for unit β.
pub fn flat_reference(profile: &crate::cube::InstrumentProfile, rate: f64) -> Array1<f64> {
    let band = profile.band_range();
    let level = rate * profile.n_nu() as f64 / band.len() as f64;
    Array1::from_shape_fn(profile.n_nu(), |j| if band.contains(&j) { level } else { 0.0 })
}

/// Simulates a calibration session with `h` rows per capture.
///
/// Relative captures see `M_R · t`, absolute captures see the full optical
/// model under a flat reference spectrum, and the dark capture has no light.
/// The electronic stage uses the nominal gain (`e′ = 1`).
pub fn synthetic_calibration_set(
    params: &DegradationParams,
    m_r: &Array2<f64>,
    h: usize,
    levels: &[f64],
    rng: &RngHandle,
) -> Result<CalibrationSet> {
    let profile = Arc::new(params.profile().with_rows(h));
    let (w, l) = (params.width(), profile.n_opd());
    if m_r.dim() != (w, l) {
        return Err(Error::shape("relative response", &[w, l], m_r.shape()));
    }
    let gain = ElectronicGain::nominal(params);
    let dark_io = Cube::zeros(h, w, AxisKind::Opd, profile.clone());
    let dark = electronic_degrade(&dark_io, &gain, &rng.child("dark", 0))?;
    let mut relative = Vec::with_capacity(levels.len());
    let mut absolute = Vec::with_capacity(levels.len());
    let mut reference = Vec::with_capacity(levels.len());
    for (i, &t) in levels.iter().enumerate() {
        let io = m_r
            .mapv(|v| v * t)
            .insert_axis(Axis(0))
            .broadcast((h, w, l))
            .expect("broadcast over rows")
            .to_owned();
        let io = Cube::new(io, AxisKind::Opd, profile.clone())?;
        relative.push(electronic_degrade(&io, &gain, &rng.child("relative", i as u64))?);

        let b = flat_reference(&profile, t);
        let b0 = Array3::from_shape_fn((h, w, profile.n_nu()), |(_, _, j)| b[j]);
        let b0 = Cube::new(b0, AxisKind::Wavenumber, profile.clone())?;
        let io = optical_degrade(&b0, params)?;
        absolute.push(electronic_degrade(&io, &gain, &rng.child("absolute", i as u64))?);
        reference.push(b);
    }
    Ok(CalibrationSet {
        dark,
        relative,
        absolute,
        reference,
    })
}
