//! Degradation parameter set, its on-disk directory form and a synthetic
//! generator with known ground truth.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Ix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cube::{read_array, write_array, Dtype, InstrumentProfile};
use crate::error::{Error, Result};
use crate::rng::RngHandle;
use crate::transform::ForwardModel;

pub const PARAMS_VERSION: u32 = 1;

/// Ω: everything the degradation model needs, per detector column.
///
/// `A` is `W × N` (split into real and imaginary maps); every other map is
/// `W × L` and broadcasts over H.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationParams {
    pub a_re: Array2<f64>,
    pub a_im: Array2<f64>,
    pub beta: Array2<f64>,
    pub m: Array2<f64>,
    pub k: Array2<f64>,
    pub d: Array2<f64>,
    pub sigma_read: Array2<f64>,
    /// Log-std of the per-capture electronic gain.
    pub e: f64,
    profile: Arc<InstrumentProfile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsMeta {
    e: f64,
    profile: InstrumentProfile,
    version: u32,
}

const MAPS: [&str; 7] = ["A_real", "A_imag", "beta", "M", "K", "D", "sigma_read"];

impl DegradationParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        profile: Arc<InstrumentProfile>,
        a_re: Array2<f64>,
        a_im: Array2<f64>,
        beta: Array2<f64>,
        m: Array2<f64>,
        k: Array2<f64>,
        d: Array2<f64>,
        sigma_read: Array2<f64>,
        e: f64,
    ) -> Result<Self> {
        let p = Self {
            a_re,
            a_im,
            beta,
            m,
            k,
            d,
            sigma_read,
            e,
            profile,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn profile(&self) -> &Arc<InstrumentProfile> {
        &self.profile
    }

    pub fn width(&self) -> usize {
        self.k.nrows()
    }

    fn maps(&self) -> [&Array2<f64>; 7] {
        [
            &self.a_re,
            &self.a_im,
            &self.beta,
            &self.m,
            &self.k,
            &self.d,
            &self.sigma_read,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.a_re.nrows();
        let (n, l) = (self.profile.n_nu(), self.profile.n_opd());
        for (name, map) in MAPS.iter().zip(self.maps()) {
            let expected = if name.starts_with("A_") { [w, n] } else { [w, l] };
            if map.shape() != expected {
                return Err(Error::shape(*name, &expected, map.shape()));
            }
            if map.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite((*name).into()));
            }
        }
        if !(self.e.is_finite() && self.e >= 0.0) {
            return Err(Error::Params(format!("e must be finite and >= 0, got {}", self.e)));
        }
        if let Some(((w, i), v)) = self.k.indexed_iter().find(|(_, &v)| v <= 0.0) {
            return Err(Error::Params(format!("K[{w},{i}] = {v} is not positive")));
        }
        if let Some(((w, i), v)) = self.sigma_read.indexed_iter().find(|(_, &v)| v < 0.0) {
            return Err(Error::Params(format!("sigma_read[{w},{i}] = {v} is negative")));
        }
        for col in 0..w {
            for j in self.profile.band_range() {
                if self.a_re[[col, j]] == 0.0 && self.a_im[[col, j]] == 0.0 {
                    return Err(Error::Params(format!(
                        "A vanishes at in-band bin {j} of column {col}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Response and `K ⊙ M` for building the forward operator.
    pub fn forward_model(&self) -> ForwardModel {
        ForwardModel {
            a_re: self.a_re.clone(),
            a_im: self.a_im.clone(),
            gain: &self.k * &self.m,
        }
    }

    /// The parameters of detector columns `start..start + width`.
    pub fn column_window(&self, start: usize, width: usize) -> Result<Self> {
        let end = start + width;
        if width == 0 || end > self.width() {
            return Err(Error::Params(format!(
                "column window {start}..{end} outside 0..{}",
                self.width()
            )));
        }
        let cut = |m: &Array2<f64>| m.slice(s![start..end, ..]).to_owned();
        Ok(Self {
            a_re: cut(&self.a_re),
            a_im: cut(&self.a_im),
            beta: cut(&self.beta),
            m: cut(&self.m),
            k: cut(&self.k),
            d: cut(&self.d),
            sigma_read: cut(&self.sigma_read),
            e: self.e,
            profile: Arc::new(self.profile.with_width(width)),
        })
    }

    /// Writes `A_real.ihic`, ..., `sigma_read.ihic` (f64) and `params.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, map) in MAPS.iter().zip(self.maps()) {
            write_array(
                &dir.join(format!("{name}.ihic")),
                &map.clone().into_dyn(),
                Dtype::F64,
            )?;
        }
        let meta = ParamsMeta {
            e: self.e,
            profile: self.profile.with_width(self.width()),
            version: PARAMS_VERSION,
        };
        let path = dir.join("params.json");
        let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("params.json");
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ParamsMeta = serde_json::from_slice(&text).map_err(|e| Error::json(&path, e))?;
        if meta.version != PARAMS_VERSION {
            return Err(Error::Params(format!(
                "{}: unsupported version {}",
                path.display(),
                meta.version
            )));
        }
        meta.profile.validate()?;
        let mut maps = Vec::with_capacity(MAPS.len());
        for name in MAPS {
            let file = dir.join(format!("{name}.ihic"));
            let array = read_array(&file)?;
            let found = array.shape().to_vec();
            let map = array
                .into_dimensionality::<Ix2>()
                .map_err(|_| Error::shape(file.display().to_string(), &[0, 0], &found))?;
            maps.push(map);
        }
        let mut it = maps.into_iter();
        let mut next = || it.next().expect("one map per name");
        Self::new(
            Arc::new(meta.profile),
            next(),
            next(),
            next(),
            next(),
            next(),
            next(),
            next(),
            meta.e,
        )
    }
}

/// Knobs for [`synthetic_params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParamsConfig {
    pub seed: u64,
    pub k_mean: f64,
    pub dark_mean: f64,
    pub sigma_read_mean: f64,
    pub beta_mean: f64,
    pub e: f64,
    /// Constant phase added to A, radians.
    pub phase_offset: f64,
}

impl Default for SyntheticParamsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k_mean: 1.5,
            dark_mean: 100.0,
            sigma_read_mean: 5.0,
            beta_mean: 1.0,
            e: 0.0,
            phase_offset: 0.0,
        }
    }
}

/// Synthetic parameters together with the two factors of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub params: DegradationParams,
    /// Relative (flat-field) response, `W × L`.
    pub m_r: Array2<f64>,
    /// OPD-axis envelope shared by all columns, mean 1.
    pub m_a: Array1<f64>,
}

/// Plausible instrument parameters with column stripes and smooth OPD trends.
///
/// `|A|` is held below `0.8·β/N` in every column so that, for any
/// non-negative spectrum, the noiseless optical intensity stays
/// non-negative. A is zero outside the band.
pub fn synthetic_params(profile: Arc<InstrumentProfile>, cfg: &SyntheticParamsConfig) -> DegradationParams {
    synthetic_truth(profile, cfg).params
}

pub fn synthetic_truth(profile: Arc<InstrumentProfile>, cfg: &SyntheticParamsConfig) -> SyntheticTruth {
    let (w, n, l) = (profile.w, profile.n_nu(), profile.n_opd());
    let band = profile.band_range();
    let handle = RngHandle::new(cfg.seed);
    let mut rng = handle.rng("synthetic-params", 0);
    let mut stripe = |amp: f64| -> Array1<f64> {
        Array1::from_shape_fn(w, |_| 1.0 + amp * rng.random_range(-1.0..1.0))
    };
    let beta_col = stripe(0.05);
    let a_col = stripe(0.05);
    let phase_col = stripe(1.0);
    let mr_col = stripe(0.1);
    let k_col = stripe(0.1);
    let d_col = stripe(0.1);
    let s_col = stripe(0.2);
    let mut rng = handle.rng("synthetic-params", 1);

    let mut a_re = Array2::zeros((w, n));
    let mut a_im = Array2::zeros((w, n));
    let span = (band.len().max(2) - 1) as f64;
    for col in 0..w {
        let cap = 0.8 * cfg.beta_mean * beta_col[col] / n as f64;
        for j in band.clone() {
            let t = (j - band.start) as f64 / span;
            let amp = cap * (0.6 + 0.35 * (std::f64::consts::PI * t).sin()) * a_col[col] / 1.05;
            let phase = cfg.phase_offset + 0.1 * (phase_col[col] - 1.0) + 0.15 * (t - 0.5);
            a_re[[col, j]] = amp * phase.cos();
            a_im[[col, j]] = amp * phase.sin();
        }
    }
    let beta = Array2::from_shape_fn((w, l), |(col, _)| cfg.beta_mean * beta_col[col]);

    // relative response: column stripes with a mild per-element texture,
    // times a smooth OPD-axis envelope shared by every column
    let m_r = Array2::from_shape_fn((w, l), |(col, _)| mr_col[col] * (1.0 + 0.02 * rng.random_range(-1.0..1.0)));
    let envelope: Array1<f64> = Array1::from_shape_fn(l, |i| {
        let t = i as f64 / l as f64;
        1.0 + 0.06 * (2.0 * std::f64::consts::PI * t + 0.3).sin()
    });
    let envelope = &envelope / envelope.mean().unwrap();
    let m_r = &m_r / (&m_r * &envelope.view().insert_axis(ndarray::Axis(0))).mean().unwrap();
    let m = &m_r * &envelope.view().insert_axis(ndarray::Axis(0));

    let k = Array2::from_shape_fn((w, l), |(col, _)| {
        cfg.k_mean * k_col[col] * (1.0 + 0.02 * rng.random_range(-1.0..1.0))
    });
    let d = Array2::from_shape_fn((w, l), |(col, _)| {
        cfg.dark_mean * d_col[col] * (1.0 + 0.01 * rng.random_range(-1.0..1.0))
    });
    let sigma_read = Array2::from_shape_fn((w, l), |(col, _)| {
        cfg.sigma_read_mean * s_col[col] * (1.0 + 0.05 * rng.random_range(-1.0..1.0))
    });
    let params = DegradationParams::new(profile, a_re, a_im, beta, m, k, d, sigma_read, cfg.e)
        .expect("synthetic parameters satisfy the invariants");
    SyntheticTruth {
        params,
        m_r,
        m_a: envelope,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_params_respect_bounds() {
        let profile = Arc::new(InstrumentProfile::desk());
        let p = synthetic_params(profile.clone(), &SyntheticParamsConfig::default());
        let n = profile.n_nu() as f64;
        for col in 0..profile.w {
            for j in 0..profile.n_nu() {
                let mag = p.a_re[[col, j]].hypot(p.a_im[[col, j]]);
                if profile.in_band(j) {
                    assert!(mag > 0.0 && mag <= 0.8 * p.beta[[col, 0]] / n);
                } else {
                    assert_eq!(mag, 0.0);
                }
            }
        }
        assert!((p.m.mean().unwrap() - 1.0).abs() < 1e-12);
        assert!(p.k.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn directory_round_trip_is_exact() {
        let profile = Arc::new(InstrumentProfile::desk().with_width(5));
        let cfg = SyntheticParamsConfig {
            e: 0.1,
            ..Default::default()
        };
        let p = synthetic_params(profile, &cfg);
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path()).unwrap();
        assert_eq!(DegradationParams::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn rejects_bad_maps() {
        let profile = Arc::new(InstrumentProfile::desk().with_width(3));
        let p = synthetic_params(profile, &SyntheticParamsConfig::default());
        let mut q = p.clone();
        q.k[[1, 2]] = 0.0;
        assert!(matches!(q.validate(), Err(Error::Params(_))));
        let mut q = p.clone();
        q.sigma_read[[0, 0]] = -1.0;
        assert!(q.validate().is_err());
        let mut q = p.clone();
        let j = q.profile().band_range().start;
        q.a_re[[2, j]] = 0.0;
        q.a_im[[2, j]] = 0.0;
        assert!(q.validate().is_err());
        let mut q = p;
        q.beta[[0, 1]] = f64::NAN;
        assert!(matches!(q.validate(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn column_window_slices_every_map() {
        let profile = Arc::new(InstrumentProfile::desk().with_width(6));
        let p = synthetic_params(profile, &SyntheticParamsConfig::default());
        let q = p.column_window(2, 3).unwrap();
        assert_eq!(q.width(), 3);
        assert_eq!(q.k.row(0), p.k.row(2));
        assert_eq!(q.a_im.row(2), p.a_im.row(4));
        assert!(p.column_window(4, 3).is_err());
    }
}
