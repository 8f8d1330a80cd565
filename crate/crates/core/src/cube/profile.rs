//! Instrument sampling grids.
//!
//! A profile ties together the three spectral representations used by the
//! pipeline: the wavelength grid of the delivered hyperspectral image, the
//! wavenumber grid the interferogram is transformed against, and the optical
//! path difference (OPD) samples recorded by the detector.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NYQUIST_MIN: f64 = 0.99;
const NYQUIST_MAX: f64 = 1.0;

/// Sampling grids of one interferometric imager.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentProfile {
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    /// Wavelengths in nm, uniform and strictly increasing.
    #[serde(rename = "lambda_nm")]
    lambda: Vec<f64>,
    /// Wavenumbers in nm⁻¹, `nu[j] = j * delta_nu`.
    #[serde(rename = "nu_per_nm")]
    nu: Vec<f64>,
    /// OPD samples in nm, `opd[i] = (i - center) * delta_l`.
    #[serde(rename = "opd_nm")]
    opd: Vec<f64>,
    #[serde(rename = "center_index")]
    center: usize,
}

impl InstrumentProfile {
    /// Builds a profile from its defining constants and checks every invariant.
    ///
    /// The wavenumber grid has `opd_len - center` bins spanning `[0, nu_max]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h: usize,
        w: usize,
        lambda_range: (f64, f64),
        n_lambda: usize,
        opd_len: usize,
        center: usize,
        delta_l: f64,
        nu_max: f64,
    ) -> Result<Self> {
        if n_lambda < 2 {
            return Err(Error::Profile("need at least two wavelength channels".into()));
        }
        if center >= opd_len {
            return Err(Error::Profile(format!(
                "center index {center} outside OPD grid of length {opd_len}"
            )));
        }
        let n_nu = opd_len - center;
        if n_nu < 2 {
            return Err(Error::Profile("need at least two wavenumber bins".into()));
        }
        let (lo, hi) = lambda_range;
        let step = (hi - lo) / (n_lambda - 1) as f64;
        let lambda = (0..n_lambda).map(|k| lo + k as f64 * step).collect();
        let delta_nu = nu_max / (n_nu - 1) as f64;
        let nu = (0..n_nu).map(|j| j as f64 * delta_nu).collect();
        let opd = (0..opd_len)
            .map(|i| (i as f64 - center as f64) * delta_l)
            .collect();
        let profile = Self {
            h,
            w,
            lambda,
            nu,
            opd,
            center,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// The LASIS standard data format: W=2048, Λ=70 over [450, 900] nm,
    /// L=256 OPD samples with the zero-OPD sample at index 35, N=221
    /// wavenumber bins up to 0.0034 nm⁻¹ and a 146.88 nm OPD step.
    pub fn standard(h: usize) -> Self {
        Self::new(h, 2048, (450.0, 900.0), 70, 256, 35, 146.88, 0.0034)
            .expect("standard profile constants are consistent")
    }

    /// Scaled-down profile for tests and quick experiments. Same band and
    /// Nyquist relation as [`InstrumentProfile::standard`].
    pub fn desk() -> Self {
        let nu_max: f64 = 0.0034;
        // floor to 0.01 nm keeps 2·Δl·ν_max just below 1
        let delta_l = (100.0 / (2.0 * nu_max)).floor() / 100.0;
        Self::new(32, 64, (450.0, 900.0), 16, 64, 9, delta_l, nu_max)
            .expect("desk profile constants are consistent")
    }

    /// Rebuilds a profile from stored grids, rejecting anything that is not
    /// a uniform grid satisfying the profile invariants.
    pub fn from_grids(
        h: usize,
        w: usize,
        lambda: Vec<f64>,
        nu: Vec<f64>,
        opd: Vec<f64>,
        center: usize,
    ) -> Result<Self> {
        let profile = Self {
            h,
            w,
            lambda,
            nu,
            opd,
            center,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Copy of this profile with a different number of spatial rows.
    pub fn with_rows(&self, h: usize) -> Self {
        Self { h, ..self.clone() }
    }

    /// Copy of this profile with a different detector width.
    pub fn with_width(&self, w: usize) -> Self {
        Self { w, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Profile(m));
        if self.h == 0 || self.w == 0 {
            return bad(format!("spatial dims must be positive, got {}x{}", self.h, self.w));
        }
        check_uniform("lambda_nm", &self.lambda)?;
        check_uniform("nu_per_nm", &self.nu)?;
        check_uniform("opd_nm", &self.opd)?;
        if self.nu[0] != 0.0 {
            return bad(format!("wavenumber grid must start at 0, starts at {}", self.nu[0]));
        }
        if self.lambda[0] <= 0.0 {
            return bad("wavelengths must be positive".into());
        }
        if self.center >= self.opd.len() {
            return bad(format!("center index {} out of range", self.center));
        }
        if self.opd[self.center].abs() > 1e-9 * self.delta_l() {
            return bad(format!("OPD at center index is {}, not 0", self.opd[self.center]));
        }
        if self.n_nu() != self.n_opd() - self.center {
            return bad(format!(
                "N = {} but L - c = {}",
                self.n_nu(),
                self.n_opd() - self.center
            ));
        }
        let nyquist = self.nyquist_product();
        if !(NYQUIST_MIN..=NYQUIST_MAX).contains(&nyquist) {
            return bad(format!("2·Δl·ν_max = {nyquist} outside [0.99, 1.0]"));
        }
        Ok(())
    }

    pub fn n_lambda(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_nu(&self) -> usize {
        self.nu.len()
    }

    pub fn n_opd(&self) -> usize {
        self.opd.len()
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn lambda_grid(&self) -> &[f64] {
        &self.lambda
    }

    pub fn nu_grid(&self) -> &[f64] {
        &self.nu
    }

    pub fn opd_grid(&self) -> &[f64] {
        &self.opd
    }

    pub fn delta_l(&self) -> f64 {
        self.opd[1] - self.opd[0]
    }

    pub fn delta_nu(&self) -> f64 {
        self.nu[1] - self.nu[0]
    }

    pub fn nu_max(&self) -> f64 {
        self.nu[self.nu.len() - 1]
    }

    pub fn nyquist_product(&self) -> f64 {
        2.0 * self.delta_l() * self.nu_max()
    }

    /// Wavenumber interval covered by the wavelength band, `[1/λ_max, 1/λ_min]`.
    pub fn band_limits(&self) -> (f64, f64) {
        (
            1.0 / self.lambda[self.lambda.len() - 1],
            1.0 / self.lambda[0],
        )
    }

    /// Indices of wavenumber bins inside the wavelength band.
    pub fn band_range(&self) -> Range<usize> {
        let (lo, hi) = self.band_limits();
        let start = self.nu.iter().position(|&v| v >= lo).unwrap_or(self.nu.len());
        let end = self
            .nu
            .iter()
            .rposition(|&v| v <= hi)
            .map_or(start, |j| j + 1);
        start..end.max(start)
    }

    pub fn in_band(&self, j: usize) -> bool {
        self.band_range().contains(&j)
    }
}

fn check_uniform(name: &str, grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Profile(format!("{name} needs at least two samples")));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Profile(format!("{name} has non-finite entries")));
    }
    let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if step <= 0.0 {
        return Err(Error::Profile(format!("{name} must be strictly increasing")));
    }
    for (k, pair) in grid.windows(2).enumerate() {
        let d = pair[1] - pair[0];
        if (d - step).abs() > 1e-6 * step {
            return Err(Error::Profile(format!(
                "{name} is not uniform at index {k}: step {d} vs {step}"
            )));
        }
    }
    Ok(())
}
