//! Spectral and interferometric data cubes.

mod format;
mod profile;
mod resample;
mod stats;

use std::sync::Arc;

use ndarray::{Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{
    decode_array, encode_array, read_array, read_cube, read_sidecar, write_array, write_cube,
    Dtype, Sidecar, MAGIC, VERSION,
};
pub use profile::InstrumentProfile;
pub use resample::{resample_hsi_to_wavenumber, resample_wavenumber_to_hsi};
pub use stats::{column_stats, column_stats_array, spectral_mean, ColumnStats};

/// What the third axis of a cube samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    Wavelength,
    Wavenumber,
    Opd,
}

impl AxisKind {
    pub fn name(self) -> &'static str {
        match self {
            AxisKind::Wavelength => "wavelength",
            AxisKind::Wavenumber => "wavenumber",
            AxisKind::Opd => "opd",
        }
    }

    /// Channel count this axis has under `profile` (Λ, N or L).
    pub fn channels(self, profile: &InstrumentProfile) -> usize {
        match self {
            AxisKind::Wavelength => profile.n_lambda(),
            AxisKind::Wavenumber => profile.n_nu(),
            AxisKind::Opd => profile.n_opd(),
        }
    }
}

/// Keeps the profile's spatial size in step with the data it describes.
fn fit_profile(profile: Arc<InstrumentProfile>, h: usize, w: usize) -> Arc<InstrumentProfile> {
    if profile.h == h && profile.w == w {
        profile
    } else {
        Arc::new(profile.with_rows(h).with_width(w))
    }
}

/// An `H × W × C` real cube tagged with its spectral axis and instrument.
///
/// Entries are always finite; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    data: Array3<f64>,
    axis: AxisKind,
    profile: Arc<InstrumentProfile>,
}

impl Cube {
    pub fn new(data: Array3<f64>, axis: AxisKind, profile: Arc<InstrumentProfile>) -> Result<Self> {
        let c = axis.channels(&profile);
        if data.dim().2 != c {
            return Err(Error::shape(
                format!("{} cube channels", axis.name()),
                &[data.dim().0, data.dim().1, c],
                data.shape(),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{} cube at flat index {index}",
                axis.name()
            )));
        }
        let profile = fit_profile(profile, data.dim().0, data.dim().1);
        Ok(Self {
            data,
            axis,
            profile,
        })
    }

    pub fn zeros(h: usize, w: usize, axis: AxisKind, profile: Arc<InstrumentProfile>) -> Self {
        let c = axis.channels(&profile);
        let profile = fit_profile(profile, h, w);
        Self {
            data: Array3::zeros((h, w, c)),
            axis,
            profile,
        }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn axis(&self) -> AxisKind {
        self.axis
    }

    pub fn profile(&self) -> &Arc<InstrumentProfile> {
        &self.profile
    }

    /// `(H, W, C)`.
    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn spectrum(&self, h: usize, w: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![h, w, ..])
    }

    /// Replaces the payload, keeping axis and profile. Rechecks invariants.
    pub fn with_data(&self, data: Array3<f64>) -> Result<Self> {
        Self::new(data, self.axis, self.profile.clone())
    }

    pub fn require_axis(&self, expected: AxisKind) -> Result<()> {
        if self.axis == expected {
            Ok(())
        } else {
            Err(Error::AxisMismatch {
                expected: expected.name(),
                found: self.axis.name(),
            })
        }
    }

    pub fn same_shape(&self, other: &Cube, what: &str) -> Result<()> {
        if self.data.shape() != other.data.shape() {
            return Err(Error::shape(what, self.data.shape(), other.data.shape()));
        }
        Ok(())
    }
}
