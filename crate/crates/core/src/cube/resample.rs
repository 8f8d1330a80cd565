//! Conversion between the wavelength and wavenumber representations.
//!
//! Values are interpolated at `ν = 1/λ` without a Jacobian factor. Wavenumber
//! bins outside `[1/λ_max, 1/λ_min]` are zero.

use ndarray::{Array3, Axis, Zip};

use super::{AxisKind, Cube, InstrumentProfile};
use crate::error::{Error, Result};

/// Linear interpolation stencil: `out = (1 - t) * in[lo] + t * in[lo + 1]`.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    out: usize,
    lo: usize,
    t: f64,
}

fn to_wavenumber_stencils(profile: &InstrumentProfile) -> Vec<Stencil> {
    let lambda = profile.lambda_grid();
    let step = lambda[1] - lambda[0];
    let last = lambda.len() - 1;
    profile
        .band_range()
        .map(|j| {
            let wl = 1.0 / profile.nu_grid()[j];
            let pos = ((wl - lambda[0]) / step).clamp(0.0, last as f64);
            let lo = (pos.floor() as usize).min(last - 1);
            Stencil {
                out: j,
                lo,
                t: pos - lo as f64,
            }
        })
        .collect()
}

/// Stencils over the in-band bins only; wavelengths whose wavenumber falls
/// between the last in-band bin and the band edge are linearly extrapolated
/// from the two nearest in-band bins.
fn to_wavelength_stencils(profile: &InstrumentProfile) -> Result<Vec<Stencil>> {
    let band = profile.band_range();
    if band.len() < 2 {
        return Err(Error::Profile(format!(
            "wavelength band covers {} wavenumber bins, need at least 2",
            band.len()
        )));
    }
    let nu = profile.nu_grid();
    let dnu = profile.delta_nu();
    let span = band.len() - 1;
    Ok(profile
        .lambda_grid()
        .iter()
        .enumerate()
        .map(|(k, &wl)| {
            let pos = (1.0 / wl - nu[band.start]) / dnu;
            let lo = (pos.floor().max(0.0) as usize).min(span - 1);
            Stencil {
                out: k,
                lo: band.start + lo,
                t: pos - lo as f64,
            }
        })
        .collect())
}

fn apply(input: &Array3<f64>, channels_out: usize, stencils: &[Stencil]) -> Array3<f64> {
    let (h, w, _) = input.dim();
    let mut out = Array3::zeros((h, w, channels_out));
    Zip::from(out.lanes_mut(Axis(2)))
        .and(input.lanes(Axis(2)))
        .par_for_each(|mut o, i| {
            for s in stencils {
                o[s.out] = (1.0 - s.t) * i[s.lo] + s.t * i[s.lo + 1];
            }
        });
    out
}

/// Resamples a wavelength-domain HSI onto the profile's wavenumber grid.
pub fn resample_hsi_to_wavenumber(hsi: &Cube) -> Result<Cube> {
    hsi.require_axis(AxisKind::Wavelength)?;
    let profile = hsi.profile().clone();
    let stencils = to_wavenumber_stencils(&profile);
    let out = apply(hsi.data(), profile.n_nu(), &stencils);
    Cube::new(out, AxisKind::Wavenumber, profile)
}

/// Resamples a wavenumber spectrum cube back onto the wavelength grid.
pub fn resample_wavenumber_to_hsi(spec: &Cube) -> Result<Cube> {
    spec.require_axis(AxisKind::Wavenumber)?;
    let profile = spec.profile().clone();
    let stencils = to_wavelength_stencils(&profile)?;
    let out = apply(spec.data(), profile.n_lambda(), &stencils);
    Cube::new(out, AxisKind::Wavelength, profile)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn desk() -> Arc<InstrumentProfile> {
        Arc::new(InstrumentProfile::desk())
    }

    fn hsi_from(profile: &Arc<InstrumentProfile>, f: impl Fn(f64) -> f64) -> Cube {
        let lambda = profile.lambda_grid().to_vec();
        let data = Array3::from_shape_fn((2, 3, lambda.len()), |(_, _, k)| f(lambda[k]));
        Cube::new(data, AxisKind::Wavelength, profile.clone()).unwrap()
    }

    #[test]
    fn constant_spectrum_fills_band_only() {
        for profile in [desk(), Arc::new(InstrumentProfile::standard(2))] {
            let hsi = hsi_from(&profile, |_| 7.5);
            let nu = resample_hsi_to_wavenumber(&hsi).unwrap();
            let band = profile.band_range();
            for j in 0..profile.n_nu() {
                let v = nu.data()[[1, 2, j]];
                if band.contains(&j) {
                    assert!((v - 7.5).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
            let back = resample_wavenumber_to_hsi(&nu).unwrap();
            assert!(back.data().iter().all(|v| (v - 7.5).abs() < 1e-12));
        }
    }

    #[test]
    fn single_channel_is_local() {
        let profile = desk();
        let lambda = profile.lambda_grid().to_vec();
        for k in 0..lambda.len() {
            let mut data = Array3::zeros((1, 1, lambda.len()));
            data[[0, 0, k]] = 1.0;
            let hsi = Cube::new(data, AxisKind::Wavelength, profile.clone()).unwrap();
            let nu = resample_hsi_to_wavenumber(&hsi).unwrap();
            let target = 1.0 / lambda[k];
            // neighbors of the spike in wavelength bound the support in wavenumber
            let lo = 1.0 / lambda.get(k + 1).copied().unwrap_or(lambda[k]);
            let hi = 1.0 / lambda[k.saturating_sub(1)];
            for (j, &v) in nu.data().iter().enumerate() {
                if v != 0.0 {
                    let nj = profile.nu_grid()[j];
                    assert!(nj > lo - 1e-15 && nj < hi + 1e-15, "bin {j} for channel {k}");
                }
            }
            let bracketing = profile
                .nu_grid()
                .iter()
                .filter(|&&n| (n - target).abs() < profile.delta_nu())
                .count();
            assert!(bracketing <= 2);
        }
    }

    #[test]
    fn nonnegative_and_zero_preserving() {
        let profile = desk();
        let zero = hsi_from(&profile, |_| 0.0);
        let nu = resample_hsi_to_wavenumber(&zero).unwrap();
        assert!(nu.data().iter().all(|&v| v == 0.0));
        assert!(resample_wavenumber_to_hsi(&nu).unwrap().data().iter().all(|&v| v == 0.0));
        let pos = hsi_from(&profile, |l| (l / 100.0).sin().abs());
        assert!(resample_hsi_to_wavenumber(&pos).unwrap().data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn smooth_round_trip_within_two_percent() {
        for profile in [desk(), Arc::new(InstrumentProfile::standard(2))] {
            for poly in [
                [1.0, 0.0, 0.0],
                [1.0, 0.5, 0.0],
                [1.0, -0.8, 0.6],
                [0.2, 1.0, -0.5],
            ] {
                let f = |l: f64| {
                    let u = (l - 450.0) / 450.0;
                    poly[0] + poly[1] * u + poly[2] * u * u
                };
                let hsi = hsi_from(&profile, f);
                let back = resample_wavenumber_to_hsi(&resample_hsi_to_wavenumber(&hsi).unwrap()).unwrap();
                let err: f64 = (back.data() - hsi.data()).mapv(|v| v * v).sum().sqrt();
                let norm: f64 = hsi.data().mapv(|v| v * v).sum().sqrt();
                assert!(err / norm <= 0.02, "relative error {}", err / norm);
            }
        }
    }

    #[test]
    fn axis_is_checked() {
        let profile = desk();
        let hsi = hsi_from(&profile, |_| 1.0);
        assert!(matches!(
            resample_wavenumber_to_hsi(&hsi),
            Err(Error::AxisMismatch { .. })
        ));
        let nu = resample_hsi_to_wavenumber(&hsi).unwrap();
        assert!(resample_hsi_to_wavenumber(&nu).is_err());
    }
}
