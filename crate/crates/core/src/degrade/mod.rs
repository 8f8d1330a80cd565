//! The degradation simulator: optical stage, per-capture electronic gain,
//! then shot noise, dark offset and readout noise.

mod noise;
mod params;

use ndarray::{Array2, Array3, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cube::{spectral_mean, AxisKind, Cube};
use crate::error::{Error, Result};
use crate::rng::RngHandle;
use crate::transform::{apply_interferogram_transform, TransformBasis};

pub use noise::{normal, poisson, POISSON_NORMAL_THRESHOLD};
pub use params::{
    synthetic_params, synthetic_truth, DegradationParams, SyntheticParamsConfig, SyntheticTruth,
    PARAMS_VERSION,
};

/// Per-capture electronic parameters after the gain draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectronicGain {
    pub e_prime: f64,
    pub k: Array2<f64>,
    pub d: Array2<f64>,
    pub sigma_read: Array2<f64>,
}

impl ElectronicGain {
    /// The unscaled parameters (`e′ = 1`).
    pub fn nominal(params: &DegradationParams) -> Self {
        Self {
            e_prime: 1.0,
            k: params.k.clone(),
            d: params.d.clone(),
            sigma_read: params.sigma_read.clone(),
        }
    }
}

fn check_width(cube: &Cube, params: &DegradationParams) -> Result<()> {
    let (h, w, c) = cube.dim();
    if w != params.width() {
        return Err(Error::shape(
            "cube width against parameters",
            &[h, params.width(), c],
            &[h, w, c],
        ));
    }
    Ok(())
}

/// `I_O = M ⊙ (ℱ{A ⊙ B₀} + β ⊙ μ_N(B₀))`.
pub fn optical_degrade(b0: &Cube, params: &DegradationParams) -> Result<Cube> {
    b0.require_axis(AxisKind::Wavenumber)?;
    check_width(b0, params)?;
    if b0.profile().n_nu() != params.profile().n_nu() {
        return Err(Error::shape(
            "spectrum bins",
            &[params.profile().n_nu()],
            &[b0.profile().n_nu()],
        ));
    }
    let basis = TransformBasis::new(params.profile().clone());
    let i1 = apply_interferogram_transform(b0, &basis, params.a_re.view(), params.a_im.view())?;
    let mu = spectral_mean(b0);
    let mut out = i1.into_data();
    Zip::from(out.axis_iter_mut(Axis(1)))
        .and(mu.columns())
        .and(params.beta.rows())
        .and(params.m.rows())
        .par_for_each(|mut o, mu_w, beta, m| {
            for (mut pixel, &mu_hw) in o.rows_mut().into_iter().zip(mu_w) {
                Zip::from(&mut pixel)
                    .and(&beta)
                    .and(&m)
                    .for_each(|v, &b, &mm| *v = mm * (*v + b * mu_hw));
            }
        });
    Cube::new(out, AxisKind::Opd, params.profile().clone())
}

/// Draws `log e′ ~ Normal(0, e)` once and scales K, D and σ_read by `e′`.
pub fn sample_electronic_gain(params: &DegradationParams, rng: &RngHandle) -> ElectronicGain {
    let e_prime = if params.e == 0.0 {
        1.0
    } else {
        let dist = Normal::new(0.0, params.e).expect("e validated as finite and >= 0");
        dist.sample(&mut rng.rng("electronic-gain", 0)).exp()
    };
    ElectronicGain {
        e_prime,
        k: &params.k * e_prime,
        d: &params.d * e_prime,
        sigma_read: &params.sigma_read * e_prime,
    }
}

/// `I_d = K′ ⊙ Poisson(max(I_O, 0)) + D′ + Normal(0, σ′_read)`.
///
/// Every column draws from its own stream, so the output does not depend on
/// the number of threads.
pub fn electronic_degrade(io: &Cube, gain: &ElectronicGain, rng: &RngHandle) -> Result<Cube> {
    io.require_axis(AxisKind::Opd)?;
    let (h, w, l) = io.dim();
    for (name, map) in [("K'", &gain.k), ("D'", &gain.d), ("sigma_read'", &gain.sigma_read)] {
        if map.dim() != (w, l) {
            return Err(Error::shape(name, &[w, l], map.shape()));
        }
    }
    let mut out = Array3::zeros((h, w, l));
    Zip::indexed(out.axis_iter_mut(Axis(1)))
        .and(io.data().axis_iter(Axis(1)))
        .and(gain.k.rows())
        .and(gain.d.rows())
        .and(gain.sigma_read.rows())
        .par_for_each(|col, mut o, x, k, d, s| {
            let mut r = rng.rng("electronic", col as u64);
            for row in 0..h {
                for i in 0..l {
                    let shot = poisson(&mut r, x[[row, i]]);
                    let read = if s[i] > 0.0 { s[i] * normal(&mut r) } else { 0.0 };
                    o[[row, i]] = k[i] * shot + d[i] + read;
                }
            }
        });
    Cube::new(out, AxisKind::Opd, io.profile().clone())
}

/// Whether [`degrade`] samples noise or evaluates the expected value path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Stochastic,
    /// `e′ = 1`, Poisson replaced by identity, no readout noise. For composition tests only.
    Deterministic,
}

/// Full chain `G_Ω`: optical stage, one electronic gain draw, electronic stage.
pub fn degrade(b0: &Cube, params: &DegradationParams, rng: &RngHandle) -> Result<Cube> {
    degrade_with(b0, params, rng, NoiseMode::Stochastic)
}

pub fn degrade_with(
    b0: &Cube,
    params: &DegradationParams,
    rng: &RngHandle,
    mode: NoiseMode,
) -> Result<Cube> {
    let io = optical_degrade(b0, params)?;
    match mode {
        NoiseMode::Stochastic => {
            let gain = sample_electronic_gain(params, rng);
            electronic_degrade(&io, &gain, rng)
        }
        NoiseMode::Deterministic => {
            let mut y = io.into_data();
            Zip::from(y.axis_iter_mut(Axis(1)))
                .and(params.k.rows())
                .and(params.d.rows())
                .par_for_each(|mut o, k, d| {
                    for mut pixel in o.rows_mut() {
                        Zip::from(&mut pixel).and(&k).and(&d).for_each(|v, &kk, &dd| *v = kk * *v + dd);
                    }
                });
            Cube::new(y, AxisKind::Opd, params.profile().clone())
        }
    }
}

/// Uniform random spectra, handy for tests and quick simulations.
pub fn random_spectra(
    profile: &std::sync::Arc<crate::cube::InstrumentProfile>,
    h: usize,
    w: usize,
    scale: f64,
    rng: &RngHandle,
) -> Cube {
    let mut r = rng.rng("random-spectra", 0);
    let data = Array3::from_shape_fn((h, w, profile.n_nu()), |_| scale * r.random::<f64>());
    Cube::new(data, AxisKind::Wavenumber, profile.clone()).expect("finite by construction")
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::cube::{column_stats, InstrumentProfile};

    fn params(w: usize) -> DegradationParams {
        let profile = Arc::new(InstrumentProfile::desk().with_width(w));
        synthetic_params(profile, &SyntheticParamsConfig::default())
    }

    fn flat_in_band(p: &DegradationParams, h: usize, level: f64) -> Cube {
        let profile = p.profile().clone();
        let band = profile.band_range();
        let data = Array3::from_shape_fn((h, p.width(), profile.n_nu()), |(_, _, j)| {
            if band.contains(&j) {
                level
            } else {
                0.0
            }
        });
        Cube::new(data, AxisKind::Wavenumber, profile).unwrap()
    }

    #[test]
    fn zero_input_gives_zero_optical() {
        let p = params(3);
        let b0 = Cube::zeros(2, 3, AxisKind::Wavenumber, p.profile().clone());
        assert!(optical_degrade(&b0, &p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_background_unit_m_is_plain_transform() {
        let mut p = params(3);
        p.beta.fill(0.0);
        p.m.fill(1.0);
        let b0 = random_spectra(p.profile(), 2, 3, 10.0, &RngHandle::new(1));
        let basis = TransformBasis::new(p.profile().clone());
        let i1 = apply_interferogram_transform(&b0, &basis, p.a_re.view(), p.a_im.view()).unwrap();
        assert_eq!(optical_degrade(&b0, &p).unwrap(), i1);
    }

    #[test]
    fn zero_opd_row_is_hand_sum() {
        let mut p = params(2);
        let band = p.profile().band_range();
        p.a_re.fill(0.0);
        p.a_im.fill(0.0);
        for j in band.clone() {
            p.a_re[[0, j]] = 1.0;
            p.a_re[[1, j]] = 1.0;
        }
        let b0 = flat_in_band(&p, 1, 3.0);
        let io = optical_degrade(&b0, &p).unwrap();
        let c = p.profile().center();
        let n = p.profile().n_nu() as f64;
        let sum = 3.0 * band.len() as f64;
        for w in 0..2 {
            let expected = p.m[[w, c]] * (sum + p.beta[[w, c]] * sum / n);
            assert!((io.data()[[0, w, c]] - expected).abs() < 1e-9 * expected);
        }
    }

    #[test]
    fn unit_gain_draw_when_e_is_zero() {
        let p = params(2);
        let g = sample_electronic_gain(&p, &RngHandle::new(5));
        assert_eq!(g, ElectronicGain::nominal(&p));
    }

    #[test]
    fn log_gain_spread_matches_e() {
        let mut p = params(1);
        p.e = 0.1;
        let n = 100_000;
        let logs: Vec<f64> = (0..n)
            .map(|s| sample_electronic_gain(&p, &RngHandle::with_stream(9, s)).e_prime.ln())
            .collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        let sd = (logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((0.098..=0.102).contains(&sd), "{sd}");
        let a = sample_electronic_gain(&p, &RngHandle::new(3));
        let b = sample_electronic_gain(&p, &RngHandle::new(3));
        assert_eq!(a, b);
    }

    fn constant_io(h: usize, w: usize, rate: f64) -> Cube {
        let profile = Arc::new(InstrumentProfile::desk().with_width(w));
        let data = Array3::from_elem((h, w, profile.n_opd()), rate);
        Cube::new(data, AxisKind::Opd, profile).unwrap()
    }

    fn unit_gain(w: usize, l: usize, k: f64) -> ElectronicGain {
        ElectronicGain {
            e_prime: 1.0,
            k: Array2::from_elem((w, l), k),
            d: Array2::zeros((w, l)),
            sigma_read: Array2::zeros((w, l)),
        }
    }

    #[test]
    fn dark_only_when_no_light_and_no_read_noise() {
        let io = constant_io(3, 2, 0.0);
        let mut g = unit_gain(2, 64, 1.3);
        g.d.fill(100.0);
        let y = electronic_degrade(&io, &g, &RngHandle::new(0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 100.0));
    }

    #[test]
    fn shot_noise_statistics() {
        // 1563 × 64 ≈ 10⁵ samples per column
        let io = constant_io(1563, 1, 1000.0);
        let y = electronic_degrade(&io, &unit_gain(1, 64, 1.0), &RngHandle::new(2)).unwrap();
        let v: Vec<f64> = y.data().iter().cloned().collect();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((996.9..=1003.1).contains(&mean), "{mean}");
        assert!((0.97..=1.03).contains(&(var / mean)), "{}", var / mean);

        let y2 = electronic_degrade(&io, &unit_gain(1, 64, 2.0), &RngHandle::new(2)).unwrap();
        let v2: Vec<f64> = y2.data().iter().cloned().collect();
        let m2 = v2.iter().sum::<f64>() / n;
        let var2 = v2.iter().map(|x| (x - m2).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var2 / 4000.0 - 1.0).abs() < 0.03, "{var2}");
    }

    #[test]
    fn noise_grows_with_gain() {
        let io = constant_io(256, 2, 500.0);
        let mut vars = Vec::new();
        for k in [1.0, 3.0] {
            let mut g = unit_gain(2, 64, k);
            g.sigma_read.fill(4.0);
            let y = electronic_degrade(&io, &g, &RngHandle::new(4)).unwrap();
            vars.push(column_stats(&y).unwrap().variance().mean().unwrap());
        }
        assert!(vars[1] > vars[0]);
    }

    #[test]
    fn deterministic_mode_composes() {
        let p = params(3);
        let b0 = random_spectra(p.profile(), 2, 3, 100.0, &RngHandle::new(1));
        let y = degrade_with(&b0, &p, &RngHandle::new(0), NoiseMode::Deterministic).unwrap();
        let io = optical_degrade(&b0, &p).unwrap();
        let expected = &(io.data() * &p.k.view().insert_axis(Axis(0))) + &p.d.view().insert_axis(Axis(0));
        let dev = (&expected - y.data()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev < 1e-9);
    }

    #[test]
    fn replay_and_column_independence() {
        let p = params(4);
        let b0 = random_spectra(p.profile(), 3, 4, 1e4, &RngHandle::new(1));
        let rng = RngHandle::new(11);
        let a = degrade(&b0, &p, &rng).unwrap();
        let b = degrade(&b0, &p, &rng).unwrap();
        assert_eq!(a, b);
        let mut q = p.clone();
        q.k.row_mut(2).mapv_inplace(|v| v * 1.5);
        q.beta.row_mut(2).mapv_inplace(|v| v * 0.5);
        let c = degrade(&b0, &q, &rng).unwrap();
        for w in 0..4 {
            let same = a.data().index_axis(Axis(1), w) == c.data().index_axis(Axis(1), w);
            assert_eq!(same, w != 2, "column {w}");
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let p = params(3);
        let b0 = Cube::zeros(1, 4, AxisKind::Wavenumber, p.profile().clone());
        assert!(matches!(optical_degrade(&b0, &p), Err(Error::ShapeMismatch { .. })));
    }
}
