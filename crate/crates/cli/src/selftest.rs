use std::sync::Arc;
use std::time::Instant;

use ihi_core::calibrate::{calibrate_all, parameter_errors, synthetic_calibration_set};
use ihi_core::cube::{resample_hsi_to_wavenumber, resample_wavenumber_to_hsi, AxisKind, Cube, InstrumentProfile};
use ihi_core::degrade::{degrade_with, synthetic_params, synthetic_truth, NoiseMode, SyntheticParamsConfig};
use ihi_core::evaluate::psnr;
use ihi_core::reconstruct::Reconstructor;
use ihi_core::rng::RngHandle;
use ihi_core::synthesize::{photometric_scale, synthetic_scene};
use ihi_core::transform::{build_inverse, TransformBasis};
use ihi_core::Result;
use ndarray::Array3;
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::commands::{Outcome, SelftestArgs};
use crate::{digest, Failure};

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "snake_case")]
enum Bound {
    AtMost(f64),
    AtLeast(f64),
}

impl Bound {
    fn holds(self, v: f64) -> bool {
        match self {
            Bound::AtMost(b) => v <= b,
            Bound::AtLeast(b) => v >= b,
        }
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b:.1e}"),
            Bound::AtLeast(b) => write!(f, ">= {b}"),
        }
    }
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    bound: Bound,
    passed: bool,
    seconds: f64,
}

fn check(name: &'static str, bound: Bound, f: impl FnOnce() -> Result<f64>) -> Check {
    let t0 = Instant::now();
    let (value, passed) = match f() {
        Ok(v) => (v, bound.holds(v)),
        Err(e) => {
            log::error!("{name}: {e}");
            (f64::NAN, false)
        }
    };
    Check {
        name,
        value,
        bound,
        passed,
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Worst median relative parameter error after calibrating simulated captures.
fn closed_loop(seed: u64) -> Result<f64> {
    let profile = Arc::new(InstrumentProfile::desk());
    let truth = synthetic_truth(profile, &SyntheticParamsConfig { seed, ..Default::default() });
    let set = synthetic_calibration_set(&truth.params, &truth.m_r, 1024, &[2e3, 5e3, 1e4], &RngHandle::new(seed))?;
    let (est, _) = calibrate_all(&set, truth.params.e)?;
    Ok(parameter_errors(&est, &truth.params).into_values().fold(0.0, f64::max))
}

/// Relative L2 error of `F′F x` over 100 in-band spectra.
fn round_trip(seed: u64) -> Result<f64> {
    let profile = Arc::new(InstrumentProfile::desk().with_rows(10));
    let params = synthetic_params(profile.clone(), &SyntheticParamsConfig { seed, ..Default::default() })
        .column_window(0, 10)?;
    let op = build_inverse(Arc::new(TransformBasis::new(profile.clone())), params.forward_model())?;
    let mut rng = RngHandle::new(seed).rng("selftest-spectra", 0);
    let band = profile.band_range();
    let x = Array3::from_shape_fn((10, 10, profile.n_nu()), |(_, _, j)| {
        if band.contains(&j) {
            rng.random_range(0.0..1.0)
        } else {
            0.0
        }
    });
    let x = Cube::new(x, AxisKind::Wavenumber, profile)?;
    let back = op.inverse(&op.forward(&x)?)?;
    let num = (back.data() - x.data()).mapv(|v| v * v).sum().sqrt();
    Ok(num / x.data().mapv(|v| v * v).sum().sqrt())
}

/// PSNR of `F′` on a noiseless synthetic scene.
fn noiseless_direct(seed: u64) -> Result<f64> {
    let profile = Arc::new(InstrumentProfile::desk().with_rows(16));
    let params = synthetic_params(profile.clone(), &SyntheticParamsConfig { seed, ..Default::default() });
    let scene = synthetic_scene(&profile, 16, profile.w, seed);
    let (scene, _) = photometric_scale(&scene, 1e4)?;
    let gt_nu = resample_hsi_to_wavenumber(&scene)?;
    let y = degrade_with(&gt_nu, &params, &RngHandle::new(seed), NoiseMode::Deterministic)?;
    let x = Reconstructor::new(&params)?.direct(&y)?;
    let reference = resample_wavenumber_to_hsi(&gt_nu)?;
    psnr(&x, &reference, None)
}

pub fn run(a: &SelftestArgs) -> std::result::Result<Outcome, Failure> {
    let cfg_digest = digest::config("selftest", a, &[]);
    let checks = [
        check("calibration worst median rel err", Bound::AtMost(0.05), || closed_loop(a.seed)),
        check("round trip rel L2", Bound::AtMost(1e-5), || round_trip(a.seed)),
        check("noiseless F' PSNR dB", Bound::AtLeast(60.0), || noiseless_direct(a.seed)),
    ];
    let failed = checks.iter().filter(|c| !c.passed).count();
    let rows = checks
        .iter()
        .map(|c| {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            (
                c.name.to_owned(),
                format!("{verdict}  {:.4e} ({}, {:.1} s)", c.value, c.bound, c.seconds),
            )
        })
        .collect();
    Ok(Outcome {
        command: "selftest",
        config_digest: cfg_digest,
        result: json!({ "checks": checks, "failed": failed }),
        rows,
        status: if failed == 0 {
            Ok(())
        } else {
            Err(Failure::Selftest(format!("{failed} of {} checks failed", checks.len())))
        },
    })
}
