use std::fs;
use std::path::Path;
use std::sync::Arc;

use ihi_core::cube::{write_cube, AxisKind, Cube, Dtype, InstrumentProfile};
use ihi_core::degrade::{synthetic_params, SyntheticParamsConfig};
use ihi_core::evaluate::{evaluate_run, psnr, ssim, EvalConfig, EvalMethod, SsimOptions};
use ihi_core::reconstruct::Method;
use ihi_core::rng::RngHandle;
use ihi_core::synthesize::{make_dataset, synthetic_scene, DatasetConfig};
use ihi_core::Error;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;

fn hsi(data: Array3<f64>) -> Cube {
    Cube::new(data, AxisKind::Wavelength, Arc::new(InstrumentProfile::desk())).unwrap()
}

fn random(h: usize, w: usize, seed: u64) -> Cube {
    let mut rng = RngHandle::new(seed).rng("metric", 0);
    hsi(Array3::from_shape_fn((h, w, 16), |_| rng.random_range(0.0..1.0)))
}

/// Full 2-D Gaussian window evaluated at every valid position.
fn naive_ssim_plane(x: ArrayView2<f64>, y: ArrayView2<f64>, peak: f64) -> f64 {
    let n = 11;
    let c = 5.0;
    let mut g = Array2::from_shape_fn((n, n), |(i, j)| {
        (-((i as f64 - c).powi(2) + (j as f64 - c).powi(2)) / (2.0 * 1.5 * 1.5)).exp()
    });
    let s = g.sum();
    g /= s;
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let (h, w) = x.dim();
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..=h - n {
        for j in 0..=w - n {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let (u, v, k) = (x[[i + a, j + b]], y[[i + a, j + b]], g[[a, b]]);
                    mx += k * u;
                    my += k * v;
                    sxx += k * u * u;
                    syy += k * v * v;
                    sxy += k * u * v;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn psnr_identities() {
    let r = random(12, 12, 1);
    assert_eq!(psnr(&r, &r, None).unwrap(), f64::INFINITY);
    let ones = hsi(Array3::from_elem((4, 4, 16), 1.0));
    let nines = hsi(Array3::from_elem((4, 4, 16), 0.9));
    assert!((psnr(&nines, &ones, Some(1.0)).unwrap() - 20.0).abs() < 1e-12);
    let x = random(12, 12, 2);
    let base = psnr(&x, &r, Some(2.0)).unwrap();
    let shifted = psnr(&x.with_data(x.data() + 5.0).unwrap(), &r.with_data(r.data() + 5.0).unwrap(), Some(2.0)).unwrap();
    assert!((base - shifted).abs() < 1e-9);
    assert!(matches!(psnr(&random(12, 11, 3), &r, None), Err(Error::ShapeMismatch { .. })));
    assert_eq!(format!("{:.2}", 39.4567), "39.46");
}

#[test]
fn ssim_matches_direct_window_sum() {
    let r = random(16, 20, 4);
    let x = r.with_data(r.data() * 0.8 + random(16, 20, 5).data() * 0.2).unwrap();
    let peak = r.data().iter().cloned().fold(f64::MIN, f64::max);
    let expected: f64 = (0..16)
        .map(|c| naive_ssim_plane(x.data().index_axis(Axis(2), c), r.data().index_axis(Axis(2), c), peak))
        .sum::<f64>()
        / 16.0;
    let got = ssim(&x, &r, &SsimOptions::default()).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn ssim_identities() {
    let opts = SsimOptions::default();
    let r = random(16, 16, 6);
    assert!((ssim(&r, &r, &opts).unwrap() - 1.0).abs() < 1e-12);
    let x = random(16, 16, 7);
    let fixed = SsimOptions { peak: Some(1.0), ..opts };
    assert!((ssim(&x, &r, &fixed).unwrap() - ssim(&r, &x, &fixed).unwrap()).abs() < 1e-12);
    let c = hsi(Array3::from_elem((12, 12, 16), 0.4));
    assert!((ssim(&c, &c, &opts).unwrap() - 1.0).abs() < 1e-12);
    let binary = hsi(Array3::from_shape_fn((16, 16, 16), |(i, j, k)| ((i / 2 + j / 3 + k) % 2) as f64));
    let inverted = binary.with_data(binary.data().mapv(|v| 1.0 - v)).unwrap();
    let v = ssim(&inverted, &binary, &SsimOptions { peak: Some(1.0), ..opts }).unwrap();
    assert!(v < 0.1, "{v}");
    assert!((-1.0..=1.0).contains(&ssim(&x, &r, &opts).unwrap()));
    assert!(ssim(&random(10, 16, 8), &random(10, 16, 9), &opts).is_err());
}

fn dataset(root: &Path) -> std::path::PathBuf {
    let p = Arc::new(InstrumentProfile::desk());
    let src = root.join("src");
    fs::create_dir_all(&src).unwrap();
    write_cube(&synthetic_scene(&p, 32, 32, 1), &src.join("a.ihic"), Dtype::F64).unwrap();
    write_cube(&synthetic_scene(&p, 16, 24, 2), &src.join("b.ihic"), Dtype::F64).unwrap();
    write_cube(&synthetic_scene(&p, 12, 40, 3), &src.join("c.ihic"), Dtype::F64).unwrap();
    let params = synthetic_params(p, &SyntheticParamsConfig::default());
    let out = root.join("ds");
    let cfg = DatasetConfig {
        patch_h: 16,
        patch_w: 16,
        stride: 16,
        test_sources: vec!["b".into(), "c".into()],
        dtype: Dtype::F64,
        ..Default::default()
    };
    make_dataset(&src, &params, &cfg, &out).unwrap();
    out
}

fn config(method: EvalMethod) -> EvalConfig {
    EvalConfig {
        method,
        ssim: SsimOptions::default(),
        error_dir: None,
    }
}

#[test]
fn ground_truth_passthrough_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path());
    let rep = evaluate_run(&ds, &config(EvalMethod::GroundTruth)).unwrap();
    assert_eq!(rep.scenes.len(), 2);
    for s in &rep.scenes {
        assert!(s.psnr_infinite && s.psnr_db.is_none());
        assert!((s.ssim - 1.0).abs() < 1e-12);
    }
    assert!(rep.mean_psnr_infinite);
    let json = serde_json::to_string(&rep).unwrap();
    assert!(json.contains("\"psnr_infinite\":true"));
}

#[test]
fn reports_are_reproducible_and_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path());
    let errs = tmp.path().join("errors");
    let cfg = EvalConfig {
        error_dir: Some(errs.clone()),
        ..config(EvalMethod::Reconstruct(Method::Fprime))
    };
    let a = evaluate_run(&ds, &cfg).unwrap();
    let b = evaluate_run(&ds, &cfg).unwrap();
    assert_eq!(a.digest, b.digest);
    assert_eq!(a.config_digest, b.config_digest);
    let mean_p = a.scenes.iter().map(|s| s.psnr()).sum::<f64>() / a.scenes.len() as f64;
    let mean_s = a.scenes.iter().map(|s| s.ssim).sum::<f64>() / a.scenes.len() as f64;
    assert!((a.mean_psnr_db.unwrap() - mean_p).abs() <= 1e-12);
    assert!((a.mean_ssim - mean_s).abs() <= 1e-12);
    assert!(a.scenes.iter().all(|s| s.psnr() > 20.0), "{:?}", a.scenes);
    assert!(errs.join("0000.abs_err.ihic").exists());
    assert!(errs.join("0001.abs_err.ihic").exists());

    let other = evaluate_run(&ds, &config(EvalMethod::Reconstruct(Method::Traditional))).unwrap();
    assert_ne!(other.config_digest, a.config_digest);
    assert_ne!(other.digest, a.digest);
}

#[test]
fn missing_dataset_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let err = evaluate_run(&tmp.path().join("nothing"), &config(EvalMethod::GroundTruth)).unwrap_err();
    assert!(err.is_io());
    assert!(err.to_string().contains("nothing"));
}
