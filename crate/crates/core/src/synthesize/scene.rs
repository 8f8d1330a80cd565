//! Procedural hyperspectral scenes for tests and demos.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::cube::{AxisKind, Cube, InstrumentProfile};
use crate::rng::RngHandle;

/// Piecewise-smooth reflectance scene: a few materials with smooth spectra
/// laid out as Voronoi regions, modulated by a gentle shading field.
///
/// Values lie in `(0, 1]`.
pub fn synthetic_scene(profile: &Arc<InstrumentProfile>, h: usize, w: usize, seed: u64) -> Cube {
    let handle = RngHandle::new(seed);
    let mut rng = handle.rng("scene", 0);
    let lambda = profile.lambda_grid();
    let (lo, hi) = (lambda[0], lambda[lambda.len() - 1]);
    let n_materials = 5;
    let spectra: Vec<Vec<f64>> = (0..n_materials)
        .map(|_| {
            let base = rng.random_range(0.15..0.4);
            let peaks: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| {
                    (
                        rng.random_range(lo..hi),
                        rng.random_range(40.0..150.0),
                        rng.random_range(0.1..0.5),
                    )
                })
                .collect();
            let slope = rng.random_range(-0.15..0.15);
            lambda
                .iter()
                .map(|&l| {
                    let t = (l - lo) / (hi - lo);
                    let bumps: f64 = peaks
                        .iter()
                        .map(|&(c, s, a)| a * (-0.5 * ((l - c) / s).powi(2)).exp())
                        .sum();
                    (base + slope * (t - 0.5) + bumps).clamp(0.02, 1.0)
                })
                .collect()
        })
        .collect();
    let n_sites = 7;
    let sites: Vec<(f64, f64, usize)> = (0..n_sites)
        .map(|k| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                k % n_materials,
            )
        })
        .collect();
    let fx = rng.random_range(0.5..2.0);
    let fy = rng.random_range(0.5..2.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let shading = Array2::from_shape_fn((h, w), |(y, x)| {
        let u = x as f64 / w.max(1) as f64;
        let v = y as f64 / h.max(1) as f64;
        0.8 + 0.2 * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin()
    });
    let data = Array3::from_shape_fn((h, w, lambda.len()), |(y, x, c)| {
        let (mut best, mut best_d) = (0, f64::INFINITY);
        for &(sy, sx, m) in &sites {
            let d = (sy - y as f64).powi(2) + (sx - x as f64).powi(2);
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        (shading[[y, x]] * spectra[best][c]).min(1.0)
    });
    Cube::new(data, AxisKind::Wavelength, profile.clone()).expect("finite by construction")
}
