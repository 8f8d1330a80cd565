//! Per-column statistics along the spatial H axis, and the per-pixel
//! spectral mean μ_N.

use ndarray::{Array2, Array3, Axis, Zip};

use super::Cube;
use crate::error::{Error, Result};

/// Mean and unbiased standard deviation over H for every `(w, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

impl ColumnStats {
    pub fn variance(&self) -> Array2<f64> {
        self.std.mapv(|s| s * s)
    }
}

pub fn column_stats(cube: &Cube) -> Result<ColumnStats> {
    column_stats_array(cube.data())
}

/// Welford's single-pass update, serial along H so the result does not
/// depend on the thread count.
pub fn column_stats_array(data: &Array3<f64>) -> Result<ColumnStats> {
    let (h, w, c) = data.dim();
    if h < 2 {
        return Err(Error::Degenerate(format!(
            "column statistics need H >= 2, got H = {h}"
        )));
    }
    let mut mean = Array2::zeros((w, c));
    let mut std = Array2::zeros((w, c));
    Zip::from(&mut mean)
        .and(&mut std)
        .and(data.lanes(Axis(0)))
        .par_for_each(|m, s, lane| {
            let mut mu = 0.0;
            let mut m2 = 0.0;
            for (k, &x) in lane.iter().enumerate() {
                let delta = x - mu;
                mu += delta / (k + 1) as f64;
                m2 += delta * (x - mu);
            }
            *m = mu;
            *s = (m2 / (h - 1) as f64).max(0.0).sqrt();
        });
    Ok(ColumnStats { mean, std })
}

/// μ_N: mean over the spectral axis, an `H × W` map.
pub fn spectral_mean(cube: &Cube) -> Array2<f64> {
    cube.data()
        .mean_axis(Axis(2))
        .expect("cubes have at least one channel")
}
