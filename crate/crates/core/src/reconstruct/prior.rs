//! Denoisers for the unfolding step.

use std::str::FromStr;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bridge::{BridgeConfig, BridgePrior};
use crate::cube::Cube;
use crate::error::{Error, PriorError, Result};

/// A denoiser applied to a wavenumber cube at each unfolding stage.
///
/// Implementations must return a cube of the same shape with finite values.
pub trait PriorOp: Send {
    fn denoise(&mut self, x: &Cube, stage: usize) -> Result<Cube, PriorError>;
}

/// Returns its input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPrior;

impl PriorOp for IdentityPrior {
    fn denoise(&mut self, x: &Cube, _stage: usize) -> Result<Cube, PriorError> {
        Ok(x.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SoftThresholdPrior {
    pub tau: f64,
}

impl PriorOp for SoftThresholdPrior {
    fn denoise(&mut self, x: &Cube, _stage: usize) -> Result<Cube, PriorError> {
        Ok(soft_threshold(x, self.tau))
    }
}

/// Regularization weight for [`TvPrior`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvWeight {
    Fixed(f64),
    /// Multiple of each channel's estimated noise level.
    Auto(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct TvPrior {
    pub weight: TvWeight,
    pub iters: usize,
}

impl PriorOp for TvPrior {
    fn denoise(&mut self, x: &Cube, _stage: usize) -> Result<Cube, PriorError> {
        let channels = x.dim().2;
        let lambda = match self.weight {
            TvWeight::Fixed(l) => Array1::from_elem(channels, l),
            TvWeight::Auto(f) => estimate_noise(x) * f,
        };
        Ok(total_variation(x, lambda.view(), self.iters))
    }
}

/// Serializable prior selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PriorSpec {
    Identity,
    SoftThreshold { tau: f64 },
    Tv { weight: TvWeight, iters: usize },
    External(BridgeConfig),
}

pub const DEFAULT_TV_ITERS: usize = 50;

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            PriorSpec::Identity | PriorSpec::External(_) => true,
            PriorSpec::SoftThreshold { tau } => tau.is_finite() && *tau >= 0.0,
            PriorSpec::Tv { weight, .. } => {
                let (TvWeight::Fixed(v) | TvWeight::Auto(v)) = weight;
                v.is_finite() && *v >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior parameters: {self:?}")))
        }
    }

    pub fn build(&self) -> Result<Box<dyn PriorOp>, PriorError> {
        Ok(match self {
            PriorSpec::Identity => Box::new(IdentityPrior),
            PriorSpec::SoftThreshold { tau } => Box::new(SoftThresholdPrior { tau: *tau }),
            PriorSpec::Tv { weight, iters } => Box::new(TvPrior {
                weight: *weight,
                iters: *iters,
            }),
            PriorSpec::External(cfg) => Box::new(BridgePrior::spawn(cfg)?),
        })
    }
}

fn parse_number(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("prior {what}: {s:?} is not a number")))
}

impl FromStr for PriorSpec {
    type Err = Error;

    /// `identity`, `soft:<tau>`, `tv:<lambda>[:<iters>]`,
    /// `tv-auto:<factor>[:<iters>]` or `external:<command> [args...]`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let iters = |r: Option<&str>| -> Result<usize> {
            match r {
                None => Ok(DEFAULT_TV_ITERS),
                Some(t) => t
                    .parse()
                    .map_err(|_| Error::Config(format!("prior iterations: {t:?}"))),
            }
        };
        let spec = match kind {
            "identity" => PriorSpec::Identity,
            "soft" => PriorSpec::SoftThreshold {
                tau: parse_number(rest, "threshold")?,
            },
            "tv" | "tv-auto" => {
                let mut parts = rest.splitn(2, ':');
                let v = parse_number(parts.next().unwrap_or(""), "weight")?;
                let weight = if kind == "tv" { TvWeight::Fixed(v) } else { TvWeight::Auto(v) };
                PriorSpec::Tv {
                    weight,
                    iters: iters(parts.next())?,
                }
            }
            "external" => {
                let mut words = rest.split_whitespace();
                let command = words
                    .next()
                    .ok_or_else(|| Error::Config("external prior needs a command".into()))?;
                PriorSpec::External(BridgeConfig {
                    command: command.into(),
                    args: words.map(String::from).collect(),
                    ..BridgeConfig::default()
                })
            }
            other => return Err(Error::Config(format!("unknown prior {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Shrinks the in-band spectral differences `x[j+1] − x[j]` by `tau` and
/// re-integrates, keeping each pixel's in-band mean.
pub fn soft_threshold(x: &Cube, tau: f64) -> Cube {
    if tau == 0.0 {
        return x.clone();
    }
    let band = x.profile().band_range();
    let mut out = x.data().clone();
    if band.len() < 2 || band.end > out.dim().2 {
        return x.clone();
    }
    Zip::from(out.lanes_mut(Axis(2))).par_for_each(|mut lane| {
        let mut v = lane.slice_mut(s![band.clone()]);
        let mean = v.mean().unwrap_or(0.0);
        let mut acc = 0.0;
        let mut prev = v[0];
        let mut rebuilt = Vec::with_capacity(v.len());
        rebuilt.push(0.0);
        for k in 1..v.len() {
            let d = v[k] - prev;
            prev = v[k];
            acc += d.signum() * (d.abs() - tau).max(0.0);
            rebuilt.push(acc);
        }
        let shift = mean - rebuilt.iter().sum::<f64>() / rebuilt.len() as f64;
        for (o, r) in v.iter_mut().zip(rebuilt) {
            *o = r + shift;
        }
    });
    x.with_data(out).expect("same shape")
}

/// Per-channel noise level from the median absolute horizontal and vertical
/// neighbour differences, `σ̂ = median|Δ| / (0.6745·√2)`.
pub fn estimate_noise(x: &Cube) -> Array1<f64> {
    let data = x.data();
    let channels = data.dim().2;
    (0..channels)
        .into_par_iter()
        .map(|c| {
            let ch = data.index_axis(Axis(2), c);
            let (h, w) = ch.dim();
            let mut diffs = Vec::with_capacity(2 * h * w);
            for i in 0..h {
                for j in 0..w {
                    if j + 1 < w {
                        diffs.push((ch[[i, j + 1]] - ch[[i, j]]).abs());
                    }
                    if i + 1 < h {
                        diffs.push((ch[[i + 1, j]] - ch[[i, j]]).abs());
                    }
                }
            }
            if diffs.is_empty() {
                return 0.0;
            }
            let mid = diffs.len() / 2;
            let (_, m, _) = diffs.select_nth_unstable_by(mid, f64::total_cmp);
            *m / (0.6745 * std::f64::consts::SQRT_2)
        })
        .collect::<Vec<_>>()
        .into()
}

/// Isotropic total-variation denoising of every channel over the spatial
/// axes: `argmin_u ½‖u − x‖² + λ_c·TV(u)`, by Chambolle's dual projection
/// with step 1/8.
pub fn total_variation(x: &Cube, lambda: ndarray::ArrayView1<f64>, iters: usize) -> Cube {
    let data = x.data();
    let (h, w, channels) = data.dim();
    let planes: Vec<Array2<f64>> = (0..channels)
        .into_par_iter()
        .map(|c| tv_plane(data.index_axis(Axis(2), c), lambda[c], iters))
        .collect();
    let mut out = Array3::zeros((h, w, channels));
    for (c, plane) in planes.into_iter().enumerate() {
        out.index_axis_mut(Axis(2), c).assign(&plane);
    }
    x.with_data(out).expect("same shape")
}

fn divergence(px: &Array2<f64>, py: &Array2<f64>) -> Array2<f64> {
    let (h, w) = px.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let dx = if w == 1 {
            0.0
        } else if j == 0 {
            px[[i, j]]
        } else if j + 1 == w {
            -px[[i, j - 1]]
        } else {
            px[[i, j]] - px[[i, j - 1]]
        };
        let dy = if h == 1 {
            0.0
        } else if i == 0 {
            py[[i, j]]
        } else if i + 1 == h {
            -py[[i - 1, j]]
        } else {
            py[[i, j]] - py[[i - 1, j]]
        };
        dx + dy
    })
}

fn tv_plane(f: ArrayView2<f64>, lambda: f64, iters: usize) -> Array2<f64> {
    if lambda <= 0.0 || iters == 0 {
        return f.to_owned();
    }
    let (h, w) = f.dim();
    let tau = 0.125;
    let mut px = Array2::zeros((h, w));
    let mut py = Array2::zeros((h, w));
    for _ in 0..iters {
        let g = divergence(&px, &py) - &f / lambda;
        for i in 0..h {
            for j in 0..w {
                let gx = if j + 1 < w { g[[i, j + 1]] - g[[i, j]] } else { 0.0 };
                let gy = if i + 1 < h { g[[i + 1, j]] - g[[i, j]] } else { 0.0 };
                let norm = (gx * gx + gy * gy).sqrt();
                px[[i, j]] = (px[[i, j]] + tau * gx) / (1.0 + tau * norm);
                py[[i, j]] = (py[[i, j]] + tau * gy) / (1.0 + tau * norm);
            }
        }
    }
    &f - &(divergence(&px, &py) * lambda)
}
