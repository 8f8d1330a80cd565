//! Spectrum recovery from interferograms: the direct pseudo-inverse, a
//! simplified traditional pipeline and an unfolding iteration with a
//! pluggable denoiser.

mod bridge;
mod prior;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::cube::{resample_wavenumber_to_hsi, spectral_mean, AxisKind, Cube};
use crate::degrade::DegradationParams;
use crate::error::{Error, PriorError, Result};
use crate::transform::{pseudo_inverse, ImagingOperator, TransformBasis};

pub use bridge::{read_frame, write_frame, BridgeConfig, BridgePrior, FRAME_MAGIC, MAX_PAYLOAD};
pub use prior::{
    estimate_noise, soft_threshold, total_variation, IdentityPrior, PriorOp, PriorSpec,
    SoftThresholdPrior, TvPrior, TvWeight,
};

const PINV_CUTOFF: f64 = 1e-10;

/// What `precorrect` removes from the raw interferogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundMode {
    None,
    #[default]
    DarkOnly,
    DarkBackground,
}

impl fmt::Display for BackgroundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackgroundMode::None => "none",
            BackgroundMode::DarkOnly => "dark-only",
            BackgroundMode::DarkBackground => "dark+background",
        })
    }
}

impl FromStr for BackgroundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BackgroundMode::None),
            "dark" | "dark-only" => Ok(BackgroundMode::DarkOnly),
            "dark+background" | "dark-background" | "full" => Ok(BackgroundMode::DarkBackground),
            other => Err(Error::Config(format!(
                "unknown background mode {other:?} (none, dark-only, dark+background)"
            ))),
        }
    }
}

/// Step weight applied to `F′(y′ − F x)`, on the wavenumber grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alpha {
    Scalar(f64),
    /// One weight per detector column.
    PerColumn(Array1<f64>),
    /// `W × N` map.
    PerBin(Array2<f64>),
}

impl Default for Alpha {
    fn default() -> Self {
        Alpha::Scalar(1.0)
    }
}

impl Alpha {
    fn validate(&self, w: usize, n: usize) -> Result<()> {
        let values: Box<dyn Iterator<Item = &f64>> = match self {
            Alpha::Scalar(a) => Box::new(std::iter::once(a)),
            Alpha::PerColumn(a) => {
                if a.len() != w {
                    return Err(Error::shape("alpha per column", &[w], a.shape()));
                }
                Box::new(a.iter())
            }
            Alpha::PerBin(a) => {
                if a.dim() != (w, n) {
                    return Err(Error::shape("alpha map", &[w, n], a.shape()));
                }
                Box::new(a.iter())
            }
        };
        for &v in values {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("alpha must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    fn weight(&self, w: usize, j: usize) -> f64 {
        match self {
            Alpha::Scalar(a) => *a,
            Alpha::PerColumn(a) => a[w],
            Alpha::PerBin(a) => a[[w, j]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfoldConfig {
    pub stages: usize,
    pub alpha: Alpha,
    pub prior: PriorSpec,
    pub background: BackgroundMode,
    /// Adds `x_k − x_{k−1}` to the gradient step.
    pub momentum: bool,
}

impl Default for UnfoldConfig {
    fn default() -> Self {
        Self {
            stages: 5,
            alpha: Alpha::default(),
            prior: PriorSpec::Identity,
            background: BackgroundMode::DarkOnly,
            momentum: false,
        }
    }
}

impl UnfoldConfig {
    pub fn validate(&self, w: usize, n: usize) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("unfold needs at least one stage".into()));
        }
        self.alpha.validate(w, n)?;
        self.prior.validate()
    }
}

/// Output of [`Reconstructor::unfold`].
#[derive(Debug, Clone)]
pub struct UnfoldResult {
    pub hsi: Cube,
    /// Final spectrum `x_K` on the wavenumber grid.
    pub spectrum: Cube,
    /// `‖y′ − F x_k‖` for `k = 0..=K`.
    pub trace: Vec<f64>,
}

/// Parameters, imaging operator and derived background response, built once
/// and shared by every method.
#[derive(Debug)]
pub struct Reconstructor {
    params: DegradationParams,
    op: ImagingOperator,
    /// `F′(K⊙M⊙β)` per column, `W × N`.
    background_response: Array2<f64>,
}

impl Reconstructor {
    pub fn new(params: &DegradationParams) -> Result<Self> {
        params.validate()?;
        let basis = Arc::new(TransformBasis::new(params.profile().clone()));
        let op = ImagingOperator::new(basis, params.forward_model())?;
        op.prepare()?;
        let (w, n) = (params.width(), params.profile().n_nu());
        let mut background_response = Array2::zeros((w, n));
        Zip::indexed(background_response.rows_mut()).par_for_each(|col, mut row| {
            let column = op.column(col).expect("prepared above");
            let g = &op.model().gain.row(col) * &params.beta.row(col);
            row.assign(&column.pinv.dot(&g));
        });
        Ok(Self {
            params: params.clone(),
            op,
            background_response,
        })
    }

    pub fn params(&self) -> &DegradationParams {
        &self.params
    }

    pub fn operator(&self) -> &ImagingOperator {
        &self.op
    }

    fn check_input(&self, y: &Cube) -> Result<()> {
        y.require_axis(AxisKind::Opd)?;
        let (h, w, l) = y.dim();
        let expected = [h, self.params.width(), self.params.profile().n_opd()];
        if [h, w, l] != expected {
            return Err(Error::shape("interferogram", &expected, &[h, w, l]));
        }
        Ok(())
    }

    /// Removes the dark offset and, in `DarkBackground` mode, the
    /// signal-dependent background `K⊙M⊙β⊙μ̂_N`.
    ///
    /// `μ̂_N` comes from one pass of the inverse: with `x̂ = F′y′` and
    /// `v = F′(K⊙M⊙β)`, `μ_N(x̂) = (1 + μ_N(v))·μ_N(x)` for noiseless input.
    pub fn precorrect(&self, y: &Cube, mode: BackgroundMode) -> Result<Cube> {
        self.check_input(y)?;
        if mode == BackgroundMode::None {
            return Ok(y.clone());
        }
        let mut out = y.data() - &self.params.d.view().insert_axis(Axis(0));
        if mode == BackgroundMode::DarkBackground {
            let first = self.op.inverse(&y.with_data(out.clone())?)?;
            let mu = self.background_mean(&first);
            let scale = &self.op.model().gain * &self.params.beta;
            Zip::from(out.axis_iter_mut(Axis(1)))
                .and(mu.columns())
                .and(scale.rows())
                .par_for_each(|mut o, mu_w, s| {
                    for (mut pixel, &m) in o.rows_mut().into_iter().zip(mu_w) {
                        pixel.scaled_add(-m, &s);
                    }
                });
        }
        y.with_data(out)
    }

    /// `μ̂_N` per pixel from a first-pass spectrum that still contains the background.
    fn background_mean(&self, first: &Cube) -> Array2<f64> {
        let mut mu = spectral_mean(first);
        let g = self
            .background_response
            .mean_axis(Axis(1))
            .expect("at least one bin");
        for (mut col, &gw) in mu.columns_mut().into_iter().zip(&g) {
            col /= 1.0 + gw;
        }
        mu
    }

    /// `F′` baseline: dark and background correction, pseudo-inverse, resampling.
    pub fn direct(&self, y: &Cube) -> Result<Cube> {
        let spectrum = self.direct_spectrum(y)?;
        resample_wavenumber_to_hsi(&spectrum)
    }

    pub fn direct_spectrum(&self, y: &Cube) -> Result<Cube> {
        let corrected = self.precorrect(y, BackgroundMode::DarkBackground)?;
        self.op.inverse(&corrected)
    }

    /// Traditional-simplified pipeline: dark subtraction, flat-field division
    /// by `K⊙M`, triangular apodization about the zero-path sample, a
    /// weighted fit on the cosine basis (no phase correction), division by
    /// `|A|` in band.
    pub fn traditional(&self, y: &Cube) -> Result<Cube> {
        self.check_input(y)?;
        let profile = self.params.profile();
        let (h, w, _) = y.dim();
        let n = profile.n_nu();
        let window = triangular_window(profile.opd_grid());
        let basis = self.op.basis();
        let weighted = basis.cos() * &window.view().insert_axis(Axis(1));
        let (pinv, rank, max, _, min_all) = pseudo_inverse(&weighted, PINV_CUTOFF);
        if rank < n {
            return Err(Error::RankDeficient {
                column: 0,
                rank,
                required: n,
                condition: max / min_all,
            });
        }
        // fold the window into the fit so that s = pinv · (window ⊙ y)
        let solve = &pinv * &window.view().insert_axis(Axis(0));
        let band = profile.band_range();
        let gain = &self.op.model().gain;
        let mut out = Array3::zeros((h, w, n));
        Zip::indexed(out.axis_iter_mut(Axis(1)))
            .and(y.data().axis_iter(Axis(1)))
            .par_for_each(|col, mut o, yc| {
                let flat = (&yc - &self.params.d.row(col).insert_axis(Axis(0))) / gain.row(col).insert_axis(Axis(0));
                let s = flat.dot(&solve.t());
                for j in band.clone() {
                    let a = self.params.a_re[[col, j]].hypot(self.params.a_im[[col, j]]);
                    if a > 0.0 {
                        for row in 0..h {
                            o[[row, j]] = s[[row, j]] / a;
                        }
                    }
                }
            });
        resample_wavenumber_to_hsi(&Cube::new(out, AxisKind::Wavenumber, profile.clone())?)
    }

    /// `x₀ = F′y′`; `z = x_k + α⊙F′(y′ − F x_k) [+ x_k − x_{k−1}]`;
    /// `x_{k+1} = prior(z, k)`.
    pub fn unfold(&self, y: &Cube, cfg: &UnfoldConfig, prior: &mut dyn PriorOp) -> Result<UnfoldResult> {
        let n = self.params.profile().n_nu();
        cfg.validate(self.params.width(), n)?;
        let y_corr = self.precorrect(y, cfg.background)?;
        let mut x = self.op.inverse(&y_corr)?;
        let mut previous = x.clone();
        let mut trace = vec![self.fidelity(&y_corr, &x)?];
        for stage in 0..cfg.stages {
            let residual = y_corr.data() - self.op.forward(&x)?.data();
            let step = self.op.inverse(&y_corr.with_data(residual)?)?;
            let mut z = step.into_data();
            Zip::indexed(z.axis_iter_mut(Axis(1))).par_for_each(|col, mut zc| {
                for mut pixel in zc.rows_mut() {
                    for (j, v) in pixel.iter_mut().enumerate() {
                        *v *= cfg.alpha.weight(col, j);
                    }
                }
            });
            z += x.data();
            if cfg.momentum {
                z += x.data();
                z -= previous.data();
            }
            let z = x.with_data(z)?;
            let next = prior
                .denoise(&z, stage)
                .and_then(|out| check_prior_output(&z, out))
                .map_err(|source| Error::Prior { stage, source })?;
            previous = std::mem::replace(&mut x, next);
            trace.push(self.fidelity(&y_corr, &x)?);
        }
        Ok(UnfoldResult {
            hsi: resample_wavenumber_to_hsi(&x)?,
            spectrum: x,
            trace,
        })
    }

    /// `‖y′ − F x‖₂` over the whole cube.
    pub fn fidelity(&self, y: &Cube, x: &Cube) -> Result<f64> {
        let fx = self.op.forward(x)?;
        Ok((y.data() - fx.data()).iter().map(|v| v * v).sum::<f64>().sqrt())
    }
}

fn check_prior_output(input: &Cube, output: Cube) -> Result<Cube, PriorError> {
    if output.dim() != input.dim() || output.axis() != input.axis() {
        return Err(PriorError::ShapeMismatch {
            sent: input.data().shape().to_vec(),
            received: output.data().shape().to_vec(),
        });
    }
    if output.data().iter().any(|v| !v.is_finite()) {
        return Err(PriorError::NonFinite);
    }
    Ok(output)
}

/// `1 − |l|/(max|l| + Δl)`: peak 1 at zero path, positive everywhere.
pub fn triangular_window(opd: &[f64]) -> Array1<f64> {
    let step = (opd[1] - opd[0]).abs();
    let extent = opd.iter().fold(0.0f64, |m, l| m.max(l.abs())) + step;
    opd.iter().map(|l| 1.0 - l.abs() / extent).collect()
}

pub fn precorrect(y: &Cube, params: &DegradationParams, mode: BackgroundMode) -> Result<Cube> {
    Reconstructor::new(params)?.precorrect(y, mode)
}

pub fn reconstruct_direct(y: &Cube, params: &DegradationParams) -> Result<Cube> {
    Reconstructor::new(params)?.direct(y)
}

pub fn reconstruct_traditional(y: &Cube, params: &DegradationParams) -> Result<Cube> {
    Reconstructor::new(params)?.traditional(y)
}

/// Builds the configured prior and runs the unfolding iteration.
pub fn unfold(y: &Cube, params: &DegradationParams, cfg: &UnfoldConfig) -> Result<UnfoldResult> {
    let mut prior = cfg.prior.build().map_err(|source| Error::Prior { stage: 0, source })?;
    Reconstructor::new(params)?.unfold(y, cfg, prior.as_mut())
}

/// Reconstruction method selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "method")]
pub enum Method {
    /// `F′` direct inverse.
    Fprime,
    Traditional,
    Unfold(UnfoldConfig),
}

impl Method {
    pub fn id(&self) -> &'static str {
        match self {
            Method::Fprime => "fprime",
            Method::Traditional => "traditional",
            Method::Unfold(_) => "unfold",
        }
    }
}

impl Reconstructor {
    /// Runs `method`, building a fresh prior when it needs one.
    pub fn run(&self, y: &Cube, method: &Method) -> Result<Cube> {
        match method {
            Method::Fprime => self.direct(y),
            Method::Traditional => self.traditional(y),
            Method::Unfold(cfg) => {
                let mut prior = cfg.prior.build().map_err(|source| Error::Prior { stage: 0, source })?;
                Ok(self.unfold(y, cfg, prior.as_mut())?.hsi)
            }
        }
    }
}
