//! Parameter estimation from dark, relative and absolute calibration captures.
//!
//! Estimators run in dependency order: dark level and readout noise, then
//! system gain from the photon-transfer ratio, then relative response, then
//! absolute response and background coefficient.

mod capture;
mod fit;

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::cube::{column_stats, Cube, InstrumentProfile};
use crate::degrade::DegradationParams;
use crate::error::{Error, Result};

pub use capture::{flat_reference, synthetic_calibration_set, CalibrationSet, MIN_ROWS};
pub use fit::{moving_average, FringeFit, FringeSolution, BACKGROUND_DEGREE};

/// Largest fraction of gain elements allowed to lack a valid estimate.
pub const MAX_INVALID_FRACTION: f64 = 0.10;

fn check_rows(cube: &Cube) -> Result<()> {
    let h = cube.dim().0;
    if h < MIN_ROWS {
        return Err(Error::Degenerate(format!(
            "calibration statistics need H >= {MIN_ROWS}, got {h}"
        )));
    }
    Ok(())
}

/// `D = μ_H(I_R0)`, `σ_read = σ_H(I_R0)`.
pub fn estimate_dark(dark: &Cube) -> Result<(Array2<f64>, Array2<f64>)> {
    check_rows(dark)?;
    let s = column_stats(dark)?;
    Ok((s.mean, s.std))
}

/// Gain map and the elements that had no usable brightness level.
#[derive(Debug, Clone, PartialEq)]
pub struct GainEstimate {
    pub k: Array2<f64>,
    /// Elements filled from their column median.
    pub imputed: Vec<(usize, usize)>,
    /// Elements left at 0 because their whole column was invalid.
    pub unresolved: Vec<(usize, usize)>,
}

impl GainEstimate {
    pub fn invalid_count(&self) -> usize {
        self.imputed.len() + self.unresolved.len()
    }

    pub fn invalid_fraction(&self) -> f64 {
        self.invalid_count() as f64 / self.k.len().max(1) as f64
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Photon-transfer gain `K_i = (σ²_H(I_Ri) − σ²_read)/(μ_H(I_Ri) − D)`,
/// averaged uniformly over the levels where it is positive and finite.
pub fn estimate_gain(relative: &[Cube], d: &Array2<f64>, sigma_read: &Array2<f64>) -> Result<GainEstimate> {
    if relative.is_empty() {
        return Err(Error::Calibration {
            stage: "gain",
            reason: "no relative captures".into(),
        });
    }
    let mut sum = Array2::<f64>::zeros(d.dim());
    let mut count = Array2::<u32>::zeros(d.dim());
    for cube in relative {
        check_rows(cube)?;
        let s = column_stats(cube)?;
        if s.mean.dim() != d.dim() {
            return Err(Error::shape("relative capture", d.shape(), s.mean.shape()));
        }
        Zip::from(&mut sum)
            .and(&mut count)
            .and(&s.mean)
            .and(&s.std)
            .and(d)
            .and(sigma_read)
            .for_each(|acc, n, &mu, &sd, &dd, &sr| {
                let signal = mu - dd;
                if signal <= 0.0 {
                    return;
                }
                let k = (sd * sd - sr * sr) / signal;
                if k.is_finite() && k > 0.0 {
                    *acc += k;
                    *n += 1;
                }
            });
    }
    let mut k = Array2::zeros(d.dim());
    let mut imputed = Vec::new();
    let mut unresolved = Vec::new();
    for (w, (mut row, (s_row, c_row))) in k
        .rows_mut()
        .into_iter()
        .zip(sum.rows().into_iter().zip(count.rows()))
        .enumerate()
    {
        let mut valid: Vec<f64> = s_row
            .iter()
            .zip(c_row)
            .filter(|(_, &c)| c > 0)
            .map(|(&s, &c)| s / c as f64)
            .collect();
        let fill = if valid.is_empty() { 0.0 } else { median(&mut valid) };
        for (i, ((v, &s), &c)) in row.iter_mut().zip(s_row).zip(c_row).enumerate() {
            if c > 0 {
                *v = s / c as f64;
            } else if fill > 0.0 {
                *v = fill;
                imputed.push((w, i));
            } else {
                unresolved.push((w, i));
            }
        }
    }
    Ok(GainEstimate {
        k,
        imputed,
        unresolved,
    })
}

/// Relative response, OPD-axis envelope and their normalized product.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseEstimate {
    pub m_r: Array2<f64>,
    pub m_a: Array2<f64>,
    pub m: Array2<f64>,
}

fn normalize(mut m: Array2<f64>) -> Array2<f64> {
    let mean = m.mean().unwrap_or(1.0);
    if mean != 0.0 {
        m /= mean;
    }
    m
}

fn gain_guard(k: &Array2<f64>, stage: &'static str) -> Result<()> {
    if let Some(((w, i), v)) = k.indexed_iter().find(|(_, &v)| v.is_nan() || v <= 0.0) {
        return Err(Error::Calibration {
            stage,
            reason: format!("gain K[{w},{i}] = {v} is not positive"),
        });
    }
    Ok(())
}

/// `M_R` from relative captures and `M_A` from the fringe-free envelope of
/// the absolute captures.
pub fn estimate_m(
    relative: &[Cube],
    absolute: &[Cube],
    d: &Array2<f64>,
    k: &Array2<f64>,
) -> Result<ResponseEstimate> {
    if relative.is_empty() || absolute.is_empty() {
        return Err(Error::Calibration {
            stage: "M",
            reason: "need relative and absolute captures".into(),
        });
    }
    gain_guard(k, "M")?;
    let mut acc = Array2::zeros(d.dim());
    for cube in relative {
        let s = column_stats(cube)?;
        acc += &normalize((&s.mean - d) / k);
    }
    let m_r = normalize(acc / relative.len() as f64);
    let max_r = m_r.iter().cloned().fold(f64::MIN, f64::max);
    let floor = 1e-6 * max_r;

    let profile = absolute[0].profile().clone();
    let fit = FringeFit::new(&profile)?;
    let window = profile.n_opd().div_ceil(8);
    let mut m_a = Array2::zeros(d.dim());
    for cube in absolute {
        let s = column_stats(cube)?;
        let denom = (k * &m_r).mapv(|v| v.max(floor));
        let r = (&s.mean - d) / &denom;
        Zip::from(m_a.rows_mut())
            .and(r.rows())
            .par_for_each(|mut out, row| {
                let sol = fit.fit(row);
                let env = moving_average((&row - &sol.fringe).view(), window);
                let mean = env.mean().unwrap_or(1.0);
                if mean.abs() > 0.0 {
                    out += &(env / mean);
                } else {
                    out += 1.0;
                }
            });
    }
    m_a /= absolute.len() as f64;
    let m = normalize(&m_r * &m_a);
    Ok(ResponseEstimate { m_r, m_a, m })
}

/// Absolute response (`W × N`, split into parts) and background coefficient (`W × L`).
#[derive(Debug, Clone, PartialEq)]
pub struct AbsoluteEstimate {
    pub a_re: Array2<f64>,
    pub a_im: Array2<f64>,
    pub beta: Array2<f64>,
}

/// Fits the in-band complex spectrum `ŝ` of `I′ = (μ_H(I_A) − D)/(K·M)`,
/// takes `A = ŝ/B_A` and `β = (I′ − fringes(ŝ))/μ_N(B_A)`, averaged over levels.
pub fn estimate_a_beta(
    absolute: &[Cube],
    reference: &[Array1<f64>],
    m: &Array2<f64>,
    d: &Array2<f64>,
    k: &Array2<f64>,
) -> Result<AbsoluteEstimate> {
    if absolute.is_empty() || absolute.len() != reference.len() {
        return Err(Error::Calibration {
            stage: "A/beta",
            reason: format!(
                "{} absolute captures with {} reference spectra",
                absolute.len(),
                reference.len()
            ),
        });
    }
    gain_guard(k, "A/beta")?;
    let profile = absolute[0].profile().clone();
    let fit = FringeFit::new(&profile)?;
    let band = profile.band_range();
    let (w, n, l) = (d.nrows(), profile.n_nu(), profile.n_opd());
    let mut a_re = Array2::zeros((w, n));
    let mut a_im = Array2::zeros((w, n));
    let mut a_count = vec![0usize; n];
    let mut beta = Array2::zeros((w, l));
    let km = k * m;
    for (cube, b) in absolute.iter().zip(reference) {
        let bmax = b.iter().cloned().fold(0.0, f64::max);
        let mu_n = b.mean().unwrap_or(0.0);
        if bmax <= 0.0 || mu_n <= 0.0 {
            return Err(Error::Calibration {
                stage: "A/beta",
                reason: "reference spectrum is zero".into(),
            });
        }
        let usable: Vec<bool> = band.clone().map(|j| b[j] >= 1e-6 * bmax).collect();
        for (jj, j) in band.clone().enumerate() {
            if usable[jj] {
                a_count[j] += 1;
            }
        }
        let s = column_stats(cube)?;
        let i_prime = (&s.mean - d) / &km;
        Zip::from(a_re.rows_mut())
            .and(a_im.rows_mut())
            .and(beta.rows_mut())
            .and(i_prime.rows())
            .par_for_each(|mut re, mut im, mut bt, row| {
                let sol = fit.fit(row);
                for (jj, j) in band.clone().enumerate() {
                    if usable[jj] {
                        re[j] += sol.re[jj] / b[j];
                        im[j] += sol.im[jj] / b[j];
                    }
                }
                bt += &((&row - &sol.fringe) / mu_n);
            });
    }
    for j in band.clone() {
        if a_count[j] == 0 {
            return Err(Error::Calibration {
                stage: "A/beta",
                reason: format!("in-band bin {j} has no usable reference level"),
            });
        }
        a_re.column_mut(j).mapv_inplace(|v| v / a_count[j] as f64);
        a_im.column_mut(j).mapv_inplace(|v| v / a_count[j] as f64);
    }
    beta /= absolute.len() as f64;
    Ok(AbsoluteEstimate { a_re, a_im, beta })
}

/// Summary of one estimation stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub invalid_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_rel_err: Option<f64>,
    pub notes: Vec<String>,
}

/// JSON calibration report, one entry per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub stages: BTreeMap<String, StageReport>,
    /// Parameter-wise median relative error against a known truth, when one was supplied.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub median_rel_err: BTreeMap<String, f64>,
}

impl CalibrationReport {
    /// Fills `median_rel_err` by comparing an estimate with ground truth.
    pub fn compare_with(&mut self, estimate: &DegradationParams, truth: &DegradationParams) {
        let errs = parameter_errors(estimate, truth);
        for (stage, keys) in [
            ("dark", &["D", "sigma_read"][..]),
            ("gain", &["K"][..]),
            ("M", &["M"][..]),
            ("A_beta", &["A", "beta"][..]),
        ] {
            let worst = keys.iter().map(|k| errs[*k]).fold(0.0, f64::max);
            self.stages.entry(stage.into()).or_default().median_rel_err = Some(worst);
        }
        self.median_rel_err = errs;
    }
}

/// Median of `|est − truth| / |truth|` over entries with non-zero truth.
pub fn median_rel_err(est: &Array2<f64>, truth: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = est
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t != 0.0)
        .map(|(e, t)| ((e - t) / t).abs())
        .collect();
    if v.is_empty() {
        return 0.0;
    }
    median(&mut v)
}

/// Median relative error of the complex response over in-band bins.
pub fn median_rel_err_complex(
    est_re: &Array2<f64>,
    est_im: &Array2<f64>,
    re: &Array2<f64>,
    im: &Array2<f64>,
    profile: &InstrumentProfile,
) -> f64 {
    let band = profile.band_range();
    let mut v = Vec::new();
    for w in 0..re.nrows() {
        for j in band.clone() {
            let t = re[[w, j]].hypot(im[[w, j]]);
            if t > 0.0 {
                v.push((est_re[[w, j]] - re[[w, j]]).hypot(est_im[[w, j]] - im[[w, j]]) / t);
            }
        }
    }
    if v.is_empty() {
        return 0.0;
    }
    median(&mut v)
}

/// Median relative error for each parameter map, keyed by map name.
pub fn parameter_errors(est: &DegradationParams, truth: &DegradationParams) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    out.insert("D".into(), median_rel_err(&est.d, &truth.d));
    out.insert("sigma_read".into(), median_rel_err(&est.sigma_read, &truth.sigma_read));
    out.insert("K".into(), median_rel_err(&est.k, &truth.k));
    out.insert("M".into(), median_rel_err(&est.m, &truth.m));
    out.insert("beta".into(), median_rel_err(&est.beta, &truth.beta));
    out.insert(
        "A".into(),
        median_rel_err_complex(&est.a_re, &est.a_im, &truth.a_re, &truth.a_im, truth.profile()),
    );
    out
}

/// Runs every estimator and packages the result with the caller's `e`.
pub fn calibrate_all(set: &CalibrationSet, e: f64) -> Result<(DegradationParams, CalibrationReport)> {
    set.validate()?;
    let mut report = CalibrationReport::default();

    let (d, sigma_read) = estimate_dark(&set.dark)?;
    report.stages.insert(
        "dark".into(),
        StageReport {
            invalid_count: 0,
            median_rel_err: None,
            notes: vec![format!("{} rows", set.dark.dim().0)],
        },
    );

    let gain = estimate_gain(&set.relative, &d, &sigma_read)?;
    let frac = gain.invalid_fraction();
    let mut notes = vec![format!("{} levels averaged", set.relative.len())];
    if !gain.imputed.is_empty() {
        notes.push(format!("{} elements filled from column medians", gain.imputed.len()));
    }
    report.stages.insert(
        "gain".into(),
        StageReport {
            invalid_count: gain.invalid_count(),
            median_rel_err: None,
            notes,
        },
    );
    if frac > MAX_INVALID_FRACTION {
        return Err(Error::Calibration {
            stage: "gain",
            reason: format!(
                "{:.1}% of elements have no valid estimate (budget {:.0}%)",
                100.0 * frac,
                100.0 * MAX_INVALID_FRACTION
            ),
        });
    }
    if !gain.unresolved.is_empty() {
        return Err(Error::Calibration {
            stage: "gain",
            reason: format!(
                "{} elements in columns with no valid estimate at all",
                gain.unresolved.len()
            ),
        });
    }

    let resp = estimate_m(&set.relative, &set.absolute, &d, &gain.k)?;
    report.stages.insert(
        "M".into(),
        StageReport {
            invalid_count: 0,
            median_rel_err: None,
            notes: vec![format!(
                "envelope window {}",
                set.dark.profile().n_opd().div_ceil(8)
            )],
        },
    );

    let abs = estimate_a_beta(&set.absolute, &set.reference, &resp.m, &d, &gain.k)?;
    report.stages.insert(
        "A_beta".into(),
        StageReport {
            invalid_count: 0,
            median_rel_err: None,
            notes: vec![format!(
                "{} in-band bins fitted",
                set.dark.profile().band_range().len()
            )],
        },
    );

    let w = d.nrows();
    let profile = Arc::new(set.dark.profile().with_width(w));
    let params = DegradationParams::new(
        profile,
        abs.a_re,
        abs.a_im,
        abs.beta,
        resp.m,
        gain.k,
        d,
        sigma_read,
        e,
    )
    .map_err(|err| Error::Calibration {
        stage: "package",
        reason: err.to_string(),
    })?;
    Ok((params, report))
}
