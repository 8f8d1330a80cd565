//! Least-squares separation of an interferogram into in-band fringes and a
//! smooth background.
//!
//! Most OPD samples lie on one side of zero, so a free complex fit of every
//! in-band bin is badly conditioned. The fringe model instead gives each bin a
//! real amplitude and shares a phase curve that is quadratic in wavenumber:
//!
//! ```text
//! r(l) = Σ_j a_j cos(2π ν_j l + φ(ν_j)) + Σ_p g_p P_p(l)
//! ```
//!
//! with `P_p` Legendre polynomials over the OPD range. Amplitudes and
//! background are linear given the phase; the three phase coefficients are
//! found by damped Gauss–Newton on the projected residual.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1};

use crate::cube::InstrumentProfile;
use crate::error::{Error, Result};

/// Degree of the Legendre background.
pub const BACKGROUND_DEGREE: usize = 4;
const PHASE_TERMS: usize = 3;
const SCAN_STEPS: usize = 8;
const MAX_ITER: usize = 60;

#[derive(Debug, Clone)]
pub struct FringeFit {
    /// `2π ν_j` for the in-band bins.
    omega: Vec<f64>,
    /// Band position of each in-band bin mapped to [-1, 1].
    t: Vec<f64>,
    opd: Vec<f64>,
    /// `L × (degree + 1)` background basis.
    poly: DMatrix<f64>,
    band_start: usize,
}

/// Result of fitting one interferogram.
#[derive(Debug, Clone, PartialEq)]
pub struct FringeSolution {
    /// Complex in-band spectrum `a_j e^{iφ_j}`, real part.
    pub re: Array1<f64>,
    pub im: Array1<f64>,
    /// Fitted fringe signal along L.
    pub fringe: Array1<f64>,
    /// Fitted polynomial background along L.
    pub background: Array1<f64>,
}

fn legendre(x: f64, degree: usize) -> Vec<f64> {
    let mut p = vec![1.0; degree + 1];
    if degree >= 1 {
        p[1] = x;
    }
    for n in 1..degree {
        let nf = n as f64;
        p[n + 1] = ((2.0 * nf + 1.0) * x * p[n] - nf * p[n - 1]) / (nf + 1.0);
    }
    p
}

impl FringeFit {
    pub fn new(profile: &InstrumentProfile) -> Result<Self> {
        let band = profile.band_range();
        let n_in = band.len();
        let l = profile.n_opd();
        if n_in == 0 {
            return Err(Error::Calibration {
                stage: "A/beta",
                reason: "no wavenumber bins inside the band".into(),
            });
        }
        let unknowns = n_in + BACKGROUND_DEGREE + 1 + PHASE_TERMS;
        if unknowns > l {
            return Err(Error::Calibration {
                stage: "A/beta",
                reason: format!(
                    "fringe fit needs {unknowns} unknowns but only {l} OPD samples; truncate the band"
                ),
            });
        }
        let nu = profile.nu_grid();
        let omega = band.clone().map(|j| 2.0 * std::f64::consts::PI * nu[j]).collect();
        let span = (n_in.max(2) - 1) as f64;
        let t = (0..n_in).map(|k| 2.0 * k as f64 / span - 1.0).collect();
        let opd = profile.opd_grid().to_vec();
        let (lo, hi) = (opd[0], opd[l - 1]);
        let poly = DMatrix::from_fn(l, BACKGROUND_DEGREE + 1, |i, p| {
            legendre(2.0 * (opd[i] - lo) / (hi - lo) - 1.0, BACKGROUND_DEGREE)[p]
        });
        Ok(Self {
            omega,
            t,
            opd,
            poly,
            band_start: band.start,
        })
    }

    pub fn band_start(&self) -> usize {
        self.band_start
    }

    pub fn n_in(&self) -> usize {
        self.omega.len()
    }

    fn phases(&self, c: &[f64; PHASE_TERMS]) -> Vec<f64> {
        self.t.iter().map(|&t| c[0] + c[1] * t + c[2] * t * t).collect()
    }

    fn design(&self, phase: &[f64]) -> DMatrix<f64> {
        let l = self.opd.len();
        let n_in = self.omega.len();
        let nb = self.poly.ncols();
        DMatrix::from_fn(l, n_in + nb, |i, k| {
            if k < n_in {
                (self.omega[k] * self.opd[i] + phase[k]).cos()
            } else {
                self.poly[(i, k - n_in)]
            }
        })
    }

    /// Linear solve for amplitudes and background at fixed phase; returns
    /// the coefficients and the residual vector.
    fn project(&self, phase: &[f64], r: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let d = self.design(phase);
        let dt = d.transpose();
        let normal = &dt * &d;
        let rhs = &dt * r;
        let x = match normal.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => normal
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(d.ncols())),
        };
        let resid = r - &d * &x;
        (x, resid)
    }

    pub fn fit(&self, r: ArrayView1<f64>) -> FringeSolution {
        let rv = DVector::from_iterator(r.len(), r.iter().cloned());
        let cost = |c: &[f64; PHASE_TERMS]| self.project(&self.phases(c), &rv).1.norm_squared();

        // coarse scan of the constant phase; a and -a cover the other half turn
        let mut best = [0.0; PHASE_TERMS];
        let mut best_cost = f64::INFINITY;
        for s in 0..SCAN_STEPS {
            let c = [std::f64::consts::PI * s as f64 / SCAN_STEPS as f64, 0.0, 0.0];
            let v = cost(&c);
            if v < best_cost {
                best = c;
                best_cost = v;
            }
        }

        let mut lambda = 1e-3;
        let scale = rv.norm().max(1e-300);
        for _ in 0..MAX_ITER {
            let (_, resid) = self.project(&self.phases(&best), &rv);
            let mut jac = DMatrix::zeros(resid.len(), PHASE_TERMS);
            let h = 1e-7;
            for p in 0..PHASE_TERMS {
                let mut c = best;
                c[p] += h;
                let (_, rp) = self.project(&self.phases(&c), &rv);
                jac.set_column(p, &((rp - &resid) / h));
            }
            let jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * &resid;
            let mut improved = false;
            while lambda < 1e12 {
                let mut a = jtj.clone();
                for p in 0..PHASE_TERMS {
                    a[(p, p)] += lambda * jtj[(p, p)].max(1e-12 * scale * scale);
                }
                let Some(ch) = a.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let step = ch.solve(&(-&jtr));
                let mut c = best;
                for p in 0..PHASE_TERMS {
                    c[p] += step[p];
                }
                let v = cost(&c);
                if v <= best_cost {
                    let small = step.amax() < 1e-12;
                    best = c;
                    best_cost = v;
                    lambda = (lambda * 0.3).max(1e-9);
                    improved = !small;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }

        let phase = self.phases(&best);
        let (x, _) = self.project(&phase, &rv);
        let n_in = self.omega.len();
        let mut amp: Vec<f64> = (0..n_in).map(|k| x[k]).collect();
        let mut phase = phase;
        // keep amplitudes mostly positive
        if amp.iter().sum::<f64>() < 0.0 {
            for (a, p) in amp.iter_mut().zip(phase.iter_mut()) {
                *a = -*a;
                *p += std::f64::consts::PI;
            }
        }
        let d = self.design(&phase);
        let coef = DVector::from_iterator(x.len(), amp.iter().cloned().chain(x.iter().skip(n_in).cloned()));
        let fringe = d.columns(0, n_in) * coef.rows(0, n_in);
        let background = &self.poly * coef.rows(n_in, self.poly.ncols());
        FringeSolution {
            re: amp.iter().zip(&phase).map(|(a, p)| a * p.cos()).collect(),
            im: amp.iter().zip(&phase).map(|(a, p)| a * p.sin()).collect(),
            fringe: fringe.iter().cloned().collect(),
            background: background.iter().cloned().collect(),
        }
    }
}

/// Centered moving average; the window shrinks near the ends.
pub fn moving_average(x: ArrayView1<f64>, window: usize) -> Array1<f64> {
    let n = x.len();
    let half_lo = (window.max(1) - 1) / 2;
    let half_hi = window.max(1) - 1 - half_lo;
    let mut prefix = vec![0.0; n + 1];
    for (i, &v) in x.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    Array1::from_shape_fn(n, |i| {
        let a = i.saturating_sub(half_lo);
        let b = (i + half_hi + 1).min(n);
        (prefix[b] - prefix[a]) / (b - a) as f64
    })
}
