//! Linear operators between wavenumber spectra and interferograms.
//!
//! The discrete transform maps an `N`-bin wavenumber spectrum `b` observed
//! through a complex per-column response `A` to `L` OPD samples:
//!
//! ```text
//! I[i] = Σ_j Re(A_j b_j e^{i 2π ν_j l_i}) = Σ_j (Re A_j cos(2π ν_j l_i) − Im A_j sin(2π ν_j l_i)) b_j
//! ```
//!
//! with unit weights and no normalization. The forward operator multiplies
//! this by the per-sample gain `K ⊙ M`; its per-column pseudo-inverse is
//! computed on demand and memoized.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::cube::{AxisKind, Cube, InstrumentProfile};
use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are discarded.
pub const SINGULAR_CUTOFF: f64 = 1e-10;

/// `L × N` cosine and sine tables, `cos(2π ν_j l_i)` and `sin(2π ν_j l_i)`.
#[derive(Debug, Clone)]
pub struct TransformBasis {
    cos: Array2<f64>,
    sin: Array2<f64>,
    profile: Arc<InstrumentProfile>,
}

impl TransformBasis {
    pub fn new(profile: Arc<InstrumentProfile>) -> Self {
        let (l, n) = (profile.n_opd(), profile.n_nu());
        let opd = profile.opd_grid();
        let nu = profile.nu_grid();
        let mut cos = Array2::zeros((l, n));
        let mut sin = Array2::zeros((l, n));
        for i in 0..l {
            for j in 0..n {
                let phase = 2.0 * std::f64::consts::PI * nu[j] * opd[i];
                let (sv, cv) = phase.sin_cos();
                cos[[i, j]] = cv;
                sin[[i, j]] = sv;
            }
        }
        Self { cos, sin, profile }
    }

    pub fn cos(&self) -> &Array2<f64> {
        &self.cos
    }

    pub fn sin(&self) -> &Array2<f64> {
        &self.sin
    }

    pub fn profile(&self) -> &Arc<InstrumentProfile> {
        &self.profile
    }

    /// `C·diag(Re A) − S·diag(Im A)` for one detector column.
    pub fn column_matrix(&self, a_re: ArrayView1<f64>, a_im: ArrayView1<f64>) -> Array2<f64> {
        let mut m = &self.cos * &a_re.view().insert_axis(Axis(0));
        m -= &(&self.sin * &a_im.view().insert_axis(Axis(0)));
        m
    }
}

/// The signal-dependent part of the imaging chain: complex response
/// `A` (`W × N`, split into real and imaginary maps) and the per-sample gain
/// `K ⊙ M` (`W × L`).
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub a_re: Array2<f64>,
    pub a_im: Array2<f64>,
    pub gain: Array2<f64>,
}

impl ForwardModel {
    pub fn new(a_re: Array2<f64>, a_im: Array2<f64>, gain: Array2<f64>) -> Result<Self> {
        if a_re.dim() != a_im.dim() {
            return Err(Error::shape("A imaginary part", a_re.shape(), a_im.shape()));
        }
        if gain.nrows() != a_re.nrows() {
            return Err(Error::shape(
                "gain rows (W)",
                &[a_re.nrows(), gain.ncols()],
                gain.shape(),
            ));
        }
        for (name, map) in [("A real", &a_re), ("A imag", &a_im), ("gain", &gain)] {
            if map.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self { a_re, a_im, gain })
    }

    /// Unit response and unit gain.
    pub fn identity(profile: &InstrumentProfile, w: usize) -> Self {
        Self {
            a_re: Array2::ones((w, profile.n_nu())),
            a_im: Array2::zeros((w, profile.n_nu())),
            gain: Array2::ones((w, profile.n_opd())),
        }
    }

    pub fn width(&self) -> usize {
        self.a_re.nrows()
    }

    fn check(&self, profile: &InstrumentProfile) -> Result<()> {
        let (w, n) = self.a_re.dim();
        if n != profile.n_nu() || self.gain.dim() != (w, profile.n_opd()) {
            return Err(Error::shape(
                "forward model against profile",
                &[w, profile.n_nu(), profile.n_opd()],
                &[w, n, self.gain.ncols()],
            ));
        }
        Ok(())
    }
}

fn check_cube(cube: &Cube, axis: AxisKind, width: usize, what: &str) -> Result<()> {
    cube.require_axis(axis)?;
    let (h, w, c) = cube.dim();
    if w != width {
        return Err(Error::shape(what, &[h, width, c], &[h, w, c]));
    }
    Ok(())
}

/// `I₁ = ℱ{A ⊙ B₀}` per pixel; `a_re`/`a_im` are `W × N`.
pub fn apply_interferogram_transform(
    spec: &Cube,
    basis: &TransformBasis,
    a_re: ArrayView2<f64>,
    a_im: ArrayView2<f64>,
) -> Result<Cube> {
    let profile = basis.profile().clone();
    if a_re.dim() != a_im.dim() || a_re.ncols() != profile.n_nu() {
        return Err(Error::shape(
            "absolute response",
            &[a_re.nrows(), profile.n_nu()],
            a_im.shape(),
        ));
    }
    if a_re.iter().chain(a_im.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("absolute response".into()));
    }
    check_cube(spec, AxisKind::Wavenumber, a_re.nrows(), "spectrum cube")?;
    let (h, w, _) = spec.dim();
    let mut out = Array3::zeros((h, w, profile.n_opd()));
    let cos_t = basis.cos().t();
    let sin_t = basis.sin().t();
    Zip::from(out.axis_iter_mut(Axis(1)))
        .and(spec.data().axis_iter(Axis(1)))
        .and(a_re.rows())
        .and(a_im.rows())
        .par_for_each(|mut o, x, re, im| {
            // rows of x are pixels; weighting columns by A then one GEMM per part
            let u = &x * &re.insert_axis(Axis(0));
            o.assign(&u.dot(&cos_t));
            if im.iter().any(|&v| v != 0.0) {
                let v = &x * &im.insert_axis(Axis(0));
                o -= &v.dot(&sin_t);
            }
        });
    Cube::new(out, AxisKind::Opd, profile)
}

/// `F x = K ⊙ M ⊙ ℱ{A ⊙ x}`. Background, dark and noise terms are not part of F.
pub fn apply_forward(x: &Cube, basis: &TransformBasis, model: &ForwardModel) -> Result<Cube> {
    model.check(basis.profile())?;
    let i1 = apply_interferogram_transform(x, basis, model.a_re.view(), model.a_im.view())?;
    let mut y = i1.into_data();
    Zip::from(y.axis_iter_mut(Axis(1)))
        .and(model.gain.rows())
        .par_for_each(|mut o, g| o *= &g.insert_axis(Axis(0)));
    Cube::new(y, AxisKind::Opd, basis.profile().clone())
}

/// Pseudo-inverse of one column's weighted operator `diag(K⊙M)·M_F`.
#[derive(Debug, Clone)]
pub struct ColumnOperator {
    /// `L × N` weighted forward matrix.
    pub matrix: Array2<f64>,
    /// `N × L` Moore–Penrose pseudo-inverse.
    pub pinv: Array2<f64>,
    pub rank: usize,
    pub max_singular: f64,
    /// Smallest singular value that was kept.
    pub min_singular: f64,
}

impl ColumnOperator {
    pub fn condition_number(&self) -> f64 {
        self.max_singular / self.min_singular
    }
}

/// Computes the pseudo-inverse by SVD with a relative cutoff, returning
/// `(pinv, rank, max_singular, min_kept, min_overall)`.
pub(crate) fn pseudo_inverse(matrix: &Array2<f64>, cutoff: f64) -> (Array2<f64>, usize, f64, f64, f64) {
    let (rows, cols) = matrix.dim();
    let m = DMatrix::from_fn(rows, cols, |i, j| matrix[[i, j]]);
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma = &svd.singular_values;
    let max = sigma.iter().cloned().fold(0.0, f64::max);
    let min_all = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = cutoff * max;
    let mut pinv = Array2::zeros((cols, rows));
    let mut rank = 0;
    let mut min_kept = f64::INFINITY;
    for (k, &sv) in sigma.iter().enumerate() {
        if max == 0.0 || sv <= threshold {
            continue;
        }
        rank += 1;
        min_kept = min_kept.min(sv);
        let inv = 1.0 / sv;
        for j in 0..cols {
            let vj = v_t[(k, j)] * inv;
            if vj == 0.0 {
                continue;
            }
            for i in 0..rows {
                pinv[[j, i]] += vj * u[(i, k)];
            }
        }
    }
    (pinv, rank, max, min_kept, min_all)
}

/// Forward operator plus a lazily built, memoized per-column pseudo-inverse.
///
/// Each column's SVD is computed at most once, on first use, and is safe to
/// request concurrently.
#[derive(Debug)]
pub struct ImagingOperator {
    basis: Arc<TransformBasis>,
    model: ForwardModel,
    columns: Vec<OnceLock<Result<Arc<ColumnOperator>, RankFailure>>>,
}

#[derive(Debug, Clone, Copy)]
struct RankFailure {
    rank: usize,
    required: usize,
    condition: f64,
}

impl ImagingOperator {
    /// Prepares the inverse cache; no decomposition happens until a column is needed.
    pub fn new(basis: Arc<TransformBasis>, model: ForwardModel) -> Result<Self> {
        model.check(basis.profile())?;
        let columns = (0..model.width()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            basis,
            model,
            columns,
        })
    }

    pub fn basis(&self) -> &Arc<TransformBasis> {
        &self.basis
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    pub fn profile(&self) -> &Arc<InstrumentProfile> {
        self.basis.profile()
    }

    pub fn width(&self) -> usize {
        self.model.width()
    }

    /// The weighted `L × N` matrix for column `w`.
    pub fn column_matrix(&self, w: usize) -> Array2<f64> {
        let mut m = self
            .basis
            .column_matrix(self.model.a_re.row(w), self.model.a_im.row(w));
        m *= &self.model.gain.row(w).insert_axis(Axis(1));
        m
    }

    /// Column operator for `w`, decomposing it on first access.
    pub fn column(&self, w: usize) -> Result<Arc<ColumnOperator>> {
        let cell = &self.columns[w];
        let entry = cell.get_or_init(|| {
            let matrix = self.column_matrix(w);
            // columns that are identically zero carry no information and are
            // mapped to zero by the pseudo-inverse
            let required = matrix
                .axis_iter(Axis(1))
                .filter(|c| c.iter().any(|&v| v != 0.0))
                .count();
            let (pinv, rank, max, min_kept, min_all) = pseudo_inverse(&matrix, SINGULAR_CUTOFF);
            if rank == 0 || rank < required {
                return Err(RankFailure {
                    rank,
                    required: required.max(1),
                    condition: if min_all > 0.0 { max / min_all } else { f64::INFINITY },
                });
            }
            Ok(Arc::new(ColumnOperator {
                matrix,
                pinv,
                rank,
                max_singular: max,
                min_singular: min_kept,
            }))
        });
        entry.clone().map_err(|f| Error::RankDeficient {
            column: w,
            rank: f.rank,
            required: f.required,
            condition: f.condition,
        })
    }

    /// Decomposes every column (in parallel) and reports the first failure.
    pub fn prepare(&self) -> Result<()> {
        (0..self.width())
            .into_par_iter()
            .map(|w| self.column(w).map(|_| ()))
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    pub fn forward(&self, x: &Cube) -> Result<Cube> {
        apply_forward(x, &self.basis, &self.model)
    }

    /// `F′ y`: per pixel, the pseudo-inverse of its column applied to the interferogram.
    pub fn inverse(&self, y: &Cube) -> Result<Cube> {
        check_cube(y, AxisKind::Opd, self.width(), "interferogram cube")?;
        self.prepare()?;
        let (h, w, _) = y.dim();
        let n = self.profile().n_nu();
        let mut out = Array3::zeros((h, w, n));
        Zip::indexed(out.axis_iter_mut(Axis(1)))
            .and(y.data().axis_iter(Axis(1)))
            .par_for_each(|col, mut o, yc| {
                let op = self.column(col).expect("prepared above");
                o.assign(&yc.dot(&op.pinv.t()));
            });
        Cube::new(out, AxisKind::Wavenumber, self.profile().clone())
    }

    /// Restricts the operator to a window of detector columns.
    pub fn columns(&self, start: usize, width: usize) -> Result<Self> {
        let end = start + width;
        if end > self.width() {
            return Err(Error::shape(
                "column window",
                &[self.width()],
                &[end],
            ));
        }
        let model = ForwardModel {
            a_re: self.model.a_re.slice(s![start..end, ..]).to_owned(),
            a_im: self.model.a_im.slice(s![start..end, ..]).to_owned(),
            gain: self.model.gain.slice(s![start..end, ..]).to_owned(),
        };
        let columns = (start..end)
            .map(|w| {
                let cell = OnceLock::new();
                if let Some(v) = self.columns[w].get() {
                    let _ = cell.set(v.clone());
                }
                cell
            })
            .collect();
        Ok(Self {
            basis: self.basis.clone(),
            model,
            columns,
        })
    }
}

/// Convenience wrapper: builds the operator and its full inverse cache.
pub fn build_inverse(basis: Arc<TransformBasis>, model: ForwardModel) -> Result<ImagingOperator> {
    let op = ImagingOperator::new(basis, model)?;
    op.prepare()?;
    Ok(op)
}

/// `F′ y` through a prepared operator.
pub fn apply_inverse(y: &Cube, op: &ImagingOperator) -> Result<Cube> {
    op.inverse(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk() -> Arc<InstrumentProfile> {
        Arc::new(InstrumentProfile::desk().with_width(4))
    }

    fn random_model(profile: &InstrumentProfile, rng: &mut ChaCha8Rng) -> ForwardModel {
        let w = profile.w;
        ForwardModel::new(
            Array2::from_shape_fn((w, profile.n_nu()), |_| rng.random_range(0.5..1.5)),
            Array2::from_shape_fn((w, profile.n_nu()), |_| rng.random_range(-0.3..0.3)),
            Array2::from_shape_fn((w, profile.n_opd()), |_| rng.random_range(0.8..1.6)),
        )
        .unwrap()
    }

    fn random_spectra(profile: &Arc<InstrumentProfile>, h: usize, rng: &mut ChaCha8Rng) -> Cube {
        let data = Array3::from_shape_fn((h, profile.w, profile.n_nu()), |_| rng.random_range(0.0..1.0));
        Cube::new(data, AxisKind::Wavenumber, profile.clone()).unwrap()
    }

    #[test]
    fn basis_special_rows_and_columns() {
        let profile = desk();
        let basis = TransformBasis::new(profile.clone());
        let c = profile.center();
        for j in 0..profile.n_nu() {
            assert_eq!(basis.cos()[[c, j]], 1.0);
            assert_eq!(basis.sin()[[c, j]], 0.0);
        }
        for i in 0..profile.n_opd() {
            assert_eq!(basis.cos()[[i, 0]], 1.0);
            assert_eq!(basis.sin()[[i, 0]], 0.0);
        }
    }

    #[test]
    fn quarter_cycle_entry() {
        // ν·l = 0.25 with a hand-built grid: ν_1 = 1/(4·Δl)
        let p = InstrumentProfile::from_grids(
            1,
            1,
            vec![450.0, 900.0],
            vec![0.0, 0.0025, 0.005],
            vec![-100.0, 0.0, 100.0, 200.0],
            1,
        );
        // Nyquist product is 1.0, so this grid is valid
        let p = Arc::new(p.unwrap());
        let basis = TransformBasis::new(p);
        assert!(basis.cos()[[2, 1]].abs() < 1e-15);
        assert!((basis.sin()[[2, 1]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_spike_gives_single_cosine() {
        let profile = desk();
        let basis = TransformBasis::new(profile.clone());
        let model = ForwardModel::identity(&profile, profile.w);
        let j_star = 23;
        let mut data = Array3::zeros((2, profile.w, profile.n_nu()));
        data[[1, 3, j_star]] = 1.0;
        let x = Cube::new(data, AxisKind::Wavenumber, profile.clone()).unwrap();
        let y = apply_interferogram_transform(&x, &basis, model.a_re.view(), model.a_im.view()).unwrap();
        for i in 0..profile.n_opd() {
            let expected = (2.0 * std::f64::consts::PI * profile.nu_grid()[j_star] * profile.opd_grid()[i]).cos();
            assert!((y.data()[[1, 3, i]] - expected).abs() < 1e-12);
            assert_eq!(y.data()[[0, 3, i]], 0.0);
        }
    }

    #[test]
    fn real_response_equals_cos_times_diag_exactly() {
        let profile = desk();
        let basis = TransformBasis::new(profile.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = random_model(&profile, &mut rng);
        model.a_im.fill(0.0);
        let x = random_spectra(&profile, 3, &mut rng);
        let y = apply_interferogram_transform(&x, &basis, model.a_re.view(), model.a_im.view()).unwrap();
        for w in 0..profile.w {
            let weighted = &x.data().slice(s![.., w, ..]) * &model.a_re.row(w).insert_axis(Axis(0));
            let expected = weighted.dot(&basis.cos().t());
            assert_eq!(y.data().slice(s![.., w, ..]), expected);
        }
    }

    #[test]
    fn forward_scales_with_gain_and_vanishes_on_zero() {
        let profile = desk();
        let basis = TransformBasis::new(profile.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_model(&profile, &mut rng);
        let x = random_spectra(&profile, 2, &mut rng);
        let y = apply_forward(&x, &basis, &model).unwrap();
        let mut doubled = model.clone();
        doubled.gain *= 2.0;
        let y2 = apply_forward(&x, &basis, &doubled).unwrap();
        assert_eq!(y2.data(), &(y.data() * 2.0));
        let zero = Cube::zeros(2, profile.w, AxisKind::Wavenumber, profile.clone());
        assert!(apply_forward(&zero, &basis, &model).unwrap().data().iter().all(|&v| v == 0.0));
        let unit = ForwardModel::identity(&profile, profile.w);
        let a = apply_forward(&x, &basis, &unit).unwrap();
        let b = apply_interferogram_transform(&x, &basis, unit.a_re.view(), unit.a_im.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_model_pinv_is_left_inverse() {
        let profile = Arc::new(InstrumentProfile::desk());
        let basis = Arc::new(TransformBasis::new(profile.clone()));
        let op = build_inverse(basis, ForwardModel::identity(&profile, 2)).unwrap();
        let col = op.column(1).unwrap();
        assert_eq!(col.rank, 55);
        let eye = col.pinv.dot(&col.matrix);
        let dev = eye
            .indexed_iter()
            .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-8, "max deviation {dev}");
    }

    #[test]
    fn zeroed_gain_row_still_full_rank() {
        let profile = Arc::new(InstrumentProfile::desk());
        let basis = Arc::new(TransformBasis::new(profile.clone()));
        let mut model = ForwardModel::identity(&profile, 1);
        // with real A the row at -l duplicates the one at +l
        model.gain[[0, 3]] = 0.0;
        let op = build_inverse(basis, model).unwrap();
        let col = op.column(0).unwrap();
        assert_eq!(col.rank, 55);
        assert!(col.pinv.column(3).iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn zeroed_one_sided_row_loses_rank_for_real_response() {
        let profile = Arc::new(InstrumentProfile::desk());
        let basis = Arc::new(TransformBasis::new(profile.clone()));
        let mut model = ForwardModel::identity(&profile, 1);
        model.gain[[0, 40]] = 0.0;
        assert!(matches!(
            build_inverse(basis, model),
            Err(Error::RankDeficient { rank: 54, required: 55, .. })
        ));
    }

    #[test]
    fn zero_response_is_rank_deficient() {
        let profile = Arc::new(InstrumentProfile::desk());
        let basis = Arc::new(TransformBasis::new(profile.clone()));
        let mut model = ForwardModel::identity(&profile, 3);
        model.a_re.row_mut(2).fill(0.0);
        let err = build_inverse(basis, model).unwrap_err();
        match err {
            Error::RankDeficient { column, rank, condition, .. } => {
                assert_eq!(column, 2);
                assert_eq!(rank, 0);
                assert!(condition.is_infinite());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn band_limited_response_inverts_on_its_support() {
        let profile = Arc::new(InstrumentProfile::desk());
        let basis = Arc::new(TransformBasis::new(profile.clone()));
        let mut model = ForwardModel::identity(&profile, 1);
        let band = profile.band_range();
        for j in 0..profile.n_nu() {
            if !band.contains(&j) {
                model.a_re[[0, j]] = 0.0;
            }
        }
        let op = build_inverse(basis, model).unwrap();
        assert_eq!(op.column(0).unwrap().rank, band.len());
    }

    #[test]
    fn concurrent_column_requests_share_one_decomposition() {
        let profile = Arc::new(InstrumentProfile::desk().with_width(8));
        let basis = Arc::new(TransformBasis::new(profile.clone()));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let op = ImagingOperator::new(basis, random_model(&profile, &mut rng)).unwrap();
        let ptrs: Vec<usize> = (0..64)
            .into_par_iter()
            .map(|k| Arc::as_ptr(&op.column(k % 8).unwrap()) as usize)
            .collect();
        for k in 0..64 {
            assert_eq!(ptrs[k], ptrs[k % 8]);
        }
    }

    #[test]
    fn inverse_of_zero_is_zero_and_shapes_checked() {
        let profile = desk();
        let basis = Arc::new(TransformBasis::new(profile.clone()));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let op = build_inverse(basis, random_model(&profile, &mut rng)).unwrap();
        let zero = Cube::zeros(3, profile.w, AxisKind::Opd, profile.clone());
        assert!(op.inverse(&zero).unwrap().data().iter().all(|&v| v == 0.0));
        let wide = Cube::zeros(3, profile.w + 1, AxisKind::Opd, profile.clone());
        assert!(matches!(op.inverse(&wide), Err(Error::ShapeMismatch { .. })));
        let wrong_axis = Cube::zeros(3, profile.w, AxisKind::Wavenumber, profile.clone());
        assert!(matches!(op.inverse(&wrong_axis), Err(Error::AxisMismatch { .. })));
    }
}
