//! Small dense linear-algebra helpers over complex scalars.

use nalgebra::{Cholesky, ComplexField, DMatrix, DVector, Dyn};
pub use num_complex::Complex64 as C64;

/// Scalars the iterative solvers run over: `f64` for real problems, [`C64`] otherwise.
pub trait Field:
    ComplexField<RealField = f64> + faer::traits::ComplexField<Real = f64> + Copy
{
}

impl<T> Field for T where
    T: ComplexField<RealField = f64> + faer::traits::ComplexField<Real = f64> + Copy
{
}

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn to_complex(v: &DVector<f64>) -> CVector {
    v.map(c)
}

pub fn to_complex_matrix(m: &DMatrix<f64>) -> CMatrix {
    m.map(c)
}

/// Largest imaginary magnitude over all entries.
pub fn max_abs_imag<'a>(values: impl IntoIterator<Item = &'a C64>) -> f64 {
    values.into_iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

pub fn real_part(v: &CVector) -> DVector<f64> {
    v.map(|z| z.re)
}

/// `x hᵀ` (plain transpose, no conjugation).
pub fn outer(x: &CVector, h: &CVector) -> CMatrix {
    x * h.transpose()
}

/// Column-stacking vectorisation of an `n × l` matrix.
pub fn vec_of(z: &CMatrix) -> CVector {
    CVector::from_column_slice(z.as_slice())
}

pub fn unvec(v: &[C64], rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_column_slice(rows, cols, v)
}

/// Thin SVD `u · diag(singular_values) · v_t`, singular values nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd<T: Field = C64> {
    pub u: DMatrix<T>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<T>,
}

fn to_faer<T: Field>(m: &DMatrix<T>) -> faer::Mat<T> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Thin SVD computed by faer. nalgebra's bidiagonal SVD loses about five
/// digits on exactly rank-deficient inputs, which the separation and
/// thresholding steps produce routinely.
pub fn svd<T: Field>(m: &DMatrix<T>) -> Svd<T> {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(m.nrows(), 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, m.ncols()),
        };
    }
    match to_faer(m).thin_svd() {
        Ok(f) => {
            let (fu, fs, fv) = (f.U(), f.S().column_vector(), f.V());
            Svd {
                u: DMatrix::from_fn(m.nrows(), k, |i, j| fu[(i, j)]),
                singular_values: DVector::from_fn(k, |i, _| ComplexField::real(fs[i])),
                v_t: DMatrix::from_fn(k, m.ncols(), |i, j| ComplexField::conjugate(fv[(j, i)])),
            }
        }
        // faer reports non-convergence only on non-finite input
        Err(_) => {
            let f = m.clone().svd(true, true);
            Svd {
                u: f.u.expect("u requested"),
                singular_values: f.singular_values,
                v_t: f.v_t.expect("v_t requested"),
            }
        }
    }
}

/// Singular values in nonincreasing order.
pub fn singular_values<T: Field>(m: &DMatrix<T>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    match to_faer(m).singular_values() {
        Ok(s) => DVector::from_vec(s),
        Err(_) => m.clone().svd(false, false).singular_values,
    }
}

pub fn spectral_norm(m: &CMatrix) -> f64 {
    singular_values(m).iter().fold(0.0, |a: f64, &s| a.max(s))
}

pub fn nuclear_norm(m: &CMatrix) -> f64 {
    singular_values(m).sum()
}

/// Sum of Euclidean row norms.
pub fn l21_norm(m: &CMatrix) -> f64 {
    m.row_iter().map(|r| r.norm()).sum()
}

/// Moore–Penrose pseudoinverse via SVD; singular values below
/// `rtol * σ_max` are treated as zero.
pub fn pinv<T: Field>(m: &DMatrix<T>, rtol: f64) -> DMatrix<T> {
    let svd = svd(m);
    let (u, v_t) = (&svd.u, &svd.v_t);
    let smax = svd.singular_values.iter().fold(0.0, |a: f64, &s| a.max(s));
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rtol * smax && s > 0.0 {
            let vk = v_t.row(k).adjoint();
            let uk = u.column(k).adjoint();
            out += (vk * uk) * T::from_real(1.0 / s);
        }
    }
    out
}

/// Multiply each column by a unit phase so that its largest-magnitude entry is
/// real and positive. Near-ties are broken by the lowest index.
pub fn fix_column_phases(m: &mut CMatrix) {
    for mut col in m.column_iter_mut() {
        let max = col.iter().fold(0.0, |a: f64, z| a.max(z.norm()));
        if max == 0.0 {
            continue;
        }
        let pivot = col
            .iter()
            .find(|z| z.norm() >= max * (1.0 - 1e-9))
            .copied()
            .expect("non-empty column");
        let phase = pivot.conj() / pivot.norm();
        col.iter_mut().for_each(|z| *z *= phase);
    }
}

/// Solver for Hermitian positive (semi)definite systems: Cholesky when the
/// factorisation succeeds, otherwise a pseudoinverse.
#[derive(Debug, Clone)]
pub enum HermitianSolver<T: Field = C64> {
    Cholesky(Cholesky<T, Dyn>),
    Pseudo(DMatrix<T>),
}

impl<T: Field> HermitianSolver<T> {
    pub fn new(g: DMatrix<T>) -> Self {
        let scale = g
            .diagonal()
            .iter()
            .fold(0.0, |a: f64, z| a.max(z.modulus()));
        match Cholesky::new(g.clone()) {
            Some(ch) if cholesky_is_sound(&ch, scale) => HermitianSolver::Cholesky(ch),
            _ => HermitianSolver::Pseudo(pinv(&g, 1e-12)),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, HermitianSolver::Cholesky(_))
    }

    pub fn solve(&self, rhs: &DVector<T>) -> DVector<T> {
        match self {
            HermitianSolver::Cholesky(ch) => ch.solve(rhs),
            HermitianSolver::Pseudo(p) => p * rhs,
        }
    }
}

fn cholesky_is_sound<T: Field>(ch: &Cholesky<T, Dyn>, scale: f64) -> bool {
    let l = ch.l_dirty();
    let min_diag = l
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |a, z| a.min(z.real()));
    // ratio of squared pivots bounds the condition number from below
    min_diag.is_finite() && min_diag * min_diag > 1e-13 * scale.max(f64::MIN_POSITIVE)
}
