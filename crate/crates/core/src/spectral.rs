//! Spectral machinery of a normal shift operator.
//!
//! Conventions: `S = V Λ Vᴴ` with unitary `V`, the signal GFT is scaled as
//! `U = √N Vᴴ` (so `Uᴴ U = N I`), and `Ψ_raw` is the `N × L` Vandermonde
//! matrix of eigenvalue powers. `Ψ_raw = Ψ T` is a thin QR factorisation with
//! orthonormal `Ψ`; taps expressed against `Ψ` are `h′ = T h`.

use nalgebra::DMatrix;
use std::cmp::Ordering;

use crate::error::{DemixError, Result};
use crate::graph::Gso;
use crate::linalg::{c, fix_column_phases, CMatrix, CVector, C64};

/// Eigenpair residual tolerance relative to `‖S‖`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
/// Eigenvalues are distinct iff their minimum gap exceeds this times `max|λ|`.
pub const DISTINCT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub n: usize,
    pub l: usize,
    pub shift: CMatrix,
    pub eigvals: CVector,
    /// Eigenvectors as columns (inverse GFT up to scaling).
    pub v: CMatrix,
    /// Signal GFT, `Uᴴ U = N I`.
    pub u: CMatrix,
    pub psi_raw: CMatrix,
    pub psi: CMatrix,
    /// Upper-triangular `T` with `psi_raw = psi · T`.
    pub tap_transform: CMatrix,
    pub tap_transform_inv: CMatrix,
    pub min_eig_gap: f64,
    pub distinct: bool,
    /// True when the shift is real symmetric, so every quantity is real.
    pub real: bool,
}

fn eig_order(a: &C64, b: &C64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

fn eigen_decomposition(s: &Gso) -> Result<(CVector, CMatrix)> {
    let n = s.n();
    if s.is_real_symmetric() {
        let real = DMatrix::from_fn(n, n, |i, j| s.matrix[(i, j)].re);
        let eig = real.symmetric_eigen();
        return Ok((eig.eigenvalues.map(c), eig.eigenvectors.map(c)));
    }
    let m = &s.matrix;
    let hermitian = (0..n).all(|i| (0..=i).all(|j| (m[(i, j)] - m[(j, i)].conj()).norm() == 0.0));
    if hermitian {
        let eig = m.clone().symmetric_eigen();
        return Ok((eig.eigenvalues.map(c), eig.eigenvectors));
    }
    // a normal matrix has a diagonal Schur form, so the Schur vectors are eigenvectors
    let schur = m
        .clone()
        .try_schur(1e-14, 10_000)
        .ok_or_else(|| DemixError::Numeric("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    Ok((t.diagonal(), q))
}

/// Eigendecomposition, GFT matrices and the (orthonormalised) Vandermonde
/// matrix of a normal shift operator, for filters with `l` taps.
pub fn decompose(s: &Gso, l: usize) -> Result<SpectralBasis> {
    let n = s.n();
    if !s.normal {
        return Err(DemixError::ModelViolation(
            "shift operator is not normal".into(),
        ));
    }
    if l == 0 || l > n {
        return Err(DemixError::param(format!(
            "filter order {l} outside [1, {n}]"
        )));
    }
    let (vals, vecs) = eigen_decomposition(s)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig_order(&vals[a], &vals[b]));
    let eigvals = CVector::from_fn(n, |k, _| vals[order[k]]);
    let mut v = CMatrix::from_fn(n, n, |i, k| vecs[(i, order[k])]);
    fix_column_phases(&mut v);

    let snorm = s.matrix.norm().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let residual = (&s.matrix * v.column(k) - v.column(k) * eigvals[k]).norm();
        if residual > EIGEN_RESIDUAL_TOL * snorm {
            return Err(DemixError::Numeric(format!(
                "eigenpair {k} residual {residual:e} too large"
            )));
        }
    }

    let u = v.adjoint() * c((n as f64).sqrt());
    let psi_raw = CMatrix::from_fn(n, l, |i, j| eigvals[i].powu(j as u32));

    let qr = psi_raw.clone().qr();
    let mut psi = qr.q();
    let mut t = qr.r();
    for k in 0..l {
        let d = t[(k, k)];
        if d.norm() <= 1e-13 * psi_raw.column(k).norm().max(1.0) {
            return Err(DemixError::Numeric(format!(
                "Vandermonde matrix is rank deficient at column {k}; \
                 fewer than {l} distinct eigenvalues"
            )));
        }
        let phase = d / d.norm();
        for z in psi.column_mut(k).iter_mut() {
            *z *= phase;
        }
        for z in t.row_mut(k).iter_mut() {
            *z *= phase.conj();
        }
    }
    let tap_transform_inv = t
        .clone()
        .try_inverse()
        .ok_or_else(|| DemixError::Numeric("tap transform is singular".into()))?;

    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            min_gap = min_gap.min((eigvals[i] - eigvals[j]).norm());
        }
    }
    let max_abs = eigvals.iter().fold(0.0, |a: f64, z| a.max(z.norm()));
    let distinct = min_gap > DISTINCT_TOL * max_abs;

    Ok(SpectralBasis {
        n,
        l,
        shift: s.matrix.clone(),
        eigvals,
        v,
        u,
        psi_raw,
        psi,
        tap_transform: t,
        tap_transform_inv,
        min_eig_gap: min_gap,
        distinct,
        real: s.is_real_symmetric(),
    })
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(DemixError::param(format!(
            "{what} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

/// `Σ_l h_l S^l x` by repeated shifting.
pub fn apply_filter_vertex(s: &CMatrix, h: &CVector, x: &CVector) -> Result<CVector> {
    check_len("signal", x.len(), s.nrows())?;
    if !s.is_square() {
        return Err(DemixError::param("shift operator must be square"));
    }
    let mut acc = x * h.get(0).copied().unwrap_or(c(0.0));
    let mut cur = x.clone();
    for &tap in h.iter().skip(1) {
        cur = s * &cur;
        acc += &cur * tap;
    }
    Ok(acc)
}

impl SpectralBasis {
    /// `x̂ = U x`.
    pub fn gft_signal(&self, x: &CVector) -> Result<CVector> {
        check_len("signal", x.len(), self.n)?;
        Ok(&self.u * x)
    }

    /// `x = U⁻¹ x̂ = Uᴴ x̂ / N`.
    pub fn igft_signal(&self, xhat: &CVector) -> Result<CVector> {
        check_len("spectrum", xhat.len(), self.n)?;
        Ok(self.u.ad_mul(xhat) / c(self.n as f64))
    }

    /// Frequency response `ĥ = Ψ_raw h` of raw taps.
    pub fn filter_response(&self, h: &CVector) -> Result<CVector> {
        check_len("taps", h.len(), self.l)?;
        Ok(&self.psi_raw * h)
    }

    /// Filtering through the spectrum: `U⁻¹ diag(Ψ_raw h) U x`.
    pub fn apply_filter_spectral(&self, h: &CVector, x: &CVector) -> Result<CVector> {
        let hhat = self.filter_response(h)?;
        let xhat = self.gft_signal(x)?;
        self.igft_signal(&hhat.component_mul(&xhat))
    }

    /// Raw taps to orthonormal-basis taps, `h′ = T h`.
    pub fn to_orthonormal_taps(&self, h: &CVector) -> CVector {
        &self.tap_transform * h
    }

    pub fn to_raw_taps(&self, h_orth: &CVector) -> CVector {
        &self.tap_transform_inv * h_orth
    }

    /// Lifted matrix in the orthonormal-tap convention: `Z′ = Z_raw Tᵀ`.
    pub fn lift_to_orthonormal(&self, z_raw: &CMatrix) -> CMatrix {
        z_raw * self.tap_transform.transpose()
    }

    pub fn lift_to_raw(&self, z_orth: &CMatrix) -> CMatrix {
        z_orth * self.tap_transform_inv.transpose()
    }

    /// `N × N·L` transfer matrix with `M vec(x h′ᵀ) = H x` (orthonormal taps).
    pub fn transfer_matrix(&self) -> CMatrix {
        transfer_matrix_from(&self.u, &self.u, &self.psi)
    }

    /// Frequency-domain part `K` with `(K vec Z)_n = u_nᵀ Z ψ_n`.
    pub fn frequency_operator(&self) -> CMatrix {
        frequency_operator(&self.u, &self.psi)
    }

    /// Eigenvector-based invariants; returns the worst violation of each.
    pub fn invariant_report(&self) -> BasisReport {
        let n = self.n as f64;
        let snorm = self.shift.norm().max(f64::MIN_POSITIVE);
        let eig_residual = (0..self.n)
            .map(|k| {
                (&self.shift * self.v.column(k) - self.v.column(k) * self.eigvals[k]).norm() / snorm
            })
            .fold(0.0, f64::max);
        let gft_defect =
            (self.u.ad_mul(&self.u) - CMatrix::identity(self.n, self.n) * c(n)).norm() / n;
        let psi_defect = (self.psi.ad_mul(&self.psi) - CMatrix::identity(self.l, self.l)).norm();
        let factor_defect =
            (&self.psi * &self.tap_transform - &self.psi_raw).norm() / self.psi_raw.norm().max(1.0);
        BasisReport {
            eig_residual,
            gft_defect,
            psi_defect,
            factor_defect,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BasisReport {
    pub eig_residual: f64,
    pub gft_defect: f64,
    pub psi_defect: f64,
    pub factor_defect: f64,
}

impl BasisReport {
    pub fn passes(&self) -> bool {
        self.eig_residual <= EIGEN_RESIDUAL_TOL
            && self.gft_defect <= 1e-8
            && self.psi_defect <= 1e-10
            && self.factor_defect <= 1e-10
    }
}

/// `K` with `K[n, l·N + k] = Ψ[n, l] · U_signal[n, k]`.
pub fn frequency_operator(u_signal: &CMatrix, psi: &CMatrix) -> CMatrix {
    let n = u_signal.nrows();
    let l = psi.ncols();
    CMatrix::from_fn(n, n * l, |row, col| {
        psi[(row, col / n)] * u_signal[(row, col % n)]
    })
}

/// `U⁻¹ K`, where `K` may be built from a resampled signal GFT.
pub fn transfer_matrix_from(u: &CMatrix, u_signal: &CMatrix, psi: &CMatrix) -> CMatrix {
    let n = u.nrows() as f64;
    u.ad_mul(&frequency_operator(u_signal, psi)) / c(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi, gso_from_graph, GsoKind};
    use crate::linalg::{outer, to_complex, vec_of};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cv(v: &[f64]) -> CVector {
        to_complex(&DVector::from_column_slice(v))
    }

    fn swap2() -> Gso {
        Gso::from_matrix(
            CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]),
            GsoKind::Adjacency,
        )
        .unwrap()
    }

    fn er_basis(n: usize, p: f64, l: usize, seed: u64) -> SpectralBasis {
        let g = erdos_renyi(n, p, seed).unwrap();
        decompose(&gso_from_graph(&g, GsoKind::Adjacency).unwrap(), l).unwrap()
    }

    fn random_cv(rng: &mut ChaCha8Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| c(rng.random::<f64>() * 2.0 - 1.0))
    }

    #[test]
    fn identity_shift_has_repeated_eigenvalues() {
        let s = Gso::from_matrix(CMatrix::identity(2, 2), GsoKind::Custom).unwrap();
        let b = decompose(&s, 1).unwrap();
        assert!(b.eigvals.iter().all(|z| (z - c(1.0)).norm() < 1e-14));
        assert!(!b.distinct);
    }

    #[test]
    fn swap_shift_spectrum() {
        let b = decompose(&swap2(), 2).unwrap();
        assert!((b.eigvals[0] - c(-1.0)).norm() < 1e-14);
        assert!((b.eigvals[1] - c(1.0)).norm() < 1e-14);
        let expect = CMatrix::from_row_slice(2, 2, &[c(1.0), c(-1.0), c(1.0), c(1.0)]);
        assert!((&b.psi_raw - expect).norm() < 1e-14);
        assert!(b.distinct);
    }

    #[test]
    fn er_basis_invariants() {
        let b = er_basis(20, 0.2, 3, 11);
        let r = b.invariant_report();
        assert!(r.eig_residual <= 1e-8, "{r:?}");
        assert!(r.gft_defect <= 1e-8, "{r:?}");
        assert!(r.psi_defect <= 1e-10, "{r:?}");
        assert!(r.factor_defect <= 1e-10, "{r:?}");
        assert!(r.passes());
        assert!(b.real);
    }

    #[test]
    fn non_normal_is_rejected() {
        let s = Gso::from_matrix(
            CMatrix::from_row_slice(2, 2, &[c(0.0), c(2.0), c(1.0), c(0.0)]),
            GsoKind::Custom,
        )
        .unwrap();
        assert!(matches!(
            decompose(&s, 1),
            Err(DemixError::ModelViolation(_))
        ));
    }

    #[test]
    fn directed_cycle_is_normal_with_complex_spectrum() {
        // the directed 3-cycle is a permutation matrix: normal, eigenvalues = cube roots of unity
        let mut m = CMatrix::zeros(3, 3);
        m[(1, 0)] = c(1.0);
        m[(2, 1)] = c(1.0);
        m[(0, 2)] = c(1.0);
        let s = Gso::from_matrix(m, GsoKind::Adjacency).unwrap();
        assert!(s.normal);
        let b = decompose(&s, 3).unwrap();
        assert!(!b.real);
        assert!(b.distinct);
        let r = b.invariant_report();
        assert!(r.eig_residual < 1e-10 && r.gft_defect < 1e-10 && r.psi_defect < 1e-10);
        let x = cv(&[1.0, 2.0, -1.0]);
        let h = cv(&[0.5, 1.0, -0.25]);
        let vertex = apply_filter_vertex(&b.shift, &h, &x).unwrap();
        let spectral = b.apply_filter_spectral(&h, &x).unwrap();
        assert!((vertex - spectral).norm() < 1e-12);
    }

    #[test]
    fn vertex_filter_examples() {
        let s = swap2().matrix;
        let x = cv(&[3.0, 5.0]);
        assert_eq!(apply_filter_vertex(&s, &cv(&[1.0, 0.0]), &x).unwrap(), x);
        assert_eq!(
            apply_filter_vertex(&s, &cv(&[0.0, 1.0]), &x).unwrap(),
            cv(&[5.0, 3.0])
        );
        assert_eq!(
            apply_filter_vertex(&s, &cv(&[1.0, 1.0]), &cv(&[1.0, 0.0])).unwrap(),
            cv(&[1.0, 1.0])
        );
        assert!(apply_filter_vertex(&s, &cv(&[1.0]), &cv(&[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn spectral_filter_examples() {
        let b = er_basis(15, 0.3, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cv(&mut rng, 15);
        let delta = cv(&[1.0, 0.0, 0.0]);
        assert!((b.apply_filter_spectral(&delta, &x).unwrap() - &x).norm() < 1e-10);
        let zero = CVector::zeros(15);
        assert!(b.apply_filter_spectral(&delta, &zero).unwrap().norm() == 0.0);
        let h = random_cv(&mut rng, 3);
        let spectral = b.apply_filter_spectral(&h, &x).unwrap();
        let vertex = apply_filter_vertex(&b.shift, &h, &x).unwrap();
        assert!((&spectral - &vertex).norm() <= 1e-10 * vertex.norm());
        assert!(b.apply_filter_spectral(&cv(&[1.0]), &x).is_err());
    }

    #[test]
    fn transfer_matrix_on_two_path() {
        let b = decompose(&swap2(), 1).unwrap();
        let m = b.transfer_matrix();
        let x = cv(&[2.0, -1.0]);
        let h0 = 3.0;
        // with L = 1, Ψ = 1/√2 · 1 and T = √2, so h′ = √2 h₀
        let hp = b.to_orthonormal_taps(&cv(&[h0]));
        let y = &m * vec_of(&outer(&x, &hp));
        assert!((y - &x * c(h0)).norm() < 1e-12);
    }

    #[test]
    fn transfer_matrix_matches_vertex_filter() {
        let b = er_basis(10, 0.4, 3, 5);
        let m = b.transfer_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_cv(&mut rng, 10);
        let hp = random_cv(&mut rng, 3);
        let y = &m * vec_of(&outer(&x, &hp));
        let expect = apply_filter_vertex(&b.shift, &b.to_raw_taps(&hp), &x).unwrap();
        assert!((y - &expect).norm() <= 1e-10 * expect.norm().max(1.0));
        let zero = &m * vec_of(&outer(&CVector::zeros(10), &hp));
        assert_eq!(zero.norm(), 0.0);
    }

    #[test]
    fn gft_round_trip_and_convolution() {
        let b = er_basis(12, 0.3, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_cv(&mut rng, 12);
        let back = b.igft_signal(&b.gft_signal(&x).unwrap()).unwrap();
        assert!((back - &x).norm() < 1e-10);

        let h = random_cv(&mut rng, 4);
        let y = apply_filter_vertex(&b.shift, &h, &x).unwrap();
        let lhs = b.gft_signal(&y).unwrap();
        let rhs = b
            .filter_response(&h)
            .unwrap()
            .component_mul(&b.gft_signal(&x).unwrap());
        assert!((lhs - &rhs).norm() <= 1e-10 * rhs.norm());
    }

    #[test]
    fn eigenvector_has_single_frequency() {
        let b = er_basis(12, 0.3, 2, 8);
        let lead = b.v.column(b.n - 1).into_owned();
        let xhat = b.gft_signal(&lead).unwrap();
        let off: f64 = xhat
            .iter()
            .take(b.n - 1)
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(off < 1e-10);
        assert!((xhat[b.n - 1].norm() - (b.n as f64).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn decomposition_is_deterministic() {
        let a = er_basis(20, 0.2, 3, 4);
        let b = er_basis(20, 0.2, 3, 4);
        assert_eq!(a.v, b.v);
        assert_eq!(a.psi, b.psi);
    }

    #[test]
    fn bad_filter_order() {
        assert!(decompose(&swap2(), 0).is_err());
        assert!(decompose(&swap2(), 3).is_err());
    }
}
