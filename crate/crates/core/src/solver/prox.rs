//! Proximal operators of the regularisers.

use nalgebra::DMatrix;

use crate::linalg::{svd, Field};

/// Singular-value soft-thresholding. With `weights`, the `j`-th largest
/// singular value is shrunk by `tau * weights[j]`; weights must be
/// nondecreasing for the result to be the weighted-nuclear prox.
pub fn singular_value_threshold<T: Field>(
    m: &DMatrix<T>,
    tau: f64,
    weights: Option<&[f64]>,
) -> DMatrix<T> {
    if tau == 0.0 {
        return m.clone();
    }
    let svd = svd(m);
    let (u, v_t) = (&svd.u, &svd.v_t);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (j, &s) in svd.singular_values.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[j]);
        let shrunk = s - tau * w;
        if shrunk > 0.0 {
            out += u.column(j) * v_t.row(j) * T::from_real(shrunk);
        }
    }
    out
}

/// Row-wise group soft-thresholding: every row `r` becomes
/// `r · max(0, 1 − τ_k / ‖r‖)` with `τ_k = tau · weights[k]`.
pub fn row_shrink<T: Field>(m: &DMatrix<T>, tau: f64, weights: Option<&[f64]>) -> DMatrix<T> {
    let mut out = m.clone();
    if tau == 0.0 {
        return out;
    }
    for (k, mut row) in out.row_iter_mut().enumerate() {
        let t = tau * weights.map_or(1.0, |w| w[k]);
        let norm = row.norm();
        let factor = if norm > t { 1.0 - t / norm } else { 0.0 };
        row *= T::from_real(factor);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, nuclear_norm, CMatrix, C64};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn svt_satisfies_prox_optimality() {
        // X = prox(M) iff M − X = τ (U Vᴴ + W) with W ⟂ the retained subspaces and ‖W‖ ≤ 1
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let m = random(10, 4, &mut rng);
            let tau = rng.random_range(0.1..1.5);
            let x = singular_value_threshold(&m, tau, None);
            let g = (&m - &x) / c(tau);
            let svd = x.clone().svd(true, true);
            let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
            let u = svd.u.unwrap().columns(0, rank).into_owned();
            let v = svd.v_t.unwrap().rows(0, rank).adjoint();
            let w = &g - &u * v.adjoint();
            assert!((u.adjoint() * &w).norm() < 1e-8);
            assert!((&w * &v).norm() < 1e-8);
            let wnorm = w.svd(false, false).singular_values.max();
            assert!(wnorm <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn svt_reduces_nuclear_norm_by_tau_per_kept_value() {
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(3.0), c(1.0), c(0.2)]));
        let x = singular_value_threshold(&m, 0.5, None);
        assert!((nuclear_norm(&x) - 3.0).abs() < 1e-12);
        let weighted = singular_value_threshold(&m, 0.5, Some(&[1.0, 2.0, 2.0]));
        assert!((nuclear_norm(&weighted) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn row_shrink_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random(6, 3, &mut rng);
        let tau = 0.8;
        let out = row_shrink(&m, tau, None);
        for (r_in, r_out) in m.row_iter().zip(out.row_iter()) {
            let n = r_in.norm();
            let expected = if n <= tau { 0.0 } else { n - tau };
            assert!((r_out.norm() - expected).abs() < 1e-12);
            if n > tau {
                assert!((r_out / c(n - tau) - r_in / c(n)).norm() < 1e-12);
            }
        }
    }
}
