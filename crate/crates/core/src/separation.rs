//! Splitting a summed lifted matrix into its rank-one sources when every
//! source lives on one graph.
//!
//! If the inputs are orthogonal (in the node or frequency domain) and the taps
//! are orthogonal (raw or through the Vandermonde matrix), then with matching
//! transforms `T_x`, `T_h` the SVD of `T_x Z T_hᵀ` is exactly the sum of the
//! transformed sources, provided their norms products are distinct.

use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::linalg::{c, pinv, svd, CMatrix, CVector};
use crate::model::DemixProblem;
use crate::solver::{
    extract_rank1, objective, solve_single_graph_sum, LiftedSolution, SolverConfig,
};
use crate::spectral::SpectralBasis;

/// Orthogonality tolerance relative to the product of norms.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;
/// Relative singular-value gap below which separation is ambiguous.
pub const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformChoice {
    #[default]
    Identity,
    /// `U` for inputs, the raw Vandermonde matrix for taps.
    Gft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparationSpec {
    pub tx: TransformChoice,
    pub th: TransformChoice,
    pub r: usize,
}

impl SeparationSpec {
    pub fn node_domain(r: usize) -> Self {
        SeparationSpec {
            tx: TransformChoice::Identity,
            th: TransformChoice::Identity,
            r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Node,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorRole {
    /// Length-`N` graph signals, transformed by `U`.
    Signal,
    /// Length-`L` taps in the orthonormal convention, transformed by `Ψ`.
    Taps,
}

/// Largest normalised pairwise inner product `|⟨a, b⟩| / (‖a‖‖b‖)` after the
/// optional transform, and whether it is below [`ORTHOGONALITY_TOL`].
pub fn check_orthogonality(
    vectors: &[CVector],
    domain: Domain,
    role: VectorRole,
    basis: &SpectralBasis,
) -> Result<(bool, f64)> {
    if vectors.len() < 2 {
        return Err(DemixError::param(
            "orthogonality needs at least two vectors",
        ));
    }
    let expected = match role {
        VectorRole::Signal => basis.n,
        VectorRole::Taps => basis.l,
    };
    if vectors.iter().any(|v| v.len() != expected) {
        return Err(DemixError::param(format!(
            "vectors must have length {expected}"
        )));
    }
    let mapped: Vec<CVector> = vectors
        .iter()
        .map(|v| match (domain, role) {
            (Domain::Node, _) => v.clone(),
            (Domain::Spectral, VectorRole::Signal) => &basis.u * v,
            (Domain::Spectral, VectorRole::Taps) => &basis.psi * v,
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (i, a) in mapped.iter().enumerate() {
        for b in &mapped[i + 1..] {
            let denom = a.norm() * b.norm();
            let value = if denom == 0.0 {
                0.0
            } else {
                a.dotc(b).norm() / denom
            };
            worst = worst.max(value);
        }
    }
    Ok((worst <= ORTHOGONALITY_TOL, worst))
}

#[derive(Debug, Clone)]
pub struct Separation {
    /// Components in raw-tap coordinates, by decreasing singular value.
    pub components: Vec<CMatrix>,
    pub singular_values: Vec<f64>,
    pub warning: Option<String>,
}

/// SVD-based split of `z` (raw-tap coordinates) into `spec.r` rank-one parts.
pub fn separate_svd(
    z: &CMatrix,
    spec: &SeparationSpec,
    basis: &SpectralBasis,
) -> Result<Separation> {
    if z.nrows() != basis.n || z.ncols() != basis.l {
        return Err(DemixError::param("lifted matrix does not match the basis"));
    }
    if spec.r == 0 || spec.r > basis.n.min(basis.l) {
        return Err(DemixError::param(format!(
            "cannot extract {} components from a {}x{} matrix",
            spec.r, basis.n, basis.l
        )));
    }
    if z.iter().all(|v| v.norm() == 0.0) {
        return Err(DemixError::Degenerate("lifted matrix is zero".into()));
    }
    let tx = match spec.tx {
        TransformChoice::Identity => None,
        TransformChoice::Gft => Some(&basis.u),
    };
    let th = match spec.th {
        TransformChoice::Identity => None,
        TransformChoice::Gft => Some(&basis.psi_raw),
    };
    let left = tx.map_or_else(|| z.clone(), |t| t * z);
    let transformed = th.map_or_else(|| left.clone(), |t| &left * t.transpose());
    let tx_pinv = tx.map(|t| pinv(t, 1e-12));
    let th_pinv_t = th.map(|t| pinv(t, 1e-12).transpose());

    let svd = svd(&transformed);
    let (u, v_t) = (&svd.u, &svd.v_t);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

    let top = sv[0];
    let tie = (0..spec.r)
        .filter(|&i| i + 1 < sv.len())
        .find(|&i| (sv[i] - sv[i + 1]) <= TIE_TOL * top);
    let warning = tie.map(|i| {
        format!(
            "singular values {} and {} are tied ({:.3e} vs {:.3e}); separation is ambiguous",
            i + 1,
            i + 2,
            sv[i],
            sv[i + 1]
        )
    });

    let components = order
        .iter()
        .take(spec.r)
        .map(|&k| {
            let piece = u.column(k) * v_t.row(k) * c(svd.singular_values[k]);
            let piece = tx_pinv
                .as_ref()
                .map_or_else(|| piece.clone(), |p| p * &piece);
            th_pinv_t
                .as_ref()
                .map_or_else(|| piece.clone(), |p| &piece * p)
        })
        .collect();
    Ok(Separation {
        components,
        singular_values: sv.into_iter().take(spec.r).collect(),
        warning,
    })
}

/// Single-graph pipeline: solve for the summed matrix, separate it by SVD,
/// then extract one rank-one factor per component.
pub fn demix_single_graph(
    p: &DemixProblem,
    cfg: &SolverConfig,
    spec: &SeparationSpec,
) -> Result<LiftedSolution> {
    if spec.r != p.r() {
        return Err(DemixError::param(format!(
            "separation asks for {} components but the problem has {} sources",
            spec.r,
            p.r()
        )));
    }
    let (z, mut diagnostics) = solve_single_graph_sum(p, cfg)?;
    let basis = &p.bases[0];
    let zero = z.iter().all(|v| v.norm() == 0.0);
    let zs: Vec<CMatrix> = if p.r() == 1 || zero {
        let mut zs = vec![CMatrix::zeros(basis.n, basis.l); p.r()];
        zs[0] = z;
        zs
    } else {
        let sep = separate_svd(&basis.lift_to_raw(&z), spec, basis)?;
        diagnostics.warnings.extend(sep.warning);
        sep.components
            .iter()
            .map(|m| basis.lift_to_orthonormal(m))
            .collect()
    };
    let mut xs_hat = Vec::with_capacity(zs.len());
    let mut hs_hat = Vec::with_capacity(zs.len());
    for zi in &zs {
        let (x, h) = if zi.iter().all(|v| v.norm() == 0.0) {
            (CVector::zeros(basis.n), CVector::zeros(basis.l))
        } else {
            extract_rank1(zi, basis)?
        };
        xs_hat.push(x);
        hs_hat.push(h);
    }
    diagnostics.objective = objective(&zs, &cfg.etas_for(p.r()), &cfg.betas_for(p.r()));
    Ok(LiftedSolution {
        zs,
        xs_hat,
        hs_hat,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi, gso_from_graph, karate_club, GsoKind};
    use crate::linalg::{outer, to_complex};
    use crate::model::{
        demixing_error_matched, plant_ground_truth, synthesize_mixture, Orthogonality,
    };
    use crate::solver::solve_convex;
    use crate::spectral::decompose;
    use nalgebra::DVector;
    use std::sync::Arc;

    fn er_basis(n: usize, l: usize, seed: u64) -> Arc<SpectralBasis> {
        let g = erdos_renyi(n, 0.2, seed).unwrap();
        Arc::new(decompose(&gso_from_graph(&g, GsoKind::Adjacency).unwrap(), l).unwrap())
    }

    fn spike(n: usize, k: usize) -> CVector {
        let mut v = CVector::zeros(n);
        v[k] = c(1.0);
        v
    }

    #[test]
    fn orthogonality_examples() {
        let b = er_basis(8, 3, 1);
        let (ok, v) = check_orthogonality(
            &[spike(8, 1), spike(8, 2)],
            Domain::Node,
            VectorRole::Signal,
            &b,
        )
        .unwrap();
        assert!(ok && v == 0.0);
        let (ok, v) = check_orthogonality(
            &[spike(8, 1), spike(8, 1)],
            Domain::Node,
            VectorRole::Signal,
            &b,
        )
        .unwrap();
        assert!(!ok && (v - 1.0).abs() < 1e-15);
        let mut h1 = to_complex(&DVector::from_vec(vec![1.0, 2.0, -1.0]));
        let mut h2 = to_complex(&DVector::from_vec(vec![0.5, -1.0, 3.0]));
        h1 /= c(h1.norm());
        let proj = h1.dotc(&h2);
        h2 -= &h1 * proj;
        let (ok, _) =
            check_orthogonality(&[h1, h2], Domain::Spectral, VectorRole::Taps, &b).unwrap();
        assert!(ok);
        assert!(check_orthogonality(&[spike(8, 1)], Domain::Node, VectorRole::Signal, &b).is_err());
    }

    #[test]
    fn exact_split_in_node_domain() {
        let b = er_basis(10, 3, 2);
        let x1 = &spike(10, 0) + spike(10, 3);
        let x2 = spike(10, 5) * c(0.5 * 2f64.sqrt());
        let h1 = to_complex(&DVector::from_vec(vec![1.0, 0.0, 0.0])) * c(1.0 / 2f64.sqrt());
        let h2 = to_complex(&DVector::from_vec(vec![0.0, 1.0, 0.0]));
        let z1 = outer(&x1, &h1);
        let z2 = outer(&x2, &h2);
        let z = &z1 + &z2;
        let sep = separate_svd(&z, &SeparationSpec::node_domain(2), &b).unwrap();
        assert!(sep.warning.is_none());
        assert!((&sep.components[0] - &z1).norm() <= 1e-8);
        assert!((&sep.components[1] - &z2).norm() <= 1e-8);
    }

    #[test]
    fn rank_one_input_passes_through() {
        let b = er_basis(6, 2, 3);
        let z = outer(
            &spike(6, 2),
            &to_complex(&DVector::from_vec(vec![0.3, -0.4])),
        );
        let sep = separate_svd(&z, &SeparationSpec::node_domain(1), &b).unwrap();
        assert!((&sep.components[0] - &z).norm() < 1e-12);
        assert!(matches!(
            separate_svd(&CMatrix::zeros(6, 2), &SeparationSpec::node_domain(1), &b),
            Err(DemixError::Degenerate(_))
        ));
    }

    #[test]
    fn exact_split_in_spectral_domain() {
        let b = er_basis(10, 3, 4);
        // inputs orthogonal after U, taps orthogonal after the raw Vandermonde matrix
        let xhat1 = &spike(10, 1) * c(2.0);
        let xhat2 = spike(10, 4);
        let x1 = b.igft_signal(&xhat1).unwrap();
        let x2 = b.igft_signal(&xhat2).unwrap();
        let hhat1 = b.psi.column(0).into_owned();
        let hhat2 = b.psi.column(1).into_owned();
        let h1 = pinv(&b.psi_raw, 1e-12) * &hhat1;
        let h2 = pinv(&b.psi_raw, 1e-12) * &hhat2;
        let z1 = outer(&x1, &h1);
        let z2 = outer(&x2, &h2);
        let spec = SeparationSpec {
            tx: TransformChoice::Gft,
            th: TransformChoice::Gft,
            r: 2,
        };
        let sep = separate_svd(&(&z1 + &z2), &spec, &b).unwrap();
        assert!((&sep.components[0] - &z1).norm() <= 1e-8);
        assert!((&sep.components[1] - &z2).norm() <= 1e-8);
    }

    #[test]
    fn ties_raise_a_warning() {
        let b = er_basis(6, 2, 5);
        let z = outer(
            &spike(6, 0),
            &to_complex(&DVector::from_vec(vec![1.0, 0.0])),
        ) + outer(
            &spike(6, 1),
            &to_complex(&DVector::from_vec(vec![0.0, 1.0])),
        );
        let sep = separate_svd(&z, &SeparationSpec::node_domain(2), &b).unwrap();
        assert!(sep.warning.is_some());
    }

    #[test]
    fn single_source_pipeline_matches_blind_deconvolution() {
        let b = er_basis(20, 3, 6);
        let gt =
            plant_ground_truth(std::slice::from_ref(&b), &[2], 3, Orthogonality::None).unwrap();
        let p = synthesize_mixture(&[b], &gt, 0.0, None, false, 3).unwrap();
        let cfg = SolverConfig {
            max_iter: 300,
            sum_reweighting: false,
            ..SolverConfig::default()
        };
        let a = demix_single_graph(&p, &cfg, &SeparationSpec::node_domain(1)).unwrap();
        let d = solve_convex(&p, &cfg).unwrap();
        assert_eq!(a.zs, d.zs);
        assert_eq!(a.xs_hat, d.xs_hat);
    }

    #[test]
    fn karate_separable_instances_mostly_recover() {
        let g = karate_club();
        let b = Arc::new(decompose(&gso_from_graph(&g, GsoKind::Adjacency).unwrap(), 3).unwrap());
        let bases = vec![b.clone(), b];
        let mut ok = 0;
        for seed in 0..6 {
            let gt = plant_ground_truth(&bases, &[2, 2], seed, Orthogonality::Prop1).unwrap();
            let p = synthesize_mixture(&bases, &gt, 0.0, None, false, seed).unwrap();
            let sol = demix_single_graph(
                &p,
                &SolverConfig::default(),
                &SeparationSpec::node_domain(2),
            )
            .unwrap();
            if demixing_error_matched(&sol.estimates(), &gt).unwrap() < 1e-3 {
                ok += 1;
            }
        }
        assert!(ok >= 4, "{ok}/6");
    }
}
