//! Property tests for the invariants of each module.

use std::sync::Arc;

use graph_demix::experiment::{derive_seed, median, spearman};
use graph_demix::graph::{
    barabasi_albert_pair, edge_overlap, erdos_renyi, gso_from_graph, load_edge_list,
};
use graph_demix::linalg::{
    c, l21_norm, nuclear_norm, outer, to_complex, vec_of, CMatrix, CVector, C64,
};
use graph_demix::model::{demixing_error, plant_ground_truth, synthesize_mixture, GroundTruth};
use graph_demix::separation::{separate_svd, SeparationSpec};
use graph_demix::solver::objective;
use graph_demix::solver::prox::{row_shrink, singular_value_threshold};
use graph_demix::spectral::{apply_filter_vertex, decompose};
use graph_demix::theory::{alpha_bounds, kappa, rho, ConcentrationParams};
use graph_demix::{GsoKind, Orthogonality, SpectralBasis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// First draw from `seed` onwards whose shift supports `l` taps.
fn basis(n: usize, p: f64, l: usize, seed: u64) -> Arc<SpectralBasis> {
    (0..)
        .find_map(|k| {
            let g = erdos_renyi(n, p, seed.wrapping_add(k)).unwrap();
            decompose(&gso_from_graph(&g, GsoKind::Adjacency).unwrap(), l).ok()
        })
        .map(Arc::new)
        .unwrap()
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> CVector {
    CVector::from_fn(len, |_, _| {
        c(rng.sample::<f64, _>(rand_distr::StandardNormal))
    })
}

fn complex_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

fn rel(a: &CVector, b: &CVector) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generators_are_deterministic(n in 10usize..40, p in 0.05f64..0.6, seed in any::<u64>()) {
        prop_assert_eq!(erdos_renyi(n, p, seed).unwrap(), erdos_renyi(n, p, seed).unwrap());
        let a = barabasi_albert_pair(n, 0.5, seed).unwrap();
        let b = barabasi_albert_pair(n, 0.5, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pair_overlap_is_exact_and_symmetric(n in 12usize..50, alpha in 0.0f64..=1.0, seed in any::<u64>()) {
        let (g1, g2) = barabasi_albert_pair(n, alpha, seed).unwrap();
        prop_assert_eq!(g1.edge_count(), g2.edge_count());
        let shared = g1.edges().filter(|&(i, j, _)| g2.has_edge(i, j)).count() as f64;
        let target = (alpha * g1.edge_count() as f64).round();
        prop_assert!((shared - target).abs() <= 1.0, "{} shared for target {}", shared, target);
        prop_assert_eq!(edge_overlap(&g1, &g2).unwrap(), edge_overlap(&g2, &g1).unwrap());
    }

    #[test]
    fn undirected_shift_is_symmetric(n in 2usize..30, p in 0.0f64..1.0, seed in any::<u64>()) {
        let g = erdos_renyi(n, p, seed).unwrap();
        for kind in [GsoKind::Adjacency, GsoKind::Laplacian] {
            let s = gso_from_graph(&g, kind).unwrap().matrix;
            prop_assert_eq!(&s, &s.transpose());
        }
        let back = load_edge_list(g.to_edge_list().as_bytes()).unwrap();
        prop_assert_eq!(back.n(), g.n());
        prop_assert!(back.edges().eq(g.edges()));
    }

    #[test]
    fn convolution_and_lifting(n in 4usize..30, l in 1usize..5, seed in any::<u64>()) {
        let b = basis(n, 0.3, l.min(n), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = gaussian(&mut rng, n);
        let h = gaussian(&mut rng, b.l);
        let y = apply_filter_vertex(&b.shift, &h, &x).unwrap();
        // GFT of the output is the pointwise product of frequency response and input GFT
        let lhs = b.gft_signal(&y).unwrap();
        let rhs = b.filter_response(&h).unwrap().component_mul(&b.gft_signal(&x).unwrap());
        prop_assert!(rel(&lhs, &rhs) <= 1e-9);
        let lifted = b.transfer_matrix() * vec_of(&outer(&x, &b.to_orthonormal_taps(&h)));
        prop_assert!(rel(&lifted, &y) <= 1e-9);
        // real symmetric shift: every output real
        prop_assert!(lifted.iter().chain(lhs.iter()).all(|z| z.im.abs() <= 1e-10));
    }

    #[test]
    fn mixture_is_linear_in_sources(seed in any::<u64>()) {
        let b1 = basis(16, 0.3, 3, seed);
        let b2 = basis(16, 0.3, 3, seed.wrapping_add(1));
        let g1 = plant_ground_truth(std::slice::from_ref(&b1), &[2], seed, Orthogonality::None).unwrap();
        let g2 = plant_ground_truth(std::slice::from_ref(&b2), &[3], seed ^ 7, Orthogonality::None).unwrap();
        let both = GroundTruth {
            xs: vec![g1.xs[0].clone(), g2.xs[0].clone()],
            hs: vec![g1.hs[0].clone(), g2.hs[0].clone()],
            supports: vec![g1.supports[0].clone(), g2.supports[0].clone()],
        };
        let y = synthesize_mixture(&[b1.clone(), b2.clone()], &both, 0.0, None, false, 0).unwrap().y;
        let y1 = synthesize_mixture(&[b1], &g1, 0.0, None, false, 0).unwrap().y;
        let y2 = synthesize_mixture(&[b2], &g2, 0.0, None, false, 0).unwrap().y;
        prop_assert!(rel(&y, &(y1 + y2)) <= 1e-12);
    }

    #[test]
    fn demixing_error_ignores_factor_scaling(seed in any::<u64>(), scale in 0.1f64..10.0, flip in any::<bool>()) {
        let b = basis(12, 0.3, 2, seed);
        let gt = plant_ground_truth(&[b.clone(), b], &[2, 2], seed, Orthogonality::None).unwrap();
        let k = if flip { -scale } else { scale };
        let est: Vec<(CVector, CVector)> = (0..2)
            .map(|i| (to_complex(&gt.xs[i]) * c(k), to_complex(&gt.hs[i]) * c(1.0 / k)))
            .collect();
        prop_assert!(demixing_error(&est, &gt).unwrap() <= 1e-12);
        let lifted = outer(&est[0].0, &est[0].1);
        prop_assert!((lifted - gt.lifted_raw(0)).norm() <= 1e-12);
    }

    #[test]
    fn split_objective_is_homogeneous(seed in any::<u64>(), theta in 0.0f64..=1.0, eta in 0.0f64..3.0, beta in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = outer(&gaussian(&mut rng, 10), &gaussian(&mut rng, 3));
        let whole = objective(&[z.clone(), CMatrix::zeros(10, 3)], &[eta; 2], &[beta; 2]);
        let split = objective(&[&z * c(theta), &z * c(1.0 - theta)], &[eta; 2], &[beta; 2]);
        prop_assert!((whole - split).abs() <= 1e-12 * whole.max(1.0));
    }

    #[test]
    fn prox_operators(seed in any::<u64>(), tau in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = complex_matrix(&mut rng, 10, 4);
        let x = singular_value_threshold(&m, tau, None);
        // prox value never exceeds the value at the input itself
        let at = |v: &CMatrix| 0.5 * (v - &m).norm_squared() + tau * nuclear_norm(v);
        prop_assert!(at(&x) <= at(&m) + 1e-12);
        let r = row_shrink(&m, tau, None);
        for (a, b) in m.row_iter().zip(r.row_iter()) {
            prop_assert!((b.norm() - (a.norm() - tau).max(0.0)).abs() <= 1e-12);
        }
        prop_assert!(l21_norm(&r) <= l21_norm(&m));
    }

    #[test]
    fn separation_reconstructs_prop1_sums(seed in any::<u64>()) {
        let b = basis(20, 0.25, 3, seed);
        let bases = vec![b.clone(), b.clone()];
        let gt = plant_ground_truth(&bases, &[2, 2], seed, Orthogonality::Prop1).unwrap();
        let z = gt.lifted_raw(0) + gt.lifted_raw(1);
        let sep = separate_svd(&z, &SeparationSpec::node_domain(2), &b).unwrap();
        let total = sep.components.iter().fold(CMatrix::zeros(20, 3), |acc, m| acc + m);
        prop_assert!((total - &z).norm() <= 1e-8 * z.norm());
        prop_assert!(sep.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rho_monotone_and_kappa_bounded(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = complex_matrix(&mut rng, rows, cols);
        let b = complex_matrix(&mut rng, rows, cols);
        for k in 1..cols {
            prop_assert!(rho(&a, k).unwrap() <= rho(&a, k + 1).unwrap());
        }
        let (k1, k2) = (rng.random_range(1..=cols), rng.random_range(1..=cols));
        let bound = (rho(&a, k1).unwrap() * rho(&b, k2).unwrap()).sqrt();
        prop_assert!(kappa(&a, &b, k1, k2).unwrap() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn alpha_bounds_decrease_in_every_input(seed in any::<u64>(), bump in 1.01f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || rng.random_range(0.05..2.0);
        let base = ConcentrationParams {
            rho_u: vec![v(), v()],
            rho_psi: vec![v(), v()],
            kappa_u: vec![vec![v(), v()], vec![v(), v()]],
            kappa_psi: vec![vec![v(), v()], vec![v(), v()]],
            mu_h: v(),
            mu_max: v(),
        };
        let eval = |p: &ConcentrationParams| alpha_bounds(p, 30, 2, &[2, 2], &[1, 1], 1.0).unwrap().alpha;
        let reference = eval(&base);
        let mut perturbed: Vec<ConcentrationParams> = Vec::new();
        for i in 0..2 {
            let mut p = base.clone();
            p.rho_u[i] *= bump;
            perturbed.push(p);
            let mut p = base.clone();
            p.rho_psi[i] *= bump;
            perturbed.push(p);
        }
        let mut p = base.clone();
        p.kappa_u[0][1] *= bump;
        p.kappa_u[1][0] *= bump;
        perturbed.push(p);
        let mut p = base.clone();
        p.kappa_psi[0][1] *= bump;
        p.kappa_psi[1][0] *= bump;
        perturbed.push(p);
        let mut p = base.clone();
        p.mu_h *= bump;
        perturbed.push(p);
        let mut p = base.clone();
        p.mu_max *= bump;
        perturbed.push(p);
        for p in &perturbed {
            prop_assert!(eval(p) <= reference);
        }
    }

    #[test]
    fn seeds_and_statistics(master in any::<u64>(), g in 0u64..1000, t in 0u64..1000, xs in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        prop_assert_eq!(derive_seed(master, g, t), derive_seed(master, g, t));
        prop_assert_ne!(derive_seed(master, g, t), derive_seed(master, g, t + 1));
        let m = median(&xs);
        let below = xs.iter().filter(|&&x| x <= m).count();
        let above = xs.iter().filter(|&&x| x >= m).count();
        prop_assert!(2 * below >= xs.len() && 2 * above >= xs.len());
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 1.0).collect();
        let r = spearman(&xs, &ys);
        prop_assert!(r.is_nan() || (r - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn resampled_gft_is_deterministic_and_keeps_row_norms() {
    let b = basis(15, 0.3, 2, 4);
    let gt = plant_ground_truth(std::slice::from_ref(&b), &[2], 1, Orthogonality::None).unwrap();
    let p1 = synthesize_mixture(std::slice::from_ref(&b), &gt, 0.0, None, true, 9).unwrap();
    let p2 = synthesize_mixture(std::slice::from_ref(&b), &gt, 0.0, None, true, 9).unwrap();
    assert_eq!(p1.signal_gfts, p2.signal_gfts);
    // every resampled row is a row of U, so row norms carry over
    for row in p1.signal_gfts[0].row_iter() {
        assert!(b.u.row_iter().any(|r| r == row));
    }
}
