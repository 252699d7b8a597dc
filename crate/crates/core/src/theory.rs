//! Concentration functions, coherence scalars, recovery-probability bounds,
//! the graph-pair predictor and the local-isometry diagnostics.
//!
//! `ρ` and `κ` are evaluated on the scaled signal GFT `U` and on the
//! orthonormalised Vandermonde matrix `Ψ`. The tap coherence `μ_h` uses the
//! trivial partition (a single block), so only its node-wise term remains.
//! All logarithms are natural.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::linalg::{spectral_norm, CMatrix, CVector};
use crate::model::DemixProblem;
use crate::spectral::{frequency_operator, SpectralBasis};

fn top_k_energy(row: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut sq: Vec<f64> = row.collect();
    sq.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    sq.iter().take(k).sum()
}

fn row_energies(a: &CMatrix, k: usize) -> Vec<f64> {
    a.row_iter()
        .map(|r| top_k_energy(r.iter().map(|z| z.norm_sqr()), k))
        .collect()
}

/// Largest energy any row keeps on its best `k` entries.
pub fn rho(a: &CMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > a.ncols() {
        return Err(DemixError::param(format!(
            "subset size {k} outside [1, {}]",
            a.ncols()
        )));
    }
    Ok(row_energies(a, k).into_iter().fold(0.0, f64::max))
}

/// Largest product, over a common row, of the best-`k1` row norm of `a` and
/// the best-`k2` row norm of `b`.
pub fn kappa(a: &CMatrix, b: &CMatrix, k1: usize, k2: usize) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(DemixError::param(format!(
            "row counts differ: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if k1 == 0 || k1 > a.ncols() || k2 == 0 || k2 > b.ncols() {
        return Err(DemixError::param("subset size out of range"));
    }
    let ea = row_energies(a, k1);
    let eb = row_energies(b, k2);
    Ok(ea
        .iter()
        .zip(&eb)
        .map(|(x, y)| x.sqrt() * y.sqrt())
        .fold(0.0, f64::max))
}

fn require_distinct(basis: &SpectralBasis) -> Result<()> {
    if basis.distinct {
        Ok(())
    } else {
        Err(DemixError::ModelViolation(
            "shift has repeated eigenvalues; Vandermonde-based quantities are undefined".into(),
        ))
    }
}

fn psi_columns(basis: &SpectralBasis, l: usize) -> Result<CMatrix> {
    if l == 0 || l > basis.l {
        return Err(DemixError::param(format!(
            "filter order {l} outside [1, {}]",
            basis.l
        )));
    }
    // Gram–Schmidt is nested, so the leading columns orthonormalise the shorter Vandermonde matrix
    Ok(basis.psi.columns(0, l).into_owned())
}

/// `μ_h = √N · max_{i,n} |ψ_{i,n}ᴴ h′_i| / ‖h′_i‖` with `h′ = T h` from raw taps.
pub fn mu_h(bases: &[&SpectralBasis], hs: &[CVector]) -> Result<f64> {
    if bases.len() != hs.len() || bases.is_empty() {
        return Err(DemixError::param("one tap vector per basis is required"));
    }
    let mut worst: f64 = 0.0;
    for (b, h) in bases.iter().zip(hs) {
        require_distinct(b)?;
        if h.len() != b.l {
            return Err(DemixError::param(format!("taps must have length {}", b.l)));
        }
        let hp = b.to_orthonormal_taps(h);
        let norm = hp.norm();
        if norm == 0.0 {
            return Err(DemixError::Degenerate("zero tap vector".into()));
        }
        let projections = b.psi.conjugate() * &hp;
        let best = projections.iter().fold(0.0, |a: f64, z| a.max(z.norm()));
        worst = worst.max(b.n as f64 * (best / norm).powi(2));
    }
    Ok(worst.sqrt())
}

/// `μ_max = max_{i,n} √(N / L_i) ‖ψ_{i,n}‖`.
pub fn mu_max(bases: &[&SpectralBasis]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for b in bases {
        require_distinct(b)?;
        for row in b.psi.row_iter() {
            worst = worst.max(b.n as f64 / b.l as f64 * row.norm_squared());
        }
    }
    Ok(worst.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    pub rho_u: Vec<f64>,
    pub rho_psi: Vec<f64>,
    pub kappa_u: Vec<Vec<f64>>,
    pub kappa_psi: Vec<Vec<f64>>,
    pub mu_h: f64,
    pub mu_max: f64,
}

/// Every quantity entering the recovery bounds, for sources with input
/// sparsities `ss` and raw taps `hs`.
pub fn concentration_params(
    bases: &[&SpectralBasis],
    ss: &[usize],
    hs: &[CVector],
) -> Result<ConcentrationParams> {
    let r = bases.len();
    if r == 0 || ss.len() != r || hs.len() != r {
        return Err(DemixError::param("bases, sparsities and taps must align"));
    }
    for b in bases {
        require_distinct(b)?;
    }
    let rho_u = bases
        .iter()
        .zip(ss)
        .map(|(b, &s)| rho(&b.u, s))
        .collect::<Result<Vec<_>>>()?;
    let rho_psi = bases
        .iter()
        .map(|b| rho(&b.psi, b.l))
        .collect::<Result<Vec<_>>>()?;
    let mut kappa_u = vec![vec![0.0; r]; r];
    let mut kappa_psi = vec![vec![0.0; r]; r];
    for k in 0..r {
        for j in 0..r {
            kappa_u[k][j] = kappa(&bases[k].u, &bases[j].u, ss[k], ss[j])?;
            kappa_psi[k][j] = kappa(&bases[k].psi, &bases[j].psi, bases[k].l, bases[j].l)?;
        }
    }
    Ok(ConcentrationParams {
        rho_u,
        rho_psi,
        kappa_u,
        kappa_psi,
        mu_h: mu_h(bases, hs)?,
        mu_max: mu_max(bases)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryBounds {
    pub alpha1: f64,
    /// `None` for a single source (empty minimum over pairs).
    pub alpha2: Option<f64>,
    pub alpha3: f64,
    pub alpha: f64,
    /// True when `alpha < 1`, in which case no probability is implied.
    pub vacuous: bool,
    /// `1 − N^{1−α}` when not vacuous.
    pub probability: Option<f64>,
    pub constant_c: f64,
}

/// Evaluates the three exponent bounds and the implied success probability.
pub fn alpha_bounds(
    params: &ConcentrationParams,
    n: usize,
    r: usize,
    ls: &[usize],
    ss: &[usize],
    constant_c: f64,
) -> Result<RecoveryBounds> {
    if n < 2 || r == 0 || ls.len() != r || ss.len() != r {
        return Err(DemixError::param(
            "need N ≥ 2 and one (L, S) pair per source",
        ));
    }
    if params.rho_u.len() != r || params.rho_psi.len() != r {
        return Err(DemixError::param(
            "parameters do not match the source count",
        ));
    }
    if ls.iter().chain(ss).any(|&v| v == 0) {
        return Err(DemixError::param(
            "filter orders and sparsities must be positive",
        ));
    }
    if constant_c.is_nan() || constant_c <= 0.0 {
        return Err(DemixError::param("constant must be positive"));
    }
    let nf = n as f64;
    let rf = r as f64;

    let alpha1 = (0..r)
        .map(|i| {
            let log = (2.0 * nf * ls[i] as f64 * ss[i] as f64).ln();
            3.0 / 128.0 / (params.rho_psi[i] * params.rho_u[i] * log)
        })
        .fold(f64::INFINITY, f64::min);

    let mut alpha2 = None::<f64>;
    for k in 0..r {
        for j in (0..r).filter(|&j| j != k) {
            let rho_max = params.rho_u[k].max(params.rho_u[j]);
            let inner = params.rho_psi[k] * params.rho_psi[j] * rho_max
                + params.kappa_u[k][j] * params.kappa_psi[k][j] / rf;
            let v = 9.0 / (32.0 * rf * rf * (2.0 * nf).ln()) / inner;
            alpha2 = Some(alpha2.map_or(v, |a| a.min(v)));
        }
    }

    let log_n = nf.ln();
    let alpha3 = (0..r)
        .map(|i| {
            let spread = (params.mu_max.powi(2) * ls[i] as f64).max(params.mu_h.powi(2) * nf);
            1.0 / constant_c / (nf * rf * spread * log_n * log_n) - rf.ln()
        })
        .fold(f64::INFINITY, f64::min);

    let alpha = alpha1.min(alpha2.unwrap_or(f64::INFINITY)).min(alpha3);
    let vacuous = alpha.is_nan() || alpha < 1.0;
    let probability = (!vacuous).then(|| 1.0 - nf.powf(1.0 - alpha));
    Ok(RecoveryBounds {
        alpha1,
        alpha2,
        alpha3,
        alpha,
        vacuous,
        probability,
        constant_c,
    })
}

/// `ρ_{U_k}^{(S_k)} ρ_{U_j}^{(S_j)} ρ_{Ψ_k}^{(L_k)} ρ_{Ψ_j}^{(L_j)}`.
pub fn predictor_rho_bar(
    basis_k: &SpectralBasis,
    basis_j: &SpectralBasis,
    s_k: usize,
    s_j: usize,
    l_k: usize,
    l_j: usize,
) -> Result<f64> {
    require_distinct(basis_k)?;
    require_distinct(basis_j)?;
    Ok(rho(&basis_k.u, s_k)?
        * rho(&basis_j.u, s_j)?
        * rho(&psi_columns(basis_k, l_k)?, l_k)?
        * rho(&psi_columns(basis_j, l_j)?, l_j)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(value: f64, threshold: f64) -> Self {
        Check {
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    /// `‖K_{i,Ω}ᴴ K_{i,Ω} − I‖` per source, against `1/4`.
    pub local_isometry: Vec<Check>,
    /// `max_{j≠k} ‖K_{j,Ω}ᴴ K_{k,Ω}‖`, against `1/(4R)`.
    pub cross_coherence: Check,
    /// `‖K_i‖` per source, against `√(2N(ln(2 L_i N) + 1) + 1)`.
    pub operator_norms: Vec<Check>,
}

fn support_restriction(k: &CMatrix, n: usize, l: usize, support: &[usize]) -> CMatrix {
    let cols: Vec<usize> = (0..l)
        .flat_map(|t| support.iter().map(move |&s| t * n + s))
        .collect();
    k.select_columns(cols.iter())
}

/// Local isometry, cross-coherence and operator-norm conditions of the
/// frequency-domain sampling operators, restricted to the given supports.
pub fn check_lemma1_conditions(p: &DemixProblem, supports: &[Vec<usize>]) -> Result<Lemma1Report> {
    let r = p.r();
    let n = p.n();
    if supports.len() != r {
        return Err(DemixError::param(format!(
            "{} supports for {r} sources",
            supports.len()
        )));
    }
    for s in supports {
        if let Some(&bad) = s.iter().find(|&&i| i >= n) {
            return Err(DemixError::param(format!(
                "support index {bad} outside [0, {n})"
            )));
        }
    }
    let ops: Vec<CMatrix> = p
        .bases
        .iter()
        .zip(&p.signal_gfts)
        .map(|(b, us)| frequency_operator(us, &b.psi))
        .collect();
    let restricted: Vec<CMatrix> = ops
        .iter()
        .zip(&p.bases)
        .zip(supports)
        .map(|((k, b), s)| support_restriction(k, n, b.l, s))
        .collect();

    let local_isometry = restricted
        .iter()
        .map(|k| {
            let g = k.ad_mul(k) - CMatrix::identity(k.ncols(), k.ncols());
            Check::at_most(spectral_norm(&g), 0.25)
        })
        .collect();
    let mut mu: f64 = 0.0;
    for a in 0..r {
        for b in (0..r).filter(|&b| b != a) {
            mu = mu.max(spectral_norm(&restricted[a].ad_mul(&restricted[b])));
        }
    }
    let cross_coherence = Check::at_most(mu, 1.0 / (4.0 * r as f64));
    let operator_norms = ops
        .iter()
        .zip(&p.bases)
        .map(|(k, b)| {
            let nf = n as f64;
            let gamma = (2.0 * nf * ((2.0 * b.l as f64 * nf).ln() + 1.0) + 1.0).sqrt();
            Check::at_most(spectral_norm(k), gamma)
        })
        .collect();
    Ok(Lemma1Report {
        local_isometry,
        cross_coherence,
        operator_norms,
    })
}

/// Theory summary for one group of graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub id: String,
    pub params: ConcentrationParams,
    pub bounds: RecoveryBounds,
    /// Predictor for every ordered pair `(k, j)`, `k < j`.
    pub rho_bar: Vec<((usize, usize), f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi, gso_from_graph, GsoKind};
    use crate::linalg::{c, to_complex_matrix};
    use crate::model::{plant_ground_truth, synthesize_mixture, Orthogonality};
    use crate::spectral::decompose;
    use itertools::Itertools;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn m(rows: usize, cols: usize, v: &[f64]) -> CMatrix {
        to_complex_matrix(&DMatrix::from_row_slice(rows, cols, v))
    }

    fn er_basis(n: usize, l: usize, seed: u64) -> Arc<SpectralBasis> {
        let mut s = seed;
        loop {
            let g = erdos_renyi(n, 0.2, s).unwrap();
            let b = decompose(&gso_from_graph(&g, GsoKind::Adjacency).unwrap(), l).unwrap();
            if b.distinct {
                return Arc::new(b);
            }
            s += 1000;
        }
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho(&m(2, 2, &[1.0, 0.0, 0.0, 1.0]), 1).unwrap(), 1.0);
        assert_eq!(rho(&m(2, 2, &[1.0, 1.0, 1.0, -1.0]), 2).unwrap(), 2.0);
        assert_eq!(rho(&m(1, 3, &[3.0, 0.0, 4.0]), 1).unwrap(), 16.0);
        assert!(rho(&m(1, 3, &[3.0, 0.0, 4.0]), 4).is_err());
        assert!(rho(&m(1, 3, &[3.0, 0.0, 4.0]), 0).is_err());
    }

    #[test]
    fn kappa_examples() {
        let id = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(kappa(&id, &id, 1, 1).unwrap(), 1.0);
        assert_eq!(
            kappa(&m(1, 2, &[1.0, 2.0]), &m(1, 2, &[3.0, 0.0]), 1, 1).unwrap(),
            6.0
        );
        assert!(kappa(&id, &m(1, 2, &[1.0, 2.0]), 1, 1).is_err());
    }

    #[test]
    fn alpha1_spot_value() {
        let params = ConcentrationParams {
            rho_u: vec![1.0],
            rho_psi: vec![1.0],
            kappa_u: vec![vec![1.0]],
            kappa_psi: vec![vec![1.0]],
            mu_h: 1.0,
            mu_max: 1.0,
        };
        let b = alpha_bounds(&params, 2, 1, &[1], &[1], 1.0).unwrap();
        assert!((b.alpha1 - 3.0 / 128.0 / 4f64.ln()).abs() < 1e-12);
        assert!((b.alpha1 - 0.0169).abs() < 1e-4);
        assert!(b.vacuous && b.probability.is_none());
        assert!(b.alpha2.is_none());
    }

    #[test]
    fn alpha1_halves_when_rho_doubles() {
        let params = ConcentrationParams {
            rho_u: vec![1.5, 2.0],
            rho_psi: vec![0.4, 0.7],
            kappa_u: vec![vec![1.0, 1.2], vec![1.2, 1.0]],
            kappa_psi: vec![vec![0.5, 0.3], vec![0.3, 0.5]],
            mu_h: 1.2,
            mu_max: 1.1,
        };
        let a = alpha_bounds(&params, 30, 2, &[2, 2], &[3, 3], 1.0).unwrap();
        let doubled = ConcentrationParams {
            rho_u: params.rho_u.iter().map(|v| v * 2.0).collect(),
            ..params.clone()
        };
        let b = alpha_bounds(&doubled, 30, 2, &[2, 2], &[3, 3], 1.0).unwrap();
        assert!((b.alpha1 - a.alpha1 / 2.0).abs() < 1e-15);
        assert!(b.alpha2.unwrap() < a.alpha2.unwrap());
    }

    #[test]
    fn probability_when_not_vacuous() {
        let params = ConcentrationParams {
            rho_u: vec![1e-4],
            rho_psi: vec![1e-4],
            kappa_u: vec![vec![0.0]],
            kappa_psi: vec![vec![0.0]],
            mu_h: 1e-4,
            mu_max: 1e-4,
        };
        let b = alpha_bounds(&params, 10, 1, &[1], &[1], 1.0).unwrap();
        assert!(!b.vacuous);
        let p = b.probability.unwrap();
        assert!((p - (1.0 - 10f64.powf(1.0 - b.alpha))).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn mu_examples() {
        let b = er_basis(12, 3, 4);
        let rows: Vec<f64> = b.psi.row_iter().map(|r| r.norm_squared()).collect();
        let expected = (12.0 / 3.0 * rows.iter().cloned().fold(0.0, f64::max)).sqrt();
        assert!((mu_max(&[&b]).unwrap() - expected).abs() < 1e-12);
        // taps whose orthonormal form is aligned with a row of Ψ
        let n0 = 5;
        let hp: CVector = b.psi.row(n0).transpose().conjugate();
        let h = b.to_raw_taps(&hp);
        let direct = (0..12)
            .map(|n| (b.psi.row(n).conjugate() * &hp)[0].norm().powi(2))
            .fold(0.0, f64::max)
            * 12.0
            / hp.norm_squared();
        assert!((mu_h(&[&b], &[h]).unwrap().powi(2) - direct).abs() < 1e-9 * direct);
        assert!(matches!(
            mu_h(&[&b], &[CVector::zeros(3)]),
            Err(DemixError::Degenerate(_))
        ));
    }

    #[test]
    fn predictor_is_product_of_rhos() {
        let a = er_basis(30, 2, 10);
        let b = er_basis(30, 2, 20);
        let v = predictor_rho_bar(&a, &b, 1, 1, 2, 2).unwrap();
        let expected = rho(&a.u, 1).unwrap()
            * rho(&b.u, 1).unwrap()
            * rho(&a.psi, 2).unwrap()
            * rho(&b.psi, 2).unwrap();
        assert!((v - expected).abs() <= 1e-12 * expected);
        let w = predictor_rho_bar(&b, &a, 1, 1, 2, 2).unwrap();
        assert!((v - w).abs() <= 1e-12 * v);
    }

    #[test]
    fn theory_refuses_repeated_eigenvalues() {
        let id = crate::graph::Gso::from_matrix(CMatrix::identity(4, 4), GsoKind::Custom).unwrap();
        let b = decompose(&id, 1).unwrap();
        assert!(matches!(mu_max(&[&b]), Err(DemixError::ModelViolation(_))));
    }

    #[test]
    fn exhaustive_oracle_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let rows = rng.random_range(1..5);
            let cols = rng.random_range(1..7);
            let a = CMatrix::from_fn(rows, cols, |_, _| c(rng.random_range(-2.0..2.0)));
            for k in 1..=cols {
                let brute = a
                    .row_iter()
                    .map(|r| {
                        (0..cols)
                            .combinations(k)
                            .map(|idx| idx.iter().map(|&j| r[j].norm_sqr()).sum::<f64>())
                            .fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max);
                assert!((rho(&a, k).unwrap() - brute).abs() <= 1e-12 * brute.max(1.0));
            }
        }
    }

    #[test]
    fn single_source_isometry_is_exact_for_orthonormal_columns() {
        // identity shift with L = 1: K restricted to a support is a set of U columns / √N-scaled
        let b = er_basis(16, 1, 3);
        let gt =
            plant_ground_truth(std::slice::from_ref(&b), &[1], 0, Orthogonality::None).unwrap();
        let p = synthesize_mixture(&[b], &gt, 0.0, None, false, 0).unwrap();
        let rep = check_lemma1_conditions(&p, &gt.supports).unwrap();
        assert!(rep.local_isometry[0].value < 1e-10);
        assert!(rep.local_isometry[0].pass);
        assert_eq!(rep.cross_coherence.value, 0.0);
        assert!(rep.operator_norms[0].pass);
    }

    #[test]
    fn identical_pairs_are_more_coherent_than_independent_ones() {
        for seed in 0..5 {
            let a = er_basis(40, 2, 100 + seed);
            let b = er_basis(40, 2, 200 + seed);
            let same = vec![a.clone(), a.clone()];
            let gt = plant_ground_truth(&same, &[2, 2], seed, Orthogonality::None).unwrap();
            let supports = vec![gt.supports[0].clone(), gt.supports[0].clone()];
            let p_same = synthesize_mixture(&same, &gt, 0.0, None, false, seed).unwrap();
            let rep_same = check_lemma1_conditions(&p_same, &supports).unwrap();
            assert!(!rep_same.cross_coherence.pass);
            let iso = rep_same.local_isometry[0].value;
            assert!(rep_same.cross_coherence.value >= 1.0 - iso - 1e-12);

            let diff = vec![a, b];
            let p_diff = synthesize_mixture(&diff, &gt, 0.0, None, false, seed).unwrap();
            let rep_diff = check_lemma1_conditions(&p_diff, &supports).unwrap();
            assert!(rep_diff.cross_coherence.value < rep_same.cross_coherence.value);
        }
    }
}
