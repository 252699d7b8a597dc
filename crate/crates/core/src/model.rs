//! Planted demixing instances, observed mixtures and scoring.

use std::sync::Arc;

use itertools::Itertools;
use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::graph::{Gso, GsoKind};
use crate::linalg::{c, outer, to_complex, CMatrix, CVector, C64};
use crate::spectral::{apply_filter_vertex, decompose, transfer_matrix_from, SpectralBasis};

/// Default success threshold on the demixing error.
pub const SUCCESS_THRESHOLD: f64 = 1e-3;

/// Minimum relative gap enforced between the σ-products of planted
/// single-graph sources.
pub const PRODUCT_GAP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Orthogonality {
    #[default]
    None,
    /// Disjoint supports, orthogonal taps and separated σ-products, so the
    /// sum of the lifted matrices can be split by an SVD.
    Prop1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub xs: Vec<DVector<f64>>,
    /// Raw filter taps.
    pub hs: Vec<DVector<f64>>,
    pub supports: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn r(&self) -> usize {
        self.xs.len()
    }

    /// Planted `x_i h_iᵀ` in raw-tap coordinates.
    pub fn lifted_raw(&self, i: usize) -> CMatrix {
        outer(&to_complex(&self.xs[i]), &to_complex(&self.hs[i]))
    }

    /// Planted `x_i h′_iᵀ` in the orthonormal-tap convention of `basis`.
    pub fn lifted(&self, i: usize, basis: &SpectralBasis) -> CMatrix {
        basis.lift_to_orthonormal(&self.lifted_raw(i))
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(len, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

fn products_separated(products: &[f64]) -> bool {
    let mut p = products.to_vec();
    p.sort_by(|a, b| b.total_cmp(a));
    p.windows(2).all(|w| w[1] <= (1.0 - PRODUCT_GAP) * w[0])
}

/// Draws Gaussian inputs on uniformly random supports and Gaussian taps, all
/// unit-normalised. In [`Orthogonality::Prop1`] mode the supports are
/// disjoint, the taps orthonormal, the inputs share one ℓ₁ norm (the largest
/// ℓ₂ norm being 1) and the products `‖x_i‖‖h_i‖` differ pairwise by at least
/// [`PRODUCT_GAP`]; when redrawing cannot reach that gap, the taps are
/// rescaled geometrically.
pub fn plant_ground_truth(
    bases: &[Arc<SpectralBasis>],
    sparsity: &[usize],
    seed: u64,
    orthogonality: Orthogonality,
) -> Result<GroundTruth> {
    let r = bases.len();
    if r == 0 || sparsity.len() != r {
        return Err(DemixError::param(format!(
            "{} bases but {} sparsity levels",
            r,
            sparsity.len()
        )));
    }
    let n = bases[0].n;
    if bases.iter().any(|b| b.n != n) {
        return Err(DemixError::param("bases disagree on node count"));
    }
    if let Some(&s) = sparsity.iter().find(|&&s| s == 0 || s > n) {
        return Err(DemixError::param(format!("sparsity {s} outside [1, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    match orthogonality {
        Orthogonality::None => {
            let mut xs = Vec::with_capacity(r);
            let mut hs = Vec::with_capacity(r);
            let mut supports = Vec::with_capacity(r);
            for (b, &s) in bases.iter().zip(sparsity) {
                let support = sorted(sample(&mut rng, n, s).into_vec());
                let vals = unit_gaussian(&mut rng, s);
                let mut x = DVector::zeros(n);
                for (k, &idx) in support.iter().enumerate() {
                    x[idx] = vals[k];
                }
                xs.push(x);
                hs.push(unit_gaussian(&mut rng, b.l));
                supports.push(support);
            }
            Ok(GroundTruth { xs, hs, supports })
        }
        Orthogonality::Prop1 => plant_separable(bases, sparsity, &mut rng),
    }
}

fn plant_separable(
    bases: &[Arc<SpectralBasis>],
    sparsity: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<GroundTruth> {
    let r = bases.len();
    let n = bases[0].n;
    let l = bases[0].l;
    if bases.iter().any(|b| b.l != l) {
        return Err(DemixError::param(
            "separable planting needs a common filter order",
        ));
    }
    let total: usize = sparsity.iter().sum();
    if total > n {
        return Err(DemixError::param(format!(
            "disjoint supports need {total} nodes but only {n} exist"
        )));
    }
    if r > l {
        return Err(DemixError::param(format!(
            "{r} orthogonal tap vectors do not fit in dimension {l}"
        )));
    }

    let pool = sample(rng, n, total).into_vec();
    let mut supports = Vec::with_capacity(r);
    let mut offset = 0;
    for &s in sparsity {
        supports.push(sorted(pool[offset..offset + s].to_vec()));
        offset += s;
    }

    // Gram–Schmidt on Gaussian taps
    let mut hs: Vec<DVector<f64>> = Vec::with_capacity(r);
    while hs.len() < r {
        let mut h = unit_gaussian(rng, l);
        for q in &hs {
            let proj = q.dot(&h);
            h -= q * proj;
        }
        let norm = h.norm();
        if norm > 1e-6 {
            hs.push(h / norm);
        }
    }

    let draw_values = |rng: &mut ChaCha8Rng| -> Vec<DVector<f64>> {
        sparsity
            .iter()
            .map(|&s| {
                let v = DVector::<f64>::from_fn(s, |_, _| StandardNormal.sample(rng));
                let l1 = v.lp_norm(1);
                v / l1
            })
            .collect()
    };
    let mut values = draw_values(rng);
    for _ in 0..64 {
        let norms: Vec<f64> = values.iter().map(|v| v.norm()).collect();
        if products_separated(&norms) {
            break;
        }
        values = draw_values(rng);
    }
    let max_l2 = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let values: Vec<DVector<f64>> = values.into_iter().map(|v| v / max_l2).collect();

    let norms: Vec<f64> = values.iter().map(|v| v.norm()).collect();
    if !products_separated(&norms) {
        // equal-ℓ₁ inputs cannot separate (e.g. single spikes): spread the tap norms
        let order: Vec<usize> = (0..r)
            .sorted_by(|&a, &b| norms[b].total_cmp(&norms[a]))
            .collect();
        let mut scale = 1.0;
        let mut prev = f64::INFINITY;
        for &i in &order {
            let mut p = norms[i] * scale;
            if p > (1.0 - 2.0 * PRODUCT_GAP) * prev {
                scale = (1.0 - 2.0 * PRODUCT_GAP) * prev / norms[i];
                p = norms[i] * scale;
            }
            hs[i] *= scale;
            prev = p;
        }
    }

    let xs = values
        .iter()
        .zip(&supports)
        .map(|(v, support)| {
            let mut x = DVector::zeros(n);
            for (k, &idx) in support.iter().enumerate() {
                x[idx] = v[k];
            }
            x
        })
        .collect();
    Ok(GroundTruth { xs, hs, supports })
}

/// A single-source known-entry coupling: for consecutive known entries
/// `(ℓ_a, x_a)`, `(ℓ_b, x_b)` of input `source`, rows satisfy
/// `x_b Z[ℓ_a, :] = x_a Z[ℓ_b, :]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownEntries {
    pub source: usize,
    pub entries: Vec<(usize, f64)>,
}

/// An observed mixture together with everything the solvers need.
#[derive(Debug, Clone)]
pub struct DemixProblem {
    pub bases: Vec<Arc<SpectralBasis>>,
    /// Signal GFT per source; row-resampled when `as2_mode` is set.
    pub signal_gfts: Vec<CMatrix>,
    /// Full (unmasked) `N × N·L_i` transfer matrices.
    pub transfers: Vec<CMatrix>,
    pub y: CVector,
    pub mask: Option<Vec<usize>>,
    pub noise_sigma: f64,
    pub as2_mode: bool,
    pub seed: u64,
    pub known: Vec<KnownEntries>,
}

fn resample_rows(u: &CMatrix, rng: &mut ChaCha8Rng) -> CMatrix {
    let n = u.nrows();
    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    CMatrix::from_fn(n, u.ncols(), |i, j| u[(picks[i], j)])
}

fn resampled_gfts(bases: &[Arc<SpectralBasis>], as2_mode: bool, seed: u64) -> Vec<CMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bases
        .iter()
        .map(|b| {
            if as2_mode {
                resample_rows(&b.u, &mut rng)
            } else {
                b.u.clone()
            }
        })
        .collect()
}

fn validate_mask(mask: Option<&[usize]>, n: usize) -> Result<()> {
    if let Some(mask) = mask {
        let mut seen = vec![false; n];
        for &i in mask {
            if i >= n {
                return Err(DemixError::param(format!(
                    "mask index {i} outside [0, {n})"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(DemixError::param(format!("mask index {i} repeated")));
            }
        }
    }
    Ok(())
}

impl DemixProblem {
    /// Wraps an externally observed `y` (length `N`, or `M` when masked).
    pub fn from_observation(
        bases: Vec<Arc<SpectralBasis>>,
        y: CVector,
        mask: Option<Vec<usize>>,
        noise_sigma: f64,
    ) -> Result<Self> {
        Self::assemble(bases, y, mask, noise_sigma, false, 0)
    }

    fn assemble(
        bases: Vec<Arc<SpectralBasis>>,
        y: CVector,
        mask: Option<Vec<usize>>,
        noise_sigma: f64,
        as2_mode: bool,
        seed: u64,
    ) -> Result<Self> {
        let n = bases
            .first()
            .ok_or_else(|| DemixError::param("at least one source is required"))?
            .n;
        if bases.iter().any(|b| b.n != n) {
            return Err(DemixError::param("bases disagree on node count"));
        }
        validate_mask(mask.as_deref(), n)?;
        let expected = mask.as_ref().map_or(n, Vec::len);
        if y.len() != expected {
            return Err(DemixError::param(format!(
                "observation has length {}, expected {expected}",
                y.len()
            )));
        }
        if noise_sigma < 0.0 {
            return Err(DemixError::param("noise level must be nonnegative"));
        }
        let signal_gfts = resampled_gfts(&bases, as2_mode, seed);
        let transfers = bases
            .iter()
            .zip(&signal_gfts)
            .map(|(b, us)| transfer_matrix_from(&b.u, us, &b.psi))
            .collect();
        Ok(DemixProblem {
            bases,
            signal_gfts,
            transfers,
            y,
            mask,
            noise_sigma,
            as2_mode,
            seed,
            known: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.bases[0].n
    }

    pub fn r(&self) -> usize {
        self.bases.len()
    }

    /// Transfer matrix of source `i` restricted to the observed rows.
    pub fn observed_transfer(&self, i: usize) -> CMatrix {
        match &self.mask {
            None => self.transfers[i].clone(),
            Some(rows) => self.transfers[i].select_rows(rows.iter()),
        }
    }

    /// Observed `Σ_i M_i vec(Z_i)` for lifted matrices in the orthonormal convention.
    pub fn forward(&self, zs: &[CMatrix]) -> CVector {
        let mut y = CVector::zeros(self.y.len());
        for (i, z) in zs.iter().enumerate() {
            let v = CVector::from_column_slice(z.as_slice());
            y += self.observed_transfer(i) * v;
        }
        y
    }

    /// True when every source shares one shift operator and filter order.
    pub fn is_single_graph(&self) -> bool {
        let first = &self.bases[0];
        self.bases
            .iter()
            .all(|b| Arc::ptr_eq(b, first) || (b.l == first.l && b.shift == first.shift))
            && self.signal_gfts.iter().all(|u| *u == self.signal_gfts[0])
    }
}

/// Builds the observation `y = Σ_i H_i x_i` (optionally via resampled GFT rows),
/// selects the masked rows, then adds white Gaussian noise.
pub fn synthesize_mixture(
    bases: &[Arc<SpectralBasis>],
    gt: &GroundTruth,
    noise_sigma: f64,
    mask: Option<&[usize]>,
    as2_mode: bool,
    seed: u64,
) -> Result<DemixProblem> {
    let r = bases.len();
    if gt.r() != r {
        return Err(DemixError::param(format!(
            "{} planted sources for {r} bases",
            gt.r()
        )));
    }
    let n = bases[0].n;
    for (i, b) in bases.iter().enumerate() {
        if gt.xs[i].len() != b.n || gt.hs[i].len() != b.l || b.n != n {
            return Err(DemixError::param(format!("source {i} dimensions disagree")));
        }
    }
    validate_mask(mask, n)?;
    let gfts = resampled_gfts(bases, as2_mode, seed);

    let mut full = CVector::zeros(n);
    for (i, b) in bases.iter().enumerate() {
        let x = to_complex(&gt.xs[i]);
        let h = to_complex(&gt.hs[i]);
        let yi = if as2_mode {
            let spectrum = (&b.psi_raw * &h).component_mul(&(&gfts[i] * &x));
            b.u.ad_mul(&spectrum) / c(n as f64)
        } else {
            apply_filter_vertex(&b.shift, &h, &x)?
        };
        full += yi;
    }
    let mut y = match mask {
        Some(rows) => CVector::from_iterator(rows.len(), rows.iter().map(|&k| full[k])),
        None => full,
    };
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        for z in y.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *z += c(noise_sigma * e);
        }
    }
    DemixProblem::assemble(
        bases.to_vec(),
        y,
        mask.map(<[usize]>::to_vec),
        noise_sigma,
        as2_mode,
        seed,
    )
}

/// `(1/R) Σ_i ‖x̂_i ĥ_iᵀ − x_i h_iᵀ‖_F` on raw taps.
pub fn demixing_error(est: &[(CVector, CVector)], gt: &GroundTruth) -> Result<f64> {
    if est.len() != gt.r() {
        return Err(DemixError::param(format!(
            "{} estimates for {} sources",
            est.len(),
            gt.r()
        )));
    }
    let mut total = 0.0;
    for (i, (x, h)) in est.iter().enumerate() {
        if x.len() != gt.xs[i].len() || h.len() != gt.hs[i].len() {
            return Err(DemixError::param(format!(
                "estimate {i} has wrong dimensions"
            )));
        }
        total += (outer(x, h) - gt.lifted_raw(i)).norm();
    }
    Ok(total / gt.r() as f64)
}

/// Demixing error under the best assignment of estimates to planted sources.
/// Exhaustive, so intended for small `R`.
pub fn demixing_error_matched(est: &[(CVector, CVector)], gt: &GroundTruth) -> Result<f64> {
    let r = gt.r();
    if est.len() != r {
        return Err(DemixError::param(format!(
            "{} estimates for {r} sources",
            est.len()
        )));
    }
    if r > 8 {
        return Err(DemixError::param(
            "exhaustive matching limited to 8 sources",
        ));
    }
    let mut cost = vec![vec![0.0; r]; r];
    for (a, (x, h)) in est.iter().enumerate() {
        for (b, row) in cost.iter_mut().enumerate() {
            if x.len() != gt.xs[b].len() || h.len() != gt.hs[b].len() {
                row[a] = f64::INFINITY;
            } else {
                row[a] = (outer(x, h) - gt.lifted_raw(b)).norm();
            }
        }
    }
    let best = (0..r)
        .permutations(r)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(b, &a)| cost[b][a])
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    Ok(best / r as f64)
}

/// Strict `de < threshold`.
pub fn success(de: f64, threshold: f64) -> bool {
    de < threshold
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SourceDoc {
    shift: Vec<Vec<[f64; 2]>>,
    l: usize,
}

/// JSON form of a problem: shifts, observation and sampling metadata.
/// Complex numbers are `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemDocument {
    sources: Vec<SourceDoc>,
    y: Vec<[f64; 2]>,
    mask: Option<Vec<usize>>,
    noise_sigma: f64,
    as2_mode: bool,
    seed: u64,
    #[serde(default)]
    known: Vec<KnownEntries>,
}

fn pair(z: &C64) -> [f64; 2] {
    [z.re, z.im]
}

impl From<&DemixProblem> for ProblemDocument {
    fn from(p: &DemixProblem) -> Self {
        ProblemDocument {
            sources: p
                .bases
                .iter()
                .map(|b| SourceDoc {
                    shift: b
                        .shift
                        .row_iter()
                        .map(|row| row.iter().map(pair).collect())
                        .collect(),
                    l: b.l,
                })
                .collect(),
            y: p.y.iter().map(pair).collect(),
            mask: p.mask.clone(),
            noise_sigma: p.noise_sigma,
            as2_mode: p.as2_mode,
            seed: p.seed,
            known: p.known.clone(),
        }
    }
}

impl ProblemDocument {
    /// Rebuilds the problem, re-decomposing each shift. Identical shifts share
    /// one basis.
    pub fn into_problem(self) -> Result<DemixProblem> {
        let mut bases: Vec<Arc<SpectralBasis>> = Vec::new();
        for src in &self.sources {
            let n = src.shift.len();
            if src.shift.iter().any(|r| r.len() != n) {
                return Err(DemixError::param("shift matrix is not square"));
            }
            let m = CMatrix::from_fn(n, n, |i, j| {
                C64::new(src.shift[i][j][0], src.shift[i][j][1])
            });
            if let Some(b) = bases.iter().find(|b| b.shift == m && b.l == src.l) {
                bases.push(Arc::clone(b));
                continue;
            }
            let gso = Gso::from_matrix(m, GsoKind::Custom)?;
            bases.push(Arc::new(decompose(&gso, src.l)?));
        }
        let y = CVector::from_iterator(self.y.len(), self.y.iter().map(|p| C64::new(p[0], p[1])));
        let mut problem = DemixProblem::assemble(
            bases,
            y,
            self.mask,
            self.noise_sigma,
            self.as2_mode,
            self.seed,
        )?;
        problem.known = self.known;
        Ok(problem)
    }
}

/// JSON form of a ground truth.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroundTruthDocument {
    pub xs: Vec<Vec<f64>>,
    pub hs: Vec<Vec<f64>>,
    pub supports: Vec<Vec<usize>>,
}

impl From<&GroundTruth> for GroundTruthDocument {
    fn from(gt: &GroundTruth) -> Self {
        GroundTruthDocument {
            xs: gt.xs.iter().map(|x| x.as_slice().to_vec()).collect(),
            hs: gt.hs.iter().map(|h| h.as_slice().to_vec()).collect(),
            supports: gt.supports.clone(),
        }
    }
}

impl From<GroundTruthDocument> for GroundTruth {
    fn from(doc: GroundTruthDocument) -> Self {
        GroundTruth {
            xs: doc.xs.into_iter().map(DVector::from_vec).collect(),
            hs: doc.hs.into_iter().map(DVector::from_vec).collect(),
            supports: doc.supports,
        }
    }
}
