//! Consensus ADMM for `min Σ η_i‖Z_i‖_* + β_i‖Z_i‖_{2,1}` (optionally with
//! singular-value and row weights) over an affine set.
//!
//! Each `Z_i` is split into a nuclear copy `A_i` and a row-sparse copy `B_i`,
//! each with its own penalty parameter balanced against its own residuals.
//! The `Z` step minimises the consensus quadratic on `{C z = d}` (or, for the
//! penalised variant, with a quadratic data term); both reduce to one
//! Hermitian system of the size of `d`.
//!
//! Problems whose operator and data are real (every real symmetric shift)
//! iterate in `f64`; the others in complex arithmetic.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{c, singular_values, CMatrix, CVector, Field, HermitianSolver, C64};
use crate::model::DemixProblem;

use super::prox::{row_shrink, singular_value_threshold};
use super::{SolverConfig, TapCoordinates};

/// Constraint operator and right-hand side over one scalar field.
#[derive(Debug, Clone)]
struct Lifted<T: Field> {
    op: DMatrix<T>,
    rhs: DVector<T>,
    /// `op · opᴴ`.
    gram: DMatrix<T>,
    /// Eigenpairs of `gram` when every row carries data, so each penalty
    /// update of the `Z` step only rescales eigenvalues.
    spectrum: Option<(DMatrix<T>, Vec<f64>)>,
}

impl<T: Field> Lifted<T> {
    fn new(op: DMatrix<T>, rhs: DVector<T>, all_data: bool) -> Self {
        let gram = &op * op.adjoint();
        let spectrum = all_data.then(|| {
            let eig = gram.clone().symmetric_eigen();
            (
                eig.eigenvectors,
                eig.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            )
        });
        Lifted {
            op,
            rhs,
            gram,
            spectrum,
        }
    }
}

/// Stacked linear constraints on the lifted unknowns.
#[derive(Debug, Clone)]
pub(crate) struct AffineSet {
    /// `(rows, cols)` of each block `Z_i`.
    pub shapes: Vec<(usize, usize)>,
    pub offsets: Vec<usize>,
    /// Leading constraint rows that carry data (the rest are hard side constraints).
    pub data_rows: usize,
    complex: Lifted<C64>,
    /// Present when operator and data are real.
    real: Option<Lifted<f64>>,
}

impl AffineSet {
    pub fn from_problem(p: &DemixProblem, coords: TapCoordinates) -> Self {
        let shapes: Vec<(usize, usize)> = p.bases.iter().map(|b| (b.n, b.l)).collect();
        let transfers: Vec<CMatrix> = (0..p.r())
            .map(|i| in_coordinates(p.observed_transfer(i), &p.bases[i].tap_transform, coords))
            .collect();
        Self::build(shapes, &transfers, p.y.clone(), p)
    }

    /// Single unknown `Z = Σ Z_i` constrained by the shared transfer matrix.
    pub fn summed(p: &DemixProblem, coords: TapCoordinates) -> Self {
        let b = &p.bases[0];
        let mut bare = p.clone();
        bare.known.clear();
        let m = in_coordinates(p.observed_transfer(0), &b.tap_transform, coords);
        Self::build(vec![(b.n, b.l)], &[m], p.y.clone(), &bare)
    }

    fn build(
        shapes: Vec<(usize, usize)>,
        transfers: &[CMatrix],
        y: CVector,
        p: &DemixProblem,
    ) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut dim = 0;
        for &(n, l) in &shapes {
            offsets.push(dim);
            dim += n * l;
        }
        let data_rows = y.len();

        let mut side: Vec<Vec<(usize, f64)>> = Vec::new();
        for k in &p.known {
            let (n, l) = shapes[k.source];
            let off = offsets[k.source];
            for pair in k.entries.windows(2) {
                let ((la, xa), (lb, xb)) = (pair[0], pair[1]);
                if xa == 0.0 && xb == 0.0 {
                    continue;
                }
                for t in 0..l {
                    side.push(vec![(off + t * n + la, xb), (off + t * n + lb, -xa)]);
                }
            }
        }

        let mut op = CMatrix::zeros(data_rows + side.len(), dim);
        for (i, m) in transfers.iter().enumerate() {
            op.view_mut((0, offsets[i]), (data_rows, m.ncols()))
                .copy_from(m);
        }
        for (r, coeffs) in side.iter().enumerate() {
            for &(col, v) in coeffs {
                op[(data_rows + r, col)] += c(v);
            }
        }
        let mut rhs = CVector::zeros(op.nrows());
        rhs.rows_mut(0, data_rows).copy_from(&y);
        let is_real = op.iter().chain(rhs.iter()).all(|z| z.im == 0.0);
        let real =
            is_real.then(|| Lifted::new(op.map(|z| z.re), rhs.map(|z| z.re), side.is_empty()));
        AffineSet {
            shapes,
            offsets,
            data_rows,
            complex: Lifted::new(op, rhs, side.is_empty()),
            real,
        }
    }

    pub fn dim(&self) -> usize {
        self.complex.op.ncols()
    }

    pub fn block<T: Field>(&self, v: &DVector<T>, i: usize) -> DMatrix<T> {
        let (n, l) = self.shapes[i];
        DMatrix::from_column_slice(
            n,
            l,
            &v.as_slice()[self.offsets[i]..self.offsets[i] + n * l],
        )
    }

    pub fn set_block<T: Field>(&self, v: &mut DVector<T>, i: usize, m: &DMatrix<T>) {
        let (n, l) = self.shapes[i];
        v.rows_mut(self.offsets[i], n * l)
            .copy_from_slice(m.as_slice());
    }

    pub fn blocks(&self, v: &CVector) -> Vec<CMatrix> {
        (0..self.shapes.len()).map(|i| self.block(v, i)).collect()
    }

    /// Data-fit residual `‖y − Σ M_i vec Z_i‖`.
    pub fn data_residual(&self, z: &CVector) -> f64 {
        let fit = self.complex.op.rows(0, self.data_rows) * z;
        (fit - self.complex.rhs.rows(0, self.data_rows)).norm()
    }
}

/// Re-expresses an orthonormal-tap transfer matrix in the working tap
/// coordinates. With raw taps, `vec Z′ = (T ⊗ I) vec Z_raw`, so tap block `t′`
/// of the result is `Σ_t T[t, t′] · block_t`.
fn in_coordinates(m: CMatrix, tap_transform: &CMatrix, coords: TapCoordinates) -> CMatrix {
    match coords {
        TapCoordinates::Orthonormal => m,
        TapCoordinates::Raw => {
            let rows = m.nrows();
            let l = tap_transform.nrows();
            let n = m.ncols() / l;
            let mut out = CMatrix::zeros(rows, m.ncols());
            for tp in 0..l {
                let mut blk = out.columns_mut(tp * n, n);
                for t in 0..l {
                    let coef = tap_transform[(t, tp)];
                    if coef.norm() != 0.0 {
                        blk += m.columns(t * n, n) * coef;
                    }
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct State<T: Field = C64> {
    pub z: DVector<T>,
    pub a: DVector<T>,
    pub b: DVector<T>,
    pub u: DVector<T>,
    pub w: DVector<T>,
    /// Penalty of the nuclear split.
    pub rho_a: f64,
    /// Penalty of the row split.
    pub rho_b: f64,
}

impl<T: Field> State<T> {
    pub fn zeros(dim: usize, rho: f64) -> Self {
        let zero = DVector::zeros(dim);
        State {
            z: zero.clone(),
            a: zero.clone(),
            b: zero.clone(),
            u: zero.clone(),
            w: zero,
            rho_a: rho,
            rho_b: rho,
        }
    }

    fn map<S: Field>(&self, f: impl Fn(T) -> S + Copy) -> State<S> {
        State {
            z: self.z.map(f),
            a: self.a.map(f),
            b: self.b.map(f),
            u: self.u.map(f),
            w: self.w.map(f),
            rho_a: self.rho_a,
            rho_b: self.rho_b,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome<T: Field = C64> {
    pub state: State<T>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub warnings: Vec<String>,
    pub trace: Vec<f64>,
}

/// Per-block penalty weights.
pub(crate) struct Penalties<'a> {
    pub etas: &'a [f64],
    pub betas: &'a [f64],
    /// Singular-value weights per block (nondecreasing), if reweighted.
    pub sv_weights: &'a [Option<Vec<f64>>],
    /// Row weights per block, if reweighted.
    pub row_weights: &'a [Option<Vec<f64>>],
}

impl Penalties<'_> {
    pub fn value<T: Field>(&self, set: &AffineSet, z: &DVector<T>) -> f64 {
        (0..set.shapes.len())
            .map(|i| {
                let m = set.block(z, i);
                let sv = singular_values(&m);
                let nuclear: f64 = match &self.sv_weights[i] {
                    Some(w) => sv.iter().zip(w).map(|(s, w)| s * w).sum(),
                    None => sv.iter().sum(),
                };
                let rows: f64 = match &self.row_weights[i] {
                    Some(w) => m.row_iter().zip(w).map(|(r, w)| r.norm() * w).sum(),
                    None => m.row_iter().map(|r| r.norm()).sum(),
                };
                self.etas[i] * nuclear + self.betas[i] * rows
            })
            .sum()
    }
}

/// Relative eigenvalue level below which the dual system is treated as singular.
const PINV_TOL: f64 = 1e-12;

/// `Z` step `z = (q + Cᴴλ)/(ρ_a + ρ_b)` with `(CCᴴ/(ρ_a + ρ_b) + D) λ = d − C q/(ρ_a + ρ_b)`,
/// where `D = μ` on the data rows in the penalised variant and zero otherwise.
/// Singular systems are solved in the least-squares sense.
enum ZStep<T: Field> {
    /// Inverse eigenvalues of the dual system in the cached eigenbasis.
    Spectral {
        scale: f64,
        inv: Vec<f64>,
        exact: bool,
    },
    Factored {
        scale: f64,
        solver: HermitianSolver<T>,
    },
}

impl<T: Field> ZStep<T> {
    fn new(lifted: &Lifted<T>, data_rows: usize, rho: f64, data_weight: f64) -> Self {
        if let Some((_, eigvals)) = &lifted.spectrum {
            let vals: Vec<f64> = eigvals.iter().map(|l| l / rho + data_weight).collect();
            let top = vals.iter().copied().fold(0.0, f64::max);
            let inv: Vec<f64> = vals
                .iter()
                .map(|&v| if v > PINV_TOL * top { 1.0 / v } else { 0.0 })
                .collect();
            let exact = inv.iter().all(|&v| v > 0.0);
            return ZStep::Spectral {
                scale: rho,
                inv,
                exact,
            };
        }
        let mut g = &lifted.gram / T::from_real(rho);
        for k in 0..data_rows {
            g[(k, k)] += T::from_real(data_weight);
        }
        ZStep::Factored {
            scale: rho,
            solver: HermitianSolver::new(g),
        }
    }

    fn is_exact(&self) -> bool {
        match self {
            ZStep::Spectral { exact, .. } => *exact,
            ZStep::Factored { solver, .. } => solver.is_exact(),
        }
    }

    fn apply(&self, lifted: &Lifted<T>, q: &DVector<T>) -> DVector<T> {
        let scale = match self {
            ZStep::Spectral { scale, .. } | ZStep::Factored { scale, .. } => *scale,
        };
        let base = q / T::from_real(scale);
        let residual = &lifted.rhs - &lifted.op * &base;
        let lambda = match self {
            ZStep::Spectral { inv, .. } => {
                let (vecs, _) = lifted
                    .spectrum
                    .as_ref()
                    .expect("spectral step needs the eigenbasis");
                let mut coef = vecs.ad_mul(&residual);
                for (v, w) in coef.iter_mut().zip(inv) {
                    *v *= T::from_real(*w);
                }
                vecs * coef
            }
            ZStep::Factored { solver, .. } => solver.solve(&residual),
        };
        base + lifted.op.ad_mul(&lambda) / T::from_real(scale)
    }
}

const BALANCE_RATIO: f64 = 10.0;
const BALANCE_FACTOR: f64 = 2.0;

/// Residual-balancing factor for one split.
fn balance(primal: f64, dual: f64) -> f64 {
    if primal > BALANCE_RATIO * dual {
        BALANCE_FACTOR
    } else if dual > BALANCE_RATIO * primal {
        1.0 / BALANCE_FACTOR
    } else {
        1.0
    }
}

/// Runs ADMM from `init` (or zeros), in real arithmetic when the set is real.
pub(crate) fn run(
    set: &AffineSet,
    pen: &Penalties<'_>,
    cfg: &SolverConfig,
    init: Option<State>,
    record_trace: bool,
) -> Outcome {
    match &set.real {
        Some(real) => {
            let init = init.map(|s| s.map(|z: C64| z.re));
            let out = iterate(set, real, pen, cfg, init, record_trace);
            Outcome {
                state: out.state.map(c),
                iterations: out.iterations,
                converged: out.converged,
                primal_residual: out.primal_residual,
                dual_residual: out.dual_residual,
                warnings: out.warnings,
                trace: out.trace,
            }
        }
        None => iterate(set, &set.complex, pen, cfg, init, record_trace),
    }
}

fn iterate<T: Field>(
    set: &AffineSet,
    lifted: &Lifted<T>,
    pen: &Penalties<'_>,
    cfg: &SolverConfig,
    init: Option<State<T>>,
    record_trace: bool,
) -> Outcome<T> {
    let dim = set.dim();
    let mut state = init.unwrap_or_else(|| State::zeros(dim, cfg.admm_rho));
    // penalty (1/2μ)‖Cz − d‖² enters the dual system as μ on the data rows
    let data_weight = cfg.noise_epsilon.filter(|&e| e > 0.0).unwrap_or(0.0);
    let penalised = data_weight > 0.0;
    let mut zstep = ZStep::new(
        lifted,
        set.data_rows,
        state.rho_a + state.rho_b,
        data_weight,
    );
    let mut warnings = Vec::new();
    if !zstep.is_exact() {
        warnings.push("constraint system is rank deficient; using a pseudoinverse".to_string());
    }
    let mut inconsistent_reported = false;
    let rhs_norm = lifted.rhs.norm();

    let sqrt_dim = (dim as f64).sqrt();
    let mut trace = Vec::new();
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iter {
        iterations = it;
        let (rho_a, rho_b) = (state.rho_a, state.rho_b);

        let q = (&state.a - &state.u) * T::from_real(rho_a)
            + (&state.b - &state.w) * T::from_real(rho_b);
        state.z = zstep.apply(lifted, &q);
        if !zstep.is_exact() && !penalised && !inconsistent_reported {
            let miss = (&lifted.op * &state.z - &lifted.rhs).norm();
            if miss > 1e-6 * rhs_norm.max(1e-300) {
                warnings.push(format!(
                    "observation is inconsistent with the constraints (residual {miss:.3e})"
                ));
                inconsistent_reported = true;
            }
        }

        // prox steps
        let a_old = state.a.clone();
        let b_old = state.b.clone();
        let za = &state.z + &state.u;
        let zb = &state.z + &state.w;
        for i in 0..set.shapes.len() {
            let blk = set.block(&za, i);
            let a =
                singular_value_threshold(&blk, pen.etas[i] / rho_a, pen.sv_weights[i].as_deref());
            set.set_block(&mut state.a, i, &a);
            let blk = set.block(&zb, i);
            let b = row_shrink(&blk, pen.betas[i] / rho_b, pen.row_weights[i].as_deref());
            set.set_block(&mut state.b, i, &b);
        }

        let ra = &state.z - &state.a;
        let rb = &state.z - &state.b;
        state.u += &ra;
        state.w += &rb;

        let sa = (&state.a - &a_old) * T::from_real(rho_a);
        let sb = (&state.b - &b_old) * T::from_real(rho_b);
        primal = (ra.norm_squared() + rb.norm_squared()).sqrt();
        dual = (&sa + &sb).norm();
        let scale_pri = (2.0 * state.z.norm_squared())
            .sqrt()
            .max((state.a.norm_squared() + state.b.norm_squared()).sqrt());
        let eps_pri = (2.0f64).sqrt() * sqrt_dim * cfg.tol_abs + cfg.tol_rel * scale_pri;
        let dual_scale = (&state.u * T::from_real(rho_a) + &state.w * T::from_real(rho_b)).norm();
        let eps_dual = sqrt_dim * cfg.tol_abs + cfg.tol_rel * dual_scale;
        if record_trace {
            trace.push(pen.value(set, &state.z));
        }
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }

        if cfg.adaptive_rho {
            let fa = balance(ra.norm(), sa.norm());
            let fb = balance(rb.norm(), sb.norm());
            if fa != 1.0 || fb != 1.0 {
                state.rho_a *= fa;
                state.u /= T::from_real(fa);
                state.rho_b *= fb;
                state.w /= T::from_real(fb);
                zstep = ZStep::new(
                    lifted,
                    set.data_rows,
                    state.rho_a + state.rho_b,
                    data_weight,
                );
            }
        }
    }

    Outcome {
        state,
        iterations,
        converged,
        primal_residual: primal,
        dual_residual: dual,
        warnings,
        trace,
    }
}
