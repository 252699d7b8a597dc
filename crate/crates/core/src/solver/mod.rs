//! Solvers for the lifted demixing programs.
//!
//! Solutions are reported as lifted matrices `Z_i` (`N × L_i`) whose taps are
//! expressed against the orthonormalised Vandermonde basis; extracted factors
//! are converted back to raw taps. The regularised programs themselves are
//! posed in the tap coordinates chosen by [`TapCoordinates`].

mod admm;
pub mod prox;

use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::linalg::{
    c, l21_norm, max_abs_imag, nuclear_norm, singular_values, svd, CMatrix, CVector,
};
use crate::model::{DemixProblem, KnownEntries};
use crate::spectral::SpectralBasis;

use admm::{AffineSet, Outcome, Penalties};

fn default_eta() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    1.0
}
fn default_rho() -> f64 {
    1.0
}
fn default_max_iter() -> usize {
    2000
}
fn default_tol_abs() -> f64 {
    1e-8
}
fn default_tol_rel() -> f64 {
    1e-6
}
fn default_logdet_delta() -> f64 {
    1e-2
}
fn default_logdet_outer() -> usize {
    10
}
fn default_true() -> bool {
    true
}
fn default_restarts() -> Vec<LogdetRestart> {
    [0.1, 0.3, 1.0, 3.0]
        .into_iter()
        .flat_map(|f| [(f, true), (f, false)])
        .map(|(beta_factor, singular_value_weights)| LogdetRestart {
            beta_factor,
            singular_value_weights,
        })
        .collect()
}

/// One reweighting schedule tried by the log-det solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogdetRestart {
    /// Multiplier of the row weights `β_i`.
    pub beta_factor: f64,
    /// Reweight singular values (otherwise only rows are reweighted).
    pub singular_value_weights: bool,
}

/// Relative size of the second singular value below which a block counts as rank one.
pub const RANK1_TOL: f64 = 1e-4;

/// Tap coordinates in which the regularisers are evaluated.
///
/// Both choices describe the same feasible set; they differ in how the nuclear
/// and row norms weigh the taps. Raw taps keep each row of `Z_i` equal to a
/// node's contribution across diffusion steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapCoordinates {
    Orthonormal,
    #[default]
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Nuclear weight used for every source unless `etas` is given.
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub etas: Option<Vec<f64>>,
    /// Row-sparsity weight used for every source unless `betas` is given.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    #[serde(default = "default_rho")]
    pub admm_rho: f64,
    #[serde(default = "default_true")]
    pub adaptive_rho: bool,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol_abs")]
    pub tol_abs: f64,
    #[serde(default = "default_tol_rel")]
    pub tol_rel: f64,
    /// Log-det offset, relative to the leading singular value of the first iterate.
    #[serde(default = "default_logdet_delta")]
    pub logdet_delta: f64,
    #[serde(default = "default_logdet_outer")]
    pub logdet_outer_iters: usize,
    /// Replaces the hard data constraint by a quadratic penalty with this scale.
    #[serde(default)]
    pub noise_epsilon: Option<f64>,
    #[serde(default)]
    pub record_trace: bool,
    #[serde(default)]
    pub tap_coordinates: TapCoordinates,
    /// Log-det also reweights rows by `1/(‖row‖ + δ_row)`.
    #[serde(default = "default_true")]
    pub reweight_rows: bool,
    /// Follow the summed single-graph solve by row-reweighted passes.
    #[serde(default = "default_true")]
    pub sum_reweighting: bool,
    /// Schedules tried in turn by the log-det solver until one is certified.
    #[serde(default = "default_restarts")]
    pub logdet_restarts: Vec<LogdetRestart>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eta: default_eta(),
            etas: None,
            beta: default_beta(),
            betas: None,
            admm_rho: default_rho(),
            adaptive_rho: true,
            max_iter: default_max_iter(),
            tol_abs: default_tol_abs(),
            tol_rel: default_tol_rel(),
            logdet_delta: default_logdet_delta(),
            logdet_outer_iters: default_logdet_outer(),
            noise_epsilon: None,
            record_trace: false,
            tap_coordinates: TapCoordinates::default(),
            reweight_rows: true,
            sum_reweighting: true,
            logdet_restarts: default_restarts(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, r: usize) -> Result<()> {
        let positive = [
            ("admm_rho", self.admm_rho),
            ("tol_abs", self.tol_abs),
            ("tol_rel", self.tol_rel),
            ("logdet_delta", self.logdet_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DemixError::param(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.max_iter == 0 || self.logdet_outer_iters == 0 {
            return Err(DemixError::param("iteration counts must be positive"));
        }
        if self.logdet_restarts.is_empty()
            || self
                .logdet_restarts
                .iter()
                .any(|r| !(r.beta_factor > 0.0 && r.beta_factor.is_finite()))
        {
            return Err(DemixError::param(
                "logdet_restarts needs positive finite beta factors",
            ));
        }
        if let Some(e) = self.noise_epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(DemixError::param("noise_epsilon must be nonnegative"));
            }
        }
        let check = |name: &str, scalar: f64, list: &Option<Vec<f64>>| -> Result<()> {
            if !(scalar >= 0.0 && scalar.is_finite()) {
                return Err(DemixError::param(format!("{name} must be nonnegative")));
            }
            if let Some(v) = list {
                if v.len() != r {
                    return Err(DemixError::param(format!(
                        "{name}s has {} entries for {r} sources",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                    return Err(DemixError::param(format!("{name}s must be nonnegative")));
                }
            }
            Ok(())
        };
        check("eta", self.eta, &self.etas)?;
        check("beta", self.beta, &self.betas)
    }

    pub fn etas_for(&self, r: usize) -> Vec<f64> {
        self.etas.clone().unwrap_or_else(|| vec![self.eta; r])
    }

    pub fn betas_for(&self, r: usize) -> Vec<f64> {
        self.betas.clone().unwrap_or_else(|| vec![self.beta; r])
    }
}

/// Convergence and feasibility record of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    /// Regularised objective in the working tap coordinates.
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖y − Σ M_i vec Z_i‖₂`.
    pub feasibility: f64,
    pub warnings: Vec<String>,
    /// Log-det surrogate after each outer pass.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub surrogate_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LiftedSolution {
    /// Recovered lifted matrices (orthonormal-tap convention).
    pub zs: Vec<CMatrix>,
    pub xs_hat: Vec<CVector>,
    /// Raw taps.
    pub hs_hat: Vec<CVector>,
    pub diagnostics: SolverDiagnostics,
}

impl LiftedSolution {
    pub fn objective(&self) -> f64 {
        self.diagnostics.objective
    }

    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    pub fn iterations(&self) -> usize {
        self.diagnostics.iterations
    }

    pub fn estimates(&self) -> Vec<(CVector, CVector)> {
        self.xs_hat
            .iter()
            .cloned()
            .zip(self.hs_hat.iter().cloned())
            .collect()
    }

    pub fn diagnostics_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.diagnostics)?)
    }
}

/// `Σ η_i‖Z_i‖_* + β_i‖Z_i‖_{2,1}`.
pub fn objective(zs: &[CMatrix], etas: &[f64], betas: &[f64]) -> f64 {
    zs.iter()
        .zip(etas)
        .zip(betas)
        .map(|((z, e), b)| e * nuclear_norm(z) + b * l21_norm(z))
        .sum()
}

/// Leading rank-one factor of `z`: `x̂ = √σ u`, `ĥ′ = √σ v̄`, with raw taps
/// `T⁻¹ ĥ′`. The phase is fixed so the largest entry of `x̂` is real
/// positive; for real shifts, negligible imaginary parts are dropped.
pub fn extract_rank1(z: &CMatrix, basis: &SpectralBasis) -> Result<(CVector, CVector)> {
    if z.nrows() != basis.n || z.ncols() != basis.l {
        return Err(DemixError::param(format!(
            "lifted matrix is {}x{}, expected {}x{}",
            z.nrows(),
            z.ncols(),
            basis.n,
            basis.l
        )));
    }
    let (x, h_orth) = leading_pair(z)?;
    let mut h = basis.to_raw_taps(&h_orth);
    let mut x = x;
    if basis.real {
        strip_imag(&mut x);
        strip_imag(&mut h);
    }
    Ok((x, h))
}

fn leading_pair(z: &CMatrix) -> Result<(CVector, CVector)> {
    if z.iter().all(|v| v.norm() == 0.0) {
        return Err(DemixError::Degenerate("lifted matrix is zero".into()));
    }
    let svd = svd(z);
    let (k, &sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("nonempty");
    let root = sigma.sqrt();
    let mut x: CVector = svd.u.column(k) * c(root);
    let mut h: CVector = svd.v_t.row(k).transpose() * c(root);
    let max = x.iter().fold(0.0, |a: f64, v| a.max(v.norm()));
    let pivot = *x
        .iter()
        .find(|v| v.norm() >= max * (1.0 - 1e-9))
        .expect("nonzero");
    let phase = pivot.conj() / pivot.norm();
    x *= phase;
    h *= phase.conj();
    // x̂ ĥᵀ = σ u vᴴ requires ĥ = √σ v̄; v_t rows already hold v̄ᵀ
    Ok((x, h))
}

fn strip_imag(v: &mut CVector) {
    let scale = v.norm().max(f64::MIN_POSITIVE);
    if max_abs_imag(v.iter()) <= 1e-8 * scale {
        v.iter_mut().for_each(|z| z.im = 0.0);
    }
}

/// Appends the known-entry couplings of input `source` to a copy of `p`.
pub fn add_known_entry_constraints(
    p: &DemixProblem,
    source: usize,
    known: &[(usize, f64)],
) -> Result<DemixProblem> {
    if source >= p.r() {
        return Err(DemixError::param(format!("source {source} out of range")));
    }
    if known.len() < 2 {
        return Err(DemixError::param("at least two known entries are required"));
    }
    let n = p.n();
    for (k, &(idx, v)) in known.iter().enumerate() {
        if idx >= n {
            return Err(DemixError::param(format!(
                "known index {idx} outside [0, {n})"
            )));
        }
        if !v.is_finite() {
            return Err(DemixError::param("known values must be finite"));
        }
        if known[..k].iter().any(|&(j, _)| j == idx) {
            return Err(DemixError::param(format!("known index {idx} repeated")));
        }
    }
    let mut out = p.clone();
    out.known.push(KnownEntries {
        source,
        entries: known.to_vec(),
    });
    Ok(out)
}

/// Working-coordinate block to the reported orthonormal-tap convention.
fn to_reported(z: CMatrix, basis: &SpectralBasis, coords: TapCoordinates) -> CMatrix {
    match coords {
        TapCoordinates::Orthonormal => z,
        TapCoordinates::Raw => basis.lift_to_orthonormal(&z),
    }
}

fn finish(
    p: &DemixProblem,
    cfg: &SolverConfig,
    set: &AffineSet,
    outcome: Outcome,
    etas: &[f64],
    betas: &[f64],
    surrogate_trace: Vec<f64>,
) -> Result<LiftedSolution> {
    let working = set.blocks(&outcome.state.z);
    let objective = objective(&working, etas, betas);
    let zs: Vec<CMatrix> = working
        .into_iter()
        .zip(&p.bases)
        .map(|(z, b)| to_reported(z, b, cfg.tap_coordinates))
        .collect();
    let mut xs_hat = Vec::with_capacity(zs.len());
    let mut hs_hat = Vec::with_capacity(zs.len());
    for (z, b) in zs.iter().zip(&p.bases) {
        let (x, h) = if z.iter().all(|v| v.norm() == 0.0) {
            (CVector::zeros(b.n), CVector::zeros(b.l))
        } else {
            extract_rank1(z, b)?
        };
        xs_hat.push(x);
        hs_hat.push(h);
    }
    let diagnostics = SolverDiagnostics {
        objective,
        primal_residual: outcome.primal_residual,
        dual_residual: outcome.dual_residual,
        iterations: outcome.iterations,
        converged: outcome.converged,
        feasibility: set.data_residual(&outcome.state.z),
        warnings: outcome.warnings,
        surrogate_trace,
        objective_trace: outcome.trace,
    };
    Ok(LiftedSolution {
        zs,
        xs_hat,
        hs_hat,
        diagnostics,
    })
}

/// Nuclear plus row-sparsity regularised recovery under the data constraint
/// (or the quadratic data penalty when `noise_epsilon` is set).
pub fn solve_convex(p: &DemixProblem, cfg: &SolverConfig) -> Result<LiftedSolution> {
    cfg.validate(p.r())?;
    let set = AffineSet::from_problem(p, cfg.tap_coordinates);
    let etas = cfg.etas_for(p.r());
    let betas = cfg.betas_for(p.r());
    let rows = vec![None; p.r()];
    let pen = Penalties {
        etas: &etas,
        betas: &betas,
        sv_weights: &rows,
        row_weights: &rows,
    };
    let outcome = admm::run(&set, &pen, cfg, None, cfg.record_trace);
    finish(p, cfg, &set, outcome, &etas, &betas, Vec::new())
}

/// Nuclear-norm-only recovery; `solve_convex` with every `β_i = 0`.
pub fn solve_nuclear_only(p: &DemixProblem, cfg: &SolverConfig) -> Result<LiftedSolution> {
    let cfg = SolverConfig {
        betas: Some(vec![0.0; p.r()]),
        ..cfg.clone()
    };
    solve_convex(p, &cfg)
}

/// Outer passes stop once an inner solve converges and moves `Z` by less
/// than this fraction of its norm.
const STALL_TOL: f64 = 1e-9;

/// Concave surrogate minimised by the reweighting: log penalties on the
/// singular values and row norms that are reweighted, plain norms otherwise.
fn surrogate(
    zs: &[CMatrix],
    etas: &[f64],
    betas: &[f64],
    deltas: Option<&[f64]>,
    row_deltas: Option<&[f64]>,
) -> f64 {
    zs.iter()
        .enumerate()
        .map(|(i, z)| {
            let sv = singular_values(z);
            let spectral = match deltas {
                Some(d) => sv.iter().map(|s| (s + d[i]).ln()).sum::<f64>(),
                None => sv.sum(),
            };
            let rows = match row_deltas {
                Some(d) => z.row_iter().map(|r| (r.norm() + d[i]).ln()).sum::<f64>(),
                None => l21_norm(z),
            };
            etas[i] * spectral + betas[i] * rows
        })
        .sum()
}

/// Iteratively reweighted nuclear norm (log-det heuristic). Pass one is
/// `solve_convex`; later passes weight singular values by `1/(σ_j + δ_i)`
/// (and, with `reweight_rows`, rows by `1/(‖row‖ + δ_row)`) from the previous
/// pass and warm-start from its state. The returned iterate is the last one
/// that did not raise the surrogate, so the reported trace is nonincreasing.
///
/// Each schedule in `logdet_restarts` is tried in turn until one is
/// certified: every block rank one to within [`RANK1_TOL`] and row supports
/// small enough for the rank-one factors to be determined by the data. If
/// none is certified, the best-scoring result is returned with a warning.
///
/// When two sources see the same observed operator, only their sum is
/// determined by the data; no schedule can certify the split, so only the
/// first one runs.
pub fn solve_logdet(p: &DemixProblem, cfg: &SolverConfig) -> Result<LiftedSolution> {
    cfg.validate(p.r())?;
    let r = p.r();
    let set = AffineSet::from_problem(p, cfg.tap_coordinates);
    let etas = cfg.etas_for(r);
    let base_betas = cfg.betas_for(r);
    let shared = shared_operator(p);
    let schedules = if shared.is_some() {
        &cfg.logdet_restarts[..1]
    } else {
        &cfg.logdet_restarts[..]
    };

    // (not identifiable, rank-one defect): smaller is better
    type Score = (bool, f64);
    let mut best: Option<(Score, Outcome, Vec<f64>, Vec<f64>)> = None;
    let mut spent = 0;
    for restart in schedules {
        let betas: Vec<f64> = base_betas.iter().map(|b| b * restart.beta_factor).collect();
        let (outcome, surrogate_trace) =
            reweighted(&set, cfg, &etas, &betas, restart.singular_value_weights);
        spent += outcome.iterations;
        let zs = set.blocks(&outcome.state.z);
        let score = (!identifiable(&zs, p.y.len()), rank1_defect(&zs));
        let certified = !score.0 && score.1 <= RANK1_TOL;
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, outcome, betas, surrogate_trace));
        }
        if certified {
            break;
        }
    }
    let (score, mut outcome, betas, surrogate_trace) = best.expect("restarts are nonempty");
    outcome.iterations = spent;
    if score.0 || score.1 > RANK1_TOL {
        outcome.warnings.push(format!(
            "no log-det restart produced an identifiable rank-one solution (worst sigma2/sigma1 {:.3e})",
            score.1
        ));
    }
    if let Some((k, j)) = shared {
        outcome.warnings.push(format!(
            "sources {k} and {j} share one observed operator; their split is not identifiable"
        ));
    }
    finish(p, cfg, &set, outcome, &etas, &betas, surrogate_trace)
}

/// First pair of sources whose observed transfer matrices coincide.
fn shared_operator(p: &DemixProblem) -> Option<(usize, usize)> {
    let ops: Vec<CMatrix> = (0..p.r()).map(|i| p.observed_transfer(i)).collect();
    (0..ops.len())
        .flat_map(|k| (k + 1..ops.len()).map(move |j| (k, j)))
        .find(|&(k, j)| ops[k] == ops[j])
}

/// Row-norm level, relative to the largest row of a block, treated as zero.
const SUPPORT_TOL: f64 = 1e-5;

/// Whether the row supports leave fewer rank-one unknowns (`|support| + L − 1`
/// per nonzero block) than there are observations.
fn identifiable(zs: &[CMatrix], observations: usize) -> bool {
    let unknowns: usize = zs
        .iter()
        .map(|z| match support_size(z) {
            0 => 0,
            s => s + z.ncols() - 1,
        })
        .sum();
    unknowns < observations
}

/// Rows above [`SUPPORT_TOL`] relative to the largest row.
fn support_size(z: &CMatrix) -> usize {
    let norms: Vec<f64> = z.row_iter().map(|r| r.norm()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    norms.iter().filter(|&&v| v > SUPPORT_TOL * top).count()
}

/// Largest `σ₂/σ₁` over the nonzero blocks.
fn rank1_defect(zs: &[CMatrix]) -> f64 {
    zs.iter()
        .map(|z| match singular_values(z).as_slice() {
            [s1, s2, ..] if *s1 > 0.0 => s2 / s1,
            _ => 0.0,
        })
        .fold(0.0, f64::max)
}

/// One reweighting schedule at fixed `etas`, `betas`.
fn reweighted(
    set: &AffineSet,
    cfg: &SolverConfig,
    etas: &[f64],
    betas: &[f64],
    spectral: bool,
) -> (Outcome, Vec<f64>) {
    let r = etas.len();
    let mut sv_weights: Vec<Option<Vec<f64>>> = vec![None; r];
    let mut row_weights: Vec<Option<Vec<f64>>> = vec![None; r];

    let mut outcome = {
        let pen = Penalties {
            etas,
            betas,
            sv_weights: &sv_weights,
            row_weights: &row_weights,
        };
        admm::run(set, &pen, cfg, None, cfg.record_trace)
    };
    let mut total_iters = outcome.iterations;
    let mut warnings = outcome.warnings.clone();
    let mut trace = outcome.trace.clone();

    let first = set.blocks(&outcome.state.z);
    let deltas: Vec<f64> = first
        .iter()
        .map(|z| {
            let s1 = singular_values(z).max();
            (cfg.logdet_delta * s1).max(f64::MIN_POSITIVE)
        })
        .collect();
    let row_deltas: Vec<f64> = first
        .iter()
        .map(|z| {
            let top = z.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
            (cfg.logdet_delta * top).max(f64::MIN_POSITIVE)
        })
        .collect();
    let row_log = cfg.reweight_rows.then_some(row_deltas.as_slice());
    let log_deltas = spectral.then_some(deltas.as_slice());
    let mut surrogate_trace = vec![surrogate(&first, etas, betas, log_deltas, row_log)];

    let mut current = outcome.state.clone();
    for _ in 1..cfg.logdet_outer_iters {
        let zs = set.blocks(&current.z);
        if spectral {
            sv_weights = zs
                .iter()
                .zip(&deltas)
                .map(|(z, d)| Some(singular_values(z).iter().map(|s| 1.0 / (s + d)).collect()))
                .collect();
        }
        if cfg.reweight_rows {
            row_weights = zs
                .iter()
                .zip(&row_deltas)
                .map(|(z, d)| Some(z.row_iter().map(|r| 1.0 / (r.norm() + d)).collect()))
                .collect();
        }
        let pen = Penalties {
            etas,
            betas,
            sv_weights: &sv_weights,
            row_weights: &row_weights,
        };
        let next = admm::run(set, &pen, cfg, Some(current.clone()), cfg.record_trace);
        total_iters += next.iterations;
        for w in &next.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        trace.extend_from_slice(&next.trace);
        let step = (&next.state.z - &current.z).norm();
        let settled = next.converged && step <= STALL_TOL * current.z.norm();
        current = next.state.clone();
        let value = surrogate(&set.blocks(&next.state.z), etas, betas, log_deltas, row_log);
        // the retained iterate only changes when the surrogate does not rise
        if value <= *surrogate_trace.last().expect("nonempty") {
            outcome = next;
            surrogate_trace.push(value);
        } else {
            surrogate_trace.push(*surrogate_trace.last().expect("nonempty"));
        }
        if settled {
            break;
        }
    }
    outcome.iterations = total_iters;
    outcome.warnings = warnings;
    outcome.trace = trace;
    (outcome, surrogate_trace)
}

/// Solves for the single summed matrix `Z = Σ Z_i` when every source shares
/// one graph. Known-entry couplings act on individual sources and are ignored.
///
/// With `sum_reweighting`, the convex solve is followed by row-reweighted
/// passes (the sum has rank `R`, so singular values are left unweighted),
/// repeated for every distinct row factor in `logdet_restarts`; the result
/// with the smallest row support is kept.
pub fn solve_single_graph_sum(
    p: &DemixProblem,
    cfg: &SolverConfig,
) -> Result<(CMatrix, SolverDiagnostics)> {
    if !p.is_single_graph() {
        return Err(DemixError::Mode(
            "summed formulation needs every source on the same graph".into(),
        ));
    }
    cfg.validate(p.r())?;
    let set = AffineSet::summed(p, cfg.tap_coordinates);
    let etas = vec![cfg.etas_for(p.r())[0]];
    let base_beta = cfg.betas_for(p.r())[0];

    let (outcome, betas) = if cfg.sum_reweighting {
        let mut factors: Vec<f64> = Vec::new();
        for r in &cfg.logdet_restarts {
            if !factors.contains(&r.beta_factor) {
                factors.push(r.beta_factor);
            }
        }
        let mut best: Option<(usize, Outcome, Vec<f64>)> = None;
        let mut spent = 0;
        for factor in factors {
            let betas = vec![base_beta * factor];
            let (outcome, _) = reweighted(&set, cfg, &etas, &betas, false);
            spent += outcome.iterations;
            let rows = support_size(&set.block(&outcome.state.z, 0));
            if best.as_ref().is_none_or(|b| rows < b.0) {
                best = Some((rows, outcome, betas));
            }
        }
        let (rows, mut outcome, betas) = best.expect("restarts are nonempty");
        outcome.iterations = spent;
        if rows * set.shapes[0].1 >= p.y.len() {
            outcome
                .warnings
                .push("no restart produced a row support determined by the data".into());
        }
        (outcome, betas)
    } else {
        let betas = vec![base_beta];
        let rows = vec![None];
        let pen = Penalties {
            etas: &etas,
            betas: &betas,
            sv_weights: &rows,
            row_weights: &rows,
        };
        (admm::run(&set, &pen, cfg, None, cfg.record_trace), betas)
    };
    let working = set.block(&outcome.state.z, 0);
    let objective = objective(std::slice::from_ref(&working), &etas, &betas);
    let z = to_reported(working, &p.bases[0], cfg.tap_coordinates);
    let diagnostics = SolverDiagnostics {
        objective,
        primal_residual: outcome.primal_residual,
        dual_residual: outcome.dual_residual,
        iterations: outcome.iterations,
        converged: outcome.converged,
        feasibility: set.data_residual(&outcome.state.z),
        warnings: outcome.warnings,
        surrogate_trace: Vec::new(),
        objective_trace: outcome.trace,
    };
    Ok((z, diagnostics))
}
