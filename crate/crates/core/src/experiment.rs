//! Config-driven Monte-Carlo experiments.
//!
//! Every grid point runs `trials` independent planted instances. Trial seeds
//! depend only on the master seed, the grid index and the trial index, so a
//! run is reproducible and its results do not depend on the worker count.
//! With `paired_seeds` the grid index is fixed at 0, so every point sees the
//! same graphs and draws.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::graph::{
    barabasi_albert, barabasi_albert_pair, erdos_renyi, gso_from_graph, karate_club,
    load_edge_list, Graph, GsoKind,
};
use crate::model::{
    demixing_error, demixing_error_matched, plant_ground_truth, success, synthesize_mixture,
    Orthogonality,
};
use crate::separation::{demix_single_graph, SeparationSpec};
use crate::solver::{solve_convex, solve_logdet, SolverConfig};
use crate::spectral::{decompose, SpectralBasis};
use crate::theory::predictor_rho_bar;

pub const SCHEMA_VERSION: u32 = 1;

/// Human-readable statement of [`derive_seed`], echoed in result metadata.
pub const SEED_SCHEME: &str =
    "seed = splitmix64(splitmix64(splitmix64(master) ^ grid_index) ^ trial_index)";

/// Redraws allowed when a generated graph has repeated eigenvalues.
const MAX_GRAPH_DRAWS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// One random graph shared by every source; grid over `n`, `(r, s)`, `l`, `sigma`.
    SingleGraphSweep,
    /// Scale-free pairs with a prescribed edge overlap `alpha`.
    SimilaritySweep,
    /// `r` independent random graphs.
    MultiGraph,
    /// Single-graph demixing across noise levels.
    NoiseSweep,
    /// Fixed graph pairs scored by the topology predictor against success rate.
    PredictorStudy,
}

impl ExperimentKind {
    fn single_graph(self) -> bool {
        matches!(
            self,
            ExperimentKind::SingleGraphSweep | ExperimentKind::NoiseSweep
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    ErdosRenyi {
        p: f64,
    },
    BarabasiAlbert,
    Karate,
    /// Edge-list files; one per source, or a single one shared by all.
    Files {
        paths: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Convex,
    #[default]
    Logdet,
}

/// Parameter grid. Axes that a kind does not use must stay at their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// Node counts; empty for fixed graphs (karate, files).
    #[serde(default)]
    pub n: Vec<usize>,
    /// `(sources, sparsity)` pairs.
    pub rs: Vec<(usize, usize)>,
    #[serde(default = "default_l")]
    pub l: Vec<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: Vec<f64>,
    /// Edge overlaps for the similarity sweep.
    #[serde(default)]
    pub alpha: Vec<f64>,
    /// Number of fixed graph pairs in the predictor study.
    #[serde(default)]
    pub pairs: usize,
    /// Edge probabilities replacing the Erdős–Rényi `p`; adds a `p` grid key.
    #[serde(default)]
    pub p: Vec<f64>,
}

fn default_l() -> Vec<usize> {
    vec![3]
}

fn default_sigma() -> Vec<f64> {
    vec![0.0]
}

fn default_trials() -> usize {
    50
}

fn default_threshold() -> f64 {
    1e-3
}

fn default_gso() -> GsoKind {
    GsoKind::Adjacency
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub kind: ExperimentKind,
    pub graph: GraphSpec,
    #[serde(default = "default_gso")]
    pub gso: GsoKind,
    pub sweep: Sweep,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    /// Measure wall time per grid point (breaks byte-level reproducibility).
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub as2_mode: bool,
    /// Reuse trial seeds across grid points (grid index 0 in the seed
    /// scheme), so settings are compared on matched graphs and draws.
    #[serde(default)]
    pub paired_seeds: bool,
}

fn config_err(msg: impl Into<String>) -> DemixError {
    DemixError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| config_err(format!("invalid experiment config: {e}")))
    }

    /// Checks the grid and loads referenced files; no solver work happens here.
    pub fn validate(&self) -> Result<()> {
        self.prepare().map(|_| ())
    }

    fn prepare(&self) -> Result<Vec<Graph>> {
        if self.schema != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema {} unsupported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(config_err("threshold must be positive"));
        }
        let sw = &self.sweep;
        if sw.rs.is_empty() || sw.l.is_empty() || sw.sigma.is_empty() {
            return Err(config_err("rs, l and sigma grids must be non-empty"));
        }
        if sw.rs.iter().any(|&(r, s)| r == 0 || s == 0) || sw.l.contains(&0) {
            return Err(config_err("r, s and l must be positive"));
        }
        if sw.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(config_err("sigma values must be nonnegative"));
        }
        if sw.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(config_err("alpha values must lie in [0, 1]"));
        }
        match self.kind {
            ExperimentKind::SimilaritySweep => {
                if sw.alpha.is_empty() {
                    return Err(config_err("similarity_sweep needs a non-empty alpha grid"));
                }
                if self.graph != GraphSpec::BarabasiAlbert {
                    return Err(config_err("similarity_sweep uses barabasi_albert pairs"));
                }
                if sw.rs.iter().any(|&(r, _)| r != 2) {
                    return Err(config_err("similarity_sweep demixes pairs, so r must be 2"));
                }
            }
            ExperimentKind::PredictorStudy => {
                if sw.pairs == 0 {
                    return Err(config_err("predictor_study needs pairs >= 1"));
                }
                if sw.rs.iter().any(|&(r, _)| r != 2) {
                    return Err(config_err("predictor_study scores pairs, so r must be 2"));
                }
            }
            _ => {}
        }
        if self.kind != ExperimentKind::SimilaritySweep && !sw.alpha.is_empty() {
            return Err(config_err("alpha grid is only used by similarity_sweep"));
        }
        if !sw.p.is_empty() {
            if !matches!(self.graph, GraphSpec::ErdosRenyi { .. }) {
                return Err(config_err("a p grid needs the erdos_renyi generator"));
            }
            if sw.p.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(config_err("p values must lie in [0, 1]"));
            }
        }
        if self.kind != ExperimentKind::PredictorStudy && sw.pairs != 0 {
            return Err(config_err("pairs is only used by predictor_study"));
        }
        let max_r = sw.rs.iter().map(|&(r, _)| r).max().unwrap_or(1);
        self.solver.validate(1)?;
        if self.solver.etas.is_some() || self.solver.betas.is_some() {
            if sw.rs.iter().any(|&(r, _)| r != max_r) {
                return Err(config_err(
                    "per-source etas/betas need a single r in the grid",
                ));
            }
            self.solver.validate(max_r)?;
        }

        let fixed = match &self.graph {
            GraphSpec::ErdosRenyi { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(config_err(format!("edge probability {p} outside [0, 1]")));
                }
                Vec::new()
            }
            GraphSpec::BarabasiAlbert => Vec::new(),
            GraphSpec::Karate => vec![karate_club()],
            GraphSpec::Files { paths } => {
                if paths.is_empty() {
                    return Err(config_err("files generator needs at least one path"));
                }
                let mut graphs = Vec::with_capacity(paths.len());
                for path in paths {
                    let f = File::open(path)
                        .map_err(|e| DemixError::io(path.display().to_string(), e))?;
                    graphs.push(load_edge_list(BufReader::new(f))?);
                }
                if graphs.iter().any(|g| g.n() != graphs[0].n()) {
                    return Err(config_err("graph files disagree on the node count"));
                }
                graphs
            }
        };
        if fixed.is_empty() {
            if sw.n.is_empty() || sw.n.iter().any(|&n| n < 10) {
                return Err(config_err(
                    "generated graphs need an n grid with every n >= 10",
                ));
            }
        } else {
            if !sw.n.is_empty() {
                return Err(config_err("n grid must be empty for fixed graphs"));
            }
            if fixed.len() > 1 {
                if self.kind.single_graph() {
                    return Err(config_err("single-graph experiments take one graph file"));
                }
                if sw.rs.iter().any(|&(r, _)| r != fixed.len()) {
                    return Err(config_err("r must equal the number of graph files"));
                }
            }
        }
        for &(r, s) in &sw.rs {
            let n = sw.n.iter().copied().min().unwrap_or_else(|| fixed[0].n());
            let needed = if self.kind.single_graph() { r * s } else { s };
            if needed > n {
                return Err(config_err(format!(
                    "(r={r}, s={s}) needs more than {n} nodes"
                )));
            }
        }
        Ok(fixed)
    }
}

/// A grid coordinate: integers stay integers in the output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Int(u64),
    Real(f64),
}

impl GridValue {
    pub fn as_f64(self) -> f64 {
        match self {
            GridValue::Int(v) => v as f64,
            GridValue::Real(v) => v,
        }
    }
}

pub type GridPoint = BTreeMap<String, GridValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub grid: GridPoint,
    pub trials: usize,
    pub success_rate: f64,
    pub median_de: f64,
    pub mean_iterations: f64,
    /// Seconds; absent unless timing was requested.
    pub wall_time: Option<f64>,
    /// Kind-specific per-point quantities (e.g. the predictor value).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub grid_index: usize,
    pub trial: usize,
    pub seed: u64,
    /// `None` when the trial failed with an error.
    pub de: Option<f64>,
    pub success: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub version: String,
    pub seed_scheme: String,
    pub master_seed: u64,
    /// Sorted grid keys, i.e. the leading CSV columns.
    pub grid_keys: Vec<String>,
    /// Cross-row statistics (e.g. a rank correlation).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub summary: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub metadata: Metadata,
    pub rows: Vec<ResultRow>,
    /// Per-trial records, ordered by grid index then trial index.
    #[serde(default, skip_serializing)]
    pub trial_records: Vec<TrialRecord>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trial seed as stated in [`SEED_SCHEME`].
pub fn derive_seed(master: u64, grid_index: u64, trial_index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ grid_index) ^ trial_index)
}

/// Median of finite-or-infinite values; NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // ties share the average of their 1-based ranks
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant or fewer than two points are given.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() || a.len() < 2 {
        return f64::NAN;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return f64::NAN;
    }
    cov / (va * vb).sqrt()
}

#[derive(Debug, Clone)]
struct Point {
    grid: GridPoint,
    n: usize,
    r: usize,
    s: usize,
    l: usize,
    sigma: f64,
    alpha: f64,
    /// Generator for drawn graphs, with any `p` grid value applied.
    graph: GraphSpec,
    /// Graphs fixed for every trial of the point (predictor pairs).
    bases: Option<Vec<Arc<SpectralBasis>>>,
    extra: BTreeMap<String, f64>,
}

fn grid_keys(cfg: &ExperimentConfig) -> Vec<String> {
    let mut keys = vec!["l", "n", "r", "s", "sigma"];
    match cfg.kind {
        ExperimentKind::SimilaritySweep => keys.push("alpha"),
        ExperimentKind::PredictorStudy => keys.push("pair"),
        _ => {}
    }
    if !cfg.sweep.p.is_empty() {
        keys.push("p");
    }
    let mut keys: Vec<String> = keys.into_iter().map(String::from).collect();
    keys.sort();
    keys
}

fn spectral_basis(g: &Graph, kind: GsoKind, l: usize) -> Result<SpectralBasis> {
    decompose(&gso_from_graph(g, kind)?, l)
}

/// Draws a graph from the generator, retrying until its shift has distinct
/// eigenvalues when `distinct` is requested.
fn generated_basis(
    spec: &GraphSpec,
    n: usize,
    gso: GsoKind,
    l: usize,
    seed: u64,
    distinct: bool,
) -> Result<SpectralBasis> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_GRAPH_DRAWS {
        let g = match spec {
            GraphSpec::ErdosRenyi { p } => erdos_renyi(n, *p, rng.random())?,
            GraphSpec::BarabasiAlbert => barabasi_albert(n, rng.random())?,
            _ => unreachable!("fixed graphs are not generated"),
        };
        let b = spectral_basis(&g, gso, l)?;
        if b.distinct || !distinct {
            return Ok(b);
        }
    }
    Err(DemixError::Degenerate(format!(
        "no graph with distinct eigenvalues in {MAX_GRAPH_DRAWS} draws"
    )))
}

fn build_points(cfg: &ExperimentConfig, fixed: &[Graph]) -> Result<Vec<Point>> {
    let sw = &cfg.sweep;
    let ns: Vec<usize> = if fixed.is_empty() {
        sw.n.clone()
    } else {
        vec![fixed[0].n()]
    };
    let alphas = if sw.alpha.is_empty() {
        vec![f64::NAN]
    } else {
        sw.alpha.clone()
    };
    let pairs = sw.pairs.max(1);
    let densities: Vec<Option<f64>> = if sw.p.is_empty() {
        vec![None]
    } else {
        sw.p.iter().copied().map(Some).collect()
    };
    let mut points = Vec::new();
    for &n in &ns {
        for &(r, s) in &sw.rs {
            for &l in &sw.l {
                for &alpha in &alphas {
                    for &density in &densities {
                        for pair in 0..pairs {
                            for &sigma in &sw.sigma {
                                let mut grid = GridPoint::new();
                                grid.insert("n".into(), GridValue::Int(n as u64));
                                grid.insert("r".into(), GridValue::Int(r as u64));
                                grid.insert("s".into(), GridValue::Int(s as u64));
                                grid.insert("l".into(), GridValue::Int(l as u64));
                                grid.insert("sigma".into(), GridValue::Real(sigma));
                                if cfg.kind == ExperimentKind::SimilaritySweep {
                                    grid.insert("alpha".into(), GridValue::Real(alpha));
                                }
                                if cfg.kind == ExperimentKind::PredictorStudy {
                                    grid.insert("pair".into(), GridValue::Int(pair as u64));
                                }
                                if let Some(p) = density {
                                    grid.insert("p".into(), GridValue::Real(p));
                                }
                                points.push(Point {
                                    grid,
                                    n,
                                    r,
                                    s,
                                    l,
                                    sigma,
                                    alpha,
                                    graph: match density {
                                        Some(p) => GraphSpec::ErdosRenyi { p },
                                        None => cfg.graph.clone(),
                                    },
                                    bases: None,
                                    extra: BTreeMap::new(),
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    if cfg.kind == ExperimentKind::PredictorStudy {
        for point in &mut points {
            let pair = match point.grid["pair"] {
                GridValue::Int(v) => v,
                GridValue::Real(_) => unreachable!(),
            };
            // the pair depends on (n, l, p, pair) only, so noise levels share graphs
            let master = match point.grid.get("p") {
                Some(GridValue::Real(p)) => splitmix64(cfg.seed ^ p.to_bits()),
                _ => cfg.seed,
            };
            let key = derive_seed(
                master,
                u64::MAX,
                (point.n as u64) << 40 | (point.l as u64) << 20 | pair,
            );
            let bases: Vec<Arc<SpectralBasis>> = if fixed.is_empty() {
                (0..2u64)
                    .map(|k| {
                        generated_basis(
                            &point.graph,
                            point.n,
                            cfg.gso,
                            point.l,
                            splitmix64(key ^ k),
                            true,
                        )
                        .map(Arc::new)
                    })
                    .collect::<Result<_>>()?
            } else {
                (0..2)
                    .map(|k| {
                        spectral_basis(&fixed[k.min(fixed.len() - 1)], cfg.gso, point.l)
                            .map(Arc::new)
                    })
                    .collect::<Result<_>>()?
            };
            let rho_bar =
                predictor_rho_bar(&bases[0], &bases[1], point.s, point.s, point.l, point.l)?;
            point.extra.insert("rho_bar".into(), rho_bar);
            point.bases = Some(bases);
        }
    }
    Ok(points)
}

fn solver_for(cfg: &ExperimentConfig, sigma: f64) -> SolverConfig {
    let mut solver = cfg.solver.clone();
    if sigma > 0.0 && solver.noise_epsilon.is_none() {
        solver.noise_epsilon = Some(sigma);
    }
    solver
}

/// One planted instance: returns the demixing error and solver iterations.
fn run_trial(
    cfg: &ExperimentConfig,
    fixed: &[Graph],
    point: &Point,
    seed: u64,
) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (graph_seed, plant_seed, noise_seed): (u64, u64, u64) =
        (rng.random(), rng.random(), rng.random());
    let bases: Vec<Arc<SpectralBasis>> = if let Some(b) = &point.bases {
        b.clone()
    } else if cfg.kind.single_graph() {
        let b = Arc::new(match fixed.first() {
            Some(g) => spectral_basis(g, cfg.gso, point.l)?,
            None => generated_basis(&point.graph, point.n, cfg.gso, point.l, graph_seed, false)?,
        });
        vec![b; point.r]
    } else if cfg.kind == ExperimentKind::SimilaritySweep {
        let (g1, g2) = barabasi_albert_pair(point.n, point.alpha, graph_seed)?;
        vec![
            Arc::new(spectral_basis(&g1, cfg.gso, point.l)?),
            Arc::new(spectral_basis(&g2, cfg.gso, point.l)?),
        ]
    } else if fixed.is_empty() {
        (0..point.r as u64)
            .map(|k| {
                generated_basis(
                    &point.graph,
                    point.n,
                    cfg.gso,
                    point.l,
                    splitmix64(graph_seed ^ k),
                    false,
                )
                .map(Arc::new)
            })
            .collect::<Result<_>>()?
    } else {
        (0..point.r)
            .map(|k| spectral_basis(&fixed[k.min(fixed.len() - 1)], cfg.gso, point.l).map(Arc::new))
            .collect::<Result<_>>()?
    };

    let orth = if cfg.kind.single_graph() {
        Orthogonality::Prop1
    } else {
        Orthogonality::None
    };
    let gt = plant_ground_truth(&bases, &vec![point.s; point.r], plant_seed, orth)?;
    let problem = synthesize_mixture(&bases, &gt, point.sigma, None, cfg.as2_mode, noise_seed)?;
    let solver = solver_for(cfg, point.sigma);
    if cfg.kind.single_graph() {
        let sol = demix_single_graph(&problem, &solver, &SeparationSpec::node_domain(point.r))?;
        Ok((
            demixing_error_matched(&sol.estimates(), &gt)?,
            sol.iterations(),
        ))
    } else {
        let sol = match cfg.method {
            Method::Convex => solve_convex(&problem, &solver)?,
            Method::Logdet => solve_logdet(&problem, &solver)?,
        };
        Ok((demixing_error(&sol.estimates(), &gt)?, sol.iterations()))
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| DemixError::Config(format!("cannot start {workers} workers: {e}")))
}

/// Validates the config, then runs every grid point. A trial that errors
/// counts as a failure with infinite error; its message is kept in the
/// per-trial records.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let fixed = cfg.prepare()?;
    let points = build_points(cfg, &fixed)?;
    let pool = pool(cfg.workers)?;

    let mut rows = Vec::with_capacity(points.len());
    let mut trial_records = Vec::with_capacity(points.len() * cfg.trials);
    for (gi, point) in points.iter().enumerate() {
        let started = Instant::now();
        let records: Vec<TrialRecord> = pool.install(|| {
            (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let grid = if cfg.paired_seeds { 0 } else { gi as u64 };
                    let seed = derive_seed(cfg.seed, grid, t as u64);
                    match run_trial(cfg, &fixed, point, seed) {
                        Ok((de, iterations)) => TrialRecord {
                            grid_index: gi,
                            trial: t,
                            seed,
                            de: Some(de),
                            success: success(de, cfg.threshold),
                            iterations,
                            error: None,
                        },
                        Err(e) => TrialRecord {
                            grid_index: gi,
                            trial: t,
                            seed,
                            de: None,
                            success: false,
                            iterations: 0,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect()
        });
        let wall = started.elapsed().as_secs_f64();
        rows.push(aggregate(
            point,
            &records,
            cfg.record_timing.then_some(wall),
        ));
        trial_records.extend(records);
    }

    let mut summary = BTreeMap::new();
    if cfg.kind == ExperimentKind::PredictorStudy {
        let rho: Vec<f64> = rows.iter().map(|r| r.extra["rho_bar"]).collect();
        let rate: Vec<f64> = rows.iter().map(|r| r.success_rate).collect();
        summary.insert("spearman_rho_bar_success".into(), spearman(&rho, &rate));
    }
    Ok(ResultsTable {
        metadata: Metadata {
            config: cfg.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed_scheme: SEED_SCHEME.into(),
            master_seed: cfg.seed,
            grid_keys: grid_keys(cfg),
            summary,
        },
        rows,
        trial_records,
    })
}

fn aggregate(point: &Point, records: &[TrialRecord], wall_time: Option<f64>) -> ResultRow {
    let des: Vec<f64> = records
        .iter()
        .map(|r| r.de.unwrap_or(f64::INFINITY))
        .collect();
    let n = records.len() as f64;
    ResultRow {
        grid: point.grid.clone(),
        trials: records.len(),
        success_rate: records.iter().filter(|r| r.success).count() as f64 / n,
        median_de: median(&des),
        mean_iterations: records.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
        wall_time,
        extra: point.extra.clone(),
    }
}

/// Recomputes the aggregate metrics of every row from per-trial records.
pub fn reaggregate(table: &ResultsTable, records: &[TrialRecord]) -> Vec<(usize, f64, f64)> {
    (0..table.rows.len())
        .map(|gi| {
            let mine: Vec<&TrialRecord> = records.iter().filter(|r| r.grid_index == gi).collect();
            let des: Vec<f64> = mine.iter().map(|r| r.de.unwrap_or(f64::INFINITY)).collect();
            let rate = mine.iter().filter(|r| r.success).count() as f64 / mine.len() as f64;
            (mine.len(), rate, median(&des))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// 17 significant digits: enough to round-trip any `f64`.
fn real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn grid_cell(v: GridValue) -> String {
    match v {
        GridValue::Int(i) => i.to_string(),
        GridValue::Real(x) => real(x),
    }
}

const METRICS: [&str; 5] = [
    "trials",
    "success_rate",
    "median_de",
    "mean_iterations",
    "wall_time",
];

fn csv_err(path: &str, e: csv::Error) -> DemixError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DemixError::io(path, io),
        other => DemixError::Numeric(format!("CSV encoding failed: {other:?}")),
    }
}

/// Writes the table as CSV (grid keys sorted, then metrics, then extra
/// columns sorted) or as one JSON document. `path` labels I/O errors.
pub fn emit_results<W: Write>(
    table: &ResultsTable,
    format: OutputFormat,
    sink: W,
    path: &str,
) -> Result<()> {
    match format {
        OutputFormat::Json => {
            let mut sink = sink;
            serde_json::to_writer_pretty(&mut sink, table)?;
            writeln!(sink).map_err(|e| DemixError::io(path, e))
        }
        OutputFormat::Csv => {
            let extra: Vec<String> = table
                .rows
                .first()
                .map(|r| r.extra.keys().cloned().collect())
                .unwrap_or_default();
            let mut w = csv::Writer::from_writer(sink);
            let header = table
                .metadata
                .grid_keys
                .iter()
                .map(String::as_str)
                .chain(METRICS)
                .chain(extra.iter().map(String::as_str));
            w.write_record(header).map_err(|e| csv_err(path, e))?;
            for row in &table.rows {
                let mut cells: Vec<String> = table
                    .metadata
                    .grid_keys
                    .iter()
                    .map(|k| row.grid.get(k).map_or_else(String::new, |v| grid_cell(*v)))
                    .collect();
                cells.push(row.trials.to_string());
                cells.push(real(row.success_rate));
                cells.push(real(row.median_de));
                cells.push(real(row.mean_iterations));
                cells.push(row.wall_time.map_or_else(String::new, real));
                cells.extend(
                    extra
                        .iter()
                        .map(|k| row.extra.get(k).map_or_else(String::new, |v| real(*v))),
                );
                w.write_record(&cells).map_err(|e| csv_err(path, e))?;
            }
            w.flush().map_err(|e| DemixError::io(path, e))
        }
    }
}

/// Per-trial records as CSV, one line per trial.
pub fn emit_trials<W: Write>(records: &[TrialRecord], sink: W, path: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "grid_index",
        "trial",
        "seed",
        "de",
        "success",
        "iterations",
        "error",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.grid_index.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.de.map_or_else(String::new, real),
            r.success.to_string(),
            r.iterations.to_string(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| DemixError::io(path, e))
}
