//! Graphs, random generators, edge-list I/O and graph-shift operators.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DemixError, Result};
use crate::linalg::{c, CMatrix};

const KARATE_CLUB: &str = include_str!("../data/karate.csv");

/// Node count plus a weighted edge set.
///
/// Undirected edges are stored once under the key `(min, max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    n: usize,
    directed: bool,
    allow_self_loops: bool,
    edges: BTreeMap<(usize, usize), f64>,
}

impl Graph {
    pub fn new(n: usize, directed: bool) -> Self {
        Graph {
            n,
            directed,
            allow_self_loops: false,
            edges: BTreeMap::new(),
        }
    }

    pub fn with_self_loops(mut self) -> Self {
        self.allow_self_loops = true;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn key(&self, i: usize, j: usize) -> (usize, usize) {
        if self.directed {
            (i, j)
        } else {
            (i.min(j), i.max(j))
        }
    }

    /// Inserts (or overwrites) the edge `i → j` (or `{i, j}` when undirected).
    pub fn add_edge(&mut self, i: usize, j: usize, weight: f64) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(DemixError::param(format!(
                "edge ({i}, {j}) out of range for {} nodes",
                self.n
            )));
        }
        if i == j && !self.allow_self_loops {
            return Err(DemixError::param(format!("self-loop at node {i}")));
        }
        if !weight.is_finite() {
            return Err(DemixError::param(format!(
                "non-finite weight on ({i}, {j})"
            )));
        }
        let key = self.key(i, j);
        self.edges.insert(key, weight);
        Ok(())
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains_key(&self.key(i, j))
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.edges.get(&self.key(i, j)).copied()
    }

    /// Edges as `(i, j, weight)` in key order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    fn pattern(&self) -> BTreeSet<(usize, usize)> {
        self.edges.keys().copied().collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in self.edges.keys() {
            deg[i] += 1;
            if i != j {
                deg[j] += 1;
            }
        }
        deg
    }

    /// Serialises to the edge-list CSV format read by [`load_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes={} directed={}\n", self.n, u8::from(self.directed));
        for (i, j, w) in self.edges() {
            if w == 1.0 {
                let _ = writeln!(out, "{i},{j}");
            } else {
                let _ = writeln!(out, "{i},{j},{w}");
            }
        }
        out
    }
}

/// Zachary's karate club network (34 nodes, 78 undirected edges).
pub fn karate_club() -> Graph {
    load_edge_list(KARATE_CLUB.as_bytes()).expect("bundled karate club data is valid")
}

pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(DemixError::param("erdos_renyi needs n >= 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(DemixError::param(format!(
            "edge probability {p} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(n, false);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                g.edges.insert((i, j), 1.0);
            }
        }
    }
    Ok(g)
}

/// Edges each new node attaches in the preferential-attachment growth.
pub const BA_ATTACHMENT: usize = 2;

/// Picks a candidate with probability proportional to `degree + 1`, so nodes
/// left isolated by the seed graph can still attract edges.
fn pick_preferential(
    rng: &mut ChaCha8Rng,
    candidates: &[usize],
    degree: &[usize],
) -> Option<usize> {
    if candidates.is_empty() {
        return None;
    }
    let total: usize = candidates.iter().map(|&v| degree[v] + 1).sum();
    let mut ticket = rng.random_range(0..total);
    for &v in candidates {
        if ticket <= degree[v] {
            return Some(v);
        }
        ticket -= degree[v] + 1;
    }
    candidates.last().copied()
}

fn seed_size(n: usize) -> usize {
    (n / 10).max(1)
}

/// Grows a scale-free graph from an Erdős–Rényi seed of `n/10` nodes (edge
/// probability 0.1); every later node attaches [`BA_ATTACHMENT`] edges with
/// probability proportional to `degree + 1`.
pub fn barabasi_albert(n: usize, seed: u64) -> Result<Graph> {
    if n < 10 {
        return Err(DemixError::param("barabasi_albert needs n >= 10"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n0 = seed_size(n);
    let core = erdos_renyi(n0, 0.1, rng.random())?;
    let mut g = Graph::new(n, false);
    for (i, j, w) in core.edges() {
        g.add_edge(i, j, w)?;
    }
    let mut degree = g.degrees();
    for t in n0..n {
        let mut candidates: Vec<usize> = (0..t).collect();
        for _ in 0..BA_ATTACHMENT.min(t) {
            let Some(v) = pick_preferential(&mut rng, &candidates, &degree) else {
                break;
            };
            candidates.retain(|&u| u != v);
            g.add_edge(t, v, 1.0)?;
            degree[t] += 1;
            degree[v] += 1;
        }
    }
    Ok(g)
}

/// Two scale-free graphs on `n` nodes sharing `round(overlap · |E₁|)` edges.
///
/// The first graph is grown by [`barabasi_albert`]. The second receives a
/// uniformly chosen subset of the first graph's edges and is then grown by
/// preferential attachment, never reusing an edge of the first graph, until
/// both graphs have the same number of edges.
pub fn barabasi_albert_pair(n: usize, overlap: f64, seed: u64) -> Result<(Graph, Graph)> {
    if n < 10 {
        return Err(DemixError::param("barabasi_albert_pair needs n >= 10"));
    }
    if !(0.0..=1.0).contains(&overlap) {
        return Err(DemixError::param(format!(
            "overlap {overlap} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g1 = barabasi_albert(n, rng.random())?;
    let e1: Vec<(usize, usize)> = g1.edges.keys().copied().collect();
    let target = e1.len();
    let shared = ((overlap * target as f64).round() as usize).min(target);

    let mut g2 = Graph::new(n, false);
    for idx in sample(&mut rng, target, shared).into_vec() {
        let (i, j) = e1[idx];
        g2.add_edge(i, j, 1.0)?;
    }
    let free_pairs = n * (n - 1) / 2 - target;
    if target - shared > free_pairs {
        return Err(DemixError::param(
            "graph too dense to realise the requested overlap",
        ));
    }

    let mut degree = g2.degrees();
    let n0 = seed_size(n);
    let allowed =
        |g2: &Graph, u: usize, v: usize| u != v && !g1.has_edge(u, v) && !g2.has_edge(u, v);

    // growth pass: later nodes attach to earlier ones
    'grow: for t in n0..n {
        let mut attached = (0..t).filter(|&v| g2.has_edge(t, v)).count();
        while attached < BA_ATTACHMENT {
            if g2.edge_count() >= target {
                break 'grow;
            }
            let candidates: Vec<usize> = (0..t).filter(|&v| allowed(&g2, t, v)).collect();
            let Some(v) = pick_preferential(&mut rng, &candidates, &degree) else {
                break;
            };
            g2.add_edge(t, v, 1.0)?;
            degree[t] += 1;
            degree[v] += 1;
            attached += 1;
        }
    }
    // fill pass: random endpoint, preferential partner
    while g2.edge_count() < target {
        let u = rng.random_range(0..n);
        let candidates: Vec<usize> = (0..n).filter(|&v| allowed(&g2, u, v)).collect();
        let Some(v) = pick_preferential(&mut rng, &candidates, &degree) else {
            continue;
        };
        g2.add_edge(u, v, 1.0)?;
        degree[u] += 1;
        degree[v] += 1;
    }
    Ok((g1, g2))
}

/// Reads `i,j[,weight]` lines with an optional `# nodes=N directed=0|1` header.
pub fn load_edge_list<R: BufRead>(source: R) -> Result<Graph> {
    let mut declared_n: Option<usize> = None;
    let mut directed = false;
    let mut rows: Vec<(usize, usize, f64, usize)> = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| DemixError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            for token in header.split_whitespace() {
                if let Some(v) = token.strip_prefix("nodes=") {
                    declared_n = Some(v.parse().map_err(|_| DemixError::Parse {
                        line: lineno,
                        message: format!("bad node count {v:?}"),
                    })?);
                } else if let Some(v) = token.strip_prefix("directed=") {
                    directed = match v {
                        "0" => false,
                        "1" => true,
                        _ => {
                            return Err(DemixError::Parse {
                                line: lineno,
                                message: format!("bad directed flag {v:?}"),
                            })
                        }
                    };
                }
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(DemixError::Parse {
                line: lineno,
                message: format!("expected `i,j[,weight]`, got {trimmed:?}"),
            });
        }
        let index = |s: &str| -> Result<usize> {
            let v: i64 = s.parse().map_err(|_| DemixError::Parse {
                line: lineno,
                message: format!("bad node index {s:?}"),
            })?;
            usize::try_from(v).map_err(|_| DemixError::Parse {
                line: lineno,
                message: format!("negative node index {v}"),
            })
        };
        let i = index(fields[0])?;
        let j = index(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s.parse::<f64>().map_err(|_| DemixError::Parse {
                line: lineno,
                message: format!("bad weight {s:?}"),
            })?,
            None => 1.0,
        };
        rows.push((i, j, w, lineno));
    }

    let n = match declared_n {
        Some(n) => n,
        None => rows
            .iter()
            .map(|&(i, j, _, _)| i.max(j) + 1)
            .max()
            .unwrap_or(0),
    };
    let mut g = Graph::new(n, directed).with_self_loops();
    for (i, j, w, lineno) in rows {
        if i >= n || j >= n {
            return Err(DemixError::Parse {
                line: lineno,
                message: format!("node index {} not below declared count {n}", i.max(j)),
            });
        }
        g.add_edge(i, j, w).map_err(|e| DemixError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
    }
    Ok(g)
}

/// Fraction of shared edges, `|E₁ ∩ E₂| / max(|E₁|, |E₂|)`, on patterns only.
/// Two edgeless graphs are considered identical.
pub fn edge_overlap(g1: &Graph, g2: &Graph) -> Result<f64> {
    if g1.n != g2.n {
        return Err(DemixError::param(format!(
            "node counts differ: {} vs {}",
            g1.n, g2.n
        )));
    }
    let (p1, p2) = (g1.pattern(), g2.pattern());
    let denom = p1.len().max(p2.len());
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(p1.intersection(&p2).count() as f64 / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GsoKind {
    Adjacency,
    Laplacian,
    Custom,
}

/// Graph-shift operator: a dense matrix plus its provenance and normality.
#[derive(Debug, Clone)]
pub struct Gso {
    pub matrix: CMatrix,
    pub kind: GsoKind,
    pub normal: bool,
}

/// Relative commutator threshold for the normality flag.
pub const NORMALITY_TOL: f64 = 1e-10;

pub fn normality_defect(s: &CMatrix) -> f64 {
    let scale = s.norm_squared();
    if scale == 0.0 {
        return 0.0;
    }
    let sh = s.adjoint();
    (s * &sh - &sh * s).norm() / scale
}

impl Gso {
    pub fn from_matrix(matrix: CMatrix, kind: GsoKind) -> Result<Self> {
        if !matrix.is_square() {
            return Err(DemixError::param("shift operator must be square"));
        }
        let normal = normality_defect(&matrix) <= NORMALITY_TOL;
        Ok(Gso {
            matrix,
            kind,
            normal,
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_real_symmetric(&self) -> bool {
        let m = &self.matrix;
        m.iter().all(|z| z.im == 0.0)
            && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
    }
}

/// Builds the adjacency (`S_ji = w(i → j)`) or Laplacian (`D − A`) shift.
pub fn gso_from_graph(g: &Graph, kind: GsoKind) -> Result<Gso> {
    let n = g.n;
    let mut a = CMatrix::zeros(n, n);
    for (i, j, w) in g.edges() {
        a[(j, i)] = c(w);
        if !g.directed {
            a[(i, j)] = c(w);
        }
    }
    let matrix = match kind {
        GsoKind::Adjacency => a,
        GsoKind::Laplacian => {
            if g.directed {
                return Err(DemixError::Unsupported(
                    "laplacian of a directed graph".into(),
                ));
            }
            let mut l = -a.clone();
            for i in 0..n {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].re).sum();
                l[(i, i)] = c(off);
            }
            l
        }
        GsoKind::Custom => {
            return Err(DemixError::Unsupported(
                "custom shifts are built with Gso::from_matrix".into(),
            ))
        }
    };
    Gso::from_matrix(matrix, kind)
}

/// Reads a dense real matrix, one comma-separated row per line.
pub fn load_dense_matrix<R: BufRead>(source: R) -> Result<Gso> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| DemixError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let row = trimmed
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| DemixError::Parse {
                    line: lineno,
                    message: format!("bad entry {s:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(DemixError::Parse {
                    line: lineno,
                    message: format!("expected {} entries, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(DemixError::param("dense shift matrix is not square"));
    }
    let matrix = CMatrix::from_fn(n, n, |i, j| c(rows[i][j]));
    Gso::from_matrix(matrix, GsoKind::Custom)
}

/// Writes a matrix as CSV (real parts, or `re+imi` when complex).
pub fn dump_matrix_csv(m: &CMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| {
                let z = m[(i, j)];
                if z.im == 0.0 {
                    format!("{}", z.re)
                } else {
                    format!("{}{:+}i", z.re, z.im)
                }
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
