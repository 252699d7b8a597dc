//! Shared fixtures for the solver benchmarks.

use std::sync::Arc;

use graph_demix::graph::{erdos_renyi, gso_from_graph};
use graph_demix::model::{plant_ground_truth, synthesize_mixture};
use graph_demix::spectral::decompose;
use graph_demix::{DemixProblem, GsoKind, Orthogonality, SpectralBasis};

/// Adjacency basis of an Erdős–Rényi graph.
pub fn er_basis(n: usize, p: f64, l: usize, seed: u64) -> Arc<SpectralBasis> {
    let g = erdos_renyi(n, p, seed).expect("valid generator arguments");
    let gso = gso_from_graph(&g, GsoKind::Adjacency).expect("adjacency of a valid graph");
    Arc::new(decompose(&gso, l).expect("symmetric shift decomposes"))
}

/// Noise-free mixture of `r` sources on independent graphs.
pub fn multi_graph_problem(n: usize, r: usize, s: usize, l: usize, seed: u64) -> DemixProblem {
    let bases: Vec<_> = (0..r as u64)
        .map(|k| er_basis(n, 0.15, l, seed + 100 * k))
        .collect();
    let gt = plant_ground_truth(&bases, &vec![s; r], seed, Orthogonality::None).expect("plantable");
    synthesize_mixture(&bases, &gt, 0.0, None, false, seed).expect("consistent shapes")
}
