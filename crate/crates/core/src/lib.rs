//! Blind demixing of diffused graph signals.
//!
//! An observation `y` is modelled as the sum of `R` graph signals, each one a
//! sparse input diffused by a polynomial graph filter on its own graph. Lifting
//! every unknown `(x_i, h_i)` pair to the rank-one matrix `Z_i = x_i h_iᵀ` turns
//! the bilinear observation model into a linear one, which is then attacked by
//! nuclear-norm and row-sparsity regularised convex programs.
//!
//! Module map:
//!
//! * [`graph`]: graphs, generators, loaders and shift operators.
//! * [`spectral`]: eigendecomposition, graph Fourier transforms, transfer matrices.
//! * [`model`]: planted instances, mixtures and the demixing error.
//! * [`solver`]: ADMM solvers for the lifted programs and rank-one extraction.
//! * [`separation`]: single-graph ambiguity handling via SVD separation.
//! * [`theory`]: concentration functions, recovery bounds and diagnostics.
//! * [`experiment`]: config-driven Monte-Carlo experiments and result tables.

pub mod error;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod separation;
pub mod solver;
pub mod spectral;
pub mod theory;

pub use error::{DemixError, Result};
pub use graph::{Graph, Gso, GsoKind};
pub use linalg::{CMatrix, CVector, C64};
pub use model::{DemixProblem, GroundTruth, Orthogonality};
pub use separation::{SeparationSpec, TransformChoice};
pub use solver::{LiftedSolution, SolverConfig};
pub use spectral::SpectralBasis;
pub use theory::{ConcentrationParams, RecoveryBounds};
