//! Multilevel Bregman proximal gradient descent.
//!
//! Smooth relatively-smooth objectives over boxes and translated simplices,
//! with coarse corrections built from a hierarchy of grids.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod hierarchy;
pub mod linops;
pub mod objectives;
pub mod solver;
pub mod vector;

pub use error::{Error, Result};
pub use geometry::{bpgd_update, divergence, ref_eval, simplex_dual_root, BregmanProx, FeasibleRegion, GeometryKind, GeometrySpec};
pub use hierarchy::{adapt_box_bounds, adapt_region, adapt_simplex, geometry_for, trigger, AdaptedRegion, LevelSpec, TriggerParams};
pub use linops::{CsrMatrix, DenseMatrix, LinearOperator, TransferLayout, TransferPair};
pub use objectives::{build_coarse_model, smoothness_constant, CoarseModel, Model, Objective};
pub use solver::{armijo, bpgd_run, ml_bpgd_run, ml_bpgd_run_with, ArmijoParams, Diagnostics, IterationRecord, SolverOptions, SolverTrace};
pub use vector::{GridShape, GridVector};
