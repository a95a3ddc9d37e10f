//! Diffeomorphic shape evolution with kernel, elastic, and growth-tensor metrics.
//!
//! Shapes (landmarks, polylines, triangle and tetrahedral meshes) move along
//! flows of kernel velocity fields. The cost of a velocity is an RKHS norm
//! optionally augmented by a linear-elastic energy of the current shape, and
//! growth tensors may absorb part of the strain. Matching solves a relaxed
//! optimal-control problem by gradient-based optimization of the discrete
//! objective.

pub mod elastic;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod growth;
pub mod hybrid;
pub mod io;
pub mod kernels;
pub mod linalg;
mod local;
pub mod matching;

pub use elastic::ElasticModel;
pub use error::{Error, Result};
pub use flow::{Controls, GrowthMode, RunningCost, Scheme, ShapePath};

pub use geometry::{Cells, DiscreteShape, ElementFrame, LayeredStructure, ShapeKind};

pub use growth::{AdmissibleSet, GrowthField, YankField};
pub use hybrid::HybridMetric;
pub use kernels::{KernelFamily, KernelSpec, KernelVelocity};
pub use linalg::Vec3;
pub use matching::{FidelitySpec, MatchProblem};

