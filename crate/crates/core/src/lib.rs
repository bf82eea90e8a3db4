#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Steep-well Kirchhoff problems with sign-changing weights: discretization,
//! principal eigenpairs, fibering analysis and Nehari-branch solvers.

pub mod fields;
pub mod functionals;
pub mod grid;
pub mod linalg;
pub mod sampling;
pub mod eigen;
pub mod fibering;
pub mod solver;
pub mod thresholds;
pub mod experiment;
