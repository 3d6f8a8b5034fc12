//! Numerical engine for detecting, reconstructing and tracking isometries
//! between Riemannian metrics given in charts.
//!
//! The pipeline: [`jets`] provide truncated power-series arithmetic;
//! [`metric`] integrates geodesics (also in the jet ring); [`invariants`]
//! turns frames into Taylor jets of the metric in normal coordinates and of
//! normal-chart transitions; [`isometry`] compares those signatures and
//! rebuilds maps from a 1-jet; [`tracker`] follows an isometry across a
//! parameter family; [`bergman`] produces Bergman metrics of planar and
//! low-dimensional domains; [`scenario`] drives it all from config files.

// `!(x > 0.0)` style guards are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bergman;
pub mod invariants;
pub mod isometry;
pub mod jets;
pub mod metric;
pub mod ode;
pub mod par;
pub mod qmc;
pub mod scalar;
pub mod scenario;
pub mod tracker;

pub use jets::{Jet, JetError, JetMap, MultiIndex};
pub use scalar::Scalar;
