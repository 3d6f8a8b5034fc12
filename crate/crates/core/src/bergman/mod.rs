//! Truncated Bergman kernels and metrics of bounded domains in `C^d`, and
//! smooth families of them pulled back to a fixed chart.

mod diffeo;
mod domain;
pub mod expr;
mod kernel;
mod quadrature;

use thiserror::Error;

use crate::metric::MetricError;

pub use diffeo::{
    family_diffeo, pullback_family, richardson_check, BergmanFamily, DiffeoOptions, FamilyDiffeo,
    PullbackOptions, RichardsonReport,
};
pub use domain::{DefiningFunction, DomainFamily, DomainReport, DomainSpec};
pub use expr::{Expr, ParseError};
pub use kernel::{
    bergman_metric, kernel_build, kernel_from_rule, monomial_exponents, BergmanMetric, KernelApprox,
};
pub use quadrature::{
    build_rule, halton_rule, polar_rule, transport_rule, QuadConfig, QuadKind, QuadratureRule,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BergmanError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("domain is empty in its bounding box")]
    EmptyDomain,
    #[error("domain reaches its bounding box")]
    Unbounded,
    #[error("domain is not star-shaped about its interior point")]
    NotStarShaped,
    #[error("gradient of the defining function vanishes at boundary point {0:?}")]
    DegenerateBoundary(Vec<f64>),
    #[error("Levi form not positive at {point:?} (smallest eigenvalue {levi:.3e})")]
    NotPseudoconvex { point: Vec<f64>, levi: f64 },
    #[error("{nodes} quadrature nodes for a basis needing {need}")]
    TooFewNodes { nodes: usize, need: usize },
    #[error("Gram matrix numerically singular{}", index.map(|k| format!(" at basis element {k}")).unwrap_or_default())]
    GramSingular { index: Option<usize> },
    #[error("boundary moves by {shift:.3e} at {point:?}, beyond the collar")]
    TubeExceeded { point: Vec<f64>, shift: f64 },
    #[error("closest-point projection failed at {0:?}")]
    ProjectionFailed(Vec<f64>),
}
