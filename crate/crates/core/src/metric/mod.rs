//! Riemannian metrics in a single chart, their geodesics, frames and
//! parameter families.

mod builtin;
mod family;
mod frame;
mod geodesic;
mod grid;
mod injectivity;
mod maps;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::jets::{Jet, JetError, Powers};
use crate::scalar::Scalar;

pub use builtin::{
    build_metric, Bump, ConformalForm, ConformalScalar, Euclidean, PoincareDisc, SpherePatch,
};
pub use family::{ConstantFamily, FnFamily, MetricFamily};
pub use frame::{orthonormal_frame, Frame};
pub use geodesic::{
    christoffel, exp_jet, exp_map, exp_with_jacobian, geodesic_samples, log_distance, log_map,
    GeodesicOptions, GeodesicState,
};
pub use grid::CustomGrid;
pub use injectivity::{injectivity_radius_floor, sphere_directions, InjectivityNet};
pub use maps::{ChartMap, LinearMap, MapFormula, Mobius, PullbackMetric};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("point {0:?} lies outside the chart region")]
    OutsideRegion(Vec<f64>),
    #[error("metric is not positive definite at {point:?} (smallest eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { point: Vec<f64>, min_eig: f64 },
    #[error("geodesic left the chart region at s = {0}")]
    GeodesicExit(f64),
    #[error("geodesic integration failed: {0}")]
    Integration(String),
    #[error("shooting for the logarithm did not converge after {iters} iterations (residual {residual:.3e})")]
    ShootingFailed { iters: usize, residual: f64 },
    #[error("seed vectors are linearly dependent")]
    RankDeficientSeed,
    #[error("frame is not orthonormal (defect {0:.3e})")]
    NotOrthonormal(f64),
    #[error("invalid metric definition: {0}")]
    Invalid(String),
    #[error(transparent)]
    Jet(#[from] JetError),
}

type PointTest = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// Where a chart metric may be evaluated.
#[derive(Clone)]
pub enum Region {
    Everywhere,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Predicate { test: PointTest, label: String },
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Everywhere => write!(f, "Everywhere"),
            Region::Box { lo, hi } => write!(f, "Box({lo:?}, {hi:?})"),
            Region::Ball { center, radius } => write!(f, "Ball({center:?}, {radius})"),
            Region::Predicate { label, .. } => write!(f, "Predicate({label})"),
        }
    }
}

impl Region {
    pub fn cube(dim: usize, half_width: f64) -> Region {
        Region::Box {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        if p.iter().any(|x| !x.is_finite()) {
            return false;
        }
        match self {
            Region::Everywhere => true,
            Region::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (a, b))| *x > *a && *x < *b),
            Region::Ball { center, radius } => {
                let r2: f64 = p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                r2 < radius * radius
            }
            Region::Predicate { test, .. } => test(p),
        }
    }
}

/// Index of `(i, j)` in the packed upper triangle (row-major, `i ≤ j`).
pub fn sym_index(i: usize, j: usize, d: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * d - i * (i + 1) / 2 + j
}

pub fn sym_len(d: usize) -> usize {
    d * (d + 1) / 2
}

pub fn unpack_sym(packed: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| packed[sym_index(i, j, d)])
}

pub fn pack_sym(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(sym_len(d));
    for i in 0..d {
        for j in i..d {
            out.push(0.5 * (m[(i, j)] + m[(j, i)]));
        }
    }
    out
}

/// A Riemannian metric on a region of `R^d`.
///
/// Components are exchanged packed (see [`sym_index`]). Implementors provide
/// either [`ChartMetric::eval_jet`] directly or [`ChartMetric::taylor`]
/// together with [`eval_jet_via_taylor`]; formula metrics get everything
/// from [`MetricFormula`].
pub trait ChartMetric: Send + Sync {
    fn dim(&self) -> usize;
    fn region(&self) -> &Region;
    fn label(&self) -> String;

    /// Components at a point whose coordinates are jets (no region check).
    fn eval_jet(&self, p: &[Jet]) -> Result<Vec<Jet>, MetricError>;

    /// Components at a plain point (no region check).
    fn eval_packed(&self, p: &[f64]) -> Result<Vec<f64>, MetricError> {
        let t = self.taylor(p, 0)?;
        Ok(t.iter().map(|j| j.value()).collect())
    }

    /// Taylor expansion of the components about `center`, in `dim()`
    /// variables up to `degree`.
    fn taylor(&self, center: &[f64], degree: usize) -> Result<Vec<Jet>, MetricError> {
        let d = self.dim();
        let vars: Vec<Jet> = (0..d)
            .map(|i| Jet::variable(d, degree, i, center[i]))
            .collect();
        self.eval_jet(&vars)
    }
}

/// `eval_jet` for metrics that only know their Taylor expansions: expand at
/// the constant part of `p`, then substitute the nilpotent remainder.
pub fn eval_jet_via_taylor<M: ChartMetric + ?Sized>(
    m: &M,
    p: &[Jet],
) -> Result<Vec<Jet>, MetricError> {
    let c: Vec<f64> = p.iter().map(|j| j.value()).collect();
    let n = p[0].degree();
    let t = m.taylor(&c, n)?;
    let y: Vec<Jet> = p
        .iter()
        .map(|j| {
            let mut y = j.clone();
            y.coeffs_mut()[0] = 0.0;
            y
        })
        .collect();
    let powers = Powers::new(&y, n);
    Ok(t.iter().map(|tj| powers.eval(tj).pop().unwrap()).collect())
}

/// A metric given by a closed-form expression, evaluable on any [`Scalar`].
pub trait MetricFormula: Send + Sync {
    fn dim(&self) -> usize;
    fn region(&self) -> &Region;
    fn label(&self) -> String;
    /// Packed components.
    fn components<S: Scalar>(&self, p: &[S]) -> Vec<S>;
}

impl<T: MetricFormula> ChartMetric for T {
    fn dim(&self) -> usize {
        MetricFormula::dim(self)
    }
    fn region(&self) -> &Region {
        MetricFormula::region(self)
    }
    fn label(&self) -> String {
        MetricFormula::label(self)
    }
    fn eval_jet(&self, p: &[Jet]) -> Result<Vec<Jet>, MetricError> {
        Ok(self.components(p))
    }
    fn eval_packed(&self, p: &[f64]) -> Result<Vec<f64>, MetricError> {
        Ok(self.components(p))
    }
}

/// The metric matrix at `p`, after checking the region and positivity.
pub fn metric_at(m: &dyn ChartMetric, p: &[f64]) -> Result<DMatrix<f64>, MetricError> {
    if !m.region().contains(p) {
        return Err(MetricError::OutsideRegion(p.to_vec()));
    }
    let g = unpack_sym(&m.eval_packed(p)?, m.dim());
    Ok(g)
}

/// `g(p)` and the first partials `∂_l g(p)`, `l = 0..d`.
pub fn metric_with_gradient(
    m: &dyn ChartMetric,
    p: &[f64],
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), MetricError> {
    if !m.region().contains(p) {
        return Err(MetricError::OutsideRegion(p.to_vec()));
    }
    let d = m.dim();
    let t = m.taylor(p, 1)?;
    let g = DMatrix::from_fn(d, d, |i, j| t[sym_index(i, j, d)].value());
    let dg = (0..d)
        .map(|l| DMatrix::from_fn(d, d, |i, j| t[sym_index(i, j, d)].coeffs()[1 + l]))
        .collect();
    Ok((g, dg))
}

/// Smallest eigenvalue of `g(p)`; errors if it is not positive.
pub fn check_positive(m: &dyn ChartMetric, p: &[f64]) -> Result<f64, MetricError> {
    let g = metric_at(m, p)?;
    let min_eig = g.symmetric_eigenvalues().min();
    if !(min_eig > 0.0) {
        return Err(MetricError::NotPositiveDefinite {
            point: p.to_vec(),
            min_eig,
        });
    }
    Ok(min_eig)
}

/// `|v|_g` at `p`.
pub fn norm_at(m: &dyn ChartMetric, p: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    let g = metric_at(m, p)?;
    let d = v.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += g[(i, j)] * v[i] * v[j];
        }
    }
    Ok(s.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_round_trip() {
        let d = 3;
        let m = DMatrix::from_fn(d, d, |i, j| (i + j) as f64 + if i == j { 5.0 } else { 0.0 });
        assert_eq!(unpack_sym(&pack_sym(&m), d), m);
        assert_eq!(sym_index(1, 2, 3), 4);
        assert_eq!(sym_index(2, 1, 3), 4);
        assert_eq!(sym_len(4), 10);
    }

    #[test]
    fn regions() {
        assert!(Region::cube(2, 1.0).contains(&[0.5, -0.9]));
        assert!(!Region::cube(2, 1.0).contains(&[1.5, 0.0]));
        let b = Region::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert!(b.contains(&[0.6, 0.6]));
        assert!(!b.contains(&[0.8, 0.8]));
        assert!(!Region::Everywhere.contains(&[f64::NAN]));
    }
}
