use std::sync::Arc;

use super::{sym_index, sym_len, ChartMetric, CustomGrid, MetricError, MetricFormula, Region};
use crate::scalar::Scalar;

fn diagonal<S: Scalar>(d: usize, f: S) -> Vec<S> {
    let zero = f.lift(0.0);
    let mut out = vec![zero; sym_len(d)];
    for i in 0..d {
        out[sym_index(i, i, d)] = f.clone();
    }
    out
}

fn norm_sq<S: Scalar>(p: &[S]) -> S {
    let mut s = p[0].lift(0.0);
    for x in p {
        s = s + x.square();
    }
    s
}

/// The flat metric `δ_ij`.
#[derive(Clone, Debug)]
pub struct Euclidean {
    dim: usize,
    region: Region,
}

impl Euclidean {
    pub fn new(dim: usize) -> Euclidean {
        Euclidean {
            dim,
            region: Region::Everywhere,
        }
    }

    pub fn on(dim: usize, region: Region) -> Euclidean {
        Euclidean { dim, region }
    }
}

impl MetricFormula for Euclidean {
    fn dim(&self) -> usize {
        self.dim
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn label(&self) -> String {
        format!("euclidean[{}]", self.dim)
    }
    fn components<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        diagonal(self.dim, p[0].lift(1.0))
    }
}

/// Isotropic Gaussian bump `amp·exp(−|x − c|² / (2 w²))`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bump {
    pub amp: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

impl Bump {
    pub fn eval<S: Scalar>(&self, p: &[S]) -> S {
        let mut r2 = p[0].lift(0.0);
        for (x, c) in p.iter().zip(&self.center) {
            r2 = r2 + (x.clone() - *c).square();
        }
        (r2 * (-0.5 / (self.width * self.width))).exp() * self.amp
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConformalForm {
    /// `g = e^{2u} δ`.
    Exponential,
    /// `g = (1 + u) δ`.
    Additive,
}

/// Conformally flat metric driven by `u(x) = a·x + Σ bumps`.
#[derive(Clone, Debug)]
pub struct ConformalScalar {
    dim: usize,
    pub form: ConformalForm,
    pub linear: Vec<f64>,
    pub bumps: Vec<Bump>,
    region: Region,
}

impl ConformalScalar {
    pub fn new(
        dim: usize,
        form: ConformalForm,
        linear: Vec<f64>,
        bumps: Vec<Bump>,
        region: Region,
    ) -> Result<ConformalScalar, MetricError> {
        if linear.len() != dim || bumps.iter().any(|b| b.center.len() != dim) {
            return Err(MetricError::Invalid(
                "conformal profile dimension mismatch".into(),
            ));
        }
        if bumps.iter().any(|b| !(b.width > 0.0)) {
            return Err(MetricError::Invalid("bump widths must be positive".into()));
        }
        Ok(ConformalScalar {
            dim,
            form,
            linear,
            bumps,
            region,
        })
    }

    pub fn profile<S: Scalar>(&self, p: &[S]) -> S {
        let mut u = p[0].lift(0.0);
        for (x, a) in p.iter().zip(&self.linear) {
            if *a != 0.0 {
                u = u + x.clone() * *a;
            }
        }
        for b in &self.bumps {
            u = u + b.eval(p);
        }
        u
    }
}

impl MetricFormula for ConformalScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn label(&self) -> String {
        format!("conformal_scalar[{}; {} bumps]", self.dim, self.bumps.len())
    }
    fn components<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        let u = self.profile(p);
        let f = match self.form {
            ConformalForm::Exponential => (u * 2.0).exp(),
            ConformalForm::Additive => u + 1.0,
        };
        diagonal(self.dim, f)
    }
}

/// Poincaré ball model, `4 (1 − |x|²)^{-2} δ`.
#[derive(Clone, Debug)]
pub struct PoincareDisc {
    dim: usize,
    region: Region,
}

impl PoincareDisc {
    pub fn new(dim: usize) -> PoincareDisc {
        PoincareDisc {
            dim,
            region: Region::Ball {
                center: vec![0.0; dim],
                radius: 1.0,
            },
        }
    }
}

impl MetricFormula for PoincareDisc {
    fn dim(&self) -> usize {
        self.dim
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn label(&self) -> String {
        format!("poincare_disc[{}]", self.dim)
    }
    fn components<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        let w = (-norm_sq(p) + 1.0).powi(-2) * 4.0;
        diagonal(self.dim, w)
    }
}

/// Unit sphere in the stereographic chart, `4 (1 + |x|²)^{-2} δ`, on a
/// cube of the given half width.
#[derive(Clone, Debug)]
pub struct SpherePatch {
    dim: usize,
    region: Region,
}

impl SpherePatch {
    pub const DEFAULT_HALF_WIDTH: f64 = 10.0;

    pub fn new(dim: usize, half_width: f64) -> SpherePatch {
        SpherePatch {
            dim,
            region: Region::cube(dim, half_width),
        }
    }
}

impl MetricFormula for SpherePatch {
    fn dim(&self) -> usize {
        self.dim
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn label(&self) -> String {
        format!("sphere_patch[{}]", self.dim)
    }
    fn components<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        let w = (norm_sq(p) + 1.0).powi(-2) * 4.0;
        diagonal(self.dim, w)
    }
}

fn take_dim(params: &[f64]) -> Result<usize, MetricError> {
    let d = *params
        .first()
        .ok_or_else(|| MetricError::Invalid("missing dimension parameter".into()))?;
    if d < 1.0 || d.fract() != 0.0 || d > 16.0 {
        return Err(MetricError::Invalid(format!("bad dimension {d}")));
    }
    Ok(d as usize)
}

/// Builds a registry metric from its id and numeric parameters.
///
/// | id | parameters |
/// |----|------------|
/// | `euclidean` | `d` |
/// | `conformal_scalar` | `d, a_1..a_d, (amp, c_1..c_d, width)*` with `g = e^{2u}δ` |
/// | `poincare_disc` | `d` |
/// | `sphere_patch` | `d [, half_width]` |
/// | `custom_grid` | see [`CustomGrid::from_params`] |
pub fn build_metric(id: &str, params: &[f64]) -> Result<Arc<dyn ChartMetric>, MetricError> {
    let d = take_dim(params)?;
    let rest = &params[1..];
    match id {
        "euclidean" => {
            if !rest.is_empty() {
                return Err(MetricError::Invalid("euclidean takes only d".into()));
            }
            Ok(Arc::new(Euclidean::new(d)))
        }
        "conformal_scalar" => {
            if rest.len() < d || !(rest.len() - d).is_multiple_of(d + 2) {
                return Err(MetricError::Invalid(format!(
                    "conformal_scalar expects d + k·(d+2) values after d, got {}",
                    rest.len()
                )));
            }
            let linear = rest[..d].to_vec();
            let bumps = rest[d..]
                .chunks(d + 2)
                .map(|c| Bump {
                    amp: c[0],
                    center: c[1..=d].to_vec(),
                    width: c[d + 1],
                })
                .collect();
            Ok(Arc::new(ConformalScalar::new(
                d,
                ConformalForm::Exponential,
                linear,
                bumps,
                Region::Everywhere,
            )?))
        }
        "poincare_disc" => Ok(Arc::new(PoincareDisc::new(d))),
        "sphere_patch" => {
            let hw = match rest {
                [] => SpherePatch::DEFAULT_HALF_WIDTH,
                [hw] if *hw > 0.0 => *hw,
                _ => {
                    return Err(MetricError::Invalid(
                        "sphere_patch expects d [, half_width]".into(),
                    ))
                }
            };
            Ok(Arc::new(SpherePatch::new(d, hw)))
        }
        "custom_grid" => Ok(Arc::new(CustomGrid::from_params(d, rest)?)),
        other => Err(MetricError::Invalid(format!("unknown metric id {other:?}"))),
    }
}
