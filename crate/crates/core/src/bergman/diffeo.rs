use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::domain::{DomainFamily, DomainSpec};
use super::kernel::{kernel_from_rule, BergmanMetric};
use super::quadrature::{build_rule, transport_rule, QuadConfig, QuadKind, QuadratureRule};
use super::BergmanError;
use crate::jets::Jet;
use crate::metric::{ChartMap, ChartMetric, MetricError, MetricFamily, PullbackMetric};
use crate::scalar::{solve_linear, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffeoOptions {
    /// Width of the boundary collar in which the map differs from the
    /// identity.
    pub tube: f64,
    /// Boundary samples used to validate the map.
    pub samples: usize,
}

impl Default for DiffeoOptions {
    fn default() -> Self {
        DiffeoOptions {
            tube: 0.3,
            samples: 64,
        }
    }
}

/// `Φ(·, t)`: identity away from `∂Ω_{t₀}`; within the collar a point at
/// signed distance `δ` from its closest boundary point `π(z)` goes to
/// `F(π(z)) + δ·n_t`, where `F` slides `π(z)` along its normal line onto
/// `∂Ω_t` and `n_t` is the unit normal of `Ω_t` there. The two are blended
/// by a flat cutoff in `δ`.
#[derive(Clone, Debug)]
pub struct FamilyDiffeo {
    pub from: DomainSpec,
    pub to: DomainSpec,
    pub tube: f64,
}

fn norm<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(v[0].lift(0.0), |a, x| a + x.square()).sqrt()
}

/// `ψ(u)/(ψ(u) + ψ(1 − u))` with `ψ(u) = e^{−1/u}`, for `0 < u < 1`.
fn smoothstep<S: Scalar>(u: S) -> S {
    let a = (-u.recip()).exp();
    let b = (-(u.lift(1.0) - u).recip()).exp();
    a.clone() / (a + b)
}

impl FamilyDiffeo {
    /// Closest boundary point `y` and multiplier `λ` with `x = y + λ∇ρ(y)`.
    fn project_f64(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        let dom = &self.from;
        let g = dom.gradient(x);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2 == 0.0 {
            return None;
        }
        let r = dom.rho(x);
        let mut lam = r / g2;
        let mut y: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - lam * b).collect();
        for _ in 0..50 {
            let (step, res) = self.newton_step(x, &y, lam)?;
            for (yi, s) in y.iter_mut().zip(&step) {
                *yi += s;
            }
            lam += step[step.len() - 1];
            if res < 1e-15 {
                return Some((y, lam));
            }
        }
        let (_, res) = self.newton_step(x, &y, lam)?;
        (res < 1e-12).then_some((y, lam))
    }

    /// Newton step for `y − x + λ∇ρ(y) = 0, ρ(y) = 0` and the current
    /// residual.
    fn newton_step<S: Scalar>(&self, x: &[S], y: &[S], lam: S) -> Option<(Vec<S>, f64)> {
        let dom = &self.from;
        let n = x.len();
        let g = dom.gradient(y);
        let h = dom.hessian(y);
        let mut f: Vec<S> = (0..n)
            .map(|i| y[i].clone() - x[i].clone() + lam.clone() * g[i].clone())
            .collect();
        f.push(dom.rho(y));
        let res = f.iter().map(|v| v.value().abs()).fold(0.0, f64::max);
        let mut jac = vec![vec![x[0].lift(0.0); n + 1]; n + 1];
        for i in 0..n {
            for j in 0..n {
                jac[i][j] = lam.clone() * h[i][j].clone() + if i == j { 1.0 } else { 0.0 };
            }
            jac[i][n] = g[i].clone();
            jac[n][i] = g[i].clone();
        }
        let rhs: Vec<S> = f.into_iter().map(|v| -v).collect();
        Some((solve_linear(&jac, &rhs)?, res))
    }

    /// Signed shift along the normal line from `y` (a point of `∂Ω_{t₀}`)
    /// to `∂Ω_t`.
    fn transport_f64(&self, y: &[f64], n: &[f64]) -> Option<f64> {
        let mut s = 0.0;
        for _ in 0..60 {
            let (r, dr) = self.line_rho(y, n, s);
            if dr == 0.0 {
                return None;
            }
            let step = r / dr;
            s -= step;
            if step.abs() < 1e-15 * (1.0 + s.abs()) {
                return Some(s);
            }
        }
        (self.line_rho(y, n, s).0.abs() < 1e-12).then_some(s)
    }

    fn line_rho(&self, y: &[f64], n: &[f64], s: f64) -> (f64, f64) {
        let p: Vec<Jet> = y
            .iter()
            .zip(n)
            .map(|(a, b)| Jet::variable(1, 1, 0, s).scaled(*b) + *a)
            .collect();
        let r = self.to.rho(&p);
        (r.value(), r.coeffs()[1])
    }

    fn apply_generic<S: Scalar>(&self, x: &[S]) -> Option<Vec<S>> {
        let xf: Vec<f64> = x.iter().map(|v| v.value()).collect();
        let est = self.from.distance_estimate(&xf);
        if !(est.abs() < 3.0 * self.tube) {
            return Some(x.to_vec());
        }
        let (y0, lam0) = self.project_f64(&xf)?;
        let gn0 = norm(&self.from.gradient(&y0));
        let delta0 = lam0 * gn0;
        if delta0.abs() >= self.tube {
            return Some(x.to_vec());
        }
        // refine the projection in the jet ring; each step doubles the
        // number of correct orders
        let mut y: Vec<S> = y0.iter().map(|v| x[0].lift(*v)).collect();
        let mut lam = x[0].lift(lam0);
        for _ in 0..4 {
            let (step, _) = self.newton_step(x, &y, lam.clone())?;
            for (yi, s) in y.iter_mut().zip(&step) {
                *yi = yi.clone() + s.clone();
            }
            lam = lam + step[step.len() - 1].clone();
        }
        let g = self.from.gradient(&y);
        let gn = norm(&g);
        let delta = lam * gn.clone();
        let nrm: Vec<S> = g.iter().map(|v| v.clone() / gn.clone()).collect();
        let nf: Vec<f64> = nrm.iter().map(|v| v.value()).collect();
        let s0 = self.transport_f64(&y0, &nf)?;
        let mut s = x[0].lift(s0);
        for _ in 0..4 {
            let p: Vec<S> = y
                .iter()
                .zip(&nrm)
                .map(|(a, b)| a.clone() + s.clone() * b.clone())
                .collect();
            let r = self.to.rho(&p);
            let gr = self.to.gradient(&p);
            let dr = gr
                .iter()
                .zip(&nrm)
                .fold(x[0].lift(0.0), |acc, (a, b)| acc + a.clone() * b.clone());
            s = s - r / dr;
        }
        let f: Vec<S> = y
            .iter()
            .zip(&nrm)
            .map(|(a, b)| a.clone() + s.clone() * b.clone())
            .collect();
        let gt = self.to.gradient(&f);
        let gtn = norm(&gt);
        let a0 = delta0.abs();
        let chi = if a0 <= 0.5 * self.tube {
            x[0].lift(1.0)
        } else {
            let abs_delta = if delta0 >= 0.0 {
                delta.clone()
            } else {
                -delta.clone()
            };
            smoothstep((x[0].lift(self.tube) - abs_delta) / (0.5 * self.tube))
        };
        Some(
            x.iter()
                .zip(f.iter().zip(&gt))
                .map(|(xi, (fi, gi))| {
                    let target = fi.clone() + delta.clone() * gi.clone() / gtn.clone();
                    xi.clone() + chi.clone() * (target - xi.clone())
                })
                .collect(),
        )
    }

    /// Smallest Jacobian determinant over the given points.
    pub fn min_jacobian_det(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .map(|p| self.jacobian(p).determinant())
            .fold(f64::INFINITY, f64::min)
    }
}

impl ChartMap for FamilyDiffeo {
    fn dim(&self) -> usize {
        self.from.real_dim()
    }
    fn apply_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.apply_generic(x)
            .unwrap_or_else(|| x.iter().map(|j| j.constant_like(f64::NAN)).collect())
    }
    fn apply_f64(&self, x: &[f64]) -> Vec<f64> {
        self.apply_generic(x)
            .unwrap_or_else(|| vec![f64::NAN; x.len()])
    }
}

/// Builds and validates `Φ(·, t): Ω_{t₀} → Ω_t`.
pub fn family_diffeo(
    fam: &DomainFamily,
    t0: f64,
    t: f64,
    opts: &DiffeoOptions,
) -> Result<FamilyDiffeo, BergmanError> {
    if !(opts.tube > 0.0) {
        return Err(BergmanError::Invalid(
            "collar width must be positive".into(),
        ));
    }
    let phi = FamilyDiffeo {
        from: fam.at(t0)?,
        to: fam.at(t)?,
        tube: opts.tube,
    };
    let boundary = phi.from.boundary_samples(opts.samples)?;
    let mut probes = Vec::with_capacity(3 * boundary.len());
    for y in &boundary {
        let g = phi.from.gradient(y);
        let gn = norm(&g);
        let n: Vec<f64> = g.iter().map(|v| v / gn).collect();
        let s = phi
            .transport_f64(y, &n)
            .ok_or_else(|| BergmanError::ProjectionFailed(y.clone()))?;
        if s.abs() >= 0.5 * opts.tube {
            return Err(BergmanError::TubeExceeded {
                point: y.clone(),
                shift: s,
            });
        }
        for depth in [0.0, -0.4, -0.75] {
            probes.push(
                y.iter()
                    .zip(&n)
                    .map(|(a, b)| a + depth * opts.tube * b)
                    .collect::<Vec<f64>>(),
            );
        }
    }
    for p in &probes {
        let img = phi.apply_f64(p);
        if img.iter().any(|v| !v.is_finite()) {
            return Err(BergmanError::ProjectionFailed(p.clone()));
        }
    }
    let det = phi.min_jacobian_det(&probes);
    if !(det > 0.0) {
        return Err(BergmanError::Invalid(format!(
            "collar map folds (Jacobian determinant {det:.3e})"
        )));
    }
    Ok(phi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PullbackOptions {
    pub diffeo: DiffeoOptions,
    /// Forbidden boundary margin as a fraction of the diameter.
    pub margin_fraction: f64,
}

impl Default for PullbackOptions {
    fn default() -> Self {
        PullbackOptions {
            diffeo: DiffeoOptions::default(),
            margin_fraction: 0.05,
        }
    }
}

/// `t ↦ Φ(·, t)* g_t` on the fixed chart `Ω_{t₀}`, with `g_t` the
/// truncated Bergman metric of `Ω_t`. Metrics are cached per `t`.
pub struct BergmanFamily {
    fam: DomainFamily,
    t0: f64,
    degree: usize,
    quad: QuadConfig,
    opts: PullbackOptions,
    /// Halton rules are built once on `Ω_{t₀}` and carried along by `Φ`, so
    /// the kernels vary smoothly in `t`.
    base_rule: Option<QuadratureRule>,
    cache: Mutex<HashMap<u64, Arc<dyn ChartMetric>>>,
}

pub fn pullback_family(
    fam: &DomainFamily,
    t0: f64,
    degree: usize,
    quad: &QuadConfig,
    opts: &PullbackOptions,
) -> Result<BergmanFamily, BergmanError> {
    let base = fam.at(t0)?;
    base.validate(opts.diffeo.samples)?;
    let rule = build_rule(&base, quad)?;
    let base_rule = (rule.kind == QuadKind::Halton).then_some(rule);
    Ok(BergmanFamily {
        fam: fam.clone(),
        t0,
        degree,
        quad: *quad,
        opts: *opts,
        base_rule,
        cache: Mutex::new(HashMap::new()),
    })
}

impl BergmanFamily {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn domains(&self) -> &DomainFamily {
        &self.fam
    }

    fn build(&self, t: f64) -> Result<Arc<dyn ChartMetric>, BergmanError> {
        let dom = self.fam.at(t)?;
        let phi = family_diffeo(&self.fam, self.t0, t, &self.opts.diffeo)?;
        let rule = match &self.base_rule {
            Some(base) => transport_rule(base, &phi),
            None => build_rule(&dom, &self.quad)?,
        };
        let kernel = Arc::new(kernel_from_rule(dom.dim, self.degree, &rule)?);
        let diameter = dom.validate(self.opts.diffeo.samples)?.diameter;
        let g: Arc<dyn ChartMetric> = Arc::new(BergmanMetric::new(
            kernel,
            dom,
            self.opts.margin_fraction * diameter,
        ));
        Ok(Arc::new(PullbackMetric::new(g, Arc::new(phi))))
    }
}

impl MetricFamily for BergmanFamily {
    fn dim(&self) -> usize {
        2 * self.fam.dim
    }
    fn t_domain(&self) -> (f64, f64) {
        self.fam.t_domain
    }
    fn at(&self, t: f64) -> Result<Arc<dyn ChartMetric>, MetricError> {
        self.check_t(t)?;
        let key = t.to_bits();
        if let Some(m) = self.cache.lock().unwrap().get(&key) {
            return Ok(m.clone());
        }
        let m = self
            .build(t)
            .map_err(|e| MetricError::Invalid(e.to_string()))?;
        self.cache.lock().unwrap().insert(key, m.clone());
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RichardsonReport {
    pub t: f64,
    pub step: f64,
    /// Central differences of the packed components at steps `h` and `h/2`.
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    pub extrapolated: Vec<f64>,
    pub discrepancy: f64,
    pub passed: bool,
}

/// Checks that central differences of `t ↦ g_t(x)` at steps `h` and `h/2`
/// agree to `rel_tol` of the extrapolated derivative.
pub fn richardson_check(
    family: &dyn MetricFamily,
    x: &[f64],
    t: f64,
    h: f64,
    rel_tol: f64,
) -> Result<RichardsonReport, MetricError> {
    let at = |s: f64| -> Result<Vec<f64>, MetricError> {
        let m = family.at(s)?;
        if !m.region().contains(x) {
            return Err(MetricError::OutsideRegion(x.to_vec()));
        }
        m.eval_packed(x)
    };
    let diff = |step: f64| -> Result<Vec<f64>, MetricError> {
        let (a, b) = (at(t + step)?, at(t - step)?);
        Ok(a.iter()
            .zip(&b)
            .map(|(p, q)| (p - q) / (2.0 * step))
            .collect())
    };
    let coarse = diff(h)?;
    let fine = diff(0.5 * h)?;
    let extrapolated: Vec<f64> = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (4.0 * f - c) / 3.0)
        .collect();
    let discrepancy = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| (c - f).abs())
        .fold(0.0, f64::max);
    let scale = extrapolated
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1e-6);
    Ok(RichardsonReport {
        t,
        step: h,
        passed: discrepancy <= rel_tol * scale,
        coarse,
        fine,
        extrapolated,
        discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilating_disc_boundary_goes_to_the_dilated_circle() {
        let fam = DomainFamily::builtin("dilating_disc", &[]).unwrap();
        let phi = family_diffeo(&fam, 0.0, 0.21, &DiffeoOptions::default()).unwrap();
        for k in 0..12 {
            let th = 0.5 * k as f64;
            let img = phi.apply_f64(&[th.cos(), th.sin()]);
            assert!((img[0].hypot(img[1]) - 1.21f64.sqrt()).abs() < 1e-8);
        }
        // identity well inside the collar
        assert_eq!(phi.apply_f64(&[0.1, 0.2]), vec![0.1, 0.2]);
        assert!(phi.min_jacobian_det(&[vec![0.8, 0.1], vec![0.0, -0.9]]) > 0.0);
    }

    #[test]
    fn identity_at_base_parameter() {
        let fam = DomainFamily::builtin("bumped_disc", &[0.2, 1.0]).unwrap();
        let phi = family_diffeo(&fam, 0.3, 0.3, &DiffeoOptions::default()).unwrap();
        for p in [[0.7, 0.2], [-0.85, 0.1], [0.2, -0.9]] {
            let img = phi.apply_f64(&p);
            assert!((img[0] - p[0]).abs() < 1e-12 && (img[1] - p[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn large_motion_exceeds_the_collar() {
        let fam = DomainFamily::builtin("dilating_disc", &[]).unwrap();
        let r = family_diffeo(&fam, 0.0, 0.9, &DiffeoOptions::default());
        assert!(matches!(r, Err(BergmanError::TubeExceeded { .. })));
    }
}
