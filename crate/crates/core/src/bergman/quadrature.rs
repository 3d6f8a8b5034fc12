use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use super::domain::DomainSpec;
use super::BergmanError;
use crate::metric::ChartMap;
use crate::par;
use crate::qmc::halton;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadKind {
    /// Polar in `d = 1` when the domain is star-shaped, Halton otherwise.
    Auto,
    Halton,
    Polar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadConfig {
    pub kind: QuadKind,
    /// Halton candidates drawn in the bounding box.
    pub nodes: usize,
    /// Offset into the Halton sequence; different seeds give different,
    /// equally valid rules.
    pub seed: u64,
    /// Gauss–Legendre nodes per ray (polar rule).
    pub radial: usize,
    /// Equally spaced rays (polar rule).
    pub angular: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            kind: QuadKind::Auto,
            nodes: 1 << 18,
            seed: 0,
            radial: 48,
            angular: 128,
        }
    }
}

/// Weighted nodes in real coordinates `x1, y1, …`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub kind: QuadKind,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }
}

/// Low-discrepancy rejection sampling of the bounding box.
pub fn halton_rule(dom: &DomainSpec, n: usize, seed: u64) -> Result<QuadratureRule, BergmanError> {
    let dim = dom.real_dim();
    let w = dom.box_volume() / n as f64;
    // any u64 seed is accepted; the sequence index simply wraps
    let offset = seed.wrapping_mul(n as u64).wrapping_add(1);
    let candidates = par::map_range(n, |k| {
        let u = halton(offset.wrapping_add(k as u64), dim);
        let x: Vec<f64> = (0..dim)
            .map(|i| dom.lo[i] + u[i] * (dom.hi[i] - dom.lo[i]))
            .collect();
        dom.contains(&x).then_some(x)
    });
    let points: Vec<Vec<f64>> = candidates.into_iter().flatten().collect();
    if points.is_empty() {
        return Err(BergmanError::EmptyDomain);
    }
    let weights = vec![w; points.len()];
    Ok(QuadratureRule {
        points,
        weights,
        kind: QuadKind::Halton,
    })
}

/// Trapezoid in angle times Gauss–Legendre along each ray, for planar
/// domains star-shaped about an interior point. Spectrally accurate for
/// smooth boundaries.
pub fn polar_rule(
    dom: &DomainSpec,
    radial: usize,
    angular: usize,
) -> Result<QuadratureRule, BergmanError> {
    if dom.dim != 1 {
        return Err(BergmanError::Invalid(
            "the polar rule is planar only".into(),
        ));
    }
    if radial < 2 || angular < 3 {
        return Err(BergmanError::Invalid(
            "polar rule needs ≥ 2 radial and ≥ 3 angular nodes".into(),
        ));
    }
    let c = dom.interior_point()?;
    let gl = GaussLegendre::new(radial.try_into().expect("radial ≥ 2"));
    let rays = par::map_range(angular, |k| -> Result<Vec<(Vec<f64>, f64)>, BergmanError> {
        let th = std::f64::consts::TAU * k as f64 / angular as f64;
        let u = [th.cos(), th.sin()];
        let r = dom.ray_exit(&c, &u).ok_or(BergmanError::Unbounded)?;
        // the ray must not re-enter the domain
        let reach = dom.box_reach(&c, &u);
        if (1..64).any(|j| {
            let s = r + (reach - r) * j as f64 / 64.0;
            dom.rho(&[c[0] + u[0] * s, c[1] + u[1] * s]) < 0.0
        }) {
            return Err(BergmanError::NotStarShaped);
        }
        let dth = std::f64::consts::TAU / angular as f64;
        Ok(gl
            .iter()
            .map(|(x, w)| {
                let s = 0.5 * r * (x + 1.0);
                (
                    vec![c[0] + s * u[0], c[1] + s * u[1]],
                    0.5 * r * w * s * dth,
                )
            })
            .collect())
    });
    let mut points = Vec::with_capacity(radial * angular);
    let mut weights = Vec::with_capacity(radial * angular);
    for ray in rays {
        for (p, w) in ray? {
            points.push(p);
            weights.push(w);
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        kind: QuadKind::Polar,
    })
}

pub fn build_rule(dom: &DomainSpec, cfg: &QuadConfig) -> Result<QuadratureRule, BergmanError> {
    match cfg.kind {
        QuadKind::Halton => halton_rule(dom, cfg.nodes, cfg.seed),
        QuadKind::Polar => polar_rule(dom, cfg.radial, cfg.angular),
        QuadKind::Auto if dom.dim == 1 => match polar_rule(dom, cfg.radial, cfg.angular) {
            Err(BergmanError::NotStarShaped) => halton_rule(dom, cfg.nodes, cfg.seed),
            other => other,
        },
        QuadKind::Auto => halton_rule(dom, cfg.nodes, cfg.seed),
    }
}

/// The rule moved by a diffeomorphism: nodes `Φ(x)`, weights `w·|det DΦ(x)|`.
pub fn transport_rule(rule: &QuadratureRule, map: &dyn ChartMap) -> QuadratureRule {
    let moved = par::map_slice(&rule.points, |p| {
        let j = map.jacobian(p);
        (map.apply_f64(p), j.determinant().abs())
    });
    let (points, dets): (Vec<_>, Vec<_>) = moved.into_iter().unzip();
    QuadratureRule {
        points,
        weights: rule.weights.iter().zip(dets).map(|(w, d)| w * d).collect(),
        kind: rule.kind,
    }
}
