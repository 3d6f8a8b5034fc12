use std::sync::Arc;

use nalgebra::DMatrix;

use super::config::{BumpDecl, DomainDecl, FamilyDecl, MapDecl, Scenario, TargetDecl};
use super::ScenarioError;
use crate::bergman::{pullback_family, DomainFamily, QuadConfig};
use crate::metric::{
    build_metric, Bump, ChartMap, ChartMetric, ConformalForm, ConformalScalar, FnFamily, LinearMap,
    MetricError, MetricFamily, Mobius, PullbackMetric, Region,
};

/// A chart map with its inverse; `linear` is set for affine maps.
#[derive(Clone)]
pub struct MapPair {
    pub forward: Arc<dyn ChartMap>,
    pub inverse: Arc<dyn ChartMap>,
    pub linear: Option<LinearMap>,
}

impl MapPair {
    fn affine(id: &str, m: LinearMap) -> Result<MapPair, ScenarioError> {
        let inv = m
            .inverse()
            .ok_or_else(|| ScenarioError::invalid(id, "map matrix is singular"))?;
        Ok(MapPair {
            forward: Arc::new(m.clone()),
            inverse: Arc::new(inv),
            linear: Some(m),
        })
    }
}

pub fn build_map(id: &str, decl: &MapDecl, dim: usize) -> Result<MapPair, ScenarioError> {
    let planar = |what: &str| {
        if dim == 2 {
            Ok(())
        } else {
            Err(ScenarioError::invalid(
                id,
                format!("{what} maps need dimension 2, got {dim}"),
            ))
        }
    };
    match decl {
        MapDecl::Identity => MapPair::affine(id, LinearMap::linear(DMatrix::identity(dim, dim))),
        MapDecl::Rotation { angle } => {
            planar("rotation")?;
            MapPair::affine(id, LinearMap::rotation2(*angle))
        }
        MapDecl::Reflection { axis } => {
            let k = axis.unwrap_or(dim.saturating_sub(1));
            if k >= dim {
                return Err(ScenarioError::invalid(
                    id,
                    format!("reflection axis {k} out of range"),
                ));
            }
            let mut a = DMatrix::identity(dim, dim);
            a[(k, k)] = -1.0;
            MapPair::affine(id, LinearMap::linear(a))
        }
        MapDecl::Linear { matrix, offset } => {
            if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                return Err(ScenarioError::invalid(
                    id,
                    format!("map matrix must be {dim}×{dim}"),
                ));
            }
            let b = match offset.len() {
                0 => vec![0.0; dim],
                n if n == dim => offset.clone(),
                _ => {
                    return Err(ScenarioError::invalid(
                        id,
                        "map offset has the wrong length",
                    ))
                }
            };
            let a = DMatrix::from_fn(dim, dim, |i, j| matrix[i][j]);
            MapPair::affine(id, LinearMap::new(a, b))
        }
        MapDecl::Mobius { theta, a } => {
            planar("Möbius")?;
            if !(a[0] * a[0] + a[1] * a[1] < 1.0) {
                return Err(ScenarioError::invalid(
                    id,
                    "Möbius parameter must lie in the unit disc",
                ));
            }
            let m = Mobius::new(*theta, *a);
            Ok(MapPair {
                forward: Arc::new(m),
                inverse: Arc::new(m.inverse()),
                linear: None,
            })
        }
    }
}

/// The target metric of a comparison and, for map targets, the map that
/// carries the source onto it.
pub fn build_target_metric(
    id: &str,
    source: Arc<dyn ChartMetric>,
    decl: &TargetDecl,
) -> Result<(Arc<dyn ChartMetric>, Option<MapPair>), ScenarioError> {
    match (&decl.map, &decl.metric) {
        (Some(map), None) => {
            let pair = build_map(id, map, source.dim())?;
            let gh: Arc<dyn ChartMetric> =
                Arc::new(PullbackMetric::pushforward(source, pair.inverse.clone()));
            Ok((gh, Some(pair)))
        }
        (None, Some(m)) => {
            let gh = build_metric(&m.id, &m.params)?;
            if gh.dim() != source.dim() {
                return Err(ScenarioError::invalid(
                    id,
                    "source and target dimensions differ",
                ));
            }
            Ok((gh, None))
        }
        _ => Err(ScenarioError::invalid(
            id,
            "target needs exactly one of `map` or `metric`",
        )),
    }
}

pub fn build_domain(id: &str, decl: &DomainDecl) -> Result<DomainFamily, ScenarioError> {
    let fam = match (&decl.builtin, &decl.rho) {
        (Some(name), None) => DomainFamily::builtin(name, &decl.params)?,
        (None, Some(rho)) => {
            let dim = decl.dim.unwrap_or(1);
            let hw = decl.half_width;
            match decl.t_domain {
                Some([a, b]) => DomainFamily::from_expr(
                    rho,
                    dim,
                    (a, b),
                    vec![-hw; 2 * dim],
                    vec![hw; 2 * dim],
                )?,
                None => DomainFamily::fixed(rho, dim, hw)?,
            }
        }
        _ => {
            return Err(ScenarioError::invalid(
                id,
                "domain needs exactly one of `builtin` or `rho`",
            ))
        }
    };
    Ok(fam)
}

fn conformal_at(
    linear: &[f64],
    linear_rate: &[f64],
    bumps: &[BumpDecl],
    form: ConformalForm,
    half_width: f64,
    t: f64,
) -> Result<Arc<dyn ChartMetric>, MetricError> {
    let d = linear.len();
    let lin: Vec<f64> = (0..d)
        .map(|i| linear[i] + linear_rate.get(i).copied().unwrap_or(0.0) * t)
        .collect();
    let bumps = bumps
        .iter()
        .map(|b| Bump {
            amp: b.amp + b.amp_rate * t + b.amp_quad * t * t,
            center: (0..b.center.len())
                .map(|i| b.center[i] + b.center_rate.get(i).copied().unwrap_or(0.0) * t)
                .collect(),
            width: b.width,
        })
        .collect();
    Ok(Arc::new(ConformalScalar::new(
        d,
        form,
        lin,
        bumps,
        Region::cube(d, half_width),
    )?))
}

type FamilyPair = (Arc<dyn MetricFamily>, Arc<dyn MetricFamily>, MapPair);

/// Source and target families of a tracking scenario. The target is the
/// image of the source under `target.map`: a pushforward for formula
/// families, the image domain family for Bergman families.
pub fn build_family_pair(s: &Scenario, seed: u64) -> Result<FamilyPair, ScenarioError> {
    let id = s.id.as_str();
    let fam = s
        .family
        .as_ref()
        .ok_or_else(|| ScenarioError::invalid(id, "missing [scenario.family]"))?;
    let map = s
        .target
        .as_ref()
        .and_then(|t| t.map.as_ref())
        .ok_or_else(|| ScenarioError::invalid(id, "tracking needs target.map"))?;
    match fam {
        FamilyDecl::Conformal {
            linear,
            linear_rate,
            bumps,
            additive,
            half_width,
            t_domain,
        } => {
            let d = linear.len();
            if d == 0 || bumps.iter().any(|b| b.center.len() != d) {
                return Err(ScenarioError::invalid(
                    id,
                    "family dimensions are inconsistent",
                ));
            }
            let form = if *additive {
                ConformalForm::Additive
            } else {
                ConformalForm::Exponential
            };
            let pair = build_map(id, map, d)?;
            let (linear, linear_rate, bumps, hw) = (
                linear.clone(),
                linear_rate.clone(),
                bumps.clone(),
                *half_width,
            );
            let build = move |t: f64| conformal_at(&linear, &linear_rate, &bumps, form, hw, t);
            // fail early on bad parameters
            build(t_domain[0])?;
            let build = Arc::new(build);
            let b2 = build.clone();
            let inverse = pair.inverse.clone();
            let domain = (t_domain[0], t_domain[1]);
            let g = FnFamily::new(d, domain, move |t| build(t));
            let gh = FnFamily::new(d, domain, move |t| {
                Ok(
                    Arc::new(PullbackMetric::pushforward(b2(t)?, inverse.clone()))
                        as Arc<dyn ChartMetric>,
                )
            });
            Ok((Arc::new(g), Arc::new(gh), pair))
        }
        FamilyDecl::Bergman {
            domain,
            chart_t,
            degree,
            quad,
            pullback,
        } => {
            let dom = build_domain(id, domain)?;
            let pair = build_map(id, map, 2 * dom.dim)?;
            let linear = pair
                .linear
                .as_ref()
                .filter(|l| l.b.iter().all(|b| *b == 0.0))
                .ok_or_else(|| {
                    ScenarioError::invalid(id, "Bergman families move only under linear maps")
                })?;
            let a_inv = linear.a.clone().try_inverse().expect("checked invertible");
            let image = dom.transformed(&a_inv, "image");
            let degree = degree.unwrap_or(if dom.dim == 1 { 20 } else { 8 });
            let quad = QuadConfig {
                seed: quad.seed.wrapping_add(seed),
                ..*quad
            };
            let g = pullback_family(&dom, *chart_t, degree, &quad, pullback)?;
            let gh = pullback_family(&image, *chart_t, degree, &quad, pullback)?;
            Ok((Arc::new(g), Arc::new(gh), pair))
        }
    }
}
