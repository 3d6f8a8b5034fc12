use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{exp_with_jacobian, metric_at, orthonormal_frame, ChartMetric, GeodesicOptions};
use crate::par;
use crate::qmc::{halton, radical_inverse};

/// Sample net for the injectivity floor: `directions` unit vectors times
/// `radii` equally spaced radii.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectivityNet {
    pub directions: usize,
    pub radii: usize,
}

impl Default for InjectivityNet {
    fn default() -> Self {
        InjectivityNet {
            directions: 512,
            radii: 16,
        }
    }
}

/// Deterministic low-discrepancy unit vectors in `R^d`. The first `n`
/// vectors of a longer request coincide with a request for `n`.
pub fn sphere_directions(d: usize, n: usize) -> Vec<Vec<f64>> {
    match d {
        1 => (0..n.min(2))
            .map(|k| vec![if k == 0 { 1.0 } else { -1.0 }])
            .collect(),
        2 => (0..n)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * radical_inverse(k as u64, 2);
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let pairs = d.div_ceil(2);
            (0..n)
                .map(|k| {
                    let u = halton(k as u64 + 1, 2 * pairs);
                    let mut z = Vec::with_capacity(2 * pairs);
                    for c in u.chunks(2) {
                        // Box–Muller on a low-discrepancy pair
                        let r = (-2.0 * (1.0 - c[0]).ln()).sqrt();
                        let a = 2.0 * std::f64::consts::PI * c[1];
                        z.push(r * a.cos());
                        z.push(r * a.sin());
                    }
                    z.truncate(d);
                    let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
                    z.iter().map(|x| x / n).collect()
                })
                .collect()
        }
    }
}

/// Smallest volume density of `exp_p` accepted as nonsingular.
const MIN_DENSITY: f64 = 1e-8;

/// Certified lower estimate of the injectivity radius at `p`.
///
/// Radii `r_max·k/radii` are tested in increasing order; a level passes when
/// every net point at that radius exponentiates inside the region with a
/// positive volume density and all images seen so far are pairwise
/// distinct. Returns the last passing radius, or 0.
pub fn injectivity_radius_floor(
    m: &dyn ChartMetric,
    p: &[f64],
    r_max: f64,
    net: &InjectivityNet,
    opts: &GeodesicOptions,
) -> f64 {
    let d = m.dim();
    let Ok(frame) = orthonormal_frame(m, p, &DMatrix::identity(d, d)) else {
        return 0.0;
    };
    let dirs: Vec<Vec<f64>> = sphere_directions(d, net.directions)
        .into_iter()
        .map(|u| frame.apply(&u))
        .collect();
    let mut images: Vec<Vec<f64>> = vec![p.to_vec()];
    let mut floor = 0.0;
    for k in 1..=net.radii {
        let r = r_max * k as f64 / net.radii as f64;
        let level = par::map_slice(&dirs, |u| {
            let v: Vec<f64> = u.iter().map(|x| x * r).collect();
            let (x, jac) = exp_with_jacobian(m, p, &v, opts).ok()?;
            let gx = metric_at(m, &x).ok()?;
            let density = (&jac * &frame.basis).determinant() * gx.determinant().sqrt();
            (density > MIN_DENSITY).then_some(x)
        });
        let Some(level) = level.into_iter().collect::<Option<Vec<_>>>() else {
            break;
        };
        images.extend(level);
        if has_collision(&images) {
            break;
        }
        floor = r;
    }
    floor
}

/// True if two of the points coincide to within rounding of the chart scale.
fn has_collision(points: &[Vec<f64>]) -> bool {
    let scale = points.iter().flatten().fold(1.0_f64, |a, x| a.max(x.abs()));
    let tol = 1e-9 * scale;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            if points[b][0] - points[a][0] > tol {
                break;
            }
            let dist = points[a]
                .iter()
                .zip(&points[b])
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            if dist <= tol {
                return true;
            }
        }
    }
    false
}
