use std::sync::Arc;

use nalgebra::DMatrix;

use crate::bergman::expr::flat_f64;
use crate::metric::{
    Bump, ChartMetric, ConformalForm, ConformalScalar, FnFamily, LinearMap, MetricError,
    PullbackMetric, Region,
};

/// `e^{−1/|t|}`, extended by `0` at the origin. Every derivative vanishes
/// at `t = 0`.
pub fn flip_profile(t: f64) -> f64 {
    flat_f64(t)
}

/// Two bumps with no symmetry under `y ↦ −y` or any other rigid motion.
pub fn default_flip_bumps() -> Vec<Bump> {
    vec![
        Bump {
            amp: 1.0,
            center: vec![0.2, 0.3],
            width: 0.35,
        },
        Bump {
            amp: -0.6,
            center: vec![-0.25, 0.1],
            width: 0.3,
        },
    ]
}

/// A source family and a target that agrees with it for `t ≥ 0` and with
/// its reflection for `t < 0`. Both are smooth in `t`, but the isometries
/// between them are the identity on one side and the reflection on the
/// other.
pub struct FlipFamily {
    pub source: FnFamily,
    pub target: FnFamily,
    /// `diag(1, −1)`.
    pub reflection: LinearMap,
    pub amplitude: f64,
}

const T_DOMAIN: (f64, f64) = (-1.0, 1.0);
const HALF_WIDTH: f64 = 2.0;

/// `g_t = (1 + A·e^{−1/|t|}·Σ bᵢ) δ` on `[−2, 2]²`, with target
/// `ĝ_t = g_t` for `t ≥ 0` and `R_* g_t` for `t < 0`.
pub fn build_flip_family(amplitude: f64, bumps: &[Bump]) -> Result<FlipFamily, MetricError> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(MetricError::Invalid(format!(
            "amplitude must be non-negative, got {amplitude}"
        )));
    }
    if bumps.iter().any(|b| b.center.len() != 2) {
        return Err(MetricError::Invalid("flip bumps must be planar".into()));
    }
    // the profile peaks at e^{-1} on [-1, 1]; only negative bumps can push
    // the conformal factor toward zero
    let peak = flip_profile(1.0);
    let worst: f64 = bumps.iter().map(|b| b.amp.min(0.0)).sum();
    if !(1.0 + amplitude * peak * worst > 0.0) {
        return Err(MetricError::Invalid(format!(
            "positivity violated: conformal factor can reach {:.3e}",
            1.0 + amplitude * peak * worst
        )));
    }
    let bumps = bumps.to_vec();
    let metric = Arc::new(move |t: f64| -> Result<Arc<dyn ChartMetric>, MetricError> {
        let s = amplitude * flip_profile(t);
        let scaled = bumps
            .iter()
            .map(|b| Bump {
                amp: s * b.amp,
                ..b.clone()
            })
            .collect();
        Ok(Arc::new(ConformalScalar::new(
            2,
            ConformalForm::Additive,
            vec![0.0, 0.0],
            scaled,
            Region::cube(2, HALF_WIDTH),
        )?))
    });
    let reflection = LinearMap::linear(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    let r: Arc<LinearMap> = Arc::new(reflection.clone());
    let m2 = metric.clone();
    let source = FnFamily::new(2, T_DOMAIN, move |t| metric(t));
    let target = FnFamily::new(2, T_DOMAIN, move |t| {
        let g = m2(t)?;
        if t >= 0.0 {
            Ok(g)
        } else {
            // R is an involution, so it is its own inverse
            Ok(Arc::new(PullbackMetric::pushforward(g, r.clone())) as Arc<dyn ChartMetric>)
        }
    });
    Ok(FlipFamily {
        source,
        target,
        reflection,
        amplitude,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{metric_at, MetricFamily};

    #[test]
    fn profile_is_flat_at_zero() {
        // one-sided forward differences from each side; the profile is
        // even, so centred ones would vanish trivially
        for h in [0.01, 0.005, -0.01, -0.005] {
            let f = |k: f64| flip_profile(k * h);
            let d1 = (f(1.0) - f(0.0)) / h;
            let d2 = (f(2.0) - 2.0 * f(1.0) + f(0.0)) / (h * h);
            let d3 = (f(3.0) - 3.0 * f(2.0) + 3.0 * f(1.0) - f(0.0)) / (h * h * h);
            for (k, d) in [d1, d2, d3].into_iter().enumerate() {
                assert!(d.abs() < 1e-6, "derivative {} at step {h}: {d:e}", k + 1);
            }
        }
        // the same stencils do see a merely C^2 profile
        let g = |t: f64| t.abs().powi(3);
        let h = 0.01;
        assert!(
            ((g(3.0 * h) - 3.0 * g(2.0 * h) + 3.0 * g(h) - g(0.0)) / h.powi(3) - 6.0).abs() < 1e-6
        );
        assert_eq!(flip_profile(0.0), 0.0);
        assert!((flip_profile(-0.5) - (-2.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn target_agrees_for_positive_t_and_reflects_for_negative() {
        let f = build_flip_family(0.5, &default_flip_bumps()).unwrap();
        let x = [0.2, 0.3];
        let xr = [0.2, -0.3];
        let g =
            |fam: &FnFamily, t: f64, p: &[f64]| metric_at(fam.at(t).unwrap().as_ref(), p).unwrap();
        assert_eq!(g(&f.source, 0.5, &x), g(&f.target, 0.5, &x));
        let diff = (g(&f.source, -0.5, &x) - g(&f.target, -0.5, &xr))
            .abs()
            .max();
        assert!(diff < 1e-14);
        // at t = 0 both are flat
        assert_eq!(g(&f.target, 0.0, &x), DMatrix::identity(2, 2));
    }

    #[test]
    fn rejects_non_positive_metrics() {
        let deep = vec![Bump {
            amp: -10.0,
            center: vec![0.0, 0.0],
            width: 0.3,
        }];
        assert!(build_flip_family(1.0, &deep).is_err());
        assert!(build_flip_family(0.0, &deep).is_ok());
        assert!(build_flip_family(-1.0, &[]).is_err());
    }
}
