#![allow(dead_code)]

use std::sync::Arc;

use isojet::metric::{
    Bump, ChartMetric, ConformalForm, ConformalScalar, Euclidean, PoincareDisc, Region, SpherePatch,
};

/// `e^{2u} δ` on `[−2, 2]²` with `u` linear plus two Gaussian bumps: no
/// local symmetries.
pub fn bumpy() -> Arc<dyn ChartMetric> {
    bumpy_at(0.0)
}

/// A smooth family through [`bumpy`]: one bump grows and the other drifts.
pub fn bumpy_at(t: f64) -> Arc<dyn ChartMetric> {
    Arc::new(
        ConformalScalar::new(
            2,
            ConformalForm::Exponential,
            vec![0.1 * t, 0.05],
            vec![
                Bump {
                    amp: 0.3 * (1.0 + t * t),
                    center: vec![0.2, -0.1],
                    width: 0.5,
                },
                Bump {
                    amp: -0.2,
                    center: vec![-0.3, 0.25 + 0.1 * t],
                    width: 0.4,
                },
            ],
            Region::cube(2, 2.0),
        )
        .unwrap(),
    )
}

/// The planar built-ins, by name.
pub fn planar_metrics() -> Vec<(&'static str, Arc<dyn ChartMetric>)> {
    vec![
        ("euclidean", Arc::new(Euclidean::new(2))),
        ("poincare", Arc::new(PoincareDisc::new(2))),
        (
            "sphere",
            Arc::new(SpherePatch::new(2, SpherePatch::DEFAULT_HALF_WIDTH)),
        ),
        ("bumpy", bumpy()),
    ]
}
