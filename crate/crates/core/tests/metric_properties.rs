mod common;

use std::sync::Arc;

use isojet::metric::{
    exp_map, geodesic_samples, norm_at, orthonormal_frame, ChartMetric, FnFamily, GeodesicOptions,
    MetricFamily,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.35..0.35f64, 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn geodesic_speed_is_conserved(p in point(), v in prop::collection::vec(-0.3..0.3f64, 2), which in 0usize..4) {
        let (name, m) = common::planar_metrics().swap_remove(which);
        let opts = GeodesicOptions::default();
        let s: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        let states = geodesic_samples(m.as_ref(), &p, &v, &s, &opts).unwrap();
        let speed0 = norm_at(m.as_ref(), &p, &v).unwrap();
        for st in &states {
            let speed = norm_at(m.as_ref(), &st.position, &st.velocity).unwrap();
            prop_assert!((speed - speed0).abs() < 1e-8, "{name}: {speed} vs {speed0} at s = {}", st.s);
        }
    }

    #[test]
    fn orthonormal_frames_have_identity_gram(p in point(), seed in prop::collection::vec(-1.0..1.0f64, 4), which in 0usize..4) {
        let (_, m) = common::planar_metrics().swap_remove(which);
        let seed = DMatrix::from_row_slice(2, 2, &seed) + DMatrix::identity(2, 2) * 2.5;
        let f = orthonormal_frame(m.as_ref(), &p, &seed).unwrap();
        prop_assert!(f.orthonormality_defect(m.as_ref()).unwrap() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Central differences in `t` of `exp_{g_t}(p, v)` at steps `h, h/2, h/4`
    /// shrink by the factor 4 of a second-order scheme, as they must when
    /// the map is smooth in `t`.
    #[test]
    fn exp_map_is_smooth_in_t(p in point(), v in prop::collection::vec(-0.3..0.3f64, 2), t in -0.5..0.5f64) {
        let fam = FnFamily::new(2, (-1.0, 1.0), |t| Ok(common::bumpy_at(t)));
        let opts = GeodesicOptions::default();
        let at = |t: f64| -> Vec<f64> {
            let g: Arc<dyn ChartMetric> = fam.at(t).unwrap();
            exp_map(g.as_ref(), &p, &v, &opts).unwrap()
        };
        let d = |h: f64| -> Vec<f64> {
            let (a, b) = (at(t + h), at(t - h));
            a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect()
        };
        let h = 0.04;
        let (d1, d2, d3) = (d(h), d(h / 2.0), d(h / 4.0));
        for i in 0..2 {
            let (e1, e2) = (d1[i] - d2[i], d2[i] - d3[i]);
            if e2.abs() > 1e-8 {
                let ratio = e1 / e2;
                prop_assert!((ratio - 4.0).abs() < 0.5, "component {i}: ratio {ratio}, e2 {e2:e}");
            } else {
                prop_assert!(e1.abs() < 1e-7);
            }
        }
    }
}
