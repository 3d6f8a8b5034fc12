mod common;

use std::sync::Arc;

use isojet::invariants::{AtlasOptions, BallAtlas, InvariantOptions};
use isojet::isometry::{
    check_atlas_isometry, propagate_one_jet, LocalIsometry, OneJet, PropagationOptions,
};
use isojet::metric::{
    orthonormal_frame, ChartMap, ChartMetric, Frame, LinearMap, Mobius, PoincareDisc,
    PullbackMetric,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// `ĝ = F_* g` for a rigid motion `F` of the bumpy metric.
fn rigid(theta: f64, b: [f64; 2]) -> (Arc<dyn ChartMetric>, Arc<dyn ChartMetric>, LinearMap) {
    let g = common::bumpy();
    let f = LinearMap::new(LinearMap::rotation2(theta).a, b.to_vec());
    let finv = Arc::new(f.inverse().unwrap());
    let gh: Arc<dyn ChartMetric> = Arc::new(PullbackMetric::pushforward(g.clone(), finv));
    (g, gh, f)
}

fn seed(f: &LinearMap, p: &[f64]) -> OneJet {
    OneJet::new(p.to_vec(), f.apply_f64(p), f.a.clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    /// A matched pair of atlases glues to maps that agree on overlaps.
    #[test]
    fn matched_atlases_agree_on_overlaps(theta in -3.0..3.0f64, a in prop::array::uniform2(-0.3..0.3f64)) {
        let g: Arc<dyn ChartMetric> = Arc::new(PoincareDisc::new(2));
        let m = Arc::new(Mobius::new(theta, a));
        let gh: Arc<dyn ChartMetric> = Arc::new(PullbackMetric::pushforward(g.clone(), Arc::new(m.inverse())));
        let pts = [[0.0, 0.0], [0.15, 0.0], [0.0, 0.15]];
        let id = DMatrix::identity(2, 2);
        let frames: Vec<Frame> = pts.iter().map(|p| orthonormal_frame(g.as_ref(), p, &id).unwrap()).collect();
        let images: Vec<Frame> = frames
            .iter()
            .map(|f| {
                let q = m.apply_f64(&f.point);
                orthonormal_frame(gh.as_ref(), &q, &(m.jacobian(&f.point) * &f.basis)).unwrap()
            })
            .collect();
        let opts = AtlasOptions::default();
        let atlas = BallAtlas::build(g.as_ref(), frames, 0.2, &opts).unwrap();
        let target = BallAtlas::build(gh.as_ref(), images, 0.2, &opts).unwrap();
        let tol = 1e-6;
        let verdict = check_atlas_isometry(g.as_ref(), gh.as_ref(), &atlas, &target, 3, tol, &InvariantOptions::default()).unwrap();
        prop_assert!(verdict.is_match());
        let local = LocalIsometry::new(g, gh, atlas, target).unwrap();
        let samples = local.overlap_samples(8).unwrap();
        prop_assert!(!samples.is_empty());
        prop_assert!(local.overlap_discrepancy(&samples).unwrap() < 10.0 * tol);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Two routes between the same endpoints carry the seed to the same
    /// 1-jet.
    #[test]
    fn continuation_does_not_depend_on_the_route(
        theta in -3.0..3.0f64,
        b in prop::array::uniform2(-0.5..0.5f64),
        end in prop::array::uniform2(-0.5..0.5f64),
        via in prop::array::uniform2(-0.5..0.5f64),
    ) {
        let (g, gh, f) = rigid(theta, b);
        let j0 = seed(&f, &[0.0, 0.0]);
        let opts = PropagationOptions::default();
        let direct = propagate_one_jet(g.as_ref(), gh.as_ref(), &j0, &[vec![0.0, 0.0], end.to_vec()], &opts).unwrap();
        let bent = propagate_one_jet(g.as_ref(), gh.as_ref(), &j0, &[vec![0.0, 0.0], via.to_vec(), end.to_vec()], &opts).unwrap();
        let (x, y) = (direct.last().unwrap(), bent.last().unwrap());
        let dq = x.q.iter().zip(&y.q).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        let dd = (&x.d - &y.d).abs().max();
        prop_assert!(dq < 1e-6 && dd < 1e-6, "q gap {dq:e}, D gap {dd:e}");
    }

    /// Every node of a continuation is a linear isometry `Dᵀ ĝ(q) D = g(p)`;
    /// propagation itself rejects any step whose drift before
    /// re-projection exceeds `drift_tol = 1e-6`.
    #[test]
    fn continuation_stays_orthogonal(theta in -3.0..3.0f64, b in prop::array::uniform2(-0.5..0.5f64), path in prop::collection::vec(prop::array::uniform2(-0.6..0.6f64), 1..4)) {
        let (g, gh, f) = rigid(theta, b);
        let j0 = seed(&f, &[0.0, 0.0]);
        let mut poly = vec![vec![0.0, 0.0]];
        poly.extend(path.iter().map(|p| p.to_vec()));
        let chain = propagate_one_jet(g.as_ref(), gh.as_ref(), &j0, &poly, &PropagationOptions::default()).unwrap();
        for j in &chain {
            prop_assert!(j.defect(g.as_ref(), gh.as_ref()).unwrap() < 1e-6);
        }
    }
}
