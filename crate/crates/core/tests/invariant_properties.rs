mod common;

use std::sync::Arc;

use isojet::invariants::{s_invariant, t_invariant, InvariantOptions};
use isojet::jets::{jet_compose, jet_truncate};
use isojet::metric::{
    orthonormal_frame, unpack_sym, ChartMap, ChartMetric, Frame, LinearMap, Mobius, PoincareDisc,
    PullbackMetric,
};
use isojet::{Jet, JetMap};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn max_diff(a: &Jet, b: &Jet) -> f64 {
    a.coeffs()
        .iter()
        .zip(b.coeffs())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn rotation(theta: f64) -> DMatrix<f64> {
    LinearMap::rotation2(theta).a
}

/// `f*g` with its frame: `β` orthonormal for `f*g` at `p` corresponds to
/// `dF_p β` at `F(p)` for `g`.
fn pushed(f: &dyn ChartMap, frame: &Frame) -> Frame {
    Frame::new(
        f.apply_f64(&frame.point),
        f.jacobian(&frame.point) * &frame.basis,
    )
}

/// A source metric, a map, and `f*g`.
fn pair(
    kind: usize,
    theta: f64,
    a: [f64; 2],
) -> (Arc<dyn ChartMetric>, Arc<dyn ChartMap>, PullbackMetric) {
    let (g, f): (Arc<dyn ChartMetric>, Arc<dyn ChartMap>) = if kind == 0 {
        (
            Arc::new(PoincareDisc::new(2)),
            Arc::new(Mobius::new(theta, a)),
        )
    } else {
        (
            common::bumpy(),
            Arc::new(LinearMap::new(rotation(theta), a.to_vec())),
        )
    };
    let fg = PullbackMetric::new(g.clone(), f.clone());
    (g, f, fg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn invariants_are_isometry_invariant(
        kind in 0usize..2,
        theta in -3.0..3.0f64,
        a in prop::array::uniform2(-0.25..0.25f64),
        p in prop::array::uniform2(-0.2..0.2f64),
        step in prop::array::uniform2(-0.15..0.15f64),
        spin in -1.0..1.0f64,
    ) {
        let (g, f, fg) = pair(kind, theta, a);
        let inv = InvariantOptions::default();
        let b1 = orthonormal_frame(&fg, &p, &rotation(spin)).unwrap();
        let p2 = [p[0] + step[0], p[1] + step[1]];
        let b2 = orthonormal_frame(&fg, &p2, &DMatrix::identity(2, 2)).unwrap();
        let (c1, c2) = (pushed(f.as_ref(), &b1), pushed(f.as_ref(), &b2));
        let s = s_invariant(&fg, &b1, 3, &inv).unwrap();
        let sh = s_invariant(g.as_ref(), &c1, 3, &inv).unwrap();
        prop_assert!(max_diff(&s, &sh) < 1e-7, "S gap {:e}", max_diff(&s, &sh));
        let t = t_invariant(&fg, &b1, &b2, 3, &inv).unwrap();
        let th = t_invariant(g.as_ref(), &c1, &c2, 3, &inv).unwrap();
        prop_assert!(max_diff(&t, &th) < 1e-7, "T gap {:e}", max_diff(&t, &th));
    }

    /// `S_{βQ}(x) = Qᵀ S_β(Qx) Q`, compared coefficient by coefficient.
    #[test]
    fn rotating_the_frame_substitutes_the_variables(
        which in 0usize..4,
        p in prop::array::uniform2(-0.3..0.3f64),
        phi in -3.0..3.0f64,
        reflect in any::<bool>(),
    ) {
        let (name, m) = common::planar_metrics().swap_remove(which);
        let inv = InvariantOptions::default();
        let mut q = rotation(phi);
        if reflect {
            q.column_mut(1).neg_mut();
        }
        let beta = orthonormal_frame(m.as_ref(), &p, &DMatrix::identity(2, 2)).unwrap();
        let rotated = Frame::new(beta.point.clone(), &beta.basis * &q);
        let s = s_invariant(m.as_ref(), &beta, 2, &inv).unwrap();
        let sq = s_invariant(m.as_ref(), &rotated, 2, &inv).unwrap();
        // S_β(Qx) as a jet, then conjugate each coefficient matrix
        let substituted = jet_compose(&JetMap::from_jet(&s), &JetMap::affine(&q, &[0.0, 0.0], 2), false)
            .unwrap()
            .to_jet();
        let mut want = substituted.clone();
        let n = substituted.basis().len();
        for r in 0..n {
            let c = unpack_sym(substituted.coeff_at_rank(r), 2);
            let c = q.transpose() * c * &q;
            want.coeffs_mut()[3 * r..3 * r + 3].copy_from_slice(&[c[(0, 0)], c[(0, 1)], c[(1, 1)]]);
        }
        prop_assert!(max_diff(&sq, &want) < 1e-9, "{name}: {:e}", max_diff(&sq, &want));
    }

    #[test]
    fn lower_degrees_are_truncations(which in 0usize..4, p in prop::array::uniform2(-0.3..0.3f64), n_low in 0usize..4) {
        let (name, m) = common::planar_metrics().swap_remove(which);
        let inv = InvariantOptions::default();
        let beta = orthonormal_frame(m.as_ref(), &p, &DMatrix::identity(2, 2)).unwrap();
        let high = s_invariant(m.as_ref(), &beta, 4, &inv).unwrap();
        let low = s_invariant(m.as_ref(), &beta, n_low, &inv).unwrap();
        let cut = jet_truncate(&high, n_low).unwrap();
        prop_assert!(max_diff(&cut, &low) < 1e-9, "{name}: {:e}", max_diff(&cut, &low));
    }
}
