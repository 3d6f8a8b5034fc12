use std::sync::{Arc, LazyLock};

use isojet::bergman::{
    bergman_metric, build_rule, kernel_from_rule, DomainFamily, QuadConfig, QuadKind,
    QuadratureRule,
};
use isojet::bergman::{BergmanMetric, KernelApprox};
use isojet::metric::{metric_at, ChartMetric, Mobius, PullbackMetric};
use nalgebra::Complex;
use proptest::prelude::*;

type C64 = Complex<f64>;

struct Disc {
    rule: QuadratureRule,
    kernel: Arc<KernelApprox>,
    metric: Arc<BergmanMetric>,
}

static DISC: LazyLock<Disc> = LazyLock::new(|| {
    let dom = DomainFamily::builtin("disc", &[1.0])
        .unwrap()
        .at(0.0)
        .unwrap();
    let rule = build_rule(&dom, &QuadConfig::default()).unwrap();
    let kernel = Arc::new(kernel_from_rule(1, 30, &rule).unwrap());
    let metric = Arc::new(bergman_metric(kernel.clone(), &dom, 0.05).unwrap());
    Disc {
        rule,
        kernel,
        metric,
    }
});

static BALL: LazyLock<(QuadratureRule, KernelApprox)> = LazyLock::new(|| {
    let dom = DomainFamily::builtin("ball", &[2.0])
        .unwrap()
        .at(0.0)
        .unwrap();
    let cfg = QuadConfig {
        kind: QuadKind::Halton,
        nodes: 1 << 14,
        ..Default::default()
    };
    let rule = build_rule(&dom, &cfg).unwrap();
    let kernel = kernel_from_rule(2, 4, &rule).unwrap();
    (rule, kernel)
});

fn complex_point(x: &[f64]) -> Vec<C64> {
    x.chunks(2).map(|c| C64::new(c[0], c[1])).collect()
}

fn monomial(z: &[C64], alpha: &[u32]) -> C64 {
    z.iter().zip(alpha).map(|(z, &a)| z.powu(a)).product()
}

/// `∫ K(z, w) w^α dV(w)` by the rule the kernel was built from.
fn reproduce(rule: &QuadratureRule, k: &KernelApprox, z: &[C64], alpha: &[u32]) -> C64 {
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(w, &wt)| {
            let w = complex_point(w);
            k.kernel(z, &w) * monomial(&w, alpha) * wt
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn disc_kernel_reproduces_polynomials(r in 0.0..0.6f64, phi in -3.2..3.2f64, k in 0u32..=30) {
        let z = [C64::from_polar(r, phi)];
        let got = reproduce(&DISC.rule, &DISC.kernel, &z, &[k]);
        let want = monomial(&z, &[k]);
        prop_assert!((got - want).norm() <= 1e-8 * want.norm().max(1e-3), "{got} vs {want}");
    }

    #[test]
    fn ball_kernel_reproduces_polynomials(x in prop::collection::vec(-0.4..0.4f64, 4), a in 0u32..=4, b in 0u32..=4) {
        prop_assume!(a + b <= 4);
        let (rule, k) = &*BALL;
        let z = complex_point(&x);
        let got = reproduce(rule, k, &z, &[a, b]);
        let want = monomial(&z, &[a, b]);
        prop_assert!((got - want).norm() <= 1e-8 * want.norm().max(1e-3), "{got} vs {want}");
    }

    /// Disc automorphisms are isometries of the truncated Bergman metric up
    /// to the truncation error.
    #[test]
    fn disc_metric_is_mobius_invariant(
        theta in -3.2..3.2f64,
        a in prop::array::uniform2(-0.2..0.2f64),
        r in 0.0..0.3f64,
        phi in -3.2..3.2f64,
    ) {
        let g: Arc<dyn ChartMetric> = DISC.metric.clone();
        let pulled = PullbackMetric::new(g.clone(), Arc::new(Mobius::new(theta, a)));
        let x = [r * phi.cos(), r * phi.sin()];
        let (m1, m0) = (metric_at(&pulled, &x).unwrap(), metric_at(g.as_ref(), &x).unwrap());
        let rel = (m1 - &m0).abs().max() / m0.abs().max();
        prop_assert!(rel < 5e-3, "relative gap {rel:e}");
    }

    #[test]
    fn complex_ellipsoids_are_strongly_pseudoconvex(a in 0.5..2.0f64, b in 0.5..2.0f64) {
        let dom = DomainFamily::builtin("ellipsoid", &[a, b, 2.0]).unwrap().at(0.0).unwrap();
        let report = dom.validate(64).unwrap();
        prop_assert!(report.min_levi.unwrap() > 0.0);
        prop_assert!(report.min_gradient > 0.0);
    }
}
