use isojet::jets::{jet_compose, jet_invert, jet_truncate, JetBasis, DEFAULT_COND_BOUND};
use isojet::{Jet, JetMap};
use proptest::prelude::*;

/// A map `R^d → R^d` with zero constant term, linear part `I + 0.3·A` with
/// `|A| ≤ 1` entrywise, and arbitrary higher terms.
fn arb_map() -> impl Strategy<Value = JetMap> {
    (1usize..=4, 1usize..=4).prop_flat_map(|(d, n)| map_of(d, n))
}

fn map_of(d: usize, n: usize) -> impl Strategy<Value = JetMap> {
    let len = JetBasis::get(d, n).len();
    prop::collection::vec(-1.0..1.0f64, d * len).prop_map(move |raw| {
        let basis = JetBasis::get(d, n);
        let comps = (0..d)
            .map(|i| {
                let terms: Vec<(Vec<u32>, Vec<f64>)> = basis
                    .indices()
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.order() > 0)
                    .map(|(r, a)| {
                        let x = raw[i * len + r];
                        let c = match a.order() {
                            1 if a.0[i] == 1 => 1.0 + 0.3 * x,
                            1 => 0.3 * x,
                            _ => x,
                        };
                        (a.0.clone(), vec![c])
                    })
                    .collect();
                Jet::from_terms(d, n, 1, &terms).unwrap()
            })
            .collect();
        JetMap::new(comps).unwrap()
    })
}

fn pair_and_degree() -> impl Strategy<Value = (JetMap, JetMap, usize)> {
    (1usize..=4, 1usize..=4).prop_flat_map(|(d, n)| (map_of(d, n), map_of(d, n), 0..=n))
}

proptest! {
    #[test]
    fn compose_with_inverse_is_identity(f in arb_map()) {
        let g = jet_invert(&f, DEFAULT_COND_BOUND).unwrap();
        let id = JetMap::identity(f.dim_in(), f.degree());
        prop_assert!(jet_compose(&f, &g, false).unwrap().max_abs_diff(&id).unwrap() < 1e-12);
        prop_assert!(jet_compose(&g, &f, false).unwrap().max_abs_diff(&id).unwrap() < 1e-12);
    }

    #[test]
    fn composition_commutes_with_truncation((f, g, m) in pair_and_degree()) {
        // the degree-m part of f∘g only sees the degree-m parts of f and g
        let fg = jet_compose(&f, &g, false).unwrap();
        let lhs = JetMap::from_jet(&jet_truncate(&fg.to_jet(), m).unwrap());
        let rhs = jet_compose(&f.truncate(m).unwrap(), &g.truncate(m).unwrap(), false).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }
}

proptest! {
    #[test]
    fn composition_is_associative((f, g, h) in (1usize..=3).prop_flat_map(|d| (map_of(d, 3), map_of(d, 3), map_of(d, 3)))) {
        let left = jet_compose(&jet_compose(&f, &g, false).unwrap(), &h, false).unwrap();
        let right = jet_compose(&f, &jet_compose(&g, &h, false).unwrap(), false).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-10);
    }
}
