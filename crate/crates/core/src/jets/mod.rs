//! Truncated multivariate power series.
//!
//! A [`Jet`] of degree `N` over `d` variables stores every coefficient
//! `c_α`, `|α| ≤ N`, densely in graded-lex order; a [`JetMap`] is a tuple of
//! scalar jets and supports composition and inversion.

mod basis;
mod jet;
mod map;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use basis::{JetBasis, MultiIndex};
pub use jet::{jet_arith, Jet, JetOp};
pub use map::{jet_compose, jet_invert, jet_truncate, JetMap, Powers, DEFAULT_COND_BOUND};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("multiplication requires scalar-valued jets")]
    NotScalar,
    #[error("monomial of order {order} exceeds jet degree {degree}")]
    DegreeExceeded { order: usize, degree: usize },
    #[error("cannot truncate to {n}: jet has degree {degree}")]
    TruncationAboveDegree { n: usize, degree: usize },
    #[error("inner map has nonzero constant term {0}; re-center explicitly")]
    NonzeroConstant(f64),
    #[error("linear part is singular")]
    Singular,
    #[error("linear part condition number {cond:.3e} exceeds bound {bound:.1e}")]
    IllConditioned { cond: f64, bound: f64 },
}

#[derive(Serialize, Deserialize)]
struct JetRepr {
    dim_in: usize,
    degree: usize,
    value_dim: usize,
    coeffs: Vec<(Vec<u32>, Vec<f64>)>,
}

impl Serialize for Jet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        JetRepr {
            dim_in: self.dim_in(),
            degree: self.degree(),
            value_dim: self.value_dim(),
            coeffs: self
                .terms()
                .map(|(a, v)| (a.0.clone(), v.to_vec()))
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Jet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Jet, D::Error> {
        let r = JetRepr::deserialize(d)?;
        Jet::from_terms(r.dim_in, r.degree, r.value_dim, &r.coeffs).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_jet(dim: usize, degree: usize, vd: usize) -> impl Strategy<Value = Jet> {
        let n = JetBasis::get(dim, degree).len() * vd;
        proptest::collection::vec(-1e3..1e3f64, n)
            .prop_map(move |c| Jet::from_basis(JetBasis::get(dim, degree), vd, c))
    }

    proptest! {
        #[test]
        fn json_round_trip_is_bit_stable(j in (1usize..4, 0usize..4, 1usize..3)
            .prop_flat_map(|(d, n, v)| arb_jet(d, n, v)))
        {
            let s = serde_json::to_string(&j).unwrap();
            let back: Jet = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(&back, &j);
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), s);
        }

        #[test]
        fn mul_commutes_and_associates(a in arb_jet(2, 4, 1), b in arb_jet(2, 4, 1), c in arb_jet(2, 4, 1)) {
            let scale = a.max_abs().max(1.0) * b.max_abs().max(1.0) * c.max_abs().max(1.0);
            let ab = a.clone() * b.clone();
            let ba = b.clone() * a.clone();
            prop_assert!(ab.max_abs_diff(&ba).unwrap() <= 1e-13 * scale);
            let l = ab * c.clone();
            let r = a * (b * c);
            prop_assert!(l.max_abs_diff(&r).unwrap() <= 1e-13 * scale * 10.0);
        }

        #[test]
        fn truncations_nest(j in arb_jet(3, 5, 1), n1 in 0usize..6, n2 in 0usize..6) {
            let twice = j.truncate(n1).unwrap().truncate(n2.min(n1)).unwrap();
            prop_assert_eq!(twice, j.truncate(n1.min(n2)).unwrap());
        }
    }

    #[test]
    fn json_layout() {
        let j = Jet::from_terms(1, 1, 1, &[(vec![1], vec![2.5])]).unwrap();
        assert_eq!(
            serde_json::to_string(&j).unwrap(),
            r#"{"dim_in":1,"degree":1,"value_dim":1,"coeffs":[[[0],[0.0]],[[1],[2.5]]]}"#
        );
    }
}
