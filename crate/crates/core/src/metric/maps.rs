use std::sync::Arc;

use nalgebra::DMatrix;

use super::{eval_jet_via_taylor, sym_index, sym_len, ChartMetric, MetricError, Region};
use crate::jets::Jet;
use crate::scalar::Scalar;

/// A smooth chart map given by a formula, evaluable on any [`Scalar`].
pub trait MapFormula: Send + Sync {
    fn dim(&self) -> usize;
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S>;
}

/// Object-safe chart map `R^d → R^d`.
pub trait ChartMap: Send + Sync {
    fn dim(&self) -> usize;
    fn apply_jet(&self, x: &[Jet]) -> Vec<Jet>;
    fn apply_f64(&self, x: &[f64]) -> Vec<f64>;

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let vars: Vec<Jet> = (0..d).map(|i| Jet::variable(d, 1, i, x[i])).collect();
        let y = self.apply_jet(&vars);
        DMatrix::from_fn(d, d, |a, b| y[a].coeffs()[1 + b])
    }
}

impl<T: MapFormula> ChartMap for T {
    fn dim(&self) -> usize {
        MapFormula::dim(self)
    }
    fn apply_jet(&self, x: &[Jet]) -> Vec<Jet> {
        self.apply(x)
    }
    fn apply_f64(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x)
    }
}

/// `x ↦ A x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
}

impl LinearMap {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>) -> LinearMap {
        assert!(a.is_square() && a.nrows() == b.len());
        LinearMap { a, b }
    }

    pub fn linear(a: DMatrix<f64>) -> LinearMap {
        let d = a.nrows();
        LinearMap::new(a, vec![0.0; d])
    }

    pub fn rotation2(theta: f64) -> LinearMap {
        let (s, c) = theta.sin_cos();
        LinearMap::linear(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
    }

    pub fn inverse(&self) -> Option<LinearMap> {
        let ai = self.a.clone().try_inverse()?;
        let b = -(&ai * nalgebra::DVector::from_column_slice(&self.b));
        Some(LinearMap {
            a: ai,
            b: b.iter().copied().collect(),
        })
    }
}

impl MapFormula for LinearMap {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let d = self.b.len();
        (0..d)
            .map(|i| {
                let mut acc = x[0].lift(self.b[i]);
                for (k, xk) in x.iter().enumerate() {
                    let a = self.a[(i, k)];
                    if a != 0.0 {
                        acc = acc + xk.clone() * a;
                    }
                }
                acc
            })
            .collect()
    }
}

/// Disc automorphism `z ↦ e^{iθ} (z − a) / (1 − ā z)` on `R² ≅ C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mobius {
    pub theta: f64,
    pub a: [f64; 2],
}

impl Mobius {
    pub fn new(theta: f64, a: [f64; 2]) -> Mobius {
        assert!(
            a[0] * a[0] + a[1] * a[1] < 1.0,
            "Möbius parameter must lie in the disc"
        );
        Mobius { theta, a }
    }

    pub fn inverse(&self) -> Mobius {
        let (s, c) = self.theta.sin_cos();
        // a' = −a e^{iθ}
        Mobius {
            theta: -self.theta,
            a: [
                -(self.a[0] * c - self.a[1] * s),
                -(self.a[0] * s + self.a[1] * c),
            ],
        }
    }
}

fn cmul<S: Scalar>(a: (S, S), b: (S, S)) -> (S, S) {
    (
        a.0.clone() * b.0.clone() - a.1.clone() * b.1.clone(),
        a.0 * b.1 + a.1 * b.0,
    )
}

fn cdiv<S: Scalar>(a: (S, S), b: (S, S)) -> (S, S) {
    let den = (b.0.square() + b.1.square()).recip();
    let (re, im) = cmul(a, (b.0, -b.1));
    (re * den.clone(), im * den)
}

impl MapFormula for Mobius {
    fn dim(&self) -> usize {
        2
    }
    fn apply<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let (x0, y0) = (x[0].clone(), x[1].clone());
        let num = (x0.clone() - self.a[0], y0.clone() - self.a[1]);
        // 1 − ā z = 1 − (a0 − i a1)(x + i y)
        let den = (
            -(x0.clone() * self.a[0] + y0.clone() * self.a[1]) + 1.0,
            -(y0 * self.a[0] - x0 * self.a[1]),
        );
        let q = cdiv(num, den);
        let (s, c) = self.theta.sin_cos();
        let one = x[0].lift(1.0);
        let rot = (one.clone() * c, one * s);
        let r = cmul(rot, q);
        vec![r.0, r.1]
    }
}

/// `f* g`: the pullback of `base` through a chart map `f`.
pub struct PullbackMetric {
    base: Arc<dyn ChartMetric>,
    map: Arc<dyn ChartMap>,
    region: Region,
    label: String,
}

impl PullbackMetric {
    /// Pullback through `map`, defined where `map` lands in the base region.
    pub fn new(base: Arc<dyn ChartMetric>, map: Arc<dyn ChartMap>) -> PullbackMetric {
        let (b, m) = (base.clone(), map.clone());
        let region = Region::Predicate {
            test: Arc::new(move |x: &[f64]| b.region().contains(&m.apply_f64(x))),
            label: format!("preimage of {:?}", base.region()),
        };
        let label = format!("pullback({})", base.label());
        PullbackMetric {
            base,
            map,
            region,
            label,
        }
    }

    /// Pushforward `f_* g = (f⁻¹)* g`, given the inverse map.
    pub fn pushforward(base: Arc<dyn ChartMetric>, inverse: Arc<dyn ChartMap>) -> PullbackMetric {
        let mut m = PullbackMetric::new(base, inverse);
        m.label = format!("pushforward({})", m.base.label());
        m
    }

    pub fn with_region(mut self, region: Region) -> PullbackMetric {
        self.region = region;
        self
    }
}

impl ChartMetric for PullbackMetric {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn label(&self) -> String {
        self.label.clone()
    }

    fn eval_jet(&self, p: &[Jet]) -> Result<Vec<Jet>, MetricError> {
        eval_jet_via_taylor(self, p)
    }

    fn taylor(&self, center: &[f64], degree: usize) -> Result<Vec<Jet>, MetricError> {
        let d = self.dim();
        let x: Vec<Jet> = (0..d)
            .map(|i| Jet::variable(d, degree + 1, i, center[i]))
            .collect();
        let y = self.map.apply_jet(&x);
        let gy = self.base.eval_jet(&y)?;
        let g: Vec<Jet> = gy
            .iter()
            .map(|c| c.truncate(degree))
            .collect::<Result<_, _>>()?;
        let jac: Vec<Vec<Jet>> = y
            .iter()
            .map(|ya| (0..d).map(|b| ya.derivative(b)).collect())
            .collect();
        let mut out = Vec::with_capacity(sym_len(d));
        for i in 0..d {
            for j in i..d {
                let mut acc = g[0].zeros_like();
                for a in 0..d {
                    let mut row = g[0].zeros_like();
                    for b in 0..d {
                        row = row + g[sym_index(a, b, d)].clone() * jac[b][j].clone();
                    }
                    acc = acc + jac[a][i].clone() * row;
                }
                out.push(acc);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{metric_at, Euclidean, PoincareDisc};

    #[test]
    fn mobius_inverse_round_trip() {
        let m = Mobius::new(0.4, [0.3, -0.2]);
        let mi = m.inverse();
        let z = [0.1, 0.55];
        let w = mi.apply_f64(&m.apply_f64(&z));
        assert!((w[0] - z[0]).abs() < 1e-15 && (w[1] - z[1]).abs() < 1e-15);
        let a = m.apply_f64(&[0.3, -0.2]);
        assert!(a[0].abs() < 1e-15 && a[1].abs() < 1e-15);
    }

    #[test]
    fn disc_is_mobius_invariant() {
        let disc: Arc<dyn ChartMetric> = Arc::new(PoincareDisc::new(2));
        let m = Mobius::new(1.1, [0.4, 0.25]);
        let pb = PullbackMetric::new(disc.clone(), Arc::new(m));
        for p in [[0.0, 0.0], [0.2, -0.5], [-0.6, 0.1]] {
            let a = metric_at(&pb, &p).unwrap();
            let b = metric_at(disc.as_ref(), &p).unwrap();
            assert!((a - b).abs().max() < 1e-12);
        }
    }

    #[test]
    fn linear_pullback_of_flat() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let pb = PullbackMetric::new(
            Arc::new(Euclidean::new(2)),
            Arc::new(LinearMap::linear(a.clone())),
        );
        let g = metric_at(&pb, &[0.3, 0.4]).unwrap();
        assert!((g - a.transpose() * &a).abs().max() < 1e-15);
        let t = pb.taylor(&[0.0, 0.0], 2).unwrap();
        assert!(t.iter().all(|j| j.coeffs()[1..].iter().all(|c| *c == 0.0)));
    }
}
