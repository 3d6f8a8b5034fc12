use nalgebra::{DMatrix, DVector};

use super::{sym_len, unpack_sym, ChartMetric, MetricError, MetricFormula, Region};
use crate::scalar::Scalar;

/// Natural cubic spline on one axis, stored through its cardinal functions:
/// `second[(j, k)]` is the second derivative at node `j` of the spline that
/// interpolates the `k`-th unit vector.
#[derive(Clone, Debug)]
struct Axis {
    lo: f64,
    h: f64,
    n: usize,
    second: DMatrix<f64>,
}

impl Axis {
    fn new(lo: f64, hi: f64, n: usize) -> Axis {
        let h = (hi - lo) / (n - 1) as f64;
        let mut second = DMatrix::zeros(n, n);
        if n > 2 {
            // interior equations M_{j-1} + 4 M_j + M_{j+1} = 6 (y_{j-1} − 2y_j + y_{j+1}) / h²
            let m = n - 2;
            let t = DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
                0 => 4.0,
                1 => 1.0,
                _ => 0.0,
            });
            let lu = t.lu();
            for k in 0..n {
                let rhs = DVector::from_fn(m, |i, _| {
                    let j = i + 1;
                    let y = |q: usize| if q == k { 1.0 } else { 0.0 };
                    6.0 * (y(j - 1) - 2.0 * y(j) + y(j + 1)) / (h * h)
                });
                let sol = lu
                    .solve(&rhs)
                    .expect("tridiagonal spline system is regular");
                for i in 0..m {
                    second[(i + 1, k)] = sol[i];
                }
            }
        }
        Axis { lo, h, n, second }
    }

    /// Cardinal weights `w_k(x)`, `k = 0..n`.
    fn weights<S: Scalar>(&self, x: &S) -> Vec<S> {
        let xv = x.value();
        let j = (((xv - self.lo) / self.h).floor().max(0.0) as usize).min(self.n - 2);
        let x0 = self.lo + j as f64 * self.h;
        let b = (x.clone() - x0) / self.h;
        let a = -b.clone() + 1.0;
        let h2 = self.h * self.h / 6.0;
        let ca = (a.clone() * a.clone() * a.clone() - a.clone()) * h2;
        let cb = (b.clone() * b.clone() * b.clone() - b.clone()) * h2;
        (0..self.n)
            .map(|k| {
                let mut w = ca.clone() * self.second[(j, k)] + cb.clone() * self.second[(j + 1, k)];
                if k == j {
                    w = w + a.clone();
                }
                if k == j + 1 {
                    w = w + b.clone();
                }
                w
            })
            .collect()
    }
}

/// A metric sampled on a rectangular lattice, interpolated componentwise by
/// tensor-product natural cubic splines.
#[derive(Clone, Debug)]
pub struct CustomGrid {
    dim: usize,
    axes: Vec<Axis>,
    /// Row-major over the lattice, packed components fastest.
    values: Vec<f64>,
    region: Region,
}

impl CustomGrid {
    /// `values` holds the packed metric at every lattice node, row-major
    /// (last axis fastest).
    pub fn new(
        lo: &[f64],
        hi: &[f64],
        counts: &[usize],
        values: Vec<f64>,
    ) -> Result<CustomGrid, MetricError> {
        let d = counts.len();
        if lo.len() != d || hi.len() != d || d == 0 {
            return Err(MetricError::Invalid(
                "custom_grid bounds/count mismatch".into(),
            ));
        }
        if counts.iter().any(|&n| n < 2) || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(MetricError::Invalid(
                "custom_grid needs ≥ 2 nodes per axis and lo < hi".into(),
            ));
        }
        let nodes: usize = counts.iter().product();
        let nc = sym_len(d);
        if values.len() != nodes * nc {
            return Err(MetricError::Invalid(format!(
                "custom_grid expects {} values, got {}",
                nodes * nc,
                values.len()
            )));
        }
        for (k, chunk) in values.chunks(nc).enumerate() {
            let g = unpack_sym(chunk, d);
            let min_eig = g.symmetric_eigenvalues().min();
            if !(min_eig > 0.0) {
                return Err(MetricError::Invalid(format!(
                    "custom_grid node {k} is not positive definite (min eigenvalue {min_eig:.3e})"
                )));
            }
        }
        let axes = (0..d).map(|i| Axis::new(lo[i], hi[i], counts[i])).collect();
        Ok(CustomGrid {
            dim: d,
            axes,
            values,
            region: Region::Box {
                lo: lo.to_vec(),
                hi: hi.to_vec(),
            },
        })
    }

    /// Parameters `n_1..n_d, lo_1..lo_d, hi_1..hi_d, values…`.
    pub fn from_params(d: usize, rest: &[f64]) -> Result<CustomGrid, MetricError> {
        if rest.len() < 3 * d {
            return Err(MetricError::Invalid(
                "custom_grid expects counts, lo, hi, values".into(),
            ));
        }
        let counts: Vec<usize> = rest[..d]
            .iter()
            .map(|&n| {
                if n >= 2.0 && n.fract() == 0.0 {
                    Ok(n as usize)
                } else {
                    Err(MetricError::Invalid(format!("bad node count {n}")))
                }
            })
            .collect::<Result<_, _>>()?;
        CustomGrid::new(
            &rest[d..2 * d],
            &rest[2 * d..3 * d],
            &counts,
            rest[3 * d..].to_vec(),
        )
    }

    /// Samples another metric on a lattice.
    pub fn sample(
        m: &dyn ChartMetric,
        lo: &[f64],
        hi: &[f64],
        counts: &[usize],
    ) -> Result<CustomGrid, MetricError> {
        let d = counts.len();
        let nodes: usize = counts.iter().product();
        let mut values = Vec::with_capacity(nodes * sym_len(d));
        let mut idx = vec![0usize; d];
        for _ in 0..nodes {
            let p: Vec<f64> = (0..d)
                .map(|i| lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / (counts[i] - 1) as f64)
                .collect();
            values.extend(m.eval_packed(&p)?);
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        CustomGrid::new(lo, hi, counts, values)
    }
}

impl MetricFormula for CustomGrid {
    fn dim(&self) -> usize {
        self.dim
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn label(&self) -> String {
        let counts: Vec<String> = self.axes.iter().map(|a| a.n.to_string()).collect();
        format!("custom_grid[{}]", counts.join("x"))
    }
    fn components<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        let nc = sym_len(self.dim);
        let zero = p[0].lift(0.0);
        // contract the first axis against the raw samples, then the rest
        let w0 = self.axes[0].weights(&p[0]);
        let rest = self.values.len() / self.axes[0].n;
        let mut cur = vec![zero.clone(); rest];
        for (k, w) in w0.iter().enumerate() {
            let block = &self.values[k * rest..(k + 1) * rest];
            for (c, v) in cur.iter_mut().zip(block) {
                if *v != 0.0 {
                    *c = c.clone() + w.clone() * *v;
                }
            }
        }
        for (axis, x) in self.axes.iter().zip(p).skip(1) {
            let w = axis.weights(x);
            let rest = cur.len() / axis.n;
            let mut next = vec![zero.clone(); rest];
            for (k, wk) in w.iter().enumerate() {
                for (o, v) in next.iter_mut().zip(&cur[k * rest..(k + 1) * rest]) {
                    *o = o.clone() + wk.clone() * v.clone();
                }
            }
            cur = next;
        }
        debug_assert_eq!(cur.len(), nc);
        cur
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{metric_at, PoincareDisc};

    #[test]
    fn reproduces_nodes_and_linear_data() {
        // g = (1 + x + 2y) I sampled on a 4×5 grid is reproduced exactly
        let lo = [0.0, 0.0];
        let hi = [1.0, 2.0];
        let counts = [4, 5];
        let mut values = vec![];
        for i in 0..4 {
            for j in 0..5 {
                let x = i as f64 / 3.0;
                let y = 2.0 * j as f64 / 4.0;
                let f = 1.0 + x + 2.0 * y;
                values.extend([f, 0.0, f]);
            }
        }
        let g = CustomGrid::new(&lo, &hi, &counts, values).unwrap();
        for p in [[0.1, 0.3], [0.77, 1.9], [1.0 / 3.0, 1.0]] {
            let m = metric_at(&g, &p).unwrap();
            assert!((m[(0, 0)] - (1.0 + p[0] + 2.0 * p[1])).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolates_smooth_metric() {
        let disc = PoincareDisc::new(2);
        let g = CustomGrid::sample(&disc, &[-0.5, -0.5], &[0.5, 0.5], &[41, 41]).unwrap();
        let p = [0.123, -0.271];
        let a = metric_at(&g, &p).unwrap();
        let b = metric_at(&disc, &p).unwrap();
        assert!((a - b).abs().max() < 1e-4);
    }

    #[test]
    fn rejects_indefinite_nodes() {
        let r = CustomGrid::new(&[0.0], &[1.0], &[2], vec![1.0, -1.0]);
        assert!(r.is_err());
    }
}
