use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{metric_at, ChartMetric, MetricError};

/// A base point with an ordered basis of the tangent space there (columns
/// of `basis`). The linear map `x ↦ basis·x` is the frame's `L_β`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub point: Vec<f64>,
    pub basis: DMatrix<f64>,
}

impl Frame {
    pub fn new(point: Vec<f64>, basis: DMatrix<f64>) -> Frame {
        assert_eq!(basis.nrows(), point.len());
        assert_eq!(basis.ncols(), point.len());
        Frame { point, basis }
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    /// `Eᵀ g(p) E`.
    pub fn gram(&self, m: &dyn ChartMetric) -> Result<DMatrix<f64>, MetricError> {
        let g = metric_at(m, &self.point)?;
        Ok(self.basis.transpose() * g * &self.basis)
    }

    /// Max-abs deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self, m: &dyn ChartMetric) -> Result<f64, MetricError> {
        let d = self.dim();
        Ok((self.gram(m)? - DMatrix::identity(d, d)).abs().max())
    }

    /// Errors unless the Gram matrix is the identity within `tol`.
    pub fn check_orthonormal(&self, m: &dyn ChartMetric, tol: f64) -> Result<(), MetricError> {
        let defect = self.orthonormality_defect(m)?;
        if defect > tol {
            return Err(MetricError::NotOrthonormal(defect));
        }
        Ok(())
    }

    /// `L_β x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.basis * DVector::from_column_slice(x))
            .iter()
            .copied()
            .collect()
    }

    /// `L_β⁻¹ v`.
    pub fn coords_of(&self, v: &[f64]) -> Option<Vec<f64>> {
        let sol = self
            .basis
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(v))?;
        Some(sol.iter().copied().collect())
    }

    /// Same point, basis `E Q`.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Frame {
        Frame::new(self.point.clone(), &self.basis * q)
    }
}

/// Gram–Schmidt of the seed columns with respect to `g(p)`.
pub fn orthonormal_frame(
    m: &dyn ChartMetric,
    p: &[f64],
    seed: &DMatrix<f64>,
) -> Result<Frame, MetricError> {
    let d = m.dim();
    if seed.nrows() != d || seed.ncols() != d || p.len() != d {
        return Err(MetricError::Invalid("seed must be d vectors in R^d".into()));
    }
    let g = metric_at(m, p)?;
    let inner = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &g * b)[(0, 0)];
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut v: DVector<f64> = seed.column(k).into_owned();
        let n0 = inner(&v, &v).sqrt();
        if !(n0 > 0.0) {
            return Err(MetricError::RankDeficientSeed);
        }
        // two passes keep the result orthonormal to rounding
        for _ in 0..2 {
            for e in &cols {
                let c = inner(e, &v);
                v -= e * c;
            }
        }
        let n = inner(&v, &v).max(0.0).sqrt();
        if n <= 1e-10 * n0 {
            return Err(MetricError::RankDeficientSeed);
        }
        cols.push(v / n);
    }
    Ok(Frame::new(p.to_vec(), DMatrix::from_columns(&cols)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{CustomGrid, Euclidean, PoincareDisc};

    #[test]
    fn scaled_metric_halves_basis() {
        let disc = PoincareDisc::new(2);
        let f = orthonormal_frame(&disc, &[0.0, 0.0], &DMatrix::identity(2, 2)).unwrap();
        assert!(
            (f.basis.clone() - DMatrix::identity(2, 2) * 0.5)
                .abs()
                .max()
                < 1e-15
        );
    }

    #[test]
    fn orthonormal_seed_is_fixed() {
        let e = Euclidean::new(3);
        let q = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let f = orthonormal_frame(&e, &[1.0, 2.0, 3.0], &q).unwrap();
        assert_eq!(f.basis, q);
    }

    #[test]
    fn gram_is_identity_for_spd_metric() {
        // constant SPD metric with off-diagonal terms, via a 2-node grid
        let g = [2.0, 0.7, -0.3, 1.5, 0.2, 3.0];
        let vals: Vec<f64> = (0..8).flat_map(|_| g).collect();
        let m = CustomGrid::new(&[0.0; 3], &[1.0; 3], &[2, 2, 2], vals).unwrap();
        let seed = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.3, 1.0, -0.4, 0.0, 0.5, 1.0]);
        let f = orthonormal_frame(&m, &[0.5, 0.5, 0.5], &seed).unwrap();
        assert!(f.orthonormality_defect(&m).unwrap() < 1e-12);
    }

    #[test]
    fn rank_deficient_seed_rejected() {
        let e = Euclidean::new(2);
        let seed = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(
            orthonormal_frame(&e, &[0.0, 0.0], &seed).unwrap_err(),
            MetricError::RankDeficientSeed
        );
    }
}
