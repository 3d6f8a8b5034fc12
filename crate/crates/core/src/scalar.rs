use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::jets::Jet;

/// Number type that chart formulas are written against, so that one formula
/// yields plain values (`f64`) and Taylor expansions ([`Jet`]).
pub trait Scalar:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Constant part.
    fn value(&self) -> f64;
    /// A constant of the same kind as `self`.
    fn lift(&self, c: f64) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn recip(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, p: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }
}

impl Scalar for f64 {
    fn value(&self) -> f64 {
        *self
    }
    fn lift(&self, c: f64) -> f64 {
        c
    }
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    fn ln(&self) -> f64 {
        f64::ln(*self)
    }
    fn sqrt(&self) -> f64 {
        f64::sqrt(*self)
    }
    fn recip(&self) -> f64 {
        1.0 / self
    }
    fn powi(&self, n: i32) -> f64 {
        f64::powi(*self, n)
    }
    fn powf(&self, p: f64) -> f64 {
        f64::powf(*self, p)
    }
    fn sin(&self) -> f64 {
        f64::sin(*self)
    }
    fn cos(&self) -> f64 {
        f64::cos(*self)
    }
}

impl Scalar for Jet {
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn lift(&self, c: f64) -> Jet {
        self.constant_like(c)
    }
    fn exp(&self) -> Jet {
        Jet::exp(self)
    }
    fn ln(&self) -> Jet {
        Jet::ln(self)
    }
    fn sqrt(&self) -> Jet {
        Jet::sqrt(self)
    }
    fn recip(&self) -> Jet {
        Jet::recip(self)
    }
    fn powi(&self, n: i32) -> Jet {
        Jet::powi(self, n)
    }
    fn powf(&self, p: f64) -> Jet {
        Jet::powf(self, p)
    }
    fn sin(&self) -> Jet {
        Jet::sin(self)
    }
    fn cos(&self) -> Jet {
        Jet::cos(self)
    }
}

/// Solves `A x = b` for square `A` with scalar entries by Gaussian
/// elimination, pivoting on the constant parts.
pub fn solve_linear<S: Scalar>(a: &[Vec<S>], b: &[S]) -> Option<Vec<S>> {
    let n = b.len();
    let mut m: Vec<Vec<S>> = a.to_vec();
    let mut rhs: Vec<S> = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            m[i][col]
                .value()
                .abs()
                .partial_cmp(&m[j][col].value().abs())
                .unwrap()
        })?;
        if m[piv][col].value() == 0.0 || !m[piv][col].value().is_finite() {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        let inv = m[col][col].recip();
        for row in col + 1..n {
            let f = m[row][col].clone() * inv.clone();
            let (top, bottom) = m.split_at_mut(row);
            for (a, b) in bottom[0][col..n].iter_mut().zip(&top[col][col..n]) {
                *a = a.clone() - f.clone() * b.clone();
            }
            rhs[row] = rhs[row].clone() - f * rhs[col].clone();
        }
    }
    let mut x: Vec<S> = rhs.clone();
    for row in (0..n).rev() {
        let mut acc = rhs[row].clone();
        for k in row + 1..n {
            acc = acc - m[row][k].clone() * x[k].clone();
        }
        x[row] = acc / m[row][row].clone();
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_linear_solve_matches_scalar() {
        let x = Jet::variable(1, 3, 0, 0.0);
        let a = vec![
            vec![x.clone() + 2.0, x.clone() * 0.5],
            vec![x.constant_like(1.0), x.clone() * x.clone() + 3.0],
        ];
        let b = vec![x.constant_like(1.0), x.clone() - 1.0];
        let sol = solve_linear(&a, &b).unwrap();
        // residual A·sol − b vanishes through degree 3
        for i in 0..2 {
            let r =
                a[i][0].clone() * sol[0].clone() + a[i][1].clone() * sol[1].clone() - b[i].clone();
            assert!(r.max_abs() < 1e-14);
        }
        let af = vec![vec![2.0, 0.0], vec![1.0, 3.0]];
        let sf = solve_linear(&af, &[1.0, -1.0]).unwrap();
        assert!((sf[0] - sol[0].value()).abs() < 1e-15);
        assert!((sf[1] - sol[1].value()).abs() < 1e-15);
    }
}
