use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use super::basis::{JetBasis, MultiIndex};
use super::JetError;

/// A truncated multivariate power series `Σ_{|α|≤N} c_α x^α` with values in
/// `R^value_dim`.
///
/// Coefficients are stored densely, monomial-major: `coeffs[rank * value_dim + c]`.
#[derive(Clone, Debug)]
pub struct Jet {
    basis: Arc<JetBasis>,
    value_dim: usize,
    coeffs: Vec<f64>,
}

/// Ring operation selector for [`jet_arith`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JetOp {
    Add,
    Mul,
    Scale(f64),
}

/// Coefficientwise add, truncated Cauchy product, or scaling of `a`.
///
/// `Scale` ignores `b` apart from the shape check.
pub fn jet_arith(a: &Jet, b: &Jet, op: JetOp) -> Result<Jet, JetError> {
    match op {
        JetOp::Add => a.try_add(b),
        JetOp::Mul => a.try_mul(b),
        JetOp::Scale(s) => {
            a.check_same(b)?;
            Ok(a.scaled(s))
        }
    }
}

impl Jet {
    pub fn zeros(dim_in: usize, degree: usize, value_dim: usize) -> Jet {
        let basis = JetBasis::get(dim_in, degree);
        let coeffs = vec![0.0; basis.len() * value_dim];
        Jet {
            basis,
            value_dim,
            coeffs,
        }
    }

    pub fn from_basis(basis: Arc<JetBasis>, value_dim: usize, coeffs: Vec<f64>) -> Jet {
        assert_eq!(coeffs.len(), basis.len() * value_dim);
        Jet {
            basis,
            value_dim,
            coeffs,
        }
    }

    /// Scalar constant jet.
    pub fn constant(dim_in: usize, degree: usize, c: f64) -> Jet {
        let mut j = Jet::zeros(dim_in, degree, 1);
        j.coeffs[0] = c;
        j
    }

    /// The coordinate function `x_i` shifted by `at`, i.e. `at + x_i`.
    pub fn variable(dim_in: usize, degree: usize, i: usize, at: f64) -> Jet {
        let mut j = Jet::constant(dim_in, degree, at);
        if degree > 0 {
            let r = 1 + i;
            j.coeffs[r] = 1.0;
        }
        j
    }

    /// Builds a jet from `(α, value)` pairs; absent monomials are zero.
    pub fn from_terms(
        dim_in: usize,
        degree: usize,
        value_dim: usize,
        terms: &[(Vec<u32>, Vec<f64>)],
    ) -> Result<Jet, JetError> {
        let mut j = Jet::zeros(dim_in, degree, value_dim);
        for (alpha, v) in terms {
            if alpha.len() != dim_in || v.len() != value_dim {
                return Err(JetError::DimensionMismatch(format!(
                    "term {alpha:?} -> {v:?} does not fit dim_in={dim_in}, value_dim={value_dim}"
                )));
            }
            let order: u32 = alpha.iter().sum();
            if order as usize > degree {
                return Err(JetError::DegreeExceeded {
                    order: order as usize,
                    degree,
                });
            }
            let r = j.basis.rank(alpha).expect("monomial of admissible order");
            j.coeffs[r * value_dim..(r + 1) * value_dim].copy_from_slice(v);
        }
        Ok(j)
    }

    /// Stacks scalar jets into one vector-valued jet.
    pub fn stack(parts: &[Jet]) -> Result<Jet, JetError> {
        let first = parts
            .first()
            .ok_or_else(|| JetError::DimensionMismatch("empty stack".into()))?;
        let vd: usize = parts.iter().map(|p| p.value_dim).sum();
        let mut out = Jet::zeros(first.dim_in(), first.degree(), vd);
        let mut off = 0;
        for p in parts {
            first.check_domain(p)?;
            for r in 0..out.basis.len() {
                for c in 0..p.value_dim {
                    out.coeffs[r * vd + off + c] = p.coeffs[r * p.value_dim + c];
                }
            }
            off += p.value_dim;
        }
        Ok(out)
    }

    pub fn zeros_like(&self) -> Jet {
        Jet {
            basis: self.basis.clone(),
            value_dim: self.value_dim,
            coeffs: vec![0.0; self.coeffs.len()],
        }
    }

    /// Scalar constant sharing this jet's domain.
    pub fn constant_like(&self, c: f64) -> Jet {
        let mut coeffs = vec![0.0; self.basis.len()];
        coeffs[0] = c;
        Jet {
            basis: self.basis.clone(),
            value_dim: 1,
            coeffs,
        }
    }

    pub fn basis(&self) -> &Arc<JetBasis> {
        &self.basis
    }

    pub fn dim_in(&self) -> usize {
        self.basis.dim()
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn coeff(&self, alpha: &[u32]) -> &[f64] {
        let vd = self.value_dim;
        match self.basis.rank(alpha) {
            Some(r) => &self.coeffs[r * vd..(r + 1) * vd],
            None => &[],
        }
    }

    pub fn coeff_at_rank(&self, rank: usize) -> &[f64] {
        &self.coeffs[rank * self.value_dim..(rank + 1) * self.value_dim]
    }

    /// Constant term of a scalar jet.
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn constant_term(&self) -> &[f64] {
        &self.coeffs[..self.value_dim]
    }

    pub fn set_constant_term(&mut self, v: &[f64]) {
        self.coeffs[..self.value_dim].copy_from_slice(v);
    }

    /// Iterates `(α, value)` in graded-lex order.
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &[f64])> {
        self.basis
            .indices()
            .iter()
            .zip(self.coeffs.chunks(self.value_dim.max(1)))
    }

    pub fn component(&self, c: usize) -> Jet {
        let coeffs = self.coeffs.chunks(self.value_dim).map(|ch| ch[c]).collect();
        Jet {
            basis: self.basis.clone(),
            value_dim: 1,
            coeffs,
        }
    }

    pub fn components(&self) -> Vec<Jet> {
        (0..self.value_dim).map(|c| self.component(c)).collect()
    }

    fn check_domain(&self, other: &Jet) -> Result<(), JetError> {
        if self.basis.dim() != other.basis.dim() || self.basis.degree() != other.basis.degree() {
            return Err(JetError::DimensionMismatch(format!(
                "jet domains differ: (d={}, N={}) vs (d={}, N={})",
                self.dim_in(),
                self.degree(),
                other.dim_in(),
                other.degree()
            )));
        }
        Ok(())
    }

    fn check_same(&self, other: &Jet) -> Result<(), JetError> {
        self.check_domain(other)?;
        if self.value_dim != other.value_dim {
            return Err(JetError::DimensionMismatch(format!(
                "value dims differ: {} vs {}",
                self.value_dim, other.value_dim
            )));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.add_scaled(other, 1.0);
        Ok(out)
    }

    pub fn try_sub(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.add_scaled(other, -1.0);
        Ok(out)
    }

    /// Truncated Cauchy product of two scalar jets.
    pub fn try_mul(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_domain(other)?;
        if self.value_dim != 1 || other.value_dim != 1 {
            return Err(JetError::NotScalar);
        }
        Ok(self.mul_scalar(other))
    }

    fn mul_scalar(&self, other: &Jet) -> Jet {
        let mut out = vec![0.0; self.coeffs.len()];
        let a = &self.coeffs;
        let b = &other.coeffs;
        for &[i, j, k] in self.basis.products() {
            let ai = a[i as usize];
            if ai != 0.0 {
                out[k as usize] += ai * b[j as usize];
            }
        }
        Jet {
            basis: self.basis.clone(),
            value_dim: 1,
            coeffs: out,
        }
    }

    /// Scalar jet times vector-valued jet.
    pub fn mul_vector(&self, v: &Jet) -> Result<Jet, JetError> {
        self.check_domain(v)?;
        if self.value_dim != 1 {
            return Err(JetError::NotScalar);
        }
        let vd = v.value_dim;
        let mut out = vec![0.0; v.coeffs.len()];
        for &[i, j, k] in self.basis.products() {
            let ai = self.coeffs[i as usize];
            if ai != 0.0 {
                let (j, k) = (j as usize * vd, k as usize * vd);
                for c in 0..vd {
                    out[k + c] += ai * v.coeffs[j + c];
                }
            }
        }
        Ok(Jet {
            basis: v.basis.clone(),
            value_dim: vd,
            coeffs: out,
        })
    }

    pub fn scaled(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }

    /// `self += s * other`; shapes must agree.
    pub fn add_scaled(&mut self, other: &Jet, s: f64) {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    /// Projection `π_n`: drops every monomial of degree above `n`.
    pub fn truncate(&self, n: usize) -> Result<Jet, JetError> {
        if n > self.degree() {
            return Err(JetError::TruncationAboveDegree {
                n,
                degree: self.degree(),
            });
        }
        Ok(self.with_degree(n))
    }

    /// Re-expresses the jet in degree `n`, truncating or zero-padding.
    pub fn with_degree(&self, n: usize) -> Jet {
        if n == self.degree() {
            return self.clone();
        }
        let basis = JetBasis::get(self.dim_in(), n);
        let keep = self.basis.len_upto(n).min(basis.len()) * self.value_dim;
        let mut coeffs = vec![0.0; basis.len() * self.value_dim];
        coeffs[..keep].copy_from_slice(&self.coeffs[..keep]);
        Jet {
            basis,
            value_dim: self.value_dim,
            coeffs,
        }
    }

    /// Zeroes every homogeneous part of degree above `n`, keeping the degree.
    pub fn chop(&mut self, n: usize) {
        let keep = self.basis.len_upto(n) * self.value_dim;
        self.coeffs[keep..].iter_mut().for_each(|c| *c = 0.0);
    }

    /// Partial derivative `∂/∂x_l`, a jet of degree `N-1` (degree 0 stays 0).
    pub fn derivative(&self, l: usize) -> Jet {
        let n = self.degree().saturating_sub(1);
        let mut out = Jet::zeros(self.dim_in(), n, self.value_dim);
        let vd = self.value_dim;
        for &(src, dst, f) in self.basis.deriv_table(l) {
            for c in 0..vd {
                out.coeffs[dst as usize * vd + c] += f * self.coeffs[src as usize * vd + c];
            }
        }
        out
    }

    /// Evaluates the polynomial at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let vd = self.value_dim;
        let mut out = vec![0.0; vd];
        for (alpha, v) in self.terms() {
            let m: f64 = alpha
                .0
                .iter()
                .zip(x)
                .map(|(&a, &xi)| xi.powi(a as i32))
                .product();
            for c in 0..vd {
                out[c] += m * v[c];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    /// Largest coefficientwise absolute difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Jet) -> Result<f64, JetError> {
        self.check_same(other)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// `f(a₀ + h) = Σ_k f_k h^k` for the nilpotent part `h`; `series[k]` is
    /// `f^{(k)}(a₀)/k!`.
    fn apply_series(&self, series: &[f64]) -> Jet {
        debug_assert_eq!(self.value_dim, 1);
        let n = self.degree();
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut acc = self.constant_like(series[n]);
        for k in (0..n).rev() {
            acc = acc.mul_scalar(&h);
            acc.coeffs[0] += series[k];
        }
        acc
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let mut s = vec![e; self.degree() + 1];
        let mut fact = 1.0;
        for (k, sk) in s.iter_mut().enumerate().skip(1) {
            fact *= k as f64;
            *sk = e / fact;
        }
        self.apply_series(&s)
    }

    pub fn ln(&self) -> Jet {
        let a = self.value();
        let mut s = vec![a.ln()];
        for k in 1..=self.degree() {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            s.push(sign / (k as f64 * a.powi(k as i32)));
        }
        self.apply_series(&s)
    }

    pub fn recip(&self) -> Jet {
        let a = self.value();
        let s: Vec<f64> = (0..=self.degree())
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign / a.powi(k as i32 + 1)
            })
            .collect();
        self.apply_series(&s)
    }

    /// Real power `a^p` via the binomial series.
    pub fn powf(&self, p: f64) -> Jet {
        let a = self.value();
        let mut s = vec![a.powf(p)];
        let mut binom = 1.0;
        for k in 1..=self.degree() {
            binom *= (p - (k as f64 - 1.0)) / k as f64;
            s.push(binom * a.powf(p - k as f64));
        }
        self.apply_series(&s)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn powi(&self, n: i32) -> Jet {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut acc = self.constant_like(1.0);
        let mut base = self.clone();
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul_scalar(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul_scalar(&base);
            }
        }
        acc
    }

    fn trig_series(&self, phase: usize) -> Jet {
        let a = self.value();
        let cyc = [a.sin(), a.cos(), -a.sin(), -a.cos()];
        let mut fact = 1.0;
        let s: Vec<f64> = (0..=self.degree())
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                cyc[(k + phase) % 4] / fact
            })
            .collect();
        self.apply_series(&s)
    }

    pub fn sin(&self) -> Jet {
        self.trig_series(0)
    }

    pub fn cos(&self) -> Jet {
        self.trig_series(1)
    }
}

impl PartialEq for Jet {
    fn eq(&self, other: &Self) -> bool {
        self.dim_in() == other.dim_in()
            && self.degree() == other.degree()
            && self.value_dim == other.value_dim
            && self.coeffs == other.coeffs
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        self.check_same(&rhs).expect("jet add");
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: Jet) -> Jet {
        self.check_same(&rhs).expect("jet sub");
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        self.try_mul(&rhs).expect("jet mul")
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        self.try_mul(&rhs.recip()).expect("jet div")
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.coeffs.iter_mut().for_each(|c| *c = -*c);
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        for c in 0..self.value_dim {
            self.coeffs[c] += rhs;
        }
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, rhs: f64) -> Jet {
        self + (-rhs)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        self.coeffs.iter_mut().for_each(|c| *c *= rhs);
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self * (1.0 / rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(n: usize) -> Jet {
        Jet::variable(1, n, 0, 0.0)
    }

    #[test]
    fn difference_of_squares() {
        let one = Jet::constant(1, 2, 1.0);
        let p = one.clone() + x(2);
        let m = one - x(2);
        let prod = jet_arith(&p, &m, JetOp::Mul).unwrap();
        assert_eq!(prod.coeffs(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn additive_identity() {
        let a = Jet::from_terms(
            2,
            2,
            1,
            &[(vec![0, 0], vec![3.0]), (vec![1, 1], vec![-2.0])],
        )
        .unwrap();
        let z = a.zeros_like();
        assert_eq!(jet_arith(&a, &z, JetOp::Add).unwrap(), a);
    }

    #[test]
    fn product_respects_degree_cap() {
        let x2 = x(3) * x(3);
        let x4 = x2.clone() * x2;
        assert!(x4.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn mul_rejects_vector_values() {
        let v = Jet::zeros(1, 2, 2);
        assert!(matches!(v.try_mul(&v), Err(JetError::NotScalar)));
        let a = Jet::zeros(1, 2, 1);
        let b = Jet::zeros(2, 2, 1);
        assert!(matches!(a.try_add(&b), Err(JetError::DimensionMismatch(_))));
    }

    #[test]
    fn truncation_cases() {
        let f = Jet::constant(1, 2, 1.0) + x(2) + x(2) * x(2);
        assert_eq!(f.truncate(1).unwrap().coeffs(), &[1.0, 1.0]);
        assert_eq!(f.truncate(2).unwrap(), f);
        assert_eq!(f.truncate(0).unwrap().coeffs(), &[1.0]);
        assert!(f.truncate(3).is_err());
    }

    #[test]
    fn elementary_series() {
        // exp(x) at degree 4
        let e = x(4).exp();
        let want = [1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0];
        for (a, b) in e.coeffs().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        // ln(exp(1 + x)) = 1 + x
        let l = (x(4) + 1.0).exp().ln();
        assert!((l.coeffs()[0] - 1.0).abs() < 1e-14);
        assert!((l.coeffs()[1] - 1.0).abs() < 1e-14);
        assert!(l.coeffs()[2..].iter().all(|c| c.abs() < 1e-13));
        // sqrt(a)^2 = a, recip(a)*a = 1
        let a = x(5) * 0.3 + 2.0 + x(5) * x(5) * 0.7;
        let s = a.sqrt();
        assert!((s.clone() * s).max_abs_diff(&a).unwrap() < 1e-14);
        let r = a.recip() * a.clone();
        assert!(r.max_abs_diff(&a.constant_like(1.0)).unwrap() < 1e-14);
        // sin² + cos² = 1
        let t = x(5) + 0.4;
        let one = t.sin() * t.sin() + t.cos() * t.cos();
        assert!(one.max_abs_diff(&t.constant_like(1.0)).unwrap() < 1e-14);
        assert!(
            a.powi(3)
                .max_abs_diff(&(a.clone() * a.clone() * a.clone()))
                .unwrap()
                < 1e-13
        );
    }

    #[test]
    fn derivative_of_monomials() {
        // d/dy (x^2 y + 3 y^2) = x^2 + 6y
        let f =
            Jet::from_terms(2, 3, 1, &[(vec![2, 1], vec![1.0]), (vec![0, 2], vec![3.0])]).unwrap();
        let d = f.derivative(1);
        assert_eq!(d.degree(), 2);
        assert_eq!(d.coeff(&[2, 0]), &[1.0]);
        assert_eq!(d.coeff(&[0, 1]), &[6.0]);
    }
}
