use std::sync::Arc;

use nalgebra::{Complex, DMatrix};

use super::domain::DomainSpec;
use super::quadrature::{build_rule, QuadConfig, QuadratureRule};
use super::BergmanError;
use crate::jets::Jet;
use crate::metric::{eval_jet_via_taylor, sym_index, sym_len, ChartMetric, MetricError, Region};
use crate::par;
use crate::scalar::Scalar;

type C64 = Complex<f64>;

/// Truncated Bergman kernel `K(z, w) = Σ φ_k(z) conj(φ_k(w))` over an
/// orthonormalized monomial basis.
#[derive(Clone, Debug)]
pub struct KernelApprox {
    pub dim: usize,
    pub degree: usize,
    /// Graded multi-exponents of the monomials `z^α`.
    pub exponents: Vec<Vec<u32>>,
    /// Lower-triangular: `φ_k = Σ_j coef[(k, j)] z^{α_j}`.
    pub coef: DMatrix<C64>,
    pub nodes: usize,
    /// `max |⟨φ_j, φ_k⟩ − δ_jk|` under the building rule.
    pub gram_defect: f64,
}

/// Multi-exponents with `|α| ≤ degree`, graded, lexicographic within a grade.
pub fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(dim: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == dim - 1 {
            let used: u32 = prefix.iter().sum();
            let mut a = prefix.clone();
            a.push(total - used);
            out.push(a);
            return;
        }
        let used: u32 = prefix.iter().sum();
        for k in (0..=total - used).rev() {
            prefix.push(k);
            fill(dim, total, prefix, out);
            prefix.pop();
        }
    }
    let mut out = vec![];
    for total in 0..=degree as u32 {
        fill(dim, total, &mut vec![], &mut out);
    }
    out
}

/// `z^α` for every exponent, as `(re, im)` pairs.
fn monomials<S: Scalar>(x: &[S], exps: &[Vec<u32>], degree: usize) -> Vec<(S, S)> {
    let dim = x.len() / 2;
    let zero = x[0].lift(0.0);
    let one = x[0].lift(1.0);
    let powers: Vec<Vec<(S, S)>> = (0..dim)
        .map(|i| {
            let (a, b) = (x[2 * i].clone(), x[2 * i + 1].clone());
            let mut p = vec![(one.clone(), zero.clone())];
            for k in 1..=degree {
                let (re, im) = p[k - 1].clone();
                p.push((
                    re.clone() * a.clone() - im.clone() * b.clone(),
                    re * b.clone() + im * a.clone(),
                ));
            }
            p
        })
        .collect();
    exps.iter()
        .map(|alpha| {
            let mut acc = (one.clone(), zero.clone());
            for (i, &e) in alpha.iter().enumerate() {
                if e > 0 {
                    let (pr, pi) = powers[i][e as usize].clone();
                    let (re, im) = acc;
                    acc = (
                        re.clone() * pr.clone() - im.clone() * pi.clone(),
                        re * pi + im * pr,
                    );
                }
            }
            acc
        })
        .collect()
}

fn monomials_c(z: &[C64], exps: &[Vec<u32>]) -> Vec<C64> {
    exps.iter()
        .map(|a| a.iter().zip(z).map(|(e, zi)| zi.powu(*e)).product())
        .collect()
}

/// Gram matrix of the monomials under `rule`, orthonormalized by Cholesky.
pub fn kernel_from_rule(
    dim: usize,
    degree: usize,
    rule: &QuadratureRule,
) -> Result<KernelApprox, BergmanError> {
    let exponents = monomial_exponents(dim, degree);
    let m = exponents.len();
    if rule.len() < 10 * m {
        return Err(BergmanError::TooFewNodes {
            nodes: rule.len(),
            need: 10 * m,
        });
    }
    // lower triangle of G_jk = Σ w m_j conj(m_k), packed as (re, im) pairs
    let tri = m * (m + 1) / 2;
    let sums = par::sum_range(rule.len(), 2 * tri, |n, acc| {
        let w = rule.weights[n];
        let mz = monomials(&rule.points[n], &exponents, degree);
        let mut idx = 0;
        for j in 0..m {
            let (aj, bj) = mz[j];
            for mk in &mz[..=j] {
                let (ak, bk) = *mk;
                acc[idx] += w * (aj * ak + bj * bk);
                acc[idx + 1] += w * (bj * ak - aj * bk);
                idx += 2;
            }
        }
    });
    let mut g = DMatrix::<C64>::zeros(m, m);
    let mut idx = 0;
    for j in 0..m {
        for k in 0..=j {
            let v = C64::new(sums[idx], sums[idx + 1]);
            g[(j, k)] = v;
            g[(k, j)] = v.conj();
            idx += 2;
        }
    }
    let chol = g
        .clone()
        .cholesky()
        .ok_or(BergmanError::GramSingular { index: None })?;
    let l = chol.l();
    for k in 0..m {
        let pivot = l[(k, k)].norm_sqr() / g[(k, k)].re;
        if !(pivot > 1e-13) {
            return Err(BergmanError::GramSingular { index: Some(k) });
        }
    }
    let coef = l
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or(BergmanError::GramSingular { index: None })?;
    let check = &coef * &g * coef.adjoint();
    let gram_defect = (0..m)
        .flat_map(|j| (0..m).map(move |k| (j, k)))
        .map(|(j, k)| {
            (check[(j, k)]
                - if j == k {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                })
            .norm()
        })
        .fold(0.0, f64::max);
    Ok(KernelApprox {
        dim,
        degree,
        exponents,
        coef,
        nodes: rule.len(),
        gram_defect,
    })
}

/// Truncated Bergman kernel of `dom` with monomials up to `degree`.
pub fn kernel_build(
    dom: &DomainSpec,
    degree: usize,
    quad: &QuadConfig,
) -> Result<KernelApprox, BergmanError> {
    let rule = build_rule(dom, quad)?;
    kernel_from_rule(dom.dim, degree, &rule)
}

impl KernelApprox {
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// `φ_k` at a real point, as `(re, im)` pairs.
    pub fn basis_at<S: Scalar>(&self, x: &[S]) -> Vec<(S, S)> {
        let mz = monomials(x, &self.exponents, self.degree);
        let zero = x[0].lift(0.0);
        (0..self.len())
            .map(|k| {
                let mut re = zero.clone();
                let mut im = zero.clone();
                for (j, (a, b)) in mz.iter().enumerate().take(k + 1) {
                    let c = self.coef[(k, j)];
                    if c.re != 0.0 {
                        re = re + a.clone() * c.re;
                        im = im + b.clone() * c.re;
                    }
                    if c.im != 0.0 {
                        re = re - b.clone() * c.im;
                        im = im + a.clone() * c.im;
                    }
                }
                (re, im)
            })
            .collect()
    }

    /// `K(x, x) = Σ |φ_k(x)|²`.
    pub fn diagonal<S: Scalar>(&self, x: &[S]) -> S {
        self.basis_at(x)
            .into_iter()
            .fold(x[0].lift(0.0), |acc, (a, b)| acc + a.square() + b.square())
    }

    pub fn kernel(&self, z: &[C64], w: &[C64]) -> C64 {
        let mz = monomials_c(z, &self.exponents);
        let mw = monomials_c(w, &self.exponents);
        let pz = &self.coef * DMatrix::from_column_slice(mz.len(), 1, &mz);
        let pw = &self.coef * DMatrix::from_column_slice(mw.len(), 1, &mw);
        pz.iter().zip(pw.iter()).map(|(a, b)| a * b.conj()).sum()
    }
}

/// The Bergman metric `∂∂̄ log K` as a real metric on `R^{2d}` (coordinates
/// `x1, y1, x2, …`), restricted to points at least `margin` inside.
pub struct BergmanMetric {
    kernel: Arc<KernelApprox>,
    domain: DomainSpec,
    margin: f64,
    region: Region,
}

impl BergmanMetric {
    pub fn new(kernel: Arc<KernelApprox>, domain: DomainSpec, margin: f64) -> BergmanMetric {
        let dom = domain.clone();
        let region = Region::Predicate {
            test: Arc::new(move |x: &[f64]| dom.contains(x) && dom.distance_estimate(x) <= -margin),
            label: format!("{} minus a {margin} margin", domain.label),
        };
        BergmanMetric {
            kernel,
            domain,
            margin,
            region,
        }
    }

    pub fn kernel(&self) -> &Arc<KernelApprox> {
        &self.kernel
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Complex Hessian `∂²log K/∂z_i∂z̄_j` at a point.
    pub fn complex_hessian(&self, x: &[f64]) -> DMatrix<C64> {
        let n = 2 * self.kernel.dim;
        let vars: Vec<Jet> = (0..n).map(|i| Jet::variable(n, 2, i, x[i])).collect();
        let l = self.kernel.diagonal(&vars).ln();
        let h = |a: usize, b: usize| l.derivative(a).derivative(b).value();
        DMatrix::from_fn(self.kernel.dim, self.kernel.dim, |i, j| {
            let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
            C64::new(
                0.25 * (h(xi, xj) + h(yi, yj)),
                0.25 * (h(xi, yj) - h(yi, xj)),
            )
        })
    }
}

/// Bergman metric of `dom` from a kernel approximation, forbidding a
/// boundary margin of `margin_fraction` times the domain's diameter.
pub fn bergman_metric(
    kernel: Arc<KernelApprox>,
    dom: &DomainSpec,
    margin_fraction: f64,
) -> Result<BergmanMetric, BergmanError> {
    if kernel.dim != dom.dim {
        return Err(BergmanError::Invalid(
            "kernel and domain dimensions differ".into(),
        ));
    }
    let diameter = dom.validate(64)?.diameter;
    Ok(BergmanMetric::new(
        kernel,
        dom.clone(),
        margin_fraction * diameter,
    ))
}

impl ChartMetric for BergmanMetric {
    fn dim(&self) -> usize {
        2 * self.kernel.dim
    }
    fn region(&self) -> &Region {
        &self.region
    }
    fn label(&self) -> String {
        format!("bergman({})", self.domain.label)
    }

    fn eval_jet(&self, p: &[Jet]) -> Result<Vec<Jet>, MetricError> {
        eval_jet_via_taylor(self, p)
    }

    fn taylor(&self, center: &[f64], degree: usize) -> Result<Vec<Jet>, MetricError> {
        let n = self.dim();
        let d = self.kernel.dim;
        let vars: Vec<Jet> = (0..n)
            .map(|i| Jet::variable(n, degree + 2, i, center[i]))
            .collect();
        let k = self.kernel.diagonal(&vars);
        if !(k.value() > 0.0) {
            return Err(MetricError::Invalid(format!(
                "kernel vanishes at {center:?}"
            )));
        }
        let l = k.ln();
        let first: Vec<Jet> = (0..n).map(|a| l.derivative(a)).collect();
        let h = |a: usize, b: usize| first[a].derivative(b);
        // g(x_i, x_j) = g(y_i, y_j) = Re H_ij, g(x_i, y_j) = Im H_ij
        let mut out = vec![Jet::zeros(n, degree, 1); sym_len(n)];
        for i in 0..d {
            for j in i..d {
                let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
                let re = (h(xi, xj) + h(yi, yj)).scaled(0.25);
                let im = (h(xi, yj) - h(yi, xj)).scaled(0.25);
                out[sym_index(xi, xj, n)] = re.clone();
                out[sym_index(yi, yj, n)] = re;
                out[sym_index(xi, yj, n)] = im.clone();
                if i != j {
                    // g(y_i, x_j) = Im H_ji = −Im H_ij
                    out[sym_index(yi, xj, n)] = -im;
                }
            }
        }
        Ok(out)
    }
}
