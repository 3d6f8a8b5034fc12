use std::sync::Arc;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use super::expr::{Expr, Var};
use super::BergmanError;
use crate::jets::Jet;
use crate::metric::sphere_directions;
use crate::qmc::halton;
use crate::scalar::Scalar;

/// `ρ` with its symbolic gradient and Hessian in the real coordinates
/// `x1, y1, x2, …`.
#[derive(Clone, Debug)]
pub struct DefiningFunction {
    pub rho: Expr,
    pub grad: Vec<Expr>,
    pub hess: Vec<Vec<Expr>>,
}

impl DefiningFunction {
    pub fn new(rho: Expr, dim: usize) -> DefiningFunction {
        let vars: Vec<Var> = (0..2 * dim)
            .map(|i| {
                if i % 2 == 0 {
                    Var::X(i / 2)
                } else {
                    Var::Y(i / 2)
                }
            })
            .collect();
        let grad: Vec<Expr> = vars.iter().map(|v| rho.diff(*v)).collect();
        let hess = grad
            .iter()
            .map(|g| vars.iter().map(|v| g.diff(*v)).collect())
            .collect();
        DefiningFunction { rho, grad, hess }
    }
}

/// A smooth family `t ↦ Ω_t = {ρ(·, t) < 0}` of bounded domains in `C^d`.
#[derive(Clone, Debug)]
pub struct DomainFamily {
    pub dim: usize,
    pub f: Arc<DefiningFunction>,
    pub t_domain: (f64, f64),
    /// Real box `[lo, hi]` containing every `Ω_t`.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub label: String,
}

/// One slice `Ω_t` of a family.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    pub dim: usize,
    pub f: Arc<DefiningFunction>,
    pub t: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub label: String,
}

/// Evidence gathered by [`DomainSpec::validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub boundary_samples: usize,
    pub min_gradient: f64,
    /// Smallest Levi eigenvalue over the samples (`None` when `d = 1`,
    /// where the condition is vacuous).
    pub min_levi: Option<f64>,
    pub diameter: f64,
}

impl DomainFamily {
    pub fn from_expr(
        src: &str,
        dim: usize,
        t_domain: (f64, f64),
        lo: Vec<f64>,
        hi: Vec<f64>,
    ) -> Result<DomainFamily, BergmanError> {
        if dim == 0 || lo.len() != 2 * dim || hi.len() != 2 * dim {
            return Err(BergmanError::Invalid(
                "bounding box must have 2d coordinates".into(),
            ));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) || !(t_domain.0 <= t_domain.1) {
            return Err(BergmanError::Invalid(
                "empty bounding box or parameter range".into(),
            ));
        }
        let rho = Expr::parse(src, dim)?;
        Ok(DomainFamily {
            dim,
            f: Arc::new(DefiningFunction::new(rho, dim)),
            t_domain,
            lo,
            hi,
            label: src.to_string(),
        })
    }

    /// A family that does not depend on `t` (any `t` in `t_domain`).
    pub fn fixed(src: &str, dim: usize, half_width: f64) -> Result<DomainFamily, BergmanError> {
        DomainFamily::from_expr(
            src,
            dim,
            (f64::NEG_INFINITY, f64::INFINITY),
            vec![-half_width; 2 * dim],
            vec![half_width; 2 * dim],
        )
    }

    /// Built-in families by name:
    ///
    /// | name | parameters | `ρ` |
    /// |---|---|---|
    /// | `disc` | `[r]` | `|z|² − r²` |
    /// | `dilating_disc` | | `|z|² − 1 − t`, `t ∈ [−0.5, 1]` |
    /// | `ball` | `[d]` | `|z|² − 1` in `C^d` |
    /// | `ellipsoid` | `[a, b]` | `x²/a² + y²/b² − 1` in `C`, or `|z₁|²/a² + |z₂|²/b² − 1` with a third parameter `2` |
    /// | `bumped_disc` | `[amp, profile]` | `|z|² − 1 + amp·p(t)·e^{−4|z − ½|²}`; profile `0` constant, `1` linear, `2` flat at `0` |
    pub fn builtin(name: &str, params: &[f64]) -> Result<DomainFamily, BergmanError> {
        let bad =
            || BergmanError::Invalid(format!("bad parameters for domain '{name}': {params:?}"));
        let all = (f64::NEG_INFINITY, f64::INFINITY);
        match name {
            "disc" => {
                let r = params.first().copied().unwrap_or(1.0);
                if !(r > 0.0) {
                    return Err(bad());
                }
                let h = 1.1 * r;
                DomainFamily::from_expr(
                    &format!("|z1|^2 - {}", r * r),
                    1,
                    all,
                    vec![-h; 2],
                    vec![h; 2],
                )
            }
            "dilating_disc" => DomainFamily::from_expr(
                "|z1|^2 - 1 - t",
                1,
                (-0.5, 1.0),
                vec![-1.5; 2],
                vec![1.5; 2],
            ),
            "ball" => {
                let d = params.first().copied().unwrap_or(2.0);
                if d < 1.0 || d.fract() != 0.0 {
                    return Err(bad());
                }
                let d = d as usize;
                DomainFamily::from_expr("|z|^2 - 1", d, all, vec![-1.05; 2 * d], vec![1.05; 2 * d])
            }
            "ellipsoid" => {
                let (a, b) = match params {
                    [a, b, ..] if *a > 0.0 && *b > 0.0 => (*a, *b),
                    _ => return Err(bad()),
                };
                let h = 1.05 * a.max(b);
                if params.get(2) == Some(&2.0) {
                    let src = format!("|z1|^2/{} + |z2|^2/{} - 1", a * a, b * b);
                    DomainFamily::from_expr(&src, 2, all, vec![-h; 4], vec![h; 4])
                } else {
                    let src = format!("x1^2/{} + y1^2/{} - 1", a * a, b * b);
                    DomainFamily::from_expr(&src, 1, all, vec![-h; 2], vec![h; 2])
                }
            }
            "bumped_disc" => {
                let amp = *params.first().ok_or_else(bad)?;
                let profile = match params.get(1).copied().unwrap_or(1.0) as i64 {
                    0 => "1",
                    1 => "t",
                    2 => "flat(t)",
                    _ => return Err(bad()),
                };
                if amp.abs() >= 0.5 {
                    return Err(bad());
                }
                let src = format!("|z1|^2 - 1 + {amp}*{profile}*exp(-4*((x1 - 0.5)^2 + y1^2))");
                DomainFamily::from_expr(&src, 1, (-1.0, 1.0), vec![-1.5; 2], vec![1.5; 2])
            }
            _ => Err(BergmanError::Invalid(format!("unknown domain '{name}'"))),
        }
    }

    pub fn at(&self, t: f64) -> Result<DomainSpec, BergmanError> {
        if !(t >= self.t_domain.0 && t <= self.t_domain.1) {
            return Err(BergmanError::Invalid(format!(
                "t = {t} outside [{}, {}]",
                self.t_domain.0, self.t_domain.1
            )));
        }
        Ok(DomainSpec {
            dim: self.dim,
            f: self.f.clone(),
            t,
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            label: format!("{} at t = {t}", self.label),
        })
    }

    /// The image family `A(Ω_t)` under a real-linear map `A` of `R^{2d}`;
    /// `a_inverse` is `A⁻¹`, the box is enlarged to stay conservative.
    pub fn transformed(&self, a_inverse: &DMatrix<f64>, label: &str) -> DomainFamily {
        let n = 2 * self.dim;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| a_inverse[(i, j)]).collect())
            .collect();
        let rho = self.f.rho.substitute_linear(&rows);
        let a = a_inverse
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(n, n));
        let radius = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
            * a.singular_values().max();
        DomainFamily {
            dim: self.dim,
            f: Arc::new(DefiningFunction::new(rho, self.dim)),
            t_domain: self.t_domain,
            lo: vec![-radius; n],
            hi: vec![radius; n],
            label: format!("{label}({})", self.label),
        }
    }
}

impl DomainSpec {
    pub fn real_dim(&self) -> usize {
        2 * self.dim
    }

    pub fn rho<S: Scalar>(&self, x: &[S]) -> S {
        self.f.rho.eval(x, self.t)
    }

    pub fn gradient<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        self.f.grad.iter().map(|g| g.eval(x, self.t)).collect()
    }

    pub fn hessian<S: Scalar>(&self, x: &[S]) -> Vec<Vec<S>> {
        self.f
            .hess
            .iter()
            .map(|row| row.iter().map(|h| h.eval(x, self.t)).collect())
            .collect()
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| v > l && v < h)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.in_box(x) && self.rho(x) < 0.0
    }

    /// `ρ/|∇ρ|`, a first-order signed distance to the boundary.
    pub fn distance_estimate(&self, x: &[f64]) -> f64 {
        let r = self.rho(x);
        let g = self.gradient(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        if g == 0.0 {
            if r < 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        } else {
            r / g
        }
    }

    pub fn box_volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    /// The most interior of 4096 low-discrepancy box samples.
    pub fn interior_point(&self) -> Result<Vec<f64>, BergmanError> {
        let n = self.real_dim();
        let center: Vec<f64> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect();
        let mut best = (self.rho(&center), center);
        for k in 1..=4096 {
            let u = halton(k as u64, n);
            let x: Vec<f64> = (0..n)
                .map(|i| self.lo[i] + u[i] * (self.hi[i] - self.lo[i]))
                .collect();
            let r = self.rho(&x);
            if r < best.0 {
                best = (r, x);
            }
        }
        if best.0 < 0.0 {
            Ok(best.1)
        } else {
            Err(BergmanError::EmptyDomain)
        }
    }

    /// Distance along `c + s·u` to the bounding box.
    pub fn box_reach(&self, c: &[f64], u: &[f64]) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(c.iter().zip(u))
            .map(|((l, h), (ci, ui))| {
                if *ui > 0.0 {
                    (h - ci) / ui
                } else if *ui < 0.0 {
                    (l - ci) / ui
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// First boundary crossing along the ray `c + s·u`; `None` if the ray
    /// leaves the box without crossing.
    pub fn ray_exit(&self, c: &[f64], u: &[f64]) -> Option<f64> {
        let reach = self.box_reach(c, u);
        let at = |s: f64| -> Vec<f64> { c.iter().zip(u).map(|(a, b)| a + s * b).collect() };
        let steps = 64;
        let mut a = 0.0;
        let mut found = None;
        for k in 1..=steps {
            let s = reach * k as f64 / steps as f64;
            if self.rho(&at(s)) >= 0.0 {
                found = Some((a, s));
                break;
            }
            a = s;
        }
        let (mut a, mut b) = found?;
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if self.rho(&at(m)) < 0.0 {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-15 * (1.0 + b) {
                break;
            }
        }
        // polish with Newton on the smooth function s ↦ ρ(c + s u)
        let mut s = 0.5 * (a + b);
        for _ in 0..3 {
            let x: Vec<Jet> = (0..c.len())
                .map(|i| Jet::variable(1, 1, 0, s).scaled(u[i]) + c[i])
                .collect();
            let r = self.rho(&x);
            let d = r.coeffs()[1];
            if d == 0.0 {
                break;
            }
            let next = s - r.value() / d;
            if (a - 1e-12..=b + 1e-12).contains(&next) {
                s = next;
            }
        }
        Some(s)
    }

    /// Boundary points hit by `n` rays from an interior point.
    pub fn boundary_samples(&self, n: usize) -> Result<Vec<Vec<f64>>, BergmanError> {
        let c = self.interior_point()?;
        let dirs = sphere_directions(self.real_dim(), n);
        let mut out = Vec::with_capacity(n);
        for u in dirs {
            let s = self.ray_exit(&c, &u).ok_or(BergmanError::Unbounded)?;
            out.push(c.iter().zip(&u).map(|(a, b)| a + s * b).collect());
        }
        Ok(out)
    }

    /// Levi form at `x` restricted to the complex tangent space; returns
    /// its smallest eigenvalue (`None` when `d = 1`).
    pub fn levi_min(&self, x: &[f64]) -> Option<f64> {
        let d = self.dim;
        if d < 2 {
            return None;
        }
        let g = self.gradient(x);
        let h = self.hessian(x);
        // ∂ρ/∂z_i and the complex Hessian ∂²ρ/∂z_i∂z̄_j
        let a: Vec<Complex<f64>> = (0..d)
            .map(|i| Complex::new(0.5 * g[2 * i], -0.5 * g[2 * i + 1]))
            .collect();
        let cplx = DMatrix::from_fn(d, d, |i, j| {
            let (xi, yi, xj, yj) = (2 * i, 2 * i + 1, 2 * j, 2 * j + 1);
            Complex::new(
                0.25 * (h[xi][xj] + h[yi][yj]),
                0.25 * (h[xi][yj] - h[yi][xj]),
            )
        });
        // orthonormal basis of {v : Σ a_i v_i = 0} = conj(a)^⊥
        let normal: Vec<Complex<f64>> = a.iter().map(|c| c.conj()).collect();
        let nn = normal.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let mut basis: Vec<Vec<Complex<f64>>> = vec![];
        for k in 0..d {
            let mut v = vec![Complex::new(0.0, 0.0); d];
            v[k] = Complex::new(1.0, 0.0);
            for b in std::iter::once(normal.iter().map(|c| c / nn).collect::<Vec<_>>())
                .chain(basis.clone())
            {
                let ip: Complex<f64> = v.iter().zip(&b).map(|(x, y)| x * y.conj()).sum();
                for (vi, bi) in v.iter_mut().zip(&b) {
                    *vi -= ip * bi;
                }
            }
            let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-8 && basis.len() < d - 1 {
                basis.push(v.iter().map(|c| c / norm).collect());
            }
        }
        let b = DMatrix::from_fn(d, basis.len(), |i, k| basis[k][i]);
        let restricted = b.adjoint() * cplx * &b;
        let eig = restricted.symmetric_eigenvalues();
        Some(eig.iter().fold(f64::INFINITY, |m, v| m.min(*v)))
    }

    /// Checks nonemptiness, boundedness, `∇ρ ≠ 0` and Levi positivity on
    /// `n` boundary samples.
    pub fn validate(&self, n: usize) -> Result<DomainReport, BergmanError> {
        let pts = self.boundary_samples(n)?;
        let mut min_grad = f64::INFINITY;
        let mut min_levi: Option<f64> = None;
        for p in &pts {
            let g = self.gradient(p).iter().map(|v| v * v).sum::<f64>().sqrt();
            min_grad = min_grad.min(g);
            if g < 1e-10 {
                return Err(BergmanError::DegenerateBoundary(p.clone()));
            }
            if let Some(l) = self.levi_min(p) {
                let gl = l / g;
                if !(gl > 0.0) {
                    return Err(BergmanError::NotPseudoconvex {
                        point: p.clone(),
                        levi: gl,
                    });
                }
                min_levi = Some(min_levi.map_or(gl, |m: f64| m.min(gl)));
            }
        }
        let diameter = pts
            .iter()
            .enumerate()
            .flat_map(|(i, p)| pts[i + 1..].iter().map(move |q| (p, q)))
            .map(|(p, q)| {
                p.iter()
                    .zip(q)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        Ok(DomainReport {
            boundary_samples: pts.len(),
            min_gradient: min_grad,
            min_levi,
            diameter,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_boundary_and_distance() {
        let d = DomainFamily::builtin("disc", &[1.0])
            .unwrap()
            .at(0.0)
            .unwrap();
        for p in d.boundary_samples(16).unwrap() {
            assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-13);
        }
        assert!(d.contains(&[0.5, 0.5]) && !d.contains(&[0.8, 0.8]));
        assert_eq!(d.distance_estimate(&[0.0, 0.0]), f64::NEG_INFINITY);
        let rep = d.validate(32).unwrap();
        assert!(rep.min_levi.is_none());
        assert!((rep.diameter - 2.0).abs() < 1e-2);
    }

    #[test]
    fn ball_levi_form_is_positive() {
        let b = DomainFamily::builtin("ball", &[2.0])
            .unwrap()
            .at(0.0)
            .unwrap();
        // ρ = |z|² − 1 has complex Hessian I, so the restricted form is 1/|∇ρ| = 1/2
        let rep = b.validate(64).unwrap();
        assert!((rep.min_levi.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_pseudoconvex_boundary_is_rejected() {
        // a thin tube over a dented, non-convex base in Re z: the Levi form
        // is a quarter of the base curve's Hessian, negative along the dent
        let f = DomainFamily::from_expr(
            "x1^2 + x2^2 - 1 + 1.5*exp(-6*((x1 - 1)^2 + x2^2)) + 0.1*(y1^2 + y2^2)",
            2,
            (0.0, 0.0),
            vec![-4.0; 4],
            vec![4.0; 4],
        )
        .unwrap();
        let r = f.at(0.0).unwrap().validate(512);
        assert!(
            matches!(r, Err(BergmanError::NotPseudoconvex { .. })),
            "{r:?}"
        );
    }

    #[test]
    fn empty_and_unbounded_domains() {
        let e = DomainFamily::fixed("|z1|^2 + 1", 1, 2.0)
            .unwrap()
            .at(0.0)
            .unwrap();
        assert!(matches!(e.validate(8), Err(BergmanError::EmptyDomain)));
        let u = DomainFamily::fixed("x1 - 0.5", 1, 2.0)
            .unwrap()
            .at(0.0)
            .unwrap();
        assert!(matches!(u.validate(8), Err(BergmanError::Unbounded)));
    }

    #[test]
    fn rotated_family_rotates() {
        let f = DomainFamily::builtin("ellipsoid", &[1.0, 0.5]).unwrap();
        let (s, c) = 0.6f64.sin_cos();
        let rinv = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
        let g = f.transformed(&rinv, "rot").at(0.0).unwrap();
        let f0 = f.at(0.0).unwrap();
        let z = [0.3, 0.2];
        let rz = [c * z[0] - s * z[1], s * z[0] + c * z[1]];
        assert!((g.rho(&rz) - f0.rho(&z)).abs() < 1e-14);
    }
}
