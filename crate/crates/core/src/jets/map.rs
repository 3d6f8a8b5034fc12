use nalgebra::DMatrix;

use super::basis::JetBasis;
use super::jet::Jet;
use super::JetError;

/// Default bound on the condition number of a linear part accepted by
/// [`jet_invert`].
pub const DEFAULT_COND_BOUND: f64 = 1e8;

/// A truncated map `R^d → R^e`: `e` scalar jets over a common domain.
#[derive(Clone, Debug, PartialEq)]
pub struct JetMap {
    components: Vec<Jet>,
}

/// All monomials `g^α`, `|α| ≤ degree`, of a list of scalar jets, in
/// graded-lex order of `α`. Built once and reused by every polynomial
/// evaluated at the same arguments.
pub struct Powers {
    basis: std::sync::Arc<JetBasis>,
    values: Vec<Jet>,
}

impl Powers {
    pub fn new(args: &[Jet], degree: usize) -> Powers {
        assert!(!args.is_empty(), "powers of an empty argument list");
        let basis = JetBasis::get(args.len(), degree);
        let mut values: Vec<Jet> = Vec::with_capacity(basis.len());
        values.push(args[0].constant_like(1.0));
        for r in 1..basis.len() {
            let alpha = &basis.index(r).0;
            let l = alpha.iter().position(|&a| a > 0).unwrap();
            let mut beta = alpha.clone();
            beta[l] -= 1;
            let rb = basis.rank(&beta).unwrap();
            let v = values[rb].try_mul(&args[l]).expect("power of scalar jets");
            values.push(v);
        }
        Powers { basis, values }
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    /// Evaluates the polynomial `poly` (a jet over `args.len()` variables,
    /// any value dimension, degree `≤ self.degree()`) at the stored arguments.
    /// Returns one scalar jet per value component.
    pub fn eval(&self, poly: &Jet) -> Vec<Jet> {
        assert_eq!(poly.dim_in(), self.basis.dim());
        assert!(poly.degree() <= self.degree());
        let vd = poly.value_dim();
        let mut out: Vec<Jet> = (0..vd).map(|_| self.values[0].zeros_like()).collect();
        for (r, chunk) in poly.coeffs().chunks(vd).enumerate() {
            for (c, &a) in chunk.iter().enumerate() {
                if a != 0.0 {
                    out[c].add_scaled(&self.values[r], a);
                }
            }
        }
        out
    }
}

impl JetMap {
    pub fn new(components: Vec<Jet>) -> Result<JetMap, JetError> {
        let first = components
            .first()
            .ok_or_else(|| JetError::DimensionMismatch("jet map needs ≥ 1 component".into()))?;
        for c in &components {
            if c.value_dim() != 1 {
                return Err(JetError::NotScalar);
            }
            if c.dim_in() != first.dim_in() || c.degree() != first.degree() {
                return Err(JetError::DimensionMismatch(
                    "jet map components must share dim_in and degree".into(),
                ));
            }
        }
        Ok(JetMap { components })
    }

    pub fn from_jet(j: &Jet) -> JetMap {
        JetMap {
            components: j.components(),
        }
    }

    pub fn to_jet(&self) -> Jet {
        Jet::stack(&self.components).expect("components share a domain")
    }

    pub fn identity(dim: usize, degree: usize) -> JetMap {
        JetMap {
            components: (0..dim)
                .map(|i| Jet::variable(dim, degree, i, 0.0))
                .collect(),
        }
    }

    /// `x ↦ c + A x`.
    pub fn affine(a: &DMatrix<f64>, c: &[f64], degree: usize) -> JetMap {
        let d = a.ncols();
        let components = (0..a.nrows())
            .map(|i| {
                let mut j = Jet::constant(d, degree, c[i]);
                if degree > 0 {
                    for k in 0..d {
                        j.coeffs_mut()[1 + k] = a[(i, k)];
                    }
                }
                j
            })
            .collect();
        JetMap { components }
    }

    pub fn components(&self) -> &[Jet] {
        &self.components
    }

    pub fn into_components(self) -> Vec<Jet> {
        self.components
    }

    pub fn dim_in(&self) -> usize {
        self.components[0].dim_in()
    }

    pub fn dim_out(&self) -> usize {
        self.components.len()
    }

    pub fn degree(&self) -> usize {
        self.components[0].degree()
    }

    pub fn constant(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.value()).collect()
    }

    /// Jacobian at 0, `e × d`.
    pub fn linear_part(&self) -> DMatrix<f64> {
        let d = self.dim_in();
        DMatrix::from_fn(self.dim_out(), d, |i, k| {
            if self.degree() == 0 {
                0.0
            } else {
                self.components[i].coeffs()[1 + k]
            }
        })
    }

    /// Removes the constant term.
    pub fn centered(&self) -> JetMap {
        let mut m = self.clone();
        for c in &mut m.components {
            c.coeffs_mut()[0] = 0.0;
        }
        m
    }

    pub fn truncate(&self, n: usize) -> Result<JetMap, JetError> {
        Ok(JetMap {
            components: self
                .components
                .iter()
                .map(|c| c.truncate(n))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn max_abs_diff(&self, other: &JetMap) -> Result<f64, JetError> {
        if self.dim_out() != other.dim_out() {
            return Err(JetError::DimensionMismatch(
                "component counts differ".into(),
            ));
        }
        let mut m = 0.0_f64;
        for (a, b) in self.components.iter().zip(&other.components) {
            m = m.max(a.max_abs_diff(b)?);
        }
        Ok(m)
    }
}

/// Taylor coefficients of `f ∘ g`, truncated at `g`'s degree.
///
/// `g` must have a zero constant term unless `recenter` is set, in which case
/// `f` is treated as the polynomial it stores and substituted exactly.
pub fn jet_compose(f: &JetMap, g: &JetMap, recenter: bool) -> Result<JetMap, JetError> {
    if f.dim_in() != g.dim_out() {
        return Err(JetError::DimensionMismatch(format!(
            "compose: f takes {} inputs, g yields {}",
            f.dim_in(),
            g.dim_out()
        )));
    }
    if !recenter {
        if let Some(c) = g.constant().into_iter().find(|c| *c != 0.0) {
            return Err(JetError::NonzeroConstant(c));
        }
    }
    let powers = Powers::new(g.components(), f.degree());
    let components = f
        .components()
        .iter()
        .map(|fc| powers.eval(fc).pop().unwrap())
        .collect();
    Ok(JetMap { components })
}

/// Compositional inverse of `f` with `f(0) = 0`, exact through degree `N`.
///
/// Solved degree by degree: each pass of `h ← h − A⁻¹(f∘h − id)` fixes one
/// more homogeneous part.
pub fn jet_invert(f: &JetMap, cond_bound: f64) -> Result<JetMap, JetError> {
    let d = f.dim_in();
    if f.dim_out() != d {
        return Err(JetError::DimensionMismatch(
            "inverse needs a square map".into(),
        ));
    }
    if let Some(c) = f.constant().into_iter().find(|c| *c != 0.0) {
        return Err(JetError::NonzeroConstant(c));
    }
    let n = f.degree();
    if n == 0 {
        return Err(JetError::Singular);
    }
    let a = f.linear_part();
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smin == 0.0 || !smin.is_finite() {
        return Err(JetError::Singular);
    }
    let cond = smax / smin;
    if cond > cond_bound {
        return Err(JetError::IllConditioned {
            cond,
            bound: cond_bound,
        });
    }
    let a_inv = a.try_inverse().ok_or(JetError::Singular)?;
    let id = JetMap::identity(d, n);
    let mut h = JetMap::affine(&a_inv, &vec![0.0; d], n);
    for _ in 1..n {
        let fh = jet_compose(f, &h, false)?;
        let resid: Vec<Jet> = fh
            .components()
            .iter()
            .zip(id.components())
            .map(|(a, b)| a.try_sub(b))
            .collect::<Result<_, _>>()?;
        for (i, hc) in h.components.iter_mut().enumerate() {
            for (k, r) in resid.iter().enumerate() {
                let w = a_inv[(i, k)];
                if w != 0.0 {
                    hc.add_scaled(r, -w);
                }
            }
        }
    }
    Ok(h)
}

/// `π_n` applied to a scalar or vector jet.
pub fn jet_truncate(f: &Jet, n: usize) -> Result<Jet, JetError> {
    f.truncate(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly1(terms: &[f64]) -> JetMap {
        let n = terms.len() - 1;
        let t: Vec<_> = terms
            .iter()
            .enumerate()
            .map(|(k, &c)| (vec![k as u32], vec![c]))
            .collect();
        JetMap::new(vec![Jet::from_terms(1, n, 1, &t).unwrap()]).unwrap()
    }

    #[test]
    fn compose_direct_expansion() {
        // f = x + x², g = 2x → 2x + 4x²
        let f = poly1(&[0.0, 1.0, 1.0]);
        let g = poly1(&[0.0, 2.0, 0.0]);
        let h = jet_compose(&f, &g, false).unwrap();
        assert_eq!(h.components()[0].coeffs(), &[0.0, 2.0, 4.0]);
    }

    #[test]
    fn compose_with_identity() {
        let f = JetMap::new(vec![
            Jet::from_terms(
                2,
                3,
                1,
                &[(vec![1, 0], vec![1.5]), (vec![1, 2], vec![-0.25])],
            )
            .unwrap(),
            Jet::from_terms(2, 3, 1, &[(vec![0, 0], vec![2.0]), (vec![0, 2], vec![0.5])]).unwrap(),
        ])
        .unwrap();
        let id = JetMap::identity(2, 3);
        assert_eq!(jet_compose(&f, &id, false).unwrap(), f);
    }

    #[test]
    fn compose_requires_recenter_flag() {
        let f = poly1(&[0.0, 1.0, 1.0]);
        let g = poly1(&[0.5, 1.0, 0.0]);
        assert!(matches!(
            jet_compose(&f, &g, false),
            Err(JetError::NonzeroConstant(_))
        ));
        // (0.5 + x) + (0.5 + x)² = 0.75 + 2x + x²
        let h = jet_compose(&f, &g, true).unwrap();
        assert_eq!(h.components()[0].coeffs(), &[0.75, 2.0, 1.0]);
    }

    #[test]
    fn invert_quadratic() {
        // f = 2y + y² → g = x/2 − x²/8
        let f = poly1(&[0.0, 2.0, 1.0]);
        let g = jet_invert(&f, DEFAULT_COND_BOUND).unwrap();
        let c = g.components()[0].coeffs();
        assert!((c[1] - 0.5).abs() < 1e-15 && (c[2] + 0.125).abs() < 1e-15);
        let fg = jet_compose(&f, &g, false).unwrap();
        assert!(fg.max_abs_diff(&JetMap::identity(1, 2)).unwrap() < 1e-15);
    }

    #[test]
    fn invert_identity_and_rotation() {
        let id = JetMap::identity(3, 3);
        assert_eq!(jet_invert(&id, DEFAULT_COND_BOUND).unwrap(), id);
        let th: f64 = 0.7;
        let r = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let inv = jet_invert(&JetMap::affine(&r, &[0.0, 0.0], 3), DEFAULT_COND_BOUND).unwrap();
        let want = JetMap::affine(&r.transpose(), &[0.0, 0.0], 3);
        assert!(inv.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn invert_rejects_singular_and_ill_conditioned() {
        let f = poly1(&[0.0, 0.0, 1.0]);
        assert!(matches!(jet_invert(&f, 1e8), Err(JetError::Singular)));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-9]);
        let g = JetMap::affine(&a, &[0.0, 0.0], 2);
        assert!(matches!(
            jet_invert(&g, 1e8),
            Err(JetError::IllConditioned { .. })
        ));
    }
}
