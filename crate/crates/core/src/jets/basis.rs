use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, LazyLock, RwLock};

/// Exponent vector of a monomial `x^α`.
///
/// Ordered graded-lexicographically: first by total degree, then with larger
/// exponents on earlier variables first (`x² < xy < y²`).
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn unit(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        MultiIndex(e)
    }

    /// Total degree |α|.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order()
            .cmp(&other.order())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Dense monomial basis of `P_N(R^d)`, shared by every jet with the same
/// `(dim, degree)`.
///
/// Ranks are graded, so the monomials of degree `≤ n` always form the prefix
/// `0..len_upto(n)`. Truncation and padding are therefore slice operations.
pub struct JetBasis {
    dim: usize,
    degree: usize,
    indices: Vec<MultiIndex>,
    lookup: HashMap<Vec<u32>, usize>,
    offsets: Vec<usize>,
    products: Vec<[u32; 3]>,
    derivs: Vec<Vec<(u32, u32, f64)>>,
}

impl fmt::Debug for JetBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetBasis")
            .field("dim", &self.dim)
            .field("degree", &self.degree)
            .field("len", &self.indices.len())
            .finish()
    }
}

type BasisCache = RwLock<HashMap<(usize, usize), Arc<JetBasis>>>;

static CACHE: LazyLock<BasisCache> = LazyLock::new(|| RwLock::new(HashMap::new()));

fn monomials_of_degree(dim: usize, k: u32) -> Vec<MultiIndex> {
    fn rec(dim: usize, pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if pos + 1 == dim {
            cur[pos] = left;
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for a in (0..=left).rev() {
            cur[pos] = a;
            rec(dim, pos + 1, left - a, cur, out);
        }
    }
    if dim == 0 {
        return if k == 0 {
            vec![MultiIndex(vec![])]
        } else {
            vec![]
        };
    }
    let mut out = Vec::new();
    rec(dim, 0, k, &mut vec![0; dim], &mut out);
    out
}

impl JetBasis {
    /// Shared basis for `(dim, degree)`, built once per process.
    pub fn get(dim: usize, degree: usize) -> Arc<JetBasis> {
        if let Some(b) = CACHE.read().unwrap().get(&(dim, degree)) {
            return b.clone();
        }
        let b = Arc::new(JetBasis::build(dim, degree));
        CACHE
            .write()
            .unwrap()
            .entry((dim, degree))
            .or_insert(b)
            .clone()
    }

    fn build(dim: usize, degree: usize) -> JetBasis {
        let mut indices = Vec::new();
        let mut offsets = vec![0];
        for k in 0..=degree {
            indices.extend(monomials_of_degree(dim, k as u32));
            offsets.push(indices.len());
        }
        let lookup: HashMap<Vec<u32>, usize> = indices
            .iter()
            .enumerate()
            .map(|(r, a)| (a.0.clone(), r))
            .collect();
        let mut products = Vec::new();
        for (i, a) in indices.iter().enumerate() {
            let room = degree - a.order() as usize;
            for (j, b) in indices[..offsets[room + 1]].iter().enumerate() {
                let k = lookup[&a.add(b).0];
                products.push([i as u32, j as u32, k as u32]);
            }
        }
        let mut derivs = vec![Vec::new(); dim];
        if degree > 0 {
            for (r, a) in indices.iter().enumerate() {
                for (l, table) in derivs.iter_mut().enumerate() {
                    if a.0[l] > 0 {
                        let mut b = a.0.clone();
                        b[l] -= 1;
                        table.push((r as u32, lookup[&b] as u32, a.0[l] as f64));
                    }
                }
            }
        }
        JetBasis {
            dim,
            degree,
            indices,
            lookup,
            offsets,
            products,
            derivs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of monomials of degree at most `n`.
    pub fn len_upto(&self, n: usize) -> usize {
        self.offsets[n.min(self.degree) + 1]
    }

    /// Rank range of the homogeneous degree-`k` monomials.
    pub fn degree_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    #[allow(clippy::should_implement_trait)]
    pub fn index(&self, rank: usize) -> &MultiIndex {
        &self.indices[rank]
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn rank(&self, alpha: &[u32]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }

    /// Triples `(i, j, k)` with `x^{α_i} x^{α_j} = x^{α_k}` and `|α_k| ≤ N`.
    pub(crate) fn products(&self) -> &[[u32; 3]] {
        &self.products
    }

    /// `(source rank, target rank, factor)` for `∂/∂x_l`; targets live in the
    /// degree `N-1` basis, whose ranks coincide with this one's prefix.
    pub(crate) fn deriv_table(&self, l: usize) -> &[(u32, u32, f64)] {
        &self.derivs[l]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_lex_order() {
        let b = JetBasis::get(2, 2);
        let got: Vec<Vec<u32>> = b.indices().iter().map(|a| a.0.clone()).collect();
        assert_eq!(
            got,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        let mut sorted = b.indices().to_vec();
        sorted.sort();
        assert_eq!(sorted, b.indices());
    }

    #[test]
    fn sizes_match_binomials() {
        // C(d+N, N)
        assert_eq!(JetBasis::get(3, 4).len(), 35);
        assert_eq!(JetBasis::get(4, 4).len(), 70);
        assert_eq!(JetBasis::get(0, 3).len(), 1);
        assert_eq!(JetBasis::get(2, 5).len_upto(2), 6);
    }
}
