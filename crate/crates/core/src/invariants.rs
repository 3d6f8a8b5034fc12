//! Jet invariants of frames: the metric in normal coordinates (`S`) and the
//! transition between two normal charts (`T`), assembled over a ball atlas
//! into a [`JetSignature`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jets::{jet_compose, jet_invert, Jet, JetError, JetMap, DEFAULT_COND_BOUND};
use crate::metric::{
    exp_jet, injectivity_radius_floor, log_map, norm_at, sym_index, sym_len, ChartMetric, Frame,
    GeodesicOptions, InjectivityNet, MetricError,
};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("frame {index} is not orthonormal (defect {defect:.3e})")]
    NotOrthonormal { index: usize, defect: f64 },
    #[error("degree {n} exceeds the configured maximum {max}")]
    DegreeTooHigh { n: usize, max: usize },
    #[error("base points too far apart: distance {dist:.4} ≥ limit {limit:.4}")]
    TooFar { dist: f64, limit: f64 },
    #[error("invalid atlas: {0}")]
    Atlas(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantOptions {
    pub geodesic: GeodesicOptions,
    pub max_degree: usize,
    /// Accepted deviation of a frame's Gram matrix from the identity.
    pub frame_tol: f64,
    pub cond_bound: f64,
    /// Upper bound for `dist(p₁, p₂)` in the transition invariant.
    pub max_distance: f64,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        InvariantOptions {
            geodesic: GeodesicOptions::default(),
            max_degree: 4,
            frame_tol: 1e-8,
            cond_bound: DEFAULT_COND_BOUND,
            max_distance: f64::INFINITY,
        }
    }
}

fn check_frame(
    m: &dyn ChartMetric,
    f: &Frame,
    index: usize,
    opts: &InvariantOptions,
) -> Result<(), InvariantError> {
    let defect = f.orthonormality_defect(m)?;
    if defect > opts.frame_tol {
        return Err(InvariantError::NotOrthonormal { index, defect });
    }
    Ok(())
}

fn check_degree(n: usize, opts: &InvariantOptions) -> Result<(), InvariantError> {
    if n > opts.max_degree {
        return Err(InvariantError::DegreeTooHigh {
            n,
            max: opts.max_degree,
        });
    }
    Ok(())
}

/// `(exp_p ∘ L_β)* g` as a jet of degree `n` at the origin, packed
/// symmetric values.
pub fn s_invariant(
    m: &dyn ChartMetric,
    frame: &Frame,
    n: usize,
    opts: &InvariantOptions,
) -> Result<Jet, InvariantError> {
    check_degree(n, opts)?;
    check_frame(m, frame, 0, opts)?;
    let d = m.dim();
    let e = exp_jet(
        m,
        &frame.point,
        &vec![0.0; d],
        &frame.basis,
        n + 1,
        &opts.geodesic,
    )?;
    let jac: Vec<Vec<Jet>> = e
        .iter()
        .map(|ea| (0..d).map(|b| ea.derivative(b)).collect())
        .collect();
    let e_n: Vec<Jet> = e.iter().map(|c| c.truncate(n)).collect::<Result<_, _>>()?;
    let g = m.eval_jet(&e_n)?;
    let mut parts = Vec::with_capacity(sym_len(d));
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
            parts.push(acc);
        }
    }
    Ok(Jet::stack(&parts)?)
}

/// `(exp_{p₁} ∘ L_{β₁})⁻¹ ∘ (exp_{p₂} ∘ L_{β₂})` as a jet of degree `n` at
/// the origin, values in `R^d`.
pub fn t_invariant(
    m: &dyn ChartMetric,
    f1: &Frame,
    f2: &Frame,
    n: usize,
    opts: &InvariantOptions,
) -> Result<Jet, InvariantError> {
    check_degree(n, opts)?;
    check_frame(m, f1, 0, opts)?;
    check_frame(m, f2, 1, opts)?;
    let d = m.dim();
    let v = log_map(m, &f1.point, &f2.point, &opts.geodesic)?;
    let dist = norm_at(m, &f1.point, &v)?;
    if dist >= opts.max_distance {
        return Err(InvariantError::TooFar {
            dist,
            limit: opts.max_distance,
        });
    }
    let y_star = f1
        .coords_of(&v)
        .ok_or(InvariantError::Jet(JetError::Singular))?;
    let (e2, e1r) = par::join(
        || exp_jet(m, &f2.point, &vec![0.0; d], &f2.basis, n, &opts.geodesic),
        || exp_jet(m, &f1.point, &v, &f1.basis, n, &opts.geodesic),
    );
    let (e2, e1r) = (e2?, e1r?);
    let c: Vec<f64> = e1r.iter().map(|j| j.value()).collect();
    let inv = jet_invert(&JetMap::new(e1r)?.centered(), opts.cond_bound)?;
    let inner: Vec<Jet> = e2.into_iter().zip(&c).map(|(j, ci)| j - *ci).collect();
    let t = jet_compose(&inv, &JetMap::new(inner)?, true)?;
    let parts: Vec<Jet> = t
        .into_components()
        .into_iter()
        .zip(&y_star)
        .map(|(j, y)| j + *y)
        .collect();
    Ok(Jet::stack(&parts)?)
}

/// Frames with balls of radius `delta` and the index pairs whose balls
/// overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallAtlas {
    pub frames: Vec<Frame>,
    pub delta: f64,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasOptions {
    pub geodesic: GeodesicOptions,
    pub frame_tol: f64,
    /// Net used to certify that `2δ` lies below the injectivity floor at
    /// every base point; `None` skips the check.
    pub injectivity_net: Option<InjectivityNet>,
}

impl Default for AtlasOptions {
    fn default() -> Self {
        AtlasOptions {
            geodesic: GeodesicOptions::default(),
            frame_tol: 1e-8,
            injectivity_net: Some(InjectivityNet {
                directions: 32,
                radii: 8,
            }),
        }
    }
}

impl BallAtlas {
    /// Atlas with explicit edges; checks index sanity and distinct points.
    pub fn with_edges(
        frames: Vec<Frame>,
        delta: f64,
        mut edges: Vec<(usize, usize)>,
    ) -> Result<BallAtlas, InvariantError> {
        if frames.is_empty() {
            return Err(InvariantError::Atlas("no frames".into()));
        }
        if !(delta > 0.0) {
            return Err(InvariantError::Atlas(format!(
                "radius must be positive, got {delta}"
            )));
        }
        for (a, fa) in frames.iter().enumerate() {
            for fb in &frames[a + 1..] {
                if fa.point == fb.point {
                    return Err(InvariantError::Atlas(format!(
                        "base point {:?} repeated",
                        fa.point
                    )));
                }
            }
        }
        for &(i, j) in &edges {
            if i >= j || j >= frames.len() {
                return Err(InvariantError::Atlas(format!("bad edge ({i}, {j})")));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(BallAtlas {
            frames,
            delta,
            edges,
        })
    }

    /// Validated atlas whose edges are the pairs at distance `< 2δ`.
    pub fn build(
        m: &dyn ChartMetric,
        frames: Vec<Frame>,
        delta: f64,
        opts: &AtlasOptions,
    ) -> Result<BallAtlas, InvariantError> {
        let mut atlas = BallAtlas::with_edges(frames, delta, vec![])?;
        atlas.edges = atlas.overlapping_pairs(m, &opts.geodesic)?;
        atlas.validate(m, opts)?;
        Ok(atlas)
    }

    /// Pairs `(i, j)`, `i < j`, with `dist(pᵢ, pⱼ) < 2δ` (strict).
    pub fn overlapping_pairs(
        &self,
        m: &dyn ChartMetric,
        geo: &GeodesicOptions,
    ) -> Result<Vec<(usize, usize)>, InvariantError> {
        let k = self.frames.len();
        let pairs: Vec<(usize, usize)> = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .collect();
        let limit = 2.0 * self.delta;
        let hits = par::map_slice(&pairs, |&(i, j)| -> Result<bool, InvariantError> {
            let (p, q) = (&self.frames[i].point, &self.frames[j].point);
            match log_map(m, p, q, geo) {
                Ok(v) => Ok(norm_at(m, p, &v)? < limit),
                // no geodesic within reach: the balls are far apart
                Err(MetricError::ShootingFailed { .. } | MetricError::GeodesicExit(_)) => Ok(false),
                Err(e) => Err(e.into()),
            }
        });
        let mut edges = vec![];
        for (pair, hit) in pairs.into_iter().zip(hits) {
            if hit? {
                edges.push(pair);
            }
        }
        Ok(edges)
    }

    /// Frame orthonormality and, if requested, `2δ ≤` injectivity floor.
    pub fn validate(&self, m: &dyn ChartMetric, opts: &AtlasOptions) -> Result<(), InvariantError> {
        for (i, f) in self.frames.iter().enumerate() {
            let defect = f.orthonormality_defect(m)?;
            if defect > opts.frame_tol {
                return Err(InvariantError::NotOrthonormal { index: i, defect });
            }
        }
        if let Some(net) = opts.injectivity_net {
            let need = 2.0 * self.delta;
            let r_max = need * (1.0 + 1.0 / net.radii as f64);
            let floors = par::map_slice(&self.frames, |f| {
                injectivity_radius_floor(m, &f.point, r_max, &net, &opts.geodesic)
            });
            for (i, floor) in floors.into_iter().enumerate() {
                if floor < need {
                    return Err(InvariantError::Atlas(format!(
                        "injectivity floor {floor:.4} at frame {i} is below 2δ = {need:.4}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// The atlas with frame `perm[k]` placed at position `k`.
    pub fn permuted(&self, perm: &[usize]) -> BallAtlas {
        let mut inv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let frames = perm.iter().map(|&p| self.frames[p].clone()).collect();
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (inv[i], inv[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        edges.sort_unstable();
        BallAtlas {
            frames,
            delta: self.delta,
            edges,
        }
    }
}

/// A transition jet together with its edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeJet {
    pub i: usize,
    pub j: usize,
    pub jet: Jet,
}

/// The truncated signature: one `S` jet per frame, one `T` jet per edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetSignature {
    pub degree: usize,
    pub s_jets: Vec<Jet>,
    pub t_jets: Vec<EdgeJet>,
}

/// Location of the largest coefficient gap between two signatures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureGap {
    pub gap: f64,
    /// `"s"` or `"t"`.
    pub kind: String,
    /// Frame index for `s`, edge position for `t`.
    pub index: usize,
    pub multi_index: Vec<u32>,
    pub component: usize,
}

impl JetSignature {
    fn jets(&self) -> impl Iterator<Item = (&'static str, usize, &Jet)> {
        self.s_jets
            .iter()
            .enumerate()
            .map(|(k, j)| ("s", k, j))
            .chain(
                self.t_jets
                    .iter()
                    .enumerate()
                    .map(|(k, e)| ("t", k, &e.jet)),
            )
    }

    fn same_shape(&self, other: &JetSignature) -> bool {
        self.degree == other.degree
            && self.s_jets.len() == other.s_jets.len()
            && self.t_jets.len() == other.t_jets.len()
            && self
                .t_jets
                .iter()
                .zip(&other.t_jets)
                .all(|(a, b)| (a.i, a.j) == (b.i, b.j))
    }

    /// Largest coefficientwise gap and where it occurs; `None` when the
    /// signatures are not comparable (different sizes, edges or degree).
    pub fn worst_gap(&self, other: &JetSignature) -> Option<SignatureGap> {
        if !self.same_shape(other) {
            return None;
        }
        let mut worst = SignatureGap {
            gap: 0.0,
            kind: "s".into(),
            index: 0,
            multi_index: vec![],
            component: 0,
        };
        for ((kind, k, a), (_, _, b)) in self.jets().zip(other.jets()) {
            if a.value_dim() != b.value_dim() || a.dim_in() != b.dim_in() {
                return None;
            }
            for ((alpha, va), (_, vb)) in a.terms().zip(b.terms()) {
                for (c, (x, y)) in va.iter().zip(vb).enumerate() {
                    let gap = (x - y).abs();
                    if gap > worst.gap || gap.is_nan() {
                        worst = SignatureGap {
                            gap,
                            kind: kind.into(),
                            index: k,
                            multi_index: alpha.0.clone(),
                            component: c,
                        };
                    }
                }
            }
        }
        Some(worst)
    }

    /// Max coefficientwise absolute difference (`∞` if incomparable).
    pub fn distance(&self, other: &JetSignature) -> f64 {
        self.worst_gap(other).map_or(f64::INFINITY, |g| g.gap)
    }

    /// All coefficients in a fixed order, for least-squares residuals.
    pub fn flatten(&self) -> Vec<f64> {
        self.jets()
            .flat_map(|(_, _, j)| j.coeffs().to_vec())
            .collect()
    }

    pub fn truncate(&self, n: usize) -> Result<JetSignature, JetError> {
        Ok(JetSignature {
            degree: n,
            s_jets: self
                .s_jets
                .iter()
                .map(|j| j.truncate(n))
                .collect::<Result<_, _>>()?,
            t_jets: self
                .t_jets
                .iter()
                .map(|e| {
                    Ok(EdgeJet {
                        i: e.i,
                        j: e.j,
                        jet: e.jet.truncate(n)?,
                    })
                })
                .collect::<Result<_, JetError>>()?,
        })
    }
}

/// `S` for every frame and `T` for every edge of the atlas.
pub fn signature(
    m: &dyn ChartMetric,
    atlas: &BallAtlas,
    n: usize,
    opts: &InvariantOptions,
) -> Result<JetSignature, InvariantError> {
    let k = atlas.frames.len();
    let ne = atlas.edges.len();
    let jobs = par::map_range(k + ne, |idx| {
        if idx < k {
            s_invariant(m, &atlas.frames[idx], n, opts).map_err(|e| relabel(e, idx))
        } else {
            let (i, j) = atlas.edges[idx - k];
            t_invariant(m, &atlas.frames[i], &atlas.frames[j], n, opts).map_err(|e| match e {
                InvariantError::NotOrthonormal { index, defect } => {
                    InvariantError::NotOrthonormal {
                        index: if index == 0 { i } else { j },
                        defect,
                    }
                }
                other => other,
            })
        }
    });
    let mut s_jets = Vec::with_capacity(k);
    let mut t_jets = Vec::with_capacity(ne);
    for (idx, r) in jobs.into_iter().enumerate() {
        let jet = r?;
        if idx < k {
            s_jets.push(jet);
        } else {
            let (i, j) = atlas.edges[idx - k];
            t_jets.push(EdgeJet { i, j, jet });
        }
    }
    Ok(JetSignature {
        degree: n,
        s_jets,
        t_jets,
    })
}

fn relabel(e: InvariantError, index: usize) -> InvariantError {
    match e {
        InvariantError::NotOrthonormal { defect, .. } => {
            InvariantError::NotOrthonormal { index, defect }
        }
        other => other,
    }
}

/// `S` jet as a matrix-valued polynomial evaluated at `x`.
pub fn s_matrix_at(s: &Jet, x: &[f64]) -> DMatrix<f64> {
    let d = s.dim_in();
    crate::metric::unpack_sym(&s.eval(x), d)
}
