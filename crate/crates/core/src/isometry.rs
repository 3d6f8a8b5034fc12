//! Isometries from matching signatures: the local maps on a ball atlas,
//! their consistency on overlaps, and continuation of a 1-jet along paths.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::invariants::{signature, BallAtlas, InvariantError, InvariantOptions};
use crate::metric::{
    exp_map, exp_with_jacobian, injectivity_radius_floor, log_map, metric_at, norm_at,
    sphere_directions, ChartMetric, GeodesicOptions, InjectivityNet, MetricError,
};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IsometryError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error("1-jet invariant violated: |Dᵀĝ D − g| = {0:.3e}")]
    NotIsometric(f64),
    #[error("orthogonality drift {drift:.3e} at path node {node} exceeds {tol:.1e}")]
    Drift { node: usize, drift: f64, tol: f64 },
    #[error(
        "ball chain broken at path node {node}: injectivity floor {floor:.4} below step {step:.4}"
    )]
    ChainBroken { node: usize, floor: f64, step: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Value and differential of a candidate isometry at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneJet {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub d: DMatrix<f64>,
}

impl OneJet {
    pub fn new(p: Vec<f64>, q: Vec<f64>, d: DMatrix<f64>) -> OneJet {
        OneJet { p, q, d }
    }

    /// `max |Dᵀ ĝ(q) D − g(p)|`.
    pub fn defect(&self, g: &dyn ChartMetric, gh: &dyn ChartMetric) -> Result<f64, MetricError> {
        let a = metric_at(g, &self.p)?;
        let b = metric_at(gh, &self.q)?;
        Ok((self.d.transpose() * b * &self.d - a).abs().max())
    }

    pub fn check(
        &self,
        g: &dyn ChartMetric,
        gh: &dyn ChartMetric,
        tol: f64,
    ) -> Result<(), IsometryError> {
        let defect = self.defect(g, gh)?;
        if defect > tol {
            return Err(IsometryError::NotIsometric(defect));
        }
        Ok(())
    }

    /// Nearest `D'` (polar factor) with `D'ᵀ ĝ D' = g`; returns the
    /// projected jet and the defect before projection.
    pub fn reorthonormalized(
        &self,
        g: &dyn ChartMetric,
        gh: &dyn ChartMetric,
    ) -> Result<(OneJet, f64), MetricError> {
        let a = metric_at(g, &self.p)?;
        let b = metric_at(gh, &self.q)?;
        let defect = (self.d.transpose() * &b * &self.d - &a).abs().max();
        let (ah, ahi) = sqrt_pair(&a);
        let (bh, bhi) = sqrt_pair(&b);
        let m = &bh * &self.d * &ahi;
        let svd = m.svd(true, true);
        let u = svd.u.unwrap() * svd.v_t.unwrap();
        let d = bhi * u * ah;
        Ok((
            OneJet {
                p: self.p.clone(),
                q: self.q.clone(),
                d,
            },
            defect,
        ))
    }
}

/// `(A^{1/2}, A^{-1/2})` for symmetric positive definite `A`.
fn sqrt_pair(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = a.clone().symmetric_eigen();
    let v = &eig.eigenvectors;
    let s = eig.eigenvalues.map(|x| x.sqrt());
    let si = s.map(|x| 1.0 / x);
    (
        v * DMatrix::from_diagonal(&s) * v.transpose(),
        v * DMatrix::from_diagonal(&si) * v.transpose(),
    )
}

/// Outcome of comparing two atlases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Match { distance: f64 },
    Mismatch { witness: Witness },
}

impl Verdict {
    pub fn is_match(&self) -> bool {
        matches!(self, Verdict::Match { .. })
    }
}

/// First violated condition, with the single worst coefficient for
/// signature mismatches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// `"frame_count"`, `"edges"`, `"s"` or `"t"`.
    pub kind: String,
    pub index: usize,
    pub edge: Option<(usize, usize)>,
    pub multi_index: Vec<u32>,
    pub component: usize,
    pub gap: f64,
}

/// Compares the atlases' frame counts, edge sets and degree-`n`
/// signatures.
pub fn check_atlas_isometry(
    g: &dyn ChartMetric,
    gh: &dyn ChartMetric,
    a: &BallAtlas,
    ah: &BallAtlas,
    n: usize,
    tol: f64,
    opts: &InvariantOptions,
) -> Result<Verdict, IsometryError> {
    let structural = |kind: &str, index: usize, edge: Option<(usize, usize)>| Witness {
        kind: kind.into(),
        index,
        edge,
        multi_index: vec![],
        component: 0,
        gap: f64::INFINITY,
    };
    if a.len() != ah.len() {
        return Ok(Verdict::Mismatch {
            witness: structural("frame_count", a.len().min(ah.len()), None),
        });
    }
    if a.edges != ah.edges {
        let k = a
            .edges
            .iter()
            .zip(&ah.edges)
            .position(|(x, y)| x != y)
            .unwrap_or(a.edges.len().min(ah.edges.len()));
        let edge = a.edges.get(k).or(ah.edges.get(k)).copied();
        return Ok(Verdict::Mismatch {
            witness: structural("edges", k, edge),
        });
    }
    let (s, sh) = par::join(|| signature(g, a, n, opts), || signature(gh, ah, n, opts));
    let (s, sh) = (s?, sh?);
    let gap = s
        .worst_gap(&sh)
        .ok_or_else(|| IsometryError::Invalid("signatures are not comparable".into()))?;
    if gap.gap < tol {
        return Ok(Verdict::Match { distance: gap.gap });
    }
    let edge = (gap.kind == "t").then(|| a.edges[gap.index]);
    Ok(Verdict::Mismatch {
        witness: Witness {
            kind: gap.kind,
            index: gap.index,
            edge,
            multi_index: gap.multi_index,
            component: gap.component,
            gap: gap.gap,
        },
    })
}

/// The maps `fᵢ = exp^ĝ_{p̂ᵢ} ∘ L̂ᵢ ∘ Lᵢ⁻¹ ∘ log^g_{pᵢ}` on the balls of a
/// matched pair of atlases.
#[derive(Clone)]
pub struct LocalIsometry {
    pub source: Arc<dyn ChartMetric>,
    pub target: Arc<dyn ChartMetric>,
    pub atlas: BallAtlas,
    pub target_atlas: BallAtlas,
    pub geodesic: GeodesicOptions,
}

impl LocalIsometry {
    pub fn new(
        source: Arc<dyn ChartMetric>,
        target: Arc<dyn ChartMetric>,
        atlas: BallAtlas,
        target_atlas: BallAtlas,
    ) -> Result<LocalIsometry, IsometryError> {
        if atlas.len() != target_atlas.len() {
            return Err(IsometryError::Invalid("atlases differ in size".into()));
        }
        Ok(LocalIsometry {
            source,
            target,
            atlas,
            target_atlas,
            geodesic: GeodesicOptions::default(),
        })
    }

    /// Differential of `fᵢ` at the centre, `L̂ᵢ Lᵢ⁻¹`.
    pub fn linear_part(&self, i: usize) -> Option<DMatrix<f64>> {
        let inv = self.atlas.frames[i].basis.clone().try_inverse()?;
        Some(&self.target_atlas.frames[i].basis * inv)
    }

    /// 1-jet of `fᵢ` at `pᵢ`.
    pub fn one_jet(&self, i: usize) -> Option<OneJet> {
        Some(OneJet::new(
            self.atlas.frames[i].point.clone(),
            self.target_atlas.frames[i].point.clone(),
            self.linear_part(i)?,
        ))
    }

    /// Points sampled in `Bᵢ ∩ Bⱼ` for every edge, `per_edge` each.
    pub fn overlap_samples(
        &self,
        per_edge: usize,
    ) -> Result<Vec<(usize, usize, Vec<f64>)>, IsometryError> {
        let g = self.source.as_ref();
        let d = g.dim();
        let delta = self.atlas.delta;
        let mut out = vec![];
        for &(i, j) in &self.atlas.edges {
            let (pi, pj) = (&self.atlas.frames[i].point, &self.atlas.frames[j].point);
            let v = log_map(g, pi, pj, &self.geodesic)?;
            let half: Vec<f64> = v.iter().map(|x| 0.5 * x).collect();
            let mid = exp_map(g, pi, &half, &self.geodesic)?;
            let dist = norm_at(g, pi, &v)?;
            let room = (delta - 0.5 * dist).max(0.0);
            let frame = crate::metric::orthonormal_frame(g, &mid, &DMatrix::identity(d, d))?;
            let dirs = sphere_directions(d, per_edge.max(1));
            let mut k = 0usize;
            let mut taken = 0usize;
            while taken < per_edge && k < 4 * per_edge + 8 {
                let u = &dirs[k % dirs.len()];
                // radii sweep (0, 0.9·room) deterministically
                let r = 0.9 * room * crate::qmc::radical_inverse(k as u64 + 1, 3);
                k += 1;
                let w: Vec<f64> = frame.apply(u).iter().map(|x| x * r).collect();
                let x = exp_map(g, &mid, &w, &self.geodesic)?;
                let di = norm_at(g, pi, &log_map(g, pi, &x, &self.geodesic)?)?;
                let dj = norm_at(g, pj, &log_map(g, pj, &x, &self.geodesic)?)?;
                if di < delta && dj < delta {
                    out.push((i, j, x));
                    taken += 1;
                }
            }
        }
        Ok(out)
    }

    /// `max |fᵢ(x) − fⱼ(x)|` over the samples.
    pub fn overlap_discrepancy(
        &self,
        samples: &[(usize, usize, Vec<f64>)],
    ) -> Result<f64, IsometryError> {
        let gaps = par::map_slice(samples, |(i, j, x)| -> Result<f64, IsometryError> {
            let a = local_map_eval(self, *i, x)?;
            let b = local_map_eval(self, *j, x)?;
            Ok(a.iter()
                .zip(&b)
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max))
        });
        gaps.into_iter().try_fold(0.0_f64, |m, g| Ok(m.max(g?)))
    }
}

/// `fᵢ(x)`, for `x` in the `δ`-ball about `pᵢ`.
pub fn local_map_eval(l: &LocalIsometry, i: usize, x: &[f64]) -> Result<Vec<f64>, IsometryError> {
    let f = l
        .atlas
        .frames
        .get(i)
        .ok_or_else(|| IsometryError::Invalid(format!("no ball {i}")))?;
    let fh = &l.target_atlas.frames[i];
    let v = log_map(l.source.as_ref(), &f.point, x, &l.geodesic)?;
    let dist = norm_at(l.source.as_ref(), &f.point, &v)?;
    if dist >= l.atlas.delta * (1.0 + 1e-9) {
        return Err(IsometryError::Invalid(format!(
            "point at distance {dist:.4} is outside ball {i} (radius {})",
            l.atlas.delta
        )));
    }
    let y = f
        .coords_of(&v)
        .ok_or_else(|| IsometryError::Invalid("degenerate frame".into()))?;
    Ok(exp_map(
        l.target.as_ref(),
        &fh.point,
        &fh.apply(&y),
        &l.geodesic,
    )?)
}

/// `|exp^ĝ_q(D v) − F(exp^g_p(v))|` (max norm) for a candidate map `F`;
/// `∞` if either side cannot be evaluated.
pub fn efp_residual(
    g: &dyn ChartMetric,
    gh: &dyn ChartMetric,
    j: &OneJet,
    v: &[f64],
    f: &dyn Fn(&[f64]) -> Option<Vec<f64>>,
    opts: &GeodesicOptions,
) -> f64 {
    let dv: Vec<f64> = (&j.d * nalgebra::DVector::from_column_slice(v))
        .iter()
        .copied()
        .collect();
    let Ok(lhs) = exp_map(gh, &j.q, &dv, opts) else {
        return f64::INFINITY;
    };
    let Some(rhs) = exp_map(g, &j.p, v, opts).ok().and_then(|x| f(&x)) else {
        return f64::INFINITY;
    };
    lhs.iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationOptions {
    pub geodesic: GeodesicOptions,
    /// Largest g-length of a single continuation step.
    pub step: f64,
    /// Allowed defect of the transported differential before projection.
    pub drift_tol: f64,
    /// Net for certifying that every step stays inside a normal ball;
    /// `None` skips the certificate.
    pub injectivity_net: Option<InjectivityNet>,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions {
            geodesic: GeodesicOptions::default(),
            step: 0.1,
            drift_tol: 1e-6,
            injectivity_net: Some(InjectivityNet {
                directions: 8,
                radii: 2,
            }),
        }
    }
}

/// Subdivides each polyline segment uniformly so that consecutive nodes
/// are at most `step` apart in g-length (estimated from the largest metric
/// eigenvalue at the segment ends and midpoint).
pub fn refine_path(
    g: &dyn ChartMetric,
    path: &[Vec<f64>],
    step: f64,
) -> Result<Vec<Vec<f64>>, IsometryError> {
    let mut out = vec![path[0].clone()];
    for w in path.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let mut scale = 0.0_f64;
        for p in [a, b, &mid] {
            let lam = metric_at(g, p)?.symmetric_eigenvalues().max();
            scale = scale.max(lam.sqrt());
        }
        let len: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
            * scale;
        let k = ((len / step).ceil() as usize).max(1);
        for s in 1..=k {
            let t = s as f64 / k as f64;
            out.push(a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect());
        }
    }
    Ok(out)
}

/// One continuation step `(pᵢ, qᵢ, Dᵢ) → (pᵢ₊₁, qᵢ₊₁, Dᵢ₊₁)`.
fn step_one_jet(
    g: &dyn ChartMetric,
    gh: &dyn ChartMetric,
    j: &OneJet,
    next: &[f64],
    opts: &PropagationOptions,
    node: usize,
) -> Result<OneJet, IsometryError> {
    let v = log_map(g, &j.p, next, &opts.geodesic)?;
    let (_, jg) = exp_with_jacobian(g, &j.p, &v, &opts.geodesic)?;
    let dv: Vec<f64> = (&j.d * nalgebra::DVector::from_column_slice(&v))
        .iter()
        .copied()
        .collect();
    let (q, jh) = exp_with_jacobian(gh, &j.q, &dv, &opts.geodesic)?;
    let jg_inv = jg.try_inverse().ok_or_else(|| {
        IsometryError::Invalid("exponential map is singular along the path".into())
    })?;
    let raw = OneJet::new(next.to_vec(), q, jh * &j.d * jg_inv);
    let (proj, drift) = raw.reorthonormalized(g, gh)?;
    if drift > opts.drift_tol {
        return Err(IsometryError::Drift {
            node,
            drift,
            tol: opts.drift_tol,
        });
    }
    Ok(proj)
}

/// Continues the 1-jet `j0` (at `path[0]`) along a polyline; returns the
/// jet at every refined node, starting with `j0` itself.
pub fn propagate_one_jet(
    g: &dyn ChartMetric,
    gh: &dyn ChartMetric,
    j0: &OneJet,
    path: &[Vec<f64>],
    opts: &PropagationOptions,
) -> Result<Vec<OneJet>, IsometryError> {
    if path.is_empty() || path[0] != j0.p {
        return Err(IsometryError::Invalid(
            "path must start at the seed point".into(),
        ));
    }
    j0.check(g, gh, opts.drift_tol.max(1e-8))?;
    let nodes = refine_path(g, path, opts.step)?;
    if let Some(net) = opts.injectivity_net {
        // each step must stay inside the normal ball on both sides
        let r_max = opts.step * (1.0 + 1.0 / net.radii as f64);
        let floors = par::map_slice(&nodes[..nodes.len() - 1], |p| {
            injectivity_radius_floor(g, p, r_max, &net, &opts.geodesic)
        });
        if let Some((node, floor)) = floors.into_iter().enumerate().find(|(_, f)| *f < opts.step) {
            return Err(IsometryError::ChainBroken {
                node,
                floor,
                step: opts.step,
            });
        }
    }
    let mut out = Vec::with_capacity(nodes.len());
    out.push(j0.clone());
    for (k, p) in nodes.iter().enumerate().skip(1) {
        let next = step_one_jet(g, gh, out.last().unwrap(), p, opts, k)?;
        out.push(next);
    }
    Ok(out)
}

/// `F(x)` for the isometry determined by `j0`, continued from `base` (the
/// seed point when `None`) along straight chart segments.
pub fn evaluate_global(
    g: &dyn ChartMetric,
    gh: &dyn ChartMetric,
    j0: &OneJet,
    x: &[f64],
    base: Option<&[f64]>,
    opts: &PropagationOptions,
) -> Result<Vec<f64>, IsometryError> {
    if x == j0.p.as_slice() {
        return Ok(j0.q.clone());
    }
    let mut path = vec![j0.p.clone()];
    if let Some(b) = base {
        if b != j0.p.as_slice() {
            path.push(b.to_vec());
        }
    }
    path.push(x.to_vec());
    let chain = propagate_one_jet(g, gh, j0, &path, opts)?;
    Ok(chain.last().unwrap().q.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Euclidean, LinearMap, Region};

    fn rot(th: f64) -> DMatrix<f64> {
        LinearMap::rotation2(th).a
    }

    #[test]
    fn flat_rotation_propagates_unchanged() {
        let e = Euclidean::on(2, Region::cube(2, 10.0));
        let r = rot(0.8);
        let j0 = OneJet::new(vec![0.0, 0.0], vec![1.0, 2.0], r.clone());
        let path = vec![vec![0.0, 0.0], vec![0.5, 0.3], vec![-0.2, 0.9]];
        let chain = propagate_one_jet(&e, &e, &j0, &path, &PropagationOptions::default()).unwrap();
        for j in &chain {
            assert!((&j.d - &r).abs().max() < 1e-12);
            let want = &r * nalgebra::DVector::from_column_slice(&j.p);
            assert!(
                (j.q[0] - 1.0 - want[0]).abs() < 1e-12 && (j.q[1] - 2.0 - want[1]).abs() < 1e-12
            );
        }
        let x = evaluate_global(
            &e,
            &e,
            &j0,
            &[0.3, 0.4],
            None,
            &PropagationOptions::default(),
        )
        .unwrap();
        let want = &r * nalgebra::DVector::from_column_slice(&[0.3, 0.4]);
        assert!((x[0] - 1.0 - want[0]).abs() < 1e-12);
        assert_eq!(
            evaluate_global(
                &e,
                &e,
                &j0,
                &[0.0, 0.0],
                None,
                &PropagationOptions::default()
            )
            .unwrap(),
            vec![1.0, 2.0]
        );
    }

    #[test]
    fn efp_zero_for_identity_and_rotation() {
        let e = Euclidean::new(2);
        let opts = GeodesicOptions::default();
        let id = OneJet::new(vec![0.0, 0.0], vec![0.0, 0.0], DMatrix::identity(2, 2));
        let f = |x: &[f64]| Some(x.to_vec());
        assert_eq!(efp_residual(&e, &e, &id, &[0.3, -0.2], &f, &opts), 0.0);
        let r = rot(0.4);
        let rj = OneJet::new(vec![0.0, 0.0], vec![0.0, 0.0], r.clone());
        let fr = move |x: &[f64]| {
            Some(
                (&r * nalgebra::DVector::from_column_slice(x))
                    .iter()
                    .copied()
                    .collect(),
            )
        };
        assert!(efp_residual(&e, &e, &rj, &[0.3, -0.2], &fr, &opts) < 1e-14);
    }

    #[test]
    fn reorthonormalization_restores_invariant() {
        let e = Euclidean::new(2);
        let j = OneJet::new(vec![0.0, 0.0], vec![0.0, 0.0], rot(0.3) * 1.001);
        let (p, defect) = j.reorthonormalized(&e, &e).unwrap();
        assert!(defect > 1e-3);
        assert!(p.defect(&e, &e).unwrap() < 1e-14);
        assert!((p.d - rot(0.3)).abs().max() < 1e-14);
    }

    #[test]
    fn atlas_check_reports_edges_first() {
        let e = Euclidean::on(2, Region::cube(2, 10.0));
        let f = |p: [f64; 2]| crate::metric::Frame::new(p.to_vec(), DMatrix::identity(2, 2));
        let a =
            BallAtlas::with_edges(vec![f([0.0, 0.0]), f([0.3, 0.0])], 0.2, vec![(0, 1)]).unwrap();
        let b = BallAtlas::with_edges(vec![f([0.0, 0.0]), f([0.3, 0.0])], 0.2, vec![]).unwrap();
        let v =
            check_atlas_isometry(&e, &e, &a, &b, 2, 1e-6, &InvariantOptions::default()).unwrap();
        match v {
            Verdict::Mismatch { witness } => assert_eq!(witness.kind, "edges"),
            _ => panic!("expected mismatch"),
        }
        let v =
            check_atlas_isometry(&e, &e, &a, &a, 2, 1e-6, &InvariantOptions::default()).unwrap();
        assert!(v.is_match());
    }
}
