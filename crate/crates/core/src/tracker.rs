//! Following an isometry through a parameter family by matching jet
//! signatures node by node, and diagnosing whether the result is smooth.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::invariants::{
    signature, AtlasOptions, BallAtlas, InvariantError, InvariantOptions, JetSignature,
};
use crate::isometry::{propagate_one_jet, IsometryError, OneJet, PropagationOptions};
use crate::metric::{orthonormal_frame, ChartMetric, Frame, MetricError, MetricFamily};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Isometry(#[from] IsometryError),
    #[error("seed is inconsistent with the families at t0 (signature gap {0:.3e})")]
    SeedInconsistent(f64),
    #[error("frame solve did not converge (residual {0:.3e})")]
    NotConverged(f64),
    #[error("diagnostic needs at least {need} accepted nodes, got {got}")]
    TooFewNodes { need: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Fixed base points with fixed seed bases; at each `t` the seeds are
/// orthonormalized against `g_t`, which makes the frames smooth in `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSection {
    pub points: Vec<Vec<f64>>,
    pub seeds: Vec<DMatrix<f64>>,
}

impl FrameSection {
    pub fn new(
        points: Vec<Vec<f64>>,
        seeds: Vec<DMatrix<f64>>,
    ) -> Result<FrameSection, TrackError> {
        if points.is_empty() || points.len() != seeds.len() {
            return Err(TrackError::Invalid(
                "need one seed basis per base point".into(),
            ));
        }
        Ok(FrameSection { points, seeds })
    }

    /// Seeds equal to the coordinate basis.
    pub fn standard(points: Vec<Vec<f64>>) -> FrameSection {
        let d = points[0].len();
        let seeds = vec![DMatrix::identity(d, d); points.len()];
        FrameSection { points, seeds }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frames(&self, m: &dyn ChartMetric) -> Result<Vec<Frame>, MetricError> {
        self.points
            .iter()
            .zip(&self.seeds)
            .map(|(p, s)| orthonormal_frame(m, p, s))
            .collect()
    }
}

/// Levenberg–Marquardt settings for [`solve_frames`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Central-difference step for Jacobian columns.
    pub fd_step: f64,
    pub lambda0: f64,
    /// Stop once the max-abs residual falls below this. Iteration also
    /// stops early when the residual is below `accept_tol` and a step no
    /// longer halves it.
    pub res_tol: f64,
    /// Stop once `|Jᵀr|∞` falls below this.
    pub grad_tol: f64,
    /// A node is accepted when its final residual is below this.
    pub accept_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 40,
            fd_step: 1e-5,
            lambda0: 1e-3,
            res_tol: 1e-10,
            grad_tol: 1e-16,
            accept_tol: 1e-8,
        }
    }
}

/// Unconstrained coordinates for `m` frames near reference frames: base
/// point offsets, then Cayley coordinates of the rotation relative to the
/// reference basis (re-orthonormalized at the moved point).
struct FrameParams<'a> {
    metric: &'a dyn ChartMetric,
    refs: Vec<Frame>,
}

impl FrameParams<'_> {
    fn per_frame(d: usize) -> usize {
        d + d * (d - 1) / 2
    }

    fn len(&self) -> usize {
        self.refs.len() * Self::per_frame(self.metric.dim())
    }

    fn frames(&self, theta: &[f64]) -> Result<Vec<Frame>, MetricError> {
        let d = self.metric.dim();
        let pf = Self::per_frame(d);
        self.refs
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let th = &theta[i * pf..(i + 1) * pf];
                let y: Vec<f64> = r.point.iter().zip(&th[..d]).map(|(a, b)| a + b).collect();
                let base = orthonormal_frame(self.metric, &y, &r.basis)?;
                Ok(Frame::new(y, base.basis * cayley(d, &th[d..])))
            })
            .collect()
    }
}

/// `(I − A/2)⁻¹ (I + A/2)` for the skew matrix with upper entries `a`.
fn cayley(d: usize, a: &[f64]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i + 1..d {
            s[(i, j)] = 0.5 * a[k];
            s[(j, i)] = -0.5 * a[k];
            k += 1;
        }
    }
    let id = DMatrix::<f64>::identity(d, d);
    (&id - &s)
        .try_inverse()
        .expect("Cayley transform of a skew matrix")
        * (id + s)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Result of a frame solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub frames: Vec<Frame>,
    /// Max-abs signature mismatch at the returned frames.
    pub residual: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

fn sig_residual(
    m: &dyn ChartMetric,
    frames: Vec<Frame>,
    delta: f64,
    edges: &[(usize, usize)],
    target: &[f64],
    n: usize,
    opts: &InvariantOptions,
) -> Option<Vec<f64>> {
    let atlas = BallAtlas::with_edges(frames, delta, edges.to_vec()).ok()?;
    let s = signature(m, &atlas, n, opts).ok()?;
    let flat = s.flatten();
    (flat.len() == target.len()).then(|| flat.iter().zip(target).map(|(a, b)| a - b).collect())
}

/// Central-difference Jacobian of `f` at `theta`, columns in parallel.
fn fd_jacobian(
    f: &(dyn Fn(&[f64]) -> Option<Vec<f64>> + Sync),
    theta: &[f64],
    r0: &[f64],
    h: f64,
) -> DMatrix<f64> {
    let p = theta.len();
    let cols = par::map_range(p, |k| {
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[k] += h;
        tm[k] -= h;
        match (f(&tp), f(&tm)) {
            (Some(a), Some(b)) => a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect(),
            (Some(a), None) => a.iter().zip(r0).map(|(x, y)| (x - y) / h).collect(),
            (None, Some(b)) => r0.iter().zip(&b).map(|(x, y)| (x - y) / h).collect(),
            (None, None) => vec![0.0; r0.len()],
        }
    });
    DMatrix::from_fn(r0.len(), p, |i, k| cols[k][i])
}

/// Least-squares fit of target-side frames reproducing `h_target`,
/// starting from `guess`.
#[allow(clippy::too_many_arguments)]
pub fn solve_frames_in(
    gh: &dyn ChartMetric,
    h_target: &JetSignature,
    guess: &[Frame],
    delta: f64,
    edges: &[(usize, usize)],
    inv: &InvariantOptions,
    opts: &SolverOptions,
) -> Result<SolveOutcome, TrackError> {
    let refs: Vec<Frame> = guess
        .iter()
        .map(|f| orthonormal_frame(gh, &f.point, &f.basis))
        .collect::<Result<_, _>>()?;
    let params = FrameParams { metric: gh, refs };
    let n = h_target.degree;
    let target = h_target.flatten();
    let resid = |theta: &[f64]| -> Option<Vec<f64>> {
        let frames = params.frames(theta).ok()?;
        sig_residual(gh, frames, delta, edges, &target, n, inv)
    };
    let mut theta = vec![0.0; params.len()];
    let mut r = resid(&theta).ok_or_else(|| {
        TrackError::Invalid("signature cannot be evaluated at the initial frames".into())
    })?;
    let mut cost: f64 = r.iter().map(|x| x * x).sum();
    let mut iterations = 0;
    let mut gnorm = f64::NAN;
    let mut lambda = opts.lambda0;
    while iterations < opts.max_iter && max_abs(&r) >= opts.res_tol {
        iterations += 1;
        let j = fd_jacobian(&resid, &theta, &r, opts.fd_step);
        let rv = DVector::from_column_slice(&r);
        let g = j.transpose() * &rv;
        gnorm = g.amax();
        if gnorm < opts.grad_tol {
            break;
        }
        let a = j.transpose() * &j;
        let dmax = a.diagonal().max().max(1e-300);
        let mut accepted = false;
        for _ in 0..12 {
            let mut damped = a.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-12 * dmax);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 4.0;
                continue;
            };
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rt) = resid(&trial) {
                let ct: f64 = rt.iter().map(|x| x * x).sum();
                if ct < cost {
                    let small = step.amax() <= 1e-15 * (1.0 + max_abs(&theta));
                    // already acceptable and no longer converging fast:
                    // polishing further only chases the noise floor
                    let stalled = max_abs(&rt) < opts.accept_tol && ct > 0.25 * cost;
                    theta = trial;
                    r = rt;
                    cost = ct;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = !small && !stalled;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    let frames = params.frames(&theta)?;
    let residual = max_abs(&r);
    Ok(SolveOutcome {
        frames,
        residual,
        iterations,
        gradient_norm: gnorm,
        converged: residual < opts.accept_tol,
    })
}

/// [`solve_frames_in`] for the target family at `t`.
#[allow(clippy::too_many_arguments)]
pub fn solve_frames(
    gh_family: &dyn MetricFamily,
    t: f64,
    h_target: &JetSignature,
    guess: &[Frame],
    delta: f64,
    edges: &[(usize, usize)],
    inv: &InvariantOptions,
    opts: &SolverOptions,
) -> Result<SolveOutcome, TrackError> {
    let gh = gh_family.at(t)?;
    solve_frames_in(gh.as_ref(), h_target, guess, delta, edges, inv, opts)
}

/// Source-side signature `H(t)` at the section's frames.
pub fn target_signature_h(
    g_family: &dyn MetricFamily,
    section: &FrameSection,
    t: f64,
    delta: f64,
    edges: &[(usize, usize)],
    n: usize,
    inv: &InvariantOptions,
) -> Result<JetSignature, TrackError> {
    let g = g_family.at(t)?;
    let atlas = BallAtlas::with_edges(section.frames(g.as_ref())?, delta, edges.to_vec())?;
    Ok(signature(g.as_ref(), &atlas, n, inv)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOptions {
    pub fd_step: f64,
    /// Singular values above `rel_threshold·σ_max` count towards the rank.
    pub rel_threshold: f64,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            fd_step: 1e-4,
            rel_threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub degree: usize,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// Number of frame parameters, `m·(d + d(d−1)/2)`.
    pub full: usize,
}

impl RankReport {
    pub fn is_full(&self) -> bool {
        self.rank == self.full
    }
}

/// Numerical rank of the signature's differential with respect to the
/// frame parameters, at the given frames.
pub fn rank_probe_in(
    g: &dyn ChartMetric,
    frames: &[Frame],
    delta: f64,
    edges: &[(usize, usize)],
    n: usize,
    inv: &InvariantOptions,
    opts: &RankOptions,
) -> Result<RankReport, TrackError> {
    let params = FrameParams {
        metric: g,
        refs: frames.to_vec(),
    };
    let base = BallAtlas::with_edges(frames.to_vec(), delta, edges.to_vec())?;
    let zero = vec![0.0; signature(g, &base, n, inv)?.flatten().len()];
    let f = |theta: &[f64]| -> Option<Vec<f64>> {
        let fr = params.frames(theta).ok()?;
        sig_residual(g, fr, delta, edges, &zero, n, inv)
    };
    let theta = vec![0.0; params.len()];
    let r0 = f(&theta).ok_or_else(|| TrackError::Invalid("signature not evaluable".into()))?;
    let j = fd_jacobian(&f, &theta, &r0, opts.fd_step);
    let mut sv: Vec<f64> = j
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = if smax > 0.0 {
        sv.iter()
            .filter(|s| **s > opts.rel_threshold * smax)
            .count()
    } else {
        0
    };
    Ok(RankReport {
        degree: n,
        singular_values: sv,
        rank,
        full: params.len(),
    })
}

/// [`rank_probe_in`] for the source family at `t` and the section's frames.
#[allow(clippy::too_many_arguments)]
pub fn rank_probe(
    g_family: &dyn MetricFamily,
    t: f64,
    section: &FrameSection,
    delta: f64,
    edges: &[(usize, usize)],
    n: usize,
    inv: &InvariantOptions,
    opts: &RankOptions,
) -> Result<RankReport, TrackError> {
    let g = g_family.at(t)?;
    let frames = section.frames(g.as_ref())?;
    rank_probe_in(g.as_ref(), &frames, delta, edges, n, inv, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackOptions {
    pub degree: usize,
    pub delta: f64,
    pub max_halvings: usize,
    /// Largest signature gap accepted for the seed at `t0`.
    pub seed_tol: f64,
    pub solver: SolverOptions,
    pub invariant: InvariantOptions,
    pub atlas: AtlasOptions,
    pub propagation: PropagationOptions,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions {
            degree: 3,
            delta: 0.25,
            max_halvings: 4,
            seed_tol: 1e-6,
            solver: SolverOptions::default(),
            invariant: InvariantOptions::default(),
            atlas: AtlasOptions::default(),
            propagation: PropagationOptions::default(),
        }
    }
}

/// One grid node of a track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackNode {
    pub t: f64,
    /// Solved target-side frames.
    pub frames: Vec<Frame>,
    /// `(F_t(p₁), d(F_t)_{p₁})`.
    pub one_jet: OneJet,
    pub residual: f64,
    pub iterations: usize,
    /// Intermediate parameter values inserted by step halving.
    pub halvings: usize,
    pub flags: Vec<String>,
}

impl TrackNode {
    pub fn accepted(&self) -> bool {
        !self.flags.iter().any(|f| f == FLAG_UNCONVERGED)
    }
}

pub const FLAG_UNCONVERGED: &str = "unconverged";
pub const FLAG_JUMP: &str = "jump";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub degree: usize,
    pub edges: Vec<(usize, usize)>,
    /// Sorted by `t`.
    pub nodes: Vec<TrackNode>,
    /// Why a branch stopped early, if it did.
    pub truncated: Vec<String>,
}

impl TrackRecord {
    /// Union of two records over disjoint parameter sets.
    pub fn merged(mut self, other: TrackRecord) -> TrackRecord {
        self.nodes.extend(other.nodes);
        self.nodes.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.truncated.extend(other.truncated);
        self
    }

    pub fn accepted(&self) -> impl Iterator<Item = &TrackNode> {
        self.nodes.iter().filter(|n| n.accepted())
    }

    /// `t, q…, D (row-major)…, residual, iterations, flags`.
    pub fn to_csv(&self) -> String {
        let d = self.nodes.first().map_or(0, |n| n.one_jet.q.len());
        let mut out = String::from("t");
        for i in 0..d {
            out.push_str(&format!(",q{}", i + 1));
        }
        for i in 0..d {
            for j in 0..d {
                out.push_str(&format!(",D{}{}", i + 1, j + 1));
            }
        }
        out.push_str(",residual,iterations,flags\n");
        for n in &self.nodes {
            out.push_str(&format!("{}", n.t));
            for q in &n.one_jet.q {
                out.push_str(&format!(",{q}"));
            }
            for i in 0..d {
                for j in 0..d {
                    out.push_str(&format!(",{}", n.one_jet.d[(i, j)]));
                }
            }
            out.push_str(&format!(
                ",{:e},{},{}\n",
                n.residual,
                n.iterations,
                n.flags.join(";")
            ));
        }
        out
    }
}

/// Where the march stands: parameter, source frames, target frames.
#[derive(Clone)]
struct MarchState {
    t: f64,
    source: Vec<Frame>,
    target: Vec<Frame>,
    residual: f64,
    iterations: usize,
}

struct Marcher<'a> {
    g_family: &'a dyn MetricFamily,
    gh_family: &'a dyn MetricFamily,
    section: &'a FrameSection,
    edges: Vec<(usize, usize)>,
    opts: &'a TrackOptions,
}

impl Marcher<'_> {
    fn h(&self, t: f64) -> Result<(Vec<Frame>, JetSignature), TrackError> {
        let g = self.g_family.at(t)?;
        let frames = self.section.frames(g.as_ref())?;
        let atlas = BallAtlas::with_edges(frames.clone(), self.opts.delta, self.edges.clone())?;
        let sig = signature(g.as_ref(), &atlas, self.opts.degree, &self.opts.invariant)?;
        Ok((frames, sig))
    }

    /// Solve at `t` from the state at a neighbouring parameter. The guess
    /// carries the previous differential over to the new source frames.
    fn solve_at(&self, from: &MarchState, t: f64) -> Result<MarchState, TrackError> {
        let (source, h) = self.h(t)?;
        let guess: Vec<Frame> = from
            .target
            .iter()
            .zip(from.source.iter().zip(&source))
            .map(|(tf, (s_old, s_new))| {
                let change = s_old
                    .basis
                    .clone()
                    .try_inverse()
                    .map(|inv| inv * &s_new.basis)
                    .unwrap_or_else(|| DMatrix::identity(s_new.dim(), s_new.dim()));
                Frame::new(tf.point.clone(), &tf.basis * change)
            })
            .collect();
        let out = solve_frames(
            self.gh_family,
            t,
            &h,
            &guess,
            self.opts.delta,
            &self.edges,
            &self.opts.invariant,
            &self.opts.solver,
        )?;
        if !out.converged {
            return Err(TrackError::NotConverged(out.residual));
        }
        Ok(MarchState {
            t,
            source,
            target: out.frames,
            residual: out.residual,
            iterations: out.iterations,
        })
    }

    /// Reaches `t` from `from`, inserting midpoints on failure; returns the
    /// state and the number of midpoints used.
    fn advance(
        &self,
        from: &MarchState,
        t: f64,
        depth: usize,
    ) -> Result<(MarchState, usize), TrackError> {
        match self.solve_at(from, t) {
            Ok(s) => Ok((s, 0)),
            Err(e) if depth >= self.opts.max_halvings => Err(e),
            Err(_) => {
                let mid = 0.5 * (from.t + t);
                let (sm, a) = self.advance(from, mid, depth + 1)?;
                let (s, b) = self.advance(&sm, t, depth + 1)?;
                Ok((s, a + b + 1))
            }
        }
    }

    fn node(&self, s: &MarchState, halvings: usize) -> TrackNode {
        let p1 = &s.source[0];
        let q1 = &s.target[0];
        let d = q1.basis.clone()
            * p1.basis
                .clone()
                .try_inverse()
                .expect("orthonormal frame is invertible");
        TrackNode {
            t: s.t,
            frames: s.target.clone(),
            one_jet: OneJet::new(p1.point.clone(), q1.point.clone(), d),
            residual: s.residual,
            iterations: s.iterations,
            halvings,
            flags: vec![],
        }
    }

    fn branch(&self, start: &MarchState, ts: &[f64]) -> (Vec<TrackNode>, Option<String>) {
        let mut nodes = vec![];
        let mut state = start.clone();
        for &t in ts {
            match self.advance(&state, t, 0) {
                Ok((s, halvings)) => {
                    nodes.push(self.node(&s, halvings));
                    state = s;
                }
                Err(e) => {
                    let residual = match e {
                        TrackError::NotConverged(r) => r,
                        _ => f64::NAN,
                    };
                    let mut n = self.node(&state, self.opts.max_halvings);
                    n.t = t;
                    n.residual = residual;
                    n.flags.push(FLAG_UNCONVERGED.into());
                    nodes.push(n);
                    return (nodes, Some(format!("stopped at t = {t}: {e}")));
                }
            }
        }
        (nodes, None)
    }
}

/// Target frames obtained by continuing `seed` to every base point, and
/// the signature gap they leave against `h` (the source signature).
fn seed_frames(
    g: &dyn ChartMetric,
    gh: &dyn ChartMetric,
    seed: &OneJet,
    frames: &[Frame],
    edges: &[(usize, usize)],
    h: &JetSignature,
    opts: &TrackOptions,
) -> Result<(Vec<Frame>, f64), TrackError> {
    let images = par::map_range(frames.len(), |i| -> Result<OneJet, TrackError> {
        if i == 0 {
            return Ok(seed.clone());
        }
        let path = vec![seed.p.clone(), frames[i].point.clone()];
        let chain = propagate_one_jet(g, gh, seed, &path, &opts.propagation)?;
        Ok(chain.last().unwrap().clone())
    });
    let mut guess = Vec::with_capacity(frames.len());
    for (f, j) in frames.iter().zip(images) {
        let j = j?;
        guess.push(Frame::new(j.q.clone(), &j.d * &f.basis));
    }
    let atlas = BallAtlas::with_edges(guess.clone(), opts.delta, edges.to_vec())?;
    let gap = signature(gh, &atlas, opts.degree, &opts.invariant)?.distance(h);
    Ok((guess, gap))
}

/// Signature gap left by a candidate seed at `t`; zero (up to rounding)
/// exactly when the seed continues to an isometry of the base-point
/// atlas, infinite when the seed is not even a linear isometry at `p₁`.
/// Used to pick a seed among finitely many candidates.
pub fn seed_gap(
    g_family: &dyn MetricFamily,
    gh_family: &dyn MetricFamily,
    seed: &OneJet,
    t: f64,
    section: &FrameSection,
    opts: &TrackOptions,
) -> Result<f64, TrackError> {
    if section.points[0] != seed.p {
        return Err(TrackError::Invalid(
            "seed must sit at the first base point".into(),
        ));
    }
    let g = g_family.at(t)?;
    let gh = gh_family.at(t)?;
    if seed.check(g.as_ref(), gh.as_ref(), 1e-8).is_err() {
        return Ok(f64::INFINITY);
    }
    let frames = section.frames(g.as_ref())?;
    let atlas = BallAtlas::build(g.as_ref(), frames.clone(), opts.delta, &opts.atlas)?;
    let h = signature(g.as_ref(), &atlas, opts.degree, &opts.invariant)?;
    match seed_frames(
        g.as_ref(),
        gh.as_ref(),
        seed,
        &frames,
        &atlas.edges,
        &h,
        opts,
    ) {
        Ok((_, gap)) => Ok(gap),
        Err(TrackError::Isometry(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Tracks the isometry family seeded by the 1-jet `seed` at `t0` over
/// `grid`, marching outward from `t0` on both sides.
pub fn track(
    g_family: &dyn MetricFamily,
    gh_family: &dyn MetricFamily,
    seed: &OneJet,
    t0: f64,
    grid: &[f64],
    section: &FrameSection,
    opts: &TrackOptions,
) -> Result<TrackRecord, TrackError> {
    if section.points[0] != seed.p {
        return Err(TrackError::Invalid(
            "seed must sit at the first base point".into(),
        ));
    }
    let g0 = g_family.at(t0)?;
    let gh0 = gh_family.at(t0)?;
    seed.check(g0.as_ref(), gh0.as_ref(), 1e-8)?;
    let frames0 = section.frames(g0.as_ref())?;
    let atlas0 = BallAtlas::build(g0.as_ref(), frames0.clone(), opts.delta, &opts.atlas)?;
    let edges = atlas0.edges.clone();
    let marcher = Marcher {
        g_family,
        gh_family,
        section,
        edges: edges.clone(),
        opts,
    };
    let h0 = signature(g0.as_ref(), &atlas0, opts.degree, &opts.invariant)?;
    let (guess, gap) = seed_frames(g0.as_ref(), gh0.as_ref(), seed, &frames0, &edges, &h0, opts)?;
    if !(gap < opts.seed_tol) {
        return Err(TrackError::SeedInconsistent(gap));
    }
    let out = solve_frames_in(
        gh0.as_ref(),
        &h0,
        &guess,
        opts.delta,
        &edges,
        &opts.invariant,
        &opts.solver,
    )?;
    if !out.converged {
        return Err(TrackError::NotConverged(out.residual));
    }
    let start = MarchState {
        t: t0,
        source: frames0,
        target: out.frames,
        residual: out.residual,
        iterations: out.iterations,
    };
    let mut right: Vec<f64> = grid.iter().copied().filter(|&t| t > t0).collect();
    right.sort_by(f64::total_cmp);
    let mut left: Vec<f64> = grid.iter().copied().filter(|&t| t < t0).collect();
    left.sort_by(|a, b| b.total_cmp(a));
    let ((mut lnodes, lstop), (rnodes, rstop)) = par::join(
        || marcher.branch(&start, &left),
        || marcher.branch(&start, &right),
    );
    lnodes.reverse();
    let mut nodes = lnodes;
    if grid.contains(&t0) {
        nodes.push(marcher.node(&start, 0));
    }
    nodes.extend(rnodes);
    Ok(TrackRecord {
        degree: opts.degree,
        edges,
        nodes,
        truncated: [lstop, rstop].into_iter().flatten().collect(),
    })
}

/// Finite-difference weights (Fornberg) for derivatives `0..=order` at
/// `x0` from samples at `xs`; `w[k][j]` multiplies `f(xs[j])` for the
/// `k`-th derivative.
pub fn fornberg_weights(x0: f64, xs: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothnessOptions {
    /// A node is flagged when the increment rate leading to it exceeds
    /// this multiple of the typical rate.
    pub jump_threshold: f64,
    /// Lower bound for the typical rate, so that nearly constant tracks do
    /// not flag rounding noise.
    pub rate_floor: f64,
}

impl Default for SmoothnessOptions {
    fn default() -> Self {
        SmoothnessOptions {
            jump_threshold: 10.0,
            rate_floor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub t: Vec<f64>,
    /// Per node: derivative of `(q, vec D)`, five-point stencils where the
    /// grid allows.
    pub first_derivative: Vec<Vec<f64>>,
    pub second_derivative: Vec<Vec<f64>>,
    pub max_point_derivative: f64,
    pub max_linear_derivative: f64,
    pub max_second_derivative: f64,
    /// `|X(t_{i+1}) − X(t_i)|∞ / (t_{i+1} − t_i)`.
    pub rates: Vec<f64>,
    pub typical_rate: f64,
    pub jump_score: f64,
    pub flagged_t: Vec<f64>,
}

impl SmoothnessReport {
    pub fn is_smooth(&self) -> bool {
        self.flagged_t.is_empty()
    }
}

/// Finite-difference smoothness evidence for `t ↦ (F_t(p₁), d(F_t)_{p₁})`
/// over the accepted nodes.
pub fn smoothness_diagnostic(
    rec: &TrackRecord,
    opts: &SmoothnessOptions,
) -> Result<SmoothnessReport, TrackError> {
    let nodes: Vec<&TrackNode> = rec.accepted().collect();
    if nodes.len() < 5 {
        return Err(TrackError::TooFewNodes {
            need: 5,
            got: nodes.len(),
        });
    }
    let d = nodes[0].one_jet.q.len();
    let t: Vec<f64> = nodes.iter().map(|n| n.t).collect();
    let x: Vec<Vec<f64>> = nodes
        .iter()
        .map(|n| {
            let mut v = n.one_jet.q.clone();
            for i in 0..d {
                for j in 0..d {
                    v.push(n.one_jet.d[(i, j)]);
                }
            }
            v
        })
        .collect();
    let k = t.len();
    let width = 5.min(k);
    let mut first = Vec::with_capacity(k);
    let mut second = Vec::with_capacity(k);
    for i in 0..k {
        let lo = i.saturating_sub(width / 2).min(k - width);
        let xs = &t[lo..lo + width];
        let w = fornberg_weights(t[i], xs, 2);
        let apply = |row: &[f64]| -> Vec<f64> {
            (0..x[0].len())
                .map(|c| {
                    row.iter()
                        .enumerate()
                        .map(|(j, wj)| wj * x[lo + j][c])
                        .sum()
                })
                .collect()
        };
        first.push(apply(&w[1]));
        second.push(apply(&w[2]));
    }
    let rates: Vec<f64> = (0..k - 1)
        .map(|i| {
            let inc = x[i + 1]
                .iter()
                .zip(&x[i])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            inc / (t[i + 1] - t[i])
        })
        .collect();
    let mut sorted = rates.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let typical = median.max(opts.rate_floor);
    let jump_score = rates.iter().fold(0.0_f64, |m, r| m.max(*r)) / typical;
    let flagged_t = rates
        .iter()
        .enumerate()
        .filter(|(_, r)| **r > opts.jump_threshold * typical)
        .map(|(i, _)| t[i + 1])
        .collect();
    let colmax = |v: &[Vec<f64>], range: std::ops::Range<usize>| {
        v.iter()
            .flat_map(|row| row[range.clone()].iter())
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    };
    Ok(SmoothnessReport {
        max_point_derivative: colmax(&first, 0..d),
        max_linear_derivative: colmax(&first, d..d + d * d),
        max_second_derivative: colmax(&second, 0..d + d * d),
        t,
        first_derivative: first,
        second_derivative: second,
        rates,
        typical_rate: typical,
        jump_score,
        flagged_t,
    })
}

/// Marks the nodes a report flags.
pub fn apply_flags(rec: &mut TrackRecord, report: &SmoothnessReport) {
    for n in &mut rec.nodes {
        if report.flagged_t.contains(&n.t) && !n.flags.iter().any(|f| f == FLAG_JUMP) {
            n.flags.push(FLAG_JUMP.into());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(t: f64, q: [f64; 2], th: f64) -> TrackNode {
        let (s, c) = th.sin_cos();
        TrackNode {
            t,
            frames: vec![],
            one_jet: OneJet::new(
                vec![0.0, 0.0],
                q.to_vec(),
                DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
            ),
            residual: 0.0,
            iterations: 0,
            halvings: 0,
            flags: vec![],
        }
    }

    fn record(nodes: Vec<TrackNode>) -> TrackRecord {
        TrackRecord {
            degree: 3,
            edges: vec![],
            nodes,
            truncated: vec![],
        }
    }

    #[test]
    fn fornberg_reproduces_polynomials() {
        let xs = [0.0, 0.1, 0.3, 0.35, 0.5];
        let w = fornberg_weights(0.2, &xs, 2);
        let f = |x: f64| 1.0 + 2.0 * x - x * x + 0.5 * x * x * x;
        let d1: f64 = w[1].iter().zip(&xs).map(|(a, x)| a * f(*x)).sum();
        let d2: f64 = w[2].iter().zip(&xs).map(|(a, x)| a * f(*x)).sum();
        assert!((d1 - (2.0 - 0.4 + 1.5 * 0.04)).abs() < 1e-10);
        assert!((d2 - (-2.0 + 3.0 * 0.2)).abs() < 1e-9);
    }

    #[test]
    fn constant_record_is_smooth() {
        let r = record(
            (0..9)
                .map(|k| node(k as f64 * 0.1, [1.0, 2.0], 0.3))
                .collect(),
        );
        let rep = smoothness_diagnostic(&r, &SmoothnessOptions::default()).unwrap();
        assert!(rep.is_smooth());
        assert!(rep.max_point_derivative < 1e-12 && rep.max_linear_derivative < 1e-12);
    }

    #[test]
    fn rotation_rate_is_recovered() {
        let r = record(
            (0..21)
                .map(|k| {
                    let t = k as f64 * 0.05;
                    node(t, [0.0, 0.0], t)
                })
                .collect(),
        );
        let rep = smoothness_diagnostic(&r, &SmoothnessOptions::default()).unwrap();
        assert!(rep.is_smooth());
        // d/dt of cos t at t: |−sin t| ≤ 1, and the D11 entry rate at t = 0.5
        let i = 10;
        assert!((rep.first_derivative[i][2] + (0.5f64).sin()).abs() < 1e-4);
        assert!((rep.first_derivative[i][4] - (0.5f64).cos()).abs() < 1e-4);
    }

    #[test]
    fn jump_is_flagged_once() {
        let mut nodes: Vec<TrackNode> = (0..10)
            .map(|k| node(-1.0 + 0.1 * k as f64, [0.0, 0.0], std::f64::consts::PI))
            .collect();
        nodes.extend((0..11).map(|k| node(0.1 * k as f64, [0.0, 0.0], 0.0)));
        let rep = smoothness_diagnostic(&record(nodes), &SmoothnessOptions::default()).unwrap();
        assert_eq!(rep.flagged_t, vec![0.0]);
    }

    #[test]
    fn too_few_nodes() {
        let r = record((0..4).map(|k| node(k as f64, [0.0, 0.0], 0.0)).collect());
        assert!(matches!(
            smoothness_diagnostic(&r, &SmoothnessOptions::default()),
            Err(TrackError::TooFewNodes { .. })
        ));
    }

    #[test]
    fn cayley_is_orthogonal() {
        let q = cayley(3, &[0.3, -0.2, 0.9]);
        assert!((q.transpose() * &q - DMatrix::identity(3, 3)).abs().max() < 1e-14);
        assert_eq!(cayley(2, &[0.0]), DMatrix::identity(2, 2));
    }
}
