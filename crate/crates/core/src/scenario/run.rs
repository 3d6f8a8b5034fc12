use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Complex, DMatrix, DVector};
use serde_json::{json, Value};

use super::config::{
    AtlasDecl, BergmanTask, CheckTask, DemoTask, InvariantsTask, PropagateTask, Scenario, SeedDecl,
    TrackTask,
};
use super::flip::{build_flip_family, default_flip_bumps};
use super::registry::{build_domain, build_family_pair, build_target_metric, MapPair};
use super::report::{Check, Command, RunReport, Status, Timing, SCHEMA_VERSION};
use super::ScenarioError;
use crate::bergman::{
    kernel_build, pullback_family, richardson_check, BergmanMetric, PullbackOptions, QuadConfig,
};
use crate::invariants::{signature, AtlasOptions, BallAtlas, InvariantOptions, JetSignature};
use crate::isometry::{
    check_atlas_isometry, evaluate_global, propagate_one_jet, LocalIsometry, OneJet,
    PropagationOptions, Verdict,
};
use crate::jets::Jet;
use crate::metric::{
    build_metric, metric_at, pack_sym, ChartMap, ChartMetric, Frame, MetricFamily, Mobius,
    PullbackMetric,
};
use crate::par;
use crate::tracker::{
    apply_flags, seed_gap, smoothness_diagnostic, track, FrameSection, SmoothnessOptions,
    SmoothnessReport, TrackOptions, TrackRecord,
};

/// Command-line overrides applied on top of a scenario.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// Replaces the scenario's own seed.
    pub seed: Option<u64>,
    /// Multiplies every acceptance tolerance.
    pub tol_scale: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: None,
            tol_scale: 1.0,
        }
    }
}

struct Ctx<'a> {
    s: &'a Scenario,
    seed: u64,
    scale: f64,
}

#[derive(Default)]
struct Outcome {
    checks: Vec<Check>,
    flags: Vec<String>,
    results: Value,
    csv: Option<String>,
}

impl Ctx<'_> {
    fn id(&self) -> &str {
        &self.s.id
    }

    fn missing(&self, what: &str) -> ScenarioError {
        ScenarioError::invalid(self.id(), format!("missing [{what}] for this command"))
    }

    fn metric(&self) -> Result<Arc<dyn ChartMetric>, ScenarioError> {
        let m = self
            .s
            .metric
            .as_ref()
            .ok_or_else(|| self.missing("metric"))?;
        Ok(build_metric(&m.id, &m.params)?)
    }

    fn atlas(&self) -> Result<&AtlasDecl, ScenarioError> {
        self.s.atlas.as_ref().ok_or_else(|| self.missing("atlas"))
    }

    fn bound(&self, name: impl Into<String>, value: f64, tol: f64) -> Check {
        Check::bound(name, value, tol * self.scale)
    }

    fn quad(&self, q: &QuadConfig) -> QuadConfig {
        QuadConfig {
            seed: q.seed.wrapping_add(self.seed),
            ..*q
        }
    }
}

/// Runs `command` on one scenario.
pub fn run(s: &Scenario, command: Command, opts: &RunOptions) -> Result<RunReport, ScenarioError> {
    if !(opts.tol_scale > 0.0 && opts.tol_scale.is_finite()) {
        return Err(ScenarioError::invalid(
            &s.id,
            "tolerance scale must be positive",
        ));
    }
    let start = Instant::now();
    let c = Ctx {
        s,
        seed: opts.seed.unwrap_or(s.seed),
        scale: opts.tol_scale,
    };
    let out = match command {
        Command::Invariants => run_invariants(
            &c,
            s.invariants
                .as_ref()
                .ok_or_else(|| c.missing("invariants"))?,
        ),
        Command::Check => run_check(&c, s.check.as_ref().ok_or_else(|| c.missing("check"))?),
        Command::Propagate => run_propagate(
            &c,
            s.propagate.as_ref().ok_or_else(|| c.missing("propagate"))?,
        ),
        Command::Track => run_track(&c, s.track.as_ref().ok_or_else(|| c.missing("track"))?),
        Command::Bergman => {
            run_bergman(&c, s.bergman.as_ref().ok_or_else(|| c.missing("bergman"))?)
        }
        Command::DemoDiscontinuity => {
            run_demo(&c, s.demo.as_ref().ok_or_else(|| c.missing("demo"))?)
        }
    }?;
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        scenario: s.id.clone(),
        command,
        seed: c.seed,
        tol_scale: c.scale,
        status: RunReport::status_of(&out.checks, &out.flags),
        flags: out.flags,
        checks: out.checks,
        results: out.results,
        timing: Some(Timing {
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        }),
        csv: out.csv,
    })
}

/// Runs `command` on several scenarios concurrently, in input order.
pub fn run_batch(
    scenarios: &[&Scenario],
    command: Command,
    opts: &RunOptions,
) -> Vec<Result<RunReport, ScenarioError>> {
    par::map_slice(scenarios, |s| run(s, command, opts))
}

/// `1` if anything errored or failed, else `2` if anything was flagged,
/// else `0`.
pub fn batch_exit_code(results: &[Result<RunReport, ScenarioError>]) -> i32 {
    let mut code = 0;
    for r in results {
        match r.as_ref().map(|r| r.status) {
            Err(_) | Ok(Status::Fail) => return 1,
            Ok(Status::Flagged) => code = 2,
            Ok(Status::Pass) => {}
        }
    }
    code
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m: f64, x: f64| {
        if m.is_nan() || x.is_nan() {
            f64::NAN
        } else {
            m.max(x.abs())
        }
    })
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn jet_terms(j: &Jet) -> Vec<Value> {
    j.terms()
        .map(|(alpha, v)| json!({ "alpha": alpha.0, "values": v }))
        .collect()
}

fn csv_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let row: Vec<String> = cells.into_iter().collect();
    out.push_str(&row.join(","));
    out.push('\n');
}

fn nums(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| x.to_string())
}

fn build_atlas(c: &Ctx, g: &dyn ChartMetric, decl: &AtlasDecl) -> Result<BallAtlas, ScenarioError> {
    if decl.points.iter().any(|p| p.len() != g.dim()) {
        return Err(ScenarioError::invalid(
            c.id(),
            "atlas points have the wrong dimension",
        ));
    }
    let frames = FrameSection::standard(decl.points.clone()).frames(g)?;
    Ok(BallAtlas::build(
        g,
        frames,
        decl.delta,
        &AtlasOptions::default(),
    )?)
}

fn signature_json(sig: &JetSignature, atlas: &BallAtlas) -> Value {
    json!({
        "degree": sig.degree,
        "s": sig.s_jets.iter().zip(&atlas.frames).enumerate().map(|(k, (j, f))| json!({
            "frame": k,
            "point": f.point,
            "coefficients": jet_terms(j),
        })).collect::<Vec<_>>(),
        "t": sig.t_jets.iter().map(|e| json!({
            "edge": [e.i, e.j],
            "coefficients": jet_terms(&e.jet),
        })).collect::<Vec<_>>(),
    })
}

fn run_invariants(c: &Ctx, task: &InvariantsTask) -> Result<Outcome, ScenarioError> {
    let g = c.metric()?;
    let decl = c.atlas()?;
    let atlas = build_atlas(c, g.as_ref(), decl)?;
    let sig = signature(
        g.as_ref(),
        &atlas,
        decl.degree,
        &InvariantOptions::default(),
    )?;
    let d = g.dim();
    let identity = pack_sym(&DMatrix::identity(d, d));
    let zero_defect = max_abs(sig.s_jets.iter().flat_map(|j| {
        j.constant_term()
            .iter()
            .zip(&identity)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>()
    }));
    let mut checks = vec![c.bound("s_degree0_identity", zero_defect, task.tol)];
    if decl.degree >= 1 {
        let first = max_abs(sig.s_jets.iter().flat_map(|j| {
            j.terms()
                .filter(|(a, _)| a.order() == 1)
                .flat_map(|(_, v)| v.to_vec())
                .collect::<Vec<_>>()
        }));
        checks.push(c.bound("s_degree1_zero", first, task.tol));
    }
    let mut csv = String::from("kind,index,edge_to,alpha,component,value\n");
    let rows = sig
        .s_jets
        .iter()
        .enumerate()
        .map(|(k, j)| ("s", k, String::new(), j))
        .chain(
            sig.t_jets
                .iter()
                .map(|e| ("t", e.i, e.j.to_string(), &e.jet)),
        );
    for (kind, k, to, j) in rows {
        for (alpha, v) in j.terms() {
            let a: Vec<String> = alpha.0.iter().map(|x| x.to_string()).collect();
            for (comp, x) in v.iter().enumerate() {
                csv_row(
                    &mut csv,
                    [
                        kind.to_string(),
                        k.to_string(),
                        to.clone(),
                        a.join(" "),
                        comp.to_string(),
                        x.to_string(),
                    ],
                );
            }
        }
    }
    Ok(Outcome {
        checks,
        flags: vec![],
        results: json!({
            "metric": g.label(),
            "delta": atlas.delta,
            "edges": atlas.edges,
            "signature": signature_json(&sig, &atlas),
        }),
        csv: Some(csv),
    })
}

fn mapped_frames(frames: &[Frame], map: &dyn ChartMap) -> Vec<Frame> {
    frames
        .iter()
        .map(|f| Frame::new(map.apply_f64(&f.point), map.jacobian(&f.point) * &f.basis))
        .collect()
}

fn run_check(c: &Ctx, task: &CheckTask) -> Result<Outcome, ScenarioError> {
    let g = c.metric()?;
    let target = c.s.target.as_ref().ok_or_else(|| c.missing("target"))?;
    let (gh, map) = build_target_metric(c.id(), g.clone(), target)?;
    let decl = c.atlas()?;
    let atlas = build_atlas(c, g.as_ref(), decl)?;
    let target_frames = match &map {
        Some(pair) => mapped_frames(&atlas.frames, pair.forward.as_ref()),
        None => FrameSection::standard(decl.points.clone()).frames(gh.as_ref())?,
    };
    let target_atlas = BallAtlas::build(
        gh.as_ref(),
        target_frames,
        decl.delta,
        &AtlasOptions::default(),
    )?;
    let inv = InvariantOptions::default();
    let verdict = check_atlas_isometry(
        g.as_ref(),
        gh.as_ref(),
        &atlas,
        &target_atlas,
        decl.degree,
        task.tol * c.scale,
        &inv,
    )?;
    let mut checks = vec![];
    if let Some(expect) = task.expect_match {
        checks.push(Check::holds(
            "verdict_as_expected",
            verdict.is_match() == expect,
        ));
    }
    let mut overlap = Value::Null;
    let mut csv = String::from("frame");
    for p in ["p", "q"] {
        for i in 0..g.dim() {
            let _ = write!(csv, ",{p}{}", i + 1);
        }
    }
    for i in 0..g.dim() {
        for j in 0..g.dim() {
            let _ = write!(csv, ",D{}{}", i + 1, j + 1);
        }
    }
    csv.push('\n');
    if let Verdict::Match { .. } = verdict {
        let local = LocalIsometry::new(g.clone(), gh.clone(), atlas.clone(), target_atlas.clone())?;
        for k in 0..atlas.len() {
            let j = local
                .one_jet(k)
                .ok_or_else(|| ScenarioError::invalid(c.id(), "degenerate frame"))?;
            csv_row(
                &mut csv,
                std::iter::once(k.to_string())
                    .chain(nums(&j.p))
                    .chain(nums(&j.q))
                    .chain(matrix_rows(&j.d).concat().iter().map(|x| x.to_string())),
            );
        }
        if !atlas.edges.is_empty() && task.overlap_samples > 0 {
            let samples = local.overlap_samples(task.overlap_samples)?;
            let disc = local.overlap_discrepancy(&samples)?;
            checks.push(c.bound("overlap_discrepancy", disc, task.overlap_tol));
            overlap = json!({ "samples": samples.len(), "discrepancy": disc });
        }
    }
    Ok(Outcome {
        checks,
        flags: vec![],
        results: json!({
            "source": g.label(),
            "target": gh.label(),
            "edges": atlas.edges,
            "target_edges": target_atlas.edges,
            "verdict": verdict,
            "overlap": overlap,
        }),
        csv: Some(csv),
    })
}

/// The seed 1-jet at `p`: explicit parts first, the map's value and
/// differential for whatever is missing.
fn resolve_seed(
    c: &Ctx,
    decl: &SeedDecl,
    p: Vec<f64>,
    map: Option<&MapPair>,
) -> Result<OneJet, ScenarioError> {
    let d = p.len();
    let q = match (&decl.q, map) {
        (Some(q), _) => q.clone(),
        (None, Some(m)) => m.forward.apply_f64(&p),
        (None, None) => {
            return Err(ScenarioError::invalid(
                c.id(),
                "seed.q is required without a target map",
            ))
        }
    };
    let dm = match (&decl.d, map) {
        (Some(rows), _) => {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(ScenarioError::invalid(c.id(), "seed.d has the wrong shape"));
            }
            DMatrix::from_fn(d, d, |i, j| rows[i][j])
        }
        (None, Some(m)) => m.forward.jacobian(&p),
        (None, None) => {
            return Err(ScenarioError::invalid(
                c.id(),
                "seed.d is required without a target map",
            ))
        }
    };
    if q.len() != d {
        return Err(ScenarioError::invalid(
            c.id(),
            "seed.q has the wrong length",
        ));
    }
    Ok(OneJet::new(p, q, dm))
}

type PointMap<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>, ScenarioError> + 'a;

/// `Jᵀ ĝ(F(x)) J − g(x)` with `J` from central differences of `F`.
fn pullback_defect(
    g: &dyn ChartMetric,
    gh: &dyn ChartMetric,
    f: &PointMap<'_>,
    x: &[f64],
    fx: &[f64],
) -> Result<f64, ScenarioError> {
    const H: f64 = 1e-3;
    let d = x.len();
    let mut jac = DMatrix::zeros(d, d);
    for k in 0..d {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[k] += H;
        b[k] -= H;
        let (fa, fb) = (f(&a)?, f(&b)?);
        for i in 0..d {
            jac[(i, k)] = (fa[i] - fb[i]) / (2.0 * H);
        }
    }
    let pulled = jac.transpose() * metric_at(gh, fx)? * &jac;
    Ok((pulled - metric_at(g, x)?).abs().max())
}

fn run_propagate(c: &Ctx, task: &PropagateTask) -> Result<Outcome, ScenarioError> {
    let g = c.metric()?;
    let target = c.s.target.as_ref().ok_or_else(|| c.missing("target"))?;
    let (gh, map) = build_target_metric(c.id(), g.clone(), target)?;
    let p = task
        .seed
        .p
        .clone()
        .or_else(|| task.paths.first().and_then(|path| path.first().cloned()))
        .ok_or_else(|| ScenarioError::invalid(c.id(), "no seed point"))?;
    let seed = resolve_seed(c, &task.seed, p, map.as_ref())?;
    let mut opts = PropagationOptions::default();
    if let Some(step) = task.step {
        opts.step = step;
    }
    let d = g.dim();
    let mut checks = vec![];
    let mut csv = String::from("path,node");
    for p in ["p", "q"] {
        for i in 0..d {
            let _ = write!(csv, ",{p}{}", i + 1);
        }
    }
    for i in 0..d {
        for j in 0..d {
            let _ = write!(csv, ",D{}{}", i + 1, j + 1);
        }
    }
    csv.push('\n');
    let mut paths = vec![];
    for (k, path) in task.paths.iter().enumerate() {
        let chain = propagate_one_jet(g.as_ref(), gh.as_ref(), &seed, path, &opts)?;
        for (n, j) in chain.iter().enumerate() {
            csv_row(
                &mut csv,
                [k.to_string(), n.to_string()]
                    .into_iter()
                    .chain(nums(&j.p))
                    .chain(nums(&j.q))
                    .chain(matrix_rows(&j.d).concat().iter().map(|x| x.to_string())),
            );
        }
        let end = chain.last().expect("chains start at the seed");
        let mut entry = json!({
            "path": k,
            "nodes": chain.len(),
            "end": { "p": end.p, "q": end.q, "d": matrix_rows(&end.d) },
        });
        if let Some(m) = &map {
            let q_err = max_abs(
                end.q
                    .iter()
                    .zip(m.forward.apply_f64(&end.p))
                    .map(|(a, b)| a - b),
            );
            let d_err = (&end.d - m.forward.jacobian(&end.p)).abs().max();
            let err = q_err.max(d_err);
            entry["oracle_error"] = json!(err);
            checks.push(c.bound(format!("path{k}_oracle"), err, task.tol));
        }
        if path.len() > 1 && path.first() == path.last() {
            let ret = max_abs(end.q.iter().zip(&seed.q).map(|(a, b)| a - b))
                .max((&end.d - &seed.d).abs().max());
            entry["loop_error"] = json!(ret);
            checks.push(c.bound(format!("path{k}_loop"), ret, task.tol));
        }
        paths.push(entry);
    }
    let eval = |x: &[f64]| -> Result<Vec<f64>, ScenarioError> {
        Ok(evaluate_global(
            g.as_ref(),
            gh.as_ref(),
            &seed,
            x,
            None,
            &opts,
        )?)
    };
    let mut points = vec![];
    let (mut worst_oracle, mut worst_pullback) = (0.0_f64, 0.0_f64);
    for x in &task.evaluate {
        let fx = eval(x)?;
        let defect = pullback_defect(g.as_ref(), gh.as_ref(), &eval, x, &fx)?;
        worst_pullback = worst_pullback.max(defect);
        let mut entry = json!({ "x": x, "value": fx, "pullback_defect": defect });
        if let Some(m) = &map {
            let err = max_abs(fx.iter().zip(m.forward.apply_f64(x)).map(|(a, b)| a - b));
            worst_oracle = worst_oracle.max(err);
            entry["oracle_error"] = json!(err);
        }
        points.push(entry);
    }
    if !task.evaluate.is_empty() {
        if map.is_some() {
            checks.push(c.bound("evaluate_oracle", worst_oracle, task.tol));
        }
        checks.push(c.bound("pullback_defect", worst_pullback, task.pullback_tol));
    }
    Ok(Outcome {
        checks,
        flags: vec![],
        results: json!({
            "seed": { "p": seed.p, "q": seed.q, "d": matrix_rows(&seed.d) },
            "paths": paths,
            "evaluate": points,
        }),
        csv: Some(csv),
    })
}

fn track_json(rec: &TrackRecord, report: Option<&SmoothnessReport>) -> Value {
    json!({
        "edges": rec.edges,
        "truncated": rec.truncated,
        "nodes": rec.nodes.iter().map(|n| json!({
            "t": n.t,
            "q": n.one_jet.q,
            "d": matrix_rows(&n.one_jet.d),
            "residual": n.residual,
            "iterations": n.iterations,
            "halvings": n.halvings,
            "flags": n.flags,
        })).collect::<Vec<_>>(),
        "smoothness": report,
    })
}

/// Smoothness report and jump flags for a finished record.
fn diagnose(
    rec: &mut TrackRecord,
    opts: &SmoothnessOptions,
) -> Result<(SmoothnessReport, Vec<String>), ScenarioError> {
    let report = smoothness_diagnostic(rec, opts)?;
    apply_flags(rec, &report);
    let flags = report
        .flagged_t
        .iter()
        .map(|t| format!("jump at t = {t}"))
        .collect();
    Ok((report, flags))
}

fn complete(rec: &TrackRecord) -> bool {
    rec.truncated.is_empty() && rec.nodes.iter().all(|n| n.accepted())
}

fn run_track(c: &Ctx, task: &TrackTask) -> Result<Outcome, ScenarioError> {
    let (g, gh, pair) = build_family_pair(c.s, c.seed)?;
    if task.points.iter().any(|p| p.len() != g.dim()) {
        return Err(ScenarioError::invalid(
            c.id(),
            "track points have the wrong dimension",
        ));
    }
    let section = FrameSection::standard(task.points.clone());
    let seed = resolve_seed(c, &task.seed, task.points[0].clone(), Some(&pair))?;
    let opts = TrackOptions {
        degree: task.degree,
        delta: task.delta,
        solver: crate::tracker::SolverOptions {
            accept_tol: task.accept_tol,
            res_tol: task
                .solve_tol
                .unwrap_or(crate::tracker::SolverOptions::default().res_tol),
            ..Default::default()
        },
        ..Default::default()
    };
    let grid = task.grid.values();
    let mut rec = track(
        g.as_ref(),
        gh.as_ref(),
        &seed,
        task.t0,
        &grid,
        &section,
        &opts,
    )?;
    let (report, flags) = diagnose(&mut rec, &task.smoothness)?;
    let mut checks = vec![Check::holds("all_nodes_accepted", complete(&rec))];
    let residual = max_abs(rec.nodes.iter().map(|n| n.residual));
    checks.push(c.bound("max_residual", residual, task.accept_tol));
    if let Some(tol) = task.linear_tol {
        let expected = pair.forward.jacobian(&task.points[0]);
        let err = max_abs(
            rec.nodes
                .iter()
                .map(|n| (&n.one_jet.d - &expected).abs().max()),
        );
        checks.push(c.bound("linear_part", err, tol));
    }
    if let Some(tol) = task.point_derivative_tol {
        checks.push(c.bound("point_derivative", report.max_point_derivative, tol));
    }
    Ok(Outcome {
        checks,
        flags,
        results: track_json(&rec, Some(&report)),
        csv: Some(rec.to_csv()),
    })
}

/// `Σ_{k ≤ n} (k+1)/(π r^{2k+2}) (z w̄)^k`, the degree-`n` truncation of
/// the Bergman kernel of the disc of radius `r`.
fn disc_series(z: Complex<f64>, w: Complex<f64>, r: f64, n: usize) -> Complex<f64> {
    let u = z * w.conj() / (r * r);
    let mut term = Complex::new(1.0, 0.0);
    let mut sum = Complex::new(0.0, 0.0);
    for k in 0..=n {
        sum += term * ((k + 1) as f64);
        term *= u;
    }
    sum / (std::f64::consts::PI * r * r)
}

fn run_bergman(c: &Ctx, task: &BergmanTask) -> Result<Outcome, ScenarioError> {
    let decl = c.s.domain.as_ref().ok_or_else(|| c.missing("domain"))?;
    let fam = build_domain(c.id(), decl)?;
    let dom = fam.at(task.t)?;
    let degree = task.degree.unwrap_or(if dom.dim == 1 { 20 } else { 8 });
    let quad = c.quad(&task.quad);
    let validation = dom.validate(64)?;
    let kernel = Arc::new(kernel_build(&dom, degree, &quad)?);
    let metric: Arc<dyn ChartMetric> = Arc::new(BergmanMetric::new(
        kernel.clone(),
        dom.clone(),
        task.margin_fraction * validation.diameter,
    ));
    let n = dom.real_dim();
    let mut checks = vec![];
    let mut csv = String::new();
    csv.push_str(
        &(1..=dom.dim)
            .map(|k| format!("x{k},y{k}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    csv.push_str(",kernel_diagonal");
    for i in 0..n {
        for j in i..n {
            let _ = write!(csv, ",g{}{}", i + 1, j + 1);
        }
    }
    csv.push_str(",min_eigenvalue\n");
    let mut points = vec![];
    let mut min_eig = f64::INFINITY;
    for x in &task.points {
        if x.len() != n {
            return Err(ScenarioError::invalid(
                c.id(),
                "bergman points have the wrong dimension",
            ));
        }
        let kd = kernel.diagonal(x.as_slice());
        let g = metric_at(metric.as_ref(), x)?;
        let eig = g.symmetric_eigenvalues().min();
        min_eig = min_eig.min(eig);
        let packed = pack_sym(&g);
        csv_row(
            &mut csv,
            nums(x)
                .chain([kd.to_string()])
                .chain(nums(&packed))
                .chain([eig.to_string()]),
        );
        points.push(
            json!({ "x": x, "kernel_diagonal": kd, "metric": packed, "min_eigenvalue": eig }),
        );
    }
    if !task.points.is_empty() {
        checks.push(Check::holds("metric_positive", min_eig > 0.0));
    }
    let mut oracle = Value::Null;
    match decl.builtin.as_deref() {
        Some("disc") => {
            let r = decl.params.first().copied().unwrap_or(1.0);
            let mut worst = 0.0_f64;
            for a in 0..8 {
                for b in 0..8 {
                    let z = Complex::from_polar(0.5 * r * (a + 1) as f64 / 8.0, 0.9 * a as f64);
                    let w = Complex::from_polar(0.5 * r * (b + 1) as f64 / 8.0, 2.1 * b as f64);
                    let want = disc_series(z, w, r, degree);
                    worst = worst.max((kernel.kernel(&[z], &[w]) - want).norm() / want.norm());
                }
            }
            checks.push(c.bound("disc_series_relative_error", worst, task.oracle_tol));
            oracle = json!({ "kind": "disc_series", "relative_error": worst });
        }
        Some("ball") => {
            let d = dom.dim;
            let want =
                (1..=d).map(|k| k as f64).product::<f64>() / std::f64::consts::PI.powi(d as i32);
            let got = kernel.diagonal(vec![0.0; n].as_slice());
            let rel = (got - want).abs() / want;
            checks.push(c.bound("ball_origin_relative_error", rel, task.oracle_tol));
            oracle = json!({ "kind": "ball_origin", "value": got, "expected": want, "relative_error": rel });
        }
        _ => {}
    }
    let mut mobius = Value::Null;
    if let Some(m) = &task.mobius {
        if n != 2 || !(m.a[0] * m.a[0] + m.a[1] * m.a[1] < 1.0) {
            return Err(ScenarioError::invalid(
                c.id(),
                "Möbius check needs a planar domain and |a| < 1",
            ));
        }
        let pulled = PullbackMetric::new(metric.clone(), Arc::new(Mobius::new(m.theta, m.a)));
        let mut worst = 0.0_f64;
        for x in &m.points {
            let a = metric_at(&pulled, x)?;
            let b = metric_at(metric.as_ref(), x)?;
            worst = worst.max((a - &b).abs().max() / b.abs().max());
        }
        checks.push(c.bound("mobius_invariance", worst, m.tol));
        mobius = json!({ "relative_error": worst, "points": m.points.len() });
    }
    let mut richardson = Value::Null;
    if let Some(r) = &task.richardson {
        let bf = pullback_family(&fam, r.chart_t, degree, &quad, &PullbackOptions::default())?;
        let rep = richardson_check(&bf, &r.x, r.t, r.h, r.tol * c.scale)?;
        checks.push(Check::holds("richardson_consistent", rep.passed));
        richardson = serde_json::to_value(&rep).expect("serializable");
    }
    Ok(Outcome {
        checks,
        flags: vec![],
        results: json!({
            "domain": dom.label,
            "degree": degree,
            "basis_size": kernel.len(),
            "quadrature_nodes": kernel.nodes,
            "gram_defect": kernel.gram_defect,
            "validation": validation,
            "points": points,
            "oracle": oracle,
            "mobius": mobius,
            "richardson": richardson,
        }),
        csv: Some(csv),
    })
}

/// Picks, among linear candidates fixing `p₁`, the seed with the smallest
/// signature gap at `t`; ties go to the earlier candidate.
fn discover_seed(
    g: &dyn MetricFamily,
    gh: &dyn MetricFamily,
    section: &FrameSection,
    t: f64,
    candidates: &[(&str, DMatrix<f64>)],
    opts: &TrackOptions,
) -> Result<(usize, Vec<f64>), ScenarioError> {
    let p = section.points[0].clone();
    let gaps = candidates
        .iter()
        .map(|(_, l)| {
            let q: Vec<f64> = (l * DVector::from_column_slice(&p))
                .iter()
                .copied()
                .collect();
            seed_gap(
                g,
                gh,
                &OneJet::new(p.clone(), q, l.clone()),
                t,
                section,
                opts,
            )
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let mut best = 0;
    for (k, gap) in gaps.iter().enumerate() {
        if *gap < gaps[best] - opts.seed_tol {
            best = k;
        }
    }
    Ok((best, gaps))
}

fn run_demo(c: &Ctx, task: &DemoTask) -> Result<Outcome, ScenarioError> {
    let bumps = task.bumps.clone().unwrap_or_else(default_flip_bumps);
    let fam = build_flip_family(task.amplitude, &bumps)?;
    if task.points.iter().any(|p| p.len() != 2) {
        return Err(ScenarioError::invalid(c.id(), "demo points must be planar"));
    }
    let section = FrameSection::standard(task.points.clone());
    let opts = TrackOptions {
        degree: task.degree,
        delta: task.delta,
        ..Default::default()
    };
    let n = (1.0 / task.step).round().max(1.0) as usize;
    let right: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let left: Vec<f64> = (1..=n).rev().map(|k| -(k as f64) / n as f64).collect();
    let candidates = [
        ("identity", DMatrix::identity(2, 2)),
        ("reflection", fam.reflection.a.clone()),
    ];
    let p = task.points[0].clone();
    let seeded = |t: f64| -> Result<(usize, Vec<f64>, OneJet), ScenarioError> {
        let (k, gaps) = discover_seed(&fam.source, &fam.target, &section, t, &candidates, &opts)?;
        let l = &candidates[k].1;
        let q = (l * DVector::from_column_slice(&p))
            .iter()
            .copied()
            .collect();
        Ok((k, gaps, OneJet::new(p.clone(), q, l.clone())))
    };
    let (r_seed, l_seed) = par::join(|| seeded(1.0), || seeded(-1.0));
    let ((rk, r_gaps, r_jet), (lk, l_gaps, l_jet)) = (r_seed?, l_seed?);
    let (r_rec, l_rec) = par::join(
        || {
            track(
                &fam.source,
                &fam.target,
                &r_jet,
                1.0,
                &right,
                &section,
                &opts,
            )
        },
        || {
            track(
                &fam.source,
                &fam.target,
                &l_jet,
                -1.0,
                &left,
                &section,
                &opts,
            )
        },
    );
    let (r_rec, l_rec) = (r_rec?, l_rec?);
    let mut checks = vec![
        c.bound("right_seed_gap", r_gaps[rk], opts.seed_tol),
        c.bound("left_seed_gap", l_gaps[lk], opts.seed_tol),
        Check::holds("right_branch_complete", complete(&r_rec)),
        Check::holds("left_branch_complete", complete(&l_rec)),
    ];
    let mut rec = l_rec.merged(r_rec);
    let (report, flags) = diagnose(&mut rec, &task.smoothness)?;
    let adjacent = [left[left.len() - 1], right[0]];
    if task.expect_jump {
        let ok =
            !report.flagged_t.is_empty() && report.flagged_t.iter().all(|t| adjacent.contains(t));
        checks.push(Check::holds("jump_flagged_next_to_zero", ok));
    } else {
        checks.push(Check::holds("no_jump", report.flagged_t.is_empty()));
    }
    let seed_json = |k: usize, gaps: &[f64]| {
        json!({
            "chosen": candidates[k].0,
            "gaps": candidates.iter().zip(gaps).map(|((name, _), g)| json!({ "candidate": name, "gap": g })).collect::<Vec<_>>(),
        })
    };
    Ok(Outcome {
        checks,
        flags,
        results: json!({
            "amplitude": task.amplitude,
            "bumps": bumps,
            "right_seed": seed_json(rk, &r_gaps),
            "left_seed": seed_json(lk, &l_gaps),
            "track": track_json(&rec, Some(&report)),
        }),
        csv: Some(rec.to_csv()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disc_series_matches_direct_sum() {
        let z = Complex::new(0.3, -0.1);
        let w = Complex::new(-0.2, 0.25);
        let direct: Complex<f64> = (0..=5)
            .map(|k| (k as f64 + 1.0) / std::f64::consts::PI * (z * w.conj()).powu(k as u32))
            .sum();
        assert!((disc_series(z, w, 1.0, 5) - direct).norm() < 1e-15);
        // radius r: K_r(z, w) = K_1(z/r, w/r) / r²
        let r = 2.0;
        let scaled = disc_series(z / r, w / r, 1.0, 5) / (r * r);
        assert!((disc_series(z, w, r, 5) - scaled).norm() < 1e-15);
    }

    #[test]
    fn batch_exit_code_priorities() {
        let rep = |status| {
            Ok(RunReport {
                schema_version: SCHEMA_VERSION,
                scenario: "x".into(),
                command: Command::Check,
                seed: 0,
                tol_scale: 1.0,
                status,
                flags: vec![],
                checks: vec![],
                results: Value::Null,
                timing: None,
                csv: None,
            })
        };
        assert_eq!(batch_exit_code(&[rep(Status::Pass)]), 0);
        assert_eq!(
            batch_exit_code(&[rep(Status::Pass), rep(Status::Flagged)]),
            2
        );
        assert_eq!(
            batch_exit_code(&[rep(Status::Flagged), rep(Status::Fail)]),
            1
        );
        let err: Result<RunReport, ScenarioError> = Err(ScenarioError::UnknownScenario("y".into()));
        assert_eq!(batch_exit_code(&[rep(Status::Flagged), err]), 1);
    }
}
