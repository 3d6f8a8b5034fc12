use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::Command;
use super::ScenarioError;
use crate::bergman::{PullbackOptions, QuadConfig};
use crate::metric::Bump;
use crate::tracker::SmoothnessOptions;

fn degree3() -> usize {
    3
}
fn delta_default() -> f64 {
    0.25
}
fn tol_jet() -> f64 {
    1e-8
}
fn tol_match() -> f64 {
    1e-6
}
fn tol_overlap() -> f64 {
    1e-5
}
fn tol_kernel() -> f64 {
    1e-3
}
fn tol_mobius() -> f64 {
    5e-3
}
fn tol_richardson() -> f64 {
    1e-2
}
fn samples10() -> usize {
    10
}
fn half_width2() -> f64 {
    2.0
}
fn t_unit() -> [f64; 2] {
    [-1.0, 1.0]
}
fn margin() -> f64 {
    0.05
}
fn demo_amplitude() -> f64 {
    0.5
}
fn demo_step() -> f64 {
    0.05
}
fn demo_points() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0], vec![0.3, 0.0], vec![0.0, 0.3]]
}
fn yes() -> bool {
    true
}

/// A config file: any number of `[[scenario]]` tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(rename = "scenario", default)]
    pub scenarios: Vec<Scenario>,
}

impl Config {
    pub fn parse(src: &str) -> Result<Config, ScenarioError> {
        let cfg: Config = toml::from_str(src)
            .map_err(|e| ScenarioError::Parse(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ScenarioError> {
        let src = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Config::parse(&src).map_err(|e| match e {
            ScenarioError::Parse(msg) => ScenarioError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn get(&self, id: &str) -> Result<&Scenario, ScenarioError> {
        self.scenarios
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| ScenarioError::UnknownScenario(id.to_string()))
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.scenarios.is_empty() {
            return Err(ScenarioError::Parse("no [[scenario]] tables".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.scenarios {
            if s.id.is_empty()
                || !s
                    .id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return Err(ScenarioError::invalid(
                    &s.id,
                    "ids must be non-empty and use only letters, digits, '-' and '_'",
                ));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(ScenarioError::invalid(&s.id, "duplicate id"));
            }
            s.validate()?;
        }
        Ok(())
    }
}

/// One named scenario. Shared declarations (`metric`, `target`, `atlas`,
/// `family`, `domain`) are resolved by whichever task runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Offset of every quasi-random sequence the scenario draws from.
    #[serde(default)]
    pub seed: u64,
    pub metric: Option<MetricDecl>,
    pub target: Option<TargetDecl>,
    pub atlas: Option<AtlasDecl>,
    pub family: Option<FamilyDecl>,
    pub domain: Option<DomainDecl>,
    pub invariants: Option<InvariantsTask>,
    pub check: Option<CheckTask>,
    pub propagate: Option<PropagateTask>,
    pub track: Option<TrackTask>,
    pub bergman: Option<BergmanTask>,
    pub demo: Option<DemoTask>,
}

fn positive(id: &str, name: &str, v: f64) -> Result<(), ScenarioError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::invalid(
            id,
            format!("{name} must be positive, got {v}"),
        ))
    }
}

impl Scenario {
    /// Whether the scenario declares the task `command` runs.
    pub fn supports(&self, command: Command) -> bool {
        match command {
            Command::Invariants => self.invariants.is_some(),
            Command::Check => self.check.is_some(),
            Command::Propagate => self.propagate.is_some(),
            Command::Track => self.track.is_some(),
            Command::Bergman => self.bergman.is_some(),
            Command::DemoDiscontinuity => self.demo.is_some(),
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let id = self.id.as_str();
        if let Some(t) = &self.target {
            if t.map.is_some() == t.metric.is_some() {
                return Err(ScenarioError::invalid(
                    id,
                    "target needs exactly one of `map` or `metric`",
                ));
            }
        }
        if let Some(a) = &self.atlas {
            positive(id, "atlas.delta", a.delta)?;
            if a.points.is_empty() {
                return Err(ScenarioError::invalid(id, "atlas.points is empty"));
            }
        }
        if let Some(t) = &self.invariants {
            positive(id, "invariants.tol", t.tol)?;
        }
        if let Some(t) = &self.check {
            positive(id, "check.tol", t.tol)?;
            positive(id, "check.overlap_tol", t.overlap_tol)?;
        }
        if let Some(t) = &self.propagate {
            positive(id, "propagate.tol", t.tol)?;
            if let Some(s) = t.step {
                positive(id, "propagate.step", s)?;
            }
        }
        if let Some(t) = &self.track {
            positive(id, "track.delta", t.delta)?;
            positive(id, "track.accept_tol", t.accept_tol)?;
            if let Some(v) = t.solve_tol {
                positive(id, "track.solve_tol", v)?;
            }
            for v in [t.linear_tol, t.point_derivative_tol].into_iter().flatten() {
                positive(id, "track tolerances", v)?;
            }
            if t.points.is_empty() {
                return Err(ScenarioError::invalid(id, "track.points is empty"));
            }
        }
        if let Some(b) = &self.bergman {
            positive(id, "bergman.oracle_tol", b.oracle_tol)?;
            positive(id, "bergman.margin_fraction", b.margin_fraction)?;
            if let Some(m) = &b.mobius {
                positive(id, "bergman.mobius.tol", m.tol)?;
            }
            if let Some(r) = &b.richardson {
                positive(id, "bergman.richardson.tol", r.tol)?;
                positive(id, "bergman.richardson.h", r.h)?;
            }
        }
        if let Some(d) = &self.demo {
            positive(id, "demo.step", d.step)?;
            positive(id, "demo.delta", d.delta)?;
            if !(d.amplitude >= 0.0) {
                return Err(ScenarioError::invalid(
                    id,
                    "demo.amplitude must be non-negative",
                ));
            }
        }
        Ok(())
    }
}

/// A registry metric: `id` and numeric parameters, see
/// [`crate::metric::build_metric`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricDecl {
    pub id: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

/// Chart maps; dimensions not given explicitly follow the metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapDecl {
    Identity,
    /// Planar rotation by `angle` radians.
    Rotation {
        angle: f64,
    },
    /// Sign flip of coordinate `axis` (the last one by default).
    Reflection {
        axis: Option<usize>,
    },
    /// `x ↦ A x + b`, `matrix` given by rows.
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Vec<f64>,
    },
    /// Disc automorphism `z ↦ e^{iθ}(z − a)/(1 − āz)`.
    Mobius {
        theta: f64,
        a: [f64; 2],
    },
}

/// What the source is compared against: its pushforward by a map (a known
/// isometry), or an unrelated metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDecl {
    pub map: Option<MapDecl>,
    pub metric: Option<MetricDecl>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasDecl {
    pub points: Vec<Vec<f64>>,
    #[serde(default = "delta_default")]
    pub delta: f64,
    #[serde(default = "degree3")]
    pub degree: usize,
}

/// Either an explicit list or `nodes` equally spaced values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridDecl {
    Values(Vec<f64>),
    Uniform { start: f64, end: f64, nodes: usize },
}

impl GridDecl {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridDecl::Values(v) => v.clone(),
            GridDecl::Uniform { start, end, nodes } => match nodes {
                0 => vec![],
                1 => vec![*start],
                n => (0..*n)
                    .map(|k| start + (end - start) * k as f64 / (n - 1) as f64)
                    .collect(),
            },
        }
    }
}

/// A 1-jet `(p, q, D)`; missing parts come from the target map.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedDecl {
    pub p: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    /// Differential by rows.
    pub d: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvariantsTask {
    /// Allowed deviation of the degree-0 part from `δ` and of the
    /// degree-1 part from zero.
    #[serde(default = "tol_jet")]
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckTask {
    #[serde(default = "tol_match")]
    pub tol: f64,
    /// Expected verdict; when absent any verdict passes.
    pub expect_match: Option<bool>,
    /// Overlap points per edge for the assembled local isometry.
    #[serde(default = "samples10")]
    pub overlap_samples: usize,
    #[serde(default = "tol_overlap")]
    pub overlap_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateTask {
    #[serde(default)]
    pub seed: SeedDecl,
    /// Polylines starting at the seed point; closed ones also report the
    /// return error.
    pub paths: Vec<Vec<Vec<f64>>>,
    /// Points where the global map is evaluated.
    #[serde(default)]
    pub evaluate: Vec<Vec<f64>>,
    #[serde(default = "tol_match")]
    pub tol: f64,
    /// Tolerance for the pulled-back metric at `evaluate` points.
    #[serde(default = "tol_overlap")]
    pub pullback_tol: f64,
    pub step: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackTask {
    pub t0: f64,
    pub grid: GridDecl,
    /// Base points; the seed sits at the first.
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: SeedDecl,
    #[serde(default = "delta_default")]
    pub delta: f64,
    #[serde(default = "degree3")]
    pub degree: usize,
    #[serde(default = "tol_jet")]
    pub accept_tol: f64,
    /// Residual the solver polishes towards; metrics built numerically
    /// should set it near their noise floor.
    pub solve_tol: Option<f64>,
    #[serde(default)]
    pub smoothness: SmoothnessOptions,
    /// Expected distance of every linear part from the target map's
    /// differential.
    pub linear_tol: Option<f64>,
    /// Expected bound on the derivative of the image point.
    pub point_derivative_tol: Option<f64>,
}

/// Gaussian bump whose amplitude and centre may move with `t`:
/// `amp + amp_rate·t + amp_quad·t²` and `center + center_rate·t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpDecl {
    pub amp: f64,
    #[serde(default)]
    pub amp_rate: f64,
    #[serde(default)]
    pub amp_quad: f64,
    pub center: Vec<f64>,
    #[serde(default)]
    pub center_rate: Vec<f64>,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyDecl {
    /// `e^{2u_t} δ` (or `(1 + u_t) δ` when `additive`), `u_t` linear plus
    /// bumps.
    Conformal {
        linear: Vec<f64>,
        #[serde(default)]
        linear_rate: Vec<f64>,
        #[serde(default)]
        bumps: Vec<BumpDecl>,
        #[serde(default)]
        additive: bool,
        #[serde(default = "half_width2")]
        half_width: f64,
        #[serde(default = "t_unit")]
        t_domain: [f64; 2],
    },
    /// Bergman metrics of a domain family pulled back to the chart at
    /// `chart_t`.
    Bergman {
        domain: DomainDecl,
        #[serde(default)]
        chart_t: f64,
        degree: Option<usize>,
        #[serde(default)]
        quad: QuadConfig,
        #[serde(default)]
        pullback: PullbackOptions,
    },
}

/// A built-in domain family by name, or a defining function `rho` in the
/// expression grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDecl {
    pub builtin: Option<String>,
    #[serde(default)]
    pub params: Vec<f64>,
    pub rho: Option<String>,
    pub dim: Option<usize>,
    #[serde(default = "half_width2")]
    pub half_width: f64,
    pub t_domain: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobiusDecl {
    pub theta: f64,
    pub a: [f64; 2],
    pub points: Vec<Vec<f64>>,
    #[serde(default = "tol_mobius")]
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RichardsonDecl {
    pub x: Vec<f64>,
    pub t: f64,
    pub h: f64,
    #[serde(default)]
    pub chart_t: f64,
    #[serde(default = "tol_richardson")]
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BergmanTask {
    /// Slice of the domain family to use.
    #[serde(default)]
    pub t: f64,
    /// Monomial degree cap; 20 in `C`, 8 otherwise.
    pub degree: Option<usize>,
    #[serde(default)]
    pub quad: QuadConfig,
    /// Real coordinates where the kernel diagonal and metric are reported.
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default = "margin")]
    pub margin_fraction: f64,
    /// Tolerance of the closed-form comparisons for `disc` and `ball`.
    #[serde(default = "tol_kernel")]
    pub oracle_tol: f64,
    pub mobius: Option<MobiusDecl>,
    pub richardson: Option<RichardsonDecl>,
}

/// The flip construction: a family and its image under a reflection
/// glued at `t = 0` through a profile flat to infinite order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoTask {
    #[serde(default = "demo_amplitude")]
    pub amplitude: f64,
    /// Symmetry-breaking bumps; a fixed asymmetric pair by default.
    pub bumps: Option<Vec<Bump>>,
    /// Grid spacing on both half-grids.
    #[serde(default = "demo_step")]
    pub step: f64,
    #[serde(default = "demo_points")]
    pub points: Vec<Vec<f64>>,
    #[serde(default = "delta_default")]
    pub delta: f64,
    #[serde(default = "degree3")]
    pub degree: usize,
    #[serde(default)]
    pub smoothness: SmoothnessOptions,
    /// Whether a jump at `t = 0` is expected (it is unless the amplitude
    /// vanishes).
    #[serde(default = "yes")]
    pub expect_jump: bool,
}
