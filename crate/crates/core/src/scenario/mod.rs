//! Config-driven scenarios: TOML declarations of metrics, maps, domains and
//! tasks, builders that resolve them against the registries, and runners
//! producing deterministic [`RunReport`]s.

mod config;
mod flip;
mod registry;
mod report;
mod run;

use std::path::PathBuf;

use thiserror::Error;

use crate::bergman::BergmanError;
use crate::invariants::InvariantError;
use crate::isometry::IsometryError;
use crate::metric::MetricError;
use crate::tracker::TrackError;

pub use config::{
    AtlasDecl, BergmanTask, BumpDecl, CheckTask, Config, DemoTask, DomainDecl, FamilyDecl,
    GridDecl, InvariantsTask, MapDecl, MetricDecl, MobiusDecl, PropagateTask, RichardsonDecl,
    Scenario, SeedDecl, TargetDecl, TrackTask,
};
pub use flip::{build_flip_family, default_flip_bumps, flip_profile, FlipFamily};
pub use registry::{build_domain, build_family_pair, build_map, build_target_metric, MapPair};
pub use report::{Check, Command, RunReport, Status, SCHEMA_VERSION};
pub use run::{batch_exit_code, run, run_batch, RunOptions};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("no scenario with id {0:?}")]
    UnknownScenario(String),
    #[error("scenario {id:?}: {msg}")]
    Invalid { id: String, msg: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Isometry(#[from] IsometryError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Bergman(#[from] BergmanError),
}

impl ScenarioError {
    pub(crate) fn invalid(id: &str, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            id: id.to_string(),
            msg: msg.into(),
        }
    }
}
