use serde::{Deserialize, Serialize};

/// Bumped whenever the JSON layout of [`RunReport`] changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Invariants,
    Check,
    Propagate,
    Track,
    Bergman,
    DemoDiscontinuity,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::Invariants,
        Command::Check,
        Command::Propagate,
        Command::Track,
        Command::Bergman,
        Command::DemoDiscontinuity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Invariants => "invariants",
            Command::Check => "check",
            Command::Propagate => "propagate",
            Command::Track => "track",
            Command::Bergman => "bergman",
            Command::DemoDiscontinuity => "demo-discontinuity",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    /// All checks passed but a diagnostic raised a flag.
    Flagged,
    Fail,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Flagged => 2,
            Status::Fail => 1,
        }
    }
}

/// One expectation: `value ≤ tol` for bounds, `value = 1` for yes/no
/// checks (which carry no tolerance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn bound(name: impl Into<String>, value: f64, tol: f64) -> Check {
        Check {
            name: name.into(),
            value,
            tol: Some(tol),
            passed: value <= tol,
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Check {
        Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            tol: None,
            passed: ok,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: f64,
}

/// Outcome of one scenario under one command. Everything except `timing`
/// is a deterministic function of the config and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub command: Command,
    pub seed: u64,
    pub tol_scale: f64,
    pub status: Status,
    pub flags: Vec<String>,
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
    pub timing: Option<Timing>,
    /// Plot data, written next to the JSON report.
    #[serde(skip)]
    pub csv: Option<String>,
}

impl RunReport {
    pub fn status_of(checks: &[Check], flags: &[String]) -> Status {
        if checks.iter().any(|c| !c.passed) {
            Status::Fail
        } else if !flags.is_empty() {
            Status::Flagged
        } else {
            Status::Pass
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    /// `<scenario>.<command>`, the stem of the output files.
    pub fn file_stem(&self) -> String {
        format!("{}.{}", self.scenario, self.command.name())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// The report without its timing, for byte-level comparisons.
    pub fn deterministic_json(&self) -> String {
        RunReport {
            timing: None,
            ..self.clone()
        }
        .to_json()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_and_exit_codes() {
        let ok = vec![Check::bound("a", 1e-9, 1e-8), Check::holds("b", true)];
        assert_eq!(RunReport::status_of(&ok, &[]), Status::Pass);
        assert_eq!(RunReport::status_of(&ok, &["jump".into()]), Status::Flagged);
        let bad = vec![Check::bound("a", f64::NAN, 1.0)];
        assert_eq!(RunReport::status_of(&bad, &["jump".into()]), Status::Fail);
        assert_eq!(
            [Status::Pass, Status::Flagged, Status::Fail].map(Status::exit_code),
            [0, 2, 1]
        );
        assert_eq!(
            serde_json::to_string(&Command::DemoDiscontinuity).unwrap(),
            "\"demo-discontinuity\""
        );
    }
}
