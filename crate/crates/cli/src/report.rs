//! Report rows with their role in the run and the derived status.

use std::fmt;

use eti_core::InequalityReport;
use serde_json::Value;

use crate::config::SuiteName;

/// Suffix of negative-control row names.
pub const CONTROL_SUFFIX: &str = ":control";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Check,
    /// Expected to fail; never counts against the exit code.
    Control,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
    Expected,
    NotFalsified,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Pass => "PASS",
            Self::Fail => "FAIL",
            Self::NotApplicable => "N/A",
            Self::Expected => "EXPECTED",
            Self::NotFalsified => "NOT-FALSIFIED",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Row {
    pub suite: SuiteName,
    pub draw: Option<usize>,
    pub role: Role,
    pub report: InequalityReport,
}

impl Row {
    pub fn check(suite: SuiteName, draw: Option<usize>, report: InequalityReport) -> Self {
        Self {
            suite,
            draw,
            role: Role::Check,
            report,
        }
    }

    /// A control row; the name gets the control suffix.
    pub fn control(suite: SuiteName, draw: Option<usize>, mut report: InequalityReport) -> Self {
        if !report.name.ends_with(CONTROL_SUFFIX) {
            report.name.push_str(CONTROL_SUFFIX);
        }
        Self {
            suite,
            draw,
            role: Role::Control,
            report,
        }
    }

    pub fn status(&self) -> Status {
        let r = &self.report;
        match (self.role, r.applicable, r.satisfied) {
            (_, false, _) => Status::NotApplicable,
            (Role::Check, true, true) => Status::Pass,
            (Role::Check, true, false) => Status::Fail,
            (Role::Control, true, true) => Status::NotFalsified,
            (Role::Control, true, false) => Status::Expected,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = self.report.to_json();
        let obj = v.as_object_mut().expect("report serializes to an object");
        obj.insert("suite".into(), self.suite.as_str().into());
        obj.insert("draw".into(), self.draw.map_or(Value::Null, Value::from));
        obj.insert(
            "role".into(),
            match self.role {
                Role::Check => "check",
                Role::Control => "control",
            }
            .into(),
        );
        obj.insert("status".into(), self.status().as_str().into());
        v
    }
}

/// An extra output file produced by a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub file: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub suite: SuiteName,
    pub rows: Vec<Row>,
    /// Solver or setup failures; each one fails the run.
    pub errors: Vec<String>,
    pub artifacts: Vec<Artifact>,
    pub seconds: f64,
}

impl SuiteOutcome {
    pub fn new(suite: SuiteName) -> Self {
        Self {
            suite,
            rows: Vec::new(),
            errors: Vec::new(),
            artifacts: Vec::new(),
            seconds: 0.0,
        }
    }

    pub fn count(&self, status: Status) -> usize {
        self.rows.iter().filter(|r| r.status() == status).count()
    }

    /// Failed checks plus errors.
    pub fn failures(&self) -> usize {
        self.count(Status::Fail) + self.errors.len()
    }
}
