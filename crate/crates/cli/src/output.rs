//! Report files: results.csv, results.jsonl, summary.txt, manifest.json and
//! suite artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{Role, Row, Status, SuiteOutcome};

pub const CSV_HEADER: [&str; 11] = [
    "name", "lambda", "epsilon", "s", "t", "lhs", "rhs", "slack", "satisfied", "tolerance", "grid_n",
];

/// Outcomes of one configuration; a sweep has one section per value.
#[derive(Debug, Clone)]
pub struct Section {
    pub label: String,
    pub config: RunConfig,
    pub outcomes: Vec<SuiteOutcome>,
}

impl Section {
    pub fn rows(&self) -> impl Iterator<Item = &Row> {
        self.outcomes.iter().flat_map(|o| &o.rows)
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().map(|o| o.failures()).sum()
    }
}

/// 0 when every check passed and every solve converged, else 1.
pub fn exit_code(sections: &[Section]) -> i32 {
    if sections.iter().all(|s| s.failures() == 0) {
        0
    } else {
        1
    }
}

pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let canonical = serde_json::to_vec(cfg)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(|source| CliError::Write { path, source })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn results_csv<'a>(rows: impl Iterator<Item = &'a Row>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for row in rows {
        let r = &row.report;
        let p = &r.params;
        w.write_record([
            r.name.clone(),
            p.lambda.to_string(),
            p.epsilon.to_string(),
            p.s.to_string(),
            p.t.to_string(),
            r.lhs.to_string(),
            r.rhs.to_string(),
            r.slack.to_string(),
            r.satisfied.to_string(),
            r.tolerance.to_string(),
            r.grid_n.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn results_jsonl<'a>(rows: impl Iterator<Item = &'a Row>) -> String {
    let mut s = String::new();
    for row in rows {
        s.push_str(&row.to_json().to_string());
        s.push('\n');
    }
    s
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.3e}")
    } else {
        x.to_string()
    }
}

pub fn summary(sections: &[Section], wall_seconds: f64) -> String {
    let mut s = String::new();
    for sec in sections {
        if !sec.label.is_empty() {
            s.push_str(&format!("== {} ==\n", sec.label));
        }
        s.push_str(&format!(
            "{:<14} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>6} {:>9}  {}\n",
            "suite", "rows", "pass", "fail", "n/a", "expected", "not-fals", "errors", "seconds", "min slack"
        ));
        for o in &sec.outcomes {
            let min = o
                .rows
                .iter()
                .filter(|r| r.status() == Status::Pass || r.status() == Status::Fail)
                .min_by(|a, b| a.report.slack.total_cmp(&b.report.slack));
            let min = min.map_or("-".to_string(), |r| format!("{} ({})", fmt_num(r.report.slack), r.report.name));
            s.push_str(&format!(
                "{:<14} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>6} {:>9.2}  {}\n",
                o.suite.as_str(),
                o.rows.len(),
                o.count(Status::Pass),
                o.count(Status::Fail),
                o.count(Status::NotApplicable),
                o.count(Status::Expected),
                o.count(Status::NotFalsified),
                o.errors.len(),
                o.seconds,
                min
            ));
        }
        if sec.config.control_mode() {
            s.push_str(&format!(
                "\nlambda = {} exceeds the reference constant {}; lambda-dependent rows are negative controls\n",
                sec.config.lambda_value(),
                sec.config.reference_lambda().unwrap_or(f64::NAN)
            ));
            let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
            for r in sec.rows().filter(|r| r.role == Role::Control) {
                let c = counts.entry(&r.report.name).or_default();
                match r.status() {
                    Status::Expected => c.0 += 1,
                    _ => c.1 += 1,
                }
            }
            for (name, (expected, held)) in counts {
                s.push_str(&format!("  {name:<34} {expected:>5} EXPECTED {held:>5} NOT-FALSIFIED\n"));
            }
        } else {
            let controls: Vec<&Row> = sec.rows().filter(|r| r.role == Role::Control).collect();
            if !controls.is_empty() {
                s.push_str("\nnegative controls\n");
            }
            for r in controls {
                let lambda = r.report.extras.get("lambda_star").copied().unwrap_or(r.report.params.lambda);
                s.push_str(&format!(
                    "  {:<34} {:<14} lambda* = {:<10} slack = {:<11} {}\n",
                    r.report.name,
                    r.status().as_str(),
                    fmt_num(lambda),
                    fmt_num(r.report.slack),
                    r.report.note.as_deref().unwrap_or("")
                ));
            }
        }
        let failing: Vec<&Row> = sec.rows().filter(|r| r.status() == Status::Fail).collect();
        if !failing.is_empty() {
            s.push_str(&format!("\nfailed checks ({})\n", failing.len()));
            for r in failing.iter().take(50) {
                s.push_str(&format!(
                    "  {:<14} draw {:<5} {:<28} lhs = {:<11} rhs = {:<11} slack = {}\n",
                    r.suite.as_str(),
                    r.draw.map_or("-".into(), |d| d.to_string()),
                    r.report.name,
                    fmt_num(r.report.lhs),
                    fmt_num(r.report.rhs),
                    fmt_num(r.report.slack)
                ));
            }
        }
        let errors: Vec<&String> = sec.outcomes.iter().flat_map(|o| &o.errors).collect();
        if !errors.is_empty() {
            s.push_str(&format!("\nerrors ({})\n", errors.len()));
            for e in errors {
                s.push_str(&format!("  {e}\n"));
            }
        }
        s.push('\n');
    }
    let code = exit_code(sections);
    s.push_str(&format!(
        "{} in {wall_seconds:.1} s\n",
        if code == 0 { "OK" } else { "FAILED" }
    ));
    s
}

pub fn manifest(command: &str, sections: &[Section], wall_seconds: f64) -> Result<Value> {
    let runs = sections
        .iter()
        .map(|sec| {
            Ok(json!({
                "label": sec.label,
                "config": sec.config,
                "config_sha256": config_hash(&sec.config)?,
                "suites": sec.outcomes.iter().map(|o| json!({
                    "suite": o.suite.as_str(),
                    "rows": o.rows.len(),
                    "failures": o.failures(),
                    "seconds": o.seconds,
                })).collect::<Vec<_>>(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "command": command,
        "versions": {
            "eti-cli": env!("CARGO_PKG_VERSION"),
            "eti-core": eti_core::VERSION,
        },
        "wall_time_seconds": wall_seconds,
        "exit_code": exit_code(sections),
        "runs": runs,
    }))
}

/// Writes every report file into `dir`.
pub fn write_all(dir: &Path, command: &str, sections: &[Section], wall_seconds: f64) -> Result<()> {
    ensure_dir(dir)?;
    let rows = || sections.iter().flat_map(|s| s.rows());
    write(dir.join("results.csv"), results_csv(rows())?)?;
    write(dir.join("results.jsonl"), results_jsonl(rows()))?;
    write(dir.join("summary.txt"), summary(sections, wall_seconds))?;
    let manifest = manifest(command, sections, wall_seconds)?;
    write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for sec in sections {
        for o in &sec.outcomes {
            for a in &o.artifacts {
                let file = if sections.len() > 1 {
                    format!("{}_{}", sanitize(&sec.label), a.file)
                } else {
                    a.file.clone()
                };
                write(dir.join(file), &a.contents)?;
            }
        }
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}
