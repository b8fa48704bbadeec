//! Shared machinery of the suites: per-draw evaluation, the grid tolerance
//! ledger and lambda bisection for negative controls.

use std::collections::BTreeMap;

use eti_core::inequalities::bisect_falsifying_lambda;
use eti_core::{InequalityReport, PotentialSpec};
use rayon::prelude::*;

use crate::config::{RunConfig, SuiteName};
use crate::report::{Row, SuiteOutcome};

/// Largest failing-to-passing lambda ratio left by the bisection.
pub const BISECTION_RESOLUTION: f64 = 1e-3;
/// Instances tried, lowest relative slack first, when looking for a
/// falsifying lambda.
pub const CONTROL_CANDIDATES: usize = 5;

/// Reports of every draw at the configured resolution, with the cached data
/// that controls reuse.
pub struct Evaluated<C> {
    pub reports: Vec<Vec<InequalityReport>>,
    pub caches: Vec<Option<C>>,
    /// Grid allowance per report name.
    pub delta_grid: BTreeMap<String, f64>,
}

/// Double-resolution rerun behind the grid allowance.
#[derive(Debug, Clone, Copy)]
pub struct Refine {
    pub grid_n: usize,
    /// Count handed to [`refinement_set`].
    pub draws: usize,
}

pub fn can_refine(cfg: &RunConfig) -> bool {
    cfg.refinement_draws > 0 && !matches!(cfg.potential, PotentialSpec::Tabulated { .. })
}

/// Runs `eval` on every draw at resolution `n`, reruns a few of them at
/// the resolution of `refine` (see [`refinement_set`]), and sets each
/// report's tolerance to `max(tol, delta_grid)`, where `delta_grid` is the
/// largest slack change seen under refinement for that report name.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<D, S, C>(
    cfg: &RunConfig,
    out: &mut SuiteOutcome,
    what: &str,
    draws: &[D],
    n: usize,
    refine: Option<Refine>,
    build: impl Fn(usize) -> eti_core::Result<S>,
    eval: impl Fn(&S, &D) -> eti_core::Result<(Vec<InequalityReport>, C)> + Sync,
) -> Option<Evaluated<C>>
where
    D: Sync,
    S: Sync,
    C: Send,
{
    let setup = match build(n) {
        Ok(s) => s,
        Err(e) => {
            out.errors.push(format!("{what}: setup failed: {e}"));
            return None;
        }
    };
    let results: Vec<_> = draws.par_iter().map(|d| eval(&setup, d)).collect();
    drop(setup);
    let mut reports = Vec::with_capacity(draws.len());
    let mut caches = Vec::with_capacity(draws.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((rep, cache)) => {
                reports.push(rep);
                caches.push(Some(cache));
            }
            Err(e) => {
                out.errors.push(format!("{what} draw {i}: {e}"));
                reports.push(Vec::new());
                caches.push(None);
            }
        }
    }

    let mut delta_grid = BTreeMap::new();
    if let Some(Refine { grid_n: fine, draws: count }) = refine.filter(|_| can_refine(cfg)) {
        match build(fine) {
            Ok(setup) => {
                let chosen = refinement_set(&reports, count);
                let fine_results: Vec<_> = chosen.par_iter().map(|&i| (i, eval(&setup, &draws[i]))).collect();
                for (i, r) in fine_results {
                    match r {
                        Ok((rep, _)) => record_deltas(&mut delta_grid, &reports[i], &rep),
                        Err(e) => out.errors.push(format!("{what} draw {i} at grid {fine}: {e}")),
                    }
                }
            }
            Err(e) => out.errors.push(format!("{what}: refined setup failed: {e}")),
        }
    }
    for rep in reports.iter_mut().flatten() {
        let delta = delta_grid.get(&rep.name).copied().unwrap_or(0.0);
        let tol = cfg.tol.max(delta);
        *rep = rep.clone().with_tolerance(tol).with_extra("delta_grid", delta);
    }
    Some(Evaluated {
        reports,
        caches,
        delta_grid,
    })
}

/// Draws rerun at double resolution: the first `k`, plus for every report
/// name the `k` draws with the lowest relative slack, so that the allowance
/// is measured where it decides the outcome.
pub fn refinement_set(reports: &[Vec<InequalityReport>], k: usize) -> Vec<usize> {
    let mut chosen: std::collections::BTreeSet<usize> = (0..k.min(reports.len())).collect();
    let mut by_name: BTreeMap<&str, Vec<(f64, usize)>> = BTreeMap::new();
    for (d, reps) in reports.iter().enumerate() {
        for r in reps.iter().filter(|r| r.applicable && r.slack.is_finite()) {
            by_name.entry(&r.name).or_default().push((relative_slack(r), d));
        }
    }
    for mut v in by_name.into_values() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        chosen.extend(v.into_iter().take(k).map(|(_, d)| d));
    }
    chosen.into_iter().collect()
}

fn record_deltas(delta: &mut BTreeMap<String, f64>, coarse: &[InequalityReport], fine: &[InequalityReport]) {
    for (a, b) in coarse.iter().zip(fine) {
        debug_assert_eq!(a.name, b.name);
        let d = (a.slack - b.slack).abs();
        let entry = delta.entry(a.name.clone()).or_insert(0.0);
        if d.is_finite() {
            *entry = entry.max(d);
        }
    }
}

/// Reports named `name` with their draw index.
pub fn named<'a>(reports: &'a [Vec<InequalityReport>], name: &str) -> Vec<(usize, &'a InequalityReport)> {
    reports
        .iter()
        .enumerate()
        .flat_map(|(d, reps)| reps.iter().filter(|r| r.name == name).map(move |r| (d, r)))
        .collect()
}

/// Turns evaluated reports into rows. Under control mode, reports whose name
/// passes `lambda_dependent` become control rows.
pub fn push_rows(
    out: &mut SuiteOutcome,
    cfg: &RunConfig,
    reports: &[Vec<InequalityReport>],
    lambda_dependent: impl Fn(&str) -> bool,
) {
    let suite = out.suite;
    for (d, reps) in reports.iter().enumerate() {
        for r in reps {
            let row = if cfg.control_mode() && lambda_dependent(&r.name) {
                Row::control(suite, Some(d), r.clone())
            } else {
                Row::check(suite, Some(d), r.clone())
            };
            out.rows.push(row);
        }
    }
}

fn relative_slack(r: &InequalityReport) -> f64 {
    r.slack / r.lhs.abs().max(r.rhs.abs()).max(f64::MIN_POSITIVE)
}

/// Bisects `lambda` on the instances of `name` with the smallest relative
/// slack and returns a control row at the first failing `lambda` found.
///
/// `eval(draw, lambda)` re-evaluates one instance; its report gets the
/// tolerance of the original. Skipped in control mode, where the main rows
/// already are the controls.
pub fn control_row(
    suite: SuiteName,
    cfg: &RunConfig,
    name: &str,
    candidates: &[(usize, &InequalityReport)],
    lambda_hi: f64,
    eval: impl Fn(usize, f64) -> eti_core::Result<InequalityReport>,
) -> Option<Row> {
    if cfg.control_mode() {
        return None;
    }
    let lambda = cfg.lambda_value();
    let mut pool: Vec<&(usize, &InequalityReport)> = candidates
        .iter()
        .filter(|(_, r)| r.name == name && r.applicable && r.satisfied && r.slack.is_finite())
        .collect();
    pool.sort_by(|a, b| relative_slack(a.1).total_cmp(&relative_slack(b.1)).then(a.0.cmp(&b.0)));
    pool.truncate(CONTROL_CANDIDATES);
    let mut last_err = None;
    for &&(draw, original) in &pool {
        let tol = original.tolerance;
        let at = |l: f64| eval(draw, l).map(|r| r.with_tolerance(tol));
        match bisect_falsifying_lambda(at, lambda, lambda_hi, BISECTION_RESOLUTION) {
            Ok(Some(f)) => {
                let report = f
                    .report
                    .with_extra("lambda_star", f.lambda)
                    .with_extra("lambda_pass", f.lambda_pass)
                    .with_extra("lambda_configured", lambda);
                return Some(Row::control(suite, Some(draw), report));
            }
            Ok(None) => {}
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    let &&(draw, original) = pool.first()?;
    let note = match last_err {
        Some(e) => format!("no falsifying lambda found: {e}"),
        None => format!("no falsifying lambda up to {lambda_hi:.6e} on {} instances", pool.len()),
    };
    let report = match eval(draw, lambda_hi) {
        Ok(r) => r.with_tolerance(original.tolerance),
        Err(_) => original.clone(),
    };
    Some(Row::control(suite, Some(draw), report.with_note(note)))
}
