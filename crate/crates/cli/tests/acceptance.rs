//! Acceptance criteria 1 to 11, one line each.
//!
//! Runs everything in one test so the timed criteria do not compete for
//! cores with each other.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use eti_cli::config::{RunConfig, SuiteName};
use eti_cli::report::{Role, Row, Status, SuiteOutcome};
use eti_cli::run_suites;
use eti_core::concentration::{a_u, BorelSubset};
use eti_core::measures::relative_entropy;
use eti_core::oracle::brute_force_cost;
use eti_core::reference::{build_generator, transition_kernel, PotentialSpec};
use eti_core::sampling::random_measure;
use eti_core::schrodinger::{entropic_cost, forward_cost, ipfp, transport_cost, IpfpOptions};
use eti_core::{DiscreteMeasure, GridSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    id: usize,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn timed(id: usize, f: impl FnOnce() -> (bool, String)) -> Line {
    let start = Instant::now();
    let (pass, detail) = f();
    Line {
        id,
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn rows<'a>(outcomes: &'a [SuiteOutcome], suite: SuiteName) -> impl Iterator<Item = &'a Row> {
    outcomes.iter().filter(move |o| o.suite == suite).flat_map(|o| &o.rows)
}

fn errors(outcomes: &[SuiteOutcome], suite: SuiteName) -> usize {
    outcomes.iter().filter(|o| o.suite == suite).map(|o| o.errors.len()).sum()
}

fn checks<'a>(outcomes: &'a [SuiteOutcome], suite: SuiteName, name: &'a str) -> Vec<&'a Row> {
    rows(outcomes, suite)
        .filter(|r| r.role == Role::Check && r.report.name == name)
        .collect()
}

fn min_slack(rows: &[&Row]) -> f64 {
    rows.iter().map(|r| r.report.slack).fold(f64::INFINITY, f64::min)
}

/// Pairs on the grid-64 Gaussian reference, shared by criteria 1 and 2.
fn gaussian_pairs() -> (eti_core::ReferenceKernel, DiscreteMeasure, Vec<(DiscreteMeasure, DiscreteMeasure)>) {
    let pot = PotentialSpec::Quadratic { lambda: 1.0 };
    let (lo, hi) = pot.default_domain().unwrap();
    let g = GridSpace::uniform(lo, hi, 64).unwrap();
    let gen = build_generator(&g, &pot, 1.0).unwrap();
    let k = transition_kernel(&gen, 1.0).unwrap();
    let m = k.stationary().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let pairs = (0..20)
        .map(|_| (random_measure(&mut rng, &m, 1.5).unwrap(), random_measure(&mut rng, &m, 1.5).unwrap()))
        .collect();
    (k, m, pairs)
}

fn criterion_1() -> Line {
    timed(1, || {
        let (k, m, pairs) = gaussian_pairs();
        let worst = pairs
            .iter()
            .map(|(mu, nu)| {
                let sol = ipfp(&k, mu, nu, &IpfpOptions::default()).unwrap();
                let t = entropic_cost(&sol).unwrap();
                (t - relative_entropy(mu, &m).unwrap() - forward_cost(&sol, mu, &k).unwrap()).abs()
            })
            .fold(0.0, f64::max);
        (worst <= 1e-8, format!("max |T - H - T(.|.)| = {worst:.2e} on 20 pairs, grid 64"))
    })
}

fn criterion_2() -> Line {
    timed(2, || {
        let (k, _, pairs) = gaussian_pairs();
        let worst = pairs
            .iter()
            .map(|(mu, nu)| (transport_cost(&k, mu, nu).unwrap() - transport_cost(&k, nu, mu).unwrap()).abs())
            .fold(0.0, f64::max);
        (worst <= 1e-8, format!("max |T(mu,nu) - T(nu,mu)| = {worst:.2e} on 20 pairs"))
    })
}

fn criterion_3() -> Line {
    timed(3, || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for (n, reps) in [(2, 10), (3, 5)] {
            for _ in 0..reps {
                let g = GridSpace::uniform(-1.0, 1.0, n).unwrap();
                let pot = PotentialSpec::Quadratic {
                    lambda: rng.random_range(0.5..2.0),
                };
                let gen = build_generator(&g, &pot, rng.random_range(0.3..1.5)).unwrap();
                let k = transition_kernel(&gen, rng.random_range(0.2..1.0)).unwrap();
                let mut draw = || {
                    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
                    DiscreteMeasure::from_masses(g.clone(), &w).unwrap()
                };
                let (mu, nu) = (draw(), draw());
                let opts = IpfpOptions {
                    tol: 1e-14,
                    ..IpfpOptions::default()
                };
                let primal = ipfp(&k, &mu, &nu, &opts).unwrap().primal_cost;
                let oracle = brute_force_cost(&k, &mu, &nu).unwrap();
                worst = worst.max((primal - oracle).abs());
                count += 1;
            }
        }
        (worst <= 1e-7, format!("max |IPFP - oracle| = {worst:.2e} on {count} instances (2 and 3 points)"))
    })
}

const CRITERION_4_NAMES: [(SuiteName, &str); 7] = [
    (SuiteName::Eti, "eti_check"),
    (SuiteName::Eti, "eti_m_check"),
    (SuiteName::ReverseHc, "reverse_hc_check"),
    (SuiteName::HjbDual, "hjb_contraction_ii"),
    (SuiteName::HjbDual, "hjb_contraction_iii"),
    (SuiteName::InfconvLsi, "infconv_lsi_check"),
    (SuiteName::Poincare, "poincare_check"),
];

fn slack_table(outcomes: &[SuiteOutcome]) -> (bool, f64, String, Vec<String>) {
    let mut pass = true;
    let mut worst = (f64::INFINITY, String::new());
    let mut short = Vec::new();
    for (suite, name) in CRITERION_4_NAMES {
        let rs = checks(outcomes, suite, name);
        let applicable: Vec<&Row> = rs.iter().copied().filter(|r| r.report.applicable).collect();
        let below = applicable.iter().filter(|r| !(r.report.slack >= -1e-6)).count();
        let unsatisfied = applicable.iter().filter(|r| r.status() == Status::Fail).count();
        if applicable.len() < 100 {
            short.push(format!("{name}: {} draws", applicable.len()));
        }
        pass &= below == 0 && unsatisfied == 0 && applicable.len() >= 100 && errors(outcomes, suite) == 0;
        let m = min_slack(&applicable);
        if m < worst.0 {
            worst = (m, name.to_string());
        }
    }
    (pass, worst.0, worst.1, short)
}

fn criterion_4(default_run: &[SuiteOutcome]) -> Line {
    let mut line = timed(4, || {
        let cfg = RunConfig::from_json_str(
            r#"{"grid_n": 256, "refinement_draws": 0,
                "suites": ["eti", "reverse-hc", "hjb-dual", "infconv-lsi", "poincare"]}"#,
        )
        .unwrap()
        .resolve()
        .unwrap();
        assert_eq!(cfg.lambda_value(), 2.0);
        let outcomes = run_suites(&cfg, None).unwrap();
        let (pass, worst, at, short) = slack_table(&outcomes);
        let (_, coarse, coarse_at, _) = slack_table(default_run);
        let mut detail = format!(
            "lambda = 2 lambda_U, 100 draws each, grid 256: min slack {worst:.3e} ({at}); \
             at grid 128 min slack {coarse:.3e} ({coarse_at})"
        );
        if !short.is_empty() {
            detail.push_str(&format!("; too few draws: {}", short.join(", ")));
        }
        (pass, detail)
    });
    line.pass &= line.seconds < 120.0;
    line
}

fn criterion_5(default_run: &[SuiteOutcome], control_run: &[SuiteOutcome]) -> Line {
    timed(5, || {
        let controls: Vec<&Row> = default_run
            .iter()
            .flat_map(|o| &o.rows)
            .filter(|r| r.role == Role::Control && r.report.name == "eti_check:control")
            .collect();
        let mut pass = !controls.is_empty();
        let mut parts = Vec::new();
        for r in &controls {
            let e = &r.report.extras;
            let (star, ok) = (e.get("lambda_star"), e.get("lambda_pass"));
            let bracketed = match (star, ok) {
                (Some(s), Some(p)) => *p < *s && s / p <= 1.0 + 1.1e-3,
                _ => false,
            };
            pass &= r.status() == Status::Expected && !r.report.satisfied && bracketed;
            parts.push(format!(
                "{} lambda* = {:.4} ({})",
                r.suite,
                star.copied().unwrap_or(f64::NAN),
                r.status().as_str()
            ));
        }
        // At 100 times the reference constant every lambda-dependent row is
        // a control; the run must still exit cleanly and some must fail.
        let expected: usize = control_run.iter().map(|o| o.count(Status::Expected)).sum();
        let fails: usize = control_run.iter().map(|o| o.failures()).sum();
        pass &= expected > 0 && fails == 0;
        parts.push(format!("lambda = 200: {expected} EXPECTED, {fails} failures"));
        (pass, parts.join("; "))
    })
}

fn criterion_6(default_run: &[SuiteOutcome]) -> Line {
    timed(6, || {
        let rs = checks(default_run, SuiteName::Domination, "domination_check");
        let m = min_slack(&rs);
        let pass = rs.len() >= 50 && m >= -1e-8 && errors(default_run, SuiteName::Domination) == 0;
        (pass, format!("{} draws, min slack {m:.3e}", rs.len()))
    })
}

fn converge_counts(outcomes: &[SuiteOutcome]) -> (bool, String) {
    let rs: Vec<&Row> = rows(outcomes, SuiteName::ConvergeW2).collect();
    let mono: Vec<&&Row> = rs.iter().filter(|r| r.report.name.ends_with("_monotone")).collect();
    let refine: Vec<&&Row> = rs.iter().filter(|r| r.report.name.ends_with("_refinement")).collect();
    let mono_ok = mono.iter().filter(|r| r.status() == Status::Pass).count();
    let assessed: Vec<&&&Row> = refine.iter().filter(|r| r.report.applicable).collect();
    let refine_ok = assessed.iter().filter(|r| r.status() == Status::Pass).count();
    let failed: Vec<String> = assessed
        .iter()
        .filter(|r| r.status() != Status::Pass)
        .map(|r| format!("{} draw {}", r.report.name, r.draw.unwrap_or(0)))
        .collect();
    let pass = !mono.is_empty() && mono_ok == mono.len() && refine_ok == assessed.len() && errors(outcomes, SuiteName::ConvergeW2) == 0;
    let mut s = format!(
        "strict decrease {mono_ok}/{}, floor refinement {refine_ok}/{} where the floor is reached ({} not reached)",
        mono.len(),
        assessed.len(),
        refine.len() - assessed.len()
    );
    if !failed.is_empty() {
        s.push_str(&format!(", failing: {}", failed.join(", ")));
    }
    (pass, s)
}

fn criterion_7(default_run: &[SuiteOutcome]) -> Line {
    timed(7, || {
        let (pass, at_default) = converge_counts(default_run);
        let mut detail = format!("grid 128/256: {at_default}");
        // Coarser pairs reach the floor more often; reported, not judged.
        for n in [32, 64] {
            let mut cfg = RunConfig {
                grid_n: n,
                suites: vec![SuiteName::ConvergeW2],
                ..RunConfig::default()
            };
            cfg = cfg.resolve().unwrap();
            let (_, s) = converge_counts(&run_suites(&cfg, None).unwrap());
            detail.push_str(&format!(" | grid {n}/{}: {s}", 2 * n));
        }
        (pass, detail)
    })
}

fn criterion_8(default_run: &[SuiteOutcome]) -> Line {
    timed(8, || {
        let t = SuiteName::Tensorize;
        let suite = checks(default_run, t, "tensor_eti_suite");
        let eti = checks(default_run, t, "eti_check");
        let tbar = checks(default_run, t, "tbar_check");
        let nest = checks(default_run, t, "semigroup_nesting");
        let nest_max = nest.iter().map(|r| r.report.lhs).fold(0.0, f64::max);
        let all_pass = |rs: &[&Row]| !rs.is_empty() && rs.iter().all(|r| r.status() == Status::Pass);
        let pass = all_pass(&suite) && all_pass(&eti) && all_pass(&tbar) && all_pass(&nest) && nest_max <= 1e-10 && errors(default_run, t) == 0;
        (
            pass,
            format!(
                "product ETI {}/{} (min slack {:.3e}), T-bar bound {}/{} (min slack {:.3e}), nesting max {nest_max:.2e}",
                eti.iter().filter(|r| r.status() == Status::Pass).count(),
                eti.len(),
                min_slack(&eti),
                tbar.iter().filter(|r| r.status() == Status::Pass).count(),
                tbar.len(),
                min_slack(&tbar)
            ),
        )
    })
}

fn criterion_9(default_run: &[SuiteOutcome], non_enlargement: Option<&str>) -> Line {
    timed(9, || {
        let c = SuiteName::Concentration;
        let mut pass = errors(default_run, c) == 0;
        let mut parts = Vec::new();
        for name in ["concentration_set_check", "concentration_fn_check"] {
            for dim in [1.0, 2.0] {
                let rs: Vec<&Row> = checks(default_run, c, name)
                    .into_iter()
                    .filter(|r| r.report.extras.get("factors") == Some(&dim))
                    .collect();
                let ok = rs.iter().filter(|r| r.status() == Status::Pass).count();
                pass &= rs.len() >= 50 && ok == rs.len();
                parts.push(format!("{name} n={dim}: {ok}/{}", rs.len()));
            }
        }
        let agree = checks(default_run, c, "a_u_agreement");
        let mismatches: f64 = agree.iter().map(|r| r.report.lhs).sum();
        pass &= !agree.is_empty() && mismatches == 0.0;
        parts.push(format!("A_u mismatches {mismatches} over {} sets", agree.len()));
        // Recheck the recorded witness independently.
        let witnessed = non_enlargement.is_some_and(|json| {
            let v: serde_json::Value = serde_json::from_str(json).unwrap();
            let n = v["grid_n"].as_u64().unwrap() as usize;
            let members: Vec<bool> = v["set"].as_array().unwrap().iter().map(|b| b.as_bool().unwrap()).collect();
            let cfg = RunConfig::default().resolve().unwrap();
            let (lo, hi) = cfg.domain_bounds();
            let g = GridSpace::uniform(lo, hi, n).unwrap();
            let gen = build_generator(&g, &cfg.potential, 1.0).unwrap();
            let k = transition_kernel(&gen, 1.0).unwrap();
            let a = BorelSubset::new(g, members).unwrap();
            let au = a_u(&k, &a, v["u"].as_f64().unwrap()).unwrap();
            let w = v["witness"].as_u64().unwrap() as usize;
            a.members()[w] && !au.members()[w]
        });
        pass &= witnessed;
        parts.push(format!("recorded A not in A_u: {witnessed}"));
        (pass, parts.join(", "))
    })
}

fn criterion_10() -> Line {
    timed(10, || {
        let pot = PotentialSpec::Quadratic { lambda: 1.0 };
        let (lo, hi) = pot.default_domain().unwrap();
        let g = GridSpace::uniform(lo, hi, 128).unwrap();
        let gen = build_generator(&g, &pot, 0.5).unwrap();
        let unit = gen.with_epsilon(1.0).unwrap();
        let mut scaling: f64 = 0.0;
        for t in [0.3, 1.0, 2.5] {
            let a = transition_kernel(&gen, t).unwrap().linear();
            let b = transition_kernel(&unit, 0.5 * t).unwrap().linear();
            scaling = scaling.max(a.max_abs_diff(&b));
        }
        let (s, t) = (0.4, 0.9);
        let ks = transition_kernel(&gen, s).unwrap().linear();
        let kt = transition_kernel(&gen, t).unwrap().linear();
        let kst = transition_kernel(&gen, s + t).unwrap().linear();
        let semigroup = ks.matmul(&kt).max_abs_diff(&kst);

        let ladder = [0.25, 0.5, 1.0, 2.0, 4.0];
        let kernels: Vec<_> = ladder.iter().map(|t| transition_kernel(&gen, *t).unwrap()).collect();
        let m = gen.stationary().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1010);
        let mut slack = f64::INFINITY;
        for _ in 0..10 {
            let mu = random_measure(&mut rng, &m, 1.5).unwrap();
            let nu = random_measure(&mut rng, &m, 1.5).unwrap();
            let scaled: Vec<f64> = kernels
                .iter()
                .zip(ladder)
                .map(|(k, t)| t * transport_cost(k, &mu, &nu).unwrap())
                .collect();
            for w in scaled.windows(2) {
                slack = slack.min(w[1] - w[0]);
            }
        }
        let pass = scaling <= 1e-10 && semigroup <= 1e-10 && slack >= -1e-8;
        (
            pass,
            format!("time change {scaling:.2e}, semigroup {semigroup:.2e}, t T increments min {slack:.3e} over t in {ladder:?}"),
        )
    })
}

fn criterion_11(default_run: &[SuiteOutcome]) -> Line {
    timed(11, || {
        let h = SuiteName::HjbDual;
        let weak = checks(default_run, h, "kantorovich_weak_duality");
        let closure = checks(default_run, h, "kantorovich_closure");
        let gap = closure.iter().map(|r| r.report.lhs).fold(0.0, f64::max);
        let pass = weak.len() >= 100
            && weak.iter().all(|r| r.status() == Status::Pass)
            && !closure.is_empty()
            && gap <= 1e-6
            && errors(default_run, h) == 0;
        (
            pass,
            format!(
                "weak duality {}/{} (min slack {:.3e}), closure max gap {gap:.2e} over {} pairs",
                weak.iter().filter(|r| r.status() == Status::Pass).count(),
                weak.len(),
                min_slack(&weak),
                closure.len()
            ),
        )
    })
}

#[test]
fn acceptance() {
    let mut lines = vec![criterion_1(), criterion_2(), criterion_3()];

    let default_cfg = RunConfig::default().resolve().unwrap();
    let start = Instant::now();
    let default_run = run_suites(&default_cfg, None).unwrap();
    let default_seconds = start.elapsed().as_secs_f64();
    let non_enlargement = default_run
        .iter()
        .flat_map(|o| &o.artifacts)
        .find(|a| a.file == "non_enlargement.json")
        .map(|a| a.contents.clone());

    let mut control_cfg = RunConfig::default();
    control_cfg.lambda = Some(200.0);
    control_cfg.suites = vec![SuiteName::Eti, SuiteName::ReverseHc, SuiteName::Poincare];
    let control_run = run_suites(&control_cfg.resolve().unwrap(), None).unwrap();

    lines.push(criterion_4(&default_run));
    lines.push(criterion_5(&default_run, &control_run));
    lines.push(criterion_6(&default_run));
    lines.push(criterion_7(&default_run));
    lines.push(criterion_8(&default_run));
    lines.push(criterion_9(&default_run, non_enlargement.as_deref()));
    lines.push(criterion_10());
    lines.push(criterion_11(&default_run));
    lines.sort_by_key(|l| l.id);

    // Criterion 1 has its own budget.
    if let Some(l) = lines.iter_mut().find(|l| l.id == 1) {
        l.pass &= l.seconds < 10.0;
    }

    let per_suite: BTreeMap<&str, f64> = default_run.iter().map(|o| (o.suite.as_str(), o.seconds)).collect();
    let mut report = format!("default run: {default_seconds:.1} s, per suite {per_suite:?}\n");
    for l in &lines {
        report.push_str(&format!(
            "criterion {:>2}: {} ({:.1} s) {}\n",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.seconds,
            l.detail
        ));
    }
    // Written past the test harness capture so the lines show in plain
    // `cargo test` output.
    let _ = std::io::stderr().write_all(report.as_bytes());
    let failed: Vec<usize> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
