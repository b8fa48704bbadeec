//! The suites: seeded random instances for each checker, pinned identities
//! and negative controls.

use std::sync::Arc;
use std::time::Instant;

use eti_core::concentration::{
    a_u, a_u_via_mass, concentration_fn_check, concentration_set_check, find_non_enlargement, tbar_report,
    tbar_upper_bound, tensor_eti_aggregate,
};
use eti_core::inequalities::{
    chebyshev_s_grid, eti_check, eti_m_report, eti_report, hjb_contraction_ii, hjb_contraction_iii, hjb_scaled_kernel,
    infconv_lsi_check, poincare_check, reverse_hc_check_log, talagrand_check, domination_check,
};
use eti_core::measures::{product_measure, relative_entropy};
use eti_core::reference::{build_generator, product_kernel, transition_kernel};
use eti_core::sampling::{FieldRecipe, MeasureRecipe, SetRecipe};
use eti_core::schrodinger::{dual_value, entropic_cost, ipfp, optimal_dual_potential, transport_cost};
use eti_core::semigroup::{q_nested, q_values};
use eti_core::{
    BorelSubset, DiscreteMeasure, EtiParams, Generator, GridSpace, InequalityReport, IpfpOptions, ReferenceKernel,
    ScalarField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{RunConfig, SuiteName, MAX_FACTOR_GRID};
use crate::converge;
use crate::report::{Artifact, Row, SuiteOutcome};
use crate::runner::{control_row, evaluate, named, push_rows, Refine};

/// Points of the Chebyshev `s` grid swept next to the configured `s`.
pub const S_GRID_POINTS: usize = 20;
/// Weak-duality potentials per Kantorovich pair.
pub const DUAL_POTENTIALS: usize = 10;
/// Kantorovich pairs.
pub const DUAL_PAIRS: usize = 10;

const WEAK_DUALITY_TOL: f64 = 1e-9;
const CLOSURE_TOL: f64 = 1e-6;
const NESTING_TOL: f64 = 1e-10;
const ENTROPY_IDENTITY_TOL: f64 = 1e-10;

/// Runs one suite; failures inside it are recorded, never propagated.
pub fn run_suite(cfg: &RunConfig, suite: SuiteName) -> SuiteOutcome {
    let start = Instant::now();
    let mut out = SuiteOutcome::new(suite);
    let result = match suite {
        SuiteName::Eti => eti(cfg, &mut out),
        SuiteName::ReverseHc => reverse_hc(cfg, &mut out),
        SuiteName::HjbDual => hjb_dual(cfg, &mut out),
        SuiteName::Domination => domination(cfg, &mut out),
        SuiteName::ConvergeW2 => converge::converge_suite(cfg, &mut out),
        SuiteName::Tensorize => tensorize(cfg, &mut out),
        SuiteName::Concentration => concentration(cfg, &mut out),
        SuiteName::InfconvLsi => infconv(cfg, &mut out),
        SuiteName::Poincare => poincare(cfg, &mut out),
    };
    if let Err(e) = result {
        out.errors.push(format!("{suite}: {e}"));
    }
    out.seconds = start.elapsed().as_secs_f64();
    out
}

/// Independent stream per suite, so suites can run in any order.
pub fn suite_rng(cfg: &RunConfig, suite: SuiteName) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(suite.stream());
    rng
}

pub fn grid(cfg: &RunConfig, n: usize) -> eti_core::Result<Arc<GridSpace>> {
    let (lo, hi) = cfg.domain_bounds();
    GridSpace::uniform(lo, hi, n)
}

/// Generator at noise `eps`, its kernel at horizon `t` and `m`.
pub struct Setup {
    pub gen: Arc<Generator>,
    pub k: ReferenceKernel,
    pub m: DiscreteMeasure,
}

pub fn setup(cfg: &RunConfig, n: usize, t: f64) -> eti_core::Result<Setup> {
    let g = grid(cfg, n)?;
    let gen = Arc::new(build_generator(&g, &cfg.potential, cfg.epsilon)?);
    let k = transition_kernel(&gen, t)?;
    let m = gen.stationary().clone();
    Ok(Setup { gen, k, m })
}

fn refined(cfg: &RunConfig) -> Option<Refine> {
    Some(Refine {
        grid_n: 2 * cfg.grid_n,
        draws: cfg.refinement_draws,
    })
}

/// Configured `s` plus the Chebyshev grid in `(0, t)`.
fn s_values(p: &EtiParams) -> Vec<f64> {
    let mut s = chebyshev_s_grid(p.t, S_GRID_POINTS);
    s.push(p.s);
    s
}

/// The report with the smallest slack over `s`.
fn worst_over_s(
    p: &EtiParams,
    f: impl Fn(&EtiParams) -> eti_core::Result<InequalityReport>,
) -> eti_core::Result<InequalityReport> {
    let grid = s_values(p);
    let mut worst: Option<InequalityReport> = None;
    for s in &grid {
        let r = f(&p.with_s(*s)?)?;
        if worst.as_ref().is_none_or(|w| r.slack < w.slack) {
            worst = Some(r);
        }
    }
    Ok(worst.expect("nonempty s grid").with_extra("s_points", grid.len() as f64))
}

/// Bracket top for the lambda bisection.
fn lambda_hi(cfg: &RunConfig) -> f64 {
    cfg.lambda_value() * 1e4
}

fn measure_pairs(rng: &mut ChaCha8Rng, m: &DiscreteMeasure, count: usize) -> Vec<(MeasureRecipe, MeasureRecipe)> {
    (0..count)
        .map(|_| (MeasureRecipe::draw(rng, m, 1.5), MeasureRecipe::draw(rng, m, 1.5)))
        .collect()
}

fn fields(rng: &mut ChaCha8Rng, space: &GridSpace, count: usize, amplitude: f64) -> Vec<FieldRecipe> {
    (0..count)
        .map(|_| FieldRecipe::draw(rng, space.dim(), true).normalized(space, amplitude))
        .collect()
}

/// A report for an exact identity: `residual <= 0` up to a pinned tolerance.
fn identity(name: &str, p: EtiParams, residual: f64, tol: f64, grid_n: usize) -> InequalityReport {
    InequalityReport::new(name, p, residual, 0.0, tol, grid_n)
}

struct EtiCache {
    mu: DiscreteMeasure,
    h_mu: f64,
    h_nu: f64,
    cost: f64,
    cost_m: f64,
}

fn eti(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    let p = cfg.params();
    let base = setup(cfg, cfg.grid_n, cfg.t)?;
    let mut rng = suite_rng(cfg, SuiteName::Eti);
    let draws = measure_pairs(&mut rng, &base.m, cfg.draws);
    let n = cfg.grid_n;
    let Some(ev) = evaluate(
        cfg,
        out,
        "eti",
        &draws,
        n,
        refined(cfg),
        |n| setup(cfg, n, cfg.t),
        |s, (a, b)| {
            let mu = a.eval(&s.m)?;
            let nu = b.eval(&s.m)?;
            let h_mu = relative_entropy(&mu, &s.m)?;
            let h_nu = relative_entropy(&nu, &s.m)?;
            let cost = transport_cost(&s.k, &mu, &nu)?;
            let cost_m = transport_cost(&s.k, &mu, &s.m)?;
            let len = s.k.len();
            let reports = vec![
                worst_over_s(&p, |q| Ok(eti_report(cost, h_mu, h_nu, q, cfg.tol, len)))?,
                eti_m_report(cost_m, h_mu, &p, cfg.tol, len),
                talagrand_check(&s.m, &mu, &p, cfg.tol)?,
            ];
            Ok((reports, EtiCache { mu, h_mu, h_nu, cost, cost_m }))
        },
    ) else {
        return Ok(());
    };
    push_rows(out, cfg, &ev.reports, |_| true);
    let cache = |d: usize| ev.caches[d].as_ref().expect("cached draw");
    let hi = lambda_hi(cfg);
    let controls = [
        control_row(out.suite, cfg, "eti_check", &named(&ev.reports, "eti_check"), hi, |d, l| {
            let c = cache(d);
            worst_over_s(&p.with_lambda(l)?, |q| Ok(eti_report(c.cost, c.h_mu, c.h_nu, q, cfg.tol, n)))
        }),
        control_row(out.suite, cfg, "eti_m_check", &named(&ev.reports, "eti_m_check"), hi, |d, l| {
            let c = cache(d);
            Ok(eti_m_report(c.cost_m, c.h_mu, &p.with_lambda(l)?, cfg.tol, n))
        }),
        control_row(out.suite, cfg, "talagrand_check", &named(&ev.reports, "talagrand_check"), hi, |d, l| {
            talagrand_check(&base.m, &cache(d).mu, &p.with_lambda(l)?, cfg.tol)
        }),
    ];
    out.rows.extend(controls.into_iter().flatten());
    Ok(())
}

fn reverse_hc(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    let p = cfg.params();
    let base = setup(cfg, cfg.grid_n, cfg.t)?;
    let mut rng = suite_rng(cfg, SuiteName::ReverseHc);
    let draws = fields(&mut rng, base.m.space(), cfg.draws, 1.5);
    let Some(ev) = evaluate(
        cfg,
        out,
        "reverse-hc",
        &draws,
        cfg.grid_n,
        refined(cfg),
        |n| setup(cfg, n, cfg.t),
        |s, f| {
            let g = f.values(s.m.space());
            let r = worst_over_s(&p, |q| reverse_hc_check_log(&s.k, &s.m, &g, q, cfg.tol))?;
            Ok((vec![r], g))
        },
    ) else {
        return Ok(());
    };
    push_rows(out, cfg, &ev.reports, |_| true);
    let row = control_row(
        out.suite,
        cfg,
        "reverse_hc_check",
        &named(&ev.reports, "reverse_hc_check"),
        lambda_hi(cfg),
        |d, l| {
            let g = ev.caches[d].as_ref().expect("cached draw");
            worst_over_s(&p.with_lambda(l)?, |q| reverse_hc_check_log(&base.k, &base.m, g, q, cfg.tol))
        },
    );
    out.rows.extend(row);
    Ok(())
}

struct HjbSetup {
    base: Setup,
    scaled: ReferenceKernel,
}

fn hjb_dual(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    let p = cfg.params();
    let build = |n: usize| -> eti_core::Result<HjbSetup> {
        let base = setup(cfg, n, cfg.t)?;
        let scaled = hjb_scaled_kernel(&base.gen, &p)?;
        Ok(HjbSetup { base, scaled })
    };
    let hjb = build(cfg.grid_n)?;
    let mut rng = suite_rng(cfg, SuiteName::HjbDual);
    let draws = fields(&mut rng, hjb.base.m.space(), cfg.draws, 2.0);
    let Some(ev) = evaluate(cfg, out, "hjb-dual", &draws, cfg.grid_n, refined(cfg), build, |s, f| {
        let phi = f.eval(s.base.m.space())?;
        let reports = vec![
            hjb_contraction_ii(&s.base.k, &s.base.m, &phi, &p, cfg.tol)?,
            hjb_contraction_iii(&s.scaled, &s.base.m, &phi, &p, cfg.tol)?,
        ];
        Ok((reports, phi))
    }) else {
        return Ok(());
    };
    push_rows(out, cfg, &ev.reports, |_| true);
    let field = |d: usize| ev.caches[d].as_ref().expect("cached draw");
    let ii = control_row(
        out.suite,
        cfg,
        "hjb_contraction_ii",
        &named(&ev.reports, "hjb_contraction_ii"),
        lambda_hi(cfg),
        |d, l| hjb_contraction_ii(&hjb.base.k, &hjb.base.m, field(d), &p.with_lambda(l)?, cfg.tol),
    );
    // Past lambda eps t ~ 13 the rescaled noise eps / C exceeds 1e6 and the
    // rescaled semigroup loses its digits to cancellation.
    let iii_hi = lambda_hi(cfg).min(13.0 / (p.epsilon * p.t)).max(cfg.lambda_value() * 1.5);
    let iii = control_row(
        out.suite,
        cfg,
        "hjb_contraction_iii",
        &named(&ev.reports, "hjb_contraction_iii"),
        iii_hi,
        |d, l| {
            let q = p.with_lambda(l)?;
            let scaled = hjb_scaled_kernel(&hjb.base.gen, &q)?;
            hjb_contraction_iii(&scaled, &hjb.base.m, field(d), &q, cfg.tol)
        },
    );
    out.rows.extend(ii.into_iter().chain(iii));
    kantorovich(cfg, out, &hjb.base, &mut rng)
}

/// Weak duality against random potentials and closure at the IPFP potential.
fn kantorovich(cfg: &RunConfig, out: &mut SuiteOutcome, s: &Setup, rng: &mut ChaCha8Rng) -> eti_core::Result<()> {
    let p = cfg.params();
    let eps = cfg.epsilon;
    let n = s.k.len();
    let pairs = measure_pairs(rng, &s.m, DUAL_PAIRS);
    let potentials: Vec<Vec<FieldRecipe>> =
        (0..DUAL_PAIRS).map(|_| fields(rng, s.m.space(), DUAL_POTENTIALS, 3.0)).collect();
    let results: Vec<eti_core::Result<(Vec<InequalityReport>, serde_json::Value)>> = pairs
        .par_iter()
        .zip(&potentials)
        .map(|((a, b), phis)| {
            let mu = a.eval(&s.m)?;
            let nu = b.eval(&s.m)?;
            let sol = ipfp(&s.k, &mu, &nu, &IpfpOptions::default())?;
            let target = eps * (entropic_cost(&sol)? - relative_entropy(&mu, &s.m)?);
            let mut reps = Vec::with_capacity(phis.len() + 1);
            for f in phis {
                let dual = dual_value(&s.k, &mu, &nu, &f.eval(s.m.space())?, eps)?;
                reps.push(InequalityReport::new("kantorovich_weak_duality", p, dual, target, WEAK_DUALITY_TOL, n));
            }
            let star = optimal_dual_potential(&sol, &s.k, eps)?;
            let gap = target - dual_value(&s.k, &mu, &nu, &star, eps)?;
            reps.push(identity("kantorovich_closure", p, gap.abs(), CLOSURE_TOL, n).with_extra("gap", gap));
            Ok((reps, sol.to_json(cfg.full_output)))
        })
        .collect();
    let mut lines = String::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((reps, sol)) => {
                out.rows.extend(reps.into_iter().map(|r| Row::check(out.suite, Some(i), r)));
                lines.push_str(&json!({ "pair": i, "solution": sol }).to_string());
                lines.push('\n');
            }
            Err(e) => out.errors.push(format!("kantorovich pair {i}: {e}")),
        }
    }
    out.artifacts.push(Artifact {
        file: "couplings.jsonl".into(),
        contents: lines,
    });
    Ok(())
}

fn domination(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    // Stated at t = 1; lambda and s do not enter.
    let p = EtiParams::new(cfg.lambda_value(), cfg.epsilon, 0.5, 1.0)?;
    let base = setup(cfg, cfg.grid_n, 1.0)?;
    let mut rng = suite_rng(cfg, SuiteName::Domination);
    let draws = measure_pairs(&mut rng, &base.m, cfg.draws);
    let Some(ev) = evaluate(
        cfg,
        out,
        "domination",
        &draws,
        cfg.grid_n,
        refined(cfg),
        |n| setup(cfg, n, 1.0),
        |s, (a, b)| {
            let r = domination_check(&s.k, &s.m, &a.eval(&s.m)?, &b.eval(&s.m)?, &p, cfg.tol)?;
            Ok((vec![r], ()))
        },
    ) else {
        return Ok(());
    };
    push_rows(out, cfg, &ev.reports, |_| false);
    Ok(())
}

fn infconv(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    let p = cfg.params();
    let base = setup(cfg, cfg.grid_n, cfg.t)?;
    let mut rng = suite_rng(cfg, SuiteName::InfconvLsi);
    let draws = fields(&mut rng, base.m.space(), cfg.draws, 1.0);
    let Some(ev) = evaluate(
        cfg,
        out,
        "infconv-lsi",
        &draws,
        cfg.grid_n,
        refined(cfg),
        |n| setup(cfg, n, cfg.t),
        |s, f| {
            let field = f.eval(s.m.space())?;
            Ok((vec![infconv_lsi_check(&s.k, &s.m, &field, &p, cfg.tol)?], field))
        },
    ) else {
        return Ok(());
    };
    push_rows(out, cfg, &ev.reports, |_| true);
    let row = control_row(
        out.suite,
        cfg,
        "infconv_lsi_check",
        &named(&ev.reports, "infconv_lsi_check"),
        lambda_hi(cfg),
        |d, l| {
            let f = ev.caches[d].as_ref().expect("cached draw");
            infconv_lsi_check(&base.k, &base.m, f, &p.with_lambda(l)?, cfg.tol)
        },
    );
    out.rows.extend(row);
    Ok(())
}

fn poincare(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    let lambda = cfg.lambda_value();
    let build = |n: usize| -> eti_core::Result<Arc<Generator>> {
        Ok(Arc::new(build_generator(&grid(cfg, n)?, &cfg.potential, cfg.epsilon)?))
    };
    let gen = build(cfg.grid_n)?;
    let mut rng = suite_rng(cfg, SuiteName::Poincare);
    let draws = fields(&mut rng, gen.space(), cfg.draws, 1.0);
    let Some(ev) = evaluate(cfg, out, "poincare", &draws, cfg.grid_n, refined(cfg), build, |gen, f| {
        let g = f.eval(gen.space())?;
        Ok((vec![poincare_check(gen, gen.stationary(), &g, lambda, cfg.tol)?], g))
    }) else {
        return Ok(());
    };
    push_rows(out, cfg, &ev.reports, |_| true);
    let row = control_row(
        out.suite,
        cfg,
        "poincare_check",
        &named(&ev.reports, "poincare_check"),
        lambda_hi(cfg),
        |d, l| {
            let g = ev.caches[d].as_ref().expect("cached draw");
            poincare_check(&gen, gen.stationary(), g, l, cfg.tol)
        },
    );
    out.rows.extend(row);
    Ok(())
}

/// One factor kernel and its stationary measure on the per-factor grid.
struct Factor {
    k: ReferenceKernel,
    m: DiscreteMeasure,
}

fn factor(cfg: &RunConfig, n: usize, t: f64) -> eti_core::Result<Factor> {
    let s = setup(cfg, n, t)?;
    Ok(Factor { k: s.k, m: s.m })
}

/// Instance of the two-factor suite, independent of the factor grid.
struct TensorDraw {
    pair: TensorPair,
    factor_mu: MeasureRecipe,
    product_mu: MeasureRecipe,
    tbar: (MeasureRecipe, MeasureRecipe),
}

enum TensorPair {
    /// Both marginals are products of one-factor measures.
    Product([MeasureRecipe; 4]),
    Correlated(MeasureRecipe, MeasureRecipe),
}

struct TensorSetup {
    factor: Factor,
    k: ReferenceKernel,
    m_prod: DiscreteMeasure,
    /// Factor kernel at `t = 1`, for the coupling bound.
    unit: ReferenceKernel,
    unit_m: DiscreteMeasure,
}

fn tensor_setup(cfg: &RunConfig, nf: usize) -> eti_core::Result<TensorSetup> {
    let factor = self::factor(cfg, nf, cfg.t)?;
    let k = product_kernel(&factor.k, &factor.k)?;
    let m_prod = product_measure(&factor.m, &factor.m);
    let m_prod = DiscreteMeasure::new(k.space().clone(), m_prod.weights().to_vec())?;
    let unit = if cfg.t == 1.0 { factor.k.clone() } else { self::factor(cfg, nf, 1.0)?.k };
    let unit_m = product_kernel(&unit, &unit)?.stationary().clone();
    Ok(TensorSetup {
        factor,
        k,
        m_prod,
        unit,
        unit_m,
    })
}

fn tensor_draws(rng: &mut ChaCha8Rng, f: &Factor, m: &DiscreteMeasure, count: usize) -> Vec<TensorDraw> {
    (0..count)
        .map(|d| TensorDraw {
            pair: if d % 2 == 0 {
                TensorPair::Product(std::array::from_fn(|_| MeasureRecipe::draw(rng, &f.m, 1.0)))
            } else {
                TensorPair::Correlated(MeasureRecipe::tilt(rng, m, 1.0, true), MeasureRecipe::tilt(rng, m, 1.0, true))
            },
            factor_mu: MeasureRecipe::draw(rng, &f.m, 1.5),
            product_mu: MeasureRecipe::draw(rng, m, 1.5),
            tbar: (MeasureRecipe::tilt(rng, m, 1.5, true), MeasureRecipe::tilt(rng, m, 1.5, true)),
        })
        .collect()
}

fn on_product(k: &ReferenceKernel, a: &DiscreteMeasure, b: &DiscreteMeasure) -> eti_core::Result<DiscreteMeasure> {
    DiscreteMeasure::new(k.space().clone(), product_measure(a, b).weights().to_vec())
}

/// `(bound, H(mu|m), H(nu|m))` of the coupling-bound instance.
type TbarCache = (f64, f64, f64);

fn tensor_eval(
    s: &TensorSetup,
    d: &TensorDraw,
    p: &EtiParams,
    pt: &EtiParams,
    tol: f64,
) -> eti_core::Result<(Vec<InequalityReport>, TbarCache)> {
    let m = s.k.stationary();
    let fm = &s.factor.m;
    let (mu, nu, kind) = match &d.pair {
        TensorPair::Product([a, b, c, e]) => (
            on_product(&s.k, &a.eval(fm)?, &b.eval(fm)?)?,
            on_product(&s.k, &c.eval(fm)?, &e.eval(fm)?)?,
            "product",
        ),
        TensorPair::Correlated(a, b) => (a.eval(m)?, b.eval(m)?, "correlated"),
    };
    let eti = eti_check(&s.k, &s.m_prod, &mu, &nu, p, tol)?.with_note(kind);

    // ETI(lambda, eps, t) against m, on one factor and on the product.
    let eti_m = |kk: &ReferenceKernel, mm: &DiscreteMeasure, r: &MeasureRecipe, note: &str| {
        let mu = r.eval(mm)?;
        let h = relative_entropy(&mu, mm)?;
        let cost = transport_cost(kk, &mu, mm)?;
        Ok::<_, eti_core::Error>(eti_m_report(cost, h, p, tol, kk.len()).with_note(note))
    };
    let eti_factor = eti_m(&s.factor.k, fm, &d.factor_mu, "factor")?;
    let eti_product = eti_m(&s.k, m, &d.product_mu, "product")?;

    // Second tensorized form through the coupling upper bound, at t = 1.
    let mu = d.tbar.0.eval(&s.unit_m)?;
    let nu = d.tbar.1.eval(&s.unit_m)?;
    let h_mu = relative_entropy(&mu, &s.unit_m)?;
    let h_nu = relative_entropy(&nu, &s.unit_m)?;
    let bound = tbar_upper_bound(&s.unit, &s.unit, &mu, &nu, 1e-10)?;
    let tbar = tbar_report(bound, h_mu, h_nu, pt, tol, s.k.len())?;
    Ok((vec![eti, eti_factor, eti_product, tbar], (bound, h_mu, h_nu)))
}

fn tensorize(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    let p = cfg.params();
    let pt = EtiParams::new(p.lambda, p.epsilon, p.s / p.t, 1.0)?;
    let nf = cfg.tensor_grid_n;
    let s = tensor_setup(cfg, nf)?;
    let len = s.k.len();
    let mut rng = suite_rng(cfg, SuiteName::Tensorize);
    let draws = tensor_draws(&mut rng, &s.factor, s.k.stationary(), cfg.product_draws);
    // Each product instance is costly at twice the factor grid, so only the
    // single tightest instance per report is refined.
    let fine = (2 * nf <= MAX_FACTOR_GRID).then_some(Refine {
        grid_n: 2 * nf,
        draws: cfg.refinement_draws.min(1),
    });
    let Some(ev) = evaluate(
        cfg,
        out,
        "tensorize",
        &draws,
        nf,
        fine,
        |n| tensor_setup(cfg, n),
        |s, d| tensor_eval(s, d, &p, &pt, cfg.tol),
    ) else {
        return Ok(());
    };
    push_rows(out, cfg, &ev.reports, |_| true);
    let eti_reports: Vec<InequalityReport> = named(&ev.reports, "eti_check").into_iter().map(|(_, r)| r.clone()).collect();
    let agg = tensor_eti_aggregate(&eti_reports, &p, cfg.tol, len);
    out.rows.push(if cfg.control_mode() {
        Row::control(out.suite, None, agg)
    } else {
        Row::check(out.suite, None, agg)
    });

    // Q on the product equals the nested one-factor semigroups.
    let space = s.k.space().clone();
    for d in 0..cfg.product_draws {
        let phi = FieldRecipe::draw(&mut rng, 2, true).normalized(&space, 2.0).values(&space);
        let direct = q_values(&s.k, &phi, p.epsilon)?;
        let nested = q_nested(&s.factor.k, &s.factor.k, &phi, p.epsilon)?;
        let residual = direct.iter().zip(&nested).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.rows.push(Row::check(out.suite, Some(d), identity("semigroup_nesting", p, residual, NESTING_TOL, len)));
    }

    let hi = lambda_hi(cfg);
    let c1 = control_row(out.suite, cfg, "eti_check", &named(&ev.reports, "eti_check"), hi, |d, l| {
        let r = &ev.reports[d][0];
        Ok(eti_report(r.lhs, r.extras["h_mu"], r.extras["h_nu"], &p.with_lambda(l)?, cfg.tol, len))
    });
    let c2 = control_row(out.suite, cfg, "tbar_check", &named(&ev.reports, "tbar_check"), hi, |d, l| {
        let (bound, h_mu, h_nu) = ev.caches[d].expect("cached draw");
        tbar_report(bound, h_mu, h_nu, &pt.with_lambda(l)?, cfg.tol, len)
    });
    out.rows.extend(c1.into_iter().chain(c2));
    Ok(())
}

enum ConcDraw {
    Set { set: SetRecipe, u: f64 },
    Fn { field: FieldRecipe, u: f64, v: f64 },
}

fn conc_draws(rng: &mut ChaCha8Rng, space: &GridSpace, count: usize) -> Vec<ConcDraw> {
    (0..count)
        .map(|i| {
            if i % 2 == 0 {
                let set = if rng.random_bool(0.5) {
                    SetRecipe::sublevel(rng, space)
                } else {
                    SetRecipe::half_line(rng)
                };
                ConcDraw::Set {
                    set,
                    u: rng.random_range(0.0..4.0),
                }
            } else {
                let field = FieldRecipe::draw(rng, space.dim(), true).normalized(space, 3.0);
                let v = rng.random_range(0.0..1.5);
                ConcDraw::Fn {
                    field,
                    u: v + rng.random_range(0.1..3.0),
                    v,
                }
            }
        })
        .collect()
}

/// `phi - min phi`, so the field is nonnegative with minimum zero.
fn nonneg(field: &FieldRecipe, space: &Arc<GridSpace>) -> eti_core::Result<ScalarField> {
    let f = field.eval(space)?;
    let lo = f.min();
    f.map(|v| v - lo)
}

fn conc_eval(s: &ReferenceKernel, d: &ConcDraw, p: &EtiParams, tol: f64) -> eti_core::Result<InequalityReport> {
    let space = s.space();
    let m = s.stationary();
    match d {
        ConcDraw::Set { set, u } => {
            let a = BorelSubset::new(space.clone(), set.eval(space))?;
            concentration_set_check(s, m, &a, *u, p, tol)
        }
        ConcDraw::Fn { field, u, v } => concentration_fn_check(s, m, &nonneg(field, space)?, *u, *v, p, tol),
    }
}

/// Kernel at `t = 1` on `dim` factors of `n` points.
fn unit_kernel(cfg: &RunConfig, n: usize, dim: usize) -> eti_core::Result<ReferenceKernel> {
    let k = setup(cfg, n, 1.0)?.k;
    if dim == 1 {
        Ok(k)
    } else {
        product_kernel(&k, &k)
    }
}

fn concentration(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    let p = EtiParams::new(cfg.lambda_value(), cfg.epsilon, cfg.s / cfg.t, 1.0)?;
    let mut rng = suite_rng(cfg, SuiteName::Concentration);
    for (dim, n) in [(1, cfg.grid_n), (2, cfg.tensor_grid_n)] {
        let k = unit_kernel(cfg, n, dim)?;
        let draws = conc_draws(&mut rng, k.space(), cfg.draws);
        let fine = (dim == 1 || 2 * n <= MAX_FACTOR_GRID).then_some(Refine {
            grid_n: 2 * n,
            draws: cfg.refinement_draws,
        });
        let what = format!("concentration n={dim}");
        let Some(ev) = evaluate(
            cfg,
            out,
            &what,
            &draws,
            n,
            fine,
            |n| unit_kernel(cfg, n, dim),
            |k, d| Ok((vec![conc_eval(k, d, &p, cfg.tol)?], ())),
        ) else {
            continue;
        };
        let first = out.rows.len();
        push_rows(out, cfg, &ev.reports, |_| true);
        for row in &mut out.rows[first..] {
            row.report.extras.insert("factors".into(), dim as f64);
        }
        for name in ["concentration_set_check", "concentration_fn_check"] {
            let row = control_row(out.suite, cfg, name, &named(&ev.reports, name), lambda_hi(cfg), |d, l| {
                conc_eval(&k, &draws[d], &p.with_lambda(l)?, cfg.tol)
            });
            out.rows.extend(row);
        }
        set_identities(out, &k, &draws, &p)?;
    }
    let k1 = unit_kernel(cfg, cfg.grid_n, 1)?;
    non_enlargement(out, &k1, &p)
}

/// Both descriptions of `A_u` agree, and the entropy of `m` conditioned on
/// `B` is `-log m(B)`.
fn set_identities(out: &mut SuiteOutcome, k: &ReferenceKernel, draws: &[ConcDraw], p: &EtiParams) -> eti_core::Result<()> {
    let space = k.space();
    let m = k.stationary();
    for (d, draw) in draws.iter().enumerate() {
        let ConcDraw::Set { set, u } = draw else { continue };
        let a = BorelSubset::new(space.clone(), set.eval(space))?;
        if a.is_empty() {
            continue;
        }
        let by_cost = a_u(k, &a, *u)?;
        let by_mass = a_u_via_mass(k, &a, *u)?;
        let mismatches = by_cost
            .members()
            .iter()
            .zip(by_mass.members())
            .filter(|(x, y)| x != y)
            .count();
        let agree = identity("a_u_agreement", *p, mismatches as f64, 0.0, k.len()).with_extra("u", *u);
        let conditioned = m.restrict(a.members())?;
        let h = relative_entropy(&conditioned, m)?;
        let log_mass = m.log_mass_of(a.members());
        let marton = identity("conditioned_entropy", *p, (h + log_mass).abs(), ENTROPY_IDENTITY_TOL, k.len())
            .with_extra("log_mass", log_mass);
        out.rows.push(Row::check(out.suite, Some(d), agree));
        out.rows.push(Row::check(out.suite, Some(d), marton));
    }
    Ok(())
}

/// Records an interval `A` with a point outside `A_u`.
fn non_enlargement(out: &mut SuiteOutcome, k: &ReferenceKernel, p: &EtiParams) -> eti_core::Result<()> {
    let us = [0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0];
    let found = find_non_enlargement(k, &us)?;
    let report = match &found {
        Some(ne) => {
            out.artifacts.push(Artifact {
                file: "non_enlargement.json".into(),
                contents: serde_json::to_string_pretty(&json!({
                    "grid_n": k.len(),
                    "u": ne.u,
                    "witness": ne.witness,
                    "witness_x": k.space().point(ne.witness)[0],
                    "set": ne.set.to_json(),
                }))
                .map_err(eti_core::Error::from)?
                    + "\n",
            });
            identity("a_u_non_enlargement", *p, 0.0, 0.0, k.len())
                .with_extra("u", ne.u)
                .with_extra("witness", ne.witness as f64)
                .with_extra("set_size", ne.set.count() as f64)
                .with_note("A is not contained in A_u")
        }
        None => identity("a_u_non_enlargement", *p, 1.0, 0.0, k.len()).with_note("no instance found"),
    };
    out.rows.push(Row::check(out.suite, None, report));
    Ok(())
}
