//! Checkers for the entropic Talagrand inequalities and their dual,
//! contraction, Poincaré and log-Sobolev type consequences.
//!
//! Every checker returns an [`InequalityReport`] with the convention
//! `lhs <= rhs` and `slack = rhs - lhs`.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp_iter;
use crate::measures::{check_same_space, ent_of_exp, log_p_norm, relative_entropy, DiscreteMeasure, ScalarField};
use crate::reference::{transition_kernel, Generator, PotentialSpec, ReferenceKernel};
use crate::schrodinger::{entropic_cost, ipfp, json_number, IpfpOptions};
use crate::semigroup::{log_apply_p, q_values};
use crate::transport::w2;

/// Coefficients above this are flagged as near-singular.
const NEAR_SINGULAR: f64 = 1e6;

/// Constants `(lambda, eps, s, t)` of an entropic Talagrand inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct EtiParams {
    pub lambda: f64,
    pub epsilon: f64,
    pub s: f64,
    pub t: f64,
}

impl EtiParams {
    pub fn new(lambda: f64, epsilon: f64, s: f64, t: f64) -> Result<Self> {
        let p = Self { lambda, epsilon, s, t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.lambda) || !pos(self.epsilon) || !pos(self.t) {
            return Err(Error::Parameter(format!(
                "lambda, epsilon and t must be positive: {self:?}"
            )));
        }
        if !(self.s >= 0.0 && self.s < self.t) {
            return Err(Error::Parameter(format!("s must lie in [0, t): {self:?}")));
        }
        Ok(())
    }

    pub fn with_s(self, s: f64) -> Result<Self> {
        Self::new(self.lambda, self.epsilon, s, self.t)
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.epsilon, self.s, self.t)
    }

    /// `lambda * eps`.
    pub fn rate(&self) -> f64 {
        self.lambda * self.epsilon
    }
}

/// Outcome of one inequality evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub name: String,
    pub params: EtiParams,
    pub extras: BTreeMap<String, f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub satisfied: bool,
    pub tolerance: f64,
    pub grid_n: usize,
    pub applicable: bool,
    pub note: Option<String>,
}

impl InequalityReport {
    pub fn new(name: &str, params: EtiParams, lhs: f64, rhs: f64, tolerance: f64, grid_n: usize) -> Self {
        let slack = if rhs == f64::INFINITY || lhs == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            rhs - lhs
        };
        Self {
            name: name.to_string(),
            params,
            extras: BTreeMap::new(),
            lhs,
            rhs,
            slack,
            satisfied: slack >= -tolerance,
            tolerance,
            grid_n,
            applicable: true,
            note: None,
        }
    }

    /// A report for parameters outside the range where the inequality is stated.
    pub fn not_applicable(name: &str, params: EtiParams, tolerance: f64, grid_n: usize, why: String) -> Self {
        let mut r = Self::new(name, params, f64::NAN, f64::NAN, tolerance, grid_n);
        r.slack = f64::NAN;
        r.satisfied = true;
        r.applicable = false;
        r.note = Some(why);
        r
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extras.insert(key.to_string(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Recomputes `satisfied` under a new tolerance.
    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        if self.applicable {
            self.satisfied = self.slack >= -tolerance;
        }
        self
    }

    /// JSON object; infinities and NaN become strings.
    pub fn to_json(&self) -> Value {
        let extras: serde_json::Map<String, Value> =
            self.extras.iter().map(|(k, v)| (k.clone(), json_number(*v))).collect();
        serde_json::json!({
            "name": self.name,
            "lambda": json_number(self.params.lambda),
            "epsilon": json_number(self.params.epsilon),
            "s": json_number(self.params.s),
            "t": json_number(self.params.t),
            "extras": extras,
            "lhs": json_number(self.lhs),
            "rhs": json_number(self.rhs),
            "slack": json_number(self.slack),
            "satisfied": self.satisfied,
            "tolerance": json_number(self.tolerance),
            "grid_n": self.grid_n,
            "applicable": self.applicable,
            "note": self.note,
        })
    }
}

/// `theta(x) = 1 / (1 - e^{-x})` for `x > 0`.
pub fn theta(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("theta needs a positive argument, got {x}")));
    }
    Ok(-1.0 / (-x).exp_m1())
}

/// `theta(x) - 1 = 1 / (e^x - 1)`, accurate for small and large `x`.
pub fn theta_minus_one(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("theta needs a positive argument, got {x}")));
    }
    Ok(1.0 / x.exp_m1())
}

/// `theta` extended by `+inf` at zero.
fn theta_ext(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else {
        -1.0 / (-x).exp_m1()
    }
}

/// `a * h` with the convention `inf * 0 = 0`.
fn weighted(a: f64, h: f64) -> f64 {
    if h == 0.0 {
        0.0
    } else {
        a * h
    }
}

/// The `lambda` for which the Gaussian target `exp(-2U)` of a quadratic
/// potential satisfies the log-Sobolev inequality: `2 lambda_U`.
pub fn lsi_reference_constant(potential: &PotentialSpec) -> Result<f64> {
    potential
        .quadratic_lambda()
        .map(|l| 2.0 * l)
        .ok_or_else(|| Error::NotApplicable("reference constant is only known for quadratic potentials".into()))
}

fn check_kernel(k: &ReferenceKernel, epsilon: f64, t: f64) -> Result<()> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    if !close(k.epsilon(), epsilon) || !close(k.t(), t) {
        return Err(Error::Parameter(format!(
            "kernel has (eps, t) = ({}, {}) but the check uses ({epsilon}, {t})",
            k.epsilon(),
            k.t()
        )));
    }
    Ok(())
}

/// Solves the Schrödinger problem and returns `T(mu, nu)`.
fn solved_cost(k: &ReferenceKernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(f64, usize)> {
    let sol = ipfp(k, mu, nu, &IpfpOptions::default())?;
    Ok((entropic_cost(&sol)?, sol.iterations))
}

/// `T(mu, nu) <= theta(lambda eps s) H(mu|m) + theta(lambda eps (t - s)) H(nu|m)`.
pub fn eti_check(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    check_kernel(k, p.epsilon, p.t)?;
    let h_mu = relative_entropy(mu, m)?;
    let h_nu = relative_entropy(nu, m)?;
    if !h_mu.is_finite() || !h_nu.is_finite() {
        return Ok(eti_report(f64::INFINITY, h_mu, h_nu, p, tol, k.len())
            .with_note("vacuous: infinite relative entropy"));
    }
    let (cost, iters) = solved_cost(k, mu, nu)?;
    Ok(eti_report(cost, h_mu, h_nu, p, tol, k.len()).with_extra("ipfp_iterations", iters as f64))
}

/// Builds the `eti` report from precomputed cost and entropies.
pub fn eti_report(cost: f64, h_mu: f64, h_nu: f64, p: &EtiParams, tol: f64, grid_n: usize) -> InequalityReport {
    let th_s = theta_ext(p.rate() * p.s);
    let th_ts = theta_ext(p.rate() * (p.t - p.s));
    let rhs = weighted(th_s, h_mu) + weighted(th_ts, h_nu);
    InequalityReport::new("eti_check", *p, cost, rhs, tol, grid_n)
        .with_extra("h_mu", h_mu)
        .with_extra("h_nu", h_nu)
        .with_extra("theta_s", th_s)
        .with_extra("theta_t_minus_s", th_ts)
}

/// `T(mu, m) <= theta(lambda eps t) H(mu|m)`.
pub fn eti_m_check(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    check_kernel(k, p.epsilon, p.t)?;
    let h_mu = relative_entropy(mu, m)?;
    if !h_mu.is_finite() {
        return Ok(eti_m_report(f64::INFINITY, h_mu, p, tol, k.len()).with_note("vacuous: infinite relative entropy"));
    }
    let (cost, iters) = solved_cost(k, mu, m)?;
    Ok(eti_m_report(cost, h_mu, p, tol, k.len()).with_extra("ipfp_iterations", iters as f64))
}

pub fn eti_m_report(cost: f64, h_mu: f64, p: &EtiParams, tol: f64, grid_n: usize) -> InequalityReport {
    let th = theta_ext(p.rate() * p.t);
    InequalityReport::new("eti_m_check", *p, cost, weighted(th, h_mu), tol, grid_n)
        .with_extra("h_mu", h_mu)
        .with_extra("theta_t", th)
}

/// Exponents `(p, q)` paired with `s` in the reverse hypercontractive bound.
pub fn reverse_hc_exponents(p: &EtiParams) -> Result<(f64, f64)> {
    if !(p.s > 0.0 && p.s < p.t) {
        return Err(Error::Parameter(format!("s must lie in (0, t), got s = {}", p.s)));
    }
    let q = -(p.rate() * p.s).exp_m1();
    let p_exp = -(-p.rate() * (p.t - p.s)).exp_m1();
    Ok((p_exp, q))
}

/// `||P_t f||_q >= ||f||_p` with `q = 1 - e^{lambda eps s}` and
/// `p = 1 - e^{-lambda eps (t - s)}`.
pub fn reverse_hc_check(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    f: &ScalarField,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    check_kernel(k, p.epsilon, p.t)?;
    check_same_space(k.space(), f.space(), "reverse_hc_check")?;
    if let Some(v) = f.values().iter().find(|v| **v <= 0.0) {
        return Err(Error::Domain(format!("reverse hypercontractivity needs f > 0, found {v}")));
    }
    let log_f: Vec<f64> = f.values().iter().map(|v| v.ln()).collect();
    reverse_hc_check_log(k, m, &log_f, p, tol)
}

/// [`reverse_hc_check`] for `f = exp(g)` given `g`.
pub fn reverse_hc_check_log(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    g: &[f64],
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    check_kernel(k, p.epsilon, p.t)?;
    let (p_exp, q) = reverse_hc_exponents(p)?;
    // (1 - q) / (1 - p) = e^{lambda eps t}, checked in logs; skipped once
    // 1 - p is lost to rounding.
    let log_ratio = (-q).ln_1p() - (-p_exp).ln_1p();
    let target = p.rate() * p.t;
    if 1.0 - p_exp > 1e-4 && (log_ratio - target).abs() > 1e-10 * target.max(1.0) {
        let (ratio, target) = (log_ratio.exp(), target.exp());
        return Err(Error::Numerical(format!("exponent relation off: {ratio} vs {target}")));
    }
    let log_pf = log_apply_p(k, g);
    let lhs = log_p_norm(g, p_exp, m)?.exp();
    let rhs = log_p_norm(&log_pf, q, m)?.exp();
    Ok(InequalityReport::new("reverse_hc_check", *p, lhs, rhs, tol, k.len())
        .with_extra("p", p_exp)
        .with_extra("q", q))
}

/// `log int exp(-phi / (eps theta)) dm <= -(1 / (eps theta)) int Q_t phi dm`,
/// with `theta = theta(lambda eps t)`.
pub fn hjb_contraction_ii(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    phi: &ScalarField,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    check_kernel(k, p.epsilon, p.t)?;
    check_same_space(k.space(), phi.space(), "hjb_contraction_ii")?;
    let th = theta(p.rate() * p.t)?;
    let scale = 1.0 / (p.epsilon * th);
    let lhs = log_sum_exp_iter(
        phi.values().iter().zip(m.log_weights()).map(|(v, lw)| lw - scale * v),
    );
    let q = q_values(k, phi.values(), p.epsilon)?;
    let rhs = -scale * m.expect(&q);
    Ok(InequalityReport::new("hjb_contraction_ii", *p, lhs, rhs, tol, k.len()).with_extra("theta_t", th))
}

/// `C = eps (theta(lambda eps t) - 1)`.
pub fn hjb_scale(p: &EtiParams) -> Result<f64> {
    Ok(p.epsilon * theta_minus_one(p.rate() * p.t)?)
}

/// Kernel with noise `eps / C` at horizon `C t`, built from the generator of
/// `k` through the reference module.
pub fn hjb_scaled_kernel(gen: &Generator, p: &EtiParams) -> Result<ReferenceKernel> {
    let c = hjb_scale(p)?;
    let scaled = gen.with_epsilon(p.epsilon / c)?;
    transition_kernel(&scaled, c * p.t)
}

/// `log int exp(Q^{eps/C}_{Ct} psi) dm <= int psi dm`.
pub fn hjb_contraction_iii(
    k_scaled: &ReferenceKernel,
    m: &DiscreteMeasure,
    psi: &ScalarField,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    let c = hjb_scale(p)?;
    check_kernel(k_scaled, p.epsilon / c, c * p.t)?;
    check_same_space(k_scaled.space(), psi.space(), "hjb_contraction_iii")?;
    let q = q_values(k_scaled, psi.values(), p.epsilon / c)?;
    let lhs = log_sum_exp_iter(q.iter().zip(m.log_weights()).map(|(v, lw)| v + lw));
    let rhs = m.expect(psi.values());
    Ok(InequalityReport::new("hjb_contraction_iii", *p, lhs, rhs, tol, k_scaled.len()).with_extra("c", c))
}

/// `(eps/2) H(mu|m) + (eps/2) H(nu|m) + W_2^2 / 2 <= eps T(mu, nu)` at `t = 1`.
pub fn domination_check(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    if p.t != 1.0 {
        return Err(Error::Parameter(format!("domination is stated at t = 1, got t = {}", p.t)));
    }
    check_kernel(k, p.epsilon, 1.0)?;
    let h_mu = relative_entropy(mu, m)?;
    let h_nu = relative_entropy(nu, m)?;
    let w = w2(mu, nu)?;
    let (cost, iters) = if h_mu.is_finite() && h_nu.is_finite() {
        solved_cost(k, mu, nu)?
    } else {
        (f64::INFINITY, 0)
    };
    Ok(domination_report(cost, h_mu, h_nu, w, p, tol, k.len()).with_extra("ipfp_iterations", iters as f64))
}

pub fn domination_report(
    cost: f64,
    h_mu: f64,
    h_nu: f64,
    w2_dist: f64,
    p: &EtiParams,
    tol: f64,
    grid_n: usize,
) -> InequalityReport {
    let eps = p.epsilon;
    let lhs = 0.5 * eps * (h_mu + h_nu) + 0.5 * w2_dist * w2_dist;
    InequalityReport::new("domination_check", *p, lhs, eps * cost, tol, grid_n)
        .with_extra("h_mu", h_mu)
        .with_extra("h_nu", h_nu)
        .with_extra("w2", w2_dist)
}

/// Classical transport inequality implied at `t = 1`:
/// `W_2^2(mu, m) <= (2 eps theta(lambda eps) - eps) H(mu|m)`.
pub fn talagrand_check(
    m: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    let h = relative_entropy(mu, m)?;
    let w = w2(mu, m)?;
    let th = theta(p.rate())?;
    let c = 2.0 * p.epsilon * th - p.epsilon;
    Ok(InequalityReport::new("talagrand_check", *p, w * w, weighted(c, h), tol, m.len())
        .with_extra("constant", c)
        .with_extra("h_mu", h))
}

/// `1 + eps / (e^{lambda eps t} - (1 + eps))`, or `None` outside the regime
/// `e^{lambda eps t} > 1 + eps`.
pub fn infconv_coefficient(p: &EtiParams) -> Option<f64> {
    let denom = (p.rate() * p.t).exp_m1() - p.epsilon;
    (denom > 0.0).then(|| 1.0 + p.epsilon / denom)
}

/// `Ent_m(e^f) <= kappa int (f - Q_t f) e^f dm`.
pub fn infconv_lsi_check(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    f: &ScalarField,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    check_kernel(k, p.epsilon, p.t)?;
    check_same_space(k.space(), f.space(), "infconv_lsi_check")?;
    let Some(kappa) = infconv_coefficient(p) else {
        return Ok(InequalityReport::not_applicable(
            "infconv_lsi_check",
            *p,
            tol,
            k.len(),
            format!(
                "needs exp(lambda eps t) > 1 + eps; got exp({}) vs {}",
                p.rate() * p.t,
                1.0 + p.epsilon
            ),
        ));
    };
    let vals = f.values();
    let lhs = ent_of_exp(vals, m);
    let q = q_values(k, vals, p.epsilon)?;
    let integral: f64 = vals
        .iter()
        .zip(&q)
        .zip(m.weights())
        .map(|((fv, qv), w)| w * (fv - qv) * fv.exp())
        .sum();
    let mut report = InequalityReport::new("infconv_lsi_check", *p, lhs, kappa * integral, tol, k.len())
        .with_extra("kappa", kappa);
    if kappa > NEAR_SINGULAR {
        report = report.with_note("near-singular coefficient");
    }
    Ok(report)
}

/// Discrete gradient: forward differences along each axis, backward at the
/// last index.
pub fn grid_gradient_sq(g: &ScalarField) -> Vec<f64> {
    let space = g.space();
    let v = g.values();
    (0..space.len())
        .map(|i| {
            (0..space.dim())
                .map(|a| {
                    let k = space.axis_index(i, a);
                    let n = space.axis(a).len();
                    let stride = space.stride(a);
                    let h = space.spacing()[a];
                    let d = if k + 1 < n {
                        (v[i + stride] - v[i]) / h
                    } else {
                        (v[i] - v[i - stride]) / h
                    };
                    d * d
                })
                .sum()
        })
        .collect()
}

/// `Var_m(g) <= (2 / lambda) int |grad g|^2 dm`.
pub fn poincare_check(
    gen: &Generator,
    m: &DiscreteMeasure,
    g: &ScalarField,
    lambda: f64,
    tol: f64,
) -> Result<InequalityReport> {
    check_same_space(gen.space(), g.space(), "poincare_check")?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let mean = m.expect(g.values());
    let centered: Vec<f64> = g.values().iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = m.expect(&centered);
    let energy = m.expect(&grid_gradient_sq(g));
    let p = EtiParams::new(lambda, gen.epsilon(), 0.0, 1.0)?;
    Ok(InequalityReport::new("poincare_check", p, var, 2.0 / lambda * energy, tol, gen.space().len())
        .with_extra("dirichlet_energy", energy))
}

/// `count` Chebyshev points in `(0.02 t, 0.98 t)`, ascending.
pub fn chebyshev_s_grid(t: f64, count: usize) -> Vec<f64> {
    let (a, b) = (0.02 * t, 0.98 * t);
    let mut pts: Vec<f64> = (1..=count)
        .map(|k| {
            let angle = (2 * k - 1) as f64 * std::f64::consts::PI / (2 * count) as f64;
            0.5 * (a + b) + 0.5 * (b - a) * angle.cos()
        })
        .collect();
    pts.sort_by(f64::total_cmp);
    pts
}

/// A `lambda` at which a checker fails, found by bisection.
#[derive(Debug, Clone)]
pub struct Falsification {
    /// Smallest failing `lambda` located, to the bisection resolution.
    pub lambda: f64,
    /// Largest `lambda` seen to pass.
    pub lambda_pass: f64,
    pub report: InequalityReport,
}

/// Bisects in `log lambda` between `lambda_lo` (expected to pass) and
/// `lambda_hi` for the threshold where `eval` stops being satisfied.
///
/// Returns `None` if the check still passes at `lambda_hi`, or an error if
/// it already fails at `lambda_lo`.
pub fn bisect_falsifying_lambda(
    eval: impl Fn(f64) -> Result<InequalityReport>,
    lambda_lo: f64,
    lambda_hi: f64,
    rel_resolution: f64,
) -> Result<Option<Falsification>> {
    if !(lambda_lo > 0.0 && lambda_hi > lambda_lo) {
        return Err(Error::Parameter(format!("bad bisection bracket [{lambda_lo}, {lambda_hi}]")));
    }
    let at_hi = eval(lambda_hi)?;
    if at_hi.satisfied || !at_hi.applicable {
        return Ok(None);
    }
    if !eval(lambda_lo)?.satisfied {
        return Err(Error::Parameter(format!("check already fails at lambda = {lambda_lo}")));
    }
    let (mut lo, mut hi, mut failing) = (lambda_lo, lambda_hi, at_hi);
    while hi / lo - 1.0 > rel_resolution {
        let mid = (lo * hi).sqrt();
        let r = eval(mid)?;
        if r.satisfied {
            lo = mid;
        } else {
            hi = mid;
            failing = r;
        }
    }
    Ok(Some(Falsification {
        lambda: hi,
        lambda_pass: lo,
        report: failing,
    }))
}
