//! Tensorization on two-factor product grids and dimension-free
//! concentration in terms of the cost `c_A(x) = -log r(x, A)`.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::inequalities::{eti_check, theta, EtiParams, InequalityReport};
use crate::logspace::log_sum_exp_iter;
use crate::measures::{check_same_space, product_measure, DiscreteMeasure, GridSpace, ScalarField, ZERO_WEIGHT};
use crate::reference::{product_kernel, ReferenceKernel};
use crate::sampling::{random_measure, random_tilt};
use crate::schrodinger::{ipfp, CouplingSolution, IpfpOptions};
use crate::semigroup::q_values;

/// Largest product state space handled by the tensorization suites.
pub const MAX_PRODUCT_POINTS: usize = 4096;

/// A subset of grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct BorelSubset {
    space: Arc<GridSpace>,
    members: Vec<bool>,
}

impl BorelSubset {
    pub fn new(space: Arc<GridSpace>, members: Vec<bool>) -> Result<Self> {
        if members.len() != space.len() {
            return Err(Error::Dimension(format!(
                "{} membership flags for a grid of {} points",
                members.len(),
                space.len()
            )));
        }
        Ok(Self { space, members })
    }

    pub fn whole(space: Arc<GridSpace>) -> Self {
        let members = vec![true; space.len()];
        Self { space, members }
    }

    pub fn from_fn(space: Arc<GridSpace>, f: impl Fn(&[f64]) -> bool) -> Self {
        let members = (0..space.len()).map(|i| f(&space.point(i))).collect();
        Self { space, members }
    }

    /// `{g <= level}`.
    pub fn sublevel(g: &ScalarField, level: f64) -> Self {
        Self {
            space: g.space().clone(),
            members: g.values().iter().map(|v| *v <= level).collect(),
        }
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.space
    }

    pub fn members(&self) -> &[bool] {
        &self.members
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members[i]
    }

    pub fn count(&self) -> usize {
        self.members.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn complement(&self) -> Self {
        Self {
            space: self.space.clone(),
            members: self.members.iter().map(|b| !b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BorelSubset) -> bool {
        self.members.iter().zip(&other.members).all(|(a, b)| !a || *b)
    }

    /// Membership as a JSON array of booleans.
    pub fn to_json(&self) -> Value {
        Value::Array(self.members.iter().map(|b| Value::Bool(*b)).collect())
    }

    pub fn from_json(space: Arc<GridSpace>, json: &Value) -> Result<Self> {
        let arr = json
            .as_array()
            .ok_or_else(|| Error::Parameter("a set must be a JSON array of booleans".into()))?;
        let members = arr
            .iter()
            .map(|v| v.as_bool().ok_or_else(|| Error::Parameter(format!("not a boolean: {v}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(space, members)
    }
}

/// `log r(x, A) = log sum_{j in A} K_xj` for every `x`.
fn log_reach(k: &ReferenceKernel, a: &BorelSubset) -> Vec<f64> {
    (0..k.len())
        .into_par_iter()
        .map(|i| {
            log_sum_exp_iter(
                k.log_row(i)
                    .iter()
                    .zip(a.members())
                    .map(|(lk, inside)| if *inside { *lk } else { f64::NEG_INFINITY }),
            )
        })
        .collect()
}

/// `c_A(x) = -log r(x, A)`; `+inf` where `r(x, A)` underflows and
/// everywhere when `A` is empty.
pub fn c_a(k: &ReferenceKernel, a: &BorelSubset) -> Result<Vec<f64>> {
    check_same_space(k.space(), a.space(), "c_a")?;
    Ok(log_reach(k, a).into_iter().map(|l| -l).collect())
}

/// `A_u = {x : c_A(x) <= u}`.
pub fn a_u(k: &ReferenceKernel, a: &BorelSubset, u: f64) -> Result<BorelSubset> {
    check_u(u)?;
    let c = c_a(k, a)?;
    BorelSubset::new(a.space().clone(), c.iter().map(|v| *v <= u).collect())
}

/// `A_u` through `{x : r(x, A) >= e^{-u}}`, comparing in log scale.
pub fn a_u_via_mass(k: &ReferenceKernel, a: &BorelSubset, u: f64) -> Result<BorelSubset> {
    check_u(u)?;
    check_same_space(k.space(), a.space(), "a_u_via_mass")?;
    let reach = log_reach(k, a);
    BorelSubset::new(a.space().clone(), reach.iter().map(|l| *l >= -u).collect())
}

fn check_u(u: f64) -> Result<()> {
    if !(u >= 0.0) {
        return Err(Error::Parameter(format!("u must be nonnegative, got {u}")));
    }
    Ok(())
}

fn check_unit_horizon(k: &ReferenceKernel, p: &EtiParams) -> Result<()> {
    p.validate()?;
    if p.t != 1.0 || (k.t() - 1.0).abs() > 1e-12 {
        return Err(Error::Parameter(format!(
            "concentration is stated at t = 1; got t = {} and a kernel at t = {}",
            p.t,
            k.t()
        )));
    }
    if (k.epsilon() - p.epsilon).abs() > 1e-12 * p.epsilon.max(1.0) {
        return Err(Error::Parameter(format!(
            "kernel has eps = {} but the check uses {}",
            k.epsilon(),
            p.epsilon
        )));
    }
    if !(p.s > 0.0) {
        return Err(Error::Parameter("concentration needs s in (0, 1)".into()));
    }
    Ok(())
}

/// `a log x` for a log-mass `x`, with `a * (-inf) = -inf` for `a > 0`.
fn scaled_log(a: f64, log_mass: f64) -> f64 {
    if log_mass == 0.0 {
        0.0
    } else {
        a * log_mass
    }
}

/// `(theta(s) - 1) log m(A_u^c) + theta(1 - s) log m(A) <= -u`.
pub fn concentration_set_check(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    a: &BorelSubset,
    u: f64,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    check_unit_horizon(k, p)?;
    let au = a_u(k, a, u)?;
    let log_out = m.log_mass_of(au.complement().members());
    let log_a = m.log_mass_of(a.members());
    let c1 = theta(p.rate() * p.s)? - 1.0;
    let c2 = theta(p.rate() * (1.0 - p.s))?;
    let lhs = scaled_log(c1, log_out) + scaled_log(c2, log_a);
    let mut r = InequalityReport::new("concentration_set_check", *p, lhs, -u, tol, k.len())
        .with_extra("u", u)
        .with_extra("log_mass_a", log_a)
        .with_extra("log_mass_outside_a_u", log_out);
    if lhs == f64::NEG_INFINITY {
        r = r.with_note("vacuous: a factor has zero mass");
    }
    Ok(r)
}

/// `eps (theta(s) - 1) log m(Q phi > u) + eps theta(1 - s) log m(phi <= v) <= v - u`.
#[allow(clippy::too_many_arguments)]
pub fn concentration_fn_check(
    k: &ReferenceKernel,
    m: &DiscreteMeasure,
    phi: &ScalarField,
    u: f64,
    v: f64,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    check_unit_horizon(k, p)?;
    check_same_space(k.space(), phi.space(), "concentration_fn_check")?;
    if !(u > v) {
        return Err(Error::Parameter(format!("needs u > v, got u = {u}, v = {v}")));
    }
    if phi.min() < 0.0 {
        return Err(Error::Domain(format!("phi must be nonnegative, min is {}", phi.min())));
    }
    let q = q_values(k, phi.values(), p.epsilon)?;
    let above: Vec<bool> = q.iter().map(|x| *x > u).collect();
    let below: Vec<bool> = phi.values().iter().map(|x| *x <= v).collect();
    let log_above = m.log_mass_of(&above);
    let log_below = m.log_mass_of(&below);
    let c1 = p.epsilon * (theta(p.rate() * p.s)? - 1.0);
    let c2 = p.epsilon * theta(p.rate() * (1.0 - p.s))?;
    let lhs = scaled_log(c1, log_above) + scaled_log(c2, log_below);
    Ok(InequalityReport::new("concentration_fn_check", *p, lhs, v - u, tol, k.len())
        .with_extra("u", u)
        .with_extra("v", v)
        .with_extra("log_mass_q_above_u", log_above)
        .with_extra("log_mass_phi_below_v", log_below))
}

/// A set `A` and level `u` for which `A` is not contained in `A_u`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonEnlargement {
    pub set: BorelSubset,
    pub u: f64,
    /// A point of `A` outside `A_u`.
    pub witness: usize,
}

/// Scans grid intervals `A = [a, b]` (1D) against the levels in `us` and
/// returns the first with `A ⊄ A_u`.
pub fn find_non_enlargement(k: &ReferenceKernel, us: &[f64]) -> Result<Option<NonEnlargement>> {
    let n = k.len();
    for &u in us {
        for width in 1..n {
            for start in 0..=n - width {
                let members = (0..n).map(|i| i >= start && i < start + width).collect();
                let set = BorelSubset::new(k.space().clone(), members)?;
                let au = a_u(k, &set, u)?;
                if let Some(witness) = (start..start + width).find(|&i| !au.contains(i)) {
                    return Ok(Some(NonEnlargement { set, u, witness }));
                }
            }
        }
    }
    Ok(None)
}

fn check_pair(k1: &ReferenceKernel, k2: &ReferenceKernel, what: &str) -> Result<()> {
    if k1.space().dim() != 1 || k2.space().dim() != 1 {
        return Err(Error::Dimension(format!("{what} takes two 1D factors")));
    }
    let n = k1.len() * k2.len();
    if n > MAX_PRODUCT_POINTS {
        return Err(Error::Size(format!(
            "product state space has {n} points, above the limit of {MAX_PRODUCT_POINTS}"
        )));
    }
    Ok(())
}

/// Runs `eti_check` on the product of two factors over `draws` random
/// pairs, half of product form and half correlated. Returns the worst draw
/// as the aggregate together with every individual report.
pub fn tensor_eti_suite<R: Rng + ?Sized>(
    factors: &[(ReferenceKernel, DiscreteMeasure)],
    p: &EtiParams,
    draws: usize,
    rng: &mut R,
    tol: f64,
) -> Result<(InequalityReport, Vec<InequalityReport>)> {
    if factors.len() != 2 {
        return Err(Error::Size(format!("tensorization suites use two factors, got {}", factors.len())));
    }
    let (k1, m1) = &factors[0];
    let (k2, m2) = &factors[1];
    check_pair(k1, k2, "tensor_eti_suite")?;
    let k = product_kernel(k1, k2)?;
    let m = k.stationary().clone();
    let m_prod = product_measure(m1, m2);
    let m_prod = DiscreteMeasure::new(k.space().clone(), m_prod.weights().to_vec())?;

    let mut pairs = Vec::with_capacity(draws);
    for d in 0..draws {
        let pair = if d % 2 == 0 {
            let mu = product_measure(&random_measure(rng, m1, 1.0)?, &random_measure(rng, m2, 1.0)?);
            let nu = product_measure(&random_measure(rng, m1, 1.0)?, &random_measure(rng, m2, 1.0)?);
            (rehome(&k, mu)?, rehome(&k, nu)?, "product")
        } else {
            (random_tilt(rng, &m, 1.0, true)?, random_tilt(rng, &m, 1.0, true)?, "correlated")
        };
        pairs.push(pair);
    }
    let reports = pairs
        .par_iter()
        .map(|(mu, nu, kind)| Ok(eti_check(&k, &m_prod, mu, nu, p, tol)?.with_note(*kind)))
        .collect::<Result<Vec<_>>>()?;
    Ok((tensor_eti_aggregate(&reports, p, tol, k.len()), reports))
}

/// One row over a batch of product-space `eti_check` reports: the worst
/// instance, satisfied only if every instance is.
pub fn tensor_eti_aggregate(reports: &[InequalityReport], p: &EtiParams, tol: f64, grid_n: usize) -> InequalityReport {
    let failures = reports.iter().filter(|r| !r.satisfied).count();
    let worst = reports.iter().min_by(|a, b| a.slack.total_cmp(&b.slack));
    let (lhs, rhs, tol) = worst.map_or((0.0, 0.0, tol), |w| (w.lhs, w.rhs, w.tolerance));
    let mut agg = InequalityReport::new("tensor_eti_suite", *p, lhs, rhs, tol, grid_n)
        .with_extra("draws", reports.len() as f64)
        .with_extra("failures", failures as f64);
    agg.satisfied = failures == 0;
    agg
}

fn rehome(k: &ReferenceKernel, mu: DiscreteMeasure) -> Result<DiscreteMeasure> {
    DiscreteMeasure::new(k.space().clone(), mu.weights().to_vec())
}

/// `sum_j p_j (log p_j - log r_j)` over the charged entries of `p`.
fn kernel_entropy(p: &[f64], log_r: &[f64]) -> f64 {
    p.iter()
        .zip(log_r)
        .filter(|(w, _)| **w > ZERO_WEIGHT)
        .map(|(w, lr)| w * (w.ln() - lr))
        .sum()
}

fn solved(sol: CouplingSolution, what: impl FnOnce() -> String) -> Result<CouplingSolution> {
    if sol.converged {
        Ok(sol)
    } else {
        Err(Error::Unconverged(format!(
            "{} stopped after {} sweeps with marginal error {:.3e}",
            what(),
            sol.iterations,
            sol.marginal_err
        )))
    }
}

/// Upper bound on `T̄(nu | mu) = inf_pi sum_i int H(p_i(x, .) | r^i(x_i, .)) dmu`
/// on a two-factor product grid.
///
/// Evaluates the objective on the coupling `mu(dx) p̃_1(x_1, dy_1)
/// q^{x_1,y_1}(x_2, dy_2)`, where `p̃_1` is the optimal kernel between the
/// first marginals and each `q^{x_1,y_1}` the optimal kernel between the
/// conditionals `mu(x_1, .)` and `nu(y_1, .)`.
pub fn tbar_upper_bound(
    k1: &ReferenceKernel,
    k2: &ReferenceKernel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    tol: f64,
) -> Result<f64> {
    check_pair(k1, k2, "tbar_upper_bound")?;
    let space = GridSpace::product(k1.space(), k2.space());
    check_same_space(&space, mu.space(), "tbar_upper_bound")?;
    check_same_space(&space, nu.space(), "tbar_upper_bound")?;
    let opts = IpfpOptions {
        tol,
        ..IpfpOptions::default()
    };
    let n1 = k1.len();
    let n2 = k2.len();
    let mu1 = mu.marginal(0)?;
    let nu1 = nu.marginal(0)?;
    let mu1 = DiscreteMeasure::new(k1.space().clone(), mu1.weights().to_vec())?;
    let nu1 = DiscreteMeasure::new(k1.space().clone(), nu1.weights().to_vec())?;
    let first = solved(ipfp(k1, &mu1, &nu1, &opts)?, || "first-coordinate solve".into())?;

    // log p̃_1(x1, y1)
    let log_p1 = |x1: usize, y1: usize| first.log_pi[(x1, y1)] - mu1.log_weights()[x1];

    let per_x1 = (0..n1)
        .into_par_iter()
        .map(|x1| -> Result<f64> {
            let w1 = mu1.weights()[x1];
            if w1 <= ZERO_WEIGHT {
                return Ok(0.0);
            }
            let p1: Vec<f64> = (0..n1).map(|y1| log_p1(x1, y1).exp()).collect();
            let h1 = kernel_entropy(&p1, k1.log_row(x1));
            let Some(mu_x1) = mu.conditional_second(x1, k2.space()) else {
                return Ok(0.0);
            };
            // p_2(x, .) for x = (x1, x2), rows indexed by x2.
            let mut p2 = vec![0.0; n2 * n2];
            for (y1, &w) in p1.iter().enumerate() {
                if w <= ZERO_WEIGHT {
                    continue;
                }
                let Some(nu_y1) = nu.conditional_second(y1, k2.space()) else {
                    continue;
                };
                let sol = solved(ipfp(k2, &mu_x1, &nu_y1, &opts)?, || {
                    format!("conditional solve at (x1, y1) = ({x1}, {y1})")
                })?;
                for x2 in mu_x1.support() {
                    let lm = mu_x1.log_weights()[x2];
                    for y2 in 0..n2 {
                        let lp = sol.log_pi[(x2, y2)];
                        if lp > f64::NEG_INFINITY {
                            p2[x2 * n2 + y2] += w * (lp - lm).exp();
                        }
                    }
                }
            }
            let h2: f64 = mu_x1
                .support()
                .into_iter()
                .map(|x2| mu_x1.weights()[x2] * kernel_entropy(&p2[x2 * n2..(x2 + 1) * n2], k2.log_row(x2)))
                .sum();
            Ok(w1 * (h1 + h2))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_x1.iter().sum::<f64>().max(0.0))
}

/// `T̄(nu | mu) <= (theta(s) - 1) H(mu|m) + theta(1 - s) H(nu|m)` through
/// [`tbar_upper_bound`].
pub fn tbar_check(
    k1: &ReferenceKernel,
    k2: &ReferenceKernel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: &EtiParams,
    tol: f64,
) -> Result<InequalityReport> {
    p.validate()?;
    if p.t != 1.0 || !(p.s > 0.0) {
        return Err(Error::Parameter("the second tensorization form uses t = 1 and s in (0, 1)".into()));
    }
    let k = product_kernel(k1, k2)?;
    let m = k.stationary();
    let h_mu = crate::measures::relative_entropy(&rehome(&k, mu.clone())?, m)?;
    let h_nu = crate::measures::relative_entropy(&rehome(&k, nu.clone())?, m)?;
    let bound = tbar_upper_bound(k1, k2, mu, nu, 1e-10)?;
    tbar_report(bound, h_mu, h_nu, p, tol, k.len())
}

/// Builds the `tbar_check` report from a precomputed bound and entropies.
pub fn tbar_report(bound: f64, h_mu: f64, h_nu: f64, p: &EtiParams, tol: f64, grid_n: usize) -> Result<InequalityReport> {
    let c1 = theta(p.rate() * p.s)? - 1.0;
    let c2 = theta(p.rate() * (1.0 - p.s))?;
    Ok(InequalityReport::new("tbar_check", *p, bound, c1 * h_mu + c2 * h_nu, tol, grid_n)
        .with_extra("h_mu", h_mu)
        .with_extra("h_nu", h_nu))
}
