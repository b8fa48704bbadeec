//! Static Schrödinger problem: entropy minimization over couplings against
//! the reference joint law `R(dx dy) = m(dx) r_t(x, dy)`.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp_iter;
use crate::matrix::Matrix;
use crate::measures::{check_same_space, DiscreteMeasure, ScalarField, ZERO_WEIGHT};
use crate::reference::ReferenceKernel;
use crate::semigroup::q_values;

/// Problems at least this large update potentials in parallel.
const PARALLEL_MIN: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IpfpOptions {
    /// Stopping threshold on the L1 column-marginal error.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the dual and primal objectives after every sweep.
    pub record_history: bool,
}

impl Default for IpfpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50_000,
            record_history: false,
        }
    }
}

/// Optimal coupling in log form with its IPFP potentials.
///
/// `log_pi_ij = log m_i + log K_ij + alpha_i + beta_j` on the supports;
/// potentials are `-inf` off the supports of `mu` and `nu`.
#[derive(Debug, Clone)]
pub struct CouplingSolution {
    pub log_pi: Matrix,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `H(pi | R)` in nats.
    pub primal_cost: f64,
    /// `sum mu alpha + sum nu beta`.
    pub dual_cost: f64,
    /// L1 error of the column marginal; rows are exact.
    pub marginal_err: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dual objective after each sweep, when requested.
    pub history: Vec<f64>,
    /// `H(pi_k | R)` of the iterate after each sweep (columns fitted), when requested.
    pub primal_history: Vec<f64>,
}

#[derive(Serialize)]
struct SolutionJson {
    primal_cost: f64,
    dual_cost: f64,
    marginal_err: f64,
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<Value>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<Vec<Value>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_pi: Option<Vec<Vec<Value>>>,
}

/// Non-finite numbers are written as strings so the output stays valid JSON.
pub fn json_number(x: f64) -> Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else if x.is_nan() {
        Value::String("NaN".into())
    } else if x > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

impl CouplingSolution {
    /// Summary as JSON; potentials and the coupling matrix only when `full`.
    pub fn to_json(&self, full: bool) -> Value {
        let nums = |v: &[f64]| v.iter().map(|x| json_number(*x)).collect::<Vec<_>>();
        let json = SolutionJson {
            primal_cost: self.primal_cost,
            dual_cost: self.dual_cost,
            marginal_err: self.marginal_err,
            iterations: self.iterations,
            converged: self.converged,
            alpha: full.then(|| nums(&self.alpha)),
            beta: full.then(|| nums(&self.beta)),
            log_pi: full.then(|| self.log_pi.rows_iter().map(nums).collect()),
        };
        serde_json::to_value(json).expect("solution summary serializes")
    }

    /// The coupling in linear scale.
    pub fn coupling(&self) -> Matrix {
        self.log_pi.map(f64::exp)
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.log_pi
            .rows_iter()
            .map(|r| log_sum_exp_iter(r.iter().copied()).exp())
            .collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let n = self.log_pi.cols();
        let mut out = vec![0.0; n];
        for row in self.log_pi.rows_iter() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v.exp();
            }
        }
        out
    }
}

fn check_supports(k: &ReferenceKernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    check_same_space(k.space(), mu.space(), "ipfp (mu)")?;
    check_same_space(k.space(), nu.space(), "ipfp (nu)")?;
    let m = k.stationary();
    for (name, meas) in [("mu", mu), ("nu", nu)] {
        if let Some(i) = (0..meas.len()).find(|&i| meas.is_charged(i) && !m.is_charged(i)) {
            return Err(Error::Support(format!(
                "{name} charges point {i} where the reference measure vanishes"
            )));
        }
    }
    Ok(())
}

/// Log-domain iterative proportional fitting for
/// `min { H(pi | R) : pi in Pi(mu, nu) }`.
///
/// Each sweep sets `alpha` to fit the rows and then `beta` to fit the
/// columns. Iteration stops once the column error after a row update drops
/// below `tol`, so returned rows are exact.
pub fn ipfp(
    k: &ReferenceKernel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    opts: &IpfpOptions,
) -> Result<CouplingSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    check_supports(k, mu, nu)?;
    let n = k.len();
    let log_m = k.stationary().log_weights();
    let rows: Vec<usize> = mu.support();
    let cols: Vec<usize> = nu.support();

    // Reference restricted to the supports, in both orientations.
    let log_r = Matrix::from_fn(rows.len(), cols.len(), |a, b| {
        log_m[rows[a]] + k.log_k()[(rows[a], cols[b])]
    });
    let log_rt = log_r.transpose();
    for (b, &j) in cols.iter().enumerate() {
        if log_rt.row(b).iter().all(|x| *x == f64::NEG_INFINITY) {
            return Err(Error::Infeasible(format!(
                "nu charges point {j}, which no point in the support of mu can reach"
            )));
        }
    }
    for (a, &i) in rows.iter().enumerate() {
        if log_r.row(a).iter().all(|x| *x == f64::NEG_INFINITY) {
            return Err(Error::Infeasible(format!(
                "mu charges point {i}, from which the support of nu is unreachable"
            )));
        }
    }
    let log_mu: Vec<f64> = rows.iter().map(|&i| mu.log_weights()[i]).collect();
    let log_nu: Vec<f64> = cols.iter().map(|&j| nu.log_weights()[j]).collect();
    let nu_w: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
    let parallel = n >= PARALLEL_MIN;

    let mut alpha = vec![0.0; rows.len()];
    let mut beta = vec![0.0; cols.len()];
    let mut col_lse = vec![0.0; cols.len()];
    let mut history = Vec::new();
    let mut primal_history = Vec::new();
    let mut row_lse = vec![0.0; rows.len()];
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        half_step(&log_r, &beta, &log_mu, &mut alpha, parallel);
        lse_against(&log_rt, &alpha, &mut col_lse, parallel);
        err = col_lse
            .iter()
            .zip(&beta)
            .zip(&nu_w)
            .map(|((l, b), w)| ((l + b).exp() - w).abs())
            .sum();
        if !err.is_finite() {
            return Err(Error::Numerical(format!("marginal error became {err} at sweep {iterations}")));
        }
        if err < opts.tol {
            converged = true;
            break;
        }
        for ((b, l), ln) in beta.iter_mut().zip(&col_lse).zip(&log_nu) {
            *b = ln - l;
        }
        if opts.record_history {
            history.push(dual_sum(mu, nu, &rows, &cols, &alpha, &beta));
            // Row masses of the iterate are e^{alpha_i + lse_j(log_r_ij + beta_j)}.
            lse_against(&log_r, &beta, &mut row_lse, parallel);
            let rows_part: f64 = alpha.iter().zip(&row_lse).map(|(a, l)| (a + l).exp() * a).sum();
            let cols_part: f64 = beta.iter().zip(&nu_w).map(|(b, w)| w * b).sum();
            primal_history.push(rows_part + cols_part);
        }
    }

    let mut full_alpha = vec![f64::NEG_INFINITY; n];
    let mut full_beta = vec![f64::NEG_INFINITY; n];
    for (a, &i) in rows.iter().enumerate() {
        full_alpha[i] = alpha[a];
    }
    for (b, &j) in cols.iter().enumerate() {
        full_beta[j] = beta[b];
    }
    let mut log_pi = Matrix::filled(n, n, f64::NEG_INFINITY);
    let mut primal = 0.0;
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            let lr = log_r[(a, b)];
            if lr == f64::NEG_INFINITY {
                continue;
            }
            let lp = lr + alpha[a] + beta[b];
            log_pi[(i, j)] = lp;
            primal += lp.exp() * (alpha[a] + beta[b]);
        }
    }
    let dual_cost = dual_sum(mu, nu, &rows, &cols, &alpha, &beta);
    Ok(CouplingSolution {
        log_pi,
        alpha: full_alpha,
        beta: full_beta,
        primal_cost: primal.max(0.0),
        dual_cost,
        marginal_err: err,
        iterations,
        converged,
        history,
        primal_history,
    })
}

fn dual_sum(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    rows: &[usize],
    cols: &[usize],
    alpha: &[f64],
    beta: &[f64],
) -> f64 {
    let a: f64 = rows.iter().zip(alpha).map(|(&i, x)| mu.weights()[i] * x).sum();
    let b: f64 = cols.iter().zip(beta).map(|(&j, x)| nu.weights()[j] * x).sum();
    a + b
}

/// `out_a = target_a - lse_b(log_r_ab + other_b)`.
fn half_step(log_r: &Matrix, other: &[f64], target: &[f64], out: &mut [f64], parallel: bool) {
    lse_against(log_r, other, out, parallel);
    for (o, t) in out.iter_mut().zip(target) {
        *o = t - *o;
    }
}

/// `out_a = lse_b(log_r_ab + v_b)`.
fn lse_against(log_r: &Matrix, v: &[f64], out: &mut [f64], parallel: bool) {
    let f = |(a, o): (usize, &mut f64)| {
        *o = log_sum_exp_iter(log_r.row(a).iter().zip(v).map(|(x, y)| x + y));
    };
    if parallel {
        out.par_iter_mut().enumerate().for_each(f);
    } else {
        out.iter_mut().enumerate().for_each(f);
    }
}

/// `T(mu, nu) = H(pi* | R)`; refuses unconverged solutions.
pub fn entropic_cost(sol: &CouplingSolution) -> Result<f64> {
    if !sol.converged {
        return Err(Error::Unconverged(format!(
            "IPFP stopped after {} sweeps with marginal error {:.3e}",
            sol.iterations, sol.marginal_err
        )));
    }
    Ok(sol.primal_cost)
}

/// Solves and returns `T(mu, nu)` with the default options.
pub fn transport_cost(k: &ReferenceKernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    entropic_cost(&ipfp(k, mu, nu, &IpfpOptions::default())?)
}

/// `T(nu | mu) = sum_i mu_i H(p(x_i, .) | K_i.)`, with `p` the disintegration
/// of the optimal coupling along its first marginal.
pub fn forward_cost(sol: &CouplingSolution, mu: &DiscreteMeasure, k: &ReferenceKernel) -> Result<f64> {
    entropic_cost(sol)?;
    check_same_space(k.space(), mu.space(), "forward_cost")?;
    let mut total = 0.0;
    for i in mu.support() {
        let log_row = sol.log_pi.row(i);
        let z = log_sum_exp_iter(log_row.iter().copied());
        let mut h = 0.0;
        for (lp, lk) in log_row.iter().zip(k.log_row(i)) {
            let l = lp - z;
            let w = l.exp();
            if w > ZERO_WEIGHT {
                h += w * (l - lk);
            }
        }
        total += mu.weights()[i] * h.max(0.0);
    }
    Ok(total)
}

/// `sum mu Q^eps phi - sum nu phi`, the dual objective up to `eps H(mu|m)`.
pub fn dual_value(
    k: &ReferenceKernel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    phi: &ScalarField,
    epsilon: f64,
) -> Result<f64> {
    check_same_space(k.space(), phi.space(), "dual_value")?;
    let q = q_values(k, phi.values(), epsilon)?;
    Ok(mu.expect(&q) - nu.expect(phi.values()))
}

/// The potential `phi* = -eps beta` attaining the dual bound. Points outside
/// the support of `nu` get a large finite value.
pub fn optimal_dual_potential(sol: &CouplingSolution, k: &ReferenceKernel, epsilon: f64) -> Result<ScalarField> {
    let finite_max = sol
        .beta
        .iter()
        .filter(|b| b.is_finite())
        .fold(f64::NEG_INFINITY, |a, b| a.max(-epsilon * b));
    // Off-support values only need to make exp(-phi/eps) negligible.
    let cap = finite_max + epsilon * 800.0;
    let values = sol
        .beta
        .iter()
        .map(|b| if b.is_finite() { -epsilon * b } else { cap })
        .collect();
    ScalarField::new(k.space().clone(), values)
}
