//! Heat semigroup `P_t`, entropic HJB semigroup `Q_t^eps` and the Hopf-Lax
//! semigroup `Q_t^0`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp_iter;
use crate::measures::{check_same_space, DiscreteMeasure, GridSpace, ScalarField, ZERO_WEIGHT};
use crate::reference::ReferenceKernel;

/// `(P f)_i = sum_j K_ij f_j`.
///
/// Positive fields are averaged in log domain.
pub fn apply_p(k: &ReferenceKernel, f: &ScalarField) -> Result<ScalarField> {
    check_same_space(k.space(), f.space(), "apply_p")?;
    let vals = f.values();
    let out: Vec<f64> = if vals.iter().all(|v| *v > 0.0) {
        let log_f: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
        log_apply_p(k, &log_f).into_iter().map(f64::exp).collect()
    } else {
        (0..k.len())
            .into_par_iter()
            .map(|i| {
                k.log_row(i)
                    .iter()
                    .zip(vals)
                    .map(|(lk, v)| if *lk == f64::NEG_INFINITY { 0.0 } else { lk.exp() * v })
                    .sum()
            })
            .collect()
    };
    ScalarField::new(f.space().clone(), out)
}

/// `log P e^g`, for `g` given as log-values (`-inf` allowed).
pub fn log_apply_p(k: &ReferenceKernel, log_f: &[f64]) -> Vec<f64> {
    (0..k.len())
        .into_par_iter()
        .map(|i| log_sum_exp_iter(k.log_row(i).iter().zip(log_f).map(|(a, b)| a + b)))
        .collect()
}

/// `Q^eps phi = -eps log P exp(-phi / eps)`, evaluated without forming the
/// exponential.
pub fn apply_q(k: &ReferenceKernel, phi: &ScalarField, epsilon: f64) -> Result<ScalarField> {
    check_same_space(k.space(), phi.space(), "apply_q")?;
    let out = q_values(k, phi.values(), epsilon)?;
    ScalarField::new(phi.space().clone(), out)
}

/// Raw-slice form of [`apply_q`].
pub fn q_values(k: &ReferenceKernel, phi: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if phi.len() != k.len() {
        return Err(Error::Dimension(format!("{} values for a kernel of size {}", phi.len(), k.len())));
    }
    let scaled: Vec<f64> = phi.iter().map(|p| -p / epsilon).collect();
    Ok(log_apply_p(k, &scaled).into_iter().map(|v| -epsilon * v).collect())
}

/// `log sum_i p_i e^{psi_i}`, the variational dual of relative entropy
/// with respect to `p_ref`.
pub fn entropy_dual_value(p_ref: &DiscreteMeasure, psi: &ScalarField) -> Result<f64> {
    check_same_space(p_ref.space(), psi.space(), "entropy_dual_value")?;
    Ok(log_sum_exp_iter(
        p_ref.log_weights().iter().zip(psi.values()).map(|(lw, v)| lw + v),
    ))
}

/// The maximizer `q* ∝ p e^psi` of `sum q psi - H(q|p)`.
pub fn gibbs_tilt(p_ref: &DiscreteMeasure, psi: &ScalarField) -> Result<DiscreteMeasure> {
    check_same_space(p_ref.space(), psi.space(), "gibbs_tilt")?;
    let logs: Vec<f64> = p_ref
        .log_weights()
        .iter()
        .zip(psi.values())
        .map(|(lw, v)| lw + v)
        .collect();
    DiscreteMeasure::from_log_weights(p_ref.space().clone(), &logs)
}

/// Variational form `inf_p { sum p phi + eps H(p | K_i.) }` at row `i`,
/// evaluated at the Gibbs minimizer. Agrees with `(Q^eps phi)_i`.
pub fn q_variational(k: &ReferenceKernel, phi: &[f64], epsilon: f64, i: usize) -> f64 {
    let row = k.log_row(i);
    let logs: Vec<f64> = row.iter().zip(phi).map(|(lk, p)| lk - p / epsilon).collect();
    let z = log_sum_exp_iter(logs.iter().copied());
    let mut value = 0.0;
    for ((l, lk), p) in logs.iter().zip(row).zip(phi) {
        let lp = l - z;
        let w = lp.exp();
        if w > ZERO_WEIGHT {
            value += w * (p + epsilon * (lp - lk));
        }
    }
    value
}

/// `Q^eps` on a two-factor product grid evaluated coordinate by coordinate:
/// first `Q^{eps,2}` on each slice `phi(y_1, .)`, then `Q^{eps,1}` along the
/// first coordinate. Agrees with `Q^eps` of the product kernel.
pub fn q_nested(k1: &ReferenceKernel, k2: &ReferenceKernel, phi: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let (n1, n2) = (k1.len(), k2.len());
    if phi.len() != n1 * n2 {
        return Err(Error::Dimension(format!("{} values for a {n1} x {n2} grid", phi.len())));
    }
    let mut inner = vec![0.0; n1 * n2];
    for y1 in 0..n1 {
        let slice = q_values(k2, &phi[y1 * n2..(y1 + 1) * n2], epsilon)?;
        inner[y1 * n2..(y1 + 1) * n2].copy_from_slice(&slice);
    }
    let mut out = vec![0.0; n1 * n2];
    for x2 in 0..n2 {
        let column: Vec<f64> = (0..n1).map(|y1| inner[y1 * n2 + x2]).collect();
        for (x1, v) in q_values(k1, &column, epsilon)?.into_iter().enumerate() {
            out[x1 * n2 + x2] = v;
        }
    }
    Ok(out)
}

/// `Q_t^0 phi(x) = min_y { phi(y) + |x - y|^2 / (2t) }` over grid points.
pub fn hopf_lax(grid: &GridSpace, phi: &ScalarField, t: f64) -> Result<ScalarField> {
    check_same_space(grid, phi.space(), "hopf_lax")?;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Parameter(format!("time horizon must be positive, got {t}")));
    }
    let vals = phi.values();
    let out: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            (0..grid.len())
                .map(|j| vals[j] + grid.sq_dist(i, grid, j) / (2.0 * t))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    ScalarField::new(phi.space().clone(), out)
}
