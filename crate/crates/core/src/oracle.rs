//! Brute-force entropic transport costs on two- and three-point grids, by
//! nested golden-section search over the coupling polytope. Independent of
//! IPFP and meant for cross-checks.

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::reference::ReferenceKernel;

const INVPHI: f64 = 0.618_033_988_749_894_9;
const SECTIONS: usize = 56;

/// Golden-section minimum of a convex function on `[lo, hi]`.
pub fn golden_min(lo: f64, hi: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    if hi - lo <= 0.0 {
        return f(lo.max(hi));
    }
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..SECTIONS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd).min(f(lo)).min(f(hi))
}

fn xlogx_over(x: f64, r: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * (x / r).ln()
    }
}

/// `min H(pi | R)` over couplings of `mu` and `nu`, for grids of 2 or 3 points.
pub fn brute_force_cost(k: &ReferenceKernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let n = k.len();
    if mu.len() != n || nu.len() != n {
        return Err(Error::Dimension("measures and kernel differ in size".into()));
    }
    let m = k.stationary();
    let r: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m.weights()[i] * k.log_k()[(i, j)].exp()).collect())
        .collect();
    let mw = mu.weights();
    let nw = nu.weights();
    match n {
        2 => {
            let obj = |a: f64| {
                xlogx_over(a, r[0][0])
                    + xlogx_over(mw[0] - a, r[0][1])
                    + xlogx_over(nw[0] - a, r[1][0])
                    + xlogx_over(mw[1] - nw[0] + a, r[1][1])
            };
            Ok(golden_min((nw[0] - mw[1]).max(0.0), mw[0].min(nw[0]), &obj))
        }
        3 => {
            // Free entries a = pi_00, b = pi_01, c = pi_10, d = pi_11; the
            // rest follow from the marginals. The intervals come from
            // eliminating d, c and b in turn.
            let s = nw[0] + nw[1] - mw[2];
            let obj = |a: f64, b: f64, c: f64, d: f64| {
                let pi = [
                    [a, b, mw[0] - a - b],
                    [c, d, mw[1] - c - d],
                    [nw[0] - a - c, nw[1] - b - d, mw[2] - nw[0] - nw[1] + a + b + c + d],
                ];
                let mut h = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        h += xlogx_over(pi[i][j].max(0.0), r[i][j]);
                    }
                }
                h
            };
            let over_d = |a: f64, b: f64, c: f64| {
                let lo = (s - a - b - c).max(0.0);
                let hi = (mw[1] - c).min(nw[1] - b);
                golden_min(lo, hi, &|d| obj(a, b, c, d))
            };
            let over_c = |a: f64, b: f64| {
                let lo = (s - nw[1] - a).max(0.0);
                let hi = mw[1].min(nw[0] - a);
                golden_min(lo, hi, &|c| over_d(a, b, c))
            };
            let over_b = |a: f64| {
                let lo = (s - mw[1] - a).max(0.0);
                let hi = nw[1].min(mw[0] - a);
                golden_min(lo, hi, &|b| over_c(a, b))
            };
            Ok(golden_min((s - nw[1] - mw[1]).max(0.0), nw[0].min(mw[0]), &over_b))
        }
        _ => Err(Error::Size(format!("brute force handles 2 or 3 points, got {n}"))),
    }
}
