//! Quadratic Wasserstein distance between grid measures.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;

/// Largest combined support handled by [`w2_small_lp`].
pub const MAX_LP_SUPPORT: usize = 64;

/// Exact `W_2` between 1D measures via the monotone (quantile) coupling.
pub fn w2_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.space().dim() != 1 || nu.space().dim() != 1 {
        return Err(Error::Dimension(
            "w2_1d needs 1D measures; use w2_small_lp for product grids".into(),
        ));
    }
    let xs = mu.space().axis(0);
    let ys = nu.space().axis(0);
    let a: Vec<(f64, f64)> = mu.support().into_iter().map(|i| (xs[i], mu.weights()[i])).collect();
    let b: Vec<(f64, f64)> = nu.support().into_iter().map(|j| (ys[j], nu.weights()[j])).collect();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let moved = ra.min(rb);
        let d = a[i].0 - b[j].0;
        cost += moved * d * d;
        ra -= moved;
        rb -= moved;
        if ra <= rb {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        } else {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    Ok(cost.max(0.0).sqrt())
}

/// Exact `W_2` between small measures in any dimension, by the
/// transportation simplex on the combined support.
pub fn w2_small_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.space().dim() != nu.space().dim() {
        return Err(Error::Dimension(format!(
            "measures live in dimensions {} and {}",
            mu.space().dim(),
            nu.space().dim()
        )));
    }
    let rows = mu.support();
    let cols = nu.support();
    if rows.len() + cols.len() > MAX_LP_SUPPORT {
        return Err(Error::Size(format!(
            "combined support {} exceeds {MAX_LP_SUPPORT} points",
            rows.len() + cols.len()
        )));
    }
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| cols.iter().map(|&j| mu.space().sq_dist(i, nu.space(), j)).collect())
        .collect();
    let supply: Vec<f64> = rows.iter().map(|&i| mu.weights()[i]).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| nu.weights()[j]).collect();
    let value = transportation_simplex(&cost, &supply, &demand);
    Ok(value.max(0.0).sqrt())
}

/// `W_2`, choosing the exact 1D method when possible.
pub fn w2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.space().dim() == 1 && nu.space().dim() == 1 {
        w2_1d(mu, nu)
    } else {
        w2_small_lp(mu, nu)
    }
}

/// Minimum of `sum c_ij x_ij` over transport plans between `supply` and
/// `demand` (equal totals).
pub fn transportation_simplex(cost: &[Vec<f64>], supply: &[f64], demand: &[f64]) -> f64 {
    let m = supply.len();
    let n = demand.len();
    let mut flow = vec![vec![0.0; n]; m];
    let mut basic = vec![vec![false; n]; m];

    // Northwest-corner start: a spanning tree of m + n - 1 cells.
    let (mut a, mut b) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = a[i].min(b[j]);
        flow[i][j] = x;
        basic[i][j] = true;
        a[i] -= x;
        b[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && a[i] <= b[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.iter().flatten().fold(0.0_f64, |s, c| s.max(c.abs())).max(1.0);
    let bland_after = 50 * (m + n) * (m + n);
    for iteration in 0.. {
        let (u, v) = potentials(cost, &basic);
        let mut entering = None;
        let mut best = -1e-13 * scale;
        'scan: for r in 0..m {
            for c in 0..n {
                if basic[r][c] {
                    continue;
                }
                let d = cost[r][c] - u[r] - v[c];
                if d < best {
                    entering = Some((r, c));
                    if iteration >= bland_after {
                        break 'scan;
                    }
                    best = d;
                }
            }
        }
        let Some((er, ec)) = entering else { break };
        let path = tree_path(&basic, er, ec);
        // Cycle: entering cell (+), then path cells from the column end, alternating.
        let minus: Vec<(usize, usize)> = path.iter().rev().step_by(2).copied().collect();
        let plus: Vec<(usize, usize)> = path.iter().rev().skip(1).step_by(2).copied().collect();
        let (leave, theta) = minus
            .iter()
            .map(|&(r, c)| ((r, c), flow[r][c]))
            .fold(((usize::MAX, usize::MAX), f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        flow[er][ec] += theta;
        for &(r, c) in &plus {
            flow[r][c] += theta;
        }
        for &(r, c) in &minus {
            flow[r][c] = (flow[r][c] - theta).max(0.0);
        }
        basic[er][ec] = true;
        basic[leave.0][leave.1] = false;
        flow[leave.0][leave.1] = 0.0;
    }

    (0..m)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| flow[r][c] * cost[r][c])
        .sum()
}

/// Dual potentials with `u_0 = 0` and `u_r + v_c = c_rc` on basic cells.
fn potentials(cost: &[Vec<f64>], basic: &[Vec<bool>]) -> (Vec<f64>, Vec<f64>) {
    let m = cost.len();
    let n = cost[0].len();
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut queue = VecDeque::from([(true, 0usize)]);
    while let Some((is_row, k)) = queue.pop_front() {
        if is_row {
            for c in 0..n {
                if basic[k][c] && v[c].is_nan() {
                    v[c] = cost[k][c] - u[k];
                    queue.push_back((false, c));
                }
            }
        } else {
            for r in 0..m {
                if basic[r][k] && u[r].is_nan() {
                    u[r] = cost[r][k] - v[k];
                    queue.push_back((true, r));
                }
            }
        }
    }
    (u, v)
}

/// Basic cells on the tree path from row `r0` to column `c0`, in order.
fn tree_path(basic: &[Vec<bool>], r0: usize, c0: usize) -> Vec<(usize, usize)> {
    let m = basic.len();
    let n = basic[0].len();
    // Nodes: rows 0..m, columns m..m+n. Parent links record the cell used.
    let mut parent: Vec<Option<(usize, (usize, usize))>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    seen[r0] = true;
    let mut queue = VecDeque::from([r0]);
    while let Some(node) = queue.pop_front() {
        if node == m + c0 {
            break;
        }
        let neighbors: Vec<(usize, (usize, usize))> = if node < m {
            (0..n).filter(|&c| basic[node][c]).map(|c| (m + c, (node, c))).collect()
        } else {
            let c = node - m;
            (0..m).filter(|&r| basic[r][c]).map(|r| (r, (r, c))).collect()
        };
        for (next, cell) in neighbors {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, cell));
                queue.push_back(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = m + c0;
    while node != r0 {
        let (prev, cell) = parent[node].expect("basis is a spanning tree");
        path.push(cell);
        node = prev;
    }
    path.reverse();
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::GridSpace;

    #[test]
    fn one_d_examples() {
        let g = GridSpace::uniform(0.0, 2.0, 3).unwrap();
        let m = DiscreteMeasure::new(g.clone(), vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(w2_1d(&m, &m).unwrap(), 0.0);
        let a = DiscreteMeasure::dirac(g.clone(), 0).unwrap();
        let b = DiscreteMeasure::dirac(g.clone(), 2).unwrap();
        assert!((w2_1d(&a, &b).unwrap() - 2.0).abs() < 1e-15);
        let p = DiscreteMeasure::new(g.clone(), vec![0.5, 0.5, 0.0]).unwrap();
        let q = DiscreteMeasure::new(g, vec![0.0, 0.5, 0.5]).unwrap();
        assert!((w2_1d(&p, &q).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lp_matches_one_d_hand_case() {
        let g = GridSpace::uniform(0.0, 2.0, 3).unwrap();
        let p = DiscreteMeasure::new(g.clone(), vec![0.5, 0.5, 0.0]).unwrap();
        let q = DiscreteMeasure::new(g, vec![0.0, 0.5, 0.5]).unwrap();
        assert!((w2_small_lp(&p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_product_shift() {
        let a = GridSpace::uniform(0.0, 1.0, 2).unwrap();
        let s = GridSpace::product(&a, &a);
        let d0 = DiscreteMeasure::dirac(s.clone(), 0).unwrap();
        let d1 = DiscreteMeasure::dirac(s, 3).unwrap();
        assert!((w2_small_lp(&d0, &d1).unwrap() - 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lp_rejects_large_supports() {
        let g = GridSpace::uniform(0.0, 1.0, 40).unwrap();
        let u = DiscreteMeasure::uniform(g);
        assert!(matches!(w2_small_lp(&u, &u), Err(Error::Size(_))));
    }
}
