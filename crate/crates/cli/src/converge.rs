//! Small-noise limits along an epsilon ladder: `eps T` against
//! `W_2^2 / (2t)` and the entropic semigroup against Hopf–Lax.

use eti_core::reference::transition_kernel;
use eti_core::sampling::{FieldRecipe, MeasureRecipe};
use eti_core::schrodinger::transport_cost;
use eti_core::semigroup::{hopf_lax, q_values};
use eti_core::transport::w2;
use eti_core::{EtiParams, InequalityReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SuiteName};
use crate::report::{Artifact, Row, SuiteOutcome};
use crate::suites::{setup, suite_rng};

/// Random `(mu, nu, phi)` instances per resolution.
pub const CONVERGE_DRAWS: usize = 3;

pub type Instance = (MeasureRecipe, MeasureRecipe, FieldRecipe);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderPoint {
    pub grid_n: usize,
    pub draw: usize,
    pub epsilon: f64,
    pub eps_cost: f64,
    pub w2_sq_over_2t: f64,
    /// `|eps T - W_2^2 / (2t)|`.
    pub gap: f64,
    /// `max |Q^eps phi - Q^0 phi|`.
    pub q_gap: f64,
}

/// Smallest value of a gap sequence and where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Floor {
    pub index: usize,
    pub value: f64,
    /// The minimum sits before the end of the ladder.
    pub reached: bool,
}

pub fn floor(values: &[f64]) -> Floor {
    let index = (0..values.len())
        .min_by(|a, b| values[*a].total_cmp(&values[*b]))
        .expect("nonempty ladder");
    Floor {
        index,
        value: values[index],
        reached: index + 1 < values.len(),
    }
}

/// `max_j (v_j - v_{j-1})` over `j <= upto`; negative iff the prefix is
/// strictly decreasing.
pub fn decrease_residual(values: &[f64], upto: usize) -> f64 {
    values[..=upto]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn instances(cfg: &RunConfig) -> eti_core::Result<Vec<Instance>> {
    let base = setup(cfg, cfg.grid_n, cfg.t)?;
    let mut rng = suite_rng(cfg, SuiteName::ConvergeW2);
    let space = base.m.space();
    Ok((0..CONVERGE_DRAWS)
        .map(|_| {
            (
                MeasureRecipe::draw(&mut rng, &base.m, 1.5),
                MeasureRecipe::draw(&mut rng, &base.m, 1.5),
                FieldRecipe::draw(&mut rng, space.dim(), true).normalized(space, 2.0),
            )
        })
        .collect())
}

/// Gap sequences of every instance at grid `n`, draw-major.
pub fn ladder(cfg: &RunConfig, n: usize, instances: &[Instance]) -> eti_core::Result<Vec<Vec<LadderPoint>>> {
    let base = setup(cfg, n, cfg.t)?;
    let kernels = cfg
        .epsilon_ladder
        .iter()
        .map(|e| transition_kernel(&base.gen.with_epsilon(*e)?, cfg.t))
        .collect::<eti_core::Result<Vec<_>>>()?;
    let space = base.m.space();
    instances
        .par_iter()
        .enumerate()
        .map(|(draw, (a, b, f))| {
            let mu = a.eval(&base.m)?;
            let nu = b.eval(&base.m)?;
            let w = w2(&mu, &nu)?;
            let w2_half = w * w / (2.0 * cfg.t);
            let phi = f.eval(space)?;
            let q0 = hopf_lax(space, &phi, cfg.t)?;
            cfg.epsilon_ladder
                .iter()
                .zip(&kernels)
                .map(|(&epsilon, k)| {
                    let eps_cost = epsilon * transport_cost(k, &mu, &nu)?;
                    let q = q_values(k, phi.values(), epsilon)?;
                    let q_gap = q.iter().zip(q0.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                    Ok(LadderPoint {
                        grid_n: n,
                        draw,
                        epsilon,
                        eps_cost,
                        w2_sq_over_2t: w2_half,
                        gap: (eps_cost - w2_half).abs(),
                        q_gap,
                    })
                })
                .collect()
        })
        .collect()
}

/// Monotonicity and refinement reports for one instance and one channel.
fn channel_rows(
    name: &str,
    p: EtiParams,
    coarse: &[f64],
    fine: &[f64],
    n: usize,
    ladder: &[f64],
) -> Vec<InequalityReport> {
    let mut rows = Vec::new();
    for (values, grid_n) in [(coarse, n), (fine, 2 * n)] {
        let f = floor(values);
        let residual = decrease_residual(values, f.index);
        rows.push(
            InequalityReport::new(&format!("{name}_monotone"), p, residual, 0.0, 0.0, grid_n)
                .with_extra("floor", f.value)
                .with_extra("floor_epsilon", ladder[f.index])
                .with_extra("floor_reached", f.reached as u8 as f64),
        );
    }
    let (fc, ff) = (floor(coarse), floor(fine));
    let refinement = format!("{name}_refinement");
    rows.push(if fc.reached {
        InequalityReport::new(&refinement, p, ff.value, fc.value, 0.0, n)
            .with_extra("floor_epsilon", ladder[fc.index])
            .with_extra("fine_floor_epsilon", ladder[ff.index])
    } else {
        InequalityReport::not_applicable(
            &refinement,
            p,
            0.0,
            n,
            format!("floor not reached on the ladder at grid {n}; smallest gap {:.6e} at its end", fc.value),
        )
    });
    rows
}

pub struct Convergence {
    pub points: Vec<LadderPoint>,
    pub reports: Vec<Vec<InequalityReport>>,
}

/// Both channels at `grid_n` and `2 grid_n`.
pub fn converge_w2(cfg: &RunConfig) -> eti_core::Result<Convergence> {
    let inst = instances(cfg)?;
    let n = cfg.grid_n;
    let coarse = ladder(cfg, n, &inst)?;
    let fine = ladder(cfg, 2 * n, &inst)?;
    let p = cfg.params();
    let reports = coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| {
            let pick = |s: &[LadderPoint], g: fn(&LadderPoint) -> f64| s.iter().map(g).collect::<Vec<_>>();
            let mut rows = channel_rows("converge_w2", p, &pick(c, |x| x.gap), &pick(f, |x| x.gap), n, &cfg.epsilon_ladder);
            rows.extend(channel_rows(
                "hopf_lax",
                p,
                &pick(c, |x| x.q_gap),
                &pick(f, |x| x.q_gap),
                n,
                &cfg.epsilon_ladder,
            ));
            rows
        })
        .collect();
    let points = coarse.into_iter().chain(fine).flatten().collect();
    Ok(Convergence { points, reports })
}

pub fn table_csv(points: &[LadderPoint]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Human-readable tables of both channels.
pub fn render_tables(points: &[LadderPoint]) -> String {
    let mut s = String::from("grid_n  draw  epsilon       eps_T         W2^2/(2t)     gap\n");
    for p in points {
        s.push_str(&format!(
            "{:<7} {:<5} {:<13.6e} {:<13.6e} {:<13.6e} {:.6e}\n",
            p.grid_n, p.draw, p.epsilon, p.eps_cost, p.w2_sq_over_2t, p.gap
        ));
    }
    s.push_str("\ngrid_n  draw  epsilon       max|Q^eps phi - Q^0 phi|\n");
    for p in points {
        s.push_str(&format!("{:<7} {:<5} {:<13.6e} {:.6e}\n", p.grid_n, p.draw, p.epsilon, p.q_gap));
    }
    s
}

pub fn converge_suite(cfg: &RunConfig, out: &mut SuiteOutcome) -> eti_core::Result<()> {
    let c = converge_w2(cfg)?;
    for (d, reps) in c.reports.into_iter().enumerate() {
        out.rows.extend(reps.into_iter().map(|r| Row::check(out.suite, Some(d), r)));
    }
    match table_csv(&c.points) {
        Ok(contents) => out.artifacts.push(Artifact {
            file: "converge_w2.csv".into(),
            contents,
        }),
        Err(e) => out.errors.push(format!("converge-w2 table: {e}")),
    }
    out.artifacts.push(Artifact {
        file: "converge_w2.txt".into(),
        contents: render_tables(&c.points),
    });
    Ok(())
}
