//! Seeded random draws of measures, test functions and sets on a grid.
//!
//! Every sampler takes the generator by reference, so a fixed seed gives a
//! fixed sequence of draws.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp_iter;
use crate::measures::{DiscreteMeasure, GridSpace, ScalarField};

/// Number of Fourier modes per axis in [`smooth_field`].
pub const FOURIER_MODES: usize = 6;

/// Position of each point rescaled to `[0, 1]` per axis.
fn unit_coords(space: &GridSpace, i: usize) -> Vec<f64> {
    (0..space.dim())
        .map(|a| {
            let axis = space.axis(a);
            let (lo, hi) = (axis[0], axis[axis.len() - 1]);
            if hi > lo {
                (axis[space.axis_index(i, a)] - lo) / (hi - lo)
            } else {
                0.5
            }
        })
        .collect()
}

/// One cosine term `coef * cos(pi <freq, x> + phase)` in unit coordinates.
#[derive(Debug, Clone, PartialEq)]
struct Term {
    freq: Vec<f64>,
    coef: f64,
    phase: f64,
}

/// A random trigonometric polynomial in unit coordinates, so the same draw
/// can be evaluated on grids of any resolution over the same domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRecipe {
    terms: Vec<Term>,
    scale: f64,
}

impl FieldRecipe {
    /// `sum_a sum_k c_k cos(pi k x_a + phase) / k` with standard normal `c_k`.
    /// With `coupled`, extra terms in `x_1 + x_2` make the field
    /// non-separable on 2D grids.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, dim: usize, coupled: bool) -> Self {
        let mut terms = Vec::new();
        for a in 0..dim {
            for k in 1..=FOURIER_MODES {
                let mut freq = vec![0.0; dim];
                freq[a] = k as f64;
                let coef = normal(rng) / k as f64;
                terms.push(Term { freq, coef, phase: rng.random_range(0.0..2.0 * PI) });
            }
        }
        if coupled && dim >= 2 {
            for k in 1..=3 {
                let coef = 1.5 * normal(rng) / k as f64;
                terms.push(Term { freq: vec![k as f64; dim], coef, phase: rng.random_range(0.0..2.0 * PI) });
            }
        }
        Self { terms, scale: 1.0 }
    }

    fn eval_at(&self, x: &[f64]) -> f64 {
        self.scale
            * self
                .terms
                .iter()
                .map(|t| {
                    let arg: f64 = t.freq.iter().zip(x).map(|(f, xa)| f * xa).sum();
                    t.coef * (PI * arg + t.phase).cos()
                })
                .sum::<f64>()
    }

    pub fn values(&self, space: &GridSpace) -> Vec<f64> {
        (0..space.len()).map(|i| self.eval_at(&unit_coords(space, i))).collect()
    }

    /// Rescales so the sup norm on `space` equals `amplitude`.
    pub fn normalized(mut self, space: &GridSpace, amplitude: f64) -> Self {
        self.scale = 1.0;
        let sup = self.values(space).iter().fold(0.0_f64, |s, v| s.max(v.abs()));
        self.scale = if sup > 0.0 { amplitude / sup } else { 0.0 };
        self
    }

    pub fn eval(&self, space: &Arc<GridSpace>) -> Result<ScalarField> {
        ScalarField::new(space.clone(), self.values(space))
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Random smooth field of sup norm `amplitude` on `space`.
pub fn smooth_field<R: Rng + ?Sized>(
    rng: &mut R,
    space: &Arc<GridSpace>,
    amplitude: f64,
    coupled: bool,
) -> Result<ScalarField> {
    FieldRecipe::draw(rng, space.dim(), coupled).normalized(space, amplitude).eval(space)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bump {
    centre: Vec<f64>,
    width: f64,
    log_weight: f64,
}

/// A random probability measure, reproducible on any grid over the domain.
#[derive(Debug, Clone, PartialEq)]
pub enum MeasureRecipe {
    /// `mu ∝ m e^g`.
    Tilt(FieldRecipe),
    /// Mixture of Gaussian bumps, independent of `m`.
    Bumps(Vec<Bump>),
}

impl MeasureRecipe {
    /// A tilt with sup norm `amplitude` on the grid of `m`.
    pub fn tilt<R: Rng + ?Sized>(rng: &mut R, m: &DiscreteMeasure, amplitude: f64, coupled: bool) -> Self {
        let space = m.space();
        Self::Tilt(FieldRecipe::draw(rng, space.dim(), coupled).normalized(space, amplitude))
    }

    /// One to three bumps centred in the middle half of each axis, with
    /// widths between 5% and 20% of the axis length.
    pub fn bumps<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        let count = rng.random_range(1..=3);
        Self::Bumps(
            (0..count)
                .map(|_| Bump {
                    centre: (0..dim).map(|_| rng.random_range(0.25..0.75)).collect(),
                    width: rng.random_range(0.05..0.2),
                    log_weight: rng.random_range(0.2..1.0_f64).ln(),
                })
                .collect(),
        )
    }

    /// A tilt or a bump mixture, each with probability one half.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, m: &DiscreteMeasure, amplitude: f64) -> Self {
        if rng.random_bool(0.5) {
            Self::tilt(rng, m, amplitude, true)
        } else {
            Self::bumps(rng, m.space().dim())
        }
    }

    pub fn is_tilt(&self) -> bool {
        matches!(self, Self::Tilt(_))
    }

    /// The measure on the grid of `m`.
    pub fn eval(&self, m: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        let space = m.space();
        match self {
            Self::Tilt(f) => tilt(m, &f.values(space)),
            Self::Bumps(bumps) => {
                let logs: Vec<f64> = (0..space.len())
                    .map(|i| {
                        let x = unit_coords(space, i);
                        log_sum_exp_iter(bumps.iter().map(|b| {
                            let d2: f64 = b.centre.iter().zip(&x).map(|(c, xa)| (c - xa) * (c - xa)).sum();
                            b.log_weight - d2 / (2.0 * b.width * b.width)
                        }))
                    })
                    .collect();
                DiscreteMeasure::from_log_weights(space.clone(), &logs)
            }
        }
    }
}

/// `mu ∝ m e^g` for a random smooth `g` of sup norm `amplitude`.
pub fn random_tilt<R: Rng + ?Sized>(rng: &mut R, m: &DiscreteMeasure, amplitude: f64, coupled: bool) -> Result<DiscreteMeasure> {
    MeasureRecipe::tilt(rng, m, amplitude, coupled).eval(m)
}

/// `mu ∝ m e^g`.
pub fn tilt(m: &DiscreteMeasure, g: &[f64]) -> Result<DiscreteMeasure> {
    let logs: Vec<f64> = m.log_weights().iter().zip(g).map(|(lw, v)| lw + v).collect();
    DiscreteMeasure::from_log_weights(m.space().clone(), &logs)
}

/// A tilt of `m` or a bump mixture, each with probability one half.
pub fn random_measure<R: Rng + ?Sized>(rng: &mut R, m: &DiscreteMeasure, amplitude: f64) -> Result<DiscreteMeasure> {
    MeasureRecipe::draw(rng, m, amplitude).eval(m)
}

/// Nonnegative smooth field with minimum zero.
pub fn random_nonneg_field<R: Rng + ?Sized>(rng: &mut R, space: &Arc<GridSpace>, amplitude: f64) -> Result<ScalarField> {
    let g = smooth_field(rng, space, amplitude, true)?;
    let lo = g.min();
    g.map(|v| v - lo)
}

/// A random subset, reproducible on any grid over the domain.
#[derive(Debug, Clone, PartialEq)]
pub enum SetRecipe {
    /// `{g <= level}`; may be disconnected.
    Sublevel { field: FieldRecipe, level: f64 },
    /// `{x_0 <= c}` or `{x_0 >= c}` in unit coordinates.
    HalfLine { cut: f64, left: bool },
}

impl SetRecipe {
    /// Sublevel set of a random smooth field at a random quantile in
    /// `[0.2, 0.8]` of its values on `space`.
    pub fn sublevel<R: Rng + ?Sized>(rng: &mut R, space: &GridSpace) -> Self {
        let field = FieldRecipe::draw(rng, space.dim(), true).normalized(space, 1.0);
        let mut sorted = field.values(space);
        sorted.sort_by(f64::total_cmp);
        let q = rng.random_range(0.2..0.8);
        let level = sorted[((sorted.len() - 1) as f64 * q) as usize];
        Self::Sublevel { field, level }
    }

    /// Half-line with the cut in the middle half of the first axis.
    pub fn half_line<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::HalfLine {
            cut: rng.random_range(0.25..0.75),
            left: rng.random_bool(0.5),
        }
    }

    pub fn eval(&self, space: &GridSpace) -> Vec<bool> {
        match self {
            Self::Sublevel { field, level } => field.values(space).iter().map(|v| v <= level).collect(),
            Self::HalfLine { cut, left } => (0..space.len())
                .map(|i| {
                    let x = unit_coords(space, i)[0];
                    if *left {
                        x <= *cut
                    } else {
                        x >= *cut
                    }
                })
                .collect(),
        }
    }
}

/// Sublevel set of a random smooth field; see [`SetRecipe::sublevel`].
pub fn random_sublevel_set<R: Rng + ?Sized>(rng: &mut R, space: &Arc<GridSpace>) -> Result<Vec<bool>> {
    if space.is_empty() {
        return Err(Error::Dimension("empty grid".into()));
    }
    Ok(SetRecipe::sublevel(rng, space).eval(space))
}

/// Half-line `{x_0 <= c}` (or `{x_0 >= c}`); see [`SetRecipe::half_line`].
pub fn random_half_line<R: Rng + ?Sized>(rng: &mut R, space: &Arc<GridSpace>) -> Result<Vec<bool>> {
    if space.is_empty() {
        return Err(Error::Dimension("empty grid".into()));
    }
    Ok(SetRecipe::half_line(rng).eval(space))
}
