//! Grid spaces, discrete probability measures, scalar fields and the entropy
//! functionals built on them.
//!
//! All reductions run in log domain. Weights at or below [`ZERO_WEIGHT`] are
//! treated as exact zeros whenever absolute continuity matters.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_sum_exp, log_sum_exp_iter};

/// Weights at or below this value count as zero mass.
pub const ZERO_WEIGHT: f64 = 1e-300;

/// Tolerance on the total mass of a measure.
pub const MASS_TOL: f64 = 1e-12;

/// A 1D grid or a product of 1D grids with constant spacing per axis.
///
/// Points are flattened in row-major order: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpace {
    axes: Vec<Vec<f64>>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl GridSpace {
    /// `n` equally spaced points covering `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Arc<Self>> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Parameter(format!("grid domain [{lo}, {hi}] is empty")));
        }
        if n < 2 {
            return Err(Error::Parameter(format!("grid needs at least 2 points, got {n}")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let axis = (0..n).map(|i| lo + i as f64 * h).collect();
        Self::from_axes(vec![axis])
    }

    /// Builds a grid from explicit axes, checking the spacing invariants.
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Arc<Self>> {
        if axes.is_empty() {
            return Err(Error::Parameter("grid needs at least one axis".into()));
        }
        let mut spacing = Vec::with_capacity(axes.len());
        for (a, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return Err(Error::Parameter(format!("axis {a} has fewer than 2 points")));
            }
            let h = axis[1] - axis[0];
            if !(h > 0.0) {
                return Err(Error::Parameter(format!("axis {a} is not strictly increasing")));
            }
            for w in axis.windows(2) {
                let d = w[1] - w[0];
                if !(d > 0.0) || ((d - h) / h).abs() > 1e-9 {
                    return Err(Error::Parameter(format!(
                        "axis {a} does not have constant spacing"
                    )));
                }
            }
            spacing.push(h);
        }
        let mut strides = vec![1; axes.len()];
        for a in (0..axes.len() - 1).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].len();
        }
        let len = axes.iter().map(Vec::len).product();
        Ok(Arc::new(Self {
            axes,
            spacing,
            strides,
            len,
        }))
    }

    /// Cartesian product `a × b`; the axes of `b` vary fastest.
    pub fn product(a: &GridSpace, b: &GridSpace) -> Arc<Self> {
        let mut axes = a.axes.clone();
        axes.extend(b.axes.iter().cloned());
        Self::from_axes(axes).expect("product of valid grids is valid")
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        &self.axes[a]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn axis_lengths(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    /// Index along axis `a` of flattened point `i`.
    pub fn axis_index(&self, i: usize, a: usize) -> usize {
        (i / self.strides[a]) % self.axes[a].len()
    }

    pub fn multi_index(&self, i: usize) -> Vec<usize> {
        (0..self.dim()).map(|a| self.axis_index(i, a)).collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Coordinates of flattened point `i`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.axes[a][self.axis_index(i, a)])
            .collect()
    }

    /// All points, flattened.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len).map(|i| self.point(i)).collect()
    }

    /// Squared Euclidean distance between point `i` here and point `j` of `other`.
    pub fn sq_dist(&self, i: usize, other: &GridSpace, j: usize) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        (0..self.dim())
            .map(|a| {
                let d = self.axes[a][self.axis_index(i, a)] - other.axes[a][other.axis_index(j, a)];
                d * d
            })
            .sum()
    }
}

fn same_space(a: &GridSpace, b: &GridSpace) -> bool {
    std::ptr::eq(a, b) || a == b
}

pub(crate) fn check_same_space(a: &GridSpace, b: &GridSpace, what: &str) -> Result<()> {
    if same_space(a, b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what}: spaces differ ({} vs {} points)",
            a.len(),
            b.len()
        )))
    }
}

/// Nonnegative weights summing to one on a [`GridSpace`].
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    space: Arc<GridSpace>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(space: Arc<GridSpace>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} grid points",
                weights.len(),
                space.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("weight {w} is not a finite nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        let log_weights = weights
            .iter()
            .map(|&w| if w > ZERO_WEIGHT { w.ln() } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self {
            space,
            weights,
            log_weights,
        })
    }

    /// Normalizes `exp(log_weights)`; `-inf` entries become zero mass.
    pub fn from_log_weights(space: Arc<GridSpace>, log_weights: &[f64]) -> Result<Self> {
        if log_weights.len() != space.len() {
            return Err(Error::Dimension(format!(
                "{} log-weights for {} grid points",
                log_weights.len(),
                space.len()
            )));
        }
        if log_weights.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::InvalidMeasure("log-weights contain NaN or +inf".into()));
        }
        let z = log_sum_exp(log_weights);
        if !z.is_finite() {
            return Err(Error::InvalidMeasure("all log-weights are -inf".into()));
        }
        let normalized: Vec<f64> = log_weights.iter().map(|x| x - z).collect();
        let weights: Vec<f64> = normalized.iter().map(|x| x.exp()).collect();
        // Renormalize the linear weights so the mass invariant holds to rounding.
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.into_iter().map(|w| w / total).collect();
        let log_weights = weights
            .iter()
            .zip(&normalized)
            .map(|(&w, &lw)| if w > ZERO_WEIGHT { lw - total.ln() } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self {
            space,
            weights,
            log_weights,
        })
    }

    /// Normalizes arbitrary nonnegative masses.
    pub fn from_masses(space: Arc<GridSpace>, masses: &[f64]) -> Result<Self> {
        if let Some(w) = masses.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("mass {w} is not a finite nonnegative number")));
        }
        let logs: Vec<f64> = masses.iter().map(|&w| if w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
        Self::from_log_weights(space, &logs)
    }

    pub fn uniform(space: Arc<GridSpace>) -> Self {
        let n = space.len();
        Self::new(space, vec![1.0 / n as f64; n]).expect("uniform measure is valid")
    }

    pub fn dirac(space: Arc<GridSpace>, at: usize) -> Result<Self> {
        let mut w = vec![0.0; space.len()];
        *w.get_mut(at)
            .ok_or_else(|| Error::Dimension(format!("dirac index {at} out of range")))? = 1.0;
        Self::new(space, w)
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn is_charged(&self, i: usize) -> bool {
        self.weights[i] > ZERO_WEIGHT
    }

    /// Indices carrying positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_charged(i)).collect()
    }

    /// `sum_i w_i f_i`.
    pub fn expect(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| if *w > 0.0 { w * x } else { 0.0 }).sum()
    }

    /// Mass of the points selected by `mask`.
    pub fn mass_of(&self, mask: &[bool]) -> f64 {
        self.weights
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(w, _)| w)
            .sum()
    }

    /// Log-mass of the points selected by `mask`, computed in log domain.
    pub fn log_mass_of(&self, mask: &[bool]) -> f64 {
        log_sum_exp_iter(
            self.log_weights
                .iter()
                .zip(mask)
                .map(|(&lw, &m)| if m { lw } else { f64::NEG_INFINITY }),
        )
    }

    /// Conditions the measure on `mask` (`1_B m / m(B)`).
    pub fn restrict(&self, mask: &[bool]) -> Result<Self> {
        let logs: Vec<f64> = self
            .log_weights
            .iter()
            .zip(mask)
            .map(|(&lw, &m)| if m { lw } else { f64::NEG_INFINITY })
            .collect();
        Self::from_log_weights(self.space.clone(), &logs)
    }

    /// Image under the projection onto `axis` of a product space.
    pub fn marginal(&self, axis: usize) -> Result<Self> {
        if axis >= self.space.dim() {
            return Err(Error::Dimension(format!("no axis {axis} in a {}-d space", self.space.dim())));
        }
        let axis_space = GridSpace::from_axes(vec![self.space.axis(axis).to_vec()])?;
        let mut w = vec![0.0; axis_space.len()];
        for (i, &x) in self.weights.iter().enumerate() {
            w[self.space.axis_index(i, axis)] += x;
        }
        Self::from_masses(axis_space, &w)
    }

    /// For a 2D product space, the conditional law of the second coordinate
    /// given first-coordinate index `i1`. `None` when the slice carries no mass.
    pub fn conditional_second(&self, i1: usize, second: &Arc<GridSpace>) -> Option<Self> {
        let n2 = self.space.axis(1).len();
        let logs = &self.log_weights[i1 * n2..(i1 + 1) * n2];
        Self::from_log_weights(second.clone(), logs).ok()
    }

    pub fn to_json(&self) -> MeasureJson {
        MeasureJson {
            axes: self.space.axes().to_vec(),
            weights: self.weights.clone(),
        }
    }

    pub fn from_json(json: &MeasureJson) -> Result<Self> {
        let space = GridSpace::from_axes(json.axes.clone())?;
        Self::new(space, json.weights.clone())
    }
}

/// Serialized form of a measure: `{ "axes": [[...]], "weights": [...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureJson {
    pub axes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Finite real values, one per grid point.
#[derive(Debug, Clone)]
pub struct ScalarField {
    space: Arc<GridSpace>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(space: Arc<GridSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} grid points",
                values.len(),
                space.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("scalar field has non-finite entries".into()));
        }
        Ok(Self { space, values })
    }

    pub fn from_fn(space: Arc<GridSpace>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..space.len()).map(|i| f(&space.point(i))).collect();
        Self::new(space, values)
    }

    pub fn constant(space: Arc<GridSpace>, c: f64) -> Result<Self> {
        let n = space.len();
        Self::new(space, vec![c; n])
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.space.clone(), self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|x| c * x)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `H(q | p) = sum q_i log(q_i / p_i)`, `+inf` when `q` is not absolutely
/// continuous with respect to `p`.
pub fn relative_entropy(q: &DiscreteMeasure, p: &DiscreteMeasure) -> Result<f64> {
    check_same_space(q.space(), p.space(), "relative_entropy")?;
    Ok(relative_entropy_logs(q.weights(), q.log_weights(), p.log_weights()))
}

/// Relative entropy from raw arrays. `q` need not be normalized; entries of
/// `q` at or below [`ZERO_WEIGHT`] contribute nothing.
pub(crate) fn relative_entropy_logs(q: &[f64], log_q: &[f64], log_p: &[f64]) -> f64 {
    let mut h = 0.0;
    for ((&w, &lq), &lp) in q.iter().zip(log_q).zip(log_p) {
        if w <= ZERO_WEIGHT {
            continue;
        }
        if lp == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        h += w * (lq - lp);
    }
    h.max(0.0)
}

/// `log ||f||_p` given `log f`, for any real `p` (including `p <= 0`).
pub fn log_p_norm(log_f: &[f64], p: f64, m: &DiscreteMeasure) -> Result<f64> {
    if log_f.len() != m.len() {
        return Err(Error::Dimension(format!("{} values for {} points", log_f.len(), m.len())));
    }
    if log_f.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("log f contains NaN".into()));
    }
    let charged = || log_f.iter().zip(m.log_weights()).filter(|(_, lw)| lw.is_finite());
    if p <= 0.0 && charged().any(|(lf, _)| *lf == f64::NEG_INFINITY) {
        return Err(Error::Domain(format!("p = {p} needs a strictly positive f")));
    }
    if p == 0.0 {
        let mean_log: f64 = log_f
            .iter()
            .zip(m.weights())
            .filter(|(_, &w)| w > ZERO_WEIGHT)
            .map(|(lf, w)| w * lf)
            .sum();
        return Ok(mean_log);
    }
    let lse = log_sum_exp_iter(charged().map(|(lf, lw)| p * lf + lw));
    Ok(lse / p)
}

/// `||f||_p = (sum m_i f_i^p)^(1/p)`; `p = 0` gives the geometric mean.
pub fn p_norm(f: &ScalarField, p: f64, m: &DiscreteMeasure) -> Result<f64> {
    check_same_space(f.space(), m.space(), "p_norm")?;
    let positive_needed = p <= 0.0;
    for (&v, &w) in f.values().iter().zip(m.weights()) {
        if w <= ZERO_WEIGHT {
            continue;
        }
        if v < 0.0 || (positive_needed && v <= 0.0) {
            return Err(Error::Domain(format!(
                "p_norm with p = {p} requires f {} 0, found {v}",
                if positive_needed { ">" } else { ">=" }
            )));
        }
    }
    let log_f: Vec<f64> = f.values().iter().map(|v| v.ln()).collect();
    Ok(log_p_norm(&log_f, p, m)?.exp())
}

/// `Ent_m(f) = sum m f log f - (sum m f) log(sum m f)` for `f > 0`.
pub fn ent_functional(f: &ScalarField, m: &DiscreteMeasure) -> Result<f64> {
    check_same_space(f.space(), m.space(), "ent_functional")?;
    if let Some(v) = f.values().iter().find(|v| **v <= 0.0) {
        return Err(Error::Domain(format!("Ent_m needs f > 0, found {v}")));
    }
    let log_f: Vec<f64> = f.values().iter().map(|v| v.ln()).collect();
    Ok(ent_of_exp(&log_f, m))
}

/// `Ent_m(e^g)`, evaluated as `Z * H(nu_g | m)` with `Z = sum m e^g` and
/// `nu_g = e^g m / Z`.
pub fn ent_of_exp(g: &[f64], m: &DiscreteMeasure) -> f64 {
    let log_z = log_sum_exp_iter(g.iter().zip(m.log_weights()).map(|(x, lw)| x + lw));
    let mut h = 0.0;
    for ((&x, &lw), &w) in g.iter().zip(m.log_weights()).zip(m.weights()) {
        if w <= ZERO_WEIGHT {
            continue;
        }
        let log_nu = x + lw - log_z;
        h += log_nu.exp() * (x - log_z);
    }
    log_z.exp() * h.max(0.0)
}

/// `a ⊗ b` on the product grid.
pub fn product_measure(a: &DiscreteMeasure, b: &DiscreteMeasure) -> DiscreteMeasure {
    let space = GridSpace::product(a.space(), b.space());
    let logs: Vec<f64> = a
        .log_weights()
        .iter()
        .flat_map(|la| b.log_weights().iter().map(move |lb| la + lb))
        .collect();
    DiscreteMeasure::from_log_weights(space, &logs).expect("product of probability measures")
}
