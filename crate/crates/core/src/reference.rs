//! Reversible reference dynamics on grids: potentials, nearest-neighbor
//! Langevin generators, transition kernels and their products.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{log_add_exp, log_sum_exp};
use crate::matrix::Matrix;
use crate::measures::{product_measure, DiscreteMeasure, GridSpace};

/// Potential `U` of the stationary density `exp(-2U)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `U(x) = lambda x^2 / 2`.
    Quadratic { lambda: f64 },
    /// `U(x) = a (x^2 - b^2)^2`.
    DoubleWell { a: f64, b: f64 },
    /// Values given point by point along one axis.
    Tabulated { values: Vec<f64> },
}

impl PotentialSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Quadratic { lambda } if !(lambda.is_finite() && *lambda > 0.0) => Err(
                Error::Parameter(format!("quadratic potential needs lambda > 0, got {lambda}")),
            ),
            Self::DoubleWell { a, b } if !(a.is_finite() && b.is_finite() && *a > 0.0) => Err(
                Error::Parameter(format!("double well needs a > 0 and finite b, got a={a}, b={b}")),
            ),
            Self::Tabulated { values } if values.iter().any(|v| !v.is_finite()) => Err(
                Error::DegeneratePotential("tabulated potential has non-finite values".into()),
            ),
            _ => Ok(()),
        }
    }

    /// The convexity constant `lambda_U` of a quadratic potential.
    pub fn quadratic_lambda(&self) -> Option<f64> {
        match self {
            Self::Quadratic { lambda } => Some(*lambda),
            _ => None,
        }
    }

    /// A symmetric domain holding all but a negligible fraction of the mass.
    pub fn default_domain(&self) -> Option<(f64, f64)> {
        match self {
            Self::Quadratic { lambda } => {
                let sigma = 1.0 / (2.0 * lambda).sqrt();
                Some((-5.0 * sigma, 5.0 * sigma))
            }
            Self::DoubleWell { a, b } => {
                let curvature = (8.0 * a * b * b).max(*a);
                let sigma = 1.0 / (2.0 * curvature).sqrt();
                let r = b.abs() + 5.0 * sigma;
                Some((-r, r))
            }
            Self::Tabulated { .. } => None,
        }
    }

    /// `U` at each point of a 1D axis.
    pub fn evaluate(&self, axis: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let values = match self {
            Self::Quadratic { lambda } => axis.iter().map(|x| 0.5 * lambda * x * x).collect(),
            Self::DoubleWell { a, b } => axis
                .iter()
                .map(|x| {
                    let d = x * x - b * b;
                    a * d * d
                })
                .collect(),
            Self::Tabulated { values } => {
                if values.len() != axis.len() {
                    return Err(Error::Dimension(format!(
                        "tabulated potential has {} values for an axis of {} points",
                        values.len(),
                        axis.len()
                    )));
                }
                values.clone()
            }
        };
        Ok(values)
    }

    /// Separable evaluation `U(x) = sum_a U(x_a)` on every grid point.
    pub fn evaluate_on(&self, grid: &GridSpace) -> Result<Vec<f64>> {
        let per_axis = (0..grid.dim())
            .map(|a| self.evaluate(grid.axis(a)))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..grid.len())
            .map(|i| (0..grid.dim()).map(|a| per_axis[a][grid.axis_index(i, a)]).sum())
            .collect())
    }
}

/// `m ∝ exp(-2U)` on `grid`, normalized in log domain.
pub fn stationary_measure(grid: &Arc<GridSpace>, potential: &PotentialSpec) -> Result<DiscreteMeasure> {
    let u = potential.evaluate_on(grid)?;
    stationary_from_values(grid, &u)
}

fn stationary_from_values(grid: &Arc<GridSpace>, u: &[f64]) -> Result<DiscreteMeasure> {
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegeneratePotential("potential is not finite on the grid".into()));
    }
    let logs: Vec<f64> = u.iter().map(|v| -2.0 * v).collect();
    let m = DiscreteMeasure::from_log_weights(grid.clone(), &logs)
        .map_err(|e| Error::DegeneratePotential(e.to_string()))?;
    if m.support().len() < 2 {
        return Err(Error::DegeneratePotential(
            "stationary weights underflow at all but one grid point".into(),
        ));
    }
    Ok(m)
}

/// Birth-death rates of the generator along one axis.
#[derive(Debug, Clone)]
pub struct AxisRates {
    space: Arc<GridSpace>,
    potential: Vec<f64>,
    /// `up[i]` is the rate from `i` to `i + 1`; the last entry is zero.
    up: Vec<f64>,
    /// `down[i]` is the rate from `i` to `i - 1`; the first entry is zero.
    down: Vec<f64>,
    stationary: DiscreteMeasure,
}

impl AxisRates {
    fn new(space: Arc<GridSpace>, potential: Vec<f64>, epsilon: f64) -> Result<Self> {
        let n = potential.len();
        let h = space.spacing()[0];
        let c = epsilon / (2.0 * h * h);
        let mut up = vec![0.0; n];
        let mut down = vec![0.0; n];
        for i in 0..n - 1 {
            up[i] = c * (-(potential[i + 1] - potential[i])).exp();
            down[i + 1] = c * (-(potential[i] - potential[i + 1])).exp();
        }
        if up.iter().chain(&down).any(|r| !r.is_finite()) {
            return Err(Error::DegeneratePotential(
                "neighbor potential differences overflow the rates".into(),
            ));
        }
        let stationary = stationary_from_values(&space, &potential)?;
        Ok(Self {
            space,
            potential,
            up,
            down,
            stationary,
        })
    }

    pub fn up(&self) -> &[f64] {
        &self.up
    }

    pub fn down(&self) -> &[f64] {
        &self.down
    }

    pub fn stationary(&self) -> &DiscreteMeasure {
        &self.stationary
    }

    fn exit_rate(&self, i: usize) -> f64 {
        self.up[i] + self.down[i]
    }
}

/// Nearest-neighbor reversible generator `L^eps` on a grid.
///
/// Along each axis, `L_{i,i±1} = eps / (2 h^2) exp(-(U_{i±1} - U_i))`; product
/// grids carry the Kronecker sum of the axis generators. Boundary points
/// simply lack the missing neighbor.
#[derive(Debug, Clone)]
pub struct Generator {
    space: Arc<GridSpace>,
    epsilon: f64,
    axes: Vec<AxisRates>,
    stationary: DiscreteMeasure,
}

/// Builds `L^eps` for a separable potential on `grid`.
pub fn build_generator(grid: &Arc<GridSpace>, potential: &PotentialSpec, epsilon: f64) -> Result<Generator> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut axes = Vec::with_capacity(grid.dim());
    for a in 0..grid.dim() {
        let axis_space = GridSpace::from_axes(vec![grid.axis(a).to_vec()])?;
        let u = potential.evaluate(grid.axis(a))?;
        axes.push(AxisRates::new(axis_space, u, epsilon)?);
    }
    Generator::from_axes(grid.clone(), epsilon, axes)
}

impl Generator {
    fn from_axes(space: Arc<GridSpace>, epsilon: f64, axes: Vec<AxisRates>) -> Result<Self> {
        let stationary = axes
            .iter()
            .skip(1)
            .fold(axes[0].stationary.clone(), |acc, a| product_measure(&acc, &a.stationary));
        // Re-home onto the caller's space so pointer comparisons succeed.
        let stationary = DiscreteMeasure::new(space.clone(), stationary.weights().to_vec())?;
        Ok(Self {
            space,
            epsilon,
            axes,
            stationary,
        })
    }

    /// `L_a ⊕ L_b` on the product grid.
    pub fn kronecker_sum(a: &Generator, b: &Generator) -> Result<Generator> {
        if a.epsilon != b.epsilon {
            return Err(Error::Parameter(format!(
                "kronecker sum of generators with epsilon {} and {}",
                a.epsilon, b.epsilon
            )));
        }
        let space = GridSpace::product(&a.space, &b.space);
        let axes = a.axes.iter().chain(&b.axes).cloned().collect();
        Self::from_axes(space, a.epsilon, axes)
    }

    /// The same potential and grid with noise level `epsilon`.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Generator> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
        }
        let axes = self
            .axes
            .iter()
            .map(|a| AxisRates::new(a.space.clone(), a.potential.clone(), epsilon))
            .collect::<Result<Vec<_>>>()?;
        Self::from_axes(self.space.clone(), epsilon, axes)
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        &self.space
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn stationary(&self) -> &DiscreteMeasure {
        &self.stationary
    }

    pub fn axes(&self) -> &[AxisRates] {
        &self.axes
    }

    /// The generator restricted to one axis, as a 1D generator.
    pub fn axis_generator(&self, a: usize) -> Generator {
        let rates = self.axes[a].clone();
        Self {
            space: rates.space.clone(),
            epsilon: self.epsilon,
            stationary: rates.stationary.clone(),
            axes: vec![rates],
        }
    }

    /// Potential values on the flattened grid.
    pub fn potential(&self) -> Vec<f64> {
        (0..self.space.len())
            .map(|i| {
                self.axes
                    .iter()
                    .enumerate()
                    .map(|(a, r)| r.potential[self.space.axis_index(i, a)])
                    .sum()
            })
            .collect()
    }

    /// Nonzero off-diagonal entries of row `i` as `(j, L_ij)`.
    pub fn neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.axes.len());
        for (a, r) in self.axes.iter().enumerate() {
            let k = self.space.axis_index(i, a);
            let stride = self.space.stride(a);
            if k > 0 {
                out.push((i - stride, r.down[k]));
            }
            if k + 1 < r.up.len() {
                out.push((i + stride, r.up[k]));
            }
        }
        out
    }

    /// `L_ij`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return -self.exit_rate(i);
        }
        self.neighbors(i)
            .into_iter()
            .find(|(k, _)| *k == j)
            .map_or(0.0, |(_, r)| r)
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.axes
            .iter()
            .enumerate()
            .map(|(a, r)| r.exit_rate(self.space.axis_index(i, a)))
            .sum()
    }

    /// Dense rate matrix. Intended for small grids and diagnostics.
    pub fn dense(&self) -> Matrix {
        let n = self.space.len();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for (j, r) in self.neighbors(i) {
                l[(i, j)] = r;
            }
            l[(i, i)] = -self.exit_rate(i);
        }
        l
    }

    /// `max |m_i L_ij - m_j L_ji|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let m = self.stationary.weights();
        let mut worst: f64 = 0.0;
        for i in 0..self.space.len() {
            for (j, r) in self.neighbors(i) {
                worst = worst.max((m[i] * r - m[j] * self.rate(j, i)).abs());
            }
        }
        worst
    }

    /// `max |sum_j L_ij|`.
    pub fn row_sum_residual(&self) -> f64 {
        (0..self.space.len())
            .map(|i| {
                let off: f64 = self.neighbors(i).iter().map(|(_, r)| r).sum();
                (off - self.exit_rate(i)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Eigenvalues of `-L`, ascending. The first is zero.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        let mut per_axis = Vec::with_capacity(self.axes.len());
        for a in 0..self.axes.len() {
            let (vals, _) = axis_eigen(&self.axis_generator(a))?;
            per_axis.push(vals);
        }
        let mut all = vec![0.0];
        for vals in per_axis {
            all = all.iter().flat_map(|x| vals.iter().map(move |v| x + v)).collect();
        }
        all.sort_by(f64::total_cmp);
        Ok(all)
    }

    /// Smallest nonzero eigenvalue of `-L`.
    pub fn spectral_gap(&self) -> Result<f64> {
        let mut gap = f64::INFINITY;
        for a in 0..self.axes.len() {
            let (vals, _) = axis_eigen(&self.axis_generator(a))?;
            gap = gap.min(vals[1]);
        }
        Ok(gap)
    }
}

/// Eigenpairs of `-D^{1/2} L D^{-1/2}` for a 1D generator, eigenvalues ascending.
fn axis_eigen(gen: &Generator) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let r = &gen.axes[0];
    let n = r.up.len();
    let sqrt_m: Vec<f64> = r.stationary.weights().iter().map(|w| w.sqrt()).collect();
    if sqrt_m.contains(&0.0) {
        return Err(Error::Numerical(
            "spectral route needs strictly positive stationary weights".into(),
        ));
    }
    let mut s = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = r.exit_rate(i);
        if i + 1 < n {
            // sqrt(L_{i,i+1} L_{i+1,i}) is the symmetric off-diagonal entry.
            let v = -(r.up[i] * r.down[i + 1]).sqrt();
            s[(i, i + 1)] = v;
            s[(i + 1, i)] = v;
        }
    }
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 10_000).ok_or_else(|| {
        Error::Numerical(format!("symmetric eigendecomposition of a {n}x{n} generator did not converge"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let vecs = DMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);
    Ok((vals, vecs))
}

/// Transition kernel `r_t^eps = exp(t L^eps)` stored as log-probabilities.
#[derive(Debug, Clone)]
pub struct ReferenceKernel {
    generator: Arc<Generator>,
    t: f64,
    log_k: Matrix,
}

impl ReferenceKernel {
    /// Wraps a precomputed log-kernel. Rows are renormalized in log domain.
    pub fn from_log_kernel(generator: Arc<Generator>, t: f64, mut log_k: Matrix) -> Result<Self> {
        let n = generator.space().len();
        if log_k.rows() != n || log_k.cols() != n {
            return Err(Error::Dimension(format!(
                "log-kernel is {}x{} for {n} grid points",
                log_k.rows(),
                log_k.cols()
            )));
        }
        normalize_rows(&mut log_k)?;
        Ok(Self { generator, t, log_k })
    }

    pub fn generator(&self) -> &Arc<Generator> {
        &self.generator
    }

    pub fn space(&self) -> &Arc<GridSpace> {
        self.generator.space()
    }

    pub fn stationary(&self) -> &DiscreteMeasure {
        self.generator.stationary()
    }

    pub fn epsilon(&self) -> f64 {
        self.generator.epsilon()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn len(&self) -> usize {
        self.log_k.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.log_k.rows() == 0
    }

    pub fn log_k(&self) -> &Matrix {
        &self.log_k
    }

    pub fn log_row(&self, i: usize) -> &[f64] {
        self.log_k.row(i)
    }

    /// `K` in linear scale.
    pub fn linear(&self) -> Matrix {
        self.log_k.map(f64::exp)
    }

    /// `max_i |sum_j K_ij - 1|`.
    pub fn row_sum_residual(&self) -> f64 {
        self.log_k
            .rows_iter()
            .map(|row| (row.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max_ij |m_i K_ij - m_j K_ji|`.
    pub fn reversibility_residual(&self) -> f64 {
        let m = self.stationary().weights();
        let n = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let a = m[i] * self.log_k[(i, j)].exp();
                let b = m[j] * self.log_k[(j, i)].exp();
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// `max_j |(mK)_j - m_j|`.
    pub fn stationarity_residual(&self) -> f64 {
        let m = self.stationary().weights();
        let n = self.len();
        (0..n)
            .map(|j| {
                let mk: f64 = (0..n).map(|i| m[i] * self.log_k[(i, j)].exp()).sum();
                (mk - m[j]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Writes `log K` as CSV with a header row of column indices.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.len();
        let header: Vec<String> = (0..n).map(|j| format!("j{j}")).collect();
        writeln!(w, "i,{}", header.join(","))?;
        for i in 0..n {
            let row: Vec<String> = self.log_k.row(i).iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{i},{}", row.join(","))?;
        }
        Ok(())
    }
}

fn normalize_rows(log_k: &mut Matrix) -> Result<()> {
    for i in 0..log_k.rows() {
        let row = log_k.row_mut(i);
        if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::Numerical(format!("log-kernel row {i} contains NaN or +inf")));
        }
        let z = log_sum_exp(row);
        if !z.is_finite() {
            return Err(Error::Numerical(format!("log-kernel row {i} carries no mass")));
        }
        row.iter_mut().for_each(|x| *x -= z);
    }
    Ok(())
}

/// `exp(t L)` for the generator, computed axis by axis.
///
/// Each 1D factor is built by uniformization: a Poisson-weighted series in
/// the nonnegative matrix `I + L/q` over a short time step, followed by
/// repeated squaring in log domain. Every entry therefore keeps relative
/// precision, including those far below the linear-domain underflow level.
/// The joint matrix `m_i K_ij` is then symmetrized to remove rounding
/// asymmetry.
pub fn transition_kernel(gen: &Generator, t: f64) -> Result<ReferenceKernel> {
    check_time(t)?;
    let mut factors = Vec::with_capacity(gen.axes.len());
    for a in 0..gen.axes.len() {
        let axis = Arc::new(gen.axis_generator(a));
        let log_k = birth_death_log_expm(&axis.axes[0], t)?;
        factors.push(ReferenceKernel::from_log_kernel(axis, t, log_k)?);
    }
    combine_factors(gen, factors)
}

/// `exp(t L)` through the eigendecomposition of the symmetrized generator.
///
/// Absolute accuracy is limited to about machine epsilon per entry, so tiny
/// kernel entries lose relative precision. Used as an independent
/// cross-check and for spectra.
pub fn transition_kernel_spectral(gen: &Generator, t: f64) -> Result<ReferenceKernel> {
    check_time(t)?;
    let mut factors = Vec::with_capacity(gen.axes.len());
    for a in 0..gen.axes.len() {
        let axis = Arc::new(gen.axis_generator(a));
        let (vals, vecs) = axis_eigen(&axis)?;
        let n = vals.len();
        let sqrt_m: Vec<f64> = axis.stationary.weights().iter().map(|w| w.sqrt()).collect();
        let decay = DMatrix::from_fn(n, n, |i, c| vecs[(i, c)] * (-t * vals[c]).exp());
        let sym = &decay * vecs.transpose();
        let mut log_k = Matrix::from_fn(n, n, |i, j| {
            let v = sym[(i, j)] * sqrt_m[j] / sqrt_m[i];
            if v > 0.0 {
                v.ln()
            } else {
                f64::NEG_INFINITY
            }
        });
        symmetrize(&mut log_k, axis.stationary.log_weights());
        factors.push(ReferenceKernel::from_log_kernel(axis, t, log_k)?);
    }
    combine_factors(gen, factors)
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("time horizon must be positive, got {t}")))
    }
}

fn combine_factors(gen: &Generator, factors: Vec<ReferenceKernel>) -> Result<ReferenceKernel> {
    let mut iter = factors.into_iter();
    let first = iter.next().expect("generator has at least one axis");
    let combined = iter.try_fold(first, |acc, k| product_kernel(&acc, &k))?;
    Ok(ReferenceKernel {
        generator: Arc::new(gen.clone()),
        t: combined.t,
        log_k: combined.log_k,
    })
}

/// Replaces `log(m_i K_ij)` by the log of its symmetric part.
fn symmetrize(log_k: &mut Matrix, log_m: &[f64]) {
    let n = log_k.rows();
    for i in 0..n {
        for j in i + 1..n {
            let a = log_m[i] + log_k[(i, j)];
            let b = log_m[j] + log_k[(j, i)];
            let s = log_add_exp(a, b) - std::f64::consts::LN_2;
            log_k[(i, j)] = s - log_m[i];
            log_k[(j, i)] = s - log_m[j];
        }
    }
}

fn birth_death_log_expm(rates: &AxisRates, t: f64) -> Result<Matrix> {
    let n = rates.up.len();
    let q = (0..n).map(|i| rates.exit_rate(i)).fold(0.0, f64::max);
    if q == 0.0 {
        return Ok(Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { f64::NEG_INFINITY }));
    }
    let mut squarings = 0u32;
    let mut tau = t;
    while q * tau > 0.5 {
        tau *= 0.5;
        squarings += 1;
        if squarings > 200 {
            return Err(Error::Numerical(format!("time step {t} too large for rate {q}")));
        }
    }
    let x = q * tau;
    // Nonnegative tridiagonal P = I + L/q, stored by diagonals.
    let diag: Vec<f64> = (0..n).map(|i| 1.0 - rates.exit_rate(i) / q).collect();
    let upper: Vec<f64> = rates.up.iter().map(|r| r / q).collect();
    let lower: Vec<f64> = rates.down.iter().map(|r| r / q).collect();

    // term_k = e^{-x} x^k / k! P^k, accumulated into `sum`.
    let mut coeff = (-x).exp();
    let mut term = Matrix::identity(n).map(|v| v * coeff);
    let mut sum = term.clone();
    let max_terms = n + 30;
    let mut next = Matrix::zeros(n, n);
    for k in 1..=max_terms {
        coeff *= x / k as f64;
        if coeff < 1e-305 {
            break;
        }
        let scale = x / k as f64;
        // next = scale * term * P (P acts on columns).
        for i in 0..n {
            let src = term.row(i);
            let dst = next.row_mut(i);
            for j in 0..n {
                let mut v = src[j] * diag[j];
                if j > 0 {
                    v += src[j - 1] * upper[j - 1];
                }
                if j + 1 < n {
                    v += src[j + 1] * lower[j + 1];
                }
                dst[j] = scale * v;
            }
        }
        std::mem::swap(&mut term, &mut next);
        for (s, v) in sum.as_mut_slice().iter_mut().zip(term.as_slice()) {
            *s += v;
        }
    }
    let mut log_k = sum.map(|v| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY });
    let log_m = rates.stationary.log_weights();
    for _ in 0..squarings {
        symmetrize(&mut log_k, log_m);
        normalize_rows(&mut log_k)?;
        log_k = log_k.log_matmul(&log_k);
    }
    symmetrize(&mut log_k, log_m);
    normalize_rows(&mut log_k)?;
    Ok(log_k)
}

/// Kernel of the product dynamics: `log K((x1,x2),(y1,y2)) = log K_a(x1,y1) + log K_b(x2,y2)`.
pub fn product_kernel(a: &ReferenceKernel, b: &ReferenceKernel) -> Result<ReferenceKernel> {
    if a.epsilon() != b.epsilon() || a.t() != b.t() {
        return Err(Error::Parameter(format!(
            "product of kernels with (eps, t) = ({}, {}) and ({}, {})",
            a.epsilon(),
            a.t(),
            b.epsilon(),
            b.t()
        )));
    }
    let generator = Arc::new(Generator::kronecker_sum(a.generator(), b.generator())?);
    let (na, nb) = (a.len(), b.len());
    let n = na * nb;
    let mut log_k = Matrix::zeros(n, n);
    for i1 in 0..na {
        for i2 in 0..nb {
            let row = log_k.row_mut(i1 * nb + i2);
            for j1 in 0..na {
                let la = a.log_k[(i1, j1)];
                for j2 in 0..nb {
                    row[j1 * nb + j2] = la + b.log_k[(i2, j2)];
                }
            }
        }
    }
    Ok(ReferenceKernel {
        generator,
        t: a.t,
        log_k,
    })
}

/// Gaussian transition law of the Ornstein-Uhlenbeck process sampled on a
/// 1D grid and row-normalized. Approximate: grid sampling breaks exact
/// reversibility.
pub fn ou_closed_form(grid: &Arc<GridSpace>, lambda_u: f64, epsilon: f64, t: f64) -> Result<ReferenceKernel> {
    if grid.dim() != 1 {
        return Err(Error::Dimension("closed-form kernel needs a 1D grid".into()));
    }
    if !(lambda_u.is_finite() && lambda_u > 0.0) {
        return Err(Error::Parameter(format!("lambda_U must be positive, got {lambda_u}")));
    }
    check_time(t)?;
    let gen = Arc::new(build_generator(grid, &PotentialSpec::Quadratic { lambda: lambda_u }, epsilon)?);
    let decay = (-epsilon * lambda_u * t).exp();
    let var = -(-2.0 * epsilon * lambda_u * t).exp_m1() / (2.0 * lambda_u);
    let xs = grid.axis(0);
    let n = xs.len();
    let log_k = Matrix::from_fn(n, n, |i, j| {
        let d = xs[j] - xs[i] * decay;
        -d * d / (2.0 * var)
    });
    ReferenceKernel::from_log_kernel(gen, t, log_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_grid(n: usize) -> Arc<GridSpace> {
        let (lo, hi) = PotentialSpec::Quadratic { lambda: 1.0 }.default_domain().unwrap();
        GridSpace::uniform(lo, hi, n).unwrap()
    }

    #[test]
    fn potential_json_forms() {
        let q: PotentialSpec = serde_json::from_str(r#"{"family":"quadratic","lambda":1.0}"#).unwrap();
        assert_eq!(q, PotentialSpec::Quadratic { lambda: 1.0 });
        let t: PotentialSpec = serde_json::from_str(r#"{"family":"tabulated","values":[0,1]}"#).unwrap();
        assert_eq!(t, PotentialSpec::Tabulated { values: vec![0.0, 1.0] });
        let d: PotentialSpec = serde_json::from_str(r#"{"family":"double_well","a":1,"b":1}"#).unwrap();
        assert!(d.validate().is_ok());
        assert!(PotentialSpec::Quadratic { lambda: 0.0 }.validate().is_err());
    }

    #[test]
    fn stationary_examples() {
        let g = GridSpace::uniform(-1.0, 1.0, 5).unwrap();
        let flat = stationary_measure(&g, &PotentialSpec::Tabulated { values: vec![0.0; 5] }).unwrap();
        assert!(flat.weights().iter().all(|w| (w - 0.2).abs() < 1e-15));
        let shifted = stationary_measure(&g, &PotentialSpec::Tabulated { values: vec![3.0; 5] }).unwrap();
        assert_eq!(flat.weights(), shifted.weights());
        let gauss = stationary_measure(&g, &PotentialSpec::Quadratic { lambda: 2.0 }).unwrap();
        let z: f64 = g.axis(0).iter().map(|x| (-2.0 * x * x).exp()).sum();
        for (w, x) in gauss.weights().iter().zip(g.axis(0)) {
            assert!((w - (-2.0 * x * x).exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_potential_is_rejected() {
        let g = GridSpace::uniform(-1.0, 1.0, 3).unwrap();
        let err = stationary_measure(&g, &PotentialSpec::Tabulated { values: vec![0.0, 1e6, 1e6] });
        assert!(matches!(err, Err(Error::DegeneratePotential(_))));
    }

    #[test]
    fn flat_potential_gives_symmetric_walk() {
        let g = GridSpace::uniform(0.0, 4.0, 5).unwrap();
        let gen = build_generator(&g, &PotentialSpec::Tabulated { values: vec![0.0; 5] }, 0.7).unwrap();
        assert_eq!(gen.rate(2, 3), 0.35);
        assert_eq!(gen.rate(2, 1), 0.35);
        assert_eq!(gen.rate(0, 1), 0.35);
        assert_eq!(gen.rate(0, 2), 0.0);
        assert!((gen.rate(0, 0) + 0.35).abs() < 1e-15);
        assert!(build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, 0.0).is_err());
    }

    #[test]
    fn generator_balance_and_row_sums() {
        let g = gaussian_grid(40);
        let gen = build_generator(&g, &PotentialSpec::DoubleWell { a: 0.5, b: 1.0 }, 0.3).unwrap();
        assert!(gen.detailed_balance_residual() < 1e-12);
        // Rates reach ~1e6 at the edges of this grid; compare relative to them.
        let scale = (0..40).map(|i| gen.exit_rate(i)).fold(0.0, f64::max);
        assert!(gen.row_sum_residual() <= 4.0 * f64::EPSILON * scale);
        let dense = gen.dense();
        for row in dense.rows_iter() {
            assert!(row.iter().sum::<f64>().abs() <= 4.0 * f64::EPSILON * scale);
        }
    }

    #[test]
    fn kernel_invariants() {
        let g = gaussian_grid(48);
        let gen = build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, 1.0).unwrap();
        let k = transition_kernel(&gen, 1.0).unwrap();
        assert!(k.row_sum_residual() < 1e-12);
        assert!(k.reversibility_residual() < 1e-14);
        assert!(k.stationarity_residual() < 1e-12);
        assert!(k.linear().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn kernel_matches_spectral_route() {
        let g = gaussian_grid(40);
        let gen = build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, 0.8).unwrap();
        for t in [0.05, 0.7, 3.0] {
            let a = transition_kernel(&gen, t).unwrap().linear();
            let b = transition_kernel_spectral(&gen, t).unwrap().linear();
            assert!(a.max_abs_diff(&b) < 1e-12, "t = {t}: {}", a.max_abs_diff(&b));
        }
    }

    #[test]
    fn short_time_kernel_is_identity() {
        let g = gaussian_grid(64);
        let gen = build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, 1.0).unwrap();
        let k = transition_kernel(&gen, 1e-8).unwrap().linear();
        let mut off = 0.0_f64;
        for i in 0..64 {
            assert!((k[(i, i)] - 1.0).abs() < 1e-5);
            for j in 0..64 {
                if i != j {
                    off = off.max(k[(i, j)]);
                }
            }
        }
        assert!(off < 1e-6);
    }

    #[test]
    fn long_time_rows_approach_stationary() {
        let g = gaussian_grid(32);
        let gen = build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, 1.0).unwrap();
        let k = transition_kernel(&gen, 60.0).unwrap().linear();
        let m = gen.stationary().weights();
        for i in 0..32 {
            for j in 0..32 {
                assert!((k[(i, j)] - m[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn product_of_identities_and_balance() {
        let a = GridSpace::uniform(-2.0, 2.0, 9).unwrap();
        let b = GridSpace::uniform(-1.0, 1.0, 7).unwrap();
        let pot = PotentialSpec::Quadratic { lambda: 1.0 };
        let ka = transition_kernel(&build_generator(&a, &pot, 1.0).unwrap(), 0.4).unwrap();
        let kb = transition_kernel(&build_generator(&b, &pot, 1.0).unwrap(), 0.4).unwrap();
        let kab = product_kernel(&ka, &kb).unwrap();
        assert!(kab.row_sum_residual() < 1e-12);
        assert!(kab.reversibility_residual() < 1e-14);
        let prod = product_measure(ka.stationary(), kb.stationary());
        for (x, y) in kab.stationary().weights().iter().zip(prod.weights()) {
            assert!((x - y).abs() < 1e-16);
        }
        let kc = transition_kernel(&build_generator(&b, &pot, 1.0).unwrap(), 0.5).unwrap();
        assert!(product_kernel(&ka, &kc).is_err());

        let ia = transition_kernel(&build_generator(&a, &pot, 1.0).unwrap(), 1e-12).unwrap();
        let ib = transition_kernel(&build_generator(&b, &pot, 1.0).unwrap(), 1e-12).unwrap();
        let iab = product_kernel(&ia, &ib).unwrap().linear();
        assert!(iab.max_abs_diff(&Matrix::identity(63)) < 1e-9);
    }

    #[test]
    fn direct_product_grid_kernel_matches_product() {
        let a = GridSpace::uniform(-2.0, 2.0, 6).unwrap();
        let b = GridSpace::uniform(-1.5, 1.5, 5).unwrap();
        let ab = GridSpace::product(&a, &b);
        let pot = PotentialSpec::Quadratic { lambda: 1.3 };
        let direct = transition_kernel(&build_generator(&ab, &pot, 0.6).unwrap(), 0.9).unwrap();
        // Dense exponential of the Kronecker-sum generator via its spectrum.
        let gen = build_generator(&ab, &pot, 0.6).unwrap();
        let l = gen.dense();
        let n = l.rows();
        let m = gen.stationary().weights();
        let s = DMatrix::from_fn(n, n, |i, j| -l[(i, j)] * m[i].sqrt() / m[j].sqrt());
        let s = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::new(s);
        let mut e = eig.eigenvectors.clone();
        for c in 0..n {
            let f = (-0.9 * eig.eigenvalues[c]).exp();
            for r in 0..n {
                e[(r, c)] *= f;
            }
        }
        let ks = &e * eig.eigenvectors.transpose();
        let lin = direct.linear();
        for i in 0..n {
            for j in 0..n {
                let v = ks[(i, j)] * m[j].sqrt() / m[i].sqrt();
                assert!((lin[(i, j)] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_starts_at_zero() {
        let g = gaussian_grid(30);
        let gen = build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, 1.0).unwrap();
        let spec = gen.spectrum().unwrap();
        assert!(spec[0].abs() < 1e-10);
        let gap = gen.spectral_gap().unwrap();
        assert!((gap - spec[1]).abs() < 1e-12);
        // Close to eps * lambda_U for the continuum Ornstein-Uhlenbeck generator.
        assert!((gap - 1.0).abs() < 0.05, "gap {gap}");
    }

    #[test]
    fn ou_closed_form_moments() {
        let g = GridSpace::uniform(-8.0, 8.0, 801).unwrap();
        let k = ou_closed_form(&g, 1.0, 1.0, 2.0_f64.ln()).unwrap();
        let xs = g.axis(0);
        let i = 500;
        let row = k.linear();
        let mean: f64 = (0..801).map(|j| row[(i, j)] * xs[j]).sum();
        let var: f64 = (0..801).map(|j| row[(i, j)] * (xs[j] - mean).powi(2)).sum();
        assert!((mean - xs[i] / 2.0).abs() < 1e-9);
        assert!((var - 0.375).abs() < 1e-6);
    }

    #[test]
    fn kernel_csv_dump() {
        let g = GridSpace::uniform(-1.0, 1.0, 3).unwrap();
        let gen = build_generator(&g, &PotentialSpec::Quadratic { lambda: 1.0 }, 1.0).unwrap();
        let k = transition_kernel(&gen, 1.0).unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("i,j0,j1,j2"));
    }
}
