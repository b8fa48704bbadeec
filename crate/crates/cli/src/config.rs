//! Run configuration: JSON file, defaults and command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use eti_core::inequalities::lsi_reference_constant;
use eti_core::{EtiParams, PotentialSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Largest per-factor grid on two-factor product spaces.
pub const MAX_FACTOR_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteName {
    Eti,
    ReverseHc,
    HjbDual,
    Domination,
    ConvergeW2,
    Tensorize,
    Concentration,
    InfconvLsi,
    Poincare,
}

impl SuiteName {
    pub const ALL: [SuiteName; 9] = [
        Self::Eti,
        Self::ReverseHc,
        Self::HjbDual,
        Self::Domination,
        Self::ConvergeW2,
        Self::Tensorize,
        Self::Concentration,
        Self::InfconvLsi,
        Self::Poincare,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Eti => "eti",
            Self::ReverseHc => "reverse-hc",
            Self::HjbDual => "hjb-dual",
            Self::Domination => "domination",
            Self::ConvergeW2 => "converge-w2",
            Self::Tensorize => "tensorize",
            Self::Concentration => "concentration",
            Self::InfconvLsi => "infconv-lsi",
            Self::Poincare => "poincare",
        }
    }

    /// Stream index for the suite's random generator.
    pub fn stream(&self) -> u64 {
        Self::ALL.iter().position(|s| s == self).unwrap() as u64 + 1
    }
}

impl fmt::Display for SuiteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    pub grid_n: usize,
    /// `[lo, hi]`; defaults to the potential's own domain.
    pub domain: Option<[f64; 2]>,
    pub epsilon: f64,
    pub t: f64,
    pub s: f64,
    /// Defaults to `2 lambda_U` for quadratic potentials.
    pub lambda: Option<f64>,
    pub seed: u64,
    /// Floor of every report tolerance.
    pub tol: f64,
    pub suites: Vec<SuiteName>,
    pub out_dir: PathBuf,
    /// Random instances per checker.
    pub draws: usize,
    pub epsilon_ladder: Vec<f64>,
    /// Per-factor grid of the two-factor suites.
    pub tensor_grid_n: usize,
    /// Draws on two-factor product grids, where each solve is costly.
    pub product_draws: usize,
    /// Draws rerun at double resolution to size the grid tolerance.
    pub refinement_draws: usize,
    /// Include potentials and coupling matrices in solver dumps.
    pub full_output: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            potential: PotentialSpec::Quadratic { lambda: 1.0 },
            grid_n: 128,
            domain: None,
            epsilon: 1.0,
            t: 1.0,
            s: 0.5,
            lambda: None,
            seed: 20_240_601,
            tol: 1e-8,
            suites: SuiteName::ALL.to_vec(),
            out_dir: PathBuf::from("eti-out"),
            draws: 100,
            epsilon_ladder: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            tensor_grid_n: 32,
            product_draws: 20,
            refinement_draws: 3,
            full_output: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub t: Option<f64>,
    pub s: Option<f64>,
    pub lambda: Option<f64>,
    pub grid_n: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub full_output: bool,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = o.t {
            self.t = v;
        }
        if let Some(v) = o.s {
            self.s = v;
        }
        if let Some(v) = o.lambda {
            self.lambda = Some(v);
        }
        if let Some(v) = o.grid_n {
            self.grid_n = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.tol {
            self.tol = v;
        }
        if let Some(v) = &o.out {
            self.out_dir = v.clone();
        }
        if o.full_output {
            self.full_output = true;
        }
    }

    /// Validates and fills in the domain and `lambda` defaults.
    pub fn resolve(mut self) -> Result<Self> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.potential.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.grid_n < 8 {
            return bad(format!("grid_n must be at least 8, got {}", self.grid_n));
        }
        if let PotentialSpec::Tabulated { values } = &self.potential {
            if values.len() != self.grid_n {
                return bad(format!(
                    "tabulated potential has {} values but grid_n is {}",
                    values.len(),
                    self.grid_n
                ));
            }
        }
        let domain = match (self.domain, self.potential.default_domain()) {
            (Some(d), _) => d,
            (None, Some((lo, hi))) => [lo, hi],
            (None, None) => return bad("domain is required for this potential".into()),
        };
        if !(domain[0].is_finite() && domain[1].is_finite() && domain[0] < domain[1]) {
            return bad(format!("domain needs lo < hi, got {domain:?}"));
        }
        self.domain = Some(domain);
        let lambda = match self.lambda {
            Some(l) => l,
            None => lsi_reference_constant(&self.potential)
                .map_err(|_| CliError::Config("lambda is required for non-quadratic potentials".into()))?,
        };
        self.lambda = Some(lambda);
        EtiParams::new(lambda, self.epsilon, self.s, self.t).map_err(|e| CliError::Config(e.to_string()))?;
        if !(self.s > 0.0) {
            return bad(format!("s must lie in (0, t), got {}", self.s));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return bad(format!("tol must be nonnegative, got {}", self.tol));
        }
        if self.draws == 0 || self.product_draws == 0 {
            return bad("draws and product_draws must be positive".into());
        }
        if self.suites.is_empty() {
            return bad("no suites selected".into());
        }
        if self.epsilon_ladder.len() < 2 || self.epsilon_ladder.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return bad("epsilon_ladder needs at least two positive values".into());
        }
        if self.epsilon_ladder.windows(2).any(|w| w[1] >= w[0]) {
            return bad("epsilon_ladder must be strictly decreasing".into());
        }
        if !(4..=MAX_FACTOR_GRID).contains(&self.tensor_grid_n) {
            return bad(format!(
                "tensor_grid_n must lie in [4, {MAX_FACTOR_GRID}], got {}",
                self.tensor_grid_n
            ));
        }
        Ok(self)
    }

    pub fn domain_bounds(&self) -> (f64, f64) {
        let d = self.domain.expect("resolved config");
        (d[0], d[1])
    }

    pub fn lambda_value(&self) -> f64 {
        self.lambda.expect("resolved config")
    }

    pub fn params(&self) -> EtiParams {
        EtiParams {
            lambda: self.lambda_value(),
            epsilon: self.epsilon,
            s: self.s,
            t: self.t,
        }
    }

    /// The proven constant for this potential, when known.
    pub fn reference_lambda(&self) -> Option<f64> {
        lsi_reference_constant(&self.potential).ok()
    }

    /// `lambda` above the proven constant: every lambda-dependent row is a
    /// negative control.
    pub fn control_mode(&self) -> bool {
        self.reference_lambda()
            .is_some_and(|r| self.lambda_value() > r * (1.0 + 1e-12))
    }
}
