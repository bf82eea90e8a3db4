//! Scenario files, parameter sweeps, the property suite and on-disk artifacts.

mod io;
mod sweep;
mod verify;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eigen::{principal_eig_omega, EigenError};
use crate::fibering::Branch;
use crate::fields::{make_well_fields, CoefficientFields, FieldError, FieldSpec, ProblemData};
use crate::grid::{build_grid, Grid, GridError};
use crate::solver::SolverOptions;
use crate::thresholds::{AscentOptions, RegimeOptions};

pub use io::{read_field_csv, write_field_csv};
pub use sweep::{bifurcation_table, run_scenario, run_rows, write_bifurcation_csv, BifurcationPoint, BranchOutcome, SweepRow, SweepOutput};
pub use verify::{verify_suite, CheckResult, VerifyReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub extents: Vec<(f64, f64)>,
    pub points: Vec<usize>,
}

fn default_ramp() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsSection {
    pub omega_radius: f64,
    #[serde(default = "default_ramp")]
    pub ramp_power: f64,
    pub f: FieldSpec,
    pub q: FieldSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    /// Values are multiples of `λ₁(f_Ω)`.
    #[default]
    Relative,
    Absolute,
}

fn both_branches() -> Vec<Branch> {
    vec![Branch::Minus, Branch::Plus]
}

fn default_probe() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub a: Vec<f64>,
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub lambda_mode: LambdaMode,
    pub mu: Vec<f64>,
    pub p: Vec<f64>,
    #[serde(default = "both_branches")]
    pub branches: Vec<Branch>,
    /// Random functions tested for Nehari points in each row.
    #[serde(default = "default_probe")]
    pub nehari_probe: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    pub enabled: bool,
    pub restarts: usize,
    pub steps: usize,
    pub near_window: f64,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        let a = AscentOptions::default();
        ThresholdSection { enabled: true, restarts: a.restarts, steps: a.steps, near_window: RegimeOptions::default().near_window }
    }
}

impl ThresholdSection {
    pub fn ascent(&self, seed: u64) -> AscentOptions {
        AscentOptions { restarts: self.restarts, steps: self.steps, seed, ..AscentOptions::default() }
    }

    pub fn regime(&self) -> RegimeOptions {
        RegimeOptions { near_window: self.near_window }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub dump_solutions: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), dump_solutions: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Evaluates the Laplacian part of the gradient one node to the right.
    GradientStencil,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Per-check tolerance overrides keyed by check name.
    pub tolerances: BTreeMap<String, f64>,
    pub fault: Option<Fault>,
    pub samples: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { tolerances: BTreeMap::new(), fault: None, samples: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    pub fields: FieldsSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub thresholds: ThresholdSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub verify: VerifySection,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, ExperimentError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    /// Reads a scenario; a relative output directory is taken relative to the file.
    pub fn from_file(path: &Path) -> Result<Scenario, ExperimentError> {
        let mut s = Scenario::from_toml_str(&std::fs::read_to_string(path)?)?;
        if s.output.dir.is_relative() {
            if let Some(parent) = path.parent() {
                s.output.dir = parent.join(&s.output.dir);
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let sw = &self.sweep;
        for (name, list) in [("a", &sw.a), ("lambda", &sw.lambda), ("mu", &sw.mu), ("p", &sw.p)] {
            if list.is_empty() {
                return Err(ExperimentError::Config(format!("sweep.{name} is empty")));
            }
            if list.iter().any(|x| !x.is_finite()) {
                return Err(ExperimentError::Config(format!("sweep.{name} has a non-finite entry")));
            }
        }
        if sw.branches.is_empty() {
            return Err(ExperimentError::Config("sweep.branches is empty".into()));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, ExperimentError> {
        Ok(build_grid(self.grid.dim, &self.grid.extents, &self.grid.points)?)
    }

    pub fn build_fields(&self, grid: &Grid) -> Result<CoefficientFields, ExperimentError> {
        let f = &self.fields;
        Ok(make_well_fields(grid, f.omega_radius, f.ramp_power, &f.f, &f.q)?)
    }

    /// Grid, fields and `λ₁(f_Ω)`.
    pub fn setup(&self) -> Result<Setup, ExperimentError> {
        let grid = Arc::new(self.build_grid()?);
        let fields = Arc::new(self.build_fields(&grid)?);
        let lambda1 = principal_eig_omega(&fields, &grid)?.eigenvalue;
        Ok(Setup { grid, fields, lambda1 })
    }

    /// Absolute λ for a sweep entry.
    pub fn resolve_lambda(&self, value: f64, lambda1: f64) -> f64 {
        match self.sweep.lambda_mode {
            LambdaMode::Relative => value * lambda1,
            LambdaMode::Absolute => value,
        }
    }

    /// The problem at the first entry of every sweep axis.
    pub fn base_problem(&self, setup: &Setup) -> Result<ProblemData, ExperimentError> {
        let sw = &self.sweep;
        Ok(ProblemData::new(
            setup.grid.clone(),
            setup.fields.clone(),
            sw.a[0],
            sw.p[0],
            self.resolve_lambda(sw.lambda[0], setup.lambda1),
            sw.mu[0],
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub grid: Arc<Grid>,
    pub fields: Arc<CoefficientFields>,
    pub lambda1: f64,
}

/// SplitMix64 finalizer.
pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derived from the scenario seed and a row key only.
pub(crate) fn row_seed(seed: u64, key: &str) -> u64 {
    key.bytes().fold(splitmix(seed), |h, b| splitmix(h ^ b as u64))
}

#[cfg(test)]
pub(crate) const BASE_1D: &str = r#"
seed = 7

[grid]
dim = 1
extents = [[-2.0, 2.0]]
points = [401]

[fields]
omega_radius = 1.0
f = { kind = "constant", value = 1.0 }
q = { kind = "polynomial", coeffs = [1.0, 0.0, -2.0] }

[sweep]
a = [0.1]
lambda = [0.5]
mu = [1e4]
p = [5.0]
branches = ["minus"]
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_defaults() {
        let s = Scenario::from_toml_str(BASE_1D).unwrap();
        assert_eq!(s.sweep.lambda_mode, LambdaMode::Relative);
        assert_eq!(s.solver, SolverOptions::default());
        assert_eq!(s.thresholds.restarts, 32);
        assert_eq!(s.fields.ramp_power, 2.0);
        let setup = s.setup().unwrap();
        let base = s.base_problem(&setup).unwrap();
        assert!((base.lambda - 0.5 * setup.lambda1).abs() < 1e-15);
    }

    #[test]
    fn empty_axis_is_a_config_error() {
        let text = BASE_1D.replace("lambda = [0.5]", "lambda = []");
        assert!(matches!(Scenario::from_toml_str(&text), Err(ExperimentError::Config(_))));
        let text = BASE_1D.replace("p = [5.0]", "p = [5.0]\nbogus = 1");
        assert!(matches!(Scenario::from_toml_str(&text), Err(ExperimentError::Toml(_))));
    }

    #[test]
    fn row_seeds_depend_on_key_only() {
        assert_eq!(row_seed(1, "a0.1_l0.5"), row_seed(1, "a0.1_l0.5"));
        assert_ne!(row_seed(1, "a0.1_l0.5"), row_seed(2, "a0.1_l0.5"));
        assert_ne!(row_seed(1, "a0.1_l0.5"), row_seed(1, "a0.1_l0.6"));
    }
}
