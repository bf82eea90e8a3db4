//! Coefficient fields `V`, `f`, `Q` of the steep-well problem and the full
//! problem instance.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError, GridFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("omega radius {radius} must be positive and strictly inside the box")]
    OmegaRadius { radius: f64 },
    #[error("ramp power {0} must be >= 1")]
    RampPower(f64),
    #[error("potential V is negative ({value}) at node {node}")]
    NegativePotential { node: usize, value: f64 },
    #[error("the zero set of V contains no interior node")]
    EmptyOmega,
    #[error("f has no positive part inside omega")]
    NoPositiveF,
    #[error("Q has no positive part inside omega")]
    NoPositiveQ,
    #[error("field {name} is not finite at node {node}")]
    NotFinite { name: &'static str, node: usize },
    #[error("invalid field spec: {0}")]
    Spec(String),
    #[error("invalid problem parameter: {0}")]
    Parameter(String),
}

/// Analytic primitives used to build `f` and `Q`. Radial primitives use the
/// Euclidean distance to the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    /// `sum_k coeffs[k] * r^k`.
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// `offset + amplitude * exp(-|x - center|^2 / (2 width^2))`.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `values[k]` on the first shell `r <= radii[k]`, the last value beyond.
    PiecewiseRadius {
        radii: Vec<f64>,
        values: Vec<f64>,
    },
}

impl FieldSpec {
    pub fn validate(&self) -> Result<(), FieldError> {
        match self {
            FieldSpec::Constant { .. } => Ok(()),
            FieldSpec::Polynomial { coeffs } if coeffs.is_empty() => {
                Err(FieldError::Spec("polynomial needs at least one coefficient".into()))
            }
            FieldSpec::Polynomial { .. } => Ok(()),
            FieldSpec::Gaussian { width, .. } if *width <= 0.0 => {
                Err(FieldError::Spec(format!("gaussian width {width} must be positive")))
            }
            FieldSpec::Gaussian { center, .. } if center.len() > 2 => {
                Err(FieldError::Spec("gaussian center has more than two coordinates".into()))
            }
            FieldSpec::Gaussian { .. } => Ok(()),
            FieldSpec::PiecewiseRadius { radii, values } => {
                if values.len() != radii.len() + 1 {
                    return Err(FieldError::Spec(format!(
                        "piecewise field needs {} values for {} radii",
                        radii.len() + 1,
                        radii.len()
                    )));
                }
                if radii.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(FieldError::Spec("piecewise radii must increase".into()));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        match self {
            FieldSpec::Constant { value } => *value,
            FieldSpec::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c),
            FieldSpec::Gaussian { amplitude, width, center, offset } => {
                let c0 = center.first().copied().unwrap_or(0.0);
                let c1 = center.get(1).copied().unwrap_or(0.0);
                let d2 = (x[0] - c0).powi(2) + (x[1] - c1).powi(2);
                offset + amplitude * (-d2 / (2.0 * width * width)).exp()
            }
            FieldSpec::PiecewiseRadius { radii, values } => {
                let shell = radii.iter().position(|&rk| r <= rk).unwrap_or(radii.len());
                values[shell]
            }
        }
    }

    pub fn sample(&self, grid: &Grid) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }
}

/// Which nodes carry unknowns: the whole box interior, or the interior of Ω
/// (the local limit problems live there).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Box,
    Omega,
}

/// Potential, weights and the mask of `Ω̄ = {V = 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFields {
    v: GridFunction,
    f: GridFunction,
    q: GridFunction,
    omega_mask: Vec<bool>,
    omega_interior: Vec<bool>,
}

/// Builds `V = dist(x, Ω)^ramp_power` with `Ω = {|x|_∞ < omega_radius}` and samples `f`, `Q`.
pub fn make_well_fields(
    grid: &Grid,
    omega_radius: f64,
    ramp_power: f64,
    f_spec: &FieldSpec,
    q_spec: &FieldSpec,
) -> Result<CoefficientFields, FieldError> {
    let inside = grid.extents()[..grid.dim()]
        .iter()
        .all(|&(lo, hi)| -omega_radius > lo && omega_radius < hi);
    if !(omega_radius > 0.0 && inside) {
        return Err(FieldError::OmegaRadius { radius: omega_radius });
    }
    if !(ramp_power >= 1.0) {
        return Err(FieldError::RampPower(ramp_power));
    }
    f_spec.validate()?;
    q_spec.validate()?;
    // node coordinates carry rounding from lo + i*h; snap within a tiny fraction of h
    let snap = 1e-9 * grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let v = GridFunction::from_fn(grid, |x| {
        let d2: f64 = x[..grid.dim()]
            .iter()
            .map(|c| {
                let excess = c.abs() - omega_radius;
                if excess > snap {
                    excess * excess
                } else {
                    0.0
                }
            })
            .sum();
        if d2 == 0.0 {
            0.0
        } else {
            d2.sqrt().powf(ramp_power)
        }
    });
    CoefficientFields::from_values(grid, v, f_spec.sample(grid), q_spec.sample(grid))
}

impl CoefficientFields {
    /// Validates raw nodal fields: `V >= 0`, a nonempty interior of `{V = 0}`,
    /// and positive parts of `f` and `Q` inside it.
    pub fn from_values(
        grid: &Grid,
        v: GridFunction,
        f: GridFunction,
        q: GridFunction,
    ) -> Result<CoefficientFields, FieldError> {
        grid.check_len(v.len())?;
        grid.check_len(f.len())?;
        grid.check_len(q.len())?;
        for (name, field) in [("V", &v), ("f", &f), ("Q", &q)] {
            if let Some(node) = field.iter().position(|x| !x.is_finite()) {
                return Err(FieldError::NotFinite { name, node });
            }
        }
        if let Some(node) = v.iter().position(|&x| x < 0.0) {
            return Err(FieldError::NegativePotential { node, value: v[node] });
        }
        let omega_mask: Vec<bool> = v.iter().map(|&x| x == 0.0).collect();
        let omega_interior: Vec<bool> = (0..grid.len())
            .map(|k| {
                omega_mask[k]
                    && !grid.is_boundary(k)
                    && (0..grid.dim()).all(|axis| {
                        [-1, 1].iter().all(|&d| grid.neighbor(k, axis, d).is_some_and(|n| omega_mask[n]))
                    })
            })
            .collect();
        if !omega_interior.iter().any(|&b| b) {
            return Err(FieldError::EmptyOmega);
        }
        let positive_inside = |w: &GridFunction| (0..grid.len()).any(|k| omega_interior[k] && w[k] > 0.0);
        if !positive_inside(&f) {
            return Err(FieldError::NoPositiveF);
        }
        if !positive_inside(&q) {
            return Err(FieldError::NoPositiveQ);
        }
        Ok(CoefficientFields { v, f, q, omega_mask, omega_interior })
    }

    pub fn v(&self) -> &GridFunction {
        &self.v
    }

    pub fn f(&self) -> &GridFunction {
        &self.f
    }

    pub fn q(&self) -> &GridFunction {
        &self.q
    }

    /// Nodes of `Ω̄`, i.e. exactly where `V = 0`.
    pub fn omega_mask(&self) -> &[bool] {
        &self.omega_mask
    }

    /// Nodes of `Ω̄` whose axis neighbors all lie in `Ω̄`.
    pub fn omega_interior(&self) -> &[bool] {
        &self.omega_interior
    }

    /// Unknown nodes for the given support.
    pub fn free_mask(&self, grid: &Grid, support: Support) -> Vec<bool> {
        match support {
            Support::Box => grid.boundary_mask().iter().map(|b| !b).collect(),
            Support::Omega => self.omega_interior.clone(),
        }
    }

    /// Smallest value of `Q` over `Ω̄`.
    pub fn q_omega_min(&self) -> f64 {
        self.q
            .iter()
            .zip(&self.omega_mask)
            .filter(|(_, &m)| m)
            .map(|(q, _)| *q)
            .fold(f64::INFINITY, f64::min)
    }

    /// Replaces `Q` (used for limit problems with a different nonlinearity weight).
    pub fn with_q(&self, grid: &Grid, q: GridFunction) -> Result<CoefficientFields, FieldError> {
        CoefficientFields::from_values(grid, self.v.clone(), self.f.clone(), q)
    }
}

/// Bookkeeping for the decay condition on `Q` at infinity; never verified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayMeta {
    pub c_star: f64,
    pub r_star: f64,
}

/// One instance of the Kirchhoff problem with `M(t) = a t + 1`.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub grid: Arc<Grid>,
    pub fields: Arc<CoefficientFields>,
    pub a: f64,
    pub p: f64,
    pub lambda: f64,
    pub mu: f64,
    pub meta: Option<DecayMeta>,
}

impl ProblemData {
    /// The constant part `b` of the Kirchhoff coefficient.
    pub const B: f64 = 1.0;

    pub fn new(
        grid: Arc<Grid>,
        fields: Arc<CoefficientFields>,
        a: f64,
        p: f64,
        lambda: f64,
        mu: f64,
    ) -> Result<ProblemData, FieldError> {
        let problem = ProblemData { grid, fields, a, p, lambda, mu, meta: None };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(FieldError::Parameter(format!("a = {} must be finite and >= 0", self.a)));
        }
        if !(self.p > 2.0 && self.p < 6.0) {
            return Err(FieldError::Parameter(format!("p = {} must lie in (2, 6)", self.p)));
        }
        if !self.lambda.is_finite() {
            return Err(FieldError::Parameter(format!("lambda = {} must be finite", self.lambda)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(FieldError::Parameter(format!("mu = {} must be positive", self.mu)));
        }
        Ok(())
    }

    pub fn with_params(&self, a: f64, p: f64, lambda: f64, mu: f64) -> Result<ProblemData, FieldError> {
        let problem = ProblemData { a, p, lambda, mu, ..self.clone() };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_a(&self, a: f64) -> Result<ProblemData, FieldError> {
        self.with_params(a, self.p, self.lambda, self.mu)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<ProblemData, FieldError> {
        self.with_params(self.a, self.p, lambda, self.mu)
    }

    pub fn with_mu(&self, mu: f64) -> Result<ProblemData, FieldError> {
        self.with_params(self.a, self.p, self.lambda, mu)
    }

    pub fn with_p(&self, p: f64) -> Result<ProblemData, FieldError> {
        self.with_params(self.a, p, self.lambda, self.mu)
    }
}
