//! Uniform tensor grids on a box, trapezoidal quadrature and the discrete
//! Dirichlet Laplacian.
//!
//! The whole space is truncated to an axis-aligned box with zero Dirichlet
//! data on the box boundary. Nodes are numbered with the first axis running
//! fastest, so in 2D node `(i, j)` lives at index `j * nx + i`.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid dimension must be 1 or 2, got {0}")]
    Dimension(usize),
    #[error("expected {expected} axis entries, got {got}")]
    AxisCount { expected: usize, got: usize },
    #[error("axis {axis}: extent [{lo}, {hi}] is empty or not finite")]
    Extent { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis}: need at least 3 points, got {points}")]
    TooFewPoints { axis: usize, points: usize },
    #[error("grid function has {got} values, grid has {expected} nodes")]
    SizeMismatch { expected: usize, got: usize },
    #[error("boundary node {node} carries nonzero value {value}")]
    NonzeroBoundary { node: usize, value: f64 },
}

/// Uniform grid on a 1D interval or a 2D rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extents: Vec<(f64, f64)>,
    points: Vec<usize>,
    spacing: Vec<f64>,
    #[serde(skip)]
    boundary: Vec<bool>,
}

/// Builds a uniform grid. `extents[k]` is the interval of axis `k` and
/// `points_per_axis[k]` the number of nodes on it, endpoints included.
pub fn build_grid(
    dim: usize,
    extents: &[(f64, f64)],
    points_per_axis: &[usize],
) -> Result<Grid, GridError> {
    if dim != 1 && dim != 2 {
        return Err(GridError::Dimension(dim));
    }
    if extents.len() != dim {
        return Err(GridError::AxisCount { expected: dim, got: extents.len() });
    }
    if points_per_axis.len() != dim {
        return Err(GridError::AxisCount { expected: dim, got: points_per_axis.len() });
    }
    let mut spacing = Vec::with_capacity(dim);
    for (axis, (&(lo, hi), &n)) in extents.iter().zip(points_per_axis).enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(GridError::Extent { axis, lo, hi });
        }
        if n < 3 {
            return Err(GridError::TooFewPoints { axis, points: n });
        }
        spacing.push((hi - lo) / (n - 1) as f64);
    }
    let mut grid = Grid {
        dim,
        extents: extents.to_vec(),
        points: points_per_axis.to_vec(),
        spacing,
        boundary: Vec::new(),
    };
    grid.boundary = (0..grid.len()).map(|k| grid.on_box_boundary(k)).collect();
    Ok(grid)
}

impl Grid {
    /// Re-derives cached data after deserialization.
    pub fn rebuilt(self) -> Result<Grid, GridError> {
        build_grid(self.dim, &self.extents, &self.points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[(f64, f64)] {
        &self.extents
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element `h_1 * ... * h_d` carried by an interior node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Per-axis node index of a flat node index.
    pub fn axis_index(&self, node: usize) -> [usize; 2] {
        match self.dim {
            1 => [node, 0],
            _ => [node % self.points[0], node / self.points[0]],
        }
    }

    pub fn node_index(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[1] * self.points[0] + idx[0],
        }
    }

    /// Coordinates of a node; unused trailing entries are zero.
    pub fn position(&self, node: usize) -> [f64; 2] {
        let idx = self.axis_index(node);
        let mut x = [0.0; 2];
        for (axis, slot) in x.iter_mut().enumerate().take(self.dim) {
            *slot = self.extents[axis].0 + idx[axis] as f64 * self.spacing[axis];
        }
        x
    }

    fn on_box_boundary(&self, node: usize) -> bool {
        let idx = self.axis_index(node);
        (0..self.dim).any(|axis| idx[axis] == 0 || idx[axis] + 1 == self.points[axis])
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn boundary_count(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }

    /// Neighbor of `node` one step along `axis` in direction `dir` (±1), if it exists.
    pub fn neighbor(&self, node: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut idx = self.axis_index(node);
        let next = idx[axis] as i64 + dir;
        if next < 0 || next >= self.points[axis] as i64 {
            return None;
        }
        idx[axis] = next as usize;
        Some(self.node_index(idx))
    }

    /// Tensor trapezoidal weight of a node.
    pub fn quadrature_weight(&self, node: usize) -> f64 {
        let idx = self.axis_index(node);
        (0..self.dim)
            .map(|axis| {
                let h = self.spacing[axis];
                if idx[axis] == 0 || idx[axis] + 1 == self.points[axis] {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    pub fn quadrature_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.quadrature_weight(k)).collect()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<(), GridError> {
        if len != self.len() {
            return Err(GridError::SizeMismatch { expected: self.len(), got: len });
        }
        Ok(())
    }
}

/// Real-valued function sampled at the grid nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(len: usize) -> Self {
        GridFunction { values: vec![0.0; len] }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        GridFunction { values }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        GridFunction { values: (0..grid.len()).map(|k| f(grid.position(k))).collect() }
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, t: f64) -> GridFunction {
        GridFunction { values: self.values.iter().map(|v| t * v).collect() }
    }

    pub fn abs(&self) -> GridFunction {
        GridFunction { values: self.values.iter().map(|v| v.abs()).collect() }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Deref for GridFunction {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for GridFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

impl From<Vec<f64>> for GridFunction {
    fn from(values: Vec<f64>) -> Self {
        GridFunction { values }
    }
}

/// Trapezoidal (tensor-trapezoidal in 2D) quadrature of nodal values.
pub fn integrate(grid: &Grid, values: &[f64]) -> Result<f64, GridError> {
    grid.check_len(values.len())?;
    Ok(integrate_unchecked(grid, values))
}

pub(crate) fn integrate_unchecked(grid: &Grid, values: &[f64]) -> f64 {
    match grid.dim {
        1 => {
            let h = grid.spacing[0];
            let n = values.len();
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (inner + 0.5 * (values[0] + values[n - 1]))
        }
        _ => values
            .iter()
            .enumerate()
            .map(|(k, v)| grid.quadrature_weight(k) * v)
            .sum(),
    }
}

/// Discrete `-Δu` with the centered second-order stencil. Boundary rows are zero.
pub fn apply_laplacian(grid: &Grid, u: &[f64]) -> Result<GridFunction, GridError> {
    grid.check_len(u.len())?;
    if let Some(node) = (0..grid.len()).find(|&k| grid.boundary[k] && u[k] != 0.0) {
        return Err(GridError::NonzeroBoundary { node, value: u[node] });
    }
    let mut out = vec![0.0; u.len()];
    laplacian_into(grid, u, &mut out);
    Ok(GridFunction::from_vec(out))
}

pub(crate) fn laplacian_into(grid: &Grid, u: &[f64], out: &mut [f64]) {
    match grid.dim {
        1 => {
            let inv_h2 = 1.0 / (grid.spacing[0] * grid.spacing[0]);
            let n = u.len();
            out[0] = 0.0;
            out[n - 1] = 0.0;
            for i in 1..n - 1 {
                out[i] = (2.0 * u[i] - u[i - 1] - u[i + 1]) * inv_h2;
            }
        }
        _ => {
            let (nx, ny) = (grid.points[0], grid.points[1]);
            let inv_hx2 = 1.0 / (grid.spacing[0] * grid.spacing[0]);
            let inv_hy2 = 1.0 / (grid.spacing[1] * grid.spacing[1]);
            for j in 0..ny {
                for i in 0..nx {
                    let k = j * nx + i;
                    out[k] = if i == 0 || j == 0 || i + 1 == nx || j + 1 == ny {
                        0.0
                    } else {
                        (2.0 * u[k] - u[k - 1] - u[k + 1]) * inv_hx2
                            + (2.0 * u[k] - u[k - nx] - u[k + nx]) * inv_hy2
                    };
                }
            }
        }
    }
}

/// `∫ ∇u·∇v` with forward differences on every grid edge. For functions
/// vanishing on the box boundary this equals `integrate(u * apply_laplacian(v))`.
pub fn gradient_inner(grid: &Grid, u: &[f64], v: &[f64]) -> Result<f64, GridError> {
    grid.check_len(u.len())?;
    grid.check_len(v.len())?;
    let mut total = 0.0;
    for axis in 0..grid.dim {
        let h = grid.spacing[axis];
        for k in 0..grid.len() {
            if let Some(next) = grid.neighbor(k, axis, 1) {
                // trapezoid weight across the remaining axis, midpoint along this one
                let idx = grid.axis_index(k);
                let mut w = 1.0 / h;
                for other in (0..grid.dim).filter(|&o| o != axis) {
                    let ho = grid.spacing[other];
                    w *= if idx[other] == 0 || idx[other] + 1 == grid.points[other] {
                        0.5 * ho
                    } else {
                        ho
                    };
                }
                total += w * (u[next] - u[k]) * (v[next] - v[k]);
            }
        }
    }
    Ok(total)
}
