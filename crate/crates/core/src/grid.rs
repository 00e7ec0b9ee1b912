//! Uniform Cartesian grids on boxes and the cell-averaged fields living on them.
//!
//! Every field is stored cell-averaged, row-major with the first axis fastest
//! (`idx = i + n0 * j`). Integrals use the midpoint rule, and the coordinates
//! of a cell are those of its midpoint.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on `|∫ρ - 1|` accepted when validating a [`Density`].
pub const MASS_TOL: f64 = 1e-10;

/// Smallest number of cells allowed along any axis.
pub const MIN_CELLS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    n_cells: [usize; 2],
}

impl Grid {
    pub fn new_1d(lower: f64, upper: f64, n_cells: usize) -> Result<Self> {
        Self::build(1, [lower, 0.0], [upper, 1.0], [n_cells, 1])
    }

    pub fn new_2d(lower: [f64; 2], upper: [f64; 2], n_cells: [usize; 2]) -> Result<Self> {
        Self::build(2, lower, upper, n_cells)
    }

    fn build(dim: usize, lower: [f64; 2], upper: [f64; 2], n_cells: [usize; 2]) -> Result<Self> {
        for axis in 0..dim {
            if !(lower[axis].is_finite() && upper[axis].is_finite()) {
                return Err(Error::InvalidGrid(format!("non-finite bounds on axis {axis}")));
            }
            if upper[axis] <= lower[axis] {
                return Err(Error::InvalidGrid(format!(
                    "upper bound {} must exceed lower bound {} on axis {axis}",
                    upper[axis], lower[axis]
                )));
            }
            if n_cells[axis] < MIN_CELLS {
                return Err(Error::InvalidGrid(format!(
                    "need at least {MIN_CELLS} cells on axis {axis}, got {}",
                    n_cells[axis]
                )));
            }
        }
        Ok(Self { dim, lower, upper, n_cells })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> [f64; 2] {
        self.lower
    }

    pub fn upper(&self) -> [f64; 2] {
        self.upper
    }

    /// Cells per axis; the second entry is 1 for 1-D grids.
    pub fn n_cells(&self) -> [usize; 2] {
        self.n_cells
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.n_cells[0] * self.n_cells[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.n_cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.cell_width(a)).product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.upper[a] - self.lower[a]).product()
    }

    /// Squared diameter of the box.
    pub fn diameter_sq(&self) -> f64 {
        (0..self.dim).map(|a| (self.upper[a] - self.lower[a]).powi(2)).sum()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n_cells[0] * j
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n_cells[0], idx / self.n_cells[0])
    }

    /// Midpoint of cell `idx`; the second coordinate is 0 in 1-D.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        let x = self.lower[0] + (i as f64 + 0.5) * self.cell_width(0);
        let y = if self.dim == 2 { self.lower[1] + (j as f64 + 0.5) * self.cell_width(1) } else { 0.0 };
        [x, y]
    }

    /// Midpoint of the box.
    pub fn domain_center(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for (a, ca) in c.iter_mut().enumerate().take(self.dim) {
            *ca = 0.5 * (self.lower[a] + self.upper[a]);
        }
        c
    }

    /// True when the cell touches the boundary of the box.
    pub fn is_boundary(&self, idx: usize) -> bool {
        let (i, j) = self.coords(idx);
        let on_x = i == 0 || i + 1 == self.n_cells[0];
        let on_y = self.dim == 2 && (j == 0 || j + 1 == self.n_cells[1]);
        on_x || on_y
    }

    /// Squared Euclidean distance between two points, restricted to the active axes.
    pub fn dist_sq(&self, a: [f64; 2], b: [f64; 2]) -> f64 {
        (0..self.dim).map(|k| (a[k] - b[k]).powi(2)).sum()
    }
}

/// Shared read access to cell values plus midpoint quadrature.
pub trait CellField {
    fn grid(&self) -> &Grid;
    fn values(&self) -> &[f64];

    fn integrate(&self) -> f64 {
        integrate_values(self.grid(), self.values())
    }
}

/// `Σ values · cell_volume`.
pub fn integrate_values(grid: &Grid, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.cell_volume()
}

/// Integral of any cell field.
pub fn integrate<F: CellField + ?Sized>(f: &F) -> f64 {
    f.integrate()
}

/// Signed cell-averaged field: potentials, test functions, differences of densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values for a grid of {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite field value at cell {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Sample `f` at cell midpoints.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center(i))).collect();
        Self { grid, values }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.volume()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| a * v).collect() }
    }

    /// `self - other`, cellwise.
    pub fn difference<A: CellField, B: CellField>(a: &A, b: &B) -> Result<Self> {
        if a.grid() != b.grid() {
            return Err(Error::GridMismatch);
        }
        let values = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        Ok(Self { grid: *a.grid(), values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl CellField for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Nonnegative cell-averaged probability density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    grid: Grid,
    values: Vec<f64>,
}

impl Density {
    /// Validate nonnegativity and unit mass (within [`MASS_TOL`]).
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidDensity(format!("{} values for a grid of {} cells", values.len(), grid.len())));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDensity(format!("value {} at cell {i} is negative or non-finite", values[i])));
        }
        let mass = integrate_values(&grid, &values);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("mass {mass} differs from 1")));
        }
        Ok(Self { grid, values })
    }

    /// Rescale a nonnegative field to unit mass.
    pub fn normalize(grid: Grid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidDensity(format!("{} values for a grid of {} cells", values.len(), grid.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDensity("negative or non-finite value".into()));
        }
        let mass = integrate_values(&grid, &values);
        if mass <= 0.0 {
            return Err(Error::InvalidDensity("cannot normalize a field of zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: Grid) -> Self {
        let c = 1.0 / grid.volume();
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Build from cell masses (values times cell volume) that already sum to one.
    pub(crate) fn from_masses_unchecked(grid: Grid, masses: &[f64]) -> Self {
        let vol = grid.cell_volume();
        Self { grid, values: masses.iter().map(|m| m.max(0.0) / vol).collect() }
    }

    pub(crate) fn from_values_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        Self { grid, values }
    }

    /// Cell masses `ρ_i · |cell|`.
    pub fn masses(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    pub fn mass(&self) -> f64 {
        self.integrate()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `(∫ρ^p)^{1/p}`, or the largest cell value for `p = ∞`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidArgument(format!("L^p exponent must be >= 1, got {p}")));
        }
        if p.is_infinite() {
            return Ok(self.values.iter().fold(0.0, |m: f64, v| m.max(*v)));
        }
        Ok(self.lp_norm_pow(p).powf(1.0 / p))
    }

    /// `∫ρ^p` for finite `p`.
    pub fn lp_norm_pow(&self, p: f64) -> f64 {
        self.values.iter().map(|v| v.powf(p)).sum::<f64>() * self.grid.cell_volume()
    }

    /// `∫ρ log ρ`, with `0 log 0 = 0`.
    pub fn boltzmann_entropy(&self) -> f64 {
        self.values.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>() * self.grid.cell_volume()
    }

    /// `∫ρ |log ρ|`.
    pub fn abs_entropy(&self) -> f64 {
        self.values.iter().filter(|v| **v > 0.0).map(|v| v * v.ln().abs()).sum::<f64>() * self.grid.cell_volume()
    }

    /// `∫|x - center|² ρ dx` using cell midpoints.
    pub fn second_moment(&self, center: [f64; 2]) -> f64 {
        self.values.iter().enumerate().map(|(i, v)| v * self.grid.dist_sq(self.grid.center(i), center)).sum::<f64>()
            * self.grid.cell_volume()
    }

    /// `∫|ρ - σ|`.
    pub fn l1_distance(&self, other: &Density) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>() * self.grid.cell_volume())
    }
}

impl CellField for Density {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn lp_norm(rho: &Density, p: f64) -> Result<f64> {
    rho.lp_norm(p)
}

pub fn boltzmann_entropy(rho: &Density) -> f64 {
    rho.boltzmann_entropy()
}

pub fn second_moment(rho: &Density, center: [f64; 2]) -> f64 {
    rho.second_moment(center)
}

pub fn normalize(grid: Grid, values: Vec<f64>) -> Result<Density> {
    Density::normalize(grid, values)
}

/// The pair `z = (u, v)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub u: Density,
    pub v: Density,
}

impl State {
    pub fn new(u: Density, v: Density) -> Result<Self> {
        if u.grid() != v.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { u, v })
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// `(v, u)`.
    pub fn swapped(&self) -> Self {
        Self { u: self.v.clone(), v: self.u.clone() }
    }

    /// The charge density `u - v`.
    pub fn charge(&self) -> ScalarField {
        let values = self.u.values().iter().zip(self.v.values()).map(|(a, b)| a - b).collect();
        ScalarField { grid: *self.grid(), values }
    }
}
