//! Neumann Poisson problem `-Δψ = w` on the box, gauge-fixed by `∫ψ = 0`.
//!
//! The discrete Laplacian is the standard 3-point (1-D) / 5-point (2-D)
//! stencil with reflected ghost cells, i.e. zero flux through the boundary.
//! Gradients live on interior faces, which makes summation by parts exact:
//! `Σ_faces |∇ψ|² |cell| = Σ_cells ψ (-Δψ) |cell|`. The Dirichlet energy and
//! every drift use these face gradients.

use crate::grid::{CellField, Grid, ScalarField};
use crate::{Error, Result};

/// Relative residual at which the conjugate-gradient solve stops.
pub const POISSON_TOL: f64 = 1e-10;

/// Admissible `|∫w|` relative to `max(1, ∫|w|)`.
pub const COMPATIBILITY_TOL: f64 = 1e-8;

/// Gradient components on interior faces.
///
/// `x[i + (n0-1) j]` is the derivative across the face between cells
/// `(i, j)` and `(i+1, j)`; `y[i + n0 j]` between `(i, j)` and `(i, j+1)`.
/// Boundary faces carry zero flux and are not stored.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceField {
    /// `Σ_faces |g|² · |cell|`.
    pub fn weighted_norm_sq(&self, grid: &Grid) -> f64 {
        let s: f64 = self.x.iter().chain(&self.y).map(|g| g * g).sum();
        s * grid.cell_volume()
    }
}

#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub psi: ScalarField,
    /// Face-centred gradient used for energies.
    pub faces: FaceField,
    /// Cell-centred gradient (average of the two adjacent face values).
    pub gradient: Vec<[f64; 2]>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// `Δ_h f` with reflected (no-flux) ghost cells.
pub fn neumann_laplacian(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    apply_neumann_laplacian(grid, f, &mut out);
    out
}

fn apply_neumann_laplacian(grid: &Grid, f: &[f64], out: &mut [f64]) {
    let [n0, n1] = grid.n_cells();
    let ix2 = 1.0 / grid.cell_width(0).powi(2);
    let iy2 = if grid.dim() == 2 { 1.0 / grid.cell_width(1).powi(2) } else { 0.0 };
    for j in 0..n1 {
        for i in 0..n0 {
            let k = i + n0 * j;
            let c = f[k];
            let mut acc = 0.0;
            if i > 0 {
                acc += (f[k - 1] - c) * ix2;
            }
            if i + 1 < n0 {
                acc += (f[k + 1] - c) * ix2;
            }
            if grid.dim() == 2 {
                if j > 0 {
                    acc += (f[k - n0] - c) * iy2;
                }
                if j + 1 < n1 {
                    acc += (f[k + n0] - c) * iy2;
                }
            }
            out[k] = acc;
        }
    }
}

/// Second differences with quadratically extrapolated ghosts.
///
/// Used for externally prescribed potentials, which are not subject to the
/// no-flux condition; quadratic polynomials are differentiated exactly.
pub fn free_laplacian(field: &ScalarField) -> Vec<f64> {
    let grid = field.grid();
    let f = field.values();
    let [n0, n1] = grid.n_cells();
    let second = |get: &dyn Fn(usize) -> f64, n: usize, i: usize, h2: f64| -> f64 {
        let (a, b, c) = if i == 0 {
            (0, 1, 2)
        } else if i + 1 == n {
            (n - 3, n - 2, n - 1)
        } else {
            (i - 1, i, i + 1)
        };
        (get(a) - 2.0 * get(b) + get(c)) / h2
    };
    let hx2 = grid.cell_width(0).powi(2);
    let mut out = vec![0.0; f.len()];
    for j in 0..n1 {
        for i in 0..n0 {
            let row = |ii: usize| f[ii + n0 * j];
            let mut lap = second(&row, n0, i, hx2);
            if grid.dim() == 2 {
                let col = |jj: usize| f[i + n0 * jj];
                lap += second(&col, n1, j, grid.cell_width(1).powi(2));
            }
            out[i + n0 * j] = lap;
        }
    }
    out
}

/// Face gradients of a cell field (interior faces only).
pub fn face_gradients(grid: &Grid, f: &[f64]) -> FaceField {
    let [n0, n1] = grid.n_cells();
    let hx = grid.cell_width(0);
    let mut x = Vec::with_capacity((n0 - 1) * n1);
    for j in 0..n1 {
        for i in 0..n0 - 1 {
            let k = i + n0 * j;
            x.push((f[k + 1] - f[k]) / hx);
        }
    }
    let mut y = Vec::new();
    if grid.dim() == 2 {
        let hy = grid.cell_width(1);
        y.reserve(n0 * (n1 - 1));
        for j in 0..n1 - 1 {
            for i in 0..n0 {
                let k = i + n0 * j;
                y.push((f[k + n0] - f[k]) / hy);
            }
        }
    }
    FaceField { x, y }
}

/// Average face values onto cells, with zero on boundary faces.
pub fn faces_to_cells(grid: &Grid, faces: &FaceField) -> Vec<[f64; 2]> {
    let [n0, n1] = grid.n_cells();
    let mut out = vec![[0.0; 2]; grid.len()];
    for j in 0..n1 {
        for i in 0..n0 {
            let left = if i > 0 { faces.x[i - 1 + (n0 - 1) * j] } else { 0.0 };
            let right = if i + 1 < n0 { faces.x[i + (n0 - 1) * j] } else { 0.0 };
            let mut g = [0.5 * (left + right), 0.0];
            if grid.dim() == 2 {
                let down = if j > 0 { faces.y[i + n0 * (j - 1)] } else { 0.0 };
                let up = if j + 1 < n1 { faces.y[i + n0 * j] } else { 0.0 };
                g[1] = 0.5 * (down + up);
            }
            out[i + n0 * j] = g;
        }
    }
    out
}

/// Cell gradient by centred differences, one-sided at the boundary.
pub fn cell_gradient(field: &ScalarField) -> Vec<[f64; 2]> {
    let grid = field.grid();
    let f = field.values();
    let [n0, n1] = grid.n_cells();
    let diff = |get: &dyn Fn(usize) -> f64, n: usize, i: usize, h: f64| -> f64 {
        if i == 0 {
            (get(1) - get(0)) / h
        } else if i + 1 == n {
            (get(n - 1) - get(n - 2)) / h
        } else {
            (get(i + 1) - get(i - 1)) / (2.0 * h)
        }
    };
    let mut out = vec![[0.0; 2]; f.len()];
    for j in 0..n1 {
        for i in 0..n0 {
            let row = |ii: usize| f[ii + n0 * j];
            let mut g = [diff(&row, n0, i, grid.cell_width(0)), 0.0];
            if grid.dim() == 2 {
                let col = |jj: usize| f[i + n0 * jj];
                g[1] = diff(&col, n1, j, grid.cell_width(1));
            }
            out[i + n0 * j] = g;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Matrix-free conjugate gradient for `-Δ_h ψ = w` on the zero-mean subspace.
#[derive(Clone, Debug)]
pub struct PoissonSolver {
    grid: Grid,
    pub tol: f64,
    pub max_iter: usize,
}

impl PoissonSolver {
    pub fn new(grid: Grid) -> Self {
        Self { grid, tol: POISSON_TOL, max_iter: 4 * grid.len() + 200 }
    }

    pub fn solve(&self, w: &ScalarField) -> Result<PoissonSolution> {
        self.solve_with_guess(w, None)
    }

    /// Solve, warm-starting from `guess` when given.
    pub fn solve_with_guess(&self, w: &ScalarField, guess: Option<&[f64]>) -> Result<PoissonSolution> {
        let grid = self.grid;
        if *w.grid() != grid {
            return Err(Error::GridMismatch);
        }
        let integral = w.integrate();
        let scale = w.values().iter().map(|x| x.abs()).sum::<f64>() * grid.cell_volume();
        if integral.abs() > COMPATIBILITY_TOL * scale.max(1.0) {
            return Err(Error::IncompatibleSource { mean: integral / grid.volume(), tol: COMPATIBILITY_TOL });
        }
        let mut b = w.values().to_vec();
        remove_mean(&mut b);
        let b_norm = dot(&b, &b).sqrt();

        let n = grid.len();
        let mut x = match guess {
            Some(g) if g.len() == n => g.to_vec(),
            _ => vec![0.0; n],
        };
        remove_mean(&mut x);
        if b_norm == 0.0 {
            return Ok(self.package(vec![0.0; n], 0.0, 0));
        }

        let mut ax = vec![0.0; n];
        apply_neumann_laplacian(&grid, &x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi + ai).collect();
        remove_mean(&mut r);
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let mut iterations = 0;
        let mut ap = vec![0.0; n];
        while rr.sqrt() > self.tol * b_norm {
            if iterations >= self.max_iter {
                return Err(Error::PoissonNotConverged { iterations, residual: rr.sqrt() / b_norm });
            }
            apply_neumann_laplacian(&grid, &p, &mut ap);
            ap.iter_mut().for_each(|a| *a = -*a);
            let alpha = rr / dot(&p, &ap);
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            // Periodically recompute the true residual to stop drift.
            if iterations % 50 == 49 {
                apply_neumann_laplacian(&grid, &x, &mut ax);
                for k in 0..n {
                    r[k] = b[k] + ax[k];
                }
                remove_mean(&mut r);
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for k in 0..n {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
            iterations += 1;
        }
        remove_mean(&mut x);
        apply_neumann_laplacian(&grid, &x, &mut ax);
        let mut res: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi + ai).collect();
        remove_mean(&mut res);
        let residual = dot(&res, &res).sqrt() / b_norm;
        Ok(self.package(x, residual, iterations))
    }

    fn package(&self, psi: Vec<f64>, residual_norm: f64, iterations: usize) -> PoissonSolution {
        let faces = face_gradients(&self.grid, &psi);
        let gradient = faces_to_cells(&self.grid, &faces);
        PoissonSolution {
            psi: ScalarField::new(self.grid, psi).expect("finite potential"),
            faces,
            gradient,
            residual_norm,
            iterations,
        }
    }
}

/// Solve `-Δψ = w` with no-flux boundary and zero mean.
pub fn solve_poisson_neumann(w: &ScalarField) -> Result<PoissonSolution> {
    PoissonSolver::new(*w.grid()).solve(w)
}

/// `½ Σ_faces |∇ψ|² |cell|`.
pub fn dirichlet_energy(sol: &PoissonSolution) -> f64 {
    0.5 * sol.faces.weighted_norm_sq(sol.psi.grid())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IbpCheck {
    /// `∫|∇ψ|²`
    pub lhs: f64,
    /// `∫ψ w`
    pub rhs: f64,
    pub relative_gap: f64,
}

/// Compare `∫|∇ψ|²` with `∫ψ w` for `ψ = (-Δ)^{-1} w`.
pub fn ibp_identity_check(w: &ScalarField) -> Result<IbpCheck> {
    let sol = solve_poisson_neumann(w)?;
    let grid = w.grid();
    let lhs = sol.faces.weighted_norm_sq(grid);
    let rhs = sol.psi.values().iter().zip(w.values()).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume();
    let scale = lhs.abs().max(rhs.abs());
    let relative_gap = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    Ok(IbpCheck { lhs, rhs, relative_gap })
}
