//! Entropic-proximal inner solver (any dimension).
//!
//! Each species update solves
//! `min_π ε KL(π | e^{-C/ε})/(2h) + G(π^T 1)` subject to `π 1 = p`, with `p`
//! the previous masses, by log-domain scaling iterations. `G` contains the
//! internal energy, the confinement potential and the coupling energy
//! linearized at the current iterate plus the quadratic majorant
//! `(1/λ₁)(‖δu‖² + ‖δv‖²) ≥ ½‖δu - δv‖²_{H⁻¹}`, where `λ₁` is the smallest
//! nonzero eigenvalue of the discrete Neumann Laplacian. Minimizing the
//! majorant never increases the true objective, and both species are updated
//! from the same frozen potential, which keeps the sweep symmetric in `(u, v)`.

use crate::elliptic::{dirichlet_energy, PoissonSolver};
use crate::energy::{DiffusionLaw, ModelParams};
use crate::grid::{CellField, Density, Grid, ScalarField, State};
use crate::par;
use crate::transport::sinkhorn::{grid_soft_min, log_weights, marginal_defect};
use crate::Result;

use super::{InnerOutcome, InnerSolverConfig};

const SINKHORN_TOL: f64 = 1e-11;
const SINKHORN_MAX: usize = 20_000;

/// Smallest nonzero eigenvalue of the discrete no-flux Laplacian.
pub(crate) fn neumann_lambda1(grid: &Grid) -> f64 {
    (0..grid.dim())
        .map(|a| {
            let dx = grid.cell_width(a);
            let len = grid.upper()[a] - grid.lower()[a];
            (2.0 / dx * (std::f64::consts::PI * dx / (2.0 * len)).sin()).powi(2)
        })
        .fold(f64::INFINITY, f64::min)
}

struct Prox {
    law: DiffusionLaw,
    sigma: f64,
    kappa: f64,
    vol: f64,
}

impl Prox {
    /// `log x` solving `σ G'(x) + log(x / e^ℓ) = 0`, by Newton from an upper bound.
    fn solve(&self, ell: f64, phi: f64, anchor: f64) -> f64 {
        let (s, k, vol) = (self.sigma, self.kappa, self.vol);
        let m = self.law.m;
        let linear = self.law.is_linear();
        let c = if linear { 0.0 } else { m / (m - 1.0) * vol.powf(1.0 - m) };
        let mut y = if linear {
            (ell - s * (1.0 - vol.ln() + phi - k * anchor / vol)) / (1.0 + s)
        } else {
            ell - s * (phi - k * anchor / vol)
        };
        y = y.min(700.0);
        for _ in 0..200 {
            let ey = y.exp();
            let (r, dr) = if linear {
                ((1.0 + s) * y - ell + s * (1.0 - vol.ln() + phi + k * (ey - anchor) / vol), 1.0 + s + s * k * ey / vol)
            } else {
                let p = (y * (m - 1.0)).exp();
                (y - ell + s * (c * p + phi + k * (ey - anchor) / vol), 1.0 + s * (c * (m - 1.0) * p + k * ey / vol))
            };
            let step = r / dr;
            y -= step;
            if step.abs() <= 1e-14 * (1.0 + y.abs()) {
                break;
            }
        }
        y
    }
}

struct Species {
    weights: (Vec<f64>, Vec<f64>),
    pot: Vec<f64>,
    sign: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    x: Vec<f64>,
}

impl Species {
    fn new(prev: &Density, pot: &ScalarField, sign: f64) -> Self {
        let n = prev.values().len();
        Self {
            weights: log_weights(&prev.masses()),
            pot: pot.values().to_vec(),
            sign,
            f: vec![0.0; n],
            g: vec![0.0; n],
            x: prev.masses(),
        }
    }

    /// One majorized proximal update; returns the block objective without the coupling.
    fn update(&mut self, grid: &Grid, prox: &Prox, psi: &[f64], eps: f64, h: f64) -> f64 {
        let n = grid.len();
        let phi: Vec<f64> = self.pot.iter().zip(psi).map(|(p, s)| p + self.sign * s).collect();
        let anchor = self.x.clone();
        let mut buf = vec![0.0; n];
        let mut hh = vec![0.0; n];
        let mut ell = vec![0.0; n];
        let mut y = vec![0.0; n];
        for _ in 0..SINKHORN_MAX {
            for (o, g) in hh.iter_mut().zip(&self.g) {
                *o = g / eps;
            }
            grid_soft_min(grid, &hh, eps, &mut buf);
            let f_new: Vec<f64> = self.weights.1.iter().zip(&buf).map(|(lw, o)| eps * lw + o).collect();
            let defect = marginal_defect(&self.weights.0, &self.f, &f_new, eps);
            self.f = f_new;
            for (o, f) in hh.iter_mut().zip(&self.f) {
                *o = f / eps;
            }
            grid_soft_min(grid, &hh, eps, &mut buf);
            for (l, o) in ell.iter_mut().zip(&buf) {
                *l = -o / eps;
            }
            par::fill_indexed(&mut y, |j| prox.solve(ell[j], phi[j], anchor[j]));
            for j in 0..n {
                self.g[j] = eps * (y[j] - ell[j]);
            }
            if defect <= SINKHORN_TOL {
                break;
            }
        }
        self.x = y.iter().map(|v| v.exp()).collect();
        let dual: f64 = self.weights.0.iter().zip(&self.f).filter(|(w, _)| **w > 0.0).map(|(w, f)| w * f).sum::<f64>()
            + self.x.iter().zip(&self.g).map(|(x, g)| x * g).sum::<f64>();
        let vol = grid.cell_volume();
        let energy: f64 = self.x.iter().zip(&self.pot).map(|(x, p)| vol * prox.law.f(x / vol) + x * p).sum();
        dual / (2.0 * h) + energy
    }

    /// `⟨C, π⟩` of the current plan.
    fn transport_cost(&self, grid: &Grid, eps: f64) -> f64 {
        let n = grid.len();
        let mut rows = vec![0.0; n];
        par::fill_indexed(&mut rows, |i| {
            if self.weights.0[i] == 0.0 {
                return 0.0;
            }
            (0..n)
                .map(|j| {
                    let c = grid.dist_sq(grid.center(i), grid.center(j));
                    ((self.f[i] + self.g[j] - c) / eps).exp() * c
                })
                .sum()
        });
        rows.iter().sum()
    }

    fn density(&self, grid: Grid) -> Density {
        let total: f64 = self.x.iter().sum();
        Density::from_masses_unchecked(grid, &self.x.iter().map(|x| x / total).collect::<Vec<_>>())
    }
}

pub(crate) fn solve(
    z_prev: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    cfg: &InnerSolverConfig,
    eps: f64,
) -> Result<InnerOutcome> {
    let grid = *z_prev.grid();
    let vol = grid.cell_volume();
    let h = params.h;
    let prox = Prox { law: params.law, sigma: 2.0 * h / eps, kappa: 2.0 / neumann_lambda1(&grid), vol };
    let poisson = PoissonSolver::new(grid);
    let mut su = Species::new(&z_prev.u, u_pot, 1.0);
    let mut sv = Species::new(&z_prev.v, v_pot, -1.0);
    let charge = |a: &Species, b: &Species| {
        let (ma, mb) = (a.x.iter().sum::<f64>(), b.x.iter().sum::<f64>());
        ScalarField::new(grid, a.x.iter().zip(&b.x).map(|(p, q)| (p / ma - q / mb) / vol).collect())
            .expect("finite charge")
    };
    let mut sol = poisson.solve(&charge(&su, &sv))?;
    let mut j_prev = f64::INFINITY;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let psi = sol.psi.values().to_vec();
        let ju = su.update(&grid, &prox, &psi, eps, h);
        let jv = sv.update(&grid, &prox, &psi, eps, h);
        sol = poisson.solve_with_guess(&charge(&su, &sv), Some(&psi))?;
        let j = ju + jv + dirichlet_energy(&sol);
        residual = (j_prev - j).abs();
        j_prev = j;
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }
    let distance_sq = su.transport_cost(&grid, eps) + sv.transport_cost(&grid, eps);
    Ok(InnerOutcome {
        z: State { u: su.density(grid), v: sv.density(grid) },
        iterations,
        residual,
        converged,
        distance_sq: Some(distance_sq),
    })
}
