//! Exact 1-D inner solver.
//!
//! The unknowns are the cell masses of both species. Search directions are
//! computed in the cumulative-mass coordinates `F_k = Σ_{i<k} m_i` at the
//! interior faces `k = 1..n-1`, where the coupling energy is
//! `½ Σ_k Δx (F^u_k - F^v_k)²` exactly and every term of the objective has a
//! block-tridiagonal (Gauss–Newton) Hessian.

use crate::energy::{DiffusionLaw, ModelParams};
use crate::grid::{CellField, Density, Grid, ScalarField, State};
use crate::transport::exact1d::{cell_integrals, Quantile};
use crate::Result;

use super::{lift_vacuum, InnerOutcome, InnerSolverConfig};

const LIFT: f64 = 1e-12;
const MASS_CLAMP: f64 = 1e-16;
/// Smallest factor by which a cell mass may shrink in one iteration.
const SHRINK: f64 = 5e-3;

pub(crate) struct Problem<'a> {
    pub grid: Grid,
    pub law: DiffusionLaw,
    pub h: f64,
    pub u_pot: &'a [f64],
    pub v_pot: &'a [f64],
    pub q_u: Quantile,
    pub q_v: Quantile,
}

/// Face gradients of the objective with respect to `F`, split into the
/// transport part (already divided by `2h`) and the energy part.
pub(crate) struct FaceGradients {
    pub w_u: Vec<f64>,
    pub w_v: Vec<f64>,
    pub e_u: Vec<f64>,
    pub e_v: Vec<f64>,
}

fn cumulative(m: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    m[..m.len() - 1]
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

impl<'a> Problem<'a> {
    pub fn new(
        grid: Grid,
        law: DiffusionLaw,
        h: f64,
        z_prev: &State,
        u_pot: &'a ScalarField,
        v_pot: &'a ScalarField,
    ) -> Self {
        Self {
            grid,
            law,
            h,
            u_pot: u_pot.values(),
            v_pot: v_pot.values(),
            q_u: Quantile::from_density(&z_prev.u),
            q_v: Quantile::from_density(&z_prev.v),
        }
    }

    fn dx(&self) -> f64 {
        self.grid.cell_width(0)
    }

    fn species_energy(&self, m: &[f64], pot: &[f64]) -> f64 {
        let dx = self.dx();
        m.iter().zip(pot).map(|(mi, p)| dx * self.law.f(mi / dx) + mi * p).sum()
    }

    pub fn objective(&self, mu: &[f64], mv: &[f64]) -> f64 {
        let dx = self.dx();
        let wu: f64 = cell_integrals(&self.grid, mu, &self.q_u).w.iter().sum();
        let wv: f64 = cell_integrals(&self.grid, mv, &self.q_v).w.iter().sum();
        let (fu, fv) = (cumulative(mu), cumulative(mv));
        let cpl: f64 = 0.5 * dx * fu.iter().zip(&fv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (wu + wv) / (2.0 * self.h) + self.species_energy(mu, self.u_pot) + self.species_energy(mv, self.v_pot) + cpl
    }

    pub fn gradients(&self, mu: &[f64], mv: &[f64]) -> FaceGradients {
        let dx = self.dx();
        let n = mu.len();
        let (fu, fv) = (cumulative(mu), cumulative(mv));
        let transport = |m: &[f64], q: &Quantile| {
            let ci = cell_integrals(&self.grid, m, q);
            (1..n).map(|k| -2.0 * dx * (ci.i1[k - 1] + ci.i0[k]) / (2.0 * self.h)).collect::<Vec<f64>>()
        };
        let energy = |m: &[f64], pot: &[f64], sign: f64| {
            (1..n)
                .map(|k| {
                    self.law.df(m[k - 1] / dx) - self.law.df(m[k] / dx) + pot[k - 1] - pot[k]
                        + sign * dx * (fu[k - 1] - fv[k - 1])
                })
                .collect::<Vec<f64>>()
        };
        FaceGradients {
            w_u: transport(mu, &self.q_u),
            w_v: transport(mv, &self.q_v),
            e_u: energy(mu, self.u_pot, 1.0),
            e_v: energy(mv, self.v_pot, -1.0),
        }
    }
}

/// Symmetric 2×2 block `[[a, c], [c, b]]` for the `(u, v)` pair at one face.
#[derive(Clone, Copy, Debug, Default)]
struct Block {
    a: f64,
    b: f64,
    c: f64,
}

impl Block {
    fn solve(&self, r: [f64; 2]) -> [f64; 2] {
        let det = self.a * self.b - self.c * self.c;
        [(self.b * r[0] - self.c * r[1]) / det, (self.a * r[1] - self.c * r[0]) / det]
    }

    /// `self - L D⁻¹ L` for diagonal `L = diag(l)`.
    fn schur(&self, l: [f64; 2], d: &Block) -> Block {
        let det = d.a * d.b - d.c * d.c;
        Block {
            a: self.a - l[0] * l[0] * d.b / det,
            b: self.b - l[1] * l[1] * d.a / det,
            c: self.c + l[0] * l[1] * d.c / det,
        }
    }
}

/// Solve the block-tridiagonal system with diagonal blocks `diag` and
/// diagonal couplings `off[k]` between faces `k` and `k+1`.
fn block_thomas(diag: &[Block], off: &[[f64; 2]], rhs: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut r = rhs.to_vec();
    for k in 1..n {
        let l = off[k - 1];
        let y = d[k - 1].solve(r[k - 1]);
        r[k] = [r[k][0] - l[0] * y[0], r[k][1] - l[1] * y[1]];
        d[k] = d[k].schur(l, &d[k - 1]);
    }
    let mut x = vec![[0.0; 2]; n];
    x[n - 1] = d[n - 1].solve(r[n - 1]);
    for k in (0..n - 1).rev() {
        let l = off[k];
        x[k] = d[k].solve([r[k][0] - l[0] * x[k + 1][0], r[k][1] - l[1] * x[k + 1][1]]);
    }
    x
}

impl Problem<'_> {
    /// Newton-type direction in face coordinates.
    fn direction(&self, mu: &[f64], mv: &[f64], g: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let n = mu.len();
        let dx = self.dx();
        let nf = n - 1;
        let mut diag = vec![Block { a: dx, b: dx, c: -dx }; nf];
        let mut off = vec![[0.0; 2]; nf.saturating_sub(1)];
        for i in 0..n {
            let mut t = [0.0; 2];
            for (s, m) in [mu, mv].iter().enumerate() {
                let mi = m[i].max(MASS_CLAMP);
                let tr = dx * dx / (3.0 * mi) / (2.0 * self.h);
                let en = self.law.d2f(mi / dx) / dx;
                t[s] = tr - en;
                let d = 2.0 * tr + en;
                if i >= 1 {
                    if s == 0 {
                        diag[i - 1].a += d;
                    } else {
                        diag[i - 1].b += d;
                    }
                }
                if i < nf {
                    if s == 0 {
                        diag[i].a += d;
                    } else {
                        diag[i].b += d;
                    }
                }
            }
            if i >= 1 && i < nf {
                off[i - 1] = t;
            }
        }
        let rhs: Vec<[f64; 2]> = g.iter().map(|x| [-x[0], -x[1]]).collect();
        block_thomas(&diag, &off, &rhs)
    }
}

fn face_to_cells(d: &[[f64; 2]], s: usize) -> Vec<f64> {
    let n = d.len() + 1;
    (0..n)
        .map(|i| {
            let right = if i < n - 1 { d[i][s] } else { 0.0 };
            let left = if i >= 1 { d[i - 1][s] } else { 0.0 };
            right - left
        })
        .collect()
}

/// `m + α dm`, with each cell shrinking by at most [`SHRINK`] and total mass restored.
fn trial_point(m: &[f64], dm: &[f64], alpha: f64) -> Vec<f64> {
    let mut out: Vec<f64> = m.iter().zip(dm).map(|(x, d)| (x + alpha * d).max(SHRINK * x)).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

fn renormalized(grid: Grid, m: &[f64]) -> Density {
    let total: f64 = m.iter().sum();
    let scaled: Vec<f64> = m.iter().map(|x| x / total).collect();
    Density::from_masses_unchecked(grid, &scaled)
}

pub(crate) fn solve(
    z_prev: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    cfg: &InnerSolverConfig,
) -> Result<InnerOutcome> {
    let grid = *z_prev.grid();
    let problem = Problem::new(grid, params.law, params.h, z_prev, u_pot, v_pot);
    let (u0, v0) = (lift_vacuum(&z_prev.u, LIFT), lift_vacuum(&z_prev.v, LIFT));
    let mut mu = u0.masses();
    let mut mv = v0.masses();
    let mut phi = problem.objective(&mu, &mv);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        let fg = problem.gradients(&mu, &mv);
        let g: Vec<[f64; 2]> = (0..mu.len() - 1).map(|k| [fg.w_u[k] + fg.e_u[k], fg.w_v[k] + fg.e_v[k]]).collect();
        let d = problem.direction(&mu, &mv, &g);
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum();
        if !(slope < 0.0) {
            residual = 0.0;
            converged = true;
            break;
        }
        if -0.5 * slope < 0.1 * cfg.tol {
            // Predicted Newton decrease is already below tolerance.
            residual = -0.5 * slope;
            converged = true;
            break;
        }
        let (du, dv) = (face_to_cells(&d, 0), face_to_cells(&d, 1));
        let mut alpha: f64 = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let (tu, tv) = (trial_point(&mu, &du, alpha), trial_point(&mv, &dv, alpha));
            let trial = problem.objective(&tu, &tv);
            if trial < phi && trial <= phi + 1e-4 * alpha * slope {
                accepted = Some((tu, tv, trial));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((tu, tv, trial)) => {
                residual = phi - trial;
                mu = tu;
                mv = tv;
                phi = trial;
                if residual < cfg.tol && alpha == 1.0 {
                    converged = true;
                    break;
                }
            }
            None => {
                // No representable decrease remains along the Newton direction.
                residual = -0.5 * slope;
                converged = residual < cfg.tol;
                break;
            }
        }
    }
    let z = State { u: renormalized(grid, &mu), v: renormalized(grid, &mv) };
    Ok(InnerOutcome { z, iterations, residual, converged, distance_sq: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::total_energy;
    use crate::transport::w2_exact_1d;

    fn setup(m: f64) -> (Grid, State, ScalarField, ScalarField, ModelParams) {
        let g = Grid::new_1d(0.0, 1.0, 40).unwrap();
        let bump = |c: f64, w: f64| {
            Density::normalize(
                g,
                ScalarField::from_fn(g, |x| (-(x[0] - c).powi(2) / (2.0 * w * w)).exp() + 0.05).into_values(),
            )
            .unwrap()
        };
        let z = State::new(bump(0.3, 0.08), bump(0.65, 0.1)).unwrap();
        let u = ScalarField::from_fn(g, |x| 2.0 * (x[0] - 0.5).powi(2));
        let v = ScalarField::from_fn(g, |x| (x[0] - 0.4).powi(2));
        let p = ModelParams::new(m, 0.01, &u, &v).unwrap();
        (g, z, u, v, p)
    }

    #[test]
    fn block_thomas_matches_dense_solve() {
        let diag =
            vec![Block { a: 4.0, b: 5.0, c: 1.0 }, Block { a: 6.0, b: 4.5, c: -0.5 }, Block { a: 3.0, b: 3.5, c: 0.2 }];
        let off = vec![[1.0, -0.5], [0.3, 0.7]];
        let rhs = vec![[1.0, 2.0], [-1.0, 0.5], [0.25, 3.0]];
        let x = block_thomas(&diag, &off, &rhs);
        // Multiply back.
        for k in 0..3 {
            let mut y = [diag[k].a * x[k][0] + diag[k].c * x[k][1], diag[k].c * x[k][0] + diag[k].b * x[k][1]];
            if k > 0 {
                y[0] += off[k - 1][0] * x[k - 1][0];
                y[1] += off[k - 1][1] * x[k - 1][1];
            }
            if k < 2 {
                y[0] += off[k][0] * x[k + 1][0];
                y[1] += off[k][1] * x[k + 1][1];
            }
            assert!((y[0] - rhs[k][0]).abs() < 1e-12 && (y[1] - rhs[k][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_matches_assembled_energy() {
        for m in [1.0, 2.0] {
            let (g, z, u, v, p) = setup(m);
            let zp =
                State::new(Density::normalize(g, z.u.values().iter().rev().cloned().collect()).unwrap(), z.v.clone())
                    .unwrap();
            let prob = Problem::new(g, p.law, p.h, &zp, &u, &v);
            let phi = prob.objective(&z.u.masses(), &z.v.masses());
            let e = total_energy(&z, &p, &u, &v).unwrap().total;
            let d = w2_exact_1d(&z.u, &zp.u).unwrap().cost + w2_exact_1d(&z.v, &zp.v).unwrap().cost;
            assert!(
                (phi - (e + d / (2.0 * p.h))).abs() < 1e-9 * phi.abs().max(1.0),
                "{phi} vs {}",
                e + d / (2.0 * p.h)
            );
        }
    }

    #[test]
    fn face_gradients_match_finite_differences() {
        for m in [1.0, 2.0, 3.0] {
            let (g, z, u, v, p) = setup(m);
            let zp = State::new(Density::normalize(g, z.v.values().to_vec()).unwrap(), z.u.clone()).unwrap();
            let prob = Problem::new(g, p.law, p.h, &zp, &u, &v);
            let (mu, mv) = (z.u.masses(), z.v.masses());
            let fg = prob.gradients(&mu, &mv);
            let e = 1e-7;
            for k in [1usize, 7, 20, 38] {
                // Moving F_k moves mass from cell k to cell k-1.
                let shift = |m: &[f64], s: f64| {
                    let mut out = m.to_vec();
                    out[k - 1] += s;
                    out[k] -= s;
                    out
                };
                let fd_u = (prob.objective(&shift(&mu, e), &mv) - prob.objective(&shift(&mu, -e), &mv)) / (2.0 * e);
                let fd_v = (prob.objective(&mu, &shift(&mv, e)) - prob.objective(&mu, &shift(&mv, -e))) / (2.0 * e);
                let an_u = fg.w_u[k - 1] + fg.e_u[k - 1];
                let an_v = fg.w_v[k - 1] + fg.e_v[k - 1];
                assert!((fd_u - an_u).abs() < 1e-5 * (1.0 + an_u.abs()), "m={m} k={k}: {fd_u} vs {an_u}");
                assert!((fd_v - an_v).abs() < 1e-5 * (1.0 + an_v.abs()), "m={m} k={k}: {fd_v} vs {an_v}");
            }
        }
    }

    #[test]
    fn converges_and_decreases_objective() {
        for m in [1.0, 2.0] {
            let (g, z, u, v, p) = setup(m);
            let cfg = InnerSolverConfig { tol: 1e-12, ..Default::default() };
            let out = solve(&z, &p, &u, &v, &cfg).unwrap();
            assert!(out.converged, "m={m}: {} iterations, residual {}", out.iterations, out.residual);
            let prob = Problem::new(g, p.law, p.h, &z, &u, &v);
            let start = prob.objective(&z.u.masses(), &z.v.masses());
            let end = prob.objective(&out.z.u.masses(), &out.z.v.masses());
            assert!(end < start);
            let fg = prob.gradients(&out.z.u.masses(), &out.z.v.masses());
            let gmax =
                (0..39).map(|k| (fg.w_u[k] + fg.e_u[k]).abs().max((fg.w_v[k] + fg.e_v[k]).abs())).fold(0.0, f64::max);
            assert!(gmax < 1e-5, "m={m}: gradient {gmax}");
        }
    }
}
