//! Log-domain entropic transport on a grid with ε-scaling and Sinkhorn debiasing.
//!
//! Potentials `(f, g)` solve the dual of
//! `min_π ⟨C, π⟩ + ε KL(π | a ⊗ b)` with `C(x, y) = |x - y|²`, so
//! `π_ij = a_i b_j exp((f_i + g_j - C_ij)/ε)` and `OT_ε(a, b) = ⟨a, f⟩ + ⟨b, g⟩`.
//!
//! The quadratic cost separates over axes, so the soft-min over all cells is
//! computed one axis at a time. Zero weights enter as `log a = -∞`.

use crate::grid::Grid;
use crate::par;

#[inline]
fn lse(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn axis_centers(grid: &Grid, axis: usize) -> Vec<f64> {
    let dx = grid.cell_width(axis);
    let lo = grid.lower()[axis];
    (0..grid.n_cells()[axis]).map(|i| lo + (i as f64 + 0.5) * dx).collect()
}

/// `out_i = -ε log Σ_j exp(h_j - |x_i - x_j|²/ε)` over the cell centers of `grid`.
pub(crate) fn grid_soft_min(grid: &Grid, h: &[f64], eps: f64, out: &mut [f64]) {
    let x0 = axis_centers(grid, 0);
    let n0 = x0.len();
    if grid.dim() == 1 {
        par::fill_indexed(out, |i| -eps * lse(h.iter().zip(&x0).map(|(hj, xj)| hj - (x0[i] - xj).powi(2) / eps)));
        return;
    }
    let x1 = axis_centers(grid, 1);
    let n1 = x1.len();
    let mut a = vec![0.0; n0 * n1];
    par::fill_indexed(&mut a, |idx| {
        let (i0, j1) = (idx % n0, idx / n0);
        let row = &h[j1 * n0..(j1 + 1) * n0];
        lse(row.iter().zip(&x0).map(|(hj, xj)| hj - (x0[i0] - xj).powi(2) / eps))
    });
    par::fill_indexed(out, |idx| {
        let (i0, i1) = (idx % n0, idx / n0);
        -eps * lse((0..n1).map(|j1| a[i0 + n0 * j1] - (x1[i1] - x1[j1]).powi(2) / eps))
    });
}

/// Normalized weights and their logarithms (`-∞` for empty cells).
pub(crate) fn log_weights(masses: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let total: f64 = masses.iter().sum();
    let w: Vec<f64> = masses.iter().map(|m| (m / total).max(0.0)).collect();
    let lw = w.iter().map(|x| if *x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect();
    (w, lw)
}

pub(crate) struct DualSolution {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
    pub converged: bool,
}

/// ε-scaling schedule ending at `eps`.
fn schedule(eps: f64, scale: f64) -> Vec<f64> {
    let mut out = vec![];
    let mut e = scale.max(eps);
    while e > eps {
        out.push(e);
        e *= 0.5;
    }
    out.push(eps);
    out
}

/// `Σ_i w_i |exp((f_i - f'_i)/ε) - 1|`: the row-marginal defect of the plan built from `f`.
pub(crate) fn marginal_defect(w: &[f64], f_old: &[f64], f_new: &[f64], eps: f64) -> f64 {
    w.iter()
        .zip(f_old.iter().zip(f_new))
        .filter(|(wi, _)| **wi > 0.0)
        .map(|(wi, (a, b))| wi * ((a - b) / eps).exp_m1().abs())
        .sum()
}

fn shifted(lw: &[f64], f: &[f64], eps: f64, out: &mut [f64]) {
    for (o, (l, fi)) in out.iter_mut().zip(lw.iter().zip(f)) {
        *o = l + fi / eps;
    }
}

type Weights = (Vec<f64>, Vec<f64>);

/// Asymmetric problem between weights `a` and `b` on the same grid.
pub(crate) fn solve_dual(grid: &Grid, a: &Weights, b: &Weights, eps: f64, max_iter: usize, tol: f64) -> DualSolution {
    let n = grid.len();
    let (mut f, mut g, mut f_new, mut h) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    let steps = schedule(eps, grid.diameter_sq());
    let last = steps.len() - 1;
    for (k, e) in steps.into_iter().enumerate() {
        let budget = if k == last { max_iter.saturating_sub(iterations) } else { 20 };
        for _ in 0..budget {
            shifted(&a.1, &f, e, &mut h);
            grid_soft_min(grid, &h, e, &mut g);
            shifted(&b.1, &g, e, &mut h);
            grid_soft_min(grid, &h, e, &mut f_new);
            marginal_error = marginal_defect(&a.0, &f, &f_new, e);
            std::mem::swap(&mut f, &mut f_new);
            iterations += 1;
            if k == last && marginal_error <= tol {
                break;
            }
        }
    }
    let converged = marginal_error <= tol;
    DualSolution { f, g, iterations, marginal_error, converged }
}

/// Symmetric problem `OT_ε(a, a)` by averaged fixed-point iteration; returns
/// `(2⟨a, f⟩, iterations, defect)`.
pub(crate) fn solve_symmetric(grid: &Grid, a: &Weights, eps: f64, max_iter: usize, tol: f64) -> (f64, usize, f64) {
    let n = grid.len();
    let (mut f, mut t, mut h) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut err = f64::INFINITY;
    let mut iterations = 0;
    let steps = schedule(eps, grid.diameter_sq());
    let last = steps.len() - 1;
    for (k, e) in steps.into_iter().enumerate() {
        let budget = if k == last { max_iter.saturating_sub(iterations) } else { 20 };
        for _ in 0..budget {
            shifted(&a.1, &f, e, &mut h);
            grid_soft_min(grid, &h, e, &mut t);
            err = marginal_defect(&a.0, &f, &t, e);
            for (fo, tn) in f.iter_mut().zip(&t) {
                *fo = 0.5 * (*fo + tn);
            }
            iterations += 1;
            if k == last && err <= tol {
                break;
            }
        }
    }
    let value = 2.0 * a.0.iter().zip(&f).filter(|(w, _)| **w > 0.0).map(|(w, fi)| w * fi).sum::<f64>();
    (value, iterations, err)
}

/// Dense row-major plan over all cells.
pub(crate) fn plan(grid: &Grid, la: &[f64], lb: &[f64], f: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let n = grid.len();
    let mut out = vec![0.0; n * n];
    par::fill_indexed(&mut out, |idx| {
        let (i, j) = (idx / n, idx % n);
        let c = grid.dist_sq(grid.center(i), grid.center(j));
        (la[i] + lb[j] + (f[i] + g[j] - c) / eps).exp()
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_soft_min_matches_direct_sum() {
        let g = Grid::new_2d([0.0, -0.5], [1.0, 0.5], [5, 7]).unwrap();
        let n = g.len();
        let h: Vec<f64> = (0..n).map(|i| if i % 4 == 1 { f64::NEG_INFINITY } else { (i as f64 * 0.7).sin() }).collect();
        let eps = 0.05;
        let mut out = vec![0.0; n];
        grid_soft_min(&g, &h, eps, &mut out);
        for i in 0..n {
            let direct = -eps * lse((0..n).map(|j| h[j] - g.dist_sq(g.center(i), g.center(j)) / eps));
            assert!((out[i] - direct).abs() < 1e-12, "{i}: {} vs {direct}", out[i]);
        }
    }
}
