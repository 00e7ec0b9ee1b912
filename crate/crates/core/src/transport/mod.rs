//! Quadratic Wasserstein distances between cell-averaged densities.
//!
//! Two routes compute the same object: the exact quantile formula on a line
//! and the debiased entropic (Sinkhorn) divergence in any dimension, with
//! ground cost `|x - y|²` between cell midpoints.

pub(crate) mod exact1d;
pub(crate) mod sinkhorn;

use serde::{Deserialize, Serialize};

use crate::grid::{CellField, Density, Grid, State};
use crate::{Error, Result};

use exact1d::Quantile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Exact1d,
    Entropic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub marginal_tol: f64,
    /// Keep the dense coupling in the result.
    pub keep_plan: bool,
}

impl SinkhornConfig {
    /// `ε = 1e-3 · diam²` for the given grid.
    pub fn for_grid(grid: &Grid) -> Self {
        Self { epsilon: default_epsilon(grid), max_iter: 5000, marginal_tol: 1e-9, keep_plan: false }
    }
}

pub fn default_epsilon(grid: &Grid) -> f64 {
    1e-3 * grid.diameter_sq()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportResult {
    /// Squared distance (or its entropic surrogate).
    pub cost: f64,
    /// Monotone map sampled at cell midpoints of the source (exact 1-D only).
    pub map: Option<Vec<f64>>,
    /// Row-major coupling over all grid cells (entropic only, on request).
    pub plan: Option<Vec<f64>>,
    pub mode: TransportMode,
    pub epsilon: Option<f64>,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Exact `W₂²` on a line with the optimal monotone map.
pub fn w2_exact_1d(mu: &Density, nu: &Density) -> Result<TransportResult> {
    if mu.grid() != nu.grid() {
        return Err(Error::GridMismatch);
    }
    if mu.grid().dim() != 1 {
        return Err(Error::InvalidArgument("exact transport is only available in 1-D".into()));
    }
    let qm = Quantile::from_density(mu);
    let qn = Quantile::from_density(nu);
    let cost = exact1d::w2_sq_between(&qm, &qn);
    let map = exact1d::monotone_map(mu, &qn);
    Ok(TransportResult {
        cost,
        map: Some(map),
        plan: None,
        mode: TransportMode::Exact1d,
        epsilon: None,
        iterations: 0,
        marginal_error: 0.0,
    })
}

/// Debiased entropic cost `S_ε(μ,ν) = OT_ε(μ,ν) - ½OT_ε(μ,μ) - ½OT_ε(ν,ν)`.
pub fn sinkhorn_w2(mu: &Density, nu: &Density, cfg: &SinkhornConfig) -> Result<TransportResult> {
    let grid = mu.grid();
    if grid != nu.grid() {
        return Err(Error::GridMismatch);
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", cfg.epsilon)));
    }
    let a = sinkhorn::log_weights(&mu.masses());
    let b = sinkhorn::log_weights(&nu.masses());
    let (eps, it, tol) = (cfg.epsilon, cfg.max_iter, cfg.marginal_tol);
    let (ot_aa, it_a, err_a) = sinkhorn::solve_symmetric(grid, &a, eps, it, tol);
    let identical = mu.values() == nu.values();
    let (ot_ab, ot_bb, iterations, marginal_error, dual) = if identical {
        (ot_aa, ot_aa, it_a, err_a, None)
    } else {
        let (ot_bb, it_b, err_b) = sinkhorn::solve_symmetric(grid, &b, eps, it, tol);
        let dual = sinkhorn::solve_dual(grid, &a, &b, eps, it, tol);
        if !dual.converged {
            return Err(Error::SinkhornNotConverged {
                iterations: dual.iterations,
                marginal_error: dual.marginal_error,
            });
        }
        let pair = |w: &[f64], p: &[f64]| w.iter().zip(p).filter(|(x, _)| **x > 0.0).map(|(x, y)| x * y).sum::<f64>();
        let ot_ab = pair(&a.0, &dual.f) + pair(&b.0, &dual.g);
        let total = it_a + it_b + dual.iterations;
        let err = dual.marginal_error.max(err_a).max(err_b);
        (ot_ab, ot_bb, total, err, Some(dual))
    };
    if marginal_error > tol {
        return Err(Error::SinkhornNotConverged { iterations, marginal_error });
    }
    let plan = if cfg.keep_plan {
        let dual = match dual {
            Some(d) => d,
            None => sinkhorn::solve_dual(grid, &a, &b, eps, it, tol),
        };
        Some(sinkhorn::plan(grid, &a.1, &b.1, &dual.f, &dual.g, eps))
    } else {
        None
    };
    let cost = (ot_ab - 0.5 * ot_aa - 0.5 * ot_bb).max(0.0);
    Ok(TransportResult {
        cost,
        map: None,
        plan,
        mode: TransportMode::Entropic,
        epsilon: Some(cfg.epsilon),
        iterations,
        marginal_error,
    })
}

/// Squared distance between two densities with the selected route.
pub fn w2_sq(mu: &Density, nu: &Density, mode: TransportMode, cfg: Option<&SinkhornConfig>) -> Result<f64> {
    match mode {
        TransportMode::Exact1d => Ok(w2_exact_1d(mu, nu)?.cost),
        TransportMode::Entropic => {
            let default = SinkhornConfig::for_grid(mu.grid());
            Ok(sinkhorn_w2(mu, nu, cfg.unwrap_or(&default))?.cost)
        }
    }
}

/// `d²(z, z') = W₂²(u, u') + W₂²(v, v')`.
pub fn product_distance_sq(
    z: &State,
    z_prev: &State,
    mode: TransportMode,
    cfg: Option<&SinkhornConfig>,
) -> Result<f64> {
    Ok(w2_sq(&z.u, &z_prev.u, mode, cfg)? + w2_sq(&z.v, &z_prev.v, mode, cfg)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushforwardCheck {
    /// `∫|T_#μ - ν|`.
    pub l1_defect: f64,
    /// Whether the sampled map is nondecreasing.
    pub monotone: bool,
}

impl PushforwardCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.monotone && self.l1_defect <= tol
    }
}

/// Push `μ` forward under a map sampled at its cell midpoints and compare with `ν`.
///
/// Each source cell is split into sub-samples whose images are obtained by
/// linear interpolation of the sampled map and deposited into target cells.
pub fn brenier_map_pushforward_check(mu: &Density, nu: &Density, map: &[f64]) -> Result<PushforwardCheck> {
    let grid = mu.grid();
    if grid != nu.grid() {
        return Err(Error::GridMismatch);
    }
    if grid.dim() != 1 || map.len() != grid.len() {
        return Err(Error::InvalidArgument("pushforward check needs a 1-D map sampled on every cell".into()));
    }
    let monotone = map.windows(2).all(|w| w[1] >= w[0]);
    let n = grid.len();
    let dx = grid.cell_width(0);
    let lo = grid.lower()[0];
    let centers: Vec<f64> = (0..n).map(|i| grid.center(i)[0]).collect();
    let interp = |x: f64| -> f64 {
        let t = (x - centers[0]) / dx;
        if t <= 0.0 {
            return map[0];
        }
        let k = (t.floor() as usize).min(n - 2);
        let s = (t - k as f64).min(1.0);
        map[k] + s * (map[k + 1] - map[k])
    };
    const SUB: usize = 16;
    let masses = mu.masses();
    let mut pushed = vec![0.0; n];
    for (i, m) in masses.iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        for s in 0..SUB {
            let x = lo + (i as f64 + (s as f64 + 0.5) / SUB as f64) * dx;
            let y = interp(x);
            let cell = (((y - lo) / dx).floor().max(0.0) as usize).min(n - 1);
            pushed[cell] += m / SUB as f64;
        }
    }
    let l1_defect = pushed.iter().zip(nu.masses()).map(|(p, q)| (p - q).abs()).sum();
    Ok(PushforwardCheck { l1_defect, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;

    fn bump(g: Grid, c: f64, w: f64) -> Density {
        Density::normalize(g, ScalarField::from_fn(g, |x| (-(x[0] - c).powi(2) / (2.0 * w * w)).exp()).into_values())
            .unwrap()
    }

    fn half_uniform(g: Grid) -> Density {
        let mid = 0.5 * (g.lower()[0] + g.upper()[0]);
        Density::normalize(g, ScalarField::from_fn(g, |x| if x[0] < mid { 1.0 } else { 0.0 }).into_values()).unwrap()
    }

    #[test]
    fn exact_examples() {
        let g = Grid::new_1d(0.0, 1.0, 512).unwrap();
        let mu = Density::uniform(g);
        let r = w2_exact_1d(&mu, &mu).unwrap();
        assert!(r.cost.abs() < 1e-15);
        let r = w2_exact_1d(&mu, &half_uniform(g)).unwrap();
        assert!((r.cost - 1.0 / 12.0).abs() < 1e-4, "{}", r.cost);
        let map = r.map.unwrap();
        assert!(map.windows(2).all(|w| w[1] >= w[0]));
        // Narrow bumps approach point masses.
        let g = Grid::new_1d(0.0, 1.0, 2000).unwrap();
        let r = w2_exact_1d(&bump(g, 0.2, 0.002), &bump(g, 0.7, 0.002)).unwrap();
        assert!((r.cost - 0.25).abs() < 1e-4);
    }

    #[test]
    fn grid_aligned_translation_is_exact() {
        let g = Grid::new_1d(0.0, 1.0, 200).unwrap();
        let a = bump(g, 0.3, 0.04);
        let shift = 30;
        let mut vals = vec![0.0; 200];
        vals[shift..].copy_from_slice(&a.values()[..200 - shift]);
        let b = Density::normalize(g, vals).unwrap();
        let s = shift as f64 * g.cell_width(0);
        let r = w2_exact_1d(&a, &b).unwrap();
        assert!((r.cost - s * s).abs() < 1e-8, "{} vs {}", r.cost, s * s);
    }

    #[test]
    fn pushforward_examples() {
        let g = Grid::new_1d(0.0, 1.0, 512).unwrap();
        let mu = Density::uniform(g);
        let id = w2_exact_1d(&mu, &mu).unwrap();
        let c = brenier_map_pushforward_check(&mu, &mu, id.map.as_ref().unwrap()).unwrap();
        assert!(c.passes(1e-10), "{c:?}");
        let nu = half_uniform(g);
        let r = w2_exact_1d(&mu, &nu).unwrap();
        let c = brenier_map_pushforward_check(&mu, &nu, r.map.as_ref().unwrap()).unwrap();
        assert!(c.passes(2e-2), "{c:?}");
        let mut broken = r.map.unwrap();
        broken.swap(10, 300);
        let c = brenier_map_pushforward_check(&mu, &nu, &broken).unwrap();
        assert!(!c.monotone);
        assert!(!c.passes(2e-2));
    }

    #[test]
    fn sinkhorn_equal_inputs_vanish() {
        let g = Grid::new_1d(0.0, 1.0, 64).unwrap();
        let a = bump(g, 0.4, 0.1);
        let r = sinkhorn_w2(&a, &a, &SinkhornConfig::for_grid(&g)).unwrap();
        assert!(r.cost <= 1e-9);
    }

    #[test]
    fn sinkhorn_matches_exact_in_1d() {
        let g = Grid::new_1d(0.0, 1.0, 128).unwrap();
        let (a, b) = (bump(g, 0.3, 0.08), bump(g, 0.6, 0.12));
        let exact = w2_exact_1d(&a, &b).unwrap().cost;
        let ent = sinkhorn_w2(&a, &b, &SinkhornConfig::for_grid(&g)).unwrap();
        assert!(((ent.cost - exact) / exact).abs() <= 1e-2, "{} vs {exact}", ent.cost);
        assert_eq!(ent.epsilon, Some(1e-3));
    }

    #[test]
    fn sinkhorn_plan_has_requested_marginals() {
        let g = Grid::new_1d(0.0, 1.0, 24).unwrap();
        let (a, b) = (bump(g, 0.3, 0.1), bump(g, 0.6, 0.1));
        let cfg = SinkhornConfig { keep_plan: true, ..SinkhornConfig::for_grid(&g) };
        let r = sinkhorn_w2(&a, &b, &cfg).unwrap();
        let plan = r.plan.unwrap();
        let (ma, mb) = (a.masses(), b.masses());
        for i in 0..24 {
            let row: f64 = plan[i * 24..(i + 1) * 24].iter().sum();
            let col: f64 = (0..24).map(|k| plan[k * 24 + i]).sum();
            assert!((row - ma[i]).abs() < 1e-8);
            assert!((col - mb[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn entropic_error_shrinks_with_epsilon() {
        let g = Grid::new_1d(0.0, 1.0, 96).unwrap();
        let (a, b) = (bump(g, 0.35, 0.07), bump(g, 0.55, 0.1));
        let exact = w2_exact_1d(&a, &b).unwrap().cost;
        let errs: Vec<f64> = [4e-2, 1e-2, 2.5e-3]
            .iter()
            .map(|e| {
                let cfg = SinkhornConfig { epsilon: *e, ..SinkhornConfig::for_grid(&g) };
                (sinkhorn_w2(&a, &b, &cfg).unwrap().cost - exact).abs()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn product_distance_is_additive() {
        let g = Grid::new_1d(0.0, 1.0, 100).unwrap();
        let z0 = State::new(bump(g, 0.3, 0.05), bump(g, 0.6, 0.05)).unwrap();
        assert_eq!(product_distance_sq(&z0, &z0, TransportMode::Exact1d, None).unwrap(), 0.0);
        let z1 = State::new(bump(g, 0.4, 0.05), z0.v.clone()).unwrap();
        let du = w2_exact_1d(&z1.u, &z0.u).unwrap().cost;
        assert_eq!(product_distance_sq(&z1, &z0, TransportMode::Exact1d, None).unwrap(), du);
        let z2 = State::new(bump(g, 0.4, 0.05), bump(g, 0.45, 0.05)).unwrap();
        let d = product_distance_sq(&z2, &z0, TransportMode::Exact1d, None).unwrap();
        assert!((d - (0.01 + 0.0225)).abs() < 1e-5, "{d}");
    }

    #[test]
    fn exact_route_is_a_metric_on_samples() {
        use rand::{Rng, SeedableRng};
        let g = Grid::new_1d(0.0, 1.0, 60).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut rand_density =
            || Density::normalize(g, (0..60).map(|_| rng.gen_range(0.0..1.0f64).powi(3)).collect()).unwrap();
        for _ in 0..20 {
            let (a, b, c) = (rand_density(), rand_density(), rand_density());
            let d = |x: &Density, y: &Density| w2_exact_1d(x, y).unwrap().cost.sqrt();
            assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-8);
            assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-6);
        }
    }

    #[test]
    fn translated_bump_in_2d() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [32, 32]).unwrap();
        let gauss = |c: [f64; 2]| {
            Density::normalize(
                g,
                ScalarField::from_fn(g, |x| (-g.dist_sq(x, c) / (2.0 * 0.06f64.powi(2))).exp()).into_values(),
            )
            .unwrap()
        };
        let a = gauss([0.34375, 0.40625]);
        let b = gauss([0.59375, 0.53125]);
        let s2 = 0.25f64.powi(2) + 0.125f64.powi(2);
        let r = sinkhorn_w2(&a, &b, &SinkhornConfig::for_grid(&g)).unwrap();
        assert!(((r.cost - s2) / s2).abs() < 0.02, "{} vs {s2}", r.cost);
    }
}
