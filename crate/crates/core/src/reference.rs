//! Explicit finite-volume integrator for the PNP system, used as an oracle,
//! and the auxiliary heat / porous-medium flows used by flow-interchange probes.
//!
//! Fluxes live on interior faces; boundary faces carry zero flux, so mass
//! is conserved to round-off.

use serde::{Deserialize, Serialize};

use crate::elliptic::{neumann_laplacian, PoissonSolver};
use crate::energy::{DiffusionLaw, ModelParams};
use crate::grid::{CellField, Density, Grid, ScalarField, State};
use crate::par;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Centered pressure difference plus upwinded drift.
    Upwind,
    /// `-ũ ∇(f'(ρ) + Φ)` with the face mobility `ũ`; exact on discrete Gibbs states.
    Centered,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FVConfig {
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub flux_scheme: FluxScheme,
}

impl Default for FVConfig {
    fn default() -> Self {
        Self { cfl_safety: 0.4, dt_max: 1e-3, flux_scheme: FluxScheme::Centered }
    }
}

impl FVConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidArgument(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if !(self.dt_max > 0.0) {
            return Err(Error::InvalidArgument(format!("dt_max must be positive, got {}", self.dt_max)));
        }
        Ok(())
    }
}

const DT_MIN: f64 = 1e-14;

/// Visit the neighbours of cell `i`: `(neighbour, axis, +1 | -1)`.
fn neighbours(grid: &Grid, i: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    let [n0, n1] = grid.n_cells();
    let (i0, i1) = (i % n0, i / n0);
    let dim = grid.dim();
    let mut out = [(0usize, 0usize, 0.0f64); 4];
    let mut k = 0;
    if i0 + 1 < n0 {
        out[k] = (i + 1, 0, 1.0);
        k += 1;
    }
    if i0 >= 1 {
        out[k] = (i - 1, 0, -1.0);
        k += 1;
    }
    if dim == 2 {
        if i1 + 1 < n1 {
            out[k] = (i + n0, 1, 1.0);
            k += 1;
        }
        if i1 >= 1 {
            out[k] = (i - n0, 1, -1.0);
            k += 1;
        }
    }
    out.into_iter().take(k)
}

/// Flux from `a` to `b` across their shared face (positive when mass moves `a → b`).
fn face_flux(law: DiffusionLaw, scheme: FluxScheme, ra: f64, rb: f64, pa: f64, pb: f64, dx: f64) -> f64 {
    let dphi = (pb - pa) / dx;
    match scheme {
        FluxScheme::Upwind => {
            let vel = -dphi;
            let up = if vel > 0.0 { ra } else { rb };
            -(law.pressure(rb) - law.pressure(ra)) / dx + vel * up
        }
        FluxScheme::Centered => -(law.pressure(rb) - law.pressure(ra)) / dx - law.mobility(ra, rb) * dphi,
    }
}

/// Explicit step `ρ ← ρ - dt div F` for one species with potential `phi`.
fn fv_step(grid: &Grid, law: DiffusionLaw, scheme: FluxScheme, rho: &[f64], phi: &[f64], dt: f64, out: &mut [f64]) {
    par::fill_indexed(out, |i| {
        let mut div = 0.0;
        for (j, axis, _) in neighbours(grid, i) {
            let dx = grid.cell_width(axis);
            div += face_flux(law, scheme, rho[i], rho[j], phi[i], phi[j], dx) / dx;
        }
        rho[i] - dt * div
    });
}

fn max_drift(grid: &Grid, phi: &[f64]) -> f64 {
    let mut rate = 0.0;
    for axis in 0..grid.dim() {
        let dx = grid.cell_width(axis);
        let mut vmax = 0.0f64;
        for i in 0..grid.len() {
            for (j, a, s) in neighbours(grid, i) {
                if a == axis && s > 0.0 {
                    vmax = vmax.max((phi[j] - phi[i]).abs() / dx);
                }
            }
        }
        rate += vmax / dx;
    }
    rate
}

fn diffusion_rate(grid: &Grid, law: DiffusionLaw, rho: &[f64]) -> f64 {
    let dmax =
        if law.is_linear() { 1.0 } else { rho.iter().fold(0.0f64, |m, r| m.max(law.m * r.max(0.0).powf(law.m - 1.0))) };
    let dx = (0..grid.dim()).map(|a| grid.cell_width(a)).fold(f64::INFINITY, f64::min);
    2.0 * grid.dim() as f64 * dmax / (dx * dx)
}

/// Statistics of an oracle run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FVStats {
    pub steps: usize,
    pub min_dt: f64,
    pub max_dt: f64,
}

/// Integrate the PNP system to `t_final`.
pub fn fv_evolve(
    z0: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    t_final: f64,
    cfg: &FVConfig,
) -> Result<State> {
    fv_evolve_with_stats(z0, params, u_pot, v_pot, t_final, cfg).map(|(z, _)| z)
}

pub fn fv_evolve_with_stats(
    z0: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    t_final: f64,
    cfg: &FVConfig,
) -> Result<(State, FVStats)> {
    cfg.validate()?;
    let grid = *z0.grid();
    if grid != *u_pot.grid() || grid != *v_pot.grid() {
        return Err(Error::GridMismatch);
    }
    if !(t_final >= 0.0) {
        return Err(Error::InvalidArgument(format!("final time must be nonnegative, got {t_final}")));
    }
    let law = params.law;
    let poisson = PoissonSolver::new(grid);
    let mut u = z0.u.values().to_vec();
    let mut v = z0.v.values().to_vec();
    let (mut un, mut vn) = (vec![0.0; u.len()], vec![0.0; v.len()]);
    let mut psi: Option<Vec<f64>> = None;
    let mut t = 0.0;
    let mut stats = FVStats { steps: 0, min_dt: f64::INFINITY, max_dt: 0.0 };
    while t < t_final * (1.0 - 1e-14) {
        let charge = ScalarField::new(grid, u.iter().zip(&v).map(|(a, b)| a - b).collect())?;
        let sol = poisson.solve_with_guess(&charge, psi.as_deref())?;
        let p = sol.psi.into_values();
        let phi_u: Vec<f64> = u_pot.values().iter().zip(&p).map(|(a, b)| a + b).collect();
        let phi_v: Vec<f64> = v_pot.values().iter().zip(&p).map(|(a, b)| a - b).collect();
        psi = Some(p);
        let rate = diffusion_rate(&grid, law, &u).max(diffusion_rate(&grid, law, &v))
            + max_drift(&grid, &phi_u).max(max_drift(&grid, &phi_v));
        let mut dt = (cfg.cfl_safety / rate).min(cfg.dt_max);
        if dt < DT_MIN {
            return Err(Error::TimeStepUnderflow(dt));
        }
        if t + dt > t_final {
            dt = t_final - t;
        }
        fv_step(&grid, law, cfg.flux_scheme, &u, &phi_u, dt, &mut un);
        fv_step(&grid, law, cfg.flux_scheme, &v, &phi_v, dt, &mut vn);
        std::mem::swap(&mut u, &mut un);
        std::mem::swap(&mut v, &mut vn);
        for r in u.iter_mut().chain(v.iter_mut()) {
            // Round-off can push an emptied cell a few ulps below zero.
            if *r < 0.0 && *r > -1e-14 {
                *r = 0.0;
            }
        }
        if let Some(bad) = u.iter().chain(&v).find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::InvalidDensity(format!("oracle produced {bad}; reduce cfl_safety")));
        }
        t += dt;
        stats.steps += 1;
        stats.min_dt = stats.min_dt.min(dt);
        stats.max_dt = stats.max_dt.max(dt);
    }
    Ok((State { u: Density::from_values_unchecked(grid, u), v: Density::from_values_unchecked(grid, v) }, stats))
}

fn min_dx(grid: &Grid) -> f64 {
    (0..grid.dim()).map(|a| grid.cell_width(a)).fold(f64::INFINITY, f64::min)
}

/// One explicit step of `∂ρ = Δ(ρ^p)`; `p = 1` is the heat equation.
fn power_step(grid: &Grid, rho: &mut [f64], p: f64, dt: f64) {
    let pressure: Vec<f64> = if p == 1.0 { rho.to_vec() } else { rho.iter().map(|r| r.max(0.0).powf(p)).collect() };
    let lap = neumann_laplacian(grid, &pressure);
    for (r, l) in rho.iter_mut().zip(lap) {
        *r = (*r + dt * l).max(0.0);
    }
}

fn stable_dt(grid: &Grid, rho: &[f64], p: f64) -> f64 {
    let dmax = if p == 1.0 { 1.0 } else { rho.iter().fold(0.0f64, |m, r| m.max(p * r.max(0.0).powf(p - 1.0))) };
    let dx = min_dx(grid);
    0.45 * dx * dx / (2.0 * grid.dim() as f64 * dmax.max(1e-300))
}

fn evolve_power(rho: &Density, p: f64, t: f64, mut each: impl FnMut(f64, &[f64])) -> Density {
    let grid = *rho.grid();
    let mut r = rho.values().to_vec();
    let mut s = 0.0;
    each(0.0, &r);
    while s < t * (1.0 - 1e-14) {
        let dt = stable_dt(&grid, &r, p).min(t - s);
        power_step(&grid, &mut r, p, dt);
        s += dt;
        each(s, &r);
    }
    Density::from_values_unchecked(grid, r)
}

/// No-flux heat flow for time `t`.
pub fn heat_evolve(rho: &Density, t: f64) -> Density {
    evolve_power(rho, 1.0, t, |_, _| {})
}

/// No-flux porous-medium flow `∂ρ = Δ(ρ^p)` for time `t`.
pub fn pme_evolve(rho: &Density, p_exponent: f64, t: f64) -> Result<Density> {
    if !(p_exponent > 1.0) {
        return Err(Error::InvalidArgument(format!("porous-medium exponent must exceed 1, got {p_exponent}")));
    }
    Ok(evolve_power(rho, p_exponent, t, |_, _| {}))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeFlow {
    Heat,
    Pme,
}

/// One sample of a flow-interchange probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub t: f64,
    /// `d/dt E_diff` along the probe flow.
    pub de_diff_dt: f64,
    /// `λ ∫(ũ^p + ṽ^p) - d/dt E_ext`.
    pub ext_gap: f64,
    /// `d/dt E_cpl = ∫ψ ∂_t(ũ - ṽ)`.
    pub de_cpl_dt: f64,
    /// `-∫(ũ - ṽ)(ũ^p - ṽ^p)`.
    pub cpl_pairing: f64,
    /// `(ũ, ṽ)` norms at `q = 2, p, ∞`, summed over species.
    pub lp_norms: [f64; 3],
    /// `H(ũ) + H(ṽ)`.
    pub entropy: f64,
    /// Heat flow only: `(1/t)∫₀ᵗ D` and its bound.
    pub avg_dissipation: Option<f64>,
    pub dissipation_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    pub flow: ProbeFlow,
    pub p_exponent: f64,
    pub samples: Vec<ProbeSample>,
    pub max_de_cpl_dt: f64,
    pub max_de_diff_dt: f64,
    pub min_ext_gap: f64,
    /// `min(bound - average)` over heat samples.
    pub min_dissipation_slack: Option<f64>,
    pub lp_nonincreasing: bool,
    pub entropy_nonincreasing: bool,
}

/// `(4/m) Σ_faces |∇ρ^{m/2}|² · |cell|`.
pub fn fisher_dissipation(rho: &[f64], grid: &Grid, m: f64) -> f64 {
    let root: Vec<f64> = rho.iter().map(|r| r.max(0.0).powf(0.5 * m)).collect();
    let mut acc = 0.0;
    for i in 0..grid.len() {
        for (j, axis, s) in neighbours(grid, i) {
            if s > 0.0 {
                let g = (root[j] - root[i]) / grid.cell_width(axis);
                acc += g * g;
            }
        }
    }
    4.0 / m * acc * grid.cell_volume()
}

/// Run the auxiliary flow from a minimizer `z_min` of the step started at `z_prev`.
///
/// Samples are taken at `n_samples` equally spaced times in `(0, t_probe]`.
#[allow(clippy::too_many_arguments)]
pub fn dissipation_probe(
    z_min: &State,
    z_prev: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    flow: ProbeFlow,
    p_exponent: f64,
    t_probe: f64,
    n_samples: usize,
) -> Result<DissipationReport> {
    let grid = *z_min.grid();
    if grid != *z_prev.grid() || grid != *u_pot.grid() || grid != *v_pot.grid() {
        return Err(Error::GridMismatch);
    }
    let p = match flow {
        ProbeFlow::Heat => 1.0,
        ProbeFlow::Pme => {
            if !(p_exponent > 1.0) {
                return Err(Error::InvalidArgument(format!("porous-medium exponent must exceed 1, got {p_exponent}")));
            }
            p_exponent
        }
    };
    if !(t_probe > 0.0) || n_samples == 0 {
        return Err(Error::InvalidArgument("probe needs a positive time and at least one sample".into()));
    }
    let law = params.law;
    let m = law.m;
    let vol = grid.cell_volume();
    let poisson = PoissonSolver::new(grid);
    let h_prev = z_prev.u.boltzmann_entropy() + z_prev.v.boltzmann_entropy();
    let mut u = z_min.u.values().to_vec();
    let mut v = z_min.v.values().to_vec();
    let mut s = 0.0;
    let mut integral = 0.0;
    let dissipation = |u: &[f64], v: &[f64]| fisher_dissipation(u, &grid, m) + fisher_dissipation(v, &grid, m);
    let mut d_prev = dissipation(&u, &v);
    let mut samples = Vec::with_capacity(n_samples);
    let mut psi_guess: Option<Vec<f64>> = None;
    for k in 1..=n_samples {
        let target = t_probe * k as f64 / n_samples as f64;
        while s < target * (1.0 - 1e-14) {
            let dt = stable_dt(&grid, &u, p).min(stable_dt(&grid, &v, p)).min(target - s);
            power_step(&grid, &mut u, p, dt);
            power_step(&grid, &mut v, p, dt);
            s += dt;
            let d = dissipation(&u, &v);
            integral += 0.5 * dt * (d + d_prev);
            d_prev = d;
        }
        let pu: Vec<f64> = u.iter().map(|r| r.powf(p)).collect();
        let pv: Vec<f64> = v.iter().map(|r| r.powf(p)).collect();
        let du = neumann_laplacian(&grid, &pu);
        let dv = neumann_laplacian(&grid, &pv);
        let charge = ScalarField::new(grid, u.iter().zip(&v).map(|(a, b)| a - b).collect())?;
        let sol = poisson.solve_with_guess(&charge, psi_guess.as_deref())?;
        let psi = sol.psi.values();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * vol;
        let de_diff_dt =
            u.iter().zip(&du).chain(v.iter().zip(&dv)).map(|(r, l)| law.df(r.max(1e-300)) * l).sum::<f64>() * vol;
        let de_ext_dt = dot(u_pot.values(), &du) + dot(v_pot.values(), &dv);
        let ext_gap = params.lambda * (pu.iter().sum::<f64>() + pv.iter().sum::<f64>()) * vol - de_ext_dt;
        let dq: Vec<f64> = du.iter().zip(&dv).map(|(a, b)| a - b).collect();
        let de_cpl_dt = dot(psi, &dq);
        let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
        let wp: Vec<f64> = pu.iter().zip(&pv).map(|(a, b)| a - b).collect();
        let cpl_pairing = -dot(&w, &wp);
        let du_ = Density::from_values_unchecked(grid, u.clone());
        let dv_ = Density::from_values_unchecked(grid, v.clone());
        let norm = |q: f64| du_.lp_norm(q).unwrap_or(f64::NAN) + dv_.lp_norm(q).unwrap_or(f64::NAN);
        let lp_norms = [norm(2.0), norm(p.max(1.0)), norm(f64::INFINITY)];
        let entropy = du_.boltzmann_entropy() + dv_.boltzmann_entropy();
        let (avg, bound) = match flow {
            ProbeFlow::Heat => {
                let bound = 2.0 * params.lambda + (h_prev - entropy) / params.h;
                (Some(integral / s), Some(bound))
            }
            ProbeFlow::Pme => (None, None),
        };
        psi_guess = Some(sol.psi.into_values());
        samples.push(ProbeSample {
            t: s,
            de_diff_dt,
            ext_gap,
            de_cpl_dt,
            cpl_pairing,
            lp_norms,
            entropy,
            avg_dissipation: avg,
            dissipation_bound: bound,
        });
    }
    let z0_norms = {
        let n = |q: f64| z_min.u.lp_norm(q).unwrap_or(f64::NAN) + z_min.v.lp_norm(q).unwrap_or(f64::NAN);
        [n(2.0), n(p.max(1.0)), n(f64::INFINITY)]
    };
    let h0 = z_min.u.boltzmann_entropy() + z_min.v.boltzmann_entropy();
    let mut lp_nonincreasing = true;
    let mut entropy_nonincreasing = true;
    let (mut last_norms, mut last_h) = (z0_norms, h0);
    for smp in &samples {
        for q in 0..3 {
            if smp.lp_norms[q] > last_norms[q] * (1.0 + 1e-12) + 1e-14 {
                lp_nonincreasing = false;
            }
        }
        if smp.entropy > last_h + 1e-12 {
            entropy_nonincreasing = false;
        }
        last_norms = smp.lp_norms;
        last_h = smp.entropy;
    }
    let fold_max = |f: &dyn Fn(&ProbeSample) -> f64| samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let max_de_cpl_dt = fold_max(&|s| s.de_cpl_dt);
    let max_de_diff_dt = fold_max(&|s| s.de_diff_dt);
    let min_ext_gap = samples.iter().map(|s| s.ext_gap).fold(f64::INFINITY, f64::min);
    let min_dissipation_slack = match flow {
        ProbeFlow::Heat => Some(
            samples
                .iter()
                .map(|s| s.dissipation_bound.unwrap() - s.avg_dissipation.unwrap())
                .fold(f64::INFINITY, f64::min),
        ),
        ProbeFlow::Pme => None,
    };
    Ok(DissipationReport {
        flow,
        p_exponent: p,
        samples,
        max_de_cpl_dt,
        max_de_diff_dt,
        min_ext_gap,
        min_dissipation_slack,
        lp_nonincreasing,
        entropy_nonincreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(g: Grid, c: f64, w: f64) -> Density {
        Density::normalize(g, ScalarField::from_fn(g, |x| (-(x[0] - c).powi(2) / (2.0 * w * w)).exp()).into_values())
            .unwrap()
    }

    #[test]
    fn symmetric_data_stays_symmetric() {
        let g = Grid::new_1d(0.0, 1.0, 64).unwrap();
        let a = bump(g, 0.4, 0.1);
        let z = State::new(a.clone(), a).unwrap();
        let pot = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
        let p = ModelParams::new(1.0, 0.01, &pot, &pot).unwrap();
        let out = fv_evolve(&z, &p, &pot, &pot, 0.05, &FVConfig::default()).unwrap();
        for (a, b) in out.u.values().iter().zip(out.v.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!((out.u.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heat_keeps_uniform_and_mass() {
        let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [12, 10]).unwrap();
        let u = Density::uniform(g);
        let out = heat_evolve(&u, 0.1);
        for (a, b) in out.values().iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn pme_rejects_bad_exponent() {
        let g = Grid::new_1d(0.0, 1.0, 16).unwrap();
        assert!(pme_evolve(&Density::uniform(g), 1.0, 0.1).is_err());
    }
}
