//! One minimizing-movement step
//! `z⁺ = argmin_z { d²(z, z*)/(2h) + E(z) }` and trajectories built from it.
//!
//! Two inner solvers are available:
//!
//! * [`InnerSolverKind::Exact1d`]: Newton-type descent on the exact discrete
//!   objective in quantile (cumulative-mass) coordinates, 1-D only.
//! * [`InnerSolverKind::Entropic`]: entropic-proximal scaling iterations with
//!   the coupling potential frozen and majorized per sweep; any dimension.

mod el;
mod entropic;
mod newton1d;

use serde::{Deserialize, Serialize};

use crate::energy::{total_energy, EnergyBreakdown, ModelParams, RHO_FLOOR};
use crate::grid::{CellField, Density, Grid, ScalarField, State};
use crate::testfn::{standard_family, Bump};
use crate::transport;
use crate::{Error, Result};

pub use el::{euler_lagrange_residual, ElResidual};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolverKind {
    /// `Exact1d` on 1-D grids, `Entropic` otherwise.
    Auto,
    Exact1d,
    Entropic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSolverConfig {
    pub kind: InnerSolverKind,
    /// Stop when the objective decreases by less than this in one iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Entropic regularization; `None` selects `1e-3 · diam²`.
    pub epsilon: Option<f64>,
    /// Compute the Euler–Lagrange residual after every step (1-D exact mode).
    pub el_residual: bool,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self { kind: InnerSolverKind::Auto, tol: 1e-10, max_iter: 200, epsilon: None, el_residual: true }
    }
}

impl InnerSolverConfig {
    pub fn resolved_kind(&self, grid: &Grid) -> InnerSolverKind {
        match self.kind {
            InnerSolverKind::Auto if grid.dim() == 1 => InnerSolverKind::Exact1d,
            InnerSolverKind::Auto => InnerSolverKind::Entropic,
            k => k,
        }
    }

    pub fn epsilon_for(&self, grid: &Grid) -> f64 {
        self.epsilon.unwrap_or_else(|| transport::default_epsilon(grid))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!("inner tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("inner max_iter must be at least 1".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidArgument(format!("epsilon must be positive, got {e}")));
            }
        }
        Ok(())
    }
}

/// Everything a step reports apart from the new state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// `d²(z⁺, z*)/(2h) + E(z⁺)`.
    pub f_h_value: f64,
    pub energy: EnergyBreakdown,
    pub step_distance_sq: f64,
    pub inner_iterations: usize,
    /// Objective decrease in the last inner iteration.
    pub inner_residual: f64,
    pub converged: bool,
    pub solver: InnerSolverKind,
    pub el_residual_u: Option<f64>,
    pub el_residual_v: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JKOStepReport {
    pub z_next: State,
    pub record: StepRecord,
}

pub(crate) struct InnerOutcome {
    pub z: State,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Transport cost measured by the solver itself, when it has one.
    pub distance_sq: Option<f64>,
}

fn check_inputs(z: &State, u_pot: &ScalarField, v_pot: &ScalarField) -> Result<()> {
    if z.grid() != u_pot.grid() || z.grid() != v_pot.grid() {
        return Err(Error::GridMismatch);
    }
    for (name, rho) in [("u", &z.u), ("v", &z.v)] {
        if (rho.mass() - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidDensity(format!("{name} has mass {}", rho.mass())));
        }
    }
    Ok(())
}

/// Shift a state by `θ` towards uniform so that every cell carries mass.
pub(crate) fn lift_vacuum(rho: &Density, theta: f64) -> Density {
    if rho.values().iter().all(|v| *v > RHO_FLOOR * 1e10) {
        return rho.clone();
    }
    let c = 1.0 / rho.grid().volume();
    Density::from_values_unchecked(*rho.grid(), rho.values().iter().map(|v| (1.0 - theta) * v + theta * c).collect())
}

/// One minimizing-movement step from `z_prev`.
pub fn jko_step(
    z_prev: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    inner: &InnerSolverConfig,
) -> Result<JKOStepReport> {
    check_inputs(z_prev, u_pot, v_pot)?;
    inner.validate()?;
    let grid = *z_prev.grid();
    let kind = inner.resolved_kind(&grid);
    let eps = inner.epsilon_for(&grid);
    let outcome = match kind {
        InnerSolverKind::Exact1d => {
            if grid.dim() != 1 {
                return Err(Error::InvalidArgument("the exact inner solver needs a 1-D grid".into()));
            }
            newton1d::solve(z_prev, params, u_pot, v_pot, inner)?
        }
        _ => entropic::solve(z_prev, params, u_pot, v_pot, inner, eps)?,
    };
    let z_next = outcome.z;
    let energy = total_energy(&z_next, params, u_pot, v_pot)?;
    let step_distance_sq = match outcome.distance_sq {
        Some(d) => d,
        None => transport::product_distance_sq(&z_next, z_prev, transport::TransportMode::Exact1d, None)?,
    };
    let (el_u, el_v) = if inner.el_residual && kind == InnerSolverKind::Exact1d {
        let r = euler_lagrange_residual(z_prev, &z_next, params, u_pot, v_pot, &standard_family(&grid))?;
        (Some(r.res_u), Some(r.res_v))
    } else {
        (None, None)
    };
    Ok(JKOStepReport {
        record: StepRecord {
            f_h_value: step_distance_sq / (2.0 * params.h) + energy.total,
            energy,
            step_distance_sq,
            inner_iterations: outcome.iterations,
            inner_residual: outcome.residual,
            converged: outcome.converged,
            solver: kind,
            el_residual_u: el_u,
            el_residual_v: el_v,
        },
        z_next,
    })
}

/// Minimizing-movement trajectory `z⁽⁰⁾, …, z⁽ᴺ⁾` with its piecewise-constant interpolation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub params: ModelParams,
    pub u_pot: ScalarField,
    pub v_pot: ScalarField,
    pub inner: InnerSolverConfig,
    /// `records[n]` describes the step from `states[n]` to `states[n + 1]`.
    pub records: Vec<StepRecord>,
    /// Energy of the initial state.
    pub initial_energy: EnergyBreakdown,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        self.states[0].grid()
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn h(&self) -> f64 {
        self.params.h
    }

    pub fn final_time(&self) -> f64 {
        self.n_steps() as f64 * self.params.h
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.params.h
    }

    /// Index `n` with `nh ≤ t < (n+1)h`, clamped to the computed range.
    pub fn index_at(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let n = (t / self.params.h * (1.0 + 1e-12)).floor() as usize;
        n.min(self.n_steps())
    }

    /// `z_h(t)`.
    pub fn at(&self, t: f64) -> &State {
        &self.states[self.index_at(t)]
    }

    /// `E(z⁽ⁿ⁾)` for `n = 0..=N`.
    pub fn energies(&self) -> Vec<f64> {
        std::iter::once(self.initial_energy.total).chain(self.records.iter().map(|r| r.energy.total)).collect()
    }

    pub fn sum_inner_residuals(&self) -> f64 {
        self.records.iter().map(|r| r.inner_residual).sum()
    }

    /// Largest Euler–Lagrange residual over all steps and both species.
    pub fn max_el_residual(&self) -> Option<f64> {
        self.records
            .iter()
            .flat_map(|r| [r.el_residual_u, r.el_residual_v])
            .collect::<Option<Vec<f64>>>()
            .filter(|v| !v.is_empty())
            .map(|v| v.into_iter().fold(0.0, f64::max))
    }
}

/// Run `n_steps` minimizing-movement steps from `z0`.
pub fn run_trajectory(
    z0: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    n_steps: usize,
    inner: &InnerSolverConfig,
) -> Result<Trajectory> {
    run_trajectory_with(z0, params, u_pot, v_pot, n_steps, inner, |_, _| {})
}

/// As [`run_trajectory`], calling `observer(n, report)` after each step.
pub fn run_trajectory_with(
    z0: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
    n_steps: usize,
    inner: &InnerSolverConfig,
    mut observer: impl FnMut(usize, &JKOStepReport),
) -> Result<Trajectory> {
    check_inputs(z0, u_pot, v_pot)?;
    let initial_energy = total_energy(z0, params, u_pot, v_pot)?;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut records = Vec::with_capacity(n_steps);
    states.push(z0.clone());
    for n in 0..n_steps {
        let report = jko_step(&states[n], params, u_pot, v_pot, inner)?;
        observer(n, &report);
        states.push(report.z_next);
        records.push(report.record);
    }
    Ok(Trajectory {
        states,
        params: *params,
        u_pot: u_pot.clone(),
        v_pot: v_pot.clone(),
        inner: *inner,
        records,
        initial_energy,
    })
}

/// Test-function family used for per-step residuals.
pub fn default_zeta_family(grid: &Grid) -> Vec<Bump> {
    standard_family(grid)
}
