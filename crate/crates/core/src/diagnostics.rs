//! Post-hoc checks of the discrete estimates on a computed trajectory.
//!
//! Every boolean in a report comes with the number that decided it.

use serde::{Deserialize, Serialize};

use crate::elliptic::{cell_gradient, ibp_identity_check, solve_poisson_neumann};
use crate::grid::{CellField, Density, Grid, State};
use crate::jko::Trajectory;
use crate::reference::fisher_dissipation;
use crate::testfn::{standard_family, Bump};
use crate::transport::{product_distance_sq, TransportMode};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Default slack for the per-step energy inequality.
pub const ENERGY_SLACK: f64 = 1e-8;

/// Largest acceptable measured constant in the `L^∞` bound.
pub const LINF_CONSTANT_MAX: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub passed: bool,
    /// `max_n E(z⁽ⁿ⁺¹⁾) - E(z⁽ⁿ⁾)`.
    pub max_increase: f64,
    pub violations: usize,
    pub slack: f64,
}

pub fn check_energy_monotone(traj: &Trajectory, slack: f64) -> EnergyCheck {
    let e = traj.energies();
    let mut max_increase = f64::NEG_INFINITY;
    let mut violations = 0;
    for (w, r) in e.windows(2).zip(&traj.records) {
        let inc = w[1] - w[0];
        max_increase = max_increase.max(inc);
        if inc > slack + r.inner_residual.max(0.0).min(slack) {
            violations += 1;
        }
    }
    EnergyCheck { passed: violations == 0, max_increase, violations, slack }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareDistanceCheck {
    pub passed: bool,
    /// `Σ d²/(2h)`.
    pub lhs: f64,
    /// `E(z⁰) - min E + Σ inner residuals`.
    pub rhs: f64,
    pub slack: f64,
}

pub fn check_square_distance(traj: &Trajectory) -> SquareDistanceCheck {
    let lhs = traj.records.iter().map(|r| r.step_distance_sq).sum::<f64>() / (2.0 * traj.h());
    let e = traj.energies();
    let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let rhs = e[0] - min + traj.sum_inner_residuals();
    SquareDistanceCheck { passed: rhs - lhs >= 0.0, lhs, rhs, slack: rhs - lhs }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassCheck {
    pub passed: bool,
    pub max_defect: f64,
}

pub fn check_mass(traj: &Trajectory, tol: f64) -> MassCheck {
    let max_defect =
        traj.states.iter().flat_map(|s| [(s.u.mass() - 1.0).abs(), (s.v.mass() - 1.0).abs()]).fold(0.0, f64::max);
    let positive = traj.states.iter().all(|s| s.u.values().iter().chain(s.v.values()).all(|x| *x >= 0.0));
    MassCheck { passed: positive && max_defect <= tol, max_defect }
}

fn distance(a: &State, b: &State) -> Result<f64> {
    let mode = if a.grid().dim() == 1 { TransportMode::Exact1d } else { TransportMode::Entropic };
    Ok(product_distance_sq(a, b, mode, None)?.max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    /// Least-squares `C` in `d(z_h(t₁), z_h(t₂)) ≈ C (t₂ - t₁ + h)^{1/2}`.
    pub constant: f64,
    /// `max d / (t₂ - t₁ + h)^{1/2}`.
    pub max_ratio: f64,
    pub pairs: usize,
}

/// Fit over state pairs with `t₂ - t₁ ≤ T/4`, keeping at most `max_pairs` (evenly strided).
pub fn fit_holder(traj: &Trajectory, max_pairs: usize) -> Result<HolderFit> {
    let n = traj.n_steps();
    let h = traj.h();
    let window = ((n as f64) / 4.0).floor().max(1.0) as usize;
    let mut pairs = Vec::new();
    for a in 0..=n {
        for b in a + 1..=(a + window).min(n) {
            pairs.push((a, b));
        }
    }
    if pairs.is_empty() {
        return Ok(HolderFit { constant: 0.0, max_ratio: 0.0, pairs: 0 });
    }
    let stride = pairs.len().div_ceil(max_pairs.max(1));
    let chosen: Vec<(usize, usize)> = pairs.into_iter().step_by(stride).collect();
    let dists = crate::par::map_collect(&chosen, |(a, b)| distance(&traj.states[*a], &traj.states[*b]));
    let (mut sds, mut ss, mut max_ratio) = (0.0, 0.0, 0.0f64);
    for ((a, b), d) in chosen.iter().zip(dists) {
        let d = d?;
        let s = ((b - a) as f64 * h + h).sqrt();
        sds += d * s;
        ss += s * s;
        max_ratio = max_ratio.max(d / s);
    }
    Ok(HolderFit { constant: sds / ss, max_ratio, pairs: chosen.len() })
}

/// Whether two fitted constants agree within a factor of two.
pub fn holder_stable(a: &HolderFit, b: &HolderFit) -> bool {
    let (lo, hi) = (a.constant.min(b.constant), a.constant.max(b.constant));
    hi.is_finite() && (hi == 0.0 || hi <= 2.0 * lo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpCheck {
    pub p: f64,
    /// `h < 1/(λ(p-1))`.
    pub applicable: bool,
    pub passed: bool,
    /// `1/(1 - λ(p-1)h)`.
    pub factor: f64,
    /// `min_n factor·(‖u⁽ⁿ⁾‖ₚᵖ + ‖v⁽ⁿ⁾‖ₚᵖ) - (‖u⁽ⁿ⁺¹⁾‖ₚᵖ + ‖v⁽ⁿ⁺¹⁾‖ₚᵖ)`.
    pub min_step_slack: f64,
    /// `min_n factorⁿ (‖u⁰‖ₚᵖ + ‖v⁰‖ₚᵖ) - (‖u⁽ⁿ⁾‖ₚᵖ + ‖v⁽ⁿ⁾‖ₚᵖ)`.
    pub min_cumulative_slack: f64,
    /// Smallest `C` with `‖u‖ₚ + ‖v‖ₚ ≤ C e^{λt}(‖u⁰‖ₚ + ‖v⁰‖ₚ)` along the run.
    pub continuous_constant: f64,
}

fn norm_pair(z: &State, p: f64) -> f64 {
    z.u.lp_norm(p).unwrap_or(f64::NAN) + z.v.lp_norm(p).unwrap_or(f64::NAN)
}

fn continuous_constant(traj: &Trajectory, p: f64) -> f64 {
    let lambda = traj.params.lambda;
    let base = norm_pair(&traj.states[0], p);
    traj.states
        .iter()
        .enumerate()
        .map(|(n, z)| norm_pair(z, p) / ((lambda * traj.time(n)).exp() * base))
        .fold(0.0, f64::max)
}

/// Per-step and cumulative `L^p` propagation for finite `p > 1`.
pub fn check_lp_propagation(traj: &Trajectory, p: f64) -> Result<LpCheck> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("L^p propagation needs 1 < p < ∞, got {p}")));
    }
    let h = traj.h();
    let h0 = traj.params.h0(p);
    let applicable = h < h0;
    let factor = if applicable { 1.0 / (1.0 - traj.params.lambda * (p - 1.0) * h) } else { f64::INFINITY };
    let pw: Vec<f64> = traj.states.iter().map(|z| z.u.lp_norm_pow(p) + z.v.lp_norm_pow(p)).collect();
    let min_step_slack = pw.windows(2).map(|w| factor * w[0] - w[1]).fold(f64::INFINITY, f64::min);
    let min_cumulative_slack =
        pw.iter().enumerate().map(|(n, x)| factor.powi(n as i32) * pw[0] - x).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * pw.iter().cloned().fold(1.0, f64::max);
    Ok(LpCheck {
        p,
        applicable,
        passed: applicable && min_step_slack >= -tol && min_cumulative_slack >= -tol,
        factor,
        min_step_slack,
        min_cumulative_slack,
        continuous_constant: continuous_constant(traj, p),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinfCheck {
    pub passed: bool,
    pub constant: f64,
    /// `LINF_CONSTANT_MAX - constant`.
    pub slack: f64,
}

pub fn check_linf_propagation(traj: &Trajectory) -> LinfCheck {
    let constant = continuous_constant(traj, f64::INFINITY);
    LinfCheck { passed: constant <= LINF_CONSTANT_MAX, constant, slack: LINF_CONSTANT_MAX - constant }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakFormResiduals {
    /// `(u, v)` mismatch per test function.
    pub per_test: Vec<[f64; 2]>,
    pub max_u: f64,
    pub max_v: f64,
}

/// Cell averages of `f` by 4-point Gauss-Legendre quadrature per axis.
fn cell_averages(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
    const NODES: [(f64, f64); 4] = [
        (-0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
        (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
        (0.861_136_311_594_052_6, 0.347_854_845_137_453_8),
    ];
    let d = grid.dim();
    let half = [0.5 * grid.cell_width(0), if d == 2 { 0.5 * grid.cell_width(1) } else { 0.0 }];
    let ys: &[(f64, f64)] = if d == 2 { &NODES } else { &[(0.0, 2.0)] };
    (0..grid.len())
        .map(|i| {
            let c = grid.center(i);
            let mut acc = 0.0;
            for (sx, wx) in NODES {
                for (sy, wy) in ys {
                    acc += wx * wy * f([c[0] + sx * half[0], c[1] + sy * half[1]]);
                }
            }
            acc / 4.0
        })
        .collect()
}

/// Right-hand side of the weak form at one state, per species.
fn weak_rhs(z: &State, traj: &Trajectory, tests: &[(Vec<f64>, Vec<[f64; 2]>, Vec<f64>)]) -> Result<Vec<[f64; 2]>> {
    let grid = *z.grid();
    let vol = grid.cell_volume();
    let law = traj.params.law;
    let psi = solve_poisson_neumann(&z.charge())?.psi;
    let gpsi = cell_gradient(&psi);
    let gu = cell_gradient(&traj.u_pot);
    let gv = cell_gradient(&traj.v_pot);
    let species = |rho: &Density, gpot: &[[f64; 2]], sign: f64, grad_phi: &[[f64; 2]], lap_phi: &[f64]| {
        let mut acc = 0.0;
        for i in 0..grid.len() {
            let r = rho.values()[i];
            let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
            acc += law.pressure(r) * lap_phi[i] - r * dot(gpot[i], grad_phi[i]) - sign * r * dot(gpsi[i], grad_phi[i]);
        }
        acc * vol
    };
    Ok(tests
        .iter()
        .map(|(_, grad, lap)| [species(&z.u, &gu, 1.0, grad, lap), species(&z.v, &gv, -1.0, grad, lap)])
        .collect())
}

/// Mismatch between `∫(ρ(T₂) - ρ(T₁))φ` and the right-endpoint time quadrature of
/// `∫ρ^m Δφ - ∫ρ∇U·∇φ ∓ ∫ρ∇ψ·∇φ` over `[T₁, T₂] = [t(n1), t(n2)]`.
pub fn check_weak_form_between(traj: &Trajectory, bumps: &[Bump], n1: usize, n2: usize) -> Result<WeakFormResiduals> {
    if traj.states.len() < 3 {
        return Err(Error::InvalidArgument("weak-form residual needs at least 3 states".into()));
    }
    if !(n1 < n2 && n2 <= traj.n_steps()) {
        return Err(Error::InvalidArgument(format!("invalid step window {n1}..{n2}")));
    }
    let grid = *traj.grid();
    let d = grid.dim();
    let tests: Vec<(Vec<f64>, Vec<[f64; 2]>, Vec<f64>)> = bumps
        .iter()
        .map(|b| {
            let grad = |x| b.gradient(x, d);
            (
                cell_averages(&grid, |x| b.value(x, d)),
                cell_averages(&grid, |x| grad(x)[0])
                    .into_iter()
                    .zip(cell_averages(&grid, |x| grad(x)[1]))
                    .map(|(a, c)| [a, c])
                    .collect(),
                cell_averages(&grid, |x| b.laplacian(x, d)),
            )
        })
        .collect();
    let steps: Vec<usize> = (n1 + 1..=n2).collect();
    let rhs_per_step = crate::par::map_collect(&steps, |n| weak_rhs(&traj.states[*n], traj, &tests));
    let mut rhs = vec![[0.0; 2]; tests.len()];
    for r in rhs_per_step {
        for (acc, x) in rhs.iter_mut().zip(r?) {
            acc[0] += traj.h() * x[0];
            acc[1] += traj.h() * x[1];
        }
    }
    let vol = grid.cell_volume();
    let (a, b) = (&traj.states[n1], &traj.states[n2]);
    let mut per_test = Vec::with_capacity(tests.len());
    for ((phi, _, _), r) in tests.iter().zip(rhs) {
        let lhs = |x: &Density, y: &Density| {
            x.values().iter().zip(y.values()).zip(phi).map(|((p, q), f)| (q - p) * f).sum::<f64>() * vol
        };
        per_test.push([lhs(&a.u, &b.u) - r[0], lhs(&a.v, &b.v) - r[1]]);
    }
    let max_u = per_test.iter().map(|x| x[0].abs()).fold(0.0, f64::max);
    let max_v = per_test.iter().map(|x| x[1].abs()).fold(0.0, f64::max);
    Ok(WeakFormResiduals { per_test, max_u, max_v })
}

/// Weak-form residual over the whole run with the standard test family.
pub fn check_weak_form(traj: &Trajectory) -> Result<WeakFormResiduals> {
    check_weak_form_between(traj, &standard_family(traj.grid()), 0, traj.n_steps())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub bounded: bool,
    /// `sup_n ∫|x - c|²(u + v)` about the domain center.
    pub sup_second_moment: f64,
    /// `sup_n ∫(u|log u| + v|log v|)`.
    pub sup_abs_entropy: f64,
}

pub fn check_moments(traj: &Trajectory) -> MomentCheck {
    let c = traj.grid().domain_center();
    let sup_second_moment = traj.states.iter().map(|z| z.u.second_moment(c) + z.v.second_moment(c)).fold(0.0, f64::max);
    let sup_abs_entropy = traj.states.iter().map(|z| z.u.abs_entropy() + z.v.abs_entropy()).fold(0.0, f64::max);
    MomentCheck {
        bounded: sup_second_moment.is_finite() && sup_abs_entropy.is_finite(),
        sup_second_moment,
        sup_abs_entropy,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    /// `h Σ_n ‖∇(u⁽ⁿ⁺¹⁾)^{m/2}‖² + ‖∇(v⁽ⁿ⁺¹⁾)^{m/2}‖²`.
    pub lhs: f64,
    /// `T + H(u⁰) + H(v⁰) - H(u⁽ᴺ⁾) - H(v⁽ᴺ⁾)`.
    pub base: f64,
    /// `lhs / base`.
    pub constant: f64,
}

pub fn gradient_estimate(traj: &Trajectory) -> GradientEstimate {
    let m = traj.params.m();
    let grid = *traj.grid();
    let norm = |rho: &Density| fisher_dissipation(rho.values(), &grid, m) * m / 4.0;
    let lhs = traj.h() * traj.states[1..].iter().map(|z| norm(&z.u) + norm(&z.v)).sum::<f64>();
    let h = |z: &State| z.u.boltzmann_entropy() + z.v.boltzmann_entropy();
    let base = traj.final_time() + h(&traj.states[0]) - h(traj.states.last().unwrap());
    GradientEstimate { lhs, base, constant: if base > 0.0 { lhs / base } else { f64::INFINITY } }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGap {
    pub gap_u: f64,
    pub gap_v: f64,
}

/// `L¹` gaps between `z_h(t)` and an oracle state at the same time.
pub fn compare_to_oracle(traj: &Trajectory, oracle: &State, t: f64) -> Result<OracleGap> {
    let z = traj.at(t);
    Ok(OracleGap { gap_u: z.u.l1_distance(&oracle.u)?, gap_v: z.v.l1_distance(&oracle.v)? })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOptions {
    /// Finite exponents for the `L^p` propagation check.
    pub lp_exponents: Vec<f64>,
    pub holder_max_pairs: usize,
    pub weak_form: bool,
    pub energy_slack: f64,
    pub mass_tol: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            lp_exponents: vec![2.0],
            holder_max_pairs: 400,
            weak_form: true,
            energy_slack: ENERGY_SLACK,
            mass_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub energy_monotone: EnergyCheck,
    pub square_distance_bound: SquareDistanceCheck,
    pub mass: MassCheck,
    pub holder: HolderFit,
    pub lp_propagation: Vec<LpCheck>,
    pub linf_propagation: LinfCheck,
    pub weak_residuals: Option<WeakFormResiduals>,
    /// Relative gap of the Poisson identity on the final charge.
    pub ibp_gap: f64,
    /// Per-step `max(res_u, res_v)`; empty outside 1-D exact mode.
    pub el_residuals: Vec<f64>,
    pub moments: MomentCheck,
    pub gradient_estimate: GradientEstimate,
}

impl DiagnosticsReport {
    /// Conjunction of the pass/fail checks. Inapplicable `L^p` checks do not count.
    pub fn passed(&self) -> bool {
        self.energy_monotone.passed
            && self.square_distance_bound.passed
            && self.mass.passed
            && self.linf_propagation.passed
            && self.moments.bounded
            && self.lp_propagation.iter().all(|c| c.passed || !c.applicable)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn run_diagnostics(traj: &Trajectory, opts: &DiagnosticsOptions) -> Result<DiagnosticsReport> {
    let last = traj.states.last().unwrap();
    let charge = last.charge();
    let ibp_gap =
        if charge.values().iter().all(|x| *x == 0.0) { 0.0 } else { ibp_identity_check(&charge)?.relative_gap };
    let weak_residuals = if opts.weak_form && traj.states.len() >= 3 { Some(check_weak_form(traj)?) } else { None };
    Ok(DiagnosticsReport {
        schema_version: SCHEMA_VERSION,
        energy_monotone: check_energy_monotone(traj, opts.energy_slack),
        square_distance_bound: check_square_distance(traj),
        mass: check_mass(traj, opts.mass_tol),
        holder: fit_holder(traj, opts.holder_max_pairs)?,
        lp_propagation: opts.lp_exponents.iter().map(|p| check_lp_propagation(traj, *p)).collect::<Result<_>>()?,
        linf_propagation: check_linf_propagation(traj),
        weak_residuals,
        ibp_gap,
        el_residuals: traj.records.iter().filter_map(|r| Some(r.el_residual_u?.max(r.el_residual_v?))).collect(),
        moments: check_moments(traj),
        gradient_estimate: gradient_estimate(traj),
    })
}
