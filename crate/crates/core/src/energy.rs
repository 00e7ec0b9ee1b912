//! Free energy `E = E_diff + E_ext + E_cpl` and its first variation.

use serde::{Deserialize, Serialize};

use crate::elliptic::{dirichlet_energy, free_laplacian, solve_poisson_neumann, PoissonSolution};
use crate::grid::{CellField, Density, ScalarField, State};
use crate::{Error, Result};

/// Densities below this are treated as vacuum in logarithmic expressions.
pub const RHO_FLOOR: f64 = 1e-300;

/// Internal energy density `f(ρ)` for the diffusion exponent `m`.
///
/// `m = 1` is the Boltzmann entropy `ρ log ρ`; `m > 1` is `ρ^m / (m-1)`.
/// The branch is selected exactly at `m == 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLaw {
    pub m: f64,
}

impl DiffusionLaw {
    pub fn new(m: f64) -> Result<Self> {
        if !(m.is_finite() && m >= 1.0) {
            return Err(Error::InvalidArgument(format!("diffusion exponent must be >= 1, got {m}")));
        }
        Ok(Self { m })
    }

    pub fn is_linear(&self) -> bool {
        self.m == 1.0
    }

    pub fn f(&self, rho: f64) -> f64 {
        if self.is_linear() {
            if rho > RHO_FLOOR {
                rho * rho.ln()
            } else {
                0.0
            }
        } else {
            rho.powf(self.m) / (self.m - 1.0)
        }
    }

    /// `f'(ρ)`; `-∞` at vacuum in the linear case.
    pub fn df(&self, rho: f64) -> f64 {
        if self.is_linear() {
            if rho > RHO_FLOOR {
                rho.ln() + 1.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            self.m / (self.m - 1.0) * rho.powf(self.m - 1.0)
        }
    }

    pub fn d2f(&self, rho: f64) -> f64 {
        if self.is_linear() {
            1.0 / rho.max(RHO_FLOOR)
        } else {
            self.m * rho.max(0.0).powf(self.m - 2.0)
        }
    }

    /// Pressure `P(ρ) = ρ f'(ρ) - f(ρ)`, i.e. `ρ^m`.
    pub fn pressure(&self, rho: f64) -> f64 {
        if self.is_linear() {
            rho
        } else {
            rho.powf(self.m)
        }
    }

    /// Face mobility `(P(b) - P(a)) / (f'(b) - f'(a))`.
    ///
    /// For `m = 1` this is the logarithmic mean. It makes
    /// `mobility · Δf' = ΔP` hold exactly, and vanishes when either side is
    /// vacuum.
    pub fn mobility(&self, a: f64, b: f64) -> f64 {
        let a = a.max(0.0);
        let b = b.max(0.0);
        if (a <= RHO_FLOOR || b <= RHO_FLOOR) && (self.is_linear() || self.m < 2.0) {
            return 0.0;
        }
        let rel = (a - b).abs() / (a + b).max(RHO_FLOOR);
        if rel < 1e-6 {
            return 0.5 * (a + b);
        }
        let dp = self.pressure(b) - self.pressure(a);
        let ddf = self.df(b) - self.df(a);
        dp / ddf
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub law: DiffusionLaw,
    /// Time step of the minimizing movement.
    pub h: f64,
    /// `max(‖ΔU‖_∞, ‖ΔV‖_∞)`.
    pub lambda: f64,
}

impl ModelParams {
    pub fn new(m: f64, h: f64, u_pot: &ScalarField, v_pot: &ScalarField) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {h}")));
        }
        if u_pot.grid() != v_pot.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { law: DiffusionLaw::new(m)?, h, lambda: potential_lambda(u_pot, v_pot) })
    }

    pub fn m(&self) -> f64 {
        self.law.m
    }

    /// Conjugate exponent `m / (m - 1)`; infinite for `m = 1`.
    pub fn m_prime(&self) -> f64 {
        if self.law.is_linear() {
            f64::INFINITY
        } else {
            self.law.m / (self.law.m - 1.0)
        }
    }

    /// Largest step for which the `L^p` propagation bound applies, `1/(λ(p-1))`.
    pub fn h0(&self, p: f64) -> f64 {
        if self.lambda == 0.0 || p <= 1.0 {
            f64::INFINITY
        } else {
            1.0 / (self.lambda * (p - 1.0))
        }
    }

    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..*self }
    }
}

/// `max(‖ΔU‖_∞, ‖ΔV‖_∞)` from discrete second differences.
pub fn potential_lambda(u_pot: &ScalarField, v_pot: &ScalarField) -> f64 {
    let sup = |f: &ScalarField| free_laplacian(f).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    sup(u_pot).max(sup(v_pot))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub diff: f64,
    pub ext: f64,
    pub cpl: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(diff: f64, ext: f64, cpl: f64) -> Self {
        Self { diff, ext, cpl, total: diff + ext + cpl }
    }
}

pub fn e_diff_density(rho: &Density, law: DiffusionLaw) -> f64 {
    rho.values().iter().map(|r| law.f(*r)).sum::<f64>() * rho.grid().cell_volume()
}

pub fn e_diff(z: &State, law: DiffusionLaw) -> f64 {
    e_diff_density(&z.u, law) + e_diff_density(&z.v, law)
}

pub fn e_ext(z: &State, u_pot: &ScalarField, v_pot: &ScalarField) -> Result<f64> {
    if z.grid() != u_pot.grid() || z.grid() != v_pot.grid() {
        return Err(Error::GridMismatch);
    }
    let pair =
        |rho: &Density, pot: &ScalarField| rho.values().iter().zip(pot.values()).map(|(r, p)| r * p).sum::<f64>();
    Ok((pair(&z.u, u_pot) + pair(&z.v, v_pot)) * z.grid().cell_volume())
}

/// Solve for the electrostatic potential of `z`.
pub fn potential_of(z: &State) -> Result<PoissonSolution> {
    solve_poisson_neumann(&z.charge())
}

pub fn e_cpl(z: &State) -> Result<f64> {
    Ok(dirichlet_energy(&potential_of(z)?))
}

pub fn total_energy(
    z: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
) -> Result<EnergyBreakdown> {
    Ok(EnergyBreakdown::new(e_diff(z, params.law), e_ext(z, u_pot, v_pot)?, e_cpl(z)?))
}

/// First variations `φ_u = f'(u) + U + ψ`, `φ_v = f'(v) + V - ψ`.
#[derive(Clone, Debug)]
pub struct FirstVariation {
    pub phi_u: ScalarField,
    pub phi_v: ScalarField,
    /// Cells where `φ_u` is meaningful (always all cells for `m > 1`).
    pub mask_u: Vec<bool>,
    pub mask_v: Vec<bool>,
}

pub fn first_variation(
    z: &State,
    params: &ModelParams,
    u_pot: &ScalarField,
    v_pot: &ScalarField,
) -> Result<FirstVariation> {
    if z.grid() != u_pot.grid() || z.grid() != v_pot.grid() {
        return Err(Error::GridMismatch);
    }
    let psi = potential_of(z)?.psi;
    let law = params.law;
    let build = |rho: &Density, pot: &ScalarField, sign: f64| {
        let mut mask = Vec::with_capacity(rho.values().len());
        let vals: Vec<f64> = rho
            .values()
            .iter()
            .zip(pot.values())
            .zip(psi.values())
            .map(|((r, p), s)| {
                let ok = !law.is_linear() || *r > RHO_FLOOR;
                mask.push(ok);
                if ok {
                    law.df(*r) + p + sign * s
                } else {
                    0.0
                }
            })
            .collect();
        (ScalarField::new(*z.grid(), vals).expect("finite variation"), mask)
    };
    let (phi_u, mask_u) = build(&z.u, u_pot, 1.0);
    let (phi_v, mask_v) = build(&z.v, v_pot, -1.0);
    Ok(FirstVariation { phi_u, phi_v, mask_u, mask_v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    fn g1(len: f64, n: usize) -> Grid {
        Grid::new_1d(0.0, len, n).unwrap()
    }

    fn uniform_pair(g: Grid) -> State {
        State::new(Density::uniform(g), Density::uniform(g)).unwrap()
    }

    fn bump(g: Grid, c: f64, w: f64) -> Density {
        Density::normalize(g, ScalarField::from_fn(g, |x| (-(x[0] - c).powi(2) / (2.0 * w * w)).exp()).into_values())
            .unwrap()
    }

    #[test]
    fn diffusive_energy_examples() {
        let lin = DiffusionLaw::new(1.0).unwrap();
        let quad = DiffusionLaw::new(2.0).unwrap();
        assert!(e_diff(&uniform_pair(g1(1.0, 32)), lin).abs() < 1e-15);
        assert!((e_diff(&uniform_pair(g1(1.0, 32)), quad) - 2.0).abs() < 1e-13);
        assert!((e_diff(&uniform_pair(g1(2.0, 32)), lin) + 2.0 * 2f64.ln()).abs() < 1e-13);
        assert!(DiffusionLaw::new(0.5).is_err());
    }

    #[test]
    fn external_energy_examples() {
        let g = g1(1.0, 256);
        let z = State::new(Density::uniform(g), bump(g, 0.3, 0.1)).unwrap();
        let zero = ScalarField::zeros(g);
        assert_eq!(e_ext(&z, &zero, &zero).unwrap(), 0.0);
        let c = ScalarField::constant(g, 1.5);
        assert!((e_ext(&z, &c, &c).unwrap() - 3.0).abs() < 1e-12);
        let sq = ScalarField::from_fn(g, |x| x[0] * x[0]);
        assert!((e_ext(&z, &sq, &zero).unwrap() - 1.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn coupling_energy_examples() {
        let g = g1(1.0, 256);
        assert!(e_cpl(&uniform_pair(g)).unwrap().abs() < 1e-20);
        // u - v = cos(πx) with both densities nonnegative and unit mass.
        let u = Density::new(g, ScalarField::from_fn(g, |x| 1.0 + 0.5 * (PI * x[0]).cos()).into_values()).unwrap();
        let v = Density::new(g, ScalarField::from_fn(g, |x| 1.0 - 0.5 * (PI * x[0]).cos()).into_values()).unwrap();
        let z = State::new(u, v).unwrap();
        let e = e_cpl(&z).unwrap();
        assert!((e - 1.0 / (4.0 * PI * PI)).abs() < 1e-5, "{e}");
        assert!((e_cpl(&z.swapped()).unwrap() - e).abs() < 1e-14);
    }

    #[test]
    fn total_energy_examples() {
        let g = g1(1.0, 64);
        let z = uniform_pair(g);
        let zero = ScalarField::zeros(g);
        let one = ScalarField::constant(g, 1.0);
        let p1 = ModelParams::new(1.0, 0.1, &zero, &zero).unwrap();
        assert!(total_energy(&z, &p1, &zero, &zero).unwrap().total.abs() < 1e-14);
        let p2 = ModelParams::new(2.0, 0.1, &one, &one).unwrap();
        let e = total_energy(&z, &p2, &one, &one).unwrap();
        assert!((e.total - 4.0).abs() < 1e-12);
        let z = State::new(bump(g, 0.3, 0.1), bump(g, 0.6, 0.05)).unwrap();
        let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
        let e = total_energy(&z, &p2, &u, &one).unwrap();
        assert_eq!(e.total, e.diff + e.ext + e.cpl);
        assert!(e.cpl >= 0.0 && e.diff >= 0.0);
    }

    #[test]
    fn first_variation_examples() {
        let g = g1(1.0, 32);
        let zero = ScalarField::zeros(g);
        let z = uniform_pair(g);
        let p1 = ModelParams::new(1.0, 0.1, &zero, &zero).unwrap();
        let fv = first_variation(&z, &p1, &zero, &zero).unwrap();
        assert!(fv.phi_u.values().iter().chain(fv.phi_v.values()).all(|p| (p - 1.0).abs() < 1e-14));
        let p2 = ModelParams::new(2.0, 0.1, &zero, &zero).unwrap();
        let fv = first_variation(&z, &p2, &zero, &zero).unwrap();
        assert!(fv.phi_u.values().iter().all(|p| (p - 2.0).abs() < 1e-14));
    }

    #[test]
    fn vacuum_is_masked_for_linear_diffusion() {
        let g = g1(1.0, 8);
        let mut vals = vec![0.0; 8];
        vals[2] = 4.0;
        vals[3] = 4.0;
        let u = Density::new(g, vals).unwrap();
        let z = State::new(u, Density::uniform(g)).unwrap();
        let zero = ScalarField::zeros(g);
        let p = ModelParams::new(1.0, 0.1, &zero, &zero).unwrap();
        let fv = first_variation(&z, &p, &zero, &zero).unwrap();
        assert_eq!(fv.mask_u.iter().filter(|b| **b).count(), 2);
        assert!(fv.mask_v.iter().all(|b| *b));
        assert!(e_diff(&z, p.law).is_finite());
    }

    #[test]
    fn lambda_of_quadratic_wells() {
        let g = g1(1.0, 128);
        let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
        let v = ScalarField::from_fn(g, |x| 0.5 * (x[0] - 0.3).powi(2));
        let p = ModelParams::new(2.0, 0.1, &u, &v).unwrap();
        assert!((p.lambda - 2.0).abs() < 1e-8);
        assert!((p.h0(2.0) - 0.5).abs() < 1e-8);
        assert_eq!(p.m_prime(), 2.0);
        let p1 = ModelParams::new(1.0, 0.1, &u, &v).unwrap();
        assert!(p1.m_prime().is_infinite());
        assert!(ModelParams::new(1.0, 0.0, &u, &v).is_err());
    }

    /// Finite-difference directional derivative against `∫(φ_u δu + φ_v δv)`.
    #[test]
    fn first_variation_matches_finite_differences() {
        for m in [1.0, 2.0, 3.0] {
            let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [12, 10]).unwrap();
            let gauss = |c: [f64; 2], w: f64| {
                Density::normalize(
                    g,
                    ScalarField::from_fn(g, |x| 0.05 + (-g.dist_sq(x, c) / (2.0 * w * w)).exp()).into_values(),
                )
                .unwrap()
            };
            let z = State::new(gauss([0.3, 0.4], 0.15), gauss([0.7, 0.5], 0.2)).unwrap();
            let up = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2) + 0.3 * x[1]);
            let vp = ScalarField::from_fn(g, |x| (x[1] - 0.2).powi(2));
            let params = ModelParams::new(m, 0.1, &up, &vp).unwrap();
            // Mass-preserving perturbations.
            let du: Vec<f64> = (0..g.len()).map(|i| (g.center(i)[0] * 7.0).sin()).collect();
            let dv: Vec<f64> = (0..g.len()).map(|i| (g.center(i)[1] * 5.0).cos() * g.center(i)[0]).collect();
            let center = |d: Vec<f64>| {
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                d.into_iter().map(|x| x - mean).collect::<Vec<_>>()
            };
            let (du, dv) = (center(du), center(dv));
            let perturbed = |t: f64| {
                let u: Vec<f64> = z.u.values().iter().zip(&du).map(|(a, b)| a + t * b).collect();
                let v: Vec<f64> = z.v.values().iter().zip(&dv).map(|(a, b)| a + t * b).collect();
                let s = State::new(Density::normalize(g, u).unwrap(), Density::normalize(g, v).unwrap()).unwrap();
                total_energy(&s, &params, &up, &vp).unwrap().total
            };
            let t = 1e-5;
            let fd = (perturbed(t) - perturbed(-t)) / (2.0 * t);
            let fv = first_variation(&z, &params, &up, &vp).unwrap();
            let vol = g.cell_volume();
            let analytic: f64 =
                (0..g.len()).map(|i| fv.phi_u.values()[i] * du[i] + fv.phi_v.values()[i] * dv[i]).sum::<f64>() * vol;
            assert!((fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-3), "m={m} fd={fd} analytic={analytic}");
        }
    }

    #[test]
    fn coupling_vanishes_only_for_equal_species() {
        let g = g1(1.0, 64);
        let a = bump(g, 0.4, 0.1);
        let b = bump(g, 0.41, 0.1);
        assert!(e_cpl(&State::new(a.clone(), a.clone()).unwrap()).unwrap() < 1e-24);
        assert!(e_cpl(&State::new(a, b).unwrap()).unwrap() > 1e-8);
    }

    #[test]
    fn mobility_reproduces_pressure_differences() {
        for m in [1.0, 1.5, 2.0, 3.0] {
            let law = DiffusionLaw::new(m).unwrap();
            for (a, b) in [(0.3, 0.9), (2.0, 1.0), (1.0, 1.0 + 1e-9)] {
                let lhs = law.mobility(a, b) * (law.df(b) - law.df(a));
                let rhs = law.pressure(b) - law.pressure(a);
                assert!((lhs - rhs).abs() < 1e-9, "m={m} a={a} b={b}");
            }
        }
    }
}
