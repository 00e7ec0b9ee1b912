use pnp_jko::elliptic::{ibp_identity_check, solve_poisson_neumann};
use pnp_jko::energy::{e_cpl, total_energy, ModelParams};
use pnp_jko::grid::{CellField, Density, Grid, ScalarField, State};
use pnp_jko::jko::{jko_step, InnerSolverConfig};
use pnp_jko::transport::{w2_exact_1d, w2_sq, TransportMode};
use proptest::prelude::*;

const N: usize = 24;

fn density(vals: Vec<f64>) -> Density {
    let g = Grid::new_1d(0.0, 1.0, vals.len()).unwrap();
    Density::normalize(g, vals).unwrap()
}

fn profile() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.05f64..3.0, N)
}

fn potential() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..2.0, 0.2f64..0.8)
}

fn well(g: Grid, (a, c): (f64, f64)) -> ScalarField {
    ScalarField::from_fn(g, move |x| a * (x[0] - c).powi(2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_conserves_mass_and_decreases_energy(
        a in profile(), b in profile(), pu in potential(), pv in potential(), m in prop::sample::select(vec![1.0, 2.0])
    ) {
        let z = State::new(density(a), density(b)).unwrap();
        let g = *z.grid();
        let (u, v) = (well(g, pu), well(g, pv));
        let p = ModelParams::new(m, 1e-2, &u, &v).unwrap();
        let e0 = total_energy(&z, &p, &u, &v).unwrap().total;
        let r = jko_step(&z, &p, &u, &v, &InnerSolverConfig::default()).unwrap();
        let n = &r.z_next;
        prop_assert!((n.u.mass() - 1.0).abs() <= 1e-10 && (n.v.mass() - 1.0).abs() <= 1e-10);
        prop_assert!(n.u.values().iter().chain(n.v.values()).all(|x| *x >= 0.0));
        prop_assert!(r.record.energy.total <= e0 + 1e-12);
        prop_assert!(r.record.step_distance_sq / (2.0 * p.h) <= e0 - r.record.energy.total + r.record.inner_residual + 1e-12);
    }

    #[test]
    fn swapping_species_swaps_the_step(a in profile(), b in profile(), pu in potential(), pv in potential()) {
        let z = State::new(density(a), density(b)).unwrap();
        let g = *z.grid();
        let (u, v) = (well(g, pu), well(g, pv));
        let cfg = InnerSolverConfig::default();
        let p = ModelParams::new(1.0, 1e-2, &u, &v).unwrap();
        let q = ModelParams::new(1.0, 1e-2, &v, &u).unwrap();
        let fwd = jko_step(&z, &p, &u, &v, &cfg).unwrap().z_next;
        let bwd = jko_step(&z.swapped(), &q, &v, &u, &cfg).unwrap().z_next;
        prop_assert!(fwd.u.l1_distance(&bwd.v).unwrap() <= 1e-8);
        prop_assert!(fwd.v.l1_distance(&bwd.u).unwrap() <= 1e-8);
    }

    #[test]
    fn exact_distance_is_symmetric_and_vanishes_on_the_diagonal(a in profile(), b in profile()) {
        let (x, y) = (density(a), density(b));
        let xy = w2_exact_1d(&x, &y).unwrap().cost;
        let yx = w2_exact_1d(&y, &x).unwrap().cost;
        prop_assert!(xy >= 0.0);
        prop_assert!((xy - yx).abs() <= 1e-12);
        prop_assert!(w2_sq(&x, &x, TransportMode::Exact1d, None).unwrap() <= 1e-14);
    }

    #[test]
    fn coupling_energy_is_swap_invariant_and_ibp_holds(a in profile(), b in profile()) {
        let z = State::new(density(a), density(b)).unwrap();
        let e = e_cpl(&z).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!((e - e_cpl(&z.swapped()).unwrap()).abs() <= 1e-12 * (1.0 + e));
        let charge = z.charge();
        let psi = solve_poisson_neumann(&charge).unwrap().psi;
        prop_assert!(psi.mean().abs() <= 1e-12);
        prop_assert!(ibp_identity_check(&charge).unwrap().relative_gap <= 1e-8);
    }
}
