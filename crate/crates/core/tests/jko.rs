use pnp_jko::energy::{total_energy, ModelParams};
use pnp_jko::grid::{CellField, Density, Grid, ScalarField, State};
use pnp_jko::jko::{euler_lagrange_residual, jko_step, run_trajectory, InnerSolverConfig, InnerSolverKind};
use pnp_jko::testfn::standard_family;
use pnp_jko::transport::{product_distance_sq, TransportMode};

fn gaussian(g: Grid, c: f64, w: f64) -> Density {
    Density::normalize(g, ScalarField::from_fn(g, |x| (-(x[0] - c).powi(2) / (2.0 * w * w)).exp()).into_values())
        .unwrap()
}

fn gibbs_setup(n: usize) -> (State, ScalarField, Density) {
    let g = Grid::new_1d(0.0, 1.0, n).unwrap();
    let u = ScalarField::from_fn(g, |x| 4.0 * (x[0] - 0.5).powi(2));
    let gibbs = Density::normalize(g, u.values().iter().map(|x| (-x).exp()).collect()).unwrap();
    (State::new(gibbs.clone(), gibbs.clone()).unwrap(), u, gibbs)
}

#[test]
fn gibbs_state_is_a_fixed_point_of_one_step() {
    let (z, u, gibbs) = gibbs_setup(256);
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    let r = jko_step(&z, &p, &u, &u, &InnerSolverConfig::default()).unwrap();
    assert!(r.z_next.u.l1_distance(&gibbs).unwrap() <= 1e-3);
    assert!(r.z_next.v.l1_distance(&gibbs).unwrap() <= 1e-3);
}

#[test]
fn gibbs_trajectory_stays_put() {
    let (z, u, gibbs) = gibbs_setup(128);
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    let tr = run_trajectory(&z, &p, &u, &u, 30, &InnerSolverConfig::default()).unwrap();
    for s in &tr.states {
        assert!(s.u.l1_distance(&gibbs).unwrap() <= 1e-3);
    }
}

#[test]
fn zero_steps_returns_the_initial_state() {
    let (z, u, _) = gibbs_setup(32);
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    let tr = run_trajectory(&z, &p, &u, &u, 0, &InnerSolverConfig::default()).unwrap();
    assert_eq!(tr.states, vec![z]);
    assert!(tr.records.is_empty());
}

#[test]
fn step_decreases_energy_and_respects_the_distance_inequality() {
    let g = Grid::new_1d(0.0, 1.0, 96).unwrap();
    let z = State::new(gaussian(g, 0.3, 0.07), gaussian(g, 0.7, 0.12)).unwrap();
    let u = ScalarField::from_fn(g, |x| (x[0] - 0.4).powi(2));
    let v = ScalarField::from_fn(g, |x| (x[0] - 0.6).powi(2));
    for m in [1.0, 2.0, 3.0] {
        let p = ModelParams::new(m, 2e-2, &u, &v).unwrap();
        let e0 = total_energy(&z, &p, &u, &v).unwrap().total;
        let r = jko_step(&z, &p, &u, &v, &InnerSolverConfig::default()).unwrap();
        let rec = &r.record;
        assert!(rec.converged, "m={m}");
        assert!(rec.energy.total <= e0, "m={m}");
        assert!(rec.step_distance_sq / (2.0 * p.h) <= e0 - rec.energy.total + rec.inner_residual, "m={m}");
        let d = product_distance_sq(&r.z_next, &z, TransportMode::Exact1d, None).unwrap();
        assert!((d - rec.step_distance_sq).abs() <= 1e-12);
    }
}

#[test]
fn trajectory_telescopes_the_distance_bound() {
    let g = Grid::new_1d(0.0, 1.0, 64).unwrap();
    let z = State::new(gaussian(g, 0.25, 0.06), gaussian(g, 0.6, 0.09)).unwrap();
    let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    let tr = run_trajectory(&z, &p, &u, &u, 25, &InnerSolverConfig::default()).unwrap();
    let e = tr.energies();
    let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let total: f64 = tr.records.iter().map(|r| r.step_distance_sq).sum();
    assert!(total <= 2.0 * p.h * (e[0] - min + tr.sum_inner_residuals()));
}

#[test]
fn entropic_step_in_two_dimensions() {
    let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [12, 12]).unwrap();
    let bump = |c: [f64; 2]| {
        let f = ScalarField::from_fn(g, |x| (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / 0.02).exp());
        Density::normalize(g, f.into_values()).unwrap()
    };
    let z = State::new(bump([0.35, 0.4]), bump([0.65, 0.6])).unwrap();
    let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2));
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    let e0 = total_energy(&z, &p, &u, &u).unwrap().total;
    let r = jko_step(&z, &p, &u, &u, &InnerSolverConfig::default()).unwrap();
    assert_eq!(r.record.solver, InnerSolverKind::Entropic);
    assert!(r.record.converged);
    assert!(r.record.energy.total < e0);
    assert!((r.z_next.u.mass() - 1.0).abs() < 1e-12 && (r.z_next.v.mass() - 1.0).abs() < 1e-12);
    assert!(r.record.el_residual_u.is_none());
}

#[test]
fn exact_solver_rejects_two_dimensional_grids() {
    let g = Grid::new_2d([0.0, 0.0], [1.0, 1.0], [4, 4]).unwrap();
    let z = State::new(Density::uniform(g), Density::uniform(g)).unwrap();
    let u = ScalarField::zeros(g);
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    let cfg = InnerSolverConfig { kind: InnerSolverKind::Exact1d, ..Default::default() };
    assert!(jko_step(&z, &p, &u, &u, &cfg).is_err());
}

#[test]
fn el_residual_vanishes_at_a_stationary_state() {
    let (z, u, _) = gibbs_setup(128);
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    let zeta = standard_family(z.grid());
    let r = euler_lagrange_residual(&z, &z, &p, &u, &u, &zeta).unwrap();
    assert!(r.res_u <= 1e-3 && r.res_v <= 1e-3, "{} {}", r.res_u, r.res_v);
}

#[test]
fn el_residual_is_odd_in_the_test_field() {
    let g = Grid::new_1d(0.0, 1.0, 64).unwrap();
    let z = State::new(gaussian(g, 0.3, 0.07), gaussian(g, 0.6, 0.1)).unwrap();
    let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
    let p = ModelParams::new(2.0, 1e-2, &u, &u).unwrap();
    let cfg = InnerSolverConfig { tol: 1e-6, ..Default::default() };
    let next = jko_step(&z, &p, &u, &u, &cfg).unwrap().z_next;
    let zeta = standard_family(&g);
    let neg: Vec<_> = zeta.iter().map(|b| b.scaled(-1.0)).collect();
    let a = euler_lagrange_residual(&z, &next, &p, &u, &u, &zeta).unwrap();
    let b = euler_lagrange_residual(&z, &next, &p, &u, &u, &neg).unwrap();
    assert_eq!(a.res_u, b.res_u);
    assert_eq!(a.res_v, b.res_v);
    for (x, y) in a.per_field.iter().zip(&b.per_field) {
        assert_eq!(x[0], -y[0]);
        assert_eq!(x[1], -y[1]);
    }
}

#[test]
fn el_residual_shrinks_with_the_inner_tolerance() {
    let g = Grid::new_1d(0.0, 1.0, 128).unwrap();
    let z = State::new(gaussian(g, 0.35, 0.08), gaussian(g, 0.6, 0.1)).unwrap();
    let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
    let p = ModelParams::new(2.0, 1e-2, &u, &u).unwrap();
    let res = |tol: f64| {
        let tr = run_trajectory(&z, &p, &u, &u, 5, &InnerSolverConfig { tol, ..Default::default() }).unwrap();
        tr.records.iter().map(|r| r.el_residual_u.unwrap() + r.el_residual_v.unwrap()).sum::<f64>()
    };
    let (coarse, fine) = (res(1e-8), res(1e-9));
    assert!(fine < 0.5 * coarse, "{coarse} -> {fine}");
}

#[test]
fn invalid_inner_configs_are_rejected() {
    let (z, u, _) = gibbs_setup(16);
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    for cfg in [
        InnerSolverConfig { tol: 0.0, ..Default::default() },
        InnerSolverConfig { max_iter: 0, ..Default::default() },
        InnerSolverConfig { epsilon: Some(-1.0), ..Default::default() },
    ] {
        assert!(jko_step(&z, &p, &u, &u, &cfg).is_err());
    }
}
