use pnp_jko::diagnostics::{
    check_energy_monotone, check_lp_propagation, check_moments, check_weak_form, compare_to_oracle, fit_holder,
    gradient_estimate, holder_stable, run_diagnostics, DiagnosticsOptions, DiagnosticsReport, SCHEMA_VERSION,
};
use pnp_jko::energy::ModelParams;
use pnp_jko::grid::{CellField, Density, Grid, ScalarField, State};
use pnp_jko::jko::{run_trajectory, InnerSolverConfig, Trajectory};
use pnp_jko::reference::{fv_evolve, FVConfig};

fn gaussian(g: Grid, c: f64, w: f64) -> Density {
    Density::normalize(g, ScalarField::from_fn(g, |x| (-(x[0] - c).powi(2) / (2.0 * w * w)).exp()).into_values())
        .unwrap()
}

fn smooth_run(n: usize, h: f64, t: f64, m: f64) -> Trajectory {
    let g = Grid::new_1d(0.0, 1.0, n).unwrap();
    let z = State::new(gaussian(g, 0.35, 0.08), gaussian(g, 0.6, 0.1)).unwrap();
    let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
    let v = ScalarField::from_fn(g, |x| 0.5 * (x[0] - 0.4).powi(2));
    let p = ModelParams::new(m, h, &u, &v).unwrap();
    let inner = InnerSolverConfig { el_residual: false, ..Default::default() };
    run_trajectory(&z, &p, &u, &v, (t / h).round() as usize, &inner).unwrap()
}

fn gibbs_run(n: usize, pot: impl Fn(f64) -> f64, steps: usize) -> (Trajectory, State) {
    let g = Grid::new_1d(0.0, 1.0, n).unwrap();
    let u = ScalarField::from_fn(g, |x| pot(x[0]));
    let gibbs = Density::normalize(g, u.values().iter().map(|x| (-x).exp()).collect()).unwrap();
    let z = State::new(gibbs.clone(), gibbs).unwrap();
    let p = ModelParams::new(1.0, 1e-2, &u, &u).unwrap();
    (run_trajectory(&z, &p, &u, &u, steps, &InnerSolverConfig::default()).unwrap(), z)
}

#[test]
fn linear_potentials_give_nonincreasing_norms() {
    let (tr, _) = gibbs_run(128, |x| 1.5 * x, 10);
    assert_eq!(tr.params.lambda, 0.0);
    let c = check_lp_propagation(&tr, 2.0).unwrap();
    assert!(c.applicable && c.passed);
    assert_eq!(c.factor, 1.0);
}

#[test]
fn quadratic_wells_give_factor_five_quarters() {
    let g = Grid::new_1d(0.0, 1.0, 64).unwrap();
    let z = State::new(gaussian(g, 0.4, 0.08), gaussian(g, 0.6, 0.08)).unwrap();
    let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
    let p = ModelParams::new(1.0, 0.1, &u, &u).unwrap();
    let tr = run_trajectory(&z, &p, &u, &u, 5, &InnerSolverConfig::default()).unwrap();
    let c = check_lp_propagation(&tr, 2.0).unwrap();
    assert!((c.factor - 1.25).abs() < 1e-12);
    assert!(c.passed && c.min_step_slack >= 0.0 && c.min_cumulative_slack >= 0.0);
    assert!(c.continuous_constant.is_finite());
}

#[test]
fn large_steps_make_the_lp_check_inapplicable() {
    let g = Grid::new_1d(0.0, 1.0, 32).unwrap();
    let z = State::new(gaussian(g, 0.4, 0.1), gaussian(g, 0.6, 0.1)).unwrap();
    let u = ScalarField::from_fn(g, |x| (x[0] - 0.5).powi(2));
    let p = ModelParams::new(1.0, 0.6, &u, &u).unwrap();
    let tr = run_trajectory(&z, &p, &u, &u, 2, &InnerSolverConfig::default()).unwrap();
    let c = check_lp_propagation(&tr, 2.0).unwrap();
    assert!(!c.applicable && !c.passed);
    let report = run_diagnostics(&tr, &DiagnosticsOptions::default()).unwrap();
    assert!(!report.lp_propagation[0].applicable);
    assert!(check_lp_propagation(&tr, 1.0).is_err());
}

#[test]
fn weak_residual_vanishes_on_a_stationary_trajectory() {
    let mut res = Vec::new();
    for n in [128, 256] {
        let (tr, _) = gibbs_run(n, |x| 4.0 * (x - 0.5).powi(2), 10);
        let w = check_weak_form(&tr).unwrap();
        res.push(w.max_u.max(w.max_v));
    }
    assert!(res[1] <= 1e-3, "{res:?}");
    assert!(res[1] < 0.3 * res[0], "{res:?}");
}

#[test]
fn weak_residual_swaps_with_the_species() {
    let a = smooth_run(64, 1e-2, 0.1, 1.0);
    let swapped = a.states[0].swapped();
    let p = ModelParams::new(1.0, 1e-2, &a.v_pot, &a.u_pot).unwrap();
    let b = run_trajectory(&swapped, &p, &a.v_pot, &a.u_pot, a.n_steps(), &a.inner).unwrap();
    let (wa, wb) = (check_weak_form(&a).unwrap(), check_weak_form(&b).unwrap());
    for (x, y) in wa.per_test.iter().zip(&wb.per_test) {
        assert!((x[0] - y[1]).abs() <= 1e-9 * (1.0 + x[0].abs()));
        assert!((x[1] - y[0]).abs() <= 1e-9 * (1.0 + x[1].abs()));
    }
}

#[test]
fn stationary_inputs_agree_with_the_oracle() {
    let (tr, z) = gibbs_run(128, |x| 4.0 * (x - 0.5).powi(2), 20);
    let fv = fv_evolve(&z, &tr.params, &tr.u_pot, &tr.v_pot, tr.final_time(), &FVConfig::default()).unwrap();
    let gap = compare_to_oracle(&tr, &fv, tr.final_time()).unwrap();
    assert!(gap.gap_u <= 2e-3 && gap.gap_v <= 2e-3);
    let other = Grid::new_1d(0.0, 1.0, 64).unwrap();
    let wrong = State::new(Density::uniform(other), Density::uniform(other)).unwrap();
    assert!(compare_to_oracle(&tr, &wrong, 0.1).is_err());
}

#[test]
fn oracle_gap_shrinks_with_the_step() {
    let coarse = smooth_run(96, 4e-3, 0.2, 1.0);
    let fine = smooth_run(96, 2e-3, 0.2, 1.0);
    let p = ModelParams::new(1.0, 1e-3, &coarse.u_pot, &coarse.v_pot).unwrap();
    let fv = fv_evolve(
        &coarse.states[0],
        &p,
        &coarse.u_pot,
        &coarse.v_pot,
        0.2,
        &FVConfig { dt_max: 1e-4, ..Default::default() },
    )
    .unwrap();
    let (a, b) = (compare_to_oracle(&coarse, &fv, 0.2).unwrap(), compare_to_oracle(&fine, &fv, 0.2).unwrap());
    assert!(b.gap_u < 0.7 * a.gap_u && b.gap_v < 0.7 * a.gap_v, "{a:?} {b:?}");
}

#[test]
fn fitted_constants_are_stable_under_step_halving() {
    for m in [1.0, 2.0] {
        let (a, b) = (smooth_run(64, 1e-2, 0.4, m), smooth_run(64, 5e-3, 0.4, m));
        let (ha, hb) = (fit_holder(&a, 400).unwrap(), fit_holder(&b, 400).unwrap());
        assert!(holder_stable(&ha, &hb), "{ha:?} {hb:?}");
        assert!(ha.max_ratio >= ha.constant);

        let (ma, mb) = (check_moments(&a), check_moments(&b));
        assert!(ma.bounded && mb.bounded);
        assert!((ma.sup_second_moment - mb.sup_second_moment).abs() <= 0.05 * ma.sup_second_moment);

        let (ga, gb) = (gradient_estimate(&a), gradient_estimate(&b));
        assert!(ga.constant.is_finite() && gb.constant.is_finite());
        assert!(ga.constant.max(gb.constant) <= 2.0 * ga.constant.min(gb.constant), "{ga:?} {gb:?}");
    }
}

#[test]
fn tampered_energies_are_flagged() {
    let mut tr = smooth_run(32, 1e-2, 0.05, 1.0);
    assert!(check_energy_monotone(&tr, 1e-8).passed);
    tr.records[2].energy.total += 10.0;
    let c = check_energy_monotone(&tr, 1e-8);
    assert!(!c.passed && c.violations == 1 && c.max_increase > 5.0);
}

#[test]
fn report_round_trips_and_is_deterministic() {
    let tr = smooth_run(48, 1e-2, 0.1, 2.0);
    let opts = DiagnosticsOptions { lp_exponents: vec![2.0, 3.0], ..Default::default() };
    let report = run_diagnostics(&tr, &opts).unwrap();
    assert_eq!(report.schema_version, SCHEMA_VERSION);
    assert!(report.passed());
    assert!(report.ibp_gap <= 1e-8);
    assert_eq!(report.lp_propagation.len(), 2);

    let back: DiagnosticsReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);

    let tr_json = serde_json::to_string(&tr).unwrap();
    let tr_back: Trajectory = serde_json::from_str(&tr_json).unwrap();
    assert_eq!(run_diagnostics(&tr_back, &opts).unwrap(), report);
    assert_eq!(run_diagnostics(&smooth_run(48, 1e-2, 0.1, 2.0), &opts).unwrap(), report);
}
