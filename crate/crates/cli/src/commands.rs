//! Subcommand bodies. Each returns a `Failure` whose code becomes the exit status.

use std::path::{Path, PathBuf};

use pnp_jko::diagnostics::{compare_to_oracle, run_diagnostics, DiagnosticsReport, OracleGap};
use pnp_jko::energy::total_energy;
use pnp_jko::grid::State;
use pnp_jko::jko::{jko_step, Trajectory};
use pnp_jko::reference::fv_evolve;
use pnp_jko::transport::{w2_sq, TransportMode};
use serde::{Deserialize, Serialize};

use crate::config::{self, LoadedConfig, SnapshotFormat};
use crate::output::{self, Header};
use crate::Failure;

pub const OUTPUT_ROOT_ENV: &str = "PNPJKO_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "pnpjko-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub steps: usize,
    pub final_energy: f64,
    pub oracle: Option<OracleGap>,
    pub energy_monotone: Option<bool>,
    pub square_distance_ok: Option<bool>,
    pub diagnostics_passed: Option<bool>,
    pub unconverged_steps: usize,
}

fn snapshot_steps(every: usize, n_steps: usize) -> Vec<usize> {
    let mut s: Vec<usize> = match every {
        0 => vec![0],
        k => (0..=n_steps).step_by(k).collect(),
    };
    if s.last() != Some(&n_steps) {
        s.push(n_steps);
    }
    s
}

fn write_states(dir: &Path, traj: &Trajectory, header: &Header, loaded: &LoadedConfig) -> Result<(), Failure> {
    let out = &loaded.config.output;
    output::write_atomic(&dir.join("trajectory.csv"), &output::trajectory_csv(traj, header))?;
    for n in snapshot_steps(out.snapshot_every, traj.n_steps()) {
        let (z, t) = (&traj.states[n], traj.time(n));
        if matches!(out.snapshot_format, SnapshotFormat::Csv | SnapshotFormat::Both) {
            output::write_atomic(
                &dir.join(format!("snapshots/step_{n:06}.csv")),
                &output::snapshot_csv(z, n, t, header),
            )?;
        }
        if matches!(out.snapshot_format, SnapshotFormat::Binary | SnapshotFormat::Both) {
            output::write_atomic(
                &dir.join(format!("snapshots/step_{n:06}.bin")),
                &output::snapshot_binary(z, n, t, header),
            )?;
        }
    }
    output::write_atomic(
        &dir.join("trajectory.json"),
        &output::json(header, &output::TrajectoryBody { trajectory: traj.clone() }),
    )
}

/// Directory a run writes to: `root / output.dir`, or `root / <config stem>`.
pub fn run_dir(loaded: &LoadedConfig, root: &Path) -> PathBuf {
    root.join(loaded.config.output.dir.clone().unwrap_or_else(|| loaded.stem()))
}

/// Run one scenario and write its artifacts. With `strict`, failed checks become exit code 3.
pub fn run(loaded: &LoadedConfig, root: &Path, strict: bool) -> Result<RunSummary, Failure> {
    let c = &loaded.config;
    let sc = loaded.scenario()?;
    let hash = c.hash();
    let header = Header::new(&hash);
    let dir = run_dir(loaded, root);
    output::write_atomic(&dir.join("config.toml"), format!("# config_hash={hash}\n{}", c.to_toml()).as_bytes())?;

    let inner = c.inner_config();
    let initial_energy = total_energy(&sc.z0, &sc.params, &sc.u_pot, &sc.v_pot)
        .map_err(|e| Failure::solver(format!("initial energy: {e}")))?;
    let mut traj = Trajectory {
        states: vec![sc.z0.clone()],
        params: sc.params,
        u_pot: sc.u_pot.clone(),
        v_pot: sc.v_pot.clone(),
        inner,
        records: Vec::with_capacity(c.model.steps()),
        initial_energy,
    };
    for n in 0..c.model.steps() {
        let failure = match jko_step(&traj.states[n], &sc.params, &sc.u_pot, &sc.v_pot, &inner) {
            Ok(r) if r.record.converged || !c.inner.require_convergence => {
                traj.states.push(r.z_next);
                traj.records.push(r.record);
                continue;
            }
            Ok(r) => format!(
                "inner solver stopped at residual {:e} after {} iterations",
                r.record.inner_residual, r.record.inner_iterations
            ),
            Err(e) => e.to_string(),
        };
        write_states(&dir, &traj, &header, loaded)?;
        return Err(Failure::solver(format!(
            "step {}: {failure} (partial artifacts for {n} steps in {})",
            n + 1,
            dir.display()
        )));
    }
    write_states(&dir, &traj, &header, loaded)?;

    let oracle = if c.oracle.enabled {
        let t = traj.final_time();
        let fv = fv_evolve(&sc.z0, &sc.params, &sc.u_pot, &sc.v_pot, t, &c.fv_config())
            .map_err(|e| Failure::solver(format!("oracle: {e}")))?;
        let gap = compare_to_oracle(&traj, &fv, t).map_err(|e| Failure::solver(format!("oracle: {e}")))?;
        #[derive(Serialize)]
        struct OracleBody {
            t: f64,
            gap: OracleGap,
        }
        output::write_atomic(&dir.join("oracle.json"), &output::json(&header, &OracleBody { t, gap }))?;
        output::write_atomic(&dir.join("oracle_final.csv"), &output::snapshot_csv(&fv, traj.n_steps(), t, &header))?;
        Some(gap)
    } else {
        None
    };

    let report: Option<DiagnosticsReport> = if c.diagnostics.enabled {
        let r = run_diagnostics(&traj, &c.diagnostics_options())
            .map_err(|e| Failure::diagnostics(format!("diagnostics: {e}")))?;
        #[derive(Serialize)]
        struct DiagBody<'a> {
            report: &'a DiagnosticsReport,
            passed: bool,
        }
        output::write_atomic(
            &dir.join("diagnostics.json"),
            &output::json(&header, &DiagBody { report: &r, passed: r.passed() }),
        )?;
        Some(r)
    } else {
        None
    };

    let summary = RunSummary {
        out_dir: dir,
        config_hash: hash,
        steps: traj.n_steps(),
        final_energy: *traj.energies().last().unwrap(),
        oracle,
        energy_monotone: report.as_ref().map(|r| r.energy_monotone.passed),
        square_distance_ok: report.as_ref().map(|r| r.square_distance_bound.passed),
        diagnostics_passed: report.as_ref().map(|r| r.passed()),
        unconverged_steps: traj.records.iter().filter(|r| !r.converged).count(),
    };
    if strict && summary.diagnostics_passed == Some(false) {
        return Err(Failure::diagnostics(format!(
            "diagnostics failed; see {}",
            summary.out_dir.join("diagnostics.json").display()
        )));
    }
    Ok(summary)
}

/// Load, validate and build the scenario without running it.
pub fn validate(loaded: &LoadedConfig) -> Result<String, Failure> {
    loaded.scenario()?;
    Ok(loaded.config.hash())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub status: String,
    pub final_energy: Option<f64>,
    pub gap_u: Option<f64>,
    pub gap_v: Option<f64>,
    pub energy_monotone: Option<bool>,
    pub square_distance_ok: Option<bool>,
    pub diagnostics_passed: Option<bool>,
    pub error: String,
}

fn status_of(code: i32) -> &'static str {
    match code {
        crate::EXIT_CONFIG => "config_error",
        crate::EXIT_SOLVER => "solver_error",
        _ => "diagnostics_failed",
    }
}

/// Run one scenario per axis value, concurrently. A failing value only fails its own row.
///
/// Returns the rows in input order, the summary path and the largest row exit code.
pub fn sweep(
    path: &Path,
    overrides: &[(String, toml::Value)],
    axis: &str,
    values: &[String],
    root: &Path,
    strict: bool,
) -> Result<(Vec<SweepRow>, PathBuf, i32), Failure> {
    let base = config::load(path, overrides)?;
    let base_dir = base.config.output.dir.clone().unwrap_or_else(|| base.stem());
    let rows: Vec<(SweepRow, i32)> = pnp_jko::par::map_collect(values, |value| {
        let mut ov = overrides.to_vec();
        ov.push((axis.to_string(), config::parse_value(value)));
        let safe: String =
            value.chars().map(|ch| if ch.is_ascii_alphanumeric() || "+-._".contains(ch) { ch } else { '_' }).collect();
        ov.push(("output.dir".into(), toml::Value::String(format!("{base_dir}/{axis}={safe}"))));
        let outcome = config::from_source(path, base.source.clone(), &ov).and_then(|l| run(&l, root, strict));
        let mut row = SweepRow {
            value: value.clone(),
            status: "ok".into(),
            final_energy: None,
            gap_u: None,
            gap_v: None,
            energy_monotone: None,
            square_distance_ok: None,
            diagnostics_passed: None,
            error: String::new(),
        };
        match outcome {
            Ok(s) => {
                row.final_energy = Some(s.final_energy);
                row.gap_u = s.oracle.map(|g| g.gap_u);
                row.gap_v = s.oracle.map(|g| g.gap_v);
                row.energy_monotone = s.energy_monotone;
                row.square_distance_ok = s.square_distance_ok;
                row.diagnostics_passed = s.diagnostics_passed;
                (row, crate::EXIT_OK)
            }
            Err(f) => {
                row.status = status_of(f.code).into();
                row.error = f.message.replace('\n', "; ");
                (row, f.code)
            }
        }
    });

    let code = rows.iter().map(|r| r.1).max().unwrap_or(crate::EXIT_OK);
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.0).collect();
    let header = Header::new(&base.config.hash());
    let file = root.join(&base_dir).join(format!("sweep_{axis}.csv"));
    output::write_atomic(&file, &sweep_csv(&rows, axis, &header))?;
    Ok((rows, file, code))
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

pub fn sweep_csv(rows: &[SweepRow], axis: &str, header: &Header) -> Vec<u8> {
    let mut out = format!(
        "# {} artifact_version={} config_hash={} axis={axis}\n",
        header.tool, header.artifact_version, header.config_hash
    )
    .into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "value",
        "status",
        "final_energy",
        "gap_u",
        "gap_v",
        "energy_monotone",
        "square_distance_ok",
        "diagnostics_passed",
        "error",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.value.clone(),
            r.status.clone(),
            opt(&r.final_energy),
            opt(&r.gap_u),
            opt(&r.gap_v),
            opt(&r.energy_monotone),
            opt(&r.square_distance_ok),
            opt(&r.diagnostics_passed),
            r.error.clone(),
        ])
        .expect("in-memory write");
    }
    out.extend(w.into_inner().expect("in-memory flush"));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub t: f64,
    pub l1_u: f64,
    pub l1_v: f64,
    pub w2_u: f64,
    pub w2_v: f64,
    pub energy_a: f64,
    pub energy_b: f64,
}

/// Compare two trajectories on the time grid of the first, up to the shorter final time.
pub fn compare(a: &Path, b: &Path) -> Result<Vec<CompareRow>, Failure> {
    let (_, ta) = output::read_trajectory(a)?;
    let (_, tb) = output::read_trajectory(b)?;
    if ta.grid() != tb.grid() {
        return Err(Failure::config(format!("grids differ: {:?} vs {:?}", ta.grid(), tb.grid())));
    }
    let mode = if ta.grid().dim() == 1 { TransportMode::Exact1d } else { TransportMode::Entropic };
    let (ea, eb) = (ta.energies(), tb.energies());
    let t_end = ta.final_time().min(tb.final_time());
    let err = |e: pnp_jko::Error| Failure::solver(format!("compare: {e}"));
    (0..=ta.n_steps())
        .map(|n| ta.time(n))
        .filter(|t| *t <= t_end * (1.0 + 1e-12))
        .map(|t| {
            let (ia, ib) = (ta.index_at(t), tb.index_at(t));
            let (za, zb): (&State, &State) = (&ta.states[ia], &tb.states[ib]);
            Ok(CompareRow {
                t,
                l1_u: za.u.l1_distance(&zb.u).map_err(err)?,
                l1_v: za.v.l1_distance(&zb.v).map_err(err)?,
                w2_u: w2_sq(&za.u, &zb.u, mode, None).map_err(err)?.max(0.0).sqrt(),
                w2_v: w2_sq(&za.v, &zb.v, mode, None).map_err(err)?.max(0.0).sqrt(),
                energy_a: ea[ia],
                energy_b: eb[ib],
            })
        })
        .collect()
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "l1_u", "l1_v", "w2_u", "w2_v", "energy_a", "energy_b"]).expect("in-memory write");
    for r in rows {
        w.write_record([r.t, r.l1_u, r.l1_v, r.w2_u, r.w2_v, r.energy_a, r.energy_b].map(|x| format!("{x:e}")))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}
