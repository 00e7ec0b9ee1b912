//! Artifact encoders. Every file starts with a header naming the artifact version and config hash.

use std::io::Write;
use std::path::{Path, PathBuf};

use pnp_jko::grid::{CellField, Grid, State};
use pnp_jko::jko::Trajectory;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const ARTIFACT_VERSION: u32 = 1;
pub const SNAPSHOT_MAGIC: &[u8; 8] = b"PNPJKO01";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub artifact_version: u32,
    pub config_hash: String,
    pub tool: String,
}

impl Header {
    pub fn new(config_hash: &str) -> Self {
        Self {
            artifact_version: ARTIFACT_VERSION,
            config_hash: config_hash.to_string(),
            tool: format!("pnpjko {}", env!("CARGO_PKG_VERSION")),
        }
    }

    fn comment(&self) -> String {
        format!("# {} artifact_version={} config_hash={}\n", self.tool, self.artifact_version, self.config_hash)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::solver(format!("writing {}: {e}", path.display()))
}

/// Write through a temporary sibling and rename, so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    let mut f = std::fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub const TRAJECTORY_COLUMNS: [&str; 18] = [
    "n",
    "t",
    "E_diff",
    "E_ext",
    "E_cpl",
    "E_total",
    "d2_step",
    "mass_u",
    "mass_v",
    "l2_u",
    "l2_v",
    "linf_u",
    "linf_v",
    "m2_u",
    "m2_v",
    "inner_residual",
    "inner_iterations",
    "converged",
];

fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// One row per state: `n = 0` carries the initial energy and zero step data.
pub fn trajectory_csv(traj: &Trajectory, header: &Header) -> Vec<u8> {
    let mut out = header.comment().into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRAJECTORY_COLUMNS).expect("in-memory write");
    let center = traj.grid().domain_center();
    for (n, z) in traj.states.iter().enumerate() {
        let (energy, d2, res, its, conv) = match n {
            0 => (traj.initial_energy, 0.0, 0.0, 0, true),
            _ => {
                let r = &traj.records[n - 1];
                (r.energy, r.step_distance_sq, r.inner_residual, r.inner_iterations, r.converged)
            }
        };
        let norm = |p: f64| (z.u.lp_norm(p).unwrap_or(f64::NAN), z.v.lp_norm(p).unwrap_or(f64::NAN));
        let (l2, linf) = (norm(2.0), norm(f64::INFINITY));
        let row = [
            n.to_string(),
            fmt(traj.time(n)),
            fmt(energy.diff),
            fmt(energy.ext),
            fmt(energy.cpl),
            fmt(energy.total),
            fmt(d2),
            fmt(z.u.mass()),
            fmt(z.v.mass()),
            fmt(l2.0),
            fmt(l2.1),
            fmt(linf.0),
            fmt(linf.1),
            fmt(z.u.second_moment(center)),
            fmt(z.v.second_moment(center)),
            fmt(res),
            its.to_string(),
            conv.to_string(),
        ];
        w.write_record(&row).expect("in-memory write");
    }
    out.extend(w.into_inner().expect("in-memory flush"));
    out
}

fn grid_line(grid: &Grid) -> String {
    let d = grid.dim();
    let (lo, hi, n) = (grid.lower(), grid.upper(), grid.n_cells());
    format!("# grid dim={d} lower={:?} upper={:?} cells={:?}\n", &lo[..d], &hi[..d], &n[..d])
}

/// Cell-center coordinates and both densities, first axis fastest.
pub fn snapshot_csv(z: &State, step: usize, t: f64, header: &Header) -> Vec<u8> {
    let grid = z.grid();
    let mut out = header.comment();
    out.push_str(&grid_line(grid));
    out.push_str(&format!("# step={step} t={}\n", fmt(t)));
    let mut w = csv::Writer::from_writer(Vec::new());
    if grid.dim() == 1 {
        w.write_record(["x", "u", "v"]).expect("in-memory write");
    } else {
        w.write_record(["x", "y", "u", "v"]).expect("in-memory write");
    }
    for i in 0..grid.len() {
        let c = grid.center(i);
        let mut row = vec![fmt(c[0])];
        if grid.dim() == 2 {
            row.push(fmt(c[1]));
        }
        row.push(fmt(z.u.values()[i]));
        row.push(fmt(z.v.values()[i]));
        w.write_record(&row).expect("in-memory write");
    }
    let mut bytes = out.into_bytes();
    bytes.extend(w.into_inner().expect("in-memory flush"));
    bytes
}

/// Little-endian binary snapshot:
/// magic, version `u32`, hash (64 ASCII bytes), dim `u32`, cells `2×u64`, lower `2×f64`,
/// upper `2×f64`, step `u64`, t `f64`, then `u` and `v` as `f64`.
pub fn snapshot_binary(z: &State, step: usize, t: f64, header: &Header) -> Vec<u8> {
    let grid = z.grid();
    let mut out = Vec::with_capacity(160 + 16 * grid.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&header.artifact_version.to_le_bytes());
    let mut hash = [b' '; 64];
    for (d, s) in hash.iter_mut().zip(header.config_hash.bytes()) {
        *d = s;
    }
    out.extend_from_slice(&hash);
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for n in grid.n_cells() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for x in grid.lower().into_iter().chain(grid.upper()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(step as u64).to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for x in z.u.values().iter().chain(z.v.values()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinarySnapshot {
    pub version: u32,
    pub config_hash: String,
    pub dim: usize,
    pub cells: [usize; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub step: usize,
    pub t: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn read_snapshot_binary(bytes: &[u8]) -> Result<BinarySnapshot, String> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], String> {
        let s = bytes.get(pos..pos + n).ok_or("truncated snapshot")?;
        pos += n;
        Ok(s)
    };
    if take(8)? != SNAPSHOT_MAGIC {
        return Err("bad magic".into());
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
    let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
    let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
    let version = u32_at(take(4)?);
    let config_hash = String::from_utf8_lossy(take(64)?).trim_end().to_string();
    let dim = u32_at(take(4)?) as usize;
    let cells = [u64_at(take(8)?) as usize, u64_at(take(8)?) as usize];
    let lower = [f64_at(take(8)?), f64_at(take(8)?)];
    let upper = [f64_at(take(8)?), f64_at(take(8)?)];
    let step = u64_at(take(8)?) as usize;
    let t = f64_at(take(8)?);
    let n = cells[0] * cells[1];
    let mut read = |k: usize| -> Result<Vec<f64>, String> { (0..k).map(|_| take(8).map(f64_at)).collect() };
    let u = read(n)?;
    let v = read(n)?;
    Ok(BinarySnapshot { version, config_hash, dim, cells, lower, upper, step, t, u, v })
}

#[derive(Serialize, Deserialize)]
pub struct Document<T> {
    pub header: Header,
    #[serde(flatten)]
    pub body: T,
}

pub fn json<T: Serialize>(header: &Header, body: &T) -> Vec<u8> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        header: &'a Header,
        #[serde(flatten)]
        body: &'a T,
    }
    let mut s = serde_json::to_vec_pretty(&Doc { header, body }).expect("serializable");
    s.push(b'\n');
    s
}

#[derive(Serialize, Deserialize)]
pub struct TrajectoryBody {
    pub trajectory: Trajectory,
}

pub fn read_trajectory(path: &Path) -> Result<(Header, Trajectory), Failure> {
    let file: PathBuf = if path.is_dir() { path.join("trajectory.json") } else { path.to_path_buf() };
    let bytes = std::fs::read(&file).map_err(|e| Failure::config(format!("{}: {e}", file.display())))?;
    let doc: Document<TrajectoryBody> =
        serde_json::from_slice(&bytes).map_err(|e| Failure::config(format!("{}: {e}", file.display())))?;
    Ok((doc.header, doc.body.trajectory))
}
