//! Scenario configuration: TOML schema, dotted overrides, validation and scenario construction.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pnp_jko::energy::ModelParams;
use pnp_jko::grid::{Density, Grid, ScalarField, State};
use pnp_jko::jko::{InnerSolverConfig, InnerSolverKind};
use pnp_jko::reference::{FVConfig, FluxScheme};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub potential: PotentialPair,
    pub initial: InitialPair,
    #[serde(default)]
    pub transport: TransportSpec,
    #[serde(default)]
    pub inner: InnerSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub m: f64,
    pub h: f64,
    #[serde(default)]
    pub n_steps: usize,
    /// Final time; when set, the step count is `round(t_final / h)` and `n_steps` is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
}

impl ModelSpec {
    pub fn steps(&self) -> usize {
        match self.t_final {
            Some(t) => (t / self.h).round() as usize,
            None => self.n_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialPair {
    pub u: PotentialSpec,
    pub v: PotentialSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    Constant {
        value: f64,
    },
    /// `strength · |x - center|²`.
    Quadratic {
        center: Vec<f64>,
        strength: f64,
    },
    /// `strength · (|x - center|² - radius²)²`.
    DoubleWell {
        center: Vec<f64>,
        radius: f64,
        strength: f64,
    },
    Linear {
        slope: Vec<f64>,
    },
    /// One value per cell, first axis fastest.
    Tabulated {
        file: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPair {
    pub u: InitialSpec,
    pub v: InitialSpec,
    /// Relative amplitude of seeded multiplicative noise.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Uniform,
    Gaussian { bumps: Vec<BumpSpec> },
    Tabulated { file: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub width: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Auto,
    Exact1d,
    Entropic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSpec {
    pub mode: TransportMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl Default for TransportSpec {
    fn default() -> Self {
        Self { mode: TransportMode::Auto, epsilon: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSpec {
    pub tol: f64,
    pub max_iter: usize,
    pub el_residual: bool,
    /// Abort the run when a step stops before reaching `tol`.
    pub require_convergence: bool,
}

impl Default for InnerSpec {
    fn default() -> Self {
        let d = InnerSolverConfig::default();
        Self { tol: d.tol, max_iter: d.max_iter, el_residual: d.el_residual, require_convergence: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub enabled: bool,
    pub flux: FluxScheme,
    pub cfl: f64,
    pub dt_max: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        let d = FVConfig::default();
        Self { enabled: false, flux: d.flux_scheme, cfl: d.cfl_safety, dt_max: d.dt_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSpec {
    pub enabled: bool,
    pub lp_exponents: Vec<f64>,
    pub weak_form: bool,
    pub holder_max_pairs: usize,
    pub energy_slack: f64,
    pub mass_tol: f64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        let d = pnp_jko::diagnostics::DiagnosticsOptions::default();
        Self {
            enabled: true,
            lp_exponents: d.lp_exponents,
            weak_form: d.weak_form,
            holder_max_pairs: d.holder_max_pairs,
            energy_slack: d.energy_slack,
            mass_tol: d.mass_tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    Csv,
    Binary,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Run directory below the output root; defaults to the config file stem.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Snapshot cadence in steps; 0 keeps only the first and last state.
    pub snapshot_every: usize,
    pub snapshot_format: SnapshotFormat,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, snapshot_every: 10, snapshot_format: SnapshotFormat::Csv }
    }
}

/// A problem found while validating, keyed by dotted path.
#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

fn issue(path: &str, message: impl Into<String>) -> Issue {
    Issue { path: path.to_string(), message: message.into() }
}

impl ScenarioConfig {
    pub fn dim(&self) -> usize {
        self.grid.cells.len()
    }

    pub fn validate(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let d = self.dim();
        if !(d == 1 || d == 2) {
            out.push(issue("grid.cells", format!("expected 1 or 2 entries, got {d}")));
            return out;
        }
        if self.grid.lower.len() != d || self.grid.upper.len() != d {
            out.push(issue("grid", "lower, upper and cells must have the same length"));
        }
        if self.grid.cells.iter().any(|c| *c < 2) {
            out.push(issue("grid.cells", "every axis needs at least 2 cells"));
        }
        for (l, u) in self.grid.lower.iter().zip(&self.grid.upper) {
            if !(l.is_finite() && u.is_finite() && u > l) {
                out.push(issue("grid.upper", format!("upper must exceed lower ({l} vs {u})")));
            }
        }
        if !(self.model.m >= 1.0 && self.model.m.is_finite()) {
            out.push(issue("model.m", format!("must be >= 1, got {}", self.model.m)));
        }
        if !(self.model.h > 0.0 && self.model.h.is_finite()) {
            out.push(issue("model.h", format!("must be positive, got {}", self.model.h)));
        }
        if let Some(t) = self.model.t_final {
            if !(t >= 0.0 && t.is_finite()) {
                out.push(issue("model.t_final", format!("must be finite and >= 0, got {t}")));
            }
        }
        for (name, p) in [("u", &self.potential.u), ("v", &self.potential.v)] {
            let path = format!("potential.{name}");
            match p {
                PotentialSpec::Quadratic { center, .. } | PotentialSpec::DoubleWell { center, .. }
                    if center.len() != d =>
                {
                    out.push(issue(&format!("{path}.center"), format!("expected {d} coordinates")));
                }
                PotentialSpec::Linear { slope } if slope.len() != d => {
                    out.push(issue(&format!("{path}.slope"), format!("expected {d} coordinates")));
                }
                _ => {}
            }
        }
        for (name, s) in [("u", &self.initial.u), ("v", &self.initial.v)] {
            if let InitialSpec::Gaussian { bumps } = s {
                if bumps.is_empty() {
                    out.push(issue(&format!("initial.{name}.bumps"), "need at least one bump"));
                }
                for b in bumps {
                    if b.center.len() != d {
                        out.push(issue(&format!("initial.{name}.bumps"), format!("bump center needs {d} coordinates")));
                    }
                    if !(b.width > 0.0) || !(b.weight > 0.0) {
                        out.push(issue(&format!("initial.{name}.bumps"), "bump width and weight must be positive"));
                    }
                }
            }
        }
        if !(0.0..1.0).contains(&self.initial.noise) {
            out.push(issue("initial.noise", format!("must lie in [0, 1), got {}", self.initial.noise)));
        }
        if self.transport.mode == TransportMode::Exact1d && d != 1 {
            out.push(issue("transport.mode", "exact1d needs a 1-D grid"));
        }
        if let Some(e) = self.transport.epsilon {
            if !(e > 0.0 && e.is_finite()) {
                out.push(issue("transport.epsilon", format!("must be positive, got {e}")));
            }
        }
        if !(self.inner.tol > 0.0) {
            out.push(issue("inner.tol", format!("must be positive, got {}", self.inner.tol)));
        }
        if self.inner.max_iter == 0 {
            out.push(issue("inner.max_iter", "must be at least 1"));
        }
        if self.oracle.enabled {
            if !(self.oracle.cfl > 0.0 && self.oracle.cfl <= 1.0) {
                out.push(issue("oracle.cfl", format!("must lie in (0, 1], got {}", self.oracle.cfl)));
            }
            if !(self.oracle.dt_max > 0.0) {
                out.push(issue("oracle.dt_max", "must be positive"));
            }
        }
        if self.diagnostics.lp_exponents.iter().any(|p| !(*p > 1.0 && p.is_finite())) {
            out.push(issue("diagnostics.lp_exponents", "exponents must be finite and > 1"));
        }
        if let Some(dir) = &self.output.dir {
            if Path::new(dir).is_absolute() || dir.split(['/', '\\']).any(|c| c == "..") {
                out.push(issue("output.dir", "must be a relative path without '..'"));
            }
        }
        out
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, ignoring where the artifacts go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir = None;
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn inner_config(&self) -> InnerSolverConfig {
        InnerSolverConfig {
            kind: match self.transport.mode {
                TransportMode::Auto => InnerSolverKind::Auto,
                TransportMode::Exact1d => InnerSolverKind::Exact1d,
                TransportMode::Entropic => InnerSolverKind::Entropic,
            },
            tol: self.inner.tol,
            max_iter: self.inner.max_iter,
            epsilon: self.transport.epsilon,
            el_residual: self.inner.el_residual,
        }
    }

    pub fn fv_config(&self) -> FVConfig {
        FVConfig { flux_scheme: self.oracle.flux, cfl_safety: self.oracle.cfl, dt_max: self.oracle.dt_max }
    }

    pub fn diagnostics_options(&self) -> pnp_jko::diagnostics::DiagnosticsOptions {
        pnp_jko::diagnostics::DiagnosticsOptions {
            lp_exponents: self.diagnostics.lp_exponents.clone(),
            holder_max_pairs: self.diagnostics.holder_max_pairs,
            weak_form: self.diagnostics.weak_form,
            energy_slack: self.diagnostics.energy_slack,
            mass_tol: self.diagnostics.mass_tol,
        }
    }
}

/// Configuration as loaded from disk, with the source kept for error locations.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    pub path: PathBuf,
    pub source: String,
    pub overridden: Vec<String>,
}

impl LoadedConfig {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or(Path::new("."))
    }

    pub fn stem(&self) -> String {
        self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
    }

    fn locate(&self, path: &str) -> String {
        if self
            .overridden
            .iter()
            .any(|o| path == o || path.starts_with(&format!("{o}.")) || o.starts_with(&format!("{path}.")))
        {
            return "override".into();
        }
        match line_of(&self.source, path) {
            Some(n) => format!("line {n}"),
            None => "default".into(),
        }
    }

    /// Validation failures rendered as `file:line: path: message`.
    pub fn check(&self) -> Result<(), Failure> {
        let issues = self.config.validate();
        if issues.is_empty() {
            return Ok(());
        }
        let mut msg = String::new();
        for i in &issues {
            let _ = writeln!(msg, "{} ({}): {}: {}", self.path.display(), self.locate(&i.path), i.path, i.message);
        }
        Err(Failure::config(msg.trim_end()))
    }
}

/// Line (1-based) where a dotted key is set in a TOML document, if it is set literally.
pub fn line_of(source: &str, dotted: &str) -> Option<usize> {
    let mut table = String::new();
    for (k, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            table = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if table == dotted {
                return Some(k + 1);
            }
            continue;
        }
        if let Some((key, _)) = line.split_once('=') {
            let key = key.trim().trim_matches('"');
            let full = if table.is_empty() { key.to_string() } else { format!("{table}.{key}") };
            if full == dotted || dotted.starts_with(&format!("{full}.")) {
                return Some(k + 1);
            }
        }
    }
    None
}

/// Parse `raw` as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Set `path` (dotted) in `table` to `value`, creating intermediate tables.
pub fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), Failure> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Failure::config(format!("invalid override path '{path}'")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Failure::config(format!("override '{path}': '{k}' is not a table"))),
        };
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Split `key=value`.
pub fn parse_assignment(s: &str) -> Result<(String, toml::Value), Failure> {
    let (k, v) =
        s.split_once('=').ok_or_else(|| Failure::config(format!("override '{s}' is not of the form key=value")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

pub fn load(path: &Path, overrides: &[(String, toml::Value)]) -> Result<LoadedConfig, Failure> {
    let source = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    from_source(path, source, overrides)
}

pub fn from_source(path: &Path, source: String, overrides: &[(String, toml::Value)]) -> Result<LoadedConfig, Failure> {
    let mut table: toml::Table =
        source.parse().map_err(|e: toml::de::Error| Failure::config(format!("{}: {e}", path.display())))?;
    for (k, v) in overrides {
        set_path(&mut table, k, v.clone())?;
    }
    let config = match ScenarioConfig::deserialize(toml::Value::Table(table)) {
        Ok(c) => c,
        Err(e) => {
            // Re-parse the untouched source so the message carries a line number when possible.
            let located = toml::from_str::<ScenarioConfig>(&source).err().map(|e| e.to_string());
            return Err(Failure::config(format!("{}: {}", path.display(), located.unwrap_or_else(|| e.to_string()))));
        }
    };
    let loaded = LoadedConfig {
        config,
        path: path.to_path_buf(),
        source,
        overridden: overrides.iter().map(|o| o.0.clone()).collect(),
    };
    loaded.check()?;
    Ok(loaded)
}

/// Everything needed to start a run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: Grid,
    pub params: ModelParams,
    pub u_pot: ScalarField,
    pub v_pot: ScalarField,
    pub z0: State,
}

fn make_grid(g: &GridSpec) -> Result<Grid, Failure> {
    let r = if g.cells.len() == 1 {
        Grid::new_1d(g.lower[0], g.upper[0], g.cells[0])
    } else {
        Grid::new_2d([g.lower[0], g.lower[1]], [g.upper[0], g.upper[1]], [g.cells[0], g.cells[1]])
    };
    r.map_err(|e| Failure::config(format!("grid: {e}")))
}

fn read_table(base: &Path, file: &Path, grid: &Grid, what: &str) -> Result<Vec<f64>, Failure> {
    let path = if file.is_absolute() { file.to_path_buf() } else { base.join(file) };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Failure::config(format!("{what}: {}: {e}", path.display())))?;
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::config(format!("{what}: {}: {e}", path.display())))?;
        for field in rec.iter().filter(|f| !f.is_empty()) {
            vals.push(
                field
                    .parse::<f64>()
                    .map_err(|e| Failure::config(format!("{what}: {}: '{field}': {e}", path.display())))?,
            );
        }
    }
    if vals.len() != grid.len() {
        return Err(Failure::config(format!(
            "{what}: {} has {} values, grid has {} cells",
            path.display(),
            vals.len(),
            grid.len()
        )));
    }
    Ok(vals)
}

fn dist_sq(x: [f64; 2], c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(a, ca)| (x[a] - ca).powi(2)).sum()
}

fn potential(spec: &PotentialSpec, grid: Grid, base: &Path, what: &str) -> Result<ScalarField, Failure> {
    Ok(match spec {
        PotentialSpec::Zero => ScalarField::zeros(grid),
        PotentialSpec::Constant { value } => ScalarField::constant(grid, *value),
        PotentialSpec::Quadratic { center, strength } => ScalarField::from_fn(grid, |x| strength * dist_sq(x, center)),
        PotentialSpec::DoubleWell { center, radius, strength } => {
            ScalarField::from_fn(grid, |x| strength * (dist_sq(x, center) - radius * radius).powi(2))
        }
        PotentialSpec::Linear { slope } => {
            ScalarField::from_fn(grid, |x| slope.iter().enumerate().map(|(a, s)| s * x[a]).sum())
        }
        PotentialSpec::Tabulated { file } => ScalarField::new(grid, read_table(base, file, &grid, what)?)
            .map_err(|e| Failure::config(format!("{what}: {e}")))?,
    })
}

fn initial(
    spec: &InitialSpec,
    grid: Grid,
    base: &Path,
    noise: f64,
    rng: &mut ChaCha8Rng,
    what: &str,
) -> Result<Density, Failure> {
    let mut vals = match spec {
        InitialSpec::Uniform => vec![1.0; grid.len()],
        InitialSpec::Gaussian { bumps } => ScalarField::from_fn(grid, |x| {
            bumps.iter().map(|b| b.weight * (-dist_sq(x, &b.center) / (2.0 * b.width * b.width)).exp()).sum()
        })
        .into_values(),
        InitialSpec::Tabulated { file } => read_table(base, file, &grid, what)?,
    };
    if noise > 0.0 {
        for v in &mut vals {
            *v *= 1.0 + noise * rng.gen_range(-1.0..1.0);
        }
    }
    Density::normalize(grid, vals).map_err(|e| Failure::config(format!("{what}: {e}")))
}

impl LoadedConfig {
    pub fn scenario(&self) -> Result<Scenario, Failure> {
        let c = &self.config;
        let grid = make_grid(&c.grid)?;
        let base = self.base_dir();
        let u_pot = potential(&c.potential.u, grid, base, "potential.u")?;
        let v_pot = potential(&c.potential.v, grid, base, "potential.v")?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let u0 = initial(&c.initial.u, grid, base, c.initial.noise, &mut rng, "initial.u")?;
        let v0 = initial(&c.initial.v, grid, base, c.initial.noise, &mut rng, "initial.v")?;
        let params = ModelParams::new(c.model.m, c.model.h, &u_pot, &v_pot)
            .map_err(|e| Failure::config(format!("model: {e}")))?;
        let z0 = State::new(u0, v0).map_err(|e| Failure::config(format!("initial: {e}")))?;
        Ok(Scenario { grid, params, u_pot, v_pot, z0 })
    }
}
