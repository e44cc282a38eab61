//! Run configuration, binary field snapshots, CSV diagnostics and JSON
//! persistence of trajectories and reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::forcing_for_grashof;
use crate::dynamics::{Forcing, PhysicsParams, SystemKind, SystemSpec};
use crate::experiments::{DQSweepSpec, ExperimentReport, SyncCriteria, TrajectoryNorm};
use crate::interp::{admissibility, InterpolantKind, InterpolantSpec};
use crate::random::{random_shell, seeded};
use crate::spectral::{norm, taylor_green, GridSpec, SpectralField};
use crate::stepper::{AdmissibilityPolicy, SolverConfig, Trajectory};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"NS2DSENS";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0} (expected {SNAPSHOT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("snapshot checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("snapshot too short ({0} bytes)")]
    Truncated(usize),
    #[error("snapshot payload has {found} bytes, expected {expected} for N = {n}")]
    Length { n: usize, expected: usize, found: usize },
    #[error("snapshot grid mismatch: expected N = {expected}, file has N = {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid snapshot contents: {0}")]
    Invalid(String),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes `field` at time `t`: magic, version, N, t, then the x and y
/// coefficient planes as little-endian `(re, im)` pairs in FFT index order,
/// followed by the CRC32 of everything before it.
pub fn snapshot_bytes(field: &SpectralField, t: f64) -> Vec<u8> {
    let n = field.grid().n();
    let mut buf = Vec::with_capacity(HEADER_LEN + 32 * n * n + 4);
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&t.to_le_bytes());
    for z in field.coefficients() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn parse_snapshot(bytes: &[u8]) -> Result<(SpectralField, f64), IoError> {
    if bytes.len() < 8 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(IoError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(IoError::Truncated(bytes.len()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let version = u32_at(8);
    if version != SNAPSHOT_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32_at(bytes.len() - 4);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(IoError::Crc { stored, computed });
    }
    let n = u32_at(12) as usize;
    let expected = HEADER_LEN + 32 * n * n;
    if body.len() != expected {
        return Err(IoError::Length {
            n,
            expected,
            found: body.len(),
        });
    }
    let t = f64_at(16);
    let grid = GridSpec::new(n).map_err(|e| IoError::Invalid(e.to_string()))?;
    let data: Vec<Complex64> = (0..2 * n * n)
        .map(|k| {
            let o = HEADER_LEN + 16 * k;
            Complex64::new(f64_at(o), f64_at(o + 8))
        })
        .collect();
    let field = SpectralField::from_coefficients(&grid, data).map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok((field, t))
}

pub fn write_snapshot(field: &SpectralField, t: f64, path: &Path) -> Result<(), IoError> {
    fs::write(path, snapshot_bytes(field, t)).map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<(SpectralField, f64), IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse_snapshot(&bytes)
}

/// Reads a snapshot and requires it to live on `grid`.
pub fn read_snapshot_on(grid: &GridSpec, path: &Path) -> Result<(SpectralField, f64), IoError> {
    let (f, t) = read_snapshot(path)?;
    if f.grid().n() != grid.n() {
        return Err(IoError::DimensionMismatch {
            expected: grid.n(),
            found: f.grid().n(),
        });
    }
    // rebuild on the caller's grid so that fields share one FFT plan
    let f = SpectralField::from_coefficients(grid, f.coefficients().to_vec()).map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok((f, t))
}

/// CSV text with header `t,field,l2,h1,h2`, time-major and sorted by field
/// name within each time.
pub fn diagnostics_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,field,l2,h1,h2\n");
    let mut order: Vec<usize> = (0..traj.members.len()).collect();
    order.sort_by(|&a, &b| traj.members[a].name.cmp(&traj.members[b].name));
    for (s, t) in traj.times.iter().enumerate() {
        for &i in &order {
            let nt = traj.norms[i][s];
            out.push_str(&format!(
                "{t:.16e},{},{:.16e},{:.16e},{:.16e}\n",
                traj.members[i].name, nt.l2, nt.h1, nt.h2
            ));
        }
    }
    out
}

pub fn emit_diagnostics_csv(traj: &Trajectory, path: &Path) -> Result<(), IoError> {
    fs::write(path, diagnostics_csv(traj)).map_err(io_err(path))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(io_err(path))
}

/// Writes the trajectory diagnostics (without the stored states) as JSON.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), IoError> {
    write_json(traj, path)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<(), IoError> {
    write_json(report, path)
}

pub fn read_report(path: &Path) -> Result<ExperimentReport, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes every stored state as `<stem>_<member>_<index>.snap` under `dir`
/// and returns the paths.
pub fn write_trajectory_snapshots(traj: &Trajectory, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, IoError> {
    let mut paths = Vec::new();
    for (k, snap) in traj.snapshots.iter().enumerate() {
        for (info, field) in traj.members.iter().zip(&snap.fields) {
            let p = dir.join(format!("{stem}_{}_{k:04}.snap", info.name));
            write_snapshot(field, snap.time, &p)?;
            paths.push(p);
        }
    }
    Ok(paths)
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InterpolantConfig {
    SpectralProjection { k: i64, c0: Option<f64> },
    BoxAverage { m: usize, c0: Option<f64> },
}

impl Default for InterpolantConfig {
    fn default() -> Self {
        InterpolantConfig::SpectralProjection { k: 8, c0: None }
    }
}

impl InterpolantConfig {
    pub fn spec(&self) -> InterpolantSpec {
        let (s, c0) = match *self {
            InterpolantConfig::SpectralProjection { k, c0 } => (InterpolantSpec::spectral_projection(k), c0),
            InterpolantConfig::BoxAverage { m, c0 } => (InterpolantSpec::box_average(m), c0),
        };
        match c0 {
            Some(c) => s.with_c0(c),
            None => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ForcingConfig {
    #[default]
    None,
    /// Random steady forcing on the shell `kmin <= |k| <= kmax`, scaled to
    /// the given Grashof number at `nu1`.
    RandomShell {
        grashof: f64,
        #[serde(default = "kmin_default")]
        kmin: f64,
        #[serde(default = "kmax_default")]
        kmax: f64,
    },
    Snapshot { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldConfig {
    Zero,
    TaylorGreen {
        #[serde(default = "unit")]
        amplitude: f64,
    },
    RandomShell {
        l2: f64,
        #[serde(default = "kmin_default")]
        kmin: f64,
        #[serde(default = "kmax_default")]
        kmax: f64,
    },
    Snapshot { path: PathBuf },
}

fn kmin_default() -> f64 {
    2.0
}
fn kmax_default() -> f64 {
    6.0
}
fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub nu1: f64,
    /// Defaults to `nu1`.
    #[serde(default)]
    pub nu2: Option<f64>,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub interpolant: InterpolantConfig,
    #[serde(default)]
    pub forcing: ForcingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    #[serde(default = "yes")]
    pub advection: bool,
}

fn yes() -> bool {
    true
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            kind: SystemKind::Nse,
            advection: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Explicit offsets; overrides `count`.
    #[serde(default)]
    pub deltas: Option<Vec<f64>>,
    /// Number of halving offsets `nu1 2^-n`.
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub norm: Option<TrajectoryNorm>,
    #[serde(default)]
    pub ratio_window: Option<(f64, f64)>,
    #[serde(default)]
    pub t_switch: Option<f64>,
    #[serde(default)]
    pub nu_new: Option<f64>,
    #[serde(default)]
    pub max_decay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default = "default_initial")]
    pub initial: FieldConfig,
    /// Initial data of assimilated members.
    #[serde(default = "default_assimilated")]
    pub assimilated_initial: FieldConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_initial() -> FieldConfig {
    FieldConfig::RandomShell {
        l2: 1.0,
        kmin: 2.0,
        kmax: 6.0,
    }
}
fn default_assimilated() -> FieldConfig {
    FieldConfig::Zero
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
        ConfigError::Parse {
            line,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

impl RunConfig {
    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.grid.n).map_err(|e| ConfigError::Invalid(format!("grid.n: {e}")))
    }

    pub fn nu2(&self) -> f64 {
        self.physics.nu2.unwrap_or(self.physics.nu1)
    }

    /// Re-validates every mirrored invariant, including the admissibility
    /// condition for nudged systems.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |s: String| Err(ConfigError::Invalid(s));
        let grid = self.grid()?;
        let p = PhysicsParams::new(self.physics.nu1, self.nu2(), self.physics.mu, self.physics.interpolant.spec());
        p.validate().map_err(|e| ConfigError::Invalid(format!("physics: {e}")))?;
        p.interp
            .validate(&grid)
            .map_err(|e| ConfigError::Invalid(format!("physics.interpolant: {e}")))?;
        self.solver
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("solver: {e}")))?;
        if let ForcingConfig::RandomShell { grashof, kmin, kmax } = self.physics.forcing {
            if !(grashof >= 0.0) || !(kmin >= 1.0 && kmax >= kmin) {
                return inv("physics.forcing: need grashof >= 0 and 1 <= kmin <= kmax".into());
            }
        }
        for (name, f) in [("initial", &self.initial), ("assimilated_initial", &self.assimilated_initial)] {
            if let FieldConfig::RandomShell { l2, kmin, kmax } = *f {
                if !(l2 >= 0.0) || !(kmin >= 1.0 && kmax >= kmin) {
                    return inv(format!("{name}: need l2 >= 0 and 1 <= kmin <= kmax"));
                }
            }
        }
        let e = &self.experiment;
        if let Some(d) = &e.deltas {
            DQSweepSpec {
                nu1: self.physics.nu1,
                deltas: d.clone(),
                norm: TrajectoryNorm::L2V,
                ratio_window: None,
            }
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("experiment.deltas: {e}")))?;
        }
        if e.count == Some(0) {
            return inv("experiment.count must be at least 1".into());
        }
        if let Some(nu) = e.nu_new {
            if !(nu > 0.0) {
                return inv(format!("experiment.nu_new = {nu} must be positive"));
            }
        }
        if let Some(ts) = e.t_switch {
            if !(ts > 0.0 && ts < self.solver.t_end) {
                return inv(format!("experiment.t_switch = {ts} must lie inside (0, t_end)"));
            }
        }
        let nudged = matches!(self.system.kind, SystemKind::Da | SystemKind::DaSens | SystemKind::DaDqDirect);
        if nudged && p.mu > 0.0 {
            if self.solver.dt * p.mu > 1.0 {
                return inv(format!("solver.dt * physics.mu = {} exceeds 1", self.solver.dt * p.mu));
            }
            let strict = self.system.kind != SystemKind::Da;
            let mut nus = vec![self.nu2()];
            if strict {
                nus.push(self.physics.nu1);
            }
            if let Some(nu) = e.nu_new {
                nus.push(nu);
            }
            for nu in nus {
                if !admissibility(&p.interp, nu, p.mu, strict) && self.solver.admissibility == AdmissibilityPolicy::Enforce {
                    return inv(format!(
                        "admissibility condition {}mu c0 h^2 <= nu violated: {:.4e} > {nu:.4e}",
                        if strict { "4 " } else { "" },
                        p.interp.nudging_number(p.mu) * if strict { 4.0 } else { 1.0 }
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn physics(&self, grid: &GridSpec) -> Result<PhysicsParams, ConfigError> {
        let mut p = PhysicsParams::new(self.physics.nu1, self.nu2(), self.physics.mu, self.physics.interpolant.spec());
        p.forcing = match &self.physics.forcing {
            ForcingConfig::None => Forcing::Zero,
            ForcingConfig::RandomShell { grashof, kmin, kmax } => {
                let amp = forcing_for_grashof(*grashof, self.physics.nu1);
                let f = random_shell(grid, &mut seeded(self.seed.wrapping_add(1)), *kmin, *kmax, amp);
                Forcing::steady(&f)
            }
            ForcingConfig::Snapshot { path } => Forcing::steady(&self.snapshot(grid, path)?),
        };
        Ok(p)
    }

    fn snapshot(&self, grid: &GridSpec, path: &Path) -> Result<SpectralField, ConfigError> {
        read_snapshot_on(grid, path)
            .map(|(f, _)| f)
            .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))
    }

    fn field(&self, grid: &GridSpec, f: &FieldConfig, salt: u64) -> Result<SpectralField, ConfigError> {
        Ok(match f {
            FieldConfig::Zero => SpectralField::zeros(grid),
            FieldConfig::TaylorGreen { amplitude } => taylor_green(grid).scaled(*amplitude),
            FieldConfig::RandomShell { l2, kmin, kmax } => {
                random_shell(grid, &mut seeded(self.seed.wrapping_add(salt)), *kmin, *kmax, *l2)
            }
            FieldConfig::Snapshot { path } => self.snapshot(grid, path)?,
        })
    }

    pub fn initial(&self, grid: &GridSpec) -> Result<SpectralField, ConfigError> {
        self.field(grid, &self.initial, 0)
    }

    pub fn assimilated_initial(&self, grid: &GridSpec) -> Result<SpectralField, ConfigError> {
        self.field(grid, &self.assimilated_initial, 2)
    }

    pub fn system(&self) -> SystemSpec {
        let s = SystemSpec::new(self.system.kind);
        if self.system.advection {
            s
        } else {
            s.without_advection()
        }
    }

    pub fn sweep(&self) -> DQSweepSpec {
        let e = &self.experiment;
        let mut s = match &e.deltas {
            Some(d) => DQSweepSpec {
                nu1: self.physics.nu1,
                deltas: d.clone(),
                norm: TrajectoryNorm::L2V,
                ratio_window: None,
            },
            None => DQSweepSpec::halving(self.physics.nu1, e.count.unwrap_or(5)),
        };
        if let Some(n) = e.norm {
            s.norm = n;
        }
        s.ratio_window = e.ratio_window;
        s
    }

    pub fn sync_criteria(&self) -> SyncCriteria {
        match self.experiment.max_decay {
            Some(max_decay) => SyncCriteria { max_decay },
            None => SyncCriteria::default(),
        }
    }

    /// Normalized TOML echo of the configuration with defaults filled in.
    pub fn echo(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

/// Short summary line for a trajectory's final state.
pub fn final_summary(traj: &Trajectory) -> String {
    let mut parts = Vec::new();
    for info in &traj.members {
        if let Some(f) = traj.final_state(&info.name) {
            let nt = norm(f);
            parts.push(format!("|{}| = {:.6e}", info.name, nt.l2));
        }
    }
    format!("t = {}: {}", traj.t_end, parts.join(", "))
}

/// Interpolant family name for summaries.
pub fn interpolant_label(spec: &InterpolantSpec) -> String {
    match spec.kind {
        InterpolantKind::SpectralProjection { k } => format!("spectral projection K = {k}"),
        InterpolantKind::BoxAverage { m } => format!("box average {m} x {m}"),
    }
}
