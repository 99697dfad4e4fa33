//! Batch front door: configuration parsing, subcommand dispatch, and report
//! emission.
//!
//! Runs are driven by a TOML configuration (all sections optional, every
//! field defaulted) plus repeatable `--set KEY=VALUE` overrides addressed by
//! dotted path, e.g. `--set grid.n=33 --set constants.p=2.5`. Each run writes
//! its tabular outputs as CSV into `--out` and a `run.json` manifest that
//! embeds the fully resolved configuration, the seed, and the result summary,
//! so any output can be traced back to the exact settings that produced it.
//!
//! Floating-point values in CSV files are printed with 17 significant digits;
//! together with the seeded RNG this makes reruns byte-identical.
//!
//! Exit codes: 0 when the subcommand's check passes, 1 when the check fails
//! or the computation aborts, 2 for configuration errors. Diagnostics go to
//! stderr; files are the only stdout-free outputs.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{random_unit_quat, retract, MaterialParams, Mat3, Vec3};
use crate::analysis::{self, AnalysisError};
use crate::energy::{self, EnergyError, Load, LoadSpec};
use crate::fields::{
    read_state, sample_phi, sample_quat, sample_state, write_state, DomainShape, Grid, GridSpec,
    GridState, PhiField, RotField, UnitQuatRepr,
};
use crate::optimize::{self, OptimizeError, OptimizerParams, StopReason};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// CLI failures, split by exit code: configuration problems exit 2, runtime
/// failures (and failed checks) exit 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Run(msg) => write!(f, "run failed: {msg}"),
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn run_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Run(e.to_string())
}

/// Analysis errors carry their own input-validation variant; map it to the
/// configuration exit code and everything else to a runtime failure.
fn analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::InvalidInput(_) => CliError::Config(e.to_string()),
        _ => CliError::Run(e.to_string()),
    }
}

fn optimize_err(e: OptimizeError) -> CliError {
    match e {
        OptimizeError::InvalidParams(_) => CliError::Config(e.to_string()),
        _ => CliError::Run(e.to_string()),
    }
}

fn energy_err(e: EnergyError) -> CliError {
    CliError::Run(e.to_string())
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Grid section. The puncture is given in grid cells so that refining `n`
/// keeps the same number of excluded shells, not the same physical radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Nodes per axis (odd, >= 5).
    pub n: usize,
    /// Half-width of the host cube `[-extent, extent]^3`.
    pub extent: f64,
    /// `"cube"` or `"ball"`.
    pub shape: String,
    /// Puncture radius in multiples of the grid spacing; 0 disables it.
    pub puncture_cells: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n: 17,
            extent: 1.0,
            shape: "ball".to_string(),
            puncture_cells: 3.0,
        }
    }
}

/// Material constants section; defaults to the weighting that makes the
/// stress weighting the identity at p = 2.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub mu_e: f64,
    pub mu_c: f64,
    pub mu_0: f64,
    pub p: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            mu_e: 1.0,
            mu_c: 1.0,
            mu_0: 1.0 / 9.0,
            p: 2.0,
        }
    }
}

/// Load selectors: `"zero"`, `"constant:<numbers>"` (3 for the force, 9
/// row-major for the moment), or `"file:PATH"` pointing at a JSON array of
/// per-node values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadsConfig {
    pub force: String,
    pub moment: String,
}

impl Default for LoadsConfig {
    fn default() -> Self {
        LoadsConfig {
            force: "zero".to_string(),
            moment: "zero".to_string(),
        }
    }
}

/// Which state the state-consuming subcommands (check-gradient,
/// monotonicity) operate on: `"stress_free"`, `"singular"`, `"random"`
/// (seeded interior randomization with the given amplitude), or
/// `"file:PATH"` for a state written by `minimize`. A file state carries its
/// own grid and ignores the `[grid]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateConfig {
    pub source: String,
    /// Displacement amplitude for `"random"`.
    pub amplitude: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig {
            source: "stress_free".to_string(),
            amplitude: 0.1,
        }
    }
}

/// Minimize section: boundary data (`"stress_free"` or `"singular"`),
/// initialization (`"propagate"` fills the interior with `phi = x` and the
/// nearest boundary rotation; `"sample"` evaluates the boundary pair
/// everywhere), and an optional seeded interior perturbation amplitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeConfig {
    pub boundary: String,
    pub init: String,
    pub perturb: f64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        MinimizeConfig {
            boundary: "stress_free".to_string(),
            init: "propagate".to_string(),
            perturb: 0.0,
        }
    }
}

/// verify-singular section. The fine grid is the coarse one refined once
/// (`n -> 2(n-1)+1`); both share the physical puncture radius `3 h_coarse`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n_coarse: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { n_coarse: 17 }
    }
}

/// check-gradient section: number of seeded random trials (used when
/// `state.source = "random"`) and the centered-difference step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientConfig {
    pub trials: usize,
    pub fd_step: f64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig {
            trials: 3,
            fd_step: 1e-5,
        }
    }
}

/// scan-kato section: exponent range and step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub p_min: f64,
    pub p_max: f64,
    pub step: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            p_min: 2.0,
            p_max: 2.5,
            step: 1e-3,
        }
    }
}

/// monotonicity section: profile center and the radii to evaluate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonotonicityConfig {
    pub center: [f64; 3],
    pub radii: Vec<f64>,
}

impl Default for MonotonicityConfig {
    fn default() -> Self {
        MonotonicityConfig {
            center: [0.0; 3],
            radii: (0..11).map(|i| 0.45 + 0.05 * i as f64).collect(),
        }
    }
}

/// equator-energy section. Has its own resolution default because the 1%
/// agreement gate needs a finer grid than the other subcommands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquatorConfig {
    pub n: usize,
    pub puncture_cells: usize,
}

impl Default for EquatorConfig {
    fn default() -> Self {
        EquatorConfig {
            n: 65,
            puncture_cells: 3,
        }
    }
}

/// The fully resolved run configuration: what `run.json` embeds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub constants: ConstantsConfig,
    pub loads: LoadsConfig,
    pub optimizer: OptimizerParams,
    pub state: StateConfig,
    pub minimize: MinimizeConfig,
    pub verify: VerifyConfig,
    pub gradient: GradientConfig,
    pub scan: ScanConfig,
    pub monotonicity: MonotonicityConfig,
    pub equator: EquatorConfig,
}

/// Parse one `--set` value: try it as a TOML scalar/array first, fall back
/// to a bare string (so `--set state.source=singular` needs no quoting).
fn parse_scalar(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Merge one dotted-path override into the configuration document, creating
/// intermediate tables as needed.
fn apply_set(doc: &mut toml::Table, key: &str, raw: &str) -> Result<(), CliError> {
    if key.is_empty() || key.split('.').any(|part| part.is_empty()) {
        return Err(CliError::Config(format!(
            "--set key {key:?} is not a dotted path"
        )));
    }
    let parts: Vec<&str> = key.split('.').collect();
    let mut cursor = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!(
                "--set path {key:?} descends into {part:?}, which is not a table"
            ))
        })?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw));
    Ok(())
}

/// Load the TOML file (if any), apply `--set` overrides, and deserialize.
/// Unknown keys anywhere are configuration errors.
fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut doc: toml::Table = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            text.parse::<toml::Table>().map_err(|e| {
                CliError::Config(format!("cannot parse {}: {e}", path.display()))
            })?
        }
        None => toml::Table::new(),
    };
    for item in &common.set {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set {item:?} is not of the form KEY=VALUE"))
        })?;
        apply_set(&mut doc, key.trim(), value)?;
    }
    toml::Value::Table(doc)
        .try_into()
        .map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
}

// ---------------------------------------------------------------------------
// Builders: configuration -> domain objects
// ---------------------------------------------------------------------------

fn build_grid(cfg: &GridConfig) -> Result<Grid, CliError> {
    let shape = match cfg.shape.as_str() {
        "cube" => DomainShape::Cube,
        "ball" => DomainShape::Ball,
        other => {
            return Err(CliError::Config(format!(
                "grid.shape = {other:?}: expected \"cube\" or \"ball\""
            )))
        }
    };
    if !(cfg.puncture_cells.is_finite() && cfg.puncture_cells >= 0.0) {
        return Err(CliError::Config(format!(
            "grid.puncture_cells = {} must be finite and >= 0",
            cfg.puncture_cells
        )));
    }
    let mut spec = GridSpec {
        n: cfg.n,
        extent: cfg.extent,
        shape,
        puncture_radius: 0.0,
    };
    spec.validate().map_err(config_err)?;
    spec.puncture_radius = cfg.puncture_cells * spec.spacing();
    Grid::build(spec).map_err(config_err)
}

fn build_constants(cfg: &ConstantsConfig) -> Result<MaterialParams, CliError> {
    MaterialParams::new(cfg.mu_e, cfg.mu_c, cfg.mu_0, cfg.p).map_err(config_err)
}

fn parse_numbers(raw: &str, expected: usize, what: &str) -> Result<Vec<f64>, CliError> {
    let values: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match values {
        Ok(v) if v.len() == expected => Ok(v),
        Ok(v) => Err(CliError::Config(format!(
            "{what}: expected {expected} comma-separated numbers, got {}",
            v.len()
        ))),
        Err(e) => Err(CliError::Config(format!("{what}: {e}"))),
    }
}

fn parse_force(raw: &str) -> Result<Load<Vec3>, CliError> {
    if raw == "zero" {
        return Ok(Load::Zero);
    }
    if let Some(rest) = raw.strip_prefix("constant:") {
        let v = parse_numbers(rest, 3, "loads.force")?;
        return Ok(Load::Constant([v[0], v[1], v[2]]));
    }
    if let Some(path) = raw.strip_prefix("file:") {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("loads.force: cannot read {path}: {e}")))?;
        let nodal: Vec<Vec3> = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("loads.force: cannot parse {path}: {e}")))?;
        return Ok(Load::Nodal(nodal));
    }
    Err(CliError::Config(format!(
        "loads.force = {raw:?}: expected \"zero\", \"constant:fx,fy,fz\", or \"file:PATH\""
    )))
}

fn parse_moment(raw: &str) -> Result<Load<Mat3>, CliError> {
    if raw == "zero" {
        return Ok(Load::Zero);
    }
    if let Some(rest) = raw.strip_prefix("constant:") {
        let v = parse_numbers(rest, 9, "loads.moment")?;
        return Ok(Load::Constant(Mat3([
            [v[0], v[1], v[2]],
            [v[3], v[4], v[5]],
            [v[6], v[7], v[8]],
        ])));
    }
    if let Some(path) = raw.strip_prefix("file:") {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("loads.moment: cannot read {path}: {e}")))?;
        let nodal: Vec<[[f64; 3]; 3]> = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("loads.moment: cannot parse {path}: {e}")))?;
        return Ok(Load::Nodal(nodal.into_iter().map(Mat3).collect()));
    }
    Err(CliError::Config(format!(
        "loads.moment = {raw:?}: expected \"zero\", \"constant:<9 numbers>\", or \"file:PATH\""
    )))
}

fn build_loads(cfg: &LoadsConfig, node_count: usize) -> Result<LoadSpec, CliError> {
    let loads = LoadSpec {
        force: parse_force(&cfg.force)?,
        moment: parse_moment(&cfg.moment)?,
    };
    loads.validate(node_count).map_err(config_err)?;
    Ok(loads)
}

/// A stress-free state with seeded interior noise: displacement shifted by
/// `amplitude`-scaled uniforms, rotations drawn uniformly on the covering
/// sphere. Boundary nodes keep their Dirichlet data.
fn random_state<R: Rng>(grid: &Grid, rng: &mut R, amplitude: f64) -> GridState {
    let mut st = GridState::stress_free(grid.clone());
    for idx in grid.active_nodes() {
        if st.dirichlet[idx] {
            continue;
        }
        for a in 0..3 {
            st.phi[idx][a] += amplitude * rng.random_range(-1.0..1.0);
        }
        st.quat[idx] = random_unit_quat(rng);
    }
    st
}

/// Build the state named by `[state]` for check-gradient / monotonicity.
fn build_state(cfg: &RunConfig, seed: u64) -> Result<GridState, CliError> {
    match cfg.state.source.as_str() {
        "stress_free" => Ok(GridState::stress_free(build_grid(&cfg.grid)?)),
        "singular" => {
            let grid = build_grid(&cfg.grid)?;
            sample_state(&grid, &PhiField::Singular, &RotField::Singular).map_err(config_err)
        }
        "random" => {
            if !(cfg.state.amplitude.is_finite() && cfg.state.amplitude >= 0.0) {
                return Err(CliError::Config(format!(
                    "state.amplitude = {} must be finite and >= 0",
                    cfg.state.amplitude
                )));
            }
            let grid = build_grid(&cfg.grid)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(random_state(&grid, &mut rng, cfg.state.amplitude))
        }
        other => {
            if let Some(path) = other.strip_prefix("file:") {
                return read_state(Path::new(path)).map_err(config_err);
            }
            Err(CliError::Config(format!(
                "state.source = {other:?}: expected \"stress_free\", \"singular\", \"random\", or \"file:PATH\""
            )))
        }
    }
}

/// Initial state for `minimize` per the `[minimize]` section.
fn minimize_initial_state(
    grid: &Grid,
    cfg: &MinimizeConfig,
    seed: u64,
) -> Result<GridState, CliError> {
    let (phi_field, rot_field) = match cfg.boundary.as_str() {
        "stress_free" => (
            PhiField::Identity,
            RotField::Constant(UnitQuatRepr([1.0, 0.0, 0.0, 0.0])),
        ),
        "singular" => (PhiField::Singular, RotField::Singular),
        other => {
            return Err(CliError::Config(format!(
                "minimize.boundary = {other:?}: expected \"stress_free\" or \"singular\""
            )))
        }
    };
    let mut st = match cfg.init.as_str() {
        "sample" => sample_state(grid, &phi_field, &rot_field).map_err(config_err)?,
        "propagate" => {
            let boundary_phi = sample_phi(grid, &phi_field).map_err(config_err)?;
            let boundary_quat = sample_quat(grid, &rot_field).map_err(config_err)?;
            let boundary: Vec<usize> = grid
                .active_nodes()
                .filter(|&idx| grid.is_boundary(idx))
                .collect();
            if boundary.is_empty() {
                return Err(CliError::Config(
                    "grid has no boundary nodes to propagate from".to_string(),
                ));
            }
            let mut st = GridState::stress_free(grid.clone());
            for idx in grid.active_nodes() {
                if grid.is_boundary(idx) {
                    st.phi[idx] = boundary_phi[idx];
                    st.quat[idx] = boundary_quat[idx];
                } else {
                    let x = grid.coord(idx);
                    let mut best = boundary[0];
                    let mut best_d = f64::INFINITY;
                    for &b in &boundary {
                        let y = grid.coord(b);
                        let d = (y[0] - x[0]).powi(2)
                            + (y[1] - x[1]).powi(2)
                            + (y[2] - x[2]).powi(2);
                        if d < best_d {
                            best_d = d;
                            best = b;
                        }
                    }
                    st.quat[idx] = boundary_quat[best];
                }
            }
            st
        }
        other => {
            return Err(CliError::Config(format!(
                "minimize.init = {other:?}: expected \"propagate\" or \"sample\""
            )))
        }
    };
    if !(cfg.perturb.is_finite() && cfg.perturb >= 0.0) {
        return Err(CliError::Config(format!(
            "minimize.perturb = {} must be finite and >= 0",
            cfg.perturb
        )));
    }
    if cfg.perturb > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for idx in grid.active_nodes() {
            if st.dirichlet[idx] {
                continue;
            }
            for a in 0..3 {
                st.phi[idx][a] += cfg.perturb * rng.random_range(-1.0..1.0);
            }
            let v = [
                cfg.perturb * rng.random_range(-1.0..1.0),
                cfg.perturb * rng.random_range(-1.0..1.0),
                cfg.perturb * rng.random_range(-1.0..1.0),
                cfg.perturb * rng.random_range(-1.0..1.0),
            ];
            st.quat[idx] = retract(&st.quat[idx], &v).map_err(config_err)?;
        }
    }
    st.validate().map_err(config_err)?;
    Ok(st)
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

/// 17 significant digits, enough to reproduce any f64 bit pattern.
fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    passed: bool,
    config: &'a RunConfig,
    results: serde_json::Value,
}

fn write_manifest(
    out: &Path,
    command: &str,
    seed: u64,
    passed: bool,
    config: &RunConfig,
    results: serde_json::Value,
) -> Result<(), CliError> {
    let manifest = RunManifest {
        command,
        seed,
        passed,
        config,
        results,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(run_err)?;
    let path = out.join("run.json");
    fs::write(&path, text + "\n")
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(value).map_err(run_err)
}

// ---------------------------------------------------------------------------
// Subcommand runners
// ---------------------------------------------------------------------------

type Outcome = (bool, serde_json::Value);

fn run_verify_singular(cfg: &RunConfig, out: &Path, seed: u64) -> Result<Outcome, CliError> {
    let report = analysis::verify_singular(cfg.verify.n_coarse, cfg.constants.p, seed)
        .map_err(analysis_err)?;
    let level_row = |level: &str, n: usize, norms: &analysis::AnnulusNorms| {
        vec![
            level.to_string(),
            n.to_string(),
            fmt_f(report.r0),
            fmt_f(norms.phi_max),
            fmt_f(norms.phi_l2),
            fmt_f(norms.rot_max),
            fmt_f(norms.rot_l2),
            norms.nodes.to_string(),
        ]
    };
    write_csv(
        &out.join("residuals.csv"),
        &[
            "level", "n", "r0", "phi_max", "phi_l2", "rot_max", "rot_l2", "nodes",
        ],
        &[
            level_row("coarse", report.n_coarse, &report.coarse),
            level_row("fine", report.n_fine, &report.fine),
        ],
    )?;
    let passed = report.min_order() >= 1.0;
    Ok((passed, to_json(&report)?))
}

fn run_check_gradient(cfg: &RunConfig, out: &Path, seed: u64) -> Result<Outcome, CliError> {
    let constants = build_constants(&cfg.constants)?;
    if !(cfg.gradient.fd_step.is_finite() && cfg.gradient.fd_step > 0.0) {
        return Err(CliError::Config(format!(
            "gradient.fd_step = {} must be finite and > 0",
            cfg.gradient.fd_step
        )));
    }
    let states: Vec<GridState> = if cfg.state.source == "random" {
        if cfg.gradient.trials == 0 {
            return Err(CliError::Config(
                "gradient.trials must be >= 1".to_string(),
            ));
        }
        if !(cfg.state.amplitude.is_finite() && cfg.state.amplitude >= 0.0) {
            return Err(CliError::Config(format!(
                "state.amplitude = {} must be finite and >= 0",
                cfg.state.amplitude
            )));
        }
        let grid = build_grid(&cfg.grid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cfg.gradient.trials)
            .map(|_| random_state(&grid, &mut rng, cfg.state.amplitude))
            .collect()
    } else {
        vec![build_state(cfg, seed)?]
    };
    let mut rows = Vec::new();
    let mut rels = Vec::new();
    for (trial, state) in states.iter().enumerate() {
        let loads = build_loads(&cfg.loads, state.grid.node_count())?;
        let rel = energy::gradient_fd_mismatch(state, &constants, &loads, cfg.gradient.fd_step)
            .map_err(energy_err)?;
        rows.push(vec![trial.to_string(), fmt_f(rel)]);
        rels.push(rel);
    }
    write_csv(&out.join("gradient.csv"), &["trial", "rel_error"], &rows)?;
    let max_rel = rels.iter().cloned().fold(0.0, f64::max);
    let passed = rels.iter().all(|&r| r < 1e-6);
    Ok((
        passed,
        serde_json::json!({
            "fd_step": cfg.gradient.fd_step,
            "rel_errors": rels,
            "max_rel_error": max_rel,
            "tolerance": 1e-6,
        }),
    ))
}

fn run_minimize(cfg: &RunConfig, out: &Path, seed: u64) -> Result<Outcome, CliError> {
    let constants = build_constants(&cfg.constants)?;
    cfg.optimizer.validate().map_err(config_err)?;
    let grid = build_grid(&cfg.grid)?;
    let initial = minimize_initial_state(&grid, &cfg.minimize, seed)?;
    let loads = build_loads(&cfg.loads, grid.node_count())?;
    let result = optimize::minimize(&initial, &constants, &loads, &cfg.optimizer)
        .map_err(optimize_err)?;
    let rows: Vec<Vec<String>> = result
        .trace
        .iter()
        .map(|row| {
            vec![
                row.iter.to_string(),
                fmt_f(row.energy),
                fmt_f(row.grad_norm),
                fmt_f(row.step),
            ]
        })
        .collect();
    write_csv(
        &out.join("trace.csv"),
        &["iter", "energy", "grad_norm", "step"],
        &rows,
    )?;
    write_state(&result.state, &out.join("state.json")).map_err(run_err)?;
    let passed = matches!(result.reason, StopReason::Converged);
    Ok((
        passed,
        serde_json::json!({
            "reason": result.reason,
            "iterations": result.trace.len().saturating_sub(1),
            "initial_energy": result.trace.first().map(|r| r.energy),
            "final_energy": result.final_energy,
        }),
    ))
}

fn run_scan_kato(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let report = analysis::scan_nonexistence(cfg.scan.p_min, cfg.scan.p_max, cfg.scan.step)
        .map_err(analysis_err)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|row| {
            vec![
                fmt_f(row.p),
                fmt_f(row.eps_star),
                fmt_f(row.kappa),
                fmt_f(row.coeff_a),
                fmt_f(row.coeff_b),
                row.admissible.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("scan.csv"),
        &["p", "eps_star", "kappa", "coeff_a", "coeff_b", "admissible"],
        &rows,
    )?;
    let passed = report.threshold >= 32.0 / 15.0 - 1e-9;
    Ok((
        passed,
        serde_json::json!({
            "threshold": report.threshold,
            "rows": report.rows.len(),
            "admissible_rows": report.rows.iter().filter(|r| r.admissible).count(),
        }),
    ))
}

fn run_monotonicity(cfg: &RunConfig, out: &Path, seed: u64) -> Result<Outcome, CliError> {
    let constants = build_constants(&cfg.constants)?;
    let state = build_state(cfg, seed)?;
    let report = analysis::monotonicity_profile(
        &state,
        &constants,
        &cfg.monotonicity.center,
        &cfg.monotonicity.radii,
    )
    .map_err(analysis_err)?;
    let rows: Vec<Vec<String>> = report
        .radii
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let deficit = if i == 0 {
                String::new()
            } else {
                fmt_f(report.deficits[i - 1])
            };
            vec![fmt_f(r), fmt_f(report.phi_profile[i]), deficit]
        })
        .collect();
    write_csv(
        &out.join("monotonicity.csv"),
        &["radius", "profile", "deficit_from_prev"],
        &rows,
    )?;
    let passed = report.q_min >= -1e-10;
    Ok((passed, to_json(&report)?))
}

fn run_equator_energy(cfg: &RunConfig, out: &Path) -> Result<Outcome, CliError> {
    let report = analysis::equator_energy(cfg.equator.n, cfg.constants.p, cfg.equator.puncture_cells)
        .map_err(analysis_err)?;
    write_csv(
        &out.join("equator.csv"),
        &["n", "p", "r0", "numeric", "closed_form", "rel_error"],
        &[vec![
            report.n.to_string(),
            fmt_f(report.p),
            fmt_f(report.r0),
            fmt_f(report.numeric),
            fmt_f(report.closed_form),
            fmt_f(report.rel_error),
        ]],
    )?;
    let passed = report.rel_error <= 0.01;
    Ok((passed, to_json(&report)?))
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration file; all sections optional.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --set grid.n=33 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for CSV reports, state files, and run.json.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
    /// RNG seed for randomized probes, states, and perturbations.
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Two-grid residual study of the closed-form singular pair; passes when
    /// every observed convergence order is >= 1.
    VerifySingular(CommonArgs),
    /// Analytic gradient vs centered finite differences; passes when every
    /// trial's relative l2 mismatch is < 1e-6.
    CheckGradient(CommonArgs),
    /// Projected gradient descent from the configured initial state; passes
    /// when the run converges. Writes trace.csv and state.json.
    Minimize(CommonArgs),
    /// Inequality-constant scan over the curvature exponent; passes when the
    /// admissible prefix reaches 32/15.
    ScanKato(CommonArgs),
    /// Scaled energy profile and annulus deficits around a center; passes
    /// when the pointwise density minimum is >= -1e-10.
    Monotonicity(CommonArgs),
    /// Quadrature vs closed form for the equator map's p-energy; passes when
    /// they agree within 1%.
    EquatorEnergy(CommonArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &CommonArgs) {
        match self {
            Command::VerifySingular(c) => ("verify-singular", c),
            Command::CheckGradient(c) => ("check-gradient", c),
            Command::Minimize(c) => ("minimize", c),
            Command::ScanKato(c) => ("scan-kato", c),
            Command::Monotonicity(c) => ("monotonicity", c),
            Command::EquatorEnergy(c) => ("equator-energy", c),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cosserat",
    version,
    about = "Numerical laboratory for a geometrically nonlinear micropolar energy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn execute(name: &str, cfg: &RunConfig, out: &Path, seed: u64) -> Result<Outcome, CliError> {
    match name {
        "verify-singular" => run_verify_singular(cfg, out, seed),
        "check-gradient" => run_check_gradient(cfg, out, seed),
        "minimize" => run_minimize(cfg, out, seed),
        "scan-kato" => run_scan_kato(cfg, out),
        "monotonicity" => run_monotonicity(cfg, out, seed),
        "equator-energy" => run_equator_energy(cfg, out),
        other => Err(CliError::Run(format!("unknown subcommand {other:?}"))),
    }
}

fn report_error(name: &str, err: &CliError) -> i32 {
    eprintln!("cosserat {name}: {err}");
    match err {
        CliError::Config(_) => 2,
        CliError::Run(_) => 1,
    }
}

/// Entry point: parse arguments, run the subcommand, emit reports, and map
/// the outcome to an exit code (0 pass, 1 fail, 2 configuration error).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and exit 0; genuine argument
            // errors are configuration errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, common) = cli.command.parts();
    let cfg = match load_config(common) {
        Ok(cfg) => cfg,
        Err(e) => return report_error(name, &e),
    };
    if let Err(e) = fs::create_dir_all(&common.out) {
        return report_error(
            name,
            &CliError::Config(format!(
                "cannot create {}: {e}",
                common.out.display()
            )),
        );
    }
    match execute(name, &cfg, &common.out, common.seed) {
        Ok((passed, results)) => {
            if let Err(e) = write_manifest(&common.out, name, common.seed, passed, &cfg, results)
            {
                return report_error(name, &e);
            }
            if passed {
                0
            } else {
                eprintln!(
                    "cosserat {name}: check failed (details in {})",
                    common.out.join("run.json").display()
                );
                1
            }
        }
        Err(e) => report_error(name, &e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common(set: &[&str], out: &Path) -> CommonArgs {
        CommonArgs {
            config: None,
            set: set.iter().map(|s| s.to_string()).collect(),
            out: out.to_path_buf(),
            seed: 0,
        }
    }

    #[test]
    fn parse_scalar_handles_toml_types_and_bare_strings() {
        assert_eq!(parse_scalar("33"), toml::Value::Integer(33));
        assert_eq!(parse_scalar("2.5"), toml::Value::Float(2.5));
        assert_eq!(parse_scalar("true"), toml::Value::Boolean(true));
        assert_eq!(
            parse_scalar("singular"),
            toml::Value::String("singular".to_string())
        );
        assert_eq!(
            parse_scalar("[0.5, 0.6]"),
            toml::Value::Array(vec![toml::Value::Float(0.5), toml::Value::Float(0.6)])
        );
    }

    #[test]
    fn apply_set_merges_dotted_paths() {
        let mut doc = toml::Table::new();
        apply_set(&mut doc, "grid.n", "33").unwrap();
        apply_set(&mut doc, "grid.shape", "cube").unwrap();
        apply_set(&mut doc, "scan.step", "0.01").unwrap();
        let grid = doc["grid"].as_table().unwrap();
        assert_eq!(grid["n"], toml::Value::Integer(33));
        assert_eq!(grid["shape"], toml::Value::String("cube".to_string()));
        // Descending through a scalar is a configuration error.
        assert!(apply_set(&mut doc, "grid.n.deeper", "1").is_err());
        assert!(apply_set(&mut doc, "grid..n", "1").is_err());
    }

    #[test]
    fn load_config_applies_overrides_on_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let args = common(&["grid.n=9", "constants.p=2.5"], dir.path());
        let cfg = load_config(&args).unwrap();
        assert_eq!(cfg.grid.n, 9);
        assert_eq!(cfg.constants.p, 2.5);
        // Untouched sections keep their defaults.
        assert_eq!(cfg.scan.p_min, 2.0);
        assert_eq!(cfg.equator.n, 65);
    }

    #[test]
    fn load_config_rejects_unknown_keys_and_bad_sets() {
        let dir = tempfile::tempdir().unwrap();
        let args = common(&["grid.typo=1"], dir.path());
        assert!(matches!(load_config(&args), Err(CliError::Config(_))));
        let args = common(&["no-equals-sign"], dir.path());
        assert!(matches!(load_config(&args), Err(CliError::Config(_))));
    }

    #[test]
    fn load_config_reads_a_file_then_overrides_it() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[grid]\nn = 21\nshape = \"cube\"\n").unwrap();
        let mut args = common(&["grid.n=9"], dir.path());
        args.config = Some(path);
        let cfg = load_config(&args).unwrap();
        assert_eq!(cfg.grid.n, 9, "--set wins over the file");
        assert_eq!(cfg.grid.shape, "cube");
    }

    #[test]
    fn build_grid_translates_cells_to_radius() {
        let cfg = GridConfig {
            n: 17,
            extent: 1.0,
            shape: "ball".to_string(),
            puncture_cells: 3.0,
        };
        let grid = build_grid(&cfg).unwrap();
        assert!((grid.spec().puncture_radius - 3.0 * grid.h()).abs() < 1e-15);
        let bad = GridConfig {
            shape: "torus".to_string(),
            ..cfg
        };
        assert!(matches!(build_grid(&bad), Err(CliError::Config(_))));
    }

    #[test]
    fn load_parsers_accept_the_three_selector_forms() {
        assert!(matches!(parse_force("zero").unwrap(), Load::Zero));
        match parse_force("constant:0,0,-1").unwrap() {
            Load::Constant(f) => assert_eq!(f, [0.0, 0.0, -1.0]),
            other => panic!("unexpected {other:?}"),
        }
        match parse_moment("constant:0,1,0,-1,0,0,0,0,0").unwrap() {
            Load::Constant(m) => {
                assert_eq!(m.0[0][1], 1.0);
                assert_eq!(m.0[1][0], -1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("force.json");
        fs::write(&path, "[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]").unwrap();
        match parse_force(&format!("file:{}", path.display())).unwrap() {
            Load::Nodal(v) => assert_eq!(v.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_force("constant:1,2").is_err());
        assert!(parse_force("sinusoid").is_err());
        assert!(parse_moment("constant:1,2,3").is_err());
    }

    #[test]
    fn propagate_init_copies_the_nearest_boundary_rotation() {
        let cfg = MinimizeConfig {
            boundary: "singular".to_string(),
            init: "propagate".to_string(),
            perturb: 0.0,
        };
        let grid = build_grid(&GridConfig::default()).unwrap();
        let st = minimize_initial_state(&grid, &cfg, 0).unwrap();
        st.validate().unwrap();
        // Interior phi is the identity placement, not the singular one.
        for idx in grid.active_nodes() {
            if !grid.is_boundary(idx) {
                assert_eq!(st.phi[idx], grid.coord(idx));
            }
        }
        // A node just inside a boundary node inherits that node's rotation:
        // pick any boundary node and step one cell toward the center.
        let boundary_idx = grid
            .active_nodes()
            .find(|&i| grid.is_boundary(i))
            .unwrap();
        let q = st.quat[boundary_idx].components();
        assert!(q.iter().map(|v| v * v).sum::<f64>() > 0.99);
    }

    #[test]
    fn scan_kato_run_passes_and_writes_all_reports() {
        let dir = tempfile::tempdir().unwrap();
        let out_dir = dir.path().join("scan");
        let code = run(["cosserat", "scan-kato", "--out", out_str(&out_dir)]);
        assert_eq!(code, 0);
        let scan = fs::read_to_string(out_dir.join("scan.csv")).unwrap();
        assert!(scan.starts_with("p,eps_star,kappa,coeff_a,coeff_b,admissible\n"));
        assert_eq!(scan.lines().count(), 502, "header + 501 rows");
        let manifest = fs::read_to_string(out_dir.join("run.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&manifest).unwrap();
        assert_eq!(parsed["command"], "scan-kato");
        assert_eq!(parsed["passed"], true);
        assert!(parsed["config"]["scan"]["p_min"].as_f64().unwrap() == 2.0);
        assert!(parsed["results"]["threshold"].as_f64().unwrap() >= 32.0 / 15.0);
    }

    #[test]
    fn minimize_rejects_sub_quadratic_exponents_with_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        let code = run([
            "cosserat",
            "minimize",
            "--set",
            "constants.p=1.5",
            "--out",
            out_str(dir.path()),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn unknown_flags_and_missing_subcommands_exit_2() {
        assert_eq!(run(["cosserat", "scan-kato", "--bogus"]), 2);
        assert_eq!(run(["cosserat"]), 2);
        assert_eq!(run(["cosserat", "not-a-command"]), 2);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(run(["cosserat", "--help"]), 0);
        assert_eq!(run(["cosserat", "minimize", "--help"]), 0);
    }

    fn out_str(path: &Path) -> &str {
        path.to_str().unwrap()
    }
}
