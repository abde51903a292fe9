//! Experiment configuration: a TOML file plus `--set section.key=value` overrides.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use gtbm_core::estimators::TimeChangeModel;
use gtbm_core::sde::{SimConfig, TimeDirection};
use serde::{Deserialize, Serialize};

use crate::Command;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub experiment: String,
    pub family: FamilySection,
    pub sim: SimSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub nrf: NrfSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Sphere,
    StaticSphere,
    Hyperbolic,
    Euclidean,
    FlatTorus,
    Cigar,
    StaticCustom,
    TorusNrf,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub kind: FamilyKind,
    #[serde(default = "two")]
    pub dim: usize,
    #[serde(default = "one")]
    pub kappa: f64,
    /// Initial metric scale for the sphere and hyperbolic space.
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub horizon: f64,
    pub n_steps: Option<usize>,
    pub dt: Option<f64>,
    #[serde(default = "one")]
    pub speed: f64,
    #[serde(default = "forward")]
    pub direction: TimeDirection,
    #[serde(default)]
    pub seed: u64,
}

fn forward() -> TimeDirection {
    TimeDirection::Forward
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

/// Initial data `f₀` for heat-solution estimators.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Constant {
        value: f64,
    },
    /// `amplitude · cos(k·x + phase)` in chart coordinates.
    Fourier {
        k: Vec<f64>,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `c + a·y + yᵀ Q y` in the embedding coordinates of the sphere.
    Harmonic {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        linear: Vec<f64>,
        #[serde(default)]
        quadratic: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub residual_sigmas: f64,
    pub ks_p: f64,
    pub tol_frame: f64,
    pub gap: f64,
    pub l1: f64,
    pub mass: f64,
    pub qv_rel: f64,
    pub volume: f64,
    pub average: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            residual_sigmas: 3.0,
            ks_p: 0.01,
            tol_frame: 5e-2,
            gap: 5e-2,
            l1: 0.05,
            mass: 1e-6,
            qv_rel: 0.05,
            volume: 1e-6,
            average: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub n_paths: u64,
    pub x0: Vec<f64>,
    pub chart: u8,
    pub v: Vec<f64>,
    pub f0: Option<TestFunction>,
    pub reference: Option<f64>,
    pub sup_norm: Option<f64>,
    pub horizons: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Step sizes of convergence tables; empty means the sim step only.
    pub dts: Vec<f64>,
    pub model: Option<TimeChangeModel>,
    pub grid_n: usize,
    pub pde_dt: f64,
    pub thresholds: Thresholds,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            n_paths: 1000,
            x0: Vec::new(),
            chart: 0,
            v: Vec::new(),
            f0: None,
            reference: None,
            sup_norm: None,
            horizons: Vec::new(),
            points: Vec::new(),
            dts: Vec::new(),
            model: None,
            grid_n: 32,
            pde_dt: 1e-3,
            thresholds: Thresholds::default(),
        }
    }
}

/// Normalized Ricci flow on the torus, used by `torus_nrf` and `nrf-solve`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct NrfSection {
    pub grid_n: usize,
    /// Flow time to solve to; defaults to the flow time reached at the sim horizon.
    pub t_end: Option<f64>,
    pub dt: f64,
    pub sample_dt: f64,
    /// Rows `[k1, k2, a, b]` giving `u₀ = Σ a cos(k·x) + b sin(k·x)`;
    /// empty selects the built-in sample factor.
    pub modes: Vec<[f64; 4]>,
    /// Load a solved flow instead of solving.
    pub snapshot: Option<PathBuf>,
}

impl Default for NrfSection {
    fn default() -> Self {
        Self { grid_n: 32, t_end: None, dt: 1e-3, sample_dt: 0.01, modes: Vec::new(), snapshot: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub per_path: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), per_path: true }
    }
}

/// Parse `text`, apply overrides and validate.
pub fn load(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| anyhow!("config: {e}"))?;
    // schema errors against the file itself carry line diagnostics
    toml::from_str::<ExperimentConfig>(text).map_err(|e| anyhow!("config: {e}"))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    ExperimentConfig::deserialize(toml::Value::Table(table)).map_err(|e| anyhow!("config after overrides: {e}"))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| anyhow!("override `{spec}` is not of the form key=value"))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override `{spec}` has an empty key segment");
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| anyhow!("override `{spec}`: `{part}` is not a section"))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl ExperimentConfig {
    pub fn sim(&self) -> Result<SimConfig> {
        let s = &self.sim;
        let mut cfg = match (s.n_steps, s.dt) {
            (Some(n), None) => SimConfig::new(s.horizon, n),
            (None, Some(dt)) => {
                if !(dt > 0.0 && dt <= s.horizon) {
                    bail!("sim.dt = {dt} must lie in (0, sim.horizon]");
                }
                SimConfig::with_dt(s.horizon, dt)
            }
            _ => bail!("set exactly one of sim.n_steps and sim.dt"),
        };
        cfg = cfg.speed(s.speed).seed(s.seed);
        cfg.direction = s.direction;
        Ok(cfg)
    }

    /// Checks that need no computation, run before any work starts.
    pub fn validate(&self, command: Command) -> Result<()> {
        let s = &self.sim;
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            bail!("sim.horizon must be positive and finite");
        }
        if !(s.speed > 0.0 && s.speed.is_finite()) {
            bail!("sim.speed must be positive and finite");
        }
        if s.n_steps == Some(0) {
            bail!("sim.n_steps must be positive");
        }
        self.sim()?;
        let f = &self.family;
        if !(f.dim == 2 || f.dim == 3) {
            bail!("family.dim must be 2 or 3");
        }
        if f.dim != 2 && matches!(f.kind, FamilyKind::Cigar | FamilyKind::StaticCustom | FamilyKind::TorusNrf) {
            bail!("family.kind = {:?} is two-dimensional", f.kind);
        }
        if !(f.scale > 0.0 && f.scale.is_finite()) || !f.kappa.is_finite() {
            bail!("family.scale must be positive and family.kappa finite");
        }
        let e = &self.estimator;
        let dim = f.dim;
        if !e.x0.is_empty() && e.x0.len() != dim {
            bail!("estimator.x0 has {} entries, family.dim is {dim}", e.x0.len());
        }
        if !e.v.is_empty() && e.v.len() != dim {
            bail!("estimator.v has {} entries, family.dim is {dim}", e.v.len());
        }
        if let Some(p) = e.points.iter().find(|p| p.len() != dim) {
            bail!("estimator.points entry {p:?} does not have {dim} entries");
        }
        if e.n_paths == 0 && !matches!(command, Command::NrfSolve | Command::OracleSelftest) {
            bail!("estimator.n_paths must be positive");
        }
        if e.dts.iter().any(|dt| !(*dt > 0.0 && *dt <= s.horizon)) {
            bail!("estimator.dts entries must lie in (0, sim.horizon]");
        }
        if let Some(TestFunction::Fourier { k, .. }) = &e.f0 {
            if k.len() != dim {
                bail!("estimator.f0.k has {} entries, family.dim is {dim}", k.len());
            }
        }
        if let Some(TestFunction::Harmonic { .. }) = &e.f0 {
            if !matches!(f.kind, FamilyKind::Sphere | FamilyKind::StaticSphere) {
                bail!("harmonic test functions need a sphere family");
            }
        }
        let nrf_only = |what: &str| -> Result<()> {
            if f.kind != FamilyKind::TorusNrf {
                bail!("{what} needs family.kind = \"torus_nrf\"");
            }
            Ok(())
        };
        match command {
            Command::Bismut | Command::GradientBound => {
                if e.f0.is_none() {
                    bail!("estimator.f0 is required");
                }
                if command == Command::GradientBound && (e.horizons.is_empty() || e.points.is_empty()) {
                    bail!("gradient-bound needs estimator.horizons and estimator.points");
                }
            }
            Command::TimeChange if e.model.is_none() => bail!("time-change needs estimator.model"),
            Command::ConjugateHeat if !matches!(f.kind, FamilyKind::FlatTorus | FamilyKind::TorusNrf) => {
                bail!("conjugate-heat needs family.kind = \"flat_torus\" or \"torus_nrf\"")
            }
            Command::ScalarEstimate => nrf_only("scalar-estimate")?,
            _ => {}
        }
        if f.kind == FamilyKind::TorusNrf || command == Command::NrfSolve {
            let n = &self.nrf;
            if n.grid_n < 8 {
                bail!("nrf.grid_n must be at least 8");
            }
            if !(n.dt > 0.0 && n.sample_dt >= n.dt) {
                bail!("nrf.dt must be positive and nrf.sample_dt at least nrf.dt");
            }
            if let Some(p) = &n.snapshot {
                if !p.exists() {
                    bail!("nrf.snapshot {} does not exist", p.display());
                }
            }
        }
        std::fs::create_dir_all(&self.output.dir)
            .with_context(|| format!("cannot create output directory {}", self.output.dir.display()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[family]\nkind = \"sphere\"\nkappa = 2.0\n\n[sim]\nhorizon = 0.2\ndt = 1e-3\n";

    #[test]
    fn overrides_replace_and_create_keys() {
        let cfg = load(BASE, &["sim.seed=9".into(), "estimator.thresholds.ks_p=0.05".into(), "output.dir=\"x\"".into()]).unwrap();
        assert_eq!(cfg.sim.seed, 9);
        assert_eq!(cfg.estimator.thresholds.ks_p, 0.05);
        assert_eq!(cfg.output.dir, PathBuf::from("x"));
        let bare = load(BASE, &["output.dir=plain".into()]).unwrap();
        assert_eq!(bare.output.dir, PathBuf::from("plain"));
    }

    #[test]
    fn schema_errors_name_the_line() {
        let err = load("[family]\nkind = \"sphere\"\nbogus = 1\n[sim]\nhorizon = 1.0\ndt = 0.1\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 3"), "{msg}");
        assert!(load(BASE, &["sim.horizon".into()]).is_err());
        assert!(load(BASE, &["sim.dt.x=1".into()]).is_err());
    }

    #[test]
    fn exactly_one_step_specification() {
        let cfg = load(BASE, &["sim.n_steps=10".into()]).unwrap();
        assert!(cfg.sim().is_err());
        let cfg = load(BASE, &[]).unwrap();
        let sim = cfg.sim().unwrap();
        assert_eq!(sim.n_steps, 200);
        assert_eq!(sim.direction, TimeDirection::Forward);
    }
}
