//! TOML scenario files: model, box, run parameters and per-command thresholds.
//!
//! A scenario is parsed with serde, then validated as a whole so that every
//! problem is reported at once, each tagged with the path of the offending
//! field (`model.modes[1]`, `geometry.box_lengths[0]`, ...).

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{EnsembleConfig, InitialDistribution};
use crate::fields::NODE_EPS;
use crate::geometry::{Axis, Geometry};
use crate::residuals::{SuiteOptions, DEFAULT_PROBE_SEED};
use crate::wavemodel::{Metric, ModelError, ModelKind, WaveModel, MAX_DIM, SHARED_ENERGY_TOL};
use crate::Complex64;

/// How far `k·L/2π` may sit from an integer and still count as commensurate.
pub const COMMENSURABILITY_TOL: f64 = 1e-9;

/// One validation failure, tied to a field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<FieldIssue>),
}

impl ScenarioError {
    pub fn issues(&self) -> &[FieldIssue] {
        match self {
            ScenarioError::Validation(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    /// Spatial wavevector.
    pub k: Vec<f64>,
    /// Complex amplitude as `[re, im]`.
    pub amplitude: [f64; 2],
    /// Explicit `k⁰` (Klein-Gordon) or `ω` (Schrödinger); checked against the dispersion relation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Metric signature with the time entry first; Klein-Gordon only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<Vec<i8>>,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default)]
    pub v0: f64,
    /// Common `k⁰` for an equal-energy Klein-Gordon set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_energy: Option<f64>,
    pub modes: Vec<ModeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    /// Periodic box length per spatial axis.
    pub box_lengths: Vec<f64>,
    /// Local-time circle of Klein-Gordon runs; defaults to `2π/k⁰` for equal-energy sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_period: Option<f64>,
    /// Start of the local-time circle; defaults to half a histogram bin below zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_origin: Option<f64>,
    /// Lab time at which Schrödinger runs start.
    #[serde(default)]
    pub lab_time_start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub seed: u64,
    pub dtau: f64,
    pub steps: usize,
    pub particles: usize,
    pub bins: usize,
    pub snapshot_every: usize,
    pub node_eps: f64,
    /// Overrides the physical diffusion `ħ/m`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<f64>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            dtau: 0.0025,
            steps: 2000,
            particles: 100_000,
            bins: 64,
            snapshot_every: 200,
            node_eps: NODE_EPS,
            diffusion: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub probes: usize,
    pub probe_seed: u64,
    /// Probe points with smaller `|ψ|` are redrawn.
    pub min_abs_psi: f64,
    pub tolerance: f64,
    pub bookkeeping_tolerance: f64,
    /// Assert the rank-2 conservation condition; otherwise it is only measured.
    pub conservation_holds: bool,
    pub conservation_tolerance: f64,
    /// Point at which the conservation (non-locality) term is reported; defaults to `(0.2, 0.3, ...)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canonical_probe: Option<Vec<f64>>,
    /// Measured expectation: the term at the canonical probe is at least this large.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonlocality_min: Option<f64>,
    /// Measured expectation: the term at the canonical probe is at most this large.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonlocality_max: Option<f64>,
    /// Run the rest-frame clock check (equal-energy Klein-Gordon sets without spatial phase flow).
    pub rest_clock: bool,
    pub clock_tolerance: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let suite = SuiteOptions::default();
        Self {
            probes: 100,
            probe_seed: DEFAULT_PROBE_SEED,
            min_abs_psi: 1e-3,
            tolerance: suite.tolerance,
            bookkeeping_tolerance: suite.bookkeeping_tolerance,
            conservation_holds: false,
            conservation_tolerance: suite.conservation_tolerance,
            canonical_probe: None,
            nonlocality_min: None,
            nonlocality_max: None,
            rest_clock: false,
            clock_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    pub initial: InitialDistribution,
    /// Largest acceptable L1 distance between histogram and target at any snapshot.
    pub l1_threshold: f64,
    pub track_momentum: bool,
    /// Largest acceptable relative L1 error of the momentum map, when tracked.
    pub momentum_threshold: f64,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            initial: InitialDistribution::Equilibrium,
            l1_threshold: 0.03,
            track_momentum: false,
            momentum_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxSpec {
    /// Defaults to `delta_in_time` for Klein-Gordon models and `uniform` otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialDistribution>,
    /// Largest tolerated increase of `H̄` between consecutive snapshots.
    pub h_budget: f64,
    pub final_l1_threshold: f64,
}

impl Default for RelaxSpec {
    fn default() -> Self {
        Self {
            initial: None,
            h_budget: 1e-3,
            final_l1_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpcheckSpec {
    pub cells_per_bin: usize,
    pub central_weight: f64,
    pub stationarity_steps: usize,
    pub stationarity_threshold: f64,
    /// Also run the ensemble and compare it with the grid.
    pub compare: bool,
    pub initial: InitialDistribution,
    pub comparison_threshold: f64,
}

impl Default for FpcheckSpec {
    fn default() -> Self {
        Self {
            cells_per_bin: 2,
            central_weight: 1.0,
            stationarity_steps: 1000,
            stationarity_threshold: 1e-3,
            compare: false,
            initial: InitialDistribution::Equilibrium,
            comparison_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub model: ModelSpec,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub relax: RelaxSpec,
    #[serde(default)]
    pub fpcheck: FpcheckSpec,
}

fn one() -> f64 {
    1.0
}

/// Read, parse and validate a scenario file.
pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

struct Issues(Vec<FieldIssue>);

impl Issues {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldIssue {
            field: field.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.push(field, format!("must be positive and finite, got {v}"));
        }
    }

    fn at_least(&mut self, field: &str, v: usize, min: usize) {
        if v < min {
            self.push(field, format!("must be at least {min}, got {v}"));
        }
    }
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn spatial_dims(&self) -> usize {
        self.geometry.box_lengths.len()
    }

    /// Number of model coordinates, time included.
    pub fn dim(&self) -> usize {
        self.spatial_dims() + 1
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut issues = Issues(Vec::new());
        self.validate_model(&mut issues);
        self.validate_geometry(&mut issues);
        self.validate_run(&mut issues);
        if issues.0.is_empty() {
            // Anything the checks above missed surfaces here with a field path.
            if let Err(e) = self.build_model_unchecked() {
                issues.push("model", e.to_string());
            }
        }
        if issues.0.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Validation(issues.0))
        }
    }

    fn validate_model(&self, issues: &mut Issues) {
        let m = &self.model;
        issues.positive("model.mass", m.mass);
        issues.positive("model.hbar", m.hbar);
        issues.positive("model.c", m.c);
        if !m.v0.is_finite() {
            issues.push("model.v0", "must be finite");
        }
        let d = self.spatial_dims();
        if d == 0 || d + 1 > MAX_DIM {
            issues.push(
                "geometry.box_lengths",
                format!("need 1 to {} spatial axes, got {d}", MAX_DIM - 1),
            );
            return;
        }
        match m.kind {
            ModelKind::KleinGordon => match &m.signature {
                None => issues.push("model.signature", "required for klein_gordon models"),
                Some(sig) => {
                    if sig.len() != d + 1 {
                        issues.push(
                            "model.signature",
                            format!("needs {} entries for {d} spatial axes, got {}", d + 1, sig.len()),
                        );
                    } else if let Err(e) = Metric::with_signature(sig) {
                        issues.push("model.signature", e.to_string());
                    }
                }
            },
            ModelKind::Schrodinger => {
                if m.signature.is_some() {
                    issues.push("model.signature", "not used by schrodinger models");
                }
                if m.shared_energy.is_some() {
                    issues.push("model.shared_energy", "only klein_gordon models take a shared energy");
                }
            }
        }
        if m.modes.is_empty() {
            issues.push("model.modes", "at least one mode is required");
        }
        if let Some(e) = m.shared_energy {
            issues.positive("model.shared_energy", e);
        }
        let shell = self.metric().map(|g| g.mass_shell(m.v0)).unwrap_or(f64::NAN);
        for (i, mode) in m.modes.iter().enumerate() {
            let field = format!("model.modes[{i}]");
            if mode.k.len() != d {
                issues.push(format!("{field}.k"), format!("needs {d} components, got {}", mode.k.len()));
                continue;
            }
            if mode.k.iter().chain(&mode.amplitude).any(|x| !x.is_finite()) {
                issues.push(field.clone(), "wavevector and amplitude must be finite");
                continue;
            }
            let k2: f64 = mode.k.iter().map(|x| x * x).sum();
            let energy = mode.energy.or(m.shared_energy);
            if let (Some(a), Some(b)) = (mode.energy, m.shared_energy) {
                if (a - b).abs() > SHARED_ENERGY_TOL * b.abs().max(1.0) {
                    issues.push(format!("{field}.energy"), format!("{a} differs from model.shared_energy {b}"));
                }
            }
            let Some(e) = energy else { continue };
            let (residual, scale) = match m.kind {
                ModelKind::KleinGordon => ((e * e - k2 - shell).abs(), (e * e).max(shell).max(1.0)),
                ModelKind::Schrodinger => {
                    let w = m.hbar * k2 / (2.0 * m.mass) + m.v0 / m.hbar;
                    ((e - w).abs(), w.abs().max(1.0))
                }
            };
            if !(residual <= SHARED_ENERGY_TOL * scale) {
                issues.push(
                    field,
                    format!("off-shell: dispersion residual {residual:.3e} for energy {e} and |k|^2 = {k2}"),
                );
            }
        }
    }

    fn validate_geometry(&self, issues: &mut Issues) {
        let g = &self.geometry;
        for (j, &l) in g.box_lengths.iter().enumerate() {
            issues.positive(&format!("geometry.box_lengths[{j}]"), l);
        }
        if let Some(t) = g.time_period {
            issues.positive("geometry.time_period", t);
        }
        if let Some(t) = g.time_origin {
            if !t.is_finite() {
                issues.push("geometry.time_origin", "must be finite");
            }
        }
        if !g.lab_time_start.is_finite() {
            issues.push("geometry.lab_time_start", "must be finite");
        }
        let d = self.spatial_dims();
        for (i, mode) in self.model.modes.iter().enumerate() {
            if mode.k.len() != d {
                continue;
            }
            for (j, (&k, &l)) in mode.k.iter().zip(&g.box_lengths).enumerate() {
                let cycles = k * l / (2.0 * PI);
                if (cycles - cycles.round()).abs() > COMMENSURABILITY_TOL * cycles.abs().max(1.0) {
                    issues.push(
                        format!("geometry.box_lengths[{j}]"),
                        format!("non-commensurate with model.modes[{i}]: k*L/2pi = {cycles:.6}"),
                    );
                }
            }
        }
        if self.model.kind == ModelKind::KleinGordon {
            if let Some(t) = g.time_period {
                if let Ok(energies) = self.mode_energies() {
                    for (i, e) in energies.iter().enumerate() {
                        let cycles = e * t / (2.0 * PI);
                        if (cycles - cycles.round()).abs() > COMMENSURABILITY_TOL * cycles.abs().max(1.0) {
                            issues.push(
                                "geometry.time_period",
                                format!("non-commensurate with model.modes[{i}]: k0*T/2pi = {cycles:.6}"),
                            );
                        }
                    }
                }
            } else if !self.equal_energy_spec() {
                issues.push(
                    "geometry.time_period",
                    "required when klein_gordon modes do not share one energy",
                );
            }
        }
    }

    fn validate_run(&self, issues: &mut Issues) {
        let r = &self.run;
        issues.positive("run.dtau", r.dtau);
        issues.at_least("run.steps", r.steps, 1);
        issues.at_least("run.particles", r.particles, 1);
        issues.at_least("run.bins", r.bins, 4);
        issues.at_least("run.snapshot_every", r.snapshot_every, 1);
        issues.positive("run.node_eps", r.node_eps);
        if let Some(k) = r.diffusion {
            if !(k.is_finite() && k >= 0.0) {
                issues.push("run.diffusion", format!("must be non-negative, got {k}"));
            }
        }
        let v = &self.verify;
        issues.at_least("verify.probes", v.probes, 1);
        issues.positive("verify.min_abs_psi", v.min_abs_psi);
        issues.positive("verify.tolerance", v.tolerance);
        issues.positive("verify.bookkeeping_tolerance", v.bookkeeping_tolerance);
        issues.positive("verify.conservation_tolerance", v.conservation_tolerance);
        issues.positive("verify.clock_tolerance", v.clock_tolerance);
        if let Some(p) = &v.canonical_probe {
            if p.len() != self.dim() {
                issues.push(
                    "verify.canonical_probe",
                    format!("needs {} coordinates, got {}", self.dim(), p.len()),
                );
            }
        }
        if v.rest_clock && (self.model.kind != ModelKind::KleinGordon || self.model.shared_energy.is_none()) {
            issues.push("verify.rest_clock", "needs a klein_gordon model with model.shared_energy");
        }
        issues.positive("simulate.l1_threshold", self.simulate.l1_threshold);
        issues.positive("simulate.momentum_threshold", self.simulate.momentum_threshold);
        issues.positive("relax.h_budget", self.relax.h_budget);
        issues.positive("relax.final_l1_threshold", self.relax.final_l1_threshold);
        let f = &self.fpcheck;
        issues.at_least("fpcheck.cells_per_bin", f.cells_per_bin, 1);
        if !(0.0..=1.0).contains(&f.central_weight) {
            issues.push("fpcheck.central_weight", format!("must lie in [0, 1], got {}", f.central_weight));
        }
        issues.at_least("fpcheck.stationarity_steps", f.stationarity_steps, 1);
        issues.positive("fpcheck.stationarity_threshold", f.stationarity_threshold);
        issues.positive("fpcheck.comparison_threshold", f.comparison_threshold);
        if self.model.kind == ModelKind::Schrodinger {
            for (field, init) in [
                ("simulate.initial", self.simulate.initial),
                ("relax.initial", self.relax_initial()),
                ("fpcheck.initial", self.fpcheck.initial),
            ] {
                if init == InitialDistribution::DeltaInTime {
                    issues.push(field, "delta_in_time needs a klein_gordon model");
                }
            }
        }
    }

    fn equal_energy_spec(&self) -> bool {
        self.model.shared_energy.is_some()
    }

    fn metric(&self) -> Result<Metric, ModelError> {
        let m = &self.model;
        let base = match (&m.kind, &m.signature) {
            (ModelKind::KleinGordon, Some(sig)) => Metric::with_signature(sig)?,
            (ModelKind::KleinGordon, None) => return Err(ModelError::NotRelativistic),
            (ModelKind::Schrodinger, _) => Metric::non_relativistic(),
        };
        base.with_constants(m.c, m.mass, m.hbar)
    }

    /// `k⁰` or `ω` of every mode as the model will store it.
    fn mode_energies(&self) -> Result<Vec<f64>, ModelError> {
        Ok(self.build_model_unchecked()?.modes().iter().map(|m| m.wavevector[0]).collect())
    }

    fn build_model_unchecked(&self) -> Result<WaveModel, ModelError> {
        let m = &self.model;
        let metric = self.metric()?;
        let spatial: Vec<Vec<f64>> = m.modes.iter().map(|x| x.k.clone()).collect();
        let amps: Vec<Complex64> = m.modes.iter().map(|x| Complex64::new(x.amplitude[0], x.amplitude[1])).collect();
        match (m.kind, m.shared_energy) {
            (ModelKind::KleinGordon, Some(e)) => WaveModel::build_equal_energy_kg_set(metric, e, &spatial, &amps, m.v0),
            (ModelKind::KleinGordon, None) => WaveModel::build_kg_set(metric, &spatial, &amps, m.v0),
            (ModelKind::Schrodinger, _) => WaveModel::build_schrodinger_set_with(metric, &spatial, &amps, m.v0),
        }
    }

    pub fn build_model(&self) -> Result<WaveModel, ScenarioError> {
        self.build_model_unchecked().map_err(|e| {
            ScenarioError::Validation(vec![FieldIssue {
                field: "model".into(),
                message: e.to_string(),
            }])
        })
    }

    /// Local-time circle length of a Klein-Gordon scenario.
    pub fn time_period(&self) -> Option<f64> {
        if self.model.kind != ModelKind::KleinGordon {
            return None;
        }
        self.geometry
            .time_period
            .or_else(|| self.model.shared_energy.map(|e| 2.0 * PI / e))
    }

    /// Box for probes and ensembles: the local-time circle (or the lab-time
    /// window of the run) followed by the spatial torus.
    pub fn build_geometry(&self) -> Result<Geometry, ScenarioError> {
        let g = &self.geometry;
        let first = match self.time_period() {
            Some(t) => Axis::periodic(g.time_origin.unwrap_or(-0.5 * t / self.run.bins as f64), t),
            None => Axis::open(g.lab_time_start, (self.run.steps as f64 * self.run.dtau).max(1.0)),
        };
        let mut axes = vec![first];
        axes.extend(g.box_lengths.iter().map(|&l| Axis::periodic(0.0, l)));
        Geometry::new(axes).map_err(|e| {
            ScenarioError::Validation(vec![FieldIssue {
                field: "geometry".into(),
                message: e.to_string(),
            }])
        })
    }

    pub fn ensemble_config(&self, initial: InitialDistribution) -> EnsembleConfig {
        let r = &self.run;
        let mut cfg = EnsembleConfig::new(r.particles, r.steps, r.dtau, r.seed);
        cfg.initial = initial;
        cfg.bins = r.bins;
        cfg.snapshot_every = r.snapshot_every;
        cfg.diffusion = r.diffusion;
        cfg.node_eps = r.node_eps;
        cfg
    }

    pub fn suite_options(&self) -> SuiteOptions {
        SuiteOptions {
            tolerance: self.verify.tolerance,
            bookkeeping_tolerance: self.verify.bookkeeping_tolerance,
            conservation_holds: self.verify.conservation_holds,
            conservation_tolerance: self.verify.conservation_tolerance,
        }
    }

    /// Canonical probe, defaulting to `(0.2, 0.3, 0.4, ...)`.
    pub fn canonical_probe(&self) -> Vec<f64> {
        self.verify
            .canonical_probe
            .clone()
            .unwrap_or_else(|| (0..self.dim()).map(|i| 0.2 + 0.1 * i as f64).collect())
    }

    pub fn relax_initial(&self) -> InitialDistribution {
        self.relax.initial.unwrap_or(match self.model.kind {
            ModelKind::KleinGordon => InitialDistribution::DeltaInTime,
            ModelKind::Schrodinger => InitialDistribution::Uniform,
        })
    }

    /// Diffusion constant used by the stochastic runs.
    pub fn diffusion(&self) -> f64 {
        self.run.diffusion.unwrap_or(self.model.hbar / self.model.mass)
    }
}
