//! Single-particle integrators.
//!
//! Positions carry all model coordinates. For Klein-Gordon models coordinate 0
//! is the local time `x⁰ = ct`, which moves and diffuses like any other
//! coordinate. For Schrödinger models coordinate 0 is the lab time, advanced
//! deterministically at unit rate per unit `τ`.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{derive_fields_guarded, Contraction, FieldError, Vec4, NODE_EPS};
use crate::geometry::Geometry;
use crate::wavemodel::{WaveModel, MAX_DIM};

/// Gaussian redraws attempted before a step that lands near a node is rejected.
pub const MAX_REDRAWS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("particle at {position:?} is too close to a node (|psi| = {abs_psi:.3e})")]
    NodeTooClose { position: Vec<f64>, abs_psi: f64 },
    #[error("invalid step configuration: {0}")]
    BadConfig(String),
    #[error("integrator needs a carried velocity")]
    MissingVelocity,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub position: Vec4,
    pub carried_velocity: Option<Vec4>,
    pub tau: f64,
}

impl ParticleState {
    pub fn at(point: &[f64]) -> Self {
        let mut position = [0.0; MAX_DIM];
        position[..point.len()].copy_from_slice(point);
        Self {
            position,
            carried_velocity: None,
            tau: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dtau: f64,
    /// Diffusion constant `k`; the physical choice is `ħ/m`.
    pub diffusion: f64,
    pub geometry: Option<Geometry>,
    pub node_eps: f64,
    pub max_redraws: u32,
}

impl StepConfig {
    /// Physical diffusion `ħ/m`, no wrapping.
    pub fn new(model: &WaveModel, dtau: f64) -> Self {
        Self {
            dtau,
            diffusion: model.metric().hbar / model.metric().mass,
            geometry: None,
            node_eps: NODE_EPS,
            max_redraws: MAX_REDRAWS,
        }
    }

    pub fn with_geometry(mut self, geometry: Geometry) -> Self {
        self.geometry = Some(geometry);
        self
    }

    pub fn with_diffusion(mut self, k: f64) -> Self {
        self.diffusion = k;
        self
    }

    pub fn validate(&self, model: &WaveModel) -> Result<(), DynamicsError> {
        if !(self.dtau.is_finite() && self.dtau > 0.0) {
            return Err(DynamicsError::BadConfig(format!("dtau must be positive, got {}", self.dtau)));
        }
        if !(self.diffusion.is_finite() && self.diffusion >= 0.0) {
            return Err(DynamicsError::BadConfig(format!(
                "diffusion must be non-negative, got {}",
                self.diffusion
            )));
        }
        if let Some(g) = &self.geometry {
            g.check_dim(model.dim())
                .map_err(|e| DynamicsError::BadConfig(e.to_string()))?;
        }
        Ok(())
    }

    fn wrap(&self, p: &mut Vec4, dim: usize) {
        if let Some(g) = &self.geometry {
            g.wrap(&mut p[..dim]);
        }
    }
}

/// Result of one stochastic step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: ParticleState,
    pub redraws: u32,
    pub rejected: bool,
}

/// Guidance velocity at a point: `∂^μS/m`, or `∂^μS'/m` when `primed`.
///
/// For Schrödinger models component 0 is the unit lab-time rate.
pub fn guidance_velocity(model: &WaveModel, point: &[f64], primed: bool, eps: f64) -> Result<Vec4, DynamicsError> {
    let guide = Guide::new(model);
    let (psi, grad) = model.psi_gradient(point);
    guide.check_node(point, psi.norm(), eps)?;
    Ok(guide.velocity(psi, &grad, primed))
}

/// Drift evaluation with the metric constants hoisted out of the inner loop.
#[derive(Debug, Clone)]
pub struct Guide<'a> {
    pub model: &'a WaveModel,
    contraction: Contraction,
    hbar_over_m: f64,
    dim: usize,
    relativistic: bool,
}

impl<'a> Guide<'a> {
    pub fn new(model: &'a WaveModel) -> Self {
        let metric = model.metric();
        Self {
            model,
            contraction: Contraction::from_metric(metric, model.dim()),
            hbar_over_m: metric.hbar / metric.mass,
            dim: model.dim(),
            relativistic: model.is_relativistic(),
        }
    }

    pub fn eval(&self, point: &Vec4) -> (Complex64, [Complex64; MAX_DIM]) {
        self.model.psi_gradient(&point[..self.dim])
    }

    pub fn velocity(&self, psi: Complex64, grad: &[Complex64; MAX_DIM], primed: bool) -> Vec4 {
        let inv = psi.inv();
        let mut v = [0.0; MAX_DIM];
        for mu in 0..self.dim {
            let l = grad[mu] * inv;
            let ds = if primed { l.im + l.re } else { l.im };
            v[mu] = self.contraction.inv[mu] * self.hbar_over_m * ds;
        }
        if !self.relativistic {
            v[0] = 1.0;
        }
        v
    }

    fn check_node(&self, point: &[f64], abs_psi: f64, eps: f64) -> Result<(), DynamicsError> {
        if abs_psi >= eps {
            Ok(())
        } else {
            Err(DynamicsError::NodeTooClose {
                position: point[..self.dim].to_vec(),
                abs_psi,
            })
        }
    }
}

/// ψ and its gradient at a particle's current position.
pub type LocalField = (Complex64, [Complex64; MAX_DIM]);

fn axpy(x: &Vec4, a: f64, v: &Vec4) -> Vec4 {
    let mut out = *x;
    for i in 0..MAX_DIM {
        out[i] += a * v[i];
    }
    out
}

/// Classical RK4 along `dX/dτ = ∂^μS/m`.
pub fn deterministic_step(state: &ParticleState, model: &WaveModel, cfg: &StepConfig) -> Result<ParticleState, DynamicsError> {
    let dim = model.dim();
    let h = cfg.dtau;
    let x = state.position;
    let vel = |p: &Vec4| guidance_velocity(model, &p[..dim], false, cfg.node_eps);
    let k1 = vel(&x)?;
    let k2 = vel(&axpy(&x, 0.5 * h, &k1))?;
    let k3 = vel(&axpy(&x, 0.5 * h, &k2))?;
    let k4 = vel(&axpy(&x, h, &k3))?;
    let mut next = x;
    for i in 0..dim {
        next[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    cfg.wrap(&mut next, dim);
    Ok(ParticleState {
        position: next,
        carried_velocity: state.carried_velocity,
        tau: state.tau + h,
    })
}

/// Euler–Maruyama step of `dX = ∂^μS'/m dτ + √k dW`.
///
/// The noise is Euclidean and independent per coordinate. Lab time of
/// Schrödinger models is not noisy. If the proposal lands within the node guard,
/// the Gaussian increment is redrawn up to `max_redraws` times, after which the
/// particle stays put for this step.
pub fn stochastic_step<R: Rng + ?Sized>(
    state: &ParticleState,
    model: &WaveModel,
    cfg: &StepConfig,
    rng: &mut R,
) -> Result<StepOutcome, DynamicsError> {
    let guide = Guide::new(model);
    let mut here = guide.eval(&state.position);
    stochastic_step_cached(&guide, state, cfg, rng, &mut here)
}

/// [`stochastic_step`] reusing the field at the current position; on return
/// `here` holds the field at the new position.
pub fn stochastic_step_cached<R: Rng + ?Sized>(
    guide: &Guide<'_>,
    state: &ParticleState,
    cfg: &StepConfig,
    rng: &mut R,
    here: &mut LocalField,
) -> Result<StepOutcome, DynamicsError> {
    let dim = guide.dim;
    if here.0.norm_sqr() < cfg.node_eps * cfg.node_eps {
        guide.check_node(&state.position, here.0.norm(), cfg.node_eps)?;
    }
    let drift = guide.velocity(here.0, &here.1, true);
    let first_noisy = if guide.relativistic { 0 } else { 1 };
    let sigma = (cfg.diffusion * cfg.dtau).sqrt();
    let mut base = state.position;
    for i in 0..dim {
        base[i] += drift[i] * cfg.dtau;
    }
    let mut redraws = 0;
    loop {
        let mut next = base;
        for x in next.iter_mut().take(dim).skip(first_noisy) {
            let z: f64 = rng.sample(StandardNormal);
            *x += sigma * z;
        }
        cfg.wrap(&mut next, dim);
        let field = guide.eval(&next);
        if field.0.norm_sqr() >= cfg.node_eps * cfg.node_eps {
            *here = field;
            return Ok(StepOutcome {
                state: ParticleState {
                    position: next,
                    carried_velocity: state.carried_velocity,
                    tau: state.tau + cfg.dtau,
                },
                redraws,
                rejected: false,
            });
        }
        if redraws >= cfg.max_redraws {
            // Lab time still advances so the ensemble stays on one time slice.
            let mut stay = state.position;
            if !guide.relativistic {
                stay[0] += cfg.dtau;
                *here = guide.eval(&stay);
                guide.check_node(&stay, here.0.norm(), cfg.node_eps)?;
            }
            return Ok(StepOutcome {
                state: ParticleState {
                    position: stay,
                    carried_velocity: state.carried_velocity,
                    tau: state.tau + cfg.dtau,
                },
                redraws,
                rejected: true,
            });
        }
        redraws += 1;
    }
}

/// Which forces drive the second-order Bohm-Newton system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceModel {
    /// `-∇(V + Q)`; with constant V only the quantum force remains.
    Full,
    /// Quantum force dropped, leaving free motion.
    WithoutQuantumForce,
}

fn quantum_acceleration(model: &WaveModel, x: &Vec4, force: ForceModel, eps: f64) -> Result<Vec4, DynamicsError> {
    let dim = model.dim();
    let mut a = [0.0; MAX_DIM];
    if force == ForceModel::WithoutQuantumForce {
        return Ok(a);
    }
    let f = derive_fields_guarded(&model.evaluate_jet(&x[..dim], 3), model.metric(), model.v0(), eps).map_err(|e| match e {
        FieldError::NodeTooClose { abs_psi, .. } => DynamicsError::NodeTooClose {
            position: x[..dim].to_vec(),
            abs_psi,
        },
        other => other.into(),
    })?;
    for nu in 0..dim {
        a[nu] = -f.contraction.inv[nu] * f.d_q[nu] / f.mass;
    }
    Ok(a)
}

/// RK4 on `ẋ = v`, `v̇^ν = -g^{νν} ∂_νQ / m` (constant V exerts no force).
pub fn bohm_newton_step(
    state: &ParticleState,
    model: &WaveModel,
    cfg: &StepConfig,
    force: ForceModel,
) -> Result<ParticleState, DynamicsError> {
    let dim = model.dim();
    let v0 = state.carried_velocity.ok_or(DynamicsError::MissingVelocity)?;
    let h = cfg.dtau;
    let x0 = state.position;
    let acc = |x: &Vec4| quantum_acceleration(model, x, force, cfg.node_eps);
    let a1 = acc(&x0)?;
    let (x2, v2) = (axpy(&x0, 0.5 * h, &v0), axpy(&v0, 0.5 * h, &a1));
    let a2 = acc(&x2)?;
    let (x3, v3) = (axpy(&x0, 0.5 * h, &v2), axpy(&v0, 0.5 * h, &a2));
    let a3 = acc(&x3)?;
    let (x4, v4) = (axpy(&x0, h, &v3), axpy(&v0, h, &a3));
    let a4 = acc(&x4)?;
    let mut x = x0;
    let mut v = v0;
    for i in 0..dim {
        x[i] += h / 6.0 * (v0[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
        v[i] += h / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
    }
    cfg.wrap(&mut x, dim);
    Ok(ParticleState {
        position: x,
        carried_velocity: Some(v),
        tau: state.tau + h,
    })
}

/// Stochastic position update with a carried velocity that feels only `-∇V/m`.
///
/// With the constant potentials supported here the carried velocity never changes.
pub fn carried_momentum_step<R: Rng + ?Sized>(
    state: &ParticleState,
    model: &WaveModel,
    cfg: &StepConfig,
    rng: &mut R,
) -> Result<StepOutcome, DynamicsError> {
    if state.carried_velocity.is_none() {
        return Err(DynamicsError::MissingVelocity);
    }
    stochastic_step(state, model, cfg, rng)
}

/// Largest difference between a carried velocity and `∂^μS/m` at the particle.
pub fn velocity_consistency(state: &ParticleState, model: &WaveModel) -> Result<f64, DynamicsError> {
    let dim = model.dim();
    let v = state.carried_velocity.ok_or(DynamicsError::MissingVelocity)?;
    let field = guidance_velocity(model, &state.position[..dim], false, 0.0)?;
    Ok((0..dim).map(|i| (v[i] - field[i]).abs()).fold(0.0, f64::max))
}

/// Start on the guidance field at `start`, integrate the Bohm-Newton system for
/// `steps` RK4 steps and return the largest velocity discrepancy seen.
pub fn bohm_newton_consistency(
    model: &WaveModel,
    start: &[f64],
    cfg: &StepConfig,
    steps: usize,
    force: ForceModel,
) -> Result<f64, DynamicsError> {
    cfg.validate(model)?;
    let mut s = ParticleState::at(start);
    s.carried_velocity = Some(guidance_velocity(model, start, false, cfg.node_eps)?);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        s = bohm_newton_step(&s, model, cfg, force)?;
        worst = worst.max(velocity_consistency(&s, model)?);
    }
    Ok(worst)
}

/// Bohm-Newton runs from several starts, with and without the quantum force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BohmNewtonSurvey {
    pub full: Vec<f64>,
    pub ablated: Vec<f64>,
}

impl BohmNewtonSurvey {
    pub fn worst_full(&self) -> f64 {
        self.full.iter().copied().fold(0.0, f64::max)
    }

    /// Median divergence of the runs without quantum force.
    pub fn median_ablated(&self) -> f64 {
        let mut v = self.ablated.clone();
        v.sort_by(f64::total_cmp);
        match v.len() {
            0 => 0.0,
            n if n % 2 == 1 => v[n / 2],
            n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        }
    }
}

/// [`bohm_newton_consistency`] for every start, in both force models.
pub fn bohm_newton_survey(
    model: &WaveModel,
    starts: &[Vec<f64>],
    cfg: &StepConfig,
    steps: usize,
) -> Result<BohmNewtonSurvey, DynamicsError> {
    let run = |force| -> Result<Vec<f64>, DynamicsError> {
        starts
            .par_iter()
            .map(|x| bohm_newton_consistency(model, x, cfg, steps, force))
            .collect()
    };
    Ok(BohmNewtonSurvey {
        full: run(ForceModel::Full)?,
        ablated: run(ForceModel::WithoutQuantumForce)?,
    })
}

/// One CSV row: `particle_id,tau,x0,..,x{d},v0,..,v{d}` (velocity columns empty if absent).
pub fn trajectory_row(particle_id: usize, state: &ParticleState, dim: usize) -> String {
    let mut row = format!("{particle_id},{}", state.tau);
    for x in &state.position[..dim] {
        row.push_str(&format!(",{x}"));
    }
    for i in 0..dim {
        match state.carried_velocity {
            Some(v) => row.push_str(&format!(",{}", v[i])),
            None => row.push(','),
        }
    }
    row
}
