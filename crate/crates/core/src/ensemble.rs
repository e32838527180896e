//! Particle ensembles: sampling, propagation and distribution diagnostics.
//!
//! Every particle owns a ChaCha8 generator seeded with the run seed and set to
//! stream `particle_index`. The same generator draws the initial position and
//! all later noise, so results do not depend on how particles are scheduled
//! across threads. Floating-point reductions are done over fixed-size chunks
//! and then summed in chunk order for the same reason.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{stochastic_step_cached, DynamicsError, Guide, LocalField, ParticleState, StepConfig, MAX_REDRAWS};
use crate::fields::{Contraction, Vec4, NODE_EPS};
use crate::geometry::{Axis, Geometry};
use crate::wavemodel::{WaveModel, MAX_DIM};

/// Particles per reduction chunk. Fixed so partial sums never depend on the thread count.
pub const CHUNK: usize = 1024;

/// Envelope safety factor over the scanned maximum.
pub const ENVELOPE_FACTOR: f64 = 1.05;

/// Upper bound on quadrature points used for target marginals.
const QUADRATURE_BUDGET: f64 = 4.0e6;
/// Largest number of quadrature points per bin along one axis.
const MAX_SUBDIVISION: usize = 64;
const QUADRATURE_CHUNK: usize = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("invalid ensemble configuration: {0}")]
    BadConfig(String),
    #[error("density {value:.6e} exceeds the rejection envelope {envelope:.6e}; rescan with a finer grid")]
    EnvelopeExceeded { value: f64, envelope: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDistribution {
    /// Positions distributed as ρ.
    Equilibrium,
    /// Uniform over the analysed box.
    Uniform,
    /// Local time fixed at `t = 0`, space distributed as ρ on that slice.
    DeltaInTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_particles: usize,
    pub initial: InitialDistribution,
    pub steps: usize,
    pub dtau: f64,
    pub bins: usize,
    pub snapshot_every: usize,
    pub seed: u64,
    /// Overrides the physical diffusion `ħ/m`.
    #[serde(default)]
    pub diffusion: Option<f64>,
    #[serde(default = "default_node_eps")]
    pub node_eps: f64,
    /// Also compute momentum maps and carried-velocity statistics.
    #[serde(default)]
    pub track_momentum: bool,
}

fn default_node_eps() -> f64 {
    NODE_EPS
}

impl EnsembleConfig {
    pub fn new(n_particles: usize, steps: usize, dtau: f64, seed: u64) -> Self {
        Self {
            n_particles,
            initial: InitialDistribution::Equilibrium,
            steps,
            dtau,
            bins: 64,
            snapshot_every: (steps / 10).max(1),
            seed,
            diffusion: None,
            node_eps: NODE_EPS,
            track_momentum: false,
        }
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.n_particles == 0 {
            return Err(EnsembleError::BadConfig("n_particles must be at least 1".into()));
        }
        if self.bins < 4 {
            return Err(EnsembleError::BadConfig(format!("bins must be at least 4, got {}", self.bins)));
        }
        if !(self.dtau.is_finite() && self.dtau > 0.0) {
            return Err(EnsembleError::BadConfig(format!("dtau must be positive, got {}", self.dtau)));
        }
        if self.snapshot_every == 0 {
            return Err(EnsembleError::BadConfig("snapshot_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn step_config(&self, model: &WaveModel, geometry: &Geometry) -> StepConfig {
        let mut cfg = StepConfig::new(model, self.dtau).with_geometry(geometry.clone());
        if let Some(k) = self.diffusion {
            cfg.diffusion = k;
        }
        cfg.node_eps = self.node_eps;
        cfg.max_redraws = MAX_REDRAWS;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub tau: f64,
    /// Lab time of a non-relativistic run.
    pub lab_time: Option<f64>,
    /// Model coordinates that were histogrammed, one histogram each.
    pub axes: Vec<usize>,
    pub histograms: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub l1_per_axis: Vec<f64>,
    pub l1: f64,
    pub kl_per_axis: Vec<f64>,
    pub h_coarse: f64,
    /// Largest L1 error of the field-evaluated momentum map, relative to `∫|ρ∂_νS'|`.
    pub momentum_map_l1: Option<f64>,
    /// Root-mean-square difference between carried velocity and local drift.
    pub carried_vs_field_rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub config: EnsembleConfig,
    pub snapshots: Vec<Snapshot>,
    pub rejected_steps: u64,
    pub redraws: u64,
    pub initial_proposals: u64,
}

impl EnsembleReport {
    pub fn max_l1(&self) -> f64 {
        self.snapshots.iter().map(|s| s.l1).fold(0.0, f64::max)
    }

    pub fn max_momentum_l1(&self) -> Option<f64> {
        self.snapshots
            .iter()
            .filter_map(|s| s.momentum_map_l1)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    pub fn final_snapshot(&self) -> &Snapshot {
        self.snapshots.last().expect("reports always hold the initial snapshot")
    }

    /// Largest increase of `H̄` between consecutive snapshots.
    pub fn largest_h_uptick(&self) -> f64 {
        self.snapshots
            .windows(2)
            .map(|w| w[1].h_coarse - w[0].h_coarse)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn h_monotone_within(&self, budget: f64) -> bool {
        self.snapshots.len() < 2 || self.largest_h_uptick() <= budget
    }
}

/// Sub-box to sample from: listed coordinates vary, the others stay at `fixed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub dim: usize,
    pub fixed: Vec4,
    pub varying: Vec<(usize, Axis)>,
}

impl SampleBox {
    fn point(&self, u: &[f64]) -> Vec4 {
        let mut p = self.fixed;
        for ((coord, axis), &ui) in self.varying.iter().zip(u) {
            p[*coord] = axis.origin + axis.length * ui;
        }
        p
    }
}

/// Rejection sampler with a scanned envelope.
pub struct RejectionSampler<'a, F> {
    density: &'a F,
    sample_box: SampleBox,
    envelope: f64,
}

impl<'a, F> RejectionSampler<'a, F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    /// Scan a regular grid of midpoints and set the envelope at
    /// [`ENVELOPE_FACTOR`] times the largest value seen.
    pub fn new(density: &'a F, sample_box: SampleBox) -> Self {
        let d = sample_box.varying.len();
        let per_axis = if d == 0 {
            1
        } else {
            ((1usize << 18) as f64).powf(1.0 / d as f64).floor().clamp(8.0, 512.0) as usize
        };
        let total = per_axis.pow(d as u32);
        let max = (0..total)
            .into_par_iter()
            .map(|flat| {
                let mut rem = flat;
                let mut u = [0.0; MAX_DIM];
                for ui in u.iter_mut().take(d) {
                    *ui = ((rem % per_axis) as f64 + 0.5) / per_axis as f64;
                    rem /= per_axis;
                }
                density(&sample_box.point(&u[..d])[..sample_box.dim])
            })
            .reduce(|| 0.0, f64::max);
        Self {
            density,
            sample_box,
            envelope: ENVELOPE_FACTOR * max,
        }
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    /// Draw one point; returns the point and the number of proposals used.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Vec4, u64), EnsembleError> {
        let d = self.sample_box.varying.len();
        let mut proposals = 0;
        loop {
            proposals += 1;
            let mut u = [0.0; MAX_DIM];
            for ui in u.iter_mut().take(d) {
                *ui = rng.random::<f64>();
            }
            let p = self.sample_box.point(&u[..d]);
            let value = (self.density)(&p[..self.sample_box.dim]);
            if value > self.envelope {
                return Err(EnsembleError::EnvelopeExceeded {
                    value,
                    envelope: self.envelope,
                });
            }
            if rng.random::<f64>() * self.envelope < value {
                return Ok((p, proposals));
            }
        }
    }
}

/// Generator for particle `index` of a run seeded with `seed`.
pub fn particle_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `n` independent samples from `density` on a box, plus the total proposal count.
pub fn rejection_sample<F>(density: &F, sample_box: SampleBox, n: usize, seed: u64) -> Result<(Vec<Vec4>, u64), EnsembleError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let sampler = RejectionSampler::new(density, sample_box);
    let draws: Result<Vec<(Vec4, u64)>, EnsembleError> = (0..n)
        .into_par_iter()
        .map(|i| sampler.draw(&mut particle_rng(seed, i)))
        .collect();
    let draws = draws?;
    let proposals = draws.iter().map(|d| d.1).sum();
    Ok((draws.into_iter().map(|d| d.0).collect(), proposals))
}

/// Coordinates that are histogrammed: every periodic axis.
pub fn analysed_axes(geometry: &Geometry) -> Vec<usize> {
    geometry.periodic_axes()
}

fn bin_of(axis: &Axis, bins: usize, x: f64) -> usize {
    let b = ((x - axis.origin) / axis.length * bins as f64).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

/// Integrals of ρ (and optionally ρ∂_νS') over the bins of each analysed axis.
///
/// Uses midpoint quadrature on a regular grid refined inside each bin. The
/// density part is normalised to unit mass; the momentum part is divided by the
/// same total so it is directly comparable with particle averages.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTargets {
    pub density: Vec<Vec<f64>>,
    /// `momentum[a][ν][bin]`, present when requested.
    pub momentum: Option<Vec<Vec<Vec<f64>>>>,
    /// `∫|ρ∂_νS'|` over the analysed box per component, on the same normalisation.
    pub momentum_scale: Option<Vec<f64>>,
}

pub fn marginal_targets(
    model: &WaveModel,
    geometry: &Geometry,
    axes: &[usize],
    bins: usize,
    lab_time: Option<f64>,
    with_momentum: bool,
) -> MarginalTargets {
    let dim = model.dim();
    let d = axes.len();
    let sub = ((QUADRATURE_BUDGET.powf(1.0 / d as f64) / bins as f64).floor() as usize).clamp(1, MAX_SUBDIVISION);
    let per_axis = bins * sub;
    let total = per_axis.pow(d as u32);
    let hbar = model.metric().hbar;
    let mut fixed = [0.0; MAX_DIM];
    if let Some(t) = lab_time {
        fixed[0] = t;
    }
    let n_comp = dim;
    let n_chunks = total.div_ceil(QUADRATURE_CHUNK);
    // Partial sums per fixed chunk of points, then summed in chunk order.
    type Partial = (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<f64>, f64);
    let partials: Vec<Partial> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut dens = vec![vec![0.0; bins]; d];
            let mut mom = if with_momentum {
                vec![vec![vec![0.0; bins]; n_comp]; d]
            } else {
                Vec::new()
            };
            let mut scale = vec![0.0; n_comp];
            let mut mass = 0.0;
            for flat in chunk * QUADRATURE_CHUNK..((chunk + 1) * QUADRATURE_CHUNK).min(total) {
                let mut rem = flat;
                let mut idx = [0usize; MAX_DIM];
                for k in (0..d).rev() {
                    idx[k] = rem % per_axis;
                    rem /= per_axis;
                }
                let mut p = fixed;
                for (k, &coord) in axes.iter().enumerate() {
                    let a = &geometry.axes[coord];
                    p[coord] = a.origin + a.length * (idx[k] as f64 + 0.5) / per_axis as f64;
                }
                let (psi, grad) = model.psi_gradient(&p[..dim]);
                let rho = psi.norm_sqr();
                mass += rho;
                // ρ ∂_νS' = ħ (Im + Re)(ψ* ∂_νψ), smooth through nodes.
                let mut flux = [0.0; MAX_DIM];
                if with_momentum {
                    for (nu, g) in grad.iter().enumerate().take(n_comp) {
                        let w = psi.conj() * g;
                        flux[nu] = hbar * (w.im + w.re);
                        scale[nu] += flux[nu].abs();
                    }
                }
                for k in 0..d {
                    let b = idx[k] / sub;
                    dens[k][b] += rho;
                    if with_momentum {
                        for nu in 0..n_comp {
                            mom[k][nu][b] += flux[nu];
                        }
                    }
                }
            }
            (dens, mom, scale, mass)
        })
        .collect();
    let mut dens = vec![vec![0.0; bins]; d];
    let mut mom = vec![vec![vec![0.0; bins]; n_comp]; d];
    let mut scale = vec![0.0; n_comp];
    let mut mass = 0.0;
    for (pd, pm, ps, m) in partials {
        mass += m;
        for (a, b) in scale.iter_mut().zip(ps) {
            *a += b;
        }
        for k in 0..d {
            for b in 0..bins {
                dens[k][b] += pd[k][b];
                if with_momentum {
                    for nu in 0..n_comp {
                        mom[k][nu][b] += pm[k][nu][b];
                    }
                }
            }
        }
    }
    for row in dens.iter_mut() {
        for v in row.iter_mut() {
            *v /= mass;
        }
    }
    let momentum = with_momentum.then(|| {
        for per_axis in mom.iter_mut() {
            for row in per_axis.iter_mut() {
                for v in row.iter_mut() {
                    *v /= mass;
                }
            }
        }
        mom
    });
    let momentum_scale = with_momentum.then(|| scale.iter().map(|v| v / mass).collect());
    MarginalTargets {
        density: dens,
        momentum,
        momentum_scale,
    }
}

pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// `Σ p ln(p/q)`, with empty bins of `p` contributing zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Normalised per-axis histograms of particle positions.
pub fn histograms(positions: &[Vec4], geometry: &Geometry, axes: &[usize], bins: usize) -> Vec<Vec<f64>> {
    let counts: Vec<Vec<u64>> = positions
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut c = vec![0u64; axes.len() * bins];
            for p in chunk {
                for (k, &coord) in axes.iter().enumerate() {
                    c[k * bins + bin_of(&geometry.axes[coord], bins, p[coord])] += 1;
                }
            }
            c
        })
        .collect();
    let mut total = vec![0u64; axes.len() * bins];
    for c in counts {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    let n = positions.len() as f64;
    (0..axes.len())
        .map(|k| total[k * bins..(k + 1) * bins].iter().map(|&c| c as f64 / n).collect())
        .collect()
}

struct Particle {
    state: ParticleState,
    rng: ChaCha8Rng,
    here: LocalField,
    rejected: u64,
    redraws: u64,
}

/// Run an ensemble of the stochastic guidance equation.
///
/// Histogrammed axes are the periodic axes of `geometry`. For Schrödinger
/// models axis 0 must be an open lab-time axis whose origin is the start time.
pub fn run_ensemble(model: &WaveModel, geometry: &Geometry, cfg: &EnsembleConfig) -> Result<EnsembleReport, EnsembleError> {
    cfg.validate()?;
    let dim = model.dim();
    geometry
        .check_dim(dim)
        .map_err(|e| EnsembleError::BadConfig(e.to_string()))?;
    let relativistic = model.is_relativistic();
    if !relativistic && geometry.axes[0].periodic {
        return Err(EnsembleError::BadConfig("lab time cannot be periodic".into()));
    }
    if !relativistic && cfg.initial == InitialDistribution::DeltaInTime {
        return Err(EnsembleError::BadConfig(
            "delta_in_time start needs a local-time coordinate (Klein-Gordon model)".into(),
        ));
    }
    let axes = analysed_axes(geometry);
    if axes.is_empty() {
        return Err(EnsembleError::BadConfig("geometry has no periodic axis to analyse".into()));
    }
    let step_cfg = cfg.step_config(model, geometry);
    step_cfg.validate(model)?;
    let t0 = if relativistic { None } else { Some(geometry.axes[0].origin) };

    let (mut particles, proposals) = initial_particles(model, geometry, cfg, &axes, t0)?;
    let guide = Guide::new(model);
    let contraction = Contraction::from_metric(model.metric(), dim);

    // Relativistic targets do not depend on τ.
    let static_targets = relativistic.then(|| marginal_targets(model, geometry, &axes, cfg.bins, None, cfg.track_momentum));

    let mut snapshots = Vec::new();
    let snap = |particles: &[Particle], step: usize| -> Snapshot {
        let tau = step as f64 * cfg.dtau;
        let lab_time = t0.map(|t| particles.first().map_or(t, |p| p.state.position[0]));
        let owned;
        let targets = match &static_targets {
            Some(t) => t,
            None => {
                owned = marginal_targets(model, geometry, &axes, cfg.bins, lab_time, cfg.track_momentum);
                &owned
            }
        };
        snapshot(&guide, &contraction, geometry, &axes, cfg, particles, targets, step, tau, lab_time)
    };
    snapshots.push(snap(&particles, 0));
    // Particles are independent, so each one is advanced through a whole
    // snapshot interval at a time; this keeps its state in cache.
    let mut step = 0;
    while step < cfg.steps {
        let stop = (step + cfg.snapshot_every).min(cfg.steps);
        let n = stop - step;
        particles.par_iter_mut().try_for_each(|p| -> Result<(), DynamicsError> {
            for _ in 0..n {
                let out = stochastic_step_cached(&guide, &p.state, &step_cfg, &mut p.rng, &mut p.here)?;
                p.state = out.state;
                p.redraws += u64::from(out.redraws);
                p.rejected += u64::from(out.rejected);
            }
            Ok(())
        })?;
        step = stop;
        snapshots.push(snap(&particles, step));
    }
    Ok(EnsembleReport {
        config: cfg.clone(),
        snapshots,
        rejected_steps: particles.iter().map(|p| p.rejected).sum(),
        redraws: particles.iter().map(|p| p.redraws).sum(),
        initial_proposals: proposals,
    })
}

fn initial_particles(
    model: &WaveModel,
    geometry: &Geometry,
    cfg: &EnsembleConfig,
    axes: &[usize],
    t0: Option<f64>,
) -> Result<(Vec<Particle>, u64), EnsembleError> {
    let dim = model.dim();
    let mut fixed = [0.0; MAX_DIM];
    let mut varying: Vec<(usize, Axis)> = axes.iter().map(|&c| (c, geometry.axes[c])).collect();
    if let Some(t) = t0 {
        fixed[0] = t;
    }
    if cfg.initial == InitialDistribution::DeltaInTime {
        fixed[0] = geometry.axes[0].wrap(0.0);
        varying.retain(|(c, _)| *c != 0);
    }
    let sample_box = SampleBox { dim, fixed, varying };
    let density = |p: &[f64]| model.psi(p).norm_sqr();
    let uniform = |_: &[f64]| 1.0;
    let sampler_rho = RejectionSampler::new(&density, sample_box.clone());
    let sampler_flat = RejectionSampler::new(&uniform, sample_box);
    let guide = Guide::new(model);
    let with_velocity = cfg.track_momentum;
    let particles: Result<Vec<(Particle, u64)>, EnsembleError> = (0..cfg.n_particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(cfg.seed, i);
            let (point, proposals) = loop {
                let (p, n) = match cfg.initial {
                    InitialDistribution::Uniform => sampler_flat.draw(&mut rng)?,
                    _ => sampler_rho.draw(&mut rng)?,
                };
                // A uniform start can land on a node; redraw such points.
                if model.psi(&p[..dim]).norm() >= cfg.node_eps {
                    break (p, n);
                }
            };
            let mut state = ParticleState::at(&point[..dim]);
            let here = guide.eval(&state.position);
            if with_velocity {
                state.carried_velocity = Some(guide.velocity(here.0, &here.1, true));
            }
            Ok((
                Particle {
                    state,
                    rng,
                    here,
                    rejected: 0,
                    redraws: 0,
                },
                proposals,
            ))
        })
        .collect();
    let particles = particles?;
    let proposals = particles.iter().map(|p| p.1).sum();
    Ok((particles.into_iter().map(|p| p.0).collect(), proposals))
}

#[allow(clippy::too_many_arguments)]
fn snapshot(
    guide: &Guide<'_>,
    contraction: &Contraction,
    geometry: &Geometry,
    axes: &[usize],
    cfg: &EnsembleConfig,
    particles: &[Particle],
    targets: &MarginalTargets,
    step: usize,
    tau: f64,
    lab_time: Option<f64>,
) -> Snapshot {
    let positions: Vec<Vec4> = particles.iter().map(|p| p.state.position).collect();
    let hist = histograms(&positions, geometry, axes, cfg.bins);
    let l1_per_axis: Vec<f64> = hist.iter().zip(&targets.density).map(|(h, t)| l1_distance(h, t)).collect();
    let kl_per_axis: Vec<f64> = hist.iter().zip(&targets.density).map(|(h, t)| kl_divergence(h, t)).collect();
    let (momentum_map_l1, carried_vs_field_rms) = if cfg.track_momentum {
        let (m, r) = momentum_statistics(guide, contraction, geometry, axes, cfg.bins, particles, targets);
        (Some(m), Some(r))
    } else {
        (None, None)
    };
    Snapshot {
        step,
        tau,
        lab_time,
        axes: axes.to_vec(),
        l1: l1_per_axis.iter().copied().fold(0.0, f64::max),
        h_coarse: kl_per_axis.iter().sum(),
        histograms: hist,
        targets: targets.density.clone(),
        l1_per_axis,
        kl_per_axis,
        momentum_map_l1,
        carried_vs_field_rms,
    }
}

/// Field-evaluated momentum map error and carried-velocity RMS discrepancy.
fn momentum_statistics(
    guide: &Guide<'_>,
    contraction: &Contraction,
    geometry: &Geometry,
    axes: &[usize],
    bins: usize,
    particles: &[Particle],
    targets: &MarginalTargets,
) -> (f64, f64) {
    let dim = contraction.dim;
    let hbar = guide.model.metric().hbar;
    let comps: Vec<usize> = contraction.free_indices().collect();
    let n_axes = axes.len();
    let width = n_axes * dim * bins;
    let partials: Vec<(Vec<f64>, f64)> = particles
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sums = vec![0.0; width];
            let mut sq = 0.0;
            for p in chunk {
                let (psi, grad) = &p.here;
                let inv = psi.inv();
                let mut dsp = [0.0; MAX_DIM];
                for nu in 0..dim {
                    let l = grad[nu] * inv;
                    dsp[nu] = hbar * (l.im + l.re);
                }
                for (k, &coord) in axes.iter().enumerate() {
                    let b = bin_of(&geometry.axes[coord], bins, p.state.position[coord]);
                    for &nu in &comps {
                        sums[(k * dim + nu) * bins + b] += dsp[nu];
                    }
                }
                if let Some(v) = p.state.carried_velocity {
                    let field = guide.velocity(*psi, grad, true);
                    for &nu in &comps {
                        sq += (v[nu] - field[nu]).powi(2);
                    }
                }
            }
            (sums, sq)
        })
        .collect();
    let mut sums = vec![0.0; width];
    let mut sq = 0.0;
    for (s, q) in partials {
        for (a, b) in sums.iter_mut().zip(s) {
            *a += b;
        }
        sq += q;
    }
    let n = particles.len() as f64;
    let target = targets.momentum.as_ref().expect("momentum targets requested");
    let scale = targets.momentum_scale.as_ref().expect("momentum targets requested");
    let mut worst: f64 = 0.0;
    for k in 0..n_axes {
        for &nu in &comps {
            let t = &target[k][nu];
            // Relative to the whole field: a marginal can cancel to nearly
            // zero even where the momentum density itself is large.
            let norm = scale[nu];
            if norm < 1e-12 {
                continue;
            }
            let err: f64 = (0..bins)
                .map(|b| (sums[(k * dim + nu) * bins + b] / n - t[b]).abs())
                .sum();
            worst = worst.max(err / norm);
        }
    }
    (worst, (sq / n).sqrt())
}

/// Equilibrium-start run measuring position equivariance.
pub fn run_equivariance(model: &WaveModel, geometry: &Geometry, cfg: &EnsembleConfig) -> Result<EnsembleReport, EnsembleError> {
    if cfg.initial != InitialDistribution::Equilibrium {
        return Err(EnsembleError::BadConfig("equivariance runs start in equilibrium".into()));
    }
    run_ensemble(model, geometry, cfg)
}

/// Relaxation run; any initial law is accepted, `delta_in_time` being the usual choice.
pub fn run_relaxation(model: &WaveModel, geometry: &Geometry, cfg: &EnsembleConfig) -> Result<EnsembleReport, EnsembleError> {
    run_ensemble(model, geometry, cfg)
}

/// Equilibrium-start run with carried velocities and momentum maps.
pub fn run_momentum_equivariance(
    model: &WaveModel,
    geometry: &Geometry,
    cfg: &EnsembleConfig,
) -> Result<EnsembleReport, EnsembleError> {
    if cfg.initial != InitialDistribution::Equilibrium {
        return Err(EnsembleError::BadConfig("momentum equivariance runs start in equilibrium".into()));
    }
    let cfg = EnsembleConfig {
        track_momentum: true,
        ..cfg.clone()
    };
    run_ensemble(model, geometry, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_ignores_empty_bins() {
        assert_eq!(kl_divergence(&[0.0, 1.0], &[0.5, 0.5]), 2f64.ln());
        assert_eq!(l1_distance(&[0.0, 1.0], &[0.5, 0.5]), 1.0);
    }

    #[test]
    fn bins_clamp_to_range() {
        let a = Axis::periodic(0.0, 1.0);
        assert_eq!(bin_of(&a, 4, 0.0), 0);
        assert_eq!(bin_of(&a, 4, 0.999_999), 3);
        assert_eq!(bin_of(&a, 4, 1.0), 3);
        assert_eq!(bin_of(&a, 4, -1e-18), 0);
    }

    #[test]
    fn config_validation() {
        let mut c = EnsembleConfig::new(10, 10, 0.1, 1);
        assert!(c.validate().is_ok());
        c.bins = 3;
        assert!(c.validate().is_err());
        c.bins = 8;
        c.n_particles = 0;
        assert!(c.validate().is_err());
    }
}
