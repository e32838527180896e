//! Explicit finite-volume solver for the Fokker-Planck equation of the
//! stochastic guidance law.
//!
//! The density `u` on a periodic grid evolves under
//! `∂u/∂τ + ∂_i(u v^i) = (k/2) ∂_i∂_i u`, where `v = ∂^μS'/m` is the drift used
//! by the particle integrator and the Laplacian is Euclidean because the
//! particle noise is. Klein-Gordon grids cover every model coordinate, local
//! time included, and `τ` is the evolution parameter. Schrödinger grids cover
//! the spatial coordinates only and lab time advances with `τ`.
//!
//! Fluxes live on cell faces. The advective flux blends the central average
//! with first-order upwinding, the diffusive flux is the two-point difference.
//! Each cell gains exactly what its neighbours lose, so mass is conserved up to
//! rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Guide;
use crate::ensemble::{analysed_axes, l1_distance, marginal_targets, run_ensemble, EnsembleConfig, EnsembleError, EnsembleReport, InitialDistribution};
use crate::fields::NODE_EPS;
use crate::geometry::{Axis, Geometry};
use crate::wavemodel::{WaveModel, MAX_DIM};

/// Largest `k·dτ/Δ²` accepted on any axis.
pub const MAX_DIFFUSION_NUMBER: f64 = 0.25;
/// Largest `|v|·dτ/Δ` accepted on any axis.
pub const MAX_COURANT: f64 = 0.5;
/// Cells per chunk for parallel stencil application.
const ROW_CHUNK: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpError {
    #[error("CFL violation on axis {axis}: {quantity} = {value:.4e} exceeds {limit:.4e}")]
    CflViolation {
        axis: usize,
        quantity: String,
        value: f64,
        limit: f64,
    },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("drift undefined at {position:?}: |psi| = {abs_psi:.3e}")]
    NodeTooClose { position: Vec<f64>, abs_psi: f64 },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// One periodic grid direction, mapped onto model coordinate `coord`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub coord: usize,
    pub origin: f64,
    pub length: f64,
    pub points: usize,
}

impl GridAxis {
    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.origin + (i as f64 + 0.5) * self.spacing()
    }

    /// Face between cell `i` and cell `i + 1`.
    pub fn face(&self, i: usize) -> f64 {
        self.origin + (i + 1) as f64 * self.spacing()
    }
}

/// Cell-averaged density on a periodic grid, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<GridAxis>,
    pub values: Vec<f64>,
    pub dtau: f64,
    /// Evolution parameter reached so far.
    pub tau: f64,
    /// Weight of the central advective flux; the rest is upwind.
    pub central_weight: f64,
}

impl Grid {
    pub fn zeros(axes: Vec<GridAxis>, dtau: f64, central_weight: f64) -> Result<Self, FpError> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(FpError::BadGrid(format!("grid needs 1 to {MAX_DIM} axes, got {}", axes.len())));
        }
        for (i, a) in axes.iter().enumerate() {
            if a.points < 3 || !(a.length.is_finite() && a.length > 0.0) {
                return Err(FpError::BadGrid(format!(
                    "axis {i}: need at least 3 points and a positive length, got {} points, length {}",
                    a.points, a.length
                )));
            }
        }
        if !(dtau.is_finite() && dtau > 0.0) {
            return Err(FpError::BadGrid(format!("dtau must be positive, got {dtau}")));
        }
        if !(0.0..=1.0).contains(&central_weight) {
            return Err(FpError::BadGrid(format!("central_weight must lie in [0, 1], got {central_weight}")));
        }
        let n = axes.iter().map(|a| a.points).product();
        Ok(Self {
            axes,
            values: vec![0.0; n],
            dtau,
            tau: 0.0,
            central_weight,
        })
    }

    /// Grid holding `f` at the cell centres, normalised to unit mass.
    pub fn from_density<F>(axes: Vec<GridAxis>, dtau: f64, central_weight: f64, f: F) -> Result<Self, FpError>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let mut g = Self::zeros(axes, dtau, central_weight)?;
        let axes = g.axes.clone();
        let shape = g.shape();
        g.values.par_iter_mut().enumerate().for_each(|(flat, v)| {
            let idx = unflatten(flat, &shape);
            let mut x = [0.0; MAX_DIM];
            for (k, a) in axes.iter().enumerate() {
                x[k] = a.center(idx[k]);
            }
            *v = f(&x[..axes.len()]);
        });
        g.normalise()?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::spacing).product()
    }

    pub fn mass(&self) -> f64 {
        chunked_sum(&self.values) * self.cell_volume()
    }

    pub fn normalise(&mut self) -> Result<(), FpError> {
        let m = self.mass();
        if !(m.is_finite() && m > 0.0) {
            return Err(FpError::BadGrid(format!("cannot normalise a grid of mass {m}")));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(())
    }

    /// Probability held by each cell.
    pub fn probabilities(&self) -> Vec<f64> {
        let vol = self.cell_volume();
        self.values.iter().map(|v| v * vol).collect()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// L1 distance between the cell probabilities of two grids of equal shape.
    pub fn l1_to(&self, other: &Grid) -> f64 {
        l1_distance(&self.probabilities(), &other.probabilities())
    }

    /// Marginal probabilities along grid axis `a`, merging `cells_per_bin` cells per bin.
    pub fn marginal(&self, a: usize, cells_per_bin: usize) -> Vec<f64> {
        let shape = self.shape();
        let n = shape[a];
        let stride: usize = shape[a + 1..].iter().product();
        let vol = self.cell_volume();
        let mut cells = vec![0.0; n];
        for (flat, v) in self.values.iter().enumerate() {
            cells[(flat / stride) % n] += v * vol;
        }
        cells.chunks(cells_per_bin.max(1)).map(|c| c.iter().sum()).collect()
    }

    /// Probabilities summed onto grid axes `a` (rows) and `b` (columns).
    pub fn projection(&self, a: usize, b: usize) -> Vec<Vec<f64>> {
        let shape = self.shape();
        let vol = self.cell_volume();
        let mut out = vec![vec![0.0; shape[b]]; shape[a]];
        for (flat, v) in self.values.iter().enumerate() {
            let idx = unflatten(flat, &shape);
            out[idx[a]][idx[b]] += v * vol;
        }
        out
    }

    /// Mean and variance of grid coordinate `a`, treating the axis as open.
    pub fn moments(&self, a: usize) -> (f64, f64) {
        let marg = self.marginal(a, 1);
        let ax = &self.axes[a];
        let mass: f64 = marg.iter().sum();
        let mean = marg.iter().enumerate().map(|(i, p)| p * ax.center(i)).sum::<f64>() / mass;
        let var = marg
            .iter()
            .enumerate()
            .map(|(i, p)| p * (ax.center(i) - mean).powi(2))
            .sum::<f64>()
            / mass;
        (mean, var)
    }
}

fn unflatten(mut flat: usize, shape: &[usize]) -> [usize; MAX_DIM] {
    let mut idx = [0; MAX_DIM];
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    idx
}

/// Sum over fixed-size chunks, added in chunk order.
fn chunked_sum(values: &[f64]) -> f64 {
    let partial: Vec<f64> = values.par_chunks(ROW_CHUNK).map(|c| c.iter().sum()).collect();
    partial.iter().sum()
}

/// Drift components on cell faces: `faces[a][flat]` is the velocity along
/// grid axis `a` on the face between cell `flat` and its `+a` neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    pub faces: Vec<Vec<f64>>,
}

impl DriftField {
    pub fn zero(grid: &Grid) -> Self {
        Self::constant(grid, &vec![0.0; grid.dim()])
    }

    pub fn constant(grid: &Grid, v: &[f64]) -> Self {
        let n = grid.values.len();
        Self {
            faces: (0..grid.dim()).map(|a| vec![v[a]; n]).collect(),
        }
    }

    /// Sample `∂^μS'/m` of `model` on the faces of `grid`.
    ///
    /// `lab_time` fixes coordinate 0 for Schrödinger models.
    pub fn from_model(model: &WaveModel, grid: &Grid, lab_time: Option<f64>, eps: f64) -> Result<Self, FpError> {
        let guide = Guide::new(model);
        let dim = model.dim();
        let shape = grid.shape();
        let n = grid.values.len();
        let mut faces = Vec::with_capacity(grid.dim());
        for (a, axis) in grid.axes.iter().enumerate() {
            let mut row = vec![0.0; n];
            let fill: Result<(), FpError> = row.par_chunks_mut(ROW_CHUNK).enumerate().try_for_each(|(chunk, out)| {
                for (j, v) in out.iter_mut().enumerate() {
                    let idx = unflatten(chunk * ROW_CHUNK + j, &shape);
                    let mut p = [0.0; MAX_DIM];
                    if let Some(t) = lab_time {
                        p[0] = t;
                    }
                    for (k, g) in grid.axes.iter().enumerate() {
                        p[g.coord] = if k == a { g.face(idx[k]) } else { g.center(idx[k]) };
                    }
                    let (psi, grad) = model.psi_gradient(&p[..dim]);
                    if psi.norm() < eps {
                        return Err(FpError::NodeTooClose {
                            position: p[..dim].to_vec(),
                            abs_psi: psi.norm(),
                        });
                    }
                    *v = guide.velocity(psi, &grad, true)[axis.coord];
                }
                Ok(())
            });
            fill?;
            faces.push(row);
        }
        Ok(Self { faces })
    }

    pub fn max_speed(&self, a: usize) -> f64 {
        self.faces[a].iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Check every stability and positivity condition of the explicit scheme.
pub fn check_cfl(grid: &Grid, drift: &DriftField, k: f64) -> Result<(), FpError> {
    let w = grid.central_weight;
    let mut diagonal = 0.0;
    for (a, axis) in grid.axes.iter().enumerate() {
        let dx = axis.spacing();
        let vmax = drift.max_speed(a);
        let diffusion_number = k * grid.dtau / (dx * dx);
        if diffusion_number > MAX_DIFFUSION_NUMBER {
            return Err(FpError::CflViolation {
                axis: a,
                quantity: "k*dtau/dx^2".into(),
                value: diffusion_number,
                limit: MAX_DIFFUSION_NUMBER,
            });
        }
        let courant = vmax * grid.dtau / dx;
        if courant > MAX_COURANT {
            return Err(FpError::CflViolation {
                axis: a,
                quantity: "|v|*dtau/dx".into(),
                value: courant,
                limit: MAX_COURANT,
            });
        }
        // Central differencing stays positive only while diffusion dominates
        // within a cell.
        if w > 0.0 && w * vmax * dx > k {
            return Err(FpError::CflViolation {
                axis: a,
                quantity: "central_weight*|v|*dx (cell Peclet)".into(),
                value: w * vmax * dx,
                limit: k,
            });
        }
        diagonal += diffusion_number + (1.0 - w) * courant;
    }
    if diagonal > 1.0 {
        return Err(FpError::CflViolation {
            axis: grid.dim() - 1,
            quantity: "sum of diagonal stencil weights".into(),
            value: diagonal,
            limit: 1.0,
        });
    }
    Ok(())
}

/// Largest step satisfying the diffusion and Courant limits, with a small margin.
pub fn max_stable_dtau(axes: &[GridAxis], drift: &DriftField, k: f64, central_weight: f64) -> f64 {
    let mut limit = f64::INFINITY;
    let mut diagonal_rate = 0.0;
    for (a, axis) in axes.iter().enumerate() {
        let dx = axis.spacing();
        let vmax = drift.max_speed(a);
        if k > 0.0 {
            limit = limit.min(MAX_DIFFUSION_NUMBER * dx * dx / k);
        }
        if vmax > 0.0 {
            limit = limit.min(MAX_COURANT * dx / vmax);
        }
        diagonal_rate += k / (dx * dx) + (1.0 - central_weight) * vmax / dx;
    }
    if diagonal_rate > 0.0 {
        limit = limit.min(1.0 / diagonal_rate);
    }
    0.99 * limit
}

/// One forward-Euler step of the flux-form Fokker-Planck equation.
pub fn fp_step(grid: &Grid, drift: &DriftField, k: f64) -> Result<Grid, FpError> {
    if drift.faces.len() != grid.dim() || drift.faces.iter().any(|f| f.len() != grid.values.len()) {
        return Err(FpError::BadGrid("drift field does not match the grid".into()));
    }
    check_cfl(grid, drift, k)?;
    let shape = grid.shape();
    let n = grid.values.len();
    let u = &grid.values;
    let w = grid.central_weight;
    let strides: Vec<usize> = (0..shape.len()).map(|a| shape[a + 1..].iter().product()).collect();
    let plus = |flat: usize, a: usize| {
        let c = (flat / strides[a]) % shape[a];
        if c + 1 == shape[a] {
            flat - c * strides[a]
        } else {
            flat + strides[a]
        }
    };
    let minus = |flat: usize, a: usize| {
        let c = (flat / strides[a]) % shape[a];
        if c == 0 {
            flat + (shape[a] - 1) * strides[a]
        } else {
            flat - strides[a]
        }
    };

    // Flux through the +a face of every cell.
    let mut fluxes = Vec::with_capacity(grid.dim());
    for (a, axis) in grid.axes.iter().enumerate() {
        let dx = axis.spacing();
        let v = &drift.faces[a];
        let mut f = vec![0.0; n];
        f.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(chunk, out)| {
            for (j, slot) in out.iter_mut().enumerate() {
                let i = chunk * ROW_CHUNK + j;
                let (ul, ur) = (u[i], u[plus(i, a)]);
                let vf = v[i];
                let central = 0.5 * vf * (ul + ur);
                let upwind = vf.max(0.0) * ul + vf.min(0.0) * ur;
                *slot = w * central + (1.0 - w) * upwind - 0.5 * k * (ur - ul) / dx;
            }
        });
        fluxes.push(f);
    }

    let mut next = grid.clone();
    let coeffs: Vec<f64> = grid.axes.iter().map(|a| grid.dtau / a.spacing()).collect();
    next.values.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(chunk, out)| {
        for (j, slot) in out.iter_mut().enumerate() {
            let i = chunk * ROW_CHUNK + j;
            let mut du = 0.0;
            for (a, f) in fluxes.iter().enumerate() {
                du -= coeffs[a] * (f[i] - f[minus(i, a)]);
            }
            *slot = u[i] + du;
        }
    });
    next.tau += grid.dtau;
    Ok(next)
}

/// Grid axes covering the guided coordinates of `model` inside `geometry`.
///
/// Klein-Gordon grids need every coordinate periodic. Schrödinger grids cover
/// coordinates 1.. and need those periodic.
pub fn grid_axes_for(model: &WaveModel, geometry: &Geometry, points: usize) -> Result<Vec<GridAxis>, FpError> {
    geometry
        .check_dim(model.dim())
        .map_err(|e| FpError::GeometryMismatch(e.to_string()))?;
    let first = if model.is_relativistic() { 0 } else { 1 };
    if first >= model.dim() {
        return Err(FpError::GeometryMismatch("model has no spatial coordinate to grid".into()));
    }
    (first..model.dim())
        .map(|c| {
            let a = geometry.axes[c];
            if !a.periodic {
                return Err(FpError::GeometryMismatch(format!("coordinate {c} is not periodic")));
            }
            Ok(GridAxis {
                coord: c,
                origin: a.origin,
                length: a.length,
                points,
            })
        })
        .collect()
}

/// Lab time of a Schrödinger grid after evolving for `tau`.
fn lab_time(model: &WaveModel, geometry: &Geometry, tau: f64) -> Option<f64> {
    (!model.is_relativistic()).then(|| geometry.axes[0].origin + tau)
}

/// Grid holding `|ψ|²` on its cells, at the geometry's start time for Schrödinger models.
pub fn equilibrium_grid(
    model: &WaveModel,
    geometry: &Geometry,
    points: usize,
    dtau: f64,
    central_weight: f64,
) -> Result<Grid, FpError> {
    let axes = grid_axes_for(model, geometry, points)?;
    let dim = model.dim();
    let t0 = lab_time(model, geometry, 0.0);
    let coords: Vec<usize> = axes.iter().map(|a| a.coord).collect();
    Grid::from_density(axes, dtau, central_weight, |x| {
        let mut p = [0.0; MAX_DIM];
        if let Some(t) = t0 {
            p[0] = t;
        }
        for (k, &c) in coords.iter().enumerate() {
            p[c] = x[k];
        }
        model.psi(&p[..dim]).norm_sqr()
    })
}

/// Grid version of an ensemble's initial law.
pub fn initial_grid(
    model: &WaveModel,
    geometry: &Geometry,
    initial: InitialDistribution,
    points: usize,
    dtau: f64,
    central_weight: f64,
) -> Result<Grid, FpError> {
    match initial {
        InitialDistribution::Equilibrium => equilibrium_grid(model, geometry, points, dtau, central_weight),
        InitialDistribution::Uniform => {
            let axes = grid_axes_for(model, geometry, points)?;
            Grid::from_density(axes, dtau, central_weight, |_| 1.0)
        }
        InitialDistribution::DeltaInTime => {
            if !model.is_relativistic() {
                return Err(FpError::GeometryMismatch("delta_in_time start needs a local-time grid axis".into()));
            }
            let mut g = equilibrium_grid(model, geometry, points, dtau, central_weight)?;
            let t_axis = g.axes[0];
            let t_star = geometry.axes[0].wrap(0.0);
            // Share the delta between the two cells whose centres bracket it.
            let s = (t_star - t_axis.origin) / t_axis.spacing() - 0.5;
            let lower = s.floor();
            let frac = s - lower;
            let n = t_axis.points;
            let i0 = (lower as i64).rem_euclid(n as i64) as usize;
            let i1 = (i0 + 1) % n;
            let dim = model.dim();
            let shape = g.shape();
            let axes = g.axes.clone();
            g.values.par_iter_mut().enumerate().for_each(|(flat, v)| {
                let idx = unflatten(flat, &shape);
                let weight = if idx[0] == i0 {
                    1.0 - frac
                } else if idx[0] == i1 {
                    frac
                } else {
                    0.0
                };
                if weight == 0.0 {
                    *v = 0.0;
                    return;
                }
                let mut p = [0.0; MAX_DIM];
                p[0] = t_star;
                for (k, a) in axes.iter().enumerate().skip(1) {
                    p[a.coord] = a.center(idx[k]);
                }
                *v = weight * model.psi(&p[..dim]).norm_sqr();
            });
            g.normalise()?;
            Ok(g)
        }
    }
}

/// Evolve `grid` by `steps` steps of its own `dtau`, refreshing the drift when
/// it depends on lab time.
pub fn evolve(model: &WaveModel, geometry: &Geometry, grid: Grid, k: f64, steps: usize, eps: f64) -> Result<Grid, FpError> {
    let mut g = grid;
    let mut drift = DriftField::from_model(model, &g, lab_time(model, geometry, g.tau), eps)?;
    for _ in 0..steps {
        if !model.is_relativistic() {
            drift = DriftField::from_model(model, &g, lab_time(model, geometry, g.tau), eps)?;
        }
        g = fp_step(&g, &drift, k)?;
    }
    Ok(g)
}

/// Outcome of evolving `|ψ|²` under its own Fokker-Planck equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub points: usize,
    pub dtau: f64,
    pub steps: usize,
    pub diffusion: f64,
    /// L1 distance between the evolved grid and `|ψ|²` at the final time.
    pub l1_drift: f64,
    pub relative_mass_error: f64,
    pub min_value: f64,
}

/// Start at `|ψ|²`, run `steps` steps at the largest stable `dτ` (or `dtau`
/// when given) and measure the departure from `|ψ|²` at the final time.
pub fn stationarity_check(
    model: &WaveModel,
    geometry: &Geometry,
    points: usize,
    steps: usize,
    k: f64,
    dtau: Option<f64>,
    central_weight: f64,
) -> Result<StationarityReport, FpError> {
    stationarity_run(model, geometry, points, steps, k, dtau, central_weight).map(|r| r.0)
}

/// [`stationarity_check`] that also returns the evolved grid.
pub fn stationarity_run(
    model: &WaveModel,
    geometry: &Geometry,
    points: usize,
    steps: usize,
    k: f64,
    dtau: Option<f64>,
    central_weight: f64,
) -> Result<(StationarityReport, Grid), FpError> {
    let axes = grid_axes_for(model, geometry, points)?;
    let probe = Grid::zeros(axes.clone(), 1.0, central_weight)?;
    let drift = DriftField::from_model(model, &probe, lab_time(model, geometry, 0.0), NODE_EPS)?;
    let dt = dtau.unwrap_or_else(|| max_stable_dtau(&axes, &drift, k, central_weight));
    let start = equilibrium_grid(model, geometry, points, dt, central_weight)?;
    let m0 = start.mass();
    let end = evolve(model, geometry, start, k, steps, NODE_EPS)?;
    let reference = match lab_time(model, geometry, end.tau) {
        Some(t) => {
            let shifted = Geometry::new(
                geometry
                    .axes
                    .iter()
                    .enumerate()
                    .map(|(i, a)| if i == 0 { Axis::open(t, a.length) } else { *a })
                    .collect(),
            )
            .map_err(|e| FpError::GeometryMismatch(e.to_string()))?;
            equilibrium_grid(model, &shifted, points, dt, central_weight)?
        }
        None => equilibrium_grid(model, geometry, points, dt, central_weight)?,
    };
    let report = StationarityReport {
        points,
        dtau: dt,
        steps,
        diffusion: k,
        l1_drift: end.l1_to(&reference),
        relative_mass_error: (end.mass() - m0).abs() / m0,
        min_value: end.min_value(),
    };
    Ok((report, end))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSnapshot {
    pub step: usize,
    pub tau: f64,
    /// Ensemble histogram against grid marginal, per analysed axis.
    pub l1_per_axis: Vec<f64>,
    pub l1: f64,
    /// Grid marginal against `|ψ|²` marginal, worst axis.
    pub grid_vs_target_l1: f64,
    pub grid_marginals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpComparison {
    pub cells_per_bin: usize,
    pub grid_dtau: f64,
    pub substeps: usize,
    pub central_weight: f64,
    pub snapshots: Vec<ComparisonSnapshot>,
    pub ensemble: EnsembleReport,
}

impl FpComparison {
    pub fn max_l1(&self) -> f64 {
        self.snapshots.iter().map(|s| s.l1).fold(0.0, f64::max)
    }
}

/// Run the particle ensemble and the grid from the same initial law and
/// compare their marginals at every ensemble snapshot.
///
/// The grid uses `cells_per_bin` cells per histogram bin on every analysed
/// axis and enough substeps per ensemble step to satisfy its CFL limits.
pub fn fp_vs_ensemble(
    model: &WaveModel,
    geometry: &Geometry,
    cfg: &EnsembleConfig,
    cells_per_bin: usize,
    central_weight: f64,
) -> Result<FpComparison, FpError> {
    if cells_per_bin == 0 {
        return Err(FpError::BadGrid("cells_per_bin must be at least 1".into()));
    }
    let points = cfg.bins * cells_per_bin;
    let axes = grid_axes_for(model, geometry, points)?;
    let analysed = analysed_axes(geometry);
    let grid_coords: Vec<usize> = axes.iter().map(|a| a.coord).collect();
    if analysed != grid_coords {
        return Err(FpError::GeometryMismatch(format!(
            "ensemble histograms coordinates {analysed:?} but the grid covers {grid_coords:?}"
        )));
    }
    let k = cfg.step_config(model, geometry).diffusion;
    let probe = Grid::zeros(axes.clone(), 1.0, central_weight)?;
    let mut drift = DriftField::from_model(model, &probe, lab_time(model, geometry, 0.0), cfg.node_eps)?;
    // Schrödinger drifts change with lab time; keep a margin for that.
    let margin = if model.is_relativistic() { 1.0 } else { 0.8 };
    let limit = margin * max_stable_dtau(&axes, &drift, k, central_weight);
    let substeps = (cfg.dtau / limit).ceil().max(1.0) as usize;
    let grid_dtau = cfg.dtau / substeps as f64;

    let ensemble = run_ensemble(model, geometry, cfg)?;
    let mut grid = initial_grid(model, geometry, cfg.initial, points, grid_dtau, central_weight)?;
    let mut snapshots = Vec::with_capacity(ensemble.snapshots.len());
    let mut done = 0usize;
    for snap in &ensemble.snapshots {
        for _ in done * substeps..snap.step * substeps {
            if !model.is_relativistic() {
                drift = DriftField::from_model(model, &grid, lab_time(model, geometry, grid.tau), cfg.node_eps)?;
            }
            grid = fp_step(&grid, &drift, k)?;
        }
        done = snap.step;
        let marginals: Vec<Vec<f64>> = (0..grid.dim()).map(|a| grid.marginal(a, cells_per_bin)).collect();
        let l1_per_axis: Vec<f64> = marginals
            .iter()
            .zip(&snap.histograms)
            .map(|(m, h)| l1_distance(m, h))
            .collect();
        let targets = if model.is_relativistic() {
            snap.targets.clone()
        } else {
            marginal_targets(model, geometry, &analysed, cfg.bins, lab_time(model, geometry, grid.tau), false).density
        };
        let grid_vs_target_l1 = marginals
            .iter()
            .zip(&targets)
            .map(|(m, t)| l1_distance(m, t))
            .fold(0.0, f64::max);
        snapshots.push(ComparisonSnapshot {
            step: snap.step,
            tau: snap.tau,
            l1: l1_per_axis.iter().copied().fold(0.0, f64::max),
            l1_per_axis,
            grid_vs_target_l1,
            grid_marginals: marginals,
        });
    }
    Ok(FpComparison {
        cells_per_bin,
        grid_dtau,
        substeps,
        central_weight,
        snapshots,
        ensemble,
    })
}
