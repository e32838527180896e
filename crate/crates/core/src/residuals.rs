//! Field equations of the stochastic guidance theory as pointwise residuals.
//!
//! Every equation is written once in a form that covers both the relativistic
//! and the non-relativistic case through [`Contraction`]: index contractions
//! use `g^{μμ}` and lab-time derivatives enter with `time_weight`.
//!
//! Each residual tracks the magnitude of its largest constituent term so that
//! "zero" can be judged relative to the size of the quantities involved.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{
    derive_fields_guarded, quantum_potential_forms, rho_grad_q_decomposition, s_prime_gradient, s_prime_hessian,
    s_prime_third, Contraction, DerivedFields, FieldError, Vec4,
};
use crate::geometry::Geometry;
use crate::wavemodel::{FieldJet, WaveModel, MAX_DIM};

pub const DEFAULT_PROBE_SEED: u64 = 42;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResidualError {
    #[error("rest-frame clock needs an equal-energy Klein-Gordon model")]
    NotEqualEnergy,
    #[error("probe {index}: spatial phase gradient {magnitude:.3e} is nonzero, not a rest frame")]
    NotRestFrame { index: usize, magnitude: f64 },
    #[error("could not place {wanted} probes away from nodes after {tries} attempts")]
    ProbePlacement { wanted: usize, tries: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Running sum that remembers its largest summand.
#[derive(Debug, Default, Clone, Copy, PartialEq)]
pub struct Terms {
    pub sum: f64,
    pub scale: f64,
}

impl Terms {
    pub fn add(&mut self, x: f64) {
        self.sum += x;
        self.scale = self.scale.max(x.abs());
    }

    fn with(mut self, x: f64) -> Self {
        self.add(x);
        self
    }

    /// Combine two residuals, `self + sign * other`.
    pub fn combine(self, sign: f64, other: Terms) -> Terms {
        Terms {
            sum: self.sum + sign * other.sum,
            scale: self.scale.max(other.scale),
        }
    }
}

pub type Covector = [Terms; MAX_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub name: String,
    pub probe_count: usize,
    pub max_abs: f64,
    pub rms: f64,
    pub reference_scale: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Whether this check gates the overall verdict. Measured-only checks still
    /// carry a `pass` value for information.
    pub asserted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_index: Option<Vec<f64>>,
}

impl ResidualReport {
    /// Aggregate per-probe residual samples. Each sample is one scalar residual
    /// (or one component of a covector residual).
    pub fn from_samples(name: &str, probe_count: usize, samples: &[Terms], tolerance: f64, asserted: bool) -> Self {
        let mut max_abs: f64 = 0.0;
        let mut sq = 0.0;
        let mut scale: f64 = 0.0;
        for t in samples {
            max_abs = max_abs.max(t.sum.abs());
            sq += t.sum * t.sum;
            scale = scale.max(t.scale);
        }
        let rms = if samples.is_empty() {
            0.0
        } else {
            (sq / samples.len() as f64).sqrt()
        };
        Self {
            name: name.to_string(),
            probe_count,
            max_abs,
            rms,
            reference_scale: scale,
            tolerance,
            pass: max_abs <= tolerance * scale.max(1.0),
            asserted,
            per_index: None,
        }
    }

    pub fn with_per_index(mut self, per_index: Vec<f64>) -> Self {
        self.per_index = Some(per_index);
        self
    }

    /// Largest residual relative to the largest term, floored at one; the
    /// quantity compared against `tolerance`.
    pub fn relative(&self) -> f64 {
        self.max_abs / self.reference_scale.max(1.0)
    }

    /// True unless the check is asserted and failed.
    pub fn ok(&self) -> bool {
        self.pass || !self.asserted
    }
}

fn potential_term(f: &DerivedFields) -> f64 {
    if f.relativistic {
        -f.time_sign * (f.v0 + 0.5 * f.mass * f.c * f.c)
    } else {
        f.v0
    }
}

/// `θ ∂_0ρ + ∂_μ(ρ g^{μμ} ∂_μS)/m`
pub fn continuity_point(f: &DerivedFields) -> Terms {
    let g = &f.contraction;
    let mut t = Terms::default().with(g.time_weight * f.d_rho[0]);
    for mu in 0..g.dim {
        t.add(g.inv[mu] * f.d_rho[mu] * f.d_s[mu] / f.mass);
        t.add(g.inv[mu] * f.rho * f.d2_s[mu][mu] / f.mass);
    }
    t
}

/// `θ ∂_0S + (1/2m) g(∂S,∂S) + Q + potential`, with Q in its defining form.
pub fn hamilton_jacobi_point(f: &DerivedFields) -> Terms {
    let g = &f.contraction;
    let mut t = Terms::default().with(g.time_weight * f.d_s[0]);
    for mu in 0..g.dim {
        t.add(g.inv[mu] * f.d_s[mu] * f.d_s[mu] / (2.0 * f.mass));
    }
    t.add(quantum_potential_forms(f).definition);
    t.add(potential_term(f));
    t
}

/// Transformed Hamilton-Jacobi equation in terms of `S'`:
/// `θ ∂_0S' + (1/2m) g(∂S',∂S') + (ħ/2m) g□S' + 2Q + potential`.
pub fn transformed_hj_point(f: &DerivedFields) -> Terms {
    let g = &f.contraction;
    let sp = s_prime_gradient(f);
    let spp = s_prime_hessian(f);
    let mut t = Terms::default().with(g.time_weight * sp[0]);
    for mu in 0..g.dim {
        t.add(g.inv[mu] * sp[mu] * sp[mu] / (2.0 * f.mass));
        t.add(g.inv[mu] * f.hbar * spp[mu][mu] / (2.0 * f.mass));
    }
    t.add(2.0 * quantum_potential_forms(f).definition);
    t.add(potential_term(f));
    t
}

/// Rank-2 current divergence `C_ν = ∂_μ(ρ g^{μμ} ∂_μ∂_νS)`.
pub fn conservation_point(f: &DerivedFields) -> Covector {
    let g = &f.contraction;
    let mut out = [Terms::default(); MAX_DIM];
    for nu in g.free_indices() {
        for mu in 0..g.dim {
            out[nu].add(g.inv[mu] * f.d_rho[mu] * f.d2_s[mu][nu]);
            out[nu].add(g.inv[mu] * f.rho * f.d3_s[mu][mu][nu]);
        }
    }
    out
}

/// Lagrangian derivative `D f = θ ∂_0 f + g(∂S', ∂f)/m - (ħ/2m) g□f` given the
/// derivatives of `f`.
fn lagrangian(g: &Contraction, sp: &Vec4, hbar: f64, mass: f64, f1: &Vec4, f_box: f64) -> Terms {
    let mut t = Terms::default().with(g.time_weight * f1[0]);
    for mu in 0..g.dim {
        t.add(g.inv[mu] * sp[mu] * f1[mu] / mass);
    }
    t.add(-hbar / (2.0 * mass) * f_box);
    t
}

/// Momentum-density flux `ρ ∂_νS'`: first derivatives and contracted second derivatives.
fn momentum_density_derivs(f: &DerivedFields, nu: usize) -> (Vec4, f64) {
    let sp = s_prime_gradient(f);
    let spp = s_prime_hessian(f);
    let sppp = s_prime_third(f);
    let g = &f.contraction;
    let mut d1 = [0.0; MAX_DIM];
    let mut boxed = 0.0;
    for mu in 0..g.dim {
        d1[mu] = f.d_rho[mu] * sp[nu] + f.rho * spp[mu][nu];
        boxed += g.inv[mu] * (f.d2_rho[mu][mu] * sp[nu] + 2.0 * f.d_rho[mu] * spp[mu][nu] + f.rho * sppp[mu][mu][nu]);
    }
    (d1, boxed)
}

/// Transformed Cauchy-momentum equation, oriented as diffusion minus transport.
///
/// Returns `(exact, classical)`. The exact form keeps the `(ħ/m) C_ν` term and
/// holds for every solution. The classical form drops it and is evaluated
/// through the Lagrangian-derivative expansion
/// `-(D(ρ∂_νS') + ρ∂_νS' g□S'/m)`, an independent route to the same expression.
pub fn cauchy_point(f: &DerivedFields) -> (Covector, Covector) {
    let g = &f.contraction;
    let sp = s_prime_gradient(f);
    let spp = s_prime_hessian(f);
    let sppp = s_prime_third(f);
    let cons = conservation_point(f);
    let h = f.hbar;
    let m = f.mass;
    let box_sp = g.trace(&spp);
    let mut exact = [Terms::default(); MAX_DIM];
    let mut classical = [Terms::default(); MAX_DIM];
    for nu in g.free_indices() {
        let e = &mut exact[nu];
        for mu in 0..g.dim {
            let gi = g.inv[mu];
            e.add(h / (2.0 * m) * gi * f.d2_rho[mu][mu] * sp[nu]);
            e.add(h / m * gi * f.d_rho[mu] * spp[mu][nu]);
            e.add(h / (2.0 * m) * gi * f.rho * sppp[mu][mu][nu]);
            e.add(-gi * f.d_rho[mu] * sp[nu] * sp[mu] / m);
            e.add(-gi * f.rho * spp[mu][nu] * sp[mu] / m);
            e.add(-gi * f.rho * sp[nu] * spp[mu][mu] / m);
        }
        e.add(-g.time_weight * (f.d_rho[0] * sp[nu] + f.rho * spp[0][nu]));
        e.add(-h / m * cons[nu].sum);
        e.scale = e.scale.max(h / m * cons[nu].scale);

        let (d1, boxed) = momentum_density_derivs(f, nu);
        let d = lagrangian(g, &sp, h, m, &d1, boxed);
        let extra = f.rho * sp[nu] * box_sp / m;
        classical[nu] = Terms {
            sum: -(d.sum + extra),
            scale: d.scale.max(extra.abs()),
        };
    }
    (exact, classical)
}

/// The Lagrangian-derivative identities and the product-rule lemma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyPoint {
    /// `Dρ + ρ g□S'/m`
    pub density: Terms,
    /// `D(∂_νS') + 2∂_νQ + (ħ/m) g□∂_νS'`
    pub momentum: Covector,
    /// Itô product rule for `D(ρ∂_νS')` written out directly; an algebraic identity.
    pub product_rule: Covector,
    /// Product rule assembled from the three field equations. Equals `(ħ/m)C_ν`.
    pub assembled: Covector,
    /// `-2ρ∂_νQ - (ħ/m)ρ g□∂_νS' - (ħ/m) g(∂ρ, ∂∂_νS')`. Equals `-(ħ/m)C_ν`.
    pub lemma: Covector,
    pub conservation: Covector,
}

impl ConsistencyPoint {
    /// Assembled product rule with the conservation term removed.
    pub fn assembled_balance(&self, nu: usize, hbar_over_m: f64) -> Terms {
        self.assembled[nu].combine(-hbar_over_m, self.conservation[nu])
    }

    /// Lemma with the conservation term restored.
    pub fn lemma_balance(&self, nu: usize, hbar_over_m: f64) -> Terms {
        self.lemma[nu].combine(hbar_over_m, self.conservation[nu])
    }
}

pub fn consistency_point(f: &DerivedFields) -> ConsistencyPoint {
    let g = &f.contraction;
    let h = f.hbar;
    let m = f.mass;
    let sp = s_prime_gradient(f);
    let spp = s_prime_hessian(f);
    let sppp = s_prime_third(f);
    let box_sp = g.trace(&spp);
    let box_dsp = g.trace3(&sppp);

    let d_rho = lagrangian(g, &sp, h, m, &f.d_rho, g.trace(&f.d2_rho));
    let density = d_rho.with(f.rho * box_sp / m);
    // Field-equation values of Dρ, D∂_νS', D(ρ∂_νS').
    let e7 = -f.rho * box_sp / m;

    let mut momentum = [Terms::default(); MAX_DIM];
    let mut product_rule = [Terms::default(); MAX_DIM];
    let mut assembled = [Terms::default(); MAX_DIM];
    let mut lemma = [Terms::default(); MAX_DIM];
    for nu in g.free_indices() {
        let mut spn1 = [0.0; MAX_DIM];
        for mu in 0..g.dim {
            spn1[mu] = spp[mu][nu];
        }
        let d_spn = lagrangian(g, &sp, h, m, &spn1, box_dsp[nu]);
        momentum[nu] = d_spn.with(2.0 * f.d_q[nu]).with(h / m * box_dsp[nu]);

        let cross: f64 = (0..g.dim).map(|mu| g.inv[mu] * f.d_rho[mu] * spp[mu][nu]).sum();
        let (d1, boxed) = momentum_density_derivs(f, nu);
        let d_prod = lagrangian(g, &sp, h, m, &d1, boxed);
        let mut pr = d_prod;
        pr.add(-f.rho * d_spn.sum);
        pr.add(-sp[nu] * d_rho.sum);
        pr.add(h / m * cross);
        pr.scale = pr.scale.max(f.rho * d_spn.scale).max(sp[nu].abs() * d_rho.scale);
        product_rule[nu] = pr;

        let e8 = -2.0 * f.d_q[nu] - h / m * box_dsp[nu];
        let e9 = -f.rho * sp[nu] * box_sp / m;
        assembled[nu] = Terms::default()
            .with(e9)
            .with(-f.rho * e8)
            .with(-sp[nu] * e7)
            .with(h / m * cross);

        lemma[nu] = Terms::default()
            .with(-2.0 * f.rho * f.d_q[nu])
            .with(-h / m * f.rho * box_dsp[nu])
            .with(-h / m * cross);
    }
    ConsistencyPoint {
        density,
        momentum,
        product_rule,
        assembled,
        lemma,
        conservation: conservation_point(f),
    }
}

/// Probe points drawn uniformly from a box, skipping points near nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSet {
    pub points: Vec<[f64; MAX_DIM]>,
    pub dim: usize,
}

impl ProbeSet {
    pub fn uniform(model: &WaveModel, geometry: &Geometry, count: usize, seed: u64, min_abs_psi: f64) -> Result<Self, ResidualError> {
        let dim = model.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        let max_tries = 1000 * count.max(1);
        let mut tries = 0;
        while points.len() < count {
            tries += 1;
            if tries > max_tries {
                return Err(ResidualError::ProbePlacement { wanted: count, tries });
            }
            let p = geometry.uniform_point(&mut rng);
            if model.psi(&p[..dim]).norm() >= min_abs_psi {
                points.push(p);
            }
        }
        Ok(Self { points, dim })
    }

    pub fn single(point: &[f64]) -> Self {
        let mut p = [0.0; MAX_DIM];
        p[..point.len()].copy_from_slice(point);
        Self {
            points: vec![p],
            dim: point.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn fields(&self, model: &WaveModel, eps: f64) -> Result<Vec<DerivedFields>, FieldError> {
        self.points
            .par_iter()
            .map(|p| derive_fields_guarded(&model.evaluate_jet(&p[..self.dim], 3), model.metric(), model.v0(), eps))
            .collect()
    }
}

fn scalar_report<F>(name: &str, fields: &[DerivedFields], tol: f64, asserted: bool, eval: F) -> ResidualReport
where
    F: Fn(&DerivedFields) -> Terms + Sync + Send,
{
    let samples: Vec<Terms> = fields.par_iter().map(eval).collect();
    ResidualReport::from_samples(name, fields.len(), &samples, tol, asserted)
}

fn covector_report<F>(name: &str, fields: &[DerivedFields], tol: f64, asserted: bool, eval: F) -> ResidualReport
where
    F: Fn(&DerivedFields) -> Covector + Sync + Send,
{
    let Some(first) = fields.first() else {
        return ResidualReport::from_samples(name, 0, &[], tol, asserted);
    };
    let idx: Vec<usize> = first.contraction.free_indices().collect();
    let per_point: Vec<Covector> = fields.par_iter().map(eval).collect();
    let mut samples = Vec::with_capacity(per_point.len() * idx.len());
    let mut per_index = vec![0.0f64; MAX_DIM];
    for cv in &per_point {
        for &nu in &idx {
            samples.push(cv[nu]);
            per_index[nu] = per_index[nu].max(cv[nu].sum.abs());
        }
    }
    per_index.truncate(first.contraction.dim);
    ResidualReport::from_samples(name, fields.len(), &samples, tol, asserted).with_per_index(per_index)
}

pub fn polar_system_residuals(fields: &[DerivedFields], tol: f64) -> [ResidualReport; 2] {
    [
        scalar_report("polar_continuity", fields, tol, true, continuity_point),
        scalar_report("polar_hamilton_jacobi", fields, tol, true, hamilton_jacobi_point),
    ]
}

/// Deviation of each alternative quantum-potential form from the definition.
pub fn quantum_potential_reports(fields: &[DerivedFields], tol: f64) -> [ResidualReport; 3] {
    let diff = |sel: fn(&crate::fields::QuantumPotentialForms) -> f64| {
        move |f: &DerivedFields| {
            let q = quantum_potential_forms(f);
            let alt = sel(&q);
            Terms {
                sum: alt - q.definition,
                scale: alt.abs().max(q.definition.abs()),
            }
        }
    };
    [
        scalar_report("qp_gradient_form", fields, tol, true, diff(|q| q.gradient_form)),
        scalar_report("qp_log_form", fields, tol, true, diff(|q| q.log_form)),
        scalar_report("qp_mean_form", fields, tol, true, diff(|q| q.mean_form)),
    ]
}

pub fn decomposition_report(fields: &[DerivedFields], tol: f64) -> ResidualReport {
    covector_report("qp_gradient_decomposition", fields, tol, true, |f| {
        let mut out = [Terms::default(); MAX_DIM];
        if let Ok((lhs, rhs)) = rho_grad_q_decomposition(f) {
            for nu in 0..f.contraction.dim {
                out[nu] = Terms {
                    sum: lhs[nu] - rhs[nu],
                    scale: lhs[nu].abs().max(rhs[nu].abs()),
                };
            }
        }
        out
    })
}

pub fn conservation_condition_residual(fields: &[DerivedFields], tol: f64, asserted: bool) -> ResidualReport {
    covector_report("conservation_condition", fields, tol, asserted, conservation_point)
}

/// `(exact, classical)` Cauchy-momentum reports. The classical form is asserted
/// only when the conservation condition is expected to hold.
pub fn transformed_cauchy_residuals(fields: &[DerivedFields], tol: f64, classical_asserted: bool) -> [ResidualReport; 2] {
    [
        covector_report("cauchy_exact", fields, tol, true, |f| cauchy_point(f).0),
        covector_report("cauchy_classical", fields, tol, classical_asserted, |f| cauchy_point(f).1),
    ]
}

/// `classical - exact - (ħ/m) C_ν`, pointwise.
pub fn cauchy_bookkeeping_report(fields: &[DerivedFields], tol: f64) -> ResidualReport {
    covector_report("cauchy_bookkeeping", fields, tol, true, |f| {
        let (exact, classical) = cauchy_point(f);
        let cons = conservation_point(f);
        let hm = f.hbar / f.mass;
        let mut out = [Terms::default(); MAX_DIM];
        for nu in f.contraction.free_indices() {
            out[nu] = classical[nu].combine(-1.0, exact[nu]).combine(-hm, cons[nu]);
        }
        out
    })
}

pub fn transformed_qhj_residual(fields: &[DerivedFields], tol: f64) -> ResidualReport {
    scalar_report("transformed_hamilton_jacobi", fields, tol, true, transformed_hj_point)
}

/// Lagrangian-derivative field equations, the product rule and the lemma.
///
/// The raw assembled product rule and raw lemma are asserted only when the
/// conservation condition holds; their balance forms, which restore the
/// conservation term, are asserted always.
pub fn consistency_identity_residuals(fields: &[DerivedFields], tol: f64, conservation_holds: bool) -> Vec<ResidualReport> {
    let pts: Vec<(ConsistencyPoint, f64)> = fields
        .par_iter()
        .map(|f| (consistency_point(f), f.hbar / f.mass))
        .collect();
    let n = fields.len();
    let idx: Vec<usize> = fields
        .first()
        .map(|f| f.contraction.free_indices().collect())
        .unwrap_or_default();
    let gather = |sel: &dyn Fn(&ConsistencyPoint, usize, f64) -> Terms| -> Vec<Terms> {
        pts.iter()
            .flat_map(|(p, hm)| idx.iter().map(move |&nu| sel(p, nu, *hm)))
            .collect()
    };
    let density: Vec<Terms> = pts.iter().map(|(p, _)| p.density).collect();
    vec![
        ResidualReport::from_samples("lagrangian_density", n, &density, tol, true),
        ResidualReport::from_samples("lagrangian_momentum", n, &gather(&|p, nu, _| p.momentum[nu]), tol, true),
        ResidualReport::from_samples("product_rule_direct", n, &gather(&|p, nu, _| p.product_rule[nu]), tol, true),
        ResidualReport::from_samples(
            "product_rule_assembled",
            n,
            &gather(&|p, nu, _| p.assembled[nu]),
            tol,
            conservation_holds,
        ),
        ResidualReport::from_samples(
            "product_rule_balance",
            n,
            &gather(&|p, nu, hm| p.assembled_balance(nu, hm)),
            tol,
            true,
        ),
        ResidualReport::from_samples("lemma_raw", n, &gather(&|p, nu, _| p.lemma[nu]), tol, conservation_holds),
        ResidualReport::from_samples("lemma_balance", n, &gather(&|p, nu, hm| p.lemma_balance(nu, hm)), tol, true),
    ]
}

/// Clock rate `|∂_0S|/m` against `c √(1 + 2(V₀+α)/(mc²))`, with
/// `α = -(ħ²/2m) ∇²√ρ/√ρ` the spatial quantum-potential contribution.
pub fn rest_frame_clock_check(model: &WaveModel, probes: &ProbeSet, tol: f64) -> Result<ResidualReport, ResidualError> {
    if !model.is_equal_energy() {
        return Err(ResidualError::NotEqualEnergy);
    }
    let fields = probes.fields(model, crate::fields::NODE_EPS)?;
    let mut samples = Vec::with_capacity(fields.len());
    for (index, f) in fields.iter().enumerate() {
        let spatial: f64 = (1..f.contraction.dim).map(|j| f.d_s[j] * f.d_s[j]).sum::<f64>().sqrt();
        if spatial > 1e-9 * f.d_s[0].abs().max(1.0) {
            return Err(ResidualError::NotRestFrame { index, magnitude: spatial });
        }
        samples.push(clock_point(f));
    }
    Ok(ResidualReport::from_samples("rest_frame_clock", fields.len(), &samples, tol, true))
}

/// Spatial quantum-potential contribution `α` at a point.
pub fn spatial_alpha(f: &DerivedFields) -> f64 {
    let rho = f.rho;
    let lap: f64 = (1..f.contraction.dim)
        .map(|j| f.d2_rho[j][j] / (2.0 * rho) - f.d_rho[j] * f.d_rho[j] / (4.0 * rho * rho))
        .sum();
    -f.hbar * f.hbar / (2.0 * f.mass) * lap
}

fn clock_point(f: &DerivedFields) -> Terms {
    let rate = f.d_s[0].abs() / f.mass;
    let mc2 = f.mass * f.c * f.c;
    let predicted = f.c * (1.0 + 2.0 * (f.v0 + spatial_alpha(f)) / mc2).sqrt();
    Terms {
        sum: rate - predicted,
        scale: rate.max(predicted),
    }
}

/// ψ jet built only from evaluations of ψ, by nested central differences.
///
/// Derivatives of order `n` use step `h·[1, 10, 50][n-1]` at every nesting
/// level, balancing truncation against round-off at each order.
pub fn fd_oracle_jet(model: &WaveModel, point: &[f64], h: f64, order: usize) -> FieldJet {
    let order = order.min(3);
    let dim = point.len();
    let mut jet = FieldJet::zero(point, order);
    jet.psi = model.psi(point);
    let steps = [h, 10.0 * h, 50.0 * h];
    let mut buf = [0.0; MAX_DIM];
    buf[..dim].copy_from_slice(point);
    for a in 0..dim {
        if order >= 1 {
            jet.d1[a] = nested_diff(model, &mut buf, dim, &[a], steps[0]);
        }
        for b in a..dim {
            if order >= 2 {
                jet.d2[a][b] = nested_diff(model, &mut buf, dim, &[a, b], steps[1]);
            }
            for c in b..dim {
                if order >= 3 {
                    jet.d3[a][b][c] = nested_diff(model, &mut buf, dim, &[a, b, c], steps[2]);
                }
            }
        }
    }
    crate::wavemodel::symmetrize(&mut jet);
    jet
}

fn nested_diff(model: &WaveModel, x: &mut [f64; MAX_DIM], dim: usize, idx: &[usize], h: f64) -> num_complex::Complex64 {
    match idx.split_first() {
        None => model.psi(&x[..dim]),
        Some((&a, rest)) => {
            let x0 = x[a];
            x[a] = x0 + h;
            let plus = nested_diff(model, x, dim, rest, h);
            x[a] = x0 - h;
            let minus = nested_diff(model, x, dim, rest, h);
            x[a] = x0;
            (plus - minus) / (2.0 * h)
        }
    }
}

/// Options for the full identity suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub tolerance: f64,
    /// Tolerance for the classical-minus-exact bookkeeping check.
    pub bookkeeping_tolerance: f64,
    /// Whether the conservation condition is expected to vanish for this model.
    pub conservation_holds: bool,
    /// Tolerance used when asserting the conservation condition.
    pub conservation_tolerance: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            bookkeeping_tolerance: 1e-9,
            conservation_holds: false,
            conservation_tolerance: 1e-10,
        }
    }
}

/// Every field identity evaluated on one probe set.
pub fn run_identity_suite(fields: &[DerivedFields], opts: &SuiteOptions) -> Vec<ResidualReport> {
    let tol = opts.tolerance;
    let mut out = Vec::new();
    out.extend(polar_system_residuals(fields, tol));
    out.extend(quantum_potential_reports(fields, tol));
    out.push(decomposition_report(fields, tol));
    out.extend(transformed_cauchy_residuals(fields, tol, opts.conservation_holds));
    out.push(cauchy_bookkeeping_report(fields, opts.bookkeeping_tolerance));
    out.push(transformed_qhj_residual(fields, tol));
    out.extend(consistency_identity_residuals(fields, tol, opts.conservation_holds));
    out.push(conservation_condition_residual(
        fields,
        opts.conservation_tolerance,
        opts.conservation_holds,
    ));
    out
}

/// Largest component of `C_ν` at a single point over the free indices.
pub fn conservation_magnitude(f: &DerivedFields) -> f64 {
    let c = conservation_point(f);
    f.contraction
        .free_indices()
        .map(|nu| c[nu].sum.abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::derive_fields;
    use crate::wavemodel::Metric;
    use num_complex::Complex64;

    #[test]
    fn report_pass_rule() {
        let s = [Terms { sum: 2e-8, scale: 10.0 }, Terms { sum: -1e-9, scale: 1.0 }];
        let r = ResidualReport::from_samples("x", 2, &s, 1e-8, true);
        assert_eq!(r.max_abs, 2e-8);
        assert!(r.rms <= r.max_abs);
        assert!(r.pass);
        let r = ResidualReport::from_samples("x", 2, &s, 1e-9, true);
        assert!(!r.pass);
        assert!(!r.ok());
    }

    #[test]
    fn single_mode_everything_vanishes() {
        let m = WaveModel::build_equal_energy_kg_set(
            Metric::relativistic(1),
            2f64.sqrt(),
            &[vec![1.0]],
            &[Complex64::new(1.0, 0.0)],
            0.0,
        )
        .unwrap();
        let f = derive_fields(&m.evaluate_jet(&[0.2, 0.3], 3), m.metric(), 0.0).unwrap();
        assert!(continuity_point(&f).sum.abs() < 1e-12);
        assert!(hamilton_jacobi_point(&f).sum.abs() < 1e-12);
        assert!(transformed_hj_point(&f).sum.abs() < 1e-12);
        let (e, c) = cauchy_point(&f);
        for nu in 0..2 {
            assert!(e[nu].sum.abs() < 1e-12);
            assert!(c[nu].sum.abs() < 1e-12);
        }
    }

    #[test]
    fn order_zero_oracle_is_exact() {
        let m = WaveModel::build_schrodinger_set(&[vec![1.0], vec![2.0]], &[Complex64::new(0.8, 0.0), Complex64::new(0.5, 0.0)], 0.0).unwrap();
        let p = [0.2, 0.3];
        assert_eq!(fd_oracle_jet(&m, &p, 1e-5, 0).psi, m.evaluate_jet(&p, 0).psi);
    }
}
