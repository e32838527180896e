//! Polar decomposition of a field jet: density, phase gradients, quantum potential
//! and the transformed (osmotic plus current) drift.
//!
//! All quantities come from the complex logarithmic derivative `L = log ψ`:
//! `∂ log ρ = 2 Re ∂L` and `∂S = ħ Im ∂L`. Derivatives of ρ itself are built
//! separately with the product rule on `ψ* ψ`, so the two routes can be
//! compared against each other by the residual checks.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wavemodel::{FieldJet, Metric, MAX_DIM};

/// Default node guard on `|ψ|`.
pub const NODE_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("|psi| = {abs_psi:.3e} is below the node guard {eps:.1e}")]
    NodeTooClose { abs_psi: f64, eps: f64 },
    #[error("jet of order {have} supplied, order {need} required")]
    InsufficientOrder { have: usize, need: usize },
}

pub type Vec4 = [f64; MAX_DIM];
pub type Mat4 = [[f64; MAX_DIM]; MAX_DIM];
pub type Ten4 = [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM];

/// Diagonal inverse metric used in index contractions, plus the weight of an
/// explicit `∂_0` term.
///
/// Relativistic models contract every index with `η^{μμ}` and have no separate
/// time term. Non-relativistic models contract only spatial indices and carry
/// the lab-time derivative explicitly, which lets one formula serve both cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub dim: usize,
    pub inv: Vec4,
    pub time_weight: f64,
}

impl Contraction {
    pub fn from_metric(metric: &Metric, dim: usize) -> Self {
        let mut inv = [0.0; MAX_DIM];
        match &metric.signature {
            Some(sig) => {
                for (mu, &s) in sig.iter().enumerate().take(dim) {
                    inv[mu] = f64::from(s);
                }
                Self { dim, inv, time_weight: 0.0 }
            }
            None => {
                for g in inv.iter_mut().take(dim).skip(1) {
                    *g = 1.0;
                }
                Self { dim, inv, time_weight: 1.0 }
            }
        }
    }

    /// `g^{μμ} a_μ b_μ`
    pub fn dot(&self, a: &Vec4, b: &Vec4) -> f64 {
        (0..self.dim).map(|mu| self.inv[mu] * a[mu] * b[mu]).sum()
    }

    /// `g^{μμ} m_μμ`
    pub fn trace(&self, m: &Mat4) -> f64 {
        (0..self.dim).map(|mu| self.inv[mu] * m[mu][mu]).sum()
    }

    /// `g^{μμ} t_μμν` for each ν.
    pub fn trace3(&self, t: &Ten4) -> Vec4 {
        let mut out = [0.0; MAX_DIM];
        for (nu, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = (0..self.dim).map(|mu| self.inv[mu] * t[mu][mu][nu]).sum();
        }
        out
    }

    /// Raise a covector.
    pub fn raise(&self, a: &Vec4) -> Vec4 {
        let mut out = [0.0; MAX_DIM];
        for mu in 0..self.dim {
            out[mu] = self.inv[mu] * a[mu];
        }
        out
    }

    /// Indices on which field equations with a free index ν are imposed.
    pub fn free_indices(&self) -> std::ops::Range<usize> {
        if self.time_weight == 0.0 {
            0..self.dim
        } else {
            1..self.dim
        }
    }
}

/// Everything the identities and integrators need at a single point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedFields {
    pub point: Vec4,
    pub order: usize,
    pub hbar: f64,
    pub mass: f64,
    pub c: f64,
    pub v0: f64,
    pub time_sign: f64,
    pub relativistic: bool,
    pub contraction: Contraction,
    pub abs_psi: f64,
    pub rho: f64,
    pub d_rho: Vec4,
    pub d2_rho: Mat4,
    pub d3_rho: Ten4,
    pub d_s: Vec4,
    pub d2_s: Mat4,
    pub d3_s: Ten4,
    pub d_log_rho: Vec4,
    pub d2_log_rho: Mat4,
    pub d3_log_rho: Ten4,
    /// Quantum potential (log-density form); zero if the jet order is below 2.
    pub q_value: f64,
    /// `∂_ν Q`; zero if the jet order is below 3.
    pub d_q: Vec4,
    /// `g^{μμ} ∂_μ S' / m`.
    pub drift_prime: Vec4,
}

/// Three equivalent quantum-potential expressions plus the defining one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumPotentialForms {
    /// `-(ħ²/2m) □√ρ / √ρ` from ρ derivatives.
    pub definition: f64,
    /// `(ħ²/8m) (∂ log ρ)² - (ħ²/4m) □ρ / ρ`
    pub gradient_form: f64,
    /// `-(ħ²/8m) (∂ log ρ)² - (ħ²/4m) □ log ρ`
    pub log_form: f64,
    /// `-(ħ²/8m) □ log ρ - (ħ²/8m) □ρ / ρ`
    pub mean_form: f64,
}

impl QuantumPotentialForms {
    pub fn max_deviation(&self) -> f64 {
        [self.gradient_form, self.log_form, self.mean_form]
            .iter()
            .map(|f| (f - self.definition).abs())
            .fold(0.0, f64::max)
    }
}

pub fn derive_fields(jet: &FieldJet, metric: &Metric, v0: f64) -> Result<DerivedFields, FieldError> {
    derive_fields_guarded(jet, metric, v0, NODE_EPS)
}

pub fn derive_fields_guarded(jet: &FieldJet, metric: &Metric, v0: f64, eps: f64) -> Result<DerivedFields, FieldError> {
    let abs_psi = jet.psi.norm();
    if !(abs_psi >= eps) {
        return Err(FieldError::NodeTooClose { abs_psi, eps });
    }
    let dim = jet.dim;
    let order = jet.order;
    let hbar = metric.hbar;
    let mass = metric.mass;
    let contraction = Contraction::from_metric(metric, dim);
    let psi = jet.psi;
    let inv_psi = psi.inv();
    let z = Complex64::new(0.0, 0.0);

    // Log derivatives L_a, L_ab, L_abc of log ψ.
    let mut l1 = [z; MAX_DIM];
    let mut l2 = [[z; MAX_DIM]; MAX_DIM];
    let mut l3 = [[[z; MAX_DIM]; MAX_DIM]; MAX_DIM];
    if order >= 1 {
        for a in 0..dim {
            l1[a] = jet.d1[a] * inv_psi;
        }
    }
    if order >= 2 {
        for a in 0..dim {
            for b in a..dim {
                let v = jet.d2[a][b] * inv_psi - l1[a] * l1[b];
                l2[a][b] = v;
                l2[b][a] = v;
            }
        }
    }
    if order >= 3 {
        for a in 0..dim {
            for b in a..dim {
                for c in b..dim {
                    let v = jet.d3[a][b][c] * inv_psi
                        - (l2[a][b] * l1[c] + l2[a][c] * l1[b] + l2[b][c] * l1[a])
                        - l1[a] * l1[b] * l1[c];
                    for &(i, j, k) in &perms(a, b, c) {
                        l3[i][j][k] = v;
                    }
                }
            }
        }
    }

    let mut f = DerivedFields {
        point: jet.point,
        order,
        hbar,
        mass,
        c: metric.c,
        v0,
        time_sign: metric.time_sign(),
        relativistic: metric.is_relativistic(),
        contraction,
        abs_psi,
        rho: psi.norm_sqr(),
        d_rho: [0.0; MAX_DIM],
        d2_rho: [[0.0; MAX_DIM]; MAX_DIM],
        d3_rho: [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM],
        d_s: [0.0; MAX_DIM],
        d2_s: [[0.0; MAX_DIM]; MAX_DIM],
        d3_s: [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM],
        d_log_rho: [0.0; MAX_DIM],
        d2_log_rho: [[0.0; MAX_DIM]; MAX_DIM],
        d3_log_rho: [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM],
        q_value: 0.0,
        d_q: [0.0; MAX_DIM],
        drift_prime: [0.0; MAX_DIM],
    };

    let pc = psi.conj();
    if order >= 1 {
        for a in 0..dim {
            f.d_log_rho[a] = 2.0 * l1[a].re;
            f.d_s[a] = hbar * l1[a].im;
            f.d_rho[a] = 2.0 * (pc * jet.d1[a]).re;
        }
    }
    if order >= 2 {
        for a in 0..dim {
            for b in 0..dim {
                f.d2_log_rho[a][b] = 2.0 * l2[a][b].re;
                f.d2_s[a][b] = hbar * l2[a][b].im;
                f.d2_rho[a][b] = 2.0 * (pc * jet.d2[a][b] + jet.d1[a].conj() * jet.d1[b]).re;
            }
        }
    }
    if order >= 3 {
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    f.d3_log_rho[a][b][c] = 2.0 * l3[a][b][c].re;
                    f.d3_s[a][b][c] = hbar * l3[a][b][c].im;
                    f.d3_rho[a][b][c] = 2.0
                        * (pc * jet.d3[a][b][c]
                            + jet.d1[a].conj() * jet.d2[b][c]
                            + jet.d1[b].conj() * jet.d2[a][c]
                            + jet.d1[c].conj() * jet.d2[a][b])
                            .re;
                }
            }
        }
    }

    let g = contraction;
    let k2 = hbar * hbar / mass;
    if order >= 2 {
        f.q_value = -k2 / 8.0 * g.dot(&f.d_log_rho, &f.d_log_rho) - k2 / 4.0 * g.trace(&f.d2_log_rho);
    }
    if order >= 3 {
        let box_l = g.trace3(&f.d3_log_rho);
        for nu in 0..dim {
            let mut grad_sq = 0.0;
            for mu in 0..dim {
                grad_sq += g.inv[mu] * f.d_log_rho[mu] * f.d2_log_rho[mu][nu];
            }
            f.d_q[nu] = -k2 / 4.0 * grad_sq - k2 / 4.0 * box_l[nu];
        }
    }
    let sp = s_prime_gradient(&f);
    f.drift_prime = g.raise(&sp);
    for v in f.drift_prime.iter_mut() {
        *v /= mass;
    }
    Ok(f)
}

fn perms(a: usize, b: usize, c: usize) -> [(usize, usize, usize); 6] {
    [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
}

/// `∂_μ S' = ∂_μ S + (ħ/2) ∂_μ log ρ`
pub fn s_prime_gradient(f: &DerivedFields) -> Vec4 {
    let mut out = [0.0; MAX_DIM];
    for mu in 0..f.contraction.dim {
        out[mu] = f.d_s[mu] + 0.5 * f.hbar * f.d_log_rho[mu];
    }
    out
}

pub fn s_prime_hessian(f: &DerivedFields) -> Mat4 {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    let d = f.contraction.dim;
    for a in 0..d {
        for b in 0..d {
            out[a][b] = f.d2_s[a][b] + 0.5 * f.hbar * f.d2_log_rho[a][b];
        }
    }
    out
}

pub fn s_prime_third(f: &DerivedFields) -> Ten4 {
    let mut out = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
    let d = f.contraction.dim;
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                out[a][b][c] = f.d3_s[a][b][c] + 0.5 * f.hbar * f.d3_log_rho[a][b][c];
            }
        }
    }
    out
}

/// Quantum potential computed four ways. Requires a second-order jet.
pub fn quantum_potential_forms(f: &DerivedFields) -> QuantumPotentialForms {
    let g = &f.contraction;
    let k2 = f.hbar * f.hbar / f.mass;
    let rho = f.rho;
    // □√ρ / √ρ via the chain rule on √ρ.
    let mut box_sqrt = 0.0;
    for mu in 0..g.dim {
        box_sqrt += g.inv[mu] * (f.d2_rho[mu][mu] / (2.0 * rho) - f.d_rho[mu] * f.d_rho[mu] / (4.0 * rho * rho));
    }
    let grad_l2 = g.dot(&f.d_log_rho, &f.d_log_rho);
    let box_rho = g.trace(&f.d2_rho) / rho;
    let box_l = g.trace(&f.d2_log_rho);
    QuantumPotentialForms {
        definition: -0.5 * k2 * box_sqrt,
        gradient_form: k2 / 8.0 * grad_l2 - k2 / 4.0 * box_rho,
        log_form: -k2 / 8.0 * grad_l2 - k2 / 4.0 * box_l,
        mean_form: -k2 / 8.0 * box_l - k2 / 8.0 * box_rho,
    }
}

/// `ρ ∂_ν Q` and its two-term decomposition
/// `-(ħ²/4m) □∂_νρ + (ħ²/4m) ∂_μ(ρ ∂_ν log ρ g^{μμ} ∂_μ log ρ)`.
pub fn rho_grad_q_decomposition(f: &DerivedFields) -> Result<(Vec4, Vec4), FieldError> {
    if f.order < 3 {
        return Err(FieldError::InsufficientOrder { have: f.order, need: 3 });
    }
    let g = &f.contraction;
    let k2 = f.hbar * f.hbar / f.mass;
    let l = &f.d_log_rho;
    let ll = &f.d2_log_rho;
    let box_drho = g.trace3(&f.d3_rho);
    let mut lhs = [0.0; MAX_DIM];
    let mut rhs = [0.0; MAX_DIM];
    for nu in 0..g.dim {
        lhs[nu] = f.rho * f.d_q[nu];
        let mut flux_div = 0.0;
        for mu in 0..g.dim {
            flux_div += g.inv[mu]
                * (f.d_rho[mu] * l[nu] * l[mu] + f.rho * ll[mu][nu] * l[mu] + f.rho * l[nu] * ll[mu][mu]);
        }
        rhs[nu] = -k2 / 4.0 * box_drho[nu] + k2 / 4.0 * flux_div;
    }
    Ok((lhs, rhs))
}

/// Transformed drift `∂^μS'/m` and its divergence `∂_μ∂^μS'/m`.
pub fn stochastic_drift(f: &DerivedFields) -> (Vec4, f64) {
    let div = f.contraction.trace(&s_prime_hessian(f)) / f.mass;
    (f.drift_prime, div)
}
