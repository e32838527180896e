//! Exact plane-wave solutions of the Klein-Gordon and Schrödinger equations.
//!
//! A model is a finite superposition `ψ = Σ a_n exp(i p_n·x)` where `p_n` is the
//! phase covector of mode `n` and the dot is a plain Euclidean sum over the
//! coordinates. For relativistic models `p_n = -k_{nμ}` (the wavevector with its
//! index lowered by the active metric); for Schrödinger models `p_n = (-ω_n, k⃗_n)`.
//! Coordinate 0 is always the time-like one: `x⁰ = ct` for Klein-Gordon models and
//! the lab time `t` for Schrödinger models.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported number of coordinates (time plus up to three spatial axes).
pub const MAX_DIM: usize = 4;

/// Tolerance on the stored dispersion relation.
pub const ON_SHELL_TOL: f64 = 1e-12;

/// Tolerance used when checking user-supplied spatial wavevectors against a shared energy.
pub const SHARED_ENERGY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("mode set is empty")]
    EmptyModeSet,
    #[error("modes[{index}] is off-shell (dispersion residual {residual:.3e})")]
    OffShell { index: usize, residual: f64 },
    #[error("{what}: expected {expected} entries, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("operation requires a Klein-Gordon model")]
    NotRelativistic,
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
    #[error("boost axis {axis} is not a spatial axis of a {dim}-coordinate model")]
    BadAxis { axis: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    KleinGordon,
    Schrodinger,
}

/// Metric signature plus physical constants.
///
/// `signature` is `None` for non-relativistic models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub signature: Option<Vec<i8>>,
    pub c: f64,
    pub mass: f64,
    pub hbar: f64,
}

impl Metric {
    /// Mostly-minus signature `(+,-,...,-)` with `spatial_dims` spatial axes, natural units.
    pub fn relativistic(spatial_dims: usize) -> Self {
        let mut sig = vec![-1i8; spatial_dims + 1];
        sig[0] = 1;
        Self {
            signature: Some(sig),
            c: 1.0,
            mass: 1.0,
            hbar: 1.0,
        }
    }

    pub fn with_signature(signature: &[i8]) -> Result<Self, ModelError> {
        let m = Self {
            signature: Some(signature.to_vec()),
            c: 1.0,
            mass: 1.0,
            hbar: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn non_relativistic() -> Self {
        Self {
            signature: None,
            c: 1.0,
            mass: 1.0,
            hbar: 1.0,
        }
    }

    pub fn with_constants(mut self, c: f64, mass: f64, hbar: f64) -> Result<Self, ModelError> {
        self.c = c;
        self.mass = mass;
        self.hbar = hbar;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("c", self.c), ("mass", self.mass), ("hbar", self.hbar)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidMetric(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(sig) = &self.signature {
            if sig.len() < 2 || sig.len() > MAX_DIM {
                return Err(ModelError::InvalidMetric(format!(
                    "signature needs 2..={MAX_DIM} entries, got {}",
                    sig.len()
                )));
            }
            if sig.iter().any(|&s| s != 1 && s != -1) {
                return Err(ModelError::InvalidMetric("signature entries must be +1 or -1".into()));
            }
            // Coordinate 0 is the time axis; it must be the single odd one out.
            if sig[1..].iter().any(|&s| s == sig[0]) {
                return Err(ModelError::InvalidMetric(
                    "exactly one time-like entry (index 0) is required".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn is_relativistic(&self) -> bool {
        self.signature.is_some()
    }

    /// `η_00`, or `+1` for non-relativistic models.
    pub fn time_sign(&self) -> f64 {
        self.signature.as_ref().map_or(1.0, |s| f64::from(s[0]))
    }

    /// Squared mass scale in wavevector units, `(mc/ħ)² + 2mV₀/ħ²`.
    pub fn mass_shell(&self, v0: f64) -> f64 {
        let mc = self.mass * self.c / self.hbar;
        mc * mc + 2.0 * self.mass * v0 / (self.hbar * self.hbar)
    }
}

/// One Fourier mode. For Klein-Gordon models `wavevector` holds the
/// contravariant `k^μ`; for Schrödinger models it holds `(ω, k_1, ..., k_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveMode {
    pub amplitude: Complex64,
    pub wavevector: Vec<f64>,
}

/// A validated superposition. Serialises for reporting; build it through the
/// constructors, which also precompute the phase covectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WaveModel {
    metric: Metric,
    modes: Vec<WaveMode>,
    kind: ModelKind,
    v0: f64,
    #[serde(skip)]
    phase: Vec<[f64; MAX_DIM]>,
}

/// ψ with its partial derivatives up to third order at one point.
///
/// Unused slots (beyond `dim` or `order`) are zero. Higher-order arrays are
/// filled symmetrically, so permuted indices hold bit-identical values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldJet {
    pub point: [f64; MAX_DIM],
    pub dim: usize,
    pub order: usize,
    pub psi: Complex64,
    pub d1: [Complex64; MAX_DIM],
    pub d2: [[Complex64; MAX_DIM]; MAX_DIM],
    pub d3: [[[Complex64; MAX_DIM]; MAX_DIM]; MAX_DIM],
}

impl FieldJet {
    pub fn zero(point: &[f64], order: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        let mut p = [0.0; MAX_DIM];
        p[..point.len()].copy_from_slice(point);
        Self {
            point: p,
            dim: point.len(),
            order,
            psi: z,
            d1: [z; MAX_DIM],
            d2: [[z; MAX_DIM]; MAX_DIM],
            d3: [[[z; MAX_DIM]; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn abs_psi(&self) -> f64 {
        self.psi.norm()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl WaveModel {
    /// Build a model from fully specified modes, checking the dispersion relation.
    pub fn new(kind: ModelKind, metric: Metric, modes: Vec<WaveMode>, v0: f64) -> Result<Self, ModelError> {
        metric.validate()?;
        if modes.is_empty() {
            return Err(ModelError::EmptyModeSet);
        }
        match (kind, metric.is_relativistic()) {
            (ModelKind::KleinGordon, false) => {
                return Err(ModelError::InvalidMetric("Klein-Gordon model needs a signature".into()))
            }
            (ModelKind::Schrodinger, true) => {
                return Err(ModelError::InvalidMetric("Schrodinger model takes no signature".into()))
            }
            _ => {}
        }
        let dim = modes[0].wavevector.len();
        if let Some(sig) = &metric.signature {
            if sig.len() != dim {
                return Err(ModelError::LengthMismatch {
                    what: "wavevector",
                    expected: sig.len(),
                    found: dim,
                });
            }
        }
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(ModelError::LengthMismatch {
                what: "wavevector",
                expected: MAX_DIM,
                found: dim,
            });
        }
        let mut model = Self {
            metric,
            modes,
            kind,
            v0,
            phase: Vec::new(),
        };
        for (index, mode) in model.modes.iter().enumerate() {
            if mode.wavevector.len() != dim {
                return Err(ModelError::LengthMismatch {
                    what: "wavevector",
                    expected: dim,
                    found: mode.wavevector.len(),
                });
            }
            let residual = model.dispersion_residual(mode);
            if !(residual <= ON_SHELL_TOL * model.dispersion_scale(mode)) {
                return Err(ModelError::OffShell { index, residual });
            }
        }
        model.rebuild_phase();
        Ok(model)
    }

    /// Klein-Gordon superposition whose modes all share `k⁰ = shared_energy`.
    ///
    /// Spatial wavevectors are accepted if they lie on the mass shell within
    /// [`SHARED_ENERGY_TOL`]; their magnitudes are then snapped onto the shell so the
    /// stored modes satisfy the tighter [`ON_SHELL_TOL`].
    pub fn build_equal_energy_kg_set(
        metric: Metric,
        shared_energy: f64,
        spatial_wavevectors: &[Vec<f64>],
        amplitudes: &[Complex64],
        v0: f64,
    ) -> Result<Self, ModelError> {
        metric.validate()?;
        let sig = metric.signature.clone().ok_or(ModelError::NotRelativistic)?;
        if spatial_wavevectors.is_empty() {
            return Err(ModelError::EmptyModeSet);
        }
        if amplitudes.len() != spatial_wavevectors.len() {
            return Err(ModelError::LengthMismatch {
                what: "amplitudes",
                expected: spatial_wavevectors.len(),
                found: amplitudes.len(),
            });
        }
        let m2 = metric.mass_shell(v0);
        let target = shared_energy * shared_energy - m2;
        let scale = (shared_energy * shared_energy).max(m2).max(1.0);
        let mut modes = Vec::with_capacity(amplitudes.len());
        let mut any_rest = false;
        let mut any_moving = false;
        for (index, (kv, &a)) in spatial_wavevectors.iter().zip(amplitudes).enumerate() {
            if kv.len() + 1 != sig.len() {
                return Err(ModelError::LengthMismatch {
                    what: "spatial wavevector",
                    expected: sig.len() - 1,
                    found: kv.len(),
                });
            }
            let k2: f64 = kv.iter().map(|x| x * x).sum();
            let residual = (k2 - target).abs();
            if !(residual <= SHARED_ENERGY_TOL * scale) || !shared_energy.is_finite() || shared_energy <= 0.0 {
                return Err(ModelError::OffShell { index, residual });
            }
            let mut k = Vec::with_capacity(sig.len());
            k.push(shared_energy);
            if k2 > 0.0 {
                any_moving = true;
                let snap = target.max(0.0).sqrt() / k2.sqrt();
                k.extend(kv.iter().map(|x| x * snap));
            } else {
                any_rest = true;
                k.extend(kv.iter().copied());
            }
            modes.push(WaveMode { amplitude: a, wavevector: k });
        }
        if any_rest {
            if any_moving {
                // Unreachable for a consistent input: a rest mode forces E = M,
                // which forces every |k| to vanish within tolerance.
                return Err(ModelError::OffShell {
                    index: 0,
                    residual: target.abs(),
                });
            }
            let e = m2.sqrt();
            for m in &mut modes {
                m.wavevector[0] = e;
            }
        }
        Self::new(ModelKind::KleinGordon, metric, modes, v0)
    }

    /// Klein-Gordon superposition where every mode takes its own on-shell energy.
    pub fn build_kg_set(
        metric: Metric,
        spatial_wavevectors: &[Vec<f64>],
        amplitudes: &[Complex64],
        v0: f64,
    ) -> Result<Self, ModelError> {
        metric.validate()?;
        let sig = metric.signature.clone().ok_or(ModelError::NotRelativistic)?;
        if spatial_wavevectors.is_empty() {
            return Err(ModelError::EmptyModeSet);
        }
        if amplitudes.len() != spatial_wavevectors.len() {
            return Err(ModelError::LengthMismatch {
                what: "amplitudes",
                expected: spatial_wavevectors.len(),
                found: amplitudes.len(),
            });
        }
        let m2 = metric.mass_shell(v0);
        let mut modes = Vec::with_capacity(amplitudes.len());
        for (kv, &a) in spatial_wavevectors.iter().zip(amplitudes) {
            if kv.len() + 1 != sig.len() {
                return Err(ModelError::LengthMismatch {
                    what: "spatial wavevector",
                    expected: sig.len() - 1,
                    found: kv.len(),
                });
            }
            let k2: f64 = kv.iter().map(|x| x * x).sum();
            let mut k = vec![(k2 + m2).sqrt()];
            k.extend_from_slice(kv);
            modes.push(WaveMode { amplitude: a, wavevector: k });
        }
        Self::new(ModelKind::KleinGordon, metric, modes, v0)
    }

    /// Free Schrödinger superposition in a constant potential `v0`, natural units.
    pub fn build_schrodinger_set(
        spatial_wavevectors: &[Vec<f64>],
        amplitudes: &[Complex64],
        v0: f64,
    ) -> Result<Self, ModelError> {
        Self::build_schrodinger_set_with(Metric::non_relativistic(), spatial_wavevectors, amplitudes, v0)
    }

    pub fn build_schrodinger_set_with(
        metric: Metric,
        spatial_wavevectors: &[Vec<f64>],
        amplitudes: &[Complex64],
        v0: f64,
    ) -> Result<Self, ModelError> {
        if spatial_wavevectors.is_empty() {
            return Err(ModelError::EmptyModeSet);
        }
        if amplitudes.len() != spatial_wavevectors.len() {
            return Err(ModelError::LengthMismatch {
                what: "amplitudes",
                expected: spatial_wavevectors.len(),
                found: amplitudes.len(),
            });
        }
        let (hbar, m) = (metric.hbar, metric.mass);
        let modes = spatial_wavevectors
            .iter()
            .zip(amplitudes)
            .map(|(kv, &a)| {
                let k2: f64 = kv.iter().map(|x| x * x).sum();
                let mut w = vec![hbar * k2 / (2.0 * m) + v0 / hbar];
                w.extend_from_slice(kv);
                WaveMode { amplitude: a, wavevector: w }
            })
            .collect();
        Self::new(ModelKind::Schrodinger, metric, modes, v0)
    }

    fn rebuild_phase(&mut self) {
        let metric = &self.metric;
        let kind = self.kind;
        self.phase = self
            .modes
            .iter()
            .map(|mode| {
                let mut p = [0.0; MAX_DIM];
                match (kind, &metric.signature) {
                    (ModelKind::KleinGordon, Some(sig)) => {
                        for (mu, (&k, &s)) in mode.wavevector.iter().zip(sig).enumerate() {
                            p[mu] = -f64::from(s) * k;
                        }
                    }
                    _ => {
                        p[0] = -mode.wavevector[0];
                        p[1..mode.wavevector.len()].copy_from_slice(&mode.wavevector[1..]);
                    }
                }
                p
            })
            .collect();
    }

    fn dispersion_residual(&self, mode: &WaveMode) -> f64 {
        let k = &mode.wavevector;
        match &self.metric.signature {
            Some(sig) => {
                let kk: f64 = k.iter().zip(sig).map(|(x, &s)| f64::from(s) * x * x).sum();
                (kk - self.metric.time_sign() * self.metric.mass_shell(self.v0)).abs()
            }
            None => {
                let (hbar, m) = (self.metric.hbar, self.metric.mass);
                let k2: f64 = k[1..].iter().map(|x| x * x).sum();
                (k[0] - hbar * k2 / (2.0 * m) - self.v0 / hbar).abs()
            }
        }
    }

    fn dispersion_scale(&self, mode: &WaveMode) -> f64 {
        match self.metric.signature {
            Some(_) => {
                let k2: f64 = mode.wavevector.iter().map(|x| x * x).sum();
                k2.max(self.metric.mass_shell(self.v0).abs()).max(1.0)
            }
            None => mode.wavevector[0].abs().max(1.0),
        }
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn modes(&self) -> &[WaveMode] {
        &self.modes
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// Number of coordinates including time.
    pub fn dim(&self) -> usize {
        self.modes[0].wavevector.len()
    }

    pub fn is_relativistic(&self) -> bool {
        self.kind == ModelKind::KleinGordon
    }

    /// True iff every mode of a Klein-Gordon model shares `k⁰`.
    pub fn is_equal_energy(&self) -> bool {
        if !self.is_relativistic() {
            return false;
        }
        let e0 = self.modes[0].wavevector[0];
        self.modes
            .iter()
            .all(|m| (m.wavevector[0] - e0).abs() <= ON_SHELL_TOL * e0.abs().max(1.0))
    }

    /// Phase covectors `p_n` with `ψ = Σ a_n exp(i p_n·x)`.
    pub fn phase_covectors(&self) -> &[[f64; MAX_DIM]] {
        &self.phase
    }

    /// Lorentz boost of every mode along spatial `axis` (1-based coordinate index).
    pub fn boost_modes(&self, rapidity: f64, axis: usize) -> Result<Self, ModelError> {
        if !self.is_relativistic() {
            return Err(ModelError::NotRelativistic);
        }
        let dim = self.dim();
        if axis == 0 || axis >= dim {
            return Err(ModelError::BadAxis { axis, dim });
        }
        let (ch, sh) = (rapidity.cosh(), rapidity.sinh());
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let mut k = m.wavevector.clone();
                let (k0, ki) = (k[0], k[axis]);
                k[0] = ch * k0 - sh * ki;
                k[axis] = -sh * k0 + ch * ki;
                WaveMode {
                    amplitude: m.amplitude,
                    wavevector: k,
                }
            })
            .collect();
        Self::new(self.kind, self.metric.clone(), modes, self.v0)
    }

    pub fn psi(&self, point: &[f64]) -> Complex64 {
        self.modes
            .iter()
            .zip(&self.phase)
            .map(|(m, p)| m.amplitude * Complex64::cis(dot(&p[..point.len()], point)))
            .sum()
    }

    /// ψ and its gradient; the hot path for particle integrators.
    pub fn psi_gradient(&self, point: &[f64]) -> (Complex64, [Complex64; MAX_DIM]) {
        let dim = point.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut psi = zero;
        let mut grad = [zero; MAX_DIM];
        for (m, p) in self.modes.iter().zip(&self.phase) {
            let (sin, cos) = dot(&p[..dim], point).sin_cos();
            let term = m.amplitude * Complex64::new(cos, sin);
            psi += term;
            let it = Complex64::new(-term.im, term.re);
            for mu in 0..dim {
                grad[mu] += it * p[mu];
            }
        }
        (psi, grad)
    }

    /// Exact analytic derivatives of ψ up to `order` (clamped to 3).
    pub fn evaluate_jet(&self, point: &[f64], order: usize) -> FieldJet {
        let dim = point.len();
        debug_assert_eq!(dim, self.dim());
        let order = order.min(3);
        let mut jet = FieldJet::zero(point, order);
        for (m, p) in self.modes.iter().zip(&self.phase) {
            let term = m.amplitude * Complex64::cis(dot(&p[..dim], point));
            jet.psi += term;
            if order == 0 {
                continue;
            }
            // Each derivative multiplies the mode by i p_μ.
            let t1 = Complex64::new(-term.im, term.re);
            let t2 = -term;
            let t3 = -t1;
            for a in 0..dim {
                jet.d1[a] += t1 * p[a];
                if order < 2 {
                    continue;
                }
                for b in a..dim {
                    jet.d2[a][b] += t2 * (p[a] * p[b]);
                    if order < 3 {
                        continue;
                    }
                    for c in b..dim {
                        jet.d3[a][b][c] += t3 * (p[a] * p[b] * p[c]);
                    }
                }
            }
        }
        symmetrize(&mut jet);
        jet
    }

    /// Relative residual of the governing PDE at `point`: |residual| / largest term.
    pub fn pde_residual(&self, point: &[f64]) -> f64 {
        let jet = self.evaluate_jet(point, 2);
        let dim = point.len();
        let (res, scale) = match &self.metric.signature {
            Some(sig) => {
                let mut res = Complex64::new(0.0, 0.0);
                let mut scale: f64 = 0.0;
                for mu in 0..dim {
                    let t = jet.d2[mu][mu] * f64::from(sig[mu]);
                    scale = scale.max(t.norm());
                    res += t;
                }
                let mass_term = jet.psi * (self.metric.time_sign() * self.metric.mass_shell(self.v0));
                scale = scale.max(mass_term.norm());
                (res + mass_term, scale)
            }
            None => {
                let (hbar, m) = (self.metric.hbar, self.metric.mass);
                let dt = Complex64::new(0.0, hbar) * jet.d1[0];
                let mut lap = Complex64::new(0.0, 0.0);
                for j in 1..dim {
                    lap += jet.d2[j][j];
                }
                let kin = lap * (hbar * hbar / (2.0 * m));
                let pot = jet.psi * self.v0;
                let scale = dt.norm().max(kin.norm()).max(pot.norm());
                (dt + kin - pot, scale)
            }
        };
        if scale == 0.0 {
            res.norm()
        } else {
            res.norm() / scale
        }
    }
}

/// Copy canonical sorted-index entries into every permutation.
pub(crate) fn symmetrize(jet: &mut FieldJet) {
    let dim = jet.dim;
    for a in 0..dim {
        for b in 0..a {
            jet.d2[a][b] = jet.d2[b][a];
        }
    }
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                let mut idx = [a, b, c];
                idx.sort_unstable();
                jet.d3[a][b][c] = jet.d3[idx[0]][idx[1]][idx[2]];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn signature_validation() {
        assert!(Metric::with_signature(&[1, -1, -1]).is_ok());
        assert!(Metric::with_signature(&[-1, 1]).is_ok());
        assert!(Metric::with_signature(&[1, 1]).is_err());
        assert!(Metric::with_signature(&[1, -1, 1]).is_err());
        assert!(Metric::with_signature(&[2, -1]).is_err());
        assert!(Metric::relativistic(1).with_constants(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn single_mode_jet_at_origin() {
        let m = WaveModel::build_equal_energy_kg_set(Metric::relativistic(1), 2f64.sqrt(), &[vec![1.0]], &[c(1.0)], 0.0)
            .unwrap();
        let jet = m.evaluate_jet(&[0.0, 0.0], 1);
        assert!((jet.psi - c(1.0)).norm() < 1e-15);
        // k_μ = (√2, -1) in (+,-); ∂ψ = -i k_μ ψ.
        assert!((jet.d1[0] - Complex64::new(0.0, -2f64.sqrt())).norm() < 1e-15);
        assert!((jet.d1[1] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn standing_wave_minimum_modulus() {
        let m = WaveModel::build_equal_energy_kg_set(
            Metric::relativistic(1),
            2f64.sqrt(),
            &[vec![1.0], vec![-1.0]],
            &[c(0.6), c(0.4)],
            0.0,
        )
        .unwrap();
        // 0.6 e^{ix} + 0.4 e^{-ix} has modulus 0.2 at x = π/2.
        let jet = m.evaluate_jet(&[0.37, std::f64::consts::FRAC_PI_2], 0);
        assert!((jet.abs_psi() - 0.2).abs() < 1e-14);
        assert!(m.is_equal_energy());
    }

    #[test]
    fn off_shell_rejected() {
        let err = WaveModel::build_equal_energy_kg_set(
            Metric::relativistic(1),
            2f64.sqrt(),
            &[vec![1.0], vec![1.1]],
            &[c(1.0), c(1.0)],
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::OffShell { index: 1, .. }));
        assert_eq!(
            WaveModel::build_schrodinger_set(&[], &[], 0.0).unwrap_err(),
            ModelError::EmptyModeSet
        );
    }

    #[test]
    fn schrodinger_dispersion() {
        let m = WaveModel::build_schrodinger_set(&[vec![1.0], vec![2.0]], &[c(0.8), c(0.5)], 0.0).unwrap();
        assert_eq!(m.modes()[0].wavevector[0], 0.5);
        assert_eq!(m.modes()[1].wavevector[0], 2.0);
        assert!(!m.is_equal_energy());
    }

    #[test]
    fn boost_of_rest_mode() {
        let m = WaveModel::build_equal_energy_kg_set(Metric::relativistic(1), 1.0, &[vec![0.0]], &[c(1.0)], 0.0).unwrap();
        let phi: f64 = 0.7;
        let b = m.boost_modes(phi, 1).unwrap();
        let k = &b.modes()[0].wavevector;
        assert!((k[0] - phi.cosh()).abs() < 1e-15);
        assert!((k[1] + phi.sinh()).abs() < 1e-15);
        assert_eq!(m.boost_modes(0.0, 1).unwrap(), m);
        assert_eq!(m.boost_modes(0.1, 0).unwrap_err(), ModelError::BadAxis { axis: 0, dim: 2 });
    }

    #[test]
    fn jet_symmetry_is_exact() {
        let m = WaveModel::build_equal_energy_kg_set(
            Metric::relativistic(2),
            2f64.sqrt(),
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[c(0.7), c(0.5)],
            0.0,
        )
        .unwrap();
        let jet = m.evaluate_jet(&[0.1, 0.2, 0.3], 3);
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(jet.d2[a][b], jet.d2[b][a]);
                for cc in 0..3 {
                    assert_eq!(jet.d3[a][b][cc], jet.d3[cc][a][b]);
                    assert_eq!(jet.d3[a][b][cc], jet.d3[b][cc][a]);
                }
            }
        }
    }

    #[test]
    fn rest_mode_with_potential_is_on_shell() {
        let v0 = 0.5;
        let e = (1.0f64 + 2.0 * v0).sqrt();
        let m = WaveModel::build_equal_energy_kg_set(Metric::relativistic(1), e, &[vec![0.0]], &[c(1.0)], v0).unwrap();
        assert!(m.pde_residual(&[0.3, 0.2]) < 1e-14);
    }
}
