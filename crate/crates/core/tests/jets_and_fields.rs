mod common;

use common::*;
use pilotwave::fields::{derive_fields, quantum_potential_forms, rho_grad_q_decomposition, stochastic_drift};
use pilotwave::residuals::{fd_oracle_jet, ProbeSet};
use pilotwave::wavemodel::{FieldJet, WaveModel};
use proptest::prelude::*;

fn all_models() -> Vec<(&'static str, WaveModel)> {
    vec![
        ("single", single_mode()),
        ("standing", standing_wave(&[1, -1])),
        ("standing_mostly_plus", standing_wave(&[-1, 1])),
        ("crossing", crossing_modes()),
        ("mixed", mixed_schrodinger()),
    ]
}

fn jet_distance(a: &FieldJet, b: &FieldJet) -> f64 {
    let dim = a.dim;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = a.psi.norm();
    let mut upd = |x: pilotwave::Complex64, y: pilotwave::Complex64| {
        worst = worst.max((x - y).norm());
        scale = scale.max(x.norm());
    };
    for i in 0..dim {
        upd(a.d1[i], b.d1[i]);
        for j in 0..dim {
            upd(a.d2[i][j], b.d2[i][j]);
            for k in 0..dim {
                upd(a.d3[i][j][k], b.d3[i][j][k]);
            }
        }
    }
    worst / scale.max(1.0)
}

#[test]
fn pde_residual_small_everywhere() {
    for (name, m) in all_models() {
        let probes = ProbeSet::uniform(&m, &box_for(&m), 100, 3, 0.0).unwrap();
        for p in &probes.points {
            let r = m.pde_residual(&p[..m.dim()]);
            assert!(r <= 1e-10, "{name}: {r:e}");
        }
    }
}

#[test]
fn analytic_jet_matches_finite_differences() {
    for (name, m) in all_models() {
        let probes = ProbeSet::uniform(&m, &box_for(&m), 20, 11, 1e-3).unwrap();
        for p in &probes.points {
            let x = &p[..m.dim()];
            let d = jet_distance(&m.evaluate_jet(x, 3), &fd_oracle_jet(&m, x, 1e-5, 3));
            assert!(d <= 1e-5, "{name}: {d:e}");
        }
    }
}

#[test]
fn oracle_first_derivative_is_second_order() {
    let m = crossing_modes();
    let x = [0.3, 0.4, 1.1];
    let exact = m.evaluate_jet(&x, 1);
    let err = |h: f64| {
        let fd = fd_oracle_jet(&m, &x, h, 1);
        (0..3).map(|i| (fd.d1[i] - exact.d1[i]).norm()).fold(0.0, f64::max)
    };
    let ratio = err(2e-2) / err(1e-2);
    assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn jet_evaluation_is_pure() {
    let m = crossing_modes();
    let x = [0.123, -4.5, 2.25];
    assert_eq!(m.evaluate_jet(&x, 3), m.evaluate_jet(&x, 3));
}

#[test]
fn phase_gradient_matches_unwrapped_argument() {
    for (name, m) in all_models() {
        let probes = ProbeSet::uniform(&m, &box_for(&m), 10, 5, 1e-2).unwrap();
        for p in &probes.points {
            let x = &p[..m.dim()];
            let f = derive_fields(&m.evaluate_jet(x, 1), m.metric(), 0.0).unwrap();
            for mu in 0..m.dim() {
                // Follow arg ψ along a short path, unwrapping each small increment.
                let n = 20;
                let h = 1e-4;
                let mut y = x.to_vec();
                y[mu] -= h;
                let mut prev = m.psi(&y);
                let mut total = 0.0;
                for _ in 0..n {
                    y[mu] += 2.0 * h / n as f64;
                    let next = m.psi(&y);
                    total += (next * prev.conj()).arg();
                    prev = next;
                }
                let fd = total / (2.0 * h);
                assert!((fd - f.d_s[mu]).abs() <= 1e-5 * f.d_s[mu].abs().max(1.0), "{name} {mu}");
            }
        }
    }
}

#[test]
fn phase_hessian_is_symmetric() {
    for (_, m) in all_models() {
        let f = derive_fields(&m.evaluate_jet(&vec![0.37; m.dim()], 3), m.metric(), 0.0).unwrap();
        for a in 0..m.dim() {
            for b in 0..m.dim() {
                assert!((f.d2_s[a][b] - f.d2_s[b][a]).abs() <= 1e-12 * f.d2_s[a][b].abs().max(1.0));
            }
        }
    }
}

#[test]
fn equal_energy_density_is_static() {
    for m in [standing_wave(&[1, -1]), crossing_modes()] {
        let probes = ProbeSet::uniform(&m, &box_for(&m), 50, 9, 1e-3).unwrap();
        for p in &probes.points {
            let f = derive_fields(&m.evaluate_jet(&p[..m.dim()], 1), m.metric(), 0.0).unwrap();
            assert!(f.d_rho[0].abs() <= 1e-10);
        }
    }
}

#[test]
fn quantum_potential_forms_agree_on_standing_wave() {
    let m = standing_wave(&[1, -1]);
    let f = derive_fields(&m.evaluate_jet(&[0.2, 0.3], 2), m.metric(), 0.0).unwrap();
    let q = quantum_potential_forms(&f);
    assert!(q.max_deviation() <= 1e-9 * q.definition.abs().max(1.0));
}

#[test]
fn quantum_potential_forms_agree_on_schrodinger() {
    let m = mixed_schrodinger();
    let probes = ProbeSet::uniform(&m, &box_for(&m), 50, 21, 1e-2).unwrap();
    for p in &probes.points {
        let f = derive_fields(&m.evaluate_jet(&p[..2], 2), m.metric(), 0.0).unwrap();
        let q = quantum_potential_forms(&f);
        assert!(q.max_deviation() <= 1e-9 * q.definition.abs().max(1.0));
    }
}

#[test]
fn flat_density_has_no_quantum_potential() {
    let m = single_mode();
    let f = derive_fields(&m.evaluate_jet(&[1.0, 2.0], 3), m.metric(), 0.0).unwrap();
    let q = quantum_potential_forms(&f);
    assert!(q.definition.abs() < 1e-14 && q.gradient_form.abs() < 1e-14);
    let (lhs, rhs) = rho_grad_q_decomposition(&f).unwrap();
    assert!(lhs.iter().chain(&rhs).all(|v| v.abs() < 1e-13));
}

#[test]
fn decomposition_holds_on_standing_and_schrodinger() {
    for m in [standing_wave(&[1, -1]), mixed_schrodinger()] {
        let probes = ProbeSet::uniform(&m, &box_for(&m), 50, 13, 1e-3).unwrap();
        for p in &probes.points {
            let f = derive_fields(&m.evaluate_jet(&p[..2], 3), m.metric(), 0.0).unwrap();
            let (lhs, rhs) = rho_grad_q_decomposition(&f).unwrap();
            let big = lhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            for nu in 0..2 {
                assert!((lhs[nu] - rhs[nu]).abs() <= 1e-8 * (1.0 + big));
            }
        }
    }
}

#[test]
fn drift_divergence_matches_finite_differences() {
    for (name, m) in all_models() {
        let x = vec![0.41; m.dim()];
        let f = derive_fields(&m.evaluate_jet(&x, 3), m.metric(), 0.0).unwrap();
        let (_, div) = stochastic_drift(&f);
        let h = 1e-5;
        let mut fd = 0.0;
        for mu in 0..m.dim() {
            let mut p = x.clone();
            p[mu] += h;
            let fp = derive_fields(&m.evaluate_jet(&p, 1), m.metric(), 0.0).unwrap();
            p[mu] -= 2.0 * h;
            let fm = derive_fields(&m.evaluate_jet(&p, 1), m.metric(), 0.0).unwrap();
            fd += (fp.drift_prime[mu] - fm.drift_prime[mu]) / (2.0 * h);
        }
        // Non-relativistic drift has no time component, so ∂_t contributes nothing.
        assert!((fd - div).abs() <= 1e-5 * div.abs().max(1.0), "{name}: {fd} vs {div}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jets_symmetric_and_on_shell(t in -5.0f64..5.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let m = crossing_modes();
        let jet = m.evaluate_jet(&[t, x, y], 3);
        for a in 0..3 {
            for b in 0..3 {
                prop_assert_eq!(jet.d2[a][b], jet.d2[b][a]);
                for c in 0..3 {
                    prop_assert_eq!(jet.d3[a][b][c], jet.d3[b][a][c]);
                    prop_assert_eq!(jet.d3[a][b][c], jet.d3[a][c][b]);
                }
            }
        }
        prop_assert!(m.pde_residual(&[t, x, y]) <= 1e-10);
    }

    #[test]
    fn boost_preserves_shell_and_amplitudes(phi in -2.0f64..2.0) {
        let m = crossing_modes();
        for axis in 1..3 {
            let b = m.boost_modes(phi, axis).unwrap();
            for (old, new) in m.modes().iter().zip(b.modes()) {
                let k = &new.wavevector;
                let kk = k[0] * k[0] - k[1] * k[1] - k[2] * k[2];
                prop_assert!((kk - 1.0).abs() <= 1e-12 * k[0] * k[0]);
                prop_assert_eq!(old.amplitude, new.amplitude);
            }
        }
    }

    #[test]
    fn schrodinger_models_solve_their_equation(k1 in -3i32..3, k2 in -3i32..3, v0 in -1.0f64..1.0,
                                               t in 0.0f64..3.0, x in 0.0f64..6.3) {
        let m = WaveModel::build_schrodinger_set(&[vec![f64::from(k1)], vec![f64::from(k2)]], &[c(0.7), c(0.4)], v0).unwrap();
        prop_assert!(m.pde_residual(&[t, x]) <= 1e-10);
    }
}
