mod common;

use common::*;
use pilotwave::dynamics::*;
use pilotwave::geometry::{Axis, Geometry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn single_mode_moves_in_a_straight_line() {
    let m = single_mode();
    let cfg = StepConfig::new(&m, 0.01);
    let v = guidance_velocity(&m, &[0.0, 0.0], false, 0.0).unwrap();
    let mut s = ParticleState::at(&[0.3, -0.2]);
    for _ in 0..500 {
        s = deterministic_step(&s, &m, &cfg).unwrap();
    }
    assert!((s.position[0] - (0.3 + 5.0 * v[0])).abs() < 1e-12);
    assert!((s.position[1] - (-0.2 + 5.0 * v[1])).abs() < 1e-12);
    assert!((s.tau - 5.0).abs() < 1e-12);
}

#[test]
fn symmetric_standing_wave_freezes_space() {
    let m = symmetric_standing_wave(&[1, -1]);
    let cfg = StepConfig::new(&m, 0.01);
    let mut s = ParticleState::at(&[0.0, 0.4]);
    for _ in 0..100 {
        s = deterministic_step(&s, &m, &cfg).unwrap();
    }
    assert!((s.position[1] - 0.4).abs() < 1e-14);
    assert!((s.position[0] + e()).abs() < 1e-12);
}

#[test]
fn rk4_is_fourth_order() {
    let m = crossing_modes();
    let run = |dtau: f64| {
        let cfg = StepConfig::new(&m, dtau);
        let mut s = ParticleState::at(&[0.1, 0.2, 0.3]);
        let n = (4.0 / dtau).round() as usize;
        for _ in 0..n {
            s = deterministic_step(&s, &m, &cfg).unwrap();
        }
        s.position
    };
    let reference = run(1e-3);
    let err = |p: [f64; 4]| (0..3).map(|i| (p[i] - reference[i]).abs()).fold(0.0, f64::max);
    let ratio = err(run(0.2)) / err(run(0.1));
    assert!((13.0..19.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn stochastic_increments_have_the_right_moments() {
    let m = single_mode();
    let dtau = 0.01;
    let cfg = StepConfig::new(&m, dtau);
    let drift = guidance_velocity(&m, &[0.0, 0.0], true, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    let s = ParticleState::at(&[0.0, 0.0]);
    for _ in 0..n {
        let out = stochastic_step(&s, &m, &cfg, &mut rng).unwrap();
        for i in 0..2 {
            let d = out.state.position[i] - drift[i] * dtau;
            sum[i] += d;
            sq[i] += d * d;
        }
    }
    let k = 1.0;
    for i in 0..2 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        let sd = (k * dtau).sqrt();
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "mean {mean}");
        // Sample variance has relative standard error √(2/n).
        assert!((var / (k * dtau) - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }
}

#[test]
fn stochastic_trajectory_is_reproducible_and_wrapped() {
    let m = standing_wave(&[-1, 1]);
    let geom = box_for(&m);
    let cfg = StepConfig::new(&m, 0.01).with_geometry(geom.clone());
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(17);
        let mut s = ParticleState::at(&[0.1, 0.1]);
        let mut path = Vec::new();
        for _ in 0..2000 {
            s = stochastic_step(&s, &m, &cfg, &mut rng).unwrap().state;
            for (x, a) in s.position.iter().zip(&geom.axes) {
                assert!(*x >= a.origin && *x < a.end());
            }
            path.push(s.position);
        }
        path
    };
    assert_eq!(run(), run());
}

#[test]
fn node_policy_rejects_when_every_redraw_fails() {
    // With a huge node guard every proposal is refused.
    let m = standing_wave(&[1, -1]);
    let mut cfg = StepConfig::new(&m, 0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = ParticleState::at(&[0.0, 0.0]);
    cfg.node_eps = 0.0;
    let ok = stochastic_step(&s, &m, &cfg, &mut rng).unwrap();
    assert!(!ok.rejected);
    let geometry = Geometry::new(vec![Axis::periodic(0.0, 1.0), Axis::periodic(0.0, 1.0)]).unwrap();
    cfg = cfg.with_geometry(geometry);
    cfg.node_eps = 1.0;
    let out = stochastic_step(&s, &m, &cfg, &mut rng).unwrap();
    assert!(out.rejected);
    assert_eq!(out.redraws, MAX_REDRAWS);
    assert_eq!(out.state.position, s.position);
    cfg.node_eps = 2.0;
    assert!(matches!(
        stochastic_step(&s, &m, &cfg, &mut rng),
        Err(DynamicsError::NodeTooClose { .. })
    ));
}

fn bohm_newton_error(force: ForceModel) -> f64 {
    let m = mixed_schrodinger();
    let cfg = StepConfig::new(&m, 1e-3);
    bohm_newton_consistency(&m, &[0.0, 0.3], &cfg, 1000, force).unwrap()
}

#[test]
fn bohm_newton_keeps_velocity_on_the_guidance_field() {
    let err = bohm_newton_error(ForceModel::Full);
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn dropping_the_quantum_force_breaks_consistency() {
    let err = bohm_newton_error(ForceModel::WithoutQuantumForce);
    assert!(err >= 1e-3, "{err:e}");
}

#[test]
fn bohm_newton_consistency_holds_for_klein_gordon() {
    let m = standing_wave(&[1, -1]);
    let cfg = StepConfig::new(&m, 1e-3);
    let err = bohm_newton_consistency(&m, &[0.2, 0.3], &cfg, 1000, ForceModel::Full).unwrap();
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn survey_separates_full_and_ablated_runs() {
    let m = mixed_schrodinger();
    let cfg = StepConfig::new(&m, 1e-3).with_geometry(box_for(&m));
    // The second start sits on a crest of ρ, where the quantum force vanishes.
    let starts = vec![vec![0.0, 0.3], vec![0.2, 0.3], vec![0.5, 2.0]];
    let s = bohm_newton_survey(&m, &starts, &cfg, 1000).unwrap();
    assert_eq!(s.full.len(), 3);
    assert!(s.worst_full() <= 1e-6, "{:e}", s.worst_full());
    assert!(s.ablated[1] < 1e-3, "{:e}", s.ablated[1]);
    assert!(s.median_ablated() >= 1e-3, "{:?}", s.ablated);
}

#[test]
fn carried_velocity_is_constant_under_constant_potential() {
    let m = standing_wave(&[-1, 1]);
    let cfg = StepConfig::new(&m, 0.01).with_geometry(box_for(&m));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = [0.0, 1.0];
    let v = guidance_velocity(&m, &start, true, 0.0).unwrap();
    let mut s = ParticleState::at(&start);
    s.carried_velocity = Some(v);
    for _ in 0..100 {
        s = carried_momentum_step(&s, &m, &cfg, &mut rng).unwrap().state;
    }
    assert_eq!(s.carried_velocity, Some(v));
}

#[test]
fn single_mode_carried_velocity_tracks_field_drift() {
    let m = single_mode();
    let cfg = StepConfig::new(&m, 0.01).with_geometry(box_for(&m));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = [0.0, 1.0];
    let mut s = ParticleState::at(&start);
    s.carried_velocity = Some(guidance_velocity(&m, &start, true, 0.0).unwrap());
    for _ in 0..100 {
        s = carried_momentum_step(&s, &m, &cfg, &mut rng).unwrap().state;
        let field = guidance_velocity(&m, &s.position[..2], true, 0.0).unwrap();
        let v = s.carried_velocity.unwrap();
        assert!((v[0] - field[0]).abs() < 1e-12 && (v[1] - field[1]).abs() < 1e-12);
    }
}
