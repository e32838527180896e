mod common;

use common::*;
use pilotwave::fields::{derive_fields, NODE_EPS};
use pilotwave::residuals::*;
use pilotwave::wavemodel::WaveModel;

fn suite(model: &WaveModel, conservation_holds: bool) -> Vec<ResidualReport> {
    let probes = ProbeSet::uniform(model, &box_for(model), 100, DEFAULT_PROBE_SEED, 1e-3).unwrap();
    let fields = probes.fields(model, NODE_EPS).unwrap();
    let opts = SuiteOptions {
        conservation_holds,
        ..SuiteOptions::default()
    };
    run_identity_suite(&fields, &opts)
}

fn assert_all_ok(name: &str, reports: &[ResidualReport]) {
    for r in reports {
        assert!(
            r.ok(),
            "{name}: {} failed: max_abs {:.3e} scale {:.3e}",
            r.name,
            r.max_abs,
            r.reference_scale
        );
    }
}

fn get<'a>(reports: &'a [ResidualReport], name: &str) -> &'a ResidualReport {
    reports.iter().find(|r| r.name == name).unwrap()
}

#[test]
fn single_mode_suite() {
    let r = suite(&single_mode(), true);
    assert_all_ok("single", &r);
    for rep in &r {
        assert!(rep.max_abs < 1e-12, "{} {}", rep.name, rep.max_abs);
    }
}

#[test]
fn standing_wave_suite_both_signatures() {
    for sig in [[1i8, -1], [-1, 1]] {
        let r = suite(&standing_wave(&sig), false);
        assert_all_ok("standing", &r);
    }
}

#[test]
fn symmetric_standing_wave_conserves() {
    for sig in [[1i8, -1], [-1, 1]] {
        let r = suite(&symmetric_standing_wave(&sig), true);
        assert_all_ok("symmetric", &r);
        assert!(get(&r, "conservation_condition").max_abs <= 1e-10);
    }
}

#[test]
fn crossing_modes_suite() {
    let r = suite(&crossing_modes(), false);
    assert_all_ok("crossing", &r);
    // The raw forms differ from zero by the conservation term, which is generic here.
    assert!(get(&r, "conservation_condition").max_abs > 1e-3);
    assert!(get(&r, "cauchy_bookkeeping").pass);
}

#[test]
fn mixed_schrodinger_suite() {
    let r = suite(&mixed_schrodinger(), false);
    assert_all_ok("mixed", &r);
}

#[test]
fn nonlocality_witness_contrast() {
    let m = mixed_schrodinger();
    let f = derive_fields(&m.evaluate_jet(&[0.2, 0.3], 3), m.metric(), 0.0).unwrap();
    assert!(conservation_magnitude(&f) >= 1e-3);
    let s = symmetric_standing_wave(&[1, -1]);
    let f = derive_fields(&s.evaluate_jet(&[0.2, 0.3], 3), s.metric(), 0.0).unwrap();
    assert!(conservation_magnitude(&f) <= 1e-10);
}

#[test]
fn dropping_nonlocal_term_leaves_exactly_that_term() {
    let m = mixed_schrodinger();
    let f = derive_fields(&m.evaluate_jet(&[0.2, 0.3], 3), m.metric(), 0.0).unwrap();
    let (exact, classical) = cauchy_point(&f);
    let c = conservation_point(&f);
    assert!(exact[1].sum.abs() < 1e-12);
    assert!((classical[1].sum - c[1].sum).abs() < 1e-12);
}

#[test]
fn rest_frame_clock() {
    // Rest mode, no potential: the clock ticks at c.
    let rest = WaveModel::build_equal_energy_kg_set(
        pilotwave::wavemodel::Metric::relativistic(1),
        1.0,
        &[vec![0.0]],
        &[c(1.0)],
        0.0,
    )
    .unwrap();
    let probes = ProbeSet::uniform(&rest, &box_for(&rest), 20, 7, 1e-3).unwrap();
    let r = rest_frame_clock_check(&rest, &probes, 1e-12).unwrap();
    assert!(r.pass && r.max_abs <= 1e-12, "{r:?}");

    // Symmetric standing wave: α = ħ²κ²/2m and the rate equals ħE/m.
    for sig in [[1i8, -1], [-1, 1]] {
        let s = symmetric_standing_wave(&sig);
        let probes = ProbeSet::uniform(&s, &box_for(&s), 20, 7, 1e-2).unwrap();
        let r = rest_frame_clock_check(&s, &probes, 1e-10).unwrap();
        assert!(r.max_abs <= 1e-10, "{r:?}");
        for p in &probes.points {
            let f = derive_fields(&s.evaluate_jet(&p[..2], 3), s.metric(), 0.0).unwrap();
            assert!((spatial_alpha(&f) - 0.5).abs() < 1e-10);
            assert!((f.d_s[0].abs() - e()).abs() < 1e-10);
        }
    }

    // Rest mode in a constant potential.
    let v0 = 0.5;
    let rest_v = WaveModel::build_equal_energy_kg_set(
        pilotwave::wavemodel::Metric::relativistic(1),
        (1.0f64 + 2.0 * v0).sqrt(),
        &[vec![0.0]],
        &[c(1.0)],
        v0,
    )
    .unwrap();
    let probes = ProbeSet::uniform(&rest_v, &box_for(&rest_v), 20, 7, 1e-3).unwrap();
    assert!(rest_frame_clock_check(&rest_v, &probes, 1e-10).unwrap().pass);
}

#[test]
fn rest_frame_clock_errors() {
    let probes = ProbeSet::single(&[0.1, 0.2]);
    assert_eq!(
        rest_frame_clock_check(&mixed_schrodinger(), &probes, 1e-10).unwrap_err(),
        ResidualError::NotEqualEnergy
    );
    assert!(matches!(
        rest_frame_clock_check(&single_mode(), &probes, 1e-10).unwrap_err(),
        ResidualError::NotRestFrame { .. }
    ));
}

#[test]
fn boost_preserves_conservation_residual() {
    let s = standing_wave(&[1, -1]);
    let phi: f64 = 0.3;
    let b = s.boost_modes(phi, 1).unwrap();
    for mode in b.modes() {
        let k = &mode.wavevector;
        assert!((k[0] * k[0] - k[1] * k[1] - 1.0).abs() < 1e-12);
    }
    let (ch, sh) = (phi.cosh(), phi.sinh());
    for (t, x) in [(0.1, 0.2), (0.7, 2.5), (-1.0, 4.0)] {
        let f = derive_fields(&s.evaluate_jet(&[t, x], 3), s.metric(), 0.0).unwrap();
        let (tb, xb) = (ch * t - sh * x, -sh * t + ch * x);
        let fb = derive_fields(&b.evaluate_jet(&[tb, xb], 3), b.metric(), 0.0).unwrap();
        assert!((f.rho - fb.rho).abs() < 1e-12);
        // C_ν is a covector: components mix with the inverse boost.
        let c = conservation_point(&f);
        let cb = conservation_point(&fb);
        let c0 = ch * cb[0].sum - sh * cb[1].sum;
        let c1 = -sh * cb[0].sum + ch * cb[1].sum;
        assert!((c0 - c[0].sum).abs() < 1e-9, "{c0} {}", c[0].sum);
        assert!((c1 - c[1].sum).abs() < 1e-9);
    }
}
