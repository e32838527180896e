mod common;

use common::*;
use pilotwave::ensemble::*;
use pilotwave::fpgrid::fp_vs_ensemble;
use pilotwave::geometry::{Axis, Geometry};
use pilotwave::wavemodel::WaveModel;
use std::f64::consts::PI;

/// (t, x) torus with t = 0 at the centre of the first of 64 time bins.
fn torus(model: &WaveModel) -> Geometry {
    let t = 2.0 * PI / model.modes()[0].wavevector[0];
    Geometry::new(vec![Axis::periodic(-t / 128.0, t), Axis::periodic(0.0, 2.0 * PI)]).unwrap()
}

fn small(n: usize, steps: usize) -> EnsembleConfig {
    let mut cfg = EnsembleConfig::new(n, steps, 0.0025, 11);
    cfg.snapshot_every = (steps / 4).max(1);
    cfg
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn rejection_sampling_matches_the_density() {
    let model = standing_wave(&[-1, 1]);
    let geom = torus(&model);
    let axes = analysed_axes(&geom);
    let sample_box = SampleBox {
        dim: 2,
        fixed: [0.0; 4],
        varying: axes.iter().map(|&c| (c, geom.axes[c])).collect(),
    };
    let density = |p: &[f64]| model.psi(p).norm_sqr();
    let (points, proposals) = rejection_sample(&density, sample_box, 100_000, 3).unwrap();
    assert!(proposals >= 100_000);
    let hist = histograms(&points, &geom, &axes, 64);
    let targets = marginal_targets(&model, &geom, &axes, 64, None, false);
    for (h, t) in hist.iter().zip(&targets.density) {
        assert!(l1_distance(h, t) < 0.03);
    }
}

#[test]
fn equilibrium_is_preserved_at_small_scale() {
    let model = standing_wave(&[-1, 1]);
    let report = run_equivariance(&model, &torus(&model), &small(20_000, 400)).unwrap();
    assert_eq!(report.snapshots.len(), 5);
    assert!(report.max_l1() < 0.06, "{}", report.max_l1());
}

#[test]
fn single_mode_uniform_start_stays_uniform() {
    let model = single_mode();
    let mut cfg = small(20_000, 200);
    cfg.initial = InitialDistribution::Uniform;
    let report = run_ensemble(&model, &torus(&model), &cfg).unwrap();
    assert!(report.max_l1() < 0.06, "{}", report.max_l1());
}

#[test]
fn schrodinger_ensemble_follows_born_rule() {
    let model = mixed_schrodinger();
    let geom = Geometry::new(vec![Axis::open(0.0, 2.0), Axis::periodic(0.0, 2.0 * PI)]).unwrap();
    let report = run_equivariance(&model, &geom, &small(20_000, 400)).unwrap();
    let last = report.final_snapshot();
    assert!((last.lab_time.unwrap() - 1.0).abs() < 1e-12);
    assert!(report.max_l1() < 0.06, "{}", report.max_l1());
}

#[test]
fn delta_in_time_start_relaxes() {
    let model = standing_wave(&[-1, 1]);
    let mut cfg = small(20_000, 2000);
    cfg.initial = InitialDistribution::DeltaInTime;
    cfg.snapshot_every = 400;
    let report = run_relaxation(&model, &torus(&model), &cfg).unwrap();
    let first = &report.snapshots[0];
    let last = report.final_snapshot();
    assert!(first.h_coarse > 3.0, "{}", first.h_coarse);
    assert!(last.h_coarse < 0.02, "{}", last.h_coarse);
    assert!(report.h_monotone_within(1e-3));
}

#[test]
fn zero_diffusion_single_mode_is_pure_transport() {
    let model = single_mode();
    let geom = torus(&model);
    let mut cfg = small(64, 100);
    cfg.initial = InitialDistribution::Uniform;
    cfg.diffusion = Some(0.0);
    let report = run_ensemble(&model, &geom, &cfg).unwrap();
    // Uniform density: the primed drift is the constant -k^mu, so the
    // histogram of a uniform start is unchanged up to sampling noise and
    // the run never rejects a step.
    assert_eq!(report.rejected_steps, 0);
    assert_eq!(report.redraws, 0);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = standing_wave(&[-1, 1]);
    let geom = torus(&model);
    let mut cfg = small(5_000, 100);
    cfg.track_momentum = true;
    let one = in_pool(1, || run_ensemble(&model, &geom, &cfg).unwrap());
    let three = in_pool(3, || run_ensemble(&model, &geom, &cfg).unwrap());
    assert_eq!(one, three);
    let json_one = serde_json::to_string(&one).unwrap();
    let json_three = serde_json::to_string(&three).unwrap();
    assert_eq!(json_one, json_three);
}

#[test]
fn different_seeds_give_different_runs() {
    let model = standing_wave(&[-1, 1]);
    let geom = torus(&model);
    let a = run_ensemble(&model, &geom, &small(2_000, 20)).unwrap();
    let mut cfg = small(2_000, 20);
    cfg.seed = 12;
    let b = run_ensemble(&model, &geom, &cfg).unwrap();
    assert_ne!(a.final_snapshot().histograms, b.final_snapshot().histograms);
}

#[test]
fn momentum_map_error_shrinks_like_inverse_sqrt_n() {
    let model = standing_wave(&[-1, 1]);
    let geom = torus(&model);
    let err = |n: usize| {
        let cfg = small(n, 40);
        let r = run_momentum_equivariance(&model, &geom, &cfg).unwrap();
        // Carried velocities start on the field and stay within noise of it.
        assert!(r.snapshots[0].carried_vs_field_rms.unwrap() < 1e-12);
        r.max_momentum_l1().unwrap()
    };
    let coarse = err(4_000);
    let fine = err(64_000);
    let ratio = coarse / fine;
    assert!((2.5..6.5).contains(&ratio), "{coarse} / {fine} = {ratio}");
    assert!(fine < 0.06, "{fine}");
}

#[test]
fn configuration_errors_are_reported() {
    let schr = mixed_schrodinger();
    let lab = Geometry::new(vec![Axis::open(0.0, 1.0), Axis::periodic(0.0, 2.0 * PI)]).unwrap();
    let mut cfg = small(10, 10);
    cfg.initial = InitialDistribution::DeltaInTime;
    assert!(matches!(run_ensemble(&schr, &lab, &cfg), Err(EnsembleError::BadConfig(_))));
    let periodic = Geometry::new(vec![Axis::periodic(0.0, 1.0), Axis::periodic(0.0, 2.0 * PI)]).unwrap();
    assert!(run_ensemble(&schr, &periodic, &small(10, 10)).is_err());
    let kg = standing_wave(&[-1, 1]);
    let mut cfg = small(10, 10);
    cfg.initial = InitialDistribution::Uniform;
    assert!(run_equivariance(&kg, &torus(&kg), &cfg).is_err());
}

#[test]
fn ensemble_agrees_with_grid_oracle_at_small_scale() {
    let model = standing_wave(&[-1, 1]);
    let geom = torus(&model);
    let mut cfg = small(20_000, 400);
    cfg.initial = InitialDistribution::DeltaInTime;
    let cmp = fp_vs_ensemble(&model, &geom, &cfg, 2, 1.0).unwrap();
    assert_eq!(cmp.snapshots.len(), cmp.ensemble.snapshots.len());
    assert!(cmp.max_l1() < 0.07, "{}", cmp.max_l1());
}
