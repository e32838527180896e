#![allow(dead_code)]

use pilotwave::geometry::{Axis, Geometry};
use pilotwave::wavemodel::{Metric, WaveModel};
use pilotwave::Complex64;
use std::f64::consts::PI;

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn e() -> f64 {
    2f64.sqrt()
}

pub fn single_mode() -> WaveModel {
    WaveModel::build_equal_energy_kg_set(Metric::relativistic(1), e(), &[vec![1.0]], &[c(1.0)], 0.0).unwrap()
}

pub fn standing_wave(sig: &[i8]) -> WaveModel {
    WaveModel::build_equal_energy_kg_set(
        Metric::with_signature(sig).unwrap(),
        e(),
        &[vec![1.0], vec![-1.0]],
        &[c(0.6), c(0.4)],
        0.0,
    )
    .unwrap()
}

pub fn symmetric_standing_wave(sig: &[i8]) -> WaveModel {
    WaveModel::build_equal_energy_kg_set(
        Metric::with_signature(sig).unwrap(),
        e(),
        &[vec![1.0], vec![-1.0]],
        &[c(0.5), c(0.5)],
        0.0,
    )
    .unwrap()
}

pub fn crossing_modes() -> WaveModel {
    WaveModel::build_equal_energy_kg_set(
        Metric::relativistic(2),
        e(),
        &[vec![1.0, 0.0], vec![0.0, 1.0]],
        &[c(0.7), c(0.5)],
        0.0,
    )
    .unwrap()
}

pub fn mixed_schrodinger() -> WaveModel {
    WaveModel::build_schrodinger_set(&[vec![1.0], vec![2.0]], &[c(0.8), c(0.5)], 0.0).unwrap()
}

/// Time circle of one period plus a 2π spatial torus, or a lab-time window.
pub fn box_for(model: &WaveModel) -> Geometry {
    let dim = model.dim();
    let mut axes = Vec::new();
    if model.is_relativistic() {
        axes.push(Axis::periodic(0.0, 2.0 * PI / model.modes()[0].wavevector[0]));
    } else {
        axes.push(Axis::open(0.0, 2.0));
    }
    for _ in 1..dim {
        axes.push(Axis::periodic(0.0, 2.0 * PI));
    }
    Geometry::new(axes).unwrap()
}
