//! Coordinate boxes and tori.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wavemodel::MAX_DIM;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("axis {axis}: length must be positive and finite, got {length}")]
    BadLength { axis: usize, length: f64 },
    #[error("geometry has {found} axes, model needs {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub origin: f64,
    pub length: f64,
    pub periodic: bool,
}

impl Axis {
    pub fn periodic(origin: f64, length: f64) -> Self {
        Self { origin, length, periodic: true }
    }

    pub fn open(origin: f64, length: f64) -> Self {
        Self { origin, length, periodic: false }
    }

    pub fn wrap(&self, x: f64) -> f64 {
        if !self.periodic {
            return x;
        }
        // Steps move particles by a small fraction of the box, so one shift
        // usually suffices; fall back to the remainder for large excursions.
        let end = self.origin + self.length;
        if x >= self.origin && x < end {
            return x;
        }
        let shifted = if x < self.origin { x + self.length } else { x - self.length };
        if shifted >= self.origin && shifted < end {
            return shifted;
        }
        let r = (x - self.origin).rem_euclid(self.length);
        // rem_euclid can return `length` itself for tiny negative inputs.
        if r >= self.length {
            self.origin
        } else {
            self.origin + r
        }
    }

    pub fn end(&self) -> f64 {
        self.origin + self.length
    }
}

/// One axis per model coordinate, coordinate 0 being time.
///
/// For relativistic ensembles every axis is periodic (the local-time circle and
/// the spatial torus). For non-relativistic runs axis 0 is the lab-time window
/// and is never wrapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub axes: Vec<Axis>,
}

impl Geometry {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GeometryError> {
        for (axis, a) in axes.iter().enumerate() {
            if !(a.length.is_finite() && a.length > 0.0 && a.origin.is_finite()) {
                return Err(GeometryError::BadLength { axis, length: a.length });
            }
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn check_dim(&self, expected: usize) -> Result<(), GeometryError> {
        if self.axes.len() == expected {
            Ok(())
        } else {
            Err(GeometryError::DimensionMismatch {
                expected,
                found: self.axes.len(),
            })
        }
    }

    pub fn wrap(&self, point: &mut [f64]) {
        for (x, a) in point.iter_mut().zip(&self.axes) {
            *x = a.wrap(*x);
        }
    }

    pub fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; MAX_DIM] {
        let mut p = [0.0; MAX_DIM];
        for (x, a) in p.iter_mut().zip(&self.axes) {
            *x = a.origin + a.length * rng.random::<f64>();
        }
        p
    }

    /// Indices of axes that are histogrammed in ensemble runs.
    pub fn periodic_axes(&self) -> Vec<usize> {
        (0..self.axes.len()).filter(|&i| self.axes[i].periodic).collect()
    }
}
