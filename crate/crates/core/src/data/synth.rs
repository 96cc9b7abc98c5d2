//! Small synthetic tasks for tests and demos.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{one_hot, Dataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::seeded_rng;

const SYNTH_STREAM: u64 = 0x5157;

/// The classic "peaks" surface mapped onto the unit square:
/// with `u = 6x − 3`, `v = 6y − 3`,
/// `3(1−u)²·e^(−u²−(v+1)²) − 10(u/5 − u³ − v⁵)·e^(−u²−v²) − e^(−(u+1)²−v²)/3`.
pub fn peaks2d(x: f64, y: f64) -> f64 {
    let u = 6.0 * x - 3.0;
    let v = 6.0 * y - 3.0;
    3.0 * (1.0 - u).powi(2) * (-u * u - (v + 1.0).powi(2)).exp()
        - 10.0 * (u / 5.0 - u.powi(3) - v.powi(5)) * (-u * u - v * v).exp()
        - (-(u + 1.0).powi(2) - v * v).exp() / 3.0
}

/// `sine`: x ~ U[0,1], y = sin(2πx). `peaks2d`: x ~ U[0,1]², y = [`peaks2d`].
/// Gaussian noise of standard deviation `noise` is added to the targets.
pub fn synth_regression(name: &str, n_points: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if n_points == 0 {
        return Err(Error::Config("synthetic task needs at least one point".into()));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::Config(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = seeded_rng(seed, SYNTH_STREAM, 0);
    let (n_in, f): (usize, fn(&[f64]) -> f64) = match name {
        "sine" => (1, |x| (2.0 * PI * x[0]).sin()),
        "peaks2d" => (2, |x| peaks2d(x[0], x[1])),
        other => return Err(Error::Config(format!("unknown synthetic task {other:?}"))),
    };
    let mut inputs = Vec::with_capacity(n_points * n_in);
    let mut targets = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x: Vec<f64> = (0..n_in).map(|_| rng.random::<f64>()).collect();
        let eps: f64 = rng.sample(StandardNormal);
        targets.push(f(&x) + noise * eps);
        inputs.extend(x);
    }
    Dataset::new(
        Matrix::from_vec(n_points, n_in, inputs)?,
        Matrix::from_vec(n_points, 1, targets)?,
        name,
    )
}

/// Points uniform in [−1, 1]², labelled by which of `classes` equal angular
/// sectors around the origin they fall in; one-hot targets.
pub fn synth_classification(n_points: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if n_points == 0 || classes < 2 {
        return Err(Error::Config("classification task needs points and >= 2 classes".into()));
    }
    let mut rng = seeded_rng(seed, SYNTH_STREAM, 1);
    let mut inputs = Vec::with_capacity(n_points * 2);
    let mut labels = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let x: f64 = rng.random_range(-1.0..1.0);
        let y: f64 = rng.random_range(-1.0..1.0);
        let angle = y.atan2(x) + PI;
        let sector = ((angle / (2.0 * PI) * classes as f64) as usize).min(classes - 1);
        inputs.extend([x, y]);
        labels.push(sector);
    }
    Dataset::new(
        Matrix::from_vec(n_points, 2, inputs)?,
        one_hot(&labels, classes)?,
        format!("sectors{classes}"),
    )
}
