//! Finite-difference verification of the backward sweep (`G_τ`) and of the
//! value sensitivities `∂l/∂y = g·h`.

use rand::Rng;

use crate::cascade::{init_cascade, CascadeState, InitOptions, LayerSpec};
use crate::error::Result;
use crate::numerics::Matrix;
use crate::package::KernelConstants;
use crate::seeded_rng;

const GRADCHECK_STREAM: u64 = 0x6c;

/// Below this magnitude an analytic entry is judged on absolute error:
/// `err / max(|a|, FLOOR)`, so a tolerance of 1e-5 means 1e-8 absolute there.
pub const ERROR_FLOOR: f64 = 1e-3;

/// Initial step of the extrapolated central differences.
pub const DEFAULT_STEP: f64 = 0.01;

/// Step shrink factor and tableau size of the extrapolation.
const SHRINK: f64 = 1.4;
const TABLEAU: usize = 10;

pub fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(ERROR_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstEntry {
    pub error: f64,
    pub what: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    /// 1-based layer index.
    pub layer: usize,
    /// Worst scaled error over the entries of `G_τ`.
    pub g_error: f64,
    /// Worst scaled error over `∂l/∂y` for this layer's values.
    pub dy_error: f64,
    pub worst: Option<WorstEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub layers: Vec<LayerCheck>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.g_error.max(l.dy_error))
            .fold(0.0, f64::max)
    }

    /// Strict comparison, so a tolerance of 0 always fails.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_error() < tolerance
    }
}

/// Central differences at steps `h, h/1.4, h/1.4², …`, extrapolated to
/// zero step entry by entry (Ridders' method). Each entry keeps the
/// tableau value with the smallest error estimate.
fn extrapolated(eval: impl Fn(f64) -> Result<Matrix>, step: f64) -> Result<Matrix> {
    let mut central = Vec::with_capacity(TABLEAU);
    let mut h = step;
    for _ in 0..TABLEAU {
        let (plus, minus) = (eval(h)?, eval(-h)?);
        central.push(Matrix::from_fn(plus.rows(), plus.cols(), |i, j| {
            (plus[(i, j)] - minus[(i, j)]) / (2.0 * h)
        }));
        h /= SHRINK;
    }
    let (rows, cols) = central[0].shape();
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        let mut prev = vec![central[0][(i, j)]];
        let mut best = prev[0];
        let mut best_err = f64::INFINITY;
        for col in central.iter().skip(1) {
            let mut cur = vec![col[(i, j)]];
            let mut fac = SHRINK * SHRINK;
            for k in 1..=prev.len() {
                let v = (cur[k - 1] * fac - prev[k - 1]) / (fac - 1.0);
                fac *= SHRINK * SHRINK;
                let err = (v - cur[k - 1]).abs().max((v - prev[k - 1]).abs());
                if err <= best_err {
                    best_err = err;
                    best = v;
                }
                cur.push(v);
            }
            let n = cur.len();
            if (cur[n - 1] - prev[n - 2]).abs() >= 2.0 * best_err {
                break;
            }
            prev = cur;
        }
        best
    }))
}

fn note(layer: &mut LayerCheck, err: f64, what: impl FnOnce() -> String, a: f64, n: f64) {
    if layer.worst.as_ref().is_none_or(|w| err > w.error) {
        layer.worst = Some(WorstEntry {
            error: err,
            what: what(),
            analytic: a,
            numeric: n,
        });
    }
}

/// Compares every `G_τ` entry and every `∂l_i/∂y` entry of a single-output
/// cascade against extrapolated central differences.
pub fn check_gradients(cas: &CascadeState, x0: &Matrix, step: f64) -> Result<GradReport> {
    let trace = cas.forward(x0)?;
    let r = x0.rows();
    let s = cas.n_outputs();
    let g_q = Matrix::ones(r, s);
    let grads = cas.backward(&trace, &g_q)?;
    let row_total = |m: &Matrix| -> Matrix {
        let sums = m.row_sums();
        Matrix::from_fn(sums.len(), 1, |i, _| sums[i])
    };

    let mut layers = Vec::with_capacity(cas.depth());
    for tau in 0..cas.depth() {
        let mut check = LayerCheck {
            layer: tau + 1,
            g_error: 0.0,
            dy_error: 0.0,
            worst: None,
        };

        // Rows are independent, so perturbing a whole column at once gives
        // every row's derivative for that column.
        let x_tau = &trace.layers[tau].x_out;
        for t in 0..x_tau.cols() {
            let fd = extrapolated(
                |d| {
                    let mut xp = x_tau.clone();
                    for i in 0..r {
                        xp[(i, t)] += d;
                    }
                    Ok(row_total(&cas.predict_from(&xp, tau + 1)?))
                },
                step,
            )?;
            for i in 0..r {
                let a = grads.g[tau][(i, t)];
                let n = fd[(i, 0)];
                let err = scaled_error(a, n);
                check.g_error = check.g_error.max(err);
                note(&mut check, err, || format!("G[{i},{t}]"), a, n);
            }
        }

        let layer = &cas.layers()[tau];
        let h = &trace.layers[tau].h;
        for p in 0..layer.k() {
            for t in 0..layer.n_out() {
                let fd = extrapolated(
                    |d| {
                        let mut c = cas.clone();
                        let mut y = layer.y().clone();
                        y[(p, t)] += d;
                        c.set_layer_values(tau, y)?;
                        Ok(row_total(&c.predict(x0)?))
                    },
                    step,
                )?;
                for i in 0..r {
                    let a = grads.g[tau][(i, t)] * h[(i, p)];
                    let n = fd[(i, 0)];
                    let err = scaled_error(a, n);
                    check.dy_error = check.dy_error.max(err);
                    note(&mut check, err, || format!("dl{i}/dy[{p},{t}]"), a, n);
                }
            }
        }
        layers.push(check);
    }
    Ok(GradReport { layers })
}

/// A seeded random cascade of the given widths with `k` points per layer,
/// plus an `r`-row input batch, both drawn from U[−1, 1].
pub fn random_problem(
    widths: &[usize],
    k: usize,
    r: usize,
    seed: u64,
    sigma2: f64,
) -> Result<(CascadeState, Matrix)> {
    let mut rng = seeded_rng(seed, GRADCHECK_STREAM, 0);
    let n0 = widths.first().copied().unwrap_or(0);
    let sample = Matrix::from_fn((4 * k).max(1), n0.max(1), |_, _| rng.random_range(-1.0..1.0));
    let specs: Vec<LayerSpec> = widths
        .windows(2)
        .map(|w| LayerSpec { n_in: w[0], n_out: w[1], k })
        .collect();
    let opts = InitOptions {
        seed,
        sigma2: vec![sigma2],
        ..InitOptions::default()
    };
    let cas = init_cascade(&specs, &sample, KernelConstants::default(), &opts)?;
    let x = Matrix::from_fn(r.max(1), n0.max(1), |_, _| rng.random_range(-1.0..1.0));
    Ok((cas, x))
}
