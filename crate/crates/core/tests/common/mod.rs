//! Shared test oracles.

#![allow(dead_code)]

pub mod dd;

use dd::Dd;
use polycascade::{CascadeState, Matrix};

type Rows = Vec<Vec<Dd>>;

fn to_dd(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).iter().map(|&v| Dd::new(v)).collect()).collect()
}

/// One package evaluated in double-double on a single input row, with
/// direct-difference squared distances.
fn layer_row(cas: &CascadeState, tau: usize, lambda: &Rows, x: &[Dd]) -> Vec<Dd> {
    let k = cas.k_const();
    let layer = &cas.layers()[tau];
    let c = layer.c();
    let mut out = vec![Dd::ZERO; layer.n_out()];
    for p in 0..layer.k() {
        let mut m = Dd::ZERO;
        for (j, &xj) in x.iter().enumerate() {
            let d = xj - Dd::new(c[(p, j)]);
            m = m + d * d;
        }
        let log = if m.hi < k.m_floor { Dd::new(k.m_floor).ln() } else { m.ln() };
        let kern = m * (log - Dd::new(k.b)) + Dd::new(k.c_offset);
        for (t, o) in out.iter_mut().enumerate() {
            *o = *o + kern * lambda[p][t];
        }
    }
    out
}

/// Sum of the cascade's outputs for one row, starting at layer `start`
/// with per-layer `Λ` overrides.
fn total_from(cas: &CascadeState, lambdas: &[Rows], start: usize, x: Vec<Dd>) -> Dd {
    let mut row = x;
    for tau in start..cas.depth() {
        row = layer_row(cas, tau, &lambdas[tau], &row);
    }
    row.into_iter().fold(Dd::ZERO, |a, b| a + b)
}

const STEP: f64 = 1e-7;

fn central(f: impl Fn(f64) -> Dd) -> f64 {
    ((f(STEP) - f(-STEP)) / Dd::new(2.0 * STEP)).to_f64()
}

/// High-precision central differences of `Σ_s output_s` for each row:
/// `g[τ][i][t]` with respect to layer τ's output `x_τ[i,t]`, and
/// `dy[τ][i][p][t]` with respect to layer τ's value `y[p,t]` (through
/// `Λ = U·Y`, holding `U` fixed).
pub struct Reference {
    pub g: Vec<Matrix>,
    pub dy: Vec<Vec<Matrix>>,
}

pub fn reference_derivatives(cas: &CascadeState, x0: &Matrix) -> Reference {
    let lambdas: Vec<Rows> = cas.layers().iter().map(|l| to_dd(l.lambda())).collect();
    let q = cas.depth();
    let r = x0.rows();
    let mut g = Vec::with_capacity(q);
    let mut dy = Vec::with_capacity(q);
    for i in 0..r {
        // Inputs to every layer for this row.
        let mut inputs = vec![to_dd(x0).swap_remove(i)];
        for tau in 0..q {
            let next = layer_row(cas, tau, &lambdas[tau], &inputs[tau]);
            inputs.push(next);
        }
        for tau in 0..q {
            if i == 0 {
                g.push(Matrix::zeros(r, cas.layers()[tau].n_out()));
                dy.push(vec![Matrix::zeros(cas.layers()[tau].k(), cas.layers()[tau].n_out()); r]);
            }
            let x_tau = &inputs[tau + 1];
            for t in 0..x_tau.len() {
                g[tau][(i, t)] = central(|h| {
                    let mut xp = x_tau.clone();
                    xp[t] = xp[t] + Dd::new(h);
                    total_from(cas, &lambdas, tau + 1, xp)
                });
            }
            let layer = &cas.layers()[tau];
            let u = layer.u();
            for p in 0..layer.k() {
                for t in 0..layer.n_out() {
                    dy[tau][i][(p, t)] = central(|h| {
                        let mut ls = lambdas.clone();
                        for a in 0..layer.k() {
                            ls[tau][a][t] = ls[tau][a][t] + Dd::new(u[(a, p)]) * Dd::new(h);
                        }
                        total_from(cas, &ls, tau, inputs[tau].clone())
                    });
                }
            }
        }
    }
    Reference { g, dy }
}

/// `|a − n| / max(|a|, 1e-3)`: relative error, absolute below 1e-3.
pub fn scaled_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(1e-3)
}

/// Worst scaled error of the library's `G_τ` and `g·h` against the
/// high-precision reference.
pub fn gradient_error(cas: &CascadeState, x0: &Matrix) -> f64 {
    let trace = cas.forward(x0).unwrap();
    let grads = cas.backward(&trace, &Matrix::ones(x0.rows(), cas.n_outputs())).unwrap();
    let reference = reference_derivatives(cas, x0);
    let mut worst: f64 = 0.0;
    for tau in 0..cas.depth() {
        let g = &grads.g[tau];
        let h = &trace.layers[tau].h;
        for i in 0..x0.rows() {
            for t in 0..g.cols() {
                worst = worst.max(scaled_error(g[(i, t)], reference.g[tau][(i, t)]));
                for p in 0..h.cols() {
                    let a = g[(i, t)] * h[(i, p)];
                    worst = worst.max(scaled_error(a, reference.dy[tau][i][(p, t)]));
                }
            }
        }
    }
    worst
}
