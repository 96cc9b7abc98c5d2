//! Dense brute-force solution of the per-batch quadratic program, used only
//! to cross-check the synchronized solve.

use crate::cascade::{ForwardTrace, GradientSet};
use crate::error::{Error, Result};
use crate::numerics::{lu_solve, Matrix};

pub const QP_ORACLE_MAX_PARAMS: usize = 500;

/// Minimizes `Σ Δy² + (1/α)Σ e²` subject to `A·Δy + e = ΔL`, where
/// `A[i, (τ,p,t)] = g_τ[i,t]·h_τ[i,p]`, by solving the KKT system
///
/// ```text
/// [ 2I   −Aᵀ   ] [Δy]   [ 0 ]
/// [ A   (α/2)I ] [β ] = [ΔL ]
/// ```
///
/// with the slack already eliminated through `e = (α/2)β`.
pub fn qp_oracle(
    trace: &ForwardTrace,
    grads: &GradientSet,
    delta_l: &Matrix,
    alpha: f64,
) -> Result<Vec<Matrix>> {
    if trace.layers.len() != grads.g.len() {
        return Err(Error::dim(
            "qp_oracle",
            format!("{} traces, {} gradients", trace.layers.len(), grads.g.len()),
        ));
    }
    if !(alpha > 0.0) {
        return Err(Error::Input(format!("alpha must be > 0, got {alpha}")));
    }
    let r = delta_l.rows();
    let dims: Vec<(usize, usize)> = trace
        .layers
        .iter()
        .zip(&grads.g)
        .map(|(t, g)| (t.h.cols(), g.cols()))
        .collect();
    let p_total: usize = dims.iter().map(|(k, n)| k * n).sum();
    if p_total > QP_ORACLE_MAX_PARAMS {
        return Err(Error::Input(format!(
            "qp_oracle handles at most {QP_ORACLE_MAX_PARAMS} parameters, got {p_total}"
        )));
    }

    let mut a = Matrix::zeros(r, p_total);
    let mut offset = 0;
    for ((t, g), &(k, n)) in trace.layers.iter().zip(&grads.g).zip(&dims) {
        for i in 0..r {
            for p in 0..k {
                for j in 0..n {
                    a[(i, offset + p * n + j)] = g[(i, j)] * t.h[(i, p)];
                }
            }
        }
        offset += k * n;
    }

    let size = p_total + r;
    let mut kkt = Matrix::zeros(size, size);
    for d in 0..p_total {
        kkt[(d, d)] = 2.0;
    }
    for i in 0..r {
        for d in 0..p_total {
            kkt[(d, p_total + i)] = -a[(i, d)];
            kkt[(p_total + i, d)] = a[(i, d)];
        }
        kkt[(p_total + i, p_total + i)] = alpha / 2.0;
    }
    let mut rhs = Matrix::zeros(size, 1);
    for i in 0..r {
        rhs[(p_total + i, 0)] = delta_l[(i, 0)];
    }
    let sol = lu_solve(&kkt, &rhs)?;

    let mut out = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &(k, n) in &dims {
        out.push(Matrix::from_fn(k, n, |p, j| sol[(offset + p * n + j, 0)]));
        offset += k * n;
    }
    Ok(out)
}
