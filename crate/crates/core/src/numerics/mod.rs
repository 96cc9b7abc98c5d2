//! Dense matrix primitives and the linear solvers the cascade is built on.

mod matrix;
mod solve;

pub use matrix::Matrix;
pub use solve::{lu_solve, regularized_inverse, spd_solve, symmetry_defect};

use crate::error::{Error, Result};

/// `op(a) · op(b)` where `op` optionally transposes its argument.
fn gemm(a: &Matrix, a_t: bool, b: &Matrix, b_t: bool, alpha: f64, op: &str) -> Result<Matrix> {
    let (m, ka) = if a_t { (a.cols(), a.rows()) } else { a.shape() };
    let (kb, n) = if b_t { (b.cols(), b.rows()) } else { b.shape() };
    if ka != kb {
        return Err(Error::Dimension {
            op: "matmul",
            detail: format!(
                "{op}: inner dimensions {ka} vs {kb} ({:?}{} x {:?}{})",
                a.shape(),
                if a_t { "ᵀ" } else { "" },
                b.shape(),
                if b_t { "ᵀ" } else { "" }
            ),
        });
    }
    let (rsa, csa) = if a_t { (1, a.cols() as isize) } else { (a.cols() as isize, 1) };
    let (rsb, csb) = if b_t { (1, b.cols() as isize) } else { (b.cols() as isize, 1) };
    let mut out = vec![0.0; m * n];
    // SAFETY: the strides above describe exactly the row-major buffers of `a`
    // and `b` (with or without transposition); `out` is a dense m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            ka,
            n,
            alpha,
            a.as_slice().as_ptr(),
            rsa,
            csa,
            b.as_slice().as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Matrix::checked(m, n, out, op)
}

/// `a · b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, false, b, false, 1.0, "a·b")
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, true, b, false, 1.0, "aᵀ·b")
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm(a, false, b, true, 1.0, "a·bᵀ")
}

/// `a · aᵀ`, exactly symmetric.
pub fn gram(a: &Matrix) -> Result<Matrix> {
    let mut g = gemm(a, false, a, true, 1.0, "a·aᵀ")?;
    g.mirror_upper();
    Ok(g)
}

/// Elementwise product.
pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.zip_with(b, "hadamard", |x, y| x * y)
}

/// Squared Euclidean distances between the rows of `x` (r×n) and the rows of
/// `c` (k×n), computed through the expanded form
/// `‖x‖²·1ᵀ + 1·‖c‖²ᵀ − 2·x·cᵀ` and clamped at zero.
pub fn pairwise_sq_dist(x: &Matrix, c: &Matrix) -> Result<Matrix> {
    if x.cols() != c.cols() {
        return Err(Error::dim(
            "pairwise_sq_dist",
            format!("x has {} columns, c has {}", x.cols(), c.cols()),
        ));
    }
    let norms = |m: &Matrix| -> Vec<f64> {
        (0..m.rows())
            .map(|i| m.row(i).iter().map(|v| v * v).sum())
            .collect()
    };
    let nx = norms(x);
    let nc = norms(c);
    let mut d = gemm(x, false, c, true, -2.0, "pairwise_sq_dist")?;
    for (i, &xi) in nx.iter().enumerate() {
        for (v, &cp) in d.row_mut(i).iter_mut().zip(&nc) {
            *v = (*v + xi + cp).max(0.0);
        }
    }
    Ok(d)
}
