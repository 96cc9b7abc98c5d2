//! A single polyharmonic package: a fixed constellation of key points and a
//! block of function values at those points, evaluated for a whole batch at
//! once.
//!
//! The kernel applied to squared distances `m` is `m·(ln m − b) + c`. Its
//! derivative with respect to `m` is `ln m − b + 1` (the `theta` matrix),
//! which the backward pass and the cheap kernel evaluation both reuse.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{self, hadamard, matmul, matmul_nt, pairwise_sq_dist, Matrix};

/// Smallest squared distance allowed between two constellation points.
pub const DUP_EPS: f64 = 1e-10;

/// Lower clamp applied to squared distances before taking a logarithm.
pub const DEFAULT_M_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConstants {
    pub b: f64,
    pub c_offset: f64,
    pub m_floor: f64,
}

impl Default for KernelConstants {
    fn default() -> Self {
        KernelConstants {
            b: 10.0,
            c_offset: 1000.0,
            m_floor: DEFAULT_M_FLOOR,
        }
    }
}

impl KernelConstants {
    pub fn new(b: f64, c_offset: f64, m_floor: f64) -> Result<Self> {
        if !b.is_finite() || !c_offset.is_finite() {
            return Err(Error::Input("kernel constants must be finite".into()));
        }
        if !(m_floor > 0.0) || !m_floor.is_finite() {
            return Err(Error::Input(format!("m_floor must be positive, got {m_floor}")));
        }
        Ok(KernelConstants { b, c_offset, m_floor })
    }

    #[inline]
    fn log_clamped(&self, m: f64) -> f64 {
        m.max(self.m_floor).ln()
    }
}

fn require_nonnegative(m: &Matrix, op: &str) -> Result<()> {
    if let Some(pos) = m.as_slice().iter().position(|&v| v < 0.0) {
        return Err(Error::Input(format!(
            "{op}: negative squared distance {} at ({}, {})",
            m.as_slice()[pos],
            pos / m.cols(),
            pos % m.cols()
        )));
    }
    Ok(())
}

/// Elementwise kernel `m·(ln max(m, m_floor) − b) + c`.
///
/// The clamp only guards the logarithm; the leading factor keeps the true
/// `m`, so `m = 0` maps to exactly `c`.
pub fn kernel_map(m: &Matrix, k: &KernelConstants) -> Result<Matrix> {
    require_nonnegative(m, "kernel_map")?;
    Ok(m.map(|v| v * (k.log_clamped(v) - k.b) + k.c_offset))
}

/// Elementwise kernel derivative `ln max(m, m_floor) − b + 1`.
pub fn theta_map(m: &Matrix, k: &KernelConstants) -> Result<Matrix> {
    require_nonnegative(m, "theta_map")?;
    Ok(m.map(|v| k.log_clamped(v) - k.b + 1.0))
}

/// Kernel recovered from a precomputed `theta`: `m ∘ (theta − 1) + c`.
pub fn kernel_from_theta(m: &Matrix, theta: &Matrix, k: &KernelConstants) -> Result<Matrix> {
    m.zip_with(theta, "kernel_from_theta", |mv, tv| mv * (tv - 1.0) + k.c_offset)
}

/// Per-batch intermediates cached by a forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Input batch, r×n_in.
    pub x_in: Matrix,
    /// Kernel derivative at every (row, key point) pair, r×k.
    pub theta: Matrix,
    /// Sensitivity of outputs to constellation values, `K·U`, r×k.
    pub h: Matrix,
    /// Output batch, r×n_out.
    pub x_out: Matrix,
}

/// The value-independent part of a forward pass: everything that depends
/// only on the input batch, the constellation and `U`.
#[derive(Clone, Debug)]
pub struct LayerBasis {
    pub theta: Matrix,
    pub kernel: Matrix,
    pub h: Matrix,
}

#[derive(Clone, Debug)]
pub struct PackageState {
    c: Arc<Matrix>,
    u: Arc<Matrix>,
    y: Matrix,
    lambda: Matrix,
    sigma2: f64,
}

impl PackageState {
    /// Builds a package from its constellation `c` (k×n_in) and values `y`
    /// (k×n_out), deriving `U = (K_C + σ²I)⁻¹` and `Λ = U·Y`.
    pub fn new(c: Matrix, y: Matrix, sigma2: f64, k: &KernelConstants) -> Result<Self> {
        if c.rows() != y.rows() {
            return Err(Error::dim(
                "PackageState::new",
                format!("constellation has {} points, values have {} rows", c.rows(), y.rows()),
            ));
        }
        let m_c = pairwise_sq_dist(&c, &c)?;
        let n = c.rows();
        for i in 0..n {
            for j in 0..i {
                if m_c[(i, j)] < DUP_EPS {
                    return Err(Error::Constellation(format!(
                        "points {j} and {i} are duplicates (squared distance {:.3e} < {DUP_EPS:e})",
                        m_c[(i, j)]
                    )));
                }
            }
        }
        let mut k_c = kernel_map(&m_c, k)?;
        k_c.mirror_upper();
        let u = numerics::regularized_inverse(&k_c, sigma2)?;
        let lambda = matmul(&u, &y)?;
        Ok(PackageState {
            c: Arc::new(c),
            u: Arc::new(u),
            y,
            lambda,
            sigma2,
        })
    }

    /// A package sharing this one's constellation and `U` but holding its
    /// own values.
    pub fn replicate(&self, y: Matrix) -> Result<Self> {
        if y.shape() != self.y.shape() {
            return Err(Error::dim(
                "PackageState::replicate",
                format!("{:?} vs {:?}", y.shape(), self.y.shape()),
            ));
        }
        let lambda = matmul(&self.u, &y)?;
        Ok(PackageState {
            c: Arc::clone(&self.c),
            u: Arc::clone(&self.u),
            y,
            lambda,
            sigma2: self.sigma2,
        })
    }

    /// True when both packages point at the same constellation and `U`.
    pub fn shares_basis_with(&self, other: &PackageState) -> bool {
        Arc::ptr_eq(&self.c, &other.c) && Arc::ptr_eq(&self.u, &other.u)
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn lambda(&self) -> &Matrix {
        &self.lambda
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Number of constellation points.
    pub fn k(&self) -> usize {
        self.c.rows()
    }

    pub fn n_in(&self) -> usize {
        self.c.cols()
    }

    pub fn n_out(&self) -> usize {
        self.y.cols()
    }

    /// Replaces the values and recomputes `Λ = U·Y`.
    pub fn set_values(&mut self, y_new: Matrix) -> Result<()> {
        if y_new.shape() != self.y.shape() {
            return Err(Error::dim(
                "set_values",
                format!("{:?} vs {:?}", y_new.shape(), self.y.shape()),
            ));
        }
        self.lambda = matmul(&self.u, &y_new)?;
        self.y = y_new;
        Ok(())
    }

    fn check_input(&self, x_in: &Matrix) -> Result<()> {
        if x_in.cols() != self.n_in() {
            return Err(Error::dim(
                "package forward",
                format!("input has {} columns, package expects {}", x_in.cols(), self.n_in()),
            ));
        }
        Ok(())
    }

    /// Squared distances, theta and the kernel matrix for a batch.
    pub(crate) fn theta_and_kernel(&self, x_in: &Matrix, k: &KernelConstants) -> Result<(Matrix, Matrix)> {
        self.check_input(x_in)?;
        let m = pairwise_sq_dist(x_in, &self.c)?;
        let theta = theta_map(&m, k)?;
        let kernel = kernel_from_theta(&m, &theta, k)?;
        Ok((theta, kernel))
    }

    pub fn basis(&self, x_in: &Matrix, k: &KernelConstants) -> Result<LayerBasis> {
        let (theta, kernel) = self.theta_and_kernel(x_in, k)?;
        let h = matmul(&kernel, &self.u)?;
        Ok(LayerBasis { theta, kernel, h })
    }

    /// `K·Λ` for a precomputed basis.
    pub fn output_from_basis(&self, basis: &LayerBasis) -> Result<Matrix> {
        matmul(&basis.kernel, &self.lambda)
    }

    /// Evaluates the package on a batch and keeps what the backward pass and
    /// the trainer need.
    pub fn forward(&self, x_in: &Matrix, k: &KernelConstants) -> Result<(Matrix, LayerTrace)> {
        let basis = self.basis(x_in, k)?;
        let x_out = self.output_from_basis(&basis)?;
        let trace = self.trace_from_basis(x_in, basis, x_out.clone());
        Ok((x_out, trace))
    }

    pub(crate) fn trace_from_basis(&self, x_in: &Matrix, basis: LayerBasis, x_out: Matrix) -> LayerTrace {
        LayerTrace {
            x_in: x_in.clone(),
            theta: basis.theta,
            h: basis.h,
            x_out,
        }
    }

    /// Output only, skipping `H`.
    pub fn evaluate(&self, x_in: &Matrix, k: &KernelConstants) -> Result<Matrix> {
        let (_, kernel) = self.theta_and_kernel(x_in, k)?;
        matmul(&kernel, &self.lambda)
    }

    /// Maps derivatives with respect to this package's outputs (`g_out`,
    /// r×n_out) to derivatives with respect to its inputs (r×n_in).
    ///
    /// With `Ψ = Θ ∘ (G·Λᵀ)` the result is `2·(X ∘ (Ψ·1·1ᵀ) − Ψ·C)`; the
    /// factor 2 is `∂m/∂x = 2(x − c)`.
    pub fn backward(&self, trace: &LayerTrace, g_out: &Matrix) -> Result<Matrix> {
        if g_out.shape() != trace.x_out.shape() {
            return Err(Error::dim(
                "package backward",
                format!("gradient {:?} vs output {:?}", g_out.shape(), trace.x_out.shape()),
            ));
        }
        let psi = hadamard(&trace.theta, &matmul_nt(g_out, &self.lambda)?)?;
        let row_sums = psi.row_sums();
        let psi_c = matmul(&psi, &self.c)?;
        let (r, n) = trace.x_in.shape();
        let mut out = Vec::with_capacity(r * n);
        for (i, &s) in row_sums.iter().enumerate() {
            for (&x, &pc) in trace.x_in.row(i).iter().zip(psi_c.row(i)) {
                out.push(2.0 * (x * s - pc));
            }
        }
        Matrix::checked(r, n, out, "package backward")
    }
}
