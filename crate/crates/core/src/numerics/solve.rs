use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi -= alpha * xi;
    }
}

/// Largest `|a_ij − a_ji|` relative to `max |a|`.
pub fn symmetry_defect(a: &Matrix) -> f64 {
    let n = a.rows();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

fn require_square(a: &Matrix, op: &'static str) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::dim(op, format!("matrix is {}x{}", a.rows(), a.cols())));
    }
    Ok(())
}

fn require_symmetric(a: &Matrix, op: &'static str) -> Result<()> {
    let defect = symmetry_defect(a);
    if defect > SYMMETRY_TOL {
        return Err(Error::Input(format!(
            "{op}: matrix is not symmetric (relative defect {defect:.3e})"
        )));
    }
    Ok(())
}

/// Lower Cholesky factor, row-major, upper part left as zeros.
fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    let data = l.data_mut();
    for i in 0..n {
        let (done, rest) = data.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        for j in 0..i {
            let row_j = &done[j * n..j * n + n];
            let s = a[(i, j)] - dot(&row_i[..j], &row_j[..j]);
            row_i[j] = s / row_j[j];
        }
        let d = a[(i, i)] - dot(&row_i[..i], &row_i[..i]);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular {
                pivot: i,
                hint: format!("non-positive pivot {d:.3e} in symmetric factorization"),
            });
        }
        row_i[i] = d.sqrt();
    }
    Ok(l)
}

/// Solves `a·s = rhs` for symmetric positive definite `a` through a
/// Cholesky factorization.
pub fn spd_solve(a: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    require_square(a, "spd_solve")?;
    if rhs.rows() != a.rows() {
        return Err(Error::dim(
            "spd_solve",
            format!("system is {}x{}, rhs has {} rows", a.rows(), a.cols(), rhs.rows()),
        ));
    }
    require_symmetric(a, "spd_solve")?;
    let l = cholesky(a)?;
    let n = a.rows();
    let mut s = rhs.clone();
    // L z = rhs
    for i in 0..n {
        let li = l.row(i);
        let (done, rest) = s.data_mut().split_at_mut(i * rhs.cols());
        let zi = &mut rest[..rhs.cols()];
        for (j, &lij) in li[..i].iter().enumerate() {
            if lij != 0.0 {
                axpy(lij, &done[j * rhs.cols()..(j + 1) * rhs.cols()], zi);
            }
        }
        let d = li[i];
        zi.iter_mut().for_each(|v| *v /= d);
    }
    // Lᵀ s = z
    let w = rhs.cols();
    for i in (0..n).rev() {
        let li = l.row(i);
        let d = li[i];
        let (head, tail) = s.data_mut().split_at_mut(i * w);
        let si = &mut tail[..w];
        si.iter_mut().for_each(|v| *v /= d);
        for (j, &lij) in li[..i].iter().enumerate() {
            if lij != 0.0 {
                axpy(lij, si, &mut head[j * w..(j + 1) * w]);
            }
        }
    }
    Matrix::checked(n, w, s.into_vec(), "spd_solve")
}

struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

fn lu_factor(a: &Matrix) -> Result<Lu> {
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let tiny = a.max_abs() * f64::EPSILON * n as f64;
    for k in 0..n {
        let mut p = k;
        let mut best = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if !(best > tiny) {
            return Err(Error::Singular {
                pivot: k,
                hint: format!("pivot magnitude {best:.3e} below {tiny:.3e}"),
            });
        }
        if p != k {
            perm.swap(p, k);
            let data = lu.data_mut();
            for j in 0..n {
                data.swap(k * n + j, p * n + j);
            }
        }
        let data = lu.data_mut();
        let (top, bottom) = data.split_at_mut((k + 1) * n);
        let pivot_row = &top[k * n..];
        let pivot = pivot_row[k];
        for i in 0..n - k - 1 {
            let row = &mut bottom[i * n..(i + 1) * n];
            let l = row[k] / pivot;
            row[k] = l;
            if l != 0.0 {
                axpy(l, &pivot_row[k + 1..], &mut row[k + 1..]);
            }
        }
    }
    Ok(Lu { lu, perm })
}

impl Lu {
    fn solve(&self, rhs: &Matrix) -> Matrix {
        let n = self.lu.rows();
        let w = rhs.cols();
        let mut x = rhs.select_rows(&self.perm).expect("permutation in range");
        let data = x.data_mut();
        for i in 0..n {
            let li = self.lu.row(i);
            let (done, rest) = data.split_at_mut(i * w);
            let xi = &mut rest[..w];
            for (j, &lij) in li[..i].iter().enumerate() {
                if lij != 0.0 {
                    axpy(lij, &done[j * w..(j + 1) * w], xi);
                }
            }
        }
        for i in (0..n).rev() {
            let ui = self.lu.row(i);
            let (head, tail) = data.split_at_mut(i * w);
            let xi = &mut tail[..w];
            let d = ui[i];
            xi.iter_mut().for_each(|v| *v /= d);
            for j in 0..i {
                let uji = self.lu[(j, i)];
                if uji != 0.0 {
                    axpy(uji, xi, &mut head[j * w..(j + 1) * w]);
                }
            }
        }
        x
    }
}

/// Solves a general square system by LU with partial pivoting.
pub fn lu_solve(a: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    require_square(a, "lu_solve")?;
    if rhs.rows() != a.rows() {
        return Err(Error::dim(
            "lu_solve",
            format!("system is {}x{}, rhs has {} rows", a.rows(), a.cols(), rhs.rows()),
        ));
    }
    let x = lu_factor(a)?.solve(rhs);
    Matrix::checked(x.rows(), x.cols(), x.into_vec(), "lu_solve")
}

/// `(a + sigma2·I)⁻¹` for symmetric `a`, returned exactly symmetric.
///
/// The kernel matrices this serves are symmetric but indefinite, so the
/// factorization is pivoted LU rather than Cholesky.
pub fn regularized_inverse(a: &Matrix, sigma2: f64) -> Result<Matrix> {
    require_square(a, "regularized_inverse")?;
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Input(format!("sigma2 must be finite and >= 0, got {sigma2}")));
    }
    require_symmetric(a, "regularized_inverse")?;
    let shifted = a.add_diagonal(sigma2)?;
    let lu = lu_factor(&shifted).map_err(|e| match e {
        Error::Singular { pivot, hint } => Error::Singular {
            pivot,
            hint: format!("{hint}; increase sigma2 (currently {sigma2:e})"),
        },
        other => other,
    })?;
    let n = a.rows();
    let inv = lu.solve(&Matrix::identity(n));
    let mut sym = inv.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    Matrix::checked(n, n, sym.into_vec(), "regularized_inverse")
}
