//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Matrices are `ndarray` arrays in standard (row-major) layout. Vectors that
//! represent samples are stored as matrix columns.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Dense real matrix, row-major.
pub type DenseMatrix = Array2<f64>;

/// Dense real vector.
pub type Vector = Array1<f64>;

/// Number of power-iteration sweeps used for spectral bounds.
pub const POWER_ITERATIONS: usize = 50;

/// Returns an error naming `what` if any entry is NaN or infinite.
pub fn ensure_finite(m: ArrayView2<'_, f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn norm1(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm2_sq(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn frobenius_sq(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}

pub fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Estimate of the largest eigenvalue of `DᵀD` (the squared spectral norm of
/// `D`) by power iteration from a fixed, non-degenerate start vector.
pub fn spectral_norm_sq(d: ArrayView2<'_, f64>) -> f64 {
    let cols = d.ncols();
    if cols == 0 || d.nrows() == 0 {
        return 0.0;
    }
    let mut v: Array1<f64> = (0..cols)
        .map(|i| 1.0 + ((i as f64) * 0.618_033_988_749_895).fract())
        .collect();
    let n = norm2_sq(v.view()).sqrt();
    v /= n;
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let dv = d.dot(&v);
        estimate = norm2_sq(dv.view());
        let w = d.t().dot(&dv);
        let wn = norm2_sq(w.view()).sqrt();
        if wn == 0.0 {
            return estimate;
        }
        v = w / wn;
    }
    // The Rayleigh quotient of the final iterate.
    estimate.max(norm2_sq(d.dot(&v).view()))
}

/// Rescales every column of `m` to unit ℓ2 norm. Zero columns are left untouched.
pub fn normalize_columns(m: &mut DenseMatrix) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let n = norm2_sq(col.view()).sqrt();
        if n > 0.0 {
            col /= n;
        }
    }
}

/// Projects every column of `m` onto the unit ℓ2 ball.
pub fn project_columns_to_unit_ball(m: &mut DenseMatrix) {
    for mut col in m.axis_iter_mut(Axis(1)) {
        let n = norm2_sq(col.view()).sqrt();
        if n > 1.0 {
            col /= n;
        }
    }
}

pub fn max_column_norm(m: ArrayView2<'_, f64>) -> f64 {
    m.axis_iter(Axis(1))
        .map(|c| norm2_sq(c).sqrt())
        .fold(0.0, f64::max)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub struct Cholesky {
    lower: DenseMatrix,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "Cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut l = DenseMatrix::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::SingularSystem { row: j, pivot: diag });
            }
            let ljj = diag.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                let (ri, rj) = (l.row(i), l.row(j));
                for k in 0..j {
                    s -= ri[k] * rj[k];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Ok(Cholesky { lower: l })
    }

    /// Solves `A x = b` for one right-hand side.
    pub fn solve_vec(&self, b: ArrayView1<'_, f64>) -> Vector {
        let l = &self.lower;
        let n = l.nrows();
        let mut y = b.to_owned();
        for i in 0..n {
            let row = l.row(i);
            let mut s = y[i];
            for k in 0..i {
                s -= row[k] * y[k];
            }
            y[i] = s / row[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }

    /// Solves `A X = B` column by column.
    pub fn solve(&self, b: ArrayView2<'_, f64>) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.solve_vec(col));
        }
        out
    }
}

/// Conjugate gradient for a symmetric positive-definite operator given as a
/// matrix-vector product. Stops when the residual norm falls below
/// `tol · ‖b‖` or after `max_iter` steps; returns the iterate and whether the
/// tolerance was met.
pub fn conjugate_gradient(
    apply: impl Fn(ArrayView1<'_, f64>) -> Vector,
    b: ArrayView1<'_, f64>,
    tol: f64,
    max_iter: usize,
) -> (Vector, bool) {
    let mut x = Vector::zeros(b.len());
    let mut r = b.to_owned();
    let b_norm = norm2_sq(b).sqrt();
    if b_norm == 0.0 {
        return (x, true);
    }
    let mut p = r.clone();
    let mut rs = norm2_sq(r.view());
    for _ in 0..max_iter {
        if rs.sqrt() <= tol * b_norm {
            return (x, true);
        }
        let ap = apply(p.view());
        let denom = p.dot(&ap);
        if denom <= 0.0 {
            return (x, false);
        }
        let alpha = rs / denom;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        let rs_next = norm2_sq(r.view());
        p = &r + &(&p * (rs_next / rs));
        rs = rs_next;
    }
    (x, rs.sqrt() <= tol * b_norm)
}
