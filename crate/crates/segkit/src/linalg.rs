//! Dense linear-algebra kernels used by the estimators: Householder QR with
//! column pivoting (Businger-Golub), triangular solves and Cholesky.
//!
//! Everything here is plain f64 with a deterministic operation order, so
//! results are bit-stable across runs.

use ndarray::{Array1, Array2};

/// Column-pivoted QR factorization of an n x k matrix (n >= k):
/// `A P = Q R` with Q orthogonal (stored as Householder reflectors) and R
/// upper triangular with non-increasing |diagonal|.
pub struct QrPivot {
    /// Reflectors below the diagonal, R on and above it.
    qr: Array2<f64>,
    /// Householder scalars.
    tau: Vec<f64>,
    /// Column permutation: factored column j came from input column jpvt[j].
    pub jpvt: Vec<usize>,
    n: usize,
    k: usize,
}

pub fn qr_pivot(a: &Array2<f64>) -> QrPivot {
    let (n, k) = a.dim();
    assert!(n >= k, "qr_pivot requires n >= k");
    let mut qr = a.clone();
    let mut tau = vec![0.0; k];
    let mut jpvt: Vec<usize> = (0..k).collect();
    let mut col_norms: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| qr[[i, j]] * qr[[i, j]]).sum())
        .collect();

    for step in 0..k {
        // pivot on the largest remaining column norm
        let (pivot, _) = col_norms
            .iter()
            .enumerate()
            .skip(step)
            .fold((step, -1.0), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
        if pivot != step {
            for i in 0..n {
                qr.swap([i, step], [i, pivot]);
            }
            jpvt.swap(step, pivot);
            col_norms.swap(step, pivot);
        }

        // Householder reflector annihilating column `step` below the diagonal
        let mut norm_sq = 0.0;
        for i in step..n {
            norm_sq += qr[[i, step]] * qr[[i, step]];
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            tau[step] = 0.0;
            continue;
        }
        let alpha = if qr[[step, step]] >= 0.0 { -norm } else { norm };
        let v0 = qr[[step, step]] - alpha;
        tau[step] = -v0 / alpha;
        let inv_v0 = 1.0 / v0;
        for i in (step + 1)..n {
            qr[[i, step]] *= inv_v0;
        }
        qr[[step, step]] = alpha;

        // apply the reflector to the trailing columns
        for j in (step + 1)..k {
            let mut dot = qr[[step, j]];
            for i in (step + 1)..n {
                dot += qr[[i, step]] * qr[[i, j]];
            }
            dot *= tau[step];
            qr[[step, j]] -= dot;
            for i in (step + 1)..n {
                let h = qr[[i, step]];
                qr[[i, j]] -= dot * h;
            }
            // exact norm downdate; recomputation is not needed at the sizes
            // this crate works with, the guard just avoids negative values
            col_norms[j] = (col_norms[j] - qr[[step, j]] * qr[[step, j]]).max(0.0);
        }
        col_norms[step] = 0.0;
    }

    QrPivot { qr, tau, jpvt, n, k }
}

impl QrPivot {
    pub fn r_diag(&self, j: usize) -> f64 {
        self.qr[[j, j]]
    }

    /// Numerical rank: the number of diagonal entries of R above
    /// `max(n,k) * eps * |r_00|`.
    pub fn rank(&self) -> usize {
        let tol = self.n.max(self.k) as f64 * f64::EPSILON * self.qr[[0, 0]].abs();
        (0..self.k).take_while(|&j| self.qr[[j, j]].abs() > tol).count()
    }

    /// Input-column indices judged linearly dependent on the preceding ones.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let r = self.rank();
        let mut cols: Vec<usize> = self.jpvt[r..].to_vec();
        cols.sort_unstable();
        cols
    }

    /// Apply Q' to a right-hand side.
    fn qt_mul(&self, b: &Array1<f64>) -> Array1<f64> {
        let mut y = b.clone();
        for step in 0..self.k {
            if self.tau[step] == 0.0 {
                continue;
            }
            let mut dot = y[step];
            for i in (step + 1)..self.n {
                dot += self.qr[[i, step]] * y[i];
            }
            dot *= self.tau[step];
            y[step] -= dot;
            for i in (step + 1)..self.n {
                let h = self.qr[[i, step]];
                y[i] -= dot * h;
            }
        }
        y
    }

    /// Least-squares solution of `min ||Ax - b||`, assuming full column rank.
    pub fn solve_ls(&self, b: &Array1<f64>) -> Array1<f64> {
        let y = self.qt_mul(b);
        // back-substitute R z = y[..k]
        let mut z = Array1::zeros(self.k);
        for j in (0..self.k).rev() {
            let mut s = y[j];
            for m in (j + 1)..self.k {
                s -= self.qr[[j, m]] * z[m];
            }
            z[j] = s / self.qr[[j, j]];
        }
        // undo the pivot
        let mut x = Array1::zeros(self.k);
        for j in 0..self.k {
            x[self.jpvt[j]] = z[j];
        }
        x
    }

    /// `(A'A)^-1` assembled from the R factor: `P R^-1 R^-T P'`.
    pub fn xtx_inverse(&self) -> Array2<f64> {
        let k = self.k;
        // R^-1 by back-substitution against identity columns
        let mut rinv = Array2::zeros((k, k));
        for col in 0..k {
            for j in (0..=col).rev() {
                let mut s = if j == col { 1.0 } else { 0.0 };
                for m in (j + 1)..=col {
                    s -= self.qr[[j, m]] * rinv[[m, col]];
                }
                rinv[[j, col]] = s / self.qr[[j, j]];
            }
        }
        let mut inv_perm = Array2::zeros((k, k));
        for a in 0..k {
            for b in 0..k {
                let mut s = 0.0;
                for m in b.max(a)..k {
                    s += rinv[[a, m]] * rinv[[b, m]];
                }
                inv_perm[[a, b]] = s;
            }
        }
        // undo the pivot on both sides
        let mut out = Array2::zeros((k, k));
        for a in 0..k {
            for b in 0..k {
                out[[self.jpvt[a], self.jpvt[b]]] = inv_perm[[a, b]];
            }
        }
        out
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix, or None
/// when a pivot is not strictly positive.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let k = a.nrows();
    assert_eq!(k, a.ncols());
    let mut l: Array2<f64> = Array2::zeros((k, k));
    for j in 0..k {
        let mut d = a[[j, j]];
        for m in 0..j {
            d -= l[[j, m]] * l[[j, m]];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for i in (j + 1)..k {
            let mut s = a[[i, j]];
            for m in 0..j {
                s -= l[[i, m]] * l[[j, m]];
            }
            l[[i, j]] = s / dj;
        }
    }
    Some(l)
}

/// Solve `L L' x = b` given the lower Cholesky factor.
pub fn chol_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let k = l.nrows();
    let mut y = Array1::zeros(k);
    for i in 0..k {
        let mut s = b[i];
        for m in 0..i {
            s -= l[[i, m]] * y[m];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::zeros(k);
    for i in (0..k).rev() {
        let mut s = y[i];
        for m in (i + 1)..k {
            s -= l[[m, i]] * x[m];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// `(L L')^-1` given the lower Cholesky factor.
pub fn chol_inverse(l: &Array2<f64>) -> Array2<f64> {
    let k = l.nrows();
    let mut out = Array2::zeros((k, k));
    for col in 0..k {
        let mut e = Array1::zeros(k);
        e[col] = 1.0;
        let x = chol_solve(l, &e);
        for i in 0..k {
            out[[i, col]] = x[i];
        }
    }
    // symmetrize to remove round-off drift
    for a in 0..k {
        for b in (a + 1)..k {
            let v = 0.5 * (out[[a, b]] + out[[b, a]]);
            out[[a, b]] = v;
            out[[b, a]] = v;
        }
    }
    out
}
