//! Dense helpers shared by the knockoff constructions and the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Eigenvalues in `[-PSD_TOL, 0)` are treated as numerical zeros.
pub const PSD_TOL: f64 = 1e-8;

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(format!(" ({what})")))
}

/// `XᵀX` through the gemm kernel; `tr_mul` falls back to dot products.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let xt = x.transpose();
    let mut g = &xt * x;
    symmetrize(&mut g);
    g
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for j in 0..k {
        for i in (j + 1)..k {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

const CHOLESKY_BLOCK: usize = 96;

/// Right-looking blocked Cholesky; the trailing updates go through gemm.
/// Returns the lower factor (upper triangle left as garbage) or `None` when
/// the matrix is not positive definite.
pub fn blocked_cholesky(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut k = 0;
    while k < n {
        let b = CHOLESKY_BLOCK.min(n - k);
        let l11 = a.view((k, k), (b, b)).into_owned().cholesky()?.unpack();
        a.view_mut((k, k), (b, b)).copy_from(&l11);
        let rest = n - k - b;
        if rest > 0 {
            // L21 = A21 L11⁻ᵀ, i.e. L11 L21ᵀ = A21ᵀ.
            let a21t = a.view((k + b, k), (rest, b)).transpose();
            let l21t = l11.solve_lower_triangular(&a21t)?;
            let l21 = l21t.transpose();
            a.view_mut((k + b, k), (rest, b)).copy_from(&l21);
            a.view_mut((k + b, k + b), (rest, rest)).gemm(-1.0, &l21, &l21t, 1.0);
        }
        k += b;
    }
    Some(a)
}

/// Lower Cholesky factor that supports deleting a row and column in place.
pub struct ShrinkingCholesky {
    /// Column-major storage with a fixed stride; only the lower triangle of
    /// the leading `n × n` block is meaningful.
    l: Vec<f64>,
    stride: usize,
    n: usize,
}

impl ShrinkingCholesky {
    /// Factors a symmetric positive definite matrix; `None` otherwise.
    pub fn new(a: DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        let l = blocked_cholesky(a)?;
        Some(Self {
            l: l.as_slice().to_vec(),
            stride: n,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.stride + i
    }

    /// Solves `A x = b` for the currently factored `A`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut x = b.clone();
        for k in 0..n {
            let col = &self.l[self.idx(0, k)..self.idx(n, k)];
            x[k] /= col[k];
            let xk = x[k];
            for i in (k + 1)..n {
                x[i] -= col[i] * xk;
            }
        }
        for k in (0..n).rev() {
            let col = &self.l[self.idx(0, k)..self.idx(n, k)];
            let mut acc = x[k];
            for i in (k + 1)..n {
                acc -= col[i] * x[i];
            }
            x[k] = acc / col[k];
        }
        x
    }

    /// Deletes row and column `r` of the factored matrix in `O(n²)`.
    pub fn remove(&mut self, r: usize) {
        let n = self.n;
        assert!(r < n, "row {r} out of range for dimension {n}");
        // The trailing block absorbs column r as a rank-one update.
        let mut x: Vec<f64> = ((r + 1)..n).map(|i| self.l[self.idx(i, r)]).collect();
        for (k, kk) in ((r + 1)..n).enumerate() {
            let d = self.idx(kk, kk);
            let lkk = self.l[d];
            let rad = lkk.hypot(x[k]);
            let (c, s) = (rad / lkk, x[k] / lkk);
            self.l[d] = rad;
            for (t, i) in ((kk + 1)..n).enumerate() {
                let xi = &mut x[k + 1 + t];
                let li = self.idx(i, kk);
                let v = (self.l[li] + s * *xi) / c;
                self.l[li] = v;
                *xi = c * *xi - s * v;
            }
        }
        // Shift the lower triangle left and up past row/column r. Sources
        // never precede destinations in storage order, so this is in place.
        for j in 0..(n - 1) {
            let sj = if j < r { j } else { j + 1 };
            for i in j..(n - 1) {
                let si = if i < r { i } else { i + 1 };
                let (dst, src) = (self.idx(i, j), self.idx(si, sj));
                self.l[dst] = self.l[src];
            }
        }
        self.n = n - 1;
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..k {
        for i in (j + 1)..k {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Returns `C` with `CᵀC = m` for a symmetric positive semidefinite `m`.
///
/// Eigenvalues in `[-PSD_TOL, 0)` are clamped to zero; anything more negative
/// is reported as a genuine infeasibility.
pub fn psd_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.min();
    if lo < -PSD_TOL {
        return Err(Error::NotPositiveDefinite(format!(
            " ({what}: minimum eigenvalue {lo:.3e})"
        )));
    }
    let k = m.nrows();
    let mut c = eig.eigenvectors.transpose();
    for r in 0..k {
        let s = eig.eigenvalues[r].max(0.0).sqrt();
        c.row_mut(r).scale_mut(s);
    }
    Ok(c)
}

/// Symmetric positive semidefinite factor that prefers Cholesky and falls
/// back to the clamped eigen factor on the boundary of the cone.
pub fn sampling_factor(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(ch) => Ok(ch.l().transpose()),
        None => psd_factor(m, what),
    }
}

pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_cholesky_matches_unblocked() {
        let n = 250;
        let b = DMatrix::from_fn(n + 10, n, |i, j| (((i * 7919 + j * 104729) % 997) as f64 / 997.0) - 0.5);
        let a = b.transpose() * &b + DMatrix::identity(n, n);
        let l = blocked_cholesky(a.clone()).unwrap().lower_triangle();
        let reference = a.clone().cholesky().unwrap().unpack();
        assert!((l - reference).amax() < 1e-10);
        let mut bad = a;
        bad[(200, 200)] = -1.0;
        assert!(blocked_cholesky(bad).is_none());
    }

    #[test]
    fn shrinking_cholesky_matches_refactorization() {
        let n = 9;
        let b = DMatrix::from_fn(n + 4, n, |i, j| ((i * 31 + j * 17) % 11) as f64 - 5.0 + if i == j { 3.0 } else { 0.0 });
        let a = b.transpose() * &b;
        let mut ch = ShrinkingCholesky::new(a.clone()).unwrap();
        let mut keep: Vec<usize> = (0..n).collect();
        for &r in &[4usize, 0, 6, 2] {
            ch.remove(r);
            keep.remove(r);
            let sub = DMatrix::from_fn(keep.len(), keep.len(), |i, j| a[(keep[i], keep[j])]);
            let rhs = DVector::from_fn(keep.len(), |i, _| i as f64 - 1.5);
            let x = ch.solve(&rhs);
            let direct = sub.clone().cholesky().unwrap().solve(&rhs);
            assert!((x - direct).amax() < 1e-9);
        }
        assert_eq!(ch.dim(), 5);
    }
    use approx::assert_relative_eq;

    #[test]
    fn psd_factor_reconstructs_singular_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = psd_factor(&m, "test").unwrap();
        let back = c.transpose() * &c;
        for (a, b) in back.iter().zip(m.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            psd_factor(&m, "test"),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn gram_matches_naive_product() {
        let x = DMatrix::from_fn(7, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let g = gram(&x);
        let naive = x.transpose() * &x;
        for (a, b) in g.iter().zip(naive.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }
}
