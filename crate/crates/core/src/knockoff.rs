//! Second-order Gaussian knockoffs: the diagonal `D`, knockoff design
//! columns, knockoff z-scores and the joint correlation `Σ_M`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::data::{standardize, LdMatrix, StandardizedMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, PSD_TOL};
use crate::seed;

/// Jitter added to the feasibility matrix before the Cholesky test in the
/// coordinate solver. Keeps returned solutions inside the `-PSD_TOL` band.
const FEASIBILITY_JITTER: f64 = 1e-9;
const BISECTION_TOL: f64 = 1e-6;

fn validate_sigma(sigma: &DMatrix<f64>) -> Result<()> {
    if sigma.nrows() != sigma.ncols() {
        return Err(Error::dims("covariance rows vs columns", sigma.nrows(), sigma.ncols()));
    }
    linalg::cholesky(sigma, "covariance")?;
    Ok(())
}

fn ratio(m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("knockoff count M must be positive".into()));
    }
    Ok((m as f64 + 1.0) / m as f64)
}

/// `s_j = min(1, ((M+1)/M) λ_min(Σ))` for every `j`.
pub fn solve_d_equicorrelated(sigma: &DMatrix<f64>, m: usize) -> Result<DVector<f64>> {
    let r = ratio(m)?;
    validate_sigma(sigma)?;
    let lmin = linalg::min_eigenvalue(sigma);
    let s = (r * lmin).min(1.0).max(0.0);
    Ok(DVector::from_element(sigma.nrows(), s))
}

fn feasible(base: &DMatrix<f64>, s: &DVector<f64>) -> bool {
    let mut a = base.clone();
    for j in 0..s.len() {
        a[(j, j)] += FEASIBILITY_JITTER - s[j];
    }
    a.cholesky().is_some()
}

/// Coordinate ascent on `Σ_j |1 - s_j|` under `((M+1)/M)Σ - D ⪰ 0`.
///
/// Starts at the equicorrelated point; each sweep raises every `s_j` toward 1
/// by bisection against a Cholesky feasibility test. The result dominates the
/// starting point coordinate-wise.
pub fn solve_d_coordinate(sigma: &DMatrix<f64>, m: usize, max_iter: usize) -> Result<DVector<f64>> {
    let mut s = solve_d_equicorrelated(sigma, m)?;
    let base = sigma * ratio(m)?;
    let p = s.len();
    for _ in 0..max_iter {
        let mut moved = false;
        for j in 0..p {
            let start = s[j];
            if start >= 1.0 {
                continue;
            }
            s[j] = 1.0;
            if feasible(&base, &s) {
                moved = true;
                continue;
            }
            let (mut lo, mut hi) = (start, 1.0);
            while hi - lo > BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                s[j] = mid;
                if feasible(&base, &s) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            s[j] = lo;
            if lo - start > BISECTION_TOL {
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Ok(s)
}

/// Everything needed to sample knockoff copies for one covariance.
#[derive(Clone, Debug)]
pub struct KnockoffModel {
    sigma: DMatrix<f64>,
    d_diag: DVector<f64>,
    m: usize,
    /// `I - Σ⁻¹D`; knockoff rows are `xᵀ(I - Σ⁻¹D) + noise`.
    conditional_mean_map: DMatrix<f64>,
    /// `C` with `CᵀC = 2D - DΣ⁻¹D` (only for `M = 1`).
    conditional_cov_factor: Option<DMatrix<f64>>,
}

impl KnockoffModel {
    pub fn new(sigma: &DMatrix<f64>, d_diag: DVector<f64>, m: usize) -> Result<Self> {
        let r = ratio(m)?;
        let p = sigma.nrows();
        if d_diag.len() != p {
            return Err(Error::dims("D diagonal vs covariance", d_diag.len(), p));
        }
        if d_diag.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidArgument("knockoff D must be non-negative".into()));
        }
        let chol = linalg::cholesky(sigma, "covariance")?;
        let mut slack = sigma * r;
        for j in 0..p {
            slack[(j, j)] -= d_diag[j];
        }
        let lmin = linalg::min_eigenvalue(&slack);
        if lmin < -PSD_TOL {
            return Err(Error::NotPositiveDefinite(format!(
                " (((M+1)/M)Σ - D has eigenvalue {lmin:.3e})"
            )));
        }
        let d = DMatrix::from_diagonal(&d_diag);
        let sigma_inv_d = chol.solve(&d);
        let mean_map = DMatrix::identity(p, p) - &sigma_inv_d;
        let conditional_cov_factor = if m == 1 {
            let mut v = &d * 2.0 - &d * &sigma_inv_d;
            linalg::symmetrize(&mut v);
            Some(linalg::sampling_factor(&v, "knockoff conditional covariance")?)
        } else {
            None
        };
        Ok(Self {
            sigma: sigma.clone(),
            d_diag,
            m,
            conditional_mean_map: mean_map,
            conditional_cov_factor,
        })
    }

    pub fn equicorrelated(sigma: &DMatrix<f64>, m: usize) -> Result<Self> {
        let d = solve_d_equicorrelated(sigma, m)?;
        Self::new(sigma, d, m)
    }

    pub fn from_ld(ld: &LdMatrix, m: usize) -> Result<Self> {
        Self::equicorrelated(ld.sigma(), m)
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn d_diag(&self) -> &DVector<f64> {
        &self.d_diag
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn conditional_mean_map(&self) -> &DMatrix<f64> {
        &self.conditional_mean_map
    }

    fn factor(&self) -> Result<&DMatrix<f64>> {
        self.conditional_cov_factor
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("knockoff sampling supports M = 1 only".into()))
    }

    pub fn sigma_m(&self) -> Result<SigmaM> {
        build_sigma_m(&self.sigma, &self.d_diag, self.m)
    }
}

fn normal_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    let mut out = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    out
}

/// Knockoff copy `X(I - Σ⁻¹D) + E C` of a standardized design, re-standardized.
pub fn sample_knockoffs(x: &StandardizedMatrix, model: &KnockoffModel, seed: u64) -> Result<StandardizedMatrix> {
    let c = model.factor()?;
    if x.ncols() != model.p() {
        return Err(Error::dims("design columns vs knockoff model", x.ncols(), model.p()));
    }
    let e = normal_matrix(x.nrows(), x.ncols(), seed);
    let raw = x.values() * &model.conditional_mean_map + e * c;
    standardize(&raw)
}

/// Knockoff z-scores `z̃ = (I - DΣ⁻¹)z + Cᵀε`; returns `Z_M = (z, z̃)`.
pub fn sample_knockoff_zscores(z: &DVector<f64>, model: &KnockoffModel, seed: u64) -> Result<DVector<f64>> {
    let c = model.factor()?;
    let p = model.p();
    if z.len() != p {
        return Err(Error::dims("z-scores vs knockoff model", z.len(), p));
    }
    let mut rng = seed::rng(seed);
    let eps = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
    let zk = model.conditional_mean_map.tr_mul(z) + c.tr_mul(&eps);
    let mut out = DVector::zeros(2 * p);
    out.rows_mut(0, p).copy_from(z);
    out.rows_mut(p, p).copy_from(&zk);
    Ok(out)
}

/// Joint correlation of originals and `M` knockoff copies: `Σ` on the
/// diagonal blocks and `Σ - D` everywhere else.
#[derive(Clone, Debug)]
pub struct SigmaM {
    matrix: DMatrix<f64>,
    p: usize,
    m: usize,
}

impl SigmaM {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wrap an arbitrary joint Gram matrix (e.g. the in-sample `[X, X̃]`
    /// correlation) so it can drive the summary-statistics solver.
    pub fn from_matrix(matrix: DMatrix<f64>, p: usize) -> Result<Self> {
        let k = matrix.nrows();
        if matrix.ncols() != k || p == 0 || k % p != 0 || k / p < 2 {
            return Err(Error::dims("joint matrix dimension vs p", k, p));
        }
        Ok(Self { matrix, p, m: k / p - 1 })
    }
}

pub fn build_sigma_m(sigma: &DMatrix<f64>, d: &DVector<f64>, m: usize) -> Result<SigmaM> {
    let r = ratio(m)?;
    let p = sigma.nrows();
    if d.len() != p {
        return Err(Error::dims("D diagonal vs covariance", d.len(), p));
    }
    if d.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidArgument("knockoff D must be non-negative".into()));
    }
    let mut slack = sigma * r;
    for j in 0..p {
        slack[(j, j)] -= d[j];
    }
    let lmin = linalg::min_eigenvalue(&slack);
    if lmin < -PSD_TOL {
        return Err(Error::NotPositiveDefinite(format!(
            " (((M+1)/M)Σ - D has eigenvalue {lmin:.3e})"
        )));
    }
    let mut off = sigma.clone();
    for j in 0..p {
        off[(j, j)] -= d[j];
    }
    let k = (m + 1) * p;
    let mut matrix = DMatrix::zeros(k, k);
    for a in 0..=m {
        for b in 0..=m {
            let block = if a == b { sigma } else { &off };
            matrix.view_mut((a * p, b * p), (p, p)).copy_from(block);
        }
    }
    linalg::symmetrize(&mut matrix);
    Ok(SigmaM { matrix, p, m })
}

pub fn ar1_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use approx::assert_relative_eq;

    #[test]
    fn identity_gives_unit_d() {
        let s = solve_d_equicorrelated(&DMatrix::identity(4, 4), 1).unwrap();
        assert!(s.iter().all(|v| *v == 1.0));
        let s = solve_d_coordinate(&DMatrix::identity(4, 4), 1, 10).unwrap();
        assert!(s.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn ar1_equicorrelated_matches_eigensolve() {
        let sigma = ar1_covariance(3, 0.5);
        let s = solve_d_equicorrelated(&sigma, 1).unwrap();
        // Independent route: full eigen-decomposition, smallest eigenvalue.
        let eig = sigma.clone().symmetric_eigen();
        let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        for v in s.iter() {
            assert_relative_eq!(*v, 2.0 * lmin, epsilon = 1e-12);
        }
        let slack = &sigma * 2.0 - DMatrix::from_diagonal(&s);
        assert!(min_eigenvalue(&slack) >= -1e-8);
    }

    #[test]
    fn equicorrelated_cap_active() {
        // 2x2 correlation with off-diagonal 0.4 has λ_min = 0.6.
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let s = solve_d_equicorrelated(&sigma, 1).unwrap();
        assert_eq!(s[0], 1.0);
        assert_eq!(s[1], 1.0);
    }

    #[test]
    fn coordinate_solution_is_feasible_and_no_worse() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let eq = solve_d_equicorrelated(&sigma, 1).unwrap();
        let s = solve_d_coordinate(&sigma, 1, 50).unwrap();
        let slack = &sigma * 2.0 - DMatrix::from_diagonal(&s);
        assert!(min_eigenvalue(&slack) >= -1e-8);
        let obj = |v: &DVector<f64>| v.iter().map(|s| (1.0 - s).abs()).sum::<f64>();
        assert!(obj(&s) <= obj(&eq) + 1e-12);
        assert!(s.iter().zip(eq.iter()).all(|(a, b)| a >= b));
    }

    #[test]
    fn coordinate_solver_improves_block_structured_sigma() {
        // A tight pair plus an independent coordinate: the free coordinate
        // can be raised all the way to 1.
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.0, 0.9, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let eq = solve_d_equicorrelated(&sigma, 1).unwrap();
        let s = solve_d_coordinate(&sigma, 1, 20).unwrap();
        assert!(eq[2] < 0.5);
        assert_relative_eq!(s[2], 1.0, epsilon = 1e-12);
        let slack = &sigma * 2.0 - DMatrix::from_diagonal(&s);
        assert!(min_eigenvalue(&slack) >= -1e-8);
    }

    #[test]
    fn identity_model_returns_pure_noise() {
        let x = standardize(&normal_matrix(100, 5, 1)).unwrap();
        let model = KnockoffModel::new(&DMatrix::identity(5, 5), DVector::from_element(5, 1.0), 1).unwrap();
        assert!(model.conditional_mean_map().iter().all(|v| v.abs() < 1e-15));
        let xk = sample_knockoffs(&x, &model, 11).unwrap();
        let expected = standardize(&normal_matrix(100, 5, 11)).unwrap();
        for (a, b) in xk.values().iter().zip(expected.values().iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
        let cross = x.values().transpose() * xk.values() / 99.0;
        assert!(cross.iter().all(|v| v.abs() < 0.2));
    }

    #[test]
    fn sampling_is_deterministic() {
        let sigma = ar1_covariance(6, 0.5);
        let model = KnockoffModel::equicorrelated(&sigma, 1).unwrap();
        let x = standardize(&normal_matrix(30, 6, 2)).unwrap();
        let a = sample_knockoffs(&x, &model, 5).unwrap();
        let b = sample_knockoffs(&x, &model, 5).unwrap();
        assert_eq!(a.values(), b.values());
        let z = DVector::from_fn(6, |i, _| i as f64);
        assert_eq!(
            sample_knockoff_zscores(&z, &model, 5).unwrap(),
            sample_knockoff_zscores(&z, &model, 5).unwrap()
        );
    }

    #[test]
    fn identity_zscores_are_noise() {
        let model = KnockoffModel::new(&DMatrix::identity(3, 3), DVector::from_element(3, 1.0), 1).unwrap();
        let z = DVector::from_vec(vec![5.0, -3.0, 2.0]);
        let zm = sample_knockoff_zscores(&z, &model, 4).unwrap();
        let mut rng = seed::rng(4);
        let eps: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
        for j in 0..3 {
            assert_eq!(zm[j], z[j]);
            assert_relative_eq!(zm[3 + j], eps[j], epsilon = 1e-14);
        }
    }

    #[test]
    fn sigma_m_blocks() {
        let sigma_i = DMatrix::identity(3, 3);
        let sm = build_sigma_m(&sigma_i, &DVector::from_element(3, 1.0), 1).unwrap();
        assert_eq!(sm.matrix(), &DMatrix::<f64>::identity(6, 6));

        let sigma = ar1_covariance(2, 0.5);
        let d = DVector::from_vec(vec![0.7, 0.7]);
        let sm = build_sigma_m(&sigma, &d, 2).unwrap();
        assert_eq!(sm.dim(), 6);
        for a in 0..3 {
            for b in 0..3 {
                let blk = sm.matrix().view((2 * a, 2 * b), (2, 2));
                let expected_diag = if a == b { 1.0 } else { 0.3 };
                assert_relative_eq!(blk[(0, 0)], expected_diag, epsilon = 1e-15);
                assert_relative_eq!(blk[(0, 1)], 0.5, epsilon = 1e-15);
            }
        }
        assert!(min_eigenvalue(sm.matrix()) >= -1e-8);
    }

    #[test]
    fn sigma_m_rejects_infeasible_d() {
        let sigma = ar1_covariance(3, 0.9);
        let d = DVector::from_element(3, 1.0);
        assert!(build_sigma_m(&sigma, &d, 1).is_err());
    }
}
