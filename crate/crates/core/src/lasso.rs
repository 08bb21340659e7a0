//! Weighted (adaptive) Lasso by cyclic coordinate descent in covariance form.
//!
//! Both the individual-level problem and the summary-statistics problem are
//! reduced to
//!
//! ```text
//! minimize  ½ βᵀGβ − βᵀc + λ₀ Σ_j φ_{j mod p} |β_j|
//! ```
//!
//! where `G` is `[X, X̃]ᵀ[X, X̃]/n` or `Σ_M`, and `c` is `[X, X̃]ᵀy/n` or
//! `Z_M/√n`. Every original covariate and its knockoff copies share one
//! penalty weight.
//!
//! When the active-set sweeps stall (typical near saturation, where the
//! active Gram block is badly conditioned), an exact step on the current
//! sign pattern is taken; it never increases the objective.

use nalgebra::{DMatrix, DVector};

use crate::data::StandardizedMatrix;
use crate::error::{Error, Result};
use crate::knockoff::SigmaM;
use crate::linalg;

/// Minimum active-set sweeps between exact sign-pattern steps.
const FACE_STEP_AFTER: usize = 10;

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Converged once no coefficient moves by more than this in a full sweep.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Allowed KKT violation at exit.
    pub kkt_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 10_000,
            kkt_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LassoProblem {
    gram: DMatrix<f64>,
    linear: DVector<f64>,
    p: usize,
    /// Constant part of the smooth loss (`yᵀy / 2n` for individual data).
    offset: f64,
}

impl LassoProblem {
    pub fn new(gram: DMatrix<f64>, linear: DVector<f64>, p: usize, offset: f64) -> Result<Self> {
        let k = gram.nrows();
        if gram.ncols() != k {
            return Err(Error::dims("Gram rows vs columns", k, gram.ncols()));
        }
        if linear.len() != k {
            return Err(Error::dims("linear term vs Gram", linear.len(), k));
        }
        if p == 0 || k % p != 0 {
            return Err(Error::dims("Gram dimension vs p", k, p));
        }
        if (0..k).any(|j| !(gram[(j, j)] > 0.0)) {
            return Err(Error::InvalidArgument("Gram matrix has a non-positive diagonal entry".into()));
        }
        Ok(Self {
            gram,
            linear,
            p,
            offset,
        })
    }

    /// Individual-level problem from the stacked design `[X, X̃]` (`n × 2p`).
    pub fn from_design(xx: &DMatrix<f64>, y: &DVector<f64>, p: usize) -> Result<Self> {
        let n = xx.nrows();
        if y.len() != n {
            return Err(Error::dims("response length vs design rows", y.len(), n));
        }
        let nf = n as f64;
        let gram = linalg::gram(xx) / nf;
        let linear = xx.tr_mul(y) / nf;
        Self::new(gram, linear, p, y.norm_squared() / (2.0 * nf))
    }

    /// Summary-statistics problem: `G = Σ_M`, `c = Z_M / √n`.
    pub fn from_summary(zm: &DVector<f64>, sigma_m: &SigmaM, n: usize) -> Result<Self> {
        if zm.len() != sigma_m.dim() {
            return Err(Error::dims("Z_M length vs Σ_M", zm.len(), sigma_m.dim()));
        }
        let linear = zm / (n as f64).sqrt();
        Self::new(sigma_m.matrix().clone(), linear, sigma_m.p(), 0.0)
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Number of original covariates.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Total coefficients, `(M+1)p`.
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    fn check_phi(&self, phi: &DVector<f64>, lambda0: f64) -> Result<()> {
        if phi.len() != self.p {
            return Err(Error::dims("penalty weights vs p", phi.len(), self.p));
        }
        if phi.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("penalty weights must be finite and positive".into()));
        }
        if !(lambda0 >= 0.0 && lambda0.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda0 must be finite and >= 0, got {lambda0}")));
        }
        Ok(())
    }

    /// Smallest `λ₀` at which the solution is identically zero.
    pub fn lambda_max(&self, phi: &DVector<f64>) -> f64 {
        self.linear
            .iter()
            .enumerate()
            .map(|(j, c)| c.abs() / phi[j % self.p])
            .fold(0.0, f64::max)
    }

    pub fn penalty(&self, beta: &DVector<f64>, phi: &DVector<f64>, lambda0: f64) -> f64 {
        lambda0
            * beta
                .iter()
                .enumerate()
                .map(|(j, b)| phi[j % self.p] * b.abs())
                .sum::<f64>()
    }

    /// Smooth part `½βᵀGβ − βᵀc + offset`.
    pub fn loss(&self, beta: &DVector<f64>) -> f64 {
        0.5 * linalg::quad_form(&self.gram, beta) - beta.dot(&self.linear) + self.offset
    }

    pub fn objective(&self, beta: &DVector<f64>, phi: &DVector<f64>, lambda0: f64) -> f64 {
        self.loss(beta) + self.penalty(beta, phi, lambda0)
    }

    /// Largest KKT violation at `beta`, from a freshly computed gradient.
    pub fn kkt_violation(&self, beta: &DVector<f64>, phi: &DVector<f64>, lambda0: f64) -> f64 {
        let grad = &self.gram * beta - &self.linear;
        let mut worst = 0.0f64;
        for (j, g) in grad.iter().enumerate() {
            let t = lambda0 * phi[j % self.p];
            let v = if beta[j] != 0.0 {
                (g + t * beta[j].signum()).abs()
            } else {
                (g.abs() - t).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    /// `(G + αI)⁻¹c` with `α = 1e-3·tr(G)/dim`; equals the least-squares
    /// solution up to a vanishing ridge and exists even when `G` is singular.
    pub fn ridge_solution(&self) -> Result<DVector<f64>> {
        let k = self.dim();
        let alpha = 1e-3 * self.gram.trace() / k as f64;
        let mut a = self.gram.clone();
        for j in 0..k {
            a[(j, j)] += alpha;
        }
        let ch = linalg::cholesky(&a, "ridge system")?;
        Ok(ch.solve(&self.linear))
    }

    /// Sum of coefficient magnitudes per covariate over original and knockoffs.
    pub fn abs_sums(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.p);
        for (j, b) in beta.iter().enumerate() {
            out[j % self.p] += b.abs();
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub objective: f64,
    /// Coordinate sweeps performed (full and active-set).
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every sweep; non-increasing.
    pub objective_trace: Vec<f64>,
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

fn sign(v: f64) -> i8 {
    (v > 0.0) as i8 - (v < 0.0) as i8
}

struct State<'a> {
    problem: &'a LassoProblem,
    thresholds: Vec<f64>,
    beta: DVector<f64>,
    grad: DVector<f64>,
}

impl State<'_> {
    /// Returns the absolute change and whether the sign of `β_j` changed.
    fn update(&mut self, j: usize) -> (f64, bool) {
        let gjj = self.problem.gram[(j, j)];
        let old = self.beta[j];
        let u = gjj * old - self.grad[j];
        let new = soft_threshold(u, self.thresholds[j]) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            self.grad.axpy(delta, &self.problem.gram.column(j), 1.0);
        }
        (delta.abs(), sign(new) != sign(old))
    }

    /// Moves the active coordinates toward the minimizer of the smooth
    /// quadratic on their current sign pattern. A coordinate that would
    /// change sign is stopped at zero and dropped (with a Cholesky downdate)
    /// until a full step fits. Returns false when the active Gram block is
    /// singular.
    fn face_step(&mut self, active: &[usize]) -> bool {
        if active.is_empty() {
            return false;
        }
        let g = &self.problem.gram;
        let m = active.len();
        let block = DMatrix::from_fn(m, m, |r, c| g[(active[r], active[c])]);
        let Some(mut chol) = linalg::ShrinkingCholesky::new(block) else {
            return false;
        };
        let mut act = active.to_vec();
        while !act.is_empty() {
            let rhs = DVector::from_fn(act.len(), |r, _| {
                let j = act[r];
                self.problem.linear[j] - self.thresholds[j] * self.beta[j].signum()
            });
            let target = chol.solve(&rhs);
            let mut alpha = 1.0f64;
            let mut blocking = None;
            for (r, &j) in act.iter().enumerate() {
                let (b, t) = (self.beta[j], target[r]);
                if t.signum() != b.signum() {
                    let a = b / (b - t);
                    if a < alpha {
                        alpha = a;
                        blocking = Some(r);
                    }
                }
            }
            for (r, &j) in act.iter().enumerate() {
                let delta = if Some(r) == blocking {
                    -self.beta[j]
                } else {
                    alpha * (target[r] - self.beta[j])
                };
                if delta != 0.0 {
                    self.beta[j] = if Some(r) == blocking { 0.0 } else { self.beta[j] + delta };
                    self.grad.axpy(delta, &g.column(j), 1.0);
                }
            }
            match blocking {
                None => break,
                Some(r) => {
                    chol.remove(r);
                    act.remove(r);
                }
            }
        }
        true
    }

    fn objective(&self) -> f64 {
        let quad = 0.5 * self.beta.dot(&(&self.grad + &self.problem.linear));
        let lin = self.beta.dot(&self.problem.linear);
        let pen: f64 = self
            .beta
            .iter()
            .zip(&self.thresholds)
            .map(|(b, t)| b.abs() * t)
            .sum();
        quad - lin + self.problem.offset + pen
    }
}

/// Coordinate descent from `warm` (or zero). Full sweeps alternate with
/// inner sweeps restricted to the non-zero coordinates.
pub fn solve(
    problem: &LassoProblem,
    phi: &DVector<f64>,
    lambda0: f64,
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<FitResult> {
    problem.check_phi(phi, lambda0)?;
    let k = problem.dim();
    let p = problem.p;
    let beta = match warm {
        Some(w) if w.len() == k => w.clone(),
        Some(w) => return Err(Error::dims("warm start vs problem", w.len(), k)),
        None => DVector::zeros(k),
    };
    let grad = if beta.iter().all(|b| *b == 0.0) {
        -problem.linear.clone()
    } else {
        &problem.gram * &beta - &problem.linear
    };
    let thresholds = (0..k).map(|j| lambda0 * phi[j % p]).collect();
    let mut st = State {
        problem,
        thresholds,
        beta,
        grad,
    };

    let mut trace = Vec::new();
    let mut prev = st.objective();
    if !prev.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut sweeps = 0;
    let mut converged = false;
    let mut record = |obj: f64, trace: &mut Vec<f64>| -> Result<()> {
        if !obj.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        debug_assert!(
            obj <= prev + 1e-9 * (1.0 + prev.abs()),
            "objective increased: {prev} -> {obj}"
        );
        prev = obj;
        trace.push(obj);
        Ok(())
    };
    while sweeps < opts.max_sweeps {
        let mut max_change = 0.0f64;
        for j in 0..k {
            max_change = max_change.max(st.update(j).0);
        }
        sweeps += 1;
        record(st.objective(), &mut trace)?;
        if max_change < opts.tol {
            if problem.kkt_violation(&st.beta, phi, lambda0) <= opts.kkt_tol {
                converged = true;
                break;
            }
            continue;
        }
        let mut active: Vec<usize> = (0..k).filter(|&j| st.beta[j] != 0.0).collect();
        let mut since_face = 0;
        while sweeps < opts.max_sweeps {
            let mut change = 0.0f64;
            let mut flipped = false;
            for &j in &active {
                let (c, f) = st.update(j);
                change = change.max(c);
                flipped |= f;
            }
            sweeps += 1;
            since_face += 1;
            record(st.objective(), &mut trace)?;
            if change < opts.tol {
                break;
            }
            if !flipped && since_face >= FACE_STEP_AFTER {
                active.retain(|&j| st.beta[j] != 0.0);
                if st.face_step(&active) {
                    record(st.objective(), &mut trace)?;
                }
                since_face = 0;
            }
        }
    }
    let objective = problem.objective(&st.beta, phi, lambda0);
    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(FitResult {
        beta: st.beta,
        objective,
        iterations: sweeps,
        converged,
        objective_trace: trace,
    })
}

/// Fits along a `λ₀` grid, each fit warm-started from the previous one.
pub fn solve_path(
    problem: &LassoProblem,
    phi: &DVector<f64>,
    grid: &[f64],
    warm: Option<&DVector<f64>>,
    opts: &SolverOptions,
) -> Result<Vec<FitResult>> {
    let mut out: Vec<FitResult> = Vec::with_capacity(grid.len());
    for &lambda0 in grid {
        let start = out.last().map(|f| &f.beta).or(warm);
        out.push(solve(problem, phi, lambda0, start, opts)?);
    }
    Ok(out)
}

/// Individual-level adaptive Lasso over `[X, X̃]` (`2p` standardized columns).
pub fn fit_individual(
    y: &DVector<f64>,
    xx: &StandardizedMatrix,
    phi: &DVector<f64>,
    lambda0: f64,
) -> Result<FitResult> {
    if xx.ncols() % 2 != 0 {
        return Err(Error::InvalidArgument("stacked design must have 2p columns".into()));
    }
    let problem = LassoProblem::from_design(xx.values(), y, xx.ncols() / 2)?;
    solve(&problem, phi, lambda0, None, &SolverOptions::default())
}

/// Summary-statistics adaptive Lasso on `Z_M` and `Σ_M`.
pub fn fit_summary(
    zm: &DVector<f64>,
    sigma_m: &SigmaM,
    n: usize,
    phi: &DVector<f64>,
    lambda0: f64,
) -> Result<FitResult> {
    let problem = LassoProblem::from_summary(zm, sigma_m, n)?;
    solve(&problem, phi, lambda0, None, &SolverOptions::default())
}

pub fn lambda_max(problem: &LassoProblem, phi: &DVector<f64>) -> f64 {
    problem.lambda_max(phi)
}

/// `count` log-spaced values from `hi` down to `hi * lo_frac`.
pub fn log_grid(hi: f64, lo_frac: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    let step = lo_frac.ln() / (count as f64 - 1.0);
    (0..count).map(|i| hi * (step * i as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, s: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = seed::rng(s);
        let x = DMatrix::from_fn(n, 2 * p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] * 0.5 - x[(i, 1)] * 0.3 + rng.sample::<f64, _>(StandardNormal));
        (x, y)
    }

    #[test]
    fn lambda_max_examples() {
        let g = DMatrix::identity(2, 2);
        let prob = LassoProblem::new(g, DVector::from_vec(vec![0.5, -0.2]), 1, 0.0).unwrap();
        assert_eq!(prob.lambda_max(&DVector::from_vec(vec![1.0])), 0.5);
        let prob = LassoProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![0.5, -0.2]),
            2,
            0.0,
        )
        .unwrap();
        assert_eq!(prob.lambda_max(&DVector::from_vec(vec![1.0, 1.0])), 0.5);
        assert_eq!(prob.lambda_max(&DVector::from_vec(vec![2.0, 1.0])), 0.25);
    }

    #[test]
    fn zero_at_lambda_max() {
        let (x, y) = random_problem(60, 4, 1);
        let prob = LassoProblem::from_design(&x, &y, 4).unwrap();
        let phi = DVector::from_vec(vec![1.0, 2.0, 0.5, 1.5]);
        let lmax = prob.lambda_max(&phi);
        let fit = solve(&prob, &phi, lmax * 1.001, None, &SolverOptions::default()).unwrap();
        assert!(fit.beta.iter().all(|b| *b == 0.0));
        let fit = solve(&prob, &phi, lmax * 0.9, None, &SolverOptions::default()).unwrap();
        assert!(fit.beta.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn zero_penalty_is_least_squares() {
        let (x, y) = random_problem(80, 3, 2);
        let prob = LassoProblem::from_design(&x, &y, 3).unwrap();
        let phi = DVector::from_element(3, 1.0);
        let fit = solve(&prob, &phi, 0.0, None, &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        let ols = prob.gram().clone().cholesky().unwrap().solve(prob.linear());
        for (a, b) in fit.beta.iter().zip(ols.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let c = DVector::from_vec(vec![0.8, -0.3, 0.05, -0.9]);
        let prob = LassoProblem::new(DMatrix::identity(4, 4), c.clone(), 2, 0.0).unwrap();
        let phi = DVector::from_vec(vec![1.0, 3.0]);
        let l0 = 0.2;
        let fit = solve(&prob, &phi, l0, None, &SolverOptions::default()).unwrap();
        for j in 0..4 {
            let t = l0 * phi[j % 2];
            let expected = c[j].signum() * (c[j].abs() - t).max(0.0);
            assert_relative_eq!(fit.beta[j], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_oracle_small_problem() {
        // p = 3 original covariates, no knockoffs: compare against a 7³ grid.
        let mut rng = seed::rng(7);
        let n = 20;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 2)] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let prob = LassoProblem::from_design(&x, &y, 3).unwrap();
        let phi = DVector::from_element(3, 1.0);
        let fit = solve(&prob, &phi, 0.1, None, &SolverOptions::default()).unwrap();
        let pts: Vec<f64> = (0..7).map(|i| -1.0 + i as f64 / 3.0).collect();
        for a in &pts {
            for b in &pts {
                for c in &pts {
                    let v = DVector::from_vec(vec![*a, *b, *c]);
                    assert!(fit.objective <= prob.objective(&v, &phi, 0.1) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn trace_is_monotone_and_kkt_holds() {
        let (x, y) = random_problem(50, 10, 3);
        let prob = LassoProblem::from_design(&x, &y, 10).unwrap();
        let phi = DVector::from_fn(10, |i, _| 0.5 + 0.1 * i as f64);
        let lmax = prob.lambda_max(&phi);
        let fit = solve(&prob, &phi, 0.05 * lmax, None, &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(prob.kkt_violation(&fit.beta, &phi, 0.05 * lmax) <= 1e-6);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let (x, y) = random_problem(70, 6, 4);
        let prob = LassoProblem::from_design(&x, &y, 6).unwrap();
        let phi = DVector::from_element(6, 1.0);
        let lmax = prob.lambda_max(&phi);
        let grid = log_grid(lmax, 0.05, 8);
        let path = solve_path(&prob, &phi, &grid, None, &SolverOptions::default()).unwrap();
        let cold = solve(&prob, &phi, grid[7], None, &SolverOptions::default()).unwrap();
        for (a, b) in path[7].beta.iter().zip(cold.beta.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        let ridge = prob.ridge_solution().unwrap();
        let from_ridge = solve(&prob, &phi, grid[7], Some(&ridge), &SolverOptions::default()).unwrap();
        for (a, b) in from_ridge.beta.iter().zip(cold.beta.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 0.01, 20);
        assert_eq!(g.len(), 20);
        assert_relative_eq!(g[0], 2.0);
        assert_relative_eq!(g[19], 0.02, epsilon = 1e-12);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_weights() {
        let prob = LassoProblem::new(DMatrix::identity(2, 2), DVector::zeros(2), 1, 0.0).unwrap();
        assert!(solve(&prob, &DVector::from_vec(vec![0.0]), 0.1, None, &SolverOptions::default()).is_err());
        assert!(solve(&prob, &DVector::from_vec(vec![1.0]), -0.1, None, &SolverOptions::default()).is_err());
    }
}
