//! Individual-level pipelines: plain Lasso knockoffs, AnnoKn (λ₀ grid with
//! an alternating fit at every grid point) and AnnoKn-lite (a single
//! alternating fit between two cross-validated λ₀ choices).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::data::{AnnotationMatrix, StandardizedMatrix};
use crate::error::{Error, Result};
use crate::lasso::{self, LassoProblem, SolverOptions};
use crate::pipeline::{alternate, check_annotations, select, PipelineConfig, PipelineResult};
use crate::seed;
use crate::weights::PenaltyState;

struct Fold {
    train: LassoProblem,
    test_x: DMatrix<f64>,
    test_y: DVector<f64>,
}

/// Full-data problem, cross-validation folds and the ridge starting point,
/// computed once per dataset and shared by every method and grid point.
pub struct IndividualProblem {
    problem: LassoProblem,
    folds: Vec<Fold>,
    n: usize,
    ridge_init: DVector<f64>,
}

/// Seeded random partition of `0..n` into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed_value: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed_value));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for (f, members) in folds.iter_mut().enumerate() {
        if members.len() < 2 {
            return Err(Error::DegenerateCv { fold: f, size: members.len() });
        }
        members.sort_unstable();
    }
    Ok(folds)
}

impl IndividualProblem {
    /// `xx` is the stacked `n × 2p` design `[X, X̃]`.
    pub fn new(y: &DVector<f64>, xx: &DMatrix<f64>, folds: usize, seed_value: u64) -> Result<Self> {
        let n = xx.nrows();
        if xx.ncols() % 2 != 0 {
            return Err(Error::InvalidArgument("stacked design must have 2p columns".into()));
        }
        let p = xx.ncols() / 2;
        let problem = LassoProblem::from_design(xx, y, p)?;
        let assignment = fold_assignment(n, folds, seed_value)?;
        let nf = n as f64;
        let yy = y.norm_squared();
        let mut out = Vec::with_capacity(folds);
        for (f, members) in assignment.iter().enumerate() {
            let test_x = xx.select_rows(members.iter());
            let test_y = DVector::from_iterator(members.len(), members.iter().map(|&i| y[i]));
            let nt = (n - members.len()) as f64;
            if nt < 2.0 {
                return Err(Error::DegenerateCv { fold: f, size: n - members.len() });
            }
            let held_gram = crate::linalg::gram(&test_x);
            let gram = (problem.gram() * nf - held_gram) / nt;
            let linear = (problem.linear() * nf - test_x.tr_mul(&test_y)) / nt;
            let offset = (yy - test_y.norm_squared()) / (2.0 * nt);
            out.push(Fold {
                train: LassoProblem::new(gram, linear, p, offset)?,
                test_x,
                test_y,
            });
        }
        let ridge_init = problem.ridge_solution()?;
        Ok(Self {
            problem,
            folds: out,
            n,
            ridge_init,
        })
    }

    pub fn from_parts(
        y: &DVector<f64>,
        x: &StandardizedMatrix,
        x_knock: &StandardizedMatrix,
        folds: usize,
        seed_value: u64,
    ) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::dims("response length vs design rows", y.len(), x.nrows()));
        }
        if x.ncols() != x_knock.ncols() {
            return Err(Error::dims("design columns vs knockoff columns", x.ncols(), x_knock.ncols()));
        }
        let xx = x.hstack(x_knock)?;
        Self::new(y, xx.values(), folds, seed_value)
    }

    pub fn problem(&self) -> &LassoProblem {
        &self.problem
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.problem.p()
    }

    pub fn ridge_init(&self) -> &DVector<f64> {
        &self.ridge_init
    }

    fn fold_sse(fold: &Fold, beta: &DVector<f64>) -> f64 {
        let pred = &fold.test_x * beta;
        (&fold.test_y - pred).norm_squared()
    }

    /// Pooled held-out mean squared error with `φ` fixed and β refit per fold.
    pub fn cv_error(
        &self,
        phi: &DVector<f64>,
        lambda0: f64,
        warm: Option<&DVector<f64>>,
        opts: &SolverOptions,
    ) -> Result<f64> {
        let mut sse = 0.0;
        for fold in &self.folds {
            let fit = lasso::solve(&fold.train, phi, lambda0, warm, opts)?;
            sse += Self::fold_sse(fold, &fit.beta);
        }
        Ok(sse / self.n as f64)
    }

    /// Cross-validation error along a descending grid with warm starts.
    pub fn cv_path(&self, phi: &DVector<f64>, grid: &[f64], cfg: &PipelineConfig) -> Result<Vec<f64>> {
        let per_fold = cfg.execution.try_map(self.folds.len(), |f| {
            let fold = &self.folds[f];
            let path = lasso::solve_path(&fold.train, phi, grid, None, &cfg.solver)?;
            Ok(path.iter().map(|fit| Self::fold_sse(fold, &fit.beta)).collect::<Vec<_>>())
        })?;
        Ok((0..grid.len())
            .map(|g| per_fold.iter().map(|v| v[g]).sum::<f64>() / self.n as f64)
            .collect())
    }
}

/// Held-out squared prediction error of the weighted Lasso on `[X, X̃]`.
pub fn cross_validate(
    y: &DVector<f64>,
    xx: &StandardizedMatrix,
    phi: &DVector<f64>,
    lambda0: f64,
    folds: usize,
    seed_value: u64,
) -> Result<f64> {
    let prepared = IndividualProblem::new(y, xx.values(), folds, seed_value)?;
    prepared.cv_error(phi, lambda0, None, &SolverOptions::default())
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn neutral(prepared: &IndividualProblem, a: &AnnotationMatrix, cfg: &PipelineConfig, lambda0: f64) -> PenaltyState {
    PenaltyState::neutral(
        prepared.p(),
        a.n_annotations(),
        cfg.resolved_d(a.n_annotations()),
        cfg.tau2,
        lambda0,
    )
}

/// Lasso knockoffs with unit weights and λ₀ tuned by cross-validation.
pub fn knockoff_lasso_fit(prepared: &IndividualProblem, cfg: &PipelineConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    let p = prepared.p();
    let phi = DVector::from_element(p, 1.0);
    let grid = cfg.lambda0_grid.resolve(prepared.problem.lambda_max(&phi));
    let cv_errors = prepared.cv_path(&phi, &grid, cfg)?;
    let best = argmin(&cv_errors);
    let path = lasso::solve_path(&prepared.problem, &phi, &grid[..=best], None, &cfg.solver)?;
    let fit = path.into_iter().last().expect("non-empty grid");
    let (stats, selection) = select(&fit.beta, p, cfg.q)?;
    Ok(PipelineResult {
        penalty: PenaltyState::neutral(p, 0, 1.0, cfg.tau2, grid[best]),
        fit,
        stats,
        selection,
        lambda0_grid: grid,
        cv_errors,
        validation_scores: Vec::new(),
        trace: Vec::new(),
        outer_iterations: 0,
        outer_converged: true,
    })
}

/// Full AnnoKn: alternating fit at every grid point, λ₀ chosen by CV error.
pub fn annokn_fit_prepared(
    prepared: &IndividualProblem,
    a: &AnnotationMatrix,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    cfg.validate()?;
    let p = prepared.p();
    check_annotations(a.values(), p)?;
    let ones = DVector::from_element(p, 1.0);
    let grid = cfg.lambda0_grid.resolve(prepared.problem.lambda_max(&ones));
    let runs = cfg.execution.try_map(grid.len(), |g| {
        let init = neutral(prepared, a, cfg, grid[g]);
        let alt = alternate(
            &prepared.problem,
            a.values(),
            prepared.n,
            init,
            Some(&prepared.ridge_init),
            cfg,
        )?;
        let cv = prepared.cv_error(&alt.state.phi, grid[g], Some(&alt.fit.beta), &cfg.solver)?;
        Ok((cv, alt))
    })?;
    let cv_errors: Vec<f64> = runs.iter().map(|(c, _)| *c).collect();
    let best = argmin(&cv_errors);
    let (_, alt) = runs.into_iter().nth(best).expect("grid index");
    let fit = lasso::solve(
        &prepared.problem,
        &alt.state.phi,
        grid[best],
        Some(&alt.fit.beta),
        &cfg.solver,
    )?;
    let (stats, selection) = select(&fit.beta, p, cfg.q)?;
    Ok(PipelineResult {
        fit,
        penalty: alt.state,
        stats,
        selection,
        lambda0_grid: grid,
        cv_errors,
        validation_scores: Vec::new(),
        trace: alt.trace,
        outer_iterations: alt.iterations,
        outer_converged: alt.converged,
    })
}

/// AnnoKn-lite: λ₀ from the unit-weight Lasso, one alternating fit, then λ₀
/// re-tuned with the learned weights held fixed.
pub fn annokn_lite_fit_prepared(
    prepared: &IndividualProblem,
    a: &AnnotationMatrix,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    cfg.validate()?;
    let p = prepared.p();
    check_annotations(a.values(), p)?;
    let ones = DVector::from_element(p, 1.0);
    let grid = cfg.lambda0_grid.resolve(prepared.problem.lambda_max(&ones));
    let first_cv = prepared.cv_path(&ones, &grid, cfg)?;
    let first = argmin(&first_cv);
    let path = lasso::solve_path(&prepared.problem, &ones, &grid[..=first], None, &cfg.solver)?;
    let start = path.last().expect("non-empty grid").beta.clone();

    let init = neutral(prepared, a, cfg, grid[first]);
    let alt = alternate(&prepared.problem, a.values(), prepared.n, init, Some(&start), cfg)?;
    let phi = alt.state.phi.clone();

    let cv_errors = prepared.cv_path(&phi, &grid, cfg)?;
    let best = argmin(&cv_errors);
    let fit = lasso::solve(&prepared.problem, &phi, grid[best], Some(&alt.fit.beta), &cfg.solver)?;
    let (stats, selection) = select(&fit.beta, p, cfg.q)?;
    Ok(PipelineResult {
        fit,
        penalty: alt.state.with_lambda0(grid[best]),
        stats,
        selection,
        lambda0_grid: grid,
        cv_errors,
        validation_scores: Vec::new(),
        trace: alt.trace,
        outer_iterations: alt.iterations,
        outer_converged: alt.converged,
    })
}

/// Seed stream for the fold assignment used by [`annokn_fit`] and [`annokn_lite_fit`].
pub const FOLD_STREAM: u64 = 0xCF;

pub fn annokn_fit(
    y: &DVector<f64>,
    x: &StandardizedMatrix,
    x_knock: &StandardizedMatrix,
    a: &AnnotationMatrix,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let prepared = IndividualProblem::from_parts(y, x, x_knock, cfg.cv_folds, seed::derive(cfg.seed, FOLD_STREAM))?;
    annokn_fit_prepared(&prepared, a, cfg)
}

pub fn annokn_lite_fit(
    y: &DVector<f64>,
    x: &StandardizedMatrix,
    x_knock: &StandardizedMatrix,
    a: &AnnotationMatrix,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    let prepared = IndividualProblem::from_parts(y, x, x_knock, cfg.cv_folds, seed::derive(cfg.seed, FOLD_STREAM))?;
    annokn_lite_fit_prepared(&prepared, a, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn toy(n: usize, p: usize, s: u64, signal: bool) -> (DVector<f64>, DMatrix<f64>) {
        let mut rng = seed::rng(s);
        let xx = DMatrix::from_fn(n, 2 * p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| {
            let sig = if signal { xx[(i, 0)] + 0.5 * xx[(i, 1)] } else { 0.0 };
            sig + rng.sample::<f64, _>(StandardNormal)
        });
        (y, xx)
    }

    #[test]
    fn folds_partition_and_determinism() {
        let f = fold_assignment(23, 5, 1).unwrap();
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert_eq!(f, fold_assignment(23, 5, 1).unwrap());
        assert!(matches!(fold_assignment(7, 5, 1), Err(Error::DegenerateCv { .. })));
    }

    #[test]
    fn noiseless_cv_error_vanishes() {
        let mut rng = seed::rng(3);
        let xx = DMatrix::from_fn(60, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(60, |i, _| 2.0 * xx[(i, 0)] - xx[(i, 3)]);
        let prepared = IndividualProblem::new(&y, &xx, 5, 9).unwrap();
        let err = prepared
            .cv_error(&DVector::from_element(2, 1.0), 0.0, None, &SolverOptions::default())
            .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn null_cv_error_near_variance() {
        let (y, xx) = toy(400, 5, 4, false);
        let y = {
            let m = y.mean();
            let v = y.map(|v| v - m);
            let sd = (v.norm_squared() / 399.0).sqrt();
            v / sd
        };
        let prepared = IndividualProblem::new(&y, &xx, 5, 1).unwrap();
        let phi = DVector::from_element(5, 1.0);
        let lmax = prepared.problem().lambda_max(&phi);
        let err = prepared.cv_error(&phi, lmax, None, &SolverOptions::default()).unwrap();
        assert!((err - 1.0).abs() < 0.1, "{err}");
    }

    #[test]
    fn single_point_grid() {
        let (y, xx) = toy(100, 6, 5, true);
        let prepared = IndividualProblem::new(&y, &xx, 5, 2).unwrap();
        let a = AnnotationMatrix::empty(6);
        let cfg = PipelineConfig {
            lambda0_grid: crate::pipeline::GridSpec::Explicit(vec![0.05]),
            ..Default::default()
        };
        let r = annokn_fit_prepared(&prepared, &a, &cfg).unwrap();
        assert_eq!(r.cv_errors.len(), 1);
        assert_eq!(r.penalty.lambda0, 0.05);
        let direct = lasso::solve(prepared.problem(), &DVector::from_element(6, 1.0), 0.05, None, &SolverOptions::default()).unwrap();
        assert!((r.fit.beta.clone() - direct.beta).amax() < 1e-5);
    }

    #[test]
    fn empty_annotations_match_plain_knockoffs() {
        let (y, xx) = toy(120, 8, 6, true);
        let prepared = IndividualProblem::new(&y, &xx, 5, 3).unwrap();
        let a = AnnotationMatrix::empty(8);
        let cfg = PipelineConfig::default();
        let plain = knockoff_lasso_fit(&prepared, &cfg).unwrap();
        let lite = annokn_lite_fit_prepared(&prepared, &a, &cfg).unwrap();
        let full = annokn_fit_prepared(&prepared, &a, &cfg).unwrap();
        assert_eq!(plain.penalty.lambda0, lite.penalty.lambda0);
        assert!((plain.fit.beta.clone() - &lite.fit.beta).amax() < 1e-5);
        assert!((plain.fit.beta.clone() - &full.fit.beta).amax() < 1e-5);
        assert_eq!(plain.selection.selected, lite.selection.selected);
    }
}
