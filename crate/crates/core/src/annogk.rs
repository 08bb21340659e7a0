//! Summary-statistics pipelines: GhostKnockoff-style Lasso on knockoff
//! z-scores and its annotation-informed version, with λ₀ tuned on
//! pseudo-summary statistics.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::data::{AnnotationMatrix, LdMatrix, SummaryStats};
use crate::error::{Error, Result};
use crate::knockoff::{self, KnockoffModel, SigmaM};
use crate::lasso::{self, LassoProblem};
use crate::linalg;
use crate::pipeline::{alternate, check_annotations, select, PipelineConfig, PipelineResult};
use crate::seed;
use crate::weights::PenaltyState;

/// Independent training and validation z-scores drawn from one `Z_M`.
#[derive(Clone, Debug)]
pub struct PseudoSplit {
    pub z_train: DVector<f64>,
    pub z_valid: DVector<f64>,
    pub n_train: usize,
    pub n_valid: usize,
}

/// Reusable factor of `Σ_M` for drawing pseudo-summary splits.
pub struct PseudoSplitter {
    /// `F` with `FᵀF = Σ_M`.
    factor: DMatrix<f64>,
}

impl PseudoSplitter {
    pub fn new(sigma_m: &SigmaM) -> Result<Self> {
        Ok(Self {
            factor: linalg::sampling_factor(sigma_m.matrix(), "Σ_M")?,
        })
    }

    /// With `e ~ N(0, Σ_M)` independent of `z`:
    ///
    /// ```text
    /// z_t = √(n_t/n)·z + √(n_v/n)·e
    /// z_v = √(n_v/n)·z − √(n_t/n)·e
    /// ```
    ///
    /// so both pieces have covariance `Σ_M`, are uncorrelated, and
    /// `E[z_t] = √(n_t/n)·E[z]`.
    pub fn split(&self, zm: &DVector<f64>, n: usize, frac_train: f64, seed_value: u64) -> Result<PseudoSplit> {
        if !(frac_train > 0.0 && frac_train < 1.0) {
            return Err(Error::InvalidArgument(format!("frac_train must lie in (0, 1), got {frac_train}")));
        }
        let k = self.factor.nrows();
        if zm.len() != k {
            return Err(Error::dims("Z_M length vs Σ_M", zm.len(), k));
        }
        let n_train = (frac_train * n as f64).round() as usize;
        let n_valid = n.saturating_sub(n_train);
        if n_train == 0 || n_valid == 0 {
            return Err(Error::InvalidArgument(format!(
                "sample size {n} too small for a {frac_train} training split"
            )));
        }
        let mut rng = seed::rng(seed_value);
        let eps = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
        let e = self.factor.tr_mul(&eps);
        let nf = n as f64;
        let (at, av) = ((n_train as f64 / nf).sqrt(), (n_valid as f64 / nf).sqrt());
        Ok(PseudoSplit {
            z_train: zm * at + &e * av,
            z_valid: zm * av - &e * at,
            n_train,
            n_valid,
        })
    }
}

pub fn make_pseudo_split(
    zm: &DVector<f64>,
    sigma_m: &SigmaM,
    n: usize,
    frac_train: f64,
    seed_value: u64,
) -> Result<PseudoSplit> {
    PseudoSplitter::new(sigma_m)?.split(zm, n, frac_train, seed_value)
}

/// `β̂ᵀ z_v / √n_v − ½ β̂ᵀ Σ_M β̂`; higher is better.
pub fn pseudo_validation_score(beta: &DVector<f64>, z_valid: &DVector<f64>, sigma_m: &SigmaM, n_valid: usize) -> f64 {
    beta.dot(z_valid) / (n_valid as f64).sqrt() - 0.5 * linalg::quad_form(sigma_m.matrix(), beta)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// AnnoGK on an already augmented `Z_M = (z, z̃)` and joint matrix `Σ_M`.
/// With no annotation columns this is the unit-weight GhostKnockoff Lasso.
pub fn annogk_fit_augmented(
    zm: &DVector<f64>,
    sigma_m: &SigmaM,
    n: usize,
    a: &AnnotationMatrix,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    cfg.validate()?;
    if sigma_m.m() != 1 {
        return Err(Error::InvalidArgument("the summary-statistics pipeline supports M = 1 only".into()));
    }
    let p = sigma_m.p();
    check_annotations(a.values(), p)?;
    let problem = LassoProblem::from_summary(zm, sigma_m, n)?;
    let ones = DVector::from_element(p, 1.0);
    let grid = cfg.lambda0_grid.resolve(problem.lambda_max(&ones));
    let splitter = PseudoSplitter::new(sigma_m)?;
    let splits = (0..cfg.pseudo_splits)
        .map(|s| splitter.split(zm, n, cfg.frac_train, seed::derive(cfg.seed, 0x5_0000 + s as u64)))
        .collect::<Result<Vec<_>>>()?;
    let d = cfg.resolved_d(a.n_annotations());
    let neutral = |lambda0: f64| PenaltyState::neutral(p, a.n_annotations(), d, cfg.tau2, lambda0);

    let train_problems = splits
        .iter()
        .map(|s| LassoProblem::from_summary(&s.z_train, sigma_m, s.n_train))
        .collect::<Result<Vec<_>>>()?;
    // Task (split, grid point) runs warm along the grid within each split.
    let per_split = cfg.execution.try_map(splits.len(), |s| {
        let split = &splits[s];
        let mut scores = Vec::with_capacity(grid.len());
        let mut warm: Option<DVector<f64>> = None;
        for &lambda0 in &grid {
            let alt = alternate(&train_problems[s], a.values(), split.n_train, neutral(lambda0), warm.as_ref(), cfg)?;
            scores.push(pseudo_validation_score(&alt.fit.beta, &split.z_valid, sigma_m, split.n_valid));
            warm = Some(alt.fit.beta);
        }
        Ok(scores)
    })?;
    let validation_scores: Vec<f64> = (0..grid.len())
        .map(|g| per_split.iter().map(|v| v[g]).sum::<f64>() / splits.len() as f64)
        .collect();
    let best = argmax(&validation_scores);

    let alt = alternate(&problem, a.values(), n, neutral(grid[best]), None, cfg)?;
    let fit = lasso::solve(&problem, &alt.state.phi, grid[best], Some(&alt.fit.beta), &cfg.solver)?;
    let (stats, selection) = select(&fit.beta, p, cfg.q)?;
    Ok(PipelineResult {
        fit,
        penalty: alt.state,
        stats,
        selection,
        lambda0_grid: grid,
        cv_errors: Vec::new(),
        validation_scores,
        trace: alt.trace,
        outer_iterations: alt.iterations,
        outer_converged: alt.converged,
    })
}

/// Seed stream for the knockoff z-scores drawn by [`annogk_fit`].
pub const GHOST_STREAM: u64 = 0x6057;

/// Knockoff z-scores plus `Σ_M` for a set of summary statistics.
pub struct GhostData {
    pub model: KnockoffModel,
    pub sigma_m: SigmaM,
    pub zm: DVector<f64>,
}

pub fn ghost_augment(z: &DVector<f64>, ld: &LdMatrix, seed_value: u64) -> Result<GhostData> {
    if z.len() != ld.p() {
        return Err(Error::dims("z-scores vs LD matrix", z.len(), ld.p()));
    }
    let model = KnockoffModel::from_ld(ld, 1)?;
    let zm = knockoff::sample_knockoff_zscores(z, &model, seed_value)?;
    let sigma_m = model.sigma_m()?;
    Ok(GhostData { model, sigma_m, zm })
}

/// AnnoGK from summary statistics and an LD matrix (one knockoff copy).
pub fn annogk_fit(z: &SummaryStats, ld: &LdMatrix, a: &AnnotationMatrix, cfg: &PipelineConfig) -> Result<PipelineResult> {
    let ghost = ghost_augment(&z.z, ld, seed::derive(cfg.seed, GHOST_STREAM))?;
    annogk_fit_augmented(&ghost.zm, &ghost.sigma_m, z.n, a, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knockoff::{ar1_covariance, build_sigma_m};
    use approx::assert_relative_eq;

    #[test]
    fn split_sizes_and_determinism() {
        let sigma = ar1_covariance(4, 0.5);
        let d = knockoff::solve_d_equicorrelated(&sigma, 1).unwrap();
        let sm = build_sigma_m(&sigma, &d, 1).unwrap();
        let zm = DVector::from_fn(8, |i, _| i as f64 * 0.1);
        let a = make_pseudo_split(&zm, &sm, 5000, 0.8, 3).unwrap();
        assert_eq!((a.n_train, a.n_valid), (4000, 1000));
        let b = make_pseudo_split(&zm, &sm, 5000, 0.8, 3).unwrap();
        assert_eq!(a.z_train, b.z_train);
        assert_eq!(a.z_valid, b.z_valid);
        // Training and validation pieces reassemble z exactly.
        let back = (&a.z_train * 4000f64.sqrt() + &a.z_valid * 1000f64.sqrt()) / 5000f64.sqrt();
        for (x, y) in back.iter().zip(zm.iter()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn score_of_zero_is_zero() {
        let sm = build_sigma_m(&DMatrix::identity(2, 2), &DVector::from_element(2, 1.0), 1).unwrap();
        let s = pseudo_validation_score(&DVector::zeros(4), &DVector::from_element(4, 3.0), &sm, 100);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn identity_summary_fit_is_soft_threshold() {
        let sm = build_sigma_m(&DMatrix::identity(3, 3), &DVector::from_element(3, 1.0), 1).unwrap();
        let zm = DVector::from_vec(vec![4.0, -2.0, 0.5, 1.0, -3.5, 0.2]);
        let n = 100;
        let phi = DVector::from_vec(vec![1.0, 0.5, 2.0]);
        let l0 = 0.15;
        let fit = lasso::fit_summary(&zm, &sm, n, &phi, l0).unwrap();
        for j in 0..6 {
            let c = zm[j] / 10.0;
            let expected = c.signum() * (c.abs() - l0 * phi[j % 3]).max(0.0);
            assert_relative_eq!(fit.beta[j], expected, epsilon = 1e-8);
        }
        let big = lasso::fit_summary(&zm, &sm, n, &phi, 10.0).unwrap();
        assert!(big.beta.iter().all(|b| *b == 0.0));
    }
}
