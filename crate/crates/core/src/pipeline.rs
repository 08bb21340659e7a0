//! Configuration, results and the alternating β/λ maximization shared by the
//! individual-level and summary-statistics pipelines.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::{self, FeatureStats, SelectionResult};
use crate::lasso::{self, FitResult, LassoProblem, SolverOptions};
use crate::par::Execution;
use crate::weights::{self, PenaltyState};

/// Candidate set for the overall penalty `λ₀`.
#[derive(Clone, Debug, PartialEq)]
pub enum GridSpec {
    /// Explicit values (sorted descending before use).
    Explicit(Vec<f64>),
    /// `count` log-spaced points from `λ_max` down to `lo_frac · λ_max`.
    Relative { count: usize, lo_frac: f64 },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Relative {
            count: 20,
            lo_frac: 0.01,
        }
    }
}

impl GridSpec {
    /// Parses `count:lo_frac` (e.g. `20:0.01`) or a comma-separated list.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("invalid lambda0 grid '{s}'"));
        if let Some((c, f)) = s.split_once(':') {
            let count = c.trim().parse::<usize>().map_err(|_| bad())?;
            let lo_frac = f.trim().parse::<f64>().map_err(|_| bad())?;
            let g = GridSpec::Relative { count, lo_frac };
            g.validate()?;
            return Ok(g);
        }
        let vals = s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let g = GridSpec::Explicit(vals);
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GridSpec::Explicit(v) => {
                if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(Error::InvalidArgument("lambda0 grid must be non-empty and strictly positive".into()));
                }
            }
            GridSpec::Relative { count, lo_frac } => {
                if *count == 0 || !(*lo_frac > 0.0 && *lo_frac <= 1.0) {
                    return Err(Error::InvalidArgument("relative lambda0 grid needs count >= 1 and 0 < lo_frac <= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Concrete grid, sorted descending and de-duplicated.
    pub fn resolve(&self, lambda_max: f64) -> Vec<f64> {
        let mut g = match self {
            GridSpec::Explicit(v) => v.clone(),
            GridSpec::Relative { count, lo_frac } => {
                // An all-zero linear term would give λ_max = 0.
                let hi = if lambda_max > 0.0 { lambda_max } else { 1e-8 };
                lasso::log_grid(hi, *lo_frac, *count)
            }
        };
        g.sort_by(|a, b| b.total_cmp(a));
        g.dedup();
        g
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub lambda0_grid: GridSpec,
    pub cv_folds: usize,
    /// Annotation scaling; `None` means `√L`.
    pub d: Option<f64>,
    pub tau2: f64,
    pub max_outer_iter: usize,
    pub outer_tol: f64,
    pub seed: u64,
    /// Target FDR level for the final selection.
    pub q: f64,
    /// Training fraction for pseudo-summary statistics.
    pub frac_train: f64,
    pub pseudo_splits: usize,
    pub solver: SolverOptions,
    pub execution: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lambda0_grid: GridSpec::default(),
            cv_folds: 5,
            d: None,
            tau2: 1.0,
            max_outer_iter: 50,
            outer_tol: 1e-4,
            seed: 0,
            q: 0.2,
            frac_train: 0.8,
            pseudo_splits: 5,
            solver: SolverOptions::default(),
            execution: Execution::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambda0_grid.validate()?;
        if self.cv_folds < 2 {
            return Err(Error::InvalidArgument("cv_folds must be at least 2".into()));
        }
        if !(self.tau2 > 0.0) {
            return Err(Error::InvalidArgument("tau2 must be positive".into()));
        }
        if let Some(d) = self.d {
            if !(d > 0.0) {
                return Err(Error::InvalidArgument("d must be positive".into()));
            }
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::InvalidQ(self.q));
        }
        if !(self.frac_train > 0.0 && self.frac_train < 1.0) {
            return Err(Error::InvalidArgument("frac_train must lie in (0, 1)".into()));
        }
        if self.pseudo_splits == 0 || self.max_outer_iter == 0 {
            return Err(Error::InvalidArgument("pseudo_splits and max_outer_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_d(&self, n_annotations: usize) -> f64 {
        self.d.unwrap_or_else(|| weights::default_d(n_annotations))
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are ignored.
/// Later duplicates are rejected.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, format!("expected key=value, got '{line}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::parse(i + 1, "empty key"));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::parse(i + 1, format!("duplicate key '{k}'")));
        }
    }
    Ok(out)
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("invalid value '{value}' for key '{key}'")))
}

impl PipelineConfig {
    /// Keys understood by [`PipelineConfig::apply_key`].
    pub const KEYS: &'static [&'static str] = &[
        "q",
        "seed",
        "d",
        "tau2",
        "lambda0_grid",
        "cv_folds",
        "max_outer_iter",
        "outer_tol",
        "frac_train",
        "pseudo_splits",
    ];

    /// Applies one configuration key; returns `false` for unknown keys.
    pub fn apply_key(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "q" => self.q = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "d" => self.d = Some(parse_value(key, value)?),
            "tau2" => self.tau2 = parse_value(key, value)?,
            "lambda0_grid" => self.lambda0_grid = GridSpec::parse(value)?,
            "cv_folds" => self.cv_folds = parse_value(key, value)?,
            "max_outer_iter" => self.max_outer_iter = parse_value(key, value)?,
            "outer_tol" => self.outer_tol = parse_value(key, value)?,
            "frac_train" => self.frac_train = parse_value(key, value)?,
            "pseudo_splits" => self.pseudo_splits = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub fit: FitResult,
    pub penalty: PenaltyState,
    pub stats: FeatureStats,
    pub selection: SelectionResult,
    pub lambda0_grid: Vec<f64>,
    /// Cross-validation error per grid point (individual-level; lower is better).
    pub cv_errors: Vec<f64>,
    /// Pseudo-validation score per grid point (summary-level; higher is better).
    pub validation_scores: Vec<f64>,
    /// Log posterior after every outer iteration of the chosen `λ₀`.
    pub trace: Vec<f64>,
    pub outer_iterations: usize,
    pub outer_converged: bool,
}

/// Exact log posterior (up to constants):
/// `−n·(loss + λ₀Σφ_j b_j) + (M+1)Σ log φ_j − ‖λ‖²/(2τ²)`.
pub fn log_posterior(
    problem: &LassoProblem,
    beta: &DVector<f64>,
    state: &PenaltyState,
    a: &DMatrix<f64>,
    n: usize,
) -> f64 {
    let nf = n as f64;
    let copies = (problem.dim() / problem.p()) as f64;
    let log_phi_sum: f64 = state.phi.iter().map(|v| v.ln()).sum();
    let ridge = if a.ncols() == 0 {
        0.0
    } else {
        state.lambda_anno.norm_squared() / (2.0 * state.tau2)
    };
    -nf * problem.objective(beta, &state.phi, state.lambda0) + copies * log_phi_sum - ridge
}

#[derive(Clone, Debug)]
pub struct Alternation {
    pub fit: FitResult,
    pub state: PenaltyState,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternate the weighted Lasso (β-step) with the Newton λ-step until both
/// move by less than `outer_tol` or `max_outer_iter` is reached.
pub fn alternate(
    problem: &LassoProblem,
    a: &DMatrix<f64>,
    n: usize,
    init: PenaltyState,
    init_beta: Option<&DVector<f64>>,
    cfg: &PipelineConfig,
) -> Result<Alternation> {
    let mut state = init;
    let mut beta_prev = init_beta.cloned().unwrap_or_else(|| DVector::zeros(problem.dim()));
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut fit = None;
    while iterations < cfg.max_outer_iter {
        iterations += 1;
        let f = lasso::solve(problem, &state.phi, state.lambda0, Some(&beta_prev), &cfg.solver)?;
        if a.ncols() == 0 {
            trace.push(log_posterior(problem, &f.beta, &state, a, n));
            fit = Some(f);
            converged = true;
            break;
        }
        let next = weights::maximize_lambda(&state, &problem.abs_sums(&f.beta), a, n);
        let lp = log_posterior(problem, &f.beta, &next, a, n);
        if let Some(last) = trace.last() {
            debug_assert!(
                lp >= *last - 1e-6 * (1.0 + last.abs()),
                "log posterior decreased: {last} -> {lp}"
            );
        }
        trace.push(lp);
        let d_beta = (&f.beta - &beta_prev).amax();
        let d_lambda = (&next.lambda_anno - &state.lambda_anno).amax();
        beta_prev = f.beta.clone();
        state = next;
        fit = Some(f);
        if d_beta < cfg.outer_tol && d_lambda < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    Ok(Alternation {
        fit: fit.expect("at least one outer iteration"),
        state,
        trace,
        iterations,
        converged,
    })
}

/// LCD statistics and knockoff+ selection for a fitted `2p` coefficient vector.
pub fn select(beta: &DVector<f64>, p: usize, q: f64) -> Result<(FeatureStats, SelectionResult)> {
    let stats = filter::lcd_stats(beta, p)?;
    let sel = filter::knockoff_threshold(&stats, q)?;
    Ok((stats, sel))
}

pub(crate) fn check_annotations(a: &DMatrix<f64>, p: usize) -> Result<()> {
    if a.nrows() != p {
        return Err(Error::dims("annotation rows vs covariates", a.nrows(), p));
    }
    for (l, col) in a.column_iter().enumerate() {
        if col.sum().abs() > 1e-8 * (p as f64).max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "annotation column {l} is not centred (sum {:.3e})",
                col.sum()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(
            GridSpec::parse("20:0.01").unwrap(),
            GridSpec::Relative { count: 20, lo_frac: 0.01 }
        );
        assert_eq!(
            GridSpec::parse("0.1, 0.3,0.2").unwrap().resolve(1.0),
            vec![0.3, 0.2, 0.1]
        );
        assert!(GridSpec::parse("0:0.1").is_err());
        assert!(GridSpec::parse("0.1,-1").is_err());
        assert!(GridSpec::parse("abc").is_err());
    }

    #[test]
    fn key_value_parsing() {
        let m = parse_key_values("# scenario\nn = 10\n\np=3 # trailing\n").unwrap();
        assert_eq!(m["n"], "10");
        assert_eq!(m["p"], "3");
        assert!(parse_key_values("n=1\nn=2").is_err());
        assert!(parse_key_values("novalue").is_err());
        let mut c = PipelineConfig::default();
        assert!(c.apply_key("tau2", "2.5").unwrap());
        assert_eq!(c.tau2, 2.5);
        assert!(!c.apply_key("bogus", "1").unwrap());
        assert!(c.apply_key("cv_folds", "x").is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::default();
        assert!(c.validate().is_ok());
        c.cv_folds = 1;
        assert!(c.validate().is_err());
        c.cv_folds = 5;
        c.q = 1.5;
        assert!(c.validate().is_err());
    }
}
