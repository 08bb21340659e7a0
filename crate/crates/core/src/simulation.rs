//! Synthetic AR(1) experiments: data generation, paired method comparisons,
//! power/FDP metrics and a small LD clustering helper.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::annogk::{self, annogk_fit_augmented};
use crate::annokn::{annokn_fit_prepared, annokn_lite_fit_prepared, knockoff_lasso_fit, IndividualProblem};
use crate::data::{standardize, AnnotationMatrix, LdMatrix, StandardizedMatrix};
use crate::error::{Error, Result};
use crate::knockoff::{self, ar1_covariance, KnockoffModel, SigmaM};
use crate::linalg;
use crate::par::Execution;
use crate::pipeline::{parse_value, PipelineConfig, PipelineResult};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Signal {
    /// Fraction of response variance explained by the covariates.
    H2(f64),
    /// Coefficient magnitude `amplitude / √n`.
    Amplitude(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnnotationKind {
    /// `A_j = j`.
    Index,
    /// `A_j = 1` inside the causal pool, 0 outside.
    BinaryPool,
    None,
}

impl FromStr for AnnotationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "index" => Ok(AnnotationKind::Index),
            "binary" | "binary-pool" => Ok(AnnotationKind::BinaryPool),
            "none" => Ok(AnnotationKind::None),
            _ => Err(Error::InvalidArgument(format!(
                "invalid value '{s}' for key 'annotation' (expected index, binary or none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimScenario {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub n_causal: usize,
    /// Causal covariates are drawn from the first `causal_pool` indices.
    pub causal_pool: usize,
    /// Selection probability of covariate `j` (1-based) is `∝ j^(−exponent)`.
    pub causal_prob_exponent: f64,
    pub signal: Signal,
    pub annotation: AnnotationKind,
    /// Extra columns, each an independent permutation of `1..=p`.
    pub noise_annotations: usize,
    pub replicates: usize,
    pub seed: u64,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n < 10 || self.p == 0 {
            return bad(format!("need n >= 10 and p >= 1 (n = {}, p = {})", self.n, self.p));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.n_causal > self.causal_pool || self.causal_pool > self.p {
            return bad(format!(
                "need n_causal <= causal_pool <= p ({} / {} / {})",
                self.n_causal, self.causal_pool, self.p
            ));
        }
        if !self.causal_prob_exponent.is_finite() {
            return bad("causal_prob_exponent must be finite".into());
        }
        match self.signal {
            Signal::H2(h) if !(0.0..1.0).contains(&h) => return bad(format!("h2 must lie in [0, 1), got {h}")),
            Signal::Amplitude(a) if !(a.is_finite() && a >= 0.0) => {
                return bad(format!("amplitude must be non-negative, got {a}"))
            }
            _ => {}
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        Ok(())
    }

    /// Covariance of a covariate row.
    pub fn covariance(&self) -> DMatrix<f64> {
        ar1_covariance(self.p, self.rho)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Knockoffs,
    AnnoKn,
    AnnoKnLite,
    GhostKnockoff,
    AnnoGk,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Knockoffs,
        Method::AnnoKn,
        Method::AnnoKnLite,
        Method::GhostKnockoff,
        Method::AnnoGk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Knockoffs => "knockoffs",
            Method::AnnoKn => "annokn",
            Method::AnnoKnLite => "annokn_lite",
            Method::GhostKnockoff => "ghostknockoff",
            Method::AnnoGk => "annogk",
        }
    }

    pub fn is_summary_level(self) -> bool {
        matches!(self, Method::GhostKnockoff | Method::AnnoGk)
    }

    pub fn uses_annotations(self) -> bool {
        matches!(self, Method::AnnoKn | Method::AnnoKnLite | Method::AnnoGk)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

/// How the summary-level methods obtain `Z_M` and `Σ_M` from a simulated
/// dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SummarySource {
    /// `z_j = √n·corr(x_j, y)` with the in-sample LD matrix; knockoff
    /// z-scores are drawn from it.
    #[default]
    SampleLd,
    /// Gram and z-scores of the stacked `[X, X̃]` shared with the
    /// individual-level methods.
    InSampleKnockoffs,
}

#[derive(Clone, Debug)]
pub struct ComparisonOptions {
    pub methods: Vec<Method>,
    pub q_grid: Vec<f64>,
    pub config: PipelineConfig,
    pub summary_source: SummarySource,
    /// Parallelism across replicates; pipelines use `config.execution`.
    pub execution: Execution,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            q_grid: vec![0.1, 0.2, 0.3],
            config: PipelineConfig::default(),
            summary_source: SummarySource::default(),
            execution: Execution::default(),
        }
    }
}

impl ComparisonOptions {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods requested".into()));
        }
        if self.q_grid.is_empty() {
            return Err(Error::InvalidArgument("q grid is empty".into()));
        }
        for q in &self.q_grid {
            if !(*q > 0.0 && *q < 1.0) {
                return Err(Error::InvalidQ(*q));
            }
        }
        self.config.validate()
    }
}

/// One simulated dataset.
#[derive(Clone, Debug)]
pub struct SimDataset {
    pub x: StandardizedMatrix,
    pub y: DVector<f64>,
    /// Coefficients on the raw (unit-variance) covariate scale.
    pub beta: DVector<f64>,
    /// Zero-based causal indices, ascending.
    pub support: Vec<usize>,
    pub annotations: AnnotationMatrix,
}

/// Draws `k` distinct indices from `0..weights.len()`, each step picking
/// proportionally to the remaining weights.
pub fn weighted_sample_without_replacement<R: rand::Rng>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k.min(w.len()) {
        let total: f64 = w.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (j, wj) in w.iter().enumerate() {
            if *wj <= 0.0 {
                continue;
            }
            pick = Some(j);
            if u < *wj {
                break;
            }
            u -= wj;
        }
        let j = pick.expect("positive weight remains");
        out.push(j);
        w[j] = 0.0;
    }
    out.sort_unstable();
    out
}

fn ar1_rows<R: rand::Rng>(n: usize, p: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    // Row-wise recursion x_j = ρ x_{j−1} + √(1−ρ²) e_j, i.e. the lower
    // Cholesky factor of Σ_ρ applied to white noise.
    let c = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev: f64 = StandardNormal.sample(rng);
        x[(i, 0)] = prev;
        for j in 1..p {
            let e: f64 = StandardNormal.sample(rng);
            prev = rho * prev + c * e;
            x[(i, j)] = prev;
        }
    }
    x
}

fn build_annotations<R: rand::Rng>(s: &SimScenario, rng: &mut R) -> Result<AnnotationMatrix> {
    let p = s.p;
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    match s.annotation {
        AnnotationKind::Index => cols.push(("index".into(), (1..=p).map(|j| j as f64).collect())),
        AnnotationKind::BinaryPool => cols.push((
            "pool".into(),
            (0..p).map(|j| if j < s.causal_pool { 1.0 } else { 0.0 }).collect(),
        )),
        AnnotationKind::None => {}
    }
    for k in 0..s.noise_annotations {
        let mut v: Vec<f64> = (1..=p).map(|j| j as f64).collect();
        v.shuffle(rng);
        cols.push((format!("noise{}", k + 1), v));
    }
    if cols.is_empty() {
        return Ok(AnnotationMatrix::empty(p));
    }
    let raw = DMatrix::from_fn(p, cols.len(), |j, l| cols[l].1[j]);
    let names = cols.into_iter().map(|(n, _)| n).collect();
    let ids = (0..p).map(|j| format!("x{}", j + 1)).collect();
    AnnotationMatrix::from_raw(ids, names, &raw)
}

/// One replicate of `scenario`, fully determined by `replicate_seed`.
pub fn generate_ar1(scenario: &SimScenario, replicate_seed: u64) -> Result<SimDataset> {
    scenario.validate()?;
    let (n, p) = (scenario.n, scenario.p);
    let mut rng = seed::rng(replicate_seed);
    let weights: Vec<f64> = (1..=scenario.causal_pool)
        .map(|j| (j as f64).powf(-scenario.causal_prob_exponent))
        .collect();
    let support = weighted_sample_without_replacement(&weights, scenario.n_causal, &mut rng);
    let mut signs = DVector::zeros(p);
    for &j in &support {
        signs[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let amplitude = match scenario.signal {
        Signal::Amplitude(a) => a / (n as f64).sqrt(),
        Signal::H2(h2) => {
            let v = linalg::quad_form(&scenario.covariance(), &signs);
            if v > 0.0 {
                (h2 / ((1.0 - h2) * v)).sqrt()
            } else {
                0.0
            }
        }
    };
    let beta = signs * amplitude;
    let raw = ar1_rows(n, p, scenario.rho, &mut rng);
    let noise = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let y_raw = &raw * &beta + noise;
    let annotations = build_annotations(scenario, &mut rng)?;
    let x = standardize(&raw)?;
    let y = standardize(&DMatrix::from_column_slice(n, 1, y_raw.as_slice()))?
        .values()
        .column(0)
        .into_owned();
    Ok(SimDataset {
        x,
        y,
        beta,
        support,
        annotations,
    })
}

/// `|selected \ support| / max(|selected|, 1)`.
pub fn fdp(selected: &[usize], support: &[usize]) -> f64 {
    let false_hits = selected.iter().filter(|j| support.binary_search(j).is_err()).count();
    false_hits as f64 / selected.len().max(1) as f64
}

/// `|selected ∩ support| / |support|` (0 for an empty support).
pub fn power(selected: &[usize], support: &[usize]) -> f64 {
    if support.is_empty() {
        return 0.0;
    }
    let hits = selected.iter().filter(|j| support.binary_search(j).is_ok()).count();
    hits as f64 / support.len() as f64
}

/// 64-bit FNV-1a over the IEEE bits of a matrix, used to check that methods
/// within a replicate saw the same knockoff draw.
pub fn matrix_digest(m: &DMatrix<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in m.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub q: f64,
    pub selected: Vec<usize>,
    pub fdp: f64,
    pub power: f64,
}

/// One method fitted on one replicate, thresholded at every target level.
#[derive(Clone, Debug)]
pub struct MethodOutcome {
    pub method: Method,
    pub w: DVector<f64>,
    pub lambda0: f64,
    pub lambda_anno: DVector<f64>,
    /// Digest of the knockoff data the method consumed.
    pub knockoff_digest: u64,
    pub selections: Vec<Selection>,
}

#[derive(Clone, Debug)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub support: Vec<usize>,
    pub outcomes: Vec<MethodOutcome>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub method: Method,
    pub q: f64,
    pub mean_power: f64,
    pub se_power: f64,
    pub mean_fdp: f64,
    pub se_fdp: f64,
}

#[derive(Clone, Debug)]
pub struct SimMetrics {
    pub replicates: Vec<ReplicateOutcome>,
    pub summaries: Vec<MetricSummary>,
}

impl SimMetrics {
    pub fn summary(&self, method: Method, q: f64) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.method == method && s.q == q)
    }

    /// Outcome of `method` on every replicate, in replicate order.
    pub fn outcomes(&self, method: Method) -> Vec<&MethodOutcome> {
        self.replicates
            .iter()
            .filter_map(|r| r.outcomes.iter().find(|o| o.method == method))
            .collect()
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn summarize(replicates: &[ReplicateOutcome], methods: &[Method], q_grid: &[f64]) -> Vec<MetricSummary> {
    let mut out = Vec::new();
    for &method in methods {
        for (qi, &q) in q_grid.iter().enumerate() {
            let (mut pw, mut fd) = (Vec::new(), Vec::new());
            for r in replicates {
                if let Some(o) = r.outcomes.iter().find(|o| o.method == method) {
                    pw.push(o.selections[qi].power);
                    fd.push(o.selections[qi].fdp);
                }
            }
            let (mean_power, se_power) = mean_se(&pw);
            let (mean_fdp, se_fdp) = mean_se(&fd);
            out.push(MetricSummary {
                method,
                q,
                mean_power,
                se_power,
                mean_fdp,
                se_fdp,
            });
        }
    }
    out
}

fn outcome(
    method: Method,
    result: PipelineResult,
    digest: u64,
    support: &[usize],
    q_grid: &[f64],
) -> Result<MethodOutcome> {
    let selections = q_grid
        .iter()
        .map(|&q| {
            let sel = crate::filter::knockoff_threshold(&result.stats, q)?;
            Ok(Selection {
                q,
                fdp: fdp(&sel.selected, support),
                power: power(&sel.selected, support),
                selected: sel.selected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodOutcome {
        method,
        w: result.stats.w,
        lambda0: result.penalty.lambda0,
        lambda_anno: result.penalty.lambda_anno,
        knockoff_digest: digest,
        selections,
    })
}

/// Summary statistics derived from one simulated dataset.
pub struct SummaryData {
    pub zm: DVector<f64>,
    pub sigma_m: SigmaM,
    pub digest: u64,
}

pub fn summary_data(
    data: &SimDataset,
    x_knock: &StandardizedMatrix,
    source: SummarySource,
    knock_seed: u64,
) -> Result<SummaryData> {
    let n = data.x.nrows();
    let nf = n as f64;
    // y is standardized, so corr(x_j, y) = x_jᵀy / (n − 1).
    let scale = nf.sqrt() / (nf - 1.0);
    match source {
        SummarySource::SampleLd => {
            let z = data.x.values().tr_mul(&data.y) * scale;
            let ld = LdMatrix::new(data.x.correlation(), 0.0)?;
            let ghost = annogk::ghost_augment(&z, &ld, knock_seed)?;
            let digest = matrix_digest(&DMatrix::from_column_slice(ghost.zm.len(), 1, ghost.zm.as_slice()));
            Ok(SummaryData {
                zm: ghost.zm,
                sigma_m: ghost.sigma_m,
                digest,
            })
        }
        SummarySource::InSampleKnockoffs => {
            let xx = data.x.hstack(x_knock)?;
            let zm = xx.values().tr_mul(&data.y) * scale;
            let sigma_m = SigmaM::from_matrix(xx.correlation(), data.x.ncols())?;
            Ok(SummaryData {
                zm,
                sigma_m,
                digest: matrix_digest(x_knock.values()),
            })
        }
    }
}

/// Runs one replicate of every requested method on a shared knockoff draw.
pub fn run_replicate(
    scenario: &SimScenario,
    model: &KnockoffModel,
    opts: &ComparisonOptions,
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let rep_seed = seed::derive(scenario.seed, replicate as u64);
    let data = generate_ar1(scenario, rep_seed)?;
    let knock_seed = seed::derive(rep_seed, 1);
    let x_knock = knockoff::sample_knockoffs(&data.x, model, knock_seed)?;
    let cfg = PipelineConfig {
        seed: seed::derive(rep_seed, 2),
        ..opts.config.clone()
    };
    let p = scenario.p;
    let no_anno = AnnotationMatrix::empty(p);
    let mut outcomes = Vec::with_capacity(opts.methods.len());

    let needs_individual = opts.methods.iter().any(|m| !m.is_summary_level());
    let prepared = if needs_individual {
        Some(IndividualProblem::from_parts(
            &data.y,
            &data.x,
            &x_knock,
            cfg.cv_folds,
            seed::derive(rep_seed, 3),
        )?)
    } else {
        None
    };
    let summary = if opts.methods.iter().any(|m| m.is_summary_level()) {
        Some(summary_data(&data, &x_knock, opts.summary_source, seed::derive(rep_seed, 4))?)
    } else {
        None
    };
    let x_digest = matrix_digest(x_knock.values());

    for &method in &opts.methods {
        let result = match method {
            Method::Knockoffs => knockoff_lasso_fit(prepared.as_ref().expect("prepared"), &cfg)?,
            Method::AnnoKn => annokn_fit_prepared(prepared.as_ref().expect("prepared"), &data.annotations, &cfg)?,
            Method::AnnoKnLite => {
                annokn_lite_fit_prepared(prepared.as_ref().expect("prepared"), &data.annotations, &cfg)?
            }
            Method::GhostKnockoff | Method::AnnoGk => {
                let s = summary.as_ref().expect("summary data");
                let a = if method == Method::AnnoGk { &data.annotations } else { &no_anno };
                annogk_fit_augmented(&s.zm, &s.sigma_m, scenario.n, a, &cfg)?
            }
        };
        let digest = if method.is_summary_level() {
            summary.as_ref().expect("summary data").digest
        } else {
            x_digest
        };
        outcomes.push(outcome(method, result, digest, &data.support, &opts.q_grid)?);
    }
    Ok(ReplicateOutcome {
        replicate,
        seed: rep_seed,
        support: data.support,
        outcomes,
    })
}

/// Runs every replicate of `scenario` and aggregates power and FDP.
pub fn run_comparison(scenario: &SimScenario, opts: &ComparisonOptions) -> Result<SimMetrics> {
    scenario.validate()?;
    opts.validate()?;
    let model = KnockoffModel::equicorrelated(&scenario.covariance(), 1)?;
    let replicates = opts
        .execution
        .try_map(scenario.replicates, |r| run_replicate(scenario, &model, opts, r))?;
    let summaries = summarize(&replicates, &opts.methods, &opts.q_grid);
    Ok(SimMetrics { replicates, summaries })
}

/// A scenario file: the scenario itself plus the comparison settings.
#[derive(Clone, Debug)]
pub struct SimulationSpec {
    pub scenario: SimScenario,
    pub options: ComparisonOptions,
    /// Whether `seed` was given explicitly.
    pub seed_given: bool,
}

const SCENARIO_KEYS: &[&str] = &[
    "n",
    "p",
    "rho",
    "n_causal",
    "causal_pool",
    "causal_prob_exponent",
    "h2",
    "amplitude",
    "annotation",
    "noise_annotations",
    "replicates",
    "methods",
    "q_grid",
    "summary_source",
];

fn required<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = map
        .get(key)
        .ok_or_else(|| Error::InvalidArgument(format!("missing required key '{key}'")))?;
    parse_value(key, v)
}

fn optional<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        Some(v) => parse_value(key, v),
        None => Ok(default),
    }
}

impl SimulationSpec {
    /// Builds a specification from parsed `key = value` pairs. `seed` is
    /// optional; when absent `fallback_seed` is used.
    pub fn from_map(map: &BTreeMap<String, String>, fallback_seed: u64) -> Result<Self> {
        for key in map.keys() {
            if !SCENARIO_KEYS.contains(&key.as_str()) && !PipelineConfig::KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidArgument(format!("unknown key '{key}'")));
            }
        }
        let signal = match (map.get("h2"), map.get("amplitude")) {
            (Some(h), None) => Signal::H2(parse_value("h2", h)?),
            (None, Some(a)) => Signal::Amplitude(parse_value("amplitude", a)?),
            (None, None) => {
                return Err(Error::InvalidArgument("missing required key 'h2' or 'amplitude'".into()))
            }
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument("keys 'h2' and 'amplitude' are mutually exclusive".into()))
            }
        };
        let seed_given = map.contains_key("seed");
        let seed_value = optional(map, "seed", fallback_seed)?;
        let p: usize = required(map, "p")?;
        let scenario = SimScenario {
            n: required(map, "n")?,
            p,
            rho: required(map, "rho")?,
            n_causal: required(map, "n_causal")?,
            causal_pool: optional(map, "causal_pool", p)?,
            causal_prob_exponent: optional(map, "causal_prob_exponent", 0.0)?,
            signal,
            annotation: optional(map, "annotation", AnnotationKind::Index)?,
            noise_annotations: optional(map, "noise_annotations", 0)?,
            replicates: required(map, "replicates")?,
            seed: seed_value,
        };
        scenario.validate()?;

        let mut config = PipelineConfig::default();
        for (k, v) in map {
            if k != "seed" {
                config.apply_key(k, v)?;
            }
        }
        config.seed = seed_value;
        let methods = match map.get("methods") {
            Some(v) => v.split(',').map(str::parse).collect::<Result<Vec<Method>>>()?,
            None => Method::ALL.to_vec(),
        };
        let q_grid = match map.get("q_grid") {
            Some(v) => v.split(',').map(|s| parse_value("q_grid", s.trim())).collect::<Result<Vec<f64>>>()?,
            None => vec![0.1, 0.2, 0.3],
        };
        let summary_source = match map.get("summary_source").map(String::as_str) {
            None | Some("sample_ld") => SummarySource::SampleLd,
            Some("in_sample") => SummarySource::InSampleKnockoffs,
            Some(other) => {
                return Err(Error::InvalidArgument(format!(
                    "invalid value '{other}' for key 'summary_source' (expected sample_ld or in_sample)"
                )))
            }
        };
        let options = ComparisonOptions {
            methods,
            q_grid,
            config,
            summary_source,
            execution: Execution::default(),
        };
        options.validate()?;
        Ok(Self {
            scenario,
            options,
            seed_given,
        })
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage clusters on distance `1 − |r|` cut at `1 − r_threshold`
/// (connected components of the `|r| > r_threshold` graph); returns the
/// smallest-p-value member of each cluster, lowest index on ties, ascending.
pub fn cluster_representatives(sigma: &LdMatrix, pvals: &DVector<f64>, r_threshold: f64) -> Result<Vec<usize>> {
    let p = sigma.p();
    if pvals.len() != p {
        return Err(Error::dims("p-values vs LD matrix", pvals.len(), p));
    }
    if pvals.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
        return Err(Error::InvalidArgument("p-values must lie in (0, 1]".into()));
    }
    let s = sigma.sigma();
    let mut uf = UnionFind::new(p);
    for i in 0..p {
        for j in (i + 1)..p {
            if s[(i, j)].abs() > r_threshold {
                uf.union(i, j);
            }
        }
    }
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for j in 0..p {
        let root = uf.find(j);
        let e = best.entry(root).or_insert(j);
        if pvals[j] < pvals[*e] {
            *e = j;
        }
    }
    let mut reps: Vec<usize> = best.into_values().collect();
    reps.sort_unstable();
    Ok(reps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(annotation: AnnotationKind) -> SimScenario {
        SimScenario {
            n: 200,
            p: 20,
            rho: 0.5,
            n_causal: 5,
            causal_pool: 10,
            causal_prob_exponent: 2.0,
            signal: Signal::H2(0.5),
            annotation,
            noise_annotations: 0,
            replicates: 2,
            seed: 11,
        }
    }

    #[test]
    fn weighted_sampling_is_distinct_and_biased() {
        let w: Vec<f64> = (1..=10).map(|j| (j as f64).powi(-2)).collect();
        let mut rng = seed::rng(1);
        let mut first = 0;
        for _ in 0..2000 {
            let s = weighted_sample_without_replacement(&w, 3, &mut rng);
            assert_eq!(s.len(), 3);
            assert!(s.windows(2).all(|p| p[0] < p[1]));
            if s.contains(&0) {
                first += 1;
            }
        }
        // Index 0 carries more than half the weight, so it is almost always drawn.
        assert!(first > 1800, "{first}");
        let all = weighted_sample_without_replacement(&w, 10, &mut rng);
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn generation_is_deterministic_and_within_pool() {
        let s = small(AnnotationKind::Index);
        let a = generate_ar1(&s, 5).unwrap();
        let b = generate_ar1(&s, 5).unwrap();
        assert_eq!(a.x.values(), b.x.values());
        assert_eq!(a.y, b.y);
        assert_eq!(a.support.len(), 5);
        assert!(a.support.iter().all(|j| *j < 10));
        assert_eq!(a.annotations.n_annotations(), 1);
        // Standardized index annotation is increasing in j.
        let col = a.annotations.values().column(0);
        assert!((1..20).all(|j| col[j] > col[j - 1]));
    }

    #[test]
    fn h2_matches_quadratic_form() {
        let s = SimScenario {
            n: 50_000,
            p: 8,
            causal_pool: 8,
            n_causal: 3,
            signal: Signal::H2(0.2),
            ..small(AnnotationKind::None)
        };
        let d = generate_ar1(&s, 9).unwrap();
        let exact = linalg::quad_form(&s.covariance(), &d.beta);
        assert!((exact / (exact + 1.0) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn binary_and_noise_annotations() {
        let mut s = small(AnnotationKind::BinaryPool);
        s.noise_annotations = 2;
        let d = generate_ar1(&s, 3).unwrap();
        assert_eq!(d.annotations.names(), &["pool", "noise1", "noise2"]);
        let pool = d.annotations.values().column(0);
        assert!(pool[0] > 0.0 && pool[19] < 0.0);
    }

    #[test]
    fn metric_examples() {
        assert_eq!(fdp(&[], &[1, 2]), 0.0);
        assert_eq!(fdp(&[0, 1, 2, 3], &[1, 2]), 0.5);
        assert_eq!(power(&[0, 1, 2, 3], &[1, 2]), 1.0);
        assert_eq!(power(&[1], &[1, 2]), 0.5);
        assert_eq!(power(&[1], &[]), 0.0);
    }

    #[test]
    fn clustering_examples() {
        let id = LdMatrix::new(DMatrix::identity(4, 4), 0.0).unwrap();
        let pv = DVector::from_vec(vec![0.5, 0.1, 0.2, 0.9]);
        assert_eq!(cluster_representatives(&id, &pv, 0.5).unwrap(), vec![0, 1, 2, 3]);

        // Nearly perfectly correlated pair (an exact 1 is not positive definite).
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.999, 0.999, 1.0]);
        let ld = LdMatrix::new(s, 0.0).unwrap();
        let reps = cluster_representatives(&ld, &DVector::from_vec(vec![0.3, 0.01]), 0.5).unwrap();
        assert_eq!(reps, vec![1]);
        let tie = cluster_representatives(&ld, &DVector::from_vec(vec![0.2, 0.2]), 0.5).unwrap();
        assert_eq!(tie, vec![0]);
    }

    #[test]
    fn spec_parsing() {
        let text = "n = 300\np = 20\nrho = 0.5\nn_causal = 4\ncausal_pool = 10\nh2 = 0.3\nreplicates = 3\nseed = 7\nmethods = knockoffs,annokn\nq_grid = 0.1,0.2\ntau2 = 2\n";
        let map = crate::pipeline::parse_key_values(text).unwrap();
        let spec = SimulationSpec::from_map(&map, 0).unwrap();
        assert!(spec.seed_given);
        assert_eq!(spec.scenario.seed, 7);
        assert_eq!(spec.options.methods, vec![Method::Knockoffs, Method::AnnoKn]);
        assert_eq!(spec.options.config.tau2, 2.0);

        let mut missing = map.clone();
        missing.remove("n");
        let err = SimulationSpec::from_map(&missing, 0).unwrap_err().to_string();
        assert!(err.contains("'n'"), "{err}");
        let mut unknown = map.clone();
        unknown.insert("colour".into(), "red".into());
        assert!(SimulationSpec::from_map(&unknown, 0).is_err());
        let mut both = map;
        both.insert("amplitude".into(), "3".into());
        assert!(SimulationSpec::from_map(&both, 0).is_err());
    }

    #[test]
    fn comparison_is_paired_and_deterministic() {
        let s = small(AnnotationKind::Index);
        let opts = ComparisonOptions {
            methods: vec![Method::Knockoffs, Method::AnnoKnLite],
            q_grid: vec![0.2, 0.3],
            config: PipelineConfig {
                lambda0_grid: crate::pipeline::GridSpec::Relative { count: 6, lo_frac: 0.05 },
                ..PipelineConfig::default()
            },
            ..ComparisonOptions::default()
        };
        let a = run_comparison(&s, &opts).unwrap();
        let b = run_comparison(&s, &ComparisonOptions {
            execution: Execution::Sequential,
            ..opts.clone()
        })
        .unwrap();
        assert_eq!(a.summaries, b.summaries);
        assert_eq!(a.summaries.len(), 4);
        for r in &a.replicates {
            assert_eq!(r.outcomes[0].knockoff_digest, r.outcomes[1].knockoff_digest);
            for o in &r.outcomes {
                for sel in &o.selections {
                    assert_eq!(sel.fdp, fdp(&sel.selected, &r.support));
                }
            }
        }
    }
}
