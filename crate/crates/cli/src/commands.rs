use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;

use annokn_core::annogk::{annogk_fit, ghost_augment, GHOST_STREAM};
use annokn_core::annokn::{annokn_fit_prepared, annokn_lite_fit_prepared, knockoff_lasso_fit, IndividualProblem, FOLD_STREAM};
use annokn_core::data::{
    self, load_design, load_ld, load_summary_stats, AnnotationMatrix, Design, LdMatrix,
};
use annokn_core::filter::{read_selection, write_selection, SelectionRow};
use annokn_core::knockoff::{sample_knockoffs, KnockoffModel};
use annokn_core::pipeline::parse_key_values;
use annokn_core::seed;
use annokn_core::simulation::{run_comparison, Method, SimMetrics, SimulationSpec};
use annokn_core::{PipelineConfig, PipelineResult};

use crate::output::{append, csv_line, join, Inputs, Run};
use crate::settings::{dims, init_threads, usage, Classify, CmdResult, Settings};
use crate::{FitArgs, FitSsArgs, KnockoffGenArgs, ReportArgs, SimulateArgs};

/// Seed stream for individual-level knockoff copies.
const KNOCKOFF_STREAM: u64 = 1;

// ---------------------------------------------------------------------------
// simulate

pub fn simulate(a: SimulateArgs) -> CmdResult<()> {
    let threads = init_threads(a.tuning.threads)?;
    let mut run = Run::start("simulate", &a.out)?;
    let mut inputs = Inputs::default();
    let bytes = inputs.read(&a.scenario)?;
    let text = String::from_utf8(bytes).map_err(|_| usage("scenario file is not UTF-8 text"))?;
    let mut map = parse_key_values(&text).usage(&format!("reading {}", a.scenario.display()))?;
    map.extend(Settings::load(a.tuning.config.as_deref(), &mut inputs)?);
    let settings = Settings::new(
        map,
        &a.tuning,
        &[
            ("replicates", a.replicates.map(|v| v.to_string())),
            ("q_grid", a.q_grid.clone()),
        ],
    )?;
    let spec = SimulationSpec::from_map(&settings.map, settings.seed).usage("invalid scenario")?;
    let metrics = run_comparison(&spec.scenario, &spec.options).classify()?;

    run.write("replicates.csv", &replicates_csv(&metrics, &spec))?;
    run.write("aggregate.csv", &aggregate_csv(&metrics))?;
    run.write("plot_data.csv", &plot_csv(&metrics, &spec))?;
    run.write("selections.csv", &selections_csv(&metrics))?;
    run.write("truth.csv", &truth_csv(&metrics))?;
    run.write("fits.csv", &fits_csv(&metrics))?;
    run.finish(settings.map, Some(settings.seed), settings.seed_generated, threads, inputs)
}

fn replicates_csv(m: &SimMetrics, spec: &SimulationSpec) -> String {
    let mut s = String::from("method,q,replicate,fdp,power\n");
    for &method in &spec.options.methods {
        for (qi, q) in spec.options.q_grid.iter().enumerate() {
            for (r, o) in m.outcomes(method).iter().enumerate() {
                let sel = &o.selections[qi];
                csv_line(
                    &mut s,
                    &[method.to_string(), q.to_string(), r.to_string(), sel.fdp.to_string(), sel.power.to_string()],
                );
            }
        }
    }
    s
}

fn aggregate_csv(m: &SimMetrics) -> String {
    let mut s = String::from("method,q,mean_power,se_power,mean_fdp,se_fdp\n");
    for r in &m.summaries {
        csv_line(
            &mut s,
            &[
                r.method.to_string(),
                r.q.to_string(),
                r.mean_power.to_string(),
                r.se_power.to_string(),
                r.mean_fdp.to_string(),
                r.se_fdp.to_string(),
            ],
        );
    }
    s
}

/// One row per target level, power and FDR columns per method.
fn plot_csv(m: &SimMetrics, spec: &SimulationSpec) -> String {
    let methods = &spec.options.methods;
    let mut header = vec!["q".to_string()];
    for method in methods {
        header.push(format!("{method}_power"));
        header.push(format!("{method}_fdr"));
    }
    let mut s = String::new();
    csv_line(&mut s, &header);
    for &q in &spec.options.q_grid {
        let mut row = vec![q.to_string()];
        for &method in methods {
            let r = m.summary(method, q).expect("summary for every method and level");
            row.push(r.mean_power.to_string());
            row.push(r.mean_fdp.to_string());
        }
        csv_line(&mut s, &row);
    }
    s
}

/// Selected covariates (1-based, space-separated) per method, replicate and level.
fn selections_csv(m: &SimMetrics) -> String {
    let mut s = String::from("method,replicate,q,selected\n");
    for r in &m.replicates {
        for o in &r.outcomes {
            for sel in &o.selections {
                csv_line(
                    &mut s,
                    &[
                        o.method.to_string(),
                        r.replicate.to_string(),
                        sel.q.to_string(),
                        join(sel.selected.iter().map(|j| j + 1), " "),
                    ],
                );
            }
        }
    }
    s
}

fn truth_csv(m: &SimMetrics) -> String {
    let mut s = String::from("replicate,seed,causal\n");
    for r in &m.replicates {
        csv_line(
            &mut s,
            &[r.replicate.to_string(), r.seed.to_string(), join(r.support.iter().map(|j| j + 1), " ")],
        );
    }
    s
}

fn fits_csv(m: &SimMetrics) -> String {
    let mut s = String::from("method,replicate,lambda0,lambda,knockoff_digest\n");
    for r in &m.replicates {
        for o in &r.outcomes {
            csv_line(
                &mut s,
                &[
                    o.method.to_string(),
                    r.replicate.to_string(),
                    o.lambda0.to_string(),
                    join(o.lambda_anno.iter(), " "),
                    format!("{:016x}", o.knockoff_digest),
                ],
            );
        }
    }
    s
}

// ---------------------------------------------------------------------------
// fit / fit-ss

/// Applies every pipeline key; `extra` keys are accepted but handled by the caller.
fn pipeline_config(settings: &Settings, extra: &[&str]) -> CmdResult<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    for (k, v) in &settings.map {
        if !cfg.apply_key(k, v).usage("invalid configuration")? && !extra.contains(&k.as_str()) {
            return Err(usage(format!("unknown key '{k}'")));
        }
    }
    cfg.seed = settings.seed;
    cfg.validate().usage("invalid configuration")?;
    Ok(cfg)
}

fn load_annotations_for(
    path: Option<&Path>,
    no_annotations: bool,
    ids: &[String],
    inputs: &mut Inputs,
) -> CmdResult<AnnotationMatrix> {
    match (path, no_annotations) {
        (Some(_), true) => Err(usage("--annotations and --no-annotations are mutually exclusive")),
        (None, true) => Ok(AnnotationMatrix::empty(ids.len())),
        (None, false) => Err(usage("--annotations is required unless --no-annotations is given")),
        (Some(path), false) => {
            inputs.record(path)?;
            let table = data::read_annotations_raw(path).usage(&format!("reading {}", path.display()))?;
            if table.labels.len() != ids.len() {
                return Err(dims("annotation rows vs covariates", table.labels.len(), ids.len()));
            }
            let row_of: HashMap<&str, usize> = table.labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let mut raw = DMatrix::zeros(ids.len(), table.values.ncols());
            for (i, id) in ids.iter().enumerate() {
                let r = *row_of
                    .get(id.as_str())
                    .ok_or_else(|| usage(format!("covariate '{id}' has no annotation row")))?;
                raw.row_mut(i).copy_from(&table.values.row(r));
            }
            AnnotationMatrix::from_raw(ids.to_vec(), table.header[1..].to_vec(), &raw).usage("invalid annotations")
        }
    }
}

fn design_knockoffs(design: &Design, shrinkage: f64, seed_value: u64) -> CmdResult<data::StandardizedMatrix> {
    let ld = LdMatrix::new(design.x.correlation(), shrinkage)
        .usage("in-sample correlation is not usable for knockoffs (try --shrinkage)")?;
    let model = KnockoffModel::from_ld(&ld, 1).classify()?;
    sample_knockoffs(&design.x, &model, seed::derive(seed_value, KNOCKOFF_STREAM)).classify()
}

fn load_knockoff_design(path: &Path, design: &Design, inputs: &mut Inputs) -> CmdResult<data::StandardizedMatrix> {
    inputs.record(path)?;
    let k = load_design(path).usage(&format!("reading {}", path.display()))?;
    if k.x.ncols() != design.x.ncols() {
        return Err(dims("knockoff columns vs design columns", k.x.ncols(), design.x.ncols()));
    }
    if k.x.nrows() != design.x.nrows() {
        return Err(dims("knockoff rows vs design rows", k.x.nrows(), design.x.nrows()));
    }
    if k.sample_ids != design.sample_ids {
        return Err(usage("knockoff sample ids do not match the design"));
    }
    Ok(k.x)
}

pub fn fit(a: FitArgs) -> CmdResult<()> {
    let threads = init_threads(a.tuning.threads)?;
    let mut run = Run::start("fit", &a.out)?;
    let mut inputs = Inputs::default();
    let map = Settings::load(a.tuning.config.as_deref(), &mut inputs)?;
    let settings = Settings::new(
        map,
        &a.tuning,
        &[
            ("q", a.q.map(|v| v.to_string())),
            ("shrinkage", a.shrinkage.map(|v| v.to_string())),
        ],
    )?;
    let cfg = pipeline_config(&settings, &["shrinkage"])?;
    let shrinkage = settings.get("shrinkage")?.unwrap_or(0.0);

    inputs.record(&a.design)?;
    let design = load_design(&a.design).usage(&format!("reading {}", a.design.display()))?;
    let anno = load_annotations_for(a.annotations.as_deref(), a.no_annotations, &design.covariate_names, &mut inputs)?;
    let x_knock = match &a.knockoffs {
        Some(path) => load_knockoff_design(path, &design, &mut inputs)?,
        None => design_knockoffs(&design, shrinkage, cfg.seed)?,
    };
    let prepared = IndividualProblem::from_parts(
        &design.y(),
        &design.x,
        &x_knock,
        cfg.cv_folds,
        seed::derive(cfg.seed, FOLD_STREAM),
    )
    .classify()?;
    let method = match (a.no_annotations, a.lite) {
        (true, _) => Method::Knockoffs,
        (false, true) => Method::AnnoKnLite,
        (false, false) => Method::AnnoKn,
    };
    let result = match method {
        Method::Knockoffs => knockoff_lasso_fit(&prepared, &cfg),
        Method::AnnoKnLite => annokn_lite_fit_prepared(&prepared, &anno, &cfg),
        _ => annokn_fit_prepared(&prepared, &anno, &cfg),
    }
    .classify()?;

    let path = run.file("selection.tsv");
    write_selection(&path, &design.covariate_names, &result.stats, &result.selection).classify()?;
    run.write("report.txt", &fit_report(method, design.x.nrows(), &anno, &cfg, &result))?;
    run.finish(settings.map, Some(settings.seed), settings.seed_generated, threads, inputs)
}

pub fn fit_ss(a: FitSsArgs) -> CmdResult<()> {
    let threads = init_threads(a.tuning.threads)?;
    let mut run = Run::start("fit-ss", &a.out)?;
    let mut inputs = Inputs::default();
    let map = Settings::load(a.tuning.config.as_deref(), &mut inputs)?;
    let settings = Settings::new(
        map,
        &a.tuning,
        &[
            ("q", a.q.map(|v| v.to_string())),
            ("n", a.n.map(|v| v.to_string())),
            ("shrinkage", a.shrinkage.map(|v| v.to_string())),
        ],
    )?;
    let cfg = pipeline_config(&settings, &["n", "shrinkage"])?;
    let n: usize = settings
        .get("n")?
        .ok_or_else(|| usage("missing required key 'n' (GWAS sample size; use --n)"))?;
    let shrinkage = settings.get("shrinkage")?.unwrap_or(0.0);

    inputs.record(&a.sumstats)?;
    let z = load_summary_stats(&a.sumstats, n).usage(&format!("reading {}", a.sumstats.display()))?;
    inputs.record(&a.ld)?;
    let ld = load_ld(&a.ld, shrinkage).usage(&format!("reading {}", a.ld.display()))?;
    if z.p() != ld.p() {
        return Err(dims("summary statistics vs LD matrix", z.p(), ld.p()));
    }
    let anno = load_annotations_for(a.annotations.as_deref(), a.no_annotations, &z.snp_ids, &mut inputs)?;
    let method = if a.no_annotations { Method::GhostKnockoff } else { Method::AnnoGk };
    let result = annogk_fit(&z, &ld, &anno, &cfg).classify()?;

    let path = run.file("selection.tsv");
    write_selection(&path, &z.snp_ids, &result.stats, &result.selection).classify()?;
    run.write("report.txt", &fit_report(method, n, &anno, &cfg, &result))?;
    run.finish(settings.map, Some(settings.seed), settings.seed_generated, threads, inputs)
}

fn fit_report(method: Method, n: usize, anno: &AnnotationMatrix, cfg: &PipelineConfig, r: &PipelineResult) -> String {
    let mut s = String::new();
    let best = r.lambda0_grid.iter().position(|v| *v == r.penalty.lambda0);
    append(&mut s, format!("method: {method}"));
    append(&mut s, format!("n: {n}"));
    append(&mut s, format!("p: {}", r.stats.len()));
    append(&mut s, format!("q: {}", cfg.q));
    append(&mut s, format!("seed: {}", cfg.seed));
    append(&mut s, format!("d: {}", r.penalty.d));
    append(&mut s, format!("tau2: {}", r.penalty.tau2));
    append(&mut s, format!("lambda0: {}", r.penalty.lambda0));
    append(&mut s, format!("lambda0_index: {}", best.map_or("-".to_string(), |i| i.to_string())));
    append(&mut s, format!("lambda0_grid: {}", join(&r.lambda0_grid, " ")));
    if !r.cv_errors.is_empty() {
        append(&mut s, format!("cv_errors: {}", join(&r.cv_errors, " ")));
    }
    if !r.validation_scores.is_empty() {
        append(&mut s, format!("validation_scores: {}", join(&r.validation_scores, " ")));
    }
    for (name, l) in anno.names().iter().zip(r.penalty.lambda_anno.iter()) {
        append(&mut s, format!("lambda[{name}]: {l}"));
    }
    append(&mut s, format!("outer_iterations: {}", r.outer_iterations));
    append(&mut s, format!("outer_converged: {}", r.outer_converged));
    append(&mut s, format!("objective_trace: {}", join(&r.trace, " ")));
    append(&mut s, format!("solver_sweeps: {}", r.fit.iterations));
    append(&mut s, format!("solver_converged: {}", r.fit.converged));
    append(&mut s, format!("lasso_objective: {}", r.fit.objective));
    append(&mut s, format!("threshold: {}", r.selection.threshold));
    append(&mut s, format!("fdp_estimate: {}", r.selection.fdp_estimate));
    append(&mut s, format!("selected: {}", r.selection.selected.len()));
    s
}

// ---------------------------------------------------------------------------
// knockoff-gen

pub fn knockoff_gen(a: KnockoffGenArgs) -> CmdResult<()> {
    let mut run = Run::start("knockoff-gen", &a.out)?;
    let mut inputs = Inputs::default();
    let (seed_value, generated) = match a.seed {
        Some(s) => (s, false),
        None => {
            let s: u64 = rand::random();
            println!("generated seed: {s}");
            (s, true)
        }
    };
    let shrinkage = a.shrinkage.unwrap_or(0.0);
    let mut config = BTreeMap::from([
        ("seed".to_string(), seed_value.to_string()),
        ("shrinkage".to_string(), shrinkage.to_string()),
    ]);
    if let Some(path) = &a.design {
        inputs.record(path)?;
        let design = load_design(path).usage(&format!("reading {}", path.display()))?;
        let knock = design_knockoffs(&design, shrinkage, seed_value)?;
        let names: Vec<String> = design.covariate_names.iter().map(|c| format!("{c}_knockoff")).collect();
        let out = run.file("knockoffs.tsv");
        data::write_design(&out, &design.sample_ids, &names, knock.values(), &design.response.to_original().column(0).into_owned())
            .classify()?;
        config.insert("source".into(), "design".into());
    } else {
        let (ld_path, ss_path) = (a.ld.as_ref().expect("clap enforces --ld"), a.sumstats.as_ref().expect("clap enforces --sumstats"));
        inputs.record(ss_path)?;
        // Sample size does not enter the knockoff draw.
        let z = load_summary_stats(ss_path, 2).usage(&format!("reading {}", ss_path.display()))?;
        inputs.record(ld_path)?;
        let ld = load_ld(ld_path, shrinkage).usage(&format!("reading {}", ld_path.display()))?;
        if z.p() != ld.p() {
            return Err(dims("summary statistics vs LD matrix", z.p(), ld.p()));
        }
        let ghost = ghost_augment(&z.z, &ld, seed::derive(seed_value, GHOST_STREAM)).classify()?;
        let p = z.p();
        let ids: Vec<String> = z.snp_ids.iter().map(|s| format!("{s}_knockoff")).collect();
        let knock_z = ghost.zm.rows(p, p).into_owned();
        let out = run.file("knockoff_z.tsv");
        data::write_summary_stats(&out, &ids, &knock_z).classify()?;
        config.insert("source".into(), "ld".into());
    }
    run.finish(config, Some(seed_value), generated, 1, inputs)
}

// ---------------------------------------------------------------------------
// report

fn load_regions(path: &Path, inputs: &mut Inputs) -> CmdResult<BTreeMap<String, String>> {
    let bytes = inputs.read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| usage("region map is not UTF-8 text"))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (snp, region) = line
            .split_once('\t')
            .ok_or_else(|| usage(format!("{}: line {}: expected 'snp<TAB>region'", path.display(), i + 1)))?;
        out.insert(snp.trim().to_string(), region.trim().to_string());
    }
    Ok(out)
}

pub fn report(a: ReportArgs) -> CmdResult<()> {
    let mut run = Run::start("report", &a.out)?;
    let mut inputs = Inputs::default();
    let mut tables: Vec<Vec<SelectionRow>> = Vec::new();
    for path in &a.selections {
        inputs.record(path)?;
        tables.push(read_selection(path).usage(&format!("reading {}", path.display()))?);
    }
    let ids: Vec<&str> = tables[0].iter().map(|r| r.snp.as_str()).collect();
    for (t, path) in tables.iter().zip(&a.selections).skip(1) {
        if t.len() != ids.len() {
            return Err(dims(&format!("rows of {} vs first selection", path.display()), t.len(), ids.len()));
        }
        let other: BTreeSet<&str> = t.iter().map(|r| r.snp.as_str()).collect();
        if other != ids.iter().copied().collect::<BTreeSet<_>>() {
            return Err(usage(format!("{} covers different SNPs than the first selection", path.display())));
        }
    }
    let mut counts: HashMap<&str, usize> = ids.iter().map(|s| (*s, 0)).collect();
    for t in &tables {
        for r in t.iter().filter(|r| r.selected) {
            *counts.get_mut(r.snp.as_str()).expect("same SNP set") += 1;
        }
    }
    let k = tables.len();
    let union: Vec<&str> = ids.iter().copied().filter(|s| counts[s] > 0).collect();
    let inter: Vec<&str> = ids.iter().copied().filter(|s| counts[s] == k).collect();

    let mut merged = String::from("snp\tcount\tunion\tintersection\n");
    for s in &ids {
        let c = counts[s];
        append(&mut merged, format!("{s}\t{c}\t{}\t{}", (c > 0) as u8, (c == k) as u8));
    }
    run.write("merged.tsv", &merged)?;

    let mut summary = String::from("file\tselected\n");
    for (t, path) in tables.iter().zip(&a.selections) {
        append(&mut summary, format!("{}\t{}", path.display(), t.iter().filter(|r| r.selected).count()));
    }
    append(&mut summary, format!("union\t{}", union.len()));
    append(&mut summary, format!("intersection\t{}", inter.len()));
    run.write("summary.tsv", &summary)?;

    let mut config = BTreeMap::from([("files".to_string(), k.to_string())]);
    if let Some(path) = &a.regions {
        let regions = load_regions(path, &mut inputs)?;
        // region -> (snps, union, intersection)
        let mut per: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
        for s in &ids {
            let region = regions.get(*s).map_or("unassigned", String::as_str);
            let e = per.entry(region).or_default();
            e.0 += 1;
            e.1 += (counts[s] > 0) as usize;
            e.2 += (counts[s] == k) as usize;
        }
        let mut text = String::from("region\tsnps\tunion\tintersection\n");
        for (region, (n, u, i)) in per {
            append(&mut text, format!("{region}\t{n}\t{u}\t{i}"));
        }
        run.write("regions.tsv", &text)?;
        config.insert("regions".into(), path.display().to_string());
    }
    run.finish(config, None, false, 1, inputs)
}
