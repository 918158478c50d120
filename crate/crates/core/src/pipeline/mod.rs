//! Batch pipeline: sample, fit, validate, optimize, report.
//!
//! Every stage reads its inputs from files written by the previous one, so a
//! stage can be rerun on its own. All output files are deterministic for a
//! given configuration and seed.

pub mod cache;
pub mod config;
pub mod lines;
pub mod problem;

pub use cache::{CacheError, SampleCache, SampleRow};
pub use config::{ConfigError, PipelineConfig};
pub use lines::LineError;
pub use problem::{Problem, SIM_VERSION};

use crate::optimizer::{
    grid_search, local_search_baseline, search_bounds, Candidate, LocalSearchReport, OptimizeError,
    OptimumReport, PatternSearchOptions, TrustRegion,
};
use crate::sparse::{
    build_blended, fit_line_exponential, validate_model, BlendedModel, InterpError, LineSamples,
    ValidationReport,
};
use crate::Vec3;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Schema version of the JSON files written by the pipeline.
pub const OUTPUT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Lines(#[from] LineError),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("{0}")]
    Numeric(String),
}

impl PipelineError {
    /// Process exit code: 1 for configuration and input problems, 2 for
    /// numerical failures and corrupted data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Io { .. } | PipelineError::Input { .. } => 1,
            _ => 2,
        }
    }
}

/// File locations of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub samples: PathBuf,
    pub model: PathBuf,
    pub holdout: PathBuf,
    pub validation: PathBuf,
    pub residuals: PathBuf,
    pub optimum: PathBuf,
    pub report_json: PathBuf,
    pub report_text: PathBuf,
}

impl Paths {
    pub fn new(output_dir: &Path, cache: Option<&Path>, model: Option<&Path>) -> Self {
        let out = |name: &str| output_dir.join(name);
        Self {
            samples: cache.map_or_else(|| out("samples.csv"), Path::to_path_buf),
            model: model.map_or_else(|| out("model.json"), Path::to_path_buf),
            holdout: out("holdout.csv"),
            validation: out("validation.json"),
            residuals: out("validation_residuals.csv"),
            optimum: out("optimum.json"),
            report_json: out("report.json"),
            report_text: out("report.txt"),
        }
    }
}

/// A loaded configuration with everything derived from it.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: PipelineConfig,
    pub problem: Problem,
    pub paths: Paths,
    pub seed: u64,
}

impl Run {
    pub fn new(
        config: PipelineConfig,
        cache: Option<&Path>,
        model: Option<&Path>,
        seed: Option<u64>,
    ) -> Result<Self, PipelineError> {
        let problem = Problem::from_config(&config)?;
        let paths = Paths::new(&config.output_dir(), cache, model);
        let seed = seed.unwrap_or(config.validation.seed);
        Ok(Self {
            config,
            problem,
            paths,
            seed,
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    cache::write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn check_version(path: &Path, found: u32) -> Result<(), PipelineError> {
    if found != OUTPUT_FORMAT_VERSION {
        return Err(PipelineError::Input {
            path: path.to_path_buf(),
            message: format!("unsupported format_version {found}"),
        });
    }
    Ok(())
}

/// Summary of the `sample` stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub cache: SampleCache,
    pub reused: bool,
}

/// Simulate the training lines, or reuse a cache made from identical inputs.
pub fn cmd_sample(run: &Run) -> Result<SampleOutcome, PipelineError> {
    let fingerprint = problem::sampling_fingerprint(&run.config);
    let path = &run.paths.samples;
    if path.exists() {
        let cached = SampleCache::read(path)?;
        if cached.matches(SIM_VERSION, &fingerprint) && cached.plan.is_some() {
            info!(
                "reusing {} cached samples from {}",
                cached.rows.len(),
                path.display()
            );
            return Ok(SampleOutcome {
                cache: cached,
                reused: true,
            });
        }
        info!("cache {} is stale, resampling", path.display());
    }
    let (plan, rows) = lines::plan_training_lines(&run.problem, &run.config.sampling)?;
    info!(
        "sampled {} lines, {} feasible samples ({} simulations)",
        plan.shifts.len(),
        plan.total_samples(),
        rows.len()
    );
    let cache = SampleCache {
        sim_version: SIM_VERSION.to_string(),
        fingerprint,
        plan: Some(plan),
        rows,
    };
    cache.write(path)?;
    Ok(SampleOutcome {
        cache,
        reused: false,
    })
}

/// Model file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub name: String,
    pub sim_version: String,
    /// Fingerprint of the samples the model was fitted to.
    pub samples_fingerprint: String,
    pub n_terms: usize,
    pub n_samples: usize,
    pub model: BlendedModel,
}

/// Load the training samples and the plan they follow.
pub fn load_training(run: &Run) -> Result<SampleCache, PipelineError> {
    let path = &run.paths.samples;
    if !path.exists() {
        return Err(PipelineError::Input {
            path: path.clone(),
            message: "no sample cache, run `sample` first".into(),
        });
    }
    let cache = SampleCache::read(path)?;
    if cache.plan.is_none() {
        return Err(PipelineError::Input {
            path: path.clone(),
            message: "cache has no sampling plan".into(),
        });
    }
    Ok(cache)
}

/// Fit every line and blend the line models.
pub fn fit_model(
    cache: &SampleCache,
    fitting: &config::FittingConfig,
) -> Result<BlendedModel, PipelineError> {
    let plan = cache.plan.as_ref().expect("training cache has a plan");
    let mut line_models = Vec::with_capacity(plan.shifts.len());
    for (line, &count) in plan.counts.iter().enumerate() {
        let mut values = vec![f64::NAN; count];
        for row in cache.line(line) {
            if row.step < count {
                values[row.step] = row.sample.value().unwrap_or(f64::NAN);
            }
        }
        let fit = fit_line_exponential(
            &LineSamples {
                line_index: line,
                values,
            },
            fitting.order,
            fitting.svd_tol,
        )?;
        for w in &fit.warnings {
            warn!("line {line}: {w:?}");
        }
        info!(
            "line {line}: {count} samples, {} terms, residual {:.3e}",
            fit.n_terms(),
            fit.residual
        );
        line_models.push(fit);
    }
    Ok(build_blended(plan, &line_models)?)
}

pub fn cmd_fit(run: &Run) -> Result<ModelFile, PipelineError> {
    let cache = load_training(run)?;
    let model = fit_model(&cache, &run.config.fitting)?;
    info!(
        "model: {} lines, {} exponential terms, collocation condition {:.3e}",
        model.line_models.len(),
        model.n_terms(),
        model.collocation_condition
    );
    let file = ModelFile {
        format_version: OUTPUT_FORMAT_VERSION,
        name: run.config.name.clone(),
        sim_version: cache.sim_version.clone(),
        samples_fingerprint: cache.fingerprint.clone(),
        n_terms: model.n_terms(),
        n_samples: model.plan.total_samples(),
        model,
    };
    write_json(&run.paths.model, &file)?;
    Ok(file)
}

pub fn load_model(path: &Path) -> Result<ModelFile, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Input {
            path: path.to_path_buf(),
            message: "no model file, run `fit` first".into(),
        });
    }
    let file: ModelFile = read_json(path)?;
    check_version(path, file.format_version)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationFile {
    pub format_version: u32,
    pub seed: u64,
    pub lines: usize,
    pub report: ValidationReport,
    pub relative_rmse: Option<f64>,
    pub per_line: Vec<HoldoutLineError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutLineError {
    pub line: usize,
    pub count: usize,
    pub rmse: f64,
}

/// Holdout samples for a model, reused from the holdout cache when possible.
pub fn holdout_samples(run: &Run, model: &ModelFile) -> Result<Vec<SampleRow>, PipelineError> {
    let region = TrustRegion::from_plan(&model.model.plan)?;
    let fingerprint = {
        let inputs = serde_json::json!({
            "samples": model.samples_fingerprint,
            "plan": model.model.plan,
            "validation": run.config.validation,
            "seed": run.seed,
        });
        cache::sha256_hex(inputs.to_string().as_bytes())
    };
    let path = &run.paths.holdout;
    if path.exists() {
        let cached = SampleCache::read(path)?;
        if cached.matches(SIM_VERSION, &fingerprint) {
            info!("reusing {} cached holdout samples", cached.rows.len());
            return Ok(cached.rows);
        }
    }
    let rows = lines::holdout_lines(&run.problem, &region, &run.config.validation, run.seed)?;
    SampleCache {
        sim_version: SIM_VERSION.to_string(),
        fingerprint,
        plan: None,
        rows: rows.clone(),
    }
    .write(path)?;
    Ok(rows)
}

pub fn cmd_validate(run: &Run) -> Result<ValidationFile, PipelineError> {
    let model = load_model(&run.paths.model)?;
    let rows = holdout_samples(run, &model)?;
    let points: Vec<(Vec3, f64)> = rows
        .iter()
        .filter_map(|r| r.sample.value().map(|v| (r.design, v)))
        .collect();
    let report = validate_model(&model.model, &points, run.config.validation.threshold);
    let mut per_line = Vec::new();
    let mut csv = String::from("line,step,oa,bc,ab,simulated,model,error\n");
    for line in 0..run.config.validation.lines {
        let mut sq = 0.0;
        let mut count = 0;
        for r in rows.iter().filter(|r| r.line == line) {
            let Some(sim) = r.sample.value() else {
                continue;
            };
            let fit = model.model.evaluate(&r.design);
            let err = fit - sim;
            sq += err * err;
            count += 1;
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{sim},{fit},{err}",
                r.line, r.step, r.design.x, r.design.y, r.design.z
            );
        }
        per_line.push(HoldoutLineError {
            line,
            count,
            rmse: if count > 0 {
                (sq / count as f64).sqrt()
            } else {
                0.0
            },
        });
    }
    cache::write_atomic(&run.paths.residuals, csv.as_bytes())
        .map_err(io_err(&run.paths.residuals))?;
    let file = ValidationFile {
        format_version: OUTPUT_FORMAT_VERSION,
        seed: run.seed,
        lines: run.config.validation.lines,
        relative_rmse: report.relative_rmse(),
        report,
        per_line,
    };
    info!(
        "validation: {} points, RMSE {:?}, relative {:?}",
        file.report.count, file.report.rmse, file.relative_rmse
    );
    write_json(&run.paths.validation, &file)?;
    Ok(file)
}

/// A design with its simulated objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verified {
    pub design: Vec3,
    pub model: f64,
    pub simulated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumFile {
    pub format_version: u32,
    pub grid: OptimumReport,
    /// The surrogate argmin, re-simulated.
    pub argmin: Verified,
    /// `|model - simulated|` at the argmin.
    pub discrepancy: Option<f64>,
    /// RMSE of the last validation run, if any.
    pub validation_rmse: Option<f64>,
    /// Set when the discrepancy exceeds three validation RMSEs, or the argmin
    /// does not simulate.
    pub discrepancy_flag: bool,
    pub top_k: Vec<Verified>,
    pub original: Option<Candidate>,
    pub local_search: Option<LocalSearchReport>,
    /// `(T_original - T_argmin) / T_original` from simulated values.
    pub savings: Option<f64>,
}

pub fn cmd_optimize(run: &Run) -> Result<OptimumFile, PipelineError> {
    let model = load_model(&run.paths.model)?;
    let validation_rmse = if run.paths.validation.exists() {
        let v: ValidationFile = read_json(&run.paths.validation)?;
        v.report.rmse
    } else {
        None
    };
    let opt = &run.config.optimization;
    let region = TrustRegion::from_plan(&model.model.plan)?;
    let bounds = search_bounds(&region, &run.problem.design_box.bounds())?;
    let problem = &run.problem;
    let grid = grid_search(
        |x| model.model.evaluate(x),
        &region,
        |x| problem.status(x),
        &bounds,
        opt.resolution,
        opt.top_k,
    )?;
    info!(
        "grid: {} nodes, {} evaluated, minimum {:.6} at {:?}",
        grid.evaluated,
        grid.feasible_evaluated,
        grid.value,
        grid.argmin.as_slice()
    );
    let verify = |c: &Candidate| Verified {
        design: c.design,
        model: c.value,
        simulated: problem.evaluate(&c.design).value(),
    };
    let argmin = verify(&Candidate {
        design: grid.argmin,
        value: grid.value,
    });
    let top_k: Vec<Verified> = grid.top_k.iter().map(verify).collect();
    let discrepancy = argmin.simulated.map(|s| (s - argmin.model).abs());
    let discrepancy_flag = match (discrepancy, validation_rmse) {
        (None, _) => true,
        (Some(d), Some(r)) => d > 3.0 * r,
        (Some(_), None) => false,
    };
    if discrepancy_flag {
        warn!(
            "surrogate and simulator disagree at the argmin: model {:.6}, simulated {:?}",
            argmin.model, argmin.simulated
        );
    }
    let original = opt.original.and_then(|o| {
        let design = o.to_vec3();
        problem
            .evaluate(&design)
            .value()
            .map(|value| Candidate { design, value })
    });
    let local_search = match (opt.local_search, &original) {
        (true, Some(o)) => local_search_baseline(
            |x| problem.evaluate(x).value(),
            o.design,
            &run.problem.design_box.bounds(),
            &PatternSearchOptions {
                max_evaluations: opt.max_evaluations,
                ..PatternSearchOptions::default()
            },
        ),
        _ => None,
    };
    let savings = match (&original, argmin.simulated) {
        (Some(o), Some(t)) if o.value > 0.0 => Some((o.value - t) / o.value),
        _ => None,
    };
    let file = OptimumFile {
        format_version: OUTPUT_FORMAT_VERSION,
        grid,
        argmin,
        discrepancy,
        validation_rmse,
        discrepancy_flag,
        top_k,
        original,
        local_search,
        savings,
    };
    write_json(&run.paths.optimum, &file)?;
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub name: String,
    pub n_lines: usize,
    pub n_samples: usize,
    pub n_terms: usize,
    pub terms_per_line: Vec<usize>,
    pub validation: Option<ValidationFile>,
    pub optimum: Option<OptimumFile>,
}

impl ReportFile {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.name);
        let _ = writeln!(
            s,
            "surrogate: {} lines, {} samples, {} exponential terms {:?}",
            self.n_lines, self.n_samples, self.n_terms, self.terms_per_line
        );
        if let Some(v) = &self.validation {
            let fmt = |x: Option<f64>| x.map_or("n/a".to_string(), |x| format!("{x:.4e}"));
            let _ = writeln!(
                s,
                "validation: {} points on {} lines, RMSE {}, relative {}, below {}: {} points, RMSE {}",
                v.report.count,
                v.lines,
                fmt(v.report.rmse),
                fmt(v.relative_rmse),
                v.report.threshold,
                v.report.count_below,
                fmt(v.report.rmse_below)
            );
        }
        if let Some(o) = &self.optimum {
            let d = |x: &Vec3| format!("OA {:.3}, AB {:.3}, BC {:.3}", x.x, x.z, x.y);
            let _ = writeln!(
                s,
                "surrogate optimum: {} -> model {:.6}, simulated {}",
                d(&o.argmin.design),
                o.argmin.model,
                o.argmin
                    .simulated
                    .map_or("infeasible".to_string(), |v| format!("{v:.6}"))
            );
            if o.discrepancy_flag {
                let _ = writeln!(
                    s,
                    "  warning: surrogate and simulator disagree at the optimum"
                );
            }
            if let Some(orig) = &o.original {
                let _ = writeln!(s, "original: {} -> {:.6}", d(&orig.design), orig.value);
            }
            if let Some(ls) = &o.local_search {
                let _ = writeln!(
                    s,
                    "local search: {} -> {:.6} ({} evaluations)",
                    d(&ls.argmin),
                    ls.value,
                    ls.evaluations
                );
            }
            if let Some(sv) = o.savings {
                let _ = writeln!(s, "savings: {:.2}%", 100.0 * sv);
            }
            let _ = writeln!(s, "grid rejections: {}", o.grid.rejections);
        }
        s
    }
}

pub fn cmd_report(run: &Run) -> Result<ReportFile, PipelineError> {
    let model = load_model(&run.paths.model)?;
    let validation = if run.paths.validation.exists() {
        let v: ValidationFile = read_json(&run.paths.validation)?;
        check_version(&run.paths.validation, v.format_version)?;
        Some(v)
    } else {
        None
    };
    let optimum = if run.paths.optimum.exists() {
        let o: OptimumFile = read_json(&run.paths.optimum)?;
        check_version(&run.paths.optimum, o.format_version)?;
        Some(o)
    } else {
        None
    };
    let report = ReportFile {
        format_version: OUTPUT_FORMAT_VERSION,
        name: run.config.name.clone(),
        n_lines: model.model.line_models.len(),
        n_samples: model.n_samples,
        n_terms: model.n_terms,
        terms_per_line: model
            .model
            .line_models
            .iter()
            .map(|m| m.n_terms())
            .collect(),
        validation,
        optimum,
    };
    write_json(&run.paths.report_json, &report)?;
    let text = report.to_text();
    cache::write_atomic(&run.paths.report_text, text.as_bytes())
        .map_err(io_err(&run.paths.report_text))?;
    Ok(report)
}

/// All stages in order.
pub fn run_all(run: &Run) -> Result<ReportFile, PipelineError> {
    cmd_sample(run)?;
    cmd_fit(run)?;
    cmd_validate(run)?;
    cmd_optimize(run)?;
    cmd_report(run)
}
