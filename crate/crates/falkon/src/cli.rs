//! Experiment runner: load -> normalize -> split -> train -> evaluate ->
//! report, with seeded reproducibility, plus a solver-comparison mode and a
//! synthetic dataset generator.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};

use crate::baselines::{
    cg_nystrom_unpreconditioned, gd_nystrom, krr_direct, nystrom_direct, IterPoint, IterTrace,
    DEFAULT_DENSE_CAP,
};
use crate::data::{
    load_dense_csv, load_sparse_index_value, split_train_test, write_dataset, zscore_apply,
    zscore_fit, Dataset, LabelColumn,
};
use crate::diagnostics::theory_report;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::metrics::{
    auc, classification_error, multiclass_error, regression_metrics, relative_error_norm,
    EvalReport,
};
use crate::sampling::{sample_uniform, CenterSelection};
use crate::solver::{
    build_operator, falkon_predict, falkon_solve, falkon_train_basic_gradient_traced,
    save_model, FalkonConfig, FalkonModel, Sampling,
};
use crate::synth::{ill_conditioned_regression, two_blob_classification, SynthRegression};

/// FALKON kernel ridge regression: train, compare solvers, generate data.
#[derive(Parser)]
#[command(name = "falkon", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run one experiment from a config file and/or flags and write reports.
    Run(RunArgs),
    /// Run several iterative configs on the same data and merge their
    /// per-iteration test error into one CSV.
    Compare(CompareArgs),
    /// Generate a synthetic dataset CSV.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
pub enum Format {
    /// Dense CSV, label in the last column.
    Csv,
    /// Sparse `label index:value ...` lines, 1-based ascending indices.
    Sparse,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
pub enum Task {
    Regression,
    /// Labels in {-1, +1}; reports classification error and AUC.
    Binary,
    /// Labels are class ids 0..k-1; one-vs-rest, falkon solver only.
    Multiclass,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
pub enum SolverKind {
    Falkon,
    FalkonBasicGd,
    Krr,
    NystromDirect,
    Gd,
    Cg,
}

impl SolverKind {
    fn name(self) -> &'static str {
        match self {
            SolverKind::Falkon => "falkon",
            SolverKind::FalkonBasicGd => "falkon_basic_gd",
            SolverKind::Krr => "krr",
            SolverKind::NystromDirect => "nystrom_direct",
            SolverKind::Gd => "gd",
            SolverKind::Cg => "cg",
        }
    }

    fn is_iterative(self) -> bool {
        !matches!(self, SolverKind::Krr | SolverKind::NystromDirect)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
pub enum SamplingKind {
    Uniform,
    Leverage,
}

#[derive(Args, Clone, Default)]
pub struct RunOverrides {
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset path.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverKind>,
    /// Kernel name: gaussian, gaussian_diag, or linear.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Gaussian kernel width.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Comma-separated per-dimension widths (gaussian_diag kernel).
    #[arg(long)]
    pub sigma_per_dim: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of Nystrom centers M.
    #[arg(long)]
    pub centers: Option<usize>,
    /// Iteration count t.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, value_enum)]
    pub sampling: Option<SamplingKind>,
    /// Approximate leverage scores, one per line (implies --sampling leverage).
    #[arg(long)]
    pub scores_file: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Kernel rows materialized per block in the training operator.
    #[arg(long)]
    pub block_rows: Option<usize>,
    /// Worker threads; default from FALKON_THREADS, then all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Z-score features before splitting (dense data only).
    #[arg(long)]
    pub normalize: bool,
    /// Also compute and write the theory report (dense, desk scale).
    #[arg(long)]
    pub diagnostics: bool,
    /// Output directory for report files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress the timestamp line so reports are byte-identical across runs.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: RunOverrides,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Config files, one per solver; must share data, seed, test fraction.
    #[arg(required = true)]
    pub configs: Vec<PathBuf>,
    /// Output CSV path.
    #[arg(long, default_value = "compare.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct GenArgs {
    /// Generator: regression, ill-conditioned, or blobs.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub anchors: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub data: PathBuf,
    pub format: Format,
    pub task: Task,
    pub solver: SolverKind,
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub centers: usize,
    pub iters: usize,
    pub sampling: SamplingKind,
    pub scores_file: Option<PathBuf>,
    pub test_fraction: f64,
    pub seed: u64,
    pub block_rows: Option<usize>,
    pub threads: Option<usize>,
    pub normalize: bool,
    pub diagnostics: bool,
    pub out: PathBuf,
    pub no_timestamp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::new(),
            format: Format::Csv,
            task: Task::Regression,
            solver: SolverKind::Falkon,
            kernel: KernelSpec::Gaussian { sigma: 1.0 },
            lambda: 1e-4,
            centers: 100,
            iters: 20,
            sampling: SamplingKind::Uniform,
            scores_file: None,
            test_fraction: 0.2,
            seed: 0,
            block_rows: None,
            threads: None,
            normalize: false,
            diagnostics: false,
            out: PathBuf::from("."),
            no_timestamp: false,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("field {key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("field {key}: cannot parse {v:?}")))
}

fn parse_widths(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| parse_num::<f64>(key, s.trim()))
        .collect()
}

impl RunConfig {
    /// Parse a flat `key = value` config file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = RunConfig::default();
        let mut sigma: Option<f64> = None;
        let mut widths: Option<Vec<f64>> = None;
        let mut kernel_name: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "data" => cfg.data = PathBuf::from(value),
                "format" => {
                    cfg.format = match value {
                        "csv" => Format::Csv,
                        "sparse" => Format::Sparse,
                        _ => return Err(Error::Config(format!("field format: unknown {value:?}"))),
                    }
                }
                "task" => {
                    cfg.task = match value {
                        "regression" => Task::Regression,
                        "binary" => Task::Binary,
                        "multiclass" => Task::Multiclass,
                        _ => return Err(Error::Config(format!("field task: unknown {value:?}"))),
                    }
                }
                "solver" => {
                    cfg.solver = match value {
                        "falkon" => SolverKind::Falkon,
                        "falkon_basic_gd" => SolverKind::FalkonBasicGd,
                        "krr" => SolverKind::Krr,
                        "nystrom_direct" => SolverKind::NystromDirect,
                        "gd" => SolverKind::Gd,
                        "cg" => SolverKind::Cg,
                        _ => return Err(Error::Config(format!("field solver: unknown {value:?}"))),
                    }
                }
                "kernel" => kernel_name = Some(value.to_string()),
                "sigma" => sigma = Some(parse_num(key, value)?),
                "sigma_per_dim" => widths = Some(parse_widths(key, value)?),
                "lambda" => cfg.lambda = parse_num(key, value)?,
                "centers" => cfg.centers = parse_num(key, value)?,
                "iters" => cfg.iters = parse_num(key, value)?,
                "sampling" => {
                    cfg.sampling = match value {
                        "uniform" => SamplingKind::Uniform,
                        "leverage" => SamplingKind::Leverage,
                        _ => {
                            return Err(Error::Config(format!("field sampling: unknown {value:?}")))
                        }
                    }
                }
                "scores_file" => cfg.scores_file = Some(PathBuf::from(value)),
                "test_fraction" => cfg.test_fraction = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "block_rows" => cfg.block_rows = Some(parse_num(key, value)?),
                "threads" => cfg.threads = Some(parse_num(key, value)?),
                "normalize" => cfg.normalize = parse_bool(key, value)?,
                "diagnostics" => cfg.diagnostics = parse_bool(key, value)?,
                "out" => cfg.out = PathBuf::from(value),
                "no_timestamp" => cfg.no_timestamp = parse_bool(key, value)?,
                _ => return Err(Error::Config(format!("unknown config field {key:?}"))),
            }
        }
        cfg.kernel = resolve_kernel(kernel_name.as_deref(), sigma, widths)?;
        Ok(cfg)
    }

    /// Apply command-line overrides on top (flags win).
    pub fn apply_overrides(&mut self, ov: &RunOverrides) -> Result<()> {
        if let Some(v) = &ov.data {
            self.data = v.clone();
        }
        if let Some(v) = ov.format {
            self.format = v;
        }
        if let Some(v) = ov.task {
            self.task = v;
        }
        if let Some(v) = ov.solver {
            self.solver = v;
        }
        if ov.kernel.is_some() || ov.sigma.is_some() || ov.sigma_per_dim.is_some() {
            let widths = match &ov.sigma_per_dim {
                Some(s) => Some(parse_widths("sigma_per_dim", s)?),
                None => None,
            };
            let base_sigma = ov.sigma.or(match &self.kernel {
                KernelSpec::Gaussian { sigma } => Some(*sigma),
                _ => None,
            });
            self.kernel = resolve_kernel(ov.kernel.as_deref(), base_sigma, widths)?;
        }
        if let Some(v) = ov.lambda {
            self.lambda = v;
        }
        if let Some(v) = ov.centers {
            self.centers = v;
        }
        if let Some(v) = ov.iters {
            self.iters = v;
        }
        if let Some(v) = ov.sampling {
            self.sampling = v;
        }
        if let Some(v) = &ov.scores_file {
            self.scores_file = Some(v.clone());
            self.sampling = SamplingKind::Leverage;
        }
        if let Some(v) = ov.test_fraction {
            self.test_fraction = v;
        }
        if let Some(v) = ov.seed {
            self.seed = v;
        }
        if let Some(v) = ov.block_rows {
            self.block_rows = Some(v);
        }
        if let Some(v) = ov.threads {
            self.threads = Some(v);
        }
        if ov.normalize {
            self.normalize = true;
        }
        if ov.diagnostics {
            self.diagnostics = true;
        }
        if let Some(v) = &ov.out {
            self.out = v.clone();
        }
        if ov.no_timestamp {
            self.no_timestamp = true;
        }
        Ok(())
    }

    pub fn resolve(ov: &RunOverrides) -> Result<RunConfig> {
        let mut cfg = match &ov.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(ov)?;
        if cfg.data.as_os_str().is_empty() {
            return Err(Error::Config("field data: no dataset path given".into()));
        }
        Ok(cfg)
    }

    fn falkon_config(&self, lambda_override: Option<f64>) -> FalkonConfig {
        let mut fc = FalkonConfig::new(
            self.kernel.clone(),
            lambda_override.unwrap_or(self.lambda),
            self.centers,
            self.iters,
        );
        fc.seed = self.seed;
        fc.block_rows = self.block_rows;
        fc.sampling = match (&self.sampling, &self.scores_file) {
            (SamplingKind::Uniform, _) => Sampling::Uniform,
            (SamplingKind::Leverage, Some(path)) => Sampling::LeverageFile {
                path: path.clone(),
                lambda_ls: self.lambda,
            },
            (SamplingKind::Leverage, None) => Sampling::LeverageExact { lambda_ls: self.lambda },
        };
        fc
    }
}

fn resolve_kernel(
    name: Option<&str>,
    sigma: Option<f64>,
    widths: Option<Vec<f64>>,
) -> Result<KernelSpec> {
    match name {
        None | Some("gaussian") => {
            if let Some(w) = widths {
                return Ok(KernelSpec::GaussianDiag { widths: w });
            }
            Ok(KernelSpec::Gaussian { sigma: sigma.unwrap_or(1.0) })
        }
        Some("gaussian_diag") => {
            let w = widths.ok_or_else(|| {
                Error::Config("kernel gaussian_diag needs sigma_per_dim".into())
            })?;
            Ok(KernelSpec::GaussianDiag { widths: w })
        }
        Some("linear") => Ok(KernelSpec::Linear),
        Some(other) => Err(Error::Config(format!("unknown kernel {other:?}"))),
    }
}

/// Initialize the global rayon pool; `threads` wins over FALKON_THREADS,
/// which wins over the core count. Safe to call more than once (later calls
/// are ignored by rayon).
pub fn init_threads(threads: Option<usize>) {
    let from_env = std::env::var("FALKON_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(t) = threads.or(from_env) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

struct SolveOutcome {
    model: Option<FalkonModel>,
    test_scores: Array1<f64>,
    trace: Option<IterTrace>,
    multiclass_scores: Option<Array2<f64>>,
}

fn center_selection_for(train: &Dataset, cfg: &RunConfig) -> Result<CenterSelection> {
    match cfg.sampling {
        SamplingKind::Uniform => sample_uniform(train.n(), cfg.centers, cfg.seed),
        SamplingKind::Leverage => {
            // reuse the falkon selection logic (exact or file-based scores)
            let fc = cfg.falkon_config(None);
            crate::solver::select_centers(train, &fc)
        }
    }
}

fn trace_from_alphas(
    kernel: &KernelSpec,
    centers: &Array2<f64>,
    train: &Dataset,
    test: &Dataset,
    lambda: f64,
    alphas: &[(usize, Array1<f64>)],
    start: Instant,
) -> Result<IterTrace> {
    let k_mm = crate::kernels::kernel_square(kernel, centers.view())?;
    let mut trace = IterTrace::default();
    for (it, alpha) in alphas {
        let model = FalkonModel {
            centers: centers.rows().into_iter().map(|r| r.to_vec()).collect(),
            alpha: alpha.to_vec(),
            kernel: kernel.clone(),
            norm_stats: None,
            label_offset: None,
        };
        let train_pred = falkon_predict(&model, train)?;
        let resid = &train_pred - train.labels();
        let objective = resid.dot(&resid) / train.n() as f64
            + lambda * alpha.dot(&k_mm.dot(alpha));
        let test_pred = falkon_predict(&model, test)?;
        let tresid = &test_pred - test.labels();
        let rmse = (tresid.dot(&tresid) / test.n() as f64).sqrt();
        trace.points.push(IterPoint {
            iteration: *it,
            objective,
            test_metric: Some(rmse),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(trace)
}

fn solve(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<SolveOutcome> {
    let start = Instant::now();
    match cfg.solver {
        SolverKind::Falkon => {
            if cfg.task == Task::Multiclass {
                return solve_multiclass(cfg, train, test);
            }
            let fc = cfg.falkon_config(None);
            let op = build_operator(train, &fc)?;
            let mut alphas: Vec<(usize, Array1<f64>)> = Vec::new();
            let mut record = |it: usize, a: &Array1<f64>| alphas.push((it, a.clone()));
            let (model, _) = falkon_solve(&op, train.labels(), &fc, &mut record)?;
            let trace =
                trace_from_alphas(&cfg.kernel, &op.centers, train, test, cfg.lambda, &alphas, start)?;
            let test_scores = falkon_predict(&model, test)?;
            Ok(SolveOutcome { model: Some(model), test_scores, trace: Some(trace), multiclass_scores: None })
        }
        SolverKind::FalkonBasicGd => {
            let fc = cfg.falkon_config(None);
            let mut alphas: Vec<(usize, Array1<f64>)> = Vec::new();
            let (model, _) = falkon_train_basic_gradient_traced(train, &fc, None, |it, a| {
                alphas.push((it, a.clone()));
            })?;
            let centers = model.centers_matrix();
            let trace =
                trace_from_alphas(&cfg.kernel, &centers, train, test, cfg.lambda, &alphas, start)?;
            let test_scores = falkon_predict(&model, test)?;
            Ok(SolveOutcome { model: Some(model), test_scores, trace: Some(trace), multiclass_scores: None })
        }
        SolverKind::Krr => {
            let model = krr_direct(train, &cfg.kernel, cfg.lambda, DEFAULT_DENSE_CAP)?;
            let test_scores = falkon_predict(&model, test)?;
            Ok(SolveOutcome { model: Some(model), test_scores, trace: None, multiclass_scores: None })
        }
        SolverKind::NystromDirect => {
            let sel = center_selection_for(train, cfg)?;
            let out = nystrom_direct(train, &sel, &cfg.kernel, cfg.lambda, DEFAULT_DENSE_CAP)?;
            let test_scores = falkon_predict(&out.model, test)?;
            Ok(SolveOutcome { model: Some(out.model), test_scores, trace: None, multiclass_scores: None })
        }
        SolverKind::Gd => {
            let sel = center_selection_for(train, cfg)?;
            let (model, trace) =
                gd_nystrom(train, &sel, &cfg.kernel, cfg.lambda, None, cfg.iters, Some(test))?;
            let test_scores = falkon_predict(&model, test)?;
            Ok(SolveOutcome { model: Some(model), test_scores, trace: Some(trace), multiclass_scores: None })
        }
        SolverKind::Cg => {
            let sel = center_selection_for(train, cfg)?;
            let (model, trace) = cg_nystrom_unpreconditioned(
                train,
                &sel,
                &cfg.kernel,
                cfg.lambda,
                cfg.iters,
                Some(test),
            )?;
            let test_scores = falkon_predict(&model, test)?;
            Ok(SolveOutcome { model: Some(model), test_scores, trace: Some(trace), multiclass_scores: None })
        }
    }
}

/// One-vs-rest multiclass: one operator and preconditioner shared across
/// classes, one CG solve per class.
fn solve_multiclass(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<SolveOutcome> {
    let class_ids = labels_as_classes(train.labels())?;
    let num_classes = class_ids.iter().copied().max().unwrap_or(0) + 1;
    if num_classes < 2 {
        return Err(Error::InvalidArgument("multiclass needs at least 2 classes".into()));
    }
    let fc = cfg.falkon_config(None);
    let op = build_operator(train, &fc)?;
    let mut scores = Array2::zeros((test.n(), num_classes));
    for c in 0..num_classes {
        let labels =
            Array1::from_shape_fn(train.n(), |i| if class_ids[i] == c { 1.0 } else { -1.0 });
        let mut noop = |_: usize, _: &Array1<f64>| {};
        let (model, _) = falkon_solve(&op, &labels, &fc, &mut noop)?;
        let pred = falkon_predict(&model, test)?;
        scores.column_mut(c).assign(&pred);
    }
    Ok(SolveOutcome {
        model: None,
        test_scores: Array1::zeros(test.n()),
        trace: None,
        multiclass_scores: Some(scores),
    })
}

fn labels_as_classes(labels: &Array1<f64>) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if l >= 0.0 && l.fract() == 0.0 && l < 1e6 {
                Ok(l as usize)
            } else {
                Err(Error::InvalidArgument(format!(
                    "multiclass labels must be small non-negative integers, got {l}"
                )))
            }
        })
        .collect()
}

fn evaluate(task: Task, test: &Dataset, outcome: &SolveOutcome) -> Result<EvalReport> {
    let mut report = EvalReport { n_test: test.n(), ..EvalReport::default() };
    match task {
        Task::Regression => {
            let (mse, rmse, rel) = regression_metrics(test.labels(), &outcome.test_scores)?;
            report.mse = Some(mse);
            report.rmse = Some(rmse);
            report.relative_error = rel;
            report.relative_error_omitted = rel.is_none();
            report.relative_error_norm = relative_error_norm(test.labels(), &outcome.test_scores)?;
        }
        Task::Binary => {
            report.c_err = Some(classification_error(test.labels(), &outcome.test_scores)?);
            report.auc = Some(auc(test.labels(), &outcome.test_scores)?);
        }
        Task::Multiclass => {
            let scores = outcome
                .multiclass_scores
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("multiclass needs solver falkon".into()))?;
            let classes = labels_as_classes(test.labels())?;
            report.c_err = Some(multiclass_error(&classes, scores)?);
        }
    }
    Ok(report)
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.format {
        Format::Csv => load_dense_csv(&cfg.data, LabelColumn::Last, false),
        Format::Sparse => load_sparse_index_value(&cfg.data),
    }
}

/// Per-iteration trace CSV without the wall-clock column, so report files
/// are byte-identical across runs of the same config and seed.
fn trace_csv_deterministic(trace: &IterTrace) -> String {
    let mut out = String::from("iteration,objective,test_metric\n");
    for p in &trace.points {
        let tm = p.test_metric.map_or(String::new(), |v| format!("{v}"));
        out.push_str(&format!("{},{},{}\n", p.iteration, p.objective, tm));
    }
    out
}

fn primary_metric(task: Task, report: &EvalReport) -> (&'static str, f64) {
    match task {
        Task::Regression => ("rmse", report.rmse.unwrap_or(f64::NAN)),
        Task::Binary => ("auc", report.auc.unwrap_or(f64::NAN)),
        Task::Multiclass => ("c_err", report.c_err.unwrap_or(f64::NAN)),
    }
}

/// Execute one run end to end. Returns the one-line summary it printed.
pub fn run(cfg: &RunConfig) -> Result<String> {
    init_threads(cfg.threads);
    let start = Instant::now();
    let mut data = load_data(cfg)?;
    if cfg.normalize {
        let stats = zscore_fit(&data)?;
        data = zscore_apply(&data, &stats)?;
    }
    let (train, test) = split_train_test(&data, cfg.test_fraction, cfg.seed)?;
    let outcome = solve(cfg, &train, &test)?;
    let report = evaluate(cfg.task, &test, &outcome)?;
    let seconds = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("eval.csv"), report.to_csv())?;
    let mut eval_text = String::new();
    if !cfg.no_timestamp {
        eval_text.push_str(&format!(
            "timestamp            {:?}\n",
            std::time::SystemTime::now()
        ));
    }
    eval_text.push_str(&format!("solver               {}\n", cfg.solver.name()));
    eval_text.push_str(&format!("seed                 {}\n", cfg.seed));
    eval_text.push_str(&report.to_text());
    std::fs::write(cfg.out.join("eval.txt"), eval_text)?;
    if let Some(trace) = &outcome.trace {
        std::fs::write(cfg.out.join("trace.csv"), trace_csv_deterministic(trace))?;
    }
    if cfg.diagnostics {
        let fc = cfg.falkon_config(None);
        let op = build_operator(&train, &fc)?;
        let rep = theory_report(&train, &op.centers, &op.factors, &cfg.kernel, cfg.lambda, 0.1, 1.0)?;
        std::fs::write(cfg.out.join("theory.txt"), rep.to_text())?;
    }
    if let Some(model) = &outcome.model {
        save_model(model, &cfg.out.join("model.json"))?;
    }

    let (metric, value) = primary_metric(cfg.task, &report);
    let summary = format!(
        "{} {} {} {} {} {} {:.3}",
        cfg.solver.name(),
        cfg.centers,
        cfg.iters,
        cfg.lambda,
        metric,
        value,
        seconds
    );
    println!("{summary}");
    Ok(summary)
}

/// Run each config and merge the per-iteration test metrics into one CSV
/// with a column per solver; shorter traces leave trailing cells empty.
pub fn compare(args: &CompareArgs) -> Result<()> {
    if args.configs.is_empty() {
        return Err(Error::Config("compare needs at least one config".into()));
    }
    init_threads(args.threads);
    let mut cfgs = Vec::new();
    for path in &args.configs {
        cfgs.push(RunConfig::from_file(path)?);
    }
    for c in &cfgs[1..] {
        if c.data != cfgs[0].data
            || c.seed != cfgs[0].seed
            || (c.test_fraction - cfgs[0].test_fraction).abs() > 1e-12
        {
            return Err(Error::Config(
                "compare configs must share data, seed, and test_fraction".into(),
            ));
        }
    }
    let mut names = Vec::new();
    let mut traces = Vec::new();
    for (i, cfg) in cfgs.iter().enumerate() {
        if !cfg.solver.is_iterative() {
            return Err(Error::Config(format!(
                "solver {} has no per-iteration trace",
                cfg.solver.name()
            )));
        }
        let mut data = load_data(cfg)?;
        if cfg.normalize {
            let stats = zscore_fit(&data)?;
            data = zscore_apply(&data, &stats)?;
        }
        let (train, test) = split_train_test(&data, cfg.test_fraction, cfg.seed)?;
        let outcome = solve(cfg, &train, &test)?;
        names.push(format!("{}_{i}", cfg.solver.name()));
        traces.push(outcome.trace.expect("iterative solver produced no trace"));
    }
    let max_len = traces.iter().map(|t| t.points.len()).max().unwrap_or(0);
    let mut out = String::from("iteration");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for row in 0..max_len {
        out.push_str(&format!("{}", row + 1));
        for t in &traces {
            out.push(',');
            if let Some(p) = t.points.get(row) {
                if let Some(v) = p.test_metric {
                    out.push_str(&format!("{v}"));
                }
            }
        }
        out.push('\n');
    }
    std::fs::write(&args.out, out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Generate a synthetic dataset CSV.
pub fn gen(args: &GenArgs) -> Result<()> {
    let ds = match args.kind.as_str() {
        "regression" => {
            let mut spec = SynthRegression::new(
                args.n,
                args.d,
                KernelSpec::Gaussian { sigma: args.sigma },
                args.seed,
            );
            spec.noise = args.noise;
            spec.num_anchors = args.anchors.min(args.n);
            spec.generate()?
        }
        "ill-conditioned" => ill_conditioned_regression(args.n, args.seed)?.0,
        "blobs" => two_blob_classification(args.n, args.d, args.separation, args.seed)?,
        other => {
            return Err(Error::Config(format!(
                "unknown generator {other:?}; expected regression, ill-conditioned, or blobs"
            )))
        }
    };
    write_dataset(&ds, &args.out)?;
    println!("wrote {} ({} rows)", args.out.display(), ds.n());
    Ok(())
}

/// CLI entry point.
pub fn main_entry() -> std::process::ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => match RunConfig::resolve(&args.overrides) {
            Ok(cfg) => run(&cfg).map(|_| ()),
            Err(e) => Err(e),
        },
        Command::Compare(args) => compare(args),
        Command::Gen(args) => gen(args),
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
