use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use funcreg_core::fkamfr::Kernel;
use funcreg_core::metrics::{distance_correlation, pc_score_map, r2_functional, ScoreMapOptions};
use funcreg_core::simgen::{generate_scenario, ScenarioKind, ScenarioSpec};
use funcreg_core::{FunctionalRegressor, FunctionalSample};
use serde::{Deserialize, Serialize};

use crate::benchmark::{markdown_table, run_benchmark, write_report, BenchmarkConfig};
use crate::config::{parse_kernel, Method, RunConfig};
use crate::csv_io::{
    format_f64, import_sample, read_sample, write_sample, write_text, ImportOptions,
};
use crate::error::{CliError, CliResult};
use crate::persist::{load_json, save_json, FittedModel, ModelFile, TrainingInfo, FORMAT_VERSION};

#[derive(Debug, Parser)]
#[command(
    name = "funcreg",
    version,
    about = "Function-on-function regression with functional PCs, additive splines and kernels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one simulated dataset and write it as CSV files plus a manifest.
    Simulate(SimulateArgs),
    /// Fit an estimator and save it as a model file.
    Fit(FitArgs),
    /// Predict response curves from a saved model.
    Predict(PredictArgs),
    /// Functional R² of predictions against observed curves.
    Evaluate(EvaluateArgs),
    /// Monte Carlo comparison of the estimators across scenarios.
    Benchmark(BenchmarkArgs),
    /// Predicted response-PC score over a grid of covariate PC scores.
    Pcmap(PcmapArgs),
    /// Convert an external CSV layout into the standard functional CSV format.
    Import(ImportArgs),
    /// Distance correlation between two functional variables.
    Dcor(DcorArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: ScenarioKind,
    /// Training curves.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Test curves (defaults to --n).
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub covariates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub rho2: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// PVE target: one value for all variables, or response then each covariate.
    #[arg(long, value_delimiter = ',')]
    pub pve: Vec<f64>,
    /// Fixed number of PCs, same layout as --pve.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// FKAMFR kernel.
    #[arg(long, value_parser = parse_kernel, default_value = "gaussian")]
    pub kernel: Kernel,
    /// FKAMFR bandwidth candidates per covariate.
    #[arg(long, default_value_t = 15)]
    pub grid_size: usize,
    /// FKAMFR lowest distance quantile in the bandwidth grid.
    #[arg(long, default_value_t = 0.02)]
    pub prob_lo: f64,
    /// FKAMFR highest distance quantile in the bandwidth grid.
    #[arg(long, default_value_t = 0.50)]
    pub prob_hi: f64,
    /// FKAMFR backfitting tolerance, relative to the response size.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// FKAMFR backfitting iteration limit.
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// FSAMFR cap on each smoother's effective degrees of freedom.
    #[arg(long, default_value_t = 5.0)]
    pub df_cap: f64,
}

impl EstimatorArgs {
    pub fn run_config(&self, method: Method) -> RunConfig {
        RunConfig {
            method,
            pve: self.pve.clone(),
            k: self.k.clone(),
            kernel: self.kernel,
            grid_size: self.grid_size,
            prob_range: (self.prob_lo, self.prob_hi),
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            df_cap: self.df_cap,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub method: Method,
    /// Response CSV.
    #[arg(long)]
    pub y: PathBuf,
    /// Covariate CSVs, one per covariate, in order.
    #[arg(long, num_args = 1.., required = true)]
    pub x: Vec<PathBuf>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fitted training curves to this CSV.
    #[arg(long)]
    pub fitted: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub x: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Observed response curves.
    #[arg(long)]
    pub truth: PathBuf,
    /// Predicted response curves.
    #[arg(long)]
    pub pred: PathBuf,
    /// Training response; its mean curve is the R² reference.
    #[arg(long)]
    pub reference: PathBuf,
    /// Write the result as JSON here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Scenarios to run (default: all four).
    #[arg(long, value_delimiter = ',')]
    pub scenario: Vec<ScenarioKind>,
    /// Methods to compare (default: all three).
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<Method>,
    #[arg(long, default_value_t = 2)]
    pub covariates: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    pub rho2: f64,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Worker threads (default: all available cores).
    #[arg(long, env = "FUNCREG_JOBS")]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// Output directory for replications.csv, summary.csv and report.md.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcmapArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training covariates (optional for FKAMFR models, which store them).
    #[arg(long, num_args = 1..)]
    pub x: Vec<PathBuf>,
    /// Training response (optional for FKAMFR models).
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Response PC to map (1-based).
    #[arg(long, default_value_t = 1)]
    pub component: usize,
    /// Covariate whose first two PCs span the map (1-based).
    #[arg(long, default_value_t = 1)]
    pub covariate: usize,
    #[arg(long, default_value_t = 25)]
    pub resolution: usize,
    /// Hold the other covariates at their training means.
    #[arg(long)]
    pub fix_others: bool,
    /// Output directory for score_map.csv and hull.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Input rows are grid points and columns are curves (header `t,<id>,...`).
    #[arg(long)]
    pub transpose: bool,
    /// Apply log(1 + v) to every value.
    #[arg(long)]
    pub log1p: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DcorArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Pcmap(a) => cmd_pcmap(&a),
        Command::Import(a) => cmd_import(&a),
        Command::Dcor(a) => cmd_dcor(&a),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFiles {
    pub x_train: Vec<String>,
    pub x_test: Vec<String>,
    pub y_train: String,
    pub y_test: String,
    /// Noise-free responses.
    pub signal_train: String,
    pub signal_test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationManifest {
    pub format_version: u32,
    pub spec: ScenarioSpec,
    pub c_rho: f64,
    /// Paths relative to the manifest.
    pub files: SimulationFiles,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let spec = ScenarioSpec {
        n_covariates: args.covariates,
        n_train: args.n,
        n_test: args.n_test.unwrap_or(args.n),
        rho2: args.rho2,
        ..ScenarioSpec::new(args.scenario, args.seed)
    };
    if let Err(e) = spec.validate() {
        return Err(CliError::validation(e.to_string()));
    }
    let data = generate_scenario(&spec)?;
    let files = SimulationFiles {
        x_train: (1..=spec.n_covariates)
            .map(|j| format!("X{j}_train.csv"))
            .collect(),
        x_test: (1..=spec.n_covariates)
            .map(|j| format!("X{j}_test.csv"))
            .collect(),
        y_train: "Y_train.csv".into(),
        y_test: "Y_test.csv".into(),
        signal_train: "signal_train.csv".into(),
        signal_test: "signal_test.csv".into(),
    };
    let dir = &args.out;
    for (name, x) in files.x_train.iter().zip(&data.xs_train) {
        write_sample(&dir.join(name), x)?;
    }
    for (name, x) in files.x_test.iter().zip(&data.xs_test) {
        write_sample(&dir.join(name), x)?;
    }
    write_sample(&dir.join(&files.y_train), &data.y_train)?;
    write_sample(&dir.join(&files.y_test), &data.y_test)?;
    write_sample(&dir.join(&files.signal_train), &data.signal_train)?;
    write_sample(&dir.join(&files.signal_test), &data.signal_test)?;
    let manifest = SimulationManifest {
        format_version: FORMAT_VERSION,
        spec,
        c_rho: data.c_rho,
        files,
    };
    save_json(&dir.join("manifest.json"), &manifest)?;
    println!(
        "wrote scenario {} with {} covariate(s), seed {}, to {}",
        manifest.spec.kind,
        manifest.spec.n_covariates,
        manifest.spec.seed,
        dir.display()
    );
    Ok(())
}

fn read_all(paths: &[PathBuf]) -> CliResult<Vec<FunctionalSample>> {
    paths.iter().map(|p| read_sample(p)).collect()
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let config = args.estimator.run_config(args.method);
    config.validate(args.x.len())?;
    let y = read_sample(&args.y)?;
    let xs = read_all(&args.x)?;
    let model = FittedModel::fit(&config, &y, &xs)?;
    let fitted = model.predict(&xs)?;
    let r2_e = r2_functional(&y, &fitted, &y.mean_curve())?;
    if let FittedModel::Fkamfr(m) = &model {
        if !m.converged() {
            log::warn!(
                "backfitting stopped after {} iterations without converging",
                m.iterations_used()
            );
        }
    }
    let info = TrainingInfo {
        n_train: y.n(),
        n_covariates: xs.len(),
        response_file: Some(args.y.display().to_string()),
        covariate_files: args.x.iter().map(|p| p.display().to_string()).collect(),
        config,
        r2_e,
    };
    save_json(&args.out, &ModelFile::new(model, info))?;
    if let Some(path) = &args.fitted {
        write_sample(path, &fitted)?;
    }
    println!(
        "{} fitted on {} curves, R²ₑ = {}",
        args.method,
        y.n(),
        format_f64(r2_e)
    );
    Ok(())
}

pub fn load_model(path: &Path) -> CliResult<ModelFile> {
    load_json(path)
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult<()> {
    let file = load_model(&args.model)?;
    let xs = read_all(&args.x)?;
    let pred = file.model.predict(&xs)?;
    write_sample(&args.out, &pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub n: usize,
    pub r2: f64,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<EvaluationReport> {
    let truth = read_sample(&args.truth)?;
    let pred = read_sample(&args.pred)?;
    let reference = read_sample(&args.reference)?;
    reference
        .grid()
        .ensure_matches(truth.grid(), "reference vs truth")?;
    let r2 = r2_functional(&truth, &pred, &reference.mean_curve())?;
    let report = EvaluationReport {
        format_version: FORMAT_VERSION,
        n: truth.n(),
        r2,
    };
    println!("R² = {} over {} curves", format_f64(r2), truth.n());
    if let Some(out) = &args.out {
        save_json(out, &report)?;
    }
    Ok(report)
}

pub fn benchmark_config(args: &BenchmarkArgs) -> BenchmarkConfig {
    let defaults = BenchmarkConfig::default();
    BenchmarkConfig {
        scenarios: if args.scenario.is_empty() {
            defaults.scenarios
        } else {
            args.scenario.clone()
        },
        methods: if args.method.is_empty() {
            defaults.methods
        } else {
            args.method.clone()
        },
        n_covariates: args.covariates,
        n_train: args.n,
        n_test: args.n_test.unwrap_or(args.n),
        rho2: args.rho2,
        replications: args.reps,
        seed: args.seed,
        jobs: args.jobs.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }),
        estimator: args.estimator.run_config(Method::Flmfr),
    }
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> CliResult<()> {
    let config = benchmark_config(args);
    let report = run_benchmark(&config)?;
    write_report(&args.out, &report)?;
    print!("{}", markdown_table(&report));
    Ok(())
}

pub fn cmd_pcmap(args: &PcmapArgs) -> CliResult<()> {
    let file = load_model(&args.model)?;
    let model = &file.model;
    let j_count = model.n_covariates();
    let mut problems = Vec::new();
    if j_count > 1 && !args.fix_others {
        problems.push(format!(
            "the model has {j_count} covariates; pass --fix-others to hold the others at their means"
        ));
    }
    if args.component == 0 || args.covariate == 0 || args.covariate > j_count {
        problems.push(format!(
            "--component must be at least 1 and --covariate between 1 and {j_count}"
        ));
    }
    if args.resolution < 2 {
        problems.push("--resolution must be at least 2".into());
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let (xs, y) = match (model, args.y.as_ref()) {
        (_, Some(y)) => (read_all(&args.x)?, read_sample(y)?),
        (FittedModel::Fkamfr(m), None) if args.x.is_empty() => {
            (m.train_xs().to_vec(), m.train_y().clone())
        }
        _ => {
            return Err(CliError::validation(
                "this model does not store its training data; pass --x and --y",
            ))
        }
    };
    let options = ScoreMapOptions {
        response_component: args.component - 1,
        covariate: args.covariate - 1,
        resolution: args.resolution,
        ranges: None,
        fix_others: args.fix_others,
    };
    let map = pc_score_map(model, &xs, &y, &options)?;
    let mut grid = String::from("x1,x2,score\n");
    for (a, x1) in map.x1.iter().enumerate() {
        for (b, x2) in map.x2.iter().enumerate() {
            grid.push_str(&format!(
                "{},{},{}\n",
                format_f64(*x1),
                format_f64(*x2),
                format_f64(map.value(a, b))
            ));
        }
    }
    let mut hull = String::from("x1,x2\n");
    for (a, b) in &map.hull {
        hull.push_str(&format!("{},{}\n", format_f64(*a), format_f64(*b)));
    }
    write_text(&args.out.join("score_map.csv"), &grid)?;
    write_text(&args.out.join("hull.csv"), &hull)
}

pub fn cmd_import(args: &ImportArgs) -> CliResult<()> {
    let sample = import_sample(
        &args.input,
        ImportOptions {
            transpose: args.transpose,
            log1p: args.log1p,
        },
    )?;
    write_sample(&args.out, &sample)?;
    println!(
        "imported {} curves on {} grid points",
        sample.n(),
        sample.r()
    );
    Ok(())
}

pub fn cmd_dcor(args: &DcorArgs) -> CliResult<()> {
    let a = read_sample(&args.a)?;
    let b = read_sample(&args.b)?;
    println!("{}", format_f64(distance_correlation(&a, &b)?));
    Ok(())
}
