//! Monte Carlo comparison of the estimators over the simulation scenarios.
//!
//! Replication `k` of every scenario draws its data from
//! `replication_seed(seed, k)`, so all methods (and all scenarios) see the same
//! random stream for a given replication, whatever the number of workers.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use funcreg_core::metrics::r2_functional;
use funcreg_core::simgen::{generate_scenario, replication_seed, ScenarioKind, ScenarioSpec};
use funcreg_core::FunctionalRegressor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::csv_io::{format_f64, write_text};
use crate::error::{CliError, CliResult};
use crate::persist::FittedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<ScenarioKind>,
    pub methods: Vec<Method>,
    pub n_covariates: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rho2: f64,
    pub replications: usize,
    pub seed: u64,
    pub jobs: usize,
    /// Estimator settings; `method` is overridden per cell.
    pub estimator: RunConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioKind::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            n_covariates: 2,
            n_train: 100,
            n_test: 100,
            rho2: 0.8,
            replications: 10,
            seed: 2024,
            jobs: 1,
            estimator: RunConfig::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> CliResult<()> {
        let mut problems = Vec::new();
        if self.scenarios.is_empty() {
            problems.push("at least one scenario is required".to_string());
        }
        if self.methods.is_empty() {
            problems.push("at least one method is required".to_string());
        }
        if self.replications == 0 {
            problems.push("--reps must be at least 1".to_string());
        }
        if self.jobs == 0 {
            problems.push("--jobs must be at least 1".to_string());
        }
        if let Err(e) = self.spec(ScenarioKind::Ls, 0).validate() {
            problems.push(e.to_string());
        }
        if let Err(CliError::Validation(p)) = self.estimator.validate(self.n_covariates) {
            problems.extend(p);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems))
        }
    }

    pub fn spec(&self, kind: ScenarioKind, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            n_covariates: self.n_covariates,
            n_train: self.n_train,
            n_test: self.n_test,
            rho2: self.rho2,
            ..ScenarioSpec::new(kind, seed)
        }
    }

    pub fn dataset_seed(&self, replication: usize) -> u64 {
        replication_seed(self.seed, replication as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub scenario: ScenarioKind,
    pub method: Method,
    pub replication: usize,
    pub seed: u64,
    /// `(R²ₑ, R²ₚ)`, or the error that stopped this fit.
    pub outcome: Result<(f64, f64), String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: ScenarioKind,
    pub method: Method,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_r2_e: f64,
    pub se_r2_e: f64,
    pub median_r2_e: f64,
    pub mean_r2_p: f64,
    pub se_r2_p: f64,
    pub median_r2_p: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub replications: Vec<ReplicationResult>,
    pub cells: Vec<CellSummary>,
}

impl BenchmarkReport {
    pub fn cell(&self, scenario: ScenarioKind, method: Method) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.scenario == scenario && c.method == method)
    }
}

fn run_replication(
    config: &BenchmarkConfig,
    kind: ScenarioKind,
    rep: usize,
) -> Vec<ReplicationResult> {
    let seed = config.dataset_seed(rep);
    let failed_all = |msg: String| {
        config
            .methods
            .iter()
            .map(|&method| ReplicationResult {
                scenario: kind,
                method,
                replication: rep,
                seed,
                outcome: Err(msg.clone()),
                seconds: 0.0,
            })
            .collect()
    };
    let data = match generate_scenario(&config.spec(kind, seed)) {
        Ok(d) => d,
        Err(e) => return failed_all(format!("data generation: {e}")),
    };
    let ybar = data.y_train.mean_curve();
    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let cfg = RunConfig {
                method,
                ..config.estimator.clone()
            };
            let outcome = FittedModel::fit(&cfg, &data.y_train, &data.xs_train)
                .and_then(|m| {
                    let fit = m.predict(&data.xs_train)?;
                    let pred = m.predict(&data.xs_test)?;
                    Ok((
                        r2_functional(&data.y_train, &fit, &ybar)?,
                        r2_functional(&data.y_test, &pred, &ybar)?,
                    ))
                })
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("{kind} {method} replication {rep}: {e}");
            }
            ReplicationResult {
                scenario: kind,
                method,
                replication: rep,
                seed,
                outcome,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

fn summarize(
    scenario: ScenarioKind,
    method: Method,
    results: &[&ReplicationResult],
) -> CellSummary {
    let ok: Vec<(f64, f64)> = results
        .iter()
        .filter_map(|r| r.outcome.clone().ok())
        .collect();
    let e: Vec<f64> = ok.iter().map(|p| p.0).collect();
    let p: Vec<f64> = ok.iter().map(|p| p.1).collect();
    let (mean_r2_e, se_r2_e, median_r2_e, mean_r2_p, se_r2_p, median_r2_p) = if ok.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    } else {
        let (me, se) = mean_se(&e);
        let (mp, sp) = mean_se(&p);
        (me, se, median(&e), mp, sp, median(&p))
    };
    CellSummary {
        scenario,
        method,
        succeeded: ok.len(),
        failed: results.len() - ok.len(),
        mean_r2_e,
        se_r2_e,
        median_r2_e,
        mean_r2_p,
        se_r2_p,
        median_r2_p,
        seconds: results.iter().map(|r| r.seconds).sum(),
    }
}

/// Runs every (scenario, replication) pair on a pool of `config.jobs` threads.
/// Failed fits are recorded in their cell and do not stop the run.
pub fn run_benchmark(config: &BenchmarkConfig) -> CliResult<BenchmarkReport> {
    config.validate()?;
    let tasks: Vec<(ScenarioKind, usize)> = config
        .scenarios
        .iter()
        .flat_map(|&s| (0..config.replications).map(move |r| (s, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    // collect() keeps task order, so the report does not depend on scheduling
    let replications: Vec<ReplicationResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, r)| run_replication(config, s, r))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let mut cells = Vec::new();
    for &s in &config.scenarios {
        for &m in &config.methods {
            let rows: Vec<&ReplicationResult> = replications
                .iter()
                .filter(|r| r.scenario == s && r.method == m)
                .collect();
            cells.push(summarize(s, m, &rows));
        }
    }
    Ok(BenchmarkReport {
        config: config.clone(),
        replications,
        cells,
    })
}

pub fn replications_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("scenario,covariates,method,replication,seed,r2_e,r2_p,error\n");
    for r in &report.replications {
        let (e, p, err) = match &r.outcome {
            Ok((e, p)) => (format_f64(*e), format_f64(*p), String::new()),
            Err(msg) => (String::new(), String::new(), csv_field(msg)),
        };
        writeln!(
            out,
            "{},{},{},{},{},{e},{p},{err}",
            r.scenario, report.config.n_covariates, r.method, r.replication, r.seed
        )
        .unwrap();
    }
    out
}

pub fn summary_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from(
        "scenario,covariates,method,succeeded,failed,mean_r2_e,se_r2_e,median_r2_e,mean_r2_p,se_r2_p,median_r2_p\n",
    );
    for c in &report.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            c.scenario,
            report.config.n_covariates,
            c.method,
            c.succeeded,
            c.failed,
            format_f64(c.mean_r2_e),
            format_f64(c.se_r2_e),
            format_f64(c.median_r2_e),
            format_f64(c.mean_r2_p),
            format_f64(c.se_r2_p),
            format_f64(c.median_r2_p),
        )
        .unwrap();
    }
    out
}

fn csv_field(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace(['\n', '\r'], " "))
}

fn scenario_title(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::Ls => "Linear smooth (LS)",
        ScenarioKind::Lns => "Linear non-smooth (LNS)",
        ScenarioKind::Nls => "Nonlinear smooth (NLS)",
        ScenarioKind::Nlns => "Nonlinear non-smooth (NLNS)",
    }
}

/// Scenario rows, one `R²ₑ / R²ₚ` column pair per method, plus wall-clock per cell.
pub fn markdown_table(report: &BenchmarkReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    writeln!(
        out,
        "Mean R²ₑ and R²ₚ over {} replications (n = {}, n_p = {}, {} covariate{}, ρ² = {}, seed {}).\n",
        cfg.replications,
        cfg.n_train,
        cfg.n_test,
        cfg.n_covariates,
        if cfg.n_covariates == 1 { "" } else { "s" },
        cfg.rho2,
        cfg.seed
    )
    .unwrap();
    out.push_str("| Scenario |");
    for m in &cfg.methods {
        write!(out, " {} R²ₑ | {} R²ₚ |", m.label(), m.label()).unwrap();
    }
    out.push_str(" Time (s) |\n|---|");
    for _ in &cfg.methods {
        out.push_str("---:|---:|");
    }
    out.push_str("---:|\n");
    for &s in &cfg.scenarios {
        write!(out, "| {} |", scenario_title(s)).unwrap();
        let mut seconds = Vec::new();
        for &m in &cfg.methods {
            let c = report.cell(s, m).expect("every cell is summarized");
            let fmt = |v: f64| {
                if v.is_nan() {
                    "n/a".to_string()
                } else {
                    format!("{v:.3}")
                }
            };
            let flag = if c.failed > 0 {
                format!(" ({} failed)", c.failed)
            } else {
                String::new()
            };
            write!(out, " {} | {}{flag} |", fmt(c.mean_r2_e), fmt(c.mean_r2_p)).unwrap();
            seconds.push(format!("{:.1}", c.seconds));
        }
        writeln!(out, " {} |", seconds.join(" / ")).unwrap();
    }
    out
}

/// Writes `replications.csv`, `summary.csv` and `report.md` into `dir`.
/// Only the markdown carries timings; the CSVs are deterministic.
pub fn write_report(dir: &Path, report: &BenchmarkReport) -> CliResult<()> {
    write_text(&dir.join("replications.csv"), &replications_csv(report))?;
    write_text(&dir.join("summary.csv"), &summary_csv(report))?;
    write_text(&dir.join("report.md"), &markdown_table(report))
}
