//! Experiment runner behind the CLI.
//!
//! An experiment file is the flat `key = value` scenario file with optional
//! extra keys: `trials`, `r_grid` (comma-separated multipliers of the
//! boundary radius), `lambda`, `hypothesis` (`null` or `alt`) and the test
//! settings `delta`, `c_chi`, `alpha_floor`, `restarts`, `max_iters`,
//! `exhaustive_budget`, `scan_threshold` (`complexity` or `count`).
//!
//! Every trial draws from streams addressed by `(seed, row, trial)`, so output
//! files do not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::{boundary_radii, BoundaryReport};
use crate::error::{Error, Result};
use crate::extremal::{solve_extremal_exact, WeightSolution};
use crate::model::{
    generate_observations, parse_kv, sample_support, worst_case_signal, Hypothesis, ObservationTensor, ProblemConfig, SignRule,
    FLAG_ALTERNATIVE,
};
use crate::probe::{self, MixtureSpec, DEFAULT_SUPPORT_BUDGET};
use crate::stats::{run_all_tests, t_matrix, run_tests_on_t, RiskEstimate, TestConfig, TestKind, REPORT_CSV_HEADER};
use crate::streams::{self, domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Solve,
    Simulate,
    Power,
    Boundary,
    Probe,
    Mgf,
    Hgdom,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Solve => "solve",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Power => "power",
            ExperimentKind::Boundary => "boundary",
            ExperimentKind::Probe => "probe",
            ExperimentKind::Mgf => "mgf",
            ExperimentKind::Hgdom => "hgdom",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "solve" => ExperimentKind::Solve,
            "simulate" => ExperimentKind::Simulate,
            "power" => ExperimentKind::Power,
            "boundary" => ExperimentKind::Boundary,
            "probe" => ExperimentKind::Probe,
            "mgf" => ExperimentKind::Mgf,
            "hgdom" => ExperimentKind::Hgdom,
            other => return Err(Error::InvalidConfig(format!("unknown experiment kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub config: ProblemConfig,
    pub test_config: TestConfig,
    pub trials: usize,
    /// Multipliers `ρ` of the boundary radius.
    pub r_grid: Vec<f64>,
    /// MGF argument for `mgf`.
    pub lambda: f64,
    /// Draw the `simulate` tensor under the alternative.
    pub alternative: bool,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_R_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_LAMBDA: f64 = 0.5;

fn parse_key<T: FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(raw) => raw.parse().map_err(|_| Error::InvalidConfig(format!("bad value for `{key}`: {raw:?}"))),
    }
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, config: ProblemConfig) -> Self {
        ExperimentSpec {
            kind,
            config,
            test_config: TestConfig::default(),
            trials: DEFAULT_TRIALS,
            r_grid: DEFAULT_R_GRID.to_vec(),
            lambda: DEFAULT_LAMBDA,
            alternative: false,
            out: None,
            format: OutputFormat::Csv,
        }
    }

    /// Builds a spec from experiment-file text.
    pub fn parse(kind: ExperimentKind, text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        let config = ProblemConfig::from_map(&map)?;
        let defaults = TestConfig::default();
        let test_config = TestConfig {
            delta: parse_key(&map, "delta", defaults.delta)?,
            c_chi: parse_key(&map, "c_chi", defaults.c_chi)?,
            alpha_floor: parse_key(&map, "alpha_floor", defaults.alpha_floor)?,
            restarts: parse_key(&map, "restarts", defaults.restarts)?,
            max_iters: parse_key(&map, "max_iters", defaults.max_iters)?,
            exhaustive_budget: parse_key(&map, "exhaustive_budget", defaults.exhaustive_budget)?,
            scan_threshold: parse_key(&map, "scan_threshold", defaults.scan_threshold)?,
        };
        let r_grid = match map.get("r_grid") {
            None => DEFAULT_R_GRID.to_vec(),
            Some(raw) => raw
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidConfig(format!("bad r_grid entry {v:?}"))))
                .collect::<Result<_>>()?,
        };
        let alternative = match map.get("hypothesis").map(String::as_str) {
            None | Some("null") => false,
            Some("alt") => true,
            Some(other) => return Err(Error::InvalidConfig(format!("hypothesis must be `null` or `alt`, got {other:?}"))),
        };
        let spec = ExperimentSpec {
            test_config,
            trials: parse_key(&map, "trials", DEFAULT_TRIALS)?,
            r_grid,
            lambda: parse_key(&map, "lambda", DEFAULT_LAMBDA)?,
            alternative,
            ..ExperimentSpec::new(kind, config)
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.test_config.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.r_grid.is_empty() || self.r_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig("r_grid must hold positive multipliers".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda={} must be nonnegative", self.lambda)));
        }
        Ok(())
    }
}

/// Error rates of the three tests at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestRisks {
    pub chi2: RiskEstimate,
    pub scan: RiskEstimate,
    pub combined: RiskEstimate,
}

impl TestRisks {
    pub fn get(&self, test: TestKind) -> &RiskEstimate {
        match test {
            TestKind::Chi2 => &self.chi2,
            TestKind::Scan => &self.scan,
            TestKind::Combined => &self.combined,
        }
    }
}

const TESTS: [TestKind; 3] = [TestKind::Chi2, TestKind::Scan, TestKind::Combined];

/// Decisions of the three tests on one tensor, in `TESTS` order.
fn decide(tensor: &ObservationTensor, weights: &WeightSolution, config: &ProblemConfig, test_config: &TestConfig) -> Result<[bool; 3]> {
    let t = t_matrix(tensor, weights)?;
    let suite = run_tests_on_t(&t, weights, config, test_config, std::time::Instant::now())?;
    Ok([suite.chi2.reject, suite.scan.reject, suite.combined.reject])
}

/// Monte Carlo risk of the χ², scan and combined tests with the given weights.
///
/// Each trial draws one null tensor and one alternative tensor carrying `±θ*`
/// (Rademacher signs) on a uniform support. All randomness of trial `t` comes
/// from streams addressed by `(row_seed, ·, t)`.
pub fn estimate_risks(config: &ProblemConfig, test_config: &TestConfig, weights: &WeightSolution, trials: usize, row_seed: u64) -> Result<TestRisks> {
    let config = ProblemConfig { band: config.band.max(weights.band_needed()), ..config.clone() };
    config.validate()?;
    test_config.validate()?;
    let outcomes: Vec<([bool; 3], [bool; 3])> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<_> {
            let trial_config = ProblemConfig { seed: streams::derive(row_seed, domain::SCAN_RESTART, trial), ..config.clone() };

            let null = generate_observations(&config, Hypothesis::Null, &mut streams::stream(row_seed, domain::NOISE_NULL, trial))?;
            let null_decisions = decide(&null, weights, &trial_config, test_config)?;

            let support = sample_support(&config, &mut streams::stream(row_seed, domain::SUPPORT, trial))?;
            let signs = SignRule::Rademacher(streams::derive(row_seed, domain::SIGNS, trial));
            let signal = worst_case_signal(weights, &config, &support, signs)?;
            let alt = generate_observations(
                &config,
                Hypothesis::Alt { support: &support, signal: &signal },
                &mut streams::stream(row_seed, domain::NOISE_ALT, trial),
            )?;
            let alt_decisions = decide(&alt, weights, &trial_config, test_config)?;
            Ok((null_decisions, alt_decisions))
        })
        .collect::<Result<_>>()?;
    let risk = |idx: usize| {
        let false_alarms = outcomes.iter().filter(|o| o.0[idx]).count();
        let misses = outcomes.iter().filter(|o| !o.1[idx]).count();
        RiskEstimate::from_counts(false_alarms, misses, trials)
    };
    Ok(TestRisks { chi2: risk(0), scan: risk(1), combined: risk(2) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    pub rho: f64,
    pub r: f64,
    /// `None` when the scenario at this radius is infeasible; see `error`.
    pub risks: Option<TestRisks>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerCurve {
    pub boundary: BoundaryReport,
    pub rows: Vec<PowerRow>,
}

pub const POWER_CSV_HEADER: &str = "rho,test,type1,type2,total,ci,trials";

impl PowerCurve {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{POWER_CSV_HEADER}\n");
        for row in &self.rows {
            for test in TESTS {
                match &row.risks {
                    Some(risks) => {
                        let e = risks.get(test);
                        let _ = writeln!(out, "{},{},{},{},{},{},{}", row.rho, test.as_str(), e.type1, e.type2, e.total, e.ci, e.trials);
                    }
                    None => {
                        let _ = writeln!(out, "{},{},NaN,NaN,NaN,NaN,0", row.rho, test.as_str());
                    }
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("power rows serialize")
    }

    /// Sidecar metadata: the boundary report and how type II was estimated.
    pub fn meta_json(&self, config: &ProblemConfig, trials: usize) -> String {
        let meta = serde_json::json!({
            "scenario": {
                "M": config.rows, "N": config.cols, "m": config.active_rows, "n": config.active_cols,
                "epsilon": config.epsilon, "s": config.s, "tau": config.tau, "seed": config.seed,
            },
            "trials": trials,
            "type2_note": "type II error is estimated at the least-favorable signal theta* with Rademacher signs on a uniform support, not as a supremum over the class",
            "boundary": self.boundary,
        });
        serde_json::to_string_pretty(&meta).expect("metadata serializes")
    }
}

/// Risk of all three tests at `r = ρ · r_boundary` for every `ρ` in the grid.
///
/// Solver or budget failures at one radius become a row with `risks = None`.
pub fn power_curve(spec: &ExperimentSpec) -> Result<PowerCurve> {
    spec.validate()?;
    let c = &spec.config;
    let boundary = boundary_radii(c.tau, c.s, c.epsilon, c.rows, c.cols, c.active_rows, c.active_cols)?;
    let mut rows = Vec::with_capacity(spec.r_grid.len());
    for (idx, &rho) in spec.r_grid.iter().enumerate() {
        let r = rho * boundary.r_boundary;
        let row_seed = streams::derive(c.seed, domain::SCAN_TRIAL, idx as u64);
        let result = solve_extremal_exact(c.tau, c.s, c.epsilon, r, &c.sigma())
            .and_then(|weights| estimate_risks(&ProblemConfig { r, ..c.clone() }, &spec.test_config, &weights, spec.trials, row_seed));
        match result {
            Ok(risks) => rows.push(PowerRow { rho, r, risks: Some(risks), error: None }),
            Err(e) if e.is_infeasible() => rows.push(PowerRow { rho, r, risks: None, error: Some(e.to_string()) }),
            Err(e) => return Err(e),
        }
    }
    Ok(PowerCurve { boundary, rows })
}

/// Text produced by an experiment: the main output and an optional sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub body: String,
    pub meta: Option<String>,
}

/// Path of the metadata sidecar written next to `out`.
pub fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn solve_output(spec: &ExperimentSpec) -> Result<String> {
    let c = &spec.config;
    let weights = solve_extremal_exact(c.tau, c.s, c.epsilon, c.r, &c.sigma())?;
    Ok(match spec.format {
        OutputFormat::Csv => weights.to_table(),
        OutputFormat::Json => serde_json::to_string_pretty(&serde_json::json!({
            "tau": weights.tau, "s": weights.s, "epsilon": weights.epsilon, "r": weights.r,
            "T": weights.t_edge, "v": weights.v, "V_eps": weights.v_eps, "a": weights.a,
            "w": weights.w, "theta2": weights.theta2,
        }))
        .expect("weights serialize"),
    })
}

/// One tensor at the configured radius; returns the report text and the tensor.
pub fn simulate(spec: &ExperimentSpec) -> Result<(String, ObservationTensor)> {
    let c = &spec.config;
    let weights = solve_extremal_exact(c.tau, c.s, c.epsilon, c.r, &c.sigma())?;
    let config = ProblemConfig { band: c.band.max(weights.band_needed()), ..c.clone() };
    let tensor = if spec.alternative {
        let support = sample_support(&config, &mut streams::stream(config.seed, domain::SUPPORT, 0))?;
        let signal = worst_case_signal(&weights, &config, &support, SignRule::Rademacher(streams::derive(config.seed, domain::SIGNS, 0)))?;
        generate_observations(&config, Hypothesis::Alt { support: &support, signal: &signal }, &mut streams::stream(config.seed, domain::NOISE_ALT, 0))?
    } else {
        generate_observations(&config, Hypothesis::Null, &mut streams::stream(config.seed, domain::NOISE_NULL, 0))?
    };
    let suite = run_all_tests(&tensor, &weights, &config, &spec.test_config)?;
    let text = match spec.format {
        OutputFormat::Csv => {
            let mut out = format!("{REPORT_CSV_HEADER}\n");
            for report in suite.reports() {
                let _ = writeln!(out, "{}", report.to_csv_row());
            }
            out
        }
        OutputFormat::Json => {
            let rows: Vec<_> = suite
                .reports()
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "test": r.test.as_str(),
                        "statistic": r.statistic,
                        "threshold": r.threshold,
                        "reject": r.reject,
                        "support_rows": r.support.as_ref().map(|s| s.rows.clone()),
                        "support_cols": r.support.as_ref().map(|s| s.cols.clone()),
                        "millis": r.millis,
                    })
                })
                .collect();
            serde_json::to_string_pretty(&rows).expect("reports serialize")
        }
    };
    Ok((text, tensor))
}

fn probe_output(spec: &ExperimentSpec) -> Result<String> {
    let c = &spec.config;
    let boundary = boundary_radii(c.tau, c.s, c.epsilon, c.rows, c.cols, c.active_rows, c.active_cols)?;
    let mut rows = Vec::new();
    for &rho in &spec.r_grid {
        let r = rho * boundary.r_boundary;
        let weights = solve_extremal_exact(c.tau, c.s, c.epsilon, r, &c.sigma())?;
        let mixture = MixtureSpec::from_solution(&weights, &c.sigma(), c.rows, c.cols, c.active_rows, c.active_cols, DEFAULT_SUPPORT_BUDGET)?;
        let config = ProblemConfig { r, band: c.band.max(weights.band_needed()), ..c.clone() };
        let risk = probe::bayes_risk_mc(&config, &mixture, spec.trials)?;
        rows.push((format!("rho={rho}"), risk));
    }
    Ok(match spec.format {
        OutputFormat::Csv => {
            let mut out = format!("{}\n", probe::RISK_CSV_HEADER);
            for (id, risk) in &rows {
                let _ = writeln!(out, "{}", probe::risk_csv_row(id, risk));
            }
            out
        }
        OutputFormat::Json => {
            let rows: BTreeMap<_, _> = rows.into_iter().collect();
            serde_json::to_string_pretty(&rows).expect("risks serialize")
        }
    })
}

fn mgf_output(spec: &ExperimentSpec) -> Result<String> {
    let c = &spec.config;
    let weights = solve_extremal_exact(c.tau, c.s, c.epsilon, c.r, &c.sigma())?;
    let est = probe::empirical_mgf(&weights, spec.lambda, spec.trials, c.seed)?;
    Ok(match spec.format {
        OutputFormat::Csv => format!(
            "lambda,draws,empirical,std_error,exact,log_gap,gap_bound,max_weight\n{},{},{},{},{},{},{},{}\n",
            est.lambda, est.draws, est.empirical, est.std_error, est.exact, est.log_gap, est.gap_bound, est.max_weight
        ),
        OutputFormat::Json => serde_json::to_string_pretty(&est).expect("mgf serializes"),
    })
}

fn hgdom_output(spec: &ExperimentSpec) -> Result<String> {
    let report = probe::hypergeom_binomial_dominance(spec.config.cols, spec.config.active_cols)?;
    Ok(match spec.format {
        OutputFormat::Csv => report.to_csv(),
        OutputFormat::Json => serde_json::to_string_pretty(&report).expect("dominance report serializes"),
    })
}

/// Runs one experiment and writes its output to `spec.out` when set.
///
/// `simulate` writes the binary tensor to `spec.out` and returns the test
/// reports; every other kind writes its table (plus a `.meta.json` sidecar
/// for `power`).
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let output = match spec.kind {
        ExperimentKind::Solve => ExperimentOutput { body: solve_output(spec)?, meta: None },
        ExperimentKind::Simulate => {
            let (body, tensor) = simulate(spec)?;
            if let Some(path) = &spec.out {
                let flags = if spec.alternative { FLAG_ALTERNATIVE } else { 0 };
                let file = std::io::BufWriter::new(std::fs::File::create(path)?);
                tensor.write_binary(file, flags, spec.config.seed)?;
            }
            return Ok(ExperimentOutput { body, meta: None });
        }
        ExperimentKind::Power => {
            let curve = power_curve(spec)?;
            let body = match spec.format {
                OutputFormat::Csv => curve.to_csv(),
                OutputFormat::Json => curve.to_json(),
            };
            ExperimentOutput { body, meta: Some(curve.meta_json(&spec.config, spec.trials)) }
        }
        ExperimentKind::Boundary => {
            let c = &spec.config;
            let report = boundary_radii(c.tau, c.s, c.epsilon, c.rows, c.cols, c.active_rows, c.active_cols)?;
            let body = match spec.format {
                OutputFormat::Json => report.to_json(),
                OutputFormat::Csv => {
                    let mut out = String::from("name,value,pass\n");
                    let _ = writeln!(out, "r_chi,{},", report.r_chi);
                    let _ = writeln!(out, "r_scan,{},", report.r_scan.map_or("NaN".to_string(), |r| r.to_string()));
                    let _ = writeln!(out, "r_boundary,{},", report.r_boundary);
                    for (name, flag) in &report.flags {
                        let _ = writeln!(out, "{name},{},{}", flag.value, flag.pass);
                    }
                    out
                }
            };
            ExperimentOutput { body, meta: None }
        }
        ExperimentKind::Probe => ExperimentOutput { body: probe_output(spec)?, meta: None },
        ExperimentKind::Mgf => ExperimentOutput { body: mgf_output(spec)?, meta: None },
        ExperimentKind::Hgdom => ExperimentOutput { body: hgdom_output(spec)?, meta: None },
    };
    if let Some(path) = &spec.out {
        std::fs::write(path, &output.body)?;
        if let Some(meta) = &output.meta {
            std::fs::write(meta_path(path), meta)?;
        }
    }
    Ok(output)
}
