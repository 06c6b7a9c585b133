//! Weighted χ² cell statistics, the aggregate χ² test and the scan test.
//!
//! All tests share the `M × N` matrix of per-cell statistics
//! `t_{ij} = Σ_k w_k ((x_{ij,k} / (ε σ_k))² − 1)`; the scan never touches the
//! raw frequency series.

use std::cmp::Ordering;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::extremal::WeightSolution;
use crate::model::{ObservationTensor, ProblemConfig, SigmaSchedule, SupportMask};
use crate::streams;

#[derive(Debug, Clone, PartialEq)]
pub struct TestConfig {
    /// Slack `δ` in the scan threshold.
    pub delta: f64,
    /// Fraction `c` in the χ² threshold `c · a · √(mnpq)`.
    pub c_chi: f64,
    /// Level whose normal quantile floors the χ² threshold.
    pub alpha_floor: f64,
    pub restarts: usize,
    pub max_iters: usize,
    /// Largest `C(M,m)·C(N,n)` for which the scan is enumerated exactly.
    pub exhaustive_budget: u128,
    pub scan_threshold: ScanThreshold,
}

/// Which logarithmic complexity enters the scan threshold `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanThreshold {
    /// `K² = 2(1+δ)(m log p⁻¹ + n log q⁻¹)`.
    #[default]
    Complexity,
    /// `K² = 2(1+δ) log(C(M,m)·C(N,n))`, the union bound over all supports.
    /// Larger than `Complexity` at moderate sizes, where `log C(M,m) ≈ m log(e/p)`.
    SupportCount,
}

impl std::str::FromStr for ScanThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complexity" => Ok(ScanThreshold::Complexity),
            "count" => Ok(ScanThreshold::SupportCount),
            other => Err(Error::InvalidConfig(format!("scan_threshold must be `complexity` or `count`, got {other:?}"))),
        }
    }
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig { delta: 0.05, c_chi: 0.5, alpha_floor: 0.05, restarts: 50, max_iters: 100, exhaustive_budget: 1_000_000, scan_threshold: ScanThreshold::Complexity }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_chi > 0.0 && self.c_chi < 1.0) {
            return Err(Error::InvalidConfig(format!("c_chi={} must lie in (0,1)", self.c_chi)));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("delta={} must be positive", self.delta)));
        }
        if !(self.alpha_floor > 0.0 && self.alpha_floor < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha_floor={} must lie in (0,1)", self.alpha_floor)));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Chi2,
    Scan,
    Combined,
}

impl TestKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestKind::Chi2 => "chi2",
            TestKind::Scan => "scan",
            TestKind::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub test: TestKind,
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub support: Option<SupportMask>,
    pub millis: u128,
}

pub const REPORT_CSV_HEADER: &str = "test,statistic,threshold,decision,support_rows,support_cols,millis";

impl TestReport {
    fn new(test: TestKind, statistic: f64, threshold: f64, support: Option<SupportMask>, started: Instant) -> Self {
        TestReport { test, statistic, threshold, reject: statistic > threshold, support, millis: started.elapsed().as_millis() }
    }

    /// One CSV row; support indices are `;`-separated.
    pub fn to_csv_row(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        let (rows, cols) = match &self.support {
            Some(s) => (join(&s.rows), join(&s.cols)),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.test.as_str(),
            self.statistic,
            self.threshold,
            if self.reject { "reject" } else { "accept" },
            rows,
            cols,
            self.millis
        )
    }
}

/// Monte Carlo error rates of one test with binomial 95% radii.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RiskEstimate {
    /// False alarms under the null over `trials`.
    pub type1: f64,
    /// Misses under the alternative over `trials`.
    pub type2: f64,
    /// `type1 + type2`.
    pub total: f64,
    pub ci_type1: f64,
    pub ci_type2: f64,
    /// Radius for `total`, combining the two independent estimates.
    pub ci: f64,
    pub trials: usize,
}

impl RiskEstimate {
    pub fn from_counts(false_alarms: usize, misses: usize, trials: usize) -> Self {
        let n = trials.max(1) as f64;
        let type1 = false_alarms as f64 / n;
        let type2 = misses as f64 / n;
        let radius = |p: f64| 1.96 * (p * (1.0 - p) / n).sqrt();
        let (ci_type1, ci_type2) = (radius(type1), radius(type2));
        RiskEstimate {
            type1,
            type2,
            total: type1 + type2,
            ci_type1,
            ci_type2,
            ci: (ci_type1 * ci_type1 + ci_type2 * ci_type2).sqrt(),
            trials,
        }
    }
}

/// `Σ_k w_k ((x_k / (ε σ_k))² − 1)` for a series stored on `|k| ≤ series_band`.
pub fn t_stat(series: &[f64], series_band: usize, weights: &WeightSolution, epsilon: f64, sigma: &SigmaSchedule) -> Result<f64> {
    if series.len() != 2 * series_band + 1 {
        return Err(Error::ShapeMismatch(format!("series of length {} does not match band {series_band}", series.len())));
    }
    let top = weights.half_width();
    if top > series_band {
        return Err(Error::BandMismatch { needed: top, available: series_band });
    }
    let offset = series_band as i64;
    let mut total = 0.0;
    for k in -(top as i64)..=(top as i64) {
        let z = series[(k + offset) as usize] / (epsilon * sigma.at(k));
        total += weights.w_at(k) * (z * z - 1.0);
    }
    Ok(total)
}

/// Per-cell statistics, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl TMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for a {rows}x{cols} matrix", values.len())));
        }
        Ok(TMatrix { rows, cols, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// `(1/√(mn)) Σ_{A×B} t_{ij}`: column sums over `A` (ascending rows), then
    /// summed over `B` ascending. Every scan path computes values this way so
    /// equal supports give bit-identical values.
    pub fn support_value(&self, rows: &[usize], cols: &[usize]) -> f64 {
        let total: f64 = cols.iter().map(|&j| rows.iter().map(|&i| self.get(i, j)).sum::<f64>()).sum();
        total / ((rows.len() * cols.len()) as f64).sqrt()
    }
}

pub fn t_matrix(tensor: &ObservationTensor, weights: &WeightSolution) -> Result<TMatrix> {
    let needed = weights.half_width();
    if needed > tensor.band {
        return Err(Error::BandMismatch { needed, available: tensor.band });
    }
    let values: Vec<f64> = (0..tensor.rows * tensor.cols)
        .into_par_iter()
        .map(|pos| {
            let (i, j) = (pos / tensor.cols, pos % tensor.cols);
            t_stat(tensor.series(i, j), tensor.band, weights, tensor.epsilon, &tensor.sigma)
        })
        .collect::<Result<_>>()?;
    TMatrix::new(tensor.rows, tensor.cols, values)
}

pub fn chi2_from_t(t: &TMatrix) -> f64 {
    t.values.iter().sum::<f64>() / ((t.rows * t.cols) as f64).sqrt()
}

/// `(1/√(MN)) Σ_{ij} t_{ij}`.
pub fn chi2_statistic(tensor: &ObservationTensor, weights: &WeightSolution) -> Result<f64> {
    Ok(chi2_from_t(&t_matrix(tensor, weights)?))
}

pub fn normal_quantile(prob: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(prob)
}

/// `H = max(z_{1−α}, c · a · √(mnpq))`.
pub fn threshold_h(a: f64, m: usize, n: usize, p: f64, q: f64, config: &TestConfig) -> f64 {
    let floor = normal_quantile(1.0 - config.alpha_floor);
    let signal = config.c_chi * a * ((m * n) as f64 * p * q).sqrt();
    floor.max(signal)
}

/// `K = √(2(1+δ)(m log p⁻¹ + n log q⁻¹))`.
pub fn threshold_k(m: usize, n: usize, p: f64, q: f64, delta: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("scan threshold needs 0 < p, q < 1 (p={p}, q={q})")));
    }
    Ok((2.0 * (1.0 + delta) * (m as f64 * (1.0 / p).ln() + n as f64 * (1.0 / q).ln())).sqrt())
}

/// `K = √(2(1+δ) log(C(M,m)·C(N,n)))`.
pub fn threshold_k_count(rows: usize, cols: usize, m: usize, n: usize, delta: f64) -> Result<f64> {
    if m == 0 || n == 0 || m > rows || n > cols {
        return Err(Error::InvalidArgument(format!("support {m}x{n} does not fit in {rows}x{cols}")));
    }
    let log_count = ln_binomial(rows as u64, m as u64) + ln_binomial(cols as u64, n as u64);
    if log_count <= 0.0 {
        return Err(Error::InvalidArgument("scan threshold needs more than one support".into()));
    }
    Ok((2.0 * (1.0 + delta) * log_count).sqrt())
}

/// `C(n, k)` saturating at `u128::MAX`.
pub fn binomial_count(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(x) => x / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

pub fn support_count(rows: usize, cols: usize, m: usize, n: usize) -> u128 {
    binomial_count(rows, m).saturating_mul(binomial_count(cols, n))
}

/// Indices of the `count` largest scores, ties to the smaller index, returned ascending.
fn top_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

/// Advances `combo` to the next m-combination of `0..total` in lexicographic order.
fn next_combination(combo: &mut [usize], total: usize) -> bool {
    let m = combo.len();
    let mut i = m;
    while i > 0 {
        i -= 1;
        if combo[i] < total - m + i {
            combo[i] += 1;
            for j in i + 1..m {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[derive(Debug, Clone)]
struct Candidate {
    value: f64,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Candidate {
    /// Higher value first; among equal values the lexicographically smaller support.
    fn better_than(&self, other: &Candidate) -> bool {
        match self.value.partial_cmp(&other.value) {
            Some(Ordering::Greater) => true,
            Some(Ordering::Less) => false,
            _ => (&self.rows, &self.cols) < (&other.rows, &other.cols),
        }
    }

    fn into_result(self) -> (f64, SupportMask) {
        let rows = self.rows.into_iter().map(|i| i + 1).collect();
        let cols = self.cols.into_iter().map(|j| j + 1).collect();
        (self.value, SupportMask { rows, cols })
    }
}

fn check_sizes(t: &TMatrix, m: usize, n: usize) -> Result<()> {
    if m == 0 || n == 0 || m > t.rows || n > t.cols {
        return Err(Error::InvalidArgument(format!("support {m}x{n} does not fit in {}x{}", t.rows, t.cols)));
    }
    Ok(())
}

/// Exact scan maximum over all `m × n` supports.
///
/// For a fixed row set the best column set is the `n` largest column sums, so
/// only the `C(M, m)` row sets are walked; they are partitioned by first row
/// and scanned in parallel. The budget still applies to `C(M,m)·C(N,n)`.
pub fn scan_statistic_exhaustive(t: &TMatrix, m: usize, n: usize, budget: u128) -> Result<(f64, SupportMask)> {
    check_sizes(t, m, n)?;
    let needed = support_count(t.rows, t.cols, m, n);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let best = (0..=t.rows - m)
        .into_par_iter()
        .filter_map(|first| {
            let mut combo: Vec<usize> = (first..first + m).collect();
            let mut best: Option<Candidate> = None;
            let mut col_sums = vec![0.0; t.cols];
            loop {
                for (j, slot) in col_sums.iter_mut().enumerate() {
                    *slot = combo.iter().map(|&i| t.get(i, j)).sum();
                }
                let cols = top_indices(&col_sums, n);
                let value = t.support_value(&combo, &cols);
                let cand = Candidate { value, rows: combo.clone(), cols };
                if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                    best = Some(cand);
                }
                if !next_combination(&mut combo, t.rows) || combo[0] != first {
                    break;
                }
            }
            best
        })
        .reduce_with(|a, b| if b.better_than(&a) { b } else { a })
        .expect("at least one support");
    Ok(best.into_result())
}

/// Alternating maximization with random restarts.
///
/// Each restart draws a uniform n-subset of columns from its own stream
/// `(seed, restart)`, then alternates top-m rows / top-n columns until the
/// support is a fixpoint or `max_iters` is reached.
pub fn scan_statistic_heuristic(t: &TMatrix, m: usize, n: usize, config: &TestConfig, seed: u64) -> Result<(f64, SupportMask)> {
    check_sizes(t, m, n)?;
    let best = (0..config.restarts.max(1) as u64)
        .into_par_iter()
        .map(|restart| {
            let mut rng = streams::stream(seed, streams::domain::SCAN_RESTART, restart);
            let mut cols: Vec<usize> = index::sample(&mut rng, t.cols, n).into_vec();
            cols.sort_unstable();
            let mut rows: Vec<usize> = Vec::new();
            let mut row_sums = vec![0.0; t.rows];
            let mut col_sums = vec![0.0; t.cols];
            for _ in 0..config.max_iters {
                for (i, slot) in row_sums.iter_mut().enumerate() {
                    *slot = cols.iter().map(|&j| t.get(i, j)).sum();
                }
                let new_rows = top_indices(&row_sums, m);
                for (j, slot) in col_sums.iter_mut().enumerate() {
                    *slot = new_rows.iter().map(|&i| t.get(i, j)).sum();
                }
                let new_cols = top_indices(&col_sums, n);
                let fixed = new_rows == rows && new_cols == cols;
                rows = new_rows;
                cols = new_cols;
                if fixed {
                    break;
                }
            }
            let value = t.support_value(&rows, &cols);
            Candidate { value, rows, cols }
        })
        .reduce_with(|a, b| if b.better_than(&a) { b } else { a })
        .expect("at least one restart");
    Ok(best.into_result())
}

/// Exact scan when `C(M,m)·C(N,n)` fits the budget, heuristic otherwise.
pub fn scan_statistic(t: &TMatrix, m: usize, n: usize, config: &TestConfig, seed: u64) -> Result<(f64, SupportMask)> {
    if support_count(t.rows, t.cols, m, n) <= config.exhaustive_budget {
        scan_statistic_exhaustive(t, m, n, config.exhaustive_budget)
    } else {
        scan_statistic_heuristic(t, m, n, config, seed)
    }
}

fn check_tensor(tensor: &ObservationTensor, config: &ProblemConfig) -> Result<()> {
    if tensor.rows != config.rows || tensor.cols != config.cols {
        return Err(Error::ShapeMismatch(format!(
            "tensor is {}x{}, config expects {}x{}",
            tensor.rows, tensor.cols, config.rows, config.cols
        )));
    }
    Ok(())
}

/// Results of the χ², scan and combined tests on one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSuite {
    pub chi2: TestReport,
    pub scan: TestReport,
    pub combined: TestReport,
}

impl TestSuite {
    pub fn reports(&self) -> [&TestReport; 3] {
        [&self.chi2, &self.scan, &self.combined]
    }
}

fn chi2_report(t: &TMatrix, weights: &WeightSolution, config: &ProblemConfig, test_config: &TestConfig, started: Instant) -> TestReport {
    let h = threshold_h(weights.a, config.active_rows, config.active_cols, config.p(), config.q(), test_config);
    TestReport::new(TestKind::Chi2, chi2_from_t(t), h, None, started)
}

fn scan_report(t: &TMatrix, config: &ProblemConfig, test_config: &TestConfig, started: Instant) -> Result<TestReport> {
    let (m, n) = (config.active_rows, config.active_cols);
    let k = match test_config.scan_threshold {
        ScanThreshold::Complexity => threshold_k(m, n, config.p(), config.q(), test_config.delta)?,
        ScanThreshold::SupportCount => threshold_k_count(config.rows, config.cols, m, n, test_config.delta)?,
    };
    let (value, support) = scan_statistic(t, m, n, test_config, config.seed)?;
    Ok(TestReport::new(TestKind::Scan, value, k, Some(support), started))
}

/// The combined statistic is `max(t^{χ²}/H, t^{scan}/K)` against threshold 1,
/// which rejects exactly when either test rejects.
fn combined_report(chi2: &TestReport, scan: &TestReport, started: Instant) -> TestReport {
    let statistic = (chi2.statistic / chi2.threshold).max(scan.statistic / scan.threshold);
    let mut report = TestReport::new(TestKind::Combined, statistic, 1.0, scan.support.clone(), started);
    report.reject = chi2.reject || scan.reject;
    report
}

pub fn run_chi2_test(tensor: &ObservationTensor, weights: &WeightSolution, config: &ProblemConfig, test_config: &TestConfig) -> Result<TestReport> {
    check_tensor(tensor, config)?;
    let started = Instant::now();
    let t = t_matrix(tensor, weights)?;
    Ok(chi2_report(&t, weights, config, test_config, started))
}

/// The heuristic path (large scenarios) draws its restarts from `config.seed`.
pub fn run_scan_test(tensor: &ObservationTensor, weights: &WeightSolution, config: &ProblemConfig, test_config: &TestConfig) -> Result<TestReport> {
    check_tensor(tensor, config)?;
    let started = Instant::now();
    let t = t_matrix(tensor, weights)?;
    scan_report(&t, config, test_config, started)
}

pub fn run_combined_test(tensor: &ObservationTensor, weights: &WeightSolution, config: &ProblemConfig, test_config: &TestConfig) -> Result<TestReport> {
    Ok(run_all_tests(tensor, weights, config, test_config)?.combined)
}

/// Runs all three tests on one shared t-matrix.
pub fn run_all_tests(tensor: &ObservationTensor, weights: &WeightSolution, config: &ProblemConfig, test_config: &TestConfig) -> Result<TestSuite> {
    check_tensor(tensor, config)?;
    test_config.validate()?;
    let started = Instant::now();
    let t = t_matrix(tensor, weights)?;
    run_tests_on_t(&t, weights, config, test_config, started)
}

pub fn run_tests_on_t(t: &TMatrix, weights: &WeightSolution, config: &ProblemConfig, test_config: &TestConfig, started: Instant) -> Result<TestSuite> {
    let chi2 = chi2_report(t, weights, config, test_config, started);
    let scan = scan_report(t, config, test_config, Instant::now())?;
    let combined = combined_report(&chi2, &scan, started);
    Ok(TestSuite { chi2, scan, combined })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::solve_extremal_exact;
    use crate::model::{generate_observations, Hypothesis};
    use crate::streams::{domain, stream};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn weights(r: f64) -> WeightSolution {
        solve_extremal_exact(1.0, 0.0, 0.1, r, &SigmaSchedule::new(0.0)).unwrap()
    }

    fn matrix(rows: usize, cols: usize, v: &[f64]) -> TMatrix {
        TMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    /// Brute-force scan over every (A, B) pair.
    fn brute_scan(t: &TMatrix, m: usize, n: usize) -> (f64, Vec<usize>, Vec<usize>) {
        let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
        let mut a: Vec<usize> = (0..m).collect();
        loop {
            let mut b: Vec<usize> = (0..n).collect();
            loop {
                let v = t.support_value(&a, &b);
                if best.as_ref().is_none_or(|(bv, _, _)| v > *bv) {
                    best = Some((v, a.clone(), b.clone()));
                }
                if !next_combination(&mut b, t.cols) {
                    break;
                }
            }
            if !next_combination(&mut a, t.rows) {
                break;
            }
        }
        best.unwrap()
    }

    #[test]
    fn t_stat_closed_cases() {
        let w = weights(0.05);
        let band = w.half_width() + 2;
        let sigma = SigmaSchedule::new(0.0);
        let zero = vec![0.0; 2 * band + 1];
        let t = t_stat(&zero, band, &w, 0.1, &sigma).unwrap();
        assert!((t + w.sum_w()).abs() < 1e-12);
        let unit: Vec<f64> = (0..2 * band + 1).map(|_| 0.1).collect();
        assert!(t_stat(&unit, band, &w, 0.1, &sigma).unwrap().abs() < 1e-12);
        let short = vec![0.0; 3];
        assert!(matches!(t_stat(&short, 1, &w, 0.1, &sigma), Err(Error::BandMismatch { .. })));
        assert!(t_stat(&short, 2, &w, 0.1, &sigma).is_err());
    }

    #[test]
    fn t_stat_null_moments() {
        let w = weights(0.02);
        let band = w.half_width();
        let sigma = SigmaSchedule::new(0.0);
        let mut rng = stream(1, domain::NOISE_NULL, 0);
        let draws = 100_000;
        let vals: Vec<f64> = (0..draws)
            .map(|_| {
                let x: Vec<f64> = (0..2 * band + 1).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
                t_stat(&x, band, &w, 0.1, &sigma).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn chi2_zero_tensor_and_permutation() {
        let w = weights(0.1);
        let config = ProblemConfig { rows: 4, cols: 3, active_rows: 2, active_cols: 2, epsilon: 0.1, s: 0.0, tau: 1.0, r: 0.1, band: w.half_width(), seed: 0 };
        let zero = ObservationTensor { rows: 4, cols: 3, band: config.band, epsilon: 0.1, sigma: config.sigma(), data: vec![0.0; 12 * (2 * config.band + 1)] };
        let v = chi2_statistic(&zero, &w).unwrap();
        assert!((v + 12f64.sqrt() * w.sum_w()).abs() < 1e-12);

        let x = generate_observations(&config, Hypothesis::Null, &mut stream(2, domain::NOISE_NULL, 0)).unwrap();
        let t = t_matrix(&x, &w).unwrap();
        let row_perm = [2, 0, 3, 1];
        let col_perm = [1, 2, 0];
        let mut permuted = Vec::new();
        for &i in &row_perm {
            for &j in &col_perm {
                permuted.push(t.get(i, j));
            }
        }
        let tp = TMatrix::new(4, 3, permuted).unwrap();
        assert!((chi2_from_t(&t) - chi2_from_t(&tp)).abs() < 1e-12);
        let (v1, _) = scan_statistic_exhaustive(&t, 2, 2, 1000).unwrap();
        let (v2, s2) = scan_statistic_exhaustive(&tp, 2, 2, 1000).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
        // The permuted argmax maps back onto a maximizing support of the original.
        let rows: Vec<usize> = s2.rows.iter().map(|&i| row_perm[i - 1]).collect();
        let cols: Vec<usize> = s2.cols.iter().map(|&j| col_perm[j - 1]).collect();
        let mut rows = rows;
        let mut cols = cols;
        rows.sort_unstable();
        cols.sort_unstable();
        assert!((t.support_value(&rows, &cols) - v1).abs() < 1e-12);
    }

    #[test]
    fn h_threshold() {
        let cfg = TestConfig::default();
        // a·√(mnpq) = 10 with m = n = 4, p = q = 1/2 gives √(mnpq) = 2, a = 5.
        assert!((threshold_h(5.0, 4, 4, 0.5, 0.5, &cfg) - 5.0).abs() < 1e-12);
        assert!((threshold_h(1e-9, 4, 4, 0.5, 0.5, &cfg) - 1.6448536269514722).abs() < 1e-9);
        let mut prev = 0.0;
        for i in 0..100 {
            let h = threshold_h(i as f64 * 0.1, 3, 3, 0.2, 0.2, &cfg);
            assert!(h >= prev);
            prev = h;
        }
    }

    #[test]
    fn k_threshold() {
        let e = (-1.0f64).exp();
        assert!((threshold_k(1, 1, e, e, 0.0).unwrap() - 2.0).abs() < 1e-12);
        let k = threshold_k(10, 10, 0.1, 0.1, 0.05).unwrap();
        assert!((k * k - 2.1 * 20.0 * 10f64.ln()).abs() < 1e-9);
        assert!((k * k - 96.70).abs() < 0.01);
        assert!(threshold_k(10, 10, 0.1, 0.1, 0.1).unwrap() > k);
        assert!(threshold_k(1, 1, 1.0, 0.5, 0.05).is_err());
    }

    #[test]
    fn k_count_threshold() {
        // C(10,2)·C(6,3) = 45·20 = 900.
        let k = threshold_k_count(10, 6, 2, 3, 0.05).unwrap();
        assert!((k * k - 2.1 * 900f64.ln()).abs() < 1e-9);
        let (p, q) = (5.0 / 30.0, 5.0 / 30.0);
        assert!(threshold_k_count(30, 30, 5, 5, 0.05).unwrap() > threshold_k(5, 5, p, q, 0.05).unwrap());
        assert!(threshold_k_count(3, 3, 3, 3, 0.05).is_err());
        assert_eq!("count".parse::<ScanThreshold>().unwrap(), ScanThreshold::SupportCount);
        assert!("other".parse::<ScanThreshold>().is_err());
    }

    #[test]
    fn exhaustive_small_cases() {
        let t = matrix(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (v, s) = scan_statistic_exhaustive(&t, 1, 1, 100).unwrap();
        assert_eq!(v, 4.0);
        assert_eq!((s.rows, s.cols), (vec![2], vec![2]));
        let (v, _) = scan_statistic_exhaustive(&t, 2, 2, 100).unwrap();
        assert_eq!(v, 5.0);
        let eye = matrix(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let (v, s) = scan_statistic_exhaustive(&eye, 2, 2, 100).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!((s.rows, s.cols), (vec![1, 2], vec![1, 2]));
        assert!(matches!(scan_statistic_exhaustive(&eye, 2, 2, 8), Err(Error::BudgetExceeded { needed: 9, budget: 8 })));
    }

    #[test]
    fn planted_block_recovered() {
        let mut values = vec![0.0; 400];
        let rows = [3, 8, 15];
        let cols = [0, 11, 19];
        for &i in &rows {
            for &j in &cols {
                values[i * 20 + j] = 10.0;
            }
        }
        let t = matrix(20, 20, &values);
        for restarts in [1, 5, 50] {
            for seed in 0..20 {
                let cfg = TestConfig { restarts, ..TestConfig::default() };
                let (v, s) = scan_statistic_heuristic(&t, 3, 3, &cfg, seed).unwrap();
                assert_eq!(v, 30.0);
                assert_eq!(s.rows, vec![4, 9, 16]);
                assert_eq!(s.cols, vec![1, 12, 20]);
            }
        }
    }

    #[test]
    fn heuristic_matches_exhaustive_mostly() {
        let cfg = TestConfig::default();
        let mut matches = 0;
        for trial in 0..100 {
            let mut rng = stream(3, domain::SCAN_TRIAL, trial);
            let values: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
            let t = matrix(10, 10, &values);
            let (ex, _) = scan_statistic_exhaustive(&t, 3, 3, cfg.exhaustive_budget).unwrap();
            let (he, _) = scan_statistic_heuristic(&t, 3, 3, &cfg, trial).unwrap();
            assert!(he <= ex);
            if he == ex {
                matches += 1;
            }
        }
        assert!(matches >= 90, "{matches}");
    }

    #[test]
    fn zero_tensor_accepts_and_combined_is_or() {
        let w = weights(0.1);
        let config = ProblemConfig { rows: 6, cols: 6, active_rows: 2, active_cols: 2, epsilon: 0.1, s: 0.0, tau: 1.0, r: 0.1, band: w.half_width(), seed: 0 };
        let cfg = TestConfig::default();
        let zero = ObservationTensor { rows: 6, cols: 6, band: config.band, epsilon: 0.1, sigma: config.sigma(), data: vec![0.0; 36 * (2 * config.band + 1)] };
        let suite = run_all_tests(&zero, &w, &config, &cfg).unwrap();
        assert!(!suite.chi2.reject && !suite.scan.reject && !suite.combined.reject);

        let strong = solve_extremal_exact(1.0, 0.0, 0.1, 0.3, &config.sigma()).unwrap();
        let config = ProblemConfig { band: strong.half_width().max(w.half_width()), ..config };
        for trial in 0..100u64 {
            let mut rng = stream(4, domain::NOISE_NULL, trial);
            let x = generate_observations(&config, Hypothesis::Null, &mut rng).unwrap();
            // Mix in signal-like energy on some trials to exercise both branches.
            let mut x = x;
            if trial % 3 == 0 {
                for v in x.data.iter_mut().take(200) {
                    *v *= 3.0;
                }
            }
            let suite = run_all_tests(&x, &w, &config, &cfg).unwrap();
            assert_eq!(suite.combined.reject, suite.chi2.reject || suite.scan.reject);
            for r in suite.reports() {
                assert_eq!(r.reject, r.statistic > r.threshold);
            }
        }
    }

    #[test]
    fn csv_row_format() {
        let report = TestReport {
            test: TestKind::Scan,
            statistic: 1.5,
            threshold: 2.0,
            reject: false,
            support: Some(SupportMask { rows: vec![1, 3], cols: vec![2] }),
            millis: 7,
        };
        assert_eq!(report.to_csv_row(), "scan,1.5,2,accept,1;3,2,7");
        assert_eq!(REPORT_CSV_HEADER.split(',').count(), 7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn exhaustive_agrees_with_brute_force(
            values in proptest::collection::vec(-3.0f64..3.0, 30),
            m in 1usize..4, n in 1usize..4,
        ) {
            let t = matrix(5, 6, &values);
            let (v, s) = scan_statistic_exhaustive(&t, m, n, u128::MAX).unwrap();
            let (bv, _, _) = brute_scan(&t, m, n);
            prop_assert!((v - bv).abs() < 1e-12);
            let rows: Vec<usize> = s.rows.iter().map(|i| i - 1).collect();
            let cols: Vec<usize> = s.cols.iter().map(|j| j - 1).collect();
            prop_assert_eq!(t.support_value(&rows, &cols), v);
            let cfg = TestConfig { restarts: 3, ..TestConfig::default() };
            let (hv, _) = scan_statistic_heuristic(&t, m, n, &cfg, 1).unwrap();
            prop_assert!(hv <= v);
        }
    }
}
