//! Lower-bound probes.
//!
//! The prior puts a uniformly drawn `m × n` support and independent
//! `±θ*_k` signs on every active coefficient. Its likelihood ratio against the
//! null is, per active cell, `Π_k exp(−u_k²/2) cosh(u_k z_k)` with
//! `u_k = θ*_k/(εσ_k)` and `z_k = x_k/(εσ_k)`, averaged over supports. The
//! Bayes test `1{L > 1}` lower-bounds the minimax total error.

use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extremal::WeightSolution;
use crate::model::{generate_observations, sample_support, Hypothesis, ObservationTensor, ProblemConfig, SignalBank, SigmaSchedule};
use crate::stats::{support_count, RiskEstimate};
use crate::streams::{self, domain};

pub const DEFAULT_SUPPORT_BUDGET: u128 = 100_000;

/// Prior specification with its enumerated supports (0-based indices).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    /// `u_k` for `k = 0..=K`; even in `k`.
    pub u: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub m: usize,
    pub n: usize,
    pub row_sets: Vec<Vec<usize>>,
    pub col_sets: Vec<Vec<usize>>,
}

fn combinations(total: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..size).collect();
    loop {
        out.push(combo.clone());
        let mut i = size;
        let mut advanced = false;
        while i > 0 {
            i -= 1;
            if combo[i] < total - size + i {
                combo[i] += 1;
                for j in i + 1..size {
                    combo[j] = combo[j - 1] + 1;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            return out;
        }
    }
}

impl MixtureSpec {
    pub fn from_u(u: Vec<f64>, rows: usize, cols: usize, m: usize, n: usize, budget: u128) -> Result<Self> {
        if m == 0 || n == 0 || m > rows || n > cols {
            return Err(Error::InvalidArgument(format!("support {m}x{n} does not fit in {rows}x{cols}")));
        }
        let needed = support_count(rows, cols, m, n);
        if needed > budget {
            return Err(Error::BudgetExceeded { needed, budget });
        }
        Ok(MixtureSpec { u, rows, cols, m, n, row_sets: combinations(rows, m), col_sets: combinations(cols, n) })
    }

    /// Builds `u_k = θ*_k/(εσ_k)` and checks `Σ_k u_k⁴ = 2a²`.
    pub fn from_solution(solution: &WeightSolution, sigma: &SigmaSchedule, rows: usize, cols: usize, m: usize, n: usize, budget: u128) -> Result<Self> {
        let u: Vec<f64> = solution
            .theta2
            .iter()
            .enumerate()
            .map(|(k, t2)| t2.sqrt() / (solution.epsilon * sigma.at(k as i64)))
            .collect();
        let spec = Self::from_u(u, rows, cols, m, n, budget)?;
        let lhs = spec.sum_u4();
        let rhs = 2.0 * solution.a * solution.a;
        if (lhs - rhs).abs() > 1e-10 * rhs {
            return Err(Error::InvalidArgument(format!("sum u^4 = {lhs} differs from 2a^2 = {rhs}")));
        }
        Ok(spec)
    }

    pub fn half_width(&self) -> usize {
        self.u.len().saturating_sub(1)
    }

    pub fn u_at(&self, k: i64) -> f64 {
        self.u.get(k.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    pub fn sum_u2(&self) -> f64 {
        self.u.iter().enumerate().map(|(k, u)| if k == 0 { u * u } else { 2.0 * u * u }).sum()
    }

    pub fn sum_u4(&self) -> f64 {
        self.u.iter().enumerate().map(|(k, u)| if k == 0 { u.powi(4) } else { 2.0 * u.powi(4) }).sum()
    }

    pub fn support_total(&self) -> usize {
        self.row_sets.len() * self.col_sets.len()
    }
}

/// `log cosh(x)` without overflow.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `F_{ij} = Σ_k [log cosh(u_k z_{ij,k}) − u_k²/2]`, row-major.
pub fn cell_log_factors(tensor: &ObservationTensor, spec: &MixtureSpec) -> Result<Vec<f64>> {
    if tensor.rows != spec.rows || tensor.cols != spec.cols {
        return Err(Error::ShapeMismatch(format!("tensor {}x{} vs prior {}x{}", tensor.rows, tensor.cols, spec.rows, spec.cols)));
    }
    let top = spec.half_width();
    if top > tensor.band {
        return Err(Error::BandMismatch { needed: top, available: tensor.band });
    }
    let offset = tensor.band as i64;
    let scales: Vec<f64> = (-(top as i64)..=top as i64).map(|k| tensor.epsilon * tensor.sigma.at(k)).collect();
    let mut out = Vec::with_capacity(tensor.rows * tensor.cols);
    for i in 0..tensor.rows {
        for j in 0..tensor.cols {
            let series = tensor.series(i, j);
            let mut total = 0.0;
            for (pos, k) in (-(top as i64)..=top as i64).enumerate() {
                let u = spec.u_at(k);
                let z = series[(k + offset) as usize] / scales[pos];
                total += log_cosh(u * z) - 0.5 * u * u;
            }
            out.push(total);
        }
    }
    Ok(out)
}

/// Log-sums of the cell factors over every enumerated support.
fn support_log_products(factors: &[f64], spec: &MixtureSpec) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.support_total());
    for rows in &spec.row_sets {
        let col_sums: Vec<f64> = (0..spec.cols).map(|j| rows.iter().map(|&i| factors[i * spec.cols + j]).sum()).collect();
        for cols in &spec.col_sets {
            out.push(cols.iter().map(|&j| col_sums[j]).sum());
        }
    }
    out
}

/// `log L = log( (1/#supports) Σ_supports exp(Σ_{A×B} F_{ij}) )`, stabilized by log-sum-exp.
pub fn mixture_log_likelihood(tensor: &ObservationTensor, spec: &MixtureSpec) -> Result<f64> {
    let factors = cell_log_factors(tensor, spec)?;
    let terms = support_log_products(&factors, spec);
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok(max + sum.ln() - (terms.len() as f64).ln())
}

/// Signal bank with `θ_{ij,k} = ±u_k ε σ_k` on the support, independent signs.
fn prior_signal(config: &ProblemConfig, spec: &MixtureSpec, support: &crate::model::SupportMask, sign_seed: u64) -> SignalBank {
    let band = config.band;
    let width = 2 * band + 1;
    let sigma = config.sigma();
    let mut rng = streams::stream(sign_seed, domain::SIGNS, 0);
    let cells = support.rows.len() * support.cols.len();
    let mut coeffs = Vec::with_capacity(cells * width);
    for _ in 0..cells {
        for idx in 0..width {
            let k = idx as i64 - band as i64;
            let theta = spec.u_at(k) * config.epsilon * sigma.at(k);
            coeffs.push(if rng.random::<bool>() { -theta } else { theta });
        }
    }
    SignalBank { band, support: support.clone(), coeffs }
}

fn check_probe_config(config: &ProblemConfig, spec: &MixtureSpec) -> Result<()> {
    config.validate()?;
    if config.rows != spec.rows || config.cols != spec.cols || config.active_rows != spec.m || config.active_cols != spec.n {
        return Err(Error::ShapeMismatch("probe config and prior disagree on sizes".into()));
    }
    if spec.half_width() > config.band {
        return Err(Error::BandMismatch { needed: spec.half_width(), available: config.band });
    }
    Ok(())
}

/// Monte Carlo risk of the likelihood-ratio test `1{log L > 0}`.
///
/// Type I under the null, type II under prior draws (uniform support,
/// Rademacher signs of `u_k ε σ_k`). Trial `t` uses streams addressed by
/// `(config.seed, ·, t)`, so the estimate does not depend on thread count.
pub fn bayes_risk_mc(config: &ProblemConfig, spec: &MixtureSpec, trials: usize) -> Result<RiskEstimate> {
    check_probe_config(config, spec)?;
    let outcomes: Vec<(bool, bool)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<(bool, bool)> {
            let mut rng = streams::stream(config.seed, domain::PROBE_NULL, trial);
            let null = generate_observations(config, Hypothesis::Null, &mut rng)?;
            let false_alarm = mixture_log_likelihood(&null, spec)? > 0.0;

            let mut rng = streams::stream(config.seed, domain::PROBE_ALT, trial);
            let support = sample_support(config, &mut rng)?;
            let signal = prior_signal(config, spec, &support, streams::derive(config.seed, domain::PROBE_ALT, trial));
            let alt = generate_observations(config, Hypothesis::Alt { support: &support, signal: &signal }, &mut rng)?;
            let miss = mixture_log_likelihood(&alt, spec)? <= 0.0;
            Ok((false_alarm, miss))
        })
        .collect::<Result<_>>()?;
    let false_alarms = outcomes.iter().filter(|o| o.0).count();
    let misses = outcomes.iter().filter(|o| o.1).count();
    Ok(RiskEstimate::from_counts(false_alarms, misses, trials))
}

/// Sample mean and standard error of `L` under the null.
pub fn null_likelihood_mean(config: &ProblemConfig, spec: &MixtureSpec, trials: usize) -> Result<(f64, f64)> {
    check_probe_config(config, spec)?;
    let values: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = streams::stream(config.seed, domain::PROBE_NULL, trial);
            let x = generate_observations(config, Hypothesis::Null, &mut rng)?;
            Ok(mixture_log_likelihood(&x, spec)?.exp())
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_se(&values))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

pub const RISK_CSV_HEADER: &str = "scenario-id,type1,type2,total,ci_radius,trials";

pub fn risk_csv_row(scenario_id: &str, risk: &RiskEstimate) -> String {
    format!("{scenario_id},{},{},{},{},{}", risk.type1, risk.type2, risk.total, risk.ci, risk.trials)
}

/// Empirical and exact moment generating function of a cell statistic under the null.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MgfEstimate {
    pub lambda: f64,
    pub draws: usize,
    pub empirical: f64,
    pub std_error: f64,
    /// `Π_k exp(−λw_k − ½ log(1 − 2λw_k))`.
    pub exact: f64,
    /// `|log(exact) − λ²/2|`.
    pub log_gap: f64,
    /// `3 λ³ max_k w_k`.
    pub gap_bound: f64,
    pub max_weight: f64,
}

/// `E₀ exp(λ t)` in closed form; fails when `2λw_k ≥ 1` for some `k`.
pub fn exact_mgf(weights: &WeightSolution, lambda: f64) -> Result<f64> {
    let mut log = 0.0;
    for (k, &w) in weights.w.iter().enumerate() {
        if 2.0 * lambda * w >= 1.0 {
            return Err(Error::InvalidArgument(format!("lambda*w_{k} = {} >= 1/2", lambda * w)));
        }
        let term = -lambda * w - 0.5 * (-2.0 * lambda * w).ln_1p();
        log += if k == 0 { term } else { 2.0 * term };
    }
    Ok(log.exp())
}

const MGF_BLOCK: usize = 10_000;

/// Monte Carlo mean of `exp(λ t)` with `t = Σ_k w_k(η_k² − 1)`, next to [`exact_mgf`].
pub fn empirical_mgf(weights: &WeightSolution, lambda: f64, draws: usize, seed: u64) -> Result<MgfEstimate> {
    let exact = exact_mgf(weights, lambda)?;
    let top = weights.half_width() as i64;
    let w: Vec<f64> = (-top..=top).map(|k| weights.w_at(k)).collect();
    let blocks = draws.div_ceil(MGF_BLOCK);
    let partial: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = streams::stream(seed, domain::MGF, block as u64);
            let count = MGF_BLOCK.min(draws - block * MGF_BLOCK);
            let (mut sum, mut sum2) = (0.0, 0.0);
            for _ in 0..count {
                let t: f64 = w
                    .iter()
                    .map(|wk| {
                        let eta: f64 = rng.sample(StandardNormal);
                        wk * (eta * eta - 1.0)
                    })
                    .sum();
                let e = (lambda * t).exp();
                sum += e;
                sum2 += e * e;
            }
            (sum, sum2)
        })
        .collect();
    let (sum, sum2) = partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = draws as f64;
    let empirical = sum / n;
    let var = (sum2 / n - empirical * empirical) * n / (n - 1.0).max(1.0);
    let max_weight = weights.max_weight();
    Ok(MgfEstimate {
        lambda,
        draws,
        empirical,
        std_error: (var.max(0.0) / n).sqrt(),
        exact,
        log_gap: (exact.ln() - 0.5 * lambda * lambda).abs(),
        gap_bound: 3.0 * lambda.powi(3) * max_weight,
        max_weight,
    })
}

/// One row of the dominance check: upper tails at `k`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TailComparison {
    pub k: usize,
    pub hypergeometric: f64,
    pub binomial: f64,
    /// `binomial − hypergeometric`.
    pub margin: f64,
    /// Decided in exact integer arithmetic.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DominanceReport {
    pub population: usize,
    pub draws: usize,
    pub q_tilde: f64,
    pub tails: Vec<TailComparison>,
    pub violations: usize,
    pub worst_margin: f64,
    /// `C(N−n, n) / C(N, n)`.
    pub ratio_lhs: f64,
    /// `(1 − q̃)^n`.
    pub ratio_rhs: f64,
    pub ratio_holds: bool,
}

fn big_binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= BigUint::from(n - i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

fn big_ratio(num: &BigUint, den: &BigUint) -> f64 {
    // Scale so both fit comfortably in f64 before dividing.
    let shift = den.bits().saturating_sub(60).min(num.bits().saturating_sub(60));
    let a = (num >> shift).to_f64().unwrap_or(f64::INFINITY);
    let b = (den >> shift).to_f64().unwrap_or(f64::INFINITY);
    a / b
}

/// Compares the upper tails of `HG(N, n, n)` and `Bin(n, q̃)`, `q̃ = 2n/(N−n)`, for every `k`.
///
/// Both tails are rationals with small denominators (`C(N,n)` and `(N−n)^n`),
/// so every comparison is made exactly on cross-multiplied integers.
pub fn hypergeom_binomial_dominance(population: usize, draws: usize) -> Result<DominanceReport> {
    let (big_n, n) = (population, draws);
    if n == 0 || big_n <= n {
        return Err(Error::InvalidArgument(format!("need 1 <= n < N (N={big_n}, n={n})")));
    }
    if big_n < 3 * n {
        return Err(Error::InvalidArgument(format!("q~ = 2n/(N-n) = {} exceeds 1", 2.0 * n as f64 / (big_n - n) as f64)));
    }
    let hg_den = big_binomial(big_n, n);
    let bin_den = BigUint::from(big_n - n).pow(n as u32);
    let hg_num: Vec<BigUint> = (0..=n).map(|k| big_binomial(n, k) * big_binomial(big_n - n, n - k)).collect();
    let bin_num: Vec<BigUint> = (0..=n)
        .map(|k| big_binomial(n, k) * BigUint::from(2 * n).pow(k as u32) * BigUint::from(big_n - 3 * n).pow((n - k) as u32))
        .collect();

    let mut tails = Vec::with_capacity(n + 1);
    let (mut hg_tail, mut bin_tail) = (BigUint::zero(), BigUint::zero());
    for k in (0..=n).rev() {
        hg_tail += &hg_num[k];
        bin_tail += &bin_num[k];
        let holds = &hg_tail * &bin_den <= &bin_tail * &hg_den;
        let hg = big_ratio(&hg_tail, &hg_den);
        let bin = big_ratio(&bin_tail, &bin_den);
        tails.push(TailComparison { k, hypergeometric: hg, binomial: bin, margin: bin - hg, holds });
    }
    tails.reverse();

    let ratio_num = big_binomial(big_n - n, n);
    let rhs_num = BigUint::from(big_n - 3 * n).pow(n as u32);
    let ratio_holds = &ratio_num * &bin_den >= &rhs_num * &hg_den;

    Ok(DominanceReport {
        population: big_n,
        draws: n,
        q_tilde: 2.0 * n as f64 / (big_n - n) as f64,
        violations: tails.iter().filter(|t| !t.holds).count(),
        worst_margin: tails.iter().map(|t| t.margin).fold(f64::INFINITY, f64::min),
        tails,
        ratio_lhs: big_ratio(&ratio_num, &hg_den),
        ratio_rhs: big_ratio(&rhs_num, &bin_den),
        ratio_holds,
    })
}

impl DominanceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,n,k,hypergeometric,binomial,margin,holds\n");
        for t in &self.tails {
            let _ = writeln!(out, "{},{},{},{},{},{},{}", self.population, self.draws, t.k, t.hypergeometric, t.binomial, t.margin, t.holds);
        }
        out
    }
}
