//! Detection boundaries and finite-sample surrogates of the rate conditions.
//!
//! The boundary is the smaller of two radii: `r_chi` where `a²(r)·mnpq = 1`
//! and `r_scan` where `a²(r)·mn = 2(m log p⁻¹ + n log q⁻¹)`. Asymptotic
//! conditions ("→ 0", "→ ∞", "lim inf > 1") are replaced by explicit
//! thresholds collected in [`ConditionThresholds`]; every flag carries the raw
//! value it was decided on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extremal::{r_of_a, solve_extremal_exact, WeightSolution};
use crate::model::SigmaSchedule;
use crate::stats::threshold_k;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionThresholds {
    /// Upper bound, χ² branch: `a² mnpq ≥ chi_min`.
    pub chi_min: f64,
    /// Upper bound, scan branch: ratio `≥ 1 + delta`.
    pub delta: f64,
    /// Upper bound side condition: `K² · max w / √(mn) ≤ side_max`.
    pub side_max: f64,
    /// Lower bound: both `log log(1/p) / log(1/q)` ratios `≤ lb1_max`.
    pub lb1_max: f64,
    /// Lower bound: `m log p⁻¹ / (n log q⁻¹)` within `[1/lb2_window, lb2_window]`.
    pub lb2_window: f64,
    /// Lower bound: `(m log p⁻¹ + n log q⁻¹)/(mn) / ε^{−2/(2τ+2s+1)} ≤ size_max`.
    pub size_max: f64,
    /// Lower bound, χ² branch: `a² mnpq ≤ lobo1_max`.
    pub lobo1_max: f64,
    /// Lower bound, scan branch: ratio `≤ lobo2_max`.
    pub lobo2_max: f64,
}

impl Default for ConditionThresholds {
    fn default() -> Self {
        ConditionThresholds {
            chi_min: 25.0,
            delta: 0.05,
            side_max: 0.1,
            lb1_max: 0.2,
            lb2_window: 3.0,
            size_max: 0.1,
            lobo1_max: 0.04,
            lobo2_max: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub value: f64,
    pub pass: bool,
}

impl Flag {
    fn at_least(value: f64, min: f64) -> Self {
        Flag { value, pass: value >= min }
    }

    fn at_most(value: f64, max: f64) -> Self {
        Flag { value, pass: value <= max }
    }
}

pub type Flags = BTreeMap<String, Flag>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    DenseDominated,
    SparseDominated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub r_chi: f64,
    /// `None` when `p = q = 1`: the scan level is zero and the boundary falls back to `r_chi`.
    pub r_scan: Option<f64>,
    pub r_boundary: f64,
    pub regime: Regime,
    /// `1/√(mnpq)`.
    pub a_chi: f64,
    /// `√(2(m log p⁻¹ + n log q⁻¹)/(mn))`.
    pub a_scan: f64,
    pub p: f64,
    pub q: f64,
    /// Radius the flags were evaluated at.
    pub flags_radius: f64,
    pub flags: Flags,
}

/// `m log p⁻¹ + n log q⁻¹`.
pub fn log_complexity(m: usize, n: usize, p: f64, q: f64) -> f64 {
    m as f64 * (1.0 / p).ln() + n as f64 * (1.0 / q).ln()
}

fn fractions(rows: usize, cols: usize, m: usize, n: usize) -> Result<(f64, f64)> {
    if rows == 0 || cols == 0 || m == 0 || n == 0 || m > rows || n > cols {
        return Err(Error::InvalidArgument(format!("support {m}x{n} does not fit in {rows}x{cols}")));
    }
    Ok((m as f64 / rows as f64, n as f64 / cols as f64))
}

/// Detection levels `(a_chi, a_scan)` for a scenario.
pub fn boundary_levels(rows: usize, cols: usize, m: usize, n: usize) -> Result<(f64, f64)> {
    let (p, q) = fractions(rows, cols, m, n)?;
    let mn = (m * n) as f64;
    let a_chi = 1.0 / (mn * p * q).sqrt();
    let a_scan = (2.0 * log_complexity(m, n, p, q) / mn).sqrt();
    Ok((a_chi, a_scan))
}

/// Radii at which each branch hits its detection level. Flags are evaluated at `r_boundary`.
pub fn boundary_radii(tau: f64, s: f64, epsilon: f64, rows: usize, cols: usize, m: usize, n: usize) -> Result<BoundaryReport> {
    boundary_report(tau, s, epsilon, rows, cols, m, n, None, &ConditionThresholds::default())
}

/// Like [`boundary_radii`], with flags evaluated at `flags_radius` (default: the boundary).
#[allow(clippy::too_many_arguments)]
pub fn boundary_report(
    tau: f64,
    s: f64,
    epsilon: f64,
    rows: usize,
    cols: usize,
    m: usize,
    n: usize,
    flags_radius: Option<f64>,
    thresholds: &ConditionThresholds,
) -> Result<BoundaryReport> {
    let (p, q) = fractions(rows, cols, m, n)?;
    let (a_chi, a_scan) = boundary_levels(rows, cols, m, n)?;
    let r_chi = r_of_a(tau, s, epsilon, a_chi)?;
    let r_scan = if a_scan > 0.0 { Some(r_of_a(tau, s, epsilon, a_scan)?) } else { None };
    let (r_boundary, regime) = match r_scan {
        Some(r_scan) if r_scan < r_chi => (r_scan, Regime::SparseDominated),
        _ => (r_chi, Regime::DenseDominated),
    };
    let radius = flags_radius.unwrap_or(r_boundary);
    let weights = solve_extremal_exact(tau, s, epsilon, radius, &SigmaSchedule::new(s))?;
    let mut flags = check_upper_conditions(weights.a, rows, cols, m, n, &weights, thresholds);
    flags.extend(check_lower_conditions(rows, cols, m, n, weights.a, epsilon, tau, s, thresholds));
    Ok(BoundaryReport { r_chi, r_scan, r_boundary, regime, a_chi, a_scan, p, q, flags_radius: radius, flags })
}

/// Finite-sample surrogates for the upper-bound conditions: `chi`, `scan`, `scan_side`.
pub fn check_upper_conditions(
    a: f64,
    rows: usize,
    cols: usize,
    m: usize,
    n: usize,
    weights: &WeightSolution,
    thresholds: &ConditionThresholds,
) -> Flags {
    let mut flags = Flags::new();
    let (p, q) = (m as f64 / rows as f64, n as f64 / cols as f64);
    let mn = (m * n) as f64;
    flags.insert("chi".into(), Flag::at_least(a * a * mn * p * q, thresholds.chi_min));

    let complexity = log_complexity(m, n, p, q);
    let ratio = a * a * mn / (2.0 * complexity);
    flags.insert("scan".into(), Flag::at_least(ratio, 1.0 + thresholds.delta));

    let side = match threshold_k(m, n, p, q, thresholds.delta) {
        Ok(k) => k * k * weights.max_weight() / mn.sqrt(),
        Err(_) => f64::NAN,
    };
    flags.insert("scan_side".into(), Flag { value: side, pass: side <= thresholds.side_max });
    flags
}

/// Finite-sample surrogates for the lower-bound hypotheses:
/// `lb1`, `lb2`, `cond_a_m_n`, `lobo1`, `lobo2`.
#[allow(clippy::too_many_arguments)]
pub fn check_lower_conditions(
    rows: usize,
    cols: usize,
    m: usize,
    n: usize,
    a: f64,
    epsilon: f64,
    tau: f64,
    s: f64,
    thresholds: &ConditionThresholds,
) -> Flags {
    let mut flags = Flags::new();
    let (p, q) = (m as f64 / rows as f64, n as f64 / cols as f64);
    let (lp, lq) = ((1.0 / p).ln(), (1.0 / q).ln());
    let mn = (m * n) as f64;

    let lb1 = (lp.ln() / lq).max(lq.ln() / lp);
    flags.insert("lb1".into(), Flag { value: lb1, pass: lb1 <= thresholds.lb1_max });

    let lb2 = (m as f64 * lp) / (n as f64 * lq);
    let window = thresholds.lb2_window;
    flags.insert("lb2".into(), Flag { value: lb2, pass: lb2 >= 1.0 / window && lb2 <= window });

    let size = (m as f64 * lp + n as f64 * lq) / mn / epsilon.powf(-2.0 / (2.0 * tau + 2.0 * s + 1.0));
    flags.insert("cond_a_m_n".into(), Flag::at_most(size, thresholds.size_max));

    flags.insert("lobo1".into(), Flag::at_most(a * a * mn * p * q, thresholds.lobo1_max));

    let ratio = a * a * mn / (2.0 * (m as f64 * lp + n as f64 * lq));
    let lobo2 = if ratio.is_nan() { f64::INFINITY } else { ratio };
    flags.insert("lobo2".into(), Flag::at_most(lobo2, thresholds.lobo2_max));
    flags
}

impl BoundaryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("boundary report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::a_of_r;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_dimensional_fallback() {
        let report = boundary_radii(1.0, 0.0, 1e-2, 1, 1, 1, 1).unwrap();
        assert_eq!(report.r_scan, None);
        assert_eq!(report.regime, Regime::DenseDominated);
        assert_eq!(report.r_boundary, report.r_chi);
        assert_eq!(report.a_chi, 1.0);
        assert!((a_of_r(1.0, 0.0, 1e-2, report.r_chi).unwrap() - 1.0).abs() < 1e-6);
        let finer = boundary_radii(1.0, 0.0, 1e-3, 1, 1, 1, 1).unwrap();
        let slope = (report.r_chi.ln() - finer.r_chi.ln()) / (1e-2f64.ln() - 1e-3f64.ln());
        assert!((slope / 0.8 - 1.0).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn transposition_symmetry() {
        let a = boundary_radii(1.0, 0.5, 1e-2, 40, 25, 4, 3).unwrap();
        let b = boundary_radii(1.0, 0.5, 1e-2, 25, 40, 3, 4).unwrap();
        assert!((a.r_chi - b.r_chi).abs() <= 1e-10 * a.r_chi);
        assert!((a.r_scan.unwrap() - b.r_scan.unwrap()).abs() <= 1e-10 * a.r_chi);
    }

    #[test]
    fn large_sparse_scenario_levels() {
        let (a_chi, a_scan) = boundary_levels(10_000, 10_000, 100, 100).unwrap();
        assert!((a_chi - 1.0).abs() < 1e-12);
        let expect = (2.0 * 2.0 * 100.0 * 100f64.ln() / 1e4).sqrt();
        assert!((a_scan - expect).abs() < 1e-12);
        assert!((a_scan - 0.4292).abs() < 1e-4);
        let report = boundary_radii(1.0, 0.0, 1e-2, 10_000, 10_000, 100, 100).unwrap();
        assert_eq!(report.regime, Regime::SparseDominated);
        assert!(report.r_boundary == report.r_scan.unwrap() && report.r_scan.unwrap() < report.r_chi);
    }

    #[test]
    fn upper_flags() {
        let w = solve_extremal_exact(1.0, 0.0, 1.0, 0.01, &SigmaSchedule::new(0.0)).unwrap();
        let th = ConditionThresholds::default();
        let flags = check_upper_conditions(0.0, 100, 100, 10, 10, &w, &th);
        assert!(!flags["chi"].pass && !flags["scan"].pass);

        // a² mnpq = 100 with m = n = 10, p = q = 0.1 gives a = 10.
        let flags = check_upper_conditions(10.0, 100, 100, 10, 10, &w, &th);
        assert!((flags["chi"].value - 100.0).abs() < 1e-9);
        assert!(flags["chi"].pass);

        let (_, a_scan) = boundary_levels(100, 100, 10, 10).unwrap();
        let flags = check_upper_conditions(a_scan, 100, 100, 10, 10, &w, &th);
        assert!((flags["scan"].value - 1.0).abs() < 1e-12);
        assert!(!flags["scan"].pass);
    }

    #[test]
    fn lower_flags() {
        let th = ConditionThresholds::default();
        let flags = check_lower_conditions(50, 50, 5, 5, 0.3, 1e-2, 1.0, 0.0, &th);
        assert!((flags["lb2"].value - 1.0).abs() < 1e-12 && flags["lb2"].pass);
        let flags = check_lower_conditions(50, 50, 5, 5, 0.0, 1e-2, 1.0, 0.0, &th);
        assert!(flags["lobo1"].pass && flags["lobo2"].pass);
    }

    #[test]
    fn lower_flag_vector_half_boundary() {
        let (rows, m, eps) = (1000usize, 10usize, 1e-2);
        let report = boundary_radii(1.0, 0.0, eps, rows, rows, m, m).unwrap();
        let a_half = a_of_r(1.0, 0.0, eps, 0.5 * report.r_boundary).unwrap();
        let flags = check_lower_conditions(rows, rows, m, m, a_half, eps, 1.0, 0.0, &ConditionThresholds::default());

        // Independent arithmetic of the five surrogates.
        let p: f64 = 0.01;
        let lp = (1.0 / p).ln();
        let lb1 = lp.ln() / lp;
        assert!((flags["lb1"].value - lb1).abs() < 1e-12);
        assert!(!flags["lb1"].pass, "log log 100 / log 100 = {lb1} > 0.2");
        assert!((flags["lb2"].value - 1.0).abs() < 1e-12 && flags["lb2"].pass);
        let size = 2.0 * 10.0 * lp / 100.0 / eps.powf(-2.0 / 3.0);
        assert!((flags["cond_a_m_n"].value - size).abs() < 1e-12);
        assert_eq!(flags["cond_a_m_n"].pass, size <= 0.1);
        let lobo1 = a_half * a_half * 100.0 * p * p;
        assert!((flags["lobo1"].value - lobo1).abs() < 1e-12 && flags["lobo1"].pass);
        let lobo2 = a_half * a_half * 100.0 / (2.0 * 20.0 * lp);
        assert!((flags["lobo2"].value - lobo2).abs() < 1e-12 && flags["lobo2"].pass);
        // Scan regime at this scale; half the boundary radius divides a² by 2^5 roughly.
        assert_eq!(report.regime, Regime::SparseDominated);
        assert!(lobo2 < 0.1);
    }

    #[test]
    fn boundary_decreases_with_noise() {
        for (rows, cols, m, n) in [(100, 100, 5, 5), (200, 50, 40, 10)] {
            let mut prev: Option<BoundaryReport> = None;
            for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
                let report = boundary_radii(1.0, 0.0, eps, rows, cols, m, n).unwrap();
                if let Some(p) = prev {
                    assert!(report.r_chi < p.r_chi && report.r_scan.unwrap() < p.r_scan.unwrap());
                }
                assert_eq!(report.r_boundary, report.r_chi.min(report.r_scan.unwrap()));
                prev = Some(report);
            }
        }
    }

    #[test]
    fn condition_duality() {
        let th = ConditionThresholds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 10 {
            // (lb1) needs log(1/p) large: log log(1/p) / log(1/p) <= 0.2 once p < 3e-6.
            let rows = 10f64.powf(rng.random_range(7.0..9.0)) as usize;
            let cols = rows;
            let m = rng.random_range(2..=20usize);
            let n = m;
            let tau = [0.5, 1.0][rng.random_range(0..2)];
            let s = [0.0, 0.5][rng.random_range(0..2)];
            let eps = 10f64.powf(rng.random_range(-3.0..-1.5));
            let lower = check_lower_conditions(rows, cols, m, n, 0.0, eps, tau, s, &th);
            if !(lower["lb1"].pass && lower["lb2"].pass) {
                continue;
            }
            let report = boundary_radii(tau, s, eps, rows, cols, m, n).unwrap();
            let (upper_key, lower_key) = match report.regime {
                Regime::DenseDominated => ("chi", "lobo1"),
                Regime::SparseDominated => ("scan", "lobo2"),
            };
            for (mult, expect_upper) in [(2.0, true), (0.3, false)] {
                let w = solve_extremal_exact(tau, s, eps, mult * report.r_boundary, &SigmaSchedule::new(s)).unwrap();
                let up = check_upper_conditions(w.a, rows, cols, m, n, &w, &th);
                let lo = check_lower_conditions(rows, cols, m, n, w.a, eps, tau, s, &th);
                assert_eq!(up[upper_key].pass, expect_upper, "{upper_key} at {mult}: {:?}", up[upper_key]);
                assert_eq!(lo[lower_key].pass, !expect_upper, "{lower_key} at {mult}: {:?}", lo[lower_key]);
            }
            checked += 1;
        }
    }

    #[test]
    fn json_field_names() {
        let report = boundary_radii(1.0, 0.0, 1e-2, 100, 100, 5, 5).unwrap();
        let value: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        for key in ["r_chi", "r_scan", "r_boundary", "regime", "flags"] {
            assert!(value.get(key).is_some(), "{key}");
        }
        assert!(value["flags"]["lobo1"].get("value").is_some());
        assert!(value["flags"]["chi"].get("pass").is_some());
        assert_eq!(value["regime"], "sparse-dominated");
    }
}
