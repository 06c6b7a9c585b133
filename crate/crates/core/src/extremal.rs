//! The max–min weight program behind the χ² and scan statistics.
//!
//! With the substitution `v_k = θ_k² / (√2 σ_k²)` the program reduces to
//! minimizing `Σ v_k²` over the two linear constraints
//!
//! ```text
//! √2 (2π)^{2τ} Σ_k |k|^{2τ} σ_k² v_k = 1        (ellipsoid)
//! √2 Σ_k σ_k² v_k                     = r²       (energy)
//! ```
//!
//! whose solution has the form `v_k = v σ_k² (1 − (|k|/T)^{2τ})₊`. The optimal
//! weights are `w_k = v_k / (√2 V)` with `V² = Σ v_k²`, and the value is
//! `a = V / ε²`.
//!
//! [`solve_extremal_exact`] finds `(T, v)` so that both constraints hold on the
//! integer lattice; [`solve_extremal_asymptotic`] evaluates the small-`r`
//! closed form.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::SigmaSchedule;

/// Largest half-width of the frequency lattice the exact solver will build.
pub const MAX_BAND: usize = 20_000_000;
pub const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappas {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

pub fn kappas(tau: f64, s: f64) -> Kappas {
    let d1 = 4.0 * s + 1.0;
    let d2 = 4.0 * s + 2.0 * tau + 1.0;
    let d3 = 4.0 * s + 4.0 * tau + 1.0;
    Kappas {
        k1: 4.0 * SQRT_2 * tau / (d1 * d2),
        k2: 4.0 * SQRT_2 * tau * (2.0 * PI).powf(2.0 * tau) / (d2 * d3),
        k3: 1.0 / d1 - 2.0 / d2 + 1.0 / d3,
    }
}

/// `c(τ, s)` in `V ∼ c r^{2 + (4s+1)/(2τ)}`.
pub fn c_tau_s(tau: f64, s: f64) -> f64 {
    let k = kappas(tau, s);
    (2.0 * (k.k1 / k.k2).powf(-(4.0 * s + 1.0) / (2.0 * tau)) * k.k3 / (k.k1 * k.k1)).sqrt()
}

/// Exponent of `r` in `V(r)`: `2 + (4s+1)/(2τ)`.
pub fn value_exponent(tau: f64, s: f64) -> f64 {
    2.0 + (4.0 * s + 1.0) / (2.0 * tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Asymptotic,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Asymptotic => "asymptotic",
        }
    }
}

/// Optimal weights and least-favorable coefficients.
///
/// `w` and `theta2` hold `k = 0..=K` where `K` is the largest active
/// frequency; values at `-k` equal those at `k` and everything beyond `K` is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSolution {
    pub tau: f64,
    pub s: f64,
    pub epsilon: f64,
    pub r: f64,
    pub w: Vec<f64>,
    pub theta2: Vec<f64>,
    pub t_edge: f64,
    pub v: f64,
    pub v_eps: f64,
    pub a: f64,
    pub kappa: Kappas,
    pub method: Method,
}

impl WeightSolution {
    pub fn w_at(&self, k: i64) -> f64 {
        self.w.get(k.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    pub fn theta2_at(&self, k: i64) -> f64 {
        self.theta2.get(k.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    /// Largest `|k|` carrying a stored entry.
    pub fn half_width(&self) -> usize {
        self.w.len().saturating_sub(1)
    }

    /// Band needed to hold the solution: `ceil(T)`, and at least the stored width.
    pub fn band_needed(&self) -> usize {
        (self.t_edge.ceil() as usize).max(self.half_width()).max(1)
    }

    pub fn max_weight(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }

    pub fn sum_w(&self) -> f64 {
        symmetric_sum(self.w.iter().copied())
    }

    pub fn sum_w2(&self) -> f64 {
        symmetric_sum(self.w.iter().map(|w| w * w))
    }

    /// `Σ_k θ_k²`.
    pub fn energy(&self) -> f64 {
        symmetric_sum(self.theta2.iter().copied())
    }

    /// `(2π)^{2τ} Σ_k |k|^{2τ} θ_k²`.
    pub fn ellipsoid(&self) -> f64 {
        let scale = (2.0 * PI).powf(2.0 * self.tau);
        scale * symmetric_sum(self.theta2.iter().enumerate().map(|(k, t)| (k as f64).powf(2.0 * self.tau) * t))
    }

    /// Text table: `#`-prefixed header then `k w_k theta2_k` for `k = 0..=ceil(T)`.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# method {}", self.method.as_str());
        for (key, value) in [
            ("tau", self.tau),
            ("s", self.s),
            ("epsilon", self.epsilon),
            ("r", self.r),
            ("T", self.t_edge),
            ("v", self.v),
            ("V_eps", self.v_eps),
            ("a", self.a),
        ] {
            let _ = writeln!(out, "# {key} {value:e}");
        }
        let _ = writeln!(out, "k w_k theta2_k");
        for k in 0..=self.band_needed() {
            let k = k as i64;
            let _ = writeln!(out, "{k} {:e} {:e}", self.w_at(k), self.theta2_at(k));
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut header = std::collections::BTreeMap::new();
        let mut method = None;
        let mut w = Vec::new();
        let mut theta2 = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some("method"), Some("exact")) => method = Some(Method::Exact),
                    (Some("method"), Some("asymptotic")) => method = Some(Method::Asymptotic),
                    (Some(key), Some(value)) => {
                        let value: f64 = value.parse().map_err(|_| Error::Parse(format!("header `{key}`")))?;
                        header.insert(key.to_string(), value);
                    }
                    _ => return Err(Error::Parse(format!("bad header line {line:?}"))),
                }
                continue;
            }
            if line.starts_with("k ") {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("bad row {line:?}")));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s:?}")));
            let k: usize = cols[0].parse().map_err(|_| Error::Parse(format!("bad index {:?}", cols[0])))?;
            if k != w.len() {
                return Err(Error::Parse(format!("rows out of order at k={k}")));
            }
            w.push(parse(cols[1])?);
            theta2.push(parse(cols[2])?);
        }
        let get = |key: &str| header.get(key).copied().ok_or_else(|| Error::Parse(format!("missing header `{key}`")));
        while w.len() > 1 && w.last() == Some(&0.0) && theta2.last() == Some(&0.0) {
            w.pop();
            theta2.pop();
        }
        let (tau, s) = (get("tau")?, get("s")?);
        Ok(WeightSolution {
            tau,
            s,
            epsilon: get("epsilon")?,
            r: get("r")?,
            w,
            theta2,
            t_edge: get("T")?,
            v: get("v")?,
            v_eps: get("V_eps")?,
            a: get("a")?,
            kappa: kappas(tau, s),
            method: method.ok_or_else(|| Error::Parse("missing method".into()))?,
        })
    }
}

/// `x_0 + 2 Σ_{k≥1} x_k` for an even sequence stored on `k ≥ 0`.
fn symmetric_sum(values: impl Iterator<Item = f64>) -> f64 {
    values.enumerate().map(|(k, x)| if k == 0 { x } else { 2.0 * x }).sum()
}

fn check_inputs(tau: f64, s: f64, epsilon: f64, r: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau={tau} must be positive")));
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("s={s} must be nonnegative")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon={epsilon} must be positive")));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("r={r} must be positive")));
    }
    Ok(())
}

/// Lattice sums for a candidate band edge.
struct Lattice<'a> {
    tau: f64,
    sigma: &'a SigmaSchedule,
}

impl Lattice<'_> {
    fn profile(&self, k: usize, t_edge: f64) -> f64 {
        (1.0 - (k as f64 / t_edge).powf(2.0 * self.tau)).max(0.0)
    }

    /// `(Σ σ⁴ f_k, Σ |k|^{2τ} σ⁴ f_k)` over `|k| < T`, `f_k = (1 − (|k|/T)^{2τ})₊`.
    fn sums(&self, t_edge: f64) -> (f64, f64) {
        let top = active_top(t_edge);
        let (mut s0, mut s1) = (1.0, 0.0);
        for k in 1..=top {
            let f = self.profile(k, t_edge);
            let g = self.sigma.at(k as i64).powi(4) * f;
            s0 += 2.0 * g;
            s1 += 2.0 * (k as f64).powf(2.0 * self.tau) * g;
        }
        (s0, s1)
    }

    /// `(G0, G1, G2) = Σ_{|k|≤K} σ⁴ |k|^{2τ·j}` for `j = 0, 1, 2`.
    fn moments(&self, top: usize) -> (f64, f64, f64) {
        let (mut g0, mut g1, mut g2) = (1.0, 0.0, 0.0);
        for k in 1..=top {
            let g = self.sigma.at(k as i64).powi(4);
            let p = (k as f64).powf(2.0 * self.tau);
            g0 += 2.0 * g;
            g1 += 2.0 * g * p;
            g2 += 2.0 * g * p * p;
        }
        (g0, g1, g2)
    }
}

/// Largest integer strictly below `t_edge` (the top active frequency).
fn active_top(t_edge: f64) -> usize {
    let c = t_edge.ceil();
    if c <= 1.0 {
        0
    } else {
        c as usize - 1
    }
}

/// Solves the program on the integer lattice with both constraints active.
///
/// The ellipsoid-to-energy ratio `r² (2π)^{2τ} S1(T)/S0(T)` is strictly
/// increasing in `T` from 0 at `T = 1`, so the root is bracketed and bisected
/// until both ends fall into one lattice cell `[K, K+1]`. Inside a cell the
/// sums are affine in `y = T^{-2τ}` and the root is solved in closed form, then
/// polished with one Newton step on the directly evaluated sums.
pub fn solve_extremal_exact(tau: f64, s: f64, epsilon: f64, r: f64, sigma: &SigmaSchedule) -> Result<WeightSolution> {
    check_inputs(tau, s, epsilon, r)?;
    let lattice = Lattice { tau, sigma };
    let scale = (2.0 * PI).powf(2.0 * tau);
    let kap = kappas(tau, s);
    let ratio = |t: f64| {
        let (s0, s1) = lattice.sums(t);
        r * r * scale * s1 / s0
    };

    let guess = (kap.k1 / kap.k2).powf(1.0 / (2.0 * tau)) * r.powf(-1.0 / tau);
    let mut lo = 1.0_f64;
    let mut hi = (guess * 10.0).max(2.0);
    if hi > MAX_BAND as f64 {
        return Err(Error::BandTooLarge { needed: hi as usize, max: MAX_BAND });
    }
    let mut steps = 0;
    while ratio(hi) < 1.0 {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if hi > MAX_BAND as f64 {
            return Err(Error::BandTooLarge { needed: hi as usize, max: MAX_BAND });
        }
        if steps > MAX_BISECTION_STEPS {
            return Err(Error::RadiusExceedsClass(format!("no band edge balances r={r}")));
        }
    }

    let mut steps = 0;
    let top = loop {
        let top = hi.ceil() as usize - 1;
        if lo >= top as f64 {
            break top;
        }
        if steps >= MAX_BISECTION_STEPS {
            return Err(Error::NoConvergence(steps));
        }
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    };

    // Inside [top, top+1]: r²c (G1 − G2 y) = G0 − G1 y.
    let (g0, g1, g2) = lattice.moments(top);
    let rc = r * r * scale;
    let y_hi = (top as f64).powf(-2.0 * tau);
    let y_lo = ((top + 1) as f64).powf(-2.0 * tau);
    let mut y = ((rc * g1 - g0) / (rc * g2 - g1)).clamp(y_lo, y_hi);
    let residual = |y: f64| {
        let t = y.powf(-1.0 / (2.0 * tau));
        let (s0, s1) = lattice.sums(t);
        rc * s1 - s0
    };
    let slope = g1 - rc * g2;
    if slope != 0.0 {
        y = (y - residual(y) / slope).clamp(y_lo, y_hi);
    }
    let t_edge = y.powf(-1.0 / (2.0 * tau));
    if !t_edge.is_finite() {
        return Err(Error::NoConvergence(steps));
    }

    let (s0, _) = lattice.sums(t_edge);
    let v = r * r / (SQRT_2 * s0);
    let top = active_top(t_edge);
    let vk: Vec<f64> = (0..=top).map(|k| v * sigma.at(k as i64).powi(2) * lattice.profile(k, t_edge)).collect();
    Ok(assemble(tau, s, epsilon, r, &vk, sigma, t_edge, v, None, kap, Method::Exact))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    tau: f64,
    s: f64,
    epsilon: f64,
    r: f64,
    vk: &[f64],
    sigma: &SigmaSchedule,
    t_edge: f64,
    v: f64,
    v_eps_override: Option<f64>,
    kappa: Kappas,
    method: Method,
) -> WeightSolution {
    let lattice_norm = symmetric_sum(vk.iter().map(|x| x * x)).sqrt();
    let w: Vec<f64> = vk.iter().map(|x| x / (SQRT_2 * lattice_norm)).collect();
    let theta2: Vec<f64> = vk.iter().enumerate().map(|(k, x)| SQRT_2 * sigma.at(k as i64).powi(2) * x).collect();
    let v_eps = v_eps_override.unwrap_or(lattice_norm);
    WeightSolution {
        tau,
        s,
        epsilon,
        r,
        w,
        theta2,
        t_edge,
        v,
        v_eps,
        a: v_eps / (epsilon * epsilon),
        kappa,
        method,
    }
}

/// Closed-form small-`r` solution.
///
/// `T`, `v`, `V_ε` and `a` are the asymptotic expressions. The lattice
/// coefficients `θ_k²` follow from that `T` and `v`; the weights are
/// normalized on the lattice so that `Σ w_k² = 1/2` holds exactly and they can
/// be used as test weights.
pub fn solve_extremal_asymptotic(tau: f64, s: f64, epsilon: f64, r: f64) -> Result<WeightSolution> {
    check_inputs(tau, s, epsilon, r)?;
    let kap = kappas(tau, s);
    let t_edge = (kap.k1 / kap.k2).powf(1.0 / (2.0 * tau)) * r.powf(-1.0 / tau);
    let exponent = (4.0 * s + 1.0) / (2.0 * tau);
    let v = (kap.k2 / kap.k1).powf(exponent) * r.powf(2.0 + (4.0 * s + 1.0) / tau) / kap.k1;
    let v_eps = c_tau_s(tau, s) * r.powf(value_exponent(tau, s));
    let top = active_top(t_edge);
    if top > MAX_BAND {
        return Err(Error::BandTooLarge { needed: top, max: MAX_BAND });
    }
    let sigma = SigmaSchedule::new(s);
    let lattice = Lattice { tau, sigma: &sigma };
    let vk: Vec<f64> = (0..=top).map(|k| v * sigma.at(k as i64).powi(2) * lattice.profile(k, t_edge)).collect();
    Ok(assemble(tau, s, epsilon, r, &vk, &sigma, t_edge, v, Some(v_eps), kap, Method::Asymptotic))
}

/// Detection value `a(r)` from the exact lattice solution (`σ_k = |k|^s`).
pub fn a_of_r(tau: f64, s: f64, epsilon: f64, r: f64) -> Result<f64> {
    Ok(solve_extremal_exact(tau, s, epsilon, r, &SigmaSchedule::new(s))?.a)
}

/// Largest radius [`r_of_a`] will consider.
pub const MAX_RADIUS: f64 = 1e6;

/// Inverts [`a_of_r`] by bisection in `log r` to relative tolerance `1e-12`.
pub fn r_of_a(tau: f64, s: f64, epsilon: f64, a_target: f64) -> Result<f64> {
    check_inputs(tau, s, epsilon, 1.0)?;
    if !(a_target > 0.0 && a_target.is_finite()) {
        return Err(Error::InvalidArgument(format!("a_target={a_target} must be positive")));
    }
    let a = |r: f64| a_of_r(tau, s, epsilon, r);
    let guess = (a_target * epsilon * epsilon / c_tau_s(tau, s)).powf(1.0 / value_exponent(tau, s));
    let mut lo = (guess / 4.0).min(MAX_RADIUS);
    let mut hi = (guess * 4.0).min(MAX_RADIUS);
    while a(lo)? > a_target {
        lo /= 4.0;
    }
    while a(hi)? < a_target {
        if hi >= MAX_RADIUS {
            return Err(Error::Unreachable(a_target));
        }
        hi = (hi * 4.0).min(MAX_RADIUS);
    }
    let mut steps = 0;
    while hi / lo - 1.0 > 1e-12 {
        if steps >= MAX_BISECTION_STEPS {
            return Err(Error::NoConvergence(steps));
        }
        let mid = (lo * hi).sqrt();
        if a(mid)? < a_target {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    Ok((lo * hi).sqrt())
}
