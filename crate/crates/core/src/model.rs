//! Observation model, parameter classes and seeded data generation.
//!
//! Rows and columns are 1-based in every public structure that names them
//! (supports, reports); storage is 0-based. Frequencies `k` are signed and
//! stored at offset `k + band`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::extremal::WeightSolution;
use crate::streams;

/// Scenario parameters. Serialized as a flat `key = value` file with the keys
/// `M, N, m, n, epsilon, s, tau, r, band, seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub rows: usize,
    pub cols: usize,
    pub active_rows: usize,
    pub active_cols: usize,
    pub epsilon: f64,
    pub s: f64,
    pub tau: f64,
    pub r: f64,
    pub band: usize,
    pub seed: u64,
}

pub const CONFIG_KEYS: [&str; 10] = ["M", "N", "m", "n", "epsilon", "s", "tau", "r", "band", "seed"];

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("M={} and N={} must be >= 1", self.rows, self.cols));
        }
        if self.active_rows == 0 || self.active_rows > self.rows {
            return bad(format!("m={} must lie in 1..=M={}", self.active_rows, self.rows));
        }
        if self.active_cols == 0 || self.active_cols > self.cols {
            return bad(format!("n={} must lie in 1..=N={}", self.active_cols, self.cols));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon={} must be positive", self.epsilon));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return bad(format!("s={} must be nonnegative", self.s));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau={} must be positive", self.tau));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("r={} must be positive", self.r));
        }
        if self.band == 0 {
            return bad("band must be >= 1".to_string());
        }
        Ok(())
    }

    /// Active row fraction `m / M`.
    pub fn p(&self) -> f64 {
        self.active_rows as f64 / self.rows as f64
    }

    /// Active column fraction `n / N`.
    pub fn q(&self) -> f64 {
        self.active_cols as f64 / self.cols as f64
    }

    pub fn sigma(&self) -> SigmaSchedule {
        SigmaSchedule::new(self.s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_kv(text)?)
    }

    /// Reads the ten scenario keys from an already parsed key/value map.
    /// Other keys are ignored so experiment files can carry extra settings.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = map
                .get(key)
                .ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}`")))?;
            raw.parse::<T>()
                .map_err(|_| Error::InvalidConfig(format!("bad value for `{key}`: {raw:?}")))
        }
        let config = ProblemConfig {
            rows: get(map, "M")?,
            cols: get(map, "N")?,
            active_rows: get(map, "m")?,
            active_cols: get(map, "n")?,
            epsilon: get(map, "epsilon")?,
            s: get(map, "s")?,
            tau: get(map, "tau")?,
            r: get(map, "r")?,
            band: get(map, "band")?,
            seed: get(map, "seed")?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "M = {}", self.rows);
        let _ = writeln!(out, "N = {}", self.cols);
        let _ = writeln!(out, "m = {}", self.active_rows);
        let _ = writeln!(out, "n = {}", self.active_cols);
        let _ = writeln!(out, "epsilon = {:?}", self.epsilon);
        let _ = writeln!(out, "s = {:?}", self.s);
        let _ = writeln!(out, "tau = {:?}", self.tau);
        let _ = writeln!(out, "r = {:?}", self.r);
        let _ = writeln!(out, "band = {}", self.band);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}

/// Parses flat `key = value` text. `#` starts a comment; blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = match line.find('#') {
            Some(pos) => &line[..pos],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::InvalidConfig(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

/// Noise schedule `σ_k = |k|^s` for `|k| ≥ 1`, with `σ_0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSchedule {
    pub s: f64,
}

impl SigmaSchedule {
    pub fn new(s: f64) -> Self {
        SigmaSchedule { s }
    }

    pub fn at(&self, k: i64) -> f64 {
        sigma_at(self, k)
    }
}

pub fn sigma_at(schedule: &SigmaSchedule, k: i64) -> f64 {
    if k == 0 {
        1.0
    } else {
        (k.unsigned_abs() as f64).powf(schedule.s)
    }
}

/// Row set `A` and column set `B` of the active submatrix, 1-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SupportMask {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl SupportMask {
    pub fn new(mut rows: Vec<usize>, mut cols: Vec<usize>, total_rows: usize, total_cols: usize) -> Result<Self> {
        rows.sort_unstable();
        cols.sort_unstable();
        let check = |set: &[usize], total: usize, what: &str| -> Result<()> {
            if set.is_empty() {
                return Err(Error::InvalidArgument(format!("empty {what} set")));
            }
            if set.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument(format!("repeated {what} index")));
            }
            if set[0] == 0 || *set.last().unwrap() > total {
                return Err(Error::InvalidArgument(format!("{what} index outside 1..={total}")));
            }
            Ok(())
        };
        check(&rows, total_rows, "row")?;
        check(&cols, total_cols, "column")?;
        Ok(SupportMask { rows, cols })
    }

    /// `ξ_{ij}` for 1-based indices.
    pub fn xi(&self, i: usize, j: usize) -> bool {
        self.rows.binary_search(&i).is_ok() && self.cols.binary_search(&j).is_ok()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }
}

/// Draws `A` uniformly among the m-subsets of rows and, independently, `B`
/// uniformly among the n-subsets of columns.
pub fn sample_support<R: Rng + ?Sized>(config: &ProblemConfig, rng: &mut R) -> Result<SupportMask> {
    if config.active_rows == 0 || config.active_rows > config.rows || config.active_cols == 0 || config.active_cols > config.cols {
        return Err(Error::InvalidConfig(format!(
            "support size {}x{} does not fit in {}x{}",
            config.active_rows, config.active_cols, config.rows, config.cols
        )));
    }
    let mut rows: Vec<usize> = index::sample(rng, config.rows, config.active_rows).into_iter().map(|i| i + 1).collect();
    let mut cols: Vec<usize> = index::sample(rng, config.cols, config.active_cols).into_iter().map(|j| j + 1).collect();
    rows.sort_unstable();
    cols.sort_unstable();
    Ok(SupportMask { rows, cols })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignRule {
    Plus,
    Rademacher(u64),
}

/// Signal coefficients of the active cells, `|k| ≤ band`.
///
/// Cells are stored in support order: the cell for `(support.rows[a], support.cols[b])`
/// occupies `coeffs[(a * n + b) * width .. (a * n + b + 1) * width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBank {
    pub band: usize,
    pub support: SupportMask,
    pub coeffs: Vec<f64>,
}

impl SignalBank {
    pub fn width(&self) -> usize {
        2 * self.band + 1
    }

    pub fn cell(&self, a: usize, b: usize) -> &[f64] {
        let w = self.width();
        let pos = a * self.support.cols.len() + b;
        &self.coeffs[pos * w..(pos + 1) * w]
    }

    pub fn cell_count(&self) -> usize {
        self.support.rows.len() * self.support.cols.len()
    }

    pub fn energy(&self, a: usize, b: usize) -> f64 {
        self.cell(a, b).iter().map(|t| t * t).sum()
    }

    /// `(2π)^{2τ} Σ_k |k|^{2τ} θ_k²` for one cell; the `k = 0` term carries no weight.
    pub fn ellipsoid(&self, a: usize, b: usize, tau: f64) -> f64 {
        let band = self.band as i64;
        let scale = (2.0 * PI).powf(2.0 * tau);
        let sum: f64 = self
            .cell(a, b)
            .iter()
            .enumerate()
            .map(|(idx, t)| {
                let k = idx as i64 - band;
                if k == 0 {
                    0.0
                } else {
                    (k.unsigned_abs() as f64).powf(2.0 * tau) * t * t
                }
            })
            .sum();
        scale * sum
    }
}

/// Places `±θ*_k` on every active cell of `support`.
pub fn worst_case_signal(
    solution: &WeightSolution,
    config: &ProblemConfig,
    support: &SupportMask,
    sign_rule: SignRule,
) -> Result<SignalBank> {
    let needed = solution.half_width();
    if needed > config.band {
        return Err(Error::BandMismatch { needed, available: config.band });
    }
    let band = config.band;
    let width = 2 * band + 1;
    let cells = support.rows.len() * support.cols.len();
    let mut coeffs = vec![0.0; cells * width];
    let mut signs = match sign_rule {
        SignRule::Plus => None,
        SignRule::Rademacher(seed) => Some(streams::stream(seed, streams::domain::SIGNS, 0)),
    };
    for cell in coeffs.chunks_mut(width) {
        for (idx, slot) in cell.iter_mut().enumerate() {
            let k = idx as i64 - band as i64;
            let theta = solution.theta2_at(k).sqrt();
            let flip = signs.as_mut().is_some_and(|rng| rng.random::<bool>());
            let sign = if flip { -1.0 } else { 1.0 };
            *slot = sign * theta;
        }
    }
    Ok(SignalBank { band, support: support.clone(), coeffs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellViolation {
    pub row: usize,
    pub col: usize,
    pub ellipsoid: f64,
    pub energy: f64,
}

/// Outcome of checking a bank against the Sobolev class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCheck {
    pub ok: bool,
    /// Largest relative overshoot `ellipsoid − 1` over cells (negative when all cells are inside).
    pub worst_ellipsoid_excess: f64,
    /// Largest relative energy shortfall `(r² − Σθ²) / r²` over cells.
    pub worst_energy_deficit: f64,
    pub violations: Vec<CellViolation>,
}

/// Checks `(2π)^{2τ}Σ|k|^{2τ}θ² ≤ 1 + tol` and `Σθ² ≥ r²(1 − tol)` for every active cell.
pub fn validate_signal_class(bank: &SignalBank, tau: f64, r: f64, tol: f64) -> ClassCheck {
    let (m, n) = bank.support.shape();
    let r2 = r * r;
    let mut worst_ellipsoid_excess = f64::NEG_INFINITY;
    let mut worst_energy_deficit = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for a in 0..m {
        for b in 0..n {
            let ellipsoid = bank.ellipsoid(a, b, tau);
            let energy = bank.energy(a, b);
            let excess = ellipsoid - 1.0;
            let deficit = (r2 - energy) / r2;
            worst_ellipsoid_excess = worst_ellipsoid_excess.max(excess);
            worst_energy_deficit = worst_energy_deficit.max(deficit);
            if excess > tol || deficit > tol {
                violations.push(CellViolation { row: bank.support.rows[a], col: bank.support.cols[b], ellipsoid, energy });
            }
        }
    }
    ClassCheck { ok: violations.is_empty(), worst_ellipsoid_excess, worst_energy_deficit, violations }
}

#[derive(Debug, Clone, Copy)]
pub enum Hypothesis<'a> {
    Null,
    Alt { support: &'a SupportMask, signal: &'a SignalBank },
}

/// `x_{ij,k}` for `i < M`, `j < N`, `|k| ≤ band`, row-major in `(i, j, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTensor {
    pub rows: usize,
    pub cols: usize,
    pub band: usize,
    pub epsilon: f64,
    pub sigma: SigmaSchedule,
    pub data: Vec<f64>,
}

pub const FLAG_ALTERNATIVE: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorHeader {
    pub rows: u64,
    pub cols: u64,
    pub band: u64,
    pub flags: u64,
    pub seed: u64,
}

impl ObservationTensor {
    pub fn width(&self) -> usize {
        2 * self.band + 1
    }

    /// Frequency series of cell `(i, j)`, 0-based.
    pub fn series(&self, i: usize, j: usize) -> &[f64] {
        let w = self.width();
        let pos = i * self.cols + j;
        &self.data[pos * w..(pos + 1) * w]
    }

    pub fn get(&self, i: usize, j: usize, k: i64) -> f64 {
        self.series(i, j)[(k + self.band as i64) as usize]
    }

    /// Binary dump: five little-endian u64 (M, N, band, flags, seed) then the
    /// data as little-endian f64 in row-major `(i, j, k)` order.
    pub fn write_binary<W: Write>(&self, mut out: W, flags: u64, seed: u64) -> Result<()> {
        for word in [self.rows as u64, self.cols as u64, self.band as u64, flags, seed] {
            out.write_all(&word.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    /// Reads a dump produced by [`write_binary`](Self::write_binary). The file
    /// does not record `ε` or `s`; the caller supplies them.
    pub fn read_binary<R: Read>(mut input: R, epsilon: f64, sigma: SigmaSchedule) -> Result<(Self, TensorHeader)> {
        let mut word = [0u8; 8];
        let mut header = [0u64; 5];
        for slot in header.iter_mut() {
            input.read_exact(&mut word)?;
            *slot = u64::from_le_bytes(word);
        }
        let header = TensorHeader { rows: header[0], cols: header[1], band: header[2], flags: header[3], seed: header[4] };
        let len = (header.rows as usize)
            .checked_mul(header.cols as usize)
            .and_then(|x| x.checked_mul(2 * header.band as usize + 1))
            .ok_or_else(|| Error::Parse("tensor header overflows".into()))?;
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() != len * 8 {
            return Err(Error::ShapeMismatch(format!("expected {} data bytes, found {}", len * 8, bytes.len())));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = ObservationTensor {
            rows: header.rows as usize,
            cols: header.cols as usize,
            band: header.band as usize,
            epsilon,
            sigma,
            data,
        };
        Ok((tensor, header))
    }
}

/// Generates `x_{ij,k} = ξ_{ij} θ_{ij,k} + ε σ_k η_{ij,k}` over the configured band.
///
/// Noise is drawn cell by cell, `k` ascending, from the supplied stream.
pub fn generate_observations<R: Rng + ?Sized>(
    config: &ProblemConfig,
    hypothesis: Hypothesis<'_>,
    rng: &mut R,
) -> Result<ObservationTensor> {
    let band = config.band;
    let width = 2 * band + 1;
    let sigma = config.sigma();
    let scales: Vec<f64> = (0..width).map(|idx| config.epsilon * sigma.at(idx as i64 - band as i64)).collect();

    // Signal lookup: row and column positions inside the support, and the bank (possibly narrower band).
    type Lookup<'b> = (Vec<Option<usize>>, Vec<Option<usize>>, &'b SignalBank);
    let mut active: Option<Lookup<'_>> = None;
    if let Hypothesis::Alt { support, signal } = hypothesis {
        if signal.support != *support {
            return Err(Error::ShapeMismatch("signal bank support differs from the given support".into()));
        }
        if signal.band > band {
            return Err(Error::BandMismatch { needed: signal.band, available: band });
        }
        if support.rows.last().is_some_and(|&i| i > config.rows) || support.cols.last().is_some_and(|&j| j > config.cols) {
            return Err(Error::ShapeMismatch("support exceeds the matrix".into()));
        }
        if signal.coeffs.len() != signal.cell_count() * signal.width() {
            return Err(Error::ShapeMismatch("signal bank has inconsistent length".into()));
        }
        let mut row_pos = vec![None; config.rows];
        let mut col_pos = vec![None; config.cols];
        for (a, &i) in support.rows.iter().enumerate() {
            row_pos[i - 1] = Some(a);
        }
        for (b, &j) in support.cols.iter().enumerate() {
            col_pos[j - 1] = Some(b);
        }
        active = Some((row_pos, col_pos, signal));
    }

    let mut data = Vec::with_capacity(config.rows * config.cols * width);
    for i in 0..config.rows {
        for j in 0..config.cols {
            let cell = active.as_ref().and_then(|(row_pos, col_pos, bank)| match (row_pos[i], col_pos[j]) {
                (Some(a), Some(b)) => Some((bank.cell(a, b), bank.band)),
                _ => None,
            });
            for (idx, scale) in scales.iter().enumerate() {
                let eta: f64 = rng.sample(StandardNormal);
                let mut x = scale * eta;
                if let Some((theta, bank_band)) = cell {
                    let k = idx as i64 - band as i64;
                    if k.unsigned_abs() as usize <= bank_band {
                        x += theta[(k + bank_band as i64) as usize];
                    }
                }
                data.push(x);
            }
        }
    }
    Ok(ObservationTensor { rows: config.rows, cols: config.cols, band, epsilon: config.epsilon, sigma, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::solve_extremal_exact;
    use crate::streams::{stream, domain};
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn config(rows: usize, cols: usize, m: usize, n: usize) -> ProblemConfig {
        ProblemConfig { rows, cols, active_rows: m, active_cols: n, epsilon: 0.1, s: 0.0, tau: 1.0, r: 0.1, band: 4, seed: 11 }
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_at(&SigmaSchedule::new(0.0), 7), 1.0);
        assert_eq!(sigma_at(&SigmaSchedule::new(1.0), -3), 3.0);
        assert_eq!(sigma_at(&SigmaSchedule::new(0.5), 4), 2.0);
        assert_eq!(sigma_at(&SigmaSchedule::new(2.0), 0), 1.0);
    }

    #[test]
    fn sigma_symmetric() {
        for s in [0.0, 0.3, 1.0, 2.5] {
            let sch = SigmaSchedule::new(s);
            for k in 0..=10_000i64 {
                assert_eq!(sch.at(k), sch.at(-k));
                assert!(sch.at(k) > 0.0);
            }
        }
    }

    #[test]
    fn config_round_trip_and_errors() {
        let c = config(5, 6, 2, 3);
        let back = ProblemConfig::parse(&c.to_kv_string()).unwrap();
        assert_eq!(c, back);

        let text = "M=3\nN=3\nm=4\nn=1\nepsilon=1\ns=0\ntau=1\nr=0.1\nband=2\nseed=0\n";
        assert!(matches!(ProblemConfig::parse(text), Err(Error::InvalidConfig(_))));
        let text = "M=3\nN=3\nm=1\nn=1\nepsilon=1\ns=0\ntau=1\nr=0.1\nband=2\n";
        assert!(matches!(ProblemConfig::parse(text), Err(Error::InvalidConfig(_))));
        assert!(parse_kv("a = 1\na = 2").is_err());
        let kv = parse_kv("# comment\n  x = 3 # trailing\n\n").unwrap();
        assert_eq!(kv["x"], "3");
    }

    #[test]
    fn full_support_is_forced() {
        let c = config(4, 4, 4, 4);
        let mut rng = stream(1, domain::SUPPORT, 0);
        let s = sample_support(&c, &mut rng).unwrap();
        assert_eq!(s.rows, vec![1, 2, 3, 4]);
        assert_eq!(s.cols, vec![1, 2, 3, 4]);
    }

    #[test]
    fn support_cardinality() {
        let c = config(5, 7, 2, 3);
        let mut rng = stream(2, domain::SUPPORT, 0);
        for _ in 0..1000 {
            let s = sample_support(&c, &mut rng).unwrap();
            assert_eq!(s.rows.len(), 2);
            assert_eq!(s.cols.len(), 3);
            assert!(s.rows.windows(2).all(|w| w[0] < w[1]));
            assert!(s.rows.iter().all(|&i| (1..=5).contains(&i)));
        }
        let bad = ProblemConfig { active_rows: 6, ..c };
        assert!(sample_support(&bad, &mut rng).is_err());
    }

    #[test]
    fn support_uniform_two_rows() {
        let c = config(2, 1, 1, 1);
        let mut rng = stream(3, domain::SUPPORT, 0);
        let draws = 100_000;
        let ones = (0..draws).filter(|_| sample_support(&c, &mut rng).unwrap().rows[0] == 1).count();
        let freq = ones as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn worst_case_signal_signs_and_energy() {
        let c = ProblemConfig { band: 12, ..config(20, 20, 10, 10) };
        let sol = solve_extremal_exact(1.0, 0.0, 0.1, 0.05, &c.sigma()).unwrap();
        let support = SupportMask::new((1..=10).collect(), (1..=10).collect(), 20, 20).unwrap();
        let plus = worst_case_signal(&sol, &c, &support, SignRule::Plus).unwrap();
        let rad = worst_case_signal(&sol, &c, &support, SignRule::Rademacher(5)).unwrap();
        for a in 0..10 {
            for b in 0..10 {
                for (idx, &t) in plus.cell(a, b).iter().enumerate() {
                    let k = idx as i64 - 12;
                    assert_eq!(t, sol.theta2_at(k).sqrt());
                }
                assert!((plus.energy(a, b) - rad.energy(a, b)).abs() < 1e-15);
                assert!((plus.ellipsoid(a, b, 1.0) - rad.ellipsoid(a, b, 1.0)).abs() < 1e-14);
            }
        }
        let narrow = ProblemConfig { band: 1, ..c };
        assert!(matches!(worst_case_signal(&sol, &narrow, &support, SignRule::Plus), Err(Error::BandMismatch { .. })));
    }

    #[test]
    fn rademacher_mean_near_zero() {
        let c = ProblemConfig { band: 8, ..config(100, 100, 100, 100) };
        let sol = solve_extremal_exact(1.0, 0.0, 0.1, 0.1, &c.sigma()).unwrap();
        let support = SupportMask::new((1..=100).collect(), (1..=100).collect(), 100, 100).unwrap();
        let bank = worst_case_signal(&sol, &c, &support, SignRule::Rademacher(9)).unwrap();
        let theta1 = sol.theta2_at(1).sqrt();
        assert!(theta1 > 0.0);
        let mean: f64 = (0..bank.cell_count()).map(|pos| bank.coeffs[pos * bank.width() + 8 + 1]).sum::<f64>() / 1e4;
        assert!(mean.abs() <= 3.0 * theta1 / 100.0, "mean {mean}");
    }

    #[test]
    fn class_validation_cases() {
        let support = SupportMask::new(vec![1], vec![1], 1, 1).unwrap();
        let zero = SignalBank { band: 2, support: support.clone(), coeffs: vec![0.0; 5] };
        let check = validate_signal_class(&zero, 1.0, 0.1, 1e-8);
        assert!(!check.ok);
        assert_eq!(check.violations.len(), 1);

        let mut coeffs = vec![0.0; 5];
        coeffs[2] = 0.1;
        let dc = SignalBank { band: 2, support, coeffs };
        let check = validate_signal_class(&dc, 1.0, 0.1, 1e-8);
        assert!(check.ok, "{check:?}");

        let c = ProblemConfig { band: 40, ..config(3, 3, 2, 2) };
        let sol = solve_extremal_exact(1.0, 0.0, 0.1, 0.01, &c.sigma()).unwrap();
        let support = SupportMask::new(vec![1, 3], vec![2, 3], 3, 3).unwrap();
        let bank = worst_case_signal(&sol, &c, &support, SignRule::Rademacher(1)).unwrap();
        assert!(validate_signal_class(&bank, 1.0, 0.01, 0.05).ok);
        assert!(validate_signal_class(&bank, 1.0, 0.01, 1e-8).ok);
    }

    #[test]
    fn vanishing_noise_returns_signal() {
        let c = ProblemConfig { epsilon: 1e-12, band: 6, ..config(4, 5, 2, 2) };
        let sol = solve_extremal_exact(1.0, 0.5, 1.0, 0.1, &c.sigma()).unwrap();
        let support = SupportMask::new(vec![2, 4], vec![1, 5], 4, 5).unwrap();
        let bank = worst_case_signal(&sol, &c, &support, SignRule::Rademacher(2)).unwrap();
        let mut rng = stream(4, domain::NOISE_ALT, 0);
        let x = generate_observations(&c, Hypothesis::Alt { support: &support, signal: &bank }, &mut rng).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                for k in -6..=6i64 {
                    let expect = match (support.rows.iter().position(|&r| r == i + 1), support.cols.iter().position(|&c| c == j + 1)) {
                        (Some(a), Some(b)) => bank.cell(a, b)[(k + 6) as usize],
                        _ => 0.0,
                    };
                    assert!((x.get(i, j, k) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn null_moments_per_frequency() {
        let c = ProblemConfig { rows: 1000, cols: 1000, active_rows: 1, active_cols: 1, epsilon: 0.3, s: 1.0, tau: 1.0, r: 0.1, band: 2, seed: 0 };
        let mut rng = stream(5, domain::NOISE_NULL, 0);
        let x = generate_observations(&c, Hypothesis::Null, &mut rng).unwrap();
        for k in [-2i64, 0, 1, 2] {
            let sd = 0.3 * c.sigma().at(k);
            let vals: Vec<f64> = (0..1000).flat_map(|i| (0..1000).map(move |j| (i, j))).map(|(i, j)| x.get(i, j, k)).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 3.0 * sd / 1e3, "k={k} mean {mean}");
            assert!((var / (sd * sd) - 1.0).abs() < 0.02, "k={k} var {var}");
        }
    }

    #[test]
    fn null_standardized_passes_ks() {
        let c = ProblemConfig { rows: 100, cols: 100, active_rows: 1, active_cols: 1, epsilon: 0.7, s: 0.5, tau: 1.0, r: 0.1, band: 4, seed: 0 };
        let mut rng = stream(6, domain::NOISE_NULL, 0);
        let x = generate_observations(&c, Hypothesis::Null, &mut rng).unwrap();
        // 10^4 cells x 9 frequencies; take the first 10^5 standardized entries.
        let mut z: Vec<f64> = x
            .data
            .iter()
            .enumerate()
            .map(|(pos, v)| v / (0.7 * c.sigma().at((pos % 9) as i64 - 4)))
            .take(100_000)
            .collect();
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = z.len() as f64;
        let d = z
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = normal.cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic, large-sample form.
        assert!(d < 1.628 / n.sqrt(), "KS {d}");
    }

    #[test]
    fn null_has_no_signal_and_alt_shape_checks() {
        let c = config(3, 3, 1, 1);
        let support = SupportMask::new(vec![1], vec![1], 3, 3).unwrap();
        let other = SupportMask::new(vec![2], vec![1], 3, 3).unwrap();
        let bank = SignalBank { band: 4, support: support.clone(), coeffs: vec![1.0; 9] };
        let mut rng = stream(7, domain::NOISE_ALT, 0);
        assert!(matches!(
            generate_observations(&c, Hypothesis::Alt { support: &other, signal: &bank }, &mut rng),
            Err(Error::ShapeMismatch(_))
        ));
        let wide = SignalBank { band: 5, support: support.clone(), coeffs: vec![1.0; 11] };
        assert!(generate_observations(&c, Hypothesis::Alt { support: &support, signal: &wide }, &mut rng).is_err());
    }

    #[test]
    fn binary_dump_round_trip() {
        let c = config(3, 2, 1, 1);
        let mut rng = stream(8, domain::NOISE_NULL, 0);
        let x = generate_observations(&c, Hypothesis::Null, &mut rng).unwrap();
        let mut buf = Vec::new();
        x.write_binary(&mut buf, FLAG_ALTERNATIVE, 99).unwrap();
        assert_eq!(buf.len(), 40 + 3 * 2 * 9 * 8);
        assert_eq!(&buf[0..8], &3u64.to_le_bytes());
        assert_eq!(&buf[16..24], &4u64.to_le_bytes());
        assert_eq!(&buf[40..48], &x.data[0].to_le_bytes());
        let (back, header) = ObservationTensor::read_binary(&buf[..], c.epsilon, c.sigma()).unwrap();
        assert_eq!(back, x);
        assert_eq!(header, TensorHeader { rows: 3, cols: 2, band: 4, flags: 1, seed: 99 });
        assert!(ObservationTensor::read_binary(&buf[..buf.len() - 8], c.epsilon, c.sigma()).is_err());
    }

    proptest! {
        #[test]
        fn generation_is_deterministic(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5) {
            let c = ProblemConfig { band: 3, ..config(rows, cols, 1, 1) };
            let a = generate_observations(&c, Hypothesis::Null, &mut stream(seed, domain::NOISE_NULL, 1)).unwrap();
            let b = generate_observations(&c, Hypothesis::Null, &mut stream(seed, domain::NOISE_NULL, 1)).unwrap();
            prop_assert_eq!(a.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        }
    }
}
