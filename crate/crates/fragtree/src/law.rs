//! Split-vector distributions on the standard simplex.
//!
//! A [`SplitLaw`] fixes the number of parts `b >= 2` and the distribution of the
//! random vector `(V_1, ..., V_b)` with `0 <= V_j < 1` and `sum V_j = 1`. The
//! transforms `phi`, `phi'`, `psi` live in [`crate::transforms`].

use crate::error::FragError;
use crate::rng::SplitMix64;
use crate::Result;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Built-in split-vector families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `b = 2`, `(U, 1-U)` with `U` uniform on `(0, 1)`.
    BinaryUniform,
    /// `b = m`: spacings of `m - 1` independent uniform cut points.
    MaryUniform { m: u32 },
    /// `b = 2^d`: a d-dimensional box cut by one uniform point per axis.
    QuadSplit { d: u32 },
    /// `b = d + 1`: simplex split through an interior point; same law as `MaryUniform(d + 1)`.
    SimplexSplit { d: u32 },
    /// `b = 2`, `(V, 1-V)` with `V ~ Beta(a, a')`.
    Beta { a: f64, a_prime: f64 },
    /// Fixed weights, each in `(0, 1)`, summing to 1.
    Deterministic { weights: Vec<f64> },
    /// Fixed weights `R^{-e_j}`; lattice with base `R`.
    LatticeDeterministic { base: f64, exponents: Vec<u32> },
    /// Empirical rows loaded from a CSV file, one split vector per line.
    Empirical { path: String },
}

/// Declared lattice structure of a law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatticeFlag {
    /// Every `V_j` is a power of `1/base` almost surely.
    Lattice { base: f64 },
    NonLattice,
    Unknown,
}

/// A split-vector distribution plus its declared regularity metadata.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLaw {
    #[serde(flatten)]
    family: Family,
    b: usize,
    lattice: LatticeFlag,
    condition_a: bool,
    #[serde(skip)]
    empirical_rows: Vec<Vec<f64>>,
}

/// Tolerance on `|sum V_j - 1|` for sampled and configured vectors.
pub const SIMPLEX_TOL: f64 = 1e-12;

impl SplitLaw {
    pub fn binary_uniform() -> Self {
        SplitLaw {
            family: Family::BinaryUniform,
            b: 2,
            lattice: LatticeFlag::NonLattice,
            condition_a: true,
            empirical_rows: Vec::new(),
        }
    }

    pub fn mary_uniform(m: u32) -> Result<Self> {
        if m < 2 {
            return Err(FragError::Config(format!("mary requires m >= 2, got {m}")));
        }
        Ok(SplitLaw {
            family: Family::MaryUniform { m },
            b: m as usize,
            lattice: LatticeFlag::NonLattice,
            condition_a: true,
            empirical_rows: Vec::new(),
        })
    }

    pub fn quad_split(d: u32) -> Result<Self> {
        if d == 0 || d > 24 {
            return Err(FragError::Config(format!("quad requires 1 <= d <= 24, got {d}")));
        }
        Ok(SplitLaw {
            family: Family::QuadSplit { d },
            b: 1usize << d,
            lattice: LatticeFlag::NonLattice,
            condition_a: true,
            empirical_rows: Vec::new(),
        })
    }

    pub fn simplex_split(d: u32) -> Result<Self> {
        if d == 0 {
            return Err(FragError::Config("simplex requires d >= 1".into()));
        }
        Ok(SplitLaw {
            family: Family::SimplexSplit { d },
            b: d as usize + 1,
            lattice: LatticeFlag::NonLattice,
            condition_a: true,
            empirical_rows: Vec::new(),
        })
    }

    pub fn beta(a: f64, a_prime: f64) -> Result<Self> {
        if !(a > 0.0 && a_prime > 0.0) || !a.is_finite() || !a_prime.is_finite() {
            return Err(FragError::Config(format!(
                "beta requires a, a' > 0, got ({a}, {a_prime})"
            )));
        }
        Ok(SplitLaw {
            family: Family::Beta { a, a_prime },
            b: 2,
            lattice: LatticeFlag::NonLattice,
            condition_a: true,
            empirical_rows: Vec::new(),
        })
    }

    /// Deterministic weights. The lattice flag is detected from log-ratios.
    pub fn deterministic(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(FragError::Config("deterministic law needs b >= 2 weights".into()));
        }
        for &w in &weights {
            if !(w > 0.0 && w < 1.0) {
                return Err(FragError::Config(format!(
                    "deterministic weights must lie in (0, 1), got {w}"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FragError::Config(format!(
                "deterministic weights must sum to 1, got {sum}"
            )));
        }
        // Renormalise so downstream invariants hold to SIMPLEX_TOL.
        let weights: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let lattice = detect_lattice(&weights);
        let b = weights.len();
        Ok(SplitLaw {
            family: Family::Deterministic { weights },
            b,
            lattice,
            condition_a: false,
            empirical_rows: Vec::new(),
        })
    }

    pub fn lattice_deterministic(base: f64, exponents: Vec<u32>) -> Result<Self> {
        if base <= 1.0 || !base.is_finite() {
            return Err(FragError::Config(format!("lattice base must exceed 1, got {base}")));
        }
        if exponents.len() < 2 || exponents.iter().any(|&e| e == 0) {
            return Err(FragError::Config(
                "lattice law needs b >= 2 positive integer exponents".into(),
            ));
        }
        let weights: Vec<f64> = exponents.iter().map(|&e| base.powi(-(e as i32))).collect();
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FragError::Config(format!(
                "lattice weights R^-e must sum to 1, got {sum}"
            )));
        }
        let b = exponents.len();
        Ok(SplitLaw {
            family: Family::LatticeDeterministic { base, exponents },
            b,
            lattice: LatticeFlag::Lattice { base },
            condition_a: false,
            empirical_rows: Vec::new(),
        })
    }

    /// Load empirical split vectors from a CSV file (one row per vector).
    pub fn empirical_from_path(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| {
                FragError::Config(format!("{path}:{}: bad number: {e}", lineno + 1))
            })?;
            rows.push(row);
        }
        Self::empirical(path.to_string(), rows)
    }

    pub fn empirical(path: String, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(FragError::Config("empirical law needs at least one row".into()));
        }
        let b = rows[0].len();
        if b < 2 {
            return Err(FragError::Config("empirical rows need b >= 2 components".into()));
        }
        for row in &rows {
            if row.len() != b {
                return Err(FragError::Config("empirical rows have inconsistent widths".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| !(0.0..1.0).contains(&v)) {
                return Err(FragError::Config(format!("empirical row off the simplex: {row:?}")));
            }
        }
        Ok(SplitLaw {
            family: Family::Empirical { path },
            b,
            lattice: LatticeFlag::Unknown,
            condition_a: false,
            empirical_rows: rows,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Number of parts per fragmentation.
    pub fn parts(&self) -> usize {
        self.b
    }

    pub fn lattice_flag(&self) -> LatticeFlag {
        self.lattice
    }

    pub fn condition_a(&self) -> bool {
        self.condition_a
    }

    /// Override the declared regularity metadata.
    pub fn with_declared(mut self, lattice: LatticeFlag, condition_a: bool) -> Self {
        self.lattice = lattice;
        self.condition_a = condition_a;
        self
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(
            self.family,
            Family::Deterministic { .. } | Family::LatticeDeterministic { .. }
        )
    }

    /// Fixed weights, for the deterministic families.
    pub fn fixed_weights(&self) -> Option<Vec<f64>> {
        match &self.family {
            Family::Deterministic { weights } => Some(weights.clone()),
            Family::LatticeDeterministic { base, exponents } => {
                Some(exponents.iter().map(|&e| base.powi(-(e as i32))).collect())
            }
            _ => None,
        }
    }

    pub(crate) fn empirical_rows(&self) -> &[Vec<f64>] {
        &self.empirical_rows
    }

    /// Draw one split vector into `out` (`out.len() == self.parts()`).
    ///
    /// Components lie in `[0, 1)` and sum to 1 within [`SIMPLEX_TOL`].
    pub fn sample_into(&self, rng: &mut SplitMix64, out: &mut Vec<f64>) {
        out.clear();
        match &self.family {
            Family::BinaryUniform => {
                let u = rng.next_open01();
                out.push(u);
                out.push(1.0 - u);
            }
            Family::MaryUniform { m } => {
                sample_uniform_simplex(*m as usize, rng, out);
            }
            Family::SimplexSplit { d } => {
                sample_uniform_simplex(*d as usize + 1, rng, out);
            }
            Family::QuadSplit { d } => {
                let d = *d as usize;
                // Products over all sign patterns, built one axis at a time.
                out.push(1.0);
                for _ in 0..d {
                    let u = rng.next_open01();
                    let half = out.len();
                    for i in 0..half {
                        let base = out[i];
                        out[i] = base * u;
                        out.push(base * (1.0 - u));
                    }
                }
            }
            Family::Beta { a, a_prime } => {
                let dist = rand_distr::Beta::new(*a, *a_prime).expect("validated at construction");
                let mut v: f64 = rng.sample(dist);
                // Guard the open interval; Beta samplers can round to an endpoint.
                v = v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
                out.push(v);
                out.push(1.0 - v);
            }
            Family::Deterministic { weights } => out.extend_from_slice(weights),
            Family::LatticeDeterministic { base, exponents } => {
                out.extend(exponents.iter().map(|&e| base.powi(-(e as i32))));
            }
            Family::Empirical { .. } => {
                let row = &self.empirical_rows[(rng.next_u64() % self.empirical_rows.len() as u64) as usize];
                out.extend_from_slice(row);
            }
        }
    }

    /// Convenience allocating sampler.
    pub fn sample(&self, rng: &mut SplitMix64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.b);
        self.sample_into(rng, &mut out);
        out
    }

    /// Canonical law-spec string (`binary`, `mary:27`, `det:0.5,0.5`, ...).
    pub fn spec_string(&self) -> String {
        match &self.family {
            Family::BinaryUniform => "binary".into(),
            Family::MaryUniform { m } => format!("mary:{m}"),
            Family::QuadSplit { d } => format!("quad:{d}"),
            Family::SimplexSplit { d } => format!("simplex:{d}"),
            Family::Beta { a, a_prime } => format!("beta:{a},{a_prime}"),
            Family::Deterministic { weights } => {
                let ws: Vec<String> = weights.iter().map(|w| format!("{w}")).collect();
                format!("det:{}", ws.join(","))
            }
            Family::LatticeDeterministic { base, exponents } => {
                let es: Vec<String> = exponents.iter().map(|e| e.to_string()).collect();
                format!("lattice:{base}:{}", es.join(","))
            }
            Family::Empirical { path } => format!("empirical:{path}"),
        }
    }

    /// Parse the law-spec mini-grammar:
    ///
    /// ```text
    /// law      = "binary" | "mary:" int | "quad:" int | "simplex:" int
    ///          | "beta:" num "," num | "det:" num ("," num)+
    ///          | "lattice:" num ":" int ("," int)+ | "empirical:" path
    /// num      = float literal | fraction ("1/3")
    /// ```
    pub fn parse_spec(spec: &str) -> Result<Self> {
        let bad = |msg: String| FragError::Config(msg);
        let (head, rest) = match spec.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (spec, None),
        };
        match (head, rest) {
            ("binary", None) => Ok(Self::binary_uniform()),
            ("mary", Some(r)) => Self::mary_uniform(parse_int(r)?),
            ("quad", Some(r)) => Self::quad_split(parse_int(r)?),
            ("simplex", Some(r)) => Self::simplex_split(parse_int(r)?),
            ("beta", Some(r)) => {
                let (a, ap) = r
                    .split_once(',')
                    .ok_or_else(|| bad(format!("beta needs two parameters, got '{r}'")))?;
                Self::beta(parse_num(a)?, parse_num(ap)?)
            }
            ("det", Some(r)) => {
                let ws: Result<Vec<f64>> = r.split(',').map(parse_num).collect();
                Self::deterministic(ws?)
            }
            ("lattice", Some(r)) => {
                let (base, exps) = r
                    .split_once(':')
                    .ok_or_else(|| bad(format!("lattice needs base:exponents, got '{r}'")))?;
                let es: Result<Vec<u32>> = exps.split(',').map(parse_int).collect();
                Self::lattice_deterministic(parse_num(base)?, es?)
            }
            ("empirical", Some(path)) => Self::empirical_from_path(path),
            _ => Err(bad(format!("unrecognised law spec '{spec}'"))),
        }
    }

    /// SHA-256 hash of the canonical configuration, stamped into every output.
    pub fn config_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.spec_string().as_bytes());
        for row in &self.empirical_rows {
            for v in row {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut s = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }

    /// Rebuild derived state after deserialisation (reloads empirical rows).
    pub fn revalidate(self) -> Result<Self> {
        match &self.family {
            Family::Empirical { path } => Self::empirical_from_path(path),
            _ => Ok(self),
        }
    }
}

/// Spacings of `m - 1` uniform cut points, sampled as normalised exponentials.
fn sample_uniform_simplex(m: usize, rng: &mut SplitMix64, out: &mut Vec<f64>) {
    let mut total = 0.0;
    for _ in 0..m {
        let e = -rng.next_open01().ln();
        out.push(e);
        total += e;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
}

fn parse_int(s: &str) -> Result<u32> {
    s.trim()
        .parse::<u32>()
        .map_err(|e| FragError::Config(format!("bad integer '{s}': {e}")))
}

fn parse_num(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|e| FragError::Config(format!("bad fraction '{s}': {e}")))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|e| FragError::Config(format!("bad fraction '{s}': {e}")))?;
        if d == 0.0 {
            return Err(FragError::Config(format!("division by zero in '{s}'")));
        }
        return Ok(n / d);
    }
    s.parse()
        .map_err(|e| FragError::Config(format!("bad number '{s}': {e}")))
}

/// Decide whether fixed weights are lattice: all `-ln w_j` must be integer
/// multiples of a common `ln R`. Detection via a rational-multiple check with
/// tolerance 1e-10; declared, never inferred from samples.
fn detect_lattice(weights: &[f64]) -> LatticeFlag {
    let logs: Vec<f64> = weights.iter().map(|w| -w.ln()).collect();
    let min = logs.iter().cloned().fold(f64::INFINITY, f64::min);
    for k in 1..=64u32 {
        let candidate = min / k as f64;
        let ok = logs.iter().all(|&x| {
            let ratio = x / candidate;
            (ratio - ratio.round()).abs() <= 1e-10 * ratio.max(1.0)
        });
        if ok {
            return LatticeFlag::Lattice {
                base: candidate.exp(),
            };
        }
    }
    LatticeFlag::NonLattice
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_families() -> Vec<SplitLaw> {
        vec![
            SplitLaw::binary_uniform(),
            SplitLaw::mary_uniform(3).unwrap(),
            SplitLaw::mary_uniform(7).unwrap(),
            SplitLaw::quad_split(2).unwrap(),
            SplitLaw::quad_split(4).unwrap(),
            SplitLaw::simplex_split(3).unwrap(),
            SplitLaw::beta(2.0, 3.0).unwrap(),
            SplitLaw::beta(0.5, 0.5).unwrap(),
            SplitLaw::deterministic(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap(),
            SplitLaw::lattice_deterministic(2.0, vec![1, 2, 2]).unwrap(),
        ]
    }

    #[test]
    fn samples_stay_on_simplex() {
        let mut rng = SplitMix64::new(12345);
        for law in all_families() {
            let mut buf = Vec::new();
            for _ in 0..2000 {
                law.sample_into(&mut rng, &mut buf);
                assert_eq!(buf.len(), law.parts());
                let sum: f64 = buf.iter().sum();
                assert!(
                    (sum - 1.0).abs() <= SIMPLEX_TOL,
                    "{}: sum deviates by {}",
                    law.spec_string(),
                    (sum - 1.0).abs()
                );
                for &v in &buf {
                    assert!((0.0..1.0).contains(&v), "{}: component {v}", law.spec_string());
                }
            }
        }
    }

    #[test]
    fn binary_components_sum_exactly() {
        let law = SplitLaw::binary_uniform();
        let mut rng = SplitMix64::new(9);
        let mut buf = Vec::new();
        for _ in 0..100 {
            law.sample_into(&mut rng, &mut buf);
            assert_eq!(buf[0] + buf[1], 1.0);
        }
    }

    #[test]
    fn deterministic_always_returns_weights() {
        let law = SplitLaw::deterministic(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let mut rng = SplitMix64::new(5);
        for _ in 0..10 {
            let v = law.sample(&mut rng);
            assert_eq!(v, law.fixed_weights().unwrap());
        }
    }

    #[test]
    fn quad_split_structure() {
        // d = 2: (U1 U2, U1 (1-U2), (1-U1) U2, (1-U1)(1-U2)).
        let law = SplitLaw::quad_split(2).unwrap();
        let mut rng = SplitMix64::new(3);
        let v = law.sample(&mut rng);
        assert_eq!(v.len(), 4);
        // Factorisation check: v[0] v[3] == v[1] v[2].
        assert!((v[0] * v[3] - v[1] * v[2]).abs() < 1e-15);
    }

    #[test]
    fn mary_marginal_mean() {
        // Each spacing has mean 1/m.
        let law = SplitLaw::mary_uniform(5).unwrap();
        let mut rng = SplitMix64::new(77);
        let mut mean0 = 0.0;
        let n = 50_000;
        for _ in 0..n {
            mean0 += law.sample(&mut rng)[0];
        }
        mean0 /= n as f64;
        assert!((mean0 - 0.2).abs() < 0.005, "{mean0}");
    }

    #[test]
    fn lattice_detection() {
        match SplitLaw::deterministic(vec![0.5, 0.5]).unwrap().lattice_flag() {
            LatticeFlag::Lattice { base } => assert!((base - 2.0).abs() < 1e-9),
            other => panic!("expected lattice, got {other:?}"),
        }
        let tau = (1.0 + 5.0f64.sqrt()) / 2.0;
        let golden = SplitLaw::deterministic(vec![1.0 / tau, 1.0 / (tau * tau)]).unwrap();
        match golden.lattice_flag() {
            LatticeFlag::Lattice { base } => assert!((base - tau).abs() < 1e-9),
            other => panic!("expected golden-ratio lattice, got {other:?}"),
        }
        assert_eq!(
            SplitLaw::deterministic(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap().lattice_flag(),
            LatticeFlag::NonLattice
        );
    }

    #[test]
    fn spec_grammar_round_trip() {
        for law in all_families() {
            let reparsed = SplitLaw::parse_spec(&law.spec_string()).unwrap();
            assert_eq!(&reparsed, &law, "spec {}", law.spec_string());
        }
        assert!(SplitLaw::parse_spec("mary").is_err());
        assert!(SplitLaw::parse_spec("banana:7").is_err());
        assert!(SplitLaw::parse_spec("det:0.5").is_err());
        assert!(SplitLaw::parse_spec("det:0.7,0.7").is_err());
        assert!(SplitLaw::parse_spec("beta:-1,2").is_err());
    }

    #[test]
    fn fraction_parsing() {
        let law = SplitLaw::parse_spec("det:1/3,2/3").unwrap();
        let w = law.fixed_weights().unwrap();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn json_config_round_trip() {
        for law in all_families() {
            let json = serde_json::to_string(&law).unwrap();
            let back: SplitLaw = serde_json::from_str(&json).unwrap();
            let back = back.revalidate().unwrap();
            assert_eq!(back, law, "json {json}");
        }
    }

    #[test]
    fn config_hash_distinguishes_laws() {
        let h1 = SplitLaw::binary_uniform().config_hash();
        let h2 = SplitLaw::mary_uniform(3).unwrap().config_hash();
        assert_ne!(h1, h2);
        assert_eq!(h1, SplitLaw::binary_uniform().config_hash());
    }

    proptest! {
        #[test]
        fn prop_samples_on_simplex(seed in any::<u64>(), m in 2u32..12) {
            let law = SplitLaw::mary_uniform(m).unwrap();
            let mut rng = SplitMix64::new(seed);
            let v = law.sample(&mut rng);
            let sum: f64 = v.iter().sum();
            prop_assert!((sum - 1.0).abs() <= SIMPLEX_TOL);
            prop_assert!(v.iter().all(|&x| (0.0..1.0).contains(&x)));
        }

        #[test]
        fn prop_beta_on_simplex(seed in any::<u64>(), a in 0.2f64..20.0, ap in 0.2f64..20.0) {
            let law = SplitLaw::beta(a, ap).unwrap();
            let mut rng = SplitMix64::new(seed);
            let v = law.sample(&mut rng);
            prop_assert!((v[0] + v[1] - 1.0).abs() <= SIMPLEX_TOL);
            prop_assert!(v.iter().all(|&x| (0.0..1.0).contains(&x)));
        }
    }
}
