//! Exact simulation of the fragmentation process.
//!
//! A run walks the fragmentation tree with an explicit work stack: every piece
//! of size `>= 1` counts as an internal node (one fragmentation event) and
//! pushes its `b` children; pieces below 1 count as external nodes. Pieces of
//! size exactly 1 fragment — the `>= 1` convention is what the deterministic
//! identities (Fibonacci counts for the golden-ratio law) validate.
//!
//! Randomness is derived per node from `(master seed, replicate, path)`, so a
//! node sees the same split vector regardless of the starting size `x`; runs
//! at growing `x` are a monotone coupling.

use crate::error::FragError;
use crate::law::SplitLaw;
use crate::moments::MomentAccumulator;
use crate::rng::{child_state, replicate_state, SplitMix64};
use crate::Result;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

/// Default cap on node visits per run; the tail of `N(x)` decays polynomially
/// with any exponent, so hitting this signals a broken law rather than bad luck.
pub const DEFAULT_WORK_CAP: u64 = 1_000_000_000;

/// Outcome of a single realisation of the process at size `x`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FragmentationRun {
    pub x: f64,
    /// `N(x)`: pieces of size >= 1 (fragmentation events).
    pub n_internal: u64,
    /// External fragments (final pieces of size < 1).
    pub n_external: u64,
    pub max_depth: u32,
    pub seed: u64,
}

/// One exact run; `seed` is the replicate-level state (see [`ensemble`]).
pub fn run_once(law: &SplitLaw, x: f64, seed: u64) -> Result<FragmentationRun> {
    run_once_capped(law, x, seed, DEFAULT_WORK_CAP)
}

pub fn run_once_capped(law: &SplitLaw, x: f64, seed: u64, cap: u64) -> Result<FragmentationRun> {
    if x < 1.0 {
        return Ok(FragmentationRun {
            x,
            n_internal: 0,
            n_external: 0,
            max_depth: 0,
            seed,
        });
    }
    let b = law.parts();
    let mut stack: Vec<(f64, u64, u32)> = vec![(x, seed, 0)];
    let mut n_internal = 0u64;
    let mut n_external = 0u64;
    let mut max_depth = 0u32;
    let mut split = Vec::with_capacity(b);
    while let Some((size, state, depth)) = stack.pop() {
        n_internal += 1;
        if n_internal > cap {
            return Err(FragError::WorkCapExceeded { cap, x });
        }
        max_depth = max_depth.max(depth);
        let mut rng = SplitMix64::new(state);
        law.sample_into(&mut rng, &mut split);
        for (j, &v) in split.iter().enumerate() {
            let child = size * v;
            if child >= 1.0 {
                stack.push((child, child_state(state, j), depth + 1));
            } else {
                n_external += 1;
            }
        }
    }
    Ok(FragmentationRun {
        x,
        n_internal,
        n_external,
        max_depth,
        seed,
    })
}

/// Exact count for a deterministic law by memoised recursion on the exponent
/// tuple of the attained sizes `x * prod w_j^{c_j}`.
pub fn run_deterministic(law: &SplitLaw, x: f64) -> Result<FragmentationRun> {
    run_deterministic_capped(law, x, 50_000_000)
}

pub fn run_deterministic_capped(law: &SplitLaw, x: f64, memo_cap: usize) -> Result<FragmentationRun> {
    let weights = law
        .fixed_weights()
        .ok_or_else(|| FragError::Config("run_deterministic requires a deterministic law".into()))?;
    if x < 1.0 {
        return Ok(FragmentationRun {
            x,
            n_internal: 0,
            n_external: 0,
            max_depth: 0,
            seed: 0,
        });
    }
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut memo: HashMap<Vec<u16>, (u64, u64, u32)> = HashMap::new();
    let origin = vec![0u16; weights.len()];
    let (n_internal, n_external, max_depth) =
        det_node(x.ln(), &log_w, origin, &mut memo, memo_cap)?;
    Ok(FragmentationRun {
        x,
        n_internal,
        n_external,
        max_depth,
        seed: 0,
    })
}

fn det_node(
    log_x: f64,
    log_w: &[f64],
    key: Vec<u16>,
    memo: &mut HashMap<Vec<u16>, (u64, u64, u32)>,
    memo_cap: usize,
) -> Result<(u64, u64, u32)> {
    if let Some(&hit) = memo.get(&key) {
        return Ok(hit);
    }
    if memo.len() >= memo_cap {
        return Err(FragError::MemoCapExceeded(memo_cap));
    }
    // Size of this node is exp(log_x + sum c_j log w_j); compare in log space
    // with a tiny slack so exact lattice points land on the fragmenting side.
    let mut n_int = 1u64;
    let mut n_ext = 0u64;
    let mut depth = 0u32;
    for j in 0..log_w.len() {
        let mut child_key = key.clone();
        child_key[j] += 1;
        let child_log = log_x
            + child_key
                .iter()
                .zip(log_w.iter())
                .map(|(&c, &lw)| c as f64 * lw)
                .sum::<f64>();
        if child_log >= -1e-12 {
            let (ci, ce, cd) = det_node(log_x, log_w, child_key, memo, memo_cap)?;
            n_int += ci;
            n_ext += ce;
            depth = depth.max(cd + 1);
        } else {
            n_ext += 1;
        }
    }
    memo.insert(key, (n_int, n_ext, depth));
    Ok((n_int, n_ext, depth))
}

/// Streaming statistics over independent replicates at a fixed `x`.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationEnsemble {
    pub x: f64,
    pub n: u64,
    pub master_seed: u64,
    pub law_hash: String,
    pub acc: MomentAccumulator,
    /// Raw `N(x)` values (present when `keep_raw`, capped at [`RAW_CAP`]).
    pub raw: Option<Vec<f64>>,
    pub max_depth: u32,
}

/// Raw-value reservoir cap; past it only streaming moments are kept.
pub const RAW_CAP: usize = 1_000_000;

/// Chunk width for the fixed parallel reduction tree. Accumulators are merged
/// in chunk order, so results are independent of the worker count.
const CHUNK: u64 = 4096;

impl SimulationEnsemble {
    pub fn mean(&self) -> f64 {
        self.acc.mean()
    }

    pub fn variance(&self) -> Option<f64> {
        self.acc.variance()
    }

    pub fn stderr(&self) -> Option<f64> {
        self.acc.stderr()
    }

    /// CSV row matching `ensemble_csv_header`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.x,
            self.n,
            self.acc.mean(),
            self.acc.variance().unwrap_or(f64::NAN),
            self.acc.central3(),
            self.acc.central4(),
            self.acc.stderr().unwrap_or(f64::NAN),
            self.master_seed,
            self.law_hash,
        )
    }
}

pub fn ensemble_csv_header() -> &'static str {
    "x,n,mean,var,m3,m4,stderr,master_seed,law_hash"
}

/// Run `n` independent replicates at size `x`.
///
/// Replicate `i` draws from the stream seeded by `(master_seed, i)`. Chunks
/// run in parallel and merge in a fixed order, so the output is bit-identical
/// for a given `(master_seed, n)` regardless of the worker count.
pub fn ensemble(
    law: &SplitLaw,
    x: f64,
    n: u64,
    master_seed: u64,
    keep_raw: bool,
) -> Result<SimulationEnsemble> {
    if n == 0 {
        return Err(FragError::Config("ensemble needs n >= 1".into()));
    }
    let n_chunks = n.div_ceil(CHUNK);
    let chunk_results: Result<Vec<(MomentAccumulator, Vec<f64>, u32)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n);
            let mut acc = MomentAccumulator::new();
            let mut raw = Vec::new();
            let mut depth = 0u32;
            for i in lo..hi {
                let run = run_once(law, x, replicate_state(master_seed, i))?;
                acc.push(run.n_internal as f64);
                depth = depth.max(run.max_depth);
                if keep_raw && (i as usize) < RAW_CAP {
                    raw.push(run.n_internal as f64);
                }
            }
            Ok((acc, raw, depth))
        })
        .collect();
    let chunk_results = chunk_results?;
    let mut acc = MomentAccumulator::new();
    let mut raw = keep_raw.then(Vec::new);
    let mut max_depth = 0;
    for (a, r, d) in &chunk_results {
        acc = MomentAccumulator::merge(&acc, a);
        max_depth = max_depth.max(*d);
        if let Some(raw) = raw.as_mut() {
            raw.extend_from_slice(r);
        }
    }
    Ok(SimulationEnsemble {
        x,
        n,
        master_seed,
        law_hash: law.config_hash(),
        acc,
        raw,
        max_depth,
    })
}

/// Ensembles at `x_k = x0 e^{2 pi k / tau}`, `k = 0..=k_max`: geometric spacing
/// that freezes the phase of the `x^{i tau}` oscillation.
pub fn phase_locked_samples(
    law: &SplitLaw,
    x0: f64,
    tau: f64,
    k_max: u32,
    n: u64,
    master_seed: u64,
    keep_raw: bool,
) -> Result<Vec<SimulationEnsemble>> {
    if tau <= 0.0 {
        return Err(FragError::Config("phase locking needs tau > 0".into()));
    }
    let ratio = (2.0 * std::f64::consts::PI / tau).exp();
    let mut out = Vec::with_capacity(k_max as usize + 1);
    let mut x = x0;
    for k in 0..=k_max {
        out.push(ensemble(law, x, n, master_seed.wrapping_add(k as u64), keep_raw)?);
        x *= ratio;
    }
    Ok(out)
}

/// Raw values as a little-endian f64 binary blob (documented fixed-width format).
pub fn raw_to_bytes(raw: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() * 8);
    for v in raw {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::SplitLaw;

    #[test]
    fn below_one_is_empty() {
        let law = SplitLaw::binary_uniform();
        let run = run_once(&law, 0.5, 1).unwrap();
        assert_eq!(run.n_internal, 0);
        assert_eq!(run.n_external, 0);
    }

    #[test]
    fn external_node_identity() {
        // N-tilde = (b - 1) N + 1, exactly, for every run with x >= 1.
        let laws = [
            SplitLaw::binary_uniform(),
            SplitLaw::mary_uniform(3).unwrap(),
            SplitLaw::quad_split(2).unwrap(),
            SplitLaw::beta(2.0, 5.0).unwrap(),
            SplitLaw::deterministic(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap(),
        ];
        let mut rng = SplitMix64::new(3);
        for law in &laws {
            let b = law.parts() as u64;
            for i in 0..200 {
                let x = 1.0 + 50.0 * rng.next_f64();
                let run = run_once(law, x, i).unwrap();
                assert_eq!(
                    run.n_external,
                    (b - 1) * run.n_internal + 1,
                    "{} at x = {x}",
                    law.spec_string()
                );
            }
        }
    }

    #[test]
    fn monotone_coupling_in_x() {
        // Same master seed, increasing x: N(x) never decreases because a node
        // sees the same split vector at the same tree position.
        let laws = [
            SplitLaw::binary_uniform(),
            SplitLaw::mary_uniform(4).unwrap(),
        ];
        let mut rng = SplitMix64::new(11);
        for law in &laws {
            for rep in 0..50 {
                let x1 = 1.0 + 200.0 * rng.next_f64();
                let x2 = x1 * (1.0 + rng.next_f64());
                let n1 = run_once(law, x1, rep).unwrap().n_internal;
                let n2 = run_once(law, x2, rep).unwrap().n_internal;
                assert!(
                    n1 <= n2,
                    "{}: N({x1}) = {n1} > N({x2}) = {n2} under coupling",
                    law.spec_string()
                );
            }
        }
    }

    #[test]
    fn fibonacci_identity_golden_ratio() {
        // V = (1/tau, 1/tau^2): N(tau^n) = F_{n+3} - 1 under the >= 1 convention.
        let tau = (1.0 + 5.0f64.sqrt()) / 2.0;
        let law = SplitLaw::deterministic(vec![1.0 / tau, 1.0 / (tau * tau)]).unwrap();
        let mut fib = vec![1u64, 1];
        for i in 2..40 {
            let f = fib[i - 1] + fib[i - 2];
            fib.push(f);
        }
        for n in 0..=30u32 {
            let x = tau.powi(n as i32);
            let run = run_deterministic(&law, x).unwrap();
            let expected = fib[n as usize + 2] - 1; // F_1 = fib[0], so F_{n+3} = fib[n+2]
            assert_eq!(
                run.n_internal, expected,
                "N(tau^{n}) = {} but F_{{{}}} - 1 = {expected}",
                run.n_internal,
                n + 3
            );
        }
    }

    #[test]
    fn deterministic_dyadic_counts() {
        // V = (1/2, 1/2) under ">= 1 fragments": N(2^n) = 2^{n+1} - 1 (a full
        // binary tree down to the unit pieces).
        let law = SplitLaw::deterministic(vec![0.5, 0.5]).unwrap();
        for n in 0..=10u32 {
            let run = run_deterministic(&law, 2.0f64.powi(n as i32)).unwrap();
            assert_eq!(run.n_internal, (1 << (n + 1)) - 1);
        }
    }

    #[test]
    fn deterministic_matches_run_once() {
        let law = SplitLaw::deterministic(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let mut rng = SplitMix64::new(21);
        for i in 0..100 {
            let x = 1.0 + rng.next_f64() * 9_999.0;
            let a = run_deterministic(&law, x).unwrap();
            let b = run_once(&law, x, i).unwrap();
            assert_eq!(a.n_internal, b.n_internal, "x = {x}");
            assert_eq!(a.n_external, b.n_external);
        }
    }

    #[test]
    fn deterministic_linear_growth() {
        // V = (1/3, 2/3): N(x)/x -> 1/alpha with alpha = ln 3 - (2/3) ln 2.
        let law = SplitLaw::deterministic(vec![1.0 / 3.0, 2.0 / 3.0]).unwrap();
        let alpha = 3.0f64.ln() - 2.0 / 3.0 * 2.0f64.ln();
        let x = 1e6;
        let run = run_deterministic(&law, x).unwrap();
        let ratio = run.n_internal as f64 / x;
        assert!(
            (ratio - 1.0 / alpha).abs() / (1.0 / alpha) < 0.02,
            "N(x)/x = {ratio} vs 1/alpha = {}",
            1.0 / alpha
        );
    }

    #[test]
    fn ensemble_mean_matches_binary_exact() {
        let law = SplitLaw::binary_uniform();
        let x = 100.0;
        let ens = ensemble(&law, x, 20_000, 42, false).unwrap();
        let exact = 2.0 * x - 1.0;
        let dev = (ens.mean() - exact).abs();
        assert!(
            dev <= 3.0 * ens.stderr().unwrap(),
            "mean {} vs {exact} (3 se = {})",
            ens.mean(),
            3.0 * ens.stderr().unwrap()
        );
    }

    #[test]
    fn ensemble_reproducible_and_chunk_stable() {
        let law = SplitLaw::mary_uniform(3).unwrap();
        let a = ensemble(&law, 50.0, 10_000, 7, true).unwrap();
        let b = ensemble(&law, 50.0, 10_000, 7, true).unwrap();
        assert_eq!(a.raw, b.raw);
        assert_eq!(a.mean().to_bits(), b.mean().to_bits());
        assert_eq!(
            a.variance().unwrap().to_bits(),
            b.variance().unwrap().to_bits()
        );
    }

    #[test]
    fn accumulator_matches_two_pass_on_raw() {
        let law = SplitLaw::binary_uniform();
        let ens = ensemble(&law, 30.0, 5_000, 5, true).unwrap();
        let raw = ens.raw.as_ref().unwrap();
        let mean: f64 = raw.iter().sum::<f64>() / raw.len() as f64;
        let var: f64 =
            raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (raw.len() as f64 - 1.0);
        assert!((ens.mean() - mean).abs() < 1e-9 * mean.abs());
        assert!((ens.variance().unwrap() - var).abs() < 1e-9 * var);
    }

    #[test]
    fn single_replicate_has_no_variance() {
        let law = SplitLaw::binary_uniform();
        let ens = ensemble(&law, 10.0, 1, 9, false).unwrap();
        assert!(ens.variance().is_none());
        assert!(ens.stderr().is_none());
    }

    #[test]
    fn phase_locked_ratios_exact() {
        let law = SplitLaw::binary_uniform();
        let tau = 1.3;
        let ens = phase_locked_samples(&law, 2.0, tau, 3, 10, 1, false).unwrap();
        let ratio = (2.0 * std::f64::consts::PI / tau).exp();
        for w in ens.windows(2) {
            assert!((w[1].x / w[0].x - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn work_cap_triggers() {
        let law = SplitLaw::binary_uniform();
        match run_once_capped(&law, 1e6, 1, 100) {
            Err(FragError::WorkCapExceeded { .. }) => {}
            other => panic!("expected work cap error, got {other:?}"),
        }
    }
}
