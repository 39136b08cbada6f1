//! `frag` — fragmentation-tree analysis from the command line.
//!
//! ```text
//! frag roots    --law mary:27                 # spectrum + phase report (JSON)
//! frag analyze  --law binary                  # moment constants, beta, gamma
//! frag simulate --law quad:9 --x 100,1000 --n 10000
//! frag verify   --law binary --budget quick   # end-to-end verification
//! ```
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure.

use clap::{Args, Parser, Subcommand};
use fragtree::error::FragError;
use fragtree::law::SplitLaw;
use fragtree::report::{AnalyzeReport, Provenance, RootsReport, VerifyReport, TOOL_VERSION};
use fragtree::spectral::{
    self, beta_critical, beta_normal, beta_rational, classify_phase, find_roots, mean_expansion,
    Phase,
};
use fragtree::stats::{self, CltScaling, TestRecord};
use fragtree::transforms::check_condition_b;
use fragtree::{fixedpoint, renewal, simulate};
use std::io::Write;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "frag", version, about = "Random fragmentation trees: spectra, constants, simulation, verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Law spec: binary | mary:<m> | quad:<d> | simplex:<d> | beta:<a>,<a'>
    /// | det:<w1>,...,<wb> | lattice:<R>:<e1>,...,<eb> | empirical:<path>
    #[arg(long)]
    law: String,
    /// Master seed (env: FRAG_SEED).
    #[arg(long, default_value_t = 20_260_809, env = "FRAG_SEED")]
    seed: u64,
    /// Output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root residual tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Worker threads (env: FRAG_THREADS; default: available parallelism).
    #[arg(long, env = "FRAG_THREADS")]
    threads: Option<usize>,
    /// Fixed reduction order for byte-identical outputs (always honoured;
    /// the flag is accepted for interface stability).
    #[arg(long, default_value_t = true)]
    bit_stable: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Locate the roots of phi(lambda) = 1 in a strip and classify the phase.
    Roots {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = spectral::DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = spectral::DEFAULT_IMAG_BOUND)]
        imag_bound: f64,
    },
    /// Full analytic report: spectrum, phase, mean expansion, variance constants.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = spectral::DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = spectral::DEFAULT_IMAG_BOUND)]
        imag_bound: f64,
        /// Also run the Condition B grid diagnostic.
        #[arg(long)]
        condition_b: bool,
    },
    /// Simulate ensembles of N(x) and export CSV (one row per x).
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated list of sizes x.
        #[arg(long)]
        x: String,
        /// Replicates per x.
        #[arg(long, default_value_t = 10_000)]
        n: u64,
        /// Keep raw N values and write them to this little-endian f64 file
        /// (suffix `_<index>.f64le` per x).
        #[arg(long)]
        raw: Option<PathBuf>,
    },
    /// End-to-end verification: spectrum, constants, renewal cross-check,
    /// simulation, phase-specific limit tests.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// quick | standard | paper
        #[arg(long, default_value = "quick")]
        budget: String,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                FragError::Config(_) | FragError::Io(_) | FragError::Json(_) => 1,
                _ => 2,
            }
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> fragtree::Result<()> {
    match cli.command {
        Command::Roots {
            common,
            delta,
            imag_bound,
        } => {
            let law = setup(&common)?;
            let spectrum = find_roots(&law, delta, imag_bound, common.tol)?;
            let phase = classify_phase(&law, &spectrum);
            let report = RootsReport {
                provenance: provenance(&law, &common),
                spectrum,
                phase,
            };
            emit(&common.out, &serde_json::to_string_pretty(&report)?)
        }
        Command::Analyze {
            common,
            delta,
            imag_bound,
            condition_b,
        } => {
            let law = setup(&common)?;
            let report = analyze(&law, &common, delta, imag_bound, condition_b)?;
            emit(&common.out, &serde_json::to_string_pretty(&report)?)
        }
        Command::Simulate { common, x, n, raw } => {
            let law = setup(&common)?;
            let xs: Vec<f64> = x
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| FragError::Config(format!("bad x '{s}': {e}")))
                })
                .collect::<fragtree::Result<_>>()?;
            let mut csv = String::from(simulate::ensemble_csv_header());
            csv.push('\n');
            for (i, &xv) in xs.iter().enumerate() {
                let ens = simulate::ensemble(&law, xv, n, common.seed, raw.is_some())?;
                csv.push_str(&ens.csv_row());
                csv.push('\n');
                if let (Some(base), Some(values)) = (&raw, &ens.raw) {
                    let path = base.with_extension(format!("{i}.f64le"));
                    std::fs::write(&path, simulate::raw_to_bytes(values))?;
                }
            }
            emit(&common.out, &csv)
        }
        Command::Verify { common, budget } => {
            let law = setup(&common)?;
            let budget = Budget::named(&budget)?;
            let report = verify(&law, &common, &budget)?;
            for r in &report.records {
                println!(
                    "{}: {} (statistic {:.6}, threshold {:.6})",
                    r.name,
                    if r.pass { "PASS" } else { "FAIL" },
                    r.statistic,
                    r.threshold
                );
            }
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(path) = &common.out {
                std::fs::write(path, json)?;
            }
            if report.all_passed {
                Ok(())
            } else {
                Err(FragError::QuadratureFailure {
                    value: 0.0,
                    error: report.records.iter().filter(|r| !r.pass).count() as f64,
                })
            }
        }
    }
}

fn setup(common: &CommonArgs) -> fragtree::Result<SplitLaw> {
    if let Some(threads) = common.threads {
        // Ignore failure when a global pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    SplitLaw::parse_spec(&common.law)
}

fn provenance(law: &SplitLaw, common: &CommonArgs) -> Provenance {
    Provenance {
        tool_version: TOOL_VERSION,
        law_spec: law.spec_string(),
        law_hash: law.config_hash(),
        seed: common.seed,
        bit_stable: common.bit_stable,
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> fragtree::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn analyze(
    law: &SplitLaw,
    common: &CommonArgs,
    delta: f64,
    imag_bound: f64,
    condition_b: bool,
) -> fragtree::Result<AnalyzeReport> {
    let spectrum = find_roots(law, delta, imag_bound, common.tol)?;
    let phase = classify_phase(law, &spectrum);
    let mut model = mean_expansion(law, &spectrum)?;
    let mut beta_quad = None;
    let mut beta_rat = None;
    let mut beta_crit = None;
    match phase.phase {
        Phase::Normal => {
            if !law.is_deterministic() {
                beta_quad = Some(beta_normal(law, &spectrum)?);
                if spectrum.all_roots.is_some() {
                    beta_rat = beta_rational(law, &spectrum, 400_000, common.seed).ok();
                }
                model.beta = beta_quad;
            }
        }
        Phase::CriticalLine => {
            beta_crit = Some(beta_critical(law, &spectrum)?.value);
        }
        Phase::Periodic | Phase::Degenerate => {}
    }
    let cb = condition_b
        .then(|| check_condition_b(law, 1.0, 200.0, 0.05))
        .transpose()?;
    let near = phase
        .boundary_margin
        .map(|m| m.abs() < 1e-2)
        .unwrap_or(false);
    Ok(AnalyzeReport {
        provenance: provenance(law, common),
        spectrum,
        phase,
        model,
        beta_quadrature: beta_quad,
        beta_rational: beta_rat,
        beta_critical: beta_crit,
        condition_b: cb,
        near_phase_boundary: near,
    })
}

struct Budget {
    sim_x: f64,
    sim_n: u64,
    clt_x: f64,
    clt_n: u64,
    renewal_h: f64,
    renewal_t_max: f64,
    fp_samples: usize,
    locked_n: u64,
}

impl Budget {
    fn named(name: &str) -> fragtree::Result<Budget> {
        match name {
            "quick" => Ok(Budget {
                sim_x: 500.0,
                sim_n: 5_000,
                clt_x: 2_000.0,
                clt_n: 2_000,
                renewal_h: 2e-3,
                renewal_t_max: 6.5,
                fp_samples: 20_000,
                locked_n: 2_000,
            }),
            "standard" => Ok(Budget {
                sim_x: 2_000.0,
                sim_n: 20_000,
                clt_x: 20_000.0,
                clt_n: 5_000,
                renewal_h: 1e-3,
                renewal_t_max: 8.0,
                fp_samples: 50_000,
                locked_n: 4_000,
            }),
            "paper" => Ok(Budget {
                sim_x: 1_000.0,
                sim_n: 100_000,
                clt_x: 100_000.0,
                clt_n: 10_000,
                renewal_h: 1e-3,
                renewal_t_max: 8.0,
                fp_samples: 100_000,
                locked_n: 5_000,
            }),
            other => Err(FragError::Config(format!(
                "unknown budget '{other}' (quick|standard|paper)"
            ))),
        }
    }
}

/// Two-sided record: passes when `|statistic| <= threshold`.
fn record(name: &str, statistic: f64, threshold: f64, n: u64, seed: u64, notes: &str) -> TestRecord {
    TestRecord {
        name: name.to_string(),
        statistic,
        threshold,
        pass: statistic.abs() <= threshold,
        n,
        seed,
        notes: notes.to_string(),
    }
}

/// One-sided record: passes when `statistic <= threshold` (signed).
fn record_le(name: &str, statistic: f64, threshold: f64, n: u64, seed: u64, notes: &str) -> TestRecord {
    TestRecord {
        name: name.to_string(),
        statistic,
        threshold,
        pass: statistic <= threshold,
        n,
        seed,
        notes: notes.to_string(),
    }
}

fn verify(law: &SplitLaw, common: &CommonArgs, budget: &Budget) -> fragtree::Result<VerifyReport> {
    let seed = common.seed;
    let mut records = Vec::new();
    let spectrum = find_roots(law, spectral::DEFAULT_DELTA, spectral::DEFAULT_IMAG_BOUND, common.tol)?;
    let phase = classify_phase(law, &spectrum);
    let model = mean_expansion(law, &spectrum)?;
    let alpha = model.alpha;

    // Root residuals.
    let worst_residual = spectrum.roots.iter().map(|r| r.residual).fold(0.0, f64::max);
    records.push(record(
        "root_residuals",
        worst_residual,
        common.tol,
        spectrum.roots.len() as u64,
        seed,
        "max |phi(lambda) - 1| over the strip roots",
    ));

    if law.is_deterministic() {
        // Deterministic laws: exact recursion against the stochastic engine.
        let mut max_dev = 0.0f64;
        let mut rng = fragtree::rng::SplitMix64::new(seed);
        for i in 0..50 {
            let x = 1.0 + 500.0 * rng.next_f64();
            let a = simulate::run_deterministic(law, x)?;
            let b = simulate::run_once(law, x, i)?;
            max_dev = max_dev.max((a.n_internal as f64 - b.n_internal as f64).abs());
            let b_parts = law.parts() as u64;
            if a.n_external != (b_parts - 1) * a.n_internal + 1 {
                max_dev = f64::INFINITY;
            }
        }
        records.push(record(
            "deterministic_consistency",
            max_dev,
            0.0,
            50,
            seed,
            "memoised recursion vs work-stack runs; external-node identity",
        ));
        if matches!(law.lattice_flag(), fragtree::law::LatticeFlag::NonLattice) {
            let x = 1e6;
            let run = simulate::run_deterministic(law, x)?;
            let dev = (run.n_internal as f64 / x - 1.0 / alpha).abs() * alpha;
            records.push(record(
                "deterministic_linear_growth",
                dev,
                0.02,
                1,
                seed,
                "N(x)/x vs 1/alpha at x = 1e6 (non-lattice only)",
            ));
        }
        let all_passed = records.iter().all(|r| r.pass);
        return Ok(VerifyReport {
            provenance: provenance(law, common),
            phase_claimed: phase.phase.name().into(),
            phase_detected: phase.phase.name().into(),
            records,
            all_passed,
        });
    }

    // Renewal cross-check of the mean expansion.
    let grid = renewal::discretize_measure(law, budget.renewal_h, budget.renewal_t_max, 200_000, seed)?;
    let mean_sol = renewal::solve_mean(&grid)?;
    let x_check = (budget.renewal_t_max - 1.0).exp().min(1_000.0);
    let renewal_dev = {
        let analytic = if model.exact_coeffs.is_some() {
            model.mean(x_check)
        } else {
            model.mean_leading(x_check)
        };
        (mean_sol.at_x(x_check) - analytic).abs() / analytic
    };
    records.push(record(
        "renewal_vs_expansion",
        renewal_dev,
        0.03,
        (budget.renewal_t_max / budget.renewal_h) as u64,
        seed,
        "relative deviation of the renewal mean from the spectral expansion",
    ));

    // Simulated mean against the expansion.
    let ens = simulate::ensemble(law, budget.sim_x, budget.sim_n, seed, false)?;
    let predicted = if model.exact_coeffs.is_some() {
        model.mean(budget.sim_x)
    } else {
        model.mean_leading(budget.sim_x)
    };
    let se = ens.stderr().unwrap_or(f64::INFINITY);
    records.push(record(
        "simulated_mean",
        (ens.mean() - predicted) / se,
        3.5,
        budget.sim_n,
        seed,
        "standardised deviation of the ensemble mean from the prediction",
    ));

    match phase.phase {
        Phase::Normal => {
            let beta = beta_normal(law, &spectrum)?;
            let threshold = stats::calibrate_ks_threshold(budget.clt_n as usize, 200, 0.99, seed)
                .max(0.02);
            let clt_ens = simulate::ensemble(law, budget.clt_x, budget.clt_n, seed ^ 0xC17, true)?;
            let clt = stats::clt_test(&clt_ens, alpha, beta.value, CltScaling::SqrtX, threshold)?;
            records.push(record(
                "clt_ks",
                clt.ks_distance,
                clt.ks_threshold,
                budget.clt_n,
                seed ^ 0xC17,
                "KS distance of standardised N(x) to the standard normal",
            ));
            records.push(record(
                "clt_kurtosis",
                clt.excess_kurtosis,
                0.5,
                budget.clt_n,
                seed ^ 0xC17,
                "excess kurtosis of the standardised sample",
            ));
            // Monte Carlo variance against the analytic constant.
            let var = clt_ens.variance().unwrap_or(f64::NAN);
            let var_dev = (var / budget.clt_x - beta.value) / beta.value;
            records.push(record(
                "variance_constant",
                var_dev,
                0.10,
                budget.clt_n,
                seed ^ 0xC17,
                "relative deviation of Var N(x)/x from beta",
            ));
        }
        Phase::Periodic => {
            let lambda2 = model.lambda2.expect("periodic model carries lambda2");
            let cert = fixedpoint::contraction_certificate(law, lambda2)?;
            records.push(record_le(
                "contraction_certificate",
                cert.xi,
                1.0 - 1e-6,
                1,
                seed,
                "xi = phi(2 sigma2) must stay below 1",
            ));
            if let Some(gamma) = model.gamma {
                let (fp, diag) = fixedpoint::iterate_to_fixed_point(
                    law,
                    lambda2,
                    gamma,
                    budget.fp_samples,
                    60,
                    1e-3,
                    seed,
                )?;
                records.push(record(
                    "fixed_point_mean",
                    (fp.mean() - gamma).norm(),
                    1e-9,
                    budget.fp_samples as u64,
                    seed,
                    "recentred fixed-point mean equals gamma",
                ));
                records.push(record(
                    "fixed_point_converged",
                    if diag.converged { 0.0 } else { 1.0 },
                    0.5,
                    diag.generations as u64,
                    seed,
                    "moment convergence of the contraction iteration",
                ));
                // Transport distance at two phase-locked sizes must not grow.
                let tau2 = lambda2.im.abs();
                let locked = simulate::phase_locked_samples(
                    law,
                    3.0,
                    tau2,
                    2,
                    budget.locked_n,
                    seed ^ 0xF00D,
                    true,
                )?;
                let d: Vec<f64> = locked
                    .iter()
                    .map(|e| fixedpoint::periodic_limit_distance(e, &fp, &model))
                    .collect::<fragtree::Result<_>>()?;
                let slope = regression_slope(
                    &locked.iter().map(|e| e.x.ln()).collect::<Vec<_>>(),
                    &d.iter().map(|v| v.ln()).collect::<Vec<_>>(),
                );
                let kappa = model.kappa.expect("periodic model has kappa");
                records.push(record_le(
                    "limit_distance_exponent",
                    slope,
                    kappa - lambda2.re + 0.1,
                    budget.locked_n,
                    seed ^ 0xF00D,
                    "log-log slope of the transport distance along phase-locked x",
                ));
            }
        }
        Phase::CriticalLine => {
            let crit = beta_critical(law, &spectrum)?;
            records.push(record(
                "beta_critical_positive",
                if crit.value > 0.0 { 0.0 } else { 1.0 },
                0.5,
                crit.terms.len() as u64,
                seed,
                "critical-line variance constant is positive",
            ));
        }
        Phase::Degenerate => {
            records.push(record(
                "degenerate_phase",
                0.0,
                1.0,
                0,
                seed,
                "phase machinery does not apply (lattice or non-simple roots); spectrum only",
            ));
        }
    }

    let all_passed = records.iter().all(|r| r.pass);
    Ok(VerifyReport {
        provenance: provenance(law, common),
        phase_claimed: phase.phase.name().into(),
        phase_detected: phase.phase.name().into(),
        records,
        all_passed,
    })
}

fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
