//! Command-line front end: every capability as a subcommand with
//! reproducible, scriptable output. Identical invocations produce
//! byte-identical output files for any worker count.
//!
//! Exit codes: 0 on success with all asserted checks passing, 1 when an
//! asserted inequality or tolerance fails, 2 on usage or setup errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pottslab::analysis::{
    exponential_rate, power_law_constant, power_law_regression, sequence_rows, write_sequence_csv,
    AnalysisReport,
};
use pottslab::boundary_opt::{expansion_probe, h_max_admissible, two_step_bound_check};
use pottslab::maps::{audit_two_step, taylor_c123, two_step_c1_fd, GridSpec, MapParams};
use pottslab::model::ModelParams;
use pottslab::oracle::{
    find_dominating_boundary, leaf_count, read_boundary_file, root_marginals_exact,
    write_boundary_file, BoundarySpec, Budgets, DEFAULT_BOUNDARY_BUDGET, DEFAULT_CONFIG_BUDGET,
};
use pottslab::recursion::root_marginals_recursive;

#[derive(Parser)]
#[command(
    name = "pottslab",
    version,
    about = "Antiferromagnetic q-color model on finite d-ary trees: exact marginals, ratio dynamics, contraction audits, and rate extraction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Model parameters shared by every subcommand. Exactly one of `--p` and
/// `--critical` must be given.
#[derive(Args)]
struct ModelArgs {
    /// Branching factor (children per internal vertex).
    #[arg(long)]
    d: usize,
    /// Number of colors.
    #[arg(long)]
    q: usize,
    /// Monochromatic-edge weight in (0, 1).
    #[arg(long, conflicts_with = "critical")]
    p: Option<f64>,
    /// Use the critical weight 1 - q/(d+1).
    #[arg(long)]
    critical: bool,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelParams, String> {
        if self.critical {
            ModelParams::critical(self.d, self.q).map_err(|e| {
                format!(
                    "{e}; q >= d+1 is the zero-temperature regime, pass an explicit --p instead"
                )
            })
        } else {
            match self.p {
                Some(p) => ModelParams::new(self.d, self.q, p).map_err(|e| e.to_string()),
                None => Err("one of --p or --critical is required".to_string()),
            }
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit JSON (the default for every subcommand).
    #[arg(long)]
    json: bool,
    /// Worker threads for parallel enumeration (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct BudgetArgs {
    /// Cap on interior-configuration enumerations.
    #[arg(long, env = "POTTSLAB_BUDGET_CONFIGS", default_value_t = DEFAULT_CONFIG_BUDGET)]
    budget_configs: u64,
    /// Cap on boundary enumerations.
    #[arg(long, env = "POTTSLAB_BUDGET_BOUNDARIES", default_value_t = DEFAULT_BOUNDARY_BUDGET)]
    budget_boundaries: u64,
}

impl BudgetArgs {
    fn budgets(&self) -> Budgets {
        Budgets {
            configs: self.budget_configs,
            boundaries: self.budget_boundaries,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compare the recursive sweep against exhaustive enumeration on every
    /// boundary (or one boundary file); fails if any entry differs by more
    /// than 1e-10.
    OracleCheck {
        #[command(flatten)]
        model: ModelArgs,
        /// Tree height.
        #[arg(long)]
        n: usize,
        /// Check a single boundary file instead of all boundaries.
        #[arg(long)]
        boundary: Option<PathBuf>,
        #[command(flatten)]
        budgets: BudgetArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Dump the pure-boundary deviation sequence eps_1..eps_N.
    Iterate {
        #[command(flatten)]
        model: ModelArgs,
        /// Iteration length.
        #[arg(long = "N")]
        n: usize,
        /// Emit CSV (n,eps,marginal_dev) instead of JSON.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Critical power-law constants from the pure-boundary iteration.
    Exponent {
        #[command(flatten)]
        model: ModelArgs,
        /// Iteration length.
        #[arg(long = "N", default_value_t = 1_000_000)]
        n: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Subcritical exponential decay rate of the marginal deviation.
    Rate {
        #[command(flatten)]
        model: ModelArgs,
        /// Iteration length.
        #[arg(long = "N", default_value_t = 400)]
        n: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Grid audit of the two-step contraction bounds for every multiplicity.
    MapsAudit {
        #[command(flatten)]
        model: ModelArgs,
        /// Right end of the audit interval [1, xmax].
        #[arg(long, default_value_t = 1e4)]
        xmax: f64,
        /// Number of log-spaced grid points.
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Taylor coefficients of the two-step composition at criticality, with
    /// a finite-difference cross-check.
    Taylor {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Exhaustive maximum of h over the reduced admissible domain A(r).
    HMax {
        #[command(flatten)]
        model: ModelArgs,
        /// Ratio bound r >= 1 defining A(r).
        #[arg(long)]
        r: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep r downward toward 1, recording where the reduced maximum stops
    /// matching the two-step composition with the color-2 ray as unique
    /// maximizer.
    ExpansionProbe {
        #[command(flatten)]
        model: ModelArgs,
        /// Smallest probed r - 1.
        #[arg(long, default_value_t = 1e-6)]
        eps_min: f64,
        /// Largest probed r - 1.
        #[arg(long, default_value_t = 1e-3)]
        eps_max: f64,
        /// Number of log-spaced probe radii.
        #[arg(long, default_value_t = 13)]
        points: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Brute-force two-step domination bound on a tiny tree; fails unless
    /// r*_{n+2} <= max over A(r*_n) of h.
    TwoStepBound {
        #[command(flatten)]
        model: ModelArgs,
        /// Height of the smaller tree.
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[command(flatten)]
        budgets: BudgetArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Search all boundaries for one that strictly dominates the pure
    /// color-1 boundary's root marginal.
    FrozenSearch {
        #[command(flatten)]
        model: ModelArgs,
        /// Tree height.
        #[arg(long)]
        n: usize,
        /// Also write the dominating boundary as a boundary file.
        #[arg(long)]
        boundary_out: Option<PathBuf>,
        #[command(flatten)]
        budgets: BudgetArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(checks_passed) => {
            if checks_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn setup_workers(output: &OutputArgs) {
    if let Some(k) = output.workers {
        // Results are bitwise identical for any pool size; this only tunes
        // throughput. Ignore failure if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global();
    }
}

fn emit<T: Serialize>(output: &OutputArgs, value: &T) -> Result<(), String> {
    let body = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    match &output.out {
        Some(path) => std::fs::write(path, format!("{body}\n"))
            .map_err(|e| format!("writing {}: {e}", path.display())),
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn emit_text(output: &OutputArgs, body: &str) -> Result<(), String> {
    match &output.out {
        Some(path) => {
            std::fs::write(path, body).map_err(|e| format!("writing {}: {e}", path.display()))
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn run(command: Command) -> Result<bool, String> {
    match command {
        Command::OracleCheck {
            model,
            n,
            boundary,
            budgets,
            output,
        } => {
            setup_workers(&output);
            let params = model.resolve()?;
            oracle_check(&params, n, boundary.as_deref(), budgets.budgets(), &output)
        }
        Command::Iterate {
            model,
            n,
            csv,
            output,
        } => {
            setup_workers(&output);
            let params = model.resolve()?;
            let rows = sequence_rows(&params, n);
            if csv {
                let mut buf = Vec::new();
                write_sequence_csv(&mut buf, &rows).map_err(|e| e.to_string())?;
                emit_text(&output, &String::from_utf8(buf).unwrap())?;
            } else {
                emit(&output, &rows)?;
            }
            Ok(true)
        }
        Command::Exponent { model, n, output } => {
            setup_workers(&output);
            let params = model.resolve()?;
            let est = power_law_constant(&params, n).map_err(|e| e.to_string())?;
            let fit = power_law_regression(&params, n).map_err(|e| e.to_string())?;
            let mut report = AnalysisReport::new(&params);
            report.push("ratio_even", est.ratio_even);
            report.push("ratio_odd", est.ratio_odd);
            report.push("probability", est.probability);
            report.push("regression_exponent_diagnostic", fit);
            emit(&output, &report)?;
            Ok(true)
        }
        Command::Rate { model, n, output } => {
            setup_workers(&output);
            let params = model.resolve()?;
            let est = exponential_rate(&params, n).map_err(|e| e.to_string())?;
            let mut report = AnalysisReport::new(&params);
            report.push("rate_slope", est.slope);
            report.push("rate_direct", est.direct);
            emit(&output, &report)?;
            Ok(true)
        }
        Command::MapsAudit {
            model,
            xmax,
            points,
            output,
        } => {
            setup_workers(&output);
            let params = model.resolve()?;
            let report = audit_two_step(
                &params,
                &GridSpec {
                    x_max: xmax,
                    points,
                },
            );
            let passed = report.passed();
            emit(&output, &report)?;
            Ok(passed)
        }
        Command::Taylor { model, output } => {
            setup_workers(&output);
            let params = model.resolve()?;
            let coeffs = taylor_c123(&params).map_err(|e| e.to_string())?;
            let d = params.d as f64;
            let c3_target = -(d * d - 1.0) / (d * d);
            let c1_fd = two_step_c1_fd(&params);
            let passed = (coeffs.c1 - 1.0).abs() <= 1e-9
                && coeffs.c2.abs() <= 1e-9
                && (coeffs.c3 - c3_target).abs() <= 1e-9
                && (coeffs.c1 - c1_fd).abs() <= 1e-6;
            #[derive(Serialize)]
            struct TaylorReport {
                d: usize,
                q: usize,
                p: f64,
                c1: f64,
                c2: f64,
                c3: f64,
                c3_closed_form: f64,
                c1_finite_difference: f64,
                passed: bool,
            }
            emit(
                &output,
                &TaylorReport {
                    d: params.d,
                    q: params.q,
                    p: params.p,
                    c1: coeffs.c1,
                    c2: coeffs.c2,
                    c3: coeffs.c3,
                    c3_closed_form: c3_target,
                    c1_finite_difference: c1_fd,
                    passed,
                },
            )?;
            Ok(passed)
        }
        Command::HMax { model, r, output } => {
            setup_workers(&output);
            let params = model.resolve()?;
            if r < 1.0 {
                return Err(format!("--r must be >= 1, got {r}"));
            }
            let hm = h_max_admissible(&params, r).map_err(|e| e.to_string())?;
            let map = MapParams::one_step(params);
            let ff = 1.0 + map.two_step_deviation(r - 1.0).map_err(|e| e.to_string())?;
            #[derive(Serialize)]
            struct HMaxReport {
                r: f64,
                max_value: f64,
                ff_value: f64,
                ties: usize,
                argmax_patterns: Vec<pottslab::boundary_opt::AdmissiblePoint>,
            }
            emit(
                &output,
                &HMaxReport {
                    r,
                    max_value: hm.max_value,
                    ff_value: ff,
                    ties: hm.argmax.len(),
                    argmax_patterns: hm.argmax,
                },
            )?;
            Ok(true)
        }
        Command::ExpansionProbe {
            model,
            eps_min,
            eps_max,
            points,
            output,
        } => {
            setup_workers(&output);
            let params = model.resolve()?;
            if !(eps_min > 0.0 && eps_max > eps_min && points >= 2) {
                return Err("need 0 < --eps-min < --eps-max and --points >= 2".to_string());
            }
            let lo = eps_min.ln();
            let hi = eps_max.ln();
            let radii: Vec<f64> = (0..points)
                .map(|k| 1.0 + (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp())
                .collect();
            let report = expansion_probe(&params, &radii).map_err(|e| e.to_string())?;
            emit(&output, &report)?;
            Ok(true)
        }
        Command::TwoStepBound {
            model,
            n,
            budgets,
            output,
        } => {
            setup_workers(&output);
            let params = model.resolve()?;
            let report =
                two_step_bound_check(&params, n, budgets.budgets()).map_err(|e| e.to_string())?;
            let passed = report.prop32_holds;
            emit(&output, &report)?;
            Ok(passed)
        }
        Command::FrozenSearch {
            model,
            n,
            boundary_out,
            budgets,
            output,
        } => {
            setup_workers(&output);
            let params = model.resolve()?;
            let hit = find_dominating_boundary(&params, n, budgets.budgets())
                .map_err(|e| e.to_string())?;
            #[derive(Serialize)]
            struct FrozenReport {
                d: usize,
                q: usize,
                p: f64,
                n: usize,
                found: bool,
                margin: Option<f64>,
                boundary: Option<BoundarySpec>,
            }
            let report = match hit {
                Some((xi, margin)) => {
                    if let (Some(path), BoundarySpec::Explicit(colors)) = (&boundary_out, &xi) {
                        write_boundary_file(path, colors).map_err(|e| e.to_string())?;
                    }
                    FrozenReport {
                        d: params.d,
                        q: params.q,
                        p: params.p,
                        n,
                        found: true,
                        margin: Some(margin),
                        boundary: Some(xi),
                    }
                }
                None => FrozenReport {
                    d: params.d,
                    q: params.q,
                    p: params.p,
                    n,
                    found: false,
                    margin: None,
                    boundary: None,
                },
            };
            emit(&output, &report)?;
            Ok(true)
        }
    }
}

fn oracle_check(
    params: &ModelParams,
    n: usize,
    boundary: Option<&std::path::Path>,
    budgets: Budgets,
    output: &OutputArgs,
) -> Result<bool, String> {
    #[derive(Serialize)]
    struct OracleCheckReport {
        d: usize,
        q: usize,
        p: f64,
        n: usize,
        boundaries_checked: u64,
        max_abs_deviation: f64,
        tolerance: f64,
        passed: bool,
        /// Present only for single-boundary checks: both marginal vectors.
        exact: Option<pottslab::MarginalVector>,
        recursive: Option<pottslab::MarginalVector>,
    }

    let tolerance = 1e-10;
    let (count, worst, pair) = match boundary {
        Some(path) => {
            let colors = read_boundary_file(path).map_err(|e| e.to_string())?;
            let xi = BoundarySpec::Explicit(colors);
            let exact = root_marginals_exact(params, n, &xi).map_err(|e| e.to_string())?;
            let swept = root_marginals_recursive(params, n, &xi).map_err(|e| e.to_string())?;
            let worst = exact
                .probs
                .iter()
                .zip(&swept.probs)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            (1u64, worst, Some((exact, swept)))
        }
        None => {
            let leaves = leaf_count(params.d, n);
            let total = (params.q as u128)
                .checked_pow(u32::try_from(leaves).unwrap_or(u32::MAX))
                .unwrap_or(u128::MAX);
            if total > budgets.boundaries as u128 {
                return Err(format!(
                    "exhaustive check needs {total} boundaries, budget is {}",
                    budgets.boundaries
                ));
            }
            let mut worst = 0.0f64;
            let mut colors = vec![1usize; leaves as usize];
            for _ in 0..total {
                let xi = BoundarySpec::Explicit(colors.clone());
                let exact = root_marginals_exact(params, n, &xi).map_err(|e| e.to_string())?;
                let swept = root_marginals_recursive(params, n, &xi).map_err(|e| e.to_string())?;
                for (a, b) in exact.probs.iter().zip(&swept.probs) {
                    worst = worst.max((a - b).abs());
                }
                // Odometer over colors.
                for slot in colors.iter_mut().rev() {
                    *slot += 1;
                    if *slot <= params.q {
                        break;
                    }
                    *slot = 1;
                }
            }
            (total as u64, worst, None)
        }
    };

    let passed = worst <= tolerance;
    let (exact, recursive) = match pair {
        Some((e, r)) => (Some(e), Some(r)),
        None => (None, None),
    };
    emit(
        output,
        &OracleCheckReport {
            d: params.d,
            q: params.q,
            p: params.p,
            n,
            boundaries_checked: count,
            max_abs_deviation: worst,
            tolerance,
            passed,
            exact,
            recursive,
        },
    )?;
    Ok(passed)
}
