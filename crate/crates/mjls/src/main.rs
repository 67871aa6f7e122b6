use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mjls::io::{load_model, load_policy, save_model, save_policy, LoadError};
use mjls::report::{read_trace, write_trace, Summary, TraceRow};
use mjls_core::oracle::{fd_gradient, relative_discrepancy};
use mjls_core::policy_opt::{
    check_almost_smoothness, check_cost_lower_bound, check_gradient_domination, cost,
    optimize_with, policy_gradient, step, verify_rate_bound,
};
use mjls_core::stability::{is_ms_stabilizing, solve_coupled_riccati};
use mjls_core::{
    generate_random_model, Error, Method, MjlsModel, OptimalSolution, OptimizerConfig, Policy,
    SolverConfig, StepSize,
};
use serde_json::json;

const GRADCHECK_TOL: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "mjls",
    version,
    about = "Policy optimization for Markovian jump linear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random model whose zero policy is mean-square stabilizing.
    Generate {
        #[arg(long, default_value_t = 10)]
        modes: usize,
        #[arg(long, default_value_t = 20)]
        states: usize,
        #[arg(long, default_value_t = 4)]
        inputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Extra Dirichlet weight on staying in the current mode.
        #[arg(long, default_value_t = 99.0)]
        self_weight: f64,
        /// Mean-square spectral radius of the open loop, in (0, 1).
        #[arg(long, default_value_t = 0.95)]
        margin: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the coupled Riccati equations and write the optimal gains.
    Riccati {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
    },
    /// Run a policy optimization method and write its convergence trace.
    Optimize {
        #[arg(long)]
        model: PathBuf,
        /// `zero` or a policy file.
        #[arg(long, default_value = "zero")]
        init: String,
        /// gn, npg or pg.
        #[arg(long, default_value = "gn")]
        method: String,
        /// `auto`, `conservative` or a positive number.
        #[arg(long, default_value = "auto")]
        eta: String,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
        /// Optimal policy file; enables the relative-gap stopping rule.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Relative gap tolerance (gradient tolerance without --ref).
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Also require ‖∇C‖ ≤ grad-tol·(1 + C) when a reference is given.
        #[arg(long, default_value_t = 0.0)]
        grad_tol: f64,
        /// Write the final policy here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress the per-iteration log on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Compare the analytic gradient with central finite differences.
    Gradcheck {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
    },
    /// Replay a trace and check the convergence inequalities along it.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Initial policy of the traced run: `zero` or a policy file.
        #[arg(long, default_value = "zero")]
        init: String,
    },
}

/// Exit codes: 2 bad arguments or files, 3 solver failure, 4 stability
/// precondition violated, 1 a check that ran but failed.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NotMsStable { .. } | Error::FdUnstable { .. } => 4,
                Error::InvalidModel(_) | Error::InvalidArgument(_) | Error::Generation(_) => 2,
                _ => 3,
            };
        }
        if cause.downcast_ref::<LoadError>().is_some() {
            return 2;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Generate {
            modes,
            states,
            inputs,
            seed,
            self_weight,
            margin,
            out,
        } => {
            if !(margin > 0.0 && margin < 1.0) {
                bail!(Error::InvalidArgument(format!(
                    "--margin must lie in (0, 1), got {margin}"
                )));
            }
            let m = generate_random_model(modes, states, inputs, seed, self_weight, margin)?;
            save_model(&m, &out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Riccati {
            model,
            out,
            tol,
            max_iter,
        } => riccati(&model, &out, tol, max_iter),
        Command::Optimize {
            model,
            init,
            method,
            eta,
            max_iters,
            reference,
            csv,
            tol,
            grad_tol,
            out,
            quiet,
        } => {
            let m = load_model(&model)?;
            let mut cfg = OptimizerConfig::new(parse_method(&method)?);
            cfg.eta = parse_eta(&eta)?;
            cfg.max_iters = max_iters;
            cfg.rel_gap_tol = tol;
            cfg.grad_tol = grad_tol;
            let run = RunFiles { csv, out, quiet };
            optimize_cmd(&m, &init, cfg, reference.as_deref(), run)
        }
        Command::Gradcheck { model, policy, h } => {
            let m = load_model(&model)?;
            let policy = load_policy(&policy, &m)?;
            gradcheck(&m, &policy, h)
        }
        Command::Verify {
            model,
            trace,
            reference,
            init,
        } => {
            let m = load_model(&model)?;
            verify(&m, &trace, reference.as_deref(), &init)
        }
    }
}

fn parse_method(s: &str) -> anyhow::Result<Method> {
    Method::parse(s).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown method {s:?}; use gn, npg or pg")).into()
    })
}

fn parse_eta(s: &str) -> anyhow::Result<StepSize> {
    match s {
        "auto" => Ok(StepSize::Auto),
        "conservative" => Ok(StepSize::Conservative),
        _ => match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(StepSize::Fixed(v)),
            _ => bail!(Error::InvalidArgument(format!(
                "--eta must be auto, conservative or a positive number, got {s:?}"
            ))),
        },
    }
}

fn initial_policy(m: &MjlsModel, init: &str) -> anyhow::Result<Policy> {
    if init == "zero" {
        Ok(Policy::zeros(m))
    } else {
        Ok(load_policy(Path::new(init), m)?)
    }
}

fn reference_solution(m: &MjlsModel, path: &Path) -> anyhow::Result<OptimalSolution> {
    let kstar = load_policy(path, m)?;
    OptimalSolution::for_policy(m, kstar, &SolverConfig::default())
        .with_context(|| format!("evaluating reference policy {}", path.display()))
}

fn print_json(value: &serde_json::Value) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

fn riccati(model: &Path, out: &Path, tol: f64, max_iter: usize) -> anyhow::Result<ExitCode> {
    let m = load_model(model)?;
    let cfg = SolverConfig {
        tol,
        max_iter,
        ..SolverConfig::default()
    };
    let (value, kstar) = solve_coupled_riccati(&m, &cfg).map_err(|e| match e {
        Error::NotMsStabilizable { .. } => anyhow::Error::new(e).context("not MS-stabilizable"),
        e => e.into(),
    })?;
    save_policy(&kstar, out)?;
    print_json(&json!({
        "residual": value.residual,
        "iterations": value.iterations,
        "cost": mjls_core::policy_opt::cost_from_value(&m, &value.p),
    }))?;
    Ok(ExitCode::SUCCESS)
}

struct RunFiles {
    csv: Option<PathBuf>,
    out: Option<PathBuf>,
    quiet: bool,
}

fn optimize_cmd(
    m: &MjlsModel,
    init: &str,
    cfg: OptimizerConfig,
    reference: Option<&Path>,
    files: RunFiles,
) -> anyhow::Result<ExitCode> {
    let initial = initial_policy(m, init)?;
    let reference = reference.map(|p| reference_solution(m, p)).transpose()?;
    let quiet = files.quiet;
    let report = optimize_with(m, &initial, &cfg, reference.as_ref(), |r| {
        if !quiet {
            let gap = r
                .rel_gap
                .map_or(String::new(), |g| format!(" gap {:.3e}", g));
            eprintln!(
                "iter {:>5} cost {:.10e} grad {:.3e} radius {:.6}{gap}",
                r.iter, r.cost, r.grad_norm, r.ms_radius
            );
        }
    })?;
    if let Some(path) = &files.csv {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_trace(BufWriter::new(file), &report)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &files.out {
        save_policy(&report.final_policy, path)?;
    }
    print_json(&serde_json::to_value(Summary::new(&report))?)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(m: &MjlsModel, policy: &Policy, h: f64) -> anyhow::Result<ExitCode> {
    let cfg = SolverConfig::default();
    if !is_ms_stabilizing(m, policy, &cfg)?.stable {
        bail!(Error::NotMsStable { iterations: 0 });
    }
    let analytic = policy_gradient(m, policy, &cfg)?;
    let numeric = fd_gradient(m, policy, h, &cfg)?;
    let discrepancy = relative_discrepancy(&analytic.grad, &numeric);
    let pass = discrepancy <= GRADCHECK_TOL;
    println!(
        "max relative discrepancy: {discrepancy:.3e} ({})",
        if pass { "pass" } else { "FAIL" }
    );
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[derive(Default)]
struct Tally {
    pass: usize,
    fail: usize,
    skipped: usize,
}

impl Tally {
    fn record(&mut self, ok: bool) {
        if ok {
            self.pass += 1;
        } else {
            self.fail += 1;
        }
    }
}

/// Replays the traced run from `init`, re-evaluating every iterate.
fn verify(
    m: &MjlsModel,
    trace: &Path,
    reference: Option<&Path>,
    init: &str,
) -> anyhow::Result<ExitCode> {
    let file = File::open(trace).with_context(|| format!("opening {}", trace.display()))?;
    let rows: Vec<TraceRow> =
        read_trace(file).with_context(|| format!("reading {}", trace.display()))?;
    let Some(first) = rows.first() else {
        bail!(Error::InvalidArgument(format!(
            "{} has no rows",
            trace.display()
        )));
    };
    let method = parse_method(&first.method)?;
    let reference = reference.map(|p| reference_solution(m, p)).transpose()?;
    let cfg = SolverConfig::default();

    let mut policies = vec![initial_policy(m, init)?];
    for row in &rows[1..] {
        let Some(eta) = row.eta else {
            bail!(Error::InvalidArgument(format!(
                "row {} has no step size",
                row.iter
            )));
        };
        let prev = policies.last().unwrap();
        policies.push(step(m, prev, method, eta, &cfg)?.policy);
    }

    let mut replay = Tally::default();
    let mut stability = Tally::default();
    let mut lower = Tally::default();
    let mut smooth = Tally::default();
    let mut domination = Tally::default();
    let mut rate = Tally::default();
    for (n, (row, policy)) in rows.iter().zip(&policies).enumerate() {
        let stable = is_ms_stabilizing(m, policy, &cfg)?.stable;
        stability.record(stable);
        if !stable {
            println!("iter {}: iterate is not mean-square stabilizing", row.iter);
            continue;
        }
        let c = cost(m, policy, &cfg)?;
        replay.record((c - row.cost).abs() <= 1e-8 * (1.0 + row.cost.abs()));
        lower.record(check_cost_lower_bound(m, policy, &cfg)?.holds);
        if n > 0 {
            let s = check_almost_smoothness(m, &policies[n - 1], policy, &cfg)?;
            smooth.record(s.residual <= 1e-8);
        }
        if let Some(r) = &reference {
            domination
                .record(check_gradient_domination(m, policy, r.cost, r.chi_norm, &cfg)?.all());
        }
    }
    match &reference {
        Some(r) => {
            let records: Vec<_> = rows.iter().map(TraceRow::to_record).collect();
            for check in verify_rate_bound(&records, m, r.cost, r.chi_norm, method) {
                if check.applicable {
                    rate.record(check.holds);
                } else {
                    rate.skipped += 1;
                    println!(
                        "iter {}: uncertified step, rate bound not applicable",
                        check.iter
                    );
                }
            }
        }
        None => println!("no --ref given: gradient domination and rate rows skipped"),
    }

    println!(
        "{:<22} {:>6} {:>6} {:>8}",
        "check", "pass", "fail", "skipped"
    );
    let table = [
        ("trace replay", &replay),
        ("ms stability", &stability),
        ("cost lower bound", &lower),
        ("cost expansion", &smooth),
        ("gradient domination", &domination),
        ("rate bound", &rate),
    ];
    for (name, t) in &table {
        println!("{name:<22} {:>6} {:>6} {:>8}", t.pass, t.fail, t.skipped);
    }
    let failed = table.iter().any(|(_, t)| t.fail > 0);
    println!("{}", if failed { "FAIL" } else { "PASS" });
    Ok(if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}
