//! `irmc` command-line driver: solve, forward-evaluate, extract boundaries
//! and run reference oracles. Exit codes: 0 ok, 2 configuration error,
//! 3 solver or I/O error, 4 stack-file version mismatch.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use irmc::config::{resolved_config_text, RunConfig, MIN_FORWARD_PATHS};
use irmc::oracle::{brute_force_dp, faustmann_threshold, federico_solution, GUTHRIE_REFERENCE};
use irmc::policy::{extract_boundary, forward_evaluate, write_boundary_csv, write_events_csv, BoundaryMode, ForwardReport};
use irmc::solver::solve_with;
use irmc::stackfile::{load_stack, save_stack};
use irmc::surrogate::PolicyStack;

#[derive(Parser)]
#[command(name = "irmc", version, about = "Regression Monte Carlo for stochastic impulse control")]
struct Cli {
    /// Worker threads for path simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the policy stack and write `stack.bin` and `traces.jsonl`.
    Solve(SolveArgs),
    /// Evaluate a fitted stack on fresh paths; writes the report, events and boundary.
    Forward(ForwardArgs),
    /// Like `forward`, but writes only `boundary.csv`.
    Boundary(BoundaryArgs),
    /// Closed-form and brute-force reference solutions.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output.dir` from the config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seed (overrides `solver.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Print one JSON line per fitted step to stdout.
    #[arg(long)]
    trace: bool,
    /// Also fit impulse surrogates (overrides `intervention.use_zhat`).
    #[arg(long)]
    use_zhat: bool,
}

#[derive(Args)]
struct ForwardOpts {
    /// Stack file (default: `<out>/stack.bin`).
    #[arg(long)]
    stack: Option<PathBuf>,
    /// Configuration to use instead of the one embedded in the stack file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Forward seed (overrides `forward.seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_paths: Option<usize>,
    /// Start state, comma-separated (overrides `forward.x0`).
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// Decide impulses from the fitted impulse surrogates.
    #[arg(long)]
    use_zhat: bool,
}

#[derive(Args)]
struct ForwardArgs {
    #[command(flatten)]
    opts: ForwardOpts,
}

#[derive(Args)]
struct BoundaryArgs {
    #[command(flatten)]
    opts: ForwardOpts,
    /// events, scan or events_then_scan (overrides `boundary.mode`).
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Time-stationary (s, S) policy of the GBM capacity-expansion problem.
    Federico {
        #[arg(long, default_value_t = 0.08)]
        r: f64,
        #[arg(long, default_value_t = -0.07, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long, default_value_t = 0.25)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        c0: f64,
        #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
        c1: f64,
        /// Also report the value function at this state.
        #[arg(long)]
        x: Option<f64>,
    },
    /// Infinite-horizon cut threshold of the forest-rotation problem.
    Faustmann {
        #[arg(long, default_value_t = 0.1)]
        r: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        mu: f64,
        #[arg(long, default_value_t = 0.4463)]
        sigma: f64,
    },
    /// Reference statistics of the capacity-expansion example.
    Guthrie,
    /// Grid dynamic program for a 1-D model; writes `dp_table.csv`.
    Dp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Maps library errors anywhere in the chain to exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<irmc::Error>() {
            return match e {
                irmc::Error::Config { .. } => 2,
                irmc::Error::VersionMismatch { .. } => 4,
                _ => 3,
            };
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
    }
    3
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Forward(a) => cmd_forward(a.opts, None, true),
        Command::Boundary(a) => {
            let mode = a.mode.as_deref().map(parse_mode).transpose()?;
            cmd_forward(a.opts, mode, false)
        }
        Command::Oracle(o) => cmd_oracle(o),
    }
}

fn parse_mode(s: &str) -> Result<BoundaryMode> {
    Ok(match s {
        "events" => BoundaryMode::Events,
        "scan" => BoundaryMode::Scan,
        "events_then_scan" => BoundaryMode::EventsThenScan,
        other => return Err(UsageError(format!("--mode: unknown boundary mode `{other}`")).into()),
    })
}

fn base_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| irmc::Error::config("<file>", format!("cannot read {}: {e}", path.display())))
        .map_err(Into::into)
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = flag.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn cmd_solve(a: SolveArgs) -> Result<()> {
    let text = read_config_text(&a.config)?;
    let base = base_dir(&a.config);
    let resolved = resolved_config_text(&text, base, a.seed, a.use_zhat.then_some(true))?;
    let cfg = RunConfig::from_toml_str(&resolved, base)?;
    let dir = out_dir(a.out, &cfg)?;
    let mut stdout = std::io::stdout().lock();
    let mut trace_err = None;
    let (stack, traces) = solve_with(&cfg.model, &cfg.solver, |t| {
        if a.trace && trace_err.is_none() {
            let line = serde_json::to_string(t).expect("traces serialize");
            if let Err(e) = writeln!(stdout, "{line}").and_then(|_| stdout.flush()) {
                trace_err = Some(e);
            }
        }
    })
    .context("solver failed")?;
    if let Some(e) = trace_err {
        return Err(e).context("writing trace lines");
    }
    let stack_path = dir.join("stack.bin");
    save_stack(&stack_path, &stack, &resolved).with_context(|| format!("writing {}", stack_path.display()))?;
    let mut traces_out = String::new();
    for t in &traces {
        traces_out.push_str(&serde_json::to_string(t)?);
        traces_out.push('\n');
    }
    std::fs::write(dir.join("traces.jsonl"), traces_out).context("writing traces.jsonl")?;
    eprintln!("wrote {} ({} fitted steps)", stack_path.display(), stack.n_steps());
    Ok(())
}

/// Loads a stack and the configuration to evaluate it with.
fn load_for_forward(opts: &ForwardOpts) -> Result<(PolicyStack, RunConfig, PathBuf)> {
    let stack_path = opts
        .stack
        .clone()
        .unwrap_or_else(|| opts.out.clone().unwrap_or_else(|| PathBuf::from("out")).join("stack.bin"));
    let (stack, embedded) = load_stack(&stack_path).with_context(|| format!("loading {}", stack_path.display()))?;
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml_str(&embedded, base_dir(&stack_path)).context("configuration embedded in the stack file")?,
    };
    if stack.dim != cfg.model.dim || stack.n_steps() != cfg.model.n_steps() {
        bail!(irmc::Error::BadFormat(format!(
            "stack has {} steps in dimension {}, the model expects {} steps in dimension {}",
            stack.n_steps(),
            stack.dim,
            cfg.model.n_steps(),
            cfg.model.dim
        )));
    }
    if let Some(s) = opts.seed {
        cfg.forward.seed = s;
    }
    if let Some(n) = opts.n_paths {
        if n < MIN_FORWARD_PATHS {
            return Err(UsageError(format!("--n-paths must be at least {MIN_FORWARD_PATHS}")).into());
        }
        cfg.forward.n_paths = n;
    }
    if let Some(x0) = &opts.x0 {
        if x0.len() != cfg.model.dim {
            return Err(UsageError(format!("--x0 needs {} coordinates", cfg.model.dim)).into());
        }
        cfg.forward.x0 = x0.clone();
    }
    let dir = out_dir(opts.out.clone(), &cfg)?;
    Ok((stack, cfg, dir))
}

fn run_forward(stack: &PolicyStack, cfg: &RunConfig, use_zhat: bool) -> Result<ForwardReport> {
    if use_zhat && stack.steps.iter().any(|s| s.zhat.is_none()) {
        return Err(UsageError("--use-zhat needs a stack solved with impulse surrogates (solve --use-zhat)".into()).into());
    }
    let f = &cfg.forward;
    forward_evaluate(&cfg.model, stack, &cfg.solver.intervention, &f.x0, f.n_paths, f.seed, use_zhat)
        .context("forward evaluation failed")
}

fn cmd_forward(opts: ForwardOpts, mode: Option<BoundaryMode>, full: bool) -> Result<()> {
    let (stack, cfg, dir) = load_for_forward(&opts)?;
    let report = run_forward(&stack, &cfg, opts.use_zhat)?;
    if full {
        let json = serde_json::to_string_pretty(&report)? + "\n";
        std::fs::write(dir.join("forward_report.json"), json).context("writing forward_report.json")?;
        write_events_csv(&dir.join("impulse_events.csv"), &cfg.model, &report).context("writing impulse_events.csv")?;
    }
    let mode = mode.unwrap_or(cfg.boundary);
    match extract_boundary(&report, &stack, &cfg.model, &cfg.solver.intervention, mode) {
        Ok(rows) => write_boundary_csv(&dir.join("boundary.csv"), &rows).context("writing boundary.csv")?,
        Err(irmc::Error::NoEvents) => {
            eprintln!("no impulse events on the forward paths; boundary.csv has no s_k values");
            let rows = (0..stack.n_steps())
                .map(|k| irmc::policy::BoundaryRow { step: k, s_k: None, target: report.targets[k] })
                .collect::<Vec<_>>();
            write_boundary_csv(&dir.join("boundary.csv"), &rows).context("writing boundary.csv")?;
        }
        Err(e) => return Err(e).context("boundary extraction failed"),
    }
    println!(
        "{}",
        serde_json::json!({
            "value_estimate": report.value_estimate,
            "std_error": report.std_error,
            "n_events": report.n_events,
            "out": dir.display().to_string(),
        })
    );
    Ok(())
}

fn cmd_oracle(o: OracleCommand) -> Result<()> {
    match o {
        OracleCommand::Federico { r, mu, sigma, gamma, c0, c1, x } => {
            let sol = federico_solution(r, mu, sigma, gamma, c0, c1)?;
            let mut v = serde_json::to_value(&sol)?;
            if let Some(x) = x {
                v["x"] = x.into();
                v["value"] = sol.value(x).into();
            }
            println!("{v}");
        }
        OracleCommand::Faustmann { r, mu, sigma } => {
            let s = faustmann_threshold(r, mu, sigma)?;
            println!("{}", serde_json::json!({ "r": r, "mu": mu, "sigma": sigma, "threshold": s }));
        }
        OracleCommand::Guthrie => println!("{}", serde_json::to_string(&GUTHRIE_REFERENCE)?),
        OracleCommand::Dp { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out_dir(out, &cfg)?;
            let sol = brute_force_dp(&cfg.model, &cfg.dp).context("grid dynamic program failed")?;
            let path = dir.join("dp_table.csv");
            sol.write_csv(&path).with_context(|| format!("writing {}", path.display()))?;
            let x0 = cfg.forward.x0[0];
            println!(
                "{}",
                serde_json::json!({
                    "table": path.display().to_string(),
                    "n_states": cfg.dp.n_states,
                    "n_steps": cfg.model.n_steps(),
                    "x0": x0,
                    "value_at_x0": sol.value_at(0, x0),
                })
            );
        }
    }
    Ok(())
}
