use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use mlfp::harness::{
    self, check_bounds, emit_csv, emit_json, read_csv, run_experiment, to_json_string, ExperimentConfig, Schedule,
    DEFAULT_SLACK,
};
use mlfp::model::{greedy_action, value_from_q, ExperimentModel, ModelSpec, ModelVisitor};
use mlfp::theory::{self, scheme_sampler_calls, TheoryConstants};
use mlfp::{mlfp_q, CostLedger, MlfpParams, ThetaPath};

const USAGE_ERROR: u8 = 1;
const CHECK_FAILURE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "mlfp", version, about = "Multilevel fixed-point Monte Carlo estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print convergence and complexity constants as JSON.
    Constants(ConstantsArgs),
    /// Evaluate the estimator once at one state.
    Estimate(EstimateArgs),
    /// Run a replication experiment and write the CSV report.
    Experiment(ExperimentArgs),
    /// Check a CSV report against the error bound and the cost ledger.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct ConstantsArgs {
    /// Contraction constant c_w·L.
    #[arg(long = "cw-l")]
    cw_l: f64,
    #[arg(long)]
    actions: usize,
    #[arg(long = "M")]
    m: u64,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// Discount factor, for the simpler sufficient condition on M.
    #[arg(long)]
    delta: Option<f64>,
    /// Cost of one sampler call in the complexity budget.
    #[arg(long, default_value_t = 1.0)]
    unit_cost: f64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Model specification (JSON).
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "M")]
    m: u64,
    #[arg(long)]
    n: u32,
    #[arg(long, env = "MLFP_SEED", default_value_t = 0)]
    seed: u64,
    /// Comma-separated state coordinates; a state index for finite models.
    #[arg(long, allow_hyphen_values = true)]
    state: String,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Model specification (JSON).
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "M")]
    m: u64,
    #[arg(long)]
    n_max: u32,
    #[arg(long)]
    reps: usize,
    #[arg(long, env = "MLFP_SEED", default_value_t = 0)]
    seed: u64,
    /// One state per line, coordinates separated by commas.
    #[arg(long)]
    test_states: PathBuf,
    /// CSV report path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the rows as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Worker threads; defaults to the machine parallelism.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SLACK)]
    slack: f64,
    /// Allow M below the convergence threshold.
    #[arg(long)]
    no_bound_check: bool,
    /// Record wall-clock time per row (the report is then not reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// CSV report produced by `experiment`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long = "cw-l")]
    cw_l: f64,
    #[arg(long)]
    actions: usize,
    #[arg(long = "M")]
    m: u64,
    #[arg(long)]
    kappa: f64,
    #[arg(long, default_value_t = DEFAULT_SLACK)]
    slack: f64,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl std::fmt::Display) -> Self {
        Self {
            code: USAGE_ERROR,
            message: message.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(USAGE_ERROR)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Constants(args) => cmd_constants(&args),
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Experiment(args) => cmd_experiment(&args),
        Command::Check(args) => cmd_check(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn print_json(value: &Value) {
    println!("{}", to_json_string(value));
}

fn cmd_constants(args: &ConstantsArgs) -> CmdResult {
    let min_m = theory::min_m(args.cw_l, args.actions).map_err(Failure::usage)?;
    let alpha = theory::alpha(args.cw_l, args.actions, args.m);
    let mut out = Map::new();
    out.insert("M".into(), json!(args.m));
    out.insert("actions".into(), json!(args.actions));
    out.insert("cw_l".into(), json!(args.cw_l));
    out.insert("min_M".into(), json!(min_m));
    out.insert("alpha".into(), json!(alpha));
    out.insert("convergence_condition".into(), json!(alpha < 1.0));
    if alpha < 1.0 {
        out.insert("beta".into(), json!((3.0 * args.m as f64).ln() / (1.0 / alpha).ln()));
    }
    if let Some(delta) = args.delta {
        out.insert(
            "simple_min_M".into(),
            json!(theory::simple_min_m(delta, args.actions).map_err(Failure::usage)?),
        );
    }
    if let Some(kappa) = args.kappa {
        out.insert(
            "gamma".into(),
            json!(theory::gamma(kappa, args.cw_l, args.actions).map_err(Failure::usage)?),
        );
    }
    if let Some(eps) = args.eps {
        let kappa = args.kappa.ok_or_else(|| Failure::usage("--eps needs --kappa"))?;
        let constants = TheoryConstants::new(args.cw_l, args.actions, args.m, kappa).map_err(Failure::usage)?;
        out.insert(
            "n_for_eps".into(),
            json!(constants.n_for_eps(eps).map_err(Failure::usage)?),
        );
        out.insert(
            "complexity_budget".into(),
            json!(constants.complexity_budget(eps, args.unit_cost)),
        );
    }
    print_json(&Value::Object(out));
    Ok(())
}

/// Parse `"1.5,-2,0"` into coordinates.
fn parse_coordinates(text: &str) -> Result<Vec<f64>, String> {
    let coords = text
        .split(',')
        .map(|part| {
            let part = part.trim();
            part.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("malformed coordinate `{part}` in state `{text}`"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(coords)
}

/// One state per line; blank lines and `#` comments are skipped.
fn read_test_states(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| {
            let line = line.trim();
            !line.is_empty() && !line.starts_with('#')
        })
        .map(|(i, line)| parse_coordinates(line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

struct Estimate<'a> {
    params: &'a MlfpParams,
    coords: &'a [f64],
}

impl ModelVisitor for Estimate<'_> {
    type Output = Result<Value, Failure>;

    fn visit<C: ExperimentModel>(self, model: &C) -> Self::Output {
        let x = model.parse_state(self.coords).map_err(Failure::usage)?;
        let mut ledger = CostLedger::new();
        let q = mlfp_q(model, self.params, &x, &ThetaPath::root(), &mut ledger).map_err(Failure::usage)?;
        Ok(json!({
            "q": q.as_slice(),
            "value": value_from_q(q.as_slice()),
            "greedy_action": greedy_action(q.as_slice()).index(),
            "sampler_calls": ledger.sampler_calls().to_string(),
        }))
    }
}

fn cmd_estimate(args: &EstimateArgs) -> CmdResult {
    let model = ModelSpec::from_path(&args.model)
        .and_then(|spec| spec.build())
        .map_err(Failure::usage)?;
    let coords = parse_coordinates(&args.state).map_err(Failure::usage)?;
    let params = MlfpParams::new(args.m, args.n, args.seed).map_err(Failure::usage)?;
    let out = model.visit(Estimate {
        params: &params,
        coords: &coords,
    })?;
    print_json(&out);
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs) -> CmdResult {
    let spec = ModelSpec::from_path(&args.model).map_err(Failure::usage)?;
    let states = read_test_states(&args.test_states).map_err(Failure::usage)?;
    let mut config = ExperimentConfig::new(spec, args.m, args.n_max, args.reps, args.seed).with_test_states(states);
    config.slack = args.slack;
    config.check_bounds = !args.no_bound_check;
    config.record_timing = args.timing;
    let schedule = match args.threads {
        Some(0) => return Err(Failure::usage("--threads must be at least 1")),
        Some(k) => Schedule::Threads(k),
        None => Schedule::Parallel,
    };
    let rows = run_experiment(&config, schedule).map_err(Failure::usage)?;
    let actions = config.model.build().map_err(Failure::usage)?.action_count();

    let written = write_reports(&rows, args);
    if let Err(e) = written {
        remove_outputs(args);
        return Err(Failure::usage(e));
    }

    let max_rmse = rows.iter().map(|r| r.weighted_sup_rmse).fold(0.0, f64::max);
    let total_calls: u128 = rows.iter().map(|r| r.sampler_calls * r.reps as u128).sum();
    let ledger_ok = rows
        .iter()
        .all(|r| scheme_sampler_calls(r.n, r.m, actions).ok() == Some(r.sampler_calls));
    println!(
        "rows={} max_rmse={} total_sampler_calls={} ledger={}",
        rows.len(),
        harness::format_float(max_rmse),
        total_calls,
        if ledger_ok { "pass" } else { "fail" }
    );
    Ok(())
}

fn write_reports(rows: &[harness::ReportRow], args: &ExperimentArgs) -> Result<(), harness::HarnessError> {
    emit_csv(rows, &args.out)?;
    if let Some(json) = &args.json {
        emit_json(rows, json)?;
    }
    Ok(())
}

fn remove_outputs(args: &ExperimentArgs) {
    let _ = fs::remove_file(&args.out);
    if let Some(json) = &args.json {
        let _ = fs::remove_file(json);
    }
}

fn cmd_check(args: &CheckArgs) -> CmdResult {
    let rows = read_csv(&args.report).map_err(Failure::usage)?;
    if !(args.slack.is_finite() && args.slack >= 0.0) {
        return Err(Failure::usage(format!("invalid slack {}", args.slack)));
    }
    let constants = TheoryConstants::new(args.cw_l, args.actions, args.m, args.kappa).map_err(Failure::usage)?;
    let report = check_bounds(&rows, &constants, args.slack);
    for verdict in &report.rows {
        println!(
            "row {} n={} {} {}",
            verdict.index,
            verdict.n,
            if verdict.passed() { "PASS" } else { "FAIL" },
            verdict.diagnostic()
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<String> = report.failures().map(|v| v.index.to_string()).collect();
        Err(Failure {
            code: CHECK_FAILURE,
            message: format!("bound check failed for rows {}", failed.join(", ")),
        })
    }
}
