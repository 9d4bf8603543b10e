use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use mbadmm_core::dist::{self, MessageLog};
use mbadmm_core::engines::EngineKind;
use mbadmm_core::fixtures::{self, BUNDLED_NAMES};
use mbadmm_core::offload::{self, OffloadSpec};
use mbadmm_core::problem::ProblemDocument;
use mbadmm_core::scopf::{self, ContingencySet, PowerCase};
use mbadmm_core::{Prox, RunOutcome, SolverConfig};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Solve(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn solve_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solve(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "mbadmm", version, about = "Multi-block ADMM solvers and fixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one instance and write trace.csv and report.json.
    Run(RunArgs),
    /// Write the bundled fixtures to a directory.
    Fixtures(FixtureArgs),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Engine {
    Block(EngineKind),
    Scopf,
    Offload,
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scopf" => Ok(Engine::Scopf),
            "offload" => Ok(Engine::Offload),
            other => other.parse().map(Engine::Block),
        }
    }
}

/// `s` for `P_i = s·I`, `coupling:s` for `P_i = s·ρA_iᵀA_i`.
fn parse_prox(s: &str) -> Result<Prox, String> {
    let (scaled, num) = match s.strip_prefix("coupling:") {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v: f64 = num.parse().map_err(|_| format!("bad proximal weight `{s}`"))?;
    Ok(if scaled { Prox::CouplingScaled(v) } else { Prox::Scalar(v) })
}

#[derive(Args, Debug)]
struct RunArgs {
    /// two-block, gauss-seidel, jacobi, variable-splitting, gbs, prox-jacobi, scopf or offload
    #[arg(long)]
    engine: Engine,
    /// Instance file. A bundled fixture name works when no such file exists.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "mbadmm-out")]
    out: PathBuf,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `s` (P_i = sI) or `coupling:s` (P_i = sρA_iᵀA_i); a plain number for offload
    #[arg(long, value_parser = parse_prox)]
    prox: Option<Prox>,
    #[arg(long)]
    tol_primal: Option<f64>,
    #[arg(long)]
    tol_dual: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Cost seed for offloading instances that do not list their costs.
    #[arg(long)]
    seed: Option<u64>,
    /// Run as coordinator/worker rounds and write messages.jsonl.
    #[arg(long)]
    simulate: bool,
    /// Record block update times in the trace (makes traces irreproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args, Debug)]
struct FixtureArgs {
    #[arg(long, default_value = "fixtures")]
    out: PathBuf,
    /// Write into a non-empty directory.
    #[arg(long)]
    force: bool,
    /// Print the fixture names and write nothing.
    #[arg(long)]
    list: bool,
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if !path.exists() {
        let name = path.file_name().and_then(|n| n.to_str());
        if let Some((_, text)) = fixtures::bundled().into_iter().find(|(n, _)| Some(*n) == name) {
            return Ok(text);
        }
    }
    fs::read_to_string(path).map_err(io_err(path))
}

impl RunArgs {
    fn config(&self) -> SolverConfig {
        let d = SolverConfig::default();
        SolverConfig {
            rho: self.rho.unwrap_or(d.rho),
            gamma: self.gamma.unwrap_or(d.gamma),
            alpha: self.alpha.unwrap_or(d.alpha),
            prox: self.prox.clone().unwrap_or(d.prox),
            tol_primal: self.tol_primal.unwrap_or(d.tol_primal),
            tol_dual: self.tol_dual.unwrap_or(d.tol_dual),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            seed: self.seed.unwrap_or(d.seed),
            record_timing: self.timing,
            ..d
        }
    }
}

struct Artifacts {
    outcome: RunOutcome,
    log: Option<MessageLog>,
    /// Extra `(file name, contents)` pairs.
    extra: Vec<(&'static str, String)>,
    /// Parameters taken from the instance rather than the solver config.
    params: Option<serde_json::Value>,
}

fn solve_blocks(kind: EngineKind, args: &RunArgs, text: &str, mut cfg: SolverConfig) -> Result<Artifacts, CliError> {
    let doc = ProblemDocument::parse(text).map_err(solve_err)?;
    let p = doc.to_problem().map_err(solve_err)?;
    cfg.start = doc.start_vector().map_err(solve_err)?;
    if args.simulate {
        if !kind.is_jacobi_family() {
            return Err(CliError::Usage(format!("--simulate needs a Jacobi-family engine, got {kind}")));
        }
        let (outcome, log) = dist::simulate(kind, &p, &cfg).map_err(solve_err)?;
        return Ok(Artifacts { outcome, log: Some(log), extra: vec![], params: None });
    }
    let outcome = mbadmm_core::engines::run(kind, &p, &cfg).map_err(solve_err)?;
    Ok(Artifacts { outcome, log: None, extra: vec![], params: None })
}

fn solve_scopf(args: &RunArgs, text: &str, cfg: SolverConfig) -> Result<Artifacts, CliError> {
    let case = PowerCase::parse(text).map_err(solve_err)?;
    let inst = scopf::assemble_scopf(&case, &ContingencySet::from_case(&case)).map_err(solve_err)?;
    let (run, log) = if args.simulate {
        let (run, log) = scopf::simulate_scopf(&inst, &cfg).map_err(solve_err)?;
        (run, Some(log))
    } else {
        (scopf::run_distributed_scopf(&inst, &cfg).map_err(solve_err)?, None)
    };
    let extra = vec![("solution.json", scopf::solutions_to_json(&run.solutions))];
    Ok(Artifacts { outcome: run.outcome, log, extra, params: None })
}

fn solve_offload(args: &RunArgs, text: &str, cfg: SolverConfig) -> Result<Artifacts, CliError> {
    let mut spec = OffloadSpec::parse(text).map_err(solve_err)?;
    if let Some(seed) = args.seed {
        spec.seed = Some(seed);
    }
    let mut inst = spec.instance().map_err(solve_err)?;
    if let Some(rho) = args.rho {
        inst.rho = rho;
    }
    if let Some(gamma) = args.gamma {
        inst.gamma = gamma;
    }
    match &args.prox {
        None => {}
        Some(Prox::Scalar(s)) => inst.prox = *s,
        Some(_) => return Err(CliError::Usage("offload takes a plain number for --prox".into())),
    }
    let (run, log) = if args.simulate {
        let (run, log) = offload::simulate_offloading(&inst, &cfg).map_err(solve_err)?;
        (run, Some(log))
    } else {
        (offload::run_offloading(&inst, &cfg).map_err(solve_err)?, None)
    };
    let extra = vec![("allocation.json", run.allocation.to_json())];
    let params = json!({ "rho": inst.rho, "gamma": inst.gamma, "prox": inst.prox, "theta": inst.theta.as_slice() });
    Ok(Artifacts { outcome: run.outcome, log, extra, params: Some(params) })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))
}

fn run(args: RunArgs) -> Result<i32, CliError> {
    let text = read_input(&args.input)?;
    let cfg = args.config();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let art = match args.engine {
        Engine::Block(kind) => solve_blocks(kind, &args, &text, cfg.clone())?,
        Engine::Scopf => solve_scopf(&args, &text, cfg.clone())?,
        Engine::Offload => solve_offload(&args, &text, cfg.clone())?,
    };
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let report = &art.outcome.report;
    let engine = match args.engine {
        Engine::Block(k) => k.name(),
        Engine::Scopf => "scopf",
        Engine::Offload => "offload",
    };
    let mut doc = json!({
        "engine": engine,
        "input": args.input.display().to_string(),
        "simulate": args.simulate,
        "config": {
            "rho": cfg.rho,
            "gamma": cfg.gamma,
            "alpha": cfg.alpha,
            "prox": format!("{:?}", cfg.prox),
            "tol_primal": cfg.tol_primal,
            "tol_dual": cfg.tol_dual,
            "max_iter": cfg.max_iter,
        },
        "report": report.to_json(),
    });
    if let Some(params) = &art.params {
        doc["instance"] = params.clone();
    }
    write(&args.out, "trace.csv", &art.outcome.trace.to_csv())?;
    write(&args.out, "report.json", &serde_json::to_string_pretty(&doc).expect("report serializes"))?;
    if let Some(log) = &art.log {
        write(&args.out, "messages.jsonl", &log.to_jsonl())?;
    }
    for (name, contents) in &art.extra {
        write(&args.out, name, contents)?;
    }
    println!("{engine}: {:?} after {} iterations, objective {:.10e}", report.status, report.iterations, report.objective);
    Ok(report.status.exit_code())
}

fn write_fixtures(args: FixtureArgs) -> Result<i32, CliError> {
    if args.list {
        for name in BUNDLED_NAMES {
            println!("{name}");
        }
        return Ok(0);
    }
    if args.out.is_dir() && !args.force {
        let mut entries = fs::read_dir(&args.out).map_err(io_err(&args.out))?;
        if entries.next().is_some() {
            return Err(CliError::Usage(format!("{} is not empty; pass --force to overwrite", args.out.display())));
        }
    }
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    for (name, text) in fixtures::bundled() {
        write(&args.out, name, &text)?;
    }
    println!("wrote {} fixtures to {}", BUNDLED_NAMES.len(), args.out.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Fixtures(args) => write_fixtures(args),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
