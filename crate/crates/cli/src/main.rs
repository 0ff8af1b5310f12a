//! `qbd`: batch runner, REPL, benchmark driver and protocol server.
//!
//! Exit status: 0 when the program halts (or stops where asked), 1 when it
//! faults or a benchmark fails, 2 for usage errors and unloadable input.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use qbd::bench::{run_scenario, Report, Scenario, Tier};
use qbd::qvm::VmConfig;
use qbd::repl::Repl;
use qbd::session::{render_tuples, tuple_refs, Mode, Session, SessionConfig, SLICE};
use qbd_service::{ProgramSource, Server, ServiceConfig, DEFAULT_BIND};

#[derive(Parser)]
#[command(
    name = "qbd",
    version,
    about = "Query-based debugger for QASM programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a program, printing events and final query results.
    Run {
        program: PathBuf,
        /// Query to maintain while the program runs (repeatable).
        #[arg(long = "query", short)]
        queries: Vec<String>,
        /// Stop at the first change of any query result.
        #[arg(long)]
        stop_on_change: bool,
        /// Stop after this many instructions.
        #[arg(long)]
        max_instr: Option<u64>,
        /// Write the instrumented program here before running.
        #[arg(long)]
        emit_instrumented: Option<PathBuf>,
    },
    /// Interactive session; reads commands from stdin or a script.
    Repl {
        program: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Measure overhead tiers.
    Bench {
        /// Scenario name (repeatable; default: micro, molecules, astshare).
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        /// Tier name (repeatable; default: all tiers).
        #[arg(long = "tier")]
        tiers: Vec<String>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Write results to a `.csv` or `.json` file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a session over WebSocket.
    Serve {
        program: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_BIND)]
        bind: String,
        /// Directory with the UI bundle, served at `/`.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
}

/// Errors that should exit with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn vm_config() -> anyhow::Result<VmConfig> {
    let mut c = VmConfig::default();
    if let Ok(v) = std::env::var("QBD_GC_THRESHOLD") {
        c.gc_threshold = v.parse().map_err(|_| {
            Usage(format!(
                "QBD_GC_THRESHOLD must be a positive integer, got `{v}`"
            ))
        })?;
    }
    Ok(c)
}

fn read_program(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qbd: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<ExitCode> {
    let config = SessionConfig {
        vm: vm_config()?,
        ..SessionConfig::default()
    };
    match cmd {
        Cmd::Run {
            program,
            queries,
            stop_on_change,
            max_instr,
            emit_instrumented,
        } => run(
            &program,
            &queries,
            stop_on_change,
            max_instr,
            emit_instrumented,
            config,
        ),
        Cmd::Repl { program, script } => {
            let mut repl = Repl::new(config);
            let stdout = io::stdout().lock();
            match script {
                Some(path) => {
                    let f = std::fs::File::open(&path)
                        .map_err(|e| Usage(format!("{}: {e}", path.display())))?;
                    repl.run_file(program.as_deref(), io::BufReader::new(f), stdout)?;
                }
                None => repl.run_file(program.as_deref(), io::stdin().lock(), stdout)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bench {
            scenarios,
            tiers,
            reps,
            out,
        } => bench(scenarios, tiers, reps, out.as_deref(), &config.vm),
        Cmd::Serve {
            program,
            bind,
            assets,
        } => serve(program.as_deref(), bind, assets, config),
    }
}

fn run(
    path: &Path,
    queries: &[String],
    stop_on_change: bool,
    max_instr: Option<u64>,
    emit: Option<PathBuf>,
    config: SessionConfig,
) -> anyhow::Result<ExitCode> {
    let source = read_program(path)?;
    let mut s =
        Session::attach(&source, config).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    if let Some(out) = emit {
        std::fs::write(&out, s.emit_instrumented())
            .with_context(|| format!("cannot write {}", out.display()))?;
    }
    let mut ids = Vec::new();
    for q in queries {
        let (id, _) = s
            .add_query(q, stop_on_change)
            .map_err(|e| Usage(format!("query `{q}`: {e}")))?;
        ids.push(id);
    }

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut printed = 0;
    s.start()?;
    let mut budget = max_instr;
    while *s.mode() == Mode::Running {
        let slice = budget.map_or(SLICE, |b| b.min(SLICE));
        if slice == 0 {
            s.interrupt()?;
            break;
        }
        let before = s.vm().counters().instructions;
        s.advance(slice);
        if let Some(b) = budget.as_mut() {
            *b -= s.vm().counters().instructions - before;
        }
        for r in &s.log()[printed..] {
            writeln!(out, "{r}")?;
        }
        printed = s.log().len();
    }
    for r in &s.log()[printed..] {
        writeln!(out, "{r}")?;
    }

    for id in ids {
        let rs = s.results(id)?;
        writeln!(out, "q{id} {}", render_tuples(&tuple_refs(s.vm(), &rs)))?;
    }
    let c = s.vm().counters();
    writeln!(
        out,
        "{} after {} instructions, {} events, {} collections",
        s.mode(),
        c.instructions,
        c.events,
        c.gc_runs
    )?;
    Ok(match s.mode() {
        Mode::Faulted(_) => ExitCode::from(1),
        _ => ExitCode::SUCCESS,
    })
}

fn bench(
    scenarios: Vec<String>,
    tiers: Vec<String>,
    reps: usize,
    out: Option<&Path>,
    vm: &VmConfig,
) -> anyhow::Result<ExitCode> {
    let names: Vec<String> = if scenarios.is_empty() {
        Scenario::STANDARD.iter().map(|s| s.to_string()).collect()
    } else {
        scenarios
    };
    let tiers: Vec<Tier> = if tiers.is_empty() {
        Tier::ALL.to_vec()
    } else {
        tiers
            .iter()
            .map(|t| t.parse().map_err(|e| Usage(format!("{e}"))))
            .collect::<Result<_, _>>()?
    };
    let format = match out.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        None if out.is_none() => None,
        Some("csv") => Some("csv"),
        Some("json") => Some("json"),
        _ => return Err(Usage("--out must end in .csv or .json".into()).into()),
    };
    let mut rows = Vec::new();
    for name in &names {
        let scenario = Scenario::named(name).map_err(|e| Usage(e.to_string()))?;
        eprintln!("bench {name}");
        rows.extend(run_scenario(&scenario, &tiers, reps, vm)?);
    }
    let report = Report { rows };
    print!("{}", report.to_table());
    if let (Some(path), Some(fmt)) = (out, format) {
        let text = if fmt == "csv" {
            report.to_csv()?
        } else {
            report.to_json()?
        };
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(
    program: Option<&Path>,
    bind: String,
    assets: Option<PathBuf>,
    session: SessionConfig,
) -> anyhow::Result<ExitCode> {
    let program = match program {
        Some(p) => {
            let source = read_program(p)?;
            if let Err(e) = Session::attach(&source, session.clone()) {
                bail!(Usage(format!("{}: {e}", p.display())));
            }
            Some(ProgramSource {
                name: p.display().to_string(),
                source,
            })
        }
        None => None,
    };
    let config = ServiceConfig {
        session,
        program,
        assets,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let server = Server::bind(&bind, config).await?;
        println!("listening on {}", server.local_addr());
        io::stdout().flush()?;
        server.wait().await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}
