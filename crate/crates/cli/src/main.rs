//! Operator entry point. `run` executes a scenario end to end and leaves
//! artifacts (event log, metrics export, report) in the output directory;
//! `run --interactive` opens a console on a live engine instead. `report`
//! and `validate` work on files alone.
//!
//! Exit codes are part of the contract: 0 clean, 1 validation problem,
//! 2 invariant violation detected by the built-in replay audit.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flotilla_core::sim::{Engine, EventLog, RunOutput, Scenario};
use flotilla_core::{audit, JobState, ResourceVector, RunReport, WorkloadKind, WorkloadSpec};

mod session;

use session::Console;

#[derive(Parser)]
#[command(name = "flotilla", version, about = "Federated workload orchestrator and simulator")]
struct Cli {
    /// Replace the scenario's seed before running.
    #[arg(long, global = true, value_name = "SEED")]
    seed_override: Option<u64>,

    /// Directory that receives run artifacts (events.ndjson, metrics.txt, report.txt).
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Write the metrics export to this path instead of <out-dir>/metrics.txt.
    #[arg(long, global = true, value_name = "FILE")]
    metrics_out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and execute a scenario, writing artifacts to the output directory.
    Run {
        scenario: PathBuf,
        /// Open an interactive console on the loaded scenario instead of
        /// running straight to completion.
        #[arg(long)]
        interactive: bool,
    },
    /// Submit a workload to a live session (console or service mode only).
    Submit(SubmitArgs),
    /// Show queue and node state of a live session (console or service mode only).
    Status,
    /// Render the report for a previously written event log.
    Report { eventlog: PathBuf },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum KindArg {
    Batch,
    Interactive,
}

/// Workload flags shared by the `submit` subcommand and the console's
/// `submit` line (both go through the same parser).
#[derive(Args)]
pub struct SubmitArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Batch)]
    pub kind: KindArg,

    /// Requested CPU cores.
    #[arg(long, default_value_t = 0)]
    pub cpu: u64,

    /// Requested memory in GiB.
    #[arg(long, default_value_t = 0)]
    pub mem: u64,

    /// Accelerator request as model=slices (for example a100-slice=2); repeatable.
    #[arg(long, value_parser = parse_accel, value_name = "MODEL=SLICES")]
    pub accel: Vec<(String, u64)>,

    #[arg(long, default_value = "adhoc")]
    pub project: String,

    #[arg(long, default_value = "operator")]
    pub user: String,

    /// Job id; generated when omitted.
    #[arg(long)]
    pub id: Option<String>,

    /// Simulated run time in sim-seconds.
    #[arg(long, default_value_t = 120)]
    pub duration: u64,

    #[arg(long, default_value_t = 0)]
    pub retries: u32,

    #[arg(long, default_value = "")]
    pub image: String,

    /// Command tokens for the workload.
    #[arg(trailing_var_arg = true)]
    pub command: Vec<String>,
}

fn parse_accel(raw: &str) -> Result<(String, u64), String> {
    let (model, slices) = raw
        .split_once('=')
        .ok_or_else(|| format!("expected MODEL=SLICES, got {raw:?}"))?;
    if model.is_empty() {
        return Err("accelerator model must not be empty".to_string());
    }
    let slices: u64 = slices
        .parse()
        .map_err(|e| format!("slice count {slices:?}: {e}"))?;
    Ok((model.to_string(), slices))
}

impl SubmitArgs {
    /// Turn the flags into a spec; `fallback_id` is used when --id is absent.
    pub fn into_spec(self, fallback_id: String) -> WorkloadSpec {
        let mut request = ResourceVector::new(self.cpu, self.mem);
        for (model, slices) in self.accel {
            request = request.with_accel(model, slices);
        }
        WorkloadSpec {
            id: self.id.unwrap_or(fallback_id),
            kind: match self.kind {
                KindArg::Batch => WorkloadKind::Batch,
                KindArg::Interactive => WorkloadKind::Interactive,
            },
            project: self.project,
            user: self.user,
            request,
            image: self.image,
            command: self.command,
            est_duration: self.duration,
            max_retries: self.retries,
            submit_time: 0, // overwritten with the engine clock on submission
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            ref scenario,
            interactive,
        } => cmd_run(&cli, scenario, interactive),
        Command::Submit(_) | Command::Status => {
            eprintln!(
                "error: no live session: `submit` and `status` need the console \
                 (`flotilla run --interactive <scenario>`) or service mode"
            );
            1
        }
        Command::Report { ref eventlog } => cmd_report(eventlog),
        Command::Validate { ref scenario } => cmd_validate(scenario),
    };
    ExitCode::from(code)
}

fn load_scenario(path: &Path, seed_override: Option<u64>) -> Result<Scenario, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut scenario = Scenario::from_json(&text).map_err(|e| e.to_string())?;
    if let Some(seed) = seed_override {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn cmd_validate(path: &Path) -> u8 {
    match load_scenario(path, None) {
        Ok(scn) => {
            println!(
                "scenario OK: {} ({} workloads, {} workflows, seed {})",
                path.display(),
                scn.workloads.len(),
                scn.workflows.len(),
                scn.seed
            );
            0
        }
        Err(e) => {
            eprintln!("validation error: {e}");
            1
        }
    }
}

fn cmd_run(cli: &Cli, path: &Path, interactive: bool) -> u8 {
    let scenario = match load_scenario(path, cli.seed_override) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("validation error: {e}");
            return 1;
        }
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut engine = match Engine::new(scenario, &name) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("validation error: {e}");
            return 1;
        }
    };

    if interactive {
        let stdin = io::stdin();
        let mut console = Console::new(&mut engine);
        if let Err(e) = console.drive(&mut stdin.lock(), &mut io::stdout()) {
            eprintln!("invariant violation: {e}");
            return 2;
        }
    } else if let Err(e) = engine.run_to_completion() {
        eprintln!("invariant violation: {e}");
        return 2;
    }

    let out = engine.finish();
    if out.horizon_reached {
        eprintln!(
            "warning: run stopped at the safety horizon (t={}); some jobs may be stuck",
            out.end_time
        );
    }
    write_artifacts(cli, &out)
}

/// Persist the run's artifacts, print the report, then audit the log.
fn write_artifacts(cli: &Cli, out: &RunOutput) -> u8 {
    if let Err(e) = fs::create_dir_all(&cli.out_dir) {
        eprintln!("cannot create {}: {e}", cli.out_dir.display());
        return 1;
    }
    let events_path = cli.out_dir.join("events.ndjson");
    let metrics_path = cli
        .metrics_out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join("metrics.txt"));
    let report_path = cli.out_dir.join("report.txt");

    let report = RunReport::from_records(out.log.records()).render();
    let writes = [
        (&events_path, out.log.to_ndjson()),
        (&metrics_path, out.metrics.export_text()),
        (&report_path, report.clone()),
    ];
    for (path, content) in &writes {
        if let Err(e) = fs::write(path, content) {
            eprintln!("cannot write {}: {e}", path.display());
            return 1;
        }
    }
    print!("{report}");
    let _ = io::stdout().flush();

    let (_, violations) = audit(out.log.records());
    if let Some(first) = violations.first() {
        eprintln!("invariant violation: {first}");
        eprintln!("({} violation(s) total; full log at {})", violations.len(), events_path.display());
        return 2;
    }
    0
}

fn cmd_report(path: &Path) -> u8 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return 1;
        }
    };
    match EventLog::parse_ndjson(&text) {
        Ok(log) => {
            print!("{}", RunReport::from_records(log.records()).render());
            0
        }
        Err(e) => {
            eprintln!("corrupt log: {e}");
            1
        }
    }
}

/// One line per state with a stable order, used by the console's `status`.
pub fn state_summary(engine: &Engine) -> String {
    let mut text = format!("t={}\n", engine.now());
    let mut by_state: std::collections::BTreeMap<&'static str, Vec<&str>> =
        std::collections::BTreeMap::new();
    for (id, job) in &engine.state().jobs {
        let key = match job.state {
            JobState::Pending => "pending",
            JobState::Admitted => "admitted",
            JobState::Dispatched => "dispatched",
            JobState::Running => "running",
            JobState::Succeeded => "succeeded",
            JobState::Failed => "failed",
            JobState::Evicted => "evicted",
        };
        by_state.entry(key).or_default().push(id);
    }
    for (state, ids) in &by_state {
        text.push_str(&format!("{state} ({}): {}\n", ids.len(), ids.join(" ")));
    }
    for node in engine.nodes() {
        let free = node.free();
        let cap = &node.allocatable;
        text.push_str(&format!(
            "node {}: free {}/{} cpu, {}/{} mem\n",
            node.name, free.cpu_cores, cap.cpu_cores, free.memory_gib, cap.memory_gib
        ));
    }
    text
}
