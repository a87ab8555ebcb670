//! Interactive console on a live engine. Commands arrive one per line;
//! `submit` reuses the exact flag surface of the `submit` subcommand, so
//! scripts can pipe the same lines they would pass on the command line.
//!
//! User mistakes (bad flags, unknown project, empty request) are reported
//! and the session continues; an engine error is an invariant problem and
//! aborts the session.

use std::io::{BufRead, Write};

use clap::Parser;
use flotilla_core::sim::{Engine, SimError};
use flotilla_core::RunReport;

use crate::{state_summary, SubmitArgs};

#[derive(Parser)]
#[command(name = "submit", disable_help_flag = false)]
struct SubmitLine {
    #[command(flatten)]
    args: SubmitArgs,
}

const HELP: &str = "\
commands:
  submit --kind <batch|interactive> --cpu N --mem N [--accel MODEL=SLICES]...
         [--project P] [--user U] [--id ID] [--duration S] [--retries N]
         [--image IMG] [CMD...]      queue a workload at the current clock
  status                             job states and node headroom
  step [N]                           process the next N quanta of work
  run                                drain the simulation to completion
  report                             render the report for the log so far
  logs                               dump the event log as NDJSON
  quit                               leave the console (artifacts are written)
";

pub struct Console<'a> {
    engine: &'a mut Engine,
    serial: u64,
}

impl<'a> Console<'a> {
    pub fn new(engine: &'a mut Engine) -> Self {
        Self { engine, serial: 0 }
    }

    pub fn drive(&mut self, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), SimError> {
        let _ = writeln!(out, "flotilla console at t={}; 'help' lists commands", self.engine.now());
        let mut line = String::new();
        loop {
            let _ = write!(out, "> ");
            let _ = out.flush();
            line.clear();
            match input.read_line(&mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => {}
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.first().copied() {
                None => {}
                Some("quit") | Some("exit") => break,
                Some("help") => {
                    let _ = write!(out, "{HELP}");
                }
                Some("submit") => self.cmd_submit(&tokens, out),
                Some("status") => {
                    let _ = write!(out, "{}", state_summary(self.engine));
                }
                Some("step") => {
                    let n: u64 = tokens
                        .get(1)
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(1);
                    let mut advanced = false;
                    for _ in 0..n {
                        if !self.engine.step()? {
                            break;
                        }
                        advanced = true;
                    }
                    if advanced {
                        let _ = writeln!(out, "t={}", self.engine.now());
                    } else {
                        let _ = writeln!(out, "idle: nothing left to process");
                    }
                }
                Some("run") => {
                    self.engine.run_to_completion()?;
                    let _ = writeln!(out, "drained at t={}", self.engine.now());
                }
                Some("report") => {
                    let report = RunReport::from_records(self.engine.log().records());
                    let _ = write!(out, "{}", report.render());
                }
                Some("logs") => {
                    let _ = write!(out, "{}", self.engine.log().to_ndjson());
                }
                Some(other) => {
                    let _ = writeln!(out, "unknown command {other:?}; try 'help'");
                }
            }
        }
        Ok(())
    }

    fn cmd_submit(&mut self, tokens: &[&str], out: &mut dyn Write) {
        match SubmitLine::try_parse_from(tokens) {
            Err(e) => {
                let _ = write!(out, "{e}");
            }
            Ok(parsed) => {
                let spec = parsed.args.into_spec(format!("adhoc-{}", self.serial));
                let id = spec.id.clone();
                match self.engine.submit_adhoc(spec) {
                    Ok(()) => {
                        self.serial += 1;
                        let _ = writeln!(out, "{id}");
                    }
                    Err(e) => {
                        let _ = writeln!(out, "error: {e}");
                    }
                }
            }
        }
    }
}
