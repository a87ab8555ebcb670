//! Human-readable run summary, folded from an event log.
//!
//! Every figure in the report is recomputed from the raw records — nothing is
//! taken from live engine state — so the same log always renders the same
//! bytes, and the report can be regenerated long after the run from the
//! log file alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::job::{JobState, WorkloadKind};
use crate::resources::ResourceVector;
use crate::sim::{LogRecord, RecordBody};

/// Totals and headline figures for one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub submitted: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub evictions: u64,
    /// Dispatch count per node; virtual nodes carry the provider site name,
    /// so this doubles as the per-site federation split.
    pub dispatched_by_site: BTreeMap<String, u64>,
    /// Longest submit-to-dispatch delay seen by any interactive job.
    pub max_interactive_wait: u64,
    /// Exact (project, dimension) -> resource-seconds, open placements
    /// charged through the last record.
    pub resource_seconds: BTreeMap<(String, String), u128>,
    pub end_time: u64,
}

fn dims(rv: &ResourceVector) -> Vec<(String, u64)> {
    let mut out = vec![
        ("cpu_cores".to_string(), rv.cpu_cores),
        ("memory_gib".to_string(), rv.memory_gib),
    ];
    for (model, slices) in &rv.accel {
        out.push((model.clone(), *slices));
    }
    out
}

impl RunReport {
    /// Folds an ordered record stream into a report.
    pub fn from_records(records: &[LogRecord]) -> Self {
        let mut report = RunReport::default();
        // job -> (submit t, kind); filled at submission, read at dispatch.
        let mut submitted_at: BTreeMap<String, (u64, WorkloadKind)> = BTreeMap::new();
        let mut requests: BTreeMap<String, (ResourceVector, String)> = BTreeMap::new();
        let mut seen_dispatch: BTreeMap<String, ()> = BTreeMap::new();
        // job -> placement-open timestamp, for the resource-second integral.
        let mut open: BTreeMap<String, u64> = BTreeMap::new();

        for rec in records {
            report.end_time = rec.t;
            match &rec.body {
                RecordBody::RunMeta { scenario, seed } => {
                    report.scenario = scenario.clone();
                    report.seed = *seed;
                }
                RecordBody::JobSubmitted { job, spec, .. } => {
                    report.submitted += 1;
                    submitted_at.insert(job.clone(), (rec.t, spec.kind));
                    requests.insert(job.clone(), (spec.request.clone(), spec.project.clone()));
                }
                RecordBody::Transition { job, to, node, .. } => match to {
                    JobState::Dispatched => {
                        if let Some(site) = node {
                            *report.dispatched_by_site.entry(site.clone()).or_insert(0) += 1;
                        }
                        if let Some((t0, WorkloadKind::Interactive)) = submitted_at.get(job) {
                            if seen_dispatch.insert(job.clone(), ()).is_none() {
                                let wait = rec.t.saturating_sub(*t0);
                                report.max_interactive_wait =
                                    report.max_interactive_wait.max(wait);
                            }
                        }
                        open.insert(job.clone(), rec.t);
                    }
                    JobState::Succeeded | JobState::Failed | JobState::Evicted => {
                        if *to == JobState::Succeeded {
                            report.succeeded += 1;
                        } else if *to == JobState::Failed {
                            report.failed += 1;
                        } else {
                            report.evictions += 1;
                        }
                        if let Some(start) = open.remove(job) {
                            if let Some((request, project)) = requests.get(job) {
                                accrue(&mut report, project, request, start, rec.t);
                            }
                        }
                    }
                    _ => {}
                },
                _ => {}
            }
        }
        // Placements still open when the log ends are charged to its last
        // timestamp, mirroring the metrics fold.
        let end = report.end_time;
        for (job, start) in open {
            if let Some((request, project)) = requests.get(&job) {
                let (request, project) = (request.clone(), project.clone());
                accrue(&mut report, &project, &request, start, end);
            }
        }
        report
    }

    /// Renders the report as stable plain text; same report, same bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario: {}", self.scenario);
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "submitted: {}", self.submitted);
        let _ = writeln!(out, "succeeded: {}", self.succeeded);
        let _ = writeln!(out, "failed: {}", self.failed);
        let _ = writeln!(out, "evictions: {}", self.evictions);
        let _ = writeln!(out, "end time: {}", self.end_time);
        let _ = writeln!(out, "max interactive wait: {}", self.max_interactive_wait);
        let _ = writeln!(out, "dispatched by site:");
        for (site, count) in &self.dispatched_by_site {
            let _ = writeln!(out, "  {site}: {count}");
        }
        let _ = writeln!(out, "resource-seconds by project:");
        for ((project, dim), total) in &self.resource_seconds {
            let _ = writeln!(out, "  {project} {dim}: {total}");
        }
        out
    }
}

fn accrue(report: &mut RunReport, project: &str, request: &ResourceVector, start: u64, end: u64) {
    let dur = end.saturating_sub(start) as u128;
    for (dim, held) in dims(request) {
        if held == 0 {
            continue;
        }
        *report
            .resource_seconds
            .entry((project.to_string(), dim))
            .or_insert(0) += held as u128 * dur;
    }
}
