//! Invariant audit over a finished event log.
//!
//! The audit folds a record stream and independently re-derives node
//! allocation, project quota usage, and per-job lifecycle state, flagging
//! every point where the stream violates an invariant:
//!
//! - allocation on any node exceeds its capacity in some dimension,
//! - admitted usage of any project exceeds its quota,
//! - a transition takes an edge outside the lifecycle machine,
//! - the stream itself is incoherent (unknown job, missing node binding,
//!   stale `from` state, (t, seq) going backwards).
//!
//! The fold mirrors the controller's accounting rules — quota is charged at
//! admission and released when a placement is released — but recomputes both
//! sides from the log alone, so a buggy controller cannot vouch for itself.
//! `report` and the CLI's post-run check are built on this module.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::job::{JobState, WorkloadSpec};
use crate::resources::ResourceVector;
use crate::sim::{LogRecord, RecordBody};

/// One invariant breach, stamped with the (t, seq) of the offending record.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error(
        "overcommit on node {node} at t={t} seq={seq}: \
         {dimension} allocated {allocated} > capacity {capacity}"
    )]
    Overcommit {
        t: u64,
        seq: u64,
        node: String,
        dimension: String,
        allocated: u64,
        capacity: u64,
    },
    #[error(
        "quota exceeded for project {project} at t={t} seq={seq}: \
         {dimension} admitted {used} > quota {quota}"
    )]
    QuotaExceeded {
        t: u64,
        seq: u64,
        project: String,
        dimension: String,
        used: u64,
        quota: u64,
    },
    #[error("illegal transition for job {job} at t={t} seq={seq}: {from:?} -> {to:?}")]
    IllegalTransition {
        t: u64,
        seq: u64,
        job: String,
        from: JobState,
        to: JobState,
    },
    #[error("malformed stream at t={t} seq={seq}: {detail}")]
    MalformedStream { t: u64, seq: u64, detail: String },
}

/// The state re-derived by the fold: what the log says the world looked like
/// after its last record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayState {
    pub capacity: BTreeMap<String, ResourceVector>,
    pub allocated: BTreeMap<String, ResourceVector>,
    pub quotas: BTreeMap<String, ResourceVector>,
    pub admitted_usage: BTreeMap<String, ResourceVector>,
    pub job_states: BTreeMap<String, JobState>,
    pub job_nodes: BTreeMap<String, String>,
    pub specs: BTreeMap<String, WorkloadSpec>,
}

/// First dimension in which `used` exceeds `limit`, if any.
fn first_excess(used: &ResourceVector, limit: &ResourceVector) -> Option<(String, u64, u64)> {
    if used.cpu_cores > limit.cpu_cores {
        return Some(("cpu_cores".to_string(), used.cpu_cores, limit.cpu_cores));
    }
    if used.memory_gib > limit.memory_gib {
        return Some(("memory_gib".to_string(), used.memory_gib, limit.memory_gib));
    }
    for (model, slices) in &used.accel {
        let cap = limit.accel.get(model).copied().unwrap_or(0);
        if *slices > cap {
            return Some((model.clone(), *slices, cap));
        }
    }
    None
}

/// Folds the records and collects every violation found. Always runs to the
/// end of the stream: a breach is recorded, then the fold continues
/// best-effort so later independent breaches still surface.
pub fn audit(records: &[LogRecord]) -> (ReplayState, Vec<Violation>) {
    let mut st = ReplayState::default();
    let mut violations = Vec::new();
    let mut prev: Option<(u64, u64)> = None;

    for rec in records {
        if let Some((pt, ps)) = prev {
            if (rec.t, rec.seq) <= (pt, ps) {
                violations.push(Violation::MalformedStream {
                    t: rec.t,
                    seq: rec.seq,
                    detail: format!("(t, seq) not increasing after ({pt}, {ps})"),
                });
            }
        }
        prev = Some((rec.t, rec.seq));

        match &rec.body {
            RecordBody::NodeUp {
                node, allocatable, ..
            } => {
                if st.capacity.contains_key(node) {
                    violations.push(Violation::MalformedStream {
                        t: rec.t,
                        seq: rec.seq,
                        detail: format!("node {node} announced twice"),
                    });
                }
                st.capacity.insert(node.clone(), allocatable.clone());
                st.allocated.insert(node.clone(), ResourceVector::zero());
            }
            RecordBody::ProjectUp { project, quota } => {
                st.quotas.insert(project.clone(), quota.clone());
                st.admitted_usage
                    .insert(project.clone(), ResourceVector::zero());
            }
            RecordBody::JobSubmitted { job, spec, .. } => {
                if st.job_states.contains_key(job) {
                    violations.push(Violation::MalformedStream {
                        t: rec.t,
                        seq: rec.seq,
                        detail: format!("job {job} submitted twice"),
                    });
                }
                st.job_states.insert(job.clone(), JobState::Pending);
                st.specs.insert(job.clone(), spec.clone());
            }
            RecordBody::Transition {
                job,
                from,
                to,
                node,
                ..
            } => {
                fold_transition(&mut st, &mut violations, rec, job, *from, *to, node.as_deref());
            }
            _ => {}
        }
    }
    (st, violations)
}

#[allow(clippy::too_many_arguments)]
fn fold_transition(
    st: &mut ReplayState,
    violations: &mut Vec<Violation>,
    rec: &LogRecord,
    job: &str,
    from: JobState,
    to: JobState,
    node: Option<&str>,
) {
    let (t, seq) = (rec.t, rec.seq);
    let Some(current) = st.job_states.get(job).copied() else {
        violations.push(Violation::MalformedStream {
            t,
            seq,
            detail: format!("transition for unknown job {job}"),
        });
        return;
    };
    if current != from {
        violations.push(Violation::MalformedStream {
            t,
            seq,
            detail: format!("job {job} transition claims from {from:?} but replay has {current:?}"),
        });
    }
    if !from.can_transition(to) {
        violations.push(Violation::IllegalTransition {
            t,
            seq,
            job: job.to_string(),
            from,
            to,
        });
        // The edge set says this cannot have happened; stop interpreting it.
        st.job_states.insert(job.to_string(), to);
        return;
    }
    st.job_states.insert(job.to_string(), to);
    let request = st.specs[job].request.clone();
    let project = st.specs[job].project.clone();

    use JobState::*;
    match (from, to) {
        (Pending, Admitted) => {
            let usage = st
                .admitted_usage
                .entry(project.clone())
                .or_insert_with(ResourceVector::zero);
            *usage = usage.add(&request);
            if let Some(quota) = st.quotas.get(&project) {
                if let Some((dimension, used, cap)) = first_excess(usage, quota) {
                    violations.push(Violation::QuotaExceeded {
                        t,
                        seq,
                        project,
                        dimension,
                        used,
                        quota: cap,
                    });
                }
            } else {
                violations.push(Violation::MalformedStream {
                    t,
                    seq,
                    detail: format!("job {job} admitted under unannounced project {project}"),
                });
            }
        }
        (Admitted, Dispatched) => {
            let Some(node) = node else {
                violations.push(Violation::MalformedStream {
                    t,
                    seq,
                    detail: format!("dispatch of {job} carries no node"),
                });
                return;
            };
            st.job_nodes.insert(job.to_string(), node.to_string());
            let Some(alloc) = st.allocated.get_mut(node) else {
                violations.push(Violation::MalformedStream {
                    t,
                    seq,
                    detail: format!("dispatch of {job} to unannounced node {node}"),
                });
                return;
            };
            *alloc = alloc.add(&request);
            if let Some((dimension, allocated, cap)) = first_excess(alloc, &st.capacity[node]) {
                violations.push(Violation::Overcommit {
                    t,
                    seq,
                    node: node.to_string(),
                    dimension,
                    allocated,
                    capacity: cap,
                });
            }
        }
        // Placement-releasing edges: the job leaves its node and gives its
        // quota charge back.
        (Running, Succeeded) | (Running, Failed) | (Running, Evicted) | (Dispatched, Failed) => {
            release(st, violations, t, seq, job, &request, &project);
        }
        // Quota was charged at admission but no placement exists yet.
        (Admitted, Failed) => {
            release_quota(st, violations, t, seq, job, &request, &project);
        }
        _ => {}
    }
}

fn release(
    st: &mut ReplayState,
    violations: &mut Vec<Violation>,
    t: u64,
    seq: u64,
    job: &str,
    request: &ResourceVector,
    project: &str,
) {
    match st.job_nodes.remove(job) {
        Some(node) => {
            let alloc = st.allocated.get_mut(&node).expect("node seen at dispatch");
            match alloc.checked_sub(request) {
                Ok(next) => *alloc = next,
                Err(e) => violations.push(Violation::MalformedStream {
                    t,
                    seq,
                    detail: format!("releasing {job} from {node}: {e}"),
                }),
            }
        }
        None => violations.push(Violation::MalformedStream {
            t,
            seq,
            detail: format!("release of {job} with no recorded placement"),
        }),
    }
    release_quota(st, violations, t, seq, job, request, project);
}

fn release_quota(
    st: &mut ReplayState,
    violations: &mut Vec<Violation>,
    t: u64,
    seq: u64,
    job: &str,
    request: &ResourceVector,
    project: &str,
) {
    let Some(usage) = st.admitted_usage.get_mut(project) else {
        return;
    };
    match usage.checked_sub(request) {
        Ok(next) => *usage = next,
        Err(e) => violations.push(Violation::MalformedStream {
            t,
            seq,
            detail: format!("quota release for {job}: {e}"),
        }),
    }
}
