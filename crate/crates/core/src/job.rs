//! Workload specifications and the job lifecycle state machine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resources::ResourceVector;

/// Workload class. Interactive workloads hold strict priority and are never
/// evicted; batch workloads run opportunistically and are always evictable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorkloadKind {
    Interactive,
    Batch,
}

/// A requested unit of work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub id: String,
    pub kind: WorkloadKind,
    pub project: String,
    pub user: String,
    pub request: ResourceVector,
    /// Opaque image label, carried through translation untouched.
    #[serde(default)]
    pub image: String,
    /// Opaque command tokens, carried through translation untouched.
    #[serde(default)]
    pub command: Vec<String>,
    /// Simulated run time in sim-seconds.
    pub est_duration: u64,
    #[serde(default)]
    pub max_retries: u32,
    #[serde(default)]
    pub submit_time: u64,
}

/// Lifecycle states of a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JobState {
    Pending,
    Admitted,
    Dispatched,
    Running,
    Succeeded,
    Failed,
    Evicted,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }

    /// The legal edges of the lifecycle machine:
    ///
    /// ```text
    /// Pending -> Admitted -> Dispatched -> Running -> {Succeeded, Failed, Evicted}
    /// Evicted -> Pending            (requeue)
    /// Dispatched -> Failed          (remote loss)
    /// any non-terminal -> Failed    (retries exhausted, rejection)
    /// ```
    pub fn can_transition(self, to: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, to),
            (Pending, Admitted)
                | (Admitted, Dispatched)
                | (Dispatched, Running)
                | (Running, Succeeded)
                | (Running, Failed)
                | (Running, Evicted)
                | (Evicted, Pending)
                | (Pending, Failed)
                | (Admitted, Failed)
                | (Dispatched, Failed)
                | (Evicted, Failed)
        )
    }
}

/// Machine-readable cause attached to every state transition, sufficient to
/// rebuild allocation and accounting from the event log alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionReason {
    UserSubmit,
    QuotaAdmit,
    Dispatch,
    Start,
    Finish,
    Fault,
    EvictForInteractive,
    RemoteLost,
    RetriesExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub t: u64,
    pub from: JobState,
    pub to: JobState,
    pub reason: TransitionReason,
}

/// A transition outside the legal edge set. Signals a controller logic bug;
/// the reconcile step that produced it must be abandoned.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal transition {from:?} -> {to:?} for job {job}")]
pub struct IllegalTransition {
    pub job: String,
    pub from: JobState,
    pub to: JobState,
}

/// A workload plus its lifecycle bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub spec: WorkloadSpec,
    pub state: JobState,
    pub retries_used: u32,
    /// Node the job is currently dispatched to, if any.
    pub node: Option<String>,
    pub history: Vec<TransitionRecord>,
}

impl Job {
    pub fn new(spec: WorkloadSpec) -> Self {
        Self {
            spec,
            state: JobState::Pending,
            retries_used: 0,
            node: None,
            history: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    /// Batch workloads are always evictable; interactive ones never are.
    pub fn is_evictable(&self) -> bool {
        self.spec.kind == WorkloadKind::Batch
    }

    /// Applies a legal transition and appends the record, or rejects it.
    pub fn transition(
        &mut self,
        to: JobState,
        t: u64,
        reason: TransitionReason,
    ) -> Result<(), IllegalTransition> {
        if !self.state.can_transition(to) {
            return Err(IllegalTransition {
                job: self.spec.id.clone(),
                from: self.state,
                to,
            });
        }
        self.history.push(TransitionRecord {
            t,
            from: self.state,
            to,
            reason,
        });
        self.state = to;
        Ok(())
    }

    /// Timestamp of the most recent Running transition, if any.
    pub fn last_start(&self) -> Option<u64> {
        self.history
            .iter()
            .rev()
            .find(|r| r.to == JobState::Running)
            .map(|r| r.t)
    }
}
