//! Totally ordered event log.
//!
//! Every observable step of a run is appended as one record stamped with the
//! simulation clock `t` and a global assignment counter `seq`. The (t, seq)
//! pair is strictly increasing across the whole log, which makes the log a
//! replayable serialization of the run: folding it through an interpreter
//! reproduces the final state exactly.
//!
//! On disk the log is newline-delimited JSON, one record per line:
//! `{"t":int,"seq":int,"kind":str,"payload":{...}}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::NodeKind;
use crate::job::{JobState, TransitionReason, WorkloadSpec};
use crate::offload::ProviderFlavor;
use crate::resources::ResourceVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub body: RecordBody,
}

/// One observable step. Serialized adjacently tagged so each line carries
/// `"kind"` and `"payload"` fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum RecordBody {
    /// First record of every run: names the scenario and pins the seed.
    RunMeta { scenario: String, seed: u64 },
    NodeUp {
        node: String,
        kind: NodeKind,
        allocatable: ResourceVector,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flavor: Option<ProviderFlavor>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        provider: Option<String>,
    },
    ProjectUp {
        project: String,
        quota: ResourceVector,
    },
    JobSubmitted {
        job: String,
        spec: WorkloadSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        workflow: Option<String>,
    },
    /// A lifecycle edge taken by one job. `node` is present on edges that
    /// bind or release a placement (dispatch, finish, evict, remote fault).
    Transition {
        job: String,
        from: JobState,
        to: JobState,
        reason: TransitionReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    RemoteCreate {
        job: String,
        provider: String,
        remote_id: String,
    },
    RemoteCreateFailed {
        job: String,
        provider: String,
        error: String,
    },
    RemoteDelete {
        job: String,
        provider: String,
        remote_id: String,
        acknowledged: bool,
    },
    WorkflowStarted {
        workflow: String,
        rules: u64,
    },
    RuleReleased {
        workflow: String,
        rule: String,
        job: String,
    },
    RuleDone {
        workflow: String,
        rule: String,
    },
    RuleFailed {
        workflow: String,
        rule: String,
    },
    RuleCancelled {
        workflow: String,
        rule: String,
        failed_ancestor: String,
    },
    /// Marks the end of one applied reconcile pass and how many decisions
    /// it produced. Appears after the transitions it caused.
    Reconcile { decisions: u64 },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error(
        "log line {line}: record ({t},{seq}) does not advance past ({prev_t},{prev_seq})"
    )]
    OutOfOrder {
        line: usize,
        t: u64,
        seq: u64,
        prev_t: u64,
        prev_seq: u64,
    },
}

/// Append-only ordered record list. `push` enforces the strict (t, seq)
/// order at the boundary so a finished log is valid by construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: LogRecord) {
        if let Some(last) = self.records.last() {
            assert!(
                (record.t, record.seq) > (last.t, last.seq),
                "event log order violated: ({},{}) after ({},{})",
                record.t,
                record.seq,
                last.t,
                last.seq
            );
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LogRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    /// Parse a newline-delimited log, validating the strict (t, seq) order.
    /// Blank lines are rejected: a valid log has exactly one record per line.
    pub fn parse_ndjson(text: &str) -> Result<Self, LogError> {
        let mut log = Self::new();
        let mut prev: Option<(u64, u64)> = None;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let record: LogRecord =
                serde_json::from_str(line).map_err(|e| LogError::Malformed {
                    line: lineno,
                    detail: e.to_string(),
                })?;
            if let Some((pt, ps)) = prev {
                if (record.t, record.seq) <= (pt, ps) {
                    return Err(LogError::OutOfOrder {
                        line: lineno,
                        t: record.t,
                        seq: record.seq,
                        prev_t: pt,
                        prev_seq: ps,
                    });
                }
            }
            prev = Some((record.t, record.seq));
            log.records.push(record);
        }
        Ok(log)
    }
}

impl<'a> IntoIterator for &'a EventLog {
    type Item = &'a LogRecord;
    type IntoIter = std::slice::Iter<'a, LogRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}
