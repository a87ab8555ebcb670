//! Virtual-node offloading: each remote provider is presented to the
//! scheduler as one ordinary node. Dispatches to a virtual node turn into
//! provider-dialect job documents pushed over a small create/status/delete/
//! logs protocol, and a periodic sync pulls remote states back into the
//! local job lifecycle.

pub mod protocol;
pub mod translate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::Node;
use crate::job::JobState;
use crate::resources::ResourceVector;

/// Remote scheduler dialect spoken by a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProviderFlavor {
    CondorLike,
    SlurmLike,
    ContainerRuntime,
}

/// Queue-delay model: uniform over [mean - jitter, mean + jitter].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayDist {
    pub mean: u64,
    pub jitter: u64,
}

/// Static description of one remote execution site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderDescriptor {
    pub site: String,
    pub flavor: ProviderFlavor,
    pub capacity: ResourceVector,
    pub queue_delay_dist: DelayDist,
    pub loss_rate: f64,
    pub endpoint: String,
}

/// Remote-side lifecycle as reported by STATUS polls. Moves forward only:
/// QUEUED -> RUNNING -> {DONE, FAILED}, and any state may drop to LOST.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RemoteStatus {
    Queued,
    Running,
    Done,
    Failed,
    Lost,
}

impl RemoteStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RemoteStatus::Done | RemoteStatus::Failed | RemoteStatus::Lost)
    }

    /// Monotone progression check for observed status updates.
    pub fn can_advance(self, to: RemoteStatus) -> bool {
        use RemoteStatus::*;
        if self == to {
            return true;
        }
        matches!(
            (self, to),
            (Queued, Running)
                | (Queued, Done)
                | (Queued, Failed)
                | (Running, Done)
                | (Running, Failed)
                | (Queued, Lost)
                | (Running, Lost)
        )
    }
}

/// What the local controller does in response to an observed remote status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalAction {
    /// QUEUED: the job stays Dispatched locally.
    StayDispatched,
    /// RUNNING: the job moves to Running.
    MarkRunning,
    /// DONE: terminal success.
    MarkSucceeded,
    /// FAILED: terminal application failure.
    MarkFailed,
    /// LOST: infrastructure loss; evict locally and requeue.
    RequeueLost,
}

/// Fixed, total mapping from remote status to local action.
pub fn map_remote_status(status: RemoteStatus) -> LocalAction {
    match status {
        RemoteStatus::Queued => LocalAction::StayDispatched,
        RemoteStatus::Running => LocalAction::MarkRunning,
        RemoteStatus::Done => LocalAction::MarkSucceeded,
        RemoteStatus::Failed => LocalAction::MarkFailed,
        RemoteStatus::Lost => LocalAction::RequeueLost,
    }
}

impl LocalAction {
    /// Local job state this action settles on, where it settles at all.
    pub fn target_state(self) -> Option<JobState> {
        match self {
            LocalAction::StayDispatched => Some(JobState::Dispatched),
            LocalAction::MarkRunning => Some(JobState::Running),
            LocalAction::MarkSucceeded => Some(JobState::Succeeded),
            LocalAction::MarkFailed => Some(JobState::Failed),
            LocalAction::RequeueLost => None,
        }
    }
}

/// Bookkeeping for one job handed to a provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteJobRecord {
    pub local_id: String,
    pub remote_id: String,
    pub provider: String,
    pub remote_status: RemoteStatus,
    pub last_sync: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OffloadError {
    #[error("provider site {site} already registered")]
    DuplicateSite { site: String },
    #[error("provider {site} unreachable")]
    ProviderUnreachable { site: String },
    #[error("provider {site} rejected the job: {error}")]
    RejectedByProvider { site: String, error: String },
    #[error("provider {site} has no job {remote_id}")]
    UnknownRemoteId { site: String, remote_id: String },
}

/// The schedulable face of a provider: a virtual node named after the site,
/// advertising the provider's capacity.
pub fn virtual_node(desc: &ProviderDescriptor) -> Node {
    Node::virtual_proxy(desc.site.clone(), desc.capacity.clone(), desc.site.clone())
}
