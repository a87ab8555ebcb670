//! Simulated remote providers.
//!
//! Each provider executes jobs on a passive timetable computed at CREATE:
//! a queue delay drawn from the provider's delay distribution fixes
//! `start_at`, the workload's runtime fixes `end_at`, and loss (intrinsic or
//! injected) may pin a `lost_at` instant. STATUS/LOGS answers are then pure
//! functions of the current clock, so polling order can never perturb remote
//! state.
//!
//! Draw budget per accepted CREATE is fixed at exactly two generator draws,
//! in this order: queue delay first, then the loss check. Rejected or
//! unreachable CREATEs consume no draws.

use std::collections::BTreeMap;

use rand::RngCore;

use crate::offload::protocol::{
    CreateRequest, CreateResponse, DeleteRequest, DeleteResponse, LogsRequest, LogsResponse,
    StatusRequest, StatusResponse, WireResources,
};
use crate::offload::{OffloadError, ProviderDescriptor, RemoteStatus};
use crate::resources::ResourceVector;
use crate::sim::sample_delay;
use crate::sim::scenario::{FailureMode, FailureSpec, Window};

#[derive(Debug, Clone)]
struct RemoteSimJob {
    local_id: String,
    /// Model-space resource footprint, held while QUEUED or RUNNING.
    resources: ResourceVector,
    start_at: u64,
    end_at: u64,
    /// Instant the provider loses track of the job, if it ever does.
    lost_at: Option<u64>,
}

impl RemoteSimJob {
    fn status_at(&self, now: u64) -> RemoteStatus {
        if let Some(lost_at) = self.lost_at {
            if now >= lost_at {
                return RemoteStatus::Lost;
            }
        }
        if now < self.start_at {
            RemoteStatus::Queued
        } else if now < self.end_at {
            RemoteStatus::Running
        } else {
            RemoteStatus::Done
        }
    }

    fn holds_capacity(&self, now: u64) -> bool {
        matches!(
            self.status_at(now),
            RemoteStatus::Queued | RemoteStatus::Running
        )
    }
}

/// In-process stand-in for one remote scheduler, addressed only through the
/// CREATE/STATUS/DELETE/LOGS verbs.
#[derive(Debug, Clone)]
pub struct SimProviderBackend {
    desc: ProviderDescriptor,
    /// Capacity in model space, comparable with wire-resource footprints.
    capacity: ResourceVector,
    blackouts: Vec<Window>,
    loss_windows: Vec<Window>,
    jobs: BTreeMap<String, RemoteSimJob>,
    next_remote: u64,
}

impl SimProviderBackend {
    pub fn new(desc: ProviderDescriptor, failures: &[FailureSpec]) -> Self {
        let capacity = WireResources::from_request(&desc.capacity).to_vector();
        let blackouts = failures
            .iter()
            .filter(|f| f.site == desc.site && f.mode == FailureMode::Blackout)
            .map(|f| f.window)
            .collect();
        let loss_windows = failures
            .iter()
            .filter(|f| f.site == desc.site && f.mode == FailureMode::Loss)
            .map(|f| f.window)
            .collect();
        Self {
            desc,
            capacity,
            blackouts,
            loss_windows,
            jobs: BTreeMap::new(),
            next_remote: 0,
        }
    }

    pub fn site(&self) -> &str {
        &self.desc.site
    }

    pub fn flavor(&self) -> crate::offload::ProviderFlavor {
        self.desc.flavor
    }

    pub fn reachable(&self, now: u64) -> bool {
        !self.blackouts.iter().any(|w| w.contains(now))
    }

    fn unreachable_err(&self) -> OffloadError {
        OffloadError::ProviderUnreachable {
            site: self.desc.site.clone(),
        }
    }

    fn in_use(&self, now: u64) -> ResourceVector {
        self.jobs
            .values()
            .filter(|j| j.holds_capacity(now))
            .fold(ResourceVector::zero(), |acc, j| acc.add(&j.resources))
    }

    /// Accept or reject a job. `duration` is the simulated runtime; it is
    /// sim-side ground truth rather than a wire field, since a real provider
    /// observes runtime instead of being told it.
    pub fn create(
        &mut self,
        now: u64,
        rng: &mut impl RngCore,
        req: &CreateRequest,
        duration: u64,
    ) -> Result<CreateResponse, OffloadError> {
        if !self.reachable(now) {
            return Err(self.unreachable_err());
        }
        let footprint = req.resources.to_vector();
        if !self.in_use(now).add(&footprint).fits_within(&self.capacity) {
            return Ok(CreateResponse::Rejected {
                error: format!("site {} is at capacity", self.desc.site),
            });
        }

        let start_at = now + sample_delay(rng, self.desc.queue_delay_dist);
        let end_at = start_at + duration;
        let loss_draw = rng.next_u64();
        let loss_u = (loss_draw >> 11) as f64 / (1u64 << 53) as f64;
        let mut lost_at: Option<u64> = if loss_u < self.desc.loss_rate {
            // The provider silently drops the job right where it would have
            // finished: it runs, then never reports DONE.
            Some(end_at)
        } else {
            None
        };
        for w in &self.loss_windows {
            if w.overlaps(start_at, end_at) {
                let candidate = w.start.max(start_at);
                lost_at = Some(lost_at.map_or(candidate, |cur| cur.min(candidate)));
            }
        }

        let remote_id = format!("{}-{}", self.desc.site, self.next_remote);
        self.next_remote += 1;
        self.jobs.insert(
            remote_id.clone(),
            RemoteSimJob {
                local_id: req.id.clone(),
                resources: footprint,
                start_at,
                end_at,
                lost_at,
            },
        );
        Ok(CreateResponse::Accepted { remote_id })
    }

    pub fn status(&self, now: u64, req: &StatusRequest) -> Result<StatusResponse, OffloadError> {
        if !self.reachable(now) {
            return Err(self.unreachable_err());
        }
        let job = self
            .jobs
            .get(&req.remote_id)
            .ok_or_else(|| OffloadError::UnknownRemoteId {
                site: self.desc.site.clone(),
                remote_id: req.remote_id.clone(),
            })?;
        Ok(StatusResponse {
            status: job.status_at(now),
        })
    }

    /// Idempotent teardown: deleting an unknown id acknowledges cleanly.
    pub fn delete(&mut self, now: u64, req: &DeleteRequest) -> Result<DeleteResponse, OffloadError> {
        if !self.reachable(now) {
            return Err(self.unreachable_err());
        }
        self.jobs.remove(&req.remote_id);
        Ok(DeleteResponse { ok: true })
    }

    pub fn logs(&self, now: u64, req: &LogsRequest) -> Result<LogsResponse, OffloadError> {
        if !self.reachable(now) {
            return Err(self.unreachable_err());
        }
        let job = self
            .jobs
            .get(&req.remote_id)
            .ok_or_else(|| OffloadError::UnknownRemoteId {
                site: self.desc.site.clone(),
                remote_id: req.remote_id.clone(),
            })?;
        let mut log = String::new();
        if now >= job.start_at {
            log.push_str(&format!("START {}", job.local_id));
        }
        if job.status_at(now) == RemoteStatus::Done {
            log.push_str(&format!("\nEND {}", job.local_id));
        }
        Ok(LogsResponse { log })
    }
}
