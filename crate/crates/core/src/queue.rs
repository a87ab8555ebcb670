//! Opportunistic batch admission with strict interactive priority.
//!
//! Batch workloads soak up idle capacity; when an interactive request cannot
//! be placed, running batch jobs are evicted to make room. Admission is
//! quota-gated per project, placement is first-fit over a fixed node order,
//! and every decision a reconcile pass emits is replayable: applying the
//! decision list in order never breaks a node or quota invariant.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Node, NodeKind, Project};
use crate::job::{IllegalTransition, Job, JobState, TransitionReason, WorkloadKind, WorkloadSpec};
use crate::resources::ResourceVector;

/// One scheduling action. A reconcile pass emits an ordered list of these;
/// they are applied in order, and the list as a whole preserves invariants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Reserve project quota and move the job past admission.
    Admit { job: String },
    /// Place the job on a node, consuming its free resources.
    Dispatch { job: String, node: String },
    /// Remove a running batch job from its node.
    Evict { job: String, reason: TransitionReason },
    /// Return an evicted job to the pending queue (or fail it out of retries).
    Requeue { job: String },
    /// Fail a job that can never be satisfied.
    Reject { job: String, reason: String },
}

/// Result of searching for an eviction set on behalf of an interactive job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvictionPlan {
    Satisfiable { node: String, victims: Vec<String> },
    NotSatisfiable,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("job id {id} already submitted")]
    DuplicateId { id: String },
    #[error("job {id} requests no resources")]
    EmptyRequest { id: String },
    #[error("job {id} names unknown project {project}")]
    UnknownProject { id: String, project: String },
    #[error("no job {id} in queue state")]
    UnknownJob { id: String },
    #[error("no node named {node}")]
    UnknownNode { node: String },
    #[error("queue state inconsistent: {detail}")]
    InconsistentState { detail: String },
    #[error(transparent)]
    Illegal(#[from] IllegalTransition),
}

/// Sort key implementing the pending order: interactive ahead of batch,
/// then FIFO by submit time, then lexicographic id.
fn order_key(spec: &WorkloadSpec) -> (u8, u64, &str) {
    let rank = match spec.kind {
        WorkloadKind::Interactive => 0,
        WorkloadKind::Batch => 1,
    };
    (rank, spec.submit_time, &spec.id)
}

/// Stable queue ordering over arbitrary workload specs.
pub fn queue_order<'a>(pending: impl IntoIterator<Item = &'a WorkloadSpec>) -> Vec<String> {
    let mut specs: Vec<&WorkloadSpec> = pending.into_iter().collect();
    specs.sort_by(|a, b| order_key(a).cmp(&order_key(b)));
    specs.iter().map(|s| s.id.clone()).collect()
}

/// Placement walk order: local nodes by id, then virtual nodes by id.
/// Returns indices into the given slice.
pub fn node_walk_order(nodes: &[Node]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.sort_by_key(|&i| {
        let rank = match nodes[i].kind {
            NodeKind::Local => 0u8,
            NodeKind::Virtual => 1u8,
        };
        (rank, nodes[i].name.clone())
    });
    order
}

/// The controller's view of all jobs, tenants, and queue bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueState {
    pub jobs: BTreeMap<String, Job>,
    /// Jobs awaiting placement (Pending or parked Admitted), in queue order.
    pub pending: Vec<String>,
    /// Jobs holding node resources (Dispatched or Running).
    pub running: BTreeSet<String>,
    pub projects: BTreeMap<String, Project>,
    pub clock: u64,
}

impl QueueState {
    pub fn new(projects: BTreeMap<String, Project>) -> Self {
        Self {
            jobs: BTreeMap::new(),
            pending: Vec::new(),
            running: BTreeSet::new(),
            projects,
            clock: 0,
        }
    }

    fn job(&self, id: &str) -> Result<&Job, QueueError> {
        self.jobs.get(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })
    }

    /// Inserts `id` into the pending list at its ordered position.
    fn enqueue(&mut self, id: String) {
        let key = {
            let spec = &self.jobs[&id].spec;
            (order_key(spec).0, order_key(spec).1, id.clone())
        };
        let pos = self
            .pending
            .partition_point(|other| {
                let o = &self.jobs[other].spec;
                (order_key(o).0, order_key(o).1, o.id.clone()) < key
            });
        self.pending.insert(pos, id);
    }

    fn unqueue(&mut self, id: &str) {
        self.pending.retain(|p| p != id);
    }

    /// Accepts a new workload into the pending queue.
    pub fn submit(&mut self, spec: WorkloadSpec) -> Result<String, QueueError> {
        if self.jobs.contains_key(&spec.id) {
            return Err(QueueError::DuplicateId { id: spec.id });
        }
        if spec.request.is_zero() {
            return Err(QueueError::EmptyRequest { id: spec.id });
        }
        if !self.projects.contains_key(&spec.project) {
            return Err(QueueError::UnknownProject {
                id: spec.id.clone(),
                project: spec.project.clone(),
            });
        }
        let id = spec.id.clone();
        self.jobs.insert(id.clone(), Job::new(spec));
        self.enqueue(id.clone());
        Ok(id)
    }

    /// Verifies that queue bookkeeping, job states, and node allocations all
    /// agree. Any mismatch poisons the reconcile that found it.
    pub fn check_consistent(&self, nodes: &[Node]) -> Result<(), QueueError> {
        let fail = |detail: String| Err(QueueError::InconsistentState { detail });

        let mut seen = BTreeSet::new();
        for id in &self.pending {
            if !seen.insert(id.clone()) {
                return fail(format!("job {id} listed twice in pending"));
            }
            let job = self.job(id)?;
            if !matches!(job.state, JobState::Pending | JobState::Admitted) {
                return fail(format!("pending entry {id} is {:?}", job.state));
            }
            if self.running.contains(id) {
                return fail(format!("job {id} in both pending and running"));
            }
        }
        for pair in self.pending.windows(2) {
            let a = &self.jobs[&pair[0]].spec;
            let b = &self.jobs[&pair[1]].spec;
            if order_key(a) > order_key(b) {
                return fail(format!("pending order violated at {} before {}", a.id, b.id));
            }
        }

        let node_names: BTreeSet<&str> = nodes.iter().map(|n| n.name.as_str()).collect();
        for id in &self.running {
            let job = self.job(id)?;
            if !matches!(job.state, JobState::Dispatched | JobState::Running) {
                return fail(format!("running entry {id} is {:?}", job.state));
            }
            match &job.node {
                None => return fail(format!("running job {id} has no node")),
                Some(n) if !node_names.contains(n.as_str()) => {
                    return fail(format!("running job {id} on unknown node {n}"));
                }
                _ => {}
            }
        }

        for (id, job) in &self.jobs {
            let queued = self.pending.iter().any(|p| p == id);
            match job.state {
                JobState::Pending | JobState::Admitted if !queued => {
                    return fail(format!("job {id} is {:?} but not pending", job.state));
                }
                JobState::Dispatched | JobState::Running if !self.running.contains(id) => {
                    return fail(format!("job {id} is {:?} but not in running", job.state));
                }
                JobState::Evicted => {
                    return fail(format!("job {id} left in Evicted between passes"));
                }
                _ => {}
            }
            if !self.projects.contains_key(&job.spec.project) {
                return fail(format!("job {id} names unknown project {}", job.spec.project));
            }
        }

        for node in nodes {
            let mut expect = ResourceVector::zero();
            for id in &self.running {
                let job = &self.jobs[id];
                if job.node.as_deref() == Some(node.name.as_str()) {
                    expect = expect.add(&job.spec.request);
                }
            }
            if expect != node.allocated {
                return fail(format!(
                    "node {} allocation {} != sum of running requests {}",
                    node.name, node.allocated, expect
                ));
            }
            if !node.allocated.fits_within(&node.allocatable) {
                return fail(format!("node {} allocated over capacity", node.name));
            }
        }

        for (name, project) in &self.projects {
            let mut expect = ResourceVector::zero();
            for job in self.jobs.values() {
                let counted = matches!(
                    job.state,
                    JobState::Admitted | JobState::Dispatched | JobState::Running
                );
                if counted && &job.spec.project == name {
                    expect = expect.add(&job.spec.request);
                }
            }
            if expect != project.admitted_usage {
                return fail(format!(
                    "project {name} usage {} != sum of admitted requests {}",
                    project.admitted_usage, expect
                ));
            }
        }
        Ok(())
    }

    /// One scheduling pass over a consistent snapshot. Walks the pending
    /// list in queue order, admitting under quota, placing first-fit (local
    /// nodes by id, then virtual), and evicting running batch jobs when that
    /// is the only way to place an interactive request. Pure: the returned
    /// decision list must be applied separately.
    pub fn reconcile(&self, nodes: &[Node]) -> Result<Vec<Decision>, QueueError> {
        self.reconcile_excluding(nodes, &BTreeSet::new())
    }

    /// Like [`reconcile`](Self::reconcile), but treats `frozen` jobs as
    /// already-claimed eviction victims: their resources are not counted as
    /// reclaimable a second time. Drivers that delay evictions (grace
    /// periods, in-flight remote deletes) pass the pending victims here so
    /// repeated planning rounds stay stable.
    pub fn reconcile_excluding(
        &self,
        nodes: &[Node],
        frozen: &BTreeSet<String>,
    ) -> Result<Vec<Decision>, QueueError> {
        self.check_consistent(nodes)?;
        let order = node_walk_order(nodes);
        let mut free: Vec<ResourceVector> = nodes.iter().map(|n| n.free()).collect();
        let mut usage: BTreeMap<&str, ResourceVector> = self
            .projects
            .iter()
            .map(|(k, p)| (k.as_str(), p.admitted_usage.clone()))
            .collect();
        let mut victims_taken: BTreeSet<String> = frozen.clone();
        let mut decisions = Vec::new();

        for id in &self.pending {
            let job = &self.jobs[id];
            let request = &job.spec.request;
            let project = &self.projects[&job.spec.project];
            let mut newly_admitted = false;

            if job.state == JobState::Pending {
                if !order
                    .iter()
                    .any(|&i| request.fits_within(&nodes[i].allocatable))
                {
                    decisions.push(Decision::Reject {
                        job: id.clone(),
                        reason: "request exceeds the capacity of every node".to_string(),
                    });
                    continue;
                }
                if !request.fits_within(&project.quota) {
                    decisions.push(Decision::Reject {
                        job: id.clone(),
                        reason: format!(
                            "request exceeds the quota ceiling of project {}",
                            job.spec.project
                        ),
                    });
                    continue;
                }
                let used = &usage[job.spec.project.as_str()];
                if !used.add(request).fits_within(&project.quota) {
                    // Quota-blocked: stays Pending until siblings release.
                    continue;
                }
                decisions.push(Decision::Admit { job: id.clone() });
                *usage.get_mut(job.spec.project.as_str()).unwrap() =
                    usage[job.spec.project.as_str()].add(request);
                newly_admitted = true;
            }

            if let Some(&slot) = order.iter().find(|&&i| request.fits_within(&free[i])) {
                decisions.push(Decision::Dispatch {
                    job: id.clone(),
                    node: nodes[slot].name.clone(),
                });
                free[slot] = free[slot].checked_sub(request).expect("fit checked");
                continue;
            }

            if job.spec.kind != WorkloadKind::Interactive {
                // Batch never evicts; parked until capacity frees up.
                let _ = newly_admitted;
                continue;
            }

            match self.eviction_search(&job.spec, nodes, &order, &free, &victims_taken) {
                EvictionPlan::Satisfiable { node, victims } => {
                    let slot = nodes.iter().position(|n| n.name == node).expect("known node");
                    for v in &victims {
                        decisions.push(Decision::Evict {
                            job: v.clone(),
                            reason: TransitionReason::EvictForInteractive,
                        });
                        let victim = &self.jobs[v];
                        free[slot] = free[slot].add(&victim.spec.request);
                        *usage.get_mut(victim.spec.project.as_str()).unwrap() = usage
                            [victim.spec.project.as_str()]
                        .checked_sub(&victim.spec.request)
                        .expect("victim usage accounted");
                        victims_taken.insert(v.clone());
                    }
                    for v in &victims {
                        decisions.push(Decision::Requeue { job: v.clone() });
                    }
                    decisions.push(Decision::Dispatch {
                        job: id.clone(),
                        node,
                    });
                    free[slot] = free[slot].checked_sub(request).expect("drain sufficient");
                }
                EvictionPlan::NotSatisfiable => {}
            }
        }
        Ok(decisions)
    }

    /// Minimal eviction set for `target` against the working free view.
    /// Candidates are running batch jobs not already claimed this pass.
    fn eviction_search(
        &self,
        target: &WorkloadSpec,
        nodes: &[Node],
        order: &[usize],
        free: &[ResourceVector],
        victims_taken: &BTreeSet<String>,
    ) -> EvictionPlan {
        // (cardinality, latest starts first, lexicographic ids, walk position)
        let mut best: Option<(usize, Reverse<u64>, Vec<String>, usize)> = None;

        for (walk_pos, &slot) in order.iter().enumerate() {
            let node = &nodes[slot];
            let mut cands: Vec<&Job> = self
                .running
                .iter()
                .filter(|id| !victims_taken.contains(id.as_str()))
                .map(|id| &self.jobs[id])
                .filter(|j| {
                    j.state == JobState::Running
                        && j.is_evictable()
                        && j.node.as_deref() == Some(node.name.as_str())
                })
                .collect();
            cands.sort_by(|a, b| a.id().cmp(b.id()));

            let drained = cands
                .iter()
                .fold(free[slot].clone(), |acc, j| acc.add(&j.spec.request));
            if !target.request.fits_within(&drained) {
                continue;
            }

            // Smallest k wins on this node; enumerate combinations in
            // ascending size and stop at the first size with any hit.
            'sizes: for k in 0..=cands.len() {
                let mut found_at_k = false;
                for combo in (0..cands.len()).combinations(k) {
                    let pool = combo
                        .iter()
                        .fold(free[slot].clone(), |acc, &i| acc.add(&cands[i].spec.request));
                    if !target.request.fits_within(&pool) {
                        continue;
                    }
                    found_at_k = true;
                    let started: u64 = combo
                        .iter()
                        .map(|&i| cands[i].last_start().unwrap_or(0))
                        .sum();
                    let ids: Vec<String> =
                        combo.iter().map(|&i| cands[i].id().to_string()).collect();
                    let key = (k, Reverse(started), ids, walk_pos);
                    if best.as_ref().map_or(true, |b| key < *b) {
                        best = Some(key);
                    }
                }
                if found_at_k {
                    break 'sizes;
                }
            }
        }

        match best {
            Some((_, _, victims, walk_pos)) => EvictionPlan::Satisfiable {
                node: nodes[order[walk_pos]].name.clone(),
                victims,
            },
            None => EvictionPlan::NotSatisfiable,
        }
    }

    // ---- decision application -------------------------------------------

    pub fn admit_job(&mut self, id: &str, t: u64) -> Result<(), QueueError> {
        let job = self.jobs.get_mut(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })?;
        job.transition(JobState::Admitted, t, TransitionReason::QuotaAdmit)?;
        let request = job.spec.request.clone();
        let project = job.spec.project.clone();
        let p = self.projects.get_mut(&project).expect("project checked at submit");
        p.admitted_usage = p.admitted_usage.add(&request);
        Ok(())
    }

    pub fn dispatch_job(
        &mut self,
        nodes: &mut [Node],
        id: &str,
        node_name: &str,
        t: u64,
    ) -> Result<(), QueueError> {
        let node_idx = nodes
            .iter()
            .position(|n| n.name == node_name)
            .ok_or_else(|| QueueError::UnknownNode {
                node: node_name.to_string(),
            })?;
        let job = self.jobs.get_mut(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })?;
        job.transition(JobState::Dispatched, t, TransitionReason::Dispatch)?;
        job.node = Some(node_name.to_string());
        let request = job.spec.request.clone();
        nodes[node_idx].allocated = nodes[node_idx].allocated.add(&request);
        self.unqueue(id);
        self.running.insert(id.to_string());
        Ok(())
    }

    pub fn start_job(&mut self, id: &str, t: u64) -> Result<(), QueueError> {
        let job = self.jobs.get_mut(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })?;
        job.transition(JobState::Running, t, TransitionReason::Start)?;
        Ok(())
    }

    /// Removes a running job from its node, releasing resources and quota.
    pub fn evict_job(
        &mut self,
        nodes: &mut [Node],
        id: &str,
        t: u64,
        reason: TransitionReason,
    ) -> Result<(), QueueError> {
        let job = self.jobs.get_mut(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })?;
        job.transition(JobState::Evicted, t, reason)?;
        self.release_allocation(nodes, id)?;
        Ok(())
    }

    /// Returns an evicted job to the queue, or fails it once retries are
    /// spent. The requeued job keeps its original submit time, so it regains
    /// its old FIFO seniority.
    pub fn requeue_job(&mut self, id: &str, t: u64) -> Result<JobState, QueueError> {
        let job = self.jobs.get_mut(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })?;
        let reason = job
            .history
            .iter()
            .rev()
            .find(|r| r.to == JobState::Evicted)
            .map(|r| r.reason)
            .unwrap_or(TransitionReason::EvictForInteractive);
        job.retries_used += 1;
        if job.retries_used > job.spec.max_retries {
            job.transition(JobState::Failed, t, TransitionReason::RetriesExhausted)?;
            Ok(JobState::Failed)
        } else {
            job.transition(JobState::Pending, t, reason)?;
            self.enqueue(id.to_string());
            Ok(JobState::Pending)
        }
    }

    pub fn reject_job(&mut self, id: &str, t: u64) -> Result<(), QueueError> {
        let job = self.jobs.get_mut(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })?;
        job.transition(JobState::Failed, t, TransitionReason::Fault)?;
        self.unqueue(id);
        Ok(())
    }

    /// Terminates a running job, successfully or not, and releases its hold.
    pub fn finish_job(
        &mut self,
        nodes: &mut [Node],
        id: &str,
        t: u64,
        success: bool,
    ) -> Result<(), QueueError> {
        let (to, reason) = if success {
            (JobState::Succeeded, TransitionReason::Finish)
        } else {
            (JobState::Failed, TransitionReason::Fault)
        };
        let job = self.jobs.get_mut(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })?;
        job.transition(to, t, reason)?;
        self.release_allocation(nodes, id)?;
        Ok(())
    }

    /// Fails a job that was dispatched but never got to run.
    pub fn fail_dispatched(
        &mut self,
        nodes: &mut [Node],
        id: &str,
        t: u64,
        reason: TransitionReason,
    ) -> Result<(), QueueError> {
        let job = self.jobs.get_mut(id).ok_or_else(|| QueueError::UnknownJob {
            id: id.to_string(),
        })?;
        job.transition(JobState::Failed, t, reason)?;
        self.release_allocation(nodes, id)?;
        Ok(())
    }

    fn release_allocation(&mut self, nodes: &mut [Node], id: &str) -> Result<(), QueueError> {
        let job = self.jobs.get_mut(id).expect("caller checked");
        let request = job.spec.request.clone();
        let project = job.spec.project.clone();
        if let Some(node_name) = job.node.take() {
            let node = nodes
                .iter_mut()
                .find(|n| n.name == node_name)
                .ok_or(QueueError::UnknownNode { node: node_name })?;
            node.allocated = node
                .allocated
                .checked_sub(&request)
                .map_err(|e| QueueError::InconsistentState {
                    detail: format!("releasing {id}: {e}"),
                })?;
        }
        self.running.remove(id);
        let p = self.projects.get_mut(&project).expect("project checked at submit");
        p.admitted_usage =
            p.admitted_usage
                .checked_sub(&request)
                .map_err(|e| QueueError::InconsistentState {
                    detail: format!("quota release for {id}: {e}"),
                })?;
        Ok(())
    }

    /// Applies a reconcile decision list with immediate effect (zero grace).
    /// Strict: any decision that does not match the current state is an error.
    pub fn apply(
        &mut self,
        nodes: &mut [Node],
        decisions: &[Decision],
        t: u64,
    ) -> Result<(), QueueError> {
        for d in decisions {
            match d {
                Decision::Admit { job } => self.admit_job(job, t)?,
                Decision::Dispatch { job, node } => self.dispatch_job(nodes, job, node, t)?,
                Decision::Evict { job, reason } => self.evict_job(nodes, job, t, *reason)?,
                Decision::Requeue { job } => {
                    self.requeue_job(job, t)?;
                }
                Decision::Reject { job, .. } => self.reject_job(job, t)?,
            }
        }
        Ok(())
    }
}

/// Standalone eviction planning against live node state: which running batch
/// jobs must go so `target` fits somewhere, touching only a single node.
pub fn evict_for(target: &WorkloadSpec, state: &QueueState, nodes: &[Node]) -> EvictionPlan {
    let order = node_walk_order(nodes);
    let free: Vec<ResourceVector> = nodes.iter().map(|n| n.free()).collect();
    state.eviction_search(target, nodes, &order, &free, &BTreeSet::new())
}
