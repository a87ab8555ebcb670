//! The event loop.
//!
//! One integer clock, one event heap, one seeded generator. Simultaneous
//! events are totally ordered by (t, insertion order), and every observable
//! effect goes through `emit`, which stamps the global (t, seq) pair — so a
//! scenario plus a seed fixes the log byte for byte.
//!
//! The controller schedule mirrors the production loop shape: a reconcile
//! pass every `reconcile_period` seconds plus an immediate pass after any
//! submission or terminal event, and a provider STATUS sweep every
//! `sync_period` seconds. Within one timestamp the engine first drains all
//! due events, then runs reconcile to a fixpoint.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cluster::{Node, NodeKind, Project};
use crate::dag::{parse_workflow, DagError, WorkflowRun};
use crate::job::{JobState, TransitionReason, WorkloadSpec};
use crate::metrics::{MetricsError, MetricsState};
use crate::offload::protocol::{
    accel_model, CreateRequest, CreateResponse, DeleteRequest, StatusRequest, WireResources,
};
use crate::offload::translate::translate;
use crate::offload::{
    map_remote_status, virtual_node, LocalAction, OffloadError, RemoteJobRecord, RemoteStatus,
};
use crate::partition::{decompose_slices, Owner, PartitionError};
use crate::queue::{Decision, QueueError, QueueState};
use crate::sim::backend::SimProviderBackend;
use crate::sim::log::{EventLog, LogRecord, RecordBody};
use crate::sim::scenario::{Knobs, Scenario, ScenarioError, WorkflowEntry};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("provider protocol violation: {0}")]
    Provider(#[from] OffloadError),
    #[error("simulation invariant broken: {detail}")]
    Internal { detail: String },
}

fn internal(detail: impl Into<String>) -> SimError {
    SimError::Internal {
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Arrival { idx: usize },
    WorkflowStart { name: String },
    ReconcileTick,
    SyncTick,
    /// A locally running job completes — valid only while the job is still
    /// in the run it was scheduled for (`started_at` guards staleness).
    LocalFinish { job: String, started_at: u64 },
    /// A grace-period eviction comes due.
    EvictFire { job: String, started_at: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Scheduled {
    t: u64,
    tick: u64,
    ev: Ev,
}

/// Everything a finished (or horizon-stopped) run leaves behind.
#[derive(Debug)]
pub struct RunOutput {
    pub log: EventLog,
    pub state: QueueState,
    pub nodes: Vec<Node>,
    pub metrics: MetricsState,
    pub workflows: BTreeMap<String, WorkflowRun>,
    pub end_time: u64,
    pub horizon_reached: bool,
}

pub struct Engine {
    scenario: Scenario,
    knobs: Knobs,
    now: u64,
    next_seq: u64,
    next_tick: u64,
    rng: ChaCha8Rng,
    state: QueueState,
    nodes: Vec<Node>,
    backends: BTreeMap<String, SimProviderBackend>,
    remote: BTreeMap<String, RemoteJobRecord>,
    heap: BinaryHeap<Reverse<Scheduled>>,
    log: EventLog,
    metrics: MetricsState,
    workflows: BTreeMap<String, WorkflowRun>,
    wf_entries: BTreeMap<String, WorkflowEntry>,
    rule_of_job: BTreeMap<String, (String, String)>,
    /// Jobs whose eviction is decided but deferred by the grace knob,
    /// mapped to the `last_start` their eviction was planned against.
    evicting: BTreeMap<String, u64>,
    /// Per-job accelerator instance holds: (node, device, instance).
    placements: BTreeMap<String, Vec<(String, String, String)>>,
    pending_reconcile: bool,
    reconcile_live: bool,
    sync_live: bool,
    sources_left: usize,
    live_jobs: usize,
    incomplete_workflows: usize,
    auto_projects: bool,
    accel_keys: BTreeSet<String>,
    horizon: u64,
    horizon_reached: bool,
}

/// Run a scenario start to finish. `name` labels the log's opening record.
pub fn run_scenario(scenario: &Scenario, name: &str) -> Result<RunOutput, SimError> {
    let mut engine = Engine::new(scenario.clone(), name)?;
    engine.run_to_completion()?;
    Ok(engine.finish())
}

impl Engine {
    pub fn new(scenario: Scenario, name: &str) -> Result<Self, SimError> {
        scenario.validate()?;

        let accel_keys = scenario.declared_accel_keys();
        let auto_projects = scenario.projects.is_empty();
        let mut projects: BTreeMap<String, Project> = BTreeMap::new();
        if auto_projects {
            for p in scenario.referenced_projects() {
                projects.insert(
                    p.clone(),
                    Project::unconstrained(p, accel_keys.iter().cloned()),
                );
            }
        } else {
            for p in &scenario.projects {
                projects.insert(p.name.clone(), Project::new(p.name.clone(), p.quota.clone()));
            }
        }

        let mut nodes = scenario.build_local_nodes();
        let mut backends = BTreeMap::new();
        for desc in &scenario.sites.providers {
            nodes.push(virtual_node(desc));
            backends.insert(
                desc.site.clone(),
                SimProviderBackend::new(desc.clone(), &scenario.failures),
            );
        }

        let horizon = scenario.knobs.horizon.unwrap_or_else(|| auto_horizon(&scenario));
        let mut engine = Self {
            knobs: scenario.knobs.clone(),
            wf_entries: scenario
                .workflows
                .iter()
                .map(|e| (e.name.clone(), e.clone()))
                .collect(),
            sources_left: scenario.workloads.len() + scenario.workflows.len(),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            state: QueueState::new(projects),
            scenario,
            now: 0,
            next_seq: 0,
            next_tick: 0,
            nodes,
            backends,
            remote: BTreeMap::new(),
            heap: BinaryHeap::new(),
            log: EventLog::new(),
            metrics: MetricsState::new(),
            workflows: BTreeMap::new(),
            rule_of_job: BTreeMap::new(),
            evicting: BTreeMap::new(),
            placements: BTreeMap::new(),
            pending_reconcile: false,
            reconcile_live: false,
            sync_live: false,
            live_jobs: 0,
            incomplete_workflows: 0,
            auto_projects,
            accel_keys,
            horizon,
            horizon_reached: false,
        };

        engine.emit(RecordBody::RunMeta {
            scenario: name.to_string(),
            seed: engine.scenario.seed,
        })?;
        for i in 0..engine.nodes.len() {
            let node = &engine.nodes[i];
            let flavor = node
                .provider
                .as_ref()
                .map(|p| engine.backends[p].flavor());
            let body = RecordBody::NodeUp {
                node: node.name.clone(),
                kind: node.kind,
                allocatable: node.allocatable.clone(),
                flavor,
                provider: node.provider.clone(),
            };
            engine.emit(body)?;
        }
        let project_ups: Vec<RecordBody> = engine
            .state
            .projects
            .values()
            .map(|p| RecordBody::ProjectUp {
                project: p.name.clone(),
                quota: p.quota.clone(),
            })
            .collect();
        for body in project_ups {
            engine.emit(body)?;
        }

        for idx in 0..engine.scenario.workloads.len() {
            let t = engine.scenario.workloads[idx].submit_time;
            engine.schedule(t, Ev::Arrival { idx });
        }
        let wf_starts: Vec<(u64, String)> = engine
            .scenario
            .workflows
            .iter()
            .map(|e| (e.start_time, e.name.clone()))
            .collect();
        for (t, name) in wf_starts {
            engine.schedule(t, Ev::WorkflowStart { name });
        }
        engine.reconcile_live = true;
        engine.schedule(0, Ev::ReconcileTick);
        if !engine.backends.is_empty() {
            engine.sync_live = true;
            engine.schedule(engine.knobs.sync_period, Ev::SyncTick);
        }
        Ok(engine)
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn state(&self) -> &QueueState {
        &self.state
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn metrics(&self) -> &MetricsState {
        &self.metrics
    }

    pub fn workflows(&self) -> &BTreeMap<String, WorkflowRun> {
        &self.workflows
    }

    pub fn horizon_reached(&self) -> bool {
        self.horizon_reached
    }

    /// No undelivered submissions, no live jobs, no unfinished workflows.
    pub fn done(&self) -> bool {
        self.sources_left == 0 && self.live_jobs == 0 && self.incomplete_workflows == 0
    }

    /// Process the next quantum of work: a pending reconcile, or every event
    /// due at the next timestamp plus the reconcile it triggers. Returns
    /// false when nothing remains (or the horizon would be crossed).
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.pending_reconcile {
            self.pending_reconcile = false;
            self.reconcile_fixpoint()?;
            return Ok(true);
        }
        let next_t = match self.heap.peek() {
            Some(Reverse(s)) => s.t,
            None => return Ok(false),
        };
        if next_t > self.horizon {
            self.horizon_reached = true;
            return Ok(false);
        }
        self.now = next_t;
        loop {
            let due = matches!(self.heap.peek(), Some(Reverse(s)) if s.t == next_t);
            if !due {
                break;
            }
            let Reverse(s) = self.heap.pop().expect("peeked");
            self.dispatch_event(s.ev)?;
        }
        if self.pending_reconcile {
            self.pending_reconcile = false;
            self.reconcile_fixpoint()?;
        }
        Ok(true)
    }

    pub fn run_to_completion(&mut self) -> Result<(), SimError> {
        while self.step()? {}
        Ok(())
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            log: self.log,
            state: self.state,
            nodes: self.nodes,
            metrics: self.metrics,
            workflows: self.workflows,
            end_time: self.now,
            horizon_reached: self.horizon_reached,
        }
    }

    /// Submit a workload mid-run (interactive console path). The submit time
    /// is the current clock; in auto-project mode unknown projects are
    /// created on the fly with unconstrained quota.
    pub fn submit_adhoc(&mut self, mut spec: WorkloadSpec) -> Result<(), SimError> {
        spec.submit_time = self.now;
        if self.auto_projects && !self.state.projects.contains_key(&spec.project) {
            let project = Project::unconstrained(spec.project.clone(), self.accel_keys.iter().cloned());
            self.emit(RecordBody::ProjectUp {
                project: project.name.clone(),
                quota: project.quota.clone(),
            })?;
            self.state.projects.insert(project.name.clone(), project);
        }
        self.submit_internal(spec, None)?;
        self.prime_ticks();
        Ok(())
    }

    // ---- plumbing ------------------------------------------------------

    fn schedule(&mut self, t: u64, ev: Ev) {
        let tick = self.next_tick;
        self.next_tick += 1;
        self.heap.push(Reverse(Scheduled { t, tick, ev }));
    }

    fn emit(&mut self, body: RecordBody) -> Result<(), SimError> {
        let record = LogRecord {
            t: self.now,
            seq: self.next_seq,
            body,
        };
        self.next_seq += 1;
        self.metrics.record(&record)?;
        self.log.push(record);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn emit_edge(
        &mut self,
        job: &str,
        from: JobState,
        to: JobState,
        reason: TransitionReason,
        node: Option<String>,
        note: Option<String>,
    ) -> Result<(), SimError> {
        self.emit(RecordBody::Transition {
            job: job.to_string(),
            from,
            to,
            reason,
            node,
            note,
        })
    }

    fn prime_ticks(&mut self) {
        if !self.reconcile_live {
            self.reconcile_live = true;
            let t = self.now + self.knobs.reconcile_period;
            self.schedule(t, Ev::ReconcileTick);
        }
        if !self.sync_live && !self.backends.is_empty() {
            self.sync_live = true;
            let t = self.now + self.knobs.sync_period;
            self.schedule(t, Ev::SyncTick);
        }
    }

    fn dispatch_event(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Arrival { idx } => {
                self.sources_left -= 1;
                let spec = self.scenario.workloads[idx].clone();
                self.submit_internal(spec, None)?;
            }
            Ev::WorkflowStart { name } => {
                self.sources_left -= 1;
                self.start_workflow(&name)?;
            }
            Ev::ReconcileTick => {
                if self.done() {
                    self.reconcile_live = false;
                } else {
                    self.pending_reconcile = true;
                    let t = self.now + self.knobs.reconcile_period;
                    self.schedule(t, Ev::ReconcileTick);
                }
            }
            Ev::SyncTick => {
                if self.done() {
                    self.sync_live = false;
                } else {
                    self.do_sync()?;
                    let t = self.now + self.knobs.sync_period;
                    self.schedule(t, Ev::SyncTick);
                }
            }
            Ev::LocalFinish { job, started_at } => {
                self.handle_local_finish(&job, started_at)?;
            }
            Ev::EvictFire { job, started_at } => {
                self.handle_evict_fire(&job, started_at)?;
            }
        }
        Ok(())
    }

    fn submit_internal(
        &mut self,
        spec: WorkloadSpec,
        workflow: Option<String>,
    ) -> Result<(), SimError> {
        let id = self.state.submit(spec.clone())?;
        self.live_jobs += 1;
        self.emit(RecordBody::JobSubmitted {
            job: id,
            spec,
            workflow,
        })?;
        self.pending_reconcile = true;
        Ok(())
    }

    // ---- reconcile -----------------------------------------------------

    fn reconcile_fixpoint(&mut self) -> Result<(), SimError> {
        loop {
            let frozen: BTreeSet<String> = self.evicting.keys().cloned().collect();
            let decisions = self.state.reconcile_excluding(&self.nodes, &frozen)?;
            if decisions.is_empty() {
                break;
            }
            let applied = self.apply_decisions(&decisions)?;
            self.emit(RecordBody::Reconcile {
                decisions: decisions.len() as u64,
            })?;
            if applied == 0 {
                // Every remaining decision is blocked (typically a virtual
                // dispatch against an unreachable provider); try again at
                // the next trigger instead of spinning.
                break;
            }
        }
        Ok(())
    }

    fn apply_decisions(&mut self, decisions: &[Decision]) -> Result<usize, SimError> {
        let mut applied = 0usize;
        for d in decisions {
            match d {
                Decision::Admit { job } => {
                    self.state.admit_job(job, self.now)?;
                    self.emit_edge(
                        job,
                        JobState::Pending,
                        JobState::Admitted,
                        TransitionReason::QuotaAdmit,
                        None,
                        None,
                    )?;
                    applied += 1;
                }
                Decision::Dispatch { job, node } => {
                    if self.try_dispatch(job, node)? {
                        applied += 1;
                    }
                }
                Decision::Evict { job, reason } => {
                    if self.knobs.eviction_grace == 0 {
                        if self.do_evict(job, *reason)? {
                            applied += 1;
                        }
                    } else if !self.evicting.contains_key(job) {
                        if let Some(start) =
                            self.state.jobs.get(job).and_then(|j| j.last_start())
                        {
                            self.evicting.insert(job.clone(), start);
                            let t = self.now + self.knobs.eviction_grace;
                            self.schedule(
                                t,
                                Ev::EvictFire {
                                    job: job.clone(),
                                    started_at: start,
                                },
                            );
                            applied += 1;
                        }
                    }
                }
                Decision::Requeue { job } => {
                    // Under a grace period the victim is still running; its
                    // requeue happens when the eviction actually fires.
                    let evicted = self
                        .state
                        .jobs
                        .get(job)
                        .is_some_and(|j| j.state == JobState::Evicted);
                    if evicted {
                        self.requeue_and_log(job)?;
                        applied += 1;
                    }
                }
                Decision::Reject { job, reason } => {
                    self.state.reject_job(job, self.now)?;
                    self.emit_edge(
                        job,
                        JobState::Pending,
                        JobState::Failed,
                        TransitionReason::Fault,
                        None,
                        Some(reason.clone()),
                    )?;
                    self.handle_terminal(job)?;
                    applied += 1;
                }
            }
        }
        Ok(applied)
    }

    /// Attempt a planned placement. Skips quietly (returning false) when the
    /// fit evaporated — e.g. paired evictions are still in their grace
    /// period — or when the provider cannot take the job right now.
    fn try_dispatch(&mut self, job: &str, node_name: &str) -> Result<bool, SimError> {
        let (fits, is_virtual, provider) = {
            let node = self
                .nodes
                .iter()
                .find(|n| n.name == node_name)
                .ok_or_else(|| internal(format!("dispatch to unknown node {node_name}")))?;
            let j = self
                .state
                .jobs
                .get(job)
                .ok_or_else(|| internal(format!("dispatch of unknown job {job}")))?;
            if j.state != JobState::Admitted {
                return Ok(false);
            }
            (
                j.spec.request.fits_within(&node.free()),
                node.kind == NodeKind::Virtual,
                node.provider.clone(),
            )
        };
        if !fits {
            return Ok(false);
        }

        if is_virtual {
            let provider =
                provider.ok_or_else(|| internal(format!("virtual node {node_name} lacks provider")))?;
            let (req, duration) = {
                let spec = &self
                    .state
                    .jobs
                    .get(job)
                    .expect("checked above")
                    .spec;
                let flavor = self.backends[&provider].flavor();
                (
                    CreateRequest {
                        id: spec.id.clone(),
                        doc: translate(spec, flavor),
                        resources: WireResources::from_request(&spec.request),
                    },
                    spec.est_duration,
                )
            };
            let backend = self
                .backends
                .get_mut(&provider)
                .ok_or_else(|| internal(format!("no backend for provider {provider}")))?;
            match backend.create(self.now, &mut self.rng, &req, duration) {
                Err(e) => {
                    self.emit(RecordBody::RemoteCreateFailed {
                        job: job.to_string(),
                        provider,
                        error: e.to_string(),
                    })?;
                    Ok(false)
                }
                Ok(CreateResponse::Rejected { error }) => {
                    self.emit(RecordBody::RemoteCreateFailed {
                        job: job.to_string(),
                        provider,
                        error,
                    })?;
                    Ok(false)
                }
                Ok(CreateResponse::Accepted { remote_id }) => {
                    self.emit(RecordBody::RemoteCreate {
                        job: job.to_string(),
                        provider: provider.clone(),
                        remote_id: remote_id.clone(),
                    })?;
                    self.state.dispatch_job(&mut self.nodes, job, node_name, self.now)?;
                    self.emit_edge(
                        job,
                        JobState::Admitted,
                        JobState::Dispatched,
                        TransitionReason::Dispatch,
                        Some(node_name.to_string()),
                        None,
                    )?;
                    self.remote.insert(
                        job.to_string(),
                        RemoteJobRecord {
                            local_id: job.to_string(),
                            remote_id,
                            provider,
                            remote_status: RemoteStatus::Queued,
                            last_sync: self.now,
                        },
                    );
                    Ok(true)
                }
            }
        } else {
            self.state.dispatch_job(&mut self.nodes, job, node_name, self.now)?;
            self.emit_edge(
                job,
                JobState::Admitted,
                JobState::Dispatched,
                TransitionReason::Dispatch,
                Some(node_name.to_string()),
                None,
            )?;
            self.allocate_partitions(job, node_name)?;
            self.state.start_job(job, self.now)?;
            self.emit_edge(
                job,
                JobState::Dispatched,
                JobState::Running,
                TransitionReason::Start,
                Some(node_name.to_string()),
                None,
            )?;
            let duration = self.state.jobs[job].spec.est_duration;
            let t = self.now + duration;
            self.schedule(
                t,
                Ev::LocalFinish {
                    job: job.to_string(),
                    started_at: self.now,
                },
            );
            Ok(true)
        }
    }

    /// Carve accelerator instances for a locally placed job: devices in id
    /// order, each contributing what it can, largest profiles first.
    fn allocate_partitions(&mut self, job: &str, node_name: &str) -> Result<(), SimError> {
        let (request, owner) = {
            let spec = &self.state.jobs[job].spec;
            (
                spec.request.accel.clone(),
                Owner {
                    project: spec.project.clone(),
                    user: spec.user.clone(),
                },
            )
        };
        if request.is_empty() {
            return Ok(());
        }
        let node = self
            .nodes
            .iter_mut()
            .find(|n| n.name == node_name)
            .ok_or_else(|| internal(format!("no node {node_name}")))?;
        let mut holds = Vec::new();
        for (key, slices) in &request {
            let model = accel_model(key);
            let mut remaining = *slices;
            for (dev_id, dev) in node.devices.iter_mut() {
                if remaining == 0 {
                    break;
                }
                if dev.model != model {
                    continue;
                }
                let take = remaining.min(dev.free_slices());
                if take == 0 {
                    continue;
                }
                for profile in decompose_slices(take) {
                    let instance = dev.allocate_instance(profile, owner.clone())?;
                    holds.push((node_name.to_string(), dev_id.clone(), instance));
                }
                remaining -= take;
            }
            if remaining > 0 {
                return Err(internal(format!(
                    "node {node_name} lacks {remaining} {model} slices for {job}"
                )));
            }
        }
        self.placements.insert(job.to_string(), holds);
        Ok(())
    }

    fn release_partitions(&mut self, job: &str) -> Result<(), SimError> {
        let Some(holds) = self.placements.remove(job) else {
            return Ok(());
        };
        for (node_name, dev_id, instance) in holds {
            let node = self
                .nodes
                .iter_mut()
                .find(|n| n.name == node_name)
                .ok_or_else(|| internal(format!("no node {node_name}")))?;
            let dev = node
                .devices
                .get_mut(&dev_id)
                .ok_or_else(|| internal(format!("no device {dev_id}")))?;
            dev.release_instance(&instance)?;
        }
        Ok(())
    }

    // ---- evictions -----------------------------------------------------

    /// Stop a running job and release its hold. For offloaded jobs the
    /// remote DELETE goes out first; if the provider is unreachable the
    /// eviction is abandoned for now (the job keeps running) and the next
    /// reconcile pass plans afresh.
    fn do_evict(&mut self, job: &str, reason: TransitionReason) -> Result<bool, SimError> {
        let node_name = match self.state.jobs.get(job).and_then(|j| j.node.clone()) {
            Some(n) => n,
            None => return Ok(false),
        };
        let is_virtual = self
            .nodes
            .iter()
            .find(|n| n.name == node_name)
            .map(|n| n.kind == NodeKind::Virtual)
            .unwrap_or(false);
        if is_virtual {
            let record = self
                .remote
                .get(job)
                .cloned()
                .ok_or_else(|| internal(format!("offloaded job {job} has no remote record")))?;
            let backend = self
                .backends
                .get_mut(&record.provider)
                .ok_or_else(|| internal(format!("no backend for {}", record.provider)))?;
            let acknowledged = backend
                .delete(
                    self.now,
                    &DeleteRequest {
                        remote_id: record.remote_id.clone(),
                    },
                )
                .map(|r| r.ok)
                .unwrap_or(false);
            self.emit(RecordBody::RemoteDelete {
                job: job.to_string(),
                provider: record.provider.clone(),
                remote_id: record.remote_id.clone(),
                acknowledged,
            })?;
            if !acknowledged {
                return Ok(false);
            }
            self.remote.remove(job);
        } else {
            self.release_partitions(job)?;
        }
        self.state.evict_job(&mut self.nodes, job, self.now, reason)?;
        self.emit_edge(
            job,
            JobState::Running,
            JobState::Evicted,
            reason,
            Some(node_name),
            None,
        )?;
        Ok(true)
    }

    fn requeue_and_log(&mut self, job: &str) -> Result<(), SimError> {
        let evict_reason = self.state.jobs[job]
            .history
            .iter()
            .rev()
            .find(|r| r.to == JobState::Evicted)
            .map(|r| r.reason)
            .unwrap_or(TransitionReason::EvictForInteractive);
        let new_state = self.state.requeue_job(job, self.now)?;
        if new_state == JobState::Failed {
            self.emit_edge(
                job,
                JobState::Evicted,
                JobState::Failed,
                TransitionReason::RetriesExhausted,
                None,
                None,
            )?;
            self.handle_terminal(job)?;
        } else {
            self.emit_edge(
                job,
                JobState::Evicted,
                JobState::Pending,
                evict_reason,
                None,
                None,
            )?;
            self.pending_reconcile = true;
        }
        Ok(())
    }

    fn handle_evict_fire(&mut self, job: &str, started_at: u64) -> Result<(), SimError> {
        let planned = self.evicting.remove(job);
        if planned != Some(started_at) {
            return Ok(());
        }
        let still_valid = self
            .state
            .jobs
            .get(job)
            .is_some_and(|j| j.state == JobState::Running && j.last_start() == Some(started_at));
        if !still_valid {
            // The job finished, was lost, or was otherwise resolved during
            // the grace period; nothing to kill.
            return Ok(());
        }
        if self.do_evict(job, TransitionReason::EvictForInteractive)? {
            self.requeue_and_log(job)?;
            self.pending_reconcile = true;
        }
        Ok(())
    }

    // ---- local completion ----------------------------------------------

    fn handle_local_finish(&mut self, job: &str, started_at: u64) -> Result<(), SimError> {
        let valid = self
            .state
            .jobs
            .get(job)
            .is_some_and(|j| j.state == JobState::Running && j.last_start() == Some(started_at));
        if !valid {
            return Ok(());
        }
        let node = self.state.jobs[job].node.clone();
        self.release_partitions(job)?;
        self.state.finish_job(&mut self.nodes, job, self.now, true)?;
        self.emit_edge(
            job,
            JobState::Running,
            JobState::Succeeded,
            TransitionReason::Finish,
            node,
            None,
        )?;
        self.handle_terminal(job)?;
        Ok(())
    }

    // ---- provider sync -------------------------------------------------

    fn do_sync(&mut self) -> Result<(), SimError> {
        let sites: Vec<String> = self.backends.keys().cloned().collect();
        for site in sites {
            if !self.backends[&site].reachable(self.now) {
                continue;
            }
            let batch: Vec<(String, String)> = self
                .remote
                .iter()
                .filter(|(_, r)| r.provider == site)
                .map(|(local, r)| (local.clone(), r.remote_id.clone()))
                .collect();
            for (local, remote_id) in batch {
                let resp = self.backends[&site].status(
                    self.now,
                    &StatusRequest {
                        remote_id: remote_id.clone(),
                    },
                )?;
                if let Some(record) = self.remote.get_mut(&local) {
                    record.remote_status = resp.status;
                    record.last_sync = self.now;
                }
                self.apply_remote_status(&local, &site, resp.status)?;
            }
        }
        Ok(())
    }

    fn apply_remote_status(
        &mut self,
        local: &str,
        site: &str,
        status: RemoteStatus,
    ) -> Result<(), SimError> {
        match map_remote_status(status) {
            LocalAction::StayDispatched => {}
            LocalAction::MarkRunning => {
                if self.state.jobs[local].state == JobState::Dispatched {
                    self.state.start_job(local, self.now)?;
                    self.emit_edge(
                        local,
                        JobState::Dispatched,
                        JobState::Running,
                        TransitionReason::Start,
                        Some(site.to_string()),
                        None,
                    )?;
                }
            }
            LocalAction::MarkSucceeded | LocalAction::MarkFailed => {
                let success = status == RemoteStatus::Done;
                self.ensure_started(local, site)?;
                self.state.finish_job(&mut self.nodes, local, self.now, success)?;
                let (to, reason) = if success {
                    (JobState::Succeeded, TransitionReason::Finish)
                } else {
                    (JobState::Failed, TransitionReason::Fault)
                };
                self.emit_edge(local, JobState::Running, to, reason, Some(site.to_string()), None)?;
                self.remote.remove(local);
                self.handle_terminal(local)?;
            }
            LocalAction::RequeueLost => {
                self.ensure_started(local, site)?;
                self.state
                    .evict_job(&mut self.nodes, local, self.now, TransitionReason::RemoteLost)?;
                self.emit_edge(
                    local,
                    JobState::Running,
                    JobState::Evicted,
                    TransitionReason::RemoteLost,
                    Some(site.to_string()),
                    None,
                )?;
                self.remote.remove(local);
                self.requeue_and_log(local)?;
            }
        }
        Ok(())
    }

    /// A remote job can reach a terminal status between polls without a
    /// RUNNING observation; take the missing start edge first.
    fn ensure_started(&mut self, local: &str, site: &str) -> Result<(), SimError> {
        if self.state.jobs[local].state == JobState::Dispatched {
            self.state.start_job(local, self.now)?;
            self.emit_edge(
                local,
                JobState::Dispatched,
                JobState::Running,
                TransitionReason::Start,
                Some(site.to_string()),
                None,
            )?;
        }
        Ok(())
    }

    // ---- workflows -----------------------------------------------------

    fn start_workflow(&mut self, name: &str) -> Result<(), SimError> {
        let entry = self
            .wf_entries
            .get(name)
            .cloned()
            .ok_or_else(|| internal(format!("no workflow entry {name}")))?;
        let rules = parse_workflow(&entry.doc)?;
        let run = WorkflowRun::new(rules)?;
        let rule_count = run.rules.len() as u64;
        let ready = run.ready_set();
        let complete = run.is_complete();
        self.workflows.insert(name.to_string(), run);
        if !complete {
            self.incomplete_workflows += 1;
        }
        self.emit(RecordBody::WorkflowStarted {
            workflow: name.to_string(),
            rules: rule_count,
        })?;
        self.release_rules(name, &ready)?;
        self.pending_reconcile = true;
        Ok(())
    }

    fn release_rules(&mut self, wf_name: &str, rules: &[String]) -> Result<(), SimError> {
        for rule_name in rules {
            let (spec, job_id) = {
                let entry = &self.wf_entries[wf_name];
                let run = self
                    .workflows
                    .get_mut(wf_name)
                    .ok_or_else(|| internal(format!("no workflow {wf_name}")))?;
                run.mark_released(rule_name)?;
                let rule = run.rule(rule_name)?;
                let job_id = format!("{wf_name}/{rule_name}");
                let mut spec = rule.workload.clone();
                spec.id = job_id.clone();
                spec.project = entry.project.clone();
                spec.user = entry.user.clone();
                spec.est_duration = self.knobs.rule_est_duration;
                spec.max_retries = self.knobs.rule_max_retries;
                spec.submit_time = self.now;
                (spec, job_id)
            };
            self.emit(RecordBody::RuleReleased {
                workflow: wf_name.to_string(),
                rule: rule_name.clone(),
                job: job_id.clone(),
            })?;
            self.rule_of_job
                .insert(job_id.clone(), (wf_name.to_string(), rule_name.clone()));
            self.submit_internal(spec, Some(wf_name.to_string()))?;
        }
        Ok(())
    }

    fn handle_terminal(&mut self, job_id: &str) -> Result<(), SimError> {
        self.live_jobs -= 1;
        self.pending_reconcile = true;
        let Some((wf, rule)) = self.rule_of_job.get(job_id).cloned() else {
            return Ok(());
        };
        let success = self.state.jobs[job_id].state == JobState::Succeeded;
        let outcome = self
            .workflows
            .get_mut(&wf)
            .ok_or_else(|| internal(format!("no workflow {wf}")))?
            .on_rule_terminal(&rule, success)?;
        if success {
            self.emit(RecordBody::RuleDone {
                workflow: wf.clone(),
                rule: rule.clone(),
            })?;
        } else {
            self.emit(RecordBody::RuleFailed {
                workflow: wf.clone(),
                rule: rule.clone(),
            })?;
            for cancelled in &outcome.cancelled {
                self.emit(RecordBody::RuleCancelled {
                    workflow: wf.clone(),
                    rule: cancelled.clone(),
                    failed_ancestor: rule.clone(),
                })?;
            }
        }
        self.release_rules(&wf, &outcome.newly_ready)?;
        if self.workflows[&wf].is_complete() {
            self.incomplete_workflows -= 1;
        }
        Ok(())
    }
}

/// Conservative automatic stopping time for scenarios without an explicit
/// horizon: latest scheduled input, plus every attempt's runtime, plus a
/// generous per-attempt overhead for queue delays and controller periods.
/// Fault windows ending within 10^6 sim-seconds extend the base; longer
/// outages are treated as permanent (set `knobs.horizon` to study them).
fn auto_horizon(scn: &Scenario) -> u64 {
    let mut base = 0u64;
    for w in &scn.workloads {
        base = base.max(w.submit_time);
    }
    for e in &scn.workflows {
        base = base.max(e.start_time);
    }
    for f in &scn.failures {
        if f.window.end <= 1_000_000 {
            base = base.max(f.window.end);
        }
    }
    let mut attempts = 0u64;
    let mut work = 0u64;
    for w in &scn.workloads {
        let a = 1 + w.max_retries as u64;
        attempts = attempts.saturating_add(a);
        work = work.saturating_add(w.est_duration.saturating_mul(a));
    }
    for e in &scn.workflows {
        if let Ok(rules) = parse_workflow(&e.doc) {
            let a = (rules.len() as u64).saturating_mul(1 + scn.knobs.rule_max_retries as u64);
            attempts = attempts.saturating_add(a);
            work = work.saturating_add(a.saturating_mul(scn.knobs.rule_est_duration));
        }
    }
    let max_delay = scn
        .sites
        .providers
        .iter()
        .map(|p| p.queue_delay_dist.mean + p.queue_delay_dist.jitter)
        .max()
        .unwrap_or(0);
    let per_attempt = max_delay
        .saturating_add(scn.knobs.sync_period)
        .saturating_add(scn.knobs.reconcile_period)
        .saturating_add(scn.knobs.eviction_grace);
    base.saturating_add(work)
        .saturating_add(attempts.saturating_mul(per_attempt))
        .saturating_add(10 * (scn.knobs.sync_period + scn.knobs.reconcile_period))
        .saturating_add(1_000)
}
