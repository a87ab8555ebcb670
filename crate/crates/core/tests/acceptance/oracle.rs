//! Independent interpretations of the event log, written against the record
//! format only. Nothing here calls the engine, queue, metrics, or replay
//! code paths under test; resource arithmetic is redone on a plain map.

use std::collections::{BTreeMap, BTreeSet};

use flotilla_core::sim::{LogRecord, RecordBody};
use flotilla_core::{JobState, ResourceVector, WorkloadKind};

/// Flat dimension->amount view of a request or capacity, including the two
/// scalar dimensions and every accelerator key.
pub type Dims = BTreeMap<String, u64>;

pub fn dims(rv: &ResourceVector) -> Dims {
    let mut out = BTreeMap::new();
    out.insert("cpu_cores".to_string(), rv.cpu_cores);
    out.insert("memory_gib".to_string(), rv.memory_gib);
    for (model, slices) in &rv.accel {
        out.insert(model.clone(), *slices);
    }
    out
}

fn add(acc: &mut Dims, req: &Dims) {
    for (k, v) in req {
        *acc.entry(k.clone()).or_insert(0) += v;
    }
}

fn sub(acc: &mut Dims, req: &Dims) -> Result<(), String> {
    for (k, v) in req {
        let slot = acc.entry(k.clone()).or_insert(0);
        *slot = slot
            .checked_sub(*v)
            .ok_or_else(|| format!("underflow on {k}"))?;
    }
    Ok(())
}

fn covers(avail: &Dims, req: &Dims) -> bool {
    req.iter()
        .all(|(k, v)| avail.get(k).copied().unwrap_or(0) >= *v)
}

/// Walks the log and re-derives per-node allocation, failing at the first
/// (t, seq) where any dimension exceeds the node's announced capacity.
pub fn check_no_overcommit(label: &str, records: &[LogRecord]) -> Result<(), String> {
    let mut capacity: BTreeMap<String, Dims> = BTreeMap::new();
    let mut allocated: BTreeMap<String, Dims> = BTreeMap::new();
    let mut requests: BTreeMap<String, Dims> = BTreeMap::new();
    let mut placed: BTreeMap<String, String> = BTreeMap::new();

    for rec in records {
        match &rec.body {
            RecordBody::NodeUp {
                node, allocatable, ..
            } => {
                capacity.insert(node.clone(), dims(allocatable));
                allocated.insert(node.clone(), Dims::new());
            }
            RecordBody::JobSubmitted { job, spec, .. } => {
                requests.insert(job.clone(), dims(&spec.request));
            }
            RecordBody::Transition {
                job,
                from,
                to,
                node,
                ..
            } => {
                use JobState::*;
                match (from, to) {
                    (Admitted, Dispatched) => {
                        let node = node
                            .clone()
                            .ok_or_else(|| format!("{label}: dispatch of {job} without node"))?;
                        let req = requests
                            .get(job)
                            .ok_or_else(|| format!("{label}: dispatch of unknown job {job}"))?
                            .clone();
                        placed.insert(job.clone(), node.clone());
                        let alloc = allocated
                            .get_mut(&node)
                            .ok_or_else(|| format!("{label}: unknown node {node}"))?;
                        add(alloc, &req);
                        let cap = &capacity[&node];
                        if !covers(cap, alloc) {
                            return Err(format!(
                                "{label}: overcommit on {node} at t={} seq={}: \
                                 allocated {alloc:?} exceeds capacity {cap:?}",
                                rec.t, rec.seq
                            ));
                        }
                    }
                    (Running, Succeeded)
                    | (Running, Failed)
                    | (Running, Evicted)
                    | (Dispatched, Failed) => {
                        let node = placed
                            .remove(job)
                            .ok_or_else(|| format!("{label}: release of unplaced job {job}"))?;
                        let req = requests[job].clone();
                        sub(allocated.get_mut(&node).unwrap(), &req)
                            .map_err(|e| format!("{label}: releasing {job}: {e}"))?;
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Exact (project, dimension) -> resource-seconds, recomputed from dispatch
/// and release edges alone. Placements still open at the end of the log are
/// charged through its final timestamp.
pub fn integral_oracle(records: &[LogRecord]) -> BTreeMap<(String, String), u128> {
    let mut totals: BTreeMap<(String, String), u128> = BTreeMap::new();
    let mut meta: BTreeMap<String, (Dims, String)> = BTreeMap::new();
    let mut open: BTreeMap<String, u64> = BTreeMap::new();
    let mut end = 0;

    for rec in records {
        end = rec.t;
        match &rec.body {
            RecordBody::JobSubmitted { job, spec, .. } => {
                meta.insert(job.clone(), (dims(&spec.request), spec.project.clone()));
            }
            RecordBody::Transition { job, from, to, .. } => {
                use JobState::*;
                match (from, to) {
                    (Admitted, Dispatched) => {
                        open.insert(job.clone(), rec.t);
                    }
                    (Running, Succeeded)
                    | (Running, Failed)
                    | (Running, Evicted)
                    | (Dispatched, Failed) => {
                        if let Some(start) = open.remove(job) {
                            let (req, project) = &meta[job];
                            let dur = (rec.t - start) as u128;
                            for (dim, held) in req {
                                if *held > 0 {
                                    *totals
                                        .entry((project.clone(), dim.clone()))
                                        .or_insert(0) += *held as u128 * dur;
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
            _ => {}
        }
    }
    for (job, start) in open {
        let (req, project) = &meta[&job];
        let dur = (end - start) as u128;
        for (dim, held) in req {
            if *held > 0 {
                *totals.entry((project.clone(), dim.clone())).or_insert(0) +=
                    *held as u128 * dur;
            }
        }
    }
    totals
}

/// Last lifecycle state of every submitted job, per the log.
pub fn final_states(records: &[LogRecord]) -> BTreeMap<String, JobState> {
    let mut states = BTreeMap::new();
    for rec in records {
        match &rec.body {
            RecordBody::JobSubmitted { job, .. } => {
                states.insert(job.clone(), JobState::Pending);
            }
            RecordBody::Transition { job, to, .. } => {
                states.insert(job.clone(), *to);
            }
            _ => {}
        }
    }
    states
}

/// Work-conserving priority check: after every reconciled timestamp, no
/// undispatched interactive job may fit any single node's free capacity plus
/// the sum of its evictable (running batch) holdings. Requires scenarios
/// whose projects are unconstrained, so quota never explains a wait.
pub fn check_interactive_priority(label: &str, records: &[LogRecord]) -> Result<(), String> {
    struct World {
        capacity: BTreeMap<String, Dims>,
        allocated: BTreeMap<String, Dims>,
        specs: BTreeMap<String, (Dims, WorkloadKind)>,
        states: BTreeMap<String, JobState>,
        placed: BTreeMap<String, String>,
    }

    // Every waiting interactive must be unsatisfiable on every node, where a
    // node's pool is its free capacity plus everything evictable on it.
    fn assert_quiescent(label: &str, when: &str, w: &World) -> Result<(), String> {
        for (job, state) in &w.states {
            if !matches!(state, JobState::Pending | JobState::Admitted) {
                continue;
            }
            let (req, kind) = &w.specs[job];
            if *kind != WorkloadKind::Interactive {
                continue;
            }
            for (node, cap) in &w.capacity {
                let alloc = &w.allocated[node];
                let mut pool: Dims = cap
                    .iter()
                    .map(|(k, v)| {
                        (
                            k.clone(),
                            v.saturating_sub(alloc.get(k).copied().unwrap_or(0)),
                        )
                    })
                    .collect();
                for (j, n) in &w.placed {
                    if n == node
                        && w.specs[j].1 == WorkloadKind::Batch
                        && w.states[j] == JobState::Running
                    {
                        add(&mut pool, &w.specs[j].0);
                    }
                }
                if covers(&pool, req) {
                    return Err(format!(
                        "{label}: {when}, interactive {job} ({state:?}) fits node {node} \
                         (free+evictable {pool:?} covers {req:?}) but was not dispatched"
                    ));
                }
            }
        }
        Ok(())
    }

    let mut w = World {
        capacity: BTreeMap::new(),
        allocated: BTreeMap::new(),
        specs: BTreeMap::new(),
        states: BTreeMap::new(),
        placed: BTreeMap::new(),
    };

    let mut idx = 0;
    while idx < records.len() {
        let t = records[idx].t;
        let mut reconciled = false;
        while idx < records.len() && records[idx].t == t {
            let rec = &records[idx];
            match &rec.body {
                RecordBody::NodeUp {
                    node, allocatable, ..
                } => {
                    w.capacity.insert(node.clone(), dims(allocatable));
                    w.allocated.insert(node.clone(), Dims::new());
                }
                RecordBody::JobSubmitted { job, spec, .. } => {
                    w.specs.insert(job.clone(), (dims(&spec.request), spec.kind));
                    w.states.insert(job.clone(), JobState::Pending);
                }
                RecordBody::Transition {
                    job,
                    from,
                    to,
                    node,
                    ..
                } => {
                    use JobState::*;
                    w.states.insert(job.clone(), *to);
                    match (from, to) {
                        (Admitted, Dispatched) => {
                            let node = node.clone().expect("dispatch carries node");
                            add(w.allocated.get_mut(&node).unwrap(), &w.specs[job].0);
                            w.placed.insert(job.clone(), node);
                        }
                        (Running, Succeeded)
                        | (Running, Failed)
                        | (Running, Evicted)
                        | (Dispatched, Failed) => {
                            let node = w.placed.remove(job).expect("release follows placement");
                            sub(w.allocated.get_mut(&node).unwrap(), &w.specs[job].0)
                                .map_err(|e| format!("{label}: {e}"))?;
                        }
                        _ => {}
                    }
                }
                RecordBody::Reconcile { .. } => reconciled = true,
                _ => {}
            }
            idx += 1;
        }
        if reconciled {
            assert_quiescent(label, &format!("at t={t}"), &w)?;
        }
    }
    // The run must not end with satisfiable interactive work still waiting,
    // whatever the last timestamp contained.
    assert_quiescent(label, "at end of log", &w)
}

/// Ground-truth workflow outcome, evaluated topologically over the generated
/// edge list: a rule completes iff all parents completed and it is not
/// doomed; fails iff doomed with all parents completed; otherwise it hangs
/// off a failure and must be cancelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedRule {
    Done,
    Failed,
    Cancelled,
}

pub fn dag_expected(parents: &[Vec<usize>], doomed: &BTreeSet<usize>) -> Vec<ExpectedRule> {
    let mut out: Vec<ExpectedRule> = Vec::with_capacity(parents.len());
    for (i, ps) in parents.iter().enumerate() {
        let all_done = ps.iter().all(|&p| out[p] == ExpectedRule::Done);
        out.push(if !all_done {
            ExpectedRule::Cancelled
        } else if doomed.contains(&i) {
            ExpectedRule::Failed
        } else {
            ExpectedRule::Done
        });
    }
    out
}
