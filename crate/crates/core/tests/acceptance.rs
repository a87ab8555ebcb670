//! Acceptance gate: nine checks, one line of output each, nonzero exit on
//! any failure. Each check verifies the system against an oracle that is
//! independent of the code paths under test (a brute-force search, a
//! hand-derived fixture, or a separate fold of the event log).

#[path = "acceptance/gen.rs"]
mod gen;
#[path = "acceptance/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use flotilla_core::partition::FULL_DEVICE_SLICES;
use flotilla_core::queue::evict_for;
use flotilla_core::sim::{EventLog, RecordBody, Scenario};
use flotilla_core::{
    dag, run_scenario, translate, AcceleratorDevice, EvictionPlan, JobState, MetricsState, Node,
    Owner, PartitionError, Project, ProviderFlavor, QueueState, ResourceVector, RunReport,
    TransitionReason, WorkloadKind, WorkloadSpec,
};

use oracle::ExpectedRule;

fn fixture_path(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn golden_path(name: &str) -> String {
    format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn load_fixture_scenario() -> Scenario {
    let text = std::fs::read_to_string(fixture_path("fourSite.json")).expect("fixture readable");
    Scenario::from_json(&text).expect("fixture validates")
}

struct Criterion {
    number: usize,
    name: &'static str,
    budget: Option<Duration>,
    elapsed: Duration,
    result: Result<String, String>,
}

/// Logs produced while running the checks; the overcommit and conservation
/// criteria sweep every one of them.
struct Registry {
    logs: Vec<(String, EventLog)>,
}

impl Registry {
    fn add(&mut self, label: impl Into<String>, log: EventLog) {
        self.logs.push((label.into(), log));
    }
}

fn main() {
    let mut registry = Registry { logs: Vec::new() };
    let mut results: Vec<Criterion> = Vec::new();

    let run = |n: usize,
                   name: &'static str,
                   budget: Option<Duration>,
                   f: &mut dyn FnMut(&mut Registry) -> Result<String, String>,
                   registry: &mut Registry,
                   results: &mut Vec<Criterion>| {
        let start = Instant::now();
        let result = f(registry);
        results.push(Criterion {
            number: n,
            name,
            budget,
            elapsed: start.elapsed(),
            result,
        });
    };

    run(1, "seven-user slicing bound", Some(Duration::from_secs(1)), &mut criterion_partition, &mut registry, &mut results);
    run(2, "eviction minimality", Some(Duration::from_secs(10)), &mut criterion_eviction_minimality, &mut registry, &mut results);
    run(3, "interactive priority", None, &mut criterion_interactive_priority, &mut registry, &mut results);
    run(5, "four-site federation", Some(Duration::from_secs(30)), &mut criterion_four_site, &mut registry, &mut results);
    run(6, "workflow soundness", None, &mut criterion_dag, &mut registry, &mut results);
    run(7, "seeded determinism", None, &mut criterion_determinism, &mut registry, &mut results);
    run(8, "translation fixtures", None, &mut criterion_translation, &mut registry, &mut results);
    // These two audit every log the other checks produced, so they run last.
    run(4, "no overcommit", None, &mut criterion_no_overcommit, &mut registry, &mut results);
    run(9, "accounting conservation", None, &mut criterion_conservation, &mut registry, &mut results);

    results.sort_by_key(|c| c.number);
    let mut failures = 0;
    for c in &results {
        let over_budget = c.budget.is_some_and(|b| c.elapsed > b);
        let verdict = match (&c.result, over_budget) {
            (Ok(_), false) => "PASS",
            _ => "FAIL",
        };
        if verdict == "FAIL" {
            failures += 1;
        }
        let detail = match &c.result {
            Ok(d) if over_budget => format!(
                "{d}; exceeded budget {:?} (took {:?})",
                c.budget.unwrap(),
                c.elapsed
            ),
            Ok(d) => d.clone(),
            Err(e) => e.clone(),
        };
        println!(
            "{verdict} criterion {}: {} [{:.2?}] — {detail}",
            c.number, c.name, c.elapsed
        );
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criterion(s) failed");
        std::process::exit(1);
    }
}

// --- 1: partitioning ----------------------------------------------------

fn multisets(max_sum: u64) -> Vec<Vec<u64>> {
    fn extend(prefix: &mut Vec<u64>, min: u64, left: u64, out: &mut Vec<Vec<u64>>) {
        out.push(prefix.clone());
        for part in min..=left {
            prefix.push(part);
            extend(prefix, part, left - part, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), 1, max_sum, &mut out);
    out
}

fn criterion_partition(_reg: &mut Registry) -> Result<String, String> {
    let owner = |i: usize| Owner {
        project: "p".to_string(),
        user: format!("u{i}"),
    };

    // Seven concurrent single-slice owners on one device; the eighth is
    // refused with NoCapacity.
    let mut dev = AcceleratorDevice::new("srv/a100-0", "a100", FULL_DEVICE_SLICES);
    for i in 0..7 {
        dev.allocate_instance(1, owner(i))
            .map_err(|e| format!("slice {i} refused: {e}"))?;
    }
    match dev.allocate_instance(1, owner(7)) {
        Err(PartitionError::NoCapacity { .. }) => {}
        other => return Err(format!("eighth allocation returned {other:?}")),
    }
    if dev.owner_count() != 7 {
        return Err(format!("{} owners, expected 7", dev.owner_count()));
    }

    // Exhaustive multiset feasibility vs. the arithmetic oracle: a profile
    // multiset fits a fresh 7-slice device iff every size is a legal profile
    // and the sizes sum to at most 7.
    let legal: BTreeSet<u64> = flotilla_core::partition::ALLOWED_PROFILES.into_iter().collect();
    let sets = multisets(12);
    for set in &sets {
        let expected = set.iter().all(|s| legal.contains(s)) && set.iter().sum::<u64>() <= 7;
        let mut dev = AcceleratorDevice::new("probe", "a100", FULL_DEVICE_SLICES);
        let got = set
            .iter()
            .enumerate()
            .all(|(i, &size)| dev.allocate_instance(size, owner(i)).is_ok());
        if got != expected {
            return Err(format!(
                "multiset {set:?}: allocator says {got}, oracle says {expected}"
            ));
        }
    }
    Ok(format!(
        "7/8 single-slice bound holds; {} multisets agree with the oracle",
        sets.len()
    ))
}

// --- 2: eviction minimality ---------------------------------------------

struct EvictionInstance {
    state: QueueState,
    nodes: Vec<Node>,
    target: WorkloadSpec,
}

fn random_eviction_instance(seed: u64) -> EvictionInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let projects = BTreeMap::from([(
        "p".to_string(),
        Project::unconstrained("p".to_string(), std::iter::empty::<String>()),
    )]);
    let mut state = QueueState::new(projects);
    let mut nodes: Vec<Node> = (0..rng.gen_range(1..=3u32))
        .map(|i| {
            Node::local(
                format!("n{i}"),
                ResourceVector::new(rng.gen_range(8..=24), rng.gen_range(8..=24)),
            )
        })
        .collect();

    let mut serial = 0;
    for ni in 0..nodes.len() {
        for _ in 0..rng.gen_range(0..=6u32) {
            let interactive = rng.gen_ratio(1, 5);
            let req = ResourceVector::new(rng.gen_range(1..=6), rng.gen_range(1..=6));
            if !req.fits_within(&nodes[ni].free()) {
                continue;
            }
            let spec = WorkloadSpec {
                id: format!("w{serial:03}"),
                kind: if interactive {
                    WorkloadKind::Interactive
                } else {
                    WorkloadKind::Batch
                },
                project: "p".to_string(),
                user: "u".to_string(),
                request: req,
                image: String::new(),
                command: vec![],
                est_duration: 50,
                max_retries: 3,
                submit_time: 0,
            };
            serial += 1;
            let id = state.submit(spec).unwrap();
            state.admit_job(&id, 0).unwrap();
            let node_name = nodes[ni].name.clone();
            state.dispatch_job(&mut nodes, &id, &node_name, 0).unwrap();
            state.start_job(&id, 0).unwrap();
        }
    }

    let target = WorkloadSpec {
        id: "target".to_string(),
        kind: WorkloadKind::Interactive,
        project: "p".to_string(),
        user: "u".to_string(),
        request: ResourceVector::new(rng.gen_range(1..=28), rng.gen_range(1..=28)),
        image: String::new(),
        command: vec![],
        est_duration: 10,
        max_retries: 0,
        submit_time: 1,
    };
    EvictionInstance {
        state,
        nodes,
        target,
    }
}

/// Smallest victim count over every subset of every node's evictable jobs.
fn brute_force_min_victims(inst: &EvictionInstance) -> Option<usize> {
    let mut best: Option<usize> = None;
    for node in &inst.nodes {
        let victims: Vec<&flotilla_core::Job> = inst
            .state
            .jobs
            .values()
            .filter(|j| {
                j.state == JobState::Running
                    && j.spec.kind == WorkloadKind::Batch
                    && j.node.as_deref() == Some(node.name.as_str())
            })
            .collect();
        let free = node.free();
        for mask in 0u32..(1 << victims.len()) {
            let mut pool = free.clone();
            let mut k = 0;
            for (i, v) in victims.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    pool = pool.add(&v.spec.request);
                    k += 1;
                }
            }
            if inst.target.request.fits_within(&pool) && best.is_none_or(|b| k < b) {
                best = Some(k);
            }
        }
    }
    best
}

fn criterion_eviction_minimality(_reg: &mut Registry) -> Result<String, String> {
    let mut satisfiable = 0;
    for case in 0..500u64 {
        let inst = random_eviction_instance(1_000 + case);
        let expected = brute_force_min_victims(&inst);
        let plan = evict_for(&inst.target, &inst.state, &inst.nodes);
        match (plan, expected) {
            (EvictionPlan::Satisfiable { victims, .. }, Some(min)) => {
                satisfiable += 1;
                if victims.len() != min {
                    return Err(format!(
                        "case {case}: plan evicts {} victims, oracle minimum is {min}",
                        victims.len()
                    ));
                }
            }
            (EvictionPlan::NotSatisfiable, None) => {}
            (EvictionPlan::Satisfiable { victims, .. }, None) => {
                return Err(format!(
                    "case {case}: plan evicts {victims:?} but oracle says unsatisfiable"
                ));
            }
            (EvictionPlan::NotSatisfiable, Some(min)) => {
                return Err(format!(
                    "case {case}: plan gave up, oracle fits with {min} victims"
                ));
            }
        }
    }
    Ok(format!(
        "500 random instances match the subset-enumeration oracle ({satisfiable} satisfiable)"
    ))
}

// --- 3: interactive priority --------------------------------------------

fn criterion_interactive_priority(reg: &mut Registry) -> Result<String, String> {
    for i in 0..200u64 {
        let scn = gen::small_scenario(3_000 + i);
        let label = format!("priority-{i}");
        let out = run_scenario(&scn, &label).map_err(|e| format!("{label}: {e}"))?;
        oracle::check_interactive_priority(&label, out.log.records())?;
        reg.add(label, out.log);
    }
    Ok("zero violations across 200 random scenarios".to_string())
}

// --- 5: four-site federation --------------------------------------------

fn criterion_four_site(reg: &mut Registry) -> Result<String, String> {
    let scn = load_fixture_scenario();
    let out = run_scenario(&scn, "fourSite.json").map_err(|e| format!("fixture run: {e}"))?;
    if out.horizon_reached {
        return Err("run hit the safety horizon instead of draining".to_string());
    }

    let states = oracle::final_states(out.log.records());
    if states.len() != 200 {
        return Err(format!("{} jobs in log, expected 200", states.len()));
    }
    let stuck: Vec<_> = states
        .iter()
        .filter(|(_, s)| !matches!(s, JobState::Succeeded | JobState::Failed))
        .collect();
    if !stuck.is_empty() {
        return Err(format!("{} job(s) not terminal: {stuck:?}", stuck.len()));
    }

    let mut flavors = BTreeSet::new();
    let mut sites = BTreeSet::new();
    for rec in out.log.iter() {
        match &rec.body {
            RecordBody::NodeUp {
                flavor: Some(f), ..
            } => {
                flavors.insert(*f);
            }
            RecordBody::Transition {
                to: JobState::Dispatched,
                node: Some(n),
                ..
            } => {
                sites.insert(n.clone());
            }
            _ => {}
        }
    }
    if flavors.len() != 3 {
        return Err(format!("provider flavors seen: {flavors:?}, expected all three"));
    }
    if sites.len() != 4 {
        return Err(format!("dispatch sites seen: {sites:?}, expected 4"));
    }

    // Every displacement eviction of an offloaded job must carry an
    // acknowledged remote DELETE at the same instant.
    let mut displaced = 0;
    for rec in out.log.iter() {
        if let RecordBody::Transition {
            job,
            to: JobState::Evicted,
            reason: TransitionReason::EvictForInteractive,
            node: Some(node),
            ..
        } = &rec.body
        {
            if node == "cnaf-ai" {
                continue;
            }
            displaced += 1;
            let deleted = out.log.iter().any(|r| {
                r.t == rec.t
                    && matches!(&r.body, RecordBody::RemoteDelete { job: j, acknowledged, .. }
                        if j == job && *acknowledged)
            });
            if !deleted {
                return Err(format!(
                    "offloaded job {job} evicted at t={} without an acknowledged DELETE",
                    rec.t
                ));
            }
        }
    }
    if displaced == 0 {
        return Err("no offloaded job was ever displaced; fixture must exercise remote eviction"
            .to_string());
    }

    let end = out.end_time;
    reg.add("fourSite.json", out.log);
    Ok(format!(
        "200 jobs terminal by t={end}, 4 sites, 3 flavors, {displaced} remote evictions deleted"
    ))
}

// --- 6: workflow soundness ----------------------------------------------

fn criterion_dag(reg: &mut Registry) -> Result<String, String> {
    for i in 0..200u64 {
        let dag_case = gen::random_dag(5_000 + i, 50);
        let expected = oracle::dag_expected(&dag_case.parents, &dag_case.doomed);
        let label = format!("dag-{i}");

        // Direct control-plane drive in a seed-shuffled release order.
        drive_workflow_directly(5_000 + i, &dag_case, &expected)
            .map_err(|e| format!("{label} (direct): {e}"))?;

        // Full engine run of the same workflow.
        let scn = gen::dag_scenario(5_000 + i, &dag_case);
        let out = run_scenario(&scn, &label).map_err(|e| format!("{label}: {e}"))?;
        check_engine_dag_run(&dag_case, &expected, &out.log)
            .map_err(|e| format!("{label} (engine): {e}"))?;
        if !out.workflows["wf"].is_complete() {
            return Err(format!("{label}: workflow did not complete"));
        }
        reg.add(label, out.log);
    }
    Ok("200 random workflows: release order and cancellation sets match reachability".to_string())
}

fn drive_workflow_directly(
    seed: u64,
    dag_case: &gen::RandomDag,
    expected: &[ExpectedRule],
) -> Result<(), String> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);

    let rules = dag::parse_workflow(&dag_case.doc).map_err(|e| e.to_string())?;
    let mut run = dag::WorkflowRun::new(rules).map_err(|e| e.to_string())?;
    let index: BTreeMap<&str, usize> = dag_case
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    loop {
        let ready = run.ready_set();
        if ready.is_empty() {
            break;
        }
        let pick = ready[rng.gen_range(0..ready.len())].clone();
        run.mark_released(&pick).map_err(|e| e.to_string())?;
        let success = !dag_case.doomed.contains(&index[pick.as_str()]);
        // A released rule may only start once all parents are Done.
        for &p in &dag_case.parents[index[pick.as_str()]] {
            if expected[p] != ExpectedRule::Done {
                return Err(format!(
                    "{pick} became ready although parent {} cannot complete",
                    dag_case.names[p]
                ));
            }
        }
        run.on_rule_terminal(&pick, success)
            .map_err(|e| e.to_string())?;
    }
    if !run.is_complete() {
        return Err("drained run is not complete".to_string());
    }
    for (i, name) in dag_case.names.iter().enumerate() {
        let got = run.rule_status[name];
        let want = match expected[i] {
            ExpectedRule::Done => dag::RuleStatus::Done,
            ExpectedRule::Failed => dag::RuleStatus::Failed,
            ExpectedRule::Cancelled => dag::RuleStatus::Cancelled,
        };
        if got != want {
            return Err(format!("rule {name}: status {got:?}, oracle {want:?}"));
        }
    }
    Ok(())
}

fn check_engine_dag_run(
    dag_case: &gen::RandomDag,
    expected: &[ExpectedRule],
    log: &EventLog,
) -> Result<(), String> {
    let mut done: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut failed: BTreeSet<String> = BTreeSet::new();
    let mut cancelled: BTreeSet<String> = BTreeSet::new();
    let mut first_dispatch: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for rec in log.iter() {
        match &rec.body {
            RecordBody::RuleDone { rule, .. } => {
                done.insert(rule.clone(), (rec.t, rec.seq));
            }
            RecordBody::RuleFailed { rule, .. } => {
                failed.insert(rule.clone());
            }
            RecordBody::RuleCancelled { rule, .. } => {
                cancelled.insert(rule.clone());
            }
            RecordBody::Transition {
                job,
                to: JobState::Dispatched,
                ..
            } => {
                let rule = job.strip_prefix("wf/").unwrap_or(job);
                first_dispatch
                    .entry(rule.to_string())
                    .or_insert((rec.t, rec.seq));
            }
            _ => {}
        }
    }

    for (i, name) in dag_case.names.iter().enumerate() {
        match expected[i] {
            ExpectedRule::Done if !done.contains_key(name) => {
                return Err(format!("rule {name} expected Done"));
            }
            ExpectedRule::Failed if !failed.contains(name) => {
                return Err(format!("rule {name} expected Failed"));
            }
            ExpectedRule::Cancelled if !cancelled.contains(name) => {
                return Err(format!("rule {name} expected Cancelled"));
            }
            _ => {}
        }
    }
    let expected_cancelled: BTreeSet<String> = dag_case
        .names
        .iter()
        .enumerate()
        .filter(|(i, _)| expected[*i] == ExpectedRule::Cancelled)
        .map(|(_, n)| n.clone())
        .collect();
    if cancelled != expected_cancelled {
        return Err(format!(
            "cancellation set {cancelled:?} != reachability oracle {expected_cancelled:?}"
        ));
    }

    // Dispatch order respects transitive dependencies: a rule's job is
    // dispatched strictly after every parent's completion mark.
    for (i, name) in dag_case.names.iter().enumerate() {
        let Some(&at) = first_dispatch.get(name) else {
            continue;
        };
        for &p in &dag_case.parents[i] {
            let parent = &dag_case.names[p];
            let Some(&done_at) = done.get(parent) else {
                return Err(format!("{name} dispatched but parent {parent} never Done"));
            };
            if at <= done_at {
                return Err(format!(
                    "{name} dispatched at {at:?}, not after parent {parent} done at {done_at:?}"
                ));
            }
        }
    }
    Ok(())
}

// --- 7: determinism -----------------------------------------------------

fn criterion_determinism(reg: &mut Registry) -> Result<String, String> {
    let mut scenarios: Vec<(String, Scenario)> = vec![(
        "fourSite.json".to_string(),
        load_fixture_scenario(),
    )];
    for i in 0..8u64 {
        scenarios.push((format!("federated-{i}"), gen::federated_scenario(7_000 + i)));
    }
    for i in 0..4u64 {
        scenarios.push((format!("small-{i}"), gen::small_scenario(7_500 + i)));
    }

    for (label, scn) in &scenarios {
        let a = run_scenario(scn, label).map_err(|e| format!("{label}: {e}"))?;
        let b = run_scenario(scn, label).map_err(|e| format!("{label}: {e}"))?;
        if a.log.to_ndjson() != b.log.to_ndjson() {
            return Err(format!("{label}: event logs differ between identical runs"));
        }
        if a.metrics.export_text() != b.metrics.export_text() {
            return Err(format!("{label}: metrics exports differ"));
        }
        let ra = RunReport::from_records(a.log.records()).render();
        let rb = RunReport::from_records(b.log.records()).render();
        if ra != rb {
            return Err(format!("{label}: reports differ"));
        }
        reg.add(label.clone(), a.log);
    }
    Ok(format!(
        "{} scenarios byte-identical across repeated runs (logs, metrics, reports)",
        scenarios.len()
    ))
}

// --- 8: translation fixtures --------------------------------------------

fn golden_specs() -> Vec<(&'static str, WorkloadSpec)> {
    fn spec(
        id: &str,
        cpu: u64,
        mem: u64,
        accel: &[(&str, u64)],
        image: &str,
        command: &[&str],
    ) -> WorkloadSpec {
        let mut request = ResourceVector::new(cpu, mem);
        for (model, slices) in accel {
            request = request.with_accel(model.to_string(), *slices);
        }
        WorkloadSpec {
            id: id.to_string(),
            kind: WorkloadKind::Batch,
            project: "p".to_string(),
            user: "u".to_string(),
            request,
            image: image.to_string(),
            command: command.iter().map(|s| s.to_string()).collect(),
            est_duration: 60,
            max_retries: 0,
            submit_time: 0,
        }
    }
    vec![
        ("batch-cpu", spec("etl-42", 4, 8, &[], "hub/analysis:latest", &["python", "run.py", "--chunk", "7"])),
        ("minimal-empty", spec("tiny", 1, 1, &[], "", &[])),
        ("notebook", spec("nb-7", 8, 16, &[], "hub/notebook:cuda12", &["start-notebook.sh"])),
        ("mig-one", spec("train-a", 4, 16, &[("a100-slice", 1)], "hub/trainer:v3", &["python", "train.py"])),
        ("mig-full", spec("train-b", 8, 32, &[("a100-slice", 7)], "hub/trainer:v3", &["python", "train.py", "--amp"])),
        ("t4-infer", spec("infer-3", 2, 8, &[("t4-slice", 1)], "hub/serve:v1", &["python", "infer.py"])),
        ("multi-accel", spec("mixed-1", 16, 64, &[("a100-slice", 2), ("t4-slice", 1)], "hub/trainer:v3", &["python", "train.py", "--multi"])),
        ("big-cpu", spec("hpc-900", 128, 1024, &[], "hub/mpi:latest", &["mpirun", "-n", "128", "./solve"])),
        ("spaced-token", spec("shjob", 2, 4, &[], "busybox:stable", &["sh", "-c", "echo done"])),
        ("fpga-plain", spec("fpga-1", 4, 8, &[("u250", 1)], "hub/fpga:v2", &["./bitstream"])),
        ("wf-rule", spec("dimuon-pass1/simulate", 4, 16, &[("a100-slice", 2)], "", &["python", "simulate.py", "hits.raw", "sim.h5"])),
        ("a30-session", spec("sess-a30", 2, 8, &[("a30-slice", 1)], "hub/notebook:cuda12", &["start-notebook.sh", "--profile", "a30"])),
    ]
}

fn criterion_translation(_reg: &mut Registry) -> Result<String, String> {
    let flavors = [
        ("slurm", ProviderFlavor::SlurmLike),
        ("condor", ProviderFlavor::CondorLike),
        ("container", ProviderFlavor::ContainerRuntime),
    ];
    let specs = golden_specs();
    let mut checked = 0;
    for (name, spec) in &specs {
        for (suffix, flavor) in &flavors {
            let path = golden_path(&format!("{name}.{suffix}.txt"));
            let want = std::fs::read_to_string(&path)
                .map_err(|e| format!("golden fixture {path}: {e}"))?;
            let got = translate(spec, *flavor);
            if got != want {
                return Err(format!(
                    "{name}/{suffix}: output differs from the golden fixture\n--- got:\n{got}--- want:\n{want}"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} renderings byte-identical to goldens"))
}

// --- 4: no overcommit (over everything run above) -----------------------

fn criterion_no_overcommit(reg: &mut Registry) -> Result<String, String> {
    if reg.logs.is_empty() {
        return Err("no event logs were registered".to_string());
    }
    for (label, log) in &reg.logs {
        oracle::check_no_overcommit(label, log.records())?;
    }
    Ok(format!(
        "allocation within capacity at every step of {} logs",
        reg.logs.len()
    ))
}

// --- 9: accounting conservation (over everything run above) -------------

fn criterion_conservation(reg: &mut Registry) -> Result<String, String> {
    if reg.logs.is_empty() {
        return Err("no event logs were registered".to_string());
    }
    let mut compared = 0;
    for (label, log) in &reg.logs {
        let mut metrics = MetricsState::new();
        for rec in log.iter() {
            metrics
                .record(rec)
                .map_err(|e| format!("{label}: metrics fold: {e}"))?;
        }
        let expected = oracle::integral_oracle(log.records());

        // Compare on the full key grid so a spurious extra integral on
        // either side cannot hide.
        let mut projects = BTreeSet::new();
        let mut dims = BTreeSet::from(["cpu_cores".to_string(), "memory_gib".to_string()]);
        for rec in log.iter() {
            if let RecordBody::JobSubmitted { spec, .. } = &rec.body {
                projects.insert(spec.project.clone());
                for key in spec.request.accel.keys() {
                    dims.insert(key.clone());
                }
            }
        }
        for project in &projects {
            for dim in &dims {
                let want = expected
                    .get(&(project.clone(), dim.clone()))
                    .copied()
                    .unwrap_or(0);
                let got = metrics.integral(project, dim);
                if got != want {
                    return Err(format!(
                        "{label}: {project}/{dim}: metrics {got} != oracle {want}"
                    ));
                }
                compared += 1;
            }
        }
    }
    Ok(format!(
        "{compared} project-dimension integrals equal across {} logs",
        reg.logs.len()
    ))
}
