//! Seeded random inputs for the acceptance checks. Everything here is a pure
//! function of the seed, so a failing case can be replayed by number.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flotilla_core::sim::{Knobs, NodeSpec, Scenario, Sites, WorkflowEntry};
use flotilla_core::{
    DelayDist, ProviderDescriptor, ProviderFlavor, ResourceVector, WorkloadKind, WorkloadSpec,
};

fn workload(rng: &mut ChaCha8Rng, i: usize, max_cpu: u64) -> WorkloadSpec {
    let interactive = rng.gen_ratio(1, 3);
    WorkloadSpec {
        id: format!("j{i:02}"),
        kind: if interactive {
            WorkloadKind::Interactive
        } else {
            WorkloadKind::Batch
        },
        project: format!("p{}", rng.gen_range(0..3u32)),
        user: format!("u{}", rng.gen_range(0..4u32)),
        request: ResourceVector::new(rng.gen_range(1..=max_cpu), rng.gen_range(1..=8)),
        image: "img".to_string(),
        command: vec!["step".to_string()],
        est_duration: rng.gen_range(5..=60),
        max_retries: rng.gen_range(0..=3),
        submit_time: rng.gen_range(0..=40),
    }
}

/// Local-only scenario: 1-3 nodes, 5-16 mixed workloads, implicit
/// unconstrained projects, zero eviction grace.
pub fn small_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local: Vec<NodeSpec> = (0..rng.gen_range(1..=3u32))
        .map(|i| NodeSpec {
            name: format!("n{i}"),
            cpu_cores: rng.gen_range(4..=16),
            memory_gib: rng.gen_range(8..=32),
            devices: vec![],
        })
        .collect();
    let workloads = (0..rng.gen_range(5..=16usize))
        .map(|i| workload(&mut rng, i, 8))
        .collect();
    Scenario {
        seed: seed ^ 0x9e37_79b9,
        sites: Sites {
            local,
            providers: vec![],
        },
        projects: vec![],
        workloads,
        workflows: vec![],
        knobs: Knobs::default(),
        failures: vec![],
    }
}

/// Scenario with remote providers: random flavors, queue delays, and loss
/// rates, plus an occasional blackout window.
pub fn federated_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scn = small_scenario(seed.wrapping_mul(31).wrapping_add(7));
    scn.seed = seed;
    let flavors = [
        ProviderFlavor::SlurmLike,
        ProviderFlavor::CondorLike,
        ProviderFlavor::ContainerRuntime,
    ];
    for i in 0..rng.gen_range(1..=3u32) {
        let mean = rng.gen_range(5..=60u64);
        scn.sites.providers.push(ProviderDescriptor {
            site: format!("prov{i}"),
            flavor: flavors[rng.gen_range(0..flavors.len())],
            capacity: ResourceVector::new(rng.gen_range(8..=32), rng.gen_range(8..=32)),
            queue_delay_dist: DelayDist {
                mean,
                jitter: rng.gen_range(0..=mean),
            },
            loss_rate: if rng.gen_bool(0.5) {
                0.0
            } else {
                rng.gen_range(0.0..0.3)
            },
            endpoint: format!("https://prov{i}.example"),
        });
    }
    if rng.gen_bool(0.4) {
        let victim = rng.gen_range(0..scn.sites.providers.len());
        let start = rng.gen_range(0..=120u64);
        scn.failures.push(flotilla_core::FailureSpec {
            site: scn.sites.providers[victim].site.clone(),
            window: flotilla_core::Window {
                start,
                end: start + rng.gen_range(0..=80u64),
            },
            mode: if rng.gen_bool(0.5) {
                flotilla_core::FailureMode::Blackout
            } else {
                flotilla_core::FailureMode::Loss
            },
        });
    }
    scn
}

/// A random acyclic workflow with known ground truth: `parents[i]` indexes
/// rules released before rule `i` may run, and `doomed` rules carry a request
/// no node can ever satisfy, so releasing one fails it.
pub struct RandomDag {
    pub names: Vec<String>,
    pub parents: Vec<Vec<usize>>,
    pub doomed: BTreeSet<usize>,
    pub doc: String,
}

pub fn random_dag(seed: u64, max_rules: usize) -> RandomDag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(2..=max_rules);
    let names: Vec<String> = (0..count).map(|i| format!("r{i:02}")).collect();
    let mut parents: Vec<Vec<usize>> = Vec::with_capacity(count);
    let mut doomed = BTreeSet::new();
    for i in 0..count {
        let max_parents = i.min(3);
        let want = if max_parents == 0 {
            0
        } else {
            rng.gen_range(0..=max_parents)
        };
        let mut ps = BTreeSet::new();
        while ps.len() < want {
            ps.insert(rng.gen_range(0..i));
        }
        parents.push(ps.into_iter().collect());
        if rng.gen_ratio(1, 8) {
            doomed.insert(i);
        }
    }
    let mut doc = String::new();
    for i in 0..count {
        let _ = writeln!(doc, "rule {}:", names[i]);
        if !parents[i].is_empty() {
            let inputs: Vec<String> = parents[i].iter().map(|&p| format!("f{p}")).collect();
            let _ = writeln!(doc, "  input: {}", inputs.join(", "));
        }
        let _ = writeln!(doc, "  output: f{i}");
        if doomed.contains(&i) {
            let _ = writeln!(doc, "  resources: cpu=9999 mem_gib=1");
        } else {
            let _ = writeln!(doc, "  resources: cpu={} mem_gib=1", rng.gen_range(1..=2u32));
        }
        let _ = writeln!(doc, "  run: python step.py --rule {}", names[i]);
        doc.push('\n');
    }
    RandomDag {
        names,
        parents,
        doomed,
        doc,
    }
}

/// Wraps a random workflow in a one-node scenario for an engine run.
pub fn dag_scenario(seed: u64, dag: &RandomDag) -> Scenario {
    Scenario {
        seed,
        sites: Sites {
            local: vec![NodeSpec {
                name: "n0".to_string(),
                cpu_cores: 4,
                memory_gib: 8,
                devices: vec![],
            }],
            providers: vec![],
        },
        projects: vec![],
        workloads: vec![],
        workflows: vec![WorkflowEntry {
            name: "wf".to_string(),
            start_time: 0,
            project: "p0".to_string(),
            user: "u0".to_string(),
            doc: dag.doc.clone(),
        }],
        knobs: Knobs {
            rule_est_duration: 10,
            ..Knobs::default()
        },
        failures: vec![],
    }
}
