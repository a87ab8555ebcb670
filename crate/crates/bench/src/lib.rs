//! Deterministic workload builders shared by the benchmarks. Everything is
//! seeded so criterion compares the same work across runs.

use std::collections::BTreeMap;

use flotilla_core::sim::{Knobs, NodeSpec, Scenario, Sites};
use flotilla_core::{
    DelayDist, Node, Project, ProviderDescriptor, ProviderFlavor, QueueState, ResourceVector,
    WorkloadKind, WorkloadSpec,
};

pub fn spec(id: &str, cpu: u64, mem: u64, interactive: bool) -> WorkloadSpec {
    WorkloadSpec {
        id: id.to_string(),
        kind: if interactive {
            WorkloadKind::Interactive
        } else {
            WorkloadKind::Batch
        },
        project: "bench".to_string(),
        user: "bench".to_string(),
        request: ResourceVector::new(cpu, mem),
        image: "hub/app:latest".to_string(),
        command: vec!["python".to_string(), "main.py".to_string()],
        est_duration: 100,
        max_retries: 1,
        submit_time: 0,
    }
}

/// A queue with `running` jobs placed across `nodes` nodes and `pending`
/// jobs waiting, sized so the pending tail does not trivially fit.
pub fn loaded_queue(nodes: usize, running: usize, pending: usize) -> (QueueState, Vec<Node>) {
    let projects = BTreeMap::from([(
        "bench".to_string(),
        Project::unconstrained("bench".to_string(), std::iter::empty::<String>()),
    )]);
    let mut state = QueueState::new(projects);
    let mut cluster: Vec<Node> = (0..nodes)
        .map(|i| Node::local(format!("n{i}"), ResourceVector::new(32, 64)))
        .collect();
    for i in 0..running {
        let id = state
            .submit(spec(&format!("run-{i:03}"), 4, 8, false))
            .unwrap();
        state.admit_job(&id, 0).unwrap();
        let node = format!("n{}", i % nodes);
        state.dispatch_job(&mut cluster, &id, &node, 0).unwrap();
        state.start_job(&id, 0).unwrap();
    }
    for i in 0..pending {
        state
            .submit(spec(&format!("wait-{i:03}"), 4, 8, i % 4 == 0))
            .unwrap();
    }
    (state, cluster)
}

/// A federation scenario: one local site plus two providers, a few hundred
/// batch jobs with an interactive burst in the middle.
pub fn federation_scenario(jobs: usize) -> Scenario {
    let mut workloads = Vec::with_capacity(jobs);
    for i in 0..jobs {
        let mut w = spec(&format!("j{i:04}"), 2 + (i % 3) as u64, 4, i % 11 == 0);
        w.submit_time = (i / 4) as u64;
        w.est_duration = 80 + (i % 40) as u64;
        workloads.push(w);
    }
    Scenario {
        seed: 99,
        sites: Sites {
            local: vec![NodeSpec {
                name: "local-0".to_string(),
                cpu_cores: 48,
                memory_gib: 96,
                devices: vec![],
            }],
            providers: vec![
                ProviderDescriptor {
                    site: "slurm-a".to_string(),
                    flavor: ProviderFlavor::SlurmLike,
                    capacity: ResourceVector::new(64, 128),
                    queue_delay_dist: DelayDist { mean: 20, jitter: 10 },
                    loss_rate: 0.0,
                    endpoint: "https://slurm-a.example/api".to_string(),
                },
                ProviderDescriptor {
                    site: "pod-b".to_string(),
                    flavor: ProviderFlavor::ContainerRuntime,
                    capacity: ResourceVector::new(32, 64),
                    queue_delay_dist: DelayDist { mean: 8, jitter: 4 },
                    loss_rate: 0.02,
                    endpoint: "https://pod-b.example/api".to_string(),
                },
            ],
        },
        projects: vec![],
        workloads,
        workflows: vec![],
        knobs: Knobs::default(),
        failures: vec![],
    }
}
