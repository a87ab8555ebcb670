//! Core library of the flotilla workload orchestrator: resource arithmetic,
//! job lifecycle, accelerator partitioning, the priority-evicting queue, DAG
//! workflow control, remote offloading, the discrete-event engine, and the
//! metrics/replay tooling built on its event log.

pub mod cluster;
pub mod dag;
pub mod job;
pub mod metrics;
pub mod offload;
pub mod partition;
pub mod queue;
pub mod replay;
pub mod report;
pub mod resources;
pub mod sim;

pub use cluster::{Node, NodeKind, Project};
pub use dag::{DagError, Rule, RuleStatus, WorkflowRun};
pub use metrics::{
    AllocSegment, GroupBy, MetricKey, MetricsError, MetricsState, UtilizationRow,
};
pub use sim::{
    run_scenario, sample_delay, EventLog, FailureMode, FailureSpec, Knobs, LogError, LogRecord,
    RecordBody, RunOutput, Scenario, ScenarioError, SimError, Window, WorkflowEntry,
};
pub use offload::protocol::{
    accel_model, CreateRequest, CreateResponse, DeleteRequest, DeleteResponse, LogsRequest,
    LogsResponse, StatusRequest, StatusResponse, WireResources,
};
pub use offload::translate::translate;
pub use offload::{
    map_remote_status, virtual_node, DelayDist, LocalAction, OffloadError, ProviderDescriptor,
    ProviderFlavor, RemoteJobRecord, RemoteStatus,
};
pub use job::{
    IllegalTransition, Job, JobState, TransitionReason, TransitionRecord, WorkloadKind,
    WorkloadSpec,
};
pub use partition::{AcceleratorDevice, Owner, PartitionError, PartitionInstance};
pub use queue::{Decision, EvictionPlan, QueueError, QueueState};
pub use replay::{audit, ReplayState, Violation};
pub use report::RunReport;
pub use resources::{ResourceUnderflow, ResourceVector};
