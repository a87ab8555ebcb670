//! Scenario definition and validation.
//!
//! A scenario is the complete, self-contained input of one run: the seed,
//! the local node inventory, the remote providers, the timed workloads and
//! workflows, controller knobs, and fault windows. Scenario files are JSON
//! with exactly these field names; unknown fields are rejected so a typo in
//! a knob cannot silently fall back to a default.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::Node;
use crate::dag::{parse_workflow, DagError};
use crate::job::WorkloadSpec;
use crate::offload::ProviderDescriptor;
use crate::partition::AcceleratorDevice;
use crate::resources::ResourceVector;

pub const DEFAULT_SYNC_PERIOD: u64 = 30;
pub const DEFAULT_RECONCILE_PERIOD: u64 = 10;
pub const DEFAULT_RULE_EST_DURATION: u64 = 60;
pub const DEFAULT_RULE_MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub sites: Sites,
    /// Optional explicit project quotas. When omitted, every project named
    /// by a workload or workflow is created with an unconstrained quota.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub projects: Vec<ProjectSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workloads: Vec<WorkloadSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workflows: Vec<WorkflowEntry>,
    #[serde(default)]
    pub knobs: Knobs,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sites {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub local: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub providers: Vec<ProviderDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub cpu_cores: u64,
    pub memory_gib: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub devices: Vec<DeviceSpec>,
}

/// A homogeneous group of accelerator devices on one node: `count` physical
/// devices of `model`, each exposing `slices` partition slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub model: String,
    pub count: u64,
    pub slices: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectSpec {
    pub name: String,
    pub quota: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowEntry {
    pub name: String,
    #[serde(default)]
    pub start_time: u64,
    pub project: String,
    pub user: String,
    /// Workflow document in the rule-file text format, embedded verbatim.
    pub doc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    /// Period of the provider STATUS sweep, sim-seconds.
    #[serde(default = "default_sync_period")]
    pub sync_period: u64,
    /// Delay between an eviction decision and the victim actually stopping.
    #[serde(default)]
    pub eviction_grace: u64,
    /// Period of the scheduling pass; reconcile also fires immediately on
    /// submissions and terminal events.
    #[serde(default = "default_reconcile_period")]
    pub reconcile_period: u64,
    /// Simulated runtime assigned to workflow rule jobs.
    #[serde(default = "default_rule_est_duration")]
    pub rule_est_duration: u64,
    #[serde(default = "default_rule_max_retries")]
    pub rule_max_retries: u32,
    /// Hard stop for the clock; `None` runs until the event heap drains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
}

fn default_sync_period() -> u64 {
    DEFAULT_SYNC_PERIOD
}

fn default_reconcile_period() -> u64 {
    DEFAULT_RECONCILE_PERIOD
}

fn default_rule_est_duration() -> u64 {
    DEFAULT_RULE_EST_DURATION
}

fn default_rule_max_retries() -> u32 {
    DEFAULT_RULE_MAX_RETRIES
}

impl Default for Knobs {
    fn default() -> Self {
        Self {
            sync_period: DEFAULT_SYNC_PERIOD,
            eviction_grace: 0,
            reconcile_period: DEFAULT_RECONCILE_PERIOD,
            rule_est_duration: DEFAULT_RULE_EST_DURATION,
            rule_max_retries: DEFAULT_RULE_MAX_RETRIES,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    /// Provider site the fault applies to.
    pub site: String,
    pub window: Window,
    pub mode: FailureMode,
}

/// Half-open interval [start, end) in sim-seconds. Zero-length windows are
/// legal and have no effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, start: u64, end: u64) -> bool {
        self.start < self.end && start < end && self.start < end && start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureMode {
    /// Provider answers every verb with an unreachable error in the window.
    Blackout,
    /// Remote jobs whose execution overlaps the window are reported LOST.
    Loss,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {detail}")]
    Validation { path: String, detail: String },
    #[error("unknown site {site:?}")]
    UnknownSite { site: String },
    #[error("scenario is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid(path: impl Into<String>, detail: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        path: path.into(),
        detail: detail.into(),
    }
}

impl Scenario {
    /// Parse and validate a scenario document.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scn: Scenario = serde_json::from_str(text)?;
        scn.validate()?;
        Ok(scn)
    }

    /// Accelerator request keys satisfiable somewhere in the federation.
    pub fn declared_accel_keys(&self) -> BTreeSet<String> {
        let mut keys = BTreeSet::new();
        for node in &self.sites.local {
            for dev in &node.devices {
                keys.insert(format!("{}-slice", dev.model));
            }
        }
        for provider in &self.sites.providers {
            keys.extend(provider.capacity.accel.keys().cloned());
        }
        keys
    }

    /// Every project name referenced by a workload or workflow entry.
    pub fn referenced_projects(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self
            .workloads
            .iter()
            .map(|w| w.project.clone())
            .collect();
        names.extend(self.workflows.iter().map(|w| w.project.clone()));
        names
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut site_names = BTreeSet::new();
        for (i, node) in self.sites.local.iter().enumerate() {
            let path = format!("sites.local[{i}]");
            if node.name.is_empty() {
                return Err(invalid(format!("{path}.name"), "node name is empty"));
            }
            if !site_names.insert(node.name.clone()) {
                return Err(invalid(
                    format!("{path}.name"),
                    format!("duplicate site name {:?}", node.name),
                ));
            }
            if node.cpu_cores == 0 {
                return Err(invalid(format!("{path}.cpu_cores"), "must be at least 1"));
            }
            if node.memory_gib == 0 {
                return Err(invalid(format!("{path}.memory_gib"), "must be at least 1"));
            }
            let mut models = BTreeSet::new();
            for (j, dev) in node.devices.iter().enumerate() {
                let dpath = format!("{path}.devices[{j}]");
                if dev.model.is_empty() {
                    return Err(invalid(format!("{dpath}.model"), "model name is empty"));
                }
                if !models.insert(dev.model.clone()) {
                    return Err(invalid(
                        format!("{dpath}.model"),
                        format!("model {:?} listed twice on {:?}", dev.model, node.name),
                    ));
                }
                if dev.count == 0 {
                    return Err(invalid(format!("{dpath}.count"), "must be at least 1"));
                }
                if dev.slices == 0 {
                    return Err(invalid(format!("{dpath}.slices"), "must be at least 1"));
                }
            }
        }
        for (i, provider) in self.sites.providers.iter().enumerate() {
            let path = format!("sites.providers[{i}]");
            if provider.site.is_empty() {
                return Err(invalid(format!("{path}.site"), "site name is empty"));
            }
            if !site_names.insert(provider.site.clone()) {
                return Err(invalid(
                    format!("{path}.site"),
                    format!("duplicate site name {:?}", provider.site),
                ));
            }
            if !(0.0..=1.0).contains(&provider.loss_rate) {
                return Err(invalid(
                    format!("{path}.loss_rate"),
                    "must lie in [0, 1]",
                ));
            }
            if provider.queue_delay_dist.jitter > provider.queue_delay_dist.mean {
                return Err(invalid(
                    format!("{path}.queue_delay_dist"),
                    "jitter must not exceed mean",
                ));
            }
            if provider.capacity.is_zero() {
                return Err(invalid(format!("{path}.capacity"), "must be non-zero"));
            }
        }

        if self.knobs.sync_period == 0 {
            return Err(invalid("knobs.sync_period", "must be at least 1"));
        }
        if self.knobs.reconcile_period == 0 {
            return Err(invalid("knobs.reconcile_period", "must be at least 1"));
        }
        if self.knobs.rule_est_duration == 0 {
            return Err(invalid("knobs.rule_est_duration", "must be at least 1"));
        }

        let mut project_names = BTreeSet::new();
        for (i, project) in self.projects.iter().enumerate() {
            let path = format!("projects[{i}]");
            if project.name.is_empty() {
                return Err(invalid(format!("{path}.name"), "project name is empty"));
            }
            if !project_names.insert(project.name.clone()) {
                return Err(invalid(
                    format!("{path}.name"),
                    format!("duplicate project {:?}", project.name),
                ));
            }
        }

        let declared_keys = self.declared_accel_keys();
        let check_request = |path: &str, request: &ResourceVector| {
            if request.is_zero() {
                return Err(invalid(
                    format!("{path}.request"),
                    "request must demand at least one resource",
                ));
            }
            for key in request.accel.keys() {
                if !declared_keys.contains(key) {
                    return Err(invalid(
                        format!("{path}.request"),
                        format!("accelerator {key:?} is not declared by any site"),
                    ));
                }
            }
            Ok(())
        };
        let check_project = |path: &str, name: &str| {
            if name.is_empty() {
                return Err(invalid(format!("{path}.project"), "project is empty"));
            }
            if !self.projects.is_empty() && !project_names.contains(name) {
                return Err(invalid(
                    format!("{path}.project"),
                    format!("project {name:?} is not declared"),
                ));
            }
            Ok(())
        };

        let mut workload_ids = BTreeSet::new();
        for (i, spec) in self.workloads.iter().enumerate() {
            let path = format!("workloads[{i}]");
            if spec.id.is_empty() {
                return Err(invalid(format!("{path}.id"), "workload id is empty"));
            }
            if !workload_ids.insert(spec.id.clone()) {
                return Err(invalid(
                    format!("{path}.id"),
                    format!("duplicate workload id {:?}", spec.id),
                ));
            }
            check_project(&path, &spec.project)?;
            if spec.user.is_empty() {
                return Err(invalid(format!("{path}.user"), "user is empty"));
            }
            check_request(&path, &spec.request)?;
            if spec.est_duration == 0 {
                return Err(invalid(
                    format!("{path}.est_duration"),
                    "must be at least 1",
                ));
            }
        }

        let mut workflow_names = BTreeSet::new();
        for (i, entry) in self.workflows.iter().enumerate() {
            let path = format!("workflows[{i}]");
            if entry.name.is_empty() {
                return Err(invalid(format!("{path}.name"), "workflow name is empty"));
            }
            if !workflow_names.insert(entry.name.clone()) {
                return Err(invalid(
                    format!("{path}.name"),
                    format!("duplicate workflow {:?}", entry.name),
                ));
            }
            check_project(&path, &entry.project)?;
            if entry.user.is_empty() {
                return Err(invalid(format!("{path}.user"), "user is empty"));
            }
            let rules = parse_workflow(&entry.doc).map_err(|e: DagError| {
                invalid(format!("{path}.doc"), e.to_string())
            })?;
            for rule in &rules {
                check_request(
                    &format!("{path}.doc rule {:?}", rule.name),
                    &rule.workload.request,
                )?;
            }
        }

        for (i, failure) in self.failures.iter().enumerate() {
            let path = format!("failures[{i}]");
            let is_provider = self
                .sites
                .providers
                .iter()
                .any(|p| p.site == failure.site);
            if !is_provider {
                return Err(ScenarioError::UnknownSite {
                    site: failure.site.clone(),
                });
            }
            if failure.window.start > failure.window.end {
                return Err(invalid(
                    format!("{path}.window"),
                    "start must not exceed end",
                ));
            }
        }
        Ok(())
    }

    /// Materialize the local node inventory, including the per-device
    /// partition ledgers. Device ids follow `<node>/<model>-<k>`; the node
    /// advertises `<model>-slice` capacity aggregated over its devices.
    pub fn build_local_nodes(&self) -> Vec<Node> {
        self.sites
            .local
            .iter()
            .map(|spec| {
                let mut allocatable = ResourceVector::new(spec.cpu_cores, spec.memory_gib);
                for d in &spec.devices {
                    allocatable =
                        allocatable.with_accel(format!("{}-slice", d.model), d.count * d.slices);
                }
                let mut node = Node::local(spec.name.clone(), allocatable);
                for d in &spec.devices {
                    for k in 0..d.count {
                        let dev = AcceleratorDevice::new(
                            format!("{}/{}-{}", spec.name, d.model, k),
                            d.model.clone(),
                            d.slices,
                        );
                        node.devices.insert(dev.id.clone(), dev);
                    }
                }
                node
            })
            .collect()
    }
}

/// Return a copy of the scenario with one more fault window, after checking
/// the target provider exists and the window is well-formed.
pub fn inject_failure(scn: &Scenario, spec: FailureSpec) -> Result<Scenario, ScenarioError> {
    if !scn.sites.providers.iter().any(|p| p.site == spec.site) {
        return Err(ScenarioError::UnknownSite { site: spec.site });
    }
    if spec.window.start > spec.window.end {
        return Err(invalid("failure.window", "start must not exceed end"));
    }
    let mut out = scn.clone();
    out.failures.push(spec);
    Ok(out)
}
