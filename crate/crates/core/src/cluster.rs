//! Nodes, projects, and capacity bookkeeping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::partition::AcceleratorDevice;
use crate::resources::ResourceVector;

/// Kind of node in the federation. Local nodes hold real hardware; virtual
/// nodes advertise fabricated capacity and proxy jobs to a remote provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Local,
    Virtual,
}

/// A schedulable node. `allocatable` is fixed at construction; `allocated`
/// moves with dispatch and release, and its accelerator entries are derived
/// from the per-device slice ledger for local nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub allocatable: ResourceVector,
    pub allocated: ResourceVector,
    /// Physical accelerators on a local node, keyed by device id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub devices: BTreeMap<String, AcceleratorDevice>,
    /// Provider this node proxies to; set only for virtual nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<String>,
}

impl Node {
    pub fn local(name: impl Into<String>, allocatable: ResourceVector) -> Self {
        Self {
            name: name.into(),
            kind: NodeKind::Local,
            allocatable,
            allocated: ResourceVector::zero(),
            devices: BTreeMap::new(),
            provider: None,
        }
    }

    pub fn virtual_proxy(
        name: impl Into<String>,
        allocatable: ResourceVector,
        provider: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: NodeKind::Virtual,
            allocatable,
            allocated: ResourceVector::zero(),
            devices: BTreeMap::new(),
            provider: Some(provider.into()),
        }
    }

    /// Capacity not currently held by dispatched or running jobs.
    pub fn free(&self) -> ResourceVector {
        // allocated <= allocatable is a controller invariant; a violation
        // here is a bug, not an input error.
        self.allocatable
            .checked_sub(&self.allocated)
            .expect("allocated exceeds allocatable")
    }

    /// Whether `request` fits in the node's current free capacity.
    pub fn fits(&self, request: &ResourceVector) -> bool {
        request.fits_within(&self.free())
    }
}

/// A tenant with an aggregate resource ceiling enforced at admission time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub name: String,
    pub quota: ResourceVector,
    /// Sum of requests of this project's jobs in Admitted..Running states.
    pub admitted_usage: ResourceVector,
}

impl Project {
    pub fn new(name: impl Into<String>, quota: ResourceVector) -> Self {
        Self {
            name: name.into(),
            quota,
            admitted_usage: ResourceVector::zero(),
        }
    }

    /// A project whose quota never blocks admission: every dimension,
    /// including each accelerator model in `models`, is effectively infinite.
    pub fn unconstrained(
        name: impl Into<String>,
        models: impl IntoIterator<Item = String>,
    ) -> Self {
        let mut quota = ResourceVector::new(u64::MAX, u64::MAX);
        for model in models {
            quota = quota.with_accel(model, u64::MAX);
        }
        Self::new(name, quota)
    }

    /// Whether admitting `request` keeps the project at or under quota.
    pub fn can_admit(&self, request: &ResourceVector) -> bool {
        self.admitted_usage.add(request).fits_within(&self.quota)
    }
}
