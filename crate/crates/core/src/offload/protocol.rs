//! Wire payloads of the provider protocol. Four verbs — CREATE, STATUS,
//! DELETE, LOGS — exchanged as JSON bodies. In simulation the transport is
//! an in-process call with exactly these payloads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RemoteStatus;
use crate::resources::ResourceVector;

/// Resource block carried in CREATE requests. Accelerator demands are keyed
/// by bare model name ("a100"), not the "-slice" resource key nodes use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResources {
    pub cpu: u64,
    pub mem_gib: u64,
    pub accel: BTreeMap<String, u64>,
}

/// Strips the node-inventory suffix off an accelerator resource key.
pub fn accel_model(key: &str) -> &str {
    key.strip_suffix("-slice").unwrap_or(key)
}

impl WireResources {
    pub fn from_request(request: &ResourceVector) -> Self {
        Self {
            cpu: request.cpu_cores,
            mem_gib: request.memory_gib,
            accel: request
                .accel
                .iter()
                .map(|(k, v)| (accel_model(k).to_string(), *v))
                .collect(),
        }
    }

    /// Back to vector form for capacity arithmetic, still in model space.
    pub fn to_vector(&self) -> ResourceVector {
        let mut rv = ResourceVector::new(self.cpu, self.mem_gib);
        for (model, n) in &self.accel {
            rv = rv.with_accel(model.clone(), *n);
        }
        rv
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub id: String,
    pub doc: String,
    pub resources: WireResources,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CreateResponse {
    Accepted { remote_id: String },
    Rejected { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusRequest {
    pub remote_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusResponse {
    pub status: RemoteStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeleteRequest {
    pub remote_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeleteResponse {
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogsRequest {
    pub remote_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogsResponse {
    pub log: String,
}
