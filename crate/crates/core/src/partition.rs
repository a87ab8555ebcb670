//! Accelerator slicing: one physical device carved into independent
//! instances, each assignable to a different owner.
//!
//! Feasibility is purely additive — a set of profiles fits iff the sizes
//! sum to at most the device's slice count. A 7-slice device can therefore
//! host up to seven single-slice owners at once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Profile sizes a sliced device accepts.
pub const ALLOWED_PROFILES: [u64; 5] = [1, 2, 3, 4, 7];

/// Slice count of a partitionable device.
pub const FULL_DEVICE_SLICES: u64 = 7;

pub fn profile_is_legal(size: u64) -> bool {
    ALLOWED_PROFILES.contains(&size)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Owner {
    pub project: String,
    pub user: String,
}

/// One carved-out instance on a device. Unowned instances come from a
/// pre-planned layout; owned ones are serving a job or session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionInstance {
    pub id: String,
    pub profile_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<Owner>,
}

/// A physical accelerator and its live instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceleratorDevice {
    pub id: String,
    pub model: String,
    pub total_slices: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<PartitionInstance>,
    #[serde(default)]
    next_instance: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    /// The requested layout cannot exist on this device; it was left untouched.
    #[error("infeasible layout on device {device}: profiles {profiles:?} need {requested} slices, device has {total_slices}")]
    InfeasibleLayout {
        device: String,
        profiles: Vec<u64>,
        requested: u64,
        total_slices: u64,
    },
    #[error("profile size {size} not in the allowed set {ALLOWED_PROFILES:?}")]
    IllegalProfile { size: u64 },
    #[error("device {device} has {free} free slice(s), cannot fit profile of size {requested}")]
    NoCapacity {
        device: String,
        requested: u64,
        free: u64,
    },
    #[error("device {device} has owned instances; layout can only change when fully free")]
    DeviceBusy { device: String },
    #[error("no instance {instance} on device {device}")]
    UnknownInstance { device: String, instance: String },
    #[error("instance {instance} on device {device} has no owner to release")]
    NotAllocated { device: String, instance: String },
}

impl AcceleratorDevice {
    pub fn new(id: impl Into<String>, model: impl Into<String>, total_slices: u64) -> Self {
        Self {
            id: id.into(),
            model: model.into(),
            total_slices,
            instances: Vec::new(),
            next_instance: 0,
        }
    }

    /// Slices not held by any live instance.
    pub fn free_slices(&self) -> u64 {
        let used: u64 = self.instances.iter().map(|i| i.profile_size).sum();
        self.total_slices - used
    }

    /// Number of distinct owners currently served by this device.
    pub fn owner_count(&self) -> usize {
        let mut owners: Vec<&Owner> = self
            .instances
            .iter()
            .filter_map(|i| i.owner.as_ref())
            .collect();
        owners.sort();
        owners.dedup();
        owners.len()
    }

    fn mint_id(&mut self) -> String {
        let id = format!("{}/mig-{}", self.id, self.next_instance);
        self.next_instance += 1;
        id
    }

    /// Replaces the device's layout with one unowned instance per requested
    /// profile. Only possible while no instance is owned; an infeasible
    /// request leaves the device untouched.
    pub fn plan_partition(&mut self, profiles: &[u64]) -> Result<Vec<String>, PartitionError> {
        if self.instances.iter().any(|i| i.owner.is_some()) {
            return Err(PartitionError::DeviceBusy {
                device: self.id.clone(),
            });
        }
        for &size in profiles {
            if !profile_is_legal(size) {
                return Err(PartitionError::IllegalProfile { size });
            }
        }
        let requested: u64 = profiles.iter().sum();
        if requested > self.total_slices {
            return Err(PartitionError::InfeasibleLayout {
                device: self.id.clone(),
                profiles: profiles.to_vec(),
                requested,
                total_slices: self.total_slices,
            });
        }
        self.instances.clear();
        let mut ids = Vec::with_capacity(profiles.len());
        for &size in profiles {
            let id = self.mint_id();
            self.instances.push(PartitionInstance {
                id: id.clone(),
                profile_size: size,
                owner: None,
            });
            ids.push(id);
        }
        Ok(ids)
    }

    /// Carves a new owned instance out of the free pool.
    pub fn allocate_instance(
        &mut self,
        profile_size: u64,
        owner: Owner,
    ) -> Result<String, PartitionError> {
        if !profile_is_legal(profile_size) {
            return Err(PartitionError::IllegalProfile { size: profile_size });
        }
        let free = self.free_slices();
        if profile_size > free {
            return Err(PartitionError::NoCapacity {
                device: self.id.clone(),
                requested: profile_size,
                free,
            });
        }
        let id = self.mint_id();
        self.instances.push(PartitionInstance {
            id: id.clone(),
            profile_size,
            owner: Some(owner),
        });
        Ok(id)
    }

    /// Destroys an owned instance and returns its slices to the free pool.
    pub fn release_instance(&mut self, instance_id: &str) -> Result<(), PartitionError> {
        let idx = self
            .instances
            .iter()
            .position(|i| i.id == instance_id)
            .ok_or_else(|| PartitionError::UnknownInstance {
                device: self.id.clone(),
                instance: instance_id.to_string(),
            })?;
        if self.instances[idx].owner.is_none() {
            return Err(PartitionError::NotAllocated {
                device: self.id.clone(),
                instance: instance_id.to_string(),
            });
        }
        self.instances.remove(idx);
        Ok(())
    }
}

/// Greedy largest-first split of a slice demand into legal profile sizes.
/// Because feasibility is additive and 1 is a legal profile, the result
/// always sums exactly to `slices`.
pub fn decompose_slices(mut slices: u64) -> Vec<u64> {
    let mut out = Vec::new();
    for &p in ALLOWED_PROFILES.iter().rev() {
        while slices >= p {
            out.push(p);
            slices -= p;
        }
    }
    out
}
