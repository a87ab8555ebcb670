//! Multi-dimensional resource quantities and their arithmetic.
//!
//! All quantities are integers: CPU cores, GiB of memory, and accelerator
//! slices keyed by model name (e.g. `A100-slice`). Componentwise comparison
//! with missing accelerator keys treated as zero is the single fit predicate
//! used by every scheduling decision in the engine.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A non-negative quantity of cluster resources.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceVector {
    #[serde(default)]
    pub cpu_cores: u64,
    #[serde(default)]
    pub memory_gib: u64,
    /// Accelerator slices by model key, e.g. `{"A100-slice": 2}`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub accel: BTreeMap<String, u64>,
}

/// Subtraction drove a component below zero. Allocation bookkeeping treats
/// this as a contract violation, never as a recoverable condition.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("resource underflow in {dimension}: {have} < {need}")]
pub struct ResourceUnderflow {
    pub dimension: String,
    pub have: u64,
    pub need: u64,
}

impl ResourceVector {
    pub fn new(cpu_cores: u64, memory_gib: u64) -> Self {
        Self {
            cpu_cores,
            memory_gib,
            accel: BTreeMap::new(),
        }
    }

    /// Builder-style accelerator entry; zero counts are dropped so that the
    /// canonical form never carries explicit zeros.
    pub fn with_accel(mut self, model: impl Into<String>, slices: u64) -> Self {
        if slices > 0 {
            self.accel.insert(model.into(), slices);
        }
        self
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.cpu_cores == 0 && self.memory_gib == 0 && self.accel.values().all(|&v| v == 0)
    }

    /// Componentwise sum; accelerator maps are merged by key addition.
    pub fn add(&self, other: &Self) -> Self {
        let mut accel = self.accel.clone();
        for (model, slices) in &other.accel {
            *accel.entry(model.clone()).or_insert(0) += slices;
        }
        accel.retain(|_, v| *v > 0);
        Self {
            cpu_cores: self.cpu_cores + other.cpu_cores,
            memory_gib: self.memory_gib + other.memory_gib,
            accel,
        }
    }

    /// Componentwise difference. Underflow in any component is an error and
    /// leaves no partial result.
    pub fn checked_sub(&self, other: &Self) -> Result<Self, ResourceUnderflow> {
        let sub = |dim: &str, have: u64, need: u64| {
            have.checked_sub(need).ok_or_else(|| ResourceUnderflow {
                dimension: dim.to_string(),
                have,
                need,
            })
        };
        let cpu_cores = sub("cpu_cores", self.cpu_cores, other.cpu_cores)?;
        let memory_gib = sub("memory_gib", self.memory_gib, other.memory_gib)?;
        let mut accel = self.accel.clone();
        for (model, slices) in &other.accel {
            let have = accel.get(model).copied().unwrap_or(0);
            let left = sub(model, have, *slices)?;
            if left == 0 {
                accel.remove(model);
            } else {
                accel.insert(model.clone(), left);
            }
        }
        Ok(Self {
            cpu_cores,
            memory_gib,
            accel,
        })
    }

    /// True iff `self` fits within `free` componentwise. Accelerator models
    /// missing from `free` count as zero capacity.
    pub fn fits_within(&self, free: &Self) -> bool {
        self.cpu_cores <= free.cpu_cores
            && self.memory_gib <= free.memory_gib
            && self
                .accel
                .iter()
                .all(|(model, slices)| *slices <= free.accel.get(model).copied().unwrap_or(0))
    }

    /// Total accelerator slices across all models.
    pub fn accel_total(&self) -> u64 {
        self.accel.values().sum()
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cpu={} mem={}GiB", self.cpu_cores, self.memory_gib)?;
        for (model, slices) in &self.accel {
            write!(f, " {model}={slices}")?;
        }
        Ok(())
    }
}
