//! Accounting fold over the event log.
//!
//! `MetricsState` is a pure consumer of ordered log records: it never talks
//! to the scheduler, so the same log always folds to the same state. It
//! tracks monotone counters, per-node allocation gauges, and exact
//! per-project resource-second integrals (integer arithmetic throughout —
//! conservation checks compare equal or fail, never drift).
//!
//! The label vocabulary is fixed to {project, user, site, reason}. Bounded
//! label cardinality is what keeps the exposition diffable across runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::job::{JobState, WorkloadSpec};
use crate::resources::ResourceVector;
use crate::sim::log::{LogRecord, RecordBody};

pub const ALLOWED_LABELS: [&str; 4] = ["project", "user", "site", "reason"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MetricKey {
    pub name: String,
    pub labels: BTreeMap<String, String>,
}

impl MetricKey {
    pub fn new(
        name: impl Into<String>,
        labels: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, MetricsError> {
        let labels: BTreeMap<String, String> = labels.into_iter().collect();
        for key in labels.keys() {
            if !ALLOWED_LABELS.contains(&key.as_str()) {
                return Err(MetricsError::IllegalLabel { label: key.clone() });
            }
        }
        Ok(Self {
            name: name.into(),
            labels,
        })
    }

    fn render(&self, value: &str) -> String {
        if self.labels.is_empty() {
            return format!("{} {}", self.name, value);
        }
        let labels = self
            .labels
            .iter()
            .map(|(k, v)| format!("{k}=\"{v}\""))
            .collect::<Vec<_>>()
            .join(",");
        format!("{}{{{}}} {}", self.name, labels, value)
    }
}

fn key1(name: &str, label: &str, value: &str) -> MetricKey {
    MetricKey {
        name: name.to_string(),
        labels: BTreeMap::from([(label.to_string(), value.to_string())]),
    }
}

/// Metric-name-safe spelling of a resource dimension: `a100-slice` becomes
/// `a100_slice`.
pub fn sanitize_dim(dim: &str) -> String {
    dim.replace('-', "_")
}

/// Resource dimensions of a vector, in a fixed order: cpu_cores,
/// memory_gib, then accelerator keys.
fn dimensions(rv: &ResourceVector) -> Vec<(String, u64)> {
    let mut out = vec![
        ("cpu_cores".to_string(), rv.cpu_cores),
        ("memory_gib".to_string(), rv.memory_gib),
    ];
    for (k, v) in &rv.accel {
        out.push((k.clone(), *v));
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("event ({t},{seq}) arrived after ({prev_t},{prev_seq})")]
    OutOfOrderEvent {
        t: u64,
        seq: u64,
        prev_t: u64,
        prev_seq: u64,
    },
    #[error("label {label:?} is not in the fixed label set")]
    IllegalLabel { label: String },
    #[error("utilization window is empty")]
    EmptyWindow,
    #[error("event stream is inconsistent: {detail}")]
    InconsistentStream { detail: String },
}

/// One closed or still-open span of held allocation, used for windowed
/// utilization queries. `end == None` means the job still held the
/// allocation when the log ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocSegment {
    pub job: String,
    pub start: u64,
    pub end: Option<u64>,
    pub project: String,
    pub user: String,
    pub site: String,
    pub resources: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Copy)]
pub enum GroupBy {
    Project,
    User,
}

/// One utilization table row: exact rational plus its 6-digit decimal
/// rendering (numerator and denominator are resource-seconds).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtilizationRow {
    pub group: String,
    pub dimension: String,
    pub numerator: u128,
    pub denominator: u128,
    pub display: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsState {
    counters: BTreeMap<MetricKey, u64>,
    gauges: BTreeMap<MetricKey, u64>,
    /// (project, dimension) → resource-seconds, exact.
    integrals: BTreeMap<(String, String), u128>,
    segments: Vec<AllocSegment>,
    open: BTreeMap<String, usize>,
    specs: BTreeMap<String, WorkloadSpec>,
    capacity: ResourceVector,
    last: Option<(u64, u64)>,
    /// Clock of the latest folded record; open segments are charged up to
    /// here when integrals are read.
    end_t: u64,
}

impl MetricsState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counter(&self, name: &str, label: &str, value: &str) -> u64 {
        self.counters
            .get(&key1(name, label, value))
            .copied()
            .unwrap_or(0)
    }

    pub fn gauge(&self, name: &str, label: &str, value: &str) -> u64 {
        self.gauges
            .get(&key1(name, label, value))
            .copied()
            .unwrap_or(0)
    }

    /// Sum of a counter across all label values.
    pub fn counter_total(&self, name: &str) -> u64 {
        self.counters
            .iter()
            .filter(|(k, _)| k.name == name)
            .map(|(_, v)| *v)
            .sum()
    }

    /// Exact resource-seconds accrued by a project on one dimension, open
    /// segments charged through the end of the folded log.
    pub fn integral(&self, project: &str, dimension: &str) -> u128 {
        let closed = self
            .integrals
            .get(&(project.to_string(), dimension.to_string()))
            .copied()
            .unwrap_or(0);
        let open: u128 = self
            .open
            .values()
            .map(|&i| &self.segments[i])
            .filter(|s| s.project == project)
            .map(|s| {
                let held = dim_value(&s.resources, dimension) as u128;
                held * (self.end_t.saturating_sub(s.start)) as u128
            })
            .sum();
        closed + open
    }

    pub fn segments(&self) -> &[AllocSegment] {
        &self.segments
    }

    pub fn capacity(&self) -> &ResourceVector {
        &self.capacity
    }

    /// Fold one record. Records must arrive in strict (t, seq) order.
    pub fn record(&mut self, record: &LogRecord) -> Result<(), MetricsError> {
        if let Some((pt, ps)) = self.last {
            if (record.t, record.seq) <= (pt, ps) {
                return Err(MetricsError::OutOfOrderEvent {
                    t: record.t,
                    seq: record.seq,
                    prev_t: pt,
                    prev_seq: ps,
                });
            }
        }
        self.last = Some((record.t, record.seq));
        self.end_t = record.t;

        match &record.body {
            RecordBody::NodeUp {
                node, allocatable, ..
            } => {
                self.capacity = self.capacity.add(allocatable);
                for (dim, _) in dimensions(allocatable) {
                    let key = key1(
                        &format!("node_allocated_{}", sanitize_dim(&dim)),
                        "site",
                        node,
                    );
                    self.gauges.entry(key).or_insert(0);
                }
            }
            RecordBody::JobSubmitted { job, spec, .. } => {
                self.specs.insert(job.clone(), spec.clone());
                self.bump(key1("jobs_submitted_total", "project", &spec.project));
            }
            RecordBody::Transition {
                job,
                from,
                to,
                reason,
                node,
                ..
            } => {
                self.fold_transition(record.t, job, *from, *to, *reason, node.as_deref())?;
            }
            _ => {}
        }
        Ok(())
    }

    fn fold_transition(
        &mut self,
        t: u64,
        job: &str,
        from: JobState,
        to: JobState,
        reason: crate::job::TransitionReason,
        node: Option<&str>,
    ) -> Result<(), MetricsError> {
        let spec = self
            .specs
            .get(job)
            .ok_or_else(|| MetricsError::InconsistentStream {
                detail: format!("transition for never-submitted job {job:?}"),
            })?
            .clone();

        if to == JobState::Dispatched && from == JobState::Admitted {
            let site = node.ok_or_else(|| MetricsError::InconsistentStream {
                detail: format!("dispatch of {job:?} carries no node"),
            })?;
            self.bump(key1("jobs_dispatched_total", "site", site));
            if self.open.contains_key(job) {
                return Err(MetricsError::InconsistentStream {
                    detail: format!("job {job:?} dispatched while already allocated"),
                });
            }
            for (dim, amount) in dimensions(&spec.request) {
                let key = key1(
                    &format!("node_allocated_{}", sanitize_dim(&dim)),
                    "site",
                    site,
                );
                *self.gauges.entry(key).or_insert(0) += amount;
            }
            self.segments.push(AllocSegment {
                job: job.to_string(),
                start: t,
                end: None,
                project: spec.project.clone(),
                user: spec.user.clone(),
                site: site.to_string(),
                resources: spec.request.clone(),
            });
            self.open.insert(job.to_string(), self.segments.len() - 1);
        }

        let releases = matches!(
            (from, to),
            (JobState::Running, JobState::Succeeded)
                | (JobState::Running, JobState::Failed)
                | (JobState::Running, JobState::Evicted)
                | (JobState::Dispatched, JobState::Failed)
        );
        if releases {
            let idx = self
                .open
                .remove(job)
                .ok_or_else(|| MetricsError::InconsistentStream {
                    detail: format!("release of {job:?} without an open allocation"),
                })?;
            let seg = &mut self.segments[idx];
            seg.end = Some(t);
            let duration = (t - seg.start) as u128;
            let site = seg.site.clone();
            let resources = seg.resources.clone();
            let project = seg.project.clone();
            for (dim, amount) in dimensions(&resources) {
                *self
                    .integrals
                    .entry((project.clone(), dim.clone()))
                    .or_insert(0) += amount as u128 * duration;
                let key = key1(
                    &format!("node_allocated_{}", sanitize_dim(&dim)),
                    "site",
                    &site,
                );
                let gauge =
                    self.gauges
                        .get_mut(&key)
                        .ok_or_else(|| MetricsError::InconsistentStream {
                            detail: format!("release on unknown site {site:?}"),
                        })?;
                *gauge =
                    gauge
                        .checked_sub(amount)
                        .ok_or_else(|| MetricsError::InconsistentStream {
                            detail: format!("allocation gauge underflow on {site:?}/{dim}"),
                        })?;
            }
        }

        match to {
            JobState::Succeeded => {
                self.bump(key1("jobs_succeeded_total", "project", &spec.project));
            }
            JobState::Failed => {
                self.bump(key1("jobs_failed_total", "project", &spec.project));
            }
            JobState::Evicted => {
                self.bump(key1("evictions_total", "reason", &format!("{reason:?}")));
            }
            _ => {}
        }
        Ok(())
    }

    fn bump(&mut self, key: MetricKey) {
        *self.counters.entry(key).or_insert(0) += 1;
    }

    /// Render every counter, gauge, and integral, one metric per line,
    /// lines sorted lexicographically. Identical state yields identical
    /// bytes; an empty state yields empty output.
    pub fn export_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        for (key, value) in &self.counters {
            lines.push(key.render(&value.to_string()));
        }
        for (key, value) in &self.gauges {
            lines.push(key.render(&value.to_string()));
        }
        let mut totals: BTreeMap<(String, String), u128> = self.integrals.clone();
        for &idx in self.open.values() {
            let seg = &self.segments[idx];
            let duration = (self.end_t.saturating_sub(seg.start)) as u128;
            for (dim, amount) in dimensions(&seg.resources) {
                *totals
                    .entry((seg.project.clone(), dim.clone()))
                    .or_insert(0) += amount as u128 * duration;
            }
        }
        for ((project, dim), value) in &totals {
            let key = key1(
                &format!("{}_seconds_total", sanitize_dim(dim)),
                "project",
                project,
            );
            lines.push(key.render(&value.to_string()));
        }
        lines.sort();
        let mut out = String::new();
        for line in lines {
            let _ = writeln!(out, "{line}");
        }
        out
    }

    /// Per-group utilization over `[t0, t1)`, one row per (group, resource
    /// dimension) with any capacity: allocated resource-seconds divided by
    /// capacity × window length, computed as an exact rational and rendered
    /// with six decimal digits (half-up).
    pub fn utilization(
        &self,
        window: (u64, u64),
        groupby: GroupBy,
    ) -> Result<Vec<UtilizationRow>, MetricsError> {
        let (t0, t1) = window;
        if t0 >= t1 {
            return Err(MetricsError::EmptyWindow);
        }
        let window_len = (t1 - t0) as u128;
        let mut numerators: BTreeMap<(String, String), u128> = BTreeMap::new();
        let mut groups: std::collections::BTreeSet<String> = Default::default();
        for seg in &self.segments {
            let seg_end = seg.end.unwrap_or(u64::MAX);
            let lo = seg.start.max(t0);
            let hi = seg_end.min(t1);
            if lo >= hi {
                continue;
            }
            let overlap = (hi - lo) as u128;
            let group = match groupby {
                GroupBy::Project => seg.project.clone(),
                GroupBy::User => seg.user.clone(),
            };
            groups.insert(group.clone());
            for (dim, amount) in dimensions(&seg.resources) {
                *numerators.entry((group.clone(), dim)).or_insert(0) += amount as u128 * overlap;
            }
        }

        let mut rows = Vec::new();
        for group in groups {
            for (dim, cap) in dimensions(&self.capacity) {
                if cap == 0 {
                    continue;
                }
                let numerator = numerators
                    .get(&(group.clone(), dim.clone()))
                    .copied()
                    .unwrap_or(0);
                let denominator = cap as u128 * window_len;
                rows.push(UtilizationRow {
                    group: group.clone(),
                    dimension: dim,
                    display: render_fraction(numerator, denominator),
                    numerator,
                    denominator,
                });
            }
        }
        Ok(rows)
    }
}

fn dim_value(rv: &ResourceVector, dim: &str) -> u64 {
    match dim {
        "cpu_cores" => rv.cpu_cores,
        "memory_gib" => rv.memory_gib,
        other => rv.accel.get(other).copied().unwrap_or(0),
    }
}

/// Six-digit decimal rendering of num/den, rounded half-up.
fn render_fraction(num: u128, den: u128) -> String {
    let scaled = (num * 1_000_000 + den / 2) / den;
    format!("{}.{:06}", scaled / 1_000_000, scaled % 1_000_000)
}
