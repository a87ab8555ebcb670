//! Workflow dependency control: parse rule-based workflow documents, derive
//! the artifact dependency graph, and release rules only once every input
//! artifact exists.
//!
//! Artifacts are abstract names. An artifact "exists" when the rule that
//! produces it has finished successfully; there is no filesystem underneath.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::job::{WorkloadKind, WorkloadSpec};
use crate::resources::ResourceVector;

/// One step of a workflow: consumes input artifacts, emits output artifacts,
/// and carries the workload template submitted on its behalf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Template for the job this rule submits; id/project/user and timing
    /// are filled in at release time.
    pub workload: WorkloadSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleStatus {
    Waiting,
    Released,
    Done,
    Failed,
    Cancelled,
}

impl RuleStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RuleStatus::Done | RuleStatus::Failed | RuleStatus::Cancelled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("workflow syntax error at line {line}: {detail}")]
    SyntaxError { line: usize, detail: String },
    #[error("rule {rule} defined more than once")]
    DuplicateRule { rule: String },
    #[error("artifact {artifact} produced by both {first} and {second}")]
    DuplicateOutput {
        artifact: String,
        first: String,
        second: String,
    },
    #[error("rule {rule} lists its own output {artifact} as an input")]
    SelfDependency { rule: String, artifact: String },
    #[error("rule {rule} consumes {artifact}, which no rule produces")]
    UnknownInput { rule: String, artifact: String },
    #[error("dependency cycle: {}", cycle.join(" -> "))]
    CycleDetected { cycle: Vec<String> },
    #[error("no rule named {rule}")]
    UnknownRule { rule: String },
    #[error("rule {rule} is not ready for release")]
    NotReady { rule: String },
    #[error("rule {rule} was never released")]
    NotReleased { rule: String },
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

/// Shared structural checks for a rule list, whether parsed or built in code.
fn validate_rules(rules: &[Rule]) -> Result<(), DagError> {
    let mut names = BTreeSet::new();
    for rule in rules {
        if !names.insert(rule.name.as_str()) {
            return Err(DagError::DuplicateRule {
                rule: rule.name.clone(),
            });
        }
    }
    let mut producer: BTreeMap<&str, &str> = BTreeMap::new();
    for rule in rules {
        for out in &rule.outputs {
            if let Some(first) = producer.insert(out.as_str(), rule.name.as_str()) {
                return Err(DagError::DuplicateOutput {
                    artifact: out.clone(),
                    first: first.to_string(),
                    second: rule.name.clone(),
                });
            }
        }
    }
    for rule in rules {
        for input in &rule.inputs {
            if rule.outputs.contains(input) {
                return Err(DagError::SelfDependency {
                    rule: rule.name.clone(),
                    artifact: input.clone(),
                });
            }
            if !producer.contains_key(input.as_str()) {
                return Err(DagError::UnknownInput {
                    rule: rule.name.clone(),
                    artifact: input.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Edge (a, b) iff some output of rule a is an input of rule b. Rejects
/// cyclic rule sets, naming one witness cycle.
pub fn build_dependency_graph(rules: &[Rule]) -> Result<BTreeSet<(String, String)>, DagError> {
    let mut edges = BTreeSet::new();
    for a in rules {
        for b in rules {
            if a.name != b.name && a.outputs.iter().any(|o| b.inputs.contains(o)) {
                edges.insert((a.name.clone(), b.name.clone()));
            }
        }
    }
    // Self-dependencies form one-rule cycles and are caught here too when
    // the caller skipped validate_rules.
    for rule in rules {
        if rule.inputs.iter().any(|i| rule.outputs.contains(i)) {
            return Err(DagError::CycleDetected {
                cycle: vec![rule.name.clone()],
            });
        }
    }

    // Depth-first search with an explicit path for the cycle witness.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Closed,
    }
    let mut marks: BTreeMap<&str, Mark> = rules.iter().map(|r| (r.name.as_str(), Mark::New)).collect();
    let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in &edges {
        adjacency.entry(a.as_str()).or_default().push(b.as_str());
    }

    fn visit<'a>(
        node: &'a str,
        adjacency: &BTreeMap<&'a str, Vec<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(node, Mark::Open);
        path.push(node);
        for &next in adjacency.get(node).into_iter().flatten() {
            match marks[next] {
                Mark::Open => {
                    let from = path.iter().position(|&n| n == next).unwrap();
                    return Some(path[from..].iter().map(|s| s.to_string()).collect());
                }
                Mark::New => {
                    if let Some(cycle) = visit(next, adjacency, marks, path) {
                        return Some(cycle);
                    }
                }
                Mark::Closed => {}
            }
        }
        path.pop();
        marks.insert(node, Mark::Closed);
        None
    }

    let names: Vec<&str> = rules.iter().map(|r| r.name.as_str()).collect();
    for name in names {
        if marks[name] == Mark::New {
            let mut path = Vec::new();
            if let Some(cycle) = visit(name, &adjacency, &mut marks, &mut path) {
                return Err(DagError::CycleDetected { cycle });
            }
        }
    }
    Ok(edges)
}

/// Live state of one workflow execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowRun {
    pub rules: Vec<Rule>,
    pub produced: BTreeSet<String>,
    pub rule_status: BTreeMap<String, RuleStatus>,
    edges: BTreeSet<(String, String)>,
}

/// What changed when a released rule reached a terminal state.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleOutcome {
    pub newly_ready: Vec<String>,
    pub cancelled: Vec<String>,
}

impl WorkflowRun {
    pub fn new(rules: Vec<Rule>) -> Result<Self, DagError> {
        validate_rules(&rules)?;
        let edges = build_dependency_graph(&rules)?;
        let rule_status = rules
            .iter()
            .map(|r| (r.name.clone(), RuleStatus::Waiting))
            .collect();
        Ok(Self {
            rules,
            produced: BTreeSet::new(),
            rule_status,
            edges,
        })
    }

    pub fn dependency_edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn rule(&self, name: &str) -> Result<&Rule, DagError> {
        self.rules
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| DagError::UnknownRule {
                rule: name.to_string(),
            })
    }

    /// Waiting rules whose inputs all exist, in name order.
    pub fn ready_set(&self) -> Vec<String> {
        self.rule_status
            .iter()
            .filter(|(_, s)| **s == RuleStatus::Waiting)
            .filter(|(name, _)| {
                self.rule(name)
                    .expect("status keyed by rule name")
                    .inputs
                    .iter()
                    .all(|i| self.produced.contains(i))
            })
            .map(|(name, _)| name.clone())
            .collect()
    }

    /// Moves a ready rule to Released; the caller submits its workload.
    pub fn mark_released(&mut self, rule: &str) -> Result<(), DagError> {
        if !self.rule_status.contains_key(rule) {
            return Err(DagError::UnknownRule {
                rule: rule.to_string(),
            });
        }
        if !self.ready_set().iter().any(|r| r == rule) {
            return Err(DagError::NotReady {
                rule: rule.to_string(),
            });
        }
        self.rule_status
            .insert(rule.to_string(), RuleStatus::Released);
        Ok(())
    }

    /// Records the terminal outcome of a released rule. Success publishes
    /// its outputs and reports rules that just became ready; failure cancels
    /// every transitive descendant.
    pub fn on_rule_terminal(&mut self, rule: &str, success: bool) -> Result<RuleOutcome, DagError> {
        match self.rule_status.get(rule) {
            None => {
                return Err(DagError::UnknownRule {
                    rule: rule.to_string(),
                })
            }
            Some(RuleStatus::Released) => {}
            Some(_) => {
                return Err(DagError::NotReleased {
                    rule: rule.to_string(),
                })
            }
        }
        if success {
            let before: BTreeSet<String> = self.ready_set().into_iter().collect();
            self.rule_status.insert(rule.to_string(), RuleStatus::Done);
            let outputs = self.rule(rule)?.outputs.clone();
            self.produced.extend(outputs);
            let newly_ready = self
                .ready_set()
                .into_iter()
                .filter(|r| !before.contains(r))
                .collect();
            Ok(RuleOutcome {
                newly_ready,
                cancelled: Vec::new(),
            })
        } else {
            self.rule_status
                .insert(rule.to_string(), RuleStatus::Failed);
            let mut cancelled = Vec::new();
            for desc in self.descendants(rule) {
                if self.rule_status[&desc] == RuleStatus::Waiting {
                    self.rule_status.insert(desc.clone(), RuleStatus::Cancelled);
                    cancelled.push(desc);
                }
            }
            Ok(RuleOutcome {
                newly_ready: Vec::new(),
                cancelled,
            })
        }
    }

    /// All rules reachable from `rule` along dependency edges.
    pub fn descendants(&self, rule: &str) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![rule.to_string()];
        while let Some(cur) = stack.pop() {
            for (a, b) in &self.edges {
                if *a == cur && seen.insert(b.clone()) {
                    stack.push(b.clone());
                }
            }
        }
        seen.into_iter().collect()
    }

    pub fn is_complete(&self) -> bool {
        self.rule_status.values().all(|s| s.is_terminal())
    }
}

// ---- workflow document format ------------------------------------------
//
// rule <name>:
//   input: a, b          (optional)
//   output: c
//   resources: cpu=2 mem_gib=4 accel=a100:1   (optional)
//   run: python train.py
//
// Two-space indentation, names limited to [A-Za-z0-9_.-]+, body lines in
// the order shown. Accelerator demands land in the workload request under
// the "<model>-slice" key that node inventories advertise.

const DEFAULT_RULE_CPU: u64 = 1;
const DEFAULT_RULE_MEM_GIB: u64 = 1;

fn parse_name_list(raw: &str, line: usize, what: &str) -> Result<Vec<String>, DagError> {
    let mut names = Vec::new();
    for part in raw.split(',') {
        let name = part.trim();
        if !valid_name(name) {
            return Err(DagError::SyntaxError {
                line,
                detail: format!("bad {what} name {name:?}"),
            });
        }
        names.push(name.to_string());
    }
    Ok(names)
}

fn parse_resources(raw: &str, line: usize) -> Result<ResourceVector, DagError> {
    let err = |detail: String| DagError::SyntaxError { line, detail };
    let mut cpu = None;
    let mut mem = None;
    let mut accel: BTreeMap<String, u64> = BTreeMap::new();
    for token in raw.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {token:?}")))?;
        match key {
            "cpu" if cpu.is_none() => {
                cpu = Some(value.parse::<u64>().map_err(|_| {
                    err(format!("cpu wants an integer, got {value:?}"))
                })?);
            }
            "mem_gib" if mem.is_none() => {
                mem = Some(value.parse::<u64>().map_err(|_| {
                    err(format!("mem_gib wants an integer, got {value:?}"))
                })?);
            }
            "accel" => {
                let (model, slices) = value
                    .split_once(':')
                    .ok_or_else(|| err(format!("accel wants model:slices, got {value:?}")))?;
                if !valid_name(model) {
                    return Err(err(format!("bad accelerator model {model:?}")));
                }
                let n = slices
                    .parse::<u64>()
                    .map_err(|_| err(format!("slice count wants an integer, got {slices:?}")))?;
                accel.insert(format!("{model}-slice"), n);
            }
            _ => return Err(err(format!("unexpected resources token {token:?}"))),
        }
    }
    let mut rv = ResourceVector::new(
        cpu.ok_or_else(|| err("resources line missing cpu=".to_string()))?,
        mem.ok_or_else(|| err("resources line missing mem_gib=".to_string()))?,
    );
    for (model, slices) in accel {
        rv = rv.with_accel(model, slices);
    }
    Ok(rv)
}

struct DraftRule {
    name: String,
    header_line: usize,
    inputs: Vec<String>,
    outputs: Option<Vec<String>>,
    resources: Option<ResourceVector>,
    run: Option<Vec<String>>,
    last_field: u8,
}

impl DraftRule {
    fn finish(self) -> Result<Rule, DagError> {
        let outputs = self.outputs.ok_or_else(|| DagError::SyntaxError {
            line: self.header_line,
            detail: format!("rule {} has no output line", self.name),
        })?;
        let command = self.run.ok_or_else(|| DagError::SyntaxError {
            line: self.header_line,
            detail: format!("rule {} has no run line", self.name),
        })?;
        let request = self
            .resources
            .unwrap_or_else(|| ResourceVector::new(DEFAULT_RULE_CPU, DEFAULT_RULE_MEM_GIB));
        Ok(Rule {
            workload: WorkloadSpec {
                id: self.name.clone(),
                kind: WorkloadKind::Batch,
                project: String::new(),
                user: String::new(),
                request,
                image: String::new(),
                command,
                est_duration: 0,
                max_retries: 0,
                submit_time: 0,
            },
            name: self.name,
            inputs: self.inputs,
            outputs,
        })
    }
}

/// Parses a workflow document into its rule list. Errors carry the line
/// they were found on; cross-rule checks (duplicate outputs, self-loops)
/// run after the document is structurally sound.
pub fn parse_workflow(doc: &str) -> Result<Vec<Rule>, DagError> {
    let mut rules: Vec<Rule> = Vec::new();
    let mut draft: Option<DraftRule> = None;

    for (idx, raw) in doc.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(body) = raw.strip_prefix("  ") {
            let Some(rule) = draft.as_mut() else {
                return Err(DagError::SyntaxError {
                    line,
                    detail: "indented line outside any rule".to_string(),
                });
            };
            let (key, value) = body.split_once(':').ok_or_else(|| DagError::SyntaxError {
                line,
                detail: format!("expected '<field>: ...', got {body:?}"),
            })?;
            let value = value.trim();
            let rank = match key {
                "input" => 1,
                "output" => 2,
                "resources" => 3,
                "run" => 4,
                other => {
                    return Err(DagError::SyntaxError {
                        line,
                        detail: format!("unknown field {other:?}"),
                    })
                }
            };
            if rank == rule.last_field {
                return Err(DagError::SyntaxError {
                    line,
                    detail: format!("field {key:?} repeated"),
                });
            }
            if rank < rule.last_field {
                return Err(DagError::SyntaxError {
                    line,
                    detail: format!("field {key:?} out of order"),
                });
            }
            rule.last_field = rank;
            match key {
                "input" => rule.inputs = parse_name_list(value, line, "input")?,
                "output" => rule.outputs = Some(parse_name_list(value, line, "output")?),
                "resources" => rule.resources = Some(parse_resources(value, line)?),
                "run" => {
                    let tokens: Vec<String> =
                        value.split_whitespace().map(str::to_string).collect();
                    if tokens.is_empty() {
                        return Err(DagError::SyntaxError {
                            line,
                            detail: "empty run command".to_string(),
                        });
                    }
                    rule.run = Some(tokens);
                }
                _ => unreachable!(),
            }
        } else if raw.starts_with(' ') {
            return Err(DagError::SyntaxError {
                line,
                detail: "indentation must be exactly two spaces".to_string(),
            });
        } else {
            let name = raw
                .strip_prefix("rule ")
                .and_then(|rest| rest.strip_suffix(':'))
                .ok_or_else(|| DagError::SyntaxError {
                    line,
                    detail: format!("expected 'rule <name>:', got {raw:?}"),
                })?;
            if !valid_name(name) {
                return Err(DagError::SyntaxError {
                    line,
                    detail: format!("bad rule name {name:?}"),
                });
            }
            if let Some(prev) = draft.take() {
                rules.push(prev.finish()?);
            }
            draft = Some(DraftRule {
                name: name.to_string(),
                header_line: line,
                inputs: Vec::new(),
                outputs: None,
                resources: None,
                run: None,
                last_field: 0,
            });
        }
    }
    if let Some(prev) = draft.take() {
        rules.push(prev.finish()?);
    }
    validate_rules(&rules)?;
    Ok(rules)
}

/// Canonical text rendering; `parse_workflow(render_workflow(r)) == r`.
pub fn render_workflow(rules: &[Rule]) -> String {
    let mut out = String::new();
    for (i, rule) in rules.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("rule {}:\n", rule.name));
        if !rule.inputs.is_empty() {
            out.push_str(&format!("  input: {}\n", rule.inputs.join(", ")));
        }
        out.push_str(&format!("  output: {}\n", rule.outputs.join(", ")));
        let req = &rule.workload.request;
        let mut line = format!("  resources: cpu={} mem_gib={}", req.cpu_cores, req.memory_gib);
        for (key, slices) in &req.accel {
            let model = key.strip_suffix("-slice").unwrap_or(key);
            line.push_str(&format!(" accel={model}:{slices}"));
        }
        out.push_str(&line);
        out.push('\n');
        out.push_str(&format!("  run: {}\n", rule.workload.command.join(" ")));
    }
    out
}
