use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use flotilla_core::sim::{EventLog, Knobs, NodeSpec, RecordBody, Scenario, Sites};
use flotilla_core::{JobState, ResourceVector, TransitionReason, WorkloadKind, WorkloadSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flotilla"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/fourSite.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary spawns");
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().expect("binary finishes")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// One saturated node and a long batch job occupying all of it.
fn saturated_scenario() -> Scenario {
    Scenario {
        seed: 17,
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
        workloads: vec![WorkloadSpec {
            id: "filler".to_string(),
            kind: WorkloadKind::Batch,
            project: "p0".to_string(),
            user: "u0".to_string(),
            request: ResourceVector::new(4, 8),
            image: String::new(),
            command: vec![],
            est_duration: 10_000,
            max_retries: 0,
            submit_time: 0,
        }],
        workflows: vec![],
        knobs: Knobs::default(),
        failures: vec![],
    }
}

fn write_scenario(dir: &Path, scenario: &Scenario) -> PathBuf {
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(scenario).unwrap()).unwrap();
    path
}

#[test]
fn four_site_run_exits_zero_and_lists_all_sites() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        fixture().to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let report = stdout(&out);
    for site in ["cnaf-ai", "leonardo-slurm", "recas-podman", "tier1-condor"] {
        assert!(report.contains(site), "report misses {site}:\n{report}");
    }
    for artifact in ["events.ndjson", "metrics.txt", "report.txt"] {
        assert!(dir.path().join(artifact).is_file(), "{artifact} missing");
    }
    let on_disk = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(on_disk, report, "printed report differs from report.txt");
}

#[test]
fn same_seed_twice_writes_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(&[
            "run",
            fixture().to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    for artifact in ["events.ndjson", "metrics.txt", "report.txt"] {
        let left = std::fs::read(a.path().join(artifact)).unwrap();
        let right = std::fs::read(b.path().join(artifact)).unwrap();
        assert_eq!(left, right, "{artifact} differs between identical runs");
    }
}

#[test]
fn seed_override_is_reflected_in_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &saturated_scenario());
    let out = run(&[
        "run",
        scenario.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--seed-override",
        "999",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(
        stdout(&out).contains("seed: 999"),
        "report does not show the overridden seed:\n{}",
        stdout(&out)
    );
}

#[test]
fn metrics_out_redirects_the_export() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("custom-metrics.prom");
    let out = run(&[
        "run",
        fixture().to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--metrics-out",
        metrics.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(
        text.contains("node_allocated_cpu_cores"),
        "export looks wrong:\n{text}"
    );
    assert!(
        !dir.path().join("metrics.txt").exists(),
        "default metrics path written despite --metrics-out"
    );
}

#[test]
fn validate_reports_the_failing_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = saturated_scenario();
    scenario.sites.local[0].cpu_cores = 0;
    let path = write_scenario(dir.path(), &scenario);
    let out = run(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(
        err.contains("sites.local[0].cpu_cores"),
        "no field path in: {err}"
    );
}

#[test]
fn run_on_malformed_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    std::fs::write(&path, "{\"seed\": 1").unwrap();
    let out = run(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("validation error"));
}

#[test]
fn validate_accepts_the_fixture() {
    let out = run(&["validate", fixture().to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("scenario OK"));
}

#[test]
fn report_is_reproducible_and_matches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        fixture().to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let events = dir.path().join("events.ndjson");
    let first = run(&["report", events.to_str().unwrap()]);
    let second = run(&["report", events.to_str().unwrap()]);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout, "report bytes changed between runs");
    assert_eq!(
        stdout(&first),
        std::fs::read_to_string(dir.path().join("report.txt")).unwrap(),
        "report-from-log differs from the run's own report"
    );
}

#[test]
fn report_on_empty_log_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.ndjson");
    std::fs::write(&path, "").unwrap();
    let out = run(&["report", path.to_str().unwrap()]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    for line in ["submitted: 0", "succeeded: 0", "failed: 0", "evictions: 0"] {
        assert!(text.contains(line), "missing {line:?} in:\n{text}");
    }
}

#[test]
fn report_on_truncated_log_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ndjson");
    std::fs::write(&path, "{\"t\":0,\"seq\":0,\"body\"").unwrap();
    let out = run(&["report", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("corrupt log"), "stderr: {err}");
    assert!(err.contains("line 1"), "no line number in: {err}");
}

#[test]
fn submit_and_status_need_a_live_session() {
    for args in [
        vec!["submit", "--cpu", "1", "--mem", "1"],
        vec!["status"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(1), "args {args:?}");
        assert!(stderr(&out).contains("no live session"), "args {args:?}");
    }
}

#[test]
fn console_submits_get_unique_ids_and_bad_submits_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &saturated_scenario());
    let mut input = String::new();
    for _ in 0..10 {
        input.push_str("submit --kind batch --cpu 1 --mem 1\n");
    }
    input.push_str("submit --kind batch\n"); // empty request
    input.push_str("quit\n");
    let out = run_with_stdin(
        &[
            "run",
            scenario.to_str().unwrap(),
            "--interactive",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        &input,
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let mut ids: Vec<&str> = text
        .lines()
        .filter_map(|l| l.strip_prefix("> ").unwrap_or(l).trim().strip_prefix("adhoc-"))
        .collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 10, "expected 10 unique ids in:\n{text}");
    assert!(
        text.contains("requests no resources"),
        "empty request not reported:\n{text}"
    );
}

#[test]
fn console_rejects_unknown_project_when_projects_are_declared() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = fixture();
    let input = "submit --cpu 1 --mem 1 --project nonesuch\nquit\n";
    let out = run_with_stdin(
        &[
            "run",
            fixture.to_str().unwrap(),
            "--interactive",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        input,
    );
    // Quitting immediately leaves almost everything un-run; the scenario's
    // jobs never drain, but the session itself must exit cleanly.
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(
        stdout(&out).contains("names unknown project nonesuch"),
        "stdout:\n{}",
        stdout(&out)
    );
}

#[test]
fn console_interactive_submit_evicts_saturated_batch() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), &saturated_scenario());
    let input = "step 5\nstatus\nsubmit --kind interactive --cpu 4 --mem 8 --id urgent\nstep\nstatus\nquit\n";
    let out = run_with_stdin(
        &[
            "run",
            scenario.to_str().unwrap(),
            "--interactive",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        input,
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let events = std::fs::read_to_string(dir.path().join("events.ndjson")).unwrap();
    let log = EventLog::parse_ndjson(&events).unwrap();
    let evicted = log.iter().any(|r| {
        matches!(
            &r.body,
            RecordBody::Transition {
                job,
                to: JobState::Evicted,
                reason: TransitionReason::EvictForInteractive,
                ..
            } if job == "filler"
        )
    });
    assert!(evicted, "batch job was not evicted:\n{events}");
    let urgent_running = log.iter().any(|r| {
        matches!(
            &r.body,
            RecordBody::Transition { job, to: JobState::Running, .. } if job == "urgent"
        )
    });
    assert!(urgent_running, "interactive job never ran:\n{events}");
}
