// SPDX-License-Identifier: Apache-2.0
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glitchsim"))
}

fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn glitchsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small grid config in `dir`; `targets` is spliced in verbatim.
fn small_config(dir: &Path, targets: &str) -> PathBuf {
    let path = dir.join("campaign.toml");
    let text = format!(
        r#"
policy = "zero"
seed = 0
output_dir = "out"
parallelism = 2

[grid]
offsets_ns = [0.833, 2.0]
widths_ns = [2.0, 3.3, 4.0, 9.0]
stages = ["IF", "EX"]
targets = {targets}
"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn assembling_the_demo_matches_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo.bin");
    let src = core_dir().join("workloads/demo.s");
    let o = run(&["assemble", src.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fixture = core_dir().join("fixtures");
    assert_eq!(
        std::fs::read(&out).unwrap(),
        std::fs::read(fixture.join("demo.bin")).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(dir.path().join("demo.sym")).unwrap(),
        std::fs::read_to_string(fixture.join("demo.sym")).unwrap()
    );
}

#[test]
fn assembler_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.s");
    std::fs::write(&bad, "addi x1, x0, 1\nfrob x1\n").unwrap();
    let o = run(&["assemble", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let empty = dir.path().join("empty.s");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["assemble", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(dir.path().join("empty.bin")).unwrap().len(), 0);
}

#[test]
fn golden_run_reports_the_loaded_word() {
    let o = run(&["run"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("x11 = 0x42026ada"), "{}", stdout(&o));
    assert!(stdout(&o).contains("halt: clean_halt"));

    let fixture = core_dir().join("fixtures/demo.bin");
    let o = run(&["run", "--workload", fixture.to_str().unwrap(), "--json"]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["result"]["final_state"]["regs"][11], 0x4202_6ada);
}

#[test]
fn glitch_reports_case_two() {
    let o = run(&[
        "glitch", "--offset", "0.833", "--width", "3.3", "--target", "lw", "--stage", "IF",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("outcome: data_zeroization"), "{text}");
    assert!(text.contains("case: #2"));
    assert!(text.contains("illegal flag: raised"));
}

#[test]
fn glitch_json_and_per_cycle_dump() {
    let o = run(&[
        "glitch", "--offset", "0.833", "--width", "4.0", "--target", "lw@0x386", "--json",
    ]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["outcome"]["case_id"], 3);
    assert_eq!(doc["outcome"]["illegal_raised"], false);

    let o = run(&[
        "glitch", "--offset", "0.833", "--width", "3.3", "--target", "lw", "--trace",
    ]);
    let text = stdout(&o);
    assert!(
        text.lines().any(|l| l.starts_with("cycle=") && l.ends_with(" GLITCH")),
        "{text}"
    );
}

#[test]
fn unreachable_trigger_warns() {
    let o = run(&["glitch", "--offset", "0.833", "--width", "3.3", "--target", "0x2000"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("trigger never fired"));
    assert!(stdout(&o).contains("outcome: no_effect"));
}

#[test]
fn bad_glitch_parameters_are_usage_errors() {
    let o = run(&["glitch", "--offset", "-1", "--width", "3.3", "--target", "lw"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(&["glitch", "--offset", "1", "--width", "3.3", "--target", "frob"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "glitch",
        "--offset",
        "1",
        "--width",
        "3.3",
        "--target",
        "lw",
        "--policy",
        "seeded_random",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn trace_explains_and_reports_no_divergence() {
    let o = run(&["trace", "--offset", "0.833", "--width", "9.0", "--target", "lw"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("no divergence"));

    let o = run(&[
        "trace", "--offset", "0.833", "--width", "3.3", "--target", "lw", "--format", "json",
    ]);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(doc["chain"]["first_divergence"]["element"]
        .as_str()
        .unwrap()
        .starts_with("if_id."));
    assert!(doc["profile_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn sweep_resume_reproduces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"["lw", "jal", "c.addi"]"#);
    let cfg = cfg.to_str().unwrap();
    let o = run(&["sweep", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let read = |name: &str| std::fs::read_to_string(out.join(name)).unwrap();
    let (runs, rat, summary) = (read("runs.jsonl"), read("rat.csv"), read("summary.json"));
    assert_eq!(runs.lines().count(), 2 * 4 * 2 * 3);
    let doc: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(doc["total_runs"], 48);

    // simulate a kill mid-sweep: a prefix of lines plus a torn one
    let lines: Vec<&str> = runs.lines().collect();
    let torn = format!("{}\n{}", lines[..20].join("\n"), &lines[20][..10]);
    std::fs::write(out.join("runs.jsonl"), torn).unwrap();
    std::fs::remove_file(out.join("rat.csv")).unwrap();
    let o = run(&["sweep", "--config", cfg, "--resume"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read("runs.jsonl"), runs);
    assert_eq!(read("rat.csv"), rat);
    assert_eq!(read("summary.json"), summary);
}

#[test]
fn empty_target_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[]");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "colour = \"blue\"\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_sweep_and_rat_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("full");
    let o = run(&["sweep", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total_runs"], 9248);

    let rat_out = dir.path().join("again.csv");
    let o = run(&[
        "rat",
        out.join("runs.jsonl").to_str().unwrap(),
        "-o",
        rat_out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(&rat_out).unwrap();
    assert_eq!(csv, std::fs::read_to_string(out.join("rat.csv")).unwrap());
    let total: f64 = csv
        .lines()
        .skip(1)
        .flat_map(|l| {
            l.split(',')
                .skip(1)
                .map(|c| c.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .sum();
    assert!((total - 100.0).abs() < 0.05, "cells sum to {total}");
}

#[test]
fn rat_over_synthetic_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), r#"["lw"]"#);
    let o = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = std::fs::read_to_string(dir.path().join("out/runs.jsonl")).unwrap();
    let template: serde_json::Value = runs
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|v| v["outcome"]["critical"] == true)
        .expect("a critical record");

    // 37 jal ID/EX, 28 lw IF/ID and 183 others at EX/WB: 248 critical faults
    let mut lines = Vec::new();
    let groups = [("jal", "ID/EX", 37), ("lw", "IF/ID", 28), ("add", "EX/WB", 183)];
    for (target, column, n) in groups {
        for _ in 0..n {
            let mut rec = template.clone();
            rec["index"] = lines.len().into();
            rec["target"] = target.into();
            rec["rat_column"] = column.into();
            lines.push(rec.to_string());
        }
    }
    let records = dir.path().join("synthetic.jsonl");
    std::fs::write(&records, lines.join("\n") + "\n").unwrap();
    let o = run(&["rat", records.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("rat.csv")).unwrap();
    assert!(csv.contains("jal,0.00,14.92,0.00"), "{csv}");
    assert!(csv.contains("lw,11.29,0.00,0.00"), "{csv}");
    assert!(stdout(&o).contains("critical faults: 248"));
}

#[test]
fn rat_over_no_records_warns() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("none.jsonl");
    std::fs::write(&records, "").unwrap();
    let o = run(&["rat", records.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    assert!(stdout(&o).contains("critical faults: 0"));
}

#[test]
fn help_and_bad_usage_exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["sweep", "--help"]).status.code(), Some(0));
    assert_eq!(run(&["nonsense"]).status.code(), Some(2));
    assert_eq!(run(&["glitch", "--offset", "1"]).status.code(), Some(2));
}

#[test]
fn shipped_config_matches_the_defaults() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    let o = run(&[
        "glitch",
        "--config",
        cfg.to_str().unwrap(),
        "--offset",
        "0.833",
        "--width",
        "4.0",
        "--target",
        "lw",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("case: #3"));
}
