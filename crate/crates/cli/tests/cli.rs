mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use serde_json::Value;

use common::{chat_response, MockServer};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn fixture(name: &str) -> PathBuf {
    Path::new(FIXTURES).join(name)
}

fn fairprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairprobe"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FAIRPROBE_API_KEY")
        .env("FAIRPROBE_CACHE_DIR", cwd.join("cache"))
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = fairprobe(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn unbiased_audit_is_neutral() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &["audit", "--beta", "0", "--no-probe", "-o", "out"],
        tmp.path(),
    );
    let r = report(&tmp.path().join("out"));
    let tv = r["topic_audits"][0]["max_total_variation"]
        .as_f64()
        .unwrap();
    assert!(tv < 0.02, "{tv}");
    assert!(r["metadata"]["tool_version"]
        .as_str()
        .unwrap()
        .starts_with("fairprobe "));
    assert_eq!(r["metadata"]["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn fully_biased_audit_flags_every_group() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["audit", "--beta", "1", "-o", "out"], tmp.path());
    let r = report(&tmp.path().join("out"));
    let probe = r["probe"].as_array().unwrap();
    assert_eq!(probe.len(), 2);
    for row in probe {
        assert_eq!(row["flag"], "over-inferred", "{row}");
    }
    assert!(tmp.path().join("out/probe-model.json").exists());
}

#[test]
fn missing_corpus_path_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fairprobe(
        &["audit", "--names", "no-such-names.csv", "-o", "out"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-names.csv"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fairprobe(&["simulate", "--backend", "quantum"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(
        tmp.path().join("bad.toml"),
        "[backend]\nkind = \"quantum\"\n",
    )
    .unwrap();
    let out = fairprobe(&["simulate", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(tmp.path().join("typo.toml"), "sede = 3\n").unwrap();
    let out = fairprobe(&["audit", "--config", "typo.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
    let out = fairprobe(&["audit", "--beta", "1.5"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

fn accuracy(stdout: &str) -> f64 {
    let at = stdout.find("test accuracy ").unwrap() + "test accuracy ".len();
    stdout[at..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn probe_train_then_eval_on_separable_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(&["probe", "fixture", "--out", "data.json"], cwd);

    let out = fairprobe(
        &[
            "probe",
            "eval",
            "--data",
            "data.json",
            "--model",
            "model.json",
        ],
        cwd,
    );
    assert_eq!(out.status.code(), Some(2));

    ok(
        &[
            "probe",
            "train",
            "--data",
            "data.json",
            "--model",
            "model.json",
        ],
        cwd,
    );
    let stdout = ok(
        &[
            "probe",
            "eval",
            "--data",
            "data.json",
            "--model",
            "model.json",
            "-o",
            "eval",
        ],
        cwd,
    );
    assert!(accuracy(&stdout) >= 0.95, "{stdout}");
    assert!(stdout.contains("random baselines: gender 0.500, race 0.333, continent 0.200"));
    let csv = std::fs::read_to_string(cwd.join("eval/probe.csv")).unwrap();
    assert!(csv.lines().count() >= 2, "{csv}");

    ok(
        &["probe", "fixture", "--mode", "pair", "--out", "pair.json"],
        cwd,
    );
    ok(
        &[
            "probe",
            "train",
            "--data",
            "pair.json",
            "--model",
            "pair-model.json",
            "--mode",
            "pair",
        ],
        cwd,
    );
    let stdout = ok(
        &[
            "probe",
            "eval",
            "--data",
            "pair.json",
            "--model",
            "pair-model.json",
        ],
        cwd,
    );
    assert!(accuracy(&stdout) >= 0.95, "{stdout}");
}

#[test]
fn probe_trains_on_audit_rankings() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    ok(
        &[
            "audit",
            "--beta",
            "1",
            "--no-probe",
            "--repeats",
            "3",
            "-o",
            "out",
        ],
        cwd,
    );
    let stdout = ok(
        &[
            "probe",
            "train",
            "--data",
            "out/rankings.jsonl",
            "--model",
            "m.json",
        ],
        cwd,
    );
    assert!(accuracy(&stdout) > 0.5, "{stdout}");
}

fn counterfactual_args<'a>(beta: &'a str, log: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "counterfactual",
        "--beta",
        beta,
        "--names",
        "names.csv",
        "--interactions",
        log,
        "--repeats",
        "3",
        "-o",
        out,
    ]
}

fn copy_fixtures(dir: &Path) {
    for f in ["names.csv", "interactions.jsonl"] {
        std::fs::copy(fixture(f), dir.join(f)).unwrap();
    }
}

#[test]
fn group_blind_counterfactual_is_all_zero() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    ok(
        &counterfactual_args("0", "interactions.jsonl", "out"),
        tmp.path(),
    );
    let csv = std::fs::read_to_string(tmp.path().join("out/u_metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        assert!(row.ends_with(",0.000000"), "{row}");
    }
}

#[test]
fn biased_counterfactual_matches_golden_csv() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    ok(
        &counterfactual_args("1", "interactions.jsonl", "out"),
        tmp.path(),
    );
    let got = std::fs::read(tmp.path().join("out/u_metrics.csv")).unwrap();
    let want = std::fs::read(fixture("counterfactual-golden.csv")).unwrap();
    assert_eq!(
        String::from_utf8(got).unwrap(),
        String::from_utf8(want).unwrap()
    );
}

#[test]
fn malformed_log_line_is_skipped_and_counted() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let mut log = std::fs::read_to_string(tmp.path().join("interactions.jsonl")).unwrap();
    log.push_str("{\"user\": {\"id\": \"broken\"\n");
    std::fs::write(tmp.path().join("dirty.jsonl"), log).unwrap();
    ok(&counterfactual_args("1", "dirty.jsonl", "out"), tmp.path());
    let r = report(&tmp.path().join("out"));
    assert_eq!(r["metadata"]["warnings"], 1);
    // the clean records give the same table as the clean log
    let got = std::fs::read(tmp.path().join("out/u_metrics.csv")).unwrap();
    assert_eq!(
        got,
        std::fs::read(fixture("counterfactual-golden.csv")).unwrap()
    );
}

#[test]
fn single_round_simulation_is_the_first_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    let base = [
        "simulate",
        "--mode",
        "reinforcing",
        "--beta",
        "0.3",
        "--users-per-group",
        "10",
    ];
    ok(&[&base[..], &["--rounds", "1", "-o", "one"]].concat(), cwd);
    ok(&[&base[..], &["--rounds", "4", "-o", "four"]].concat(), cwd);
    for group in ["male", "female"] {
        let one = std::fs::read_to_string(cwd.join(format!("one/trace-{group}.csv"))).unwrap();
        let four = std::fs::read_to_string(cwd.join(format!("four/trace-{group}.csv"))).unwrap();
        let one: Vec<&str> = one.lines().collect();
        let four: Vec<&str> = four.lines().collect();
        assert_eq!(one.len(), 2);
        assert_eq!(four.len(), 5);
        assert_eq!(one[..], four[..2]);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    for out in ["a1", "a2"] {
        ok(&["audit", "--beta", "0.5", "--seed", "9", "-o", out], cwd);
    }
    for out in ["s1", "s2"] {
        ok(
            &[
                "simulate",
                "--mode",
                "reinforcing",
                "--beta",
                "0.5",
                "--rounds",
                "5",
                "--users-per-group",
                "8",
                "-o",
                out,
            ],
            cwd,
        );
    }
    assert_eq!(
        read_dir_sorted(&cwd.join("a1")),
        read_dir_sorted(&cwd.join("a2"))
    );
    assert_eq!(
        read_dir_sorted(&cwd.join("s1")),
        read_dir_sorted(&cwd.join("s2"))
    );
    assert!(read_dir_sorted(&cwd.join("a1")).len() >= 6);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    std::fs::write(
        cwd.join("run.toml"),
        "seed = 4\n[backend]\nbeta = 1.0\n[audit]\nprobe = false\nusers_per_group = 5\n",
    )
    .unwrap();
    ok(&["audit", "--config", "run.toml", "-o", "file"], cwd);
    ok(
        &["audit", "--config", "run.toml", "--beta", "0", "-o", "flag"],
        cwd,
    );
    let (file, flag) = (report(&cwd.join("file")), report(&cwd.join("flag")));
    assert_eq!(file["metadata"]["backend_id"], "synthetic-b1.00-fresh");
    assert_eq!(flag["metadata"]["backend_id"], "synthetic-b0.00-fresh");
    assert_eq!(file["metadata"]["seed"], 4);
    assert_ne!(
        file["metadata"]["config_digest"],
        flag["metadata"]["config_digest"]
    );
    assert!(file["probe"].as_array().unwrap().is_empty());
}

fn numbered_list(n: usize) -> String {
    let cats = ["politics", "life", "education", "health", "art", "sports"];
    (1..=n)
        .map(|i| format!("{i}. Headline number {i} - {}\n", cats[i % cats.len()]))
        .collect()
}

#[test]
fn llm_backend_reruns_from_warm_cache() {
    let server = MockServer::start(Duration::ZERO, |_, _| {
        (200, chat_response(&numbered_list(20)))
    });
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    std::fs::copy(fixture("names.csv"), cwd.join("names.csv")).unwrap();
    let args = |out: &'static str| {
        vec![
            "audit",
            "--backend",
            "llm",
            "--endpoint",
            server.url.as_str(),
            "--names",
            "names.csv",
            "-o",
            out,
        ]
    };
    let first = Command::new(env!("CARGO_BIN_EXE_fairprobe"))
        .args(args("cold"))
        .current_dir(cwd)
        .env("FAIRPROBE_API_KEY", "test-key")
        .env("FAIRPROBE_CACHE_DIR", cwd.join("cache"))
        .output()
        .unwrap();
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let hits = server.hits();
    // 8 users plus the neutral lists
    assert!(hits >= 8, "{hits}");

    // no key this time: everything must come from the cache
    ok(&args("warm"), cwd);
    assert_eq!(server.hits(), hits);
    assert_eq!(
        read_dir_sorted(&cwd.join("cold")),
        read_dir_sorted(&cwd.join("warm"))
    );
    let r = report(&cwd.join("warm"));
    assert_eq!(r["metadata"]["backend_id"], "llm-gpt-3.5-turbo-0613");
}

#[test]
fn report_prints_written_tables() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    ok(
        &counterfactual_args("1", "interactions.jsonl", "out"),
        tmp.path(),
    );
    let stdout = ok(&["report", "out"], tmp.path());
    assert!(stdout.contains("U-NDCG@5"), "{stdout}");
    assert!(stdout.contains("0.140"), "{stdout}");
    let out = fairprobe(&["report", "missing"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
