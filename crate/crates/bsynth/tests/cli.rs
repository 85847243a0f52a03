//! End-to-end behaviour of the `bsynth` binary on the bundled fixtures.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bsynth::report::extract_json;

fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for name in ["run.toml", "replay.jsonl"] {
        std::fs::copy(src.join(name), dir.path().join(name)).unwrap();
    }
    dir
}

fn bsynth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsynth"))
        .current_dir(dir)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn user_ids(events: &Path) -> std::collections::BTreeSet<String> {
    let mut r = csv::Reader::from_path(events).unwrap();
    r.records().map(|rec| rec.unwrap()[0].to_string()).collect()
}

#[test]
fn simulate_honours_user_count() {
    let dir = fixture_dir();
    let stdout = ok(bsynth(dir.path(), &["-c", "run.toml", "simulate", "--users", "20"]));
    assert!(stdout.starts_with("20 users,"), "{stdout}");
    assert_eq!(user_ids(&dir.path().join("out/real/events.csv")).len(), 20);
    assert!(dir.path().join("out/run_config.toml").exists());
}

#[test]
fn replay_generation_is_deterministic() {
    let dir = fixture_dir();
    ok(bsynth(dir.path(), &["-c", "run.toml", "simulate"]));
    let replay_before = std::fs::read(dir.path().join("replay.jsonl")).unwrap();
    let real_before = std::fs::read(dir.path().join("out/real/events.csv")).unwrap();

    let first = ok(bsynth(dir.path(), &["-c", "run.toml", "generate"]));
    assert!(first.contains("run 0: 20 users"), "{first}");
    assert!(first.contains("Pass@1 90.0%"), "{first}");
    assert!(first.contains("Pass@1 100.0%"), "{first}");
    let synth = |run: u32| std::fs::read(dir.path().join(format!("out/synth/run{run}.csv"))).unwrap();
    let (a0, a1) = (synth(0), synth(1));

    let second = ok(bsynth(dir.path(), &["-c", "run.toml", "generate"]));
    assert_eq!(first, second);
    assert_eq!(a0, synth(0));
    assert_eq!(a1, synth(1));

    // inputs are never rewritten
    assert_eq!(replay_before, std::fs::read(dir.path().join("replay.jsonl")).unwrap());
    assert_eq!(
        real_before,
        std::fs::read(dir.path().join("out/real/events.csv")).unwrap()
    );

    let validated = ok(bsynth(dir.path(), &["-c", "run.toml", "validate"]));
    assert_eq!(
        validated.lines().filter(|l| l.ends_with("valid")).count(),
        3,
        "{validated}"
    );

    let audit = std::fs::read_to_string(dir.path().join("out/generation/audit.jsonl")).unwrap();
    assert!(audit
        .lines()
        .all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

fn arm_metric(json: &serde_json::Value, arm: &str, metric: &str) -> f64 {
    json["arms"]
        .as_array()
        .unwrap()
        .iter()
        .find(|pair| pair[0] == arm)
        .map(|pair| pair[1][metric].as_f64().unwrap())
        .unwrap()
}

#[test]
fn finetune_replace_reports_replacement_rate() {
    let dir = fixture_dir();
    ok(bsynth(dir.path(), &["-c", "run.toml", "simulate"]));
    ok(bsynth(dir.path(), &["-c", "run.toml", "generate"]));
    let stdout = ok(bsynth(
        dir.path(),
        &["-c", "run.toml", "evaluate", "--scenario", "finetune_replace"],
    ));
    assert!(stdout.contains("| replacement rate |"), "{stdout}");
    assert!(!stdout.contains("```json"));

    let doc = std::fs::read_to_string(dir.path().join("out/reports/scenario_finetune_replace.md")).unwrap();
    let json = extract_json(&doc).unwrap();
    for metric in ["precision", "recall", "ndcg_at_3", "ndcg_at_5"] {
        let pre = arm_metric(&json, "pretrained", metric);
        let real = arm_metric(&json, "finetuned_real", metric);
        let syn = arm_metric(&json, "finetuned_synthetic", metric);
        let expected = (syn - pre) / (real - pre);
        let got = json["replacement_rate"][metric].as_f64().unwrap();
        assert!((got - expected).abs() < 1e-12, "{metric}: {got} vs {expected}");
    }
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "output_dir = \"out\"\n").unwrap();
    let out = bsynth(dir.path(), &["-c", "c.toml", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = fixture_dir();
    // no simulate step: generated data does not exist yet
    let out = bsynth(dir.path(), &["-c", "run.toml", "fidelity"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreachable_endpoint_is_a_backend_error() {
    let dir = fixture_dir();
    ok(bsynth(dir.path(), &["-c", "run.toml", "simulate"]));
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let cfg = format!(
        "seed = 7\n[split]\npopulation_user_count = 20\n[generation]\ntarget_weeks = 2\n[backend]\n\
         kind = \"remote_chat\"\nendpoint_url = \"http://127.0.0.1:{port}/v1/chat/completions\"\n\
         api_key_env_var = \"BSYNTH_CLI_TEST_KEY\"\nmax_retries = 0\nrequest_timeout_secs = 2.0\n\
         [data]\nevents = \"out/real/events.csv\"\nprofiles = \"out/real/profiles.json\"\n"
    );
    std::fs::write(dir.path().join("remote.toml"), cfg).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bsynth"))
        .current_dir(dir.path())
        .args(["-c", "remote.toml", "generate"])
        .env("BSYNTH_CLI_TEST_KEY", "not-a-real-key")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(!stderr.contains("not-a-real-key"));
}

#[test]
fn overrides_take_precedence() {
    let dir = fixture_dir();
    let out_dir: PathBuf = dir.path().join("elsewhere");
    ok(bsynth(
        dir.path(),
        &[
            "-c",
            "run.toml",
            "--output-dir",
            out_dir.to_str().unwrap(),
            "simulate",
            "--users",
            "5",
        ],
    ));
    assert_eq!(user_ids(&out_dir.join("real/events.csv")).len(), 5);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_api_key_is_a_config_error() {
    let dir = fixture_dir();
    ok(bsynth(dir.path(), &["-c", "run.toml", "simulate"]));
    let cfg = std::fs::read_to_string(dir.path().join("run.toml")).unwrap().replace(
        "kind = \"replay\"",
        "kind = \"remote_chat\"\nendpoint_url = \"http://127.0.0.1:9/v1/chat/completions\"\n\
         api_key_env_var = \"BSYNTH_CLI_KEY_NEVER_SET\"",
    );
    std::fs::write(dir.path().join("nokey.toml"), cfg).unwrap();
    let out = bsynth(dir.path(), &["-c", "nokey.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BSYNTH_CLI_KEY_NEVER_SET"));
    assert!(!dir.path().join("out/generation/audit.jsonl").exists());
}
