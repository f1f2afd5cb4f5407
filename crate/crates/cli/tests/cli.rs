use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn goalsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_goalsim"))
        .args(args)
        .env_remove("GOALSIM_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn list_names_seven_kinds_in_text_and_json() {
    let text = goalsim(&["list"]);
    assert!(text.status.success());
    let out = String::from_utf8(text.stdout).unwrap();
    for k in ["tracking", "remote-mdp", "graph-coding", "aircomp", "feel", "feedback", "edge-batch"] {
        assert!(out.lines().any(|l| l.starts_with(k)), "{k}");
    }
    let json = goalsim(&["list", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let entries = v.as_array().unwrap();
    assert_eq!(entries.len(), 7);
    for e in entries {
        let block = e["block"].as_str().unwrap();
        assert!(e["default_config"].as_str().unwrap().contains(&format!("[{block}")));
    }
    assert_eq!(json.stdout, goalsim(&["list", "--json"]).stdout);
}

#[test]
fn feedback_sweep_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fb");
    let o = goalsim(&[
        "run",
        "feedback",
        "--k-range",
        "20:500:20",
        "--eps",
        "1e-2,1e-4",
        "--set",
        "feedback.probes_per_set=1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "K,scheme,B_bits,fa_rate");
    let concat: Vec<&str> = lines.filter(|l| l.split(',').nth(1) == Some("concat")).collect();
    assert_eq!(concat.len(), 25);
    assert_eq!(concat[0], "20,concat,640,0");
    assert!(csv.contains(",fa_bound:0.0001,"));
    assert!(!out.join("FAILED").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = goalsim(&[
            "run",
            "feel",
            "--seed",
            "9",
            "--set",
            "feel.train.rounds=15",
            "--set",
            "feel.train.warmup_rounds=15",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        read_dir_sorted(&out)
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert!(a.iter().all(|(_, body)| body.starts_with(b"# config_hash=") && body.windows(7).any(|w| w == b"seed=9\n")));
}

#[test]
fn missing_field_exits_with_validation_code_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    fs::write(&cfg, "kind = \"tracking\"\n\n[tracking]\nepoch = 1.0\nduration = 5.0\n").unwrap();
    let out = dir.path().join("out");
    let o = goalsim(&["run", "tracking", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("missing field `components`"), "{err}");
    assert!(err.contains("line 3"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_arguments_and_parameters_are_validation_errors() {
    assert_eq!(goalsim(&["run", "nonsense"]).status.code(), Some(1));
    assert_eq!(goalsim(&["run", "feedback", "--k-range", "5:1"]).status.code(), Some(1));
    let o = goalsim(&["run", "aircomp", "--set", "aircomp.p_values=[0.5]"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("aircomp"));
    // feedback flags on another kind add a foreign block
    assert_eq!(goalsim(&["run", "feel", "--eps", "1e-2"]).status.code(), Some(1));
}

#[test]
fn unstable_run_exits_with_runtime_code_and_flags_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("edge");
    let o = goalsim(&[
        "run",
        "edge-batch",
        "--set",
        "edge_batch.system.policy.b_max=1",
        "--set",
        "edge_batch.system.queue_cap=50",
        "--set",
        "edge_batch.system.duration=2.0",
        "--set",
        "edge_batch.sweep_b_max=[]",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.starts_with("# config_hash="));
    assert!(out.join("tasks.csv").exists());
    assert!(fs::read_to_string(out.join("summary.csv")).unwrap().contains("status,failed"));
}

#[test]
fn environment_sets_the_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_goalsim"))
        .args(["run", "graph-coding", "--set", "graph_coding.bits=[1]"])
        .env("GOALSIM_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("costs.csv").exists());
    assert!(dir.path().join("summary.csv").exists());
}
