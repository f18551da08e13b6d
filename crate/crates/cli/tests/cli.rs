use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crashsim"))
}

#[test]
fn budget_prints_integer() {
    let out = bin()
        .args(["budget", "--requests-per-year", "53.3e9", "--per-incident", "2280", "--nines", "0.999999"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "23");
}

#[test]
fn headroom_reports_both_limits() {
    let out = bin()
        .args(["headroom", "--c-micro", "78", "--c-full", "3917", "--rate", "71.8"])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("n = 49"), "{text}");
    assert!(text.contains("53.5 s"), "{text}");
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.toml");
    fs::write(
        &scenario,
        "name = \"tiny\"\nduration_ms = 60000\nclients_per_node = 50\n\n[[faults]]\nat_ms = 20000\nclass = \"transient_exception\"\ntarget = \"BrowseCategories\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let st = bin()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .args(["--seed", "3", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    for f in ["taw.csv", "latency.csv", "episodes.log", "timeline.csv", "summary.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn bad_scenario_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("bad.toml");
    fs::write(&scenario, "duration_ms = 1000\n[[faults]]\nat_ms = 5\nclass = \"deadlock\"\ntarget = \"Ghost\"\n").unwrap();
    let st = bin()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .args(["--out"])
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
    let st = bin().args(["preset", "nope", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
}
