use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn draftiv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_draftiv"))
        .args(args)
        .env_remove("DRAFTIV_OUT")
        .env_remove("DRAFTIV_ATHLETES")
        .env_remove("DRAFTIV_EVENTS")
        .env_remove("DRAFTIV_RESULTS")
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_then_report_reproduces_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = fixtures().join("run.toml");
    let o = draftiv(&[
        "run",
        "--config",
        s(&config),
        "--out",
        s(&out),
        "--threads",
        "2",
    ]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("config_sha256"));
    let before = std::fs::read(out.join("tables/main.md")).unwrap();
    std::fs::remove_dir_all(out.join("tables")).unwrap();
    ok(&draftiv(&[
        "report",
        "--config",
        s(&config),
        "--out",
        s(&out),
    ]));
    assert_eq!(std::fs::read(out.join("tables/main.md")).unwrap(), before);
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let f = fixtures();
    ok(&draftiv(&[
        "ingest",
        "--athletes",
        s(&f.join("athletes.csv")),
        "--events",
        s(&f.join("events.csv")),
        "--results",
        s(&f.join("results.csv")),
        "--out",
        s(d),
    ]));
    assert!(d.join("rejects.csv").is_file());
    let clustered = d.join("clustered.csv");
    ok(&draftiv(&[
        "cluster",
        "--panel",
        s(&d.join("panel.csv")),
        "--threshold",
        "5",
        "--out",
        s(&clustered),
    ]));
    let inst = d.join("inst.csv");
    ok(&draftiv(&[
        "instrument",
        "--panel",
        s(&clustered),
        "--out",
        s(&inst),
    ]));

    let est = draftiv(&[
        "estimate",
        "--panel",
        s(&inst),
        "--formula",
        "y ~ leader | fe: athlete event | iv: position ~ loo",
        "--se",
        "cluster:event",
    ]);
    ok(&est);
    let v: serde_json::Value = serde_json::from_slice(&est.stdout).unwrap();
    assert_eq!(v["kind"], "iv");
    assert!(v["first_stage_f"].as_f64().unwrap() > 0.0);

    let comps = d.join("bands.csv");
    let fig = d.join("fig.csv");
    ok(&draftiv(&[
        "bandwagon",
        "--panel",
        s(&inst),
        "--bands",
        "1-2:3-4,2-3:4-5",
        "--out",
        s(&comps),
        "--figure",
        s(&fig),
    ]));
    let text = std::fs::read_to_string(&comps).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("1-2 vs 3-4"));
    assert!(fig.is_file());
}

#[test]
fn simulate_reports_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let dgp = dir.path().join("dgp.toml");
    std::fs::write(
        &dgp,
        "n_athletes = 100\nn_events = 5\nathletes_per_event = 50\n",
    )
    .unwrap();
    let o = draftiv(&[
        "simulate",
        "--dgp",
        s(&dgp),
        "--replications",
        "3",
        "--seed",
        "7",
    ]);
    ok(&o);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["summary"]["replications"], 3);
    assert_eq!(v["spec"]["master_seed"], 7);
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[input]\nathletes = \"a.csv\"\nevents = \"e.csv\"\nresults = \"r.csv\"\n[[spec]]\nname = \"s\"\nformula = \"y ~ wingspan\"\n",
    )
    .unwrap();
    let o = draftiv(&["run", "--config", s(&cfg)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("wingspan"));

    let o = draftiv(&[
        "estimate",
        "--panel",
        "nope.csv",
        "--formula",
        "y ~ position",
    ]);
    assert!(!o.status.success());
}

#[test]
fn env_overrides_input_paths() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let o = Command::new(env!("CARGO_BIN_EXE_draftiv"))
        .args(["ingest", "--out", s(dir.path())])
        .env("DRAFTIV_ATHLETES", f.join("athletes.csv"))
        .env("DRAFTIV_EVENTS", f.join("events.csv"))
        .env("DRAFTIV_RESULTS", f.join("results.csv"))
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.path().join("panel.csv").is_file());
}
