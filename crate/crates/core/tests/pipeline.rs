mod common;

use std::path::Path;

use draftiv::estimators::Estimate;
use draftiv::panel::read_panel_file;
use draftiv::report::format::fixed;
use draftiv::report::run::{load_results, render_table};
use draftiv::report::{run, ReportError, RunConfig, TableFormat};

fn fixture_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::load(&common::fixtures().join("run.toml")).unwrap();
    c.out = Some(out.to_path_buf());
    c
}

fn inline_config(extra: &str, out: &Path) -> Result<RunConfig, ReportError> {
    let f = common::fixtures();
    let text = format!(
        "[input]\nathletes = \"{}\"\nevents = \"{}\"\nresults = \"{}\"\n{extra}",
        f.join("athletes.csv").display(),
        f.join("events.csv").display(),
        f.join("results.csv").display()
    );
    let mut c = RunConfig::from_toml(&text, &f)?;
    c.out = Some(out.to_path_buf());
    c.validate()?;
    Ok(c)
}

#[test]
fn minimal_config_writes_panel_only() {
    let dir = tempfile::tempdir().unwrap();
    let c = inline_config("[cluster]\nthreshold = 5.0\n", dir.path()).unwrap();
    let outcome = run(&c).unwrap();
    assert!(outcome.records.is_empty());
    assert!(!dir.path().join("results").exists());
    assert!(!dir.path().join("tables").exists());
    let panel = read_panel_file(&dir.path().join("panel.csv")).unwrap();
    assert_eq!(panel.len(), outcome.audit.ingest.output);
    assert!(panel.iter().all(|r| r.group.is_some()));
    assert!(outcome.audit.ingest.is_conserved());
}

#[test]
fn one_record_per_specification() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path());
    let outcome = run(&c).unwrap();
    assert_eq!(outcome.records.len(), c.specs.len());
    for (rec, spec) in outcome.records.iter().zip(&c.specs) {
        assert_eq!(rec.name, spec.name);
        assert_eq!(rec.config_sha256, outcome.config_sha256);
        assert!(dir
            .path()
            .join("results")
            .join(format!("{}.json", spec.name))
            .is_file());
        assert!(rec.estimate.main().audit.is_conserved());
    }
    assert!(matches!(outcome.records[0].estimate, Estimate::Ols(_)));
    assert!(matches!(outcome.records[1].estimate, Estimate::Iv(_)));
}

#[test]
fn every_artifact_carries_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&fixture_config(dir.path())).unwrap();
    for rel in outcome.files.keys() {
        let text = std::fs::read_to_string(dir.path().join(rel)).unwrap();
        assert!(
            text.contains(&outcome.config_sha256),
            "{rel} lacks the config hash"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    for (rel, hash) in manifest["outputs"].as_object().unwrap() {
        let bytes = std::fs::read(dir.path().join(rel)).unwrap();
        let digest = sha2_hex(&bytes);
        assert_eq!(hash.as_str().unwrap(), digest, "{rel}");
    }
}

fn sha2_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

#[test]
fn tables_are_views_of_stored_results() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture_config(dir.path());
    let outcome = run(&c).unwrap();
    let stored = load_results(&c, dir.path()).unwrap();
    assert_eq!(stored, outcome.records);
    for t in &c.tables {
        for format in [TableFormat::Csv, TableFormat::Markdown] {
            let on_disk = std::fs::read(dir.path().join("tables").join(format!(
                "{}.{}",
                t.name,
                format.extension()
            )))
            .unwrap();
            assert_eq!(
                render_table(&stored, t, format, &outcome.config_sha256).unwrap(),
                on_disk
            );
        }
    }
    // every coefficient cell traces back to a stored estimate
    let table = std::fs::read_to_string(dir.path().join("tables/main.csv")).unwrap();
    let iv = stored.iter().find(|r| r.name == "iv_loo").unwrap();
    let pos = iv.estimate.main().coef("position").unwrap();
    assert!(table.contains(&fixed(pos.estimate, 3)));
    assert!(table.contains(&format!("({})", fixed(pos.se, 3))));
}

#[test]
fn missing_column_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let err = inline_config(
        "[[spec]]\nname = \"bad\"\nformula = \"y ~ position + wingspan | fe: event\"\n",
        &out,
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("wingspan") && msg.contains("bad"), "{msg}");
    assert!(!out.exists());
}

#[test]
fn stage_failure_names_stage_and_spec() {
    let dir = tempfile::tempdir().unwrap();
    let c = inline_config(
        "[[spec]]\nname = \"collinear\"\nformula = \"y ~ position + age | fe: athlete event\"\n",
        dir.path(),
    )
    .unwrap();
    let msg = run(&c).unwrap_err().to_string();
    assert!(
        msg.contains("estimate") && msg.contains("collinear") && msg.contains("age"),
        "{msg}"
    );
}

#[test]
fn missing_input_is_an_ingest_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = inline_config("", dir.path()).unwrap();
    c.input.results = "does-not-exist.csv".into();
    let msg = run(&c).unwrap_err().to_string();
    assert!(msg.contains("ingest"), "{msg}");
}

#[test]
fn fixture_audits_match_the_planted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(&fixture_config(dir.path())).unwrap().audit;
    assert_eq!(a.ingest.dropped_dnf, 1);
    assert_eq!(a.ingest.dropped_dns, 1);
    assert_eq!(a.ingest.dropped_missing, 1);
    assert_eq!(a.ingest.dropped_unresolved, 2);
    assert_eq!(a.ingest.dropped_invalid_age, 1);
    assert!(a.ingest.is_conserved());
    assert_eq!(a.specs.len(), 5);
    // rejects point at their source line in results.csv
    let source: Vec<String> = std::fs::read_to_string(common::fixtures().join("results.csv"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let rejects = std::fs::read_to_string(dir.path().join("rejects.csv")).unwrap();
    let mut checked = 0;
    for row in rejects.lines().filter(|l| l.starts_with("results,")) {
        let line: usize = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(line >= 2, "{row}");
        let src = &source[line - 1];
        assert!(
            row.contains(src.split(',').next().unwrap()),
            "{row} vs {src}"
        );
        checked += 1;
    }
    assert_eq!(checked, 3);
}
