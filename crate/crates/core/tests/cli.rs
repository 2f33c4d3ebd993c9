mod common;

use std::fs;
use std::path::Path;

use common::*;
use trusmap::io::{write_json, MappedFile, SessionFile};
use trusmap::transform::TransformFile;

const SMALL: &str = r#"{"dims":[64,64,64],"spacing":[1.0,1.0,1.0],"seed":3}"#;

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("cfg.json");
    fs::write(&path, SMALL).unwrap();
    path
}

fn code(o: &std::process::Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn phantom_gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for out in ["a", "b"] {
        let o = trusmap(&["phantom", "gen", "--config", p(&cfg), "--out-dir", p(&dir.path().join(out))]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["reference.mha", "fiducials.json", "phantom.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    // a different thread count changes nothing
    let o = trusmap_env(&["phantom", "gen", "--config", p(&cfg), "--out-dir", p(&dir.path().join("c"))], &[("TRUSMAP_THREADS", "3")]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(dir.path().join("a/reference.mha")).unwrap(), fs::read(dir.path().join("c/reference.mha")).unwrap());
}

#[test]
fn register_self_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    assert_eq!(code(&trusmap(&["phantom", "gen", "--config", p(&cfg), "--out-dir", p(d)])), 0);
    let r = d.join("reference.mha");
    let out = d.join("t.json");
    let o = trusmap(&["register", "--ref", p(&r), "--moving", p(&r), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let tf: TransformFile = trusmap::io::read_json(&out).unwrap();
    let t = tf.to_transform();
    assert!(t.translation().norm() <= 0.1 && t.rotation_angle().to_degrees() <= 0.1);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("t.metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["success"], true);
    assert_eq!(metrics["schema_version"], "trusmap.metrics/1");

    // same inputs, same transform file
    let again = d.join("t2.json");
    assert_eq!(code(&trusmap(&["register", "--ref", p(&r), "--moving", p(&r), "--out", p(&again)])), 0);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());

    let tre_out = d.join("tre.json");
    let o = trusmap(&["validate", "--fiducials", p(&d.join("fiducials.json")), "--transform", p(&out), "--out", p(&tre_out)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&tre_out).unwrap()).unwrap();
    assert_eq!(v["schema_version"], "trusmap.tre/1");
    assert!(v["mean_mm"].as_f64().unwrap() <= 0.1);
    assert_eq!(v["n"], 5);
}

#[test]
fn unsuccessful_registration_exits_3_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    assert_eq!(code(&trusmap(&["phantom", "gen", "--config", p(&cfg), "--out-dir", p(d)])), 0);
    // a constant volume on the same grid has no variance to correlate
    let reference = trusmap::io::read_mha(d.join("reference.mha")).unwrap();
    let flat = trusmap::Volume3::new(reference.geometry().clone(), vec![9.0; reference.data().len()], reference.intensity_type()).unwrap();
    trusmap::io::write_mha(&flat, d.join("flat.mha")).unwrap();
    let out = d.join("t.json");
    let metrics = d.join("m.json");
    let o = trusmap(&["register", "--ref", p(&d.join("reference.mha")), "--moving", p(&d.join("flat.mha")), "--out", p(&out), "--metrics", p(&metrics)]);
    assert_eq!(code(&o), 3);
    assert!(out.exists());
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["success"], false);
    assert!(m["error"].as_str().unwrap().contains("degenerate"));
}

#[test]
fn exit_codes_for_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // usage
    assert_eq!(code(&trusmap(&["register"])), 1);
    assert_eq!(code(&trusmap(&["no-such-command"])), 1);
    // I/O and parse
    assert_eq!(code(&trusmap(&["register", "--ref", "/nope.mha", "--moving", "/nope.mha", "--out", p(&d.join("t.json"))])), 2);
    fs::write(d.join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&trusmap(&["map", "--session", p(&d.join("bad.json")), "--transforms", p(d), "--out", p(&d.join("m.json"))])), 2);
    // invalid content
    let cfg = small_config(d);
    assert_eq!(code(&trusmap(&["phantom", "gen", "--config", p(&cfg), "--out-dir", p(d)])), 0);
    fs::write(d.join("reg.json"), r#"{"n_levels": 0}"#).unwrap();
    let r = d.join("reference.mha");
    let o = trusmap(&["register", "--ref", p(&r), "--moving", p(&r), "--out", p(&d.join("t.json")), "--config", p(&d.join("reg.json"))]);
    assert_eq!(code(&o), 4);
    fs::write(d.join("big.json"), r#"{"semi_axes":[40,20,20]}"#).unwrap();
    assert_eq!(code(&trusmap(&["phantom", "gen", "--config", p(&d.join("big.json")), "--out-dir", p(&d.join("x"))])), 4);
    assert_eq!(code(&trusmap(&["report", "--mapped", p(&d.join("missing.json")), "--out", p(&d.join("r.csv")), "--min-len=-1"])), 4);
}

#[test]
fn session_with_unknown_label_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let o = trusmap(&["phantom", "gen", "--config", p(&cfg), "--out-dir", p(d), "--session", "2", "--motion", "3mm,3deg"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut s: SessionFile = trusmap::io::read_json(d.join("session.json")).unwrap();
    assert_eq!(s.schema_version, "trusmap.session/1");
    assert_eq!(s.biopsies.len(), 2);
    s.biopsies[0].intended_target = "QQ-L".into();
    write_json(d.join("session.json"), &s).unwrap();
    fs::create_dir_all(d.join("t")).unwrap();
    let o = trusmap(&["map", "--session", p(&d.join("session.json")), "--transforms", p(&d.join("t")), "--out", p(&d.join("m.json"))]);
    assert_eq!(code(&o), 4);
}

#[test]
fn small_session_pipeline_hits_everything_with_perfect_aim() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let o = trusmap(&["phantom", "gen", "--config", p(&cfg), "--out-dir", p(d), "--session", "4", "--motion", "5mm,5deg"]);
    assert_eq!(code(&o), 0);
    let csv = pipeline(d).unwrap();
    assert_eq!(csv_totals(&csv), (4, 4));
    let mapped: MappedFile = trusmap::io::read_json(d.join("mapped.json")).unwrap();
    assert!(mapped.biopsies.iter().all(|b| b.registration_success && b.entry_ref_mm.is_some()));
}

#[test]
fn report_and_learning_curve_on_table_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut list = String::new();
    for s in clinical_fixture() {
        let name = format!("{}.json", s.patient_id);
        write_json(d.join(&name), &MappedFile::from_mapped(&s)).unwrap();
        list.push_str(&name);
        list.push('\n');
    }
    fs::write(d.join("list.txt"), &list).unwrap();

    let csv_path = d.join("report.csv");
    let o = trusmap(&["report", "--mapped-list", p(&d.join("list.txt")), "--out", p(&csv_path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "target,side,n,hits,hit_pct,mean_len_all_mm,mean_len_hits_mm");
    assert_eq!(lines[1], "BL,R,33,23,70,9.8,14.0");
    assert_eq!(lines[8], "MS,L,31,28,90,14.5,16.0");
    assert_eq!(lines[9], "AL+AS,R,60,31,52,6.2,12.0");
    assert!(lines[11].starts_with("Sum/Average,,371,248,67,"), "{}", lines[11]);

    let json_path = d.join("report.json");
    assert_eq!(code(&trusmap(&["report", "--mapped-list", p(&d.join("list.txt")), "--out", p(&json_path)])), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(v["schema_version"], "trusmap.report/1");
    assert_eq!(v["totals"]["n_hits"], 248);

    let lc = d.join("lc.json");
    let o = trusmap(&["learning-curve", "--mapped-list", p(&d.join("list.txt")), "--split", "16", "--out", p(&lc)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&lc).unwrap()).unwrap();
    assert_eq!(v["schema_version"], "trusmap.learning_curve/1");
    assert_eq!(v["first"]["n"], 172);
    assert!((v["chi2"].as_f64().unwrap() - 5.8918).abs() < 1e-3);
    assert_eq!(code(&trusmap(&["learning-curve", "--mapped-list", p(&d.join("list.txt")), "--split", "32", "--out", p(&lc)])), 4);
}

#[test]
fn bench_respects_thread_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    assert_eq!(code(&trusmap(&["phantom", "gen", "--config", p(&cfg), "--out-dir", p(d)])), 0);
    let r = d.join("reference.mha");
    let out = d.join("bench.json");
    let o = trusmap_env(&["bench", "--ref", p(&r), "--moving", p(&r), "--repeat", "2", "--out", p(&out), "--threads", "1"], &[("TRUSMAP_THREADS", "2")]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["threads"], 2);
    assert_eq!(v["runs_seconds"].as_array().unwrap().len(), 2);
    assert!(v["median_seconds"].as_f64().unwrap() > 0.0);
}
