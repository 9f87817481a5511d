//! Drives the `csr` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use csr_cli::runner::{RunManifest, SeedStatus};
use csr_core::evaluation::SummaryDocument;

fn csr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csr"))
        .args(args)
        .output()
        .unwrap()
}

fn run_synth(out: &Path, seeds: &str) -> RunManifest {
    let out_s = out.to_str().unwrap();
    let o = csr(&[
        "run",
        "--synth",
        "homoscedastic",
        "--synth-n",
        "600",
        "--seeds",
        seeds,
        "--hp",
        "epochs=300",
        "--out",
        out_s,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    RunManifest::read(&out.join("manifest.json")).unwrap()
}

#[test]
fn manifest_lists_one_curve_per_rejector_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_synth(dir.path(), "4");
    assert_eq!(m.seeds.len(), 1);
    let rec = &m.seeds[0];
    assert_eq!(rec.status, SeedStatus::Ok);
    let files = rec.files.as_ref().unwrap();
    assert_eq!(
        files.curves.keys().collect::<Vec<_>>(),
        ["csr", "knn_variance"]
    );
    for f in files.all() {
        assert!(dir.path().join(f).is_file(), "{}", f.display());
    }
    let summaries: Vec<_> = walk(dir.path())
        .into_iter()
        .filter(|p| p.ends_with("summary.json"))
        .collect();
    assert_eq!(summaries.len(), 1);
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_synth(a.path(), "0,1");
    run_synth(b.path(), "0,1");
    for rec in &ma.seeds {
        for f in rec.files.as_ref().unwrap().all() {
            let x = std::fs::read(a.path().join(f)).unwrap();
            let y = std::fs::read(b.path().join(f)).unwrap();
            assert!(x == y, "{} differs", f.display());
        }
    }
}

#[test]
fn bad_target_column_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let o = csr(&[
        "synth",
        "--profile",
        "homoscedastic",
        "--n",
        "50",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let out = dir.path().join("run");
    let o = csr(&[
        "run",
        "--data",
        csv.to_str().unwrap(),
        "--target",
        "price",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("price"));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(csr(&["run", "--out", "x"]).status.code(), Some(1));
    assert_eq!(
        csr(&[
            "run",
            "--synth",
            "homoscedastic",
            "--alpha",
            "1.5",
            "--out",
            "x"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn report_mean_matches_per_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_synth(dir.path(), "0..3");
    let manifest = dir.path().join("manifest.json");
    let json = dir.path().join("report.json");
    let o = csr(&[
        "report",
        manifest.to_str().unwrap(),
        "--json",
        json.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("csr") && text.contains("knn_variance"));

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    for rejector in ["csr", "knn_variance"] {
        let (mut auc, mut dist) = (0.0, 0.0);
        for rec in &m.seeds {
            let path = dir.path().join(&rec.files.as_ref().unwrap().summary);
            let doc =
                SummaryDocument::<f64>::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
            let s = doc.rejectors.iter().find(|r| r.method == rejector).unwrap();
            auc += s.auc;
            dist += s.distance;
        }
        let row = report["datasets"][0]["rejectors"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["rejector"] == rejector)
            .unwrap();
        assert!((row["auc"]["mean"].as_f64().unwrap() - auc / 3.0).abs() < 1e-12);
        assert!((row["distance"]["mean"].as_f64().unwrap() - dist / 3.0).abs() < 1e-12);
        assert_eq!(row["seeds"], 3);
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            "synth = \"heteroscedastic-step\"\nsynth_n = 400\nseeds = [5]\nrejectors = \"csr\"\nout = {:?}\n\n[hyperparams]\nepochs = 100\n",
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = csr(&["run", "--config", cfg.to_str().unwrap(), "--alpha", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.config.alpha, 0.1);
    assert_eq!(m.config.seeds, vec![5]);
    assert_eq!(m.seeds[0].files.as_ref().unwrap().curves.len(), 1);
}

#[test]
fn inspect_prints_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_synth(dir.path(), "2");
    let cal = dir
        .path()
        .join(&m.seeds[0].files.as_ref().unwrap().calibration);
    let o = csr(&["inspect", cal.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("q_hat") && text.contains("n_cal        60"));
}
