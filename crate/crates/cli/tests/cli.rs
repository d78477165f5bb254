use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrts::locations::read_matrix_csv;
use mrts::{DataPanel, LocationSet, MrtsBasis, TpsSystem};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

fn mrts(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrts"))
        .current_dir(dir)
        .env_remove("MRTS_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = mrts(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn simulated(dir: &Path) {
    ok(dir, &["simulate", "--seed", "11", "--locations-out", "locs.csv", "--panel-out", "panel.csv"]);
}

#[test]
fn fit_over_range_records_whole_trace() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    ok(dir.path(), &[
        "fit", "--locations", "locs.csv", "--panel", "panel.csv", "--sigma-eps2", "3",
        "--k-min", "3", "--k-max", "20", "-o", "fit.json",
    ]);
    let doc = json(dir.path().join("fit.json"));
    let trace = doc["fit"]["aic_trace"].as_array().unwrap();
    assert_eq!(trace.len(), 18);
    let ks: Vec<u64> = trace.iter().map(|e| e["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, (3..=20).collect::<Vec<_>>());
    let best = doc["fit"]["k"].as_u64().unwrap();
    let min = trace
        .iter()
        .min_by(|a, b| a["aic"].as_f64().unwrap().total_cmp(&b["aic"].as_f64().unwrap()))
        .unwrap();
    assert_eq!(min["k"].as_u64().unwrap(), best);
    assert_eq!(doc["basis"]["k"].as_u64().unwrap(), best);
}

#[test]
fn noiseless_in_model_panel_is_reproduced_at_the_sites() {
    let dir = tempfile::tempdir().unwrap();
    let coords = DMatrix::from_fn(25, 2, |i, j| {
        let golden = 0.618_033_988_749_895 * i as f64;
        if j == 0 { (i as f64 + 0.5) / 25.0 } else { golden - golden.floor() }
    });
    let locs = LocationSet::new(coords).unwrap();
    let basis = MrtsBasis::compute(&TpsSystem::build(locs.clone()).unwrap(), 6).unwrap();
    let f = basis.controls_design();
    let eta = DMatrix::from_fn(6, 10, |k, t| ((k * 3 + t * 5) % 7) as f64 - 3.0 + 0.1 * (k as f64 + 1.0) * t as f64);
    let z = &f * eta;
    let panel = DataPanel::new(locs.clone(), z.clone()).unwrap();
    let create = |name: &str| std::fs::File::create(dir.path().join(name)).unwrap();
    locs.write_csv(create("locs.csv")).unwrap();
    locs.write_csv(create("sites.csv")).unwrap();
    panel.write_csv(create("panel.csv")).unwrap();
    ok(dir.path(), &["fit", "--locations", "locs.csv", "--panel", "panel.csv", "--sigma-eps2", "0", "--k", "6", "-o", "fit.json"]);
    ok(dir.path(), &["predict", "--fit", "fit.json", "--panel", "panel.csv", "--sites", "sites.csv", "-o", "pred.csv"]);
    let pred = read_matrix_csv(std::fs::File::open(dir.path().join("pred.csv")).unwrap()).unwrap();
    assert_eq!(pred.nrows(), 25 * 10);
    let scale = z.amax();
    for t in 0..10 {
        for i in 0..25 {
            let row = pred.row(t * 25 + i);
            assert_eq!(row[2], (t + 1) as f64);
            assert!((row[3] - z[(i, t)]).abs() <= 1e-8 * scale, "site {i} t {t}: {} vs {}", row[3], z[(i, t)]);
        }
    }
}

#[test]
fn precomputed_basis_gives_identical_fit() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    ok(dir.path(), &["basis", "--locations", "locs.csv", "--k", "15", "-o", "basis.json"]);
    let common = ["fit", "--locations", "locs.csv", "--panel", "panel.csv", "--sigma-eps2", "3", "--k-max", "15"];
    let mut with = common.to_vec();
    with.extend(["--basis", "basis.json", "-o", "a.json"]);
    let mut without = common.to_vec();
    without.extend(["-o", "b.json"]);
    ok(dir.path(), &with);
    ok(dir.path(), &without);
    assert_eq!(std::fs::read(dir.path().join("a.json")).unwrap(), std::fs::read(dir.path().join("b.json")).unwrap());
}

#[test]
fn reproduce_table1_has_six_rows_of_two_methods() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["--manifest", "run.json", "reproduce", "table1", "--out-dir", "out"]);
    let text = std::fs::read_to_string(dir.path().join("out/table1.csv")).unwrap();
    assert!(text.starts_with("k,tps,proposed\n"));
    let table = read_matrix_csv(text.as_bytes()).unwrap();
    assert_eq!((table.nrows(), table.ncols()), (6, 3));
    let ks: Vec<f64> = table.column(0).iter().copied().collect();
    assert_eq!(ks, vec![12.0, 28.0, 52.0, 84.0, 124.0, 172.0]);

    let manifest = json(dir.path().join("run.json"));
    assert_eq!(manifest["config"]["name"], "table1");
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for entry in outputs {
        let bytes = std::fs::read(dir.path().join(entry["path"].as_str().unwrap())).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(entry["sha256"].as_str().unwrap(), digest);
    }
}

#[test]
fn seeded_runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--seed", "5", "--locations-out", "l1.csv", "--panel-out", "p1.csv"]);
    ok(dir.path(), &["--threads", "3", "simulate", "--seed", "5", "--locations-out", "l2.csv", "--panel-out", "p2.csv"]);
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("l1.csv"), read("l2.csv"));
    assert_eq!(read("p1.csv"), read("p2.csv"));

    let a = ok(dir.path(), &["reproduce", "table3", "--replicates", "2", "--out-dir", "a"]);
    let b = ok(dir.path(), &["--threads", "2", "reproduce", "table3", "--replicates", "2", "--out-dir", "b"]);
    assert_eq!(a, b);
    assert_eq!(read("a/table3.csv"), read("b/table3.csv"));

    ok(dir.path(), &["simulate", "--seed", "6", "--locations-out", "l3.csv", "--panel-out", "p3.csv"]);
    assert_ne!(read("p1.csv"), read("p3.csv"));
}

#[test]
fn exit_codes_and_error_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrts(dir.path(), &["fit", "--locations", "missing.csv", "--panel", "p.csv", "--sigma-eps2", "1", "--k", "4"]);
    assert_eq!(out.status.code(), Some(1));
    let record: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(record["error"], "io");
    assert!(record["message"].as_str().is_some());

    assert_eq!(mrts(dir.path(), &["fit", "--locations", "x.csv"]).status.code(), Some(2));
    assert_eq!(mrts(dir.path(), &["reproduce", "table9"]).status.code(), Some(1));

    let bad_env = Command::new(env!("CARGO_BIN_EXE_mrts"))
        .current_dir(dir.path())
        .env("MRTS_THREADS", "many")
        .args(["reproduce", "fig2b", "--out-dir", "o"])
        .output()
        .unwrap();
    assert_eq!(bad_env.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(&bad_env.stderr).unwrap();
    assert_eq!(record["error"], "usage");

    simulated(dir.path());
    let out = mrts(dir.path(), &["fit", "--locations", "locs.csv", "--panel", "panel.csv", "--sigma-eps2", "-1", "--k", "4", "-o", "fit.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("fit.json").exists());
}
