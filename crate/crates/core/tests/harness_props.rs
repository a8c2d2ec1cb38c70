use kan_core::harness::{emit_report, run_sweep, SweepConfig};
use std::collections::BTreeMap;
use std::path::Path;

fn config(mode: &str, axis: &str, values: &[usize], seeds: &[u64], out: &Path) -> SweepConfig {
    let fixed = if mode == "gd" {
        serde_json::json!({"eta": 1.0, "T": 6})
    } else {
        serde_json::json!({"epsilon": 2.0, "T": 6, "eta": 1.0, "R1": 1.0, "R2": 1.0, "seed_noise": 5})
    };
    serde_json::from_value(serde_json::json!({
        "task": "synth",
        "mode": mode,
        "sweep_axis": axis,
        "axis_values": values,
        "fixed": fixed,
        "model": {"m": 4, "p": 4},
        "synth": {"n_train": 60, "n_test": 30, "d": 3},
        "seeds": seeds,
        "output_path": out,
    }))
    .unwrap()
}

fn read(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.deserialize().map(|x| x.unwrap()).collect()
}

#[test]
fn reruns_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    for mode in ["gd", "dpgd"] {
        let mut bytes = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{mode}{run}.csv"));
            let cfg = config(mode, "width", &[2, 5], &[0, 1, 2], &out);
            let paths = emit_report(&run_sweep(&cfg).unwrap(), &out).unwrap();
            assert!(paths.timing.exists());
            bytes.push((std::fs::read(&paths.raw).unwrap(), std::fs::read(&paths.aggregate).unwrap()));
        }
        assert_eq!(bytes[0], bytes[1], "{mode}");
    }
}

#[test]
fn each_run_is_independent_of_the_others() {
    let dir = tempfile::tempdir().unwrap();
    let all = run_sweep(&config("dpgd", "iters", &[3, 6], &[4, 7, 9], &dir.path().join("a.csv"))).unwrap();
    let one = run_sweep(&config("dpgd", "iters", &[6], &[7], &dir.path().join("b.csv"))).unwrap();
    let row = all.rows.iter().find(|r| r.axis_value == 6 && r.seed == 7).unwrap();
    let solo = &one.rows[0];
    assert_eq!((row.train_loss, row.test_acc, row.avg_test_loss), (solo.train_loss, solo.test_acc, solo.avg_test_loss));
}

#[test]
fn gd_iteration_rows_match_separate_runs() {
    let dir = tempfile::tempdir().unwrap();
    let all = run_sweep(&config("gd", "iters", &[2, 4, 6], &[1], &dir.path().join("a.csv"))).unwrap();
    let mut cfg = config("gd", "width", &[4], &[1], &dir.path().join("b.csv"));
    if let kan_core::harness::FixedConfig::Gd(g) = &mut cfg.fixed {
        g.iters = 4;
    }
    let solo = run_sweep(&cfg).unwrap();
    let row = all.rows.iter().find(|r| r.axis_value == 4).unwrap();
    assert_eq!(row.train_loss, solo.rows[0].train_loss);
    assert_eq!(row.test_acc, solo.rows[0].test_acc);
}

#[test]
fn aggregates_recompute_from_raw_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let cfg = config("dpgd", "width", &[2, 3, 8], &[0, 1, 2, 3], &out);
    let paths = emit_report(&run_sweep(&cfg).unwrap(), &out).unwrap();
    let raw = read(&paths.raw);
    let agg = read(&paths.aggregate);
    assert_eq!(raw.len(), 12);
    assert_eq!(agg.len(), 3);
    for a in &agg {
        let v = &a["m"];
        let rows: Vec<_> = raw.iter().filter(|r| &r["m"] == v && r["status"] == "ok").collect();
        assert_eq!(a["n_ok"], rows.len().to_string());
        for metric in ["train_loss", "test_loss", "train_acc", "test_acc", "avg_test_loss"] {
            let xs: Vec<f64> = rows.iter().map(|r| r[metric].parse().unwrap()).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
            let got: f64 = a[&format!("{metric}_mean")].parse().unwrap();
            let got_se: f64 = a[&format!("{metric}_stderr")].parse().unwrap();
            assert!((got - mean).abs() < 1e-12 && (got_se - se).abs() < 1e-12, "{metric} at m={v}");
        }
    }
    assert!(agg.iter().filter(|a| a["change_point"] == "1").count() <= 1);
}
