use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use treemix::data::{synth_generate, Dataset, SyntheticSpec};
use treemix::FeatureDomain;

fn treemix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treemix"))
        .args(args)
        .env("TREEMIX_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = treemix(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_spec(dir: &Path, noise: f64) -> String {
    let spec = SyntheticSpec::from_fn(
        FeatureDomain::uniform(3, 3).unwrap(),
        |x| x[0] as f64 - 2.0 + 0.5 * (x[1] == 3) as u8 as f64,
        noise,
        150,
    )
    .unwrap();
    let path = dir.join("spec.json");
    fs::write(&path, serde_json::to_vec(&spec).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn chain_bytes(dir: &Path, chains: usize) -> Vec<Vec<u8>> {
    (1..=chains)
        .map(|j| fs::read(dir.join(format!("chain_{j}.csv"))).unwrap())
        .collect()
}

#[test]
fn run_writes_traces_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), 0.5);
    let d = tmp.path().join("d");
    ok(&[
        "run",
        "--preset",
        "simplified",
        "--synth",
        &spec,
        "--n",
        "200",
        "--iters",
        "300",
        "--burnin",
        "200",
        "--chains",
        "8",
        "--seed",
        "7",
        "--out",
        d.to_str().unwrap(),
    ]);
    for j in 1..=8 {
        let text = fs::read_to_string(d.join(format!("chain_{j}.csv"))).unwrap();
        assert!(text.starts_with("iter,phase,rmse,log_post,move,accepted,root_feature_1\n"));
        assert_eq!(text.lines().count(), 301);
    }
    let record: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("run.json")).unwrap()).unwrap();
    assert_eq!(
        record["seeds"],
        serde_json::json!([7, 8, 9, 10, 11, 12, 13, 14])
    );
    assert_eq!(record["config"]["preset"], "simplified");

    let again = tmp.path().join("again");
    ok(&[
        "run",
        "--config",
        d.join("run.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(chain_bytes(&d, 8), chain_bytes(&again, 8));
}

#[test]
fn missing_dataset_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    let out = treemix(&[
        "run",
        "--dataset",
        tmp.path().join("nope.csv").to_str().unwrap(),
        "--domain",
        "2x2",
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.exists());
    assert_eq!(treemix(&["run", "--bogus"]).status.code(), Some(2));
}

#[test]
fn diagnose_outputs_and_duplicated_chains() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), 0.5);
    let d = tmp.path().join("d");
    ok(&[
        "run",
        "--preset",
        "bart",
        "--num-trees",
        "5",
        "--synth",
        &spec,
        "--iters",
        "120",
        "--burnin",
        "40",
        "--chains",
        "3",
        "--out",
        d.to_str().unwrap(),
    ]);
    let stdout = ok(&["diagnose", d.to_str().unwrap()]);
    assert!(stdout.starts_with("gelman-rubin"));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("diagnostics.json")).unwrap()).unwrap();
    assert!(report["gelman_rubin"].as_f64().unwrap() > 0.0);
    assert_eq!(report["per_chain"].as_array().unwrap().len(), 3);
    assert_eq!(report["cusum"][0].as_array().unwrap().len(), 80);

    let roots = fs::read_to_string(d.join("root_splits.csv")).unwrap();
    let mut lines = roots.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("chain,tree,empty,feature_1"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 15);
    for row in rows {
        let sum: usize = row
            .split(',')
            .skip(2)
            .map(|v| v.parse::<usize>().unwrap())
            .sum();
        assert_eq!(sum, 80);
    }
    assert_eq!(
        fs::read_to_string(d.join("rmse_values.csv"))
            .unwrap()
            .lines()
            .count(),
        241
    );
    assert_eq!(
        fs::read_to_string(d.join("cusum.csv"))
            .unwrap()
            .lines()
            .count(),
        241
    );

    let dup = tmp.path().join("dup");
    fs::create_dir(&dup).unwrap();
    for j in 1..=8 {
        fs::copy(d.join("chain_1.csv"), dup.join(format!("chain_{j}.csv"))).unwrap();
    }
    ok(&["diagnose", dup.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dup.join("diagnostics.json")).unwrap()).unwrap();
    let r = report["gelman_rubin"].as_f64().unwrap();
    assert!((r - 79.0 / 80.0).abs() < 1e-12, "{r}");

    let single = tmp.path().join("single");
    fs::create_dir(&single).unwrap();
    fs::copy(d.join("chain_1.csv"), single.join("chain_1.csv")).unwrap();
    ok(&["diagnose", single.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(single.join("diagnostics.json")).unwrap()).unwrap();
    assert!(report["gelman_rubin"].is_null());
    assert!(report["warning"].is_string());
}

#[test]
fn oracle_reports_and_guards() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tmp.path().join("o");
    ok(&[
        "oracle",
        "--domain",
        "2x2",
        "--ngrid",
        "8,16",
        "--seeds",
        "3",
        "--phi",
        "exhaustive",
        "--out",
        o.to_str().unwrap(),
    ]);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(o.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(report["num_states"], 9);
    for row in report["rows"].as_array().unwrap() {
        assert_eq!(row["lemma2_ok"], true);
        assert!(row["phi_star"].as_f64().unwrap() <= row["phi_bottleneck"].as_f64().unwrap());
    }
    let csv = fs::read_to_string(o.join("bounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let big = treemix(&[
        "oracle",
        "--domain",
        "4x4x4x4",
        "--out",
        tmp.path().join("big").to_str().unwrap(),
    ]);
    assert_eq!(big.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&big.stderr).contains("projected state space"));
    assert!(!tmp.path().join("big").exists());
}

#[test]
fn synth_round_trips_into_run() {
    let tmp = tempfile::tempdir().unwrap();
    let noiseless = write_spec(tmp.path(), 0.0);
    let csv = tmp.path().join("exact.csv");
    let stdout = ok(&[
        "synth",
        "--spec",
        &noiseless,
        "--n",
        "50",
        "--seed",
        "3",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(stdout.contains("K = 1.5"), "{stdout}");
    let spec = SyntheticSpec::read_json(&noiseless).unwrap();
    let data = Dataset::<f64>::read_csv(&csv, Some(spec.domain.clone())).unwrap();
    assert_eq!(data.len(), 50);
    for (x, &y) in data.rows().zip(data.y()) {
        assert_eq!(y, x[0] as f64 - 2.0 + if x[1] == 3 { 0.5 } else { 0.0 });
    }

    let noisy = write_spec(tmp.path(), 0.5);
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    ok(&[
        "synth",
        "--spec",
        &noisy,
        "--seed",
        "1",
        "--out",
        a.to_str().unwrap(),
    ]);
    ok(&[
        "synth",
        "--spec",
        &noisy,
        "--seed",
        "2",
        "--out",
        b.to_str().unwrap(),
    ]);
    let (ta, tb) = (
        fs::read_to_string(&a).unwrap(),
        fs::read_to_string(&b).unwrap(),
    );
    assert_eq!(ta.lines().count(), tb.lines().count());
    assert_ne!(ta, tb);
    let generated = synth_generate(&SyntheticSpec::read_json(&noisy).unwrap(), 1).unwrap();
    assert_eq!(
        Dataset::<f64>::read_csv(&a, Some(generated.domain().clone())).unwrap(),
        generated
    );

    let from_file = tmp.path().join("from_file");
    let in_process = tmp.path().join("in_process");
    let common = [
        "--iters", "80", "--burnin", "20", "--chains", "2", "--seed", "1",
    ];
    let mut args = vec![
        "run",
        "--dataset",
        a.to_str().unwrap(),
        "--domain",
        "3x3x3",
        "--out",
        from_file.to_str().unwrap(),
    ];
    args.extend(common);
    ok(&args);
    let mut args = vec![
        "run",
        "--synth",
        &noisy,
        "--out",
        in_process.to_str().unwrap(),
    ];
    args.extend(common);
    ok(&args);
    assert_eq!(chain_bytes(&from_file, 2), chain_bytes(&in_process, 2));

    assert_eq!(
        treemix(&[
            "synth",
            "--spec",
            a.to_str().unwrap(),
            "--out",
            b.to_str().unwrap()
        ])
        .status
        .code(),
        Some(2)
    );
}
