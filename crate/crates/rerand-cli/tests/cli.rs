//! End-to-end CLI checks through the compiled binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rerand() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rerand"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    rerand()
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("RERAND_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn json(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("result.json")).expect("result.json exists");
    serde_json::from_str(&text).expect("result.json parses")
}

fn hours_csv(dir: &Path) -> PathBuf {
    let path = dir.join("h.csv");
    std::fs::write(&path, "h\n1\n2\n3\n4\n5\n6\n7\n8\n").unwrap();
    path
}

fn experiment_csv(dir: &Path) -> PathBuf {
    let path = dir.join("exp.csv");
    std::fs::write(
        &path,
        "h,y,arm\n1,1.2,0\n2,2.1,0\n3,3.4,1\n4,3.9,0\n5,5.2,1\n6,5.8,1\n7,7.1,1\n8,7.7,0\n",
    )
    .unwrap();
    path
}

#[test]
fn count_prints_known_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["count", "--n", "20", "--treated", "10"], tmp.path());
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "184756");

    let out = run(&["count", "--pairs", "4"], tmp.path());
    assert_eq!(stdout(&out).trim(), "16");

    let out = run(&["count", "--n", "8", "--treated", "4"], tmp.path());
    assert_eq!(stdout(&out).trim(), "70");
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn count_rejects_invalid_designs_with_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["count", "--n", "8", "--treated", "8"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn balance_reproduces_the_threshold_table_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = hours_csv(tmp.path());
    for (threshold, members, min_p) in [("0", 8u64, 0.125), ("2", 56, 0.018), ("4", 70, 0.014)] {
        let out = run(
            &[
                "balance",
                "--data",
                data.to_str().unwrap(),
                "--treated",
                "4",
                "--metric",
                "m",
                "--threshold",
                threshold,
            ],
            tmp.path(),
        );
        assert!(out.status.success(), "threshold {threshold}");
        let v = json(tmp.path());
        assert_eq!(v["members"], members);
        let got = v["min_p_value"].as_f64().unwrap();
        assert_eq!((got * 1000.0).round() / 1000.0, min_p);
    }
    // p_a = 1 keeps everything.
    let out = run(
        &[
            "balance",
            "--data",
            data.to_str().unwrap(),
            "--treated",
            "4",
            "--metric",
            "m",
            "--pa",
            "1.0",
            "--write-members",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let v = json(tmp.path());
    assert_eq!(v["members"], 70);
    let members_csv = std::fs::read_to_string(tmp.path().join("members.csv")).unwrap();
    assert_eq!(members_csv.lines().count(), 71); // header + 70 rows
    assert!(members_csv.starts_with("index,score\n"));
}

#[test]
fn balance_data_errors_exit_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "h,g\n1,2\n,9\n3,4\n4,5\n").unwrap();
    let out = run(
        &[
            "balance",
            "--data",
            bad.to_str().unwrap(),
            "--treated",
            "2",
            "--metric",
            "m",
            "--pa",
            "0.5",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("line 3"), "stderr: {err}");
}

#[test]
fn test_command_reports_exact_p_value() {
    let tmp = tempfile::tempdir().unwrap();
    let data = experiment_csv(tmp.path());
    let out = run(
        &[
            "test",
            "--data",
            data.to_str().unwrap(),
            "--outcome-col",
            "y",
            "--arm-col",
            "arm",
            "--metric",
            "m",
            "--pa",
            "1.0",
            "--tau0",
            "0",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let v = json(tmp.path());
    let p = v["p_value"].as_f64().unwrap();
    let size = v["reference_size"].as_u64().unwrap();
    assert_eq!(size, 70);
    assert!((p * 70.0).round() - p * 70.0 < 1e-9);
    assert!(p >= 1.0 / 70.0);
}

#[test]
fn sharp_null_constant_outcome_gives_p_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("const.csv");
    std::fs::write(
        &data,
        "h,y,arm\n1,3,0\n2,3,0\n3,3,1\n4,3,0\n5,3,1\n6,3,1\n7,3,1\n8,3,0\n",
    )
    .unwrap();
    let out = run(
        &[
            "test",
            "--data",
            data.to_str().unwrap(),
            "--metric",
            "m",
            "--pa",
            "1.0",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert_eq!(json(tmp.path())["p_value"].as_f64().unwrap(), 1.0);
}

#[test]
fn inadmissible_assignment_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // Observed assignment treats the top half: the worst split, excluded
    // from the threshold-0 acceptance set.
    let data = tmp.path().join("bad_w.csv");
    std::fs::write(
        &data,
        "h,y,arm\n1,1,0\n2,2,0\n3,3,0\n4,4,0\n5,5,1\n6,6,1\n7,7,1\n8,8,1\n",
    )
    .unwrap();
    let out = run(
        &[
            "test",
            "--data",
            data.to_str().unwrap(),
            "--metric",
            "m",
            "--threshold",
            "0",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn interval_is_infinite_for_paired_design_at_5_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("paired.csv");
    std::fs::write(
        &data,
        "h,y,arm\n1,1.1,1\n2,2.0,0\n3,3.2,0\n4,4.1,1\n5,5.0,1\n6,6.2,0\n7,7.1,0\n8,8.3,1\n",
    )
    .unwrap();
    let out = run(
        &[
            "interval",
            "--data",
            data.to_str().unwrap(),
            "--pairs",
            "4",
            "--metric",
            "m",
            "--pa",
            "1.0",
            "--alpha",
            "0.05",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(tmp.path());
    assert_eq!(v["lower"], "-inf");
    assert_eq!(v["upper"], "inf");
    assert_eq!(v["display"], "-inf..inf");
}

#[test]
fn minp_curve_hits_the_floor_at_full_acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &["minp-curve", "--n-cand", "252", "--pa-grid", "0.003968253968253968,0.5,1.0"],
        tmp.path(),
    );
    assert!(out.status.success());
    let v = json(tmp.path());
    let points = v["points"].as_array().unwrap();
    assert_eq!(points[0]["min_p_value"].as_f64().unwrap(), 1.0);
    assert_eq!(points[1]["min_p_value"].as_f64().unwrap(), 1.0 / 126.0);
    assert_eq!(points[2]["min_p_value"].as_f64().unwrap(), 1.0 / 252.0);
    let curve = std::fs::read_to_string(tmp.path().join("curve.csv")).unwrap();
    assert!(curve.starts_with("p_a,value,stderr\n"));
    assert_eq!(curve.lines().count(), 4);
}

#[test]
fn choose_apriori_matches_hand_inversion_and_reports_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &["choose", "apriori", "--beta-target", "0.05", "--n", "8", "--treated", "4"],
        tmp.path(),
    );
    assert!(out.status.success());
    let v = json(tmp.path());
    assert_eq!(v["reference_size"], 20);
    assert_eq!(v["p_a"].as_f64().unwrap(), 20.0 / 70.0);

    let out = run(
        &["choose", "apriori", "--beta-target", "0.001", "--n-cand", "252"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("smallest achievable"), "stderr: {err}");
}

#[test]
fn choose_heuristic_extremes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "choose", "heuristic", "--lambda", "1.0", "--k", "3", "--n-cand", "184756",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert_eq!(json(tmp.path())["p_a_star"].as_f64().unwrap(), 1.0);

    let out = run(
        &[
            "choose", "heuristic", "--lambda", "0.0", "--k", "3", "--n-cand", "184756",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        json(tmp.path())["p_a_star"].as_f64().unwrap(),
        1.0 / 184_756.0
    );
}

#[test]
fn choose_design_sharp_null_prior_keeps_expected_p_high() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "choose",
            "design",
            "--n",
            "8",
            "--treated",
            "4",
            "--k",
            "2",
            "--tau-point",
            "0",
            "--noise-sd",
            "0.5",
            "--pa-grid",
            "0.1,0.5,1.0",
            "--mc-iters",
            "200",
            "--seed",
            "11",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(tmp.path());
    // Under a sharp-null prior no grid point dips below ~0.5.
    for point in v["points"].as_array().unwrap() {
        assert!(point["expected_p_value"].as_f64().unwrap() > 0.45);
    }
}

#[test]
fn simulate_runs_the_bundled_config_and_emits_all_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/study_small.toml");
    let out = run(&["simulate", "--config", config], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(tmp.path());
    let cells = v["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    for cell in cells {
        assert!(cell["relative_rmse"].as_f64().unwrap() > 0.0);
        let name = cell["truth_curve"].as_str().unwrap();
        assert!(tmp.path().join(name).exists());
    }
}

#[test]
fn simulate_rejects_bad_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "schema_version = 1\n[study]\nn_grid = [7]\n").unwrap();
    let out = run(&["simulate", "--config", config.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("n_grid"), "stderr: {err}");

    let config2 = tmp.path().join("bad2.toml");
    std::fs::write(&config2, "schema_version = 1\n[study]\nnot_a_key = 3\n").unwrap();
    let out = run(&["simulate", "--config", config2.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("not_a_key"), "stderr: {err}");
}

fn semisynthetic_csv(dir: &Path) -> PathBuf {
    // Deterministic synthetic two-covariate experiment, 200 units.
    let path = dir.join("semi.csv");
    let mut text = String::from("x1,x2,y,arm\n");
    let mut state = 88172645463325252u64;
    let mut unit = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..200 {
        let x1 = 2.0 * unit() - 1.0;
        let x2 = 2.0 * unit() - 1.0;
        let arm = i % 2;
        let y = 1.0 + 2.0 * x1 - x2 + 1.5 * arm as f64 + 0.1 * (2.0 * unit() - 1.0);
        text.push_str(&format!("{x1},{x2},{y},{arm}\n"));
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn semisynthetic_reports_interior_argmin_and_shrinking_deviation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = semisynthetic_csv(tmp.path());
    let out = run(
        &[
            "semisynthetic",
            "--data",
            data.to_str().unwrap(),
            "--fraction",
            "0.08",
            "--mc-iters",
            "120",
            "--grid-points",
            "8",
            "--seed",
            "3",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(tmp.path());
    let star = v["p_a_star"].as_f64().unwrap();
    assert!(star < 1.0, "argmin {star} should be interior");
    // Effect-estimate deviation shrinks as the acceptance tightens.
    let report = v["tau_report"].as_array().unwrap();
    let first_dev = report[0]["mean_abs_rel_dev"].as_f64().unwrap();
    let last_dev = report.last().unwrap()["mean_abs_rel_dev"].as_f64().unwrap();
    assert!(
        first_dev < last_dev,
        "tight {first_dev} vs full {last_dev}"
    );
    assert!(tmp.path().join("design_curve.csv").exists());
    assert!(tmp.path().join("tau_curve.csv").exists());
}

#[test]
fn reruns_with_the_same_seed_are_byte_identical() {
    let tmp1 = tempfile::tempdir().unwrap();
    let tmp2 = tempfile::tempdir().unwrap();
    let args = [
        "choose", "design", "--n", "8", "--treated", "4", "--k", "2", "--mc-iters", "100",
        "--seed", "7",
    ];
    assert!(run(&args, tmp1.path()).status.success());
    assert!(run(&args, tmp2.path()).status.success());
    let a = std::fs::read(tmp1.path().join("result.json")).unwrap();
    let b = std::fs::read(tmp2.path().join("result.json")).unwrap();
    assert_eq!(a, b);
    let ca = std::fs::read(tmp1.path().join("curve.csv")).unwrap();
    let cb = std::fs::read(tmp2.path().join("curve.csv")).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn env_seed_is_the_fallback() {
    let tmp1 = tempfile::tempdir().unwrap();
    let tmp2 = tempfile::tempdir().unwrap();
    let args = [
        "choose", "design", "--n", "6", "--treated", "3", "--k", "1", "--mc-iters", "50",
    ];
    let run_env = |dir: &Path, seed: &str| {
        rerand()
            .args(args)
            .arg("--out-dir")
            .arg(dir)
            .env("RERAND_SEED", seed)
            .output()
            .unwrap()
    };
    assert!(run_env(tmp1.path(), "5").status.success());
    assert!(run_env(tmp2.path(), "6").status.success());
    let a = std::fs::read(tmp1.path().join("result.json")).unwrap();
    let b = std::fs::read(tmp2.path().join("result.json")).unwrap();
    assert_ne!(a, b, "different env seeds must change the result");
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = hours_csv(tmp.path());
    let out = run(
        &[
            "balance",
            "--data",
            data.to_str().unwrap(),
            "--treated",
            "4",
            "--metric",
            "m",
            "--pa",
            "0.5",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["subcommand"], "balance");
    let digests = manifest["input_digests"].as_array().unwrap();
    assert_eq!(digests.len(), 1);
    assert_eq!(digests[0]["sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .any(|o| o.as_str().unwrap().ends_with("result.json")));
}
