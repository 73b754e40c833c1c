use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluidgate"))
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn solve_reports_the_fluid_optimum() {
    let out = run(bin().arg("solve").arg(example("paper_nondegenerate.json")));
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["opt_d"].as_f64().unwrap() - 0.76).abs() < 1e-12);
    assert_eq!(v["nondegenerate"], true);
    assert_eq!(
        v["basis"],
        serde_json::json!(["y1", "y2", "y3", "z1", "z2"])
    );
}

#[test]
fn stability_flags_the_degenerate_example() {
    let out = run(bin().arg("stability").arg(example("paper_degenerate.json")));
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["degenerate"], true);
    assert!(v["L"].is_null());
    assert!((v["lambda_bar"].as_f64().unwrap() - 1.2).abs() < 1e-12);
}

#[test]
fn invalid_instance_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(example("paper_nondegenerate.json"))
        .unwrap()
        .replace("[0.3, 0.3, 0.4]", "[0.3, 0.3, 0.39]");
    let path = dir.path().join("bad.json");
    fs::write(&path, text).unwrap();
    let out = run(bin().arg("solve").arg(&path));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("distribution"));

    let out = run(bin().arg("solve").arg(dir.path().join("missing.json")));
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&run(bin().arg("frobnicate"))), 1);
    let out = run(bin()
        .args(["simulate", "--policy", "clairvoyant"])
        .arg(example("paper_nondegenerate.json")));
    assert_eq!(code(&out), 1);
    let dir = TempDir::new().unwrap();
    let out = run(bin()
        .args(["figure1", "--trials", "1", "--out-dir"])
        .arg(dir.path()));
    assert_eq!(code(&out), 1);
    let out = run(bin()
        .arg("solve")
        .arg(example("paper_nondegenerate.json"))
        .env("FLUIDGATE_THREADS", "zero"));
    assert_eq!(code(&out), 1);
    let out = run(bin()
        .args(["decompose", "--trials", "4", "--T", "50", "--out-dir"])
        .arg(dir.path())
        .arg(example("paper_degenerate.json")));
    assert_eq!(code(&out), 1);
}

#[test]
fn unwritable_output_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = run(bin()
        .args(["simulate", "--T", "20", "--out-dir"])
        .arg(blocker.join("sub"))
        .arg(example("paper_nondegenerate.json")));
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_writes_csv_and_trace() {
    let dir = TempDir::new().unwrap();
    let out = run(bin()
        .args([
            "simulate",
            "--T",
            "50",
            "--trials",
            "3",
            "--seed",
            "9",
            "--trace",
            "--policy",
            "adaptive-known",
            "--acceptance",
            "partial",
            "--unseen",
            "always-accept",
            "--out-dir",
        ])
        .arg(dir.path())
        .arg(example("paper_nondegenerate.json")));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("simulate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "T,trial,seed,reward_to_tau,reward_to_T,regret_fluid,regret_hindsight,tau,tau_S"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    // 17 significant digits in scientific notation.
    let reward = rows[0].split(',').nth(3).unwrap();
    assert_eq!(
        reward
            .split('e')
            .next()
            .unwrap()
            .replace(['-', '.'], "")
            .len(),
        17
    );
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,type,y_1,x_1,B_1,B_2,b_1,b_2,consumption_gap,lp_value"));
    assert_eq!(trace.lines().count(), 51);
    assert!(dir.path().join("simulate_summary.json").exists());
}

#[test]
fn sweep_compare_and_figure2_run() {
    let dir = TempDir::new().unwrap();
    let inst = example("paper_degenerate.json");
    let out = run(bin()
        .args([
            "sweep",
            "--T-grid",
            "20,40,80",
            "--trials",
            "3",
            "--out-dir",
        ])
        .arg(dir.path())
        .arg(&inst));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);

    let out = run(bin()
        .args([
            "compare",
            "--T",
            "30",
            "--trials",
            "4",
            "--first",
            "adaptive-known",
            "--out-dir",
        ])
        .arg(dir.path())
        .arg(&inst));
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["differences"]
        .as_array()
        .unwrap()
        .iter()
        .all(|d| d == 0.0));
    assert_eq!(v["claim_applies"], false);

    let out = run(bin()
        .args(["figure2", "--T", "40", "--trials", "10", "--out-dir"])
        .arg(dir.path()));
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["underpowered"], true);
    assert_eq!(v["differences"].as_array().unwrap().len(), 10);
    assert!(dir.path().join("figure2_paired.csv").exists());

    let out = run(bin()
        .args(["decompose", "--T", "60", "--trials", "5", "--out-dir"])
        .arg(dir.path())
        .arg(example("paper_nondegenerate.json")));
    assert_eq!(code(&out), 0);
}

#[test]
fn figure1_reruns_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let out = run(bin()
            .args([
                "figure1",
                "--T-grid",
                "50,100,200",
                "--trials",
                "6",
                "--out-dir",
            ])
            .arg(dir.path())
            .env("FLUIDGATE_THREADS", threads));
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["figure1_nondegenerate.csv", "figure1_degenerate.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
}
