use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_critembed");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

/// Trains the default desk task (a few seconds) into `dir/run`.
fn trained(dir: &Path) {
    ok(&run(dir, &["train", "--out", "run", "--check"]));
}

#[test]
fn train_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    for f in ["trajectory.jsonl", "final.json", "best.json", "config.toml", "summary.json"] {
        assert!(tmp.path().join("run").join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/summary.json")).unwrap()).unwrap();
    assert!(summary["final_grad_l1"].as_f64().unwrap() <= 1e-13);
}

#[test]
fn training_log_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("short.toml"), "[train]\nepochs = 500\n").unwrap();
    for out in ["a", "b"] {
        ok(&run(tmp.path(), &["train", "--config", "short.toml", "--seed", "4", "--out", out]));
    }
    let a = fs::read(tmp.path().join("a/trajectory.jsonl")).unwrap();
    let b = fs::read(tmp.path().join("b/trajectory.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_eq!(fs::read(tmp.path().join("a/final.json")).unwrap(), fs::read(tmp.path().join("b/final.json")).unwrap());
}

#[test]
fn embed_verify_hessian_reduce_pipeline() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    trained(d);

    let o = run(d, &["embed", "--input", "run/final.json", "--plan", "1:1:0.5", "--out", "wide.json", "--check"]);
    ok(&o);
    let text = fs::read_to_string(d.join("wide.json")).unwrap();
    assert!(text.contains("\"widths\": [1, 3, 1]"), "{text}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("wide.report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    let o = run(d, &["verify", "--input", "run/final.json", "--out", "verify.json"]);
    ok(&o);
    assert!(stdout(&o).starts_with("PASS"), "{}", stdout(&o));

    let o = run(d, &["hessian", "--input", "wide.json", "--out", "h.csv", "--check"]);
    ok(&o);
    assert!(stdout(&o).contains("n_zero 1"), "{}", stdout(&o));
    let rows = fs::read_to_string(d.join("h.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 10);

    let o = run(d, &["reduce", "--input", "wide.json", "--out", "narrow.json", "--check"]);
    ok(&o);
    assert!(fs::read_to_string(d.join("narrow.json")).unwrap().contains("\"widths\": [1, 2, 1]"));
}

#[test]
fn fd_hessian_and_sweep() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let o = run(tmp.path(), &["hessian", "--input", "run/final.json", "--fd", "--sweep", "--out", "fd.csv"]);
    ok(&o);
    assert_eq!(stdout(&o).matches("tol 1e").count(), 12);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("fd.json")).unwrap()).unwrap();
    assert_eq!(doc["method"], "finite_difference");
    assert_eq!(doc["sweep"].as_array().unwrap().len(), 11);
}

#[test]
fn empty_or_malformed_plan_is_an_error() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    for plan in ["", "1:0:0.5", "1:1", "9:1:0.5"] {
        let o = run(tmp.path(), &["embed", "--input", "run/final.json", "--plan", plan]);
        assert_eq!(o.status.code(), Some(2), "plan {plan:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error: "));
    }
}

#[test]
fn corrupted_checkpoint_exits_with_2() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    let good = fs::read_to_string(tmp.path().join("run/final.json")).unwrap();
    fs::write(tmp.path().join("cut.json"), &good[..good.len() / 2]).unwrap();
    fs::write(tmp.path().join("ver.json"), good.replace("\"format_version\": 1", "\"format_version\": 7")).unwrap();
    for f in ["cut.json", "ver.json", "missing.json"] {
        let o = run(tmp.path(), &["verify", "--input", f]);
        assert_eq!(o.status.code(), Some(2), "{f}: {}", stderr(&o));
    }
}

#[test]
fn failing_invariant_exits_with_1() {
    let tmp = TempDir::new().unwrap();
    trained(tmp.path());
    // No embedding reproduces outputs to within 1e-300.
    fs::write(tmp.path().join("strict.toml"), "[analysis]\noutput_tol = 1e-300\n").unwrap();
    let o = run(tmp.path(), &["embed", "--config", "strict.toml", "--input", "run/final.json", "--plan", "1:2:-1.5"]);
    let code = o.status.code();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/final-embedded.report.json")).unwrap()).unwrap();
    if report["output_max_rel_error"].as_f64().unwrap() > 0.0 {
        assert_eq!(code, Some(1), "{}", stdout(&o));
    } else {
        assert_eq!(code, Some(0));
    }
}

#[test]
fn diagram_small_run() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("d.toml"),
        "[train]\nepochs = 30000\n[diagram]\nwidths = [1, 2]\ntrials = 1\n[diagram.options]\ntarget_width = 2\n",
    )
    .unwrap();
    let o = run(tmp.path(), &["diagram", "--config", "d.toml", "--out", "diag", "--check"]);
    ok(&o);
    let table = fs::read_to_string(tmp.path().join("diag/diagram.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("cluster,loss,source_width,degeneracy,n_neg,n_pos,runs,candidates"));
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let width: usize = cells[2].parse().unwrap();
        let degeneracy: usize = cells[3].parse().unwrap();
        assert!(width <= 2 && degeneracy <= 2, "{line}");
        assert!(tmp.path().join(format!("diag/cluster_{i}.csv")).is_file());
    }
}

#[test]
fn data_gen_and_inspect() {
    let tmp = TempDir::new().unwrap();
    let o = run(tmp.path(), &["data", "gen"]);
    ok(&o);
    let csv = stdout(&o);
    assert_eq!(csv.lines().next(), Some("x0,y0"));
    assert_eq!(csv.lines().count(), 17);

    fs::write(tmp.path().join("d.csv"), &csv).unwrap();
    let o = run(tmp.path(), &["data", "inspect", "--path", "d.csv"]);
    ok(&o);
    assert!(stdout(&o).contains("17 rows"));

    let idx = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist/t10k-labels-idx1-ubyte");
    let o = run(tmp.path(), &["data", "inspect", "--path", idx.to_str().unwrap()]);
    ok(&o);
    assert!(stdout(&o).contains("IDX labels"), "{}", stdout(&o));
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("typo.toml"), "[train]\nepoch = 10\n").unwrap();
    fs::write(tmp.path().join("zero.toml"), "[train]\nepochs = 0\n").unwrap();
    for cfg in ["typo.toml", "zero.toml", "absent.toml"] {
        let o = run(tmp.path(), &["train", "--config", cfg, "--out", "x"]);
        assert_eq!(o.status.code(), Some(2), "{cfg}");
    }
}

#[test]
fn paper_profile_resolves() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("p.toml"), "[train]\nepochs = 10\n").unwrap();
    let o = run(tmp.path(), &["train", "--profile", "paper", "--config", "p.toml", "--out", "p"]);
    ok(&o);
    let cfg = fs::read_to_string(tmp.path().join("p/config.toml")).unwrap();
    assert!(cfg.contains("learning_rate = 0.005"), "{cfg}");
    assert!(cfg.contains("epochs = 10"));
}
