use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hme::grid::{JointDensityGrid, LatticePoint};

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/paper_example.cfg")
}

fn hme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hme")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn one_step_hme_run_writes_well_formed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = hme(&["solve-hme", "--config", s(&bundled()), "--tau", "0.0001", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let grid = JointDensityGrid::read(&dir.path().join("hme_joint_tau0.0001.grid")).unwrap();
    assert!((grid.total_mass() - 1.0).abs() < 1e-6);

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_meta_solve-hme_tau0.0001.json")).unwrap())
            .unwrap();

    let marg = std::fs::read_to_string(dir.path().join("marginals_tau0.0001.csv")).unwrap();
    let mut rows = marg.lines();
    assert_eq!(rows.next(), Some("d,p,mean,var"));
    assert_eq!(rows.count() as u64, meta["results"]["slow_states"].as_u64().unwrap());

    let dom = std::fs::read_to_string(dir.path().join("domain_tau0.0001.csv")).unwrap();
    assert_eq!(dom.lines().next(), Some("d,c,origin"));
    assert!(dom.lines().skip(1).all(|l| l.ends_with(",initial") || l.ends_with(",expanded") || l.ends_with(",outside")));
    assert!(dom.lines().any(|l| l.ends_with(",initial")));
    assert_eq!(meta["status"], "complete");
    assert_eq!(meta["results"]["run"]["steps"], 1);
    assert_eq!(meta["config"]["solver"]["tau"], 0.0001);
    assert!(meta["results"]["maxent"]["max_iterations"].is_number());

    let leftovers = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".tmp"))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn diagnostics_file_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(bundled()).unwrap().replace("diagnostics = false", "diagnostics = true");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, text).unwrap();
    let out = hme(&["solve-hme", "--config", s(&cfg), "--tau", "0.001", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
    let diag = std::fs::read_to_string(dir.path().join("diagnostics_tau0.001.csv")).unwrap();
    assert_eq!(diag.lines().next(), Some("step,total_mass,domain_size,clamps"));
    assert_eq!(diag.lines().count(), 11);
}

#[test]
fn cme_and_ssa_runs_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let cfg = bundled();
    assert_eq!(code(&hme(&["solve-cme", "--config", s(&cfg), "--tau", "0.05", "--out", d])), 0);
    let ssa = hme(&["ssa", "--config", s(&cfg), "--tau", "0.05", "--out", d, "--n-traj", "2000", "--seed", "3"]);
    assert_eq!(code(&ssa), 0);

    let cme = dir.path().join("cme_joint_tau0.05.grid");
    let emp = dir.path().join("ssa_joint_tau0.05.grid");
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_meta_ssa_tau0.05.json")).unwrap()).unwrap();
    assert_eq!(meta["results"]["seed"], 3);
    assert_eq!(meta["results"]["n_traj"], 2000);
    assert!(meta["results"]["rng"].as_str().unwrap().starts_with("ChaCha8"));

    let same = hme(&["compare", s(&cme), s(&cme), "--max-tv", "0", "--out", d]);
    assert_eq!(code(&same), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("compare_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["total_variation"], 0.0);
    assert_eq!(report["passed"], true);

    let strict = hme(&["compare", s(&cme), s(&emp), "--max-tv", "1e-9", "--out", d]);
    assert_eq!(code(&strict), 4);
    assert!(String::from_utf8_lossy(&strict.stdout).contains("FAIL"));
    assert_eq!(code(&hme(&["compare", s(&cme), s(&emp), "--max-tv", "0.5", "--out", d])), 0);
}

#[test]
fn disjoint_grids_are_at_distance_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = JointDensityGrid::new(1.0, 1, 1);
    a.insert(LatticePoint::new(vec![0], vec![0]), 1.0);
    let mut b = JointDensityGrid::new(1.0, 1, 1);
    b.insert(LatticePoint::new(vec![1], vec![0]), 1.0);
    let (pa, pb) = (dir.path().join("a.grid"), dir.path().join("b.grid"));
    std::fs::write(&pa, a.to_text()).unwrap();
    std::fs::write(&pb, b.to_text()).unwrap();
    let out = hme(&["compare", s(&pa), s(&pb), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("total variation: 1.000000"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let missing = dir.path().join("nope.cfg");
    assert_eq!(code(&hme(&["solve-hme", "--config", s(&missing), "--out", d])), 2);

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[solver]\ntau = 1.0\n").unwrap();
    let out = hme(&["solve-cme", "--config", s(&bad), "--out", d]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("network.species"));

    assert_eq!(code(&hme(&["solve-hme", "--config", s(&bundled()), "--tau", "0", "--out", d])), 2);

    let garbage = dir.path().join("g.grid");
    std::fs::write(&garbage, "hello\n").unwrap();
    assert_eq!(code(&hme(&["compare", s(&garbage), s(&garbage), "--out", d])), 2);
}

#[test]
fn threshold_comes_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = JointDensityGrid::new(1.0, 1, 1);
    a.insert(LatticePoint::new(vec![0], vec![0]), 0.5);
    a.insert(LatticePoint::new(vec![0], vec![1]), 0.5);
    let mut b = JointDensityGrid::new(1.0, 1, 1);
    b.insert(LatticePoint::new(vec![0], vec![0]), 1.0);
    let (pa, pb) = (dir.path().join("a.grid"), dir.path().join("b.grid"));
    std::fs::write(&pa, a.to_text()).unwrap();
    std::fs::write(&pb, b.to_text()).unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, format!("{}\n[compare]\nmax_tv = 0.4\n", std::fs::read_to_string(bundled()).unwrap())).unwrap();
    let out = hme(&["compare", s(&pa), s(&pb), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&out), 4);
    let out = hme(&["compare", s(&pa), s(&pb), "--config", s(&cfg), "--max-tv", "0.5", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0);
}
