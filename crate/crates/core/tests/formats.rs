use std::path::Path;

use proptest::prelude::*;

use hme::config::load_config;
use hme::grid::{JointDensityGrid, LatticePoint};
use hme::output::{domain_csv, marginals_csv};
use hme::pipeline::solve_hme;

fn short_run() -> hme::pipeline::HmeRun {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/paper_example.cfg");
    let cfg = load_config(&path).unwrap().with_tau(0.05).unwrap();
    solve_hme(&cfg, None).unwrap()
}

#[test]
fn grid_rows_are_lexicographic() {
    let run = short_run();
    let text = run.joint.to_text();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# hme-grid v1 tau=0.05 total_mass="));
    assert_eq!(lines.next(), Some("d,c,p"));
    let keys: Vec<(i64, i64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    assert!(!text.contains('\r'));
}

#[test]
fn written_grid_reads_back_identically() {
    let run = short_run();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.grid");
    std::fs::write(&path, run.joint.to_text()).unwrap();
    let back = JointDensityGrid::read(&path).unwrap();
    assert_eq!(back.len(), run.joint.len());
    for (pt, p) in run.joint.iter() {
        assert_eq!(back.get(pt).to_bits(), p.to_bits());
    }
}

#[test]
fn marginal_and_domain_tables_agree_with_the_run() {
    let run = short_run();
    let marg = marginals_csv(&run.outcome.field);
    let total: f64 = marg.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - run.outcome.stats.final_total_mass).abs() < 1e-12);

    let dom = domain_csv(&run.outcome.domain);
    let members = dom.lines().skip(1).filter(|l| !l.ends_with(",outside")).count();
    assert_eq!(members, run.outcome.domain.points().len());
    assert_eq!(dom.lines().count() - 1, run.outcome.domain.omega_points().len());
    for (pt, _) in run.joint.iter() {
        let row = format!("\n{},{},", pt.d[0], pt.c[0]);
        let line = dom.split(&row).nth(1).unwrap().lines().next().unwrap();
        assert_ne!(line, "outside");
    }
}

proptest! {
    #[test]
    fn multi_dim_round_trip(cells in proptest::collection::vec(((0i64..5, 0i64..5), (0i64..5, 0i64..5), 1e-300f64..1.0), 1..40)) {
        let mut g = JointDensityGrid::new(0.25, 2, 2);
        for ((a, b), (c, d), p) in cells {
            g.insert(LatticePoint::new(vec![a, b], vec![c, d]), p);
        }
        let back = JointDensityGrid::parse(&g.to_text(), Path::new("mem")).unwrap();
        prop_assert_eq!(back.slow_dims(), 2);
        prop_assert_eq!(back.fast_dims(), 2);
        for (pt, p) in g.iter() {
            prop_assert_eq!(back.get(pt).to_bits(), p.to_bits());
        }
    }
}
