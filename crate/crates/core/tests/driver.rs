use std::path::Path;
use std::process::Command;

use granubed::bench::{ATS_HEADER, SIZES_HEADER};
use granubed::driver::{run, RunOptions, DIAGNOSTICS_HEADER, TIMINGS_HEADER};
use granubed::SimConfig;

fn small(t_end: f64) -> SimConfig {
    SimConfig { n_particles: Some(2000), t_end, ..SimConfig::default() }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_granubed"))
}

#[test]
fn zero_end_time_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run(&small(0.0), &RunOptions { out_dir: Some(dir.path().into()), write_particles: false }).unwrap();
    assert!(rep.timings.is_empty());
    assert_eq!(rep.substeps, 0);
    assert_eq!(read(&dir.path().join("timings.csv")), format!("{TIMINGS_HEADER}\n"));
    assert_eq!(read(&dir.path().join("diagnostics.csv")), format!("{DIAGNOSTICS_HEADER}\n"));
}

#[test]
fn same_seed_gives_identical_diagnostics() {
    let cfg = small(6e-4);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&cfg, &RunOptions { out_dir: Some(a.path().into()), write_particles: true }).unwrap();
    run(&cfg, &RunOptions { out_dir: Some(b.path().into()), write_particles: true }).unwrap();
    let da = read(&a.path().join("diagnostics.csv"));
    assert_eq!(da.lines().count(), 4);
    assert_eq!(da, read(&b.path().join("diagnostics.csv")));
    assert_eq!(read(&a.path().join("particles.csv")), read(&b.path().join("particles.csv")));
    // the non-wall-clock timing columns agree as well
    let cols = |s: String| s.lines().map(|l| l.split(',').take(4).collect::<Vec<_>>().join(",")).collect::<Vec<_>>();
    assert_eq!(cols(read(&a.path().join("timings.csv"))), cols(read(&b.path().join("timings.csv"))));
}

#[test]
fn timings_cover_the_phases() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run(&small(6e-4), &RunOptions { out_dir: Some(dir.path().into()), write_particles: false }).unwrap();
    for t in &rep.timings {
        assert!(t.n_substeps > 0);
        assert!(t.w_total >= 0.95 * t.phase_sum(), "{t:?}");
        for w in [t.w_fluid, t.w_drag, t.w_neighbor, t.w_collide, t.w_integrate, t.w_ghost, t.w_redist, t.w_deposit] {
            assert!(w >= 0.0);
        }
    }
    let text = read(&dir.path().join("timings.csv"));
    for (line, t) in text.lines().skip(1).zip(&rep.timings) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cols.iter().all(|c| c.is_finite()));
        assert_eq!(cols[3] as usize, t.n_substeps);
    }
}

#[test]
fn ats_takes_fewer_substeps_on_the_desk_case() {
    let cfg = SimConfig { t_end: 4e-4, ..SimConfig::default() };
    let off = run(&cfg, &RunOptions::default()).unwrap();
    let on = run(&SimConfig { ats: true, ..cfg }, &RunOptions::default()).unwrap();
    assert_eq!(off.timings.len(), on.timings.len());
    assert!(on.substeps < off.substeps, "ats {} vs fixed {}", on.substeps, off.substeps);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.cfg");
    std::fs::write(&good, "n_particles = 500\nt_end = 0\n").unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let diverge = dir.path().join("diverge.cfg");
    std::fs::write(&diverge, "n_particles = 500\nt_end = 2e-4\npoisson_max_iters = 1\n").unwrap();

    let status = |args: &[&str]| bin().args(args).output().unwrap().status.code();
    assert_eq!(status(&["validate", "--config", good.to_str().unwrap()]), Some(0));
    assert_eq!(status(&["validate", "--config", bad.to_str().unwrap()]), Some(2));
    assert_eq!(status(&["validate", "--config", "/nonexistent.cfg"]), Some(2));
    assert_eq!(status(&["run", "--config", good.to_str().unwrap(), "--ranks", "0"]), Some(2));
    let out = dir.path().join("out");
    assert_eq!(status(&["run", "--config", good.to_str().unwrap(), "--ranks", "2", "--ats", "on", "--out", out.to_str().unwrap()]), Some(0));
    assert_eq!(read(&out.join("timings.csv")), format!("{TIMINGS_HEADER}\n"));
    assert_eq!(status(&["run", "--config", diverge.to_str().unwrap()]), Some(3));
}

#[test]
fn cli_bench_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("case.cfg");
    std::fs::write(&cfg, "n_particles = 500\n").unwrap();
    let out = dir.path().join("reports");
    let ok = bin()
        .args(["bench", "ats", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--duration", "2e-4"])
        .status()
        .unwrap();
    assert!(ok.success());
    let ats = read(&out.join("ats.csv"));
    assert_eq!(ats.lines().next(), Some(ATS_HEADER));
    assert!(ats.lines().nth(1).unwrap().starts_with("case,"));
    let ok = bin()
        .args(["bench", "sizes", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--max-factor", "2", "--duration", "2e-5"])
        .status()
        .unwrap();
    assert!(ok.success());
    let sizes = read(&out.join("sizes.csv"));
    assert_eq!(sizes.lines().next(), Some(SIZES_HEADER));
    assert_eq!(sizes.lines().count(), 3);
}
