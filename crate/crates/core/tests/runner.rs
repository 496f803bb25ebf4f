mod common;

use std::path::Path;
use std::process::Command;

use mee_core::runner::{self, Divergence, RunError, RunPaths, TIMESERIES_HEADER};
use mee_core::{SimConfig, World};

fn small_config() -> SimConfig {
    let mut cfg = SimConfig::default();
    cfg.run.snapshot_every = 100;
    cfg
}

fn mee() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mee"))
}

#[test]
fn zero_ticks_writes_manifest_and_initial_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let s = runner::run(small_config(), dir.path(), Some(0), None).unwrap();
    assert_eq!((s.start_tick, s.end_tick), (0, 0));
    let paths = RunPaths::new(dir.path());
    assert!(paths.manifest().exists());
    assert_eq!(runner::snapshot_files(dir.path()).unwrap().len(), 1);
    assert_eq!(runner::read_hashes(dir.path()).unwrap().len(), 1);
}

#[test]
fn resume_matches_unbroken_run() {
    let cfg = small_config();
    let full = tempfile::tempdir().unwrap();
    runner::run(cfg.clone(), full.path(), Some(300), None).unwrap();
    let snap = runner::snapshot_files(full.path())
        .unwrap()
        .into_iter()
        .find(|p| p.to_string_lossy().contains("tick_00000100"))
        .expect("snapshot at tick 100");
    let rest = tempfile::tempdir().unwrap();
    let s = runner::resume(&snap, rest.path(), 200).unwrap();
    assert_eq!((s.start_tick, s.end_tick), (100, 300));

    let a = runner::read_hashes(full.path()).unwrap();
    let b = runner::read_hashes(rest.path()).unwrap();
    assert_eq!(b.len(), 201);
    let tail: Vec<_> = a.into_iter().filter(|(t, _)| *t >= 100).collect();
    assert_eq!(tail, b);
}

#[test]
fn state_is_independent_of_thread_count() {
    let hash = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut w = World::new(&SimConfig::default(), common::corpus()).unwrap();
            for _ in 0..300 {
                w.step();
            }
            w.state_hash()
        })
    };
    assert_eq!(hash(1), hash(4));
}

fn read_timeseries(dir: &Path) -> Vec<(u64, f64, Option<f64>)> {
    let mut r = csv::Reader::from_path(RunPaths::new(dir).timeseries()).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, TIMESERIES_HEADER);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (t, nf, h) = (col("tick"), col("noise_fraction"), col("mean_entropy"));
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let entropy = (!rec[h].is_empty()).then(|| rec[h].parse().unwrap());
            (rec[t].parse().unwrap(), rec[nf].parse().unwrap(), entropy)
        })
        .collect()
}

#[test]
fn analyzer_recomputes_the_runner_series() {
    let dir = tempfile::tempdir().unwrap();
    runner::run(small_config(), dir.path(), Some(250), None).unwrap();
    let data = runner::load_run(dir.path()).unwrap();
    let written = read_timeseries(dir.path());
    let recomputed: Vec<_> = data.series.iter().map(|m| (m.tick, m.noise_fraction, m.mean_entropy)).collect();
    assert_eq!(written, recomputed);
}

#[test]
fn single_run_reports_divergence_as_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    runner::run(small_config(), dir.path(), Some(50), None).unwrap();
    let report = runner::analyze(&[dir.path().to_path_buf()], dir.path()).unwrap();
    assert_eq!(report.path_divergence, Divergence::RequiresTwoRuns);
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("requires_two_runs"));
    assert!(dir.path().join("run0_series.csv").exists());
}

#[test]
fn identical_runs_have_equal_inter_and_intra_distance() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    runner::run(small_config(), a.path(), Some(100), Some(9)).unwrap();
    runner::run(small_config(), b.path(), Some(100), Some(9)).unwrap();
    let out = tempfile::tempdir().unwrap();
    let report = runner::analyze(&[a.path().to_path_buf(), b.path().to_path_buf()], out.path()).unwrap();
    let Divergence::Measured { pairs, all_satisfied } = report.path_divergence else {
        panic!("two runs must be measured");
    };
    assert_eq!(pairs.len(), 1);
    assert!((pairs[0].inter - pairs[0].intra).abs() < 1e-12, "{:?}", pairs[0]);
    assert!(!all_satisfied);
}

#[test]
fn missing_ledger_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    runner::run(small_config(), dir.path(), Some(20), None).unwrap();
    std::fs::remove_file(RunPaths::new(dir.path()).ledger(true)).unwrap();
    let err = runner::load_run(dir.path()).unwrap_err();
    assert!(matches!(err, RunError::Data(_)));
    assert_eq!(err.exit_code(), 3);

    let status = mee().arg("analyze").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn cli_validate_and_guard_exit_codes() {
    let ok = mee().args(["validate", "-c"]).arg(common::default_config_path()).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("worst margin"));

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SimConfig::default();
    cfg.physics.gamma = 0.85;
    let path = dir.path().join("low.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let out_dir = dir.path().join("run");
    let bad = mee().args(["run", "-t", "5", "-c"]).arg(&path).arg("-o").arg(&out_dir).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("GUARD-FAIL"));
    assert!(!out_dir.join("manifest.json").exists());
}

#[test]
fn cli_run_prints_final_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = mee().args(["run", "-t", "10", "-s", "3", "-o"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = runner::read_hashes(dir.path()).unwrap();
    assert!(stdout.contains(&summary.last().unwrap().1));
}
