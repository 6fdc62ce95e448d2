use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparbo_core::field::FieldFile;
use sparbo_core::planner::read_trace;
use sparbo_core::raster::Raster;
use sparbo_core::{ModelConfig, PriorMode, SparModel};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sparbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparbo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Heart map shifted and rescaled, written as a field file without regions.
fn write_truth(dir: &Path) -> PathBuf {
    let mut file = FieldFile::load(configs().join("heart.json")).unwrap();
    for p in &mut file.peaks {
        p.cx += 0.01;
        p.cy -= 0.005;
        p.amplitude *= 0.9;
    }
    file.regions.clear();
    let path = dir.join("truth.json");
    std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
    path
}

#[test]
fn plan_posterior_grid_matches_model() {
    let dir = tempfile::tempdir().unwrap();
    let truth = write_truth(dir.path());
    let heart = configs().join("heart.json");
    let trace = dir.path().join("trace.csv");
    let grid = dir.path().join("posterior.grid");
    let json = dir.path().join("result.json");
    ok(sparbo(&[
        "plan", "--field", s(&heart), "--truth", s(&truth), "--prior-mode", "spar", "--acq", "ei",
        "--n-max", "4", "--alpha", "1e-8", "--likelihood-sigma", "0.2", "--trace", s(&trace),
        "--posterior-grid", s(&grid), "--posterior-step", "0.005", "--result-json", s(&json),
    ]));

    let records = read_trace(&trace).unwrap();
    assert_eq!(records.len(), 16);
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(result["total_observations"], 16);

    // Rebuild the model from the trace.
    let reference = FieldFile::load(&heart).unwrap().field().unwrap();
    let mut config = ModelConfig::default();
    config.kernel.noise_variance = 1e-8;
    config.likelihood_sigma = Some(0.2);
    let mut model = SparModel::new(reference, &config, PriorMode::Spar).unwrap();
    for r in &records {
        model.update(r.location, r.quality).unwrap();
        let th = model.theta();
        assert_eq!(th, r.theta_after);
    }

    let raster = Raster::parse(std::io::BufReader::new(std::fs::File::open(&grid).unwrap())).unwrap();
    let g = raster.grid;
    let mut matched = 0;
    for r in &records {
        let col = ((r.location.x - g.xmin) / g.step).round() as usize;
        let row = ((r.location.y - g.ymin) / g.step).round() as usize;
        let cell = g.cell(row, col);
        if cell.distance(r.location) > 1e-9 {
            continue;
        }
        matched += 1;
        let mean = raster.value("mean", row, col).unwrap();
        let std = raster.value("std", row, col).unwrap();
        let (m, sd) = model.predict(cell);
        assert!((mean - m).abs() < 1e-12 && (std - sd).abs() < 1e-12);
        assert!((mean - r.quality).abs() < 1e-4, "{mean} vs {}", r.quality);
    }
    assert!(matched >= 12, "only {matched} observations fell on raster cells");
}

#[test]
fn replay_reproduces_plan_trace() {
    let dir = tempfile::tempdir().unwrap();
    let truth = write_truth(dir.path());
    let heart = configs().join("heart.json");
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    let common = ["--prior-mode", "spar", "--acq", "ucb1", "--n-max", "5"];
    let mut plan = vec!["plan", "--field", s(&heart), "--truth", s(&truth), "--trace", s(&first)];
    plan.extend(common);
    ok(sparbo(&plan));
    let mut replay = vec!["replay", "--field", s(&heart), "--trace", s(&first), "--out", s(&second)];
    replay.extend(common);
    ok(sparbo(&replay));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    // A different acquisition asks for points the trace never recorded.
    let third = dir.path().join("third.csv");
    let out = sparbo(&[
        "replay", "--field", s(&heart), "--trace", s(&first), "--out", s(&third), "--prior-mode",
        "zero", "--acq", "ucb1.5", "--n-max", "5",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no recorded observation"));
    assert!(read_trace(&third).unwrap().len() < 20);
}

#[test]
fn plan_with_random_perturbation_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let heart = configs().join("heart.json");
    let run = |name: &str, seed: &str| {
        let path = dir.path().join(name);
        ok(sparbo(&[
            "plan", "--field", s(&heart), "--n-max", "3", "--seed", seed, "--noise-std", "0.05",
            "--trace", s(&path),
        ]));
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.csv", "3"), run("b.csv", "3"));
    assert_ne!(run("a.csv", "3"), run("c.csv", "4"));
}

#[test]
fn field_grid_peak_cells() {
    let dir = tempfile::tempdir().unwrap();
    let heart = configs().join("heart.json");
    let out = dir.path().join("truth.grid");
    ok(sparbo(&["field", "grid", "--field", s(&heart), "--step", "0.005", "--out", s(&out)]));
    let raster = Raster::parse(std::io::BufReader::new(std::fs::File::open(&out).unwrap())).unwrap();
    let file = FieldFile::load(&heart).unwrap();
    let g = raster.grid;
    for p in &file.peaks {
        let col = ((p.cx - g.xmin) / g.step).round() as usize;
        let row = ((p.cy - g.ymin) / g.step).round() as usize;
        let v = raster.value("quality", row, col).unwrap();
        assert!((v - p.amplitude).abs() < 1e-6, "{v} vs {}", p.amplitude);
    }
    let max = raster.layer("quality").unwrap().iter().cloned().fold(0.0, f64::max);
    assert!(max <= 0.85 + 1e-12);

    let boxed = dir.path().join("box.grid");
    ok(sparbo(&[
        "field", "grid", "--field", s(&heart), "--step", "0.01", "--bounds", "-0.1,0.1,-0.1,0.1",
        "--out", s(&boxed),
    ]));
    let raster = Raster::parse(std::io::BufReader::new(std::fs::File::open(&boxed).unwrap())).unwrap();
    assert_eq!((raster.grid.rows(), raster.grid.cols()), (21, 21));
}

#[test]
fn simulate_writes_csv_to_stdout() {
    let out = ok(sparbo(&[
        "simulate", "--config", s(&configs().join("physical.json")), "--trials", "4", "--seed", "2",
    ]));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "acquisition,beta,prior_mode,n_max,mean,stderr,trials,failures"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("ei,,spar,4,"));
    assert!(rows[0].ends_with(",4,0"));
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"field": "heart.json", "trials": 3, "bogus": 1}"#).unwrap();
    let out = sparbo(&["simulate", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = sparbo(&["field", "grid", "--field", "/nonexistent.json", "--out", "/tmp/x.grid"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn shipped_configs_load() {
    for name in ["table1.json", "physical.json"] {
        let cfg = sparbo_core::ExperimentConfig::load(configs().join(name)).unwrap();
        cfg.validate().unwrap();
        let file = cfg.field_file().unwrap();
        assert_eq!(file.regions.len(), 4);
    }
}
