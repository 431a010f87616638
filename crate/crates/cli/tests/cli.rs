use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vmpfc::io::{read_series_file, read_snapshot, SERIES_HEADER};
use vmpfc::sim::{build_initial, InitialCondition};
use vmpfc::Grid;

const BASE: &str = r#"
[grid]
dim = 2
n = 16
L = 32.0

[model]
epsilon = 0.9
alpha = 0.01
beta = 1.0
h_vac = 500.0

[scheme]
kind = "ssav"
S = 50.0
"#;

const RANDOM: &str = r#"
[initial]
kind = "random"
mean = 0.06
amplitude = 0.05
seed = 9
"#;

fn vmpfc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmpfc"))
        .args(args)
        .env_remove("VMPFC_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Case {
    dir: tempfile::TempDir,
}

impl Case {
    fn new() -> Case {
        Case::with_initial(RANDOM)
    }

    fn with_initial(initial: &str) -> Case {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.toml"), format!("{BASE}{initial}")).unwrap();
        Case { dir }
    }

    fn config(&self) -> String {
        self.dir.path().join("c.toml").display().to_string()
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, cmd: &str, sets: &[&str]) -> Output {
        let cfg = self.config();
        let out = self.out().display().to_string();
        let mut args = vec![cmd, "--config", &cfg, "--out", &out];
        for s in sets {
            args.push("--set");
            args.push(s);
        }
        vmpfc(&args)
    }
}

#[test]
fn zero_horizon_run_writes_only_the_initial_row() {
    let c = Case::new();
    let o = c.run("run", &["time.T=0", "time.dt=0.1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(c.out().join("series.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert_eq!(lines[0], SERIES_HEADER);
    let recs = read_series_file(&c.out().join("series.csv")).unwrap();
    assert_eq!((recs[0].t, recs[0].dt), (0.0, 0.0));
    assert!(!c.out().join(".vmpfc.lock").exists());
    assert!(!c.out().join("error.txt").exists());
}

#[test]
fn run_writes_series_and_snapshots() {
    let c = Case::new();
    let o = c.run(
        "run",
        &[
            "time.T=5",
            "time.dt=0.5",
            "output.record_every=1",
            "output.snapshot_times=[0, 2.5]",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = read_series_file(&c.out().join("series.csv")).unwrap();
    assert_eq!(recs.len(), 11);
    assert!((recs.last().unwrap().t - 5.0).abs() < 1e-12);

    // The t = 0 snapshot is the initial condition, bit for bit.
    let (phi, meta) = read_snapshot(&c.out().join("phi_t0.f64")).unwrap();
    let g = Grid::uniform(2, 16, 32.0).unwrap();
    let ic = InitialCondition::Random {
        mean: 0.06,
        amplitude: 0.05,
        seed: 9,
    };
    let (phi0, _) = build_initial(&ic, &g).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(phi.values()), bits(phi0.values()));
    assert_eq!(
        (meta.dim, meta.n.clone(), meta.scheme.as_str()),
        (2, vec![16, 16], "ssav")
    );

    let (_, meta) = read_snapshot(&c.out().join("phi_t2.5.f64")).unwrap();
    assert!((meta.t - 2.5).abs() < 1e-12);
    assert!(c.out().join("config.toml").exists());
}

#[test]
fn stabilized_run_has_a_monotone_discrete_energy() {
    let c = Case::new();
    let o = c.run("run", &["time.T=20", "time.dt=1", "output.record_every=1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = read_series_file(&c.out().join("series.csv")).unwrap();
    for w in recs.windows(2).skip(1) {
        assert!(w[1].e_discrete <= w[0].e_discrete + 1e-9 * w[0].e_discrete.abs());
    }
    let series = c.out().join("series.csv").display().to_string();
    let v = vmpfc(&["verify-series", &series, "--energy"]);
    assert_eq!(code(&v), 0, "{}{}", stdout(&v), stderr(&v));
}

#[test]
fn adaptive_run_and_step_ratio_replay() {
    let c = Case::new();
    let o = c.run(
        "run",
        &[
            "time.T=3",
            "time.controller=evma",
            "adaptive.dt_max=0.5",
            "adaptive.alpha1=10",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let recs = read_series_file(&c.out().join("series.csv")).unwrap();
    assert_eq!(recs[1].dt, 1e-4);
    assert!(recs.iter().any(|r| r.dt > 1e-2));
    let series = c.out().join("series.csv").display().to_string();
    let v = vmpfc(&["verify-series", &series, "--ratio-max", "1.5"]);
    assert_eq!(code(&v), 0, "{}", stdout(&v));
    // A tighter bound than the controller used must be reported.
    let v = vmpfc(&["verify-series", &series, "--ratio-max", "1.01"]);
    assert_eq!(code(&v), 5, "{}", stdout(&v));
}

#[test]
fn converge_smoke_list_has_two_rates() {
    let c = Case::new();
    let o = c.run(
        "converge",
        &[
            "model.h_vac=0",
            "model.epsilon=0.025",
            "model.alpha=1",
            "scheme.S=1",
            "grid.L=128",
            "converge.T=0.2",
            "converge.dt_list=[0.02, 0.01, 0.005]",
        ],
    );
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let text = fs::read_to_string(c.out().join("convergence.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(text.lines().next(), Some("dt,error,rate"));
    assert_eq!(rows.len(), 3);
    assert!(rows[0][2].is_nan());
    for r in &rows[1..] {
        assert!(r[2].is_finite() && (r[2] - 2.0).abs() < 0.2, "{text}");
    }
}

#[test]
fn converge_gate_fails_outside_the_bounds() {
    let c = Case::new();
    let o = c.run(
        "converge",
        &[
            "model.h_vac=0",
            "scheme.S=1",
            "converge.T=0.1",
            "converge.dt_list=[0.02, 0.01, 0.005]",
            "converge.rate_min=3",
            "converge.rate_max=4",
        ],
    );
    assert_eq!(code(&o), 5, "{}{}", stdout(&o), stderr(&o));
    assert!(c.out().join("convergence.csv").exists());
}

#[test]
fn adapt_compare_writes_summary_and_series() {
    let c = Case::new();
    let o = c.run(
        "adapt-compare",
        &[
            "time.T=2",
            "adaptive.dt_max=0.5",
            "adaptive.alpha1=10",
            "legacy.alpha1=1000",
            "compare.fixed_dt=0.05",
        ],
    );
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let text = fs::read_to_string(c.out().join("summary.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "controller,steps,wall_seconds");
    let labels: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(labels, ["evma", "legacy", "fixed"]);
    let steps = |i: usize| {
        lines[i]
            .split(',')
            .nth(1)
            .unwrap()
            .parse::<usize>()
            .unwrap()
    };
    assert_eq!(steps(3), 40);
    assert!(steps(1) <= steps(3));
    for l in &lines[1..] {
        l.split(',').nth(2).unwrap().parse::<f64>().unwrap();
    }
    for name in ["series_evma.csv", "series_legacy.csv", "series_fixed.csv"] {
        let recs = read_series_file(&c.out().join(name)).unwrap();
        assert!((recs.last().unwrap().t - 2.0).abs() < 1e-12, "{name}");
    }
}

#[test]
fn info_reports_initial_auxiliary_values() {
    let c = Case::with_initial("");
    let o = c.run("info", &[]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert!(s.lines().any(|l| l == "u0 = 100"), "{s}");
    assert!(s.contains("B0 = 1"), "{s}");

    let o = Case::new().run("info", &["scheme.C=1e-3", "time.dt=0.1"]);
    let s = stdout(&o);
    assert_eq!(code(&o), 0);
    assert!(s.contains("suggested C >="), "{s}");
    assert!(
        s.contains("CN symbol at dt = 0.1") && s.contains("positive"),
        "{s}"
    );

    let o = c.run(
        "info",
        &[
            "initial.kind=constant",
            "initial.value=0.5",
            "model.h_vac=0",
            "model.epsilon=1",
            "scheme.b=1",
        ],
    );
    let s = stdout(&o);
    assert!(
        s.contains("u0 undefined") && s.contains("suggested b >"),
        "{s}"
    );
}

#[test]
fn info_lists_crystallite_orientations() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/crystal_growth.toml");
    let o = vmpfc(&[
        "info",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "grid.n=256",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    let patches: Vec<&str> = s.lines().filter(|l| l.starts_with("patch ")).collect();
    assert_eq!(patches.len(), 3, "{s}");
    assert!(patches[0].contains("(0.0 deg)"));
    assert!(patches[1].contains("(-45.0 deg)"));
    assert!(patches[2].contains("(45.0 deg)"));
}

#[test]
fn exit_codes() {
    let c = Case::new();
    assert_eq!(code(&c.run("run", &["model.gamma=1"])), 2);
    assert_eq!(code(&c.run("run", &["time.T=1"])), 2);
    assert_eq!(code(&vmpfc(&["run", "--config", "/nonexistent/c.toml"])), 2);
    assert_eq!(code(&vmpfc(&["frobnicate"])), 2);
    assert_eq!(code(&c.run("info", &[])), 0);

    let file = c.dir.path().join("plain");
    fs::write(&file, "x").unwrap();
    let cfg = c.config();
    let o = vmpfc(&[
        "run",
        "--config",
        &cfg,
        "--out",
        file.to_str().unwrap(),
        "--set",
        "time.T=0",
        "--set",
        "time.dt=1",
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let bad = c.dir.path().join("bad.csv");
    fs::write(&bad, "t,dt,mass\n0,0,0\n").unwrap();
    assert_eq!(code(&vmpfc(&["verify-series", bad.to_str().unwrap()])), 4);
    assert_eq!(
        code(&vmpfc(&[
            "--threads",
            "0",
            "verify-series",
            bad.to_str().unwrap()
        ])),
        2
    );
}

#[test]
fn numerical_failure_keeps_partial_output() {
    let c = Case::with_initial("");
    // A shift b far too small for the negative double-well integral.
    let o = c.run(
        "run",
        &[
            "initial.kind=constant",
            "initial.value=0.5",
            "model.h_vac=0",
            "model.epsilon=1",
            "scheme.b=1",
            "time.T=1",
            "time.dt=0.1",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let err = fs::read_to_string(c.out().join("error.txt")).unwrap();
    assert!(err.contains("increase the radicand shift b"), "{err}");
    let text = fs::read_to_string(c.out().join("series.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(SERIES_HEADER));

    // A clean rerun in the same directory removes the stale error file.
    let o = c.run("run", &["time.T=0", "time.dt=1"]);
    assert_eq!(code(&o), 0);
    assert!(!c.out().join("error.txt").exists());
}

#[test]
fn locked_output_directory_is_refused() {
    let c = Case::new();
    fs::create_dir_all(c.out()).unwrap();
    fs::write(c.out().join(".vmpfc.lock"), "1\n").unwrap();
    let o = c.run("run", &["time.T=0", "time.dt=1"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
    assert!(!c.out().join("series.csv").exists());
}

#[test]
fn tampered_series_fails_verification() {
    let c = Case::new();
    assert_eq!(
        code(&c.run("run", &["time.T=2", "time.dt=0.5", "output.record_every=1"])),
        0
    );
    let path = c.out().join("series.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[3].split(',').map(String::from).collect();
    cols[2] = "0.5".into();
    lines[3] = cols.join(",");
    fs::write(&path, lines.join("\n")).unwrap();
    let o = vmpfc(&["verify-series", path.to_str().unwrap()]);
    assert_eq!(code(&o), 5);
    assert!(stdout(&o).contains("mass"), "{}", stdout(&o));
}

#[test]
fn thread_count_from_the_environment() {
    let c = Case::new();
    let o = Command::new(env!("CARGO_BIN_EXE_vmpfc"))
        .args(["run", "--config", &c.config(), "--out"])
        .arg(c.out())
        .args(["--set", "time.T=1", "--set", "time.dt=0.5"])
        .env("VMPFC_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_vmpfc"))
        .args(["info", "--config", &c.config()])
        .env("VMPFC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn identical_runs_give_identical_series() {
    let a = Case::new();
    let b = Case::new();
    let sets = ["time.T=3", "time.controller=evma", "adaptive.dt_max=0.5"];
    assert_eq!(code(&a.run("run", &sets)), 0);
    assert_eq!(code(&b.run("run", &sets)), 0);
    let ra = fs::read(a.out().join("series.csv")).unwrap();
    let rb = fs::read(b.out().join("series.csv")).unwrap();
    assert_eq!(ra, rb);
}
