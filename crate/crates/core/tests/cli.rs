use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mmflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmflow")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Parse a CSV written by the tool: schema line, header, rows.
fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# schema=1"), "{}", path.display());
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    for r in &rows {
        assert_eq!(r.len(), header.len(), "{}: ragged row {r:?}", path.display());
    }
    (header, rows)
}

const GRAVITY: &str = "medium.preset = gravity-column\ngrid.nx = 12\nmedium.phases = 2\ncapillary.c = 1\n\
                       run.tau = 0.05\nrun.steps = 3\nsolver.mode = exact\n";

#[test]
fn gravity_preset_outputs_follow_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.cfg", GRAVITY);
    let out = dir.path().join("out");
    let res = mmflow(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    for n in 0..=3 {
        let (header, rows) = read_table(&out.join(format!("state_{n}.csv")));
        assert_eq!(header, ["cell", "x", "s_0", "s_1", "p_0", "p_1", "pi_1"]);
        assert_eq!(rows.len(), 12);
        for r in &rows {
            let s: f64 = r[2].parse::<f64>().unwrap() + r[3].parse::<f64>().unwrap();
            assert!((s - 0.5).abs() < 1e-12, "saturation {s}");
            if n > 0 {
                let cap = r[5].parse::<f64>().unwrap() - r[4].parse::<f64>().unwrap() - r[6].parse::<f64>().unwrap();
                assert!(cap.abs() < 1e-12);
            }
        }
    }
    assert!(!out.join("state_4.csv").exists());

    let (header, rows) = read_table(&out.join("diagnostics.csv"));
    assert_eq!(header[..3], ["step", "energy", "w2"]);
    assert!(header.contains(&"weak_x^2".to_string()) && header.contains(&"dissipation".to_string()));
    assert_eq!(rows.len(), 3);
    let energies: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0]));
    for r in &rows {
        for v in r {
            assert!(v.parse::<f64>().is_ok(), "non-numeric entry {v}");
        }
    }

    let (header, rows) = read_table(&out.join("summary.csv"));
    assert_eq!(header, ["check", "value", "bound", "status"]);
    assert!(rows.iter().all(|r| r[3] != "fail"), "{rows:?}");
    for name in ["mass_drift", "capillary_residual", "total_square_distance", "holder_constant", "weak_form_total"] {
        assert!(rows.iter().any(|r| r[0] == name), "missing {name}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.cfg", GRAVITY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        assert!(mmflow(&["run", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]).status.success());
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn zero_horizon_writes_only_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.cfg", &GRAVITY.replace("run.steps = 3", "run.horizon = 0"));
    let out = dir.path().join("out");
    assert!(mmflow(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    assert!(out.join("state_0.csv").exists());
    assert!(!out.join("state_1.csv").exists());
    let (_, rows) = read_table(&out.join("diagnostics.csv"));
    assert!(rows.is_empty());
}

#[test]
fn single_phase_run_is_constant_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "one.cfg",
        "grid.nx = 6\nmedium.phases = 1\nmedium.porosity = 0.3\nmedium.densities = 2\nmedium.gravity = 1\n\
         run.tau = 0.1\nrun.steps = 2\n",
    );
    let out = dir.path().join("out");
    let res = mmflow(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let (_, s0) = read_table(&out.join("state_0.csv"));
    let (_, s2) = read_table(&out.join("state_2.csv"));
    for (a, b) in s0.iter().zip(&s2) {
        assert_eq!(a[2], b[2]);
    }
    let (_, summary) = read_table(&out.join("summary.csv"));
    assert!(summary.iter().all(|r| r[3] != "fail"), "{summary:?}");
}

#[test]
fn configuration_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let no_tau = write(dir.path(), "a.cfg", &GRAVITY.replace("run.tau = 0.05\n", ""));
    let res = mmflow(&["run", "--config", no_tau.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("run.tau"));

    let masses = write(dir.path(), "b.cfg", &format!("{GRAVITY}medium.masses = 0.25, 0.24975\n"));
    let res = mmflow(&["run", "--config", masses.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("phase 1"));

    let big = write(dir.path(), "c.cfg", &GRAVITY.replace("grid.nx = 12", "grid.nx = 80"));
    let res = mmflow(&["run", "--config", big.to_str().unwrap(), "--exact-oracle"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let b = write(dir.path(), "b.csv", "cell,omega,F_0,F_1\n0,1,0,1\n1,1,0,3\nmass,,1,1\n");
    let res = mmflow(&["bathtub", "solve", b.to_str().unwrap()]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("# primal_value=1\n"));

    let cfg = write(dir.path(), "g.cfg", GRAVITY);
    let m = write(dir.path(), "m.csv", "cell,a,b\n0,0.1,0.1\n3,0.2,0.2\n7,0.05,0.05\n");
    // cells missing from the file are rejected rather than guessed
    assert!(!mmflow(&["w2", "compute", "--config", cfg.to_str().unwrap(), "--phase", "0", m.to_str().unwrap()])
        .status
        .success());
    let rows: String = (0..12).map(|c| format!("{c},0.01,0.01\n")).collect();
    let m = write(dir.path(), "m2.csv", &format!("cell,a,b\n{rows}"));
    let res = mmflow(&["w2", "compute", "--config", cfg.to_str().unwrap(), "--phase", "1", m.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("\n1,0,exact"));

    let res = mmflow(&["convexity", "check", "--config", cfg.to_str().unwrap()]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("true,"));
}
