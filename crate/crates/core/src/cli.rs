//! Command line: run orchestration, CSV persistence and thin wrappers around
//! the bathtub, transport and convexity solvers.
//!
//! Every CSV file starts with a `# schema=1` line. Numbers are printed with
//! the shortest round-trip representation, so reruns are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use thiserror::Error;

use crate::bathtub::{solve_bathtub, BathtubError, BathtubInstance, BathtubOptions};
use crate::config::{parse_config, ConfigError, ModeSpec, RunConfig, Setup, EXACT_CELL_CAP};
use crate::diagnostics::{
    check_dissipation, check_energy_decay, check_flow_interchange, check_holder, check_pressure_norms, diagnostics_row,
    holder_pairs, weak_form_total, DiagnosticsRow, TestFunction,
};
use crate::energy::{capillary_fields, minimize_energy, EnergyError, PhaseField};
use crate::geometry::{check_geodesic_convexity_isotropic, GeometryError, Grid};
use crate::jko::{JkoError, JkoOptions, JkoStepRecord, Positivity, Scheme};
use crate::transport::{phase_w2, MassVector, SinkhornOptions, SolverMode, TransportError};

pub const SCHEMA: &str = "# schema=1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Jko(#[from] JkoError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Bathtub(#[from] BathtubError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Parser)]
#[command(name = "mmflow", version, about = "Minimizing-movement simulator for multiphase flow in porous media")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation and write states, diagnostics and a summary.
    Run(RunArgs),
    /// Multicomponent bathtub problems.
    Bathtub {
        #[command(subcommand)]
        action: BathtubCommand,
    },
    /// Phase transport distances.
    W2 {
        #[command(subcommand)]
        action: W2Command,
    },
    /// Boundary condition for geodesic convexity of the medium.
    Convexity {
        #[command(subcommand)]
        action: ConvexityCommand,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use exact transport (grids of at most 64 cells).
    #[arg(long)]
    pub exact_oracle: bool,
    #[arg(long)]
    pub no_diagnostics: bool,
}

#[derive(Debug, Subcommand)]
pub enum BathtubCommand {
    /// Rows `cell,omega,F_0..F_N` and one row `mass,,m_0..m_N`.
    Solve { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum W2Command {
    /// Rows `cell,a,b` with the two marginals of one phase.
    Compute {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        phase: usize,
        /// Entropic regularization; exact when omitted.
        #[arg(long)]
        epsilon: Option<f64>,
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ConvexityCommand {
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Depth of the boundary layer in length units (default: one cell).
        #[arg(long)]
        layer: Option<f64>,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
}

/// Exit status: 0 on success and passing checks, 2 when a check failed.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = parse_config(&args.config)?;
            if let Some(t) = args.tau {
                if !(t > 0.0) {
                    return Err(CliError::Input("--tau must be positive".into()));
                }
                cfg.tau = t;
            }
            if let Some(s) = args.steps {
                cfg.steps = s;
            }
            if let Some(e) = args.epsilon {
                if !(e > 0.0) {
                    return Err(CliError::Input("--epsilon must be positive".into()));
                }
                cfg.epsilon = Some(e);
            }
            if let Some(o) = args.out {
                cfg.output_dir = o;
            }
            if args.exact_oracle {
                cfg.mode = Some(ModeSpec::Exact);
            }
            if args.no_diagnostics {
                cfg.diagnostics = false;
            }
            let summary = run(&cfg)?;
            writeln!(out, "{} steps written to {}", summary.steps, cfg.output_dir.display())?;
            for c in &summary.checks {
                writeln!(out, "{:<24} {:>14} {}", c.name, fmt_num(c.value), c.status.label())?;
            }
            if let Some(e) = &summary.error {
                return Err(CliError::Input(format!("run aborted after {} steps: {e}", summary.steps)));
            }
            Ok(if summary.passed() { 0 } else { 2 })
        }
        Command::Bathtub { action: BathtubCommand::Solve { file } } => bathtub_solve(&file, out),
        Command::W2 { action: W2Command::Compute { config, phase, epsilon, file } } => {
            w2_compute(&config, phase, epsilon, &file, out)
        }
        Command::Convexity { action: ConvexityCommand::Check { config, layer, tol } } => {
            let setup = parse_config(&config)?.build()?;
            let layer = layer.unwrap_or_else(|| setup.grid.spacing().iter().copied().fold(0.0, f64::max));
            let r = check_geodesic_convexity_isotropic(&setup.grid, &setup.medium, layer, tol)?;
            writeln!(out, "{SCHEMA}")?;
            writeln!(out, "pass,lines_checked,offending_cells")?;
            let cells: Vec<String> = r.offending.iter().map(usize::to_string).collect();
            writeln!(out, "{},{},{}", r.pass, r.lines_checked, cells.join(";"))?;
            Ok(if r.pass { 0 } else { 2 })
        }
    }
}

/// Shortest round-trip digits; exponent form outside `[1e-4, 1e15)`.
fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Reported value without a fixed threshold.
    Info,
}

impl CheckStatus {
    fn from_bool(ok: bool) -> Self {
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::Info => "info",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    pub status: CheckStatus,
}

#[derive(Debug)]
pub struct RunSummary {
    pub steps: usize,
    pub checks: Vec<Check>,
    pub error: Option<JkoError>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>, CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SCHEMA}")?;
    Ok(w)
}

fn write_state(
    path: &Path,
    grid: &Grid,
    s: &PhaseField,
    p: Option<&[Vec<f64>]>,
    pi: &[Vec<f64>],
) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let np = s.phase_count();
    let mut header = vec!["cell".to_string(), "x".into()];
    if grid.dim() == 2 {
        header.push("y".into());
    }
    header.extend((0..np).map(|i| format!("s_{i}")));
    header.extend((0..np).map(|i| format!("p_{i}")));
    header.extend((1..np).map(|i| format!("pi_{i}")));
    writeln!(w, "{}", header.join(","))?;
    let rho = s.densities(grid);
    for c in 0..grid.cell_count() {
        let x = grid.center(c);
        let mut row = vec![c.to_string(), fmt_num(x[0])];
        if grid.dim() == 2 {
            row.push(fmt_num(x[1]));
        }
        row.extend(rho.iter().map(|r| fmt_num(r[c])));
        // pressures are only defined by a step; state 0 carries NaN
        row.extend((0..np).map(|i| p.map_or("NaN".into(), |p| fmt_num(p[i][c]))));
        row.extend(pi.iter().map(|f| fmt_num(f[c])));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn diagnostics_header(np: usize, fns: &[TestFunction]) -> String {
    let mut h = vec!["step".to_string(), "energy".into(), "w2".into()];
    h.extend((0..np).map(|i| format!("entropy_{i}")));
    h.push("entropy_drop".into());
    h.extend(["grad_pi_sq", "p_h1_sq", "pi_h1_sq", "fw_gap", "capillary_residual"].map(String::from));
    h.extend(fns.iter().map(|f| format!("weak_{}", f.name())));
    h.extend(["energy_rate", "dissipation", "flow_interchange_c"].map(String::from));
    h.join(",")
}

fn diagnostics_line(r: &DiagnosticsRow) -> String {
    let mut v = vec![r.step.to_string(), fmt_num(r.energy), fmt_num(r.w2)];
    v.extend(r.entropy.iter().map(|x| fmt_num(*x)));
    v.push(fmt_num(r.entropy_drop));
    v.extend([r.grad_pi_sq, r.p_h1_sq, r.pi_h1_sq, r.fw_gap, r.capillary_residual].map(fmt_num));
    v.extend(r.weak_form.iter().map(|x| fmt_num(*x)));
    v.extend([r.energy_rate, r.dissipation, r.flow_interchange_c].map(fmt_num));
    v.join(",")
}

/// Solver options implied by a configuration.
pub fn jko_options(cfg: &RunConfig, setup: &Setup) -> Result<JkoOptions, CliError> {
    let n = setup.grid.cell_count();
    let mut opts = match cfg.mode.unwrap_or(ModeSpec::Entropic) {
        ModeSpec::Exact => {
            if n > EXACT_CELL_CAP {
                return Err(CliError::Input(format!("exact mode is limited to {EXACT_CELL_CAP} cells, grid has {n}")));
            }
            JkoOptions::exact()
        }
        ModeSpec::Entropic => JkoOptions::entropic(
            cfg.epsilon.unwrap_or_else(|| 1e-2 * setup.costs.phase(0).median_offdiag().max(f64::MIN_POSITIVE)),
        ),
    };
    if let Some(t) = cfg.fw_tol {
        opts.fw_tol = t;
    }
    if let Some(k) = cfg.max_fw_iter {
        opts.max_fw_iter = k;
    }
    if cfg.positivity {
        opts.positivity = Some(Positivity { delta: 1e-4, floor: 1e-8, cap: 1.0 });
    }
    Ok(opts)
}

/// Execute a configured run, writing `state_{n}.csv`, `diagnostics.csv`
/// and `summary.csv` into the output directory. A solver failure ends the
/// run with everything produced so far flushed; it is reported in the
/// summary and returned in [`RunSummary::error`].
pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let setup = cfg.build()?;
    let opts = jko_options(cfg, &setup)?;
    let (grid, medium) = (&setup.grid, &setup.medium);
    let scheme = Scheme { grid, medium, model: setup.model(), costs: &setup.costs };
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    info!(
        "{} cells, {} phases, tau {}, {} steps, mode {:?}",
        grid.cell_count(),
        medium.phase_count(),
        cfg.tau,
        cfg.steps,
        opts.mode
    );

    write_state(
        &dir.join("state_0.csv"),
        grid,
        &setup.initial,
        None,
        &capillary_fields(&setup.model, grid, &setup.initial),
    )?;
    let fns = TestFunction::family(grid.dim());
    let mut diag = if cfg.diagnostics {
        let mut w = csv_writer(&dir.join("diagnostics.csv"))?;
        writeln!(w, "{}", diagnostics_header(medium.phase_count(), &fns))?;
        Some(w)
    } else {
        None
    };
    let mut rows = Vec::new();
    let outcome =
        scheme.run_simulation::<CliError>(&setup.initial, cfg.tau, cfg.steps, &opts, |n, rec: &JkoStepRecord| {
            write_state(&dir.join(format!("state_{n}.csv")), grid, &rec.s_new, Some(&rec.p), &rec.pi)?;
            if let Some(w) = diag.as_mut() {
                let row = diagnostics_row(grid, medium, n, rec)?;
                writeln!(w, "{}", diagnostics_line(&row))?;
                w.flush()?;
                rows.push(row);
            }
            info!("step {n}: E = {}, W2 = {}, gap = {:.3e}", rec.energy_after, rec.w2_total(), rec.fw_gap);
            Ok(())
        });
    let traj = outcome.trajectory;
    let error = match outcome.error {
        None => None,
        Some(CliError::Jko(e)) => {
            warn!("solver aborted: {e}");
            Some(e)
        }
        Some(other) => return Err(other),
    };

    let mut checks = vec![Check {
        name: "steps_completed",
        value: traj.records.len() as f64,
        bound: cfg.steps as f64,
        status: CheckStatus::from_bool(traj.records.len() == cfg.steps),
    }];
    let mass = traj.states.iter().map(|s| s.mass_drift(grid, medium)).fold(0.0, f64::max);
    checks.push(Check { name: "mass_drift", value: mass, bound: 1e-9, status: CheckStatus::from_bool(mass <= 1e-9) });
    let sat = traj.states.iter().map(|s| s.saturation_drift(grid, medium)).fold(0.0, f64::max);
    checks.push(Check {
        name: "saturation_drift",
        value: sat,
        bound: 1e-9,
        status: CheckStatus::from_bool(sat <= 1e-9),
    });
    let cap = traj.records.iter().map(JkoStepRecord::capillary_residual).fold(0.0, f64::max);
    checks.push(Check {
        name: "capillary_residual",
        value: cap,
        bound: 1e-10,
        status: CheckStatus::from_bool(cap <= 1e-10),
    });

    if cfg.diagnostics && !traj.records.is_empty() {
        let emin = minimize_energy(&setup.model, grid, medium, 1e-12, 20_000)?;
        let e_ref = emin.energy - emin.gap;
        let decay = check_energy_decay(&traj, e_ref, 0.05);
        checks.push(Check {
            name: "energy_decay_violations",
            value: decay.violations.len() as f64,
            bound: 0.0,
            status: CheckStatus::from_bool(decay.violations.is_empty()),
        });
        checks.push(Check {
            name: "total_square_distance",
            value: decay.total_sq_distance,
            bound: decay.bound,
            status: CheckStatus::from_bool(decay.total_sq_distance <= decay.bound),
        });
        let holder = check_holder(&scheme, &traj, cfg.tau, &holder_pairs(traj.records.len()), e_ref, 2.0)?;
        checks.push(Check {
            name: "holder_constant",
            value: holder.c_emp,
            bound: 2.0 * holder.c_theory,
            status: CheckStatus::from_bool(holder.pass),
        });
        let info_check = |name, value: f64| Check {
            name,
            value,
            bound: f64::NAN,
            status: if value.is_finite() { CheckStatus::Info } else { CheckStatus::Fail },
        };
        checks.push(info_check("dissipation_mismatch", check_dissipation(&rows, cfg.tau).relative_mismatch));
        checks.push(info_check("flow_interchange_c", check_flow_interchange(&rows, cfg.tau).cumulative_c));
        let pn = check_pressure_norms(&rows, cfg.tau);
        checks.push(info_check("pressure_h1", pn.p_h1));
        checks.push(info_check("capillary_h1", pn.pi_h1));
        checks.push(info_check("weak_form_total", weak_form_total(&rows)));
    }

    let mut w = csv_writer(&dir.join("summary.csv"))?;
    writeln!(w, "check,value,bound,status")?;
    for c in &checks {
        writeln!(w, "{},{},{},{}", c.name, fmt_num(c.value), fmt_num(c.bound), c.status.label())?;
    }
    if let Some(e) = &error {
        writeln!(w, "solver_error,NaN,NaN,\"{}\"", e.to_string().replace('"', "'"))?;
    }
    w.flush()?;
    Ok(RunSummary { steps: traj.records.len(), checks, error })
}

fn read_rows(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>), CliError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let rows = rdr.records().collect::<Result<Vec<_>, _>>()?;
    Ok((headers, rows))
}

fn num(s: Option<&str>, what: &str) -> Result<f64, CliError> {
    let s = s.ok_or_else(|| CliError::Input(format!("missing {what}")))?;
    s.parse::<f64>().map_err(|e| CliError::Input(format!("{what}: {e} (`{s}`)")))
}

pub fn bathtub_solve(path: &Path, out: &mut dyn Write) -> Result<i32, CliError> {
    let (headers, rows) = read_rows(path)?;
    let np = headers.iter().filter(|h| h.starts_with("F_")).count();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CliError::Input(format!("missing column {name}")))
    };
    let (cell_col, omega_col) = (col("cell")?, col("omega")?);
    let f_cols = (0..np).map(|i| col(&format!("F_{i}"))).collect::<Result<Vec<_>, _>>()?;
    let mut cells: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    let mut masses = None;
    for r in &rows {
        let values = f_cols.iter().map(|&k| num(r.get(k), "F value")).collect::<Result<Vec<_>, _>>()?;
        if r.get(cell_col) == Some("mass") {
            masses = Some(values);
        } else {
            let c = num(r.get(cell_col), "cell")? as usize;
            cells.push((c, num(r.get(omega_col), "omega")?, values));
        }
    }
    cells.sort_by_key(|c| c.0);
    if cells.iter().enumerate().any(|(k, c)| c.0 != k) {
        return Err(CliError::Input("cells must be numbered 0..n-1 without gaps".into()));
    }
    let m = masses.ok_or_else(|| CliError::Input("missing `mass` row".into()))?;
    let f: Vec<Vec<f64>> = (0..np).map(|i| cells.iter().map(|c| c.2[i]).collect()).collect();
    let omega: Vec<f64> = cells.iter().map(|c| c.1).collect();
    let inst = BathtubInstance::new(f, omega, m)?;
    let sol = solve_bathtub(&inst, &BathtubOptions::default())?;
    writeln!(out, "{SCHEMA}")?;
    writeln!(out, "# primal_value={}", fmt_num(sol.primal_value))?;
    writeln!(out, "# dual_value={}", fmt_num(sol.dual_value))?;
    let alpha: Vec<String> = sol.alpha.iter().map(|a| fmt_num(*a)).collect();
    writeln!(out, "# alpha={}", alpha.join(";"))?;
    let mut header = vec!["cell".to_string(), "lambda".into()];
    header.extend((0..np).map(|i| format!("s_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for c in 0..inst.cells() {
        let mut row = vec![c.to_string(), fmt_num(sol.lambda[c])];
        row.extend(sol.s.iter().map(|s| fmt_num(s[c])));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(0)
}

pub fn w2_compute(
    config: &Path,
    phase: usize,
    epsilon: Option<f64>,
    file: &Path,
    out: &mut dyn Write,
) -> Result<i32, CliError> {
    let setup = parse_config(config)?.build()?;
    if phase >= setup.medium.phase_count() {
        return Err(CliError::Input(format!("phase {phase} out of range")));
    }
    let n = setup.grid.cell_count();
    let (headers, rows) = read_rows(file)?;
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| CliError::Input(format!("missing column {name}")))
    };
    let (cc, ca, cb) = (col("cell")?, col("a")?, col("b")?);
    let mut a = vec![f64::NAN; n];
    let mut b = vec![f64::NAN; n];
    for r in &rows {
        let c = num(r.get(cc), "cell")? as usize;
        if c >= n {
            return Err(CliError::Input(format!("cell {c} out of range")));
        }
        a[c] = num(r.get(ca), "a")?;
        b[c] = num(r.get(cb), "b")?;
    }
    let a = MassVector::new(a)?;
    let b = MassVector::new(b)?;
    let mode = match epsilon {
        Some(e) => SolverMode::Entropic { epsilon: e },
        None => SolverMode::Exact,
    };
    let r = phase_w2(setup.costs.phase(phase), &a, &b, mode, &SinkhornOptions::default())?;
    writeln!(out, "{SCHEMA}")?;
    writeln!(out, "phase,w2,mode,marginal_error")?;
    let label = if epsilon.is_some() { "entropic" } else { "exact" };
    writeln!(out, "{phase},{},{label},{}", fmt_num(r.value), fmt_num(r.marginal_error))?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn bathtub_two_by_two() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "b.csv", "cell,omega,F_0,F_1\n0,1,0,1\n1,1,0,3\nmass,,1,1\n");
        let mut out = Vec::new();
        assert_eq!(bathtub_solve(&p, &mut out).unwrap(), 0);
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(SCHEMA));
        assert!(text.contains("# primal_value=1\n"), "{text}");
        assert!(text.contains("\n0,") && text.contains("s_0,s_1"));
    }

    #[test]
    fn w2_of_identical_marginals() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(
            dir.path(),
            "c.cfg",
            "grid.nx = 3\nmedium.phases = 1\nmedium.porosity = 0.5\nrun.tau = 1\nrun.steps = 0\n",
        );
        let m = write(dir.path(), "m.csv", "cell,a,b\n0,0.2,0.2\n1,0.3,0.3\n2,0.5,0.5\n");
        let mut out = Vec::new();
        w2_compute(&cfg, 0, None, &m, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("\n0,0,exact"), "{text}");
        assert!(w2_compute(&cfg, 1, None, &m, &mut Vec::new()).is_err());
    }

    #[test]
    fn exact_mode_cell_cap() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(
            dir.path(),
            "c.cfg",
            "grid.nx = 65\nmedium.phases = 1\nmedium.porosity = 0.5\nrun.tau = 1\nrun.steps = 1\nsolver.mode = exact\n",
        );
        let cfg = parse_config(&cfg).unwrap();
        let setup = cfg.build().unwrap();
        assert!(jko_options(&cfg, &setup).is_err());
    }
}
