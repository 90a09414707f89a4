//! Discrete estimates and identities checked on a computed trajectory.
//!
//! All spatial derivatives use the neighbor-difference stencil of
//! [`Grid::face_gradient`]. Face quantities use the harmonic permeability
//! and the arithmetic mean of the two cell densities.

use rayon::prelude::*;

use crate::energy::{relative_entropy, EnergyError, PhaseField};
use crate::geometry::{Face, Grid, MediumSpec};
use crate::jko::{JkoStepRecord, Scheme, Trajectory};
use crate::transport::{global_w2, SinkhornOptions, SolverMode, TransportError};

/// Quadratic polynomial test functions in the cell-center coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    One,
    X,
    Y,
    Xx,
    Xy,
    Yy,
}

impl TestFunction {
    /// Nonconstant functions suited to the grid dimension.
    pub fn family(dim: usize) -> Vec<TestFunction> {
        use TestFunction::*;
        if dim == 1 {
            vec![X, Xx]
        } else {
            vec![X, Y, Xx, Xy, Yy]
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::One => "1",
            TestFunction::X => "x",
            TestFunction::Y => "y",
            TestFunction::Xx => "x^2",
            TestFunction::Xy => "xy",
            TestFunction::Yy => "y^2",
        }
    }

    pub fn eval(self, p: [f64; 2]) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::X => p[0],
            TestFunction::Y => p[1],
            TestFunction::Xx => p[0] * p[0],
            TestFunction::Xy => p[0] * p[1],
            TestFunction::Yy => p[1] * p[1],
        }
    }

    /// Spectral norm of the Euclidean Hessian.
    pub fn hessian_norm(self) -> f64 {
        match self {
            TestFunction::One | TestFunction::X | TestFunction::Y => 0.0,
            TestFunction::Xx | TestFunction::Yy => 2.0,
            TestFunction::Xy => 1.0,
        }
    }
}

/// Upper bound for the Hessian norm of a test function in the metric of
/// phase `i`, plus a description of how it was built.
///
/// For constant `kappa` the metric is `(mu/kappa) I` and the bound is exact.
/// Otherwise the Euclidean norm is scaled by `kappa^*/mu` and by the
/// variation factor `kappa^*/kappa_*`, a stand-in for the omitted
/// connection terms.
pub fn metric_hessian_bound(f: TestFunction, medium: &MediumSpec, phase: usize) -> (f64, String) {
    let (lo, hi) = (medium.kappa_lower, medium.kappa_upper);
    let mu = medium.viscosities[phase];
    if hi <= lo * (1.0 + 1e-12) {
        (f.hessian_norm() * hi / mu, format!("|D2 xi| kappa/mu with kappa = {hi}"))
    } else {
        let v = hi / lo;
        (f.hessian_norm() * hi / mu * v, format!("|D2 xi| kappa^*/mu * {v:.4} (variation factor, approximate)"))
    }
}

fn face_density(s_i: &[f64], face: &Face, vol: f64) -> f64 {
    0.5 * (s_i[face.a] + s_i[face.b]) / vol
}

/// Per-face flux density `rho (K/mu) d h / d n` for phase `i`.
fn face_fluxes(grid: &Grid, medium: &MediumSpec, phase: usize, s_i: &[f64], h_i: &[f64]) -> Vec<f64> {
    let vol = grid.cell_volume();
    let mu = medium.viscosities[phase];
    grid.faces()
        .iter()
        .map(|f| face_density(s_i, f, vol) * medium.permeability.face_value(f) / mu * grid.face_gradient(h_i, f))
        .collect()
}

/// `sum_x (s^n - s^{n-1}) xi + tau sum_faces vol rho (K/mu) grad h . grad xi`
/// for one phase, with `h = p + Psi`.
pub fn weak_form_residual(
    grid: &Grid,
    medium: &MediumSpec,
    rec: &JkoStepRecord,
    phase: usize,
    xi: TestFunction,
) -> f64 {
    let vals: Vec<f64> = grid.centers().iter().map(|c| xi.eval(*c)).collect();
    let change: f64 =
        rec.s_new.phase(phase).iter().zip(rec.s_prev.phase(phase)).zip(&vals).map(|((a, b), v)| (a - b) * v).sum();
    let fluxes = face_fluxes(grid, medium, phase, rec.s_new.phase(phase), &rec.h[phase]);
    let flux: f64 =
        grid.faces().iter().zip(&fluxes).map(|(f, q)| grid.cell_volume() * q * grid.face_gradient(&vals, f)).sum();
    change + rec.tau * flux
}

#[derive(Debug, Clone)]
pub struct WeakFormEntry {
    pub phase: usize,
    pub function: TestFunction,
    pub residual: f64,
    /// `W_i^2 |D^2_g xi|`, the scale of the bound up to its constant.
    pub bound_scale: f64,
}

pub fn check_weak_form(
    grid: &Grid,
    medium: &MediumSpec,
    rec: &JkoStepRecord,
    fns: &[TestFunction],
) -> Vec<WeakFormEntry> {
    let mut out = Vec::new();
    for phase in 0..rec.s_new.phase_count() {
        for &f in fns {
            out.push(WeakFormEntry {
                phase,
                function: f,
                residual: weak_form_residual(grid, medium, rec, phase, f),
                bound_scale: rec.w2[phase] * metric_hessian_bound(f, medium, phase).0,
            });
        }
    }
    out
}

/// `sum_i sum_faces vol rho (K/mu) |grad h_i|^2`.
pub fn dissipation_rate(grid: &Grid, medium: &MediumSpec, s: &PhaseField, h: &[Vec<f64>]) -> f64 {
    (0..s.phase_count())
        .map(|i| {
            let q = face_fluxes(grid, medium, i, s.phase(i), &h[i]);
            grid.faces()
                .iter()
                .zip(&q)
                .map(|(f, qf)| grid.cell_volume() * qf * grid.face_gradient(&h[i], f))
                .sum::<f64>()
        })
        .sum()
}

/// Discrete `|f|^2_{H^1}` from the shared stencil.
pub fn h1_sq_norm(grid: &Grid, field: &[f64]) -> f64 {
    grid.l2_sq_norm(field) + grid.gradient_sq_norm(field)
}

#[derive(Debug, Clone)]
pub struct DiagnosticsRow {
    pub step: usize,
    pub energy: f64,
    pub w2: f64,
    pub entropy: Vec<f64>,
    /// `sum_i H(s_i^{n-1}) - H(s_i^n)`.
    pub entropy_drop: f64,
    pub grad_pi_sq: f64,
    pub p_h1_sq: f64,
    pub pi_h1_sq: f64,
    pub fw_gap: f64,
    pub capillary_residual: f64,
    /// Max over phases of `|residual|`, one entry per test function.
    pub weak_form: Vec<f64>,
    /// `(E^n - E^{n-1}) / tau`.
    pub energy_rate: f64,
    /// Discrete dissipation at the new state.
    pub dissipation: f64,
    /// `grad_pi_sq / (1 + W^2/tau + sum_i (H(s^{n-1}) - H(s^n))/tau)`.
    pub flow_interchange_c: f64,
}

impl DiagnosticsRow {
    pub fn is_finite(&self) -> bool {
        [
            self.energy,
            self.w2,
            self.entropy_drop,
            self.grad_pi_sq,
            self.p_h1_sq,
            self.pi_h1_sq,
            self.fw_gap,
            self.capillary_residual,
        ]
        .iter()
        .chain(&self.entropy)
        .chain(&self.weak_form)
        .chain([&self.energy_rate, &self.dissipation])
        .all(|v| v.is_finite())
    }
}

fn entropies(s: &PhaseField, grid: &Grid, medium: &MediumSpec) -> Result<Vec<f64>, EnergyError> {
    (0..s.phase_count()).map(|i| relative_entropy(s.phase(i), grid, medium)).collect()
}

pub fn diagnostics_row(
    grid: &Grid,
    medium: &MediumSpec,
    step: usize,
    rec: &JkoStepRecord,
) -> Result<DiagnosticsRow, EnergyError> {
    let fns = TestFunction::family(grid.dim());
    let entropy = entropies(&rec.s_new, grid, medium)?;
    let before = entropies(&rec.s_prev, grid, medium)?;
    let grad_pi_sq: f64 = rec.pi.iter().map(|p| grid.gradient_sq_norm(p)).sum();
    let w2 = rec.w2_total();
    let entropy_drop: f64 = before.iter().zip(&entropy).map(|(a, b)| a - b).sum();
    let bracket = 1.0 + w2 / rec.tau + entropy_drop / rec.tau;
    let weak = check_weak_form(grid, medium, rec, &fns);
    let weak_form = fns
        .iter()
        .map(|f| weak.iter().filter(|e| e.function == *f).map(|e| e.residual.abs()).fold(0.0, f64::max))
        .collect();
    Ok(DiagnosticsRow {
        step,
        energy: rec.energy_after,
        w2,
        entropy,
        entropy_drop,
        grad_pi_sq,
        p_h1_sq: rec.p.iter().map(|p| h1_sq_norm(grid, p)).sum(),
        pi_h1_sq: rec.pi.iter().map(|p| h1_sq_norm(grid, p)).sum(),
        fw_gap: rec.fw_gap,
        capillary_residual: rec.capillary_residual(),
        weak_form,
        energy_rate: (rec.energy_after - rec.energy_before) / rec.tau,
        dissipation: dissipation_rate(grid, medium, &rec.s_new, &rec.h),
        flow_interchange_c: if bracket > 0.0 { grad_pi_sq / bracket } else { f64::INFINITY },
    })
}

/// Rows for every step, computed in parallel.
pub fn diagnostics_rows(
    grid: &Grid,
    medium: &MediumSpec,
    traj: &Trajectory,
) -> Result<Vec<DiagnosticsRow>, EnergyError> {
    traj.records.par_iter().enumerate().map(|(k, r)| diagnostics_row(grid, medium, k + 1, r)).collect()
}

/// Objective bias allowed for an entropic step: `eps (1 + ln n) M / 2 tau`
/// with `M` the total mass.
pub fn entropic_slack(rec: &JkoStepRecord) -> f64 {
    match rec.mode {
        SolverMode::Exact => 0.0,
        SolverMode::Entropic { epsilon } => {
            let n = rec.s_new.cell_count() as f64;
            let mass: f64 = rec.s_new.masses.iter().flatten().sum();
            epsilon * (1.0 + n.ln()) * mass / (2.0 * rec.tau)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnergyDecayReport {
    /// Steps `n` where `E^n > E^{n-1} + slack_n`.
    pub violations: Vec<usize>,
    /// `sum_n W^2 / tau`.
    pub total_sq_distance: f64,
    /// `2 (E^0 - E_ref)` plus accumulated slack.
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

/// One-step decay and the total square distance estimate. `e_ref` is a
/// lower bound of the energy (its infimum when known).
pub fn check_energy_decay(traj: &Trajectory, e_ref: f64, margin: f64) -> EnergyDecayReport {
    let mut violations = Vec::new();
    let mut slack = 0.0;
    let mut total = 0.0;
    for (k, r) in traj.records.iter().enumerate() {
        let s = r.fw_gap + entropic_slack(r);
        slack += s;
        if r.energy_after > r.energy_before + s + 1e-12 * (1.0 + r.energy_before.abs()) {
            violations.push(k + 1);
        }
        total += r.w2_total() / r.tau;
    }
    let e0 = traj.records.first().map_or(0.0, |r| r.energy_before);
    let bound = 2.0 * (e0 - e_ref).max(0.0) * (1.0 + margin) + 2.0 * slack;
    EnergyDecayReport {
        pass: violations.is_empty() && total <= bound,
        violations,
        total_sq_distance: total,
        bound,
        slack,
    }
}

#[derive(Debug, Clone)]
pub struct HolderReport {
    /// `(n1, n2, W(s^{n2}, s^{n1}))`.
    pub pairs: Vec<(usize, usize, f64)>,
    /// `max W / sqrt((n2 - n1 + 1) tau)`.
    pub c_emp: f64,
    /// `sqrt(2 (E^0 - E_ref))`.
    pub c_theory: f64,
    pub pass: bool,
}

/// Default sample: all adjacent pairs and dyadic gaps from step 0.
pub fn holder_pairs(steps: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (1..=steps).map(|n| (n - 1, n)).collect();
    let mut gap = 2;
    while gap <= steps {
        out.push((0, gap));
        out.push((steps - gap, steps));
        gap *= 2;
    }
    out.sort_unstable();
    out.dedup();
    out
}

pub fn check_holder(
    scheme: &Scheme,
    traj: &Trajectory,
    tau: f64,
    pairs: &[(usize, usize)],
    e_ref: f64,
    factor: f64,
) -> Result<HolderReport, TransportError> {
    let opts = SinkhornOptions::default();
    let measured = pairs
        .par_iter()
        .map(|&(a, b)| {
            let d = global_w2(scheme.costs, &traj.states[b].masses, &traj.states[a].masses, SolverMode::Exact, &opts)?;
            Ok((a, b, d.total.max(0.0).sqrt()))
        })
        .collect::<Result<Vec<_>, TransportError>>()?;
    let c_emp = measured.iter().map(|&(a, b, w)| w / (((b - a + 1) as f64) * tau).sqrt()).fold(0.0, f64::max);
    let e0 = traj.records.first().map_or(e_ref, |r| r.energy_before);
    let c_theory = (2.0 * (e0 - e_ref).max(0.0)).sqrt();
    Ok(HolderReport { pass: c_emp <= factor * c_theory + 1e-12, pairs: measured, c_emp, c_theory })
}

#[derive(Debug, Clone)]
pub struct FlowInterchangeReport {
    /// Per-step constants; infinite where the bracket is not positive
    /// (entropy can rise within a step, e.g. while phases segregate).
    pub c_emp: Vec<f64>,
    /// `sum_n tau |grad pi^n|^2 / sum_n (tau + W_n^2 + entropy drop_n)`,
    /// the time-integrated form in which the bracket telescopes.
    pub cumulative_c: f64,
}

/// Empirical constants of the flow-interchange bound; a trend check only.
pub fn check_flow_interchange(rows: &[DiagnosticsRow], tau: f64) -> FlowInterchangeReport {
    let c_emp: Vec<f64> = rows.iter().map(|r| r.flow_interchange_c).collect();
    let lhs: f64 = rows.iter().map(|r| tau * r.grad_pi_sq).sum();
    let bracket: f64 = rows.iter().map(|r| tau + r.w2 + r.entropy_drop).sum();
    let cumulative_c = if bracket > 0.0 {
        lhs / bracket
    } else if lhs == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    FlowInterchangeReport { c_emp, cumulative_c }
}

#[derive(Debug, Clone)]
pub struct DissipationReport {
    /// `sum_n |E^n - E^{n-1} + tau D^n| / sum_n max(|E^n - E^{n-1}|, tau D^n)`.
    pub relative_mismatch: f64,
}

pub fn check_dissipation(rows: &[DiagnosticsRow], tau: f64) -> DissipationReport {
    let (mut num, mut den) = (0.0, 0.0);
    for r in rows {
        num += (r.energy_rate + r.dissipation).abs() * tau;
        den += r.energy_rate.abs().max(r.dissipation.abs()) * tau;
    }
    DissipationReport { relative_mismatch: if den > 0.0 { num / den } else { 0.0 } }
}

#[derive(Debug, Clone)]
pub struct PressureNormReport {
    /// `tau sum_n |p^n|^2_{H^1}`.
    pub p_h1: f64,
    /// `tau sum_n |pi^n|^2_{H^1}`.
    pub pi_h1: f64,
    pub capillary_residual: f64,
}

pub fn check_pressure_norms(rows: &[DiagnosticsRow], tau: f64) -> PressureNormReport {
    PressureNormReport {
        p_h1: tau * rows.iter().map(|r| r.p_h1_sq).sum::<f64>(),
        pi_h1: tau * rows.iter().map(|r| r.pi_h1_sq).sum::<f64>(),
        capillary_residual: rows.iter().map(|r| r.capillary_residual).fold(0.0, f64::max),
    }
}

/// `max over test functions of sum_n |weak-form residual|`.
pub fn weak_form_total(rows: &[DiagnosticsRow]) -> f64 {
    let k = rows.first().map_or(0, |r| r.weak_form.len());
    (0..k).map(|j| rows.iter().map(|r| r.weak_form[j]).sum::<f64>()).fold(0.0, f64::max)
}
