//! Minimizing-movement stepper.
//!
//! One step solves `min_s W^2(s, s_prev) / 2 tau + E(s)` over saturated
//! states with fixed phase masses, then recovers the potentials, the fields
//! `F_i = phi_i / tau + pi_i + Psi_i`, the bathtub multipliers and the phase
//! pressures.
//!
//! Two inner solvers are provided:
//!
//! * exact mode works on transport plans. The objective
//!   `sum theta C / 2 tau + E(s(theta))` is convex on a transportation polytope
//!   whose linear oracle is one transportation LP; pairwise Frank-Wolfe on it
//!   converges linearly. The LP duals at the final iterate give the
//!   potentials. Grid-graph distances make `W^2` piecewise linear in `s`,
//!   so working in `s` alone would stall at kinks;
//! * entropic mode works on `s` with Sinkhorn-divergence potentials as the
//!   gradient of the transport term and the bathtub problem as the linear
//!   oracle, with an Armijo line search.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::auxflow::{regularize_positive, AuxFlowError};
use crate::bathtub::{solve_bathtub, BathtubError, BathtubInstance, BathtubOptions};
use crate::energy::{capillary_fields, energy_gradient, energy_unchecked, CapillaryModel, EnergyError, PhaseField};
use crate::fw::{pairwise_fw, FwProblem};
use crate::geometry::{CostBundle, Grid, MediumSpec};
use crate::transport::simplex::{self, Basis};
use crate::transport::{
    exact_w2, self_potential, sinkhorn_w2, DualState, MassVector, SelfPotential, SinkhornOptions, SolverMode,
    TransportError,
};

#[derive(Debug, Error)]
pub enum JkoError {
    #[error("time step must be positive, got {0}")]
    Tau(f64),
    #[error("potentials missing or mis-shaped: {0}")]
    Potentials(String),
    #[error("line search failed at iteration {iteration} (gap {gap:.3e}, objective {objective:.6e})")]
    LineSearch { iteration: usize, gap: f64, objective: f64 },
    #[error("constraint drift {0:.3e} after the step")]
    Drift(f64),
    #[error("transport LP failed: {0:?}")]
    Lp(simplex::LpError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Bathtub(#[from] BathtubError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    AuxFlow(#[from] AuxFlowError),
}

#[derive(Debug, Clone, Copy)]
pub struct Positivity {
    pub delta: f64,
    pub floor: f64,
    pub cap: f64,
}

#[derive(Debug, Clone)]
pub struct JkoOptions {
    pub mode: SolverMode,
    /// Stop when the FW gap is below `fw_tol * (1 + |E(s_prev)|)`.
    pub fw_tol: f64,
    pub max_fw_iter: usize,
    pub sinkhorn: SinkhornOptions,
    /// Flow the previous state to strict positivity before an entropic step.
    pub positivity: Option<Positivity>,
    /// Entropic mode: pairwise FW with a slope line search (default), or
    /// plain FW with Armijo backtracking.
    pub pairwise: bool,
    pub armijo_c: f64,
    pub armijo_backtracks: usize,
}

impl JkoOptions {
    pub fn exact() -> Self {
        Self {
            mode: SolverMode::Exact,
            fw_tol: 1e-10,
            max_fw_iter: 20_000,
            sinkhorn: SinkhornOptions::default(),
            positivity: None,
            pairwise: true,
            armijo_c: 1e-4,
            armijo_backtracks: 30,
        }
    }

    pub fn entropic(epsilon: f64) -> Self {
        Self {
            mode: SolverMode::Entropic { epsilon },
            fw_tol: 1e-6,
            max_fw_iter: 500,
            sinkhorn: SinkhornOptions { debias: true, ..SinkhornOptions::default() },
            ..Self::exact()
        }
    }
}

/// Everything produced by one step.
#[derive(Debug, Clone)]
pub struct JkoStepRecord {
    pub s_prev: PhaseField,
    pub s_new: PhaseField,
    pub tau: f64,
    /// Backward potentials (half-cost convention), `phi_i(0) = 0`.
    pub phi: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    /// Capillary pressures `pi_1..pi_N` at the new state.
    pub pi: Vec<Vec<f64>>,
    pub fw_gap: f64,
    pub fw_iterations: usize,
    /// Per-phase squared distances between `s_new` and `s_prev`.
    pub w2: Vec<f64>,
    pub energy_before: f64,
    pub energy_after: f64,
    /// `sum W^2 / 2 tau + E(s_new)`.
    pub objective: f64,
    /// Flow time used to regularize `s_prev` (zero when not needed).
    pub regularization: f64,
    pub mode: SolverMode,
}

impl JkoStepRecord {
    pub fn w2_total(&self) -> f64 {
        self.w2.iter().sum()
    }

    /// `max |(p_i - p_0) - pi_i|` over cells and phases.
    pub fn capillary_residual(&self) -> f64 {
        let mut r = 0.0f64;
        for (i, pi) in self.pi.iter().enumerate() {
            for x in 0..pi.len() {
                r = r.max(((self.p[i + 1][x] - self.p[0][x]) - pi[x]).abs());
            }
        }
        r
    }
}

/// `F_i = phi_i / tau + pi_i + Psi_i` with `pi_0 = 0`.
pub fn assemble_f<M: CapillaryModel + ?Sized>(
    model: &M,
    grid: &Grid,
    medium: &MediumSpec,
    s_current: &PhaseField,
    phi: &[Vec<f64>],
    tau: f64,
) -> Result<Vec<Vec<f64>>, JkoError> {
    if phi.len() != medium.phase_count() || phi.iter().any(|p| p.len() != grid.cell_count()) {
        return Err(JkoError::Potentials(format!(
            "{} potential fields for {} phases",
            phi.len(),
            medium.phase_count()
        )));
    }
    let g = energy_gradient(model, grid, medium, s_current);
    Ok(phi.iter().zip(&g).map(|(p, gi)| p.iter().zip(gi).map(|(a, b)| a / tau + b).collect()).collect())
}

#[derive(Debug, Clone)]
pub struct Pressures {
    pub h: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

/// `h_i = -phi_i / tau + F_i - lambda` shifted so that `h_0` has zero mean,
/// and `p_i = h_i - Psi_i`.
pub fn reconstruct_pressures(
    f: &[Vec<f64>],
    phi: &[Vec<f64>],
    lambda: &[f64],
    medium: &MediumSpec,
    tau: f64,
) -> Pressures {
    let mut h: Vec<Vec<f64>> = f
        .iter()
        .zip(phi)
        .map(|(fi, pi)| fi.iter().zip(pi).zip(lambda).map(|((a, b), l)| -b / tau + a - l).collect())
        .collect();
    let n = lambda.len().max(1) as f64;
    let mean = h[0].iter().sum::<f64>() / n;
    h.iter_mut().flatten().for_each(|v| *v -= mean);
    let p =
        h.iter().zip(&medium.potentials).map(|(hi, psi)| hi.iter().zip(psi).map(|(a, b)| a - b).collect()).collect();
    Pressures { h, p }
}

/// Grid, medium, capillary model and ground costs of a simulation.
pub struct Scheme<'a> {
    pub grid: &'a Grid,
    pub medium: &'a MediumSpec,
    pub model: &'a dyn CapillaryModel,
    pub costs: &'a CostBundle,
}

/// Plan-space problem: `theta[((i n + y) n) + x]` carries mass of phase `i`
/// from previous cell `y` to new cell `x`.
struct PlanProblem<'a, 'b> {
    scheme: &'b Scheme<'a>,
    tau: f64,
    supply: Vec<f64>,
    demand: Vec<f64>,
    /// Static part `C_i(x, y) / 2 tau` in LP layout.
    transport_cost: Vec<f64>,
    warm: Option<Basis>,
    last_duals: Option<(Vec<f64>, Vec<f64>)>,
}

impl PlanProblem<'_, '_> {
    fn n(&self) -> usize {
        self.scheme.grid.cell_count()
    }

    fn marginal(&self, theta: &[f64]) -> PhaseField {
        let n = self.n();
        let np = self.scheme.medium.phase_count();
        let mut s = vec![vec![0.0; n]; np];
        for (r, row) in theta.chunks(n).enumerate() {
            let i = r / n;
            for (x, v) in row.iter().enumerate() {
                s[i][x] += v;
            }
        }
        PhaseField::new(s)
    }

    fn energy_grad(&self, s: &PhaseField) -> Vec<Vec<f64>> {
        energy_gradient(self.scheme.model, self.scheme.grid, self.scheme.medium, s)
    }
}

impl FwProblem for PlanProblem<'_, '_> {
    type Error = JkoError;

    fn gradient(&mut self, theta: &[f64]) -> Vec<f64> {
        let n = self.n();
        let g = self.energy_grad(&self.marginal(theta));
        let mut out = self.transport_cost.clone();
        for (r, row) in out.chunks_mut(n).enumerate() {
            let gi = &g[r / n];
            for (c, gx) in row.iter_mut().zip(gi) {
                *c += gx;
            }
        }
        out
    }

    fn linear_oracle(&mut self, grad: &[f64]) -> Result<Vec<f64>, JkoError> {
        let sol = simplex::solve(&self.supply, &self.demand, grad, self.warm.take()).map_err(JkoError::Lp)?;
        let n = self.n();
        let mut v = vec![0.0; self.supply.len() * n];
        for (&(r, c), f) in sol.basis.cells.iter().zip(&sol.basis.flows) {
            v[r * n + c] += f;
        }
        self.warm = Some(sol.basis);
        self.last_duals = Some((sol.u, sol.v));
        Ok(v)
    }

    fn slope(&mut self, theta: &[f64], d: &[f64], t: f64) -> f64 {
        let lin: f64 = self.transport_cost.iter().zip(d).map(|(c, di)| c * di).sum();
        let s = self.marginal(theta);
        let ds = self.marginal(d);
        let st = PhaseField::new(
            s.masses.iter().zip(&ds.masses).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + t * v).collect()).collect(),
        );
        let g = self.energy_grad(&st);
        lin + g.iter().flatten().zip(ds.masses.iter().flatten()).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Transport objective, potentials and per-phase plan costs.
type EntropicEval = (f64, Vec<Vec<f64>>, Vec<f64>);

/// Entropic problem in `s`: atoms are `s_prev` and bathtub vertices.
struct StateProblem<'a, 'b> {
    scheme: &'b Scheme<'a>,
    s_prev: &'b PhaseField,
    tau: f64,
    epsilon: f64,
    sinkhorn: &'b SinkhornOptions,
    omega: Vec<f64>,
    warm: Vec<PhaseWarm>,
    failure: Option<JkoError>,
}

/// Per-phase Sinkhorn state carried between evaluations within one step.
struct PhaseWarm {
    target: Option<Arc<SelfPotential>>,
    dual: Option<DualState>,
}

impl StateProblem<'_, '_> {
    fn field_gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, JkoError> {
        let np = self.scheme.medium.phase_count();
        let s = PhaseField::unflatten(x, np);
        let (_, phi, _) =
            self.scheme.entropic_eval(&s, self.s_prev, self.tau, self.epsilon, self.sinkhorn, &mut self.warm)?;
        Ok(assemble_f(self.scheme.model, self.scheme.grid, self.scheme.medium, &s, &phi, self.tau)?.concat())
    }
}

impl FwProblem for StateProblem<'_, '_> {
    type Error = JkoError;

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        match self.field_gradient(x) {
            Ok(g) => g,
            Err(e) => {
                // surfaced by the oracle, which sees the NaN gradient next
                self.failure = Some(e);
                vec![f64::NAN; x.len()]
            }
        }
    }

    fn linear_oracle(&mut self, grad: &[f64]) -> Result<Vec<f64>, JkoError> {
        if let Some(e) = self.failure.take() {
            return Err(e);
        }
        let n = self.scheme.grid.cell_count();
        let f = grad.chunks(n).map(<[f64]>::to_vec).collect();
        let inst = BathtubInstance::new(f, self.omega.clone(), self.scheme.medium.masses.clone())?;
        Ok(solve_bathtub(&inst, &BathtubOptions::default())?.s.concat())
    }

    fn slope(&mut self, x: &[f64], d: &[f64], t: f64) -> f64 {
        let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| (a + t * b).max(0.0)).collect();
        match self.field_gradient(&y) {
            Ok(g) => g.iter().zip(d).map(|(a, b)| a * b).sum(),
            Err(e) => {
                self.failure = Some(e);
                // report an uphill slope so the search stays where it is
                f64::INFINITY
            }
        }
    }

    fn slope_tolerance(&self) -> f64 {
        1e-4
    }
}

struct StepCore {
    s_new: PhaseField,
    phi: Vec<Vec<f64>>,
    w2: Vec<f64>,
    gap: f64,
    iterations: usize,
}

impl<'a> Scheme<'a> {
    pub fn energy(&self, s: &PhaseField) -> f64 {
        energy_unchecked(self.model, self.grid, self.medium, s)
    }

    fn pore_masses(&self) -> Vec<f64> {
        self.medium.porosity.iter().map(|w| w * self.grid.cell_volume()).collect()
    }

    fn exact_core(&self, s_prev: &PhaseField, tau: f64, opts: &JkoOptions, tol: f64) -> Result<StepCore, JkoError> {
        let n = self.grid.cell_count();
        let np = self.medium.phase_count();
        let mut transport_cost = Vec::with_capacity(np * n * n);
        for i in 0..np {
            let c = self.costs.phase(i);
            for y in 0..n {
                for x in 0..n {
                    transport_cost.push(c.get(x, y) / (2.0 * tau));
                }
            }
        }
        let mut prob = PlanProblem {
            scheme: self,
            tau,
            supply: s_prev.flatten().iter().map(|v| v.max(0.0)).collect(),
            demand: self.pore_masses(),
            transport_cost,
            warm: None,
            last_duals: None,
        };
        // the identity plan is a vertex (each source feeds one sink)
        let mut start = vec![0.0; np * n * n];
        for i in 0..np {
            for y in 0..n {
                start[(i * n + y) * n + y] = prob.supply[i * n + y];
            }
        }
        let out = pairwise_fw(&mut prob, start, tol, opts.max_fw_iter)?;
        let s_new = prob.marginal(&out.x);
        // duals of the LP at the final gradient give psi_i(y) = tau u_(i,y)
        if prob.last_duals.is_none() {
            let g = prob.gradient(&out.x);
            prob.linear_oracle(&g)?;
        }
        let (u, _) = prob.last_duals.take().expect("oracle was called");
        let phi: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let c = self.costs.phase(i);
                let mut phi: Vec<f64> = (0..n)
                    .map(|x| (0..n).map(|y| 0.5 * c.get(x, y) - prob.tau * u[i * n + y]).fold(f64::INFINITY, f64::min))
                    .collect();
                let shift = phi[0];
                phi.iter_mut().for_each(|p| *p -= shift);
                phi
            })
            .collect();
        let w2 = (0..np)
            .into_par_iter()
            .map(|i| {
                let a = MassVector::from_slice_clamped(s_new.phase(i));
                let b = MassVector::from_slice_clamped(s_prev.phase(i));
                exact_w2(self.costs.phase(i), &a, &b).map(|r| r.value)
            })
            .collect::<Result<Vec<f64>, TransportError>>()?;
        Ok(StepCore { s_new, phi, w2, gap: out.gap, iterations: out.iterations })
    }

    fn phase_warm(&self, s_prev: &PhaseField, epsilon: f64, opts: &SinkhornOptions) -> Vec<PhaseWarm> {
        (0..self.medium.phase_count())
            .into_par_iter()
            .map(|i| PhaseWarm {
                target: opts.debias.then(|| {
                    let b = MassVector::from_slice_clamped(s_prev.phase(i));
                    Arc::new(self_potential(self.costs.phase(i), &b, epsilon, opts))
                }),
                dual: None,
            })
            .collect()
    }

    /// Per-phase entropic evaluation: objective, potentials and plan costs.
    fn entropic_eval(
        &self,
        s: &PhaseField,
        s_prev: &PhaseField,
        tau: f64,
        epsilon: f64,
        opts: &SinkhornOptions,
        warm: &mut [PhaseWarm],
    ) -> Result<EntropicEval, JkoError> {
        let results = warm
            .par_iter_mut()
            .enumerate()
            .map(|(i, w)| {
                let a = MassVector::from_slice_clamped(s.phase(i));
                let b = MassVector::from_slice_clamped(s_prev.phase(i));
                let local = SinkhornOptions {
                    warm_start: w.dual.as_ref().map(|d| d.g.clone()),
                    source_self_warm: w.dual.as_ref().and_then(|d| d.source_self.clone()),
                    target_self: w.target.clone(),
                    ..opts.clone()
                };
                let r = sinkhorn_w2(self.costs.phase(i), &a, &b, epsilon, &local)?;
                w.dual = r.dual_state.clone();
                Ok(r)
            })
            .collect::<Result<Vec<_>, TransportError>>()?;
        let transport: f64 = results.iter().map(|r| r.objective_value()).sum();
        let obj = transport / (2.0 * tau) + self.energy(s);
        let phi = results.iter().map(|r| r.phi.clone()).collect();
        let w2 = results.iter().map(|r| r.value).collect();
        Ok((obj, phi, w2))
    }

    fn entropic_pairwise(
        &self,
        s_prev: &PhaseField,
        tau: f64,
        epsilon: f64,
        opts: &JkoOptions,
        tol: f64,
    ) -> Result<StepCore, JkoError> {
        let mut prob = StateProblem {
            scheme: self,
            s_prev,
            tau,
            epsilon,
            sinkhorn: &opts.sinkhorn,
            omega: self.pore_masses(),
            warm: self.phase_warm(s_prev, epsilon, &opts.sinkhorn),
            failure: None,
        };
        let out = pairwise_fw(&mut prob, s_prev.flatten(), tol, opts.max_fw_iter)?;
        if let Some(e) = prob.failure.take() {
            return Err(e);
        }
        let s_new = PhaseField::unflatten(&out.x, self.medium.phase_count());
        let (_, phi, w2) = self.entropic_eval(&s_new, s_prev, tau, epsilon, &opts.sinkhorn, &mut prob.warm)?;
        Ok(StepCore { s_new, phi, w2, gap: out.gap, iterations: out.iterations })
    }

    fn entropic_core(
        &self,
        s_prev: &PhaseField,
        tau: f64,
        epsilon: f64,
        opts: &JkoOptions,
        tol: f64,
    ) -> Result<StepCore, JkoError> {
        let n = self.grid.cell_count();
        let omega = self.pore_masses();
        let mut s = s_prev.clone();
        let mut warm = self.phase_warm(s_prev, epsilon, &opts.sinkhorn);
        let (mut obj, mut phi, mut w2) = self.entropic_eval(&s, s_prev, tau, epsilon, &opts.sinkhorn, &mut warm)?;
        let mut gap = f64::INFINITY;
        let mut k = 0;
        while k < opts.max_fw_iter {
            let f = assemble_f(self.model, self.grid, self.medium, &s, &phi, tau)?;
            let inst = BathtubInstance::new(f.clone(), omega.clone(), self.medium.masses.clone())?;
            let d = solve_bathtub(&inst, &BathtubOptions::default())?.s;
            gap = f
                .iter()
                .zip(&s.masses)
                .zip(&d)
                .map(|((fi, si), di)| (0..n).map(|x| fi[x] * (si[x] - di[x])).sum::<f64>())
                .sum();
            if gap <= tol {
                break;
            }
            let mut t = 2.0 / (k as f64 + 2.0);
            let mut accepted = None;
            for _ in 0..=opts.armijo_backtracks {
                let trial = PhaseField::new(
                    s.masses
                        .iter()
                        .zip(&d)
                        .map(|(si, di)| si.iter().zip(di).map(|(a, b)| a + t * (b - a)).collect())
                        .collect(),
                );
                let eval = self.entropic_eval(&trial, s_prev, tau, epsilon, &opts.sinkhorn, &mut warm)?;
                if eval.0 <= obj - opts.armijo_c * t * gap {
                    accepted = Some((trial, eval));
                    break;
                }
                t *= 0.5;
            }
            k += 1;
            match accepted {
                Some((trial, (o, p, w))) => {
                    s = trial;
                    obj = o;
                    phi = p;
                    w2 = w;
                }
                None => {
                    // the entropic gradient is inexact at the scale of epsilon;
                    // a stall with a gap well above tolerance is a failure
                    if gap > 1e3 * tol {
                        return Err(JkoError::LineSearch { iteration: k, gap, objective: obj });
                    }
                    break;
                }
            }
        }
        Ok(StepCore { s_new: s, phi, w2, gap: gap.max(0.0), iterations: k })
    }

    /// One minimizing-movement step from `s_prev`.
    pub fn jko_step(&self, s_prev: &PhaseField, tau: f64, opts: &JkoOptions) -> Result<JkoStepRecord, JkoError> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(JkoError::Tau(tau));
        }
        s_prev.check_admissible(self.grid, self.medium, 1e-9)?;
        let energy_before = self.energy(s_prev);
        let mut regularization = 0.0;
        let mut target = s_prev.clone();
        if let (SolverMode::Entropic { .. }, Some(pos)) = (opts.mode, opts.positivity) {
            let r = regularize_positive(s_prev, self.grid, self.medium, pos.delta, pos.floor, pos.cap)?;
            regularization = r.delta;
            target = r.state;
        }
        let tol = opts.fw_tol * (1.0 + energy_before.abs());
        let core = match opts.mode {
            SolverMode::Exact => self.exact_core(&target, tau, opts, tol)?,
            SolverMode::Entropic { epsilon } if opts.pairwise => {
                self.entropic_pairwise(&target, tau, epsilon, opts, tol)?
            }
            SolverMode::Entropic { epsilon } => self.entropic_core(&target, tau, epsilon, opts, tol)?,
        };
        let drift =
            core.s_new.saturation_drift(self.grid, self.medium).max(core.s_new.mass_drift(self.grid, self.medium));
        if drift > 1e-9 {
            return Err(JkoError::Drift(drift));
        }
        let f = assemble_f(self.model, self.grid, self.medium, &core.s_new, &core.phi, tau)?;
        let inst = BathtubInstance::new(f.clone(), self.pore_masses(), self.medium.masses.clone())?;
        let bath = solve_bathtub(&inst, &BathtubOptions::default())?;
        let pressures = reconstruct_pressures(&f, &core.phi, &bath.lambda, self.medium, tau);
        let energy_after = self.energy(&core.s_new);
        let w2_total: f64 = core.w2.iter().sum();
        Ok(JkoStepRecord {
            pi: capillary_fields(self.model, self.grid, &core.s_new),
            s_prev: target,
            s_new: core.s_new,
            tau,
            phi: core.phi,
            f,
            alpha: bath.alpha,
            lambda: bath.lambda,
            h: pressures.h,
            p: pressures.p,
            fw_gap: core.gap,
            fw_iterations: core.iterations,
            w2: core.w2,
            energy_before,
            energy_after,
            objective: w2_total / (2.0 * tau) + energy_after,
            regularization,
            mode: opts.mode,
        })
    }

    /// Run `steps` steps from `s0`. `on_step` sees every record as soon as it
    /// is produced (for persistence); an error from a step ends the run and
    /// is returned next to the partial trajectory.
    pub fn run_simulation<E>(
        &self,
        s0: &PhaseField,
        tau: f64,
        steps: usize,
        opts: &JkoOptions,
        mut on_step: impl FnMut(usize, &JkoStepRecord) -> Result<(), E>,
    ) -> RunOutcome<E>
    where
        E: From<JkoError>,
    {
        let mut traj = Trajectory { states: vec![s0.clone()], records: Vec::new() };
        for n in 1..=steps {
            let prev = traj.states.last().expect("nonempty");
            let rec = match self.jko_step(prev, tau, opts) {
                Ok(r) => r,
                Err(e) => return RunOutcome { trajectory: traj, error: Some(e.into()) },
            };
            if let Err(e) = on_step(n, &rec) {
                traj.states.push(rec.s_new.clone());
                traj.records.push(rec);
                return RunOutcome { trajectory: traj, error: Some(e) };
            }
            traj.states.push(rec.s_new.clone());
            traj.records.push(rec);
        }
        RunOutcome { trajectory: traj, error: None }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `states[n]` is `s^n`; `states[0]` is the initial state.
    pub states: Vec<PhaseField>,
    /// `records[n - 1]` produced `states[n]`.
    pub records: Vec<JkoStepRecord>,
}

pub struct RunOutcome<E> {
    pub trajectory: Trajectory,
    pub error: Option<E>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::QuadraticCapillary;
    use crate::geometry::{build_grid, GridConfig};

    fn column(n: usize) -> (Grid, MediumSpec) {
        let g = build_grid(&GridConfig::line(n, 0.0, 1.0)).unwrap();
        let m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0, 1.0], &[0.5, 0.5]).with_gravity(&g, &[1.0, 3.0], 4.0);
        (g, m)
    }

    fn heavy_on_top(g: &Grid, m: &MediumSpec) -> PhaseField {
        let n = g.cell_count();
        let rho1: Vec<f64> = (0..n).map(|x| if 2 * x >= n { 0.5 } else { 0.0 }).collect();
        let rho0: Vec<f64> = rho1.iter().map(|r| 0.5 - r).collect();
        let s = PhaseField::from_densities(g, &[rho0, rho1]);
        assert!(s.mass_drift(g, m) < 1e-14);
        s
    }

    #[test]
    fn single_phase_step_is_trivial() {
        let g = build_grid(&GridConfig::line(6, 0.0, 1.0)).unwrap();
        let m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0], &[1.0]).with_gravity(&g, &[1.0], 1.0);
        let model = QuadraticCapillary::disabled(6, 0);
        let costs = CostBundle::build(&g, &m).unwrap();
        let scheme = Scheme { grid: &g, medium: &m, model: &model, costs: &costs };
        let s0 = PhaseField::proportional(&g, &m);
        for opts in [JkoOptions::exact(), JkoOptions::entropic(1e-2 * costs.phase(0).median_offdiag())] {
            let rec = scheme.jko_step(&s0, 0.1, &opts).unwrap();
            assert_eq!(rec.s_new, s0);
            assert!(rec.w2_total().abs() < 1e-12);
        }
    }

    #[test]
    fn pure_transport_keeps_the_state() {
        let (g, mut m) = column(8);
        m.potentials = vec![vec![0.0; 8]; 2];
        let model = QuadraticCapillary::disabled(8, 1);
        let costs = CostBundle::build(&g, &m).unwrap();
        let scheme = Scheme { grid: &g, medium: &m, model: &model, costs: &costs };
        let s0 = heavy_on_top(&g, &m);
        let rec = scheme.jko_step(&s0, 0.05, &JkoOptions::exact()).unwrap();
        assert_eq!(rec.s_new, s0);
        assert!(rec.fw_gap <= 1e-12);
        assert_eq!(rec.w2_total(), 0.0);
    }

    #[test]
    fn gravity_step_decreases_energy_and_conserves() {
        let (g, m) = column(8);
        let model = QuadraticCapillary::scalar(8, 1, 1.0).unwrap();
        let costs = CostBundle::build(&g, &m).unwrap();
        let scheme = Scheme { grid: &g, medium: &m, model: &model, costs: &costs };
        let s0 = heavy_on_top(&g, &m);
        let rec = scheme.jko_step(&s0, 0.05, &JkoOptions::exact()).unwrap();
        assert!(rec.energy_after < rec.energy_before);
        assert!(rec.objective <= rec.energy_before + rec.fw_gap);
        assert!(rec.w2_total() > 0.0);
        assert!(rec.s_new.mass_drift(&g, &m) < 1e-12);
        assert!(rec.s_new.saturation_drift(&g, &m) < 1e-12);
        assert!(rec.capillary_residual() < 1e-12);
        // equality conditions of the bathtub on the final F
        for i in 0..2 {
            for x in 0..8 {
                let red = rec.f[i][x] + rec.alpha[i] - rec.lambda[x];
                assert!(red >= -1e-9);
                if rec.s_new.masses[i][x] > 1e-9 {
                    assert!(red < 1e-6, "phase {i} cell {x}: {red}");
                }
            }
        }
    }

    #[test]
    fn entropic_step_tracks_exact_step() {
        let (g, m) = column(8);
        let model = QuadraticCapillary::scalar(8, 1, 1.0).unwrap();
        let costs = CostBundle::build(&g, &m).unwrap();
        let scheme = Scheme { grid: &g, medium: &m, model: &model, costs: &costs };
        let s0 = heavy_on_top(&g, &m);
        let exact = scheme.jko_step(&s0, 0.05, &JkoOptions::exact()).unwrap();
        let eps = 1e-2 * costs.phase(0).median_offdiag();
        let ent = scheme.jko_step(&s0, 0.05, &JkoOptions::entropic(eps)).unwrap();
        assert!(ent.s_new.mass_drift(&g, &m) < 1e-12);
        assert!(ent.energy_after < ent.energy_before);
        let rel = (ent.objective - exact.objective).abs() / exact.objective.abs();
        assert!(rel < 0.05, "entropic {} exact {}", ent.objective, exact.objective);
    }

    #[test]
    fn stationary_pressures() {
        let (g, m) = column(4);
        let model = QuadraticCapillary::scalar(4, 1, 1.0).unwrap();
        let s = PhaseField::proportional(&g, &m);
        let phi = vec![vec![0.0; 4]; 2];
        let f = assemble_f(&model, &g, &m, &s, &phi, 0.1).unwrap();
        let lambda: Vec<f64> = (0..4).map(|x| f[0][x].min(f[1][x])).collect();
        let pr = reconstruct_pressures(&f, &phi, &lambda, &m, 0.1);
        let pi = capillary_fields(&model, &g, &s);
        for x in 0..4 {
            assert!(((pr.p[1][x] - pr.p[0][x]) - pi[0][x]).abs() < 1e-15);
            assert!(((pr.h[1][x] - pr.h[0][x]) - (pi[0][x] + m.potentials[1][x] - m.potentials[0][x])).abs() < 1e-14);
        }
        assert!(pr.h[0].iter().sum::<f64>().abs() < 1e-14);
        assert!(assemble_f(&model, &g, &m, &s, &phi[..1], 0.1).is_err());
    }

    #[test]
    fn zero_steps_and_bad_tau() {
        let (g, m) = column(4);
        let model = QuadraticCapillary::scalar(4, 1, 1.0).unwrap();
        let costs = CostBundle::build(&g, &m).unwrap();
        let scheme = Scheme { grid: &g, medium: &m, model: &model, costs: &costs };
        let s0 = heavy_on_top(&g, &m);
        let out = scheme.run_simulation::<JkoError>(&s0, 0.1, 0, &JkoOptions::exact(), |_, _| Ok(()));
        assert_eq!(out.trajectory.states, vec![s0.clone()]);
        assert!(matches!(scheme.jko_step(&s0, 0.0, &JkoOptions::exact()), Err(JkoError::Tau(_))));
    }
}
