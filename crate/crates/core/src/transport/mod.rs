//! Per-phase quadratic Wasserstein distances on cell masses.
//!
//! Two solvers share one result type: an exact transportation simplex for
//! small grids, and a log-domain Sinkhorn iteration for the production path.
//! Potentials are reported for the half-squared cost `d^2 / 2`, so that
//! `sum phi a + sum psi b = W^2 / 2` and `phi` is the first variation of
//! `W^2 / 2` with respect to the source marginal. Every pair is normalized
//! with `phi[0] = 0`.

pub mod simplex;

use std::io::Write;

use thiserror::Error;

use crate::geometry::{CostBundle, CostMatrix};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("marginals have different totals: {0} vs {1}")]
    Unbalanced(f64, f64),
    #[error("marginal length {got} does not match cost size {expected}")]
    Size { expected: usize, got: usize },
    #[error("negative or non-finite mass at cell {0}")]
    BadMass(usize),
    #[error("regularization must be positive, got {0}")]
    Epsilon(f64),
    #[error("sinkhorn did not converge in {iterations} iterations (marginal error {marginal_error:.3e})")]
    NotConverged { iterations: usize, marginal_error: f64 },
    #[error("phase count mismatch: {0} vs {1}")]
    PhaseCount(usize, usize),
    #[error("transport linear program failed: {0:?}")]
    Lp(simplex::LpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nonnegative cell masses with a declared total.
#[derive(Debug, Clone, PartialEq)]
pub struct MassVector {
    masses: Vec<f64>,
    total: f64,
}

impl MassVector {
    pub fn new(masses: Vec<f64>) -> Result<Self, TransportError> {
        if let Some(k) = masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(TransportError::BadMass(k));
        }
        let total = masses.iter().sum();
        Ok(Self { masses, total })
    }

    /// Clamp round-off negatives (as produced by convex combinations) to zero.
    pub fn from_slice_clamped(masses: &[f64]) -> Self {
        let masses: Vec<f64> = masses.iter().map(|m| m.max(0.0)).collect();
        let total = masses.iter().sum();
        Self { masses, total }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverMode {
    Exact,
    Entropic { epsilon: f64 },
}

#[derive(Debug, Clone)]
pub struct TransportResult {
    /// Transport cost `sum theta * Csq` of the returned plan (approximates `W^2`).
    pub value: f64,
    /// Entropic dual objective; equals `value` in exact mode.
    pub regularized_value: f64,
    /// Sinkhorn divergence, when debiasing was requested.
    pub debiased_value: Option<f64>,
    /// Row-major `source x target` plan.
    pub plan: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub mode: SolverMode,
    pub iterations: usize,
    pub marginal_error: f64,
    /// Entropic mode: raw dual state for warm-starting a nearby solve.
    pub dual_state: Option<DualState>,
}

/// Unnormalized entropic duals on every cell (cost units).
#[derive(Debug, Clone)]
pub struct DualState {
    /// Target potential, usable as [`SinkhornOptions::warm_start`].
    pub g: Vec<f64>,
    /// Self-transport potential of the source (debiased solves only),
    /// usable as [`SinkhornOptions::source_self_warm`].
    pub source_self: Option<Vec<f64>>,
}

/// Symmetric entropic potential of a measure onto itself and its
/// regularized value for the normalized measure.
#[derive(Debug, Clone)]
pub struct SelfPotential {
    pub potential: Vec<f64>,
    pub value: f64,
}

impl TransportResult {
    /// Value of the objective whose gradient is `2 phi`: the debiased or the
    /// regularized value in entropic mode, `W^2` in exact mode.
    pub fn objective_value(&self) -> f64 {
        self.debiased_value.unwrap_or(self.regularized_value)
    }

    pub fn write_plan_csv<W: Write>(&self, n_target: usize, out: &mut W) -> Result<(), TransportError> {
        writeln!(out, "# schema=1")?;
        writeln!(out, "from_cell,to_cell,mass")?;
        for (k, &m) in self.plan.iter().enumerate() {
            if m > 0.0 {
                writeln!(out, "{},{},{:.17e}", k / n_target, k % n_target, m)?;
            }
        }
        Ok(())
    }
}

fn check_pair(cost: &CostMatrix, a: &MassVector, b: &MassVector) -> Result<(), TransportError> {
    let n = cost.size();
    for v in [a, b] {
        if v.len() != n {
            return Err(TransportError::Size { expected: n, got: v.len() });
        }
    }
    let scale = a.total().max(b.total()).max(f64::MIN_POSITIVE);
    if (a.total() - b.total()).abs() > 1e-10 * scale {
        return Err(TransportError::Unbalanced(a.total(), b.total()));
    }
    Ok(())
}

fn marginal_error(plan: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let m = b.len();
    let mut err = 0.0;
    let mut cols = vec![0.0; m];
    for (i, ai) in a.iter().enumerate() {
        let row = &plan[i * m..(i + 1) * m];
        err += (row.iter().sum::<f64>() - ai).abs();
        for (c, p) in cols.iter_mut().zip(row) {
            *c += p;
        }
    }
    err + cols.iter().zip(b).map(|(c, bj)| (c - bj).abs()).sum::<f64>()
}

/// Shift so that `phi[0] = 0` while keeping `phi + psi` unchanged.
fn normalize(phi: &mut [f64], psi: &mut [f64]) {
    let shift = phi[0];
    phi.iter_mut().for_each(|p| *p -= shift);
    psi.iter_mut().for_each(|p| *p += shift);
}

/// `phi(x) = min_y (Csq(x,y)/2 - psi(y))`.
fn c_transform(cost: &CostMatrix, psi: &[f64]) -> Vec<f64> {
    (0..cost.size())
        .map(|x| cost.row(x).iter().zip(psi).map(|(c, p)| 0.5 * c - p).fold(f64::INFINITY, f64::min))
        .collect()
}

/// `psi(y) = min_x (Csq(x,y)/2 - phi(x))`.
fn c_transform_target(cost: &CostMatrix, phi: &[f64]) -> Vec<f64> {
    let n = cost.size();
    (0..n).map(|y| (0..n).map(|x| 0.5 * cost.get(x, y) - phi[x]).fold(f64::INFINITY, f64::min)).collect()
}

/// Exact `W^2` by the transportation simplex.
pub fn exact_w2(cost: &CostMatrix, a: &MassVector, b: &MassVector) -> Result<TransportResult, TransportError> {
    check_pair(cost, a, b)?;
    let n = cost.size();
    let (av, bv) = (a.as_slice(), b.as_slice());
    let scale = a.total().max(f64::MIN_POSITIVE);
    if av.iter().zip(bv).all(|(x, y)| (x - y).abs() <= 1e-15 * scale) {
        let mut plan = vec![0.0; n * n];
        for (x, m) in av.iter().enumerate() {
            plan[x * n + x] = *m;
        }
        return Ok(TransportResult {
            value: 0.0,
            regularized_value: 0.0,
            debiased_value: None,
            plan,
            phi: vec![0.0; n],
            psi: vec![0.0; n],
            mode: SolverMode::Exact,
            iterations: 0,
            marginal_error: 0.0,
            dual_state: None,
        });
    }
    let sol = simplex::solve(av, bv, cost.as_slice(), None).map_err(TransportError::Lp)?;
    let mut plan = vec![0.0; n * n];
    for (&(i, j), f) in sol.basis.cells.iter().zip(&sol.basis.flows) {
        plan[i * n + j] += f.max(0.0);
    }
    // halve for the d^2/2 convention and make the pair c-conjugate
    let psi0: Vec<f64> = sol.v.iter().map(|v| 0.5 * v).collect();
    let mut phi = c_transform(cost, &psi0);
    let mut psi = c_transform_target(cost, &phi);
    normalize(&mut phi, &mut psi);
    let err = marginal_error(&plan, av, bv);
    Ok(TransportResult {
        value: sol.value,
        regularized_value: sol.value,
        debiased_value: None,
        plan,
        phi,
        psi,
        mode: SolverMode::Exact,
        iterations: sol.pivots,
        marginal_error: err,
        dual_state: None,
    })
}

#[derive(Debug, Clone)]
pub struct SinkhornOptions {
    /// Stop when the marginal L1 error is below `tol * total`.
    pub tol: f64,
    pub max_iter: usize,
    /// Target potential from a previous [`DualState`] to start from.
    pub warm_start: Option<Vec<f64>>,
    pub debias: bool,
    /// Start for the self-transport fixed point of the source.
    pub source_self_warm: Option<Vec<f64>>,
    /// Precomputed self-transport potential of the target.
    pub target_self: Option<std::sync::Arc<SelfPotential>>,
    /// Anneal epsilon down from the cost scale when there is no warm start.
    pub epsilon_scaling: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50_000,
            warm_start: None,
            debias: false,
            source_self_warm: None,
            target_self: None,
            epsilon_scaling: true,
        }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + values.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn on the supports of `a` and `b` (probability-normalized).
struct Supported<'a> {
    cost: &'a CostMatrix,
    rows: Vec<usize>,
    cols: Vec<usize>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

impl Supported<'_> {
    fn update_f(&self, g: &[f64], eps: f64, f: &mut [f64]) {
        for (k, &x) in self.rows.iter().enumerate() {
            let row = self.cost.row(x);
            let it = self.cols.iter().enumerate().map(|(l, &y)| (g[l] - row[y]) / eps + self.log_b[l]);
            f[k] = -eps * log_sum_exp(it);
        }
    }

    fn update_g(&self, f: &[f64], eps: f64, g: &mut [f64]) {
        for (l, &y) in self.cols.iter().enumerate() {
            let it = self.rows.iter().enumerate().map(|(k, &x)| (f[k] - self.cost.get(x, y)) / eps + self.log_a[k]);
            g[l] = -eps * log_sum_exp(it);
        }
    }

    fn row_error(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let row = self.cost.row(x);
                let s: f64 = self
                    .cols
                    .iter()
                    .enumerate()
                    .map(|(l, &y)| ((f[k] + g[l] - row[y]) / eps + self.log_b[l]).exp())
                    .sum();
                self.log_a[k].exp() * (s - 1.0).abs()
            })
            .sum()
    }
    /// Column-marginal L1 error after `f` has been set to the soft c-transform of `g`.
    fn col_error(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        self.cols
            .iter()
            .enumerate()
            .map(|(l, &y)| {
                let s: f64 = self
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| ((f[k] + g[l] - self.cost.get(x, y)) / eps + self.log_a[k]).exp())
                    .sum();
                self.log_b[l].exp() * (s - 1.0).abs()
            })
            .sum()
    }

    fn semi_dual(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(&self.log_a).map(|(v, la)| v * la.exp()).sum::<f64>()
            + g.iter().zip(&self.log_b).map(|(v, lb)| v * lb.exp()).sum::<f64>()
    }

    /// Damped Newton ascent on the semi-dual in `g` (with `f` its soft
    /// c-transform). Sinkhorn slows to a crawl once `eps` is far below the
    /// neighbour cost; the semi-dual Hessian is cheap at the grid sizes used
    /// here and converges quadratically. Returns (error, steps).
    fn newton(&self, f: &mut [f64], g: &mut [f64], eps: f64, tol: f64, max_steps: usize) -> (f64, usize) {
        let m = self.cols.len();
        let nr = self.rows.len();
        self.update_f(g, eps, f);
        let mut err = self.col_error(f, g, eps);
        let mut steps = 0;
        if m < 2 {
            return (err, steps);
        }
        let mut plan = vec![0.0; nr * m];
        while err >= tol && steps < max_steps {
            steps += 1;
            let mut colsum = vec![0.0; m];
            for (k, &x) in self.rows.iter().enumerate() {
                let row = self.cost.row(x);
                for (l, &y) in self.cols.iter().enumerate() {
                    let p = ((f[k] + g[l] - row[y]) / eps + self.log_a[k] + self.log_b[l]).exp();
                    plan[k * m + l] = p;
                    colsum[l] += p;
                }
            }
            let grad: Vec<f64> = (0..m).map(|l| self.log_b[l].exp() - colsum[l]).collect();
            // reduced system without column 0, whose potential is the gauge
            let r = m - 1;
            let mut h = nalgebra::DMatrix::<f64>::zeros(r, r);
            for (k, la) in self.log_a.iter().enumerate() {
                let ak = la.exp();
                let prow = &plan[k * m..(k + 1) * m];
                for i in 1..m {
                    let pi = prow[i] / ak;
                    if pi == 0.0 {
                        continue;
                    }
                    for j in 1..m {
                        h[(i - 1, j - 1)] -= pi * prow[j];
                    }
                }
            }
            let mut diag_max = 0.0f64;
            for i in 1..m {
                h[(i - 1, i - 1)] += colsum[i];
                diag_max = diag_max.max(colsum[i]);
            }
            for i in 0..r {
                h[(i, i)] += 1e-13 * diag_max.max(f64::MIN_POSITIVE);
            }
            let rhs = nalgebra::DVector::from_iterator(r, grad[1..].iter().map(|v| eps * v));
            let Some(dir) = h.cholesky().map(|c| c.solve(&rhs)) else {
                break;
            };
            let base = self.semi_dual(f, g);
            let slope: f64 = dir.iter().zip(&grad[1..]).map(|(d, gr)| d * gr).sum();
            let mut t = 1.0;
            let mut trial_g = g.to_vec();
            let mut trial_f = f.to_vec();
            let mut accepted = false;
            for _ in 0..40 {
                for i in 1..m {
                    trial_g[i] = g[i] + t * dir[i - 1];
                }
                self.update_f(&trial_g, eps, &mut trial_f);
                // near the optimum the ascent drops below the resolution of
                // the value; a decrease of the marginal error also counts
                if self.semi_dual(&trial_f, &trial_g) >= base + 1e-4 * t * slope
                    || self.col_error(&trial_f, &trial_g, eps) < 0.5 * err
                {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            g.copy_from_slice(&trial_g);
            f.copy_from_slice(&trial_f);
            err = self.col_error(f, g, eps);
        }
        (err, steps)
    }
}

/// Symmetric entropic transport of `a` onto itself; returns the full-length
/// potential (cost units) and the regularized value for the normalized measure.
fn symmetric_potential(
    cost: &CostMatrix,
    a: &[f64],
    eps: f64,
    opts: &SinkhornOptions,
    warm: Option<&[f64]>,
) -> (Vec<f64>, f64) {
    let total: f64 = a.iter().sum();
    let support: Vec<usize> = (0..a.len()).filter(|&x| a[x] > 0.0).collect();
    let log_a: Vec<f64> = support.iter().map(|&x| (a[x] / total).ln()).collect();
    let mut f: Vec<f64> = match warm {
        Some(w) if w.len() == a.len() => support.iter().map(|&x| w[x]).collect(),
        _ => vec![0.0; support.len()],
    };
    let mut next = vec![0.0; support.len()];
    let mut stage = if warm.is_some() { eps } else { cost.max().max(eps) };
    let mut iterations = 0;
    loop {
        let e = stage;
        while iterations < opts.max_iter.max(1) {
            for (k, &x) in support.iter().enumerate() {
                let row = cost.row(x);
                let it = support.iter().enumerate().map(|(l, &y)| (f[l] - row[y]) / e + log_a[l]);
                next[k] = 0.5 * (f[k] - e * log_sum_exp(it));
            }
            iterations += 1;
            let change = next.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            std::mem::swap(&mut f, &mut next);
            if change < 1e-13 * (1.0 + cost.max()) || (e > eps && change < 1e-6 * e) {
                break;
            }
        }
        if e <= eps {
            break;
        }
        stage = (stage * 0.5).max(eps);
    }
    let value = 2.0 * support.iter().enumerate().map(|(k, _)| f[k] * log_a[k].exp()).sum::<f64>();
    let full = (0..a.len())
        .map(|x| {
            let row = cost.row(x);
            -eps * log_sum_exp(support.iter().enumerate().map(|(l, &y)| (f[l] - row[y]) / eps + log_a[l]))
        })
        .collect();
    (full, value)
}

/// Self-transport potential of `a`, for reuse through
/// [`SinkhornOptions::target_self`] when `a` is the target of many solves.
pub fn self_potential(cost: &CostMatrix, a: &MassVector, epsilon: f64, opts: &SinkhornOptions) -> SelfPotential {
    let (potential, value) = symmetric_potential(cost, a.as_slice(), epsilon, opts, None);
    SelfPotential { potential, value }
}

/// Entropic `W^2` by log-domain Sinkhorn iterations.
///
/// Zero-mass cells are pruned before scaling; potentials on pruned cells are
/// filled by the entropic c-transform, which is the gradient of the
/// regularized cost with respect to adding mass there.
pub fn sinkhorn_w2(
    cost: &CostMatrix,
    a: &MassVector,
    b: &MassVector,
    epsilon: f64,
    opts: &SinkhornOptions,
) -> Result<TransportResult, TransportError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(TransportError::Epsilon(epsilon));
    }
    check_pair(cost, a, b)?;
    let n = cost.size();
    let total = a.total();
    let rows: Vec<usize> = (0..n).filter(|&x| a.as_slice()[x] > 0.0).collect();
    let cols: Vec<usize> = (0..n).filter(|&y| b.as_slice()[y] > 0.0).collect();
    let sup = Supported {
        cost,
        log_a: rows.iter().map(|&x| (a.as_slice()[x] / total).ln()).collect(),
        log_b: cols.iter().map(|&y| (b.as_slice()[y] / b.total()).ln()).collect(),
        rows,
        cols,
    };
    // Debiasing starts from the self-transport potential of `b`: for a = b
    // this is already the fixed point, which pins the (numerically flat)
    // dual direction and keeps the debiased potentials at zero.
    let symmetric = opts.debias.then(|| {
        let source = symmetric_potential(cost, a.as_slice(), epsilon, opts, opts.source_self_warm.as_deref());
        let target = match &opts.target_self {
            Some(t) if t.potential.len() == n => (t.potential.clone(), t.value),
            _ => symmetric_potential(cost, b.as_slice(), epsilon, opts, None),
        };
        (source, target)
    });
    let mut f = vec![0.0; sup.rows.len()];
    let mut g: Vec<f64> = match (&symmetric, &opts.warm_start) {
        (_, Some(w)) if w.len() == n => sup.cols.iter().map(|&y| w[y]).collect(),
        (Some((_, (gb, _))), _) => sup.cols.iter().map(|&y| gb[y]).collect(),
        _ => vec![0.0; sup.cols.len()],
    };
    let mut iterations = 0;
    if symmetric.is_none() && opts.warm_start.is_none() && opts.epsilon_scaling {
        let mut eps = cost.max().max(epsilon);
        while eps > epsilon {
            for k in 0..500 {
                sup.update_f(&g, eps, &mut f);
                sup.update_g(&f, eps, &mut g);
                iterations += 1;
                if k % 5 == 4 && sup.row_error(&f, &g, eps) < 1e-3 {
                    break;
                }
            }
            eps = (eps * 0.5).max(epsilon);
            if eps == epsilon {
                break;
            }
        }
    }
    let tol = opts.tol;
    let mut err = f64::INFINITY;
    let sinkhorn_budget = opts.max_iter.min(iterations + 100);
    while iterations < sinkhorn_budget {
        sup.update_f(&g, epsilon, &mut f);
        sup.update_g(&f, epsilon, &mut g);
        iterations += 1;
        if iterations % 5 == 0 || iterations == sinkhorn_budget {
            err = sup.row_error(&f, &g, epsilon);
            if err < tol {
                break;
            }
        }
    }
    if err >= tol && iterations < opts.max_iter {
        let (e, steps) = sup.newton(&mut f, &mut g, epsilon, tol, 100);
        iterations += steps;
        err = e;
    }
    // plain iterations as the fallback when the polish stalls
    while err >= tol && iterations < opts.max_iter {
        sup.update_f(&g, epsilon, &mut f);
        sup.update_g(&f, epsilon, &mut g);
        iterations += 1;
        if iterations % 5 == 0 {
            err = sup.row_error(&f, &g, epsilon);
        }
    }
    if err >= tol {
        err = sup.row_error(&f, &g, epsilon).max(sup.col_error(&f, &g, epsilon));
        if err >= tol {
            return Err(TransportError::NotConverged { iterations, marginal_error: err * total });
        }
    }

    let mut plan = vec![0.0; n * n];
    let mut value = 0.0;
    for (k, &x) in sup.rows.iter().enumerate() {
        let row = cost.row(x);
        for (l, &y) in sup.cols.iter().enumerate() {
            let p = ((f[k] + g[l] - row[y]) / epsilon + sup.log_a[k] + sup.log_b[l]).exp() * total;
            plan[x * n + y] = p;
            value += p * row[y];
        }
    }
    let regularized = total
        * (f.iter().zip(&sup.log_a).map(|(fi, la)| fi * la.exp()).sum::<f64>()
            + g.iter().zip(&sup.log_b).map(|(gj, lb)| gj * lb.exp()).sum::<f64>());

    // entropic c-transforms extend the potentials to every cell
    let full_f: Vec<f64> = (0..n)
        .map(|x| {
            let row = cost.row(x);
            -epsilon * log_sum_exp(sup.cols.iter().enumerate().map(|(l, &y)| (g[l] - row[y]) / epsilon + sup.log_b[l]))
        })
        .collect();
    let full_g: Vec<f64> = (0..n)
        .map(|y| {
            -epsilon
                * log_sum_exp(
                    sup.rows.iter().enumerate().map(|(k, &x)| (f[k] - cost.get(x, y)) / epsilon + sup.log_a[k]),
                )
        })
        .collect();
    let mut phi: Vec<f64> = full_f.iter().map(|v| 0.5 * v).collect();
    let mut psi: Vec<f64> = full_g.iter().map(|v| 0.5 * v).collect();
    let mut debiased_value = None;
    let dual_state =
        Some(DualState { g: full_g.clone(), source_self: symmetric.as_ref().map(|((fa, _), _)| fa.clone()) });
    if let Some(((fa, va), (gb, vb))) = symmetric {
        debiased_value = Some(regularized - 0.5 * total * (va + vb));
        for (p, q) in phi.iter_mut().zip(&fa) {
            *p -= 0.5 * q;
        }
        for (p, q) in psi.iter_mut().zip(&gb) {
            *p -= 0.5 * q;
        }
    }
    normalize(&mut phi, &mut psi);
    let marginal_error = marginal_error(&plan, a.as_slice(), b.as_slice());
    Ok(TransportResult {
        value,
        regularized_value: regularized,
        debiased_value,
        plan,
        phi,
        psi,
        mode: SolverMode::Entropic { epsilon },
        iterations,
        marginal_error,
        dual_state,
    })
}

/// Solve one phase in the requested mode.
pub fn phase_w2(
    cost: &CostMatrix,
    a: &MassVector,
    b: &MassVector,
    mode: SolverMode,
    opts: &SinkhornOptions,
) -> Result<TransportResult, TransportError> {
    match mode {
        SolverMode::Exact => exact_w2(cost, a, b),
        SolverMode::Entropic { epsilon } => sinkhorn_w2(cost, a, b, epsilon, opts),
    }
}

#[derive(Debug, Clone)]
pub struct GlobalDistance {
    pub total: f64,
    pub per_phase: Vec<f64>,
}

/// `W(s, s_hat)^2 = sum_i W_i(s_i, s_hat_i)^2`.
pub fn global_w2(
    bundle: &CostBundle,
    s: &[Vec<f64>],
    s_hat: &[Vec<f64>],
    mode: SolverMode,
    opts: &SinkhornOptions,
) -> Result<GlobalDistance, TransportError> {
    if s.len() != s_hat.len() || s.len() != bundle.phases.len() {
        return Err(TransportError::PhaseCount(s.len(), s_hat.len()));
    }
    let per_phase = s
        .iter()
        .zip(s_hat)
        .enumerate()
        .map(|(i, (a, b))| {
            let r = phase_w2(
                bundle.phase(i),
                &MassVector::from_slice_clamped(a),
                &MassVector::from_slice_clamped(b),
                mode,
                opts,
            )?;
            Ok(r.value)
        })
        .collect::<Result<Vec<f64>, TransportError>>()?;
    Ok(GlobalDistance { total: per_phase.iter().sum(), per_phase })
}
