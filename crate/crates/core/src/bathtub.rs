//! Multicomponent bathtub problem: minimize `sum_i sum_x F_i(x) s_i(x)` over
//! allocations with per-cell capacities `omega(x)` and per-phase totals `m_i`.
//!
//! The dual is `J(alpha) = sum_x omega(x) lambda(x) - sum_i alpha_i m_i` with
//! `lambda(x) = min_j (F_j(x) + alpha_j)`. [`solve_bathtub`] maximizes `J` by a
//! primal-dual ascent: a max-flow on the current tie sets either saturates,
//! which yields an optimal allocation, or exposes a min cut whose phases are
//! over-subscribed. Raising their multipliers up to the next tie is an exact
//! ascent step, so the loop terminates after finitely many cuts with a primal
//! allocation and a dual certificate of equal value.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BathtubError {
    #[error("capacities sum to {capacity} but phase totals sum to {mass}")]
    Infeasible { capacity: f64, mass: f64 },
    #[error("instance has no phases or no cells")]
    Empty,
    #[error("field for phase {phase} has {got} cells, expected {expected}")]
    Shape { phase: usize, expected: usize, got: usize },
    #[error("non-finite or negative input: {0}")]
    BadValue(String),
    #[error("dual ascent stalled after {iterations} cuts (unallocated mass {residual:.3e})")]
    Stalled { iterations: usize, residual: f64 },
    #[error("certificate check failed: {0}")]
    Certificate(String),
    #[error("linear program too large for the dense oracle ({0} variables)")]
    TooLarge(usize),
    #[error("dense LP failed: {0}")]
    Lp(String),
}

/// `F[i][x]`, capacities `omega[x]` (mass units) and totals `m[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BathtubInstance {
    pub f: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
    pub m: Vec<f64>,
}

impl BathtubInstance {
    pub fn new(f: Vec<Vec<f64>>, omega: Vec<f64>, m: Vec<f64>) -> Result<Self, BathtubError> {
        let inst = Self { f, omega, m };
        inst.validate()?;
        Ok(inst)
    }

    pub fn phases(&self) -> usize {
        self.f.len()
    }

    pub fn cells(&self) -> usize {
        self.omega.len()
    }

    fn validate(&self) -> Result<(), BathtubError> {
        if self.f.is_empty() || self.omega.is_empty() || self.m.len() != self.f.len() {
            return Err(BathtubError::Empty);
        }
        for (i, row) in self.f.iter().enumerate() {
            if row.len() != self.omega.len() {
                return Err(BathtubError::Shape { phase: i, expected: self.omega.len(), got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(BathtubError::BadValue(format!("F_{i}")));
            }
        }
        if self.omega.iter().chain(&self.m).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(BathtubError::BadValue("omega or m".into()));
        }
        let capacity: f64 = self.omega.iter().sum();
        let mass: f64 = self.m.iter().sum();
        if (capacity - mass).abs() > 1e-10 * capacity.max(mass).max(f64::MIN_POSITIVE) {
            return Err(BathtubError::Infeasible { capacity, mass });
        }
        Ok(())
    }

    /// `max |F|`, used to scale tolerances.
    pub fn field_scale(&self) -> f64 {
        self.f.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn primal_value(&self, s: &[Vec<f64>]) -> f64 {
        self.f.iter().zip(s).map(|(fi, si)| fi.iter().zip(si).map(|(a, b)| a * b).sum::<f64>()).sum()
    }

    /// `lambda_alpha(x) = min_j (F_j(x) + alpha_j)`.
    pub fn lambda(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.cells())
            .map(|x| (0..self.phases()).map(|j| self.f[j][x] + alpha[j]).fold(f64::INFINITY, f64::min))
            .collect()
    }
}

/// `J(alpha)`; concave, piecewise linear and invariant under `alpha + c 1`.
pub fn dual_value(inst: &BathtubInstance, alpha: &[f64]) -> f64 {
    let lambda = inst.lambda(alpha);
    lambda.iter().zip(&inst.omega).map(|(l, w)| l * w).sum::<f64>()
        - alpha.iter().zip(&inst.m).map(|(a, m)| a * m).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct BathtubSolution {
    /// `s[i][x]`.
    pub s: Vec<Vec<f64>>,
    /// Multipliers normalized to `min alpha = 0`.
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    /// Cells whose allocation is split between several phases.
    pub tie_cells: Vec<usize>,
    pub cuts: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BathtubOptions {
    /// Relative tie tolerance used while ascending (times `1 + max|F|`).
    pub tie_tol: f64,
    /// Relative tolerance for the final certificate checks.
    pub check_tol: f64,
}

impl Default for BathtubOptions {
    fn default() -> Self {
        Self { tie_tol: 1e-12, check_tol: 1e-7 }
    }
}

/// Max-flow on source -> cells -> tied phases -> sink (Edmonds-Karp on the
/// bipartite structure; cell-phase arcs are uncapacitated).
struct FlowNet<'a> {
    omega: &'a [f64],
    m: &'a [f64],
    tie: Vec<Vec<bool>>,
    /// `flow[x][j]` on the cell-phase arcs.
    flow: Vec<Vec<f64>>,
    inflow: Vec<f64>,
    outflow: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Node {
    Cell(usize),
    Phase(usize),
}

struct Reach {
    cells: Vec<Option<Option<usize>>>, // parent phase, None when reached from the source
    phases: Vec<Option<usize>>,        // parent cell
    sink_parent: Option<usize>,
}

impl<'a> FlowNet<'a> {
    fn new(omega: &'a [f64], m: &'a [f64], tie: Vec<Vec<bool>>) -> Self {
        let (nc, np) = (omega.len(), m.len());
        Self { omega, m, tie, flow: vec![vec![0.0; np]; nc], inflow: vec![0.0; nc], outflow: vec![0.0; np] }
    }

    fn bfs(&self, eps: f64) -> Reach {
        let (nc, np) = (self.omega.len(), self.m.len());
        let mut r = Reach { cells: vec![None; nc], phases: vec![None; np], sink_parent: None };
        let mut queue = VecDeque::new();
        for x in 0..nc {
            if self.omega[x] - self.inflow[x] > eps {
                r.cells[x] = Some(None);
                queue.push_back(Node::Cell(x));
            }
        }
        while let Some(node) = queue.pop_front() {
            match node {
                Node::Cell(x) => {
                    for j in 0..np {
                        if self.tie[x][j] && r.phases[j].is_none() {
                            r.phases[j] = Some(x);
                            if r.sink_parent.is_none() && self.m[j] - self.outflow[j] > eps {
                                r.sink_parent = Some(j);
                                return r;
                            }
                            queue.push_back(Node::Phase(j));
                        }
                    }
                }
                Node::Phase(j) => {
                    for x in 0..nc {
                        if r.cells[x].is_none() && self.flow[x][j] > eps {
                            r.cells[x] = Some(Some(j));
                            queue.push_back(Node::Cell(x));
                        }
                    }
                }
            }
        }
        r
    }

    fn max_flow(&mut self, eps: f64) -> f64 {
        loop {
            let r = self.bfs(eps);
            let Some(last) = r.sink_parent else {
                return self.inflow.iter().sum();
            };
            // walk back: phase <- cell <- phase <- ... <- cell <- source
            let mut path = Vec::new();
            let mut j = last;
            let mut push = self.m[last] - self.outflow[last];
            loop {
                let x = r.phases[j].unwrap();
                path.push((x, j));
                match r.cells[x].unwrap() {
                    None => {
                        push = push.min(self.omega[x] - self.inflow[x]);
                        break;
                    }
                    Some(prev) => {
                        push = push.min(self.flow[x][prev]);
                        j = prev;
                    }
                }
            }
            self.outflow[last] += push;
            let (x0, _) = *path.last().unwrap();
            self.inflow[x0] += push;
            for (k, &(x, j)) in path.iter().enumerate() {
                self.flow[x][j] += push;
                if k + 1 < path.len() {
                    // the arc we came back through is cancelled
                    if let Some(Some(prev)) = r.cells[x] {
                        self.flow[x][prev] -= push;
                    }
                }
            }
        }
    }
}

/// Solve the bathtub problem exactly (up to floating point).
pub fn solve_bathtub(inst: &BathtubInstance, opts: &BathtubOptions) -> Result<BathtubSolution, BathtubError> {
    inst.validate()?;
    let (np, nc) = (inst.phases(), inst.cells());
    let scale = 1.0 + inst.field_scale();
    let mass_scale = inst.omega.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let tie_tol = opts.tie_tol * scale;
    if np == 1 {
        let s = vec![inst.omega.clone()];
        let lambda = inst.f[0].clone();
        let value = inst.primal_value(&s);
        return Ok(BathtubSolution {
            s,
            alpha: vec![0.0],
            lambda,
            primal_value: value,
            dual_value: value,
            tie_cells: Vec::new(),
            cuts: 0,
        });
    }

    let flow_eps = 1e-15 * mass_scale;
    let mut alpha = vec![0.0; np];
    let max_cuts = 4 * nc * np + 16;
    let mut cuts = 0;
    loop {
        let lambda = inst.lambda(&alpha);
        let tie = (0..nc).map(|x| (0..np).map(|j| inst.f[j][x] + alpha[j] <= lambda[x] + tie_tol).collect()).collect();
        let mut net = FlowNet::new(&inst.omega, &inst.m, tie);
        let total = net.max_flow(flow_eps);
        if mass_scale - total <= 1e-12 * mass_scale {
            let s: Vec<Vec<f64>> = (0..np).map(|j| (0..nc).map(|x| net.flow[x][j]).collect()).collect();
            return finish(inst, s, alpha, &net.tie, cuts, opts);
        }
        cuts += 1;
        if cuts > max_cuts {
            return Err(BathtubError::Stalled { iterations: cuts, residual: mass_scale - total });
        }
        // source side of the min cut
        let reach = net.bfs(flow_eps);
        let raised: Vec<bool> = reach.phases.iter().map(|p| p.is_some()).collect();
        let mut delta = f64::INFINITY;
        for x in (0..nc).filter(|&x| reach.cells[x].is_some()) {
            for j in (0..np).filter(|&j| !raised[j]) {
                delta = delta.min(inst.f[j][x] + alpha[j] - lambda[x]);
            }
        }
        if !delta.is_finite() {
            return Err(BathtubError::Stalled { iterations: cuts, residual: mass_scale - total });
        }
        for j in (0..np).filter(|&j| raised[j]) {
            alpha[j] += delta.max(0.0);
        }
        if delta <= tie_tol {
            // a tie just outside the tolerance; step past it so the loop advances
            for j in (0..np).filter(|&j| raised[j]) {
                alpha[j] += tie_tol;
            }
        }
    }
}

fn finish(
    inst: &BathtubInstance,
    mut s: Vec<Vec<f64>>,
    mut alpha: Vec<f64>,
    tie: &[Vec<bool>],
    cuts: usize,
    opts: &BathtubOptions,
) -> Result<BathtubSolution, BathtubError> {
    let (np, nc) = (inst.phases(), inst.cells());
    let mass_scale = inst.omega.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    // rounding cleanup on the tie graph so both marginals hold to ~1 ulp
    for v in s.iter_mut().flatten() {
        *v = v.max(0.0);
    }
    for _ in 0..3 {
        for x in 0..nc {
            let d = inst.omega[x] - (0..np).map(|j| s[j][x]).sum::<f64>();
            if d == 0.0 {
                continue;
            }
            let deficits: Vec<f64> = (0..np).map(|j| inst.m[j] - s[j].iter().sum::<f64>()).collect();
            let candidates: Vec<usize> = (0..np).filter(|&j| tie[x][j] && s[j][x] + d >= 0.0).collect();
            let best = candidates
                .iter()
                .copied()
                .max_by(|&a, &b| (deficits[a] * d.signum()).total_cmp(&(deficits[b] * d.signum())));
            if let Some(j) = best {
                s[j][x] += d;
            }
        }
    }
    let shift = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    alpha.iter_mut().for_each(|a| *a -= shift);
    let lambda = inst.lambda(&alpha);
    let primal = inst.primal_value(&s);
    let dual = dual_value(inst, &alpha);
    let scale = 1.0 + inst.field_scale();

    let row_err = (0..nc).map(|x| (inst.omega[x] - (0..np).map(|j| s[j][x]).sum::<f64>()).abs()).fold(0.0, f64::max);
    let col_err = (0..np).map(|j| (inst.m[j] - s[j].iter().sum::<f64>()).abs()).fold(0.0, f64::max);
    if row_err.max(col_err) > 1e-10 * mass_scale {
        return Err(BathtubError::Certificate(format!("allocation misses marginals by {:.3e}", row_err.max(col_err))));
    }
    let check = opts.check_tol * scale;
    for j in 0..np {
        for x in 0..nc {
            let reduced = inst.f[j][x] + alpha[j] - lambda[x];
            if s[j][x] > 1e-14 * mass_scale && reduced > check {
                return Err(BathtubError::Certificate(format!(
                    "phase {j} occupies cell {x} with reduced cost {reduced:.3e}"
                )));
            }
        }
    }
    if (primal - dual).abs() > check * mass_scale {
        return Err(BathtubError::Certificate(format!("primal {primal} and dual {dual} disagree")));
    }
    let tie_cells = (0..nc).filter(|&x| (0..np).filter(|&j| s[j][x] > 0.0).count() > 1).collect();
    Ok(BathtubSolution { s, alpha, lambda, primal_value: primal, dual_value: dual, tie_cells, cuts })
}

/// Reference optimum of the same linear program by a generic dense LP solver.
pub fn brute_force_lp(inst: &BathtubInstance) -> Result<(f64, Vec<Vec<f64>>), BathtubError> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    inst.validate()?;
    let (np, nc) = (inst.phases(), inst.cells());
    if np * nc > 400 {
        return Err(BathtubError::TooLarge(np * nc));
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> =
        (0..np).map(|j| (0..nc).map(|x| lp.add_var(inst.f[j][x], (0.0, f64::INFINITY))).collect()).collect();
    for x in 0..nc {
        let row: Vec<_> = (0..np).map(|j| (vars[j][x], 1.0)).collect();
        lp.add_constraint(row.as_slice(), ComparisonOp::Eq, inst.omega[x]);
    }
    // one mass constraint is implied by the others
    for j in 0..np - 1 {
        let col: Vec<_> = (0..nc).map(|x| (vars[j][x], 1.0)).collect();
        lp.add_constraint(col.as_slice(), ComparisonOp::Eq, inst.m[j]);
    }
    let sol = lp.solve().map_err(|e| BathtubError::Lp(e.to_string()))?;
    let s = vars.iter().map(|row| row.iter().map(|v| sol[*v]).collect()).collect();
    Ok((sol.objective(), s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(f: Vec<Vec<f64>>, omega: Vec<f64>, m: Vec<f64>) -> BathtubInstance {
        BathtubInstance::new(f, omega, m).unwrap()
    }

    #[test]
    fn single_phase_is_forced() {
        let b = inst(vec![vec![2.0, -1.0, 0.5]], vec![1.0, 2.0, 0.5], vec![3.5]);
        let sol = solve_bathtub(&b, &BathtubOptions::default()).unwrap();
        assert_eq!(sol.s[0], b.omega);
        assert_eq!(sol.primal_value, 2.0 - 2.0 + 0.25);
        assert_eq!(sol.primal_value, sol.dual_value);
    }

    #[test]
    fn dominant_assignment() {
        let b = inst(vec![vec![0.0, 10.0], vec![10.0, 0.0]], vec![1.0, 1.0], vec![1.0, 1.0]);
        let sol = solve_bathtub(&b, &BathtubOptions::default()).unwrap();
        assert_eq!(sol.s, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(sol.primal_value, 0.0);
    }

    #[test]
    fn two_by_two_with_certificate() {
        // phase 1 prefers cell 0 by a margin of 2, phase 0 is indifferent
        let b = inst(vec![vec![0.0, 0.0], vec![1.0, 3.0]], vec![1.0, 1.0], vec![1.0, 1.0]);
        let sol = solve_bathtub(&b, &BathtubOptions::default()).unwrap();
        assert_eq!(sol.s[1], vec![1.0, 0.0]);
        assert_eq!(sol.s[0], vec![0.0, 1.0]);
        assert!((sol.primal_value - 1.0).abs() < 1e-15);
        // the certificate alpha = (0, -1) is (1, 0) after shifting to min 0
        assert!((dual_value(&b, &[0.0, -1.0]) - 1.0).abs() < 1e-15);
        assert!((sol.dual_value - 1.0).abs() < 1e-12);
        assert_eq!(brute_force_lp(&b).unwrap().0, 1.0);
    }

    #[test]
    fn dual_shift_invariance() {
        let b = inst(vec![vec![0.3, -0.2, 0.9], vec![0.1, 0.4, -0.7]], vec![1.0, 0.5, 0.5], vec![1.2, 0.8]);
        let a = [0.25, -0.5];
        let shifted = [5.25, 4.5];
        assert!((dual_value(&b, &a) - dual_value(&b, &shifted)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_totals_rejected() {
        assert!(matches!(
            BathtubInstance::new(vec![vec![0.0]], vec![1.0], vec![2.0]),
            Err(BathtubError::Infeasible { .. })
        ));
    }

    #[test]
    fn zero_capacity_cells_and_massless_phases() {
        let b = inst(
            vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, -1.0], vec![0.5, 0.5, 0.5]],
            vec![0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0],
        );
        let sol = solve_bathtub(&b, &BathtubOptions::default()).unwrap();
        let (lp, _) = brute_force_lp(&b).unwrap();
        assert!((sol.primal_value - lp).abs() < 1e-12);
        assert!(sol.s[2].iter().all(|v| *v == 0.0));
    }

    fn instance_strategy() -> impl Strategy<Value = BathtubInstance> {
        (1usize..=6, 1usize..=3).prop_flat_map(|(nc, np)| {
            (
                proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, nc), np),
                proptest::collection::vec(0.05f64..1.0, nc),
                proptest::collection::vec(0.05f64..1.0, np),
            )
                .prop_map(|(f, omega, w)| {
                    let total: f64 = omega.iter().sum();
                    let ws: f64 = w.iter().sum();
                    let m = w.iter().map(|v| v / ws * total).collect();
                    BathtubInstance { f, omega, m }
                })
        })
    }

    proptest! {
        #[test]
        fn strong_duality_and_lp_agreement(b in instance_strategy()) {
            let sol = solve_bathtub(&b, &BathtubOptions::default()).unwrap();
            let (lp, _) = brute_force_lp(&b).unwrap();
            prop_assert!((sol.primal_value - lp).abs() <= 1e-8 * (1.0 + lp.abs()));
            prop_assert!((sol.dual_value - lp).abs() <= 1e-8 * (1.0 + lp.abs()));
            prop_assert_eq!(sol.alpha.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            for j in 0..b.phases() {
                for x in 0..b.cells() {
                    let reduced = b.f[j][x] + sol.alpha[j] - sol.lambda[x];
                    prop_assert!(reduced >= -1e-12);
                    if sol.s[j][x] > 1e-12 {
                        prop_assert!(reduced <= 1e-7);
                    }
                }
            }
        }

        #[test]
        fn weak_duality(b in instance_strategy(), a in proptest::collection::vec(-2.0f64..2.0, 3)) {
            let alpha: Vec<f64> = a.into_iter().take(b.phases()).collect();
            let (lp, _) = brute_force_lp(&b).unwrap();
            prop_assert!(dual_value(&b, &alpha) <= lp + 1e-12);
        }
    }
}
