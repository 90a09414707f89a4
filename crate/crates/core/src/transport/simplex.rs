//! Transportation simplex on a spanning-tree basis.
//!
//! Rows are supplies, columns are demands. A basis holds `rows + cols - 1`
//! cells forming a spanning tree of the bipartite row/column graph; degenerate
//! (zero-flow) basic cells are kept explicitly. Potentials `u_i + v_j = c_ij`
//! on the tree give the reduced costs, and pivots follow Dantzig's rule with a
//! switch to Bland's rule after a run of degenerate pivots.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub cells: Vec<(usize, usize)>,
    pub flows: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub basis: Basis,
    /// Row potentials.
    pub u: Vec<f64>,
    /// Column potentials.
    pub v: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    Unbalanced { supply: f64, demand: f64 },
    Empty,
    IterationLimit(usize),
    BadBasis,
}

/// Initial basis by the northwest-corner rule.
pub fn northwest_corner(supply: &[f64], demand: &[f64]) -> Basis {
    let (n, m) = (supply.len(), demand.len());
    let mut cells = Vec::with_capacity(n + m - 1);
    let mut flows = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (supply[0], demand[0]);
    loop {
        let f = ra.min(rb).max(0.0);
        cells.push((i, j));
        flows.push(f);
        ra -= f;
        rb -= f;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 {
            j += 1;
            rb = demand[j];
        } else if j == m - 1 || ra <= rb {
            i += 1;
            ra = supply[i];
        } else {
            j += 1;
            rb = demand[j];
        }
    }
    // the last cell absorbs rounding in the totals
    if let Some(last) = flows.last_mut() {
        *last = (*last + ra.min(rb).max(0.0)).max(0.0);
    }
    Basis { cells, flows }
}

struct Tree {
    adj: Vec<Vec<(usize, usize)>>, // (node, basis index)
}

impl Tree {
    fn new(basis: &Basis, n: usize, m: usize) -> Self {
        let mut adj = vec![Vec::new(); n + m];
        for (k, &(i, j)) in basis.cells.iter().enumerate() {
            adj[i].push((n + j, k));
            adj[n + j].push((i, k));
        }
        Tree { adj }
    }
}

fn potentials(tree: &Tree, basis: &Basis, cost: &[f64], n: usize, m: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut pot = vec![f64::NAN; n + m];
    pot[0] = 0.0;
    let mut queue = VecDeque::from([0usize]);
    let mut visited = 1;
    while let Some(node) = queue.pop_front() {
        for &(nb, k) in &tree.adj[node] {
            if pot[nb].is_nan() {
                let (i, j) = basis.cells[k];
                let c = cost[i * m + j];
                pot[nb] = c - pot[node];
                visited += 1;
                queue.push_back(nb);
            }
        }
    }
    if visited != n + m {
        return None;
    }
    let v = pot.split_off(n);
    Some((pot, v))
}

/// Basis indices along the tree path from `from` to `to`, in walking order.
fn tree_path(tree: &Tree, from: usize, to: usize) -> Vec<usize> {
    let nodes = tree.adj.len();
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
    let mut seen = vec![false; nodes];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(nb, k) in &tree.adj[node] {
            if !seen[nb] {
                seen[nb] = true;
                parent[nb] = Some((node, k));
                queue.push_back(nb);
            }
        }
    }
    let mut path = Vec::new();
    let mut at = to;
    while at != from {
        let (p, k) = parent[at].expect("tree is connected");
        path.push(k);
        at = p;
    }
    path.reverse();
    path
}

/// Solve `min sum c_ij x_ij` subject to row sums `supply`, column sums
/// `demand`, `x >= 0`. `cost` is row-major `supply.len() x demand.len()`.
/// A feasible `warm` basis for the same supplies and demands may be passed.
pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64], warm: Option<Basis>) -> Result<LpSolution, LpError> {
    let (n, m) = (supply.len(), demand.len());
    if n == 0 || m == 0 {
        return Err(LpError::Empty);
    }
    let (sa, sb): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.abs().max(sb.abs()).max(1e-300) {
        return Err(LpError::Unbalanced { supply: sa, demand: sb });
    }
    let mut basis = match warm {
        Some(b) if b.cells.len() == n + m - 1 => b,
        Some(_) => return Err(LpError::BadBasis),
        None => northwest_corner(supply, demand),
    };
    let cmax = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-12 * cmax.max(1e-300);
    let flow_scale = sa.max(sb).max(1e-300);
    let max_pivots = 200 * (n + m) * (n + m) + 10_000;
    let mut degenerate_run = 0usize;
    let mut pivots = 0usize;
    let mut in_basis = vec![false; n * m];
    for &(i, j) in &basis.cells {
        in_basis[i * m + j] = true;
    }
    loop {
        let tree = Tree::new(&basis, n, m);
        let (u, v) = potentials(&tree, &basis, cost, n, m).ok_or(LpError::BadBasis)?;
        let bland = degenerate_run > n + m;
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -tol;
        'scan: for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            for j in 0..m {
                if in_basis[i * m + j] {
                    continue;
                }
                let rc = row[j] - u[i] - v[j];
                if rc < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = rc;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let value = basis.cells.iter().zip(&basis.flows).map(|(&(i, j), f)| cost[i * m + j] * f).sum();
            for f in &mut basis.flows {
                if *f < 0.0 {
                    *f = 0.0;
                }
            }
            return Ok(LpSolution { basis, u, v, value, pivots });
        };
        pivots += 1;
        if pivots > max_pivots {
            return Err(LpError::IterationLimit(pivots));
        }
        // cycle: entering (+), then alternate along the tree path col ej -> row ei
        let path = tree_path(&tree, n + ej, ei);
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = basis.flows[k];
                let better = f < theta || (f == theta && bland && basis.cells[k] < basis.cells[leave]);
                if better {
                    theta = f;
                    leave = k;
                }
            }
        }
        let theta = theta.max(0.0);
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                basis.flows[k] -= theta;
            } else {
                basis.flows[k] += theta;
            }
        }
        if theta <= 1e-15 * flow_scale {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        let (li, lj) = basis.cells[leave];
        in_basis[li * m + lj] = false;
        in_basis[ei * m + ej] = true;
        basis.cells[leave] = (ei, ej);
        basis.flows[leave] = theta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn northwest_corner_is_a_spanning_tree() {
        let b = northwest_corner(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(b.cells.len(), 3);
        assert_eq!(b.cells, vec![(0, 0), (1, 0), (1, 1)]);
        assert_eq!(b.flows, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn small_assignment() {
        // costs favour the anti-diagonal
        let cost = [3.0, 1.0, 1.0, 3.0];
        let sol = solve(&[1.0, 1.0], &[1.0, 1.0], &cost, None).unwrap();
        assert!((sol.value - 2.0).abs() < 1e-14);
        // dual feasibility and complementary slackness
        for i in 0..2 {
            for j in 0..2 {
                assert!(cost[i * 2 + j] - sol.u[i] - sol.v[j] >= -1e-14);
            }
        }
        let dual: f64 = sol.u.iter().sum::<f64>() + sol.v.iter().sum::<f64>();
        assert!((dual - sol.value).abs() < 1e-14);
    }

    #[test]
    fn rectangular_with_zero_rows() {
        let supply = [0.0, 2.0, 1.0];
        let demand = [1.5, 0.0, 1.5, 0.0];
        let cost: Vec<f64> = (0..12).map(|k| ((k * 7) % 5) as f64 + 0.5).collect();
        let sol = solve(&supply, &demand, &cost, None).unwrap();
        let mut rows = [0.0; 3];
        let mut cols = [0.0; 4];
        for (&(i, j), f) in sol.basis.cells.iter().zip(&sol.basis.flows) {
            rows[i] += f;
            cols[j] += f;
        }
        for (r, s) in rows.iter().zip(&supply) {
            assert!((r - s).abs() < 1e-14);
        }
        for (c, d) in cols.iter().zip(&demand) {
            assert!((c - d).abs() < 1e-14);
        }
    }

    #[test]
    fn warm_start_from_optimal_basis_needs_no_pivot() {
        let supply = [0.2, 0.3, 0.5];
        let demand = [0.4, 0.4, 0.2];
        let cost = [0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0];
        let first = solve(&supply, &demand, &cost, None).unwrap();
        let again = solve(&supply, &demand, &cost, Some(first.basis.clone())).unwrap();
        assert_eq!(again.pivots, 0);
        assert!((again.value - first.value).abs() < 1e-15);
    }

    #[test]
    fn unbalanced_rejected() {
        assert!(matches!(solve(&[1.0], &[2.0], &[0.0], None), Err(LpError::Unbalanced { .. })));
    }
}
