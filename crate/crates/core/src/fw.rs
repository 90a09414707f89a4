//! Pairwise Frank-Wolfe over a polytope given by a linear minimization oracle.
//!
//! The iterate is kept as an explicit convex combination of oracle vertices.
//! Each step moves weight from the worst active vertex (the away vertex) to
//! the oracle vertex, which avoids the zig-zagging of plain Frank-Wolfe near
//! faces and converges linearly on strongly convex composites.

pub(crate) trait FwProblem {
    type Error;

    fn gradient(&mut self, x: &[f64]) -> Vec<f64>;

    /// Vertex minimizing `<grad, v>`.
    fn linear_oracle(&mut self, grad: &[f64]) -> Result<Vec<f64>, Self::Error>;

    /// `d/dt f(x + t d)`; must be nondecreasing in `t` (convexity).
    fn slope(&mut self, x: &[f64], d: &[f64], t: f64) -> f64;

    /// Line searches stop once `|slope|` falls below this fraction of the
    /// initial slope; raise it when gradients are only approximate.
    fn slope_tolerance(&self) -> f64 {
        1e-14
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FwOutcome {
    pub x: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize a convex `f` along `x + t d`, `t` in `[0, t_max]`, by safeguarded
/// regula falsi on the slope. Exact in one step for quadratics.
fn line_search<P: FwProblem>(p: &mut P, x: &[f64], d: &[f64], t_max: f64) -> f64 {
    let s0 = p.slope(x, d, 0.0);
    if s0 >= 0.0 {
        return 0.0;
    }
    let s1 = p.slope(x, d, t_max);
    if s1 <= 0.0 {
        return t_max;
    }
    let (mut lo, mut hi, mut slo, mut shi) = (0.0, t_max, s0, s1);
    for it in 0..100 {
        let t = if it % 3 == 2 { 0.5 * (lo + hi) } else { lo - slo * (hi - lo) / (shi - slo) };
        let t = t.clamp(lo, hi);
        let st = p.slope(x, d, t);
        if st.abs() <= p.slope_tolerance() * s0.abs() || hi - lo <= 1e-15 * t_max {
            return t;
        }
        if st < 0.0 {
            lo = t;
            slo = st;
        } else {
            hi = t;
            shi = st;
        }
    }
    0.5 * (lo + hi)
}

/// Run pairwise FW from the vertex `start`. Stops when the FW gap drops
/// below `tol` or after `max_iter` iterations.
pub(crate) fn pairwise_fw<P: FwProblem>(
    p: &mut P,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<FwOutcome, P::Error> {
    let dim = start.len();
    let mut active: Vec<(Vec<f64>, f64)> = vec![(start.clone(), 1.0)];
    let mut x = start;
    let mut iterations = 0;
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    loop {
        let grad = p.gradient(&x);
        let v = p.linear_oracle(&grad)?;
        let gap = dot(&grad, &x) - dot(&grad, &v);
        if gap <= tol || iterations >= max_iter {
            // rebuild from the weights to shed accumulated drift
            let total: f64 = active.iter().map(|(_, w)| w).sum();
            let mut clean = vec![0.0; dim];
            for (vert, w) in &active {
                for (c, vi) in clean.iter_mut().zip(vert) {
                    *c += w / total * vi;
                }
            }
            return Ok(FwOutcome { x: clean, gap: gap.max(0.0), iterations });
        }
        iterations += 1;
        let (away, _) = active
            .iter()
            .enumerate()
            .map(|(k, (vert, _))| (k, dot(&grad, vert)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let d: Vec<f64> = v.iter().zip(&active[away].0).map(|(a, b)| a - b).collect();
        let t_max = active[away].1;
        let t = line_search(p, &x, &d, t_max);
        if t <= 0.0 {
            // no progress along the pairwise direction; fall back to a plain FW step
            let d: Vec<f64> = v.iter().zip(&x).map(|(a, b)| a - b).collect();
            let t = line_search(p, &x, &d, 1.0);
            if t <= 0.0 {
                let total: f64 = active.iter().map(|(_, w)| w).sum();
                let mut clean = vec![0.0; dim];
                for (vert, w) in &active {
                    for (c, vi) in clean.iter_mut().zip(vert) {
                        *c += w / total * vi;
                    }
                }
                return Ok(FwOutcome { x: clean, gap, iterations });
            }
            for (_, w) in active.iter_mut() {
                *w *= 1.0 - t;
            }
            insert_vertex(&mut active, v, t, scale);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += t * di;
            }
            continue;
        }
        if t >= t_max {
            active.swap_remove(away);
        } else {
            active[away].1 -= t;
        }
        insert_vertex(&mut active, v, t, scale);
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += t * di;
        }
    }
}

fn insert_vertex(active: &mut Vec<(Vec<f64>, f64)>, v: Vec<f64>, w: f64, scale: f64) {
    let same = active.iter().position(|(u, _)| u.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-13 * scale));
    match same {
        Some(k) => active[k].1 += w,
        None => active.push((v, w)),
    }
    active.retain(|(_, w)| *w > 0.0);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Project a point onto the probability simplex by minimizing the
    /// squared distance; the oracle returns coordinate vertices.
    struct SimplexProjection {
        target: Vec<f64>,
    }

    impl FwProblem for SimplexProjection {
        type Error = ();
        fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
            x.iter().zip(&self.target).map(|(a, b)| a - b).collect()
        }
        fn linear_oracle(&mut self, grad: &[f64]) -> Result<Vec<f64>, ()> {
            let k = (0..grad.len()).min_by(|&a, &b| grad[a].total_cmp(&grad[b])).unwrap();
            let mut v = vec![0.0; grad.len()];
            v[k] = 1.0;
            Ok(v)
        }
        fn slope(&mut self, x: &[f64], d: &[f64], t: f64) -> f64 {
            x.iter().zip(d).zip(&self.target).map(|((xi, di), ti)| (xi + t * di - ti) * di).sum()
        }
    }

    #[test]
    fn projects_onto_simplex() {
        // the projection of (0.8, 0.6, -0.2) is (0.6, 0.4, 0) by the threshold rule
        let mut p = SimplexProjection { target: vec![0.8, 0.6, -0.2] };
        let out = pairwise_fw(&mut p, vec![0.0, 0.0, 1.0], 1e-14, 1000).unwrap();
        assert!(
            (out.x[0] - 0.6).abs() < 1e-12 && (out.x[1] - 0.4).abs() < 1e-12 && out.x[2].abs() < 1e-12,
            "{:?}",
            out.x
        );
        assert!(out.iterations < 20);
    }
}
