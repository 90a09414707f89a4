//! Auxiliary drift-diffusion flow `d_t s = div(K grad s - s K grad log omega)`
//! with no-flux boundaries.
//!
//! The flux is written in the equivalent form `K omega grad(s / omega)`, and
//! discretized with two-point face fluxes on the ratio `s / omega`. This keeps
//! `omega` an exact steady state, conserves mass through the flux form, and
//! gives an M-matrix for implicit Euler, hence positivity and decay of the
//! relative entropy (the implicit step is a Markov kernel that fixes the pore
//! volumes).

use nalgebra::{DMatrix, DVector, LU};
use thiserror::Error;

use crate::energy::PhaseField;
use crate::geometry::{Grid, MediumSpec};

#[derive(Debug, Error)]
pub enum AuxFlowError {
    #[error("flow time must be nonnegative and substeps at least one")]
    Config,
    #[error("negative mass at cell {0}")]
    Negative(usize),
    #[error("implicit system is singular")]
    Singular,
    #[error("positivity floor {floor:.3e} not reached with flow time up to {cap:.3e}")]
    FloorUnreachable { floor: f64, cap: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct AuxFlowConfig {
    pub delta: f64,
    pub substeps: usize,
}

/// Prefactored implicit step `(I - dt L) m_new = m_old` for a fixed `dt`.
pub struct AuxStepper {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    substeps: usize,
}

/// Face transmissibilities times the mobility of the ratio variable:
/// `dm_a/dt = sum_b T_ab (u_b - u_a)` with `u = m / (omega vol)`.
fn generator(grid: &Grid, medium: &MediumSpec) -> DMatrix<f64> {
    let n = grid.cell_count();
    let vol = grid.cell_volume();
    let pore: Vec<f64> = medium.porosity.iter().map(|w| w * vol).collect();
    let mut l = DMatrix::zeros(n, n);
    for f in grid.faces() {
        let k = medium.permeability.face_value(f);
        let w = 0.5 * (medium.porosity[f.a] + medium.porosity[f.b]);
        let t = vol * k * w / (f.distance * f.distance);
        // column j multiplies m_j: u_j = m_j / pore_j
        l[(f.a, f.b)] += t / pore[f.b];
        l[(f.a, f.a)] -= t / pore[f.a];
        l[(f.b, f.a)] += t / pore[f.a];
        l[(f.b, f.b)] -= t / pore[f.b];
    }
    l
}

impl AuxStepper {
    pub fn new(grid: &Grid, medium: &MediumSpec, config: AuxFlowConfig) -> Result<Self, AuxFlowError> {
        if !(config.delta >= 0.0) || config.substeps == 0 {
            return Err(AuxFlowError::Config);
        }
        let n = grid.cell_count();
        let dt = config.delta / config.substeps as f64;
        let a = DMatrix::identity(n, n) - generator(grid, medium) * dt;
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(AuxFlowError::Singular);
        }
        Ok(Self { lu, substeps: config.substeps })
    }

    pub fn apply(&self, s: &[f64]) -> Result<Vec<f64>, AuxFlowError> {
        if let Some(k) = s.iter().position(|v| !(*v >= 0.0)) {
            return Err(AuxFlowError::Negative(k));
        }
        let mut m = DVector::from_column_slice(s);
        for _ in 0..self.substeps {
            m = self.lu.solve(&m).ok_or(AuxFlowError::Singular)?;
            // the inverse M-matrix is nonnegative; clamp round-off only
            m.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(m.iter().copied().collect())
    }
}

/// Flow one phase for time `delta` using `substeps` implicit Euler steps.
pub fn aux_step(
    s_i: &[f64],
    grid: &Grid,
    medium: &MediumSpec,
    delta: f64,
    substeps: usize,
) -> Result<Vec<f64>, AuxFlowError> {
    if delta == 0.0 {
        return Ok(s_i.to_vec());
    }
    AuxStepper::new(grid, medium, AuxFlowConfig { delta, substeps })?.apply(s_i)
}

#[derive(Debug, Clone)]
pub struct Regularized {
    pub state: PhaseField,
    /// Flow time actually applied (zero when the input was already positive).
    pub delta: f64,
}

/// Flow every phase with the same `delta` until all densities reach
/// `floor * omega`, doubling `delta` up to `delta_cap`.
pub fn regularize_positive(
    s: &PhaseField,
    grid: &Grid,
    medium: &MediumSpec,
    delta: f64,
    floor: f64,
    delta_cap: f64,
) -> Result<Regularized, AuxFlowError> {
    let vol = grid.cell_volume();
    let positive = |f: &PhaseField| {
        f.masses.iter().all(|m| m.iter().zip(&medium.porosity).all(|(v, w)| *v >= floor * w * vol && *v > 0.0))
    };
    if positive(s) {
        return Ok(Regularized { state: s.clone(), delta: 0.0 });
    }
    let mut d = delta.max(f64::MIN_POSITIVE);
    loop {
        let stepper = AuxStepper::new(grid, medium, AuxFlowConfig { delta: d, substeps: 4 })?;
        let mut masses = s.masses.iter().map(|m| stepper.apply(m)).collect::<Result<Vec<_>, _>>()?;
        // the flow preserves sum_i s_i = omega exactly in exact arithmetic;
        // restoring it through phase 0 removes the rounding
        if masses.len() > 1 {
            for x in 0..grid.cell_count() {
                let rest: f64 = masses[1..].iter().map(|m| m[x]).sum();
                masses[0][x] = medium.porosity[x] * vol - rest;
            }
        }
        let out = PhaseField::new(masses);
        if positive(&out) {
            return Ok(Regularized { state: out, delta: d });
        }
        if d >= delta_cap {
            return Err(AuxFlowError::FloorUnreachable { floor, cap: delta_cap });
        }
        d = (2.0 * d).min(delta_cap);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::relative_entropy;
    use crate::geometry::{build_grid, GridConfig, Permeability};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn medium(grid: &Grid) -> MediumSpec {
        let n = grid.cell_count();
        let mut m = MediumSpec::homogeneous(grid, 0.3, 1.0, &[1.0, 2.0], &[0.5, 0.5]);
        m.porosity = (0..n).map(|x| 0.2 + 0.5 * ((x * 7) % 5) as f64 / 5.0).collect();
        let k = (0..n).map(|x| 1.0 + ((x * 3) % 4) as f64).collect();
        m = m.with_permeability(grid, Permeability::Isotropic(k));
        let pore = m.pore_volume(grid);
        m.masses = vec![0.5 * pore, 0.5 * pore];
        m
    }

    #[test]
    fn porosity_is_stationary() {
        let g = build_grid(&GridConfig::rect(4, 3, (0.0, 1.0), (0.0, 1.0))).unwrap();
        let m = medium(&g);
        let pore: Vec<f64> = m.porosity.iter().map(|w| w * g.cell_volume()).collect();
        let out = aux_step(&pore, &g, &m, 0.7, 5).unwrap();
        for (a, b) in out.iter().zip(&pore) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn random_states_conserve_mass_and_dissipate_entropy() {
        let g = build_grid(&GridConfig::line(10, 0.0, 1.0)).unwrap();
        let m = medium(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s: Vec<f64> = m.porosity.iter().map(|w| rng.random::<f64>() * w * g.cell_volume()).collect();
        let total: f64 = s.iter().sum();
        let stepper = AuxStepper::new(&g, &m, AuxFlowConfig { delta: 0.01, substeps: 1 }).unwrap();
        let mut cur = s;
        let mut h = relative_entropy(&cur, &g, &m).unwrap();
        for _ in 0..50 {
            cur = stepper.apply(&cur).unwrap();
            let next = relative_entropy(&cur, &g, &m).unwrap();
            assert!(next <= h + 1e-15);
            h = next;
            assert!((cur.iter().sum::<f64>() - total).abs() < 1e-14);
            assert!(cur.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn regularization_makes_concentrated_phase_positive() {
        let g = build_grid(&GridConfig::line(8, 0.0, 1.0)).unwrap();
        let mut m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0, 1.0], &[0.5, 0.5]);
        let vol = g.cell_volume();
        // phase 1 fills cell 0 only
        let mut s1 = vec![0.0; 8];
        s1[0] = 0.5 * vol;
        let s0: Vec<f64> = s1.iter().map(|v| 0.5 * vol - v).collect();
        m.masses = vec![s0.iter().sum(), s1.iter().sum()];
        let s = PhaseField::new(vec![s0, s1]);
        let r = regularize_positive(&s, &g, &m, 1e-3, 1e-8, 10.0).unwrap();
        assert!(r.delta > 0.0);
        assert!(r.state.masses.iter().flatten().all(|v| *v > 0.0));
        assert_eq!(r.state.saturation_drift(&g, &m), 0.0);
        assert!(r.state.mass_drift(&g, &m) < 1e-14);

        let same = regularize_positive(&r.state, &g, &m, 1e-3, 1e-8, 10.0).unwrap();
        assert_eq!(same.delta, 0.0);
        assert_eq!(same.state, r.state);
    }

    #[test]
    fn single_phase_is_identity() {
        let g = build_grid(&GridConfig::line(4, 0.0, 1.0)).unwrap();
        let m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0], &[1.0]);
        let s = PhaseField::proportional(&g, &m);
        let r = regularize_positive(&s, &g, &m, 1e-3, 1e-8, 1.0).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.state, s);
    }

    #[test]
    fn rejects_bad_config() {
        let g = build_grid(&GridConfig::line(2, 0.0, 1.0)).unwrap();
        let m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0], &[1.0]);
        assert!(AuxStepper::new(&g, &m, AuxFlowConfig { delta: 1.0, substeps: 0 }).is_err());
        assert!(aux_step(&[-1.0, 0.5], &g, &m, 0.1, 1).is_err());
    }
}
