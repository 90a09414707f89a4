//! Capillary potentials, the total energy and the relative entropy.
//!
//! States are stored as cell masses (density times cell volume), phase 0
//! being the reference phase. The reduced vector `s*` collects the densities
//! of phases `1..=N` and is the argument of the capillary potential `Pi`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use thiserror::Error;

use crate::bathtub::{solve_bathtub, BathtubError, BathtubInstance, BathtubOptions};
use crate::fw::{pairwise_fw, FwProblem};
use crate::geometry::{Grid, MediumSpec};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("state leaves the admissible set at cell {cell}: {reason}")]
    InfiniteEnergy { cell: usize, reason: String },
    #[error("reduced saturation outside the simplex at cell {cell}")]
    OutsideSimplex { cell: usize },
    #[error("capillary matrix at cell {cell} is not symmetric positive definite")]
    NotSpd { cell: usize },
    #[error("capillary model has {got} components, expected {expected}")]
    Components { expected: usize, got: usize },
    #[error("capillary model is degenerate and has no inverse")]
    Degenerate,
    #[error("phase field shape mismatch: {0}")]
    Shape(String),
    #[error("capillary csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Bathtub(#[from] BathtubError),
}

/// Per-phase cell masses `s[i][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub masses: Vec<Vec<f64>>,
}

impl PhaseField {
    pub fn new(masses: Vec<Vec<f64>>) -> Self {
        Self { masses }
    }

    pub fn from_densities(grid: &Grid, densities: &[Vec<f64>]) -> Self {
        let v = grid.cell_volume();
        Self { masses: densities.iter().map(|d| d.iter().map(|r| r * v).collect()).collect() }
    }

    /// Every phase spread proportionally to the porosity (the stationary state
    /// of the auxiliary flow).
    pub fn proportional(grid: &Grid, medium: &MediumSpec) -> Self {
        let pore = medium.pore_volume(grid);
        let v = grid.cell_volume();
        Self {
            masses: medium.masses.iter().map(|m| medium.porosity.iter().map(|w| m / pore * w * v).collect()).collect(),
        }
    }

    pub fn phase_count(&self) -> usize {
        self.masses.len()
    }

    pub fn cell_count(&self) -> usize {
        self.masses.first().map_or(0, Vec::len)
    }

    pub fn phase(&self, i: usize) -> &[f64] {
        &self.masses[i]
    }

    pub fn densities(&self, grid: &Grid) -> Vec<Vec<f64>> {
        let v = grid.cell_volume();
        self.masses.iter().map(|m| m.iter().map(|s| s / v).collect()).collect()
    }

    /// Densities of phases `1..=N` at one cell.
    pub fn reduced_at(&self, grid: &Grid, cell: usize) -> Vec<f64> {
        let v = grid.cell_volume();
        self.masses[1..].iter().map(|m| m[cell] / v).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.masses.concat()
    }

    pub fn unflatten(flat: &[f64], phases: usize) -> Self {
        let n = flat.len() / phases.max(1);
        Self { masses: flat.chunks(n.max(1)).map(<[f64]>::to_vec).collect() }
    }

    /// Largest per-phase mass error relative to the pore volume.
    pub fn mass_drift(&self, grid: &Grid, medium: &MediumSpec) -> f64 {
        let pore = medium.pore_volume(grid);
        self.masses
            .iter()
            .zip(&medium.masses)
            .map(|(s, m)| (s.iter().sum::<f64>() - m).abs() / pore)
            .fold(0.0, f64::max)
    }

    /// Largest per-cell saturation error relative to the cell pore volume.
    pub fn saturation_drift(&self, grid: &Grid, medium: &MediumSpec) -> f64 {
        let v = grid.cell_volume();
        (0..self.cell_count())
            .map(|x| {
                let pore = medium.porosity[x] * v;
                (self.masses.iter().map(|m| m[x]).sum::<f64>() - pore).abs() / pore
            })
            .fold(0.0, f64::max)
    }

    /// Membership in the admissible set (saturated, correct masses,
    /// nonnegative) up to the relative tolerance `tol`.
    pub fn check_admissible(&self, grid: &Grid, medium: &MediumSpec, tol: f64) -> Result<(), EnergyError> {
        if self.phase_count() != medium.phase_count() || self.cell_count() != grid.cell_count() {
            return Err(EnergyError::Shape(format!(
                "{} phases x {} cells, medium has {} x {}",
                self.phase_count(),
                self.cell_count(),
                medium.phase_count(),
                grid.cell_count()
            )));
        }
        let v = grid.cell_volume();
        for x in 0..self.cell_count() {
            let pore = medium.porosity[x] * v;
            if let Some(i) = (0..self.phase_count()).find(|&i| !(self.masses[i][x] >= -tol * pore)) {
                return Err(EnergyError::InfiniteEnergy { cell: x, reason: format!("phase {i} is negative") });
            }
            let sum: f64 = self.masses.iter().map(|m| m[x]).sum();
            if (sum - pore).abs() > tol * pore {
                return Err(EnergyError::InfiniteEnergy {
                    cell: x,
                    reason: format!("saturation {} differs from porosity {}", sum / v, medium.porosity[x]),
                });
            }
        }
        let drift = self.mass_drift(grid, medium);
        if drift > tol {
            return Err(EnergyError::InfiniteEnergy { cell: 0, reason: format!("phase masses drift by {drift:.3e}") });
        }
        Ok(())
    }
}

/// Capillary potential `Pi(s*, x)` and its derived maps.
pub trait CapillaryModel: Send + Sync {
    /// Number `N` of non-reference phases.
    fn components(&self) -> usize;

    fn potential(&self, cell: usize, s_star: &[f64]) -> f64;

    /// `pi(s*, x) = grad Pi`.
    fn pressure(&self, cell: usize, s_star: &[f64]) -> Vec<f64>;

    /// Inverse of [`CapillaryModel::pressure`].
    fn inverse(&self, cell: usize, z: &[f64]) -> Result<Vec<f64>, EnergyError>;

    /// `(varpi_lower, varpi_upper)`: bounds on the Hessian eigenvalues.
    fn convexity_bounds(&self) -> (f64, f64);
}

/// `Pi(s*, x) = 1/2 s*^T A(x) s* + b(x) . s*`.
#[derive(Debug, Clone)]
pub struct QuadraticCapillary {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    chol: Option<Vec<Cholesky<f64, Dyn>>>,
    bounds: (f64, f64),
}

impl QuadraticCapillary {
    pub fn from_cells(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>) -> Result<Self, EnergyError> {
        let n = a.first().map_or(0, |m| m.nrows());
        if a.len() != b.len() {
            return Err(EnergyError::Shape(format!("{} matrices but {} offsets", a.len(), b.len())));
        }
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let mut chol = Vec::with_capacity(a.len());
        for (cell, (m, off)) in a.iter().zip(&b).enumerate() {
            if m.nrows() != n || m.ncols() != n || off.len() != n {
                return Err(EnergyError::Components { expected: n, got: m.nrows().max(off.len()) });
            }
            if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                return Err(EnergyError::NotSpd { cell });
            }
            if n > 0 {
                let eig = SymmetricEigen::new(m.clone()).eigenvalues;
                let (emin, emax) = (eig.min(), eig.max());
                if emin <= 0.0 {
                    return Err(EnergyError::NotSpd { cell });
                }
                lo = lo.min(emin);
                hi = hi.max(emax);
            }
            chol.push(Cholesky::new(m.clone()).ok_or(EnergyError::NotSpd { cell })?);
        }
        if n == 0 {
            lo = 0.0;
        }
        Ok(Self { a, b, chol: Some(chol), bounds: (lo, hi) })
    }

    /// The same `A` and `b` in every cell.
    pub fn uniform(cells: usize, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, EnergyError> {
        Self::from_cells(vec![a; cells], vec![b; cells])
    }

    /// `A = c I`, `b = 0`.
    pub fn scalar(cells: usize, components: usize, c: f64) -> Result<Self, EnergyError> {
        Self::uniform(cells, DMatrix::identity(components, components) * c, DVector::zeros(components))
    }

    /// `Pi = 0`: capillarity switched off. Only meant for testing the
    /// transport part of the scheme; the inverse map does not exist.
    pub fn disabled(cells: usize, components: usize) -> Self {
        Self {
            a: vec![DMatrix::zeros(components, components); cells],
            b: vec![DVector::zeros(components); cells],
            chol: None,
            bounds: (0.0, 0.0),
        }
    }

    /// Rows `cell,a_11,a_12,...,a_NN[,b_1,...,b_N]` with a header line.
    pub fn from_csv(path: &Path, cells: usize, components: usize) -> Result<Self, EnergyError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| EnergyError::Csv(e.to_string()))?;
        let headers = rdr.headers().map_err(|e| EnergyError::Csv(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let n = components;
        let mut a = vec![None; cells];
        let mut b = vec![DVector::zeros(n); cells];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| EnergyError::Csv(e.to_string()))?;
            let get = |k: usize| -> Result<f64, EnergyError> {
                rec.get(k)
                    .ok_or_else(|| EnergyError::Csv("short row".into()))?
                    .parse::<f64>()
                    .map_err(|e| EnergyError::Csv(e.to_string()))
            };
            let cell = get(col("cell").ok_or_else(|| EnergyError::Csv("missing column cell".into()))?)? as usize;
            if cell >= cells {
                return Err(EnergyError::Csv(format!("cell index {cell} out of range")));
            }
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let name = format!("a_{}{}", i + 1, j + 1);
                    let k = col(&name).ok_or_else(|| EnergyError::Csv(format!("missing column {name}")))?;
                    m[(i, j)] = get(k)?;
                }
                if let Some(k) = col(&format!("b_{}", i + 1)) {
                    b[cell][i] = get(k)?;
                }
            }
            a[cell] = Some(m);
        }
        let a = a
            .into_iter()
            .enumerate()
            .map(|(c, m)| m.ok_or_else(|| EnergyError::Csv(format!("no row for cell {c}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_cells(a, b)
    }

    pub fn matrix(&self, cell: usize) -> &DMatrix<f64> {
        &self.a[cell]
    }

    /// Lipschitz bound of the inverse map across neighboring cells (per unit
    /// length), evaluated on the face stencil.
    pub fn inverse_variation(&self, grid: &Grid) -> Option<f64> {
        let chol = self.chol.as_ref()?;
        let inv: Vec<DMatrix<f64>> = chol.iter().map(Cholesky::inverse).collect();
        let offs: Vec<DVector<f64>> = inv.iter().zip(&self.b).map(|(i, b)| i * b).collect();
        Some(
            grid.faces()
                .iter()
                .map(|f| ((&inv[f.b] - &inv[f.a]).norm() + (&offs[f.b] - &offs[f.a]).norm()) / f.distance)
                .fold(0.0, f64::max),
        )
    }
}

impl CapillaryModel for QuadraticCapillary {
    fn components(&self) -> usize {
        self.b.first().map_or(0, |b| b.len())
    }

    fn potential(&self, cell: usize, s_star: &[f64]) -> f64 {
        let s = DVector::from_column_slice(s_star);
        0.5 * s.dot(&(&self.a[cell] * &s)) + self.b[cell].dot(&s)
    }

    fn pressure(&self, cell: usize, s_star: &[f64]) -> Vec<f64> {
        let s = DVector::from_column_slice(s_star);
        (&self.a[cell] * s + &self.b[cell]).iter().copied().collect()
    }

    fn inverse(&self, cell: usize, z: &[f64]) -> Result<Vec<f64>, EnergyError> {
        let chol = self.chol.as_ref().ok_or(EnergyError::Degenerate)?;
        let rhs = DVector::from_column_slice(z) - &self.b[cell];
        Ok(chol[cell].solve(&rhs).iter().copied().collect())
    }

    fn convexity_bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

fn check_reduced(s_star: &[f64], omega: f64, cell: usize, tol: f64) -> Result<(), EnergyError> {
    let sum: f64 = s_star.iter().sum();
    if s_star.iter().any(|v| !(*v >= -tol)) || sum > omega + tol {
        return Err(EnergyError::OutsideSimplex { cell });
    }
    Ok(())
}

/// `pi(s*, x)` for an admissible reduced saturation at a cell.
pub fn capillary_pi<M: CapillaryModel + ?Sized>(
    model: &M,
    s_star: &[f64],
    cell: usize,
    omega: f64,
) -> Result<Vec<f64>, EnergyError> {
    if s_star.len() != model.components() {
        return Err(EnergyError::Components { expected: model.components(), got: s_star.len() });
    }
    check_reduced(s_star, omega, cell, 1e-12)?;
    Ok(model.pressure(cell, s_star))
}

/// Result of inverting the capillary relation.
#[derive(Debug, Clone, PartialEq)]
pub struct CapillaryInverse {
    pub s_star: Vec<f64>,
    /// The exact inverse lies outside `{s* >= 0, sum s* <= omega}`.
    pub outside: bool,
}

pub fn capillary_phi<M: CapillaryModel + ?Sized>(
    model: &M,
    z: &[f64],
    cell: usize,
    omega: f64,
) -> Result<CapillaryInverse, EnergyError> {
    if z.len() != model.components() {
        return Err(EnergyError::Components { expected: model.components(), got: z.len() });
    }
    let s_star = model.inverse(cell, z)?;
    let outside = check_reduced(&s_star, omega, cell, 1e-12).is_err();
    Ok(CapillaryInverse { s_star, outside })
}

/// `E(s) = sum_x vol [Pi(s*(x), x) + sum_i rho_i(x) Psi_i(x)]`.
pub fn total_energy<M: CapillaryModel + ?Sized>(
    model: &M,
    grid: &Grid,
    medium: &MediumSpec,
    s: &PhaseField,
) -> Result<f64, EnergyError> {
    s.check_admissible(grid, medium, 1e-9)?;
    Ok(energy_unchecked(model, grid, medium, s))
}

/// The energy formula without the admissibility test, for iterates that are
/// feasible by construction.
pub fn energy_unchecked<M: CapillaryModel + ?Sized>(
    model: &M,
    grid: &Grid,
    medium: &MediumSpec,
    s: &PhaseField,
) -> f64 {
    let v = grid.cell_volume();
    let mut e = 0.0;
    for x in 0..grid.cell_count() {
        if model.components() > 0 {
            e += v * model.potential(x, &s.reduced_at(grid, x));
        }
        for (m, psi) in s.masses.iter().zip(&medium.potentials) {
            e += m[x] * psi[x];
        }
    }
    e
}

/// `dE/ds_i(x) = pi_i(x) + Psi_i(x)` (with `pi_0 = 0`), per unit mass.
pub fn energy_gradient<M: CapillaryModel + ?Sized>(
    model: &M,
    grid: &Grid,
    medium: &MediumSpec,
    s: &PhaseField,
) -> Vec<Vec<f64>> {
    let mut g = medium.potentials.clone();
    if model.components() > 0 {
        for x in 0..grid.cell_count() {
            let pi = model.pressure(x, &s.reduced_at(grid, x));
            for (i, p) in pi.iter().enumerate() {
                g[i + 1][x] += p;
            }
        }
    }
    g
}

/// Capillary pressure fields `pi_i(x)` for `i = 1..=N`.
pub fn capillary_fields<M: CapillaryModel + ?Sized>(model: &M, grid: &Grid, s: &PhaseField) -> Vec<Vec<f64>> {
    let n = model.components();
    let mut out = vec![vec![0.0; grid.cell_count()]; n];
    for x in 0..grid.cell_count() {
        for (i, p) in model.pressure(x, &s.reduced_at(grid, x)).into_iter().enumerate() {
            out[i][x] = p;
        }
    }
    out
}

/// `H_omega(s) = sum_x vol rho log(rho / omega)` with `0 log 0 = 0`.
pub fn relative_entropy(s_i: &[f64], grid: &Grid, medium: &MediumSpec) -> Result<f64, EnergyError> {
    let v = grid.cell_volume();
    let mut h = 0.0;
    for (x, (m, w)) in s_i.iter().zip(&medium.porosity).enumerate() {
        let rho = m / v;
        if rho < -1e-12 * w || rho > w * (1.0 + 1e-9) {
            return Err(EnergyError::InfiniteEnergy { cell: x, reason: format!("density {rho} outside [0, {w}]") });
        }
        if rho > 0.0 {
            h += v * rho * (rho / w).ln();
        }
    }
    Ok(h)
}

/// Result of [`minimize_energy`].
#[derive(Debug, Clone)]
pub struct EnergyMinimum {
    pub state: PhaseField,
    pub energy: f64,
    /// Frank-Wolfe duality gap: `energy - gap` is a lower bound of `min E`.
    pub gap: f64,
    pub iterations: usize,
}

struct EnergyProblem<'a, M: CapillaryModel + ?Sized> {
    model: &'a M,
    grid: &'a Grid,
    medium: &'a MediumSpec,
    omega: Vec<f64>,
}

impl<M: CapillaryModel + ?Sized> EnergyProblem<'_, M> {
    fn field(&self, x: &[f64]) -> PhaseField {
        PhaseField::unflatten(x, self.medium.phase_count())
    }
}

impl<M: CapillaryModel + ?Sized> FwProblem for EnergyProblem<'_, M> {
    type Error = EnergyError;

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        energy_gradient(self.model, self.grid, self.medium, &self.field(x)).concat()
    }

    fn linear_oracle(&mut self, grad: &[f64]) -> Result<Vec<f64>, EnergyError> {
        let np = self.medium.phase_count();
        let f = grad.chunks(self.grid.cell_count()).map(<[f64]>::to_vec).collect::<Vec<_>>();
        debug_assert_eq!(f.len(), np);
        let inst = BathtubInstance::new(f, self.omega.clone(), self.medium.masses.clone())?;
        Ok(solve_bathtub(&inst, &BathtubOptions::default())?.s.concat())
    }

    fn slope(&mut self, x: &[f64], d: &[f64], t: f64) -> f64 {
        let y: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        self.gradient(&y).iter().zip(d).map(|(g, di)| g * di).sum()
    }
}

/// Minimizer of `E` over the admissible set by pairwise Frank-Wolfe with
/// the bathtub oracle.
pub fn minimize_energy<M: CapillaryModel + ?Sized>(
    model: &M,
    grid: &Grid,
    medium: &MediumSpec,
    tol: f64,
    max_iter: usize,
) -> Result<EnergyMinimum, EnergyError> {
    let omega: Vec<f64> = medium.porosity.iter().map(|w| w * grid.cell_volume()).collect();
    let mut p = EnergyProblem { model, grid, medium, omega };
    let start = PhaseField::proportional(grid, medium);
    let g0 = p.gradient(&start.flatten());
    let vertex = p.linear_oracle(&g0)?;
    let out = pairwise_fw(&mut p, vertex, tol, max_iter)?;
    let state = p.field(&out.x);
    let energy = energy_unchecked(model, grid, medium, &state);
    Ok(EnergyMinimum { state, energy, gap: out.gap, iterations: out.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, GridConfig};
    use proptest::prelude::*;

    fn spd(n: usize, seed: &[f64]) -> DMatrix<f64> {
        let r = DMatrix::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
        &r * r.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn scalar_model_values() {
        let m = QuadraticCapillary::scalar(1, 1, 1.0).unwrap();
        assert_eq!(capillary_pi(&m, &[0.5], 0, 1.0).unwrap(), vec![0.5]);
        assert_eq!(capillary_pi(&m, &[0.0], 0, 1.0).unwrap(), vec![0.0]);
        assert!(capillary_pi(&m, &[1.5], 0, 1.0).is_err());
        let inv = capillary_phi(&m, &[0.25], 0, 1.0).unwrap();
        assert_eq!(inv.s_star, vec![0.25]);
        assert!(!inv.outside);
        assert!(capillary_phi(&m, &[2.0], 0, 1.0).unwrap().outside);
    }

    #[test]
    fn offset_is_pressure_at_zero() {
        let m = QuadraticCapillary::uniform(1, DMatrix::identity(2, 2), DVector::from_vec(vec![0.3, -0.1])).unwrap();
        assert_eq!(capillary_pi(&m, &[0.0, 0.0], 0, 1.0).unwrap(), vec![0.3, -0.1]);
    }

    #[test]
    fn single_cell_energy() {
        let g = build_grid(&GridConfig::line(1, 0.0, 1.0)).unwrap();
        let med = MediumSpec::homogeneous(&g, 1.0, 1.0, &[1.0, 1.0], &[0.5, 0.5]);
        let m = QuadraticCapillary::scalar(1, 1, 1.0).unwrap();
        let s = PhaseField::new(vec![vec![0.5], vec![0.5]]);
        assert_eq!(total_energy(&m, &g, &med, &s).unwrap(), 0.125);
        let zero = PhaseField::new(vec![vec![1.0], vec![0.0]]);
        let med0 = MediumSpec::homogeneous(&g, 1.0, 1.0, &[1.0, 1.0], &[1.0, 0.0]);
        assert_eq!(total_energy(&m, &g, &med0, &zero).unwrap(), 0.0);
    }

    #[test]
    fn gravity_energy_by_resummation() {
        let g = build_grid(&GridConfig::line(5, 0.0, 1.0)).unwrap();
        let med = MediumSpec::homogeneous(&g, 0.4, 1.0, &[1.0, 2.0], &[0.6, 0.4]).with_gravity(&g, &[1.0, 3.0], 2.0);
        let m = QuadraticCapillary::scalar(5, 1, 0.7).unwrap();
        let rho1 = [0.4, 0.3, 0.0, 0.1, 0.0];
        let s = PhaseField::from_densities(&g, &[rho1.iter().map(|r| 0.4 - r).collect(), rho1.to_vec()]);
        let e = total_energy(&m, &g, &med, &s).unwrap();
        let mut oracle = 0.0;
        for (x, r) in rho1.iter().enumerate() {
            let z = 0.1 + 0.2 * x as f64;
            oracle += 0.2 * (0.35 * r * r + (0.4 - r) * 2.0 * z + r * 6.0 * z);
        }
        assert!((e - oracle).abs() < 1e-14, "{e} vs {oracle}");
    }

    #[test]
    fn inadmissible_states_are_rejected() {
        let g = build_grid(&GridConfig::line(2, 0.0, 1.0)).unwrap();
        let med = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0, 1.0], &[0.5, 0.5]);
        let m = QuadraticCapillary::scalar(2, 1, 1.0).unwrap();
        let over = PhaseField::new(vec![vec![0.25, 0.0], vec![0.25, 0.0]]);
        assert!(matches!(total_energy(&m, &g, &med, &over), Err(EnergyError::InfiniteEnergy { .. })));
        let neg = PhaseField::new(vec![vec![0.3, 0.2], vec![-0.05, 0.05]]);
        assert!(total_energy(&m, &g, &med, &neg).is_err());
        let ok = PhaseField::new(vec![vec![0.125, 0.125], vec![0.125, 0.125]]);
        assert!(total_energy(&m, &g, &med, &ok).unwrap().is_finite());
    }

    #[test]
    fn entropy_examples() {
        let g = build_grid(&GridConfig::line(1, 0.0, 1.0)).unwrap();
        let med = MediumSpec::homogeneous(&g, 1.0, 1.0, &[1.0], &[1.0]);
        assert_eq!(relative_entropy(&[1.0], &g, &med).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((relative_entropy(&[1.0 / e], &g, &med).unwrap() + 1.0 / e).abs() < 1e-15);
        assert_eq!(relative_entropy(&[0.0], &g, &med).unwrap(), 0.0);
        assert!(relative_entropy(&[1.5], &g, &med).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cap.csv");
        std::fs::write(&path, "cell,a_11,a_12,a_21,a_22,b_1\n0,2,0.5,0.5,1,0.1\n1,1,0,0,1,0\n").unwrap();
        let m = QuadraticCapillary::from_csv(&path, 2, 2).unwrap();
        assert_eq!(m.pressure(0, &[1.0, 0.0]), vec![2.1, 0.5]);
        assert_eq!(m.convexity_bounds().1, (1.5f64 + 0.5f64.sqrt()).max(1.0));
        std::fs::write(&path, "cell,a_11\n0,-1\n").unwrap();
        assert!(matches!(QuadraticCapillary::from_csv(&path, 1, 1), Err(EnergyError::NotSpd { .. })));
    }

    /// Two phases, one capillary component: the energy minimizer is a
    /// water-filling profile rho_1 = clamp((lambda - dPsi) / c, 0, omega).
    fn water_filling(c: f64, dpsi: &[f64], omega: f64, vol: f64, m1: f64) -> (Vec<f64>, f64) {
        let fill = |lam: f64| -> Vec<f64> { dpsi.iter().map(|d| ((lam - d) / c).clamp(0.0, omega)).collect() };
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fill(mid).iter().sum::<f64>() * vol < m1 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rho = fill(0.5 * (lo + hi));
        let e = rho.iter().zip(dpsi).map(|(r, d)| vol * (0.5 * c * r * r + d * r)).sum();
        (rho, e)
    }

    #[test]
    fn minimizer_matches_water_filling() {
        let g = build_grid(&GridConfig::line(16, 0.0, 1.0)).unwrap();
        let med = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0, 1.0], &[0.5, 0.5]).with_gravity(&g, &[1.0, 2.0], 1.0);
        let m = QuadraticCapillary::scalar(16, 1, 2.0).unwrap();
        let min = minimize_energy(&m, &g, &med, 1e-14, 5000).unwrap();
        let dpsi: Vec<f64> = (0..16).map(|x| med.potentials[1][x] - med.potentials[0][x]).collect();
        let (rho, e_red) = water_filling(2.0, &dpsi, 0.5, g.cell_volume(), med.masses[1]);
        let base: f64 = (0..16).map(|x| med.potentials[0][x] * 0.5 * g.cell_volume()).sum();
        assert!((min.energy - (e_red + base)).abs() < 1e-11, "{} vs {}", min.energy, e_red + base);
        let dens = min.state.densities(&g);
        for x in 0..16 {
            assert!((dens[1][x] - rho[x]).abs() < 1e-6);
        }
        assert!(min.state.saturation_drift(&g, &med) < 1e-12);
    }

    proptest! {
        #[test]
        fn inverse_roundtrip(seed in proptest::collection::vec(-1.0f64..1.0, 9), s in proptest::collection::vec(0.0f64..0.3, 3)) {
            let a = spd(3, &seed);
            let m = QuadraticCapillary::uniform(1, a, DVector::from_vec(vec![0.1, 0.0, -0.2])).unwrap();
            let z = capillary_pi(&m, &s, 0, 1.0).unwrap();
            let back = capillary_phi(&m, &z, 0, 1.0).unwrap();
            for (u, v) in back.s_star.iter().zip(&s) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn uniform_convexity_sandwich(seed in proptest::collection::vec(-1.0f64..1.0, 4), p in proptest::collection::vec(0.0f64..0.5, 4)) {
            let m = QuadraticCapillary::uniform(1, spd(2, &seed), DVector::zeros(2)).unwrap();
            let (lo, hi) = m.convexity_bounds();
            let (a, b) = (&p[..2], &p[2..]);
            let diff2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            let pb = m.pressure(0, b);
            let bregman = m.potential(0, a) - m.potential(0, b) - pb.iter().zip(a.iter().zip(b)).map(|(g, (x, y))| g * (x - y)).sum::<f64>();
            prop_assert!(bregman <= 0.5 * hi * diff2 * (1.0 + 1e-10) + 1e-15);
            prop_assert!(bregman >= 0.5 * lo * diff2 * (1.0 - 1e-10) - 1e-15);
        }

        #[test]
        fn pressure_is_gradient(seed in proptest::collection::vec(-1.0f64..1.0, 4), s in proptest::collection::vec(0.1f64..0.4, 2)) {
            let m = QuadraticCapillary::uniform(1, spd(2, &seed), DVector::from_vec(vec![0.2, 0.1])).unwrap();
            let h = 1e-4;
            let p = m.pressure(0, &s);
            for k in 0..2 {
                let mut up = s.clone();
                let mut dn = s.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (m.potential(0, &up) - m.potential(0, &dn)) / (2.0 * h);
                prop_assert!((fd - p[k]).abs() < 1e-8);
            }
        }

        #[test]
        fn entropy_bracket(d in proptest::collection::vec(0.0f64..1.0, 6)) {
            let g = build_grid(&GridConfig::line(6, 0.0, 1.0)).unwrap();
            let med = MediumSpec::homogeneous(&g, 0.3, 1.0, &[1.0], &[1.0]);
            let s: Vec<f64> = d.iter().map(|f| f * 0.3 * g.cell_volume()).collect();
            let h = relative_entropy(&s, &g, &med).unwrap();
            prop_assert!(h <= 1e-15);
            prop_assert!(h >= -0.3 / std::f64::consts::E - 1e-15);
        }
    }
}
