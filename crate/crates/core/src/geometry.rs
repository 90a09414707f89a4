//! Cartesian grids, porous-medium data and metric-weighted ground costs.
//!
//! Measures live on cell centers of a uniform grid in one or two dimensions.
//! The ground cost between two cells is the squared length of the shortest
//! path through the neighbor graph, where each edge is measured with the
//! Riemannian metric `mu * K^{-1}`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use nalgebra::{Matrix2, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

/// Cell-center coordinates. The second entry is zero on one-dimensional grids.
pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("grid must have at least one cell along every axis")]
    ZeroCells,
    #[error("box extent along axis {axis} is not positive ({lower} .. {upper})")]
    NonPositiveExtent { axis: usize, lower: f64, upper: f64 },
    #[error("unsupported dimension {0}, expected 1 or 2")]
    Dimension(usize),
    #[error("permeability at cell {cell} is not symmetric positive definite")]
    NotSpd { cell: usize },
    #[error("invalid medium: {0}")]
    InvalidMedium(String),
    #[error("phase {phase} out of range for {count} phases")]
    PhaseIndex { phase: usize, count: usize },
    #[error("the convexity check requires an isotropic permeability")]
    Anisotropic,
    #[error("medium csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("medium csv: {0}")]
    Parse(String),
}

/// Box and resolution of a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub cells: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GridConfig {
    pub fn line(n: usize, lower: f64, upper: f64) -> Self {
        Self { cells: vec![n], lower: vec![lower], upper: vec![upper] }
    }

    pub fn rect(nx: usize, ny: usize, x: (f64, f64), y: (f64, f64)) -> Self {
        Self { cells: vec![nx, ny], lower: vec![x.0, y.0], upper: vec![x.1, y.1] }
    }
}

/// Edge of the neighbor graph used for geodesics (includes diagonals in 2-D).
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub midpoint: Point,
}

/// Axis-aligned interface between two adjacent cells, `a < b`.
#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    pub axis: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    shape: [usize; 2],
    lower: Point,
    upper: Point,
    spacing: Point,
    centers: Vec<Point>,
    cell_volume: f64,
    edges: Vec<Edge>,
    faces: Vec<Face>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

pub fn build_grid(config: &GridConfig) -> Result<Grid, GeometryError> {
    let dim = config.cells.len();
    if dim == 0 || dim > 2 || config.lower.len() != dim || config.upper.len() != dim {
        return Err(GeometryError::Dimension(dim));
    }
    if config.cells.contains(&0) {
        return Err(GeometryError::ZeroCells);
    }
    for axis in 0..dim {
        let (lo, hi) = (config.lower[axis], config.upper[axis]);
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(GeometryError::NonPositiveExtent { axis, lower: lo, upper: hi });
        }
    }
    let mut shape = [1usize; 2];
    let mut lower = [0.0; 2];
    let mut upper = [0.0; 2];
    let mut spacing = [1.0; 2];
    for axis in 0..dim {
        shape[axis] = config.cells[axis];
        lower[axis] = config.lower[axis];
        upper[axis] = config.upper[axis];
        spacing[axis] = (upper[axis] - lower[axis]) / shape[axis] as f64;
    }
    let n = shape[0] * shape[1];
    let mut centers = Vec::with_capacity(n);
    for j in 0..shape[1] {
        for i in 0..shape[0] {
            let x = lower[0] + (i as f64 + 0.5) * spacing[0];
            let y = if dim == 2 { lower[1] + (j as f64 + 0.5) * spacing[1] } else { 0.0 };
            centers.push([x, y]);
        }
    }
    let cell_volume = spacing[..dim].iter().product();

    let idx = |i: usize, j: usize| i + shape[0] * j;
    let mut faces = Vec::new();
    let mut edges = Vec::new();
    let mut push_edge = |a: usize, b: usize, centers: &[Point]| {
        let (pa, pb) = (centers[a], centers[b]);
        let length = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let midpoint = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        edges.push(Edge { a, b, length, midpoint });
    };
    for j in 0..shape[1] {
        for i in 0..shape[0] {
            let a = idx(i, j);
            if i + 1 < shape[0] {
                faces.push(Face { a, b: idx(i + 1, j), axis: 0, distance: spacing[0] });
                push_edge(a, idx(i + 1, j), &centers);
            }
            if dim == 2 && j + 1 < shape[1] {
                faces.push(Face { a, b: idx(i, j + 1), axis: 1, distance: spacing[1] });
                push_edge(a, idx(i, j + 1), &centers);
                if i + 1 < shape[0] {
                    push_edge(a, idx(i + 1, j + 1), &centers);
                }
                if i > 0 {
                    push_edge(a, idx(i - 1, j + 1), &centers);
                }
            }
        }
    }
    let mut adjacency = vec![Vec::new(); n];
    for (k, e) in edges.iter().enumerate() {
        adjacency[e.a].push((e.b, k));
        adjacency[e.b].push((e.a, k));
    }
    Ok(Grid { dim, shape, lower, upper, spacing, centers, cell_volume, edges, faces, adjacency })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn cell_count(&self) -> usize {
        self.centers.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn spacing(&self) -> Point {
        self.spacing
    }

    pub fn lower(&self) -> Point {
        self.lower
    }

    pub fn upper(&self) -> Point {
        self.upper
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn center(&self, cell: usize) -> Point {
        self.centers[cell]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.shape[0] * j
    }

    /// Graph neighbors of `cell` together with the connecting edge.
    pub fn neighbors(&self, cell: usize) -> impl Iterator<Item = (usize, &Edge)> + '_ {
        self.adjacency[cell].iter().map(move |&(nb, k)| (nb, &self.edges[k]))
    }

    pub fn is_connected(&self) -> bool {
        let n = self.cell_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(c) = stack.pop() {
            for (nb, _) in self.neighbors(c) {
                if !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Squared Euclidean distance between two cell centers.
    pub fn dist_sq(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.centers[a], self.centers[b]);
        (pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)
    }

    /// Worst ratio between neighbor-graph path length and Euclidean distance.
    ///
    /// One-dimensional grids are exact (ratio 1). On the 8-neighbor stencil
    /// a straight segment is approximated by axis moves plus diagonal moves,
    /// and the worst direction inside each cone gives `sqrt(1 + r^2)` with
    /// `r = (|diag| - h_axis) / h_other`.
    pub fn graph_stretch(&self) -> f64 {
        if self.dim == 1 {
            return 1.0;
        }
        let [hx, hy] = self.spacing;
        let diag = (hx * hx + hy * hy).sqrt();
        let rx = (diag - hx) / hy;
        let ry = (diag - hy) / hx;
        (1.0 + rx * rx).sqrt().max((1.0 + ry * ry).sqrt())
    }

    /// Difference quotient of a cell field across a face.
    pub fn face_gradient(&self, field: &[f64], face: &Face) -> f64 {
        (field[face.b] - field[face.a]) / face.distance
    }

    /// Discrete `|grad f|^2` integrated over the domain, from axis-aligned
    /// neighbor differences. Every diagnostic uses this stencil.
    pub fn gradient_sq_norm(&self, field: &[f64]) -> f64 {
        self.faces.iter().map(|f| self.cell_volume * self.face_gradient(field, f).powi(2)).sum()
    }

    /// Discrete `int f^2`.
    pub fn l2_sq_norm(&self, field: &[f64]) -> f64 {
        field.iter().map(|v| v * v).sum::<f64>() * self.cell_volume
    }
}

/// Permeability field: scalar `kappa(x) I` or a full symmetric tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum Permeability {
    Isotropic(Vec<f64>),
    /// `[kxx, kxy, kyy]` per cell; 1-D grids read `kxx` only.
    Tensor(Vec<[f64; 3]>),
}

impl Permeability {
    pub fn len(&self) -> usize {
        match self {
            Permeability::Isotropic(k) => k.len(),
            Permeability::Tensor(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn matrix(&self, cell: usize, dim: usize) -> Matrix2<f64> {
        match self {
            Permeability::Isotropic(k) => Matrix2::new(k[cell], 0.0, 0.0, k[cell]),
            Permeability::Tensor(t) => {
                let [xx, xy, yy] = t[cell];
                if dim == 1 {
                    Matrix2::new(xx, 0.0, 0.0, xx)
                } else {
                    Matrix2::new(xx, xy, xy, yy)
                }
            }
        }
    }

    /// Smallest and largest eigenvalue of `K` at a cell.
    pub fn eigen_bounds(&self, cell: usize, dim: usize) -> (f64, f64) {
        let eig = SymmetricEigen::new(self.matrix(cell, dim));
        let (a, b) = (eig.eigenvalues[0], eig.eigenvalues[1]);
        (a.min(b), a.max(b))
    }

    /// `delta . K^{-1} delta`.
    pub fn inverse_quadratic(&self, cell: usize, dim: usize, delta: Point) -> f64 {
        match self {
            Permeability::Isotropic(k) => (delta[0] * delta[0] + delta[1] * delta[1]) / k[cell],
            Permeability::Tensor(_) => {
                let m = self.matrix(cell, dim);
                let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
                let (dx, dy) = (delta[0], delta[1]);
                (m[(1, 1)] * dx * dx - 2.0 * m[(0, 1)] * dx * dy + m[(0, 0)] * dy * dy) / det
            }
        }
    }

    /// Diagonal entry `K_{axis,axis}`, used for two-point face fluxes.
    pub fn axis_component(&self, cell: usize, axis: usize) -> f64 {
        match self {
            Permeability::Isotropic(k) => k[cell],
            Permeability::Tensor(t) => {
                if axis == 0 {
                    t[cell][0]
                } else {
                    t[cell][2]
                }
            }
        }
    }

    /// Harmonic average of the normal component across a face.
    pub fn face_value(&self, face: &Face) -> f64 {
        let ka = self.axis_component(face.a, face.axis);
        let kb = self.axis_component(face.b, face.axis);
        2.0 * ka * kb / (ka + kb)
    }
}

/// Porosity, permeability, viscosities, external potentials and phase masses.
#[derive(Debug, Clone)]
pub struct MediumSpec {
    pub porosity: Vec<f64>,
    pub permeability: Permeability,
    pub viscosities: Vec<f64>,
    /// `potentials[i][cell]` is `Psi_i` at the cell center.
    pub potentials: Vec<Vec<f64>>,
    /// Phase masses `m_i` (volume units).
    pub masses: Vec<f64>,
    pub kappa_lower: f64,
    pub kappa_upper: f64,
}

impl MediumSpec {
    /// Constant porosity and scalar permeability, zero potentials, masses split
    /// by `fractions` of the pore volume.
    pub fn homogeneous(grid: &Grid, porosity: f64, kappa: f64, viscosities: &[f64], fractions: &[f64]) -> Self {
        let n = grid.cell_count();
        let pore = porosity * grid.cell_volume() * n as f64;
        let total: f64 = fractions.iter().sum();
        MediumSpec {
            porosity: vec![porosity; n],
            permeability: Permeability::Isotropic(vec![kappa; n]),
            viscosities: viscosities.to_vec(),
            potentials: vec![vec![0.0; n]; viscosities.len()],
            masses: fractions.iter().map(|f| pore * f / total).collect(),
            kappa_lower: kappa,
            kappa_upper: kappa,
        }
    }

    pub fn phase_count(&self) -> usize {
        self.viscosities.len()
    }

    /// Gravitational potentials `Psi_i = rho_i g z`, `z` the last grid axis.
    pub fn with_gravity(mut self, grid: &Grid, densities: &[f64], g: f64) -> Self {
        let axis = grid.dim() - 1;
        self.potentials =
            densities.iter().map(|rho| grid.centers().iter().map(|p| rho * g * p[axis]).collect()).collect();
        self
    }

    /// Replace the permeability and refresh the ellipticity bounds from data.
    pub fn with_permeability(mut self, grid: &Grid, permeability: Permeability) -> Self {
        self.permeability = permeability;
        let (lo, hi) = self.measured_kappa_bounds(grid);
        self.kappa_lower = lo;
        self.kappa_upper = hi;
        self
    }

    pub fn measured_kappa_bounds(&self, grid: &Grid) -> (f64, f64) {
        (0..self.permeability.len())
            .map(|c| self.permeability.eigen_bounds(c, grid.dim()))
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), (a, b)| (lo.min(a), hi.max(b)))
    }

    pub fn pore_volume(&self, grid: &Grid) -> f64 {
        self.porosity.iter().sum::<f64>() * grid.cell_volume()
    }

    /// Rescale the masses so they sum to the pore volume exactly. Refuses
    /// when the relative discrepancy exceeds `max_relative`.
    pub fn normalize_masses(&mut self, grid: &Grid, max_relative: f64) -> Result<f64, GeometryError> {
        let pore = self.pore_volume(grid);
        let total: f64 = self.masses.iter().sum();
        let rel = (total - pore).abs() / pore;
        if rel > max_relative {
            return Err(GeometryError::InvalidMedium(format!(
                "phase masses sum to {total}, pore volume is {pore} (relative discrepancy {rel:.3e})"
            )));
        }
        let scale = pore / total;
        for m in &mut self.masses {
            *m *= scale;
        }
        // absorb the last rounding into the largest phase
        let resid = pore - self.masses.iter().sum::<f64>();
        if let Some(k) = (0..self.masses.len()).max_by(|&a, &b| self.masses[a].total_cmp(&self.masses[b])) {
            self.masses[k] += resid;
        }
        Ok(rel)
    }

    pub fn validate(&self, grid: &Grid) -> Result<(), GeometryError> {
        let n = grid.cell_count();
        let bad = |msg: String| Err(GeometryError::InvalidMedium(msg));
        if self.porosity.len() != n || self.permeability.len() != n {
            return bad(format!("fields must have {n} cells"));
        }
        if self.viscosities.is_empty() {
            return bad("at least one phase is required".into());
        }
        if self.potentials.len() != self.phase_count() || self.masses.len() != self.phase_count() {
            return bad("potentials and masses must be given for every phase".into());
        }
        if let Some(c) = self.porosity.iter().position(|&w| !(w > 0.0 && w < 1.0)) {
            return bad(format!("porosity at cell {c} must lie in (0, 1)"));
        }
        if self.viscosities.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return bad("viscosities must be positive".into());
        }
        if self.potentials.iter().any(|p| p.len() != n || p.iter().any(|v| !v.is_finite())) {
            return bad("potentials must be finite at every cell".into());
        }
        if self.masses.iter().any(|&m| !(m > 0.0)) {
            return bad("phase masses must be positive".into());
        }
        for c in 0..n {
            let (lo, hi) = self.permeability.eigen_bounds(c, grid.dim());
            if !(lo > 0.0) || !hi.is_finite() {
                return Err(GeometryError::NotSpd { cell: c });
            }
            let slack = 1e-12 * hi;
            if lo < self.kappa_lower - slack || hi > self.kappa_upper + slack {
                return bad(format!(
                    "permeability at cell {c} has eigenvalues [{lo}, {hi}] outside [{}, {}]",
                    self.kappa_lower, self.kappa_upper
                ));
            }
        }
        let pore = self.pore_volume(grid);
        let total: f64 = self.masses.iter().sum();
        if (total - pore).abs() > 1e-12 * pore {
            return bad(format!("phase masses sum to {total} but the pore volume is {pore}"));
        }
        Ok(())
    }

    /// Load porosity, permeability and potentials from CSV.
    ///
    /// Columns: `cell_index, x, [y], omega, kappa | kxx,kxy,kyy, psi_0..psi_N`.
    /// Viscosities and masses are not part of the file.
    pub fn from_csv(grid: &Grid, path: &Path, viscosities: &[f64], masses: &[f64]) -> Result<Self, GeometryError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let parse_err = |m: String| GeometryError::Parse(m);
        let cell_col = col("cell_index").ok_or_else(|| parse_err("missing column cell_index".into()))?;
        let omega_col = col("omega").ok_or_else(|| parse_err("missing column omega".into()))?;
        let phases = viscosities.len();
        let psi_cols: Vec<usize> = (0..phases)
            .map(|i| col(&format!("psi_{i}")).ok_or_else(|| parse_err(format!("missing column psi_{i}"))))
            .collect::<Result<_, _>>()?;
        let kappa_col = col("kappa");
        let tensor_cols = match (col("kxx"), col("kxy"), col("kyy")) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        };
        if kappa_col.is_none() && tensor_cols.is_none() {
            return Err(parse_err("need either kappa or kxx,kxy,kyy columns".into()));
        }
        let n = grid.cell_count();
        let mut seen = vec![false; n];
        let mut porosity = vec![0.0; n];
        let mut kappa = vec![0.0; n];
        let mut tensor = vec![[0.0; 3]; n];
        let mut potentials = vec![vec![0.0; n]; phases];
        for rec in rdr.records() {
            let rec = rec?;
            let num = |k: usize| -> Result<f64, GeometryError> {
                rec.get(k)
                    .ok_or_else(|| parse_err(format!("short row {rec:?}")))?
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("{e} in row {rec:?}")))
            };
            let cell = num(cell_col)? as usize;
            if cell >= n {
                return Err(parse_err(format!("cell_index {cell} out of range")));
            }
            seen[cell] = true;
            porosity[cell] = num(omega_col)?;
            if let Some([a, b, c]) = tensor_cols {
                tensor[cell] = [num(a)?, num(b)?, num(c)?];
            } else if let Some(k) = kappa_col {
                kappa[cell] = num(k)?;
            }
            for (i, &pc) in psi_cols.iter().enumerate() {
                potentials[i][cell] = num(pc)?;
            }
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(parse_err(format!("cell {c} missing from medium file")));
        }
        let permeability =
            if tensor_cols.is_some() { Permeability::Tensor(tensor) } else { Permeability::Isotropic(kappa) };
        let medium = MediumSpec {
            porosity,
            permeability: Permeability::Isotropic(vec![1.0; n]),
            viscosities: viscosities.to_vec(),
            potentials,
            masses: masses.to_vec(),
            kappa_lower: 1.0,
            kappa_upper: 1.0,
        };
        Ok(medium.with_permeability(grid, permeability))
    }
}

/// Dense symmetric cost matrix over cell pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for x in 0..n {
            for y in 0..n {
                data.push(f(x, y));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.data[x * self.n..(x + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Median over off-diagonal entries.
    pub fn median_offdiag(&self) -> f64 {
        let mut v: Vec<f64> = (0..self.n)
            .flat_map(|x| (0..self.n).filter(move |&y| y != x).map(move |y| (x, y)))
            .map(|(x, y)| self.get(x, y))
            .collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|c| c * factor).collect() }
    }
}

/// Per-phase geodesic costs `d_i^2` plus the Euclidean reference `|x-y|^2`.
#[derive(Debug, Clone)]
pub struct CostBundle {
    pub phases: Vec<CostMatrix>,
    pub reference: CostMatrix,
}

impl CostBundle {
    pub fn build(grid: &Grid, medium: &MediumSpec) -> Result<Self, GeometryError> {
        let unit = unit_viscosity_geodesics(grid, medium)?;
        let phases = medium.viscosities.iter().map(|&mu| unit.scaled(mu)).collect();
        let reference = CostMatrix::from_fn(grid.cell_count(), |x, y| grid.dist_sq(x, y));
        Ok(CostBundle { phases, reference })
    }

    pub fn phase(&self, i: usize) -> &CostMatrix {
        &self.phases[i]
    }
}

/// Length of a straight edge under the piecewise-constant metric `K^{-1}`:
/// half of the segment lies in each endpoint cell.
fn edge_weight(grid: &Grid, k: &Permeability, e: &Edge) -> f64 {
    let (pa, pb) = (grid.center(e.a), grid.center(e.b));
    let delta = [pb[0] - pa[0], pb[1] - pa[1]];
    0.5 * k.inverse_quadratic(e.a, grid.dim(), delta).sqrt() + 0.5 * k.inverse_quadratic(e.b, grid.dim(), delta).sqrt()
}

fn check_spd(grid: &Grid, medium: &MediumSpec) -> Result<(), GeometryError> {
    for c in 0..grid.cell_count() {
        let (lo, hi) = medium.permeability.eigen_bounds(c, grid.dim());
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(GeometryError::NotSpd { cell: c });
        }
    }
    Ok(())
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| self.1.cmp(&other.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(grid: &Grid, weights: &[f64], source: usize) -> Vec<f64> {
    let n = grid.cell_count();
    let mut dist = vec![f64::INFINITY; n];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapItem(0.0, source));
    while let Some(HeapItem(d, c)) = heap.pop() {
        if d > dist[c] {
            continue;
        }
        for &(nb, k) in &grid.adjacency[c] {
            let nd = d + weights[k];
            if nd < dist[nb] {
                dist[nb] = nd;
                heap.push(HeapItem(nd, nb));
            }
        }
    }
    dist
}

/// Squared geodesic distances for `mu = 1`; phase costs scale linearly in `mu_i`.
fn unit_viscosity_geodesics(grid: &Grid, medium: &MediumSpec) -> Result<CostMatrix, GeometryError> {
    check_spd(grid, medium)?;
    let weights: Vec<f64> = grid.edges().iter().map(|e| edge_weight(grid, &medium.permeability, e)).collect();
    let n = grid.cell_count();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|s| dijkstra(grid, &weights, s)).collect();
    // symmetrize the rounding so the matrix is exactly symmetric
    let data = CostMatrix::from_fn(n, |x, y| {
        let d = 0.5 * (rows[x][y] + rows[y][x]);
        d * d
    });
    Ok(data)
}

/// `Csq_i[x][y] = d_i(x, y)^2` for a single phase.
pub fn geodesic_cost_matrix(grid: &Grid, medium: &MediumSpec, phase: usize) -> Result<CostMatrix, GeometryError> {
    let count = medium.phase_count();
    let mu = *medium.viscosities.get(phase).ok_or(GeometryError::PhaseIndex { phase, count })?;
    Ok(unit_viscosity_geodesics(grid, medium)?.scaled(mu))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub pass: bool,
    /// Boundary-adjacent cells where a hypothesis fails, sorted and deduplicated.
    pub offending: Vec<usize>,
    pub lines_checked: usize,
}

/// Discrete test of the boundary monotonicity conditions on an isotropic
/// permeability: along every grid line leaving the box, `kappa` must be
/// nondecreasing inward within `boundary_layer`, and at the boundary cell the
/// outward difference is either strictly negative or both the first and
/// second differences vanish. Only axis-aligned normals are tested.
pub fn check_geodesic_convexity_isotropic(
    grid: &Grid,
    medium: &MediumSpec,
    boundary_layer: f64,
    tol: f64,
) -> Result<ConvexityReport, GeometryError> {
    let kappa = match &medium.permeability {
        Permeability::Isotropic(k) => k,
        Permeability::Tensor(_) => return Err(GeometryError::Anisotropic),
    };
    let scale = kappa.iter().copied().fold(0.0, f64::max).max(1.0);
    let [nx, ny] = grid.shape();
    let mut lines: Vec<(Vec<usize>, f64)> = Vec::new();
    let h = grid.spacing();
    for j in 0..ny {
        lines.push(((0..nx).map(|i| grid.index(i, j)).collect(), h[0]));
        lines.push(((0..nx).rev().map(|i| grid.index(i, j)).collect(), h[0]));
    }
    if grid.dim() == 2 {
        for i in 0..nx {
            lines.push(((0..ny).map(|j| grid.index(i, j)).collect(), h[1]));
            lines.push(((0..ny).rev().map(|j| grid.index(i, j)).collect(), h[1]));
        }
    }
    let mut offending = Vec::new();
    for (cells, h) in &lines {
        // cells[0] touches the boundary; higher positions go inward
        let depth = ((boundary_layer / h).floor() as usize + 1).clamp(1, cells.len());
        let k: Vec<f64> = cells.iter().map(|&c| kappa[c]).collect();
        let abs_tol = tol * scale;
        let mut ok = true;
        for p in 0..depth.saturating_sub(1).min(k.len() - 1) {
            if k[p] > k[p + 1] + abs_tol {
                ok = false;
            }
        }
        if k.len() >= 2 {
            let d1 = (k[0] - k[1]) / h;
            let d2 = if k.len() >= 3 { (k[0] - 2.0 * k[1] + k[2]) / (h * h) } else { 0.0 };
            let strictly_decreasing = d1 < -abs_tol / h;
            let flat = d1.abs() <= abs_tol / h && d2.abs() <= abs_tol / (h * h);
            if !(strictly_decreasing || flat) {
                ok = false;
            }
        }
        if !ok {
            offending.push(cells[0]);
        }
    }
    offending.sort_unstable();
    offending.dedup();
    Ok(ConvexityReport { pass: offending.is_empty(), offending, lines_checked: lines.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Grid {
        build_grid(&GridConfig::line(n, 0.0, 1.0)).unwrap()
    }

    #[test]
    fn one_dimensional_centers() {
        let g = line(4);
        let xs: Vec<f64> = g.centers().iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(g.cell_volume(), 0.25);
        assert!(g.is_connected());
    }

    #[test]
    fn two_by_two() {
        let g = build_grid(&GridConfig::rect(2, 2, (0.0, 1.0), (0.0, 1.0))).unwrap();
        assert_eq!(g.cell_count(), 4);
        assert_eq!(g.cell_volume(), 0.25);
        // 4 axis edges + 2 diagonals
        assert_eq!(g.edges().len(), 6);
        assert_eq!(g.faces().len(), 4);
        assert!(g.is_connected());
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(matches!(build_grid(&GridConfig::line(0, 0.0, 1.0)), Err(GeometryError::ZeroCells)));
        assert!(matches!(build_grid(&GridConfig::line(3, 1.0, 1.0)), Err(GeometryError::NonPositiveExtent { .. })));
    }

    #[test]
    fn constant_metric_neighbor_cost() {
        let g = line(5);
        let m = MediumSpec::homogeneous(&g, 0.5, 4.0, &[1.0], &[1.0]);
        let c = geodesic_cost_matrix(&g, &m, 0).unwrap();
        let h: f64 = 0.2;
        assert!((c.get(0, 1) - h * h / 4.0).abs() < 1e-15);
        assert!((c.get(3, 2) - h * h / 4.0).abs() < 1e-15);
    }

    #[test]
    fn homogeneous_identity_matches_reference() {
        let g = line(6);
        let mu = 3.0;
        let m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[mu], &[1.0]);
        let bundle = CostBundle::build(&g, &m).unwrap();
        for x in 0..6 {
            for y in 0..6 {
                let expect = mu * bundle.reference.get(x, y);
                assert!((bundle.phase(0).get(x, y) - expect).abs() < 1e-12 * (1.0 + expect));
            }
        }
    }

    #[test]
    fn heterogeneous_three_cells_against_path_enumeration() {
        let g = line(3);
        let m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0], &[1.0])
            .with_permeability(&g, Permeability::Isotropic(vec![1.0, 4.0, 1.0]));
        let c = geodesic_cost_matrix(&g, &m, 0).unwrap();
        let kappa = [1.0f64, 4.0, 1.0];
        let h: f64 = 1.0 / 3.0;
        let w = |a: usize, b: usize| 0.5 * h / kappa[a].sqrt() + 0.5 * h / kappa[b].sqrt();
        // enumerate every simple path 0 -> 2 on the 3-node line graph
        fn walk(at: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if at == 2 {
                out.push(path.clone());
                return;
            }
            for nb in [at.wrapping_sub(1), at + 1] {
                if nb < 3 && !path.contains(&nb) {
                    path.push(nb);
                    walk(nb, path, out);
                    path.pop();
                }
            }
        }
        let mut paths = Vec::new();
        walk(0, &mut vec![0], &mut paths);
        let best = paths.iter().map(|p| p.windows(2).map(|e| w(e[0], e[1])).sum::<f64>()).fold(f64::INFINITY, f64::min);
        assert!((c.get(0, 2).sqrt() - best).abs() < 1e-14);
        assert!((c.get(0, 2).sqrt() - (c.get(0, 1).sqrt() + c.get(1, 2).sqrt())).abs() < 1e-14);
    }

    #[test]
    fn non_spd_tensor_rejected() {
        let g = build_grid(&GridConfig::rect(2, 1, (0.0, 1.0), (0.0, 1.0))).unwrap();
        let m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0], &[1.0]);
        let mut m2 = m.clone();
        m2.permeability = Permeability::Tensor(vec![[1.0, 2.0, 1.0]; 2]);
        assert!(matches!(geodesic_cost_matrix(&g, &m2, 0), Err(GeometryError::NotSpd { .. })));
    }

    #[test]
    fn stretch_of_square_stencil() {
        let g = build_grid(&GridConfig::rect(3, 3, (0.0, 1.0), (0.0, 1.0))).unwrap();
        assert!((g.graph_stretch() - (4.0 - 2.0 * 2f64.sqrt()).sqrt()).abs() < 1e-14);
        assert_eq!(line(3).graph_stretch(), 1.0);
    }

    #[test]
    fn convexity_constant_kappa_passes() {
        let g = build_grid(&GridConfig::rect(6, 6, (0.0, 1.0), (0.0, 1.0))).unwrap();
        let m = MediumSpec::homogeneous(&g, 0.5, 2.0, &[1.0], &[1.0]);
        let r = check_geodesic_convexity_isotropic(&g, &m, 0.3, 1e-9).unwrap();
        assert!(r.pass);
        assert_eq!(r.lines_checked, 24);
    }

    #[test]
    fn convexity_increasing_toward_boundary_fails() {
        let g = line(8);
        let kappa: Vec<f64> = g.centers().iter().map(|p| 1.0 + (p[0] - 0.5).abs()).collect();
        let m =
            MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0], &[1.0]).with_permeability(&g, Permeability::Isotropic(kappa));
        let r = check_geodesic_convexity_isotropic(&g, &m, 0.3, 1e-9).unwrap();
        assert!(!r.pass);
        assert_eq!(r.offending, vec![0, 7]);
    }

    #[test]
    fn convexity_decreasing_outward_passes() {
        let g = build_grid(&GridConfig::rect(8, 8, (0.0, 1.0), (0.0, 1.0))).unwrap();
        let kappa: Vec<f64> = g
            .centers()
            .iter()
            .map(|p| {
                let bump = |t: f64| 2.0 - (-t.min(1.0 - t) / 0.2).exp();
                bump(p[0]) * bump(p[1])
            })
            .collect();
        // oracle: the discrete outward differences at every boundary cell are negative
        for j in 0..8 {
            assert!(kappa[g.index(0, j)] < kappa[g.index(1, j)]);
            assert!(kappa[g.index(7, j)] < kappa[g.index(6, j)]);
            assert!(kappa[g.index(j, 0)] < kappa[g.index(j, 1)]);
        }
        let m =
            MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0], &[1.0]).with_permeability(&g, Permeability::Isotropic(kappa));
        let r = check_geodesic_convexity_isotropic(&g, &m, 0.25, 1e-9).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn convexity_rejects_tensor() {
        let g = line(3);
        let m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0], &[1.0])
            .with_permeability(&g, Permeability::Tensor(vec![[1.0, 0.0, 1.0]; 3]));
        assert!(matches!(check_geodesic_convexity_isotropic(&g, &m, 0.1, 1e-9), Err(GeometryError::Anisotropic)));
    }

    #[test]
    fn mass_normalization() {
        let g = line(4);
        let mut m = MediumSpec::homogeneous(&g, 0.5, 1.0, &[1.0, 1.0], &[0.3, 0.7]);
        m.masses[0] *= 1.0 + 1e-8;
        m.normalize_masses(&g, 1e-6).unwrap();
        m.validate(&g).unwrap();
        m.masses[0] *= 1.01;
        assert!(m.normalize_masses(&g, 1e-6).is_err());
    }
}
