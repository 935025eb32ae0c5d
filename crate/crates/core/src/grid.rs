//! Uniform cell grids on the unit torus and on a bounded square box, with an
//! exactly adjoint pair of discrete gradient and divergence operators.
//!
//! Cells are indexed row-major with axis 0 fastest: `i = i0 + n i1 (+ n^2 i2)`.
//! The gradient uses forward differences. On the box every field vanishes
//! outside `[0, n)^2`, so the gradient of a cell field lives on the extended
//! lattice `[-1, n)^2`: the ghost row and column at index `-1` carry the jump
//! across the lower walls.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{2, 3}}")));
        }
        if n < 4 {
            return Err(Error::InvalidGrid(format!("n = {n} < 4")));
        }
        Ok(TorusGrid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Multi-index of cell `i`.
    pub fn index(&self, mut i: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for slot in out.iter_mut().take(self.dim) {
            *slot = i % self.n;
            i /= self.n;
        }
        out
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().rev().fold(0, |acc, &k| acc * self.n + k)
    }

    /// Cell centre `(i + 1/2) h`, written into `x[..dim]`.
    pub fn center(&self, i: usize, x: &mut [f64]) {
        let idx = self.index(i);
        let n = self.n as f64;
        for k in 0..self.dim {
            x[k] = (2 * idx[k] + 1) as f64 / (2.0 * n);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxGrid {
    n: usize,
    h: f64,
}

impl BoxGrid {
    /// `n x n` cells of spacing `h`; side length `L = n h`.
    pub fn new(n: usize, h: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid(format!("box needs n >= 2, got {n}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing {h} must be positive")));
        }
        Ok(BoxGrid { n, h })
    }

    pub fn with_side(n: usize, side: f64) -> Result<Self> {
        Self::new(n, side / n as f64)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn side(&self) -> f64 {
        self.n as f64 * self.h
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    /// Cells of the extended lattice `[-1, n)^2` carrying gradients.
    pub fn lattice_cells(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    pub fn center(&self, i: usize) -> [f64; 2] {
        let (i0, i1) = (i % self.n, i / self.n);
        [(i0 as f64 + 0.5) * self.h, (i1 as f64 + 0.5) * self.h]
    }

    /// Centre of extended-lattice cell `e`, which sits at multi-index `(e0 - 1, e1 - 1)`.
    pub fn lattice_center(&self, e: usize) -> [f64; 2] {
        let m = self.n + 1;
        let (e0, e1) = ((e % m) as f64 - 1.0, (e / m) as f64 - 1.0);
        [(e0 + 0.5) * self.h, (e1 + 0.5) * self.h]
    }

    /// Extended-lattice index of cell `(i0, i1)`, `i0, i1 >= -1`.
    #[inline]
    pub fn lattice_index(&self, i0: isize, i1: isize) -> usize {
        ((i1 + 1) as usize) * (self.n + 1) + (i0 + 1) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "lowercase")]
pub enum Grid {
    Torus(TorusGrid),
    Box(BoxGrid),
}

impl From<TorusGrid> for Grid {
    fn from(g: TorusGrid) -> Self {
        Grid::Torus(g)
    }
}

impl From<BoxGrid> for Grid {
    fn from(g: BoxGrid) -> Self {
        Grid::Box(g)
    }
}

impl Grid {
    pub fn dim(&self) -> usize {
        match self {
            Grid::Torus(g) => g.dim,
            Grid::Box(_) => 2,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Grid::Torus(g) => g.n,
            Grid::Box(g) => g.n,
        }
    }

    pub fn h(&self) -> f64 {
        match self {
            Grid::Torus(g) => g.h(),
            Grid::Box(g) => g.h,
        }
    }

    /// Cell volume `h^d`, the weight of the discrete inner products.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim() as i32)
    }

    pub fn cells(&self) -> usize {
        match self {
            Grid::Torus(g) => g.cells(),
            Grid::Box(g) => g.cells(),
        }
    }

    /// Number of cells carrying a vector field value (per component).
    pub fn vector_cells(&self) -> usize {
        match self {
            Grid::Torus(g) => g.cells(),
            Grid::Box(g) => g.lattice_cells(),
        }
    }

    /// `‖gradient‖² <= 4 d / h²`.
    pub fn gradient_norm_sq_bound(&self) -> f64 {
        let h = self.h();
        4.0 * self.dim() as f64 / (h * h)
    }

    /// Forward differences of `v` written component-major into `out`
    /// (`out[k * vector_cells + e]`).
    pub fn gradient_into(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Grid::Torus(g) => torus_gradient(g, v, out),
            Grid::Box(g) => box_gradient(g, v, out),
        }
    }

    /// Backward differences; the exact negative adjoint of `gradient_into`.
    pub fn divergence_into(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Grid::Torus(g) => torus_divergence(g, z, out),
            Grid::Box(g) => box_divergence(g, z, out),
        }
    }
}

fn torus_gradient(g: &TorusGrid, v: &[f64], out: &mut [f64]) {
    let n = g.n;
    let cells = g.cells();
    let inv_h = n as f64;
    let mut stride = 1;
    for k in 0..g.dim {
        let block = n * stride;
        let comp = &mut out[k * cells..(k + 1) * cells];
        for start in (0..cells).step_by(block) {
            for j in 0..n {
                let row = start + j * stride;
                let next = if j + 1 < n { row + stride } else { start };
                for r in 0..stride {
                    comp[row + r] = (v[next + r] - v[row + r]) * inv_h;
                }
            }
        }
        stride = block;
    }
}

fn torus_divergence(g: &TorusGrid, z: &[f64], out: &mut [f64]) {
    let n = g.n;
    let cells = g.cells();
    let inv_h = n as f64;
    out[..cells].iter_mut().for_each(|o| *o = 0.0);
    let mut stride = 1;
    for k in 0..g.dim {
        let block = n * stride;
        let comp = &z[k * cells..(k + 1) * cells];
        for start in (0..cells).step_by(block) {
            for j in 0..n {
                let row = start + j * stride;
                let prev = if j > 0 { row - stride } else { start + (n - 1) * stride };
                for r in 0..stride {
                    out[row + r] += (comp[row + r] - comp[prev + r]) * inv_h;
                }
            }
        }
        stride = block;
    }
}

fn box_gradient(g: &BoxGrid, v: &[f64], out: &mut [f64]) {
    let n = g.n as isize;
    let m = g.lattice_cells();
    let inv_h = 1.0 / g.h;
    let at = |i0: isize, i1: isize| -> f64 {
        if i0 >= 0 && i1 >= 0 && i0 < n && i1 < n {
            v[(i1 * n + i0) as usize]
        } else {
            0.0
        }
    };
    for i1 in -1..n {
        for i0 in -1..n {
            let e = g.lattice_index(i0, i1);
            let c = at(i0, i1);
            out[e] = (at(i0 + 1, i1) - c) * inv_h;
            out[m + e] = (at(i0, i1 + 1) - c) * inv_h;
        }
    }
}

fn box_divergence(g: &BoxGrid, z: &[f64], out: &mut [f64]) {
    let n = g.n as isize;
    let m = g.lattice_cells();
    let inv_h = 1.0 / g.h;
    for i1 in 0..n {
        for i0 in 0..n {
            let e = g.lattice_index(i0, i1);
            let w = g.lattice_index(i0 - 1, i1);
            let s = g.lattice_index(i0, i1 - 1);
            out[(i1 * n + i0) as usize] = (z[e] - z[w] + z[m + e] - z[m + s]) * inv_h;
        }
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    /// Component-major: `values[k * grid.vector_cells() + e]`.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BitMask {
    pub grid: Grid,
    pub cells: Vec<bool>,
}

/// Header written next to a field CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub grid: Grid,
    pub components: usize,
    pub len: usize,
}

impl ScalarField {
    pub fn zeros(grid: impl Into<Grid>) -> Self {
        let grid = grid.into();
        ScalarField {
            values: vec![0.0; grid.cells()],
            grid,
        }
    }

    pub fn from_values(grid: impl Into<Grid>, values: Vec<f64>) -> Result<Self> {
        let grid = grid.into();
        if values.len() != grid.cells() {
            return Err(Error::Shape(format!(
                "{} values for {} cells",
                values.len(),
                grid.cells()
            )));
        }
        check_finite(&values, "scalar field")?;
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: impl Into<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let grid = grid.into();
        let mut x = [0.0; 3];
        let values = (0..grid.cells())
            .map(|i| {
                match &grid {
                    Grid::Torus(g) => g.center(i, &mut x),
                    Grid::Box(g) => x[..2].copy_from_slice(&g.center(i)),
                }
                f(&x[..grid.dim()])
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `h^d`-weighted inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn header(&self) -> FieldHeader {
        FieldHeader {
            grid: self.grid,
            components: 1,
            len: self.values.len(),
        }
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_values(w, &self.values)
    }

    pub fn read_csv(header: &FieldHeader, r: impl BufRead) -> Result<Self> {
        if header.components != 1 {
            return Err(Error::Shape("scalar field header with several components".into()));
        }
        Self::from_values(header.grid, read_values(r, header.len)?)
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        save_field(csv_path, &self.header(), &self.values)
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let (header, reader) = open_field(csv_path)?;
        Self::read_csv(&header, reader)
    }
}

impl VectorField {
    pub fn zeros(grid: impl Into<Grid>) -> Self {
        let grid = grid.into();
        VectorField {
            values: vec![0.0; grid.dim() * grid.vector_cells()],
            grid,
        }
    }

    pub fn from_values(grid: impl Into<Grid>, values: Vec<f64>) -> Result<Self> {
        let grid = grid.into();
        if values.len() != grid.dim() * grid.vector_cells() {
            return Err(Error::Shape(format!(
                "{} values for {} vector cells",
                values.len(),
                grid.vector_cells()
            )));
        }
        check_finite(&values, "vector field")?;
        Ok(VectorField { grid, values })
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let m = self.grid.vector_cells();
        &self.values[k * m..(k + 1) * m]
    }

    /// Value at cell `e` written into `out[..dim]`.
    #[inline]
    pub fn at(&self, e: usize, out: &mut [f64]) {
        let m = self.grid.vector_cells();
        for (k, o) in out.iter_mut().enumerate().take(self.grid.dim()) {
            *o = self.values[k * m + e];
        }
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `h^d Σ z`, the average of the field over the domain times its volume.
    pub fn integral(&self) -> Vec<f64> {
        let w = self.grid.cell_volume();
        (0..self.grid.dim())
            .map(|k| w * self.component(k).iter().sum::<f64>())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn header(&self) -> FieldHeader {
        FieldHeader {
            grid: self.grid,
            components: self.grid.dim(),
            len: self.values.len(),
        }
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_values(w, &self.values)
    }

    pub fn read_csv(header: &FieldHeader, r: impl BufRead) -> Result<Self> {
        if header.components != header.grid.dim() {
            return Err(Error::Shape("vector field header component count".into()));
        }
        Self::from_values(header.grid, read_values(r, header.len)?)
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        save_field(csv_path, &self.header(), &self.values)
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let (header, reader) = open_field(csv_path)?;
        Self::read_csv(&header, reader)
    }
}

fn write_values(mut w: impl Write, values: &[f64]) -> Result<()> {
    writeln!(w, "value")?;
    for v in values {
        // `Display` for f64 prints the shortest string that parses back to the same bits.
        writeln!(w, "{v}")?;
    }
    Ok(())
}

fn read_values(r: impl BufRead, expected: usize) -> Result<Vec<f64>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "value" => {}
        _ => return Err(Error::Parse("field CSV must start with header `value`".into())),
    }
    let mut values = Vec::with_capacity(expected);
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|e| Error::Parse(format!("field value `{t}`: {e}")))?,
        );
    }
    if values.len() != expected {
        return Err(Error::Shape(format!(
            "field CSV has {} values, header says {expected}",
            values.len()
        )));
    }
    Ok(values)
}

fn header_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

fn save_field(csv_path: &Path, header: &FieldHeader, values: &[f64]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    write_values(&mut file, values)?;
    file.flush()?;
    std::fs::write(header_path(csv_path), serde_json::to_string_pretty(header)?)?;
    Ok(())
}

fn open_field(csv_path: &Path) -> Result<(FieldHeader, std::io::BufReader<std::fs::File>)> {
    let header: FieldHeader = serde_json::from_str(&std::fs::read_to_string(header_path(csv_path))?)?;
    let reader = std::io::BufReader::new(std::fs::File::open(csv_path)?);
    Ok((header, reader))
}

/// Discrete gradient of a scalar field.
pub fn gradient(v: &ScalarField) -> VectorField {
    let mut out = VectorField::zeros(v.grid);
    v.grid.gradient_into(&v.values, &mut out.values);
    out
}

/// Discrete divergence, `⟨gradient(v), z⟩ = -⟨v, divergence(z)⟩`.
pub fn divergence(z: &VectorField) -> ScalarField {
    let mut out = ScalarField::zeros(z.grid);
    z.grid.divergence_into(&z.values, &mut out.values);
    out
}

/// Cells with `u > s`.
pub fn extract_levelset(u: &ScalarField, s: f64) -> BitMask {
    BitMask {
        grid: u.grid,
        cells: u.values.iter().map(|&v| v > s).collect(),
    }
}

impl BitMask {
    pub fn empty(grid: impl Into<Grid>) -> Self {
        let grid = grid.into();
        BitMask {
            cells: vec![false; grid.cells()],
            grid,
        }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn volume(&self) -> f64 {
        self.count() as f64 * self.grid.cell_volume()
    }

    pub fn is_subset_of(&self, other: &BitMask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    pub fn to_field(&self) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.cells.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Run-length encoding over the row-major cell order, starting with a run of `false`.
    pub fn run_lengths(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &c in &self.cells {
            if c == current {
                len += 1;
            } else {
                runs.push(len);
                current = c;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_run_lengths(grid: impl Into<Grid>, runs: &[usize]) -> Result<Self> {
        let grid = grid.into();
        let mut cells = Vec::with_capacity(grid.cells());
        let mut current = false;
        for &r in runs {
            cells.extend(std::iter::repeat_n(current, r));
            current = !current;
        }
        if cells.len() != grid.cells() {
            return Err(Error::Shape(format!(
                "run lengths cover {} cells, grid has {}",
                cells.len(),
                grid.cells()
            )));
        }
        Ok(BitMask { grid, cells })
    }

    /// CSV of the indices of the cells in the mask: header `index`.
    pub fn write_index_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "index")?;
        for (i, _) in self.cells.iter().enumerate().filter(|(_, &c)| c) {
            writeln!(w, "{i}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_has_zero_gradient() {
        for grid in [Grid::from(TorusGrid::new(2, 8).unwrap()), TorusGrid::new(3, 4).unwrap().into()] {
            let v = ScalarField::from_values(grid, vec![3.5; grid.cells()]).unwrap();
            assert!(gradient(&v).values.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn constant_vector_field_is_divergence_free_on_torus() {
        let grid: Grid = TorusGrid::new(2, 8).unwrap().into();
        let mut z = VectorField::zeros(grid);
        z.values.iter_mut().enumerate().for_each(|(i, v)| *v = if i < 64 { 0.3 } else { -1.7 });
        assert!(divergence(&z).values.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn spike_gradient() {
        let g = TorusGrid::new(2, 8).unwrap();
        let mut v = ScalarField::zeros(g);
        let j = g.linear(&[3, 5]);
        v.values[j] = 1.0;
        let dv = gradient(&v);
        let d0 = dv.component(0);
        for (i, &val) in d0.iter().enumerate() {
            let expected = if i == j {
                -8.0
            } else if i == g.linear(&[2, 5]) {
                8.0
            } else {
                0.0
            };
            assert_eq!(val, expected, "cell {i}");
        }
    }

    #[test]
    fn spike_gradient_wraps() {
        let g = TorusGrid::new(2, 4).unwrap();
        let mut v = ScalarField::zeros(g);
        v.values[g.linear(&[0, 0])] = 1.0;
        let dv = gradient(&v);
        assert_eq!(dv.component(0)[g.linear(&[3, 0])], 4.0);
        assert_eq!(dv.component(1)[g.linear(&[0, 3])], 4.0);
    }

    #[test]
    fn divergence_of_spike_gradient_is_discrete_laplacian() {
        // Composing both stencils by hand on a 4x4 torus, h = 1/4:
        // div(D δ_j) = (δ(j+e) - 2δ(j) + δ(j-e)) / h² summed over both axes,
        // so the spike cell gets -2d/h² = -64 and each of its 4 neighbours 16.
        let g = TorusGrid::new(2, 4).unwrap();
        let mut v = ScalarField::zeros(g);
        let j = g.linear(&[1, 2]);
        v.values[j] = 1.0;
        let lap = divergence(&gradient(&v));
        for (i, &val) in lap.values.iter().enumerate() {
            let idx = g.index(i);
            let dist = (idx[0] as isize - 1).abs() + (idx[1] as isize - 2).abs();
            let expected = match dist {
                0 => -64.0,
                1 => 16.0,
                _ => 0.0,
            };
            assert_eq!(val, expected, "cell {idx:?}");
        }
    }

    #[test]
    fn forward_difference_is_first_order() {
        let err = |n: usize| {
            let g = TorusGrid::new(2, n).unwrap();
            let h = g.h();
            let mut v = ScalarField::zeros(g);
            for i in 0..g.cells() {
                v.values[i] = (2.0 * std::f64::consts::PI * g.index(i)[0] as f64 * h).sin();
            }
            let dv = gradient(&v);
            (0..g.cells())
                .map(|i| {
                    let x = g.index(i)[0] as f64 * h;
                    (dv.component(0)[i] - 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * x).cos()).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(16), err(32), err(64));
        assert!((e1 / e2 - 2.0).abs() < 0.15 && (e2 / e3 - 2.0).abs() < 0.1, "{e1} {e2} {e3}");
    }

    #[test]
    fn box_gradient_charges_all_walls() {
        let g = BoxGrid::new(3, 0.5).unwrap();
        let v = ScalarField::from_values(g, vec![1.0; 9]).unwrap();
        let dv = gradient(&v);
        let m = g.lattice_cells();
        // ghost column at i0 = -1 sees the jump into the box
        assert_eq!(dv.values[g.lattice_index(-1, 1)], 2.0);
        assert_eq!(dv.values[m + g.lattice_index(1, -1)], 2.0);
        // far walls
        assert_eq!(dv.values[g.lattice_index(2, 0)], -2.0);
        assert_eq!(dv.values[m + g.lattice_index(0, 2)], -2.0);
        // corner ghost has nothing to see
        assert_eq!(dv.values[g.lattice_index(-1, -1)], 0.0);
        assert_eq!(dv.values[m + g.lattice_index(-1, -1)], 0.0);
    }

    #[test]
    fn levelset_examples() {
        let g = TorusGrid::new(2, 8).unwrap();
        let zero = ScalarField::zeros(g);
        assert_eq!(extract_levelset(&zero, -1.0).count(), 64);
        assert_eq!(extract_levelset(&zero, 0.0).count(), 0);
        let b = BoxGrid::new(8, 1.0 / 8.0).unwrap();
        let mut u = ScalarField::zeros(b);
        for i in 0..64 {
            u.values[i] = (i % 8) as f64 / 8.0;
        }
        let mask = extract_levelset(&u, 0.5);
        for i in 0..64 {
            assert_eq!(mask.cells[i], i % 8 > 4);
        }
    }

    #[test]
    fn run_length_round_trip() {
        let g = TorusGrid::new(2, 4).unwrap();
        let mut m = BitMask::empty(g);
        for i in [0, 1, 5, 6, 7, 15] {
            m.cells[i] = true;
        }
        let runs = m.run_lengths();
        assert_eq!(runs[0], 0);
        assert_eq!(BitMask::from_run_lengths(g, &runs).unwrap(), m);
    }

    #[test]
    fn rejects_non_finite_and_small_grids() {
        assert!(TorusGrid::new(2, 3).is_err());
        assert!(TorusGrid::new(4, 8).is_err());
        let g = TorusGrid::new(2, 4).unwrap();
        let mut values = vec![0.0; 16];
        values[3] = f64::NAN;
        assert!(matches!(ScalarField::from_values(g, values), Err(Error::NonFinite(_))));
    }
}
