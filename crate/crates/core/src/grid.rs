//! Uniform cell-centered grids, discrete fields and the integral functionals
//! shared by every diagnostic.
//!
//! A grid has one or two axes. The last axis is always the convection
//! direction `x_N`; in two dimensions axis 0 is the transversal variable `x'`.
//! Values are stored row-major with `x_N` varying fastest, so every `x'`-line
//! is a contiguous slice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 2;

const CENTER_SNAP: f64 = 1e-9;

/// Pairwise (cascade) summation with a fixed split order.
///
/// The result only depends on the input order, never on scheduling, which
/// keeps reductions bit-reproducible.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        s
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Pairwise sum of `g(v)` over a slice.
pub fn pairwise_sum_map(values: &[f64], g: impl Fn(f64) -> f64 + Copy) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        let mut s = 0.0;
        for &v in values {
            s += g(v);
        }
        s
    } else {
        let mid = values.len() / 2;
        pairwise_sum_map(&values[..mid], g) + pairwise_sum_map(&values[mid..], g)
    }
}

/// Uniform tensor mesh over a box in one or two dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRecord", into = "GridRecord")]
pub struct Grid {
    dim: usize,
    cells: [usize; MAX_DIM],
    spacing: [f64; MAX_DIM],
    origin: [f64; MAX_DIM],
}

/// Serialized form of a [`Grid`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRecord {
    pub cells: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
}

impl TryFrom<GridRecord> for Grid {
    type Error = Error;

    fn try_from(r: GridRecord) -> Result<Self> {
        Grid::new(&r.cells, &r.spacing, &r.origin)
    }
}

impl From<Grid> for GridRecord {
    fn from(g: Grid) -> Self {
        GridRecord {
            cells: g.cells().to_vec(),
            spacing: g.spacings().to_vec(),
            origin: g.origins().to_vec(),
        }
    }
}

impl Grid {
    /// Builds a grid from its low corner. The point `x = 0` must be a cell center.
    pub fn new(cells: &[usize], spacing: &[f64], origin: &[f64]) -> Result<Self> {
        let dim = cells.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=2")));
        }
        if spacing.len() != dim || origin.len() != dim {
            return Err(Error::InvalidGrid(
                "cells, spacing and origin must have one entry per axis".into(),
            ));
        }
        let mut grid = Grid {
            dim,
            cells: [1; MAX_DIM],
            spacing: [1.0; MAX_DIM],
            origin: [0.0; MAX_DIM],
        };
        for axis in 0..dim {
            let (n, h, o) = (cells[axis], spacing[axis], origin[axis]);
            if n < 4 {
                return Err(Error::InvalidGrid(format!("axis {axis} has {n} cells, need >= 4")));
            }
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {axis} spacing {h} must be positive")));
            }
            if !o.is_finite() {
                return Err(Error::InvalidGrid(format!("axis {axis} origin {o} is not finite")));
            }
            let k = -o / h - 0.5;
            if (k - k.round()).abs() > 1e-6 || k.round() < 0.0 || k.round() >= n as f64 {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: x = 0 is not a cell center (origin {o}, spacing {h})"
                )));
            }
            grid.cells[axis] = n;
            grid.spacing[axis] = h;
            grid.origin[axis] = o;
        }
        Ok(grid)
    }

    /// Smallest grid with the given spacing whose box covers `[lower, upper]`
    /// per axis and has a cell centered at the origin.
    pub fn covering(lower: &[f64], upper: &[f64], spacing: &[f64]) -> Result<Self> {
        let dim = spacing.len();
        if lower.len() != dim || upper.len() != dim {
            return Err(Error::InvalidGrid("lower/upper/spacing lengths differ".into()));
        }
        let mut cells = Vec::with_capacity(dim);
        let mut origin = Vec::with_capacity(dim);
        for axis in 0..dim {
            let (lo, hi, h) = (lower[axis], upper[axis], spacing[axis]);
            if !(lo < 0.0 && hi > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis}: box [{lo}, {hi}] must contain the origin in its interior"
                )));
            }
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidGrid(format!("axis {axis} spacing {h} must be positive")));
            }
            let left = (-lo / h - 0.5 - CENTER_SNAP).ceil().max(0.0) as usize;
            let right = (hi / h - 0.5 - CENTER_SNAP).ceil().max(0.0) as usize;
            cells.push(left + 1 + right);
            origin.push(-(left as f64 + 0.5) * h);
        }
        Grid::new(&cells, spacing, &origin)
    }

    /// One-dimensional convenience wrapper around [`Grid::covering`].
    pub fn line(lower: f64, upper: f64, spacing: f64) -> Result<Self> {
        Grid::covering(&[lower], &[upper], &[spacing])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn origins(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn origin(&self, axis: usize) -> f64 {
        self.origin[axis]
    }

    pub fn n(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    /// Index of the convection axis `x_N`.
    pub fn xn_axis(&self) -> usize {
        self.dim - 1
    }

    /// Number of cells along `x_N`.
    pub fn line_len(&self) -> usize {
        self.cells[self.dim - 1]
    }

    /// Number of `x'`-lines (1 in one dimension).
    pub fn n_lines(&self) -> usize {
        self.len() / self.line_len()
    }

    pub fn len(&self) -> usize {
        self.cells[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    /// Center coordinate of cell `i` along `axis`.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + (i as f64 + 0.5) * self.spacing[axis]
    }

    /// Upper end of the box along `axis`.
    pub fn upper(&self, axis: usize) -> f64 {
        self.origin[axis] + self.cells[axis] as f64 * self.spacing[axis]
    }

    /// Per-axis cell index of a flat index.
    pub fn unflatten(&self, flat: usize) -> [usize; MAX_DIM] {
        if self.dim == 1 {
            [flat, 0]
        } else {
            let n = self.cells[1];
            [flat / n, flat % n]
        }
    }

    pub fn flatten(&self, idx: [usize; MAX_DIM]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.cells[1] + idx[1]
        }
    }

    /// Cell-center coordinates of a flat index.
    pub fn coords(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.unflatten(flat);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = self.center(axis, idx[axis]);
        }
        x
    }

    /// Index of the cell centered at `x = 0` along `axis`.
    pub fn zero_index(&self, axis: usize) -> usize {
        (-self.origin[axis] / self.spacing[axis] - 0.5).round() as usize
    }

    /// Same cells with every axis stretched by `factors[axis]`.
    pub fn scaled(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.dim {
            return Err(Error::DimensionMismatch(factors.len(), self.dim));
        }
        let mut g = *self;
        for axis in 0..self.dim {
            let s = factors[axis];
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidGrid(format!("scale factor {s} must be positive")));
            }
            g.spacing[axis] *= s;
            g.origin[axis] *= s;
        }
        Ok(g)
    }

    /// Grid of the transversal variables `x'` (two-dimensional grids only).
    pub fn transversal(&self) -> Option<Self> {
        (self.dim == 2).then(|| Grid {
            dim: 1,
            cells: [self.cells[0], 1],
            spacing: [self.spacing[0], 1.0],
            origin: [self.origin[0], 0.0],
        })
    }

    /// Whether the cell touches the boundary of the box.
    pub fn is_boundary_cell(&self, flat: usize) -> bool {
        let idx = self.unflatten(flat);
        (0..self.dim).any(|a| idx[a] == 0 || idx[a] + 1 == self.cells[a])
    }
}

/// Cell-averaged scalar field on a [`Grid`]. All entries are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Field { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field { grid, values: vec![c; grid.len()] }
    }

    /// Samples `g` at every cell center.
    pub fn from_fn(grid: Grid, g: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.coords(i);
                g(&x[..grid.dim()])
            })
            .collect();
        Field::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, g: impl Fn(f64) -> f64) -> Result<Self> {
        Field::new(self.grid, self.values.iter().map(|&v| g(v)).collect())
    }

    /// `a * self + b * other` on identical grids.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Self> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&u, &v)| a * u + b * v).collect();
        Field::new(self.grid, values)
    }

    pub fn sub(&self, other: &Field) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }

    pub fn add(&self, other: &Field) -> Result<Self> {
        self.combine(1.0, other, 1.0)
    }

    pub fn scale(&self, a: f64) -> Result<Self> {
        self.map(|v| a * v)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidGrid("fields live on different grids".into()));
        }
        Ok(())
    }
}

/// Discrete integral: sum of values times the cell volume.
pub fn integrate(f: &Field) -> f64 {
    pairwise_sum(f.values()) * f.grid().cell_volume()
}

/// Volume-weighted discrete `L^p` norm; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(f: &Field, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(p));
    }
    let vol = f.grid().cell_volume();
    let v = f.values();
    Ok(if p.is_infinite() {
        v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    } else if p == 1.0 {
        pairwise_sum_map(v, f64::abs) * vol
    } else if p == 2.0 {
        (pairwise_sum_map(v, |x| x * x) * vol).sqrt()
    } else {
        (pairwise_sum_map(v, |x| x.abs().powf(p)) * vol).powf(1.0 / p)
    })
}

/// Mass of `|f|` in the cells whose center lies strictly outside the ball of
/// radius `r`. For `r = 0` every cell counts, so the result is `‖f‖₁`.
pub fn tail_mass(f: &Field, r: f64) -> f64 {
    let g = f.grid();
    let r2 = if r > 0.0 { r * r } else { -1.0 };
    let outside: Vec<f64> = (0..g.len())
        .filter_map(|i| {
            let x = g.coords(i);
            let d2: f64 = x[..g.dim()].iter().map(|c| c * c).sum();
            (d2 > r2).then(|| f.values()[i].abs())
        })
        .collect();
    pairwise_sum(&outside) * g.cell_volume()
}

/// Primitive along `x_N`: entry `i` of each line is `dx_N * sum_{j <= i} u_j`,
/// i.e. the integral up to the upper face of cell `i`.
pub fn primitive_xn(f: &Field) -> Field {
    let g = *f.grid();
    let h = g.spacing(g.xn_axis());
    let n = g.line_len();
    let mut out = vec![0.0; g.len()];
    for (src, dst) in f.values().chunks(n).zip(out.chunks_mut(n)) {
        let mut acc = 0.0;
        for (u, v) in src.iter().zip(dst.iter_mut()) {
            acc += u;
            *v = acc * h;
        }
    }
    Field { grid: g, values: out }
}

/// Line integrals along `x_N`.
#[derive(Clone, Debug, PartialEq)]
pub enum Marginal {
    /// One-dimensional fields integrate to a number.
    Mass(f64),
    /// Two-dimensional fields integrate to a field on the `x'` grid.
    Profile(Field),
}

impl Marginal {
    pub fn total(&self) -> f64 {
        match self {
            Marginal::Mass(m) => *m,
            Marginal::Profile(f) => integrate(f),
        }
    }
}

/// `v(x') = ∫ u(x', x_N) dx_N`, computed with the same accumulation order as
/// [`primitive_xn`] so that it equals the last primitive slice bit for bit.
pub fn marginal_xprime(f: &Field) -> Marginal {
    let g = *f.grid();
    let h = g.spacing(g.xn_axis());
    let n = g.line_len();
    let line_totals: Vec<f64> = f
        .values()
        .chunks(n)
        .map(|line| {
            let mut acc = 0.0;
            for u in line {
                acc += u;
            }
            acc * h
        })
        .collect();
    match g.transversal() {
        None => Marginal::Mass(line_totals[0]),
        Some(tg) => Marginal::Profile(Field { grid: tg, values: line_totals }),
    }
}

/// Per-axis stencil for linear interpolation at coordinate `x`.
/// Returns `None` when `x` lies outside the box.
fn interp_axis(g: &Grid, axis: usize, x: f64) -> Option<(usize, usize, f64)> {
    let n = g.n(axis);
    let h = g.spacing(axis);
    let o = g.origin(axis);
    if x < o || x > o + n as f64 * h {
        return None;
    }
    let mut s = (x - o) / h - 0.5;
    if (s - s.round()).abs() < CENTER_SNAP {
        s = s.round();
    }
    if s <= 0.0 {
        return Some((0, 0, 0.0));
    }
    if s >= (n - 1) as f64 {
        return Some((n - 1, n - 1, 0.0));
    }
    let i0 = s.floor() as usize;
    let w = s - i0 as f64;
    if w == 0.0 {
        Some((i0, i0, 0.0))
    } else {
        Some((i0, i0 + 1, w))
    }
}

/// Multilinear interpolation of `f` at the point `x`, zero outside the box.
pub fn interpolate_at(f: &Field, x: &[f64]) -> f64 {
    let g = f.grid();
    match g.dim() {
        1 => match interp_axis(g, 0, x[0]) {
            None => 0.0,
            Some((i0, i1, w)) => {
                let v = f.values();
                if w == 0.0 {
                    v[i0]
                } else {
                    (1.0 - w) * v[i0] + w * v[i1]
                }
            }
        },
        _ => {
            let (Some((a0, a1, wa)), Some((b0, b1, wb))) =
                (interp_axis(g, 0, x[0]), interp_axis(g, 1, x[1]))
            else {
                return 0.0;
            };
            let v = |i: usize, j: usize| f.values()[g.flatten([i, j])];
            let lo = if wb == 0.0 { v(a0, b0) } else { (1.0 - wb) * v(a0, b0) + wb * v(a0, b1) };
            if wa == 0.0 {
                lo
            } else {
                let hi =
                    if wb == 0.0 { v(a1, b0) } else { (1.0 - wb) * v(a1, b0) + wb * v(a1, b1) };
                (1.0 - wa) * lo + wa * hi
            }
        }
    }
}

/// Samples `f` at the cell centers of `target` by multilinear interpolation.
/// Points outside the source box get the value 0.
pub fn resample(f: &Field, target: &Grid) -> Result<Field> {
    if f.grid().dim() != target.dim() {
        return Err(Error::DimensionMismatch(f.grid().dim(), target.dim()));
    }
    if f.grid() == target {
        return Ok(f.clone());
    }
    let d = target.dim();
    let values = (0..target.len())
        .map(|i| {
            let x = target.coords(i);
            interpolate_at(f, &x[..d])
        })
        .collect();
    Field::new(*target, values)
}
