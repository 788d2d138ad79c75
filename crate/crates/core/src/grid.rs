//! Uniform node grids over axis-aligned boxes and boolean sets on them.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Axis-aligned box `[lo, hi]` (also used for input sets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Hyper-rectangular input set.
pub type ControlBox = AxisBox;

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Parameter("box bounds have different lengths".into()));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::Parameter(format!(
                "invalid box bounds {lo:?} .. {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(radius: &[f64]) -> Self {
        Self {
            lo: radius.iter().map(|r| -r).collect(),
            hi: radius.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (b - a))
            .collect()
    }

    /// Infinity-norm radius: the largest `|coordinate|` over the box.
    pub fn inf_radius(&self) -> f64 {
        self.lo
            .iter()
            .chain(&self.hi)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Per-axis grid of `m` values including both endpoints, combined as a product.
    /// Degenerate axes contribute a single value.
    pub fn samples(&self, m: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| {
                if a == b || m < 2 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..m)
                        .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for ax in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    ax.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

/// Uniform node grid; node `i` on axis `a` sits at `lo + (hi - lo) * i / (n - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct GridBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl GridBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() || lower.len() != nodes.len() {
            return Err(Error::Parameter(
                "grid bounds and node counts must have equal nonzero length".into(),
            ));
        }
        for a in 0..lower.len() {
            if !(lower[a] < upper[a]) || !lower[a].is_finite() || !upper[a].is_finite() {
                return Err(Error::Parameter(format!(
                    "grid axis {a}: need lower < upper"
                )));
            }
            if nodes[a] < 2 {
                return Err(Error::Parameter(format!(
                    "grid axis {a}: need at least 2 nodes"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            nodes,
        })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// Total node count as a wide integer (safe against overflow).
    pub fn node_count_wide(&self) -> u128 {
        self.nodes.iter().map(|&n| n as u128).product()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.nodes[axis] - 1) as f64
    }

    pub fn cell_widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.h(a)).collect()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let n = self.nodes[axis] - 1;
        if i == n {
            self.upper[axis]
        } else {
            self.lower[axis] + (self.upper[axis] - self.lower[axis]) * i as f64 / n as f64
        }
    }

    /// Row-major strides with the last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1; d];
        for a in (0..d.saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.nodes[a + 1];
        }
        s
    }

    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.dim()).rev() {
            out[a] = flat % self.nodes[a];
            flat /= self.nodes[a];
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.nodes)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn point(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.coord(a, i))
            .collect()
    }

    pub fn point_of(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim()];
        self.unravel(flat, &mut idx);
        self.point(&idx)
    }

    /// All node coordinates, node-major.
    pub fn all_points(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.len() * d);
        let mut idx = vec![0; d];
        for f in 0..self.len() {
            self.unravel(f, &mut idx);
            for (a, &i) in idx.iter().enumerate() {
                out.push(self.coord(a, i));
            }
        }
        out
    }

    /// Nearest node index on each axis (clamped to the grid).
    pub fn nearest(&self, p: &[f64]) -> Vec<usize> {
        (0..self.dim())
            .map(|a| {
                let f = (p[a] - self.lower[a]) / self.h(a);
                f.round().clamp(0.0, (self.nodes[a] - 1) as f64) as usize
            })
            .collect()
    }

    pub fn sub_grid(&self, axes: &[usize]) -> Result<GridBox> {
        if axes.is_empty() || axes.iter().any(|&a| a >= self.dim()) {
            return Err(Error::Parameter(format!(
                "invalid projection axes {axes:?}"
            )));
        }
        GridBox::new(
            axes.iter().map(|&a| self.lower[a]).collect(),
            axes.iter().map(|&a| self.upper[a]).collect(),
            axes.iter().map(|&a| self.nodes[a]).collect(),
        )
    }

    pub fn product(&self, other: &GridBox) -> GridBox {
        GridBox {
            lower: self.lower.iter().chain(&other.lower).copied().collect(),
            upper: self.upper.iter().chain(&other.upper).copied().collect(),
            nodes: self.nodes.iter().chain(&other.nodes).copied().collect(),
        }
    }
}

/// Boolean node occupancy over a [`GridBox`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridSet {
    pub grid: GridBox,
    pub occ: Vec<bool>,
}

/// Default cap on materialized grid nodes.
pub const DEFAULT_NODE_CAP: u128 = 10_000_000;

pub fn check_cap(grid: &GridBox, cap: u128) -> Result<()> {
    let needed = grid.node_count_wide();
    if needed > cap {
        return Err(Error::ResourceCap { needed, cap });
    }
    Ok(())
}

impl GridSet {
    pub fn empty(grid: GridBox) -> Self {
        let n = grid.len();
        Self {
            grid,
            occ: vec![false; n],
        }
    }

    pub fn full(grid: GridBox) -> Self {
        let n = grid.len();
        Self {
            grid,
            occ: vec![true; n],
        }
    }

    pub fn from_predicate<F: Fn(&[f64]) -> bool>(grid: GridBox, f: F) -> Self {
        let mut idx = vec![0; grid.dim()];
        let occ = (0..grid.len())
            .map(|flat| {
                grid.unravel(flat, &mut idx);
                f(&grid.point(&idx))
            })
            .collect();
        Self { grid, occ }
    }

    pub fn count(&self) -> usize {
        self.occ.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.occ.iter().any(|&b| b)
    }

    pub fn contains_index(&self, idx: &[usize]) -> bool {
        self.occ[self.grid.ravel(idx)]
    }

    fn same_grid(&self, other: &GridSet) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("sets live on different grids".into()));
        }
        Ok(())
    }

    pub fn is_subset_of(&self, other: &GridSet) -> Result<bool> {
        self.same_grid(other)?;
        Ok(self.occ.iter().zip(&other.occ).all(|(&a, &b)| !a || b))
    }

    pub fn intersection(&self, other: &GridSet) -> Result<GridSet> {
        self.same_grid(other)?;
        Ok(GridSet {
            grid: self.grid.clone(),
            occ: self
                .occ
                .iter()
                .zip(&other.occ)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }

    pub fn union(&self, other: &GridSet) -> Result<GridSet> {
        self.same_grid(other)?;
        Ok(GridSet {
            grid: self.grid.clone(),
            occ: self
                .occ
                .iter()
                .zip(&other.occ)
                .map(|(&a, &b)| a || b)
                .collect(),
        })
    }

    /// Occupied node coordinates, node-major.
    pub fn occupied_points(&self) -> Vec<Vec<f64>> {
        let mut idx = vec![0; self.grid.dim()];
        self.occ
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(f, _)| {
                self.grid.unravel(f, &mut idx);
                self.grid.point(&idx)
            })
            .collect()
    }

    /// Existential projection onto the given axes (in the given order).
    pub fn project(&self, axes: &[usize]) -> Result<GridSet> {
        let sub = self.grid.sub_grid(axes)?;
        let mut out = GridSet::empty(sub);
        let mut idx = vec![0; self.grid.dim()];
        let mut sidx = vec![0; axes.len()];
        for (f, &b) in self.occ.iter().enumerate() {
            if b {
                self.grid.unravel(f, &mut idx);
                for (j, &a) in axes.iter().enumerate() {
                    sidx[j] = idx[a];
                }
                let s = out.grid.ravel(&sidx);
                out.occ[s] = true;
            }
        }
        Ok(out)
    }

    /// Product set on the product grid; refuses grids above `cap` nodes.
    pub fn cross_product(&self, other: &GridSet, cap: u128) -> Result<GridSet> {
        let grid = self.grid.product(&other.grid);
        check_cap(&grid, cap)?;
        let m = other.occ.len();
        let mut occ = vec![false; grid.len()];
        for (i, &a) in self.occ.iter().enumerate() {
            if a {
                for (j, &b) in other.occ.iter().enumerate() {
                    occ[i * m + j] = b;
                }
            }
        }
        Ok(GridSet { grid, occ })
    }

    /// Tightest box around occupied nodes, inflated by half a cell per axis.
    pub fn interval_hull(&self) -> Result<AxisBox> {
        let d = self.grid.dim();
        let mut lo = vec![usize::MAX; d];
        let mut hi = vec![0; d];
        let mut idx = vec![0; d];
        let mut any = false;
        for (f, &b) in self.occ.iter().enumerate() {
            if b {
                any = true;
                self.grid.unravel(f, &mut idx);
                for a in 0..d {
                    lo[a] = lo[a].min(idx[a]);
                    hi[a] = hi[a].max(idx[a]);
                }
            }
        }
        if !any {
            return Err(Error::EmptySet("interval hull of an empty set".into()));
        }
        Ok(AxisBox {
            lo: (0..d)
                .map(|a| self.grid.coord(a, lo[a]) - 0.5 * self.grid.h(a))
                .collect(),
            hi: (0..d)
                .map(|a| self.grid.coord(a, hi[a]) + 0.5 * self.grid.h(a))
                .collect(),
        })
    }

    /// Largest infinity-norm over occupied nodes plus half the largest cell width.
    pub fn sup_norm(&self) -> Result<f64> {
        let mut best: Option<f64> = None;
        let mut idx = vec![0; self.grid.dim()];
        for (f, &b) in self.occ.iter().enumerate() {
            if b {
                self.grid.unravel(f, &mut idx);
                let v = self
                    .grid
                    .point(&idx)
                    .iter()
                    .fold(0.0_f64, |m, x| m.max(x.abs()));
                best = Some(best.map_or(v, |m: f64| m.max(v)));
            }
        }
        let half = self
            .grid
            .cell_widths()
            .iter()
            .fold(0.0_f64, |m, h| m.max(0.5 * h));
        best.map(|b| b + half)
            .ok_or_else(|| Error::EmptySet("sup norm of an empty set".into()))
    }

    /// Separable min/max filter with per-axis half-widths in cells; nodes outside the grid count as `outside`.
    fn filter(&self, cells: &[usize], keep_if_all: bool, outside: bool) -> GridSet {
        let mut cur = self.occ.clone();
        let strides = self.grid.strides();
        let d = self.grid.dim();
        let mut idx = vec![0; d];
        for a in 0..d {
            let c = cells[a];
            if c == 0 {
                continue;
            }
            let n = self.grid.nodes[a];
            let mut next = cur.clone();
            for f in 0..cur.len() {
                self.grid.unravel(f, &mut idx);
                let i = idx[a];
                let base = f - i * strides[a];
                let mut acc = keep_if_all;
                for off in -(c as isize)..=(c as isize) {
                    let j = i as isize + off;
                    let v = if j < 0 || j >= n as isize {
                        outside
                    } else {
                        cur[base + j as usize * strides[a]]
                    };
                    if keep_if_all {
                        acc &= v;
                        if !acc {
                            break;
                        }
                    } else {
                        acc |= v;
                        if acc {
                            break;
                        }
                    }
                }
                next[f] = acc;
            }
            cur = next;
        }
        GridSet {
            grid: self.grid.clone(),
            occ: cur,
        }
    }

    fn radius_cells(&self, radius: f64) -> Vec<usize> {
        self.grid
            .cell_widths()
            .iter()
            .map(|h| (radius / h - 1e-9).ceil().max(0.0) as usize)
            .collect()
    }

    /// Erosion by an infinity-norm ball, rounded up to whole cells per axis.
    /// The region outside the grid counts as unoccupied.
    pub fn erode(&self, radius: f64) -> Result<GridSet> {
        if !(radius >= 0.0) {
            return Err(Error::Parameter(format!(
                "erosion radius must be nonnegative, got {radius}"
            )));
        }
        Ok(self.filter(&self.radius_cells(radius), true, false))
    }

    /// Erosion by whole cells per axis.
    pub fn erode_cells(&self, cells: &[usize]) -> GridSet {
        self.filter(cells, true, false)
    }

    /// Dilation by whole cells per axis (Chebyshev neighbourhood).
    pub fn dilate_cells(&self, cells: &[usize]) -> GridSet {
        self.filter(cells, false, false)
    }

    /// Fraction of `outer`'s occupied node count that `self` occupies (0 when `outer` is empty).
    pub fn volume_fraction(&self, outer: &GridSet) -> Result<f64> {
        self.same_grid(outer)?;
        let o = outer.count();
        Ok(if o == 0 {
            0.0
        } else {
            self.count() as f64 / o as f64
        })
    }

    /// Nodes of `self` on its own boundary (occupied with an unoccupied or missing face neighbour).
    pub fn boundary_count(&self) -> usize {
        let inner = self.erode_cells(&vec![1; self.grid.dim()]);
        self.count() - inner.count()
    }

    /// 2D slice through the given axes with the remaining axes fixed at node indices.
    pub fn slice2(&self, ax: usize, ay: usize, fixed: &[usize]) -> Result<GridSet> {
        let d = self.grid.dim();
        if ax >= d || ay >= d || ax == ay || fixed.len() != d {
            return Err(Error::Parameter("bad slice axes or indices".into()));
        }
        if fixed.iter().zip(&self.grid.nodes).any(|(&i, &n)| i >= n) {
            return Err(Error::Parameter("slice index out of range".into()));
        }
        let sub = self.grid.sub_grid(&[ax, ay])?;
        let mut out = GridSet::empty(sub);
        let mut idx = fixed.to_vec();
        for i in 0..self.grid.nodes[ax] {
            for j in 0..self.grid.nodes[ay] {
                idx[ax] = i;
                idx[ay] = j;
                out.occ[i * self.grid.nodes[ay] + j] = self.contains_index(&idx);
            }
        }
        Ok(out)
    }

    /// Writes the dump format: one JSON header line, then packed occupancy bits
    /// (row-major, last axis fastest, least significant bit first).
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DumpHeader {
            dim: self.grid.dim(),
            lower: self.grid.lower.clone(),
            upper: self.grid.upper.clone(),
            nodes: self.grid.nodes.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut bytes = vec![0u8; self.occ.len().div_ceil(8)];
        for (i, &b) in self.occ.iter().enumerate() {
            if b {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_dump<R: BufRead>(mut r: R) -> Result<GridSet> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: DumpHeader = serde_json::from_str(line.trim_end())?;
        let grid = GridBox::new(header.lower, header.upper, header.nodes)?;
        if grid.dim() != header.dim {
            return Err(Error::Config(
                "dump header dim does not match node list".into(),
            ));
        }
        let n = grid.len();
        let mut bytes = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bytes)?;
        let occ = (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(GridSet { grid, occ })
    }

    /// CSV of occupied node coordinates with header `x0,x1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.grid.dim();
        let head: Vec<String> = (0..d).map(|a| format!("x{a}")).collect();
        writeln!(w, "{}", head.join(","))?;
        for p in self.occupied_points() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:.9}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DumpHeader {
    dim: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Vec<usize>,
}
