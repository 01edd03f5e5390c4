//! Uniform lattice over an axis-aligned box, horizon stencil, boundary taper,
//! nodal vector fields, projections, and discrete norms.
//!
//! Nodes sit at lattice points `x_i = h * i` strictly inside the open box; the
//! cell of a node is `x_i + [-h/2, h/2)^d`. Fields extend by zero outside the
//! box. The horizon neighborhood is one shared offset stencil (the lattice is
//! uniform), stored as canonical half-offsets so that opposite bonds can be
//! paired exactly in quadrature loops.

use crate::error::{Error, Result};
use rand::Rng;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// One lattice offset within the horizon, together with its precomputed
/// geometry. Only the canonical representative of each `{+delta, -delta}`
/// pair is stored; loops visit both signs.
#[derive(Debug, Clone)]
pub struct Bond {
    pub delta: [i64; 3],
    /// Bond length s = h |delta|.
    pub length: f64,
    pub sqrt_length: f64,
    /// |delta| h / eps in (0, 1].
    pub xi: f64,
    /// Unit direction along +delta.
    pub dir: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    extents: [f64; 3],
    h: f64,
    eps: f64,
    counts: [usize; 3],
    strides: [usize; 3],
    node_count: usize,
    stencil: Vec<Bond>,
    /// |U_i ∩ D| per node, used as the weight of the discrete L2 norm.
    measures: Vec<f64>,
}

/// Builds the lattice, clipped cell measures, and the horizon stencil.
/// Requires `h < eps < min extent`; the neighbor structure costs
/// O(nodes + (eps/h)^d).
pub fn build_grid(dim: usize, extents: &[f64], h: f64, eps: f64) -> Result<Grid> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Config(format!("dimension must be 1, 2, or 3, got {dim}")));
    }
    if extents.len() != dim || extents.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::Config("box extents must be positive, one per axis".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("spacing must be positive, got {h}")));
    }
    if h >= eps {
        return Err(Error::Config(format!("spacing h = {h} must be smaller than the horizon eps = {eps}")));
    }
    let min_extent = extents.iter().cloned().fold(f64::INFINITY, f64::min);
    if eps >= min_extent {
        return Err(Error::Config(format!(
            "horizon eps = {eps} must be smaller than the smallest box extent {min_extent}"
        )));
    }

    let mut ext = [1.0f64; 3];
    let mut counts = [1usize; 3];
    for a in 0..dim {
        ext[a] = extents[a];
        let n = (extents[a] / h - 1e-9).floor() as usize;
        if n == 0 {
            return Err(Error::Config("no interior nodes: spacing too coarse for the box".into()));
        }
        counts[a] = n;
    }
    let strides = [1, counts[0], counts[0] * counts[1]];
    let node_count = counts[0] * counts[1] * counts[2];

    // Canonical half-stencil: first nonzero component positive, cutoff on
    // cell centers |delta| h <= eps.
    let m = (eps / h * (1.0 + 1e-12)).floor() as i64;
    let cutoff = eps * (1.0 + 1e-12);
    let mut stencil = Vec::new();
    let range = |a: usize| if a < dim { -m..=m } else { 0..=0 };
    for d3 in range(2) {
        for d2 in range(1) {
            for d1 in range(0) {
                let delta = [d1, d2, d3];
                let leading = delta.iter().rev().find(|&&c| c != 0);
                match leading {
                    None => continue,
                    Some(&c) if c < 0 => continue,
                    _ => {}
                }
                let norm2 = (d1 * d1 + d2 * d2 + d3 * d3) as f64;
                let length = h * norm2.sqrt();
                if length > cutoff {
                    continue;
                }
                let inv = 1.0 / norm2.sqrt();
                stencil.push(Bond {
                    delta,
                    length,
                    sqrt_length: length.sqrt(),
                    xi: (length / eps).min(1.0),
                    dir: [d1 as f64 * inv, d2 as f64 * inv, d3 as f64 * inv],
                });
            }
        }
    }

    let mut axis_measure: [Vec<f64>; 3] = [vec![1.0], vec![1.0], vec![1.0]];
    for a in 0..dim {
        axis_measure[a] = (1..=counts[a])
            .map(|i| {
                let x = i as f64 * h;
                (x + 0.5 * h).min(ext[a]) - (x - 0.5 * h).max(0.0)
            })
            .collect();
    }
    let mut measures = Vec::with_capacity(node_count);
    for i3 in 0..counts[2] {
        for i2 in 0..counts[1] {
            for i1 in 0..counts[0] {
                measures.push(axis_measure[0][i1] * axis_measure[1][i2] * axis_measure[2][i3]);
            }
        }
    }

    Ok(Grid { dim, extents: ext, h, eps, counts, strides, node_count, stencil, measures })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn extents(&self) -> &[f64; 3] {
        &self.extents
    }
    pub fn counts(&self) -> &[usize; 3] {
        &self.counts
    }
    pub fn node_count(&self) -> usize {
        self.node_count
    }
    pub fn stencil(&self) -> &[Bond] {
        &self.stencil
    }
    pub fn measure(&self, node: usize) -> f64 {
        self.measures[node]
    }

    pub fn omega_d(&self) -> f64 {
        crate::potential::unit_ball_volume(self.dim)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// |D|, the measure of the box.
    pub fn domain_measure(&self) -> f64 {
        self.extents[..self.dim].iter().product()
    }

    /// 1-based lattice coordinates of a node.
    #[inline]
    pub fn lattice(&self, node: usize) -> [i64; 3] {
        let i3 = node / self.strides[2];
        let rem = node % self.strides[2];
        let i2 = rem / self.strides[1];
        let i1 = rem % self.strides[1];
        [i1 as i64 + 1, i2 as i64 + 1, i3 as i64 + 1]
    }

    /// Node id for 1-based lattice coordinates, or None outside the box.
    #[inline]
    pub fn node_id(&self, lat: [i64; 3]) -> Option<usize> {
        for a in 0..3 {
            if lat[a] < 1 || lat[a] > self.counts[a] as i64 {
                return None;
            }
        }
        Some(
            (lat[0] as usize - 1)
                + (lat[1] as usize - 1) * self.strides[1]
                + (lat[2] as usize - 1) * self.strides[2],
        )
    }

    #[inline]
    pub fn coords(&self, node: usize) -> [f64; 3] {
        let lat = self.lattice(node);
        [lat[0] as f64 * self.h, lat[1] as f64 * self.h, lat[2] as f64 * self.h]
    }

    /// True when the two fields were built on an identical lattice.
    pub fn matches(&self, field: &VectorField) -> bool {
        field.dim == self.dim && field.node_count == self.node_count
    }
}

/// d-component nodal field; evaluation outside the box is the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    dim: usize,
    node_count: usize,
    data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Grid) -> Self {
        Self { dim: grid.dim, node_count: grid.node_count, data: vec![0.0; grid.node_count * grid.dim] }
    }

    /// Samples a point function at the nodes.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut field = Self::zeros(grid);
        for n in 0..grid.node_count {
            field.set(n, f(grid.coords(n)));
        }
        field
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    #[inline]
    pub fn get(&self, node: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        let base = node * self.dim;
        v[..self.dim].copy_from_slice(&self.data[base..base + self.dim]);
        v
    }

    #[inline]
    pub fn set(&mut self, node: usize, value: [f64; 3]) {
        let base = node * self.dim;
        self.data[base..base + self.dim].copy_from_slice(&value[..self.dim]);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// self + c * other, componentwise.
    pub fn add_scaled(&self, c: f64, other: &VectorField) -> VectorField {
        debug_assert_eq!(self.data.len(), other.data.len());
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + c * b).collect();
        Self { dim: self.dim, node_count: self.node_count, data }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        self.add_scaled(-1.0, other)
    }

    pub fn scale(&self, c: f64) -> VectorField {
        let data = self.data.iter().map(|a| c * a).collect();
        Self { dim: self.dim, node_count: self.node_count, data }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-node boundary taper in [0, 1]: zero on and outside the boundary, one
/// at distance >= eps from it, a cubic smoothstep of distance in between.
#[derive(Debug, Clone)]
pub struct DomainTaper {
    values: Vec<f64>,
}

/// The cubic smoothstep profile rho(s) = s^2 (3 - 2s) clamped to 1 for s >= 1.
#[inline]
pub fn smoothstep(s: f64) -> f64 {
    if s >= 1.0 {
        1.0
    } else if s <= 0.0 {
        0.0
    } else {
        s * s * (3.0 - 2.0 * s)
    }
}

pub fn domain_taper(grid: &Grid) -> DomainTaper {
    let values = (0..grid.node_count())
        .map(|n| {
            let x = grid.coords(n);
            let mut dist = f64::INFINITY;
            for a in 0..grid.dim() {
                dist = dist.min(x[a]).min(grid.extents()[a] - x[a]);
            }
            smoothstep(dist / grid.eps())
        })
        .collect();
    DomainTaper { values }
}

impl DomainTaper {
    #[inline]
    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Taper with prescribed per-node values. Values must lie in [0, 1].
    #[doc(hidden)]
    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }
}

const GAUSS3_NODES: [f64; 3] = [-0.7745966692414834, 0.0, 0.7745966692414834];
const GAUSS3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Cell means of a point function by tensor-product 3-point Gauss quadrature
/// over `U_i ∩ D` (cells that stick past the boundary are clipped).
pub fn cell_average_projection(grid: &Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> VectorField {
    let dim = grid.dim();
    let h = grid.h();
    let mut field = VectorField::zeros(grid);
    let mut pts: [[f64; 3]; 3] = [[0.0; 3]; 3]; // per-axis Gauss abscissae
    let mut wts: [[f64; 3]; 3] = [[0.0; 3]; 3];
    for n in 0..grid.node_count() {
        let x = grid.coords(n);
        for a in 0..dim {
            let lo = (x[a] - 0.5 * h).max(0.0);
            let hi = (x[a] + 0.5 * h).min(grid.extents()[a]);
            let mid = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            for q in 0..3 {
                pts[a][q] = mid + half * GAUSS3_NODES[q];
                wts[a][q] = 0.5 * GAUSS3_WEIGHTS[q]; // normalized to the cell mean
            }
        }
        let mut acc = [0.0f64; 3];
        let reps = |a: usize| if a < dim { 3 } else { 1 };
        for q3 in 0..reps(2) {
            for q2 in 0..reps(1) {
                for q1 in 0..reps(0) {
                    let mut p = x;
                    let mut w = 1.0;
                    let qs = [q1, q2, q3];
                    for a in 0..dim {
                        p[a] = pts[a][qs[a]];
                        w *= wts[a][qs[a]];
                    }
                    let v = f(p);
                    for c in 0..dim {
                        acc[c] += w * v[c];
                    }
                }
            }
        }
        field.set(n, acc);
    }
    field
}

/// Discrete L2 norm with clipped cell measures:
/// `(sum_i |U_i ∩ D| |u_i|^2)^{1/2}`. On grids where the spacing divides the
/// extents this equals the plain `h^d`-weighted sum; it approaches the
/// continuum norm of the piecewise-constant extension as h -> 0.
pub fn l2_norm(field: &VectorField, grid: &Grid) -> f64 {
    debug_assert!(grid.matches(field));
    let dim = grid.dim();
    let mut acc = 0.0;
    for n in 0..grid.node_count() {
        let base = n * dim;
        let mut s = 0.0;
        for c in 0..dim {
            let v = field.data()[base + c];
            s += v * v;
        }
        acc += grid.measure(n) * s;
    }
    acc.sqrt()
}

/// `l2_norm` of the difference without allocating it.
pub fn l2_dist(a: &VectorField, b: &VectorField, grid: &Grid) -> f64 {
    debug_assert!(grid.matches(a) && grid.matches(b));
    let dim = grid.dim();
    let mut acc = 0.0;
    for n in 0..grid.node_count() {
        let base = n * dim;
        let mut s = 0.0;
        for c in 0..dim {
            let v = a.data()[base + c] - b.data()[base + c];
            s += v * v;
        }
        acc += grid.measure(n) * s;
    }
    acc.sqrt()
}

/// Inner product with the plain `h^d` weights of the scheme sums. The force
/// field is exactly the (negative) gradient of the discrete potential energy
/// under this pairing.
pub fn scheme_inner(a: &VectorField, b: &VectorField, grid: &Grid) -> f64 {
    debug_assert!(grid.matches(a) && grid.matches(b));
    let cell = grid.cell_volume();
    cell * a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>()
}

/// Lower estimate of the Hoelder seminorm `sup |u(x)-u(y)| / |x-y|^gamma`
/// over node pairs: exhaustive when the pair count fits the budget, uniform
/// seeded sampling otherwise.
pub fn holder_seminorm_estimate(
    field: &VectorField,
    gamma: f64,
    grid: &Grid,
    sample_budget: usize,
    rng: &mut impl Rng,
) -> f64 {
    debug_assert!(grid.matches(field));
    let n = grid.node_count();
    let dim = grid.dim();
    let ratio = |i: usize, j: usize| {
        let xi = grid.coords(i);
        let xj = grid.coords(j);
        let ui = field.get(i);
        let uj = field.get(j);
        let mut du = 0.0;
        let mut dx = 0.0;
        for c in 0..dim {
            du += (ui[c] - uj[c]) * (ui[c] - uj[c]);
            dx += (xi[c] - xj[c]) * (xi[c] - xj[c]);
        }
        du.sqrt() / dx.sqrt().powf(gamma)
    };
    let mut best = 0.0f64;
    let pairs = n * (n - 1) / 2;
    if pairs <= sample_budget {
        for i in 0..n {
            for j in (i + 1)..n {
                best = best.max(ratio(i, j));
            }
        }
    } else {
        for _ in 0..sample_budget {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            best = best.max(ratio(i, j));
        }
    }
    best
}

/// Writes a field snapshot as CSV: one row per node, header mandatory,
/// 17 significant digits.
pub fn write_field_csv(path: &Path, field: &VectorField, grid: &Grid) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let dim = grid.dim();
    let mut header = String::from("index");
    for a in 0..dim {
        header.push_str(&format!(",x{}", a + 1));
    }
    for c in 0..dim {
        header.push_str(&format!(",u{}", c + 1));
    }
    writeln!(w, "{header}")?;
    for n in 0..grid.node_count() {
        let x = grid.coords(n);
        let u = field.get(n);
        let mut row = format!("{n}");
        for a in 0..dim {
            row.push_str(&format!(",{:.16e}", x[a]));
        }
        for c in 0..dim {
            row.push_str(&format!(",{:.16e}", u[c]));
        }
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot written by [`write_field_csv`] back onto the given grid.
pub fn read_field_csv(path: &Path, grid: &Grid) -> Result<VectorField> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let dim = grid.dim();
    let mut field = VectorField::zeros(grid);
    let mut rows = 0usize;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if k == 0 {
            continue; // header
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 1 + 2 * dim {
            return Err(Error::Config(format!(
                "snapshot row {k} has {} columns, expected {}",
                cells.len(),
                1 + 2 * dim
            )));
        }
        let node: usize = cells[0]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("snapshot row {k}: bad node index")))?;
        if node >= grid.node_count() {
            return Err(Error::Config(format!("snapshot row {k}: node {node} outside the grid")));
        }
        let mut u = [0.0f64; 3];
        for c in 0..dim {
            u[c] = cells[1 + dim + c]
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("snapshot row {k}: bad component value")))?;
        }
        field.set(node, u);
        rows += 1;
    }
    if rows != grid.node_count() {
        return Err(Error::Config(format!(
            "snapshot holds {rows} nodes, grid expects {}",
            grid.node_count()
        )));
    }
    Ok(field)
}
