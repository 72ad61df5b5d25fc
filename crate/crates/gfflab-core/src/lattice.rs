//! Boxes in `Z^d`, nearest-neighbour structure and boundary sets.
//!
//! A [`LatticeBox`] is an axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]`
//! with sites numbered in row-major order (last axis fastest). A [`Domain`]
//! is an arbitrary finite subset of `Z^d` with its induced adjacency, used
//! for the small domains on which Gaussian quantities are computed exactly.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// A lattice point.
pub type Site = Vec<i64>;

/// Largest number of sites a box may hold.
pub const MAX_SITES: u128 = 1 << 31;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    lo: Vec<i64>,
    hi: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl LatticeBox {
    /// The cube `Λ_R = {x : |x|_∞ ≤ R}`.
    pub fn new(dim: usize, radius: i64) -> Result<Self> {
        Self::centered(&vec![0; dim], radius)
    }

    /// The cube of radius `radius` around `center`.
    pub fn centered(center: &[i64], radius: i64) -> Result<Self> {
        if radius < 0 {
            return Err(Error::arg(format!("negative radius {radius}")));
        }
        let lo = center.iter().map(|c| c - radius).collect();
        let hi = center.iter().map(|c| c + radius).collect();
        Self::from_bounds(lo, hi)
    }

    /// The box with inclusive corner coordinates `lo` and `hi`.
    pub fn from_bounds(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || dim != hi.len() {
            return Err(Error::InvalidDimension(dim));
        }
        let mut total: u128 = 1;
        for (a, b) in lo.iter().zip(&hi) {
            if b < a {
                return Err(Error::arg(format!("empty box side [{a}, {b}]")));
            }
            total = total.saturating_mul((b - a + 1) as u128);
        }
        if total > MAX_SITES {
            return Err(Error::Capacity { sites: total, limit: MAX_SITES });
        }
        let mut strides = vec![1usize; dim];
        for k in (0..dim.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * (hi[k + 1] - lo[k + 1] + 1) as usize;
        }
        Ok(Self { lo, hi, strides, len: total as usize })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    /// Number of sites along `axis`.
    pub fn side(&self, axis: usize) -> usize {
        (self.hi[axis] - self.lo[axis] + 1) as usize
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| a <= v && v <= b)
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(x.iter().zip(&self.lo).zip(&self.strides).map(|((v, a), s)| (v - a) as usize * s).sum())
    }

    pub fn coords(&self, idx: usize) -> Site {
        let mut out = vec![0; self.dim()];
        self.coords_into(idx, &mut out);
        out
    }

    pub fn coords_into(&self, mut idx: usize, out: &mut [i64]) {
        for k in 0..self.dim() {
            out[k] = self.lo[k] + (idx / self.strides[k]) as i64;
            idx %= self.strides[k];
        }
    }

    /// All sites in index order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len).map(|i| self.coords(i))
    }

    /// Indices of the in-box nearest neighbours of site `idx`, axis by axis, `-` before `+`.
    pub fn neighbor_indices(&self, idx: usize) -> Vec<usize> {
        let x = self.coords(idx);
        let mut out = Vec::with_capacity(2 * self.dim());
        for k in 0..self.dim() {
            if x[k] > self.lo[k] {
                out.push(idx - self.strides[k]);
            }
            if x[k] < self.hi[k] {
                out.push(idx + self.strides[k]);
            }
        }
        out
    }

    /// True when some `Z^d` neighbour of the site lies outside the box.
    pub fn is_boundary(&self, idx: usize) -> bool {
        let x = self.coords(idx);
        x.iter().zip(self.lo.iter().zip(&self.hi)).any(|(v, (a, b))| v == a || v == b)
    }

    /// The inner vertex boundary `∂B`, in index order.
    pub fn inner_boundary(&self) -> Vec<usize> {
        (0..self.len).filter(|&i| self.is_boundary(i)).collect()
    }

    /// Union `F^i` of the `i`-dimensional faces: sites with at least `d - i`
    /// coordinates at an extreme value. `F^{d-1}` is the whole inner boundary.
    pub fn boundary_faces(&self, i: usize) -> Result<Vec<usize>> {
        let d = self.dim();
        if i >= d {
            return Err(Error::arg(format!("face dimension {i} must be below {d}")));
        }
        let mut x = vec![0; d];
        Ok((0..self.len)
            .filter(|&idx| {
                self.coords_into(idx, &mut x);
                let extreme = (0..d).filter(|&k| x[k] == self.lo[k] || x[k] == self.hi[k]).count();
                extreme >= d - i
            })
            .collect())
    }

    /// `ℓ^∞` distance from the site to the set of boundary sites.
    pub fn dist_to_boundary(&self, idx: usize) -> i64 {
        let x = self.coords(idx);
        (0..self.dim()).map(|k| (x[k] - self.lo[k]).min(self.hi[k] - x[k])).min().unwrap_or(0)
    }

    pub fn domain(&self) -> Domain {
        let mut offsets = Vec::with_capacity(self.len + 1);
        let mut adj = Vec::with_capacity(self.len * 2 * self.dim());
        let mut coords = Vec::with_capacity(self.len * self.dim());
        let mut boundary = Vec::with_capacity(self.len);
        offsets.push(0u32);
        for i in 0..self.len {
            adj.extend(self.neighbor_indices(i).into_iter().map(|j| j as u32));
            offsets.push(adj.len() as u32);
            coords.extend(self.coords(i));
            boundary.push(self.is_boundary(i));
        }
        Domain { dim: self.dim(), offsets, adj, coords, boundary }
    }
}

/// A finite subset `D ⊂ Z^d` with nearest-neighbour adjacency and its inner boundary
/// `∂D = {x ∈ D : x ~ y for some y ∉ D}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    dim: usize,
    offsets: Vec<u32>,
    adj: Vec<u32>,
    coords: Vec<i64>,
    boundary: Vec<bool>,
}

impl Domain {
    /// Domain spanned by an explicit list of distinct sites, in the given order.
    pub fn from_sites(sites: &[Site]) -> Result<Self> {
        let dim = sites.first().map_or(0, |s| s.len());
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let mut lookup = HashMap::with_capacity(sites.len());
        for (i, s) in sites.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::InvalidDimension(s.len()));
            }
            if lookup.insert(s.clone(), i).is_some() {
                return Err(Error::arg(format!("duplicate site {s:?}")));
            }
        }
        let mut offsets = vec![0u32];
        let mut adj = Vec::new();
        let mut boundary = Vec::with_capacity(sites.len());
        for s in sites {
            let mut y = s.clone();
            let mut outside = false;
            for k in 0..dim {
                for step in [-1, 1] {
                    y[k] += step;
                    match lookup.get(&y) {
                        Some(&j) => adj.push(j as u32),
                        None => outside = true,
                    }
                    y[k] -= step;
                }
            }
            offsets.push(adj.len() as u32);
            boundary.push(outside);
        }
        Ok(Domain { dim, offsets, adj, coords: sites.concat(), boundary })
    }

    /// The periodic box `(Z / side Z)^d` in row-major order (axis 0 slowest),
    /// matching the layout of torus samples. It has no boundary.
    pub fn torus(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if side < 3 {
            return Err(Error::arg(format!("torus side {side} must be at least 3")));
        }
        let total = side
            .checked_pow(dim as u32)
            .filter(|&t| t as u128 <= MAX_SITES)
            .ok_or(Error::Capacity { sites: (side as u128).pow(dim as u32), limit: MAX_SITES })?;
        let b = LatticeBox::from_bounds(vec![0; dim], vec![side as i64 - 1; dim])?;
        let mut offsets = Vec::with_capacity(total + 1);
        let mut adj = Vec::with_capacity(total * 2 * dim);
        let mut coords = Vec::with_capacity(total * dim);
        offsets.push(0u32);
        let mut x = vec![0i64; dim];
        let l = side as i64;
        for i in 0..total {
            b.coords_into(i, &mut x);
            let mut stride = total;
            for &v in x.iter() {
                stride /= side;
                let down = if v == 0 { i + (side - 1) * stride } else { i - stride };
                let up = if v == l - 1 { i - (side - 1) * stride } else { i + stride };
                adj.push(down as u32);
                adj.push(up as u32);
            }
            offsets.push(adj.len() as u32);
            coords.extend_from_slice(&x);
        }
        Ok(Domain { dim, offsets, adj, coords, boundary: vec![false; total] })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundary.is_empty()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adj[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    #[inline]
    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    #[inline]
    pub fn coords(&self, i: usize) -> &[i64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        (0..self.len()).find(|&i| self.coords(i) == x)
    }
}

/// `ℓ^∞` distance between two sites.
pub fn dist_inf(x: &[i64], y: &[i64]) -> i64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).max().unwrap_or(0)
}

/// `ℓ^∞` diameter of a finite tuple of sites.
pub fn diam_inf(points: &[Site]) -> i64 {
    let mut best = 0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(dist_inf(a, b));
        }
    }
    best
}
