use crate::error::{Error, Result};
use crate::geometry::LevelSetDomain;
use crate::math::Vec3;
use rayon::prelude::*;
use std::sync::OnceLock;

/// Node-centered structured mesh over the bounding box of Ω, with one or more
/// layers of exterior nodes on every side.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMesh {
    pub domain: LevelSetDomain,
    pub h: f64,
    pub origin: Vec3,
    pub dims: [usize; 3],
    /// `ξ(node) < 0`
    pub inside: Vec<bool>,
    /// Full indices of the inside nodes, in lexicographic order.
    pub inside_nodes: Vec<usize>,
    /// Full index → position in `inside_nodes` (or `usize::MAX`).
    pub compact: Vec<usize>,
    distances: DistanceCache,
}

/// Lazily filled; two meshes compare equal whatever their cache state.
#[derive(Debug, Clone, Default)]
struct DistanceCache(OnceLock<Vec<f64>>);

impl PartialEq for DistanceCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

pub const NONE: usize = usize::MAX;

impl SpatialMesh {
    /// `resolution` intervals across the largest bounding-box extent.
    pub fn new(domain: LevelSetDomain, resolution: usize) -> Result<Self> {
        if resolution < 4 {
            return Err(Error::InvalidParameter(format!(
                "mesh resolution {resolution} must be at least 4"
            )));
        }
        let bb = domain.bounding_box;
        let ext = bb.max - bb.min;
        let largest = ext[0].max(ext[1]).max(ext[2]);
        let h = largest / resolution as f64;
        let mid = (bb.max + bb.min) * 0.5;
        let mut dims = [0usize; 3];
        let mut origin = Vec3::ZERO;
        for a in 0..3 {
            let m = (0.5 * ext[a] / h - 1e-9).ceil() as usize + 2;
            dims[a] = 2 * m + 1;
            origin.0[a] = mid[a] - m as f64 * h;
        }
        let total = dims[0] * dims[1] * dims[2];
        let mut mesh = SpatialMesh {
            domain,
            h,
            origin,
            dims,
            inside: vec![false; total],
            inside_nodes: Vec::new(),
            compact: vec![NONE; total],
            distances: DistanceCache::default(),
        };
        for idx in 0..total {
            if mesh.domain.contains(mesh.node(idx)) {
                mesh.inside[idx] = true;
                mesh.compact[idx] = mesh.inside_nodes.len();
                mesh.inside_nodes.push(idx);
            }
        }
        if mesh.inside_nodes.is_empty() {
            return Err(Error::InvalidParameter("mesh has no interior nodes".into()));
        }
        Ok(mesh)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.inside.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.inside.is_empty()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        let i = idx / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    #[inline]
    pub fn node(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.ijk(idx);
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.h
    }

    /// Neighbor one step along `axis` in direction `dir = ±1`.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut c = self.ijk(idx);
        let n = c[axis] as i64 + dir;
        if n < 0 || n >= self.dims[axis] as i64 {
            return None;
        }
        c[axis] = n as usize;
        Some(self.idx(c[0], c[1], c[2]))
    }

    /// Offset neighbor `idx + off` if it lies on the mesh.
    #[inline]
    pub fn offset(&self, idx: usize, off: [i64; 3]) -> Option<usize> {
        let c = self.ijk(idx);
        let mut out = [0usize; 3];
        for a in 0..3 {
            let n = c[a] as i64 + off[a];
            if n < 0 || n >= self.dims[a] as i64 {
                return None;
            }
            out[a] = n as usize;
        }
        Some(self.idx(out[0], out[1], out[2]))
    }

    /// Staircase volume `h³ · #inside`.
    pub fn volume(&self) -> f64 {
        self.inside_nodes.len() as f64 * self.h.powi(3)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(3)
    }

    /// Fraction `θ ∈ (0, 1]` of the segment from inside node `p` to the
    /// neighbor `q` at which `ξ` changes sign.
    pub fn crossing_fraction(&self, p: usize, q: usize) -> f64 {
        let a = self.node(p);
        let b = self.node(q);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.domain.xi(a + (b - a) * mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Base cell and local coordinates for trilinear interpolation, clamped to the mesh.
    #[inline]
    pub fn locate(&self, x: Vec3) -> ([usize; 3], [f64; 3]) {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = ((x[a] - self.origin[a]) / self.h).clamp(0.0, (self.dims[a] - 1) as f64);
            let b = (s.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = s - b as f64;
        }
        (base, frac)
    }

    /// Trilinear interpolation of a full-mesh array of any linear type.
    #[inline]
    pub fn trilinear<T>(&self, values: &[T], x: Vec3) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        let (b, f) = self.locate(x);
        let mut acc: Option<T> = None;
        for di in 0..2 {
            let wi = if di == 0 { 1.0 - f[0] } else { f[0] };
            for dj in 0..2 {
                let wj = if dj == 0 { 1.0 - f[1] } else { f[1] };
                for dk in 0..2 {
                    let wk = if dk == 0 { 1.0 - f[2] } else { f[2] };
                    let v = values[self.idx(b[0] + di, b[1] + dj, b[2] + dk)] * (wi * wj * wk);
                    acc = Some(match acc {
                        None => v,
                        Some(a) => a + v,
                    });
                }
            }
        }
        acc.expect("eight corners")
    }

    pub fn sample(&self, f: impl Fn(Vec3) -> f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| if self.inside[i] { f(self.node(i)) } else { 0.0 })
            .collect()
    }

    /// `Σ_inside h³ g`
    pub fn integrate(&self, g: &[f64]) -> f64 {
        self.inside_nodes.iter().map(|&i| g[i]).sum::<f64>() * self.cell_volume()
    }

    /// Fills exterior nodes within `layers` steps of Ω by linear extrapolation
    /// `2 g(p₁) − g(p₂)` along axis directions (or `g(p₁)` when `p₂` is unset).
    pub fn extend_exterior<T>(&self, values: &mut [T], layers: usize)
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
    {
        let mut filled = self.inside.clone();
        for _ in 0..layers {
            let mut updates = Vec::new();
            for idx in 0..self.len() {
                if filled[idx] {
                    continue;
                }
                let mut acc: Option<T> = None;
                let mut count = 0.0;
                for a in 0..3 {
                    for d in [-1i64, 1] {
                        let Some(p1) = self.neighbor(idx, a, d) else { continue };
                        if !filled[p1] {
                            continue;
                        }
                        let v = match self.neighbor(p1, a, d) {
                            Some(p2) if filled[p2] => values[p1] * 2.0 - values[p2],
                            _ => values[p1],
                        };
                        acc = Some(match acc {
                            None => v,
                            Some(s) => s + v,
                        });
                        count += 1.0;
                    }
                }
                if let Some(s) = acc {
                    updates.push((idx, s * (1.0 / count)));
                }
            }
            if updates.is_empty() {
                break;
            }
            for (idx, v) in updates {
                values[idx] = v;
                filled[idx] = true;
            }
        }
    }
}

impl SpatialMesh {
    /// `d(x, ∂Ω)` at each inside node, in `inside_nodes` order; computed once.
    pub fn boundary_distances(&self) -> Result<&[f64]> {
        if let Some(d) = self.distances.0.get() {
            return Ok(d);
        }
        let d = self
            .inside_nodes
            .par_iter()
            .map(|&i| super::distance_to_boundary(&self.domain, self.node(i)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(self.distances.0.get_or_init(|| d))
    }
}
