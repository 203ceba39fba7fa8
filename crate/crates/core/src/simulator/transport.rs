use crate::collision::{maxwellian, VelocityGrid};
use crate::error::{Error, Result};
use crate::field::SpatialMesh;
use crate::geometry::BoundaryPoint;
use crate::math::Vec3;
use crate::wall::{cl_kernel, WallModel};
use rayon::prelude::*;

/// What lies across one face of a finite-volume cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Cell(usize),
    /// Index into `XCells::walls`.
    Wall(usize),
}

/// A staircase wall face: the cell it belongs to and its orientation
/// `2·axis + side`, `side = 1` for the `+e_axis` face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WallFace {
    pub cell: usize,
    pub orientation: usize,
}

/// Cubic cells of side `h` with face connectivity, slot `2·axis + side`.
#[derive(Debug, Clone)]
pub struct XCells {
    pub h: f64,
    pub centers: Vec<Vec3>,
    pub links: Vec<[Link; 6]>,
    pub walls: Vec<WallFace>,
}

pub fn orientation_normal(o: usize) -> Vec3 {
    let n = Vec3::unit(o / 2);
    if o % 2 == 1 {
        n
    } else {
        -n
    }
}

impl XCells {
    /// One cell per inside node of the mesh; faces towards outside nodes are walls.
    pub fn from_mesh(mesh: &SpatialMesh) -> Self {
        let mut walls = Vec::new();
        let mut links = Vec::with_capacity(mesh.inside_nodes.len());
        for (p, &i) in mesh.inside_nodes.iter().enumerate() {
            let mut l = [Link::Cell(0); 6];
            for a in 0..3 {
                for (s, d) in [(0usize, -1i64), (1, 1)] {
                    let o = 2 * a + s;
                    l[o] = match mesh.neighbor(i, a, d) {
                        Some(q) if mesh.inside[q] => Link::Cell(mesh.compact[q]),
                        _ => {
                            walls.push(WallFace { cell: p, orientation: o });
                            Link::Wall(walls.len() - 1)
                        }
                    };
                }
            }
            links.push(l);
        }
        XCells {
            h: mesh.h,
            centers: mesh.inside_nodes.iter().map(|&i| mesh.node(i)).collect(),
            links,
            walls,
        }
    }

    /// `n³` cells of side `h` with periodic wrap-around and no walls.
    pub fn periodic(n: usize, h: f64) -> Self {
        let idx = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let mut links = Vec::with_capacity(n * n * n);
        let mut centers = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = [i, j, k];
                    let mut l = [Link::Cell(0); 6];
                    for a in 0..3 {
                        let mut lo = c;
                        let mut hi = c;
                        lo[a] = (c[a] + n - 1) % n;
                        hi[a] = (c[a] + 1) % n;
                        l[2 * a] = Link::Cell(idx(lo[0], lo[1], lo[2]));
                        l[2 * a + 1] = Link::Cell(idx(hi[0], hi[1], hi[2]));
                    }
                    links.push(l);
                    centers.push(Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h);
                }
            }
        }
        XCells {
            h,
            centers,
            links,
            walls: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

/// Discrete re-emission law of one face orientation. For an outgoing profile
/// `|u·n| F(u)`, the emitted flux density at incoming `v` is
/// `G(v) = Σ_u K[v,u] |u·n| F(u) w_u` with `Σ_v K[v,u] w_v = 1`.
#[derive(Debug, Clone)]
enum Emission {
    /// `K[v,u] = profile[v]`
    Diffuse { profile: Vec<f64> },
    /// Row-major `n_v × n_v`.
    Dense { k: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct WallOperator {
    /// Per orientation.
    emission: Vec<Emission>,
    /// Per orientation, `|v·n|` for outgoing `v` and 0 otherwise.
    out_speed: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl WallOperator {
    pub fn new(grid: &VelocityGrid, model: &WallModel) -> Result<Self> {
        model.validate()?;
        let nv = grid.len();
        let mut emission = Vec::with_capacity(6);
        let mut out_speed = Vec::with_capacity(6);
        for o in 0..6 {
            let n = orientation_normal(o);
            let vn: Vec<f64> = grid.nodes.iter().map(|v| v.dot(n)).collect();
            out_speed.push(vn.iter().map(|&s| s.max(0.0)).collect());
            match model {
                WallModel::Diffuse => {
                    let mut profile: Vec<f64> = grid
                        .nodes
                        .iter()
                        .zip(&vn)
                        .map(|(&v, &s)| if s < 0.0 { maxwellian(v) * -s } else { 0.0 })
                        .collect();
                    let total = grid.integrate(&profile);
                    if !(total > 0.0) {
                        return Err(Error::InvalidParameter("velocity grid has no incoming nodes".into()));
                    }
                    for p in &mut profile {
                        *p /= total;
                    }
                    emission.push(Emission::Diffuse { profile });
                }
                WallModel::CercignaniLampis { .. } => {
                    let bp = BoundaryPoint { position: Vec3::ZERO, normal: n };
                    let cols: Vec<Vec<f64>> = (0..nv)
                        .into_par_iter()
                        .map(|j| {
                            let mut col = vec![0.0; nv];
                            if vn[j] <= 0.0 {
                                return Ok(col);
                            }
                            for i in 0..nv {
                                if vn[i] < 0.0 && grid.weights[i] > 0.0 {
                                    col[i] = cl_kernel(grid.nodes[j], grid.nodes[i], &bp, model)?;
                                }
                            }
                            let s = grid.integrate(&col);
                            if s > 0.0 {
                                for c in &mut col {
                                    *c /= s;
                                }
                            }
                            Ok(col)
                        })
                        .collect::<Result<_>>()?;
                    let mut k = vec![0.0; nv * nv];
                    for (j, col) in cols.iter().enumerate() {
                        for (i, &c) in col.iter().enumerate() {
                            k[i * nv + j] = c;
                        }
                    }
                    emission.push(Emission::Dense { k });
                }
            }
        }
        Ok(WallOperator {
            emission,
            out_speed,
            weights: grid.weights.clone(),
        })
    }

    /// Emitted flux density `G(v)` for the cell values `f` at a face of
    /// orientation `o`; zero at outgoing `v`.
    pub fn emit(&self, o: usize, f: &[f64], out: &mut [f64]) {
        let sp = &self.out_speed[o];
        match &self.emission[o] {
            Emission::Diffuse { profile } => {
                let flux: f64 = f
                    .iter()
                    .zip(sp)
                    .zip(&self.weights)
                    .map(|((a, s), w)| a * s * w)
                    .sum();
                for (g, p) in out.iter_mut().zip(profile) {
                    *g = p * flux;
                }
            }
            Emission::Dense { k } => {
                let nv = f.len();
                let src: Vec<f64> = f
                    .iter()
                    .zip(sp)
                    .zip(&self.weights)
                    .map(|((a, s), w)| a * s * w)
                    .collect();
                for (i, g) in out.iter_mut().enumerate() {
                    let row = &k[i * nv..(i + 1) * nv];
                    *g = row.iter().zip(&src).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
}

/// One step of `∂_t F + v·∇_x F = 0` with wall re-emission, as upwind sweeps
/// along x, y and z in turn.
pub fn advect_x(cells: &XCells, grid: &VelocityGrid, wall: Option<&WallOperator>, f: &[f64], dt: f64) -> Vec<f64> {
    let mut g = sweep(cells, grid, wall, f, dt, 0);
    g = sweep(cells, grid, wall, &g, dt, 1);
    sweep(cells, grid, wall, &g, dt, 2)
}

fn sweep(cells: &XCells, grid: &VelocityGrid, wall: Option<&WallOperator>, f: &[f64], dt: f64, a: usize) -> Vec<f64> {
    let nv = grid.len();
    let emitted: Vec<Option<Vec<f64>>> = cells
        .walls
        .par_iter()
        .map(|w| {
            if w.orientation / 2 != a {
                return None;
            }
            let mut g = vec![0.0; nv];
            if let Some(op) = wall {
                op.emit(w.orientation, &f[w.cell * nv..(w.cell + 1) * nv], &mut g);
            }
            Some(g)
        })
        .collect();
    let r = dt / cells.h;
    let mut out = vec![0.0; f.len()];
    out.par_chunks_mut(nv).enumerate().for_each(|(p, dst)| {
        let own = &f[p * nv..(p + 1) * nv];
        let links = &cells.links[p];
        for (k, v) in grid.nodes.iter().enumerate() {
            let va = v[a];
            if va == 0.0 {
                dst[k] = own[k];
                continue;
            }
            // inflow comes through the upstream face
            let slot = if va > 0.0 { 2 * a } else { 2 * a + 1 };
            let inflow = match links[slot] {
                Link::Cell(q) => va.abs() * f[q * nv + k],
                Link::Wall(w) => emitted[w].as_ref().map_or(0.0, |g| g[k]),
            };
            dst[k] = own[k] + r * (inflow - va.abs() * own[k]);
        }
    });
    out
}

/// One explicit upwind step of `∂_t F + a·∇_v F = 0` on the velocity box,
/// with zero flux through its outer faces. `background` is added to `f`
/// before differencing and the update is written back to `f`.
pub fn advect_v(grid: &VelocityGrid, accel: Vec3, background: &[f64], f: &mut [f64], dt: f64) {
    let n = grid.n;
    let r = dt / grid.h;
    let total: Vec<f64> = f.iter().zip(background).map(|(a, b)| a + b).collect();
    let mut delta = vec![0.0; f.len()];
    for a in 0..3 {
        let c = accel[a];
        if c == 0.0 {
            continue;
        }
        let stride = match a {
            0 => n * n,
            1 => n,
            _ => 1,
        };
        for (idx, d) in delta.iter_mut().enumerate() {
            let pos = (idx / stride) % n;
            // flux through the upper face of this cell along axis a
            let up = if pos + 1 < n {
                if c > 0.0 {
                    c * total[idx]
                } else {
                    c * total[idx + stride]
                }
            } else {
                0.0
            };
            let down = if pos > 0 {
                if c > 0.0 {
                    c * total[idx - stride]
                } else {
                    c * total[idx]
                }
            } else {
                0.0
            };
            *d -= r * (up - down);
        }
    }
    for (x, d) in f.iter_mut().zip(delta) {
        *x += d;
    }
}
