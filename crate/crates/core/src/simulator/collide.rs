use super::scenario::{CollisionConfig, CollisionModel};
use crate::collision::{maxwellian, CollisionOperator, CollisionSpec, VelocityGrid};
use crate::error::{Error, Result};
use crate::math::{solve_dense, Vec3};
use rayon::prelude::*;

const HULL_SLACK: f64 = 1e-9;

/// Trilinear stencil on the velocity nodes, `None` outside their hull.
#[inline]
fn stencil(grid: &VelocityGrid, v: Vec3) -> Option<([usize; 8], [f64; 8])> {
    let top = (grid.n - 1) as f64;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let s = (v[a] + grid.v_max) / grid.h - 0.5;
        // points on a hull face must not flip in or out with round-off
        if !(-HULL_SLACK..=top + HULL_SLACK).contains(&s) {
            return None;
        }
        let s = s.clamp(0.0, top);
        let b = (s.floor() as usize).min(grid.n - 2);
        base[a] = b;
        frac[a] = s - b as f64;
    }
    let mut idx = [0usize; 8];
    let mut w = [0.0; 8];
    let mut c = 0;
    for di in 0..2 {
        let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
        for dj in 0..2 {
            let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
            for dk in 0..2 {
                let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                idx[c] = grid.index(base[0] + di, base[1] + dj, base[2] + dk);
                w[c] = wi * wj * wk;
                c += 1;
            }
        }
    }
    Some((idx, w))
}

#[inline]
fn interp(grid: &VelocityGrid, f: &[f64], v: Vec3) -> f64 {
    match stencil(grid, v) {
        Some((idx, w)) => idx.iter().zip(&w).map(|(&i, &c)| c * f[i]).sum(),
        None => 0.0,
    }
}

/// Discrete collision update on deviations `h = F − μ`.
///
/// `A h = Q_gain(μ, h)` and `B h = Q(h, μ)`; the loss `−ν_μ h` of `Q(μ, h)`
/// is kept apart and treated implicitly.
#[derive(Debug, Clone)]
pub struct Collider {
    pub model: CollisionModel,
    pub op: CollisionOperator,
    a_gain: Vec<f64>,
    b: Vec<f64>,
    pub nu_mu: Vec<f64>,
    mu: Vec<f64>,
    /// Conservation test functions `1, v, |v|²` per node.
    phi: Vec<[f64; 5]>,
}

impl Collider {
    pub fn new(grid: &VelocityGrid, cfg: &CollisionConfig) -> Result<Self> {
        let spec = CollisionSpec {
            kappa: cfg.kappa,
            angular: cfg.angular,
            v_max: grid.v_max,
            n_u: grid.n,
            n_omega: cfg.n_omega,
        };
        spec.validate()?;
        let op = CollisionOperator::with_grid(spec, grid.clone());
        let nv = grid.len();
        let mu = grid.sample(maxwellian);
        let phi = grid
            .nodes
            .iter()
            .map(|v| [1.0, v[0], v[1], v[2], v.norm_sq()])
            .collect();
        if cfg.model == CollisionModel::None {
            return Ok(Collider {
                model: cfg.model,
                op,
                a_gain: Vec::new(),
                b: Vec::new(),
                nu_mu: vec![0.0; nv],
                mu,
                phi,
            });
        }
        let q = cfg.angular.sphere_integral();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..nv)
            .into_par_iter()
            .map(|i| {
                let v = grid.nodes[i];
                let mut ra = vec![0.0; nv];
                let mut rb = vec![0.0; nv];
                for (j, (&u, &wu)) in grid.nodes.iter().zip(&grid.weights).enumerate() {
                    if wu == 0.0 {
                        continue;
                    }
                    op.for_each_omega(u, v, |up, vp, w| {
                        if let Some((idx, c)) = stencil(grid, vp) {
                            let s = wu * w * maxwellian(up);
                            for k in 0..8 {
                                ra[idx[k]] += s * c[k];
                            }
                        }
                        if let Some((idx, c)) = stencil(grid, up) {
                            let s = wu * w * maxwellian(vp);
                            for k in 0..8 {
                                rb[idx[k]] += s * c[k];
                            }
                        }
                    });
                    let g = (v - u).norm();
                    let speed = if cfg.kappa == 0.0 { 1.0 } else { g.powf(cfg.kappa) };
                    rb[j] -= maxwellian(v) * q * speed * wu;
                }
                (ra, rb)
            })
            .collect();
        let mut a_gain = Vec::with_capacity(nv * nv);
        let mut b = Vec::with_capacity(nv * nv);
        for (ra, rb) in rows {
            a_gain.extend(ra);
            b.extend(rb);
        }
        let nu_mu = grid.nodes.iter().map(|&v| op.loss_frequency(&mu, v)).collect();
        Ok(Collider {
            model: cfg.model,
            op,
            a_gain,
            b,
            nu_mu,
            mu,
            phi,
        })
    }

    fn grid(&self) -> &VelocityGrid {
        &self.op.grid
    }

    fn matvec(m: &[f64], x: &[f64], out: &mut [f64], scale: f64) {
        let n = x.len();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &m[i * n..(i + 1) * n];
            *o += scale * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `Q(g, h)` with `g` at the partner slot and `h` at `v`.
    pub fn quadratic(&self, g: &[f64], h: &[f64]) -> Vec<f64> {
        let grid = self.grid();
        grid.nodes
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut gain = 0.0;
                for (&u, &wu) in grid.nodes.iter().zip(&grid.weights) {
                    if wu == 0.0 {
                        continue;
                    }
                    let mut acc = 0.0;
                    self.op.for_each_omega(u, v, |up, vp, w| {
                        acc += w * interp(grid, g, up) * interp(grid, h, vp);
                    });
                    gain += wu * acc;
                }
                gain - h[i] * self.op.loss_frequency(g, v)
            })
            .collect()
    }

    /// Advances the deviations of every species at one cell by `dt`.
    /// `cell[s]` holds species `s`.
    pub fn step_cell(&self, cell: &mut [Vec<f64>], dt: f64) -> Result<()> {
        if self.model == CollisionModel::None {
            return Ok(());
        }
        let ns = cell.len();
        let nv = self.mu.len();
        let mut total = vec![0.0; nv];
        for h in cell.iter() {
            for (t, x) in total.iter_mut().zip(h) {
                *t += x;
            }
        }
        let mut deltas = Vec::with_capacity(ns);
        for h in cell.iter() {
            let mut g = vec![0.0; nv];
            Self::matvec(&self.a_gain, h, &mut g, ns as f64);
            Self::matvec(&self.b, &total, &mut g, 1.0);
            if self.model == CollisionModel::Full {
                for (x, q) in g.iter_mut().zip(self.quadratic(&total, h)) {
                    *x += q;
                }
            }
            let d: Vec<f64> = (0..nv)
                .map(|k| {
                    let new = (h[k] + dt * g[k]) / (1.0 + dt * ns as f64 * self.nu_mu[k]);
                    new - h[k]
                })
                .collect();
            deltas.push(d);
        }
        self.conserve(&mut deltas)?;
        for (h, d) in cell.iter_mut().zip(deltas) {
            for (x, y) in h.iter_mut().zip(d) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Removes from the increments a correction `μ(a_s + b·v + c|v|²)` so
    /// that each species keeps its mass and the total keeps momentum and energy.
    fn conserve(&self, deltas: &mut [Vec<f64>]) -> Result<()> {
        let ns = deltas.len();
        let m = ns + 4;
        let w = &self.grid().weights;
        // basis function j for species s: μ·e_j, e_j ∈ {1_s, v_x, v_y, v_z, |v|²}
        let basis = |s: usize, j: usize, k: usize| -> f64 {
            if j < ns {
                if j == s {
                    self.phi[k][0]
                } else {
                    0.0
                }
            } else {
                self.phi[k][j - ns + 1]
            }
        };
        // constraint i for species s: ∫ e_i Δ_s, summed over s for the shared ones
        let mut a = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for s in 0..ns {
            for k in 0..w.len() {
                let wk = w[k] * self.mu[k];
                for i in 0..m {
                    let ei = basis(s, i, k);
                    if ei == 0.0 {
                        continue;
                    }
                    rhs[i] += w[k] * ei * deltas[s][k];
                    for j in 0..m {
                        a[i][j] += wk * ei * basis(s, j, k);
                    }
                }
            }
        }
        let c = solve_dense(a, rhs).ok_or_else(|| Error::InvalidParameter("singular conservation system".into()))?;
        for (s, d) in deltas.iter_mut().enumerate() {
            for k in 0..d.len() {
                let corr: f64 = (0..m).map(|j| c[j] * basis(s, j, k)).sum();
                d[k] -= self.mu[k] * corr;
            }
        }
        Ok(())
    }

    /// `ν(F)(v)` for a full density `F` on the grid.
    pub fn nu_of(&self, f: &[f64], v: Vec3) -> f64 {
        self.op.loss_frequency(f, v)
    }
}
