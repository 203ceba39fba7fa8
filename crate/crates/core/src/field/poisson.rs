use super::mesh::{SpatialMesh, NONE};
use super::{BoundaryCondition, FieldState};
use crate::error::{Error, Result};
use crate::math::Vec3;
use std::f64::consts::PI;
use std::sync::Arc;

/// Shortley–Weller row at one inside node: `diag·φ_p − Σ coef·φ_q = ρ_p`,
/// with boundary neighbors contributing zero.
#[derive(Debug, Clone)]
struct SwRow {
    diag: f64,
    /// Compact neighbor index or `NONE` for a boundary crossing, per (axis, side).
    nb: [usize; 6],
    coef: [f64; 6],
    /// Distance to the neighbor or to the boundary crossing.
    dist: [f64; 6],
}

#[derive(Debug, Clone)]
pub struct FieldSolver {
    pub mesh: Arc<SpatialMesh>,
    rows: Vec<SwRow>,
    /// Max-norm residual relative to `max(1, ‖ρ‖∞)`.
    pub tol: f64,
    pub max_iter: usize,
    omega: f64,
}

impl FieldSolver {
    pub fn new(mesh: Arc<SpatialMesh>) -> Self {
        let h = mesh.h;
        let rows = mesh
            .inside_nodes
            .iter()
            .map(|&p| {
                let mut nb = [NONE; 6];
                let mut dist = [h; 6];
                for a in 0..3 {
                    for (s, d) in [(0usize, -1i64), (1, 1)] {
                        let slot = 2 * a + s;
                        let q = mesh.neighbor(p, a, d).expect("exterior margin");
                        if mesh.inside[q] {
                            nb[slot] = mesh.compact[q];
                        } else {
                            dist[slot] = (mesh.crossing_fraction(p, q) * h).max(1e-8 * h);
                        }
                    }
                }
                let mut coef = [0.0; 6];
                let mut diag = 0.0;
                for a in 0..3 {
                    let (hl, hr) = (dist[2 * a], dist[2 * a + 1]);
                    let cl = 2.0 / (hl * (hl + hr));
                    let cr = 2.0 / (hr * (hl + hr));
                    coef[2 * a] = cl;
                    coef[2 * a + 1] = cr;
                    diag += cl + cr;
                }
                SwRow { diag, nb, coef, dist }
            })
            .collect();
        let ext = mesh.domain.bounding_box.max - mesh.domain.bounding_box.min;
        let largest = ext[0].max(ext[1]).max(ext[2]);
        let omega = 2.0 / (1.0 + (PI * h / largest).sin());
        FieldSolver {
            mesh,
            rows,
            tol: 1e-8,
            max_iter: 50_000,
            omega,
        }
    }

    fn compact_source(&self, rho: &[f64]) -> Result<Vec<f64>> {
        if rho.len() != self.mesh.len() {
            return Err(Error::IndexOutOfRange {
                index: rho.len(),
                len: self.mesh.len(),
            });
        }
        Ok(self.mesh.inside_nodes.iter().map(|&i| rho[i]).collect())
    }

    /// `−Δφ = ρ` in Ω, `φ = 0` on ∂Ω.
    pub fn solve_dirichlet(&self, rho: &[f64]) -> Result<FieldState> {
        self.solve_dirichlet_from(rho, None)
    }

    /// Dirichlet solve warm-started from a previous full-mesh potential.
    pub fn solve_dirichlet_from(&self, rho: &[f64], guess: Option<&[f64]>) -> Result<FieldState> {
        let b = self.compact_source(rho)?;
        let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let mut u: Vec<f64> = match guess {
            Some(g) => self.mesh.inside_nodes.iter().map(|&i| g[i]).collect(),
            None => vec![0.0; b.len()],
        };
        let mut residual = self.residual(&u, &b) / scale;
        let mut iterations = 0;
        while residual > self.tol {
            if iterations >= self.max_iter || !residual.is_finite() {
                return Err(Error::SolverDivergence {
                    iterations,
                    residual,
                });
            }
            for _ in 0..10 {
                for (p, row) in self.rows.iter().enumerate() {
                    let mut s = b[p];
                    for k in 0..6 {
                        if row.nb[k] != NONE {
                            s += row.coef[k] * u[row.nb[k]];
                        }
                    }
                    u[p] += self.omega * (s / row.diag - u[p]);
                }
            }
            iterations += 10;
            residual = self.residual(&u, &b) / scale;
        }
        let mut phi = vec![0.0; self.mesh.len()];
        for (p, &i) in self.mesh.inside_nodes.iter().enumerate() {
            phi[i] = u[p];
        }
        let grad = self.nodal_gradient(&phi, BoundaryCondition::Dirichlet);
        self.mesh.extend_exterior(&mut phi, 2);
        Ok(FieldState {
            mesh: self.mesh.clone(),
            phi,
            grad,
            bc: BoundaryCondition::Dirichlet,
            rho0: 0.0,
            iterations,
            residual,
        })
    }

    fn residual(&self, u: &[f64], b: &[f64]) -> f64 {
        let mut m = 0.0f64;
        for (p, row) in self.rows.iter().enumerate() {
            let mut r = b[p] - row.diag * u[p];
            for k in 0..6 {
                if row.nb[k] != NONE {
                    r += row.coef[k] * u[row.nb[k]];
                }
            }
            m = m.max(r.abs());
        }
        m
    }

    /// Relative max-norm residual of a stored potential against the source
    /// `ρ − ρ₀`, in the normalization the solver uses for its tolerance.
    pub fn residual_of(&self, state: &FieldState, rho: &[f64], rho0: f64) -> f64 {
        let Ok(mut b) = self.compact_source(rho) else {
            return f64::INFINITY;
        };
        let u: Vec<f64> = self.mesh.inside_nodes.iter().map(|&i| state.phi[i]).collect();
        match state.bc {
            BoundaryCondition::Dirichlet => {
                let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                self.residual(&u, &b) / scale
            }
            BoundaryCondition::Neumann => {
                for x in &mut b {
                    *x -= rho0;
                }
                let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs())).max(rho0.abs());
                let mean = b.iter().sum::<f64>() / b.len() as f64;
                let h2 = self.mesh.h * self.mesh.h;
                let mut m = 0.0f64;
                for (p, row) in self.rows.iter().enumerate() {
                    let mut s = 0.0;
                    for k in 0..6 {
                        if row.nb[k] != NONE {
                            s += u[p] - u[row.nb[k]];
                        }
                    }
                    m = m.max((b[p] - mean - s / h2).abs());
                }
                m / scale
            }
        }
    }

    /// `−Δφ = ρ − ρ₀` with zero flux through the staircase boundary, `φ` of zero mean.
    pub fn solve_neumann(&self, rho: &[f64], rho0: f64) -> Result<FieldState> {
        let mut b = self.compact_source(rho)?;
        for x in &mut b {
            *x -= rho0;
        }
        let n = b.len() as f64;
        let mean = b.iter().sum::<f64>() / n;
        let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs())).max(rho0.abs());
        if mean.abs() > 1e-8 * scale {
            return Err(Error::IncompatibleSource { mean });
        }
        for x in &mut b {
            *x -= mean;
        }
        let h2 = self.mesh.h * self.mesh.h;
        // A u = −Σ (u_q − u_p)/h² over inside neighbors; symmetric positive semidefinite.
        let apply = |u: &[f64], out: &mut [f64]| {
            for (p, row) in self.rows.iter().enumerate() {
                let mut s = 0.0;
                for k in 0..6 {
                    if row.nb[k] != NONE {
                        s += u[p] - u[row.nb[k]];
                    }
                }
                out[p] = s / h2;
            }
        };
        let mut u = vec![0.0; b.len()];
        let mut r = b.clone();
        let mut d = r.clone();
        let mut ad = vec![0.0; b.len()];
        let mut rr: f64 = r.iter().map(|x| x * x).sum();
        let mut iterations = 0;
        let mut residual = r.iter().fold(0.0f64, |m, x| m.max(x.abs())) / scale;
        while residual > self.tol {
            if iterations >= self.max_iter || !residual.is_finite() {
                return Err(Error::SolverDivergence {
                    iterations,
                    residual,
                });
            }
            apply(&d, &mut ad);
            let dad: f64 = d.iter().zip(&ad).map(|(a, b)| a * b).sum();
            let alpha = rr / dad;
            for i in 0..u.len() {
                u[i] += alpha * d[i];
                r[i] -= alpha * ad[i];
            }
            let rr_new: f64 = r.iter().map(|x| x * x).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..d.len() {
                d[i] = r[i] + beta * d[i];
            }
            iterations += 1;
            residual = r.iter().fold(0.0f64, |m, x| m.max(x.abs())) / scale;
        }
        let mu = u.iter().sum::<f64>() / n;
        let mut phi = vec![0.0; self.mesh.len()];
        for (p, &i) in self.mesh.inside_nodes.iter().enumerate() {
            phi[i] = u[p] - mu;
        }
        let grad = self.nodal_gradient(&phi, BoundaryCondition::Neumann);
        self.mesh.extend_exterior(&mut phi, 2);
        Ok(FieldState {
            mesh: self.mesh.clone(),
            phi,
            grad,
            bc: BoundaryCondition::Neumann,
            rho0,
            iterations,
            residual,
        })
    }

    /// Net discrete flux through the staircase boundary, `Σ h³ (Δ_h φ)_p`.
    pub fn neumann_boundary_flux(&self, state: &FieldState) -> f64 {
        let h = self.mesh.h;
        let mut total = 0.0;
        for (p, row) in self.rows.iter().enumerate() {
            let ip = self.mesh.inside_nodes[p];
            for k in 0..6 {
                if row.nb[k] != NONE {
                    total += (state.phi[self.mesh.inside_nodes[row.nb[k]]] - state.phi[ip]) / (h * h);
                }
            }
        }
        total * h.powi(3)
    }

    /// `∇φ` at inside nodes (three-point nonuniform differences), extended
    /// two layers into the exterior.
    pub fn nodal_gradient(&self, phi: &[f64], bc: BoundaryCondition) -> Vec<Vec3> {
        let mesh = &self.mesh;
        let mut grad = vec![Vec3::ZERO; mesh.len()];
        for (p, row) in self.rows.iter().enumerate() {
            let ip = mesh.inside_nodes[p];
            let mut g = Vec3::ZERO;
            for a in 0..3 {
                let (l, r) = (2 * a, 2 * a + 1);
                let up = phi[ip];
                let side = |k: usize| -> Option<(f64, f64)> {
                    if row.nb[k] != NONE {
                        Some((row.dist[k], phi[mesh.inside_nodes[row.nb[k]]]))
                    } else if bc == BoundaryCondition::Dirichlet {
                        Some((row.dist[k], 0.0))
                    } else {
                        None
                    }
                };
                g.0[a] = match (side(l), side(r)) {
                    (Some((hl, ul)), Some((hr, ur))) => {
                        (hl * hl * (ur - up) - hr * hr * (ul - up)) / (hl * hr * (hl + hr))
                    }
                    (None, Some((hr, ur))) => one_sided(mesh, phi, ip, a, 1, hr, ur, up),
                    (Some((hl, ul)), None) => -one_sided(mesh, phi, ip, a, -1, hl, ul, up),
                    (None, None) => 0.0,
                };
            }
            grad[ip] = g;
        }
        mesh.extend_exterior(&mut grad, 2);
        grad
    }
}

/// One-sided derivative magnitude along `dir·e_a` from `p`, second order when
/// the second node is inside.
#[allow(clippy::too_many_arguments)]
fn one_sided(mesh: &SpatialMesh, phi: &[f64], ip: usize, a: usize, dir: i64, h1: f64, u1: f64, up: f64) -> f64 {
    let second = mesh
        .neighbor(ip, a, dir)
        .and_then(|q| mesh.neighbor(q, a, dir))
        .filter(|&q2| mesh.inside[q2] && h1 == mesh.h);
    match second {
        Some(q2) => (-3.0 * up + 4.0 * u1 - phi[q2]) / (2.0 * mesh.h),
        None => (u1 - up) / h1,
    }
}
