//! Electrostatic potential: Poisson solves on a level-set domain, the electric
//! field `E = −∇φ`, Hopf-type boundary bounds and Hölder diagnostics.

mod holder;
mod mesh;
mod poisson;

pub use holder::{holder_norm, interpolation_check, HolderReport, InterpolationReport};
pub use mesh::SpatialMesh;
pub use poisson::FieldSolver;

use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Conductor: `φ = 0` on ∂Ω.
    Dirichlet,
    /// Insulator: `∂φ/∂n = 0` on ∂Ω.
    Neumann,
}

/// Potential on a mesh with its nodal gradient. Exterior nodes near Ω hold
/// extrapolated values so that trilinear evaluation is defined up to ∂Ω.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub mesh: Arc<SpatialMesh>,
    pub phi: Vec<f64>,
    /// `∇φ` per node.
    pub grad: Vec<Vec3>,
    pub bc: BoundaryCondition,
    pub rho0: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl FieldState {
    /// Samples an analytic potential on every node and differentiates it with
    /// centered differences.
    pub fn from_fn(mesh: Arc<SpatialMesh>, bc: BoundaryCondition, phi: impl Fn(Vec3) -> f64) -> Self {
        let values: Vec<f64> = (0..mesh.len()).map(|i| phi(mesh.node(i))).collect();
        let grad = (0..mesh.len())
            .map(|i| {
                let mut g = Vec3::ZERO;
                for a in 0..3 {
                    g.0[a] = match (mesh.neighbor(i, a, -1), mesh.neighbor(i, a, 1)) {
                        (Some(l), Some(r)) => (values[r] - values[l]) / (2.0 * mesh.h),
                        (None, Some(r)) => (values[r] - values[i]) / mesh.h,
                        (Some(l), None) => (values[i] - values[l]) / mesh.h,
                        (None, None) => 0.0,
                    };
                }
                g
            })
            .collect();
        FieldState {
            mesh,
            phi: values,
            grad,
            bc,
            rho0: 0.0,
            iterations: 0,
            residual: 0.0,
        }
    }

    #[inline]
    pub fn phi_at(&self, x: Vec3) -> f64 {
        self.mesh.trilinear(&self.phi, x)
    }

    #[inline]
    pub fn grad_phi_at(&self, x: Vec3) -> Vec3 {
        self.mesh.trilinear(&self.grad, x)
    }

    /// `E = −∇φ` at every node.
    pub fn electric_field(&self) -> Vec<Vec3> {
        self.grad.iter().map(|&g| -g).collect()
    }

    pub fn scaled(&self, factor: f64) -> FieldState {
        FieldState {
            phi: self.phi.iter().map(|p| p * factor).collect(),
            grad: self.grad.iter().map(|&g| g * factor).collect(),
            ..self.clone()
        }
    }

    /// `φ(t) = e^{−|t|} φ₀` for `t ≤ 0`.
    pub fn extend_negative_time(&self, t: f64) -> Result<FieldState> {
        if t > 0.0 {
            return Err(Error::PositiveTime { t });
        }
        Ok(self.scaled((-t.abs()).exp()))
    }

    /// Inward normal derivative `−∂φ/∂n` at a boundary point, by the one-sided
    /// second-order stencil `(4φ(p−sn) − φ(p−2sn)) / (2s)` with `s = 2h`,
    /// which assumes `φ(p) = 0`.
    pub fn inward_derivative(&self, p: Vec3, n: Vec3) -> f64 {
        let s = 2.0 * self.mesh.h;
        let f1 = self.phi_at(p - n * s);
        let f2 = self.phi_at(p - n * (2.0 * s));
        (4.0 * f1 - f2) / (2.0 * s)
    }

    /// Rows `x,y,z,phi,Ex,Ey,Ez` for every inside node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,z,phi,Ex,Ey,Ez")?;
        for &i in &self.mesh.inside_nodes {
            let x = self.mesh.node(i);
            let e = -self.grad[i];
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                x[0], x[1], x[2], self.phi[i], e[0], e[1], e[2]
            )?;
        }
        Ok(())
    }
}

/// Distance to ∂Ω; ambiguous closest points still have a well-defined distance.
pub fn distance_to_boundary(domain: &crate::geometry::LevelSetDomain, x: Vec3) -> Result<f64> {
    match domain.closest_boundary_point(x) {
        Ok((_, d)) => Ok(d),
        Err(Error::AmbiguousProjection { distance, .. }) => Ok(distance),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopfReport {
    /// Minimum of `−∂φ/∂n` over boundary quadrature nodes.
    pub min_inward_derivative: f64,
    /// `∫ h(x) d(x, ∂Ω) dx`
    pub moment: f64,
    /// `min_inward_derivative / moment`; NaN when the moment vanishes.
    pub feasible_c: f64,
    pub degenerate: bool,
    pub boundary_points: usize,
}

/// Quadrature order of the boundary sample used by Hopf and sign checks.
pub const BOUNDARY_ORDER: usize = 12;

/// Solves `−Δφ = h`, `φ|∂Ω = 0` and compares the inward normal derivative
/// with the distance-weighted moment of `h`.
pub fn hopf_lower_bound(solver: &FieldSolver, h: &[f64]) -> Result<HopfReport> {
    let mesh = &solver.mesh;
    let scale = mesh.inside_nodes.iter().fold(1.0f64, |m, &i| m.max(h.get(i).copied().unwrap_or(0.0).abs()));
    let min = mesh.inside_nodes.iter().map(|&i| h[i]).fold(f64::INFINITY, f64::min);
    if min < -1e-12 * scale {
        return Err(Error::NonnegativityViolation { min });
    }
    let state = solver.solve_dirichlet(h)?;
    let quad = mesh.domain.boundary_quadrature(BOUNDARY_ORDER)?;
    let min_inward = quad
        .iter()
        .map(|(bp, _)| state.inward_derivative(bp.position, bp.normal))
        .fold(f64::INFINITY, f64::min);
    let dist = mesh.boundary_distances()?;
    let mut moment = 0.0;
    for (&i, &d) in mesh.inside_nodes.iter().zip(dist) {
        moment += h[i] * d;
    }
    moment *= mesh.cell_volume();
    let degenerate = moment <= 0.0;
    Ok(HopfReport {
        min_inward_derivative: min_inward,
        moment,
        feasible_c: if degenerate { f64::NAN } else { min_inward / moment },
        degenerate,
        boundary_points: quad.len(),
    })
}

/// `min E·n` over boundary quadrature nodes. A Neumann state imposes zero
/// normal flux on every staircase face, so its value is 0.
pub fn boundary_sign_condition(state: &FieldState) -> Result<f64> {
    match state.bc {
        BoundaryCondition::Neumann => Ok(0.0),
        BoundaryCondition::Dirichlet => Ok(state
            .mesh
            .domain
            .boundary_quadrature(BOUNDARY_ORDER)?
            .iter()
            .map(|(bp, _)| state.inward_derivative(bp.position, bp.normal))
            .fold(f64::INFINITY, f64::min)),
    }
}
