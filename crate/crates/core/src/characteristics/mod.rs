//! Hamiltonian characteristics `dX/ds = V`, `dV/ds = −ι∇φ(s, X)`, backward
//! exit data and the two kinetic weights built from them.

mod ode;
mod weights;

pub use ode::{ExitRecord, Integrator, Sample};
pub use weights::{
    alpha_invariance_residual, beta_squared, default_ladder, c_eps, chi, chi_eps, chi_eps_prime, chi_prime, kinetic_weight_alpha,
    tilde_alpha, velocity_lemma_check, InvarianceReport, TildeAlphaFrame, VelocityLemmaReport, WeightParams,
};

use crate::field::FieldState;
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// Species tag ι.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Plus,
    Minus,
}

impl Species {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Species::Plus => 1.0,
            Species::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Species {
        match self {
            Species::Plus => Species::Minus,
            Species::Minus => Species::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub t: f64,
    pub x: Vec3,
    pub v: Vec3,
    pub iota: Species,
}

impl PhaseState {
    pub fn new(t: f64, x: Vec3, v: Vec3) -> Self {
        PhaseState {
            t,
            x,
            v,
            iota: Species::Plus,
        }
    }
}

/// Gradient of the potential, `∇φ(t, x)`.
pub trait PotentialField: Send + Sync {
    fn grad_phi(&self, t: f64, x: Vec3) -> Vec3;

    /// Straight-line characteristics may be used.
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl PotentialField for ZeroField {
    fn grad_phi(&self, _t: f64, _x: Vec3) -> Vec3 {
        Vec3::ZERO
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// Constant `∇φ`.
#[derive(Debug, Clone, Copy)]
pub struct UniformField {
    pub grad: Vec3,
}

impl PotentialField for UniformField {
    fn grad_phi(&self, _t: f64, _x: Vec3) -> Vec3 {
        self.grad
    }

    fn is_zero(&self) -> bool {
        self.grad == Vec3::ZERO
    }
}

/// Conductor potential of a uniformly charged ball centered at the origin:
/// `φ = ρ (R² − |x|²)/6`, so `E = −∇φ = ρx/3` and `E·n = ρR/3` on the sphere.
#[derive(Debug, Clone, Copy)]
pub struct ConductorBall {
    pub charge: f64,
    pub radius: f64,
}

impl ConductorBall {
    pub fn unit() -> Self {
        ConductorBall {
            charge: 1.0,
            radius: 1.0,
        }
    }

    pub fn phi(&self, x: Vec3) -> f64 {
        self.charge * (self.radius * self.radius - x.norm_sq()) / 6.0
    }

    /// `sup|∇φ| + sup|∇²φ|` over the closed ball.
    pub fn c1_norm(&self) -> f64 {
        self.charge * self.radius / 3.0 + self.charge / 3.0
    }

    /// `min E·n` on the sphere.
    pub fn sign_margin(&self) -> f64 {
        self.charge * self.radius / 3.0
    }
}

impl PotentialField for ConductorBall {
    fn grad_phi(&self, _t: f64, x: Vec3) -> Vec3 {
        x * (-self.charge / 3.0)
    }
}

/// A solved mesh potential, constant in time.
#[derive(Debug, Clone)]
pub struct MeshPotential(pub FieldState);

impl PotentialField for MeshPotential {
    fn grad_phi(&self, _t: f64, x: Vec3) -> Vec3 {
        self.0.grad_phi_at(x)
    }
}

/// Time-indexed mesh potentials, linear in time between frames, held at the
/// last frame afterwards, and extended before the first frame `t₀` as
/// `e^{−|t − t₀|} φ(t₀)`.
#[derive(Debug, Clone)]
pub struct FieldSeries {
    pub frames: Vec<(f64, FieldState)>,
}

impl PotentialField for FieldSeries {
    fn grad_phi(&self, t: f64, x: Vec3) -> Vec3 {
        let f = &self.frames;
        let (t0, first) = &f[0];
        if t <= *t0 {
            return first.grad_phi_at(x) * (-(t0 - t)).exp();
        }
        let k = f.partition_point(|(tk, _)| *tk <= t);
        if k >= f.len() {
            return f[f.len() - 1].1.grad_phi_at(x);
        }
        let (ta, a) = &f[k - 1];
        let (tb, b) = &f[k];
        let w = (t - ta) / (tb - ta);
        a.grad_phi_at(x) * (1.0 - w) + b.grad_phi_at(x) * w
    }
}
