//! Wall interaction: diffuse reflection, the Cercignani–Lampis scattering
//! kernel, velocity sampling at the wall and stochastic diffuse cycles.

mod cycles;

pub use cycles::{
    build_cycles, build_diffuse_cycle, cycle_measure_weight, survival_curve, Bounce, CycleEnd, DiffuseCycle,
};

use crate::collision::{maxwellian, sqrt_maxwellian};
use crate::error::{Error, Result};
use crate::geometry::BoundaryPoint;
use crate::math::{graded_panels, Rule1d, Vec3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Emitted normal speeds below this are resampled.
pub const GRAZING: f64 = 1e-8;

/// Acceptance floor of the rejection sampler.
pub const MIN_ACCEPTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum WallModel {
    /// Diffuse reflection at unit temperature.
    Diffuse,
    CercignaniLampis {
        r_perp: f64,
        r_par: f64,
        #[serde(default = "unit_temperature")]
        t_wall: f64,
    },
}

fn unit_temperature() -> f64 {
    1.0
}

impl Default for WallModel {
    fn default() -> Self {
        WallModel::Diffuse
    }
}

impl WallModel {
    pub fn cercignani_lampis(r_perp: f64, r_par: f64, t_wall: f64) -> Result<Self> {
        let m = WallModel::CercignaniLampis { r_perp, r_par, t_wall };
        m.validate()?;
        Ok(m)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let WallModel::CercignaniLampis { r_perp, r_par, t_wall } = *self {
            if !(r_perp > 0.0 && r_perp <= 1.0) {
                out.push(format!("r_perp = {r_perp} must lie in (0, 1]"));
            }
            if !(r_par > 0.0 && r_par < 2.0) {
                out.push(format!("r_par = {r_par} must lie in (0, 2)"));
            }
            if !(t_wall > 0.0 && t_wall.is_finite()) {
                out.push(format!("t_wall = {t_wall} must be positive"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            Some(v) => Err(Error::InvalidParameter(v.clone())),
            None => Ok(()),
        }
    }

    pub fn temperature(&self) -> f64 {
        match *self {
            WallModel::Diffuse => 1.0,
            WallModel::CercignaniLampis { t_wall, .. } => t_wall,
        }
    }
}

/// Tensor Gauss–Legendre rule on the half space `{n·u > 0}` truncated at
/// `|u_i| ≤ cutoff` in the frame adapted to `n`; `panels` panels cover the
/// normal range and twice as many the tangential one.
#[derive(Debug, Clone)]
pub struct HalfSpaceRule {
    pub nodes: Vec<(Vec3, f64)>,
}

impl HalfSpaceRule {
    pub fn new(normal: Vec3, panels: usize, order: usize, cutoff: f64) -> Self {
        let (e1, e2) = normal.orthonormal_pair();
        let split = |a: f64, b: f64| -> Vec<(f64, f64)> {
            let w = (b - a) / panels as f64;
            (0..panels).map(|k| (a + k as f64 * w, a + (k + 1) as f64 * w)).collect()
        };
        let split_t = |a: f64, b: f64| -> Vec<(f64, f64)> {
            let w = (b - a) / (2 * panels) as f64;
            (0..2 * panels).map(|k| (a + k as f64 * w, a + (k + 1) as f64 * w)).collect()
        };
        let rn = Rule1d::composite(&split(0.0, cutoff), order);
        let rt = Rule1d::composite(&split_t(-cutoff, cutoff), order);
        let mut nodes = Vec::with_capacity(rn.len() * rt.len() * rt.len());
        for (&un, &wn) in rn.nodes.iter().zip(&rn.weights) {
            for (&a, &wa) in rt.nodes.iter().zip(&rt.weights) {
                for (&b, &wb) in rt.nodes.iter().zip(&rt.weights) {
                    nodes.push((normal * un + e1 * a + e2 * b, wn * wa * wb));
                }
            }
        }
        HalfSpaceRule { nodes }
    }

    /// Default resolution for Maxwellian-weighted integrands.
    pub fn standard(normal: Vec3) -> Self {
        HalfSpaceRule::new(normal, 3, 10, 9.0)
    }

    pub fn integrate(&self, mut f: impl FnMut(Vec3) -> f64) -> f64 {
        self.nodes.iter().map(|&(u, w)| w * f(u)).sum()
    }
}

/// `∫_{n·u>0} μ(u)(n·u) du` by one-dimensional quadrature of the normal
/// factor (the tangential Gaussians integrate to one).
pub fn outgoing_flux_of_mu() -> f64 {
    let panels: Vec<(f64, f64)> = (0..16).map(|k| (k as f64, k as f64 + 1.0)).collect();
    Rule1d::composite(&panels, 16).integrate(|w| w * (-0.5 * w * w).exp() / (2.0 * PI).sqrt())
}

/// Normalization `c_μ` of the diffuse wall law, computed once.
pub fn c_mu() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| 1.0 / outgoing_flux_of_mu())
}

fn incoming_side(bp: &BoundaryPoint, v: Vec3) -> Result<()> {
    let vn = bp.normal.dot(v);
    if vn >= 0.0 {
        return Err(Error::WrongSide { v, normal_component: vn });
    }
    Ok(())
}

/// Diffuse wall value `c_μ μ(v) ∫_{n·u>0} F(u)(n·u) du` for `n·v < 0`.
pub fn diffuse_outgoing(f_big: impl FnMut(Vec3) -> f64, bp: &BoundaryPoint, v: Vec3) -> Result<f64> {
    diffuse_outgoing_with(&HalfSpaceRule::standard(bp.normal), f_big, bp, v)
}

pub fn diffuse_outgoing_with(
    rule: &HalfSpaceRule,
    mut f_big: impl FnMut(Vec3) -> f64,
    bp: &BoundaryPoint,
    v: Vec3,
) -> Result<f64> {
    incoming_side(bp, v)?;
    let flux = rule.integrate(|u| f_big(u) * bp.normal.dot(u));
    Ok(c_mu() * maxwellian(v) * flux)
}

/// The same law for `f = F/√μ`: `c_μ √μ(v) ∫_{n·u>0} f(u)√μ(u)(n·u) du`.
pub fn diffuse_outgoing_f(mut f: impl FnMut(Vec3) -> f64, bp: &BoundaryPoint, v: Vec3) -> Result<f64> {
    incoming_side(bp, v)?;
    let rule = HalfSpaceRule::standard(bp.normal);
    let flux = rule.integrate(|u| f(u) * sqrt_maxwellian(u) * bp.normal.dot(u));
    Ok(c_mu() * sqrt_maxwellian(v) * flux)
}

fn i0_rule() -> &'static Rule1d {
    static R: OnceLock<Rule1d> = OnceLock::new();
    R.get_or_init(|| Rule1d::composite(&graded_panels(0.0, PI, 0.0, 1e-3), 10))
}

/// `e^{−|y|} I₀(y)` with `I₀(y) = π⁻¹∫₀^π e^{y cos φ} dφ`.
pub fn bessel_i0_scaled(y: f64) -> f64 {
    let a = y.abs();
    i0_rule().integrate(|p| (a * (p.cos() - 1.0)).exp()) / PI
}

pub fn bessel_i0(y: f64) -> f64 {
    bessel_i0_scaled(y) * y.abs().exp()
}

/// Scattering density `R(u → v; x)` for incident `u` (`n·u > 0`) and
/// emitted `v` (`n·v < 0`).
pub fn cl_kernel(u: Vec3, v: Vec3, bp: &BoundaryPoint, model: &WallModel) -> Result<f64> {
    let (rp, rt, tw) = match *model {
        WallModel::Diffuse => (1.0, 1.0, 1.0),
        WallModel::CercignaniLampis { r_perp, r_par, t_wall } => (r_perp, r_par, t_wall),
    };
    let n = bp.normal;
    let un = u.dot(n);
    let vn = v.dot(n);
    if un <= 0.0 {
        return Err(Error::WrongSide { v: u, normal_component: un });
    }
    incoming_side(bp, v)?;
    let u_par = u - n * un;
    let v_par = v - n * vn;
    let y = (1.0 - rp).sqrt() * vn * un / (tw * rp);
    let pre = 1.0 / (rp * rt * (2.0 - rt) * PI / 2.0) * vn.abs() / (2.0 * tw).powi(2);
    let expo = -((vn * vn + (1.0 - rp) * un * un) / rp + (v_par - u_par * (1.0 - rt)).norm_sq() / (rt * (2.0 - rt)))
        / (2.0 * tw);
    // I₀(y)e^{expo} = scaled(y)·e^{expo + |y|}
    Ok(pre * bessel_i0_scaled(y) * (expo + y.abs()).exp())
}

/// Counters of the wall samplers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub draws: u64,
    pub proposals: u64,
    pub accepted: u64,
    pub grazing_resamples: u64,
}

impl SamplerStats {
    pub fn acceptance(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Exact acceptance of the normal-speed rejection sampler for Rice
/// parameters `(a, σ)`.
pub fn cl_acceptance(a: f64, sigma: f64) -> f64 {
    sigma * sigma / (2.0 * sigma * sigma + a * sigma * (2.0 * PI).sqrt())
}

/// Normal speed `w > 0` with density `∝ w e^{−(w²+a²)/(2σ²)} I₀(aw/σ²)`,
/// drawn by rejection from the envelope `(|w − a| + a) e^{−(w−a)²/(2σ²)}`.
fn sample_rice<R: Rng + ?Sized>(rng: &mut R, a: f64, sigma: f64, stats: &mut SamplerStats) -> Result<f64> {
    let acc = cl_acceptance(a, sigma);
    if acc < MIN_ACCEPTANCE {
        return Err(Error::RejectionOverflow { acceptance: acc });
    }
    let p_ray = 2.0 * sigma * sigma / (2.0 * sigma * sigma + a * sigma * (2.0 * PI).sqrt());
    loop {
        stats.proposals += 1;
        let z = if rng.random::<f64>() < p_ray {
            let r = sigma * (-2.0 * (1.0 - rng.random::<f64>()).ln()).sqrt();
            if rng.random::<bool>() {
                r
            } else {
                -r
            }
        } else {
            sigma * rng.sample::<f64, _>(StandardNormal)
        };
        let w = a + z;
        if w <= 0.0 {
            continue;
        }
        let ratio = w * bessel_i0_scaled(a * w / (sigma * sigma)) / (z.abs() + a);
        if rng.random::<f64>() < ratio {
            stats.accepted += 1;
            return Ok(w);
        }
    }
}

fn gaussian_plane<R: Rng + ?Sized>(rng: &mut R, e1: Vec3, e2: Vec3, sd: f64) -> Vec3 {
    e1 * (sd * rng.sample::<f64, _>(StandardNormal)) + e2 * (sd * rng.sample::<f64, _>(StandardNormal))
}

/// Velocity drawn at the wall point `bp`.
///
/// `Diffuse` draws from `c_μ μ(v)(n·v)` on `n·v > 0`, the side sampled by the
/// backward diffuse cycles. `CercignaniLampis` draws the emitted velocity of
/// `R(u → ·)` for the incident `u` (`n·u > 0`), so the result has `n·v < 0`.
pub fn sample_outgoing<R: Rng + ?Sized>(
    rng: &mut R,
    bp: &BoundaryPoint,
    model: &WallModel,
    incoming: Option<Vec3>,
    stats: &mut SamplerStats,
) -> Result<Vec3> {
    let n = bp.normal;
    let (e1, e2) = n.orthonormal_pair();
    stats.draws += 1;
    match *model {
        WallModel::Diffuse => loop {
            let w = (-2.0 * (1.0 - rng.random::<f64>()).ln()).sqrt();
            if w < GRAZING {
                stats.grazing_resamples += 1;
                continue;
            }
            return Ok(n * w + gaussian_plane(rng, e1, e2, 1.0));
        },
        WallModel::CercignaniLampis { r_perp, r_par, t_wall } => {
            model.validate()?;
            let u = incoming.ok_or_else(|| Error::InvalidParameter("Cercignani-Lampis sampling needs the incident velocity".into()))?;
            let un = u.dot(n);
            if un <= 0.0 {
                return Err(Error::WrongSide { v: u, normal_component: un });
            }
            let a = (1.0 - r_perp).sqrt() * un;
            let sigma = (t_wall * r_perp).sqrt();
            let w = loop {
                let w = sample_rice(rng, a, sigma, stats)?;
                if w >= GRAZING {
                    break w;
                }
                stats.grazing_resamples += 1;
            };
            let mean = (u - n * un) * (1.0 - r_par);
            let sd = (t_wall * r_par * (2.0 - r_par)).sqrt();
            Ok(n * (-w) + mean + gaussian_plane(rng, e1, e2, sd))
        }
    }
}

#[cfg(test)]
mod tests;
