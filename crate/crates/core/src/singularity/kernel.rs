use super::{dyadic_panels, dyadic_side, increment_growth};
use crate::characteristics::{tilde_alpha, Integrator, PhaseState, PotentialField, Species, TildeAlphaFrame, WeightParams};
use crate::error::{Error, Result};
use crate::geometry::LevelSetDomain;
use crate::math::{Rule1d, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Field constants entering the bounds: `‖E‖_∞` and the sign margin `C_E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldBounds {
    pub e_sup: f64,
    pub c_e: f64,
}

/// Resolution of the velocity integrals of `α̃^{−β}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelQuad {
    pub order: usize,
    pub radial_levels: usize,
    pub azimuths: usize,
    /// Cap on dyadic refinement toward the ridge `u·∇ξ = 0`.
    pub max_levels: usize,
    /// Finest panel relative to the ridge width.
    pub ridge_fraction: f64,
    pub tangential_panels: usize,
    /// Half-width of the velocity box for Gaussian weights `e^{−|v|²/8}`.
    pub cutoff: f64,
    pub time_order: usize,
    pub time_levels: usize,
}

impl Default for KernelQuad {
    fn default() -> Self {
        KernelQuad {
            order: 6,
            radial_levels: 6,
            azimuths: 16,
            max_levels: 48,
            ridge_fraction: 0.05,
            tangential_panels: 8,
            cutoff: 18.0,
            time_order: 6,
            time_levels: 6,
        }
    }
}

impl KernelQuad {
    pub fn coarse() -> Self {
        KernelQuad {
            order: 4,
            radial_levels: 4,
            azimuths: 8,
            max_levels: 40,
            ridge_fraction: 0.1,
            tangential_panels: 4,
            cutoff: 16.0,
            time_order: 4,
            time_levels: 4,
        }
    }

    fn levels_for(&self, span: f64, width: f64) -> usize {
        if !(width > 0.0) {
            return self.max_levels;
        }
        ((span / (self.ridge_fraction * width)).log2().ceil().max(0.0) as usize).min(self.max_levels)
    }
}

/// Smallest value of `β` along the ridge, `√(ξ² + 2ι(∇φ·∇ξ)ξ)`.
fn ridge_width(frame: &TildeAlphaFrame) -> f64 {
    (frame.xi * frame.xi + 2.0 * frame.force * frame.xi).max(frame.xi * frame.xi).sqrt()
}

fn axis_of(frame: &TildeAlphaFrame) -> Vec3 {
    frame.grad.normalized().unwrap_or(Vec3::unit(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub value: f64,
    /// `((|V|² + C_E)|ξ(X)|)^{−(β−1)/2}`
    pub bound: f64,
    pub ratio: f64,
    pub xi: f64,
    pub in_collar: bool,
}

fn check_exponents(beta: f64, kappa: f64) -> Result<()> {
    if !(beta > 1.0 && beta < 3.0) {
        return Err(Error::InvalidParameter(format!("beta = {beta} must lie in (1, 3)")));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidParameter(format!("kappa = {kappa} must lie in (0, 1]")));
    }
    Ok(())
}

/// `∫ e^{−C_ϑ|V−u|²} |V−u|^{−(2−κ)} α̃(s, X, u)^{−β} du` in spherical
/// coordinates about `V`, refined toward the ridge `u·∇ξ(X) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn kernel_velocity_integral(
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    s: f64,
    x: Vec3,
    v: Vec3,
    iota: Species,
    beta: f64,
    kappa: f64,
    c_theta: f64,
    bounds: &FieldBounds,
    params: &WeightParams,
    quad: &KernelQuad,
) -> Result<KernelReport> {
    check_exponents(beta, kappa)?;
    if !(c_theta > 0.0) {
        return Err(Error::InvalidParameter(format!("C_theta = {c_theta} must be positive")));
    }
    let frame = TildeAlphaFrame::new(domain, field, s, x, iota, params)?;
    let value = riesz_integral(&frame, v, beta, kappa, c_theta, quad)?;
    let bound = ((v.norm_sq() + bounds.c_e) * frame.xi.abs()).powf(-(beta - 1.0) / 2.0);
    Ok(KernelReport {
        value,
        bound,
        ratio: value / bound,
        xi: frame.xi,
        in_collar: frame.in_collar(),
    })
}

fn riesz_integral(frame: &TildeAlphaFrame, v: Vec3, beta: f64, kappa: f64, c_theta: f64, quad: &KernelQuad) -> Result<f64> {
    let axis = axis_of(frame);
    let (e1, e2) = axis.orthonormal_pair();
    // dyadic toward ρ = 0 inside one Gaussian width, uniform beyond
    let w0 = 1.0 / c_theta.sqrt();
    let mut rp = dyadic_side(0.0, w0, quad.radial_levels);
    rp.extend((1..7).map(|k| (k as f64 * w0, (k + 1) as f64 * w0)));
    let radial = Rule1d::composite(&rp, quad.order);
    let vn = v.dot(axis);
    let width = ridge_width(frame);
    let dphi = 2.0 * PI / quad.azimuths as f64;
    radial
        .nodes
        .par_iter()
        .zip(&radial.weights)
        .map(|(&rho, &wr)| {
            let radial_weight = wr * rho.powf(kappa) * (-c_theta * rho * rho).exp();
            let panels = if frame.in_collar() {
                let focus = (-vn / rho).clamp(-1.0, 1.0);
                dyadic_panels(-1.0, 1.0, focus, quad.levels_for(1.0, width / rho))
            } else {
                vec![(-1.0, 1.0)]
            };
            let rc = Rule1d::composite(&panels, quad.order);
            let mut acc = 0.0;
            for (&c, &wc) in rc.nodes.iter().zip(&rc.weights) {
                let sn = (1.0 - c * c).max(0.0).sqrt();
                for k in 0..quad.azimuths {
                    let p = (k as f64 + 0.5) * dphi;
                    let u = v + (axis * c + e1 * (sn * p.cos()) + e2 * (sn * p.sin())) * rho;
                    acc += wc * dphi * frame.eval(u)?.powf(-beta);
                }
            }
            Ok(radial_weight * acc)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlocalReport {
    pub lhs: f64,
    /// The `δ^{(3−β)/2}` term.
    pub term1: f64,
    /// The `2/ϖ` term.
    pub term2: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Lower end `max{0, t − t_b}` of the time integral.
    pub s_lo: f64,
    pub alpha_tilde: f64,
}

/// Left side of the nonlocal-to-local estimate along the backward
/// characteristic of `state`, and its two-term right side without the
/// exponential prefactor.
#[allow(clippy::too_many_arguments)]
pub fn nonlocal_to_local(
    integ: &Integrator,
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    state: &PhaseState,
    beta: f64,
    kappa: f64,
    varpi: f64,
    c_theta: f64,
    delta: f64,
    bounds: &FieldBounds,
    params: &WeightParams,
    quad: &KernelQuad,
) -> Result<NonlocalReport> {
    check_exponents(beta, kappa)?;
    if !(bounds.c_e > 0.0) {
        return Err(Error::SignConditionUnverified { margin: bounds.c_e });
    }
    if !(varpi > 0.0 && delta > 0.0 && c_theta > 0.0) {
        return Err(Error::InvalidParameter("varpi, delta and C_theta must be positive".into()));
    }
    let t = state.t;
    let alpha_tilde = tilde_alpha(domain, field, state, params)?;
    let e2 = bounds.e_sup * bounds.e_sup + 1.0;
    let term1 = delta.powf((3.0 - beta) / 2.0)
        / (state.v.bracket().powi(2)
            * (bounds.c_e + 1.0).powf((beta - 1.0) / 2.0)
            * alpha_tilde.powf(beta - 2.0)
            * e2.powf((3.0 - beta) / 2.0));
    let term2 = e2.powf(beta - 1.0) / (bounds.c_e.powf(beta - 1.0) * delta.powf(beta - 1.0) * alpha_tilde.powf(beta - 1.0))
        * 2.0
        / varpi;
    let rhs = term1 + term2;

    let s_lo = if t > 0.0 {
        let rec = integ.backward_exit_capped(domain, field, state, t)?;
        if rec.bounced {
            t - rec.t_b
        } else {
            0.0
        }
    } else {
        t
    };
    if s_lo >= t {
        return Ok(NonlocalReport {
            lhs: 0.0,
            term1,
            term2,
            rhs,
            ratio: 0.0,
            s_lo: t,
            alpha_tilde,
        });
    }

    // cumulative ∫_s^t ⟨V⟩ dτ along the backward trajectory
    let (samples, _) = integ.trajectory(domain, field, state, s_lo)?;
    let mut cum = vec![0.0; samples.len()];
    for k in 1..samples.len() {
        let (a, b) = (&samples[k - 1], &samples[k]);
        cum[k] = cum[k - 1] + 0.5 * (a.s - b.s).abs() * (a.v.bracket() + b.v.bracket());
    }
    let bracket_integral = |s: f64| -> f64 {
        // samples run backward in time from t
        let k = samples.partition_point(|p| p.s > s);
        if k == 0 {
            return 0.0;
        }
        if k >= samples.len() {
            let last = samples.len() - 1;
            return cum[last] + (samples[last].s - s).max(0.0) * samples[last].v.bracket();
        }
        let (a, b) = (&samples[k - 1], &samples[k]);
        let w = if a.s == b.s { 0.0 } else { (a.s - s) / (a.s - b.s) };
        cum[k - 1] + w * (cum[k] - cum[k - 1])
    };

    let mid = 0.5 * (s_lo + t);
    let mut panels = dyadic_side(s_lo, mid - s_lo, quad.time_levels);
    panels.extend(dyadic_side(t, mid - t, quad.time_levels));
    let rule = Rule1d::composite(&panels, quad.time_order);
    let mut lhs = 0.0;
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let (xs, vs) = integ.integrate_free(field, state, s)?;
        let damp = (-0.5 * varpi * bracket_integral(s)).exp();
        let frame = TildeAlphaFrame::new(domain, field, s, xs, state.iota, params)?;
        lhs += w * damp * riesz_integral(&frame, vs, beta, kappa, 0.5 * c_theta, quad)?;
    }
    Ok(NonlocalReport {
        lhs,
        term1,
        term2,
        rhs,
        ratio: lhs / rhs,
        s_lo,
        alpha_tilde,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TildeMomentReport {
    /// `∫ e^{−|v|²/8} α̃^{−β} dv`
    pub value: f64,
    pub xi: f64,
    /// `value · |ξ(x)|^{(β−1)/2}`
    pub ratio: f64,
}

/// `∫ e^{−|v|²/8} α̃(t, x, v)^{−β} dv` in the frame of `∇ξ(x)`, refined
/// toward `v·∇ξ = 0`.
#[allow(clippy::too_many_arguments)]
pub fn tilde_alpha_moment(
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    t: f64,
    x: Vec3,
    iota: Species,
    beta: f64,
    params: &WeightParams,
    quad: &KernelQuad,
) -> Result<TildeMomentReport> {
    if !(beta >= 1.0) {
        return Err(Error::InvalidParameter(format!("beta = {beta} must be at least 1")));
    }
    let frame = TildeAlphaFrame::new(domain, field, t, x, iota, params)?;
    let axis = axis_of(&frame);
    let (e1, e2) = axis.orthonormal_pair();
    let l = quad.cutoff;
    let tp = 2 * quad.tangential_panels;
    let step = 2.0 * l / tp as f64;
    let tpanels: Vec<(f64, f64)> = (0..tp).map(|k| (-l + k as f64 * step, -l + (k + 1) as f64 * step)).collect();
    // the two panels touching v·∇ξ = 0 are refined toward it
    let levels = if frame.in_collar() { quad.levels_for(step, ridge_width(&frame)) } else { 0 };
    let mut npanels: Vec<(f64, f64)> = tpanels.iter().copied().filter(|p| p.0.abs() > 1e-12 * l && p.1.abs() > 1e-12 * l).collect();
    npanels.extend(dyadic_panels(-step, step, 0.0, levels));
    let normal = Rule1d::composite(&npanels, quad.order);
    let tang = Rule1d::composite(&tpanels, quad.order);
    let value: f64 = normal
        .nodes
        .par_iter()
        .zip(&normal.weights)
        .map(|(&a, &wa)| {
            let mut acc = 0.0;
            for (&b, &wb) in tang.nodes.iter().zip(&tang.weights) {
                for (&c, &wc) in tang.nodes.iter().zip(&tang.weights) {
                    let v = axis * a + e1 * b + e2 * c;
                    acc += wb * wc * (-v.norm_sq() / 8.0).exp() * frame.eval(v)?.powf(-beta);
                }
            }
            Ok(wa * acc)
        })
        .sum::<Result<f64>>()?;
    Ok(TildeMomentReport {
        value,
        xi: frame.xi,
        ratio: value * frame.xi.abs().powf((beta - 1.0) / 2.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpGrid {
    /// Ladder steps; step `k` refines the radial panels toward `∂Ω`.
    pub levels: usize,
    pub radial_order: usize,
    pub polar: usize,
    pub azimuths: usize,
    pub window: usize,
    pub growth_threshold: f64,
    pub quad: KernelQuad,
}

impl Default for LpGrid {
    fn default() -> Self {
        LpGrid {
            levels: 36,
            radial_order: 4,
            polar: 4,
            azimuths: 4,
            window: 4,
            growth_threshold: 0.0,
            quad: KernelQuad::coarse(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpMomentReport {
    /// `∫_Ω M(x)^p dx` on the ladder.
    pub ladder: Vec<f64>,
    pub increments: Vec<f64>,
    pub growth_slope: f64,
    pub divergent: bool,
    /// `‖M‖_{L^p}` at the finest level.
    pub norm: f64,
    /// Geometric-tail extrapolation of `‖M‖_{L^p}`, or `∞` when divergent.
    pub extrapolated_norm: f64,
}

/// `‖x ↦ ∫ e^{−|v|²/8} α̃^{−β} dv‖_{L^p(Ω)}` on a ladder refined toward
/// `∂Ω` along rays from the domain center.
#[allow(clippy::too_many_arguments)]
pub fn lp_moment_norm(
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    t: f64,
    iota: Species,
    beta: f64,
    p: f64,
    params: &WeightParams,
    grid: &LpGrid,
) -> Result<LpMomentReport> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must be at least 1")));
    }
    let center = domain.center;
    let rc = Rule1d::gauss(-1.0, 1.0, grid.polar);
    let mut rays = Vec::new();
    for (&c, &wc) in rc.nodes.iter().zip(&rc.weights) {
        for k in 0..grid.azimuths {
            let dp = 2.0 * PI / grid.azimuths as f64;
            let ph = (k as f64 + 0.5) * dp;
            let sn = (1.0 - c * c).sqrt();
            let w = Vec3::new(sn * ph.cos(), sn * ph.sin(), c);
            let s = domain.ray_exit(center, w)?;
            rays.push((w, s, wc * dp));
        }
    }
    let panel = |r0: f64, r1: f64| -> Result<f64> {
        let rr = Rule1d::gauss(r0, r1, grid.radial_order);
        let mut nodes = Vec::new();
        for &(w, s, ww) in &rays {
            for (&r, &wr) in rr.nodes.iter().zip(&rr.weights) {
                nodes.push((center + w * (r * s), ww * wr * s.powi(3) * r * r));
            }
        }
        nodes
            .par_iter()
            .map(|&(x, w)| {
                let m = tilde_alpha_moment(domain, field, t, x, iota, beta, params, &grid.quad)?;
                Ok(w * m.value.powf(p))
            })
            .sum()
    };
    let n = grid.levels;
    let mut shared = vec![0.0; n + 1];
    let mut inner = vec![0.0; n + 1];
    for j in 0..=n {
        let lo = 1.0 - 0.5f64.powi(j as i32);
        if j < n {
            shared[j] = panel(lo, 1.0 - 0.5f64.powi(j as i32 + 1))?;
        }
        inner[j] = panel(lo, 1.0)?;
    }
    let ladder: Vec<f64> = (0..=n).map(|k| shared[..k].iter().sum::<f64>() + inner[k]).collect();
    let (increments, growth_slope) = increment_growth(&ladder, grid.window);
    let divergent = growth_slope > grid.growth_threshold;
    let last = *ladder.last().unwrap();
    let extrapolated_norm = if divergent {
        f64::INFINITY
    } else {
        let k = increments.len();
        let q = if k >= 2 && increments[k - 2] > 0.0 { increments[k - 1] / increments[k - 2] } else { 0.0 };
        let tail = if q > 0.0 && q < 1.0 { increments[k - 1] * q / (1.0 - q) } else { 0.0 };
        (last + tail).powf(1.0 / p)
    };
    Ok(LpMomentReport {
        norm: last.powf(1.0 / p),
        ladder,
        increments,
        growth_slope,
        divergent,
        extrapolated_norm,
    })
}
