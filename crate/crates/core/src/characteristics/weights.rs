use super::{Integrator, PhaseState, PotentialField};
use crate::error::{Error, Result};
use crate::geometry::LevelSetDomain;
use crate::math::{fit_slope, Vec3};
use serde::{Deserialize, Serialize};

/// Cubic smoothstep: 0 for `τ ≤ 0`, 1 for `τ ≥ 1`, slope at most 3/2.
#[inline]
pub fn chi(tau: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else if tau >= 1.0 {
        1.0
    } else {
        tau * tau * (3.0 - 2.0 * tau)
    }
}

#[inline]
pub fn chi_prime(tau: f64) -> f64 {
    if tau <= 0.0 || tau >= 1.0 {
        0.0
    } else {
        6.0 * tau * (1.0 - tau)
    }
}

/// Plateau value `C_ε = 3ε/8`.
#[inline]
pub fn c_eps(eps: f64) -> f64 {
    0.375 * eps
}

/// `s` below `ε/4`, `C_ε` above `ε/2`, and `s − (s − ε/4)²/(ε/2)` between.
#[inline]
pub fn chi_eps(s: f64, eps: f64) -> f64 {
    let q = 0.25 * eps;
    if s <= q {
        s
    } else if s >= 0.5 * eps {
        c_eps(eps)
    } else {
        s - (s - q) * (s - q) / (0.5 * eps)
    }
}

#[inline]
pub fn chi_eps_prime(s: f64, eps: f64) -> f64 {
    let q = 0.25 * eps;
    if s <= q {
        1.0
    } else if s >= 0.5 * eps {
        0.0
    } else {
        1.0 - (s - q) / q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    /// ε of the exit-time weight.
    pub epsilon: f64,
    /// Collar width δ.
    pub delta: f64,
    /// `δ' = min{|ξ(x)| : d(x, ∂Ω) = δ}`
    pub delta_prime: f64,
}

impl WeightParams {
    /// `2⁻⁷` times the unit-speed crossing time of the bounding box.
    pub fn default_epsilon(domain: &LevelSetDomain) -> f64 {
        let e = domain.bounding_box.max - domain.bounding_box.min;
        e[0].max(e[1]).max(e[2]) / 128.0
    }

    pub fn for_domain(domain: &LevelSetDomain, epsilon: Option<f64>) -> Result<Self> {
        let epsilon = epsilon.unwrap_or_else(|| Self::default_epsilon(domain));
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon = {epsilon} must be positive")));
        }
        let delta = domain.delta_shell;
        Ok(WeightParams {
            epsilon,
            delta,
            delta_prime: domain.delta_prime(delta)?,
        })
    }
}

/// Exit-time weight `χ(τ)|n(x_b)·v_b| + 1 − χ(τ)` with `τ = (t − t_b + ε)/ε`.
pub fn kinetic_weight_alpha(
    integ: &Integrator,
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    state: &PhaseState,
    params: &WeightParams,
) -> Result<f64> {
    let eps = params.epsilon;
    // t_b ≥ t + ε puts τ ≤ 0
    let cap = state.t + eps;
    if cap <= 0.0 {
        return Ok(1.0);
    }
    let rec = integ.backward_exit_capped(domain, field, state, cap)?;
    if !rec.bounced {
        return Ok(1.0);
    }
    let c = chi((state.t - rec.t_b + eps) / eps);
    if c == 0.0 {
        return Ok(1.0);
    }
    let n = domain.normal_at(rec.x_b)?;
    Ok(c * n.dot(rec.v_b).abs() + (1.0 - c))
}

/// Radicand of β with the closest boundary point `x̄` supplied; the force on
/// species ι is `−ι∇φ`, so the field term carries the factor ι.
pub fn beta_squared(domain: &LevelSetDomain, field: &dyn PotentialField, state: &PhaseState, xbar: Vec3) -> f64 {
    let x = state.x;
    let v = state.v;
    let xi = domain.xi(x);
    let g = domain.grad_xi(x);
    let hv = domain.hess_xi(x).form(v, v);
    let force = field.grad_phi(state.t, xbar).dot(domain.grad_xi(xbar)) * state.iota.sign();
    v.dot(g).powi(2) + xi * xi - 2.0 * hv * xi + 2.0 * force * xi
}

/// Closest boundary point and distance, or `None` outside the collar.
fn collar_projection(domain: &LevelSetDomain, x: Vec3, delta: f64) -> Result<Option<Vec3>> {
    if let Ok((bp, d)) = domain.project_closest(x) {
        if d < delta {
            return Ok(Some(bp.position));
        }
    }
    match domain.closest_boundary_point(x) {
        Ok((bp, d)) if d < delta => Ok(Some(bp.position)),
        Ok(_) | Err(Error::AmbiguousProjection { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Position-dependent data of `α̃` at a fixed `(t, x, ι)`, so that the weight
/// can be evaluated cheaply for many velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeAlphaFrame {
    pub x: Vec3,
    /// Closest boundary point when `x` lies in the collar.
    pub xbar: Option<Vec3>,
    pub xi: f64,
    pub grad: Vec3,
    pub hess: crate::math::Mat3,
    /// `ι ∇φ(t, x̄)·∇ξ(x̄)`
    pub force: f64,
    pub plateau: f64,
    pub delta_prime: f64,
}

impl TildeAlphaFrame {
    pub fn new(
        domain: &LevelSetDomain,
        field: &dyn PotentialField,
        t: f64,
        x: Vec3,
        iota: super::Species,
        params: &WeightParams,
    ) -> Result<Self> {
        if domain.xi(x) > domain.tol_boundary() {
            return Err(Error::OutsideDomain { point: x });
        }
        let xbar = collar_projection(domain, x, params.delta)?;
        let force = xbar.map_or(0.0, |b| field.grad_phi(t, b).dot(domain.grad_xi(b)) * iota.sign());
        Ok(TildeAlphaFrame {
            x,
            xbar,
            xi: domain.xi(x),
            grad: domain.grad_xi(x),
            hess: domain.hess_xi(x),
            force,
            plateau: c_eps(params.delta_prime),
            delta_prime: params.delta_prime,
        })
    }

    pub fn in_collar(&self) -> bool {
        self.xbar.is_some()
    }

    pub fn beta_squared(&self, v: Vec3) -> f64 {
        let xi = self.xi;
        v.dot(self.grad).powi(2) + xi * xi - 2.0 * self.hess.form(v, v) * xi + 2.0 * self.force * xi
    }

    pub fn eval(&self, v: Vec3) -> Result<f64> {
        if self.xbar.is_none() {
            return Ok(self.plateau);
        }
        let b2 = self.beta_squared(v);
        let scale = v.norm_sq() * self.grad.norm_sq() + 1.0;
        if b2 < -1e-12 * scale {
            return Err(Error::NegativeRadicand { value: b2, x: self.x, v });
        }
        Ok(chi_eps(b2.max(0.0).sqrt(), self.delta_prime))
    }
}

/// Level-set weight `χ_{δ'}(β)` in the collar, `C_{δ'}` elsewhere.
pub fn tilde_alpha(
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    state: &PhaseState,
    params: &WeightParams,
) -> Result<f64> {
    TildeAlphaFrame::new(domain, field, state.t, state.x, state.iota, params)?.eval(state.v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityLemmaReport {
    /// `e^{−C∫(|V|+1)} α̃(s)`
    pub lhs: f64,
    /// `α̃(t)`
    pub mid: f64,
    /// `e^{C∫(|V|+1)} α̃(s)`
    pub rhs: f64,
    pub ratio: f64,
    pub path_integral: f64,
    /// Smallest constant for which every sampled sub-segment `[s, τ]` passes.
    pub required_c: f64,
    pub pass: bool,
    pub samples: usize,
    /// The segment was cut short at ∂Ω.
    pub exited: bool,
}

/// Checks the two-sided exponential bound on `α̃` along the forward segment
/// from `state.t` to `state.t + duration` (or to the first boundary crossing).
#[allow(clippy::too_many_arguments)]
pub fn velocity_lemma_check(
    integ: &Integrator,
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    params: &WeightParams,
    state: &PhaseState,
    duration: f64,
    c: f64,
    sign_margin: f64,
) -> Result<VelocityLemmaReport> {
    if !(sign_margin > 0.0) {
        return Err(Error::SignConditionUnverified { margin: sign_margin });
    }
    let (samples, exited) = integ.trajectory(domain, field, state, state.t + duration)?;
    let weight = |p: &super::Sample| {
        tilde_alpha(
            domain,
            field,
            &PhaseState {
                t: p.s,
                x: p.x,
                v: p.v,
                iota: state.iota,
            },
            params,
        )
    };
    let a0 = weight(&samples[0])?;
    let mut integral = 0.0;
    let mut required = 0.0f64;
    let mut last = a0;
    for w in samples.windows(2) {
        integral += 0.5 * (w[1].s - w[0].s).abs() * (w[0].v.norm() + w[1].v.norm() + 2.0);
        last = weight(&w[1])?;
        if integral > 0.0 {
            required = required.max((last / a0).ln().abs() / integral);
        }
    }
    let grow = (c * integral).exp();
    Ok(VelocityLemmaReport {
        lhs: a0 / grow,
        mid: last,
        rhs: a0 * grow,
        ratio: last / a0,
        path_integral: integral,
        required_c: required,
        pass: required <= c,
        samples: samples.len(),
        exited,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub steps: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Richardson extrapolation `|2R(h) − R(2h)|` at the finest pair.
    pub extrapolated: f64,
    /// Fitted slope of `ln|R|` against `ln h`.
    pub order: f64,
}

/// Step ladder `10⁻² · 2⁻ᵏ`, `k = 0..6`.
pub fn default_ladder() -> Vec<f64> {
    (0..6).map(|k| 1e-2 * 0.5f64.powi(k)).collect()
}

/// Material derivative of α along the Vlasov operator by one-sided differences
/// `[α(t+h, x+hv, v−hι∇φ) − α(t, x, v)]/h` on a step ladder.
pub fn alpha_invariance_residual(
    integ: &Integrator,
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    state: &PhaseState,
    params: &WeightParams,
    ladder: &[f64],
) -> Result<InvarianceReport> {
    if ladder.len() < 2 {
        return Err(Error::InvalidParameter("step ladder needs at least two steps".into()));
    }
    let a0 = kinetic_weight_alpha(integ, domain, field, state, params)?;
    let accel = field.grad_phi(state.t, state.x) * (-state.iota.sign());
    let mut signed = Vec::with_capacity(ladder.len());
    for &h in ladder {
        let moved = PhaseState {
            t: state.t + h,
            x: state.x + state.v * h,
            v: state.v + accel * h,
            iota: state.iota,
        };
        let ah = kinetic_weight_alpha(integ, domain, field, &moved, params)?;
        signed.push((ah - a0) / h);
    }
    let residuals: Vec<f64> = signed.iter().map(|r| r.abs()).collect();
    let n = ladder.len();
    let extrapolated = if (ladder[n - 2] / ladder[n - 1] - 2.0).abs() < 1e-12 {
        (2.0 * signed[n - 1] - signed[n - 2]).abs()
    } else {
        residuals[n - 1]
    };
    let logs: Vec<(f64, f64)> = ladder
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| **r > 0.0)
        .map(|(h, r)| (h.ln(), r.ln()))
        .collect();
    let order = if logs.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = logs.into_iter().unzip();
        fit_slope(&x, &y)
    } else {
        f64::INFINITY
    };
    Ok(InvarianceReport {
        steps: ladder.to_vec(),
        residuals,
        extrapolated,
        order,
    })
}
