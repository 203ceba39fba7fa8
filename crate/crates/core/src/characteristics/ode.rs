use super::{PhaseState, PotentialField};
use crate::error::{Error, Result};
use crate::geometry::LevelSetDomain;
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// Backward exit data; `bounced` is false when the trajectory stayed inside
/// up to the cap, in which case `(x_b, v_b)` is the state at the cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub t_b: f64,
    pub x_b: Vec3,
    pub v_b: Vec3,
    pub bounced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: f64,
    pub x: Vec3,
    pub v: Vec3,
}

pub(crate) enum MarchEnd {
    Reached(Sample),
    Exited(Sample),
}

/// Adaptive Dormand–Prince 5(4) integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Integrator {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Cap on `t_b` for `backward_exit`.
    pub horizon: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Integrator {
            rtol: 1e-11,
            atol: 1e-12,
            h_max: 0.05,
            max_steps: 2_000_000,
            horizon: 1e3,
        }
    }
}

type Y = [Vec3; 2];

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

impl Integrator {
    #[inline]
    fn rhs(field: &dyn PotentialField, sign: f64, tau: f64, y: &Y) -> Y {
        [y[1], field.grad_phi(tau, y[0]) * (-sign)]
    }

    /// One Dormand–Prince step; returns the fifth-order state and the scaled error.
    fn dp_step(&self, field: &dyn PotentialField, sign: f64, tau: f64, y: &Y, dt: f64) -> (Y, f64) {
        let mut k = [[Vec3::ZERO; 2]; 7];
        k[0] = Self::rhs(field, sign, tau, y);
        for i in 1..7 {
            let mut yi = *y;
            for (j, kj) in k.iter().enumerate().take(i) {
                let a = A[i][j] * dt;
                if a != 0.0 {
                    yi[0] += kj[0] * a;
                    yi[1] += kj[1] * a;
                }
            }
            k[i] = Self::rhs(field, sign, tau + C[i] * dt, &yi);
        }
        let mut y5 = *y;
        let mut e = [Vec3::ZERO; 2];
        for i in 0..7 {
            y5[0] += k[i][0] * (B5[i] * dt);
            y5[1] += k[i][1] * (B5[i] * dt);
            e[0] += k[i][0] * ((B5[i] - B4[i]) * dt);
            e[1] += k[i][1] * ((B5[i] - B4[i]) * dt);
        }
        let mut err = 0.0f64;
        for c in 0..2 {
            for a in 0..3 {
                let sc = self.atol + self.rtol * y[c][a].abs().max(y5[c][a].abs());
                err = err.max(e[c][a].abs() / sc);
            }
        }
        (y5, err)
    }

    /// Integrates from `state.t` to `target`. With a domain, stops at the first
    /// crossing of `∂Ω`, located by bisection on `ξ`.
    pub(crate) fn march(
        &self,
        domain: Option<&LevelSetDomain>,
        field: &dyn PotentialField,
        state: &PhaseState,
        target: f64,
        mut visit: impl FnMut(&Sample),
    ) -> Result<MarchEnd> {
        let sign = state.iota.sign();
        let mut tau = state.t;
        let mut y: Y = [state.x, state.v];
        let dir = if target >= tau { 1.0 } else { -1.0 };
        let mut h = 0.1 * self.h_max;
        let mut steps = 0;
        loop {
            let remaining = (target - tau).abs();
            if remaining <= 1e-14 * tau.abs().max(1.0) {
                return Ok(MarchEnd::Reached(Sample { s: tau, x: y[0], v: y[1] }));
            }
            if steps >= self.max_steps {
                return Err(Error::SolverDivergence {
                    iterations: steps,
                    residual: remaining,
                });
            }
            steps += 1;
            h = h.min(self.h_max);
            let last = h >= remaining;
            let dt = dir * if last { remaining } else { h };
            let (y1, err) = self.dp_step(field, sign, tau, &y, dt);
            if !(err <= 1.0) {
                h = h * if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
                if h < 1e-14 {
                    return Err(Error::SolverDivergence {
                        iterations: steps,
                        residual: err,
                    });
                }
                continue;
            }
            if let Some(d) = domain {
                if let Some(exit) = self.find_crossing(d, field, sign, tau, &y, dt, &y1) {
                    return Ok(MarchEnd::Exited(exit));
                }
            }
            tau = if last { target } else { tau + dt };
            y = y1;
            visit(&Sample { s: tau, x: y[0], v: y[1] });
            h *= if err > 0.0 { (0.9 * err.powf(-0.2)).min(5.0) } else { 5.0 };
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn find_crossing(
        &self,
        d: &LevelSetDomain,
        field: &dyn PotentialField,
        sign: f64,
        tau: f64,
        y0: &Y,
        dt: f64,
        y1: &Y,
    ) -> Option<Sample> {
        let xi0 = d.xi(y0[0]).min(0.0);
        let xi1 = d.xi(y1[0]);
        let reach = y0[1].norm().max(y1[1].norm()) * dt.abs();
        let grad = d.grad_xi(y0[0]).norm().max(d.grad_xi(y1[0]).norm());
        let fractions: &[f64] = if xi0.max(xi1) + 2.0 * grad * reach + d.hess_xi(y0[0]).max_abs() * reach * reach < 0.0 {
            &[1.0]
        } else {
            &[0.25, 0.5, 0.75, 1.0]
        };
        let at = |th: f64| -> Y {
            if th == 1.0 {
                *y1
            } else {
                self.dp_step(field, sign, tau, y0, th * dt).0
            }
        };
        let mut lo = 0.0;
        for &th in fractions {
            let p = at(th);
            if d.xi(p[0]) > 0.0 {
                let mut hi = th;
                let tol = 1e-12 * d.diam();
                let speed = y0[1].norm().max(p[1].norm()) + 1e-300;
                for _ in 0..200 {
                    if (hi - lo) * dt.abs() * speed <= tol {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if d.xi(at(mid)[0]) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let th = 0.5 * (lo + hi);
                let q = at(th);
                return Some(Sample {
                    s: tau + th * dt,
                    x: q[0],
                    v: q[1],
                });
            }
            lo = th;
        }
        None
    }

    /// `(X(s), V(s))` ignoring the domain.
    pub fn integrate_free(&self, field: &dyn PotentialField, state: &PhaseState, s: f64) -> Result<(Vec3, Vec3)> {
        match self.march(None, field, state, s, |_| {})? {
            MarchEnd::Reached(p) | MarchEnd::Exited(p) => Ok((p.x, p.v)),
        }
    }

    /// `(X(s), V(s))`; `LeftDomain` if the trajectory crosses `∂Ω` first.
    pub fn integrate(
        &self,
        domain: &LevelSetDomain,
        field: &dyn PotentialField,
        state: &PhaseState,
        s: f64,
    ) -> Result<(Vec3, Vec3)> {
        match self.march(Some(domain), field, state, s, |_| {})? {
            MarchEnd::Reached(p) => Ok((p.x, p.v)),
            MarchEnd::Exited(p) => Err(Error::LeftDomain { s: p.s }),
        }
    }

    /// Accepted steps from `state.t` to `s`, truncated at a boundary crossing.
    /// The first sample is the initial state and the last is the end point.
    pub fn trajectory(
        &self,
        domain: &LevelSetDomain,
        field: &dyn PotentialField,
        state: &PhaseState,
        s: f64,
    ) -> Result<(Vec<Sample>, bool)> {
        let mut out = vec![Sample {
            s: state.t,
            x: state.x,
            v: state.v,
        }];
        let end = self.march(Some(domain), field, state, s, |p| out.push(*p))?;
        Ok(match end {
            MarchEnd::Reached(_) => (out, false),
            MarchEnd::Exited(p) => {
                out.push(p);
                (out, true)
            }
        })
    }

    /// Exit data, or `HorizonExceeded` if no crossing within `horizon`.
    pub fn backward_exit(
        &self,
        domain: &LevelSetDomain,
        field: &dyn PotentialField,
        state: &PhaseState,
    ) -> Result<ExitRecord> {
        let r = self.backward_exit_capped(domain, field, state, self.horizon)?;
        if !r.bounced {
            return Err(Error::HorizonExceeded { horizon: self.horizon });
        }
        Ok(r)
    }

    /// Exit data with the search limited to `t_b ≤ cap`.
    pub fn backward_exit_capped(
        &self,
        domain: &LevelSetDomain,
        field: &dyn PotentialField,
        state: &PhaseState,
        cap: f64,
    ) -> Result<ExitRecord> {
        let x = state.x;
        let v = state.v;
        let xi = domain.xi(x);
        if xi > domain.tol_boundary() {
            return Err(Error::OutsideDomain { point: x });
        }
        let on_boundary = xi.abs() <= domain.tol_boundary();
        if on_boundary {
            if let Ok(n) = domain.normal_at(x) {
                // backward motion x − εv leaves Ω at once when n·v < 0
                if n.dot(v) < 0.0 {
                    return Ok(ExitRecord {
                        t_b: 0.0,
                        x_b: x,
                        v_b: v,
                        bounced: true,
                    });
                }
            }
        }
        if field.is_zero() {
            let speed = v.norm();
            if speed == 0.0 {
                return Ok(ExitRecord {
                    t_b: cap,
                    x_b: x,
                    v_b: v,
                    bounced: false,
                });
            }
            let dir = -(v / speed);
            let s = domain.ray_exit(x, dir)?;
            let t_b = s / speed;
            return Ok(if t_b <= cap {
                ExitRecord {
                    t_b,
                    x_b: x + dir * s,
                    v_b: v,
                    bounced: true,
                }
            } else {
                ExitRecord {
                    t_b: cap,
                    x_b: x - v * cap,
                    v_b: v,
                    bounced: false,
                }
            });
        }
        let start = if on_boundary && xi > 0.0 {
            PhaseState { x: x - domain.grad_xi(x) * (2.0 * xi / domain.grad_xi(x).norm_sq()), ..*state }
        } else {
            *state
        };
        match self.march(Some(domain), field, &start, state.t - cap, |_| {})? {
            MarchEnd::Exited(p) => Ok(ExitRecord {
                t_b: state.t - p.s,
                x_b: p.x,
                v_b: p.v,
                bounced: true,
            }),
            MarchEnd::Reached(p) => Ok(ExitRecord {
                t_b: cap,
                x_b: p.x,
                v_b: p.v,
                bounced: false,
            }),
        }
    }
}
