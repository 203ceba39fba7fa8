//! Numerical checks of the boundary singularity: α-moments on refinement
//! ladders, the exit-map Jacobian, velocity integrals of `α̃^{−β}` against a
//! Riesz–Gaussian kernel, and the nonlocal-to-local estimate.

mod kernel;

pub use kernel::{
    kernel_velocity_integral, lp_moment_norm, nonlocal_to_local, tilde_alpha_moment, FieldBounds, KernelQuad,
    KernelReport, LpGrid, LpMomentReport, NonlocalReport, TildeMomentReport,
};

use crate::characteristics::{kinetic_weight_alpha, Integrator, PhaseState, PotentialField, Species, WeightParams};
use crate::error::{Error, Result};
use crate::geometry::LevelSetDomain;
use crate::math::{fit_slope, Rule1d, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Panels of `[focus, focus + len]` (`len` may be negative) with breakpoints
/// `focus + len·2^{−j}`, `j = 0..=levels`; the innermost panel touches `focus`.
pub(crate) fn dyadic_side(focus: f64, len: f64, levels: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(levels + 1);
    for j in 0..levels {
        let a = focus + len * 0.5f64.powi(j as i32 + 1);
        let b = focus + len * 0.5f64.powi(j as i32);
        out.push(if a < b { (a, b) } else { (b, a) });
    }
    let a = focus;
    let b = focus + len * 0.5f64.powi(levels as i32);
    out.push(if a < b { (a, b) } else { (b, a) });
    out
}

/// Panels of `[a, b]` refined dyadically toward an interior or end point.
pub(crate) fn dyadic_panels(a: f64, b: f64, focus: f64, levels: usize) -> Vec<(f64, f64)> {
    let f = focus.clamp(a, b);
    let mut out = Vec::new();
    if f > a {
        out.extend(dyadic_side(f, a - f, levels));
    }
    if b > f {
        out.extend(dyadic_side(f, b - f, levels));
    }
    out
}

/// Growth exponent of the last increments of a ladder whose step `k`
/// halves the finest panel: `Δ_k ∝ 2^{k·slope}`.
pub(crate) fn increment_growth(ladder: &[f64], window: usize) -> (Vec<f64>, f64) {
    let inc: Vec<f64> = ladder.windows(2).map(|w| w[1] - w[0]).collect();
    let tail: Vec<(f64, f64)> = inc
        .iter()
        .enumerate()
        .skip(inc.len().saturating_sub(window))
        .filter(|(_, d)| **d > 0.0)
        .map(|(k, d)| (k as f64 * 2f64.ln(), d.ln()))
        .collect();
    let slope = if tail.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = tail.into_iter().unzip();
        fit_slope(&x, &y)
    } else {
        f64::NEG_INFINITY
    };
    (inc, slope)
}

/// Velocity quadrature of `α^{−a}` over `|v| ≤ v_max`, in spherical
/// coordinates whose polar axis is the normal at the nearest boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentGrid {
    pub v_max: f64,
    pub order: usize,
    /// Dyadic levels of the radial panels toward `|v| = 0`.
    pub radial_levels: usize,
    pub azimuths: usize,
    /// Ladder steps; step `k` refines the polar panels `k` times toward the
    /// grazing direction.
    pub levels: usize,
    /// Increments used for the growth fit.
    pub window: usize,
    /// Divergence is flagged when the increment growth exponent exceeds this.
    pub growth_threshold: f64,
}

impl Default for MomentGrid {
    fn default() -> Self {
        MomentGrid {
            v_max: 3.0,
            order: 8,
            radial_levels: 6,
            azimuths: 16,
            levels: 12,
            window: 4,
            growth_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub exponent: f64,
    /// Finest ladder value.
    pub value: f64,
    pub ladder: Vec<f64>,
    pub increments: Vec<f64>,
    /// Fitted `Δ_k ∝ 2^{k·slope}`.
    pub growth_slope: f64,
    pub divergent: bool,
}

/// Unit normal at the boundary point nearest to `x`, or `e₃` when `x` has no
/// unique nearest point.
fn polar_axis(domain: &LevelSetDomain, x: Vec3) -> Result<Vec3> {
    if domain.xi(x).abs() <= domain.tol_boundary() {
        return domain.normal_at(x);
    }
    match domain.closest_boundary_point(x) {
        Ok((bp, _)) => Ok(bp.normal),
        Err(Error::AmbiguousProjection { .. }) => Ok(Vec3::unit(2)),
        Err(e) => Err(e),
    }
}

/// `∫_{|v| ≤ v_max} α(t, x, v)^{−a} dv` on a refinement ladder.
#[allow(clippy::too_many_arguments)]
pub fn alpha_moment(
    integ: &Integrator,
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    t: f64,
    x: Vec3,
    iota: Species,
    a: f64,
    params: &WeightParams,
    grid: &MomentGrid,
) -> Result<MomentReport> {
    if !(a >= 0.0) {
        return Err(Error::InvalidParameter(format!("exponent a = {a} must be nonnegative")));
    }
    if domain.xi(x) > domain.tol_boundary() {
        return Err(Error::OutsideDomain { point: x });
    }
    if grid.levels < 2 {
        return Err(Error::InvalidParameter("moment ladder needs at least two levels".into()));
    }
    let n = polar_axis(domain, x)?;
    let (e1, e2) = n.orthonormal_pair();
    let radial = Rule1d::composite(&dyadic_side(0.0, grid.v_max, grid.radial_levels), grid.order);
    let dphi = 2.0 * PI / grid.azimuths as f64;

    // ∫ over a polar panel [c0, c1] of the full radial and azimuthal integral
    let panel = |c0: f64, c1: f64| -> Result<f64> {
        let rc = Rule1d::gauss(c0, c1, grid.order);
        let mut nodes = Vec::new();
        for (&c, &wc) in rc.nodes.iter().zip(&rc.weights) {
            for k in 0..grid.azimuths {
                let p = (k as f64 + 0.5) * dphi;
                let s = (1.0 - c * c).max(0.0).sqrt();
                let dir = n * c + e1 * (s * p.cos()) + e2 * (s * p.sin());
                for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
                    nodes.push((dir * r, wc * dphi * wr * r * r));
                }
            }
        }
        nodes
            .par_iter()
            .map(|&(v, w)| {
                let state = PhaseState { t, x, v, iota };
                let alpha = kinetic_weight_alpha(integ, domain, field, &state, params)?;
                Ok(if a == 0.0 { w } else { w * alpha.powf(-a) })
            })
            .sum()
    };

    // shared dyadic panels on both sides of c = 0, then one inner panel per level
    let mut shared = vec![0.0; grid.levels + 1];
    let mut inner = vec![0.0; grid.levels + 1];
    for j in 0..=grid.levels {
        if j < grid.levels {
            let (lo, hi) = (0.5f64.powi(j as i32 + 1), 0.5f64.powi(j as i32));
            shared[j] = panel(lo, hi)? + panel(-hi, -lo)?;
        }
        let w = 0.5f64.powi(j as i32);
        inner[j] = panel(0.0, w)? + panel(-w, 0.0)?;
    }
    let ladder: Vec<f64> = (0..=grid.levels).map(|k| shared[..k].iter().sum::<f64>() + inner[k]).collect();
    let (increments, growth_slope) = increment_growth(&ladder, grid.window);
    Ok(MomentReport {
        exponent: a,
        value: *ladder.last().unwrap(),
        divergent: growth_slope > grid.growth_threshold,
        ladder,
        increments,
        growth_slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianBin {
    pub t_lo: f64,
    pub t_hi: f64,
    pub c_lo: f64,
    pub c_hi: f64,
    pub hits: usize,
    /// Expected hits from `dv = (α/t_b³) dt_b dS(x_b)`.
    pub predicted: f64,
    pub ratio: f64,
    /// Mean of `|n(x_b)·v_b|` over the hits.
    pub mean_alpha: f64,
    /// Hits per unit `dt_b dS` measure of the bin.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub samples: usize,
    pub bins: Vec<JacobianBin>,
    pub median_ratio: f64,
    /// Standard deviation of the bin ratios.
    pub spread: f64,
}

/// Bins of the exit map `v ↦ (t_b, x_b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JacobianBins {
    pub v_max: f64,
    /// Geometric time bins on `[t₀, span·t₀]`, `t₀ = max|x − y|/v_max`.
    pub time_bins: usize,
    pub span: f64,
    /// Bins of the polar cosine of `x_b` about the domain center.
    pub polar_bins: usize,
    pub min_hits: usize,
}

impl Default for JacobianBins {
    fn default() -> Self {
        JacobianBins {
            v_max: 2.0,
            time_bins: 4,
            span: 4.0,
            polar_bins: 4,
            min_hits: 30,
        }
    }
}

/// Monte-Carlo pushforward of the uniform law on `|v| ≤ v_max` under the
/// backward exit map, compared bin by bin with `α/t_b³ dt_b dS(x_b)`.
#[allow(clippy::too_many_arguments)]
pub fn jacobian_check(
    integ: &Integrator,
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    t: f64,
    x: Vec3,
    n_samples: usize,
    seed: u64,
    bins: &JacobianBins,
) -> Result<JacobianReport> {
    if !domain.contains(x) {
        return Err(Error::OutsideDomain { point: x });
    }
    let center = domain.center;
    let surface = |c: f64, p: f64| -> Result<(Vec3, f64, Vec3)> {
        let s2 = (1.0 - c * c).max(0.0).sqrt();
        let w = Vec3::new(s2 * p.cos(), s2 * p.sin(), c);
        let s = domain.ray_exit(center, w)?;
        let y = center + w * s;
        let nrm = domain.normal_at(y)?;
        Ok((y, s * s / nrm.dot(w), nrm))
    };
    // t₀ from the farthest boundary point
    let probe = Rule1d::gauss(-1.0, 1.0, 24);
    let mut far = 0.0f64;
    for &c in &probe.nodes {
        for k in 0..48 {
            let (y, _, _) = surface(c, 2.0 * PI * k as f64 / 48.0)?;
            far = far.max((y - x).norm());
        }
    }
    let t0 = far * 1.0001 / bins.v_max;
    let nt = bins.time_bins;
    let nc = bins.polar_bins;
    let t_edges: Vec<f64> = (0..=nt).map(|k| t0 * bins.span.powf(k as f64 / nt as f64)).collect();
    let c_edges: Vec<f64> = (0..=nc).map(|k| -1.0 + 2.0 * k as f64 / nc as f64).collect();

    let chunks = 64usize;
    let per = n_samples.div_ceil(chunks);
    let partial: Vec<Result<(Vec<usize>, Vec<f64>)>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::math::split_seed(seed, k as u64));
            let mut hits = vec![0usize; nt * nc];
            let mut alpha = vec![0.0; nt * nc];
            let count = per.min(n_samples.saturating_sub(k * per));
            for _ in 0..count {
                let v = loop {
                    let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    if v.norm_sq() <= 1.0 {
                        break v * bins.v_max;
                    }
                };
                let rec = integ.backward_exit(domain, field, &PhaseState::new(t, x, v))?;
                let ti = t_edges.partition_point(|&e| e <= rec.t_b);
                if ti == 0 || ti > nt {
                    continue;
                }
                let dir = (rec.x_b - center).normalized().unwrap_or(Vec3::unit(2));
                let ci = (c_edges.partition_point(|&e| e <= dir[2]).max(1) - 1).min(nc - 1);
                let b = (ti - 1) * nc + ci;
                hits[b] += 1;
                alpha[b] += domain.normal_at(rec.x_b)?.dot(rec.v_b).abs();
            }
            Ok((hits, alpha))
        })
        .collect();
    let mut hits = vec![0usize; nt * nc];
    let mut alpha_sum = vec![0.0; nt * nc];
    for p in partial {
        let (h, a) = p?;
        for b in 0..nt * nc {
            hits[b] += h[b];
            alpha_sum[b] += a[b];
        }
    }

    let v_volume = 4.0 / 3.0 * PI * bins.v_max.powi(3);
    let azimuths = 48;
    let mut out = Vec::with_capacity(nt * nc);
    for ti in 0..nt {
        let rt = Rule1d::gauss(t_edges[ti], t_edges[ti + 1], 8);
        for ci in 0..nc {
            let b = ti * nc + ci;
            if hits[b] < bins.min_hits {
                return Err(Error::InsufficientStatistics { bin: b, hits: hits[b] });
            }
            let rc = Rule1d::gauss(c_edges[ci], c_edges[ci + 1], 8);
            let mut measure = 0.0;
            let mut weighted = 0.0;
            for (&c, &wc) in rc.nodes.iter().zip(&rc.weights) {
                for k in 0..azimuths {
                    let dp = 2.0 * PI / azimuths as f64;
                    let (y, ds, nrm) = surface(c, (k as f64 + 0.5) * dp)?;
                    let lever = nrm.dot(x - y).abs();
                    for (&tt, &wt) in rt.nodes.iter().zip(&rt.weights) {
                        let w = wc * dp * ds * wt;
                        measure += w;
                        weighted += w * (lever / tt) / tt.powi(3);
                    }
                }
            }
            let predicted = n_samples as f64 * weighted / v_volume;
            out.push(JacobianBin {
                t_lo: t_edges[ti],
                t_hi: t_edges[ti + 1],
                c_lo: c_edges[ci],
                c_hi: c_edges[ci + 1],
                hits: hits[b],
                predicted,
                ratio: hits[b] as f64 / predicted,
                mean_alpha: alpha_sum[b] / hits[b] as f64,
                density: hits[b] as f64 / measure,
            });
        }
    }
    let mut ratios: Vec<f64> = out.iter().map(|b| b.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let median_ratio = ratios[ratios.len() / 2];
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let spread = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / ratios.len() as f64).sqrt();
    Ok(JacobianReport {
        samples: n_samples,
        bins: out,
        median_ratio,
        spread,
    })
}

#[cfg(test)]
mod tests;
