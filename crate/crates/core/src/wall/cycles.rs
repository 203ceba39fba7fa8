use super::{c_mu, sample_outgoing, SamplerStats, WallModel};
use crate::characteristics::{Integrator, PhaseState, PotentialField};
use crate::collision::maxwellian;
use crate::error::{Error, Result};
use crate::geometry::{BoundaryPoint, LevelSetDomain};
use crate::math::{split_seed, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One stop `(t^l, x^l, v^l)` of a cycle with the arrival velocity
/// `v_b^{l−1}` (absent for `l = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounce {
    pub t: f64,
    pub x: Vec3,
    pub v: Vec3,
    pub v_b_prev: Option<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleEnd {
    /// The next backward exit time is negative.
    ReachedInitial,
    /// Stopped at the bounce cap.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffuseCycle {
    pub bounces: Vec<Bounce>,
    pub end: CycleEnd,
    pub stats: SamplerStats,
}

impl DiffuseCycle {
    /// Number of wall bounces `L`.
    pub fn len(&self) -> usize {
        self.bounces.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stochastic diffuse cycle from `start`, following backward characteristics
/// and drawing each new velocity from the diffuse wall law.
pub fn build_diffuse_cycle<R: rand::Rng + ?Sized>(
    integ: &Integrator,
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    start: &PhaseState,
    rng: &mut R,
    l_max: usize,
) -> Result<DiffuseCycle> {
    let mut bounces = vec![Bounce {
        t: start.t,
        x: start.x,
        v: start.v,
        v_b_prev: None,
    }];
    let mut stats = SamplerStats::default();
    let mut cur = *start;
    let end = loop {
        if bounces.len() > l_max {
            break CycleEnd::Truncated;
        }
        if cur.t <= 0.0 {
            break CycleEnd::ReachedInitial;
        }
        let rec = integ.backward_exit_capped(domain, field, &cur, cur.t)?;
        if !rec.bounced || rec.t_b >= cur.t {
            break CycleEnd::ReachedInitial;
        }
        let t_next = cur.t - rec.t_b;
        let x_next = domain.project_to_boundary(rec.x_b)?;
        let bp = BoundaryPoint {
            position: x_next,
            normal: domain.normal_at(x_next)?,
        };
        let v_next = sample_outgoing(rng, &bp, &WallModel::Diffuse, None, &mut stats)?;
        bounces.push(Bounce {
            t: t_next,
            x: x_next,
            v: v_next,
            v_b_prev: Some(rec.v_b),
        });
        cur = PhaseState {
            t: t_next,
            x: x_next,
            v: v_next,
            iota: start.iota,
        };
    };
    Ok(DiffuseCycle { bounces, end, stats })
}

/// `count` independent cycles; cycle `k` uses the stream `split_seed(seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn build_cycles(
    integ: &Integrator,
    domain: &LevelSetDomain,
    field: &dyn PotentialField,
    start: &PhaseState,
    seed: u64,
    count: usize,
    l_max: usize,
) -> Result<Vec<DiffuseCycle>> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, k as u64));
            build_diffuse_cycle(integ, domain, field, start, &mut rng, l_max)
        })
        .collect()
}

/// Fraction of cycles with a stop at index `l` and `t^l > 0`, for `l = 0..=l_max`.
pub fn survival_curve(cycles: &[DiffuseCycle], l_max: usize) -> Vec<f64> {
    let n = cycles.len().max(1) as f64;
    (0..=l_max)
        .map(|l| cycles.iter().filter(|c| c.bounces.get(l).is_some_and(|b| b.t > 0.0)).count() as f64 / n)
        .collect()
}

/// Density of `dΣ_i^{l−1}` at the sampled velocities, with `l − 1` the last
/// stop of the cycle:
/// `∏_{j=i+1}^{l−1} μ(v^j)c_μ|n·v^j| · e^{ϖ⟨v^i⟩t^i}μ^{1/4}(v^i)⟨v^i⟩ ·
/// ∏_{j=1}^{i−1} √μ(v_b^j)⟨v_b^j⟩μ^{1/4}(v^j)⟨v^j⟩e^{ϖ⟨v^j⟩t^j}`.
/// A cycle without bounces carries no sampled velocity and has weight 1.
pub fn cycle_measure_weight(domain: &LevelSetDomain, cycle: &DiffuseCycle, i: usize, varpi: f64) -> Result<f64> {
    let last = cycle.len();
    if i > last {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: last + 1,
        });
    }
    if last == 0 {
        return Ok(1.0);
    }
    let b = &cycle.bounces;
    let mut w = 1.0;
    for bj in &b[i + 1..=last] {
        let n = domain.normal_at(bj.x)?;
        w *= maxwellian(bj.v) * c_mu() * n.dot(bj.v).abs();
    }
    let bi = &b[i];
    w *= (varpi * bi.v.bracket() * bi.t).exp() * maxwellian(bi.v).powf(0.25) * bi.v.bracket();
    for j in 1..i {
        // v_b^j is the arrival velocity stored with stop j + 1
        let vb = b[j + 1].v_b_prev.unwrap_or(Vec3::ZERO);
        let vj = b[j].v;
        w *= maxwellian(vb).sqrt() * vb.bracket() * maxwellian(vj).powf(0.25) * vj.bracket() * (varpi * vj.bracket() * b[j].t).exp();
    }
    Ok(w)
}
