use super::mesh::SpatialMesh;
use super::FieldState;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    /// `max |D^k g(x) − D^k g(y)| / |x − y|^a` over the pair set.
    pub seminorm: f64,
    /// `sup |D^j g|` for `j = 0..=k`.
    pub sup_norms: Vec<f64>,
    /// Sum of the sup norms and the seminorm.
    pub norm: f64,
    pub pairs: usize,
}

/// Random far pairs added to the stencil pairs.
pub const RANDOM_PAIRS: usize = 10_000;

/// Derivatives of order `k` at every node whose centered stencil lies inside
/// Ω; components are flattened (1, 3 or 6 entries).
fn derivatives(mesh: &SpatialMesh, g: &[f64], k: usize) -> Vec<(usize, Vec<f64>)> {
    let h = mesh.h;
    let inside = |i: Option<usize>| i.filter(|&j| mesh.inside[j]);
    let mut out = Vec::new();
    'nodes: for &p in &mesh.inside_nodes {
        let val = |off: [i64; 3]| inside(mesh.offset(p, off)).map(|q| g[q]);
        let d = match k {
            0 => vec![g[p]],
            1 => {
                let mut d = Vec::with_capacity(3);
                for a in 0..3 {
                    let mut e = [0i64; 3];
                    e[a] = 1;
                    let (Some(r), Some(l)) = (val(e), val([-e[0], -e[1], -e[2]])) else {
                        continue 'nodes;
                    };
                    d.push((r - l) / (2.0 * h));
                }
                d
            }
            _ => {
                let mut d = Vec::with_capacity(6);
                for a in 0..3 {
                    for b in a..3 {
                        let mut ea = [0i64; 3];
                        let mut eb = [0i64; 3];
                        ea[a] = 1;
                        eb[b] = 1;
                        let v = if a == b {
                            let (Some(r), Some(l)) = (val(ea), val([-ea[0], -ea[1], -ea[2]])) else {
                                continue 'nodes;
                            };
                            (r - 2.0 * g[p] + l) / (h * h)
                        } else {
                            let s = |sa: i64, sb: i64| {
                                val([sa * ea[0] + sb * eb[0], sa * ea[1] + sb * eb[1], sa * ea[2] + sb * eb[2]])
                            };
                            let (Some(pp), Some(pm), Some(mp), Some(mm)) = (s(1, 1), s(1, -1), s(-1, 1), s(-1, -1))
                            else {
                                continue 'nodes;
                            };
                            (pp - pm - mp + mm) / (4.0 * h * h)
                        };
                        d.push(v);
                    }
                }
                d
            }
        };
        out.push((p, d));
    }
    out
}

/// Discrete `C^{k,a}` norm over stencil-neighbor pairs plus seeded random pairs.
pub fn holder_norm(mesh: &SpatialMesh, g: &[f64], a: f64, k: usize, seed: u64) -> Result<HolderReport> {
    if !(a > 0.0 && a <= 1.0) || k > 2 {
        return Err(Error::InvalidParameter(format!(
            "Hölder exponent {a} must lie in (0, 1] and order {k} in 0..=2"
        )));
    }
    if g.len() != mesh.len() {
        return Err(Error::IndexOutOfRange {
            index: g.len(),
            len: mesh.len(),
        });
    }
    let mut sup_norms = Vec::with_capacity(k + 1);
    let mut top = Vec::new();
    for j in 0..=k {
        let d = derivatives(mesh, g, j);
        sup_norms.push(d.iter().flat_map(|(_, v)| v.iter()).fold(0.0f64, |m, x| m.max(x.abs())));
        if j == k {
            top = d;
        }
    }
    let mut slot = vec![usize::MAX; mesh.len()];
    for (s, (p, _)) in top.iter().enumerate() {
        slot[*p] = s;
    }
    let diff = |s: usize, t: usize| -> f64 {
        let (p, dp) = &top[s];
        let (q, dq) = &top[t];
        let num = dp.iter().zip(dq).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        num / (mesh.node(*p) - mesh.node(*q)).norm().powf(a)
    };
    let mut semi = 0.0f64;
    let mut pairs = 0;
    let half_offsets: Vec<[i64; 3]> = (-1..=1)
        .flat_map(|i| (-1..=1).flat_map(move |j| (-1..=1).map(move |l| [i, j, l])))
        .filter(|o| *o > [0, 0, 0])
        .collect();
    for (s, (p, _)) in top.iter().enumerate() {
        for off in &half_offsets {
            if let Some(q) = mesh.offset(*p, *off) {
                if slot[q] != usize::MAX {
                    semi = semi.max(diff(s, slot[q]));
                    pairs += 1;
                }
            }
        }
    }
    if top.len() > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..RANDOM_PAIRS {
            let s = rng.random_range(0..top.len());
            let t = rng.random_range(0..top.len());
            if s != t {
                semi = semi.max(diff(s, t));
                pairs += 1;
            }
        }
    }
    Ok(HolderReport {
        seminorm: semi,
        norm: sup_norms.iter().sum::<f64>() + semi,
        sup_norms,
        pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub times: Vec<f64>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

/// Empirical constant of `sup|∇²φ| ≤ C (e^{D₁Λ₀t}‖φ‖_{C^{1,1−D₁}} + e^{−D₂Λ₀t}‖φ‖_{C^{2,D₂}})`.
pub fn interpolation_check(
    series: &[(f64, FieldState)],
    d1: f64,
    d2: f64,
    lambda0: f64,
    seed: u64,
) -> Result<InterpolationReport> {
    if !(d1 > 0.0 && d1 < 1.0 && d2 > 0.0 && d2 < 1.0 && lambda0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < D1, D2 < 1 and Lambda0 > 0 (got {d1}, {d2}, {lambda0})"
        )));
    }
    let mut times = Vec::with_capacity(series.len());
    let mut ratios = Vec::with_capacity(series.len());
    for (t, state) in series {
        let c1 = holder_norm(&state.mesh, &state.phi, 1.0 - d1, 1, seed)?;
        let c2 = holder_norm(&state.mesh, &state.phi, d2, 2, seed)?;
        let lhs = c2.sup_norms[2];
        let rhs = (d1 * lambda0 * t).exp() * c1.norm + (-d2 * lambda0 * t).exp() * c2.norm;
        times.push(*t);
        ratios.push(if lhs == 0.0 { 0.0 } else { lhs / rhs });
    }
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(InterpolationReport {
        times,
        ratios,
        max_ratio,
    })
}
