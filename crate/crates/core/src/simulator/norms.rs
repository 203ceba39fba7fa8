use super::transport::Link;
use super::{species_of, KineticDensity, SimState, Simulator};
use crate::characteristics::{
    chi_eps, kinetic_weight_alpha, MeshPotential, PhaseState, PotentialField, TildeAlphaFrame, ZeroField,
};
use crate::collision::VelocityGrid;
use crate::error::{Error, Result};
use crate::math::{fit_slope, split_seed, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// `max_i e^{ϑ|v_i|²} |f_i|` over all nodes of one species.
pub fn weighted_sup_norm(f: &[f64], grid: &VelocityGrid, vartheta: f64) -> f64 {
    let nv = grid.len();
    f.iter()
        .enumerate()
        .map(|(i, x)| (vartheta * grid.nodes[i % nv].norm_sq()).exp() * x.abs())
        .fold(0.0, f64::max)
}

/// `(Σ_x vol (Σ_v w |g|^{1+δ})^{3/(1+δ)})^{1/3}` for `g` laid out as cells × `n_v`.
pub fn mixed_norm_l3x_l1pdelta_v(g: &[f64], n_v: usize, cell_volume: f64, weights: &[f64], delta: f64) -> f64 {
    let q = 1.0 + delta;
    let total: f64 = g
        .chunks(n_v)
        .map(|cell| {
            let inner: f64 = cell.iter().zip(weights).map(|(x, w)| w * x.abs().powf(q)).sum();
            cell_volume * inner.powf(3.0 / q)
        })
        .sum();
    total.cbrt()
}

/// Phase-space `L^q` distance summed over species.
pub fn lp_distance(a: &KineticDensity, b: &KineticDensity, cell_volume: f64, weights: &[f64], q: f64) -> f64 {
    let nv = a.n_v;
    let mut total = 0.0;
    for (fa, fb) in a.f.iter().zip(&b.f) {
        for (i, (x, y)) in fa.iter().zip(fb).enumerate() {
            total += cell_volume * weights[i % nv] * (x - y).abs().powf(q);
        }
    }
    total.powf(1.0 / q)
}

/// Weight inside the Sobolev norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaWeight {
    /// Exit-time weight `α` of the current field.
    Kinetic,
    /// `α ≡ 1`
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// Least-squares slope of `ln d(t)` over the positive distances.
    pub log_slope: f64,
}

/// `α̃` with the radicand clamped at zero; fields that break the sign
/// condition can make it slightly negative.
fn alpha_tilde(frame: &TildeAlphaFrame, v: Vec3) -> f64 {
    match frame.eval(v) {
        Ok(a) => a,
        Err(_) => chi_eps(frame.beta_squared(v).max(0.0).sqrt(), frame.delta_prime),
    }
}

impl Simulator {
    fn field_of(&self, state: &SimState) -> Box<dyn PotentialField> {
        if state.field.grad.iter().all(|g| *g == Vec3::ZERO) {
            Box::new(ZeroField)
        } else {
            Box::new(MeshPotential(state.field.clone()))
        }
    }

    /// `∇_{x,v} f` per species and node as six components.
    fn gradients(&self, density: &KineticDensity) -> Vec<Vec<[f64; 6]>> {
        let nv = self.grid.len();
        let n = self.grid.n;
        let hx = self.cells.h;
        let hv = self.grid.h;
        density
            .f
            .iter()
            .map(|f| {
                (0..f.len())
                    .into_par_iter()
                    .map(|i| {
                        let (p, k) = (i / nv, i % nv);
                        let mut g = [0.0; 6];
                        let links = &self.cells.links[p];
                        for a in 0..3 {
                            let side = |slot: usize| match links[slot] {
                                Link::Cell(q) => Some(f[q * nv + k]),
                                Link::Wall(_) => None,
                            };
                            g[a] = match (side(2 * a), side(2 * a + 1)) {
                                (Some(l), Some(r)) => (r - l) / (2.0 * hx),
                                (None, Some(r)) => (r - f[i]) / hx,
                                (Some(l), None) => (f[i] - l) / hx,
                                (None, None) => 0.0,
                            };
                        }
                        let c = [k / (n * n), (k / n) % n, k % n];
                        let stride = [n * n, n, 1];
                        for b in 0..3 {
                            let base = p * nv;
                            let lo = (c[b] > 0).then(|| f[base + k - stride[b]]);
                            let hi = (c[b] + 1 < n).then(|| f[base + k + stride[b]]);
                            g[3 + b] = match (lo, hi) {
                                (Some(l), Some(r)) => (r - l) / (2.0 * hv),
                                (None, Some(r)) => (r - f[i]) / hv,
                                (Some(l), None) => (f[i] - l) / hv,
                                (None, None) => 0.0,
                            };
                        }
                        g
                    })
                    .collect()
            })
            .collect()
    }

    /// `|∇_v f|` per species, laid out as cells × `n_v`.
    pub fn velocity_gradient_magnitude(&self, density: &KineticDensity) -> Vec<Vec<f64>> {
        self.gradients(density)
            .into_iter()
            .map(|gs| gs.iter().map(|g| (g[3] * g[3] + g[4] * g[4] + g[5] * g[5]).sqrt()).collect())
            .collect()
    }

    /// `‖w_ϑ α^β ∇_{x,v} f‖_p` with centered differences.
    pub fn weighted_w1p_norm(
        &self,
        state: &SimState,
        beta: f64,
        p: f64,
        vartheta: f64,
        weight: AlphaWeight,
    ) -> Result<f64> {
        let nv = self.grid.len();
        let vol = self.cells.h.powi(3);
        let field = self.field_of(state);
        let domain = &self.mesh.domain;
        let grads = self.gradients(&state.density);
        let mut total = 0.0;
        for (s, gs) in grads.iter().enumerate() {
            let iota = species_of(s);
            let per_cell: Vec<f64> = (0..self.cells.len())
                .into_par_iter()
                .map(|c| {
                    let x = self.cells.centers[c];
                    let mut acc = 0.0;
                    for k in 0..nv {
                        let g = &gs[c * nv + k];
                        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm == 0.0 {
                            continue;
                        }
                        let v = self.grid.nodes[k];
                        let alpha = match weight {
                            AlphaWeight::Off => 1.0,
                            AlphaWeight::Kinetic => {
                                let ps = PhaseState {
                                    t: state.t,
                                    x,
                                    v,
                                    iota,
                                };
                                kinetic_weight_alpha(&self.integrator, domain, field.as_ref(), &ps, &self.params)?
                            }
                        };
                        let w = (vartheta * v.norm_sq()).exp() * alpha.powf(beta) * norm;
                        acc += vol * self.grid.weights[k] * w.powf(p);
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            total += per_cell.iter().sum::<f64>();
        }
        Ok(total.powf(1.0 / p))
    }

    /// `min (ν_ϖ − ϖ⟨v⟩/2)` over seeded samples of `(x, v, ι)` at the state's
    /// time, with the material derivative of `α̃` by central differences
    /// along the frozen-field characteristic.
    pub fn nu_varpi_margin(&self, state: &SimState, varpi: f64, samples: usize) -> Result<f64> {
        let nv = self.grid.len();
        let mesh_field = MeshPotential(state.field.clone());
        let domain = &self.mesh.domain;
        let h = state.density.deviation(&self.grid);
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed(self.scenario.seed, state.step as u64));
        let ds = 1e-6;
        let mut worst = f64::INFINITY;
        for _ in 0..samples {
            let s = rng.random_range(0..h.len());
            let c = rng.random_range(0..self.cells.len());
            let k = rng.random_range(0..nv);
            let iota = species_of(s);
            let x = self.cells.centers[c];
            let v = self.grid.nodes[k];
            let e = -state.field.grad[self.mesh.inside_nodes[c]];
            let a = e * iota.sign();
            let full: Vec<f64> = h[s][c * nv..(c + 1) * nv]
                .iter()
                .zip(&self.mu)
                .map(|(d, m)| d + m)
                .collect();
            let nu = self.collider.nu_of(&full, v);
            let frame = |x: Vec3| TildeAlphaFrame::new(domain, &mesh_field, state.t, x, iota, &self.params);
            let a0 = alpha_tilde(&frame(x)?, v);
            if !(a0 > 0.0) {
                continue;
            }
            let fwd = frame(x + v * ds).ok().map(|f| alpha_tilde(&f, v + a * ds));
            let bwd = frame(x - v * ds).ok().map(|f| alpha_tilde(&f, v - a * ds));
            let d_alpha = match (bwd, fwd) {
                (Some(b), Some(f)) => (f - b) / (2.0 * ds),
                (None, Some(f)) => (f - a0) / ds,
                (Some(b), None) => (a0 - b) / ds,
                (None, None) => 0.0,
            };
            let br = v.bracket();
            let nu_varpi = nu + 0.5 * v.dot(a) + varpi * br + state.t * varpi * v.dot(a) / br - d_alpha / a0;
            worst = worst.min(nu_varpi - 0.5 * varpi * br);
        }
        if !worst.is_finite() {
            return Err(Error::InvalidParameter("no admissible margin sample".into()));
        }
        Ok(worst)
    }

    /// Runs two data side by side and records their `L^{1+δ}` distance per step.
    pub fn twin_run_stability(
        &self,
        f0: KineticDensity,
        g0: KineticDensity,
        t_end: f64,
        dt: f64,
        delta: f64,
    ) -> Result<TwinReport> {
        let vol = self.cells.h.powi(3);
        let q = 1.0 + delta;
        let mut a = self.initialize_with(f0)?;
        let mut b = self.initialize_with(g0)?;
        let mut times = vec![0.0];
        let mut distances = vec![lp_distance(&a.density, &b.density, vol, &self.grid.weights, q)];
        while a.t < t_end - 1e-12 * t_end.max(1.0) {
            let d = dt.min(t_end - a.t);
            a = self.step(&a, d)?;
            b = self.step(&b, d)?;
            times.push(a.t);
            distances.push(lp_distance(&a.density, &b.density, vol, &self.grid.weights, q));
        }
        let (ts, ls): (Vec<f64>, Vec<f64>) = times
            .iter()
            .zip(&distances)
            .filter(|(_, d)| **d > 0.0)
            .map(|(t, d)| (*t, d.ln()))
            .unzip();
        let log_slope = if ts.len() >= 2 { fit_slope(&ts, &ls) } else { 0.0 };
        Ok(TwinReport {
            times,
            distances,
            log_slope,
        })
    }
}
