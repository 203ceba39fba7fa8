//! Boltzmann collision operator on a velocity lattice.
//!
//! Sphere integrals use a product rule aligned with the relative velocity
//! `g = v − u`: Gauss–Legendre in `cos θ = ĝ·ω` on each half of `[−1, 1]`
//! times uniform azimuths. Off-node values are interpolated trilinearly in
//! the ratio `F / M`, where `M` is the Maxwellian with the moments of `F`.

use crate::error::{Error, Result};
use crate::math::{Rule1d, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `(2π)^{-3/2}`
pub const MU0: f64 = 0.063_493_635_934_240_97;

/// Global Maxwellian `μ(v) = (2π)^{-3/2} e^{-|v|²/2}`.
#[inline]
pub fn maxwellian(v: Vec3) -> f64 {
    MU0 * (-0.5 * v.norm_sq()).exp()
}

#[inline]
pub fn sqrt_maxwellian(v: Vec3) -> f64 {
    MU0.sqrt() * (-0.25 * v.norm_sq()).exp()
}

/// Post-collision velocities `u' = u − [(u−v)·ω]ω`, `v' = v + [(u−v)·ω]ω`.
#[inline]
pub fn sigma_transform(u: Vec3, v: Vec3, omega: Vec3) -> (Vec3, Vec3) {
    let s = (u - v).dot(omega);
    (u - omega * s, v + omega * s)
}

/// Angular factor `q₀` of the kernel `|v−u|^κ q₀(ĝ·ω)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularKernel {
    /// `q₀(z) = |z|`
    HardSphere,
    /// `q₀(z) = value`
    Constant { value: f64 },
}

impl AngularKernel {
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            AngularKernel::HardSphere => z.abs(),
            AngularKernel::Constant { value } => value,
        }
    }

    /// `∫_{S²} q₀(ĝ·ω) dω`
    pub fn sphere_integral(&self) -> f64 {
        match *self {
            AngularKernel::HardSphere => 2.0 * PI,
            AngularKernel::Constant { value } => 4.0 * PI * value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionSpec {
    pub kappa: f64,
    pub angular: AngularKernel,
    pub v_max: f64,
    /// Lattice points per velocity axis.
    pub n_u: usize,
    /// Gauss nodes per half-interval of `cos θ`.
    pub n_omega: usize,
}

impl Default for CollisionSpec {
    fn default() -> Self {
        CollisionSpec {
            kappa: 1.0,
            angular: AngularKernel::HardSphere,
            v_max: 6.0,
            n_u: 12,
            n_omega: 3,
        }
    }
}

impl CollisionSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.kappa) {
            v.push(format!("collision.kappa = {} must lie in [0, 1]", self.kappa));
        }
        if let AngularKernel::Constant { value } = self.angular {
            if !(value >= 0.0) {
                v.push(format!("collision.angular value {value} must be nonnegative"));
            }
        }
        if !(self.v_max > 0.0) {
            v.push(format!("collision.v_max = {} must be positive", self.v_max));
        }
        if self.n_u < 2 {
            v.push(format!("collision.n_u = {} must be at least 2", self.n_u));
        }
        if self.n_omega < 2 {
            v.push(format!("collision.n_omega = {} must be at least 2", self.n_omega));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }
}

/// Cell-centered cubic lattice on `[−v_max, v_max]³`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    pub n: usize,
    pub h: f64,
    pub v_max: f64,
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(v_max: f64, n: usize) -> Self {
        let h = 2.0 * v_max / n as f64;
        let mut nodes = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    nodes.push(Vec3::new(
                        -v_max + (i as f64 + 0.5) * h,
                        -v_max + (j as f64 + 0.5) * h,
                        -v_max + (k as f64 + 0.5) * h,
                    ));
                }
            }
        }
        let weights = vec![h * h * h; nodes.len()];
        VelocityGrid {
            n,
            h,
            v_max,
            nodes,
            weights,
        }
    }

    /// Lattice restricted to the ball `|v| ≤ v_max` (zero weight outside).
    pub fn ball(v_max: f64, n: usize) -> Self {
        let mut g = Self::new(v_max, n);
        for (w, v) in g.weights.iter_mut().zip(&g.nodes) {
            if v.norm() > v_max {
                *w = 0.0;
            }
        }
        g
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn sample(&self, f: impl Fn(Vec3) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&v| f(v)).collect()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(f, w)| f * w).sum()
    }

    pub fn moment(&self, values: &[f64], phi: impl Fn(Vec3) -> f64) -> f64 {
        values
            .iter()
            .zip(&self.weights)
            .zip(&self.nodes)
            .map(|((f, w), &v)| f * w * phi(v))
            .sum()
    }

    /// Trilinear interpolation; outside the node hull the value is clamped to
    /// the nearest hull point and the flag is `false`.
    #[inline]
    pub fn trilinear(&self, values: &[f64], v: Vec3) -> (f64, bool) {
        let n = self.n;
        let inv = 1.0 / self.h;
        let top = (n - 1) as f64;
        let mut inside = true;
        let mut base = 0usize;
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = (v[a] + self.v_max) * inv - 0.5;
            let sc = if s < 0.0 {
                inside = false;
                0.0
            } else if s > top {
                inside = false;
                top
            } else {
                s
            };
            let b = (sc as usize).min(n - 2);
            frac[a] = sc - b as f64;
            base = base * n + b;
        }
        (corner_lerp(values, base, n, frac), inside)
    }
}

/// Trilinear blend of the cell with lower corner `base` at fractions `t`.
#[inline]
fn corner_lerp(values: &[f64], base: usize, n: usize, t: [f64; 3]) -> f64 {
    let (si, sj) = (n * n, n);
    let lerp = |lo: f64, hi: f64, x: f64| lo + x * (hi - lo);
    let c = &values[base..base + si + sj + 2];
    let c00 = lerp(c[0], c[1], t[2]);
    let c01 = lerp(c[sj], c[sj + 1], t[2]);
    let c10 = lerp(c[si], c[si + 1], t[2]);
    let c11 = lerp(c[si + sj], c[si + sj + 1], t[2]);
    lerp(lerp(c00, c01, t[1]), lerp(c10, c11, t[1]), t[0])
}

/// `ρ (2πT)^{-3/2} exp(−|v−U|²/(2T))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maxwellian {
    pub density: f64,
    pub mean: Vec3,
    pub temperature: f64,
}

impl Maxwellian {
    pub const GLOBAL: Maxwellian = Maxwellian {
        density: 1.0,
        mean: Vec3::ZERO,
        temperature: 1.0,
    };

    #[inline]
    pub fn eval(&self, v: Vec3) -> f64 {
        let t = self.temperature;
        self.density * (2.0 * PI * t).powf(-1.5) * (-(v - self.mean).norm_sq() / (2.0 * t)).exp()
    }

    /// Weighted least-squares fit of `ln F ≈ a + b·v − |v|²/(2T)` over the
    /// nodes with `F > 0`; recovers sampled Maxwellians exactly.
    pub fn fit_log(grid: &VelocityGrid, values: &[f64]) -> Option<Maxwellian> {
        let mut ata = vec![vec![0.0; 5]; 5];
        let mut atb = vec![0.0; 5];
        let mut count = 0;
        for ((&f, &w), &v) in values.iter().zip(&grid.weights).zip(&grid.nodes) {
            if !(f > 0.0) || w == 0.0 {
                continue;
            }
            count += 1;
            let row = [1.0, v[0], v[1], v[2], v.norm_sq()];
            let wt = f * w;
            let y = f.ln();
            for i in 0..5 {
                for j in 0..5 {
                    ata[i][j] += wt * row[i] * row[j];
                }
                atb[i] += wt * row[i] * y;
            }
        }
        if count < 5 {
            return None;
        }
        let x = crate::math::solve_dense(ata, atb)?;
        if !(x[4] < 0.0) {
            return None;
        }
        let t = -0.5 / x[4];
        let mean = Vec3::new(x[1], x[2], x[3]) * t;
        let log_amp = x[0] + mean.norm_sq() / (2.0 * t);
        let density = log_amp.exp() * (2.0 * PI * t).powf(1.5);
        let m = Maxwellian {
            density,
            mean,
            temperature: t,
        };
        (density.is_finite() && density > 0.0 && mean.is_finite()).then_some(m)
    }

    /// Maxwellian with the discrete mass, momentum and energy of `values`.
    pub fn fit(grid: &VelocityGrid, values: &[f64]) -> Option<Maxwellian> {
        let rho = grid.integrate(values);
        if !(rho > 0.0) {
            return None;
        }
        let mean = Vec3::new(
            grid.moment(values, |v| v[0]),
            grid.moment(values, |v| v[1]),
            grid.moment(values, |v| v[2]),
        ) / rho;
        let t = grid.moment(values, |v| (v - mean).norm_sq()) / (3.0 * rho);
        if !(t > 0.0) || !t.is_finite() || !mean.is_finite() {
            return None;
        }
        Some(Maxwellian {
            density: rho,
            mean,
            temperature: t,
        })
    }
}

/// Off-node evaluation of a lattice function.
#[derive(Debug, Clone)]
pub struct Interpolant {
    ratio: Vec<f64>,
    reference: Maxwellian,
    /// Values are `f` with `F = √μ f` rather than `F` itself.
    perturbation: bool,
}

impl Interpolant {
    pub fn density(grid: &VelocityGrid, values: &[f64]) -> Self {
        let reference = Maxwellian::fit_log(grid, values).unwrap_or(Maxwellian::GLOBAL);
        let ratio = values
            .iter()
            .zip(&grid.nodes)
            .map(|(f, &v)| f / reference.eval(v))
            .collect();
        Interpolant {
            ratio,
            reference,
            perturbation: false,
        }
    }

    pub fn perturbation(grid: &VelocityGrid, f: &[f64]) -> Self {
        let big: Vec<f64> = f
            .iter()
            .zip(&grid.nodes)
            .map(|(f, &v)| f * sqrt_maxwellian(v))
            .collect();
        let mut it = Self::density(grid, &big);
        it.perturbation = true;
        it
    }

    #[inline]
    pub fn eval(&self, grid: &VelocityGrid, v: Vec3) -> (f64, bool) {
        let (r, inside) = grid.trilinear(&self.ratio, v);
        let big = r * self.reference.eval(v);
        if self.perturbation {
            (big / sqrt_maxwellian(v), inside)
        } else {
            (big, inside)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QValue {
    pub gain: f64,
    pub loss: f64,
    /// Some post-collision velocity left the lattice hull.
    pub truncated: bool,
}

impl QValue {
    #[inline]
    pub fn value(&self) -> f64 {
        self.gain - self.loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Invariants {
    pub mass: f64,
    pub momentum: Vec3,
    pub energy: f64,
    pub truncated: bool,
}

impl Invariants {
    pub fn max_abs(&self) -> f64 {
        self.mass
            .abs()
            .max(self.momentum[0].abs())
            .max(self.momentum[1].abs())
            .max(self.momentum[2].abs())
            .max(self.energy.abs())
    }
}

#[derive(Debug, Clone)]
pub struct CollisionOperator {
    pub spec: CollisionSpec,
    pub grid: VelocityGrid,
    /// Upper-hemisphere `(cos θ, sin θ, w_θ Δφ (q₀(cos θ) + q₀(−cos θ)))`
    polar: Vec<(f64, f64, f64)>,
    azimuths: Vec<(f64, f64)>,
}

impl CollisionOperator {
    pub fn new(spec: CollisionSpec) -> Result<Self> {
        spec.validate()?;
        let grid = VelocityGrid::new(spec.v_max, spec.n_u);
        Ok(Self::with_grid(spec, grid))
    }

    pub fn with_grid(spec: CollisionSpec, grid: VelocityGrid) -> Self {
        let m = 2 * spec.n_omega;
        let dphi = 2.0 * PI / m as f64;
        let azimuths = (0..m)
            .map(|k| {
                let p = (k as f64 + 0.5) * dphi;
                (p.cos(), p.sin())
            })
            .collect();
        // ω and −ω give the same post-collision pair, and the Gauss rules on
        // [−1, 0] and [0, 1] with the azimuth shift φ → φ + π map one onto the
        // other, so the upper hemisphere carries the weight of both.
        let r = Rule1d::gauss(0.0, 1.0, spec.n_omega);
        let polar = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(&c, &wc)| {
                let q = spec.angular.eval(c) + spec.angular.eval(-c);
                (c, (1.0 - c * c).max(0.0).sqrt(), wc * dphi * q)
            })
            .collect();
        CollisionOperator {
            spec,
            grid,
            polar,
            azimuths,
        }
    }

    #[inline]
    fn speed_factor(&self, g: f64) -> f64 {
        if self.spec.kappa == 0.0 {
            1.0
        } else if self.spec.kappa == 1.0 {
            g
        } else {
            g.powf(self.spec.kappa)
        }
    }

    /// Calls `visit(u', v', weight)` for the ω-quadrature at fixed `(u, v)`;
    /// `weight` includes `|v−u|^κ q₀(ĝ·ω) dω`.
    #[inline]
    pub fn for_each_omega(&self, u: Vec3, v: Vec3, mut visit: impl FnMut(Vec3, Vec3, f64)) {
        let g = v - u;
        let gn = g.norm();
        let speed = self.speed_factor(gn);
        if gn == 0.0 {
            if speed != 0.0 {
                visit(u, v, speed * self.spec.angular.sphere_integral());
            }
            return;
        }
        let gh = g / gn;
        let (e1, e2) = gh.orthonormal_pair();
        for &(c, s, wc) in &self.polar {
            let w = wc * speed;
            if w == 0.0 {
                continue;
            }
            let axial = gh * c;
            let (t1, t2) = (e1 * s, e2 * s);
            for &(cp, sp) in &self.azimuths {
                let omega = axial + t1 * cp + t2 * sp;
                // (u − v)·ω = −|g| c
                let shift = omega * (gn * c);
                visit(u + shift, v - shift, w);
            }
        }
    }

    /// `∫ |v−u|^κ ∫q₀ dω F(u) du`, the loss frequency against `F`.
    pub fn loss_frequency(&self, values: &[f64], v: Vec3) -> f64 {
        let q = self.spec.angular.sphere_integral();
        let mut acc = 0.0;
        for ((&u, &w), &f) in self.grid.nodes.iter().zip(&self.grid.weights).zip(values) {
            if w != 0.0 && f != 0.0 {
                acc += w * f * self.speed_factor((v - u).norm());
            }
        }
        q * acc
    }

    /// `Q(F1, F2)(v)`.
    pub fn q_collide(&self, f1: &[f64], f2: &[f64], v: Vec3) -> Result<QValue> {
        self.check_len(f1)?;
        self.check_len(f2)?;
        let i1 = Interpolant::density(&self.grid, f1);
        let i2 = Interpolant::density(&self.grid, f2);
        Ok(self.q_with(&i1, &i2, f1, v))
    }

    fn q_with(&self, i1: &Interpolant, i2: &Interpolant, f1: &[f64], v: Vec3) -> QValue {
        let mut gain = 0.0;
        let mut inside = true;
        // a shared reference satisfies M(u')M(v') = M(u)M(v), so only the ratios vary with ω
        let shared = !i1.perturbation && !i2.perturbation && i1.reference == i2.reference;
        let mv = i1.reference.eval(v);
        for (&u, &wu) in self.grid.nodes.iter().zip(&self.grid.weights) {
            if wu == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            if shared {
                self.for_each_omega(u, v, |up, vp, w| {
                    let (a, ia) = self.grid.trilinear(&i1.ratio, up);
                    let (b, ib) = self.grid.trilinear(&i2.ratio, vp);
                    inside &= ia && ib;
                    acc += w * a * b;
                });
                acc *= i1.reference.eval(u) * mv;
            } else {
                self.for_each_omega(u, v, |up, vp, w| {
                    let (a, ia) = i1.eval(&self.grid, up);
                    let (b, ib) = i2.eval(&self.grid, vp);
                    inside &= ia && ib;
                    acc += w * a * b;
                });
            }
            gain += wu * acc;
        }
        let (f2v, iv) = i2.eval(&self.grid, v);
        QValue {
            gain,
            loss: f2v * self.loss_frequency(f1, v),
            truncated: !(inside && iv),
        }
    }

    /// `Q(F1, F2)` at every lattice node.
    pub fn q_collide_all(&self, f1: &[f64], f2: &[f64]) -> Result<Vec<QValue>> {
        self.check_len(f1)?;
        self.check_len(f2)?;
        let i1 = Interpolant::density(&self.grid, f1);
        let i2 = Interpolant::density(&self.grid, f2);
        Ok(self
            .grid
            .nodes
            .par_iter()
            .map(|&v| self.q_with(&i1, &i2, f1, v))
            .collect())
    }

    /// `∫ [1, v, (|v|²−3)/2] Q(G, G) dv`.
    pub fn collision_invariants(&self, g: &[f64]) -> Result<Invariants> {
        let q = self.q_collide_all(g, g)?;
        let vals: Vec<f64> = q.iter().map(QValue::value).collect();
        let grid = &self.grid;
        Ok(Invariants {
            mass: grid.integrate(&vals),
            momentum: Vec3::new(
                grid.moment(&vals, |v| v[0]),
                grid.moment(&vals, |v| v[1]),
                grid.moment(&vals, |v| v[2]),
            ),
            energy: grid.moment(&vals, |v| 0.5 * (v.norm_sq() - 3.0)),
            truncated: q.iter().any(|x| x.truncated),
        })
    }

    /// `ν(√μ f)(v) = ∫∫ |v−u|^κ q₀ √μ(u) f(u) dω du`.
    pub fn nu_multiplier(&self, f: &[f64], v: Vec3) -> Result<f64> {
        self.check_len(f)?;
        let q = self.spec.angular.sphere_integral();
        let mut acc = 0.0;
        for ((&u, &w), &fu) in self.grid.nodes.iter().zip(&self.grid.weights).zip(f) {
            if w != 0.0 && fu != 0.0 {
                acc += w * sqrt_maxwellian(u) * fu * self.speed_factor((v - u).norm());
            }
        }
        Ok(q * acc)
    }

    /// `Γ_gain(f1, f2)(v) = ∫∫ |v−u|^κ q₀ √μ(u) f1(u') f2(v') dω du`.
    pub fn gamma_gain(&self, f1: &[f64], f2: &[f64], v: Vec3) -> Result<(f64, bool)> {
        self.check_len(f1)?;
        self.check_len(f2)?;
        let i1 = Interpolant::perturbation(&self.grid, f1);
        let i2 = Interpolant::perturbation(&self.grid, f2);
        Ok(self.gamma_with(&i1, &i2, v))
    }

    pub(crate) fn gamma_with(&self, i1: &Interpolant, i2: &Interpolant, v: Vec3) -> (f64, bool) {
        let mut total = 0.0;
        let mut inside = true;
        for (&u, &wu) in self.grid.nodes.iter().zip(&self.grid.weights) {
            if wu == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            self.for_each_omega(u, v, |up, vp, w| {
                let (a, ia) = i1.eval(&self.grid, up);
                let (b, ib) = i2.eval(&self.grid, vp);
                inside &= ia && ib;
                acc += w * a * b;
            });
            total += wu * sqrt_maxwellian(u) * acc;
        }
        (total, !inside)
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.grid.len() {
            return Err(Error::IndexOutOfRange {
                index: f.len(),
                len: self.grid.len(),
            });
        }
        Ok(())
    }
}
