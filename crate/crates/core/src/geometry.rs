//! Level-set representation of bounded convex domains `Ω = {ξ < 0}`.
//!
//! The level-set function and its first two derivatives are analytic for every
//! shape. Boundary points are found by ray bisection or by Newton projection
//! along `∇ξ`; neither needs a surface mesh.

use crate::error::{Error, Result};
use crate::math::{Mat3, Rule1d, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Monomial `coef · x^i y^j z^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub coef: f64,
    pub powers: [u32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// `ξ = |x|² − r²`
    Ball { radius: f64 },
    /// `ξ = x²/a² + y²/b² + z²/c² − 1`
    Ellipsoid { a: f64, b: f64, c: f64 },
    /// `ξ = Σ coef · x^i y^j z^k`
    Polynomial { terms: Vec<PolyTerm> },
}

impl Shape {
    pub fn xi(&self, x: Vec3) -> f64 {
        match self {
            Shape::Ball { radius } => x.norm_sq() - radius * radius,
            Shape::Ellipsoid { a, b, c } => {
                (x[0] / a).powi(2) + (x[1] / b).powi(2) + (x[2] / c).powi(2) - 1.0
            }
            Shape::Polynomial { terms } => terms
                .iter()
                .map(|t| t.coef * mono(x[0], t.powers[0]) * mono(x[1], t.powers[1]) * mono(x[2], t.powers[2]))
                .sum(),
        }
    }

    pub fn grad(&self, x: Vec3) -> Vec3 {
        match self {
            Shape::Ball { .. } => x * 2.0,
            Shape::Ellipsoid { a, b, c } => {
                Vec3::new(2.0 * x[0] / (a * a), 2.0 * x[1] / (b * b), 2.0 * x[2] / (c * c))
            }
            Shape::Polynomial { terms } => {
                let mut g = Vec3::ZERO;
                for t in terms {
                    let p = t.powers;
                    let m = [mono(x[0], p[0]), mono(x[1], p[1]), mono(x[2], p[2])];
                    let d = [dmono(x[0], p[0]), dmono(x[1], p[1]), dmono(x[2], p[2])];
                    g += Vec3::new(d[0] * m[1] * m[2], m[0] * d[1] * m[2], m[0] * m[1] * d[2]) * t.coef;
                }
                g
            }
        }
    }

    pub fn hess(&self, x: Vec3) -> Mat3 {
        match self {
            Shape::Ball { .. } => Mat3::scaled(2.0),
            Shape::Ellipsoid { a, b, c } => {
                let mut m = Mat3::ZERO;
                m.0[0][0] = 2.0 / (a * a);
                m.0[1][1] = 2.0 / (b * b);
                m.0[2][2] = 2.0 / (c * c);
                m
            }
            Shape::Polynomial { terms } => {
                let mut h = Mat3::ZERO;
                for t in terms {
                    let p = t.powers;
                    let m = [mono(x[0], p[0]), mono(x[1], p[1]), mono(x[2], p[2])];
                    let d = [dmono(x[0], p[0]), dmono(x[1], p[1]), dmono(x[2], p[2])];
                    let dd = [ddmono(x[0], p[0]), ddmono(x[1], p[1]), ddmono(x[2], p[2])];
                    for i in 0..3 {
                        for j in 0..3 {
                            let mut prod = t.coef;
                            for k in 0..3 {
                                prod *= if i == j && k == i {
                                    dd[k]
                                } else if k == i || k == j {
                                    d[k]
                                } else {
                                    m[k]
                                };
                            }
                            h.0[i][j] += prod;
                        }
                    }
                }
                h
            }
        }
    }
}

#[inline]
fn mono(x: f64, p: u32) -> f64 {
    x.powi(p as i32)
}

#[inline]
fn dmono(x: f64, p: u32) -> f64 {
    if p == 0 {
        0.0
    } else {
        p as f64 * x.powi(p as i32 - 1)
    }
}

#[inline]
fn ddmono(x: f64, p: u32) -> f64 {
    if p < 2 {
        0.0
    } else {
        (p * (p - 1)) as f64 * x.powi(p as i32 - 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub position: Vec3,
    /// Outward unit normal `∇ξ/|∇ξ|`.
    pub normal: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    /// Smallest principal curvature of `∂Ω` over the sample.
    pub min_margin: f64,
    pub witness_point: Vec3,
    pub witness_direction: Vec3,
    pub samples: usize,
    /// `min_margin >= convexity_constant`
    pub conforms: bool,
}

/// Absolute gradient floor below which normals are undefined.
pub const EPS_GRAD: f64 = 1e-12;
const MAX_PROJECTION_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetDomain {
    pub shape: Shape,
    /// A point well inside Ω; every ray from it crosses `∂Ω` exactly once.
    pub center: Vec3,
    pub bounding_box: Aabb,
    pub inradius: f64,
    pub convexity_constant: f64,
    /// Width δ of the near-boundary collar `Ω^δ`.
    pub delta_shell: f64,
}

impl LevelSetDomain {
    pub fn ball(radius: f64) -> Self {
        let r = Vec3::new(radius, radius, radius);
        LevelSetDomain {
            shape: Shape::Ball { radius },
            center: Vec3::ZERO,
            bounding_box: Aabb { min: -r, max: r },
            inradius: radius,
            convexity_constant: 0.9 / radius,
            delta_shell: 0.1 * radius,
        }
    }

    pub fn unit_ball() -> Self {
        Self::ball(1.0)
    }

    pub fn ellipsoid(a: f64, b: f64, c: f64) -> Self {
        let inradius = a.min(b).min(c);
        let curvature = [a, b, c]
            .iter()
            .flat_map(|&p| [a, b, c].map(move |q| p / (q * q)))
            .fold(f64::MAX, f64::min);
        LevelSetDomain {
            shape: Shape::Ellipsoid { a, b, c },
            center: Vec3::ZERO,
            bounding_box: Aabb {
                min: Vec3::new(-a, -b, -c),
                max: Vec3::new(a, b, c),
            },
            inradius,
            convexity_constant: 0.9 * curvature,
            delta_shell: 0.1 * inradius,
        }
    }

    /// Domain given by a polynomial level set. The inradius is estimated from
    /// the distance between `center` and the boundary.
    pub fn polynomial(terms: Vec<PolyTerm>, center: Vec3, bounding_box: Aabb) -> Result<Self> {
        let mut dom = LevelSetDomain {
            shape: Shape::Polynomial { terms },
            center,
            bounding_box,
            inradius: 0.0,
            convexity_constant: 0.0,
            delta_shell: 0.0,
        };
        if dom.xi(center) >= 0.0 {
            return Err(Error::OutsideDomain { point: center });
        }
        let mut inradius = f64::MAX;
        for dir in probe_directions() {
            inradius = inradius.min(dom.ray_exit(center, dir)?);
        }
        dom.inradius = inradius;
        dom.delta_shell = 0.1 * inradius;
        Ok(dom)
    }

    /// Parses `unit_ball`, `ball(r)` or `ellipsoid(a,b,c)`.
    pub fn from_preset(name: &str) -> Result<Self> {
        let name = name.trim();
        if name == "unit_ball" {
            return Ok(Self::unit_ball());
        }
        let args = |prefix: &str| -> Option<Vec<f64>> {
            let rest = name.strip_prefix(prefix)?.trim();
            let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
            inner.split(',').map(|s| s.trim().parse::<f64>().ok()).collect()
        };
        if let Some(a) = args("ball") {
            if a.len() == 1 && a[0] > 0.0 {
                return Ok(Self::ball(a[0]));
            }
        }
        if let Some(a) = args("ellipsoid") {
            if a.len() == 3 && a.iter().all(|&s| s > 0.0) {
                return Ok(Self::ellipsoid(a[0], a[1], a[2]));
            }
        }
        Err(Error::InvalidParameter(format!("unknown domain preset '{name}'")))
    }

    #[inline]
    pub fn xi(&self, x: Vec3) -> f64 {
        self.shape.xi(x)
    }

    #[inline]
    pub fn grad_xi(&self, x: Vec3) -> Vec3 {
        self.shape.grad(x)
    }

    #[inline]
    pub fn hess_xi(&self, x: Vec3) -> Mat3 {
        self.shape.hess(x)
    }

    /// Bounding-box diagonal; an upper bound for the diameter.
    pub fn diam(&self) -> f64 {
        (self.bounding_box.max - self.bounding_box.min).norm()
    }

    pub fn tol_boundary(&self) -> f64 {
        1e-9 * self.diam()
    }

    #[inline]
    pub fn contains(&self, x: Vec3) -> bool {
        self.xi(x) < 0.0
    }

    pub fn outward_normal(&self, x: Vec3) -> Result<Vec3> {
        let xi = self.xi(x);
        if xi.abs() > self.tol_boundary() {
            return Err(Error::NotOnBoundary { point: x, xi });
        }
        self.normal_at(x)
    }

    /// `∇ξ/|∇ξ|` at any point with a nondegenerate gradient.
    pub fn normal_at(&self, x: Vec3) -> Result<Vec3> {
        let g = self.grad_xi(x);
        let n = g.norm();
        if n < EPS_GRAD {
            return Err(Error::DegenerateGradient { point: x });
        }
        Ok(g / n)
    }

    pub fn boundary_point(&self, x: Vec3) -> Result<BoundaryPoint> {
        Ok(BoundaryPoint {
            position: x,
            normal: self.outward_normal(x)?,
        })
    }

    /// Distance `s` such that `x + s·dir` is the first boundary crossing,
    /// for `x ∈ Ω̄` and unit `dir`.
    pub fn ray_exit(&self, x: Vec3, dir: Vec3) -> Result<f64> {
        let mut hi = self.diam().max(1e-300);
        let mut grow = 0;
        while self.xi(x + dir * hi) <= 0.0 {
            hi *= 2.0;
            grow += 1;
            if grow > 60 {
                return Err(Error::OutsideDomain { point: x + dir * hi });
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.xi(x + dir * mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Newton projection along `∇ξ` onto `{ξ = 0}`.
    pub fn project_to_boundary(&self, x: Vec3) -> Result<Vec3> {
        let tol = self.tol_boundary();
        let mut y = x;
        for _ in 0..MAX_PROJECTION_ITERS {
            let xi = self.xi(y);
            if xi.abs() <= tol {
                return Ok(y);
            }
            let g = self.grad_xi(y);
            let g2 = g.norm_sq();
            if g2.sqrt() < EPS_GRAD {
                return Err(Error::DegenerateGradient { point: y });
            }
            let mut step = g * (xi / g2);
            // damp very long steps so the iterate stays near the box
            let cap = 0.25 * self.diam();
            if step.norm() > cap {
                step = step * (cap / step.norm());
            }
            y -= step;
        }
        Err(Error::ProjectionDiverged {
            point: x,
            iterations: MAX_PROJECTION_ITERS,
        })
    }

    /// Damped projected-gradient descent of `|y − x|²` over `∂Ω`, started at `start`.
    fn descend(&self, x: Vec3, start: Vec3) -> Result<Vec3> {
        let mut y = self.project_to_boundary(start)?;
        let tol = 1e-13 * self.diam();
        let mut tau = 1.0;
        for _ in 0..MAX_PROJECTION_ITERS {
            let n = self.normal_at(y)?;
            let r = y - x;
            let g = r - n * r.dot(n);
            if g.norm() <= tol {
                return Ok(y);
            }
            let d0 = r.norm_sq();
            loop {
                let cand = self.project_to_boundary(y - g * tau)?;
                if (cand - x).norm_sq() <= d0 || tau < 1e-8 {
                    y = cand;
                    break;
                }
                tau *= 0.5;
            }
            tau = (tau * 2.0).min(1.0);
        }
        Err(Error::ProjectionDiverged {
            point: x,
            iterations: MAX_PROJECTION_ITERS,
        })
    }

    /// Closest boundary point from a single start; unique inside the collar.
    pub fn project_closest(&self, x: Vec3) -> Result<(BoundaryPoint, f64)> {
        let y = match self.descend(x, x) {
            Ok(y) => y,
            Err(_) => {
                let dir = (x - self.center).normalized().unwrap_or(Vec3::unit(0));
                let s = self.ray_exit(x, dir)?;
                self.descend(x, x + dir * s)?
            }
        };
        Ok((
            BoundaryPoint {
                position: y,
                normal: self.normal_at(y)?,
            },
            (y - x).norm(),
        ))
    }

    /// Closest boundary point with a multi-start ambiguity check outside the collar.
    pub fn closest_boundary_point(&self, x: Vec3) -> Result<(BoundaryPoint, f64)> {
        if !self.contains(x) && self.xi(x) > self.tol_boundary() {
            return Err(Error::OutsideDomain { point: x });
        }
        let mut candidates: Vec<(Vec3, f64)> = Vec::new();
        if let Ok(y) = self.descend(x, x) {
            candidates.push((y, (y - x).norm()));
        }
        for dir in probe_directions() {
            let s = self.ray_exit(x, dir)?;
            if let Ok(y) = self.descend(x, x + dir * s) {
                candidates.push((y, (y - x).norm()));
            }
        }
        let (best, d) = candidates
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or(Error::ProjectionDiverged {
                point: x,
                iterations: MAX_PROJECTION_ITERS,
            })?;
        if d >= self.delta_shell {
            let diam = self.diam();
            if let Some(&(other, _)) = candidates
                .iter()
                .find(|(y, dy)| (dy - d).abs() <= 1e-6 * diam && (*y - best).norm() > 1e-3 * diam)
            {
                return Err(Error::AmbiguousProjection {
                    point: x,
                    first: best,
                    second: other,
                    distance: d,
                });
            }
        }
        Ok((
            BoundaryPoint {
                position: best,
                normal: self.normal_at(best)?,
            },
            d,
        ))
    }

    /// Principal curvatures of `∂Ω` at a boundary point: eigenpairs of the
    /// tangential Hessian of ξ divided by `|∇ξ|`, smallest first.
    pub fn principal_curvatures(&self, p: Vec3) -> Result<[(f64, Vec3); 2]> {
        let g = self.grad_xi(p);
        let gn = g.norm();
        if gn < EPS_GRAD {
            return Err(Error::DegenerateGradient { point: p });
        }
        let n = g / gn;
        let (e1, e2) = n.orthonormal_pair();
        let h = self.hess_xi(p);
        let a = h.form(e1, e1) / gn;
        let b = h.form(e1, e2) / gn;
        let c = h.form(e2, e2) / gn;
        let mean = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let (l1, l2) = (mean - rad, mean + rad);
        let vec_for = |l: f64| -> Vec3 {
            // (a - l) z1 + b z2 = 0
            let (z1, z2) = if b.abs() > 1e-14 * (a.abs() + c.abs() + 1.0) {
                (b, l - a)
            } else if (a - l).abs() <= (c - l).abs() {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            (e1 * z1 + e2 * z2).normalized().unwrap_or(e1)
        };
        Ok([(l1, vec_for(l1)), (l2, vec_for(l2))])
    }

    /// Uniformly sampled box point projected onto the boundary.
    pub fn sample_boundary<R: Rng>(&self, rng: &mut R) -> Option<Vec3> {
        let b = self.bounding_box;
        for _ in 0..32 {
            let p = Vec3::new(
                rng.random_range(b.min[0]..=b.max[0]),
                rng.random_range(b.min[1]..=b.max[1]),
                rng.random_range(b.min[2]..=b.max[2]),
            );
            if let Ok(y) = self.project_to_boundary(p) {
                return Some(y);
            }
        }
        None
    }

    /// Minimum principal curvature over sampled boundary points.
    pub fn check_convexity(&self, n_samples: usize, seed: u64) -> Result<ConvexityReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = ConvexityReport {
            min_margin: f64::INFINITY,
            witness_point: Vec3::ZERO,
            witness_direction: Vec3::ZERO,
            samples: 0,
            conforms: false,
        };
        for _ in 0..n_samples {
            let Some(p) = self.sample_boundary(&mut rng) else {
                continue;
            };
            let Ok([(k, dir), _]) = self.principal_curvatures(p) else {
                continue;
            };
            report.samples += 1;
            if k < report.min_margin {
                report.min_margin = k;
                report.witness_point = p;
                report.witness_direction = dir;
            }
        }
        if report.min_margin < 0.0 {
            return Err(Error::ConvexityViolation {
                margin: report.min_margin,
                point: report.witness_point,
                direction: report.witness_direction,
            });
        }
        report.conforms = report.min_margin >= self.convexity_constant;
        Ok(report)
    }

    /// Surface quadrature over `∂Ω` in spherical coordinates about `center`:
    /// Gauss–Legendre in `cos θ` (`order` nodes) times `2·order` azimuths.
    /// Uses `dS = s² / (n·ω) dω` for the radial graph `s(ω)`.
    pub fn boundary_quadrature(&self, order: usize) -> Result<Vec<(BoundaryPoint, f64)>> {
        let order = order.max(1);
        let rule = Rule1d::gauss(-1.0, 1.0, order);
        let n_phi = 2 * order;
        let dphi = 2.0 * PI / n_phi as f64;
        let mut out = Vec::with_capacity(order * n_phi);
        for (&c, &wc) in rule.nodes.iter().zip(&rule.weights) {
            let s_theta = (1.0 - c * c).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                let omega = Vec3::new(s_theta * phi.cos(), s_theta * phi.sin(), c);
                let s = self.ray_exit(self.center, omega)?;
                let p = self.center + omega * s;
                let n = self.normal_at(p)?;
                let cos_n = n.dot(omega);
                if cos_n <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "boundary is not a radial graph about the center".into(),
                    ));
                }
                out.push((
                    BoundaryPoint {
                        position: p,
                        normal: n,
                    },
                    wc * dphi * s * s / cos_n,
                ));
            }
        }
        Ok(out)
    }

    /// Volume of Ω by the same spherical parametrization (`∫ s³/3 dω`).
    pub fn volume(&self, order: usize) -> Result<f64> {
        let rule = Rule1d::gauss(-1.0, 1.0, order);
        let n_phi = 2 * order;
        let dphi = 2.0 * PI / n_phi as f64;
        let mut v = 0.0;
        for (&c, &wc) in rule.nodes.iter().zip(&rule.weights) {
            let st = (1.0 - c * c).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = (k as f64 + 0.5) * dphi;
                let s = self.ray_exit(self.center, Vec3::new(st * phi.cos(), st * phi.sin(), c))?;
                v += wc * dphi * s * s * s / 3.0;
            }
        }
        Ok(v)
    }

    /// `δ' = min{|ξ(x)| : d(x, ∂Ω) = δ}`, sampled along inward normals.
    pub fn delta_prime(&self, delta: f64) -> Result<f64> {
        let mut m = f64::INFINITY;
        for (bp, _) in self.boundary_quadrature(12)? {
            m = m.min(self.xi(bp.position - bp.normal * delta).abs());
        }
        Ok(m)
    }
}

/// 6 axis and 8 diagonal unit directions.
fn probe_directions() -> Vec<Vec3> {
    let mut dirs = Vec::with_capacity(14);
    for k in 0..3 {
        dirs.push(Vec3::unit(k));
        dirs.push(-Vec3::unit(k));
    }
    let s = 1.0 / 3f64.sqrt();
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                dirs.push(Vec3::new(sx * s, sy * s, sz * s));
            }
        }
    }
    dirs
}
