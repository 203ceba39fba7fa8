//! Property suites behind `vpb verify`. Each check records a metric and the
//! threshold it was held to; a failing or erroring check is a report entry.

use crate::characteristics::{
    alpha_invariance_residual, velocity_lemma_check, ConductorBall, Integrator, PhaseState, PotentialField,
    Species, WeightParams, ZeroField,
};
use crate::collision::{maxwellian, CollisionOperator, CollisionSpec, MU0};
use crate::error::{Error, Result};
use crate::field::{hopf_lower_bound, FieldSolver, SpatialMesh};
use crate::geometry::{BoundaryPoint, LevelSetDomain};
use crate::math::{Rule1d, Vec3};
use crate::simulator::{InitialDatum, Scenario, Simulator};
use crate::singularity::{alpha_moment, lp_moment_norm, nonlocal_to_local, FieldBounds, KernelQuad, LpGrid, MomentGrid};
use crate::wall::{c_mu, cl_kernel, diffuse_outgoing, HalfSpaceRule, WallModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Collision,
    Wall,
    VelocityLemma,
    AlphaInvariance,
    Moments,
    Hopf,
    Nonlocal,
    Equilibrium,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Collision,
        Suite::Wall,
        Suite::VelocityLemma,
        Suite::AlphaInvariance,
        Suite::Moments,
        Suite::Hopf,
        Suite::Nonlocal,
        Suite::Equilibrium,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Collision => "collision",
            Suite::Wall => "wall",
            Suite::VelocityLemma => "velocity-lemma",
            Suite::AlphaInvariance => "alpha-invariance",
            Suite::Moments => "moments",
            Suite::Hopf => "hopf",
            Suite::Nonlocal => "nonlocal",
            Suite::Equilibrium => "equilibrium",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `all` (or `default`) selects every suite.
pub fn parse_selector(s: &str) -> Result<Vec<Suite>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if part == "all" || part == "default" {
            return Ok(Suite::ALL.to_vec());
        }
        let suite = part.parse()?;
        if !out.contains(&suite) {
            out.push(suite);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidParameter("empty suite selector".into()));
    }
    Ok(out)
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Suite::ALL.iter().map(|x| x.name()).collect();
                Error::InvalidParameter(format!("unknown suite `{s}`; expected all or one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub metric: f64,
    /// Human-readable acceptance rule for `metric`.
    pub threshold: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suites: Vec<Suite>,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

struct Sink {
    suite: Suite,
    checks: Vec<Check>,
}

impl Sink {
    fn below(&mut self, name: &str, metric: Result<f64>, limit: f64) {
        self.push(name, metric, format!("< {limit:e}"), |m| m < limit);
    }

    fn above(&mut self, name: &str, metric: Result<f64>, limit: f64) {
        self.push(name, metric, format!("> {limit:e}"), |m| m > limit);
    }

    fn flag(&mut self, name: &str, ok: Result<bool>) {
        self.push(name, ok.map(|b| if b { 1.0 } else { 0.0 }), "= 1".into(), |m| m == 1.0);
    }

    fn push(&mut self, name: &str, metric: Result<f64>, threshold: String, test: impl Fn(f64) -> bool) {
        let (metric, pass, error) = match metric {
            Ok(m) => (m, test(m), None),
            Err(e) => (f64::NAN, false, Some(e.to_string())),
        };
        self.checks.push(Check {
            suite: self.suite,
            name: name.into(),
            metric,
            threshold,
            pass,
            error,
        });
    }
}

/// Runs the selected suites on the unit-ball benchmark. `scenario` seeds the
/// equilibrium suite; the other suites ignore it.
pub fn run(suites: &[Suite], seed: u64, scenario: &Scenario) -> VerifyReport {
    let mut checks = Vec::new();
    for &suite in suites {
        let mut sink = Sink {
            suite,
            checks: Vec::new(),
        };
        match suite {
            Suite::Collision => collision(&mut sink),
            Suite::Wall => wall(&mut sink, seed),
            Suite::VelocityLemma => velocity_lemma(&mut sink, seed),
            Suite::AlphaInvariance => alpha_invariance(&mut sink, seed),
            Suite::Moments => moments(&mut sink),
            Suite::Hopf => hopf(&mut sink, seed),
            Suite::Nonlocal => nonlocal(&mut sink, seed),
            Suite::Equilibrium => equilibrium(&mut sink, scenario),
        }
        checks.extend(sink.checks);
    }
    let pass = checks.iter().all(|c| c.pass);
    VerifyReport {
        suites: suites.to_vec(),
        seed,
        checks,
        pass,
    }
}

fn ball() -> LevelSetDomain {
    LevelSetDomain::unit_ball()
}

fn ball_params() -> Result<WeightParams> {
    WeightParams::for_domain(&ball(), Some(0.1))
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let w = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let r = w.norm();
        if r > 0.1 && r < 1.0 {
            return w / r;
        }
    }
}

fn collision(sink: &mut Sink) {
    let op = CollisionOperator::new(CollisionSpec::default());
    let op = match op {
        Ok(op) => op,
        Err(e) => return sink.below("operator", Err(e), 0.0),
    };
    let mu = op.grid.sample(maxwellian);
    sink.below("moments_of_q_mu_mu", op.collision_invariants(&mu).map(|i| i.max_abs()), 1e-2);
    let shifted = op.grid.sample(|v| MU0 * (-0.5 * (v - Vec3::new(0.3, 0.0, 0.0)).norm_sq()).exp());
    sink.below("moments_of_q_shifted", op.collision_invariants(&shifted).map(|i| i.max_abs()), 1e-2);
    let rel = op.q_collide_all(&mu, &mu).map(|q| {
        let mut worst = 0.0f64;
        for (v, qv) in op.grid.nodes.iter().zip(&q) {
            if v.norm() <= 2.0 {
                worst = worst.max(qv.value().abs() / qv.loss);
            }
        }
        worst
    });
    sink.below("q_mu_mu_relative_sup", rel, 1e-3);
}

/// `∫_{n·v<0} R(u → v) dv` on a rule adapted to the kernel's Gaussian.
fn cl_mass(bp: &BoundaryPoint, u: Vec3, m: &WallModel) -> Result<f64> {
    let WallModel::CercignaniLampis { r_perp, r_par, t_wall } = *m else {
        return Err(Error::InvalidParameter("not a Cercignani-Lampis model".into()));
    };
    let n = bp.normal;
    let (e1, e2) = n.orthonormal_pair();
    let a = (1.0 - r_perp).sqrt() * u.dot(n);
    let sn = (t_wall * r_perp).sqrt();
    let st = (t_wall * r_par * (2.0 - r_par)).sqrt();
    let drift = (u - n * u.dot(n)) * (1.0 - r_par);
    let panels = |lo: f64, hi: f64, k: usize| -> Vec<(f64, f64)> {
        let w = (hi - lo) / k as f64;
        (0..k).map(|i| (lo + i as f64 * w, lo + (i + 1) as f64 * w)).collect()
    };
    let rw = Rule1d::composite(&panels(0.0, a + 12.0 * sn, 12), 10);
    let rt = Rule1d::composite(&panels(-9.0 * st, 9.0 * st, 6), 8);
    let mut total = 0.0;
    for (&w, &ww) in rw.nodes.iter().zip(&rw.weights) {
        for (&p, &wp) in rt.nodes.iter().zip(&rt.weights) {
            for (&q, &wq) in rt.nodes.iter().zip(&rt.weights) {
                let v = n * (-w) + drift + e1 * p + e2 * q;
                total += ww * wp * wq * cl_kernel(u, v, bp, m)?;
            }
        }
    }
    Ok(total)
}

fn wall(sink: &mut Sink, seed: u64) {
    let n = Vec3::new(0.3, -0.5, 0.8).normalized().unwrap_or(Vec3::unit(2));
    let bp = BoundaryPoint { position: n, normal: n };
    let flux = HalfSpaceRule::standard(n).integrate(|v| maxwellian(v) * c_mu() * n.dot(v).abs());
    sink.below("diffuse_flux_normalization", Ok((flux - 1.0).abs()), 1e-6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Ok(0.0f64);
    for rp in [0.3, 0.7, 1.0] {
        for rt in [0.5, 1.0, 1.5] {
            let t = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let u = t - n * t.dot(n) + n * rng.random_range(0.1..2.0);
            worst = worst.and_then(|w| {
                let m = WallModel::cercignani_lampis(rp, rt, 1.0)?;
                Ok(w.max((cl_mass(&bp, u, &m)? - 1.0).abs()))
            });
        }
    }
    sink.below("cl_kernel_mass_sweep", worst, 1e-4);
    let reduce = (|| -> Result<f64> {
        let m = WallModel::cercignani_lampis(1.0, 1.0, 1.0)?;
        let u = n * 0.7 + Vec3::new(0.2, 0.9, 0.1);
        let mut worst = 0.0f64;
        for i in 0..5 {
            for j in 0..5 {
                let (e1, e2) = n.orthonormal_pair();
                let v = n * (-0.25 * (i + 1) as f64) + e1 * (j as f64 - 2.0) * 0.6 + e2 * 0.3;
                // diffuse re-emission of the incoming flux u·n δ(· − u)
                let diffuse = 2.0 / PI * n.dot(v).abs() * (-0.5 * v.norm_sq()).exp() / 4.0;
                let r = cl_kernel(u, v, &bp, &m)?;
                worst = worst.max((r / diffuse - 1.0).abs());
            }
        }
        // the diffuse law maps μ to itself
        let v = n * -0.8;
        worst = worst.max((diffuse_outgoing(maxwellian, &bp, v)? / maxwellian(v) - 1.0).abs());
        Ok(worst)
    })();
    sink.below("cl_unit_reduces_to_diffuse", reduce, 1e-6);
}

fn velocity_lemma(sink: &mut Sink, seed: u64) {
    let integ = Integrator::default();
    let d = ball();
    let field = ConductorBall::unit();
    let c = 10.0 * (field.c1_norm() + 1.0) / field.sign_margin();
    let result = ball_params().and_then(|p| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut failures = 0usize;
        for k in 0..100 {
            let st = lemma_launch(&mut rng, k);
            let r = velocity_lemma_check(&integ, &d, &field, &p, &st, 0.5, c, field.sign_margin())?;
            if !r.pass {
                failures += 1;
            }
        }
        Ok(failures as f64)
    });
    sink.below("failures_of_100_segments", result, 0.5);
}

/// Alternates bulk launches with near-wall launches of small normal speed.
pub fn lemma_launch(rng: &mut ChaCha8Rng, k: usize) -> PhaseState {
    let dir = unit_vector(rng);
    if k % 2 == 0 {
        let x = dir * rng.random_range(0.0..0.999);
        let v = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        PhaseState::new(0.0, x, v)
    } else {
        let x = dir * (1.0 - rng.random_range(1e-4..1e-2));
        let (e1, e2) = dir.orthonormal_pair();
        let th = rng.random_range(0.0..std::f64::consts::TAU);
        let v = (e1 * th.cos() + e2 * th.sin()) * rng.random_range(0.0..0.3) + dir * rng.random_range(-0.03..0.03);
        PhaseState::new(0.0, x, v)
    }
}

/// Seeded interior states with `t` large enough that the backward exit is reached.
pub fn invariance_state(rng: &mut ChaCha8Rng) -> PhaseState {
    let x = unit_vector(rng) * rng.random_range(0.0..0.8);
    let v = unit_vector(rng) * rng.random_range(0.8..1.5);
    PhaseState::new(3.0, x, v)
}

fn alpha_invariance(sink: &mut Sink, seed: u64) {
    let integ = Integrator::default();
    let d = ball();
    let ladder = crate::characteristics::default_ladder();
    let run = |field: &dyn PotentialField| -> Result<(f64, f64)> {
        let p = ball_params()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut order = f64::INFINITY;
        for _ in 0..10 {
            let st = invariance_state(&mut rng);
            let r = alpha_invariance_residual(&integ, &d, field, &st, &p, &ladder)?;
            worst = worst.max(r.extrapolated);
            if r.residuals.last().copied().unwrap_or(0.0) > 1e-9 {
                order = order.min(r.order);
            }
        }
        Ok((worst, order))
    };
    let zero = run(&ZeroField);
    sink.below("zero_field_residual", zero.map(|z| z.0), 1e-6);
    let cond = run(&ConductorBall::unit());
    let order = cond.as_ref().map(|c| c.1).map_err(|e| Error::InvalidParameter(e.to_string()));
    sink.below("conductor_residual", cond.map(|c| c.0), 1e-4);
    sink.above("conductor_order", order, 0.95);
}

fn moments(sink: &mut Sink) {
    let integ = Integrator::default();
    let d = ball();
    let at = |a: f64| -> Result<bool> {
        let p = ball_params()?;
        let r = alpha_moment(&integ, &d, &ZeroField, 10.0, Vec3::unit(2), Species::Plus, a, &p, &MomentGrid::default())?;
        Ok(r.divergent)
    };
    sink.flag("alpha_moment_finite_at_0.95", at(0.95).map(|x| !x));
    sink.flag("alpha_moment_divergent_at_1.05", at(1.05));
    let lp = |beta: f64| -> Result<bool> {
        let p = ball_params()?;
        let grid = LpGrid {
            polar: 1,
            azimuths: 1,
            ..LpGrid::default()
        };
        Ok(lp_moment_norm(&d, &ConductorBall::unit(), 0.0, Species::Plus, beta, 4.0, &p, &grid)?.divergent)
    };
    sink.flag("lp_norm_finite_at_beta_1.4", lp(1.4).map(|x| !x));
    sink.flag("lp_norm_divergent_at_beta_1.6", lp(1.6));
}

fn hopf(sink: &mut Sink, seed: u64) {
    let solver = match SpatialMesh::new(ball(), 24) {
        Ok(m) => FieldSolver::new(Arc::new(m)),
        Err(e) => return sink.below("mesh", Err(e), 0.0),
    };
    let one = solver.mesh.sample(|_| 1.0);
    let r = hopf_lower_bound(&solver, &one);
    let deriv = r.as_ref().map(|r| (r.min_inward_derivative * 3.0 - 1.0).abs());
    sink.below("uniform_source_flux_rel_error", deriv.map_err(|e| Error::InvalidParameter(e.to_string())), 0.05);
    sink.above("uniform_source_feasible_c", r.map(|r| r.feasible_c), 0.28);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Ok(f64::INFINITY);
    for _ in 0..5 {
        let c = unit_vector(&mut rng) * rng.random_range(0.0..0.6);
        let w = rng.random_range(0.1..0.4);
        let amp = rng.random_range(0.5..2.0);
        let h = solver.mesh.sample(|x| amp * (-(x - c).norm_sq() / (w * w)).exp());
        worst = worst.and_then(|m: f64| Ok(m.min(hopf_lower_bound(&solver, &h)?.feasible_c)));
    }
    sink.above("random_sources_min_feasible_c", worst, 0.0);
}

fn nonlocal(sink: &mut Sink, seed: u64) {
    let field = ConductorBall::unit();
    let bounds = FieldBounds {
        e_sup: field.sign_margin(),
        c_e: field.sign_margin(),
    };
    let result = ball_params().and_then(|p| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..8 {
            let x = unit_vector(&mut rng) * rng.random_range(0.0..0.95);
            let v = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let st = PhaseState::new(rng.random_range(0.0..2.0), x, v);
            let r = nonlocal_to_local(&Integrator::default(), &ball(), &field, &st, 1.5, 1.0, 10.0, 0.2, 0.1, &bounds, &p, &KernelQuad::coarse())?;
            if !(r.lhs >= 0.0 && r.rhs > 0.0) {
                return Err(Error::InvalidParameter(format!("degenerate estimate {r:?}")));
            }
            worst = worst.max(r.ratio);
        }
        Ok(worst)
    });
    // finite prefactor on the seeded corpus
    sink.below("max_lhs_over_rhs", result, 1e6);
}

fn equilibrium(sink: &mut Sink, scenario: &Scenario) {
    let mut sc = scenario.clone();
    sc.initial = InitialDatum::Equilibrium;
    sc.norms.w1p_every = usize::MAX;
    let result = (|| -> Result<(f64, f64)> {
        let s = Simulator::new(sc.clone())?;
        let mut st = s.initialize()?;
        let mut drift = 0.0f64;
        let m0 = s.masses(&st.density.deviation(&s.grid)).iter().sum::<f64>();
        for _ in 0..10 {
            let next = s.step(&st, sc.time.dt)?;
            for (a, b) in next.density.f.iter().flatten().zip(st.density.f.iter().flatten()) {
                drift = drift.max((a - b).abs());
            }
            st = next;
        }
        let m1 = s.masses(&st.density.deviation(&s.grid)).iter().sum::<f64>();
        Ok((drift, (m1 / m0 - 1.0).abs()))
    })();
    let mass = result.as_ref().map(|r| r.1).map_err(|e| Error::InvalidParameter(e.to_string()));
    sink.below("max_drift_per_step", result.map(|r| r.0), 1e-8);
    sink.below("relative_mass_drift", mass, 1e-6);
}

#[cfg(test)]
mod tests;
