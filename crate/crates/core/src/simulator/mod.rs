//! Coupled VPB time stepper: finite-volume transport in `x` with discrete
//! wall re-emission, finite-volume force term in `v`, collisions with
//! implicit loss, and a Poisson solve per step.

mod collide;
mod norms;
mod scenario;
mod transport;

pub use collide::Collider;
pub use norms::{lp_distance, mixed_norm_l3x_l1pdelta_v, weighted_sup_norm, AlphaWeight, TwinReport};
pub use scenario::{
    parse_scenario, CollisionConfig, CollisionModel, CompatibilityAction, CompatibilityConfig, FieldBoundary,
    InitialDatum, MeshConfig, NormConfig, OutputConfig, Representation, Scenario, TimeConfig,
};
pub use transport::{advect_v, advect_x, Link, WallFace, WallOperator, XCells};

use crate::characteristics::{Integrator, Species, WeightParams};
use crate::collision::{maxwellian, sqrt_maxwellian, VelocityGrid};
use crate::error::{Error, Result};
use crate::field::{boundary_sign_condition, BoundaryCondition, FieldSolver, FieldState, SpatialMesh};
use crate::math::Vec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::sync::Arc;

/// Per-species values on cells × velocity nodes, stored as `f` in the given
/// representation; layout `cell · n_v + vnode`.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticDensity {
    pub representation: Representation,
    pub n_v: usize,
    pub f: Vec<Vec<f64>>,
}

impl KineticDensity {
    /// Builds `f` from the deviations `h = F − μ`.
    pub fn from_deviation(representation: Representation, grid: &VelocityGrid, h: &[Vec<f64>]) -> Self {
        let nv = grid.len();
        let f = h
            .iter()
            .map(|hs| {
                hs.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let v = grid.nodes[i % nv];
                        match representation {
                            Representation::Perturbation => x / sqrt_maxwellian(v),
                            Representation::SqrtMu => (maxwellian(v) + x) / sqrt_maxwellian(v),
                        }
                    })
                    .collect()
            })
            .collect();
        KineticDensity {
            representation,
            n_v: nv,
            f,
        }
    }

    /// `h = F − μ` per species.
    pub fn deviation(&self, grid: &VelocityGrid) -> Vec<Vec<f64>> {
        let nv = self.n_v;
        self.f
            .iter()
            .map(|fs| {
                fs.iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let v = grid.nodes[i % nv];
                        match self.representation {
                            Representation::Perturbation => sqrt_maxwellian(v) * x,
                            Representation::SqrtMu => sqrt_maxwellian(v) * x - maxwellian(v),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn species(&self) -> usize {
        self.f.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    /// `∬ F` per species.
    pub mass: Vec<f64>,
    /// `max w_ϑ |f|` over species.
    pub sup_norm: f64,
    /// `min E·n` on ∂Ω (zero for the insulator).
    pub sign_margin: f64,
    /// `‖w_ϑ α^β ∇_{x,v} f‖_p`, as of `w1p_t`.
    pub w1p: f64,
    pub w1p_t: f64,
    /// `‖∇_v f‖_{L³ₓ L^{1+δ}_v}`
    pub mixed_norm: f64,
    /// `min (ν_ϖ − ϖ⟨v⟩/2)` over the sample.
    pub nu_margin: f64,
    /// Nodes with `F < 0`.
    pub negative_nodes: usize,
    pub poisson_residual: f64,
}

impl DiagnosticsRecord {
    pub fn csv_header(species: usize) -> String {
        let mut h = String::from("step,t");
        for s in 0..species {
            h.push_str(&format!(",mass_{}", species_name(s)));
        }
        h.push_str(",sup_norm,sign_margin,w1p,w1p_t,mixed_norm,nu_margin,negative_nodes,poisson_residual");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{},{:e}", self.step, self.t);
        for m in &self.mass {
            r.push_str(&format!(",{m:.17e}"));
        }
        r.push_str(&format!(
            ",{:.17e},{:.17e},{:.17e},{:e},{:.17e},{:.17e},{},{:e}",
            self.sup_norm,
            self.sign_margin,
            self.w1p,
            self.w1p_t,
            self.mixed_norm,
            self.nu_margin,
            self.negative_nodes,
            self.poisson_residual
        ));
        r
    }
}

pub fn write_diagnostics_csv<W: Write>(mut w: W, records: &[DiagnosticsRecord]) -> Result<()> {
    let ns = records.first().map_or(1, |r| r.mass.len());
    writeln!(w, "{}", DiagnosticsRecord::csv_header(ns))?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

fn species_name(s: usize) -> &'static str {
    if s == 0 {
        "plus"
    } else {
        "minus"
    }
}

fn species_of(s: usize) -> Species {
    if s == 0 {
        Species::Plus
    } else {
        Species::Minus
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub step: usize,
    pub t: f64,
    pub density: KineticDensity,
    pub field: FieldState,
    /// Full-mesh Poisson source before the background `ρ₀` is removed.
    pub charge: Vec<f64>,
    pub history: Vec<DiagnosticsRecord>,
    /// Wall-law residual of the initial datum.
    pub compatibility_residual: f64,
    /// Neutralizing background of the insulator, fixed by the datum.
    pub rho0: f64,
}

/// Static data of a scenario: meshes, operators and parameters.
pub struct Simulator {
    pub scenario: Scenario,
    pub mesh: Arc<SpatialMesh>,
    pub solver: FieldSolver,
    pub grid: VelocityGrid,
    pub cells: XCells,
    pub wall: WallOperator,
    pub collider: Collider,
    pub params: WeightParams,
    pub integrator: Integrator,
    mu: Vec<f64>,
    mu_mass: f64,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let domain = scenario.domain()?;
        let mesh = Arc::new(SpatialMesh::new(domain.clone(), scenario.mesh.x_resolution)?);
        let solver = FieldSolver::new(mesh.clone());
        let grid = VelocityGrid::new(scenario.mesh.v_max, scenario.mesh.v_points);
        let cells = XCells::from_mesh(&mesh);
        let wall = WallOperator::new(&grid, &scenario.wall)?;
        let collider = Collider::new(&grid, &scenario.collision)?;
        let params = WeightParams::for_domain(&domain, scenario.norms.epsilon)?;
        let mu = grid.sample(maxwellian);
        let mu_mass = grid.integrate(&mu);
        Ok(Simulator {
            scenario,
            mesh,
            solver,
            grid,
            cells,
            wall,
            collider,
            params,
            integrator: Integrator {
                rtol: 1e-8,
                atol: 1e-10,
                ..Integrator::default()
            },
            mu,
            mu_mass,
        })
    }

    pub fn species(&self) -> usize {
        self.scenario.species
    }

    fn n_v(&self) -> usize {
        self.grid.len()
    }

    /// Deviations `h = F − μ` of the scenario's initial datum.
    pub fn initial_deviation(&self) -> Result<Vec<Vec<f64>>> {
        let nv = self.n_v();
        let ns = self.species();
        let mut h = vec![vec![0.0; self.cells.len() * nv]; ns];
        match &self.scenario.initial {
            InitialDatum::Equilibrium => {}
            InitialDatum::GaussianBump {
                x0,
                v0,
                amplitude,
                width_x,
                width_v,
            } => {
                let (x0, v0) = (Vec3(*x0), Vec3(*v0));
                let norm = (2.0 * std::f64::consts::PI * width_v * width_v).powf(-1.5);
                for (s, hs) in h.iter_mut().enumerate() {
                    for (p, &x) in self.cells.centers.iter().enumerate() {
                        let gx = (-(x - x0).norm_sq() / (2.0 * width_x * width_x)).exp();
                        for (k, &v) in self.grid.nodes.iter().enumerate() {
                            let gv = norm * (-(v - v0).norm_sq() / (2.0 * width_v * width_v)).exp();
                            hs[p * nv + k] = amplitude[s] * gx * gv;
                        }
                    }
                }
            }
            InitialDatum::Table { path } => {
                let file = std::fs::File::open(path)?;
                let mut rows = Vec::new();
                for (ln, line) in std::io::BufReader::new(file).lines().enumerate() {
                    let line = line?;
                    if ln == 0 || line.trim().is_empty() {
                        continue;
                    }
                    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                    let bad = |m: &str| Error::ScenarioParse {
                        line: Some(ln + 1),
                        message: format!("{path}: {m}"),
                    };
                    if cols.len() < 4 {
                        return Err(bad("expected species,cell,vnode,f"));
                    }
                    let s = match cols[0] {
                        "plus" | "0" => 0,
                        "minus" | "1" => 1,
                        other => return Err(bad(&format!("unknown species '{other}'"))),
                    };
                    let cell: usize = cols[1].parse().map_err(|_| bad("bad cell index"))?;
                    let vnode: usize = cols[2].parse().map_err(|_| bad("bad velocity index"))?;
                    let f: f64 = cols[3].parse().map_err(|_| bad("bad value"))?;
                    if s >= ns || cell >= self.cells.len() || vnode >= nv || !f.is_finite() {
                        return Err(bad("entry out of range"));
                    }
                    rows.push((s, cell, vnode, f));
                }
                let eq = KineticDensity::from_deviation(self.scenario.representation, &self.grid, &h);
                let mut dens = eq;
                for (s, cell, vnode, f) in rows {
                    dens.f[s][cell * nv + vnode] = f;
                }
                h = dens.deviation(&self.grid);
            }
        }
        Ok(h)
    }

    /// Builds the initial state, solves the field and records the wall-law
    /// residual of the datum.
    pub fn initialize(&self) -> Result<SimState> {
        let h = self.initial_deviation()?;
        let density = KineticDensity::from_deviation(self.scenario.representation, &self.grid, &h);
        self.initialize_with(density)
    }

    /// As [`Simulator::initialize`] with a supplied datum; fixes `ρ₀` for the insulator.
    pub fn initialize_with(&self, density: KineticDensity) -> Result<SimState> {
        if density.species() != self.species() || density.f.iter().any(|f| f.len() != self.cells.len() * self.n_v())
        {
            return Err(Error::InvalidParameter("datum does not match the scenario grids".into()));
        }
        let h = density.deviation(&self.grid);
        let charge = self.charge(&h);
        let rho0 = match self.scenario.boundary {
            FieldBoundary::Insulator => {
                let inside = &self.mesh.inside_nodes;
                inside.iter().map(|&i| charge[i]).sum::<f64>() / inside.len() as f64
            }
            FieldBoundary::Conductor => 0.0,
        };
        let residual = self.compatibility_residual(&h);
        let c = self.scenario.compatibility;
        if c.action == CompatibilityAction::Error && residual > c.tolerance {
            return Err(Error::CompatibilityViolation { residual });
        }
        let field = self.solve_field(&charge, rho0, None)?;
        let mut state = SimState {
            step: 0,
            t: 0.0,
            density,
            field,
            charge,
            history: Vec::new(),
            compatibility_residual: residual,
            rho0,
        };
        let rec = self.diagnostics(&state, None)?;
        state.history.push(rec);
        Ok(state)
    }

    /// Max over wall faces and incoming velocities of `|h − h_wall|`, where
    /// `h_wall` is the discrete wall law applied to the outgoing values.
    pub fn compatibility_residual(&self, h: &[Vec<f64>]) -> f64 {
        let nv = self.n_v();
        let mut worst = 0.0f64;
        let mut g = vec![0.0; nv];
        for hs in h {
            for w in &self.cells.walls {
                let cell = &hs[w.cell * nv..(w.cell + 1) * nv];
                self.wall.emit(w.orientation, cell, &mut g);
                let n = transport::orientation_normal(w.orientation);
                for (k, v) in self.grid.nodes.iter().enumerate() {
                    let vn = v.dot(n);
                    if vn < 0.0 {
                        worst = worst.max((cell[k] - g[k] / -vn).abs());
                    }
                }
            }
        }
        worst
    }

    /// Full-mesh `∫F dv` (one species) or `∫(F₊ − F₋) dv`.
    pub fn charge(&self, h: &[Vec<f64>]) -> Vec<f64> {
        let nv = self.n_v();
        let w = &self.grid.weights;
        let mut rho = vec![0.0; self.mesh.len()];
        for (p, &i) in self.mesh.inside_nodes.iter().enumerate() {
            let m = |s: usize| -> f64 { h[s][p * nv..(p + 1) * nv].iter().zip(w).map(|(a, b)| a * b).sum() };
            rho[i] = if h.len() == 1 { self.mu_mass + m(0) } else { m(0) - m(1) };
        }
        rho
    }

    fn solve_field(&self, charge: &[f64], rho0: f64, guess: Option<&FieldState>) -> Result<FieldState> {
        match self.scenario.boundary {
            FieldBoundary::Conductor => self.solver.solve_dirichlet_from(charge, guess.map(|g| g.phi.as_slice())),
            FieldBoundary::Insulator => self.solver.solve_neumann(charge, rho0),
        }
    }

    /// `max|v| · dt ≤ h` for transport and `Σ|a_b| dt/2 ≤ h_v` for the force term.
    pub fn check_cfl(&self, field: &FieldState, dt: f64) -> Result<()> {
        let vmax = self.grid.nodes.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if vmax * dt > self.cells.h {
            return Err(Error::CflViolation {
                detail: format!("max|v| dt = {} exceeds h = {}", vmax * dt, self.cells.h),
            });
        }
        let amax = self
            .mesh
            .inside_nodes
            .iter()
            .map(|&i| {
                let g = field.grad[i];
                g[0].abs() + g[1].abs() + g[2].abs()
            })
            .fold(0.0, f64::max);
        if amax * 0.5 * dt > self.grid.h {
            return Err(Error::CflViolation {
                detail: format!("force step {} exceeds h_v = {}", amax * 0.5 * dt, self.grid.h),
            });
        }
        Ok(())
    }

    fn force_half_step(&self, h: &mut [Vec<f64>], field: &FieldState, dt: f64) {
        let nv = self.n_v();
        for (s, hs) in h.iter_mut().enumerate() {
            let sign = species_of(s).sign();
            hs.par_chunks_mut(nv).enumerate().for_each(|(p, cell)| {
                let e = -field.grad[self.mesh.inside_nodes[p]];
                advect_v(&self.grid, e * sign, &self.mu, cell, dt);
            });
        }
    }

    fn collide(&self, h: &mut [Vec<f64>], dt: f64) -> Result<()> {
        if self.collider.model == CollisionModel::None {
            return Ok(());
        }
        let nv = self.n_v();
        let ns = h.len();
        let updated: Vec<Vec<Vec<f64>>> = (0..self.cells.len())
            .into_par_iter()
            .map(|p| {
                let mut cell: Vec<Vec<f64>> = h.iter().map(|hs| hs[p * nv..(p + 1) * nv].to_vec()).collect();
                self.collider.step_cell(&mut cell, dt)?;
                Ok(cell)
            })
            .collect::<Result<_>>()?;
        for (p, cell) in updated.into_iter().enumerate() {
            for s in 0..ns {
                h[s][p * nv..(p + 1) * nv].copy_from_slice(&cell[s]);
            }
        }
        Ok(())
    }

    /// One Strang step `X(dt/2) V(dt/2) C(dt) V(dt/2) X(dt/2)` in the frozen
    /// field, followed by a Poisson solve.
    pub fn step(&self, state: &SimState, dt: f64) -> Result<SimState> {
        self.check_cfl(&state.field, dt)?;
        let mut h = state.density.deviation(&self.grid);
        for hs in h.iter_mut() {
            *hs = advect_x(&self.cells, &self.grid, Some(&self.wall), hs, 0.5 * dt);
        }
        self.force_half_step(&mut h, &state.field, 0.5 * dt);
        self.collide(&mut h, dt)?;
        self.force_half_step(&mut h, &state.field, 0.5 * dt);
        for hs in h.iter_mut() {
            *hs = advect_x(&self.cells, &self.grid, Some(&self.wall), hs, 0.5 * dt);
        }
        let charge = self.charge(&h);
        let field = self.solve_field(&charge, state.rho0, Some(&state.field))?;
        let mut next = SimState {
            step: state.step + 1,
            t: state.t + dt,
            density: KineticDensity::from_deviation(state.density.representation, &self.grid, &h),
            field,
            charge,
            history: state.history.clone(),
            compatibility_residual: state.compatibility_residual,
            rho0: state.rho0,
        };
        let rec = self.diagnostics(&next, state.history.last())?;
        next.history.push(rec);
        Ok(next)
    }

    /// Steps to `t_end` (the last step is shortened to land on it) and
    /// returns the diagnostics history.
    pub fn run(&self, state: SimState, t_end: f64, dt: f64) -> Result<SimState> {
        let mut s = state;
        while s.t < t_end - 1e-12 * t_end.max(1.0) {
            let d = dt.min(t_end - s.t);
            s = self.step(&s, d)?;
        }
        Ok(s)
    }

    /// Nodes with `F = μ + h < 0`.
    pub fn negative_nodes(&self, h: &[Vec<f64>]) -> usize {
        let nv = self.n_v();
        h.iter()
            .map(|hs| hs.iter().enumerate().filter(|(i, &x)| self.mu[i % nv] + x < 0.0).count())
            .sum()
    }

    /// `∬ F dv dx` per species.
    pub fn masses(&self, h: &[Vec<f64>]) -> Vec<f64> {
        let nv = self.n_v();
        let vol = self.cells.h.powi(3);
        let w = &self.grid.weights;
        h.iter()
            .map(|hs| {
                let dev: f64 = hs.iter().enumerate().map(|(i, x)| x * w[i % nv]).sum();
                vol * (self.cells.len() as f64 * self.mu_mass + dev)
            })
            .collect()
    }

    /// Diagnostics of a state; the weighted Sobolev norm is carried over from
    /// `previous` unless it is due.
    pub fn diagnostics(&self, state: &SimState, previous: Option<&DiagnosticsRecord>) -> Result<DiagnosticsRecord> {
        let n = &self.scenario.norms;
        let h = state.density.deviation(&self.grid);
        let (w1p, w1p_t) = match previous {
            Some(p) if state.step % n.w1p_every != 0 => (p.w1p, p.w1p_t),
            _ => (
                self.weighted_w1p_norm(state, n.beta, n.p, n.vartheta, AlphaWeight::Kinetic)?,
                state.t,
            ),
        };
        let grad_v = self.velocity_gradient_magnitude(&state.density);
        let mixed = grad_v
            .iter()
            .map(|g| mixed_norm_l3x_l1pdelta_v(g, self.n_v(), self.cells.h.powi(3), &self.grid.weights, n.delta))
            .fold(0.0, f64::max);
        Ok(DiagnosticsRecord {
            step: state.step,
            t: state.t,
            mass: self.masses(&h),
            sup_norm: state
                .density
                .f
                .iter()
                .map(|f| weighted_sup_norm(f, &self.grid, n.vartheta))
                .fold(0.0, f64::max),
            sign_margin: boundary_sign_condition(&state.field)?,
            w1p,
            w1p_t,
            mixed_norm: mixed,
            nu_margin: self.nu_varpi_margin(state, n.varpi, n.margin_samples)?,
            negative_nodes: self.negative_nodes(&h),
            poisson_residual: self.poisson_residual(state),
        })
    }

    /// Relative max-norm residual of the stored potential against the stored charge.
    pub fn poisson_residual(&self, state: &SimState) -> f64 {
        let rho0 = match state.field.bc {
            BoundaryCondition::Dirichlet => 0.0,
            BoundaryCondition::Neumann => state.field.rho0,
        };
        self.solver.residual_of(&state.field, &state.charge, rho0)
    }

    /// Rows `species,cell,vnode,f,x,y,z,vx,vy,vz`; readable by the table datum.
    pub fn write_density_csv<W: Write>(&self, mut w: W, density: &KineticDensity) -> Result<()> {
        writeln!(w, "species,cell,vnode,f,x,y,z,vx,vy,vz")?;
        let nv = self.n_v();
        for (s, fs) in density.f.iter().enumerate() {
            for (i, &f) in fs.iter().enumerate() {
                let (p, k) = (i / nv, i % nv);
                let x = self.cells.centers[p];
                let v = self.grid.nodes[k];
                writeln!(
                    w,
                    "{},{p},{k},{f:.17e},{},{},{},{},{},{}",
                    species_name(s),
                    x[0],
                    x[1],
                    x[2],
                    v[0],
                    v[1],
                    v[2]
                )?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;

/// Builds the simulator of a scenario and its initial state.
pub fn initialize(scenario: Scenario) -> Result<(Simulator, SimState)> {
    let sim = Simulator::new(scenario)?;
    let state = sim.initialize()?;
    Ok((sim, state))
}
