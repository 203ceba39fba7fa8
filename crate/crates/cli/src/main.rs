use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use vpb_core::characteristics::{
    kinetic_weight_alpha, tilde_alpha, ConductorBall, Integrator, PhaseState, PotentialField, Species, WeightParams,
    ZeroField,
};
use vpb_core::field::{boundary_sign_condition, hopf_lower_bound, FieldSolver, SpatialMesh};
use vpb_core::math::split_seed;
use vpb_core::simulator::{parse_scenario, write_diagnostics_csv, Scenario, Simulator};
use vpb_core::wall::{build_cycles, cycle_measure_weight, survival_curve};
use vpb_core::{verify, Error, LevelSetDomain, Vec3};

#[derive(Parser)]
#[command(name = "vpb", version, about = "Vlasov-Poisson-Boltzmann numerical lab")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; falls back to `output.dir`, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario and write per-step diagnostics.
    Simulate,
    /// Backward characteristic of one phase-space point.
    Trace(PointArgs),
    /// Stochastic diffuse cycles from one phase-space point.
    Cycles {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 12)]
        l_max: usize,
        /// Defaults to `norms.varpi`.
        #[arg(long)]
        varpi: Option<f64>,
    },
    /// Exit-time and level-set weights at seeded phase-space points.
    Weights {
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = FieldChoice::Zero)]
        field: FieldChoice,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
    },
    /// Solve the Poisson problem for a preset source.
    Poisson {
        #[arg(long, value_enum, default_value_t = Source::Uniform)]
        source: Source,
        #[arg(long, value_enum, default_value_t = Bc::Dirichlet)]
        bc: Bc,
        /// Defaults to `mesh.x_resolution`.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Run property suites; exit 1 if any check fails.
    Verify {
        /// `all` or a comma-separated list of suite names.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Args)]
struct PointArgs {
    /// Position as `x,y,z`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    x: Vec3,
    /// Velocity as `vx,vy,vz`.
    #[arg(long, value_parser = parse_vec3, default_value = "1,0,0")]
    v: Vec3,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    #[arg(long, value_enum, default_value_t = SpeciesChoice::Plus)]
    species: SpeciesChoice,
    #[arg(long, value_enum, default_value_t = FieldChoice::Zero)]
    field: FieldChoice,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldChoice {
    Zero,
    /// Uniformly charged unit ball with φ = 0 on the sphere.
    Conductor,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpeciesChoice {
    Plus,
    Minus,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Uniform,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bc {
    Dirichlet,
    Neumann,
}

enum Failure {
    /// Exit 1.
    Check(String),
    /// Exit 2.
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ScenarioParse { .. }
            | Error::ScenarioRange { .. }
            | Error::InvalidParameter(_)
            | Error::Io(_)
            | Error::CflViolation { .. } => Failure::Config(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok(Vec3::new(a, b, c)),
        _ => Err(format!("expected three comma-separated numbers, got {}", parts.len())),
    }
}

struct Ctx {
    scenario: Scenario,
    out: PathBuf,
    config_hash: String,
}

impl Ctx {
    fn load(common: &Common) -> Result<Self, Failure> {
        let mut scenario = match &common.scenario {
            Some(p) => parse_scenario(p)?,
            None => Scenario::default(),
        };
        if let Some(seed) = common.seed {
            scenario.seed = seed;
        }
        let out = common
            .out
            .clone()
            .or_else(|| scenario.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        let canonical = scenario.to_toml_string()?;
        let config_hash = Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        fs::create_dir_all(&out)?;
        Ok(Ctx {
            scenario,
            out,
            config_hash,
        })
    }

    fn domain(&self) -> Result<LevelSetDomain, Failure> {
        Ok(self.scenario.domain()?)
    }

    fn params(&self, domain: &LevelSetDomain) -> Result<WeightParams, Failure> {
        Ok(WeightParams::for_domain(domain, self.scenario.norms.epsilon)?)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn log(&self, msg: &str) {
        if self.scenario.output.verbosity > 0 {
            eprintln!("{msg}");
        }
    }

    /// Writes `<command>.json` and echoes it on stdout.
    fn summary(&self, command: &str, seeds: Value, body: Value) -> Result<(), Failure> {
        let doc = json!({
            "tool": "vpb",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config_hash": self.config_hash,
            "seeds": seeds,
            "result": body,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Config(e.to_string()))? + "\n";
        fs::write(self.path(&format!("{command}.json")), &text)?;
        print!("{text}");
        Ok(())
    }
}

fn write_file(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> vpb_core::Result<()>) -> Result<(), Failure> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn field_of(choice: FieldChoice) -> Box<dyn PotentialField> {
    match choice {
        FieldChoice::Zero => Box::new(ZeroField),
        FieldChoice::Conductor => Box::new(ConductorBall::unit()),
    }
}

fn require_unit_ball(ctx: &Ctx, choice: FieldChoice) -> Result<(), Failure> {
    if matches!(choice, FieldChoice::Conductor) && ctx.scenario.domain != "unit_ball" {
        return Err(Failure::Config("the conductor field is defined on the unit ball only".into()));
    }
    Ok(())
}

fn phase_state(p: &PointArgs) -> PhaseState {
    PhaseState {
        t: p.t,
        x: p.x,
        v: p.v,
        iota: match p.species {
            SpeciesChoice::Plus => Species::Plus,
            SpeciesChoice::Minus => Species::Minus,
        },
    }
}

fn vec_json(v: Vec3) -> Value {
    json!([v[0], v[1], v[2]])
}

/// NaN and infinities become `null` in JSON.
fn num(x: f64) -> Value {
    json!(x)
}

fn simulate(ctx: &Ctx) -> Result<(), Failure> {
    let sc = &ctx.scenario;
    ctx.log("assembling operators");
    let sim = Simulator::new(sc.clone())?;
    let state = sim.initialize()?;
    ctx.log(&format!("compatibility residual {:e}", state.compatibility_residual));
    let end = sim.run(state, sc.time.t_end, sc.time.dt)?;
    write_file(&ctx.path("diagnostics.csv"), |w| write_diagnostics_csv(w, &end.history))?;
    if sc.output.snapshots {
        write_file(&ctx.path("density.csv"), |w| sim.write_density_csv(w, &end.density))?;
        write_file(&ctx.path("field.csv"), |w| end.field.write_csv(w))?;
    }
    let first = &end.history[0];
    let last = end.history.last().unwrap_or(first);
    let drift: Vec<f64> = first
        .mass
        .iter()
        .zip(&last.mass)
        .map(|(a, b)| if *a == 0.0 { b - a } else { (b - a) / a })
        .collect();
    let min_sign = end.history.iter().map(|r| r.sign_margin).fold(f64::INFINITY, f64::min);
    let body = json!({
        "steps": end.step,
        "t": end.t,
        "compatibility_residual": end.compatibility_residual,
        "relative_mass_drift": drift,
        "min_sign_margin": num(min_sign),
        "final": {
            "sup_norm": last.sup_norm,
            "w1p": num(last.w1p),
            "mixed_norm": last.mixed_norm,
            "nu_margin": num(last.nu_margin),
            "negative_nodes": last.negative_nodes,
            "poisson_residual": last.poisson_residual,
        },
        "files": if sc.output.snapshots { json!(["diagnostics.csv", "density.csv", "field.csv"]) } else { json!(["diagnostics.csv"]) },
    });
    ctx.summary("simulate", json!({ "scenario": sc.seed }), body)
}

fn trace(ctx: &Ctx, p: &PointArgs) -> Result<(), Failure> {
    require_unit_ball(ctx, p.field)?;
    let domain = ctx.domain()?;
    let field = field_of(p.field);
    let integ = Integrator::default();
    let st = phase_state(p);
    let (samples, exited) = integ.trajectory(&domain, field.as_ref(), &st, 0.0)?;
    write_file(&ctx.path("trace.csv"), |w| {
        writeln!(w, "s,x,y,z,vx,vy,vz")?;
        for s in &samples {
            writeln!(w, "{},{},{},{},{},{},{}", s.s, s.x[0], s.x[1], s.x[2], s.v[0], s.v[1], s.v[2])?;
        }
        Ok(())
    })?;
    let params = ctx.params(&domain)?;
    let exit = integ.backward_exit_capped(&domain, field.as_ref(), &st, st.t)?;
    let alpha = kinetic_weight_alpha(&integ, &domain, field.as_ref(), &st, &params)?;
    let alpha_tilde = tilde_alpha(&domain, field.as_ref(), &st, &params).ok();
    let body = json!({
        "samples": samples.len(),
        "reached_boundary": exited,
        "exit": {
            "bounced": exit.bounced,
            "t_b": exit.t_b,
            "x_b": vec_json(exit.x_b),
            "v_b": vec_json(exit.v_b),
        },
        "alpha": alpha,
        "alpha_tilde": alpha_tilde,
        "files": ["trace.csv"],
    });
    ctx.summary("trace", json!({ "scenario": ctx.scenario.seed }), body)
}

fn cycles(ctx: &Ctx, p: &PointArgs, count: usize, l_max: usize, varpi: Option<f64>) -> Result<(), Failure> {
    require_unit_ball(ctx, p.field)?;
    let domain = ctx.domain()?;
    let field = field_of(p.field);
    let varpi = varpi.unwrap_or(ctx.scenario.norms.varpi);
    let seed = split_seed(ctx.scenario.seed, 1);
    let cs = build_cycles(&Integrator::default(), &domain, field.as_ref(), &phase_state(p), seed, count, l_max)?;
    write_file(&ctx.path("cycles.csv"), |w| {
        writeln!(w, "cycle,l,t,x,y,z,vx,vy,vz,weight")?;
        for (k, c) in cs.iter().enumerate() {
            for (l, b) in c.bounces.iter().enumerate() {
                let weight = cycle_measure_weight(&domain, c, l, varpi)?;
                writeln!(
                    w,
                    "{k},{l},{},{},{},{},{},{},{},{weight}",
                    b.t, b.x[0], b.x[1], b.x[2], b.v[0], b.v[1], b.v[2]
                )?;
            }
        }
        Ok(())
    })?;
    let truncated = cs
        .iter()
        .filter(|c| matches!(c.end, vpb_core::wall::CycleEnd::Truncated))
        .count();
    let mean_len = cs.iter().map(|c| c.len() as f64).sum::<f64>() / cs.len().max(1) as f64;
    let body = json!({
        "count": cs.len(),
        "l_max": l_max,
        "varpi": varpi,
        "truncated": truncated,
        "mean_bounces": mean_len,
        "survival": survival_curve(&cs, l_max),
        "files": ["cycles.csv"],
    });
    ctx.summary("cycles", json!({ "scenario": ctx.scenario.seed, "cycles": seed }), body)
}

fn weights(ctx: &Ctx, samples: usize, choice: FieldChoice, t: f64) -> Result<(), Failure> {
    use rand::{Rng, SeedableRng};
    require_unit_ball(ctx, choice)?;
    let domain = ctx.domain()?;
    let field = field_of(choice);
    let params = ctx.params(&domain)?;
    let integ = Integrator::default();
    let seed = split_seed(ctx.scenario.seed, 2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let bb = domain.bounding_box;
    let mut rows = Vec::with_capacity(samples);
    while rows.len() < samples {
        let x = Vec3::new(
            rng.random_range(bb.min[0]..bb.max[0]),
            rng.random_range(bb.min[1]..bb.max[1]),
            rng.random_range(bb.min[2]..bb.max[2]),
        );
        if !domain.contains(x) {
            continue;
        }
        let v = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let iota = if rng.random_bool(0.5) { Species::Plus } else { Species::Minus };
        let st = PhaseState { t, x, v, iota };
        let alpha = kinetic_weight_alpha(&integ, &domain, field.as_ref(), &st, &params)?;
        let at = tilde_alpha(&domain, field.as_ref(), &st, &params).unwrap_or(f64::NAN);
        rows.push((st, alpha, at));
    }
    write_file(&ctx.path("weights.csv"), |w| {
        writeln!(w, "t,x,y,z,vx,vy,vz,species,alpha,alpha_tilde")?;
        for (s, a, at) in &rows {
            let sp = if s.iota == Species::Plus { "plus" } else { "minus" };
            writeln!(w, "{},{},{},{},{},{},{},{sp},{a},{at}", s.t, s.x[0], s.x[1], s.x[2], s.v[0], s.v[1], s.v[2])?;
        }
        Ok(())
    })?;
    let min_alpha = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let max_alpha = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let body = json!({
        "samples": rows.len(),
        "epsilon": params.epsilon,
        "delta_prime": params.delta_prime,
        "min_alpha": num(min_alpha),
        "max_alpha": num(max_alpha),
        "files": ["weights.csv"],
    });
    ctx.summary("weights", json!({ "scenario": ctx.scenario.seed, "samples": seed }), body)
}

fn poisson(ctx: &Ctx, source: Source, bc: Bc, resolution: Option<usize>) -> Result<(), Failure> {
    let res = resolution.unwrap_or(ctx.scenario.mesh.x_resolution);
    let solver = FieldSolver::new(Arc::new(SpatialMesh::new(ctx.domain()?, res)?));
    let mesh = &solver.mesh;
    let center = mesh.domain.center;
    let mut rho = match source {
        Source::Uniform => mesh.sample(|_| 1.0),
        Source::Gaussian => mesh.sample(|x| (-(x - center).norm_sq() / 0.18).exp()),
    };
    let (state, rho0) = match bc {
        Bc::Dirichlet => (solver.solve_dirichlet(&rho)?, 0.0),
        Bc::Neumann => {
            // the zero-mean part of the source
            let vol = mesh.inside_nodes.len() as f64;
            let mean = mesh.inside_nodes.iter().map(|&i| rho[i]).sum::<f64>() / vol;
            for &i in &mesh.inside_nodes {
                rho[i] -= mean;
            }
            (solver.solve_neumann(&rho, 0.0)?, mean)
        }
    };
    write_file(&ctx.path("field.csv"), |w| state.write_csv(w))?;
    let residual = solver.residual_of(&state, &rho, 0.0);
    let mut body = json!({
        "resolution": res,
        "inside_nodes": mesh.inside_nodes.len(),
        "bc": match bc { Bc::Dirichlet => "dirichlet", Bc::Neumann => "neumann" },
        "removed_mean": rho0,
        "residual": residual,
        "files": ["field.csv"],
    });
    if let Bc::Dirichlet = bc {
        let hopf = hopf_lower_bound(&solver, &rho)?;
        body["sign_margin"] = json!(boundary_sign_condition(&state)?);
        body["hopf"] = json!({
            "min_inward_derivative": hopf.min_inward_derivative,
            "moment": hopf.moment,
            "feasible_c": num(hopf.feasible_c),
            "boundary_points": hopf.boundary_points,
        });
    }
    ctx.summary("poisson", json!({ "scenario": ctx.scenario.seed }), body)
}

fn run_verify(ctx: &Ctx, selector: &str) -> Result<(), Failure> {
    let suites = verify::parse_selector(selector)?;
    let report = verify::run(&suites, ctx.scenario.seed, &ctx.scenario);
    for c in &report.checks {
        ctx.log(&format!("{} {}/{} = {:e}", if c.pass { "PASS" } else { "FAIL" }, c.suite, c.name, c.metric));
    }
    let body = serde_json::to_value(&report).map_err(|e| Failure::Config(e.to_string()))?;
    ctx.summary("verify", json!({ "scenario": ctx.scenario.seed }), body)?;
    if report.pass {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{}/{}", c.suite, c.name))
            .collect();
        Err(Failure::Check(format!("failed checks: {}", failed.join(", "))))
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let ctx = Ctx::load(&cli.common)?;
    match &cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Trace(p) => trace(&ctx, p),
        Command::Cycles {
            point,
            count,
            l_max,
            varpi,
        } => cycles(&ctx, point, *count, *l_max, *varpi),
        Command::Weights { samples, field, t } => weights(&ctx, *samples, *field, *t),
        Command::Poisson {
            source,
            bc,
            resolution,
        } => poisson(&ctx, *source, *bc, *resolution),
        Command::Verify { suite } => run_verify(&ctx, suite),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("vpb: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("vpb: error: {msg}");
            ExitCode::from(2)
        }
    }
}
