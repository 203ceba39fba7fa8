use super::*;
use crate::collision::sqrt_maxwellian;
use crate::wall::WallModel;
use proptest::prelude::{prop_assert, proptest, ProptestConfig};

fn bump(amplitude: Vec<f64>) -> InitialDatum {
    InitialDatum::GaussianBump {
        x0: [0.2, 0.0, 0.0],
        v0: [0.5, 0.0, 0.0],
        amplitude,
        width_x: 0.3,
        width_v: 1.0,
    }
}

fn quiet(mut sc: Scenario) -> Scenario {
    sc.norms.w1p_every = 1000;
    sc.norms.margin_samples = 16;
    sc
}

fn sim(sc: Scenario) -> Simulator {
    Simulator::new(sc).unwrap()
}

#[test]
fn empty_scenario_takes_defaults() {
    let sc = Scenario::from_toml_str("").unwrap();
    assert_eq!(sc, Scenario::default());
    let round = Scenario::from_toml_str(&sc.to_toml_string().unwrap()).unwrap();
    assert_eq!(round, sc);
}

#[test]
fn scenario_ranges_are_strict_and_collected() {
    let err = Scenario::from_toml_str("[norms]\np = 7.0\nvartheta = 0.3\n").unwrap_err();
    let Error::ScenarioRange { violations } = err else { panic!("{err:?}") };
    assert!(violations.iter().any(|v| v.starts_with("norms.p = 7") && v.contains("(3, 6)")));
    assert!(violations.iter().any(|v| v.starts_with("norms.vartheta")));
    assert!(violations.len() >= 2);
    assert!(Scenario::from_toml_str("[norms]\np = 4.0\nbeta = 0.5\n").is_err());
    assert!(Scenario::from_toml_str("[norms]\np = 4.0\nbeta = 0.51\n").is_ok());
}

#[test]
fn unknown_keys_are_parse_errors_with_a_line() {
    let err = Scenario::from_toml_str("species = 1\n\n[mesh]\nv_pionts = 8\n").unwrap_err();
    match err {
        Error::ScenarioParse { line, message } => {
            assert_eq!(line, Some(4), "{message}");
            assert!(message.contains("v_pionts"));
        }
        other => panic!("{other:?}"),
    }
    let err = Scenario::from_toml_str("[initial]\npreset = \"sine\"\n").unwrap_err();
    assert!(matches!(err, Error::ScenarioParse { .. }));
}

#[test]
fn scenario_file_round_trip() {
    let text = "species = 2\nboundary = \"conductor\"\n[initial]\npreset = \"gaussian_bump\"\nx0 = [0.1, 0.0, 0.0]\namplitude = [0.1, 0.1]\n[wall]\nvariant = \"cercignani_lampis\"\nr_perp = 0.5\nr_par = 0.7\n";
    let dir = std::env::temp_dir().join(format!("vpb-scenario-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("s.toml");
    std::fs::write(&path, text).unwrap();
    let sc = parse_scenario(&path).unwrap();
    assert_eq!(sc.species, 2);
    assert_eq!(sc.boundary, FieldBoundary::Conductor);
    assert!(matches!(sc.wall, WallModel::CercignaniLampis { t_wall, .. } if t_wall == 1.0));
    let bad = "species = 2\n[wall]\nvariant = \"cercignani_lampis\"\nr_perp = 0.5\nr_par = 0.7\nt_wall = 2.0\n";
    std::fs::write(&path, bad).unwrap();
    assert!(matches!(parse_scenario(&path), Err(Error::ScenarioRange { .. })));
    assert!(parse_scenario(dir.join("missing.toml")).is_err());
}

#[test]
fn equilibrium_initial_state() {
    let (s, st) = initialize(quiet(Scenario::default())).unwrap();
    assert!(st.field.grad.iter().all(|g| g.norm() < 1e-14));
    assert_eq!(st.compatibility_residual, 0.0);
    let r = &st.history[0];
    assert_eq!(r.sup_norm, 0.0);
    assert_eq!(r.negative_nodes, 0);
    let expect = s.cells.len() as f64 * s.cells.h.powi(3) * s.grid.integrate(&s.grid.sample(maxwellian));
    assert!((r.mass[0] / expect - 1.0).abs() < 1e-14);
}

#[test]
fn wall_law_violation_is_reported() {
    let mut sc = quiet(Scenario::default());
    sc.initial = InitialDatum::GaussianBump {
        x0: [0.8, 0.0, 0.0],
        v0: [-1.0, 0.0, 0.0],
        amplitude: vec![0.2],
        width_x: 0.3,
        width_v: 0.8,
    };
    let s = sim(sc.clone());
    let st = s.initialize().unwrap();
    assert!(st.compatibility_residual > 1e-3, "{}", st.compatibility_residual);
    sc.compatibility.action = CompatibilityAction::Error;
    assert!(matches!(sim(sc).initialize(), Err(Error::CompatibilityViolation { .. })));
}

#[test]
fn neutral_two_species_datum_has_no_field() {
    let mut sc = quiet(Scenario::default());
    sc.species = 2;
    sc.initial = bump(vec![0.1, 0.1]);
    for boundary in [FieldBoundary::Insulator, FieldBoundary::Conductor] {
        sc.boundary = boundary;
        let (_, st) = initialize(sc.clone()).unwrap();
        assert!(st.charge.iter().all(|c| c.abs() < 1e-15));
        assert!(st.field.grad.iter().all(|g| g.norm() < 1e-12));
    }
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let mut sc = quiet(Scenario::default());
    sc.species = 2;
    let s = sim(sc);
    let mut st = s.initialize().unwrap();
    for _ in 0..100 {
        let next = s.step(&st, 0.025).unwrap();
        let drift = next.density.f.iter().flatten().zip(st.density.f.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(drift < 1e-8);
        st = next;
    }
    assert!(st.field.grad.iter().all(|g| g.norm() == 0.0));
}

fn single_velocity(v: Vec3) -> VelocityGrid {
    VelocityGrid {
        n: 1,
        h: 1.0,
        v_max: v.norm(),
        nodes: vec![v],
        weights: vec![1.0],
    }
}

#[test]
fn periodic_transport_shifts_exactly_at_unit_courant() {
    let n = 8;
    let h = 1.0 / n as f64;
    let cells = XCells::periodic(n, h);
    let grid = single_velocity(Vec3::new(1.0, 0.0, 0.0));
    let f0: Vec<f64> = (0..cells.len()).map(|i| (i * 7 % 13) as f64).collect();
    let f1 = advect_x(&cells, &grid, None, &f0, h);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let here = (i * n + j) * n + k;
                let from = (((i + n - 1) % n) * n + j) * n + k;
                assert_eq!(f1[here], f0[from]);
            }
        }
    }
}

/// L¹ error after advecting a smooth periodic profile to `t = 1/4`.
fn oblique_error(n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let cells = XCells::periodic(n, h);
    let v = Vec3::new(1.0, 0.5, 0.25);
    let grid = single_velocity(v);
    let profile = |x: Vec3| {
        let tau = 2.0 * std::f64::consts::PI;
        (tau * x[0]).sin() * (tau * x[1]).cos() + 0.5 * (tau * x[2]).sin()
    };
    let mut f: Vec<f64> = cells.centers.iter().map(|&x| profile(x)).collect();
    let dt = 0.5 * h / 1.75;
    let steps = (0.25 / dt).round() as usize;
    let dt = 0.25 / steps as f64;
    for _ in 0..steps {
        f = advect_x(&cells, &grid, None, &f, dt);
    }
    cells
        .centers
        .iter()
        .zip(&f)
        .map(|(&x, y)| (profile(x - v * 0.25) - y).abs())
        .sum::<f64>()
        * h.powi(3)
}

#[test]
fn periodic_transport_is_first_order() {
    let e16 = oblique_error(16);
    let e32 = oblique_error(32);
    let order = (e16 / e32).log2();
    assert!(order > 0.8 && order < 1.2, "{e16} {e32} {order}");
}

#[test]
fn mass_is_conserved_on_the_perturbed_scenario() {
    for wall in [WallModel::Diffuse, WallModel::CercignaniLampis { r_perp: 0.5, r_par: 0.7, t_wall: 1.0 }] {
        let mut sc = quiet(Scenario::default());
        sc.initial = bump(vec![0.05]);
        sc.wall = wall;
        let s = sim(sc);
        let st = s.run(s.initialize().unwrap(), 0.5, 0.025).unwrap();
        let m0 = st.history[0].mass[0];
        for r in &st.history {
            assert!((r.mass[0] / m0 - 1.0).abs() < 1e-12, "{wall:?} {r:?}");
        }
    }
}

#[test]
fn conductor_keeps_the_boundary_sign() {
    let mut sc = quiet(Scenario::default());
    sc.boundary = FieldBoundary::Conductor;
    sc.representation = Representation::SqrtMu;
    sc.initial = bump(vec![0.05]);
    let s = sim(sc);
    let st = s.run(s.initialize().unwrap(), 0.5, 0.025).unwrap();
    assert_eq!(st.history.len(), 21);
    for r in &st.history {
        assert!(r.sign_margin > 0.2, "{r:?}");
        assert!(r.poisson_residual <= s.solver.tol);
    }
}

#[test]
fn field_is_consistent_after_every_step() {
    let mut sc = quiet(Scenario::default());
    sc.species = 2;
    sc.initial = bump(vec![0.1, 0.02]);
    let s = sim(sc);
    let st = s.run(s.initialize().unwrap(), 0.1, 0.025).unwrap();
    for r in &st.history {
        assert!(r.poisson_residual <= s.solver.tol, "{r:?}");
    }
    assert!(st.field.grad.iter().any(|g| g.norm() > 1e-4));
}

#[test]
fn species_swap_maps_solutions_to_solutions() {
    let mut sc = quiet(Scenario::default());
    sc.species = 2;
    sc.boundary = FieldBoundary::Conductor;
    sc.initial = bump(vec![0.2, 0.05]);
    let s = sim(sc);
    let a = s.initialize().unwrap();
    let mut swapped = a.density.clone();
    swapped.f.swap(0, 1);
    let b = s.initialize_with(swapped).unwrap();
    let a1 = s.step(&a, 0.025).unwrap();
    let b1 = s.step(&b, 0.025).unwrap();
    let scale = a1.density.f.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a1.density.f[0].iter().zip(&b1.density.f[1]).chain(a1.density.f[1].iter().zip(&b1.density.f[0])) {
        assert!((x - y).abs() < 1e-6 * scale);
    }
    let pscale = a1.field.phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(pscale > 1e-4);
    for (x, y) in a1.field.phi.iter().zip(&b1.field.phi) {
        assert!((x + y).abs() < 1e-6 * pscale);
    }
}

#[test]
fn runs_are_deterministic() {
    let csv = || {
        let mut sc = Scenario::default();
        sc.initial = bump(vec![0.05]);
        sc.norms.w1p_every = 2;
        sc.seed = 11;
        let s = sim(sc);
        let st = s.run(s.initialize().unwrap(), 0.1, 0.025).unwrap();
        let mut out = Vec::new();
        write_diagnostics_csv(&mut out, &st.history).unwrap();
        out
    };
    let a = csv();
    assert_eq!(a, csv());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("step,t,mass_plus,sup_norm"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn cfl_violations_are_errors() {
    let s = sim(quiet(Scenario::default()));
    let st = s.initialize().unwrap();
    assert!(matches!(s.step(&st, 0.05), Err(Error::CflViolation { .. })));
}

#[test]
fn sup_norm_of_sqrt_mu() {
    let grid = VelocityGrid::new(4.5, 8);
    let f = grid.sample(sqrt_maxwellian);
    let n = weighted_sup_norm(&f, &grid, 0.125);
    // e^{|v|²/8} e^{−|v|²/4} (2π)^{−3/4} decreases in |v|, so the smallest speed wins
    let r2 = grid.nodes.iter().map(|v| v.norm_sq()).fold(f64::INFINITY, f64::min);
    let expect = (-r2 / 8.0).exp() * (2.0 * std::f64::consts::PI).powf(-0.75);
    assert!((n / expect - 1.0).abs() < 1e-14);
    assert_eq!(weighted_sup_norm(&vec![0.0; f.len()], &grid, 0.125), 0.0);
    let doubled: Vec<f64> = f.iter().map(|x| 2.0 * x).collect();
    assert!((weighted_sup_norm(&doubled, &grid, 0.125) / n - 2.0).abs() < 1e-15);
}

#[test]
fn mixed_norm_factorizes() {
    let nv = 27;
    let cells = 10;
    let w: Vec<f64> = (0..nv).map(|k| 0.5 + 0.01 * k as f64).collect();
    let a: Vec<f64> = (0..cells).map(|c| 1.0 + (c as f64).sin()).collect();
    let b: Vec<f64> = (0..nv).map(|k| (k as f64 * 0.3).cos()).collect();
    let g: Vec<f64> = (0..cells * nv).map(|i| a[i / nv] * b[i % nv]).collect();
    let delta = 0.1;
    let vol = 0.125;
    let la = (a.iter().map(|x| vol * x.abs().powi(3)).sum::<f64>()).cbrt();
    let lb = b.iter().zip(&w).map(|(x, wk)| wk * x.abs().powf(1.0 + delta)).sum::<f64>().powf(1.0 / (1.0 + delta));
    let m = mixed_norm_l3x_l1pdelta_v(&g, nv, vol, &w, delta);
    assert!((m / (la * lb) - 1.0).abs() < 1e-13);
    assert_eq!(mixed_norm_l3x_l1pdelta_v(&vec![0.0; g.len()], nv, vol, &w, delta), 0.0);
}

fn compact_bump(s: &Simulator, radius: f64) -> KineticDensity {
    let nv = s.grid.len();
    let mut f = vec![0.0; s.cells.len() * nv];
    for (p, &x) in s.cells.centers.iter().enumerate() {
        let r2 = x.norm_sq() / (radius * radius);
        if r2 < 1.0 {
            for (k, &v) in s.grid.nodes.iter().enumerate() {
                f[p * nv + k] = (1.0 - r2).powi(4) * (-0.5 * v.norm_sq()).exp() * (1.0 + v[0]);
            }
        }
    }
    KineticDensity {
        representation: Representation::Perturbation,
        n_v: nv,
        f: vec![f],
    }
}

#[test]
fn w1p_norm_with_interior_support() {
    let s = sim(quiet(Scenario::default()));
    let st = s.initialize_with(compact_bump(&s, 0.4)).unwrap();
    let with = s.weighted_w1p_norm(&st, 0.55, 4.0, 0.125, AlphaWeight::Kinetic).unwrap();
    let without = s.weighted_w1p_norm(&st, 0.55, 4.0, 0.125, AlphaWeight::Off).unwrap();
    assert!(without > 0.0);
    // the support is farther than |v|ε from the wall, so α = 1 on it
    assert!((with / without - 1.0).abs() < 1e-12, "{with} {without}");
    let nv = s.grid.len();
    let flat = KineticDensity {
        representation: Representation::Perturbation,
        n_v: nv,
        f: vec![vec![0.3; s.cells.len() * nv]],
    };
    let st = s.initialize_with(flat).unwrap();
    assert_eq!(s.weighted_w1p_norm(&st, 0.55, 4.0, 0.125, AlphaWeight::Kinetic).unwrap(), 0.0);
}

/// Fitted log-slope of the weighted Sobolev norm over the seeded short run.
const W1P_SLOPE_REGRESSION: f64 = -2.850151177389;

#[test]
fn w1p_norm_grows_at_most_exponentially() {
    let mut sc = Scenario::default();
    sc.initial = bump(vec![0.05]);
    sc.norms.w1p_every = 1;
    sc.norms.margin_samples = 16;
    let s = sim(sc);
    let st = s.run(s.initialize().unwrap(), 0.25, 0.025).unwrap();
    let t: Vec<f64> = st.history.iter().map(|r| r.t).collect();
    let l: Vec<f64> = st.history.iter().map(|r| r.w1p.ln()).collect();
    let slope = crate::math::fit_slope(&t, &l);
    println!("w1p slope = {slope:.12e}");
    assert!((slope - W1P_SLOPE_REGRESSION).abs() < 1e-6 * W1P_SLOPE_REGRESSION.abs().max(1.0));
}

#[test]
fn nu_margin_is_monotone_in_varpi() {
    let s = sim(quiet(Scenario::default()));
    let st = s.initialize().unwrap();
    let mut last = f64::NEG_INFINITY;
    let mut first_positive = None;
    for varpi in [0.0, 1.0, 10.0, 100.0] {
        let m = s.nu_varpi_margin(&st, varpi, 512).unwrap();
        assert!(m >= last);
        last = m;
        if m > 0.0 && first_positive.is_none() {
            first_positive = Some(varpi);
        }
    }
    assert!(last > 0.0);
    println!("first positive varpi on the sweep = {first_positive:?}");
}

#[test]
fn twin_runs() {
    let mut sc = quiet(Scenario::default());
    sc.initial = bump(vec![0.05]);
    let s = sim(sc);
    let h = s.initial_deviation().unwrap();
    let f0 = KineticDensity::from_deviation(Representation::Perturbation, &s.grid, &h);
    let same = s.twin_run_stability(f0.clone(), f0.clone(), 0.1, 0.025, 0.1).unwrap();
    assert!(same.distances.iter().all(|&d| d == 0.0));
    let mut g0 = f0.clone();
    for x in g0.f[0].iter_mut() {
        *x *= 1.01;
    }
    let vol = s.cells.h.powi(3);
    let r = s.twin_run_stability(f0.clone(), g0.clone(), 0.25, 0.025, 0.1).unwrap();
    assert_eq!(r.distances[0], lp_distance(&f0, &g0, vol, &s.grid.weights, 1.1));
    println!("twin log slope = {:.12e}", r.log_slope);
    assert!((r.log_slope - TWIN_SLOPE_REGRESSION).abs() < 1e-6 * TWIN_SLOPE_REGRESSION.abs().max(1.0));
}

/// Log-distance slope of the seeded twin pair.
const TWIN_SLOPE_REGRESSION: f64 = -1.840958277459e-1;

#[test]
fn density_table_round_trip() {
    let mut sc = quiet(Scenario::default());
    sc.initial = bump(vec![0.05]);
    let s = sim(sc.clone());
    let st = s.initialize().unwrap();
    let dir = std::env::temp_dir().join(format!("vpb-table-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("f.csv");
    let mut out = Vec::new();
    s.write_density_csv(&mut out, &st.density).unwrap();
    std::fs::write(&path, out).unwrap();
    sc.initial = InitialDatum::Table {
        path: path.to_string_lossy().into_owned(),
    };
    let back = sim(sc).initialize().unwrap();
    for (a, b) in back.density.f[0].iter().zip(&st.density.f[0]) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
    }
}

#[test]
fn negative_densities_are_counted_not_clipped() {
    let mut sc = quiet(Scenario::default());
    sc.initial = bump(vec![-0.5]);
    let s = sim(sc);
    let st = s.initialize().unwrap();
    let neg = st.history[0].negative_nodes;
    assert!(neg > 0);
    let h = st.density.deviation(&s.grid);
    let min = h[0].iter().zip(s.grid.nodes.iter().cycle()).map(|(x, v)| maxwellian(*v) + x).fold(f64::INFINITY, f64::min);
    assert!(min < 0.0);
}

#[test]
fn collisions_relax_an_anisotropic_temperature() {
    let mut sc = quiet(Scenario::default());
    sc.mesh.x_resolution = 4;
    let s = sim(sc);
    let nv = s.grid.len();
    let shape: Vec<f64> = s.grid.nodes.iter().map(|v| 0.05 * (v[0] * v[0] - v[1] * v[1]) * maxwellian(*v)).collect();
    let mut cell = vec![shape.clone()];
    let size = |h: &[f64]| h.iter().map(|x| x.abs()).sum::<f64>();
    let before = size(&cell[0]);
    for _ in 0..10 {
        s.collider.step_cell(&mut cell, 0.05).unwrap();
    }
    assert!(size(&cell[0]) < 0.8 * before, "{} {}", size(&cell[0]), before);
    let d: Vec<f64> = cell[0].iter().zip(&shape).map(|(a, b)| a - b).collect();
    for m in [
        s.grid.integrate(&d),
        s.grid.moment(&d, |v| v[0]),
        s.grid.moment(&d, |v| v[2]),
        s.grid.moment(&d, |v| v.norm_sq()),
    ] {
        assert!(m.abs() < 1e-14);
    }
    assert_eq!(nv, cell[0].len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn wall_closed_transport_conserves_mass(seed in 0u64..1000, dt in 0.001f64..0.03) {
        let s = sim(quiet(Scenario::default()));
        let nv = s.grid.len();
        let f: Vec<f64> = (0..s.cells.len() * nv)
            .map(|i| (crate::math::split_seed(seed, i as u64) % 1000) as f64 / 1000.0)
            .collect();
        let g = advect_x(&s.cells, &s.grid, Some(&s.wall), &f, dt);
        let mass = |x: &[f64]| x.iter().enumerate().map(|(i, y)| y * s.grid.weights[i % nv]).sum::<f64>();
        prop_assert!((mass(&g) / mass(&f) - 1.0).abs() < 1e-13);
        prop_assert!(g.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn collision_increments_conserve(seed in 0u64..1000) {
        let s = sim(quiet(Scenario { species: 2, ..Scenario::default() }));
        let nv = s.grid.len();
        let mut cell: Vec<Vec<f64>> = (0..2)
            .map(|sp| (0..nv).map(|k| {
                let r = (crate::math::split_seed(seed, (sp * nv + k) as u64) % 1000) as f64 / 1000.0 - 0.5;
                0.1 * r * maxwellian(s.grid.nodes[k])
            }).collect())
            .collect();
        let old = cell.clone();
        s.collider.step_cell(&mut cell, 0.05).unwrap();
        let d: Vec<Vec<f64>> = cell.iter().zip(&old).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect();
        for ds in &d {
            prop_assert!(s.grid.integrate(ds).abs() < 1e-14);
        }
        for phi in [|v: Vec3| v[0], |v: Vec3| v[1], |v: Vec3| v[2], |v: Vec3| v.norm_sq()] {
            let total: f64 = d.iter().map(|ds| s.grid.moment(ds, phi)).sum();
            prop_assert!(total.abs() < 1e-14);
        }
    }
}
