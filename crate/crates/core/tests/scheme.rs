use fastconv::grid::integrate;
use fastconv::stepper::{cfl_dt, capped_dt, run_from_field, step_imex, SolverKind};
use fastconv::{Field, FluxParams, Grid, InitialRecipe, OperatorChoice, RunConfig};
use proptest::prelude::*;

fn config(grid: Grid, op: OperatorChoice, q: f64) -> RunConfig {
    RunConfig::new("t", grid, op, FluxParams::new(q, 1e-6), 1.0, InitialRecipe::Box { width: 1.0 })
}

fn operators() -> impl Strategy<Value = OperatorChoice> {
    prop_oneof![
        Just(OperatorChoice::FullLaplacian),
        Just(OperatorChoice::ReducedLaplacian),
        (0.0..0.5f64).prop_map(|eps| OperatorChoice::ReducedPlusEps { eps }),
    ]
}

fn grid_1d() -> Grid {
    Grid::new(&[48], &[0.05], &[-1.225]).unwrap()
}

fn grid_2d() -> Grid {
    Grid::new(&[10, 12], &[0.1, 0.05], &[-0.45, -0.325]).unwrap()
}

fn l1(a: &Field, b: &Field) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.grid().cell_volume()
}

fn field(g: Grid, v: Vec<f64>) -> Field {
    Field::new(g, v).unwrap()
}

/// Largest step allowed for both fields.
fn joint_dt(cfg: &RunConfig, a: &Field, b: &Field, frac: f64) -> f64 {
    frac * cfl_dt(a, cfg).unwrap().min(cfl_dt(b, cfg).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn step_conserves_mass(
        v in prop::collection::vec(-2.0..2.0f64, 48),
        op in operators(),
        q in 0.55..0.95f64,
        frac in 0.1..1.0f64,
    ) {
        let cfg = config(grid_1d(), op, q);
        let f = field(grid_1d(), v);
        let dt = frac * cfl_dt(&f, &cfg).unwrap();
        let g = step_imex(&f, dt, &cfg).unwrap();
        let scale = f.values().iter().map(|x| x.abs()).sum::<f64>() * f.grid().cell_volume();
        prop_assert!((integrate(&g) - integrate(&f)).abs() <= 1e-12 * scale + cfg.lin_tol * scale);
    }

    #[test]
    fn step_conserves_mass_2d(
        v in prop::collection::vec(0.0..3.0f64, 120),
        op in operators(),
        q in 0.55..0.95f64,
    ) {
        let cfg = config(grid_2d(), op, q);
        let f = field(grid_2d(), v);
        let dt = cfl_dt(&f, &cfg).unwrap();
        let g = step_imex(&f, dt, &cfg).unwrap();
        let scale = integrate(&f);
        prop_assert!((integrate(&g) - scale).abs() <= 1e-9 * scale);
    }

    #[test]
    fn step_preserves_order(
        v in prop::collection::vec(-1.0..1.0f64, 48),
        d in prop::collection::vec(0.0..1.0f64, 48),
        op in operators(),
        q in 0.55..0.95f64,
    ) {
        let cfg = config(grid_1d(), op, q);
        let f = field(grid_1d(), v.clone());
        let h = field(grid_1d(), v.iter().zip(&d).map(|(a, b)| a + b).collect());
        let dt = joint_dt(&cfg, &f, &h, 1.0);
        let (sf, sh) = (step_imex(&f, dt, &cfg).unwrap(), step_imex(&h, dt, &cfg).unwrap());
        let worst = sf.values().iter().zip(sh.values()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(worst <= 1e-9, "order violated by {worst}");
    }

    #[test]
    fn step_contracts_l1(
        a in prop::collection::vec(-1.0..1.0f64, 120),
        b in prop::collection::vec(-1.0..1.0f64, 120),
        op in operators(),
        q in 0.55..0.95f64,
    ) {
        let cfg = config(grid_2d(), op, q);
        let (f, h) = (field(grid_2d(), a), field(grid_2d(), b));
        let dt = joint_dt(&cfg, &f, &h, 1.0);
        let (sf, sh) = (step_imex(&f, dt, &cfg).unwrap(), step_imex(&h, dt, &cfg).unwrap());
        let scale = f.values().iter().chain(h.values()).map(|x| x.abs()).sum::<f64>() * f.grid().cell_volume();
        prop_assert!(l1(&sf, &sh) <= l1(&f, &h) + 2.0 * cfg.lin_tol * scale.max(1.0));
    }

    #[test]
    fn nonnegative_data_stays_nonnegative(
        v in prop::collection::vec(0.0..2.0f64, 48),
        op in operators(),
        q in 0.55..0.95f64,
    ) {
        let cfg = config(grid_1d(), op, q);
        let f = field(grid_1d(), v);
        let g = step_imex(&f, cfl_dt(&f, &cfg).unwrap(), &cfg).unwrap();
        prop_assert!(g.min() >= -cfg.lin_tol);
    }

    #[test]
    fn diffusion_obeys_max_principle(
        v in prop::collection::vec(-1.0..1.0f64, 120),
        dt in 1e-4..1.0f64,
    ) {
        let mut cfg = config(grid_2d(), OperatorChoice::FullLaplacian, 0.8);
        cfg.convection = false;
        cfg.dt_max = Some(dt);
        cfg.solver = SolverKind::ConjugateGradient;
        let f = field(grid_2d(), v);
        let g = step_imex(&f, dt, &cfg).unwrap();
        let slack = 1e-8;
        prop_assert!(g.min() >= f.min() - slack && g.max() <= f.max() + slack);
    }
}

#[test]
fn cfl_step_of_the_reference_example() {
    let g = Grid::line(-1.0, 1.0, 0.01).unwrap();
    let mut cfg = RunConfig::new("t", g, OperatorChoice::ReducedLaplacian, FluxParams::new(0.5, 0.01), 1.0, InitialRecipe::Box { width: 0.1 });
    cfg.cfl = 0.5;
    let f = Field::constant(g, 1.0);
    let l = 0.5 * 0.01f64.powf(-0.25);
    assert!((l - 1.581).abs() < 1e-3);
    let dt = cfl_dt(&f, &cfg).unwrap();
    assert!((dt - 0.5 * 0.01 / l).abs() < 1e-15);
    assert!((dt - 3.16e-3).abs() < 1e-5);
    cfg.cfl = 1.0;
    assert!((cfl_dt(&f, &cfg).unwrap() - 2.0 * dt).abs() < 1e-15);
}

#[test]
fn step_never_passes_a_scheduled_time() {
    let g = Grid::line(-1.0, 1.0, 0.01).unwrap();
    let mut cfg = RunConfig::new("t", g, OperatorChoice::ReducedLaplacian, FluxParams::new(0.5, 0.01), 1.0, InitialRecipe::Box { width: 0.1 });
    cfg.snapshot_times = vec![0.001, 0.0105, 0.5];
    let f = Field::constant(g, 1.0);
    assert!((capped_dt(&f, &cfg, 0.0).unwrap() - 0.001).abs() < 1e-15);
    assert!((capped_dt(&f, &cfg, 0.01).unwrap() - 0.0005).abs() < 1e-12);
    assert_eq!(capped_dt(&f, &cfg, 0.1).unwrap(), cfl_dt(&f, &cfg).unwrap());
}

#[test]
fn oversized_step_is_refused() {
    let cfg = config(grid_1d(), OperatorChoice::FullLaplacian, 0.75);
    let f = Field::constant(grid_1d(), 1.0);
    let dt = cfl_dt(&f, &cfg).unwrap();
    assert!(step_imex(&f, 1.01 * dt, &cfg).is_err());
}

#[test]
fn constant_field_is_a_diffusion_fixed_point() {
    let mut cfg = config(grid_2d(), OperatorChoice::FullLaplacian, 0.75);
    cfg.convection = false;
    cfg.dt_max = Some(0.3);
    let f = Field::constant(grid_2d(), 0.7);
    let g = step_imex(&f, 0.3, &cfg).unwrap();
    for v in g.values() {
        assert!((v - 0.7).abs() < 1e-12);
    }
}

fn gauss(x: f64, t: f64) -> f64 {
    (-x * x / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).sqrt()
}

fn heat_error(h: f64, dt: f64, theta: f64) -> f64 {
    let t0 = 0.05;
    let g = Grid::covering(&[-8.0], &[8.0], &[h]).unwrap();
    let mut cfg = RunConfig::new("heat", g, OperatorChoice::FullLaplacian, FluxParams::new(0.75, 0.0), 1.0, InitialRecipe::HeatKernel { t0 });
    cfg.convection = false;
    cfg.theta = theta;
    cfg.dt_max = Some(dt);
    cfg.t_end = 0.5;
    cfg.solver = SolverKind::LineDirect;
    let u0 = Field::from_fn(g, |x| gauss(x[0], t0)).unwrap();
    let u0 = u0.scale(1.0 / integrate(&u0)).unwrap();
    let traj = run_from_field(&cfg, u0).unwrap();
    let last = traj.last();
    assert!((last.t - 0.5).abs() < 1e-12);
    let exact = Field::from_fn(g, |x| gauss(x[0], 0.5 + t0)).unwrap();
    l1(&last.field, &exact)
}

#[test]
fn backward_euler_converges_to_the_heat_kernel() {
    let coarse = heat_error(0.04, 4e-3, 1.0);
    let fine = heat_error(0.02, 1e-3, 1.0);
    assert!(coarse < 2e-2, "coarse error {coarse}");
    // Both the O(dt) and the O(h²) parts shrink by four.
    let ratio = coarse / fine;
    assert!((ratio - 4.0).abs() < 1.0, "ratio {ratio}");
}

#[test]
fn crank_nicolson_error_is_second_order_in_space() {
    let a = heat_error(0.08, 2e-3, 0.5);
    let b = heat_error(0.04, 5e-4, 0.5);
    let ratio = a / b;
    assert!((ratio - 4.0).abs() < 1.0, "ratio {ratio}");
}
