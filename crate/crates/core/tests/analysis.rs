use fastconv::diagnostics::{
    comparison_check, contraction_series, energy_balance, mass_difference_drift, max_increase, primitive_sandwich,
    sign_experiment, slab_construction, tail_report, uniqueness_experiment, RunPair,
};
use fastconv::grid::{integrate, lp_norm};
use fastconv::selfsim::{self, collapse_distance, decay_fit, exponents, heat_kernel_marginal, Exponents};
use fastconv::stepper::{run_from_field, SolverKind};
use fastconv::{Field, FluxParams, Grid, InitialRecipe, OperatorChoice, RunConfig};

const PI: f64 = std::f64::consts::PI;

fn gauss(x: f64, t: f64) -> f64 {
    (-x * x / (4.0 * t)).exp() / (4.0 * PI * t).sqrt()
}

fn heat_config(t_end: f64) -> RunConfig {
    let g = Grid::covering(&[-30.0], &[30.0], &[0.05]).unwrap();
    let mut cfg = RunConfig::new("heat", g, OperatorChoice::FullLaplacian, FluxParams::new(0.75, 0.0), 1.0, InitialRecipe::HeatKernel { t0: 0.1 });
    cfg.convection = false;
    cfg.theta = 0.5;
    cfg.dt_max = Some(0.01);
    cfg.t_end = t_end;
    cfg.solver = SolverKind::LineDirect;
    cfg
}

fn conservation_law(lower: f64, upper: f64, t_end: f64) -> RunConfig {
    let g = Grid::covering(&[lower], &[upper], &[0.01]).unwrap();
    let mut cfg = RunConfig::new("cl", g, OperatorChoice::ReducedLaplacian, FluxParams::new(0.75, 1e-8), 1.0, InitialRecipe::Box { width: 0.5 });
    cfg.t_end = t_end;
    cfg.cfl = 0.9;
    cfg
}

#[test]
fn exponent_identities() {
    for (n, q) in [(1, 0.75), (2, 0.8), (2, 0.6), (1, 0.3)] {
        let e = exponents(n, q).unwrap();
        let nf = n as f64;
        assert!((2.0 * q * e.alpha - (nf + 1.0)).abs() < 1e-14);
        assert!((2.0 * q * e.beta - (nf + 1.0 - q * (nf - 1.0))).abs() < 1e-14);
        assert!((e.gamma - e.beta - 0.5 * (nf - 1.0)).abs() < 1e-14);
    }
    let e = exponents(1, 0.75).unwrap();
    assert!((e.lp_slope(f64::INFINITY) + 4.0 / 3.0).abs() < 1e-14);
    assert!((e.lp_slope(2.0) + 2.0 / 3.0).abs() < 1e-14);
}

#[test]
fn transversal_kernel_value() {
    let v = heat_kernel_marginal(1.0, &[0.0]).unwrap();
    assert!((v - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-15);
    assert!((v - 0.282095).abs() < 1e-6);
    assert_eq!(heat_kernel_marginal(0.3, &[]).unwrap(), 1.0);
}

#[test]
fn sampled_kernel_norms() {
    let g = Grid::covering(&[-20.0], &[20.0], &[0.01]).unwrap();
    let f = Field::from_fn(g, |x| gauss(x[0], 1.0)).unwrap();
    assert!((integrate(&f) - 1.0).abs() < 1e-8);
    // ∫ Γ(1, x)² dx = (8π)^{-1/2}.
    let l2 = lp_norm(&f, 2.0).unwrap();
    assert!((l2 - (8.0 * PI).powf(-0.25)).abs() < 1e-6);
}

#[test]
fn heat_decay_has_the_parabolic_slope() {
    let mut cfg = heat_config(12.0);
    cfg.grid = Grid::covering(&[-40.0], &[40.0], &[0.1]).unwrap();
    cfg.snapshot_times = (0..=24).map(|i| 12f64.powf(i as f64 / 24.0)).collect();
    let traj = fastconv::stepper::run(&cfg).unwrap();
    let fit = decay_fit(&traj, f64::INFINITY, (1.0, 12.0)).unwrap();
    // sup Γ(t + t0) = (4π(t + t0))^{-1/2}; the log-log slope over the window
    // is slightly above -1/2 because of the shift t0.
    let exact = |t: f64| -0.5 * (4.0 * PI * (t + 0.1)).ln();
    let oracle = (exact(12.0) - exact(1.0)) / 12f64.ln();
    assert!((fit.slope - oracle).abs() < 0.02, "slope {} vs {oracle}", fit.slope);
    assert!((fit.slope + 0.5).abs() < 0.02);
}

#[test]
fn heat_profile_collapses() {
    let mut cfg = heat_config(4.0);
    cfg.snapshot_times = vec![0.25, 1.0];
    let traj = fastconv::stepper::run(&cfg).unwrap();
    let e = Exponents::parabolic(1);
    let early = collapse_distance(&traj, &e, 0.25, 1.0).unwrap();
    let late = collapse_distance(&traj, &e, 1.0, 4.0).unwrap();
    assert!(late <= early, "{late} > {early}");
}

#[test]
fn exact_profile_has_no_collapse_distance() {
    let g = Grid::covering(&[-40.0], &[40.0], &[0.02]).unwrap();
    let e = exponents(1, 0.75).unwrap();
    let profile = |xi: f64| (-xi * xi).exp();
    let at = |t: f64| Field::from_fn(g, move |x| t.powf(-e.alpha) * profile(x[0] * t.powf(-e.beta))).unwrap();
    let target = selfsim::profile_grid(&g, 4.0, &e).unwrap();
    let a = selfsim::rescale(&at(1.0), 1.0, &e, &target).unwrap();
    let b = selfsim::rescale(&at(4.0), 4.0, &e, &target).unwrap();
    assert!(lp_norm(&a.sub(&b).unwrap(), 1.0).unwrap() < 1e-3);
    assert!((integrate(&a) - integrate(&at(1.0))).abs() < 1e-3);
}

fn bump_field(g: Grid, c: f64, r: f64, a: f64) -> Field {
    Field::from_fn(g, move |x| {
        let s = (x[0] - c) / r;
        if s.abs() < 1.0 { a * (-1.0 / (1.0 - s * s)).exp() } else { 0.0 }
    })
    .unwrap()
}

#[test]
fn identical_pair_has_zero_distance() {
    let cfg = conservation_law(-1.0, 6.0, 0.3);
    let u = bump_field(cfg.grid, 0.0, 0.4, 3.0);
    let pair = RunPair::new(run_from_field(&cfg, u.clone()).unwrap(), run_from_field(&cfg, u).unwrap()).unwrap();
    assert!(contraction_series(&pair).unwrap().iter().all(|&(_, d)| d == 0.0));
    assert_eq!(comparison_check(&pair).unwrap(), 0.0);
}

#[test]
fn perturbed_pair_contracts_and_stays_ordered() {
    let mut cfg = conservation_law(-1.0, 6.0, 0.5);
    cfg.snapshot_times = (1..10).map(|i| 0.05 * i as f64).collect();
    let u = bump_field(cfg.grid, 0.0, 0.4, 3.0);
    let extra = bump_field(cfg.grid, 0.3, 0.2, 1.5);
    let v = u.add(&extra).unwrap();
    let pair = RunPair::new(run_from_field(&cfg, u).unwrap(), run_from_field(&cfg, v).unwrap()).unwrap();
    let series = contraction_series(&pair).unwrap();
    let start = lp_norm(&extra, 1.0).unwrap();
    assert!((series[0].1 - start).abs() < 1e-12);
    let allowance = 2.0 * pair.steps() as f64 * cfg.lin_tol;
    assert!(max_increase(&series) <= allowance);
    assert!(comparison_check(&pair).unwrap() <= pair.steps() as f64 * cfg.lin_tol);
    // Ordered data: the distance equals the conserved mass difference.
    for &(_, d) in &series {
        assert!((d - start).abs() < 1e-9);
    }
    assert!(mass_difference_drift(&pair) < 1e-9);
}

#[test]
fn uniqueness_table_shrinks() {
    let mut base = conservation_law(-1.0, 8.0, 1.0);
    base.grid = Grid::covering(&[-1.0], &[8.0], &[0.005]).unwrap();
    let widths = [0.4, 0.2, 0.1];
    let rows = uniqueness_experiment(
        &base,
        InitialRecipe::Gaussian { width: 1.0 },
        InitialRecipe::Box { width: 1.0 },
        &widths,
        1.0,
    )
    .unwrap();
    for w in rows.windows(2) {
        assert!(w[1].distance < w[0].distance);
    }
    for r in &rows {
        assert!(r.distance <= r.initial_distance);
    }
}

#[test]
fn sign_table_shrinks() {
    let mut base = conservation_law(-3.0, 10.0, 1.0);
    base.grid = Grid::covering(&[-3.0], &[10.0], &[0.005]).unwrap();
    base.initial = InitialRecipe::Gaussian { width: 1.0 };
    let rows = sign_experiment(&base, 0.5, &[0.4, 0.2, 0.1], 1.0).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].neg_at < w[0].neg_at);
    }
    for r in &rows {
        assert!(r.neg_initial > 0.0);
        assert!(r.neg_at <= r.neg_initial);
    }
    let none = sign_experiment(&base, 0.0, &[0.4], 1.0).unwrap();
    assert_eq!(none[0].neg_at, 0.0);
}

#[test]
fn tail_decreases_with_radius() {
    let mut cfg = conservation_law(-15.0, 15.0, 1.0);
    cfg.operator = OperatorChoice::FullLaplacian;
    cfg.initial = InitialRecipe::Gaussian { width: 0.2 };
    cfg.snapshot_times = vec![0.25, 0.5];
    let traj = fastconv::stepper::run(&cfg).unwrap();
    let rep = tail_report(&traj, &[0.5, 1.0, 2.0]).unwrap();
    assert!((rep.a - 1.0).abs() < 1e-9);
    for t in [0.25, 0.5, 1.0] {
        let m: Vec<f64> = rep.rows.iter().filter(|r| r.t == t).map(|r| r.measured).collect();
        assert!(m.windows(2).all(|w| w[1] <= w[0]));
    }
    assert!(rep.rows.iter().filter(|r| r.t == 0.0).all(|r| r.measured < 1e-12));
    assert!(rep.fitted_c.is_finite() && rep.fitted_c > 0.0);
}

#[test]
fn sandwich_of_a_run_with_itself_holds() {
    let g = Grid::covering(&[-4.0, -2.0], &[4.0, 6.0], &[0.1, 0.05]).unwrap();
    let mut cfg = RunConfig::new("sw", g, OperatorChoice::ReducedLaplacian, FluxParams::new(0.8, 1e-8), 1.0, InitialRecipe::Gaussian { width: 1.0 });
    cfg.t_end = 0.1;
    let u = fastconv::diagnostics::product_data(&g, 1.0, 0.05, |x| if x.abs() < 0.2 { 1.0 } else { 0.0 }).unwrap();
    let v = slab_construction(&u, 0.2).unwrap();
    assert!((integrate(&v) - integrate(&u)).abs() < 1e-12);
    let pair = RunPair::new(run_from_field(&cfg, u.clone()).unwrap(), run_from_field(&cfg, u).unwrap()).unwrap();
    assert!(primitive_sandwich(&pair, 0.2).unwrap() <= 0.0);
}

#[test]
fn heat_energy_inequality() {
    let mut cfg = heat_config(2.0);
    cfg.series_stride = 1;
    cfg.snapshot_times = vec![0.2];
    let traj = fastconv::stepper::run(&cfg).unwrap();
    let (integral, half) = energy_balance(&traj, 0.2, 2.0).unwrap();
    assert!(integral > 0.0);
    assert!(integral <= half * (1.0 + 1e-3), "{integral} > {half}");
}
