use fastconv::entropy::{self, audit, cell_entropy_check, kruzhkov_residual, trajectory_levels, TestBump};
use fastconv::stepper::{run_from_field, SolverKind};
use fastconv::{Field, FluxParams, Grid, InitialRecipe, OperatorChoice, RunConfig, Trajectory};

/// Box data on a conservation law: a shock at the left edge and a
/// rarefaction at the right one.
fn box_run(op: OperatorChoice) -> Trajectory {
    let g = Grid::covering(&[-1.0], &[5.0], &[0.01]).unwrap();
    let mut cfg = RunConfig::new("box", g, op, FluxParams::new(0.75, 1e-8), 1.0, InitialRecipe::Box { width: 0.5 });
    cfg.t_end = 0.3;
    cfg.cfl = 0.9;
    cfg.record_every_step = true;
    fastconv::stepper::run(&cfg).unwrap()
}

fn bumps(traj: &Trajectory) -> Vec<TestBump> {
    let span = traj.last().t - traj.first().t;
    let tc = 0.5 * span;
    [-0.3, -0.2, 0.0, 0.25, 0.4, 0.6]
        .iter()
        .map(|&c| TestBump::new(&[c], 0.15, tc, 0.4 * span))
        .collect()
}

#[test]
fn shock_run_passes_the_cell_check_at_every_level() {
    let traj = box_run(OperatorChoice::ReducedLaplacian);
    for k in trajectory_levels(&traj) {
        let worst = cell_entropy_check(&traj, k).unwrap();
        assert!(worst >= -traj.config.lin_tol, "k = {k}: {worst}");
    }
}

#[test]
fn viscous_run_passes_the_cell_check() {
    let traj = box_run(OperatorChoice::ReducedPlusEps { eps: 0.05 });
    for k in trajectory_levels(&traj) {
        assert!(cell_entropy_check(&traj, k).unwrap() >= -1e-8);
    }
}

#[test]
fn pure_diffusion_passes_the_cell_check() {
    let g = Grid::covering(&[-3.0], &[3.0], &[0.02]).unwrap();
    let mut cfg = RunConfig::new("heat", g, OperatorChoice::FullLaplacian, FluxParams::new(0.75, 0.0), 1.0, InitialRecipe::Box { width: 0.5 });
    cfg.convection = false;
    cfg.dt_max = Some(1e-3);
    cfg.t_end = 0.05;
    cfg.record_every_step = true;
    cfg.solver = SolverKind::LineDirect;
    let traj = fastconv::stepper::run(&cfg).unwrap();
    for k in trajectory_levels(&traj) {
        assert!(cell_entropy_check(&traj, k).unwrap() >= -cfg.lin_tol);
    }
}

#[test]
fn levels_outside_the_range_reduce_to_conservation() {
    let traj = box_run(OperatorChoice::ReducedLaplacian);
    for k in [-1.0, 5.0] {
        let worst = cell_entropy_check(&traj, k).unwrap();
        assert!(worst.abs() < 1e-12, "k = {k}: {worst}");
    }
}

#[test]
fn sparse_recording_is_rejected() {
    let g = Grid::covering(&[-1.0], &[5.0], &[0.01]).unwrap();
    let mut cfg = RunConfig::new("sparse", g, OperatorChoice::ReducedLaplacian, FluxParams::new(0.75, 1e-8), 1.0, InitialRecipe::Box { width: 0.5 });
    cfg.t_end = 0.1;
    let traj = fastconv::stepper::run(&cfg).unwrap();
    assert!(cell_entropy_check(&traj, 0.5).is_err());
}

#[test]
fn kruzhkov_audit_passes_forward_and_fails_reversed() {
    let traj = box_run(OperatorChoice::ReducedLaplacian);
    let levels = trajectory_levels(&traj);
    let tests = bumps(&traj);
    let fwd = audit(&traj, &levels, &tests, 1e-6).unwrap();
    assert_eq!(fwd.rows.len(), levels.len() * tests.len());
    assert!(fwd.passed(), "worst {}", fwd.worst());

    // Reversal mirrors about the grid midpoint x = 2, so the bumps follow.
    let mirrored: Vec<TestBump> =
        tests.iter().map(|b| TestBump::new(&[4.0 - b.center[0]], b.radius, b.t_center, b.t_radius)).collect();
    let rev = audit(&traj.time_reversed(), &levels, &mirrored, 1e-6).unwrap();
    assert!(!rev.passed(), "worst {}", rev.worst());
}

#[test]
fn level_below_the_data_gives_a_vanishing_residual() {
    let traj = box_run(OperatorChoice::ReducedLaplacian);
    let phi = bumps(&traj)[2];
    let r = kruzhkov_residual(&traj, -0.5, &phi).unwrap();
    assert!(r.abs() < 1e-10, "{r}");
}

#[test]
fn steady_trajectory_has_no_residual() {
    let g = Grid::covering(&[-1.0], &[1.0], &[0.02]).unwrap();
    let mut cfg = RunConfig::new("still", g, OperatorChoice::FullLaplacian, FluxParams::new(0.75, 0.0), 1.0, InitialRecipe::Box { width: 0.5 });
    cfg.convection = false;
    cfg.dt_max = Some(0.01);
    cfg.t_end = 0.2;
    cfg.record_every_step = true;
    cfg.boundary_leak_tol = 1.0;
    let traj = run_from_field(&cfg, Field::constant(g, 0.5)).unwrap();
    let phi = TestBump::new(&[0.0], 0.3, 0.1, 0.08);
    for k in [0.0, 0.25, 0.5, 1.0] {
        assert!(kruzhkov_residual(&traj, k, &phi).unwrap().abs() < 1e-15);
    }
}

#[test]
fn thin_test_bumps_are_rejected() {
    let traj = box_run(OperatorChoice::ReducedLaplacian);
    let phi = TestBump::new(&[0.0], 0.01, 0.15, 0.1);
    assert!(audit(&traj, &[0.5], &[phi], 1e-6).is_err());
}

#[test]
fn standard_levels_include_zero() {
    let ks = entropy::levels(0.2, 1.0, 32);
    assert_eq!(ks.len(), 33);
    assert!(ks.contains(&0.0));
    assert!(ks.windows(2).all(|w| w[0] < w[1]));
}
