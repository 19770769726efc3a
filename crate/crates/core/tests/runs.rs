use fastconv::grid::integrate;
use fastconv::stepper::{run_from_field, Simulation};
use fastconv::{Field, FluxParams, Grid, InitialRecipe, OperatorChoice, RunConfig};

fn conservation_law(t_end: f64) -> RunConfig {
    let g = Grid::covering(&[-1.0], &[6.0], &[0.01]).unwrap();
    let mut cfg = RunConfig::new("cl", g, OperatorChoice::ReducedLaplacian, FluxParams::new(0.75, 1e-8), 1.0, InitialRecipe::Box { width: 0.5 });
    cfg.t_end = t_end;
    cfg.cfl = 0.9;
    cfg
}

#[test]
fn empty_interval_gives_the_initial_snapshot() {
    let cfg = conservation_law(0.0);
    let traj = Simulation::from_config(cfg).unwrap().run().unwrap();
    assert_eq!(traj.snapshots.len(), 1);
    assert_eq!(traj.steps, 0);
}

#[test]
fn fast_convection_keeps_nonnegative_data_nonnegative() {
    let mut cfg = conservation_law(1.0);
    cfg.snapshot_times = (1..10).map(|i| 0.1 * i as f64).collect();
    let traj = Simulation::from_config(cfg.clone()).unwrap().run().unwrap();
    assert!(traj.steps > 100);
    for s in &traj.snapshots {
        assert!(s.field.min() >= -cfg.lin_tol, "t = {}: min {}", s.t, s.field.min());
        assert!((integrate(&s.field) - 1.0).abs() <= 1e-12 * traj.steps as f64);
    }
    for w in traj.snapshots.windows(2) {
        assert!(w[1].t > w[0].t);
    }
}

#[test]
fn leaking_run_is_aborted() {
    let g = Grid::covering(&[-0.5], &[0.5], &[0.01]).unwrap();
    let mut cfg = RunConfig::new("leak", g, OperatorChoice::FullLaplacian, FluxParams::new(0.75, 1e-8), 1.0, InitialRecipe::Box { width: 0.2 });
    cfg.t_end = 1.0;
    assert!(matches!(
        Simulation::from_config(cfg).unwrap().run(),
        Err(fastconv::Error::BoundaryLeak { .. })
    ));
}

#[test]
fn resumed_run_is_bit_identical() {
    let g = Grid::covering(&[-3.0, -3.0], &[3.0, 8.0], &[0.1, 0.1]).unwrap();
    let mut cfg = RunConfig::new("ck", g, OperatorChoice::FullLaplacian, FluxParams::new(0.8, 1e-8), 1.0, InitialRecipe::Gaussian { width: 0.6 });
    cfg.t_end = 0.1;
    cfg.boundary_leak_tol = 1e-6;
    cfg.snapshot_times = vec![0.03, 0.06];
    let whole = Simulation::from_config(cfg.clone()).unwrap().run().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut sim = Simulation::from_config(cfg).unwrap();
    sim.run_to(0.06).unwrap();
    sim.checkpoint(dir.path()).unwrap();
    drop(sim);
    let resumed = Simulation::resume(dir.path()).unwrap().run().unwrap();

    assert_eq!(resumed.steps, whole.steps);
    let (a, b) = (whole.last(), resumed.last());
    assert_eq!(a.t.to_bits(), b.t.to_bits());
    assert!(a.field.values().iter().zip(b.field.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn saved_trajectory_loads_back() {
    let mut cfg = conservation_law(0.05);
    cfg.snapshot_times = vec![0.01, 0.02];
    let traj = Simulation::from_config(cfg).unwrap().run().unwrap();
    let dir = tempfile::tempdir().unwrap();
    traj.save(dir.path()).unwrap();
    let back = fastconv::Trajectory::load(dir.path()).unwrap();
    assert_eq!(back.snapshots.len(), traj.snapshots.len());
    assert_eq!(back.steps, traj.steps);
    assert_eq!(back.last().field, traj.last().field);
}

#[test]
fn shifted_data_gives_shifted_solution() {
    let cfg = conservation_law(0.2);
    let g = cfg.grid;
    let start = g.zero_index(0) - 25;
    let bump = |s: usize| Field::new(g, (0..g.len()).map(|j| if (s..s + 50).contains(&j) { 2.0 } else { 0.0 }).collect()).unwrap();
    let a = run_from_field(&cfg, bump(start)).unwrap();
    let b = run_from_field(&cfg, bump(start + 20)).unwrap();
    let (ua, ub) = (a.last().field.values(), b.last().field.values());
    for j in 0..ua.len() - 20 {
        assert!((ua[j] - ub[j + 20]).abs() < 1e-12);
    }
}
