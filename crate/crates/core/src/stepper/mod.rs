//! IMEX time integration: explicit Godunov convection along `x_N` followed by
//! an implicit θ-step for the diffusion operator, with zero-flux walls.

mod config;
mod diffusion;
mod initial;
mod trajectory;

use std::fs;
use std::path::Path;

pub use config::RunConfig;
pub use diffusion::{DiffusionOperator, DiffusionSolver, OperatorChoice, SolveStats, SolverKind};
pub use initial::{heat_kernel, make_initial, InitialRecipe, DOMAIN_DEFECT_TOL};
pub use trajectory::{SeriesSample, Snapshot, Trajectory};

use crate::entropy::{self, ProductionWorkspace};
use crate::error::{Error, Result};
use crate::flux::{lipschitz_bound, ConvectionKernel};
use crate::grid::{pairwise_sum, pairwise_sum_map, Field};
use crate::snapshot::{read_snapshot, write_snapshot, SnapshotMeta};

/// Stable step from the convection bound, `cfl · Δx_N / L`, capped by `dt_max`.
pub fn cfl_dt(f: &Field, cfg: &RunConfig) -> Result<f64> {
    base_dt(cfg, f.values())
}

fn base_dt(cfg: &RunConfig, u: &[f64]) -> Result<f64> {
    let mut dt = f64::INFINITY;
    if cfg.convection {
        let l = lipschitz_bound(&cfg.flux, u.iter().fold(0.0, |m, v| f64::max(m, v.abs())))?;
        if l > 0.0 {
            dt = cfg.cfl * cfg.grid.spacing(cfg.grid.xn_axis()) / l;
        }
    }
    if let Some(cap) = cfg.dt_max {
        dt = dt.min(cap);
    }
    if dt.is_finite() {
        Ok(dt)
    } else {
        Err(Error::InvalidConfig("no convection bound: set dt_max".into()))
    }
}

/// [`cfl_dt`] additionally capped so that the step does not pass the next
/// scheduled time after `t`.
pub fn capped_dt(f: &Field, cfg: &RunConfig, t: f64) -> Result<f64> {
    let dt = cfl_dt(f, cfg)?;
    Ok(match cfg.schedule().into_iter().find(|&s| s > t) {
        Some(next) => dt.min(next - t),
        None => dt,
    })
}

/// Solves `(I + θ dt A) v = (I - (1-θ) dt A) f`.
pub fn implicit_diffusion(f: &Field, dt: f64, cfg: &RunConfig) -> Result<Field> {
    if !(dt >= 0.0) {
        return Err(Error::Precondition(format!("dt = {dt} must be >= 0")));
    }
    let op = DiffusionOperator::new(cfg.grid, cfg.operator);
    let mut solver = DiffusionSolver::new(op, cfg.solver)?;
    let mut v = f.values().to_vec();
    diffuse(&mut solver, &mut v, f.values(), dt, cfg)?;
    Field::new(cfg.grid, v)
}

fn diffuse(solver: &mut DiffusionSolver, v: &mut [f64], rhs_src: &[f64], dt: f64, cfg: &RunConfig) -> Result<()> {
    if solver.operator().is_zero() || dt == 0.0 {
        return Ok(());
    }
    if cfg.theta < 1.0 {
        solver.operator().accumulate(rhs_src, -(1.0 - cfg.theta) * dt, v);
    }
    let norm = pairwise_sum_map(rhs_src, |x| x * x).sqrt();
    solver.solve(cfg.theta * dt, v, cfg.lin_tol * norm, cfg.max_iters)?;
    Ok(())
}

/// One Lie step: `u* = f - dt D(f)`, then [`implicit_diffusion`] of `u*`.
pub fn step_imex(f: &Field, dt: f64, cfg: &RunConfig) -> Result<Field> {
    let bound = cfl_dt(f, cfg)?;
    if !(dt > 0.0 && dt <= bound * (1.0 + 1e-12)) {
        return Err(Error::Precondition(format!("dt = {dt} outside (0, {bound}]")));
    }
    let g = cfg.grid;
    if f.grid() != &g {
        return Err(Error::InvalidGrid("field and config grids differ".into()));
    }
    let mut v = vec![0.0; g.len()];
    if cfg.convection {
        ConvectionKernel::default().apply(f.values(), &g, &cfg.flux, dt, &mut v);
    } else {
        v.copy_from_slice(f.values());
    }
    let mut solver = DiffusionSolver::new(DiffusionOperator::new(g, cfg.operator), cfg.solver)?;
    let star = v.clone();
    diffuse(&mut solver, &mut v, &star, dt, cfg)?;
    Field::new(g, v).map_err(|_| Error::NonFiniteState { t: cfg.t_start + dt })
}

/// Integrates `cfg` from its initial recipe.
pub fn run(cfg: &RunConfig) -> Result<Trajectory> {
    Simulation::from_config(cfg.clone())?.run()
}

/// Integrates `cfg` from explicitly given initial data.
pub fn run_from_field(cfg: &RunConfig, u0: Field) -> Result<Trajectory> {
    Simulation::new(cfg.clone(), u0)?.run()
}

/// A run in progress. Holds the state and the trajectory recorded so far.
#[derive(Debug)]
pub struct Simulation {
    cfg: RunConfig,
    t: f64,
    step: usize,
    u: Vec<f64>,
    next: Vec<f64>,
    prev: Vec<f64>,
    conv: ConvectionKernel,
    solver: DiffusionSolver,
    schedule: Vec<f64>,
    boundary: Vec<usize>,
    radius2: Vec<f64>,
    production: ProductionWorkspace,
    traj: Trajectory,
}

impl Simulation {
    pub fn from_config(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let u0 = make_initial(&cfg.initial, cfg.mass, &cfg.grid)?;
        Simulation::new(cfg, u0)
    }

    /// Starts at `cfg.t_start` from `u0`. `cfg.mass` sets the scale of the
    /// boundary-leak budget.
    pub fn new(cfg: RunConfig, u0: Field) -> Result<Self> {
        let t = cfg.t_start;
        Simulation::at_state(cfg, u0, t, 0, 0.0)
    }

    fn at_state(cfg: RunConfig, u0: Field, t: f64, step: usize, dt: f64) -> Result<Self> {
        cfg.validate()?;
        if u0.grid() != &cfg.grid {
            return Err(Error::InvalidGrid("initial data lives on a different grid".into()));
        }
        let g = cfg.grid;
        let op = DiffusionOperator::new(g, cfg.operator);
        let solver = DiffusionSolver::new(op, cfg.solver)?;
        let boundary = (0..g.len()).filter(|&i| g.is_boundary_cell(i)).collect();
        let radius2 = if cfg.tail_radii.is_empty() {
            Vec::new()
        } else {
            (0..g.len()).map(|i| g.coords(i)[..g.dim()].iter().map(|c| c * c).sum()).collect()
        };
        let schedule = cfg.schedule();
        let traj = Trajectory { config: cfg.clone(), snapshots: Vec::new(), series: Vec::new(), steps: step };
        let mut sim = Simulation {
            t,
            step,
            u: u0.into_values(),
            next: Vec::new(),
            prev: Vec::new(),
            conv: ConvectionKernel::default(),
            solver,
            schedule,
            boundary,
            radius2,
            production: ProductionWorkspace::default(),
            traj,
            cfg,
        };
        sim.record_snapshot(dt);
        let s = sim.sample(f64::NAN);
        sim.traj.series.push(s);
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn state(&self) -> Field {
        Field::new(self.cfg.grid, self.u.clone()).expect("state checked finite after every step")
    }

    /// Next step length and the time it lands on, or `None` at `t_end`.
    pub fn next_dt(&self) -> Result<Option<(f64, f64)>> {
        let Some(&target) = self.schedule.iter().find(|&&s| s > self.t) else {
            return Ok(None);
        };
        let dt = base_dt(&self.cfg, &self.u)?;
        let remaining = target - self.t;
        // Land exactly on scheduled times and avoid sliver steps just before them.
        if dt >= remaining * (1.0 - 1e-9) {
            Ok(Some((remaining, target)))
        } else {
            Ok(Some((dt, self.t + dt)))
        }
    }

    fn advance(&mut self, dt: f64, t_new: f64) -> Result<()> {
        let g = self.cfg.grid;
        self.next.resize(self.u.len(), 0.0);
        if self.cfg.convection {
            self.conv.apply(&self.u, &g, &self.cfg.flux, dt, &mut self.next);
        } else {
            self.next.copy_from_slice(&self.u);
        }
        if !self.solver.operator().is_zero() {
            self.prev.clear();
            self.prev.extend_from_slice(&self.next);
            diffuse(&mut self.solver, &mut self.next, &self.prev, dt, &self.cfg)?;
        }
        if self.next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t_new });
        }
        for v in &mut self.next {
            *v = diffusion::flush(*v);
        }
        std::mem::swap(&mut self.u, &mut self.next);
        self.t = t_new;
        self.step += 1;
        let edge: f64 = self.boundary.iter().map(|&i| self.u[i].abs()).sum::<f64>() * g.cell_volume();
        let budget = self.cfg.boundary_leak_tol * self.cfg.mass.abs();
        if edge > budget {
            return Err(Error::BoundaryLeak { t: self.t, mass: edge, budget });
        }
        Ok(())
    }

    fn record_snapshot(&mut self, dt: f64) {
        let field = self.state();
        self.traj.snapshots.push(Snapshot { t: self.t, step: self.step, dt, field });
    }

    fn sample(&self, entropy_min: f64) -> SeriesSample {
        let g = &self.cfg.grid;
        let vol = g.cell_volume();
        let u = &self.u;
        let (mut min, mut max, mut linf) = (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64);
        for &v in u {
            min = min.min(v);
            max = max.max(v);
            linf = linf.max(v.abs());
        }
        let tails = self
            .cfg
            .tail_radii
            .iter()
            .map(|&r| {
                let r2 = r * r;
                let outside: Vec<f64> =
                    u.iter().zip(&self.radius2).filter(|(_, &d)| d > r2).map(|(v, _)| v.abs()).collect();
                pairwise_sum(&outside) * vol
            })
            .collect();
        SeriesSample {
            t: self.t,
            step: self.step,
            mass: pairwise_sum(u) * vol,
            l1: pairwise_sum_map(u, f64::abs) * vol,
            l2: (pairwise_sum_map(u, |x| x * x) * vol).sqrt(),
            linf,
            min,
            max,
            neg_mass: pairwise_sum_map(u, |x| (-x).max(0.0)) * vol,
            boundary_mass: self.boundary.iter().map(|&i| u[i].abs()).sum::<f64>() * vol,
            energy: self.solver.operator().energy(u),
            entropy_min,
            tails,
        }
    }

    /// Steps until `t >= t_stop` or the end of the run, recording as configured.
    pub fn run_to(&mut self, t_stop: f64) -> Result<()> {
        let mut before = Vec::new();
        while self.t < t_stop {
            let Some((dt, t_new)) = self.next_dt()? else { break };
            let monitor = self.cfg.entropy_stride.is_some_and(|s| self.step % s == 0);
            if monitor {
                before.clone_from(&self.u);
            }
            self.advance(dt, t_new)?;
            let entropy_min = if monitor {
                entropy::step_production_min(&self.cfg, &before, &self.u, dt, &mut self.production)
            } else {
                f64::NAN
            };
            let at_stop = self.schedule.contains(&self.t);
            if monitor || at_stop || self.step % self.cfg.series_stride == 0 {
                let s = self.sample(entropy_min);
                self.traj.series.push(s);
            }
            if at_stop || self.cfg.record_every_step {
                self.record_snapshot(dt);
            }
            self.traj.steps = self.step;
        }
        Ok(())
    }

    /// Runs to `t_end` and returns the recorded trajectory.
    pub fn run(mut self) -> Result<Trajectory> {
        self.run_to(f64::INFINITY)?;
        Ok(self.traj)
    }

    /// Trajectory recorded so far.
    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    /// Writes the current state (`state.bin`, `state.toml`) and the run
    /// config (`config.toml`) into `dir`.
    pub fn checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let dt = self.traj.snapshots.last().filter(|s| s.step == self.step).map_or(0.0, |s| s.dt);
        let meta = SnapshotMeta::new(&self.cfg.grid, self.t, &self.cfg.run_id, self.step, dt);
        write_snapshot(&dir.join("state.bin"), &self.state(), &meta)?;
        let text = toml::to_string(&self.cfg)
            .map_err(|e| Error::Format { path: dir.join("config.toml"), reason: e.to_string() })?;
        fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }

    /// Continues a run from a checkpoint written by [`Simulation::checkpoint`].
    pub fn resume(dir: &Path) -> Result<Self> {
        let path = dir.join("config.toml");
        let text = fs::read_to_string(&path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        let (u, meta) = read_snapshot(&dir.join("state.bin"))?;
        if meta.run_id != cfg.run_id {
            return Err(Error::Format {
                path,
                reason: format!("checkpoint of run {:?} paired with config {:?}", meta.run_id, cfg.run_id),
            });
        }
        Simulation::at_state(cfg, u, meta.time, meta.step, meta.dt)
    }
}
