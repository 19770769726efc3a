//! What each preset runs and what it checks.
//!
//! [`plan`] turns an experiment into a list of jobs, building every initial
//! field up front so that bad parameters fail before any run starts.
//! [`evaluate`] turns the finished trajectories (in job order) into check
//! records and tables; it only reads them.

use fastconv::diagnostics::{self, CheckRecord, RunPair};
use fastconv::entropy::{self, TestBump};
use fastconv::grid::{integrate, lp_norm, Field, Grid, MAX_DIM};
use fastconv::selfsim::{self, Exponents};
use fastconv::stepper::{self, heat_kernel, make_initial, InitialRecipe, OperatorChoice};
use fastconv::{Error, Result, RunConfig, Trajectory};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rayon::prelude::*;

use crate::config::{
    CollapseParams, DecayParams, EnergyParams, EntropyParams, ExperimentSpec, HeatParams, PairParams, Params, Preset,
    SandwichParams, SignParams, TailParams, UniquenessParams,
};
use crate::report::{num, Table};

/// Marginal identity tolerance relative to `|M|`.
pub const MARGINAL_TOL: f64 = 5e-3;

/// One trajectory to compute.
#[derive(Clone, Debug)]
pub struct Job {
    pub cfg: RunConfig,
    /// Explicit initial data; `None` means the recipe of `cfg`.
    pub initial: Option<Field>,
    /// Heat time whose kernel is the transversal marginal of the initial
    /// data, when it is one.
    pub marginal_t0: Option<f64>,
}

impl Job {
    fn recipe(cfg: RunConfig) -> Self {
        let marginal_t0 = marginal_time(&cfg.initial);
        Job { cfg, initial: None, marginal_t0 }
    }

    fn field(cfg: RunConfig, u: Field) -> Self {
        Job { cfg, initial: Some(u), marginal_t0: None }
    }
}

/// Check records and tables of one experiment.
#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub checks: Vec<CheckRecord>,
    pub tables: Vec<Table>,
}

impl Evaluation {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

fn with_id(base: &RunConfig, suffix: &str) -> RunConfig {
    RunConfig { run_id: format!("{}-{suffix}", base.run_id), ..base.clone() }
}

fn add_times(cfg: &mut RunConfig, times: impl IntoIterator<Item = f64>) {
    cfg.snapshot_times.extend(times);
    cfg.snapshot_times.sort_by(f64::total_cmp);
    cfg.snapshot_times.dedup();
}

fn equispaced(t0: f64, t1: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|i| t0 + (t1 - t0) * i as f64 / count as f64).collect()
}

fn max_spacing(g: &Grid) -> f64 {
    g.spacings().iter().cloned().fold(0.0, f64::max)
}

fn lowers(g: &Grid) -> Vec<f64> {
    g.origins().to_vec()
}

fn uppers(g: &Grid) -> Vec<f64> {
    (0..g.dim()).map(|a| g.upper(a)).collect()
}

/// Caps `dt_max` at the smaller stable step of two data so that both runs of
/// a pair take the same steps.
fn align(cfg: &mut RunConfig, a: &Field, b: &Field) -> Result<()> {
    if cfg.convection {
        let dt = stepper::cfl_dt(a, cfg)?.min(stepper::cfl_dt(b, cfg)?);
        cfg.dt_max = Some(cfg.dt_max.map_or(dt, |d| d.min(dt)));
    }
    Ok(())
}

fn unit_bump(x: &[f64], c: &[f64], r: f64) -> f64 {
    let s: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (r * r);
    if s < 1.0 {
        (1.0 - 1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}

/// Sum of `count` smooth bumps with random centers, radii and heights,
/// scaled to `mass`.
fn random_datum(grid: &Grid, rng: &mut StdRng, count: usize, spread: f64, mass: f64) -> Result<Field> {
    let dim = grid.dim();
    let rmin = 4.0 * max_spacing(grid);
    let rmax = spread.max(2.0 * rmin);
    let bumps: Vec<([f64; MAX_DIM], f64, f64)> = (0..count)
        .map(|_| {
            let mut c = [0.0; MAX_DIM];
            for v in c.iter_mut().take(dim) {
                *v = rng.gen_range(-spread..=spread);
            }
            (c, rng.gen_range(rmin..=rmax), rng.gen_range(0.2..=1.0))
        })
        .collect();
    let f = Field::from_fn(*grid, |x| bumps.iter().map(|(c, r, a)| a * unit_bump(x, &c[..dim], *r)).sum())?;
    let m = integrate(&f);
    if !(m > 0.0) {
        return Err(Error::Precondition("random datum has no mass on the grid".into()));
    }
    f.scale(mass / m)
}

fn op_name(op: &OperatorChoice) -> String {
    match op {
        OperatorChoice::FullLaplacian => "full".into(),
        OperatorChoice::ReducedLaplacian => "reduced".into(),
        OperatorChoice::ReducedPlusEps { eps } => format!("reduced_eps{eps}"),
    }
}

/// Jobs of an experiment, with all initial data built.
pub fn plan(spec: &ExperimentSpec) -> Result<Vec<Job>> {
    let base = &spec.base;
    let jobs = match &spec.params {
        Params::Heat(p) => plan_heat(base, p)?,
        Params::Decay(p) => p
            .resolved
            .iter()
            .map(|op| Job::recipe(RunConfig { operator: *op, ..with_id(base, &op_name(op)) }))
            .collect(),
        Params::Collapse(p) => {
            let mut cfg = base.clone();
            add_times(&mut cfg, p.times.iter().flat_map(|&t| [t, t * p.factor]));
            vec![Job::recipe(cfg)]
        }
        Params::Uniqueness(p) => {
            let mut jobs = Vec::new();
            for (a, b) in diagnostics::uniqueness_runs(base, p.recipes[0].unit(), p.recipes[1].unit(), &p.widths) {
                let (mut a, mut b) = (a, b);
                add_times(&mut a, [p.t_star]);
                add_times(&mut b, [p.t_star]);
                let ua = make_initial(&a.initial, a.mass, &a.grid)?;
                let ub = make_initial(&b.initial, b.mass, &b.grid)?;
                align(&mut a, &ua, &ub)?;
                b.dt_max = a.dt_max;
                jobs.push(Job::field(a, ua));
                jobs.push(Job::field(b, ub));
            }
            jobs
        }
        Params::Sign(p) => {
            let mut cfg = base.clone();
            add_times(&mut cfg, [p.t_star]);
            diagnostics::sign_runs(&cfg, p.amplitude, &p.widths)?
                .into_iter()
                .map(|(cfg, u)| Job::field(cfg, u))
                .collect()
        }
        Params::Pairs(p) => plan_pairs(base, p, spec.preset == Preset::Comparison)?,
        Params::Entropy(_) => {
            let mut cfg = base.clone();
            cfg.record_every_step = true;
            vec![Job::recipe(cfg)]
        }
        Params::Tail(p) => plan_tail(base, p)?,
        Params::Sandwich(p) => plan_sandwich(base, p)?,
        Params::Energy(p) => {
            let mut cfg = base.clone();
            cfg.series_stride = 1;
            add_times(&mut cfg, [p.tau]);
            vec![Job::recipe(cfg)]
        }
    };
    for j in &jobs {
        j.cfg.validate()?;
        if j.initial.is_none() {
            make_initial(&j.cfg.initial, j.cfg.mass, &j.cfg.grid)?;
        }
    }
    Ok(jobs)
}

fn plan_heat(base: &RunConfig, p: &HeatParams) -> Result<Vec<Job>> {
    let (lo, hi) = (lowers(&base.grid), uppers(&base.grid));
    let t_eval = p.t_eval.unwrap_or(base.t_end);
    p.spacings
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let mut cfg = with_id(base, &format!("h{k}"));
            cfg.grid = Grid::covering(&lo, &hi, &vec![h; lo.len()])?;
            if let Some(c) = p.dt_per_dx2 {
                cfg.dt_max = Some(c * h * h);
            }
            add_times(&mut cfg, [t_eval]);
            Ok(Job::recipe(cfg))
        })
        .collect()
}

fn plan_pairs(base: &RunConfig, p: &PairParams, ordered: bool) -> Result<Vec<Job>> {
    let mut rng = StdRng::seed_from_u64(p.seed);
    let mut jobs = Vec::with_capacity(2 * p.count);
    let mut cfg = base.clone();
    add_times(&mut cfg, equispaced(base.t_start, base.t_end, p.samples));
    for k in 0..p.count {
        let u = random_datum(&base.grid, &mut rng, p.bumps, p.spread, base.mass)?;
        let v = if ordered {
            let extra_mass = base.mass * rng.gen_range(0.1..=1.0);
            u.add(&random_datum(&base.grid, &mut rng, p.bumps, p.spread, extra_mass)?)?
        } else {
            let m = base.mass * rng.gen_range(0.5..=1.5);
            random_datum(&base.grid, &mut rng, p.bumps, p.spread, m)?
        };
        let mut a = with_id(&cfg, &format!("pair{k}a"));
        align(&mut a, &u, &v)?;
        let b = RunConfig { run_id: format!("{}-pair{k}b", base.run_id), mass: integrate(&v), ..a.clone() };
        a.mass = integrate(&u);
        jobs.push(Job::field(a, u));
        jobs.push(Job::field(b, v));
    }
    Ok(jobs)
}

fn plan_tail(base: &RunConfig, p: &TailParams) -> Result<Vec<Job>> {
    let (lo, hi) = (lowers(&base.grid), uppers(&base.grid));
    let h = base.grid.spacings().to_vec();
    let mut cfg = base.clone();
    if cfg.snapshot_times.is_empty() {
        add_times(&mut cfg, equispaced(base.t_start, base.t_end, 10));
    }
    let fine: Vec<f64> = h.iter().map(|v| v / p.refine).collect();
    let big_lo: Vec<f64> = lo.iter().map(|v| v * p.enlarge).collect();
    let big_hi: Vec<f64> = hi.iter().map(|v| v * p.enlarge).collect();
    Ok(vec![
        Job::recipe(with_id(&cfg, "base")),
        Job::recipe(RunConfig { grid: Grid::covering(&lo, &hi, &fine)?, ..with_id(&cfg, "refined") }),
        Job::recipe(RunConfig { grid: Grid::covering(&big_lo, &big_hi, &h)?, ..with_id(&cfg, "enlarged") }),
    ])
}

/// Transversal heat kernel times a `C^∞` bump in `|x_N| < r`, and the slab
/// construction applied to the same kernel times the recipe profile along
/// `x_N`. Both have the marginal `M Γ(t0)`.
pub fn sandwich_data(base: &RunConfig, r: f64, t0: f64) -> Result<(Field, Field)> {
    let u = diagnostics::product_data(&base.grid, base.mass, t0, |x| unit_bump(&[x], &[0.0], r))?;
    let s2 = base.initial.width().powi(2) / 12.0;
    let wide = diagnostics::product_data(&base.grid, base.mass, t0, |x| (-x * x / (2.0 * s2)).exp())?;
    Ok((u, diagnostics::slab_construction(&wide, r)?))
}

fn plan_sandwich(base: &RunConfig, p: &SandwichParams) -> Result<Vec<Job>> {
    let (u, v) = sandwich_data(base, p.r, p.t0)?;
    let mut cfg = base.clone();
    add_times(&mut cfg, equispaced(base.t_start, base.t_end, p.samples));
    align(&mut cfg, &u, &v)?;
    Ok(vec![
        Job { cfg: with_id(&cfg, "bump"), initial: Some(u), marginal_t0: Some(p.t0) },
        Job { cfg: with_id(&cfg, "slab"), initial: Some(v), marginal_t0: Some(p.t0) },
    ])
}

/// Exponents of the run: the convective ones, or the parabolic ones when
/// convection is off.
pub fn run_exponents(cfg: &RunConfig) -> Result<Exponents> {
    let n = cfg.grid.dim();
    if cfg.convection {
        selfsim::exponents(n, cfg.flux.q)
    } else {
        let a = 0.5 * n as f64;
        Ok(Exponents { alpha: a, beta: 0.5, gamma: a, n, q: 1.0 })
    }
}

/// Evaluates an experiment from its trajectories, given in job order.
/// `seconds` holds the wall time of each run.
pub fn evaluate(spec: &ExperimentSpec, jobs: &[Job], trajs: &[Trajectory], seconds: &[f64]) -> Result<Evaluation> {
    if trajs.len() != jobs.len() || seconds.len() != jobs.len() {
        return Err(Error::Precondition(format!("{} jobs but {} trajectories", jobs.len(), trajs.len())));
    }
    let mut ev = Evaluation::default();
    run_checks(spec, jobs, trajs, &mut ev)?;
    match &spec.params {
        Params::Heat(p) => eval_heat(spec, p, trajs, seconds, &mut ev)?,
        Params::Decay(p) => eval_decay(p, trajs, seconds, &mut ev)?,
        Params::Collapse(p) => eval_collapse(p, &trajs[0], seconds[0], &mut ev)?,
        Params::Uniqueness(p) => eval_uniqueness(p, trajs, &mut ev)?,
        Params::Sign(p) => eval_sign(p, trajs, &mut ev)?,
        Params::Pairs(_) => eval_pairs(spec.preset == Preset::Comparison, trajs, &mut ev)?,
        Params::Entropy(p) => eval_entropy(spec, p, &trajs[0], &mut ev)?,
        Params::Tail(p) => eval_tail(p, trajs, &mut ev)?,
        Params::Sandwich(p) => eval_sandwich(p, trajs, &mut ev)?,
        Params::Energy(p) => eval_energy(p, &trajs[0], &mut ev)?,
    }
    Ok(ev)
}

/// Largest relative deviation of the recorded mass from its initial value.
pub fn mass_drift(traj: &Trajectory) -> f64 {
    let m0 = traj.series.first().map_or(0.0, |s| s.mass);
    let scale = m0.abs().max(traj.config.mass.abs()).max(1e-300);
    traj.series.iter().map(|s| (s.mass - m0).abs()).fold(0.0, f64::max) / scale
}

/// Most negative monitored cell entropy production relative to `|M|`;
/// `None` when the run was not monitored.
pub fn monitored_entropy(traj: &Trajectory) -> Option<f64> {
    let vals: Vec<f64> = traj.series.iter().map(|s| s.entropy_min).filter(|v| v.is_finite()).collect();
    (!vals.is_empty()).then(|| vals.iter().cloned().fold(f64::INFINITY, f64::min) / traj.config.mass.abs())
}

/// Heat time whose transversal marginal matches the recipe, for the recipes
/// whose marginal is a Gaussian.
fn marginal_time(recipe: &InitialRecipe) -> Option<f64> {
    match *recipe {
        InitialRecipe::Gaussian { width } => Some(width * width / 24.0),
        InitialRecipe::HeatKernel { t0 } => Some(t0),
        _ => None,
    }
}

/// Worst `‖marginal(u(t)) - M Γ(t + t0)‖₁ / |M|` over the snapshots.
pub fn marginal_defect(traj: &Trajectory, t0: f64) -> Result<f64> {
    let cfg = &traj.config;
    let mut worst: f64 = 0.0;
    for s in &traj.snapshots {
        let e = selfsim::marginal_error(&s.field, s.t - cfg.t_start + t0, cfg.mass)?;
        worst = worst.max(e / cfg.mass.abs());
    }
    Ok(worst)
}

fn run_checks(spec: &ExperimentSpec, jobs: &[Job], trajs: &[Trajectory], ev: &mut Evaluation) -> Result<()> {
    let mut table = Table::new("runs", &["run", "steps", "mass_drift", "entropy_min", "marginal_defect"]);
    let mut worst_mass: f64 = 0.0;
    let mut worst_entropy: Option<f64> = None;
    let mut worst_marginal: Option<f64> = None;
    for (job, t) in jobs.iter().zip(trajs) {
        let drift = mass_drift(t);
        worst_mass = worst_mass.max(drift);
        let ent = monitored_entropy(t);
        if let Some(e) = ent {
            worst_entropy = Some(worst_entropy.map_or(e, |w: f64| w.min(e)));
        }
        let marg = match (t.grid().dim(), job.marginal_t0) {
            (2, Some(t0)) => Some(marginal_defect(t, t0)?),
            _ => None,
        };
        if let Some(m) = marg {
            worst_marginal = Some(worst_marginal.map_or(m, |w: f64| w.max(m)));
        }
        table.push(vec![
            t.run_id().to_string(),
            t.steps.to_string(),
            num(drift),
            ent.map_or(String::new(), num),
            marg.map_or(String::new(), num),
        ]);
    }
    ev.checks.push(CheckRecord::at_most(
        "mass drift (worst run, relative)",
        worst_mass,
        spec.checks.mass_tol,
        "checks.mass_tol",
    ));
    if let Some(e) = worst_entropy {
        ev.checks.push(CheckRecord::at_least(
            "monitored cell entropy production (worst run, relative to |M|)",
            e,
            -spec.checks.entropy_cell_tol,
            "checks.entropy_cell_tol",
        ));
    }
    if let Some(m) = worst_marginal {
        ev.checks.push(CheckRecord::at_most(
            "transversal marginal vs heat kernel (worst run, relative to |M|)",
            m,
            MARGINAL_TOL,
            "marginal identity tolerance",
        ));
    }
    ev.tables.push(table);
    Ok(())
}

/// `L¹` distance between a field and the heat kernel at time `t`.
pub fn heat_error(f: &Field, mass: f64, t: f64) -> f64 {
    let g = f.grid();
    let dim = g.dim();
    let diffs: Vec<f64> = f
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| (v - mass * heat_kernel(&g.coords(i)[..dim], t)).abs())
        .collect();
    fastconv::grid::pairwise_sum(&diffs) * g.cell_volume()
}

fn eval_heat(spec: &ExperimentSpec, p: &HeatParams, trajs: &[Trajectory], seconds: &[f64], ev: &mut Evaluation) -> Result<()> {
    let base = &spec.base;
    let t_eval = p.t_eval.unwrap_or(base.t_end);
    let InitialRecipe::HeatKernel { t0 } = base.initial else {
        return Err(Error::Precondition("heat baseline needs the heat-kernel recipe".into()));
    };
    let mut table = Table::new("heat_error", &["spacing", "l1_error", "ratio", "seconds"]);
    let mut errors = Vec::new();
    for (k, (t, &h)) in trajs.iter().zip(&p.spacings).enumerate() {
        let e = heat_error(&t.at(t_eval)?.field, base.mass, t_eval - base.t_start + t0);
        let ratio = if k > 0 { errors[k - 1] / e } else { f64::NAN };
        errors.push(e);
        table.push(vec![num(h), num(e), num(ratio), num(seconds[k])]);
        ev.checks.push(CheckRecord::at_most(format!("runtime at spacing {h} (s)"), seconds[k], p.max_seconds, "heat.max_seconds"));
    }
    for k in 1..errors.len() {
        let ratio = errors[k - 1] / errors[k];
        let (h0, h1) = (p.spacings[k - 1], p.spacings[k]);
        let expected = p.ratio * (h0 / h1 / 2.0).powi(2);
        ev.checks.push(CheckRecord::at_most(
            format!("error ratio {h0} -> {h1}: |ratio/{expected} - 1|"),
            (ratio / expected - 1.0).abs(),
            p.ratio_tol,
            "heat.ratio_tol",
        ));
    }
    ev.tables.push(table);
    Ok(())
}

/// Slope fits of one run for each norm exponent.
pub fn decay_rows(traj: &Trajectory, norms: &[f64], window: (f64, f64)) -> Result<Vec<(f64, selfsim::DecayFit, f64)>> {
    let e = run_exponents(&traj.config)?;
    norms
        .iter()
        .map(|&p| Ok((p, selfsim::decay_fit(traj, p, window)?, e.lp_slope(p))))
        .collect()
}

fn eval_decay(p: &DecayParams, trajs: &[Trajectory], seconds: &[f64], ev: &mut Evaluation) -> Result<()> {
    let window = (p.window[0], p.window[1]);
    let mut table = Table::new(
        "decay_fit",
        &["operator", "p", "window_lo", "window_hi", "slope", "stderr", "theoretical", "relative_error", "pass"],
    );
    let mut first: Vec<f64> = Vec::new();
    for (i, (t, op)) in trajs.iter().zip(&p.resolved).enumerate() {
        let name = op_name(op);
        for (j, (norm, fit, th)) in decay_rows(t, &p.norms, window)?.into_iter().enumerate() {
            let rel = (fit.slope - th).abs() / th.abs();
            let c = CheckRecord::at_most(
                format!("{name} L^{norm} slope {:.4} vs {th:.4} (relative error)", fit.slope),
                rel,
                p.tol,
                "decay.tol",
            );
            table.push(vec![
                name.clone(),
                num(norm),
                num(window.0),
                num(window.1),
                num(fit.slope),
                num(fit.stderr),
                num(th),
                num(rel),
                if c.pass { "pass".into() } else { "FAIL".into() },
            ]);
            ev.checks.push(c);
            if i == 0 {
                first.push(fit.slope);
            } else {
                ev.checks.push(CheckRecord::at_most(
                    format!("{name} L^{norm} slope vs {} (relative difference)", op_name(&p.resolved[0])),
                    (fit.slope - first[j]).abs() / first[j].abs(),
                    p.tol,
                    "decay.tol",
                ));
            }
        }
        if let Some(limit) = p.max_seconds {
            ev.checks.push(CheckRecord::at_most(format!("{name} runtime (s)"), seconds[i], limit, "decay.max_seconds"));
        }
    }
    ev.tables.push(table);
    Ok(())
}

/// `(t, factor·t, distance)` for each collapse time.
pub fn collapse_rows(traj: &Trajectory, times: &[f64], factor: f64) -> Result<Vec<(f64, f64, f64)>> {
    let e = run_exponents(&traj.config)?;
    times
        .par_iter()
        .map(|&t| Ok((t, factor * t, selfsim::collapse_distance(traj, &e, t, factor * t)?)))
        .collect()
}

/// Appends the monotonicity and ratio checks of a collapse table.
pub fn collapse_checks(rows: &[(f64, f64, f64)], max_ratio: Option<f64>, prefix: &str) -> Vec<CheckRecord> {
    let d: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let mut out = vec![CheckRecord::flag(
        format!("{prefix}collapse distance strictly decreasing over t = {:?}", rows.iter().map(|r| r.0).collect::<Vec<_>>()),
        d.windows(2).all(|w| w[1] < w[0]),
        "monotone collapse",
    )];
    if let (Some(limit), Some(first), Some(last)) = (max_ratio, d.first(), d.last()) {
        out.push(CheckRecord::at_most(
            format!("{prefix}collapse distance last/first"),
            last / first,
            limit,
            "collapse.max_ratio",
        ));
    }
    out
}

fn eval_collapse(p: &CollapseParams, traj: &Trajectory, seconds: f64, ev: &mut Evaluation) -> Result<()> {
    let rows = collapse_rows(traj, &p.times, p.factor)?;
    let mut table = Table::new("collapse", &["t", "t2", "distance"]);
    for r in &rows {
        table.push(vec![num(r.0), num(r.1), num(r.2)]);
    }
    ev.checks.extend(collapse_checks(&rows, p.max_ratio, ""));
    if let Some(limit) = p.max_seconds {
        ev.checks.push(CheckRecord::at_most("runtime (s)", seconds, limit, "collapse.max_seconds"));
    }
    ev.tables.push(table);
    Ok(())
}

fn pairs_of(trajs: &[Trajectory]) -> Result<Vec<RunPair>> {
    trajs.chunks(2).map(|c| RunPair::new(c[0].clone(), c[1].clone())).collect()
}

fn eval_uniqueness(p: &UniquenessParams, trajs: &[Trajectory], ev: &mut Evaluation) -> Result<()> {
    let pairs = pairs_of(trajs)?;
    let rows = diagnostics::uniqueness_table(&pairs, &p.widths, p.t_star)?;
    let mut table = Table::new("uniqueness", &["width", "initial_distance", "distance"]);
    for r in &rows {
        table.push(vec![num(r.width), num(r.initial_distance), num(r.distance)]);
    }
    let d: Vec<f64> = rows.iter().map(|r| r.distance).collect();
    ev.checks.push(CheckRecord::flag(
        format!("distance at t* = {} strictly decreasing in width", p.t_star),
        d.windows(2).all(|w| w[1] < w[0]),
        "uniqueness limit direction",
    ));
    let excess = rows
        .iter()
        .zip(&pairs)
        .map(|(r, pair)| r.distance - r.initial_distance - 2.0 * pair.steps() as f64 * pair.tol_unit())
        .fold(f64::NEG_INFINITY, f64::max);
    ev.checks.push(CheckRecord::at_most(
        "distance at t* minus initial distance (worst width, after 2*steps*lin_tol allowance)",
        excess,
        0.0,
        "L1 contraction",
    ));
    if let (Some(floor), Some(last)) = (p.floor, d.last()) {
        ev.checks.push(CheckRecord::at_most(
            "final distance",
            *last,
            p.floor_factor * floor,
            "uniqueness.floor_factor * uniqueness.floor",
        ));
    }
    ev.tables.push(table);
    Ok(())
}

fn eval_sign(p: &SignParams, trajs: &[Trajectory], ev: &mut Evaluation) -> Result<()> {
    let rows = diagnostics::sign_table(trajs, &p.widths, p.t_star)?;
    let mut table = Table::new("sign", &["width", "neg_initial", "neg_at_t_star", "max_increase_in_t"]);
    let mut worst_increase = f64::NEG_INFINITY;
    for (r, t) in rows.iter().zip(trajs) {
        let unit = t.config.lin_tol * lp_norm(&t.first().field, 1.0)?;
        let inc = diagnostics::max_increase(&r.series);
        worst_increase = worst_increase.max(inc - 2.0 * t.steps as f64 * unit);
        table.push(vec![num(r.width), num(r.neg_initial), num(r.neg_at), num(inc)]);
    }
    let neg: Vec<f64> = rows.iter().map(|r| r.neg_at).collect();
    ev.checks.push(CheckRecord::flag(
        format!("negative mass at t = {} strictly decreasing in width", p.t_star),
        neg.windows(2).all(|w| w[1] < w[0]),
        "sign limit direction",
    ));
    if let Some(last) = rows.last() {
        ev.checks.push(CheckRecord::at_most(
            "final negative mass / its initial value",
            last.neg_at / last.neg_initial.max(1e-300),
            p.max_fraction,
            "sign.max_fraction",
        ));
    }
    ev.checks.push(CheckRecord::at_most(
        "negative mass increase in time (worst width, after 2*steps*lin_tol allowance)",
        worst_increase,
        0.0,
        "contraction against zero",
    ));
    ev.tables.push(table);
    Ok(())
}

fn eval_pairs(ordered: bool, trajs: &[Trajectory], ev: &mut Evaluation) -> Result<()> {
    let pairs = pairs_of(trajs)?;
    let mut table = Table::new(
        "pairs",
        &["pair", "steps", "start_distance", "max_increase", "comparison_violation", "mass_difference_drift", "tol_unit"],
    );
    let rows: Vec<(f64, f64, f64, f64, f64)> = pairs
        .par_iter()
        .map(|pair| {
            let s = diagnostics::contraction_series(pair)?;
            let cmp = if ordered { diagnostics::comparison_check(pair)? } else { f64::NAN };
            Ok((s[0].1, diagnostics::max_increase(&s), cmp, diagnostics::mass_difference_drift(pair), pair.tol_unit()))
        })
        .collect::<Result<_>>()?;
    let (mut contraction, mut comparison, mut drift) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (k, (pair, r)) in pairs.iter().zip(&rows).enumerate() {
        let steps = pair.steps() as f64;
        contraction = contraction.max(r.1 / (2.0 * steps * r.4));
        drift = drift.max(r.3 / (steps * r.4));
        if ordered {
            comparison = comparison.max(r.2 / (steps * r.4));
        }
        table.push(vec![k.to_string(), pair.steps().to_string(), num(r.0), num(r.1), num(r.2), num(r.3), num(r.4)]);
    }
    ev.checks.push(CheckRecord::at_most(
        "contraction series increase / (2*steps*lin_tol*|u0|_1), worst pair",
        contraction,
        1.0,
        "L1 contraction",
    ));
    if ordered {
        ev.checks.push(CheckRecord::at_most(
            "comparison violation / (steps*lin_tol*|u0|_1), worst pair",
            comparison,
            1.0,
            "comparison principle",
        ));
    }
    ev.checks.push(CheckRecord::at_most(
        "mass difference drift / (steps*lin_tol*|u0|_1), worst pair",
        drift,
        1.0,
        "conservation",
    ));
    ev.tables.push(table);
    Ok(())
}

/// Random test bumps for an audit. Centers are drawn with weight
/// `|u_{j+1} - u_j|` along `x_N` at the snapshot nearest the bump's time
/// center, so they concentrate on fronts and shocks.
pub fn test_bumps(traj: &Trajectory, count: usize, seed: u64) -> Result<Vec<TestBump>> {
    let g = traj.grid();
    let dim = g.dim();
    let h = max_spacing(g);
    let (t0, t1) = (traj.first().t, traj.last().t);
    let max_dt = traj.snapshots.iter().map(|s| s.dt).fold(0.0, f64::max);
    let t_radius = ((t1 - t0) / 8.0).max(2.0 * max_dt * (1.0 + 1e-9));
    if 2.0 * t_radius > t1 - t0 {
        return Err(Error::Precondition(format!("window [{t0}, {t1}] too short for test bumps")));
    }
    let extent = (0..dim).map(|a| g.upper(a) - g.origin(a)).fold(f64::INFINITY, f64::min);
    let rmin = 2.0 * h * (1.0 + 1e-9);
    let rmax = (0.1 * extent).max(2.0 * rmin);
    if extent < 2.0 * (rmax + 4.0 * h) {
        return Err(Error::Precondition("grid too small for test bumps".into()));
    }
    let n = g.line_len();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let tc = rng.gen_range(t0 + t_radius..=t1 - t_radius);
        let snap = traj
            .snapshots
            .iter()
            .min_by(|a, b| (a.t - tc).abs().total_cmp(&(b.t - tc).abs()))
            .expect("trajectory has snapshots");
        let v = snap.field.values();
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        let weights: Vec<f64> = (0..v.len())
            .map(|i| {
                let jump = if (i % n) + 1 < n { (v[i + 1] - v[i]).abs() } else { 0.0 };
                jump + 1e-6 * scale
            })
            .collect();
        let cell = WeightedIndex::new(&weights).map_err(|e| Error::Precondition(e.to_string()))?.sample(&mut rng);
        let radius = rng.gen_range(rmin..=rmax);
        let x = g.coords(cell);
        let mut c = [0.0; MAX_DIM];
        for a in 0..dim {
            let ha = g.spacing(a);
            c[a] = x[a].clamp(g.origin(a) + radius + 4.0 * ha, g.upper(a) - radius - 4.0 * ha);
        }
        out.push(TestBump::new(&c[..dim], radius, tc, t_radius));
    }
    Ok(out)
}

/// The same bumps seen by the time-reversed, mirrored trajectory.
pub fn mirrored_bumps(traj: &Trajectory, tests: &[TestBump]) -> Vec<TestBump> {
    let g = traj.grid();
    let axis = g.xn_axis();
    let (t0, t1) = (traj.first().t, traj.last().t);
    let sum = g.origin(axis) + g.upper(axis);
    tests
        .iter()
        .map(|b| {
            let mut m = *b;
            m.center[axis] = sum - b.center[axis];
            m.t_center = t0 + t1 - b.t_center;
            m
        })
        .collect()
}

/// Kružkov audit with the test functions evaluated in parallel.
pub fn parallel_audit(traj: &Trajectory, levels: &[f64], tests: &[TestBump], tol: f64) -> Result<entropy::EntropyAudit> {
    let parts: Vec<entropy::EntropyAudit> =
        tests.par_iter().map(|phi| entropy::audit(traj, levels, std::slice::from_ref(phi), tol)).collect::<Result<_>>()?;
    let mut whole = entropy::audit(traj, levels, &[], tol)?;
    for p in parts {
        whole.rows.extend(p.rows);
        whole.flux_gap_bound = whole.flux_gap_bound.max(p.flux_gap_bound);
    }
    whole.tests = tests.to_vec();
    Ok(whole)
}

/// Worst per-cell production over all levels.
pub fn worst_cell_production(traj: &Trajectory, levels: &[f64]) -> Result<f64> {
    let worst: Vec<f64> = levels.par_iter().map(|&k| entropy::cell_entropy_check(traj, k)).collect::<Result<_>>()?;
    Ok(worst.into_iter().fold(f64::INFINITY, f64::min))
}

fn audit_table(name: &str, a: &entropy::EntropyAudit) -> Table {
    let mut t = Table::new(name, &["k", "center_x1", "center_x2", "radius", "t_center", "t_radius", "residual", "pass"]);
    for r in &a.rows {
        let c2 = if a.dim == 2 { num(r.phi.center[1]) } else { String::new() };
        t.push(vec![
            num(r.k),
            num(r.phi.center[0]),
            c2,
            num(r.phi.radius),
            num(r.phi.t_center),
            num(r.phi.t_radius),
            num(r.residual),
            if r.pass { "pass".into() } else { "FAIL".into() },
        ]);
    }
    t
}

fn eval_entropy(spec: &ExperimentSpec, p: &EntropyParams, traj: &Trajectory, ev: &mut Evaluation) -> Result<()> {
    let m = traj.config.mass.abs();
    let (lo, hi) = traj
        .snapshots
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.field.min()), b.max(s.field.max())));
    let levels = entropy::levels(lo, hi, p.levels);
    let cell = worst_cell_production(traj, &levels)?;
    ev.checks.push(CheckRecord::at_least(
        "worst cell entropy production over all levels / |M|",
        cell / m,
        -spec.checks.entropy_cell_tol,
        "checks.entropy_cell_tol",
    ));
    let tests = test_bumps(traj, p.bumps, p.seed)?;
    let tol = p.tol * m;
    let fwd = parallel_audit(traj, &levels, &tests, tol)?;
    ev.checks.push(CheckRecord::at_least(
        format!("worst Kruzhkov residual over {} levels x {} bumps / |M|", levels.len(), tests.len()),
        fwd.worst() / m,
        -p.tol,
        "entropy.tol",
    ));
    let mut info = Table::new("entropy_summary", &["quantity", "value"]);
    info.push(vec!["flux_gap_bound".into(), num(fwd.flux_gap_bound)]);
    info.push(vec!["levels".into(), levels.len().to_string()]);
    info.push(vec!["bumps".into(), tests.len().to_string()]);
    ev.tables.push(audit_table("entropy_audit", &fwd));
    if p.reversed {
        let rev = traj.time_reversed();
        let back = parallel_audit(&rev, &levels, &mirrored_bumps(traj, &tests), tol)?;
        ev.checks.push(CheckRecord::at_most(
            "worst Kruzhkov residual of the time-reversed run / |M| (must fail)",
            back.worst() / m,
            -p.tol,
            "entropy.tol",
        ));
        info.push(vec!["reversed_failures".into(), back.failures().to_string()]);
        ev.tables.push(audit_table("entropy_audit_reversed", &back));
    }
    ev.tables.push(info);
    Ok(())
}

fn eval_tail(p: &TailParams, trajs: &[Trajectory], ev: &mut Evaluation) -> Result<()> {
    let mut table = Table::new(
        "tail",
        &["run", "t", "r", "measured", "diffusive", "convective", "initial", "bound"],
    );
    let mut fits = Table::new("tail_fit", &["run", "a", "fitted_c"]);
    let mut cs = Vec::new();
    for t in trajs {
        let rep = diagnostics::tail_report(t, &p.radii)?;
        for r in &rep.rows {
            table.push(vec![
                t.run_id().into(),
                num(r.t),
                num(r.r),
                num(r.measured),
                num(r.diffusive),
                num(r.convective),
                num(r.initial),
                num(r.bound()),
            ]);
        }
        fits.push(vec![t.run_id().into(), num(rep.a), num(rep.fitted_c)]);
        cs.push(rep.fitted_c);
    }
    let (lo, hi) = cs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
    ev.checks.push(CheckRecord::at_most(
        "fitted tail constant max/min over base, refined and enlarged grids",
        if lo > 0.0 { hi / lo } else { f64::INFINITY },
        p.stability,
        "tail.stability",
    ));
    ev.tables.push(table);
    ev.tables.push(fits);
    Ok(())
}

fn eval_sandwich(p: &SandwichParams, trajs: &[Trajectory], ev: &mut Evaluation) -> Result<()> {
    let pair = RunPair::new(trajs[0].clone(), trajs[1].clone())?;
    let worst = diagnostics::primitive_sandwich(&pair, p.r)?;
    let m = trajs[0].config.mass.abs();
    ev.checks.push(CheckRecord::at_most(
        format!("primitive sandwich violation with shift 2r = {} / |M|", 2.0 * p.r),
        worst / m,
        p.tol,
        "sandwich.tol",
    ));
    let mut table = Table::new("sandwich", &["r", "violation", "mass"]);
    table.push(vec![num(p.r), num(worst), num(m)]);
    ev.tables.push(table);
    Ok(())
}

/// `∫ |u(t, x + ξ e_N) - u(t, x)| dx` at the final snapshot for `ξ = k Δx_N`.
pub fn shift_rows(traj: &Trajectory, multiples: &[usize]) -> Result<Vec<(f64, f64)>> {
    let f = &traj.last().field;
    let h = f.grid().spacing(f.grid().xn_axis());
    multiples.iter().map(|&k| Ok((k as f64 * h, diagnostics::shift_difference(f, k as f64 * h)?))).collect()
}

fn eval_energy(p: &EnergyParams, traj: &Trajectory, ev: &mut Evaluation) -> Result<()> {
    let cfg = &traj.config;
    let (integral, half) = diagnostics::energy_balance(traj, p.tau, cfg.t_end)?;
    ev.checks.push(CheckRecord::at_most(
        format!("energy integral over [{}, {}] / (|u(tau)|^2 / 2)", p.tau, cfg.t_end),
        integral / half,
        1.0 + p.slack,
        "1 + energy.slack",
    ));
    let mut series = Table::new("energy_series", &["t", "energy"]);
    for (t, e) in diagnostics::energy_series(traj) {
        series.push(vec![num(t), num(e)]);
    }
    let mut info = Table::new("energy_summary", &["quantity", "value"]);
    info.push(vec!["integral".into(), num(integral)]);
    info.push(vec!["half_l2_squared_at_tau".into(), num(half)]);
    if cfg.convection && p.tau > 0.0 {
        let e = run_exponents(cfg)?;
        let scale = p.tau.powf(-e.alpha) * cfg.mass.abs().powf(1.0 / cfg.flux.q);
        info.push(vec!["fitted_constant".into(), num(integral / scale)]);
    }
    let shifts = shift_rows(traj, &[16, 8, 4, 2, 1])?;
    let mut shift = Table::new("shift_difference", &["xi", "difference"]);
    for (x, d) in &shifts {
        shift.push(vec![num(*x), num(*d)]);
    }
    ev.checks.push(CheckRecord::flag(
        "shift difference decreasing as xi -> 0",
        shifts.windows(2).all(|w| w[1].1 <= w[0].1),
        "x_N shift estimate",
    ));
    ev.tables.extend([series, info, shift]);
    Ok(())
}

/// Per-figure data.
pub fn plots(spec: &ExperimentSpec, trajs: &[Trajectory], ev: &Evaluation) -> Result<Vec<Table>> {
    let mut out = Vec::new();
    match &spec.params {
        Params::Heat(_) => {
            if let Some(t) = ev.table("heat_error") {
                let mut p = Table::new("heat_loglog", &["log10_spacing", "log10_error"]);
                for r in &t.rows {
                    let (h, e): (f64, f64) = (r[0].parse().unwrap_or(f64::NAN), r[1].parse().unwrap_or(f64::NAN));
                    p.push(vec![num(h.log10()), num(e.log10())]);
                }
                out.push(p);
            }
        }
        Params::Decay(p) => {
            for (t, op) in trajs.iter().zip(&p.resolved) {
                for &norm in &p.norms {
                    let mut tab = Table::new(format!("decay_{}_p{norm}", op_name(op)), &["log10_t", "log10_norm"]);
                    for (x, y) in selfsim::norm_points(t, norm)? {
                        if x > 0.0 && y > 0.0 {
                            tab.push(vec![num(x.log10()), num(y.log10())]);
                        }
                    }
                    out.push(tab);
                }
            }
        }
        Params::Collapse(p) => {
            let traj = &trajs[0];
            let e = run_exponents(&traj.config)?;
            let target = selfsim::profile_grid(traj.grid(), p.times[0], &e)?;
            let mut times: Vec<f64> = p.times.iter().flat_map(|&t| [t, t * p.factor]).collect();
            times.sort_by(f64::total_cmp);
            times.dedup();
            for t in times {
                out.push(profile_slice(traj, &e, t, &target)?);
            }
        }
        Params::Uniqueness(_) | Params::Sign(_) | Params::Tail(_) | Params::Sandwich(_) => {
            out.extend(ev.tables.iter().filter(|t| t.name != "runs").cloned());
            if let Params::Sign(p) = &spec.params {
                let mut tab = Table::new("sign_series", &["width", "t", "neg_mass"]);
                for (t, w) in trajs.iter().zip(&p.widths) {
                    for s in &t.series {
                        tab.push(vec![num(*w), num(s.t), num(s.neg_mass)]);
                    }
                }
                out.push(tab);
            }
        }
        Params::Pairs(_) => {
            let mut tab = Table::new("contraction_series", &["pair", "t", "distance"]);
            for (k, pair) in pairs_of(trajs)?.iter().enumerate() {
                for (t, d) in diagnostics::contraction_series(pair)? {
                    tab.push(vec![k.to_string(), num(t), num(d)]);
                }
            }
            out.push(tab);
        }
        Params::Entropy(_) | Params::Energy(_) => {
            out.extend(ev.tables.iter().filter(|t| t.name != "runs").cloned());
        }
    }
    Ok(out)
}

/// Rescaled profile of `u(t)` on `target` along `x_N` through `ξ' = 0`.
pub fn profile_slice(traj: &Trajectory, e: &Exponents, t: f64, target: &Grid) -> Result<Table> {
    let f = selfsim::rescale(&traj.at(t)?.field, t, e, target)?;
    let g = *f.grid();
    let axis = g.xn_axis();
    let n = g.line_len();
    let row = if g.dim() == 2 { g.zero_index(0) } else { 0 };
    let mut tab = Table::new(format!("profile_t{t}"), &["xi_n", "value"]);
    for j in 0..n {
        tab.push(vec![num(g.center(axis, j)), num(f.values()[row * n + j])]);
    }
    Ok(tab)
}
