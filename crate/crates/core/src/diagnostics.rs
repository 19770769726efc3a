//! Cross-run checks: contraction, comparison, sign and uniqueness
//! experiments, tail control, the primitive sandwich and energy balance.

use crate::error::{Error, Result};
use crate::grid::{integrate, lp_norm, pairwise_sum, pairwise_sum_map, primitive_xn, tail_mass, Field, Grid};
use crate::stepper::{make_initial, run_from_field, InitialRecipe, RunConfig, Trajectory};

/// Outcome of one asserted check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRecord {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    /// Where the tolerance comes from.
    pub source: String,
    pub pass: bool,
}

impl CheckRecord {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64, source: impl Into<String>) -> Self {
        CheckRecord {
            name: name.into(),
            measured,
            tolerance,
            source: source.into(),
            pass: measured <= tolerance,
        }
    }

    /// Passes when `measured >= tolerance`.
    pub fn at_least(name: impl Into<String>, measured: f64, tolerance: f64, source: impl Into<String>) -> Self {
        CheckRecord {
            name: name.into(),
            measured,
            tolerance,
            source: source.into(),
            pass: measured >= tolerance,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool, source: impl Into<String>) -> Self {
        CheckRecord {
            name: name.into(),
            measured: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            source: source.into(),
            pass: ok,
        }
    }
}

/// Two runs that differ only in their initial data.
#[derive(Clone, Debug)]
pub struct RunPair {
    pub a: Trajectory,
    pub b: Trajectory,
}

impl RunPair {
    pub fn new(a: Trajectory, b: Trajectory) -> Result<Self> {
        let (ca, cb) = (&a.config, &b.config);
        if ca.grid != cb.grid
            || ca.operator != cb.operator
            || ca.flux != cb.flux
            || ca.convection != cb.convection
            || ca.theta != cb.theta
        {
            return Err(Error::Misaligned("runs differ in grid, operator or flux".into()));
        }
        let same = a.snapshots.len() == b.snapshots.len()
            && a.snapshots.iter().zip(&b.snapshots).all(|(x, y)| x.t == y.t && x.step == y.step);
        if !same {
            return Err(Error::Misaligned("snapshot schedules differ".into()));
        }
        Ok(RunPair { a, b })
    }

    pub fn steps(&self) -> usize {
        self.a.steps.max(self.b.steps)
    }

    /// `lin_tol` scaled by the larger initial `L¹` norm.
    pub fn tol_unit(&self) -> f64 {
        let l1 = |t: &Trajectory| lp_norm(&t.first().field, 1.0).unwrap_or(0.0);
        self.a.config.lin_tol * l1(&self.a).max(l1(&self.b)).max(1e-300)
    }
}

/// `t ↦ ‖u(t) - ū(t)‖₁` over the common snapshots.
pub fn contraction_series(pair: &RunPair) -> Result<Vec<(f64, f64)>> {
    pair.a
        .snapshots
        .iter()
        .zip(&pair.b.snapshots)
        .map(|(x, y)| Ok((x.t, lp_norm(&x.field.sub(&y.field)?, 1.0)?)))
        .collect()
}

/// Largest increase between consecutive entries of a series.
pub fn max_increase(series: &[(f64, f64)]) -> f64 {
    series.windows(2).map(|w| w[1].1 - w[0].1).fold(0.0, f64::max)
}

/// Largest `(u - ū)⁺` over all snapshots and cells. Requires `u₀ <= ū₀`.
pub fn comparison_check(pair: &RunPair) -> Result<f64> {
    let (u0, v0) = (&pair.a.first().field, &pair.b.first().field);
    if u0.values().iter().zip(v0.values()).any(|(u, v)| u > v) {
        return Err(Error::Precondition("comparison needs u0 <= ubar0 cellwise".into()));
    }
    Ok(pair
        .a
        .snapshots
        .iter()
        .zip(&pair.b.snapshots)
        .flat_map(|(x, y)| x.field.values().iter().zip(y.field.values()).map(|(u, v)| u - v))
        .fold(0.0, f64::max))
}

/// Largest change of `∫u - ∫ū` relative to its initial value.
pub fn mass_difference_drift(pair: &RunPair) -> f64 {
    let d: Vec<f64> = pair
        .a
        .snapshots
        .iter()
        .zip(&pair.b.snapshots)
        .map(|(x, y)| integrate(&x.field) - integrate(&y.field))
        .collect();
    d.iter().map(|v| (v - d[0]).abs()).fold(0.0, f64::max)
}

/// Radial `C^∞` bump with unit peak.
fn unit_bump(x: &[f64], center: &[f64], radius: f64) -> f64 {
    let s: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>() / (radius * radius);
    if s < 1.0 {
        (1.0 - 1.0 / (1.0 - s)).exp()
    } else {
        0.0
    }
}

/// Zero-mass dipole along `x_N`: a unit-peak bump of radius `h/2` at
/// `x_N = +h/2` minus its exact mirror image. Supported in `|x| <= h`.
pub fn dipole(grid: &Grid, h: f64) -> Result<Field> {
    let dim = grid.dim();
    let mut center = vec![0.0; dim];
    center[dim - 1] = 0.5 * h;
    let plus = Field::from_fn(*grid, |x| unit_bump(x, &center, 0.5 * h))?;
    let n = grid.line_len();
    let z = grid.zero_index(dim - 1);
    let mut v = plus.values().to_vec();
    for (line, src) in v.chunks_mut(n).zip(plus.values().chunks(n)) {
        for j in 0..n {
            let mirror = if 2 * z >= j && 2 * z - j < n { src[2 * z - j] } else { 0.0 };
            line[j] = src[j] - mirror;
        }
    }
    let d = Field::new(*grid, v)?;
    let mass = integrate(&d);
    let scale = lp_norm(&d, 1.0)?;
    if mass.abs() > 1e-12 * scale.max(1e-300) {
        return Err(Error::Precondition(format!("dipole mass {mass:e} is not zero")));
    }
    Ok(d)
}

/// Initial data of the sign experiment at width `h`: `gaussian(h)` with mass
/// `M` plus `amplitude · max(u₀)` times the dipole of width `h`.
pub fn sign_initial(base: &RunConfig, amplitude: f64, h: f64) -> Result<Field> {
    let u0 = make_initial(&InitialRecipe::Gaussian { width: h }, base.mass, &base.grid)?;
    let d = dipole(&base.grid, h)?;
    u0.combine(1.0, &d, amplitude * u0.max())
}

/// Configs and initial data of the sign experiment, one per width.
pub fn sign_runs(base: &RunConfig, amplitude: f64, widths: &[f64]) -> Result<Vec<(RunConfig, Field)>> {
    widths
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let cfg = RunConfig {
                run_id: format!("{}-sign{k}", base.run_id),
                initial: InitialRecipe::Gaussian { width: h },
                ..base.clone()
            };
            Ok((cfg, sign_initial(base, amplitude, h)?))
        })
        .collect()
}

/// One width of the sign experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SignRow {
    pub width: f64,
    pub neg_initial: f64,
    pub neg_at: f64,
    /// `(t, ‖u⁻(t)‖₁)` from the recorded series.
    pub series: Vec<(f64, f64)>,
}

pub fn sign_table(trajs: &[Trajectory], widths: &[f64], t_star: f64) -> Result<Vec<SignRow>> {
    trajs
        .iter()
        .zip(widths)
        .map(|(tr, &h)| {
            let neg = |f: &Field| pairwise_sum_map(f.values(), |x| (-x).max(0.0)) * f.grid().cell_volume();
            Ok(SignRow {
                width: h,
                neg_initial: neg(&tr.first().field),
                neg_at: neg(&tr.at(t_star)?.field),
                series: tr.series.iter().map(|s| (s.t, s.neg_mass)).collect(),
            })
        })
        .collect()
}

/// Runs the sign experiment sequentially.
pub fn sign_experiment(base: &RunConfig, amplitude: f64, widths: &[f64], t_star: f64) -> Result<Vec<SignRow>> {
    let trajs = sign_runs(base, amplitude, widths)?
        .into_iter()
        .map(|(c, u)| run_from_field(&c, u))
        .collect::<Result<Vec<_>>>()?;
    sign_table(&trajs, widths, t_star)
}

/// Configs for the uniqueness experiment: for each width, `r1` and `r2`
/// (given at unit width) scaled to that width.
pub fn uniqueness_runs(base: &RunConfig, r1: InitialRecipe, r2: InitialRecipe, widths: &[f64]) -> Vec<(RunConfig, RunConfig)> {
    widths
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let mk = |r: InitialRecipe, tag: &str| RunConfig {
                run_id: format!("{}-{tag}{k}", base.run_id),
                initial: r.scaled(h),
                ..base.clone()
            };
            (mk(r1, "a"), mk(r2, "b"))
        })
        .collect()
}

/// One width of the uniqueness experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessRow {
    pub width: f64,
    pub initial_distance: f64,
    pub distance: f64,
}

pub fn uniqueness_table(pairs: &[RunPair], widths: &[f64], t_star: f64) -> Result<Vec<UniquenessRow>> {
    pairs
        .iter()
        .zip(widths)
        .map(|(p, &h)| {
            Ok(UniquenessRow {
                width: h,
                initial_distance: lp_norm(&p.a.first().field.sub(&p.b.first().field)?, 1.0)?,
                distance: lp_norm(&p.a.at(t_star)?.field.sub(&p.b.at(t_star)?.field)?, 1.0)?,
            })
        })
        .collect()
}

/// Runs the uniqueness experiment sequentially.
pub fn uniqueness_experiment(
    base: &RunConfig,
    r1: InitialRecipe,
    r2: InitialRecipe,
    widths: &[f64],
    t_star: f64,
) -> Result<Vec<UniquenessRow>> {
    let pairs = uniqueness_runs(base, r1, r2, widths)
        .into_iter()
        .map(|(a, b)| RunPair::new(crate::stepper::run(&a)?, crate::stepper::run(&b)?))
        .collect::<Result<Vec<_>>>()?;
    uniqueness_table(&pairs, widths, t_star)
}

/// One `(t, R)` entry of a tail report.
#[derive(Clone, Debug, PartialEq)]
pub struct TailRow {
    pub t: f64,
    pub r: f64,
    /// `∫_{|x|>2R} |u(t)|`.
    pub measured: f64,
    /// `A t / R²`.
    pub diffusive: f64,
    /// `C(A) t / R^{1-N(q-1)}` with `C(A) = A^q`.
    pub convective: f64,
    /// `∫_{|x|>R} |u₀|`.
    pub initial: f64,
}

impl TailRow {
    pub fn bound(&self) -> f64 {
        self.diffusive + self.convective + self.initial
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailReport {
    /// `A = sup_t ‖u(t)‖₁`.
    pub a: f64,
    pub rows: Vec<TailRow>,
    /// Smallest `c` with `measured <= c · bound` on every row with `t > t_start`.
    pub fitted_c: f64,
}

pub fn tail_report(traj: &Trajectory, radii: &[f64]) -> Result<TailReport> {
    let cfg = &traj.config;
    let dim = cfg.grid.dim() as f64;
    let q = cfg.flux.q;
    let a = traj
        .snapshots
        .iter()
        .map(|s| lp_norm(&s.field, 1.0))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let t0 = traj.first().t;
    let mut rows = Vec::new();
    for s in &traj.snapshots {
        for &r in radii {
            if !(r > 0.0) {
                return Err(Error::Precondition(format!("tail radius {r} must be positive")));
            }
            let dt = s.t - t0;
            rows.push(TailRow {
                t: s.t,
                r,
                measured: tail_mass(&s.field, 2.0 * r),
                diffusive: a * dt / (r * r),
                convective: a.powf(q) * dt / r.powf(1.0 - dim * (q - 1.0)),
                initial: tail_mass(&traj.first().field, r),
            });
        }
    }
    let fitted_c = rows
        .iter()
        .filter(|r| r.t > t0)
        .map(|r| if r.bound() > 0.0 { r.measured / r.bound() } else if r.measured > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    Ok(TailReport { a, rows, fitted_c })
}

/// Integer cell count of a shift along `x_N`.
fn shift_cells(grid: &Grid, shift: f64) -> Result<usize> {
    let h = grid.spacing(grid.xn_axis());
    let m = (shift / h).round();
    if (shift / h - m).abs() > 1e-9 || m < 0.0 {
        return Err(Error::Misaligned(format!("shift {shift} is not a whole number of cells of width {h}")));
    }
    Ok(m as usize)
}

/// Rebuilds `u` inside the slab `|x_N| <= r`: values outside are removed and
/// each `x'`-line's removed mass is spread uniformly over the slab cells.
/// The `x'`-marginal is unchanged.
pub fn slab_construction(u: &Field, r: f64) -> Result<Field> {
    let g = *u.grid();
    let n = g.line_len();
    let axis = g.xn_axis();
    let inside: Vec<bool> = (0..n).map(|j| g.center(axis, j).abs() <= r).collect();
    let count = inside.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(Error::Precondition(format!("slab |x_N| <= {r} holds no cell center")));
    }
    let mut v = u.values().to_vec();
    for line in v.chunks_mut(n) {
        let outside: f64 = line.iter().zip(&inside).filter(|(_, &b)| !b).map(|(x, _)| *x).sum();
        for (x, &b) in line.iter_mut().zip(&inside) {
            *x = if b { *x + outside / count as f64 } else { 0.0 };
        }
    }
    Field::new(g, v)
}

/// Largest violation of `V(x_N - 2r) <= V̄(x_N) <= V(x_N + 2r)` for the
/// `x_N`-primitives of the pair, over all snapshots and cells.
pub fn primitive_sandwich(pair: &RunPair, r: f64) -> Result<f64> {
    let g = *pair.a.grid();
    let axis = g.xn_axis();
    let shift = shift_cells(&g, 2.0 * r)?;
    for f in [&pair.a.first().field, &pair.b.first().field] {
        let n = g.line_len();
        let outside = f.values().iter().enumerate().any(|(i, v)| *v != 0.0 && g.center(axis, i % n).abs() > r);
        if outside {
            return Err(Error::Precondition(format!("initial data not supported in |x_N| <= {r}")));
        }
    }
    let n = g.line_len();
    let mut worst: f64 = 0.0;
    for (x, y) in pair.a.snapshots.iter().zip(&pair.b.snapshots) {
        let va = primitive_xn(&x.field);
        let vb = primitive_xn(&y.field);
        for (la, lb) in va.values().chunks(n).zip(vb.values().chunks(n)) {
            let total = la[n - 1];
            for j in 0..n {
                let below = if j >= shift { la[j - shift] } else { 0.0 };
                let above = if j + shift < n { la[j + shift] } else { total };
                worst = worst.max(below - lb[j]).max(lb[j] - above);
            }
        }
    }
    Ok(worst)
}

/// `M Γ_{N-1}(t0, x')` times a profile in `x_N` of unit discrete mass.
pub fn product_data(grid: &Grid, mass: f64, t0: f64, profile: impl Fn(f64) -> f64) -> Result<Field> {
    let axis = grid.xn_axis();
    let h = grid.spacing(axis);
    let weights: Vec<f64> = (0..grid.line_len()).map(|j| profile(grid.center(axis, j))).collect();
    let norm = pairwise_sum(&weights) * h;
    if !(norm > 0.0) {
        return Err(Error::Precondition("x_N profile has no mass on the grid".into()));
    }
    let n = grid.line_len();
    let mut v = vec![0.0; grid.len()];
    for (i, line) in v.chunks_mut(n).enumerate() {
        let m = if grid.dim() == 2 {
            mass * crate::stepper::heat_kernel(&[grid.center(0, i)], t0)
        } else {
            mass
        };
        for (x, w) in line.iter_mut().zip(&weights) {
            *x = m * w / norm;
        }
    }
    Field::new(*grid, v)
}

/// `(t, ⟨A u, u⟩ vol)` from the recorded series.
pub fn energy_series(traj: &Trajectory) -> Vec<(f64, f64)> {
    traj.series.iter().map(|s| (s.t, s.energy)).collect()
}

/// Discrete `∫_τ^T ‖∇u‖² dt` (right-endpoint rule over consecutive steps)
/// and `½ ‖u(τ)‖₂²`.
pub fn energy_balance(traj: &Trajectory, tau: f64, t_end: f64) -> Result<(f64, f64)> {
    let s = &traj.series;
    let start = s
        .iter()
        .position(|x| (x.t - tau).abs() <= 1e-9 * tau.abs().max(1.0))
        .ok_or_else(|| Error::MissingSnapshot(tau))?;
    let mut integral = 0.0;
    for w in s[start..].windows(2) {
        if w[1].t > t_end * (1.0 + 1e-12) {
            break;
        }
        if w[1].step != w[0].step + 1 {
            return Err(Error::StrideTooCoarse("energy balance needs the series at every step".into()));
        }
        integral += (w[1].t - w[0].t) * w[1].energy;
    }
    Ok((integral, 0.5 * s[start].l2 * s[start].l2))
}

/// `∫ |u(x + ξ e_N) - u(x)| dx` for `ξ` a whole number of cells (values
/// outside the grid count as zero).
pub fn shift_difference(f: &Field, xi: f64) -> Result<f64> {
    let g = *f.grid();
    let m = shift_cells(&g, xi)?;
    let n = g.line_len();
    let mut acc = Vec::with_capacity(g.len());
    for line in f.values().chunks(n) {
        for j in 0..n {
            let shifted = if j + m < n { line[j + m] } else { 0.0 };
            acc.push((shifted - line[j]).abs());
        }
        // Points below the grid whose shift lands on the first cells.
        for v in &line[..m.min(n)] {
            acc.push(v.abs());
        }
    }
    Ok(pairwise_sum(&acc) * g.cell_volume())
}

/// Re-runs from the positive part of `u(t_j)` and reports
/// `‖u⁺(t_j + s) - h(s)‖₁` at the later snapshots of `traj`.
pub fn positive_part_restart(traj: &Trajectory, t_j: f64) -> Result<Vec<(f64, f64)>> {
    let start = traj.at(t_j)?;
    let plus = start.field.map(|v| v.max(0.0))?;
    let mass = integrate(&plus);
    let later: Vec<f64> = traj.snapshots.iter().map(|s| s.t).filter(|&t| t > start.t).collect();
    let cfg = RunConfig {
        run_id: format!("{}-restart", traj.run_id()),
        t_start: start.t,
        mass: if mass != 0.0 { mass } else { traj.config.mass },
        snapshot_times: later.clone(),
        record_every_step: false,
        entropy_stride: None,
        ..traj.config.clone()
    };
    let h = run_from_field(&cfg, plus)?;
    later
        .iter()
        .map(|&t| {
            let up = traj.at(t)?.field.map(|v| v.max(0.0))?;
            Ok((t, lp_norm(&up.sub(&h.at(t)?.field)?, 1.0)?))
        })
        .collect()
}
