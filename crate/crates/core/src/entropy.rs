//! A posteriori entropy checks of computed trajectories.
//!
//! Two views of the same quantity:
//! * the per-cell production of one step, built from the Crandall–Majda
//!   numerical entropy flux `Q_k(a, b) = F(a∨k, b∨k) - F(a∧k, b∧k)`;
//! * the Kružkov functional `∬ |u-k| φ_t + Q_k φ_{x_N} - |u-k| 𝓛φ`, evaluated
//!   in summation-by-parts form against a smooth space-time bump.
//!
//! For a bump vanishing at the ends of the window the second equals the first
//! summed against `φ`, so a nonnegative production certifies every residual.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flux::{godunov_cached, ConvectionKernel, FluxEval};
use crate::grid::{Grid, MAX_DIM};
use crate::stepper::{DiffusionOperator, RunConfig, Snapshot, Trajectory};

/// Number of equispaced levels across the observed range.
pub const LEVEL_COUNT: usize = 32;

/// `count` equispaced levels over `[lo, hi]`, plus `k = 0`, sorted.
pub fn levels(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let mut ks: Vec<f64> = if count < 2 || hi <= lo {
        vec![lo]
    } else {
        (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
    };
    ks.push(0.0);
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    ks
}

/// Levels spanning the values of all snapshots.
pub fn trajectory_levels(traj: &Trajectory) -> Vec<f64> {
    let (lo, hi) = traj
        .snapshots
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.field.min()), b.max(s.field.max())));
    levels(lo, hi, LEVEL_COUNT)
}

fn entropy_flux(a: f64, b: f64, k: f64, ev: &FluxEval, fk: f64) -> f64 {
    let (ahi, fahi) = if a > k { (a, ev.eval(a)) } else { (k, fk) };
    let (bhi, fbhi) = if b > k { (b, ev.eval(b)) } else { (k, fk) };
    let (alo, falo) = if a < k { (a, ev.eval(a)) } else { (k, fk) };
    let (blo, fblo) = if b < k { (b, ev.eval(b)) } else { (k, fk) };
    godunov_cached(ahi, bhi, fahi, fbhi) - godunov_cached(alo, blo, falo, fblo)
}

/// Scratch buffers for [`step_production`].
#[derive(Debug, Default)]
pub struct ProductionWorkspace {
    star: Vec<f64>,
    w: Vec<f64>,
    aw: Vec<f64>,
    conv: ConvectionKernel,
}

/// Per-cell entropy production of the step `prev → next` at level `k`, in
/// density units:
/// `|uⁿ-k| - λ ΔQ_k(uⁿ) - |uⁿ⁺¹-k| - θ dt (A|uⁿ⁺¹-k|) - (1-θ) dt (A|u*-k|)`.
pub fn step_production(
    cfg: &RunConfig,
    prev: &[f64],
    next: &[f64],
    dt: f64,
    k: f64,
    ws: &mut ProductionWorkspace,
    out: &mut [f64],
) {
    let g = cfg.grid;
    let n = g.line_len();
    let lambda = dt / g.spacing(g.xn_axis());
    for ((o, &a), &b) in out.iter_mut().zip(prev).zip(next) {
        *o = (a - k).abs() - (b - k).abs();
    }
    if cfg.convection {
        let ev = cfg.flux.evaluator();
        let fk = ev.eval(k);
        for (line, o) in prev.chunks(n).zip(out.chunks_mut(n)) {
            // The walls carry zero numerical flux, so their entropy flux is `sgn(u - k)(0 - f(k))`.
            let wall = |u: f64| -sign(u - k) * fk;
            let mut left = wall(line[0]);
            for j in 0..n {
                let right = if j + 1 < n { entropy_flux(line[j], line[j + 1], k, &ev, fk) } else { wall(line[j]) };
                o[j] -= lambda * (right - left);
                left = right;
            }
        }
    }
    let op = DiffusionOperator::new(g, cfg.operator);
    if op.is_zero() {
        return;
    }
    ws.w.clear();
    ws.w.extend(next.iter().map(|v| (v - k).abs()));
    ws.aw.resize(g.len(), 0.0);
    op.apply(&ws.w, &mut ws.aw);
    for (o, a) in out.iter_mut().zip(&ws.aw) {
        *o -= cfg.theta * dt * a;
    }
    if cfg.theta < 1.0 {
        ws.star.resize(g.len(), 0.0);
        if cfg.convection {
            ws.conv.apply(prev, &g, &cfg.flux, dt, &mut ws.star);
        } else {
            ws.star.copy_from_slice(prev);
        }
        ws.w.clear();
        ws.w.extend(ws.star.iter().map(|v| (v - k).abs()));
        op.apply(&ws.w, &mut ws.aw);
        for (o, a) in out.iter_mut().zip(&ws.aw) {
            *o -= (1.0 - cfg.theta) * dt * a;
        }
    }
}

/// Smallest production over all cells and the standard levels of the step.
pub fn step_production_min(
    cfg: &RunConfig,
    prev: &[f64],
    next: &[f64],
    dt: f64,
    ws: &mut ProductionWorkspace,
) -> f64 {
    let (lo, hi) = prev
        .iter()
        .chain(next)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut out = vec![0.0; prev.len()];
    let mut worst = f64::INFINITY;
    for k in levels(lo, hi, LEVEL_COUNT) {
        step_production(cfg, prev, next, dt, k, ws, &mut out);
        worst = out.iter().fold(worst, |m, &v| m.min(v));
    }
    worst
}

/// Tolerance for the cell check: `lin_tol` relative to the data magnitude.
pub fn cell_tolerance(traj: &Trajectory) -> f64 {
    let umax = traj.snapshots.iter().map(|s| s.field.max().abs().max(s.field.min().abs())).fold(1.0, f64::max);
    traj.config.lin_tol * umax
}

/// Most negative per-cell production over every recorded step at level `k`.
pub fn cell_entropy_check(traj: &Trajectory, k: f64) -> Result<f64> {
    if !traj.full_stride_over(traj.first().t, traj.last().t) {
        return Err(Error::StrideTooCoarse(format!(
            "run {} was not recorded at every step",
            traj.run_id()
        )));
    }
    let mut ws = ProductionWorkspace::default();
    let mut out = vec![0.0; traj.grid().len()];
    let mut worst = f64::INFINITY;
    for w in traj.snapshots.windows(2) {
        step_production(&traj.config, w[0].field.values(), w[1].field.values(), w[1].dt, k, &mut ws, &mut out);
        worst = out.iter().fold(worst, |m, &v| m.min(v));
    }
    Ok(worst)
}

fn sign(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn psi(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Tensor-product `C^∞` bump `ψ((t-t_c)/τ) Π_a ψ((x_a-c_a)/ρ)`, `ψ(s) = e^{-1/(1-s²)}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestBump {
    pub center: [f64; MAX_DIM],
    /// Spatial radius `ρ`.
    pub radius: f64,
    pub t_center: f64,
    /// Temporal radius `τ`.
    pub t_radius: f64,
}

impl TestBump {
    pub fn new(center: &[f64], radius: f64, t_center: f64, t_radius: f64) -> Self {
        let mut c = [0.0; MAX_DIM];
        c[..center.len()].copy_from_slice(center);
        TestBump { center: c, radius, t_center, t_radius }
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        psi((t - self.t_center) / self.t_radius)
    }

    pub fn space_factor(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.center).map(|(xa, ca)| psi((xa - ca) / self.radius)).product()
    }

    /// Measure of the space-time support.
    pub fn support_measure(&self, dim: usize) -> f64 {
        (2.0 * self.radius).powi(dim as i32) * 2.0 * self.t_radius
    }
}

/// Index box of cells where `φ` may be nonzero, widened by two cells.
fn support_box(grid: &Grid, phi: &TestBump) -> Result<[(usize, usize); MAX_DIM]> {
    let mut b = [(0, 0); MAX_DIM];
    for a in 0..grid.dim() {
        let h = grid.spacing(a);
        let lo = ((phi.center[a] - phi.radius - grid.origin(a)) / h).floor() as i64 - 2;
        let hi = ((phi.center[a] + phi.radius - grid.origin(a)) / h).ceil() as i64 + 2;
        if lo < 1 || hi >= grid.n(a) as i64 - 1 {
            return Err(Error::OutsideWindow(format!(
                "test function support [{}, {}] on axis {a} leaves the grid",
                phi.center[a] - phi.radius,
                phi.center[a] + phi.radius
            )));
        }
        b[a] = (lo as usize, hi as usize);
    }
    Ok(b)
}

/// Discrete Kružkov functional of `traj` at level `k` against `phi`.
///
/// Needs the snapshots at every step across the time support of `phi`.
pub fn kruzhkov_residual(traj: &Trajectory, k: f64, phi: &TestBump) -> Result<f64> {
    let cfg = &traj.config;
    let g = cfg.grid;
    let (t0, t1) = (phi.t_center - phi.t_radius, phi.t_center + phi.t_radius);
    if !(t0 >= traj.first().t && t1 <= traj.last().t) {
        return Err(Error::OutsideWindow(format!(
            "test window [{t0}, {t1}] not inside recorded [{}, {}]",
            traj.first().t,
            traj.last().t
        )));
    }
    let bx = support_box(&g, phi)?;
    // Snapshot range covering the time support, with one step of slack on each side.
    let first = traj.snapshots.iter().rposition(|s| s.t <= t0).unwrap_or(0);
    let last = traj.snapshots.iter().position(|s| s.t >= t1).unwrap_or(traj.snapshots.len() - 1);
    let span = &traj.snapshots[first..=last];
    if span.windows(2).any(|w| w[1].step != w[0].step + 1) {
        return Err(Error::StrideTooCoarse(format!(
            "snapshots between t = {t0} and t = {t1} are not consecutive steps"
        )));
    }

    let dim = g.dim();
    let n = g.line_len();
    let (rows_lo, rows_hi) = if dim == 2 { bx[0] } else { (0, 0) };
    let (cols_lo, cols_hi) = bx[dim - 1];
    let width = cols_hi - cols_lo + 1;
    let cells: Vec<usize> =
        (rows_lo..=rows_hi).flat_map(|i| (cols_lo..=cols_hi).map(move |j| i * n + j)).collect();
    let space: Vec<f64> = cells
        .iter()
        .map(|&c| {
            let x = g.coords(c);
            phi.space_factor(&x[..dim])
        })
        .collect();
    // A φ restricted to the box; φ vanishes on the two outer rings.
    let op = DiffusionOperator::new(g, cfg.operator);
    let a_space: Vec<f64> = (0..cells.len())
        .map(|b| {
            let (bi, bj) = (b / width, b % width);
            let mut acc = 0.0;
            if bj > 0 && bj + 1 < width {
                acc += op.coef(dim - 1) * (2.0 * space[b] - space[b - 1] - space[b + 1]);
            }
            if dim == 2 && bi > 0 && bi < rows_hi - rows_lo {
                acc += op.coef(0) * (2.0 * space[b] - space[b - width] - space[b + width]);
            }
            acc
        })
        .collect();

    let ev = cfg.flux.evaluator();
    let fk = ev.eval(k);
    let lambda_of = |dt: f64| dt / g.spacing(g.xn_axis());
    let star_of = |u: &[f64], c: usize, dt: f64| -> f64 {
        if !cfg.convection {
            return u[c];
        }
        let j = c % n;
        let fl = if j > 0 { godunov_cached(u[c - 1], u[c], ev.eval(u[c - 1]), ev.eval(u[c])) } else { 0.0 };
        let fr = if j + 1 < n { godunov_cached(u[c], u[c + 1], ev.eval(u[c]), ev.eval(u[c + 1])) } else { 0.0 };
        u[c] - lambda_of(dt) * (fr - fl)
    };

    let mut total = 0.0;
    for pair in span.windows(2) {
        let (now, nxt): (&Snapshot, &Snapshot) = (&pair[0], &pair[1]);
        let dt = nxt.dt;
        let (pn, pn1) = (phi.time_factor(now.t), phi.time_factor(nxt.t));
        let (u, v) = (now.field.values(), nxt.field.values());
        let mut s = 0.0;
        for (b, &c) in cells.iter().enumerate() {
            let w = (v[c] - k).abs();
            s += w * space[b] * (pn1 - pn);
            s -= cfg.theta * dt * w * a_space[b] * pn;
            if cfg.theta < 1.0 {
                s -= (1.0 - cfg.theta) * dt * (star_of(u, c, dt) - k).abs() * a_space[b] * pn;
            }
            if cfg.convection && (b % width) + 1 < width {
                let q = entropy_flux(u[c], u[c + 1], k, &ev, fk);
                s += lambda_of(dt) * q * (space[b + 1] - space[b]) * pn;
            }
        }
        total += s;
    }
    Ok(total * g.cell_volume())
}

/// `Σ_n Σ_i e_iⁿ φ_iⁿ vol`: the production summed against `φ`, equal to
/// [`kruzhkov_residual`] whenever `φ` vanishes at both ends of the window.
pub fn production_against(traj: &Trajectory, k: f64, phi: &TestBump) -> Result<f64> {
    let g = *traj.grid();
    support_box(&g, phi)?;
    let mut ws = ProductionWorkspace::default();
    let mut out = vec![0.0; g.len()];
    let space: Vec<f64> = (0..g.len())
        .map(|c| {
            let x = g.coords(c);
            phi.space_factor(&x[..g.dim()])
        })
        .collect();
    let mut total = 0.0;
    for w in traj.snapshots.windows(2) {
        let pn = phi.time_factor(w[0].t);
        if pn == 0.0 {
            continue;
        }
        if w[1].step != w[0].step + 1 {
            return Err(Error::StrideTooCoarse("production needs consecutive steps".into()));
        }
        step_production(&traj.config, w[0].field.values(), w[1].field.values(), w[1].dt, k, &mut ws, &mut out);
        total += pn * out.iter().zip(&space).map(|(e, p)| e * p).sum::<f64>();
    }
    Ok(total * g.cell_volume())
}

/// One `(k, φ)` evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRow {
    pub k: f64,
    pub phi: TestBump,
    pub residual: f64,
    pub pass: bool,
}

/// Residuals over levels × test functions, with the `f`-vs-`f_η` transfer bound.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyAudit {
    pub run_id: String,
    pub dim: usize,
    pub levels: Vec<f64>,
    pub tests: Vec<TestBump>,
    pub tol: f64,
    pub rows: Vec<AuditRow>,
    /// `η^{q/2} · |supp φ|`, maximized over the test functions.
    pub flux_gap_bound: f64,
}

impl EntropyAudit {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(f64::INFINITY, f64::min)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }

    /// Plain-text table: `k, φ-center, φ-width, residual, pass/fail`.
    pub fn table(&self) -> String {
        let mut out = format!("# entropy audit of {} (tol {:e})\n", self.run_id, self.tol);
        let _ = writeln!(out, "{:>14} {:>24} {:>10} {:>10} {:>10} {:>14} {:>5}", "k", "center", "radius", "t_center", "t_radius", "residual", "pass");
        for r in &self.rows {
            let c = if self.dim == 2 {
                format!("({:.4}, {:.4})", r.phi.center[0], r.phi.center[1])
            } else {
                format!("{:.4}", r.phi.center[0])
            };
            let _ = writeln!(
                out,
                "{:>14.6e} {:>24} {:>10.4} {:>10.4} {:>10.4} {:>14.6e} {:>5}",
                r.k, c, r.phi.radius, r.phi.t_center, r.phi.t_radius, r.residual,
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(out, "# flux gap bound eta^(q/2)*|supp phi| = {:e}", self.flux_gap_bound);
        out
    }
}

/// Evaluates every `(k, φ)` pair; a row passes when `residual >= -tol`.
pub fn audit(traj: &Trajectory, levels: &[f64], tests: &[TestBump], tol: f64) -> Result<EntropyAudit> {
    let mut rows = Vec::with_capacity(levels.len() * tests.len());
    for phi in tests {
        if phi.radius < 2.0 * traj.grid().spacings().iter().cloned().fold(0.0, f64::max) {
            return Err(Error::Precondition(format!("test radius {} below two cells", phi.radius)));
        }
        let max_dt = traj.snapshots.iter().map(|s| s.dt).fold(0.0, f64::max);
        if phi.t_radius < 2.0 * max_dt {
            return Err(Error::Precondition(format!("test time radius {} below two steps", phi.t_radius)));
        }
        for &k in levels {
            let residual = kruzhkov_residual(traj, k, phi)?;
            rows.push(AuditRow { k, phi: *phi, residual, pass: residual >= -tol });
        }
    }
    let f = &traj.config.flux;
    let dim = traj.grid().dim();
    let gap = f.eta.powf(0.5 * f.q) * tests.iter().map(|t| t.support_measure(dim)).fold(0.0, f64::max);
    Ok(EntropyAudit {
        run_id: traj.run_id().to_string(),
        dim,
        levels: levels.to_vec(),
        tests: tests.to_vec(),
        tol,
        rows,
        flux_gap_bound: if traj.config.convection { gap } else { 0.0 },
    })
}
