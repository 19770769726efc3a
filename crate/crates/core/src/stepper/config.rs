use serde::{Deserialize, Serialize};

use super::diffusion::{OperatorChoice, SolverKind};
use super::initial::InitialRecipe;
use crate::error::{Error, Result};
use crate::flux::FluxParams;
use crate::grid::Grid;

/// Everything that determines a run. Serializes to the run-config record
/// stored next to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub grid: Grid,
    pub operator: OperatorChoice,
    pub flux: FluxParams,
    /// Whether the convection term is present at all.
    #[serde(default = "defaults::yes")]
    pub convection: bool,
    pub mass: f64,
    pub initial: InitialRecipe,
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default = "defaults::cfl")]
    pub cfl: f64,
    #[serde(default = "defaults::theta")]
    pub theta: f64,
    #[serde(default = "defaults::lin_tol")]
    pub lin_tol: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub solver: SolverKind,
    /// Step cap, required when the convection bound gives no limit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    /// Times at which snapshots are stored; `t_start` and `t_end` always are.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Store a snapshot after every step.
    #[serde(default)]
    pub record_every_step: bool,
    #[serde(default = "defaults::stride")]
    pub series_stride: usize,
    #[serde(default)]
    pub tail_radii: Vec<f64>,
    #[serde(default = "defaults::leak")]
    pub boundary_leak_tol: f64,
    /// Evaluate the cell entropy production every this many steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy_stride: Option<usize>,
}

mod defaults {
    pub fn yes() -> bool {
        true
    }
    pub fn cfl() -> f64 {
        0.5
    }
    pub fn theta() -> f64 {
        1.0
    }
    pub fn lin_tol() -> f64 {
        1e-10
    }
    pub fn max_iters() -> usize {
        20_000
    }
    pub fn stride() -> usize {
        1
    }
    pub fn leak() -> f64 {
        1e-8
    }
}

impl RunConfig {
    /// Config with default solver knobs, integrating over `[0, 1]`.
    pub fn new(
        run_id: impl Into<String>,
        grid: Grid,
        operator: OperatorChoice,
        flux: FluxParams,
        mass: f64,
        initial: InitialRecipe,
    ) -> Self {
        RunConfig {
            run_id: run_id.into(),
            grid,
            operator,
            flux,
            convection: true,
            mass,
            initial,
            t_start: 0.0,
            t_end: 1.0,
            cfl: defaults::cfl(),
            theta: defaults::theta(),
            lin_tol: defaults::lin_tol(),
            max_iters: defaults::max_iters(),
            solver: SolverKind::Auto,
            dt_max: None,
            snapshot_times: Vec::new(),
            record_every_step: false,
            series_stride: 1,
            tail_radii: Vec::new(),
            boundary_leak_tol: defaults::leak(),
            entropy_stride: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.run_id.is_empty()
            || !self.run_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return bad(format!("run id {:?} must be nonempty [A-Za-z0-9._-]", self.run_id));
        }
        self.operator.validate()?;
        if self.convection {
            self.flux.validate(self.grid.dim())?;
        }
        if !(self.mass.is_finite() && self.mass != 0.0) {
            return bad(format!("mass {} must be finite and nonzero", self.mass));
        }
        if !(self.t_start.is_finite() && self.t_start >= 0.0) {
            return bad(format!("t_start {} must be >= 0", self.t_start));
        }
        if !(self.t_end.is_finite() && self.t_end >= self.t_start) {
            return bad(format!("t_end {} must be >= t_start {}", self.t_end, self.t_start));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl {} must lie in (0, 1]", self.cfl));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return bad(format!("theta {} must lie in [1/2, 1]", self.theta));
        }
        if !(self.lin_tol > 0.0 && self.lin_tol.is_finite()) {
            return bad(format!("lin_tol {} must be positive", self.lin_tol));
        }
        if let Some(d) = self.dt_max {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("dt_max {d} must be positive"));
            }
        }
        if self.snapshot_times.iter().any(|t| !t.is_finite()) {
            return bad("snapshot times must be finite".into());
        }
        if self.series_stride == 0 || self.entropy_stride == Some(0) {
            return bad("strides must be >= 1".into());
        }
        if self.tail_radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("tail radii must be finite and >= 0".into());
        }
        if !(self.boundary_leak_tol > 0.0) {
            return bad(format!("boundary_leak_tol {} must be positive", self.boundary_leak_tol));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        Ok(())
    }

    /// Sorted snapshot schedule inside `(t_start, t_end]`, always ending at `t_end`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self
            .snapshot_times
            .iter()
            .copied()
            .filter(|&t| t > self.t_start && t < self.t_end)
            .collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        if self.t_end > self.t_start {
            s.push(self.t_end);
        }
        s
    }
}
