//! Experiment files.
//!
//! An experiment is a flat TOML file with dotted keys (`grid.spacing`,
//! `flux.q`, `decay.window`, ...). Every key belongs to one of a fixed set of
//! sections; unknown keys and sections that do not belong to the chosen preset
//! are errors, reported with the line they occur on.

use std::fmt;
use std::path::{Path, PathBuf};

use fastconv::stepper::SolverKind;
use fastconv::{FluxParams, Grid, InitialRecipe, OperatorChoice, RunConfig};
use serde::Deserialize;

/// A configuration problem, located in the source file where possible.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub path: PathBuf,
    /// 1-based line, 0 when the problem has no single location.
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if self.line > 0 {
            write!(f, ":{}", self.line)?;
        }
        if !self.key.is_empty() {
            write!(f, ": {}", self.key)?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    HeatBaseline,
    DecayFit,
    SelfsimCollapse,
    Uniqueness,
    SignPreservation,
    Contraction,
    Comparison,
    EntropyAudit,
    TailReport,
    Sandwich,
    EnergyReport,
}

impl Preset {
    pub const ALL: [Preset; 11] = [
        Preset::HeatBaseline,
        Preset::DecayFit,
        Preset::SelfsimCollapse,
        Preset::Uniqueness,
        Preset::SignPreservation,
        Preset::Contraction,
        Preset::Comparison,
        Preset::EntropyAudit,
        Preset::TailReport,
        Preset::Sandwich,
        Preset::EnergyReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::HeatBaseline => "heat_baseline",
            Preset::DecayFit => "decay_fit",
            Preset::SelfsimCollapse => "selfsim_collapse",
            Preset::Uniqueness => "uniqueness",
            Preset::SignPreservation => "sign_preservation",
            Preset::Contraction => "contraction",
            Preset::Comparison => "comparison",
            Preset::EntropyAudit => "entropy_audit",
            Preset::TailReport => "tail_report",
            Preset::Sandwich => "sandwich",
            Preset::EnergyReport => "energy_report",
        }
    }

    /// Section holding the preset's own parameters.
    pub fn section(self) -> &'static str {
        match self {
            Preset::HeatBaseline => "heat",
            Preset::DecayFit => "decay",
            Preset::SelfsimCollapse => "collapse",
            Preset::Uniqueness => "uniqueness",
            Preset::SignPreservation => "sign",
            Preset::Contraction | Preset::Comparison => "pairs",
            Preset::EntropyAudit => "entropy",
            Preset::TailReport => "tail",
            Preset::Sandwich => "sandwich",
            Preset::EnergyReport => "energy",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Full,
    Reduced,
    ReducedPlusEps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    Gaussian,
    Box,
    Bump,
    HeatKernel,
}

impl RecipeKind {
    /// The recipe at unit width (`t0` chosen so the nominal width is 1).
    pub fn unit(self) -> InitialRecipe {
        match self {
            RecipeKind::Gaussian => InitialRecipe::Gaussian { width: 1.0 },
            RecipeKind::Box => InitialRecipe::Box { width: 1.0 },
            RecipeKind::Bump => InitialRecipe::Bump { width: 1.0 },
            RecipeKind::HeatKernel => InitialRecipe::HeatKernel { t0: 1.0 / 24.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SolverName {
    Auto,
    Cg,
    Line,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    spacing: Vec<f64>,
    cells: Option<Vec<usize>>,
    origin: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOperator {
    kind: OperatorKind,
    eps: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlux {
    q: f64,
    #[serde(default)]
    eta: f64,
    #[serde(default = "yes")]
    odd_extension: bool,
    u_floor: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    recipe: RecipeKind,
    width: Option<f64>,
    t0: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    mass: Option<f64>,
    convection: Option<bool>,
    t_start: Option<f64>,
    t_end: Option<f64>,
    cfl: Option<f64>,
    theta: Option<f64>,
    lin_tol: Option<f64>,
    max_iters: Option<usize>,
    solver: Option<SolverName>,
    dt_max: Option<f64>,
    snapshot_times: Option<Vec<f64>>,
    record_every_step: Option<bool>,
    series_stride: Option<usize>,
    tail_radii: Option<Vec<f64>>,
    boundary_leak_tol: Option<f64>,
    entropy_stride: Option<usize>,
}

/// Where and what to write.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    /// Report directory, relative to the output root.
    pub dir: Option<PathBuf>,
    /// Store every trajectory under `runs/` so `audit` can re-check it.
    #[serde(default = "yes")]
    pub save_runs: bool,
    /// Write a checkpoint at every snapshot time.
    #[serde(default)]
    pub checkpoints: bool,
    /// Also emit the per-figure CSVs.
    #[serde(default)]
    pub plotdata: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions { dir: None, save_runs: true, checkpoints: false, plotdata: false }
    }
}

/// Tolerances applied to every run of every preset.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalChecks {
    /// Relative mass drift allowed over a run.
    #[serde(default = "d::mass_tol")]
    pub mass_tol: f64,
    /// Cell entropy production floor, relative to `|M|`.
    #[serde(default = "d::cell_tol")]
    pub entropy_cell_tol: f64,
}

impl Default for GlobalChecks {
    fn default() -> Self {
        GlobalChecks { mass_tol: d::mass_tol(), entropy_cell_tol: d::cell_tol() }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatParams {
    #[serde(default = "d::heat_spacings")]
    pub spacings: Vec<f64>,
    /// Comparison time; defaults to `run.t_end`.
    pub t_eval: Option<f64>,
    #[serde(default = "d::four")]
    pub ratio: f64,
    #[serde(default = "d::quarter")]
    pub ratio_tol: f64,
    #[serde(default = "d::minute")]
    pub max_seconds: f64,
    /// Step cap `dt_max = dt_per_dx2 · Δx²`; otherwise `run.dt_max` is used.
    pub dt_per_dx2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayParams {
    #[serde(default = "d::decay_window")]
    pub window: [f64; 2],
    #[serde(default = "d::decay_norms")]
    pub norms: Vec<f64>,
    #[serde(default = "d::five_percent")]
    pub tol: f64,
    /// Operators to run; the base operator alone when empty.
    #[serde(default)]
    pub operators: Vec<OperatorKind>,
    pub max_seconds: Option<f64>,
    /// `operators` resolved against `operator.eps`; filled in by validation.
    #[serde(skip)]
    pub resolved: Vec<OperatorChoice>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseParams {
    pub times: Vec<f64>,
    #[serde(default = "d::four")]
    pub factor: f64,
    /// Largest allowed `distance(last) / distance(first)`.
    pub max_ratio: Option<f64>,
    pub max_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessParams {
    #[serde(default = "d::recipes")]
    pub recipes: [RecipeKind; 2],
    pub widths: Vec<f64>,
    #[serde(default = "d::one")]
    pub t_star: f64,
    /// Measured grid-error floor the final distance is compared with.
    pub floor: Option<f64>,
    #[serde(default = "d::two")]
    pub floor_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignParams {
    pub widths: Vec<f64>,
    #[serde(default = "d::half")]
    pub amplitude: f64,
    #[serde(default = "d::one")]
    pub t_star: f64,
    #[serde(default = "d::tenth")]
    pub max_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairParams {
    #[serde(default = "d::twenty")]
    pub count: usize,
    #[serde(default = "d::seed")]
    pub seed: u64,
    /// Equispaced snapshot times per run.
    #[serde(default = "d::samples")]
    pub samples: usize,
    /// Bumps per random datum.
    #[serde(default = "d::three")]
    pub bumps: usize,
    /// Bump centers are drawn from `[-spread, spread]` on every axis.
    #[serde(default = "d::one")]
    pub spread: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyParams {
    #[serde(default = "d::levels")]
    pub levels: usize,
    #[serde(default = "d::twenty")]
    pub bumps: usize,
    #[serde(default = "d::seed")]
    pub seed: u64,
    /// Residual floor, relative to `|M|`.
    #[serde(default = "d::kruzhkov_tol")]
    pub tol: f64,
    /// Also audit the time-reversed run and require it to fail.
    #[serde(default = "yes")]
    pub reversed: bool,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailParams {
    pub radii: Vec<f64>,
    #[serde(default = "d::two")]
    pub refine: f64,
    #[serde(default = "d::two")]
    pub enlarge: f64,
    /// Allowed factor between fitted constants.
    #[serde(default = "d::two")]
    pub stability: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichParams {
    /// Half-width of the initial slab; `2r` must be a whole number of cells.
    pub r: f64,
    /// Violation bound relative to `|M|`.
    #[serde(default = "d::kruzhkov_tol")]
    pub tol: f64,
    #[serde(default = "d::twenty")]
    pub samples: usize,
    /// Time of the transversal heat kernel in the product datum.
    #[serde(default = "d::sandwich_t0")]
    pub t0: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyParams {
    pub tau: f64,
    #[serde(default = "d::milli")]
    pub slack: f64,
}

/// Preset-specific parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    Heat(HeatParams),
    Decay(DecayParams),
    Collapse(CollapseParams),
    Uniqueness(UniquenessParams),
    Sign(SignParams),
    Pairs(PairParams),
    Entropy(EntropyParams),
    Tail(TailParams),
    Sandwich(SandwichParams),
    Energy(EnergyParams),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    preset: Preset,
    run_id: Option<String>,
    grid: RawGrid,
    operator: RawOperator,
    flux: Option<RawFlux>,
    initial: RawInitial,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    output: OutputOptions,
    #[serde(default)]
    checks: GlobalChecks,
    heat: Option<HeatParams>,
    decay: Option<DecayParams>,
    collapse: Option<CollapseParams>,
    uniqueness: Option<UniquenessParams>,
    sign: Option<SignParams>,
    pairs: Option<PairParams>,
    entropy: Option<EntropyParams>,
    tail: Option<TailParams>,
    sandwich: Option<SandwichParams>,
    energy: Option<EnergyParams>,
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub preset: Preset,
    /// Base run; presets derive their runs from it.
    pub base: RunConfig,
    pub params: Params,
    pub checks: GlobalChecks,
    pub output: OutputOptions,
    /// Source text, hashed into the report and stored next to it.
    pub source: String,
    pub path: PathBuf,
}

impl ExperimentSpec {
    /// Report directory name relative to the output root.
    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from(&self.base.run_id))
    }
}

/// Reads and validates an experiment file.
pub fn parse_config(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: 0,
        key: String::new(),
        message: e.to_string(),
    })?;
    parse_str(&text, path)
}

/// Validates experiment text; `path` is only used in messages.
pub fn parse_str(text: &str, path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let raw: RawSpec = toml::from_str(text).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: e.span().map_or(0, |s| line_of_offset(text, s.start)),
        key: String::new(),
        message: e.message().trim().to_string(),
    })?;
    Builder { text, path }.build(raw)
}

struct Builder<'a> {
    text: &'a str,
    path: &'a Path,
}

impl Builder<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.to_path_buf(),
            line: key_line(self.text, key),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn ensure(&self, ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(self.err(key, message()))
        }
    }

    fn build(&self, raw: RawSpec) -> Result<ExperimentSpec, ConfigError> {
        let preset = raw.preset;
        let grid = self.grid(&raw.grid)?;
        let dim = grid.dim();

        let operator = match raw.operator.kind {
            OperatorKind::Full => OperatorChoice::FullLaplacian,
            OperatorKind::Reduced => OperatorChoice::ReducedLaplacian,
            OperatorKind::ReducedPlusEps => {
                let eps = raw.operator.eps.ok_or_else(|| self.err("operator.eps", "required by reduced_plus_eps"))?;
                OperatorChoice::ReducedPlusEps { eps }
            }
        };
        if raw.operator.eps.is_some() && raw.operator.kind != OperatorKind::ReducedPlusEps {
            return Err(self.err("operator.eps", "only used with operator.kind = \"reduced_plus_eps\""));
        }
        operator.validate().map_err(|e| self.err("operator.eps", e.to_string()))?;

        let convection = raw.run.convection.unwrap_or(true);
        let flux = match &raw.flux {
            Some(f) => FluxParams { q: f.q, eta: f.eta, odd_extension: f.odd_extension, u_floor: f.u_floor },
            None if convection => return Err(self.err("flux.q", "missing section [flux]; required with convection on")),
            None => FluxParams::new(1.0, 0.0),
        };
        if convection {
            flux.validate(dim).map_err(|e| {
                let key = if e.to_string().contains("eta") {
                    "flux.eta"
                } else if e.to_string().contains("u_floor") {
                    "flux.u_floor"
                } else {
                    "flux.q"
                };
                self.err(key, e.to_string())
            })?;
        }

        let initial = self.recipe(&raw.initial)?;
        let run_id = raw.run_id.clone().unwrap_or_else(|| preset.name().to_string());
        let r = &raw.run;
        let mut base = RunConfig::new(run_id, grid, operator, flux, r.mass.unwrap_or(1.0), initial);
        base.convection = convection;
        if let Some(v) = r.t_start {
            base.t_start = v;
        }
        if let Some(v) = r.t_end {
            base.t_end = v;
        }
        if let Some(v) = r.cfl {
            base.cfl = v;
        }
        if let Some(v) = r.theta {
            base.theta = v;
        }
        if let Some(v) = r.lin_tol {
            base.lin_tol = v;
        }
        if let Some(v) = r.max_iters {
            base.max_iters = v;
        }
        if let Some(v) = r.solver {
            base.solver = match v {
                SolverName::Auto => SolverKind::Auto,
                SolverName::Cg => SolverKind::ConjugateGradient,
                SolverName::Line => SolverKind::LineDirect,
            };
        }
        base.dt_max = r.dt_max;
        if let Some(v) = &r.snapshot_times {
            base.snapshot_times = v.clone();
        }
        if let Some(v) = r.record_every_step {
            base.record_every_step = v;
        }
        if let Some(v) = r.series_stride {
            base.series_stride = v;
        }
        if let Some(v) = &r.tail_radii {
            base.tail_radii = v.clone();
        }
        if let Some(v) = r.boundary_leak_tol {
            base.boundary_leak_tol = v;
        }
        base.entropy_stride = r.entropy_stride;
        base.validate().map_err(|e| self.err(&run_key(&e.to_string()), e.to_string()))?;

        self.ensure(raw.checks.mass_tol > 0.0, "checks.mass_tol", || "must be positive".into())?;
        self.ensure(raw.checks.entropy_cell_tol > 0.0, "checks.entropy_cell_tol", || "must be positive".into())?;

        let params = self.params(preset, &raw, &base)?;
        Ok(ExperimentSpec {
            preset,
            base,
            params,
            checks: raw.checks,
            output: raw.output,
            source: self.text.to_string(),
            path: self.path.to_path_buf(),
        })
    }

    fn grid(&self, g: &RawGrid) -> Result<Grid, ConfigError> {
        let built = match (&g.lower, &g.upper, &g.cells, &g.origin) {
            (Some(lo), Some(hi), None, None) => Grid::covering(lo, hi, &g.spacing),
            (None, None, Some(cells), Some(origin)) => Grid::new(cells, &g.spacing, origin),
            _ => {
                return Err(self.err(
                    "grid.spacing",
                    "give either grid.lower and grid.upper, or grid.cells and grid.origin",
                ))
            }
        };
        built.map_err(|e| self.err("grid.spacing", e.to_string()))
    }

    fn recipe(&self, i: &RawInitial) -> Result<InitialRecipe, ConfigError> {
        let width = || i.width.ok_or_else(|| self.err("initial.width", "required by this recipe"));
        let recipe = match i.recipe {
            RecipeKind::Gaussian => InitialRecipe::Gaussian { width: width()? },
            RecipeKind::Box => InitialRecipe::Box { width: width()? },
            RecipeKind::Bump => InitialRecipe::Bump { width: width()? },
            RecipeKind::HeatKernel => {
                if i.width.is_some() {
                    return Err(self.err("initial.width", "heat_kernel takes initial.t0, not a width"));
                }
                InitialRecipe::HeatKernel { t0: i.t0.ok_or_else(|| self.err("initial.t0", "required by heat_kernel"))? }
            }
        };
        if i.t0.is_some() && i.recipe != RecipeKind::HeatKernel {
            return Err(self.err("initial.t0", "only used by the heat_kernel recipe"));
        }
        let w = recipe.width();
        let key = if i.recipe == RecipeKind::HeatKernel { "initial.t0" } else { "initial.width" };
        self.ensure(w.is_finite() && w > 0.0, key, || format!("must be positive, got width {w}"))?;
        Ok(recipe)
    }

    fn params(&self, preset: Preset, raw: &RawSpec, base: &RunConfig) -> Result<Params, ConfigError> {
        let present = [
            ("heat", raw.heat.is_some()),
            ("decay", raw.decay.is_some()),
            ("collapse", raw.collapse.is_some()),
            ("uniqueness", raw.uniqueness.is_some()),
            ("sign", raw.sign.is_some()),
            ("pairs", raw.pairs.is_some()),
            ("entropy", raw.entropy.is_some()),
            ("tail", raw.tail.is_some()),
            ("sandwich", raw.sandwich.is_some()),
            ("energy", raw.energy.is_some()),
        ];
        for (name, here) in present {
            if here && name != preset.section() {
                return Err(self.err(name, format!("section does not apply to preset {preset}")));
            }
        }
        let missing = |s: &str| self.err(s, format!("preset {preset} needs section [{s}]"));
        let spacing = base.grid.spacings().iter().cloned().fold(0.0, f64::max);
        let positive = |v: f64| v.is_finite() && v > 0.0;
        Ok(match preset {
            Preset::HeatBaseline => {
                let p = raw.heat.clone().unwrap_or(HeatParams {
                    spacings: d::heat_spacings(),
                    t_eval: None,
                    ratio: d::four(),
                    ratio_tol: d::quarter(),
                    max_seconds: d::minute(),
                    dt_per_dx2: None,
                });
                self.ensure(p.spacings.len() >= 2, "heat.spacings", || "need at least two spacings".into())?;
                self.ensure(p.spacings.iter().all(|&h| positive(h)), "heat.spacings", || "must be positive".into())?;
                self.ensure(
                    p.spacings.windows(2).all(|w| w[1] < w[0]),
                    "heat.spacings",
                    || "must be strictly decreasing".into(),
                )?;
                self.ensure(
                    matches!(base.initial, InitialRecipe::HeatKernel { .. }),
                    "initial.recipe",
                    || "heat_baseline compares against the heat kernel; use recipe = \"heat_kernel\"".into(),
                )?;
                self.ensure(!base.convection, "run.convection", || "heat_baseline needs run.convection = false".into())?;
                self.ensure(base.operator == OperatorChoice::FullLaplacian, "operator.kind", || {
                    "heat_baseline needs operator.kind = \"full\"".into()
                })?;
                if let Some(t) = p.t_eval {
                    self.ensure(t > base.t_start && t <= base.t_end, "heat.t_eval", || {
                        format!("must lie in (t_start, t_end] = ({}, {}]", base.t_start, base.t_end)
                    })?;
                }
                self.ensure(positive(p.ratio) && p.ratio_tol >= 0.0, "heat.ratio", || "must be positive".into())?;
                self.ensure(positive(p.max_seconds), "heat.max_seconds", || "must be positive".into())?;
                if let Some(c) = p.dt_per_dx2 {
                    self.ensure(positive(c), "heat.dt_per_dx2", || "must be positive".into())?;
                } else {
                    self.ensure(base.dt_max.is_some(), "run.dt_max", || "needed without convection (or set heat.dt_per_dx2)".into())?;
                }
                Params::Heat(p)
            }
            Preset::DecayFit => {
                let p = raw.decay.clone().unwrap_or(DecayParams {
                    window: d::decay_window(),
                    norms: d::decay_norms(),
                    tol: d::five_percent(),
                    operators: Vec::new(),
                    max_seconds: None,
                    resolved: Vec::new(),
                });
                let mut p = p;
                p.resolved = if p.operators.is_empty() {
                    vec![base.operator]
                } else {
                    let mut out = Vec::new();
                    for k in &p.operators {
                        out.push(match k {
                            OperatorKind::Full => OperatorChoice::FullLaplacian,
                            OperatorKind::Reduced => OperatorChoice::ReducedLaplacian,
                            OperatorKind::ReducedPlusEps => OperatorChoice::ReducedPlusEps {
                                eps: raw.operator.eps.ok_or_else(|| {
                                    self.err("decay.operators", "reduced_plus_eps needs operator.eps")
                                })?,
                            },
                        });
                    }
                    out
                };
                let [a, b] = p.window;
                self.ensure(a > base.t_start && b > a && b <= base.t_end, "decay.window", || {
                    format!("needs t_start < a < b <= t_end = {}", base.t_end)
                })?;
                self.ensure(!p.norms.is_empty() && p.norms.iter().all(|&q| q >= 1.0), "decay.norms", || {
                    "norm exponents must be >= 1 (inf allowed)".into()
                })?;
                self.ensure(positive(p.tol), "decay.tol", || "must be positive".into())?;
                Params::Decay(p)
            }
            Preset::SelfsimCollapse => {
                let p = raw.collapse.clone().ok_or_else(|| missing("collapse"))?;
                self.ensure(p.times.len() >= 2, "collapse.times", || "need at least two times".into())?;
                self.ensure(p.times.windows(2).all(|w| w[1] > w[0]), "collapse.times", || "must increase".into())?;
                self.ensure(p.factor > 1.0, "collapse.factor", || "must exceed 1".into())?;
                let last = p.times.last().copied().unwrap_or(0.0) * p.factor;
                self.ensure(p.times[0] > base.t_start && last <= base.t_end * (1.0 + 1e-12), "collapse.times", || {
                    format!("t and {}·t must lie in (t_start, t_end]", p.factor)
                })?;
                Params::Collapse(p)
            }
            Preset::Uniqueness => {
                let p = raw.uniqueness.clone().ok_or_else(|| missing("uniqueness"))?;
                self.ensure(p.recipes[0] != p.recipes[1], "uniqueness.recipes", || "need two different recipes".into())?;
                self.widths(&p.widths, "uniqueness.widths", spacing)?;
                self.ensure(p.t_star > base.t_start && p.t_star <= base.t_end, "uniqueness.t_star", || {
                    "must lie in (t_start, t_end]".into()
                })?;
                if let Some(f) = p.floor {
                    self.ensure(f >= 0.0, "uniqueness.floor", || "must be >= 0".into())?;
                }
                Params::Uniqueness(p)
            }
            Preset::SignPreservation => {
                let p = raw.sign.clone().ok_or_else(|| missing("sign"))?;
                self.widths(&p.widths, "sign.widths", spacing)?;
                self.ensure(p.amplitude >= 0.0 && p.amplitude.is_finite(), "sign.amplitude", || "must be >= 0".into())?;
                self.ensure(p.t_star > base.t_start && p.t_star <= base.t_end, "sign.t_star", || {
                    "must lie in (t_start, t_end]".into()
                })?;
                self.ensure(p.max_fraction >= 0.0, "sign.max_fraction", || "must be >= 0".into())?;
                Params::Sign(p)
            }
            Preset::Contraction | Preset::Comparison => {
                let p = raw.pairs.clone().unwrap_or(PairParams {
                    count: d::twenty(),
                    seed: d::seed(),
                    samples: d::samples(),
                    bumps: d::three(),
                    spread: d::one(),
                });
                self.ensure(p.count >= 1, "pairs.count", || "must be >= 1".into())?;
                self.ensure(p.samples >= 2, "pairs.samples", || "must be >= 2".into())?;
                self.ensure(p.bumps >= 1, "pairs.bumps", || "must be >= 1".into())?;
                self.ensure(positive(p.spread), "pairs.spread", || "must be positive".into())?;
                Params::Pairs(p)
            }
            Preset::EntropyAudit => {
                let p = raw.entropy.clone().unwrap_or(EntropyParams {
                    levels: d::levels(),
                    bumps: d::twenty(),
                    seed: d::seed(),
                    tol: d::kruzhkov_tol(),
                    reversed: true,
                });
                self.ensure(p.levels >= 2, "entropy.levels", || "must be >= 2".into())?;
                self.ensure(p.bumps >= 1, "entropy.bumps", || "must be >= 1".into())?;
                self.ensure(positive(p.tol), "entropy.tol", || "must be positive".into())?;
                self.ensure(base.t_end > base.t_start, "run.t_end", || "the audit needs a time interval".into())?;
                Params::Entropy(p)
            }
            Preset::TailReport => {
                let p = raw.tail.clone().ok_or_else(|| missing("tail"))?;
                self.ensure(!p.radii.is_empty() && p.radii.iter().all(|&r| positive(r)), "tail.radii", || {
                    "need positive radii".into()
                })?;
                self.ensure(p.refine > 1.0, "tail.refine", || "must exceed 1".into())?;
                self.ensure(p.enlarge > 1.0, "tail.enlarge", || "must exceed 1".into())?;
                self.ensure(p.stability >= 1.0, "tail.stability", || "must be >= 1".into())?;
                self.ensure(base.t_end > base.t_start, "run.t_end", || "the report needs a time interval".into())?;
                Params::Tail(p)
            }
            Preset::Sandwich => {
                let p = raw.sandwich.clone().ok_or_else(|| missing("sandwich"))?;
                let h = base.grid.spacing(base.grid.xn_axis());
                let m = 2.0 * p.r / h;
                self.ensure(positive(p.r) && (m - m.round()).abs() < 1e-9, "sandwich.r", || {
                    format!("2r must be a positive whole number of cells of width {h}")
                })?;
                self.ensure(positive(p.tol), "sandwich.tol", || "must be positive".into())?;
                self.ensure(p.samples >= 1, "sandwich.samples", || "must be >= 1".into())?;
                self.ensure(positive(p.t0), "sandwich.t0", || "must be positive".into())?;
                Params::Sandwich(p)
            }
            Preset::EnergyReport => {
                let p = raw.energy.clone().ok_or_else(|| missing("energy"))?;
                self.ensure(p.tau >= base.t_start && p.tau < base.t_end, "energy.tau", || {
                    "must lie in [t_start, t_end)".into()
                })?;
                self.ensure(p.slack >= 0.0, "energy.slack", || "must be >= 0".into())?;
                Params::Energy(p)
            }
        })
    }

    fn widths(&self, widths: &[f64], key: &str, spacing: f64) -> Result<(), ConfigError> {
        self.ensure(!widths.is_empty(), key, || "need at least one width".into())?;
        self.ensure(widths.windows(2).all(|w| w[1] < w[0]), key, || "must be strictly decreasing".into())?;
        let smallest = widths[widths.len() - 1];
        self.ensure(smallest >= 2.0 * spacing, key, || {
            format!("width {smallest} is below two cells ({})", 2.0 * spacing)
        })
    }
}

/// Best-effort key for a run-config validation message.
fn run_key(message: &str) -> String {
    for k in [
        "run id", "mass", "t_start", "t_end", "cfl", "theta", "lin_tol", "dt_max", "snapshot", "strides",
        "tail radii", "boundary_leak_tol", "max_iters", "eps",
    ] {
        if message.contains(k) {
            return match k {
                "run id" => "run_id".into(),
                "snapshot" => "run.snapshot_times".into(),
                "strides" => "run.series_stride".into(),
                "tail radii" => "run.tail_radii".into(),
                "eps" => "operator.eps".into(),
                other => format!("run.{other}"),
            };
        }
    }
    String::new()
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line defining the dotted `key`, falling back to its section
/// header; 0 when absent.
pub fn key_line(text: &str, key: &str) -> usize {
    let mut table = String::new();
    let mut header = 0;
    let section = key.split('.').next().unwrap_or("");
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            table = name.trim().to_string();
            if table == section && header == 0 {
                header = i + 1;
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs: String = lhs.chars().filter(|c| !c.is_whitespace() && *c != '"').collect();
        let full = if table.is_empty() { lhs } else { format!("{table}.{lhs}") };
        if full == key {
            return i + 1;
        }
        if header == 0 && full.split('.').next() == Some(section) {
            header = i + 1;
        }
    }
    header
}

fn yes() -> bool {
    true
}

mod d {
    pub fn mass_tol() -> f64 {
        1e-8
    }
    pub fn cell_tol() -> f64 {
        1e-8
    }
    pub fn heat_spacings() -> Vec<f64> {
        vec![0.04, 0.02, 0.01]
    }
    pub fn four() -> f64 {
        4.0
    }
    pub fn quarter() -> f64 {
        0.25
    }
    pub fn minute() -> f64 {
        60.0
    }
    pub fn decay_window() -> [f64; 2] {
        [1.0, 100.0]
    }
    pub fn decay_norms() -> Vec<f64> {
        vec![f64::INFINITY, 2.0]
    }
    pub fn five_percent() -> f64 {
        0.05
    }
    pub fn recipes() -> [super::RecipeKind; 2] {
        [super::RecipeKind::Gaussian, super::RecipeKind::Box]
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn two() -> f64 {
        2.0
    }
    pub fn half() -> f64 {
        0.5
    }
    pub fn tenth() -> f64 {
        0.1
    }
    pub fn twenty() -> usize {
        20
    }
    pub fn three() -> usize {
        3
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn samples() -> usize {
        50
    }
    pub fn levels() -> usize {
        32
    }
    pub fn kruzhkov_tol() -> f64 {
        1e-6
    }
    pub fn sandwich_t0() -> f64 {
        0.05
    }
    pub fn milli() -> f64 {
        1e-3
    }
}
