//! Experiment harness for the `fastconv` simulator: experiment files,
//! presets, parallel execution and report directories.

pub mod config;
pub mod presets;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use fastconv::diagnostics::CheckRecord;
use fastconv::stepper::{make_initial, Simulation};
use fastconv::Trajectory;
use rayon::prelude::*;

pub use config::{parse_config, parse_str, ConfigError, ExperimentSpec, Preset};
pub use presets::{Evaluation, Job};
pub use report::{RunRow, Table};

/// Directory under which reports are written.
pub const OUTPUT_ROOT_VAR: &str = "FASTCONV_OUTPUT_ROOT";
/// Number of runs executed concurrently (default: one per core).
pub const WORKERS_VAR: &str = "FASTCONV_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] fastconv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// A finished (or failed) run.
#[derive(Debug)]
pub struct RunOutcome {
    pub row: RunRow,
    pub traj: Option<Trajectory>,
}

fn run_one(job: &Job, checkpoints: Option<&Path>) -> RunOutcome {
    let start = Instant::now();
    let result = (|| -> fastconv::Result<Trajectory> {
        let u0 = match &job.initial {
            Some(f) => f.clone(),
            None => make_initial(&job.cfg.initial, job.cfg.mass, &job.cfg.grid)?,
        };
        let mut sim = Simulation::new(job.cfg.clone(), u0)?;
        if let Some(dir) = checkpoints {
            let dir = dir.join(&job.cfg.run_id);
            for t in job.cfg.schedule() {
                sim.run_to(t)?;
                sim.checkpoint(&dir)?;
            }
        }
        sim.run()
    })();
    let seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(t) => RunOutcome {
            row: RunRow { id: job.cfg.run_id.clone(), steps: t.steps, seconds, status: "ok".into() },
            traj: Some(t),
        },
        Err(e) => RunOutcome {
            row: RunRow { id: job.cfg.run_id.clone(), steps: 0, seconds, status: e.to_string() },
            traj: None,
        },
    }
}

/// Runs the jobs on `workers` threads (all cores when `None`), in job order.
pub fn run_jobs(jobs: &[Job], workers: Option<usize>, checkpoints: Option<&Path>) -> Result<Vec<RunOutcome>, RunnerError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| RunnerError::Invalid(e.to_string()))?;
    Ok(pool.install(|| jobs.par_iter().map(|j| run_one(j, checkpoints)).collect()))
}

/// Everything an experiment produced, before it is written anywhere.
#[derive(Debug)]
pub struct Experiment {
    pub jobs: Vec<Job>,
    pub outcomes: Vec<RunOutcome>,
    /// `None` when a run failed or the evaluation errored.
    pub evaluation: Option<Evaluation>,
    pub failures: Vec<String>,
    pub wall_seconds: f64,
}

impl Experiment {
    pub fn trajectories(&self) -> Vec<&Trajectory> {
        self.outcomes.iter().filter_map(|o| o.traj.as_ref()).collect()
    }

    /// Asserted checks, with a failing record when runs or the evaluation failed.
    pub fn checks(&self) -> Vec<CheckRecord> {
        let mut out = self.evaluation.as_ref().map(|e| e.checks.clone()).unwrap_or_default();
        if !self.failures.is_empty() {
            out.push(CheckRecord::flag("all runs completed and evaluated", false, "execution"));
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|c| c.pass)
    }
}

fn evaluate_outcomes(spec: &ExperimentSpec, jobs: &[Job], outcomes: &[RunOutcome]) -> (Option<Evaluation>, Vec<String>) {
    let mut failures: Vec<String> =
        outcomes.iter().filter(|o| !o.row.ok()).map(|o| format!("run {}: {}", o.row.id, o.row.status)).collect();
    if !failures.is_empty() {
        return (None, failures);
    }
    let trajs: Vec<Trajectory> = outcomes.iter().filter_map(|o| o.traj.clone()).collect();
    let seconds: Vec<f64> = outcomes.iter().map(|o| o.row.seconds).collect();
    match presets::evaluate(spec, jobs, &trajs, &seconds) {
        Ok(ev) => (Some(ev), failures),
        Err(e) => {
            failures.push(format!("evaluation: {e}"));
            (None, failures)
        }
    }
}

/// Plans, runs and evaluates an experiment without touching the disk
/// (except for checkpoints when `checkpoints` is given).
pub fn run_experiment(
    spec: &ExperimentSpec,
    workers: Option<usize>,
    checkpoints: Option<&Path>,
) -> Result<Experiment, RunnerError> {
    let jobs = presets::plan(spec)?;
    let start = Instant::now();
    let outcomes = run_jobs(&jobs, workers, checkpoints)?;
    let (evaluation, failures) = evaluate_outcomes(spec, &jobs, &outcomes);
    Ok(Experiment { jobs, outcomes, evaluation, failures, wall_seconds: start.elapsed().as_secs_f64() })
}

/// A written report.
#[derive(Debug)]
pub struct Report {
    pub dir: PathBuf,
    pub meta: report::ReportMeta,
    pub checks: Vec<CheckRecord>,
    pub failures: Vec<String>,
}

/// Runs an experiment and writes its report under `root`.
pub fn execute(spec: &ExperimentSpec, root: &Path, workers: Option<usize>) -> Result<Report, RunnerError> {
    let dir = root.join(spec.output_dir());
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let checkpoints = spec.output.checkpoints.then(|| dir.with_file_name(format!("{name}.checkpoints")));
    let exp = run_experiment(spec, workers, checkpoints.as_deref())?;
    let mut failures = exp.failures.clone();
    let trajs: Vec<Trajectory> = exp.trajectories().into_iter().cloned().collect();
    let plots = match (&exp.evaluation, spec.output.plotdata) {
        (Some(ev), true) => presets::plots(spec, &trajs, ev).unwrap_or_else(|e| {
            failures.push(format!("plotdata: {e}"));
            Vec::new()
        }),
        _ => Vec::new(),
    };
    let checks = exp.checks();
    let rows: Vec<RunRow> = exp.outcomes.iter().map(|o| o.row.clone()).collect();
    let stored: Vec<Option<Trajectory>> = exp.outcomes.into_iter().map(|o| o.traj).collect();
    let meta = report::ReportMeta {
        preset: spec.preset.name().into(),
        run_id: spec.base.run_id.clone(),
        config_sha256: report::sha256_hex(&spec.source),
        version: env!("CARGO_PKG_VERSION").into(),
        wall_seconds: exp.wall_seconds,
        checks_total: checks.len(),
        checks_passed: checks.iter().filter(|c| c.pass).count(),
        failed_runs: rows.iter().filter(|r| !r.ok()).count(),
        passed: checks.iter().all(|c| c.pass),
    };
    let tables = exp.evaluation.map(|e| e.tables).unwrap_or_default();
    report::write_report(
        &dir,
        &report::ReportContents {
            meta: meta.clone(),
            config_text: &spec.source,
            checks: &checks,
            tables: &tables,
            plots: &plots,
            runs: &rows,
            trajectories: &stored,
            save_runs: spec.output.save_runs,
            failures: &failures,
        },
    )?;
    Ok(Report { dir, meta, checks, failures })
}

/// A stored report loaded back with its trajectories.
pub struct Loaded {
    pub spec: ExperimentSpec,
    pub jobs: Vec<Job>,
    pub trajs: Vec<Trajectory>,
    pub seconds: Vec<f64>,
}

/// Reads the experiment file and stored trajectories of a report.
pub fn load_report(rundir: &Path) -> Result<Loaded, RunnerError> {
    let path = rundir.join("config.toml");
    let text = std::fs::read_to_string(&path)?;
    let spec = parse_str(&text, &path)?;
    let jobs = presets::plan(&spec)?;
    let rows = report::parse_runs_csv(&std::fs::read_to_string(rundir.join("runs.csv"))?);
    let mut trajs = Vec::with_capacity(jobs.len());
    let mut seconds = Vec::with_capacity(jobs.len());
    for j in &jobs {
        let id = &j.cfg.run_id;
        let dir = rundir.join("runs").join(id);
        if !dir.exists() {
            return Err(RunnerError::Invalid(format!("run {id} is not stored in {}", rundir.display())));
        }
        trajs.push(Trajectory::load(&dir)?);
        seconds.push(rows.iter().find(|r| &r.id == id).map_or(0.0, |r| r.seconds));
    }
    Ok(Loaded { spec, jobs, trajs, seconds })
}

/// Result of re-checking a stored report.
#[derive(Debug)]
pub struct AuditOutcome {
    pub checks: Vec<CheckRecord>,
    /// Whether the recomputed `checks.csv` equals the stored one byte for byte.
    pub reproduced: bool,
}

/// Re-evaluates the checks of a report from its stored trajectories.
pub fn audit(rundir: &Path) -> Result<AuditOutcome, RunnerError> {
    let l = load_report(rundir)?;
    let ev = presets::evaluate(&l.spec, &l.jobs, &l.trajs, &l.seconds)?;
    let stored = std::fs::read_to_string(rundir.join("checks.csv")).unwrap_or_default();
    let reproduced = report::checks_csv(&ev.checks) == stored;
    Ok(AuditOutcome { checks: ev.checks, reproduced })
}

/// Writes the per-figure CSVs of a stored report; returns their directory.
pub fn plotdata(rundir: &Path) -> Result<PathBuf, RunnerError> {
    let l = load_report(rundir)?;
    let ev = presets::evaluate(&l.spec, &l.jobs, &l.trajs, &l.seconds)?;
    let plots = presets::plots(&l.spec, &l.trajs, &ev)?;
    Ok(report::write_plotdata(rundir, &plots)?)
}

/// Continues a checkpointed run to its end time and stores the remaining
/// trajectory in `<checkpoint>/resumed`.
pub fn resume(checkpoint: &Path) -> Result<Trajectory, RunnerError> {
    let traj = Simulation::resume(checkpoint)?.run()?;
    traj.save(&checkpoint.join("resumed"))?;
    Ok(traj)
}
