use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::snapshot::{read_snapshot, write_snapshot, SnapshotMeta};

/// Stored state at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    /// Length of the step that produced this state (0 for initial data).
    pub dt: f64,
    pub field: Field,
}

/// Scalar diagnostics at one accepted step.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesSample {
    pub t: f64,
    pub step: usize,
    pub mass: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub min: f64,
    pub max: f64,
    /// `‖u⁻‖₁`.
    pub neg_mass: f64,
    /// `∫ |u|` over boundary cells.
    pub boundary_mass: f64,
    /// `⟨A u, u⟩ · vol` for the run's operator.
    pub energy: f64,
    /// Most negative cell entropy production of the step (NaN if not evaluated).
    pub entropy_min: f64,
    /// `∫_{|x|>R} |u|` for each configured radius.
    pub tails: Vec<f64>,
}

/// Snapshots and scalar series of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub config: RunConfig,
    pub snapshots: Vec<Snapshot>,
    pub series: Vec<SeriesSample>,
    /// Total accepted steps.
    pub steps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRecord {
    steps: usize,
    config: RunConfig,
    snapshots: Vec<SnapshotEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotEntry {
    file: String,
    time: f64,
    step: usize,
}

const SERIES_HEADER: &str =
    "t,step,mass,l1,l2,linf,min,max,neg_mass,boundary_mass,energy,entropy_min";

impl Trajectory {
    pub fn run_id(&self) -> &str {
        &self.config.run_id
    }

    pub fn grid(&self) -> &Grid {
        &self.config.grid
    }

    pub fn first(&self) -> &Snapshot {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory has an initial snapshot")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// Snapshot whose time equals `t` up to a relative `1e-9`.
    pub fn at(&self, t: f64) -> Result<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or(Error::MissingSnapshot(t))
    }

    /// Whether consecutive snapshots are consecutive steps over `[t0, t1]`.
    pub fn full_stride_over(&self, t0: f64, t1: f64) -> bool {
        let inside: Vec<&Snapshot> =
            self.snapshots.iter().filter(|s| s.t >= t0 - 1e-12 && s.t <= t1 + 1e-12).collect();
        inside.len() >= 2 && inside.windows(2).all(|w| w[1].step == w[0].step + 1)
    }

    /// Time reversal `t ↦ t_first + t_last - t` combined with the mirror `x_N ↦ -x_N`.
    ///
    /// The mirrored, reversed sequence is again a discrete weak solution of
    /// the same conservation law, but shocks become entropy-violating
    /// expansion shocks.
    pub fn time_reversed(&self) -> Trajectory {
        let (t0, t1) = (self.first().t, self.last().t);
        let (s0, s1) = (self.first().step, self.last().step);
        let count = self.snapshots.len();
        let n = self.grid().line_len();
        let snapshots = (0..count)
            .map(|j| {
                let src = &self.snapshots[count - 1 - j];
                let dt = if j == 0 { 0.0 } else { self.snapshots[count - j].dt };
                let mut v = src.field.values().to_vec();
                v.chunks_mut(n).for_each(|line| line.reverse());
                Snapshot {
                    t: t0 + t1 - src.t,
                    step: s0 + s1 - src.step,
                    dt,
                    field: Field::new(*self.grid(), v).expect("mirror of a valid field"),
                }
            })
            .collect();
        Trajectory {
            config: RunConfig { run_id: format!("{}-reversed", self.run_id()), ..self.config.clone() },
            snapshots,
            series: Vec::new(),
            steps: self.steps,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let snap_dir = dir.join("snapshots");
        fs::create_dir_all(&snap_dir)?;
        let mut entries = Vec::with_capacity(self.snapshots.len());
        for (i, s) in self.snapshots.iter().enumerate() {
            let file = format!("snap_{i:06}.bin");
            let meta = SnapshotMeta::new(self.grid(), s.t, self.run_id(), s.step, s.dt);
            write_snapshot(&snap_dir.join(&file), &s.field, &meta)?;
            entries.push(SnapshotEntry { file, time: s.t, step: s.step });
        }
        let record = RunRecord { steps: self.steps, config: self.config.clone(), snapshots: entries };
        let text = toml::to_string(&record)
            .map_err(|e| Error::Format { path: dir.join("run.toml"), reason: e.to_string() })?;
        fs::write(dir.join("run.toml"), text)?;
        fs::write(dir.join("series.csv"), self.series_csv())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Trajectory> {
        let path = dir.join("run.toml");
        let text = fs::read_to_string(&path)?;
        let record: RunRecord =
            toml::from_str(&text).map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        let mut snapshots = Vec::with_capacity(record.snapshots.len());
        for e in &record.snapshots {
            let (field, meta) = read_snapshot(&dir.join("snapshots").join(&e.file))?;
            if field.grid() != &record.config.grid {
                return Err(Error::Format { path: path.clone(), reason: format!("{} has a foreign grid", e.file) });
            }
            snapshots.push(Snapshot { t: meta.time, step: meta.step, dt: meta.dt, field });
        }
        let series = parse_series(&dir.join("series.csv"))?;
        Ok(Trajectory { config: record.config, snapshots, series, steps: record.steps })
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from(SERIES_HEADER);
        for r in &self.config.tail_radii {
            let _ = write!(out, ",tail_{r}");
        }
        out.push('\n');
        for s in &self.series {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.t, s.step, s.mass, s.l1, s.l2, s.linf, s.min, s.max, s.neg_mass,
                s.boundary_mass, s.energy, s.entropy_min
            );
            for v in &s.tails {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn parse_series(path: &Path) -> Result<Vec<SeriesSample>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, why: &str| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {line}: {why}"),
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    if !header.starts_with(SERIES_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 12 {
            return Err(bad(i + 2, "too few columns"));
        }
        let num = |k: usize| cols[k].parse::<f64>().map_err(|_| bad(i + 2, "not a number"));
        out.push(SeriesSample {
            t: num(0)?,
            step: cols[1].parse().map_err(|_| bad(i + 2, "bad step"))?,
            mass: num(2)?,
            l1: num(3)?,
            l2: num(4)?,
            linf: num(5)?,
            min: num(6)?,
            max: num(7)?,
            neg_mass: num(8)?,
            boundary_mass: num(9)?,
            energy: num(10)?,
            entropy_min: num(11)?,
            tails: (12..cols.len()).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}
