//! Report directories.
//!
//! ```text
//! <dir>/report.toml      metadata and overall verdict
//! <dir>/summary.txt      one line per asserted check
//! <dir>/checks.csv       name,measured,tolerance,pass,source
//! <dir>/runs.csv         id,steps,seconds,status
//! <dir>/failures.txt     failed runs and evaluation errors (only when any)
//! <dir>/config.toml      copy of the experiment file
//! <dir>/snapshots.csv    index of the stored snapshots
//! <dir>/tables/*.csv     preset tables
//! <dir>/runs/<id>/       stored trajectories
//! <dir>/plotdata/*.csv   per-figure data
//! ```
//!
//! A report is assembled in a sibling temporary directory and renamed into
//! place, so a reader never sees a half-written one.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fastconv::diagnostics::CheckRecord;
use fastconv::Trajectory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A CSV table. Numbers are written in shortest round-trip form, so equal
/// values always give equal text.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::write(dir.join(format!("{}.csv", self.name)), self.to_csv())
    }
}

/// Cell text for a number.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Per-run bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub id: String,
    pub steps: usize,
    pub seconds: f64,
    /// `"ok"` or the error message.
    pub status: String,
}

impl RunRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

pub fn runs_csv(rows: &[RunRow]) -> String {
    let mut out = String::from("id,steps,seconds,status\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.id, r.steps, r.seconds, r.status.replace([',', '\n'], ";"));
    }
    out
}

pub fn parse_runs_csv(text: &str) -> Vec<RunRow> {
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let mut it = l.splitn(4, ',');
            Some(RunRow {
                id: it.next()?.to_string(),
                steps: it.next()?.parse().ok()?,
                seconds: it.next()?.parse().ok()?,
                status: it.next()?.to_string(),
            })
        })
        .collect()
}

pub fn checks_csv(checks: &[CheckRecord]) -> String {
    let mut out = String::from("name,measured,tolerance,pass,source\n");
    for c in checks {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.name.replace(',', ";"),
            c.measured,
            c.tolerance,
            if c.pass { "pass" } else { "FAIL" },
            c.source.replace(',', ";")
        );
    }
    out
}

pub fn summary_text(preset: &str, run_id: &str, checks: &[CheckRecord], failures: &[String]) -> String {
    let passed = checks.iter().filter(|c| c.pass).count();
    let mut out = format!("{preset} {run_id}: {passed}/{} checks passed\n", checks.len());
    for c in checks {
        let _ = writeln!(
            out,
            "{} {}: measured {:e}, tolerance {:e} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.tolerance,
            c.source
        );
    }
    for f in failures {
        let _ = writeln!(out, "ERROR {f}");
    }
    out
}

/// `report.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    pub preset: String,
    pub run_id: String,
    pub config_sha256: String,
    pub version: String,
    pub wall_seconds: f64,
    pub checks_total: usize,
    pub checks_passed: usize,
    pub failed_runs: usize,
    pub passed: bool,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Everything that goes into a report directory.
pub struct ReportContents<'a> {
    pub meta: ReportMeta,
    pub config_text: &'a str,
    pub checks: &'a [CheckRecord],
    pub tables: &'a [Table],
    pub plots: &'a [Table],
    pub runs: &'a [RunRow],
    pub trajectories: &'a [Option<Trajectory>],
    pub save_runs: bool,
    pub failures: &'a [String],
}

fn snapshot_index(trajs: &[Option<Trajectory>]) -> String {
    let mut out = String::from("run,index,t,step,file\n");
    for t in trajs.iter().flatten() {
        for (i, s) in t.snapshots.iter().enumerate() {
            let _ = writeln!(out, "{},{i},{},{},runs/{}/snapshots/snap_{i:06}.bin", t.run_id(), s.t, s.step, t.run_id());
        }
    }
    out
}

/// Writes the report into `dir`, replacing any previous report there.
pub fn write_report(dir: &Path, c: &ReportContents<'_>) -> std::io::Result<()> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(tmp.join("tables"))?;

    let meta = toml::to_string(&c.meta).map_err(std::io::Error::other)?;
    fs::write(tmp.join("report.toml"), meta)?;
    fs::write(tmp.join("summary.txt"), summary_text(&c.meta.preset, &c.meta.run_id, c.checks, c.failures))?;
    fs::write(tmp.join("checks.csv"), checks_csv(c.checks))?;
    fs::write(tmp.join("runs.csv"), runs_csv(c.runs))?;
    fs::write(tmp.join("config.toml"), c.config_text)?;
    if !c.failures.is_empty() {
        fs::write(tmp.join("failures.txt"), c.failures.join("\n") + "\n")?;
    }
    for t in c.tables {
        t.write(&tmp.join("tables"))?;
    }
    if !c.plots.is_empty() {
        fs::create_dir_all(tmp.join("plotdata"))?;
        for t in c.plots {
            t.write(&tmp.join("plotdata"))?;
        }
    }
    if c.save_runs {
        for t in c.trajectories.iter().flatten() {
            t.save(&tmp.join("runs").join(t.run_id())).map_err(std::io::Error::other)?;
        }
        fs::write(tmp.join("snapshots.csv"), snapshot_index(c.trajectories))?;
    }

    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)
}

/// Writes plot tables into `<rundir>/plotdata/`.
pub fn write_plotdata(rundir: &Path, plots: &[Table]) -> std::io::Result<PathBuf> {
    let out = rundir.join("plotdata");
    fs::create_dir_all(&out)?;
    for t in plots {
        t.write(&out)?;
    }
    Ok(out)
}
