use std::path::Path;
use std::process::Command;

use fastconv_runner::{parse_config, parse_str, run_experiment, Preset};

const CONTRACTION: &str = r#"
preset = "contraction"
run_id = "pairs"

grid.lower = [-2.0]
grid.upper = [6.0]
grid.spacing = [0.02]

operator.kind = "reduced"
flux.q = 0.75
flux.eta = 1e-8
initial.recipe = "gaussian"
initial.width = 0.5

run.t_end = 0.2
run.cfl = 0.9
run.entropy_stride = 10

pairs.count = 3
pairs.samples = 5
pairs.seed = 4

output.checkpoints = true
output.plotdata = true
"#;

const HEAT: &str = r#"
preset = "heat_baseline"
run_id = "heat"

grid.lower = [-12.0]
grid.upper = [12.0]
grid.spacing = [0.08]

operator.kind = "full"
flux.q = 0.75
flux.eta = 0.0
initial.recipe = "heat_kernel"
initial.t0 = 0.05

run.convection = false
run.theta = 0.5
run.t_end = 0.5

heat.spacings = [0.08, 0.04]
heat.dt_per_dx2 = 0.5
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fastconv"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn run_writes_a_report_that_audits_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "pairs.toml", CONTRACTION);
    let out = bin().arg("run").arg(&cfg).env("FASTCONV_OUTPUT_ROOT", tmp.path()).env("FASTCONV_WORKERS", "1").output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("PASS"));

    let rep = tmp.path().join("pairs");
    for f in ["report.toml", "summary.txt", "checks.csv", "runs.csv", "config.toml", "snapshots.csv"] {
        assert!(rep.join(f).is_file(), "{f} missing");
    }
    assert!(rep.join("plotdata").is_dir());
    assert!(!rep.join("failures.txt").exists());
    let meta = std::fs::read_to_string(rep.join("report.toml")).unwrap();
    assert!(meta.contains("passed = true"));

    let audit = bin().arg("audit").arg(&rep).output().unwrap();
    let text = String::from_utf8_lossy(&audit.stdout);
    assert_eq!(audit.status.code(), Some(0), "{text}");
    assert!(text.contains("reproduced bit-exactly"), "{text}");

    std::fs::remove_dir_all(rep.join("plotdata")).unwrap();
    let plot = bin().arg("plotdata").arg(&rep).output().unwrap();
    assert_eq!(plot.status.code(), Some(0));
    assert!(std::fs::read_dir(rep.join("plotdata")).unwrap().count() > 0);
}

#[test]
fn checkpoints_resume_to_the_stored_end_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "pairs.toml", CONTRACTION);
    let out = bin().args(["run", "--workers", "1", "--output-root"]).arg(tmp.path()).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let ck = tmp.path().join("pairs.checkpoints");
    let run = std::fs::read_dir(&ck).unwrap().next().unwrap().unwrap().path();
    let id = run.file_name().unwrap().to_string_lossy().into_owned();
    let res = bin().arg("resume").arg(&run).output().unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    // The last checkpoint is at the end time, so the resumed state equals the stored one.
    let stored = fastconv::Trajectory::load(&tmp.path().join("pairs/runs").join(&id)).unwrap();
    let resumed = fastconv::Trajectory::load(&run.join("resumed")).unwrap();
    assert_eq!(resumed.last().field, stored.last().field);
}

#[test]
fn heat_preset_passes_and_reports_the_error_table() {
    let spec = parse_str(HEAT, Path::new("heat.toml")).unwrap();
    assert_eq!(spec.preset, Preset::HeatBaseline);
    let exp = run_experiment(&spec, Some(1), None).unwrap();
    assert!(exp.failures.is_empty(), "{:?}", exp.failures);
    assert!(exp.passed(), "{:#?}", exp.checks());
    let ev = exp.evaluation.unwrap();
    let table = ev.table("heat_error").unwrap();
    assert_eq!(table.rows.len(), 2);
}

#[test]
fn failing_checks_exit_with_one() {
    let text = HEAT.replace("heat.dt_per_dx2 = 0.5", "heat.dt_per_dx2 = 0.5\nheat.ratio_tol = 1e-9");
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "heat.toml", &text);
    let out = bin().arg("run").arg(&cfg).env("FASTCONV_OUTPUT_ROOT", tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    assert!(std::fs::read_to_string(tmp.path().join("heat/report.toml")).unwrap().contains("passed = false"));
}

#[test]
fn bad_config_exits_with_two_and_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &CONTRACTION.replace("flux.q = 0.75", "flux.q = 0.75\nflux.qq = 1"));
    let out = bin().arg("run").arg(&cfg).env("FASTCONV_OUTPUT_ROOT", tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:11"), "{err}");
}

#[test]
fn shipped_experiment_files_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            parse_config(&p).unwrap_or_else(|e| panic!("{e}"));
            n += 1;
        }
    }
    assert!(n >= 11);
}
