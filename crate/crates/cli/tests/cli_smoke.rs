//! Smoke tests of the `sed` binary: verbs, outputs and exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

use tempfile::TempDir;

fn sed() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sed"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_analyze_roundtrip_and_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = write_config(
        dir.path(),
        &format!(
            "Z = 1\nN = 100\nseed = 3\nfixed_window = [0, 200]\nsteps_per_orbit = 700\n\
             sample_stride = 70\nt_max = 80.0\nensemble_size = 2\noutput_dir = \"{}\"\n",
            out.display()
        ),
    );
    let status = sed().args(["run", "--config"]).arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(0));
    for name in [
        "config.toml",
        "traj_000.samples.tsv",
        "traj_001.samples.tsv",
        "hist_energy.tsv",
        "hist_eccentricity.tsv",
        "hist_radius.tsv",
        "summary.tsv",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    // Histograms can be re-derived from the stored records.
    let pooled_before = fs::read_to_string(out.join("hist_radius.tsv")).unwrap();
    let status = sed().args(["analyze", "--dir"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let pooled_after = fs::read_to_string(out.join("hist_radius.tsv")).unwrap();
    assert_eq!(pooled_before, pooled_after);
    assert!(out.join("analyze.tsv").exists());
}

#[test]
fn ionisation_everywhere_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    // Unbound-ish bound orbit at E = -0.01 with a tiny dwell: the detector
    // fires immediately under pure Kepler motion.
    let config = write_config(
        dir.path(),
        &format!(
            "Z = 1\nN = 100\nseed = 3\nfixed_window = [0, 200]\nsteps_per_orbit = 700\n\
             sample_stride = 70\nt_max = 5000.0\nensemble_size = 1\nbeta = 0.0\n\
             field_access = \"off\"\nionisation_dwell = 100.0\n\
             initial_r = [50.0, 0.0, 0.0]\ninitial_v = [0.0, 0.14142135623730953, 0.0]\n\
             output_dir = \"{}\"\n",
            out.display()
        ),
    );
    let status = sed().args(["run", "--config"]).arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn numerical_abort_exits_three() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    // Radial plunge into an oversized guard radius.
    let config = write_config(
        dir.path(),
        &format!(
            "Z = 1\nN = 100\nseed = 3\nfixed_window = [0, 200]\nsteps_per_orbit = 700\n\
             sample_stride = 70\nt_max = 40.0\nensemble_size = 1\nbeta = 0.0\n\
             field_access = \"off\"\nguard_radius = 0.5\n\
             initial_r = [1.0, 0.0, 0.0]\ninitial_v = [0.0, 0.3, 0.0]\n\
             output_dir = \"{}\"\n",
            out.display()
        ),
    );
    let status = sed().args(["run", "--config"]).arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn bad_config_exits_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "Z = 0\nN = 100\nseed = 1\nn_harm = 2.5\n");
    let output = sed().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("`Z`"), "stderr should name the offending key: {stderr}");
}

#[test]
fn sample_verb_self_test() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("samples");
    let status = sed()
        .args(["sample", "--count", "20000", "--seed", "42", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("hist_R.tsv").exists());
    assert!(out.join("hist_kappa.tsv").exists());
    let table = fs::read_to_string(out.join("samples.tsv")).unwrap();
    assert_eq!(table.lines().count(), 20_001);
}

#[test]
fn field_check_verb_small_scale_with_spectrum_dump() {
    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("spectrum.tsv");
    let status = sed()
        .args([
            "field-check",
            "--mesh-density",
            "100",
            "--max-mode",
            "3000",
            "--seeds",
            "60",
            "--cutoff-scale",
            "10.0",
            "--lags",
            "0,1",
            "--tolerance",
            "0.12",
            "--dump-spectrum",
        ])
        .arg(&dump)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = fs::read_to_string(&dump).unwrap();
    // Header plus one record per mode, 11 columns each.
    assert_eq!(text.lines().count(), 3001);
    assert_eq!(text.lines().nth(1).unwrap().split('\t').count(), 11);
}

#[test]
fn resume_verb_reproduces_run() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let config = write_config(
        dir.path(),
        &format!(
            "Z = 1\nN = 100\nseed = 9\nfixed_window = [0, 200]\nsteps_per_orbit = 700\n\
             sample_stride = 70\nt_max = 100.0\nensemble_size = 1\ncheckpoint_at_orbit = 4\n\
             output_dir = \"{}\"\n",
            out.display()
        ),
    );
    assert_eq!(sed().args(["run", "--config"]).arg(&config).status().unwrap().code(), Some(0));
    let full = fs::read(out.join("traj_000.samples.tsv")).unwrap();
    let checkpoint = out.join("traj_000.checkpoint.json");
    assert!(checkpoint.exists());
    let status = sed().args(["resume", "--checkpoint"]).arg(&checkpoint).status().unwrap();
    assert_eq!(status.code(), Some(0));
    assert_eq!(fs::read(out.join("traj_000.samples.tsv")).unwrap(), full);
}
