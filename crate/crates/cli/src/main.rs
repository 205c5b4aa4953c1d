//! Command-line driver.
//!
//! Exit codes for `run`/`resume`: 0 success, 2 every trajectory ionised,
//! 3 numerical abort in any trajectory, 1 usage/configuration errors.
//! `sample` and `field-check` exit 1 when their statistical check fails.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sed_cli::checkpoint::Checkpoint;
use sed_cli::config::{splitmix64, RunConfig};
use sed_cli::ensemble::{self, PoolStats, StreamingHist};
use sed_cli::field_check::{field_check, FieldCheckParams};
use sed_cli::records;
use sed_core::conjecture::{
    self, cdf_kappa, cdf_r_major, ks_critical_value, ks_statistic, pdf_eccentricity, pdf_energy,
    pdf_kappa, pdf_r_major, pdf_radius,
};
use sed_core::integrator::detect_ionisation;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Parser)]
#[command(name = "sed", about = "Hydrogen ground state under a stochastic zero-point field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an ensemble described by a config file.
    Run(RunArgs),
    /// Resume a checkpointed trajectory bit-exactly.
    Resume(ResumeArgs),
    /// Sampler-only self-test of the initial-condition law.
    Sample(SampleArgs),
    /// Verify field autocorrelations against their closed forms.
    FieldCheck(FieldCheckArgs),
    /// Re-derive histograms and ionisation verdicts from stored records.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<String>,
}

#[derive(Args)]
struct ResumeArgs {
    /// Checkpoint written by a previous run.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value_t = 100_000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    bins: usize,
}

#[derive(Args)]
struct FieldCheckArgs {
    #[arg(long, default_value_t = 1000)]
    mesh_density: u64,
    #[arg(long, default_value_t = 50_000)]
    max_mode: usize,
    #[arg(long, default_value_t = 200)]
    seeds: u64,
    #[arg(long, default_value_t = 10.0)]
    cutoff_scale: f64,
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
    /// Comma-separated lag times.
    #[arg(long, default_value = "0,0.5,1,5")]
    lags: String,
    /// Dump the first realization's per-mode spectrum to this file.
    #[arg(long)]
    dump_spectrum: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Output directory of a previous run.
    #[arg(long)]
    dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Resume(args) => cmd_resume(args),
        Command::Sample(args) => cmd_sample(args),
        Command::FieldCheck(args) => cmd_field_check(args),
        Command::Analyze(args) => cmd_analyze(args),
    };
    match code {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut raw = RunConfig::parse(&text)?;
    if let Some(dir) = args.output_dir {
        raw.output_dir = Some(dir);
    }
    let cfg = raw.resolve()?;
    let report = ensemble::run_ensemble(&cfg)?;
    for s in &report.summaries {
        println!(
            "traj {:03}: {:?}, t = {:.6e} t0 ({:.3e} s), orbits = {} ({} nominal){}",
            s.index,
            s.outcome,
            s.t_total,
            s.t_total_seconds,
            s.n_orbit_actual,
            s.n_orbit_nominal.round() as u64,
            s.ionisation_time.map_or(String::new(), |t| format!(", ionised at {t:.6e}")),
        );
    }
    for (index, message) in &report.failures {
        eprintln!("traj {index:03}: FAILED: {message}");
    }
    println!("outputs in {}", report.output_dir.display());
    if report.any_numerical_abort() {
        Ok(ExitCode::from(3))
    } else if report.all_ionised() {
        Ok(ExitCode::from(2))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_resume(args: ResumeArgs) -> Result<ExitCode> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let dir = args
        .checkpoint
        .parent()
        .map(PathBuf::from)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let summary = ensemble::resume_trajectory(&checkpoint, &dir)?;
    println!(
        "resumed traj {:03}: {:?}, t = {:.6e} t0, orbits = {}",
        summary.index, summary.outcome, summary.t_total, summary.n_orbit_actual
    );
    let aborted = matches!(
        summary.outcome,
        sed_core::integrator::StopReason::SingularityAbort { .. }
            | sed_core::integrator::StopReason::NonFiniteAbort { .. }
    );
    if aborted {
        Ok(ExitCode::from(3))
    } else if matches!(summary.outcome, sed_core::integrator::StopReason::Ionised { .. }) {
        Ok(ExitCode::from(2))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn cmd_sample(args: SampleArgs) -> Result<ExitCode> {
    fs::create_dir_all(&args.out)?;
    let mut rng = ChaCha12Rng::seed_from_u64(splitmix64(args.seed));
    let mut r_major = Vec::with_capacity(args.count);
    let mut kappa = Vec::with_capacity(args.count);
    let mut table = String::from("R\tkappa\teps\tE\tL\tperihelion_start\n");
    for _ in 0..args.count {
        let ic = conjecture::sample_with_rng(&mut rng)?;
        r_major.push(ic.orbit.r_major);
        kappa.push(ic.orbit.kappa);
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            ic.orbit.r_major,
            ic.orbit.kappa,
            ic.orbit.eps,
            ic.orbit.energy,
            ic.orbit.l,
            ic.start_at_perihelion as u8
        ));
    }
    fs::write(args.out.join("samples.tsv"), table)?;

    let mut hist_r = StreamingHist::new(0.0, 10.0, args.bins);
    let mut hist_k = StreamingHist::new(0.0, 1.0, args.bins);
    for (&r, &k) in r_major.iter().zip(&kappa) {
        hist_r.add(r);
        hist_k.add(k);
    }
    hist_r.write_tsv(&args.out.join("hist_R.tsv"), pdf_r_major)?;
    hist_k.write_tsv(&args.out.join("hist_kappa.tsv"), pdf_kappa)?;

    let d_r = ks_statistic(&r_major, cdf_r_major);
    let d_k = ks_statistic(&kappa, cdf_kappa);
    let critical = ks_critical_value(args.count, 0.01);
    let mean_r = r_major.iter().sum::<f64>() / args.count as f64;
    println!("samples: {}", args.count);
    println!("KS(R)     = {d_r:.5e}  (1% critical {critical:.5e})");
    println!("KS(kappa) = {d_k:.5e}");
    println!("mean R    = {mean_r:.6}  (target 2.5)");
    let pass = d_r < critical && d_k < critical && (mean_r - 2.5).abs() < 0.025;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_field_check(args: FieldCheckArgs) -> Result<ExitCode> {
    let lags: Vec<f64> = args
        .lags
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .context("parsing --lags")?;
    if lags.is_empty() {
        bail!("need at least one lag");
    }
    let params = FieldCheckParams {
        mesh_density: args.mesh_density,
        max_mode: args.max_mode,
        seeds: args.seeds,
        cutoff_scale: args.cutoff_scale,
        lags,
        tolerance: args.tolerance,
        ..FieldCheckParams::default()
    };
    if let Some(path) = &args.dump_spectrum {
        let field = sed_core::field::build_field(0, params.grid(), params.cutoff_scale)?;
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        field.write_spectrum(&mut out)?;
    }
    let report = field_check(&params);
    println!("lag\tC_EE empirical\tC_EE theory\trel.err\tC_AA empirical\tC_AA theory\trel.err");
    for (ee, aa) in report.ee.iter().zip(&report.aa) {
        println!(
            "{}\t{:.6e}\t{:.6e}\t{:+.4}\t{:.6e}\t{:.6e}\t{:+.4}",
            ee.lag, ee.empirical, ee.theory, ee.relative_error, aa.empirical, aa.theory,
            aa.relative_error
        );
    }
    let pass = report.passes();
    println!("{}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let config_text = fs::read_to_string(args.dir.join("config.toml"))
        .with_context(|| format!("reading config echo in {}", args.dir.display()))?;
    let cfg = RunConfig::parse(&config_text)?.resolve()?;
    let mut pooled = PoolStats::new(cfg.histogram_bins, cfg.integrator.ionisation_dwell);
    let mut table = String::from("file\tsamples\tt_first\tt_last\tionisation_t\n");
    let mut found = 0usize;
    let mut entries: Vec<PathBuf> = fs::read_dir(&args.dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("traj_") && n.contains(".samples."))
        })
        .collect();
    entries.sort();
    for path in entries {
        let samples = records::read_samples(&path)?;
        if samples.is_empty() {
            continue;
        }
        found += 1;
        let ionisation = detect_ionisation(
            &samples,
            cfg.integrator.ionisation_threshold,
            cfg.integrator.ionisation_dwell,
        );
        for s in &samples {
            pooled.push(*s);
        }
        pooled.finish(ionisation);
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            path.file_name().unwrap().to_string_lossy(),
            samples.len(),
            samples.first().unwrap().t,
            samples.last().unwrap().t,
            ionisation.map_or("-".into(), |t| t.to_string()),
        ));
    }
    if found == 0 {
        bail!("no sample records in {}", args.dir.display());
    }
    pooled.energy.write_tsv(&args.dir.join("hist_energy.tsv"), pdf_energy)?;
    pooled.eccentricity.write_tsv(&args.dir.join("hist_eccentricity.tsv"), pdf_eccentricity)?;
    pooled.radius.write_tsv(&args.dir.join("hist_radius.tsv"), pdf_radius)?;
    fs::write(args.dir.join("analyze.tsv"), table)?;
    println!("re-derived histograms for {found} record(s) in {}", args.dir.display());
    Ok(ExitCode::SUCCESS)
}
