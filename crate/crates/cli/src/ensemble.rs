//! Ensemble orchestration: independent trajectory workers with derived
//! seeds, streamed records, pooled histograms with conjecture overlays, and
//! per-trajectory summaries.
//!
//! Pooled histograms exclude everything from the ionisation moment onward;
//! the full record stays on disk. A sliding buffer one ionisation dwell long
//! delays pooling until a sample is known to predate any ionisation flag.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use sed_core::conjecture::{pdf_eccentricity, pdf_energy, pdf_radius};
use sed_core::integrator::{Sample, StopReason, Trajectory};

use crate::checkpoint::{checkpoint_path, Checkpoint};
use crate::config::{ResolvedConfig, RunConfig};
use crate::records::{RecordError, RecordWriter};
use crate::summary::RunSummary;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Trajectory(#[from] sed_core::integrator::TrajectoryError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

/// Fixed-range streaming histogram.
#[derive(Debug, Clone)]
pub struct StreamingHist {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl StreamingHist {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self { lo, hi, counts: vec![0; bins] }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        if x >= self.lo && x < self.hi {
            let bins = self.counts.len();
            let b = ((x - self.lo) / (self.hi - self.lo) * bins as f64) as usize;
            self.counts[b.min(bins - 1)] += 1;
        }
    }

    pub fn merge(&mut self, other: &StreamingHist) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Write `bin_lo  center  bin_hi  count  density  pdf` rows; `pdf` is
    /// the conjecture overlay evaluated at the bin center.
    pub fn write_tsv(&self, path: &Path, pdf: impl Fn(f64) -> f64) -> std::io::Result<()> {
        let mut out = String::from("bin_lo\tcenter\tbin_hi\tcount\tdensity\tpdf\n");
        let total = self.total().max(1) as f64;
        let w = self.bin_width();
        for (i, &c) in self.counts.iter().enumerate() {
            let lo = self.lo + i as f64 * w;
            let center = lo + 0.5 * w;
            let density = c as f64 / (total * w);
            out.push_str(&format!(
                "{lo}\t{center}\t{}\t{c}\t{density}\t{}\n",
                lo + w,
                pdf(center)
            ));
        }
        fs::write(path, out)
    }
}

/// Histograms of the pooled pre-ionisation samples plus the time-weighted
/// eccentricity mean.
pub struct PoolStats {
    pub energy: StreamingHist,
    pub eccentricity: StreamingHist,
    pub radius: StreamingHist,
    eps_weighted: f64,
    eps_weight: f64,
    buffer: VecDeque<Sample>,
    dwell: f64,
    prev_t: Option<f64>,
}

impl PoolStats {
    pub fn new(bins: usize, dwell: f64) -> Self {
        Self {
            energy: StreamingHist::new(-2.0, 0.0, bins),
            eccentricity: StreamingHist::new(0.0, 1.0, bins),
            radius: StreamingHist::new(0.0, 8.0, bins),
            eps_weighted: 0.0,
            eps_weight: 0.0,
            buffer: VecDeque::new(),
            dwell,
            prev_t: None,
        }
    }

    fn admit(&mut self, s: &Sample) {
        self.energy.add(s.energy);
        self.eccentricity.add(s.eps);
        self.radius.add(s.radius);
        if let Some(p) = self.prev_t {
            let dt = s.t - p;
            self.eps_weighted += s.eps * dt;
            self.eps_weight += dt;
        }
        self.prev_t = Some(s.t);
    }

    /// Feed one sample; it is pooled once it is older than the ionisation
    /// dwell (and therefore cannot postdate an eventual ionisation flag).
    pub fn push(&mut self, s: Sample) {
        self.buffer.push_back(s);
        let horizon = s.t - self.dwell;
        while let Some(front) = self.buffer.front() {
            if front.t < horizon {
                let f = *front;
                self.buffer.pop_front();
                self.admit(&f);
            } else {
                break;
            }
        }
    }

    /// Flush the trailing buffer: everything for a clean finish, or only the
    /// samples strictly before the ionisation moment.
    pub fn finish(&mut self, ionisation_time: Option<f64>) {
        let cut = ionisation_time.unwrap_or(f64::INFINITY);
        while let Some(front) = self.buffer.pop_front() {
            if front.t < cut {
                self.admit(&front);
            }
        }
    }

    pub fn mean_eps(&self) -> Option<f64> {
        (self.eps_weight > 0.0).then(|| self.eps_weighted / self.eps_weight)
    }

    pub fn merge(&mut self, other: &PoolStats) {
        self.energy.merge(&other.energy);
        self.eccentricity.merge(&other.eccentricity);
        self.radius.merge(&other.radius);
        self.eps_weighted += other.eps_weighted;
        self.eps_weight += other.eps_weight;
    }
}

pub fn trajectory_stem(index: usize) -> String {
    format!("traj_{index:03}")
}

/// Outcome of one worker: summary plus its pooled-statistics partial.
pub struct WorkerResult {
    pub summary: RunSummary,
    pub stats: PoolStats,
}

/// Run one trajectory to completion, streaming records and honoring the
/// checkpoint trigger.
pub fn drive_trajectory(
    cfg: &ResolvedConfig,
    index: usize,
    dir: &Path,
) -> Result<WorkerResult, EnsembleError> {
    let spec = cfg.trajectory_spec(index);
    let mut trajectory = Trajectory::new(spec)?;
    let stem = trajectory_stem(index);
    let mut writer = RecordWriter::create(dir, &stem, cfg.record_format)?;
    let mut stats = PoolStats::new(cfg.histogram_bins, cfg.integrator.ionisation_dwell);
    let mut checkpoint_done = cfg.checkpoint_at_orbit.is_none();
    loop {
        if let Some(sample) = trajectory.step()? {
            writer.write_sample(&sample)?;
            stats.push(sample);
        }
        for event in trajectory.take_events() {
            writer.write_event(&event)?;
        }
        if !checkpoint_done {
            if let Some(at) = cfg.checkpoint_at_orbit {
                if trajectory.cursor().orbit_count >= at {
                    let (samples_bytes, events_bytes) = writer.offsets()?;
                    Checkpoint {
                        config: cfg.raw.clone(),
                        trajectory_index: index,
                        cursor: trajectory.cursor().clone(),
                        samples_bytes,
                        events_bytes,
                        precision_audit_ratio: trajectory.precision_audit_ratio(),
                    }
                    .save(&checkpoint_path(dir, &stem))?;
                    checkpoint_done = true;
                }
            }
        }
        if trajectory.finished().is_some() {
            break;
        }
    }
    writer.offsets()?;
    let outcome = trajectory.finished().expect("finished");
    let ionisation_time = match outcome {
        StopReason::Ionised { at } => Some(at),
        _ => None,
    };
    stats.finish(ionisation_time);
    let summary = RunSummary::derive(
        index,
        cfg.raw.trajectory_seed(index),
        &cfg.constants,
        trajectory.spec().beta(),
        trajectory.cursor().t,
        trajectory.cursor().orbit_count,
        outcome,
        ionisation_time,
        stats.mean_eps(),
        trajectory.precision_audit_ratio(),
        trajectory.cursor().max_shift_magnitude,
    );
    Ok(WorkerResult { summary, stats })
}

/// Continue a checkpointed trajectory to completion, appending bit-exactly
/// to its record files. Pooled statistics are not rebuilt here; re-derive
/// them from the records with `analyze`.
pub fn resume_trajectory(
    checkpoint: &Checkpoint,
    dir: &Path,
) -> Result<RunSummary, EnsembleError> {
    let cfg = checkpoint
        .config
        .resolve()
        .map_err(|e| EnsembleError::Io(std::io::Error::other(e.to_string())))?;
    let index = checkpoint.trajectory_index;
    let spec = cfg.trajectory_spec(index);
    let mut trajectory = Trajectory::from_cursor(spec, checkpoint.cursor.clone())?;
    let stem = trajectory_stem(index);
    let mut writer = RecordWriter::resume(
        dir,
        &stem,
        cfg.record_format,
        checkpoint.samples_bytes,
        checkpoint.events_bytes,
    )?;
    loop {
        if let Some(sample) = trajectory.step()? {
            writer.write_sample(&sample)?;
        }
        for event in trajectory.take_events() {
            writer.write_event(&event)?;
        }
        if trajectory.finished().is_some() {
            break;
        }
    }
    writer.offsets()?;
    let outcome = trajectory.finished().expect("finished");
    let ionisation_time = match outcome {
        StopReason::Ionised { at } => Some(at),
        _ => None,
    };
    Ok(RunSummary::derive(
        index,
        cfg.raw.trajectory_seed(index),
        &cfg.constants,
        trajectory.spec().beta(),
        trajectory.cursor().t,
        trajectory.cursor().orbit_count,
        outcome,
        ionisation_time,
        None,
        checkpoint.precision_audit_ratio,
        trajectory.cursor().max_shift_magnitude,
    ))
}

pub struct EnsembleReport {
    pub summaries: Vec<RunSummary>,
    pub failures: Vec<(usize, String)>,
    pub output_dir: PathBuf,
}

impl EnsembleReport {
    pub fn all_ionised(&self) -> bool {
        !self.summaries.is_empty()
            && self.summaries.iter().all(|s| matches!(s.outcome, StopReason::Ionised { .. }))
    }

    pub fn any_numerical_abort(&self) -> bool {
        self.summaries.iter().any(|s| {
            matches!(
                s.outcome,
                StopReason::SingularityAbort { .. } | StopReason::NonFiniteAbort { .. }
            )
        }) || !self.failures.is_empty()
    }
}

/// Echo of the resolved configuration with every default made explicit.
pub fn full_config(cfg: &ResolvedConfig) -> RunConfig {
    let mut raw = cfg.raw.clone();
    raw.alpha = Some(cfg.constants.alpha);
    raw.max_mode = Some(cfg.grid.max_mode);
    raw.cutoff_scale = Some(cfg.cutoff_scale);
    raw.formulation = Some(cfg.formulation);
    raw.steps_per_orbit = Some(cfg.integrator.steps_per_orbit);
    raw.field_refreshes_per_max_period = Some(cfg.integrator.field_refreshes_per_max_period);
    raw.energy_floor = Some(cfg.integrator.energy_floor);
    raw.ionisation_threshold = Some(cfg.integrator.ionisation_threshold);
    raw.ionisation_dwell = Some(cfg.integrator.ionisation_dwell);
    raw.guard_radius = Some(cfg.integrator.guard_radius);
    raw.sample_stride = Some(cfg.integrator.sample_stride);
    raw.t_max = Some(cfg.t_max);
    raw.ensemble_size = Some(cfg.ensemble_size);
    raw.record_format = Some(cfg.record_format);
    raw.output_dir = Some(cfg.output_dir.clone());
    raw.histogram_bins = Some(cfg.histogram_bins);
    if let sed_core::integrator::CutoffPolicy::Moving { update_increment, .. } = cfg.cutoff {
        raw.update_increment = Some(update_increment);
    }
    raw
}

/// Write pooled histograms and the summary table into `dir`.
pub fn write_reports(
    dir: &Path,
    pooled: &PoolStats,
    summaries: &[RunSummary],
) -> std::io::Result<()> {
    pooled.energy.write_tsv(&dir.join("hist_energy.tsv"), pdf_energy)?;
    pooled.eccentricity.write_tsv(&dir.join("hist_eccentricity.tsv"), pdf_eccentricity)?;
    pooled.radius.write_tsv(&dir.join("hist_radius.tsv"), pdf_radius)?;
    let mut table = String::from(RunSummary::tsv_header());
    table.push('\n');
    for s in summaries {
        table.push_str(&s.tsv_row());
        table.push('\n');
    }
    fs::write(dir.join("summary.tsv"), table)
}

/// Run the whole ensemble: one worker per trajectory, records on disk,
/// pooled histograms with conjecture overlays, per-trajectory summaries.
///
/// Worker failures are collected per trajectory; completed trajectories are
/// reported regardless.
pub fn run_ensemble(cfg: &ResolvedConfig) -> Result<EnsembleReport, EnsembleError> {
    let dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), full_config(cfg).emit())?;

    let results: Vec<(usize, Result<WorkerResult, EnsembleError>)> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|index| (index, drive_trajectory(cfg, index, &dir)))
        .collect();

    let mut pooled = PoolStats::new(cfg.histogram_bins, cfg.integrator.ionisation_dwell);
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (index, result) in results {
        match result {
            Ok(worker) => {
                pooled.merge(&worker.stats);
                summaries.push(worker.summary);
            }
            Err(e) => failures.push((index, e.to_string())),
        }
    }
    write_reports(&dir, &pooled, &summaries)?;
    let mut failure_log = String::new();
    for (index, message) in &failures {
        failure_log.push_str(&format!("{index}\t{message}\n"));
    }
    if !failure_log.is_empty() {
        fs::write(dir.join("failures.tsv"), failure_log)?;
    }
    std::io::stdout().flush().ok();
    Ok(EnsembleReport { summaries, failures, output_dir: dir })
}
