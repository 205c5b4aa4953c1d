//! Per-trajectory run summaries: total duration in Bohr times and seconds,
//! orbit counts (nominal Bohr periods and actual perihelion passages),
//! damping-time count and the ionisation verdict.

use serde::{Deserialize, Serialize};

use sed_core::dynamics::PhysicalConstants;
use sed_core::integrator::{StopReason, TrajectoryRecord};

use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub index: usize,
    pub seed: u64,
    /// Total simulated span in Bohr times.
    pub t_total: f64,
    /// The same span in seconds, via `tau0(Z)`.
    pub t_total_seconds: f64,
    /// `t_total / P0`: duration in Bohr periods. An actual orbit is slower
    /// than `P0` only when `R > 2`, so the two orbit counts are reported
    /// side by side, never conflated.
    pub n_orbit_nominal: f64,
    /// Perihelion passages actually observed.
    pub n_orbit_actual: u64,
    /// Duration in damping times `t_damp = 1/beta^2`.
    pub n_damp: f64,
    pub outcome: StopReason,
    pub ionisation_time: Option<f64>,
    /// Time-weighted mean eccentricity over the pre-ionisation span.
    pub mean_eps: Option<f64>,
    pub precision_audit_ratio: Option<f64>,
    pub max_shift_magnitude: f64,
}

impl RunSummary {
    /// Fill the derived duration bookkeeping shared by the streaming and
    /// record-based paths.
    #[allow(clippy::too_many_arguments)]
    pub fn derive(
        index: usize,
        seed: u64,
        constants: &PhysicalConstants,
        beta: f64,
        t_total: f64,
        n_orbit_actual: u64,
        outcome: StopReason,
        ionisation_time: Option<f64>,
        mean_eps: Option<f64>,
        precision_audit_ratio: Option<f64>,
        max_shift_magnitude: f64,
    ) -> Self {
        RunSummary {
            index,
            seed,
            t_total,
            t_total_seconds: t_total * constants.bohr_time_seconds(),
            n_orbit_nominal: t_total / (2.0 * PI),
            n_orbit_actual,
            n_damp: t_total * beta * beta,
            outcome,
            ionisation_time,
            mean_eps,
            precision_audit_ratio,
            max_shift_magnitude,
        }
    }

    pub fn tsv_header() -> &'static str {
        "index\tseed\toutcome\tt_total\tt_seconds\tn_orbit_nominal\tn_orbit_actual\tn_damp\tionisation_t\tmean_eps\taudit_ratio\tmax_shift"
    }

    pub fn tsv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        format!(
            "{}\t{}\t{:?}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.index,
            self.seed,
            self.outcome,
            self.t_total,
            self.t_total_seconds,
            self.n_orbit_nominal,
            self.n_orbit_actual,
            self.n_damp,
            opt(self.ionisation_time),
            opt(self.mean_eps),
            opt(self.precision_audit_ratio),
            self.max_shift_magnitude,
        )
    }
}

/// Time-weighted mean eccentricity of the samples strictly before `cut`.
pub fn mean_eps_before(samples: &[sed_core::integrator::Sample], cut: f64) -> Option<f64> {
    let mut weight = 0.0;
    let mut acc = 0.0;
    let mut prev_t: Option<f64> = None;
    for s in samples {
        if s.t >= cut {
            break;
        }
        if let Some(p) = prev_t {
            let dt = s.t - p;
            acc += s.eps * dt;
            weight += dt;
        }
        prev_t = Some(s.t);
    }
    (weight > 0.0).then(|| acc / weight)
}

/// Summarize a complete in-memory record.
pub fn summarize(
    record: &TrajectoryRecord,
    constants: &PhysicalConstants,
    beta: f64,
    index: usize,
    seed: u64,
) -> RunSummary {
    let ionisation_time = record.ionisation_time();
    let cut = ionisation_time.unwrap_or(f64::INFINITY);
    RunSummary::derive(
        index,
        seed,
        constants,
        beta,
        record.t_final,
        record.orbit_count,
        record.outcome,
        ionisation_time,
        mean_eps_before(&record.samples, cut),
        record.precision_audit_ratio,
        record.max_shift_magnitude,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn z3_duration_matches_quoted_seconds() {
        // 1.2e7 Bohr times at Z = 3 is 3.2e-11 s, and 1.9e6 Bohr periods.
        let constants = PhysicalConstants::hydrogen_like(3);
        let summary = RunSummary::derive(
            0,
            0,
            &constants,
            constants.beta(),
            1.2e7,
            0,
            StopReason::TimeLimit,
            None,
            None,
            None,
            0.0,
        );
        assert_relative_eq!(summary.t_total_seconds, 3.2e-11, max_relative = 0.02);
        assert_relative_eq!(summary.n_orbit_nominal, 1.9e6, max_relative = 0.01);
        // About 28 damping times: t_damp = 1/beta^2 = 4.3e5 Bohr times.
        assert_relative_eq!(summary.n_damp, 28.0, max_relative = 0.02);
        assert_relative_eq!(constants.damping_time(), 4.3e5, max_relative = 0.01);
    }

    #[test]
    fn empty_record_zero_durations() {
        let record = TrajectoryRecord {
            samples: vec![],
            events: vec![],
            outcome: StopReason::TimeLimit,
            orbit_count: 0,
            t_final: 0.0,
            stencil_node_evals: 0,
            precision_audit_ratio: None,
            max_shift_magnitude: 0.0,
        };
        let constants = PhysicalConstants::hydrogen_like(1);
        let s = summarize(&record, &constants, constants.beta(), 0, 0);
        assert_eq!(s.t_total, 0.0);
        assert_eq!(s.t_total_seconds, 0.0);
        assert_eq!(s.n_damp, 0.0);
        assert!(s.mean_eps.is_none());
    }
}
