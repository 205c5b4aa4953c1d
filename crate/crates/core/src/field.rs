//! Spectral synthesis of the stochastic driving fields.
//!
//! The vacuum field is represented on a uniform frequency grid
//! `omega_n = n/N` with two independent standard-Gaussian 3-vectors per mode.
//! Three primitives share the same coefficients:
//!
//! ```text
//! E(t) = sum_n sqrt(dw w^3/pi) g_n (-A_n cos w t + B_n sin w t)
//! A(t) = sum_n sqrt(dw w  /pi) g_n ( A_n sin w t + B_n cos w t)
//! C(t) = sum_n sqrt(dw/(pi w)) g_n (-A_n cos w t + B_n sin w t)
//! ```
//!
//! with `g_n = exp(-cutoff_scale * w_n / 2)`. The phases are chosen so that
//! `C` is exactly the antiderivative of `A` and `E = -dA/dt`, which the
//! grand-canonical formulations rely on. Mode sums are evaluated through the
//! chunked tree reduction in [`crate::reduction`].

use std::io::{self, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::reduction::{chunked_sum_with, ReductionPlan};
use crate::vec3::Vec3;

/// Exact sincos re-anchor interval inside the mode loop. The phase recurrence
/// drifts by O(interval * eps), which must stay below the 1e-12 split-sum
/// linearity contract.
const RESYNC: usize = 64;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FieldError {
    #[error("mesh density N must be at least 1")]
    BadMeshDensity,
    #[error("max_mode must be at least 1")]
    EmptySpectrum,
    #[error("cutoff scale must be finite and non-negative")]
    BadCutoffScale,
    #[error("window bounds ({lo}, {hi}) invalid for spectrum of {max_mode} modes")]
    BadWindow { lo: usize, hi: usize, max_mode: usize },
    #[error("switch time {t} precedes previous switch at {last}")]
    NonMonotonicSwitch { t: f64, last: f64 },
}

/// Uniform frequency grid: `omega_n = n / N`, spacing `1/N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    /// Mesh density `N`; the grid spacing is `1/N` Bohr angular frequencies.
    pub mesh_density: u64,
    /// Largest retained mode index.
    pub max_mode: usize,
}

impl FrequencyGrid {
    pub fn new(mesh_density: u64, max_mode: usize) -> Result<Self, FieldError> {
        if mesh_density < 1 {
            return Err(FieldError::BadMeshDensity);
        }
        if max_mode < 1 {
            return Err(FieldError::EmptySpectrum);
        }
        Ok(Self { mesh_density, max_mode })
    }

    #[inline]
    pub fn delta_omega(&self) -> f64 {
        1.0 / self.mesh_density as f64
    }

    /// `omega_n = n / N` for `1 <= n <= max_mode`.
    #[inline]
    pub fn omega(&self, n: usize) -> f64 {
        debug_assert!(n >= 1 && n <= self.max_mode);
        n as f64 / self.mesh_density as f64
    }

    /// Highest retained frequency.
    #[inline]
    pub fn omega_max(&self) -> f64 {
        self.omega(self.max_mode)
    }
}

/// Inclusive range of 1-based mode indices. `lo > hi` denotes the empty range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeRange {
    pub lo: usize,
    pub hi: usize,
}

impl ModeRange {
    /// Non-empty range; mode indices start at 1 (the `n = 0` term has zero
    /// `E` amplitude and a divergent `C` amplitude, so it is never part of
    /// the spectrum).
    pub fn new(lo: usize, hi: usize) -> Self {
        assert!(lo >= 1, "mode indices start at 1");
        assert!(lo <= hi, "empty range; use ModeRange::empty()");
        Self { lo, hi }
    }

    pub const fn empty() -> Self {
        Self { lo: 1, hi: 0 }
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    #[inline]
    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.hi - self.lo + 1
        }
    }
}

/// Which spectral primitive to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldChannel {
    E,
    A,
    C,
}

/// Frozen random spectral coefficients defining one noise sample path.
///
/// Immutable after construction; evaluation methods are pure reads and safe
/// to call concurrently.
#[derive(Debug, Clone)]
pub struct FieldRealization {
    grid: FrequencyGrid,
    cutoff_scale: f64,
    seed: u64,
    /// Per-component coefficient arrays, indexed by `n - 1`.
    coeff_a: [Vec<f64>; 3],
    coeff_b: [Vec<f64>; 3],
    /// Cached per-mode amplitudes (square-root factors times cutoff).
    amp_e: Vec<f64>,
    amp_a: Vec<f64>,
    amp_c: Vec<f64>,
    plan: ReductionPlan,
}

/// Draw the Gaussian coefficients and cache the per-mode amplitudes.
///
/// Coefficients are drawn from a ChaCha12 stream seeded with `seed`, in
/// ascending mode order as `(A_x, A_y, A_z, B_x, B_y, B_z)` per mode, so a
/// realization is reproducible from `(seed, grid, cutoff_scale)` alone.
pub fn build_field(
    seed: u64,
    grid: FrequencyGrid,
    cutoff_scale: f64,
) -> Result<FieldRealization, FieldError> {
    if !(cutoff_scale.is_finite() && cutoff_scale >= 0.0) {
        return Err(FieldError::BadCutoffScale);
    }
    let m = grid.max_mode;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut coeff_a = [Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m)];
    let mut coeff_b = [Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m)];
    for _ in 0..m {
        for lane in coeff_a.iter_mut() {
            lane.push(rng.sample::<f64, _>(StandardNormal));
        }
        for lane in coeff_b.iter_mut() {
            lane.push(rng.sample::<f64, _>(StandardNormal));
        }
    }
    let dw = grid.delta_omega();
    let mut amp_e = Vec::with_capacity(m);
    let mut amp_a = Vec::with_capacity(m);
    let mut amp_c = Vec::with_capacity(m);
    for n in 1..=m {
        let w = grid.omega(n);
        // The cutoff is applied to all three primitives so the derivative
        // relations between them hold mode by mode.
        let cut = (-0.5 * cutoff_scale * w).exp();
        amp_e.push((dw * w * w * w / std::f64::consts::PI).sqrt() * cut);
        amp_a.push((dw * w / std::f64::consts::PI).sqrt() * cut);
        amp_c.push((dw / (std::f64::consts::PI * w)).sqrt() * cut);
    }
    Ok(FieldRealization {
        grid,
        cutoff_scale,
        seed,
        coeff_a,
        coeff_b,
        amp_e,
        amp_a,
        amp_c,
        plan: ReductionPlan::default(),
    })
}

impl FieldRealization {
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cutoff_scale(&self) -> f64 {
        self.cutoff_scale
    }

    pub fn reduction_plan(&self) -> &ReductionPlan {
        &self.plan
    }

    pub fn set_reduction_plan(&mut self, plan: ReductionPlan) {
        plan.validate().expect("invalid reduction plan");
        self.plan = plan;
    }

    /// Full retained spectrum `[1, max_mode]`.
    pub fn full_range(&self) -> ModeRange {
        ModeRange::new(1, self.grid.max_mode)
    }

    pub fn coeff_a(&self, axis: usize, n: usize) -> f64 {
        self.coeff_a[axis][n - 1]
    }

    pub fn coeff_b(&self, axis: usize, n: usize) -> f64 {
        self.coeff_b[axis][n - 1]
    }

    pub fn amplitude(&self, channel: FieldChannel, n: usize) -> f64 {
        match channel {
            FieldChannel::E => self.amp_e[n - 1],
            FieldChannel::A => self.amp_a[n - 1],
            FieldChannel::C => self.amp_c[n - 1],
        }
    }

    /// Zero every coefficient; used to build deterministic single-mode fields.
    pub fn zero_coefficients(&mut self) {
        for axis in 0..3 {
            self.coeff_a[axis].iter_mut().for_each(|v| *v = 0.0);
            self.coeff_b[axis].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Overwrite the coefficients of one mode.
    pub fn set_mode_coeffs(&mut self, n: usize, a: Vec3, b: Vec3) {
        let i = n - 1;
        for (axis, (va, vb)) in
            [(a.x, b.x), (a.y, b.y), (a.z, b.z)].into_iter().enumerate()
        {
            self.coeff_a[axis][i] = va;
            self.coeff_b[axis][i] = vb;
        }
    }

    fn check_range(&self, range: ModeRange) -> Result<(), FieldError> {
        if range.is_empty() {
            return Ok(());
        }
        if range.hi > self.grid.max_mode {
            return Err(FieldError::BadWindow {
                lo: range.lo,
                hi: range.hi,
                max_mode: self.grid.max_mode,
            });
        }
        Ok(())
    }

    /// Windowed sum of one spectral primitive at time `t`.
    ///
    /// The trigonometric phases are generated by a rotation recurrence with
    /// an exact re-anchor every 64 modes, then reduced chunk-wise.
    pub fn eval(&self, channel: FieldChannel, range: ModeRange, t: f64) -> Vec3 {
        self.check_range(range).expect("mode range outside spectrum");
        if range.is_empty() {
            return Vec3::default();
        }
        assert!(t.is_finite(), "field evaluated at non-finite time");
        let amps: &[f64] = match channel {
            FieldChannel::E => &self.amp_e,
            FieldChannel::A => &self.amp_a,
            FieldChannel::C => &self.amp_c,
        };
        // E and C share the (-A cos + B sin) phase; A uses (A sin + B cos).
        let cos_sin_phase = !matches!(channel, FieldChannel::A);
        let step = t / self.grid.mesh_density as f64;
        // Four interleaved phase recurrences, each advancing by 4*step, so
        // the rotation dependency chain does not serialize the mode loop.
        const LANES: usize = 4;
        let (sin_l, cos_l) = (LANES as f64 * step).sin_cos();
        let (ax, ay, az) = (&self.coeff_a[0], &self.coeff_a[1], &self.coeff_a[2]);
        let (bx, by, bz) = (&self.coeff_b[0], &self.coeff_b[1], &self.coeff_b[2]);
        let chunk_size = self.plan.chunk_size;
        let sum = chunked_sum_with(range.len(), &self.plan, |chunk_idx, buf| {
            let first_mode = range.lo + chunk_idx * chunk_size;
            let len = buf.len();
            let mut j = 0usize;
            let mut pa_t = [0.0f64; RESYNC];
            let mut pb_t = [0.0f64; RESYNC];
            while j < len {
                let block = (len - j).min(RESYNC);
                let base = first_mode + j;
                // Pass 1: phase factors for the whole block. Four lanes keep
                // the rotation chains short; exact anchors bound the error.
                let mut cos_lane = [0.0f64; LANES];
                let mut sin_lane = [0.0f64; LANES];
                for lane in 0..LANES.min(block) {
                    let (s0, c0) = ((base + lane) as f64 * step).sin_cos();
                    cos_lane[lane] = c0;
                    sin_lane[lane] = s0;
                }
                let mut jj = 0usize;
                while jj < block {
                    let group = LANES.min(block - jj);
                    for lane in 0..group {
                        let (c, s) = (cos_lane[lane], sin_lane[lane]);
                        let (pa, pb) = if cos_sin_phase { (-c, s) } else { (s, c) };
                        pa_t[jj + lane] = pa;
                        pb_t[jj + lane] = pb;
                        let c_new = c * cos_l - s * sin_l;
                        sin_lane[lane] = s * cos_l + c * sin_l;
                        cos_lane[lane] = c_new;
                    }
                    jj += group;
                }
                // Pass 2: pure fused-multiply sweep over equal-length slices.
                let i0 = base - 1;
                let amp_s = &amps[i0..i0 + block];
                let (ax_s, ay_s, az_s) = (&ax[i0..i0 + block], &ay[i0..i0 + block], &az[i0..i0 + block]);
                let (bx_s, by_s, bz_s) = (&bx[i0..i0 + block], &by[i0..i0 + block], &bz[i0..i0 + block]);
                let out = &mut buf[j..j + block];
                for k in 0..block {
                    let (pa, pb) = (pa_t[k], pb_t[k]);
                    let amp = amp_s[k];
                    out[k] = Vec3::new(
                        amp * (pa * ax_s[k] + pb * bx_s[k]),
                        amp * (pa * ay_s[k] + pb * by_s[k]),
                        amp * (pa * az_s[k] + pb * bz_s[k]),
                    );
                }
                j += block;
            }
            len
        });
        sum.expect("non-empty range")
    }

    /// `E` field over a window (Newton-form drive).
    pub fn eval_e(&self, range: ModeRange, t: f64) -> Vec3 {
        self.eval(FieldChannel::E, range, t)
    }

    /// `A` field over a window.
    pub fn eval_a(&self, range: ModeRange, t: f64) -> Vec3 {
        self.eval(FieldChannel::A, range, t)
    }

    /// `C = integral A dt` over a window.
    pub fn eval_c(&self, range: ModeRange, t: f64) -> Vec3 {
        self.eval(FieldChannel::C, range, t)
    }

    /// Dump the spectrum as delimited text: one record per mode with the
    /// index, frequency, the three cached amplitudes and the six Gaussian
    /// coefficients.
    pub fn write_spectrum(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "n\tomega\tamp_E\tamp_A\tamp_C\tA_x\tA_y\tA_z\tB_x\tB_y\tB_z")?;
        for n in 1..=self.grid.max_mode {
            let i = n - 1;
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                n,
                self.grid.omega(n),
                self.amp_e[i],
                self.amp_a[i],
                self.amp_c[i],
                self.coeff_a[0][i],
                self.coeff_a[1][i],
                self.coeff_a[2][i],
                self.coeff_b[0][i],
                self.coeff_b[1][i],
                self.coeff_b[2][i],
            )?;
        }
        Ok(())
    }
}

/// One entry of a window's switch history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSwitch {
    pub t: f64,
    pub old_bounds: (usize, usize),
    pub new_bounds: (usize, usize),
}

/// Active frequency window `(N1, N2)` plus the accumulated continuity shifts.
///
/// The `A` primitive covers modes `[1, N1]` (empty when `N1 = 0`) and the
/// `C` primitive covers `(N1, N2]`. After window switches the effective
/// fields are `A(t) + delta_a` and `C(t) + delta_c`; the shifts keep the
/// reconstructed position and velocity continuous across each switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldWindow {
    n_low: usize,
    n_high: usize,
    pub delta_a: Vec3,
    pub delta_c: Vec3,
    pub switch_log: Vec<WindowSwitch>,
}

impl FieldWindow {
    /// New window with zero shifts. Requires `n_low < n_high <= max_mode`.
    pub fn new(n_low: usize, n_high: usize, grid: &FrequencyGrid) -> Result<Self, FieldError> {
        if n_low >= n_high || n_high > grid.max_mode {
            return Err(FieldError::BadWindow { lo: n_low, hi: n_high, max_mode: grid.max_mode });
        }
        Ok(Self {
            n_low,
            n_high,
            delta_a: Vec3::default(),
            delta_c: Vec3::default(),
            switch_log: Vec::new(),
        })
    }

    pub fn n_low(&self) -> usize {
        self.n_low
    }

    pub fn n_high(&self) -> usize {
        self.n_high
    }

    /// Mode range of the `A` primitive: `[1, N1]`.
    pub fn a_range(&self) -> ModeRange {
        if self.n_low == 0 {
            ModeRange::empty()
        } else {
            ModeRange::new(1, self.n_low)
        }
    }

    /// Mode range of the `C` primitive: `(N1, N2]`.
    pub fn c_range(&self) -> ModeRange {
        ModeRange::new(self.n_low + 1, self.n_high)
    }

    /// Union of both ranges: `[1, N2]`.
    pub fn full_range(&self) -> ModeRange {
        ModeRange::new(1, self.n_high)
    }

    /// Highest retained frequency of the window.
    pub fn omega_max(&self, grid: &FrequencyGrid) -> f64 {
        grid.omega(self.n_high)
    }

    /// Effective `A` field: windowed sum plus accumulated shift.
    pub fn effective_a(&self, field: &FieldRealization, t: f64) -> Vec3 {
        self.delta_a + field.eval_a(self.a_range(), t)
    }

    /// Effective `C` field: windowed sum plus accumulated shift.
    pub fn effective_c(&self, field: &FieldRealization, t: f64) -> Vec3 {
        self.delta_c + field.eval_c(self.c_range(), t)
    }

    /// Time derivative of the windowed `C` sum (a windowed `A` sum).
    pub fn c_dot(&self, field: &FieldRealization, t: f64) -> Vec3 {
        field.eval_a(self.c_range(), t)
    }

    /// Total effective `A` entering the physical velocity:
    /// `delta_a + A(a_range) + C_dot(c_range)`.
    pub fn a_total(&self, field: &FieldRealization, t: f64) -> Vec3 {
        self.delta_a + field.eval_a(self.full_range(), t)
    }

    /// Switch to new bounds at `t_switch`, accumulating the continuity
    /// shifts
    ///
    /// ```text
    /// delta_a += A(t') - A'(t') + C_dot(t') - C_dot'(t')
    /// delta_c += C(t') - C'(t')
    /// ```
    ///
    /// where the primed sums use the new bounds. The effective position and
    /// velocity of a grand-canonical trajectory are then continuous at
    /// `t_switch`.
    pub fn switched(
        &self,
        field: &FieldRealization,
        t_switch: f64,
        new_low: usize,
        new_high: usize,
    ) -> Result<FieldWindow, FieldError> {
        if let Some(last) = self.switch_log.last() {
            if t_switch < last.t {
                return Err(FieldError::NonMonotonicSwitch { t: t_switch, last: last.t });
            }
        }
        let mut next = FieldWindow::new(new_low, new_high, field.grid())?;
        let a_old = field.eval_a(self.a_range(), t_switch);
        let a_new = field.eval_a(next.a_range(), t_switch);
        let cdot_old = field.eval_a(self.c_range(), t_switch);
        let cdot_new = field.eval_a(next.c_range(), t_switch);
        let c_old = field.eval_c(self.c_range(), t_switch);
        let c_new = field.eval_c(next.c_range(), t_switch);
        next.delta_a = self.delta_a + (a_old - a_new) + (cdot_old - cdot_new);
        next.delta_c = self.delta_c + (c_old - c_new);
        next.switch_log = self.switch_log.clone();
        next.switch_log.push(WindowSwitch {
            t: t_switch,
            old_bounds: (self.n_low, self.n_high),
            new_bounds: (new_low, new_high),
        });
        Ok(next)
    }
}

fn sinh_arg(t: f64, mesh_density: f64, cutoff_scale: f64) -> Complex64 {
    Complex64::new(cutoff_scale, t) / (2.0 * mesh_density)
}

/// Closed-form `E`-field autocorrelation of the discrete spectrum:
/// `C_EE(t) = Re[3 + sinh^2 y] / sinh^4 y / (8 pi N^4)` with
/// `y = (cutoff_scale + i t) / 2N`.
pub fn correlation_ee_theory(t: f64, mesh_density: u64, cutoff_scale: f64) -> f64 {
    let y = sinh_arg(t, mesh_density as f64, cutoff_scale);
    let sh = y.sinh();
    let sh2 = sh * sh;
    let n4 = (mesh_density as f64).powi(4);
    ((Complex64::new(3.0, 0.0) + sh2) / (sh2 * sh2)).re / (8.0 * std::f64::consts::PI * n4)
}

/// Continuum (`N -> infinity`) limit: `C_EE(t) = (6/pi) Re (t - i z)^-4`.
pub fn correlation_ee_limit(t: f64, cutoff_scale: f64) -> f64 {
    let z = Complex64::new(t, -cutoff_scale);
    let z2 = z * z;
    (6.0 / std::f64::consts::PI) * (1.0 / (z2 * z2)).re
}

/// Closed-form `A`-field autocorrelation:
/// `C_AA(t) = Re[1 / sinh^2 y] / (4 pi N^2)`.
pub fn correlation_aa_theory(t: f64, mesh_density: u64, cutoff_scale: f64) -> f64 {
    let y = sinh_arg(t, mesh_density as f64, cutoff_scale);
    let sh = y.sinh();
    let n2 = (mesh_density as f64).powi(2);
    (1.0 / (sh * sh)).re / (4.0 * std::f64::consts::PI * n2)
}

/// Continuum limit of the `A` autocorrelation:
/// `C_AA(t) = (z^2 - t^2) / (pi (z^2 + t^2)^2)`.
pub fn correlation_aa_limit(t: f64, cutoff_scale: f64) -> f64 {
    let z2 = cutoff_scale * cutoff_scale;
    let t2 = t * t;
    (z2 - t2) / (std::f64::consts::PI * (z2 + t2) * (z2 + t2))
}

/// Monte Carlo autocorrelation estimate over an ensemble of realizations.
///
/// Averages `F_a(s + lag) F_a(s)` over realizations, Cartesian components
/// and the supplied time origins. Stationarity makes the origin average a
/// variance reduction, not a bias.
pub fn empirical_correlation(
    fields: &[FieldRealization],
    channel: FieldChannel,
    range: ModeRange,
    lags: &[f64],
    origins: &[f64],
) -> Vec<f64> {
    use rayon::prelude::*;
    let partials: Vec<Vec<f64>> = fields
        .par_iter()
        .map(|field| {
            let mut acc = vec![0.0; lags.len()];
            for &s in origins {
                let base = field.eval(channel, range, s);
                for (k, &lag) in lags.iter().enumerate() {
                    let shifted =
                        if lag == 0.0 { base } else { field.eval(channel, range, s + lag) };
                    acc[k] += shifted.dot(base);
                }
            }
            acc
        })
        .collect();
    let samples = (fields.len() * origins.len() * 3) as f64;
    let mut result = vec![0.0; lags.len()];
    for partial in partials {
        for (k, v) in partial.into_iter().enumerate() {
            result[k] += v;
        }
    }
    for v in &mut result {
        *v /= samples;
    }
    result
}
