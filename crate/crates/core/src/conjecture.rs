//! Conjectured stationary phase-space density of the driven ground state,
//! its marginals, and the initial-condition sampler.
//!
//! The density depends on the conserved quantities only:
//! `f(E, L) = (2/pi^3) L R^3 exp(-2R)` with `R = -1/E`. Marginalizing over
//! momenta at fixed position reproduces the quantum ground-state density
//! `exp(-2r)/pi`; the scalar marginals are
//!
//! ```text
//! P_E(E)      = (4/3) |E|^-6 exp(-2/|E|)      E < 0
//! P_eps(eps)  = 3 eps sqrt(1 - eps^2)         0 <= eps < 1
//! P_kappa(k)  = 3 k^2                         0 < k <= 1
//! P_r(r)      = 4 r^2 exp(-2r)                r >= 0
//! ```
//!
//! The distribution of the instantaneous momentum magnitude vanishes at
//! `p = 0` (unlike the statistical-momentum distribution obtained from the
//! wavefunction, which is maximal there) and falls off as `p^-9`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{orbit_elements, OrbitElements, PhysicalState};
use crate::vec3::Vec3;

use std::f64::consts::PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConjectureError {
    #[error("uniform draw {0} outside the open interval (0, 1)")]
    BadUniform(f64),
    #[error("root solve for R did not converge (u1 = {u1}, bracket [{lo}, {hi}])")]
    RootNotBracketed { u1: f64, lo: f64, hi: f64 },
    #[error("empty sample set")]
    EmptySamples,
}

/// Largest angular momentum at energy `E`: `L_max = sqrt(R/2)`.
pub fn l_max(energy: f64) -> Option<f64> {
    (energy < 0.0).then(|| (-0.5 / energy).sqrt())
}

/// Phase-space density `f(E, L) = (2/pi^3) L R^3 exp(-2R)`.
///
/// Returns 0 outside the bound domain (`E >= 0`, `L < 0` or `L > L_max`).
pub fn density_f(energy: f64, l: f64) -> f64 {
    density_f_checked(energy, l).0
}

/// As [`density_f`], also reporting whether `(E, L)` was inside the domain.
pub fn density_f_checked(energy: f64, l: f64) -> (f64, bool) {
    let Some(lm) = l_max(energy) else {
        return (0.0, false);
    };
    if !(0.0..=1.0).contains(&(l / lm)) {
        return (0.0, false);
    }
    let r_major = -1.0 / energy;
    ((2.0 / (PI * PI * PI)) * l * r_major.powi(3) * (-2.0 * r_major).exp(), true)
}

/// Joint density of `(E, L)`: `P_EL = 8 sqrt(2) L^2 |E|^(-9/2) exp(-2/|E|)`
/// on `0 <= L <= L_max(E)`.
pub fn pdf_energy_l(energy: f64, l: f64) -> f64 {
    match l_max(energy) {
        Some(lm) if (0.0..=lm).contains(&l) => {
            8.0 * 2.0f64.sqrt() * l * l * (-energy).powf(-4.5) * (2.0 / energy).exp()
        }
        _ => 0.0,
    }
}

/// Energy marginal `P_E(E) = (4/3) |E|^-6 exp(-2/|E|)` for `E < 0`.
pub fn pdf_energy(energy: f64) -> f64 {
    if energy >= 0.0 {
        return 0.0;
    }
    (4.0 / 3.0) * (-energy).powi(-6) * (2.0 / energy).exp()
}

/// CDF of the energy marginal.
pub fn cdf_energy(energy: f64) -> f64 {
    if energy >= 0.0 {
        return 1.0;
    }
    cdf_r_major(-1.0 / energy)
}

/// Eccentricity marginal `P_eps = 3 eps sqrt(1 - eps^2)` on `[0, 1)`.
pub fn pdf_eccentricity(eps: f64) -> f64 {
    if !(0.0..1.0).contains(&eps) {
        return 0.0;
    }
    3.0 * eps * (1.0 - eps * eps).sqrt()
}

pub fn cdf_eccentricity(eps: f64) -> f64 {
    if eps < 0.0 {
        0.0
    } else if eps >= 1.0 {
        1.0
    } else {
        1.0 - (1.0 - eps * eps).powf(1.5)
    }
}

/// Normalized angular momentum marginal `P_kappa = 3 kappa^2` on `(0, 1]`.
pub fn pdf_kappa(kappa: f64) -> f64 {
    if !(0.0..=1.0).contains(&kappa) {
        return 0.0;
    }
    3.0 * kappa * kappa
}

pub fn cdf_kappa(kappa: f64) -> f64 {
    kappa.clamp(0.0, 1.0).powi(3)
}

/// Radial density `P_r(r) = 4 r^2 exp(-2r)`.
pub fn pdf_radius(r: f64) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    4.0 * r * r * (-2.0 * r).exp()
}

pub fn cdf_radius(r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    1.0 - (-2.0 * r).exp() * (1.0 + 2.0 * r * (1.0 + r))
}

/// Density of the inverse energy `R = -1/E`: `P_R = (4/3) R^4 exp(-2R)`.
pub fn pdf_r_major(r_major: f64) -> f64 {
    if r_major < 0.0 {
        return 0.0;
    }
    (4.0 / 3.0) * r_major.powi(4) * (-2.0 * r_major).exp()
}

/// Survival function of `R`:
/// `S(R) = (1 + 2R + 2R^2 + 4R^3/3 + 2R^4/3) exp(-2R)`.
pub fn survival_r_major(r_major: f64) -> f64 {
    let r = r_major;
    (1.0 + 2.0 * r + 2.0 * r * r + (4.0 / 3.0) * r.powi(3) + (2.0 / 3.0) * r.powi(4))
        * (-2.0 * r).exp()
}

pub fn cdf_r_major(r_major: f64) -> f64 {
    if r_major <= 0.0 {
        0.0
    } else {
        1.0 - survival_r_major(r_major)
    }
}

/// Momentum-magnitude density
/// `P_p(p) = (2p/pi) int_0^inf dR R^6 exp(-2R) / (1 + p^2 R / 2)^5`,
/// a density over 3-d momentum space (normalized with the `4 pi p^2`
/// measure). Limits: `P_p/p -> 45/(4 pi)` as `p -> 0` and
/// `P_p p^9 -> 16/pi` as `p -> infinity`.
pub fn pdf_momentum(p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    let p2h = 0.5 * p * p;
    let integrand = |r: f64| r.powi(6) * (-2.0 * r).exp() / (1.0 + p2h * r).powi(5);
    let integral = quad::adaptive_simpson(&integrand, 0.0, 60.0, 1e-12);
    2.0 * p / PI * integral
}

/// Bounded-domain root solve of `survival_r_major(R) = u1`.
///
/// The survival function is strictly decreasing, so bisection on
/// `[1e-8, 50]` brackets the root for every representable `u1` in `(0, 1)`;
/// a few Newton steps with `S'(R) = -(4/3) R^4 exp(-2R)` polish it.
pub fn solve_r_major(u1: f64) -> Result<f64, ConjectureError> {
    if !(u1 > 0.0 && u1 < 1.0) {
        return Err(ConjectureError::BadUniform(u1));
    }
    let (mut lo, mut hi) = (1e-8, 50.0);
    if !(survival_r_major(lo) >= u1 && survival_r_major(hi) <= u1) {
        return Err(ConjectureError::RootNotBracketed { u1, lo, hi });
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if survival_r_major(mid) >= u1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut r = 0.5 * (lo + hi);
    for _ in 0..3 {
        let deriv = -(4.0 / 3.0) * r.powi(4) * (-2.0 * r).exp();
        if deriv == 0.0 {
            break;
        }
        let step = (survival_r_major(r) - u1) / deriv;
        let candidate = r - step;
        if candidate.is_finite() && candidate > lo - (hi - lo) && candidate < hi + (hi - lo) {
            r = candidate.clamp(1e-10, 60.0);
        }
    }
    Ok(r)
}

/// Scalar orbit parameters produced by one `(u1, u2)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledOrbit {
    pub r_major: f64,
    pub kappa: f64,
    pub eps: f64,
    pub energy: f64,
    pub l: f64,
}

/// Map two uniforms to orbit scalars: `R` from the survival-function solve,
/// `kappa = u2^(1/3)`, `eps = sqrt(1 - kappa^2)`, `E = -1/R`,
/// `L = kappa sqrt(R/2)`.
pub fn orbit_from_uniforms(u1: f64, u2: f64) -> Result<SampledOrbit, ConjectureError> {
    if !(u2 > 0.0 && u2 < 1.0) {
        return Err(ConjectureError::BadUniform(u2));
    }
    let r_major = solve_r_major(u1)?;
    let kappa = u2.cbrt();
    let eps = (1.0 - kappa * kappa).max(0.0).sqrt();
    Ok(SampledOrbit {
        r_major,
        kappa,
        eps,
        energy: -1.0 / r_major,
        l: kappa * (0.5 * r_major).sqrt(),
    })
}

/// A sampled initial condition: orbit scalars, realized phase-space point
/// and its conserved elements.
#[derive(Debug, Clone, Copy)]
pub struct InitialConditions {
    pub orbit: SampledOrbit,
    pub phys: PhysicalState,
    pub elements: OrbitElements,
    pub start_at_perihelion: bool,
}

/// Realize a sampled orbit as a phase-space point.
///
/// The RNG supplies the orientation (angular-momentum direction uniform on
/// the sphere, perihelion direction uniform in the orthogonal plane) and a
/// fair coin for starting at perihelion or aphelion.
pub fn sample_initial_conditions(
    u1: f64,
    u2: f64,
    rng: &mut impl Rng,
) -> Result<InitialConditions, ConjectureError> {
    let orbit = orbit_from_uniforms(u1, u2)?;
    // L direction uniform on the sphere.
    let cos_theta: f64 = rng.random_range(-1.0..1.0);
    let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let e_l = Vec3::new(sin_theta * phi.cos(), sin_theta * phi.sin(), cos_theta);
    // Orthonormal pair spanning the orbital plane.
    let helper =
        if e_l.z.abs() < 0.9 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
    let e1 = e_l.cross(helper).unit();
    let e2 = e_l.cross(e1);
    let psi: f64 = rng.random_range(0.0..2.0 * PI);
    let e_peri = psi.cos() * e1 + psi.sin() * e2;
    let e_vel = e_l.cross(e_peri);
    let start_at_perihelion = rng.random_bool(0.5);
    let (radius, dir, vel_dir) = if start_at_perihelion {
        (0.5 * orbit.r_major * (1.0 - orbit.eps), e_peri, e_vel)
    } else {
        (0.5 * orbit.r_major * (1.0 + orbit.eps), -1.0 * e_peri, -1.0 * e_vel)
    };
    let r = radius * dir;
    let v = (orbit.l / radius) * vel_dir;
    let phys = PhysicalState { r, v };
    let elements = orbit_elements(r, v);
    Ok(InitialConditions { orbit, phys, elements, start_at_perihelion })
}

/// Draw `(u1, u2)` from the RNG and realize the orbit.
pub fn sample_with_rng(rng: &mut impl Rng) -> Result<InitialConditions, ConjectureError> {
    // Open-interval uniforms: 0 and 1 are rejected by the domain checks.
    let u1 = loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            break u;
        }
    };
    let u2 = loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            break u;
        }
    };
    sample_initial_conditions(u1, u2, rng)
}

/// A scalar distribution target: closed-form pdf and cdf.
#[derive(Clone, Copy)]
pub struct DistTarget {
    pub name: &'static str,
    pub pdf: fn(f64) -> f64,
    pub cdf: fn(f64) -> f64,
}

impl DistTarget {
    pub fn r_major() -> Self {
        Self { name: "R", pdf: pdf_r_major, cdf: cdf_r_major }
    }
    pub fn kappa() -> Self {
        Self { name: "kappa", pdf: pdf_kappa, cdf: cdf_kappa }
    }
    pub fn eccentricity() -> Self {
        Self { name: "eps", pdf: pdf_eccentricity, cdf: cdf_eccentricity }
    }
    pub fn energy() -> Self {
        Self { name: "E", pdf: pdf_energy, cdf: cdf_energy }
    }
    pub fn radius() -> Self {
        Self { name: "r", pdf: pdf_radius, cdf: cdf_radius }
    }
}

/// Kolmogorov-Smirnov statistic `sup |F_emp - F|` of a sample against a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS sample"));
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        sup = sup.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    sup
}

/// Kolmogorov distribution tail `Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic KS critical value at significance `alpha` for sample size `n`:
/// the statistic below which the hypothesis is retained.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    // Solve Q(lambda) = alpha by bisection; critical D = lambda / sqrt(n).
    let (mut lo, mut hi) = (0.3, 4.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (n as f64).sqrt()
}

/// Fixed-width histogram over `[lo, hi)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub total_in_range: u64,
    pub total: u64,
}

impl Histogram {
    pub fn build(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        assert!(bins >= 2, "need at least 2 bins");
        assert!(hi > lo);
        let mut counts = vec![0u64; bins];
        let mut in_range = 0u64;
        let scale = bins as f64 / (hi - lo);
        for &x in samples {
            if x >= lo && x < hi {
                let b = ((x - lo) * scale) as usize;
                counts[b.min(bins - 1)] += 1;
                in_range += 1;
            }
        }
        Self { lo, hi, counts, total_in_range: in_range, total: samples.len() as u64 }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width()
    }

    /// Heights normalized so the histogram integrates to 1 over its range.
    pub fn normalized_heights(&self) -> Vec<f64> {
        let norm = 1.0 / (self.total_in_range.max(1) as f64 * self.bin_width());
        self.counts.iter().map(|&c| c as f64 * norm).collect()
    }
}

/// Histogram + KS goodness-of-fit of a sample against a target law.
#[derive(Debug, Clone)]
pub struct GofReport {
    pub target: &'static str,
    pub histogram: Histogram,
    pub ks_statistic: f64,
    pub n_samples: usize,
}

impl GofReport {
    /// True when the KS statistic is below the critical value at `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.ks_statistic < ks_critical_value(self.n_samples, alpha)
    }
}

/// Compare a sample against a closed-form target: normalized histogram plus
/// the KS statistic against the target CDF.
pub fn histogram_compare(
    samples: &[f64],
    target: &DistTarget,
    bins: usize,
    range: (f64, f64),
) -> Result<GofReport, ConjectureError> {
    if samples.is_empty() {
        return Err(ConjectureError::EmptySamples);
    }
    let histogram = Histogram::build(samples, bins, range.0, range.1);
    Ok(GofReport {
        target: target.name,
        histogram,
        ks_statistic: ks_statistic(samples, target.cdf),
        n_samples: samples.len(),
    })
}

pub(crate) mod quad {
    /// Adaptive Simpson quadrature with Richardson correction.
    pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
        // Coarse pass to set the absolute tolerance scale.
        let n0 = 64;
        let h = (b - a) / n0 as f64;
        let mut coarse = f(a) + f(b);
        for i in 1..n0 {
            let x = a + i as f64 * h;
            coarse += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
        }
        coarse *= h / 3.0;
        let tol = coarse.abs() * rel_tol + 1e-300;
        let fa = f(a);
        let fb = f(b);
        let m = 0.5 * (a + b);
        let fm = f(m);
        simpson_rec(f, a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, 60)
    }

    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }

    #[allow(clippy::too_many_arguments)]
    fn simpson_rec(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}
