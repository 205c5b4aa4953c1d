//! Orbital dynamics in Bohr units: Coulomb force, radiation-reaction damping,
//! conserved quantities, and the interchangeable formulations of the noisy
//! equation of motion.
//!
//! Everything here works in Bohr units: lengths in `a0`, times in `tau0`,
//! so the Kepler part of the dynamics is `r_ddot = -r/r^3`. The damping and
//! noise terms carry the small parameter `beta = sqrt(2/3) Z alpha^(3/2)`.

use serde::{Deserialize, Serialize};

use crate::vec3::Vec3;

/// CODATA fine-structure constant.
pub const ALPHA: f64 = 7.297_352_569_3e-3;

/// hbar in J s.
const HBAR_JS: f64 = 1.054_571_817e-34;

/// Electron rest energy m c^2 in J.
const ELECTRON_REST_ENERGY_J: f64 = 8.187_105_776_9e-14;

/// Nuclear charge plus the derived coupling strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Nuclear charge Z.
    pub z: u32,
    /// Fine-structure constant.
    pub alpha: f64,
}

impl PhysicalConstants {
    pub fn new(z: u32, alpha: f64) -> Self {
        assert!(z >= 1, "nuclear charge must be at least 1");
        assert!(alpha > 0.0, "alpha must be positive");
        Self { z, alpha }
    }

    /// Hydrogen-like atom with the CODATA fine-structure constant.
    pub fn hydrogen_like(z: u32) -> Self {
        Self::new(z, ALPHA)
    }

    /// Damping / noise strength `beta = sqrt(2/3) Z alpha^(3/2)`.
    #[inline]
    pub fn beta(&self) -> f64 {
        (2.0f64 / 3.0).sqrt() * self.z as f64 * self.alpha.powf(1.5)
    }

    /// Exponential spectral cutoff scale `Z^2 alpha^2`.
    #[inline]
    pub fn cutoff_scale(&self) -> f64 {
        let za = self.z as f64 * self.alpha;
        za * za
    }

    /// Bohr time unit `tau0 = hbar / (Z^2 alpha^2 m c^2)` in seconds.
    pub fn bohr_time_seconds(&self) -> f64 {
        let z = self.z as f64;
        HBAR_JS / (z * z * self.alpha * self.alpha * ELECTRON_REST_ENERGY_J)
    }

    /// Damping time `1/beta^2` in Bohr times.
    pub fn damping_time(&self) -> f64 {
        let b = self.beta();
        1.0 / (b * b)
    }
}

/// Coulomb force `f(r) = -r / |r|^3` in Bohr units.
///
/// Panics on `r = 0`; callers must guard the singularity.
#[inline]
pub fn coulomb_force(r: Vec3) -> Vec3 {
    let r2 = r.norm_sq();
    assert!(r2 > 0.0, "Coulomb force evaluated at the origin");
    let inv_r3 = 1.0 / (r2 * r2.sqrt());
    -inv_r3 * r
}

/// Directional derivative of the Coulomb force along `v`:
/// `(grad f) . v = [3 (v.rhat) rhat - v] / r^3`.
#[inline]
pub fn coulomb_force_gradient_dot(r: Vec3, v: Vec3) -> Vec3 {
    let r2 = r.norm_sq();
    assert!(r2 > 0.0, "force gradient evaluated at the origin");
    let inv_r3 = 1.0 / (r2 * r2.sqrt());
    let rhat = r * (1.0 / r2.sqrt());
    (3.0 * v.dot(rhat) * rhat - v) * inv_r3
}

/// Radiation-reaction acceleration `-beta^2 [v - 3 (v.rhat) rhat] / r^3`.
///
/// This is the iterated damping term of the Abraham-Lorentz equation; for a
/// circular orbit the associated power is `-beta^2 v^2 / r^3 < 0`, so the
/// orbit decays.
#[inline]
pub fn damping_acceleration(r: Vec3, v: Vec3, beta: f64) -> Vec3 {
    beta * beta * coulomb_force_gradient_dot(r, v)
}

/// Conserved-quantity snapshot of an instantaneous `(r, p)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitElements {
    /// Energy `E = p^2/2 - 1/r` (negative for bound orbits).
    pub energy: f64,
    /// Angular momentum vector `L = r x p`.
    pub l_vec: Vec3,
    /// Eccentricity (Laplace-Runge-Lenz) vector `p^2 r - (p.r) p - rhat`.
    pub eps_vec: Vec3,
    /// Scalar eccentricity.
    pub eps: f64,
    /// `R = -1/E`, defined for bound orbits only.
    pub r_major: Option<f64>,
    /// Normalized angular momentum `kappa = L / sqrt(R/2)`, bound orbits only.
    pub kappa: Option<f64>,
}

impl OrbitElements {
    pub fn l(&self) -> f64 {
        self.l_vec.norm()
    }

    pub fn is_bound(&self) -> bool {
        self.energy < 0.0
    }

    /// Radius at true anomaly `phi`: `r = (1-eps^2) R / (2 (1 + eps cos phi))`.
    ///
    /// Returns `None` for unbound elements.
    pub fn radius_at_anomaly(&self, phi: f64) -> Option<f64> {
        let r_major = self.r_major?;
        Some((1.0 - self.eps * self.eps) * r_major / (2.0 * (1.0 + self.eps * phi.cos())))
    }

    /// Perihelion radius `r_- = R (1 - eps) / 2`.
    pub fn perihelion(&self) -> Option<f64> {
        self.r_major.map(|r_major| 0.5 * r_major * (1.0 - self.eps))
    }

    /// Aphelion radius `r_+ = R (1 + eps) / 2`.
    pub fn aphelion(&self) -> Option<f64> {
        self.r_major.map(|r_major| 0.5 * r_major * (1.0 + self.eps))
    }
}

/// Compute the conserved elements from a physical position/momentum pair.
///
/// Panics on `r = 0`.
pub fn orbit_elements(r: Vec3, p: Vec3) -> OrbitElements {
    let rn = r.norm();
    assert!(rn > 0.0, "orbit elements evaluated at the origin");
    let p2 = p.norm_sq();
    let energy = 0.5 * p2 - 1.0 / rn;
    let l_vec = r.cross(p);
    let eps_vec = p2 * r - p.dot(r) * p - r / rn;
    let eps = eps_vec.norm();
    let (r_major, kappa) = if energy < 0.0 {
        let r_major = -1.0 / energy;
        (Some(r_major), Some(l_vec.norm() / (0.5 * r_major).sqrt()))
    } else {
        (None, None)
    };
    OrbitElements { energy, l_vec, eps_vec, eps, r_major, kappa }
}

/// Orbital wavenumber `k = sqrt(-2E)`; the Kepler angular frequency is `k^3`.
///
/// Returns `None` for unbound energies.
#[inline]
pub fn orbital_wavenumber(energy: f64) -> Option<f64> {
    (energy < 0.0).then(|| (-2.0 * energy).sqrt())
}

/// Kepler period `P = 2 pi / k^3` in Bohr times, `None` if unbound.
#[inline]
pub fn orbital_period(energy: f64) -> Option<f64> {
    orbital_wavenumber(energy).map(|k| 2.0 * std::f64::consts::PI / (k * k * k))
}

/// Which presentation of the equation of motion is being integrated.
///
/// All variants are algebraically equivalent to the damped Newton equation;
/// they differ in which field primitive (`E`, `A` or `C`) drives the state,
/// and therefore in their numerical behaviour at high mode numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// `v_dot = f(r) + damping - beta E`, state `(r, v)`.
    Newton,
    /// `q_dot = p + beta A + beta^2 f(q)`, `p_dot = f(q)`, with `r = q`.
    Canonical,
    /// `p_dot = f(r)`, `q_dot = p + beta^2 f(r)`, `r = q + beta C`.
    PureGrandCanonical,
    /// `s_ddot = f(r)` with `r = s + beta C + beta^2 s_dot`.
    SForm,
    /// `p_dot = f(r)`, `q_dot = p + beta A_s + beta^2 f(r)`, `r = q + beta C_g`,
    /// with the spectrum split between the `A` and `C` primitives.
    MixedGrandCanonical,
}

impl Formulation {
    pub const ALL: [Formulation; 5] = [
        Formulation::Newton,
        Formulation::Canonical,
        Formulation::PureGrandCanonical,
        Formulation::SForm,
        Formulation::MixedGrandCanonical,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Newton => "newton",
            Formulation::Canonical => "canonical",
            Formulation::PureGrandCanonical => "pure-gc",
            Formulation::SForm => "s-form",
            Formulation::MixedGrandCanonical => "mixed-gc",
        }
    }
}

/// Instantaneous dynamical variables of the active formulation.
///
/// The pair `(a, b)` holds `(r, v)`, `(q, p)` or `(s, s_dot)` depending on
/// the formulation tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub formulation: Formulation,
    pub a: Vec3,
    pub b: Vec3,
}

/// Field values feeding one right-hand-side evaluation.
///
/// Continuity shifts (`delta A`, `delta C`) must already be folded into the
/// values by the caller; the dynamics layer sees only effective fields.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldDrive {
    /// Effective `E` field (Newton formulation).
    pub e: Vec3,
    /// Effective `A` field over the formulation's A-range.
    pub a: Vec3,
    /// Effective `C` field over the formulation's C-range.
    pub c: Vec3,
}

/// Physical `(r, r_dot)` reconstructed from a formulation state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalState {
    pub r: Vec3,
    pub v: Vec3,
}

impl PhaseState {
    /// Initialize by neglecting `beta`, the convention of the source
    /// formulations: the auxiliary variables start at the physical values.
    pub fn from_physical_neglect_beta(formulation: Formulation, phys: PhysicalState) -> Self {
        PhaseState { formulation, a: phys.r, b: phys.v }
    }

    /// Initialize so the reconstructed physical position and velocity equal
    /// `phys` exactly, given the field values at the initial time.
    ///
    /// Needed when trajectories from different formulations must coincide to
    /// round-off rather than to `O(beta)`.
    pub fn from_physical_exact(
        formulation: Formulation,
        phys: PhysicalState,
        drive: &FieldDrive,
        a_total: Vec3,
        beta: f64,
    ) -> Self {
        let f = coulomb_force(phys.r);
        match formulation {
            Formulation::Newton => PhaseState { formulation, a: phys.r, b: phys.v },
            Formulation::Canonical => {
                let p = phys.v - beta * a_total - beta * beta * f;
                PhaseState { formulation, a: phys.r, b: p }
            }
            Formulation::PureGrandCanonical | Formulation::MixedGrandCanonical => {
                let q = phys.r - beta * drive.c;
                let p = phys.v - beta * a_total - beta * beta * f;
                PhaseState { formulation, a: q, b: p }
            }
            Formulation::SForm => {
                let s_dot = phys.v - beta * a_total - beta * beta * f;
                let s = phys.r - beta * drive.c - beta * beta * s_dot;
                PhaseState { formulation, a: s, b: s_dot }
            }
        }
    }

    /// Reconstruct the physical position from the state and field values.
    pub fn physical_position(&self, drive: &FieldDrive, beta: f64) -> Vec3 {
        match self.formulation {
            Formulation::Newton | Formulation::Canonical => self.a,
            Formulation::PureGrandCanonical | Formulation::MixedGrandCanonical => {
                self.a + beta * drive.c
            }
            Formulation::SForm => self.a + beta * drive.c + beta * beta * self.b,
        }
    }

    /// Reconstruct physical `(r, r_dot)`.
    ///
    /// `a_total` is the effective `A` field summed over the full active
    /// window (for the mixed formulation: `A_s + C_g_dot` including shifts);
    /// it is ignored by the Newton formulation.
    pub fn physical(
        &self,
        drive: &FieldDrive,
        a_total: Vec3,
        beta: f64,
    ) -> PhysicalState {
        let r = self.physical_position(drive, beta);
        let v = match self.formulation {
            Formulation::Newton => self.b,
            _ => self.b + beta * a_total + beta * beta * coulomb_force(r),
        };
        PhysicalState { r, v }
    }

    /// Time derivative of the state under the active formulation.
    pub fn rhs(&self, drive: &FieldDrive, beta: f64) -> PhaseState {
        let (da, db) = match self.formulation {
            Formulation::Newton => {
                let r = self.a;
                let v = self.b;
                let acc = coulomb_force(r) + damping_acceleration(r, v, beta) - beta * drive.e;
                (v, acc)
            }
            Formulation::Canonical => {
                let f = coulomb_force(self.a);
                (self.b + beta * drive.a + beta * beta * f, f)
            }
            Formulation::PureGrandCanonical => {
                let r = self.a + beta * drive.c;
                let f = coulomb_force(r);
                (self.b + beta * beta * f, f)
            }
            Formulation::SForm => {
                let r = self.a + beta * drive.c + beta * beta * self.b;
                (self.b, coulomb_force(r))
            }
            Formulation::MixedGrandCanonical => {
                let r = self.a + beta * drive.c;
                let f = coulomb_force(r);
                (self.b + beta * drive.a + beta * beta * f, f)
            }
        };
        PhaseState { formulation: self.formulation, a: da, b: db }
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite()
    }

    #[inline]
    pub(crate) fn scaled_add(&self, other: &PhaseState, factor: f64) -> PhaseState {
        debug_assert_eq!(self.formulation, other.formulation);
        PhaseState {
            formulation: self.formulation,
            a: self.a + factor * other.a,
            b: self.b + factor * other.b,
        }
    }
}
