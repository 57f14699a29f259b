//! Static position → coupling → rate maps for a single atom in a
//! standing-wave cavity with an intracavity dipole trap.
//!
//! Everything here is a pure function of immutable parameter records.
//! Probe and trap antinodes coincide at `z = 0`; `z` is the cavity axis.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Position in metres; `z` is the cavity axis.
pub type Position3 = Vector3<f64>;
/// Velocity in metres per second.
pub type Velocity3 = Vector3<f64>;

pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Mass of a ⁸⁵Rb atom.
pub const RB85_MASS: f64 = 85.0 * ATOMIC_MASS_UNIT;

/// Rb D2 line, used as the probe wavelength.
pub const PROBE_WAVELENGTH: f64 = 780.0e-9;
pub const CAVITY_LENGTH: f64 = 260.0e-6;
/// Radial waist shared by the cavity mode and the dipole trap.
///
/// Chosen so that an 850 µK deep trap has a 4.8 kHz radial frequency.
pub const DEFAULT_WAIST: f64 = 19.1e-6;
pub const DEFAULT_DEPTH_KELVIN: f64 = 850.0e-6;

/// Dipole trap wavelength, four free spectral ranges red of the probe.
pub fn trap_wavelength_from_geometry(probe_wavelength: f64, cavity_length: f64, fsr_count: f64) -> f64 {
    let fsr = SPEED_OF_LIGHT / (2.0 * cavity_length);
    SPEED_OF_LIGHT / (SPEED_OF_LIGHT / probe_wavelength - fsr_count * fsr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityParams {
    /// Peak single-atom coupling (rad/s).
    pub g0: f64,
    /// Cavity field decay rate (rad/s).
    pub kappa: f64,
    /// Atomic dipole decay rate (rad/s).
    pub gamma: f64,
    pub mode_waist: f64,
    pub probe_wavelength: f64,
    pub trap_wavelength: f64,
    pub cavity_length: f64,
    /// Detected count rate with no atom in the mode (1/s).
    pub empty_detect_rate: f64,
    /// Peak free-space scattering rate, reached at g² = κγ (1/s).
    pub max_scatter_rate: f64,
}

impl Default for CavityParams {
    fn default() -> Self {
        let two_pi = 2.0 * PI;
        let empty_detect_rate = 1.0e6;
        Self {
            g0: two_pi * 16.0e6,
            kappa: two_pi * 1.5e6,
            gamma: two_pi * 3.0e6,
            mode_waist: DEFAULT_WAIST,
            probe_wavelength: PROBE_WAVELENGTH,
            trap_wavelength: trap_wavelength_from_geometry(PROBE_WAVELENGTH, CAVITY_LENGTH, 4.0),
            cavity_length: CAVITY_LENGTH,
            empty_detect_rate,
            // Unit-efficiency steady state: R_sc / R_det = g² / κγ.
            max_scatter_rate: empty_detect_rate / 4.0,
        }
    }
}

impl CavityParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("g0", self.g0),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("mode_waist", self.mode_waist),
            ("probe_wavelength", self.probe_wavelength),
            ("trap_wavelength", self.trap_wavelength),
            ("cavity_length", self.cavity_length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("cavity.{name} must be finite and > 0, got {v}"));
            }
        }
        for (name, v) in [("empty_detect_rate", self.empty_detect_rate), ("max_scatter_rate", self.max_scatter_rate)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("cavity.{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.g0 <= self.kappa || self.g0 <= self.gamma {
            return Err("cavity.g0 must exceed both kappa and gamma (strong coupling)".into());
        }
        if self.trap_wavelength <= self.probe_wavelength {
            return Err("cavity.trap_wavelength must be longer than the probe wavelength (red-detuned trap)".into());
        }
        Ok(())
    }

    fn kappa_gamma(&self) -> f64 {
        self.kappa * self.gamma
    }

    /// Recoil momentum of one probe photon, h/λ.
    pub fn recoil_momentum(&self) -> f64 {
        PLANCK / self.probe_wavelength
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapParams {
    /// Trap depth U₀ (J).
    pub depth: f64,
    pub waist: f64,
    pub wavelength: f64,
    pub atom_mass: f64,
}

impl Default for TrapParams {
    fn default() -> Self {
        Self {
            depth: BOLTZMANN * DEFAULT_DEPTH_KELVIN,
            waist: DEFAULT_WAIST,
            wavelength: trap_wavelength_from_geometry(PROBE_WAVELENGTH, CAVITY_LENGTH, 4.0),
            atom_mass: RB85_MASS,
        }
    }
}

impl TrapParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("depth", self.depth),
            ("waist", self.waist),
            ("wavelength", self.wavelength),
            ("atom_mass", self.atom_mass),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("trap.{name} must be finite and > 0, got {v}"));
            }
        }
        let f = derive_trap_frequencies(self);
        if f.axial < 10.0 * f.radial {
            return Err(format!(
                "trap axial frequency ({:.4e} rad/s) must exceed the radial one ({:.4e} rad/s) by 10x",
                f.axial, f.radial
            ));
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }
}

/// Harmonic trap frequencies at the potential minimum (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapFrequencies {
    pub radial: f64,
    pub axial: f64,
}

impl TrapFrequencies {
    pub fn radial_hz(&self) -> f64 {
        self.radial / (2.0 * PI)
    }
    pub fn axial_hz(&self) -> f64 {
        self.axial / (2.0 * PI)
    }
}

/// g(r) = g₀ · exp(−(x²+y²)/w₀²) · cos(2πz/λ_probe).
pub fn coupling_at(pos: &Position3, c: &CavityParams) -> f64 {
    let rho2 = pos.x * pos.x + pos.y * pos.y;
    c.g0 * (-rho2 / (c.mode_waist * c.mode_waist)).exp() * (2.0 * PI * pos.z / c.probe_wavelength).cos()
}

/// On-resonance transmission normalised to the empty cavity,
/// T = (κγ / (κγ + g²))².
pub fn transmission(g: f64, c: &CavityParams) -> f64 {
    let kg = c.kappa_gamma();
    let r = kg / (kg + g * g);
    r * r
}

/// Free-space scattering rate, peak-normalised so that R_sc(√κγ) = max_scatter_rate.
pub fn scattering_rate(g: f64, c: &CavityParams) -> f64 {
    let kg = c.kappa_gamma();
    let g2 = g * g;
    let denom = kg + g2;
    // g²κγ/(κγ+g²)² peaks at 1/4 when g² = κγ.
    c.max_scatter_rate * 4.0 * g2 * kg / (denom * denom)
}

pub fn detection_rate(g: f64, c: &CavityParams) -> f64 {
    c.empty_detect_rate * transmission(g, c)
}

/// Modulated trap potential and the analytic force −∇U, evaluated together
/// since they share the expensive factors.
pub fn trap_potential_and_force(pos: &Position3, t: &TrapParams, modulation: f64) -> (f64, Vector3<f64>) {
    let w2 = t.waist * t.waist;
    let k = t.wavenumber();
    let radial = (-2.0 * (pos.x * pos.x + pos.y * pos.y) / w2).exp();
    let (s, c) = (k * pos.z).sin_cos();
    let depth = t.depth * (1.0 + modulation);
    let u = -depth * radial * c * c;
    let fr = -4.0 / w2 * depth * radial * c * c;
    let fz = -depth * radial * k * 2.0 * s * c;
    (u, Vector3::new(fr * pos.x, fr * pos.y, fz))
}

/// U(r) = −U₀(1+mod)·exp(−2ρ²/w_t²)·cos²(2πz/λ_t).
pub fn trap_potential(pos: &Position3, t: &TrapParams, modulation: f64) -> f64 {
    trap_potential_and_force(pos, t, modulation).0
}

pub fn trap_force(pos: &Position3, t: &TrapParams, modulation: f64) -> Vector3<f64> {
    trap_potential_and_force(pos, t, modulation).1
}

/// Second derivatives of the potential at the minimum:
/// ω_ρ = (2/w_t)√(U₀/m), ω_z = (2π/λ_t)√(2U₀/m).
pub fn derive_trap_frequencies(t: &TrapParams) -> TrapFrequencies {
    TrapFrequencies {
        radial: 2.0 / t.waist * (t.depth / t.atom_mass).sqrt(),
        axial: t.wavenumber() * (2.0 * t.depth / t.atom_mass).sqrt(),
    }
}
