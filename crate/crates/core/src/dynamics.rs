//! Semiclassical single-atom trajectories in the modulated dipole trap.
//!
//! The conservative part is velocity Verlet. Back-action enters as discrete
//! recoil events at the free-space scattering rate (Bernoulli thinning per
//! physics step), and photon detections are Poisson counts binned per
//! controller tick. Each trajectory owns its RNG stream, derived from
//! `(master_seed, index)`, so ensembles are schedule independent.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cavity::{
    coupling_at, derive_trap_frequencies, detection_rate, scattering_rate, trap_potential_and_force, transmission,
    CavityParams, Position3, TrapParams, Velocity3,
};
use crate::dsp::{Controller, ControllerConfig, DspError};

/// Largest allowed event probability per step for Bernoulli thinning.
pub const MAX_EVENT_PROBABILITY: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("time step {dt:e} s too coarse: scattering probability {p:.3} per step exceeds 0.1")]
    StepTooCoarse { dt: f64, p: f64 },
    #[error("non-finite atom state at t = {t:e} s")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomState {
    pub pos: Position3,
    pub vel: Velocity3,
    pub t: f64,
}

impl AtomState {
    pub fn at_rest() -> Self {
        Self { pos: Position3::zeros(), vel: Velocity3::zeros(), t: 0.0 }
    }

    pub fn kinetic_energy(&self, trap: &TrapParams) -> f64 {
        0.5 * trap.atom_mass * self.vel.norm_squared()
    }

    /// Kinetic plus unmodulated potential energy.
    pub fn energy(&self, trap: &TrapParams) -> f64 {
        self.kinetic_energy(trap) + trap_potential_and_force(&self.pos, trap, 0.0).0
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.vel.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Momentum of one probe photon (kg·m/s).
    pub recoil_momentum: f64,
    /// Multiplier on the recoil velocity per scattering event.
    pub kick_scale: f64,
    /// Extra velocity damping along the cavity axis (1/s).
    #[serde(default)]
    pub axial_extra_damping: f64,
}

/// Recoil multiplier that puts the Q of the no-feedback transmission
/// spectrum at 2.8 (see `examples/calibrate_kick.rs`).
pub const CALIBRATED_KICK_SCALE: f64 = 1.2;

impl NoiseModel {
    /// Calibrated back-action for the given photon momentum.
    pub fn calibrated(recoil_momentum: f64) -> Self {
        Self { recoil_momentum, kick_scale: CALIBRATED_KICK_SCALE, axial_extra_damping: 0.0 }
    }

    pub fn silent(recoil_momentum: f64) -> Self {
        Self { recoil_momentum, kick_scale: 0.0, axial_extra_damping: 0.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.recoil_momentum.is_finite() && self.recoil_momentum >= 0.0) {
            return Err("noise.recoil_momentum must be >= 0".into());
        }
        if !(self.kick_scale.is_finite() && self.kick_scale >= 0.0) {
            return Err(format!("noise.kick_scale must be >= 0, got {}", self.kick_scale));
        }
        if !(self.axial_extra_damping.is_finite() && self.axial_extra_damping >= 0.0) {
            return Err("noise.axial_extra_damping must be >= 0".into());
        }
        Ok(())
    }
}

/// Everything that defines the atom-cavity plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub cavity: CavityParams,
    pub trap: TrapParams,
    pub noise: NoiseModel,
}

impl Plant {
    /// Default cavity and trap with calibrated back-action.
    pub fn radial() -> Self {
        let cavity = CavityParams::default();
        Self { cavity, trap: TrapParams::default(), noise: NoiseModel::calibrated(cavity.recoil_momentum()) }
    }

    /// Ten times the probe power of [`Plant::radial`]: both the detection
    /// and the scattering rate scale up.
    pub fn axial() -> Self {
        let mut p = Self::radial();
        p.cavity.empty_detect_rate *= 10.0;
        p.cavity.max_scatter_rate *= 10.0;
        p
    }

    pub fn validate(&self) -> Result<(), String> {
        self.cavity.validate()?;
        self.trap.validate()?;
        self.noise.validate()
    }
}

/// Which degrees of freedom are integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// Axial coordinate pinned to the antinode; only x and y move.
    Radial,
    /// Full 3D motion.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Maxwell–Boltzmann velocities with ⟨½m|v|²⟩ = ke_factor·U₀ (3D) and
    /// Gaussian positions of the matching harmonic thermal state, widths
    /// scaled by `spread_factor`. With `bound_only`, draws with total
    /// energy ≥ 0 are rejected so every trajectory starts trapped.
    Thermal { ke_factor: f64, spread_factor: f64, bound_only: bool },
    /// Deterministic start.
    Fixed { pos: [f64; 3], vel: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt_physics: f64,
    /// Detection binning interval; equals the controller tick when feedback runs.
    pub tick: f64,
    pub max_time: f64,
    pub escape_radius: f64,
    #[serde(default = "default_trapped_threshold")]
    pub trapped_threshold: f64,
    pub motion: Motion,
    pub initial: InitialCondition,
    /// Record a diagnostic sample every this many ticks (0 = off).
    #[serde(default)]
    pub diagnostics_every: usize,
    /// Keep the sparse per-tick count stream.
    #[serde(default)]
    pub record_counts: bool,
}

fn default_trapped_threshold() -> f64 {
    2.0e-3
}

impl SimConfig {
    /// Decimated radial defaults: 0.25 µs physics step under a 1 µs tick.
    pub fn radial(trap: &TrapParams) -> Self {
        Self {
            dt_physics: 0.25e-6,
            tick: 1.0e-6,
            max_time: 0.5,
            escape_radius: 3.0 * trap.waist,
            trapped_threshold: default_trapped_threshold(),
            motion: Motion::Radial,
            initial: InitialCondition::Thermal { ke_factor: 0.5, spread_factor: 1.0, bound_only: true },
            diagnostics_every: 0,
            record_counts: false,
        }
    }

    /// Full 3D motion at the 8 ns reference tick.
    pub fn axial(trap: &TrapParams) -> Self {
        Self {
            dt_physics: 8.0e-9,
            tick: 8.0e-9,
            max_time: 30.0e-3,
            motion: Motion::Full,
            ..Self::radial(trap)
        }
    }

    /// Physics steps per detection tick.
    pub fn steps_per_tick(&self) -> Result<usize, DynamicsError> {
        let ratio = self.tick / self.dt_physics;
        let r = ratio.round();
        if r < 1.0 || (ratio - r).abs() > 1e-6 * r {
            return Err(DynamicsError::Config(format!(
                "sim.tick ({:e} s) must be a positive integer multiple of sim.dt_physics ({:e} s)",
                self.tick, self.dt_physics
            )));
        }
        Ok(r as usize)
    }

    pub fn validate(&self, plant: &Plant) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::Config(m));
        for (name, v) in [
            ("dt_physics", self.dt_physics),
            ("tick", self.tick),
            ("max_time", self.max_time),
            ("escape_radius", self.escape_radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("sim.{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.trapped_threshold >= 0.0) {
            return bad("sim.trapped_threshold must be >= 0".into());
        }
        self.steps_per_tick()?;
        let p = plant.cavity.max_scatter_rate * self.dt_physics;
        if p > MAX_EVENT_PROBABILITY {
            return Err(DynamicsError::StepTooCoarse { dt: self.dt_physics, p });
        }
        if self.motion == Motion::Full {
            let fz = derive_trap_frequencies(&plant.trap).axial_hz();
            if self.dt_physics > 1.0 / (50.0 * fz) {
                return bad(format!(
                    "sim.dt_physics = {:e} s does not resolve the {:.0} Hz axial motion (need <= 1/(50 f_z))",
                    self.dt_physics, fz
                ));
            }
        }
        if let InitialCondition::Thermal { ke_factor, spread_factor, .. } = self.initial {
            if !(ke_factor >= 0.0 && spread_factor >= 0.0) {
                return bad("sim.initial thermal factors must be >= 0".into());
            }
        }
        Ok(())
    }
}

/// Fixed-phase trap modulation `amplitude · sin(2π f t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenLoopDrive {
    pub frequency: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl OpenLoopDrive {
    pub fn at(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.frequency * t + self.phase).sin()
    }
}

/// What modulates the trap during a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum Driver {
    None,
    Feedback(ControllerConfig),
    OpenLoop(OpenLoopDrive),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeChannel {
    /// Left through the radial excursion limit, or unbound with radial
    /// kinetic energy dominating.
    Radial,
    /// Unbound with axial kinetic energy dominating.
    Axial,
}

/// Decimated time series for one trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: Vec<f64>,
    pub energy: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub transmission: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub lo_phase: Vec<f64>,
    pub modulation: Vec<f64>,
}

impl Diagnostics {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Whole-trajectory aggregates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub detections: u64,
    pub scatter_events: u64,
    /// Time average of |modulation|.
    pub mean_abs_modulation: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub storage_time: f64,
    pub escaped: bool,
    pub escape_channel: Option<EscapeChannel>,
    /// Sparse `(tick_index, count)` pairs; empty unless recording was requested.
    pub tick_counts: Vec<(u64, u32)>,
    pub diagnostics: Option<Diagnostics>,
    pub summary: TrajectorySummary,
}

impl TrajectoryResult {
    pub fn mean_detection_rate(&self) -> f64 {
        self.summary.detections as f64 / self.storage_time.max(f64::MIN_POSITIVE)
    }

    pub fn mean_scatter_rate(&self) -> f64 {
        self.summary.scatter_events as f64 / self.storage_time.max(f64::MIN_POSITIVE)
    }
}

/// RNG stream for trajectory `index` of an ensemble seeded with `master_seed`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Thermal start around the trap minimum (3D; radial runs zero the axial part).
pub fn sample_initial_state<R: Rng + ?Sized>(
    trap: &TrapParams,
    ke_factor: f64,
    spread_factor: f64,
    rng: &mut R,
) -> AtomState {
    if ke_factor <= 0.0 {
        return AtomState::at_rest();
    }
    let m = trap.atom_mass;
    let kt = 2.0 / 3.0 * ke_factor * trap.depth;
    let freqs = derive_trap_frequencies(trap);
    let sv = (kt / m).sqrt();
    let sr = spread_factor * (kt / (m * freqs.radial * freqs.radial)).sqrt();
    let sz = spread_factor * (kt / (m * freqs.axial * freqs.axial)).sqrt();
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut g = || n.sample(rng);
    let pos = Position3::new(sr * g(), sr * g(), sz * g());
    let vel = Velocity3::new(sv * g(), sv * g(), sv * g());
    AtomState { pos, vel, t: 0.0 }
}

/// Thermal start conditioned on a bound total energy (rejection sampling).
pub fn sample_bound_initial_state<R: Rng + ?Sized>(
    trap: &TrapParams,
    ke_factor: f64,
    spread_factor: f64,
    rng: &mut R,
) -> AtomState {
    loop {
        let s = sample_initial_state(trap, ke_factor, spread_factor, rng);
        if s.energy(trap) < 0.0 {
            return s;
        }
    }
}

/// Poisson count with the given mean; zero mean always yields zero.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean < 10.0 {
        // Inversion; cheap for the sub-unity means that dominate.
        let u: f64 = rng.random();
        let mut p = (-mean).exp();
        let mut cdf = p;
        let mut k = 0u32;
        while u > cdf && k < 1000 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        k
    } else {
        Poisson::new(mean).unwrap().sample(rng) as u32
    }
}

/// Detected photons in an interval `dt` at coupling `g`.
pub fn sample_detections<R: Rng + ?Sized>(g: f64, cavity: &CavityParams, dt: f64, rng: &mut R) -> u32 {
    sample_poisson(detection_rate(g, cavity) * dt, rng)
}

/// Unit vector uniformly distributed on the sphere.
fn isotropic_unit<R: Rng + ?Sized>(rng: &mut R) -> Velocity3 {
    let cos_t: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..TAU);
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    Velocity3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

/// One recoil event: absorption along ±z plus isotropic emission.
fn recoil_kick<R: Rng + ?Sized>(plant: &Plant, rng: &mut R) -> Velocity3 {
    let dv = plant.noise.kick_scale * plant.noise.recoil_momentum / plant.trap.atom_mass;
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    (Velocity3::new(0.0, 0.0, sign) + isotropic_unit(rng)) * dv
}

/// Integrator state carrying the cached unmodulated force at `state.pos`.
struct Integrator {
    state: AtomState,
    /// Unmodulated potential at `state.pos`.
    u0: f64,
    /// Unmodulated force at `state.pos`; the modulated force is (1+m)·f0.
    f0: Velocity3,
    motion: Motion,
}

impl Integrator {
    fn new(mut state: AtomState, trap: &TrapParams, motion: Motion) -> Self {
        if motion == Motion::Radial {
            state.pos.z = 0.0;
            state.vel.z = 0.0;
        }
        let (u0, f0) = eval_trap(&state.pos, trap, motion);
        Self { state, u0, f0, motion }
    }

    /// Velocity Verlet with the modulation `m_start` for the first half
    /// kick and `m_end` for the second.
    #[inline]
    fn verlet(&mut self, trap: &TrapParams, m_start: f64, m_end: f64, dt: f64) {
        let inv_m = 1.0 / trap.atom_mass;
        let s = &mut self.state;
        s.vel += self.f0 * ((1.0 + m_start) * 0.5 * dt * inv_m);
        s.pos += s.vel * dt;
        let (u0, f0) = eval_trap(&s.pos, trap, self.motion);
        self.u0 = u0;
        self.f0 = f0;
        s.vel += self.f0 * ((1.0 + m_end) * 0.5 * dt * inv_m);
        s.t += dt;
    }

    fn energy(&self, trap: &TrapParams) -> f64 {
        0.5 * trap.atom_mass * self.state.vel.norm_squared() + self.u0
    }
}

#[inline]
fn eval_trap(pos: &Position3, trap: &TrapParams, motion: Motion) -> (f64, Velocity3) {
    let (u, mut f) = trap_potential_and_force(pos, trap, 0.0);
    if motion == Motion::Radial {
        f.z = 0.0;
    }
    (u, f)
}

/// Stochastic part of a step: returns whether a recoil event happened.
#[inline]
fn apply_back_action<R: Rng + ?Sized>(
    state: &mut AtomState,
    plant: &Plant,
    motion: Motion,
    g: f64,
    dt: f64,
    rng: &mut R,
) -> Result<bool, DynamicsError> {
    if plant.noise.axial_extra_damping > 0.0 && motion == Motion::Full {
        state.vel.z *= (-plant.noise.axial_extra_damping * dt).exp();
    }
    if plant.noise.kick_scale == 0.0 {
        return Ok(false);
    }
    let p = scattering_rate(g, &plant.cavity) * dt;
    if p > MAX_EVENT_PROBABILITY {
        return Err(DynamicsError::StepTooCoarse { dt, p });
    }
    if rng.random::<f64>() < p {
        let mut kick = recoil_kick(plant, rng);
        if motion == Motion::Radial {
            kick.z = 0.0;
        }
        state.vel += kick;
        return Ok(true);
    }
    Ok(false)
}

/// One physics step under the modulation `modulation` (full 3D motion).
pub fn step<R: Rng + ?Sized>(
    state: &AtomState,
    plant: &Plant,
    modulation: f64,
    dt: f64,
    rng: &mut R,
) -> Result<AtomState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::Config(format!("dt must be > 0, got {dt}")));
    }
    if !(modulation.abs() < 1.0) {
        return Err(DynamicsError::Config(format!("|modulation| must be < 1, got {modulation}")));
    }
    let mut it = Integrator::new(*state, &plant.trap, Motion::Full);
    it.verlet(&plant.trap, modulation, modulation, dt);
    let g = coupling_at(&it.state.pos, &plant.cavity);
    apply_back_action(&mut it.state, plant, Motion::Full, g, dt, rng)?;
    Ok(it.state)
}

/// Run one closed-loop trajectory (physics → detections → controller →
/// modulation) until escape or `sim.max_time`.
pub fn simulate_trajectory(
    sim: &SimConfig,
    plant: &Plant,
    driver: &Driver,
    seed: u64,
) -> Result<TrajectoryResult, DynamicsError> {
    run_indexed(sim, plant, driver, seed, 0)
}

fn run_indexed(
    sim: &SimConfig,
    plant: &Plant,
    driver: &Driver,
    master_seed: u64,
    index: u64,
) -> Result<TrajectoryResult, DynamicsError> {
    sim.validate(plant)?;
    let steps_per_tick = sim.steps_per_tick()?;
    let mut rng = trajectory_rng(master_seed, index);
    let mut controller = match driver {
        Driver::Feedback(cfg) => {
            if (cfg.tick - sim.tick).abs() > 1e-9 * sim.tick {
                return Err(DynamicsError::Config(format!(
                    "controller.tick ({:e} s) must equal sim.tick ({:e} s)",
                    cfg.tick, sim.tick
                )));
            }
            Some(Controller::new(cfg.clone(), plant.cavity.empty_detect_rate)?)
        }
        _ => None,
    };
    if let Driver::OpenLoop(d) = driver {
        if !(d.amplitude.abs() < 1.0) {
            return Err(DynamicsError::Config("open-loop amplitude must satisfy |m| < 1".into()));
        }
    }

    let start = match sim.initial {
        InitialCondition::Thermal { ke_factor, spread_factor, bound_only: false } => {
            sample_initial_state(&plant.trap, ke_factor, spread_factor, &mut rng)
        }
        InitialCondition::Thermal { ke_factor, spread_factor, bound_only: true } => {
            sample_bound_initial_state(&plant.trap, ke_factor, spread_factor, &mut rng)
        }
        InitialCondition::Fixed { pos, vel } => AtomState {
            pos: Position3::from(pos),
            vel: Velocity3::from(vel),
            t: 0.0,
        },
    };
    let trap = &plant.trap;
    let cavity = &plant.cavity;
    let dt = sim.dt_physics;
    let mut it = Integrator::new(start, trap, sim.motion);
    let escape_r2 = sim.escape_radius * sim.escape_radius;
    let n_steps = (sim.max_time / dt).round() as u64;

    let mut summary = TrajectorySummary { initial_energy: it.energy(trap), ..Default::default() };
    let mut tick_counts = Vec::new();
    let mut diag = (sim.diagnostics_every > 0).then(Diagnostics::default);
    let mut modulation = 0.0;
    let mut abs_mod_sum = 0.0;
    let mut detect_mean = 0.0;
    let mut tick_index: u64 = 0;
    let mut escaped = None;

    let mut step_index: u64 = 0;
    while step_index < n_steps {
        if let Some(ch) = escape_check(&it, trap, escape_r2) {
            escaped = Some(ch);
            break;
        }
        let t0 = step_index as f64 * dt;
        let (m0, m1) = match driver {
            Driver::OpenLoop(d) => (d.at(t0), d.at(t0 + dt)),
            _ => (modulation, modulation),
        };
        it.verlet(trap, m0, m1, dt);
        abs_mod_sum += 0.5 * (m0.abs() + m1.abs());
        let g = coupling_at(&it.state.pos, cavity);
        if apply_back_action(&mut it.state, plant, sim.motion, g, dt, &mut rng)? {
            summary.scatter_events += 1;
        }
        detect_mean += detection_rate(g, cavity) * dt;
        step_index += 1;

        if step_index % steps_per_tick as u64 == 0 {
            if !it.state.is_finite() {
                return Err(DynamicsError::NonFinite { t: it.state.t });
            }
            let count = sample_poisson(detect_mean, &mut rng);
            detect_mean = 0.0;
            summary.detections += count as u64;
            if sim.record_counts && count > 0 {
                tick_counts.push((tick_index, count));
            }
            if let Some(ctl) = controller.as_mut() {
                modulation = ctl.process_tick(count).modulation;
            }
            if let Some(d) = diag.as_mut() {
                if tick_index % sim.diagnostics_every as u64 == 0 {
                    let s = &it.state;
                    d.t.push(step_index as f64 * dt);
                    d.energy.push(it.energy(trap));
                    d.x.push(s.pos.x);
                    d.y.push(s.pos.y);
                    d.z.push(s.pos.z);
                    d.transmission.push(transmission(g, cavity));
                    let (mag, lo) = controller.as_ref().map_or((0.0, 0.0), |c| (c.magnitude(), c.state().lo_phase));
                    d.magnitude.push(mag);
                    d.lo_phase.push(lo);
                    d.modulation.push(match driver {
                        Driver::OpenLoop(o) => o.at(step_index as f64 * dt),
                        _ => modulation,
                    });
                }
            }
            tick_index += 1;
        }
    }
    if escaped.is_none() {
        escaped = escape_check(&it, trap, escape_r2);
    }
    let storage_time = if escaped.is_some() { step_index as f64 * dt } else { sim.max_time };
    summary.final_energy = it.energy(trap);
    summary.mean_abs_modulation = if step_index > 0 { abs_mod_sum / step_index as f64 } else { 0.0 };
    Ok(TrajectoryResult {
        storage_time,
        escaped: escaped.is_some(),
        escape_channel: escaped,
        tick_counts,
        diagnostics: diag,
        summary,
    })
}

#[inline]
fn escape_check(it: &Integrator, trap: &TrapParams, escape_r2: f64) -> Option<EscapeChannel> {
    let s = &it.state;
    let rho2 = s.pos.x * s.pos.x + s.pos.y * s.pos.y;
    if rho2 > escape_r2 {
        return Some(EscapeChannel::Radial);
    }
    if it.energy(trap) > 0.0 {
        let radial_ke = s.vel.x * s.vel.x + s.vel.y * s.vel.y;
        let axial_ke = s.vel.z * s.vel.z;
        return Some(if axial_ke > radial_ke { EscapeChannel::Axial } else { EscapeChannel::Radial });
    }
    None
}

/// Run `n_traj` independent trajectories on the current rayon pool.
/// Results are ordered by index and independent of the worker count.
pub fn run_ensemble(
    n_traj: usize,
    sim: &SimConfig,
    plant: &Plant,
    driver: &Driver,
    master_seed: u64,
) -> Result<Vec<TrajectoryResult>, DynamicsError> {
    if n_traj == 0 {
        return Err(DynamicsError::Config("n_traj must be >= 1".into()));
    }
    sim.validate(plant)?;
    (0..n_traj as u64)
        .into_par_iter()
        .map(|i| run_indexed(sim, plant, driver, master_seed, i))
        .collect()
}

/// Same as [`run_ensemble`] but for an explicit list of (seed, index) jobs,
/// used by sweeps that flatten many ensembles into one parallel pass.
pub(crate) fn run_job(
    sim: &SimConfig,
    plant: &Plant,
    driver: &Driver,
    master_seed: u64,
    index: u64,
) -> Result<TrajectoryResult, DynamicsError> {
    run_indexed(sim, plant, driver, master_seed, index)
}

/// Classical small-amplitude growth rate of the oscillation amplitude under
/// resonant parametric drive of depth `m` at 2ω: |m|·ω/4.
pub fn parametric_growth_rate(m: f64, omega: f64) -> f64 {
    m.abs() * omega / 4.0
}

/// Phase of a drive `sin(2ωt + χ)` that maximally heats an oscillator
/// `x = a·cos(ωt + ψ)`.
pub fn heating_drive_phase(psi: f64) -> f64 {
    (2.0 * psi).rem_euclid(TAU)
}

/// Phase of the maximally cooling drive, opposite to the heating one.
pub fn cooling_drive_phase(psi: f64) -> f64 {
    (2.0 * psi + PI).rem_euclid(TAU)
}
