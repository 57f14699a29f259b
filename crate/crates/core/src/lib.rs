//! Simulation of continuous parametric feedback cooling of a single atom in
//! a standing-wave optical cavity.
//!
//! * [`cavity`]: position → coupling → transmission/scattering maps and the trap.
//! * [`dynamics`]: stochastic trajectories, escape detection, ensembles.
//! * [`dsp`]: the tick-driven feedback pipeline (demodulation, RBW, PLL, drive).
//! * [`analysis`]: spectra, Q fit, storage statistics, phase-sweep fits.
//! * [`experiment`]: configs, sweeps, figure presets and export.

pub mod analysis;
pub mod cavity;
pub mod dsp;
pub mod dynamics;
pub mod experiment;

pub use analysis::{StorageStats, SpectrumFit};
pub use cavity::{CavityParams, Position3, TrapParams, Velocity3};
pub use dsp::{Controller, ControllerConfig, DriveSample};
pub use dynamics::{AtomState, Driver, NoiseModel, OpenLoopDrive, Plant, SimConfig, TrajectoryResult};
