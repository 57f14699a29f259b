//! Experiment configuration, parameter sweeps and result export.
//!
//! A config is a TOML document. Every section is optional: omitted fields
//! fall back to the preset of the selected `mode`, so a file only needs to
//! state what it changes. Sweeps run all (point, trajectory) jobs in one
//! parallel pass; every point reuses the same per-trajectory RNG streams,
//! which makes point-to-point differences less noisy and the output
//! independent of worker count and point order.

mod figures;

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    fit_periodic_gaussian, fit_sinusoid, storage_stats_from_times, AnalysisError, PeriodicGaussianFit, SinusoidFit,
    StorageStats,
};
use crate::cavity::{CavityParams, TrapParams};
use crate::dsp::{ControllerConfig, DspError};
use crate::dynamics::{
    run_job, Driver, DynamicsError, EscapeChannel, NoiseModel, OpenLoopDrive, Plant, SimConfig, TrajectoryResult,
};

pub use figures::{
    baseline, figure_config, figure_frequencies, fitted_maximum, reproduce_figure, smoothed_argmin,
    transmission_spectrum_fit, Figure, FigureOutput, Scale, Table, SPECTRUM_DECIMATION,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },
}

impl ExperimentError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), err: source }
    }

    /// True for errors caused by the user's input rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Self::Config(_) | Self::Dynamics(DynamicsError::Config(_) | DynamicsError::StepTooCoarse { .. }) | Self::Dsp(DspError::Config(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Radial,
    Axial,
    OpenLoop,
    NoFeedback,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Radial => "radial",
            Mode::Axial => "axial",
            Mode::OpenLoop => "open_loop",
            Mode::NoFeedback => "no_feedback",
        }
    }
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PhiPfb,
    FPfb,
    ModMax,
    LockGain,
    KickScale,
    EmptyDetectRate,
    OpenLoopPhase,
    OpenLoopFrequency,
    OpenLoopAmplitude,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PhiPfb => "phi_pfb",
            SweepParam::FPfb => "f_pfb",
            SweepParam::ModMax => "mod_max",
            SweepParam::LockGain => "lock_gain",
            SweepParam::KickScale => "kick_scale",
            SweepParam::EmptyDetectRate => "empty_detect_rate",
            SweepParam::OpenLoopPhase => "open_loop_phase",
            SweepParam::OpenLoopFrequency => "open_loop_frequency",
            SweepParam::OpenLoopAmplitude => "open_loop_amplitude",
        }
    }
}

/// Evenly spaced values; `endpoint = false` drops `stop`, which suits
/// periodic parameters such as a phase over [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    #[serde(default = "yes")]
    pub endpoint: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<SweepRange>,
}

impl SweepSpec {
    pub fn list(param: SweepParam, values: Vec<f64>) -> Self {
        Self { param, values: Some(values), range: None }
    }

    /// `count` phases uniformly over [0, 2π).
    pub fn phases(count: usize) -> Self {
        Self {
            param: SweepParam::PhiPfb,
            values: None,
            range: Some(SweepRange { start: 0.0, stop: TAU, count, endpoint: false }),
        }
    }

    pub fn resolve(&self) -> Result<Vec<f64>, ExperimentError> {
        let v = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => {
                if r.count == 0 {
                    return Err(ExperimentError::Config("sweep.range.count must be >= 1".into()));
                }
                let div = if r.endpoint { r.count.saturating_sub(1).max(1) } else { r.count } as f64;
                (0..r.count).map(|i| r.start + (r.stop - r.start) * i as f64 / div).collect()
            }
            _ => return Err(ExperimentError::Config("sweep: give exactly one of `values` or `range`".into())),
        };
        if v.is_empty() {
            return Err(ExperimentError::Config("sweep.values must not be empty".into()));
        }
        if let Some(x) = v.iter().find(|x| !x.is_finite()) {
            return Err(ExperimentError::Config(format!("sweep.values contains non-finite value {x}")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n_trajectories: usize,
    /// Must fit in a TOML integer (< 2⁶³).
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub cavity: CavityParams,
    pub trap: TrapParams,
    pub noise: NoiseModel,
    pub sim: SimConfig,
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_loop: Option<OpenLoopDrive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    /// Desk-scale defaults for `mode`.
    pub fn preset(mode: Mode) -> Self {
        let radial_plant = Plant::radial();
        let (plant, sim, controller) = match mode {
            Mode::Axial => {
                let p = Plant::axial();
                (p, SimConfig::axial(&p.trap), ControllerConfig::axial())
            }
            _ => (radial_plant, SimConfig::radial(&radial_plant.trap), ControllerConfig::radial()),
        };
        let open_loop = (mode == Mode::OpenLoop).then(|| OpenLoopDrive {
            frequency: 2.0 * crate::cavity::derive_trap_frequencies(&plant.trap).radial_hz(),
            amplitude: 0.06,
            phase: FRAC_PI_2,
        });
        Self {
            mode,
            n_trajectories: if mode == Mode::Axial { 100 } else { 150 },
            master_seed: 1,
            output: None,
            cavity: plant.cavity,
            trap: plant.trap,
            noise: plant.noise,
            sim,
            controller,
            open_loop,
            sweep: None,
        }
    }

    /// Parse a TOML document, filling omitted fields from the mode preset.
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let user: toml::Table = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let mode = match user.get("mode") {
            None => Mode::Radial,
            Some(v) => Mode::deserialize(v.clone()).map_err(|e| ExperimentError::Config(format!("mode: {e}")))?,
        };
        let base = toml::Value::try_from(Self::preset(mode)).map_err(|e| ExperimentError::Config(e.to_string()))?;
        let mut merged = base;
        merge(&mut merged, toml::Value::Table(user));
        let cfg: Self = serde_path_to_error::deserialize(merged)
            .map_err(|e| ExperimentError::Config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ExperimentError> {
        toml::to_string_pretty(self).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn plant(&self) -> Plant {
        Plant { cavity: self.cavity, trap: self.trap, noise: self.noise }
    }

    pub fn driver(&self) -> Result<Driver, ExperimentError> {
        Ok(match self.mode {
            Mode::Radial | Mode::Axial => Driver::Feedback(self.controller.clone()),
            Mode::NoFeedback => Driver::None,
            Mode::OpenLoop => Driver::OpenLoop(
                self.open_loop
                    .ok_or_else(|| ExperimentError::Config("open_loop section is required in open_loop mode".into()))?,
            ),
        })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let cfg = |m: String| ExperimentError::Config(m);
        if self.n_trajectories == 0 {
            return Err(cfg("n_trajectories must be >= 1".into()));
        }
        if self.master_seed > i64::MAX as u64 {
            return Err(cfg("master_seed must be < 2^63".into()));
        }
        let plant = self.plant();
        plant.validate().map_err(cfg)?;
        self.sim.validate(&plant)?;
        match self.mode {
            Mode::Radial | Mode::Axial => {
                self.controller.validate()?;
                if (self.controller.tick - self.sim.tick).abs() > 1e-9 * self.sim.tick {
                    return Err(cfg(format!(
                        "controller.tick ({:e} s) must equal sim.tick ({:e} s)",
                        self.controller.tick, self.sim.tick
                    )));
                }
            }
            Mode::OpenLoop => {
                let d = self.driver()?;
                if let Driver::OpenLoop(o) = d {
                    if !(o.amplitude.abs() < 1.0) {
                        return Err(cfg(format!("open_loop.amplitude must satisfy |m| < 1, got {}", o.amplitude)));
                    }
                    if !(o.frequency.is_finite() && o.frequency > 0.0) {
                        return Err(cfg("open_loop.frequency must be > 0".into()));
                    }
                }
            }
            Mode::NoFeedback => {}
        }
        if let Some(s) = &self.sweep {
            for v in s.resolve()? {
                self.with_param(s.param, v)?;
            }
        }
        Ok(())
    }

    /// Copy of this config with one parameter replaced, validated.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Result<Self, ExperimentError> {
        let mut c = self.clone();
        c.sweep = None;
        let need_loop = |c: &mut Self| {
            c.open_loop.as_mut().map(|_| ()).ok_or_else(|| {
                ExperimentError::Config(format!("sweep over {} needs an open_loop section", param.name()))
            })
        };
        match param {
            SweepParam::PhiPfb => c.controller.phi_pfb = value,
            SweepParam::FPfb => c.controller.f_pfb = value,
            SweepParam::ModMax => c.controller.mod_max = value,
            SweepParam::LockGain => c.controller.lock_gain = value,
            SweepParam::KickScale => c.noise.kick_scale = value,
            SweepParam::EmptyDetectRate => c.cavity.empty_detect_rate = value,
            SweepParam::OpenLoopPhase => {
                need_loop(&mut c)?;
                c.open_loop.as_mut().unwrap().phase = value;
            }
            SweepParam::OpenLoopFrequency => {
                need_loop(&mut c)?;
                c.open_loop.as_mut().unwrap().frequency = value;
            }
            SweepParam::OpenLoopAmplitude => {
                need_loop(&mut c)?;
                c.open_loop.as_mut().unwrap().amplitude = value;
            }
        }
        let plant = c.plant();
        plant.validate().map_err(|e| ExperimentError::Config(format!("sweep value {value}: {e}")))?;
        c.sim.validate(&plant)?;
        if matches!(c.mode, Mode::Radial | Mode::Axial) {
            c.controller.validate()?;
        }
        Ok(c)
    }

    /// SHA-256 over the canonical JSON form, excluding the output path.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // A tagged enum given by the user replaces the preset's variant wholesale.
                    Some(slot @ toml::Value::Table(_)) if !is_enum_key(&k) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn is_enum_key(key: &str) -> bool {
    matches!(key, "initial" | "magnitude_reference" | "sweep")
}

/// Aggregates of one swept point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub swept_param: String,
    pub swept_value: f64,
    /// `None` when no trajectory at this point stayed for the trapped threshold.
    pub stats: Option<StorageStats>,
    pub n_total: usize,
    pub mean_detection_rate: f64,
    pub mean_scatter_rate: f64,
    pub mean_abs_modulation: f64,
    pub radial_escapes: usize,
    pub axial_escapes: usize,
    pub config_digest: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl ResultRecord {
    fn from_results(param: &str, value: f64, results: &[TrajectoryResult], threshold: f64, digest: &str, seed: u64) -> Self {
        let times: Vec<f64> = results.iter().map(|r| r.storage_time).collect();
        let stats = storage_stats_from_times(&times, threshold).ok();
        let n = results.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TrajectoryResult) -> f64| results.iter().map(f).sum::<f64>() / n;
        Self {
            swept_param: param.to_string(),
            swept_value: value,
            stats,
            n_total: results.len(),
            mean_detection_rate: mean(&|r| r.mean_detection_rate()),
            mean_scatter_rate: mean(&|r| r.mean_scatter_rate()),
            mean_abs_modulation: mean(&|r| r.summary.mean_abs_modulation),
            radial_escapes: results.iter().filter(|r| r.escape_channel == Some(EscapeChannel::Radial)).count(),
            axial_escapes: results.iter().filter(|r| r.escape_channel == Some(EscapeChannel::Axial)).count(),
            config_digest: digest.to_string(),
            seed,
            timestamp: None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.stats.map_or(f64::NAN, |s| s.mean)
    }

    pub fn sem(&self) -> f64 {
        self.stats.map_or(f64::NAN, |s| s.sem)
    }
}

/// Fit applied to a phase sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFit {
    PeriodicGaussian(PeriodicGaussianFit),
    Sinusoid(SinusoidFit),
}

impl SweepFit {
    /// Phase of maximal storage time, wrapped to (−π, π].
    pub fn optimal_phase(&self) -> f64 {
        match self {
            SweepFit::PeriodicGaussian(f) => f.center,
            SweepFit::Sinusoid(f) => crate::dsp::wrap_phase(f.argmax()),
        }
    }

    pub fn eval(&self, phase: f64) -> f64 {
        match self {
            SweepFit::PeriodicGaussian(f) => f.eval(phase),
            SweepFit::Sinusoid(f) => f.eval(phase),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub config_digest: String,
    pub records: Vec<ResultRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<SweepFit>,
    /// Why no fit was attempted or why it failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_note: Option<String>,
}

impl SweepResult {
    /// True when no point had a trapped trajectory.
    pub fn all_degenerate(&self) -> bool {
        self.records.iter().all(|r| r.stats.is_none())
    }

    /// Swept value of the largest mean storage time.
    pub fn empirical_argmax(&self) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.stats.is_some())
            .max_by(|a, b| a.mean().total_cmp(&b.mean()))
            .map(|r| r.swept_value)
    }
}

/// Run every swept point (or the single config point) and fit phase sweeps.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult, ExperimentError> {
    config.validate()?;
    let (param_name, points) = match &config.sweep {
        Some(s) => {
            let values = s.resolve()?;
            let cfgs = values.iter().map(|&v| config.with_param(s.param, v)).collect::<Result<Vec<_>, _>>()?;
            (s.param.name(), values.into_iter().zip(cfgs).collect::<Vec<_>>())
        }
        None => ("none", vec![(0.0, config.clone())]),
    };
    let n = config.n_trajectories;
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| (0..n as u64).map(move |i| (p, i))).collect();
    let prepared = points
        .iter()
        .map(|(_, c)| Ok((c.plant(), c.driver()?)))
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    let results: Vec<TrajectoryResult> = jobs
        .par_iter()
        .map(|&(p, i)| {
            let (plant, driver) = &prepared[p];
            run_job(&points[p].1.sim, plant, driver, config.master_seed, i)
        })
        .collect::<Result<_, _>>()?;

    let digest = config.digest();
    let records: Vec<ResultRecord> = points
        .iter()
        .enumerate()
        .map(|(p, (v, c))| {
            ResultRecord::from_results(
                param_name,
                *v,
                &results[p * n..(p + 1) * n],
                c.sim.trapped_threshold,
                &digest,
                config.master_seed,
            )
        })
        .collect();

    let (fit, fit_note) = match config.sweep.as_ref().map(|s| s.param) {
        Some(SweepParam::PhiPfb) => fit_phase_sweep(config.mode, &records),
        _ => (None, None),
    };
    Ok(SweepResult { config: config.clone(), config_digest: digest, records, fit, fit_note })
}

fn fit_phase_sweep(mode: Mode, records: &[ResultRecord]) -> (Option<SweepFit>, Option<String>) {
    let ok: Vec<&ResultRecord> = records.iter().filter(|r| r.stats.is_some()).collect();
    let phases: Vec<f64> = ok.iter().map(|r| r.swept_value).collect();
    let means: Vec<f64> = ok.iter().map(|r| r.mean()).collect();
    let sems: Vec<f64> = ok.iter().map(|r| r.sem()).collect();
    let fit = match mode {
        Mode::Radial => fit_periodic_gaussian(&phases, &means, &sems).map(SweepFit::PeriodicGaussian),
        Mode::Axial => fit_sinusoid(&phases, &means, &sems).map(SweepFit::Sinusoid),
        _ => return (None, Some(format!("no phase fit defined for {} mode", mode.name()))),
    };
    match fit {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

/// Numbers in exported tables: 12 significant digits, `NaN` for missing.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.11e}")
    }
}

pub const CSV_HEADER: &str = "swept_param,swept_value,mean_storage_s,sem_storage_s,n_trapped,n_total,trapped_fraction";

pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let (n_trapped, frac) = r.stats.map_or((0, 0.0), |s| (s.count, s.trapped_fraction));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.swept_param,
            format_number(r.swept_value),
            format_number(r.mean()),
            format_number(r.sem()),
            n_trapped,
            r.n_total,
            format_number(frac)
        );
    }
    out
}

pub fn sweep_to_json(result: &SweepResult) -> String {
    serde_json::to_string_pretty(result).expect("sweep result serialises")
}

pub fn sweep_from_json(text: &str) -> Result<SweepResult, ExperimentError> {
    serde_json::from_str(text).map_err(|e| ExperimentError::Config(format!("result JSON: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Write `result` to `path` in the requested format.
pub fn export_results(result: &SweepResult, format: Format, path: &Path) -> Result<(), ExperimentError> {
    if result.records.is_empty() {
        return Err(ExperimentError::Config("nothing to export: no records".into()));
    }
    let text = match format {
        Format::Csv => records_to_csv(&result.records),
        Format::Json => sweep_to_json(result),
    };
    write_file(path, text.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| ExperimentError::io(path, e))?;
    f.write_all(bytes).map_err(|e| ExperimentError::io(path, e))
}

/// Decimated diagnostics of one trajectory as CSV.
pub fn diagnostics_to_csv(d: &crate::dynamics::Diagnostics) -> String {
    let mut out = String::from("t_s,energy_j,x_m,y_m,z_m,transmission,magnitude,lo_phase,modulation\n");
    for i in 0..d.len() {
        let row = [d.t[i], d.energy[i], d.x[i], d.y[i], d.z[i], d.transmission[i], d.magnitude[i], d.lo_phase[i], d.modulation[i]];
        let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(mode: Mode) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(mode);
        c.n_trajectories = 4;
        c.sim.max_time = if mode == Mode::Axial { 1e-3 } else { 5e-3 };
        c
    }

    #[test]
    fn presets_validate() {
        for m in [Mode::Radial, Mode::Axial, Mode::OpenLoop, Mode::NoFeedback] {
            ExperimentConfig::preset(m).validate().unwrap();
        }
    }

    #[test]
    fn empty_toml_is_the_radial_preset() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::preset(Mode::Radial));
        let ax = ExperimentConfig::from_toml_str("mode = \"axial\"").unwrap();
        assert_eq!(ax, ExperimentConfig::preset(Mode::Axial));
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::preset(Mode::Radial);
        c.sweep = Some(SweepSpec::phases(16));
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let c = ExperimentConfig::from_toml_str(
            "n_trajectories = 7\n[controller]\nf_pfb = 4000.0\nmagnitude_reference = \"full_swing\"\n",
        )
        .unwrap();
        assert_eq!(c.n_trajectories, 7);
        assert_eq!(c.controller.f_pfb, 4000.0);
        assert_eq!(c.controller.mod_max, 0.11);
        assert_eq!(c.controller.magnitude_reference, crate::dsp::MagnitudeReference::FullSwing);
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::from_toml_str("[cavity]\ng0 = \"fast\"").unwrap_err().to_string();
        assert!(e.contains("cavity.g0"), "{e}");
        let e = ExperimentConfig::from_toml_str("[controller]\nbogus = 1").unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml_str("[controller]\nmod_max = 1.0").unwrap_err().to_string();
        assert!(e.contains("mod_max"), "{e}");
        let e = ExperimentConfig::from_toml_str("[sim]\ndt_physics = 0.3e-6").unwrap_err().to_string();
        assert!(e.contains("integer multiple"), "{e}");
        let e = ExperimentConfig::from_toml_str("[sweep]\nparam = \"phi_pfb\"").unwrap_err().to_string();
        assert!(e.contains("exactly one"), "{e}");
        assert!(ExperimentConfig::from_toml_str("mode = \"sideways\"").unwrap_err().is_config());
    }

    #[test]
    fn sweep_ranges() {
        let r = SweepSpec::phases(4).resolve().unwrap();
        assert_eq!(r.len(), 4);
        assert!((r[3] - 1.5 * std::f64::consts::PI).abs() < 1e-12);
        let s = SweepSpec { param: SweepParam::FPfb, values: None, range: Some(SweepRange { start: 4e3, stop: 10e3, count: 5, endpoint: true }) };
        assert_eq!(s.resolve().unwrap(), vec![4e3, 5.5e3, 7e3, 8.5e3, 10e3]);
    }

    #[test]
    fn three_point_sweep_bookkeeping() {
        let mut c = quick(Mode::Radial);
        c.n_trajectories = 10;
        c.sweep = Some(SweepSpec::list(SweepParam::PhiPfb, vec![0.0, 1.0, 2.0]));
        let r = run_sweep(&c).unwrap();
        assert_eq!(r.records.len(), 3);
        assert_eq!(r.records.iter().map(|x| x.n_total).sum::<usize>(), 30);
        assert!(r.records.iter().all(|x| x.config_digest == c.digest()));
    }

    #[test]
    fn digest_tracks_inputs_not_output_path() {
        let a = ExperimentConfig::preset(Mode::Radial);
        let mut b = a.clone();
        b.output = Some("elsewhere.csv".into());
        assert_eq!(a.digest(), b.digest());
        b.controller.phi_pfb += 1e-12;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn csv_format_contract() {
        let c = quick(Mode::NoFeedback);
        let r = run_sweep(&c).unwrap();
        let csv = records_to_csv(&r.records);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells.len(), 7);
        let mantissa = cells[2].split('e').next().unwrap();
        assert!(mantissa.chars().filter(|c| c.is_ascii_digit()).count() >= 9, "{}", cells[2]);
        assert!((cells[2].parse::<f64>().unwrap() - r.records[0].mean()).abs() <= 1e-11 * r.records[0].mean());
        assert_eq!(format_number(0.1), "1.00000000000e-1");
        assert_eq!(format_number(f64::NAN), "NaN");
    }

    #[test]
    fn json_round_trip() {
        let mut c = quick(Mode::Axial);
        c.sweep = Some(SweepSpec::phases(5));
        let r = run_sweep(&c).unwrap();
        let text = sweep_to_json(&r);
        let back = sweep_from_json(&text).unwrap();
        assert_eq!(sweep_to_json(&back), text);
        assert_eq!(back.config.digest(), r.config_digest);
    }

    #[test]
    fn zero_trapped_point_is_recorded() {
        let mut c = quick(Mode::NoFeedback);
        c.sim.max_time = 1e-3;
        let r = run_sweep(&c).unwrap();
        assert!(r.records[0].stats.is_none());
        assert!(r.all_degenerate());
        assert!(records_to_csv(&r.records).contains(",NaN,NaN,0,4,"));
    }

    #[test]
    fn open_loop_sweep_needs_drive() {
        let mut c = quick(Mode::Radial);
        c.sweep = Some(SweepSpec::list(SweepParam::OpenLoopPhase, vec![0.0]));
        assert!(c.validate().is_err());
        let mut o = quick(Mode::OpenLoop);
        o.sweep = Some(SweepSpec::list(SweepParam::OpenLoopPhase, vec![0.0, 1.0]));
        assert_eq!(run_sweep(&o).unwrap().records.len(), 2);
    }
}
