//! Pre-baked experiments behind `reproduce <figure>`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    format_number, run_sweep, sweep_to_json, write_file, ExperimentConfig, ExperimentError, Mode, ResultRecord,
    SweepFit, SweepResult, SweepSpec,
};
use crate::analysis::{
    analytic_spectrum, ensemble_spectrum, fit_q_factor, FitScale, ForwardModel, QFitModel, Spectrum, SpectrumFit,
};
use crate::cavity::derive_trap_frequencies;
use crate::dynamics::run_ensemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    /// Transmission spectrum and Q fit without feedback.
    Fig2b,
    /// Radial storage time versus phase at 4, 7 and 10 kHz.
    Fig3,
    /// Best storage time and optimal phase versus feedback frequency.
    Fig4,
    /// Axial storage time versus phase.
    Fig5,
}

impl FromStr for Figure {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fig2b" => Ok(Figure::Fig2b),
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            "fig5" => Ok(Figure::Fig5),
            other => Err(ExperimentError::Config(format!(
                "unknown figure `{other}` (expected fig2b, fig3, fig4 or fig5)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Minutes on a laptop.
    Desk,
    /// Large ensembles and long storage horizons; hours.
    Full,
}

impl FromStr for Scale {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(ExperimentError::Config(format!("unknown scale `{other}` (expected desk or full)"))),
        }
    }
}

/// Plot-ready numeric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format_number(*v)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureOutput {
    pub figure: Figure,
    pub scale: Scale,
    pub tables: Vec<Table>,
    pub sweeps: Vec<SweepResult>,
    pub baseline: Option<ResultRecord>,
    pub spectrum_fit: Option<SpectrumFit>,
}

impl FigureOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// One CSV per table plus one JSON per sweep under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, ExperimentError> {
        let mut written = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            write_file(&p, t.to_csv().as_bytes())?;
            written.push(p);
        }
        for (i, s) in self.sweeps.iter().enumerate() {
            let p = dir.join(format!("{:?}_sweep{i}.json", self.figure).to_lowercase());
            write_file(&p, sweep_to_json(s).as_bytes())?;
            written.push(p);
        }
        Ok(written)
    }
}

struct Sizes {
    n_traj: usize,
    n_phases: usize,
    max_time: f64,
}

fn sizes(fig: Figure, scale: Scale) -> Sizes {
    match (fig, scale) {
        (Figure::Fig2b, Scale::Desk) => Sizes { n_traj: 200, n_phases: 0, max_time: 0.5 },
        (Figure::Fig2b, Scale::Full) => Sizes { n_traj: 1000, n_phases: 0, max_time: 0.5 },
        (Figure::Fig3, Scale::Desk) => Sizes { n_traj: 150, n_phases: 16, max_time: 0.5 },
        (Figure::Fig4, Scale::Desk) => Sizes { n_traj: 100, n_phases: 16, max_time: 0.5 },
        (Figure::Fig3 | Figure::Fig4, Scale::Full) => Sizes { n_traj: 300, n_phases: 32, max_time: 5.0 },
        (Figure::Fig5, Scale::Desk) => Sizes { n_traj: 100, n_phases: 16, max_time: 30e-3 },
        (Figure::Fig5, Scale::Full) => Sizes { n_traj: 300, n_phases: 32, max_time: 0.1 },
    }
}

/// Feedback frequencies of the fig3 and fig4 sweeps.
pub fn figure_frequencies(fig: Figure, scale: Scale) -> Vec<f64> {
    match (fig, scale) {
        (Figure::Fig3, _) => vec![4e3, 7e3, 10e3],
        (Figure::Fig4, Scale::Desk) => vec![4e3, 5.5e3, 7e3, 8.5e3, 10e3],
        (Figure::Fig4, Scale::Full) => (0..=12).map(|i| 4e3 + 500.0 * i as f64).collect(),
        _ => Vec::new(),
    }
}

/// Preset config of `fig` at `scale`, before any frequency or phase is set.
pub fn figure_config(fig: Figure, scale: Scale, seed: u64) -> ExperimentConfig {
    let s = sizes(fig, scale);
    let mode = match fig {
        Figure::Fig2b => Mode::NoFeedback,
        Figure::Fig5 => Mode::Axial,
        _ => Mode::Radial,
    };
    let mut c = ExperimentConfig::preset(mode);
    c.n_trajectories = s.n_traj;
    c.master_seed = seed;
    c.sim.max_time = s.max_time;
    if s.n_phases > 0 {
        c.sweep = Some(SweepSpec::phases(s.n_phases));
    }
    c
}

/// Same ensemble without feedback.
pub fn baseline(config: &ExperimentConfig) -> Result<ResultRecord, ExperimentError> {
    let mut c = config.clone();
    c.mode = Mode::NoFeedback;
    c.sweep = None;
    let r = run_sweep(&c)?;
    Ok(r.records.into_iter().next().expect("single point"))
}

/// Sampling interval of the transmission series, in ticks.
pub const SPECTRUM_DECIMATION: usize = 10;

/// No-feedback transmission ensemble → equal-weight spectrum → Q fit.
pub fn transmission_spectrum_fit(config: &ExperimentConfig) -> Result<(Spectrum, SpectrumFit, ResultRecord), ExperimentError> {
    let mut c = config.clone();
    c.mode = Mode::NoFeedback;
    c.sweep = None;
    c.sim.diagnostics_every = SPECTRUM_DECIMATION;
    c.validate()?;
    let plant = c.plant();
    let results = run_ensemble(c.n_trajectories, &c.sim, &plant, &c.driver()?, c.master_seed)?;
    let dt = c.sim.tick * SPECTRUM_DECIMATION as f64;
    let spectrum = ensemble_spectrum(
        results.iter().filter_map(|r| r.diagnostics.as_ref()).map(|d| d.transmission.as_slice()),
        dt,
    )?;
    let model = QFitModel {
        f_radial: derive_trap_frequencies(&c.trap).radial_hz(),
        cavity: c.cavity,
        forward: ForwardModel::Analytic,
        scale: FitScale::Linear,
    };
    let fit = fit_q_factor(&spectrum, &model)?;
    let record = super::ResultRecord::from_results(
        "none",
        0.0,
        &results,
        c.sim.trapped_threshold,
        &c.digest(),
        c.master_seed,
    );
    Ok((spectrum, fit, record))
}

/// Best storage time implied by a sweep fit.
pub fn fitted_maximum(fit: &SweepFit) -> f64 {
    fit.eval(fit.optimal_phase())
}

/// Phase of the smallest storage time after a circular three-point average.
pub fn smoothed_argmin(records: &[ResultRecord]) -> Option<f64> {
    let n = records.len();
    if n < 3 {
        return None;
    }
    let m: Vec<f64> = records.iter().map(|r| r.mean()).collect();
    (0..n)
        .filter(|&i| m[i].is_finite())
        .map(|i| {
            let nb = [m[(i + n - 1) % n], m[i], m[(i + 1) % n]];
            let finite: Vec<f64> = nb.into_iter().filter(|v| v.is_finite()).collect();
            (i, finite.iter().sum::<f64>() / finite.len() as f64)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| records[i].swept_value)
}

fn sweep_table(name: String, sweep: &SweepResult) -> Table {
    let mut t = Table::new(name, &["phi_pfb", "mean_storage_s", "sem_storage_s", "n_trapped", "n_total", "fit_s"]);
    for r in &sweep.records {
        let fit = sweep.fit.as_ref().map_or(f64::NAN, |f| f.eval(r.swept_value));
        let n = r.stats.map_or(0.0, |s| s.count as f64);
        t.rows.push(vec![r.swept_value, r.mean(), r.sem(), n, r.n_total as f64, fit]);
    }
    t
}

/// Run the preset experiment for `fig` and assemble its tables.
pub fn reproduce_figure(fig: Figure, scale: Scale, seed: u64) -> Result<FigureOutput, ExperimentError> {
    let base = figure_config(fig, scale, seed);
    let mut out = FigureOutput { figure: fig, scale, tables: Vec::new(), sweeps: Vec::new(), baseline: None, spectrum_fit: None };
    match fig {
        Figure::Fig2b => {
            let (spec, fit, record) = transmission_spectrum_fit(&base)?;
            let f_radial = derive_trap_frequencies(&base.trap).radial_hz();
            let model = analytic_spectrum(&spec.freqs, f_radial, fit.q_factor, fit.nonlinearity, fit.peak_power, fit.noise_amp);
            let mut t = Table::new("fig2b_spectrum", &["freq_hz", "psd", "model_psd"]);
            for i in 1..spec.freqs.len() {
                t.rows.push(vec![spec.freqs[i], spec.psd[i], model[i]]);
            }
            let mut s = Table::new(
                "fig2b_fit",
                &["q_factor", "peak_freq_hz", "two_f_radial_hz", "noise_amp", "nonlinearity", "fit_residual", "no_feedback_mean_s", "no_feedback_sem_s"],
            );
            s.rows.push(vec![
                fit.q_factor,
                fit.peak_freq,
                2.0 * f_radial,
                fit.noise_amp,
                fit.nonlinearity,
                fit.fit_residual,
                record.mean(),
                record.sem(),
            ]);
            out.tables = vec![t, s];
            out.spectrum_fit = Some(fit);
            out.baseline = Some(record);
        }
        Figure::Fig3 | Figure::Fig4 => {
            let b = baseline(&base)?;
            let mut summary = Table::new(
                format!("{}_summary", if fig == Figure::Fig3 { "fig3" } else { "fig4" }),
                &["f_pfb_hz", "max_storage_s", "optimal_phi", "fit_width", "fit_baseline_s", "empirical_max_s", "empirical_argmax", "no_feedback_mean_s", "no_feedback_sem_s"],
            );
            for f in figure_frequencies(fig, scale) {
                let c = ExperimentConfig { controller: crate::dsp::ControllerConfig { f_pfb: f, ..base.controller.clone() }, ..base.clone() };
                let sweep = run_sweep(&c)?;
                let (fmax, phi0, width, fb) = match &sweep.fit {
                    Some(fit @ SweepFit::PeriodicGaussian(g)) => (fitted_maximum(fit), g.center, g.width, g.baseline),
                    _ => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
                };
                let emp = sweep.records.iter().map(|r| r.mean()).filter(|v| v.is_finite()).fold(f64::NAN, f64::max);
                summary.rows.push(vec![f, fmax, phi0, width, fb, emp, sweep.empirical_argmax().unwrap_or(f64::NAN), b.mean(), b.sem()]);
                if fig == Figure::Fig3 {
                    out.tables.push(sweep_table(format!("fig3_f{}hz", f.round() as u64), &sweep));
                }
                out.sweeps.push(sweep);
            }
            out.tables.push(summary);
            out.baseline = Some(b);
        }
        Figure::Fig5 => {
            let b = baseline(&base)?;
            let sweep = run_sweep(&base)?;
            out.tables.push(sweep_table("fig5".into(), &sweep));
            let mut s = Table::new(
                "fig5_fit",
                &["f_pfb_hz", "amplitude_s", "amplitude_se_s", "significance", "optimal_phi", "fit_baseline_s", "max_storage_s", "no_feedback_mean_s", "no_feedback_sem_s"],
            );
            if let Some(fit @ SweepFit::Sinusoid(sf)) = &sweep.fit {
                s.rows.push(vec![
                    base.controller.f_pfb,
                    sf.amplitude,
                    sf.amplitude_se,
                    sf.significance(),
                    fit.optimal_phase(),
                    sf.baseline,
                    fitted_maximum(fit),
                    b.mean(),
                    b.sem(),
                ]);
            }
            out.tables.push(s);
            out.sweeps.push(sweep);
            out.baseline = Some(b);
        }
    }
    Ok(out)
}
