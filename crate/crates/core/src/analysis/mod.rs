//! Post-processing of simulated ensembles: spectra, the Q-factor fit,
//! storage-time statistics and the two phase-sweep fit families.

mod fits;
mod simplex;
mod spectrum;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fits::{fit_periodic_gaussian, fit_sinusoid, periodic_gaussian, PeriodicGaussianFit, SinusoidFit};
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};
pub use spectrum::{
    analytic_spectrum, ensemble_spectrum, fit_q_factor, oscillator_response, peak_integrated_power, power_spectrum, power_spectrum_with,
    softened_frequency, synthesize_transmission, FitScale, ForwardModel, QFitModel, Spectrum, SpectrumFit, SynthesisParams,
    MIN_SERIES_LEN, Q_FIT_WINDOW,
};

use crate::dynamics::TrajectoryResult;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("series of length {len} is shorter than the minimum {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("spectrum does not cover the fit window [{lo:.1}, {hi:.1}] Hz (bin width {df:.3} Hz, top {max_f:.1} Hz)")]
    WindowTooNarrow { lo: f64, hi: f64, df: f64, max_f: f64 },
    #[error("fit did not converge (residual {residual:e})")]
    NonConvergence { residual: f64 },
    #[error("no trapped trajectories among {total}")]
    NoTrapped { total: usize },
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("{0}")]
    Invalid(String),
}

/// Storage-time statistics over the trapped subset of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageStats {
    pub mean: f64,
    /// Sample standard deviation over √count.
    pub sem: f64,
    pub count: usize,
    pub total: usize,
    pub trapped_fraction: f64,
}

/// Mean and SEM over storage times at or above `threshold`.
pub fn storage_stats_from_times(times: &[f64], threshold: f64) -> Result<StorageStats, AnalysisError> {
    let trapped: Vec<f64> = times.iter().copied().filter(|&t| t >= threshold).collect();
    let n = trapped.len();
    if n == 0 {
        return Err(AnalysisError::NoTrapped { total: times.len() });
    }
    // Sorting first makes the sums independent of input order.
    let mut sorted = trapped;
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let sem = if n > 1 {
        let var = sorted.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(StorageStats { mean, sem, count: n, total: times.len(), trapped_fraction: n as f64 / times.len() as f64 })
}

/// [`storage_stats_from_times`] over trajectory results with a 2 ms threshold.
pub fn storage_stats(results: &[TrajectoryResult]) -> Result<StorageStats, AnalysisError> {
    storage_stats_with_threshold(results, 2.0e-3)
}

pub fn storage_stats_with_threshold(results: &[TrajectoryResult], threshold: f64) -> Result<StorageStats, AnalysisError> {
    let times: Vec<f64> = results.iter().map(|r| r.storage_time).collect();
    storage_stats_from_times(&times, threshold)
}
