//! Welch power spectra and the transmission-spectrum Q-factor fit.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::simplex::{nelder_mead, SimplexOptions};
use super::AnalysisError;
use crate::cavity::{transmission, CavityParams};

/// Shortest series accepted by [`power_spectrum`].
pub const MIN_SERIES_LEN: usize = 1 << 10;

/// One-sided PSD on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
}

impl Spectrum {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// ∫ PSD df over all bins.
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df()
    }

    /// Bin-wise mean of spectra computed on the same grid.
    pub fn average(spectra: &[Spectrum]) -> Option<Spectrum> {
        let first = spectra.first()?;
        let mut psd = vec![0.0; first.psd.len()];
        for s in spectra {
            if s.psd.len() != psd.len() {
                return None;
            }
            for (acc, v) in psd.iter_mut().zip(&s.psd) {
                *acc += v;
            }
        }
        let n = spectra.len() as f64;
        psd.iter_mut().for_each(|v| *v /= n);
        Some(Spectrum { freqs: first.freqs.clone(), psd })
    }
}

fn hann(n: usize) -> Vec<f64> {
    // Periodic Hann, so 50 % overlapped windows sum to a constant.
    (0..n).map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos()).collect()
}

/// Welch estimate with Hann windows, 50 % overlap and per-segment mean
/// removal. `segment_len` defaults to 1024 samples.
pub fn power_spectrum(series: &[f64], sample_dt: f64) -> Result<Spectrum, AnalysisError> {
    power_spectrum_with(series, sample_dt, MIN_SERIES_LEN)
}

pub fn power_spectrum_with(series: &[f64], sample_dt: f64, segment_len: usize) -> Result<Spectrum, AnalysisError> {
    if series.len() < MIN_SERIES_LEN {
        return Err(AnalysisError::SeriesTooShort { len: series.len(), min: MIN_SERIES_LEN });
    }
    if !(sample_dt > 0.0) {
        return Err(AnalysisError::Invalid(format!("sample_dt must be > 0, got {sample_dt}")));
    }
    let n = segment_len.clamp(2, series.len());
    let hop = n / 2;
    let window = hann(n);
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let fs = 1.0 / sample_dt;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let n_bins = n / 2 + 1;
    let mut psd = vec![0.0; n_bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut segments = 0usize;
    let mut start = 0;
    while start + n <= series.len() {
        let seg = &series[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            *p += buf[k].norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (fs * w2 * segments as f64);
    for (k, p) in psd.iter_mut().enumerate() {
        let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
        *p *= scale * one_sided;
    }
    let freqs = (0..n_bins).map(|k| k as f64 * fs / n as f64).collect();
    Ok(Spectrum { freqs, psd })
}

/// Which forward model the Q fit inverts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardModel {
    /// Damped-oscillator line at the second harmonic of the radial motion,
    /// softened by the anharmonic trap, plus a b/f background.
    Analytic,
    /// Spectrum of a synthesised noise-driven oscillator in the Gaussian trap
    /// read out through the transmission nonlinearity (fixed seed).
    Synthesis { seed: u64, n_samples: usize },
}

/// Residual metric of the Q fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScale {
    /// Squared residuals of the PSD normalised to its peak; the line shape dominates.
    #[default]
    Linear,
    /// Squared residuals of ln PSD; every decade of the window counts equally.
    Log,
}

/// Inputs the forward model needs besides the free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QFitModel {
    /// Harmonic radial trap frequency (Hz).
    pub f_radial: f64,
    pub cavity: CavityParams,
    pub forward: ForwardModel,
    pub scale: FitScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFit {
    pub q_factor: f64,
    /// Resonance of the fitted line (Hz).
    pub peak_freq: f64,
    /// Background coefficient b of b/f (PSD units × Hz).
    pub noise_amp: f64,
    /// Peak height of the line component.
    pub peak_power: f64,
    /// Oscillation amplitude in units of the waist that sets the softening.
    pub nonlinearity: f64,
    /// RMS residual over the fit window, in the metric of [`FitScale`].
    pub fit_residual: f64,
}

/// Frequency of the anharmonically softened radial motion:
/// ω(a) ≈ ω₀·(1 − ¾·a²/w²) for a Gaussian well.
pub fn softened_frequency(f0: f64, amplitude_in_waists: f64) -> f64 {
    f0 * (1.0 - 0.75 * amplitude_in_waists * amplitude_in_waists)
}

/// Normalised damped-oscillator power response, unity at `fc`.
pub fn oscillator_response(f: f64, fc: f64, q: f64) -> f64 {
    let damp = f * fc / q;
    let num = fc * fc / q;
    num * num / ((fc * fc - f * f).powi(2) + damp * damp)
}

/// Analytic forward model evaluated on `freqs`.
pub fn analytic_spectrum(freqs: &[f64], f_radial: f64, q: f64, nonlinearity: f64, peak: f64, b: f64) -> Vec<f64> {
    let fc = 2.0 * softened_frequency(f_radial, nonlinearity);
    freqs
        .iter()
        .map(|&f| peak * oscillator_response(f, fc, q) + if f > 0.0 { b / f } else { 0.0 })
        .collect()
}

/// Parameters for [`synthesize_transmission`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisParams {
    pub f_radial: f64,
    pub q: f64,
    /// RMS radial excursion per axis, in waists.
    pub amplitude: f64,
    /// Gaussian trap and transmission readout; otherwise harmonic trap and ρ²/w² readout.
    pub nonlinear: bool,
    pub sample_dt: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Noise-driven damped radial oscillator read out through the cavity.
/// Returns the readout series sampled every `sample_dt`.
pub fn synthesize_transmission(p: &SynthesisParams, cavity: &CavityParams) -> Vec<f64> {
    let omega = TAU * p.f_radial;
    let damping = omega / p.q;
    // Work in units of the waist; harmonic limit has ⟨x²⟩ = D/(γω²).
    let diffusion = p.amplitude * p.amplitude * damping * omega * omega;
    let substeps = ((p.sample_dt * omega / 0.05).ceil() as usize).max(1);
    let h = p.sample_dt / substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let kick = (2.0 * diffusion * h).sqrt();
    let accel = |x: f64, r2: f64| -> f64 {
        if p.nonlinear {
            // −∇ of −(ω²/4)·exp(−2ρ²) in waist units.
            -omega * omega * x * (-2.0 * r2).exp()
        } else {
            -omega * omega * x
        }
    };
    let (mut x, mut y) = (p.amplitude, 0.0);
    let (mut vx, mut vy) = (0.0, p.amplitude * omega);
    let burn_in = (10.0 * p.q / (p.f_radial * p.sample_dt)).ceil() as usize;
    let mut out = Vec::with_capacity(p.n_samples);
    let mut i = 0usize;
    while out.len() < p.n_samples {
        for _ in 0..substeps {
            let r2 = x * x + y * y;
            vx += 0.5 * h * accel(x, r2);
            vy += 0.5 * h * accel(y, r2);
            x += h * vx;
            y += h * vy;
            let r2 = x * x + y * y;
            vx += 0.5 * h * accel(x, r2);
            vy += 0.5 * h * accel(y, r2);
            let decay = (-damping * h).exp();
            vx = vx * decay + kick * normal.sample(&mut rng);
            vy = vy * decay + kick * normal.sample(&mut rng);
        }
        if i >= burn_in {
            let r2 = x * x + y * y;
            out.push(if p.nonlinear {
                transmission(cavity.g0 * (-r2).exp(), cavity)
            } else {
                r2
            });
        }
        i += 1;
    }
    out
}

/// Lower and upper edge of the fit window in units of 2·f_radial.
pub const Q_FIT_WINDOW: (f64, f64) = (0.2, 4.0);

/// Fit Q, the softened line position and a b/f background to `spectrum`
/// by least squares in the [`FitScale`] metric with a multi-start simplex.
pub fn fit_q_factor(spectrum: &Spectrum, model: &QFitModel) -> Result<SpectrumFit, AnalysisError> {
    let f2 = 2.0 * model.f_radial;
    let (lo, hi) = (Q_FIT_WINDOW.0 * f2, Q_FIT_WINDOW.1 * f2);
    let df = spectrum.df();
    let max_f = spectrum.freqs.last().copied().unwrap_or(0.0);
    if df <= 0.0 || max_f < hi || df > lo {
        return Err(AnalysisError::WindowTooNarrow { lo, hi, df, max_f });
    }
    let idx: Vec<usize> = (0..spectrum.freqs.len())
        .filter(|&i| spectrum.freqs[i] >= lo && spectrum.freqs[i] <= hi && spectrum.psd[i] > 0.0)
        .collect();
    if idx.len() < 8 {
        return Err(AnalysisError::WindowTooNarrow { lo, hi, df, max_f });
    }
    let freqs: Vec<f64> = idx.iter().map(|&i| spectrum.freqs[i]).collect();
    let psd: Vec<f64> = idx.iter().map(|&i| spectrum.psd[i]).collect();
    let log_psd: Vec<f64> = psd.iter().map(|p| p.ln()).collect();
    let peak0 = psd.iter().copied().fold(0.0, f64::max);
    let b0 = (spectrum.psd[idx[0]] * freqs[0] * 0.3).max(peak0 * 1e-6 * f2);

    let eval_model = |p: &[f64]| -> Vec<f64> {
        let (peak, alpha, q, b) = unpack(p);
        match model.forward {
            ForwardModel::Synthesis { seed, n_samples } => {
                synthesis_spectrum(&freqs, model, q, alpha, seed, n_samples)
                    .into_iter()
                    .zip(&freqs)
                    .map(|(s, f)| peak * s + b / f)
                    .collect()
            }
            ForwardModel::Analytic => analytic_spectrum(&freqs, model.f_radial, q, alpha, peak, b),
        }
    };
    let cost = |p: &[f64]| -> f64 {
        let m = eval_model(p);
        let sum: f64 = match model.scale {
            FitScale::Log => m.iter().zip(&log_psd).map(|(mv, lp)| (mv.max(1e-300).ln() - lp).powi(2)).sum(),
            FitScale::Linear => m.iter().zip(&psd).map(|(mv, pv)| ((mv - pv) / peak0).powi(2)).sum(),
        };
        sum / m.len() as f64
    };

    let opts = SimplexOptions { max_iter: 3000, f_tol: 1e-13, x_tol: 1e-8 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let starts: &[(f64, f64)] = match model.forward {
        ForwardModel::Analytic => &[
            (1.0, 0.05),
            (2.5, 0.05),
            (6.0, 0.05),
            (15.0, 0.05),
            (1.0, 0.5),
            (2.5, 0.5),
            (6.0, 0.5),
            (15.0, 0.5),
        ],
        ForwardModel::Synthesis { .. } => &[(2.5, 0.1), (8.0, 0.3)],
    };
    for &(q_start, a_start) in starts {
        let x0 = [peak0.ln(), a_start, q_start.ln(), b0.ln()];
        let r = nelder_mead(cost, &x0, &[0.5, 0.1, 0.4, 1.0], &opts);
        // Polish from the best vertex.
        let r = nelder_mead(cost, &r.x, &[0.05, 0.02, 0.05, 0.3], &opts);
        if best.as_ref().is_none_or(|(_, f)| r.f < *f) {
            best = Some((r.x, r.f));
        }
    }
    let (p, f) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(AnalysisError::NonConvergence { residual: f });
    }
    let (peak, alpha, q, b) = unpack(&p);
    Ok(SpectrumFit {
        q_factor: q,
        peak_freq: 2.0 * softened_frequency(model.f_radial, alpha),
        noise_amp: b,
        peak_power: peak,
        nonlinearity: alpha,
        fit_residual: f.sqrt(),
    })
}

fn unpack(p: &[f64]) -> (f64, f64, f64, f64) {
    // Softening capped so the line stays above 1 % of 2·f_radial.
    let alpha = p[1].abs().min(1.14);
    (p[0].exp(), alpha, p[2].exp().clamp(0.05, 1e4), p[3].exp())
}

fn synthesis_spectrum(freqs: &[f64], model: &QFitModel, q: f64, alpha: f64, seed: u64, n_samples: usize) -> Vec<f64> {
    let sample_dt = 1.0 / (10.0 * Q_FIT_WINDOW.1 * 2.0 * model.f_radial);
    let p = SynthesisParams {
        f_radial: model.f_radial,
        q,
        amplitude: alpha.max(1e-3),
        nonlinear: true,
        sample_dt,
        n_samples: n_samples.max(MIN_SERIES_LEN),
        seed,
    };
    let series = synthesize_transmission(&p, &model.cavity);
    let seg = 1usize << 12;
    let s = power_spectrum_with(&series, sample_dt, seg.min(series.len())).expect("synthesised series long enough");
    // Normalise to unit peak, then interpolate onto the requested grid.
    let f2 = 2.0 * model.f_radial;
    let peak = s
        .freqs
        .iter()
        .zip(&s.psd)
        .filter(|(f, _)| **f >= Q_FIT_WINDOW.0 * f2)
        .map(|(_, p)| *p)
        .fold(0.0, f64::max)
        .max(1e-300);
    freqs
        .iter()
        .map(|&f| {
            let x = f / s.df();
            let i = (x.floor() as usize).min(s.psd.len() - 2);
            let frac = x - i as f64;
            ((1.0 - frac) * s.psd[i] + frac * s.psd[i + 1]) / peak
        })
        .collect()
}

/// Mean of per-series Welch spectra, each normalised to unit total power so
/// every trajectory carries equal weight regardless of how bright it was.
/// Series shorter than [`MIN_SERIES_LEN`] and all-constant series are skipped.
pub fn ensemble_spectrum<'a, I>(series: I, sample_dt: f64) -> Result<Spectrum, AnalysisError>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut spectra = Vec::new();
    let mut skipped = 0usize;
    for s in series {
        if s.len() < MIN_SERIES_LEN {
            skipped += 1;
            continue;
        }
        let mut spec = power_spectrum(s, sample_dt)?;
        let total = spec.total_power();
        if !(total > 0.0) {
            skipped += 1;
            continue;
        }
        spec.psd.iter_mut().for_each(|p| *p /= total);
        spectra.push(spec);
    }
    Spectrum::average(&spectra).ok_or_else(|| {
        AnalysisError::Insufficient(format!("no series of at least {MIN_SERIES_LEN} samples ({skipped} skipped)"))
    })
}

/// Integrated power of the bins within `half_width` bins of the maximum.
pub fn peak_integrated_power(spectrum: &Spectrum, half_width: usize) -> f64 {
    let (imax, _) = spectrum
        .psd
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap_or((0, &0.0));
    let lo = imax.saturating_sub(half_width);
    let hi = (imax + half_width).min(spectrum.psd.len() - 1);
    spectrum.psd[lo..=hi].iter().sum::<f64>() * spectrum.df()
}
