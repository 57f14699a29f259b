//! Phase-sweep fits: a 2π-periodic Gaussian (radial sweeps) and a
//! sinusoid (axial sweeps).

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::simplex::{nelder_mead, SimplexOptions};
use super::AnalysisError;
use crate::dsp::wrap_phase;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGaussianFit {
    pub amplitude: f64,
    /// Centre φ₀, wrapped to (−π, π].
    pub center: f64,
    pub width: f64,
    pub baseline: f64,
    /// Weighted RMS residual.
    pub residual: f64,
    /// Set when the data carry no peak (amplitude ≈ 0 or width pinned).
    pub degenerate: bool,
}

impl PeriodicGaussianFit {
    pub fn eval(&self, phase: f64) -> f64 {
        periodic_gaussian(phase, self.amplitude, self.center, self.width, self.baseline)
    }
}

pub fn periodic_gaussian(phase: f64, amplitude: f64, center: f64, width: f64, baseline: f64) -> f64 {
    let d = wrap_phase(phase - center);
    amplitude * (-d * d / (2.0 * width * width)).exp() + baseline
}

fn weights(sems: &[f64], n: usize) -> Vec<f64> {
    if sems.len() == n && sems.iter().all(|s| s.is_finite() && *s > 0.0) {
        sems.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        vec![1.0; n]
    }
}

fn check_lengths(phases: &[f64], means: &[f64], sems: &[f64]) -> Result<(), AnalysisError> {
    if phases.len() != means.len() || (!sems.is_empty() && sems.len() != phases.len()) {
        return Err(AnalysisError::Invalid("phases, means and sems must have equal lengths".into()));
    }
    Ok(())
}

/// Angular extent covered by the phases on the circle (2π minus the largest gap).
fn phase_span(phases: &[f64]) -> f64 {
    let mut p: Vec<f64> = phases.iter().map(|x| x.rem_euclid(TAU)).collect();
    p.sort_by(f64::total_cmp);
    p.dedup();
    if p.len() < 2 {
        return 0.0;
    }
    let mut gap: f64 = TAU - (p[p.len() - 1] - p[0]);
    for w in p.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    TAU - gap
}

/// Weighted least squares of S(φ) = A·exp(−wrap(φ−φ₀)²/2σ²) + B with
/// eight simplex starts spread over φ₀. Weights are 1/sem², or uniform
/// when any sem is zero.
pub fn fit_periodic_gaussian(phases: &[f64], means: &[f64], sems: &[f64]) -> Result<PeriodicGaussianFit, AnalysisError> {
    check_lengths(phases, means, sems)?;
    if phases.len() < 5 {
        return Err(AnalysisError::Insufficient(format!("{} phase points, need >= 5", phases.len())));
    }
    if phase_span(phases) < 1.5 * PI - 1e-9 {
        return Err(AnalysisError::Insufficient("phase points must span at least 1.5π".into()));
    }
    let w = weights(sems, phases.len());
    let (lo, hi) = means.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
    let scale = hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE);
    let spread = hi - lo;
    if spread <= 1e-12 * scale {
        return Ok(PeriodicGaussianFit {
            amplitude: 0.0,
            center: 0.0,
            width: 1.0,
            baseline: means.iter().sum::<f64>() / means.len() as f64,
            residual: 0.0,
            degenerate: true,
        });
    }
    let wsum: f64 = w.iter().sum();
    // Parameters: A/scale, φ₀, ln σ, B/scale.
    let cost = |p: &[f64]| -> f64 {
        let sigma = p[2].exp().clamp(1e-3, 20.0);
        phases
            .iter()
            .zip(means)
            .zip(&w)
            .map(|((&ph, &m), &wt)| {
                let r = m / scale - periodic_gaussian(ph, p[0], p[1], sigma, p[3]);
                wt * r * r
            })
            .sum::<f64>()
            / wsum
    };
    let opts = SimplexOptions { max_iter: 4000, f_tol: 1e-14, x_tol: 1e-9 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for k in 0..8 {
        let phi0 = -PI + (k as f64 + 0.5) * TAU / 8.0;
        let x0 = [spread / scale, phi0, 0.8f64.ln(), lo / scale];
        let r = nelder_mead(cost, &x0, &[0.3 * spread / scale, 0.4, 0.3, 0.1 * spread / scale], &opts);
        let r = nelder_mead(cost, &r.x, &[0.05 * spread / scale, 0.05, 0.05, 0.02 * spread / scale], &opts);
        if best.as_ref().is_none_or(|(_, f)| r.f < *f) {
            best = Some((r.x, r.f));
        }
    }
    let (p, f) = best.unwrap();
    if !f.is_finite() {
        return Err(AnalysisError::NonConvergence { residual: f });
    }
    let width = p[2].exp().clamp(1e-3, 20.0);
    let amplitude = p[0] * scale;
    let degenerate = amplitude.abs() < 1e-6 * scale || width <= 1.01e-3 || width >= 19.9;
    Ok(PeriodicGaussianFit {
        amplitude,
        center: wrap_phase(p[1]),
        width,
        baseline: p[3] * scale,
        residual: f.sqrt() * scale,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    /// Non-negative amplitude A of A·sin(φ − φ₀) + B.
    pub amplitude: f64,
    /// Standard error of the amplitude.
    pub amplitude_se: f64,
    /// φ₀, wrapped to (−π, π].
    pub phase: f64,
    pub baseline: f64,
    pub residual: f64,
}

impl SinusoidFit {
    pub fn eval(&self, phase: f64) -> f64 {
        self.amplitude * (phase - self.phase).sin() + self.baseline
    }

    /// Phase at which the fitted curve is maximal.
    pub fn argmax(&self) -> f64 {
        wrap_phase(self.phase + PI / 2.0)
    }

    pub fn significance(&self) -> f64 {
        if self.amplitude_se > 0.0 {
            self.amplitude / self.amplitude_se
        } else if self.amplitude > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Linear weighted least squares in the basis {sin φ, cos φ, 1}.
pub fn fit_sinusoid(phases: &[f64], means: &[f64], sems: &[f64]) -> Result<SinusoidFit, AnalysisError> {
    check_lengths(phases, means, sems)?;
    let mut distinct: Vec<f64> = phases.iter().map(|p| p.rem_euclid(TAU)).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    if distinct.len() < 3 {
        return Err(AnalysisError::Insufficient(format!("{} distinct phases, need >= 3", distinct.len())));
    }
    let weighted = sems.len() == phases.len() && sems.iter().all(|s| s.is_finite() && *s > 0.0);
    let w = weights(sems, phases.len());
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for ((&ph, &m), &wt) in phases.iter().zip(means).zip(&w) {
        let row = Vector3::new(ph.sin(), ph.cos(), 1.0);
        ata += wt * row * row.transpose();
        atb += wt * m * row;
    }
    let cov = ata.try_inverse().ok_or_else(|| AnalysisError::Insufficient("singular normal equations".into()))?;
    let coef = cov * atb;
    let (a, c, b) = (coef[0], coef[1], coef[2]);
    let rss: f64 = phases
        .iter()
        .zip(means)
        .zip(&w)
        .map(|((&ph, &m), &wt)| wt * (m - (a * ph.sin() + c * ph.cos() + b)).powi(2))
        .sum();
    let n = phases.len() as f64;
    let dof = (n - 3.0).max(1.0);
    // Unweighted fits estimate the noise level from the residuals.
    let cov = if weighted { cov } else { cov * (rss / dof) };
    let amplitude = (a * a + c * c).sqrt();
    let amplitude_se = if amplitude > 0.0 {
        ((a * a * cov[(0, 0)] + c * c * cov[(1, 1)] + 2.0 * a * c * cov[(0, 1)]) / (amplitude * amplitude))
            .max(0.0)
            .sqrt()
    } else {
        cov[(0, 0)].max(cov[(1, 1)]).sqrt()
    };
    let wsum: f64 = w.iter().sum();
    Ok(SinusoidFit {
        amplitude,
        amplitude_se,
        phase: wrap_phase((-c).atan2(a)),
        baseline: b,
        residual: (rss / wsum).sqrt(),
    })
}
