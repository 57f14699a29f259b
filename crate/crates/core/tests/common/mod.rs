//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use pfb_core::cavity::derive_trap_frequencies;
use pfb_core::dsp::{demodulate, Prefilter, RbwFilter};
use pfb_core::dynamics::{simulate_trajectory, InitialCondition, Motion, NoiseModel, Plant};
use pfb_core::{Driver, OpenLoopDrive, SimConfig};
use rustfft::FftPlanner;

/// Half-power point of the prefilter measured from its impulse response:
/// DTFT by direct summation, then bisection on the main lobe.
pub fn measured_boxcar_3db(n: usize, fs: f64) -> f64 {
    let mut pf = Prefilter::new(n);
    let h: Vec<f64> = (0..3 * n).map(|k| pf.push(u32::from(k == 0))).collect();
    let gain = |f_over_fs: f64| {
        let z: Complex64 = h.iter().enumerate().map(|(k, &c)| c * Complex64::from_polar(1.0, -TAU * f_over_fs * k as f64)).sum();
        z.norm()
    };
    let (mut lo, mut hi) = (0.0, 1.0 / n as f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if gain(mid) > 0.5f64.sqrt() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) * fs
}

/// Demodulate a real tone through an RBW of `len` ticks; returns the last output.
pub fn rbw_tone(amp: f64, f_tone: f64, theta: f64, f_pfb: f64, tick: f64, len: usize, n: usize) -> Complex64 {
    let mut rbw = RbwFilter::new(len);
    let mut out = Complex64::new(0.0, 0.0);
    for k in 0..n as u64 {
        let x = amp * (TAU * f_tone * k as f64 * tick + theta).sin();
        out = rbw.push(demodulate(x, k, f_pfb, tick));
    }
    out
}

/// RMS RBW magnitude over the last `len` ticks of a steady tone.
pub fn rbw_steady_magnitude(f_tone: f64, f_pfb: f64, tick: f64, len: usize) -> f64 {
    let mut rbw = RbwFilter::new(len);
    let total = 6 * len;
    let mut acc = 0.0;
    for k in 0..total as u64 {
        let x = (TAU * f_tone * k as f64 * tick).sin();
        let z = rbw.push(demodulate(x, k, f_pfb, tick));
        if k as usize >= total - len {
            acc += z.norm_sqr();
        }
    }
    (acc / len as f64).sqrt()
}

pub fn silent_plant() -> Plant {
    let mut p = Plant::radial();
    p.noise = NoiseModel::silent(p.cavity.recoil_momentum());
    p
}

/// Noise-free trajectory from rest at `pos`, sampled every `every` ticks.
pub fn free_run(
    plant: &Plant,
    motion: Motion,
    pos: [f64; 3],
    max_time: f64,
    every: usize,
    driver: &Driver,
) -> pfb_core::dynamics::Diagnostics {
    let mut sim = match motion {
        Motion::Radial => SimConfig::radial(&plant.trap),
        Motion::Full => SimConfig::axial(&plant.trap),
    };
    sim.max_time = max_time;
    sim.initial = InitialCondition::Fixed { pos, vel: [0.0; 3] };
    sim.diagnostics_every = every;
    let r = simulate_trajectory(&sim, plant, driver, 1).expect("trajectory");
    assert!(!r.escaped);
    r.diagnostics.expect("diagnostics")
}

/// Dominant frequency of `x` sampled every `dt`: zero-padded FFT peak
/// refined by a parabola through the log-magnitudes of the three top bins.
pub fn dominant_frequency(x: &[f64], dt: f64) -> f64 {
    let n = (x.len() * 8).next_power_of_two();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut buf: Vec<Complex64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 - 0.5 * (TAU * i as f64 / (x.len() - 1) as f64).cos();
            Complex64::new((v - mean) * w, 0.0)
        })
        .collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..n / 2].iter().map(|z| z.norm()).collect();
    let k = (1..n / 2 - 1).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
    let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
    let delta = 0.5 * (a - c) / (a - 2.0 * b + c);
    (k as f64 + delta) / (n as f64 * dt)
}

/// Least-squares slope of `y` against `t`.
pub fn slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let num: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let den: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    num / den
}

/// Growth rate of the oscillation amplitude under open-loop drive, from the
/// slope of ½·ln(E − E_min) over the run.
pub fn open_loop_amplitude_rate(plant: &Plant, frequency: f64, m: f64, phase: f64, x0: f64, duration: f64) -> f64 {
    let drive = Driver::OpenLoop(OpenLoopDrive { frequency, amplitude: m, phase });
    let d = free_run(plant, Motion::Radial, [x0, 0.0, 0.0], duration, 10, &drive);
    let u0 = plant.trap.depth;
    let y: Vec<f64> = d.energy.iter().map(|e| 0.5 * (e + u0).ln()).collect();
    slope(&d.t, &y)
}

pub fn radial_omega(plant: &Plant) -> f64 {
    TAU * derive_trap_frequencies(&plant.trap).radial_hz()
}

pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

pub fn wrap(p: f64) -> f64 {
    let mut x = p.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    x
}
