mod common;

use common::*;
use pfb_core::cavity::{coupling_at, derive_trap_frequencies, scattering_rate};
use pfb_core::dynamics::{
    cooling_drive_phase, heating_drive_phase, parametric_growth_rate, run_ensemble, simulate_trajectory, step,
    trajectory_rng, InitialCondition, Motion, Plant,
};
use pfb_core::{AtomState, ControllerConfig, Driver, SimConfig};
use rayon::prelude::*;

#[test]
fn small_oscillation_frequencies_match_derived_values() {
    let plant = silent_plant();
    let f = derive_trap_frequencies(&plant.trap);
    let d = free_run(&plant, Motion::Radial, [0.3e-6, 0.0, 0.0], 100.0 / f.radial_hz(), 1, &Driver::None);
    let fr = dominant_frequency(&d.x, 1e-6);
    assert!((fr / f.radial_hz() - 1.0).abs() < 0.01, "radial {fr} vs {}", f.radial_hz());

    let d = free_run(&plant, Motion::Full, [0.0, 0.0, 5e-9], 200.0 / f.axial_hz(), 1, &Driver::None);
    let fz = dominant_frequency(&d.z, 8e-9);
    assert!((fz / f.axial_hz() - 1.0).abs() < 0.01, "axial {fz} vs {}", f.axial_hz());
}

#[test]
fn noiseless_energy_drift_per_hundred_periods() {
    let plant = silent_plant();
    let period = 1.0 / derive_trap_frequencies(&plant.trap).radial_hz();
    let d = free_run(&plant, Motion::Radial, [3e-6, 1e-6, 0.0], 100.0 * period, 10, &Driver::None);
    let e0 = d.energy[0];
    let worst = d.energy.iter().map(|e| ((e - e0) / e0).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "relative drift {worst:e}");
    // Also small against the oscillation energy itself, not just the well depth.
    let osc = e0 + plant.trap.depth;
    let worst_osc = d.energy.iter().map(|e| ((e - e0) / osc).abs()).fold(0.0, f64::max);
    assert!(worst_osc < 1e-3, "drift relative to oscillation energy {worst_osc:e}");
}

#[test]
fn parametric_envelope_rate_matches_first_order_averaging() {
    let plant = silent_plant();
    let omega = radial_omega(&plant);
    let f2 = omega / std::f64::consts::PI;
    for m in [0.02, 0.06, 0.1] {
        let expected = parametric_growth_rate(m, omega);
        let heat = open_loop_amplitude_rate(&plant, f2, m, heating_drive_phase(0.0), 0.05e-6, 3.0 / expected);
        // One e-fold only: the O(m) micromotion seeds the growing mode, which
        // overtakes the decaying one after a few e-folds.
        let cool = open_loop_amplitude_rate(&plant, f2, m, cooling_drive_phase(0.0), 0.05e-6, 1.0 / expected);
        assert!((heat / expected - 1.0).abs() < 0.1, "m = {m}: heating rate {heat} vs {expected}");
        assert!((cool / -expected - 1.0).abs() < 0.1, "m = {m}: cooling rate {cool} vs {}", -expected);
    }
}

#[test]
fn drive_at_omega_grows_slower_than_at_two_omega() {
    let plant = silent_plant();
    let omega = radial_omega(&plant);
    let f = omega / std::f64::consts::TAU;
    let m = 0.06;
    let duration = 10e-3;
    let at_2w = open_loop_amplitude_rate(&plant, 2.0 * f, m, heating_drive_phase(0.0), 0.2e-6, duration);
    let best_at_w = (0..8)
        .map(|k| open_loop_amplitude_rate(&plant, f, m, k as f64 * std::f64::consts::TAU / 8.0, 0.2e-6, duration))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(best_at_w < at_2w, "ω: {best_at_w}, 2ω: {at_2w}");
}

#[test]
fn recoil_heating_follows_the_random_walk_oracle() {
    // Each scattering event adds ½m⟨|Δv|²⟩ = m·dv² on average, so the mean
    // oscillation energy grows at the time-integrated scattering rate times m·dv².
    let mut plant = Plant::axial();
    plant.noise.kick_scale = 1.0;
    let dv = plant.noise.recoil_momentum / plant.trap.atom_mass;
    let dt = 8e-9;
    let n_steps = 25_000;
    let n_traj = 1000;
    let runs: Vec<(f64, f64, f64, f64)> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(7, i);
            let mut s = AtomState::at_rest();
            let e0 = s.energy(&plant.trap);
            let (mut rate_int, mut half) = (0.0, (0.0, 0.0));
            for k in 0..n_steps {
                s = step(&s, &plant, 0.0, dt, &mut rng).unwrap();
                rate_int += scattering_rate(coupling_at(&s.pos, &plant.cavity), &plant.cavity) * dt;
                if k + 1 == n_steps / 2 {
                    half = (s.energy(&plant.trap) - e0, rate_int);
                }
            }
            (half.0, half.1, s.energy(&plant.trap) - e0, rate_int)
        })
        .collect();
    let n = n_traj as f64;
    let per_event = plant.trap.atom_mass * dv * dv;
    let mean = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let (de_half, de_full) = (mean(&|r| r.0), mean(&|r| r.2));
    let expected_full = mean(&|r| r.3) * per_event;
    let sd = (runs.iter().map(|r| (r.2 - de_full).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((de_full - expected_full).abs() < 3.0 * sd / n.sqrt(), "{de_full:e} vs {expected_full:e} ± {:e}", sd / n.sqrt());
    // Near the antinode the rate is constant, so the growth is linear in time.
    let r0 = scattering_rate(plant.cavity.g0, &plant.cavity);
    let t = dt * n_steps as f64;
    assert!((expected_full / (r0 * t * per_event) - 1.0).abs() < 0.05);
    assert!((de_full / de_half - 2.0).abs() < 0.3, "ratio {}", de_full / de_half);
}

#[test]
fn probe_heats_the_ensemble() {
    let plant = Plant::radial();
    let mut sim = SimConfig::radial(&plant.trap);
    sim.max_time = 20e-3;
    sim.diagnostics_every = 1000;
    // Cold enough that nobody escapes, so the mean is over the same atoms throughout.
    sim.initial = InitialCondition::Thermal { ke_factor: 0.05, spread_factor: 0.3, bound_only: true };
    let res = run_ensemble(100, &sim, &plant, &Driver::None, 5).unwrap();
    assert!(res.iter().all(|r| !r.escaped));
    let means: Vec<f64> = (0..20)
        .map(|k| {
            let v: Vec<f64> = res.iter().filter_map(|r| r.diagnostics.as_ref()?.energy.get(k).copied()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect();
    let blocks: Vec<f64> = means.chunks(5).map(|c| c.iter().sum::<f64>() / 5.0).collect();
    assert!(blocks.windows(2).all(|w| w[1] > w[0]), "{blocks:?}");
}

#[test]
fn conservative_runs_never_escape() {
    let plant = silent_plant();
    let mut sim = SimConfig::radial(&plant.trap);
    sim.max_time = 0.05;
    let res = run_ensemble(20, &sim, &plant, &Driver::None, 3).unwrap();
    assert!(res.iter().all(|r| !r.escaped && r.storage_time == sim.max_time));
}

#[test]
fn ensemble_is_independent_of_worker_count() {
    let plant = Plant::radial();
    let mut sim = SimConfig::radial(&plant.trap);
    sim.max_time = 0.02;
    sim.record_counts = true;
    let driver = Driver::Feedback(ControllerConfig::radial());
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(100, &sim, &plant, &driver, 42).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn single_trajectory_ensemble_is_simulate_trajectory() {
    let plant = Plant::radial();
    let mut sim = SimConfig::radial(&plant.trap);
    sim.max_time = 0.05;
    sim.diagnostics_every = 100;
    let driver = Driver::Feedback(ControllerConfig::radial());
    let one = run_ensemble(1, &sim, &plant, &driver, 9).unwrap();
    assert_eq!(one[0], simulate_trajectory(&sim, &plant, &driver, 9).unwrap());
}

#[test]
fn disjoint_seeds_agree_within_three_standard_errors() {
    let plant = Plant::radial();
    let sim = SimConfig::radial(&plant.trap);
    let stats = |seed| pfb_core::analysis::storage_stats(&run_ensemble(150, &sim, &plant, &Driver::None, seed).unwrap()).unwrap();
    let (a, b) = (stats(101), stats(202));
    assert_ne!(a.mean, b.mean);
    assert!((a.mean - b.mean).abs() < 3.0 * (a.sem.powi(2) + b.sem.powi(2)).sqrt(), "{a:?} {b:?}");
}
