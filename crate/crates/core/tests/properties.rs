mod common;

use std::f64::consts::TAU;

use common::circular_distance;
use pfb_core::analysis::{fit_periodic_gaussian, fit_sinusoid, periodic_gaussian, storage_stats_from_times};
use pfb_core::cavity::{coupling_at, detection_rate, scattering_rate, trap_force, trap_potential, transmission};
use pfb_core::{CavityParams, Controller, ControllerConfig, Position3, TrapParams};
use proptest::prelude::*;

proptest! {
    #[test]
    fn transmission_is_decreasing_and_bounded(a in 0.0f64..2e9, b in 0.0f64..2e9) {
        let c = CavityParams::default();
        prop_assert_eq!(transmission(0.0, &c), 1.0);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (t_lo, t_hi) = (transmission(lo, &c), transmission(hi, &c));
        prop_assert!(t_hi > 0.0 && t_lo <= 1.0);
        if hi > lo * (1.0 + 1e-9) {
            prop_assert!(t_hi < t_lo);
        }
    }

    #[test]
    fn rates_are_non_negative(g in -2e9f64..2e9) {
        let c = CavityParams::default();
        prop_assert!(scattering_rate(g, &c) >= 0.0);
        prop_assert!(detection_rate(g, &c) >= 0.0);
        prop_assert!(scattering_rate(g, &c) <= c.max_scatter_rate * (1.0 + 1e-12));
    }

    #[test]
    fn coupling_symmetry(x in -40e-6f64..40e-6, y in -40e-6f64..40e-6, z in -2e-6f64..2e-6) {
        let c = CavityParams::default();
        let g = coupling_at(&Position3::new(x, y, z), &c);
        prop_assert_eq!(g, coupling_at(&Position3::new(-x, y, z), &c));
        prop_assert_eq!(g, coupling_at(&Position3::new(x, -y, z), &c));
        let shifted = coupling_at(&Position3::new(x, y, z + c.probe_wavelength / 2.0), &c);
        prop_assert!((shifted.abs() - g.abs()).abs() <= 1e-9 * c.g0);
    }

    #[test]
    fn force_is_minus_gradient(x in -30e-6f64..30e-6, y in -30e-6f64..30e-6, z in -0.4e-6f64..0.4e-6, m in -0.3f64..0.3) {
        let t = TrapParams::default();
        let p = Position3::new(x, y, z);
        let f = trap_force(&p, &t, m);
        let scale = f.norm().max(1e-3 * t.depth / t.waist);
        for axis in 0..3 {
            let h = if axis == 2 { 1e-12 } else { 1e-10 };
            let mut a = p;
            let mut b = p;
            a[axis] += h;
            b[axis] -= h;
            let fd = -(trap_potential(&a, &t, m) - trap_potential(&b, &t, m)) / (2.0 * h);
            prop_assert!((fd - f[axis]).abs() < 1e-6 * scale, "axis {} fd {} analytic {}", axis, fd, f[axis]);
        }
    }

    #[test]
    fn drive_never_exceeds_mod_max(counts in prop::collection::vec(0u32..20, 1..3000), mm in 0.01f64..0.9, phi in 0.0f64..TAU) {
        let cfg = ControllerConfig { mod_max: mm, phi_pfb: phi, ..ControllerConfig::radial() };
        let mut ctl = Controller::new(cfg, 1e6).unwrap();
        for c in counts {
            prop_assert!(ctl.process_tick(c).modulation.abs() <= mm);
        }
    }

    #[test]
    fn tone_phase_shift_moves_the_lo_by_the_same_amount(theta in 0.0f64..TAU, delta in 0.0f64..TAU) {
        let cfg = ControllerConfig::radial();
        let run = |phase: f64| {
            let mut ctl = Controller::new(cfg.clone(), 1e6).unwrap();
            for k in 0..3000u64 {
                let rate = 500.0 * (1.0 + 0.5 * (TAU * 7e3 * k as f64 * 1e-6 + phase).sin());
                ctl.process_tick(rate.round() as u32);
            }
            (ctl.state().lo_phase, ctl.magnitude())
        };
        let (lo_a, mag_a) = run(theta);
        let (lo_b, mag_b) = run(theta + delta);
        prop_assert!(circular_distance(lo_b - lo_a, delta) < 0.01);
        prop_assert!((mag_a / mag_b - 1.0).abs() < 0.01);
    }

    #[test]
    fn storage_stats_ignore_order(mut times in prop::collection::vec(0.0f64..1.0, 1..200), seed in any::<u64>()) {
        let a = storage_stats_from_times(&times, 2e-3);
        let n = times.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            times.swap(i, (s >> 33) as usize % (i + 1));
        }
        let b = storage_stats_from_times(&times, 2e-3);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one side failed"),
        }
    }

    #[test]
    fn phase_fits_are_invariant_under_two_pi_shifts(center in -3.0f64..3.0, shift in -3i32..3) {
        let phases: Vec<f64> = (0..16).map(|k| k as f64 * TAU / 16.0).collect();
        let means: Vec<f64> = phases.iter().map(|&p| periodic_gaussian(p, 0.3, center, 0.9, 0.1) + 0.002 * (3.0 * p).sin()).collect();
        let sems = vec![0.01; 16];
        let shifted: Vec<f64> = phases.iter().map(|p| p + TAU * shift as f64).collect();
        let a = fit_periodic_gaussian(&phases, &means, &sems).unwrap();
        let b = fit_periodic_gaussian(&shifted, &means, &sems).unwrap();
        prop_assert!(circular_distance(a.center, b.center) < 1e-6);
        prop_assert!(a.center > -std::f64::consts::PI && a.center <= std::f64::consts::PI);
        let s_a = fit_sinusoid(&phases, &means, &sems).unwrap();
        let s_b = fit_sinusoid(&shifted, &means, &sems).unwrap();
        prop_assert!(circular_distance(s_a.phase, s_b.phase) < 1e-9);
        prop_assert!((s_a.amplitude - s_b.amplitude).abs() < 1e-9);
    }
}
