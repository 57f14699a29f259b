//! Scan the recoil kick scale and print the no-feedback Q and storage time.
//!
//! The shipped `CALIBRATED_KICK_SCALE` is the value whose ensemble-spectrum Q
//! lands closest to the measured Q ≈ 3 with a no-feedback storage time near
//! 100 ms.
//!
//!     cargo run --release -p pfb-core --example calibrate_kick -- [n_traj] [seeds] [kicks...]

use pfb_core::experiment::{transmission_spectrum_fit, ExperimentConfig, Mode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let seeds: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let kicks: Vec<f64> = if args.len() > 2 {
        args[2..].iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    } else {
        vec![0.8, 1.0, 1.2, 1.5, 2.0]
    };

    println!("kick_scale,seed,q_factor,peak_hz,mean_storage_s,sem_storage_s");
    for &kick in &kicks {
        let mut qs = Vec::new();
        for seed in 1..=seeds {
            let mut c = ExperimentConfig::preset(Mode::NoFeedback);
            c.n_trajectories = n;
            c.master_seed = seed;
            c.noise.kick_scale = kick;
            let (_, fit, rec) = transmission_spectrum_fit(&c)?;
            println!("{kick},{seed},{:.3},{:.0},{:.4},{:.4}", fit.q_factor, fit.peak_freq, rec.mean(), rec.sem());
            qs.push(fit.q_factor);
        }
        let m = qs.iter().sum::<f64>() / qs.len() as f64;
        eprintln!("kick {kick}: mean Q {m:.3}");
    }
    Ok(())
}
