//! Regenerates the demo measurement files under `examples/data/`:
//! a planar and a cavity decay trace, a pillar spectrum, and a
//! saturation curve, all with fixed seeds so the files are
//! reproducible. Run with `cargo run --example make_demo_data`.

use std::path::PathBuf;

use dotfoundry::photon::io::{write_decay_csv, write_saturation_csv, write_spectrum_csv};
use dotfoundry::photon::{DecayTrace, Spectrum, SpectrumAxis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

fn poissonize(mu: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    mu.iter()
        .map(|&m| if m > 1e-9 { Poisson::new(m).unwrap().sample(rng) } else { 0.0 })
        .collect()
}

/// Instrument-like decay: flat background, a fast rise at `t0`, then a
/// clean exponential tail with the requested lifetime.
fn decay_counts(time_ps: &[f64], lifetime_ps: f64, peak: f64, seed: u64) -> Vec<f64> {
    let t0 = 240.0;
    let background = 3.0;
    let mu: Vec<f64> = time_ps
        .iter()
        .map(|&t| {
            let pulse = if t >= t0 {
                peak * (-(t - t0) / lifetime_ps).exp()
            } else {
                peak * ((t - t0) / 30.0).exp()
            };
            background + pulse
        })
        .collect();
    poissonize(&mu, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    std::fs::create_dir_all(&dir).expect("create examples/data");

    let time_ps: Vec<f64> = (0..501).map(|i| i as f64 * 24.0).collect();
    for (name, lifetime_ps, seed) in
        [("decay_planar", 1120.0, 11u64), ("decay_cavity", 530.0, 12)]
    {
        let trace = DecayTrace {
            counts: decay_counts(&time_ps, lifetime_ps, 9000.0, seed),
            time_ps: time_ps.clone(),
            description: name.to_string(),
        };
        write_decay_csv(&trace, &dir.join(format!("{name}.csv"))).unwrap();
    }

    let center_nm = 915.01;
    let hwhm_nm = center_nm / (2.0 * 1438.0);
    let wavelengths: Vec<f64> = (0..601).map(|i| 912.0 + i as f64 * 0.01).collect();
    let mu: Vec<f64> = wavelengths
        .iter()
        .map(|&w| {
            let u = (w - center_nm) / hwhm_nm;
            300.0 + 12000.0 / (1.0 + u * u)
        })
        .collect();
    let spectrum = Spectrum {
        axis: SpectrumAxis::WavelengthNm,
        counts: poissonize(&mu, &mut ChaCha8Rng::seed_from_u64(13)),
        positions: wavelengths,
    };
    write_spectrum_csv(&spectrum, &dir.join("spectrum_pillar.csv")).unwrap();

    let powers_mw: [f64; 14] = [
        0.1, 0.2, 0.35, 0.5, 0.7, 0.9, 1.2, 1.5, 1.9, 2.3, 2.8, 3.2, 3.6, 4.0,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let noise = Normal::new(0.0, 8000.0).unwrap();
    let counts: Vec<f64> = powers_mw
        .iter()
        .map(|&p| 1_679_000.0 * (1.0 - (-p / 0.85).exp()) + noise.sample(&mut rng))
        .collect();
    write_saturation_csv(&powers_mw, &counts, &dir.join("saturation.csv")).unwrap();

    println!("wrote demo data to {}", dir.display());
}
