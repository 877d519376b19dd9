use cavity_qed::fitting::{fit_damped_oscillation, FitModel, FitOptions};
use cavity_qed::units::{mhz_to_rad_per_ns, uniform_grid};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

fn planted() -> FitModel {
    FitModel {
        decay_ns: 100.0,
        fast_amp: 0.1,
        slow_amp: 0.5,
        fast_freq: mhz_to_rad_per_ns(32.0),
        slow_freq: mhz_to_rad_per_ns(9.0),
        slow_phase: 0.3,
        offset: 1.0,
    }
}

#[test]
fn noiseless_recovery() {
    let m = planted();
    let taus = uniform_grid(0.0, 300.0, 1.0);
    let y: Vec<f64> = taus.iter().map(|&t| m.eval(t)).collect();
    let fit = fit_damped_oscillation(&taus, &y, None, &FitOptions::default()).unwrap();
    let f = fit.model;
    for (got, want) in [
        (f.decay_ns, m.decay_ns),
        (f.fast_amp, m.fast_amp),
        (f.slow_amp, m.slow_amp),
        (f.fast_freq, m.fast_freq),
        (f.slow_freq, m.slow_freq),
        (f.slow_phase, m.slow_phase),
        (f.offset, m.offset),
    ] {
        assert!((got / want - 1.0).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn one_percent_noise_frequency_errors() {
    let m = planted();
    let taus = uniform_grid(0.0, 300.0, 1.0);
    let clean: Vec<f64> = taus.iter().map(|&t| m.eval(t)).collect();
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut errors = Vec::new();
    for seed in 0..100 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let y: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let f = fit_damped_oscillation(&taus, &y, None, &FitOptions::default()).unwrap().model;
        let e = (f.fast_freq / m.fast_freq - 1.0).abs().max((f.slow_freq / m.slow_freq - 1.0).abs());
        errors.push(e);
    }
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p95 = errors[94];
    assert!(p95 < 0.01, "95th percentile {p95}");
}
