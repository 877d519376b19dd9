//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use cavity_qed::analysis::{asymmetry_map, gaussian_smooth_2d, locate_modulation_frequency, ModulationOptions};
use cavity_qed::correlations::{CorrGrid, CorrSource, CorrelationEngine, G3Branch, G3Options};
use cavity_qed::fitting::{fit_damped_oscillation, frequency_sweep, FitModel, FitOptions};
use cavity_qed::liouvillian::{build_liouvillian, steady_state, DensityMatrix, Propagator};
use cavity_qed::operators::{dressed_rungs, dressed_spectrum, reference, Atom, HilbertDims, Operators, SystemParams};
use cavity_qed::trajectory::{ensemble_average, run_trajectory, JumpChannel, TrajectoryConfig};
use cavity_qed::units::{angular_to_mhz, mhz_to_angular, mhz_to_rad_per_ns, ns_to_us, rad_per_ns_to_mhz, uniform_grid};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Raw-surface `A_max` at η = 3.9κ on the 0..150 ns, 1.5 ns grid.
const GOLDEN_A_MAX: f64 = 0.1062762545005271;
const GOLDEN_REL_TOL: f64 = 1e-8;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn g2_taus() -> Vec<f64> {
    uniform_grid(0.0, 300.0, 1.0)
}

fn coherent_null() -> Outcome {
    // ⟨n⟩ ≈ 0.06: eight photons put the truncation error near 1e-10 and
    // keep the eigendecomposition inside the time budget.
    let p = SystemParams::reference().with_g(0.0).with_eta_over_kappa(2.0);
    let engine = CorrelationEngine::new(p, HilbertDims::new(8).unwrap()).unwrap();
    let axis = uniform_grid(0.0, 150.0, 1.5);
    let g2 = engine.g2(&axis).unwrap();
    let g3 = engine.g3_full(&axis, &axis, &G3Options::default()).unwrap();
    let dev = g2.values.iter().chain(g3.values.iter()).map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    outcome(dev < 1e-6, format!("max |g - 1| = {dev:.2e} over g2 and the 101x101 g3 surface"))
}

fn analytic_steady_state() -> Outcome {
    let dims = HilbertDims::default();
    let ops = Operators::new(dims);
    let mut worst: f64 = 0.0;
    for (ratio, dc) in [(2.0, -12.0), (0.5, 0.0), (1.0, -3.0), (3.0, -12.0), (4.5, 20.0)] {
        let p = SystemParams::reference().with_g(0.0).with_delta_c(mhz_to_angular(dc)).with_eta_over_kappa(ratio);
        let rho = steady_state(&build_liouvillian(&p, dims)).unwrap();
        let n = rho.data().dot(ops.n_phot.data()).diag().sum().re;
        let exact = p.eta.powi(2) / (p.kappa.powi(2) + p.delta_c.powi(2));
        worst = worst.max((n / exact - 1.0).abs());
    }
    outcome(worst < 1e-8, format!("max relative error {worst:.2e} over 5 (eta, delta_c) points"))
}

fn dressed_ladder() -> Outcome {
    let dc = mhz_to_angular(reference::DELTA_C_MHZ);
    let p = SystemParams::reference().with_delta_a(dc);
    let rungs = dressed_rungs(&dressed_spectrum(&p, HilbertDims::default()).unwrap());
    let worst = rungs.iter().take(3).map(|r| (r.splitting() / (2.0 * (r.n as f64).sqrt() * p.g) - 1.0).abs()).fold(0.0, f64::max);
    let s1 = angular_to_mhz(rungs[0].splitting());
    let period_ns = 1e3 / angular_to_mhz(rungs[1].splitting());
    let pass = worst < 1e-10 && (s1 - 32.0).abs() < 1e-9 && (period_ns - 22.0).abs() < 0.5;
    outcome(pass, format!("rel err {worst:.1e}; n=1 splitting {s1:.6} MHz; n=2 period {period_ns:.3} ns"))
}

fn super_rabi_and_constancy() -> (Outcome, Outcome) {
    let base = SystemParams::reference();
    let table = frequency_sweep(&reference::ETA_OVER_KAPPA, base, HilbertDims::default(), None, &g2_taus(), &FitOptions::default()).unwrap();
    let mut ok4 = true;
    let mut d4 = Vec::new();
    let mut ok5 = table.all_converged();
    let mut d5 = Vec::new();
    let target = angular_to_mhz(2.0 * base.g);
    for row in &table.rows {
        let (Some(fast), Some(slow)) = (row.fast(), row.slow()) else {
            ok4 = false;
            ok5 = false;
            continue;
        };
        let ratio = slow / row.sqrt2_eta;
        match row.eta_over_kappa {
            e if e == 1.9 || e == 2.7 => {
                ok4 &= (ratio - 1.0).abs() < 0.10;
                d4.push(format!("{e}k: {ratio:.3}"));
            }
            e if e == 4.5 => {
                ok4 &= ratio < 1.0;
                d4.push(format!("{e}k: {ratio:.3}"));
            }
            _ => {}
        }
        let w = rad_per_ns_to_mhz(fast);
        ok5 &= (w / target - 1.0).abs() <= 0.10;
        d5.push(format!("{}k: {w:.2}", row.eta_over_kappa));
    }
    (
        outcome(ok4, format!("Omega/(sqrt2 eta) {}", d4.join(", "))),
        outcome(ok5, format!("omega/2pi MHz vs 2g0 = {target:.1} +/- 10%: {}", d5.join(", "))),
    )
}

fn g3_ordering() -> Outcome {
    let p = SystemParams::reference().with_eta_over_kappa(4.5);
    let engine = CorrelationEngine::new(p, HilbertDims::default()).unwrap();
    let taus = uniform_grid(0.0, 60.0, 0.5);
    let opts = ModulationOptions { detrend_degree: 2, band_mhz: Some((15.0, 200.0)) };
    let f = |b| locate_modulation_frequency(&engine.g3_diagonal(&taus, b).unwrap(), (0.0, 60.0), &opts).unwrap();
    let pair = f(G3Branch::PairFirst);
    let single = f(G3Branch::SingleFirst);
    let two_g = angular_to_mhz(2.0 * p.g);
    let two_rt2_g = two_g * 2f64.sqrt();
    let pass = pair > single
        && (pair - two_rt2_g).abs() < (pair - two_g).abs()
        && (single - two_g).abs() < (single - two_rt2_g).abs();
    outcome(pass, format!("pair-conditioned {pair:.2} MHz, single-conditioned {single:.2} MHz (2g0 {two_g:.2}, 2sqrt2 g0 {two_rt2_g:.2})"))
}

fn detailed_balance() -> Outcome {
    let p = SystemParams::reference().with_eta_over_kappa(3.9);
    let dims = HilbertDims::default();
    let engine = CorrelationEngine::new(p, dims).unwrap();
    let axis = uniform_grid(0.0, 150.0, 1.5);
    let surface = engine.g3_full(&axis, &axis, &G3Options::default()).unwrap();
    let raw = asymmetry_map(&surface).unwrap();

    // Brute force: the dense exponential path at the extremum and its mirror.
    let dense = CorrelationEngine::with_condition_bound(p, dims, 0.0).unwrap();
    let (t1, t2) = raw.a_max_at;
    let check = dense.g3_full(&[t1, t2], &[t1, t2], &G3Options::default()).unwrap();
    let brute = (check.values[[0, 1]] - check.values[[1, 0]]).abs();
    let agree = (brute - raw.a_max).abs();

    let fwhm = 7.0;
    let smoothed = asymmetry_map(&gaussian_smooth_2d(&surface, fwhm).unwrap()).unwrap();
    let margin = (4.0 * cavity_qed::analysis::fwhm_to_sigma(fwhm) / 1.5).ceil() as usize;
    let peak = smoothed.interior_peak(margin);
    let fit = fit_damped_oscillation(&g2_taus(), &engine.g2(&g2_taus()).unwrap().series(), None, &FitOptions::default()).unwrap();
    let centre = (std::f64::consts::PI / (p.g * 1e-3), std::f64::consts::PI / fit.model.slow_freq);
    let in_box = peak.as_ref().is_some_and(|pk| {
        let d1 = pk.tau1_ns - centre.0;
        let d2 = pk.tau2_ns - centre.1;
        let e1 = pk.tau2_ns - centre.0;
        let e2 = pk.tau1_ns - centre.1;
        (d1.abs() <= 10.0 && d2.abs() <= 10.0) || (e1.abs() <= 10.0 && e2.abs() <= 10.0)
    });
    let golden = (raw.a_max / GOLDEN_A_MAX - 1.0).abs();
    let pass = raw.a_max > 100.0 * 1e-8 && agree < 1e-8 && in_box && golden < GOLDEN_REL_TOL;
    let pk = peak.map(|p| format!("({:.1}, {:.1}) = {:.4}", p.tau1_ns, p.tau2_ns, p.value)).unwrap_or_else(|| "none".into());
    outcome(
        pass,
        format!(
            "A_max {:.10} at ({t1:.1}, {t2:.1}), dense check diff {agree:.1e}, golden rel diff {golden:.1e}; smoothed peak {pk} vs box centre ({:.1}, {:.1})",
            raw.a_max, centre.0, centre.1
        ),
    )
}

fn unraveling() -> Outcome {
    let p = SystemParams::reference().with_eta_over_kappa(4.5);
    let dims = HilbertDims::default();
    let cfg = TrajectoryConfig { t_final_ns: 300.0, seed: 1000, record_stride: 20, ..Default::default() };
    let mean = ensemble_average(p, dims, &cfg, 500).unwrap();
    let prop = Propagator::new(&build_liouvillian(&p, dims), 1e10).unwrap();
    let ops = Operators::new(dims);
    let rho0 = DensityMatrix::basis(dims, 0, Atom::Ground).into_inner();
    let inside = mean
        .times_ns
        .iter()
        .enumerate()
        .filter(|(k, &t)| {
            let n = prop.evolve(&rho0, ns_to_us(t)).unwrap().dot(ops.n_phot.data()).diag().sum().re;
            (mean.mean[*k] - n).abs() <= 3.0 * mean.stderr[*k] + 1e-12
        })
        .count();
    let frac = inside as f64 / mean.times_ns.len() as f64;

    let long = TrajectoryConfig { t_final_ns: 1e6, seed: 7, burn_in_ns: 1000.0, record_stride: 1000, ..Default::default() };
    let rec = run_trajectory(p, dims, &long).unwrap();
    let rate = rec.count(JumpChannel::CavityDecay) as f64 / ns_to_us(rec.duration_ns());
    let n_ss = steady_state(&build_liouvillian(&p, dims)).unwrap().data().dot(ops.n_phot.data()).diag().sum().re;
    let expected = 2.0 * p.kappa * n_ss;
    let rel = (rate / expected - 1.0).abs();
    outcome(
        frac >= 0.95 && rel < 0.05,
        format!("{:.1}% of points within 3 SE; jump rate {rate:.3}/us vs {expected:.3}/us ({:.2}%)", 100.0 * frac, 100.0 * rel),
    )
}

fn small_basis() -> Outcome {
    let dims = HilbertDims::new(2).unwrap();
    let mut worst: f64 = 0.0;
    for ratio in [1.0, 2.7, 4.5] {
        let p = SystemParams::reference().with_eta_over_kappa(ratio);
        let spectral = CorrelationEngine::new(p, dims).unwrap();
        let dense = CorrelationEngine::with_condition_bound(p, dims, 0.0).unwrap();
        assert!(spectral.propagator().is_spectral() && !dense.propagator().is_spectral());
        let taus = uniform_grid(0.0, 100.0, 2.5);
        let axis = uniform_grid(0.0, 60.0, 5.0);
        let pairs: Vec<(CorrGrid, CorrGrid)> = vec![
            (spectral.g2(&taus).unwrap(), dense.g2(&taus).unwrap()),
            (spectral.g3_diagonal(&taus, G3Branch::SingleFirst).unwrap(), dense.g3_diagonal(&taus, G3Branch::SingleFirst).unwrap()),
            (spectral.g3_diagonal(&taus, G3Branch::PairFirst).unwrap(), dense.g3_diagonal(&taus, G3Branch::PairFirst).unwrap()),
            (
                spectral.g3_full(&axis, &axis, &G3Options::default()).unwrap(),
                dense.g3_full(&axis, &axis, &G3Options::default()).unwrap(),
            ),
        ];
        for (a, b) in pairs {
            worst = worst.max(a.values.iter().zip(b.values.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
    }
    outcome(worst < 1e-8, format!("max |spectral - dense| = {worst:.2e} over g2, both g3 cuts and g3 surfaces"))
}

fn random_density(rng: &mut ChaCha20Rng, dim: usize) -> Array2<C64> {
    let m = Array2::from_shape_fn((dim, dim), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let r = m.dot(&m.t().mapv(|z| z.conj()));
    let t = r.diag().sum();
    r / t
}

fn surface(values: Array2<f64>) -> CorrGrid {
    let axis = uniform_grid(0.0, 1.5 * (values.nrows() - 1) as f64, 1.5);
    CorrGrid { tau1_ns: axis.clone(), tau2_ns: Some(axis), values, norm: 1.0, source: CorrSource::Params(SystemParams::reference()) }
}

fn byte_determinism() -> bool {
    let dir = std::env::temp_dir().join(format!("cqed-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.toml");
    fs::write(&cfg, "[system]\neta_over_kappa = 4.5\nn_max = 6\n[trajectory]\nt_final_ns = 300\nseed = 42\n[g3cut]\ntau_max_ns = 30\n").unwrap();
    let run = |sub: &str, out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_cqed"))
            .args([sub, cfg.to_str().unwrap(), "--out-dir", dir.join(out).to_str().unwrap()])
            .output()
            .unwrap()
            .status;
        status.success()
    };
    let mut same = true;
    for (sub, files) in [("trajectory", &["trajectory.csv", "trajectory_jumps.csv"][..]), ("g3cut", &["g3cut.csv"][..])] {
        same &= run(sub, "a") && run(sub, "b");
        for f in files {
            same &= fs::read(dir.join("a").join(f)).ok() == fs::read(dir.join("b").join(f)).ok();
        }
    }
    let _ = fs::remove_dir_all(&dir);
    same
}

fn property_suites() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut failed: Vec<&str> = Vec::new();
    let dims = HilbertDims::new(3).unwrap();
    let max_abs = |a: &Array2<C64>| a.iter().map(|z| z.norm()).fold(0.0, f64::max);

    let (mut trace, mut herm, mut semi) = (true, true, true);
    for _ in 0..10 {
        let p = SystemParams::from_mhz(
            rng.random_range(1.0..30.0),
            rng.random_range(0.5..5.0),
            rng.random_range(0.5..6.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(0.0..10.0),
        )
        .unwrap();
        let l = build_liouvillian(&p, dims);
        let rho = random_density(&mut rng, dims.dim());
        let d = l.apply(&rho).unwrap();
        trace &= l.trace_defect() < 1e-10 && d.diag().sum().norm() < 1e-10;
        herm &= max_abs(&(&d - &d.t().mapv(|z| z.conj()))) < 1e-10;
        let prop = Propagator::new(&l, 1e10).unwrap();
        let (s, t) = (rng.random_range(0.0..0.2), rng.random_range(0.0..0.2));
        let once = prop.evolve(&rho, s + t).unwrap();
        let twice = prop.evolve(&prop.evolve(&rho, s).unwrap(), t).unwrap();
        semi &= max_abs(&(&once - &twice)) < 1e-9;
    }
    if !trace {
        failed.push("trace");
    }
    if !herm {
        failed.push("hermiticity");
    }
    if !semi {
        failed.push("semigroup");
    }

    let g = CorrelationEngine::new(SystemParams::reference().with_eta_over_kappa(2.7), dims).unwrap().g2(&[0.0, 4.0, 17.0]).unwrap().symmetric();
    let v = g.series();
    if !(0..v.len()).all(|k| v[k] == v[v.len() - 1 - k]) {
        failed.push("g2 symmetry");
    }

    let a = Array2::from_shape_fn((24, 24), |_| rng.random_range(-1.0..1.0));
    let b = Array2::from_shape_fn((24, 24), |_| rng.random_range(-1.0..1.0));
    let m = asymmetry_map(&surface(a.clone())).unwrap();
    if !(0..24).all(|i| m.values[[i, i]] == 0.0 && (0..24).all(|j| m.values[[i, j]] == -m.values[[j, i]])) {
        failed.push("antisymmetry");
    }
    let sa = gaussian_smooth_2d(&surface(a.clone()), 4.0).unwrap().values;
    let sb = gaussian_smooth_2d(&surface(b.clone()), 4.0).unwrap().values;
    let mix = gaussian_smooth_2d(&surface(&a * 2.5 + &b), 4.0).unwrap().values;
    let lin = &sa * 2.5 + &sb;
    if !mix.iter().zip(lin.iter()).all(|(u, v)| (u - v).abs() < 1e-12) {
        failed.push("smoothing linearity");
    }
    if (sa.sum() - a.sum()).abs() > 1e-10 {
        failed.push("smoothing mass");
    }

    let planted = FitModel {
        decay_ns: 100.0,
        fast_amp: 0.1,
        slow_amp: 0.5,
        fast_freq: mhz_to_rad_per_ns(32.0),
        slow_freq: mhz_to_rad_per_ns(9.0),
        slow_phase: 0.3,
        offset: 1.0,
    };
    let taus = g2_taus();
    let y: Vec<f64> = taus.iter().map(|&t| planted.eval(t)).collect();
    let f = fit_damped_oscillation(&taus, &y, None, &FitOptions::default()).unwrap().model;
    let recovered = [
        (f.decay_ns, planted.decay_ns),
        (f.fast_amp, planted.fast_amp),
        (f.slow_amp, planted.slow_amp),
        (f.fast_freq, planted.fast_freq),
        (f.slow_freq, planted.slow_freq),
        (f.slow_phase, planted.slow_phase),
        (f.offset, planted.offset),
    ]
    .iter()
    .all(|(x, y)| (x / y - 1.0).abs() < 1e-6);
    if !recovered {
        failed.push("fit recovery");
    }

    if !byte_determinism() {
        failed.push("byte determinism");
    }
    let detail = if failed.is_empty() { "all eight families hold".to_string() } else { format!("failed: {}", failed.join(", ")) };
    outcome(failed.is_empty(), detail)
}

fn main() -> ExitCode {
    cavity_qed::single_threaded_blas();
    let mut all = true;
    let mut report = |id: u32, name: &str, budget: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = budget.is_none_or(|b| took <= b);
        let pass = o.pass && in_time;
        all &= pass;
        let budget = budget.map(|b| format!(" (budget {:.0} s)", b.as_secs_f64())).unwrap_or_default();
        println!("{} [{id}] {name}: {}; {:.2} s{budget}", if pass { "PASS" } else { "FAIL" }, o.detail, took.as_secs_f64());
    };
    let secs = |s: u64| Some(Duration::from_secs(s));

    report(1, "coherent-field null", secs(1), &mut coherent_null);
    report(2, "analytic steady state", secs(1), &mut analytic_steady_state);
    report(3, "dressed ladder", None, &mut dressed_ladder);
    let start = Instant::now();
    let (c4, c5) = super_rabi_and_constancy();
    let sweep_time = start.elapsed();
    let mut c4 = Some(c4);
    let mut c5 = Some(c5);
    // Both criteria share one sweep; its time is charged to the first.
    report(4, "super-Rabi law", secs(120), &mut || {
        let o = c4.take().unwrap();
        Outcome { pass: o.pass && sweep_time <= Duration::from_secs(120), detail: format!("{}; sweep {:.1} s", o.detail, sweep_time.as_secs_f64()) }
    });
    report(5, "vacuum-Rabi constancy", None, &mut || c5.take().unwrap());
    report(6, "g3 frequency ordering", secs(120), &mut g3_ordering);
    report(7, "detailed-balance breakdown", secs(600), &mut detailed_balance);
    report(8, "unraveling consistency", secs(300), &mut unraveling);
    report(9, "small-basis oracle", secs(10), &mut small_basis);
    report(10, "property suites", None, &mut property_suites);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
