use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cavity_qed::analysis::{asymmetry_map, gaussian_smooth_2d};
use cavity_qed::averaging::{averaged_g2, averaged_g3_diagonal, averaged_g3_full, mode_function_ensemble, Ensemble};
use cavity_qed::correlations::{CorrGrid, CorrelationEngine, G3Branch, G3Options};
use cavity_qed::fitting::{fit_damped_oscillation, frequency_sweep, FitOptions, FitResult};
use cavity_qed::operators::{dressed_rungs, dressed_spectrum, Atom};
use cavity_qed::trajectory::{run_trajectory, TrajectoryConfig};
use cavity_qed::units::{angular_to_mhz, rad_per_ns_to_mhz, uniform_grid};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn load_ensemble(cfg: &RunConfig) -> Result<Option<Ensemble>, CliError> {
    match &cfg.ensemble.file {
        Some(path) => {
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(Some(Ensemble::read_csv(name, File::open(path)?)?))
        }
        None => Ok(None),
    }
}

pub fn spectrum(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut p = cfg.system_params()?;
    if cfg.spectrum.resonant {
        p = p.with_delta_a(p.delta_c);
    }
    let levels = dressed_spectrum(&p, cfg.dims()?)?;
    let rungs = dressed_rungs(&levels);
    let mut w = create(out, "spectrum.csv")?;
    writeln!(
        w,
        "# dressed ladder in the drive frame, energies as E/2pi in MHz; rung n holds n excitations; splitting = e_plus - e_minus"
    )?;
    writeln!(w, "n,e_minus_over_2pi_MHz,e_plus_over_2pi_MHz,splitting_over_2pi_MHz")?;
    for r in rungs {
        writeln!(
            w,
            "{},{},{},{}",
            r.n,
            angular_to_mhz(r.lower),
            angular_to_mhz(r.upper),
            angular_to_mhz(r.splitting())
        )?;
    }
    w.flush()?;
    Ok(())
}

fn g2_grid(cfg: &RunConfig) -> Result<CorrGrid, CliError> {
    let p = cfg.system_params()?;
    let dims = cfg.dims()?;
    let taus = uniform_grid(0.0, cfg.g2.tau_max_ns, cfg.g2.tau_step_ns);
    Ok(match load_ensemble(cfg)? {
        Some(ens) => averaged_g2(&ens, &p, dims, &taus)?,
        None => CorrelationEngine::new(p, dims)?.g2(&taus)?,
    })
}

pub fn g2(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut grid = g2_grid(cfg)?.scaled(cfg.output.scale);
    if cfg.g2.symmetric {
        grid = grid.symmetric();
    }
    let mut w = create(out, "g2.csv")?;
    writeln!(w, "tau_ns,value")?;
    for (t, v) in grid.tau1_ns.iter().zip(grid.series()) {
        writeln!(w, "{t},{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn g3cut(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let p = cfg.system_params()?;
    let dims = cfg.dims()?;
    let taus = uniform_grid(0.0, cfg.g3cut.tau_max_ns, cfg.g3cut.tau_step_ns);
    let ens = load_ensemble(cfg)?;
    let engine = match ens {
        None => Some(CorrelationEngine::new(p, dims)?),
        Some(_) => None,
    };
    let branch = |b: G3Branch| -> Result<CorrGrid, CliError> {
        Ok(match (&ens, &engine) {
            (Some(e), _) => averaged_g3_diagonal(e, &p, dims, &taus, b)?,
            (None, Some(engine)) => engine.g3_diagonal(&taus, b)?,
            (None, None) => unreachable!(),
        })
    };
    let pair = branch(G3Branch::PairFirst)?.scaled(cfg.output.scale);
    let single = branch(G3Branch::SingleFirst)?.scaled(cfg.output.scale);

    let mut w = create(out, "g3cut.csv")?;
    writeln!(w, "tau_ns,value,branch")?;
    // Pair detection first is shown at negative delay.
    let pv = pair.series();
    for i in (0..taus.len()).rev() {
        writeln!(w, "{},{},{}", -taus[i], pv[i], G3Branch::PairFirst.label())?;
    }
    for (t, v) in taus.iter().zip(single.series()) {
        writeln!(w, "{t},{v},{}", G3Branch::SingleFirst.label())?;
    }
    w.flush()?;
    Ok(())
}

pub fn g3full(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let p = cfg.system_params()?;
    let dims = cfg.dims()?;
    let axis = uniform_grid(0.0, cfg.g3full.tau_max_ns, cfg.g3full.tau_step_ns);
    let opts = G3Options { memory_cap_bytes: cfg.g3full.memory_cap_mb << 20 };
    let grid = match load_ensemble(cfg)? {
        Some(ens) => averaged_g3_full(&ens, &p, dims, &axis, &axis, &opts)?,
        None => CorrelationEngine::new(p, dims)?.g3_full(&axis, &axis, &opts)?,
    }
    .scaled(cfg.output.scale);
    let smooth = gaussian_smooth_2d(&grid, cfg.g3full.fwhm_ns)?;

    let mut w = create(out, "g3full.csv")?;
    writeln!(w, "tau1_ns,tau2_ns,value,value_smoothed")?;
    for (i, t1) in axis.iter().enumerate() {
        for (j, t2) in axis.iter().enumerate() {
            writeln!(w, "{t1},{t2},{},{}", grid.values[[i, j]], smooth.values[[i, j]])?;
        }
    }
    w.flush()?;
    let a = asymmetry_map(&grid)?;
    println!("asymmetry a_max={} at tau1_ns={} tau2_ns={}", a.a_max, a.a_max_at.0, a.a_max_at.1);
    Ok(())
}

pub fn trajectory(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let t = &cfg.trajectory;
    let tc = TrajectoryConfig {
        t_final_ns: t.t_final_ns,
        dt_ns: t.dt_ns,
        seed: t.seed,
        burn_in_ns: t.burn_in_ns,
        record_stride: t.record_stride,
        initial: (t.initial_photons, if t.initial_excited { Atom::Excited } else { Atom::Ground }),
    };
    let rec = run_trajectory(cfg.system_params()?, cfg.dims()?, &tc)?;
    let mut w = create(out, "trajectory.csv")?;
    rec.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(out, "trajectory_jumps.csv")?;
    rec.write_jumps_csv(&mut w)?;
    w.flush()?;
    println!("trajectory seed={} rng={} jumps={}", rec.seed, rec.rng_algorithm, rec.jumps.len());
    Ok(())
}

#[derive(Deserialize)]
struct SampleRow {
    tau_ns: f64,
    value: f64,
}

#[allow(non_snake_case)]
#[derive(Serialize)]
struct FitJson {
    model_formula: &'static str,
    sign_convention: &'static str,
    decay_ns: f64,
    fast_amp: f64,
    slow_amp: f64,
    omega_over_2pi_MHz: f64,
    Omega_over_2pi_MHz: f64,
    phi_Omega_rad: f64,
    offset: f64,
    residual_rms: f64,
    converged: bool,
    n_iter: usize,
    single_frequency: bool,
    /// Parameter order as above, frequencies in MHz.
    covariance: Vec<Vec<Option<f64>>>,
}

impl From<&FitResult> for FitJson {
    fn from(r: &FitResult) -> Self {
        let m = &r.model;
        let scale = [1.0, 1.0, 1.0, rad_per_ns_to_mhz(1.0), rad_per_ns_to_mhz(1.0), 1.0, 1.0];
        let covariance = (0..7)
            .map(|i| {
                (0..7)
                    .map(|j| {
                        let c = r.covariance[[i, j]] * scale[i] * scale[j];
                        c.is_finite().then_some(c)
                    })
                    .collect()
            })
            .collect();
        Self {
            model_formula: "f(tau) = exp(-tau/T) * (A_omega*cos(omega*tau) - A_Omega*cos(Omega*tau - phi_Omega)) + f0",
            sign_convention: "amplitudes are signed as in the formula; A_Omega >= 0, phi_Omega in (-pi, pi], omega and Omega reported as f/2pi",
            decay_ns: m.decay_ns,
            fast_amp: m.fast_amp,
            slow_amp: m.slow_amp,
            omega_over_2pi_MHz: rad_per_ns_to_mhz(m.fast_freq),
            Omega_over_2pi_MHz: rad_per_ns_to_mhz(m.slow_freq),
            phi_Omega_rad: m.slow_phase,
            offset: m.offset,
            residual_rms: r.residual_rms,
            converged: r.converged,
            n_iter: r.n_iter,
            single_frequency: r.single_frequency,
            covariance,
        }
    }
}

fn fit_options(cfg: &RunConfig) -> FitOptions {
    let d = FitOptions::default();
    FitOptions {
        min_tau_ns: cfg.fit.min_tau_ns.unwrap_or(d.min_tau_ns),
        max_iter: cfg.fit.max_iter.unwrap_or(d.max_iter),
        ..d
    }
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (taus, values) = match &cfg.fit.input {
        Some(path) => {
            let mut rd = csv::Reader::from_path(path).map_err(|e| CliError::Config(e.to_string()))?;
            let mut t = Vec::new();
            let mut v = Vec::new();
            for row in rd.deserialize() {
                let row: SampleRow = row.map_err(|e| CliError::Config(e.to_string()))?;
                t.push(row.tau_ns);
                v.push(row.value);
            }
            (t, v)
        }
        None => {
            let g = g2_grid(cfg)?;
            let v = g.series();
            (g.tau1_ns, v)
        }
    };
    let result = fit_damped_oscillation(&taus, &values, None, &fit_options(cfg))?;
    let mut w = create(out, "fit.json")?;
    serde_json::to_writer_pretty(&mut w, &FitJson::from(&result)).map_err(std::io::Error::other)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let p = cfg.system_params()?;
    let taus = uniform_grid(0.0, cfg.g2.tau_max_ns, cfg.g2.tau_step_ns);
    let ens = load_ensemble(cfg)?;
    let table = frequency_sweep(&cfg.sweep.eta_over_kappa, p, cfg.dims()?, ens.as_ref(), &taus, &fit_options(cfg))?;
    let mut w = create(out, "sweep.csv")?;
    writeln!(w, "eta_over_kappa,omega_over_2pi_MHz,Omega_over_2pi_MHz,sqrt2_eta_over_2pi_MHz,converged")?;
    for row in &table.rows {
        let sqrt2_eta = rad_per_ns_to_mhz(row.sqrt2_eta);
        match &row.fit {
            Ok(f) => writeln!(
                w,
                "{},{},{},{},true",
                row.eta_over_kappa,
                rad_per_ns_to_mhz(f.model.fast_freq),
                rad_per_ns_to_mhz(f.model.slow_freq),
                sqrt2_eta
            )?,
            Err(e) => {
                eprintln!("sweep row eta_over_kappa={} failed: {e}", row.eta_over_kappa);
                writeln!(w, "{},NaN,NaN,{},false", row.eta_over_kappa, sqrt2_eta)?
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn avg_ensemble(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let ens = mode_function_ensemble(&cfg.mode_grid())?;
    let mut w = create(out, "ensemble.csv")?;
    ens.write_csv(&mut w)?;
    w.flush()?;
    println!("ensemble points={} total_weight={}", ens.points.len(), ens.normalization());
    Ok(())
}
