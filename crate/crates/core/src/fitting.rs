//! Least-squares fit of the damped two-frequency model
//!
//! `f(τ) = e^{-τ/T} (A_ω cos ωτ - A_Ω cos(Ωτ - φ)) + f0`
//!
//! to correlation data. Times are in ns and frequencies in rad/ns.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Inverse, LeastSquaresSvd, Solve};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::averaging::{averaged_g2, Ensemble};
use crate::correlations::CorrelationEngine;
use crate::error::{Error, Result};
use crate::operators::{HilbertDims, SystemParams};
use crate::units::uniform_spacing;

const N_PARAMS: usize = 7;
const MAX_PEAKS: usize = 4;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct FitModel {
    /// Decay time `T`, ns.
    pub decay_ns: f64,
    /// `A_ω`
    pub fast_amp: f64,
    /// `A_Ω`, entering with a minus sign.
    pub slow_amp: f64,
    /// `ω`, rad/ns.
    pub fast_freq: f64,
    /// `Ω`, rad/ns.
    pub slow_freq: f64,
    /// `φ_Ω`, rad.
    pub slow_phase: f64,
    /// `f0`
    pub offset: f64,
}

impl FitModel {
    pub fn eval(&self, t: f64) -> f64 {
        (-t / self.decay_ns).exp() * (self.fast_amp * (self.fast_freq * t).cos() - self.slow_amp * (self.slow_freq * t - self.slow_phase).cos())
            + self.offset
    }

    fn to_theta(self) -> [f64; N_PARAMS] {
        [self.decay_ns.ln(), self.fast_amp, self.slow_amp, self.fast_freq, self.slow_freq, self.slow_phase, self.offset]
    }

    fn from_theta(th: &[f64; N_PARAMS]) -> Self {
        Self {
            decay_ns: th[0].exp(),
            fast_amp: th[1],
            slow_amp: th[2],
            fast_freq: th[3],
            slow_freq: th[4],
            slow_phase: th[5],
            offset: th[6],
        }
    }

    /// Non-negative frequencies, phase in (-π, π], and `ω ≥ Ω` when that
    /// relabeling is exact (`φ` a multiple of π or a vanishing slow term).
    fn canonical(mut self) -> Self {
        if self.fast_freq < 0.0 {
            self.fast_freq = -self.fast_freq;
        }
        if self.slow_freq < 0.0 {
            self.slow_freq = -self.slow_freq;
            self.slow_phase = -self.slow_phase;
        }
        if self.slow_amp < 0.0 {
            self.slow_amp = -self.slow_amp;
            self.slow_phase += std::f64::consts::PI;
        }
        self.slow_phase = wrap_phase(self.slow_phase);
        self
    }
}

fn wrap_phase(p: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut q = p.rem_euclid(TAU);
    if q > PI {
        q -= TAU;
    }
    q
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: FitModel,
    pub residual_rms: f64,
    /// Residual rms of the starting point that led to `model`.
    pub initial_rms: f64,
    /// Approximate covariance in the order `T, A_ω, A_Ω, ω, Ω, φ, f0`.
    /// Entries are NaN when the normal matrix is singular.
    pub covariance: Array2<f64>,
    pub converged: bool,
    pub n_iter: usize,
    /// Only one spectral peak was resolvable; the slow term is fixed at zero.
    pub single_frequency: bool,
}

#[derive(Copy, Clone, Debug)]
pub struct FitOptions {
    /// Samples with `τ` below this are discarded.
    pub min_tau_ns: f64,
    pub max_iter: usize,
    pub rel_cost_tol: f64,
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { min_tau_ns: 2.0, max_iter: 2000, rel_cost_tol: 1e-10, step_tol: 1e-8 }
    }
}

struct Problem<'a> {
    t: &'a [f64],
    y: &'a [f64],
    free: [bool; N_PARAMS],
}

impl Problem<'_> {
    fn residuals(&self, th: &[f64; N_PARAMS]) -> Array1<f64> {
        let m = FitModel::from_theta(th);
        self.t.iter().zip(self.y).map(|(&t, &y)| m.eval(t) - y).collect()
    }

    fn cost(&self, th: &[f64; N_PARAMS]) -> f64 {
        self.residuals(th).iter().map(|r| r * r).sum::<f64>() * 0.5
    }

    /// Jacobian with respect to `θ = (ln T, A_ω, A_Ω, ω, Ω, φ, f0)`.
    fn jacobian(&self, th: &[f64; N_PARAMS]) -> Array2<f64> {
        let m = FitModel::from_theta(th);
        let mut j = Array2::zeros((self.t.len(), N_PARAMS));
        for (i, &t) in self.t.iter().enumerate() {
            let e = (-t / m.decay_ns).exp();
            let (sw, cw) = (m.fast_freq * t).sin_cos();
            let (so, co) = (m.slow_freq * t - m.slow_phase).sin_cos();
            let osc = m.fast_amp * cw - m.slow_amp * co;
            let row = [
                e * osc * t / m.decay_ns,
                e * cw,
                -e * co,
                -e * m.fast_amp * t * sw,
                e * m.slow_amp * t * so,
                -e * m.slow_amp * so,
                1.0,
            ];
            for k in 0..N_PARAMS {
                if self.free[k] {
                    j[[i, k]] = row[k];
                }
            }
        }
        j
    }

    /// Levenberg-Marquardt with multiplicative damping on the diagonal.
    fn solve(&self, start: [f64; N_PARAMS], opts: &FitOptions) -> Result<([f64; N_PARAMS], bool, usize)> {
        let mut th = start;
        let mut cost = self.cost(&th);
        let mut lambda = 1e-3;
        for iter in 1..=opts.max_iter {
            let j = self.jacobian(&th);
            let r = self.residuals(&th);
            let jtj = j.t().dot(&j);
            let grad = j.t().dot(&r);
            let mut accepted = false;
            while lambda < 1e16 {
                let mut a = jtj.clone();
                for k in 0..N_PARAMS {
                    if self.free[k] {
                        a[[k, k]] += lambda * jtj[[k, k]].max(1e-12);
                    } else {
                        a[[k, k]] = 1.0;
                    }
                }
                let step = match a.solve(&grad.mapv(|g| -g)) {
                    Ok(s) => s,
                    Err(_) => {
                        lambda *= 10.0;
                        continue;
                    }
                };
                let mut trial = th;
                for k in 0..N_PARAMS {
                    trial[k] += step[k];
                }
                let trial_cost = self.cost(&trial);
                if trial_cost.is_finite() && trial_cost <= cost {
                    let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                    let th_norm = th.iter().map(|s| s * s).sum::<f64>().sqrt();
                    let rel = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                    th = trial;
                    cost = trial_cost;
                    lambda = (lambda * 0.1).max(1e-15);
                    accepted = true;
                    if rel < opts.rel_cost_tol || step_norm < opts.step_tol * (th_norm + opts.step_tol) || cost == 0.0 {
                        return Ok((th, true, iter));
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted {
                // No downhill step at any damping: stationary to working precision.
                return Ok((th, true, iter));
            }
        }
        Ok((th, false, opts.max_iter))
    }
}

/// Peaks of the Hann-windowed, zero-padded spectrum of `y - mean(y)`,
/// strongest first, as angular frequencies in rad/ns.
pub fn spectral_peaks(y: &[f64], dt_ns: f64, max_peaks: usize) -> Vec<f64> {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let nfft = (4 * n).next_power_of_two().max(8192);
    let mut buf: Vec<C64> = vec![C64::new(0.0, 0.0); nfft];
    for (i, &v) in y.iter().enumerate() {
        let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos();
        buf[i] = C64::new((v - mean) * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mag: Vec<f64> = buf[..nfft / 2 + 1].iter().map(|z| z.norm()).collect();
    let top = mag.iter().copied().fold(0.0, f64::max);
    if !(top > 1e-14 * (mean.abs() + 1.0) * n as f64) {
        return Vec::new();
    }
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for i in 1..mag.len() - 1 {
        if mag[i] > mag[i - 1] && mag[i] >= mag[i + 1] && mag[i] > 1e-4 * top {
            let (a, b, c) = (mag[i - 1], mag[i], mag[i + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            let freq = (i as f64 + shift) / (nfft as f64 * dt_ns) * std::f64::consts::TAU;
            peaks.push((b, freq));
        }
    }
    peaks.sort_by(|p, q| q.0.total_cmp(&p.0));
    peaks.into_iter().take(max_peaks).map(|p| p.1).collect()
}

/// Decay time from a straight-line fit to the log of the local maxima of
/// `|y - mean|`.
fn envelope_decay(t: &[f64], y: &[f64]) -> f64 {
    let span = t[t.len() - 1] - t[0];
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let dev: Vec<f64> = y.iter().map(|v| (v - mean).abs()).collect();
    let pts: Vec<(f64, f64)> = (1..dev.len() - 1)
        .filter(|&i| dev[i] >= dev[i - 1] && dev[i] >= dev[i + 1] && dev[i] > 0.0)
        .map(|i| (t[i], dev[i].ln()))
        .collect();
    if pts.len() < 2 {
        return span / 3.0;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx).powi(2)));
    let slope = sxy / sxx;
    if slope < -1.0 / (20.0 * span) {
        (-1.0 / slope).clamp(t[1] - t[0], 20.0 * span)
    } else {
        span
    }
}

/// Amplitudes, phase and offset by linear least squares at fixed `T`, `ω`, `Ω`.
fn linear_start(t: &[f64], y: &[f64], decay: f64, fast: f64, slow: Option<f64>) -> Result<FitModel> {
    let cols = if slow.is_some() { 4 } else { 2 };
    let mut x = Array2::zeros((t.len(), cols));
    for (i, &ti) in t.iter().enumerate() {
        let e = (-ti / decay).exp();
        x[[i, 0]] = e * (fast * ti).cos();
        x[[i, cols - 1]] = 1.0;
        if let Some(w) = slow {
            x[[i, 1]] = -e * (w * ti).cos();
            x[[i, 2]] = -e * (w * ti).sin();
        }
    }
    let c = x.least_squares(&Array1::from(y.to_vec()))?.solution;
    let (slow_amp, slow_phase) = match slow {
        Some(_) => (c[1].hypot(c[2]), c[2].atan2(c[1])),
        None => (0.0, 0.0),
    };
    Ok(FitModel {
        decay_ns: decay,
        fast_amp: c[0],
        slow_amp,
        fast_freq: fast,
        slow_freq: slow.unwrap_or(0.0),
        slow_phase,
        offset: c[cols - 1],
    })
}

fn rms(p: &Problem, th: &[f64; N_PARAMS]) -> f64 {
    (2.0 * p.cost(th) / p.t.len() as f64).sqrt()
}

fn covariance(p: &Problem, th: &[f64; N_PARAMS]) -> Array2<f64> {
    let mut j = p.jacobian(th);
    // Convert the ln T column to T.
    let decay = th[0].exp();
    j.column_mut(0).mapv_inplace(|v| v / decay);
    let dof = p.t.len().saturating_sub(p.free.iter().filter(|f| **f).count()).max(1);
    let s2 = 2.0 * p.cost(th) / dof as f64;
    let mut jtj = j.t().dot(&j);
    for k in 0..N_PARAMS {
        if !p.free[k] {
            jtj[[k, k]] = 1.0;
        }
    }
    match jtj.inv() {
        Ok(mut c) => {
            for k in 0..N_PARAMS {
                if !p.free[k] {
                    c.row_mut(k).fill(0.0);
                    c.column_mut(k).fill(0.0);
                }
            }
            c * s2
        }
        Err(_) => Array2::from_elem((N_PARAMS, N_PARAMS), f64::NAN),
    }
}

/// Fit the damped two-frequency model.
///
/// Without `init`, starting frequencies are taken from the strongest
/// spectral peaks (every pair among the four strongest is tried and the
/// lowest residual kept), the decay from the log-envelope and the remaining
/// parameters by linear least squares. Samples with `τ < opts.min_tau_ns`
/// are ignored.
pub fn fit_damped_oscillation(
    taus_ns: &[f64],
    values: &[f64],
    init: Option<FitModel>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if taus_ns.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: taus_ns.len(), found: values.len() });
    }
    let (t, y): (Vec<f64>, Vec<f64>) =
        taus_ns.iter().zip(values).filter(|(t, _)| **t >= opts.min_tau_ns).map(|(t, v)| (*t, *v)).unzip();
    if t.len() < 20 {
        return Err(Error::InsufficientData(format!("{} samples in the fit window, at least 20 needed", t.len())));
    }
    if t.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("fit data must be finite".into()));
    }

    let mut starts: Vec<(FitModel, bool)> = Vec::new();
    match init {
        Some(m) => {
            if !(m.decay_ns > 0.0) {
                return Err(Error::InvalidParameter("initial decay time must be positive".into()));
            }
            starts.push((m, m.slow_amp == 0.0 && m.slow_freq == 0.0));
        }
        None => {
            let dt = uniform_spacing(&t)
                .ok_or_else(|| Error::InvalidParameter("automatic initialization needs a uniform grid".into()))?;
            let peaks = spectral_peaks(&y, dt, MAX_PEAKS);
            let decay = envelope_decay(&t, &y);
            match peaks.len() {
                0 => return Err(Error::DegenerateSpectrum),
                1 => starts.push((linear_start(&t, &y, decay, peaks[0], None)?, true)),
                _ => {
                    for i in 0..peaks.len() {
                        for k in i + 1..peaks.len() {
                            let (hi, lo) = (peaks[i].max(peaks[k]), peaks[i].min(peaks[k]));
                            starts.push((linear_start(&t, &y, decay, hi, Some(lo))?, false));
                        }
                    }
                }
            }
        }
    }

    let mut best: Option<(FitResult, f64)> = None;
    for (start, single) in starts {
        let mut free = [true; N_PARAMS];
        if single {
            free[2] = false;
            free[4] = false;
            free[5] = false;
        }
        let problem = Problem { t: &t, y: &y, free };
        let th0 = start.to_theta();
        let initial_rms = rms(&problem, &th0);
        let (th, converged, n_iter) = problem.solve(th0, opts)?;
        let residual_rms = rms(&problem, &th);
        let model = FitModel::from_theta(&th).canonical();
        let covariance = covariance(&problem, &model.to_theta());
        let result = FitResult { model, residual_rms, initial_rms, covariance, converged, n_iter, single_frequency: single };
        // Prefer converged, correctly ordered fits, then the lowest residual.
        let ordered = model.fast_freq >= model.slow_freq;
        let score = residual_rms * if converged { 1.0 } else { 1e6 } * if ordered { 1.0 } else { 1e3 };
        if best.as_ref().is_none_or(|(_, s)| score < *s) {
            best = Some((result, score));
        }
    }
    let (result, _) = best.expect("at least one start");
    if !result.converged {
        return Err(Error::NoConvergence(format!("fit did not converge in {} iterations", opts.max_iter)));
    }
    Ok(result)
}

/// One drive strength of a sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub eta_over_kappa: f64,
    /// `√2 η`, rad/ns.
    pub sqrt2_eta: f64,
    pub fit: std::result::Result<FitResult, String>,
}

impl SweepRow {
    pub fn fast(&self) -> Option<f64> {
        self.fit.as_ref().ok().map(|f| f.model.fast_freq)
    }

    pub fn slow(&self) -> Option<f64> {
        self.fit.as_ref().ok().map(|f| f.model.slow_freq)
    }
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Largest relative deviation of the fitted `ω` from `target` (rad/ns)
    /// over successful rows.
    pub fn max_fast_deviation(&self, target: f64) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.fast()).map(|w| (w / target - 1.0).abs()).reduce(f64::max)
    }

    /// Whether the fitted `Ω` increases with drive over successful rows.
    pub fn slow_monotone(&self) -> bool {
        let s: Vec<f64> = self.rows.iter().filter_map(|r| r.slow()).collect();
        s.windows(2).all(|w| w[1] > w[0])
    }

    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.fit.is_ok())
    }
}

/// Compute `g²` at each drive strength (averaged over `ensemble` if given),
/// fit it, and tabulate. A failing row is recorded, not propagated.
pub fn frequency_sweep(
    etas_over_kappa: &[f64],
    base: SystemParams,
    dims: HilbertDims,
    ensemble: Option<&Ensemble>,
    taus_ns: &[f64],
    opts: &FitOptions,
) -> Result<SweepTable> {
    if etas_over_kappa.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one drive strength".into()));
    }
    let rows = etas_over_kappa
        .par_iter()
        .map(|&r| {
            let p = base.with_eta_over_kappa(r);
            let fit = (|| {
                let g2 = match ensemble {
                    Some(ens) => averaged_g2(ens, &p, dims, taus_ns)?,
                    None => CorrelationEngine::new(p, dims)?.g2(taus_ns)?,
                };
                fit_damped_oscillation(taus_ns, &g2.series(), None, opts)
            })()
            .map_err(|e| e.to_string());
            SweepRow { eta_over_kappa: r, sqrt2_eta: std::f64::consts::SQRT_2 * p.eta * 1e-3, fit }
        })
        .collect();
    Ok(SweepTable { rows })
}
