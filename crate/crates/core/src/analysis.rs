//! Post-processing of correlation grids: Gaussian smoothing, asymmetry maps
//! and short-window frequency estimates.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::LeastSquaresSvd;
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;

use crate::correlations::CorrGrid;
use crate::error::{Error, Result};
use crate::units::uniform_spacing;

/// `σ = FWHM / (2 √(2 ln 2))`.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Normalized 1D Gaussian taps for spacing `h`, truncated at `4σ`.
fn gaussian_taps(sigma: f64, h: f64) -> Vec<f64> {
    let radius = (4.0 * sigma / h).ceil() as usize;
    let mut taps: Vec<f64> =
        (0..=2 * radius).map(|i| (-0.5 * ((i as f64 - radius as f64) * h / sigma).powi(2)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|w| *w /= total);
    taps
}

/// Half-sample symmetric reflection of an out-of-range index.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

fn smooth_axis(data: &Array2<f64>, taps: &[f64], axis: Axis) -> Array2<f64> {
    let radius = (taps.len() / 2) as isize;
    let mut out = Array2::zeros(data.raw_dim());
    for (lane_in, mut lane_out) in data.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        let n = lane_in.len();
        for i in 0..n {
            lane_out[i] = taps
                .iter()
                .enumerate()
                .map(|(k, w)| w * lane_in[reflect(i as isize + k as isize - radius, n)])
                .sum();
        }
    }
    out
}

/// Convolve a uniform 2D grid with a normalized isotropic Gaussian of the
/// given FWHM (ns), truncated at 4σ along each axis.
///
/// Edges use half-sample symmetric reflection, which leaves constants
/// unchanged and preserves the grid sum exactly.
pub fn gaussian_smooth_2d(grid: &CorrGrid, fwhm_ns: f64) -> Result<CorrGrid> {
    let tau2 = grid.tau2_ns.as_ref().ok_or_else(|| Error::InvalidParameter("smoothing needs a 2D grid".into()))?;
    if !(fwhm_ns > 0.0 && fwhm_ns.is_finite()) {
        return Err(Error::InvalidParameter("fwhm must be positive".into()));
    }
    let h1 = spacing(&grid.tau1_ns)?;
    let h2 = spacing(tau2)?;
    let sigma = fwhm_to_sigma(fwhm_ns);
    let t1 = gaussian_taps(sigma, h1);
    let t2 = gaussian_taps(sigma, h2);
    for (taps, n) in [(&t1, grid.tau1_ns.len()), (&t2, tau2.len())] {
        let radius = taps.len() / 2;
        if radius >= n {
            return Err(Error::KernelLargerThanGrid { radius, size: n });
        }
    }
    let smoothed = smooth_axis(&smooth_axis(&grid.values, &t1, Axis(0)), &t2, Axis(1));
    Ok(CorrGrid { values: smoothed, ..grid.clone() })
}

fn spacing(axis: &[f64]) -> Result<f64> {
    uniform_spacing(axis).ok_or_else(|| Error::InvalidParameter("axis is not uniform with at least two samples".into()))
}

/// `g³(τ₁, τ₂) - g³(τ₂, τ₁)` on a square grid.
#[derive(Clone, Debug)]
pub struct AsymmetryMap {
    pub tau_ns: Vec<f64>,
    pub values: Array2<f64>,
    /// `max |values|`
    pub a_max: f64,
    /// `(τ₁, τ₂)` of `a_max`, first in row-major order.
    pub a_max_at: (f64, f64),
}

/// A local extremum of the asymmetry map.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Peak {
    pub tau1_ns: f64,
    pub tau2_ns: f64,
    pub value: f64,
}

impl AsymmetryMap {
    /// Strongest strict local maximum (8-neighbourhood) of the signed map
    /// with both indices at least `margin` samples from every edge.
    pub fn interior_peak(&self, margin: usize) -> Option<Peak> {
        let n = self.tau_ns.len();
        let v = &self.values;
        let mut best: Option<Peak> = None;
        let lo = margin.max(1);
        for i in lo..n.saturating_sub(lo) {
            for j in lo..n.saturating_sub(lo) {
                let c = v[[i, j]];
                let is_max = (-1isize..=1).all(|di| {
                    (-1isize..=1).all(|dj| {
                        (di == 0 && dj == 0) || c > v[[(i as isize + di) as usize, (j as isize + dj) as usize]]
                    })
                });
                if is_max && best.is_none_or(|b| c > b.value) {
                    best = Some(Peak { tau1_ns: self.tau_ns[i], tau2_ns: self.tau_ns[j], value: c });
                }
            }
        }
        best
    }
}

pub fn asymmetry_map(grid: &CorrGrid) -> Result<AsymmetryMap> {
    let tau2 = grid.tau2_ns.as_ref().ok_or(Error::NonSquareGrid)?;
    if tau2 != &grid.tau1_ns || grid.values.nrows() != grid.values.ncols() {
        return Err(Error::NonSquareGrid);
    }
    let v = &grid.values;
    let n = v.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let x = v[[i, j]] - v[[j, i]];
            d[[i, j]] = x;
            d[[j, i]] = -x;
        }
    }
    let mut a_max = 0.0;
    let mut at = (grid.tau1_ns.first().copied().unwrap_or(0.0), grid.tau1_ns.first().copied().unwrap_or(0.0));
    for ((i, j), &x) in d.indexed_iter() {
        if x.abs() > a_max {
            a_max = x.abs();
            at = (grid.tau1_ns[i], grid.tau1_ns[j]);
        }
    }
    Ok(AsymmetryMap { tau_ns: grid.tau1_ns.clone(), values: d, a_max, a_max_at: at })
}

/// Settings for [`locate_modulation_frequency`].
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct ModulationOptions {
    /// Degree of the polynomial removed before the transform; 0 removes
    /// the mean only.
    pub detrend_degree: usize,
    /// Search band as `f/2π` in MHz.
    pub band_mhz: Option<(f64, f64)>,
}

/// Dominant frequency (`f/2π`, MHz) of a 1D grid restricted to the window
/// `[t0, t1]` (ns): detrend, Hann taper, zero-padded transform, parabolic
/// interpolation around the strongest bin.
pub fn locate_modulation_frequency(grid: &CorrGrid, window_ns: (f64, f64), opts: &ModulationOptions) -> Result<f64> {
    if grid.is_2d() {
        return Err(Error::InvalidParameter("frequency estimate needs a 1D grid".into()));
    }
    let (t0, t1) = window_ns;
    let (first, last) = match (grid.tau1_ns.first(), grid.tau1_ns.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::WindowTooShort(0)),
    };
    if !(t0 < t1) || t0 < first - 1e-9 || t1 > last + 1e-9 {
        return Err(Error::InvalidParameter(format!("window [{t0}, {t1}] ns is not inside the grid")));
    }
    let series = grid.series();
    let (t, y): (Vec<f64>, Vec<f64>) = grid
        .tau1_ns
        .iter()
        .zip(&series)
        .filter(|(t, _)| **t >= t0 - 1e-9 && **t <= t1 + 1e-9)
        .map(|(t, v)| (*t, *v))
        .unzip();
    if t.len() < 8 {
        return Err(Error::WindowTooShort(t.len()));
    }
    let dt = spacing(&t)?;
    let resid = detrend(&t, &y, opts.detrend_degree)?;

    let n = resid.len();
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    if resid.iter().all(|r| r.abs() <= 1e-12 * scale) {
        return Err(Error::DegenerateSpectrum);
    }
    let nfft = (16 * n).next_power_of_two().max(8192);
    let mut buf = vec![C64::new(0.0, 0.0); nfft];
    for (i, r) in resid.iter().enumerate() {
        let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos();
        buf[i] = C64::new(r * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let mag: Vec<f64> = buf[..nfft / 2 + 1].iter().map(|z| z.norm()).collect();
    let df_mhz = 1e3 / (nfft as f64 * dt);
    let (lo, hi) = opts.band_mhz.unwrap_or((0.0, f64::INFINITY));
    let best = (1..mag.len() - 1)
        .filter(|&i| {
            let f = i as f64 * df_mhz;
            f >= lo && f <= hi && mag[i] > mag[i - 1] && mag[i] >= mag[i + 1]
        })
        .max_by(|&a, &b| mag[a].total_cmp(&mag[b]));
    let i = best.ok_or(Error::DegenerateSpectrum)?;
    let (a, b, c) = (mag[i - 1], mag[i], mag[i + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    Ok((i as f64 + shift) * df_mhz)
}

/// Residual of a least-squares polynomial fit in a centred, scaled variable.
fn detrend(t: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = t.len();
    if degree + 1 >= n {
        return Err(Error::WindowTooShort(n));
    }
    let mid = 0.5 * (t[0] + t[n - 1]);
    let half = (0.5 * (t[n - 1] - t[0])).max(f64::MIN_POSITIVE);
    let mut x = Array2::zeros((n, degree + 1));
    for (i, &ti) in t.iter().enumerate() {
        let s = (ti - mid) / half;
        for k in 0..=degree {
            x[[i, k]] = s.powi(k as i32);
        }
    }
    let yv = Array1::from(y.to_vec());
    let c = x.least_squares(&yv)?.solution;
    Ok((&yv - &x.dot(&c)).to_vec())
}
