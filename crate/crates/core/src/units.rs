//! Unit conventions.
//!
//! Rates and detunings are stored as angular frequencies in rad/µs and times
//! in µs. Everything that crosses the library boundary as a plain number uses
//! the laboratory convention instead: frequencies as `value / 2π` in MHz and
//! times in ns. The helpers here are the only place the factor 2π and the
//! ns/µs factor appear.

use std::f64::consts::TAU;

/// `f/2π` in MHz to angular frequency in rad/µs.
#[inline]
pub fn mhz_to_angular(f_mhz: f64) -> f64 {
    TAU * f_mhz
}

/// Angular frequency in rad/µs to `f/2π` in MHz.
#[inline]
pub fn angular_to_mhz(w: f64) -> f64 {
    w / TAU
}

#[inline]
pub fn ns_to_us(t_ns: f64) -> f64 {
    t_ns * 1e-3
}

#[inline]
pub fn us_to_ns(t_us: f64) -> f64 {
    t_us * 1e3
}

/// Angular frequency in rad/ns to `f/2π` in MHz.
#[inline]
pub fn rad_per_ns_to_mhz(w: f64) -> f64 {
    w * 1e3 / TAU
}

/// `f/2π` in MHz to rad/ns.
#[inline]
pub fn mhz_to_rad_per_ns(f_mhz: f64) -> f64 {
    f_mhz * TAU * 1e-3
}

/// Uniform grid `start, start + step, ...` up to and including `stop`
/// (within a small tolerance on the last point).
pub fn uniform_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0, "grid step must be positive");
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

/// Returns the spacing of `xs` if it is uniform to relative tolerance `1e-9`.
pub fn uniform_spacing(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let h = xs[1] - xs[0];
    if h <= 0.0 {
        return None;
    }
    let tol = 1e-9 * h.abs().max(xs.last().unwrap().abs());
    xs.iter()
        .enumerate()
        .all(|(i, &x)| (x - (xs[0] + i as f64 * h)).abs() <= tol.max(1e-9 * h))
        .then_some(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        assert!((angular_to_mhz(mhz_to_angular(16.0)) - 16.0).abs() < 1e-12);
        assert!((rad_per_ns_to_mhz(mhz_to_rad_per_ns(32.0)) - 32.0).abs() < 1e-12);
        assert!((mhz_to_rad_per_ns(32.0) - 0.201_061_929_829_746_76).abs() < 1e-15);
    }

    #[test]
    fn grid_includes_endpoint() {
        let g = uniform_grid(0.0, 150.0, 1.5);
        assert_eq!(g.len(), 101);
        assert!((g[100] - 150.0).abs() < 1e-9);
        assert_eq!(uniform_spacing(&g).map(|h| (h - 1.5).abs() < 1e-12), Some(true));
        assert_eq!(uniform_spacing(&[0.0, 1.0, 3.0]), None);
    }
}
