//! Averaging of correlation functions over a distribution of atomic
//! positions, reduced to a weighted set of `(g, Δa)` pairs.
//!
//! Numerators and photon numbers are averaged separately and only then
//! divided; averaging normalized correlations would weight dim positions as
//! much as bright ones.

use std::io::{Read, Write};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::{CorrGrid, CorrSource, CorrelationEngine, G3Branch, G3Options, RawCorrelation};
use crate::error::{Error, Result};
use crate::operators::{reference, HilbertDims, SystemParams};
use crate::units::{angular_to_mhz, mhz_to_angular};

/// One atomic position, reduced to what enters the dynamics.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EnsemblePoint {
    /// Coupling in rad/µs.
    pub g: f64,
    /// Atom-laser detuning in rad/µs, light shifts included.
    pub delta_a: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub name: String,
    pub points: Vec<EnsemblePoint>,
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
struct PointRow {
    g_over_2pi_MHz: f64,
    delta_a_over_2pi_MHz: f64,
    weight: f64,
}

impl Ensemble {
    pub fn new(name: impl Into<String>, points: Vec<EnsemblePoint>) -> Result<Self> {
        let ens = Self { name: name.into(), points };
        ens.validate()?;
        Ok(ens)
    }

    /// A single point of weight one.
    pub fn single(g: f64, delta_a: f64) -> Self {
        Self { name: "single".into(), points: vec![EnsemblePoint { g, delta_a, weight: 1.0 }] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for p in &self.points {
            if !(p.weight >= 0.0 && p.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!("ensemble weight {} is not a non-negative number", p.weight)));
            }
            if !p.g.is_finite() || !p.delta_a.is_finite() {
                return Err(Error::InvalidParameter("ensemble point is not finite".into()));
            }
        }
        if !(self.normalization() > 0.0) {
            return Err(Error::InvalidParameter("ensemble has no point with positive weight".into()));
        }
        Ok(())
    }

    /// Sum of weights.
    pub fn normalization(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }

    /// Reads columns `g_over_2pi_MHz,delta_a_over_2pi_MHz,weight`.
    pub fn read_csv<R: Read>(name: impl Into<String>, r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut points = Vec::new();
        for row in rd.deserialize() {
            let row: PointRow = row?;
            points.push(EnsemblePoint {
                g: mhz_to_angular(row.g_over_2pi_MHz),
                delta_a: mhz_to_angular(row.delta_a_over_2pi_MHz),
                weight: row.weight,
            });
        }
        Self::new(name, points)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for p in &self.points {
            wr.serialize(PointRow {
                g_over_2pi_MHz: angular_to_mhz(p.g),
                delta_a_over_2pi_MHz: angular_to_mhz(p.delta_a),
                weight: p.weight,
            })?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Weighted averages of numerators and photon number, reduced in point order.
fn reduce<F>(ens: &Ensemble, base: &SystemParams, dims: HilbertDims, f: F) -> Result<RawCorrelation>
where
    F: Fn(&CorrelationEngine) -> Result<RawCorrelation> + Sync,
{
    ens.validate()?;
    let active: Vec<&EnsemblePoint> = ens.points.iter().filter(|p| p.weight > 0.0).collect();
    let per_point: Vec<Result<RawCorrelation>> = active
        .par_iter()
        .map(|pt| {
            let params = base.with_g(pt.g).with_delta_a(pt.delta_a);
            f(&CorrelationEngine::new(params, dims)?)
        })
        .collect();

    let total = ens.normalization();
    let mut numerators: Option<Array2<f64>> = None;
    let mut photon_number = 0.0;
    for (pt, raw) in active.iter().zip(per_point) {
        let raw = raw?;
        let w = pt.weight / total;
        photon_number += w * raw.photon_number;
        match numerators.as_mut() {
            Some(acc) => acc.scaled_add(w, &raw.numerators),
            None => numerators = Some(raw.numerators * w),
        }
    }
    Ok(RawCorrelation { numerators: numerators.expect("validated ensemble has an active point"), photon_number })
}

fn normalize(raw: RawCorrelation, order: i32) -> Result<(Array2<f64>, f64)> {
    if !(raw.photon_number >= 1e-12) {
        return Err(Error::ZeroDenominator(raw.photon_number));
    }
    let norm = raw.photon_number.powi(order);
    Ok((raw.numerators / norm, norm))
}

/// Weighted mean of `⟨a†a⟩` over the ensemble.
pub fn averaged_photon_number(ens: &Ensemble, base: &SystemParams, dims: HilbertDims) -> Result<f64> {
    Ok(reduce(ens, base, dims, |e| e.g2_numerator(&[0.0]))?.photon_number)
}

/// `Σ w ⟨a†a†(τ)a(τ)a⟩ / (Σ w ⟨a†a⟩)²`, with `g` and `Δa` of `base`
/// replaced point by point.
pub fn averaged_g2(ens: &Ensemble, base: &SystemParams, dims: HilbertDims, taus_ns: &[f64]) -> Result<CorrGrid> {
    let raw = reduce(ens, base, dims, |e| e.g2_numerator(taus_ns))?;
    let (values, norm) = normalize(raw, 2)?;
    Ok(one_d(ens, taus_ns, values, norm))
}

pub fn averaged_g3_diagonal(
    ens: &Ensemble,
    base: &SystemParams,
    dims: HilbertDims,
    taus_ns: &[f64],
    branch: G3Branch,
) -> Result<CorrGrid> {
    let raw = reduce(ens, base, dims, |e| e.g3_diagonal_numerator(taus_ns, branch))?;
    let (values, norm) = normalize(raw, 3)?;
    Ok(one_d(ens, taus_ns, values, norm))
}

pub fn averaged_g3_full(
    ens: &Ensemble,
    base: &SystemParams,
    dims: HilbertDims,
    tau1_ns: &[f64],
    tau2_ns: &[f64],
    opts: &G3Options,
) -> Result<CorrGrid> {
    let raw = reduce(ens, base, dims, |e| e.g3_full_numerator(tau1_ns, tau2_ns, opts))?;
    let (values, norm) = normalize(raw, 3)?;
    Ok(CorrGrid {
        tau1_ns: tau1_ns.to_vec(),
        tau2_ns: Some(tau2_ns.to_vec()),
        values,
        norm,
        source: CorrSource::Ensemble(ens.name.clone()),
    })
}

fn one_d(ens: &Ensemble, taus_ns: &[f64], values: Array2<f64>, norm: f64) -> CorrGrid {
    CorrGrid {
        tau1_ns: taus_ns.to_vec(),
        tau2_ns: None,
        values,
        norm,
        source: CorrSource::Ensemble(ens.name.clone()),
    }
}

/// Sampling of the cavity mode around one antinode.
///
/// `g = g0 |cos(2πz/λ)| exp(-r²/w²)` with `z ∈ [-λ/4, λ/4]` and `x, y`
/// uniform over `[-radial_extent·w, radial_extent·w]`. The detuning is
/// `Δa = delta_a_offset + stark_max · I_s`, where `I_s =
/// cos²(2πz/λ_s) exp(-2r²/w²)` is the stabilization intensity relative to its
/// maximum. A count of one samples the antinode/axis only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeGridSpec {
    pub axial: usize,
    pub radial_x: usize,
    pub radial_y: usize,
    pub waist_um: f64,
    pub wavelength_um: f64,
    pub stabilization_wavelength_um: f64,
    /// Half-width of the transverse box in units of the waist.
    pub radial_extent: f64,
    /// Peak coupling, rad/µs.
    pub g0: f64,
    /// Detuning of an atom outside the stabilization light, rad/µs.
    pub delta_a_offset: f64,
    /// Light shift at the stabilization intensity maximum, rad/µs.
    pub stark_max: f64,
}

impl Default for ModeGridSpec {
    fn default() -> Self {
        Self {
            axial: 5,
            radial_x: 5,
            radial_y: 5,
            waist_um: 29.0,
            wavelength_um: 0.780,
            stabilization_wavelength_um: 0.785,
            radial_extent: 0.6,
            g0: mhz_to_angular(reference::G0_MHZ),
            delta_a_offset: mhz_to_angular(reference::DELTA_C_MHZ),
            stark_max: mhz_to_angular(reference::STARK_SHIFT_MHZ),
        }
    }
}

fn axis(count: usize, half_width: f64) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    // Integer offsets keep the axis exactly mirror-symmetric.
    let m = (count - 1) as f64;
    (0..count).map(|i| half_width * (2.0 * i as f64 - m) / m).collect()
}

/// Uniformly weighted ensemble over the sampled volume. Positions mapping to
/// identical `(g, Δa)` are merged and their weights added.
pub fn mode_function_ensemble(spec: &ModeGridSpec) -> Result<Ensemble> {
    if spec.axial == 0 || spec.radial_x == 0 || spec.radial_y == 0 {
        return Err(Error::EmptyGrid);
    }
    for (name, v) in [
        ("waist", spec.waist_um),
        ("wavelength", spec.wavelength_um),
        ("stabilization wavelength", spec.stabilization_wavelength_um),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive")));
        }
    }
    if !(spec.radial_extent >= 0.0) || !(spec.g0 >= 0.0) {
        return Err(Error::InvalidParameter("radial extent and g0 must be non-negative".into()));
    }

    let k = std::f64::consts::TAU / spec.wavelength_um;
    let ks = std::f64::consts::TAU / spec.stabilization_wavelength_um;
    let w2 = spec.waist_um * spec.waist_um;
    let zs = axis(spec.axial, spec.wavelength_um / 4.0);
    let xs = axis(spec.radial_x, spec.radial_extent * spec.waist_um);
    let ys = axis(spec.radial_y, spec.radial_extent * spec.waist_um);

    let mut points: Vec<EnsemblePoint> = Vec::new();
    for &z in &zs {
        for &x in &xs {
            for &y in &ys {
                let r2 = x * x + y * y;
                let transverse = (-r2 / w2).exp();
                let g = spec.g0 * (k * z).cos().abs() * transverse;
                let intensity = (ks * z).cos().powi(2) * transverse * transverse;
                let delta_a = spec.delta_a_offset + spec.stark_max * intensity;
                match points.iter_mut().find(|p| p.g == g && p.delta_a == delta_a) {
                    Some(p) => p.weight += 1.0,
                    None => points.push(EnsemblePoint { g, delta_a, weight: 1.0 }),
                }
            }
        }
    }
    Ensemble::new(format!("mode-grid-{}x{}x{}", spec.axial, spec.radial_x, spec.radial_y), points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn antinode_only_grid() {
        let spec = ModeGridSpec { axial: 1, radial_x: 1, radial_y: 1, delta_a_offset: 0.0, ..Default::default() };
        let ens = mode_function_ensemble(&spec).unwrap();
        assert_eq!(ens.points, vec![EnsemblePoint { g: spec.g0, delta_a: spec.stark_max, weight: 1.0 }]);
    }

    #[test]
    fn axial_couplings_follow_cosine() {
        let spec = ModeGridSpec { axial: 11, radial_x: 1, radial_y: 1, ..Default::default() };
        let ens = mode_function_ensemble(&spec).unwrap();
        let gmax = ens.points.iter().map(|p| p.g).fold(0.0, f64::max);
        let gmin = ens.points.iter().map(|p| p.g).fold(f64::INFINITY, f64::min);
        assert!((gmax - spec.g0).abs() < 1e-12 * spec.g0);
        assert!(gmin < 1e-12 * spec.g0);
        // ±z pairs merge.
        assert_eq!(ens.points.len(), 6);
        assert_eq!(ens.normalization(), 11.0);
    }

    #[test]
    fn empty_grid() {
        let spec = ModeGridSpec { radial_y: 0, ..Default::default() };
        assert!(matches!(mode_function_ensemble(&spec), Err(Error::EmptyGrid)));
    }

    #[test]
    fn csv_round_trip() {
        let ens = Ensemble::new(
            "t",
            vec![
                EnsemblePoint { g: 100.0, delta_a: -50.0, weight: 0.25 },
                EnsemblePoint { g: 10.0, delta_a: 3.0, weight: 2.0 },
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("g_over_2pi_MHz,delta_a_over_2pi_MHz,weight\n"));
        let back = Ensemble::read_csv("t", buf.as_slice()).unwrap();
        for (a, b) in ens.points.iter().zip(&back.points) {
            assert!((a.g - b.g).abs() < 1e-12 * a.g.abs());
            assert!((a.delta_a - b.delta_a).abs() < 1e-12 * a.delta_a.abs());
            assert_eq!(a.weight, b.weight);
        }
    }

    #[test]
    fn rejects_all_zero_weights() {
        let pts = vec![EnsemblePoint { g: 1.0, delta_a: 0.0, weight: 0.0 }];
        assert!(Ensemble::new("z", pts).is_err());
        assert!(matches!(Ensemble::new("e", vec![]), Err(Error::EmptyGrid)));
    }

    #[test]
    fn single_point_matches_plain_g2() {
        let base = SystemParams::reference().with_eta_over_kappa(2.0);
        let dims = HilbertDims::new(6).unwrap();
        let taus = [0.0, 10.0, 40.0];
        let plain = CorrelationEngine::new(base, dims).unwrap().g2(&taus).unwrap();
        let avg = averaged_g2(&Ensemble::single(base.g, base.delta_a), &base, dims, &taus).unwrap();
        for (a, b) in plain.series().iter().zip(avg.series()) {
            assert!((a - b).abs() < 1e-12 * a.abs());
        }
    }
}
