//! Run configuration, read from TOML.
//!
//! Frequencies are written as `f/2π` in MHz and times in ns. Conversion to
//! the library's angular units happens once, in [`RunConfig::system_params`].

use std::path::{Path, PathBuf};

use cavity_qed::averaging::ModeGridSpec;
use cavity_qed::operators::{normal_mode_resonant_delta_a, reference, HilbertDims, SystemParams};
use cavity_qed::units::mhz_to_angular;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemSection,
    pub spectrum: SpectrumSection,
    pub g2: G2Section,
    pub g3cut: G3CutSection,
    pub g3full: G3FullSection,
    pub trajectory: TrajectorySection,
    pub fit: FitSection,
    pub sweep: SweepSection,
    pub ensemble: EnsembleSection,
    pub ensemble_grid: EnsembleGridSection,
    pub output: OutputSection,
}

/// System parameters as `f/2π` in MHz.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub g_mhz: f64,
    pub kappa_mhz: f64,
    pub gamma_mhz: f64,
    pub delta_c_mhz: f64,
    /// Atom-laser detuning. When absent, the lower normal mode is put on
    /// resonance with the drive: `Δa = g²/Δc`.
    pub delta_a_mhz: Option<f64>,
    /// Drive strength in MHz; mutually exclusive with `eta_over_kappa`.
    pub eta_mhz: Option<f64>,
    pub eta_over_kappa: Option<f64>,
    pub n_max: usize,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            g_mhz: reference::G0_MHZ,
            kappa_mhz: reference::KAPPA_MHZ,
            gamma_mhz: reference::GAMMA_MHZ,
            delta_c_mhz: reference::DELTA_C_MHZ,
            delta_a_mhz: None,
            eta_mhz: None,
            eta_over_kappa: None,
            n_max: cavity_qed::operators::DEFAULT_N_MAX,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Evaluate the ladder with the atom on cavity resonance (`Δa = Δc`).
    pub resonant: bool,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { resonant: true }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct G2Section {
    pub tau_max_ns: f64,
    pub tau_step_ns: f64,
    /// Also emit negative delays by `g²(-τ) = g²(τ)`.
    pub symmetric: bool,
}

impl Default for G2Section {
    fn default() -> Self {
        Self { tau_max_ns: 300.0, tau_step_ns: 1.0, symmetric: false }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct G3CutSection {
    pub tau_max_ns: f64,
    pub tau_step_ns: f64,
}

impl Default for G3CutSection {
    fn default() -> Self {
        Self { tau_max_ns: 100.0, tau_step_ns: 0.5 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct G3FullSection {
    pub tau_max_ns: f64,
    pub tau_step_ns: f64,
    pub fwhm_ns: f64,
    pub memory_cap_mb: usize,
}

impl Default for G3FullSection {
    fn default() -> Self {
        Self { tau_max_ns: 150.0, tau_step_ns: 1.5, fwhm_ns: 7.0, memory_cap_mb: 256 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub t_final_ns: f64,
    pub dt_ns: f64,
    pub seed: u64,
    pub burn_in_ns: f64,
    pub record_stride: usize,
    pub initial_photons: usize,
    pub initial_excited: bool,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            t_final_ns: 1000.0,
            dt_ns: 0.05,
            seed: 1,
            burn_in_ns: 1000.0,
            record_stride: 10,
            initial_photons: 0,
            initial_excited: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// CSV with columns `tau_ns,value`. When absent, `g²` is computed from
    /// the system and `[g2]` sections.
    pub input: Option<PathBuf>,
    pub min_tau_ns: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub eta_over_kappa: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { eta_over_kappa: reference::ETA_OVER_KAPPA.to_vec() }
    }
}

#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    /// Ensemble CSV (`g_over_2pi_MHz,delta_a_over_2pi_MHz,weight`). When
    /// set, correlation commands average over it.
    pub file: Option<PathBuf>,
}

/// Mode-function ensemble generator settings.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleGridSection {
    pub axial: usize,
    pub radial_x: usize,
    pub radial_y: usize,
    pub waist_um: f64,
    pub wavelength_um: f64,
    pub stabilization_wavelength_um: f64,
    pub radial_extent: f64,
    /// Defaults to `system.g_mhz`.
    pub g0_mhz: Option<f64>,
    /// Defaults to `system.delta_c_mhz` (bare atom on cavity resonance).
    pub delta_a_offset_mhz: Option<f64>,
    pub stark_max_mhz: f64,
}

impl Default for EnsembleGridSection {
    fn default() -> Self {
        let d = ModeGridSpec::default();
        Self {
            axial: d.axial,
            radial_x: d.radial_x,
            radial_y: d.radial_y,
            waist_um: d.waist_um,
            wavelength_um: d.wavelength_um,
            stabilization_wavelength_um: d.stabilization_wavelength_um,
            radial_extent: d.radial_extent,
            g0_mhz: None,
            delta_a_offset_mhz: None,
            stark_max_mhz: reference::STARK_SHIFT_MHZ,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Multiplies emitted correlation values.
    pub scale: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), scale: 1.0 }
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
        // Relative input paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.fit.input, &mut cfg.ensemble.file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.system.eta_mhz.is_some() && self.system.eta_over_kappa.is_some() {
            return Err(CliError::Config("set only one of system.eta_mhz and system.eta_over_kappa".into()));
        }
        for (name, v) in [
            ("g2.tau_max_ns", self.g2.tau_max_ns),
            ("g2.tau_step_ns", self.g2.tau_step_ns),
            ("g3cut.tau_max_ns", self.g3cut.tau_max_ns),
            ("g3cut.tau_step_ns", self.g3cut.tau_step_ns),
            ("g3full.tau_max_ns", self.g3full.tau_max_ns),
            ("g3full.tau_step_ns", self.g3full.tau_step_ns),
            ("g3full.fwhm_ns", self.g3full.fwhm_ns),
            ("trajectory.t_final_ns", self.trajectory.t_final_ns),
            ("trajectory.dt_ns", self.trajectory.dt_ns),
            ("output.scale", self.output.scale),
        ] {
            positive(name, v)?;
        }
        for p in [&self.fit.input, &self.ensemble.file].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::Config(format!("file not found: {}", p.display())));
            }
        }
        self.system_params()?;
        Ok(())
    }

    pub fn dims(&self) -> Result<HilbertDims, CliError> {
        HilbertDims::new(self.system.n_max).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn system_params(&self) -> Result<SystemParams, CliError> {
        let s = &self.system;
        let delta_a = s.delta_a_mhz.unwrap_or_else(|| normal_mode_resonant_delta_a(s.g_mhz, s.delta_c_mhz));
        let eta = match (s.eta_mhz, s.eta_over_kappa) {
            (Some(e), _) => e,
            (None, Some(r)) => r * s.kappa_mhz,
            (None, None) => 0.0,
        };
        SystemParams::from_mhz(s.g_mhz, s.kappa_mhz, s.gamma_mhz, delta_a, s.delta_c_mhz, eta)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn mode_grid(&self) -> ModeGridSpec {
        let e = &self.ensemble_grid;
        ModeGridSpec {
            axial: e.axial,
            radial_x: e.radial_x,
            radial_y: e.radial_y,
            waist_um: e.waist_um,
            wavelength_um: e.wavelength_um,
            stabilization_wavelength_um: e.stabilization_wavelength_um,
            radial_extent: e.radial_extent,
            g0: mhz_to_angular(e.g0_mhz.unwrap_or(self.system.g_mhz)),
            delta_a_offset: mhz_to_angular(e.delta_a_offset_mhz.unwrap_or(self.system.delta_c_mhz)),
            stark_max: mhz_to_angular(e.stark_max_mhz),
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
