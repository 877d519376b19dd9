//! Truncated Fock ⊗ two-level Hilbert space and the driven Jaynes-Cummings
//! operators.
//!
//! Basis ordering is photon-major, atom-minor: the state `|n, s⟩` sits at
//! index `2n + s` with `s = 0` for the ground and `s = 1` for the excited
//! level. All operators are dense; the total dimension is `2 (n_max + 1)`.

use std::ops::{Add, Mul, Sub};

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::mhz_to_angular;

/// Photon-number cutoff used unless overridden.
pub const DEFAULT_N_MAX: usize = 10;

/// Atomic level of the two-level atom.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Atom {
    Ground = 0,
    Excited = 1,
}

/// Dimensions of the truncated composite space.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertDims {
    n_max: usize,
}

impl HilbertDims {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        Ok(Self { n_max })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn atom_levels(&self) -> usize {
        2
    }

    /// Total dimension `2 (n_max + 1)`.
    pub fn dim(&self) -> usize {
        2 * (self.n_max + 1)
    }

    /// Index of `|n, s⟩`.
    pub fn index(&self, n: usize, s: Atom) -> usize {
        debug_assert!(n <= self.n_max);
        2 * n + s as usize
    }

    /// Inverse of [`HilbertDims::index`].
    pub fn label(&self, index: usize) -> (usize, Atom) {
        let s = if index.is_multiple_of(2) { Atom::Ground } else { Atom::Excited };
        (index / 2, s)
    }

    /// Basis vector `|n, s⟩`.
    pub fn basis_state(&self, n: usize, s: Atom) -> Array1<C64> {
        let mut v = Array1::zeros(self.dim());
        v[self.index(n, s)] = C64::new(1.0, 0.0);
        v
    }
}

impl Default for HilbertDims {
    fn default() -> Self {
        Self { n_max: DEFAULT_N_MAX }
    }
}

/// Dense complex operator on the truncated space.
#[derive(Clone, Debug, PartialEq)]
pub struct Op {
    data: Array2<C64>,
}

impl Op {
    pub fn from_matrix(data: Array2<C64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::DimensionMismatch { expected: data.nrows(), found: data.ncols() });
        }
        Ok(Self { data })
    }

    pub fn zeros(dims: HilbertDims) -> Self {
        Self { data: Array2::zeros((dims.dim(), dims.dim())) }
    }

    pub fn identity(dims: HilbertDims) -> Self {
        Self { data: Array2::eye(dims.dim()) }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<C64> {
        self.data
    }

    pub fn dagger(&self) -> Op {
        Op { data: self.data.t().mapv(|z| z.conj()) }
    }

    pub fn scale(&self, c: f64) -> Op {
        Op { data: &self.data * C64::new(c, 0.0) }
    }

    pub fn scale_complex(&self, c: C64) -> Op {
        Op { data: &self.data * c }
    }

    pub fn commutator(&self, other: &Op) -> Op {
        &(self * other) - &(other * self)
    }

    /// Largest entry of `|A - A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.data[[i, j]] - self.data[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &Array1<C64>) -> Array1<C64> {
        self.data.dot(v)
    }
}

impl<'a> Mul<&'a Op> for &'a Op {
    type Output = Op;
    fn mul(self, rhs: &'a Op) -> Op {
        Op { data: self.data.dot(&rhs.data) }
    }
}

impl<'a> Add<&'a Op> for &'a Op {
    type Output = Op;
    fn add(self, rhs: &'a Op) -> Op {
        Op { data: &self.data + &rhs.data }
    }
}

impl<'a> Sub<&'a Op> for &'a Op {
    type Output = Op;
    fn sub(self, rhs: &'a Op) -> Op {
        Op { data: &self.data - &rhs.data }
    }
}

/// Rates and detunings of one atom-cavity configuration, all in rad/µs.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Atom-cavity coupling.
    pub g: f64,
    /// Cavity field decay rate (photon loss rate is `2 kappa`).
    pub kappa: f64,
    /// Atomic polarization decay rate.
    pub gamma: f64,
    /// Atom-laser detuning `ω_a - ω_l`.
    pub delta_a: f64,
    /// Cavity-laser detuning `ω_c - ω_l`.
    pub delta_c: f64,
    /// Drive strength.
    pub eta: f64,
}

/// Laboratory reference configuration, as `f/2π` in MHz.
pub mod reference {
    pub const G0_MHZ: f64 = 16.0;
    pub const KAPPA_MHZ: f64 = 1.5;
    pub const GAMMA_MHZ: f64 = 3.0;
    pub const DELTA_C_MHZ: f64 = -12.0;
    /// Peak AC-Stark shift of the atomic transition from the lock light.
    pub const STARK_SHIFT_MHZ: f64 = 5.0;
    /// Drive strengths of the power series, in units of kappa.
    pub const ETA_OVER_KAPPA: [f64; 5] = [1.9, 2.7, 3.5, 3.9, 4.5];
}

impl SystemParams {
    /// Build from laboratory values given as `f/2π` in MHz.
    pub fn from_mhz(g: f64, kappa: f64, gamma: f64, delta_a: f64, delta_c: f64, eta: f64) -> Result<Self> {
        let p = Self {
            g: mhz_to_angular(g),
            kappa: mhz_to_angular(kappa),
            gamma: mhz_to_angular(gamma),
            delta_a: mhz_to_angular(delta_a),
            delta_c: mhz_to_angular(delta_c),
            eta: mhz_to_angular(eta),
        };
        p.validate()?;
        Ok(p)
    }

    /// Reference configuration at maximal coupling, undriven.
    ///
    /// The atom-laser detuning is `g0² / Δc`, which puts the lower normal mode
    /// of the first rung exactly on resonance with the drive (the two-level
    /// limit in which the drive-induced oscillation runs at `√2 η`).
    pub fn reference() -> Self {
        let g = mhz_to_angular(reference::G0_MHZ);
        let delta_c = mhz_to_angular(reference::DELTA_C_MHZ);
        Self {
            g,
            kappa: mhz_to_angular(reference::KAPPA_MHZ),
            gamma: mhz_to_angular(reference::GAMMA_MHZ),
            delta_a: normal_mode_resonant_delta_a(g, delta_c),
            delta_c,
            eta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.g, self.kappa, self.gamma, self.delta_a, self.delta_c, self.eta]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite system parameter".into()));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.g < 0.0 {
            return Err(Error::InvalidParameter(format!("g must be non-negative, got {}", self.g)));
        }
        if self.eta < 0.0 {
            return Err(Error::InvalidParameter(format!("eta must be non-negative, got {}", self.eta)));
        }
        Ok(())
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_eta_over_kappa(mut self, ratio: f64) -> Self {
        self.eta = ratio * self.kappa;
        self
    }

    pub fn with_g(mut self, g: f64) -> Self {
        self.g = g;
        self
    }

    pub fn with_delta_a(mut self, delta_a: f64) -> Self {
        self.delta_a = delta_a;
        self
    }

    pub fn with_delta_c(mut self, delta_c: f64) -> Self {
        self.delta_c = delta_c;
        self
    }
}

/// Atom-laser detuning for which one first-rung normal mode is resonant with
/// the drive: the one-excitation block has a zero eigenvalue exactly when
/// `Δa Δc = g²`.
pub fn normal_mode_resonant_delta_a(g: f64, delta_c: f64) -> f64 {
    g * g / delta_c
}

/// Cavity annihilation operator `a ⊗ 1`.
pub fn make_annihilation(dims: HilbertDims) -> Op {
    let mut a = Op::zeros(dims);
    for n in 1..=dims.n_max() {
        let amp = C64::new((n as f64).sqrt(), 0.0);
        for s in [Atom::Ground, Atom::Excited] {
            a.data[[dims.index(n - 1, s), dims.index(n, s)]] = amp;
        }
    }
    a
}

/// Atomic lowering operator `1 ⊗ σ₋`.
pub fn make_sigma_minus(dims: HilbertDims) -> Op {
    let mut sm = Op::zeros(dims);
    for n in 0..=dims.n_max() {
        sm.data[[dims.index(n, Atom::Ground), dims.index(n, Atom::Excited)]] = C64::new(1.0, 0.0);
    }
    sm
}

/// The operators every other module needs, built once per dimension.
#[derive(Clone, Debug)]
pub struct Operators {
    pub dims: HilbertDims,
    pub a: Op,
    pub a_dag: Op,
    pub sigma_minus: Op,
    pub sigma_plus: Op,
    /// `a†a`
    pub n_phot: Op,
    /// `a†² a²`
    pub n_pair: Op,
    /// `σ₊σ₋`
    pub n_exc: Op,
}

impl Operators {
    pub fn new(dims: HilbertDims) -> Self {
        let a = make_annihilation(dims);
        let a_dag = a.dagger();
        let sigma_minus = make_sigma_minus(dims);
        let sigma_plus = sigma_minus.dagger();
        let n_phot = &a_dag * &a;
        let a2 = &a * &a;
        let n_pair = &a2.dagger() * &a2;
        let n_exc = &sigma_plus * &sigma_minus;
        Self { dims, a, a_dag, sigma_minus, sigma_plus, n_phot, n_pair, n_exc }
    }

    /// Total excitation number `a†a + σ₊σ₋`.
    pub fn excitation_number(&self) -> Op {
        &self.n_phot + &self.n_exc
    }
}

/// Driven Jaynes-Cummings Hamiltonian in the frame of the drive (ħ = 1):
/// `H = Δa σ₊σ₋ + Δc a†a + g (a†σ₋ + aσ₊) + η (a + a†)`.
pub fn build_hamiltonian(p: &SystemParams, dims: HilbertDims) -> Op {
    hamiltonian_with(p, &Operators::new(dims))
}

pub(crate) fn hamiltonian_with(p: &SystemParams, ops: &Operators) -> Op {
    let atom = ops.n_exc.scale(p.delta_a);
    let cavity = ops.n_phot.scale(p.delta_c);
    let coupling = (&(&ops.a_dag * &ops.sigma_minus) + &(&ops.a * &ops.sigma_plus)).scale(p.g);
    let drive = (&ops.a + &ops.a_dag).scale(p.eta);
    &(&(&atom + &cavity) + &coupling) + &drive
}

/// One eigenvalue of the undriven Hamiltonian, labelled by its excitation
/// number `n_photons + n_atom`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DressedLevel {
    /// Energy in rad/µs.
    pub energy: f64,
    pub excitations: usize,
}

/// A rung of the dressed ladder: the pair `|n, ±⟩`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DressedRung {
    pub n: usize,
    pub lower: f64,
    pub upper: f64,
}

impl DressedRung {
    /// Energy splitting `E₊ - E₋` in rad/µs.
    pub fn splitting(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Eigenvalues of the undriven Hamiltonian, grouped by excitation number.
///
/// Without drive the excitation number is conserved, so each manifold is
/// diagonalized on its own. Manifold `N` contains `|N, g⟩` and `|N-1, e⟩`;
/// the top manifold `n_max + 1` only holds `|n_max, e⟩` and is a truncation
/// artifact, so it is omitted.
pub fn dressed_spectrum(p: &SystemParams, dims: HilbertDims) -> Result<Vec<DressedLevel>> {
    if p.eta != 0.0 {
        return Err(Error::DrivenLadder(p.eta));
    }
    let h = build_hamiltonian(p, dims);
    let mut levels = Vec::with_capacity(dims.dim() - 1);
    for exc in 0..=dims.n_max() {
        let mut members = vec![dims.index(exc, Atom::Ground)];
        if exc >= 1 {
            members.push(dims.index(exc - 1, Atom::Excited));
        }
        let block = Array2::from_shape_fn((members.len(), members.len()), |(i, j)| h.data[[members[i], members[j]]]);
        let (energies, _) = block.eigh(UPLO::Lower)?;
        levels.extend(energies.iter().map(|&energy| DressedLevel { energy, excitations: exc }));
    }
    Ok(levels)
}

/// Rungs `n = 1..=n_max` of the ladder returned by [`dressed_spectrum`].
pub fn dressed_rungs(levels: &[DressedLevel]) -> Vec<DressedRung> {
    let max_exc = levels.iter().map(|l| l.excitations).max().unwrap_or(0);
    (1..=max_exc)
        .filter_map(|n| {
            let mut e: Vec<f64> = levels.iter().filter(|l| l.excitations == n).map(|l| l.energy).collect();
            if e.len() != 2 {
                return None;
            }
            e.sort_by(f64::total_cmp);
            Some(DressedRung { n, lower: e[0], upper: e[1] })
        })
        .collect()
}
