//! Normalized photon correlation functions from the quantum regression
//! theorem.
//!
//! Every correlator is a trace against a conditional state propagated from the
//! steady state. Conditional states are never renormalized after a jump; the
//! trace carries the detection weight.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::liouvillian::{
    expectation, liouvillian_with, steady_state, DensityMatrix, ObservableWeights, Propagator, Superoperator,
    DEFAULT_CONDITION_BOUND,
};
use crate::operators::{HilbertDims, Operators, SystemParams};
use crate::units::{ns_to_us, uniform_spacing};

const IMAG_TOL: f64 = 1e-8;
const MIN_PHOTON_NUMBER: f64 = 1e-12;

/// Where a correlation grid came from.
#[derive(Clone, Debug, PartialEq)]
pub enum CorrSource {
    Params(SystemParams),
    Ensemble(String),
}

/// Sampled, normalized correlation function.
///
/// One-dimensional grids have `tau2_ns == None` and `values` of shape
/// `(n, 1)`. Two-dimensional grids index `values[[i, j]]` as
/// `(tau1_ns[i], tau2_ns[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrGrid {
    pub tau1_ns: Vec<f64>,
    pub tau2_ns: Option<Vec<f64>>,
    pub values: Array2<f64>,
    /// Normalization denominator `⟨a†a⟩ᵏ`.
    pub norm: f64,
    pub source: CorrSource,
}

impl CorrGrid {
    pub fn one_dimensional(taus_ns: Vec<f64>, values: Vec<f64>, norm: f64, source: CorrSource) -> Self {
        let n = values.len();
        Self {
            tau1_ns: taus_ns,
            tau2_ns: None,
            values: Array2::from_shape_vec((n, 1), values).expect("column vector"),
            norm,
            source,
        }
    }

    pub fn is_2d(&self) -> bool {
        self.tau2_ns.is_some()
    }

    /// Samples of a one-dimensional grid.
    pub fn series(&self) -> Vec<f64> {
        self.values.column(0).to_vec()
    }

    /// Mirror a `τ ≥ 0` series onto `[-τ_max, τ_max]` using `g(-τ) = g(τ)`.
    /// The `τ = 0` sample appears once.
    pub fn symmetric(&self) -> Self {
        assert!(!self.is_2d(), "symmetric extension applies to 1D grids");
        let v = self.series();
        let mut taus: Vec<f64> = self.tau1_ns.iter().skip(1).rev().map(|t| -t).collect();
        let mut vals: Vec<f64> = v.iter().skip(1).rev().copied().collect();
        taus.extend(self.tau1_ns.iter().copied());
        vals.extend(v);
        Self::one_dimensional(taus, vals, self.norm, self.source.clone())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.mapv_inplace(|x| x * factor);
        out
    }
}

/// Which detection comes first in the one-dimensional third-order cut.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum G3Branch {
    /// Single photon at 0, pair at τ: `tr{a†²a² e^{ℒτ}[a ρ a†]}`.
    SingleFirst,
    /// Pair at 0, single photon at τ: `tr{a†a e^{ℒτ}[a² ρ a†²]}`.
    PairFirst,
}

impl G3Branch {
    pub fn label(&self) -> &'static str {
        match self {
            Self::SingleFirst => "single_first",
            Self::PairFirst => "pair_first",
        }
    }
}

/// Options for the two-time surface.
#[derive(Copy, Clone, Debug)]
pub struct G3Options {
    /// Cap on memory held in intermediate conditional states at once.
    pub memory_cap_bytes: usize,
}

impl Default for G3Options {
    fn default() -> Self {
        Self { memory_cap_bytes: 256 << 20 }
    }
}

/// Unnormalized correlation numerators together with `⟨a†a⟩`, the raw
/// material for position averaging.
#[derive(Clone, Debug)]
pub struct RawCorrelation {
    pub numerators: Array2<f64>,
    pub photon_number: f64,
}

/// Steady state, propagator and operators for one parameter set.
pub struct CorrelationEngine {
    params: SystemParams,
    ops: Operators,
    liouvillian: Superoperator,
    propagator: Propagator,
    rho_ss: DensityMatrix,
    photon_number: f64,
}

impl CorrelationEngine {
    pub fn new(params: SystemParams, dims: HilbertDims) -> Result<Self> {
        Self::with_condition_bound(params, dims, DEFAULT_CONDITION_BOUND)
    }

    pub fn with_condition_bound(params: SystemParams, dims: HilbertDims, condition_bound: f64) -> Result<Self> {
        params.validate()?;
        let ops = Operators::new(dims);
        let liouvillian = liouvillian_with(&params, &ops);
        let propagator = Propagator::new(&liouvillian, condition_bound)?;
        let rho_ss = steady_state(&liouvillian)?;
        let photon_number = expectation(&rho_ss, &ops.n_phot)?.re;
        Ok(Self { params, ops, liouvillian, propagator, rho_ss, photon_number })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }

    pub fn liouvillian(&self) -> &Superoperator {
        &self.liouvillian
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn steady_state(&self) -> &DensityMatrix {
        &self.rho_ss
    }

    /// Steady-state `⟨a†a⟩`.
    pub fn photon_number(&self) -> f64 {
        self.photon_number
    }

    fn denominator(&self, order: i32) -> Result<f64> {
        if !(self.photon_number >= MIN_PHOTON_NUMBER) {
            return Err(Error::ZeroDenominator(self.photon_number));
        }
        Ok(self.photon_number.powi(order))
    }

    fn jump(&self, x: &Array2<C64>) -> Array2<C64> {
        self.ops.a.data().dot(x).dot(self.ops.a_dag.data())
    }

    fn pair_jump(&self, x: &Array2<C64>) -> Array2<C64> {
        self.jump(&self.jump(x))
    }

    fn series(&self, weights: &ObservableWeights, x: &Array2<C64>, taus_ns: &[f64]) -> Result<Vec<f64>> {
        check_taus(taus_ns)?;
        let times: Vec<f64> = taus_ns.iter().map(|&t| ns_to_us(t)).collect();
        let z = self.propagator.trace_series(weights, x, &times)?;
        real_parts(&z, 1.0)
    }

    /// `⟨a†a†(τ)a(τ)a⟩` for `τ ≥ 0` (ns).
    pub fn g2_numerator(&self, taus_ns: &[f64]) -> Result<RawCorrelation> {
        let w = self.propagator.weights(&self.ops.n_phot);
        let v = self.series(&w, &self.jump(self.rho_ss.data()), taus_ns)?;
        Ok(self.raw(v))
    }

    /// Unnormalized third-order cut for the given branch.
    pub fn g3_diagonal_numerator(&self, taus_ns: &[f64], branch: G3Branch) -> Result<RawCorrelation> {
        let v = match branch {
            G3Branch::SingleFirst => {
                let w = self.propagator.weights(&self.ops.n_pair);
                self.series(&w, &self.jump(self.rho_ss.data()), taus_ns)?
            }
            G3Branch::PairFirst => {
                let w = self.propagator.weights(&self.ops.n_phot);
                self.series(&w, &self.pair_jump(self.rho_ss.data()), taus_ns)?
            }
        };
        Ok(self.raw(v))
    }

    /// Unnormalized two-time surface
    /// `tr{a†a e^{ℒτ₂}[a e^{ℒτ₁}[a ρ a†] a†]}`.
    ///
    /// Rows (fixed τ₁) are independent and evaluated in parallel, in chunks
    /// sized so that at most `memory_cap_bytes` of intermediate states are
    /// alive at once.
    pub fn g3_full_numerator(&self, tau1_ns: &[f64], tau2_ns: &[f64], opts: &G3Options) -> Result<RawCorrelation> {
        check_uniform(tau1_ns)?;
        check_uniform(tau2_ns)?;
        let d = self.ops.dims.dim();
        let state_bytes = d * d * std::mem::size_of::<C64>();
        // Each row holds the evolved state plus its jumped copy.
        let per_row = 2 * state_bytes;
        let chunk = opts.memory_cap_bytes / per_row;
        if chunk == 0 {
            return Err(Error::MemoryBudgetExceeded { requested: per_row, cap: opts.memory_cap_bytes });
        }

        let first = self.jump(self.rho_ss.data());
        let weights = self.propagator.weights(&self.ops.n_phot);
        let times2: Vec<f64> = tau2_ns.iter().map(|&t| ns_to_us(t)).collect();

        let mut values = Array2::zeros((tau1_ns.len(), tau2_ns.len()));
        let rows: Vec<usize> = (0..tau1_ns.len()).collect();
        for block in rows.chunks(chunk) {
            let computed: Vec<Result<Vec<f64>>> = block
                .par_iter()
                .map(|&i| {
                    let evolved = self.propagator.evolve(&first, ns_to_us(tau1_ns[i]))?;
                    let second = self.jump(&evolved);
                    let z = self.propagator.trace_series(&weights, &second, &times2)?;
                    real_parts(&z, 1.0)
                })
                .collect();
            for (&i, row) in block.iter().zip(computed) {
                values.row_mut(i).assign(&ndarray::Array1::from(row?));
            }
        }
        Ok(RawCorrelation { numerators: values, photon_number: self.photon_number })
    }

    fn raw(&self, v: Vec<f64>) -> RawCorrelation {
        let n = v.len();
        RawCorrelation {
            numerators: Array2::from_shape_vec((n, 1), v).expect("column vector"),
            photon_number: self.photon_number,
        }
    }

    /// `g²(τ) = ⟨a†a†(τ)a(τ)a⟩ / ⟨a†a⟩²` on `τ ≥ 0` (ns).
    pub fn g2(&self, taus_ns: &[f64]) -> Result<CorrGrid> {
        let raw = self.g2_numerator(taus_ns)?;
        let norm = self.denominator(2)?;
        self.normalized_1d(taus_ns, raw, norm)
    }

    /// One branch of `g³(τ, 0)` on `τ ≥ 0` (ns), normalized by `⟨a†a⟩³`.
    pub fn g3_diagonal(&self, taus_ns: &[f64], branch: G3Branch) -> Result<CorrGrid> {
        let raw = self.g3_diagonal_numerator(taus_ns, branch)?;
        let norm = self.denominator(3)?;
        self.normalized_1d(taus_ns, raw, norm)
    }

    /// Two-time `g³(τ₁, τ₂)` on uniform non-negative grids (ns).
    pub fn g3_full(&self, tau1_ns: &[f64], tau2_ns: &[f64], opts: &G3Options) -> Result<CorrGrid> {
        let raw = self.g3_full_numerator(tau1_ns, tau2_ns, opts)?;
        let norm = self.denominator(3)?;
        Ok(CorrGrid {
            tau1_ns: tau1_ns.to_vec(),
            tau2_ns: Some(tau2_ns.to_vec()),
            values: raw.numerators / norm,
            norm,
            source: CorrSource::Params(self.params),
        })
    }

    fn normalized_1d(&self, taus_ns: &[f64], raw: RawCorrelation, norm: f64) -> Result<CorrGrid> {
        let values: Vec<f64> = raw.numerators.column(0).iter().map(|x| x / norm).collect();
        Ok(CorrGrid::one_dimensional(taus_ns.to_vec(), values, norm, CorrSource::Params(self.params)))
    }
}

fn check_taus(taus_ns: &[f64]) -> Result<()> {
    if taus_ns.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    if taus_ns.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidParameter("correlation delays must be non-negative".into()));
    }
    Ok(())
}

fn check_uniform(taus_ns: &[f64]) -> Result<()> {
    check_taus(taus_ns)?;
    if taus_ns.len() > 1 && uniform_spacing(taus_ns).is_none() {
        return Err(Error::InvalidParameter("two-time grids must be uniform".into()));
    }
    Ok(())
}

fn real_parts(z: &[C64], scale: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(z.len());
    for v in z {
        if v.im.abs() > IMAG_TOL * scale.max(v.re.abs()) {
            return Err(Error::ImaginaryResidue(v.im));
        }
        out.push(v.re);
    }
    Ok(out)
}

/// `g²(τ)` for one parameter set (convenience wrapper).
pub fn g2(params: SystemParams, dims: HilbertDims, taus_ns: &[f64]) -> Result<CorrGrid> {
    CorrelationEngine::new(params, dims)?.g2(taus_ns)
}
