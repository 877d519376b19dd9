//! Lindblad superoperator, steady state and time propagation.
//!
//! Density matrices are column-stacked: `vec(ρ)[i + j d] = ρ[i, j]`, so that
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`. The master equation is
//!
//! ```text
//! dρ/dt = -i[H, ρ] + κ (2 a ρ a† - a†a ρ - ρ a†a) + γ (2 σ₋ ρ σ₊ - σ₊σ₋ ρ - ρ σ₊σ₋)
//! ```
//!
//! with rates in rad/µs and time in µs.

use ndarray::{linalg::kron, Array1, Array2};
use ndarray_linalg::{Eig, EigValsh, FactorizeInto, Inverse, ReciprocalConditionNum, Solve, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::operators::{hamiltonian_with, Atom, HilbertDims, Op, Operators, SystemParams};

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const POSITIVITY_TOL: f64 = 1e-9;
const STEADY_RESIDUAL_TOL: f64 = 1e-8;
const GROWTH_TOL: f64 = 1e-8;

/// Default bound on the eigenvector-matrix condition number before the
/// propagator switches to dense matrix exponentials.
pub const DEFAULT_CONDITION_BOUND: f64 = 1e10;

const I: C64 = C64::new(0.0, 1.0);

/// Column-stacking `vec`.
pub fn vectorize(m: &Array2<C64>) -> Array1<C64> {
    m.t().iter().copied().collect()
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &Array1<C64>, dim: usize) -> Array2<C64> {
    Array2::from_shape_fn((dim, dim), |(i, j)| v[i + j * dim])
}

/// A (possibly unnormalized) density operator.
///
/// [`DensityMatrix::new`] checks the physical invariants. Conditional states
/// of the regression formulas (`a ρ a†` and friends) are not normalized and
/// are built with [`DensityMatrix::from_matrix_unchecked`].
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    data: Array2<C64>,
}

impl DensityMatrix {
    pub fn new(data: Array2<C64>) -> Result<Self> {
        let rho = Self::from_matrix_unchecked(data)?;
        rho.check_physical()?;
        Ok(rho)
    }

    pub fn from_matrix_unchecked(data: Array2<C64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::DimensionMismatch { expected: data.nrows(), found: data.ncols() });
        }
        Ok(Self { data })
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`.
    pub fn pure(psi: &Array1<C64>) -> Result<Self> {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 <= 0.0 || !norm2.is_finite() {
            return Err(Error::NotPhysical("pure state with zero norm".into()));
        }
        let d = psi.len();
        let data = Array2::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj() / norm2);
        Ok(Self { data })
    }

    /// `|n, s⟩⟨n, s|`.
    pub fn basis(dims: HilbertDims, n: usize, s: Atom) -> Self {
        let mut data = Array2::zeros((dims.dim(), dims.dim()));
        let k = dims.index(n, s);
        data[[k, k]] = C64::new(1.0, 0.0);
        Self { data }
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

    pub fn trace(&self) -> C64 {
        self.data.diag().sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[[i, j]] - self.data[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let herm = (&self.data + &self.data.t().mapv(|z| z.conj())) * C64::new(0.5, 0.0);
        let ev = herm.eigvalsh(UPLO::Lower)?;
        Ok(ev.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Hermitian, unit trace and positive semidefinite within tolerance.
    pub fn check_physical(&self) -> Result<()> {
        let defect = self.hermiticity_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::NotPhysical(format!("hermiticity defect {defect:.3e}")));
        }
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::NotPhysical(format!("trace {tr}")));
        }
        let min = self.min_eigenvalue()?;
        if min < -POSITIVITY_TOL {
            return Err(Error::NotPhysical(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }
}

/// `tr[A ρ]`.
pub fn expectation(rho: &DensityMatrix, a: &Op) -> Result<C64> {
    if rho.dim() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: rho.dim() });
    }
    Ok(trace_product(a.data(), rho.data()))
}

pub(crate) fn trace_product(a: &Array2<C64>, x: &Array2<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[[i, j]] * x[[j, i]];
        }
    }
    acc
}

/// Lindblad generator acting on column-stacked density matrices.
#[derive(Clone, Debug)]
pub struct Superoperator {
    dim: usize,
    data: Array2<C64>,
}

impl Superoperator {
    /// Hilbert-space dimension `d`; the matrix is `d² × d²`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn apply(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        if rho.nrows() != self.dim || rho.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: rho.nrows() });
        }
        Ok(unvectorize(&self.data.dot(&vectorize(rho)), self.dim))
    }

    /// Largest entry of `vec(1)ᵀ ℒ`, i.e. how far the trace functional is
    /// from being a left null vector.
    pub fn trace_defect(&self) -> f64 {
        let d = self.dim;
        (0..d * d)
            .map(|col| (0..d).map(|i| self.data[[i + i * d, col]]).sum::<C64>().norm())
            .fold(0.0, f64::max)
    }
}

fn dissipator(l: &Array2<C64>, rate: f64) -> Array2<C64> {
    let d = l.nrows();
    let id: Array2<C64> = Array2::eye(d);
    let l_dag = l.t().mapv(|z| z.conj());
    let ldl = l_dag.dot(l);
    let jump = kron(&l.mapv(|z| z.conj()), l) * C64::new(2.0, 0.0);
    (jump - kron(&id, &ldl) - kron(&ldl.t(), &id)) * C64::new(rate, 0.0)
}

/// Superoperator `ℒ` of the driven, damped atom-cavity system.
pub fn build_liouvillian(p: &SystemParams, dims: HilbertDims) -> Superoperator {
    liouvillian_with(p, &Operators::new(dims))
}

pub(crate) fn liouvillian_with(p: &SystemParams, ops: &Operators) -> Superoperator {
    let d = ops.dims.dim();
    let id: Array2<C64> = Array2::eye(d);
    let h = hamiltonian_with(p, ops);
    let h = h.data();
    let unitary = (kron(&id, h) - kron(&h.t(), &id)) * (-I);
    let data = unitary + dissipator(ops.a.data(), p.kappa) + dissipator(ops.sigma_minus.data(), p.gamma);
    Superoperator { dim: d, data }
}

/// Right-hand side of the master equation evaluated directly in matrix form.
pub fn master_equation_rhs(p: &SystemParams, ops: &Operators, rho: &Array2<C64>) -> Array2<C64> {
    let h = hamiltonian_with(p, ops);
    let h = h.data();
    let mut out = (h.dot(rho) - rho.dot(h)) * (-I);
    for (l, rate) in [(&ops.a, p.kappa), (&ops.sigma_minus, p.gamma)] {
        let l = l.data();
        let l_dag = l.t().mapv(|z| z.conj());
        let ldl = l_dag.dot(l);
        out = out
            + (l.dot(rho).dot(&l_dag) * C64::new(2.0, 0.0) - ldl.dot(rho) - rho.dot(&ldl)) * C64::new(rate, 0.0);
    }
    out
}

/// Steady state from `ℒ ρ = 0` with the first equation replaced by the
/// trace condition `tr ρ = 1`.
pub fn steady_state(l: &Superoperator) -> Result<DensityMatrix> {
    let d = l.dim();
    let n = d * d;
    let mut m = l.data().clone();
    for k in 0..n {
        m[[0, k]] = C64::new(0.0, 0.0);
    }
    for i in 0..d {
        m[[0, i + i * d]] = C64::new(1.0, 0.0);
    }
    let mut rhs = Array1::zeros(n);
    rhs[0] = C64::new(1.0, 0.0);

    let lu = m.factorize_into()?;
    let rcond = lu.rcond()?;
    if rcond < 1e-14 {
        return Err(Error::NonUniqueSteadyState(2));
    }
    let x = lu.solve_into(rhs)?;
    finish_steady_state(l, x)
}

fn finish_steady_state(l: &Superoperator, x: Array1<C64>) -> Result<DensityMatrix> {
    let d = l.dim();
    let residual = l.data().dot(&x).iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    if !(residual <= STEADY_RESIDUAL_TOL) {
        return Err(Error::NoConvergence(format!("steady-state residual {residual:.3e}")));
    }
    let raw = unvectorize(&x, d);
    let tr = raw.diag().sum();
    let raw = raw / tr;
    let rho = DensityMatrix::from_matrix_unchecked(raw)?;
    let defect = rho.hermiticity_defect();
    if defect > HERMITIAN_TOL {
        return Err(Error::NotPhysical(format!("steady state hermiticity defect {defect:.3e}")));
    }
    let herm = (rho.data() + &rho.data().t().mapv(|z| z.conj())) * C64::new(0.5, 0.0);
    DensityMatrix::new(herm)
}

/// Steady state as the trace-normalized eigenvector of the eigenvalue
/// closest to zero. Used to cross-check [`steady_state`].
pub fn steady_state_from_spectrum(prop: &SpectralPropagator, l: &Superoperator) -> Result<DensityMatrix> {
    let scale = prop.eigenvalues.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
    let zero_tol = 1e-8 * scale;
    let null: Vec<usize> = (0..prop.eigenvalues.len()).filter(|&k| prop.eigenvalues[k].norm() < zero_tol).collect();
    match null.len() {
        0 => Err(Error::NoConvergence("no eigenvalue near zero".into())),
        1 => finish_steady_state(l, prop.vectors.column(null[0]).to_owned()),
        k => Err(Error::NonUniqueSteadyState(k)),
    }
}

/// Eigendecomposition `ℒ = V diag(λ) V⁻¹`.
#[derive(Clone, Debug)]
pub struct SpectralPropagator {
    dim: usize,
    eigenvalues: Array1<C64>,
    vectors: Array2<C64>,
    inverse: Array2<C64>,
    condition: f64,
}

fn one_norm(a: &Array2<C64>) -> f64 {
    a.columns().into_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

impl SpectralPropagator {
    /// Diagonalize `ℒ`; fails with [`Error::IllConditionedEigenbasis`] if the
    /// eigenvector matrix condition number exceeds `condition_bound`.
    pub fn new(l: &Superoperator, condition_bound: f64) -> Result<Self> {
        let (eigenvalues, vectors) = l.data().eig()?;
        let inverse = vectors.inv()?;
        let condition = one_norm(&vectors) * one_norm(&inverse);
        if !(condition <= condition_bound) {
            return Err(Error::IllConditionedEigenbasis(condition));
        }
        if let Some(bad) = eigenvalues.iter().find(|z| z.re > GROWTH_TOL) {
            return Err(Error::NotPhysical(format!("growing Liouvillian mode {bad}")));
        }
        Ok(Self { dim: l.dim(), eigenvalues, vectors, inverse, condition })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &Array1<C64> {
        &self.eigenvalues
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// Modal coefficients `V⁻¹ vec(x)`.
    pub fn coefficients(&self, x: &Array2<C64>) -> Array1<C64> {
        self.inverse.dot(&vectorize(x))
    }

    /// Row `vec(Aᵀ)ᵀ V`, so that `tr[A e^{ℒt} x] = Σ_k w_k e^{λ_k t} c_k`.
    pub fn observable_weights(&self, a: &Op) -> Array1<C64> {
        vectorize(&a.data().t().to_owned()).dot(&self.vectors)
    }

    fn evolve(&self, x: &Array2<C64>, t: f64) -> Array2<C64> {
        let mut c = self.coefficients(x);
        c.iter_mut().zip(self.eigenvalues.iter()).for_each(|(c, l)| *c *= (l * t).exp());
        unvectorize(&self.vectors.dot(&c), self.dim)
    }
}

/// Propagation by dense matrix exponentials; the fallback for
/// ill-conditioned eigenbases.
#[derive(Clone, Debug)]
pub struct DensePropagator {
    dim: usize,
    generator: Array2<C64>,
}

impl DensePropagator {
    pub fn new(l: &Superoperator) -> Self {
        Self { dim: l.dim(), generator: l.data().clone() }
    }

    fn evolve(&self, x: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
        let u = expm(&(&self.generator * C64::new(t, 0.0)))?;
        Ok(unvectorize(&u.dot(&vectorize(x)), self.dim))
    }
}

/// Observable prepared for repeated trace evaluation.
#[derive(Clone, Debug)]
pub enum ObservableWeights {
    Spectral(Array1<C64>),
    Dense(Array2<C64>),
}

/// Time evolution `e^{ℒt}`, spectral when well conditioned.
#[derive(Clone, Debug)]
pub enum Propagator {
    Spectral(SpectralPropagator),
    Dense(DensePropagator),
}

impl Propagator {
    /// Spectral propagator, or the dense fallback when the eigenbasis
    /// condition number exceeds `condition_bound`.
    pub fn new(l: &Superoperator, condition_bound: f64) -> Result<Self> {
        match SpectralPropagator::new(l, condition_bound) {
            Ok(s) => Ok(Self::Spectral(s)),
            Err(Error::IllConditionedEigenbasis(_)) => Ok(Self::Dense(DensePropagator::new(l))),
            Err(e) => Err(e),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Spectral(s) => s.dim,
            Self::Dense(d) => d.dim,
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, Self::Spectral(_))
    }

    /// `e^{ℒt} x` for an arbitrary (not necessarily physical) operator `x`;
    /// `t` in µs.
    pub fn evolve(&self, x: &Array2<C64>, t: f64) -> Result<Array2<C64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("propagation time must be non-negative, got {t}")));
        }
        if x.nrows() != self.dim() || x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.nrows() });
        }
        match self {
            Self::Spectral(s) => Ok(s.evolve(x, t)),
            Self::Dense(d) => d.evolve(x, t),
        }
    }

    pub fn weights(&self, a: &Op) -> ObservableWeights {
        match self {
            Self::Spectral(s) => ObservableWeights::Spectral(s.observable_weights(a)),
            Self::Dense(_) => ObservableWeights::Dense(a.data().clone()),
        }
    }

    /// `tr[A e^{ℒt} x]` for every `t` in `times_us`.
    pub fn trace_series(&self, weights: &ObservableWeights, x: &Array2<C64>, times_us: &[f64]) -> Result<Vec<C64>> {
        if times_us.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidParameter("propagation times must be non-negative".into()));
        }
        match (self, weights) {
            (Self::Spectral(s), ObservableWeights::Spectral(w)) => {
                let c = s.coefficients(x);
                let wc: Vec<C64> = w.iter().zip(c.iter()).map(|(w, c)| w * c).collect();
                Ok(times_us
                    .iter()
                    .map(|&t| wc.iter().zip(s.eigenvalues.iter()).map(|(wc, l)| wc * (l * t).exp()).sum())
                    .collect())
            }
            (Self::Dense(d), ObservableWeights::Dense(a)) => {
                times_us.iter().map(|&t| Ok(trace_product(a, &d.evolve(x, t)?))).collect()
            }
            _ => Err(Error::InvalidParameter("observable weights belong to a different propagator".into())),
        }
    }
}

/// `e^{ℒt} ρ₀`; `t` in µs.
pub fn propagate(prop: &Propagator, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
    DensityMatrix::from_matrix_unchecked(prop.evolve(rho0.data(), t)?)
}
