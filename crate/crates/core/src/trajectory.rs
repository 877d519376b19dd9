//! Monte Carlo wavefunction unraveling of the master equation.
//!
//! First-order jump scheme on a fixed step: the no-jump part uses the exact
//! propagator `exp(-i H_eff dt)` computed once per parameter set.

use std::io::Write;

use ndarray::Array1;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::operators::{hamiltonian_with, Atom, HilbertDims, Op, Operators, SystemParams};
use crate::units::ns_to_us;

/// Identifier of the generator behind every recorded seed.
pub const RNG_ALGORITHM: &str = "chacha20";

const MAX_JUMP_PROBABILITY: f64 = 0.1;
const NORM_FLOOR: f64 = 1e-150;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpChannel {
    CavityDecay,
    SpontaneousEmission,
}

impl JumpChannel {
    pub fn label(&self) -> &'static str {
        match self {
            Self::CavityDecay => "cavity_decay",
            Self::SpontaneousEmission => "spontaneous_emission",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time_ns: f64,
    pub channel: JumpChannel,
}

/// Run parameters. Times are in ns.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub t_final_ns: f64,
    pub dt_ns: f64,
    pub seed: u64,
    /// Evolution discarded before recording starts.
    pub burn_in_ns: f64,
    /// Record every `record_stride`-th step.
    pub record_stride: usize,
    /// Initial Fock/atom basis state.
    pub initial: (usize, Atom),
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { t_final_ns: 1000.0, dt_ns: 0.05, seed: 0, burn_in_ns: 0.0, record_stride: 1, initial: (0, Atom::Ground) }
    }
}

impl TrajectoryConfig {
    fn validate(&self) -> Result<()> {
        if !(self.t_final_ns > 0.0 && self.t_final_ns.is_finite()) {
            return Err(Error::InvalidParameter("t_final must be positive".into()));
        }
        if !(self.dt_ns > 0.0 && self.dt_ns <= self.t_final_ns) {
            return Err(Error::InvalidParameter("dt must be positive and below t_final".into()));
        }
        if !(self.burn_in_ns >= 0.0) {
            return Err(Error::InvalidParameter("burn-in must be non-negative".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidParameter("record stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Recorded steps after burn-in, rounded up to a whole number of strides.
    fn steps(&self) -> (usize, usize) {
        let burn = (self.burn_in_ns / self.dt_ns).round() as usize;
        let n = (self.t_final_ns / self.dt_ns).round().max(1.0) as usize;
        let n = n.div_ceil(self.record_stride) * self.record_stride;
        (burn, n)
    }
}

/// One stochastic trajectory. Times start at zero after the burn-in.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub times_ns: Vec<f64>,
    /// `⟨a†a⟩`
    pub n_phot: Vec<f64>,
    /// `⟨a†²a²⟩`
    pub n_pair: Vec<f64>,
    pub jumps: Vec<Jump>,
    pub seed: u64,
    pub rng_algorithm: String,
}

impl TrajectoryRecord {
    /// Columns `time_ns,n_phot,n_pair`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time_ns", "n_phot", "n_pair"])?;
        for i in 0..self.times_ns.len() {
            wr.write_record(&[self.times_ns[i].to_string(), self.n_phot[i].to_string(), self.n_pair[i].to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Columns `time_ns,channel`.
    pub fn write_jumps_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time_ns", "channel"])?;
        for j in &self.jumps {
            wr.write_record(&[j.time_ns.to_string(), j.channel.label().to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn count(&self, channel: JumpChannel) -> usize {
        self.jumps.iter().filter(|j| j.channel == channel).count()
    }

    pub fn duration_ns(&self) -> f64 {
        match (self.times_ns.first(), self.times_ns.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Nonzero entries of an operator, for cheap repeated application.
#[derive(Clone, Debug)]
struct SparseOp {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn from_op(op: &Op) -> Self {
        let entries = op
            .data()
            .indexed_iter()
            .filter(|(_, v)| v.norm() != 0.0)
            .map(|((i, j), v)| (i, j, *v))
            .collect();
        Self { entries }
    }

    fn apply_into(&self, psi: &[C64], out: &mut [C64]) {
        out.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for &(i, j, v) in &self.entries {
            out[i] += v * psi[j];
        }
    }
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Precomputed no-jump propagator and jump operators for one parameter set
/// and step size.
#[derive(Clone, Debug)]
pub struct Unraveling {
    params: SystemParams,
    dims: HilbertDims,
    dt_ns: f64,
    /// Row-major `exp(-i H_eff dt)`.
    step: Vec<C64>,
    a: SparseOp,
    sigma_minus: SparseOp,
}

impl Unraveling {
    pub fn new(params: SystemParams, dims: HilbertDims, dt_ns: f64) -> Result<Self> {
        params.validate()?;
        if !(dt_ns > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        let ops = Operators::new(dims);
        let h = hamiltonian_with(&params, &ops);
        let damping = &ops.n_phot.scale(params.kappa) + &ops.n_exc.scale(params.gamma);
        let h_eff = &h - &damping.scale_complex(C64::new(0.0, 1.0));
        let gen = h_eff.data() * C64::new(0.0, -ns_to_us(dt_ns));
        let step = expm(&gen)?.iter().copied().collect();
        Ok(Self {
            params,
            dims,
            dt_ns,
            step,
            a: SparseOp::from_op(&ops.a),
            sigma_minus: SparseOp::from_op(&ops.sigma_minus),
        })
    }

    pub fn dt_ns(&self) -> f64 {
        self.dt_ns
    }

    /// Single trajectory. `config.dt_ns` must match the precomputed step.
    pub fn run(&self, config: &TrajectoryConfig) -> Result<TrajectoryRecord> {
        config.validate()?;
        if (config.dt_ns - self.dt_ns).abs() > 1e-12 * self.dt_ns {
            return Err(Error::InvalidParameter("dt differs from the precomputed propagator".into()));
        }
        let (n0, s0) = config.initial;
        if n0 > self.dims.n_max() {
            return Err(Error::InvalidParameter(format!("initial photon number {n0} exceeds the cutoff")));
        }

        let d = self.dims.dim();
        let dt_us = ns_to_us(self.dt_ns);
        let (kappa, gamma) = (self.params.kappa, self.params.gamma);
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

        let mut psi: Vec<C64> = self.dims.basis_state(n0, s0).to_vec();
        let mut next = vec![C64::new(0.0, 0.0); d];
        let mut a_psi = vec![C64::new(0.0, 0.0); d];
        let mut a2_psi = vec![C64::new(0.0, 0.0); d];
        let mut sm_psi = vec![C64::new(0.0, 0.0); d];

        let (burn, n_steps) = config.steps();
        let capacity = n_steps / config.record_stride + 1;
        let mut times = Vec::with_capacity(capacity);
        let mut n_phot = Vec::with_capacity(capacity);
        let mut n_pair = Vec::with_capacity(capacity);
        let mut jumps = Vec::new();

        for k in 0..=(burn + n_steps) {
            // psi is normalized here.
            self.a.apply_into(&psi, &mut a_psi);
            self.sigma_minus.apply_into(&psi, &mut sm_psi);
            let n = norm_sqr(&a_psi);
            let pe = norm_sqr(&sm_psi);

            let t_rel = (k as f64 - burn as f64) * self.dt_ns;
            if k >= burn && (k - burn) % config.record_stride == 0 {
                self.a.apply_into(&a_psi, &mut a2_psi);
                times.push(t_rel);
                n_phot.push(n);
                n_pair.push(norm_sqr(&a2_psi));
            }
            if k == burn + n_steps {
                break;
            }

            let rate_c = 2.0 * kappa * n;
            let rate_s = 2.0 * gamma * pe;
            let p_jump = dt_us * (rate_c + rate_s);
            if p_jump >= MAX_JUMP_PROBABILITY {
                return Err(Error::StepTooLarge(p_jump));
            }
            let t_after = t_rel + self.dt_ns;
            if rng.random::<f64>() < p_jump {
                let channel = if rng.random::<f64>() * (rate_c + rate_s) < rate_c {
                    psi.copy_from_slice(&a_psi);
                    JumpChannel::CavityDecay
                } else {
                    psi.copy_from_slice(&sm_psi);
                    JumpChannel::SpontaneousEmission
                };
                if k + 1 > burn {
                    jumps.push(Jump { time_ns: t_after, channel });
                }
            } else {
                for (i, out) in next.iter_mut().enumerate() {
                    let row = &self.step[i * d..(i + 1) * d];
                    *out = row.iter().zip(&psi).map(|(u, x)| u * x).sum();
                }
                std::mem::swap(&mut psi, &mut next);
            }
            let norm2 = norm_sqr(&psi);
            if !(norm2 > NORM_FLOOR) {
                return Err(Error::StateCollapseToZero(t_after));
            }
            let inv = 1.0 / norm2.sqrt();
            psi.iter_mut().for_each(|z| *z *= inv);
        }

        Ok(TrajectoryRecord {
            times_ns: times,
            n_phot,
            n_pair,
            jumps,
            seed: config.seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
        })
    }
}

/// Single trajectory from scratch.
pub fn run_trajectory(params: SystemParams, dims: HilbertDims, config: &TrajectoryConfig) -> Result<TrajectoryRecord> {
    Unraveling::new(params, dims, config.dt_ns)?.run(config)
}

/// Pointwise mean photon number over independent trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleMean {
    pub times_ns: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_traj: usize,
}

/// Mean and standard error of `⟨a†a⟩` over trajectories with seeds
/// `config.seed .. config.seed + n_traj`. Trajectories run in parallel; the
/// reduction runs in seed order.
pub fn ensemble_average(
    params: SystemParams,
    dims: HilbertDims,
    config: &TrajectoryConfig,
    n_traj: usize,
) -> Result<EnsembleMean> {
    if n_traj < 2 {
        return Err(Error::StatisticalUnderflow(n_traj));
    }
    let unravel = Unraveling::new(params, dims, config.dt_ns)?;
    let records: Vec<Result<TrajectoryRecord>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|k| {
            let cfg = TrajectoryConfig { seed: config.seed.wrapping_add(k), ..config.clone() };
            unravel.run(&cfg)
        })
        .collect();

    let mut records = records.into_iter();
    let first = records.next().expect("n_traj >= 2")?;
    let len = first.times_ns.len();
    let mut sum = Array1::from(first.n_phot.clone());
    let mut sum_sq = sum.mapv(|x| x * x);
    for r in records {
        let r = r?;
        let v = Array1::from(r.n_phot);
        sum_sq += &v.mapv(|x| x * x);
        sum += &v;
    }
    let n = n_traj as f64;
    let mean = &sum / n;
    let var = (&sum_sq - &(&mean * &sum)) / (n - 1.0);
    let stderr = var.mapv(|v| (v.max(0.0) / n).sqrt());
    debug_assert_eq!(mean.len(), len);
    Ok(EnsembleMean { times_ns: first.times_ns, mean: mean.to_vec(), stderr: stderr.to_vec(), n_traj })
}
