use cavity_qed::analysis::{asymmetry_map, gaussian_smooth_2d};
use cavity_qed::averaging::{averaged_g2, Ensemble, EnsemblePoint};
use cavity_qed::correlations::{CorrGrid, CorrSource, CorrelationEngine};
use cavity_qed::fitting::{fit_damped_oscillation, FitModel, FitOptions};
use cavity_qed::liouvillian::{build_liouvillian, DensityMatrix, Propagator};
use cavity_qed::operators::{HilbertDims, SystemParams};
use cavity_qed::trajectory::{run_trajectory, TrajectoryConfig};
use cavity_qed::units::{mhz_to_angular, mhz_to_rad_per_ns, uniform_grid};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = SystemParams> {
    (1.0..30.0f64, 0.5..5.0f64, 0.5..6.0f64, -20.0..20.0f64, -20.0..20.0f64, 0.0..10.0f64).prop_map(|(g, k, gm, da, dc, eta)| {
        SystemParams::from_mhz(g, k, gm, da, dc, eta).unwrap()
    })
}

/// Random density matrix `M M† / tr`.
fn density(dim: usize) -> impl Strategy<Value = Array2<C64>> {
    proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), dim * dim).prop_map(move |v| {
        let m = Array2::from_shape_fn((dim, dim), |(i, j)| C64::new(v[i * dim + j].0, v[i * dim + j].1));
        let r = m.dot(&m.t().mapv(|z| z.conj()));
        let t = r.diag().sum();
        r / t
    })
}

fn grid(n: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| Array2::from_shape_vec((n, n), v).unwrap())
}

fn surface(values: Array2<f64>) -> CorrGrid {
    let axis = uniform_grid(0.0, 1.5 * (values.nrows() - 1) as f64, 1.5);
    CorrGrid { tau1_ns: axis.clone(), tau2_ns: Some(axis), values, norm: 1.0, source: CorrSource::Params(SystemParams::reference()) }
}

fn max_abs(a: &Array2<C64>) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn liouvillian_preserves_trace_and_hermiticity(p in params(), rho in density(6)) {
        let l = build_liouvillian(&p, HilbertDims::new(2).unwrap());
        prop_assert!(l.trace_defect() < 1e-10);
        let d = l.apply(&rho).unwrap();
        prop_assert!(d.diag().sum().norm() < 1e-10);
        prop_assert!(max_abs(&(&d - &d.t().mapv(|z| z.conj()))) < 1e-10);
    }

    #[test]
    fn propagation_composes(p in params(), rho in density(6), s in 0.0..0.2f64, t in 0.0..0.2f64) {
        let prop = Propagator::new(&build_liouvillian(&p, HilbertDims::new(2).unwrap()), 1e10).unwrap();
        let once = prop.evolve(&rho, s + t).unwrap();
        let twice = prop.evolve(&prop.evolve(&rho, s).unwrap(), t).unwrap();
        prop_assert!(max_abs(&(&once - &twice)) < 1e-9);
        let st = DensityMatrix::new(once.clone()).unwrap();
        prop_assert!((st.trace().re - 1.0).abs() < 1e-9);
        prop_assert!(st.hermiticity_defect() < 1e-9);
    }

    #[test]
    fn g2_is_even_in_delay(p in params()) {
        let p = p.with_eta(p.eta.max(mhz_to_angular(0.5)));
        let g = CorrelationEngine::new(p, HilbertDims::new(3).unwrap()).unwrap().g2(&[0.0, 3.0, 9.0]).unwrap().symmetric();
        let v = g.series();
        let n = v.len();
        for k in 0..n {
            prop_assert_eq!(v[k], v[n - 1 - k]);
            prop_assert_eq!(g.tau1_ns[k], -g.tau1_ns[n - 1 - k]);
        }
    }

    #[test]
    fn asymmetry_is_antisymmetric(v in grid(9)) {
        let m = asymmetry_map(&surface(v)).unwrap();
        for i in 0..9 {
            prop_assert_eq!(m.values[[i, i]], 0.0);
            for j in 0..9 {
                prop_assert_eq!(m.values[[i, j]], -m.values[[j, i]]);
            }
        }
    }

    #[test]
    fn smoothing_is_linear_and_conserves_mass(a in grid(20), b in grid(20), x in -3.0..3.0f64, fwhm in 1.5..6.0f64) {
        let sa = gaussian_smooth_2d(&surface(a.clone()), fwhm).unwrap().values;
        let sb = gaussian_smooth_2d(&surface(b.clone()), fwhm).unwrap().values;
        let mix = gaussian_smooth_2d(&surface(&a * x + &b), fwhm).unwrap().values;
        let lin = &sa * x + &sb;
        prop_assert!(mix.iter().zip(lin.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
        prop_assert!((sa.sum() - a.sum()).abs() < 1e-10);
    }

    #[test]
    fn smoothing_commutes_with_antisymmetrization(a in grid(16), fwhm in 1.5..6.0f64) {
        let anti = &a - &a.t();
        let lhs = gaussian_smooth_2d(&surface(anti), fwhm).unwrap().values;
        let s = gaussian_smooth_2d(&surface(a), fwhm).unwrap().values;
        let rhs = &s - &s.t();
        prop_assert!(lhs.iter().zip(rhs.iter()).all(|(u, v)| (u - v).abs() < 1e-12));
    }

    #[test]
    fn weight_rescaling_is_invisible(w1 in 0.1..5.0f64, w2 in 0.1..5.0f64, c in 0.01..100.0f64) {
        let base = SystemParams::reference().with_eta_over_kappa(2.0);
        let dims = HilbertDims::new(3).unwrap();
        let pts = |s: f64| vec![
            EnsemblePoint { g: base.g, delta_a: base.delta_a, weight: w1 * s },
            EnsemblePoint { g: 0.6 * base.g, delta_a: base.delta_a, weight: w2 * s },
        ];
        let taus = [0.0, 20.0];
        let a = averaged_g2(&Ensemble::new("a", pts(1.0)).unwrap(), &base, dims, &taus).unwrap().series();
        let b = averaged_g2(&Ensemble::new("b", pts(c)).unwrap(), &base, dims, &taus).unwrap().series();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12 * x.abs());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fit_recovers_planted_models(
        decay in 60.0..200.0f64,
        fast_amp in 0.05..0.4f64,
        slow_amp in 0.2..1.0f64,
        fast_mhz in 25.0..40.0f64,
        slow_mhz in 5.0..12.0f64,
        phase in -1.0..1.0f64,
    ) {
        let m = FitModel {
            decay_ns: decay,
            fast_amp,
            slow_amp,
            fast_freq: mhz_to_rad_per_ns(fast_mhz),
            slow_freq: mhz_to_rad_per_ns(slow_mhz),
            slow_phase: phase,
            offset: 1.0,
        };
        let taus = uniform_grid(0.0, 300.0, 1.0);
        let y: Vec<f64> = taus.iter().map(|&t| m.eval(t)).collect();
        let f = fit_damped_oscillation(&taus, &y, None, &FitOptions::default()).unwrap().model;
        prop_assert!((f.fast_freq / m.fast_freq - 1.0).abs() < 1e-6);
        prop_assert!((f.slow_freq / m.slow_freq - 1.0).abs() < 1e-6);
        prop_assert!((f.decay_ns / m.decay_ns - 1.0).abs() < 1e-6);
        prop_assert!((f.slow_phase - m.slow_phase).abs() < 1e-6);
    }

    #[test]
    fn trajectories_are_reproducible(seed in any::<u64>(), ratio in 0.5..4.5f64) {
        let p = SystemParams::reference().with_eta_over_kappa(ratio);
        let cfg = TrajectoryConfig { t_final_ns: 100.0, seed, record_stride: 4, ..Default::default() };
        let dims = HilbertDims::new(6).unwrap();
        let a = run_trajectory(p, dims, &cfg).unwrap();
        let b = run_trajectory(p, dims, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.n_phot.iter().all(|v| *v >= 0.0 && *v <= 6.0 + 1e-12));
        prop_assert!(a.n_pair.iter().all(|v| *v >= 0.0));
    }
}
