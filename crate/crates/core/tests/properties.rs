//! Model invariants checked over random inputs.

use std::f64::consts::PI;

use offgrid_sbl::array_model::{dft_basis, leakage_coefficient, steering_2d, steering_linear, ArrayGeometry, Wavelength};
use offgrid_sbl::channel_sim::{
    complex_gaussian, derive_seed, generate_channel, generate_pilots, nmse, observe_downlink, ClusterChannelConfig,
};
use offgrid_sbl::joint_uplink::{update_gamma_joint, update_tau, JointState, UplinkView};
use offgrid_sbl::offgrid_refine::{beta_step_fixed, phi_step, RefineConfig};
use offgrid_sbl::sbl_core::{
    compute_posterior, log_evidence, select_support, update_alpha, update_gamma, Hyperpriors, OffGridDictionary,
    Posterior, SblState,
};
use offgrid_sbl::{CMatrix, CVector, Complex64, RVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cmat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(r, 1.0))
}

fn cvec(r: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| complex_gaussian(r, 1.0))
}

fn random_precisions(r: &mut ChaCha8Rng, l: usize) -> RVector {
    RVector::from_fn(l, |_, _| 10f64.powf(r.random_range(-2.0..2.0)))
}

fn hermitian_psd(m: &CMatrix) -> bool {
    let asym = (m - m.adjoint()).camax();
    let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let min_eig = sym.symmetric_eigenvalues().min();
    asym <= 1e-9 * m.camax().max(1.0) && min_eig > -1e-10
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_steering_is_planar_steering_at_zero_elevation(n in 2usize..40, spacing in 0.05f64..1.0, theta in -PI..PI) {
        let g = ArrayGeometry::ula(n, spacing).unwrap();
        let wl = Wavelength::new(0.3).unwrap();
        let a = steering_linear(&g, theta, wl).into_inner();
        let b = steering_2d(&g, theta, 0.0, wl).into_inner();
        prop_assert_eq!(a[0], Complex64::new(1.0, 0.0));
        prop_assert!((a - b).camax() < 1e-14);
    }

    #[test]
    fn dft_basis_is_unitary(n in 1usize..24) {
        let f = dft_basis(n).unwrap();
        let gram = f.adjoint() * &f;
        prop_assert!((gram - CMatrix::identity(n, n)).camax() < 1e-12);
    }

    #[test]
    fn leakage_closed_form_matches_dense_projection(n in 2usize..96, d_over_lambda in 0.2f64..1.0, theta in -PI / 2.0..PI / 2.0) {
        let f = dft_basis(n).unwrap();
        let a = CVector::from_fn(n, |i, _| Complex64::from_polar(1.0, -2.0 * PI * d_over_lambda * i as f64 * theta.sin()));
        let dense = f.adjoint() * a;
        for bin in 1..=n {
            let closed = leakage_coefficient(bin, theta, n, d_over_lambda).unwrap();
            prop_assert!((closed - dense[bin - 1].norm()).abs() < 1e-10, "bin {} of {}", bin, n);
        }
    }

    #[test]
    fn pilots_carry_exact_power(t in 1usize..30, n in 1usize..30, power in 0.01f64..10.0, seed: u64) {
        let x = generate_pilots(t, n, power, seed).unwrap();
        let energy: f64 = x.x.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((energy / (power * (t * n) as f64) - 1.0).abs() < 1e-12);
        prop_assert_eq!(x.x, generate_pilots(t, n, power, seed).unwrap().x);
    }

    #[test]
    fn channel_is_the_sum_of_its_paths(clusters in 1usize..4, subpaths in 1usize..5, spread in 0.0f64..0.5, seed: u64) {
        let g = ArrayGeometry::uniform_rectangular(4, 3, 0.07).unwrap();
        let wl = Wavelength::new(0.14).unwrap();
        let cfg = ClusterChannelConfig::new(clusters, subpaths, (-1.0, 1.0), spread).with_elevation((0.0, 0.8));
        let ch = generate_channel(&cfg, &g, wl, seed).unwrap();
        prop_assert_eq!(ch.paths.len(), clusters * subpaths);
        let mut h = CVector::zeros(g.len());
        for p in &ch.paths {
            h += steering_2d(&g, p.theta, p.phi, wl).into_inner() * p.gain;
        }
        prop_assert!((&h - &ch.h).camax() < 1e-10);
        prop_assert_eq!(ch.h, generate_channel(&cfg, &g, wl, seed).unwrap().h);
    }

    #[test]
    fn noiseless_observation_is_exact(t in 1usize..12, n in 1usize..12, seed: u64) {
        let mut r = rng(seed);
        let x = generate_pilots(t, n, 1.0, seed).unwrap();
        let h = cvec(&mut r, n);
        let y = observe_downlink(&x, &h, 0.0, seed).unwrap();
        prop_assert!((y - &x.x * &h).camax() < 1e-12);
    }

    #[test]
    fn nmse_is_scale_aware(n in 1usize..20, seed: u64) {
        let mut r = rng(seed);
        let h = cvec(&mut r, n);
        let g = cvec(&mut r, n);
        prop_assert_eq!(nmse(&h, &h).unwrap(), 0.0);
        prop_assert!((nmse(&CVector::zeros(n), &h).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((nmse(&(&h * Complex64::new(2.0, 0.0)), &h).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(nmse(&g, &h).unwrap() >= 0.0);
    }

    #[test]
    fn derived_seeds_are_stable_and_separate_streams(master: u64, trial in 0u64..1000) {
        let s: Vec<u64> = (0..6).map(|k| derive_seed(master, trial, k)).collect();
        prop_assert_eq!(&s, &(0..6).map(|k| derive_seed(master, trial, k)).collect::<Vec<_>>());
        for i in 0..6 {
            for j in i + 1..6 {
                prop_assert_ne!(s[i], s[j]);
            }
        }
        prop_assert_ne!(s[0], derive_seed(master, trial + 1, 0));
    }

    #[test]
    fn posterior_covariance_is_hermitian_psd(t in 2usize..14, l in 2usize..16, alpha in 0.05f64..50.0, seed: u64) {
        let mut r = rng(seed);
        let phi = cmat(&mut r, t, l);
        let y = cvec(&mut r, t);
        let gamma = random_precisions(&mut r, l);
        let (mu, sigma) = compute_posterior(&y, &phi, alpha, &gamma).unwrap();
        prop_assert_eq!(mu.len(), l);
        prop_assert!(hermitian_psd(&sigma));
    }

    #[test]
    fn hyperparameter_updates_stay_positive_and_raise_evidence(t in 3usize..12, l in 2usize..14, seed: u64) {
        let mut r = rng(seed);
        let phi = cmat(&mut r, t, l);
        let y = cvec(&mut r, t);
        let priors = Hyperpriors::default();
        let mut s = SblState::initial(l, None);
        s.alpha = r.random_range(0.1..10.0);
        s.gamma = random_precisions(&mut r, l);
        s.set_posterior(Posterior::compute(&y, &phi, s.alpha, &s.gamma, true).unwrap()).unwrap();
        let before = log_evidence(&y, &phi, s.alpha, &s.gamma, &priors).unwrap();

        let alpha = update_alpha(&s, &y, &phi, &priors).unwrap();
        prop_assert!(alpha > 0.0 && alpha.is_finite());
        let mid = log_evidence(&y, &phi, alpha, &s.gamma, &priors).unwrap();
        prop_assert!(mid - before >= -1e-9 * before.abs().max(1.0));

        s.alpha = alpha;
        s.set_posterior(Posterior::compute(&y, &phi, s.alpha, &s.gamma, true).unwrap()).unwrap();
        let gamma = update_gamma(&s, &priors).unwrap();
        prop_assert!(gamma.iter().all(|g| *g > 0.0 && g.is_finite()));
        let after = log_evidence(&y, &phi, alpha, &gamma, &priors).unwrap();
        prop_assert!(after - mid >= -1e-9 * mid.abs().max(1.0));
    }

    #[test]
    fn evidence_ignores_atom_order(t in 2usize..10, l in 2usize..10, seed: u64) {
        let mut r = rng(seed);
        let phi = cmat(&mut r, t, l);
        let y = cvec(&mut r, t);
        let gamma = random_precisions(&mut r, l);
        let priors = Hyperpriors::default();
        let perm: Vec<usize> = (0..l).rev().collect();
        let phi_p = CMatrix::from_fn(t, l, |i, j| phi[(i, perm[j])]);
        let gamma_p = RVector::from_fn(l, |j, _| gamma[perm[j]]);
        let a = log_evidence(&y, &phi, 1.3, &gamma, &priors).unwrap();
        let b = log_evidence(&y, &phi_p, 1.3, &gamma_p, &priors).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn dictionary_grid_is_uniform(l in 1usize..300, planar: bool) {
        let g = ArrayGeometry::ula(4, 0.5).unwrap();
        let wl = Wavelength::new(1.0).unwrap();
        let d = if planar { OffGridDictionary::planar(g, wl, l) } else { OffGridDictionary::linear(g, wl, l) }.unwrap();
        let width = if planar { 2.0 * PI } else { PI };
        prop_assert!((d.r_theta() - width / l as f64).abs() < 1e-14);
        for w in d.grid().windows(2) {
            prop_assert!((w[1] - w[0] - d.r_theta()).abs() < 1e-12);
        }
    }

    #[test]
    fn support_respects_threshold_and_cap(power in proptest::collection::vec(0.0f64..1.0, 1..40), threshold in 0.0f64..1.0, cap in 1usize..40) {
        let idx = select_support(&power, threshold, cap);
        let max = power.iter().cloned().fold(0.0, f64::max);
        prop_assert!(idx.len() <= cap.min(power.len()));
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| power[i] >= threshold * max));
    }

    #[test]
    fn fixed_steps_move_by_one_hundredth_of_the_grid(l in 1usize..20, seed: u64) {
        let mut r = rng(seed);
        let r_theta = 0.03;
        let beta = RVector::from_fn(l, |_, _| r.random_range(-0.2..0.2) * r_theta);
        let zeta = RVector::from_fn(l, |_, _| [-1.0, 0.0, 2.0][r.random_range(0..3)]);
        let next = beta_step_fixed(&beta, &zeta, r_theta, 0.5);
        for j in 0..l {
            prop_assert!((next[j] - beta[j] - r_theta / 100.0 * zeta[j].signum() * (zeta[j] != 0.0) as u8 as f64).abs() < 1e-15);
        }

        let cfg = RefineConfig::default();
        let phi = RVector::from_fn(l, |_, _| r.random_range(0.0..PI / 2.0));
        let stepped = phi_step(&phi, &zeta, r.random_range(0..500), &cfg);
        prop_assert!(stepped.iter().all(|p| (0.0..=PI / 2.0).contains(p)));
    }

    #[test]
    fn joint_precisions_stay_positive(n in 4usize..10, t in 3usize..8, l in 4usize..12, seed: u64) {
        let mut r = rng(seed);
        let dict = OffGridDictionary::linear(ArrayGeometry::ula(n, 0.5).unwrap(), Wavelength::new(1.0).unwrap(), l).unwrap();
        let x = cmat(&mut r, t, n);
        let y = cvec(&mut r, t);
        let up = UplinkView { h_bar: cvec(&mut r, n), wavelength: Wavelength::new(1.1).unwrap() };
        let mut s = JointState::initial(l);
        s.gamma = random_precisions(&mut r, l);
        s.tau = RVector::from_fn(l, |_, _| r.random_range(0.2..5.0));
        s.refresh(&y, &x, &up, &dict).unwrap();
        prop_assert!(hermitian_psd(&s.sigma) && hermitian_psd(&s.sigma_bar));
        let tau = update_tau(&s).unwrap();
        prop_assert!(tau.iter().all(|v| *v > 0.0 && v.is_finite()));
        let gamma = update_gamma_joint(&s, &Hyperpriors::default()).unwrap();
        prop_assert!(gamma.iter().all(|v| *v > 0.0 && v.is_finite()));
    }
}
