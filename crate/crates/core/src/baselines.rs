//! Comparison estimators: DFT and overcomplete-DFT basis pursuit, and
//! on-grid SBL.

use nalgebra::DVector;

use crate::array_model::dft_basis;
use crate::linalg::{self, CMatrix, CVector, RVector};
use crate::offgrid_refine::{estimate_offgrid_2d, estimate_offgrid_linear, Estimate, RefineConfig};
use crate::sbl_core::{select_support, Hyperpriors, OffGridDictionary};
use crate::{Complex64, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct L1Config {
    /// Residual bound `‖y − D t‖ ≤ ε`.
    pub epsilon: f64,
    /// Proximal-gradient iterations per penalty value.
    pub max_iters: usize,
    /// Relative change in `t` that ends the inner loop.
    pub tol: f64,
    /// Bisection steps on the penalty.
    pub bisection_steps: usize,
}

impl L1Config {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_iters: 500,
            tol: 1e-7,
            bisection_steps: 20,
        }
    }

    /// `ε = √(T σ²) · √(1 + 2/√T)`.
    pub fn for_noise(t: usize, noise_var: f64) -> Self {
        let t = t as f64;
        Self::new((t * noise_var).sqrt() * (1.0 + 2.0 / t.sqrt()).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct L1Solution {
    pub coeffs: CVector,
    pub residual: f64,
    /// Whether `residual ≤ ε` was reached.
    pub feasible: bool,
    pub lambda: f64,
}

/// Complex soft-thresholding: shrinks each modulus by `thr`, keeps the phase.
pub fn soft_threshold(v: &CVector, thr: f64) -> CVector {
    v.map(|z| {
        let m = z.norm();
        if m <= thr {
            Complex64::new(0.0, 0.0)
        } else {
            z * ((m - thr) / m)
        }
    })
}

fn l1_norm(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm()).sum()
}

/// Largest squared singular value of `d` by power iteration on `dᴴd`.
fn lipschitz(d: &CMatrix) -> f64 {
    let m = d.ncols();
    let mut v = CVector::from_element(m, Complex64::new(1.0, 0.0)).normalize();
    let mut est = 0.0;
    for _ in 0..100 {
        let w = linalg::ad_mul_vec(d, &linalg::mul_vec(d, &v));
        let nrm = w.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        let done = (nrm - est).abs() <= 1e-10 * nrm;
        est = nrm;
        v = w / Complex64::new(nrm, 0.0);
        if done {
            break;
        }
    }
    est
}

struct Penalized<'a> {
    y: &'a CVector,
    d: &'a CMatrix,
    step: f64,
}

impl Penalized<'_> {
    fn objective(&self, t: &CVector, lambda: f64) -> f64 {
        0.5 * linalg::norm_sq(&(self.y - linalg::mul_vec(self.d, t))) + lambda * l1_norm(t)
    }

    /// Monotone FISTA from `start`.
    fn solve(&self, lambda: f64, start: CVector, max_iters: usize, tol: f64) -> CVector {
        let mut x = start;
        let mut fx = self.objective(&x, lambda);
        let mut v = x.clone();
        let mut k = 1.0_f64;
        for _ in 0..max_iters {
            let grad = linalg::ad_mul_vec(self.d, &(linalg::mul_vec(self.d, &v) - self.y));
            let z = soft_threshold(&(&v - grad * Complex64::new(self.step, 0.0)), lambda * self.step);
            let fz = self.objective(&z, lambda);
            let k_next = 0.5 * (1.0 + (1.0 + 4.0 * k * k).sqrt());
            let prev = x.clone();
            if fz <= fx {
                x = z.clone();
                fx = fz;
            }
            v = &x
                + (&z - &x) * Complex64::new(k / k_next, 0.0)
                + (&x - &prev) * Complex64::new((k - 1.0) / k_next, 0.0);
            k = k_next;
            let change = (&x - &prev).norm();
            if change <= tol * x.norm().max(1e-300) && fz <= fx {
                break;
            }
        }
        x
    }
}

/// `min ½‖y − D t‖² + λ‖t‖₁` by monotone accelerated proximal gradient.
pub fn l1_penalized(y: &CVector, d: &CMatrix, lambda: f64, max_iters: usize, tol: f64) -> Result<CVector> {
    check_dims(y, d)?;
    let lip = lipschitz(d);
    if lip == 0.0 {
        return Ok(CVector::zeros(d.ncols()));
    }
    let p = Penalized { y, d, step: 1.0 / lip };
    Ok(p.solve(lambda, CVector::zeros(d.ncols()), max_iters, tol))
}

fn check_dims(y: &CVector, d: &CMatrix) -> Result<()> {
    if d.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "dictionary rows",
            expected: y.len(),
            actual: d.nrows(),
        });
    }
    Ok(())
}

/// Basis pursuit denoising `min ‖t‖₁ s.t. ‖y − D t‖ ≤ ε`, by bisection on
/// the penalty of the Lagrangian form.
pub fn l1_recover(y: &CVector, d: &CMatrix, cfg: &L1Config) -> Result<L1Solution> {
    cfg.validate()?;
    check_dims(y, d)?;
    let m = d.ncols();
    let ynorm = y.norm();
    let lambda_max = linalg::ad_mul_vec(d, y).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if cfg.epsilon >= ynorm || lambda_max == 0.0 {
        return Ok(L1Solution {
            coeffs: CVector::zeros(m),
            residual: ynorm,
            feasible: cfg.epsilon >= ynorm,
            lambda: lambda_max,
        });
    }
    let lip = lipschitz(d);
    let p = Penalized { y, d, step: 1.0 / lip };
    let resid = |t: &CVector| (y - linalg::mul_vec(d, t)).norm();

    // residual grows with λ: walk down from λ_max by decades with warm
    // starts until feasible, then bisect log λ over the last bracket
    let floor = (lambda_max * 1e-8).ln();
    let mut hi = lambda_max.ln();
    let mut lo = hi;
    let mut warm = CVector::zeros(m);
    let mut steps = 0;
    let mut best: Option<(f64, CVector, f64, f64)> = None;
    let mut last = (warm.clone(), ynorm, lambda_max);
    while steps < cfg.bisection_steps && lo > floor {
        lo = (lo - std::f64::consts::LN_10).max(floor);
        steps += 1;
        let t = p.solve(lo.exp(), warm, cfg.max_iters, cfg.tol);
        let r = resid(&t);
        last = (t.clone(), r, lo.exp());
        warm = t;
        if r <= cfg.epsilon {
            best = Some((l1_norm(&warm), warm.clone(), r, lo.exp()));
            break;
        }
        hi = lo;
    }
    let Some(mut best) = best else {
        return Ok(L1Solution {
            coeffs: last.0,
            residual: last.1,
            feasible: false,
            lambda: last.2,
        });
    };
    while steps < cfg.bisection_steps {
        steps += 1;
        let mid = 0.5 * (lo + hi);
        let t = p.solve(mid.exp(), warm.clone(), cfg.max_iters, cfg.tol);
        let r = resid(&t);
        if r <= cfg.epsilon {
            lo = mid;
            let n1 = l1_norm(&t);
            if n1 < best.0 {
                best = (n1, t.clone(), r, mid.exp());
            }
        } else {
            hi = mid;
        }
        warm = t;
    }
    Ok(L1Solution {
        coeffs: best.1,
        residual: best.2,
        feasible: true,
        lambda: best.3,
    })
}

/// How a sparse coefficient vector becomes a channel estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reconstruction {
    /// `h = B t`.
    Direct,
    /// Least-squares refit on the atoms whose `|t_l|²` reaches the given
    /// fraction of the largest.
    Refit(f64),
}

/// Basis pursuit over `basis` (N×M) observed through pilots `x`.
pub fn l1_basis_estimate(y: &CVector, x: &CMatrix, basis: &CMatrix, cfg: &L1Config, rule: Reconstruction) -> Result<CVector> {
    if x.ncols() != basis.nrows() {
        return Err(Error::DimensionMismatch {
            context: "pilot columns",
            expected: basis.nrows(),
            actual: x.ncols(),
        });
    }
    let d = linalg::mul(x, basis);
    let sol = l1_recover(y, &d, cfg)?;
    match rule {
        Reconstruction::Direct => Ok(linalg::mul_vec(basis, &sol.coeffs)),
        Reconstruction::Refit(thr) => {
            let power: Vec<f64> = sol.coeffs.iter().map(|z| z.norm_sqr()).collect();
            let support = select_support(&power, thr, y.len());
            if support.is_empty() {
                return Ok(CVector::zeros(basis.nrows()));
            }
            let d_s = d.select_columns(&support);
            let g = linalg::lstsq(&d_s, y)?;
            Ok(linalg::mul_vec(&basis.select_columns(&support), &g))
        }
    }
}

/// Basis pursuit in the unitary DFT basis.
pub fn dft_estimate(y: &CVector, x: &CMatrix, cfg: &L1Config, rule: Reconstruction) -> Result<CVector> {
    let f = dft_basis(x.ncols())?;
    l1_basis_estimate(y, x, &f, cfg, rule)
}

/// Basis pursuit over the on-grid steering dictionary (`β = 0`).
pub fn overcomplete_dft_estimate(
    y: &CVector,
    x: &CMatrix,
    dict: &OffGridDictionary,
    cfg: &L1Config,
    rule: Reconstruction,
) -> Result<CVector> {
    let beta = RVector::zeros(dict.len());
    let phi = dict.is_planar().then(|| DVector::zeros(dict.len()));
    let a = dict.steering_matrix(&beta, phi.as_ref())?;
    l1_basis_estimate(y, x, &a, cfg, rule)
}

/// Standard SBL on a fixed grid. Planar dictionaries keep the starting
/// elevations that `cfg.elevation_init` and `seed` would give the off-grid
/// estimator, so both methods share one dictionary.
pub fn ongrid_sbl_estimate(
    y: &CVector,
    x: &CMatrix,
    dict: &OffGridDictionary,
    priors: &Hyperpriors,
    cfg: &RefineConfig,
    seed: u64,
) -> Result<Estimate> {
    let cfg = RefineConfig {
        refine_beta: false,
        refine_elevation: false,
        ..cfg.clone()
    };
    if dict.is_planar() {
        estimate_offgrid_2d(y, x, dict, priors, &cfg, seed)
    } else {
        estimate_offgrid_linear(y, x, dict, priors, &cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::{steering_linear, ArrayGeometry, Wavelength};
    use crate::channel_sim::{generate_pilots, nmse, observe_downlink};
    use crate::testutil::{c, cmat, cvec, rng};
    use proptest::prelude::*;
    use rand::Rng;

    fn column_normalized(mut d: CMatrix) -> CMatrix {
        for mut col in d.column_iter_mut() {
            let n = col.norm();
            col /= c(n);
        }
        d
    }

    #[test]
    fn identity_dictionary_is_soft_thresholding() {
        let mut r = rng(1);
        for _ in 0..20 {
            let y = cvec(&mut r, 12);
            let lambda = r.random_range(0.05..1.5);
            let t = l1_penalized(&y, &CMatrix::identity(12, 12), lambda, 500, 0.0).unwrap();
            let oracle = soft_threshold(&y, lambda);
            assert!((t - oracle).camax() < 1e-8);
        }
    }

    #[test]
    fn orthonormal_dictionary_matches_shrinkage_of_projection() {
        let mut r = rng(2);
        let q = cmat(&mut r, 16, 16).qr().q();
        let d = q.columns(0, 10).into_owned();
        let y = cvec(&mut r, 16);
        let t = l1_penalized(&y, &d, 0.4, 2000, 0.0).unwrap();
        let oracle = soft_threshold(&(d.adjoint() * &y), 0.4);
        assert!((t - oracle).camax() < 1e-8);
    }

    #[test]
    fn large_epsilon_gives_zero() {
        let mut r = rng(3);
        let d = cmat(&mut r, 10, 20);
        let y = cvec(&mut r, 10);
        let sol = l1_recover(&y, &d, &L1Config::new(y.norm() * 1.01)).unwrap();
        assert!(sol.coeffs.iter().all(|z| z.norm() == 0.0));
        assert!(sol.feasible);
    }

    #[test]
    fn exact_sparse_recovery() {
        let mut r = rng(4);
        let d = column_normalized(cmat(&mut r, 60, 40));
        for k in [0, 7, 39] {
            let y = d.column(k).into_owned();
            let sol = l1_recover(&y, &d, &L1Config { max_iters: 5000, tol: 1e-12, ..L1Config::new(1e-9) }).unwrap();
            let mut e = CVector::zeros(40);
            e[k] = c(1.0);
            assert!((sol.coeffs - e).camax() < 1e-4, "atom {k}");
        }
    }

    #[test]
    fn residual_meets_epsilon_and_infeasible_is_flagged() {
        let mut r = rng(5);
        let d = cmat(&mut r, 20, 40);
        let y = cvec(&mut r, 20);
        let eps = 0.3 * y.norm();
        let sol = l1_recover(&y, &d, &L1Config::new(eps)).unwrap();
        assert!(sol.feasible && sol.residual <= eps);
        assert!((&y - &d * &sol.coeffs).norm() <= eps * (1.0 + 1e-12));

        // rank-one dictionary cannot reach a generic y
        let thin = cmat(&mut r, 20, 1);
        let wide = CMatrix::from_fn(20, 5, |i, j| thin[(i, 0)] * c(j as f64 + 1.0));
        let sol = l1_recover(&y, &wide, &L1Config::new(1e-6)).unwrap();
        assert!(!sol.feasible);
        assert!(sol.residual > 1e-6);
    }

    #[test]
    fn epsilon_default() {
        let cfg = L1Config::for_noise(100, 0.1);
        assert!((cfg.epsilon - (10.0f64).sqrt() * 1.2f64.sqrt()).abs() < 1e-12);
        assert!(L1Config::new(-1.0).validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn penalized_objective_never_increases(seed in 0u64..1000, lambda in 0.01f64..2.0) {
            let mut r = rng(seed);
            let d = cmat(&mut r, 12, 30);
            let y = cvec(&mut r, 12);
            let p = Penalized { y: &y, d: &d, step: 1.0 / lipschitz(&d) };
            let mut t = CVector::zeros(30);
            let mut f = p.objective(&t, lambda);
            for _ in 0..40 {
                t = p.solve(lambda, t, 1, 0.0);
                let f2 = p.objective(&t, lambda);
                prop_assert!(f2 <= f + 1e-12 * f.abs());
                f = f2;
            }
        }
    }

    fn ula_setup(n: usize, spacing: f64) -> (ArrayGeometry, Wavelength) {
        (ArrayGeometry::ula(n, spacing).unwrap(), Wavelength::new(1.0).unwrap())
    }

    #[test]
    fn dft_recovers_on_grid_path() {
        let n = 32;
        let (geom, wl) = ula_setup(n, 0.5);
        // bin 21: sin θ = 2(−1/2 + 20/32)
        let theta = (2.0 * (-0.5 + 20.0 / 32.0f64)).asin();
        let h = steering_linear(&geom, theta, wl).into_inner() * Complex64::new(0.7, -0.4);
        let x = generate_pilots(24, n, 1.0, 9).unwrap();
        let y = &x.x * &h;
        for rule in [Reconstruction::Direct, Reconstruction::Refit(1e-2)] {
            let est = dft_estimate(&y, &x.x, &L1Config::new(1e-6), rule).unwrap();
            assert!(nmse(&est, &h).unwrap() < 1e-3, "{rule:?}");
        }
    }

    #[test]
    fn dft_leaks_for_off_grid_path() {
        let n = 80;
        let (geom, wl) = ula_setup(n, 0.5);
        let h = steering_linear(&geom, 5.0198f64.to_radians(), wl).into_inner();
        let x = CMatrix::identity(n, n);
        let f = dft_basis(n).unwrap();
        let d = linalg::mul(&x, &f);
        let sol = l1_recover(&h, &d, &L1Config::new(1e-6)).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| sol.coeffs[j].norm().total_cmp(&sol.coeffs[i].norm()));
        let mut top: Vec<usize> = order[..4].iter().map(|i| i + 1).collect();
        top.sort_unstable();
        assert_eq!(top, vec![43, 44, 45, 46]);
        let significant = sol.coeffs.iter().filter(|z| z.norm() > 0.05 * sol.coeffs.camax()).count();
        assert!(significant > 4);
    }

    #[test]
    fn overcomplete_matches_dft_when_grid_equals_bins() {
        let n = 24;
        let (geom, wl) = ula_setup(n, 0.5);
        let dict = OffGridDictionary::linear_sine(geom.clone(), wl, n, 0.5).unwrap();
        let f = dft_basis(n).unwrap();
        let a = dict.steering_matrix(&RVector::zeros(n), None).unwrap();
        assert!((&a * c(1.0 / (n as f64).sqrt()) - &f).camax() < 1e-12);

        let mut r = rng(11);
        let h = cvec(&mut r, n);
        let x = generate_pilots(16, n, 1.0, 3).unwrap();
        let y = observe_downlink(&x, &h, 0.05, 4).unwrap();
        let cfg = L1Config::for_noise(16, 0.05);
        for rule in [Reconstruction::Direct, Reconstruction::Refit(1e-2)] {
            let d = dft_estimate(&y, &x.x, &cfg, rule).unwrap();
            let o = overcomplete_dft_estimate(&y, &x.x, &dict, &cfg, rule).unwrap();
            assert!((&d - &o).camax() < 1e-6 * d.camax(), "{rule:?}");
        }
    }

    #[test]
    fn overcomplete_recovers_on_grid_path() {
        let n = 32;
        let (geom, wl) = ula_setup(n, 0.5);
        let dict = OffGridDictionary::linear(geom.clone(), wl, 64).unwrap();
        let h = dict.atom(17, 0.0, 0.0) * Complex64::new(1.2, 0.3);
        let x = generate_pilots(20, n, 1.0, 5).unwrap();
        let y = &x.x * &h;
        let est = overcomplete_dft_estimate(&y, &x.x, &dict, &L1Config::new(1e-6), Reconstruction::Refit(1e-2)).unwrap();
        assert!(nmse(&est, &h).unwrap() < 1e-3);
        let zero = overcomplete_dft_estimate(&y, &x.x, &dict, &L1Config::new(y.norm() * 2.0), Reconstruction::Direct).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn ongrid_sbl_is_offgrid_without_beta_steps() {
        let n = 16;
        let (geom, wl) = ula_setup(n, 0.5);
        let dict = OffGridDictionary::linear(geom, wl, 24).unwrap();
        let h = dict.atom(5, 0.3 * dict.r_theta(), 0.0) + dict.atom(15, -0.2 * dict.r_theta(), 0.0);
        let x = generate_pilots(12, n, 1.0, 6).unwrap();
        let y = observe_downlink(&x, &h, 0.01, 7).unwrap();
        let cfg = RefineConfig { max_iters: 30, ..RefineConfig::default() };
        let on = ongrid_sbl_estimate(&y, &x.x, &dict, &Hyperpriors::default(), &cfg, 0).unwrap();
        let off = estimate_offgrid_linear(
            &y,
            &x.x,
            &dict,
            &Hyperpriors::default(),
            &RefineConfig { refine_beta: false, ..cfg },
        )
        .unwrap();
        assert!(on.state.beta.iter().all(|b| *b == 0.0));
        assert_eq!(on.h, off.h);
        assert_eq!(on.support, off.support);
    }

    #[test]
    fn ongrid_truth_gives_comparable_offgrid_accuracy() {
        let n = 32;
        let (geom, wl) = ula_setup(n, 0.5);
        let dict = OffGridDictionary::linear(geom, wl, 48).unwrap();
        let mut ratios = Vec::new();
        for s in 0..6u64 {
            let mut r = rng(100 + s);
            let mut h = CVector::zeros(n);
            for _ in 0..3 {
                let l = r.random_range(0..48);
                h += dict.atom(l, 0.0, 0.0) * crate::channel_sim::complex_gaussian(&mut r, 1.0);
            }
            let x = generate_pilots(24, n, 1.0, 200 + s).unwrap();
            let y = observe_downlink(&x, &h, 0.01, 300 + s).unwrap();
            // fixed steps keep dithering by r/100 around an exact grid hit
            let cfg = RefineConfig {
                max_iters: 60,
                step_mode: crate::offgrid_refine::StepMode::LineSearch,
                ..RefineConfig::default()
            };
            let pr = Hyperpriors::default();
            let on = ongrid_sbl_estimate(&y, &x.x, &dict, &pr, &cfg, 0).unwrap();
            let off = estimate_offgrid_linear(&y, &x.x, &dict, &pr, &cfg).unwrap();
            ratios.push(nmse(&off.h, &h).unwrap() / nmse(&on.h, &h).unwrap());
        }
        ratios.sort_by(f64::total_cmp);
        assert!(ratios[3] < 2.0, "{ratios:?}");
    }

    #[test]
    fn sine_grid_needs_half_wavelength_spacing() {
        let (geom, wl) = ula_setup(8, 0.4);
        assert!(OffGridDictionary::linear_sine(geom, wl, 8, 0.4).is_err());
    }
}
