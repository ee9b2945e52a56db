//! Uplink-aided estimation: the downlink measurements and the LS uplink
//! channel estimate share one precision vector `γ`, so angular reciprocity
//! between the bands sharpens the common support. The uplink weights carry
//! an extra per-component scaling `τ`.

use crate::array_model::Wavelength;
use crate::linalg::{self, CMatrix, CVector, RVector};
use crate::offgrid_refine::{
    beta_step_fixed, beta_step_linesearch, surrogate_gradient, surrogate_objective, RefineConfig, StepMode, TraceRow,
};
use crate::sbl_core::{
    alpha_from_eta, gamma_from_second_moments, refit_channel, second_moments, select_support, trace_phi_sigma_phi,
    Hyperpriors, OffGridDictionary, Posterior, GAMMA_CEILING,
};
use crate::{Error, Result};

/// Bounds on the uplink scaling.
pub const TAU_MIN: f64 = 1e-12;
pub const TAU_MAX: f64 = 1e12;

/// Uplink side information: the LS channel estimate of the served user and
/// the uplink carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct UplinkView {
    pub h_bar: CVector,
    pub wavelength: Wavelength,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    /// Downlink noise precision.
    pub alpha: f64,
    /// Uplink residual precision.
    pub alpha_bar: f64,
    pub gamma: RVector,
    pub tau: RVector,
    pub beta: RVector,
    pub mu: CVector,
    pub sigma: CMatrix,
    pub mu_bar: CVector,
    pub sigma_bar: CMatrix,
    pub iteration: usize,
}

impl JointState {
    /// `α = ᾱ = 1`, `γ = τ = 1`, `β = 0`, prior as posterior.
    pub fn initial(grid_size: usize) -> Self {
        Self {
            alpha: 1.0,
            alpha_bar: 1.0,
            gamma: RVector::from_element(grid_size, 1.0),
            tau: RVector::from_element(grid_size, 1.0),
            beta: RVector::zeros(grid_size),
            mu: CVector::zeros(grid_size),
            sigma: CMatrix::identity(grid_size, grid_size),
            mu_bar: CVector::zeros(grid_size),
            sigma_bar: CMatrix::identity(grid_size, grid_size),
            iteration: 0,
        }
    }

    /// Prior precision of the uplink weights, `γ ⊙ τ`.
    pub fn uplink_precision(&self) -> RVector {
        self.gamma.component_mul(&self.tau)
    }

    /// Recomputes both posteriors at the current hyperparameters and angles.
    pub fn refresh(&mut self, y: &CVector, x: &CMatrix, up: &UplinkView, dict: &OffGridDictionary) -> Result<()> {
        let (mu, sigma, mu_bar, sigma_bar) = compute_joint_posterior(y, x, up, self, dict)?;
        self.mu = mu;
        self.sigma = sigma;
        self.mu_bar = mu_bar;
        self.sigma_bar = sigma_bar;
        Ok(())
    }
}

fn require_linear(dict: &OffGridDictionary) -> Result<()> {
    if dict.is_planar() {
        return Err(Error::InvalidConfig("uplink-aided estimation supports linear arrays only".into()));
    }
    Ok(())
}

/// Uplink steering vectors at the downlink grid angles plus `β`, evaluated
/// at the uplink wavelength.
pub fn assemble_uplink_dictionary(dict: &OffGridDictionary, beta: &RVector, wl_uplink: Wavelength) -> Result<CMatrix> {
    require_linear(dict)?;
    dict.with_wavelength(wl_uplink).steering_matrix(beta, None)
}

fn check_uplink(up: &UplinkView, dict: &OffGridDictionary) -> Result<()> {
    if up.h_bar.len() != dict.num_antennas() {
        return Err(Error::DimensionMismatch {
            context: "uplink channel length",
            expected: dict.num_antennas(),
            actual: up.h_bar.len(),
        });
    }
    Ok(())
}

fn check_joint_state(state: &JointState, dict: &OffGridDictionary) -> Result<()> {
    let l = dict.len();
    for (context, actual) in [
        ("precision vector", state.gamma.len()),
        ("uplink scaling", state.tau.len()),
        ("off-grid offsets", state.beta.len()),
        ("posterior size", state.mu.len()),
        ("uplink posterior size", state.mu_bar.len()),
        ("posterior covariance", state.sigma.nrows()),
        ("uplink posterior covariance", state.sigma_bar.nrows()),
    ] {
        if actual != l {
            return Err(Error::DimensionMismatch {
                context,
                expected: l,
                actual,
            });
        }
    }
    Ok(())
}

/// Downlink `(μ, Σ)` and uplink `(μ̄, Σ̄)`; the two factorize given the
/// hyperparameters.
pub fn compute_joint_posterior(
    y: &CVector,
    x: &CMatrix,
    up: &UplinkView,
    state: &JointState,
    dict: &OffGridDictionary,
) -> Result<(CVector, CMatrix, CVector, CMatrix)> {
    check_joint_state(state, dict)?;
    check_uplink(up, dict)?;
    let phi = dict.measurement_matrix(x, &state.beta, None)?;
    let phi_u = assemble_uplink_dictionary(dict, &state.beta, up.wavelength)?;
    let d = Posterior::compute(y, &phi, state.alpha, &state.gamma, true)?;
    let u = Posterior::compute(&up.h_bar, &phi_u, state.alpha_bar, &state.uplink_precision(), true)?;
    let full = |p: Posterior| p.sigma.ok_or_else(|| Error::numerical("posterior lacks the full covariance"));
    Ok((d.mu.clone(), full(d)?, u.mu.clone(), full(u)?))
}

fn eta(obs: &CVector, phi: &CMatrix, mu: &CVector, sigma: &CMatrix) -> f64 {
    let phi_sigma = linalg::mul(phi, sigma);
    trace_phi_sigma_phi(phi, &phi_sigma) + linalg::norm_sq(&(obs - linalg::mul_vec(phi, mu)))
}

/// `α' = (T + a) / (b + η_d)` from the stored downlink posterior.
pub fn update_alpha_d(
    state: &JointState,
    y: &CVector,
    x: &CMatrix,
    dict: &OffGridDictionary,
    priors: &Hyperpriors,
) -> Result<f64> {
    check_joint_state(state, dict)?;
    let phi = dict.measurement_matrix(x, &state.beta, None)?;
    alpha_from_eta(y.len(), eta(y, &phi, &state.mu, &state.sigma), priors)
}

/// `ᾱ' = (N + a) / (b + η_u)` from the stored uplink posterior.
pub fn update_alpha_u(state: &JointState, up: &UplinkView, dict: &OffGridDictionary, priors: &Hyperpriors) -> Result<f64> {
    check_joint_state(state, dict)?;
    check_uplink(up, dict)?;
    let phi_u = assemble_uplink_dictionary(dict, &state.beta, up.wavelength)?;
    alpha_from_eta(up.h_bar.len(), eta(&up.h_bar, &phi_u, &state.mu_bar, &state.sigma_bar), priors)
}

fn diag(m: &CMatrix) -> RVector {
    RVector::from_iterator(m.nrows(), (0..m.nrows()).map(|j| m[(j, j)].re))
}

fn gamma_joint(xi_d: &RVector, xi_u: &RVector, tau: &RVector, priors: &Hyperpriors) -> Result<RVector> {
    let combined = xi_d + xi_u.component_mul(tau);
    gamma_from_second_moments(&combined, 2.0 + priors.a, priors)
}

fn tau_from(gamma: &RVector, xi_u: &RVector) -> RVector {
    gamma.zip_map(xi_u, |g, x| {
        let p = g * x;
        if p > 0.0 {
            (1.0 / p).clamp(TAU_MIN, TAU_MAX)
        } else {
            TAU_MAX
        }
    })
}

/// `γ'_l = (a + 2) / (b + [Ξ_d]_ll + τ_l [Ξ_u]_ll)`, clamped at the ceiling.
pub fn update_gamma_joint(state: &JointState, priors: &Hyperpriors) -> Result<RVector> {
    let xi_d = second_moments(&state.mu, &diag(&state.sigma))?;
    let xi_u = second_moments(&state.mu_bar, &diag(&state.sigma_bar))?;
    gamma_joint(&xi_d, &xi_u, &state.tau, priors)
}

/// `τ'_l = 1 / (γ_l [Ξ_u]_ll)` with the state's current `γ`, clamped to
/// `[TAU_MIN, TAU_MAX]`.
pub fn update_tau(state: &JointState) -> Result<RVector> {
    let xi_u = second_moments(&state.mu_bar, &diag(&state.sigma_bar))?;
    Ok(tau_from(&state.gamma, &xi_u))
}

/// Sum of both marginal log-likelihoods plus the Gamma log-priors on `α`,
/// `ᾱ` and `γ` (flat prior on `τ`).
pub fn joint_log_evidence(
    y: &CVector,
    x: &CMatrix,
    up: &UplinkView,
    state: &JointState,
    dict: &OffGridDictionary,
    priors: &Hyperpriors,
) -> Result<f64> {
    check_joint_state(state, dict)?;
    check_uplink(up, dict)?;
    let phi = dict.measurement_matrix(x, &state.beta, None)?;
    let phi_u = assemble_uplink_dictionary(dict, &state.beta, up.wavelength)?;
    let d = Posterior::compute(y, &phi, state.alpha, &state.gamma, false)?;
    let u = Posterior::compute(&up.h_bar, &phi_u, state.alpha_bar, &state.uplink_precision(), false)?;
    Ok(d.log_likelihood + u.log_likelihood + joint_log_prior(state.alpha, state.alpha_bar, &state.gamma, priors))
}

fn joint_log_prior(alpha: f64, alpha_bar: f64, gamma: &RVector, priors: &Hyperpriors) -> f64 {
    priors.log_prior(alpha) + priors.log_prior(alpha_bar) + gamma.iter().map(|g| priors.log_prior(*g)).sum::<f64>()
}

/// `−α‖y − Φμ‖² − α tr(ΦΣΦᴴ) − ᾱ‖h̄ − Φ̄μ̄‖² − ᾱ tr(Φ̄Σ̄Φ̄ᴴ)` at offsets `beta`.
pub fn joint_surrogate_objective(
    y: &CVector,
    x: &CMatrix,
    up: &UplinkView,
    state: &JointState,
    dict: &OffGridDictionary,
    beta: &RVector,
) -> Result<f64> {
    let phi = dict.measurement_matrix(x, beta, None)?;
    let phi_u = assemble_uplink_dictionary(dict, beta, up.wavelength)?;
    Ok(surrogate_objective(y, &phi, &state.mu, &state.sigma, state.alpha)
        + surrogate_objective(&up.h_bar, &phi_u, &state.mu_bar, &state.sigma_bar, state.alpha_bar))
}

fn view_gradient(
    obs: &CVector,
    phi: &CMatrix,
    dphi: &CMatrix,
    mu: &CVector,
    sigma: &CMatrix,
    precision: f64,
) -> RVector {
    let phi_sigma = linalg::mul(phi, sigma);
    let resid = obs - linalg::mul_vec(phi, mu);
    surrogate_gradient(phi, dphi, &phi_sigma, &diag(sigma), mu, &resid, precision)
}

/// Derivative of the joint surrogate with respect to every `β_l`: the
/// downlink terms through the pilots plus the uplink terms on the bare
/// steering vectors.
pub fn joint_beta_gradient(
    state: &JointState,
    y: &CVector,
    x: &CMatrix,
    up: &UplinkView,
    dict: &OffGridDictionary,
) -> Result<RVector> {
    check_joint_state(state, dict)?;
    check_uplink(up, dict)?;
    let phi = dict.measurement_matrix(x, &state.beta, None)?;
    let dphi = linalg::mul(x, &dict.derivative_matrix(&state.beta, None)?);
    let dict_u = dict.with_wavelength(up.wavelength);
    let phi_u = dict_u.steering_matrix(&state.beta, None)?;
    let dphi_u = dict_u.derivative_matrix(&state.beta, None)?;
    let down = view_gradient(y, &phi, &dphi, &state.mu, &state.sigma, state.alpha);
    let upl = view_gradient(&up.h_bar, &phi_u, &dphi_u, &state.mu_bar, &state.sigma_bar, state.alpha_bar);
    Ok(down + upl)
}

#[derive(Debug, Clone)]
pub struct JointEstimate {
    /// Downlink channel estimate.
    pub h: CVector,
    pub support: Vec<usize>,
    pub state: JointState,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub stalls: usize,
}

/// Support shared by both views: components whose prior variance `1/γ_l`
/// reaches `threshold` of the largest.
pub fn shared_support(gamma: &RVector, threshold: f64, cap: usize) -> Vec<usize> {
    let power: Vec<f64> = gamma.iter().map(|g| 1.0 / g).collect();
    select_support(&power, threshold, cap)
}

fn power(mu: &CVector) -> Vec<f64> {
    mu.iter().map(|m| m.norm_sqr()).collect()
}

struct JointSolver<'a> {
    y: &'a CVector,
    x: &'a CMatrix,
    up: &'a UplinkView,
    dict: &'a OffGridDictionary,
    dict_u: OffGridDictionary,
    priors: &'a Hyperpriors,
    cfg: &'a RefineConfig,
    state: JointState,
    phi: CMatrix,
    phi_u: CMatrix,
    stalls: usize,
}

impl<'a> JointSolver<'a> {
    fn down(&self, full: bool) -> Result<Posterior> {
        Posterior::compute(self.y, &self.phi, self.state.alpha, &self.state.gamma, full)
    }

    fn upl(&self, full: bool) -> Result<Posterior> {
        Posterior::compute(
            &self.up.h_bar,
            &self.phi_u,
            self.state.alpha_bar,
            &self.state.uplink_precision(),
            full,
        )
    }

    fn rebuild(&mut self) -> Result<()> {
        self.phi = self.dict.measurement_matrix(self.x, &self.state.beta, None)?;
        self.phi_u = self.dict_u.steering_matrix(&self.state.beta, None)?;
        Ok(())
    }

    fn iterate(&mut self) -> Result<(f64, f64)> {
        let t = self.y.len();
        let n = self.up.h_bar.len();
        let d = self.down(false)?;
        self.state.alpha = alpha_from_eta(t, d.eta(self.y, &self.phi), self.priors)?;
        let u = self.upl(false)?;
        self.state.alpha_bar = alpha_from_eta(n, u.eta(&self.up.h_bar, &self.phi_u), self.priors)?;

        let d = self.down(false)?;
        let xi_d = second_moments(&d.mu, &d.sigma_diag)?;
        let xi_u = second_moments(&u.mu, &u.sigma_diag)?;
        self.state.gamma = gamma_joint(&xi_d, &xi_u, &self.state.tau, self.priors)?;
        let u = self.upl(false)?;
        self.state.tau = tau_from(&self.state.gamma, &second_moments(&u.mu, &u.sigma_diag)?);

        let d = self.down(true)?;
        let u = self.upl(true)?;
        let evidence = d.log_likelihood
            + u.log_likelihood
            + joint_log_prior(self.state.alpha, self.state.alpha_bar, &self.state.gamma, self.priors);
        let resid_d = self.y - linalg::mul_vec(&self.phi, &d.mu);
        let resid_u = &self.up.h_bar - linalg::mul_vec(&self.phi_u, &u.mu);
        let dphi = linalg::mul(self.x, &self.dict.derivative_matrix(&self.state.beta, None)?);
        let dphi_u = self.dict_u.derivative_matrix(&self.state.beta, None)?;
        let mut zeta = surrogate_gradient(
            &self.phi,
            &dphi,
            &d.phi_sigma,
            &d.sigma_diag,
            &d.mu,
            &resid_d,
            self.state.alpha,
        ) + surrogate_gradient(
            &self.phi_u,
            &dphi_u,
            &u.phi_sigma,
            &u.sigma_diag,
            &u.mu,
            &resid_u,
            self.state.alpha_bar,
        );
        self.state.mu = d.mu;
        self.state.sigma = d.sigma.ok_or_else(|| Error::numerical("posterior lacks the full covariance"))?;
        self.state.mu_bar = u.mu;
        self.state.sigma_bar = u.sigma.ok_or_else(|| Error::numerical("posterior lacks the full covariance"))?;

        for (z, g) in zeta.iter_mut().zip(self.state.gamma.iter()) {
            if *g >= GAMMA_CEILING {
                *z = 0.0;
            }
        }
        let new_beta = match self.cfg.step_mode {
            StepMode::Fixed => beta_step_fixed(&self.state.beta, &zeta, self.dict.r_theta(), self.cfg.beta_clip),
            StepMode::LineSearch => {
                let ls = beta_step_linesearch(&self.state.beta, &zeta, self.dict.r_theta(), self.cfg, |b| {
                    joint_surrogate_objective(self.y, self.x, self.up, &self.state, self.dict, b)
                })?;
                self.stalls += ls.stalled as usize;
                ls.point
            }
        };
        let max_step = (&new_beta - &self.state.beta).amax();
        self.state.beta = new_beta;
        self.rebuild()?;
        Ok((evidence, max_step))
    }

    fn run(mut self) -> Result<JointEstimate> {
        let mut trace = Vec::new();
        let mut prev: Option<f64> = None;
        let mut converged = false;
        for i in 0..self.cfg.max_iters {
            let (ev, step) = self.iterate().map_err(|e| e.at_iteration(i))?;
            self.state.iteration = i + 1;
            trace.push(TraceRow {
                iteration: i + 1,
                evidence: ev,
                max_beta_step: step,
                active: select_support(&power(&self.state.mu), self.cfg.support_threshold, usize::MAX).len(),
            });
            if let Some(p) = prev {
                if (ev - p).abs() <= self.cfg.evidence_tol * p.abs() {
                    converged = true;
                    break;
                }
            }
            prev = Some(ev);
        }
        let iters = self.state.iteration;
        let d = self.down(true).map_err(|e| e.at_iteration(iters))?;
        let u = self.upl(true).map_err(|e| e.at_iteration(iters))?;
        self.state.mu = d.mu;
        self.state.sigma = d.sigma.ok_or_else(|| Error::numerical("posterior lacks the full covariance"))?;
        self.state.mu_bar = u.mu;
        self.state.sigma_bar = u.sigma.ok_or_else(|| Error::numerical("posterior lacks the full covariance"))?;
        let support = select_support(&power(&self.state.mu), self.cfg.support_threshold, self.y.len());
        let h = refit_channel(self.dict, self.x, self.y, &self.state.beta, None, &support)?;
        Ok(JointEstimate {
            h,
            support,
            state: self.state,
            trace,
            converged,
            stalls: self.stalls,
        })
    }
}

/// Joint downlink/uplink off-grid SBL (`α → ᾱ → γ → τ → β` blocks). The
/// returned channel is the downlink estimate refitted on the support of the
/// downlink posterior mean.
pub fn estimate_uplink_aided(
    y: &CVector,
    x: &CMatrix,
    up: &UplinkView,
    dict: &OffGridDictionary,
    priors: &Hyperpriors,
    cfg: &RefineConfig,
) -> Result<JointEstimate> {
    cfg.validate()?;
    priors.validate()?;
    require_linear(dict)?;
    check_uplink(up, dict)?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "pilot rows",
            expected: y.len(),
            actual: x.nrows(),
        });
    }
    let state = JointState::initial(dict.len());
    let dict_u = dict.with_wavelength(up.wavelength);
    let phi = dict.measurement_matrix(x, &state.beta, None)?;
    let phi_u = dict_u.steering_matrix(&state.beta, None)?;
    JointSolver {
        y,
        x,
        up,
        dict,
        dict_u,
        priors,
        cfg,
        state,
        phi,
        phi_u,
        stalls: 0,
    }
    .run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_model::{steering_linear, ArrayGeometry};
    use crate::channel_sim::{complex_gaussian, generate_pilots, nmse, observe_downlink};
    use crate::offgrid_refine::{beta_gradient, estimate_offgrid_linear};
    use crate::sbl_core::SblState;
    use crate::testutil::{c, cmat, cvec, rel_err, rng};
    use rand::Rng;

    const D_OVER_LAMBDA: f64 = 0.5;

    fn dict(n: usize, l: usize) -> OffGridDictionary {
        OffGridDictionary::linear(ArrayGeometry::ula(n, D_OVER_LAMBDA).unwrap(), Wavelength::new(1.0).unwrap(), l).unwrap()
    }

    fn uplink_wl() -> Wavelength {
        Wavelength::new(1.1).unwrap()
    }

    /// A random state with hyperparameters away from their optima and a
    /// consistent posterior.
    fn random_setup(seed: u64, n: usize, t: usize, l: usize) -> (OffGridDictionary, CMatrix, CVector, UplinkView, JointState) {
        let d = dict(n, l);
        let mut r = rng(seed);
        let x = cmat(&mut r, t, n);
        let y = cvec(&mut r, t);
        let up = UplinkView {
            h_bar: cvec(&mut r, n),
            wavelength: uplink_wl(),
        };
        let mut s = JointState::initial(l);
        s.alpha = r.random_range(0.2..5.0);
        s.alpha_bar = r.random_range(0.2..5.0);
        s.gamma = RVector::from_fn(l, |_, _| r.random_range(0.1..10.0));
        s.tau = RVector::from_fn(l, |_, _| r.random_range(0.2..5.0));
        s.beta = RVector::from_fn(l, |_, _| r.random_range(-0.4..0.4) * d.r_theta());
        s.refresh(&y, &x, &up, &d).unwrap();
        (d, x, y, up, s)
    }

    fn dense_posterior(obs: &CVector, phi: &CMatrix, prec: f64, gamma: &RVector) -> (CVector, CMatrix) {
        let mut p = phi.adjoint() * phi * c(prec);
        for j in 0..gamma.len() {
            p[(j, j)] += gamma[j];
        }
        let sigma = p.try_inverse().unwrap();
        let mu = &sigma * phi.adjoint() * obs * c(prec);
        (mu, sigma)
    }

    #[test]
    fn uplink_dictionary_columns() {
        let d = dict(12, 16);
        let beta = RVector::from_fn(16, |i, _| 0.01 * i as f64);
        let same = assemble_uplink_dictionary(&d, &beta, d.wavelength()).unwrap();
        assert_eq!(same, d.steering_matrix(&beta, None).unwrap());
        let wl = uplink_wl();
        let m = assemble_uplink_dictionary(&d, &beta, wl).unwrap();
        for l in 0..16 {
            let a = steering_linear(d.geometry(), d.grid()[l] + beta[l], wl).into_inner();
            assert!((m.column(l) - a).camax() < 1e-14);
        }
        let on = assemble_uplink_dictionary(&d, &RVector::zeros(16), wl).unwrap();
        assert_eq!(on, d.with_wavelength(wl).steering_matrix(&RVector::zeros(16), None).unwrap());
    }

    #[test]
    fn planar_dictionary_rejected() {
        let p = OffGridDictionary::planar(
            ArrayGeometry::uniform_rectangular(3, 3, 0.5).unwrap(),
            Wavelength::new(1.0).unwrap(),
            8,
        )
        .unwrap();
        assert!(assemble_uplink_dictionary(&p, &RVector::zeros(8), uplink_wl()).is_err());
    }

    #[test]
    fn joint_posterior_matches_dense_oracle() {
        for seed in 0..50 {
            let l = 8 + (seed as usize % 9);
            let t = if seed % 2 == 0 { 6 } else { 20 };
            let (d, x, y, up, s) = random_setup(seed, 10, t, l);
            let (mu, sigma, mu_bar, sigma_bar) = compute_joint_posterior(&y, &x, &up, &s, &d).unwrap();
            let phi = &x * d.steering_matrix(&s.beta, None).unwrap();
            let phi_u = d.with_wavelength(up.wavelength).steering_matrix(&s.beta, None).unwrap();
            let (m0, s0) = dense_posterior(&y, &phi, s.alpha, &s.gamma);
            let (m1, s1) = dense_posterior(&up.h_bar, &phi_u, s.alpha_bar, &s.uplink_precision());
            let close = |a: f64, b: f64| a <= 1e-9 * b.max(1.0);
            assert!(close((&mu - &m0).camax(), m0.camax()), "downlink mean, seed {seed}");
            assert!(close((&sigma - &s0).camax(), s0.camax()), "downlink covariance, seed {seed}");
            assert!(close((&mu_bar - &m1).camax(), m1.camax()), "uplink mean, seed {seed}");
            assert!(close((&sigma_bar - &s1).camax(), s1.camax()), "uplink covariance, seed {seed}");
        }
    }

    #[test]
    fn uplink_posterior_reduces_to_downlink_formula() {
        let (d, _, y, _, mut s) = random_setup(3, 10, 10, 12);
        // identity pilots with T = N make both views use the same Φ
        let x = CMatrix::identity(10, 10);
        let up = UplinkView {
            h_bar: y.clone(),
            wavelength: d.wavelength(),
        };
        s.tau.fill(1.0);
        s.alpha_bar = s.alpha;
        let (mu, sigma, mu_bar, sigma_bar) = compute_joint_posterior(&y, &x, &up, &s, &d).unwrap();
        assert!((mu - mu_bar).camax() < 1e-12);
        assert!((sigma - sigma_bar).camax() < 1e-12);
    }

    #[test]
    fn ceiling_precision_silences_both_views() {
        let (d, x, y, up, mut s) = random_setup(4, 10, 8, 12);
        s.gamma[5] = GAMMA_CEILING;
        let (mu, _, mu_bar, _) = compute_joint_posterior(&y, &x, &up, &s, &d).unwrap();
        assert!(mu[5].norm() < 1e-9 && mu_bar[5].norm() < 1e-9);
    }

    #[test]
    fn alpha_updates_examples() {
        let pr = Hyperpriors::default();
        let (d, x, y, up, mut s) = random_setup(5, 10, 8, 12);
        // zero-variance posterior at an exact fit
        let n = up.h_bar.len();
        let phi_u = assemble_uplink_dictionary(&d, &s.beta, up.wavelength).unwrap();
        s.mu_bar = CVector::zeros(12);
        s.sigma_bar = CMatrix::zeros(12, 12);
        s.mu_bar[2] = c(1.5);
        let exact = UplinkView {
            h_bar: phi_u.column(2) * c(1.5),
            ..up.clone()
        };
        let a = update_alpha_u(&s, &exact, &d, &pr).unwrap();
        assert!(rel_err(a, (n as f64 + pr.a) / pr.b) < 1e-6);
        // η_u = ‖h̄‖² when the posterior is empty
        s.mu_bar.fill(c(0.0));
        let a = update_alpha_u(&s, &up, &d, &pr).unwrap();
        assert!(rel_err(a, (n as f64 + pr.a) / (pr.b + linalg::norm_sq(&up.h_bar))) < 1e-12);
        s.mu.fill(c(0.0));
        s.sigma.fill(c(0.0));
        let a = update_alpha_d(&s, &y, &x, &d, &pr).unwrap();
        assert!(rel_err(a, (y.len() as f64 + pr.a) / (pr.b + linalg::norm_sq(&y))) < 1e-12);
    }

    #[test]
    fn gamma_joint_examples() {
        let pr = Hyperpriors::default();
        let (_, _, _, _, mut s) = random_setup(6, 10, 8, 12);
        s.mu_bar.fill(c(0.0));
        s.sigma_bar.fill(c(0.0));
        let g = update_gamma_joint(&s, &pr).unwrap();
        for l in 0..12 {
            let xi = s.sigma[(l, l)].re + s.mu[l].norm_sqr();
            assert!(rel_err(g[l], (pr.a + 2.0) / (pr.b + xi)) < 1e-12);
        }
        s.mu.fill(c(0.7));
        s.sigma = CMatrix::identity(12, 12) * c(0.3);
        s.mu_bar.fill(c(0.2));
        s.sigma_bar = CMatrix::identity(12, 12) * c(0.1);
        s.tau.fill(2.0);
        let g = update_gamma_joint(&s, &pr).unwrap();
        assert!(g.iter().all(|v| *v == g[0]));
    }

    #[test]
    fn tau_examples() {
        let (_, _, _, _, mut s) = random_setup(7, 10, 8, 12);
        s.mu_bar.fill(c(0.0));
        s.sigma_bar = CMatrix::identity(12, 12) * c(0.25);
        s.gamma.fill(4.0);
        let tau = update_tau(&s).unwrap();
        assert!(tau.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let base = update_tau(&random_setup(8, 10, 8, 12).4).unwrap();
        let mut scaled = random_setup(8, 10, 8, 12).4;
        scaled.sigma_bar *= c(3.0);
        scaled.mu_bar *= c(3.0f64.sqrt());
        let t2 = update_tau(&scaled).unwrap();
        for l in 0..12 {
            assert!(rel_err(t2[l], base[l] / 3.0) < 1e-12);
        }
    }

    #[derive(Clone, Copy, Debug)]
    enum Block {
        AlphaD,
        AlphaU,
        Gamma,
        Tau,
    }

    #[test]
    fn each_hyperparameter_update_is_monotone() {
        let pr = Hyperpriors::default();
        for block in [Block::AlphaD, Block::AlphaU, Block::Gamma, Block::Tau] {
            for seed in 0..50 {
                let (d, x, y, up, mut s) = random_setup(1000 + seed, 10, 8 + (seed as usize % 6), 14);
                let before = joint_log_evidence(&y, &x, &up, &s, &d, &pr).unwrap();
                match block {
                    Block::AlphaD => s.alpha = update_alpha_d(&s, &y, &x, &d, &pr).unwrap(),
                    Block::AlphaU => s.alpha_bar = update_alpha_u(&s, &up, &d, &pr).unwrap(),
                    Block::Gamma => s.gamma = update_gamma_joint(&s, &pr).unwrap(),
                    Block::Tau => s.tau = update_tau(&s).unwrap(),
                }
                let after = joint_log_evidence(&y, &x, &up, &s, &d, &pr).unwrap();
                assert!(after - before >= -1e-9, "{block:?} seed {seed}: {before} -> {after}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let (d, x, y, up, s) = random_setup(2000 + seed, 16, 10, 24);
            let g = joint_beta_gradient(&s, &y, &x, &up, &d).unwrap();
            let h = 1e-6 * d.r_theta();
            for l in [0, 7, 13, 23] {
                let mut bp = s.beta.clone();
                bp[l] += h;
                let mut bm = s.beta.clone();
                bm[l] -= h;
                let fd = (joint_surrogate_objective(&y, &x, &up, &s, &d, &bp).unwrap()
                    - joint_surrogate_objective(&y, &x, &up, &s, &d, &bm).unwrap())
                    / (2.0 * h);
                let scale = g.amax().max(1e-12);
                assert!((g[l] - fd).abs() / scale < 1e-5, "seed {seed} l {l}: {} vs {fd}", g[l]);
            }
        }
    }

    #[test]
    fn gradient_reductions() {
        let (d, x, y, up, mut s) = random_setup(9, 16, 10, 24);
        s.alpha_bar = 0.0;
        let joint = joint_beta_gradient(&s, &y, &x, &up, &d).unwrap();
        let single = SblState {
            alpha: s.alpha,
            gamma: s.gamma.clone(),
            beta: s.beta.clone(),
            phi_hat: None,
            mu: s.mu.clone(),
            sigma: s.sigma.clone(),
            iteration: 0,
        };
        let reference = beta_gradient(&single, &y, &x, &d).unwrap();
        assert!((joint - reference).amax() < 1e-12);

        s.alpha_bar = 1.0;
        s.mu.fill(c(0.0));
        s.sigma.fill(c(0.0));
        s.mu_bar.fill(c(0.0));
        s.sigma_bar.fill(c(0.0));
        assert!(joint_beta_gradient(&s, &y, &x, &up, &d).unwrap().amax() == 0.0);
    }

    struct Scenario {
        dict: OffGridDictionary,
        x: CMatrix,
        y: CVector,
        h: CVector,
        up_clean: CVector,
    }

    /// Three off-grid paths; the uplink shares angles but not gains.
    fn scenario(seed: u64, n: usize, t: usize, snr_db: f64) -> Scenario {
        let d = dict(n, 48);
        let mut r = rng(seed);
        let geom = d.geometry().clone();
        let mut h = CVector::zeros(n);
        let mut hu = CVector::zeros(n);
        for _ in 0..3 {
            let theta = r.random_range(-0.9..0.9);
            h += steering_linear(&geom, theta, d.wavelength()).into_inner() * complex_gaussian(&mut r, 1.0 / 3.0);
            hu += steering_linear(&geom, theta, uplink_wl()).into_inner() * complex_gaussian(&mut r, 1.0 / 3.0);
        }
        let pilots = generate_pilots(t, n, 1.0, seed + 1).unwrap();
        let y = observe_downlink(&pilots, &h, 10f64.powf(-snr_db / 10.0), seed + 2).unwrap();
        Scenario {
            dict: d,
            x: pilots.x,
            y,
            h,
            up_clean: hu,
        }
    }

    fn cfg() -> RefineConfig {
        RefineConfig {
            max_iters: 80,
            ..RefineConfig::default()
        }
    }

    #[test]
    fn noiseless_uplink_helps_with_few_pilots() {
        let mut wins = 0;
        let (mut joint, mut single) = (0.0, 0.0);
        for seed in 0..8 {
            let s = scenario(300 + seed, 32, 10, 10.0);
            let up = UplinkView {
                h_bar: s.up_clean.clone(),
                wavelength: uplink_wl(),
            };
            let pr = Hyperpriors::default();
            let a = estimate_uplink_aided(&s.y, &s.x, &up, &s.dict, &pr, &cfg()).unwrap();
            let b = estimate_offgrid_linear(&s.y, &s.x, &s.dict, &pr, &cfg()).unwrap();
            let (ea, eb) = (nmse(&a.h, &s.h).unwrap(), nmse(&b.h, &s.h).unwrap());
            wins += (ea < eb) as usize;
            joint += ea;
            single += eb;
        }
        assert!(joint < single, "joint {joint} vs downlink-only {single}");
        assert!(wins >= 5, "wins {wins}");
    }

    #[test]
    fn pure_noise_uplink_degrades_gracefully() {
        let (mut joint, mut single) = (0.0, 0.0);
        for seed in 0..6 {
            let s = scenario(400 + seed, 32, 20, 15.0);
            let mut r = rng(500 + seed);
            let up = UplinkView {
                h_bar: CVector::from_fn(32, |_, _| complex_gaussian(&mut r, 1.0)),
                wavelength: uplink_wl(),
            };
            let pr = Hyperpriors::default();
            let a = estimate_uplink_aided(&s.y, &s.x, &up, &s.dict, &pr, &cfg()).unwrap();
            let b = estimate_offgrid_linear(&s.y, &s.x, &s.dict, &pr, &cfg()).unwrap();
            joint += nmse(&a.h, &s.h).unwrap();
            single += nmse(&b.h, &s.h).unwrap();
        }
        assert!(joint < 2.0 * single, "joint {joint} vs downlink-only {single}");
    }

    #[test]
    fn both_views_stay_inside_the_shared_support() {
        let mut ok = 0;
        let trials = 10;
        for seed in 0..trials {
            let s = scenario(600 + seed, 32, 16, 15.0);
            let up = UplinkView {
                h_bar: s.up_clean.clone(),
                wavelength: uplink_wl(),
            };
            let est = estimate_uplink_aided(&s.y, &s.x, &up, &s.dict, &Hyperpriors::default(), &cfg()).unwrap();
            let st = &est.state;
            let wide = shared_support(&st.gamma, 1e-4, usize::MAX);
            let pow = |m: &CVector| m.iter().map(|z| z.norm_sqr()).collect::<Vec<_>>();
            let sd = select_support(&pow(&st.mu), 1e-2, usize::MAX);
            let su = select_support(&pow(&st.mu_bar), 1e-2, usize::MAX);
            ok += (sd.iter().chain(&su).all(|l| wide.contains(l))) as usize;
        }
        assert!(ok * 10 >= trials as usize * 9, "{ok}/{trials}");
    }

    #[test]
    fn linesearch_iterations_are_monotone() {
        let cfg = RefineConfig {
            step_mode: StepMode::LineSearch,
            max_iters: 25,
            evidence_tol: 0.0,
            ..RefineConfig::default()
        };
        for seed in 0..6 {
            let s = scenario(700 + seed, 16, 10, 15.0);
            let up = UplinkView {
                h_bar: s.up_clean.clone(),
                wavelength: uplink_wl(),
            };
            let est = estimate_uplink_aided(&s.y, &s.x, &up, &s.dict, &Hyperpriors::default(), &cfg).unwrap();
            for w in est.trace.windows(2) {
                assert!(w[1].evidence - w[0].evidence >= -1e-8 * w[0].evidence.abs().max(1.0), "seed {seed}");
            }
        }
    }

    #[test]
    fn trace_and_support_shape() {
        let s = scenario(800, 16, 10, 15.0);
        let up = UplinkView {
            h_bar: s.up_clean.clone(),
            wavelength: uplink_wl(),
        };
        let est = estimate_uplink_aided(&s.y, &s.x, &up, &s.dict, &Hyperpriors::default(), &cfg()).unwrap();
        assert!(!est.trace.is_empty() && est.trace.len() <= 80);
        assert!(!est.support.is_empty() && est.support.len() <= 10);
        assert!(est.state.tau.iter().all(|t| (TAU_MIN..=TAU_MAX).contains(t)));
        assert!(est.state.beta.iter().all(|b| b.abs() <= 0.5 * s.dict.r_theta() + 1e-15));
        let bad = UplinkView {
            h_bar: CVector::zeros(5),
            wavelength: uplink_wl(),
        };
        assert!(matches!(
            estimate_uplink_aided(&s.y, &s.x, &bad, &s.dict, &Hyperpriors::default(), &cfg()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
