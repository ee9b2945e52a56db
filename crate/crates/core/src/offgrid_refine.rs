//! Grid refinement and the in-exact block MM estimation loops.
//!
//! Each iteration refreshes the posterior after every block:
//! `α → γ → β` for linear arrays and `α → γ → β → φ̂` for planar arrays.
//! The `α` and `γ` blocks are exact coordinate maximizers of the evidence
//! surrogate. The angle blocks take a single ascent step on
//!
//! ```text
//! U = −α ‖y − Φ μ‖² − α tr(Φ Σ Φᴴ)
//! ```
//!
//! at fixed `(μ, Σ)`, either a sign step of fixed length or a backtracking
//! line search along the gradient.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{self, CMatrix, CVector, RVector};
use crate::sbl_core::{
    alpha_from_eta, gamma_from_moments, log_prior, select_support, refit_channel, Hyperpriors, OffGridDictionary,
    Posterior, SblState, GAMMA_CEILING,
};
use crate::{Error, Result};

/// How the angle blocks move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// `β += (r_θ/100) sign(ζ)`; no monotonicity guarantee.
    Fixed,
    /// Armijo backtracking on the surrogate; evidence is non-decreasing.
    LineSearch,
}

/// Starting elevations for planar dictionaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElevationInit {
    Random,
    Equispaced,
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub step_mode: StepMode,
    /// Decay of the elevation step, in `(0, 1)`.
    pub rho: f64,
    pub max_iters: usize,
    /// Stop once the relative evidence change falls below this.
    pub evidence_tol: f64,
    /// Bound on `|β_l|` in units of `r_θ`.
    pub beta_clip: f64,
    pub ls_shrink: f64,
    pub ls_c: f64,
    /// Relative `|μ_l|²` threshold for the final support.
    pub support_threshold: f64,
    pub refine_beta: bool,
    pub refine_elevation: bool,
    pub elevation_init: ElevationInit,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            step_mode: StepMode::Fixed,
            rho: 0.95,
            max_iters: 200,
            evidence_tol: 1e-6,
            beta_clip: 0.5,
            ls_shrink: 0.5,
            ls_c: 1e-4,
            support_threshold: crate::sbl_core::DEFAULT_SUPPORT_THRESHOLD,
            refine_beta: true,
            refine_elevation: true,
            elevation_init: ElevationInit::Random,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.evidence_tol >= 0.0) {
            return bad(format!("evidence_tol must be >= 0, got {}", self.evidence_tol));
        }
        if !(self.beta_clip >= 0.0) {
            return bad(format!("beta_clip must be >= 0, got {}", self.beta_clip));
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) {
            return bad(format!("ls_shrink must lie in (0, 1), got {}", self.ls_shrink));
        }
        if !(self.ls_c > 0.0 && self.ls_c < 1.0) {
            return bad(format!("ls_c must lie in (0, 1), got {}", self.ls_c));
        }
        if !(self.support_threshold >= 0.0) {
            return bad(format!("support_threshold must be >= 0, got {}", self.support_threshold));
        }
        Ok(())
    }
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub evidence: f64,
    pub max_beta_step: f64,
    pub active: usize,
}

/// Renders trace rows as CSV with a header.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("iteration,evidence,max_beta_step,active\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.iteration, r.evidence, r.max_beta_step, r.active);
    }
    s
}

/// Result of an estimation run.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub h: CVector,
    pub support: Vec<usize>,
    pub state: SblState,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    /// Line searches that ended without an acceptable step.
    pub stalls: usize,
}

/// Gradient of `U` with respect to a per-column parameter whose column
/// derivatives are `dphi`, in the split form
/// `2 Re(φ'ᴴφ) c₁ + 2 Re(φ'ᴴ c₂)`.
pub(crate) fn surrogate_gradient(
    phi: &CMatrix,
    dphi: &CMatrix,
    phi_sigma: &CMatrix,
    sigma_diag: &RVector,
    mu: &CVector,
    resid: &CVector,
    alpha: f64,
) -> RVector {
    let l = phi.ncols();
    linalg::record_ops(3 * phi.len());
    RVector::from_iterator(
        l,
        (0..l).map(|j| {
            let dp = dphi.column(j);
            let d1 = dp.dotc(&phi.column(j));
            let chi = sigma_diag[j];
            let m = mu[j];
            let c1 = -alpha * (chi + m.norm_sqr());
            // φ'ᴴ y₋l = φ'ᴴ r + φ'ᴴφ μ_l
            let dy = dp.dotc(resid) + d1 * m;
            // φ'ᴴ Σ_{j≠l} χ_jl φ_j = φ'ᴴ(ΦΣ)_l − χ_ll φ'ᴴφ
            let ds = dp.dotc(&phi_sigma.column(j)) - d1 * chi;
            let c2 = (m.conj() * dy - ds) * alpha;
            2.0 * d1.re * c1 + 2.0 * c2.re
        }),
    )
}

/// `U = −α‖y − Φμ‖² − α tr(ΦΣΦᴴ)`.
pub fn surrogate_objective(y: &CVector, phi: &CMatrix, mu: &CVector, sigma: &CMatrix, alpha: f64) -> f64 {
    let phi_sigma = linalg::mul(phi, sigma);
    let tr = crate::sbl_core::trace_phi_sigma_phi(phi, &phi_sigma);
    -alpha * linalg::norm_sq(&(y - linalg::mul_vec(phi, mu))) - alpha * tr
}

fn check_state(state: &SblState, y: &CVector, x: &CMatrix, dict: &OffGridDictionary) -> Result<()> {
    let l = dict.len();
    if state.mu.len() != l || state.sigma.nrows() != l || state.sigma.ncols() != l {
        return Err(Error::DimensionMismatch {
            context: "posterior size",
            expected: l,
            actual: state.mu.len(),
        });
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "pilot rows",
            expected: y.len(),
            actual: x.nrows(),
        });
    }
    Ok(())
}

fn gradient_for(
    state: &SblState,
    y: &CVector,
    x: &CMatrix,
    dict: &OffGridDictionary,
    deriv: impl Fn(&OffGridDictionary, &RVector, Option<&RVector>) -> Result<CMatrix>,
) -> Result<RVector> {
    check_state(state, y, x, dict)?;
    let phi = dict.measurement_matrix(x, &state.beta, state.phi_hat.as_ref())?;
    let dphi = linalg::mul(x, &deriv(dict, &state.beta, state.phi_hat.as_ref())?);
    let phi_sigma = linalg::mul(&phi, &state.sigma);
    let diag = RVector::from_iterator(dict.len(), (0..dict.len()).map(|j| state.sigma[(j, j)].re));
    let resid = y - linalg::mul_vec(&phi, &state.mu);
    Ok(surrogate_gradient(&phi, &dphi, &phi_sigma, &diag, &state.mu, &resid, state.alpha))
}

/// `ζ_β`, the derivative of `U` with respect to every `β_l`.
pub fn beta_gradient(state: &SblState, y: &CVector, x: &CMatrix, dict: &OffGridDictionary) -> Result<RVector> {
    gradient_for(state, y, x, dict, OffGridDictionary::derivative_matrix)
}

/// `ζ_φ`, the derivative of `U` with respect to every `φ̂_l`.
pub fn phi_gradient(state: &SblState, y: &CVector, x: &CMatrix, dict: &OffGridDictionary) -> Result<RVector> {
    gradient_for(state, y, x, dict, OffGridDictionary::elevation_derivative_matrix)
}

fn clip_beta(beta: &mut RVector, bound: f64) {
    beta.apply(|b| *b = b.clamp(-bound, bound));
}

/// `β + (r_θ/100) sign(ζ)`, clipped to `±beta_clip · r_θ`.
pub fn beta_step_fixed(beta: &RVector, zeta: &RVector, r_theta: f64, beta_clip: f64) -> RVector {
    let mut out = beta.zip_map(zeta, |b, z| b + r_theta / 100.0 * linalg::signum0(z));
    clip_beta(&mut out, beta_clip * r_theta);
    out
}

/// Outcome of a backtracking search.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearch {
    pub point: RVector,
    /// Accepted multiplier `Δ` (0 when nothing moved).
    pub step: f64,
    pub stalled: bool,
}

/// Armijo backtracking: starting from `delta0`, accept the first
/// `x' = project(x + Δζ)` with `f(x') ≥ f(x) + c ζᵀ(x' − x)`.
pub fn armijo_ascent(
    x: &RVector,
    zeta: &RVector,
    delta0: f64,
    shrink: f64,
    c: f64,
    project: impl Fn(&mut RVector),
    mut objective: impl FnMut(&RVector) -> Result<f64>,
) -> Result<LineSearch> {
    let zmax = zeta.amax();
    if zmax == 0.0 {
        return Ok(LineSearch {
            point: x.clone(),
            step: 0.0,
            stalled: false,
        });
    }
    let f0 = objective(x)?;
    let mut delta = delta0;
    while delta * zmax >= 1e-12 {
        let mut cand = x + zeta * delta;
        project(&mut cand);
        let moved = &cand - x;
        let gain = zeta.dot(&moved);
        if gain <= 0.0 {
            // projection removed the whole ascent direction
            break;
        }
        if objective(&cand)? >= f0 + c * gain {
            return Ok(LineSearch {
                point: cand,
                step: delta,
                stalled: false,
            });
        }
        delta *= shrink;
    }
    Ok(LineSearch {
        point: x.clone(),
        step: 0.0,
        stalled: true,
    })
}

/// Backtracking step on `β` with initial `Δ = r_θ / ‖ζ‖∞`.
pub fn beta_step_linesearch(
    beta: &RVector,
    zeta: &RVector,
    r_theta: f64,
    cfg: &RefineConfig,
    objective: impl FnMut(&RVector) -> Result<f64>,
) -> Result<LineSearch> {
    let bound = cfg.beta_clip * r_theta;
    let delta0 = r_theta / zeta.amax().max(f64::MIN_POSITIVE);
    armijo_ascent(beta, zeta, delta0, cfg.ls_shrink, cfg.ls_c, |b| clip_beta(b, bound), objective)
}

/// Elevation step length at iteration `iter`.
pub fn phi_step_length(iter: usize, rho: f64) -> f64 {
    PI / 36.0 * rho.powi(iter.min(i32::MAX as usize) as i32).max(0.001)
}

fn clamp_elevation(phi: &mut RVector) {
    phi.apply(|p| *p = p.clamp(0.0, PI / 2.0));
}

/// `φ̂ + (π/36) max(ρ^i, 0.001) sign(ζ_φ)`, clamped to `[0, π/2]`.
pub fn phi_step(phi_hat: &RVector, zeta_phi: &RVector, iter: usize, cfg: &RefineConfig) -> RVector {
    let s = phi_step_length(iter, cfg.rho);
    let mut out = phi_hat.zip_map(zeta_phi, |p, z| p + s * linalg::signum0(z));
    clamp_elevation(&mut out);
    out
}

/// Initial elevations in `[0, π/2]`.
pub fn initial_elevations(l: usize, init: ElevationInit, seed: u64) -> RVector {
    match init {
        ElevationInit::Zero => RVector::zeros(l),
        ElevationInit::Equispaced => RVector::from_fn(l, |i, _| (i as f64 + 0.5) / l as f64 * PI / 2.0),
        ElevationInit::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            RVector::from_fn(l, |_, _| rng.random_range(0.0..=PI / 2.0))
        }
    }
}

struct Solver<'a> {
    y: &'a CVector,
    x: &'a CMatrix,
    dict: &'a OffGridDictionary,
    priors: &'a Hyperpriors,
    cfg: &'a RefineConfig,
    state: SblState,
    phi: CMatrix,
    stalls: usize,
}

impl<'a> Solver<'a> {
    fn new(
        y: &'a CVector,
        x: &'a CMatrix,
        dict: &'a OffGridDictionary,
        priors: &'a Hyperpriors,
        cfg: &'a RefineConfig,
        phi_hat: Option<RVector>,
    ) -> Result<Self> {
        cfg.validate()?;
        priors.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "pilot rows",
                expected: y.len(),
                actual: x.nrows(),
            });
        }
        let state = SblState::initial(dict.len(), phi_hat);
        let phi = dict.measurement_matrix(x, &state.beta, state.phi_hat.as_ref())?;
        Ok(Self {
            y,
            x,
            dict,
            priors,
            cfg,
            state,
            phi,
            stalls: 0,
        })
    }

    fn posterior(&self, full: bool) -> Result<Posterior> {
        Posterior::compute(self.y, &self.phi, self.state.alpha, &self.state.gamma, full)
    }

    fn frozen(&self, zeta: &mut RVector) {
        for (z, g) in zeta.iter_mut().zip(self.state.gamma.iter()) {
            if *g >= GAMMA_CEILING {
                *z = 0.0;
            }
        }
    }

    /// One full iteration. Returns the evidence at the refreshed `(α, γ)`
    /// and the largest `|Δβ|`.
    fn iterate(&mut self, iter: usize) -> Result<(f64, f64)> {
        let t = self.y.len();
        let post = self.posterior(false)?;
        self.state.alpha = alpha_from_eta(t, post.eta(self.y, &self.phi), self.priors)?;
        let post = self.posterior(false)?;
        self.state.gamma = gamma_from_moments(&post.mu, &post.sigma_diag, self.priors)?;
        let post = self.posterior(true)?;
        let evidence = post.log_likelihood + log_prior(self.state.alpha, &self.state.gamma, self.priors);
        let resid = self.y - linalg::mul_vec(&self.phi, &post.mu);
        let phi_sigma = post.phi_sigma.clone();
        let diag = post.sigma_diag.clone();
        self.state.set_posterior(post)?;

        let mut max_step = 0.0;
        if self.cfg.refine_beta {
            let dphi = linalg::mul(
                self.x,
                &self.dict.derivative_matrix(&self.state.beta, self.state.phi_hat.as_ref())?,
            );
            let mut zeta =
                surrogate_gradient(&self.phi, &dphi, &phi_sigma, &diag, &self.state.mu, &resid, self.state.alpha);
            self.frozen(&mut zeta);
            let new_beta = match self.cfg.step_mode {
                StepMode::Fixed => beta_step_fixed(&self.state.beta, &zeta, self.dict.r_theta(), self.cfg.beta_clip),
                StepMode::LineSearch => {
                    let ls = beta_step_linesearch(&self.state.beta, &zeta, self.dict.r_theta(), self.cfg, |b| {
                        let phi = self.dict.measurement_matrix(self.x, b, self.state.phi_hat.as_ref())?;
                        Ok(surrogate_objective(self.y, &phi, &self.state.mu, &self.state.sigma, self.state.alpha))
                    })?;
                    self.stalls += ls.stalled as usize;
                    ls.point
                }
            };
            max_step = (&new_beta - &self.state.beta).amax();
            self.state.beta = new_beta;
            self.phi = self.dict.measurement_matrix(self.x, &self.state.beta, self.state.phi_hat.as_ref())?;
        }

        if self.dict.is_planar() && self.cfg.refine_elevation && self.state.phi_hat.is_some() {
            self.elevation_block(iter)?;
        }
        Ok((evidence, max_step))
    }

    fn elevation_block(&mut self, iter: usize) -> Result<()> {
        let post = self.posterior(true)?;
        let resid = self.y - linalg::mul_vec(&self.phi, &post.mu);
        let phi_hat = self.state.phi_hat.clone().expect("planar state has elevations");
        let dphi = linalg::mul(
            self.x,
            &self.dict.elevation_derivative_matrix(&self.state.beta, Some(&phi_hat))?,
        );
        let mut zeta = surrogate_gradient(
            &self.phi,
            &dphi,
            &post.phi_sigma,
            &post.sigma_diag,
            &post.mu,
            &resid,
            self.state.alpha,
        );
        self.frozen(&mut zeta);
        let new_phi = match self.cfg.step_mode {
            StepMode::Fixed => phi_step(&phi_hat, &zeta, iter, self.cfg),
            StepMode::LineSearch => {
                let sigma = post.sigma.as_ref().expect("full covariance requested");
                let delta0 = phi_step_length(iter, self.cfg.rho) / zeta.amax().max(f64::MIN_POSITIVE);
                let ls = armijo_ascent(&phi_hat, &zeta, delta0, self.cfg.ls_shrink, self.cfg.ls_c, clamp_elevation, |p| {
                    let phi = self.dict.measurement_matrix(self.x, &self.state.beta, Some(p))?;
                    Ok(surrogate_objective(self.y, &phi, &post.mu, sigma, self.state.alpha))
                })?;
                self.stalls += ls.stalled as usize;
                ls.point
            }
        };
        self.state.phi_hat = Some(new_phi);
        self.phi = self.dict.measurement_matrix(self.x, &self.state.beta, self.state.phi_hat.as_ref())?;
        Ok(())
    }

    fn active_count(&self) -> usize {
        let power: Vec<f64> = self.state.mu.iter().map(|m| m.norm_sqr()).collect();
        select_support(&power, self.cfg.support_threshold, usize::MAX).len()
    }

    fn run(mut self) -> Result<Estimate> {
        let mut trace = Vec::new();
        let mut prev: Option<f64> = None;
        let mut converged = false;
        for i in 0..self.cfg.max_iters {
            let (ev, step) = self.iterate(i).map_err(|e| e.at_iteration(i))?;
            self.state.iteration = i + 1;
            trace.push(TraceRow {
                iteration: i + 1,
                evidence: ev,
                max_beta_step: step,
                active: self.active_count(),
            });
            if let Some(p) = prev {
                if (ev - p).abs() <= self.cfg.evidence_tol * p.abs() {
                    converged = true;
                    break;
                }
            }
            prev = Some(ev);
        }
        // final posterior at the last refined angles
        let iters = self.state.iteration;
        let post = self.posterior(true).map_err(|e| e.at_iteration(iters))?;
        self.state.set_posterior(post)?;
        let power: Vec<f64> = self.state.mu.iter().map(|m| m.norm_sqr()).collect();
        let support = select_support(&power, self.cfg.support_threshold, self.y.len());
        let h = refit_channel(
            self.dict,
            self.x,
            self.y,
            &self.state.beta,
            self.state.phi_hat.as_ref(),
            &support,
        )?;
        Ok(Estimate {
            h,
            support,
            state: self.state,
            trace,
            converged,
            stalls: self.stalls,
        })
    }
}

/// Off-grid SBL for linear arrays (`α → γ → β` blocks).
pub fn estimate_offgrid_linear(
    y: &CVector,
    x: &CMatrix,
    dict: &OffGridDictionary,
    priors: &Hyperpriors,
    cfg: &RefineConfig,
) -> Result<Estimate> {
    Solver::new(y, x, dict, priors, cfg, None)?.run()
}

/// Off-grid SBL for planar arrays (`α → γ → β → φ̂` blocks). `seed` drives
/// the random elevation start.
pub fn estimate_offgrid_2d(
    y: &CVector,
    x: &CMatrix,
    dict: &OffGridDictionary,
    priors: &Hyperpriors,
    cfg: &RefineConfig,
    seed: u64,
) -> Result<Estimate> {
    if !dict.is_planar() {
        return Err(Error::InvalidConfig("planar estimation needs a planar dictionary".into()));
    }
    let phi_hat = initial_elevations(dict.len(), cfg.elevation_init, seed);
    Solver::new(y, x, dict, priors, cfg, Some(phi_hat))?.run()
}
