//! SBL machinery shared by every estimator: the off-grid dictionary,
//! posterior statistics, closed-form precision updates, the log-evidence
//! and final channel reconstruction.
//!
//! The model is `y = Φ(β) w + n` with `n ~ CN(0, α⁻¹ I)`,
//! `w ~ CN(0, diag(γ)⁻¹)` and Gamma hyperpriors `Γ(1 + a, b)` on `α` and
//! every `γ_l`.

use std::f64::consts::PI;

use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;

use crate::array_model::{steering_2d, steering_deriv_phi, steering_deriv_theta, steering_linear, ArrayGeometry, Wavelength};
use crate::linalg::{self, CMatrix, CVector, RVector};
use crate::{Error, Result};

/// Upper clamp for precisions; components there count as pruned.
pub const GAMMA_CEILING: f64 = 1e12;

/// Default relative-power threshold used to pick the support.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-2;

/// Gamma hyperprior parameters shared by all precisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperpriors {
    pub a: f64,
    pub b: f64,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        Self { a: 1e-4, b: 1e-4 }
    }
}

impl Hyperpriors {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = Self { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "hyperpriors need a, b > 0, got a={}, b={}",
                self.a, self.b
            )))
        }
    }

    /// `ln Γ(x; 1 + a, b)` (shape/rate).
    pub fn log_prior(&self, x: f64) -> f64 {
        let k = 1.0 + self.a;
        k * self.b.ln() - ln_gamma(k) + self.a * x.ln() - self.b * x
    }
}

/// Hyperparameters and posterior snapshot of one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SblState {
    pub alpha: f64,
    pub gamma: RVector,
    pub beta: RVector,
    pub phi_hat: Option<RVector>,
    pub mu: CVector,
    pub sigma: CMatrix,
    pub iteration: usize,
}

impl SblState {
    /// `α = 1`, `γ = 1`, `β = 0` with the prior as posterior.
    pub fn initial(grid_size: usize, phi_hat: Option<RVector>) -> Self {
        Self {
            alpha: 1.0,
            gamma: RVector::from_element(grid_size, 1.0),
            beta: RVector::zeros(grid_size),
            phi_hat,
            mu: CVector::zeros(grid_size),
            sigma: CMatrix::identity(grid_size, grid_size),
            iteration: 0,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.gamma.len()
    }

    /// Stores a freshly computed posterior. The posterior must carry the
    /// full covariance.
    pub fn set_posterior(&mut self, post: Posterior) -> Result<()> {
        self.sigma = post
            .sigma
            .ok_or_else(|| Error::numerical("posterior lacks the full covariance"))?;
        self.mu = post.mu;
        Ok(())
    }
}

/// Uniform azimuth grid plus the geometry needed to evaluate `A(β, φ̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffGridDictionary {
    geom: ArrayGeometry,
    wl: Wavelength,
    grid: Vec<f64>,
    r_theta: f64,
    planar: bool,
}

impl OffGridDictionary {
    /// Linear-array dictionary over `[−π/2, π/2]`.
    pub fn linear(geom: ArrayGeometry, wl: Wavelength, grid_size: usize) -> Result<Self> {
        Self::uniform(geom, wl, grid_size, -PI / 2.0, PI / 2.0, false)
    }

    /// Planar-array dictionary over `[−π, π]` with per-atom elevations.
    pub fn planar(geom: ArrayGeometry, wl: Wavelength, grid_size: usize) -> Result<Self> {
        Self::uniform(geom, wl, grid_size, -PI, PI, true)
    }

    /// Linear-array dictionary uniform in spatial frequency: atom `l` sits at
    /// `(d/λ) sin θ_l = −1/2 + l/L`, so `L = N` reproduces the DFT bins.
    /// `spacing` is the element spacing `d` in metres.
    pub fn linear_sine(geom: ArrayGeometry, wl: Wavelength, grid_size: usize, spacing: f64) -> Result<Self> {
        if grid_size < 1 {
            return Err(Error::InvalidConfig("grid size must be at least 1".into()));
        }
        let dl = spacing / wl.meters();
        if !(dl >= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "sine grid needs d/λ ≥ 1/2 to cover every bin, got {dl}"
            )));
        }
        let grid = (0..grid_size)
            .map(|l| ((-0.5 + l as f64 / grid_size as f64) / dl).asin())
            .collect();
        Self::from_grid(geom, wl, grid, PI / grid_size as f64, false)
    }

    fn uniform(geom: ArrayGeometry, wl: Wavelength, grid_size: usize, lo: f64, hi: f64, planar: bool) -> Result<Self> {
        if grid_size < 1 {
            return Err(Error::InvalidConfig("grid size must be at least 1".into()));
        }
        let r = (hi - lo) / grid_size as f64;
        let grid = (0..grid_size).map(|l| lo + (l as f64 + 0.5) * r).collect();
        Ok(Self {
            geom,
            wl,
            grid,
            r_theta: r,
            planar,
        })
    }

    /// Dictionary over an explicit list of grid angles with interval
    /// `r_theta`. The points need not be sorted.
    pub fn from_grid(geom: ArrayGeometry, wl: Wavelength, grid: Vec<f64>, r_theta: f64, planar: bool) -> Result<Self> {
        if grid.is_empty() || grid.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidConfig("grid must be non-empty and finite".into()));
        }
        if !(r_theta > 0.0) {
            return Err(Error::InvalidConfig(format!("grid interval must be positive, got {r_theta}")));
        }
        Ok(Self {
            geom,
            wl,
            grid,
            r_theta,
            planar,
        })
    }

    /// Same grid and geometry evaluated at another carrier.
    pub fn with_wavelength(&self, wl: Wavelength) -> Self {
        Self { wl, ..self.clone() }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn r_theta(&self) -> f64 {
        self.r_theta
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn is_planar(&self) -> bool {
        self.planar
    }

    pub fn geometry(&self) -> &ArrayGeometry {
        &self.geom
    }

    pub fn wavelength(&self) -> Wavelength {
        self.wl
    }

    pub fn num_antennas(&self) -> usize {
        self.geom.len()
    }

    fn check(&self, beta: &RVector, phi: Option<&RVector>) -> Result<()> {
        if beta.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: "dictionary offsets",
                expected: self.len(),
                actual: beta.len(),
            });
        }
        if let Some(p) = phi {
            if p.len() != self.len() {
                return Err(Error::DimensionMismatch {
                    context: "dictionary elevations",
                    expected: self.len(),
                    actual: p.len(),
                });
            }
        }
        Ok(())
    }

    fn elev(phi: Option<&RVector>, l: usize) -> f64 {
        phi.map_or(0.0, |p| p[l])
    }

    /// Atom `l` at azimuth `ϑ̂_l + beta_l` and elevation `phi_l`.
    pub fn atom(&self, l: usize, beta_l: f64, phi_l: f64) -> CVector {
        let theta = self.grid[l] + beta_l;
        if self.planar {
            steering_2d(&self.geom, theta, phi_l, self.wl).into_inner()
        } else {
            steering_linear(&self.geom, theta, self.wl).into_inner()
        }
    }

    /// Azimuth derivative of atom `l`.
    pub fn atom_deriv_theta(&self, l: usize, beta_l: f64, phi_l: f64) -> CVector {
        let theta = self.grid[l] + beta_l;
        if self.planar {
            steering_deriv_theta(&self.geom, theta, phi_l, self.wl)
        } else {
            let (s, c) = theta.sin_cos();
            CVector::from_iterator(
                self.geom.len(),
                self.geom.sensors().iter().map(|sn| {
                    let k = 2.0 * PI * sn.radius / self.wl.meters();
                    Complex64::from_polar(1.0, -k * s) * Complex64::new(0.0, -k * c)
                }),
            )
        }
    }

    /// Elevation derivative of atom `l` (zero for linear dictionaries).
    pub fn atom_deriv_phi(&self, l: usize, beta_l: f64, phi_l: f64) -> CVector {
        if self.planar {
            steering_deriv_phi(&self.geom, self.grid[l] + beta_l, phi_l, self.wl)
        } else {
            CVector::zeros(self.geom.len())
        }
    }

    fn build(&self, beta: &RVector, phi: Option<&RVector>, f: impl Fn(usize, f64, f64) -> CVector) -> Result<CMatrix> {
        self.check(beta, phi)?;
        let mut m = CMatrix::zeros(self.geom.len(), self.len());
        for l in 0..self.len() {
            m.set_column(l, &f(l, beta[l], Self::elev(phi, l)));
        }
        Ok(m)
    }

    /// `A(β, φ̂)`, `N × L̂`.
    pub fn steering_matrix(&self, beta: &RVector, phi: Option<&RVector>) -> Result<CMatrix> {
        self.build(beta, phi, |l, b, p| self.atom(l, b, p))
    }

    /// `∂A/∂θ` column-wise.
    pub fn derivative_matrix(&self, beta: &RVector, phi: Option<&RVector>) -> Result<CMatrix> {
        self.build(beta, phi, |l, b, p| self.atom_deriv_theta(l, b, p))
    }

    /// `∂A/∂φ` column-wise.
    pub fn elevation_derivative_matrix(&self, beta: &RVector, phi: Option<&RVector>) -> Result<CMatrix> {
        self.build(beta, phi, |l, b, p| self.atom_deriv_phi(l, b, p))
    }

    /// `Φ(β, φ̂) = X A(β, φ̂)`.
    pub fn measurement_matrix(&self, x: &CMatrix, beta: &RVector, phi: Option<&RVector>) -> Result<CMatrix> {
        if x.ncols() != self.geom.len() {
            return Err(Error::DimensionMismatch {
                context: "pilot matrix columns",
                expected: self.geom.len(),
                actual: x.ncols(),
            });
        }
        Ok(linalg::mul(x, &self.steering_matrix(beta, phi)?))
    }

    /// Atoms for the listed indices only.
    pub fn select_columns(&self, idx: &[usize], beta: &RVector, phi: Option<&RVector>) -> Result<CMatrix> {
        self.check(beta, phi)?;
        let mut m = CMatrix::zeros(self.geom.len(), idx.len());
        for (j, &l) in idx.iter().enumerate() {
            m.set_column(j, &self.atom(l, beta[l], Self::elev(phi, l)));
        }
        Ok(m)
    }
}

/// Posterior of `w` at fixed hyperparameters.
///
/// `phi_sigma` holds `ΦΣ`, which is all the gradient and `α` updates need;
/// the full `Σ` is only formed on request.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mu: CVector,
    pub sigma_diag: RVector,
    pub phi_sigma: CMatrix,
    pub sigma: Option<CMatrix>,
    /// `ln CN(y; 0, α⁻¹I + Φ diag(γ)⁻¹ Φᴴ)`.
    pub log_likelihood: f64,
}

fn check_model(y: &CVector, phi: &CMatrix, alpha: f64, gamma: &RVector) -> Result<()> {
    if phi.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "measurement rows",
            expected: y.len(),
            actual: phi.nrows(),
        });
    }
    if phi.ncols() != gamma.len() {
        return Err(Error::DimensionMismatch {
            context: "precision vector",
            expected: phi.ncols(),
            actual: gamma.len(),
        });
    }
    let finite = |z: &Complex64| z.re.is_finite() && z.im.is_finite();
    if !y.iter().all(finite) || !phi.iter().all(finite) {
        return Err(Error::numerical("non-finite observation or dictionary"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::numerical(format!("noise precision must be positive, got {alpha}")));
    }
    if let Some(g) = gamma.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::numerical(format!("precision must be positive, got {g}")));
    }
    Ok(())
}

fn scale_columns(m: &CMatrix, s: &[f64]) -> CMatrix {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= Complex64::new(s[j], 0.0);
    }
    out
}

impl Posterior {
    /// Posterior for `(α, γ)`. Uses the `T × T` marginal covariance when
    /// `T < L̂` and the `L̂ × L̂` precision otherwise.
    pub fn compute(y: &CVector, phi: &CMatrix, alpha: f64, gamma: &RVector, full_sigma: bool) -> Result<Self> {
        check_model(y, phi, alpha, gamma)?;
        if phi.nrows() < phi.ncols() {
            let p = Self::via_marginal(y, phi, alpha, gamma, full_sigma);
            // the marginal form subtracts from 1/γ_l and loses the variance
            // of sharply determined components when C is ill-conditioned
            match p {
                Ok(p) if p.variances_resolved(gamma) => Ok(p),
                _ => Self::via_precision(y, phi, alpha, gamma),
            }
        } else {
            Self::via_precision(y, phi, alpha, gamma)
        }
    }

    fn via_marginal(y: &CVector, phi: &CMatrix, alpha: f64, gamma: &RVector, full_sigma: bool) -> Result<Self> {
        let (t, l) = phi.shape();
        let s = 1.0 / alpha;
        let gi: Vec<f64> = gamma.iter().map(|g| 1.0 / g).collect();
        // B = Φ Γ⁻¹, C = s I + B Φᴴ, W = C⁻¹ B
        let b = scale_columns(phi, &gi);
        let mut c = linalg::mul_ad(&b, phi);
        for i in 0..t {
            c[(i, i)] += s;
        }
        linalg::hermitize(&mut c);
        let chol = linalg::hpd_factor(c, "marginal covariance")?;
        linalg::record_ops(t * t * t);
        let c_inv = chol.inverse();
        let w = linalg::mul(&c_inv, &b);
        let cy = linalg::mul_vec(&c_inv, y);
        let mu = linalg::ad_mul_vec(&b, &cy);
        let phi_sigma = &w * Complex64::new(s, 0.0);
        let sigma_diag = RVector::from_iterator(
            l,
            (0..l).map(|j| gi[j] - b.column(j).dotc(&w.column(j)).re),
        );
        let quad = y.dotc(&cy).re;
        let log_likelihood = -(t as f64) * PI.ln() - linalg::chol_log_det(&chol) - quad;
        let sigma = full_sigma.then(|| {
            let mut m = -linalg::ad_mul(&b, &w);
            for j in 0..l {
                m[(j, j)] += gi[j];
            }
            linalg::hermitize(&mut m);
            m
        });
        Ok(Self {
            mu,
            sigma_diag,
            phi_sigma,
            sigma,
            log_likelihood,
        })
    }

    fn via_precision(y: &CVector, phi: &CMatrix, alpha: f64, gamma: &RVector) -> Result<Self> {
        let (t, l) = phi.shape();
        let mut p = linalg::ad_mul(phi, phi) * Complex64::new(alpha, 0.0);
        for j in 0..l {
            p[(j, j)] += gamma[j];
        }
        linalg::hermitize(&mut p);
        let chol = linalg::hpd_factor(p, "posterior precision")?;
        linalg::record_ops(l * l * l);
        let mut sigma = chol.inverse();
        linalg::hermitize(&mut sigma);
        let phy = linalg::ad_mul_vec(phi, y);
        linalg::record_ops(l * l);
        let mu = (&sigma * &phy) * Complex64::new(alpha, 0.0);
        let phi_sigma = linalg::mul(phi, &sigma);
        let sigma_diag = RVector::from_iterator(l, (0..l).map(|j| sigma[(j, j)].re));
        let log_det_c = -(t as f64) * alpha.ln() + linalg::chol_log_det(&chol) - gamma.iter().map(|g| g.ln()).sum::<f64>();
        let quad = alpha * linalg::norm_sq(y) - alpha * phy.dotc(&mu).re;
        let log_likelihood = -(t as f64) * PI.ln() - log_det_c - quad;
        Ok(Self {
            mu,
            sigma_diag,
            phi_sigma,
            sigma: Some(sigma),
            log_likelihood,
        })
    }

    fn variances_resolved(&self, gamma: &RVector) -> bool {
        self.sigma_diag
            .iter()
            .zip(gamma.iter())
            .all(|(v, g)| v.is_finite() && *v > 1e-9 / g)
    }

    /// `tr(Φ Σ Φᴴ)`.
    pub fn trace_term(&self, phi: &CMatrix) -> f64 {
        trace_phi_sigma_phi(phi, &self.phi_sigma)
    }

    /// `η = tr(Φ Σ Φᴴ) + ‖y − Φ μ‖²`.
    pub fn eta(&self, y: &CVector, phi: &CMatrix) -> f64 {
        self.trace_term(phi) + linalg::norm_sq(&(y - linalg::mul_vec(phi, &self.mu)))
    }
}

/// `tr(Φ Σ Φᴴ)` given `Φ` and `ΦΣ`.
pub fn trace_phi_sigma_phi(phi: &CMatrix, phi_sigma: &CMatrix) -> f64 {
    linalg::record_ops(phi.len());
    phi.iter().zip(phi_sigma.iter()).map(|(a, b)| (a.conj() * b).re).sum()
}

/// `(μ, Σ)` with `Σ = (α ΦᴴΦ + diag γ)⁻¹` and `μ = α Σ Φᴴ y`.
pub fn compute_posterior(y: &CVector, phi: &CMatrix, alpha: f64, gamma: &RVector) -> Result<(CVector, CMatrix)> {
    let p = Posterior::compute(y, phi, alpha, gamma, true)?;
    Ok((p.mu, p.sigma.expect("full covariance requested")))
}

/// `α' = (T + a) / (b + η)`.
pub fn alpha_from_eta(t: usize, eta: f64, priors: &Hyperpriors) -> Result<f64> {
    if eta < -1e-12 || !eta.is_finite() {
        return Err(Error::numerical(format!("residual energy is invalid: {eta}")));
    }
    Ok((t as f64 + priors.a) / (priors.b + eta.max(0.0)))
}

/// Noise-precision update from the state's posterior.
pub fn update_alpha(state: &SblState, y: &CVector, phi: &CMatrix, priors: &Hyperpriors) -> Result<f64> {
    if state.sigma.nrows() != phi.ncols() || state.mu.len() != phi.ncols() {
        return Err(Error::DimensionMismatch {
            context: "update_alpha posterior",
            expected: phi.ncols(),
            actual: state.mu.len(),
        });
    }
    let phi_sigma = linalg::mul(phi, &state.sigma);
    let eta = trace_phi_sigma_phi(phi, &phi_sigma) + linalg::norm_sq(&(y - linalg::mul_vec(phi, &state.mu)));
    alpha_from_eta(y.len(), eta, priors)
}

/// `γ'_l = (a + 1) / (b + Σ_ll + |μ_l|²)`, clamped at [`GAMMA_CEILING`].
pub fn gamma_from_moments(mu: &CVector, sigma_diag: &RVector, priors: &Hyperpriors) -> Result<RVector> {
    gamma_from_second_moments(&second_moments(mu, sigma_diag)?, 1.0 + priors.a, priors)
}

/// `diag(Σ + μμᴴ)`.
pub fn second_moments(mu: &CVector, sigma_diag: &RVector) -> Result<RVector> {
    if mu.len() != sigma_diag.len() {
        return Err(Error::DimensionMismatch {
            context: "posterior moments",
            expected: mu.len(),
            actual: sigma_diag.len(),
        });
    }
    let xi = RVector::from_iterator(mu.len(), mu.iter().zip(sigma_diag.iter()).map(|(m, s)| s + m.norm_sqr()));
    if let Some(v) = xi.iter().find(|v| **v < -1e-12 || !v.is_finite()) {
        return Err(Error::numerical(format!("negative second moment {v}")));
    }
    Ok(xi)
}

pub(crate) fn gamma_from_second_moments(xi: &RVector, numerator: f64, priors: &Hyperpriors) -> Result<RVector> {
    Ok(xi.map(|v| (numerator / (priors.b + v.max(0.0))).min(GAMMA_CEILING)))
}

pub fn update_gamma(state: &SblState, priors: &Hyperpriors) -> Result<RVector> {
    let diag = RVector::from_iterator(state.sigma.nrows(), (0..state.sigma.nrows()).map(|j| state.sigma[(j, j)].re));
    gamma_from_moments(&state.mu, &diag, priors)
}

/// Log-priors of `α` and all `γ_l`.
pub fn log_prior(alpha: f64, gamma: &RVector, priors: &Hyperpriors) -> f64 {
    priors.log_prior(alpha) + gamma.iter().map(|g| priors.log_prior(*g)).sum::<f64>()
}

/// `ln p(y | α, γ, β) + ln p(α) + ln p(γ)`.
pub fn log_evidence(y: &CVector, phi: &CMatrix, alpha: f64, gamma: &RVector, priors: &Hyperpriors) -> Result<f64> {
    let p = Posterior::compute(y, phi, alpha, gamma, false)?;
    Ok(p.log_likelihood + log_prior(alpha, gamma, priors))
}

/// Indices whose `power` reaches `threshold · max(power)`, keeping at most
/// `cap` of the strongest. Returned in ascending index order.
pub fn select_support(power: &[f64], threshold: f64, cap: usize) -> Vec<usize> {
    let max = power.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..power.len()).filter(|&l| power[l] >= threshold * max).collect();
    if idx.len() > cap {
        idx.sort_by(|&i, &j| power[j].total_cmp(&power[i]).then(i.cmp(&j)));
        idx.truncate(cap);
        idx.sort_unstable();
    }
    idx
}

/// `h = A_Ω (Φ_Ω)⁺ y`.
pub fn refit_channel(
    dict: &OffGridDictionary,
    x: &CMatrix,
    y: &CVector,
    beta: &RVector,
    phi: Option<&RVector>,
    support: &[usize],
) -> Result<CVector> {
    if support.is_empty() {
        return Err(Error::NoActiveComponents);
    }
    let a = dict.select_columns(support, beta, phi)?;
    let phi_s = linalg::mul(x, &a);
    let g = linalg::lstsq(&phi_s, y)?;
    Ok(linalg::mul_vec(&a, &g))
}

/// Support from `|μ_l|²` and the least-squares refit on it.
pub fn extract_channel(
    dict: &OffGridDictionary,
    x: &CMatrix,
    y: &CVector,
    state: &SblState,
    support_threshold: f64,
) -> Result<(CVector, Vec<usize>)> {
    let power: Vec<f64> = state.mu.iter().map(|m| m.norm_sqr()).collect();
    let support = select_support(&power, support_threshold, y.len());
    let h = refit_channel(dict, x, y, &state.beta, state.phi_hat.as_ref(), &support)?;
    Ok((h, support))
}
