//! Synthetic channels, pilots and observation models.
//!
//! The channel generator is a clustered geometric model: `N_c` clusters
//! with uniformly drawn centres, each holding `N_s` sub-paths spread
//! uniformly over a window of width `angular_spread` around the centre, and
//! i.i.d. circular complex Gaussian path gains. Every generator is a pure
//! function of its seed.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::array_model::{steering_2d, ArrayGeometry, Wavelength};
use crate::linalg::{self, CMatrix, CVector};
use crate::{Error, Result};

/// Derives an independent sub-seed for `(master, trial, stream)`.
///
/// Each trial gets its own ChaCha stream; `stream` selects a position
/// inside it, so adding streams never shifts the seeds of existing ones.
pub fn derive_seed(master: u64, trial: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial);
    rng.set_word_pos(u128::from(stream) * 2);
    rng.next_u64()
}

fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Circular complex Gaussian sample with the given variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterChannelConfig {
    pub n_clusters: usize,
    pub n_subpaths: usize,
    /// Range of cluster-centre azimuths (radians).
    pub azimuth_range: (f64, f64),
    /// Total width of the sub-path window around each centre (radians).
    pub angular_spread: f64,
    /// Range of cluster-centre elevations (radians); `(0, 0)` for linear arrays.
    pub elevation_range: (f64, f64),
    /// Variance of each path gain.
    pub gain_variance: f64,
}

impl ClusterChannelConfig {
    /// Linear-array configuration with gain variance `1 / (N_c N_s)`.
    pub fn new(n_clusters: usize, n_subpaths: usize, azimuth_range: (f64, f64), angular_spread: f64) -> Self {
        let l = (n_clusters * n_subpaths).max(1) as f64;
        Self {
            n_clusters,
            n_subpaths,
            azimuth_range,
            angular_spread,
            elevation_range: (0.0, 0.0),
            gain_variance: 1.0 / l,
        }
    }

    pub fn with_elevation(mut self, range: (f64, f64)) -> Self {
        self.elevation_range = range;
        self
    }

    pub fn num_paths(&self) -> usize {
        self.n_clusters * self.n_subpaths
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_clusters < 1 || self.n_subpaths < 1 {
            return bad(format!(
                "need at least one cluster and sub-path, got {}x{}",
                self.n_clusters, self.n_subpaths
            ));
        }
        if !(self.angular_spread >= 0.0) {
            return bad(format!("angular spread must be >= 0, got {}", self.angular_spread));
        }
        if !(self.azimuth_range.0 <= self.azimuth_range.1) {
            return bad(format!("azimuth range {:?} is not ordered", self.azimuth_range));
        }
        if !(self.elevation_range.0 <= self.elevation_range.1) {
            return bad(format!("elevation range {:?} is not ordered", self.elevation_range));
        }
        if !(self.gain_variance > 0.0) {
            return bad(format!("gain variance must be positive, got {}", self.gain_variance));
        }
        Ok(())
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub theta: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<Path>,
    pub h: CVector,
}

impl ChannelRealization {
    /// `h = Σ ξ a(θ, φ)` over the given paths.
    pub fn assemble(paths: Vec<Path>, geom: &ArrayGeometry, wl: Wavelength) -> Self {
        let mut h = CVector::zeros(geom.len());
        for p in &paths {
            h += steering_2d(geom, p.theta, p.phi, wl).into_inner() * p.gain;
        }
        Self { paths, h }
    }

    /// Channel seen at another carrier that shares this realization's path
    /// angles but has fresh gains. `angle_jitter` (radians, uniform ±) adds
    /// azimuth perturbation to break exact angular reciprocity.
    pub fn reciprocal(
        &self,
        geom: &ArrayGeometry,
        wl: Wavelength,
        gain_variance: f64,
        angle_jitter: f64,
        seed: u64,
    ) -> Self {
        let mut rng = rng_from(seed);
        let paths = self
            .paths
            .iter()
            .map(|p| {
                let gain = complex_gaussian(&mut rng, gain_variance);
                let jitter = if angle_jitter > 0.0 {
                    rng.random_range(-angle_jitter..=angle_jitter)
                } else {
                    0.0
                };
                Path {
                    gain,
                    theta: p.theta + jitter,
                    phi: p.phi,
                }
            })
            .collect();
        Self::assemble(paths, geom, wl)
    }
}

fn uniform_in<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws one clustered channel realization.
pub fn generate_channel(
    cfg: &ClusterChannelConfig,
    geom: &ArrayGeometry,
    wl: Wavelength,
    seed: u64,
) -> Result<ChannelRealization> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    let half = cfg.angular_spread / 2.0;
    let (elo, ehi) = cfg.elevation_range;
    let mut paths = Vec::with_capacity(cfg.num_paths());
    for _ in 0..cfg.n_clusters {
        let centre = uniform_in(&mut rng, cfg.azimuth_range.0, cfg.azimuth_range.1);
        let elev = uniform_in(&mut rng, elo, ehi);
        for _ in 0..cfg.n_subpaths {
            let theta = uniform_in(&mut rng, centre - half, centre + half);
            let phi = if ehi > elo {
                uniform_in(&mut rng, elev - half, elev + half).clamp(elo, ehi)
            } else {
                elo
            };
            let gain = complex_gaussian(&mut rng, cfg.gain_variance);
            paths.push(Path { gain, theta, phi });
        }
    }
    Ok(ChannelRealization::assemble(paths, geom, wl))
}

/// Downlink training matrix `X` (`T × N`) with `tr(XXᴴ) = P T N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotMatrix {
    pub x: CMatrix,
    pub power: f64,
}

impl PilotMatrix {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }
}

/// Random Gaussian pilots rescaled to meet the power constraint exactly.
pub fn generate_pilots(t: usize, n: usize, power: f64, seed: u64) -> Result<PilotMatrix> {
    if t < 1 || n < 1 {
        return Err(Error::InvalidConfig(format!(
            "pilot matrix needs T >= 1 and N >= 1, got {t}x{n}"
        )));
    }
    if !(power > 0.0) {
        return Err(Error::InvalidConfig(format!("pilot power must be positive, got {power}")));
    }
    let mut rng = rng_from(seed);
    let mut x = CMatrix::from_fn(t, n, |_, _| complex_gaussian(&mut rng, 1.0));
    let energy: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    x *= Complex64::new((power * (t * n) as f64 / energy).sqrt(), 0.0);
    Ok(PilotMatrix { x, power })
}

/// `y = X h + n`, `n ~ CN(0, σ² I)`.
pub fn observe_downlink(pilots: &PilotMatrix, h: &CVector, noise_var: f64, seed: u64) -> Result<CVector> {
    if pilots.x.ncols() != h.len() {
        return Err(Error::DimensionMismatch {
            context: "observe_downlink",
            expected: pilots.x.ncols(),
            actual: h.len(),
        });
    }
    let mut rng = rng_from(seed);
    let mut y = &pilots.x * h;
    if noise_var > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(&mut rng, noise_var);
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UplinkObservation {
    /// Received block `Ȳ` (`N × T̄`).
    pub y_bar: CMatrix,
    /// User pilots `S` (`K × T̄`).
    pub s: CMatrix,
    pub noise_var: f64,
}

/// `K` mutually orthogonal unit-modulus pilot rows of length `t_bar`
/// (`S Sᴴ = T̄ I`).
pub fn orthogonal_pilots(k: usize, t_bar: usize) -> Result<CMatrix> {
    if k < 1 || t_bar < k {
        return Err(Error::InvalidConfig(format!(
            "orthogonal pilots need 1 <= K <= T̄, got K={k}, T̄={t_bar}"
        )));
    }
    Ok(DMatrix::from_fn(k, t_bar, |r, c| {
        Complex64::from_polar(
            1.0,
            -2.0 * std::f64::consts::PI * (r * c) as f64 / t_bar as f64,
        )
    }))
}

/// `Ȳ = H̄ S + N̄`.
pub fn observe_uplink(h_bar: &CMatrix, s: &CMatrix, noise_var: f64, seed: u64) -> Result<UplinkObservation> {
    if h_bar.ncols() != s.nrows() {
        return Err(Error::DimensionMismatch {
            context: "observe_uplink",
            expected: h_bar.ncols(),
            actual: s.nrows(),
        });
    }
    let mut rng = rng_from(seed);
    let mut y_bar = h_bar * s;
    if noise_var > 0.0 {
        for v in y_bar.iter_mut() {
            *v += complex_gaussian(&mut rng, noise_var);
        }
    }
    Ok(UplinkObservation {
        y_bar,
        s: s.clone(),
        noise_var,
    })
}

/// Least-squares uplink channel estimate `Ȳ S⁺` (`N × K`).
pub fn ls_uplink_estimate(obs: &UplinkObservation) -> Result<CMatrix> {
    let (k, t_bar) = obs.s.shape();
    if obs.y_bar.ncols() != t_bar {
        return Err(Error::DimensionMismatch {
            context: "ls_uplink_estimate",
            expected: t_bar,
            actual: obs.y_bar.ncols(),
        });
    }
    let rank = linalg::numerical_rank(&obs.s);
    if t_bar < k || rank < k {
        return Err(Error::RankDeficient { rank, required: k });
    }
    // S⁺ = Sᴴ (S Sᴴ)⁻¹ for full row rank S
    let gram = &obs.s * obs.s.adjoint();
    let chol = linalg::hpd_factor(gram, "uplink pilot Gram matrix")?;
    let ys = &obs.y_bar * obs.s.adjoint();
    // (Y Sᴴ) G⁻¹ = (G⁻¹ (Y Sᴴ)ᴴ)ᴴ since G is Hermitian
    Ok(chol.solve(&ys.adjoint()).adjoint())
}

/// `‖ĥ − h‖² / ‖h‖²`.
pub fn nmse(h_est: &CVector, h_true: &CVector) -> Result<f64> {
    if h_est.len() != h_true.len() {
        return Err(Error::DimensionMismatch {
            context: "nmse",
            expected: h_true.len(),
            actual: h_est.len(),
        });
    }
    let den = linalg::norm_sq(h_true);
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(linalg::norm_sq(&(h_est - h_true)) / den)
}

/// Mean of per-trial NMSE values (`NaN` for an empty list).
pub fn nmse_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
