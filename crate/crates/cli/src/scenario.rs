//! Scenario files: array, carriers, channel model, sweep axes, estimator
//! settings and run defaults, stored as TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use offgrid_sbl::array_model::{ArrayGeometry, Wavelength, SPEED_OF_LIGHT};
use offgrid_sbl::baselines::{L1Config, Reconstruction};
use offgrid_sbl::channel_sim::ClusterChannelConfig;
use offgrid_sbl::offgrid_refine::{ElevationInit, RefineConfig, StepMode};
use offgrid_sbl::sbl_core::{Hyperpriors, OffGridDictionary, DEFAULT_SUPPORT_THRESHOLD};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Offgrid,
    UplinkAided,
    Sbl,
    Odft,
    Dft,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Offgrid, Method::UplinkAided, Method::Sbl, Method::Odft, Method::Dft];

    pub fn name(self) -> &'static str {
        match self {
            Method::Offgrid => "offgrid",
            Method::UplinkAided => "uplink_aided",
            Method::Sbl => "sbl",
            Method::Odft => "odft",
            Method::Dft => "dft",
        }
    }

    /// Parses a comma-separated list, keeping the given order and dropping
    /// repeats.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(BenchError::Usage("method list is empty".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BenchError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArraySpec {
    /// Uniform linear array; spacing defaults to half a wavelength at the
    /// reference frequency.
    Ula { n: usize, spacing_m: Option<f64> },
    /// Uniform rectangular array of `nx × ny` sensors.
    Upa { nx: usize, ny: usize, spacing_m: Option<f64> },
    Uca { n: usize, radius_m: f64 },
    /// Geometry text file (`d_n phi_n` per line), relative to the scenario.
    File { path: PathBuf },
}

impl ArraySpec {
    pub fn is_linear(&self) -> bool {
        matches!(self, ArraySpec::Ula { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandSpec {
    pub downlink_hz: f64,
    pub uplink_hz: f64,
    /// Frequency whose half wavelength sets the default sensor spacing.
    pub reference_hz: f64,
}

impl Default for BandSpec {
    fn default() -> Self {
        Self {
            downlink_hz: 2170e6,
            uplink_hz: 1980e6,
            reference_hz: 2000e6,
        }
    }
}

impl BandSpec {
    pub fn half_wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.reference_hz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub clusters: usize,
    pub subpaths: usize,
    /// Cluster-centre azimuth range in degrees.
    pub azimuth_deg: [f64; 2],
    /// Total angular width of each cluster in degrees.
    pub spread_deg: f64,
    #[serde(default)]
    pub elevation_deg: [f64; 2],
    /// Per-path gain variance; `1 / (clusters · subpaths)` when absent.
    #[serde(default)]
    pub gain_variance: Option<f64>,
}

impl ChannelSpec {
    pub fn config(&self) -> ClusterChannelConfig {
        let mut cfg = ClusterChannelConfig::new(
            self.clusters,
            self.subpaths,
            (self.azimuth_deg[0].to_radians(), self.azimuth_deg[1].to_radians()),
            self.spread_deg.to_radians(),
        )
        .with_elevation((self.elevation_deg[0].to_radians(), self.elevation_deg[1].to_radians()));
        if let Some(v) = self.gain_variance {
            cfg.gain_variance = v;
        }
        cfg
    }
}

/// Sweep axes; the benchmark visits their cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub pilots: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub grid_size: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// Atoms uniform in `sin θ`; reduces to the DFT bins when the grid size
    /// equals the array size. Linear arrays only.
    Sine,
    /// Atoms uniform in azimuth.
    Angle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Fixed,
    LineSearch,
}

impl From<StepKind> for StepMode {
    fn from(k: StepKind) -> Self {
        match k {
            StepKind::Fixed => StepMode::Fixed,
            StepKind::LineSearch => StepMode::LineSearch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElevationStart {
    Random,
    Equispaced,
    Zero,
}

impl From<ElevationStart> for ElevationInit {
    fn from(e: ElevationStart) -> Self {
        match e {
            ElevationStart::Random => ElevationInit::Random,
            ElevationStart::Equispaced => ElevationInit::Equispaced,
            ElevationStart::Zero => ElevationInit::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSpec {
    /// Defaults to `sine` for linear arrays and `angle` otherwise.
    pub grid: Option<GridKind>,
    pub max_iters: usize,
    pub evidence_tol: f64,
    pub support_threshold: f64,
    pub step_mode: StepKind,
    pub rho: f64,
    pub elevation_init: ElevationStart,
    pub prior_a: f64,
    pub prior_b: f64,
    /// When set, the l1 baselines refit by least squares on the atoms
    /// above this relative power instead of using the coefficients directly.
    pub l1_refit_threshold: Option<f64>,
    pub l1_max_iters: usize,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        let r = RefineConfig::default();
        let p = Hyperpriors::default();
        Self {
            grid: None,
            max_iters: r.max_iters,
            evidence_tol: r.evidence_tol,
            support_threshold: DEFAULT_SUPPORT_THRESHOLD,
            step_mode: StepKind::Fixed,
            rho: r.rho,
            elevation_init: ElevationStart::Random,
            prior_a: p.a,
            prior_b: p.b,
            l1_refit_threshold: None,
            l1_max_iters: L1Config::new(0.0).max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UplinkSpec {
    /// Uplink pilot length; one user with an orthogonal pilot row.
    pub pilots: usize,
    /// Uplink SNR; follows the downlink SNR of the sweep point when absent.
    pub snr_db: Option<f64>,
    /// Uniform ± perturbation of uplink path azimuths, in degrees.
    pub angle_jitter_deg: f64,
}

impl Default for UplinkSpec {
    fn default() -> Self {
        Self {
            pilots: 10,
            snr_db: None,
            angle_jitter_deg: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub methods: Vec<Method>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub array: ArraySpec,
    #[serde(default)]
    pub band: BandSpec,
    pub channel: ChannelSpec,
    pub training: TrainingSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub uplink: UplinkSpec,
    pub run: RunSpec,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub pilots: usize,
    pub snr_db: f64,
    pub grid_size: usize,
}

impl SweepPoint {
    pub fn noise_var(&self) -> f64 {
        snr_to_noise_var(self.snr_db)
    }
}

/// `σ² = P / SNR` with unit pilot power.
pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

impl Scenario {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| BenchError::Scenario {
            origin: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        sc.validate(origin)?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let mut sc = Self::from_toml(&text, &path.display().to_string())?;
        sc.base_dir = path.parent().map(Path::to_path_buf);
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    fn validate(&self, origin: &str) -> Result<()> {
        let fail = |key: &str, msg: String| {
            Err(BenchError::Scenario {
                origin: origin.to_string(),
                message: format!("key `{key}`: {msg}"),
            })
        };
        let t = &self.training;
        if t.pilots.is_empty() || t.pilots.contains(&0) {
            return fail("training.pilots", "needs at least one positive value".into());
        }
        if t.snr_db.is_empty() || t.snr_db.iter().any(|s| !s.is_finite()) {
            return fail("training.snr_db", "needs at least one finite value".into());
        }
        if t.grid_size.is_empty() || t.grid_size.contains(&0) {
            return fail("training.grid_size", "needs at least one positive value".into());
        }
        if self.run.methods.is_empty() {
            return fail("run.methods", "is empty".into());
        }
        if self.run.trials == 0 {
            return fail("run.trials", "must be positive".into());
        }
        if let Err(e) = self.channel.config().validate() {
            return fail("channel", e.to_string());
        }
        for (key, f) in [
            ("band.downlink_hz", self.band.downlink_hz),
            ("band.uplink_hz", self.band.uplink_hz),
            ("band.reference_hz", self.band.reference_hz),
        ] {
            if !(f > 0.0 && f.is_finite()) {
                return fail(key, format!("must be a positive frequency, got {f}"));
            }
        }
        if !self.array.is_linear() {
            if self.estimator.grid == Some(GridKind::Sine) {
                return fail("estimator.grid", "`sine` needs a ula array".into());
            }
            if self.run.methods.contains(&Method::UplinkAided) {
                return fail("run.methods", "uplink_aided needs a ula array".into());
            }
        }
        if self.uplink.pilots == 0 {
            return fail("uplink.pilots", "must be positive".into());
        }
        if let Err(e) = self.refine_config().validate() {
            return fail("estimator", e.to_string());
        }
        if let Err(e) = self.priors() {
            return fail("estimator", e.to_string());
        }
        Ok(())
    }

    /// Sweep points in pilots-major, then SNR, then grid-size order.
    pub fn sweep(&self) -> Vec<SweepPoint> {
        let t = &self.training;
        let mut out = Vec::new();
        for &pilots in &t.pilots {
            for &snr_db in &t.snr_db {
                for &grid_size in &t.grid_size {
                    out.push(SweepPoint { pilots, snr_db, grid_size });
                }
            }
        }
        out
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let half = self.band.half_wavelength();
        let g = match &self.array {
            ArraySpec::Ula { n, spacing_m } => ArrayGeometry::ula(*n, spacing_m.unwrap_or(half))?,
            ArraySpec::Upa { nx, ny, spacing_m } => ArrayGeometry::uniform_rectangular(*nx, *ny, spacing_m.unwrap_or(half))?,
            ArraySpec::Uca { n, radius_m } => ArrayGeometry::uniform_circular(*n, *radius_m)?,
            ArraySpec::File { path } => {
                let full = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&full).map_err(|e| BenchError::io(&full, e))?;
                ArrayGeometry::parse(&text)?
            }
        };
        Ok(g)
    }

    pub fn downlink(&self) -> Result<Wavelength> {
        Ok(Wavelength::from_frequency(self.band.downlink_hz)?)
    }

    pub fn uplink_wavelength(&self) -> Result<Wavelength> {
        Ok(Wavelength::from_frequency(self.band.uplink_hz)?)
    }

    pub fn grid_kind(&self) -> GridKind {
        self.estimator.grid.unwrap_or(if self.array.is_linear() { GridKind::Sine } else { GridKind::Angle })
    }

    pub fn dictionary(&self, geom: &ArrayGeometry, grid_size: usize) -> Result<OffGridDictionary> {
        let wl = self.downlink()?;
        let dict = match (&self.array, self.grid_kind()) {
            (ArraySpec::Ula { spacing_m, .. }, GridKind::Sine) => OffGridDictionary::linear_sine(
                geom.clone(),
                wl,
                grid_size,
                spacing_m.unwrap_or(self.band.half_wavelength()),
            )?,
            (ArraySpec::Ula { .. }, GridKind::Angle) => OffGridDictionary::linear(geom.clone(), wl, grid_size)?,
            _ => OffGridDictionary::planar(geom.clone(), wl, grid_size)?,
        };
        Ok(dict)
    }

    pub fn refine_config(&self) -> RefineConfig {
        let e = &self.estimator;
        RefineConfig {
            step_mode: e.step_mode.into(),
            rho: e.rho,
            max_iters: e.max_iters,
            evidence_tol: e.evidence_tol,
            support_threshold: e.support_threshold,
            elevation_init: e.elevation_init.into(),
            ..RefineConfig::default()
        }
    }

    pub fn priors(&self) -> Result<Hyperpriors> {
        Ok(Hyperpriors::new(self.estimator.prior_a, self.estimator.prior_b)?)
    }

    pub fn l1_config(&self, point: &SweepPoint) -> L1Config {
        L1Config {
            max_iters: self.estimator.l1_max_iters,
            ..L1Config::for_noise(point.pilots, point.noise_var())
        }
    }

    pub fn l1_rule(&self) -> Reconstruction {
        match self.estimator.l1_refit_threshold {
            Some(t) => Reconstruction::Refit(t),
            None => Reconstruction::Direct,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
[array]
kind = "ula"
n = 8
[channel]
clusters = 1
subpaths = 2
azimuth_deg = [-30.0, 30.0]
spread_deg = 5.0
[training]
pilots = [6, 8]
snr_db = [10.0]
grid_size = [8, 16, 24]
[run]
methods = ["offgrid", "dft"]
trials = 3
"#;

    #[test]
    fn minimal_scenario_fills_defaults() {
        let sc = Scenario::from_toml(MINIMAL, "tiny").unwrap();
        assert_eq!(sc.band, BandSpec::default());
        assert_eq!(sc.estimator, EstimatorSpec::default());
        assert_eq!(sc.grid_kind(), GridKind::Sine);
        assert_eq!(sc.run.seed, 0);
        assert_eq!(sc.sweep().len(), 6);
        let g = sc.geometry().unwrap();
        assert_eq!(g.len(), 8);
    }

    #[test]
    fn sweep_order_is_pilots_major() {
        let sc = Scenario::from_toml(MINIMAL, "tiny").unwrap();
        let pts: Vec<(usize, usize)> = sc.sweep().iter().map(|p| (p.pilots, p.grid_size)).collect();
        assert_eq!(pts, vec![(6, 8), (6, 16), (6, 24), (8, 8), (8, 16), (8, 24)]);
    }

    #[test]
    fn round_trips_through_toml() {
        let sc = Scenario::from_toml(MINIMAL, "tiny").unwrap();
        let back = Scenario::from_toml(&sc.to_toml(), "again").unwrap();
        assert_eq!(sc, back);
    }

    #[test]
    fn unknown_key_reports_its_name_and_line() {
        let text = MINIMAL.replace("spread_deg = 5.0", "spread_deg = 5.0\nspreed = 1");
        let err = Scenario::from_toml(&text, "typo.toml").unwrap_err().to_string();
        assert!(err.contains("typo.toml"), "{err}");
        assert!(err.contains("spreed"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_method_is_rejected() {
        let text = MINIMAL.replace("\"dft\"", "\"fft\"");
        let err = Scenario::from_toml(&text, "m").unwrap_err().to_string();
        assert!(err.contains("fft"), "{err}");
        assert!(matches!(Method::parse_list("sbl,foo"), Err(BenchError::UnknownMethod(m)) if m == "foo"));
    }

    #[test]
    fn invalid_values_name_the_key() {
        let err = Scenario::from_toml(&MINIMAL.replace("trials = 3", "trials = 0"), "z")
            .unwrap_err()
            .to_string();
        assert!(err.contains("run.trials"), "{err}");
        let err = Scenario::from_toml(&MINIMAL.replace("pilots = [6, 8]", "pilots = []"), "z")
            .unwrap_err()
            .to_string();
        assert!(err.contains("training.pilots"), "{err}");
    }

    #[test]
    fn planar_arrays_reject_linear_only_options() {
        let planar = MINIMAL.replace("kind = \"ula\"\nn = 8", "kind = \"upa\"\nnx = 4\nny = 2");
        let sc = Scenario::from_toml(&planar, "p").unwrap();
        assert_eq!(sc.grid_kind(), GridKind::Angle);
        assert!(sc.dictionary(&sc.geometry().unwrap(), 16).unwrap().is_planar());
        let err = Scenario::from_toml(&planar.replace("\"offgrid\"", "\"uplink_aided\""), "p")
            .unwrap_err()
            .to_string();
        assert!(err.contains("uplink_aided"), "{err}");
        let err = Scenario::from_toml(&format!("{planar}\n[estimator]\ngrid = \"sine\"\n"), "p")
            .unwrap_err()
            .to_string();
        assert!(err.contains("estimator.grid"), "{err}");
    }

    #[test]
    fn method_list_keeps_order_and_drops_repeats() {
        let m = Method::parse_list("sbl, offgrid,sbl").unwrap();
        assert_eq!(m, vec![Method::Sbl, Method::Offgrid]);
        assert!(Method::parse_list(" , ").is_err());
    }

    #[test]
    fn snr_maps_to_noise_variance() {
        assert_eq!(snr_to_noise_var(0.0), 1.0);
        assert!((snr_to_noise_var(10.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_noise_var(-3.0) - 10f64.powf(0.3)).abs() < 1e-12);
    }
}
