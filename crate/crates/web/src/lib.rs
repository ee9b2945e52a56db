//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The plain functions ([`leakage_map`], [`beam_pattern`], [`run_demo`]) are
//! ordinary Rust and tested natively; the `wasm_*` exports wrap them and turn
//! errors into JavaScript exceptions.

use std::f64::consts::PI;

use offgrid_sbl::array_model::{leakage_coefficient, steering_2d, ArrayGeometry, Wavelength};
use offgrid_sbl::baselines::ongrid_sbl_estimate;
use offgrid_sbl::channel_sim::{
    derive_seed, generate_channel, generate_pilots, nmse, observe_downlink, ClusterChannelConfig,
};
use offgrid_sbl::offgrid_refine::{estimate_offgrid_linear, Estimate, RefineConfig};
use offgrid_sbl::sbl_core::{Hyperpriors, OffGridDictionary};
use thiserror::Error;
use wasm_bindgen::prelude::*;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const DOWNLINK_HZ: f64 = 2170e6;
const DESIGN_HZ: f64 = 2000e6;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Estimation(#[from] offgrid_sbl::Error),
}

pub type Result<T> = std::result::Result<T, DemoError>;

fn sweep(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![from],
        k => (0..k).map(|i| from + (to - from) * i as f64 / (k - 1) as f64).collect(),
    }
}

/// `|v_n(θ)|` for every DFT bin over an azimuth sweep, bin-major
/// (`antennas × points` values).
pub fn leakage_map(antennas: usize, d_over_lambda: f64, from_deg: f64, to_deg: f64, points: usize) -> Result<Vec<f64>> {
    if antennas == 0 || points == 0 || antennas * points > 4_000_000 {
        return Err(DemoError::Input(format!("bad leakage size {antennas} x {points}")));
    }
    let thetas = sweep(from_deg, to_deg, points);
    let mut out = Vec::with_capacity(antennas * points);
    for bin in 1..=antennas {
        for t in &thetas {
            out.push(leakage_coefficient(bin, t.to_radians(), antennas, d_over_lambda)?);
        }
    }
    Ok(out)
}

/// Normalised array response `|a(θ, φ)ᴴ a(θ₀, φ₀)| / N` over the full
/// azimuth circle for a geometry in the `d_n phi_n` text format.
pub fn beam_pattern(geometry: &str, carrier_hz: f64, steer_deg: f64, elevation_deg: f64, points: usize) -> Result<Vec<f64>> {
    let geom = ArrayGeometry::parse(geometry)?;
    let wl = Wavelength::from_frequency(carrier_hz)?;
    if points < 2 {
        return Err(DemoError::Input("beam pattern needs at least two points".into()));
    }
    let phi = elevation_deg.to_radians();
    let target = steering_2d(&geom, steer_deg.to_radians(), phi, wl).into_inner();
    let n = geom.len() as f64;
    Ok(sweep(-180.0, 180.0, points)
        .into_iter()
        .map(|t| {
            let a = steering_2d(&geom, t.to_radians(), phi, wl).into_inner();
            a.dotc(&target).norm() / n
        })
        .collect())
}

/// One downlink estimation on a half-wavelength ULA.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRequest {
    pub antennas: usize,
    pub paths: usize,
    pub pilots: usize,
    pub snr_db: f64,
    pub grid_size: usize,
    pub seed: u64,
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct DemoOutcome {
    nmse_offgrid: f64,
    nmse_ongrid: f64,
    iterations: usize,
    true_deg: Vec<f64>,
    true_power: Vec<f64>,
    offgrid_deg: Vec<f64>,
    offgrid_power: Vec<f64>,
    ongrid_deg: Vec<f64>,
    ongrid_power: Vec<f64>,
}

#[wasm_bindgen]
impl DemoOutcome {
    #[wasm_bindgen(getter)]
    pub fn nmse_offgrid(&self) -> f64 {
        self.nmse_offgrid
    }
    #[wasm_bindgen(getter)]
    pub fn nmse_ongrid(&self) -> f64 {
        self.nmse_ongrid
    }
    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    #[wasm_bindgen(getter)]
    pub fn true_deg(&self) -> Vec<f64> {
        self.true_deg.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn true_power(&self) -> Vec<f64> {
        self.true_power.clone()
    }
    /// Refined azimuth of every atom, degrees.
    #[wasm_bindgen(getter)]
    pub fn offgrid_deg(&self) -> Vec<f64> {
        self.offgrid_deg.clone()
    }
    /// `|μ_l|²` per atom.
    #[wasm_bindgen(getter)]
    pub fn offgrid_power(&self) -> Vec<f64> {
        self.offgrid_power.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn ongrid_deg(&self) -> Vec<f64> {
        self.ongrid_deg.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn ongrid_power(&self) -> Vec<f64> {
        self.ongrid_power.clone()
    }
}

fn spectrum(dict: &OffGridDictionary, est: &Estimate) -> (Vec<f64>, Vec<f64>) {
    let deg = (0..dict.len())
        .map(|l| (dict.grid()[l] + est.state.beta[l]).to_degrees())
        .collect();
    let power = est.state.mu.iter().map(|m| m.norm_sqr()).collect();
    (deg, power)
}

pub fn run_demo(req: &DemoRequest) -> Result<DemoOutcome> {
    let DemoRequest { antennas, paths, pilots, snr_db, grid_size, seed } = *req;
    if !(2..=256).contains(&antennas) || !(1..=512).contains(&grid_size) || pilots == 0 || pilots > 256 {
        return Err(DemoError::Input(format!(
            "keep 2 <= N <= 256, 1 <= T <= 256 and 1 <= L <= 512 (got N={antennas}, T={pilots}, L={grid_size})"
        )));
    }
    let spacing = SPEED_OF_LIGHT / (2.0 * DESIGN_HZ);
    let geom = ArrayGeometry::ula(antennas, spacing)?;
    let wl = Wavelength::from_frequency(DOWNLINK_HZ)?;
    let limit = 60f64.to_radians();
    let channel_cfg = ClusterChannelConfig::new(paths, 1, (-limit, limit), 0.0);
    let channel = generate_channel(&channel_cfg, &geom, wl, derive_seed(seed, 0, 0))?;
    let x = generate_pilots(pilots, antennas, 1.0, derive_seed(seed, 0, 1))?;
    let noise_var = 10f64.powf(-snr_db / 10.0);
    let y = observe_downlink(&x, &channel.h, noise_var, derive_seed(seed, 0, 2))?;

    let dict = OffGridDictionary::linear(geom, wl, grid_size)?;
    let priors = Hyperpriors::default();
    let cfg = RefineConfig {
        max_iters: 100,
        support_threshold: 1e-3,
        ..RefineConfig::default()
    };
    let off = estimate_offgrid_linear(&y, &x.x, &dict, &priors, &cfg)?;
    let on = ongrid_sbl_estimate(&y, &x.x, &dict, &priors, &cfg, seed)?;
    let (offgrid_deg, offgrid_power) = spectrum(&dict, &off);
    let (ongrid_deg, ongrid_power) = spectrum(&dict, &on);
    Ok(DemoOutcome {
        nmse_offgrid: nmse(&off.h, &channel.h)?,
        nmse_ongrid: nmse(&on.h, &channel.h)?,
        iterations: off.trace.len(),
        true_deg: channel.paths.iter().map(|p| p.theta.to_degrees()).collect(),
        true_power: channel.paths.iter().map(|p| p.gain.norm_sqr()).collect(),
        offgrid_deg,
        offgrid_power,
        ongrid_deg,
        ongrid_power,
    })
}

/// Geometry text for a built-in layout (`ula`, `upa` or `uca`) with
/// half-wavelength neighbour spacing at the design frequency.
pub fn layout_text(kind: &str, elements: usize) -> Result<String> {
    let d = SPEED_OF_LIGHT / (2.0 * DESIGN_HZ);
    let g = match kind {
        "ula" => ArrayGeometry::ula(elements, d)?,
        "upa" => {
            let nx = (elements as f64).sqrt().round().max(1.0) as usize;
            ArrayGeometry::uniform_rectangular(nx, elements.div_ceil(nx), d)?
        }
        "uca" => ArrayGeometry::uniform_circular(elements, d / (2.0 * (PI / elements.max(2) as f64).sin()))?,
        other => return Err(DemoError::Input(format!("unknown layout `{other}`"))),
    };
    Ok(g.to_text())
}

fn js(e: DemoError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = leakageMap)]
pub fn wasm_leakage_map(antennas: usize, d_over_lambda: f64, from_deg: f64, to_deg: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    leakage_map(antennas, d_over_lambda, from_deg, to_deg, points).map_err(js)
}

#[wasm_bindgen(js_name = beamPattern)]
pub fn wasm_beam_pattern(geometry: &str, carrier_hz: f64, steer_deg: f64, elevation_deg: f64, points: usize) -> std::result::Result<Vec<f64>, JsError> {
    beam_pattern(geometry, carrier_hz, steer_deg, elevation_deg, points).map_err(js)
}

#[wasm_bindgen(js_name = runDemo)]
pub fn wasm_run_demo(antennas: usize, paths: usize, pilots: usize, snr_db: f64, grid_size: usize, seed: u32) -> std::result::Result<DemoOutcome, JsError> {
    let req = DemoRequest { antennas, paths, pilots, snr_db, grid_size, seed: u64::from(seed) };
    run_demo(&req).map_err(js)
}

#[wasm_bindgen(js_name = layoutText)]
pub fn wasm_layout_text(kind: &str, elements: usize) -> std::result::Result<String, JsError> {
    layout_text(kind, elements).map_err(js)
}
