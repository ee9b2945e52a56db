//! Monte Carlo execution: paired trial inputs, per-method estimation,
//! records and summaries.

use std::io::Write;
use std::time::Instant;

use offgrid_sbl::array_model::ArrayGeometry;
use offgrid_sbl::baselines::{dft_estimate, ongrid_sbl_estimate, overcomplete_dft_estimate};
use offgrid_sbl::channel_sim::{
    derive_seed, generate_channel, generate_pilots, ls_uplink_estimate, nmse, observe_downlink, observe_uplink,
    orthogonal_pilots, ChannelRealization, PilotMatrix,
};
use offgrid_sbl::joint_uplink::{estimate_uplink_aided, UplinkView};
use offgrid_sbl::offgrid_refine::{estimate_offgrid_2d, estimate_offgrid_linear, TraceRow};
use offgrid_sbl::sbl_core::{Hyperpriors, OffGridDictionary};
use offgrid_sbl::{CMatrix, CVector, Error as CoreError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::scenario::{snr_to_noise_var, Method, Scenario, SweepPoint};

/// Seed streams derived from the master seed per trial.
pub mod stream {
    pub const CHANNEL: u64 = 0;
    pub const PILOTS: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const UPLINK_CHANNEL: u64 = 3;
    pub const UPLINK_NOISE: u64 = 4;
    pub const ELEVATION: u64 = 5;
}

/// One CSV row: one method on one trial of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    pub n: usize,
    pub t: usize,
    pub snr_db: f64,
    pub grid_size: usize,
    pub trial: usize,
    /// Channel seed of the trial; identical for every method.
    pub seed: u64,
    pub nmse: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
    /// `|`-separated markers such as `converged` or `no_support`.
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub snr_db: f64,
    pub grid_size: usize,
    pub method: String,
    pub trials: usize,
    pub mean_nmse: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub methods: Vec<Method>,
    pub trials: usize,
    pub seed: u64,
    pub threads: usize,
    /// Record zero runtimes so the CSV is byte-stable.
    pub timing: bool,
}

impl BenchOptions {
    pub fn from_scenario(sc: &Scenario) -> Self {
        Self {
            methods: sc.run.methods.clone(),
            trials: sc.run.trials,
            seed: sc.run.seed,
            threads: 1,
            timing: true,
        }
    }
}

/// Everything a method sees in one trial.
#[derive(Debug, Clone)]
pub struct TrialInput {
    pub channel: ChannelRealization,
    pub pilots: PilotMatrix,
    pub y: CVector,
    pub uplink: Option<UplinkView>,
    pub channel_seed: u64,
    pub elevation_seed: u64,
}

/// Immutable per-sweep-point context shared by all trials.
pub struct PointContext<'a> {
    pub scenario: &'a Scenario,
    pub geometry: ArrayGeometry,
    pub point: SweepPoint,
    pub dictionary: OffGridDictionary,
    pub priors: Hyperpriors,
}

impl<'a> PointContext<'a> {
    pub fn new(scenario: &'a Scenario, geometry: &ArrayGeometry, point: SweepPoint) -> Result<Self> {
        Ok(Self {
            scenario,
            dictionary: scenario.dictionary(geometry, point.grid_size)?,
            geometry: geometry.clone(),
            point,
            priors: scenario.priors()?,
        })
    }

    /// Draws the trial's channel, pilots, noise and (optionally) uplink
    /// observation. The draws depend on `(master_seed, trial)` only, so every
    /// method and every sweep point reuses the same realization.
    pub fn trial_input(&self, master_seed: u64, trial: usize, with_uplink: bool) -> Result<TrialInput> {
        let sc = self.scenario;
        let tr = trial as u64;
        let wl = sc.downlink()?;
        let channel_seed = derive_seed(master_seed, tr, stream::CHANNEL);
        let channel = generate_channel(&sc.channel.config(), &self.geometry, wl, channel_seed)?;
        let pilots = generate_pilots(self.point.pilots, self.geometry.len(), 1.0, derive_seed(master_seed, tr, stream::PILOTS))?;
        let y = observe_downlink(&pilots, &channel.h, self.point.noise_var(), derive_seed(master_seed, tr, stream::NOISE))?;
        let uplink = if with_uplink {
            Some(self.uplink_view(&channel, master_seed, tr)?)
        } else {
            None
        };
        Ok(TrialInput {
            channel,
            pilots,
            y,
            uplink,
            channel_seed,
            elevation_seed: derive_seed(master_seed, tr, stream::ELEVATION),
        })
    }

    fn uplink_view(&self, channel: &ChannelRealization, master_seed: u64, trial: u64) -> Result<UplinkView> {
        let sc = self.scenario;
        let wl_u = sc.uplink_wavelength()?;
        let gain_var = sc.channel.config().gain_variance;
        let up = channel.reciprocal(
            &self.geometry,
            wl_u,
            gain_var,
            sc.uplink.angle_jitter_deg.to_radians(),
            derive_seed(master_seed, trial, stream::UPLINK_CHANNEL),
        );
        let snr = sc.uplink.snr_db.unwrap_or(self.point.snr_db);
        let s = orthogonal_pilots(1, sc.uplink.pilots)?;
        let h_bar = CMatrix::from_column_slice(up.h.len(), 1, up.h.as_slice());
        let obs = observe_uplink(&h_bar, &s, snr_to_noise_var(snr), derive_seed(master_seed, trial, stream::UPLINK_NOISE))?;
        let est = ls_uplink_estimate(&obs)?;
        Ok(UplinkView {
            h_bar: est.column(0).into_owned(),
            wavelength: wl_u,
        })
    }

    /// Runs one method and scores it against the true channel.
    pub fn run_method(&self, method: Method, input: &TrialInput) -> Result<MethodOutcome> {
        let y = &input.y;
        let x = &input.pilots.x;
        let cfg = self.scenario.refine_config();
        let dict = &self.dictionary;
        let result: std::result::Result<(CVector, usize, Vec<&'static str>, Vec<TraceRow>), CoreError> = match method {
            Method::Offgrid => {
                let est = if dict.is_planar() {
                    estimate_offgrid_2d(y, x, dict, &self.priors, &cfg, input.elevation_seed)
                } else {
                    estimate_offgrid_linear(y, x, dict, &self.priors, &cfg)
                };
                est.map(|e| (e.h, e.state.iteration, sbl_flags(e.converged, e.stalls), e.trace))
            }
            Method::Sbl => ongrid_sbl_estimate(y, x, dict, &self.priors, &cfg, input.elevation_seed)
                .map(|e| (e.h, e.state.iteration, sbl_flags(e.converged, e.stalls), e.trace)),
            Method::UplinkAided => {
                let up = input
                    .uplink
                    .as_ref()
                    .ok_or_else(|| BenchError::Usage("uplink observation was not generated".into()))?;
                estimate_uplink_aided(y, x, up, dict, &self.priors, &cfg)
                    .map(|e| (e.h, e.state.iteration, sbl_flags(e.converged, e.stalls), e.trace))
            }
            Method::Dft => dft_estimate(y, x, &self.scenario.l1_config(&self.point), self.scenario.l1_rule())
                .map(|h| (h, 0, Vec::new(), Vec::new())),
            Method::Odft => {
                overcomplete_dft_estimate(y, x, dict, &self.scenario.l1_config(&self.point), self.scenario.l1_rule())
                    .map(|h| (h, 0, Vec::new(), Vec::new()))
            }
        };
        let (h, iterations, flags, trace) = match result {
            Ok(r) => r,
            // Scored as the zero estimate so the trial still counts.
            Err(CoreError::NoActiveComponents) => (CVector::zeros(x.ncols()), 0, vec!["no_support"], Vec::new()),
            Err(CoreError::Numerical { .. }) => (CVector::zeros(x.ncols()), 0, vec!["numerical_failure"], Vec::new()),
            Err(e) => return Err(e.into()),
        };
        Ok(MethodOutcome {
            nmse: nmse(&h, &input.channel.h)?,
            h,
            iterations,
            flags: flags.join("|"),
            trace,
        })
    }
}

fn sbl_flags(converged: bool, stalls: usize) -> Vec<&'static str> {
    let mut f = vec![if converged { "converged" } else { "max_iters" }];
    if stalls > 0 {
        f.push("stalled");
    }
    f
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub h: CVector,
    pub nmse: f64,
    pub iterations: usize,
    pub flags: String,
    pub trace: Vec<TraceRow>,
}

/// Runs every (sweep point, trial) pair on a pool of `opts.threads`
/// workers. Records come back sorted by sweep point, then method order in
/// `opts.methods`, then trial.
pub fn run_benchmark(sc: &Scenario, opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    if opts.methods.is_empty() {
        return Err(BenchError::Usage("no methods selected".into()));
    }
    if opts.trials == 0 {
        return Err(BenchError::Usage("trials must be positive".into()));
    }
    if opts.methods.contains(&Method::UplinkAided) && !sc.array.is_linear() {
        return Err(BenchError::Usage("uplink_aided needs a ula array".into()));
    }
    let geometry = sc.geometry()?;
    let contexts = sc
        .sweep()
        .into_iter()
        .map(|p| PointContext::new(sc, &geometry, p))
        .collect::<Result<Vec<_>>>()?;
    let with_uplink = opts.methods.contains(&Method::UplinkAided);
    let jobs: Vec<(usize, usize)> = (0..contexts.len())
        .flat_map(|p| (0..opts.trials).map(move |t| (p, t)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| BenchError::Usage(format!("thread pool: {e}")))?;
    let per_job: Vec<Vec<(usize, usize, usize, BenchRecord)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, trial)| {
                let ctx = &contexts[p];
                let input = ctx.trial_input(opts.seed, trial, with_uplink)?;
                opts.methods
                    .iter()
                    .enumerate()
                    .map(|(mi, &m)| {
                        let start = Instant::now();
                        let out = ctx.run_method(m, &input)?;
                        let runtime_ms = if opts.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
                        Ok((
                            p,
                            mi,
                            trial,
                            BenchRecord {
                                method: m.name().to_string(),
                                n: geometry.len(),
                                t: ctx.point.pilots,
                                snr_db: ctx.point.snr_db,
                                grid_size: ctx.point.grid_size,
                                trial,
                                seed: input.channel_seed,
                                nmse: out.nmse,
                                iterations: out.iterations,
                                runtime_ms,
                                flags: out.flags,
                            },
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut keyed: Vec<_> = per_job.into_iter().flatten().collect();
    keyed.sort_by_key(|(p, m, t, _)| (*p, *m, *t));
    Ok(keyed.into_iter().map(|(_, _, _, r)| r).collect())
}

/// Mean NMSE per (sweep point, method), in first-appearance order.
pub fn summarize(records: &[BenchRecord]) -> Vec<SummaryRow> {
    let mut rows: Vec<(SummaryRow, f64)> = Vec::new();
    for r in records {
        let pos = rows.iter().position(|(s, _)| {
            s.t == r.t && s.snr_db == r.snr_db && s.grid_size == r.grid_size && s.method == r.method
        });
        match pos {
            Some(i) => {
                rows[i].0.trials += 1;
                rows[i].1 += r.nmse;
            }
            None => rows.push((
                SummaryRow {
                    t: r.t,
                    snr_db: r.snr_db,
                    grid_size: r.grid_size,
                    method: r.method.clone(),
                    trials: 1,
                    mean_nmse: 0.0,
                },
                r.nmse,
            )),
        }
    }
    rows.into_iter()
        .map(|(mut s, sum)| {
            s.mean_nmse = sum / s.trials as f64;
            s
        })
        .collect()
}

pub fn write_records<W: Write>(out: W, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::io("<csv output>", e))?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<Vec<BenchRecord>, _>>()?)
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:>5} {:>8} {:>6}  {:<13} {:>6}  {:>12}\n", "T", "SNR_dB", "grid", "method", "trials", "mean_NMSE");
    for r in rows {
        s.push_str(&format!(
            "{:>5} {:>8} {:>6}  {:<13} {:>6}  {:>12.4e}\n",
            r.t, r.snr_db, r.grid_size, r.method, r.trials, r.mean_nmse
        ));
    }
    s
}

/// One estimation at a chosen sweep point and trial, with its trace.
pub fn run_single(sc: &Scenario, method: Method, seed: u64, point: usize, trial: usize) -> Result<MethodOutcome> {
    let points = sc.sweep();
    let p = *points
        .get(point)
        .ok_or_else(|| BenchError::Usage(format!("sweep point {point} out of range (scenario has {})", points.len())))?;
    if method == Method::UplinkAided && !sc.array.is_linear() {
        return Err(BenchError::Usage("uplink_aided needs a ula array".into()));
    }
    let geometry = sc.geometry()?;
    let ctx = PointContext::new(sc, &geometry, p)?;
    let input = ctx.trial_input(seed, trial, method == Method::UplinkAided)?;
    ctx.run_method(method, &input)
}
