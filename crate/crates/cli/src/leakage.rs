//! DFT energy-leakage profiles of a single ULA path.

use std::io::Write;

use offgrid_sbl::array_model::leakage_coefficient;
use serde::Serialize;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone)]
pub struct LeakageRequest {
    pub antennas: usize,
    pub d_over_lambda: f64,
    /// Path azimuth in degrees.
    pub theta_deg: f64,
    /// Bins to emit (1-based); every bin when empty.
    pub bins: Vec<usize>,
    /// Azimuth sweep in degrees, inclusive.
    pub sweep_from_deg: f64,
    pub sweep_to_deg: f64,
    pub sweep_points: usize,
}

impl LeakageRequest {
    /// Sweep of ±10° around the path with 0.1° resolution, all bins.
    pub fn around(antennas: usize, d_over_lambda: f64, theta_deg: f64) -> Self {
        Self {
            antennas,
            d_over_lambda,
            theta_deg,
            bins: Vec::new(),
            sweep_from_deg: theta_deg - 10.0,
            sweep_to_deg: theta_deg + 10.0,
            sweep_points: 201,
        }
    }

    fn bins(&self) -> Vec<usize> {
        if self.bins.is_empty() {
            (1..=self.antennas).collect()
        } else {
            self.bins.clone()
        }
    }

    pub fn sweep(&self) -> Vec<f64> {
        let k = self.sweep_points;
        if k == 1 {
            return vec![self.sweep_from_deg];
        }
        (0..k)
            .map(|i| self.sweep_from_deg + (self.sweep_to_deg - self.sweep_from_deg) * i as f64 / (k - 1) as f64)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(BenchError::Usage("leakage needs at least one antenna".into()));
        }
        if self.sweep_points == 0 {
            return Err(BenchError::Usage("leakage sweep needs at least one point".into()));
        }
        if let Some(b) = self.bins.iter().find(|&&b| b == 0 || b > self.antennas) {
            return Err(BenchError::Usage(format!("bin {b} outside [1, {}]", self.antennas)));
        }
        if !(self.d_over_lambda > 0.0) {
            return Err(BenchError::Usage("d/lambda must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeakageRow {
    /// 1-based DFT bin.
    pub bin: usize,
    pub theta_deg: f64,
    pub magnitude: f64,
}

/// `|v_n(θ)|` for every requested bin over the sweep, bin-major.
pub fn run_leakage(req: &LeakageRequest) -> Result<Vec<LeakageRow>> {
    req.validate()?;
    let sweep = req.sweep();
    let mut rows = Vec::with_capacity(sweep.len() * req.bins().len());
    for bin in req.bins() {
        for &theta_deg in &sweep {
            let magnitude = leakage_coefficient(bin, theta_deg.to_radians(), req.antennas, req.d_over_lambda)?;
            rows.push(LeakageRow { bin, theta_deg, magnitude });
        }
    }
    Ok(rows)
}

/// Bin magnitudes at the path azimuth itself, strongest first.
pub fn ranked_bins(req: &LeakageRequest) -> Result<Vec<(usize, f64)>> {
    req.validate()?;
    let mut v = (1..=req.antennas)
        .map(|b| Ok((b, leakage_coefficient(b, req.theta_deg.to_radians(), req.antennas, req.d_over_lambda)?)))
        .collect::<Result<Vec<_>>>()?;
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(v)
}

pub fn write_leakage<W: Write>(out: W, rows: &[LeakageRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| BenchError::io("<csv output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_count_is_bins_times_sweep() {
        let mut req = LeakageRequest::around(16, 0.5, 3.0);
        req.sweep_points = 7;
        assert_eq!(run_leakage(&req).unwrap().len(), 16 * 7);
        req.bins = vec![2, 5];
        assert_eq!(run_leakage(&req).unwrap().len(), 2 * 7);
    }

    #[test]
    fn sweep_endpoints_are_inclusive() {
        let req = LeakageRequest::around(8, 0.5, 5.0);
        let s = req.sweep();
        assert_eq!(s.len(), 201);
        assert!((s[0] + 5.0).abs() < 1e-12 && (s[200] - 15.0).abs() < 1e-12);
        assert!((s[1] - s[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_requests() {
        let mut req = LeakageRequest::around(8, 0.5, 0.0);
        req.bins = vec![9];
        assert!(run_leakage(&req).is_err());
        req.bins.clear();
        req.sweep_points = 0;
        assert!(run_leakage(&req).is_err());
    }
}
