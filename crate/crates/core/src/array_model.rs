//! Planar array geometry, steering vectors and the DFT basis.
//!
//! Sensor `n` sits at polar coordinates `(d_n, φ_n)` in the array plane with
//! sensor 1 at the origin. For a plane wave from azimuth `θ` and elevation
//! `φ` the response of sensor `n` is
//!
//! ```text
//! a_n(θ, φ) = exp(−j 2π (d_n / λ) cos(φ) sin(θ − φ_n))
//! ```
//!
//! Angles are radians throughout.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::linalg::{CMatrix, CVector};
use crate::{Error, Result};

/// One sensor position in polar coordinates (metres, radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor {
    pub radius: f64,
    pub angle: f64,
}

/// Sensor layout of a planar array. The first sensor is the phase origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    sensors: Vec<Sensor>,
}

impl ArrayGeometry {
    /// Builds a geometry from `(d_n, φ_n)` pairs.
    pub fn new(sensors: Vec<(f64, f64)>) -> Result<Self> {
        if sensors.len() < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 sensors, got {}",
                sensors.len()
            )));
        }
        if sensors[0].0 != 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "first sensor must sit at the origin (d_1 = 0), got d_1 = {}",
                sensors[0].0
            )));
        }
        for (i, &(d, phi)) in sensors.iter().enumerate() {
            if !d.is_finite() || !phi.is_finite() || d < 0.0 {
                return Err(Error::InvalidGeometry(format!(
                    "sensor {} has invalid coordinates ({d}, {phi})",
                    i + 1
                )));
            }
        }
        Ok(Self {
            sensors: sensors
                .into_iter()
                .map(|(radius, angle)| Sensor { radius, angle })
                .collect(),
        })
    }

    /// Uniform linear array along the reference axis (`φ_n = 0`), so that
    /// `sin(θ − φ_n) = sin θ` and the linear steering form applies.
    pub fn ula(n: usize, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        Self::new((0..n).map(|i| (i as f64 * spacing, 0.0)).collect())
    }

    /// Builds a geometry from Cartesian `(x, y)` positions, shifting the
    /// first point to the origin.
    pub fn from_cartesian(points: &[(f64, f64)]) -> Result<Self> {
        let Some(&(x0, y0)) = points.first() else {
            return Err(Error::InvalidGeometry("empty sensor list".into()));
        };
        Self::new(
            points
                .iter()
                .map(|&(x, y)| {
                    let (dx, dy) = (x - x0, y - y0);
                    let r = dx.hypot(dy);
                    if r == 0.0 {
                        (0.0, 0.0)
                    } else {
                        (r, dy.atan2(dx))
                    }
                })
                .collect(),
        )
    }

    /// `nx × ny` rectangular planar array with equal spacing on both axes.
    pub fn uniform_rectangular(nx: usize, ny: usize, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive, got {spacing}"
            )));
        }
        let mut pts = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                pts.push((ix as f64 * spacing, iy as f64 * spacing));
            }
        }
        Self::from_cartesian(&pts)
    }

    /// `n`-element uniform circular array of the given radius.
    pub fn uniform_circular(n: usize, radius: f64) -> Result<Self> {
        let pts: Vec<_> = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                (radius * a.cos(), radius * a.sin())
            })
            .collect();
        Self::from_cartesian(&pts)
    }

    /// Parses the text format: one sensor per line, `d_n phi_n` in metres
    /// and radians. Blank lines and `#` comments are skipped. The first
    /// sensor line must be `0 0`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sensors = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::InvalidGeometry(format!(
                    "line {}: expected `d_n phi_n`, got {:?}",
                    lineno + 1,
                    raw
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| {
                    Error::InvalidGeometry(format!("line {}: {e}: {s:?}", lineno + 1))
                })
            };
            let (d, phi) = (parse(fields[0])?, parse(fields[1])?);
            if sensors.is_empty() && (d != 0.0 || phi != 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "line {}: first sensor must be `0 0`",
                    lineno + 1
                )));
            }
            sensors.push((d, phi));
        }
        Self::new(sensors)
    }

    /// Inverse of [`ArrayGeometry::parse`].
    pub fn to_text(&self) -> String {
        self.sensors
            .iter()
            .map(|s| format!("{} {}\n", s.radius, s.angle))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    /// Cartesian positions of all sensors.
    pub fn cartesian(&self) -> Vec<(f64, f64)> {
        self.sensors
            .iter()
            .map(|s| (s.radius * s.angle.cos(), s.radius * s.angle.sin()))
            .collect()
    }
}

/// Carrier wavelength in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wavelength(f64);

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

impl Wavelength {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda > 0.0 && lambda.is_finite() {
            Ok(Self(lambda))
        } else {
            Err(Error::InvalidConfig(format!(
                "wavelength must be positive, got {lambda}"
            )))
        }
    }

    pub fn from_frequency(hz: f64) -> Result<Self> {
        Self::new(SPEED_OF_LIGHT / hz)
    }

    pub fn meters(self) -> f64 {
        self.0
    }
}

/// Per-entry unit-modulus array response with leading entry `1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector(CVector);

impl SteeringVector {
    pub fn as_vector(&self) -> &CVector {
        &self.0
    }

    pub fn into_inner(self) -> CVector {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for SteeringVector {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

#[inline]
fn phase_rate(s: &Sensor, wl: Wavelength) -> f64 {
    2.0 * PI * s.radius / wl.0
}

/// Steering vector `a(θ, φ)` of an arbitrary planar array.
pub fn steering_2d(geom: &ArrayGeometry, theta: f64, phi: f64, wl: Wavelength) -> SteeringVector {
    let c = phi.cos();
    SteeringVector(CVector::from_iterator(
        geom.len(),
        geom.sensors
            .iter()
            .map(|s| Complex64::from_polar(1.0, -phase_rate(s, wl) * c * (theta - s.angle).sin())),
    ))
}

/// Steering vector `a(θ)` of a linear array: `exp(−j 2π (d_n/λ) sin θ)`.
pub fn steering_linear(geom: &ArrayGeometry, theta: f64, wl: Wavelength) -> SteeringVector {
    let st = theta.sin();
    SteeringVector(CVector::from_iterator(
        geom.len(),
        geom.sensors
            .iter()
            .map(|s| Complex64::from_polar(1.0, -phase_rate(s, wl) * st)),
    ))
}

/// `∂a(θ, φ)/∂θ`.
pub fn steering_deriv_theta(geom: &ArrayGeometry, theta: f64, phi: f64, wl: Wavelength) -> CVector {
    let c = phi.cos();
    CVector::from_iterator(
        geom.len(),
        geom.sensors.iter().map(|s| {
            let k = phase_rate(s, wl) * c;
            let a = Complex64::from_polar(1.0, -k * (theta - s.angle).sin());
            Complex64::new(0.0, -k * (theta - s.angle).cos()) * a
        }),
    )
}

/// `∂a(θ, φ)/∂φ`.
pub fn steering_deriv_phi(geom: &ArrayGeometry, theta: f64, phi: f64, wl: Wavelength) -> CVector {
    let (sp, cp) = phi.sin_cos();
    CVector::from_iterator(
        geom.len(),
        geom.sensors.iter().map(|s| {
            let k = phase_rate(s, wl);
            let st = (theta - s.angle).sin();
            let a = Complex64::from_polar(1.0, -k * cp * st);
            Complex64::new(0.0, k * sp * st) * a
        }),
    )
}

/// Normalised DFT atom `f(x) = N^{-1/2} [1, e^{−j2πx}, …, e^{−j2πx(N−1)}]ᵀ`.
pub fn dft_atom(n: usize, x: f64) -> CVector {
    let scale = 1.0 / (n as f64).sqrt();
    CVector::from_iterator(
        n,
        (0..n).map(|i| Complex64::from_polar(scale, -2.0 * PI * x * i as f64)),
    )
}

/// Unitary DFT basis whose column `n` (1-based) is `f(−1/2 + (n−1)/N)`.
pub fn dft_basis(n: usize) -> Result<CMatrix> {
    if n < 1 {
        return Err(Error::InvalidConfig("DFT size must be at least 1".into()));
    }
    let mut f = CMatrix::zeros(n, n);
    for col in 0..n {
        let x = -0.5 + col as f64 / n as f64;
        f.set_column(col, &dft_atom(n, x));
    }
    Ok(f)
}

/// Modulus of the `n`-th (1-based) DFT coefficient of a ULA steering vector
/// at azimuth `theta`, i.e. `|[Fᴴ a(θ)]_n|`.
pub fn leakage_coefficient(n: usize, theta: f64, num_antennas: usize, d_over_lambda: f64) -> Result<f64> {
    if n < 1 || n > num_antennas {
        return Err(Error::InvalidConfig(format!(
            "bin index {n} outside [1, {num_antennas}]"
        )));
    }
    let nf = num_antennas as f64;
    let rho = (n as f64 - 1.0) / nf - 0.5 - d_over_lambda * theta.sin();
    // |v_n| has period 1 in rho; reducing keeps sin(pi rho) away from sin(pi k).
    let rho = rho - rho.round();
    if rho.abs() < 1e-12 {
        return Ok(nf.sqrt());
    }
    Ok(((PI * rho * nf).sin() / (PI * rho).sin()).abs() / nf.sqrt())
}

/// Azimuth of DFT bin `n` (1-based) for a ULA, if it exists:
/// `(d/λ) sin θ̂_n = −1/2 + (n−1)/N`.
pub fn dft_bin_angle(n: usize, num_antennas: usize, d_over_lambda: f64) -> Option<f64> {
    let x = -0.5 + (n as f64 - 1.0) / num_antennas as f64;
    let s = x / d_over_lambda;
    (s.abs() <= 1.0).then(|| s.asin())
}
