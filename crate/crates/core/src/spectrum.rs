//! Spectral containers and PSD conventions.
//!
//! Two conventions are supported. The internal one is the two-sided,
//! symmetrized density in angular frequency, normalized so that
//! `<z^2> = integral dOmega S(Omega)` over the full real line. The
//! single-sided density in ordinary frequency relates to it by
//! `S_ss(f) = 4 pi S_ts(2 pi f)` with `<z^2> = integral_0^inf df S_ss(f)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// PSD normalization convention tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralConvention {
    /// Two-sided, symmetrized, density per rad/s.
    TwoSidedAngular,
    /// Single-sided density per Hz.
    SingleSidedHertz,
}

/// A real-valued spectral density on a strictly increasing frequency grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spectrum {
    /// Frequencies, rad/s or Hz depending on `convention`.
    pub grid: Vec<f64>,
    /// Density values, >= 0.
    pub values: Vec<f64>,
    pub convention: SpectralConvention,
    /// Per-bin standard errors when the spectrum came from an ensemble
    /// average.
    pub stderr: Option<Vec<f64>>,
    /// Number of averaged realizations (1 for analytic curves).
    pub n_averages: usize,
    pub label: String,
}

impl Spectrum {
    pub fn new(
        grid: Vec<f64>,
        values: Vec<f64>,
        convention: SpectralConvention,
    ) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Mismatch(format!(
                "grid length {} != values length {}",
                grid.len(),
                values.len()
            )));
        }
        if grid.is_empty() {
            return Err(Error::InvalidParameter("empty spectrum".into()));
        }
        if !grid.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "grid must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "spectral values must be finite and nonnegative".into(),
            ));
        }
        Ok(Spectrum {
            grid,
            values,
            convention,
            stderr: None,
            n_averages: 1,
            label: String::new(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Trapezoid integral of the density over the tabulated grid.
    pub fn band_integral(&self) -> f64 {
        trapezoid(&self.grid, &self.values)
    }

    /// Total variance implied by the tabulated band.
    ///
    /// For the two-sided angular convention on a nonnegative grid the
    /// symmetric negative-frequency half is accounted for; grids that
    /// already span negative frequencies are integrated as-is.
    pub fn variance(&self) -> f64 {
        match self.convention {
            SpectralConvention::TwoSidedAngular => {
                if self.grid[0] >= 0.0 {
                    2.0 * self.band_integral()
                } else {
                    self.band_integral()
                }
            }
            SpectralConvention::SingleSidedHertz => self.band_integral(),
        }
    }
}

/// A complex cross-spectral density on a strictly increasing frequency grid.
#[derive(Debug, Clone)]
pub struct CrossSpectrum {
    pub grid: Vec<f64>,
    pub values: Vec<num_complex::Complex64>,
    pub convention: SpectralConvention,
    /// Per-bin standard error of the complex value (isotropic), if averaged.
    pub stderr: Option<Vec<f64>>,
    pub n_averages: usize,
    pub label: String,
}

impl CrossSpectrum {
    pub fn new(
        grid: Vec<f64>,
        values: Vec<num_complex::Complex64>,
        convention: SpectralConvention,
    ) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Mismatch(format!(
                "grid length {} != values length {}",
                grid.len(),
                values.len()
            )));
        }
        if grid.is_empty() {
            return Err(Error::InvalidParameter("empty cross spectrum".into()));
        }
        if !grid.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "grid must be strictly increasing".into(),
            ));
        }
        Ok(CrossSpectrum {
            grid,
            values,
            convention,
            stderr: None,
            n_averages: 1,
            label: String::new(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// A copy with every value rotated by `e^{-i phi}`.
    pub fn rotated(&self, phi: f64) -> CrossSpectrum {
        let rot = num_complex::Complex64::from_polar(1.0, -phi);
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= rot;
        }
        out
    }
}

/// Remap a spectrum between the two PSD conventions.
///
/// Converting back and forth is the identity and the integrated variance is
/// preserved. Conversion to the single-sided convention requires a
/// nonnegative grid (fold two-sided estimates first).
pub fn convert_convention(s: &Spectrum, to: SpectralConvention) -> Result<Spectrum> {
    use SpectralConvention::*;
    if s.convention == to {
        return Ok(s.clone());
    }
    let (grid, scale): (Vec<f64>, f64) = match (s.convention, to) {
        (TwoSidedAngular, SingleSidedHertz) => {
            if s.grid[0] < 0.0 {
                return Err(Error::InvalidParameter(
                    "cannot express a negative-frequency grid single-sided".into(),
                ));
            }
            (
                s.grid.iter().map(|w| w / (2.0 * std::f64::consts::PI)).collect(),
                4.0 * std::f64::consts::PI,
            )
        }
        (SingleSidedHertz, TwoSidedAngular) => (
            s.grid.iter().map(|f| f * 2.0 * std::f64::consts::PI).collect(),
            1.0 / (4.0 * std::f64::consts::PI),
        ),
        _ => unreachable!(),
    };
    let values = s.values.iter().map(|v| v * scale).collect();
    let mut out = Spectrum::new(grid, values, to)?;
    out.stderr = s
        .stderr
        .as_ref()
        .map(|e| e.iter().map(|v| v * scale).collect());
    out.n_averages = s.n_averages;
    out.label = s.label.clone();
    Ok(out)
}

/// Full width at half maximum of a single-peaked curve, by linear
/// interpolation of the half-power crossings. `None` when the peak is not
/// resolved inside the grid.
pub fn full_width_half_max(grid: &[f64], values: &[f64]) -> Option<f64> {
    if grid.len() != values.len() || grid.len() < 3 {
        return None;
    }
    let (k_peak, peak) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    let floor = values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let half = floor + 0.5 * (peak - floor);
    let cross = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev: Option<usize> = None;
        for k in range {
            if let Some(p) = prev {
                let (lo, hi) = (values[k].min(values[p]), values[k].max(values[p]));
                if lo <= half && half <= hi && values[k] != values[p] {
                    let t = (half - values[p]) / (values[k] - values[p]);
                    return Some(grid[p] + t * (grid[k] - grid[p]));
                }
            }
            prev = Some(k);
        }
        None
    };
    let left = cross(&mut (0..=k_peak).rev())?;
    let right = cross(&mut (k_peak..grid.len()))?;
    Some((right - left).abs())
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]))
        .sum()
}
