//! Feedback-electronics model: composable filter stages, the pure-delay
//! controller, closed-loop susceptibility and Nyquist stability analysis.
//!
//! Frequency responses follow the crate's Fourier convention (see
//! [`crate::model`]): a physical lag shows up as *positive* phase, a delay
//! stage contributes `e^{+i Omega tau}`, and continuous-time transfer
//! functions are evaluated at `s = -i Omega`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::{susceptibility, OscillatorParams};
use crate::{Error, Result};

/// One stage of the electronic feedback chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterStage {
    /// First-order high-pass, `s / (s + omega_c)`.
    HighPass { cutoff_hz: f64 },
    /// Continuous-time biquad notch,
    /// `(s^2 + w0^2) / (s^2 + w0 s / Q + w0^2)`.
    Notch { center_hz: f64, quality: f64 },
    /// Pure delay by `tau_s` seconds.
    Delay { tau_s: f64 },
    /// Frequency-independent gain.
    Gain { value: f64 },
}

impl FilterStage {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            FilterStage::HighPass { cutoff_hz } => *cutoff_hz > 0.0,
            FilterStage::Notch { center_hz, quality } => *center_hz > 0.0 && *quality > 0.0,
            FilterStage::Delay { tau_s } => *tau_s >= 0.0,
            FilterStage::Gain { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad filter stage {self:?}")))
        }
    }

    /// Continuous-time frequency response of the stage.
    pub fn response(&self, omega: f64) -> Complex64 {
        match *self {
            FilterStage::HighPass { cutoff_hz } => {
                let wc = 2.0 * std::f64::consts::PI * cutoff_hz;
                let s = Complex64::new(0.0, -omega);
                s / (s + wc)
            }
            FilterStage::Notch { center_hz, quality } => {
                let w0 = 2.0 * std::f64::consts::PI * center_hz;
                let s = Complex64::new(0.0, -omega);
                (s * s + w0 * w0) / (s * s + s * w0 / quality + w0 * w0)
            }
            FilterStage::Delay { tau_s } => Complex64::from_polar(1.0, omega * tau_s),
            FilterStage::Gain { value } => Complex64::new(value, 0.0),
        }
    }
}

/// An ordered chain of filter stages with a dimensionless overall gain.
///
/// The chain carries the *shape* of the loop filter; the feedback strength
/// `gamma_fb` is supplied where the loop is closed (see
/// [`feedback_transfer`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterChain {
    pub stages: Vec<FilterStage>,
    #[serde(default = "one")]
    pub overall_gain: f64,
}

fn one() -> f64 {
    1.0
}

impl FilterChain {
    pub fn new(stages: Vec<FilterStage>) -> Result<Self> {
        for s in &stages {
            s.validate()?;
        }
        Ok(FilterChain {
            stages,
            overall_gain: 1.0,
        })
    }

    /// The delay-only chain of Eq.-(12) type controllers.
    pub fn pure_delay(tau_s: f64) -> Self {
        FilterChain {
            stages: vec![FilterStage::Delay { tau_s }],
            overall_gain: 1.0,
        }
    }

    /// The experiment's filter: 9 kHz high-pass, notches at the transverse
    /// mechanical frequencies with Q = 5, and the smallest stable delay for
    /// the given oscillator.
    pub fn paper_chain(params: &OscillatorParams) -> Self {
        FilterChain {
            stages: vec![
                FilterStage::HighPass { cutoff_hz: 9e3 },
                FilterStage::Notch {
                    center_hz: 202e3,
                    quality: 5.0,
                },
                FilterStage::Notch {
                    center_hz: 249e3,
                    quality: 5.0,
                },
                FilterStage::Delay {
                    tau_s: smallest_stable_delay(params, 0),
                },
            ],
            overall_gain: 1.0,
        }
    }

    /// Sum of all delay stages, s.
    pub fn total_delay(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| match s {
                FilterStage::Delay { tau_s } => *tau_s,
                _ => 0.0,
            })
            .sum()
    }
}

/// Product of all stage responses times the overall gain.
pub fn chain_response(omega: f64, chain: &FilterChain) -> Complex64 {
    chain
        .stages
        .iter()
        .fold(Complex64::new(chain.overall_gain, 0.0), |acc, s| {
            acc * s.response(omega)
        })
}

/// Response of the chain realized as bilinear-transform discrete filters at
/// `sample_rate_hz` (delays rounded to whole samples). Reproduces the
/// aliased notch copies seen in sampled measurements.
pub fn chain_response_discrete(omega: f64, chain: &FilterChain, sample_rate_hz: f64) -> Complex64 {
    let dt = 1.0 / sample_rate_hz;
    // one-sample delay = e^{+i omega dt} in this convention
    let zinv = Complex64::from_polar(1.0, omega * dt);
    chain
        .stages
        .iter()
        .fold(Complex64::new(chain.overall_gain, 0.0), |acc, s| {
            let h = match s {
                FilterStage::Delay { tau_s } => {
                    let n = (tau_s / dt).round() as i32;
                    zinv.powi(n)
                }
                FilterStage::Gain { value } => Complex64::new(*value, 0.0),
                _ => {
                    let c = BiquadCoeffs::from_stage(s, sample_rate_hz);
                    let z2 = zinv * zinv;
                    (c.b0 + c.b1 * zinv + c.b2 * z2) / (1.0 + c.a1 * zinv + c.a2 * z2)
                }
            };
            acc * h
        })
}

/// Pure-delay controller transfer function,
/// `H_fb(Omega) = m Omega_z gamma_fb e^{i Omega tau}`.
pub fn delay_filter_response(
    omega: f64,
    params: &OscillatorParams,
    gamma_fb: f64,
    tau: f64,
) -> Complex64 {
    params.mass * params.omega_z * gamma_fb * Complex64::from_polar(1.0, omega * tau)
}

/// Full loop transfer function `m Omega_z gamma_fb` times the chain shape.
pub fn feedback_transfer(
    omega: f64,
    params: &OscillatorParams,
    gamma_fb: f64,
    chain: &FilterChain,
) -> Complex64 {
    params.mass * params.omega_z * gamma_fb * chain_response(omega, chain)
}

/// Smallest delay placing the loop in the damping quadrant:
/// `tau = (pi/2 + 2 pi n) / Omega_z`.
pub fn smallest_stable_delay(params: &OscillatorParams, n: u32) -> f64 {
    (std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * n as f64) / params.omega_z
}

/// Closed-loop susceptibility `chi_fb = 1 / (chi_m^-1 - H_fb)`.
pub fn closed_loop_susceptibility(
    omega: f64,
    params: &OscillatorParams,
    h_fb: Complex64,
) -> Result<Complex64> {
    let chi_m = susceptibility(omega, params, params.gamma_m)?;
    let denom = 1.0 / chi_m - h_fb;
    if denom.norm() == 0.0 {
        return Err(Error::Singularity { omega });
    }
    Ok(1.0 / denom)
}

/// Verdict of the Nyquist stability check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    /// Minimum distance of the open-loop locus from the critical point +1.
    pub margin: f64,
    /// Net encirclements of +1 by the closed contour.
    pub encirclements: i32,
}

/// Nyquist criterion on the open-loop response `L = chi_m H_fb`.
///
/// With the sign convention `chi_fb^-1 = chi_m^-1 (1 - L)` and a stable bare
/// oscillator, the loop is stable iff the locus of `L` (closed with its
/// mirror image) does not encircle +1.
///
/// The grid must span at least `[Omega_z/100, 10 Omega_z]` with >= 10^4
/// points; too-coarse grids (adjacent phase steps of `L - 1` above pi/2)
/// are rejected.
pub fn stability_check(
    params: &OscillatorParams,
    chain: &FilterChain,
    gamma_fb: f64,
    grid: &[f64],
) -> Result<StabilityReport> {
    if grid.len() < 10_000 {
        return Err(Error::Resolution(format!(
            "stability grid needs >= 10^4 points, got {}",
            grid.len()
        )));
    }
    let (lo, hi) = (grid[0], *grid.last().unwrap());
    if lo > params.omega_z / 100.0 || hi < 10.0 * params.omega_z {
        return Err(Error::Resolution(
            "stability grid must span [omega_z/100, 10 omega_z]".into(),
        ));
    }

    let locus: Vec<Complex64> = grid
        .iter()
        .map(|&w| {
            let chi = susceptibility(w, params, params.gamma_m)?;
            Ok(chi * feedback_transfer(w, params, gamma_fb, chain))
        })
        .collect::<Result<_>>()?;

    // Closed contour: conjugate branch (negative frequencies, reversed),
    // then the positive branch. L -> 0 at both ends of a sufficiently wide
    // grid, so the closure segments are short.
    let critical = Complex64::new(1.0, 0.0);
    let mut winding = 0.0_f64;
    let mut prev_arg: Option<f64> = None;
    let mut margin = f64::INFINITY;
    let full = locus
        .iter()
        .rev()
        .map(|l| l.conj())
        .chain(locus.iter().copied());
    for l in full {
        let v = l - critical;
        margin = margin.min(v.norm());
        let arg = v.arg();
        if let Some(p) = prev_arg {
            let mut d = arg - p;
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            if d.abs() > std::f64::consts::FRAC_PI_2 {
                return Err(Error::Resolution(
                    "stability grid too sparse: phase step > pi/2".into(),
                ));
            }
            winding += d;
        }
        prev_arg = Some(arg);
    }
    // close the contour back to the start
    let first = locus.last().unwrap().conj() - critical;
    let last = locus.last().unwrap() - critical;
    let mut d = first.arg() - last.arg();
    while d > std::f64::consts::PI {
        d -= 2.0 * std::f64::consts::PI;
    }
    while d < -std::f64::consts::PI {
        d += 2.0 * std::f64::consts::PI;
    }
    winding += d;

    let encirclements = (winding / (2.0 * std::f64::consts::PI)).round() as i32;
    Ok(StabilityReport {
        stable: encirclements == 0,
        margin,
        encirclements,
    })
}

/// Default stability grid for [`stability_check`].
pub fn default_stability_grid(params: &OscillatorParams) -> Vec<f64> {
    let lo = params.omega_z / 120.0;
    let hi = 11.0 * params.omega_z;
    let n = 60_000;
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Tabulated complex frequency response, interpolated linearly in
/// log-magnitude and unwrapped phase.
#[derive(Debug, Clone)]
pub struct FrequencyResponse {
    grid: Vec<f64>,
    log_mag: Vec<f64>,
    phase: Vec<f64>,
}

impl FrequencyResponse {
    pub fn new(grid: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if grid.len() != values.len() || grid.len() < 2 {
            return Err(Error::Mismatch(
                "frequency response needs matching grid/values with >= 2 nodes".into(),
            ));
        }
        if !grid.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(
                "response grid must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| v.norm() == 0.0) {
            return Err(Error::InvalidParameter(
                "response magnitude must be nonzero for log interpolation".into(),
            ));
        }
        let log_mag = values.iter().map(|v| v.norm().ln()).collect();
        let mut phase: Vec<f64> = values.iter().map(|v| v.arg()).collect();
        // unwrap
        for k in 1..phase.len() {
            let mut d = phase[k] - phase[k - 1];
            while d > std::f64::consts::PI {
                d -= 2.0 * std::f64::consts::PI;
            }
            while d < -std::f64::consts::PI {
                d += 2.0 * std::f64::consts::PI;
            }
            phase[k] = phase[k - 1] + d;
        }
        Ok(FrequencyResponse {
            grid,
            log_mag,
            phase,
        })
    }

    /// Tabulate an analytic chain on a grid.
    pub fn tabulate(grid: Vec<f64>, chain: &FilterChain) -> Result<Self> {
        let values = grid.iter().map(|&w| chain_response(w, chain)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn min_freq(&self) -> f64 {
        self.grid[0]
    }

    pub fn max_freq(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Interpolated response; queries must stay inside the tabulated range.
    pub fn eval(&self, omega: f64) -> Result<Complex64> {
        if omega < self.grid[0] || omega > *self.grid.last().unwrap() {
            return Err(Error::Resolution(format!(
                "query {omega} rad/s outside tabulated range [{}, {}]",
                self.grid[0],
                self.grid.last().unwrap()
            )));
        }
        let k = match self
            .grid
            .binary_search_by(|g| g.partial_cmp(&omega).unwrap())
        {
            Ok(k) => return Ok(Complex64::from_polar(self.log_mag[k].exp(), self.phase[k])),
            Err(k) => k.max(1).min(self.grid.len() - 1),
        };
        let t = (omega - self.grid[k - 1]) / (self.grid[k] - self.grid[k - 1]);
        let lm = self.log_mag[k - 1] + t * (self.log_mag[k] - self.log_mag[k - 1]);
        let ph = self.phase[k - 1] + t * (self.phase[k] - self.phase[k - 1]);
        Ok(Complex64::from_polar(lm.exp(), ph))
    }
}

/// Discrete biquad coefficients from a bilinear transform of a stage.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BiquadCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadCoeffs {
    pub fn from_stage(stage: &FilterStage, sample_rate_hz: f64) -> Self {
        let k = 2.0 * sample_rate_hz;
        match *stage {
            FilterStage::HighPass { cutoff_hz } => {
                // H(s) = s / (s + wc), bilinear s = k (1 - z^-1)/(1 + z^-1)
                let wc = 2.0 * std::f64::consts::PI * cutoff_hz;
                let a0 = k + wc;
                BiquadCoeffs {
                    b0: k / a0,
                    b1: -k / a0,
                    b2: 0.0,
                    a1: (wc - k) / a0,
                    a2: 0.0,
                }
            }
            FilterStage::Notch { center_hz, quality } => {
                // prewarped so the notch lands exactly on center_hz
                let w0 = 2.0 * std::f64::consts::PI * center_hz;
                let w0p = k * (w0 / k).tan();
                let a0 = k * k + w0p * k / quality + w0p * w0p;
                BiquadCoeffs {
                    b0: (k * k + w0p * w0p) / a0,
                    b1: (2.0 * w0p * w0p - 2.0 * k * k) / a0,
                    b2: (k * k + w0p * w0p) / a0,
                    a1: (2.0 * w0p * w0p - 2.0 * k * k) / a0,
                    a2: (k * k - w0p * k / quality + w0p * w0p) / a0,
                }
            }
            _ => BiquadCoeffs {
                b0: 1.0,
                b1: 0.0,
                b2: 0.0,
                a1: 0.0,
                a2: 0.0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{optimal_cold_damping_gain, RateBudget};
    use crate::spectrum::full_width_half_max;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn osc() -> OscillatorParams {
        OscillatorParams::new(1e-18, 2.0 * PI * 77.6e3, 2.0 * PI * 21.9).unwrap()
    }

    #[test]
    fn delay_filter_limits() {
        let p = osc();
        let gfb = 2.0 * PI * 1e3;
        let tau = smallest_stable_delay(&p, 0);
        let dc = delay_filter_response(0.0, &p, gfb, tau);
        assert_relative_eq!(dc.re, p.mass * p.omega_z * gfb, max_relative = 1e-12);
        assert_relative_eq!(dc.im, 0.0);
        // omega tau = pi/2: purely imaginary, same magnitude
        let w = 0.5 * PI / tau;
        let v = delay_filter_response(w, &p, gfb, tau);
        assert!(v.re.abs() < 1e-10 * v.norm());
        assert_relative_eq!(v.norm(), p.mass * p.omega_z * gfb, max_relative = 1e-12);
    }

    #[test]
    fn high_pass_magnitude_at_cutoff() {
        let s = FilterStage::HighPass { cutoff_hz: 9e3 };
        let v = s.response(2.0 * PI * 9e3);
        assert_relative_eq!(v.norm(), 1.0 / 2.0_f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn notch_kills_its_center() {
        let s = FilterStage::Notch {
            center_hz: 202e3,
            quality: 5.0,
        };
        assert!(s.response(2.0 * PI * 202e3).norm() < 1e-12);
    }

    #[test]
    fn paper_chain_is_viscous_at_resonance() {
        // The chain realizes -z_dot/omega at the mechanical frequency: the
        // response there is within 0.1 rad of +pi/2 (a quarter-period lag;
        // lags carry positive phase in this convention).
        let p = osc();
        let chain = FilterChain::paper_chain(&p);
        let v = chain_response(p.omega_z, &chain);
        let phase_err = (v.arg() - std::f64::consts::FRAC_PI_2).abs();
        assert!(phase_err < 0.1, "phase error {phase_err}");
    }

    #[test]
    fn delay_only_chain_has_unit_magnitude() {
        let chain = FilterChain::pure_delay(3.222e-6);
        for k in 0..100 {
            let w = 2.0 * PI * 1e3 * (k as f64 + 0.5);
            let v = chain_response(w, &chain);
            let expect = Complex64::from_polar(1.0, w * 3.222e-6);
            assert_relative_eq!(v.norm(), 1.0, max_relative = 1e-12);
            assert_relative_eq!(v.re, expect.re, epsilon = 1e-12);
            assert_relative_eq!(v.im, expect.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn smallest_delay_values() {
        let p = osc();
        assert_relative_eq!(smallest_stable_delay(&p, 0), 3.222e-6, max_relative = 1e-3);
        assert_relative_eq!(smallest_stable_delay(&p, 1), 16.11e-6, max_relative = 1e-3);
        for n in 0..5 {
            let phase = (p.omega_z * smallest_stable_delay(&p, n)).rem_euclid(2.0 * PI);
            assert_relative_eq!(phase, PI / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn closed_loop_reduces_to_bare_without_feedback() {
        let p = osc();
        for k in 1..50 {
            let w = p.omega_z * 0.05 * k as f64;
            let chi_fb = closed_loop_susceptibility(w, &p, Complex64::new(0.0, 0.0)).unwrap();
            let chi_m = susceptibility(w, &p, p.gamma_m).unwrap();
            assert_relative_eq!(chi_fb.re, chi_m.re, max_relative = 1e-14);
            assert_relative_eq!(chi_fb.im, chi_m.im, max_relative = 1e-14);
        }
    }

    #[test]
    fn delay_loop_matches_broadened_lorentzian() {
        let p = osc();
        let gfb = p.omega_z * 0.01;
        let tau = smallest_stable_delay(&p, 0);
        let w = p.omega_z;
        let h = delay_filter_response(w, &p, gfb, tau);
        let chi_fb = closed_loop_susceptibility(w, &p, h).unwrap();
        let chi_broad = susceptibility(w, &p, p.gamma_m + gfb).unwrap();
        assert_relative_eq!(chi_fb.norm(), chi_broad.norm(), max_relative = 1e-2);
    }

    #[test]
    fn fitted_width_is_linear_in_gain() {
        let p = osc();
        let tau = smallest_stable_delay(&p, 0);
        let gains: Vec<f64> = (0..8)
            .map(|k| p.omega_z * 1e-4 * 10f64.powf(k as f64 / 7.0))
            .collect();
        let mut widths = Vec::new();
        for &gfb in &gains {
            let geff = p.gamma_m + gfb;
            let grid: Vec<f64> = (0..40_000)
                .map(|j| p.omega_z - 8.0 * geff + 16.0 * geff * j as f64 / 39_999.0)
                .collect();
            let vals: Vec<f64> = grid
                .iter()
                .map(|&w| {
                    let h = delay_filter_response(w, &p, gfb, tau);
                    closed_loop_susceptibility(w, &p, h).unwrap().norm_sqr()
                })
                .collect();
            widths.push(full_width_half_max(&grid, &vals).unwrap());
        }
        // least-squares slope of width vs gain
        let n = gains.len() as f64;
        let sx: f64 = gains.iter().sum();
        let sy: f64 = widths.iter().sum();
        let sxx: f64 = gains.iter().map(|g| g * g).sum();
        let sxy: f64 = gains.iter().zip(&widths).map(|(g, w)| g * w).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope - 1.0).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn zero_gain_is_stable_with_unit_margin() {
        let p = osc();
        let chain = FilterChain::paper_chain(&p);
        let grid = default_stability_grid(&p);
        let rep = stability_check(&p, &chain, 0.0, &grid).unwrap();
        assert!(rep.stable);
        assert_relative_eq!(rep.margin, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn paper_chain_stable_at_optimal_gain() {
        let p = osc();
        let b = RateBudget::from_meas_tot(2.0 * PI * 1.33e3, 2.0 * PI * 5.5e3).unwrap();
        let chain = FilterChain::paper_chain(&p);
        let grid = default_stability_grid(&p);
        let rep = stability_check(&p, &chain, optimal_cold_damping_gain(&b), &grid).unwrap();
        assert!(rep.stable);
    }

    #[test]
    fn wrong_delay_quadrant_is_unstable() {
        let p = osc();
        let b = RateBudget::from_meas_tot(2.0 * PI * 1.33e3, 2.0 * PI * 5.5e3).unwrap();
        let tau_bad = 3.0 * PI / (2.0 * p.omega_z);
        let chain = FilterChain::pure_delay(tau_bad);
        let grid = default_stability_grid(&p);
        let rep = stability_check(&p, &chain, optimal_cold_damping_gain(&b), &grid).unwrap();
        assert!(!rep.stable);
    }

    #[test]
    fn sparse_grid_is_rejected() {
        let p = osc();
        let chain = FilterChain::paper_chain(&p);
        let grid: Vec<f64> = (0..5000)
            .map(|k| p.omega_z / 120.0 + 11.0 * p.omega_z * k as f64 / 4999.0)
            .collect();
        assert!(matches!(
            stability_check(&p, &chain, 1.0, &grid),
            Err(Error::Resolution(_))
        ));
    }

    #[test]
    fn response_interpolation_hits_nodes() {
        let grid: Vec<f64> = (1..200).map(|k| k as f64 * 1e3).collect();
        let vals: Vec<Complex64> = grid
            .iter()
            .map(|&w| Complex64::from_polar(1.0 / (1.0 + w * 1e-4), w * 1e-5))
            .collect();
        let fr = FrequencyResponse::new(grid.clone(), vals.clone()).unwrap();
        for (g, v) in grid.iter().zip(vals.iter()) {
            let e = fr.eval(*g).unwrap();
            assert_relative_eq!(e.re, v.re, max_relative = 1e-12);
            assert_relative_eq!(e.im, v.im, max_relative = 1e-12);
        }
        assert!(fr.eval(0.5e3).is_err());
    }

    #[test]
    fn discrete_chain_shows_aliased_notches() {
        let p = osc();
        let chain = FilterChain::paper_chain(&p);
        let fs = 977e3;
        // alias of the 202 kHz notch near 775 kHz
        let alias = 2.0 * PI * (fs - 202e3);
        let v = chain_response_discrete(alias, &chain, fs);
        assert!(v.norm() < 0.05, "alias magnitude {}", v.norm());
        // continuous chain has no such dip
        let c = chain_response(alias, &chain);
        assert!(c.norm() > 0.5);
    }
}
