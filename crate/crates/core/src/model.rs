//! Analytic physics layer: susceptibilities, noise densities, rate
//! bookkeeping and closed-form occupation formulas.
//!
//! Fourier sign convention: analysis kernel `e^{+i Omega t}` (time dependence
//! `e^{-i Omega t}`), so a damped oscillator has susceptibility
//! `chi(Omega) = m^-1 / (Omega_z^2 - Omega^2 - i gamma Omega)` and a physical
//! delay by `tau` multiplies a signal's transform by `e^{+i Omega tau}`.
//! Every formula in the crate is written once under this convention.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, HBAR};

/// Mechanical oscillator parameters.
///
/// The zero-point amplitude is always derived from mass and frequency, never
/// stored independently.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OscillatorParams {
    /// Mass, kg.
    pub mass: f64,
    /// Mechanical angular frequency, rad/s.
    pub omega_z: f64,
    /// Residual damping at minimum feedback, rad/s.
    pub gamma_m: f64,
}

impl OscillatorParams {
    pub fn new(mass: f64, omega_z: f64, gamma_m: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter("mass must be > 0".into()));
        }
        if !(omega_z > 0.0) {
            return Err(Error::InvalidParameter("omega_z must be > 0".into()));
        }
        if !(gamma_m >= 0.0) || gamma_m >= omega_z {
            return Err(Error::InvalidParameter(
                "gamma_m must satisfy 0 <= gamma_m < omega_z".into(),
            ));
        }
        Ok(OscillatorParams {
            mass,
            omega_z,
            gamma_m,
        })
    }

    /// Zero-point fluctuation amplitude `sqrt(hbar / (2 m Omega_z))`, m.
    pub fn z_zpf(&self) -> f64 {
        (HBAR / (2.0 * self.mass * self.omega_z)).sqrt()
    }

    /// `z_zpf^2`, m^2.
    pub fn z_zpf_sq(&self) -> f64 {
        HBAR / (2.0 * self.mass * self.omega_z)
    }
}

/// Decoherence and measurement rate budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateBudget {
    /// Backaction decoherence rate, rad/s.
    pub gamma_qba: f64,
    /// Excess decoherence rate, rad/s.
    pub gamma_exc: f64,
    /// Detection efficiency, in [0, 1].
    pub eta_d: f64,
}

/// Quantum cooperativity; infinite when there is no excess decoherence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cooperativity {
    Finite(f64),
    Infinite,
}

/// Build a [`RateBudget`], validating the invariants.
pub fn rates_from_budget(gamma_qba: f64, gamma_exc: f64, eta_d: f64) -> Result<RateBudget> {
    if !(gamma_qba >= 0.0) || !(gamma_exc >= 0.0) {
        return Err(Error::InvalidParameter("rates must be nonnegative".into()));
    }
    if gamma_qba + gamma_exc <= 0.0 {
        return Err(Error::InvalidParameter(
            "total decoherence rate must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&eta_d) {
        return Err(Error::InvalidParameter("eta_d must lie in [0, 1]".into()));
    }
    Ok(RateBudget {
        gamma_qba,
        gamma_exc,
        eta_d,
    })
}

impl RateBudget {
    /// Total decoherence rate, rad/s.
    pub fn gamma_tot(&self) -> f64 {
        self.gamma_qba + self.gamma_exc
    }

    /// Measurement rate `eta_d * Gamma_qba`, rad/s.
    pub fn gamma_meas(&self) -> f64 {
        self.eta_d * self.gamma_qba
    }

    /// Measurement efficiency `Gamma_meas / Gamma_tot`.
    pub fn eta_meas(&self) -> f64 {
        self.gamma_meas() / self.gamma_tot()
    }

    /// Quantum cooperativity `Gamma_qba / Gamma_exc`.
    pub fn cooperativity(&self) -> Cooperativity {
        if self.gamma_exc == 0.0 {
            Cooperativity::Infinite
        } else {
            Cooperativity::Finite(self.gamma_qba / self.gamma_exc)
        }
    }

    /// A budget with the given measurement and total rates, using a unit
    /// detection efficiency split (`Gamma_qba = Gamma_meas`). Only
    /// `Gamma_meas` and `Gamma_tot` are observable downstream, so the split
    /// is free.
    pub fn from_meas_tot(gamma_meas: f64, gamma_tot: f64) -> Result<RateBudget> {
        if !(gamma_meas > 0.0) || gamma_tot < gamma_meas {
            return Err(Error::InvalidParameter(
                "need 0 < gamma_meas <= gamma_tot".into(),
            ));
        }
        rates_from_budget(gamma_meas, gamma_tot - gamma_meas, 1.0)
    }
}

/// Mechanical susceptibility `m^-1 / (Omega_z^2 - Omega^2 - i gamma Omega)`,
/// m/N.
///
/// Used with `gamma = gamma_m` for the bare oscillator and with an effective
/// linewidth for the feedback-broadened response.
pub fn susceptibility(omega: f64, params: &OscillatorParams, gamma: f64) -> Result<Complex64> {
    if gamma < 0.0 {
        return Err(Error::InvalidParameter("gamma must be >= 0".into()));
    }
    let denom = Complex64::new(
        params.omega_z * params.omega_z - omega * omega,
        -gamma * omega,
    );
    if denom.norm_sqr() == 0.0 {
        return Err(Error::Singularity { omega });
    }
    Ok(1.0 / (params.mass * denom))
}

/// `|chi(omega)|^2` with unit mass; the shape shared by every spectral fit.
pub fn lorentzian_shape(omega: f64, omega_z: f64, gamma: f64) -> f64 {
    let d = omega_z * omega_z - omega * omega;
    1.0 / (d * d + gamma * gamma * omega * omega)
}

/// Total force noise PSD `hbar^2 Gamma_tot / (2 pi z_zpf^2)`, N^2 s/rad.
pub fn force_psd_total(params: &OscillatorParams, budget: &RateBudget) -> f64 {
    HBAR * HBAR * budget.gamma_tot() / (2.0 * std::f64::consts::PI * params.z_zpf_sq())
}

/// Imprecision noise PSD `z_zpf^2 / (8 pi Gamma_meas)`, m^2 s/rad.
pub fn imprecision_psd(params: &OscillatorParams, budget: &RateBudget) -> Result<f64> {
    let gm = budget.gamma_meas();
    if !(gm > 0.0) {
        return Err(Error::InvalidParameter(
            "imprecision requires gamma_meas > 0".into(),
        ));
    }
    Ok(params.z_zpf_sq() / (8.0 * std::f64::consts::PI * gm))
}

/// Which motional sideband of the heterodyne record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sideband {
    /// Red-shifted, power proportional to `n + 1`.
    Stokes,
    /// Blue-shifted, power proportional to `n`.
    AntiStokes,
}

/// Scale factor of the sideband spectral models.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum ScaleR {
    /// `R = m gamma_eff hbar Omega_z / pi`, for synthetic-data generation in
    /// physical units.
    Physical,
    /// Free scale, as fitted from data.
    Fit(f64),
}

impl ScaleR {
    pub fn value(&self, params: &OscillatorParams, gamma_eff: f64) -> f64 {
        match self {
            ScaleR::Physical => {
                params.mass * gamma_eff * HBAR * params.omega_z / std::f64::consts::PI
            }
            ScaleR::Fit(r) => *r,
        }
    }
}

/// Heterodyne sideband PSD model:
/// `S_bg + R |chi_eff|^2 (n + 1)` (Stokes) or `S_bg + R |chi_eff|^2 n`
/// (anti-Stokes).
#[allow(clippy::too_many_arguments)]
pub fn heterodyne_sideband_psd(
    omega: f64,
    params: &OscillatorParams,
    gamma_eff: f64,
    n_bar: f64,
    scale_r: ScaleR,
    bg: f64,
    side: Sideband,
) -> f64 {
    let chi2 = scaled_shape(omega, params, gamma_eff, scale_r);
    let occ = match side {
        Sideband::Stokes => n_bar + 1.0,
        Sideband::AntiStokes => n_bar,
    };
    bg + chi2 * occ
}

/// `R |chi_eff(omega)|^2` with the mass handled per scale choice: the
/// physical scale pairs with the physical susceptibility, while a fitted
/// scale multiplies the unit-mass Lorentzian shape (the mass is absorbed
/// into the fit parameter).
fn scaled_shape(omega: f64, params: &OscillatorParams, gamma_eff: f64, scale_r: ScaleR) -> f64 {
    let shape = lorentzian_shape(omega, params.omega_z, gamma_eff);
    match scale_r {
        ScaleR::Physical => {
            scale_r.value(params, gamma_eff) * shape / (params.mass * params.mass)
        }
        ScaleR::Fit(r) => r * shape,
    }
}

/// Heterodyne cross-PSD model:
/// `R |chi_eff|^2 (n + 1/2 + i (Omega^2 - Omega_z^2) / (2 Omega_z gamma_eff))`.
pub fn heterodyne_cross_psd(
    omega: f64,
    params: &OscillatorParams,
    gamma_eff: f64,
    n_bar: f64,
    scale_r: ScaleR,
) -> Complex64 {
    let chi2 = scaled_shape(omega, params, gamma_eff, scale_r);
    let im = (omega * omega - params.omega_z * params.omega_z)
        / (2.0 * params.omega_z * gamma_eff);
    chi2 * Complex64::new(n_bar + 0.5, im)
}

/// Closed-form occupation under ideal cold damping at effective linewidth
/// `gamma_eff`:
/// `n = Gamma_tot / gamma_eff + gamma_eff / (16 Gamma_meas) - 1/2`.
pub fn cold_damping_occupation(gamma_eff: f64, budget: &RateBudget) -> Result<f64> {
    if !(gamma_eff > 0.0) {
        return Err(Error::InvalidParameter("gamma_eff must be > 0".into()));
    }
    Ok(budget.gamma_tot() / gamma_eff + gamma_eff / (16.0 * budget.gamma_meas()) - 0.5)
}

///// Gain minimizing [`cold_damping_occupation`]:
/// `gamma* = 4 sqrt(Gamma_tot Gamma_meas)`.
pub fn optimal_cold_damping_gain(budget: &RateBudget) -> f64 {
    4.0 * (budget.gamma_tot() * budget.gamma_meas()).sqrt()
}

/// Occupation of the conditional state, `(1/sqrt(eta_meas) - 1) / 2`.
///
/// Equals the minimum of [`cold_damping_occupation`] over the gain.
pub fn conditional_occupation(eta_meas: f64) -> Result<f64> {
    if !(eta_meas > 0.0 && eta_meas <= 1.0) {
        return Err(Error::InvalidParameter(
            "eta_meas must lie in (0, 1]".into(),
        ));
    }
    Ok(0.5 * (1.0 / eta_meas.sqrt() - 1.0))
}

/// Which thermometer produced an occupation estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermometryMethod {
    Asymmetry,
    AsymmetryDoubleLo,
    CrossCorrelation,
    InloopIntegral,
}

/// A phonon occupation estimate with its standard error.
///
/// Negative point estimates are reported with `below_zero` set rather than
/// clamped.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThermometryResult {
    pub n_bar: f64,
    pub sigma: f64,
    pub method: ThermometryMethod,
    pub below_zero: bool,
    /// Set when the estimator diverged (e.g. sideband ratio <= 1); `n_bar`
    /// is then not meaningful.
    pub diverged: bool,
}

impl ThermometryResult {
    pub fn new(n_bar: f64, sigma: f64, method: ThermometryMethod) -> Self {
        ThermometryResult {
            n_bar,
            sigma,
            method,
            below_zero: n_bar < 0.0,
            diverged: false,
        }
    }

    pub fn diverged(method: ThermometryMethod) -> Self {
        ThermometryResult {
            n_bar: f64::INFINITY,
            sigma: f64::INFINITY,
            method,
            below_zero: false,
            diverged: true,
        }
    }
}
