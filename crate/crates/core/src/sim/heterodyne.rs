//! Frequency-domain synthesis of correlated heterodyne sideband records.
//!
//! The two demodulated complex photocurrent envelopes are generated block by
//! block from their model spectra. Per mechanical frequency `Omega` the pair
//! `x = (conj(i_r[-Omega]), i_b[+Omega])` is drawn from the 2x2 Hermitian
//! spectral matrix
//!
//! ```text
//! [ S_rr(Omega)   S_rb*(Omega) ]
//! [ S_rb(Omega)   S_bb(Omega)  ]
//! ```
//!
//! via its Cholesky factor, which reproduces the defining averages
//! `S_rr = <|i_r[-O]|^2>`, `S_bb = <|i_b[O]|^2>`, `S_rb = <i_r[-O] i_b[O]>`.
//! The matrix must be positive semidefinite: the quantum cross model alone
//! violates this, so physical backgrounds are required and checked.
//!
//! Each block is inverse-transformed and only its middle half is kept to
//! suppress circular-correlation artifacts; local-oscillator phase, detection
//! frame rotation, calibration tones and transfer-chain distortion are
//! applied on top.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fftutil::{freq_grid, synthesis_dft};
use crate::filter::FrequencyResponse;
use crate::model::{
    heterodyne_cross_psd, heterodyne_sideband_psd, OscillatorParams, ScaleR, Sideband,
};
use crate::trace::TimeTrace;
use crate::{Error, Result};

/// Which side of the carrier the local oscillator sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoSign {
    Plus,
    Minus,
}

impl LoSign {
    pub fn sign(&self) -> f64 {
        match self {
            LoSign::Plus => 1.0,
            LoSign::Minus => -1.0,
        }
    }
}

/// Coherent calibration tone injected into both sideband records.
#[derive(Debug, Clone, Copy)]
pub struct CalTone {
    pub freq_hz: f64,
    /// Complex envelope amplitude, same units as the sideband records.
    pub amplitude: f64,
}

/// Configuration of the heterodyne synthesizer.
#[derive(Debug, Clone)]
pub struct HetSynthConfig {
    pub params: OscillatorParams,
    /// Occupation of the synthesized state.
    pub n_bar: f64,
    /// Effective linewidth of the synthesized state, rad/s.
    pub gamma_eff: f64,
    /// Sideband scale (physical or arbitrary detector units).
    pub scale_r: ScaleR,
    /// Flat background under the red/blue sideband, density units.
    pub bg_r: f64,
    pub bg_b: f64,
    /// Complex sample rate of the demodulated records, Hz.
    pub sample_rate: f64,
    pub duration: f64,
    pub seed: u64,
    /// Linear local-oscillator phase drift, rad/s (common to both sidebands
    /// and the carrier witness).
    pub lo_phase_drift: f64,
    pub lo_phase0: f64,
    /// Slow random-walk phase, rad/sqrt(s); 0 disables it.
    pub lo_phase_walk: f64,
    /// Fixed detection-frame rotation applied to the sidebands only.
    pub frame_theta: f64,
    pub tone: Option<CalTone>,
    /// Acquisition-chain response sampled at the pre-demodulation
    /// frequencies `Omega_rf -/+ lo_sign * Omega` (red/blue).
    pub chain_distortion: Option<FrequencyResponse>,
    /// Acquisition carrier frequency, rad/s (used with `chain_distortion`).
    pub omega_rf: f64,
    pub lo_sign: LoSign,
    /// Synthesis block length, samples (middle half is kept).
    pub block_len: usize,
    /// Relative rms amplitude noise of the carrier witness.
    pub carrier_noise_rel: f64,
}

impl HetSynthConfig {
    pub fn new(params: OscillatorParams, n_bar: f64, gamma_eff: f64, scale_r: ScaleR) -> Self {
        HetSynthConfig {
            params,
            n_bar,
            gamma_eff,
            scale_r,
            bg_r: 0.0,
            bg_b: 0.0,
            sample_rate: 977e3,
            duration: 1.0,
            seed: 0,
            lo_phase_drift: 0.0,
            lo_phase0: 0.0,
            lo_phase_walk: 0.0,
            frame_theta: 0.0,
            tone: None,
            chain_distortion: None,
            omega_rf: 2.0 * std::f64::consts::PI * 1e6,
            lo_sign: LoSign::Plus,
            block_len: 1 << 16,
            carrier_noise_rel: 0.01,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.n_bar >= 0.0) {
            return Err(Error::InvalidParameter("n_bar must be >= 0".into()));
        }
        if !(self.gamma_eff > 0.0) {
            return Err(Error::InvalidParameter("gamma_eff must be > 0".into()));
        }
        if self.bg_r < 0.0 || self.bg_b < 0.0 {
            return Err(Error::InvalidParameter("backgrounds must be >= 0".into()));
        }
        if self.block_len < 1 << 12 {
            return Err(Error::InvalidParameter(
                "block_len must be >= 4096 samples".into(),
            ));
        }
        if self.sample_rate < self.params.omega_z / std::f64::consts::PI {
            return Err(Error::InvalidParameter(
                "sample_rate too low to hold the sidebands".into(),
            ));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidParameter("duration must be > 0".into()));
        }
        Ok(())
    }
}

/// Output of [`synthesize_heterodyne`].
#[derive(Debug, Clone)]
pub struct HetRecord {
    /// Red (Stokes) sideband envelope; its spectral weight sits at -Omega_z,
    /// so that `S_rr(Omega) = <|i_r[-Omega]|^2>` peaks at +Omega_z.
    pub i_r: TimeTrace,
    /// Blue (anti-Stokes) sideband envelope, peaked at +Omega_z.
    pub i_b: TimeTrace,
    /// Carrier phase witness.
    pub i_car: TimeTrace,
}

/// Generate a correlated pair of sideband records plus a carrier witness.
pub fn synthesize_heterodyne(cfg: &HetSynthConfig) -> Result<HetRecord> {
    cfg.validate()?;
    let dt = 1.0 / cfg.sample_rate;
    let n = cfg.block_len;
    let t_block = n as f64 * dt;
    let grid = freq_grid(n, dt);

    // per-bin model targets and Cholesky factors, computed once
    let mut chol = Vec::with_capacity(n);
    let mut worst = (0.0_f64, 0.0_f64); // (relative deficiency, frequency)
    for &w in &grid {
        let (gr, gb) = distortion_gains(cfg, w)?;
        let s_rr = heterodyne_sideband_psd(
            w,
            &cfg.params,
            cfg.gamma_eff,
            cfg.n_bar,
            cfg.scale_r,
            0.0,
            Sideband::Stokes,
        ) * gr.norm_sqr()
            + cfg.bg_r;
        let s_bb = heterodyne_sideband_psd(
            w,
            &cfg.params,
            cfg.gamma_eff,
            cfg.n_bar,
            cfg.scale_r,
            0.0,
            Sideband::AntiStokes,
        ) * gb.norm_sqr()
            + cfg.bg_b;
        let s_rb =
            heterodyne_cross_psd(w, &cfg.params, cfg.gamma_eff, cfg.n_bar, cfg.scale_r) * gr * gb;
        let trace = s_rr + s_bb;
        let det = s_rr * s_bb - s_rb.norm_sqr();
        let lam_min = 0.5 * (trace - (trace * trace - 4.0 * det).max(0.0).sqrt());
        if lam_min < -1e-12 * trace {
            let deficiency = -lam_min / trace;
            if deficiency > worst.0 {
                worst = (deficiency, w);
            }
        }
        // L such that L L^dagger = [[s_rr, s_rb*], [s_rb, s_bb]]
        let l11 = s_rr.max(0.0).sqrt();
        let (l21, l22) = if l11 > 0.0 {
            let l21 = s_rb / l11;
            (l21, (s_bb - l21.norm_sqr()).max(0.0).sqrt())
        } else {
            (Complex64::new(0.0, 0.0), s_bb.max(0.0).sqrt())
        };
        chol.push((l11, l21, l22));
    }
    if worst.0 > 0.0 {
        return Err(Error::Unphysical(format!(
            "sideband spectral matrix not positive semidefinite: relative \
             eigenvalue deficiency {:.3e} at {:.1} Hz; raise the backgrounds",
            worst.0,
            worst.1 / (2.0 * std::f64::consts::PI)
        )));
    }

    let total = (cfg.duration * cfg.sample_rate).round() as usize;
    let keep = n / 2;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut out_r = Vec::with_capacity(total);
    let mut out_b = Vec::with_capacity(total);
    let mut out_car = Vec::with_capacity(total);
    let amp_scale = (2.0 * std::f64::consts::PI / t_block).sqrt();
    let mut phase_walk = 0.0_f64;
    let walk_step = cfg.lo_phase_walk * dt.sqrt();

    // index of the bin holding trace frequency -grid[k]
    let neg = |k: usize| (n - k) % n;

    let mut bins_r = vec![Complex64::new(0.0, 0.0); n];
    let mut bins_b = vec![Complex64::new(0.0, 0.0); n];
    while out_r.len() < total {
        let cn = |rng: &mut ChaCha12Rng| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im) / 2.0_f64.sqrt()
        };
        for (k, &(l11, l21, l22)) in chol.iter().enumerate() {
            let u = cn(&mut rng);
            let v = cn(&mut rng);
            let x1 = l11 * u; // conj(i_r[-Omega_k])
            let x2 = l21 * u + l22 * v; // i_b[+Omega_k]
            bins_r[neg(k)] = x1.conj() * amp_scale;
            bins_b[k] = x2 * amp_scale;
        }
        if let Some(tone) = &cfg.tone {
            let w0 = 2.0 * std::f64::consts::PI * tone.freq_hz;
            let k0 = nearest_bin(&grid, w0);
            let phi: f64 = {
                let x: f64 = StandardNormal.sample(&mut rng);
                x * std::f64::consts::PI
            };
            let (gr, gb) = distortion_gains(cfg, grid[k0])?;
            bins_b[k0] += gb * Complex64::from_polar(tone.amplitude, phi);
            bins_r[neg(k0)] += gr * Complex64::from_polar(tone.amplitude, -phi);
        }
        let mut block_r = bins_r.clone();
        let mut block_b = bins_b.clone();
        synthesis_dft(&mut block_r);
        synthesis_dft(&mut block_b);

        let offset = out_r.len();
        for j in 0..keep.min(total - offset) {
            let t = (offset + j) as f64 * dt;
            if walk_step != 0.0 {
                let w: f64 = StandardNormal.sample(&mut rng);
                phase_walk += walk_step * w;
            }
            let theta = cfg.lo_phase0 + cfg.lo_phase_drift * t + phase_walk;
            let lo = Complex64::from_polar(1.0, theta);
            let frame = Complex64::from_polar(1.0, cfg.frame_theta);
            out_r.push(block_r[n / 4 + j] * lo * frame);
            out_b.push(block_b[n / 4 + j] * lo * frame);
            let anoise = cn(&mut rng) * cfg.carrier_noise_rel;
            out_car.push((Complex64::new(1.0, 0.0) + anoise) * lo);
        }
    }

    Ok(HetRecord {
        i_r: TimeTrace::complex(cfg.sample_rate, out_r, "i_r")?,
        i_b: TimeTrace::complex(cfg.sample_rate, out_b, "i_b")?,
        i_car: TimeTrace::complex(cfg.sample_rate, out_car, "i_car")?,
    })
}

/// Complex acquisition-chain factors for the red/blue components carrying
/// mechanical frequency `omega`.
fn distortion_gains(cfg: &HetSynthConfig, omega: f64) -> Result<(Complex64, Complex64)> {
    match &cfg.chain_distortion {
        None => Ok((Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0))),
        Some(resp) => {
            let s = cfg.lo_sign.sign();
            let gr = resp.eval((cfg.omega_rf - s * omega).abs())?;
            let gb = resp.eval((cfg.omega_rf + s * omega).abs())?;
            Ok((gr, gb))
        }
    }
}

fn nearest_bin(grid: &[f64], w: f64) -> usize {
    grid.iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 - w)
                .abs()
                .partial_cmp(&(b.1 - w).abs())
                .unwrap()
        })
        .map(|(k, _)| k)
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn osc() -> OscillatorParams {
        OscillatorParams::new(1e-18, 2.0 * PI * 77.6e3, 2.0 * PI * 21.9).unwrap()
    }

    fn base_cfg() -> HetSynthConfig {
        let p = osc();
        let g = 2.0 * PI * 11.1e3;
        let mut cfg = HetSynthConfig::new(p, 0.66, g, ScaleR::Fit(1e-3));
        // comfortably above the positivity bound of ~0.1032 x peak
        let peak = 1e-3 * 1.66 / (g * g * p.omega_z * p.omega_z);
        cfg.bg_r = 0.25 * peak;
        cfg.bg_b = 0.25 * peak;
        cfg.duration = 0.5;
        cfg
    }

    #[test]
    fn deterministic_by_seed() {
        let mut cfg = base_cfg();
        cfg.duration = 0.1;
        cfg.seed = 5;
        let a = synthesize_heterodyne(&cfg).unwrap();
        let b = synthesize_heterodyne(&cfg).unwrap();
        assert_eq!(a.i_r.to_complex(), b.i_r.to_complex());
        assert_eq!(a.i_b.to_complex(), b.i_b.to_complex());
    }

    #[test]
    fn variance_matches_target_integral() {
        let cfg = base_cfg();
        let rec = synthesize_heterodyne(&cfg).unwrap();
        // target variance = integral of the model spectrum over the full band
        let n = 40_000;
        let w_max = PI * cfg.sample_rate;
        let mut int_r = 0.0;
        let mut int_b = 0.0;
        let dw = 2.0 * w_max / n as f64;
        for k in 0..n {
            let w = -w_max + (k as f64 + 0.5) * dw;
            int_r += dw
                * (heterodyne_sideband_psd(
                    w,
                    &cfg.params,
                    cfg.gamma_eff,
                    cfg.n_bar,
                    cfg.scale_r,
                    0.0,
                    Sideband::Stokes,
                ) + cfg.bg_r);
            int_b += dw
                * (heterodyne_sideband_psd(
                    w,
                    &cfg.params,
                    cfg.gamma_eff,
                    cfg.n_bar,
                    cfg.scale_r,
                    0.0,
                    Sideband::AntiStokes,
                ) + cfg.bg_b);
        }
        assert_relative_eq!(rec.i_r.power(), int_r, max_relative = 0.03);
        assert_relative_eq!(rec.i_b.power(), int_b, max_relative = 0.03);
    }

    #[test]
    fn insufficient_background_is_unphysical() {
        let mut cfg = base_cfg();
        // below the ~0.1032 x peak positivity bound
        let p = osc();
        let peak = 1e-3 * 1.66 / (cfg.gamma_eff * cfg.gamma_eff * p.omega_z * p.omega_z);
        cfg.bg_r = 0.05 * peak;
        cfg.bg_b = 0.05 * peak;
        match synthesize_heterodyne(&cfg) {
            Err(Error::Unphysical(msg)) => assert!(msg.contains("positive semidefinite")),
            other => panic!("expected positivity error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn zero_background_rejected_even_in_ground_state() {
        let mut cfg = base_cfg();
        cfg.n_bar = 0.0;
        cfg.bg_r = 0.0;
        cfg.bg_b = 0.0;
        assert!(matches!(
            synthesize_heterodyne(&cfg),
            Err(Error::Unphysical(_))
        ));
    }

    #[test]
    fn carrier_tracks_programmed_phase() {
        let mut cfg = base_cfg();
        cfg.duration = 0.02;
        cfg.lo_phase0 = 0.7;
        cfg.lo_phase_drift = 40.0;
        cfg.carrier_noise_rel = 1e-4;
        let rec = synthesize_heterodyne(&cfg).unwrap();
        let car = rec.i_car.to_complex();
        let dt = rec.i_car.dt();
        for k in [0usize, 1000, 10_000] {
            let expect = 0.7 + 40.0 * k as f64 * dt;
            let got = car[k].arg();
            let mut d = got - expect;
            while d > PI {
                d -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
            }
            assert!(d.abs() < 1e-3, "phase error {d} at sample {k}");
        }
    }

    #[test]
    fn short_block_rejected() {
        let mut cfg = base_cfg();
        cfg.block_len = 1024;
        assert!(matches!(
            synthesize_heterodyne(&cfg),
            Err(Error::InvalidParameter(_))
        ));
    }
}
