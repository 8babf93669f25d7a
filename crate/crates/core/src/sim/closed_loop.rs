//! Stochastic time-domain integration of the feedback-cooled oscillator.
//!
//! The equation of motion
//! `m z'' = -m Omega_z^2 z - m gamma_m z' + F_fb + F_noise (+ F_tone)`
//! is integrated with a semi-implicit Euler step (symplectic for the
//! conservative part). The feedback force is derived from the *measured*
//! record `y = z + imprecision noise` passed through the discrete filter
//! chain: `F_fb = m Omega_z gamma_fb * chain(y)`, with delays realized as
//! whole-sample ring buffers and the analog stages as bilinear-transform
//! biquads.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::filter::{
    chain_response_discrete, stability_check, default_stability_grid, BiquadCoeffs, FilterChain,
    FilterStage,
};
use crate::model::{force_psd_total, imprecision_psd, OscillatorParams, RateBudget};
use crate::trace::TimeTrace;
use crate::{Error, Result};

/// Deterministic sinusoidal drive force added to the stochastic forces.
#[derive(Debug, Clone, Copy)]
pub struct ForceTone {
    pub freq_hz: f64,
    /// Peak force amplitude, N.
    pub amplitude: f64,
}

/// Configuration of a closed-loop run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: OscillatorParams,
    pub budget: RateBudget,
    pub chain: FilterChain,
    /// Feedback gain, rad/s.
    pub gamma_fb: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Simulated span, s.
    pub duration: f64,
    pub seed: u64,
    pub tone: Option<ForceTone>,
    /// Skip the Nyquist pre-check (used to *observe* divergence).
    pub allow_unstable: bool,
}

impl SimConfig {
    /// Default configuration: step of `tau/32` when the chain carries a
    /// delay, otherwise 64 steps per mechanical period.
    pub fn new(
        params: OscillatorParams,
        budget: RateBudget,
        chain: FilterChain,
        gamma_fb: f64,
    ) -> Self {
        let tau = chain.total_delay();
        let dt = if tau > 0.0 {
            tau / 32.0
        } else {
            2.0 * std::f64::consts::PI / (64.0 * params.omega_z)
        };
        SimConfig {
            params,
            budget,
            chain,
            gamma_fb,
            dt,
            duration: 0.1,
            seed: 0,
            tone: None,
            allow_unstable: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.duration > 0.0) {
            return Err(Error::InvalidParameter(
                "dt and duration must be > 0".into(),
            ));
        }
        let f_z = self.params.omega_z / (2.0 * std::f64::consts::PI);
        if self.dt > 1.0 / (20.0 * f_z) {
            return Err(Error::InvalidParameter(format!(
                "dt = {:.3e} s undersamples the oscillator (need <= {:.3e} s)",
                self.dt,
                1.0 / (20.0 * f_z)
            )));
        }
        for s in &self.chain.stages {
            if let FilterStage::Delay { tau_s } = s {
                if *tau_s > 0.0 && self.dt > tau_s / 4.0 {
                    return Err(Error::InvalidParameter(format!(
                        "dt = {:.3e} s too coarse for delay {:.3e} s (need <= tau/4)",
                        self.dt, tau_s
                    )));
                }
            }
        }
        if self.gamma_fb < 0.0 {
            return Err(Error::InvalidParameter("gamma_fb must be >= 0".into()));
        }
        Ok(())
    }

    /// Largest fractional rounding error among the delay stages when
    /// realized as whole samples of `dt`.
    pub fn delay_rounding_error(&self) -> f64 {
        self.chain
            .stages
            .iter()
            .filter_map(|s| match s {
                FilterStage::Delay { tau_s } if *tau_s > 0.0 => {
                    let n = (tau_s / self.dt).round();
                    Some(((n * self.dt - tau_s) / tau_s).abs())
                }
                _ => None,
            })
            .fold(0.0, f64::max)
    }
}

/// Output of [`simulate_closed_loop`].
#[derive(Debug, Clone)]
pub struct ClosedLoopRecord {
    /// True displacement, m.
    pub z: TimeTrace,
    /// In-loop measurement record `z` + imprecision noise, m.
    pub measurement: TimeTrace,
}

enum StageState {
    Biquad {
        c: BiquadCoeffs,
        x1: f64,
        x2: f64,
        y1: f64,
        y2: f64,
    },
    Ring {
        buf: Vec<f64>,
        idx: usize,
    },
    Gain(f64),
}

impl StageState {
    fn push(&mut self, x: f64) -> f64 {
        match self {
            StageState::Biquad { c, x1, x2, y1, y2 } => {
                let y = c.b0 * x + c.b1 * *x1 + c.b2 * *x2 - c.a1 * *y1 - c.a2 * *y2;
                *x2 = *x1;
                *x1 = x;
                *y2 = *y1;
                *y1 = y;
                y
            }
            StageState::Ring { buf, idx } => {
                if buf.is_empty() {
                    return x;
                }
                let out = buf[*idx];
                buf[*idx] = x;
                *idx = (*idx + 1) % buf.len();
                out
            }
            StageState::Gain(g) => *g * x,
        }
    }
}

/// Step-by-step integrator; use directly to stream long runs without
/// holding full traces in memory.
pub struct ClosedLoopEngine {
    cfg: SimConfig,
    rng: ChaCha12Rng,
    stages: Vec<StageState>,
    z: f64,
    v: f64,
    t: f64,
    step_count: u64,
    sigma_force: f64,
    sigma_imp: f64,
    z_limit: f64,
}

impl ClosedLoopEngine {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        if !cfg.allow_unstable {
            let grid = default_stability_grid(&cfg.params);
            let rep = stability_check(&cfg.params, &cfg.chain, cfg.gamma_fb, &grid)?;
            if !rep.stable {
                return Err(Error::Unphysical(format!(
                    "loop unstable at gamma_fb = {:.4e} rad/s ({} encirclements); \
                     set allow_unstable to integrate anyway",
                    cfg.gamma_fb, rep.encirclements
                )));
            }
        }
        let s_ff = force_psd_total(&cfg.params, &cfg.budget);
        let s_imp = imprecision_psd(&cfg.params, &cfg.budget)?;
        let two_pi = 2.0 * std::f64::consts::PI;
        let stages = cfg
            .chain
            .stages
            .iter()
            .map(|s| match s {
                FilterStage::Delay { tau_s } => {
                    let n = (tau_s / cfg.dt).round() as usize;
                    StageState::Ring {
                        buf: vec![0.0; n],
                        idx: 0,
                    }
                }
                FilterStage::Gain { value } => StageState::Gain(*value),
                other => StageState::Biquad {
                    c: BiquadCoeffs::from_stage(other, 1.0 / cfg.dt),
                    x1: 0.0,
                    x2: 0.0,
                    y1: 0.0,
                    y2: 0.0,
                },
            })
            .collect();
        // runaway threshold: 1e4 x the bare-oscillator rms
        let gamma_ref = cfg.params.gamma_m.max(1e-6 * cfg.params.omega_z);
        let var_ref = std::f64::consts::PI * s_ff
            / (cfg.params.mass * cfg.params.mass * gamma_ref * cfg.params.omega_z * cfg.params.omega_z);
        Ok(ClosedLoopEngine {
            cfg: cfg.clone(),
            rng: ChaCha12Rng::seed_from_u64(cfg.seed),
            stages,
            z: 0.0,
            v: 0.0,
            t: 0.0,
            step_count: 0,
            sigma_force: (two_pi * s_ff / cfg.dt).sqrt(),
            sigma_imp: (two_pi * s_imp / cfg.dt).sqrt(),
            z_limit: 1e4 * var_ref.sqrt(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    /// Advance one step; returns `(z, y)` where `y` is the in-loop
    /// measurement driving the feedback.
    pub fn step(&mut self) -> Result<(f64, f64)> {
        let p = &self.cfg.params;
        let dt = self.cfg.dt;
        let noise_imp: f64 = StandardNormal.sample(&mut self.rng);
        let noise_force: f64 = StandardNormal.sample(&mut self.rng);
        let y = self.z + self.sigma_imp * noise_imp;
        let mut u = y;
        for s in self.stages.iter_mut() {
            u = s.push(u);
        }
        u *= self.cfg.chain.overall_gain;
        let f_fb = p.mass * p.omega_z * self.cfg.gamma_fb * u;
        let mut force = self.sigma_force * noise_force + f_fb;
        if let Some(tone) = &self.cfg.tone {
            force += tone.amplitude * (2.0 * std::f64::consts::PI * tone.freq_hz * self.t).cos();
        }
        let accel = -p.omega_z * p.omega_z * self.z - p.gamma_m * self.v + force / p.mass;
        self.v += dt * accel;
        self.z += dt * self.v;
        self.t += dt;
        self.step_count += 1;
        if !self.z.is_finite() || self.z.abs() > self.z_limit {
            return Err(Error::Divergence { t_onset: self.t });
        }
        Ok((self.z, y))
    }

    /// Run `n` steps, discarding the output (transient burn-in).
    pub fn burn_in(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }
}

/// Integrate a full run and return the displacement and measurement traces.
///
/// Identical seeds give identical traces.
pub fn simulate_closed_loop(cfg: &SimConfig) -> Result<ClosedLoopRecord> {
    let mut engine = ClosedLoopEngine::new(cfg)?;
    let n = (cfg.duration / cfg.dt).round() as usize;
    if n == 0 {
        return Err(Error::InvalidParameter("duration shorter than dt".into()));
    }
    let mut z = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (zi, yi) = engine.step()?;
        z.push(zi);
        y.push(yi);
    }
    let rate = 1.0 / cfg.dt;
    Ok(ClosedLoopRecord {
        z: TimeTrace::real(rate, z, "z")?.with_units("m"),
        measurement: TimeTrace::real(rate, y, "measurement")?.with_units("m"),
    })
}

/// Verdict of [`boundedness_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundedness {
    Bounded,
    Divergent,
}

/// Empirical stability probe: integrate for `probe_duration` seconds with
/// the Nyquist pre-check disabled and classify the energy trend.
pub fn boundedness_probe(cfg: &SimConfig, probe_duration: f64) -> Result<Boundedness> {
    let mut probe = cfg.clone();
    probe.allow_unstable = true;
    probe.duration = probe_duration;
    let mut engine = ClosedLoopEngine::new(&probe)?;
    let n = (probe_duration / probe.dt).round() as usize;
    let half = n / 2;
    let mut sums = [0.0_f64; 2];
    for k in 0..n {
        match engine.step() {
            Ok((z, _)) => sums[usize::from(k >= half)] += z * z,
            Err(Error::Divergence { .. }) => return Ok(Boundedness::Divergent),
            Err(e) => return Err(e),
        }
    }
    // exponential growth shows as a large late/early energy ratio
    if sums[1] > 100.0 * sums[0] {
        Ok(Boundedness::Divergent)
    } else {
        Ok(Boundedness::Bounded)
    }
}

/// Analytic in-loop measurement PSD (two-sided, angular) of the simulated
/// record: `|chi_fb|^2 S_FF + |1 + chi_fb H|^2 S_imp` with the chain
/// realized exactly as in the discrete integrator.
pub fn inloop_measurement_psd(omega: f64, cfg: &SimConfig) -> Result<f64> {
    let p = &cfg.params;
    let s_ff = force_psd_total(p, &cfg.budget);
    let s_imp = imprecision_psd(p, &cfg.budget)?;
    let h = p.mass
        * p.omega_z
        * cfg.gamma_fb
        * chain_response_discrete(omega, &cfg.chain, 1.0 / cfg.dt);
    let chi_m = crate::model::susceptibility(omega, p, p.gamma_m)?;
    let chi_fb = 1.0 / (1.0 / chi_m - h);
    let closed = Complex64::new(1.0, 0.0) + chi_fb * h;
    Ok(chi_fb.norm_sqr() * s_ff + closed.norm_sqr() * s_imp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::smallest_stable_delay;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn osc() -> OscillatorParams {
        OscillatorParams::new(1e-18, 2.0 * PI * 77.6e3, 2.0 * PI * 21.9).unwrap()
    }

    fn budget() -> RateBudget {
        RateBudget::from_meas_tot(2.0 * PI * 1.33e3, 2.0 * PI * 5.5e3).unwrap()
    }

    fn delay_cfg(gamma_fb: f64) -> SimConfig {
        let p = osc();
        let chain = FilterChain::pure_delay(smallest_stable_delay(&p, 0));
        SimConfig::new(p, budget(), chain, gamma_fb)
    }

    #[test]
    fn identical_seeds_reproduce() {
        let mut cfg = delay_cfg(2.0 * PI * 2e3);
        cfg.duration = 2e-3;
        cfg.seed = 42;
        let a = simulate_closed_loop(&cfg).unwrap();
        let b = simulate_closed_loop(&cfg).unwrap();
        let (za, zb) = (a.z.to_complex(), b.z.to_complex());
        assert_eq!(za.len(), zb.len());
        for (x, y) in za.iter().zip(zb.iter()) {
            assert_eq!(x.re, y.re);
        }
        cfg.seed = 43;
        let c = simulate_closed_loop(&cfg).unwrap();
        assert!(a.z.to_complex()[100] != c.z.to_complex()[100]);
    }

    #[test]
    fn variance_matches_closed_form() {
        // cold-damped variance: <z^2> ~ z_zpf^2 (2 n + 1) with n from the
        // closed-form occupation at gamma_eff = gamma_m + gamma_fb, plus the
        // (small) in-loop noise-squashing correction; 10% tolerance.
        let gfb = 2.0 * PI * 5e3;
        let mut cfg = delay_cfg(gfb);
        cfg.duration = 0.4;
        cfg.seed = 7;
        let rec = simulate_closed_loop(&cfg).unwrap();
        // discard the transient
        let n = rec.z.len();
        let tail = rec.z.window(n / 4, n - n / 4).unwrap();
        let var = tail.power();
        let geff = cfg.params.gamma_m + gfb;
        let n_pred =
            crate::model::cold_damping_occupation(geff, &cfg.budget).unwrap();
        let var_pred = cfg.params.z_zpf_sq() * (2.0 * n_pred + 1.0);
        assert_relative_eq!(var, var_pred, max_relative = 0.12);
    }

    #[test]
    fn unstable_quadrant_diverges() {
        let p = osc();
        let chain = FilterChain::pure_delay(3.0 * PI / (2.0 * p.omega_z));
        let mut cfg = SimConfig::new(p, budget(), chain, 2.0 * PI * 5e3);
        cfg.allow_unstable = true;
        cfg.duration = 0.5;
        match simulate_closed_loop(&cfg) {
            Err(Error::Divergence { t_onset }) => assert!(t_onset > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn unstable_loop_is_rejected_without_override() {
        let p = osc();
        let chain = FilterChain::pure_delay(3.0 * PI / (2.0 * p.omega_z));
        let mut cfg = SimConfig::new(p, budget(), chain, 2.0 * PI * 5e3);
        cfg.duration = 1e-3;
        assert!(matches!(
            simulate_closed_loop(&cfg),
            Err(Error::Unphysical(_))
        ));
    }

    #[test]
    fn boundedness_probe_agrees_with_nyquist() {
        let stable = delay_cfg(2.0 * PI * 5e3);
        assert_eq!(
            boundedness_probe(&stable, 0.05).unwrap(),
            Boundedness::Bounded
        );
        let p = osc();
        let chain = FilterChain::pure_delay(3.0 * PI / (2.0 * p.omega_z));
        let unstable = SimConfig::new(p, budget(), chain, 2.0 * PI * 5e3);
        assert_eq!(
            boundedness_probe(&unstable, 0.1).unwrap(),
            Boundedness::Divergent
        );
    }

    #[test]
    fn coarse_step_is_rejected() {
        let mut cfg = delay_cfg(0.0);
        cfg.dt = 1e-3;
        assert!(matches!(
            simulate_closed_loop(&cfg),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn tone_appears_at_its_frequency() {
        let mut cfg = delay_cfg(2.0 * PI * 2e3);
        cfg.duration = 0.05;
        cfg.seed = 3;
        // far off resonance so the response is quasi-static
        let f0 = 20e3;
        cfg.tone = Some(ForceTone {
            freq_hz: f0,
            amplitude: 1e-15,
        });
        let rec = simulate_closed_loop(&cfg).unwrap();
        let z = rec.z.to_complex();
        let dt = rec.z.dt();
        let t_total = z.len() as f64 * dt;
        // single-bin projection at f0 and at a nearby control frequency
        let project = |f: f64| -> f64 {
            z.iter()
                .enumerate()
                .map(|(k, v)| v * Complex64::from_polar(1.0, 2.0 * PI * f * k as f64 * dt))
                .sum::<Complex64>()
                .norm()
                / t_total
        };
        assert!(project(f0) > 10.0 * project(f0 * 1.17));
    }
}
