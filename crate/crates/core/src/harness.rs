//! End-to-end experiment harness: configured gain sweeps with anchored
//! thermometry, theory overlays, the noise-squashing demonstration, and
//! report emission.
//!
//! The harness plays both roles of a digital twin: it *generates* data with
//! the full physical truth (time-domain closed loop, heterodyne synthesis in
//! arbitrary detector units) and then *analyzes* that data knowing only what
//! an experimenter would: spectra in detector units, one anchored occupation,
//! and the loop-filter shape.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::est::{
    anchor_calibration, energy_integral, fit_cross_spectrum, fit_inloop_gain,
    fit_reference_homodyne, fit_sideband_pair, rates_from_reference, sideband_spectra,
    FitResult, FrequencyMask, PsdAccumulator, RateEstimate,
};
use crate::filter::{
    chain_response_discrete, default_stability_grid, stability_check, FilterChain,
    FrequencyResponse,
};
use crate::model::{
    cold_damping_occupation, conditional_occupation, force_psd_total, imprecision_psd,
    optimal_cold_damping_gain, rates_from_budget, OscillatorParams, RateBudget, ScaleR,
    ThermometryResult,
};
use crate::sim::{
    synthesize_heterodyne, ClosedLoopEngine, HetSynthConfig, SimConfig,
};
use crate::spectrum::{full_width_half_max, SpectralConvention, Spectrum};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Oscillator block of the experiment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillatorCfg {
    pub mass_kg: f64,
    pub frequency_hz: f64,
    pub gamma_m_hz: f64,
}

/// Decoherence budget block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetCfg {
    pub gamma_qba_hz: f64,
    pub gamma_exc_hz: f64,
    pub eta_d: f64,
}

/// Sweep block: which gains to run and how to analyze them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCfg {
    /// Feedback gains, Hz (`gamma_fb / 2 pi`). The first entry is the
    /// reference row and should be far below `gamma_m_hz`.
    pub gamma_fb_hz: Vec<f64>,
    /// Optional row labels, echoed verbatim into the report.
    pub labels: Option<Vec<String>>,
    /// Row whose heterodyne occupation anchors the displacement scale.
    pub anchor_index: usize,
    /// Rows on which to run the out-of-loop thermometers (the anchor row is
    /// always included).
    pub heterodyne_rows: Vec<usize>,
    /// Averaging segments per in-loop spectrum.
    pub segments: usize,
    /// Heterodyne record length per analyzed row, s.
    pub het_duration_s: f64,
    pub seed: u64,
    /// Arbitrary detector transduction, detector units per meter.
    pub detector_gain: f64,
}

/// Full experiment configuration (JSON-serializable).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub oscillator: OscillatorCfg,
    pub budget: BudgetCfg,
    pub chain: FilterChain,
    pub sweep: SweepCfg,
    /// Excluded spectral lines, Hz intervals.
    pub mask_hz: Vec<(f64, f64)>,
    /// Worker threads for row-parallel sweeps (0 = library default).
    pub threads: usize,
}

impl ExperimentConfig {
    /// The nominal experiment: 1e-18 kg particle at 77.6 kHz, rates
    /// `Gamma_meas = 2 pi 1.33 kHz`, `Gamma_tot = 2 pi 5.5 kHz`, the full
    /// electronic chain, and gains up to the optimum near 11 kHz.
    pub fn nominal() -> Self {
        let osc = OscillatorCfg {
            mass_kg: 1e-18,
            frequency_hz: 77.6e3,
            gamma_m_hz: 21.9,
        };
        let params =
            OscillatorParams::new(osc.mass_kg, TWO_PI * osc.frequency_hz, TWO_PI * osc.gamma_m_hz)
                .expect("nominal oscillator");
        let gains = vec![
            0.0, 0.36e3, 0.7e3, 1.4e3, 2.4e3, 3.9e3, 5.8e3, 8.0e3, 9.5e3, 11.1e3,
        ];
        ExperimentConfig {
            oscillator: osc,
            budget: BudgetCfg {
                gamma_qba_hz: 1.33e3,
                gamma_exc_hz: 5.5e3 - 1.33e3,
                eta_d: 1.0,
            },
            chain: FilterChain::paper_chain(&params),
            sweep: SweepCfg {
                gamma_fb_hz: gains,
                labels: None,
                anchor_index: 9,
                heterodyne_rows: vec![9],
                segments: 48,
                het_duration_s: 3.0,
                seed: 0x5EED,
                detector_gain: 2.4e7,
            },
            mask_hz: FrequencyMask::spurious_lines().excluded_hz,
            threads: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization")
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.rate_budget()?;
        let n = self.sweep.gamma_fb_hz.len();
        if n < 2 {
            return Err(Error::Config(
                "sweep needs a reference row plus at least one gain".into(),
            ));
        }
        if self.sweep.anchor_index >= n {
            return Err(Error::Config(format!(
                "anchor_index {} out of range (only {n} rows)",
                self.sweep.anchor_index
            )));
        }
        if self.sweep.anchor_index == 0 {
            return Err(Error::Config(
                "anchor row must not be the reference row".into(),
            ));
        }
        if let Some(labels) = &self.sweep.labels {
            if labels.len() != n {
                return Err(Error::Config("labels length != gains length".into()));
            }
        }
        if self.sweep.gamma_fb_hz[0] > 0.2 * self.oscillator.gamma_m_hz {
            return Err(Error::Config(
                "reference gain must stay below gamma_m / 5 for the bare-oscillator fit".into(),
            ));
        }
        if self.sweep.gamma_fb_hz.iter().any(|g| *g < 0.0) {
            return Err(Error::Config("gains must be >= 0".into()));
        }
        if !(self.sweep.detector_gain > 0.0) || self.sweep.segments < 8 {
            return Err(Error::Config(
                "need detector_gain > 0 and at least 8 segments".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<OscillatorParams> {
        OscillatorParams::new(
            self.oscillator.mass_kg,
            TWO_PI * self.oscillator.frequency_hz,
            TWO_PI * self.oscillator.gamma_m_hz,
        )
    }

    pub fn rate_budget(&self) -> Result<RateBudget> {
        rates_from_budget(
            TWO_PI * self.budget.gamma_qba_hz,
            TWO_PI * self.budget.gamma_exc_hz,
            self.budget.eta_d,
        )
    }

    pub fn mask(&self) -> FrequencyMask {
        FrequencyMask {
            excluded_hz: self.mask_hz.clone(),
        }
    }
}

/// One analyzed sweep row.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub label: String,
    /// Injected gain, rad/s.
    pub gamma_fb_injected: f64,
    /// Gain recovered from the in-loop spectrum, rad/s.
    pub gamma_fb_fitted: f64,
    pub gamma_fb_sigma: f64,
    /// Full width at half maximum of the reconstructed true-motion peak.
    pub gamma_eff_fwhm: f64,
    /// Symmetrized energy integral in detector units.
    pub energy_integral: f64,
    /// Anchored occupation and its propagated error.
    pub n_anchored: f64,
    pub n_anchored_sigma: f64,
    /// Ground-truth occupation of the simulated state.
    pub n_truth: f64,
    pub n_asymmetry: Option<ThermometryResult>,
    pub n_cross: Option<ThermometryResult>,
    pub flags: Vec<String>,
}

/// Theory overlays evaluated on a dense gain grid.
#[derive(Debug, Clone)]
pub struct TheoryCurves {
    /// Gains, rad/s.
    pub gamma_fb: Vec<f64>,
    /// Closed-form occupation for ideal velocity feedback at
    /// `gamma_eff = gamma_m + gamma_fb`.
    pub ideal: Vec<f64>,
    /// Energy-integral occupation for the configured chain.
    pub chain_truth: Vec<f64>,
}

/// Output of [`run_gain_sweep`].
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// `(row index, reason)` for rows that could not be analyzed.
    pub skipped: Vec<(usize, String)>,
    pub curves: TheoryCurves,
    /// Reference-row fit in detector units.
    pub reference: FitResult,
    /// Rates after anchoring fixes the displacement calibration.
    pub rates: RateEstimate,
    pub eta_meas_truth: f64,
    pub gamma_star: f64,
    pub conditional_bound: f64,
    pub config: ExperimentConfig,
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Segment length resolving `gamma_eff` with ~20 bins per linewidth.
fn pick_segment_len(gamma_eff: f64, dt: f64) -> usize {
    let t_min = 40.0 * std::f64::consts::PI / gamma_eff;
    next_pow2((t_min / dt).ceil() as usize).clamp(1 << 14, 1 << 24)
}

fn crop_positive(s: &Spectrum, lo: f64, hi: f64) -> Result<Spectrum> {
    let mut grid = Vec::new();
    let mut values = Vec::new();
    let mut stderr = s.stderr.as_ref().map(|_| Vec::new());
    for (k, &w) in s.grid.iter().enumerate() {
        if w < lo || w > hi {
            continue;
        }
        grid.push(w);
        values.push(s.values[k]);
        if let (Some(out), Some(err)) = (stderr.as_mut(), s.stderr.as_ref()) {
            out.push(err[k]);
        }
    }
    let mut out = Spectrum::new(grid, values, s.convention)?;
    out.stderr = stderr;
    out.n_averages = s.n_averages;
    out.label = s.label.clone();
    Ok(out)
}

/// Simulate one closed-loop run and accumulate the in-loop measurement PSD
/// in detector units, streaming segment by segment.
fn simulate_row_spectrum(
    sim: &SimConfig,
    detector_gain: f64,
    seg_len: usize,
    n_segments: usize,
    gamma_eff_expected: f64,
) -> Result<Spectrum> {
    let mut engine = ClosedLoopEngine::new(sim)?;
    let burn = ((10.0 / gamma_eff_expected) / sim.dt).ceil() as usize;
    engine.burn_in(burn)?;
    let mut acc = PsdAccumulator::new(seg_len, sim.dt);
    let mut buf = vec![num_complex::Complex64::new(0.0, 0.0); seg_len];
    for _ in 0..n_segments {
        for slot in buf.iter_mut() {
            let (_, y) = engine.step()?;
            *slot = num_complex::Complex64::new(y * detector_gain, 0.0);
        }
        acc.add_segment(&buf)?;
    }
    acc.finish()
}

/// Dense model grid for energy integrals: covers `[omega_z/100, 20 omega_z]`.
fn model_grid(omega_z: f64) -> Vec<f64> {
    let lo = omega_z / 100.0;
    let hi = 20.0 * omega_z;
    let n = 400_000;
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

struct RowAnalysis {
    gamma_fb_fitted: f64,
    gamma_fb_sigma: f64,
    gamma_eff_fwhm: f64,
    energy: f64,
    n_truth: f64,
    n_asymmetry: Option<ThermometryResult>,
    n_cross: Option<ThermometryResult>,
    flags: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn analyze_row(
    index: usize,
    cfg: &ExperimentConfig,
    params: &OscillatorParams,
    budget: &RateBudget,
    reference: &FitResult,
    chain_fit: &FrequencyResponse,
    mask: &FrequencyMask,
    truth_chain: &FrequencyResponse,
) -> Result<RowAnalysis> {
    let gamma_fb = TWO_PI * cfg.sweep.gamma_fb_hz[index];
    let gamma_eff_exp = params.gamma_m + gamma_fb;
    let mut sim = SimConfig::new(params.clone(), budget.clone(), cfg.chain.clone(), gamma_fb);
    sim.seed = cfg.sweep.seed.wrapping_add(index as u64);
    let seg_len = pick_segment_len(gamma_eff_exp, sim.dt);
    let spectrum = simulate_row_spectrum(
        &sim,
        cfg.sweep.detector_gain,
        seg_len,
        cfg.sweep.segments,
        gamma_eff_exp,
    )?;
    let band = (10.0 * gamma_eff_exp).max(TWO_PI * 30e3).min(0.9 * params.omega_z);
    let cropped = crop_positive(&spectrum, params.omega_z - band, params.omega_z + band)?;

    let gain_fit = fit_inloop_gain(&cropped, reference, chain_fit, mask)?;
    let (gfb_fit, gfb_sig) = gain_fit.get("gamma_fb")?;

    // reconstructed true-motion spectrum in detector units
    let grid = model_grid(params.omega_z);
    let true_psd = crate::est::true_displacement_psd(reference, gfb_fit, chain_fit, &grid)?;
    let energy = energy_integral(&true_psd, params.omega_z)?;
    let fwhm = full_width_half_max(&true_psd.grid, &true_psd.values)
        .ok_or_else(|| Error::Resolution("true-motion peak not resolved".into()))?;

    // ground truth from the physical model with the injected gain
    let (n_truth, gamma_truth) = truth_occupation(params, budget, gamma_fb, truth_chain)?;

    let mut flags = Vec::new();
    let run_het = cfg.sweep.heterodyne_rows.contains(&index) || index == cfg.sweep.anchor_index;
    let (n_asymmetry, n_cross) = if run_het {
        let (a, c) = heterodyne_thermometry(cfg, params, index, n_truth, gamma_truth, mask)?;
        if a.diverged {
            flags.push("asymmetry thermometer diverged".into());
        }
        (Some(a), Some(c))
    } else {
        (None, None)
    };

    Ok(RowAnalysis {
        gamma_fb_fitted: gfb_fit,
        gamma_fb_sigma: gfb_sig,
        gamma_eff_fwhm: fwhm,
        energy,
        n_truth,
        n_asymmetry,
        n_cross,
        flags,
    })
}

/// Physical-truth occupation and linewidth for an injected gain.
fn truth_occupation(
    params: &OscillatorParams,
    budget: &RateBudget,
    gamma_fb: f64,
    truth_chain: &FrequencyResponse,
) -> Result<(f64, f64)> {
    let sff = force_psd_total(params, budget) / (params.mass * params.mass);
    let simp = imprecision_psd(params, budget)?;
    let grid = model_grid(params.omega_z);
    let values = grid
        .iter()
        .map(|&w| {
            crate::est::closed_loop_true_psd(
                w,
                params.omega_z,
                params.gamma_m,
                sff,
                simp,
                gamma_fb,
                truth_chain,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let s = Spectrum::new(grid, values, SpectralConvention::TwoSidedAngular)?;
    let occ = crate::est::occupation_from_spectrum(&s, params)?;
    let fwhm = full_width_half_max(&s.grid, &s.values)
        .ok_or_else(|| Error::Resolution("truth peak not resolved".into()))?;
    Ok((occ.n_bar, fwhm))
}

/// Out-of-loop thermometry on synthetic heterodyne data for one row.
fn heterodyne_thermometry(
    cfg: &ExperimentConfig,
    params: &OscillatorParams,
    index: usize,
    n_truth: f64,
    gamma_truth: f64,
    mask: &FrequencyMask,
) -> Result<(ThermometryResult, ThermometryResult)> {
    let mut het = HetSynthConfig::new(params.clone(), n_truth, gamma_truth, ScaleR::Physical);
    let peak = crate::model::heterodyne_sideband_psd(
        params.omega_z,
        params,
        gamma_truth,
        n_truth,
        ScaleR::Physical,
        0.0,
        crate::model::Sideband::Stokes,
    );
    het.bg_r = 0.3 * peak;
    het.bg_b = 0.3 * peak;
    het.duration = cfg.sweep.het_duration_s;
    het.seed = cfg.sweep.seed.wrapping_mul(31).wrapping_add(index as u64);
    let rec = synthesize_heterodyne(&het)?;
    let seg_len = 1 << 14;
    let spectra = sideband_spectra(&rec.i_r, &rec.i_b, seg_len)?;
    let (_, asym) = fit_sideband_pair(&spectra.s_rr, &spectra.s_bb, mask)?;
    let (_, cross) = fit_cross_spectrum(&spectra.s_rb, mask)?;
    Ok((asym, cross))
}

/// Run the configured gain sweep end to end.
pub fn run_gain_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let params = cfg.params()?;
    let budget = cfg.rate_budget()?;
    let mask = cfg.mask();
    let gamma_star = optimal_cold_damping_gain(&budget);
    let bound = conditional_occupation(budget.eta_meas())?;

    // stability of every row up front; unstable rows are skipped, not fatal
    let nyquist_grid = default_stability_grid(&params);
    let mut skipped: Vec<(usize, String)> = Vec::new();
    let mut live: Vec<usize> = Vec::new();
    for (k, &g_hz) in cfg.sweep.gamma_fb_hz.iter().enumerate() {
        match stability_check(&params, &cfg.chain, TWO_PI * g_hz, &nyquist_grid) {
            Ok(rep) if rep.stable => live.push(k),
            Ok(rep) => skipped.push((
                k,
                format!("loop unstable ({} encirclements)", rep.encirclements),
            )),
            Err(e) => skipped.push((k, e.to_string())),
        }
    }
    if !live.contains(&0) {
        return Err(Error::Unphysical(
            "reference row unstable; cannot calibrate".into(),
        ));
    }
    if !live.contains(&cfg.sweep.anchor_index) {
        return Err(Error::Unphysical(
            "anchor row unstable; cannot calibrate".into(),
        ));
    }

    // chain response as the simulator realizes it (discrete filters)
    let dt = SimConfig::new(params.clone(), budget.clone(), cfg.chain.clone(), 0.0).dt;
    let resp_grid: Vec<f64> = {
        let lo = params.omega_z / 150.0;
        let hi = 25.0 * params.omega_z;
        let n = 60_000;
        (0..n)
            .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
            .collect()
    };
    let chain_resp = FrequencyResponse::new(
        resp_grid.clone(),
        resp_grid
            .iter()
            .map(|&w| chain_response_discrete(w, &cfg.chain, 1.0 / dt))
            .collect(),
    )?;

    // reference row first (sequential: everything depends on it)
    let reference = {
        let gamma_fb = TWO_PI * cfg.sweep.gamma_fb_hz[0];
        let mut sim =
            SimConfig::new(params.clone(), budget.clone(), cfg.chain.clone(), gamma_fb);
        sim.seed = cfg.sweep.seed;
        let seg_len = pick_segment_len(params.gamma_m, sim.dt);
        let n_segs = cfg.sweep.segments.min(20).max(12);
        let spectrum = simulate_row_spectrum(
            &sim,
            cfg.sweep.detector_gain,
            seg_len,
            n_segs,
            params.gamma_m,
        )?;
        let band = TWO_PI * 40e3;
        let cropped =
            crop_positive(&spectrum, params.omega_z - band, params.omega_z + band)?;
        fit_reference_homodyne(&cropped, &mask)?
    };

    // analyze the gain rows in parallel
    let work = |k: &usize| -> (usize, Result<RowAnalysis>) {
        (
            *k,
            analyze_row(
                *k,
                cfg,
                &params,
                &budget,
                &reference,
                &chain_resp,
                &mask,
                &chain_resp,
            ),
        )
    };
    let gain_rows: Vec<usize> = live.iter().copied().filter(|k| *k != 0).collect();
    let analyzed: Vec<(usize, Result<RowAnalysis>)> = if cfg.threads == 1 {
        gain_rows.iter().map(work).collect()
    } else if cfg.threads == 0 {
        gain_rows.par_iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| gain_rows.par_iter().map(work).collect())
    };

    let mut results: Vec<(usize, RowAnalysis)> = Vec::new();
    for (k, r) in analyzed {
        match r {
            Ok(a) => results.push((k, a)),
            Err(e) => skipped.push((k, e.to_string())),
        }
    }
    results.sort_by_key(|(k, _)| *k);
    skipped.sort_by_key(|(k, _)| *k);

    // anchor the displacement scale on the designated row
    let anchor = results
        .iter()
        .find(|(k, _)| *k == cfg.sweep.anchor_index)
        .ok_or_else(|| Error::Unphysical("anchor row analysis failed".into()))?;
    let anchor_thermo = anchor
        .1
        .n_asymmetry
        .as_ref()
        .ok_or_else(|| Error::Unphysical("anchor row has no thermometer".into()))?;
    if anchor_thermo.diverged || anchor_thermo.n_bar < 0.0 {
        return Err(Error::Unphysical(
            "anchor thermometer gave an unusable occupation".into(),
        ));
    }
    let scale = anchor_calibration(anchor.1.energy, anchor_thermo.n_bar)?;
    let anchor_rel = anchor_thermo.sigma / (anchor_thermo.n_bar + 0.5);

    // detector gain implied by the anchor fixes physical rates
    let kappa_sq = 1.0 / (4.0 * params.z_zpf_sq() * scale);
    let mut reference_phys = reference.clone();
    for name in ["sff_shape", "s_imp"] {
        let i = reference_phys.index(name).expect("reference names");
        reference_phys.values[i] /= kappa_sq;
        reference_phys.sigmas[i] /= kappa_sq;
        for j in 0..reference_phys.values.len() {
            reference_phys.covariance[(i, j)] /= kappa_sq;
            reference_phys.covariance[(j, i)] /= kappa_sq;
        }
    }
    let rates = rates_from_reference(&reference_phys, params.mass)?;

    let label_of = |k: usize| -> String {
        cfg.sweep
            .labels
            .as_ref()
            .map(|l| l[k].clone())
            .unwrap_or_else(|| format!("gain_{:.0}_hz", cfg.sweep.gamma_fb_hz[k]))
    };
    let rows: Vec<SweepRow> = results
        .into_iter()
        .map(|(k, a)| {
            let n = scale * a.energy - 0.5;
            SweepRow {
                label: label_of(k),
                gamma_fb_injected: TWO_PI * cfg.sweep.gamma_fb_hz[k],
                gamma_fb_fitted: a.gamma_fb_fitted,
                gamma_fb_sigma: a.gamma_fb_sigma,
                gamma_eff_fwhm: a.gamma_eff_fwhm,
                energy_integral: a.energy,
                n_anchored: n,
                n_anchored_sigma: (n + 0.5) * anchor_rel,
                n_truth: a.n_truth,
                n_asymmetry: a.n_asymmetry,
                n_cross: a.n_cross,
                flags: a.flags,
            }
        })
        .collect();

    // theory overlays on a dense gain grid spanning the sweep
    let g_max = cfg
        .sweep
        .gamma_fb_hz
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max);
    let g_lo = TWO_PI * (g_max / 100.0).max(cfg.oscillator.gamma_m_hz);
    let g_hi = TWO_PI * g_max * 1.2;
    let n_curve = 60;
    let mut curve_g = Vec::with_capacity(n_curve);
    let mut ideal = Vec::with_capacity(n_curve);
    let mut chain_truth = Vec::with_capacity(n_curve);
    for k in 0..n_curve {
        let g = g_lo * (g_hi / g_lo).powf(k as f64 / (n_curve - 1) as f64);
        let Ok(n_ideal) = cold_damping_occupation(params.gamma_m + g, &budget) else {
            continue;
        };
        let Ok((n_chain, _)) = truth_occupation(&params, &budget, g, &chain_resp) else {
            continue;
        };
        curve_g.push(g);
        ideal.push(n_ideal);
        chain_truth.push(n_chain);
    }

    Ok(SweepReport {
        rows,
        skipped,
        curves: TheoryCurves {
            gamma_fb: curve_g,
            ideal,
            chain_truth,
        },
        reference,
        rates,
        eta_meas_truth: budget.eta_meas(),
        gamma_star,
        conditional_bound: bound,
        config: cfg.clone(),
    })
}

/// One row of the noise-squashing demonstration.
#[derive(Debug, Clone, Copy)]
pub struct SquashRow {
    /// Gain, rad/s.
    pub gamma_fb: f64,
    /// Minimum of the in-loop spectrum divided by the imprecision floor.
    pub inloop_min_over_floor: f64,
    /// True-motion spectrum over its force-driven part at the same
    /// frequency (never below 1).
    pub true_over_force_at_min: f64,
    /// Frequency of the in-loop minimum, rad/s.
    pub omega_min: f64,
}

/// Evaluate in-loop squashing vs true motion over a set of gains.
///
/// At high gain the in-loop spectrum dips *below* the imprecision floor
/// near resonance (noise squashing) while the true motion never drops below
/// its force-driven level.
pub fn run_squashing_demo(
    params: &OscillatorParams,
    budget: &RateBudget,
    chain: &FilterChain,
    gains: &[f64],
) -> Result<Vec<SquashRow>> {
    let sff = force_psd_total(params, budget) / (params.mass * params.mass);
    let simp = imprecision_psd(params, budget)?;
    let grid: Vec<f64> = {
        let lo = params.omega_z / 150.0;
        let hi = 25.0 * params.omega_z;
        (0..60_000)
            .map(|k| lo + (hi - lo) * k as f64 / 59_999.0)
            .collect()
    };
    let resp = FrequencyResponse::new(
        grid.iter().copied().collect(),
        grid.iter()
            .map(|&w| crate::filter::chain_response(w, chain))
            .collect(),
    )?;
    gains
        .iter()
        .map(|&gfb| {
            let band_lo = params.omega_z - 8.0 * (params.gamma_m + gfb);
            let band_hi = params.omega_z + 8.0 * (params.gamma_m + gfb);
            let mut best = (f64::INFINITY, params.omega_z);
            for &w in grid.iter().filter(|&&w| w >= band_lo && w <= band_hi) {
                let v = crate::est::closed_loop_meter_psd(
                    w,
                    params.omega_z,
                    params.gamma_m,
                    sff,
                    simp,
                    gfb,
                    &resp,
                )?;
                if v < best.0 {
                    best = (v, w);
                }
            }
            let t = crate::est::closed_loop_true_psd(
                best.1,
                params.omega_z,
                params.gamma_m,
                sff,
                simp,
                gfb,
                &resp,
            )?;
            let force_only = crate::est::closed_loop_true_psd(
                best.1,
                params.omega_z,
                params.gamma_m,
                sff,
                0.0,
                gfb,
                &resp,
            )?;
            Ok(SquashRow {
                gamma_fb: gfb,
                inloop_min_over_floor: best.0 / simp,
                true_over_force_at_min: t / force_only,
                omega_min: best.1,
            })
        })
        .collect()
}

/// Write a sweep report as CSV tables plus a key/value summary.
pub fn emit_report(report: &SweepReport, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    let f = |v: f64| format!("{v:.12e}");

    let mut rows = String::from(
        "label,gamma_fb_injected_hz,gamma_fb_fitted_hz,gamma_fb_sigma_hz,\
         gamma_eff_fwhm_hz,energy_integral,n_anchored,n_anchored_sigma,n_truth,\
         n_asymmetry,n_asymmetry_sigma,n_cross,n_cross_sigma,flags\n",
    );
    for r in &report.rows {
        let opt = |t: &Option<ThermometryResult>| -> (String, String) {
            match t {
                Some(v) if !v.diverged => (f(v.n_bar), f(v.sigma)),
                _ => ("nan".into(), "nan".into()),
            }
        };
        let (na, nas) = opt(&r.n_asymmetry);
        let (nc, ncs) = opt(&r.n_cross);
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            f(r.gamma_fb_injected / TWO_PI),
            f(r.gamma_fb_fitted / TWO_PI),
            f(r.gamma_fb_sigma / TWO_PI),
            f(r.gamma_eff_fwhm / TWO_PI),
            f(r.energy_integral),
            f(r.n_anchored),
            f(r.n_anchored_sigma),
            f(r.n_truth),
            na,
            nas,
            nc,
            ncs,
            r.flags.join(";")
        ));
    }
    crate::io::write_atomic(&dir.join("rows.csv"), &rows)?;

    let mut theory = String::from("gamma_fb_hz,n_ideal,n_chain_truth\n");
    for ((g, i), c) in report
        .curves
        .gamma_fb
        .iter()
        .zip(&report.curves.ideal)
        .zip(&report.curves.chain_truth)
    {
        theory.push_str(&format!("{},{},{}\n", f(g / TWO_PI), f(*i), f(*c)));
    }
    crate::io::write_atomic(&dir.join("theory.csv"), &theory)?;

    let mut summary: Vec<(String, String)> = vec![
        ("eta_meas_truth".into(), f(report.eta_meas_truth)),
        ("eta_meas_fitted".into(), f(report.rates.eta_meas)),
        ("eta_meas_fitted_sigma".into(), f(report.rates.eta_meas_sigma)),
        ("gamma_star_hz".into(), f(report.gamma_star / TWO_PI)),
        ("conditional_bound".into(), f(report.conditional_bound)),
        (
            "gamma_tot_fitted_hz".into(),
            f(report.rates.gamma_tot / TWO_PI),
        ),
        (
            "gamma_meas_fitted_hz".into(),
            f(report.rates.gamma_meas / TWO_PI),
        ),
        (
            "n_min_anchored".into(),
            f(report
                .rows
                .iter()
                .map(|r| r.n_anchored)
                .fold(f64::INFINITY, f64::min)),
        ),
    ];
    for (k, reason) in &report.skipped {
        summary.push((format!("skipped_row_{k}"), reason.clone()));
    }
    crate::io::write_key_values(&dir.join("summary.txt"), &summary)?;
    crate::io::write_atomic(&dir.join("config.json"), &report.config.to_json())?;
    Ok(())
}
