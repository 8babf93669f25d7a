//! `levcool` — command-line harness for the feedback-cooled nanoparticle twin.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use levcool::est::{fit_cross_spectrum, fit_sideband_pair, sideband_spectra};
use levcool::harness::{
    emit_report, run_gain_sweep, run_squashing_demo, ExperimentConfig,
};
use levcool::model::{
    cold_damping_occupation, conditional_occupation, optimal_cold_damping_gain, ScaleR,
};
use levcool::sim::{simulate_closed_loop, synthesize_heterodyne, HetSynthConfig, SimConfig};
use levcool::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Parser)]
#[command(
    name = "levcool",
    about = "Digital twin of a feedback-cooled levitated nanoparticle",
    version
)]
struct Cli {
    /// Experiment configuration (JSON). Defaults to the built-in nominal
    /// experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel sweep rows (0 = automatic).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the analytic cooling curves and bounds.
    Model,
    /// Time-domain closed-loop run at the anchor-row gain; writes z/y traces.
    Simulate,
    /// Synthesize heterodyne sideband records at the anchor-row state.
    SynthHet,
    /// Run the thermometers on heterodyne traces found in --out.
    Estimate,
    /// Full gain sweep with anchored occupations and theory overlays.
    Sweep,
    /// Analytic noise-squashing demonstration table.
    Squash,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::nominal(),
    };
    if let Some(seed) = cli.seed {
        cfg.sweep.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

/// Gain of the anchor row, rad/s.
fn anchor_gain(cfg: &ExperimentConfig) -> f64 {
    TWO_PI * cfg.sweep.gamma_fb_hz[cfg.sweep.anchor_index]
}

fn cmd_model(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = cfg.params()?;
    let budget = cfg.rate_budget()?;
    let gamma_star = optimal_cold_damping_gain(&budget);
    let bound = conditional_occupation(budget.eta_meas())?;
    ensure_dir(out)?;

    let mut csv = String::from("gamma_fb_hz,gamma_eff_hz,n_ideal\n");
    let (lo, hi) = (gamma_star / 30.0, 10.0 * gamma_star);
    for k in 0..400 {
        let g = lo * (hi / lo).powf(k as f64 / 399.0);
        let n = cold_damping_occupation(params.gamma_m + g, &budget)?;
        csv.push_str(&format!(
            "{:.12e},{:.12e},{:.12e}\n",
            g / TWO_PI,
            (params.gamma_m + g) / TWO_PI,
            n
        ));
    }
    levcool::io::write_atomic(&out.join("cooling_curve.csv"), &csv)?;

    let summary = vec![
        ("omega_z_hz".to_string(), format!("{:.12e}", params.omega_z / TWO_PI)),
        ("gamma_m_hz".to_string(), format!("{:.12e}", params.gamma_m / TWO_PI)),
        ("z_zpf_m".to_string(), format!("{:.12e}", params.z_zpf_sq().sqrt())),
        ("gamma_tot_hz".to_string(), format!("{:.12e}", budget.gamma_tot() / TWO_PI)),
        ("gamma_meas_hz".to_string(), format!("{:.12e}", budget.gamma_meas() / TWO_PI)),
        ("eta_meas".to_string(), format!("{:.12e}", budget.eta_meas())),
        ("gamma_star_hz".to_string(), format!("{:.12e}", gamma_star / TWO_PI)),
        (
            "n_min_ideal".to_string(),
            format!(
                "{:.12e}",
                cold_damping_occupation(params.gamma_m + gamma_star, &budget)?
            ),
        ),
        ("conditional_bound".to_string(), format!("{:.12e}", bound)),
    ];
    levcool::io::write_key_values(&out.join("model_summary.txt"), &summary)
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = cfg.params()?;
    let budget = cfg.rate_budget()?;
    let mut sim = SimConfig::new(params, budget, cfg.chain.clone(), anchor_gain(cfg));
    sim.seed = cfg.sweep.seed;
    sim.duration = 0.05;
    let rec = simulate_closed_loop(&sim)?;
    ensure_dir(out)?;
    levcool::io::write_trace(&out.join("z.csv"), &rec.z)?;
    levcool::io::write_trace(&out.join("i_hom.csv"), &rec.measurement)
}

fn cmd_synth_het(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = cfg.params()?;
    let budget = cfg.rate_budget()?;
    let gamma_eff = params.gamma_m + anchor_gain(cfg);
    let n_bar = cold_damping_occupation(gamma_eff, &budget)?;
    let mut het = HetSynthConfig::new(params.clone(), n_bar, gamma_eff, ScaleR::Physical);
    let peak = levcool::model::heterodyne_sideband_psd(
        params.omega_z,
        &params,
        gamma_eff,
        n_bar,
        ScaleR::Physical,
        0.0,
        levcool::model::Sideband::Stokes,
    );
    het.bg_r = 0.3 * peak;
    het.bg_b = 0.3 * peak;
    het.duration = cfg.sweep.het_duration_s;
    het.seed = cfg.sweep.seed;
    let rec = synthesize_heterodyne(&het)?;
    ensure_dir(out)?;
    levcool::io::write_trace(&out.join("i_r.csv"), &rec.i_r)?;
    levcool::io::write_trace(&out.join("i_b.csv"), &rec.i_b)?;
    levcool::io::write_trace(&out.join("i_car.csv"), &rec.i_car)
}

fn cmd_estimate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let i_r = levcool::io::read_trace(&out.join("i_r.csv"))?;
    let i_b = levcool::io::read_trace(&out.join("i_b.csv"))?;
    let mask = cfg.mask();
    let spectra = sideband_spectra(&i_r, &i_b, 1 << 14)?;
    let (shape, asym) = fit_sideband_pair(&spectra.s_rr, &spectra.s_bb, &mask)?;
    let (_, cross) = fit_cross_spectrum(&spectra.s_rb, &mask)?;
    let (omega_z, omega_sig) = shape.get("omega_z")?;
    let (gamma_eff, gamma_sig) = shape.get("gamma_eff")?;
    let summary = vec![
        ("omega_z_hz".to_string(), format!("{:.12e}", omega_z / TWO_PI)),
        ("omega_z_sigma_hz".to_string(), format!("{:.12e}", omega_sig / TWO_PI)),
        ("gamma_eff_hz".to_string(), format!("{:.12e}", gamma_eff / TWO_PI)),
        ("gamma_eff_sigma_hz".to_string(), format!("{:.12e}", gamma_sig / TWO_PI)),
        ("n_asymmetry".to_string(), format!("{:.12e}", asym.n_bar)),
        ("n_asymmetry_sigma".to_string(), format!("{:.12e}", asym.sigma)),
        ("n_cross".to_string(), format!("{:.12e}", cross.n_bar)),
        ("n_cross_sigma".to_string(), format!("{:.12e}", cross.sigma)),
    ];
    levcool::io::write_key_values(&out.join("estimate_summary.txt"), &summary)
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let report = run_gain_sweep(cfg)?;
    emit_report(&report, out)
}

fn cmd_squash(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = cfg.params()?;
    let budget = cfg.rate_budget()?;
    let gamma_star = optimal_cold_damping_gain(&budget);
    let gains: Vec<f64> = [0.1, 0.5, 1.0, 3.0, 10.0]
        .iter()
        .map(|f| f * gamma_star)
        .collect();
    let rows = run_squashing_demo(&params, &budget, &cfg.chain, &gains)?;
    ensure_dir(out)?;
    let mut csv =
        String::from("gamma_fb_hz,inloop_min_over_floor,true_over_force_at_min,omega_min_hz\n");
    for r in &rows {
        csv.push_str(&format!(
            "{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.gamma_fb / TWO_PI,
            r.inloop_min_over_floor,
            r.true_over_force_at_min,
            r.omega_min / TWO_PI
        ));
    }
    levcool::io::write_atomic(&out.join("squashing.csv"), &csv)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Model => cmd_model(&cfg, &cli.out),
        Command::Simulate => cmd_simulate(&cfg, &cli.out),
        Command::SynthHet => cmd_synth_het(&cfg, &cli.out),
        Command::Estimate => cmd_estimate(&cfg, &cli.out),
        Command::Sweep => cmd_sweep(&cfg, &cli.out),
        Command::Squash => cmd_squash(&cfg, &cli.out),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) => 2,
        Error::Io { .. } | Error::Parse { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
