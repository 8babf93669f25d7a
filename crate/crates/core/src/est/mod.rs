//! Analysis stack: spectral estimation, conditioning, fits and the three
//! independent phonon thermometers.

mod fits;
mod lm;
mod phase;
mod postselect;
mod psd;

pub use fits::{
    anchor_calibration, asymmetry_double_lo, closed_loop_meter_psd, closed_loop_true_psd,
    energy_integral, fit_cross_spectrum, fit_inloop_gain, fit_reference_homodyne,
    fit_sideband_pair, occupation_from_spectrum, rates_from_reference, true_displacement_psd,
    FitResult, FrequencyMask, RateEstimate,
};
pub use lm::{levenberg_marquardt, LmFit, LmOptions};
pub use phase::{calibrate_cross_frame, phase_correct};
pub use postselect::{postselect, PostselectOptions, PostselectResult};
pub use psd::{
    estimate_cross_psd, estimate_psd, segment_trace, sideband_spectra, PsdAccumulator,
    SidebandSpectra,
};
