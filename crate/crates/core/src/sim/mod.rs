//! Synthetic data generation: time-domain closed-loop simulation and
//! frequency-domain synthesis of correlated heterodyne sideband records.

mod bursts;
mod closed_loop;
mod heterodyne;

pub use bursts::{inject_bursts, BurstSpec};
pub use closed_loop::{
    boundedness_probe, inloop_measurement_psd, simulate_closed_loop, Boundedness,
    ClosedLoopEngine, ClosedLoopRecord, ForceTone, SimConfig,
};
pub use heterodyne::{synthesize_heterodyne, CalTone, HetRecord, HetSynthConfig, LoSign};
