//! Periodic low-frequency disturbance bursts and their DC witness channel.
//!
//! Models the periodic excitation events contaminating long acquisitions:
//! an exponentially decaying low-frequency oscillation is added to the
//! signal records, and a clean copy (plus a small witness noise floor) is
//! returned as the DC monitor used for postselection.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::trace::{Samples, TimeTrace};
use crate::{Error, Result};

/// Shape of one disturbance burst.
#[derive(Debug, Clone, Copy)]
pub struct BurstSpec {
    /// Nominal burst length, s.
    pub duration_s: f64,
    /// Initial oscillation amplitude, trace units.
    pub amplitude: f64,
    /// Oscillation frequency of the burst, Hz.
    pub carrier_hz: f64,
    /// Exponential amplitude decay time, s.
    pub decay_s: f64,
}

impl BurstSpec {
    /// Burst with a 300 Hz ring-down decaying over a fifth of its length.
    pub fn new(duration_s: f64, amplitude: f64) -> Result<Self> {
        if !(duration_s > 0.0) || !(amplitude > 0.0) {
            return Err(Error::InvalidParameter(
                "burst duration and amplitude must be > 0".into(),
            ));
        }
        Ok(BurstSpec {
            duration_s,
            amplitude,
            carrier_hz: 300.0,
            decay_s: duration_s / 5.0,
        })
    }

    fn waveform(&self, t_local: f64) -> f64 {
        if t_local < 0.0 || t_local >= self.duration_s {
            return 0.0;
        }
        self.amplitude
            * (-t_local / self.decay_s).exp()
            * (2.0 * std::f64::consts::PI * self.carrier_hz * t_local).sin()
    }
}

/// Add `floor(duration / period)` bursts (one per period, starting at the
/// period boundaries) to a record and return the contaminated record
/// together with the DC witness channel.
pub fn inject_bursts(
    trace: &TimeTrace,
    period_s: f64,
    spec: &BurstSpec,
) -> Result<(TimeTrace, TimeTrace)> {
    if !(period_s > spec.duration_s) {
        return Err(Error::InvalidParameter(
            "burst period must exceed the burst duration".into(),
        ));
    }
    let dt = trace.dt();
    let n = trace.len();
    let n_bursts = (trace.duration() / period_s).floor() as usize;
    let mut wave = vec![0.0_f64; n];
    for b in 0..n_bursts {
        let t0 = b as f64 * period_s;
        let k0 = (t0 / dt).round() as usize;
        let k1 = ((t0 + spec.duration_s) / dt).ceil() as usize;
        for k in k0..k1.min(n) {
            wave[k] += spec.waveform(k as f64 * dt - t0);
        }
    }

    let contaminated = match &trace.samples {
        Samples::Real(v) => TimeTrace::real(
            trace.sample_rate,
            v.iter().zip(&wave).map(|(x, w)| x + w).collect(),
            trace.label.clone(),
        )?,
        Samples::Complex(v) => TimeTrace::complex(
            trace.sample_rate,
            v.iter()
                .zip(&wave)
                .map(|(x, w)| x + Complex64::new(*w, 0.0))
                .collect(),
            trace.label.clone(),
        )?,
    };

    // witness: the clean burst train over a small noise floor
    let mut rng = ChaCha12Rng::seed_from_u64(0xDC);
    let floor = 1e-3 * spec.amplitude;
    let witness: Vec<f64> = wave
        .iter()
        .map(|w| {
            let x: f64 = StandardNormal.sample(&mut rng);
            w + floor * x
        })
        .collect();
    let witness = TimeTrace::real(trace.sample_rate, witness, "i_dc")?;
    Ok((contaminated.with_units(trace.units.clone()), witness))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_trace(duration: f64) -> TimeTrace {
        let rate = 10_000.0;
        let n = (duration * rate) as usize;
        TimeTrace::real(rate, vec![0.0; n], "x").unwrap()
    }

    #[test]
    fn burst_count_is_floor_of_periods() {
        let trace = quiet_trace(5.0);
        let spec = BurstSpec::new(0.2, 1.0).unwrap();
        let (_, witness) = inject_bursts(&trace, 1.0, &spec).unwrap();
        // count threshold crossings of the smoothed witness envelope
        let w = match &witness.samples {
            Samples::Real(v) => v.clone(),
            _ => unreachable!(),
        };
        let mut bursts = 0;
        let mut inside = false;
        for chunk in w.chunks(100) {
            let rms = (chunk.iter().map(|x| x * x).sum::<f64>() / chunk.len() as f64).sqrt();
            let hot = rms > 0.05;
            if hot && !inside {
                bursts += 1;
            }
            inside = hot;
        }
        assert_eq!(bursts, 5);
    }

    #[test]
    fn gaps_between_bursts_stay_clean() {
        let trace = quiet_trace(3.0);
        let spec = BurstSpec::new(0.2, 1.0).unwrap();
        let (contaminated, _) = inject_bursts(&trace, 1.0, &spec).unwrap();
        let v = match &contaminated.samples {
            Samples::Real(v) => v.clone(),
            _ => unreachable!(),
        };
        // second half of each period (well past the decay) is untouched
        let rate = contaminated.sample_rate;
        for b in 0..3 {
            let k0 = ((b as f64 + 0.5) * rate) as usize;
            let k1 = ((b as f64 + 0.9) * rate) as usize;
            assert!(v[k0..k1].iter().all(|x| x.abs() < 1e-9));
        }
    }

    #[test]
    fn period_must_exceed_duration() {
        let trace = quiet_trace(2.0);
        let spec = BurstSpec::new(0.5, 1.0).unwrap();
        assert!(inject_bursts(&trace, 0.3, &spec).is_err());
    }
}
