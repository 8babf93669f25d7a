//! Carrier phase correction and cross-spectrum frame calibration.
//!
//! A common local-oscillator phase `theta(t)` multiplies both sideband
//! envelopes; it cancels in the auto-spectra but enters the cross spectrum
//! as `e^{2 i theta}`, so uncorrected drift averages the cross term away.
//! The carrier witness removes the time-dependent part; a coherent tone
//! pins the remaining static frame angle (known only up to `2 theta`).

use num_complex::Complex64;

use crate::spectrum::CrossSpectrum;
use crate::trace::TimeTrace;
use crate::{Error, Result};

/// Rotate both sideband records by the negative instantaneous carrier
/// phase, removing common local-oscillator drift.
pub fn phase_correct(
    i_r: &TimeTrace,
    i_b: &TimeTrace,
    i_car: &TimeTrace,
) -> Result<(TimeTrace, TimeTrace)> {
    i_r.check_aligned(i_b)?;
    i_r.check_aligned(i_car)?;
    let car = i_car.to_complex();
    let mags: Vec<f64> = car.iter().map(|v| v.norm()).collect();
    let mut sorted = mags.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let min = sorted[0];
    if median <= 0.0 || min < 1e-3 * median {
        return Err(Error::LowSnr(format!(
            "carrier magnitude dips to {min:.3e} (median {median:.3e}); phase undefined"
        )));
    }
    let rotate = |trace: &TimeTrace, label: &str| -> Result<TimeTrace> {
        let v: Vec<Complex64> = trace
            .to_complex()
            .iter()
            .zip(&car)
            .map(|(x, c)| x * Complex64::from_polar(1.0, -c.arg()))
            .collect();
        TimeTrace::complex(trace.sample_rate, v, label)
    };
    Ok((
        rotate(i_r, "i_r_corrected")?,
        rotate(i_b, "i_b_corrected")?,
    ))
}

/// Recover the static detection-frame angle from a coherent calibration
/// tone in the cross spectrum and return the de-rotated spectrum.
///
/// The tone makes the true cross term real-positive at its frequency, so
/// `2 theta = arg S_rb(Omega_tone)`; theta is returned in `(-pi/2, pi/2]`.
pub fn calibrate_cross_frame(
    s_rb: &CrossSpectrum,
    tone_freq_hz: f64,
) -> Result<(f64, CrossSpectrum)> {
    let w0 = 2.0 * std::f64::consts::PI * tone_freq_hz;
    let k0 = s_rb
        .grid
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - w0).abs().partial_cmp(&(b.1 - w0).abs()).unwrap())
        .map(|(k, _)| k)
        .ok_or_else(|| Error::InvalidParameter("empty cross spectrum".into()))?;
    if (s_rb.grid[k0] - w0).abs() > (s_rb.grid[1] - s_rb.grid[0]).abs() {
        return Err(Error::Resolution(format!(
            "tone at {tone_freq_hz} Hz falls outside the spectral grid"
        )));
    }
    // tone must stand out of the local cross-spectral magnitude
    let lo = k0.saturating_sub(100);
    let hi = (k0 + 100).min(s_rb.values.len() - 1);
    let mut neighborhood: Vec<f64> = (lo..=hi)
        .filter(|k| (*k as i64 - k0 as i64).abs() > 2)
        .map(|k| s_rb.values[k].norm())
        .collect();
    neighborhood.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let floor = neighborhood[neighborhood.len() / 2];
    let tone_mag = s_rb.values[k0].norm();
    if tone_mag < 10.0 * floor {
        return Err(Error::LowSnr(format!(
            "calibration tone magnitude {tone_mag:.3e} below 10x the local floor {floor:.3e}"
        )));
    }
    let theta = 0.5 * s_rb.values[k0].arg();
    Ok((theta, s_rb.rotated(2.0 * theta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::SpectralConvention;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn phase_correction_removes_common_drift() {
        let rate = 1e5;
        let n = 4000;
        let drift = 200.0; // rad/s
        let base: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new((k as f64 * 0.01).sin(), (k as f64 * 0.013).cos()))
            .collect();
        let with_drift: Vec<Complex64> = base
            .iter()
            .enumerate()
            .map(|(k, v)| v * Complex64::from_polar(1.0, drift * k as f64 / rate))
            .collect();
        let car: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, drift * k as f64 / rate))
            .collect();
        let i_r = TimeTrace::complex(rate, with_drift.clone(), "r").unwrap();
        let i_b = TimeTrace::complex(rate, with_drift, "b").unwrap();
        let i_car = TimeTrace::complex(rate, car, "c").unwrap();
        let (r2, _) = phase_correct(&i_r, &i_b, &i_car).unwrap();
        for (a, b) in r2.to_complex().iter().zip(base.iter()) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-10);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn dead_carrier_is_low_snr() {
        let rate = 1e5;
        let n = 100;
        let sig = TimeTrace::complex(rate, vec![Complex64::new(1.0, 0.0); n], "s").unwrap();
        let mut car = vec![Complex64::new(1.0, 0.0); n];
        car[50] = Complex64::new(0.0, 0.0);
        let i_car = TimeTrace::complex(rate, car, "c").unwrap();
        assert!(matches!(
            phase_correct(&sig, &sig, &i_car),
            Err(Error::LowSnr(_))
        ));
    }

    #[test]
    fn frame_angle_recovered_from_tone() {
        let theta = 0.42;
        let grid: Vec<f64> = (1..2000).map(|k| k as f64 * 2.0 * PI * 50.0).collect();
        let tone_hz = 50.0 * 1000.0;
        let values: Vec<Complex64> = grid
            .iter()
            .map(|&w| {
                let base = if (w / (2.0 * PI) - tone_hz).abs() < 1.0 {
                    Complex64::new(100.0, 0.0)
                } else {
                    Complex64::new(0.3, 0.1)
                };
                base * Complex64::from_polar(1.0, 2.0 * theta)
            })
            .collect();
        let s = CrossSpectrum::new(grid, values, SpectralConvention::TwoSidedAngular).unwrap();
        let (got, rotated) = calibrate_cross_frame(&s, tone_hz).unwrap();
        assert_relative_eq!(got, theta, max_relative = 1e-9);
        let k0 = rotated
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap()
            .0;
        assert!(rotated.values[k0].im.abs() < 1e-9 * rotated.values[k0].re);
    }

    #[test]
    fn weak_tone_is_low_snr() {
        let grid: Vec<f64> = (1..500).map(|k| k as f64 * 100.0).collect();
        let values = vec![Complex64::new(1.0, 0.2); 499];
        let s = CrossSpectrum::new(grid, values, SpectralConvention::TwoSidedAngular).unwrap();
        assert!(matches!(
            calibrate_cross_frame(&s, 100.0 / (2.0 * PI) * 50.0),
            Err(Error::LowSnr(_))
        ));
    }
}
