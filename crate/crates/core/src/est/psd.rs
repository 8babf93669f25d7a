//! Averaged periodogram estimators for auto- and cross-spectra.
//!
//! Estimates are two-sided densities in angular frequency,
//! `S[k] = <|dt X[k]|^2> / (2 pi T)`, averaged over equal-length segments.
//! The sideband cross-estimator implements the defining averages
//! `S_rr(O) = <|i_r[-O]|^2>`, `S_bb(O) = <|i_b[O]|^2>`,
//! `S_rb(O) = <i_r[-O] i_b[O]>` (note: no conjugation in the cross term).

use num_complex::Complex64;

use crate::fftutil::{analysis_dft, freq_grid, shift_order};
use crate::spectrum::{CrossSpectrum, SpectralConvention, Spectrum};
use crate::trace::TimeTrace;
use crate::{Error, Result};

/// Split a trace into `floor(len / seg_len)` non-overlapping segments.
pub fn segment_trace(trace: &TimeTrace, seg_len: usize) -> Result<Vec<TimeTrace>> {
    if seg_len == 0 || seg_len > trace.len() {
        return Err(Error::InvalidParameter(format!(
            "segment length {seg_len} does not fit a trace of {} samples",
            trace.len()
        )));
    }
    (0..trace.len() / seg_len)
        .map(|k| trace.window(k * seg_len, seg_len))
        .collect()
}

/// Streaming mean accumulator for periodograms on a fixed grid.
pub struct PsdAccumulator {
    n_bins: usize,
    dt: f64,
    count: usize,
    sum: Vec<f64>,
}

impl PsdAccumulator {
    pub fn new(n_bins: usize, dt: f64) -> Self {
        PsdAccumulator {
            n_bins,
            dt,
            count: 0,
            sum: vec![0.0; n_bins],
        }
    }

    /// Add one segment's samples (any trace kind, promoted to complex).
    pub fn add_segment(&mut self, samples: &[Complex64]) -> Result<()> {
        if samples.len() != self.n_bins {
            return Err(Error::Mismatch(format!(
                "segment of {} samples into accumulator of {} bins",
                samples.len(),
                self.n_bins
            )));
        }
        let mut bins = samples.to_vec();
        analysis_dft(&mut bins);
        let norm = self.dt / (2.0 * std::f64::consts::PI * self.n_bins as f64);
        for (s, b) in self.sum.iter_mut().zip(&bins) {
            *s += b.norm_sqr() * norm;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Average the accumulated periodograms into a spectrum on the
    /// ascending two-sided grid; standard errors appear from two segments
    /// on.
    pub fn finish(&self) -> Result<Spectrum> {
        if self.count == 0 {
            return Err(Error::InvalidParameter(
                "no segments accumulated".into(),
            ));
        }
        let order = shift_order(self.n_bins);
        let natural_grid = freq_grid(self.n_bins, self.dt);
        let grid: Vec<f64> = order.iter().map(|&k| natural_grid[k]).collect();
        let n = self.count as f64;
        let values: Vec<f64> = order.iter().map(|&k| self.sum[k] / n).collect();
        let mut out = Spectrum::new(grid, values, SpectralConvention::TwoSidedAngular)?;
        if self.count >= 2 {
            out.stderr = Some(out.values.iter().map(|v| v / n.sqrt()).collect());
        }
        out.n_averages = self.count;
        Ok(out)
    }
}

/// Averaged-periodogram PSD of equal-length, equal-rate segments.
pub fn estimate_psd(segments: &[TimeTrace]) -> Result<Spectrum> {
    let first = segments
        .first()
        .ok_or_else(|| Error::InvalidParameter("no segments".into()))?;
    let mut acc = PsdAccumulator::new(first.len(), first.dt());
    for seg in segments {
        first.check_aligned(seg)?;
        acc.add_segment(&seg.to_complex())?;
    }
    let mut out = acc.finish()?;
    out.label = first.label.clone();
    Ok(out)
}

/// The three sideband spectra estimated jointly from one record pair.
#[derive(Debug, Clone)]
pub struct SidebandSpectra {
    pub s_rr: Spectrum,
    pub s_bb: Spectrum,
    pub s_rb: CrossSpectrum,
}

/// Estimate `S_rr`, `S_bb` and `S_rb` from the demodulated sideband records,
/// averaging over `floor(len / seg_len)` segments.
pub fn sideband_spectra(
    i_r: &TimeTrace,
    i_b: &TimeTrace,
    seg_len: usize,
) -> Result<SidebandSpectra> {
    i_r.check_aligned(i_b)?;
    let segs_r = segment_trace(i_r, seg_len)?;
    let segs_b = segment_trace(i_b, seg_len)?;
    let n = seg_len;
    let dt = i_r.dt();
    let norm = dt / (2.0 * std::f64::consts::PI * n as f64);
    let mut sum_rr = vec![0.0_f64; n];
    let mut sum_bb = vec![0.0_f64; n];
    let mut sum_rb = vec![Complex64::new(0.0, 0.0); n];
    for (sr, sb) in segs_r.iter().zip(&segs_b) {
        let mut r = sr.to_complex();
        let mut b = sb.to_complex();
        analysis_dft(&mut r);
        analysis_dft(&mut b);
        for k in 0..n {
            let r_neg = r[(n - k) % n]; // i_r at trace frequency -Omega_k
            sum_rr[k] += r_neg.norm_sqr() * norm;
            sum_bb[k] += b[k].norm_sqr() * norm;
            sum_rb[k] += r_neg * b[k] * norm;
        }
    }
    let count = segs_r.len();
    let cf = count as f64;
    let order = shift_order(n);
    let natural_grid = freq_grid(n, dt);
    let grid: Vec<f64> = order.iter().map(|&k| natural_grid[k]).collect();

    let build = |sum: &[f64], label: &str| -> Result<Spectrum> {
        let values: Vec<f64> = order.iter().map(|&k| sum[k] / cf).collect();
        let mut s = Spectrum::new(grid.clone(), values, SpectralConvention::TwoSidedAngular)?;
        if count >= 2 {
            s.stderr = Some(s.values.iter().map(|v| v / cf.sqrt()).collect());
        }
        s.n_averages = count;
        Ok(s.with_label(label))
    };
    let s_rr = build(&sum_rr, "s_rr")?;
    let s_bb = build(&sum_bb, "s_bb")?;

    let values: Vec<Complex64> = order.iter().map(|&k| sum_rb[k] / cf).collect();
    let mut s_rb = CrossSpectrum::new(grid, values, SpectralConvention::TwoSidedAngular)?;
    if count >= 2 {
        // per-bin error of the complex mean, from the estimated autos
        s_rb.stderr = Some(
            s_rr.values
                .iter()
                .zip(&s_bb.values)
                .map(|(a, b)| (a * b / cf).sqrt())
                .collect(),
        );
    }
    s_rb.n_averages = count;
    s_rb.label = "s_rb".into();
    Ok(SidebandSpectra { s_rr, s_bb, s_rb })
}

/// Just the cross term of [`sideband_spectra`].
pub fn estimate_cross_psd(
    i_r: &TimeTrace,
    i_b: &TimeTrace,
    seg_len: usize,
) -> Result<CrossSpectrum> {
    Ok(sideband_spectra(i_r, i_b, seg_len)?.s_rb)
}
