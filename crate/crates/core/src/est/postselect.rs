//! Burst detection on the DC witness and postselection of clean windows.
//!
//! Long acquisitions are contaminated by periodic excitation events. The DC
//! monitor channel sees them directly; windows of fixed length taken a set
//! delay after each detected burst (and ending before the next one) are cut
//! out of every signal record.

use crate::trace::{Samples, TimeTrace};
use crate::{Error, Result};

/// Parameters of the burst detector and window cutter.
#[derive(Debug, Clone, Copy)]
pub struct PostselectOptions {
    /// Analysis window length, s.
    pub window_s: f64,
    /// Dead time after a detected burst before a window may start, s.
    pub delay_s: f64,
    /// Envelope smoothing time of the detector, s.
    pub smooth_s: f64,
    /// Threshold in robust sigmas (median + k * MAD) on the envelope.
    pub k_mad: f64,
}

impl Default for PostselectOptions {
    fn default() -> Self {
        PostselectOptions {
            window_s: 0.3,
            delay_s: 0.35,
            smooth_s: 5e-3,
            k_mad: 8.0,
        }
    }
}

/// Result of [`postselect`].
#[derive(Debug, Clone)]
pub struct PostselectResult {
    /// Clean segments per input trace, aligned across traces.
    pub segments: Vec<Vec<TimeTrace>>,
    /// Detected burst onset times, s.
    pub burst_times: Vec<f64>,
    /// True when no burst was detected and the record was sliced as-is.
    pub clean: bool,
}

/// Cut clean windows out of `traces` based on bursts seen in `witness`.
///
/// One window starts `delay_s` after each detected burst onset and is kept
/// only if it ends before the next burst; with `n` bursts this yields at
/// most `n - 1` windows. A record with no detectable bursts is returned
/// sliced into contiguous windows with `clean` set.
pub fn postselect(
    traces: &[&TimeTrace],
    witness: &TimeTrace,
    opts: &PostselectOptions,
) -> Result<PostselectResult> {
    if traces.is_empty() {
        return Err(Error::InvalidParameter("no traces to postselect".into()));
    }
    for t in traces {
        witness.check_aligned(t)?;
    }
    if !(opts.window_s > 0.0) || opts.delay_s < 0.0 || !(opts.smooth_s > 0.0) {
        return Err(Error::InvalidParameter(
            "window, delay and smoothing must be positive".into(),
        ));
    }
    let dt = witness.dt();
    let win_len = (opts.window_s / dt).round() as usize;
    if win_len == 0 || win_len > witness.len() {
        return Err(Error::InvalidParameter(
            "window does not fit the record".into(),
        ));
    }

    let w = match &witness.samples {
        Samples::Real(v) => v.clone(),
        Samples::Complex(v) => v.iter().map(|x| x.norm()).collect(),
    };
    // moving-rms envelope
    let m = ((opts.smooth_s / dt).round() as usize).max(1);
    let mut envelope = Vec::with_capacity(w.len() / m);
    for chunk in w.chunks(m) {
        let rms = (chunk.iter().map(|x| x * x).sum::<f64>() / chunk.len() as f64).sqrt();
        envelope.push(rms);
    }
    let mut sorted = envelope.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let mut dev: Vec<f64> = envelope.iter().map(|e| (e - median).abs()).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mad = dev[dev.len() / 2];
    let threshold = median + opts.k_mad * mad.max(1e-300);

    // rising-edge burst onsets with a refractory period of one window
    let mut burst_times = Vec::new();
    let refractory = (opts.window_s / (m as f64 * dt)).ceil() as usize;
    let mut last_onset: Option<usize> = None;
    let mut above = false;
    for (j, e) in envelope.iter().enumerate() {
        let hot = *e > threshold;
        if hot && !above && last_onset.map_or(true, |l| j - l >= refractory) {
            burst_times.push(j as f64 * m as f64 * dt);
            last_onset = Some(j);
        }
        above = hot;
    }

    let mut windows: Vec<(usize, usize)> = Vec::new(); // sample ranges
    let clean = burst_times.is_empty();
    if clean {
        for k in 0..witness.len() / win_len {
            windows.push((k * win_len, win_len));
        }
    } else {
        for pair in burst_times.windows(2) {
            let start = ((pair[0] + opts.delay_s) / dt).round() as usize;
            let end_limit = (pair[1] / dt).floor() as usize;
            if start + win_len <= end_limit && start + win_len <= witness.len() {
                windows.push((start, win_len));
            }
        }
    }

    let segments = traces
        .iter()
        .map(|t| {
            windows
                .iter()
                .map(|&(start, len)| t.window(start, len))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PostselectResult {
        segments,
        burst_times,
        clean,
    })
}
