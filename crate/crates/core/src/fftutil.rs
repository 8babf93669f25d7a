//! DFT helpers pinned to the crate's Fourier convention.
//!
//! The analysis transform is `X[k] = sum_n x[n] e^{+i Omega_k t_n}` (the
//! unnormalized inverse FFT), so that a continuum density estimate reads
//! `S[k] = |dt X[k]|^2 / (2 pi T)`. Synthesis is the exact inverse.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// In-place analysis transform (kernel `e^{+i Omega t}`).
pub fn analysis_dft(x: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(x.len());
    fft.process(x);
}

/// Inverse of [`analysis_dft`]: recover time samples from bin amplitudes
/// scaled such that `analysis_dft(synthesis(a)) == len * a`.
pub fn synthesis_dft(a: &mut [Complex64]) {
    let n = a.len() as f64;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(a.len());
    fft.process(a);
    for v in a.iter_mut() {
        *v /= n;
    }
}

/// Signed DFT angular frequencies in natural (unshifted) bin order.
pub fn freq_grid(n: usize, dt: f64) -> Vec<f64> {
    let domega = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    (0..n)
        .map(|k| {
            let k_signed = if k <= (n - 1) / 2 {
                k as i64
            } else {
                k as i64 - n as i64
            };
            k_signed as f64 * domega
        })
        .collect()
}

/// Permutation putting natural bin order into ascending-frequency order.
pub fn shift_order(n: usize) -> Vec<usize> {
    let split = n.div_ceil(2); // first negative bin
    (split..n).chain(0..split).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn round_trip() {
        let x: Vec<Complex64> = (0..64)
            .map(|k| Complex64::new((k as f64).sin(), (k as f64 * 0.7).cos()))
            .collect();
        let mut a = x.clone();
        analysis_dft(&mut a);
        synthesis_dft(&mut a);
        for (u, v) in x.iter().zip(a.iter()) {
            assert_relative_eq!(u.re, v.re, epsilon = 1e-12);
            assert_relative_eq!(u.im, v.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_tone_lands_in_its_bin() {
        // x[n] = e^{-i Omega_5 t_n} has analysis amplitude N at bin 5
        let n = 128;
        let dt = 1e-3;
        let grid = freq_grid(n, dt);
        let w = grid[5];
        let mut x: Vec<Complex64> = (0..n)
            .map(|j| Complex64::from_polar(1.0, -w * j as f64 * dt))
            .collect();
        analysis_dft(&mut x);
        assert_relative_eq!(x[5].norm(), n as f64, max_relative = 1e-9);
        let rest: f64 = x
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != 5)
            .map(|(_, v)| v.norm())
            .sum();
        assert!(rest < 1e-6 * n as f64);
    }

    #[test]
    fn shift_order_is_ascending() {
        for n in [7usize, 8, 9, 64] {
            let grid = freq_grid(n, 0.5);
            let order = shift_order(n);
            let shifted: Vec<f64> = order.iter().map(|&k| grid[k]).collect();
            assert!(shifted.windows(2).all(|w| w[1] > w[0]), "n = {n}");
        }
    }
}
