//! Small signal-processing helpers shared by the beamformers and the metrics.
//!
//! All transforms are unnormalized in the forward direction and scaled by `1/N`
//! in the inverse direction, so `ifft(fft(x)) == x`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// In-place forward DFT, `X[k] = sum_j x[j] exp(-2 pi i k j / N)`.
pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    forward_plan(buf.len()).process(buf);
}

/// In-place inverse DFT including the `1/N` factor.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    inverse_plan(buf.len()).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Zero-padded (or truncated) DFT of a real sequence.
pub fn real_dft(x: &[f64], len: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x
        .iter()
        .take(len)
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    buf.resize(len, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf);
    buf
}

/// Full linear convolution of two real sequences, computed through the FFT.
/// The result has `a.len() + b.len() - 1` samples.
pub fn convolve_full(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let fa = real_dft(a, out_len);
    let fb = real_dft(b, out_len);
    let mut prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    ifft_in_place(&mut prod);
    prod.into_iter().map(|c| c.re).collect()
}

/// Analytic signal `x + i H{x}` via the one-sided spectrum.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = real_dft(x, n);
    // Positive frequencies doubled, negative ones cleared; DC and Nyquist kept.
    let half = n / 2;
    for (k, v) in spec.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == half) {
            continue;
        }
        if k <= (n - 1) / 2 {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    ifft_in_place(&mut spec);
    spec
}

/// Magnitude of the analytic signal.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    analytic_signal(x).into_iter().map(|c| c.norm()).collect()
}

/// Normalized root-mean-square error `||a - b|| / ||reference||`.
pub fn nrmse(a: &[f64], reference: &[f64]) -> f64 {
    let n = a.len().min(reference.len());
    let err: f64 = (0..n).map(|i| (a[i] - reference[i]).powi(2)).sum();
    let norm: f64 = reference.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return if err == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (err / norm).sqrt()
}

/// Index of the largest element (first occurrence).
pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in x.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Fractional positions where `x` falls below `level` on each side of `peak`,
/// found by linear interpolation between the bracketing samples. `None` on a
/// side means the curve never drops below `level` before the edge.
pub fn level_crossings(x: &[f64], peak: usize, level: f64) -> (Option<f64>, Option<f64>) {
    let mut left = None;
    let mut i = peak;
    while i > 0 {
        if x[i - 1] < level {
            let (lo, hi) = (x[i - 1], x[i]);
            left = Some((i - 1) as f64 + (level - lo) / (hi - lo));
            break;
        }
        i -= 1;
    }
    let mut right = None;
    let mut j = peak;
    while j + 1 < x.len() {
        if x[j + 1] < level {
            let (hi, lo) = (x[j], x[j + 1]);
            right = Some(j as f64 + (hi - level) / (hi - lo));
            break;
        }
        j += 1;
    }
    (left, right)
}

/// Half-power (-3 dB) main-lobe width of an envelope, in samples.
pub fn half_power_width(env: &[f64]) -> Option<f64> {
    let peak = argmax(env)?;
    let level = env[peak] / std::f64::consts::SQRT_2;
    match level_crossings(env, peak, level) {
        (Some(l), Some(r)) => Some(r - l),
        _ => None,
    }
}
