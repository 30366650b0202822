//! Causal convolution by FFT, with the linear (non-circular) result
//! extracted, plus the correlation that is its adjoint in backprop.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Reusable FFT plan for convolving length-`len` signals. The transform size
/// is the next power of two ≥ 2·len−1, so the circular product holds the full
/// linear convolution.
pub struct ConvPlan {
    len: usize,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

#[allow(clippy::len_without_is_empty)]
impl ConvPlan {
    pub fn new(len: usize) -> ConvPlan {
        assert!(len >= 1);
        let n = (2 * len - 1).next_power_of_two();
        let mut planner = FftPlanner::new();
        ConvPlan {
            len,
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    /// Signal length the plan serves.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Spectrum of a real signal zero-padded to the transform size.
    pub fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        debug_assert!(x.len() <= self.n);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.fwd.process(&mut buf);
        buf
    }

    /// First `len` samples of the linear convolution, from two spectra.
    pub fn conv_spectra(&self, a: &[Complex64], b: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), self.n);
        debug_assert_eq!(b.len(), self.n);
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        self.inv.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf[..self.len].iter().map(|c| c.re * scale).collect()
    }
}

/// y[t] = Σ_{l ≤ t} K[l]·u[t−l] + D·u[t].
pub fn causal_conv(u: &[f64], k: &[f64], d: f64, plan: &ConvPlan) -> Vec<f64> {
    assert_eq!(u.len(), plan.len());
    assert_eq!(k.len(), plan.len());
    let mut y = plan.conv_spectra(&plan.spectrum(u), &plan.spectrum(k));
    for (yt, &ut) in y.iter_mut().zip(u) {
        *yt += d * ut;
    }
    y
}

/// corr(a, b)[i] = Σ_s a[s+i]·b[s] for i = 0..len — the adjoint of causal
/// convolution: du = corr(dy, K) and dK = corr(dy, u).
pub fn correlate(a: &[f64], b: &[f64], plan: &ConvPlan) -> Vec<f64> {
    assert_eq!(a.len(), plan.len());
    assert_eq!(b.len(), plan.len());
    let rev_a: Vec<f64> = a.iter().rev().copied().collect();
    let mut c = plan.conv_spectra(&plan.spectrum(&rev_a), &plan.spectrum(b));
    c.reverse();
    c
}
