//! Integer-factor decimation with a zero-phase anti-alias low-pass.
//!
//! The filter is a Hamming-windowed sinc with cutoff at 0.45 × target rate,
//! applied centered (symmetric taps, so zero phase) with reflected edges,
//! then decimated. Tap count scales with the decimation factor so the
//! transition band stays proportional to the target Nyquist.

use super::{EcgRecord, IngestError, N_CHANNELS};
use std::f64::consts::PI;

/// Taps per unit decimation factor; must keep the filter odd-length.
const TAPS_PER_FACTOR: usize = 24;

fn design_lowpass(cutoff_norm: f64, n_taps: usize) -> Vec<f64> {
    debug_assert!(n_taps % 2 == 1);
    let mid = (n_taps / 2) as isize;
    let mut taps = Vec::with_capacity(n_taps);
    for i in 0..n_taps as isize {
        let k = (i - mid) as f64;
        let sinc = if k == 0.0 {
            2.0 * cutoff_norm
        } else {
            (2.0 * PI * cutoff_norm * k).sin() / (PI * k)
        };
        let window = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n_taps - 1) as f64).cos();
        taps.push(sinc * window);
    }
    // Unity DC gain: constants pass through exactly.
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Sample with reflected boundaries (no repeated edge sample).
fn reflect(x: &[f32], idx: isize) -> f64 {
    let n = x.len() as isize;
    let mut i = idx;
    // At most two reflections are ever needed for our tap spans.
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    x[i as usize] as f64
}

/// Decimate a record to `target_hz`. The target must divide the source rate.
///
/// A no-op (clone) when the rates already match; otherwise the anti-alias
/// low-pass runs before decimation and acquisition metadata is preserved.
pub fn resample_ecg(rec: &EcgRecord, target_hz: u32) -> Result<EcgRecord, IngestError> {
    if target_hz == 0 || !rec.sampling_rate_hz.is_multiple_of(target_hz) {
        return Err(IngestError::NonIntegerFactor {
            source_hz: rec.sampling_rate_hz,
            target_hz,
        });
    }
    if target_hz == rec.sampling_rate_hz {
        return Ok(rec.clone());
    }

    let factor = (rec.sampling_rate_hz / target_hz) as usize;
    let cutoff_norm = 0.45 * target_hz as f64 / rec.sampling_rate_hz as f64;
    let n_taps = TAPS_PER_FACTOR * factor + 1;
    let taps = design_lowpass(cutoff_norm, n_taps);
    let mid = (n_taps / 2) as isize;

    let out_len = rec.n_samples / factor;
    let mut samples = Vec::with_capacity(N_CHANNELS * out_len);
    for c in 0..N_CHANNELS {
        let x = rec.channel(c);
        for j in 0..out_len {
            let center = (j * factor) as isize;
            let mut acc = 0.0f64;
            for (m, &t) in taps.iter().enumerate() {
                acc += t * reflect(x, center + m as isize - mid);
            }
            samples.push(acc as f32);
        }
    }

    Ok(EcgRecord {
        record_id: rec.record_id.clone(),
        patient_id: rec.patient_id.clone(),
        acquisition_time: rec.acquisition_time,
        sampling_rate_hz: target_hz,
        samples,
        n_samples: out_len,
    })
}
