//! Primitive layers of the encoder block: time-distributed affine maps,
//! layer normalization over channels, tanh-approximated GELU, and inverted
//! dropout. Activations are (rows × len) matrices stored row-major, one
//! contiguous time series per row; all backward functions accumulate into
//! their gradient buffers.

use rand::Rng;

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

/// y (out×len) = W (out×in) · x (in×len) + b broadcast over time.
pub fn affine_forward(
    w: &[f64],
    b: &[f64],
    x: &[f64],
    in_dim: usize,
    out_dim: usize,
    len: usize,
    y: &mut [f64],
) {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(b.len(), out_dim);
    debug_assert_eq!(x.len(), in_dim * len);
    debug_assert_eq!(y.len(), out_dim * len);
    for o in 0..out_dim {
        let y_row = &mut y[o * len..(o + 1) * len];
        y_row.fill(b[o]);
        for i in 0..in_dim {
            let wv = w[o * in_dim + i];
            let x_row = &x[i * len..(i + 1) * len];
            for (yt, xt) in y_row.iter_mut().zip(x_row) {
                *yt += wv * xt;
            }
        }
    }
}

/// Accumulate dW, db, dx for [`affine_forward`].
#[allow(clippy::too_many_arguments)]
pub fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    in_dim: usize,
    out_dim: usize,
    len: usize,
    dw: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    for o in 0..out_dim {
        let dy_row = &dy[o * len..(o + 1) * len];
        db[o] += dy_row.iter().sum::<f64>();
        for i in 0..in_dim {
            let x_row = &x[i * len..(i + 1) * len];
            dw[o * in_dim + i] += dy_row.iter().zip(x_row).map(|(g, v)| g * v).sum::<f64>();
            let wv = w[o * in_dim + i];
            let dx_row = &mut dx[i * len..(i + 1) * len];
            for (dxt, g) in dx_row.iter_mut().zip(dy_row) {
                *dxt += wv * g;
            }
        }
    }
}

/// Intermediates needed by the layer-norm backward pass.
#[derive(Debug)]
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalize each time step over the channel axis, then scale and shift.
pub fn layer_norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    h: usize,
    len: usize,
    y: &mut [f64],
) -> LayerNormCache {
    debug_assert_eq!(x.len(), h * len);
    debug_assert_eq!(y.len(), h * len);
    let mut xhat = vec![0.0; h * len];
    let mut inv_std = vec![0.0; len];
    for t in 0..len {
        let mut mean = 0.0;
        for c in 0..h {
            mean += x[c * len + t];
        }
        mean /= h as f64;
        let mut var = 0.0;
        for c in 0..h {
            let d = x[c * len + t] - mean;
            var += d * d;
        }
        var /= h as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[t] = is;
        for c in 0..h {
            let xh = (x[c * len + t] - mean) * is;
            xhat[c * len + t] = xh;
            y[c * len + t] = gamma[c] * xh + beta[c];
        }
    }
    LayerNormCache { xhat, inv_std }
}

/// Accumulate dγ, dβ, dx for [`layer_norm_forward`].
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    dy: &[f64],
    h: usize,
    len: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dx: &mut [f64],
) {
    let hf = h as f64;
    for t in 0..len {
        let mut m1 = 0.0; // mean of dxhat
        let mut m2 = 0.0; // mean of dxhat ∘ xhat
        for c in 0..h {
            let g = dy[c * len + t];
            let xh = cache.xhat[c * len + t];
            let dxh = g * gamma[c];
            m1 += dxh;
            m2 += dxh * xh;
            dgamma[c] += g * xh;
            dbeta[c] += g;
        }
        m1 /= hf;
        m2 /= hf;
        let is = cache.inv_std[t];
        for c in 0..h {
            let dxh = dy[c * len + t] * gamma[c];
            dx[c * len + t] += is * (dxh - m1 - cache.xhat[c * len + t] * m2);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044715;

/// GELU (tanh approximation), elementwise.
pub fn gelu_forward(x: &[f64], y: &mut [f64]) {
    for (yt, &v) in y.iter_mut().zip(x) {
        let u = GELU_C * (v + GELU_A * v * v * v);
        *yt = 0.5 * v * (1.0 + u.tanh());
    }
}

/// Accumulate dx for [`gelu_forward`] given the forward input.
pub fn gelu_backward(x: &[f64], dy: &[f64], dx: &mut [f64]) {
    for ((dxt, &v), &g) in dx.iter_mut().zip(x).zip(dy) {
        let u = GELU_C * (v + GELU_A * v * v * v);
        let th = u.tanh();
        let sech2 = 1.0 - th * th;
        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *dxt += g * (0.5 * (1.0 + th) + 0.5 * v * sech2 * du);
    }
}

/// Inverted dropout in place; returns the keep mask (scaled by 1/(1−rate))
/// only when the rate is positive, so a zero rate consumes no randomness.
pub fn dropout_forward<R: Rng>(x: &mut [f64], rate: f64, rng: &mut R) -> Option<Vec<f64>> {
    debug_assert!((0.0..1.0).contains(&rate));
    if rate == 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = x
        .iter_mut()
        .map(|v| {
            let m = if rng.random_range(0.0..1.0) < keep {
                1.0 / keep
            } else {
                0.0
            };
            *v *= m;
            m
        })
        .collect();
    Some(mask)
}

/// Scale upstream gradients by the dropout mask, in place.
pub fn dropout_backward(dy: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(mask) = mask {
        for (g, m) in dy.iter_mut().zip(mask) {
            *g *= m;
        }
    }
}
