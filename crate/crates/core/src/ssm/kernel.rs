//! Diagonal state-space coefficients: initialization, zero-order-hold
//! discretization, the closed-form convolution kernel, and its gradients.
//!
//! Per model channel the layer owns N complex poles λₙ = −exp(ρₙ) + i·π·n
//! (imaginary parts fixed by index), a log-domain timestep, N complex output
//! coefficients Cₙ and a real skip scalar D. Discretization maps (λ, dt) to
//! Ā = exp(dt·λ), B̄ = (Ā−1)/λ, and the kernel is the impulse response
//! K[l] = 2·Re(Σₙ Cₙ·B̄ₙ·Āₙˡ).

use super::SsmError;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

/// Poles with modulus below this are rejected rather than discretized.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Switch to series evaluation of (e^z−1)/z below this |z|.
const SERIES_RADIUS: f64 = 1e-3;

/// Initial real part of every pole: Re(λ) = −1/2.
const INIT_RHO: f64 = -std::f64::consts::LN_2; // ln(1/2)

/// Timestep init range: dt log-uniform in [0.001, 0.1].
const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

/// Fixed pole frequencies ωₙ = π·n for n = 0..N−1.
pub fn omegas(n: usize) -> Vec<f64> {
    (0..n).map(|i| PI * i as f64).collect()
}

/// φ(z) = (e^z − 1)/z, series-evaluated near zero to avoid cancellation.
fn phi(z: Complex64) -> Complex64 {
    if z.norm() < SERIES_RADIUS {
        // 1 + z/2 + z²/6 + z³/24 + z⁴/120
        1.0 + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z * (1.0 / 120.0))))
    } else {
        (z.exp() - 1.0) / z
    }
}

/// φ′(z) = ((z−1)e^z + 1)/z², series-evaluated near zero.
fn phi_prime(z: Complex64) -> Complex64 {
    if z.norm() < SERIES_RADIUS {
        // 1/2 + z/3 + z²/8 + z³/30 + z⁴/144
        0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z * (1.0 / 144.0))))
    } else {
        (z.exp() * (z - 1.0) + 1.0) / (z * z)
    }
}

/// Zero-order-hold discretization of one pole: Ā = exp(dt·λ),
/// B̄ = (Ā − 1)/λ (input coefficient B fixed to 1).
pub fn discretize(lambda: Complex64, dt: f64) -> Result<(Complex64, Complex64), SsmError> {
    debug_assert!(lambda.re < 0.0, "pole must have negative real part");
    debug_assert!(dt > 0.0, "timestep must be positive");
    if lambda.norm() < DEGENERATE_EPS {
        return Err(SsmError::DegenerateLambda {
            lambda_norm: lambda.norm(),
        });
    }
    let z = lambda * dt;
    Ok((z.exp(), phi(z) * dt))
}

/// Initialize one channel's coefficients in place: ρ so that Re(λ) = −1/2,
/// dt log-uniform in [0.001, 0.1], C complex normal scaled by 1/√N, D = 1.
pub fn init_ssm_channel<R: Rng>(
    rho: &mut [f64],
    log_dt: &mut f64,
    c_re: &mut [f64],
    c_im: &mut [f64],
    d: &mut f64,
    rng: &mut R,
) {
    let n = rho.len();
    assert!(n >= 1 && c_re.len() == n && c_im.len() == n);
    rho.fill(INIT_RHO);
    *log_dt = rng.random_range(DT_MIN.ln()..DT_MAX.ln());
    let normal = Normal::new(0.0, (0.5 / n as f64).sqrt()).unwrap();
    for v in c_re.iter_mut() {
        *v = normal.sample(rng);
    }
    for v in c_im.iter_mut() {
        *v = normal.sample(rng);
    }
    *d = 1.0;
}

/// Discretized coefficients and kernel of one channel-direction, cached for
/// a whole batch (kernels do not depend on the input).
#[derive(Debug, Clone)]
pub struct ChannelKernel {
    pub lambda: Vec<Complex64>,
    pub dt: f64,
    pub a_bar: Vec<Complex64>,
    pub b_bar: Vec<Complex64>,
    pub k: Vec<f64>,
}

/// K[l] = 2·Re(Σₙ cₙ·b̄ₙ·āₙˡ) by cumulative powers.
pub fn kernel_from_coeffs(
    a_bar: &[Complex64],
    b_bar: &[Complex64],
    c_re: &[f64],
    c_im: &[f64],
    len: usize,
) -> Vec<f64> {
    let n = a_bar.len();
    let mut terms: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(c_re[i], c_im[i]) * b_bar[i])
        .collect();
    let mut k = vec![0.0; len];
    for kl in k.iter_mut() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (term, &a) in terms.iter_mut().zip(a_bar) {
            acc += *term;
            *term *= a;
        }
        *kl = 2.0 * acc.re;
    }
    k
}

/// Build one channel's kernel from its raw parameters; ωₙ = π·n is implied
/// by position.
pub fn compute_kernel(
    rho: &[f64],
    log_dt: f64,
    c_re: &[f64],
    c_im: &[f64],
    len: usize,
) -> Result<ChannelKernel, SsmError> {
    let n = rho.len();
    let dt = log_dt.exp();
    let mut lambda = Vec::with_capacity(n);
    let mut a_bar = Vec::with_capacity(n);
    let mut b_bar = Vec::with_capacity(n);
    for (i, &r) in rho.iter().enumerate() {
        let l = Complex64::new(-r.exp(), PI * i as f64);
        let (a, b) = discretize(l, dt)?;
        debug_assert!(a.norm() < 1.0, "discrete pole must be stable");
        lambda.push(l);
        a_bar.push(a);
        b_bar.push(b);
    }
    let k = kernel_from_coeffs(&a_bar, &b_bar, c_re, c_im, len);
    #[cfg(debug_assertions)]
    {
        let bound: f64 = (0..n)
            .map(|i| 2.0 * (Complex64::new(c_re[i], c_im[i]) * b_bar[i]).norm())
            .sum();
        let max_k = k.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        debug_assert!(max_k <= bound + 1e-9, "kernel exceeds stability bound");
    }
    Ok(ChannelKernel {
        lambda,
        dt,
        a_bar,
        b_bar,
        k,
    })
}

/// Gradients of one channel's kernel parameters given dL/dK.
#[derive(Debug, Clone)]
pub struct ChannelKernelGrads {
    pub d_rho: Vec<f64>,
    pub d_log_dt: f64,
    pub d_c_re: Vec<f64>,
    pub d_c_im: Vec<f64>,
}

/// Backpropagate dL/dK through K[l] = 2·Re(Σₙ Cₙ·B̄ₙ·Āₙˡ).
///
/// With T0ₙ = Σ_l dK[l]·Āₙˡ and T1ₙ = Σ_l l·dK[l]·Āₙˡ, holomorphy in λ
/// gives, for real parameters θ ∈ {ρₙ, log dt},
///   dρₙ     = 2·Re(Cₙ·(∂B̄/∂λ·T0ₙ + B̄ₙ·dt·T1ₙ))·Re(λₙ),
///   dlog dt = dt·Σₙ 2·Re(Cₙ·(Āₙ·T0ₙ + B̄ₙ·λₙ·T1ₙ)),
/// using ∂Ā/∂λ = dt·Ā, ∂B̄/∂λ = dt²·φ′(dt·λ), ∂Ā/∂dt = λ·Ā and
/// ∂B̄/∂dt = Ā; C gradients treat real and imaginary parts independently:
/// dCreₙ = 2·Re(B̄ₙ·T0ₙ), dCimₙ = −2·Im(B̄ₙ·T0ₙ).
pub fn kernel_backward(
    ck: &ChannelKernel,
    c_re: &[f64],
    c_im: &[f64],
    d_k: &[f64],
) -> ChannelKernelGrads {
    let n = ck.a_bar.len();
    let dt = ck.dt;
    let mut d_rho = vec![0.0; n];
    let mut d_c_re = vec![0.0; n];
    let mut d_c_im = vec![0.0; n];
    let mut d_log_dt = 0.0;
    for i in 0..n {
        let a = ck.a_bar[i];
        let b = ck.b_bar[i];
        let lam = ck.lambda[i];
        let c = Complex64::new(c_re[i], c_im[i]);

        let mut t0 = Complex64::new(0.0, 0.0);
        let mut t1 = Complex64::new(0.0, 0.0);
        let mut a_pow = Complex64::new(1.0, 0.0);
        for (l, &g) in d_k.iter().enumerate() {
            t0 += g * a_pow;
            t1 += (l as f64 * g) * a_pow;
            a_pow *= a;
        }

        let bt0 = b * t0;
        d_c_re[i] = 2.0 * bt0.re;
        d_c_im[i] = -2.0 * bt0.im;

        let db_dlambda = phi_prime(lam * dt) * (dt * dt);
        let g_lambda = c * (db_dlambda * t0 + b * dt * t1);
        d_rho[i] = 2.0 * g_lambda.re * lam.re;

        let g_dt = c * (a * t0 + b * lam * t1);
        d_log_dt += 2.0 * g_dt.re * dt;
    }
    ChannelKernelGrads {
        d_rho,
        d_log_dt,
        d_c_re,
        d_c_im,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    /// Impulse response by running the state recurrence xₗ₊₁ = Ā·xₗ + B̄·uₗ
    /// (the slow oracle the convolution path must agree with).
    fn recurrence_kernel(ck: &ChannelKernel, c_re: &[f64], c_im: &[f64], len: usize) -> Vec<f64> {
        let n = ck.a_bar.len();
        let mut state = vec![Complex64::new(0.0, 0.0); n];
        let mut k = vec![0.0; len];
        for (l, kl) in k.iter_mut().enumerate() {
            let u = if l == 0 { 1.0 } else { 0.0 };
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                state[i] = ck.a_bar[i] * state[i] + ck.b_bar[i] * u;
                acc += Complex64::new(c_re[i], c_im[i]) * state[i];
            }
            *kl = 2.0 * acc.re;
        }
        k
    }

    fn random_channel(
        rng: &mut StdRng,
        n: usize,
    ) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>, f64) {
        let mut rho = vec![0.0; n];
        let mut log_dt = 0.0;
        let mut c_re = vec![0.0; n];
        let mut c_im = vec![0.0; n];
        let mut d = 0.0;
        init_ssm_channel(&mut rho, &mut log_dt, &mut c_re, &mut c_im, &mut d, rng);
        (rho, log_dt, c_re, c_im, d)
    }

    #[test]
    fn n1_pole_is_minus_half() {
        let mut rng = StdRng::seed_from_u64(0);
        let (rho, log_dt, c_re, c_im, d) = random_channel(&mut rng, 1);
        let ck = compute_kernel(&rho, log_dt, &c_re, &c_im, 4).unwrap();
        assert_eq!(ck.lambda[0], Complex64::new(-0.5, 0.0));
        assert_eq!(d, 1.0);
    }

    #[test]
    fn initial_dt_in_range() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..100_000 {
            let (_, log_dt, _, _, _) = random_channel(&mut rng, 2);
            let dt = log_dt.exp();
            assert!((1e-3..=0.1).contains(&dt), "dt = {dt}");
        }
    }

    #[test]
    fn discretize_matches_scalar_zoh() {
        let (a, b) = discretize(Complex64::new(-0.5, 0.0), 0.1).unwrap();
        assert!((a - Complex64::new((-0.05f64).exp(), 0.0)).norm() < 1e-15);
        // B̄ = (Ā − 1)/λ evaluated directly.
        let expect_b = (a - 1.0) / Complex64::new(-0.5, 0.0);
        assert!((b - expect_b).norm() < 1e-15);
    }

    #[test]
    fn discrete_pole_is_stable_for_random_draws() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..1000 {
            use rand::Rng;
            let lam = Complex64::new(-rng.random_range(1e-6..10.0), rng.random_range(-30.0..30.0));
            let dt = rng.random_range(1e-4..1.0);
            let (a, _) = discretize(lam, dt).unwrap();
            assert!(a.norm() < 1.0);
        }
    }

    #[test]
    fn small_dt_limit_of_b_bar() {
        let lam = Complex64::new(-0.5, PI);
        let dt = 1e-8;
        let (_, b) = discretize(lam, dt).unwrap();
        assert!((b / dt - 1.0).norm() < 1e-6);
    }

    #[test]
    fn tiny_pole_is_degenerate() {
        let lam = Complex64::new(-1e-13, 0.0);
        match discretize(lam, 0.01) {
            Err(SsmError::DegenerateLambda { .. }) => {}
            other => panic!("expected DegenerateLambda, got {other:?}"),
        }
    }

    #[test]
    fn geometric_kernel_from_handpicked_coeffs() {
        // C·B̄ = 1/2 so the doubled real part is 1; Ā = 0.5 halves each step.
        let a = [Complex64::new(0.5, 0.0)];
        let b = [Complex64::new(0.5, 0.0)];
        let k = kernel_from_coeffs(&a, &b, &[1.0], &[0.0], 3);
        assert_eq!(k, vec![1.0, 0.5, 0.25]);
    }

    #[test]
    fn kernel_is_linear_in_c() {
        let mut rng = StdRng::seed_from_u64(3);
        let (rho, log_dt, c_re, c_im, _) = random_channel(&mut rng, 4);
        let k1 = compute_kernel(&rho, log_dt, &c_re, &c_im, 32).unwrap().k;
        let c_re2: Vec<f64> = c_re.iter().map(|v| 2.0 * v).collect();
        let c_im2: Vec<f64> = c_im.iter().map(|v| 2.0 * v).collect();
        let k2 = compute_kernel(&rho, log_dt, &c_re2, &c_im2, 32).unwrap().k;
        for (a, b) in k1.iter().zip(&k2) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_matches_recurrence() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..20 {
            let (rho, log_dt, c_re, c_im, _) = random_channel(&mut rng, 4);
            let ck = compute_kernel(&rho, log_dt, &c_re, &c_im, 64).unwrap();
            let oracle = recurrence_kernel(&ck, &c_re, &c_im, 64);
            let scale = oracle.iter().fold(1e-30f64, |m, &v| m.max(v.abs()));
            for (a, b) in ck.k.iter().zip(&oracle) {
                assert!((a - b).abs() / scale < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn kernel_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(5);
        let n = 3;
        let len = 16;
        let (rho, log_dt, c_re, c_im, _) = random_channel(&mut rng, n);
        // Random upstream gradient; the scalar objective is Σ dK[l]·K[l].
        use rand::Rng;
        let d_k: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let objective = |rho: &[f64], log_dt: f64, c_re: &[f64], c_im: &[f64]| -> f64 {
            let ck = compute_kernel(rho, log_dt, c_re, c_im, len).unwrap();
            ck.k.iter().zip(&d_k).map(|(k, g)| k * g).sum()
        };

        let ck = compute_kernel(&rho, log_dt, &c_re, &c_im, len).unwrap();
        let grads = kernel_backward(&ck, &c_re, &c_im, &d_k);

        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-6,
                "{what}: analytic {analytic} vs numeric {numeric}"
            );
        };

        for i in 0..n {
            let mut up = rho.clone();
            let mut dn = rho.clone();
            up[i] += h;
            dn[i] -= h;
            check(
                grads.d_rho[i],
                objective(&up, log_dt, &c_re, &c_im),
                objective(&dn, log_dt, &c_re, &c_im),
                &format!("rho[{i}]"),
            );

            let mut up = c_re.clone();
            let mut dn = c_re.clone();
            up[i] += h;
            dn[i] -= h;
            check(
                grads.d_c_re[i],
                objective(&rho, log_dt, &up, &c_im),
                objective(&rho, log_dt, &dn, &c_im),
                &format!("c_re[{i}]"),
            );

            let mut up = c_im.clone();
            let mut dn = c_im.clone();
            up[i] += h;
            dn[i] -= h;
            check(
                grads.d_c_im[i],
                objective(&rho, log_dt, &c_re, &up),
                objective(&rho, log_dt, &c_re, &dn),
                &format!("c_im[{i}]"),
            );
        }
        check(
            grads.d_log_dt,
            objective(&rho, log_dt + h, &c_re, &c_im),
            objective(&rho, log_dt - h, &c_re, &c_im),
            "log_dt",
        );
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let mut rng = StdRng::seed_from_u64(6);
        let (rho, log_dt, c_re, c_im, _) = random_channel(&mut rng, 4);
        let ck = compute_kernel(&rho, log_dt, &c_re, &c_im, 32).unwrap();
        use rand::Rng;
        let d_k: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d_k2: Vec<f64> = d_k.iter().map(|v| 2.0 * v).collect();
        let g1 = kernel_backward(&ck, &c_re, &c_im, &d_k);
        let g2 = kernel_backward(&ck, &c_re, &c_im, &d_k2);
        for i in 0..4 {
            assert!((2.0 * g1.d_rho[i] - g2.d_rho[i]).abs() < 1e-12);
            assert!((2.0 * g1.d_c_re[i] - g2.d_c_re[i]).abs() < 1e-12);
        }
        assert!((2.0 * g1.d_log_dt - g2.d_log_dt).abs() < 1e-12);
    }
}
