//! Oracle implementations shared by the integration tests.
//!
//! Everything here is written independently of the library code paths it
//! checks: numerical quadrature against the closed-form divergence, a
//! Monte-Carlo transport estimate, central finite differences for
//! gradients, and a golden-section scalar minimizer.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vistab::gauss::DiagGaussian;
use vistab::model::{Architecture, Example, VarParams};
use vistab::objectives::{objective_value, NoiseBlock, ObjectiveConfig};

/// Relative discrepancy with an absolute guard for near-zero magnitudes.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / scale
}

fn log_normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - (std * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

fn simpson_slice(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson_slice(a, m, fa, flm, fm);
    let right = simpson_slice(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        left + right + delta / 15.0
    } else {
        adaptive_step(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
            + adaptive_step(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
    }
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson_slice(a, b, fa, fm, fb);
    adaptive_step(f, a, b, fa, fm, fb, whole, eps, 40)
}

/// Numerically integrates the divergence of two diagonal Gaussians, one
/// dimension at a time over mean ± 12 std of the first argument.
pub fn kl_quadrature(q: &DiagGaussian, p: &DiagGaussian) -> f64 {
    assert_eq!(q.dim(), p.dim());
    let mut total = 0.0;
    for i in 0..q.dim() {
        let (mq, sq) = (q.mean()[i], q.std()[i]);
        let (mp, sp) = (p.mean()[i], p.std()[i]);
        let integrand = move |x: f64| {
            let lq = log_normal_pdf(x, mq, sq);
            let lp = log_normal_pdf(x, mp, sp);
            lq.exp() * (lq - lp)
        };
        total += adaptive_simpson(&integrand, mq - 12.0 * sq, mq + 12.0 * sq, 1e-12);
    }
    total
}

/// Monte-Carlo quantile-coupling estimate of the 2-transport distance
/// between diagonal Gaussians: per dimension, the quantile coupling maps a
/// shared standard normal draw through both quantile functions.
pub fn w2_quantile_mc(q: &DiagGaussian, p: &DiagGaussian, samples: usize, seed: u64) -> f64 {
    assert_eq!(q.dim(), p.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for i in 0..q.dim() {
        let dm = q.mean()[i] - p.mean()[i];
        let ds = q.std()[i] - p.std()[i];
        let mut acc = 0.0;
        for _ in 0..samples {
            let z: f64 = rng.sample(StandardNormal);
            let d = dm + ds * z;
            acc += d * d;
        }
        total += acc / samples as f64;
    }
    total.sqrt()
}

/// Central finite differences of the full training objective in every
/// mean and every std-parameter coordinate.
pub fn fd_objective_grads(
    params: &VarParams,
    z: &Example,
    noise: &NoiseBlock,
    arch: &Architecture,
    cfg: &ObjectiveConfig,
) -> (Vec<f64>, Vec<f64>) {
    let dim = params.dim();
    let sigma0 = params.sigma0();
    let eval = |m: &[f64], s: &[f64]| -> f64 {
        let p = VarParams::new(m.to_vec(), s.to_vec(), sigma0).unwrap();
        objective_value(&p, z, noise, arch, cfg).unwrap()
    };
    let mut gm = vec![0.0; dim];
    let mut gs = vec![0.0; dim];
    for j in 0..dim {
        let h = 1e-5 * (1.0 + params.m[j].abs());
        let mut m_hi = params.m.clone();
        let mut m_lo = params.m.clone();
        m_hi[j] += h;
        m_lo[j] -= h;
        gm[j] = (eval(&m_hi, &params.s) - eval(&m_lo, &params.s)) / (2.0 * h);

        let h = 1e-5 * (1.0 + params.s[j].abs());
        let mut s_hi = params.s.clone();
        let mut s_lo = params.s.clone();
        s_hi[j] += h;
        s_lo[j] -= h;
        gs[j] = (eval(&params.m, &s_hi) - eval(&params.m, &s_lo)) / (2.0 * h);
    }
    (gm, gs)
}

/// Golden-section minimization of a unimodal scalar function.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    for _ in 0..iters {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Standard-normal draws for test-side randomness.
pub fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform draw in [lo, hi).
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}
