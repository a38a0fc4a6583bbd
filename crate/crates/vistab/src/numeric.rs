//! Shared numeric primitives: stable scalar transforms, vector norms,
//! adaptive quadrature, and the seed-mixing function used for deterministic
//! sub-stream derivation.

/// Numerically stable softplus, `ln(1 + e^x)`.
///
/// Computed as `max(x, 0) + ln(1 + e^{-|x|})` so neither branch overflows.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on `y > 0`: the `x` with `ln(1 + e^x) = y`.
///
/// Computed as `y + ln(1 - e^{-y})`, stable for both small and large `y`.
pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0, "softplus_inv needs a positive argument");
    // ln(1 − e^{−y}) through expm1 keeps full relative precision when y is
    // tiny and 1 − e^{−y} would cancel to a handful of bits.
    y + (-(-y).exp_m1()).ln()
}

/// Logistic sigmoid `1 / (1 + e^{-x})`, also the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted log-sum-exp of a non-empty slice.
///
/// Returns exactly `a[0]` for a singleton slice (the shift makes the
/// correction term `ln(1) = 0`).
pub fn log_sum_exp(a: &[f64]) -> f64 {
    debug_assert!(!a.is_empty(), "log_sum_exp of empty slice");
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = a.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Sum of absolute coordinate differences of two equal-length slices.
pub fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Euclidean norm of the coordinate differences of two equal-length slices.
pub fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean norm of one slice.
pub fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sum of absolute values of one slice.
pub fn l1_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// Population standard deviation (divisor `N`, not `N - 1`).
///
/// The expansion-profile aggregation uses the population convention: two runs
/// with values `{1.0, 1.2}` have mean `1.1` and spread `0.1`.
pub fn population_std(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
///
/// Standard recursive bisection with the Richardson error estimate
/// `|S_left + S_right - S_whole| / 15`; depth-capped so pathological
/// integrands terminate.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            left + right + err / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// SplitMix64 mixing step: a bijective 64-bit scrambler.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for a `(domain, index)` slot under a master seed.
///
/// Every random stream in the crate (batch permutations, reparameterization
/// noise, augmentation draws, run/init seeds) is derived through this one
/// function, so a single master seed pins an entire experiment.
pub fn sub_seed(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15)) ^ index)
}
