//! Reparameterized per-example training objectives and their analytic
//! gradients in the variational parameters.
//!
//! Both objectives share the data-term structure "draw `S` weight samples
//! `w_i = m + σ(s) ⊙ ε_i` from a fixed noise block, evaluate the example's
//! negative log-likelihood on each":
//!
//! * **averaged** (`Elbo`): the plain mean `(1/S) Σ nll_i` — the usual ELBO
//!   data term;
//! * **log-of-mean** (`Dlm`): `−ln((1/S) Σ e^{−nll_i})`, a direct-loss
//!   surrogate that weights samples by how well they already fit the example.
//!   Computed max-shifted so it is exact for `S = 1`, where both objectives
//!   coincide identically.
//!
//! The full objective adds the prior-matching term `(β/n) · KL(Q ‖ prior)`,
//! the per-example share of the KL regularizer for a dataset of size `n`.
//! Gradients flow through the reparameterization pathwise: `∂/∂m = ∂/∂w` and
//! `∂/∂s_j = ∂/∂w_j · ε_j · sigmoid(s_j)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Error;
use crate::gauss::DiagGaussian;
use crate::model::{nll_and_grad, Architecture, Example, ParamGrad, VarParams};
use crate::numeric::log_sum_exp;
use crate::Result;

/// Which data-term combination rule to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Mean of per-sample losses.
    Elbo,
    /// Negative log of the mean per-sample likelihood.
    Dlm,
}

/// Objective configuration shared by a whole training run.
#[derive(Debug, Clone)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// KL coefficient β ≥ 0; the objective carries `(β/n) · KL`.
    pub kl_coefficient: f64,
    /// Dataset size `n` the regularizer is amortized over.
    pub n: usize,
    /// Weight samples per objective evaluation.
    pub mc_samples: usize,
    /// Reference prior for the KL term (and the default PAC-Bayes prior).
    pub prior: DiagGaussian,
}

impl ObjectiveConfig {
    /// Checks coefficient ranges and that the prior matches the parameter dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.kl_coefficient.is_finite() && self.kl_coefficient >= 0.0) {
            return Err(Error::out_of_range(
                "kl_coefficient",
                format!("must be finite and ≥ 0, got {}", self.kl_coefficient),
            ));
        }
        if self.n == 0 {
            return Err(Error::out_of_range("n", "dataset size must be ≥ 1"));
        }
        if self.mc_samples == 0 {
            return Err(Error::out_of_range("mc_samples", "need at least one sample"));
        }
        if self.prior.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.prior.dim(),
            });
        }
        Ok(())
    }
}

/// A block of `rows` standard-normal draws of dimension `dim`, one row per
/// weight sample. Fixing the block makes every objective evaluation a
/// deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock {
    dim: usize,
    data: Vec<f64>,
}

impl NoiseBlock {
    /// Draws `rows × dim` independent standard normals from `rng`.
    pub fn draw(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Self {
        let data = (0..rows * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        NoiseBlock { dim, data }
    }

    /// All-zero block (weight samples collapse onto the mean).
    pub fn zeros(rows: usize, dim: usize) -> Self {
        NoiseBlock {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    /// Builds a block from explicit rows; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::out_of_range("rows", "need at least one non-empty row"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(NoiseBlock { dim, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_block(params: &VarParams, noise: &NoiseBlock) -> Result<()> {
    if noise.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: noise.dim(),
        });
    }
    if noise.rows() == 0 {
        return Err(Error::out_of_range("noise", "need at least one sample row"));
    }
    Ok(())
}

/// Data term of the objective for one example under a fixed noise block.
pub fn data_term_value(
    params: &VarParams,
    z: &Example,
    noise: &NoiseBlock,
    arch: &Architecture,
    kind: ObjectiveKind,
) -> Result<f64> {
    check_block(params, noise)?;
    let rows = noise.rows();
    let mut nlls = Vec::with_capacity(rows);
    for i in 0..rows {
        let w = params.sample_weights(noise.row(i))?;
        nlls.push(crate::model::nll(&w, z, arch)?);
    }
    Ok(combine_values(&nlls, kind))
}

fn combine_values(nlls: &[f64], kind: ObjectiveKind) -> f64 {
    match kind {
        ObjectiveKind::Elbo => nlls.iter().sum::<f64>() / nlls.len() as f64,
        ObjectiveKind::Dlm => {
            let shifted: Vec<f64> = nlls.iter().map(|&v| -v).collect();
            (nlls.len() as f64).ln() - log_sum_exp(&shifted)
        }
    }
}

/// Gradient of the data term in `(m, s)` under a fixed noise block.
///
/// For the log-of-mean objective the per-sample weight is the softmax of the
/// negative losses, so samples that already fit the example dominate.
pub fn data_term_grad(
    params: &VarParams,
    z: &Example,
    noise: &NoiseBlock,
    arch: &Architecture,
    kind: ObjectiveKind,
) -> Result<ParamGrad> {
    check_block(params, noise)?;
    let rows = noise.rows();
    let dim = params.dim();
    let slope = params.sigma_slope();

    let mut nlls = Vec::with_capacity(rows);
    let mut grads = Vec::with_capacity(rows);
    for i in 0..rows {
        let w = params.sample_weights(noise.row(i))?;
        let (v, g) = nll_and_grad(&w, z, arch)?;
        nlls.push(v);
        grads.push(g);
    }
    let weights: Vec<f64> = match kind {
        ObjectiveKind::Elbo => vec![1.0 / rows as f64; rows],
        ObjectiveKind::Dlm => {
            let neg: Vec<f64> = nlls.iter().map(|&v| -v).collect();
            let lse = log_sum_exp(&neg);
            neg.iter().map(|&a| (a - lse).exp()).collect()
        }
    };
    let mut out = ParamGrad::zeros(dim);
    for (i, g) in grads.iter().enumerate() {
        let wgt = weights[i];
        let eps = noise.row(i);
        for j in 0..dim {
            out.m[j] += wgt * g[j];
            out.s[j] += wgt * g[j] * eps[j] * slope[j];
        }
    }
    Ok(out)
}

/// Closed-form `KL(Q ‖ prior)` for the current parameters, with its analytic
/// gradient in `(m, s)`. The value is unscaled; the objective applies `β/n`.
pub fn kl_to_prior_grad(params: &VarParams, cfg: &ObjectiveConfig) -> Result<(f64, ParamGrad)> {
    cfg.validate(params.dim())?;
    let sigma = params.sigma();
    let slope = params.sigma_slope();
    let mp = cfg.prior.mean();
    let sp = cfg.prior.std();
    let mut value = 0.0;
    let mut grad = ParamGrad::zeros(params.dim());
    for j in 0..params.dim() {
        let (m, sq) = (params.m[j], sigma[j]);
        let (pm, ps) = (mp[j], sp[j]);
        let dm = m - pm;
        value += (ps / sq).ln() + (sq * sq + dm * dm) / (2.0 * ps * ps) - 0.5;
        grad.m[j] = dm / (ps * ps);
        // d/dσ of the per-coordinate KL, then through the s ↦ σ slope.
        grad.s[j] = (-1.0 / sq + sq / (ps * ps)) * slope[j];
    }
    Ok((value, grad))
}

/// Full objective value: data term plus `(β/n) · KL(Q ‖ prior)`.
pub fn objective_value(
    params: &VarParams,
    z: &Example,
    noise: &NoiseBlock,
    arch: &Architecture,
    cfg: &ObjectiveConfig,
) -> Result<f64> {
    cfg.validate(params.dim())?;
    if noise.rows() != cfg.mc_samples {
        return Err(Error::DimensionMismatch {
            expected: cfg.mc_samples,
            got: noise.rows(),
        });
    }
    let data = data_term_value(params, z, noise, arch, cfg.kind)?;
    let (kl, _) = kl_to_prior_grad(params, cfg)?;
    Ok(data + cfg.kl_coefficient / cfg.n as f64 * kl)
}

/// Full objective gradient: data-term gradient plus the β-scaled KL gradient.
pub fn objective_grad(
    params: &VarParams,
    z: &Example,
    noise: &NoiseBlock,
    arch: &Architecture,
    cfg: &ObjectiveConfig,
) -> Result<ParamGrad> {
    cfg.validate(params.dim())?;
    if noise.rows() != cfg.mc_samples {
        return Err(Error::DimensionMismatch {
            expected: cfg.mc_samples,
            got: noise.rows(),
        });
    }
    let mut grad = data_term_grad(params, z, noise, arch, cfg.kind)?;
    let (_, kl_grad) = kl_to_prior_grad(params, cfg)?;
    grad.add_scaled(&kl_grad, cfg.kl_coefficient / cfg.n as f64);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;
    use rand::SeedableRng;

    fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
        (a - b).abs() <= atol + rtol * a.abs().max(b.abs())
    }

    fn setup(kind: ObjectiveKind, mc: usize, beta: f64) -> (Architecture, VarParams, ObjectiveConfig) {
        let arch = Architecture::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let dim = arch.param_count();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = VarParams::he_init(&arch, 0.3, 0.01, &mut rng).unwrap();
        let cfg = ObjectiveConfig {
            kind,
            kl_coefficient: beta,
            n: 50,
            mc_samples: mc,
            prior: DiagGaussian::isotropic(dim, 0.0, 1.0).unwrap(),
        };
        (arch, params, cfg)
    }

    #[test]
    fn single_sample_objectives_coincide_identically() {
        let (arch, params, mut cfg) = setup(ObjectiveKind::Elbo, 1, 0.25);
        let z = Example::new(vec![0.7, -0.2], 1);
        let noise = NoiseBlock::draw(&mut ChaCha8Rng::seed_from_u64(3), 1, params.dim());
        let elbo = objective_value(&params, &z, &noise, &arch, &cfg).unwrap();
        cfg.kind = ObjectiveKind::Dlm;
        let dlm = objective_value(&params, &z, &noise, &arch, &cfg).unwrap();
        // Bit-for-bit: the shifted log-sum-exp of one element is exact.
        assert_eq!(elbo, dlm);
        let ge = data_term_grad(&params, &z, &noise, &arch, ObjectiveKind::Elbo).unwrap();
        let gd = data_term_grad(&params, &z, &noise, &arch, ObjectiveKind::Dlm).unwrap();
        assert_eq!(ge, gd);
    }

    #[test]
    fn log_of_mean_never_exceeds_averaged_data_term() {
        let (arch, params, _) = setup(ObjectiveKind::Elbo, 6, 0.0);
        for seed in 0..25u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = NoiseBlock::draw(&mut rng, 6, params.dim());
            let z = Example::new(vec![rng.sample(StandardNormal), rng.sample(StandardNormal)], (seed % 2) as usize);
            let avg = data_term_value(&params, &z, &noise, &arch, ObjectiveKind::Elbo).unwrap();
            let lom = data_term_value(&params, &z, &noise, &arch, ObjectiveKind::Dlm).unwrap();
            assert!(
                lom <= avg + 1e-12,
                "log-of-mean {lom} exceeded average {avg} (seed {seed})"
            );
        }
    }

    #[test]
    fn zero_noise_zero_beta_reduces_to_plain_nll() {
        let (arch, params, cfg) = {
            let (a, p, mut c) = setup(ObjectiveKind::Elbo, 1, 0.0);
            c.kl_coefficient = 0.0;
            (a, p, c)
        };
        let z = Example::new(vec![0.4, 0.9], 0);
        let noise = NoiseBlock::zeros(1, params.dim());
        let v = objective_value(&params, &z, &noise, &arch, &cfg).unwrap();
        assert_eq!(v, crate::model::nll(&params.m, &z, &arch).unwrap());
        let g = objective_grad(&params, &z, &noise, &arch, &cfg).unwrap();
        let gw = crate::model::grad_nll(&params.m, &z, &arch).unwrap();
        assert_eq!(g.m, gw);
        // With ε = 0 the spread block receives no data signal.
        assert!(g.s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kl_term_vanishes_when_posterior_equals_prior() {
        let arch = Architecture::new(vec![2, 2], Activation::Tanh).unwrap();
        let dim = arch.param_count();
        let sigma0 = 0.01;
        let s_for_unit = crate::numeric::softplus_inv(1.0 - sigma0);
        let params = VarParams::new(vec![0.0; dim], vec![s_for_unit; dim], sigma0).unwrap();
        let cfg = ObjectiveConfig {
            kind: ObjectiveKind::Elbo,
            kl_coefficient: 1.0,
            n: 10,
            mc_samples: 1,
            prior: DiagGaussian::isotropic(dim, 0.0, 1.0).unwrap(),
        };
        let (v, g) = kl_to_prior_grad(&params, &cfg).unwrap();
        assert!(v.abs() < 1e-12, "KL at the prior should vanish, got {v}");
        assert!(g.m.iter().all(|&x| x.abs() < 1e-12));
        assert!(g.s.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn unit_variance_kl_is_half_squared_mean_gap() {
        let arch = Architecture::new(vec![2, 2], Activation::Tanh).unwrap();
        let dim = arch.param_count();
        let sigma0 = 0.01;
        let s_unit = crate::numeric::softplus_inv(1.0 - sigma0);
        let m: Vec<f64> = (0..dim).map(|j| 0.1 * (j as f64 + 1.0)).collect();
        let params = VarParams::new(m.clone(), vec![s_unit; dim], sigma0).unwrap();
        let cfg = ObjectiveConfig {
            kind: ObjectiveKind::Elbo,
            kl_coefficient: 1.0,
            n: 10,
            mc_samples: 1,
            prior: DiagGaussian::isotropic(dim, 0.0, 1.0).unwrap(),
        };
        let (v, g) = kl_to_prior_grad(&params, &cfg).unwrap();
        let expect = 0.5 * m.iter().map(|x| x * x).sum::<f64>();
        assert!(close(v, expect, 1e-12, 1e-12));
        for j in 0..dim {
            assert!(close(g.m[j], m[j], 1e-12, 1e-12));
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let (_, params, cfg) = setup(ObjectiveKind::Elbo, 1, 1.0);
        let (_, g) = kl_to_prior_grad(&params, &cfg).unwrap();
        let h = 1e-6;
        for j in [0, 3, params.dim() - 1] {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp.m[j] += h;
            pm.m[j] -= h;
            let fd = (kl_to_prior_grad(&pp, &cfg).unwrap().0
                - kl_to_prior_grad(&pm, &cfg).unwrap().0)
                / (2.0 * h);
            assert!(close(g.m[j], fd, 1e-6, 1e-8), "m[{j}]: {} vs {fd}", g.m[j]);
            let mut sp = params.clone();
            let mut sm = params.clone();
            sp.s[j] += h;
            sm.s[j] -= h;
            let fd = (kl_to_prior_grad(&sp, &cfg).unwrap().0
                - kl_to_prior_grad(&sm, &cfg).unwrap().0)
                / (2.0 * h);
            assert!(close(g.s[j], fd, 1e-6, 1e-8), "s[{j}]: {} vs {fd}", g.s[j]);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences_both_kinds() {
        for kind in [ObjectiveKind::Elbo, ObjectiveKind::Dlm] {
            let (arch, params, cfg) = setup(kind, 3, 0.4);
            let z = Example::new(vec![0.6, -0.8], 1);
            let noise = NoiseBlock::draw(&mut ChaCha8Rng::seed_from_u64(8), 3, params.dim());
            let g = objective_grad(&params, &z, &noise, &arch, &cfg).unwrap();
            let h = 1e-5;
            let f = |p: &VarParams| objective_value(p, &z, &noise, &arch, &cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            for _ in 0..12 {
                let j = rng.random_range(0..params.dim());
                let mut pp = params.clone();
                let mut pm = params.clone();
                pp.m[j] += h;
                pm.m[j] -= h;
                let fd = (f(&pp) - f(&pm)) / (2.0 * h);
                assert!(close(g.m[j], fd, 1e-4, 1e-7), "{kind:?} m[{j}]: {} vs {fd}", g.m[j]);
                let mut sp = params.clone();
                let mut sm = params.clone();
                sp.s[j] += h;
                sm.s[j] -= h;
                let fd = (f(&sp) - f(&sm)) / (2.0 * h);
                assert!(close(g.s[j], fd, 1e-4, 1e-7), "{kind:?} s[{j}]: {} vs {fd}", g.s[j]);
            }
        }
    }

    #[test]
    fn kl_part_of_gradient_scales_linearly_in_beta() {
        let (arch, params, mut cfg) = setup(ObjectiveKind::Elbo, 2, 0.0);
        let z = Example::new(vec![0.2, 0.1], 0);
        let noise = NoiseBlock::draw(&mut ChaCha8Rng::seed_from_u64(1), 2, params.dim());
        let grad_at = |beta: f64, cfg: &mut ObjectiveConfig| {
            cfg.kl_coefficient = beta;
            objective_grad(&params, &z, &noise, &arch, cfg).unwrap()
        };
        let g0 = grad_at(0.0, &mut cfg);
        let g01 = grad_at(0.1, &mut cfg);
        let g1 = grad_at(1.0, &mut cfg);
        for j in 0..params.dim() {
            let lhs = g01.m[j] - g0.m[j];
            let rhs = 0.1 * (g1.m[j] - g0.m[j]);
            assert!(close(lhs, rhs, 1e-10, 1e-14));
            let lhs = g01.s[j] - g0.s[j];
            let rhs = 0.1 * (g1.s[j] - g0.s[j]);
            assert!(close(lhs, rhs, 1e-10, 1e-14));
        }
    }

    #[test]
    fn mismatched_noise_block_is_rejected() {
        let (arch, params, cfg) = setup(ObjectiveKind::Elbo, 2, 0.1);
        let z = Example::new(vec![0.0, 0.0], 0);
        let wrong_rows = NoiseBlock::zeros(3, params.dim());
        assert!(objective_value(&params, &z, &wrong_rows, &arch, &cfg).is_err());
        let wrong_dim = NoiseBlock::zeros(2, params.dim() + 1);
        assert!(objective_value(&params, &z, &wrong_dim, &arch, &cfg).is_err());
    }
}
