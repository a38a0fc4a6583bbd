//! Seeded SGD training loop for the variational parameters.
//!
//! **Shared randomness.** All per-run randomness — epoch-wise batch
//! permutations, reparameterization noise, augmentation draws — is derived
//! from one master seed through [`EpsilonStream`], with an independent
//! sub-stream per `(domain, step)` slot. Two runs given the same stream see
//! bit-identical batch sequences and noise, which is what paired-training and
//! twin-run expansion measurements rely on; initialization deliberately does
//! *not* come from the stream so those protocols can vary it independently.
//!
//! **Update rule.** Mini-batch SGD with optional heavy-ball momentum:
//! `v ← μ·v + g`, `θ ← θ − α_t·v`, where `g` is the batch-mean objective
//! gradient. With `μ = 0` the step is exactly `θ − α_t·g`. Two step-size
//! schedules are provided: epoch-wise step decay, and the slow
//! `α_t = c/((t+2)·ln(t+2))` decay whose cumulative expansion admits a
//! closed-form asymptotic bound.
//!
//! A pre-update [`StepHook`] observes `(t, θ_{t−1}, batch, ε_t)` before each
//! step; the stability module uses it to measure gradient sensitivity along
//! the trajectory without re-running training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datasets::{augment, AugmentConfig, AugmentDraw, Dataset};
use crate::error::Error;
use crate::model::{Architecture, Example, ParamGrad, VarParams};
use crate::numeric::sub_seed;
use crate::objectives::{objective_grad, NoiseBlock, ObjectiveConfig};
use crate::Result;

/// Domain tags for [`EpsilonStream`] sub-seed derivation.
const DOMAIN_PERMUTATION: u64 = 1;
const DOMAIN_NOISE: u64 = 2;
const DOMAIN_AUGMENT: u64 = 3;
const DOMAIN_EVAL: u64 = 4;

/// Deterministic source of all training-time randomness under one master
/// seed. Each `(domain, index)` pair seeds an independent ChaCha stream, so
/// draws for one purpose never perturb another's.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpsilonStream {
    master_seed: u64,
}

impl EpsilonStream {
    pub fn new(master_seed: u64) -> Self {
        EpsilonStream { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Uniformly random permutation of `0..n` for the given epoch.
    pub fn epoch_permutation(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(
            self.master_seed,
            DOMAIN_PERMUTATION,
            epoch as u64,
        ));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        perm
    }

    /// Reparameterization noise block for step `t` (1-based).
    pub fn noise_block(&self, t: usize, rows: usize, dim: usize) -> NoiseBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.master_seed, DOMAIN_NOISE, t as u64));
        NoiseBlock::draw(&mut rng, rows, dim)
    }

    /// Augmentation RNG for step `t`; draws are consumed in batch order.
    pub fn augment_rng(&self, t: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(sub_seed(self.master_seed, DOMAIN_AUGMENT, t as u64))
    }

    /// Evaluation RNG (posterior-loss weight draws) for an evaluation slot.
    pub fn eval_rng(&self, slot: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(sub_seed(self.master_seed, DOMAIN_EVAL, slot))
    }
}

/// Splits a permutation into consecutive batches of `batch_size`; the final
/// batch keeps the remainder. Exchanging two dataset rows while composing the
/// permutation with the same transposition therefore yields identical
/// materialized batches.
pub fn batches_from_permutation(perm: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    perm.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Step-size schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `α` multiplied by the decay factor every fixed number of epochs.
    StepDecay,
    /// `α_t = c / ((t+2) · ln(t+2))` with `c` taken from `learning_rate`.
    LogT,
}

/// Optimizer and schedule configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Base step size α (or the constant `c` for the [`ScheduleKind::LogT`] schedule).
    pub learning_rate: f64,
    /// Heavy-ball coefficient μ ∈ [0, 1); 0 disables momentum.
    pub momentum: f64,
    /// Step-decay multiplier in (0, 1]; 1 keeps α constant.
    pub lr_decay_factor: f64,
    /// Epoch period of the step decay.
    pub lr_decay_every_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: ScheduleKind,
    /// Optional per-example gradient L2 ceiling (projection onto the ball).
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::out_of_range(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::out_of_range(
                "momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        if !(self.lr_decay_factor.is_finite()
            && self.lr_decay_factor > 0.0
            && self.lr_decay_factor <= 1.0)
        {
            return Err(Error::out_of_range(
                "lr_decay_factor",
                format!("must lie in (0, 1], got {}", self.lr_decay_factor),
            ));
        }
        if self.lr_decay_every_epochs == 0 {
            return Err(Error::out_of_range(
                "lr_decay_every_epochs",
                "period must be ≥ 1",
            ));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::out_of_range(
                "batch_size",
                format!("must lie in [1, n = {n}], got {}", self.batch_size),
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::out_of_range(
                    "grad_clip",
                    format!("must be positive, got {c}"),
                ));
            }
        }
        Ok(())
    }
}

/// One recorded training step: its schedule position and step size.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub t: usize,
    pub epoch: usize,
    pub batch_no: usize,
    pub alpha: f64,
}

/// The per-step record of a completed run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<StepLog>,
}

impl Trajectory {
    pub fn alphas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.alpha).collect()
    }
}

/// A batch-gradient provider: anything that maps `(θ, batch, ε)` to a
/// gradient in `(m, s)`. The network objective is the production
/// implementation; analytic test objectives (quadratic, constant) plug in
/// through the same interface.
pub trait StepGradient {
    /// Weight samples per objective evaluation (sizes the noise block).
    fn mc_samples(&self) -> usize;
    fn grad(&self, params: &VarParams, batch: &[Example], noise: &NoiseBlock) -> Result<ParamGrad>;
}

/// Batch-mean objective gradient for the network model, with optional
/// per-example clipping applied before averaging so that each example's
/// gradient norm — not just the mean's — respects the ceiling.
pub struct MlpGradient<'a> {
    pub arch: &'a Architecture,
    pub cfg: &'a ObjectiveConfig,
    pub clip: Option<f64>,
}

impl StepGradient for MlpGradient<'_> {
    fn mc_samples(&self) -> usize {
        self.cfg.mc_samples
    }

    fn grad(&self, params: &VarParams, batch: &[Example], noise: &NoiseBlock) -> Result<ParamGrad> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut acc = ParamGrad::zeros(params.dim());
        let w = 1.0 / batch.len() as f64;
        for z in batch {
            let mut g = objective_grad(params, z, noise, self.arch, self.cfg)?;
            if let Some(ceiling) = self.clip {
                let norm = g.joint_l2();
                if norm > ceiling {
                    g.scale(ceiling / norm);
                }
            }
            acc.add_scaled(&g, w);
        }
        Ok(acc)
    }
}

/// The parameter-independent content of one step: schedule position,
/// materialized batch, and noise. Produced by [`SgdRun::for_each_step`].
pub struct StepData<'a> {
    /// 1-based global step about to be taken.
    pub t: usize,
    pub epoch: usize,
    pub alpha: f64,
    /// Dataset indices of the batch.
    pub indices: &'a [usize],
    /// Materialized batch (augmentation already applied).
    pub examples: &'a [Example],
    /// The step's reparameterization noise.
    pub noise: &'a NoiseBlock,
}

/// Everything the hook can observe before an update is applied.
pub struct StepContext<'a> {
    /// 1-based global step about to be taken.
    pub t: usize,
    pub epoch: usize,
    pub alpha: f64,
    /// Parameters *before* the update.
    pub params: &'a VarParams,
    /// Dataset indices of the batch.
    pub indices: &'a [usize],
    /// Materialized batch (augmentation already applied).
    pub examples: &'a [Example],
    /// The step's reparameterization noise.
    pub noise: &'a NoiseBlock,
}

/// Pre-update observer invoked once per step.
pub trait StepHook {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()>;
}

/// Hook that observes nothing.
pub struct NoHook;

impl StepHook for NoHook {
    fn on_step(&mut self, _ctx: &StepContext<'_>) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&StepContext<'_>) -> Result<()>> StepHook for F {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        self(ctx)
    }
}

/// One SGD update. With zero momentum this is exactly `θ − α·g`; otherwise
/// the velocity is advanced first (`v ← μ·v + g`) and applied as `θ − α·v`.
pub fn sgd_step(
    params: &VarParams,
    grad: &ParamGrad,
    alpha: f64,
    momentum: f64,
    velocity: &mut ParamGrad,
) -> Result<VarParams> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::out_of_range(
            "alpha",
            format!("step size must be positive, got {alpha}"),
        ));
    }
    if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
        return Err(Error::out_of_range(
            "momentum",
            format!("must lie in [0, 1), got {momentum}"),
        ));
    }
    if grad.dim() != params.dim() || velocity.dim() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: grad.dim().max(velocity.dim()),
        });
    }
    if momentum == 0.0 {
        velocity.m.copy_from_slice(&grad.m);
        velocity.s.copy_from_slice(&grad.s);
    } else {
        for (v, g) in velocity.m.iter_mut().zip(&grad.m) {
            *v = momentum * *v + g;
        }
        for (v, g) in velocity.s.iter_mut().zip(&grad.s) {
            *v = momentum * *v + g;
        }
    }
    let m = params
        .m
        .iter()
        .zip(&velocity.m)
        .map(|(p, v)| p - alpha * v)
        .collect();
    let s = params
        .s
        .iter()
        .zip(&velocity.s)
        .map(|(p, v)| p - alpha * v)
        .collect();
    VarParams::new(m, s, params.sigma0())
}

/// The deterministic skeleton of a run: dataset, optimizer config, noise
/// stream, and optional augmentation. Exposes the schedule and drives the
/// per-step iteration shared by plain training and twin-run protocols.
pub struct SgdRun<'a> {
    pub dataset: &'a Dataset,
    pub cfg: &'a TrainConfig,
    pub stream: &'a EpsilonStream,
    pub augment: Option<&'a AugmentConfig>,
}

impl SgdRun<'_> {
    pub fn steps_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.cfg.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.epochs * self.steps_per_epoch()
    }

    /// Step size at 1-based step `t`, per the configured schedule.
    pub fn alpha(&self, t: usize) -> f64 {
        match self.cfg.schedule {
            ScheduleKind::StepDecay => {
                let epoch = (t - 1) / self.steps_per_epoch();
                let decays = (epoch / self.cfg.lr_decay_every_epochs) as i32;
                self.cfg.learning_rate * self.cfg.lr_decay_factor.powi(decays)
            }
            ScheduleKind::LogT => {
                let u = (t + 2) as f64;
                self.cfg.learning_rate / (u * u.ln())
            }
        }
    }

    /// Drives `f` over every step in order, materializing batches (with
    /// augmentation when configured) and the per-step noise block.
    pub fn for_each_step(
        &self,
        mc_rows: usize,
        dim: usize,
        mut f: impl FnMut(&StepData<'_>) -> Result<()>,
    ) -> Result<()> {
        self.cfg.validate(self.dataset.len())?;
        if let Some(aug) = self.augment {
            aug.validate()?;
        }
        let mut t = 0usize;
        for epoch in 0..self.cfg.epochs {
            let perm = self.stream.epoch_permutation(epoch, self.dataset.len());
            for indices in batches_from_permutation(&perm, self.cfg.batch_size) {
                t += 1;
                let noise = self.stream.noise_block(t, mc_rows, dim);
                let examples: Vec<Example> = match self.augment {
                    None => indices
                        .iter()
                        .map(|&i| self.dataset.examples[i].clone())
                        .collect(),
                    Some(aug) => {
                        let mut rng = self.stream.augment_rng(t);
                        indices
                            .iter()
                            .map(|&i| {
                                let draw =
                                    AugmentDraw::draw(&mut rng, self.dataset.feature_dim, aug);
                                augment(&self.dataset.examples[i], aug, &draw)
                            })
                            .collect::<Result<Vec<_>>>()?
                    }
                };
                f(&StepData {
                    t,
                    epoch,
                    alpha: self.alpha(t),
                    indices: &indices,
                    examples: &examples,
                    noise: &noise,
                })?;
            }
        }
        Ok(())
    }
}

/// Runs SGD from `init` over the full schedule, invoking `hook` before every
/// update. Returns the final parameters and the step record. Non-finite
/// gradients or parameters abort with the offending step index.
pub fn run_sgd<G: StepGradient>(
    oracle: &G,
    run: &SgdRun<'_>,
    init: VarParams,
    hook: &mut dyn StepHook,
) -> Result<(VarParams, Trajectory)> {
    run.cfg.validate(run.dataset.len())?;
    let dim = init.dim();
    let mut params = init;
    let mut velocity = ParamGrad::zeros(dim);
    let mut trajectory = Trajectory::default();
    let spe = run.steps_per_epoch();
    run.for_each_step(oracle.mc_samples(), dim, |step| {
        let ctx = StepContext {
            t: step.t,
            epoch: step.epoch,
            alpha: step.alpha,
            params: &params,
            indices: step.indices,
            examples: step.examples,
            noise: step.noise,
        };
        hook.on_step(&ctx)?;
        let grad = oracle.grad(&params, step.examples, step.noise)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                step: step.t,
                what: "gradient",
            });
        }
        // An overflowing update surfaces as a construction failure; report
        // it as divergence at this step.
        params = match sgd_step(&params, &grad, step.alpha, run.cfg.momentum, &mut velocity) {
            Ok(p) => p,
            Err(Error::OutOfRange { name: "params", .. }) => {
                return Err(Error::NonFinite {
                    step: step.t,
                    what: "parameters",
                })
            }
            Err(e) => return Err(e),
        };
        trajectory.steps.push(StepLog {
            t: step.t,
            epoch: step.epoch,
            batch_no: (step.t - 1) % spe,
            alpha: step.alpha,
        });
        Ok(())
    })?;
    Ok((params, trajectory))
}

/// Trains the network objective from `init` — the convenience wrapper around
/// [`run_sgd`] with the [`MlpGradient`] oracle.
#[allow(clippy::too_many_arguments)]
pub fn train(
    dataset: &Dataset,
    arch: &Architecture,
    obj_cfg: &ObjectiveConfig,
    train_cfg: &TrainConfig,
    stream: &EpsilonStream,
    augment: Option<&AugmentConfig>,
    init: VarParams,
    hook: &mut dyn StepHook,
) -> Result<(VarParams, Trajectory)> {
    if dataset.feature_dim != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: arch.input_dim(),
            got: dataset.feature_dim,
        });
    }
    if dataset.class_count != arch.class_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.class_count(),
            got: dataset.class_count,
        });
    }
    obj_cfg.validate(arch.param_count())?;
    if init.dim() != arch.param_count() {
        return Err(Error::DimensionMismatch {
            expected: arch.param_count(),
            got: init.dim(),
        });
    }
    let oracle = MlpGradient {
        arch,
        cfg: obj_cfg,
        clip: train_cfg.grad_clip,
    };
    let run = SgdRun {
        dataset,
        cfg: train_cfg,
        stream,
        augment,
    };
    run_sgd(&oracle, &run, init, hook)
}

/// Which loss to average when evaluating a posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    ZeroOne,
    Nll,
}

/// Monte-Carlo posterior loss: draws `samples` weight vectors from the
/// posterior (seeded) and averages the chosen loss over the whole dataset
/// for each, returning the grand mean. Deterministic per seed.
pub fn posterior_loss(
    params: &VarParams,
    dataset: &Dataset,
    arch: &Architecture,
    kind: LossKind,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::out_of_range("samples", "need at least one draw"));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = params.dim();
    let mut total = 0.0;
    for _ in 0..samples {
        let noise: Vec<f64> = (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let w = params.sample_weights(&noise)?;
        let mut per_draw = 0.0;
        for z in &dataset.examples {
            per_draw += match kind {
                LossKind::ZeroOne => crate::model::zero_one(&w, z, arch)?,
                LossKind::Nll => crate::model::nll(&w, z, arch)?,
            };
        }
        total += per_draw / dataset.len() as f64;
    }
    Ok(total / samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_blobs;
    use crate::gauss::DiagGaussian;
    use crate::model::Activation;
    use crate::objectives::ObjectiveKind;

    fn plain_cfg(lr: f64, batch: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            momentum: 0.0,
            lr_decay_factor: 1.0,
            lr_decay_every_epochs: 1,
            batch_size: batch,
            epochs,
            schedule: ScheduleKind::StepDecay,
            grad_clip: None,
        }
    }

    fn obj_cfg(dim: usize, n: usize) -> ObjectiveConfig {
        ObjectiveConfig {
            kind: ObjectiveKind::Elbo,
            kl_coefficient: 0.1,
            n,
            mc_samples: 1,
            prior: DiagGaussian::isotropic(dim, 0.0, 1.0).unwrap(),
        }
    }

    #[test]
    fn plain_step_is_exactly_theta_minus_alpha_g() {
        let p = VarParams::new(vec![1.0, 2.0], vec![0.5, -0.5], 0.01).unwrap();
        let g = ParamGrad {
            m: vec![0.5, -1.0],
            s: vec![0.25, 0.0],
        };
        let mut v = ParamGrad::zeros(2);
        let next = sgd_step(&p, &g, 0.1, 0.0, &mut v).unwrap();
        for j in 0..2 {
            assert_eq!(next.m[j], p.m[j] - 0.1 * g.m[j]);
            assert_eq!(next.s[j], p.s[j] - 0.1 * g.s[j]);
        }
        // Velocity mirrors the gradient so a later momentum run can resume.
        assert_eq!(v.m, g.m);
    }

    #[test]
    fn momentum_accumulates_velocity_as_mu_v_plus_g() {
        let p0 = VarParams::new(vec![0.0], vec![0.0], 0.01).unwrap();
        let g = ParamGrad {
            m: vec![1.0],
            s: vec![0.0],
        };
        let mut v = ParamGrad::zeros(1);
        let alpha = 0.1;
        let p1 = sgd_step(&p0, &g, alpha, 0.9, &mut v).unwrap();
        assert!((v.m[0] - 1.0).abs() < 1e-15);
        assert!((p1.m[0] + alpha).abs() < 1e-15);
        let p2 = sgd_step(&p1, &g, alpha, 0.9, &mut v).unwrap();
        // v2 = 0.9·1 + 1 = 1.9; θ2 = θ1 − 0.19.
        assert!((v.m[0] - 1.9).abs() < 1e-15);
        assert!((p2.m[0] - (p1.m[0] - alpha * 1.9)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_objective_follows_closed_form_contraction() {
        // g = L·θ on both blocks → θ_t = (1 − αL)^t θ_0.
        let lcoef = 2.0;
        let alpha = 0.1;
        let mut p = VarParams::new(vec![1.0, -0.5], vec![0.25, 0.75], 0.01).unwrap();
        let mut v = ParamGrad::zeros(2);
        let p0 = p.clone();
        for t in 1..=20 {
            let g = ParamGrad {
                m: p.m.iter().map(|x| lcoef * x).collect(),
                s: p.s.iter().map(|x| lcoef * x).collect(),
            };
            p = sgd_step(&p, &g, alpha, 0.0, &mut v).unwrap();
            let factor = (1.0 - alpha * lcoef) as f64;
            let scale = factor.powi(t);
            for j in 0..2 {
                assert!(
                    (p.m[j] - scale * p0.m[j]).abs() < 1e-12,
                    "step {t} coordinate {j}"
                );
            }
        }
    }

    #[test]
    fn step_rejects_bad_hyperparameters() {
        let p = VarParams::new(vec![0.0], vec![0.0], 0.01).unwrap();
        let g = ParamGrad::zeros(1);
        let mut v = ParamGrad::zeros(1);
        assert!(sgd_step(&p, &g, 0.0, 0.0, &mut v).is_err());
        assert!(sgd_step(&p, &g, 0.1, 1.0, &mut v).is_err());
        assert!(sgd_step(&p, &g, 0.1, -0.1, &mut v).is_err());
    }

    #[test]
    fn permutation_batches_partition_the_index_range() {
        let stream = EpsilonStream::new(5);
        let perm = stream.epoch_permutation(0, 103);
        let batches = batches_from_permutation(&perm, 10);
        assert_eq!(batches.len(), 11);
        assert_eq!(batches.last().unwrap().len(), 3);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        // Different epochs shuffle differently; same epoch is stable.
        assert_eq!(perm, stream.epoch_permutation(0, 103));
        assert_ne!(perm, stream.epoch_permutation(1, 103));
    }

    #[test]
    fn row_swap_with_composed_permutation_materializes_same_batches() {
        let ds = gen_blobs(24, 3, 2, 0.4, 9).unwrap();
        let (i, j) = (2usize, 17usize);
        let mut swapped = ds.clone();
        swapped.examples.swap(i, j);
        let stream = EpsilonStream::new(42);
        let perm = stream.epoch_permutation(0, 24);
        // Composing with the transposition (i j) redirects each batch slot to
        // the row now holding the original example.
        let composed: Vec<usize> = perm
            .iter()
            .map(|&k| {
                if k == i {
                    j
                } else if k == j {
                    i
                } else {
                    k
                }
            })
            .collect();
        let orig: Vec<Example> = batches_from_permutation(&perm, 5)
            .iter()
            .flatten()
            .map(|&k| ds.examples[k].clone())
            .collect();
        let swapped_view: Vec<Example> = batches_from_permutation(&composed, 5)
            .iter()
            .flatten()
            .map(|&k| swapped.examples[k].clone())
            .collect();
        assert_eq!(orig, swapped_view);
    }

    #[test]
    fn schedules_match_their_formulas_at_every_step() {
        let ds = gen_blobs(40, 2, 2, 0.3, 1).unwrap();
        let stream = EpsilonStream::new(7);
        let mut cfg = plain_cfg(0.4, 10, 6);
        cfg.lr_decay_factor = 0.5;
        cfg.lr_decay_every_epochs = 2;
        let run = SgdRun {
            dataset: &ds,
            cfg: &cfg,
            stream: &stream,
            augment: None,
        };
        let spe = run.steps_per_epoch();
        for t in 1..=run.total_steps() {
            let epoch = (t - 1) / spe;
            let expect = 0.4 * 0.5f64.powi((epoch / 2) as i32);
            assert_eq!(run.alpha(t), expect, "step decay at t = {t}");
        }
        let mut log_cfg = plain_cfg(0.3, 10, 6);
        log_cfg.schedule = ScheduleKind::LogT;
        let run = SgdRun {
            dataset: &ds,
            cfg: &log_cfg,
            stream: &stream,
            augment: None,
        };
        for t in 1..=run.total_steps() {
            let u = (t + 2) as f64;
            assert_eq!(run.alpha(t), 0.3 / (u * u.ln()), "log schedule at t = {t}");
        }
    }

    #[test]
    fn zero_epochs_returns_init_unchanged() {
        let ds = gen_blobs(20, 2, 2, 0.3, 2).unwrap();
        let arch = Architecture::new(vec![2, 4, 2], Activation::Tanh).unwrap();
        let stream = EpsilonStream::new(3);
        let init = VarParams::he_init(
            &arch,
            0.05,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let cfg = plain_cfg(0.1, 5, 0);
        let (theta, traj) = train(
            &ds,
            &arch,
            &obj_cfg(arch.param_count(), ds.len()),
            &cfg,
            &stream,
            None,
            init.clone(),
            &mut NoHook,
        )
        .unwrap();
        assert_eq!(theta, init);
        assert!(traj.steps.is_empty());
    }

    #[test]
    fn training_is_bitwise_deterministic_per_master_seed() {
        let ds = gen_blobs(30, 3, 2, 0.3, 4).unwrap();
        let arch = Architecture::new(vec![2, 5, 3], Activation::Tanh).unwrap();
        let cfg = plain_cfg(0.05, 10, 3);
        let oc = obj_cfg(arch.param_count(), ds.len());
        let go = |seed: u64| {
            let stream = EpsilonStream::new(seed);
            let init = VarParams::he_init(
                &arch,
                0.05,
                0.01,
                &mut ChaCha8Rng::seed_from_u64(11),
            )
            .unwrap();
            train(&ds, &arch, &oc, &cfg, &stream, None, init, &mut NoHook).unwrap()
        };
        let (a, ta) = go(123);
        let (b, tb) = go(123);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = go(124);
        assert_ne!(a.m, c.m);
    }

    #[test]
    fn hook_sees_every_step_in_order_with_pre_update_params() {
        let ds = gen_blobs(12, 2, 2, 0.3, 6).unwrap();
        let arch = Architecture::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let cfg = plain_cfg(0.1, 4, 2);
        let oc = obj_cfg(arch.param_count(), ds.len());
        let stream = EpsilonStream::new(8);
        let init = VarParams::he_init(
            &arch,
            0.05,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        let mut seen: Vec<(usize, f64)> = Vec::new();
        let init_m0 = init.m[0];
        let mut hook = |ctx: &StepContext<'_>| {
            seen.push((ctx.t, ctx.params.m[0]));
            assert_eq!(ctx.noise.rows(), 1);
            assert_eq!(ctx.examples.len(), ctx.indices.len());
            Ok(())
        };
        train(&ds, &arch, &oc, &cfg, &stream, None, init, &mut hook).unwrap();
        assert_eq!(seen.len(), 6);
        assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
        // The first hook call observes the untouched initialization.
        assert_eq!(seen[0].1, init_m0);
    }

    #[test]
    fn separable_blobs_reach_low_posterior_mean_error() {
        let ds = gen_blobs(100, 2, 2, 0.1, 12).unwrap();
        let arch = Architecture::new(vec![2, 16, 2], Activation::Tanh).unwrap();
        let mut cfg = plain_cfg(0.2, 10, 20); // 200 steps
        cfg.momentum = 0.0;
        let oc = obj_cfg(arch.param_count(), ds.len());
        let stream = EpsilonStream::new(15);
        let init = VarParams::he_init(
            &arch,
            0.05,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let (theta, _) = train(&ds, &arch, &oc, &cfg, &stream, None, init, &mut NoHook).unwrap();
        // Posterior-mean prediction: weights = m exactly.
        let mut wrong = 0.0;
        for z in &ds.examples {
            wrong += crate::model::zero_one(&theta.m, z, &arch).unwrap();
        }
        let err = wrong / ds.len() as f64;
        assert!(err < 0.05, "posterior-mean training error {err} too high");
    }

    #[test]
    fn divergence_is_reported_with_step_index() {
        let ds = gen_blobs(10, 2, 2, 0.3, 1).unwrap();
        let arch = Architecture::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let mut cfg = plain_cfg(1e160, 5, 50);
        cfg.lr_decay_factor = 1.0;
        let mut oc = obj_cfg(arch.param_count(), ds.len());
        oc.kl_coefficient = 1.0;
        let stream = EpsilonStream::new(2);
        let init = VarParams::he_init(
            &arch,
            0.05,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap();
        match train(&ds, &arch, &oc, &cfg, &stream, None, init, &mut NoHook) {
            Err(Error::NonFinite { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn posterior_loss_is_seeded_and_bounded() {
        let ds = gen_blobs(40, 2, 2, 0.3, 3).unwrap();
        let arch = Architecture::new(vec![2, 4, 2], Activation::Tanh).unwrap();
        let params = VarParams::he_init(
            &arch,
            0.1,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let a = posterior_loss(&params, &ds, &arch, LossKind::ZeroOne, 8, 44).unwrap();
        let b = posterior_loss(&params, &ds, &arch, LossKind::ZeroOne, 8, 44).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
        let n = posterior_loss(&params, &ds, &arch, LossKind::Nll, 8, 44).unwrap();
        assert!(n >= 0.0 && n.is_finite());
        assert!(posterior_loss(&params, &ds, &arch, LossKind::Nll, 0, 44).is_err());
    }

    #[test]
    fn doubling_eval_samples_halves_posterior_loss_variance() {
        let ds = gen_blobs(30, 2, 2, 0.25, 8).unwrap();
        let arch = Architecture::new(vec![2, 4, 2], Activation::Tanh).unwrap();
        // A wide posterior so the zero-one loss genuinely varies per draw.
        let params = VarParams::he_init(
            &arch,
            0.8,
            0.01,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let variance = |samples: usize| {
            let vals: Vec<f64> = (0..30u64)
                .map(|seed| {
                    posterior_loss(&params, &ds, &arch, LossKind::ZeroOne, samples, 1000 + seed)
                        .unwrap()
                })
                .collect();
            let std = crate::numeric::population_std(&vals);
            std * std
        };
        let v1 = variance(4);
        let v2 = variance(8);
        let ratio = v1 / v2;
        assert!(
            (1.5..=2.5).contains(&ratio),
            "variance ratio {ratio} should sit near 2 (Monte-Carlo 1/k scaling)"
        );
    }
}
