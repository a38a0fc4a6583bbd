//! Two constructions that mark the edges of the theory.
//!
//! **Parameter-conditioned chain rule failure** ([`bernoulli_chain_kls`]):
//! a two-step Bernoulli process whose parameter update is deterministic.
//! Conditioning the KL chain rule on the *parameter* history (rather than
//! the sampled values) makes every conditional term vanish, so the summed
//! decomposition collapses to the first marginal KL — strictly below the
//! true joint KL. Distribution-valued iterates therefore cannot be analyzed
//! by pushing the chain rule through parameter space.
//!
//! **Stability/PAC-KL divergence** ([`logistic_extreme_run`]): a 1-D
//! fixed-variance logistic model trained on a dataset alternating between
//! `(x = 1, y = 1)` and `(x = −1, y = 0)`. Both example types produce the
//! *same* floating-point gradient at every weight value, so swapping one
//! example for the other moves nothing: the measured per-step gradient gap
//! and the assembled stability bound are exactly zero. The posterior mean
//! still marches away from its initialization, so the KL term driving
//! prior-anchored PAC-style bounds grows without limit. Stability and
//! KL-to-prior thus quantify genuinely different notions of sensitivity.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datasets::Dataset;
use crate::error::Error;
use crate::gauss::{kl_discrete, DiscreteDist};
use crate::model::{Example, ParamGrad, VarParams};
use crate::numeric::sigmoid;
use crate::objectives::NoiseBlock;
use crate::trainer::StepGradient;
use crate::Result;

/// Two-step Bernoulli chain with a deterministic parameter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliChainSetup {
    /// First-step success probability on the unperturbed side.
    pub theta1: f64,
    /// First-step success probability on the perturbed side.
    pub theta1_bar: f64,
    /// Deterministic shift applied to both parameters before step two.
    pub update_delta: f64,
}

impl Default for BernoulliChainSetup {
    fn default() -> Self {
        BernoulliChainSetup {
            theta1: 0.4,
            theta1_bar: 0.6,
            update_delta: -0.2,
        }
    }
}

impl BernoulliChainSetup {
    pub fn theta2(&self) -> f64 {
        self.theta1 + self.update_delta
    }

    pub fn theta2_bar(&self) -> f64 {
        self.theta1_bar + self.update_delta
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta1", self.theta1),
            ("theta1_bar", self.theta1_bar),
            ("theta2", self.theta2()),
            ("theta2_bar", self.theta2_bar()),
        ] {
            if !(v.is_finite() && v > 0.0 && v < 1.0) {
                return Err(Error::out_of_range(
                    name,
                    format!("success probability must lie in (0, 1), got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// The two sides of the decomposition comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainKls {
    /// KL between the two-step joints.
    pub joint: f64,
    /// First marginal KL plus the (vanishing) parameter-conditioned terms.
    pub conditional_sum: f64,
    /// `joint − conditional_sum`; positive exactly when the decomposition
    /// undercounts.
    pub gap: f64,
    /// KL between the second-step marginals — the mass the conditioning
    /// throws away.
    pub second_step: f64,
}

/// Evaluates both sides of the parameter-conditioned chain decomposition.
///
/// The parameter update is deterministic, so on each side the two draws are
/// independent and the joint is the product `Bern(θ₁) ⊗ Bern(θ₂)`. The
/// joint KL is computed by brute-force enumeration over the four outcomes —
/// not by additivity — so the comparison does not assume what it is trying
/// to show. With the default setup the joint evaluates to ≈ 0.173 while the
/// conditional sum evaluates to ≈ 0.081.
pub fn bernoulli_chain_kls(setup: &BernoulliChainSetup) -> Result<ChainKls> {
    setup.validate()?;
    let joint_of = |p1: f64, p2: f64| -> Result<DiscreteDist> {
        // Outcome order: (0,0), (0,1), (1,0), (1,1).
        DiscreteDist::new(vec![
            (1.0 - p1) * (1.0 - p2),
            (1.0 - p1) * p2,
            p1 * (1.0 - p2),
            p1 * p2,
        ])
    };
    let q = joint_of(setup.theta1, setup.theta2())?;
    let p = joint_of(setup.theta1_bar, setup.theta2_bar())?;
    let joint = kl_discrete(&q, &p)?;

    let first = kl_discrete(
        &DiscreteDist::bernoulli(setup.theta1)?,
        &DiscreteDist::bernoulli(setup.theta1_bar)?,
    )?;
    // Conditioned on a shared parameter value ρ, both sides' second draws
    // follow Bern(ρ + δ): every conditional KL term is identically zero.
    let conditional_sum = first + 0.0;

    let second_step = kl_discrete(
        &DiscreteDist::bernoulli(setup.theta2())?,
        &DiscreteDist::bernoulli(setup.theta2_bar())?,
    )?;
    Ok(ChainKls {
        joint,
        conditional_sum,
        gap: joint - conditional_sum,
        second_step,
    })
}

/// Per-example negative log likelihood of the 1-D logistic model at weight
/// `w`: `softplus(−u)` for `y = 1` and `softplus(u)` for `y = 0`, `u = w·x`.
pub fn logistic_nll(w: f64, x: f64, y: usize) -> f64 {
    let u = w * x;
    if y == 1 {
        crate::numeric::softplus(-u)
    } else {
        crate::numeric::softplus(u)
    }
}

/// Gradient of [`logistic_nll`] in `w`, written in the canonical residual
/// form `∂ℓ/∂u · x`. The residual is `−sigmoid(−u)` for `y = 1` and
/// `sigmoid(u)` for `y = 0`. Because `u` is produced by an exact product
/// with `x ∈ {−1, 1}`, the pairs `(x = 1, y = 1)` and `(x = −1, y = 0)`
/// traverse identical floating-point operations and return bitwise-equal
/// gradients at every `w`.
pub fn logistic_grad_w(w: f64, x: f64, y: usize) -> f64 {
    let u = w * x;
    let residual = if y == 1 { -sigmoid(-u) } else { sigmoid(u) };
    residual * x
}

/// Dataset alternating between the two gradient-equivalent example types:
/// even indices `(x = 1, y = 1)`, odd indices `(x = −1, y = 0)`.
pub fn alternating_dataset(n: usize) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::out_of_range(
            "n",
            "alternating dataset needs at least one example of each type",
        ));
    }
    let examples = (0..n)
        .map(|i| {
            if i % 2 == 0 {
                Example {
                    x: vec![1.0],
                    y: 1,
                }
            } else {
                Example {
                    x: vec![-1.0],
                    y: 0,
                }
            }
        })
        .collect();
    Dataset::new(examples, 1, 2, "alternating(x=±1)".into())
}

/// Configuration of the fixed-variance logistic run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticExtremeSetup {
    /// Fixed posterior standard deviation (never trained).
    pub sigma: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// Number of alternating training examples.
    pub n_data: usize,
    /// Weight draws per gradient estimate.
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for LogisticExtremeSetup {
    fn default() -> Self {
        LogisticExtremeSetup {
            sigma: 0.05,
            learning_rate: 0.1,
            steps: 1000,
            n_data: 20,
            mc_samples: 4,
            seed: 7,
        }
    }
}

impl LogisticExtremeSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::out_of_range(
                "sigma",
                format!("must be positive, got {}", self.sigma),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::out_of_range(
                "learning_rate",
                format!("must be positive, got {}", self.learning_rate),
            ));
        }
        if self.steps == 0 {
            return Err(Error::out_of_range("steps", "need at least one step"));
        }
        if self.n_data < 2 {
            return Err(Error::out_of_range("n_data", "need at least two examples"));
        }
        if self.mc_samples == 0 {
            return Err(Error::out_of_range("mc_samples", "need at least one draw"));
        }
        Ok(())
    }
}

/// Trace of the fixed-variance logistic run.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticExtremeResult {
    /// Posterior means `m_0, …, m_T`.
    pub means: Vec<f64>,
    /// `KL(N(m_t, σ²) ‖ N(m_0, σ²)) = (m_t − m_0)²/(2σ²)` per step.
    pub pac_kls: Vec<f64>,
    /// Largest per-step gradient gap between the two example types.
    pub max_grad_delta: f64,
    /// Drift bound assembled from the measured gaps with neutral expansion:
    /// `(α/n)·Σ_t gap_t`.
    pub stability_bound: f64,
}

impl LogisticExtremeResult {
    pub fn final_mean(&self) -> f64 {
        *self.means.last().expect("at least the initial mean")
    }

    pub fn final_pac_kl(&self) -> f64 {
        *self.pac_kls.last().expect("at least the initial KL")
    }
}

/// Runs full-batch SGD on the posterior mean of the fixed-variance logistic
/// model over the alternating dataset, measuring at every step — under the
/// step's shared weight draws — the gradient gap between the two example
/// types. The gap is bitwise zero throughout, hence so is the assembled
/// stability bound, while the reported KL to the initialization grows like
/// `m_t²` as the mean escapes toward infinity.
pub fn logistic_extreme_run(setup: &LogisticExtremeSetup) -> Result<LogisticExtremeResult> {
    setup.validate()?;
    let data = alternating_dataset(setup.n_data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let m0 = 0.0f64;
    let mut m = m0;
    let mut means = vec![m0];
    let mut pac_kls = vec![0.0];
    let mut max_gap = 0.0f64;
    let mut gap_sum = 0.0f64;
    let two_var = 2.0 * setup.sigma * setup.sigma;
    for step in 1..=setup.steps {
        // One set of weight draws serves the whole batch this step.
        let eps: Vec<f64> = (0..setup.mc_samples)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let example_grad = |z: &Example| -> f64 {
            let mut g = 0.0;
            for &e in &eps {
                g += logistic_grad_w(m + setup.sigma * e, z.x[0], z.y);
            }
            g / setup.mc_samples as f64
        };
        let gap = (example_grad(&data.examples[0]) - example_grad(&data.examples[1])).abs();
        max_gap = max_gap.max(gap);
        gap_sum += gap;
        let mut batch_grad = 0.0;
        for z in &data.examples {
            batch_grad += example_grad(z);
        }
        batch_grad /= data.len() as f64;
        m -= setup.learning_rate * batch_grad;
        if !m.is_finite() {
            return Err(Error::NonFinite {
                step,
                what: "posterior mean",
            });
        }
        means.push(m);
        pac_kls.push((m - m0) * (m - m0) / two_var);
    }
    let stability_bound = setup.learning_rate * gap_sum / setup.n_data as f64;
    Ok(LogisticExtremeResult {
        means,
        pac_kls,
        max_grad_delta: max_gap,
        stability_bound,
    })
}

/// [`StepGradient`] adapter so the fixed-variance logistic model can run
/// through the standard training pipeline. Parameters must be 1-D; the
/// mean receives the Monte-Carlo residual gradient and the std-parameter
/// block is frozen at zero gradient, keeping σ constant for the whole run.
pub struct LogisticGradient {
    pub mc_samples: usize,
}

impl StepGradient for LogisticGradient {
    fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    fn grad(&self, params: &VarParams, batch: &[Example], noise: &NoiseBlock) -> Result<ParamGrad> {
        if params.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: params.dim(),
            });
        }
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if noise.dim() != 1 || noise.rows() != self.mc_samples {
            return Err(Error::DimensionMismatch {
                expected: self.mc_samples,
                got: noise.rows(),
            });
        }
        let sigma = params.sigma()[0];
        let m = params.m[0];
        let mut g = 0.0;
        for z in batch {
            if z.x.len() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: z.x.len(),
                });
            }
            if z.y > 1 {
                return Err(Error::LabelOutOfRange {
                    label: z.y,
                    classes: 2,
                });
            }
            let mut per = 0.0;
            for k in 0..self.mc_samples {
                let w = m + sigma * noise.row(k)[0];
                per += logistic_grad_w(w, z.x[0], z.y);
            }
            g += per / self.mc_samples as f64;
        }
        Ok(ParamGrad {
            m: vec![g / batch.len() as f64],
            s: vec![0.0],
        })
    }
}
