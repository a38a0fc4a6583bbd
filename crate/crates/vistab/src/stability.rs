//! Algorithmic-stability machinery: how far do two SGD trajectories drift
//! when one training example is swapped?
//!
//! The pipeline has three measured ingredients and one assembly step.
//!
//! 1. **Gradient sensitivity** ([`grad_delta`], [`DeltaHook`]): at each step
//!    of a real training run, evaluate the data-term gradient at the current
//!    parameters on an example `z` and on a candidate replacement `z̄`,
//!    sharing the step's noise, and record the difference in three norms —
//!    `‖Δg_m‖₂`, `‖Δg_s‖₁`, `‖Δg_s‖₂`. When `z = z̄` the difference is
//!    bitwise zero. Averaging over replacement pairs gives the per-step
//!    series `Δ̄_t`.
//! 2. **Expansion** ([`expansion_series`], [`aggregate_expansion`]): run two
//!    trainings from slightly different initializations under *identical*
//!    batches and noise, and record the per-step ratio of parameter
//!    distances after/before each update — the empirical per-step expansion
//!    of the SGD map. The profile aggregated over independent run pairs
//!    (mean plus four population standard deviations, per step) is the
//!    conservative `η_t` the bound consumes.
//! 3. **Assembly** ([`param_diff_bound`]): the swapped-example parameter
//!    drift is bounded by `(1/n) Σ_t (Π_{i>t} η_i) · α_t · Δ̄_t`, carried
//!    through separately for each norm flavor; suffix products are
//!    accumulated as sums of logarithms so long products neither overflow
//!    nor lose accuracy before the final exponential.
//!
//! Two routes then turn parameter drift into a posterior-distance term for
//! generalization accounting: a KL/total-variation route that needs only a
//! loss range `C` and the std floor `σ₀` ([`kl_route_bound`]), and a
//! Wasserstein route that additionally needs an external Lipschitz constant
//! for the loss ([`w2_route_bound`]). [`log_t_expansion_bound`] covers the
//! slow-schedule regime where the cumulative expansion admits a closed form.

use rayon::prelude::*;

use crate::error::Error;
use crate::model::{Architecture, Example, ParamGrad, VarParams};
use crate::numeric::{l1_diff, l1_norm, l2_diff, l2_norm, population_std};
use crate::objectives::{data_term_grad, NoiseBlock, ObjectiveConfig};
use crate::trainer::{run_sgd, SgdRun, StepContext, StepGradient, StepHook, Trajectory};
use crate::Result;

/// Norms of one gradient-sensitivity measurement, split by parameter block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaRecord {
    /// L2 norm of the mean-block gradient difference.
    pub m_l2: f64,
    /// L1 norm of the std-parameter-block gradient difference.
    pub s_l1: f64,
    /// L2 norm of the std-parameter-block gradient difference.
    pub s_l2: f64,
}

impl DeltaRecord {
    pub fn zero() -> Self {
        DeltaRecord {
            m_l2: 0.0,
            s_l1: 0.0,
            s_l2: 0.0,
        }
    }

    fn from_grad(g: &ParamGrad) -> Self {
        DeltaRecord {
            m_l2: l2_norm(&g.m),
            s_l1: l1_norm(&g.s),
            s_l2: l2_norm(&g.s),
        }
    }
}

/// Data-term gradient difference between an example and its replacement at
/// shared parameters and shared noise. The regularizer contributes equally
/// to both sides, so only the data term enters; identical inputs follow the
/// same floating-point path and the difference is exactly zero.
pub fn grad_delta(
    params: &VarParams,
    z: &Example,
    z_bar: &Example,
    noise: &NoiseBlock,
    arch: &Architecture,
    cfg: &ObjectiveConfig,
) -> Result<(ParamGrad, DeltaRecord)> {
    let mut g = data_term_grad(params, z, noise, arch, cfg.kind)?;
    let g_bar = data_term_grad(params, z_bar, noise, arch, cfg.kind)?;
    g.add_scaled(&g_bar, -1.0);
    let record = DeltaRecord::from_grad(&g);
    Ok((g, record))
}

/// A train-set index paired with the example that would replace it.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub train_index: usize,
    pub replacement: Example,
}

/// Step hook that measures [`grad_delta`] for every pair at every step of a
/// live training run. `records[t-1][p]` holds the step-`t` measurement for
/// pair `p`; pairs are evaluated in parallel but stored in order.
pub struct DeltaHook<'a> {
    pub pairs: &'a [Pair],
    pub arch: &'a Architecture,
    pub cfg: &'a ObjectiveConfig,
    pub originals: Vec<Example>,
    pub records: Vec<Vec<DeltaRecord>>,
}

impl<'a> DeltaHook<'a> {
    pub fn new(
        pairs: &'a [Pair],
        dataset_examples: &[Example],
        arch: &'a Architecture,
        cfg: &'a ObjectiveConfig,
    ) -> Result<Self> {
        let mut originals = Vec::with_capacity(pairs.len());
        for p in pairs {
            let z = dataset_examples.get(p.train_index).ok_or(Error::IndexOutOfBounds {
                index: p.train_index,
                len: dataset_examples.len(),
            })?;
            originals.push(z.clone());
        }
        Ok(DeltaHook {
            pairs,
            arch,
            cfg,
            originals,
            records: Vec::new(),
        })
    }
}

impl StepHook for DeltaHook<'_> {
    fn on_step(&mut self, ctx: &StepContext<'_>) -> Result<()> {
        let row: Result<Vec<DeltaRecord>> = self
            .pairs
            .par_iter()
            .zip(self.originals.par_iter())
            .map(|(pair, z)| {
                let (_, rec) =
                    grad_delta(ctx.params, z, &pair.replacement, ctx.noise, self.arch, self.cfg)?;
                Ok(rec)
            })
            .collect();
        self.records.push(row?);
        Ok(())
    }
}

/// Per-step pair-averaged gradient-sensitivity series, one vector per norm
/// flavor, each of length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSeries {
    pub m_l2: Vec<f64>,
    pub s_l1: Vec<f64>,
    pub s_l2: Vec<f64>,
}

impl DeltaSeries {
    pub fn len(&self) -> usize {
        self.m_l2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m_l2.is_empty()
    }

    /// All-zero series of length `t` (used when no pairs are measured).
    pub fn zeros(t: usize) -> Self {
        DeltaSeries {
            m_l2: vec![0.0; t],
            s_l1: vec![0.0; t],
            s_l2: vec![0.0; t],
        }
    }
}

/// Averages per-pair records into the `Δ̄_t` series the bound consumes.
pub fn pool_deltas(records: &[Vec<DeltaRecord>]) -> Result<DeltaSeries> {
    let mut out = DeltaSeries {
        m_l2: Vec::with_capacity(records.len()),
        s_l1: Vec::with_capacity(records.len()),
        s_l2: Vec::with_capacity(records.len()),
    };
    for (t, row) in records.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::Degenerate {
                reason: format!("no pair measurements at step {}", t + 1),
            });
        }
        let w = 1.0 / row.len() as f64;
        out.m_l2.push(row.iter().map(|r| r.m_l2).sum::<f64>() * w);
        out.s_l1.push(row.iter().map(|r| r.s_l1).sum::<f64>() * w);
        out.s_l2.push(row.iter().map(|r| r.s_l2).sum::<f64>() * w);
    }
    Ok(out)
}

/// Pools raw hook records from several independent runs: each run is
/// pair-averaged first ([`pool_deltas`]), then runs are averaged per step.
/// The report pipeline and the recompute-from-trace path both call this one
/// function, so their floating-point results agree bit for bit.
pub fn pool_runs(records_per_run: &[Vec<Vec<DeltaRecord>>]) -> Result<DeltaSeries> {
    if records_per_run.is_empty() {
        return Err(Error::Degenerate {
            reason: "no runs to pool".into(),
        });
    }
    let per_run: Vec<DeltaSeries> = records_per_run
        .iter()
        .map(|r| pool_deltas(r))
        .collect::<Result<_>>()?;
    let t_len = per_run[0].len();
    for s in &per_run {
        if s.len() != t_len {
            return Err(Error::DimensionMismatch {
                expected: t_len,
                got: s.len(),
            });
        }
    }
    let w = 1.0 / per_run.len() as f64;
    let mut out = DeltaSeries::zeros(t_len);
    for t in 0..t_len {
        out.m_l2[t] = per_run.iter().map(|s| s.m_l2[t]).sum::<f64>() * w;
        out.s_l1[t] = per_run.iter().map(|s| s.s_l1[t]).sum::<f64>() * w;
        out.s_l2[t] = per_run.iter().map(|s| s.s_l2[t]).sum::<f64>() * w;
    }
    Ok(out)
}

/// Per-step expansion ratios of one twin-run pair (length `T`). Each entry
/// is the worst ratio across the four block/norm flavors.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionSeries {
    pub ratios: Vec<f64>,
}

/// Distance between two augmented states in one flavor. With momentum the
/// velocity is appended to its parameter block, so the ratio tracks the
/// expansion of the full `(θ, v)` update map rather than of `θ` alone.
fn flavor_distances(
    a: &VarParams,
    b: &VarParams,
    va: &ParamGrad,
    vb: &ParamGrad,
    with_velocity: bool,
) -> [f64; 4] {
    let cat = |x: &[f64], y: &[f64]| -> Vec<f64> {
        let mut v = x.to_vec();
        v.extend_from_slice(y);
        v
    };
    let (am, bm, as_, bs) = if with_velocity {
        (cat(&a.m, &va.m), cat(&b.m, &vb.m), cat(&a.s, &va.s), cat(&b.s, &vb.s))
    } else {
        (a.m.clone(), b.m.clone(), a.s.clone(), b.s.clone())
    };
    [
        l1_diff(&am, &bm),
        l2_diff(&am, &bm),
        l1_diff(&as_, &bs),
        l2_diff(&as_, &bs),
    ]
}

/// Runs two trainings in lockstep — same batches, same noise, different
/// initializations — and records, for every step, the worst post/pre ratio
/// of the state distance across the four flavors (means and std-parameters,
/// L1 and L2). A zero pre-step distance in a flavor contributes the neutral
/// ratio 1 for that flavor. Identical initializations are rejected: every
/// distance would be zero and the measurement empty of content.
pub fn expansion_series<G: StepGradient>(
    oracle: &G,
    run: &SgdRun<'_>,
    init_a: VarParams,
    init_b: VarParams,
) -> Result<ExpansionSeries> {
    if init_a.dim() != init_b.dim() {
        return Err(Error::DimensionMismatch {
            expected: init_a.dim(),
            got: init_b.dim(),
        });
    }
    if init_a == init_b {
        return Err(Error::Degenerate {
            reason: "twin-run expansion needs distinct initializations".into(),
        });
    }
    run.cfg.validate(run.dataset.len())?;
    let dim = init_a.dim();
    let momentum = run.cfg.momentum;
    let with_velocity = momentum > 0.0;
    let mut pa = init_a;
    let mut pb = init_b;
    let mut va = ParamGrad::zeros(dim);
    let mut vb = ParamGrad::zeros(dim);
    let mut ratios = Vec::new();
    run.for_each_step(oracle.mc_samples(), dim, |step| {
        let pre = flavor_distances(&pa, &pb, &va, &vb, with_velocity);
        let ga = oracle.grad(&pa, step.examples, step.noise)?;
        let gb = oracle.grad(&pb, step.examples, step.noise)?;
        if !ga.is_finite() || !gb.is_finite() {
            return Err(Error::NonFinite {
                step: step.t,
                what: "gradient",
            });
        }
        let advance = |p: &VarParams, g: &ParamGrad, v: &mut ParamGrad| {
            match crate::trainer::sgd_step(p, g, step.alpha, momentum, v) {
                Ok(next) => Ok(next),
                Err(Error::OutOfRange { name: "params", .. }) => Err(Error::NonFinite {
                    step: step.t,
                    what: "parameters",
                }),
                Err(e) => Err(e),
            }
        };
        pa = advance(&pa, &ga, &mut va)?;
        pb = advance(&pb, &gb, &mut vb)?;
        let post = flavor_distances(&pa, &pb, &va, &vb, with_velocity);
        let mut worst = f64::NEG_INFINITY;
        for k in 0..4 {
            let r = if pre[k] == 0.0 { 1.0 } else { post[k] / pre[k] };
            if !r.is_finite() {
                return Err(Error::NonFinite {
                    step: step.t,
                    what: "expansion ratio",
                });
            }
            worst = worst.max(r);
        }
        ratios.push(worst);
        Ok(())
    })?;
    Ok(ExpansionSeries { ratios })
}

/// Perturbs an initialization with isotropic Gaussian noise on both blocks —
/// the standard way to produce the second twin for [`expansion_series`].
pub fn twin_init(
    init: &VarParams,
    perturb_scale: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<VarParams> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    if !(perturb_scale.is_finite() && perturb_scale > 0.0) {
        return Err(Error::out_of_range(
            "perturb_scale",
            format!("must be positive, got {perturb_scale}"),
        ));
    }
    let m = init
        .m
        .iter()
        .map(|x| x + perturb_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let s = init
        .s
        .iter()
        .map(|x| x + perturb_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    VarParams::new(m, s, init.sigma0())
}

/// The conservative per-step expansion profile `η_t` used by the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionProfile {
    pub eta: Vec<f64>,
}

/// Aggregates twin-run series into a per-step profile: at each step, the
/// mean ratio across run pairs plus four population standard deviations.
/// With ratios `{1.0, 1.2}` at some step the profile reads `1.5` there.
/// Requires at least two series so the spread term is meaningful.
pub fn aggregate_expansion(series: &[ExpansionSeries]) -> Result<ExpansionProfile> {
    if series.len() < 2 {
        return Err(Error::Degenerate {
            reason: format!(
                "expansion profile needs ≥ 2 twin-run series, got {}",
                series.len()
            ),
        });
    }
    let t_len = series[0].ratios.len();
    for (i, s) in series.iter().enumerate() {
        if s.ratios.len() != t_len {
            return Err(Error::DimensionMismatch {
                expected: t_len,
                got: series[i].ratios.len(),
            });
        }
    }
    let mut eta = Vec::with_capacity(t_len);
    let mut column = vec![0.0; series.len()];
    for t in 0..t_len {
        for (r, s) in column.iter_mut().zip(series) {
            *r = s.ratios[t];
        }
        let mean = column.iter().sum::<f64>() / column.len() as f64;
        eta.push(mean + 4.0 * population_std(&column));
    }
    Ok(ExpansionProfile { eta })
}

/// Inputs to the parameter-drift bound. All series must share the length of
/// the trajectory; `n` is the training-set size the swap argument ranges
/// over.
pub struct StabilityBoundInputs<'a> {
    pub deltas: &'a DeltaSeries,
    pub eta: &'a [f64],
    pub alphas: &'a [f64],
    pub n: usize,
}

/// The drift bound per norm flavor: means in L2, std-parameters in L1 and
/// L2. The σ-parameterization is per-coordinate 1-Lipschitz, so each `s`
/// flavor also bounds the matching norm of the induced std difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffBounds {
    pub m_l2: f64,
    pub s_l1: f64,
    pub s_l2: f64,
}

/// Evaluates `(1/n) Σ_t (Π_{i=t+1}^T η_i) α_t Δ̄_t` for each flavor. The
/// suffix products are formed as running sums of `ln η_i` from the tail, so
/// a long trajectory cannot overflow or round the intermediate product; each
/// term is exponentiated only once.
pub fn param_diff_bound(inp: &StabilityBoundInputs<'_>) -> Result<DiffBounds> {
    let t_len = inp.deltas.len();
    if inp.eta.len() != t_len || inp.alphas.len() != t_len {
        return Err(Error::DimensionMismatch {
            expected: t_len,
            got: inp.eta.len().min(inp.alphas.len()),
        });
    }
    if inp.n == 0 {
        return Err(Error::out_of_range("n", "training-set size must be ≥ 1"));
    }
    for (i, &e) in inp.eta.iter().enumerate() {
        if !(e.is_finite() && e > 0.0) {
            return Err(Error::NonPositive {
                name: "eta",
                value: e,
                index: i,
            });
        }
    }
    for (i, &a) in inp.alphas.iter().enumerate() {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::NonPositive {
                name: "alpha",
                value: a,
                index: i,
            });
        }
    }
    // log_suffix[t] = Σ_{i=t+1..T} ln η_i, built backwards.
    let mut log_suffix = vec![0.0; t_len];
    for t in (0..t_len.saturating_sub(1)).rev() {
        log_suffix[t] = log_suffix[t + 1] + inp.eta[t + 1].ln();
    }
    let accumulate = |delta: &[f64]| -> Result<f64> {
        let mut sum = 0.0;
        for t in 0..t_len {
            let d = delta[t];
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::NonFinite {
                    step: t + 1,
                    what: "gradient sensitivity",
                });
            }
            sum += log_suffix[t].exp() * inp.alphas[t] * d;
        }
        Ok(sum / inp.n as f64)
    };
    Ok(DiffBounds {
        m_l2: accumulate(&inp.deltas.m_l2)?,
        s_l1: accumulate(&inp.deltas.s_l1)?,
        s_l2: accumulate(&inp.deltas.s_l2)?,
    })
}

/// Posterior-sensitivity bound via the KL/total-variation route:
/// `2C/√σ₀ · √(D_s,1) + C/σ₀ · D_s,2 + C/σ₀ · D_m,2`, where `C` is the loss
/// range and `D` the drift bounds. Needs only the std floor — no smoothness
/// of the loss in the weights.
pub fn kl_route_bound(diffs: &DiffBounds, c_loss: f64, sigma0: f64) -> Result<f64> {
    if !(c_loss.is_finite() && c_loss > 0.0) {
        return Err(Error::out_of_range(
            "c_loss",
            format!("loss range must be positive, got {c_loss}"),
        ));
    }
    if !(sigma0.is_finite() && sigma0 > 0.0) {
        return Err(Error::out_of_range(
            "sigma0",
            format!("std floor must be positive, got {sigma0}"),
        ));
    }
    check_diffs(diffs)?;
    Ok(2.0 * c_loss / sigma0.sqrt() * diffs.s_l1.sqrt()
        + c_loss / sigma0 * diffs.s_l2
        + c_loss / sigma0 * diffs.m_l2)
}

fn check_diffs(diffs: &DiffBounds) -> Result<()> {
    for (name, v) in [
        ("m_l2", diffs.m_l2),
        ("s_l1", diffs.s_l1),
        ("s_l2", diffs.s_l2),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::out_of_range(
                "diff_bounds",
                format!("{name} must be finite and ≥ 0, got {v}"),
            ));
        }
    }
    Ok(())
}

/// Posterior-sensitivity bound via the Wasserstein route:
/// `K · (D_m,2 + D_s,2)` with `K` a Lipschitz constant of the expected loss
/// in the 2-Wasserstein metric. `K` cannot be measured here; when absent the
/// raw distance sum is returned with `k_missing = true` so reports can mark
/// the figure as a distance, not a certified loss bound.
pub fn w2_route_bound(diffs: &DiffBounds, k_lip: Option<f64>) -> Result<(f64, bool)> {
    check_diffs(diffs)?;
    let dist = diffs.m_l2 + diffs.s_l2;
    match k_lip {
        Some(k) => {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::out_of_range(
                    "k_lip",
                    format!("Lipschitz constant must be positive, got {k}"),
                ));
            }
            Ok((k * dist, false))
        }
        None => Ok((dist, true)),
    }
}

/// Closed-form drift bound for the slow schedule `α_t = c/((t+2)ln(t+2))`
/// when the step gradient is `L`-Lipschitz in the parameters and bounded in
/// norm by `β` (a clip ceiling enforces the latter), with contraction margin
/// `cL < 1`: value `2cβ·ln(T+1)/(n·ln 2)`. Grows only logarithmically in
/// the step count.
pub fn log_t_expansion_bound(
    c: f64,
    grad_lipschitz: f64,
    grad_bound: f64,
    t_steps: usize,
    n: usize,
) -> Result<f64> {
    for (name, v) in [
        ("c", c),
        ("grad_lipschitz", grad_lipschitz),
        ("grad_bound", grad_bound),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::out_of_range(
                name,
                format!("must be positive, got {v}"),
            ));
        }
    }
    if c * grad_lipschitz >= 1.0 {
        return Err(Error::out_of_range(
            "c",
            format!(
                "slow-schedule bound needs c·L < 1, got c·L = {}",
                c * grad_lipschitz
            ),
        ));
    }
    if n == 0 || t_steps == 0 {
        return Err(Error::out_of_range(
            "t_steps/n",
            "need at least one step and one example",
        ));
    }
    Ok(2.0 * c * grad_bound * ((t_steps + 1) as f64).ln() / (n as f64 * 2.0f64.ln()))
}

/// Convenience wrapper: train once with a [`DeltaHook`] attached, returning
/// final parameters, trajectory, and the pooled sensitivity series.
#[allow(clippy::too_many_arguments)]
pub fn train_with_deltas(
    run: &SgdRun<'_>,
    arch: &Architecture,
    cfg: &ObjectiveConfig,
    pairs: &[Pair],
    init: VarParams,
) -> Result<(VarParams, Trajectory, DeltaSeries)> {
    let oracle = crate::trainer::MlpGradient {
        arch,
        cfg,
        clip: run.cfg.grad_clip,
    };
    let mut hook = DeltaHook::new(pairs, &run.dataset.examples, arch, cfg)?;
    let (theta, traj) = run_sgd(&oracle, run, init, &mut hook)?;
    let deltas = if pairs.is_empty() {
        DeltaSeries::zeros(traj.steps.len())
    } else {
        pool_deltas(&hook.records)?
    };
    Ok((theta, traj, deltas))
}
