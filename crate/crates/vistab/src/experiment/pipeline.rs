//! The end-to-end protocol: data → conditions → expansion → ε-runs →
//! sensitivity pooling → bound assembly → report + traces.
//!
//! Every random choice flows from the config seed through labeled
//! derivation domains, so a `(config, seed)` pair fixes the entire output
//! byte for byte. The base train/test data is shared across conditions;
//! label corruption and augmentation are layered per condition; run-level
//! seeds are derived per `(condition, run index)` unless explicit seed
//! lists override them. Independent runs execute in parallel and are
//! reassembled in index order, keeping parallelism invisible in the output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

use crate::counterexamples::{
    alternating_dataset, bernoulli_chain_kls, logistic_extreme_run, logistic_nll,
    BernoulliChainSetup, LogisticExtremeSetup, LogisticGradient,
};
use crate::datasets::{corrupt_labels, gen_blobs, load_csv, AugmentConfig, CsvSchema, Dataset};
use crate::error::Error;
use crate::experiment::config::{ConditionSpec, DataKind, ExperimentConfig, ModelKind};
use crate::experiment::report::{
    compare_table, BoundReport, ExpansionSummary, LossReport, PacReport, StabilityReport,
    UnionSummary,
};
use crate::experiment::trace;
use crate::gauss::{kl_diag_gauss, DiagGaussian};
use crate::model::{Architecture, Example, ParamGrad, VarParams};
use crate::numeric::{softplus_inv, sub_seed};
use crate::objectives::{NoiseBlock, ObjectiveConfig, ObjectiveKind};
use crate::pac_bayes::{germain_bound, germain_optimal_lambda, mcallester_bound, union_bound, PacBayesConfig, UnionGrid};
use crate::stability::{
    aggregate_expansion, expansion_series, grad_delta, kl_route_bound, param_diff_bound,
    pool_runs, twin_init, w2_route_bound, DeltaRecord, DeltaSeries, ExpansionProfile,
    ExpansionSeries, Pair, StabilityBoundInputs,
};
use crate::trainer::{
    posterior_loss, run_sgd, EpsilonStream, LossKind, MlpGradient, SgdRun, StepContext,
    StepGradient, StepHook, TrainConfig, Trajectory,
};
use crate::Result;

/// Seed-derivation domains. Data-level domains hang off the master seed
/// (shared across conditions); run-level domains hang off the condition
/// seed.
const DOM_COND: u64 = 100;
const DOM_TRAIN_DATA: u64 = 101;
const DOM_CORRUPT: u64 = 103;
const DOM_POOL: u64 = 104;
const DOM_POOL_CORRUPT: u64 = 105;
const DOM_PAIR_IDX: u64 = 106;
const DOM_RUN_STREAM: u64 = 107;
const DOM_RUN_INIT: u64 = 108;
const DOM_EXP_STREAM: u64 = 109;
const DOM_EXP_INIT: u64 = 110;
const DOM_TWIN: u64 = 111;
const DOM_EVAL: u64 = 112;

/// Report output format for the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    Json,
}

/// Gradient oracle covering both model families behind one dispatch.
enum Oracle<'a> {
    Mlp(MlpGradient<'a>),
    Logistic(LogisticGradient),
}

impl StepGradient for Oracle<'_> {
    fn mc_samples(&self) -> usize {
        match self {
            Oracle::Mlp(o) => o.mc_samples(),
            Oracle::Logistic(o) => o.mc_samples(),
        }
    }

    fn grad(&self, params: &VarParams, batch: &[Example], noise: &NoiseBlock) -> Result<ParamGrad> {
        match self {
            Oracle::Mlp(o) => o.grad(params, batch, noise),
            Oracle::Logistic(o) => o.grad(params, batch, noise),
        }
    }
}

/// Everything shared by the protocols of one (condition, objective) cell.
struct CondContext {
    cond: ConditionSpec,
    cond_seed: u64,
    train: Dataset,
    test: Dataset,
    pairs: Vec<Pair>,
    arch: Option<Architecture>,
    obj_cfg: Option<ObjectiveConfig>,
    train_cfg: TrainConfig,
    augment: Option<AugmentConfig>,
    objective: ObjectiveKind,
    mc_samples: usize,
    param_dim: usize,
}

impl CondContext {
    fn oracle(&self) -> Oracle<'_> {
        match (&self.arch, &self.obj_cfg) {
            (Some(arch), Some(cfg)) => Oracle::Mlp(MlpGradient {
                arch,
                cfg,
                clip: self.train_cfg.grad_clip,
            }),
            _ => Oracle::Logistic(LogisticGradient {
                mc_samples: self.mc_samples,
            }),
        }
    }

    fn sgd_run<'a>(&'a self, stream: &'a EpsilonStream) -> SgdRun<'a> {
        SgdRun {
            dataset: &self.train,
            cfg: &self.train_cfg,
            stream,
            augment: self.augment.as_ref(),
        }
    }
}

fn objective_label(kind: ObjectiveKind) -> &'static str {
    match kind {
        ObjectiveKind::Elbo => "elbo",
        ObjectiveKind::Dlm => "dlm",
    }
}

/// Weight draws per objective evaluation for a given kind.
fn objective_mc(cfg: &ExperimentConfig, kind: ObjectiveKind) -> usize {
    match kind {
        ObjectiveKind::Elbo => cfg.mc_samples,
        ObjectiveKind::Dlm => cfg.dlm_mc_samples,
    }
}

fn flip_example(z: &Example) -> Example {
    if z.y == 1 {
        Example {
            x: vec![-1.0],
            y: 0,
        }
    } else {
        Example {
            x: vec![1.0],
            y: 1,
        }
    }
}

/// Builds train/test data and the replacement pool for the base
/// distribution (before any condition layering).
fn build_base_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset, Option<Dataset>)> {
    match cfg.data {
        DataKind::Blobs => {
            // Draw one dataset and slice it, so train, test, and the
            // replacement pool all share the same cluster centers: the
            // generator places centers per call, and independent calls
            // would describe three unrelated distributions.
            let total = cfg.data_n + cfg.data_test_n + cfg.pair_count;
            let all = gen_blobs(
                total,
                cfg.data_classes,
                cfg.data_features,
                cfg.data_spread,
                sub_seed(cfg.seed, DOM_TRAIN_DATA, 0),
            )?;
            let slice = |lo: usize, hi: usize, tag: &str| {
                Dataset::new(
                    all.examples[lo..hi].to_vec(),
                    all.feature_dim,
                    all.class_count,
                    format!("{tag}[{lo}..{hi}] of {}", all.provenance),
                )
            };
            let train = slice(0, cfg.data_n, "train")?;
            let test = slice(cfg.data_n, cfg.data_n + cfg.data_test_n, "test")?;
            let pool = if cfg.pair_count > 0 {
                Some(slice(cfg.data_n + cfg.data_test_n, total, "pool")?)
            } else {
                None
            };
            Ok((train, test, pool))
        }
        DataKind::Csv => {
            let schema = CsvSchema {
                feature_dim: cfg.data_features,
                class_count: cfg.data_classes,
            };
            let train = load_csv(cfg.csv_train.as_ref().expect("validated"), schema)?;
            let test = load_csv(cfg.csv_test.as_ref().expect("validated"), schema)?;
            if cfg.pair_count > train.len() {
                return Err(Error::Config {
                    reason: format!(
                        "key 'pair_count': cannot exceed the {} training rows",
                        train.len()
                    ),
                });
            }
            let pool = if cfg.pair_count > 0 {
                // Replacement examples are drawn from the held-out file: the
                // closest available stand-in for fresh draws from the data
                // distribution.
                let mut rng =
                    ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, DOM_POOL, 0));
                let examples = (0..cfg.pair_count)
                    .map(|_| test.examples[rng.random_range(0..test.len())].clone())
                    .collect();
                Some(Dataset::new(
                    examples,
                    test.feature_dim,
                    test.class_count,
                    format!("pool({})", test.provenance),
                )?)
            } else {
                None
            };
            Ok((train, test, pool))
        }
        DataKind::Alternating => {
            let train = alternating_dataset(cfg.data_n)?;
            let test = alternating_dataset(cfg.data_test_n.max(2))?;
            // Replacements are the paired opposite type — built per pair.
            Ok((train, test, None))
        }
    }
}

/// Assembles the full context for one (condition, objective) cell.
fn build_context(
    cfg: &ExperimentConfig,
    cond_idx: usize,
    objective: ObjectiveKind,
) -> Result<CondContext> {
    let cond = cfg.conditions[cond_idx].clone();
    let cond_seed = sub_seed(cfg.seed, DOM_COND, cond_idx as u64);
    let (train_base, test, pool_base) = build_base_data(cfg)?;
    let train = if cond.corrupt {
        corrupt_labels(
            &train_base,
            cfg.label_noise,
            sub_seed(cfg.seed, DOM_CORRUPT, 0),
        )?
    } else {
        train_base
    };
    let pool = match (pool_base, cond.corrupt) {
        (Some(p), true) => Some(corrupt_labels(
            &p,
            cfg.label_noise,
            sub_seed(cfg.seed, DOM_POOL_CORRUPT, 0),
        )?),
        (p, _) => p,
    };

    let pairs = if cfg.pair_count == 0 {
        Vec::new()
    } else {
        if cfg.pair_count > train.len() {
            return Err(Error::Config {
                reason: format!(
                    "key 'pair_count': cannot exceed the {} training rows",
                    train.len()
                ),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cond_seed, DOM_PAIR_IDX, 0));
        let mut indices: Vec<usize> = (0..train.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(cfg.pair_count);
        indices
            .into_iter()
            .enumerate()
            .map(|(p, train_index)| {
                let replacement = match &pool {
                    Some(pool) => pool.examples[p].clone(),
                    None => flip_example(&train.examples[train_index]),
                };
                Pair {
                    train_index,
                    replacement,
                }
            })
            .collect()
    };

    let augment = if cond.augment {
        Some(AugmentConfig {
            jitter_scale: cfg.aug_jitter,
            flip: cfg.aug_flip,
        })
    } else {
        None
    };

    let mc_samples = objective_mc(cfg, objective);
    let (arch, obj_cfg, param_dim) = match cfg.model {
        ModelKind::Mlp => {
            let arch = Architecture::new(
                cfg.layer_sizes(train.feature_dim, train.class_count),
                cfg.activation,
            )?;
            let dim = arch.param_count();
            let obj_cfg = ObjectiveConfig {
                kind: objective,
                kl_coefficient: cfg.beta,
                n: train.len(),
                mc_samples,
                prior: DiagGaussian::isotropic(dim, cfg.prior_mean, cfg.prior_std)?,
            };
            obj_cfg.validate(dim)?;
            (Some(arch), Some(obj_cfg), dim)
        }
        ModelKind::Logistic => (None, None, 1),
    };

    let train_cfg = TrainConfig {
        learning_rate: cfg.lr,
        momentum: cfg.momentum,
        lr_decay_factor: cfg.lr_decay,
        lr_decay_every_epochs: cfg.lr_decay_every,
        batch_size: cfg.batch,
        epochs: cfg.epochs,
        schedule: cfg.schedule,
        grad_clip: cfg.grad_clip,
    };
    train_cfg.validate(train.len())?;

    Ok(CondContext {
        cond,
        cond_seed,
        train,
        test,
        pairs,
        arch,
        obj_cfg,
        train_cfg,
        augment,
        objective,
        mc_samples,
        param_dim,
    })
}

fn make_init(cfg: &ExperimentConfig, ctx: &CondContext, seed: u64) -> Result<VarParams> {
    match &ctx.arch {
        Some(arch) => VarParams::he_init(
            arch,
            cfg.sigma_init,
            cfg.sigma0,
            &mut ChaCha8Rng::seed_from_u64(seed),
        ),
        None => VarParams::new(
            vec![0.0],
            vec![softplus_inv(cfg.sigma_init - cfg.sigma0)],
            cfg.sigma0,
        ),
    }
}

/// Twin-run expansion measurement for every expansion run of a condition.
fn measure_expansion(cfg: &ExperimentConfig, ctx: &CondContext) -> Result<Vec<ExpansionSeries>> {
    (0..cfg.expansion_runs)
        .into_par_iter()
        .map(|e| {
            let stream_seed = match &cfg.expansion_seeds {
                Some(seeds) => seeds[e],
                None => sub_seed(ctx.cond_seed, DOM_EXP_STREAM, e as u64),
            };
            let stream = EpsilonStream::new(stream_seed);
            let init = make_init(cfg, ctx, sub_seed(ctx.cond_seed, DOM_EXP_INIT, e as u64))?;
            let twin = twin_init(
                &init,
                cfg.perturb_scale,
                &mut ChaCha8Rng::seed_from_u64(sub_seed(ctx.cond_seed, DOM_TWIN, e as u64)),
            )?;
            let run = ctx.sgd_run(&stream);
            expansion_series(&ctx.oracle(), &run, init, twin)
        })
        .collect()
}

/// Hook measuring per-pair gradient sensitivity for either model family.
struct PairProbeHook<'a> {
    ctx: &'a CondContext,
    originals: Vec<Example>,
    records: Vec<Vec<DeltaRecord>>,
}

impl<'a> PairProbeHook<'a> {
    fn new(ctx: &'a CondContext) -> Self {
        let originals = ctx
            .pairs
            .iter()
            .map(|p| ctx.train.examples[p.train_index].clone())
            .collect();
        PairProbeHook {
            ctx,
            originals,
            records: Vec::new(),
        }
    }

    fn probe(
        &self,
        params: &VarParams,
        z: &Example,
        z_bar: &Example,
        noise: &NoiseBlock,
    ) -> Result<DeltaRecord> {
        match (&self.ctx.arch, &self.ctx.obj_cfg) {
            (Some(arch), Some(cfg)) => grad_delta(params, z, z_bar, noise, arch, cfg)
                .map(|(_, rec)| rec),
            _ => {
                let oracle = LogisticGradient {
                    mc_samples: self.ctx.mc_samples,
                };
                let mut g = oracle.grad(params, std::slice::from_ref(z), noise)?;
                let g_bar = oracle.grad(params, std::slice::from_ref(z_bar), noise)?;
                g.add_scaled(&g_bar, -1.0);
                Ok(DeltaRecord {
                    m_l2: crate::numeric::l2_norm(&g.m),
                    s_l1: crate::numeric::l1_norm(&g.s),
                    s_l2: crate::numeric::l2_norm(&g.s),
                })
            }
        }
    }
}

impl StepHook for PairProbeHook<'_> {
    fn on_step(&mut self, step: &StepContext<'_>) -> Result<()> {
        let row: Result<Vec<DeltaRecord>> = self
            .ctx
            .pairs
            .par_iter()
            .zip(self.originals.par_iter())
            .map(|(pair, z)| self.probe(step.params, z, &pair.replacement, step.noise))
            .collect();
        self.records.push(row?);
        Ok(())
    }
}

struct RunOutput {
    theta: VarParams,
    init: VarParams,
    trajectory: Trajectory,
    records: Vec<Vec<DeltaRecord>>,
}

fn execute_runs(cfg: &ExperimentConfig, ctx: &CondContext) -> Result<Vec<RunOutput>> {
    (0..cfg.run_count)
        .into_par_iter()
        .map(|r| {
            let stream_seed = match &cfg.run_seeds {
                Some(seeds) => seeds[r],
                None => sub_seed(ctx.cond_seed, DOM_RUN_STREAM, r as u64),
            };
            let stream = EpsilonStream::new(stream_seed);
            let init = make_init(cfg, ctx, sub_seed(ctx.cond_seed, DOM_RUN_INIT, r as u64))?;
            let run = ctx.sgd_run(&stream);
            let mut hook = PairProbeHook::new(ctx);
            let (theta, trajectory) = run_sgd(&ctx.oracle(), &run, init.clone(), &mut hook)?;
            Ok(RunOutput {
                theta,
                init,
                trajectory,
                records: hook.records,
            })
        })
        .collect()
}

/// Posterior loss dispatch: network evaluation or the 1-D logistic rule
/// (predict the positive class when the sampled margin is positive).
fn eval_loss(
    ctx: &CondContext,
    params: &VarParams,
    ds: &Dataset,
    kind: LossKind,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    match &ctx.arch {
        Some(arch) => posterior_loss(params, ds, arch, kind, samples, seed),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sigma = params.sigma()[0];
            let m = params.m[0];
            let mut total = 0.0;
            for _ in 0..samples {
                let w = m + sigma * rng.sample::<f64, _>(StandardNormal);
                let mut per = 0.0;
                for z in &ds.examples {
                    per += match kind {
                        LossKind::ZeroOne => {
                            let pred = usize::from(w * z.x[0] > 0.0);
                            f64::from(pred != z.y)
                        }
                        LossKind::Nll => logistic_nll(w, z.x[0], z.y),
                    };
                }
                total += per / ds.len() as f64;
            }
            Ok(total / samples as f64)
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Full artifact set of one (condition, objective) cell.
pub struct ConditionArtifacts {
    pub report: BoundReport,
    pub delta_records: Vec<Vec<Vec<DeltaRecord>>>,
    pub expansion: Vec<ExpansionSeries>,
    pub profile: ExpansionProfile,
    pub trajectory: Trajectory,
}

fn run_condition_cell(
    cfg: &ExperimentConfig,
    cond_idx: usize,
    objective: ObjectiveKind,
) -> Result<ConditionArtifacts> {
    let ctx = build_context(cfg, cond_idx, objective)?;
    let expansion = measure_expansion(cfg, &ctx)?;
    let profile = aggregate_expansion(&expansion)?;
    let runs = execute_runs(cfg, &ctx)?;
    let trajectory = runs[0].trajectory.clone();
    for r in &runs {
        if r.trajectory != trajectory {
            return Err(Error::Degenerate {
                reason: "runs disagree on the step schedule".into(),
            });
        }
    }
    let t_steps = trajectory.steps.len();
    if profile.eta.len() != t_steps {
        return Err(Error::DimensionMismatch {
            expected: t_steps,
            got: profile.eta.len(),
        });
    }

    let mut warnings = Vec::new();
    let delta_records: Vec<Vec<Vec<DeltaRecord>>> =
        runs.iter().map(|r| r.records.clone()).collect();
    let deltas: DeltaSeries = if cfg.pair_count == 0 {
        warnings.push(
            "no replacement pairs sampled; stability bounds are vacuously zero".to_string(),
        );
        DeltaSeries::zeros(t_steps)
    } else {
        pool_runs(&delta_records)?
    };

    let alphas = trajectory.alphas();
    let diffs = param_diff_bound(&StabilityBoundInputs {
        deltas: &deltas,
        eta: &profile.eta,
        alphas: &alphas,
        n: ctx.train.len(),
    })?;
    let kl_route = kl_route_bound(&diffs, cfg.c_loss, cfg.sigma0)?;
    let (w2_route, w2_k_missing) = w2_route_bound(&diffs, cfg.k_lip)?;
    if w2_k_missing {
        warnings.push(
            "no loss Lipschitz constant configured; w2_route is a raw transport distance"
                .to_string(),
        );
    }
    if cfg.momentum > 0.0 {
        warnings.push(
            "momentum active: expansion is measured on the (parameters, velocity) state"
                .to_string(),
        );
    }

    // Posterior losses, averaged over runs.
    let loss_cols: Vec<[f64; 4]> = runs
        .par_iter()
        .enumerate()
        .map(|(r, run)| {
            let seed = |k: u64| sub_seed(ctx.cond_seed, DOM_EVAL, r as u64 * 4 + k);
            Ok([
                eval_loss(&ctx, &run.theta, &ctx.train, LossKind::ZeroOne, cfg.eval_samples, seed(0))?,
                eval_loss(&ctx, &run.theta, &ctx.test, LossKind::ZeroOne, cfg.eval_samples, seed(1))?,
                eval_loss(&ctx, &run.theta, &ctx.train, LossKind::Nll, cfg.eval_samples, seed(2))?,
                eval_loss(&ctx, &run.theta, &ctx.test, LossKind::Nll, cfg.eval_samples, seed(3))?,
            ])
        })
        .collect::<Result<_>>()?;
    let col = |k: usize| -> Vec<f64> { loss_cols.iter().map(|c| c[k]).collect() };
    let (train01, test01) = (mean(&col(0)), mean(&col(1)));
    let (train_ll, test_ll) = (mean(&col(2)), mean(&col(3)));
    let losses = LossReport {
        train_zero_one: train01,
        test_zero_one: test01,
        gap_zero_one: (train01 - test01).abs(),
        train_log_loss: train_ll,
        test_log_loss: test_ll,
        gap_log_loss: (train_ll - test_ll).abs(),
    };

    // KL-driven certificates under both prior centerings.
    let pac_cfg = PacBayesConfig {
        c_loss: cfg.c_loss,
        delta: cfg.delta,
    };
    let grid = UnionGrid::new(cfg.union_b, cfg.union_c)?;
    let n = ctx.train.len();
    let dim = ctx.param_dim;
    let fixed_center = vec![cfg.prior_mean; dim];
    let prior_fixed = DiagGaussian::isotropic(dim, cfg.prior_mean, cfg.prior_std)?;
    struct PacRow {
        kl_fixed: f64,
        kl_init: f64,
        germain_fixed: f64,
        germain_init: f64,
        sqrt_fixed: f64,
        sqrt_init: f64,
        union_fixed: crate::pac_bayes::UnionBoundResult,
        union_init: crate::pac_bayes::UnionBoundResult,
    }
    let pac_rows: Vec<PacRow> = runs
        .par_iter()
        .map(|run| {
            let q = run.theta.posterior();
            let prior_init = DiagGaussian::new(run.init.m.clone(), vec![cfg.prior_std; dim])?;
            let kl_fixed = kl_diag_gauss(&q, &prior_fixed)?;
            let kl_init = kl_diag_gauss(&q, &prior_init)?;
            Ok(PacRow {
                kl_fixed,
                kl_init,
                germain_fixed: germain_bound(kl_fixed, n, &pac_cfg, None)?,
                germain_init: germain_bound(kl_init, n, &pac_cfg, None)?,
                sqrt_fixed: mcallester_bound(kl_fixed, n, &pac_cfg)?,
                sqrt_init: mcallester_bound(kl_init, n, &pac_cfg)?,
                union_fixed: union_bound(&q, &fixed_center, &grid, &pac_cfg, n, cfg.union_jmax)?,
                union_init: union_bound(&q, &run.init.m, &grid, &pac_cfg, n, cfg.union_jmax)?,
            })
        })
        .collect::<Result<_>>()?;
    let pick = |f: &dyn Fn(&PacRow) -> f64| -> Vec<f64> { pac_rows.iter().map(f).collect() };
    let pac = PacReport {
        kl_fixed: mean(&pick(&|r| r.kl_fixed)),
        kl_init: mean(&pick(&|r| r.kl_init)),
        germain_fixed: mean(&pick(&|r| r.germain_fixed)),
        germain_init: mean(&pick(&|r| r.germain_init)),
        sqrt_fixed: mean(&pick(&|r| r.sqrt_fixed)),
        sqrt_init: mean(&pick(&|r| r.sqrt_init)),
        union_fixed: UnionSummary {
            value_mean: mean(&pick(&|r| r.union_fixed.value)),
            kl_mean: mean(&pick(&|r| r.union_fixed.kl)),
            j_run0: pac_rows[0].union_fixed.j,
            lambda_run0: pac_rows[0].union_fixed.lambda,
        },
        union_init: UnionSummary {
            value_mean: mean(&pick(&|r| r.union_init.value)),
            kl_mean: mean(&pick(&|r| r.union_init.kl)),
            j_run0: pac_rows[0].union_init.j,
            lambda_run0: pac_rows[0].union_init.lambda,
        },
    };

    let expansion_summary = ExpansionSummary {
        steps: profile.eta.len(),
        eta_mean: mean(&profile.eta),
        eta_max: profile.eta.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        log_cumulative: profile.eta.iter().map(|e| e.ln()).sum(),
    };

    let report = BoundReport {
        condition: ctx.cond.label.clone(),
        objective: objective_label(ctx.objective).to_string(),
        n_train: ctx.train.len(),
        n_test: ctx.test.len(),
        t_steps,
        run_count: cfg.run_count,
        pair_count: cfg.pair_count,
        momentum_caveat: cfg.momentum > 0.0,
        losses,
        stability: StabilityReport {
            diff_m_l2: diffs.m_l2,
            diff_s_l1: diffs.s_l1,
            diff_s_l2: diffs.s_l2,
            kl_route,
            w2_route,
            w2_k_missing,
        },
        pac,
        expansion: expansion_summary,
        warnings,
    };
    report.validate()?;
    Ok(ConditionArtifacts {
        report,
        delta_records,
        expansion,
        profile,
        trajectory,
    })
}

/// Runs the configured objective over every condition.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ConditionArtifacts>> {
    (0..cfg.conditions.len())
        .map(|i| run_condition_cell(cfg, i, cfg.objective))
        .collect()
}

fn condition_dir(out_dir: &Path, label: &str) -> PathBuf {
    out_dir.join(label)
}

fn write_report(dir: &Path, stem: &str, report: &BoundReport, format: OutputFormat) -> Result<()> {
    let (name, content) = match format {
        OutputFormat::Text => (format!("{stem}.txt"), report.to_text()),
        OutputFormat::Json => (format!("{stem}.json"), report.to_json()? + "\n"),
    };
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&path, content).map_err(|e| Error::io(&path, e))
}

/// `expansion` subcommand: measure and write the expansion artifacts for
/// every condition. Returns one stdout summary line per condition.
pub fn cmd_expansion(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for (i, cond) in cfg.conditions.iter().enumerate() {
        let ctx = build_context(cfg, i, cfg.objective)?;
        let series = measure_expansion(cfg, &ctx)?;
        let profile = aggregate_expansion(&series)?;
        let dir = condition_dir(out_dir, &cond.label);
        trace::write_expansion_tsv(&dir.join("expansion.tsv"), &series)?;
        trace::write_profile_tsv(&dir.join("profile.tsv"), &profile)?;
        let eta_max = profile.eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lines.push(format!(
            "condition {}: steps={} eta_mean={} eta_max={}",
            cond.label,
            profile.eta.len(),
            mean(&profile.eta),
            eta_max
        ));
    }
    Ok(lines)
}

/// `bound` subcommand: the full protocol per condition, emitting the report
/// and all raw traces.
pub fn cmd_bound(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<(Vec<BoundReport>, Vec<String>)> {
    let mut reports = Vec::new();
    let mut lines = Vec::new();
    for (i, cond) in cfg.conditions.iter().enumerate() {
        let art = run_condition_cell(cfg, i, cfg.objective)?;
        let dir = condition_dir(out_dir, &cond.label);
        write_report(&dir, "report", &art.report, format)?;
        trace::write_deltas_tsv(&dir.join("deltas.tsv"), &art.delta_records)?;
        trace::write_expansion_tsv(&dir.join("expansion.tsv"), &art.expansion)?;
        trace::write_profile_tsv(&dir.join("profile.tsv"), &art.profile)?;
        trace::write_trajectory_tsv(&dir.join("trajectory.tsv"), &art.trajectory)?;
        lines.push(format!(
            "condition {}: gap_zero_one={} kl_route={} w2_route={} union_fixed={}",
            cond.label,
            art.report.losses.gap_zero_one,
            art.report.stability.kl_route,
            art.report.stability.w2_route,
            art.report.pac.union_fixed.value_mean
        ));
        reports.push(art.report);
    }
    Ok((reports, lines))
}

/// `compare` subcommand: both objectives on identical seeds per condition,
/// plus the side-by-side table.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for (i, cond) in cfg.conditions.iter().enumerate() {
        let elbo = run_condition_cell(cfg, i, ObjectiveKind::Elbo)?;
        let dlm = run_condition_cell(cfg, i, ObjectiveKind::Dlm)?;
        let dir = condition_dir(out_dir, &cond.label);
        write_report(&dir, "elbo_report", &elbo.report, format)?;
        write_report(&dir, "dlm_report", &dlm.report, format)?;
        let table = compare_table(&elbo.report, &dlm.report);
        let path = dir.join("compare.tsv");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
        lines.push(format!(
            "condition {}: w2_route elbo={} dlm={} dlm_ge_elbo={}",
            cond.label,
            elbo.report.stability.w2_route,
            dlm.report.stability.w2_route,
            dlm.report.stability.w2_route >= elbo.report.stability.w2_route
        ));
    }
    Ok(lines)
}

/// `counterexamples` subcommand: the two constructions with pass/fail
/// checks against their reference values.
pub fn cmd_counterexamples(format: OutputFormat) -> Result<String> {
    let chain = bernoulli_chain_kls(&BernoulliChainSetup::default())?;
    let extreme = logistic_extreme_run(&LogisticExtremeSetup::default())?;
    let joint_ok = (chain.joint - 0.173).abs() < 1e-3;
    let cond_ok = (chain.conditional_sum - 0.081).abs() < 1e-3;
    let order_ok = chain.joint > chain.conditional_sum;
    let stab_ok = extreme.stability_bound == 0.0 && extreme.max_grad_delta == 0.0;
    let kl_grows = extreme
        .pac_kls
        .windows(2)
        .skip(1) // the first interval starts from KL = 0
        .all(|w| w[1] > w[0]);
    let kl_ok = extreme.final_pac_kl() > 1e3 && kl_grows;
    let all_ok = joint_ok && cond_ok && order_ok && stab_ok && kl_ok;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    match format {
        OutputFormat::Text => {
            let mut out = String::new();
            out.push_str("two-step chain, parameter-conditioned decomposition:\n");
            out.push_str(&format!(
                "  joint_kl: {} (reference 0.173 ± 0.001) {}\n",
                chain.joint,
                verdict(joint_ok)
            ));
            out.push_str(&format!(
                "  conditional_sum: {} (reference 0.081 ± 0.001) {}\n",
                chain.conditional_sum,
                verdict(cond_ok)
            ));
            out.push_str(&format!(
                "  joint_exceeds_sum: {} {}\n",
                order_ok,
                verdict(order_ok)
            ));
            out.push_str("fixed-variance logistic on paired example types:\n");
            out.push_str(&format!(
                "  stability_bound: {} (must be exactly 0) {}\n",
                extreme.stability_bound,
                verdict(stab_ok)
            ));
            out.push_str(&format!("  max_grad_delta: {}\n", extreme.max_grad_delta));
            out.push_str(&format!(
                "  final_kl_to_init: {} (must exceed 1000, strictly increasing) {}\n",
                extreme.final_pac_kl(),
                verdict(kl_ok)
            ));
            out.push_str(&format!("overall: {}\n", verdict(all_ok)));
            Ok(out)
        }
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "chain": {
                    "joint_kl": chain.joint,
                    "conditional_sum": chain.conditional_sum,
                    "second_step_kl": chain.second_step,
                    "gap": chain.gap,
                    "joint_pass": joint_ok,
                    "conditional_pass": cond_ok,
                    "ordering_pass": order_ok,
                },
                "logistic": {
                    "stability_bound": extreme.stability_bound,
                    "max_grad_delta": extreme.max_grad_delta,
                    "final_kl_to_init": extreme.final_pac_kl(),
                    "stability_pass": stab_ok,
                    "kl_growth_pass": kl_ok,
                },
                "overall_pass": all_ok,
            });
            serde_json::to_string_pretty(&doc)
                .map(|s| s + "\n")
                .map_err(|e| Error::Degenerate {
                    reason: format!("serialization failed: {e}"),
                })
        }
    }
}

/// `pacbayes` subcommand: the certificate calculators at an explicit KL.
pub fn cmd_pacbayes(
    cfg: &ExperimentConfig,
    kl: f64,
    n: usize,
    lambda: Option<f64>,
    format: OutputFormat,
) -> Result<String> {
    let pac_cfg = PacBayesConfig {
        c_loss: cfg.c_loss,
        delta: cfg.delta,
    };
    let lambda_opt = germain_optimal_lambda(kl, n, &pac_cfg)?;
    let germain_opt = germain_bound(kl, n, &pac_cfg, None)?;
    let germain_at = match lambda {
        Some(l) => Some(germain_bound(kl, n, &pac_cfg, Some(l))?),
        None => None,
    };
    let sqrt_form = mcallester_bound(kl, n, &pac_cfg)?;
    match format {
        OutputFormat::Text => {
            let mut out = String::new();
            out.push_str(&format!("kl: {kl}\n"));
            out.push_str(&format!("n: {n}\n"));
            out.push_str(&format!("c_loss: {}\n", pac_cfg.c_loss));
            out.push_str(&format!("delta: {}\n", pac_cfg.delta));
            out.push_str(&format!("lambda_optimal: {lambda_opt}\n"));
            out.push_str(&format!("germain_optimized: {germain_opt}\n"));
            if let Some(v) = germain_at {
                out.push_str(&format!("germain_at_lambda: {v}\n"));
            }
            out.push_str(&format!("sqrt_form: {sqrt_form}\n"));
            Ok(out)
        }
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "kl": kl,
                "n": n,
                "c_loss": pac_cfg.c_loss,
                "delta": pac_cfg.delta,
                "lambda_optimal": lambda_opt,
                "germain_optimized": germain_opt,
                "germain_at_lambda": germain_at,
                "sqrt_form": sqrt_form,
            });
            serde_json::to_string_pretty(&doc)
                .map(|s| s + "\n")
                .map_err(|e| Error::Degenerate {
                    reason: format!("serialization failed: {e}"),
                })
        }
    }
}
