//! Randomized invariants of the divergence kit, objectives, schedule
//! assembly, and batching.

mod common;

use proptest::prelude::*;

use vistab::gauss::{
    kl_diag_gauss, kl_discrete, kl_upper_bound, tv_discrete, tv_pinsker, w2_diag_gauss,
    DiagGaussian, DiscreteDist,
};
use vistab::model::{Activation, Architecture, Example, VarParams};
use vistab::objectives::{
    data_term_grad, data_term_value, objective_grad, objective_value, NoiseBlock, ObjectiveConfig,
    ObjectiveKind,
};
use vistab::pac_bayes::UnionGrid;
use vistab::stability::{param_diff_bound, DeltaSeries, StabilityBoundInputs};
use vistab::trainer::batches_from_permutation;

const SIGMA0: f64 = 0.01;

fn gauss_strategy(dim: usize) -> impl Strategy<Value = DiagGaussian> {
    (
        prop::collection::vec(-3.0..3.0f64, dim),
        prop::collection::vec(0.05..2.0f64, dim),
    )
        .prop_map(|(m, s)| DiagGaussian::new(m, s).unwrap())
}

fn gauss_pair() -> impl Strategy<Value = (DiagGaussian, DiagGaussian)> {
    (1usize..=5).prop_flat_map(|d| (gauss_strategy(d), gauss_strategy(d)))
}

/// Gaussians whose stds respect the floor, as the domination bound requires.
fn floored_gauss(dim: usize) -> impl Strategy<Value = DiagGaussian> {
    (
        prop::collection::vec(-2.0..2.0f64, dim),
        prop::collection::vec(0.0..1.5f64, dim),
    )
        .prop_map(|(m, s)| {
            let s = s.into_iter().map(|v| SIGMA0 + v).collect();
            DiagGaussian::new(m, s).unwrap()
        })
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_at_self((q, p) in gauss_pair()) {
        let kl = kl_diag_gauss(&q, &p).unwrap();
        prop_assert!(kl >= -1e-9, "kl = {kl}");
        prop_assert_eq!(kl_diag_gauss(&q, &q).unwrap(), 0.0);
    }

    #[test]
    fn upper_bound_dominates_exact_kl(
        (q, p) in (1usize..=5).prop_flat_map(|d| (floored_gauss(d), floored_gauss(d)))
    ) {
        let kl = kl_diag_gauss(&q, &p).unwrap();
        let ub = kl_upper_bound(&q, &p, SIGMA0).unwrap();
        prop_assert!(ub + 1e-9 >= kl, "upper {ub} < exact {kl}");
    }

    #[test]
    fn w2_is_symmetric_and_triangular(
        (a, b, c) in (1usize..=5).prop_flat_map(|d| {
            (gauss_strategy(d), gauss_strategy(d), gauss_strategy(d))
        })
    ) {
        let ab = w2_diag_gauss(&a, &b).unwrap();
        let ba = w2_diag_gauss(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        let ac = w2_diag_gauss(&a, &c).unwrap();
        let bc = w2_diag_gauss(&b, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9, "{ac} > {ab} + {bc}");
    }

    #[test]
    fn discrete_tv_obeys_the_pinsker_conversion(
        raw_p in prop::collection::vec(0.01..1.0f64, 2..=6),
        raw_q in prop::collection::vec(0.01..1.0f64, 2..=6),
    ) {
        let k = raw_p.len().min(raw_q.len());
        let norm = |v: &[f64]| {
            let total: f64 = v[..k].iter().sum();
            DiscreteDist::new(v[..k].iter().map(|x| x / total).collect()).unwrap()
        };
        let (p, q) = (norm(&raw_p), norm(&raw_q));
        let tv = tv_discrete(&p, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&tv));
        let bound = tv_pinsker(kl_discrete(&p, &q).unwrap()).unwrap();
        prop_assert!(tv <= bound + 1e-12, "tv {tv} > pinsker {bound}");
    }

    #[test]
    fn std_map_is_lipschitz_in_both_norms(
        s1 in prop::collection::vec(-6.0..6.0f64, 1..=6),
        s2 in prop::collection::vec(-6.0..6.0f64, 1..=6),
    ) {
        let k = s1.len().min(s2.len());
        let make = |s: &[f64]| {
            VarParams::new(vec![0.0; k], s[..k].to_vec(), SIGMA0).unwrap()
        };
        let (a, b) = (make(&s1), make(&s2));
        let (sa, sb) = (a.sigma(), b.sigma());
        let l1_sigma: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        let l1_s: f64 = s1[..k].iter().zip(&s2[..k]).map(|(x, y)| (x - y).abs()).sum();
        prop_assert!(l1_sigma <= l1_s + 1e-12);
        let l2_sigma: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let l2_s: f64 = s1[..k].iter().zip(&s2[..k]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        prop_assert!(l2_sigma <= l2_s + 1e-12);
    }

    #[test]
    fn schedule_assembly_matches_brute_force(
        eta in prop::collection::vec(0.5..2.0f64, 1..=12),
        alpha_raw in prop::collection::vec(0.001..0.2f64, 1..=12),
        delta_raw in prop::collection::vec(0.0..3.0f64, 1..=12),
        n in 2usize..200,
    ) {
        let t = eta.len().min(alpha_raw.len()).min(delta_raw.len());
        let eta = &eta[..t];
        let alphas = &alpha_raw[..t];
        let d = &delta_raw[..t];
        let deltas = DeltaSeries {
            m_l2: d.to_vec(),
            s_l1: d.iter().map(|v| v * 1.5).collect(),
            s_l2: d.iter().map(|v| v * 0.5).collect(),
        };
        let bounds = param_diff_bound(&StabilityBoundInputs {
            deltas: &deltas,
            eta,
            alphas,
            n,
        }).unwrap();
        let brute = |series: &[f64]| -> f64 {
            let mut total = 0.0;
            for step in 0..t {
                let mut suffix = 1.0;
                for &e in &eta[step + 1..] {
                    suffix *= e;
                }
                total += suffix * alphas[step] * series[step];
            }
            total / n as f64
        };
        prop_assert!(common::rel_err(bounds.m_l2, brute(&deltas.m_l2)) < 1e-10);
        prop_assert!(common::rel_err(bounds.s_l1, brute(&deltas.s_l1)) < 1e-10);
        prop_assert!(common::rel_err(bounds.s_l2, brute(&deltas.s_l2)) < 1e-10);
    }

    #[test]
    fn candidate_scales_decay_to_the_floor(j in 1usize..5000) {
        let grid = UnionGrid::new(100.0, 0.1).unwrap();
        let here = grid.lambda(j);
        let next = grid.lambda(j + 1);
        prop_assert!(next <= here);
        prop_assert!(here >= 1e-10);
        let raw = 0.1 * (-(j as f64) / 100.0).exp();
        prop_assert_eq!(here, raw.max(1e-10));
    }

    #[test]
    fn batches_partition_the_permutation(
        n in 1usize..60,
        batch in 1usize..60,
        shift in 0usize..60,
    ) {
        let batch = batch.min(n);
        // An arbitrary permutation: rotate then swap ends.
        let mut perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        perm.reverse();
        let batches = batches_from_permutation(&perm, batch);
        let flat: Vec<usize> = batches.iter().flatten().copied().collect();
        prop_assert_eq!(flat, perm.clone());
        for (i, b) in batches.iter().enumerate() {
            if i + 1 < batches.len() {
                prop_assert_eq!(b.len(), batch);
            } else {
                prop_assert!(!b.is_empty() && b.len() <= batch);
            }
        }
    }
}

fn tiny_objective_setup(
    seed: u64,
    mc_rows: usize,
) -> (Architecture, VarParams, Example, NoiseBlock, ObjectiveConfig) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::new(vec![2, 3, 2], Activation::Tanh).unwrap();
    let dim = arch.param_count();
    let m = common::normal_vec(&mut rng, dim);
    let s: Vec<f64> = common::normal_vec(&mut rng, dim);
    let params = VarParams::new(m, s, SIGMA0).unwrap();
    let z = Example::new(common::normal_vec(&mut rng, 2), (seed % 2) as usize);
    let rows: Vec<Vec<f64>> = (0..mc_rows)
        .map(|_| common::normal_vec(&mut rng, dim))
        .collect();
    let noise = NoiseBlock::from_rows(&rows).unwrap();
    let cfg = ObjectiveConfig {
        kind: ObjectiveKind::Elbo,
        kl_coefficient: 0.1,
        n: 10,
        mc_samples: mc_rows,
        prior: DiagGaussian::isotropic(dim, 0.0, 1.0).unwrap(),
    };
    (arch, params, z, noise, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_of_mean_never_exceeds_mean_of_logs(seed in 0u64..5000, rows in 2usize..5) {
        let (arch, params, z, noise, _) = tiny_objective_setup(seed, rows);
        let elbo = data_term_value(&params, &z, &noise, &arch, ObjectiveKind::Elbo).unwrap();
        let dlm = data_term_value(&params, &z, &noise, &arch, ObjectiveKind::Dlm).unwrap();
        prop_assert!(dlm <= elbo + 1e-12, "dlm {dlm} > elbo {elbo}");
    }

    #[test]
    fn single_sample_objectives_coincide_bitwise(seed in 0u64..5000) {
        let (arch, params, z, noise, _) = tiny_objective_setup(seed, 1);
        let elbo = data_term_value(&params, &z, &noise, &arch, ObjectiveKind::Elbo).unwrap();
        let dlm = data_term_value(&params, &z, &noise, &arch, ObjectiveKind::Dlm).unwrap();
        prop_assert_eq!(elbo.to_bits(), dlm.to_bits());
        let ge = data_term_grad(&params, &z, &noise, &arch, ObjectiveKind::Elbo).unwrap();
        let gd = data_term_grad(&params, &z, &noise, &arch, ObjectiveKind::Dlm).unwrap();
        for j in 0..ge.dim() {
            prop_assert_eq!(ge.m[j].to_bits(), gd.m[j].to_bits());
            prop_assert_eq!(ge.s[j].to_bits(), gd.s[j].to_bits());
        }
    }

    #[test]
    fn objectives_are_deterministic_functions(seed in 0u64..5000) {
        let (arch, params, z, noise, cfg) = tiny_objective_setup(seed, 2);
        let v1 = objective_value(&params, &z, &noise, &arch, &cfg).unwrap();
        let v2 = objective_value(&params, &z, &noise, &arch, &cfg).unwrap();
        prop_assert_eq!(v1.to_bits(), v2.to_bits());
        let g1 = objective_grad(&params, &z, &noise, &arch, &cfg).unwrap();
        let g2 = objective_grad(&params, &z, &noise, &arch, &cfg).unwrap();
        for j in 0..g1.dim() {
            prop_assert_eq!(g1.m[j].to_bits(), g2.m[j].to_bits());
            prop_assert_eq!(g1.s[j].to_bits(), g2.s[j].to_bits());
        }
    }

    #[test]
    fn regularizer_gradient_scales_linearly_in_its_coefficient(seed in 0u64..5000) {
        let (arch, params, z, noise, mut cfg) = tiny_objective_setup(seed, 2);
        cfg.kl_coefficient = 0.0;
        let base = objective_grad(&params, &z, &noise, &arch, &cfg).unwrap();
        let data_only = data_term_grad(&params, &z, &noise, &arch, cfg.kind).unwrap();
        for j in 0..base.dim() {
            prop_assert_eq!(base.m[j].to_bits(), data_only.m[j].to_bits());
            prop_assert_eq!(base.s[j].to_bits(), data_only.s[j].to_bits());
        }
        cfg.kl_coefficient = 0.1;
        let small = objective_grad(&params, &z, &noise, &arch, &cfg).unwrap();
        cfg.kl_coefficient = 1.0;
        let large = objective_grad(&params, &z, &noise, &arch, &cfg).unwrap();
        for j in 0..base.dim() {
            let small_part = small.m[j] - base.m[j];
            let large_part = large.m[j] - base.m[j];
            prop_assert!(
                (large_part - 10.0 * small_part).abs() <= 1e-9 * (1.0 + large_part.abs()),
                "m[{j}]: {large_part} vs 10×{small_part}"
            );
            let small_part = small.s[j] - base.s[j];
            let large_part = large.s[j] - base.s[j];
            prop_assert!(
                (large_part - 10.0 * small_part).abs() <= 1e-9 * (1.0 + large_part.abs()),
                "s[{j}]: {large_part} vs 10×{small_part}"
            );
        }
    }

    #[test]
    fn losses_have_their_stated_ranges(seed in 0u64..5000) {
        let (arch, params, z, noise, _) = tiny_objective_setup(seed, 1);
        let w = params.sample_weights(noise.row(0)).unwrap();
        let nll = vistab::model::nll(&w, &z, &arch).unwrap();
        prop_assert!(nll >= 0.0);
        let zo = vistab::model::zero_one(&w, &z, &arch).unwrap();
        prop_assert!(zo == 0.0 || zo == 1.0);
    }
}
