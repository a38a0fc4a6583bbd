//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, every key is validated with a
//! range check, and unknown or duplicated keys are rejected by name — a
//! config either parses into a fully-typed [`ExperimentConfig`] or fails
//! loudly. All defaults are desk-scale: the four-condition suite completes
//! in minutes on one CPU, while paper-scale values remain expressible.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::model::Activation;
use crate::objectives::ObjectiveKind;
use crate::trainer::ScheduleKind;
use crate::Result;

/// Where training data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    /// Synthetic Gaussian class clusters.
    Blobs,
    /// Train/test CSV files.
    Csv,
    /// The two-type alternating dataset of the fixed-variance logistic task.
    Alternating,
}

/// Which model family the pipeline trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mlp,
    /// 1-D fixed-variance logistic model (pairs with `data = alternating`).
    Logistic,
}

/// One training condition on the augmentation × label-noise grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionSpec {
    pub label: String,
    pub augment: bool,
    pub corrupt: bool,
}

impl ConditionSpec {
    fn from_label(label: &str) -> Option<Self> {
        let (augment, corrupt) = match label {
            "plain" => (false, false),
            "aug" => (true, false),
            "label_noise" => (false, true),
            "aug_label_noise" => (true, true),
            _ => return None,
        };
        Some(ConditionSpec {
            label: label.to_string(),
            augment,
            corrupt,
        })
    }
}

/// Fully-typed experiment configuration; see the README for the key list.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataKind,
    pub data_n: usize,
    pub data_test_n: usize,
    pub data_classes: usize,
    pub data_features: usize,
    pub data_spread: f64,
    pub csv_train: Option<PathBuf>,
    pub csv_test: Option<PathBuf>,

    pub label_noise: f64,
    pub aug_jitter: f64,
    pub aug_flip: bool,
    pub conditions: Vec<ConditionSpec>,

    pub model: ModelKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub objective: ObjectiveKind,
    pub beta: f64,
    pub mc_samples: usize,
    pub dlm_mc_samples: usize,
    pub prior_mean: f64,
    pub prior_std: f64,

    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch: usize,
    pub epochs: usize,
    pub schedule: ScheduleKind,
    pub grad_clip: Option<f64>,

    pub sigma0: f64,
    pub sigma_init: f64,
    pub perturb_scale: f64,

    pub pair_count: usize,
    pub run_count: usize,
    pub expansion_runs: usize,
    pub run_seeds: Option<Vec<u64>>,
    pub expansion_seeds: Option<Vec<u64>>,

    pub eval_samples: usize,
    pub delta: f64,
    pub c_loss: f64,
    pub k_lip: Option<f64>,

    pub union_b: f64,
    pub union_c: f64,
    pub union_jmax: usize,

    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataKind::Blobs,
            data_n: 2000,
            data_test_n: 1000,
            data_classes: 10,
            data_features: 16,
            data_spread: 0.3,
            csv_train: None,
            csv_test: None,
            label_noise: 0.5,
            aug_jitter: 0.1,
            aug_flip: true,
            conditions: ["plain", "aug", "label_noise", "aug_label_noise"]
                .iter()
                .map(|l| ConditionSpec::from_label(l).unwrap())
                .collect(),
            model: ModelKind::Mlp,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            objective: ObjectiveKind::Elbo,
            beta: 0.1,
            mc_samples: 1,
            dlm_mc_samples: 8,
            prior_mean: 0.0,
            prior_std: 1.0,
            lr: 0.005,
            momentum: 0.99,
            lr_decay: 0.9,
            lr_decay_every: 5,
            batch: 100,
            epochs: 10,
            schedule: ScheduleKind::StepDecay,
            grad_clip: None,
            sigma0: 0.01,
            sigma_init: 0.05,
            perturb_scale: 1e-3,
            pair_count: 50,
            run_count: 10,
            expansion_runs: 10,
            run_seeds: None,
            expansion_seeds: None,
            eval_samples: 10,
            delta: 0.025,
            c_loss: 1.0,
            k_lip: None,
            union_b: 100.0,
            union_c: 0.1,
            union_jmax: 3000,
            seed: 42,
            out_dir: None,
        }
    }
}

fn key_err(key: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        reason: format!("key '{key}': {}", detail.into()),
    }
}

fn parse_typed<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| key_err(key, format!("expected {what}, got '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(key_err(key, format!("expected true or false, got '{value}'"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|piece| parse_typed::<T>(key, piece.trim(), what))
        .collect()
}

impl ExperimentConfig {
    /// Parses config text; defaults fill the unset keys, then the whole
    /// record is range-validated.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut expansion_runs_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                reason: format!("line {}: expected 'key = value', got '{line}'", lineno + 1),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(key_err(key, "duplicated"));
            }
            match key {
                "data" => {
                    cfg.data = match value {
                        "blobs" => DataKind::Blobs,
                        "csv" => DataKind::Csv,
                        "alternating" => DataKind::Alternating,
                        _ => {
                            return Err(key_err(
                                key,
                                format!("expected blobs, csv, or alternating, got '{value}'"),
                            ))
                        }
                    }
                }
                "data_n" => cfg.data_n = parse_typed(key, value, "a positive integer")?,
                "data_test_n" => cfg.data_test_n = parse_typed(key, value, "a positive integer")?,
                "data_classes" => cfg.data_classes = parse_typed(key, value, "a positive integer")?,
                "data_features" => {
                    cfg.data_features = parse_typed(key, value, "a positive integer")?
                }
                "data_spread" => cfg.data_spread = parse_typed(key, value, "a number")?,
                "csv_train" => cfg.csv_train = Some(PathBuf::from(value)),
                "csv_test" => cfg.csv_test = Some(PathBuf::from(value)),
                "label_noise" => cfg.label_noise = parse_typed(key, value, "a number")?,
                "aug_jitter" => cfg.aug_jitter = parse_typed(key, value, "a number")?,
                "aug_flip" => cfg.aug_flip = parse_bool(key, value)?,
                "conditions" => {
                    let labels: Vec<&str> = value.split(',').map(str::trim).collect();
                    let mut specs = Vec::new();
                    for l in labels {
                        let spec = ConditionSpec::from_label(l).ok_or_else(|| {
                            key_err(
                                key,
                                format!(
                                    "unknown condition '{l}' (choose from plain, aug, \
                                     label_noise, aug_label_noise)"
                                ),
                            )
                        })?;
                        if specs.iter().any(|s: &ConditionSpec| s.label == spec.label) {
                            return Err(key_err(key, format!("condition '{l}' repeated")));
                        }
                        specs.push(spec);
                    }
                    cfg.conditions = specs;
                }
                "model" => {
                    cfg.model = match value {
                        "mlp" => ModelKind::Mlp,
                        "logistic" => ModelKind::Logistic,
                        _ => {
                            return Err(key_err(
                                key,
                                format!("expected mlp or logistic, got '{value}'"),
                            ))
                        }
                    }
                }
                "hidden" => cfg.hidden = parse_list(key, value, "a positive integer")?,
                "activation" => {
                    cfg.activation = match value {
                        "relu" => Activation::Relu,
                        "tanh" => Activation::Tanh,
                        _ => {
                            return Err(key_err(key, format!("expected relu or tanh, got '{value}'")))
                        }
                    }
                }
                "objective" => {
                    cfg.objective = match value {
                        "elbo" => ObjectiveKind::Elbo,
                        "dlm" => ObjectiveKind::Dlm,
                        _ => {
                            return Err(key_err(key, format!("expected elbo or dlm, got '{value}'")))
                        }
                    }
                }
                "beta" => cfg.beta = parse_typed(key, value, "a number")?,
                "mc_samples" => cfg.mc_samples = parse_typed(key, value, "a positive integer")?,
                "dlm_mc_samples" => {
                    cfg.dlm_mc_samples = parse_typed(key, value, "a positive integer")?
                }
                "prior_mean" => cfg.prior_mean = parse_typed(key, value, "a number")?,
                "prior_std" => cfg.prior_std = parse_typed(key, value, "a number")?,
                "lr" => cfg.lr = parse_typed(key, value, "a number")?,
                "momentum" => cfg.momentum = parse_typed(key, value, "a number")?,
                "lr_decay" => cfg.lr_decay = parse_typed(key, value, "a number")?,
                "lr_decay_every" => {
                    cfg.lr_decay_every = parse_typed(key, value, "a positive integer")?
                }
                "batch" => cfg.batch = parse_typed(key, value, "a positive integer")?,
                "epochs" => cfg.epochs = parse_typed(key, value, "a non-negative integer")?,
                "schedule" => {
                    cfg.schedule = match value {
                        "step" => ScheduleKind::StepDecay,
                        "logt" => ScheduleKind::LogT,
                        _ => {
                            return Err(key_err(key, format!("expected step or logt, got '{value}'")))
                        }
                    }
                }
                "grad_clip" => cfg.grad_clip = Some(parse_typed(key, value, "a number")?),
                "sigma0" => cfg.sigma0 = parse_typed(key, value, "a number")?,
                "sigma_init" => cfg.sigma_init = parse_typed(key, value, "a number")?,
                "perturb_scale" => cfg.perturb_scale = parse_typed(key, value, "a number")?,
                "pair_count" => cfg.pair_count = parse_typed(key, value, "a non-negative integer")?,
                "run_count" => cfg.run_count = parse_typed(key, value, "a positive integer")?,
                "expansion_runs" => {
                    cfg.expansion_runs = parse_typed(key, value, "a positive integer")?;
                    expansion_runs_set = true;
                }
                "run_seeds" => cfg.run_seeds = Some(parse_list(key, value, "an integer seed")?),
                "expansion_seeds" => {
                    cfg.expansion_seeds = Some(parse_list(key, value, "an integer seed")?)
                }
                "eval_samples" => cfg.eval_samples = parse_typed(key, value, "a positive integer")?,
                "delta" => cfg.delta = parse_typed(key, value, "a number")?,
                "c_loss" => cfg.c_loss = parse_typed(key, value, "a number")?,
                "k_lip" => cfg.k_lip = Some(parse_typed(key, value, "a number")?),
                "union_b" => cfg.union_b = parse_typed(key, value, "a number")?,
                "union_c" => cfg.union_c = parse_typed(key, value, "a number")?,
                "union_jmax" => cfg.union_jmax = parse_typed(key, value, "a positive integer")?,
                "seed" => cfg.seed = parse_typed(key, value, "an integer seed")?,
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                _ => return Err(key_err(key, "unknown key")),
            }
        }
        // Unless overridden, the expansion protocol reuses the ε-run count.
        if !expansion_runs_set {
            cfg.expansion_runs = cfg.run_count.max(2);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_n < 2 {
            return Err(key_err("data_n", "need at least 2 training examples"));
        }
        if self.data_test_n == 0 {
            return Err(key_err("data_test_n", "need at least 1 test example"));
        }
        if self.data_classes < 2 {
            return Err(key_err("data_classes", "need at least 2 classes"));
        }
        if self.data_features == 0 {
            return Err(key_err("data_features", "need at least 1 feature"));
        }
        if !(self.data_spread.is_finite() && self.data_spread > 0.0) {
            return Err(key_err("data_spread", "must be positive"));
        }
        if self.data == DataKind::Csv && (self.csv_train.is_none() || self.csv_test.is_none()) {
            return Err(key_err(
                "csv_train",
                "data = csv requires both csv_train and csv_test",
            ));
        }
        if !(self.label_noise.is_finite() && (0.0..=1.0).contains(&self.label_noise)) {
            return Err(key_err("label_noise", "must lie in [0, 1]"));
        }
        if !(self.aug_jitter.is_finite() && self.aug_jitter >= 0.0) {
            return Err(key_err("aug_jitter", "must be ≥ 0"));
        }
        if self.conditions.is_empty() {
            return Err(key_err("conditions", "need at least one condition"));
        }
        if self.model == ModelKind::Logistic && self.data != DataKind::Alternating {
            return Err(key_err(
                "model",
                "model = logistic requires data = alternating",
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(key_err("hidden", "hidden widths must be ≥ 1"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(key_err("beta", "must be ≥ 0"));
        }
        if self.mc_samples == 0 || self.dlm_mc_samples == 0 {
            return Err(key_err("mc_samples", "need at least one weight draw"));
        }
        if !self.prior_mean.is_finite() {
            return Err(key_err("prior_mean", "must be finite"));
        }
        if !(self.prior_std.is_finite() && self.prior_std > 0.0) {
            return Err(key_err("prior_std", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(key_err("lr", "must be positive"));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(key_err("momentum", "must lie in [0, 1)"));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(key_err("lr_decay", "must lie in (0, 1]"));
        }
        if self.lr_decay_every == 0 {
            return Err(key_err("lr_decay_every", "period must be ≥ 1"));
        }
        if self.batch == 0 {
            return Err(key_err("batch", "must be ≥ 1"));
        }
        if self.batch > self.data_n && self.data != DataKind::Csv {
            return Err(key_err("batch", "must not exceed data_n"));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(key_err("grad_clip", "must be positive"));
            }
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(key_err("sigma0", "must be positive"));
        }
        if !(self.sigma_init.is_finite() && self.sigma_init > self.sigma0) {
            return Err(key_err("sigma_init", "must exceed sigma0"));
        }
        if !(self.perturb_scale.is_finite() && self.perturb_scale > 0.0) {
            return Err(key_err("perturb_scale", "must be positive"));
        }
        if self.pair_count > self.data_n && self.data != DataKind::Csv {
            return Err(key_err("pair_count", "cannot exceed data_n"));
        }
        if self.run_count == 0 {
            return Err(key_err("run_count", "need at least one run"));
        }
        if self.expansion_runs < 2 {
            return Err(key_err(
                "expansion_runs",
                "profile aggregation needs at least 2 twin runs",
            ));
        }
        if let Some(seeds) = &self.run_seeds {
            check_seed_list("run_seeds", seeds, self.run_count)?;
        }
        if let Some(seeds) = &self.expansion_seeds {
            check_seed_list("expansion_seeds", seeds, self.expansion_runs)?;
        }
        if self.eval_samples == 0 {
            return Err(key_err("eval_samples", "need at least one posterior draw"));
        }
        if !(self.delta.is_finite() && self.delta > 0.0 && self.delta < 1.0) {
            return Err(key_err("delta", "must lie in (0, 1)"));
        }
        if !(self.c_loss.is_finite() && self.c_loss > 0.0) {
            return Err(key_err("c_loss", "must be positive"));
        }
        if let Some(k) = self.k_lip {
            if !(k.is_finite() && k > 0.0) {
                return Err(key_err("k_lip", "must be positive"));
            }
        }
        if !(self.union_b.is_finite() && self.union_b > 0.0) {
            return Err(key_err("union_b", "must be positive"));
        }
        if !(self.union_c.is_finite() && self.union_c > 0.0) {
            return Err(key_err("union_c", "must be positive"));
        }
        if self.union_jmax == 0 {
            return Err(key_err("union_jmax", "need at least one grid candidate"));
        }
        Ok(())
    }

    /// Layer sizes of the network for a given data shape.
    pub fn layer_sizes(&self, features: usize, classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(features);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(classes);
        sizes
    }
}

fn check_seed_list(key: &'static str, seeds: &[u64], expect: usize) -> Result<()> {
    if seeds.len() != expect {
        return Err(key_err(
            key,
            format!("expected {expect} entries, got {}", seeds.len()),
        ));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(key_err(
            key,
            "seeds repeat; replicate variance would be degenerate",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = ExperimentConfig::parse_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.beta, 0.1);
        assert_eq!(cfg.lr, 0.005);
        assert_eq!(cfg.momentum, 0.99);
        assert_eq!(cfg.lr_decay, 0.9);
        assert_eq!(cfg.lr_decay_every, 5);
        assert_eq!(cfg.batch, 100);
        assert_eq!(cfg.sigma0, 0.01);
        assert_eq!(cfg.pair_count, 50);
        assert_eq!(cfg.run_count, 10);
        assert_eq!(cfg.delta, 0.025);
        assert_eq!(cfg.union_b, 100.0);
        assert_eq!(cfg.union_c, 0.1);
        assert_eq!(cfg.eval_samples, 10);
    }

    #[test]
    fn comments_and_spacing_are_tolerated() {
        let text = "\n# full-line comment\n  lr = 0.02   # trailing comment\n\nbatch=50\nhidden = 8, 8\n";
        let cfg = ExperimentConfig::parse_str(text).unwrap();
        assert_eq!(cfg.lr, 0.02);
        assert_eq!(cfg.batch, 50);
        assert_eq!(cfg.hidden, vec![8, 8]);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_named() {
        let err = ExperimentConfig::parse_str("lr_rate = 0.1").unwrap_err();
        assert!(err.to_string().contains("lr_rate"), "{err}");
        let err = ExperimentConfig::parse_str("lr = 0.1\nlr = 0.2").unwrap_err();
        assert!(err.to_string().contains("'lr'"), "{err}");
        assert!(err.to_string().contains("duplicated"), "{err}");
    }

    #[test]
    fn range_violations_name_the_key() {
        for (text, needle) in [
            ("momentum = 1.0", "momentum"),
            ("lr = -0.5", "lr"),
            ("delta = 1.5", "delta"),
            ("sigma_init = 0.005", "sigma_init"),
            ("label_noise = 1.5", "label_noise"),
            ("batch = 0", "batch"),
            ("expansion_runs = 1", "expansion_runs"),
            ("union_c = 0", "union_c"),
            ("data_n = 1", "data_n"),
            ("conditions = plain, plain", "conditions"),
            ("conditions = weird", "conditions"),
            ("model = logistic", "model"),
            ("schedule = cosine", "schedule"),
            ("data = imagenet", "data"),
            ("lr = abc", "lr"),
        ] {
            let err = ExperimentConfig::parse_str(text).unwrap_err();
            assert!(err.to_string().contains(needle), "{text} → {err}");
        }
    }

    #[test]
    fn seed_lists_must_match_counts_and_be_distinct() {
        let err =
            ExperimentConfig::parse_str("run_count = 2\nrun_seeds = 1, 1").unwrap_err();
        assert!(err.to_string().contains("run_seeds"), "{err}");
        assert!(err.to_string().contains("degenerate"), "{err}");
        let err = ExperimentConfig::parse_str("run_count = 3\nrun_seeds = 1, 2").unwrap_err();
        assert!(err.to_string().contains("expected 3 entries"), "{err}");
        let ok = ExperimentConfig::parse_str(
            "run_count = 2\nrun_seeds = 5, 9\nexpansion_runs = 2\nexpansion_seeds = 3, 4",
        )
        .unwrap();
        assert_eq!(ok.run_seeds, Some(vec![5, 9]));
        assert_eq!(ok.expansion_seeds, Some(vec![3, 4]));
    }

    #[test]
    fn expansion_runs_follow_run_count_unless_set() {
        let cfg = ExperimentConfig::parse_str("run_count = 6").unwrap();
        assert_eq!(cfg.expansion_runs, 6);
        let cfg = ExperimentConfig::parse_str("run_count = 6\nexpansion_runs = 3").unwrap();
        assert_eq!(cfg.expansion_runs, 3);
        // A single ε-run still needs two twin runs for the profile spread.
        let cfg = ExperimentConfig::parse_str("run_count = 1").unwrap();
        assert_eq!(cfg.expansion_runs, 2);
    }

    #[test]
    fn logistic_model_requires_alternating_data() {
        let cfg = ExperimentConfig::parse_str("model = logistic\ndata = alternating").unwrap();
        assert_eq!(cfg.model, ModelKind::Logistic);
        assert!(ExperimentConfig::parse_str("model = logistic\ndata = blobs").is_err());
    }

    #[test]
    fn layer_sizes_wrap_hidden_widths() {
        let cfg = ExperimentConfig::parse_str("hidden = 8, 4").unwrap();
        assert_eq!(cfg.layer_sizes(16, 10), vec![16, 8, 4, 10]);
        let cfg = ExperimentConfig::parse_str("hidden =").unwrap();
        assert_eq!(cfg.layer_sizes(3, 2), vec![3, 2]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = ExperimentConfig::parse_str("lr = 0.1\nnot a setting\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
