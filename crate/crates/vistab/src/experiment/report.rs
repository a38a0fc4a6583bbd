//! The per-condition result document and its renderings.
//!
//! A [`BoundReport`] gathers everything one condition produced: losses and
//! gaps, the assembled drift and posterior-sensitivity bounds, the
//! KL-driven certificate family under both prior centerings, and the
//! expansion-profile summary. It renders to a deterministic hierarchical
//! text document or to JSON; floats are always written in shortest
//! round-trip form, so re-parsing a rendered number recovers the exact bits
//! and re-running a config reproduces files byte for byte.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Posterior losses on train and test plus the absolute gaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub train_zero_one: f64,
    pub test_zero_one: f64,
    pub gap_zero_one: f64,
    pub train_log_loss: f64,
    pub test_log_loss: f64,
    pub gap_log_loss: f64,
}

/// Drift bounds and the two posterior-sensitivity routes built from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub diff_m_l2: f64,
    pub diff_s_l1: f64,
    pub diff_s_l2: f64,
    pub kl_route: f64,
    pub w2_route: f64,
    /// True when no loss Lipschitz constant was supplied: `w2_route` is then
    /// a raw transport distance, not a certified loss bound.
    pub w2_k_missing: bool,
}

/// Best union-grid candidate statistics. The value is averaged over runs;
/// the minimizer detail is reported for the first run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnionSummary {
    pub value_mean: f64,
    pub kl_mean: f64,
    pub j_run0: usize,
    pub lambda_run0: f64,
}

/// KL-driven certificates under both prior centerings, averaged over runs.
/// "fixed" centers the reference at the configured constant mean; "init"
/// centers it at each run's own initialization means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacReport {
    pub kl_fixed: f64,
    pub kl_init: f64,
    pub germain_fixed: f64,
    pub germain_init: f64,
    pub sqrt_fixed: f64,
    pub sqrt_init: f64,
    pub union_fixed: UnionSummary,
    pub union_init: UnionSummary,
}

/// Expansion-profile digest; the full per-step series lives in the traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSummary {
    pub steps: usize,
    pub eta_mean: f64,
    pub eta_max: f64,
    /// `Σ_t ln η_t` — the log of the full cumulative product.
    pub log_cumulative: f64,
}

/// Everything one condition produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub condition: String,
    pub objective: String,
    pub n_train: usize,
    pub n_test: usize,
    pub t_steps: usize,
    pub run_count: usize,
    pub pair_count: usize,
    /// Set when momentum > 0: expansion is measured on the (θ, v) state, a
    /// strictly stronger notion than plain parameter expansion.
    pub momentum_caveat: bool,
    pub losses: LossReport,
    pub stability: StabilityReport,
    pub pac: PacReport,
    pub expansion: ExpansionSummary,
    pub warnings: Vec<String>,
}

impl BoundReport {
    /// Structural sanity: bounds non-negative, gaps in range, no NaNs.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("train_zero_one", self.losses.train_zero_one),
            ("test_zero_one", self.losses.test_zero_one),
            ("gap_zero_one", self.losses.gap_zero_one),
            ("train_log_loss", self.losses.train_log_loss),
            ("test_log_loss", self.losses.test_log_loss),
            ("gap_log_loss", self.losses.gap_log_loss),
            ("diff_m_l2", self.stability.diff_m_l2),
            ("diff_s_l1", self.stability.diff_s_l1),
            ("diff_s_l2", self.stability.diff_s_l2),
            ("kl_route", self.stability.kl_route),
            ("w2_route", self.stability.w2_route),
            ("kl_fixed", self.pac.kl_fixed),
            ("kl_init", self.pac.kl_init),
            ("germain_fixed", self.pac.germain_fixed),
            ("germain_init", self.pac.germain_init),
            ("sqrt_fixed", self.pac.sqrt_fixed),
            ("sqrt_init", self.pac.sqrt_init),
            ("union_fixed", self.pac.union_fixed.value_mean),
            ("union_init", self.pac.union_init.value_mean),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Degenerate {
                    reason: format!("report field {name} must be finite and ≥ 0, got {v}"),
                });
            }
        }
        if self.losses.gap_zero_one > 1.0 {
            return Err(Error::Degenerate {
                reason: format!(
                    "zero-one gap cannot exceed 1, got {}",
                    self.losses.gap_zero_one
                ),
            });
        }
        Ok(())
    }

    /// Deterministic hierarchical text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(&mut out, format!("condition: {}", self.condition));
        push(&mut out, format!("objective: {}", self.objective));
        push(&mut out, format!("n_train: {}", self.n_train));
        push(&mut out, format!("n_test: {}", self.n_test));
        push(&mut out, format!("t_steps: {}", self.t_steps));
        push(&mut out, format!("run_count: {}", self.run_count));
        push(&mut out, format!("pair_count: {}", self.pair_count));
        push(
            &mut out,
            format!("momentum_caveat: {}", self.momentum_caveat),
        );
        push(&mut out, "losses:".into());
        push(
            &mut out,
            format!("  train_zero_one: {}", self.losses.train_zero_one),
        );
        push(
            &mut out,
            format!("  test_zero_one: {}", self.losses.test_zero_one),
        );
        push(
            &mut out,
            format!("  gap_zero_one: {}", self.losses.gap_zero_one),
        );
        push(
            &mut out,
            format!("  train_log_loss: {}", self.losses.train_log_loss),
        );
        push(
            &mut out,
            format!("  test_log_loss: {}", self.losses.test_log_loss),
        );
        push(
            &mut out,
            format!("  gap_log_loss: {}", self.losses.gap_log_loss),
        );
        push(&mut out, "stability:".into());
        push(&mut out, format!("  diff_m_l2: {}", self.stability.diff_m_l2));
        push(&mut out, format!("  diff_s_l1: {}", self.stability.diff_s_l1));
        push(&mut out, format!("  diff_s_l2: {}", self.stability.diff_s_l2));
        push(&mut out, format!("  kl_route: {}", self.stability.kl_route));
        push(&mut out, format!("  w2_route: {}", self.stability.w2_route));
        push(
            &mut out,
            format!("  w2_k_missing: {}", self.stability.w2_k_missing),
        );
        push(&mut out, "pac:".into());
        push(&mut out, format!("  kl_fixed: {}", self.pac.kl_fixed));
        push(&mut out, format!("  kl_init: {}", self.pac.kl_init));
        push(
            &mut out,
            format!("  germain_fixed: {}", self.pac.germain_fixed),
        );
        push(&mut out, format!("  germain_init: {}", self.pac.germain_init));
        push(&mut out, format!("  sqrt_fixed: {}", self.pac.sqrt_fixed));
        push(&mut out, format!("  sqrt_init: {}", self.pac.sqrt_init));
        for (name, u) in [
            ("union_fixed", &self.pac.union_fixed),
            ("union_init", &self.pac.union_init),
        ] {
            push(
                &mut out,
                format!(
                    "  {name}: value_mean={} kl_mean={} j_run0={} lambda_run0={}",
                    u.value_mean, u.kl_mean, u.j_run0, u.lambda_run0
                ),
            );
        }
        push(&mut out, "expansion:".into());
        push(&mut out, format!("  steps: {}", self.expansion.steps));
        push(&mut out, format!("  eta_mean: {}", self.expansion.eta_mean));
        push(&mut out, format!("  eta_max: {}", self.expansion.eta_max));
        push(
            &mut out,
            format!("  log_cumulative: {}", self.expansion.log_cumulative),
        );
        push(&mut out, "warnings:".into());
        for w in &self.warnings {
            push(&mut out, format!("  - {w}"));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Degenerate {
            reason: format!("report serialization failed: {e}"),
        })
    }
}

/// The metric rows of the side-by-side comparison table, in emission order.
pub const COMPARE_METRICS: &[&str] = &[
    "train_zero_one",
    "test_zero_one",
    "gap_zero_one",
    "train_log_loss",
    "test_log_loss",
    "gap_log_loss",
    "diff_m_l2",
    "diff_s_l1",
    "diff_s_l2",
    "kl_route",
    "w2_route",
    "kl_fixed",
    "germain_fixed",
    "sqrt_fixed",
    "union_fixed",
    "eta_max",
];

fn metric_value(r: &BoundReport, metric: &str) -> f64 {
    match metric {
        "train_zero_one" => r.losses.train_zero_one,
        "test_zero_one" => r.losses.test_zero_one,
        "gap_zero_one" => r.losses.gap_zero_one,
        "train_log_loss" => r.losses.train_log_loss,
        "test_log_loss" => r.losses.test_log_loss,
        "gap_log_loss" => r.losses.gap_log_loss,
        "diff_m_l2" => r.stability.diff_m_l2,
        "diff_s_l1" => r.stability.diff_s_l1,
        "diff_s_l2" => r.stability.diff_s_l2,
        "kl_route" => r.stability.kl_route,
        "w2_route" => r.stability.w2_route,
        "kl_fixed" => r.pac.kl_fixed,
        "germain_fixed" => r.pac.germain_fixed,
        "sqrt_fixed" => r.pac.sqrt_fixed,
        "union_fixed" => r.pac.union_fixed.value_mean,
        "eta_max" => r.expansion.eta_max,
        _ => f64::NAN,
    }
}

/// Renders the two-objective comparison as a tab-separated table. Comment
/// lines (`#`) carry the ordering summary; data lines round-trip losslessly
/// through [`parse_compare_table`].
pub fn compare_table(a: &BoundReport, b: &BoundReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("metric\t{}\t{}\n", a.objective, b.objective));
    for metric in COMPARE_METRICS {
        out.push_str(&format!(
            "{metric}\t{}\t{}\n",
            metric_value(a, metric),
            metric_value(b, metric)
        ));
    }
    for metric in ["w2_route", "kl_route", "gap_log_loss", "test_log_loss"] {
        let (va, vb) = (metric_value(a, metric), metric_value(b, metric));
        out.push_str(&format!(
            "# ordering {}: {} >= {}: {}\n",
            metric, b.objective, a.objective, vb >= va
        ));
    }
    out
}

/// Parses a comparison table back into `(metric, left, right)` rows,
/// skipping the header and comment lines.
pub fn parse_compare_table(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.starts_with('#') || line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let metric = parts.next().unwrap_or_default().to_string();
        let left = parts
            .next()
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: "expected a numeric second column".into(),
            })?;
        let right = parts
            .next()
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: "expected a numeric third column".into(),
            })?;
        rows.push((metric, left, right));
    }
    Ok(rows)
}
