//! Delimited raw-trace files and the recompute path that proves the
//! summaries honest.
//!
//! Every number a report quotes is derivable from three tab-separated
//! traces: the per-(run, step, pair) gradient-sensitivity records, the
//! per-(run, step) expansion ratios, and the per-step schedule. Floats are
//! written in shortest round-trip form, so a read-back recovers identical
//! bits, and [`recompute_bounds`] — which shares its pooling and assembly
//! code with the live pipeline — reproduces the reported bound values
//! exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Error;
use crate::stability::{
    kl_route_bound, param_diff_bound, pool_runs, w2_route_bound, DeltaRecord, DeltaSeries,
    DiffBounds, ExpansionProfile, ExpansionSeries, StabilityBoundInputs,
};
use crate::trainer::{StepLog, Trajectory};
use crate::Result;

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_field<T: std::str::FromStr>(
    piece: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T> {
    piece
        .and_then(|p| p.parse::<T>().ok())
        .ok_or_else(|| Error::Parse {
            line,
            reason: format!("expected {what}"),
        })
}

fn check_header(line: Option<&str>, expect: &str, path: &Path) -> Result<()> {
    match line {
        Some(l) if l == expect => Ok(()),
        other => Err(Error::Parse {
            line: 1,
            reason: format!(
                "{} must start with '{expect}', found '{}'",
                path.display(),
                other.unwrap_or("<empty>")
            ),
        }),
    }
}

const DELTAS_HEADER: &str = "run\tstep\tpair\tm_l2\ts_l1\ts_l2";
const EXPANSION_HEADER: &str = "run\tstep\tratio";
const PROFILE_HEADER: &str = "step\teta\tcum_product";
const TRAJECTORY_HEADER: &str = "t\tepoch\tbatch_no\talpha";

/// Writes the raw sensitivity records, one row per (run, step, pair).
pub fn write_deltas_tsv(path: &Path, records_per_run: &[Vec<Vec<DeltaRecord>>]) -> Result<()> {
    let mut out = String::from(DELTAS_HEADER);
    out.push('\n');
    for (run, steps) in records_per_run.iter().enumerate() {
        for (step_idx, row) in steps.iter().enumerate() {
            for (pair, rec) in row.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{run}\t{}\t{pair}\t{}\t{}\t{}",
                    step_idx + 1,
                    rec.m_l2,
                    rec.s_l1,
                    rec.s_l2
                );
            }
        }
    }
    write_file(path, &out)
}

/// Reads the sensitivity trace back into run → step → pair nesting. Rows
/// must appear in write order (runs, then steps, then pairs, each ascending
/// from the start).
pub fn read_deltas_tsv(path: &Path) -> Result<Vec<Vec<Vec<DeltaRecord>>>> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    check_header(lines.next(), DELTAS_HEADER, path)?;
    let mut runs: Vec<Vec<Vec<DeltaRecord>>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let run: usize = parse_field(parts.next(), lineno, "a run index")?;
        let step: usize = parse_field(parts.next(), lineno, "a step index")?;
        let pair: usize = parse_field(parts.next(), lineno, "a pair index")?;
        let rec = DeltaRecord {
            m_l2: parse_field(parts.next(), lineno, "a number")?,
            s_l1: parse_field(parts.next(), lineno, "a number")?,
            s_l2: parse_field(parts.next(), lineno, "a number")?,
        };
        if run == runs.len() {
            runs.push(Vec::new());
        } else if run + 1 != runs.len() {
            return Err(Error::Parse {
                line: lineno,
                reason: "rows out of run order".into(),
            });
        }
        let steps = runs.last_mut().expect("pushed or checked above");
        if step == steps.len() + 1 {
            steps.push(Vec::new());
        } else if step != steps.len() || steps.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                reason: "rows out of step order".into(),
            });
        }
        let row = steps.last_mut().expect("pushed or checked above");
        if pair != row.len() {
            return Err(Error::Parse {
                line: lineno,
                reason: "rows out of pair order".into(),
            });
        }
        row.push(rec);
    }
    Ok(runs)
}

/// Writes one row per (twin-run pair, step) expansion ratio.
pub fn write_expansion_tsv(path: &Path, series: &[ExpansionSeries]) -> Result<()> {
    let mut out = String::from(EXPANSION_HEADER);
    out.push('\n');
    for (run, s) in series.iter().enumerate() {
        for (step_idx, r) in s.ratios.iter().enumerate() {
            let _ = writeln!(out, "{run}\t{}\t{}", step_idx + 1, r);
        }
    }
    write_file(path, &out)
}

pub fn read_expansion_tsv(path: &Path) -> Result<Vec<ExpansionSeries>> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    check_header(lines.next(), EXPANSION_HEADER, path)?;
    let mut series: Vec<ExpansionSeries> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let run: usize = parse_field(parts.next(), lineno, "a run index")?;
        let step: usize = parse_field(parts.next(), lineno, "a step index")?;
        let ratio: f64 = parse_field(parts.next(), lineno, "a number")?;
        if run == series.len() {
            series.push(ExpansionSeries { ratios: Vec::new() });
        }
        if run != series.len() - 1 {
            return Err(Error::Parse {
                line: lineno,
                reason: "rows out of run order".into(),
            });
        }
        let s = series.last_mut().expect("pushed above");
        if step != s.ratios.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                reason: "rows out of step order".into(),
            });
        }
        s.ratios.push(ratio);
    }
    Ok(series)
}

/// Writes the aggregated per-step profile together with the running
/// cumulative product of the η values.
pub fn write_profile_tsv(path: &Path, profile: &ExpansionProfile) -> Result<()> {
    let mut out = String::from(PROFILE_HEADER);
    out.push('\n');
    let mut cum = 1.0f64;
    for (step_idx, &eta) in profile.eta.iter().enumerate() {
        cum *= eta;
        let _ = writeln!(out, "{}\t{}\t{}", step_idx + 1, eta, cum);
    }
    write_file(path, &out)
}

pub fn read_profile_tsv(path: &Path) -> Result<ExpansionProfile> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    check_header(lines.next(), PROFILE_HEADER, path)?;
    let mut eta = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let step: usize = parse_field(parts.next(), lineno, "a step index")?;
        if step != eta.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                reason: "rows out of step order".into(),
            });
        }
        eta.push(parse_field(parts.next(), lineno, "a number")?);
    }
    Ok(ExpansionProfile { eta })
}

/// Writes the per-step schedule record of a run.
pub fn write_trajectory_tsv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for s in &traj.steps {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", s.t, s.epoch, s.batch_no, s.alpha);
    }
    write_file(path, &out)
}

pub fn read_trajectory_tsv(path: &Path) -> Result<Trajectory> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    check_header(lines.next(), TRAJECTORY_HEADER, path)?;
    let mut steps = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let log = StepLog {
            t: parse_field(parts.next(), lineno, "a step index")?,
            epoch: parse_field(parts.next(), lineno, "an epoch index")?,
            batch_no: parse_field(parts.next(), lineno, "a batch index")?,
            alpha: parse_field(parts.next(), lineno, "a number")?,
        };
        if log.t != steps.len() + 1 {
            return Err(Error::Parse {
                line: lineno,
                reason: "rows out of step order".into(),
            });
        }
        steps.push(log);
    }
    Ok(Trajectory { steps })
}

/// Re-derives the drift bounds and both route bounds from raw traces. The
/// pooling and assembly code is shared with the live pipeline, so on the
/// same inputs the results are bitwise identical to the report's.
#[allow(clippy::too_many_arguments)]
pub fn recompute_bounds(
    records_per_run: &[Vec<Vec<DeltaRecord>>],
    profile: &ExpansionProfile,
    trajectory: &Trajectory,
    n: usize,
    c_loss: f64,
    sigma0: f64,
    k_lip: Option<f64>,
) -> Result<(DiffBounds, f64, (f64, bool))> {
    let t_steps = trajectory.steps.len();
    let measured = records_per_run.iter().any(|r| r.iter().any(|row| !row.is_empty()));
    let deltas = if measured {
        pool_runs(records_per_run)?
    } else {
        DeltaSeries::zeros(t_steps)
    };
    let alphas = trajectory.alphas();
    let inputs = StabilityBoundInputs {
        deltas: &deltas,
        eta: &profile.eta,
        alphas: &alphas,
        n,
    };
    let diffs = param_diff_bound(&inputs)?;
    let kl_route = kl_route_bound(&diffs, c_loss, sigma0)?;
    let w2 = w2_route_bound(&diffs, k_lip)?;
    Ok((diffs, kl_route, w2))
}
