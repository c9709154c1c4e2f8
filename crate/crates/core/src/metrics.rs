//! Calibration curves and rank correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidential::{predictive_interval, EvidentialOutput};
use crate::stats::student_t_sf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub levels: Vec<f64>,
    pub ecp: Vec<f64>,
    pub mce: f64,
}

/// Nominal levels 0.05, 0.10, ..., 0.95.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("need at least one level"));
    }
    if levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("levels must be strictly increasing within (0, 1)"));
    }
    Ok(())
}

/// Empirical coverage of arbitrary central intervals: `interval(i, q)` is the
/// level-`q` interval for observation `i`.
pub fn ecp_curve_with<F>(ys: &[f64], levels: &[f64], mut interval: F) -> Result<CalibrationReport>
where
    F: FnMut(usize, f64) -> Result<(f64, f64)>,
{
    if ys.is_empty() {
        return Err(Error::invalid("calibration needs at least one observation"));
    }
    check_levels(levels)?;
    let mut ecp = Vec::with_capacity(levels.len());
    for &q in levels {
        let mut hits = 0usize;
        for (i, &y) in ys.iter().enumerate() {
            let (lo, hi) = interval(i, q)?;
            if y >= lo && y <= hi {
                hits += 1;
            }
        }
        ecp.push(hits as f64 / ys.len() as f64);
    }
    let mut report = CalibrationReport {
        levels: levels.to_vec(),
        ecp,
        mce: 0.0,
    };
    report.mce = mce(&report);
    Ok(report)
}

/// Coverage of the Student-t predictive intervals of `outputs` over `ys`.
pub fn ecp_curve(outputs: &[EvidentialOutput], ys: &[f64], levels: &[f64]) -> Result<CalibrationReport> {
    if outputs.len() != ys.len() {
        return Err(Error::invalid("one prediction per observation is required"));
    }
    ecp_curve_with(ys, levels, |i, q| predictive_interval(&outputs[i], q))
}

/// Mean absolute gap between empirical and nominal coverage.
pub fn mce(report: &CalibrationReport) -> f64 {
    report
        .ecp
        .iter()
        .zip(&report.levels)
        .map(|(e, q)| (e - q).abs())
        .sum::<f64>()
        / report.levels.len() as f64
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation and its two-sided p-value from the t approximation
/// with `n - 2` degrees of freedom.
pub fn spearman(u: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    if u.len() != v.len() {
        return Err(Error::invalid("spearman needs equal-length samples"));
    }
    if u.len() < 10 {
        return Err(Error::invalid(format!("spearman needs at least 10 pairs, got {}", u.len())));
    }
    if u.iter().chain(v).any(|x| x.is_nan()) {
        return Err(Error::invalid("spearman inputs contain NaN"));
    }
    let (ru, rv) = (average_ranks(u), average_ranks(v));
    let n = u.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in ru.iter().zip(&rv) {
        suv += (a - mean) * (b - mean);
        suu += (a - mean) * (a - mean);
        svv += (b - mean) * (b - mean);
    }
    if suu == 0.0 || svv == 0.0 {
        return Err(Error::DegenerateInput("correlation undefined for a constant sample".into()));
    }
    let r = (suv / (suu * svv).sqrt()).clamp(-1.0, 1.0);
    let dof = n - 2.0;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        (2.0 * student_t_sf(t.abs(), dof)).min(1.0)
    };
    Ok((r, p))
}
