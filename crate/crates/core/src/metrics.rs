//! Clustering evaluation against ground-truth classes.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::num::Float;

/// Normalization used by [`nmi`]: `2·I(a;b) / (H(a) + H(b))`.
pub const NMI_NORMALIZATION: &str = "arithmetic";

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::InvalidArgument(
            "label vectors must be non-empty".into(),
        ));
    }
    if pred.len() != truth.len() {
        return Err(Error::dims(
            "pred",
            (pred.len(), 1),
            "truth",
            (truth.len(), 1),
        ));
    }
    Ok(())
}

/// Contingency counts, `pred clusters × truth classes`.
fn contingency(pred: &[usize], truth: &[usize]) -> Vec<Vec<usize>> {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kt]; kp];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    table
}

/// Fraction of samples correctly labeled under the best one-to-one mapping
/// between predicted clusters and true classes.
pub fn hungarian_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let table = contingency(pred, truth);
    let (rows, cols) = (table.len(), table[0].len());
    // kuhn_munkres wants rows <= columns
    let weights = if rows <= cols {
        Matrix::from_fn(rows, cols, |(i, j)| table[i][j] as i64)
    } else {
        Matrix::from_fn(cols, rows, |(i, j)| table[j][i] as i64)
    };
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NmiScore {
    pub value: f64,
    /// Set when either partition has a single cluster; `value` is then 0.
    pub degenerate: bool,
}

fn plogp(count: usize, n: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        let p = count as f64 / n;
        p * p.ln()
    }
}

/// Normalized mutual information with arithmetic-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<NmiScore> {
    check_pair(pred, truth)?;
    let n = pred.len() as f64;
    let table = contingency(pred, truth);
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum())
        .collect();
    let nonempty = |s: &[usize]| s.iter().filter(|&&c| c > 0).count();
    if nonempty(&row_sums) < 2 || nonempty(&col_sums) < 2 {
        return Ok(NmiScore {
            value: 0.0,
            degenerate: true,
        });
    }
    // same partition up to relabeling: exact, without entropy round-off
    let nonzero = |cells: &mut dyn Iterator<Item = usize>| cells.filter(|&c| c > 0).count();
    let bijective = table.iter().all(|r| nonzero(&mut r.iter().copied()) <= 1)
        && (0..col_sums.len()).all(|j| nonzero(&mut table.iter().map(|r| r[j])) <= 1);
    if bijective {
        return Ok(NmiScore {
            value: 1.0,
            degenerate: false,
        });
    }
    let h_pred: f64 = -row_sums.iter().map(|&c| plogp(c, n)).sum::<f64>();
    let h_truth: f64 = -col_sums.iter().map(|&c| plogp(c, n)).sum::<f64>();
    let h_joint: f64 = -table.iter().flatten().map(|&c| plogp(c, n)).sum::<f64>();
    let mutual = h_pred + h_truth - h_joint;
    let value = (2.0 * mutual / (h_pred + h_truth)).clamp(0.0, 1.0);
    Ok(NmiScore {
        value,
        degenerate: false,
    })
}

/// Adjusted Rand index.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let pairs = |c: usize| (c * c.saturating_sub(1)) as f64 / 2.0;
    let table = contingency(pred, truth);
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..table[0].len())
        .map(|j| pairs(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = pairs(pred.len());
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Hard labels by per-column argmax; the lowest index wins ties.
pub fn extract_labels<T: Float>(u: &DMatrix<T>) -> Vec<usize> {
    u.column_iter()
        .map(|col| {
            let mut best = 0;
            for k in 1..col.len() {
                if col[k] > col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
