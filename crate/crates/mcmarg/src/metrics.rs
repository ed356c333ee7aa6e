//! Clustering agreement metrics: the adjusted Rand index and its
//! contingency-table plumbing. All binomial sums are exact 128-bit integers;
//! floating point only enters in the final division, so permutation
//! invariance and the worked small cases hold exactly.

use std::collections::BTreeMap;

use crate::data::LabelVector;
use crate::error::{Error, Result};

/// Cross-tabulation of two labelings over the same points. Rows follow the
/// sorted distinct labels of the first labeling, columns of the second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

/// Build the contingency table of two equal-length labelings.
pub fn contingency(truth: &LabelVector, pred: &LabelVector) -> Result<ContingencyTable> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidParameter(format!(
            "labelings differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidParameter("labelings must be non-empty".into()));
    }
    let mut row_of = BTreeMap::new();
    for &t in truth {
        let next = row_of.len();
        row_of.entry(t).or_insert(next);
    }
    let mut col_of = BTreeMap::new();
    for &p in pred {
        let next = col_of.len();
        col_of.entry(p).or_insert(next);
    }
    // BTreeMap iteration is sorted, but insertion order above is not; remap
    // so row/col indices follow ascending label order.
    let row_of: BTreeMap<usize, usize> =
        row_of.keys().enumerate().map(|(i, &label)| (label, i)).collect();
    let col_of: BTreeMap<usize, usize> =
        col_of.keys().enumerate().map(|(i, &label)| (label, i)).collect();

    let r = row_of.len();
    let c = col_of.len();
    let mut counts = vec![vec![0u64; c]; r];
    for (&t, &p) in truth.iter().zip(pred) {
        counts[row_of[&t]][col_of[&p]] += 1;
    }
    let row_sums: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..c).map(|j| counts.iter().map(|row| row[j]).sum()).collect();
    Ok(ContingencyTable { counts, row_sums, col_sums, n: truth.len() as u64 })
}

#[inline]
fn choose2(m: u64) -> i128 {
    let m = m as i128;
    m * (m - 1) / 2
}

/// Whether the two labelings induce the same partition of the points:
/// exactly one nonzero cell per row and per column.
fn identical_partitions(table: &ContingencyTable) -> bool {
    table.counts.iter().all(|row| row.iter().filter(|&&v| v > 0).count() == 1)
        && (0..table.col_sums.len())
            .all(|j| table.counts.iter().filter(|row| row[j] > 0).count() == 1)
}

/// Adjusted Rand index between two labelings.
///
/// Computed from the contingency table with exact integer binomials:
/// `(2*(C(n,2)*Σ_ij C(n_ij,2) − Σ_i C(a_i,2) * Σ_j C(b_j,2))) /
///  (C(n,2)*(Σ_i C(a_i,2) + Σ_j C(b_j,2)) − 2*Σ_i C(a_i,2)*Σ_j C(b_j,2))`.
/// When the denominator is zero (both sides all singletons or all one
/// cluster) the convention is 1.0 for identical partitions, else 0.0.
pub fn ari(truth: &LabelVector, pred: &LabelVector) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::InvalidParameter(format!(
            "labelings differ in length: {} vs {}",
            truth.len(),
            pred.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "ARI needs at least 2 points, got {}",
            truth.len()
        )));
    }
    let table = contingency(truth, pred)?;
    let sum_ij: i128 = table.counts.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: i128 = table.row_sums.iter().map(|&v| choose2(v)).sum();
    let sum_b: i128 = table.col_sums.iter().map(|&v| choose2(v)).sum();
    let c2 = choose2(table.n);

    let num = 2 * (c2 * sum_ij - sum_a * sum_b);
    let den = c2 * (sum_a + sum_b) - 2 * sum_a * sum_b;
    if den == 0 {
        return Ok(if identical_partitions(&table) { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}
