//! Evaluation against a reference labeling: crown-level majority voting,
//! optimal label alignment, and matching-matrix accuracy statistics.

mod hungarian;

use std::collections::BTreeMap;

use log::warn;

use crate::error::{Error, Result};
use crate::io::IntGrid;

/// Delineated crown ids on the scene grid: 0 means no crown, positive ids
/// form a contiguous set 1..=C.
#[derive(Debug, Clone)]
pub struct CrownMap {
    grid: IntGrid,
    count: usize,
}

impl CrownMap {
    pub fn new(grid: IntGrid) -> Result<Self> {
        let max = grid.values().iter().copied().max().unwrap_or(0);
        let mut present = vec![false; max as usize + 1];
        for &id in grid.values() {
            present[id as usize] = true;
        }
        if let Some(missing) = (1..=max).find(|&id| !present[id as usize]) {
            return Err(Error::NonContiguousCrowns { missing, max });
        }
        Ok(CrownMap {
            grid,
            count: max as usize,
        })
    }

    /// Number of crowns C.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn grid(&self) -> &IntGrid {
        &self.grid
    }
}

/// Majority vote within each crown.
///
/// Returns the per-crown winning labels (index c-1 for crown c) and the
/// relabeled pixel grid. Pixels outside any crown (id 0) are unchanged, and
/// unlabeled pixels (label 0) do not vote; a crown with no labeled pixels
/// keeps label 0 and is reported.
pub fn crown_majority_vote(labels: &IntGrid, crowns: &CrownMap) -> Result<(Vec<u32>, IntGrid)> {
    let cg = crowns.grid();
    if labels.rows() != cg.rows() || labels.cols() != cg.cols() {
        return Err(Error::DimensionMismatch {
            context: "labels versus crowns",
            left_rows: labels.rows(),
            left_cols: labels.cols(),
            right_rows: cg.rows(),
            right_cols: cg.cols(),
        });
    }
    let mut votes: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); crowns.count()];
    for (&crown, &label) in cg.values().iter().zip(labels.values()) {
        if crown > 0 && label > 0 {
            *votes[crown as usize - 1].entry(label).or_insert(0) += 1;
        }
    }
    let mut crown_labels = Vec::with_capacity(crowns.count());
    let mut empty = 0usize;
    for tally in &votes {
        // BTreeMap iterates labels ascending, so on ties the lowest wins.
        let winner = tally
            .iter()
            .fold(
                (0u32, 0usize),
                |best, (&label, &n)| {
                    if n > best.1 {
                        (label, n)
                    } else {
                        best
                    }
                },
            )
            .0;
        if winner == 0 {
            empty += 1;
        }
        crown_labels.push(winner);
    }
    if empty > 0 {
        warn!("{empty} crown(s) contain no labeled pixels and stay unlabeled");
    }
    let mut out = labels.clone();
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            let crown = cg.get(r, c);
            if crown > 0 {
                let winner = crown_labels[crown as usize - 1];
                if winner > 0 {
                    out.set(r, c, winner);
                }
            }
        }
    }
    Ok((crown_labels, out))
}

fn overlap_counts(predicted: &[u32], reference: &[u32], k: usize) -> Result<Vec<u64>> {
    if predicted.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            context: "predicted versus reference labels",
            left_rows: predicted.len(),
            left_cols: 1,
            right_rows: reference.len(),
            right_cols: 1,
        });
    }
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "classes",
            reason: "need at least one class".into(),
        });
    }
    let mut counts = vec![0u64; k * k];
    for (&p, &r) in predicted.iter().zip(reference) {
        for label in [p, r] {
            if label == 0 || label as usize > k {
                return Err(Error::LabelOutOfRange {
                    label: label as i64,
                    k,
                });
            }
        }
        counts[(r as usize - 1) * k + (p as usize - 1)] += 1;
    }
    Ok(counts)
}

/// Assign predicted clusters to reference classes maximizing the total
/// diagonal overlap. `alignment[r]` is the predicted label (1-based) paired
/// with reference class r+1.
pub fn hungarian_align(predicted: &[u32], reference: &[u32], k: usize) -> Result<Vec<u32>> {
    let counts = overlap_counts(predicted, reference, k)?;
    let max = counts.iter().copied().max().unwrap_or(0) as i64;
    let cost: Vec<i64> = counts.iter().map(|&c| max - c as i64).collect();
    let row_to_col = hungarian::solve_assignment(&cost, k);
    Ok(row_to_col.iter().map(|&c| (c + 1) as u32).collect())
}

/// Matching matrix and accuracy statistics for aligned labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    k: usize,
    /// K x K counts, rows = reference class, columns = predicted class after
    /// alignment (so agreement sits on the diagonal).
    matrix: Vec<u64>,
    /// `alignment[r]`: original predicted label paired with reference r+1.
    alignment: Vec<u32>,
    producer_acc: Vec<f64>,
    user_acc: Vec<f64>,
    overall_acc: f64,
    average_acc: f64,
}

impl EvalReport {
    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &[u64] {
        &self.matrix
    }

    pub fn count(&self, reference: usize, predicted: usize) -> u64 {
        self.matrix[reference * self.k + predicted]
    }

    pub fn alignment(&self) -> &[u32] {
        &self.alignment
    }

    /// Per-class recall: diagonal over reference row sum.
    pub fn producer_acc(&self) -> &[f64] {
        &self.producer_acc
    }

    /// Per-class precision: diagonal over predicted column sum.
    pub fn user_acc(&self) -> &[f64] {
        &self.user_acc
    }

    /// Trace over total.
    pub fn overall_acc(&self) -> f64 {
        self.overall_acc
    }

    /// Mean producer's accuracy.
    pub fn average_acc(&self) -> f64 {
        self.average_acc
    }

    pub fn total(&self) -> u64 {
        self.matrix.iter().sum()
    }

    /// Human-readable table: counts with producer's/user's margins.
    pub fn text_table(&self) -> String {
        let k = self.k;
        let mut out = String::new();
        out.push_str(&format!("{:>12}", ""));
        for c in 0..k {
            out.push_str(&format!("{:>12}", format!("pred {}", c + 1)));
        }
        out.push_str(&format!("{:>12}\n", "producer"));
        for r in 0..k {
            out.push_str(&format!("{:>12}", format!("ref {}", r + 1)));
            for c in 0..k {
                out.push_str(&format!("{:>12}", self.count(r, c)));
            }
            out.push_str(&format!("{:>11.1}%\n", 100.0 * self.producer_acc[r]));
        }
        out.push_str(&format!("{:>12}", "user"));
        for c in 0..k {
            out.push_str(&format!("{:>11.1}%", 100.0 * self.user_acc[c]));
        }
        out.push('\n');
        out.push_str(&format!(
            "overall accuracy {:.1}%, average accuracy {:.1}%\n",
            100.0 * self.overall_acc,
            100.0 * self.average_acc
        ));
        out
    }

    /// Machine-readable CSV: one record per matrix cell and per statistic.
    pub fn csv(&self) -> String {
        let mut out = String::from("record,reference,predicted,value\n");
        for r in 0..self.k {
            for c in 0..self.k {
                out.push_str(&format!("count,{},{},{}\n", r + 1, c + 1, self.count(r, c)));
            }
        }
        for (r, &p) in self.alignment.iter().enumerate() {
            out.push_str(&format!("alignment,{},{p},\n", r + 1));
        }
        for (r, &v) in self.producer_acc.iter().enumerate() {
            out.push_str(&format!("producer_acc,{},,{v}\n", r + 1));
        }
        for (c, &v) in self.user_acc.iter().enumerate() {
            out.push_str(&format!("user_acc,,{},{v}\n", c + 1));
        }
        out.push_str(&format!("overall_acc,,,{}\n", self.overall_acc));
        out.push_str(&format!("average_acc,,,{}\n", self.average_acc));
        out
    }
}

/// Build the matching matrix for a given alignment and derive all accuracy
/// statistics. Classes absent from the reference (or prediction) get
/// accuracy 0 rather than a division by zero.
pub fn matching_matrix(
    predicted: &[u32],
    reference: &[u32],
    alignment: &[u32],
    k: usize,
) -> Result<EvalReport> {
    if alignment.len() != k {
        return Err(Error::InvalidParameter {
            name: "alignment",
            reason: format!("expected {k} entries, got {}", alignment.len()),
        });
    }
    let mut column_of = vec![usize::MAX; k + 1];
    for (r, &p) in alignment.iter().enumerate() {
        if p == 0 || p as usize > k || column_of[p as usize] != usize::MAX {
            return Err(Error::InvalidParameter {
                name: "alignment",
                reason: format!("not a permutation of 1..={k}"),
            });
        }
        column_of[p as usize] = r;
    }
    let raw = overlap_counts(predicted, reference, k)?;
    let mut matrix = vec![0u64; k * k];
    for r in 0..k {
        for p in 0..k {
            matrix[r * k + column_of[p + 1]] = raw[r * k + p];
        }
    }
    let total: u64 = matrix.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParameter {
            name: "labels",
            reason: "no pixels to evaluate".into(),
        });
    }
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let producer_acc: Vec<f64> = (0..k)
        .map(|r| {
            let row: u64 = matrix[r * k..(r + 1) * k].iter().sum();
            ratio(matrix[r * k + r], row)
        })
        .collect();
    let user_acc: Vec<f64> = (0..k)
        .map(|c| {
            let col: u64 = (0..k).map(|r| matrix[r * k + c]).sum();
            ratio(matrix[c * k + c], col)
        })
        .collect();
    let trace: u64 = (0..k).map(|d| matrix[d * k + d]).sum();
    let overall_acc = trace as f64 / total as f64;
    let average_acc = producer_acc.iter().sum::<f64>() / k as f64;
    Ok(EvalReport {
        k,
        matrix,
        alignment: alignment.to_vec(),
        producer_acc,
        user_acc,
        overall_acc,
        average_acc,
    })
}

/// Align and evaluate in one step.
pub fn evaluate(predicted: &[u32], reference: &[u32], k: usize) -> Result<EvalReport> {
    let alignment = hungarian_align(predicted, reference, k)?;
    matching_matrix(predicted, reference, &alignment, k)
}

/// Pull the pixels labeled on both grids into paired label vectors,
/// skipping positions where either side is 0.
pub fn paired_labels(predicted: &IntGrid, reference: &IntGrid) -> Result<(Vec<u32>, Vec<u32>)> {
    if predicted.rows() != reference.rows() || predicted.cols() != reference.cols() {
        return Err(Error::DimensionMismatch {
            context: "predicted versus reference grids",
            left_rows: predicted.rows(),
            left_cols: predicted.cols(),
            right_rows: reference.rows(),
            right_cols: reference.cols(),
        });
    }
    let mut p = Vec::new();
    let mut r = Vec::new();
    for (&pv, &rv) in predicted.values().iter().zip(reference.values()) {
        if pv > 0 && rv > 0 {
            p.push(pv);
            r.push(rv);
        }
    }
    Ok((p, r))
}

/// Crown-weighted evaluation: vote both labelings down to one label per
/// crown and evaluate those, so every crown counts once regardless of size.
/// Crowns unlabeled on either side are skipped.
pub fn evaluate_crown_weighted(
    predicted: &IntGrid,
    reference: &IntGrid,
    crowns: &CrownMap,
    k: usize,
) -> Result<EvalReport> {
    let (pred_crowns, _) = crown_majority_vote(predicted, crowns)?;
    let (ref_crowns, _) = crown_majority_vote(reference, crowns)?;
    let mut p = Vec::new();
    let mut r = Vec::new();
    for (&pv, &rv) in pred_crowns.iter().zip(&ref_crowns) {
        if pv > 0 && rv > 0 {
            p.push(pv);
            r.push(rv);
        }
    }
    evaluate(&p, &r, k)
}

/// Apply a total relabeling map.
pub fn merge_classes(labels: &[u32], merge_spec: &BTreeMap<u32, u32>) -> Result<Vec<u32>> {
    labels
        .iter()
        .map(|&l| {
            merge_spec
                .get(&l)
                .copied()
                .ok_or(Error::UnmappedLabel { label: l })
        })
        .collect()
}
