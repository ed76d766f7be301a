// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{LabError, Result};

/// Ranks starting at 1, ties sharing their midrank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Average of 1-based ranks i+1 ..= j+1.
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-based (Mann–Whitney) AUROC: the probability that a random positive
/// outscores a random negative, ties counting one half.
///
/// The result is computed from whichever side of 0.5 the concordance count
/// falls on, so `auroc(s, y) + auroc(-s, y) == 1.0` holds exactly in
/// floating point.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(LabError::Degenerate(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(LabError::Degenerate("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(LabError::Degenerate("AUROC needs both classes".into()));
    }
    let ranks = midranks(scores);
    // Twice the positive rank sum is an integer.
    let twice_rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| 2.0 * r)
        .sum();
    let np = n_pos as f64;
    let denom = 2.0 * np * n_neg as f64;
    let concordant = twice_rank_sum - np * (np + 1.0);
    if 2.0 * concordant <= denom {
        Ok(concordant / denom)
    } else {
        Ok(1.0 - (denom - concordant) / denom)
    }
}

/// Unweighted mean of one-vs-rest AUROCs over `n_classes` classes.
/// `scores[i][c]` is sample `i`'s score for class `c`.
pub fn macro_ovr_auroc(scores: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(LabError::Degenerate("score rows and labels differ in length".into()));
    }
    if n_classes < 2 {
        return Err(LabError::Degenerate("macro AUROC needs at least two classes".into()));
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        let column: Vec<f64> = scores
            .iter()
            .map(|row| {
                row.get(c)
                    .copied()
                    .ok_or_else(|| LabError::Degenerate("score row too short".into()))
            })
            .collect::<Result<_>>()?;
        let is_c: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        total += auroc(&column, &is_c)
            .map_err(|_| LabError::Degenerate(format!("class {c} absent or universal")))?;
    }
    Ok(total / n_classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn ordered_and_reversed() {
        let y = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.3, 0.4], &y).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4, 0.3, 0.2, 0.1], &y).unwrap(), 0.0);
    }

    #[test]
    fn six_points_with_ties() {
        let s = [0.5, 0.5, 0.2, 0.9, 0.5, 0.1];
        let y = [true, false, false, true, true, false];
        assert_eq!(auroc(&s, &y).unwrap(), pair_count(&s, &y));
    }

    #[test]
    fn single_class_rejected() {
        assert!(auroc(&[0.1, 0.2], &[true, true]).is_err());
        let s = vec![vec![0.0, 1.0, 0.0]; 4];
        assert!(macro_ovr_auroc(&s, &[0, 1, 0, 1], 3).is_err());
    }

    #[test]
    fn macro_perfect_separation() {
        let labels = [0, 1, 2, 0, 1, 2];
        let scores: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..3).map(|c| if c == l { 1.0 } else { 0.0 }).collect())
            .collect();
        assert_eq!(macro_ovr_auroc(&scores, &labels, 3).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn negation_complements(raw in proptest::collection::vec((0u8..5, any::<bool>()), 2..30)) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| *v as f64).collect();
            let y: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert_eq!(auroc(&s, &y).unwrap() + auroc(&neg, &y).unwrap(), 1.0);
        }

        #[test]
        fn monotone_transform_invariant(raw in proptest::collection::vec((-3.0f64..3.0, any::<bool>()), 2..30)) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| *v).collect();
            let y: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auroc(&s, &y).unwrap(), auroc(&t, &y).unwrap());
        }
    }
}
