//! Exact optimal-assignment clustering accuracy.
//!
//! Builds the cluster/class contingency matrix, solves the maximum-agreement
//! assignment with a shortest-augmenting-path Hungarian solver (rectangular
//! cases padded with zero rows/columns), and scores accuracy under the
//! resulting cluster -> class bijection.

use std::collections::BTreeMap;

use super::EvalError;

/// Clustering accuracy and the optimal cluster -> class matching.
pub fn hungarian_acc(y_true: &[i64], y_pred: &[i64]) -> Result<(f64, BTreeMap<i64, i64>), EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }

    let true_values = distinct(y_true);
    let pred_values = distinct(y_pred);
    let t_index: BTreeMap<i64, usize> = true_values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let p_index: BTreeMap<i64, usize> = pred_values.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    let n = true_values.len().max(pred_values.len());
    let mut agreement = vec![vec![0.0_f64; n]; n];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        agreement[p_index[&p]][t_index[&t]] += 1.0;
    }

    // Minimize negated agreement to maximize matches.
    let cost: Vec<Vec<f64>> = agreement
        .iter()
        .map(|row| row.iter().map(|&a| -a).collect())
        .collect();
    let assignment = solve_min_assignment(&cost);

    let mut mapping = BTreeMap::new();
    for (p_idx, t_idx) in assignment.iter().enumerate() {
        if p_idx < pred_values.len() && *t_idx < true_values.len() {
            mapping.insert(pred_values[p_idx], true_values[*t_idx]);
        }
    }

    let correct = y_true
        .iter()
        .zip(y_pred)
        .filter(|&(t, p)| mapping.get(p) == Some(t))
        .count();
    Ok((correct as f64 / y_true.len() as f64, mapping))
}

/// Old/New accuracy under a fixed matching computed on the full test set.
/// Empty subsets report as absent rather than zero.
pub fn subset_acc(
    y_true: &[i64],
    y_pred: &[i64],
    mapping: &BTreeMap<i64, i64>,
    old_classes: &[i64],
) -> (Option<f64>, Option<f64>) {
    let mut old = (0usize, 0usize);
    let mut new = (0usize, 0usize);
    for (t, p) in y_true.iter().zip(y_pred) {
        let bucket = if old_classes.contains(t) { &mut old } else { &mut new };
        bucket.1 += 1;
        if mapping.get(p) == Some(t) {
            bucket.0 += 1;
        }
    }
    let ratio = |(hits, total): (usize, usize)| {
        (total > 0).then(|| hits as f64 / total as f64)
    };
    (ratio(old), ratio(new))
}

fn distinct(values: &[i64]) -> Vec<i64> {
    let mut v: Vec<i64> = values.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Shortest-augmenting-path assignment on a square cost matrix; returns the
/// column chosen for each row. O(n^3), exact.
fn solve_min_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based with virtual row/column 0.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // per column
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Exhaustive maximum-agreement search; test oracle for small label sets.
pub fn brute_force_acc(y_true: &[i64], y_pred: &[i64]) -> f64 {
    let true_values = distinct(y_true);
    let pred_values = distinct(y_pred);
    let n = true_values.len().max(pred_values.len());
    assert!(n <= 8, "brute force oracle limited to tiny label sets");

    let t_index: BTreeMap<i64, usize> = true_values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let p_index: BTreeMap<i64, usize> = pred_values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut agreement = vec![vec![0usize; n]; n];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        agreement[p_index[&p]][t_index[&t]] += 1;
    }

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |p| {
        let score: usize = p.iter().enumerate().map(|(row, &col)| agreement[row][col]).sum();
        best = best.max(score);
    });
    best as f64 / y_true.len() as f64
}

fn permute(values: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == values.len() {
        visit(values);
        return;
    }
    for i in start..values.len() {
        values.swap(start, i);
        permute(values, start + 1, visit);
        values.swap(start, i);
    }
}
