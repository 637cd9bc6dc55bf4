//! Base-session contrastive losses and the blend rules.
//!
//! The supervised loss averages, over labelled anchors with at least one
//! same-label partner, the softmax cross-entropy of each positive against
//! every other instance in the batch. The unsupervised loss aligns the two
//! augmentation views of each instance against same-view negatives. Both
//! denominators include the positive term, so every summand is a proper
//! cross-entropy and the losses are non-negative.

use serde::{Deserialize, Serialize};

use crate::diffmath::{DiffError, Matrix, NodeId, Tape};

/// Floor applied inside every log in this crate.
pub const LOG_FLOOR: f64 = 1e-12;
/// Added to excluded logits so their softmax mass underflows to exactly zero.
const EXCLUSION_OFFSET: f64 = 1e9;

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("every label in the batch is unlabelled (-1)")]
    NoLabelledInstances,
    #[error("batch of {0} is too small for a contrastive loss (need >= 2)")]
    BatchTooSmall(usize),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Math(#[from] DiffError),
}

/// Two augmentation views of a mini-batch plus optional labels (-1 marks
/// unlabelled). Rows are unit-norm projected features.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch {
    pub z: Matrix,
    pub z_hat: Matrix,
    pub labels: Option<Vec<i64>>,
}

impl EmbeddingBatch {
    pub fn new(z: Matrix, z_hat: Matrix, labels: Option<Vec<i64>>) -> Result<Self, ObjectiveError> {
        if z.shape() != z_hat.shape() {
            return Err(ObjectiveError::InvalidBatch(format!(
                "view shapes differ: {:?} vs {:?}",
                z.shape(),
                z_hat.shape()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != z.rows() {
                return Err(ObjectiveError::InvalidBatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    z.rows()
                )));
            }
        }
        for m in [&z, &z_hat] {
            for r in 0..m.rows() {
                let norm: f64 = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(ObjectiveError::InvalidBatch(format!(
                        "row {r} has norm {norm}, expected unit"
                    )));
                }
            }
        }
        Ok(Self { z, z_hat, labels })
    }

    pub fn size(&self) -> usize {
        self.z.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseLossConfig {
    pub tau_r: f64,
    pub beta: f64,
}

impl Default for BaseLossConfig {
    fn default() -> Self {
        Self { tau_r: 0.1, beta: 0.35 }
    }
}

impl BaseLossConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.tau_r > 0.0) {
            return Err(ObjectiveError::InvalidConfig(format!(
                "tau_r must be positive, got {}",
                self.tau_r
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(ObjectiveError::InvalidConfig(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendConfig {
    pub lambda_b: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self { lambda_b: 0.1 }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(0.0..=1.0).contains(&self.lambda_b) {
            return Err(ObjectiveError::InvalidConfig(format!(
                "lambda_b must lie in [0, 1], got {}",
                self.lambda_b
            )));
        }
        Ok(())
    }
}

/// Named per-component losses for one step or epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub sup: Option<f64>,
    pub unsup: Option<f64>,
    pub ncrl: Option<f64>,
    pub sa: Option<f64>,
    pub ta: Option<f64>,
    pub bckd: Option<f64>,
    pub total: f64,
}

/// Indices of other labelled instances sharing each anchor's label.
pub fn positive_sets(labels: &[i64]) -> Vec<Vec<usize>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &li)| {
            if li < 0 {
                return Vec::new();
            }
            labels
                .iter()
                .enumerate()
                .filter(|&(j, &lj)| j != i && lj == li)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Supervised contrastive loss over one projected view.
///
/// Anchors with an empty positive set contribute nothing and are dropped from
/// the outer average; the graph degenerates to a constant zero when no anchor
/// has a positive.
pub fn sup_contrastive_graph(
    tape: &mut Tape,
    z: NodeId,
    labels: &[i64],
    cfg: &BaseLossConfig,
) -> Result<NodeId, DiffError> {
    let n = tape.value(z).rows();
    debug_assert_eq!(labels.len(), n);
    let positives = positive_sets(labels);
    let anchors: Vec<usize> = (0..n).filter(|&i| !positives[i].is_empty()).collect();
    if anchors.is_empty() {
        let zero = Matrix::zeros(1, 1);
        return Ok(tape.constant(&zero));
    }

    let mut weights = Matrix::zeros(n, n);
    for &i in &anchors {
        let w = 1.0 / (anchors.len() as f64 * positives[i].len() as f64);
        for &q in &positives[i] {
            weights.set(i, q, w);
        }
    }

    let sims = tape.matmul_nt(z, z)?;
    let diag_mask = Matrix::eye(n, EXCLUSION_OFFSET);
    let mask = tape.constant(&diag_mask);
    let logits = tape.sub(sims, mask)?;
    let probs = tape.softmax_rows(logits, cfg.tau_r)?;
    let log_probs = tape.ln_clamped(probs, LOG_FLOOR);
    let w = tape.constant(&weights);
    let weighted = tape.mul(w, log_probs)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0))
}

/// Unsupervised contrastive loss between the two views.
///
/// Row `i`'s logits are the same-view similarities `z_i . z_j` for `j != i`
/// with the cross-view positive `z_i . z_hat_i` spliced onto the diagonal.
pub fn unsup_contrastive_graph(
    tape: &mut Tape,
    z: NodeId,
    z_hat: NodeId,
    cfg: &BaseLossConfig,
) -> Result<NodeId, DiffError> {
    let n = tape.value(z).rows();
    let same = tape.matmul_nt(z, z)?;
    let cross = tape.matmul_nt(z, z_hat)?;
    let eye = Matrix::eye(n, 1.0);
    let eye = tape.constant(&eye);
    let diff = tape.sub(cross, same)?;
    let diag_diff = tape.mul(eye, diff)?;
    let logits = tape.add(same, diag_diff)?;
    let probs = tape.softmax_rows(logits, cfg.tau_r)?;
    let log_probs = tape.ln_clamped(probs, LOG_FLOOR);
    let picked = tape.mul(eye, log_probs)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n as f64))
}

pub fn sup_contrastive_loss(
    batch: &EmbeddingBatch,
    cfg: &BaseLossConfig,
) -> Result<f64, ObjectiveError> {
    cfg.validate()?;
    let labels = batch
        .labels
        .as_deref()
        .filter(|l| l.iter().any(|&v| v >= 0))
        .ok_or(ObjectiveError::NoLabelledInstances)?;
    let mut tape = Tape::new();
    let z = tape.constant(&batch.z);
    let loss = sup_contrastive_graph(&mut tape, z, labels, cfg)?;
    Ok(tape.value(loss).scalar().expect("scalar loss"))
}

pub fn unsup_contrastive_loss(
    batch: &EmbeddingBatch,
    cfg: &BaseLossConfig,
) -> Result<f64, ObjectiveError> {
    cfg.validate()?;
    if batch.size() < 2 {
        return Err(ObjectiveError::BatchTooSmall(batch.size()));
    }
    let mut tape = Tape::new();
    let z = tape.constant(&batch.z);
    let z_hat = tape.constant(&batch.z_hat);
    let loss = unsup_contrastive_graph(&mut tape, z, z_hat, cfg)?;
    Ok(tape.value(loss).scalar().expect("scalar loss"))
}

/// Base-session objective: `beta * L_sup + (1 - beta) * L_unsup`.
///
/// A batch without any labelled instance routes only through the unsupervised
/// term; the supervised component is reported as absent and contributes zero.
pub fn base_objective(
    batch: &EmbeddingBatch,
    cfg: &BaseLossConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    cfg.validate()?;
    let unsup = unsup_contrastive_loss(batch, cfg)?;
    let sup = match &batch.labels {
        Some(l) if l.iter().any(|&v| v >= 0) => Some(sup_contrastive_loss(batch, cfg)?),
        _ => None,
    };
    let total = cfg.beta * sup.unwrap_or(0.0) + (1.0 - cfg.beta) * unsup;
    Ok(LossBreakdown {
        sup,
        unsup: Some(unsup),
        total,
        ..LossBreakdown::default()
    })
}

/// Incremental-session objective: `lambda_b * L_ncrl + (1 - lambda_b) * L_bckd`.
pub fn total_objective(ncrl_loss: f64, bckd_loss: f64, cfg: &BlendConfig) -> f64 {
    cfg.lambda_b * ncrl_loss + (1.0 - cfg.lambda_b) * bckd_loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{grad_check, value_and_gradient};
    use crate::rng::{random_orthonormal_rows, unit_test_matrix};

    fn batch(seed: u64, labels: Option<Vec<i64>>) -> EmbeddingBatch {
        let rows = labels.as_ref().map(|l| l.len()).unwrap_or(8);
        EmbeddingBatch::new(
            unit_test_matrix(rows, 16, seed),
            unit_test_matrix(rows, 16, seed ^ 0xabcd),
            labels,
        )
        .unwrap()
    }

    #[test]
    fn paper_defaults() {
        let cfg = BaseLossConfig::default();
        assert_eq!(cfg.tau_r, 0.1);
        assert_eq!(cfg.beta, 0.35);
        assert_eq!(BlendConfig::default().lambda_b, 0.1);
    }

    #[test]
    fn sup_loss_zero_when_every_class_is_singleton() {
        let b = batch(1, Some(vec![0, 1, 2, 3]));
        let loss = sup_contrastive_loss(&b, &BaseLossConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn sup_loss_errors_without_labels() {
        let b = batch(1, Some(vec![-1, -1, -1, -1]));
        assert!(matches!(
            sup_contrastive_loss(&b, &BaseLossConfig::default()),
            Err(ObjectiveError::NoLabelledInstances)
        ));
        let b = batch(1, None);
        assert!(matches!(
            sup_contrastive_loss(&b, &BaseLossConfig::default()),
            Err(ObjectiveError::NoLabelledInstances)
        ));
    }

    #[test]
    fn sup_loss_matches_scalar_oracle() {
        let labels = vec![0, 0, 1, 1];
        let b = batch(42, Some(labels.clone()));
        let cfg = BaseLossConfig::default();
        let loss = sup_contrastive_loss(&b, &cfg).unwrap();

        // Term-by-term evaluation: anchors with positives, full-batch
        // denominator over j != i (which contains the positive itself).
        let dot = |i: usize, j: usize| -> f64 {
            b.z.row(i).iter().zip(b.z.row(j)).map(|(a, c)| a * c).sum()
        };
        let n = labels.len();
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..n {
            let pos: Vec<usize> = (0..n)
                .filter(|&q| q != i && labels[q] == labels[i] && labels[i] >= 0)
                .collect();
            if pos.is_empty() {
                continue;
            }
            anchors += 1;
            let denom: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dot(i, j) / cfg.tau_r).exp())
                .sum();
            let mut inner = 0.0;
            for &q in &pos {
                inner += -((dot(i, q) / cfg.tau_r).exp() / denom).ln();
            }
            total += inner / pos.len() as f64;
        }
        let expected = total / anchors as f64;
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
    }

    #[test]
    fn unsup_loss_two_orthonormal_rows() {
        let z = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = EmbeddingBatch::new(z.clone(), z, None).unwrap();
        let cfg = BaseLossConfig { tau_r: 0.1, beta: 0.35 };
        let loss = unsup_contrastive_loss(&b, &cfg).unwrap();
        let e = (1.0_f64 / cfg.tau_r).exp();
        let expected = -(e / (e + 1.0)).ln();
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
    }

    #[test]
    fn unsup_loss_rejects_tiny_batch() {
        let z = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let b = EmbeddingBatch::new(z.clone(), z, None).unwrap();
        assert!(matches!(
            unsup_contrastive_loss(&b, &BaseLossConfig::default()),
            Err(ObjectiveError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn unsup_loss_invariant_under_row_permutation() {
        let b = batch(3, None);
        let cfg = BaseLossConfig::default();
        let base = unsup_contrastive_loss(&b, &cfg).unwrap();
        let perm = [5, 2, 7, 0, 3, 6, 1, 4];
        let permuted = EmbeddingBatch::new(
            b.z.take_rows(&perm),
            b.z_hat.take_rows(&perm),
            None,
        )
        .unwrap();
        let shuffled = unsup_contrastive_loss(&permuted, &cfg).unwrap();
        assert!((base - shuffled).abs() < 1e-12);
    }

    #[test]
    fn unsup_gradient_passes_finite_difference_check() {
        let cfg = BaseLossConfig::default();
        let z = unit_test_matrix(8, 16, 11);
        let z_hat = unit_test_matrix(8, 16, 12);
        let report = grad_check(
            |tape, ids| unsup_contrastive_graph(tape, ids[0], ids[1], &cfg),
            &[z, z_hat],
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn sup_gradient_passes_finite_difference_check() {
        let cfg = BaseLossConfig::default();
        let labels = vec![0, 0, 1, 1, 2, -1, -1, 2];
        let z = unit_test_matrix(8, 16, 21);
        let report = grad_check(
            |tape, ids| sup_contrastive_graph(tape, ids[0], &labels, &cfg),
            &[z],
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn base_objective_endpoints_are_exact() {
        let b = batch(9, Some(vec![0, 0, 1, 1, -1, -1, 2, 2]));
        let all_sup = base_objective(&b, &BaseLossConfig { tau_r: 0.1, beta: 1.0 }).unwrap();
        assert_eq!(all_sup.total, all_sup.sup.unwrap());
        let all_unsup = base_objective(&b, &BaseLossConfig { tau_r: 0.1, beta: 0.0 }).unwrap();
        assert_eq!(all_unsup.total, all_unsup.unsup.unwrap());
    }

    #[test]
    fn base_objective_is_linear_in_beta() {
        let b = batch(10, Some(vec![0, 0, 1, 1, 2, 2, -1, -1]));
        let at = |beta: f64| {
            base_objective(&b, &BaseLossConfig { tau_r: 0.1, beta })
                .unwrap()
                .total
        };
        let (s, u) = (at(1.0), at(0.0));
        for beta in [0.1, 0.35, 0.5, 0.9] {
            let blended = at(beta);
            assert!((blended - (beta * s + (1.0 - beta) * u)).abs() < 1e-12);
        }
    }

    #[test]
    fn base_objective_without_labels_routes_through_unsup() {
        let b = batch(4, None);
        let cfg = BaseLossConfig::default();
        let breakdown = base_objective(&b, &cfg).unwrap();
        assert!(breakdown.sup.is_none());
        assert_eq!(
            breakdown.total,
            (1.0 - cfg.beta) * breakdown.unsup.unwrap()
        );
    }

    #[test]
    fn total_objective_endpoints_and_linearity() {
        assert_eq!(total_objective(3.5, 9.9, &BlendConfig { lambda_b: 1.0 }), 3.5);
        assert_eq!(total_objective(3.5, 9.9, &BlendConfig { lambda_b: 0.0 }), 9.9);
        for lambda in [0.1, 0.4, 0.75] {
            let v = total_objective(2.0, 5.0, &BlendConfig { lambda_b: lambda });
            assert!((v - (lambda * 2.0 + (1.0 - lambda) * 5.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn losses_are_non_negative_on_unit_norm_batches() {
        let cfg = BaseLossConfig::default();
        for seed in 0..20 {
            let b = batch(seed, Some(vec![0, 0, 1, 1, 2, 2, 3, 3]));
            assert!(sup_contrastive_loss(&b, &cfg).unwrap() >= 0.0);
            assert!(unsup_contrastive_loss(&b, &cfg).unwrap() >= 0.0);
        }
    }

    #[test]
    fn losses_invariant_under_joint_orthogonal_transform() {
        let cfg = BaseLossConfig::default();
        let b = batch(31, Some(vec![0, 0, 1, 1, 2, 2, 3, 3]));
        let q = random_orthonormal_rows(16, 16, 77);
        let rotate = |m: &Matrix| {
            crate::diffmath::l2_normalize_rows(
                &Matrix::from_fn(m.rows(), 16, |r, c| {
                    (0..16).map(|k| m.get(r, k) * q.get(k, c)).sum()
                }),
            )
            .unwrap()
        };
        let rotated =
            EmbeddingBatch::new(rotate(&b.z), rotate(&b.z_hat), b.labels.clone()).unwrap();
        let s0 = sup_contrastive_loss(&b, &cfg).unwrap();
        let s1 = sup_contrastive_loss(&rotated, &cfg).unwrap();
        assert!((s0 - s1).abs() < 1e-9, "{s0} vs {s1}");
        let u0 = unsup_contrastive_loss(&b, &cfg).unwrap();
        let u1 = unsup_contrastive_loss(&rotated, &cfg).unwrap();
        assert!((u0 - u1).abs() < 1e-9, "{u0} vs {u1}");
    }

    #[test]
    fn sup_anchor_weights_ignore_unlabelled_denominator_members() {
        // An unlabelled row must appear in denominators but never as an anchor
        // or positive; gradient still flows to it through the negatives.
        let labels = vec![0, 0, -1];
        let z = unit_test_matrix(3, 8, 5);
        let cfg = BaseLossConfig::default();
        let (_, grads) = value_and_gradient(
            |tape, ids| sup_contrastive_graph(tape, ids[0], &labels, &cfg),
            std::slice::from_ref(&z),
        )
        .unwrap();
        let unlabelled_grad_norm: f64 = grads[0].row(2).iter().map(|g| g * g).sum();
        assert!(unlabelled_grad_norm > 0.0);
    }
}
