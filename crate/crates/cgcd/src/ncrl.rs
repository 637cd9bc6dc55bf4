//! Neighborhood-commonality representation learning.
//!
//! Step 1 finds each instance's nearest neighbors under cosine similarity and
//! averages them into a local commonality. Step 2 self-distills: the sharpened
//! distribution of view one over the commonalities supervises the
//! temperature-1 distribution of view two. Gradients flow only through the
//! supervised branch; the target distribution and the commonality matrix are
//! gradient-blocked (a config flag unblocks them for study).

use serde::{Deserialize, Serialize};

use crate::diffmath::{cosine_similarity_matrix, DiffError, Matrix, NodeId, Tape};
use crate::eval::{kmeans_cluster, KmeansConfig, KmeansInit};
use crate::objectives::LOG_FLOOR;
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum NcrlError {
    #[error("k = {k} must be smaller than the batch size {batch}")]
    KTooLarge { k: usize, batch: usize },
    #[error("instance {index} has an empty neighbor list")]
    EmptyNeighborList { index: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid ncrl config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Math(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSelection {
    FixedK,
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Commonality,
    RandomPrototypes,
    KmeansCentroids,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NcrlConfig {
    pub k: usize,
    pub selection: NeighborSelection,
    /// Similarity threshold, consulted only when `selection = threshold`.
    pub alpha: f64,
    /// Sharpening temperature for the target distribution.
    pub tau: f64,
    pub prediction_source: PredictionSource,
    pub include_self: bool,
    /// Cluster count for the `kmeans_centroids` prediction source.
    pub kmeans_clusters: usize,
    /// Block gradients through the target distribution and the prototypes.
    pub block_target_grad: bool,
}

impl Default for NcrlConfig {
    fn default() -> Self {
        Self {
            k: 5,
            selection: NeighborSelection::FixedK,
            alpha: 0.9,
            tau: 0.07,
            prediction_source: PredictionSource::Commonality,
            include_self: false,
            kmeans_clusters: 10,
            block_target_grad: true,
        }
    }
}

impl NcrlConfig {
    pub fn validate(&self) -> Result<(), NcrlError> {
        if self.k == 0 {
            return Err(NcrlError::InvalidConfig("k must be >= 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(NcrlError::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.selection == NeighborSelection::Threshold && !(-1.0 < self.alpha && self.alpha <= 1.0)
        {
            return Err(NcrlError::InvalidConfig(format!(
                "alpha must lie in (-1, 1], got {}",
                self.alpha
            )));
        }
        if self.prediction_source == PredictionSource::KmeansCentroids && self.kmeans_clusters == 0 {
            return Err(NcrlError::InvalidConfig("kmeans_clusters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Neighborhoods of one mini-batch: cosine similarities, per-instance
/// neighbor lists, and local commonalities (plain neighbor means).
#[derive(Clone, Debug)]
pub struct CommonalitySet {
    pub omega: Matrix,
    pub neighbor_indices: Vec<Vec<usize>>,
    pub mu: Matrix,
}

/// Sharpened target distribution `p` (view one) and trainable distribution
/// `p_hat` (view two) over the prototype rows.
#[derive(Clone, Debug)]
pub struct PredictionPair {
    pub p: Matrix,
    pub p_hat: Matrix,
}

/// Neighbor selection over a square similarity matrix.
///
/// `fixed_k`: the k most similar instances, anchor excluded unless
/// `include_self`, ties broken toward the lowest index. `threshold`: all
/// instances with similarity >= alpha, falling back to the single nearest
/// neighbor when the set is empty.
pub fn select_neighbors(omega: &Matrix, cfg: &NcrlConfig) -> Result<Vec<Vec<usize>>, NcrlError> {
    cfg.validate()?;
    let n = omega.rows();
    if omega.cols() != n {
        return Err(NcrlError::ShapeMismatch(format!(
            "omega is {}x{}, expected square",
            omega.rows(),
            omega.cols()
        )));
    }
    if cfg.selection == NeighborSelection::FixedK && cfg.k >= n {
        return Err(NcrlError::KTooLarge { k: cfg.k, batch: n });
    }

    let mut lists = Vec::with_capacity(n);
    for i in 0..n {
        let mut candidates: Vec<usize> = (0..n).filter(|&j| cfg.include_self || j != i).collect();
        // similarity descending, index ascending on ties
        candidates.sort_by(|&a, &b| {
            omega
                .get(i, b)
                .total_cmp(&omega.get(i, a))
                .then(a.cmp(&b))
        });
        let list = match cfg.selection {
            NeighborSelection::FixedK => candidates[..cfg.k].to_vec(),
            NeighborSelection::Threshold => {
                let picked: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&j| omega.get(i, j) >= cfg.alpha)
                    .collect();
                if picked.is_empty() {
                    vec![candidates[0]]
                } else {
                    picked
                }
            }
        };
        lists.push(list);
    }
    Ok(lists)
}

/// Local commonalities: `mu_i` is the arithmetic mean of the listed neighbor
/// rows. Rows are intentionally not re-normalized.
pub fn compute_commonalities(z: &Matrix, indices: &[Vec<usize>]) -> Result<Matrix, NcrlError> {
    if indices.len() != z.rows() {
        return Err(NcrlError::ShapeMismatch(format!(
            "{} neighbor lists for {} rows",
            indices.len(),
            z.rows()
        )));
    }
    let mut mu = Matrix::zeros(z.rows(), z.cols());
    for (i, list) in indices.iter().enumerate() {
        if list.is_empty() {
            return Err(NcrlError::EmptyNeighborList { index: i });
        }
        let inv = 1.0 / list.len() as f64;
        for &q in list {
            for (m, &v) in mu.row_mut(i).iter_mut().zip(z.row(q)) {
                *m += v * inv;
            }
        }
    }
    Ok(mu)
}

/// Cosine similarities, neighbor lists, and commonalities in one call.
pub fn commonality_set(z: &Matrix, cfg: &NcrlConfig) -> Result<CommonalitySet, NcrlError> {
    let omega = cosine_similarity_matrix(z)?;
    let neighbor_indices = select_neighbors(&omega, cfg)?;
    let mu = compute_commonalities(z, &neighbor_indices)?;
    Ok(CommonalitySet {
        omega,
        neighbor_indices,
        mu,
    })
}

/// The prototype rows the prediction distributions are taken over:
/// commonalities by default, or the random / k-means ablation variants.
pub fn prototype_matrix(
    z: &Matrix,
    mu: &Matrix,
    cfg: &NcrlConfig,
    seed: u64,
) -> Result<Matrix, NcrlError> {
    match cfg.prediction_source {
        PredictionSource::Commonality => Ok(mu.clone()),
        PredictionSource::RandomPrototypes => Ok(rng::unit_test_matrix(
            z.rows(),
            z.cols(),
            rng::derive_seed(seed, "ncrl-random-prototypes"),
        )),
        PredictionSource::KmeansCentroids => {
            let clusters = cfg.kmeans_clusters.min(z.rows());
            let km = kmeans_cluster(
                z,
                &KmeansConfig {
                    k: clusters,
                    max_iters: 10,
                    restarts: 1,
                    seed: rng::derive_seed(seed, "ncrl-kmeans-prototypes"),
                    init: KmeansInit::Maximin,
                },
            )
            .map_err(|e| NcrlError::InvalidConfig(e.to_string()))?;
            Ok(km.centroids)
        }
    }
}

/// Prediction distributions of both views over the prototypes: `p` sharpened
/// at `cfg.tau`, `p_hat` at temperature 1.
pub fn prediction_distribution(
    z: &Matrix,
    z_hat: &Matrix,
    mu: &Matrix,
    cfg: &NcrlConfig,
    seed: u64,
) -> Result<PredictionPair, NcrlError> {
    cfg.validate()?;
    if z.shape() != z_hat.shape() {
        return Err(NcrlError::ShapeMismatch(format!(
            "views {:?} vs {:?}",
            z.shape(),
            z_hat.shape()
        )));
    }
    let prototypes = prototype_matrix(z, mu, cfg, seed)?;
    let mut tape = Tape::new();
    let z_id = tape.constant(z);
    let z_hat_id = tape.constant(z_hat);
    let proto_id = tape.constant(&prototypes);
    let logits = tape.matmul_nt(z_id, proto_id)?;
    let p = tape.softmax_rows(logits, cfg.tau)?;
    let logits_hat = tape.matmul_nt(z_hat_id, proto_id)?;
    let p_hat = tape.softmax_rows(logits_hat, 1.0)?;
    Ok(PredictionPair {
        p: tape.value(p).clone(),
        p_hat: tape.value(p_hat).clone(),
    })
}

/// Cross-entropy of the trainable distribution against the sharpened target:
/// `-(1/|B|) sum_i sum_j p_ij ln p_hat_ij`, log clamped at 1e-12.
pub fn ncrl_loss(pair: &PredictionPair) -> f64 {
    let n = pair.p.rows() as f64;
    let mut total = 0.0;
    for (p, ph) in pair.p.data().iter().zip(pair.p_hat.data()) {
        total += p * ph.max(LOG_FLOOR).ln();
    }
    -total / n
}

/// Builds the NCRL loss on a tape. Neighbor selection is discrete and uses
/// the current values of `z`; with `block_target_grad` both the target
/// distribution and the prototypes are stop-gradiented, so only `z_hat`
/// receives gradient.
pub fn ncrl_graph(
    tape: &mut Tape,
    z: NodeId,
    z_hat: NodeId,
    cfg: &NcrlConfig,
    seed: u64,
) -> Result<NodeId, DiffError> {
    let n = tape.value(z).rows();
    let proto_id = match cfg.prediction_source {
        PredictionSource::Commonality => {
            let z_values = tape.value(z).clone();
            let omega = cosine_similarity_matrix(&z_values)?;
            let lists = select_neighbors(&omega, cfg)
                .map_err(|e| DiffError::ShapeMismatch(e.to_string()))?;
            let mut averaging = Matrix::zeros(n, n);
            for (i, list) in lists.iter().enumerate() {
                let w = 1.0 / list.len() as f64;
                for &q in list {
                    averaging.set(i, q, w);
                }
            }
            let avg = tape.constant(&averaging);
            let mu = tape.matmul(avg, z)?;
            if cfg.block_target_grad {
                tape.stop_gradient(mu)
            } else {
                mu
            }
        }
        // Ablation prototypes never carry gradient.
        _ => {
            let z_values = tape.value(z).clone();
            let mu = Matrix::zeros(0, 0);
            let prototypes = prototype_matrix(&z_values, &mu, cfg, seed)
                .map_err(|e| DiffError::ShapeMismatch(e.to_string()))?;
            tape.constant(&prototypes)
        }
    };

    let target_logits = tape.matmul_nt(z, proto_id)?;
    let p_raw = tape.softmax_rows(target_logits, cfg.tau)?;
    let p = if cfg.block_target_grad {
        tape.stop_gradient(p_raw)
    } else {
        p_raw
    };
    let logits_hat = tape.matmul_nt(z_hat, proto_id)?;
    let p_hat = tape.softmax_rows(logits_hat, 1.0)?;
    let log_p_hat = tape.ln_clamped(p_hat, LOG_FLOOR);
    let weighted = tape.mul(p, log_p_hat)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::{grad_check, value_and_gradient};
    use crate::rng::unit_test_matrix;

    #[test]
    fn two_instances_select_each_other() {
        let z = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = NcrlConfig { k: 1, ..NcrlConfig::default() };
        let set = commonality_set(&z, &cfg).unwrap();
        assert_eq!(set.neighbor_indices, vec![vec![1], vec![0]]);
    }

    #[test]
    fn ties_break_toward_lowest_index() {
        // rows 1, 2, 3 are duplicates; row 0's top-2 are 1 then 2
        let z = Matrix::from_vec(
            4,
            2,
            vec![1.0, 0.0, 0.6, 0.8, 0.6, 0.8, 0.6, 0.8],
        )
        .unwrap();
        let cfg = NcrlConfig { k: 2, ..NcrlConfig::default() };
        let lists = select_neighbors(&cosine_similarity_matrix(&z).unwrap(), &cfg).unwrap();
        assert_eq!(lists[0], vec![1, 2]);
        assert_eq!(lists[1], vec![2, 3]);
    }

    #[test]
    fn threshold_selection_matches_scalar_filter() {
        let z = unit_test_matrix(6, 4, 81);
        let omega = cosine_similarity_matrix(&z).unwrap();
        let cfg = NcrlConfig {
            selection: NeighborSelection::Threshold,
            alpha: 0.9,
            ..NcrlConfig::default()
        };
        let lists = select_neighbors(&omega, &cfg).unwrap();
        for i in 0..6 {
            let expected: Vec<usize> =
                (0..6).filter(|&j| j != i && omega.get(i, j) >= 0.9).collect();
            if expected.is_empty() {
                assert_eq!(lists[i].len(), 1, "fallback to single nearest neighbor");
            } else {
                let mut got = lists[i].clone();
                got.sort_unstable();
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn k_at_batch_size_is_rejected() {
        let z = unit_test_matrix(4, 3, 2);
        let omega = cosine_similarity_matrix(&z).unwrap();
        let cfg = NcrlConfig { k: 4, ..NcrlConfig::default() };
        assert!(matches!(
            select_neighbors(&omega, &cfg),
            Err(NcrlError::KTooLarge { k: 4, batch: 4 })
        ));
    }

    #[test]
    fn commonality_of_single_neighbor_is_that_row() {
        let z = unit_test_matrix(3, 5, 7);
        let mu = compute_commonalities(&z, &[vec![2], vec![0], vec![1]]).unwrap();
        assert_eq!(mu.row(0), z.row(2));
        assert_eq!(mu.row(1), z.row(0));
    }

    #[test]
    fn identical_rows_yield_that_row() {
        let row = vec![0.6, 0.8];
        let z = Matrix::from_vec(3, 2, [row.clone(), row.clone(), row.clone()].concat()).unwrap();
        let cfg = NcrlConfig { k: 2, ..NcrlConfig::default() };
        let set = commonality_set(&z, &cfg).unwrap();
        for i in 0..3 {
            for (a, b) in set.mu.row(i).iter().zip(&row) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pair_mean_matches_scalar_oracle() {
        let z = unit_test_matrix(4, 3, 10);
        let mu = compute_commonalities(&z, &[vec![1, 2], vec![0, 3], vec![0, 1], vec![1, 2]])
            .unwrap();
        for c in 0..3 {
            let expected = (z.get(1, c) + z.get(2, c)) / 2.0;
            assert!((mu.get(0, c) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_list_is_rejected() {
        let z = unit_test_matrix(2, 3, 1);
        assert!(matches!(
            compute_commonalities(&z, &[vec![1], vec![]]),
            Err(NcrlError::EmptyNeighborList { index: 1 })
        ));
    }

    #[test]
    fn prediction_rows_sum_to_one() {
        let z = unit_test_matrix(8, 16, 3);
        let z_hat = unit_test_matrix(8, 16, 4);
        let cfg = NcrlConfig::default();
        let set = commonality_set(&z, &cfg).unwrap();
        let pair = prediction_distribution(&z, &z_hat, &set.mu, &cfg, 0).unwrap();
        for m in [&pair.p, &pair.p_hat] {
            for r in 0..m.rows() {
                let sum: f64 = m.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_views_at_unit_tau_agree() {
        let z = unit_test_matrix(6, 8, 5);
        let cfg = NcrlConfig { tau: 1.0, k: 3, ..NcrlConfig::default() };
        let set = commonality_set(&z, &cfg).unwrap();
        let pair = prediction_distribution(&z, &z, &set.mu, &cfg, 0).unwrap();
        for (a, b) in pair.p.data().iter().zip(pair.p_hat.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sharpened_distribution_matches_softmax_oracle() {
        let z = unit_test_matrix(5, 6, 9);
        let z_hat = unit_test_matrix(5, 6, 10);
        let cfg = NcrlConfig { k: 2, ..NcrlConfig::default() };
        assert_eq!(cfg.tau, 0.07);
        let set = commonality_set(&z, &cfg).unwrap();
        let pair = prediction_distribution(&z, &z_hat, &set.mu, &cfg, 0).unwrap();
        for i in 0..5 {
            let logits: Vec<f64> = (0..5)
                .map(|j| {
                    z.row(i)
                        .iter()
                        .zip(set.mu.row(j))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / cfg.tau).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for j in 0..5 {
                assert!((pair.p.get(i, j) - exps[j] / sum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_distillation_of_identical_pair_is_row_entropy() {
        let z = unit_test_matrix(6, 8, 5);
        let cfg = NcrlConfig { tau: 1.0, k: 3, ..NcrlConfig::default() };
        let set = commonality_set(&z, &cfg).unwrap();
        let pair = prediction_distribution(&z, &z, &set.mu, &cfg, 0).unwrap();
        let loss = ncrl_loss(&pair);
        let entropy = -pair
            .p
            .data()
            .iter()
            .map(|&p| p * p.max(LOG_FLOOR).ln())
            .sum::<f64>()
            / 6.0;
        assert!((loss - entropy).abs() < 1e-12);
    }

    #[test]
    fn one_hot_target_against_uniform_is_log_batch() {
        let n = 4;
        let p = Matrix::eye(n, 1.0);
        let p_hat = Matrix::from_fn(n, n, |_, _| 1.0 / n as f64);
        let loss = ncrl_loss(&PredictionPair { p, p_hat });
        assert!((loss - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_flows_only_through_second_view() {
        let z = unit_test_matrix(8, 16, 21);
        let z_hat = unit_test_matrix(8, 16, 22);
        let cfg = NcrlConfig::default();

        // finite differences w.r.t. z_hat, with z captured as a constant
        let z_const = z.clone();
        let report = grad_check(
            |tape, ids| {
                let zc = tape.constant(&z_const);
                ncrl_graph(tape, zc, ids[0], &cfg, 0)
            },
            std::slice::from_ref(&z_hat),
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);

        // the target path carries exactly zero gradient
        let (_, grads) = value_and_gradient(
            |tape, ids| ncrl_graph(tape, ids[0], ids[1], &cfg, 0),
            &[z, z_hat],
        )
        .unwrap();
        assert!(grads[0].data().iter().all(|&g| g == 0.0));
        assert!(grads[1].data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn unblocked_target_carries_gradient() {
        let z = unit_test_matrix(8, 16, 31);
        let z_hat = unit_test_matrix(8, 16, 32);
        let cfg = NcrlConfig { block_target_grad: false, ..NcrlConfig::default() };
        let (_, grads) = value_and_gradient(
            |tape, ids| ncrl_graph(tape, ids[0], ids[1], &cfg, 0),
            &[z, z_hat],
        )
        .unwrap();
        assert!(grads[0].data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn fixed_k_lists_have_exactly_k_entries_excluding_self() {
        let z = unit_test_matrix(12, 6, 44);
        let cfg = NcrlConfig { k: 4, ..NcrlConfig::default() };
        let lists = select_neighbors(&cosine_similarity_matrix(&z).unwrap(), &cfg).unwrap();
        for (i, list) in lists.iter().enumerate() {
            assert_eq!(list.len(), 4);
            assert!(!list.contains(&i));
        }
    }

    #[test]
    fn selection_is_scale_invariant() {
        let raw = crate::rng::test_matrix(9, 5, 17);
        let scaled = raw.map(|v| v * 37.5);
        let cfg = NcrlConfig { k: 3, ..NcrlConfig::default() };
        let a = select_neighbors(&cosine_similarity_matrix(&raw).unwrap(), &cfg).unwrap();
        let b = select_neighbors(&cosine_similarity_matrix(&scaled).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_respects_gibbs_inequality() {
        for seed in 0..10 {
            let z = unit_test_matrix(8, 16, 100 + seed);
            let z_hat = unit_test_matrix(8, 16, 200 + seed);
            let cfg = NcrlConfig::default();
            let set = commonality_set(&z, &cfg).unwrap();
            let pair = prediction_distribution(&z, &z_hat, &set.mu, &cfg, 0).unwrap();
            let loss = ncrl_loss(&pair);
            let entropy = -pair
                .p
                .data()
                .iter()
                .map(|&p| p * p.max(LOG_FLOOR).ln())
                .sum::<f64>()
                / 8.0;
            assert!(loss >= entropy - 1e-9, "loss {loss} < entropy {entropy}");
        }
    }

    #[test]
    fn smaller_tau_sharpens_every_row() {
        let z = unit_test_matrix(7, 9, 3);
        let z_hat = unit_test_matrix(7, 9, 4);
        let base = NcrlConfig { k: 3, ..NcrlConfig::default() };
        let set = commonality_set(&z, &base).unwrap();
        let sharp = NcrlConfig { tau: base.tau / 2.0, ..base.clone() };
        let coarse = prediction_distribution(&z, &z_hat, &set.mu, &base, 0).unwrap();
        let sharper = prediction_distribution(&z, &z_hat, &set.mu, &sharp, 0).unwrap();
        for r in 0..7 {
            let max_coarse = coarse.p.row(r).iter().cloned().fold(0.0, f64::max);
            let max_sharp = sharper.p.row(r).iter().cloned().fold(0.0, f64::max);
            assert!(max_sharp > max_coarse, "row {r}: {max_sharp} <= {max_coarse}");
        }
    }

    #[test]
    fn ablation_sources_produce_valid_distributions() {
        let z = unit_test_matrix(10, 8, 55);
        let z_hat = unit_test_matrix(10, 8, 56);
        for source in [PredictionSource::RandomPrototypes, PredictionSource::KmeansCentroids] {
            let cfg = NcrlConfig {
                prediction_source: source,
                kmeans_clusters: 4,
                ..NcrlConfig::default()
            };
            let set = commonality_set(&z, &cfg).unwrap();
            let pair = prediction_distribution(&z, &z_hat, &set.mu, &cfg, 9).unwrap();
            for r in 0..pair.p.rows() {
                let sum: f64 = pair.p.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
            // prototypes are constants on the tape, so z gets no gradient
            let (_, grads) = value_and_gradient(
                |tape, ids| ncrl_graph(tape, ids[0], ids[1], &cfg, 9),
                &[z.clone(), z_hat.clone()],
            )
            .unwrap();
            assert!(grads[0].data().iter().all(|&g| g == 0.0));
        }
    }
}
