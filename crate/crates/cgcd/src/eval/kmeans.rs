//! Lloyd k-means with deterministic seeding, maximin (farthest-first) or
//! random init, and best-of-restarts selection by within-cluster sum of
//! squares.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::diffmath::Matrix;
use crate::rng::derive_seed_indexed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmeansInit {
    Maximin,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub init: KmeansInit,
}

impl KmeansConfig {
    pub fn with_k(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 100,
            restarts: 8,
            seed,
            init: KmeansInit::Maximin,
        }
    }
}

/// Hard cluster assignment over a feature matrix.
#[derive(Clone, Debug)]
pub struct ClusterAssignment {
    /// Cluster id in [0, k) per instance.
    pub labels: Vec<usize>,
    pub k: usize,
    pub centroids: Matrix,
    /// Within-cluster sum of squares of the winning restart.
    pub inertia: f64,
    /// Objective recorded after each Lloyd assignment step (winning restart).
    pub inertia_trace: Vec<f64>,
}

pub fn kmeans_cluster(
    features: &Matrix,
    cfg: &KmeansConfig,
) -> Result<ClusterAssignment, EvalError> {
    let n = features.rows();
    if n == 0 {
        return Err(EvalError::EmptyInput);
    }
    if cfg.k == 0 || cfg.k > n {
        return Err(EvalError::KTooLarge { k: cfg.k, n });
    }
    if cfg.restarts == 0 {
        return Err(EvalError::InvalidConfig("restarts must be >= 1".into()));
    }

    let mut best: Option<ClusterAssignment> = None;
    for restart in 0..cfg.restarts {
        let seed = derive_seed_indexed(cfg.seed, "kmeans-restart", restart as u64);
        let run = lloyd(features, cfg, seed);
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia, // strict: ties keep the earliest restart
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn lloyd(features: &Matrix, cfg: &KmeansConfig, seed: u64) -> ClusterAssignment {
    let n = features.rows();
    let d = features.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_centroids(features, cfg, &mut rng);
    let mut labels = vec![0usize; n];
    let mut trace = Vec::new();

    for _ in 0..cfg.max_iters {
        let mut changed = false;
        let mut objective = 0.0;
        for i in 0..n {
            let (c, dist) = nearest(features.row(i), &centroids);
            objective += dist;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        trace.push(objective);
        if !changed && trace.len() > 1 {
            break;
        }

        let mut sums = Matrix::zeros(cfg.k, d);
        let mut counts = vec![0usize; cfg.k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, &x) in sums.row_mut(labels[i]).iter_mut().zip(features.row(i)) {
                *s += x;
            }
        }
        for c in 0..cfg.k {
            if counts[c] == 0 {
                // Relocate an empty cluster onto the point farthest from its
                // current centroid (lowest index on ties).
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(features.row(a), centroids.row(labels[a]));
                        let db = sq_dist(features.row(b), centroids.row(labels[b]));
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .unwrap();
                let row: Vec<f64> = features.row(far).to_vec();
                centroids.row_mut(c).copy_from_slice(&row);
                labels[far] = c;
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }

    let mut inertia = 0.0;
    for i in 0..n {
        let (c, dist) = nearest(features.row(i), &centroids);
        labels[i] = c;
        inertia += dist;
    }
    ClusterAssignment {
        labels,
        k: cfg.k,
        centroids,
        inertia,
        inertia_trace: trace,
    }
}

fn init_centroids(features: &Matrix, cfg: &KmeansConfig, rng: &mut ChaCha8Rng) -> Matrix {
    let n = features.rows();
    let mut chosen: Vec<usize> = Vec::with_capacity(cfg.k);
    match cfg.init {
        KmeansInit::Random => {
            let mut pool: Vec<usize> = (0..n).collect();
            for _ in 0..cfg.k {
                let pick = rng.random_range(0..pool.len());
                chosen.push(pool.swap_remove(pick));
            }
        }
        KmeansInit::Maximin => {
            chosen.push(rng.random_range(0..n));
            while chosen.len() < cfg.k {
                let next = (0..n)
                    .filter(|i| !chosen.contains(i))
                    .max_by(|&a, &b| {
                        let da = min_dist_to(features, a, &chosen);
                        let db = min_dist_to(features, b, &chosen);
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .expect("k <= n leaves candidates");
                chosen.push(next);
            }
        }
    }
    let mut centroids = Matrix::zeros(cfg.k, features.cols());
    for (c, &i) in chosen.iter().enumerate() {
        let row: Vec<f64> = features.row(i).to_vec();
        centroids.row_mut(c).copy_from_slice(&row);
    }
    centroids
}

fn min_dist_to(features: &Matrix, point: usize, chosen: &[usize]) -> f64 {
    chosen
        .iter()
        .map(|&c| sq_dist(features.row(point), features.row(c)))
        .fold(f64::INFINITY, f64::min)
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for c in 0..centroids.rows() {
        let dist = sq_dist(point, centroids.row(c));
        if dist < best_dist {
            best = c;
            best_dist = dist;
        }
    }
    (best, best_dist)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
