//! Synthetic continual-discovery streams: unit-variance Gaussian clusters
//! around class means spaced by `class_separation`. Means are orthonormalized
//! random directions while the class count allows it, so pairwise mean
//! distances concentrate at `class_separation * sqrt(2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SessionData, SessionError, SessionStream, StreamConfig, TestSplit, TrainSplit};
use crate::diffmath::Matrix;
use crate::rng::{derive_seed, random_orthonormal_rows};

pub fn generate_synthetic_stream(cfg: &StreamConfig) -> Result<SessionStream, SessionError> {
    cfg.validate()?;
    let total_classes = cfg.total_classes();
    let directions = random_orthonormal_rows(
        total_classes,
        cfg.ambient_dim,
        derive_seed(cfg.seed, "class-means"),
    );
    let mut parent_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "novel-parents"));
    let mut unit_means: Vec<Vec<f64>> = Vec::with_capacity(total_classes);
    for class in 0..total_classes {
        let fresh: Vec<f64> = directions.row(class).to_vec();
        if class < cfg.base_classes {
            unit_means.push(fresh);
            continue;
        }
        // Lean each novel mean toward a previously seen class: novel arrivals
        // are fine-grained refinements of known concepts. The fresh direction
        // is orthogonal to every earlier one (while the class count allows),
        // so the combination stays unit-norm.
        let seen = cfg.base_classes
            + ((class - cfg.base_classes) / cfg.novel_classes_per_session)
                * cfg.novel_classes_per_session;
        let parent = parent_rng.random_range(0..seen);
        let affinity = cfg.novel_affinity;
        let ortho = (1.0 - affinity * affinity).sqrt();
        let mut v: Vec<f64> = unit_means[parent]
            .iter()
            .zip(&fresh)
            .map(|(p, f)| affinity * p + ortho * f)
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        unit_means.push(v);
    }
    let means = Matrix::from_fn(total_classes, cfg.ambient_dim, |r, c| {
        unit_means[r][c] * cfg.class_separation
    });

    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "instances"));
    let mut label_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "labelled-mask"));
    let mut next_id = 0u64;

    // Instance coordinates are rounded through f32 so the on-disk dataset
    // format (32-bit floats) round-trips without loss.
    let mut draw_block = |class: usize, count: usize, ids: &mut Vec<u64>, labels: &mut Vec<i64>| {
        let mut data = Vec::with_capacity(count * cfg.ambient_dim);
        for _ in 0..count {
            for d in 0..cfg.ambient_dim {
                let eps: f64 = noise.sample(StandardNormal);
                data.push((means.get(class, d) + eps) as f32 as f64);
            }
            ids.push(next_id);
            labels.push(class as i64);
            next_id += 1;
        }
        Matrix::from_raw(count, cfg.ambient_dim, data)
    };

    let mut sessions = Vec::with_capacity(cfg.sessions + 1);
    let mut label_space: Vec<i64> = Vec::new();

    for session in 0..=cfg.sessions {
        let novel: Vec<usize> = if session == 0 {
            (0..cfg.base_classes).collect()
        } else {
            let start = cfg.base_classes + (session - 1) * cfg.novel_classes_per_session;
            (start..start + cfg.novel_classes_per_session).collect()
        };
        let seen: Vec<i64> = label_space.clone();
        label_space.extend(novel.iter().map(|&c| c as i64));
        label_space.sort_unstable();

        let mut train_parts = Vec::new();
        let mut train_ids = Vec::new();
        let mut train_labels = Vec::new();
        let mut test_parts = Vec::new();
        let mut test_ids = Vec::new();
        let mut test_labels = Vec::new();

        for &class in &novel {
            train_parts.push(draw_block(class, cfg.train_per_class, &mut train_ids, &mut train_labels));
            test_parts.push(draw_block(class, cfg.test_per_class, &mut test_ids, &mut test_labels));
        }
        if session > 0 {
            for &class in &seen {
                train_parts.push(draw_block(
                    class as usize,
                    cfg.seen_per_class_per_session,
                    &mut train_ids,
                    &mut train_labels,
                ));
            }
        }

        let train_instances = Matrix::vstack(&train_parts.iter().collect::<Vec<_>>())?;
        let test_instances = Matrix::vstack(&test_parts.iter().collect::<Vec<_>>())?;

        let labelled = if session == 0 {
            labelled_mask(&train_labels, cfg.labelled_fraction, &mut label_rng)
        } else {
            vec![false; train_labels.len()]
        };

        sessions.push(SessionData {
            id: session,
            novel_classes: novel.iter().map(|&c| c as i64).collect(),
            label_space: label_space.clone(),
            train: TrainSplit::new(train_instances, train_ids, labelled, train_labels),
            test: TestSplit {
                instances: test_instances,
                instance_ids: test_ids,
                labels: test_labels,
            },
        });
    }

    let stream = SessionStream {
        ambient_dim: cfg.ambient_dim,
        sessions,
    };
    stream.validate()?;
    Ok(stream)
}

/// Marks ceil(fraction * block) instances labelled within each class block,
/// choosing which via a seeded shuffle.
fn labelled_mask(labels: &[i64], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = vec![false; labels.len()];
    let mut start = 0;
    while start < labels.len() {
        let class = labels[start];
        let mut end = start;
        while end < labels.len() && labels[end] == class {
            end += 1;
        }
        let block = end - start;
        let count = ((fraction * block as f64).ceil() as usize).clamp(1, block);
        let mut indices: Vec<usize> = (start..end).collect();
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        for &i in indices.iter().take(count) {
            mask[i] = true;
        }
        start = end;
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_sessions_make_four_strictly_nested_snapshots() {
        let stream = generate_synthetic_stream(&StreamConfig::desk()).unwrap();
        assert_eq!(stream.num_sessions(), 4);
        for t in 1..4 {
            let prev = stream.label_space(t - 1);
            let cur = stream.label_space(t);
            assert!(prev.len() < cur.len());
            assert!(prev.iter().all(|c| cur.contains(c)));
        }
        assert_eq!(stream.label_space(3).len(), 14);
    }

    #[test]
    fn train_sets_are_disjoint_across_sessions() {
        let stream = generate_synthetic_stream(&StreamConfig::desk()).unwrap();
        let mut ids = std::collections::BTreeSet::new();
        for s in &stream.sessions {
            for &id in &s.train.instance_ids {
                assert!(ids.insert(id), "instance {id} appears twice");
            }
        }
    }

    #[test]
    fn cifar100_shaped_config_matches_published_counts() {
        let cfg = StreamConfig::paper_cifar100();
        assert_eq!(cfg.base_classes, 80);
        assert_eq!(cfg.novel_classes_per_session, 5);
        assert_eq!(cfg.sessions, 4);
        // 100 classes over 5 label-space snapshots in total
        assert_eq!(cfg.total_classes(), 100);
        let small = StreamConfig {
            train_per_class: 4,
            test_per_class: 2,
            seen_per_class_per_session: 1,
            ambient_dim: 128,
            ..cfg
        };
        let stream = generate_synthetic_stream(&small).unwrap();
        assert_eq!(stream.num_sessions(), 5);
        assert_eq!(stream.label_space(4).len(), 100);
        for t in 0..5 {
            assert_eq!(
                stream.label_space(t).len(),
                80 + 5 * t,
                "session {t} class count"
            );
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = StreamConfig {
            train_per_class: 6,
            test_per_class: 3,
            ..StreamConfig::desk()
        };
        let a = generate_synthetic_stream(&cfg).unwrap();
        let b = generate_synthetic_stream(&cfg).unwrap();
        for (sa, sb) in a.sessions.iter().zip(&b.sessions) {
            assert_eq!(sa.train.instances.data(), sb.train.instances.data());
            assert_eq!(sa.test.instances.data(), sb.test.instances.data());
            assert_eq!(sa.train.open_labels, sb.train.open_labels);
        }
    }

    #[test]
    fn incremental_sessions_hide_every_label() {
        let stream = generate_synthetic_stream(&StreamConfig {
            train_per_class: 5,
            test_per_class: 2,
            seen_per_class_per_session: 2,
            ..StreamConfig::desk()
        })
        .unwrap();
        for s in &stream.sessions[1..] {
            assert!(s.train.open_labels.iter().all(|&l| l == -1));
            assert!(s.train.labelled.iter().all(|&b| !b));
            assert_eq!(s.train.hidden_labels().read_count(), 0);
        }
    }

    #[test]
    fn labelled_fraction_marks_per_class_counts() {
        let stream = generate_synthetic_stream(&StreamConfig {
            labelled_fraction: 0.5,
            train_per_class: 10,
            test_per_class: 2,
            ..StreamConfig::desk()
        })
        .unwrap();
        let base = &stream.sessions[0].train;
        assert_eq!(base.labelled_count(), 8 * 5);
        // unlabelled rows expose -1 even though the true label is stored
        for (i, &vis) in base.labelled.iter().enumerate() {
            if !vis {
                assert_eq!(base.open_labels[i], -1);
            }
        }
    }

    #[test]
    fn class_mean_separation_tracks_config() {
        let cfg = StreamConfig::desk();
        let stream = generate_synthetic_stream(&cfg).unwrap();
        // Empirical class means of base training data should sit near
        // class_separation * sqrt(2) apart for orthogonal directions.
        let base = &stream.sessions[0].train;
        let labels = base.hidden_labels().reveal();
        let mut means = vec![vec![0.0; cfg.ambient_dim]; cfg.base_classes];
        let mut counts = vec![0usize; cfg.base_classes];
        for (row, &label) in labels.iter().enumerate() {
            counts[label as usize] += 1;
            for (acc, &v) in means[label as usize].iter_mut().zip(base.instances.row(row)) {
                *acc += v;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= c as f64;
            }
        }
        let expected = cfg.class_separation * 2.0_f64.sqrt();
        for a in 0..cfg.base_classes {
            for b in (a + 1)..cfg.base_classes {
                let dist: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    (dist - expected).abs() < 1.0,
                    "classes {a},{b}: {dist} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn novel_classes_lean_toward_a_seen_class() {
        let cfg = StreamConfig::desk();
        let stream = generate_synthetic_stream(&cfg).unwrap();
        // Empirical mean of each class over all train draws.
        let dim = cfg.ambient_dim;
        let total = cfg.total_classes();
        let mut sums = vec![vec![0.0; dim]; total];
        let mut counts = vec![0usize; total];
        for s in &stream.sessions {
            let labels = s.train.hidden_labels().reveal();
            for (row, &label) in labels.iter().enumerate() {
                counts[label as usize] += 1;
                for (acc, &v) in sums[label as usize].iter_mut().zip(s.train.instances.row(row)) {
                    *acc += v;
                }
            }
        }
        for (m, &c) in sums.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= c as f64;
            }
        }
        let dist = |a: &[f64], b: &[f64]| {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        // Each novel class's nearest earlier class sits well inside the
        // orthogonal-pair distance.
        let fine_grained = cfg.class_separation * (2.0 - 2.0 * cfg.novel_affinity).sqrt();
        for novel in cfg.base_classes..total {
            let nearest = (0..novel)
                .map(|earlier| dist(&sums[novel], &sums[earlier]))
                .fold(f64::INFINITY, f64::min);
            assert!(
                (nearest - fine_grained).abs() < 1.0,
                "class {novel}: nearest earlier mean at {nearest}, expected ~{fine_grained}"
            );
        }
    }
}
