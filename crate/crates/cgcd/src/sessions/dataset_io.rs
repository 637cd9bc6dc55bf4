//! On-disk embedding dataset format.
//!
//! A dataset directory holds `manifest.json` plus, per session and split,
//! a little-endian 32-bit-float row-major payload (`s{t}_{split}.f32`), a
//! parallel 32-bit-integer label file (`.labels.i32`), and a labelled-flag
//! bitmap (`.flags.bin`, LSB-first).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SessionData, SessionError, SessionStream, TestSplit, TrainSplit};
use crate::diffmath::Matrix;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    schema_version: u32,
    ambient_dim: usize,
    sessions: Vec<SessionEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionEntry {
    id: usize,
    train_count: usize,
    test_count: usize,
    /// Cumulative label space after this session.
    class_ids: Vec<i64>,
    labelled_count: usize,
}

pub fn export_embedding_dataset(stream: &SessionStream, dir: &Path) -> Result<(), SessionError> {
    stream.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for session in &stream.sessions {
        entries.push(SessionEntry {
            id: session.id,
            train_count: session.train.len(),
            test_count: session.test.instances.rows(),
            class_ids: session.label_space.clone(),
            labelled_count: session.train.labelled_count(),
        });
        write_split(
            dir,
            session.id,
            "train",
            &session.train.instances,
            session.train.hidden.peek(),
            &session.train.labelled,
        )?;
        let test_flags = vec![true; session.test.labels.len()];
        write_split(
            dir,
            session.id,
            "test",
            &session.test.instances,
            &session.test.labels,
            &test_flags,
        )?;
    }
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        ambient_dim: stream.ambient_dim,
        sessions: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SessionError::Format(format!("manifest encode: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_embedding_dataset(dir: &Path) -> Result<SessionStream, SessionError> {
    let manifest_path = dir.join("manifest.json");
    let raw = std::fs::read_to_string(&manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_str(&raw)
        .map_err(|e| SessionError::Format(format!("manifest.json: {e}")))?;
    if manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(SessionError::Format(format!(
            "manifest.json: schema_version {} unsupported (expected {DATASET_SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    if manifest.ambient_dim == 0 {
        return Err(SessionError::Format("manifest.json: ambient_dim is 0".into()));
    }

    let mut sessions = Vec::new();
    let mut next_id = 0u64;
    let mut prev_space: Option<BTreeSet<i64>> = None;
    for (idx, entry) in manifest.sessions.iter().enumerate() {
        if entry.id != idx {
            return Err(SessionError::Format(format!(
                "manifest.json: session {idx} has id {}",
                entry.id
            )));
        }
        let space: BTreeSet<i64> = entry.class_ids.iter().copied().collect();
        if space.len() != entry.class_ids.len() {
            return Err(SessionError::Format(format!(
                "session {idx}: class_ids contains duplicates"
            )));
        }
        let novel: Vec<i64> = match &prev_space {
            None => space.iter().copied().collect(),
            Some(prev) => {
                if !prev.is_subset(&space) || prev.len() >= space.len() {
                    return Err(SessionError::InvariantViolation(format!(
                        "session {idx}: class_ids must strictly extend session {}",
                        idx - 1
                    )));
                }
                space.difference(prev).copied().collect()
            }
        };
        prev_space = Some(space.clone());

        let (train_instances, train_labels, train_flags) = read_split(
            dir,
            idx,
            "train",
            entry.train_count,
            manifest.ambient_dim,
        )?;
        let labelled_count = train_flags.iter().filter(|&&b| b).count();
        if labelled_count != entry.labelled_count {
            return Err(SessionError::Format(format!(
                "session {idx}: labelled_count {} does not match flag bitmap ({labelled_count})",
                entry.labelled_count
            )));
        }
        let (test_instances, test_labels, _) =
            read_split(dir, idx, "test", entry.test_count, manifest.ambient_dim)?;

        let train_ids: Vec<u64> = (0..entry.train_count as u64).map(|i| next_id + i).collect();
        next_id += entry.train_count as u64;
        let test_ids: Vec<u64> = (0..entry.test_count as u64).map(|i| next_id + i).collect();
        next_id += entry.test_count as u64;

        sessions.push(SessionData {
            id: idx,
            novel_classes: novel,
            label_space: entry.class_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect(),
            train: TrainSplit::new(train_instances, train_ids, train_flags, train_labels),
            test: TestSplit {
                instances: test_instances,
                instance_ids: test_ids,
                labels: test_labels,
            },
        });
    }

    let stream = SessionStream {
        ambient_dim: manifest.ambient_dim,
        sessions,
    };
    stream.validate()?;
    Ok(stream)
}

fn split_stem(session: usize, split: &str) -> String {
    format!("s{session}_{split}")
}

fn write_split(
    dir: &Path,
    session: usize,
    split: &str,
    instances: &Matrix,
    labels: &[i64],
    flags: &[bool],
) -> Result<(), SessionError> {
    let stem = split_stem(session, split);
    let mut payload = Vec::with_capacity(instances.data().len() * 4);
    for &v in instances.data() {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(dir.join(format!("{stem}.f32")), payload)?;

    let mut label_bytes = Vec::with_capacity(labels.len() * 4);
    for &l in labels {
        label_bytes.extend_from_slice(&(l as i32).to_le_bytes());
    }
    std::fs::write(dir.join(format!("{stem}.labels.i32")), label_bytes)?;

    let mut bitmap = vec![0u8; flags.len().div_ceil(8)];
    for (i, &flag) in flags.iter().enumerate() {
        if flag {
            bitmap[i / 8] |= 1 << (i % 8);
        }
    }
    std::fs::write(dir.join(format!("{stem}.flags.bin")), bitmap)?;
    Ok(())
}

fn read_split(
    dir: &Path,
    session: usize,
    split: &str,
    count: usize,
    dim: usize,
) -> Result<(Matrix, Vec<i64>, Vec<bool>), SessionError> {
    let stem = split_stem(session, split);
    let payload = std::fs::read(dir.join(format!("{stem}.f32")))?;
    if payload.len() != count * dim * 4 {
        return Err(SessionError::Format(format!(
            "session {session} {split}: payload holds {} bytes, expected {}",
            payload.len(),
            count * dim * 4
        )));
    }
    let mut data = Vec::with_capacity(count * dim);
    for chunk in payload.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(SessionError::Format(format!(
                "session {session} {split}: non-finite embedding value"
            )));
        }
        data.push(v as f64);
    }
    let instances = Matrix::from_raw(count, dim, data);

    let label_bytes = std::fs::read(dir.join(format!("{stem}.labels.i32")))?;
    if label_bytes.len() != count * 4 {
        return Err(SessionError::Format(format!(
            "session {session} {split}: label file holds {} bytes, expected {}",
            label_bytes.len(),
            count * 4
        )));
    }
    let labels: Vec<i64> = label_bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
        .collect();

    let bitmap = std::fs::read(dir.join(format!("{stem}.flags.bin")))?;
    if bitmap.len() != count.div_ceil(8) {
        return Err(SessionError::Format(format!(
            "session {session} {split}: flag bitmap holds {} bytes, expected {}",
            bitmap.len(),
            count.div_ceil(8)
        )));
    }
    let flags: Vec<bool> = (0..count).map(|i| bitmap[i / 8] & (1 << (i % 8)) != 0).collect();
    Ok((instances, labels, flags))
}
