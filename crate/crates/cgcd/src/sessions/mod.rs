//! Data provisioning and training orchestration: synthetic session streams,
//! embedding-dataset ingestion, augmentation, and the base / incremental
//! training loops.

mod dataset_io;
mod synthetic;
mod train;

pub use dataset_io::{export_embedding_dataset, load_embedding_dataset, DATASET_SCHEMA_VERSION};
pub use synthetic::generate_synthetic_stream;
pub use train::{
    augment_views, cosine_lr, train_base_session, train_incremental_session, EpochTrace,
    Schedule, SessionResult, TrainConfig,
};

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::bckd::BckdError;
use crate::diffmath::{DiffError, Matrix};
use crate::model::ModelError;
use crate::ncrl::NcrlError;
use crate::objectives::ObjectiveError;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("stream invariant violated: {0}")]
    InvariantViolation(String),
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("empty stream: {0}")]
    EmptyStream(String),
    #[error("teacher does not match the student architecture: {0}")]
    TeacherShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Ncrl(#[from] NcrlError),
    #[error(transparent)]
    Bckd(#[from] BckdError),
    #[error(transparent)]
    Math(#[from] DiffError),
}

/// Shape of a synthetic continual-discovery stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub base_classes: usize,
    pub novel_classes_per_session: usize,
    /// Number of incremental sessions (the base session is extra).
    pub sessions: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub ambient_dim: usize,
    /// Distance scale between class means (within-class noise is unit).
    pub class_separation: f64,
    pub seed: u64,
    /// Fraction of base-session training instances that carry labels.
    pub labelled_fraction: f64,
    /// Fresh instances drawn per already-seen class in each incremental
    /// session, mixed in with the novel-class data.
    #[serde(default = "default_seen_per_class")]
    pub seen_per_class_per_session: usize,
    /// Cosine between each novel class mean and the seen class it refines
    /// (0 = unrelated novel directions, values near 1 = barely separable).
    #[serde(default = "default_novel_affinity")]
    pub novel_affinity: f64,
}

fn default_seen_per_class() -> usize {
    50
}

fn default_novel_affinity() -> f64 {
    0.55
}

impl StreamConfig {
    /// 8 base classes + 2 novel per session over 3 sessions; runs in seconds.
    pub fn desk() -> Self {
        Self {
            base_classes: 8,
            novel_classes_per_session: 2,
            sessions: 3,
            train_per_class: 200,
            test_per_class: 50,
            ambient_dim: 32,
            class_separation: 4.0,
            seed: 0x73747265616d,
            labelled_fraction: 1.0,
            seen_per_class_per_session: 50,
            novel_affinity: 0.55,
        }
    }

    /// CIFAR100-shaped split: 80 base classes + 5 novel over 4 sessions.
    pub fn paper_cifar100() -> Self {
        Self {
            base_classes: 80,
            novel_classes_per_session: 5,
            sessions: 4,
            train_per_class: 400,
            test_per_class: 100,
            ambient_dim: 768,
            class_separation: 4.0,
            seed: 0x73747265616d,
            labelled_fraction: 1.0,
            seen_per_class_per_session: 25,
            novel_affinity: 0.55,
        }
    }

    pub fn total_classes(&self) -> usize {
        self.base_classes + self.novel_classes_per_session * self.sessions
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        for (name, v) in [
            ("base_classes", self.base_classes),
            ("novel_classes_per_session", self.novel_classes_per_session),
            ("sessions", self.sessions),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
            ("ambient_dim", self.ambient_dim),
        ] {
            if v == 0 {
                return Err(SessionError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.class_separation > 0.0) {
            return Err(SessionError::InvalidConfig(format!(
                "class_separation must be positive, got {}",
                self.class_separation
            )));
        }
        if !(0.0..1.0).contains(&self.novel_affinity) {
            return Err(SessionError::InvalidConfig(format!(
                "novel_affinity must lie in [0, 1), got {}",
                self.novel_affinity
            )));
        }
        if !(self.labelled_fraction > 0.0 && self.labelled_fraction <= 1.0) {
            return Err(SessionError::InvalidConfig(format!(
                "labelled_fraction must lie in (0, 1], got {}",
                self.labelled_fraction
            )));
        }
        Ok(())
    }
}

/// True labels behind a read-counting accessor. The incremental trainer must
/// never call [`SealedLabels::reveal`]; evaluation and tests may.
#[derive(Debug)]
pub struct SealedLabels {
    labels: Vec<i64>,
    reads: AtomicU64,
}

impl SealedLabels {
    pub fn new(labels: Vec<i64>) -> Self {
        Self {
            labels,
            reads: AtomicU64::new(0),
        }
    }

    /// Counted access to the true labels.
    pub fn reveal(&self) -> &[i64] {
        self.reads.fetch_add(1, Ordering::Relaxed);
        &self.labels
    }

    pub fn read_count(&self) -> u64 {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Uncounted access for serialization and invariant checks. Trainer code
    /// must not touch this.
    pub(crate) fn peek(&self) -> &[i64] {
        &self.labels
    }
}

impl Clone for SealedLabels {
    fn clone(&self) -> Self {
        Self {
            labels: self.labels.clone(),
            reads: AtomicU64::new(self.reads.load(Ordering::Relaxed)),
        }
    }
}

/// One session's training data. `open_labels` carries -1 for every instance
/// whose label the trainer may not see.
#[derive(Clone, Debug)]
pub struct TrainSplit {
    pub instances: Matrix,
    pub instance_ids: Vec<u64>,
    pub labelled: Vec<bool>,
    pub open_labels: Vec<i64>,
    hidden: SealedLabels,
}

impl TrainSplit {
    pub fn new(
        instances: Matrix,
        instance_ids: Vec<u64>,
        labelled: Vec<bool>,
        true_labels: Vec<i64>,
    ) -> Self {
        let open_labels = labelled
            .iter()
            .zip(&true_labels)
            .map(|(&vis, &l)| if vis { l } else { -1 })
            .collect();
        Self {
            instances,
            instance_ids,
            labelled,
            open_labels,
            hidden: SealedLabels::new(true_labels),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labelled_count(&self) -> usize {
        self.labelled.iter().filter(|&&b| b).count()
    }

    pub fn hidden_labels(&self) -> &SealedLabels {
        &self.hidden
    }
}

#[derive(Clone, Debug)]
pub struct TestSplit {
    pub instances: Matrix,
    pub instance_ids: Vec<u64>,
    pub labels: Vec<i64>,
}

#[derive(Clone, Debug)]
pub struct SessionData {
    pub id: usize,
    /// Classes first appearing in this session.
    pub novel_classes: Vec<i64>,
    /// Cumulative label space after this session, sorted.
    pub label_space: Vec<i64>,
    pub train: TrainSplit,
    pub test: TestSplit,
}

/// Ordered sessions with nested label spaces and disjoint train splits.
#[derive(Clone, Debug)]
pub struct SessionStream {
    pub ambient_dim: usize,
    pub sessions: Vec<SessionData>,
}

impl SessionStream {
    /// Total number of label-space snapshots (base + incremental sessions).
    pub fn num_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn label_space(&self, session: usize) -> &[i64] {
        &self.sessions[session].label_space
    }

    /// Union of the test splits of sessions `0..=session`.
    pub fn cumulative_test(&self, session: usize) -> Result<(Matrix, Vec<i64>), SessionError> {
        if session >= self.sessions.len() {
            return Err(SessionError::EmptyStream(format!(
                "session {session} of {}",
                self.sessions.len()
            )));
        }
        let parts: Vec<&Matrix> = self.sessions[..=session]
            .iter()
            .map(|s| &s.test.instances)
            .collect();
        let instances = Matrix::vstack(&parts)?;
        let labels = self.sessions[..=session]
            .iter()
            .flat_map(|s| s.test.labels.iter().copied())
            .collect();
        Ok((instances, labels))
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.sessions.is_empty() {
            return Err(SessionError::EmptyStream("no sessions".into()));
        }
        let mut seen_ids = std::collections::BTreeSet::new();
        for (idx, session) in self.sessions.iter().enumerate() {
            let name = format!("session {idx}");
            if session.id != idx {
                return Err(SessionError::InvariantViolation(format!(
                    "{name}: id {} out of order",
                    session.id
                )));
            }
            for m in [&session.train.instances, &session.test.instances] {
                if m.cols() != self.ambient_dim {
                    return Err(SessionError::InvariantViolation(format!(
                        "{name}: instance dim {} != ambient_dim {}",
                        m.cols(),
                        self.ambient_dim
                    )));
                }
            }
            let t = &session.train;
            if t.instance_ids.len() != t.len()
                || t.labelled.len() != t.len()
                || t.open_labels.len() != t.len()
                || t.hidden.len() != t.len()
            {
                return Err(SessionError::InvariantViolation(format!(
                    "{name}: train field lengths disagree"
                )));
            }
            if session.test.labels.len() != session.test.instances.rows() {
                return Err(SessionError::InvariantViolation(format!(
                    "{name}: test label count"
                )));
            }
            for (&visible, (&open, &hidden)) in t
                .labelled
                .iter()
                .zip(t.open_labels.iter().zip(t.hidden.peek()))
            {
                let expected = if visible { hidden } else { -1 };
                if open != expected {
                    return Err(SessionError::InvariantViolation(format!(
                        "{name}: open labels disagree with labelled flags"
                    )));
                }
            }
            for &id in t.instance_ids.iter().chain(&session.test.instance_ids) {
                if !seen_ids.insert(id) {
                    return Err(SessionError::InvariantViolation(format!(
                        "{name}: instance id {id} reused across sessions"
                    )));
                }
            }
            if idx > 0 {
                let prev = &self.sessions[idx - 1].label_space;
                let cur = &session.label_space;
                let nested = prev.iter().all(|c| cur.contains(c));
                if !nested || prev.len() >= cur.len() {
                    return Err(SessionError::InvariantViolation(format!(
                        "{name}: label space is not a strict superset of session {}",
                        idx - 1
                    )));
                }
            }
            let mut sorted = session.label_space.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted != session.label_space {
                return Err(SessionError::InvariantViolation(format!(
                    "{name}: label space must be sorted and unique"
                )));
            }
        }
        Ok(())
    }
}
