//! Bi-level contrastive knowledge distillation between the current model's
//! features and a frozen teacher's features of the same instances, plus the
//! MSE and KL baselines. All negatives are batch-local; the teacher side
//! never carries gradient.

use serde::{Deserialize, Serialize};

use crate::diffmath::{DiffError, Matrix, NodeId, Tape};
use crate::objectives::LOG_FLOOR;

#[derive(Debug, thiserror::Error)]
pub enum BckdError {
    #[error("batch of {0} is too small for a contrastive loss (need >= 2)")]
    BatchTooSmall(usize),
    #[error("student and teacher shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("invalid bckd config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Math(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Bckd,
    SaOnly,
    TaOnly,
    Mse,
    Kl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BckdConfig {
    pub tau_k: f64,
    pub mode: DistillMode,
}

impl Default for BckdConfig {
    fn default() -> Self {
        Self { tau_k: 0.04, mode: DistillMode::Bckd }
    }
}

impl BckdConfig {
    pub fn validate(&self) -> Result<(), BckdError> {
        if !(self.tau_k > 0.0) {
            return Err(BckdError::InvalidConfig(format!(
                "tau_k must be positive, got {}",
                self.tau_k
            )));
        }
        Ok(())
    }
}

/// Same-instance features from the current model (`student`, with gradient)
/// and the frozen previous-session model (`teacher`, gradient-free).
#[derive(Clone, Debug)]
pub struct DistillPair {
    pub student: Matrix,
    pub teacher: Matrix,
}

impl DistillPair {
    pub fn new(student: Matrix, teacher: Matrix) -> Result<Self, BckdError> {
        if student.shape() != teacher.shape() {
            return Err(BckdError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                student.shape(),
                teacher.shape()
            )));
        }
        Ok(Self { student, teacher })
    }

    fn size(&self) -> usize {
        self.student.rows()
    }
}

/// In-batch cross-entropy where every anchor row must pick its own diagonal
/// partner; shared by the student- and teacher-anchored directions.
fn anchored_graph(
    tape: &mut Tape,
    anchors: NodeId,
    candidates: NodeId,
    tau_k: f64,
) -> Result<NodeId, DiffError> {
    let n = tape.value(anchors).rows();
    let sims = tape.matmul_nt(anchors, candidates)?;
    let probs = tape.softmax_rows(sims, tau_k)?;
    let log_probs = tape.ln_clamped(probs, LOG_FLOOR);
    let eye = Matrix::eye(n, 1.0);
    let eye = tape.constant(&eye);
    let picked = tape.mul(eye, log_probs)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Student-anchored direction: each student row against all teacher rows.
pub fn sa_graph(
    tape: &mut Tape,
    student: NodeId,
    teacher: NodeId,
    cfg: &BckdConfig,
) -> Result<NodeId, DiffError> {
    anchored_graph(tape, student, teacher, cfg.tau_k)
}

/// Teacher-anchored direction: each teacher row against all student rows.
pub fn ta_graph(
    tape: &mut Tape,
    student: NodeId,
    teacher: NodeId,
    cfg: &BckdConfig,
) -> Result<NodeId, DiffError> {
    anchored_graph(tape, teacher, student, cfg.tau_k)
}

/// Loss node plus the component values recorded for traces.
pub struct DistillGraph {
    pub loss: NodeId,
    pub sa: Option<f64>,
    pub ta: Option<f64>,
}

/// Builds the distillation loss selected by `cfg.mode`.
pub fn distill_graph(
    tape: &mut Tape,
    student: NodeId,
    teacher: NodeId,
    cfg: &BckdConfig,
) -> Result<DistillGraph, DiffError> {
    match cfg.mode {
        DistillMode::Bckd => {
            let sa = sa_graph(tape, student, teacher, cfg)?;
            let ta = ta_graph(tape, student, teacher, cfg)?;
            let sum = tape.add(sa, ta)?;
            let loss = tape.scale(sum, 0.5);
            Ok(DistillGraph {
                loss,
                sa: tape.value(sa).scalar(),
                ta: tape.value(ta).scalar(),
            })
        }
        DistillMode::SaOnly => {
            let sa = sa_graph(tape, student, teacher, cfg)?;
            Ok(DistillGraph { loss: sa, sa: tape.value(sa).scalar(), ta: None })
        }
        DistillMode::TaOnly => {
            let ta = ta_graph(tape, student, teacher, cfg)?;
            Ok(DistillGraph { loss: ta, sa: None, ta: tape.value(ta).scalar() })
        }
        DistillMode::Mse => {
            let loss = mse_graph(tape, student, teacher)?;
            Ok(DistillGraph { loss, sa: None, ta: None })
        }
        DistillMode::Kl => {
            let loss = kl_graph(tape, student, teacher, cfg)?;
            Ok(DistillGraph { loss, sa: None, ta: None })
        }
    }
}

/// Mean over rows of the squared Euclidean student/teacher difference.
pub fn mse_graph(tape: &mut Tape, student: NodeId, teacher: NodeId) -> Result<NodeId, DiffError> {
    let n = tape.value(student).rows();
    let diff = tape.sub(student, teacher)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Mean over anchors of KL(teacher distribution || student distribution),
/// both taken over similarities to the teacher batch.
pub fn kl_graph(
    tape: &mut Tape,
    student: NodeId,
    teacher: NodeId,
    cfg: &BckdConfig,
) -> Result<NodeId, DiffError> {
    let n = tape.value(student).rows();
    let teacher_sims = tape.matmul_nt(teacher, teacher)?;
    let teacher_dist = tape.softmax_rows(teacher_sims, cfg.tau_k)?;
    let teacher_dist = tape.stop_gradient(teacher_dist);
    let student_sims = tape.matmul_nt(student, teacher)?;
    let student_dist = tape.softmax_rows(student_sims, cfg.tau_k)?;
    let log_t = tape.ln_clamped(teacher_dist, LOG_FLOOR);
    let log_s = tape.ln_clamped(student_dist, LOG_FLOOR);
    let diff = tape.sub(log_t, log_s)?;
    let weighted = tape.mul(teacher_dist, diff)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / n as f64))
}

fn eval_pair(
    pair: &DistillPair,
    cfg: &BckdConfig,
    build: impl FnOnce(&mut Tape, NodeId, NodeId) -> Result<NodeId, DiffError>,
) -> Result<f64, BckdError> {
    cfg.validate()?;
    if pair.size() < 2 {
        return Err(BckdError::BatchTooSmall(pair.size()));
    }
    let mut tape = Tape::new();
    let student = tape.constant(&pair.student);
    let teacher = tape.constant(&pair.teacher);
    let loss = build(&mut tape, student, teacher)?;
    Ok(tape.value(loss).scalar().expect("scalar loss"))
}

pub fn sa_loss(pair: &DistillPair, cfg: &BckdConfig) -> Result<f64, BckdError> {
    eval_pair(pair, cfg, |tape, s, t| sa_graph(tape, s, t, cfg))
}

pub fn ta_loss(pair: &DistillPair, cfg: &BckdConfig) -> Result<f64, BckdError> {
    eval_pair(pair, cfg, |tape, s, t| ta_graph(tape, s, t, cfg))
}

/// `(L_sa + L_ta) / 2`.
pub fn bckd_loss(pair: &DistillPair, cfg: &BckdConfig) -> Result<f64, BckdError> {
    eval_pair(pair, cfg, |tape, s, t| {
        let sa = sa_graph(tape, s, t, cfg)?;
        let ta = ta_graph(tape, s, t, cfg)?;
        let sum = tape.add(sa, ta)?;
        Ok(tape.scale(sum, 0.5))
    })
}

/// The Table-style baselines: `mse` or `kl` per `cfg.mode`.
pub fn baseline_distill_loss(pair: &DistillPair, cfg: &BckdConfig) -> Result<f64, BckdError> {
    match cfg.mode {
        DistillMode::Mse => eval_pair(pair, cfg, |tape, s, t| mse_graph(tape, s, t)),
        DistillMode::Kl => eval_pair(pair, cfg, |tape, s, t| kl_graph(tape, s, t, cfg)),
        other => Err(BckdError::InvalidConfig(format!(
            "baseline_distill_loss expects mse or kl, got {other:?}"
        ))),
    }
}
