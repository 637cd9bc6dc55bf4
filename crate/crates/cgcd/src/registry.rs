//! Registry of every gradient-bearing loss, wired to the finite-difference
//! checker. The gradcheck command and the acceptance suite both run this.

use crate::bckd::{kl_graph, sa_graph, ta_graph, BckdConfig};
use crate::diffmath::{grad_check, DiffError, GradCheckReport, Matrix, NodeId, Tape};
use crate::ncrl::{ncrl_graph, NcrlConfig};
use crate::objectives::{sup_contrastive_graph, unsup_contrastive_graph, BaseLossConfig};
use crate::rng::unit_test_matrix;

const FIXTURE_ROWS: usize = 8;
const FIXTURE_COLS: usize = 16;
const SUP_LABELS: [i64; 8] = [0, 0, 1, 1, 2, -1, -1, 2];

type FixtureFn = fn(u64) -> (Vec<Matrix>, Vec<Matrix>);
type BuildFn = fn(&mut Tape, &[NodeId], &[NodeId]) -> Result<NodeId, DiffError>;

/// One loss under test: differentiable inputs, constant inputs, and the
/// graph builder joining them.
pub struct RegisteredLoss {
    pub name: &'static str,
    fixture: FixtureFn,
    build: BuildFn,
}

impl RegisteredLoss {
    /// Compares analytic gradients against central finite differences on the
    /// seeded fixture. `fault` corrupts the backward pass (negative control).
    pub fn check(
        &self,
        seed: u64,
        epsilon: f64,
        tolerance: f64,
        fault: f64,
    ) -> Result<GradCheckReport, DiffError> {
        let (inputs, constants) = (self.fixture)(seed);
        grad_check(
            |tape, ids| {
                if fault != 0.0 {
                    tape.inject_adjoint_fault(fault);
                }
                let const_ids: Vec<NodeId> = constants.iter().map(|c| tape.constant(c)).collect();
                (self.build)(tape, ids, &const_ids)
            },
            &inputs,
            epsilon,
            tolerance,
        )
    }
}

fn unit(seed: u64, salt: u64) -> Matrix {
    unit_test_matrix(FIXTURE_ROWS, FIXTURE_COLS, seed.wrapping_mul(0x9e37).wrapping_add(salt))
}

fn one_input(seed: u64) -> (Vec<Matrix>, Vec<Matrix>) {
    (vec![unit(seed, 1)], vec![])
}

fn two_inputs(seed: u64) -> (Vec<Matrix>, Vec<Matrix>) {
    (vec![unit(seed, 1), unit(seed, 2)], vec![])
}

fn input_plus_constant(seed: u64) -> (Vec<Matrix>, Vec<Matrix>) {
    (vec![unit(seed, 1)], vec![unit(seed, 3)])
}

fn build_sup(tape: &mut Tape, ids: &[NodeId], _consts: &[NodeId]) -> Result<NodeId, DiffError> {
    sup_contrastive_graph(tape, ids[0], &SUP_LABELS, &BaseLossConfig::default())
}

fn build_unsup(tape: &mut Tape, ids: &[NodeId], _consts: &[NodeId]) -> Result<NodeId, DiffError> {
    unsup_contrastive_graph(tape, ids[0], ids[1], &BaseLossConfig::default())
}

fn build_ncrl(tape: &mut Tape, ids: &[NodeId], consts: &[NodeId]) -> Result<NodeId, DiffError> {
    // view one is the (gradient-blocked) target path; the checker drives the
    // trainable second view
    ncrl_graph(tape, consts[0], ids[0], &NcrlConfig::default(), 0)
}

fn build_sa(tape: &mut Tape, ids: &[NodeId], consts: &[NodeId]) -> Result<NodeId, DiffError> {
    sa_graph(tape, ids[0], consts[0], &BckdConfig::default())
}

fn build_ta(tape: &mut Tape, ids: &[NodeId], consts: &[NodeId]) -> Result<NodeId, DiffError> {
    ta_graph(tape, ids[0], consts[0], &BckdConfig::default())
}

fn build_bckd(tape: &mut Tape, ids: &[NodeId], consts: &[NodeId]) -> Result<NodeId, DiffError> {
    let cfg = BckdConfig::default();
    let sa = sa_graph(tape, ids[0], consts[0], &cfg)?;
    let ta = ta_graph(tape, ids[0], consts[0], &cfg)?;
    let sum = tape.add(sa, ta)?;
    Ok(tape.scale(sum, 0.5))
}

fn build_kl(tape: &mut Tape, ids: &[NodeId], consts: &[NodeId]) -> Result<NodeId, DiffError> {
    kl_graph(tape, ids[0], consts[0], &BckdConfig::default())
}

/// Every gradient-bearing loss in the system.
pub fn registered_losses() -> Vec<RegisteredLoss> {
    vec![
        RegisteredLoss { name: "sup", fixture: one_input, build: build_sup },
        RegisteredLoss { name: "unsup", fixture: two_inputs, build: build_unsup },
        RegisteredLoss { name: "ncrl", fixture: input_plus_constant, build: build_ncrl },
        RegisteredLoss { name: "sa", fixture: input_plus_constant, build: build_sa },
        RegisteredLoss { name: "ta", fixture: input_plus_constant, build: build_ta },
        RegisteredLoss { name: "bckd", fixture: input_plus_constant, build: build_bckd },
        RegisteredLoss { name: "kl-baseline", fixture: input_plus_constant, build: build_kl },
    ]
}

/// Worst observed error per loss across seeds.
#[derive(Clone, Debug)]
pub struct LossCheckSummary {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs every registered loss over the given fixture seeds.
pub fn check_all_losses(
    seeds: &[u64],
    epsilon: f64,
    tolerance: f64,
    fault: f64,
) -> Result<Vec<LossCheckSummary>, DiffError> {
    let mut out = Vec::new();
    for loss in registered_losses() {
        let mut worst = 0.0_f64;
        for &seed in seeds {
            let report = loss.check(seed, epsilon, tolerance, fault)?;
            worst = worst.max(report.max_rel_error);
        }
        out.push(LossCheckSummary {
            name: loss.name,
            max_rel_error: worst,
            tolerance,
            pass: worst <= tolerance,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_covers_all_seven_losses() {
        let names: Vec<&str> = registered_losses().iter().map(|l| l.name).collect();
        assert_eq!(names, ["sup", "unsup", "ncrl", "sa", "ta", "bckd", "kl-baseline"]);
    }

    #[test]
    fn every_loss_passes_on_a_seeded_fixture() {
        let summaries = check_all_losses(&[7, 8], 1e-4, 1e-4, 0.0).unwrap();
        for s in &summaries {
            assert!(s.pass, "{}: max rel error {}", s.name, s.max_rel_error);
        }
    }

    #[test]
    fn corrupted_adjoints_fail_every_loss() {
        let summaries = check_all_losses(&[7], 1e-4, 1e-4, 5e-2).unwrap();
        for s in &summaries {
            assert!(!s.pass, "{} unexpectedly passed with a fault", s.name);
        }
    }
}
