//! Central finite-difference gradient checking.

use super::matrix::Matrix;
use super::tape::{value_and_gradient, NodeId, Tape};
use super::DiffError;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per differentiable input, in input order.
    pub per_input_max_rel_error: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the analytic gradient of `builder` against central finite
/// differences, entrywise, using relative error |a - n| / max(1, |a|, |n|).
pub fn grad_check<F>(
    builder: F,
    inputs: &[Matrix],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, DiffError>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(DiffError::InvalidCheckParameter {
            name: "epsilon",
            value: epsilon,
        });
    }
    if !(tolerance > 0.0) {
        return Err(DiffError::InvalidCheckParameter {
            name: "tolerance",
            value: tolerance,
        });
    }

    let (_, analytic) = value_and_gradient(&builder, inputs)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut worst = 0.0_f64;
    let mut perturbed: Vec<Matrix> = inputs.to_vec();
    for (idx, input) in inputs.iter().enumerate() {
        let mut input_worst = 0.0_f64;
        for entry in 0..input.data().len() {
            let original = input.data()[entry];
            perturbed[idx].data_mut()[entry] = original + epsilon;
            let plus = eval_forward(&builder, &perturbed)?;
            perturbed[idx].data_mut()[entry] = original - epsilon;
            let minus = eval_forward(&builder, &perturbed)?;
            perturbed[idx].data_mut()[entry] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[idx].data()[entry];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            input_worst = input_worst.max(rel);
        }
        worst = worst.max(input_worst);
        per_input.push(input_worst);
    }

    Ok(GradCheckReport {
        per_input_max_rel_error: per_input,
        max_rel_error: worst,
        tolerance,
        pass: worst <= tolerance,
    })
}

fn eval_forward<F>(builder: &F, inputs: &[Matrix]) -> Result<f64, DiffError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|m| tape.input(m)).collect();
    let out = builder(&mut tape, &ids)?;
    let value = tape.value(out);
    value.scalar().ok_or(DiffError::NonScalarOutput {
        rows: value.rows(),
        cols: value.cols(),
    })
}
