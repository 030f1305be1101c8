use serde::Serialize;

use crate::loopnest::{random_inputs, reference_execute, KernelError, KernelSpec};

use super::ExecutablePlan;

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;

/// Elementwise agreement test used by every verification path.
pub fn within_tolerance(got: f32, expected: f32) -> bool {
    if got == expected {
        return true;
    }
    let (g, e) = (got as f64, expected as f64);
    (g - e).abs() <= (REL_TOL * e.abs()).max(ABS_TOL)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub trial: usize,
    pub index: usize,
    pub got: f32,
    pub expected: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub trials: usize,
    pub passed: bool,
    pub max_abs_err: f64,
    pub first_mismatch: Option<Mismatch>,
}

/// Runs `plan` and the reference interpreter on `trials` seeded random
/// inputs for `spec` and compares every output element.
pub fn verify(
    plan: &ExecutablePlan,
    spec: &KernelSpec,
    trials: usize,
) -> Result<VerifyReport, KernelError> {
    if spec.fingerprint() != plan.spec().fingerprint() {
        return Err(KernelError::ShapeMismatch(format!(
            "plan was lowered for {} but verification targets {}",
            plan.spec().name(),
            spec.name()
        )));
    }
    let mut report = VerifyReport {
        trials,
        passed: true,
        max_abs_err: 0.0,
        first_mismatch: None,
    };
    for trial in 0..trials {
        let inputs = random_inputs(spec, 0x5eed_0000 + trial as u64);
        let expected = reference_execute(spec, &inputs)?;
        let got = plan.execute(&inputs, 1)?;
        for (index, (&g, &e)) in got.iter().zip(&expected).enumerate() {
            if g.is_finite() && e.is_finite() {
                report.max_abs_err = report.max_abs_err.max((g as f64 - e as f64).abs());
            }
            if !within_tolerance(g, e) && report.first_mismatch.is_none() {
                report.passed = false;
                report.first_mismatch = Some(Mismatch {
                    trial,
                    index,
                    got: g,
                    expected: e,
                });
            }
        }
    }
    Ok(report)
}
