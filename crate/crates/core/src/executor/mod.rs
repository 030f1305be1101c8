//! Lowering of scheduled nests to executable plans, timing, and
//! verification against the reference interpreter.

mod lower;
mod measure;
mod pool;
mod proxy;
mod run;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loopnest::KernelSpec;
use crate::schedule::{apply, Schedule, ScheduleError};

pub use lower::{lower, ExecutablePlan, LowerError, ParallelAxis};
pub use measure::{
    compare_programs, measure, measure_program, measure_with_cutoff, median, total_measurement_ns, CostMode,
    MeasureProtocol, MeasuredCost, Measurement, ProgramPart,
};
pub use pool::{resolve_threads, THREADS_ENV};
pub use proxy::proxy_cost_ns;
pub use verify::{verify, within_tolerance, Mismatch, VerifyReport, ABS_TOL, REL_TOL};

/// Why a schedule could not be turned into a plan for a kernel.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Lower(#[from] LowerError),
}

impl PlanError {
    /// Short machine-readable reason, used in records and reports.
    pub fn reason(&self) -> String {
        match self {
            PlanError::Schedule(e) => e.kind.to_string(),
            PlanError::Lower(e) => match e {
                LowerError::ParallelReduction(_) => "ParallelReduction",
                LowerError::ParallelNotOutermost(_) => "ParallelNotOutermost",
                LowerError::MultipleParallel => "MultipleParallel",
                LowerError::OutOfBounds { .. } => "OutOfBounds",
            }
            .to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvalidReason {
    pub reason: String,
    pub detail: String,
}

impl From<&PlanError> for InvalidReason {
    fn from(e: &PlanError) -> Self {
        InvalidReason {
            reason: e.reason(),
            detail: e.to_string(),
        }
    }
}

/// Applies `schedule` to `spec` and lowers the result.
pub fn build_plan(schedule: &Schedule, spec: &KernelSpec) -> Result<ExecutablePlan, PlanError> {
    let nest = apply(schedule, spec)?;
    Ok(lower(&nest)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopnest::{build_matmul, random_inputs, reference_execute, KernelClassId, Role};
    use crate::schedule::{examples, SchedulePrimitive as P};
    use crate::zoo::{self, Conv};

    fn conv(ci: usize, hw: usize, co: usize, k: usize, stride: usize) -> Conv {
        Conv {
            ci,
            hw,
            co,
            k,
            stride,
            pad: k / 2,
        }
    }

    fn assert_matches_reference(plan: &ExecutablePlan, threads: usize) {
        let inputs = random_inputs(plan.spec(), 7);
        let want = reference_execute(plan.spec(), &inputs).unwrap();
        let got = plan.execute(&inputs, threads).unwrap();
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!(within_tolerance(*g, *w), "index {i}: {g} vs {w}");
        }
    }

    #[test]
    fn untuned_plans_match_reference() {
        let kernels = vec![
            build_matmul(5, 7, 3).unwrap(),
            zoo::conv_bias_relu("e", conv(3, 9, 4, 3, 2)).unwrap(),
            zoo::conv_bias_add_relu("f", conv(4, 6, 4, 3, 1)).unwrap(),
            zoo::conv_add("a", conv(4, 6, 8, 1, 2)).unwrap(),
            zoo::max_pool("b", 3, 8, 2, 2, 0).unwrap(),
            zoo::max_pool("b3", 3, 7, 3, 2, 1).unwrap(),
            zoo::global_avg_pool("c", 5, 4).unwrap(),
            zoo::dense_add("d", 2, 16, 10).unwrap(),
        ];
        for k in kernels {
            let plan = build_plan(&Schedule::untuned(k.class().clone()), &k).unwrap();
            assert_matches_reference(&plan, 1);
        }
    }

    #[test]
    fn gemm_schedules_are_exact_at_256() {
        let k = build_matmul(256, 256, 256).unwrap();
        let inputs = random_inputs(&k, 1);
        let want = reference_execute(&k, &inputs).unwrap();
        for s in [examples::gemm_512(), examples::gemm_1024()] {
            let plan = build_plan(&s, &k).unwrap();
            assert!(plan.parallel_axis().is_some());
            // K stays in canonical order, so results are bit-identical.
            assert_eq!(plan.execute(&inputs, 1).unwrap(), want);
            assert_eq!(plan.execute(&inputs, 4).unwrap(), want);
        }
        let plan = build_plan(&examples::gemm_1024(), &k).unwrap();
        assert_eq!(plan.workspace_len(), 32 * 256);
    }

    #[test]
    fn unroll_limit_respects_extent() {
        let k = build_matmul(256, 256, 256).unwrap();
        let plan = build_plan(&examples::gemm_512(), &k).unwrap();
        assert_eq!(plan.unrolled_loops(), vec!["F_NM"]);
        let k = build_matmul(16, 16, 16).unwrap();
        let s = Schedule::new(
            KernelClassId::new("matmul"),
            vec![P::unroll("M", 8), P::unroll("K", 16)],
        );
        let plan = build_plan(&s, &k).unwrap();
        assert_eq!(plan.unrolled_loops(), vec!["K"]);
        assert_matches_reference(&plan, 1);
    }

    #[test]
    fn conv_with_split_fuse_cache() {
        let k = zoo::conv_bias_relu("e", conv(8, 8, 16, 3, 1)).unwrap();
        let s = Schedule::new(
            k.class().clone(),
            vec![
                P::split("CO", 4),
                P::split("W", 4),
                P::reorder(&["N", "CO_o", "H", "W_o", "CI", "KH", "KW", "CO_i", "W_i"]),
                P::cache_write(Role::Output, "C"),
                P::compute_at("C", "W_o"),
                P::fuse("N", "CO_o", "F"),
                P::parallel("F"),
                P::vectorize("W_i"),
            ],
        );
        let plan = build_plan(&s, &k).unwrap();
        assert_eq!(plan.workspace_len(), 16);
        assert_matches_reference(&plan, 1);
        assert_matches_reference(&plan, 3);
    }

    #[test]
    fn parallel_reduction_is_rejected() {
        let k = build_matmul(8, 8, 8).unwrap();
        let s = Schedule::new(
            KernelClassId::new("matmul"),
            vec![P::reorder(&["K", "N", "M"]), P::parallel("K")],
        );
        let e = build_plan(&s, &k).unwrap_err();
        assert_eq!(e, PlanError::Lower(LowerError::ParallelReduction("K".into())));
        let s = Schedule::new(KernelClassId::new("matmul"), vec![P::parallel("M")]);
        let e = build_plan(&s, &k).unwrap_err();
        assert_eq!(e.reason(), "ParallelNotOutermost");
    }

    #[test]
    fn verify_catches_corrupted_plan() {
        let k = build_matmul(8, 4, 4).unwrap();
        let mut plan = build_plan(&Schedule::untuned(k.class().clone()), &k).unwrap();
        assert!(verify(&plan, &k, 2).unwrap().passed);
        plan.corrupt_swap_loops(0, 1);
        let r = verify(&plan, &k, 1).unwrap();
        assert!(!r.passed);
        assert!(r.first_mismatch.is_some());
    }

    #[test]
    fn proxy_is_deterministic_and_prefers_tiling() {
        let k = build_matmul(256, 256, 256).unwrap();
        let naive = build_plan(&Schedule::untuned(k.class().clone()), &k).unwrap();
        let tuned = build_plan(&examples::gemm_1024(), &k).unwrap();
        assert_eq!(proxy_cost_ns(&naive), proxy_cost_ns(&naive.clone()));
        assert!(proxy_cost_ns(&tuned) < proxy_cost_ns(&naive));
        let inputs = random_inputs(&k, 0);
        let m = measure(&tuned, &inputs, &MeasureProtocol::proxy()).unwrap();
        assert!(m.cost.valid);
        assert_eq!(m.cost.runs_ns.len(), 10);
    }

    #[test]
    fn wall_clock_measurement() {
        let k = build_matmul(32, 32, 32).unwrap();
        let plan = build_plan(&Schedule::untuned(k.class().clone()), &k).unwrap();
        let inputs = random_inputs(&k, 0);
        let before = total_measurement_ns();
        let p = MeasureProtocol {
            warmup_runs: 1,
            timed_runs: 3,
            threads: 1,
            cutoff_ratio: None,
            mode: CostMode::WallClock,
        };
        let m = measure(&plan, &inputs, &p).unwrap();
        assert_eq!(m.cost.runs_ns.len(), 3);
        assert!(m.cost.median_ns.unwrap() > 0);
        assert!(total_measurement_ns() >= before + m.elapsed_ns);
        let cut = MeasureProtocol {
            cutoff_ratio: Some(1.0),
            ..p
        };
        let m = measure_with_cutoff(&plan, &inputs, &cut, Some(1)).unwrap();
        assert_eq!(m.cost.runs_ns.len(), 1);
    }
}
