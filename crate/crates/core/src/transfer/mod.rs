//! Transfer-tuning: pick a source model, replay its schedules onto
//! same-class kernels of the target and keep the per-kernel winners.

mod heuristic;
mod model;

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::executor::{
    build_plan, compare_programs, measure, measure_program, measure_with_cutoff, verify, CostMode, ExecutablePlan,
    InvalidReason, MeasureProtocol, MeasuredCost, ProgramPart,
};
use crate::loopnest::{random_inputs, KernelClassId, KernelError, KernelSpec, TensorMap};
use crate::par::par_map;
use crate::records::RecordStore;
use crate::schedule::Schedule;

pub use heuristic::{heuristic_score, select_tuning_model, HeuristicScore};
pub use model::{ClassSummary, ModelDescriptor, ModelError, ModelKernel};

/// Which records a transfer may draw from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFilter {
    Models(Vec<String>),
    /// Every record regardless of the model that produced it.
    Pool,
}

impl SourceFilter {
    pub fn model(name: &str) -> Self {
        SourceFilter::Models(vec![name.to_string()])
    }

    fn admits(&self, source: &str) -> bool {
        match self {
            SourceFilter::Pool => true,
            SourceFilter::Models(names) => names.iter().any(|n| n == source),
        }
    }
}

/// A schedule offered to a target kernel, with where it came from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub schedule: Schedule,
    pub source_model: String,
    pub source_kernel: String,
}

/// Records of `kernel`'s class admitted by `filter`, deduplicated by
/// schedule (first occurrence in store order wins). Empty schedules are the
/// untuned baseline, which is always measured anyway.
pub fn compatible_schedules(
    kernel: &KernelSpec,
    store: &RecordStore,
    filter: &SourceFilter,
) -> Vec<Candidate> {
    let mut seen = HashSet::new();
    store
        .by_class(kernel.class())
        .into_iter()
        .filter(|r| filter.admits(&r.source_model) && !r.schedule.primitives.is_empty())
        .filter(|r| seen.insert(r.schedule.key()))
        .map(|r| Candidate {
            schedule: r.schedule.clone(),
            source_model: r.source_model.clone(),
            source_kernel: r.kernel_name.clone(),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferOptions {
    pub protocol: MeasureProtocol,
    pub verify_trials: usize,
    pub seed: u64,
    /// Timed runs of the final untuned-versus-composed program comparison.
    #[serde(default = "default_program_runs")]
    pub program_runs: usize,
}

pub const DEFAULT_PROGRAM_RUNS: usize = 11;

fn default_program_runs() -> usize {
    DEFAULT_PROGRAM_RUNS
}

impl Default for TransferOptions {
    fn default() -> Self {
        TransferOptions {
            protocol: MeasureProtocol::default(),
            verify_trials: 1,
            seed: 0,
            program_runs: DEFAULT_PROGRAM_RUNS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub source_model: String,
    pub source_kernel: String,
    pub schedule: Schedule,
    pub valid: bool,
    pub median_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid: Option<InvalidReason>,
    /// Measurement time, or apply/lower attempt time when invalid.
    pub time_ns: u64,
}

pub const UNTUNED_SOURCE: &str = "untuned";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelResult {
    pub kernel: String,
    pub class: KernelClassId,
    pub use_count: usize,
    pub baseline: MeasuredCost,
    pub candidates: Vec<CandidateResult>,
    /// Index into `candidates`; `None` when the untuned schedule won.
    pub chosen: Option<usize>,
    pub chosen_source: String,
    pub chosen_schedule: Schedule,
    pub cost_ns: u64,
    pub invalid_count: usize,
    /// No valid candidate existed; the untuned schedule is used.
    pub fallback: bool,
    /// The fastest candidate lost the head-to-head rerun against the
    /// untuned plan, which was kept instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unconfirmed: bool,
    pub search_time_ns: u64,
}

/// Replays each candidate on `kernel`; invalid candidates are recorded, valid
/// ones verified and measured. The untuned baseline is measured first and
/// wins ties. On the wall clock the fastest candidate must then beat the
/// untuned plan again in interleaved runs, so one noisy median cannot swap
/// in a slower schedule.
pub fn transfer_tune_kernel(
    kernel: &KernelSpec,
    use_count: usize,
    candidates: &[Candidate],
    options: &TransferOptions,
) -> Result<(KernelResult, ExecutablePlan), KernelError> {
    let protocol = &options.protocol;
    let inputs = random_inputs(kernel, options.seed);
    let untuned_schedule = Schedule::untuned(kernel.class().clone());
    let untuned = build_plan(&untuned_schedule, kernel).expect("the untuned schedule always lowers");
    let base = measure(&untuned, &inputs, protocol)?;
    let mut search_time_ns = base.elapsed_ns;
    let baseline = base.cost;

    let built = par_map(candidates, |c| {
        let t = Instant::now();
        let plan = build_plan(&c.schedule, kernel);
        (plan, t.elapsed().as_nanos() as u64)
    });

    let mut results = Vec::with_capacity(candidates.len());
    let mut best: (u64, Option<usize>) = (baseline.median_ns.unwrap_or(u64::MAX), None);
    let mut best_plan = None;
    for (i, (c, (plan, attempt_ns))) in candidates.iter().zip(built).enumerate() {
        let attempt_ns = if protocol.mode == CostMode::Proxy { 0 } else { attempt_ns };
        let invalid = |reason: InvalidReason| CandidateResult {
            source_model: c.source_model.clone(),
            source_kernel: c.source_kernel.clone(),
            schedule: c.schedule.clone(),
            valid: false,
            median_ns: None,
            invalid: Some(reason),
            time_ns: attempt_ns,
        };
        let plan = match plan {
            Ok(p) => p,
            Err(e) => {
                search_time_ns += attempt_ns;
                results.push(invalid(InvalidReason::from(&e)));
                continue;
            }
        };
        let report = verify(&plan, kernel, options.verify_trials)?;
        if !report.passed {
            search_time_ns += attempt_ns;
            results.push(invalid(InvalidReason {
                reason: "VerifyFailed".into(),
                detail: format!("{:?}", report.first_mismatch),
            }));
            continue;
        }
        let m = measure_with_cutoff(&plan, &inputs, protocol, Some(best.0))?;
        search_time_ns += m.elapsed_ns;
        let ns = m.cost.median_ns.unwrap_or(u64::MAX);
        if ns < best.0 {
            best = (ns, Some(i));
            best_plan = Some(plan);
        }
        results.push(CandidateResult {
            source_model: c.source_model.clone(),
            source_kernel: c.source_kernel.clone(),
            schedule: c.schedule.clone(),
            valid: true,
            median_ns: m.cost.median_ns,
            invalid: None,
            time_ns: m.elapsed_ns,
        });
    }

    let mut unconfirmed = false;
    if let (Some(plan), CostMode::WallClock) = (&best_plan, protocol.mode) {
        let rerun = MeasureProtocol {
            cutoff_ratio: None,
            ..protocol.clone()
        };
        let part = |plan| [ProgramPart { plan, inputs: &inputs, uses: 1 }];
        let (u, w) = compare_programs(&part(&untuned), &part(plan), &rerun)?;
        search_time_ns += u.elapsed_ns + w.elapsed_ns;
        if w.cost.rank_key() >= u.cost.rank_key() {
            unconfirmed = true;
            best = (baseline.median_ns.unwrap_or(u64::MAX), None);
            best_plan = None;
        }
    }
    let best_plan = best_plan.unwrap_or(untuned);

    let invalid_count = results.iter().filter(|r| !r.valid).count();
    let fallback = invalid_count == results.len();
    let (chosen_source, chosen_schedule) = match best.1 {
        Some(i) => (results[i].source_model.clone(), results[i].schedule.clone()),
        None => (UNTUNED_SOURCE.to_string(), untuned_schedule),
    };
    Ok((
        KernelResult {
            kernel: kernel.name().to_string(),
            class: kernel.class().clone(),
            use_count,
            baseline,
            candidates: results,
            chosen: best.1,
            chosen_source,
            chosen_schedule,
            cost_ns: best.0,
            invalid_count,
            fallback,
            unconfirmed,
            search_time_ns,
        },
        best_plan,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub target: String,
    pub source: SourceFilter,
    pub mode: CostMode,
    pub per_kernel: Vec<KernelResult>,
    pub composed_cost: MeasuredCost,
    pub untuned_cost: MeasuredCost,
    pub speedup: f64,
    pub search_time_ns: u64,
}

impl TransferReport {
    pub fn fallback_count(&self) -> usize {
        self.per_kernel.iter().filter(|k| k.fallback).count()
    }
}

/// Transfer-tunes every kernel of `target`, then measures the composed
/// program (kernels in descriptor order, each `use_count` times) against the
/// untuned program with interleaved runs.
pub fn transfer_tune_model(
    target: &ModelDescriptor,
    source: &SourceFilter,
    store: &RecordStore,
    options: &TransferOptions,
) -> Result<TransferReport, TransferError> {
    let kernels = target.executable_kernels()?;
    let mut per_kernel = Vec::with_capacity(kernels.len());
    let mut plans = Vec::with_capacity(kernels.len());
    let mut untuned_plans = Vec::with_capacity(kernels.len());
    let mut inputs: Vec<TensorMap> = Vec::with_capacity(kernels.len());
    for (spec, uses) in &kernels {
        let candidates = compatible_schedules(spec, store, source);
        let (result, plan) = transfer_tune_kernel(spec, *uses, &candidates, options)?;
        per_kernel.push(result);
        plans.push(plan);
        untuned_plans.push(
            build_plan(&Schedule::untuned(spec.class().clone()), spec)
                .expect("the untuned schedule always lowers"),
        );
        inputs.push(random_inputs(spec, options.seed));
    }
    let uses: Vec<usize> = kernels.iter().map(|(_, u)| *u).collect();
    let parts = |ps| program_parts(ps, &inputs, &uses);
    let all_untuned = per_kernel.iter().all(|k| k.chosen.is_none());
    let program_protocol = MeasureProtocol {
        timed_runs: options.program_runs.max(1),
        cutoff_ratio: None,
        ..options.protocol.clone()
    };
    let (untuned_cost, composed_cost) = if kernels.is_empty() {
        (MeasuredCost::invalid(), MeasuredCost::invalid())
    } else if all_untuned {
        let u = measure_program(&parts(&untuned_plans), &program_protocol)?;
        (u.cost.clone(), u.cost)
    } else {
        let (u, c) = compare_programs(&parts(&untuned_plans), &parts(&plans), &program_protocol)?;
        (u.cost, c.cost)
    };
    let speedup = match (untuned_cost.median_ns, composed_cost.median_ns) {
        (Some(u), Some(c)) if c > 0 => u as f64 / c as f64,
        _ => 1.0,
    };
    Ok(TransferReport {
        target: target.name.clone(),
        source: source.clone(),
        mode: options.protocol.mode,
        search_time_ns: per_kernel.iter().map(|k| k.search_time_ns).sum(),
        per_kernel,
        composed_cost,
        untuned_cost,
        speedup,
    })
}

fn program_parts<'a>(
    plans: &'a [ExecutablePlan],
    inputs: &'a [TensorMap],
    uses: &[usize],
) -> Vec<ProgramPart<'a>> {
    plans
        .iter()
        .zip(inputs)
        .zip(uses)
        .map(|((plan, inputs), &uses)| ProgramPart { plan, inputs, uses })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerLine {
    pub kernel: String,
    pub class: KernelClassId,
    pub candidates: usize,
    pub invalid: usize,
    pub search_time_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTimeLedger {
    pub total_ns: u64,
    pub per_kernel: Vec<LedgerLine>,
    pub per_class: BTreeMap<KernelClassId, u64>,
}

pub fn search_time_ledger(report: &TransferReport) -> SearchTimeLedger {
    let mut per_class = BTreeMap::new();
    let per_kernel = report
        .per_kernel
        .iter()
        .map(|k| {
            *per_class.entry(k.class.clone()).or_insert(0) += k.search_time_ns;
            LedgerLine {
                kernel: k.kernel.clone(),
                class: k.class.clone(),
                candidates: k.candidates.len(),
                invalid: k.invalid_count,
                search_time_ns: k.search_time_ns,
            }
        })
        .collect();
    SearchTimeLedger {
        total_ns: report.search_time_ns,
        per_kernel,
        per_class,
    }
}

/// Classes present in both models.
pub fn shared_classes(a: &ModelDescriptor, b: &ModelDescriptor) -> Vec<KernelClassId> {
    a.classes().intersection(&b.classes()).cloned().collect()
}
