//! Native auto-scheduling: evolutionary search over the tiling grammar.
//!
//! Parents are ranked by the deterministic cost proxy, so the sequence of
//! candidates depends only on the kernel and the seed. Every candidate is
//! measured under the caller's protocol and the winner is picked on those
//! measurements.

mod genome;

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::{
    build_plan, measure, measure_with_cutoff, proxy_cost_ns, verify, CostMode, ExecutablePlan,
    MeasureProtocol, MeasuredCost, PlanError, VerifyReport,
};
use crate::loopnest::{random_inputs, KernelClassId, KernelError, KernelSpec, Role, Shape};
use crate::par::par_map;
use crate::schedule::Schedule;
use crate::transfer::{ModelDescriptor, ModelError};

pub use genome::{Genome, Sketch, CACHE_BUFFER, MAX_CHAIN, MAX_INNER, UNROLL_CHOICES};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBudget {
    pub max_candidates: usize,
    pub seed: u64,
    #[serde(default = "default_population")]
    pub population: usize,
    /// Random-input trials when verifying the winner.
    #[serde(default = "default_verify_trials")]
    pub verify_trials: usize,
}

fn default_population() -> usize {
    32
}

fn default_verify_trials() -> usize {
    2
}

impl SearchBudget {
    pub fn new(max_candidates: usize, seed: u64) -> Self {
        SearchBudget {
            max_candidates,
            seed,
            population: default_population().min(max_candidates.max(2)),
            verify_trials: default_verify_trials(),
        }
    }

    pub fn generations(&self) -> usize {
        self.max_candidates / self.population
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if self.population < 2 || self.max_candidates < self.population {
            return Err(TuneError::InvalidBudget(format!(
                "need max_candidates ≥ population ≥ 2, got {} and {}",
                self.max_candidates, self.population
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid search budget: {0}")]
    InvalidBudget(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Every candidate failed to apply, lower or verify.
    NoValidCandidates,
    /// The best candidate was not faster than the untuned schedule.
    NoImprovement,
}

/// The persisted unit of reuse: a kernel identity, a schedule and its cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningRecord {
    pub kernel_name: String,
    pub kernel_class: KernelClassId,
    pub kernel_shapes: BTreeMap<Role, Shape>,
    /// Hash of the kernel's key parameters (class, shapes, attrs).
    pub workload: String,
    pub schedule: Schedule,
    pub cost: MeasuredCost,
    pub source_model: String,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<Fallback>,
}

pub fn workload_id(spec: &KernelSpec) -> String {
    let digest = Sha256::digest(spec.fingerprint().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a shape map alone, used by the record index.
pub fn shapes_hash(shapes: &BTreeMap<Role, Shape>) -> String {
    let text: Vec<String> = shapes.iter().map(|(r, s)| format!("{r}={s}")).collect();
    let digest = Sha256::digest(text.join(";").as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of the search trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub schedule: Schedule,
    pub valid: bool,
    pub median_ns: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub record: TuningRecord,
    pub trace: Vec<TraceEntry>,
    pub baseline: MeasuredCost,
    pub fallback: Option<Fallback>,
    /// Measurement time plus apply/lower attempts, nanoseconds.
    pub search_time_ns: u64,
    pub invalid_count: usize,
    pub verify: Option<VerifyReport>,
}

pub fn trace_jsonl(trace: &[TraceEntry]) -> String {
    let mut out = String::new();
    for e in trace {
        out.push_str(&serde_json::to_string(e).expect("trace entries serialize"));
        out.push('\n');
    }
    out
}

fn now_secs(protocol: &MeasureProtocol) -> u64 {
    if protocol.mode == CostMode::Proxy {
        return 0;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

struct Evaluated {
    genome: Genome,
    schedule: Schedule,
    plan: Result<ExecutablePlan, PlanError>,
    attempt_ns: u64,
}

/// Breeds one generation: fresh random genomes for the first, mutated elites
/// afterwards. Duplicates of already-seen schedules are redrawn.
fn breed(
    sketch: &Sketch,
    elites: &[Genome],
    count: usize,
    seen: &mut HashSet<String>,
    rng: &mut ChaCha8Rng,
) -> Vec<(Genome, Schedule)> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut attempt = 0;
        let (g, s) = loop {
            let g = if elites.is_empty() || rng.random_bool(0.15) {
                Genome::random(sketch, rng)
            } else {
                let mut g = elites[rng.random_range(0..elites.len())].clone();
                g.mutate(sketch, rng);
                if rng.random_bool(0.3) {
                    g.mutate(sketch, rng);
                }
                g
            };
            let s = g.render(sketch);
            attempt += 1;
            if seen.insert(s.key()) || attempt >= 32 {
                break (g, s);
            }
        };
        out.push((g, s));
    }
    out
}

/// Auto-tunes one kernel. Deterministic in its candidate sequence for a given
/// `(spec, budget.seed)`; in proxy-cost mode the winner is too.
pub fn search(
    spec: &KernelSpec,
    budget: &SearchBudget,
    protocol: &MeasureProtocol,
    source_model: &str,
) -> Result<SearchOutcome, TuneError> {
    budget.validate()?;
    let sketch = Sketch::of(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let inputs = random_inputs(spec, budget.seed);
    let mut search_time_ns = 0;

    let untuned = build_plan(&Schedule::untuned(spec.class().clone()), spec)
        .expect("the untuned schedule always lowers");
    let baseline = measure(&untuned, &inputs, protocol)?;
    search_time_ns += baseline.elapsed_ns;
    let baseline = baseline.cost;

    let mut trace = Vec::with_capacity(budget.max_candidates);
    let mut plans: Vec<Option<(ExecutablePlan, MeasuredCost)>> = Vec::with_capacity(budget.max_candidates);
    let mut seen = HashSet::new();
    let mut fitness: Vec<(u64, usize, Genome)> = Vec::new();
    let mut best_ns: Option<u64> = baseline.median_ns;

    let generations = budget.generations();
    for gen in 0..generations {
        let count = if gen + 1 == generations {
            budget.max_candidates - gen * budget.population
        } else {
            budget.population
        };
        let elites: Vec<Genome> = fitness
            .iter()
            .take(budget.population.div_ceil(2))
            .map(|(_, _, g)| g.clone())
            .collect();
        let batch = breed(&sketch, &elites, count, &mut seen, &mut rng);
        let evaluated = par_map(&batch, |(genome, schedule)| {
            let t = Instant::now();
            let plan = build_plan(schedule, spec);
            Evaluated {
                genome: genome.clone(),
                schedule: schedule.clone(),
                plan,
                attempt_ns: t.elapsed().as_nanos() as u64,
            }
        });
        for ev in evaluated {
            let idx = trace.len();
            match ev.plan {
                Ok(plan) => {
                    let m = measure_with_cutoff(&plan, &inputs, protocol, best_ns)?;
                    search_time_ns += m.elapsed_ns;
                    let ns = m.cost.median_ns;
                    if let Some(ns) = ns {
                        best_ns = Some(best_ns.map_or(ns, |b| b.min(ns)));
                    }
                    fitness.push((proxy_cost_ns(&plan), idx, ev.genome));
                    trace.push(TraceEntry {
                        schedule: ev.schedule,
                        valid: true,
                        median_ns: ns,
                    });
                    plans.push(Some((plan, m.cost)));
                }
                Err(_) => {
                    search_time_ns += if protocol.mode == CostMode::Proxy {
                        0
                    } else {
                        ev.attempt_ns
                    };
                    trace.push(TraceEntry {
                        schedule: ev.schedule,
                        valid: false,
                        median_ns: None,
                    });
                    plans.push(None);
                }
            }
        }
        fitness.sort_by_key(|(c, i, _)| (*c, *i));
    }

    let invalid_count = trace.iter().filter(|e| !e.valid).count();
    let mut ranked: Vec<usize> = (0..trace.len()).filter(|&i| trace[i].valid).collect();
    ranked.sort_by_key(|&i| (trace[i].median_ns.unwrap_or(u64::MAX), i));

    let mut winner = None;
    let mut verify_report = None;
    for i in ranked {
        let (plan, _) = plans[i].as_ref().unwrap();
        let report = verify(plan, spec, budget.verify_trials)?;
        let passed = report.passed;
        verify_report = Some(report);
        if passed {
            winner = Some(i);
            break;
        }
    }

    let base_ns = baseline.median_ns.unwrap_or(u64::MAX);
    let (schedule, cost, fallback) = match winner {
        None => (
            Schedule::untuned(spec.class().clone()),
            baseline.clone(),
            Some(Fallback::NoValidCandidates),
        ),
        Some(i) if trace[i].median_ns.unwrap_or(u64::MAX) >= base_ns => (
            Schedule::untuned(spec.class().clone()),
            baseline.clone(),
            Some(Fallback::NoImprovement),
        ),
        Some(i) => (
            trace[i].schedule.clone(),
            plans[i].as_ref().unwrap().1.clone(),
            None,
        ),
    };
    let note = format!("{} {}", spec.name(), shape_note(spec));
    let record = TuningRecord {
        kernel_name: spec.name().to_string(),
        kernel_class: spec.class().clone(),
        kernel_shapes: spec.shapes().clone(),
        workload: workload_id(spec),
        schedule: schedule.with_note(note),
        cost,
        source_model: source_model.to_string(),
        timestamp: now_secs(protocol),
        fallback,
    };
    Ok(SearchOutcome {
        record,
        trace,
        baseline,
        fallback,
        search_time_ns,
        invalid_count,
        verify: verify_report,
    })
}

fn shape_note(spec: &KernelSpec) -> String {
    spec.nest()
        .axes
        .iter()
        .map(|a| format!("{}={}", a.name, a.extent))
        .collect::<Vec<_>>()
        .join(",")
}

/// Per-kernel seed, so kernels of one model explore independently.
pub fn kernel_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Tunes every unique executable kernel of `model` once.
pub fn tune_model(
    model: &ModelDescriptor,
    per_kernel: &SearchBudget,
    protocol: &MeasureProtocol,
) -> Result<Vec<SearchOutcome>, TuneError> {
    model
        .executable_kernels()?
        .iter()
        .enumerate()
        .map(|(i, (spec, _))| {
            let budget = SearchBudget {
                seed: kernel_seed(per_kernel.seed, i),
                ..per_kernel.clone()
            };
            search(spec, &budget, protocol, &model.name)
        })
        .collect()
}
