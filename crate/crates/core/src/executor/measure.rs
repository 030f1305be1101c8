use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::loopnest::{KernelError, TensorMap};

use super::lower::ExecutablePlan;
use super::proxy::proxy_cost_ns;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Median wall-clock time of real executions.
    #[default]
    WallClock,
    /// Deterministic analytic cost; nothing is executed.
    Proxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureProtocol {
    pub warmup_runs: usize,
    pub timed_runs: usize,
    pub threads: usize,
    /// Stop timing a candidate once a run exceeds `ratio × best`.
    #[serde(default)]
    pub cutoff_ratio: Option<f64>,
    #[serde(default)]
    pub mode: CostMode,
}

impl Default for MeasureProtocol {
    fn default() -> Self {
        MeasureProtocol {
            warmup_runs: 2,
            timed_runs: 10,
            threads: super::resolve_threads(None),
            cutoff_ratio: None,
            mode: CostMode::WallClock,
        }
    }
}

impl MeasureProtocol {
    pub fn proxy() -> Self {
        MeasureProtocol {
            threads: 1,
            mode: CostMode::Proxy,
            ..Default::default()
        }
    }
}

/// Outcome of timing one candidate. Invalid candidates carry no time and
/// rank after every valid one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredCost {
    pub valid: bool,
    pub median_ns: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs_ns: Vec<u64>,
}

impl MeasuredCost {
    pub fn invalid() -> Self {
        MeasuredCost {
            valid: false,
            median_ns: None,
            runs_ns: Vec::new(),
        }
    }

    fn from_runs(runs_ns: Vec<u64>) -> Self {
        MeasuredCost {
            valid: true,
            median_ns: Some(median(&runs_ns)),
            runs_ns,
        }
    }

    /// Sort key: valid costs ascending, invalid last.
    pub fn rank_key(&self) -> (bool, u64) {
        match (self.valid, self.median_ns) {
            (true, Some(ns)) => (false, ns),
            _ => (true, u64::MAX),
        }
    }
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &[u64]) -> u64 {
    assert!(!values.is_empty(), "median of no runs");
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        ((v[n / 2 - 1] as u128 + v[n / 2] as u128) / 2) as u64
    }
}

/// A measured cost plus the time the measurement itself took (virtual time
/// in proxy mode).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Measurement {
    pub cost: MeasuredCost,
    pub elapsed_ns: u64,
}

static MEASURE_LOCK: Mutex<()> = Mutex::new(());
static LEDGER_NS: AtomicU64 = AtomicU64::new(0);

/// Cumulative measurement time across the process.
pub fn total_measurement_ns() -> u64 {
    LEDGER_NS.load(Ordering::Relaxed)
}

fn record(elapsed: u64) {
    LEDGER_NS.fetch_add(elapsed, Ordering::Relaxed);
}

pub fn measure(
    plan: &ExecutablePlan,
    inputs: &TensorMap,
    protocol: &MeasureProtocol,
) -> Result<Measurement, KernelError> {
    measure_with_cutoff(plan, inputs, protocol, None)
}

/// Measures `plan`; with a cutoff ratio and a best-so-far time, timing stops
/// early once a run is hopelessly slower.
pub fn measure_with_cutoff(
    plan: &ExecutablePlan,
    inputs: &TensorMap,
    protocol: &MeasureProtocol,
    best_ns: Option<u64>,
) -> Result<Measurement, KernelError> {
    let timed = protocol.timed_runs.max(1);
    if protocol.mode == CostMode::Proxy {
        crate::loopnest::check_inputs(plan.spec(), inputs)?;
        let c = proxy_cost_ns(plan);
        let elapsed = c * (timed + protocol.warmup_runs) as u64;
        record(elapsed);
        return Ok(Measurement {
            cost: MeasuredCost::from_runs(vec![c; timed]),
            elapsed_ns: elapsed,
        });
    }
    let limit = match (protocol.cutoff_ratio, best_ns) {
        (Some(r), Some(b)) => Some((b as f64 * r) as u64),
        _ => None,
    };
    let mut out = vec![0.0f32; plan.spec().output_len()];
    let _guard = MEASURE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let result = (|| {
        for _ in 0..protocol.warmup_runs {
            plan.execute_into(inputs, &mut out, protocol.threads)?;
        }
        let mut runs = Vec::with_capacity(timed);
        for _ in 0..timed {
            let t = Instant::now();
            plan.execute_into(inputs, &mut out, protocol.threads)?;
            let ns = t.elapsed().as_nanos() as u64;
            runs.push(ns.max(1));
            if limit.is_some_and(|l| ns > l) {
                break;
            }
        }
        Ok(runs)
    })();
    let elapsed = start.elapsed().as_nanos() as u64;
    record(elapsed);
    Ok(Measurement {
        cost: MeasuredCost::from_runs(result?),
        elapsed_ns: elapsed,
    })
}

/// One kernel of a whole-program measurement, executed `uses` times per run.
#[derive(Clone, Copy)]
pub struct ProgramPart<'a> {
    pub plan: &'a ExecutablePlan,
    pub inputs: &'a TensorMap,
    pub uses: usize,
}

fn program_proxy(parts: &[ProgramPart]) -> u64 {
    parts
        .iter()
        .map(|p| proxy_cost_ns(p.plan) * p.uses as u64)
        .sum()
}

fn run_program(
    parts: &[ProgramPart],
    outs: &mut [Vec<f32>],
    threads: usize,
) -> Result<u64, KernelError> {
    let t = Instant::now();
    for (p, out) in parts.iter().zip(outs.iter_mut()) {
        for _ in 0..p.uses {
            p.plan.execute_into(p.inputs, out, threads)?;
        }
    }
    Ok((t.elapsed().as_nanos() as u64).max(1))
}

/// Measures one program on its own.
pub fn measure_program(
    parts: &[ProgramPart],
    protocol: &MeasureProtocol,
) -> Result<Measurement, KernelError> {
    Ok(compare_programs(parts, &[], protocol)?.0)
}

/// Measures two programs with interleaved runs (A, B, A, B, ...) so slow
/// drift in machine state affects both equally.
pub fn compare_programs(
    a: &[ProgramPart],
    b: &[ProgramPart],
    protocol: &MeasureProtocol,
) -> Result<(Measurement, Measurement), KernelError> {
    let timed = protocol.timed_runs.max(1);
    if protocol.mode == CostMode::Proxy {
        let (ca, cb) = (program_proxy(a), program_proxy(b));
        let runs = (timed + protocol.warmup_runs) as u64;
        record((ca + cb) * runs);
        return Ok((
            Measurement {
                cost: MeasuredCost::from_runs(vec![ca; timed]),
                elapsed_ns: ca * runs,
            },
            Measurement {
                cost: MeasuredCost::from_runs(vec![cb; timed]),
                elapsed_ns: cb * runs,
            },
        ));
    }
    let alloc = |parts: &[ProgramPart]| -> Vec<Vec<f32>> {
        parts
            .iter()
            .map(|p| vec![0.0f32; p.plan.spec().output_len()])
            .collect()
    };
    let (mut oa, mut ob) = (alloc(a), alloc(b));
    let _guard = MEASURE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let (mut ea, mut eb) = (0u64, 0u64);
    for _ in 0..protocol.warmup_runs {
        ea += run_program(a, &mut oa, protocol.threads)?;
        eb += run_program(b, &mut ob, protocol.threads)?;
    }
    let (mut ra, mut rb) = (Vec::with_capacity(timed), Vec::with_capacity(timed));
    for _ in 0..timed {
        let x = run_program(a, &mut oa, protocol.threads)?;
        let y = run_program(b, &mut ob, protocol.threads)?;
        ea += x;
        eb += y;
        ra.push(x);
        rb.push(y);
    }
    record(ea + eb);
    Ok((
        Measurement {
            cost: MeasuredCost::from_runs(ra),
            elapsed_ns: ea,
        },
        Measurement {
            cost: MeasuredCost::from_runs(rb),
            elapsed_ns: eb,
        },
    ))
}
