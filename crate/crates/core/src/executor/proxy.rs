//! Deterministic analytic cost used in place of wall-clock timing when
//! reproducibility matters more than fidelity. Constants are rough
//! nanosecond figures for the interpreter in `run.rs` on one core.

use crate::loopnest::AxisKind;

use super::lower::{ExecutablePlan, Offsets, Update, A, B};

const CACHE_LINE_ELEMS: usize = 16;
const L1_BYTES: f64 = 32.0 * 1024.0;

const CONTIGUOUS_NS: f64 = 0.12;
const NEAR_STRIDE_NS: f64 = 0.4;
const FAR_STRIDE_NS: f64 = 0.9;
const TABLE_POINT_NS: f64 = 1.2;
const STRIP_CALL_NS: f64 = 6.0;
const LOOP_TRIP_NS: f64 = 1.5;
const FLUSH_NS: f64 = 1.0;
const SPILL_NS: f64 = 0.3;

fn stride_ns(step: usize) -> f64 {
    match step {
        0 | 1 => 0.0,
        s if s < CACHE_LINE_ELEMS => NEAR_STRIDE_NS,
        _ => FAR_STRIDE_NS,
    }
}

/// Modeled nanoseconds for one execution of `plan`.
pub fn proxy_cost_ns(plan: &ExecutablePlan) -> u64 {
    let loops = &plan.loops;
    let iters: f64 = loops.iter().map(|l| l.extent as f64).product();
    let mut total = 0.0;
    if let Some(inner) = loops.last() {
        let per_point = match &inner.offsets {
            Offsets::Affine(step) => {
                let mut c = CONTIGUOUS_NS + stride_ns(step[plan.dest_slot()]) + stride_ns(step[A]);
                if plan.update == Update::MulAcc {
                    c += stride_ns(step[B]);
                }
                if plan.vectorized {
                    c *= 0.9;
                }
                c
            }
            Offsets::Table(_) => TABLE_POINT_NS,
        };
        total += iters * per_point;
        total += iters / inner.extent as f64 * STRIP_CALL_NS;

        let mut trips = 1.0;
        for l in &loops[..loops.len() - 1] {
            trips *= l.extent as f64;
            let factor = if l.unrolled { 0.5 } else { 1.0 };
            total += trips * LOOP_TRIP_NS * factor;
        }

        let tl = plan.tile_level.min(loops.len());
        let tiles: f64 = loops[..tl].iter().map(|l| l.extent as f64).product();
        let tile_elems: f64 = loops[tl..]
            .iter()
            .filter(|l| l.kind == AxisKind::Spatial)
            .map(|l| l.extent as f64)
            .product();
        if plan.init.is_some() || !plan.epilogue.is_empty() || plan.cache_len > 0 {
            total += tiles * tile_elems * FLUSH_NS;
        }
        let reduces_in_tile = loops[tl..].iter().any(|l| l.kind == AxisKind::Reduction);
        if reduces_in_tile && tile_elems * 4.0 > L1_BYTES && plan.cache_len == 0 {
            total += iters * SPILL_NS;
        }
    }
    if let Some(stage) = plan.spec.pad() {
        total += stage.padded.numel() as f64 * 0.5;
    }
    if let Some(p) = &plan.parallel {
        total /= p.extent.min(8) as f64;
    }
    total.round().max(1.0) as u64
}
