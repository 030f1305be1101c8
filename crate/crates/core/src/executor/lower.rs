use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::loopnest::{AxisKind, Epilogue, Expr, KernelSpec, Reducer, Role, Stmt};
use crate::schedule::ScheduledNest;

// Offset slots carried through every loop level.
pub(crate) const OUT: usize = 0;
pub(crate) const A: usize = 1;
pub(crate) const B: usize = 2;
pub(crate) const BIAS: usize = 3;
pub(crate) const ADDEND: usize = 4;
pub(crate) const CACHE: usize = 5;
pub(crate) const NSLOT: usize = 6;

pub(crate) type Offs = [usize; NSLOT];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LowerError {
    #[error("parallel loop `{0}` iterates a reduction; iterations would race on the output")]
    ParallelReduction(String),
    #[error("parallel loop `{0}` is not the outermost loop")]
    ParallelNotOutermost(String),
    #[error("more than one loop is marked parallel")]
    MultipleParallel,
    #[error("{tensor} access reaches offset {max} of a {len}-element buffer")]
    OutOfBounds {
        tensor: &'static str,
        max: usize,
        len: usize,
    },
}

#[derive(Clone, Debug)]
pub(crate) enum Offsets {
    /// `i · step` per slot.
    Affine(Offs),
    /// Pre-expanded per-iteration offsets (fused or unrolled loops).
    Table(Vec<Offs>),
}

impl Offsets {
    pub(crate) fn at(&self, i: usize) -> Offs {
        match self {
            Offsets::Affine(step) => step.map(|s| s * i),
            Offsets::Table(t) => t[i],
        }
    }

    fn max(&self, extent: usize) -> Offs {
        match self {
            Offsets::Affine(step) => step.map(|s| s * (extent - 1)),
            Offsets::Table(t) => {
                let mut m = [0; NSLOT];
                for e in t {
                    for s in 0..NSLOT {
                        m[s] = m[s].max(e[s]);
                    }
                }
                m
            }
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PlanLoop {
    pub name: String,
    pub extent: usize,
    pub kind: AxisKind,
    pub offsets: Offsets,
    pub unrolled: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub(crate) enum Update {
    MulAcc,
    Acc,
    Max,
    Assign,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum EpiOp {
    AddBias,
    AddTensor,
    Relu,
    Scale(f32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelAxis {
    pub name: String,
    pub extent: usize,
    /// Why concurrent iterations cannot write the same output element.
    pub disjointness: String,
}

/// A scheduled nest with all index arithmetic resolved to per-loop offset
/// steps or tables, ready to run over raw buffers.
#[derive(Clone, Debug)]
pub struct ExecutablePlan {
    pub(crate) spec: Arc<KernelSpec>,
    pub(crate) loops: Vec<PlanLoop>,
    pub(crate) tile_level: usize,
    pub(crate) update: Update,
    pub(crate) init: Option<f32>,
    pub(crate) epilogue: Vec<EpiOp>,
    pub(crate) base: Offs,
    pub(crate) operand_roles: [Role; 2],
    pub(crate) cache_len: usize,
    pub(crate) parallel: Option<ParallelAxis>,
    pub(crate) vectorized: bool,
}

impl ExecutablePlan {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn parallel_axis(&self) -> Option<&ParallelAxis> {
        self.parallel.as_ref()
    }

    /// Elements in the per-task cache workspace (0 without a cache write).
    pub fn workspace_len(&self) -> usize {
        self.cache_len
    }

    pub fn loop_names(&self) -> Vec<&str> {
        self.loops.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn unrolled_loops(&self) -> Vec<&str> {
        self.loops
            .iter()
            .filter(|l| l.unrolled)
            .map(|l| l.name.as_str())
            .collect()
    }

    pub fn tile_level(&self) -> usize {
        self.tile_level
    }

    pub(crate) fn dest_slot(&self) -> usize {
        if self.cache_len > 0 {
            CACHE
        } else {
            OUT
        }
    }

    /// Swaps the offset steps of two loops, keeping bounds intact but
    /// breaking the index mapping. Negative control for verify.
    #[cfg(test)]
    pub(crate) fn corrupt_swap_loops(&mut self, a: usize, b: usize) {
        let oa = self.loops[a].offsets.clone();
        self.loops[a].offsets = self.loops[b].offsets.clone();
        self.loops[b].offsets = oa;
    }
}

fn coefs(spec: &KernelSpec, access: Option<&crate::loopnest::Access>) -> Vec<usize> {
    let n = spec.nest().axes.len();
    match access {
        Some(a) => (0..n).map(|ax| a.coef(ax)).collect(),
        None => vec![0; n],
    }
}

/// Resolves a scheduled nest into an executable plan, proving that
/// parallel iterations write disjoint outputs and that every access stays
/// in bounds.
pub fn lower(nest: &ScheduledNest) -> Result<ExecutablePlan, LowerError> {
    let spec = nest.spec();
    let body = &spec.nest().body;
    let (update, a_acc, b_acc) = match spec.nest().update() {
        Stmt::Accumulate { reducer, expr } => match (reducer, expr) {
            (Reducer::Sum, Expr::Mul(a, b)) => (Update::MulAcc, a, Some(b)),
            (Reducer::Sum, Expr::Load(a)) => (Update::Acc, a, None),
            (Reducer::Max, Expr::Load(a)) => (Update::Max, a, None),
            (Reducer::Max, Expr::Mul(a, b)) => {
                unreachable!("no builder emits max-of-products ({:?}, {:?})", a.tensor, b.tensor)
            }
        },
        Stmt::Assign { expr: Expr::Load(a) } => (Update::Assign, a, None),
        other => unreachable!("unexpected update statement {other:?}"),
    };
    let mut bias_acc = None;
    let mut addend_acc = None;
    let mut epilogue = Vec::new();
    for stmt in body {
        if let Stmt::Epilogue(e) = stmt {
            epilogue.push(match e {
                Epilogue::AddBias(a) => {
                    bias_acc = Some(a);
                    EpiOp::AddBias
                }
                Epilogue::AddTensor(a) => {
                    addend_acc = Some(a);
                    EpiOp::AddTensor
                }
                Epilogue::Relu => EpiOp::Relu,
                Epilogue::Scale(c) => EpiOp::Scale(*c),
            });
        }
    }

    let coef: [Vec<usize>; 5] = [
        coefs(spec, Some(&spec.nest().output)),
        coefs(spec, Some(a_acc)),
        coefs(spec, b_acc),
        coefs(spec, bias_acc),
        coefs(spec, addend_acc),
    ];
    let mut base = [0; NSLOT];
    base[OUT] = spec.nest().output.offset;
    base[A] = a_acc.offset;
    base[B] = b_acc.map_or(0, |x| x.offset);
    base[BIAS] = bias_acc.map_or(0, |x| x.offset);
    base[ADDEND] = addend_acc.map_or(0, |x| x.offset);

    let loops = nest.loops();
    let mut tile_level = nest.tile_level();
    let has_cache = nest.cache().is_some();

    let parallel_loops: Vec<usize> = (0..loops.len()).filter(|&i| loops[i].parallel).collect();
    let parallel = match parallel_loops.as_slice() {
        [] => None,
        [0] => {
            let l = &loops[0];
            if l.kind == AxisKind::Reduction {
                return Err(LowerError::ParallelReduction(l.name.clone()));
            }
            Some(ParallelAxis {
                name: l.name.clone(),
                extent: l.extent,
                disjointness: format!(
                    "`{}` is outermost and spatial; the output index is injective in the spatial axes, \
                     so distinct iterations own disjoint output tiles",
                    l.name
                ),
            })
        }
        [i] => {
            let l = &loops[*i];
            if l.kind == AxisKind::Reduction {
                return Err(LowerError::ParallelReduction(l.name.clone()));
            }
            return Err(LowerError::ParallelNotOutermost(l.name.clone()));
        }
        _ => return Err(LowerError::MultipleParallel),
    };

    // Without reductions or a cache, a single whole-output tile avoids
    // per-element init/flush overhead.
    if update == Update::Assign && !has_cache && parallel.is_none() && !loops.is_empty() {
        tile_level = 0;
    }

    let mut cache_step = vec![0usize; loops.len()];
    let mut cache_len = 0;
    if has_cache {
        let mut acc = 1;
        for i in (tile_level..loops.len()).rev() {
            if loops[i].kind == AxisKind::Spatial {
                cache_step[i] = acc;
                acc *= loops[i].extent;
            }
        }
        cache_len = acc;
    }

    let plan_loops: Vec<PlanLoop> = loops
        .iter()
        .enumerate()
        .map(|(li, l)| {
            let unrolled = l.unroll.is_some_and(|max| l.extent <= max);
            let offsets = if l.parts.len() == 1 && !unrolled {
                let p = &l.parts[0];
                let mut step = [0; NSLOT];
                for s in 0..5 {
                    step[s] = coef[s][p.axis] * p.stride;
                }
                step[CACHE] = cache_step[li];
                Offsets::Affine(step)
            } else {
                let table = (0..l.extent)
                    .map(|i| {
                        let mut off = [0; NSLOT];
                        let mut rem = i;
                        for p in l.parts.iter().rev() {
                            let digit = rem % p.extent;
                            rem /= p.extent;
                            for s in 0..5 {
                                off[s] += coef[s][p.axis] * p.stride * digit;
                            }
                        }
                        off[CACHE] = i * cache_step[li];
                        off
                    })
                    .collect();
                Offsets::Table(table)
            };
            PlanLoop {
                name: l.name.clone(),
                extent: l.extent,
                kind: l.kind,
                offsets,
                unrolled,
            }
        })
        .collect();

    let a_len = match (a_acc.tensor, spec.pad()) {
        (Role::Input, Some(stage)) => stage.padded.numel(),
        (role, _) => spec.shapes()[&role].numel(),
    };
    let mut max = base;
    for l in &plan_loops {
        let m = l.offsets.max(l.extent);
        for s in 0..NSLOT {
            max[s] += m[s];
        }
    }
    let check = |slot: usize, tensor: &'static str, len: usize| {
        if max[slot] >= len {
            Err(LowerError::OutOfBounds {
                tensor,
                max: max[slot],
                len,
            })
        } else {
            Ok(())
        }
    };
    check(OUT, "output", spec.output_len())?;
    check(A, "first operand", a_len)?;
    if let Some(b) = b_acc {
        check(B, "second operand", spec.shapes()[&b.tensor].numel())?;
    }
    if bias_acc.is_some() {
        check(BIAS, "bias", spec.shapes()[&Role::Bias].numel())?;
    }
    if addend_acc.is_some() {
        check(ADDEND, "addend", spec.shapes()[&Role::Addend].numel())?;
    }
    if has_cache {
        check(CACHE, "cache", cache_len)?;
    }

    Ok(ExecutablePlan {
        spec: Arc::clone(nest.spec_arc()),
        vectorized: loops.last().is_some_and(|l| l.vectorize),
        loops: plan_loops,
        tile_level,
        update,
        init: spec.nest().init_value(),
        epilogue,
        base,
        operand_roles: [a_acc.tensor, b_acc.map_or(Role::Weights, |b| b.tensor)],
        cache_len,
        parallel,
    })
}
