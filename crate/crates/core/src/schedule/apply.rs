use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Schedule, SchedulePrimitive};
use crate::loopnest::{AxisKind, KernelSpec, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScheduleErrorKind {
    UnknownAxis,
    FactorExceedsExtent,
    NonDivisibleSplit,
    StructuralMismatch,
    InvalidFuse,
    InvalidComputeAt,
    /// Vectorize on a loop that does not end up innermost.
    IllegalAnnotation,
}

impl fmt::Display for ScheduleErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{kind}: {detail}")]
pub struct ScheduleError {
    pub kind: ScheduleErrorKind,
    pub detail: String,
    /// Index of the primitive that failed, if a single one is to blame.
    pub primitive: Option<usize>,
}

impl ScheduleError {
    fn new(kind: ScheduleErrorKind, detail: impl Into<String>) -> Self {
        ScheduleError {
            kind,
            detail: detail.into(),
            primitive: None,
        }
    }
}

/// The slice of one original axis a loop iterates: values
/// `stride · i` for `i < extent`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopPart {
    pub axis: usize,
    pub extent: usize,
    pub stride: usize,
}

/// One loop of a transformed nest. A fused loop has several parts, listed
/// outer to inner.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    pub name: String,
    pub extent: usize,
    pub kind: AxisKind,
    pub parts: Vec<LoopPart>,
    pub parallel: bool,
    pub vectorize: bool,
    pub unroll: Option<usize>,
}

impl Loop {
    fn annotated(&self) -> bool {
        self.parallel || self.vectorize || self.unroll.is_some()
    }
}

/// A local accumulation buffer covering the spatial loops at
/// `tile_level..`, flushed to the output when the tile completes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheStage {
    pub buffer: String,
    pub tile_level: usize,
}

/// A kernel's loop nest after a schedule has been applied.
#[derive(Clone, Debug)]
pub struct ScheduledNest {
    spec: Arc<KernelSpec>,
    loops: Vec<Loop>,
    cache: Option<CacheStage>,
    tile_level: usize,
}

impl ScheduledNest {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<KernelSpec> {
        &self.spec
    }

    pub fn loops(&self) -> &[Loop] {
        &self.loops
    }

    pub fn cache(&self) -> Option<&CacheStage> {
        self.cache.as_ref()
    }

    /// Loop depth at which output values are initialized and finalized: the
    /// spatial loops at or below it enumerate one tile of outputs whose
    /// reductions all complete inside it.
    pub fn tile_level(&self) -> usize {
        self.tile_level
    }

    pub fn loop_index(&self, name: &str) -> Option<usize> {
        self.loops.iter().position(|l| l.name == name)
    }

    pub fn annotations(&self) -> BTreeMap<String, Vec<String>> {
        let mut out = BTreeMap::new();
        for l in &self.loops {
            let mut tags = Vec::new();
            if l.parallel {
                tags.push("parallel".to_string());
            }
            if l.vectorize {
                tags.push("vectorize".to_string());
            }
            if let Some(max) = l.unroll {
                tags.push(format!("unroll({max})"));
            }
            if !tags.is_empty() {
                out.insert(l.name.clone(), tags);
            }
        }
        out
    }

    /// For every original axis, the extents of its loop parts multiply back
    /// to the axis extent and the strides tile it without gaps.
    pub fn coverage_ok(&self) -> bool {
        let axes = &self.spec.nest().axes;
        (0..axes.len()).all(|a| {
            let mut parts: Vec<&LoopPart> = self
                .loops
                .iter()
                .flat_map(|l| l.parts.iter())
                .filter(|p| p.axis == a && p.extent > 1)
                .collect();
            parts.sort_by_key(|p| p.stride);
            let mut expected_stride = 1;
            for p in parts {
                if p.stride != expected_stride {
                    return false;
                }
                expected_stride *= p.extent;
            }
            expected_stride == axes[a].extent
        })
    }
}

/// Loop names produced by splitting `name`: `N → (N_o, N_i)`,
/// `N_o → (N_oo, N_o)`, `N_oo → (N_ooo, N_oo)`.
pub(crate) fn split_names(name: &str) -> (String, String) {
    let outer_suffix = name
        .rfind('_')
        .map(|i| &name[i + 1..])
        .is_some_and(|s| !s.is_empty() && s.bytes().all(|b| b == b'o'));
    if outer_suffix {
        (format!("{name}o"), name.to_string())
    } else {
        (format!("{name}_o"), format!("{name}_i"))
    }
}

struct State {
    loops: Vec<Loop>,
    cache: Option<(String, Option<String>)>,
    retired: HashSet<String>,
}

impl State {
    fn find(&self, name: &str) -> Result<usize, ScheduleError> {
        self.loops.iter().position(|l| l.name == name).ok_or_else(|| {
            let detail = if self.retired.contains(name) {
                format!("loop `{name}` was consumed by an earlier split or fuse")
            } else {
                format!("no loop named `{name}`")
            };
            ScheduleError::new(ScheduleErrorKind::UnknownAxis, detail)
        })
    }

    fn name_taken(&self, name: &str) -> bool {
        self.loops.iter().any(|l| l.name == name)
    }

    fn retarget_attach(&mut self, from: &str, to: &str) {
        if let Some((_, Some(attach))) = &mut self.cache {
            if attach == from {
                *attach = to.to_string();
            }
        }
    }

    fn step(&mut self, p: &SchedulePrimitive) -> Result<(), ScheduleError> {
        use ScheduleErrorKind::*;
        match p {
            SchedulePrimitive::Split { axis, factor } => {
                let idx = self.find(axis)?;
                let l = &self.loops[idx];
                if l.parts.len() != 1 {
                    return Err(ScheduleError::new(InvalidFuse, format!("cannot split fused loop `{axis}`")));
                }
                if l.annotated() {
                    return Err(ScheduleError::new(
                        StructuralMismatch,
                        format!("cannot split annotated loop `{axis}`"),
                    ));
                }
                let factor = *factor;
                if factor == 0 {
                    return Err(ScheduleError::new(NonDivisibleSplit, "split factor 0"));
                }
                if factor > l.extent {
                    return Err(ScheduleError::new(
                        FactorExceedsExtent,
                        format!("split factor {factor} exceeds extent {} of `{axis}`", l.extent),
                    ));
                }
                if !l.extent.is_multiple_of(factor) {
                    return Err(ScheduleError::new(
                        NonDivisibleSplit,
                        format!("split factor {factor} does not divide extent {} of `{axis}`", l.extent),
                    ));
                }
                let (outer_name, inner_name) = split_names(axis);
                for n in [&outer_name, &inner_name] {
                    if n != axis && self.name_taken(n) {
                        return Err(ScheduleError::new(
                            StructuralMismatch,
                            format!("split of `{axis}` would redefine existing loop `{n}`"),
                        ));
                    }
                }
                let l = self.loops.remove(idx);
                let part = &l.parts[0];
                let outer = Loop {
                    name: outer_name.clone(),
                    extent: l.extent / factor,
                    kind: l.kind,
                    parts: vec![LoopPart {
                        axis: part.axis,
                        extent: l.extent / factor,
                        stride: part.stride * factor,
                    }],
                    parallel: false,
                    vectorize: false,
                    unroll: None,
                };
                let inner = Loop {
                    name: inner_name.clone(),
                    extent: factor,
                    kind: l.kind,
                    parts: vec![LoopPart {
                        axis: part.axis,
                        extent: factor,
                        stride: part.stride,
                    }],
                    parallel: false,
                    vectorize: false,
                    unroll: None,
                };
                self.loops.insert(idx, inner);
                self.loops.insert(idx, outer);
                if inner_name != *axis && outer_name != *axis {
                    self.retired.insert(axis.clone());
                }
                self.retarget_attach(axis, &inner_name);
            }
            SchedulePrimitive::Reorder { axes } => {
                let mut idxs = Vec::with_capacity(axes.len());
                for a in axes {
                    let i = self.find(a)?;
                    if idxs.contains(&i) {
                        return Err(ScheduleError::new(StructuralMismatch, format!("reorder lists `{a}` twice")));
                    }
                    idxs.push(i);
                }
                let mut slots = idxs.clone();
                slots.sort_unstable();
                let moved: Vec<Loop> = idxs.iter().map(|&i| self.loops[i].clone()).collect();
                for (slot, l) in slots.into_iter().zip(moved) {
                    self.loops[slot] = l;
                }
            }
            SchedulePrimitive::Fuse { outer, inner, result } => {
                let o = self.find(outer)?;
                let i = self.find(inner)?;
                if i != o + 1 {
                    return Err(ScheduleError::new(
                        InvalidFuse,
                        format!("`{outer}` does not directly enclose `{inner}`"),
                    ));
                }
                let (lo, li) = (&self.loops[o], &self.loops[i]);
                if lo.kind != li.kind {
                    return Err(ScheduleError::new(
                        InvalidFuse,
                        format!("cannot fuse spatial and reduction loops `{outer}`, `{inner}`"),
                    ));
                }
                if lo.annotated() || li.annotated() {
                    return Err(ScheduleError::new(InvalidFuse, "cannot fuse annotated loops"));
                }
                if result != outer && result != inner && self.name_taken(result) {
                    return Err(ScheduleError::new(
                        StructuralMismatch,
                        format!("fuse result `{result}` already names a loop"),
                    ));
                }
                let li = self.loops.remove(i);
                let lo = &mut self.loops[o];
                lo.extent *= li.extent;
                lo.parts.extend(li.parts);
                let old_outer = std::mem::replace(&mut lo.name, result.clone());
                self.retired.insert(old_outer.clone());
                self.retired.insert(li.name.clone());
                self.retired.remove(result);
                self.retarget_attach(&old_outer, result);
                self.retarget_attach(&li.name, result);
            }
            SchedulePrimitive::Parallel { axis } => {
                let i = self.find(axis)?;
                self.loops[i].parallel = true;
            }
            SchedulePrimitive::Unroll { axis, max_factor } => {
                let i = self.find(axis)?;
                self.loops[i].unroll = Some(*max_factor);
            }
            SchedulePrimitive::Vectorize { axis } => {
                let i = self.find(axis)?;
                self.loops[i].vectorize = true;
            }
            SchedulePrimitive::CacheWrite { tensor, buffer } => {
                if *tensor != Role::Output {
                    return Err(ScheduleError::new(
                        StructuralMismatch,
                        format!("cache_write target `{tensor}` is not written by this kernel"),
                    ));
                }
                if self.cache.is_some() {
                    return Err(ScheduleError::new(StructuralMismatch, "output is already cached"));
                }
                self.cache = Some((buffer.clone(), None));
            }
            SchedulePrimitive::ComputeAt { buffer, axis } => {
                match &self.cache {
                    Some((b, _)) if b == buffer => {}
                    _ => {
                        return Err(ScheduleError::new(
                            InvalidComputeAt,
                            format!("`{buffer}` is not a cache buffer of this nest"),
                        ))
                    }
                }
                self.find(axis)?;
                if let Some((_, attach)) = &mut self.cache {
                    *attach = Some(axis.clone());
                }
            }
        }
        Ok(())
    }
}

/// Replays `schedule` on `spec`. Either every primitive applies and the
/// result passes the structural checks, or exactly one error is returned.
pub fn apply(schedule: &Schedule, spec: &KernelSpec) -> Result<ScheduledNest, ScheduleError> {
    apply_arc(schedule, &Arc::new(spec.clone()))
}

pub(crate) fn apply_arc(schedule: &Schedule, spec: &Arc<KernelSpec>) -> Result<ScheduledNest, ScheduleError> {
    use ScheduleErrorKind::*;
    if &schedule.origin != spec.class() {
        return Err(ScheduleError::new(
            StructuralMismatch,
            format!(
                "schedule for class `{}` cannot target a `{}` kernel",
                schedule.origin,
                spec.class()
            ),
        ));
    }
    let loops = spec
        .nest()
        .axes
        .iter()
        .enumerate()
        .map(|(i, a)| Loop {
            name: a.name.clone(),
            extent: a.extent,
            kind: a.kind,
            parts: vec![LoopPart {
                axis: i,
                extent: a.extent,
                stride: 1,
            }],
            parallel: false,
            vectorize: false,
            unroll: None,
        })
        .collect();
    let mut state = State {
        loops,
        cache: None,
        retired: HashSet::new(),
    };
    for (i, p) in schedule.primitives.iter().enumerate() {
        state.step(p).map_err(|mut e| {
            e.primitive = Some(i);
            e
        })?;
    }

    let loops = state.loops;
    let first_reduction = loops
        .iter()
        .position(|l| l.kind == AxisKind::Reduction)
        .unwrap_or(loops.len());
    let (cache, tile_level) = match state.cache {
        None => (None, first_reduction),
        Some((buffer, attach)) => {
            let level = match attach {
                None => first_reduction,
                Some(name) => {
                    let i = loops.iter().position(|l| l.name == name).ok_or_else(|| {
                        ScheduleError::new(UnknownAxis, format!("compute_at axis `{name}` vanished"))
                    })?;
                    i + 1
                }
            };
            if level > first_reduction {
                return Err(ScheduleError::new(
                    InvalidComputeAt,
                    format!("cache `{buffer}` attached inside a reduction loop"),
                ));
            }
            (Some(CacheStage { buffer, tile_level: level }), level)
        }
    };
    if let Some(pos) = loops.iter().position(|l| l.vectorize) {
        if pos + 1 != loops.len() || loops.iter().filter(|l| l.vectorize).count() > 1 {
            return Err(ScheduleError::new(
                IllegalAnnotation,
                format!("vectorized loop `{}` is not innermost", loops[pos].name),
            ));
        }
    }
    Ok(ScheduledNest {
        spec: Arc::clone(spec),
        loops,
        cache,
        tile_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopnest::{build_matmul, KernelClassId};
    use crate::schedule::{examples, SchedulePrimitive as P};

    fn matmul_schedule(ps: Vec<P>) -> Schedule {
        Schedule::new(KernelClassId::new("matmul"), ps)
    }

    #[test]
    fn naming_follows_relative_split_chain() {
        assert_eq!(split_names("N"), ("N_o".into(), "N_i".into()));
        assert_eq!(split_names("N_o"), ("N_oo".into(), "N_o".into()));
        assert_eq!(split_names("M_i_oo"), ("M_i_ooo".into(), "M_i_oo".into()));
        assert_eq!(split_names("CO"), ("CO_o".into(), "CO_i".into()));
        assert_eq!(split_names("N_i"), ("N_i_o".into(), "N_i_i".into()));
    }

    #[test]
    fn split_recomputes_outer_extent() {
        let k = build_matmul(512, 4, 4).unwrap();
        let n = apply(&matmul_schedule(vec![P::split("N", 8)]), &k).unwrap();
        let ext: Vec<_> = n.loops().iter().map(|l| (l.name.as_str(), l.extent)).collect();
        assert_eq!(ext, vec![("N_o", 64), ("N_i", 8), ("M", 4), ("K", 4)]);
        assert!(n.coverage_ok());
    }

    #[test]
    fn split_factor_errors() {
        let k = build_matmul(128, 4, 4).unwrap();
        let e = apply(&matmul_schedule(vec![P::split("N", 256)]), &k).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::FactorExceedsExtent);
        assert_eq!(e.primitive, Some(0));
        let e = apply(&matmul_schedule(vec![P::split("N", 48)]), &k).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::NonDivisibleSplit);
    }

    #[test]
    fn gemm_schedules_transfer_across_sizes() {
        for size in [256, 512, 1024] {
            let k = build_matmul(size, size, size).unwrap();
            for s in [examples::gemm_512(), examples::gemm_1024()] {
                let n = apply(&s, &k).unwrap();
                assert!(n.coverage_ok());
            }
        }
        let n = apply(&examples::gemm_512(), &build_matmul(1024, 1024, 1024).unwrap()).unwrap();
        let f = &n.loops()[n.loop_index("F_NM").unwrap()];
        assert_eq!(f.extent, 64);
        assert!(f.parallel);
        assert_eq!(n.loops().last().unwrap().name, "M_i");
    }

    #[test]
    fn gemm_1024_cache_attaches_below_fused_tile() {
        let n = apply(&examples::gemm_1024(), &build_matmul(1024, 1024, 1024).unwrap()).unwrap();
        assert_eq!(n.loops()[0].name, "F_NM");
        let cache = n.cache().unwrap();
        assert_eq!(cache.buffer, "D");
        assert_eq!(cache.tile_level, 1);
        let names: Vec<_> = n.loops().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "F_NM", "N_i_ooo", "M_i_ooo", "N_i_oo", "M_i_oo", "K_o", "N_i_o", "M_i_o", "K_i",
                "N_i_i", "M_i_i"
            ]
        );
    }

    #[test]
    fn gemm_512_fails_on_small_extent() {
        let e = apply(&examples::gemm_512(), &build_matmul(64, 64, 64).unwrap()).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::FactorExceedsExtent);
    }

    #[test]
    fn class_mismatch() {
        let s = Schedule::new(KernelClassId::new("conv2d_bias_relu"), vec![]);
        let e = apply(&s, &build_matmul(4, 4, 4).unwrap()).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::StructuralMismatch);
        assert_eq!(e.primitive, None);
    }

    #[test]
    fn unknown_and_consumed_axes() {
        let k = build_matmul(8, 8, 8).unwrap();
        let e = apply(&matmul_schedule(vec![P::parallel("Q")]), &k).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::UnknownAxis);
        let e = apply(&matmul_schedule(vec![P::split("N", 2), P::split("N", 2)]), &k).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::UnknownAxis);
        assert_eq!(e.primitive, Some(1));
    }

    #[test]
    fn fuse_requires_adjacency_and_kind() {
        let k = build_matmul(8, 8, 8).unwrap();
        let e = apply(&matmul_schedule(vec![P::fuse("N", "K", "F")]), &k).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::InvalidFuse);
        let e = apply(&matmul_schedule(vec![P::fuse("M", "K", "F")]), &k).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::InvalidFuse);
        let n = apply(&matmul_schedule(vec![P::fuse("N", "M", "F")]), &k).unwrap();
        assert_eq!(n.loops()[0].extent, 64);
        assert_eq!(n.loops()[0].parts.len(), 2);
        assert!(n.coverage_ok());
    }

    #[test]
    fn compute_at_inside_reduction_is_rejected() {
        let k = build_matmul(8, 8, 8).unwrap();
        let s = matmul_schedule(vec![
            P::cache_write(Role::Output, "D"),
            P::reorder(&["K", "M"]),
            P::compute_at("D", "M"),
        ]);
        let e = apply(&s, &k).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::InvalidComputeAt);
        let s = matmul_schedule(vec![P::compute_at("D", "N")]);
        assert_eq!(apply(&s, &k).unwrap_err().kind, ScheduleErrorKind::InvalidComputeAt);
        let s = matmul_schedule(vec![P::cache_write(Role::Input, "D")]);
        assert_eq!(apply(&s, &k).unwrap_err().kind, ScheduleErrorKind::StructuralMismatch);
    }

    #[test]
    fn vectorize_must_be_innermost() {
        let k = build_matmul(8, 8, 8).unwrap();
        let e = apply(&matmul_schedule(vec![P::vectorize("M")]), &k).unwrap_err();
        assert_eq!(e.kind, ScheduleErrorKind::IllegalAnnotation);
        let s = matmul_schedule(vec![P::reorder(&["K", "M"]), P::vectorize("M")]);
        assert!(apply(&s, &k).is_ok());
    }

    #[test]
    fn reorder_permutes_listed_slots_only() {
        let k = build_matmul(8, 8, 8).unwrap();
        let s = matmul_schedule(vec![P::split("N", 2), P::reorder(&["K", "N_o"])]);
        let n = apply(&s, &k).unwrap();
        let names: Vec<_> = n.loops().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, vec!["K", "N_i", "M", "N_o"]);
        assert_eq!(n.tile_level(), 0);
    }
}
