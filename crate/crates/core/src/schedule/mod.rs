//! Schedule primitives, their on-disk form, and replay onto loop nests.
//!
//! Splits record only the inner factor; the outer extent is whatever the
//! live loop divides into at replay time, so a schedule tuned at one shape
//! can be applied at another whenever the factors still divide.

mod apply;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loopnest::{KernelClassId, Role};

pub use apply::{apply, CacheStage, Loop, LoopPart, ScheduleError, ScheduleErrorKind, ScheduledNest};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulePrimitive {
    Split { axis: String, factor: usize },
    Reorder { axes: Vec<String> },
    Fuse { outer: String, inner: String, result: String },
    Parallel { axis: String },
    Unroll { axis: String, max_factor: usize },
    Vectorize { axis: String },
    CacheWrite { tensor: Role, buffer: String },
    ComputeAt { buffer: String, axis: String },
}

impl SchedulePrimitive {
    pub fn split(axis: &str, factor: usize) -> Self {
        SchedulePrimitive::Split {
            axis: axis.into(),
            factor,
        }
    }

    pub fn reorder(axes: &[&str]) -> Self {
        SchedulePrimitive::Reorder {
            axes: axes.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn fuse(outer: &str, inner: &str, result: &str) -> Self {
        SchedulePrimitive::Fuse {
            outer: outer.into(),
            inner: inner.into(),
            result: result.into(),
        }
    }

    pub fn parallel(axis: &str) -> Self {
        SchedulePrimitive::Parallel { axis: axis.into() }
    }

    pub fn unroll(axis: &str, max_factor: usize) -> Self {
        SchedulePrimitive::Unroll {
            axis: axis.into(),
            max_factor,
        }
    }

    pub fn vectorize(axis: &str) -> Self {
        SchedulePrimitive::Vectorize { axis: axis.into() }
    }

    pub fn cache_write(tensor: Role, buffer: &str) -> Self {
        SchedulePrimitive::CacheWrite {
            tensor,
            buffer: buffer.into(),
        }
    }

    pub fn compute_at(buffer: &str, axis: &str) -> Self {
        SchedulePrimitive::ComputeAt {
            buffer: buffer.into(),
            axis: axis.into(),
        }
    }

    fn check(&self) -> Result<(), String> {
        match self {
            SchedulePrimitive::Split { factor: 0, .. } => Err("split factor must be ≥ 1".into()),
            SchedulePrimitive::Unroll { max_factor: 0, .. } => {
                Err("unroll max_factor must be ≥ 1".into())
            }
            SchedulePrimitive::Reorder { axes } => {
                let mut seen = HashSet::new();
                match axes.iter().find(|a| !seen.insert(a.as_str())) {
                    Some(dup) => Err(format!("reorder lists `{dup}` twice")),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// An ordered transformation list tagged with the class it was tuned for.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(rename = "origin_class")]
    pub origin: KernelClassId,
    pub primitives: Vec<SchedulePrimitive>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub origin_shape_note: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleParseError {
    #[error("malformed schedule at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid primitive #{index}: {message}")]
    Invalid { index: usize, message: String },
}

impl Schedule {
    /// The untuned schedule: no transformations.
    pub fn untuned(origin: KernelClassId) -> Self {
        Schedule {
            origin,
            primitives: Vec::new(),
            origin_shape_note: String::new(),
        }
    }

    pub fn new(origin: KernelClassId, primitives: Vec<SchedulePrimitive>) -> Self {
        Schedule {
            origin,
            primitives,
            origin_shape_note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.origin_shape_note = note.into();
        self
    }

    pub fn is_untuned(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Single-line JSON text.
    pub fn serialize(&self) -> String {
        serde_json::to_string(self).expect("schedule serialization is infallible")
    }

    pub fn deserialize(text: &str) -> Result<Schedule, ScheduleParseError> {
        let schedule: Schedule =
            serde_json::from_str(text).map_err(|e| ScheduleParseError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<(), ScheduleParseError> {
        for (index, p) in self.primitives.iter().enumerate() {
            p.check()
                .map_err(|message| ScheduleParseError::Invalid { index, message })?;
        }
        Ok(())
    }

    /// Identity for deduplication: class plus primitives, without the note.
    pub fn key(&self) -> String {
        serde_json::to_string(&(&self.origin, &self.primitives))
            .expect("schedule serialization is infallible")
    }
}

/// Alg.-style GEMM schedules used as worked examples and in tests.
pub mod examples {
    use super::*;
    use SchedulePrimitive as P;

    /// Three-level N/M tiling with a unit K split, fused parallel outer tile.
    pub fn gemm_512() -> Schedule {
        Schedule::new(
            KernelClassId::new("matmul"),
            vec![
                P::split("N", 8),
                P::split("N_o", 1),
                P::split("N_oo", 16),
                P::split("M", 8),
                P::split("M_o", 1),
                P::split("M_oo", 16),
                P::split("K", 1),
                P::reorder(&[
                    "N_ooo", "M_ooo", "N_oo", "M_oo", "K_o", "N_o", "M_o", "K_i", "N_i", "M_i",
                ]),
                P::fuse("N_ooo", "M_ooo", "F_NM"),
                P::parallel("F_NM"),
                P::unroll("F_NM", 512),
                P::vectorize("M_i"),
            ],
        )
        .with_note("matmul 512x512x512")
    }

    /// 32×256 outer tile accumulated in a local cache buffer `D`.
    pub fn gemm_1024() -> Schedule {
        Schedule::new(
            KernelClassId::new("matmul"),
            vec![
                P::split("N", 32),
                P::split("M", 256),
                P::reorder(&["N_o", "M_o", "N_i", "M_i"]),
                P::cache_write(Role::Output, "D"),
                P::split("N_i", 1),
                P::split("N_i_o", 16),
                P::split("N_i_oo", 2),
                P::split("M_i", 8),
                P::split("M_i_o", 4),
                P::split("M_i_oo", 8),
                P::split("K", 4),
                P::reorder(&[
                    "N_i_ooo", "M_i_ooo", "N_i_oo", "M_i_oo", "K_o", "N_i_o", "M_i_o", "K_i",
                    "N_i_i", "M_i_i",
                ]),
                P::compute_at("D", "M_o"),
                P::fuse("N_o", "M_o", "F_NM"),
                P::parallel("F_NM"),
                P::unroll("F_NM", 64),
                P::vectorize("M_i_i"),
            ],
        )
        .with_note("matmul 1024x1024x1024")
    }
}
