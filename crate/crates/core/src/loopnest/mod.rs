//! Kernels as canonical loop nests over dense row-major buffers.
//!
//! A [`KernelSpec`] is built from an op sequence plus concrete shapes. The
//! builder derives one canonical [`LoopNest`]: spatial axes first (in output
//! order), reduction axes innermost, a single init/accumulate body and an
//! elementwise epilogue applied once per output element. Every tensor access
//! is an affine function of the original axes, which is what lets schedules
//! split, reorder and fuse loops without touching the body.

mod build;
mod reference;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::{build_fused_kernel, build_matmul};
pub use reference::{pad_input, random_inputs, reference_execute, TensorMap};
pub(crate) use reference::check_inputs;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported kernel class: {0}")]
    UnsupportedClass(String),
    #[error("unknown op tag `{0}`")]
    UnknownOp(String),
    #[error("missing shape for tensor `{0}`")]
    MissingShape(Role),
    #[error("missing buffer for tensor `{0}`")]
    MissingBuffer(Role),
    #[error("buffer `{role}` has {got} elements, expected {expected}")]
    BufferSize {
        role: Role,
        expected: usize,
        got: usize,
    },
}

/// Dense extents; every extent is at least one.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Result<Self, KernelError> {
        if dims.is_empty() {
            return Err(KernelError::InvalidShape("shape has no dimensions".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(KernelError::InvalidShape(format!(
                "extent {pos} of {dims:?} is zero"
            )));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = KernelError;

    fn try_from(dims: Vec<usize>) -> Result<Self, Self::Error> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// The closed set of tensor operations a kernel may contain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    #[serde(rename = "matmul")]
    MatMul,
    Conv2d,
    Pad,
    BiasAdd,
    #[serde(rename = "add")]
    ElemAdd,
    #[serde(rename = "relu")]
    ReLU,
    MaxPool2d,
    GlobalAvgPool2d,
    Dense,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::MatMul,
        OpKind::Conv2d,
        OpKind::Pad,
        OpKind::BiasAdd,
        OpKind::ElemAdd,
        OpKind::ReLU,
        OpKind::MaxPool2d,
        OpKind::GlobalAvgPool2d,
        OpKind::Dense,
    ];

    /// Tag used in the on-disk format.
    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::Pad => "pad",
            OpKind::BiasAdd => "bias_add",
            OpKind::ElemAdd => "add",
            OpKind::ReLU => "relu",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::GlobalAvgPool2d => "global_avg_pool2d",
            OpKind::Dense => "dense",
        }
    }

    /// Fragment contributed to a class id. Padding is a data-movement
    /// prologue of the op that follows it and does not name a class.
    fn class_tag(self) -> Option<&'static str> {
        match self {
            OpKind::Pad => None,
            OpKind::BiasAdd => Some("bias"),
            other => Some(other.name()),
        }
    }

    pub(crate) fn is_epilogue(self) -> bool {
        matches!(self, OpKind::BiasAdd | OpKind::ElemAdd | OpKind::ReLU)
    }
}

impl FromStr for OpKind {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| KernelError::UnknownOp(s.to_string()))
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tensor roles a kernel reads or writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Input,
    Weights,
    Bias,
    /// Second operand of an elementwise add; has the output's shape.
    Addend,
    Output,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Input => "input",
            Role::Weights => "weights",
            Role::Bias => "bias",
            Role::Addend => "addend",
            Role::Output => "output",
        };
        f.write_str(s)
    }
}

/// Integer op parameters. None of these participate in the class id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attrs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub padding: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<[usize; 2]>,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    Spatial,
    Reduction,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Axis {
    pub name: String,
    pub extent: usize,
    pub kind: AxisKind,
}

/// Flat index `offset + Σ coef · axis` into one tensor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Access {
    pub tensor: Role,
    pub terms: Vec<(usize, usize)>,
    pub offset: usize,
}

impl Access {
    pub fn coef(&self, axis: usize) -> usize {
        self.terms
            .iter()
            .filter(|(a, _)| *a == axis)
            .map(|(_, c)| *c)
            .sum()
    }

    pub fn index(&self, axis_values: &[usize]) -> usize {
        self.offset
            + self
                .terms
                .iter()
                .map(|&(a, c)| axis_values[a] * c)
                .sum::<usize>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reducer {
    Sum,
    Max,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Load(Access),
    Mul(Access, Access),
}

impl Expr {
    pub fn accesses(&self) -> Vec<&Access> {
        match self {
            Expr::Load(a) => vec![a],
            Expr::Mul(a, b) => vec![a, b],
        }
    }
}

/// Elementwise post-op applied to a finished output value.
#[derive(Clone, Debug, PartialEq)]
pub enum Epilogue {
    AddBias(Access),
    AddTensor(Access),
    Relu,
    Scale(f32),
}

/// Body statements; all of them target the nest's output access.
#[derive(Clone, Debug, PartialEq)]
pub enum Stmt {
    /// `out = value` before the first reduction step.
    Init { value: f32 },
    /// `out = reducer(out, expr)` once per reduction point.
    Accumulate { reducer: Reducer, expr: Expr },
    /// `out = expr` for nests without reduction axes.
    Assign { expr: Expr },
    /// `out = f(out)` once the value is complete.
    Epilogue(Epilogue),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopNest {
    pub axes: Vec<Axis>,
    pub output: Access,
    pub body: Vec<Stmt>,
}

impl LoopNest {
    pub fn axis_index(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    pub fn init_value(&self) -> Option<f32> {
        self.body.iter().find_map(|s| match s {
            Stmt::Init { value } => Some(*value),
            _ => None,
        })
    }

    /// The accumulate or assign statement.
    pub fn update(&self) -> &Stmt {
        self.body
            .iter()
            .find(|s| matches!(s, Stmt::Accumulate { .. } | Stmt::Assign { .. }))
            .expect("nest always has an update statement")
    }

    pub fn epilogue(&self) -> impl Iterator<Item = &Epilogue> {
        self.body.iter().filter_map(|s| match s {
            Stmt::Epilogue(e) => Some(e),
            _ => None,
        })
    }

    pub fn iteration_count(&self) -> usize {
        self.axes.iter().map(|a| a.extent).product()
    }
}

/// Explicit padded copy of the input, computed before the main nest.
#[derive(Clone, Debug, PartialEq)]
pub struct PadStage {
    pub padding: usize,
    pub fill: f32,
    pub source: Shape,
    pub padded: Shape,
}

/// Ordered op-tag sequence, shape-free.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelClassId(String);

impl KernelClassId {
    pub fn new(value: impl Into<String>) -> Self {
        KernelClassId(value.into())
    }

    pub fn from_ops(ops: &[OpKind]) -> Self {
        let tags: Vec<&str> = ops.iter().filter_map(|op| op.class_tag()).collect();
        KernelClassId(tags.join("_"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KernelClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A declarative kernel: normalized ops, concrete shapes and the canonical
/// nest derived from them. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    name: String,
    ops: Vec<OpKind>,
    shapes: BTreeMap<Role, Shape>,
    attrs: Attrs,
    nest: LoopNest,
    pad: Option<PadStage>,
    class: KernelClassId,
}

impl KernelSpec {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Normalized op sequence (a `Pad` always precedes `Conv2d`/`MaxPool2d`).
    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    /// Shapes of every tensor, including the derived output.
    pub fn shapes(&self) -> &BTreeMap<Role, Shape> {
        &self.shapes
    }

    pub fn shape(&self, role: Role) -> Option<&Shape> {
        self.shapes.get(&role)
    }

    pub fn attrs(&self) -> &Attrs {
        &self.attrs
    }

    pub fn nest(&self) -> &LoopNest {
        &self.nest
    }

    pub fn pad(&self) -> Option<&PadStage> {
        self.pad.as_ref()
    }

    pub fn class(&self) -> &KernelClassId {
        &self.class
    }

    /// Roles the caller must supply buffers for.
    pub fn input_roles(&self) -> Vec<Role> {
        self.shapes
            .keys()
            .copied()
            .filter(|r| *r != Role::Output)
            .collect()
    }

    pub fn output_len(&self) -> usize {
        self.shapes[&Role::Output].numel()
    }

    /// Class, shapes and attrs; equal fingerprints mean the same workload.
    pub fn fingerprint(&self) -> String {
        let shapes: Vec<String> = self
            .shapes
            .iter()
            .map(|(r, s)| format!("{r}={s}"))
            .collect();
        format!(
            "{}|{}|s{}p{}k{:?}",
            self.class,
            shapes.join(";"),
            self.attrs.stride.unwrap_or(1),
            self.attrs.padding,
            self.attrs.pool
        )
    }

    /// Same kernel under another name.
    pub fn renamed(&self, name: impl Into<String>) -> KernelSpec {
        KernelSpec {
            name: name.into(),
            ..self.clone()
        }
    }

    /// Builds from a (possibly unnormalized) op list; the entry point for
    /// deserialized descriptors.
    pub fn build(
        name: impl Into<String>,
        ops: &[OpKind],
        shapes: &BTreeMap<Role, Shape>,
        attrs: &Attrs,
    ) -> Result<KernelSpec, KernelError> {
        build_fused_kernel(name, ops, shapes, attrs)
    }
}

pub fn kernel_class_of(spec: &KernelSpec) -> KernelClassId {
    spec.class.clone()
}
