//! Constructors for the fused kernels that make up common CNN layers, and
//! a few small synthetic models built from them.

use std::collections::BTreeMap;

use crate::loopnest::{
    build_fused_kernel, build_matmul, Attrs, KernelError, KernelSpec, OpKind, Role,
    Shape,
};
use crate::transfer::{ModelDescriptor, ModelKernel};

fn shapes(pairs: &[(Role, Vec<usize>)]) -> Result<BTreeMap<Role, Shape>, KernelError> {
    pairs
        .iter()
        .map(|(r, d)| Ok((*r, Shape::new(d.clone())?)))
        .collect()
}

/// Convolution geometry: `ci` input channels over an `hw × hw` image,
/// `co` filters of size `k × k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub ci: usize,
    pub hw: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn out_hw(&self) -> usize {
        (self.hw + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// `conv2d` followed by the given epilogue ops (`bias_add`, `add`, `relu`).
pub fn conv(name: &str, c: Conv, epilogue: &[OpKind]) -> Result<KernelSpec, KernelError> {
    let oh = c.out_hw();
    let mut s = vec![
        (Role::Input, vec![1, c.ci, c.hw, c.hw]),
        (Role::Weights, vec![c.co, c.ci, c.k, c.k]),
    ];
    if epilogue.contains(&OpKind::BiasAdd) {
        s.push((Role::Bias, vec![c.co]));
    }
    if epilogue.contains(&OpKind::ElemAdd) {
        s.push((Role::Addend, vec![1, c.co, oh, oh]));
    }
    let mut ops = vec![OpKind::Conv2d];
    ops.extend_from_slice(epilogue);
    build_fused_kernel(
        name,
        &ops,
        &shapes(&s)?,
        &Attrs {
            stride: Some(c.stride),
            padding: c.pad,
            pool: None,
        },
    )
}

pub fn conv_bias_relu(name: &str, c: Conv) -> Result<KernelSpec, KernelError> {
    conv(name, c, &[OpKind::BiasAdd, OpKind::ReLU])
}

pub fn conv_bias_add_relu(name: &str, c: Conv) -> Result<KernelSpec, KernelError> {
    conv(name, c, &[OpKind::BiasAdd, OpKind::ElemAdd, OpKind::ReLU])
}

pub fn conv_add(name: &str, c: Conv) -> Result<KernelSpec, KernelError> {
    conv(name, c, &[OpKind::ElemAdd])
}

pub fn max_pool(
    name: &str,
    c: usize,
    hw: usize,
    pool: usize,
    stride: usize,
    pad: usize,
) -> Result<KernelSpec, KernelError> {
    build_fused_kernel(
        name,
        &[OpKind::MaxPool2d],
        &shapes(&[(Role::Input, vec![1, c, hw, hw])])?,
        &Attrs {
            stride: Some(stride),
            padding: pad,
            pool: Some([pool, pool]),
        },
    )
}

pub fn global_avg_pool(name: &str, c: usize, hw: usize) -> Result<KernelSpec, KernelError> {
    build_fused_kernel(
        name,
        &[OpKind::GlobalAvgPool2d],
        &shapes(&[(Role::Input, vec![1, c, hw, hw])])?,
        &Attrs::default(),
    )
}

/// `dense` (weights stored `[units, features]`) followed by a residual add.
pub fn dense_add(name: &str, batch: usize, features: usize, units: usize) -> Result<KernelSpec, KernelError> {
    build_fused_kernel(
        name,
        &[OpKind::Dense, OpKind::ElemAdd],
        &shapes(&[
            (Role::Input, vec![batch, features]),
            (Role::Weights, vec![units, features]),
            (Role::Addend, vec![batch, units]),
        ])?,
        &Attrs::default(),
    )
}

fn c(ci: usize, hw: usize, co: usize, k: usize, stride: usize) -> Conv {
    Conv {
        ci,
        hw,
        co,
        k,
        stride,
        pad: k / 2,
    }
}

fn exe(spec: Result<KernelSpec, KernelError>, use_count: usize) -> ModelKernel {
    ModelKernel::executable(spec.expect("preset shapes are valid"), use_count)
}

/// A ResNet18-shaped network at 64×64 input with channels divided by four:
/// the same 18 kernels, classes and use counts.
pub fn mini_resnet18() -> ModelDescriptor {
    let k = |i: usize| format!("r18_k{i:02}");
    let ks = vec![
        exe(conv_bias_relu(&k(1), c(3, 64, 16, 7, 2)), 1),
        exe(max_pool(&k(2), 16, 32, 2, 2, 0), 1),
        exe(conv_bias_relu(&k(3), c(16, 16, 16, 3, 1)), 2),
        exe(conv_bias_add_relu(&k(4), c(16, 16, 16, 3, 1)), 2),
        exe(conv_bias_relu(&k(5), c(16, 16, 32, 3, 2)), 1),
        exe(conv_add(&k(6), c(16, 16, 32, 1, 2)), 1),
        exe(conv_bias_relu(&k(7), c(32, 8, 32, 3, 1)), 1),
        exe(conv_bias_add_relu(&k(8), c(32, 8, 32, 3, 1)), 2),
        exe(conv_bias_relu(&k(9), c(32, 8, 64, 3, 2)), 1),
        exe(conv_add(&k(10), c(32, 8, 64, 1, 2)), 1),
        exe(conv_bias_relu(&k(11), c(64, 4, 64, 3, 1)), 1),
        exe(conv_bias_add_relu(&k(12), c(64, 4, 64, 3, 1)), 2),
        exe(conv_bias_relu(&k(13), c(64, 4, 128, 3, 2)), 1),
        exe(conv_add(&k(14), c(64, 4, 128, 1, 2)), 1),
        exe(conv_bias_relu(&k(15), c(128, 2, 128, 3, 1)), 1),
        exe(conv_bias_add_relu(&k(16), c(128, 2, 128, 3, 1)), 2),
        exe(global_avg_pool(&k(17), 128, 2), 1),
        exe(dense_add(&k(18), 1, 128, 100), 1),
    ];
    ModelDescriptor::new("mini-resnet18", ks)
}

/// A bottleneck ResNet50-shaped network at the same input size. It shares the
/// stem, pooling, dense and most convolution classes with
/// [`mini_resnet18`] but has no `conv2d_bias_add_relu` kernels, and adds
/// `conv2d_bias` projection shortcuts.
pub fn mini_resnet50() -> ModelDescriptor {
    let k = |i: usize| format!("r50_k{i:02}");
    let proj = |name: &str, g: Conv| conv(name, g, &[OpKind::BiasAdd]);
    let ks = vec![
        exe(conv_bias_relu(&k(1), c(3, 64, 16, 7, 2)), 1),
        exe(max_pool(&k(2), 16, 32, 2, 2, 0), 1),
        exe(conv_bias_relu(&k(3), c(16, 16, 8, 1, 1)), 1),
        exe(conv_bias_relu(&k(4), c(8, 16, 8, 3, 1)), 3),
        exe(conv_add(&k(5), c(8, 16, 32, 1, 1)), 3),
        exe(proj(&k(6), c(16, 16, 32, 1, 1)), 1),
        exe(conv_bias_relu(&k(7), c(32, 16, 8, 1, 1)), 2),
        exe(conv_bias_relu(&k(8), c(32, 16, 16, 1, 1)), 1),
        exe(conv_bias_relu(&k(9), c(16, 16, 16, 3, 2)), 1),
        exe(conv_add(&k(10), c(16, 8, 64, 1, 1)), 4),
        exe(proj(&k(11), c(32, 16, 64, 1, 2)), 1),
        exe(conv_bias_relu(&k(12), c(64, 8, 16, 1, 1)), 3),
        exe(conv_bias_relu(&k(13), c(16, 8, 16, 3, 1)), 3),
        exe(conv_bias_relu(&k(14), c(64, 8, 32, 1, 1)), 1),
        exe(conv_bias_relu(&k(15), c(32, 8, 32, 3, 2)), 1),
        exe(conv_add(&k(16), c(32, 4, 128, 1, 1)), 6),
        exe(proj(&k(17), c(64, 8, 128, 1, 2)), 1),
        exe(conv_bias_relu(&k(18), c(128, 4, 32, 1, 1)), 5),
        exe(conv_bias_relu(&k(19), c(32, 4, 32, 3, 1)), 5),
        exe(global_avg_pool(&k(20), 128, 4), 1),
        exe(dense_add(&k(21), 1, 128, 100), 1),
    ];
    ModelDescriptor::new("mini-resnet50", ks)
}

/// Single-kernel model around an `n × n × n` matmul.
pub fn gemm(n: usize) -> ModelDescriptor {
    let spec = build_matmul(n, n, n)
        .expect("square matmul is valid")
        .renamed(format!("gemm_{n}"));
    ModelDescriptor::new(format!("gemm-{n}"), vec![ModelKernel::executable(spec, 1)])
}

pub const PRESETS: [&str; 4] = ["mini-resnet18", "mini-resnet50", "gemm-256", "gemm-512"];

pub fn preset(name: &str) -> Option<ModelDescriptor> {
    match name {
        "mini-resnet18" => Some(mini_resnet18()),
        "mini-resnet50" => Some(mini_resnet50()),
        other => other
            .strip_prefix("gemm-")
            .and_then(|n| n.parse().ok())
            .filter(|&n| n > 0 && n <= 4096)
            .map(gemm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopnest::KernelClassId;

    #[test]
    fn mini_models_share_classes() {
        let (t, s) = (mini_resnet18(), mini_resnet50());
        let shared = crate::transfer::shared_classes(&t, &s);
        assert_eq!(shared.len(), 5);
        assert!(!s.classes().contains(&KernelClassId::new("conv2d_bias_add_relu")));
        assert_eq!(t.kernels.len(), 18);
        for name in PRESETS {
            assert!(preset(name).is_some(), "{name}");
        }
    }
}
