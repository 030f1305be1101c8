#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;

use schedlift::loopnest::{build_fused_kernel, build_matmul, Attrs, KernelSpec, OpKind, Role, Shape};
use schedlift::zoo::{self, Conv};

/// Kernel families with small shapes; every member of one family shares a
/// class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    MatMul,
    ConvAdd,
    ConvBiasRelu,
    ConvBiasAddRelu,
    MaxPool,
    GlobalAvgPool,
    DenseAdd,
    Dense,
}

pub const FAMILIES: [Family; 8] = [
    Family::MatMul,
    Family::ConvAdd,
    Family::ConvBiasRelu,
    Family::ConvBiasAddRelu,
    Family::MaxPool,
    Family::GlobalAvgPool,
    Family::DenseAdd,
    Family::Dense,
];

fn pick<R: Rng>(rng: &mut R, xs: &[usize]) -> usize {
    *xs.choose(rng).unwrap()
}

pub fn random_kernel<R: Rng>(family: Family, rng: &mut R) -> KernelSpec {
    let conv = |rng: &mut R| {
        let k = pick(rng, &[1, 3]);
        Conv {
            ci: pick(rng, &[1, 2, 3, 4]),
            hw: pick(rng, &[4, 6, 8]),
            co: pick(rng, &[1, 2, 4, 8]),
            k,
            stride: pick(rng, &[1, 2]),
            pad: pick(rng, &[0, k / 2]),
        }
    };
    let r = match family {
        Family::MatMul => build_matmul(
            pick(rng, &[1, 2, 4, 6, 8, 12, 16]),
            pick(rng, &[1, 2, 4, 8, 12, 16, 24]),
            pick(rng, &[1, 3, 4, 8, 16]),
        ),
        Family::ConvAdd => zoo::conv_add("k", conv(rng)),
        Family::ConvBiasRelu => zoo::conv_bias_relu("k", conv(rng)),
        Family::ConvBiasAddRelu => zoo::conv_bias_add_relu("k", conv(rng)),
        Family::MaxPool => {
            let pool = pick(rng, &[2, 3]);
            zoo::max_pool(
                "k",
                pick(rng, &[1, 2, 4]),
                pick(rng, &[4, 6, 8]),
                pool,
                pick(rng, &[1, 2]),
                pick(rng, &[0, 1]),
            )
        }
        Family::GlobalAvgPool => {
            zoo::global_avg_pool("k", pick(rng, &[1, 2, 8]), pick(rng, &[2, 4, 7]))
        }
        Family::DenseAdd => zoo::dense_add(
            "k",
            pick(rng, &[1, 2]),
            pick(rng, &[4, 8, 16]),
            pick(rng, &[4, 8, 12]),
        ),
        Family::Dense => {
            let (b, f, u) = (pick(rng, &[1, 3]), pick(rng, &[4, 8]), pick(rng, &[2, 8]));
            let mut shapes = BTreeMap::new();
            shapes.insert(Role::Input, Shape::new(vec![b, f]).unwrap());
            shapes.insert(Role::Weights, Shape::new(vec![u, f]).unwrap());
            build_fused_kernel("k", &[OpKind::Dense, OpKind::ReLU], &shapes, &Attrs::default())
        }
    };
    r.expect("generated shapes are valid")
}

pub fn first_mismatch(got: &[f32], want: &[f32]) -> Option<(usize, f32, f32)> {
    got.iter()
        .zip(want)
        .enumerate()
        .find(|(_, (g, w))| !schedlift::executor::within_tolerance(**g, **w))
        .map(|(i, (g, w))| (i, *g, *w))
}
