use std::collections::BTreeMap;

use super::{
    Access, Attrs, Axis, AxisKind, Epilogue, Expr, KernelClassId, KernelError, KernelSpec,
    LoopNest, OpKind, PadStage, Reducer, Role, Shape, Stmt,
};

/// `C[N][M] = Σ_K A[N][K] · B[K][M]`, with A as `input` and B as `weights`.
pub fn build_matmul(n: usize, m: usize, k: usize) -> Result<KernelSpec, KernelError> {
    let mut shapes = BTreeMap::new();
    shapes.insert(Role::Input, Shape::new(vec![n, k])?);
    shapes.insert(Role::Weights, Shape::new(vec![k, m])?);
    build_fused_kernel(
        format!("matmul_{n}x{m}x{k}"),
        &[OpKind::MatMul],
        &shapes,
        &Attrs::default(),
    )
}

/// Builds a kernel from a main op (optional) followed by elementwise
/// epilogue ops. A `Pad` may appear only directly before `Conv2d` or
/// `MaxPool2d`; it is implied there if absent.
pub fn build_fused_kernel(
    name: impl Into<String>,
    ops: &[OpKind],
    shapes: &BTreeMap<Role, Shape>,
    attrs: &Attrs,
) -> Result<KernelSpec, KernelError> {
    let (main, epilogue_ops) = split_ops(ops)?;
    let input = shapes
        .get(&Role::Input)
        .ok_or(KernelError::MissingShape(Role::Input))?;

    let main_nest = match main {
        Some(OpKind::Conv2d) => conv2d(input, weights(shapes)?, attrs)?,
        Some(OpKind::MaxPool2d) => max_pool2d(input, attrs)?,
        Some(OpKind::GlobalAvgPool2d) => global_avg_pool2d(input)?,
        Some(OpKind::Dense) => dense(input, weights(shapes)?)?,
        Some(OpKind::MatMul) => matmul(input, weights(shapes)?)?,
        None => elementwise(input),
        Some(other) => unreachable!("{other} is not a main op"),
    };

    let MainNest {
        axes,
        output_shape,
        out_terms,
        out_axis_of_dim,
        init,
        update,
        mut epilogue,
        pad,
    } = main_nest;

    let mut used = vec![Role::Input];
    if matches!(
        main,
        Some(OpKind::Conv2d) | Some(OpKind::Dense) | Some(OpKind::MatMul)
    ) {
        used.push(Role::Weights);
    }

    let channel_dim = if output_shape.rank() >= 2 { 1 } else { 0 };
    for op in &epilogue_ops {
        match op {
            OpKind::BiasAdd => {
                let bias = shapes
                    .get(&Role::Bias)
                    .ok_or(KernelError::MissingShape(Role::Bias))?;
                let channels = output_shape.dims()[channel_dim];
                if bias.dims() != [channels] {
                    return Err(KernelError::ShapeMismatch(format!(
                        "bias shape {bias} does not match {channels} output channels"
                    )));
                }
                let terms = match out_axis_of_dim[channel_dim] {
                    Some(axis) => vec![(axis, 1)],
                    None => vec![],
                };
                epilogue.push(Epilogue::AddBias(Access {
                    tensor: Role::Bias,
                    terms,
                    offset: 0,
                }));
                used.push(Role::Bias);
            }
            OpKind::ElemAdd => {
                let addend = shapes
                    .get(&Role::Addend)
                    .ok_or(KernelError::MissingShape(Role::Addend))?;
                if addend != &output_shape {
                    return Err(KernelError::ShapeMismatch(format!(
                        "addend shape {addend} does not match output shape {output_shape}"
                    )));
                }
                epilogue.push(Epilogue::AddTensor(Access {
                    tensor: Role::Addend,
                    terms: out_terms.clone(),
                    offset: 0,
                }));
                used.push(Role::Addend);
            }
            OpKind::ReLU => epilogue.push(Epilogue::Relu),
            other => unreachable!("{other} is not an epilogue op"),
        }
    }

    if let Some(out) = shapes.get(&Role::Output) {
        if out != &output_shape {
            return Err(KernelError::ShapeMismatch(format!(
                "declared output shape {out} differs from derived {output_shape}"
            )));
        }
    }
    for role in shapes.keys() {
        if *role != Role::Output && !used.contains(role) {
            return Err(KernelError::ShapeMismatch(format!(
                "tensor `{role}` is not read by this op sequence"
            )));
        }
    }

    let mut final_shapes: BTreeMap<Role, Shape> = used
        .iter()
        .map(|r| (*r, shapes[r].clone()))
        .collect();
    final_shapes.insert(Role::Output, output_shape);

    let mut body = Vec::new();
    if let Some(value) = init {
        body.push(Stmt::Init { value });
    }
    body.push(update);
    body.extend(epilogue.into_iter().map(Stmt::Epilogue));

    let mut normalized = Vec::with_capacity(epilogue_ops.len() + 2);
    if let Some(op) = main {
        if matches!(op, OpKind::Conv2d | OpKind::MaxPool2d) {
            normalized.push(OpKind::Pad);
        }
        normalized.push(op);
    }
    normalized.extend(epilogue_ops);
    let class = KernelClassId::from_ops(&normalized);

    Ok(KernelSpec {
        name: name.into(),
        ops: normalized,
        shapes: final_shapes,
        attrs: attrs.clone(),
        nest: LoopNest {
            axes,
            output: Access {
                tensor: Role::Output,
                terms: out_terms,
                offset: 0,
            },
            body,
        },
        pad,
        class,
    })
}

fn split_ops(ops: &[OpKind]) -> Result<(Option<OpKind>, Vec<OpKind>), KernelError> {
    if ops.is_empty() {
        return Err(KernelError::UnsupportedClass("empty op sequence".into()));
    }
    let mut stripped = Vec::with_capacity(ops.len());
    for (i, op) in ops.iter().enumerate() {
        if *op == OpKind::Pad {
            match ops.get(i + 1) {
                Some(OpKind::Conv2d) | Some(OpKind::MaxPool2d) => continue,
                _ => {
                    return Err(KernelError::UnsupportedClass(
                        "pad must directly precede conv2d or max_pool2d".into(),
                    ))
                }
            }
        }
        stripped.push(*op);
    }
    let (main, rest) = match stripped.first() {
        Some(op) if !op.is_epilogue() => (Some(*op), &stripped[1..]),
        Some(_) => (None, &stripped[..]),
        None => unreachable!("a lone pad is rejected above"),
    };
    if let Some(bad) = rest.iter().find(|op| !op.is_epilogue()) {
        let seq: Vec<&str> = ops.iter().map(|o| o.name()).collect();
        return Err(KernelError::UnsupportedClass(format!(
            "`{bad}` cannot follow another op in {seq:?}"
        )));
    }
    Ok((main, rest.to_vec()))
}

struct MainNest {
    axes: Vec<Axis>,
    output_shape: Shape,
    out_terms: Vec<(usize, usize)>,
    out_axis_of_dim: Vec<Option<usize>>,
    init: Option<f32>,
    update: Stmt,
    epilogue: Vec<Epilogue>,
    pad: Option<PadStage>,
}

fn weights(shapes: &BTreeMap<Role, Shape>) -> Result<&Shape, KernelError> {
    shapes
        .get(&Role::Weights)
        .ok_or(KernelError::MissingShape(Role::Weights))
}

fn axis(name: &str, extent: usize, kind: AxisKind) -> Axis {
    Axis {
        name: name.to_string(),
        extent,
        kind,
    }
}

fn rank_check(shape: &Shape, rank: usize, what: &str) -> Result<(), KernelError> {
    if shape.rank() != rank {
        return Err(KernelError::ShapeMismatch(format!(
            "{what} expects a rank-{rank} tensor, got {shape}"
        )));
    }
    Ok(())
}

fn access(tensor: Role, terms: Vec<(usize, usize)>) -> Access {
    Access {
        tensor,
        terms,
        offset: 0,
    }
}

/// Output extent of a sliding window, or a mismatch error if the window
/// does not fit.
fn window_extent(size: usize, window: usize, stride: usize, what: &str) -> Result<usize, KernelError> {
    if stride == 0 {
        return Err(KernelError::ShapeMismatch(format!("{what}: stride must be ≥ 1")));
    }
    if window > size {
        return Err(KernelError::ShapeMismatch(format!(
            "{what}: window {window} exceeds padded extent {size}"
        )));
    }
    Ok((size - window) / stride + 1)
}

fn padded(input: &Shape, padding: usize, fill: f32) -> Result<(Shape, Option<PadStage>), KernelError> {
    if padding == 0 {
        return Ok((input.clone(), None));
    }
    let d = input.dims();
    let padded = Shape::new(vec![d[0], d[1], d[2] + 2 * padding, d[3] + 2 * padding])?;
    let stage = PadStage {
        padding,
        fill,
        source: input.clone(),
        padded: padded.clone(),
    };
    Ok((padded, Some(stage)))
}

fn conv2d(input: &Shape, weights: &Shape, attrs: &Attrs) -> Result<MainNest, KernelError> {
    rank_check(input, 4, "conv2d input")?;
    rank_check(weights, 4, "conv2d weights")?;
    let [n, c, _, _] = dims4(input);
    let [co, ci, kh, kw] = dims4(weights);
    if ci != c {
        return Err(KernelError::ShapeMismatch(format!(
            "conv2d weights expect {ci} input channels, input has {c}"
        )));
    }
    let stride = attrs.stride.unwrap_or(1);
    let (src, pad) = padded(input, attrs.padding, 0.0)?;
    let [_, _, hp, wp] = dims4(&src);
    let oh = window_extent(hp, kh, stride, "conv2d height")?;
    let ow = window_extent(wp, kw, stride, "conv2d width")?;
    let output_shape = Shape::new(vec![n, co, oh, ow])?;

    use AxisKind::*;
    let axes = vec![
        axis("N", n, Spatial),
        axis("CO", co, Spatial),
        axis("H", oh, Spatial),
        axis("W", ow, Spatial),
        axis("CI", c, Reduction),
        axis("KH", kh, Reduction),
        axis("KW", kw, Reduction),
    ];
    let os = output_shape.strides();
    let is = src.strides();
    let ws = weights.strides();
    let x = access(
        Role::Input,
        vec![
            (0, is[0]),
            (4, is[1]),
            (2, stride * is[2]),
            (5, is[2]),
            (3, stride * is[3]),
            (6, is[3]),
        ],
    );
    let w = access(Role::Weights, vec![(1, ws[0]), (4, ws[1]), (5, ws[2]), (6, ws[3])]);
    Ok(MainNest {
        axes,
        out_terms: vec![(0, os[0]), (1, os[1]), (2, os[2]), (3, os[3])],
        out_axis_of_dim: vec![Some(0), Some(1), Some(2), Some(3)],
        output_shape,
        init: Some(0.0),
        update: Stmt::Accumulate {
            reducer: Reducer::Sum,
            expr: Expr::Mul(x, w),
        },
        epilogue: vec![],
        pad,
    })
}

fn max_pool2d(input: &Shape, attrs: &Attrs) -> Result<MainNest, KernelError> {
    rank_check(input, 4, "max_pool2d input")?;
    let [ph, pw] = attrs.pool.ok_or_else(|| {
        KernelError::ShapeMismatch("max_pool2d requires attrs.pool".into())
    })?;
    if ph == 0 || pw == 0 {
        return Err(KernelError::ShapeMismatch("pool window must be ≥ 1".into()));
    }
    let (sh, sw) = match attrs.stride {
        Some(s) => (s, s),
        None => (ph, pw),
    };
    let [n, c, _, _] = dims4(input);
    let (src, pad) = padded(input, attrs.padding, f32::NEG_INFINITY)?;
    let [_, _, hp, wp] = dims4(&src);
    let oh = window_extent(hp, ph, sh, "max_pool2d height")?;
    let ow = window_extent(wp, pw, sw, "max_pool2d width")?;
    let output_shape = Shape::new(vec![n, c, oh, ow])?;

    use AxisKind::*;
    let axes = vec![
        axis("N", n, Spatial),
        axis("C", c, Spatial),
        axis("H", oh, Spatial),
        axis("W", ow, Spatial),
        axis("KH", ph, Reduction),
        axis("KW", pw, Reduction),
    ];
    let os = output_shape.strides();
    let is = src.strides();
    let x = access(
        Role::Input,
        vec![
            (0, is[0]),
            (1, is[1]),
            (2, sh * is[2]),
            (4, is[2]),
            (3, sw * is[3]),
            (5, is[3]),
        ],
    );
    Ok(MainNest {
        axes,
        out_terms: vec![(0, os[0]), (1, os[1]), (2, os[2]), (3, os[3])],
        out_axis_of_dim: vec![Some(0), Some(1), Some(2), Some(3)],
        output_shape,
        init: Some(f32::NEG_INFINITY),
        update: Stmt::Accumulate {
            reducer: Reducer::Max,
            expr: Expr::Load(x),
        },
        epilogue: vec![],
        pad,
    })
}

fn global_avg_pool2d(input: &Shape) -> Result<MainNest, KernelError> {
    rank_check(input, 4, "global_avg_pool2d input")?;
    let [n, c, h, w] = dims4(input);
    let output_shape = Shape::new(vec![n, c, 1, 1])?;
    use AxisKind::*;
    let axes = vec![
        axis("N", n, Spatial),
        axis("C", c, Spatial),
        axis("RH", h, Reduction),
        axis("RW", w, Reduction),
    ];
    let is = input.strides();
    let x = access(Role::Input, vec![(0, is[0]), (1, is[1]), (2, is[2]), (3, is[3])]);
    Ok(MainNest {
        axes,
        out_terms: vec![(0, c), (1, 1)],
        out_axis_of_dim: vec![Some(0), Some(1), None, None],
        output_shape,
        init: Some(0.0),
        update: Stmt::Accumulate {
            reducer: Reducer::Sum,
            expr: Expr::Load(x),
        },
        epilogue: vec![Epilogue::Scale(1.0 / (h * w) as f32)],
        pad: None,
    })
}

fn dense(input: &Shape, weights: &Shape) -> Result<MainNest, KernelError> {
    rank_check(input, 2, "dense input")?;
    rank_check(weights, 2, "dense weights")?;
    let (n, k) = (input.dims()[0], input.dims()[1]);
    let (m, wk) = (weights.dims()[0], weights.dims()[1]);
    if wk != k {
        return Err(KernelError::ShapeMismatch(format!(
            "dense weights expect {wk} input features, input has {k}"
        )));
    }
    let x = access(Role::Input, vec![(0, k), (2, 1)]);
    let w = access(Role::Weights, vec![(1, k), (2, 1)]);
    gemm_like(n, m, k, x, w)
}

fn matmul(input: &Shape, weights: &Shape) -> Result<MainNest, KernelError> {
    rank_check(input, 2, "matmul A")?;
    rank_check(weights, 2, "matmul B")?;
    let (n, k) = (input.dims()[0], input.dims()[1]);
    let (wk, m) = (weights.dims()[0], weights.dims()[1]);
    if wk != k {
        return Err(KernelError::ShapeMismatch(format!(
            "matmul B has {wk} rows, A has {k} columns"
        )));
    }
    let a = access(Role::Input, vec![(0, k), (2, 1)]);
    let b = access(Role::Weights, vec![(2, m), (1, 1)]);
    gemm_like(n, m, k, a, b)
}

fn gemm_like(n: usize, m: usize, k: usize, a: Access, b: Access) -> Result<MainNest, KernelError> {
    use AxisKind::*;
    Ok(MainNest {
        axes: vec![axis("N", n, Spatial), axis("M", m, Spatial), axis("K", k, Reduction)],
        output_shape: Shape::new(vec![n, m])?,
        out_terms: vec![(0, m), (1, 1)],
        out_axis_of_dim: vec![Some(0), Some(1)],
        init: Some(0.0),
        update: Stmt::Accumulate {
            reducer: Reducer::Sum,
            expr: Expr::Mul(a, b),
        },
        epilogue: vec![],
        pad: None,
    })
}

fn elementwise(input: &Shape) -> MainNest {
    let strides = input.strides();
    let axes = input
        .dims()
        .iter()
        .enumerate()
        .map(|(i, &d)| axis(&format!("D{i}"), d, AxisKind::Spatial))
        .collect();
    let terms: Vec<(usize, usize)> = strides.iter().copied().enumerate().collect();
    MainNest {
        axes,
        output_shape: input.clone(),
        out_axis_of_dim: (0..input.rank()).map(Some).collect(),
        init: None,
        update: Stmt::Assign {
            expr: Expr::Load(access(Role::Input, terms.clone())),
        },
        out_terms: terms,
        epilogue: vec![],
        pad: None,
    }
}

fn dims4(s: &Shape) -> [usize; 4] {
    let d = s.dims();
    [d[0], d[1], d[2], d[3]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loopnest::kernel_class_of;

    fn shapes(pairs: &[(Role, &[usize])]) -> BTreeMap<Role, Shape> {
        pairs
            .iter()
            .map(|(r, d)| (*r, Shape::new(d.to_vec()).unwrap()))
            .collect()
    }

    fn conv_bias_relu(c: usize, hw: usize, co: usize) -> KernelSpec {
        build_fused_kernel(
            "k",
            &[OpKind::Pad, OpKind::Conv2d, OpKind::BiasAdd, OpKind::ReLU],
            &shapes(&[
                (Role::Input, &[1, c, hw, hw]),
                (Role::Weights, &[co, c, 3, 3]),
                (Role::Bias, &[co]),
            ]),
            &Attrs {
                stride: Some(1),
                padding: 1,
                pool: None,
            },
        )
        .unwrap()
    }

    #[test]
    fn matmul_512_nest() {
        let k = build_matmul(512, 512, 512).unwrap();
        let names: Vec<_> = k.nest().axes.iter().map(|a| (a.name.as_str(), a.extent, a.kind)).collect();
        assert_eq!(
            names,
            vec![
                ("N", 512, AxisKind::Spatial),
                ("M", 512, AxisKind::Spatial),
                ("K", 512, AxisKind::Reduction)
            ]
        );
        assert_eq!(kernel_class_of(&k).as_str(), "matmul");
        assert!(matches!(k.nest().body[0], Stmt::Init { value } if value == 0.0));
        assert!(matches!(k.nest().body[1], Stmt::Accumulate { reducer: Reducer::Sum, .. }));
    }

    #[test]
    fn matmul_rejects_zero_extent() {
        assert!(build_matmul(0, 4, 4).is_err());
        assert!(build_matmul(4, 4, 0).is_err());
    }

    #[test]
    fn resnet18_kernel_classes() {
        let e = conv_bias_relu(64, 56, 64);
        assert_eq!(e.class().as_str(), "conv2d_bias_relu");
        assert_eq!(e.shape(Role::Output).unwrap().dims(), &[1, 64, 56, 56]);
        let d = build_fused_kernel(
            "dense",
            &[OpKind::Dense, OpKind::ElemAdd],
            &shapes(&[
                (Role::Input, &[1, 512]),
                (Role::Weights, &[1000, 512]),
                (Role::Addend, &[1, 1000]),
            ]),
            &Attrs::default(),
        )
        .unwrap();
        assert_eq!(d.class().as_str(), "dense_add");
    }

    #[test]
    fn class_is_shape_independent() {
        assert_eq!(conv_bias_relu(64, 56, 64).class(), conv_bias_relu(512, 7, 512).class());
        assert_eq!(
            build_matmul(2, 3, 4).unwrap().class(),
            build_matmul(100, 1, 7).unwrap().class()
        );
    }

    #[test]
    fn pad_is_normalized() {
        let with = conv_bias_relu(4, 8, 4);
        let without = build_fused_kernel(
            "k",
            &[OpKind::Conv2d, OpKind::BiasAdd, OpKind::ReLU],
            &shapes(&[
                (Role::Input, &[1, 4, 8, 8]),
                (Role::Weights, &[4, 4, 3, 3]),
                (Role::Bias, &[4]),
            ]),
            &Attrs {
                stride: Some(1),
                padding: 1,
                pool: None,
            },
        )
        .unwrap();
        assert_eq!(with.ops(), without.ops());
        assert_eq!(with.nest(), without.nest());
    }

    #[test]
    fn rejects_inconsistent_fusion() {
        let err = build_fused_kernel(
            "k",
            &[OpKind::Conv2d, OpKind::BiasAdd],
            &shapes(&[
                (Role::Input, &[1, 4, 8, 8]),
                (Role::Weights, &[8, 4, 3, 3]),
                (Role::Bias, &[4]),
            ]),
            &Attrs::default(),
        )
        .unwrap_err();
        assert!(matches!(err, KernelError::ShapeMismatch(_)));

        let err = build_fused_kernel(
            "k",
            &[OpKind::Conv2d],
            &shapes(&[(Role::Input, &[1, 4, 8, 8]), (Role::Weights, &[8, 3, 3, 3])]),
            &Attrs::default(),
        )
        .unwrap_err();
        assert!(matches!(err, KernelError::ShapeMismatch(_)));
    }

    #[test]
    fn rejects_unsupported_sequences() {
        let s = shapes(&[(Role::Input, &[1, 4, 8, 8]), (Role::Weights, &[4, 4, 3, 3])]);
        for ops in [
            vec![OpKind::Conv2d, OpKind::Conv2d],
            vec![OpKind::ReLU, OpKind::Conv2d],
            vec![OpKind::Pad, OpKind::ReLU],
            vec![],
        ] {
            assert!(matches!(
                build_fused_kernel("k", &ops, &s, &Attrs::default()),
                Err(KernelError::UnsupportedClass(_))
            ));
        }
    }

    #[test]
    fn rejects_unused_tensors() {
        let s = shapes(&[(Role::Input, &[1, 8]), (Role::Bias, &[8])]);
        assert!(build_fused_kernel("k", &[OpKind::ReLU], &s, &Attrs::default()).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(conv_bias_relu(8, 14, 16), conv_bias_relu(8, 14, 16));
    }

    #[test]
    fn reduction_axes_never_index_output() {
        let k = conv_bias_relu(8, 14, 16);
        for (i, a) in k.nest().axes.iter().enumerate() {
            if a.kind == AxisKind::Reduction {
                assert_eq!(k.nest().output.coef(i), 0);
            }
        }
    }
}
