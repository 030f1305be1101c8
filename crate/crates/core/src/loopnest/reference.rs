use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AxisKind, Epilogue, Expr, KernelError, KernelSpec, PadStage, Reducer, Role, Stmt};

/// Flat row-major buffers keyed by role.
pub type TensorMap = BTreeMap<Role, Vec<f32>>;

/// Uniform `[-1, 1]` buffers for every input role of `spec`.
pub fn random_inputs(spec: &KernelSpec, seed: u64) -> TensorMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.input_roles()
        .into_iter()
        .map(|role| {
            let len = spec.shapes()[&role].numel();
            let buf = (0..len).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
            (role, buf)
        })
        .collect()
}

pub(crate) fn check_inputs(spec: &KernelSpec, inputs: &TensorMap) -> Result<(), KernelError> {
    for role in spec.input_roles() {
        let buf = inputs.get(&role).ok_or(KernelError::MissingBuffer(role))?;
        let expected = spec.shapes()[&role].numel();
        if buf.len() != expected {
            return Err(KernelError::BufferSize {
                role,
                expected,
                got: buf.len(),
            });
        }
    }
    Ok(())
}

/// Copies an NCHW input into its zero- (or fill-) bordered buffer.
pub fn pad_input(stage: &PadStage, input: &[f32]) -> Vec<f32> {
    let s = stage.source.dims();
    let p = stage.padded.dims();
    let (hp, wp) = (p[2], p[3]);
    let mut out = vec![stage.fill; stage.padded.numel()];
    for plane in 0..s[0] * s[1] {
        for h in 0..s[2] {
            let src = (plane * s[2] + h) * s[3];
            let dst = (plane * hp + h + stage.padding) * wp + stage.padding;
            out[dst..dst + s[3]].copy_from_slice(&input[src..src + s[3]]);
        }
    }
    out
}

/// Interprets the canonical nest directly: for each output point, in
/// row-major spatial order, run init, every reduction point in order, then
/// the epilogue.
pub fn reference_execute(spec: &KernelSpec, inputs: &TensorMap) -> Result<Vec<f32>, KernelError> {
    check_inputs(spec, inputs)?;
    let padded;
    let input: &[f32] = match spec.pad() {
        Some(stage) => {
            padded = pad_input(stage, &inputs[&Role::Input]);
            &padded
        }
        None => &inputs[&Role::Input],
    };
    let read = |role: Role| -> &[f32] {
        match role {
            Role::Input => input,
            other => &inputs[&other],
        }
    };

    let nest = spec.nest();
    let spatial: Vec<usize> = (0..nest.axes.len())
        .filter(|&i| nest.axes[i].kind == AxisKind::Spatial)
        .collect();
    let reduction: Vec<usize> = (0..nest.axes.len())
        .filter(|&i| nest.axes[i].kind == AxisKind::Reduction)
        .collect();
    let mut out = vec![0.0f32; spec.output_len()];
    let mut vals = vec![0usize; nest.axes.len()];

    let eval = |expr: &Expr, vals: &[usize]| -> f32 {
        match expr {
            Expr::Load(a) => read(a.tensor)[a.index(vals)],
            Expr::Mul(a, b) => read(a.tensor)[a.index(vals)] * read(b.tensor)[b.index(vals)],
        }
    };

    loop {
        let mut value = 0.0f32;
        for stmt in &nest.body {
            match stmt {
                Stmt::Init { value: v } => value = *v,
                Stmt::Assign { expr } => value = eval(expr, &vals),
                Stmt::Accumulate { reducer, expr } => {
                    for &r in &reduction {
                        vals[r] = 0;
                    }
                    loop {
                        let x = eval(expr, &vals);
                        value = match reducer {
                            Reducer::Sum => value + x,
                            Reducer::Max => value.max(x),
                        };
                        if !advance(&mut vals, &reduction, nest) {
                            break;
                        }
                    }
                }
                Stmt::Epilogue(e) => {
                    value = match e {
                        Epilogue::AddBias(a) | Epilogue::AddTensor(a) => {
                            value + read(a.tensor)[a.index(&vals)]
                        }
                        Epilogue::Relu => value.max(0.0),
                        Epilogue::Scale(c) => value * c,
                    }
                }
            }
        }
        out[nest.output.index(&vals)] = value;
        if !advance(&mut vals, &spatial, nest) {
            break;
        }
    }
    Ok(out)
}

/// Row-major odometer over `axes` (last fastest). Returns false on wrap.
fn advance(vals: &mut [usize], axes: &[usize], nest: &super::LoopNest) -> bool {
    for &a in axes.iter().rev() {
        vals[a] += 1;
        if vals[a] < nest.axes[a].extent {
            return true;
        }
        vals[a] = 0;
    }
    false
}
