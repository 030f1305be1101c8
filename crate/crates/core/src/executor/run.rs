use crate::loopnest::{pad_input, KernelError, Role, TensorMap};

use super::lower::{EpiOp, ExecutablePlan, Offs, Offsets, Update, A, ADDEND, B, BIAS, CACHE, NSLOT, OUT};

/// Raw views of the buffers a plan touches. Every offset the plan can
/// produce was bounds-checked against these lengths during lowering.
#[derive(Clone, Copy)]
struct Bufs {
    out: *mut f32,
    a: *const f32,
    b: *const f32,
    bias: *const f32,
    addend: *const f32,
}

// SAFETY: concurrent tasks only write through `out` at offsets derived from
// distinct iterations of a spatial outermost loop; lowering rejects any other
// parallel placement, so writes never alias. The other pointers are read-only.
unsafe impl Send for Bufs {}
unsafe impl Sync for Bufs {}

#[inline(always)]
fn add(a: &Offs, b: &Offs) -> Offs {
    let mut r = *a;
    for s in 0..NSLOT {
        r[s] += b[s];
    }
    r
}

struct Ctx<'p> {
    plan: &'p ExecutablePlan,
    bufs: Bufs,
    dest: *mut f32,
    dslot: usize,
}

impl ExecutablePlan {
    /// Runs the plan, returning a fresh output buffer.
    pub fn execute(&self, inputs: &TensorMap, threads: usize) -> Result<Vec<f32>, KernelError> {
        let mut out = vec![0.0f32; self.spec.output_len()];
        self.execute_into(inputs, &mut out, threads)?;
        Ok(out)
    }

    /// Runs the plan into `out`. `threads > 1` only matters when the plan
    /// has a parallel loop and the `parallel` feature is enabled.
    pub fn execute_into(
        &self,
        inputs: &TensorMap,
        out: &mut [f32],
        threads: usize,
    ) -> Result<(), KernelError> {
        crate::loopnest::check_inputs(&self.spec, inputs)?;
        let expected = self.spec.output_len();
        if out.len() != expected {
            return Err(KernelError::BufferSize {
                role: Role::Output,
                expected,
                got: out.len(),
            });
        }
        let padded;
        let input: &[f32] = match self.spec.pad() {
            Some(stage) => {
                padded = pad_input(stage, &inputs[&Role::Input]);
                &padded
            }
            None => &inputs[&Role::Input],
        };
        let ptr = |role: Role| -> *const f32 {
            match role {
                Role::Input => input.as_ptr(),
                other => inputs.get(&other).map_or(std::ptr::null(), |v| v.as_ptr()),
            }
        };
        let bufs = Bufs {
            out: out.as_mut_ptr(),
            a: ptr(self.operand_roles[0]),
            b: if self.update == Update::MulAcc {
                ptr(self.operand_roles[1])
            } else {
                std::ptr::null()
            },
            bias: ptr(Role::Bias),
            addend: ptr(Role::Addend),
        };
        if self.loops.is_empty() {
            let mut cache = vec![0.0f32; self.cache_len.max(1)];
            self.run_from(0, self.base, bufs, &mut cache);
            return Ok(());
        }
        match (&self.parallel, threads > 1) {
            #[cfg(feature = "parallel")]
            (Some(_), true) => self.run_parallel(bufs, threads),
            _ => {
                let mut cache = vec![0.0f32; self.cache_len];
                self.run_from(0, self.base, bufs, &mut cache);
            }
        }
        Ok(())
    }

    #[cfg(feature = "parallel")]
    fn run_parallel(&self, bufs: Bufs, threads: usize) {
        use rayon::prelude::*;
        let outer = &self.loops[0];
        super::pool::with_pool(threads, || {
            (0..outer.extent).into_par_iter().for_each_init(
                || vec![0.0f32; self.cache_len],
                |cache, i| {
                    let off = add(&self.base, &outer.offsets.at(i));
                    self.run_from(1, off, bufs, cache);
                },
            );
        });
    }

    fn run_from(&self, level: usize, off: Offs, bufs: Bufs, cache: &mut [f32]) {
        let (dest, dslot) = if self.cache_len > 0 {
            (cache.as_mut_ptr(), CACHE)
        } else {
            (bufs.out, OUT)
        };
        let ctx = Ctx {
            plan: self,
            bufs,
            dest,
            dslot,
        };
        ctx.outer(level, &off);
    }
}

impl Ctx<'_> {
    fn outer(&self, level: usize, off: &Offs) {
        if level >= self.plan.tile_level {
            return self.tile(level, off);
        }
        let l = &self.plan.loops[level];
        for i in 0..l.extent {
            self.outer(level + 1, &add(off, &l.offsets.at(i)));
        }
    }

    fn tile(&self, level: usize, off: &Offs) {
        if let Some(v) = self.plan.init {
            let (dest, dslot) = (self.dest, self.dslot);
            self.for_tile(level, off, &mut |o| {
                // SAFETY: offsets bounds-checked at lowering.
                unsafe { *dest.add(o[dslot]) = v }
            });
        }
        self.update(level, off);
        self.flush(level, off);
    }

    /// Visits the tile's output points (spatial loops at or below `level`).
    fn for_tile(&self, level: usize, off: &Offs, f: &mut impl FnMut(&Offs)) {
        let loops = &self.plan.loops;
        let mut level = level;
        while level < loops.len() && loops[level].kind != crate::loopnest::AxisKind::Spatial {
            level += 1;
        }
        if level == loops.len() {
            return f(off);
        }
        let l = &loops[level];
        for i in 0..l.extent {
            self.for_tile(level + 1, &add(off, &l.offsets.at(i)), f);
        }
    }

    fn flush(&self, level: usize, off: &Offs) {
        let p = self.plan;
        let b = self.bufs;
        if p.cache_len > 0 {
            let dest = self.dest;
            self.for_tile(level, off, &mut |o| {
                // SAFETY: offsets bounds-checked at lowering.
                unsafe {
                    let v = epilogue(&p.epilogue, *dest.add(o[CACHE]), o, &b);
                    *b.out.add(o[OUT]) = v;
                }
            });
        } else if !p.epilogue.is_empty() {
            self.for_tile(level, off, &mut |o| {
                // SAFETY: offsets bounds-checked at lowering.
                unsafe {
                    let d = b.out.add(o[OUT]);
                    *d = epilogue(&p.epilogue, *d, o, &b);
                }
            });
        }
    }

    fn update(&self, level: usize, off: &Offs) {
        let loops = &self.plan.loops;
        if level == loops.len() {
            return self.point(off);
        }
        let l = &loops[level];
        if level + 1 == loops.len() {
            return match &l.offsets {
                Offsets::Affine(step) => self.strip(l.extent, off, step),
                Offsets::Table(t) => {
                    for e in t {
                        self.point(&add(off, e));
                    }
                }
            };
        }
        for i in 0..l.extent {
            self.update(level + 1, &add(off, &l.offsets.at(i)));
        }
    }

    #[inline(always)]
    fn point(&self, o: &Offs) {
        let b = &self.bufs;
        // SAFETY: offsets bounds-checked at lowering.
        unsafe {
            let d = self.dest.add(o[self.dslot]);
            match self.plan.update {
                Update::MulAcc => *d += *b.a.add(o[A]) * *b.b.add(o[B]),
                Update::Acc => *d += *b.a.add(o[A]),
                Update::Max => *d = (*d).max(*b.a.add(o[A])),
                Update::Assign => *d = *b.a.add(o[A]),
            }
        }
    }

    /// Innermost affine loop with kernels specialized on the unit/zero
    /// stride patterns that dominate dense kernels.
    fn strip(&self, n: usize, o: &Offs, step: &Offs) {
        let b = &self.bufs;
        let (d, sd) = (o[self.dslot], step[self.dslot]);
        // SAFETY: for every i < n, d + i·sd and the operand offsets are within
        // the bounds checked at lowering, and the destination never overlaps
        // the read-only operands.
        unsafe {
            let dp = self.dest.add(d);
            let ap = b.a.add(o[A]);
            let sa = step[A];
            match self.plan.update {
                Update::MulAcc => {
                    let bp = b.b.add(o[B]);
                    let sb = step[B];
                    match (sd, sa, sb) {
                        (0, 1, 1) => {
                            let (x, y) = (slice(ap, n), slice(bp, n));
                            let mut acc = *dp;
                            for i in 0..n {
                                acc += x[i] * y[i];
                            }
                            *dp = acc;
                        }
                        (0, _, _) => {
                            let mut acc = *dp;
                            for i in 0..n {
                                acc += *ap.add(i * sa) * *bp.add(i * sb);
                            }
                            *dp = acc;
                        }
                        (1, 0, 1) => {
                            let s = *ap;
                            for (d, &y) in slice_mut(dp, n).iter_mut().zip(slice(bp, n)) {
                                *d += s * y;
                            }
                        }
                        (1, 1, 0) => {
                            let s = *bp;
                            for (d, &x) in slice_mut(dp, n).iter_mut().zip(slice(ap, n)) {
                                *d += x * s;
                            }
                        }
                        (1, 1, 1) => {
                            let (x, y) = (slice(ap, n), slice(bp, n));
                            for (i, d) in slice_mut(dp, n).iter_mut().enumerate() {
                                *d += x[i] * y[i];
                            }
                        }
                        _ => {
                            for i in 0..n {
                                *dp.add(i * sd) += *ap.add(i * sa) * *bp.add(i * sb);
                            }
                        }
                    }
                }
                Update::Acc => match (sd, sa) {
                    (0, 1) => {
                        let mut acc = *dp;
                        for &x in slice(ap, n) {
                            acc += x;
                        }
                        *dp = acc;
                    }
                    (1, 1) => {
                        for (d, &x) in slice_mut(dp, n).iter_mut().zip(slice(ap, n)) {
                            *d += x;
                        }
                    }
                    _ => {
                        for i in 0..n {
                            *dp.add(i * sd) += *ap.add(i * sa);
                        }
                    }
                },
                Update::Max => {
                    for i in 0..n {
                        let d = dp.add(i * sd);
                        *d = (*d).max(*ap.add(i * sa));
                    }
                }
                Update::Assign => match (sd, sa) {
                    (1, 1) => slice_mut(dp, n).copy_from_slice(slice(ap, n)),
                    _ => {
                        for i in 0..n {
                            *dp.add(i * sd) = *ap.add(i * sa);
                        }
                    }
                },
            }
        }
    }
}

#[inline(always)]
unsafe fn slice<'a>(p: *const f32, n: usize) -> &'a [f32] {
    // SAFETY: caller guarantees `n` readable elements at `p`.
    unsafe { std::slice::from_raw_parts(p, n) }
}

#[inline(always)]
unsafe fn slice_mut<'a>(p: *mut f32, n: usize) -> &'a mut [f32] {
    // SAFETY: caller guarantees `n` writable, unaliased elements at `p`.
    unsafe { std::slice::from_raw_parts_mut(p, n) }
}

#[inline(always)]
unsafe fn epilogue(ops: &[EpiOp], mut v: f32, o: &Offs, b: &Bufs) -> f32 {
    for op in ops {
        v = match op {
            // SAFETY: bias/addend offsets bounds-checked at lowering.
            EpiOp::AddBias => v + unsafe { *b.bias.add(o[BIAS]) },
            EpiOp::AddTensor => v + unsafe { *b.addend.add(o[ADDEND]) },
            EpiOp::Relu => v.max(0.0),
            EpiOp::Scale(c) => v * c,
        };
    }
    v
}
