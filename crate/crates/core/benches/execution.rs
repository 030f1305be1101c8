//! One-thread versus pooled execution of the same 256x256x256 GEMM plan.
//! Built without the `parallel` feature both variants run on the calling
//! thread, which makes the sequential fallback's overhead visible.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use schedlift::executor::{build_plan, resolve_threads};
use schedlift::loopnest::{build_matmul, random_inputs};
use schedlift::schedule::{Schedule, SchedulePrimitive as P};

fn gemm(c: &mut Criterion) {
    let spec = build_matmul(256, 256, 256).unwrap();
    let schedule = Schedule::new(
        spec.class().clone(),
        vec![
            P::split("N", 32),
            P::split("M", 64),
            P::reorder(&["N_o", "M_o", "N_i", "K", "M_i"]),
            P::parallel("N_o"),
            P::vectorize("M_i"),
        ],
    );
    let plan = build_plan(&schedule, &spec).unwrap();
    let inputs = random_inputs(&spec, 1);
    let pooled = resolve_threads(None).max(2);

    let mut group = c.benchmark_group("gemm256");
    group.sample_size(10);
    for (label, threads) in [("sequential", 1), ("parallel", pooled)] {
        group.bench_with_input(BenchmarkId::new(label, threads), &threads, |b, &t| {
            b.iter(|| plan.execute(&inputs, t).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gemm);
criterion_main!(benches);
