use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use switchflow::flows::march_inverse_flow;
use switchflow::ibp::ibp_gradient_with_spline;
use switchflow::quadrature::CompositeParams;
use switchflow::sampler::{embedded_chain, SwitchingConfig};
use switchflow::special_flow::{special_step, Roof, Rotation, SpecialFlowSpec, SpecialPoint};
use switchflow::transfer::SingleSwitchPlan;
use switchflow::{Rule1d, TorusPoint, TransferOperator, Vec2};
use switchflow_bench::{conjugated, smooth_density};

fn rule() -> Rule1d {
    Rule1d::composite_exponential(1.0, &CompositeParams::default()).unwrap()
}

fn flows(c: &mut Criterion) {
    let pair = conjugated();
    let rule = rule();
    let x = Vec2::new(0.3, 0.7);
    c.bench_function("march_variational_296_nodes", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            march_inverse_flow(&pair.u0, &x, rule.nodes(), true, |_, st| {
                acc += st.det();
                Ok(())
            })
            .unwrap();
            black_box(acc)
        })
    });
}

fn transfer(c: &mut Criterion) {
    let pair = conjugated();
    let n = 32;
    let h = smooth_density(n);
    let mut group = c.benchmark_group("transfer");
    group.sample_size(10);
    group.bench_function("plan_build_n32", |b| {
        b.iter(|| SingleSwitchPlan::build(&pair, 0, &rule(), n).unwrap())
    });
    let op = TransferOperator::new(pair.clone(), rule()).with_plans(n).unwrap();
    group.bench_function("apply_cached_n32", |b| b.iter(|| op.apply(black_box(&h)).unwrap()));
    group.finish();
}

fn ibp(c: &mut Criterion) {
    let pair = conjugated();
    let spline = smooth_density(32).spline();
    let rule = rule();
    let x = TorusPoint::new(0.2, 0.6);
    let mut group = c.benchmark_group("ibp");
    group.sample_size(10);
    group.bench_function("pointwise_gradient", |b| {
        b.iter(|| ibp_gradient_with_spline(&spline, &pair, &rule, 1.0, &x, Vec2::new(1.0, 0.0)).unwrap())
    });
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let cfg = SwitchingConfig::new(conjugated(), 1.0, 1);
    c.bench_function("embedded_chain_1000_steps", |b| {
        b.iter(|| embedded_chain(&cfg, TorusPoint::new(0.1, 0.2), 1000).unwrap())
    });
    let spec = SpecialFlowSpec::new(Rotation::Golden, Roof::sinusoid(1.0, 0.3)).unwrap();
    c.bench_function("special_step_t200", |b| {
        b.iter_batched(
            || SpecialPoint { r: 0.1, h: 0.2 },
            |p| special_step(&spec, p, 200.0),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, flows, transfer, ibp, sampling);
criterion_main!(benches);
