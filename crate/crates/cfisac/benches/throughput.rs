//! Per-seed evaluation throughput: rayon pool against the in-order loop.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cfisac::b2s::B2sConfig;
use cfisac::baselines::{evaluate_scheme, SchemeSpec, SeedContext};
use cfisac::harness::paired_scenario;
use cfisac::scenario::ScenarioConfig;
use cfisac::SystemParams;

fn one_seed(i: usize, spec: &SchemeSpec, sc: &ScenarioConfig, params: &SystemParams, b2s: &B2sConfig) -> f64 {
    let ctx = SeedContext::new(paired_scenario(sc, params, 7, i).unwrap(), params).unwrap();
    evaluate_scheme(spec, &ctx, b2s, None, None).map(|r| r.crb.total_capped()).unwrap_or(f64::NAN)
}

fn throughput(c: &mut Criterion) {
    cfisac::par::init_from_env().unwrap();
    let params = SystemParams::default();
    let sc = ScenarioConfig::default();
    let b2s = B2sConfig::default();
    let mut g = c.benchmark_group("seed_batch");
    g.sample_size(10);
    for scheme in ["heuristic", "cf_fixed"] {
        let spec = SchemeSpec::parse(scheme).unwrap();
        let n = 16;
        g.bench_with_input(BenchmarkId::new("parallel", scheme), &n, |b, &n| {
            b.iter(|| black_box(cfisac::par::map_range(n, |i| one_seed(i, &spec, &sc, &params, &b2s))))
        });
        g.bench_with_input(BenchmarkId::new("sequential", scheme), &n, |b, &n| {
            b.iter(|| black_box(cfisac::par::map_range_seq(n, |i| one_seed(i, &spec, &sc, &params, &b2s))))
        });
    }
    g.finish();
}

criterion_group!(benches, throughput);
criterion_main!(benches);
