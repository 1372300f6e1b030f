use criterion::{criterion_group, criterion_main, Criterion};

use sdiot_core::scenarios::{library_scenario, run_scenario};

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(10);
    for name in ["baseline", "dos", "eavesdrop_uplink"] {
        let spec = library_scenario(name).unwrap().unwrap();
        g.bench_function(name, |b| b.iter(|| run_scenario(&spec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, scenarios);
criterion_main!(benches);
