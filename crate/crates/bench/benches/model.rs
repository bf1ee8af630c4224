use criterion::{black_box, criterion_group, criterion_main, Criterion};
use eat_bench::pixels;
use eat_core::diff::Tape;
use eat_core::{EatConfig, EatModel};

fn micro(c: &mut Criterion) {
    let model = EatModel::<f32>::build(EatConfig::micro()).unwrap();
    let batch = pixels(32, 28);
    let mut group = c.benchmark_group("micro_batch32");
    group.bench_function("logits", |b| b.iter(|| model.logits(black_box(&batch)).unwrap()));
    group.bench_function("forward_backward", |b| {
        let labels: Vec<usize> = (0..32).map(|i| i % 10).collect();
        let mut store = model.store.clone();
        b.iter(|| {
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, &batch, None).unwrap();
            let loss = tape.cross_entropy_mean(logits, &labels).unwrap();
            tape.backward(loss, &mut store).unwrap()
        })
    });
    group.finish();
}

fn tiny_variant(c: &mut Criterion) {
    let model = EatModel::<f32>::build(EatConfig::variant("eat-ti").unwrap()).unwrap();
    let image = pixels(1, 224).repeat(3);
    let mut group = c.benchmark_group("eat_ti");
    group.sample_size(10);
    group.bench_function("logits_224", |b| b.iter(|| model.logits(black_box(&image)).unwrap()));
    group.finish();
}

criterion_group!(benches, micro, tiny_variant);
criterion_main!(benches);
