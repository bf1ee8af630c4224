use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use eat_bench::activations;
use eat_core::diff::{ParamStore, Tape};
use eat_core::layers::{Init, MixedAttention, MixedAttentionConfig, MsaConfig, MultiHeadAttention};
use eat_core::sfc::{gather_table, serialize, Image};
use eat_core::{CurveKind, Grid};

fn curves(c: &mut Criterion) {
    let mut group = c.benchmark_group("sfc_gather_table_256");
    for kind in [CurveKind::Sweep, CurveKind::Scan, CurveKind::ZOrder, CurveKind::Hilbert, CurveKind::SweepInSweep(16)] {
        group.bench_with_input(BenchmarkId::from_parameter(kind), &kind, |b, &k| {
            b.iter(|| gather_table(k, black_box(Grid::square(256))).unwrap())
        });
    }
    group.finish();

    let img = Image::new(224, 224, 3, vec![0u8; 224 * 224 * 3]).unwrap();
    c.bench_function("sfc_serialize_sis16_224x224x3", |b| {
        b.iter(|| serialize(black_box(&img), CurveKind::SweepInSweep(16)).unwrap())
    });
}

fn gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64usize, 192, 384] {
        let (a, w) = (activations(&[196, n], 1), activations(&[n, n], 2));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let mut tape = Tape::<f32>::inference();
                let (x, y) = (tape.constant(a.clone()), tape.constant(w.clone()));
                tape.matmul(x, y).unwrap()
            })
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let (d, l) = (192usize, 196usize);
    let x = activations(&[1, l, d], 3);
    let mut store = ParamStore::<f32>::new();
    let mut init = Init::new(0);
    let msa = MultiHeadAttention::new(&mut store, "msa", MsaConfig { width: d, heads: 3 }, &mut init).unwrap();
    let mixed = MixedAttention::new(&mut store, "mixed", MixedAttentionConfig::new(d, 0.5, 3, 3), &mut init).unwrap();
    let mut group = c.benchmark_group("attention_forward_d192_l196");
    group.bench_function("self_attention", |b| {
        b.iter(|| {
            let mut tape = Tape::inference();
            let v = tape.constant(x.clone());
            msa.attend(&mut tape, &store, v, v, None).unwrap()
        })
    });
    group.bench_function("mixed_p0.5_k3", |b| {
        b.iter(|| {
            let mut tape = Tape::inference();
            let v = tape.constant(x.clone());
            mixed.forward(&mut tape, &store, v, None).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, curves, gemm, attention);
criterion_main!(benches);
