use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowdist::io::{decode_flo, encode_flo};
use flowdist::{
    block_matching_flow, ddim_invert, ddim_reverse_chain, sample_neighbors, synth_scene, warp_image,
    BlockMatchParams, ConditioningVector, FlowField, GaussianOraclePredictor, LatentState, NearbyConfig,
    NoiseSchedule, RngStream, ScheduleKind, SceneSpec,
};

fn texture(size: usize) -> flowdist::ImagePlane {
    let spec = SceneSpec::RandomTexture {
        height: size,
        width: size,
        channels: 1,
    };
    synth_scene(&spec, &mut RngStream::new(1, 0)).unwrap()
}

fn block_matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("block_matching");
    for size in [32, 64] {
        let x0 = texture(size);
        let x1 = warp_image(&x0, &FlowField::constant(size, size, 2.0, -1.0)).unwrap();
        let params = BlockMatchParams::default();
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| block_matching_flow(black_box(&x0), black_box(&x1), &params).unwrap())
        });
    }
    group.finish();
}

fn ddim_chain(c: &mut Criterion) {
    let s = NoiseSchedule::build(ScheduleKind::LinearBeta, 1000).unwrap().strided(250).unwrap();
    let p = GaussianOraclePredictor::new(vec![0.5], 0.01, s.clone()).unwrap();
    let e = ConditioningVector::zeros(1);
    let data = RngStream::new(2, 0).standard_normal_vector(1024).unwrap();
    let z0 = LatentState::from_vec(data).unwrap();
    let zt = ddim_invert(&z0, &e, &s, &p, 250).unwrap();
    c.bench_function("ddim_reverse_chain/1024x250", |b| {
        b.iter(|| ddim_reverse_chain(black_box(&zt), &e, &s, &p).unwrap())
    });
    c.bench_function("ddim_invert/1024x250", |b| b.iter(|| ddim_invert(black_box(&z0), &e, &s, &p, 250).unwrap()));
}

fn nearby(c: &mut Criterion) {
    let data = RngStream::new(3, 0).standard_normal_vector(16384).unwrap();
    let z0 = LatentState::from_vec(data).unwrap();
    let cfg = NearbyConfig::new(30.0, 64);
    c.bench_function("sample_neighbors/16384x64", |b| {
        b.iter(|| sample_neighbors(black_box(&z0), &cfg, 7).unwrap())
    });
}

fn flo_codec(c: &mut Criterion) {
    let f = FlowField::from_fn(256, 256, |y, x| (x as f64 * 0.1, -(y as f64) * 0.05)).unwrap();
    let bytes = encode_flo(&f).unwrap();
    c.bench_function("encode_flo/256x256", |b| b.iter(|| encode_flo(black_box(&f)).unwrap()));
    c.bench_function("decode_flo/256x256", |b| b.iter(|| decode_flo(black_box(&bytes)).unwrap()));
}

criterion_group!(benches, block_matching, ddim_chain, nearby, flo_codec);
criterion_main!(benches);
