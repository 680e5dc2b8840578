use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use texsur_bench::{ensemble, gaussian, model, rng, texture};
use texsur_core::codec::{encode_image, CodecConfig, Codebook, QuantizerConfig};
use texsur_core::compare::gaussian_kld;
use texsur_core::gaussianize::{phi, phi_inverse, LAMBDA};
use texsur_core::pyramid::{build_pyramid, reconstruct};
use texsur_core::synthesis::synthesize;
use texsur_core::{AnalysisConfig, Analyzer, Gaussian, PyramidConfig, SynthesisConfig};

fn pyramid(c: &mut Criterion) {
    for n in [64, 256] {
        let img = texture(n, 1);
        let cfg = PyramidConfig::new(4, 4, n).unwrap();
        c.bench_function(&format!("pyramid round trip {n}"), |b| {
            b.iter(|| reconstruct(&build_pyramid(&img, cfg).unwrap()).unwrap())
        });
    }
}

fn analysis(c: &mut Criterion) {
    let analyzer = Analyzer::new(AnalysisConfig::default()).unwrap();
    let patch = texture(64, 2);
    c.bench_function("analyze 64", |b| b.iter(|| analyzer.analyze(&patch).unwrap()));
    let (p, trace) = analyzer.forward(&patch).unwrap();
    let g = vec![1.0; p.len()];
    c.bench_function("analysis vjp 64", |b| b.iter(|| analyzer.vjp(&trace, &g).unwrap()));
    let v = ensemble(1, 3).pop().unwrap();
    c.bench_function("phi round trip", |b| {
        b.iter(|| phi(&phi_inverse(&v).unwrap(), LAMBDA).unwrap())
    });
}

fn synthesis(c: &mut Criterion) {
    let analyzer = Analyzer::new(AnalysisConfig::default()).unwrap();
    let target = analyzer.analyze(&texture(64, 4)).unwrap();
    let cfg = SynthesisConfig {
        max_iters: 5,
        ..SynthesisConfig::default()
    };
    let mut group = c.benchmark_group("synthesis");
    group.sample_size(10);
    group.bench_function("5 iterations 64", |b| {
        b.iter(|| synthesize(&target, analyzer.config(), &cfg, &mut rng(5)).unwrap())
    });
    group.finish();
}

fn meta(c: &mut Criterion) {
    let data: Vec<Vec<f64>> = gaussian(40, 6).sample(&mut rng(7), 2000);
    c.bench_function("fit 40-d gaussian from 2000", |b| b.iter(|| Gaussian::fit(&data).unwrap()));
    let (g0, g1) = (gaussian(100, 8), gaussian(100, 9));
    c.bench_function("kld 100-d", |b| {
        b.iter(|| gaussian_kld(g0.mean(), g0.covariance(), g1.mean(), g1.covariance()).unwrap())
    });
}

fn codec(c: &mut Criterion) {
    let m = model(300, 10);
    let training = ensemble(300, 11);
    let book = Codebook::train(m, &training, &QuantizerConfig::default()).unwrap();
    let img = texture(256, 12);
    let mut group = c.benchmark_group("codec");
    group.sample_size(10);
    group.bench_function("encode 256", |b| {
        b.iter_batched(
            || img.clone(),
            |img| encode_image(&img, &book, &CodecConfig::default()).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, pyramid, analysis, synthesis, meta, codec);
criterion_main!(benches);
