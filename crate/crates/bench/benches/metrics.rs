use criterion::{criterion_group, criterion_main, Criterion};
use omnissr::denoise::tv::tv_prox;
use omnissr::metrics::{ws_psnr, ws_ssim};
use omnissr_bench::panorama;

fn metrics(c: &mut Criterion) {
    let a = panorama(256);
    let b = tv_prox(a.raster(), 0.02, 10);

    let mut g = c.benchmark_group("metrics_256x512");
    g.bench_function("ws_psnr", |bch| bch.iter(|| ws_psnr(a.raster(), &b).unwrap()));
    g.bench_function("ws_ssim", |bch| bch.iter(|| ws_ssim(a.raster(), &b).unwrap()));
    g.bench_function("tv_prox_10", |bch| bch.iter(|| tv_prox(a.raster(), 0.02, 10)));
    g.finish();
}

criterion_group!(benches, metrics);
criterion_main!(benches);
