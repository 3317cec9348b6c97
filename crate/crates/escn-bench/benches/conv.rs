//! Naive vs SO(2) convolution timing across band limits.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use escn_core::cg::{cached_cg_table, compact_cg, h_to_htilde, HTensor};
use escn_core::conv::{naive_conv, so2_conv, ConvSpec};
use escn_core::{Direction, IrrepsCoeffs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_paths(crit: &mut Criterion) {
    let mut group = crit.benchmark_group("conv");
    let channels = 16;
    for lmax in [2usize, 4, 6] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = ConvSpec::new(lmax, lmax, channels).unwrap();
        let x = IrrepsCoeffs::random(lmax, channels, &mut rng);
        let h = HTensor::random(lmax, &mut rng);
        let table = cached_cg_table(lmax).unwrap();
        let ht = h_to_htilde(&h, &compact_cg(&table)).unwrap();
        let r = Direction::random(&mut rng);
        group.bench_with_input(BenchmarkId::new("naive", lmax), &lmax, |b, _| {
            b.iter(|| naive_conv(&x, &r, &h, &spec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("so2", lmax), &lmax, |b, _| {
            b.iter(|| so2_conv(&x, &r, &ht, &spec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_paths);
criterion_main!(benches);
