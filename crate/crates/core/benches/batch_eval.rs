//! Sequential versus rayon execution of the per-sample batch work.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trae::autoencoder::{Architecture, AutoencoderParams};
use trae::dataset::{corrupt_dataset, generate_synthetic, SyntheticSpec, Task};
use trae::recovery::{csae_gradients, tr_ae_gradients};
use trae::{DenseTensor, Execution, MultiIndex, TrCores};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn ring_batches(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dims = [25, 3, 3, 9];
    let ring = TrCores::init(&dims, 256, 8, &mut rng).unwrap();
    let idx = MultiIndex::all(&dims);
    let upstream = DenseTensor::filled(&[idx.len(), 256], 1e-3);
    let mut group = c.benchmark_group("ring");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("latent_batch", name), |b| {
            b.iter(|| ring.latent_batch_with(exec, &idx).unwrap())
        });
        group.bench_function(BenchmarkId::new("grad_cores", name), |b| {
            b.iter(|| ring.grad_cores_with(exec, &idx, &upstream).unwrap())
        });
    }
    group.finish();
}

fn autoencoder_batches(c: &mut Criterion) {
    let spec = SyntheticSpec::toy();
    let clean = generate_synthetic(&spec).unwrap();
    let noisy = corrupt_dataset(&clean, Task::Denoise { snr_db: 20.0 }, 0).unwrap();
    let obs = noisy.observations().unwrap();
    let inputs = obs.encoder_inputs().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let arch = Architecture::standard(1, spec.size, spec.size);
    let params = AutoencoderParams::init(&arch, &mut rng).unwrap();
    let ring = TrCores::init(&obs.attribute_dims, arch.latent_dim(), 8, &mut rng).unwrap();
    let batch: Vec<usize> = (0..8).map(|i| i * 11).collect();

    let mut group = c.benchmark_group("autoencoder");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("tr_ae_gradients", name), |b| {
            b.iter(|| tr_ae_gradients(&params, &ring, obs, &inputs, &batch, 1.0, 1.0, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("csae_gradients", name), |b| {
            b.iter(|| csae_gradients(&params, obs, &inputs, &batch, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, ring_batches, autoencoder_batches);
criterion_main!(benches);
