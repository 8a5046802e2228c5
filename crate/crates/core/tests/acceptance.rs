//! Acceptance criteria, one PASS/FAIL line each. Oracles here are written
//! independently of the library internals: brute-force ring sums, naive
//! convolution loops, explicit residuals and central differences.
//!
//! `ACCEPTANCE_ONLY=1,4,9` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use trae::autoencoder::{Architecture, AutoencoderParams};
use trae::conv::{Conv2d, ConvTranspose2d};
use trae::dataset::Observations;
use trae::experiment::{run_experiment, ExperimentConfig, ExperimentOutcome};
use trae::measurement::MeasurementOp;
use trae::optim::{AdamConfig, AdamState};
use trae::recovery::{self, Method, RecoveryConfig};
use trae::{DenseTensor, Execution, MultiIndex, TrCores};

type Outcome = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Outcome);

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const BUDGET_SECONDS: f64 = 15.0 * 60.0;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gaussian(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> DenseTensor {
    let n = Normal::new(0.0, std).unwrap();
    DenseTensor::from_fn(shape, |_| n.sample(rng))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error between `grad` and central differences of `f` at `x`.
fn fd_worst(f: &dyn Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = x.to_vec();
    for i in 0..x.len() {
        p[i] = x[i] + FD_STEP;
        let plus = f(&p);
        p[i] = x[i] - FD_STEP;
        let minus = f(&p);
        p[i] = x[i];
        worst = worst.max(rel_err(grad[i], (plus - minus) / (2.0 * FD_STEP)));
    }
    worst
}

fn with(t: &DenseTensor, data: &[f64]) -> DenseTensor {
    DenseTensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Brute-force ring contraction: sum over every rank index tuple.
fn ring_entry(cores: &[DenseTensor], idx: &[usize], m: usize) -> f64 {
    let k = idx.len();
    let ranks: Vec<usize> = cores.iter().map(|c| c.shape()[0]).collect();
    let total: usize = ranks.iter().product();
    let mut sum = 0.0;
    for flat in 0..total {
        let mut r = vec![0; k + 1];
        let mut rest = flat;
        for (j, &rk) in ranks.iter().enumerate() {
            r[j] = rest % rk;
            rest /= rk;
        }
        let mut prod = 1.0;
        for j in 0..k {
            prod *= cores[j].get(&[r[j], idx[j], r[(j + 1) % (k + 1)]]).unwrap();
        }
        prod *= cores[k].get(&[r[k], m, r[0]]).unwrap();
        sum += prod;
    }
    sum
}

fn naive_conv(x: &DenseTensor, k: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let o = k.shape()[0];
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = DenseTensor::zeros(&[o, ho, wo]);
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = b.data()[oc];
                for ic in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (2 * oy + ky) as i64 - 1;
                            let ix = (2 * ox + kx) as i64 - 1;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += k.get(&[oc, ic, ky, kx]).unwrap() * x.get(&[ic, iy as usize, ix as usize]).unwrap();
                            }
                        }
                    }
                }
                out.set(&[oc, oy, ox], s).unwrap();
            }
        }
    }
    out
}

fn naive_tconv(x: &DenseTensor, k: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let o = k.shape()[1];
    let mut out = DenseTensor::zeros(&[o, 2 * h, 2 * w]);
    for oc in 0..o {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.set(&[oc, y, xx], b.data()[oc]).unwrap();
            }
        }
    }
    for ic in 0..c {
        for iy in 0..h {
            for ix in 0..w {
                let v = x.get(&[ic, iy, ix]).unwrap();
                for oc in 0..o {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let y = (2 * iy + ky) as i64 - 1;
                            let xx = (2 * ix + kx) as i64 - 1;
                            if y >= 0 && xx >= 0 && (y as usize) < 2 * h && (xx as usize) < 2 * w {
                                let cur = out.get(&[oc, y as usize, xx as usize]).unwrap();
                                out.set(&[oc, y as usize, xx as usize], cur + k.get(&[ic, oc, ky, kx]).unwrap() * v)
                                    .unwrap();
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (dims, d, r) = ([3usize, 4], 5usize, 3usize);
    let cores = vec![
        gaussian(&[r, dims[0], r], 0.1, &mut rng),
        gaussian(&[r, dims[1], r], 0.1, &mut rng),
        gaussian(&[r, d, r], 0.1, &mut rng),
    ];
    let ring = TrCores::from_cores(cores.clone()).map_err(|e| e.to_string())?;
    let all = MultiIndex::all(&dims);
    ensure(all.len() == 12, || format!("{} multi-indices", all.len()))?;
    let mut worst: f64 = 0.0;
    for exec in [Execution::Sequential, Execution::Parallel] {
        let batch = ring.latent_batch_with(exec, &all).map_err(|e| e.to_string())?;
        for (b, idx) in all.iter().enumerate() {
            for m in 0..d {
                let want = ring_entry(&cores, &idx.0, m);
                worst = worst.max((batch.get(&[b, m]).unwrap() - want).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-12, || format!("max abs error {worst:e}"))?;
    ensure(secs < 1.0, || format!("took {secs:.3} s"))?;
    Ok(format!("max abs error {worst:.1e}, {secs:.3} s"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let dims = [25usize, 3, 3, 9];
    let ring = TrCores::init(&dims, 256, 25, &mut rng).map_err(|e| e.to_string())?;
    // R² (Σ I_k + d) and d Π I_k, counted by hand
    let by_hand = 25 * 25 * (25 + 3 + 3 + 9 + 256);
    let dense = 256 * 25 * 3 * 3 * 9;
    let stored: usize = ring.cores().iter().map(|c| c.len()).sum();
    ensure(ring.param_count() == 185_000 && by_hand == 185_000 && stored == 185_000, || {
        format!("param_count {} stored {stored}", ring.param_count())
    })?;
    ensure(ring.dense_size() == 518_400 && dense == 518_400, || {
        format!("dense size {}", ring.dense_size())
    })?;
    ensure(recovery::ring_compresses(&dims, 256, 25), || "ring not reported as compressing".into())?;
    Ok(format!("{} ring parameters vs {} dense", ring.param_count(), ring.dense_size()))
}

fn tiny_arch() -> Architecture {
    Architecture {
        channels: 1,
        height: 16,
        width: 16,
        encoder_widths: vec![3, 3, 3, 4],
        decoder_widths: vec![4, 3, 3],
    }
}

fn tiny_params(rng: &mut ChaCha8Rng) -> AutoencoderParams {
    let mut p = AutoencoderParams::init_with_std(&tiny_arch(), 0.5, rng).unwrap();
    // nonzero biases keep padding-only units away from the ReLU kink
    for l in &mut p.encoder {
        l.bias = uniform(l.bias.shape(), -0.3, 0.3, rng);
    }
    for l in &mut p.decoder {
        l.bias = uniform(l.bias.shape(), -0.3, 0.3, rng);
    }
    p
}

fn flatten(p: &AutoencoderParams) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(template: &AutoencoderParams, v: &[f64]) -> AutoencoderParams {
    let mut p = template.clone();
    let mut at = 0;
    for t in p.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&v[at..at + n]);
        at += n;
    }
    p
}

fn ring_flat(c: &TrCores) -> Vec<f64> {
    c.cores().iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn ring_from(template: &TrCores, v: &[f64]) -> TrCores {
    let mut at = 0;
    let cores = template
        .cores()
        .iter()
        .map(|t| {
            let n = t.len();
            at += n;
            with(t, &v[at - n..at])
        })
        .collect();
    TrCores::from_cores(cores).unwrap()
}

fn masked_obs(dims: &[usize], rng: &mut ChaCha8Rng) -> Observations {
    let n: usize = dims.iter().product();
    let shape = [1usize, 16, 16];
    let mut ys = Vec::new();
    let mut ops = Vec::new();
    for i in 0..n {
        let op = MeasurementOp::block_mask(&shape, 4, (i % 12, (3 * i) % 12)).unwrap();
        let x = uniform(&shape, 0.0, 1.0, rng);
        ys.push(op.apply(&x).unwrap());
        ops.push(op);
    }
    Observations::new(dims.to_vec(), shape, ys, ops).unwrap()
}

fn mask_of(op: &MeasurementOp, len: usize) -> Vec<f64> {
    match op {
        MeasurementOp::Mask { mask, .. } => mask.data().to_vec(),
        _ => vec![1.0; len],
    }
}

fn oracle_objective(
    p: &AutoencoderParams,
    ring: &TrCores,
    obs: &Observations,
    batch: &[usize],
    l1: f64,
    l2: f64,
) -> f64 {
    let mut total = 0.0;
    for &i in batch {
        let y = &obs.measurements[i];
        let idx = obs.index(i).unwrap();
        let d = ring.latent_dim();
        let zt: Vec<f64> = (0..d).map(|m| ring_entry(ring.cores(), &idx.0, m)).collect();
        let ze = p.encode(y).unwrap();
        let t1: f64 = ze.data().iter().zip(&zt).map(|(a, b)| (a - b) * (a - b)).sum();
        let mask = mask_of(&obs.ops[i], y.len());
        let resid = |x: &DenseTensor| -> f64 {
            x.data()
                .iter()
                .zip(y.data())
                .zip(&mask)
                .map(|((x, y), m)| (m * x - y) * (m * x - y))
                .sum()
        };
        let ze_img = p.decode(&ze).unwrap();
        let zt_img = p.decode(&DenseTensor::vector(zt)).unwrap();
        total += t1 + l1 * resid(&ze_img) + l2 * resid(&zt_img);
    }
    total
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut parts = Vec::new();

    // strided convolution
    let layer = Conv2d::new(gaussian(&[3, 2, 3, 3], 0.5, &mut rng), gaussian(&[3], 0.5, &mut rng)).unwrap();
    let x = uniform(&[2, 6, 6], -1.0, 1.0, &mut rng);
    let (y, cache) = layer.forward_cached(&x).unwrap();
    let w = uniform(y.shape(), -1.0, 1.0, &mut rng);
    let mut g = Conv2d::zeros(2, 3);
    let dx = layer.backward(&cache, &w, &mut g).unwrap();
    let obj = |k: &DenseTensor, b: &DenseTensor, x: &DenseTensor| dot(naive_conv(x, k, b).data(), w.data());
    let e = fd_worst(&|v| obj(&with(&layer.kernels, v), &layer.bias, &x), layer.kernels.data(), g.kernels.data())
        .max(fd_worst(&|v| obj(&layer.kernels, &with(&layer.bias, v), &x), layer.bias.data(), g.bias.data()))
        .max(fd_worst(&|v| obj(&layer.kernels, &layer.bias, &with(&x, v)), x.data(), dx.data()));
    parts.push(("conv", e));

    // transposed convolution
    let layer = ConvTranspose2d::new(gaussian(&[3, 2, 3, 3], 0.5, &mut rng), gaussian(&[2], 0.5, &mut rng)).unwrap();
    let x = uniform(&[3, 3, 4], -1.0, 1.0, &mut rng);
    let (y, cache) = layer.forward_cached(&x).unwrap();
    let w = uniform(y.shape(), -1.0, 1.0, &mut rng);
    let mut g = ConvTranspose2d::zeros(3, 2);
    let dx = layer.backward(&cache, &w, &mut g).unwrap();
    let obj = |k: &DenseTensor, b: &DenseTensor, x: &DenseTensor| dot(naive_tconv(x, k, b).data(), w.data());
    let e = fd_worst(&|v| obj(&with(&layer.kernels, v), &layer.bias, &x), layer.kernels.data(), g.kernels.data())
        .max(fd_worst(&|v| obj(&layer.kernels, &with(&layer.bias, v), &x), layer.bias.data(), g.bias.data()))
        .max(fd_worst(&|v| obj(&layer.kernels, &layer.bias, &with(&x, v)), x.data(), dx.data()));
    parts.push(("tconv", e));

    // ReLU, linear and Sigmoid layers through a whole encoder and decoder
    let p = tiny_params(&mut rng);
    ensure(p.param_count() <= 1000, || format!("{} autoencoder parameters", p.param_count()))?;
    let img = uniform(&[1, 16, 16], 0.0, 1.0, &mut rng);
    let w = uniform(&[1, 16, 16], -1.0, 1.0, &mut rng);
    let (z, et) = p.encode_tape(&img).unwrap();
    let (_, dt) = p.decode_tape(&z).unwrap();
    let mut g = p.zeros_like();
    let dz = p.decoder_backward(&dt, &w, &mut g).unwrap();
    let dimg = p.encoder_backward(&et, &dz, &mut g).unwrap();
    let obj = |p: &AutoencoderParams, img: &DenseTensor| dot(p.decode(&p.encode(img).unwrap()).unwrap().data(), w.data());
    let e = fd_worst(&|v| obj(&unflatten(&p, v), &img), &flatten(&p), &flatten(&g))
        .max(fd_worst(&|v| obj(&p, &with(&img, v)), img.data(), dimg.data()));
    parts.push(("relu/linear/sigmoid", e));

    // ring cores
    let dims = [2usize, 3];
    let ring = TrCores::init_with_std(&dims, 4, 2, 0.8, &mut rng).unwrap();
    let idx = vec![MultiIndex(vec![1, 2]), MultiIndex(vec![0, 1]), MultiIndex(vec![1, 2])];
    let up = uniform(&[3, 4], -1.0, 1.0, &mut rng);
    let gc = ring.grad_cores_with(Execution::Sequential, &idx, &up).unwrap();
    let gflat: Vec<f64> = gc.iter().flat_map(|t| t.data().iter().copied()).collect();
    let obj = |r: &TrCores| {
        let mut s = 0.0;
        for (b, i) in idx.iter().enumerate() {
            for m in 0..4 {
                s += up.get(&[b, m]).unwrap() * ring_entry(r.cores(), &i.0, m);
            }
        }
        s
    };
    parts.push(("cores", fd_worst(&|v| obj(&ring_from(&ring, v)), &ring_flat(&ring), &gflat)));

    // measurement operators
    let shape = [1usize, 4, 4];
    let x = uniform(&shape, 0.0, 1.0, &mut rng);
    let mut e: f64 = 0.0;
    let ops = [
        MeasurementOp::Noisy { sigma: 0.1 },
        MeasurementOp::block_mask(&shape, 2, (1, 1)).unwrap(),
        MeasurementOp::Linear {
            matrix: gaussian(&[10, 16], 0.3, &mut rng),
        },
    ];
    for op in &ops {
        let y = op.corrupt(&uniform(&shape, 0.0, 1.0, &mut rng), &mut rng).unwrap();
        let gx = op.grad_through(&x, &y).unwrap();
        let explicit = |x: &DenseTensor| -> f64 {
            let ax: Vec<f64> = match op {
                MeasurementOp::Linear { matrix } => (0..10).map(|r| dot(&matrix.data()[r * 16..(r + 1) * 16], x.data())).collect(),
                _ => x.data().iter().zip(mask_of(op, 16)).map(|(v, m)| v * m).collect(),
            };
            ax.iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        e = e.max(fd_worst(&|v| explicit(&with(&x, v)), x.data(), gx.data()));
    }
    parts.push(("operators", e));

    // full joint objective over θ, γ and the cores
    let obs = masked_obs(&dims, &mut rng);
    let p = tiny_params(&mut rng);
    let ring = TrCores::init_with_std(&dims, 4, 2, 0.8, &mut rng).unwrap();
    ensure(p.param_count() + ring.param_count() <= 1000, || "joint instance too large".into())?;
    let batch = [0usize, 2, 5];
    let (l1, l2) = (0.7, 1.3);
    let g = recovery::tr_ae_gradients(&p, &ring, &obs, &obs.measurements, &batch, l1, l2, Execution::Sequential)
        .map_err(|e| e.to_string())?;
    let gflat: Vec<f64> = g.cores.iter().flat_map(|t| t.data().iter().copied()).collect();
    let e = fd_worst(&|v| oracle_objective(&unflatten(&p, v), &ring, &obs, &batch, l1, l2), &flatten(&p), &flatten(&g.params))
        .max(fd_worst(&|v| oracle_objective(&p, &ring_from(&ring, v), &obs, &batch, l1, l2), &ring_flat(&ring), &gflat));
    parts.push(("joint", e));

    let secs = start.elapsed().as_secs_f64();
    let worst = parts.iter().map(|p| p.1).fold(0.0, f64::max);
    let summary = parts.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(worst < FD_TOL, || format!("relative error above {FD_TOL:e}: {summary}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{summary}; {secs:.1} s"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let conv = Conv2d::new(gaussian(&[4, 3, 3, 3], 1.0, &mut rng), gaussian(&[4], 1.0, &mut rng)).unwrap();
    let x = uniform(&[3, 8, 8], -1.0, 1.0, &mut rng);
    let e_conv = max_abs_diff(conv.forward(&x).unwrap().data(), naive_conv(&x, &conv.kernels, &conv.bias).data());

    let tconv = ConvTranspose2d::new(gaussian(&[3, 4, 3, 3], 1.0, &mut rng), gaussian(&[4], 1.0, &mut rng)).unwrap();
    let xt = uniform(&[3, 8, 8], -1.0, 1.0, &mut rng);
    let e_tconv = max_abs_diff(tconv.forward(&xt).unwrap().data(), naive_tconv(&xt, &tconv.kernels, &tconv.bias).data());

    // <conv(x), u> = <x, tconv(u)> with a shared kernel and no bias
    let k = gaussian(&[4, 3, 3, 3], 1.0, &mut rng);
    let c = Conv2d::new(k.clone(), DenseTensor::zeros(&[4])).unwrap();
    let t = ConvTranspose2d::new(k, DenseTensor::zeros(&[3])).unwrap();
    let u = uniform(&[4, 4, 4], -1.0, 1.0, &mut rng);
    let lhs = dot(c.forward(&x).unwrap().data(), u.data());
    let rhs = dot(x.data(), t.forward(&u).unwrap().data());
    let e_adj = (lhs - rhs).abs();

    ensure(e_conv <= 1e-12 && e_tconv <= 1e-12, || format!("forward errors {e_conv:e}, {e_tconv:e}"))?;
    ensure(e_adj <= 1e-10, || format!("adjoint gap {e_adj:e}"))?;
    Ok(format!("conv {e_conv:.1e}, tconv {e_tconv:.1e}, adjoint {e_adj:.1e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let dims = [2usize, 3];
    let obs = masked_obs(&dims, &mut rng);
    let (l1, l2) = (0.7, 1.3);
    let cfg = RecoveryConfig {
        method: Method::TrAe,
        lambda1: l1,
        lambda2: l2,
        rank: 2,
        iterations: 60,
        arch: Some(tiny_arch()),
        sgd_lr: 0.01,
        early_stop_window: 0,
        seed: 5,
        ..RecoveryConfig::default()
    };
    let result = recovery::train(&obs, &cfg).map_err(|e| e.to_string())?;
    ensure(result.trace.len() == cfg.iterations, || format!("{} trace records", result.trace.len()))?;
    for r in &result.trace {
        let t = r.terms;
        let combined = t.term1 + l1 * t.term2 + l2 * t.term3;
        ensure((t.total - combined).abs() <= 1e-12 * t.total.abs().max(1.0), || {
            format!("step {}: total {} vs {combined}", r.step, t.total)
        })?;
    }

    let p = tiny_params(&mut rng);
    let ring = TrCores::init_with_std(&dims, 4, 2, 0.8, &mut rng).unwrap();
    let batch: Vec<usize> = (0..obs.len()).collect();
    let grads = |w| {
        recovery::tr_ae_gradients_weighted(&p, &ring, &obs, &obs.measurements, &batch, w, Execution::Parallel).unwrap()
    };
    let nonzero = |ts: Vec<&DenseTensor>| ts.iter().any(|t| t.data().iter().any(|&v| v != 0.0));
    let exactly_zero = |ts: Vec<&DenseTensor>| ts.iter().all(|t| t.data().iter().all(|&v| v == 0.0));
    let g1 = grads([1.0, 0.0, 0.0]);
    let g2 = grads([0.0, 1.0, 0.0]);
    let g3 = grads([0.0, 0.0, 1.0]);
    ensure(exactly_zero(g1.params.decoder_tensors()), || "term 1 reaches the decoder".into())?;
    ensure(exactly_zero(g2.cores.iter().collect()), || "term 2 reaches the cores".into())?;
    ensure(exactly_zero(g3.params.encoder_tensors()), || "term 3 reaches the encoder".into())?;
    ensure(
        nonzero(g1.params.encoder_tensors())
            && nonzero(g1.cores.iter().collect())
            && nonzero(g2.params.encoder_tensors())
            && nonzero(g2.params.decoder_tensors())
            && nonzero(g3.params.decoder_tensors())
            && nonzero(g3.cores.iter().collect()),
        || "an expected gradient path is silent".into(),
    )?;
    Ok(format!("decomposition exact over {} steps; routing blocks exactly zero", result.trace.len()))
}

fn experiment(preset: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.apply_text(
        "iterations = 1000\nlstr_iterations = 3000\nseeds = 0,1,2\nmethods = tr-ae,csae,lstr,input\nsave_images = false\nrecord_seconds = true",
    )
    .unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn mean_of(outcome: &ExperimentOutcome, method: &str, masked: bool) -> f64 {
    let vals: Vec<f64> = outcome
        .rows
        .iter()
        .filter(|r| r.method == method)
        .map(|r| if masked { r.masked_psnr_db.expect("inpainting row") } else { r.psnr_mean_db })
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = run_experiment(&experiment("toy-denoise", dir.path())).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let [tr, cs, ls, inp] = ["tr-ae", "csae", "lstr", "input"].map(|m| mean_of(&outcome, m, false));
    let summary = format!("tr-ae {tr:.2} dB, csae {cs:.2}, lstr {ls:.2}, input {inp:.2}; {secs:.0} s");
    ensure(tr >= cs, || format!("tr-ae below csae: {summary}"))?;
    ensure(tr >= ls + 2.0, || format!("tr-ae not 2 dB above lstr: {summary}"))?;
    ensure(tr >= inp + 2.0, || format!("tr-ae not 2 dB above input: {summary}"))?;
    ensure(secs < BUDGET_SECONDS, || format!("over the time budget: {summary}"))?;
    Ok(summary)
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let outcome = run_experiment(&experiment("toy-inpaint", dir.path())).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let [tr, cs, ls] = ["tr-ae", "csae", "lstr"].map(|m| mean_of(&outcome, m, false));
    let [trm, csm, lsm] = ["tr-ae", "csae", "lstr"].map(|m| mean_of(&outcome, m, true));
    let summary = format!(
        "masked: tr-ae {trm:.2} dB, csae {csm:.2}, lstr {lsm:.2}; full: tr-ae {tr:.2}, csae {cs:.2}, lstr {ls:.2}; {secs:.0} s"
    );
    ensure(trm >= lsm, || format!("tr-ae hole PSNR below lstr: {summary}"))?;
    ensure(tr >= cs - 0.5, || format!("tr-ae more than 0.5 dB below csae: {summary}"))?;
    ensure(secs < BUDGET_SECONDS, || format!("over the time budget: {summary}"))?;
    Ok(summary)
}

fn criterion_8() -> Outcome {
    let files = [
        "report.csv",
        "tr-ae/seed3/cores.trc",
        "tr-ae/seed3/params.aep",
        "csae/seed3/params.aep",
        "lstr/seed3/cores.trc",
        "tr-ae/seed3/loss.csv",
        "seed3/replay.txt",
        "seed3/measurements.bin",
    ];
    let mut compared = 0;
    for (task, extra) in [("denoise", ""), ("inpaint", "block = 4")] {
        let run = |dir: &Path| {
            let mut cfg = ExperimentConfig::preset("toy-denoise").unwrap();
            cfg.apply_text(&format!(
                "task = {task}\n{extra}\nsize = 16\nrank = 4\niterations = 25\nseeds = 3\nbatch_cap = 4\ncsae_batch = 4"
            ))
            .unwrap();
            cfg.out = dir.to_path_buf();
            run_experiment(&cfg).map(|_| ()).map_err(|e| e.to_string())
        };
        let a = tempfile::tempdir().map_err(|e| e.to_string())?;
        let b = tempfile::tempdir().map_err(|e| e.to_string())?;
        run(a.path())?;
        run(b.path())?;
        for f in files {
            let read = |d: &Path| std::fs::read(d.join(f)).map_err(|e| format!("{f}: {e}"));
            ensure(read(a.path())? == read(b.path())?, || format!("{task}: {f} differs between runs"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} artifacts byte-identical across repeated runs"))
}

fn criterion_9() -> Outcome {
    let mut p = DenseTensor::vector(vec![0.0, 1.5, -2.0]);
    let before = p.clone();
    let g = DenseTensor::filled(&[3], 1.0);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 0.001,
            ..AdamConfig::default()
        },
        &[&p],
    );
    adam.step(&mut [&mut p], &[&g]).map_err(|e| e.to_string())?;
    let worst = p
        .data()
        .iter()
        .zip(before.data())
        .map(|(a, b)| ((b - a) - 0.001).abs())
        .fold(0.0, f64::max);
    ensure(worst < 1e-9, || format!("|Δθ − 0.001| = {worst:e}"))?;
    Ok(format!("|Δθ − 0.001| = {worst:.1e}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "ring contraction matches brute force", criterion_1),
        (2, "parameter accounting", criterion_2),
        (3, "gradients match finite differences", criterion_3),
        (4, "convolutions match loop oracles", criterion_4),
        (5, "loss structure and gradient routing", criterion_5),
        (6, "denoising ordering over 3 seeds", criterion_6),
        (7, "inpainting over 3 seeds", criterion_7),
        (8, "determinism", criterion_8),
        (9, "Adam first step", criterion_9),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
