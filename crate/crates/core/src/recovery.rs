//! Self-supervised recovery: the tensor-ring autoencoder (TR-AE) and the
//! CSAE and LSTR baselines.
//!
//! TR-AE minimises, over encoder weights θ, decoder weights γ and the ring
//! cores, the per-sample loss
//!
//! ```text
//! ‖E(y_i) − Z(i)‖² + λ1 ‖A_i D(E(y_i)) − y_i‖² + λ2 ‖A_i D(Z(i)) − y_i‖²
//! ```
//!
//! where `Z(i)` is the ring's latent code for the sample's multi-index.
//! Recovered images are `D(Z(i))`. CSAE keeps only the middle term and
//! recovers `D(E(y_i))`; LSTR fits a ring over `(I_1, …, I_K, C·H·W)`
//! directly to the measurements.
//!
//! Gradients of a batch are summed per sample in batch order and then
//! divided by the batch size before the optimiser step.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::{Architecture, AutoencoderParams};
use crate::dataset::Observations;
use crate::error::{Error, Result};
use crate::optim::{AdamConfig, AdamState, SgdConfig};
use crate::parallel::Execution;
use crate::tensor::DenseTensor;
use crate::tensor_ring::{MultiIndex, TrCores};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    TrAe,
    Csae,
    Lstr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::TrAe, Method::Csae, Method::Lstr];

    pub fn name(self) -> &'static str {
        match self {
            Method::TrAe => "tr-ae",
            Method::Csae => "csae",
            Method::Lstr => "lstr",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tr-ae" => Ok(Method::TrAe),
            "csae" => Ok(Method::Csae),
            "lstr" => Ok(Method::Lstr),
            other => Err(Error::Config(format!("unknown method {other:?} (tr-ae, csae, lstr)"))),
        }
    }
}

/// How TR-AE and LSTR choose the samples of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchStrategy {
    /// All samples sharing one attribute value. Modes are visited round
    /// robin; within a mode the values are drawn without replacement until
    /// exhausted, then reshuffled.
    CoreSlice,
    /// Every sample, every step.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub method: Method,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rank: usize,
    /// Maximum number of optimisation steps.
    pub iterations: usize,
    pub batch: BatchStrategy,
    /// Random subset size when a core slice holds more samples. TR-AE only;
    /// LSTR steps are cheap and always use whole slices.
    pub batch_cap: Option<usize>,
    /// CSAE batch size.
    pub csae_batch: usize,
    pub adam: AdamConfig,
    /// SGD rate for the TR-AE cores.
    pub sgd_lr: f64,
    /// SGD rate for the LSTR cores.
    pub lstr_lr: f64,
    pub seed: u64,
    /// Defaults to the standard architecture for the image shape.
    pub arch: Option<Architecture>,
    /// Standard deviation of the Gaussian initialisation of kernels and cores.
    pub init_std: f64,
    /// Initial standard deviation of the LSTR cores.
    pub lstr_init_std: f64,
    /// Stop when the mean step loss over a block of this many steps has not
    /// improved on the previous block by `early_stop_tol` (relative); 0
    /// disables.
    pub early_stop_window: usize,
    pub early_stop_tol: f64,
    pub exec: Execution,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            method: Method::TrAe,
            lambda1: 1.0,
            lambda2: 1.0,
            rank: 8,
            iterations: 3000,
            batch: BatchStrategy::CoreSlice,
            batch_cap: None,
            csae_batch: 20,
            adam: AdamConfig::default(),
            sgd_lr: 0.1,
            lstr_lr: 0.1,
            seed: 0,
            arch: None,
            init_std: 0.1,
            lstr_init_std: 0.1,
            early_stop_window: 200,
            early_stop_tol: 1e-6,
            exec: Execution::default(),
        }
    }
}

impl RecoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad(format!("weights must be non-negative, got {} and {}", self.lambda1, self.lambda2));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        if !(self.lstr_init_std > 0.0 && self.lstr_init_std.is_finite()) {
            return bad(format!("lstr_init_std must be positive, got {}", self.lstr_init_std));
        }
        if self.csae_batch == 0 || self.batch_cap == Some(0) {
            return bad("batch sizes must be positive".into());
        }
        for (name, lr) in [("adam_lr", self.adam.lr), ("sgd_lr", self.sgd_lr), ("lstr_lr", self.lstr_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        Ok(())
    }

    fn architecture(&self, obs: &Observations) -> Result<Architecture> {
        let [c, h, w] = obs.image_shape;
        let arch = self.arch.clone().unwrap_or_else(|| Architecture::standard(c, h, w));
        arch.validate()?;
        if arch.image_shape() != obs.image_shape {
            return Err(Error::shape("architecture", &arch.image_shape(), &obs.image_shape));
        }
        Ok(arch)
    }
}

/// Whether an equal-rank ring over `dims` and `d` has fewer parameters than
/// the dense code tensor it replaces.
pub fn ring_compresses(dims: &[usize], latent_dim: usize, rank: usize) -> bool {
    let ring = rank * rank * (dims.iter().sum::<usize>() + latent_dim);
    ring < latent_dim * dims.iter().product::<usize>()
}

/// The three loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub total: f64,
}

impl LossTerms {
    fn add(&mut self, o: &LossTerms) {
        self.term1 += o.term1;
        self.term2 += o.term2;
        self.term3 += o.term3;
        self.total += o.total;
    }

    fn scaled(&self, c: f64) -> LossTerms {
        LossTerms {
            term1: self.term1 * c,
            term2: self.term2 * c,
            term3: self.term3 * c,
            total: self.total * c,
        }
    }
}

/// One row of the loss trace: per-sample means over the step's batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub terms: LossTerms,
}

/// Writes `step,term1,term2,term3,total`. CSAE reports its loss as term 2
/// and LSTR as term 3.
pub fn loss_csv(trace: &[LossRecord]) -> String {
    let mut out = String::from("step,term1,term2,term3,total\n");
    for r in trace {
        let t = r.terms;
        let _ = writeln!(out, "{},{},{},{},{}", r.step, t.term1, t.term2, t.term3, t.total);
    }
    out
}

pub fn write_loss_csv(path: &Path, trace: &[LossRecord]) -> Result<()> {
    std::fs::write(path, loss_csv(trace)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub method: Method,
    /// Recovered images in flat sample order.
    pub recovered: Vec<DenseTensor>,
    pub cores: Option<TrCores>,
    pub params: Option<AutoencoderParams>,
    pub trace: Vec<LossRecord>,
    pub steps: usize,
    pub seconds: f64,
}

impl RecoveryResult {
    /// Recovers the image at `idx` from the trained state.
    pub fn reconstruct(&self, obs: &Observations, idx: &MultiIndex) -> Result<DenseTensor> {
        let flat = idx.flat(&obs.attribute_dims)?;
        let missing = || Error::Invalid(format!("{} result lacks trained state", self.method.name()));
        match self.method {
            Method::TrAe => {
                let params = self.params.as_ref().ok_or_else(missing)?;
                let cores = self.cores.as_ref().ok_or_else(missing)?;
                params.decode(&cores.latent_code(idx)?)
            }
            Method::Csae => {
                let params = self.params.as_ref().ok_or_else(missing)?;
                let u = obs.ops[flat].encoder_input(&obs.measurements[flat], &obs.image_shape)?;
                params.decode(&params.encode(&u)?)
            }
            Method::Lstr => {
                let cores = self.cores.as_ref().ok_or_else(missing)?;
                lstr_image(cores, idx, obs.image_shape)
            }
        }
    }
}

fn lstr_image(cores: &TrCores, idx: &MultiIndex, shape: [usize; 3]) -> Result<DenseTensor> {
    Ok(cores.latent_code(idx)?.reshape(&shape)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Evaluates the three terms for every sample of `batch`, summed.
pub fn loss_tr_ae(
    params: &AutoencoderParams,
    cores: &TrCores,
    obs: &Observations,
    inputs: &[DenseTensor],
    batch: &[usize],
    lambda1: f64,
    lambda2: f64,
) -> Result<LossTerms> {
    let mut sum = LossTerms::default();
    for &i in batch {
        let idx = obs.index(i)?;
        let (y, op) = (&obs.measurements[i], &obs.ops[i]);
        let ze = params.encode(&inputs[i])?;
        let zt = cores.latent_code(&idx)?;
        let t1 = ze.sub(&zt)?.sum_sq();
        let t2 = op.residual(&params.decode(&ze)?, y)?;
        let t3 = op.residual(&params.decode(&zt)?, y)?;
        sum.add(&LossTerms {
            term1: t1,
            term2: t2,
            term3: t3,
            total: t1 + lambda1 * t2 + lambda2 * t3,
        });
    }
    Ok(sum)
}

/// Gradients of a summed batch loss.
#[derive(Debug, Clone)]
pub struct TrAeGradients {
    pub params: AutoencoderParams,
    pub cores: Vec<DenseTensor>,
    pub loss: LossTerms,
}

/// Gradient of `w1·term1 + w2·term2 + w3·term3` summed over `batch`, with
/// respect to θ, γ and the cores.
#[allow(clippy::too_many_arguments)]
pub fn tr_ae_gradients_weighted(
    params: &AutoencoderParams,
    cores: &TrCores,
    obs: &Observations,
    inputs: &[DenseTensor],
    batch: &[usize],
    weights: [f64; 3],
    exec: Execution,
) -> Result<TrAeGradients> {
    let indices = batch.iter().map(|&i| obs.index(i)).collect::<Result<Vec<_>>>()?;
    let codes = cores.latent_batch_with(exec, &indices)?;
    let d = cores.latent_dim();
    let [w1, w2, w3] = weights;
    let rows: Vec<usize> = (0..batch.len()).collect();
    let per_sample = exec.map(&rows, |&b| -> Result<(AutoencoderParams, Vec<f64>, LossTerms)> {
        let i = batch[b];
        let (y, op) = (&obs.measurements[i], &obs.ops[i]);
        let zt = DenseTensor::vector(codes.data()[b * d..(b + 1) * d].to_vec());
        let mut g = params.zeros_like();

        let (ze, enc_tape) = params.encode_tape(&inputs[i])?;
        let diff = ze.sub(&zt)?;
        let t1 = diff.sum_sq();

        let (xe, tape) = params.decode_tape(&ze)?;
        let t2 = op.residual(&xe, y)?;
        let dze = params.decoder_backward(&tape, &op.grad_through(&xe, y)?.scale(w2), &mut g)?;

        let (xt, tape) = params.decode_tape(&zt)?;
        let t3 = op.residual(&xt, y)?;
        let dzt = params.decoder_backward(&tape, &op.grad_through(&xt, y)?.scale(w3), &mut g)?;

        let dz_enc = diff.scale(2.0 * w1).add(&dze)?;
        params.encoder_backward(&enc_tape, &dz_enc, &mut g)?;
        let dz_ring = diff.scale(-2.0 * w1).add(&dzt)?;
        let terms = LossTerms {
            term1: t1,
            term2: t2,
            term3: t3,
            total: w1 * t1 + w2 * t2 + w3 * t3,
        };
        Ok((g, dz_ring.into_data(), terms))
    });

    let mut grads = params.zeros_like();
    let mut upstream = Vec::with_capacity(batch.len() * d);
    let mut loss = LossTerms::default();
    for r in per_sample {
        let (g, row, terms) = r?;
        grads.axpy(1.0, &g)?;
        upstream.extend_from_slice(&row);
        loss.add(&terms);
    }
    let upstream = DenseTensor::new(vec![batch.len(), d], upstream)?;
    let core_grads = cores.grad_cores_with(exec, &indices, &upstream)?;
    Ok(TrAeGradients {
        params: grads,
        cores: core_grads,
        loss,
    })
}

/// Gradient of the weighted total `term1 + λ1·term2 + λ2·term3`.
#[allow(clippy::too_many_arguments)]
pub fn tr_ae_gradients(
    params: &AutoencoderParams,
    cores: &TrCores,
    obs: &Observations,
    inputs: &[DenseTensor],
    batch: &[usize],
    lambda1: f64,
    lambda2: f64,
    exec: Execution,
) -> Result<TrAeGradients> {
    tr_ae_gradients_weighted(params, cores, obs, inputs, batch, [1.0, lambda1, lambda2], exec)
}

/// Gradient of `Σ ‖A_i D(E(y_i)) − y_i‖²` over `batch`, and that sum.
pub fn csae_gradients(
    params: &AutoencoderParams,
    obs: &Observations,
    inputs: &[DenseTensor],
    batch: &[usize],
    exec: Execution,
) -> Result<(AutoencoderParams, f64)> {
    let per_sample = exec.map(batch, |&i| -> Result<(AutoencoderParams, f64)> {
        let (y, op) = (&obs.measurements[i], &obs.ops[i]);
        let mut g = params.zeros_like();
        let (z, enc_tape) = params.encode_tape(&inputs[i])?;
        let (x, tape) = params.decode_tape(&z)?;
        let loss = op.residual(&x, y)?;
        let dz = params.decoder_backward(&tape, &op.grad_through(&x, y)?, &mut g)?;
        params.encoder_backward(&enc_tape, &dz, &mut g)?;
        Ok((g, loss))
    });
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for r in per_sample {
        let (g, l) = r?;
        grads.axpy(1.0, &g)?;
        loss += l;
    }
    Ok((grads, loss))
}

/// Gradient of `Σ ‖A_i vec(T(i)) − y_i‖²` over `batch` for a ring `T` whose
/// latent extent is the flattened image, and that sum. No clamping.
pub fn lstr_gradients(
    cores: &TrCores,
    obs: &Observations,
    batch: &[usize],
    exec: Execution,
) -> Result<(Vec<DenseTensor>, f64)> {
    let indices = batch.iter().map(|&i| obs.index(i)).collect::<Result<Vec<_>>>()?;
    let codes = cores.latent_batch_with(exec, &indices)?;
    let p = cores.latent_dim();
    let mut upstream = Vec::with_capacity(batch.len() * p);
    let mut loss = 0.0;
    for (b, &i) in batch.iter().enumerate() {
        let (y, op) = (&obs.measurements[i], &obs.ops[i]);
        let x = DenseTensor::new(obs.image_shape.to_vec(), codes.data()[b * p..(b + 1) * p].to_vec())?;
        loss += op.residual(&x, y)?;
        upstream.extend_from_slice(op.grad_through(&x, y)?.data());
    }
    let upstream = DenseTensor::new(vec![batch.len(), p], upstream)?;
    Ok((cores.grad_cores_with(exec, &indices, &upstream)?, loss))
}

/// Draws the samples of successive steps.
struct Batcher {
    dims: Vec<usize>,
    strategy: BatchStrategy,
    cap: Option<usize>,
    mode: usize,
    orders: Vec<Vec<usize>>,
    cursors: Vec<usize>,
}

impl Batcher {
    fn new(dims: &[usize], strategy: BatchStrategy, cap: Option<usize>) -> Self {
        Self {
            dims: dims.to_vec(),
            strategy,
            cap,
            mode: 0,
            orders: dims.iter().map(|_| Vec::new()).collect(),
            cursors: vec![0; dims.len()],
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> Vec<usize> {
        let n: usize = self.dims.iter().product();
        let mut batch: Vec<usize> = match self.strategy {
            BatchStrategy::Full => (0..n).collect(),
            BatchStrategy::CoreSlice => {
                let k = self.mode;
                self.mode = (self.mode + 1) % self.dims.len();
                if self.cursors[k] == self.orders[k].len() {
                    let mut order: Vec<usize> = (0..self.dims[k]).collect();
                    order.shuffle(rng);
                    self.orders[k] = order;
                    self.cursors[k] = 0;
                }
                let value = self.orders[k][self.cursors[k]];
                self.cursors[k] += 1;
                (0..n)
                    .filter(|&f| MultiIndex::from_flat(f, &self.dims).expect("in range").0[k] == value)
                    .collect()
            }
        };
        if let Some(cap) = self.cap {
            if batch.len() > cap {
                let mut picked = rand::seq::index::sample(rng, batch.len(), cap).into_vec();
                picked.sort_unstable();
                batch = picked.into_iter().map(|p| batch[p]).collect();
            }
        }
        batch
    }
}

/// Uniform random batches: a fresh permutation of all samples per epoch,
/// consumed in consecutive chunks.
struct EpochBatcher {
    n: usize,
    size: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl EpochBatcher {
    fn new(n: usize, size: usize) -> Self {
        Self {
            n,
            size: size.min(n),
            order: Vec::new(),
            cursor: 0,
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.cursor + self.size > self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.size].to_vec();
        self.cursor += self.size;
        batch
    }
}

/// Compares the mean loss of consecutive `window`-step blocks, so that
/// batch-to-batch variation does not end training.
struct EarlyStop {
    window: usize,
    tol: f64,
    previous: f64,
    sum: f64,
    count: usize,
}

impl EarlyStop {
    fn new(cfg: &RecoveryConfig) -> Self {
        Self {
            window: cfg.early_stop_window,
            tol: cfg.early_stop_tol,
            previous: f64::INFINITY,
            sum: 0.0,
            count: 0,
        }
    }

    fn should_stop(&mut self, loss: f64) -> bool {
        if self.window == 0 {
            return false;
        }
        self.sum += loss;
        self.count += 1;
        if self.count < self.window {
            return false;
        }
        let mean = self.sum / self.count as f64;
        let stalled = mean >= self.previous * (1.0 - self.tol);
        self.previous = mean;
        self.sum = 0.0;
        self.count = 0;
        stalled
    }
}

fn guard(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, loss })
    }
}

/// Runs the requested method.
pub fn train(obs: &Observations, cfg: &RecoveryConfig) -> Result<RecoveryResult> {
    match cfg.method {
        Method::TrAe => train_tr_ae(obs, cfg),
        Method::Csae => train_csae(obs, cfg),
        Method::Lstr => train_lstr(obs, cfg),
    }
}

/// Joint training of encoder, decoder and ring cores: Adam on the network,
/// SGD on the cores. The generator seeded with `cfg.seed` initialises the
/// network, then the cores, then drives batch selection.
pub fn train_tr_ae(obs: &Observations, cfg: &RecoveryConfig) -> Result<RecoveryResult> {
    cfg.validate()?;
    let arch = cfg.architecture(obs)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = AutoencoderParams::init_with_std(&arch, cfg.init_std, &mut rng)?;
    let mut cores = TrCores::init_with_std(&obs.attribute_dims, arch.latent_dim(), cfg.rank, cfg.init_std, &mut rng)?;
    let inputs = obs.encoder_inputs()?;
    let mut adam = AdamState::new(cfg.adam, &params.tensors());
    let sgd = SgdConfig::new(cfg.sgd_lr)?;
    let mut batcher = Batcher::new(&obs.attribute_dims, cfg.batch, cfg.batch_cap);
    let mut stop = EarlyStop::new(cfg);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let batch = batcher.next(&mut rng);
        let mut g = tr_ae_gradients(&params, &cores, obs, &inputs, &batch, cfg.lambda1, cfg.lambda2, cfg.exec)?;
        let l = g.loss;
        let recombined = l.term1 + cfg.lambda1 * l.term2 + cfg.lambda2 * l.term3;
        assert!(
            (l.total - recombined).abs() <= 1e-12 * l.total.abs().max(1.0),
            "loss decomposition broken at step {step}"
        );
        guard(step, l.total)?;
        let inv = 1.0 / batch.len() as f64;
        g.params.scale_in_place(inv);
        for c in &mut g.cores {
            c.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        adam.step(&mut params.tensors_mut(), &g.params.tensors())?;
        sgd.step(cores.cores_mut(), &g.cores)?;
        let terms = l.scaled(inv);
        trace.push(LossRecord { step, terms });
        if step % 100 == 0 {
            log::debug!("tr-ae step {step}: {terms:?}");
        }
        if stop.should_stop(terms.total) {
            log::info!("tr-ae stopped early after {} steps", step + 1);
            break;
        }
    }
    let recovered = MultiIndex::all(&obs.attribute_dims)
        .iter()
        .map(|idx| params.decode(&cores.latent_code(idx)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryResult {
        method: Method::TrAe,
        recovered,
        steps: trace.len(),
        trace,
        cores: Some(cores),
        params: Some(params),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Autoencoder trained on measurement consistency alone.
pub fn train_csae(obs: &Observations, cfg: &RecoveryConfig) -> Result<RecoveryResult> {
    cfg.validate()?;
    let arch = cfg.architecture(obs)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = AutoencoderParams::init_with_std(&arch, cfg.init_std, &mut rng)?;
    let inputs = obs.encoder_inputs()?;
    let mut adam = AdamState::new(cfg.adam, &params.tensors());
    let mut batcher = EpochBatcher::new(obs.len(), cfg.csae_batch);
    let mut stop = EarlyStop::new(cfg);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let batch = batcher.next(&mut rng);
        let (mut g, loss) = csae_gradients(&params, obs, &inputs, &batch, cfg.exec)?;
        guard(step, loss)?;
        let inv = 1.0 / batch.len() as f64;
        g.scale_in_place(inv);
        adam.step(&mut params.tensors_mut(), &g.tensors())?;
        let mean = loss * inv;
        trace.push(LossRecord {
            step,
            terms: LossTerms {
                term2: mean,
                total: mean,
                ..LossTerms::default()
            },
        });
        if step % 100 == 0 {
            log::debug!("csae step {step}: {mean}");
        }
        if stop.should_stop(mean) {
            log::info!("csae stopped early after {} steps", step + 1);
            break;
        }
    }
    let recovered = inputs
        .iter()
        .map(|u| params.decode(&params.encode(u)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryResult {
        method: Method::Csae,
        recovered,
        steps: trace.len(),
        trace,
        cores: None,
        params: Some(params),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Least-squares tensor-ring fit of the image collection itself, by SGD on
/// the cores; recovered images are clamped to `[0, 1]`.
pub fn train_lstr(obs: &Observations, cfg: &RecoveryConfig) -> Result<RecoveryResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pixels: usize = obs.image_shape.iter().product();
    let mut cores = TrCores::init_with_std(&obs.attribute_dims, pixels, cfg.rank, cfg.lstr_init_std, &mut rng)?;
    let sgd = SgdConfig::new(cfg.lstr_lr)?;
    let mut batcher = Batcher::new(&obs.attribute_dims, cfg.batch, None);
    let mut stop = EarlyStop::new(cfg);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let batch = batcher.next(&mut rng);
        let (mut g, loss) = lstr_gradients(&cores, obs, &batch, cfg.exec)?;
        guard(step, loss)?;
        let inv = 1.0 / batch.len() as f64;
        for c in &mut g {
            c.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        sgd.step(cores.cores_mut(), &g)?;
        let mean = loss * inv;
        trace.push(LossRecord {
            step,
            terms: LossTerms {
                term3: mean,
                total: mean,
                ..LossTerms::default()
            },
        });
        if stop.should_stop(mean) {
            log::info!("lstr stopped early after {} steps", step + 1);
            break;
        }
    }
    let recovered = MultiIndex::all(&obs.attribute_dims)
        .iter()
        .map(|idx| lstr_image(&cores, idx, obs.image_shape))
        .collect::<Result<Vec<_>>>()?;
    Ok(RecoveryResult {
        method: Method::Lstr,
        recovered,
        steps: trace.len(),
        trace,
        cores: Some(cores),
        params: None,
        seconds: start.elapsed().as_secs_f64(),
    })
}
