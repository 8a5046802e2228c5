//! Tensor-ring factorization of the latent code tensor.
//!
//! A collection of `N = I_1 ⋯ I_K` latent codes of length `d` is stored as
//! `K + 1` three-way cores. Core `k < K` has shape `[R_k, I_k, R_{k+1}]`; the
//! final (latent) core has shape `[R_K, d, R_0]`, closing the ring. Entry `m`
//! of the code at multi-index `(i_1, …, i_K)` is
//!
//! ```text
//! z[m] = trace( C1(:,i_1,:) · C2(:,i_2,:) ⋯ CK(:,i_K,:) · C_{K+1}(:,m,:) )
//! ```
//!
//! Attribute slices are multiplied strictly left to right; the resulting
//! `R_0 × R_K` product is shared by all `d` latent slices.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::tensor::{matmul_into, DenseTensor};

/// Standard deviation of the Gaussian used to initialise cores.
pub const INIT_STD: f64 = 0.1;

/// Attribute multi-index `(i_1, …, i_K)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn check(&self, dims: &[usize]) -> Result<()> {
        if self.0.len() != dims.len() {
            return Err(Error::shape("multi-index", &self.0, dims));
        }
        for (&i, &e) in self.0.iter().zip(dims) {
            if i >= e {
                return Err(Error::Index {
                    context: "attribute index",
                    index: i,
                    extent: e,
                });
            }
        }
        Ok(())
    }

    /// Row-major flat position over `dims`.
    pub fn flat(&self, dims: &[usize]) -> Result<usize> {
        self.check(dims)?;
        Ok(self.0.iter().zip(dims).fold(0, |acc, (&i, &e)| acc * e + i))
    }

    pub fn from_flat(flat: usize, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if flat >= n {
            return Err(Error::Index {
                context: "flat sample index",
                index: flat,
                extent: n,
            });
        }
        let mut idx = vec![0; dims.len()];
        let mut rem = flat;
        for (slot, &e) in idx.iter_mut().zip(dims).rev() {
            *slot = rem % e;
            rem /= e;
        }
        Ok(Self(idx))
    }

    /// Every multi-index over `dims` in flat order.
    pub fn all(dims: &[usize]) -> Vec<Self> {
        let n: usize = dims.iter().product();
        (0..n)
            .map(|f| Self::from_flat(f, dims).expect("in range"))
            .collect()
    }
}

/// Cores of a tensor ring over `(I_1, …, I_K, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrCores {
    cores: Vec<DenseTensor>,
    /// `R_0, …, R_{K+1}` with `R_{K+1} = R_0`.
    ranks: Vec<usize>,
    attribute_dims: Vec<usize>,
    latent_dim: usize,
}

impl TrCores {
    /// Builds a ring from explicit cores, validating rank closure and
    /// adjacent extents. The last core is the latent core.
    pub fn from_cores(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.len() < 2 {
            return Err(Error::Invalid(
                "a tensor ring needs at least one attribute core and a latent core".into(),
            ));
        }
        if let Some(c) = cores.iter().find(|c| c.rank() != 3) {
            return Err(Error::Invalid(format!(
                "cores must be 3-way, got shape {:?}",
                c.shape()
            )));
        }
        let mut ranks: Vec<usize> = cores.iter().map(|c| c.shape()[0]).collect();
        ranks.push(cores.last().expect("nonempty").shape()[2]);
        for (k, pair) in cores.windows(2).enumerate() {
            if pair[0].shape()[2] != pair[1].shape()[0] {
                return Err(Error::Invalid(format!(
                    "core {k} ends with rank {} but core {} starts with {}",
                    pair[0].shape()[2],
                    k + 1,
                    pair[1].shape()[0]
                )));
            }
        }
        if ranks[0] != ranks[ranks.len() - 1] {
            return Err(Error::Invalid(format!(
                "ring not closed: R_0 = {} but R_K+1 = {}",
                ranks[0],
                ranks[ranks.len() - 1]
            )));
        }
        let k = cores.len() - 1;
        let attribute_dims = cores[..k].iter().map(|c| c.shape()[1]).collect();
        let latent_dim = cores[k].shape()[1];
        Ok(Self {
            cores,
            ranks,
            attribute_dims,
            latent_dim,
        })
    }

    /// Equal-rank ring with i.i.d. `N(0, 0.1²)` entries, drawn core by core
    /// in row-major order.
    pub fn init<R: Rng + ?Sized>(
        attribute_dims: &[usize],
        latent_dim: usize,
        rank: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init_with_std(attribute_dims, latent_dim, rank, INIT_STD, rng)
    }

    pub fn init_with_std<R: Rng + ?Sized>(
        attribute_dims: &[usize],
        latent_dim: usize,
        rank: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if attribute_dims.is_empty() {
            return Err(Error::Invalid("need at least one attribute".into()));
        }
        if attribute_dims.contains(&0) || latent_dim == 0 || rank == 0 {
            return Err(Error::Invalid(format!(
                "zero extent: dims {attribute_dims:?}, d = {latent_dim}, R = {rank}"
            )));
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
        let cores = attribute_dims
            .iter()
            .chain(std::iter::once(&latent_dim))
            .map(|&i| DenseTensor::from_fn(&[rank, i, rank], |_| normal.sample(rng)))
            .collect();
        Self::from_cores(cores)
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.cores
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn attribute_dims(&self) -> &[usize] {
        &self.attribute_dims
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_attributes(&self) -> usize {
        self.attribute_dims.len()
    }

    /// `Σ_k I_k R_k R_{k+1} + d R_K R_0`.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(DenseTensor::len).sum()
    }

    /// Size of the dense latent tensor, `d · Π I_k`.
    pub fn dense_size(&self) -> usize {
        self.latent_dim * self.attribute_dims.iter().product::<usize>()
    }

    pub fn compression_ratio(&self) -> f64 {
        self.dense_size() as f64 / self.param_count() as f64
    }

    /// Slice `(:, i, :)` of core `k` as a row-major `R_k × R_{k+1}` matrix.
    pub fn slice(&self, k: usize, i: usize) -> Result<DenseTensor> {
        let core = self.cores.get(k).ok_or(Error::Index {
            context: "core",
            index: k,
            extent: self.cores.len(),
        })?;
        core.slice_index(1, i)
    }

    fn slice_into(&self, k: usize, i: usize, out: &mut Vec<f64>) {
        let core = &self.cores[k];
        let (rp, ext, rn) = (core.shape()[0], core.shape()[1], core.shape()[2]);
        out.clear();
        for a in 0..rp {
            let start = (a * ext + i) * rn;
            out.extend_from_slice(&core.data()[start..start + rn]);
        }
    }

    /// Product of the attribute slices selected by `idx`, an `R_0 × R_K`
    /// row-major matrix.
    fn attribute_product(&self, idx: &MultiIndex) -> Vec<f64> {
        let r0 = self.ranks[0];
        let mut acc: Vec<f64> = identity(r0);
        let mut slice = Vec::new();
        let mut next = Vec::new();
        for (k, &i) in idx.0.iter().enumerate() {
            let (rk, rn) = (self.ranks[k], self.ranks[k + 1]);
            self.slice_into(k, i, &mut slice);
            next.resize(r0 * rn, 0.0);
            matmul_into(&acc, &slice, &mut next, r0, rk, rn);
            std::mem::swap(&mut acc, &mut next);
        }
        acc
    }

    fn contract_latent(&self, product: &[f64], out: &mut [f64]) {
        let (r0, rk, d) = (self.ranks[0], self.ranks[self.num_attributes()], self.latent_dim);
        let latent = self.cores[self.num_attributes()].data();
        for (m, z) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for b in 0..rk {
                let row = &latent[(b * d + m) * r0..(b * d + m + 1) * r0];
                for (a, &l) in row.iter().enumerate() {
                    s += product[a * rk + b] * l;
                }
            }
            *z = s;
        }
    }

    /// Latent code for one multi-index, length `d`.
    pub fn latent_code(&self, idx: &MultiIndex) -> Result<DenseTensor> {
        idx.check(&self.attribute_dims)?;
        let p = self.attribute_product(idx);
        let mut z = vec![0.0; self.latent_dim];
        self.contract_latent(&p, &mut z);
        Ok(DenseTensor::vector(z))
    }

    /// Latent codes for a batch of multi-indices as a `B × d` tensor.
    pub fn latent_batch(&self, indices: &[MultiIndex]) -> Result<DenseTensor> {
        self.latent_batch_with(Execution::default(), indices)
    }

    pub fn latent_batch_with(&self, exec: Execution, indices: &[MultiIndex]) -> Result<DenseTensor> {
        if indices.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        for idx in indices {
            idx.check(&self.attribute_dims)?;
        }
        let rows = exec.map(indices, |idx| {
            let p = self.attribute_product(idx);
            let mut z = vec![0.0; self.latent_dim];
            self.contract_latent(&p, &mut z);
            z
        });
        DenseTensor::matrix(indices.len(), self.latent_dim, rows.concat())
    }

    /// Gradient of `Σ_{b,m} upstream[b,m] · z_b[m]` with respect to every
    /// core. Contributions are accumulated in batch order.
    pub fn grad_cores(&self, indices: &[MultiIndex], upstream: &DenseTensor) -> Result<Vec<DenseTensor>> {
        self.grad_cores_with(Execution::default(), indices, upstream)
    }

    pub fn grad_cores_with(
        &self,
        exec: Execution,
        indices: &[MultiIndex],
        upstream: &DenseTensor,
    ) -> Result<Vec<DenseTensor>> {
        let expected = [indices.len(), self.latent_dim];
        if upstream.shape() != expected {
            return Err(Error::shape("grad_cores upstream", upstream.shape(), &expected));
        }
        for idx in indices {
            idx.check(&self.attribute_dims)?;
        }
        let d = self.latent_dim;
        let rows: Vec<(usize, &MultiIndex)> = indices.iter().enumerate().collect();
        let per_sample = exec.map(&rows, |&(b, idx)| {
            self.sample_grad(idx, &upstream.data()[b * d..(b + 1) * d])
        });

        let mut grads: Vec<DenseTensor> = self.cores.iter().map(|c| DenseTensor::zeros(c.shape())).collect();
        let k_attr = self.num_attributes();
        let (r0, rk) = (self.ranks[0], self.ranks[k_attr]);
        for ((b, idx), (slice_grads, product)) in rows.iter().zip(per_sample) {
            for (k, (g, &i)) in slice_grads.iter().zip(&idx.0).enumerate() {
                let (rp, ext, rn) = (self.ranks[k], self.attribute_dims[k], self.ranks[k + 1]);
                let dst = grads[k].data_mut();
                for a in 0..rp {
                    let start = (a * ext + i) * rn;
                    dst[start..start + rn]
                        .iter_mut()
                        .zip(&g[a * rn..(a + 1) * rn])
                        .for_each(|(o, v)| *o += v);
                }
            }
            let u = &upstream.data()[b * d..(b + 1) * d];
            let dst = grads[k_attr].data_mut();
            for bb in 0..rk {
                for (m, &um) in u.iter().enumerate() {
                    let row = &mut dst[(bb * d + m) * r0..(bb * d + m + 1) * r0];
                    for (a, o) in row.iter_mut().enumerate() {
                        *o += um * product[a * rk + bb];
                    }
                }
            }
        }
        Ok(grads)
    }

    /// Per-sample slice gradients `(B_k A_k)ᵀ` and the attribute product.
    fn sample_grad(&self, idx: &MultiIndex, u: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let k_attr = self.num_attributes();
        let r = &self.ranks;
        let (r0, d) = (r[0], self.latent_dim);
        let slices: Vec<Vec<f64>> = idx
            .0
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let mut s = Vec::new();
                self.slice_into(k, i, &mut s);
                s
            })
            .collect();

        // prefixes[k] = S_0 ⋯ S_{k-1}, an R_0 × R_k matrix.
        let mut prefixes = Vec::with_capacity(k_attr + 1);
        prefixes.push(identity(r0));
        for k in 0..k_attr {
            let mut next = vec![0.0; r0 * r[k + 1]];
            matmul_into(&prefixes[k], &slices[k], &mut next, r0, r[k], r[k + 1]);
            prefixes.push(next);
        }

        // G = Σ_m u[m] L_m, an R_K × R_0 matrix.
        let rk = r[k_attr];
        let latent = self.cores[k_attr].data();
        let mut suffix = vec![0.0; rk * r0];
        for b in 0..rk {
            for (m, &um) in u.iter().enumerate() {
                let row = &latent[(b * d + m) * r0..(b * d + m + 1) * r0];
                suffix[b * r0..(b + 1) * r0]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(g, &l)| *g += um * l);
            }
        }

        // Walk right to left: suffix = S_{k+1} ⋯ S_{K-1} G, an R_{k+1} × R_0 matrix.
        let mut slice_grads = vec![Vec::new(); k_attr];
        for k in (0..k_attr).rev() {
            let (rp, rn) = (r[k], r[k + 1]);
            let mut ba = vec![0.0; rn * rp];
            matmul_into(&suffix, &prefixes[k], &mut ba, rn, r0, rp);
            let mut g = vec![0.0; rp * rn];
            for a in 0..rp {
                for b in 0..rn {
                    g[a * rn + b] = ba[b * rp + a];
                }
            }
            slice_grads[k] = g;
            if k > 0 {
                let mut next = vec![0.0; rp * r0];
                matmul_into(&slices[k], &suffix, &mut next, rp, rn, r0);
                suffix = next;
            }
        }
        (slice_grads, prefixes.pop().expect("K+1 prefixes"))
    }

    /// Writes the `TRC1` checkpoint: magic, `K`, `d`, ranks `R_0..R_{K+1}`,
    /// attribute dims, then each core's entries, all little-endian 64-bit.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.writer().finish()
    }

    fn writer(&self) -> Writer {
        let mut w = Writer::new(b"TRC1");
        w.u64(self.num_attributes());
        w.u64(self.latent_dim);
        self.ranks.iter().for_each(|&r| w.u64(r));
        self.attribute_dims.iter().for_each(|&i| w.u64(i));
        self.cores.iter().for_each(|c| w.reals(c.data()));
        w
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.writer().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&binio::read_file(path)?, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        const LIMIT: usize = 1 << 24;
        let mut r = Reader::new(bytes, b"TRC1", path)?;
        let k = r.count(1024)?;
        let d = r.count(LIMIT)?;
        let ranks = (0..k + 2).map(|_| r.count(LIMIT)).collect::<Result<Vec<_>>>()?;
        let dims = (0..k).map(|_| r.count(LIMIT)).collect::<Result<Vec<_>>>()?;
        let extents: Vec<usize> = dims.iter().copied().chain(std::iter::once(d)).collect();
        let mut cores = Vec::with_capacity(k + 1);
        for (j, &e) in extents.iter().enumerate() {
            let shape = vec![ranks[j], e, ranks[j + 1]];
            let n = shape.iter().product::<usize>();
            if n > LIMIT * 16 {
                return Err(r.fail("core too large"));
            }
            let data = r.reals(n)?;
            cores.push(DenseTensor::new(shape, data).map_err(|e| r.fail(&e.to_string()))?);
        }
        r.finish()?;
        let out = Self::from_cores(cores).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if out.ranks != ranks {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "rank header disagrees with core shapes".into(),
            });
        }
        Ok(out)
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}
