//! Attribute-indexed image collections: a synthetic renderer, on-disk
//! storage, and corruption into measurements.
//!
//! Samples are ordered row-major over the attribute extents. A saved
//! dataset directory contains:
//!
//! * `manifest.txt`, whose first line is `K I_1 … I_K H W C`;
//! * ground-truth images `img_<i1>_…_<iK>.pgm` (or `.ppm` for colour);
//! * after corruption, `measurements.bin` (raw measurements, see
//!   [`Observations::to_bytes`]) and `replay.txt`, one line per sample of
//!   the form `index i1 … iK block_y block_x sigma` after a `#` header
//!   naming the task and seed. Noise lines carry `-` for the block origin;
//!   mask lines carry sigma `0` and take the block size from the header.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::measurement::{calibrate_noise_sigma, MeasurementOp};
use crate::metrics;
use crate::pnm;
use crate::tensor::DenseTensor;
use crate::tensor_ring::MultiIndex;

pub const MANIFEST: &str = "manifest.txt";
pub const MEASUREMENTS: &str = "measurements.bin";
pub const REPLAY: &str = "replay.txt";

/// Byte value of the synthetic background in every channel.
pub const BACKGROUND: u8 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    Disk,
    Square,
    Triangle,
    Cross,
    Diamond,
    Ring,
    Frame,
    Saltire,
}

impl Glyph {
    pub const ALL: [Glyph; 8] = [
        Glyph::Disk,
        Glyph::Square,
        Glyph::Triangle,
        Glyph::Cross,
        Glyph::Diamond,
        Glyph::Ring,
        Glyph::Frame,
        Glyph::Saltire,
    ];

    /// Whether the pixel at offset `(dx, dy)` from the centre is covered at
    /// radius `r`.
    pub fn covers(self, dx: i64, dy: i64, r: i64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        let half = r * 4 / 5;
        match self {
            Glyph::Disk => dx * dx + dy * dy <= r * r,
            Glyph::Square => ax.max(ay) <= half,
            Glyph::Triangle => dy <= half && 2 * ax <= dy + r,
            Glyph::Cross => (ax <= r / 3 && ay <= r) || (ay <= r / 3 && ax <= r),
            Glyph::Diamond => ax + ay <= r,
            Glyph::Ring => {
                let d2 = dx * dx + dy * dy;
                4 * d2 >= r * r && d2 <= r * r
            }
            Glyph::Frame => ax.max(ay) <= half && ax.max(ay) > half - r / 3,
            Glyph::Saltire => (ax - ay).abs() <= r / 4 && ax.max(ay) <= half,
        }
    }
}

/// What the third attribute varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Glyph centre moves along the main diagonal at a fixed radius.
    Position,
    /// Glyph stays centred and its radius grows.
    Scale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub glyphs: usize,
    pub levels: usize,
    pub placements: usize,
    pub placement: Placement,
    pub size: usize,
    pub channels: usize,
}

impl SyntheticSpec {
    /// Four glyphs, five levels, five positions, 64×64 grayscale.
    pub fn toy() -> Self {
        Self {
            glyphs: 4,
            levels: 5,
            placements: 5,
            placement: Placement::Position,
            size: 64,
            channels: 1,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.glyphs, self.levels, self.placements]
    }

    pub fn validate(&self) -> Result<()> {
        if self.glyphs == 0 || self.levels == 0 || self.placements == 0 {
            return Err(Error::Invalid("attribute extents must be positive".into()));
        }
        if self.glyphs > Glyph::ALL.len() {
            return Err(Error::Invalid(format!(
                "at most {} glyphs are available, asked for {}",
                Glyph::ALL.len(),
                self.glyphs
            )));
        }
        if self.size == 0 || !self.size.is_multiple_of(16) {
            return Err(Error::Invalid(format!("image size {} is not a positive multiple of 16", self.size)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Invalid(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    /// Foreground byte value per channel for level `j`.
    fn colour(&self, j: usize) -> [u8; 3] {
        let n = self.levels;
        if self.channels == 1 {
            let v = if n == 1 { 0 } else { 120 * j / (n - 1) };
            return [v as u8; 3];
        }
        // hues evenly spaced around the wheel, all darker than the background
        let h = j as f64 / n as f64;
        let mut rgb = [0u8; 3];
        for (c, slot) in rgb.iter_mut().enumerate() {
            let phase = std::f64::consts::TAU * (h - c as f64 / 3.0);
            *slot = (150.0 * (0.5 + 0.5 * phase.cos())).round() as u8;
        }
        rgb
    }

    /// Centre and radius for placement `j`.
    fn geometry(&self, j: usize) -> (i64, i64, i64) {
        let s = self.size as i64;
        let n = self.placements as i64;
        let j = j as i64;
        match self.placement {
            Placement::Position => {
                let r = s * 3 / 16;
                let margin = r + 1;
                let c = if n == 1 { s / 2 } else { margin + j * (s - 1 - 2 * margin) / (n - 1) };
                (c, c, r)
            }
            Placement::Scale => {
                let (lo, hi) = (s / 8, s * 3 / 8);
                let r = if n == 1 { (lo + hi) / 2 } else { lo + j * (hi - lo) / (n - 1) };
                (s / 2, s / 2, r)
            }
        }
    }

    /// Renders the image at `(glyph, level, placement)` on a uniform
    /// [`BACKGROUND`] using integer rasterization only.
    pub fn render(&self, idx: &MultiIndex) -> Result<DenseTensor> {
        self.validate()?;
        idx.check(&self.dims())?;
        let glyph = Glyph::ALL[idx.0[0]];
        let colour = self.colour(idx.0[1]);
        let (cx, cy, r) = self.geometry(idx.0[2]);
        let (c, s) = (self.channels, self.size);
        let mut img = DenseTensor::filled(&[c, s, s], f64::from(BACKGROUND) / 255.0);
        let data = img.data_mut();
        for y in 0..s {
            for x in 0..s {
                if glyph.covers(x as i64 - cx, y as i64 - cy, r) {
                    for ch in 0..c {
                        data[(ch * s + y) * s + x] = f64::from(colour[ch]) / 255.0;
                    }
                }
            }
        }
        Ok(img)
    }
}

/// Corruption protocol applied to every sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    /// Additive Gaussian noise at a per-image SNR in dB.
    Denoise { snr_db: f64 },
    /// One zeroed `block × block` square per image at a random location.
    Inpaint { block: usize },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Denoise { .. } => "denoise",
            Task::Inpaint { .. } => "inpaint",
        }
    }
}

/// Everything a recovery method may see: measurements, their operators and
/// the attribute bookkeeping. Never holds ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub attribute_dims: Vec<usize>,
    pub image_shape: [usize; 3],
    pub measurements: Vec<DenseTensor>,
    pub ops: Vec<MeasurementOp>,
}

impl Observations {
    pub fn new(
        attribute_dims: Vec<usize>,
        image_shape: [usize; 3],
        measurements: Vec<DenseTensor>,
        ops: Vec<MeasurementOp>,
    ) -> Result<Self> {
        let n: usize = attribute_dims.iter().product();
        if attribute_dims.is_empty() || n == 0 {
            return Err(Error::Invalid(format!("bad attribute extents {attribute_dims:?}")));
        }
        if measurements.len() != n || ops.len() != n {
            return Err(Error::Invalid(format!(
                "{} measurements and {} operators for {n} samples",
                measurements.len(),
                ops.len()
            )));
        }
        Ok(Self {
            attribute_dims,
            image_shape,
            measurements,
            ops,
        })
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn index(&self, flat: usize) -> Result<MultiIndex> {
        MultiIndex::from_flat(flat, &self.attribute_dims)
    }

    /// Image-shaped encoder inputs, one per sample.
    pub fn encoder_inputs(&self) -> Result<Vec<DenseTensor>> {
        self.measurements
            .iter()
            .zip(&self.ops)
            .map(|(y, op)| op.encoder_input(y, &self.image_shape))
            .collect()
    }

    /// `MSR1`, sample count, then per sample its length and values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(b"MSR1");
        w.u64(self.len());
        for y in &self.measurements {
            w.u64(y.len());
            w.reals(y.data());
        }
        w.finish()
    }

    fn measurements_from_bytes(bytes: &[u8], path: &Path, expect: usize, shape: &[usize]) -> Result<Vec<DenseTensor>> {
        let mut r = Reader::new(bytes, b"MSR1", path)?;
        let n = r.count(1 << 24)?;
        if n != expect {
            return Err(r.fail(&format!("{n} measurements, manifest implies {expect}")));
        }
        let per: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.count(1 << 28)?;
            if len != per {
                return Err(r.fail(&format!("measurement of length {len}, expected {per}")));
            }
            out.push(DenseTensor::new(shape.to_vec(), r.reals(len)?)?);
        }
        r.finish()?;
        Ok(out)
    }
}

/// How a dataset's measurements were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionInfo {
    pub task: Task,
    pub seed: u64,
    /// Mean per-image PSNR of the measurements against ground truth; only
    /// known when the corruption was performed in this process.
    pub input_psnr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredDataset {
    pub attribute_dims: Vec<usize>,
    pub image_shape: [usize; 3],
    pub images: Option<Vec<DenseTensor>>,
    pub observations: Option<Observations>,
    pub corruption: Option<CorruptionInfo>,
}

impl StructuredDataset {
    pub fn from_images(attribute_dims: Vec<usize>, images: Vec<DenseTensor>) -> Result<Self> {
        let n: usize = attribute_dims.iter().product();
        if attribute_dims.is_empty() || n == 0 || images.len() != n {
            return Err(Error::Invalid(format!(
                "{} images for attribute extents {attribute_dims:?}",
                images.len()
            )));
        }
        let image_shape: [usize; 3] = images[0]
            .shape()
            .try_into()
            .map_err(|_| Error::Invalid(format!("images must be [C, H, W], got {:?}", images[0].shape())))?;
        for img in &images {
            if img.shape() != image_shape {
                return Err(Error::shape("dataset image", img.shape(), &image_shape));
            }
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invalid("image values must lie in [0, 1]".into()));
            }
        }
        Ok(Self {
            attribute_dims,
            image_shape,
            images: Some(images),
            observations: None,
            corruption: None,
        })
    }

    pub fn len(&self) -> usize {
        self.attribute_dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> Result<&[DenseTensor]> {
        self.images
            .as_deref()
            .ok_or_else(|| Error::Invalid("dataset carries no ground-truth images".into()))
    }

    pub fn observations(&self) -> Result<&Observations> {
        self.observations
            .as_ref()
            .ok_or_else(|| Error::Invalid("dataset has not been corrupted".into()))
    }

    pub fn image_path(dir: &Path, idx: &MultiIndex, channels: usize) -> PathBuf {
        let mut name = String::from("img");
        for i in &idx.0 {
            let _ = write!(name, "_{i}");
        }
        name.push_str(if channels == 1 { ".pgm" } else { ".ppm" });
        dir.join(name)
    }

    /// Writes the manifest, images (8-bit) and, when present, the raw
    /// measurements and the replay sidecar.
    pub fn save_directory(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_manifest(dir, &self.attribute_dims, self.image_shape)?;
        if let Some(images) = &self.images {
            for (flat, img) in images.iter().enumerate() {
                let idx = MultiIndex::from_flat(flat, &self.attribute_dims)?;
                pnm::write(&Self::image_path(dir, &idx, self.image_shape[0]), img)?;
            }
        }
        if let Some(obs) = &self.observations {
            let path = dir.join(MEASUREMENTS);
            std::fs::write(&path, obs.to_bytes()).map_err(|e| Error::io(&path, e))?;
            let path = dir.join(REPLAY);
            let text = replay_text(obs, self.corruption.as_ref())?;
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Loads images and, if present, measurements and the replay sidecar.
    pub fn load_directory(dir: &Path) -> Result<Self> {
        let (dims, shape) = read_manifest(dir)?;
        let mut images = Vec::new();
        for idx in MultiIndex::all(&dims) {
            let path = Self::image_path(dir, &idx, shape[0]);
            if !path.exists() {
                return Err(Error::MissingImage { index: idx.0, path });
            }
            let img = pnm::read(&path)?;
            if img.shape() != shape {
                return Err(Error::Format {
                    path,
                    reason: format!("image shape {:?} disagrees with manifest {:?}", img.shape(), shape),
                });
            }
            images.push(img);
        }
        let mut ds = Self::from_images(dims, images)?;
        if dir.join(MEASUREMENTS).exists() {
            let (obs, info) = load_observations_with_info(dir)?;
            ds.observations = Some(obs);
            ds.corruption = info;
        }
        Ok(ds)
    }
}

/// Renders every sample of `spec` in flat order.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<StructuredDataset> {
    spec.validate()?;
    let dims = spec.dims();
    let images = MultiIndex::all(&dims)
        .iter()
        .map(|idx| spec.render(idx))
        .collect::<Result<Vec<_>>>()?;
    StructuredDataset::from_images(dims, images)
}

/// Draws one measurement per sample, in flat order, from a generator seeded
/// with `seed`, and records the mean input PSNR.
pub fn corrupt_dataset(ds: &StructuredDataset, task: Task, seed: u64) -> Result<StructuredDataset> {
    let images = ds.images()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops = Vec::with_capacity(images.len());
    let mut measurements = Vec::with_capacity(images.len());
    let mut psnrs = Vec::with_capacity(images.len());
    for x in images {
        let op = match task {
            Task::Denoise { snr_db } => MeasurementOp::Noisy {
                sigma: calibrate_noise_sigma(x, snr_db)?,
            },
            Task::Inpaint { block } => MeasurementOp::random_block(x.shape(), block, &mut rng)?,
        };
        let y = op.corrupt(x, &mut rng)?;
        psnrs.push(metrics::psnr(&y, x)?);
        ops.push(op);
        measurements.push(y);
    }
    let obs = Observations::new(ds.attribute_dims.clone(), ds.image_shape, measurements, ops)?;
    let input_psnr = metrics::mean_std(&psnrs).0;
    log::info!("corrupted {} samples ({}), mean input PSNR {input_psnr:.2} dB", images.len(), task.name());
    Ok(StructuredDataset {
        observations: Some(obs),
        corruption: Some(CorruptionInfo {
            task,
            seed,
            input_psnr_db: Some(input_psnr),
        }),
        ..ds.clone()
    })
}

/// Reads only the manifest, measurements and sidecar of a dataset
/// directory; ground-truth images are never opened.
pub fn load_observations(dir: &Path) -> Result<Observations> {
    Ok(load_observations_with_info(dir)?.0)
}

fn load_observations_with_info(dir: &Path) -> Result<(Observations, Option<CorruptionInfo>)> {
    let (dims, shape) = read_manifest(dir)?;
    let n: usize = dims.iter().product();
    let path = dir.join(MEASUREMENTS);
    let measurements = Observations::measurements_from_bytes(&binio::read_file(&path)?, &path, n, &shape)?;
    let path = dir.join(REPLAY);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let (ops, info) = parse_replay(&text, &path, &dims, shape)?;
    Ok((Observations::new(dims, shape, measurements, ops)?, info))
}

fn write_manifest(dir: &Path, dims: &[usize], shape: [usize; 3]) -> Result<()> {
    let mut line = dims.len().to_string();
    for d in dims {
        let _ = write!(line, " {d}");
    }
    let [c, h, w] = shape;
    let _ = writeln!(line, " {h} {w} {c}");
    let path = dir.join(MANIFEST);
    std::fs::write(&path, line).map_err(|e| Error::io(&path, e))
}

fn read_manifest(dir: &Path) -> Result<(Vec<usize>, [usize; 3])> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let fail = |reason: String| Error::Format {
        path: path.clone(),
        reason,
    };
    let first = text.lines().next().unwrap_or("");
    let fields = first
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| fail(format!("bad manifest field {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let k = *fields.first().ok_or_else(|| fail("empty manifest".into()))?;
    if k == 0 || fields.len() != k + 4 {
        return Err(fail(format!("expected `K I_1 … I_K H W C`, got {first:?}")));
    }
    let dims = fields[1..=k].to_vec();
    let (h, w, c) = (fields[k + 1], fields[k + 2], fields[k + 3]);
    if dims.contains(&0) || h == 0 || w == 0 || (c != 1 && c != 3) {
        return Err(fail(format!("unsupported extents in {first:?}")));
    }
    Ok((dims, [c, h, w]))
}

fn replay_text(obs: &Observations, info: Option<&CorruptionInfo>) -> Result<String> {
    let mut out = String::new();
    match info {
        Some(CorruptionInfo {
            task: Task::Denoise { snr_db },
            seed,
            ..
        }) => {
            let _ = writeln!(out, "# task denoise snr_db {snr_db} seed {seed}");
        }
        Some(CorruptionInfo {
            task: Task::Inpaint { block },
            seed,
            ..
        }) => {
            let _ = writeln!(out, "# task inpaint block {block} seed {seed}");
        }
        None => out.push_str("# task unknown\n"),
    }
    out.push_str("# index i1 ... iK block_y block_x sigma\n");
    for (flat, op) in obs.ops.iter().enumerate() {
        let idx = obs.index(flat)?;
        let _ = write!(out, "{flat}");
        for i in &idx.0 {
            let _ = write!(out, " {i}");
        }
        match op {
            MeasurementOp::Noisy { sigma } => {
                let _ = writeln!(out, " - - {sigma}");
            }
            MeasurementOp::Mask {
                origin: Some((oy, ox)),
                block,
                ..
            } if matches!(info, Some(CorruptionInfo { task: Task::Inpaint { block: b }, .. }) if b == block) => {
                let _ = writeln!(out, " {oy} {ox} 0");
            }
            _ => {
                return Err(Error::Invalid(
                    "replay sidecars hold noise operators and block masks from an inpainting run".into(),
                ))
            }
        }
    }
    Ok(out)
}

fn parse_replay(
    text: &str,
    path: &Path,
    dims: &[usize],
    shape: [usize; 3],
) -> Result<(Vec<MeasurementOp>, Option<CorruptionInfo>)> {
    let fail = |line: usize, reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {}: {reason}", line + 1),
    };
    let mut info = None;
    let mut ops = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if let Some(header) = line.strip_prefix('#') {
            let t: Vec<&str> = header.split_whitespace().collect();
            info = match t.as_slice() {
                ["task", "denoise", "snr_db", snr, "seed", seed] => Some(CorruptionInfo {
                    task: Task::Denoise {
                        snr_db: snr.parse().map_err(|_| fail(ln, "bad snr"))?,
                    },
                    seed: seed.parse().map_err(|_| fail(ln, "bad seed"))?,
                    input_psnr_db: None,
                }),
                ["task", "inpaint", "block", b, "seed", seed] => Some(CorruptionInfo {
                    task: Task::Inpaint {
                        block: b.parse().map_err(|_| fail(ln, "bad block"))?,
                    },
                    seed: seed.parse().map_err(|_| fail(ln, "bad seed"))?,
                    input_psnr_db: None,
                }),
                _ => info,
            };
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        let k = dims.len();
        if t.len() < k + 4 {
            return Err(fail(ln, "too few fields"));
        }
        let flat: usize = t[0].parse().map_err(|_| fail(ln, "bad index"))?;
        if flat != ops.len() {
            return Err(fail(ln, &format!("expected sample {}, found {flat}", ops.len())));
        }
        let idx = t[1..=k]
            .iter()
            .map(|s| s.parse::<usize>().map_err(|_| fail(ln, "bad attribute index")))
            .collect::<Result<Vec<_>>>()?;
        if MultiIndex(idx).flat(dims).ok() != Some(flat) {
            return Err(fail(ln, "multi-index disagrees with flat index"));
        }
        let rest = &t[k + 1..];
        let op = match rest {
            ["-", "-", sigma] => MeasurementOp::Noisy {
                sigma: sigma.parse().map_err(|_| fail(ln, "bad sigma"))?,
            },
            [oy, ox, "0"] => {
                let Some(CorruptionInfo {
                    task: Task::Inpaint { block },
                    ..
                }) = info
                else {
                    return Err(fail(ln, "block origin without an inpainting header"));
                };
                let p = |s: &str| s.parse::<usize>().map_err(|_| fail(ln, "bad block origin"));
                MeasurementOp::block_mask(&shape, block, (p(oy)?, p(ox)?))?
            }
            _ => return Err(fail(ln, "unrecognised operator fields")),
        };
        ops.push(op);
    }
    let n: usize = dims.iter().product();
    if ops.len() != n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} operators for {n} samples", ops.len()),
        });
    }
    Ok((ops, info))
}
