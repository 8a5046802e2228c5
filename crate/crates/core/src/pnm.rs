//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Quantizes a `[C, H, W]` image in `[0, 1]` to bytes; values outside the
/// range are clamped.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode(image: &DenseTensor) -> Result<Vec<u8>> {
    let (c, h, w) = match *image.shape() {
        [c @ (1 | 3), h, w] => (c, h, w),
        _ => return Err(Error::Invalid(format!("cannot write image of shape {:?}", image.shape()))),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(d[(ch * h + y) * w + x]));
            }
        }
    }
    Ok(out)
}

pub fn write(path: &Path, image: &DenseTensor) -> Result<()> {
    std::fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<DenseTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Parses a P5/P6 file into a `[C, H, W]` tensor with entries `v / 255`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<DenseTensor> {
    let fail = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| fail("non-ASCII header"))?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let c = match tokens[0] {
        "P5" => 1,
        "P6" => 3,
        other => return Err(fail(&format!("unsupported magic {other:?}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| fail(&format!("bad header field {s:?}")));
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval != 255 {
        return Err(fail("only 8-bit images (maxval 255) are supported"));
    }
    if w == 0 || h == 0 {
        return Err(fail("zero image extent"));
    }
    let n = c * h * w;
    if bytes.len() < pos || bytes.len() - pos != n {
        return Err(fail(&format!("expected {n} raster bytes")));
    }
    let raster = &bytes[pos..];
    let mut img = DenseTensor::zeros(&[c, h, w]);
    let d = img.data_mut();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                d[(ch * h + y) * w + x] = f64::from(raster[(y * w + x) * c + ch]) / 255.0;
            }
        }
    }
    Ok(img)
}
