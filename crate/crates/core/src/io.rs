//! `.lf4` light-field container and binary PGM/PPM view images.
//!
//! `.lf4` layout (little-endian): magic `LF4D`, `u32` version = 1, `u32`
//! extents `U, V, C, H, W`, then `U·V·C·H·W` `f32` samples in
//! `[U, V, C, H, W]` row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use lgfn_tensor::{Real, Tensor};

use crate::error::{io_err, LgfnError, Result};
use crate::lightfield::{LfDims, LightField};

pub const LF4_MAGIC: &[u8; 4] = b"LF4D";
pub const LF4_VERSION: u32 = 1;
pub const LF4_HEADER_BYTES: usize = 4 + 4 + 5 * 4;

pub fn encode_lf4<T: Real>(lf: &LightField<T>) -> Vec<u8> {
    let d = lf.dims();
    let mut out = Vec::with_capacity(LF4_HEADER_BYTES + 4 * lf.tensor().len());
    out.extend_from_slice(LF4_MAGIC);
    out.extend_from_slice(&LF4_VERSION.to_le_bytes());
    for e in d.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in lf.tensor().data() {
        out.extend_from_slice(&v.to_f32().to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_lf4(bytes: &[u8]) -> Result<LightField<f32>> {
    if bytes.len() < 4 || &bytes[..4] != LF4_MAGIC {
        return Err(LgfnError::Format(format!(
            "bad magic {:?}, expected \"LF4D\"",
            String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
        )));
    }
    if bytes.len() < LF4_HEADER_BYTES {
        return Err(LgfnError::Corruption(format!(
            "header truncated at {} bytes",
            bytes.len()
        )));
    }
    let version = read_u32(bytes, 4);
    if version != LF4_VERSION {
        return Err(LgfnError::Format(format!(
            "unsupported .lf4 version {version}"
        )));
    }
    let ext: Vec<usize> = (0..5)
        .map(|i| read_u32(bytes, 8 + 4 * i) as usize)
        .collect();
    if ext.contains(&0) {
        return Err(LgfnError::Format(format!("zero extent in header {ext:?}")));
    }
    let n: usize = ext.iter().product();
    let expected = LF4_HEADER_BYTES + 4 * n;
    if bytes.len() != expected {
        return Err(LgfnError::Corruption(format!(
            "payload is {} bytes, header {ext:?} implies {}",
            bytes.len() - LF4_HEADER_BYTES,
            4 * n
        )));
    }
    let data = bytes[LF4_HEADER_BYTES..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    LightField::new(Tensor::new(&ext, data)?)
}

pub fn lf_store<T: Real>(lf: &LightField<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_lf4(lf)).map_err(io_err(path))
}

pub fn lf_load(path: impl AsRef<Path>) -> Result<LightField<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_lf4(&bytes)
}

/// A decoded 8-bit PGM (`channels == 1`) or PPM (`channels == 3`) image.
#[derive(Debug, Clone, PartialEq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Interleaved samples, row-major.
    pub samples: Vec<u8>,
}

fn header_tokens(bytes: &[u8], count: usize) -> Option<(Vec<usize>, usize)> {
    let mut pos = 2;
    let mut tokens = Vec::new();
    while tokens.len() < count {
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
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).ok()?.parse().ok()?);
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return None;
    }
    Some((tokens, pos + 1))
}

pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<PnmImage, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err("not a binary PGM (P5) or PPM (P6) file".into()),
    };
    let (t, offset) = header_tokens(bytes, 3).ok_or("malformed header")?;
    let (width, height, maxval) = (t[0], t[1], t[2]);
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, expected 255"));
    }
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    let n = width * height * channels;
    if bytes.len() < offset + n {
        return Err(format!(
            "raster truncated: {} of {n} bytes",
            bytes.len() - offset
        ));
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        samples: bytes[offset..offset + n].to_vec(),
    })
}

pub fn encode_pnm(img: &PnmImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.samples);
    out
}

/// Quantizes a `[C, H, W]` view (C = 1 or 3) with values in `[0, 1]` to 8 bits.
pub fn view_to_pnm<T: Real>(view: &Tensor<T>) -> Result<PnmImage> {
    let s = view.shape();
    if s.len() != 3 || (s[0] != 1 && s[0] != 3) {
        return Err(LgfnError::InvalidInput(format!(
            "view must be [1|3, H, W], got {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let plane = h * w;
    let samples = (0..plane * c)
        .map(|i| {
            let (p, ch) = (i / c, i % c);
            let v = view.data()[ch * plane + p].to_f64();
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    Ok(PnmImage {
        width: w,
        height: h,
        channels: c,
        samples,
    })
}

pub fn view_file_name(u: usize, v: usize, channels: usize) -> String {
    let ext = if channels == 3 { "ppm" } else { "pgm" };
    format!("view_{u}_{v}.{ext}")
}

fn find_view(dir: &Path, u: usize, v: usize) -> Option<PathBuf> {
    ["pgm", "ppm"]
        .iter()
        .map(|ext| dir.join(format!("view_{u}_{v}.{ext}")))
        .find(|p| p.is_file())
}

/// Reads a `U × V` grid of `view_{u}_{v}.pgm|ppm` files into a light field
/// with samples mapped to `[0, 1]` by `/255`.
pub fn import_views(dir: impl AsRef<Path>, u: usize, v: usize) -> Result<LightField<f32>> {
    let dir = dir.as_ref();
    if u == 0 || v == 0 {
        return Err(LgfnError::InvalidInput(
            "angular extents must be positive".into(),
        ));
    }
    let mut first: Option<(PathBuf, PnmImage)> = None;
    let mut data = Vec::new();
    for uu in 0..u {
        for vv in 0..v {
            let path = find_view(dir, uu, vv).ok_or_else(|| LgfnError::Ingest {
                file: dir.join(format!("view_{uu}_{vv}.pgm")),
                reason: "missing view".into(),
            })?;
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let img = decode_pnm(&bytes).map_err(|reason| LgfnError::Ingest {
                file: path.clone(),
                reason,
            })?;
            if let Some((first_path, f)) = &first {
                if (f.width, f.height, f.channels) != (img.width, img.height, img.channels) {
                    return Err(LgfnError::Ingest {
                        file: path.clone(),
                        reason: format!(
                            "{}x{}x{} differs from {} ({}x{}x{})",
                            img.width,
                            img.height,
                            img.channels,
                            first_path.display(),
                            f.width,
                            f.height,
                            f.channels
                        ),
                    });
                }
            }
            let (c, plane) = (img.channels, img.width * img.height);
            for ch in 0..c {
                data.extend((0..plane).map(|p| img.samples[p * c + ch] as f32 / 255.0));
            }
            if first.is_none() {
                first = Some((path, img));
            }
        }
    }
    let (_, f) = first.expect("at least one view");
    let dims = LfDims {
        u,
        v,
        c: f.channels,
        h: f.height,
        w: f.width,
    };
    LightField::ingest(Tensor::new(&dims.shape(), data)?)
}

/// Writes every view of the field as `view_{u}_{v}.pgm|ppm` under `dir`.
pub fn export_views<T: Real>(lf: &LightField<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let d = lf.dims();
    for u in 0..d.u {
        for v in 0..d.v {
            let img = view_to_pnm(&lf.view(u, v)?)?;
            let path = dir.join(view_file_name(u, v, d.c));
            fs::write(&path, encode_pnm(&img)).map_err(io_err(&path))?;
        }
    }
    Ok(())
}
