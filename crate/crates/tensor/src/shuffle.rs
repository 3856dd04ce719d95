//! Depth-to-space rearrangement and its inverse.

use crate::error::{spec_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `[N, C·r², H, W] → [N, C, r·H, r·W]` with
/// `out[n, c, h·r + i, w·r + j] = in[n, c·r² + i·r + j, h, w]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    x.expect_rank(4, "pixel_shuffle")?;
    let (n, cr, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if r == 0 || cr % (r * r) != 0 {
        return spec_err(format!(
            "pixel_shuffle: {cr} channels not divisible by r² = {}",
            r * r
        ));
    }
    let c = cr / (r * r);
    let mut out = vec![T::ZERO; x.len()];
    let src = x.data();
    let (oh, ow) = (h * r, w * r);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = ((b * cr) + ch * r * r + i * r + j) * h * w;
                    for y in 0..h {
                        let dst_row = ((b * c + ch) * oh + y * r + i) * ow;
                        for xx in 0..w {
                            out[dst_row + xx * r + j] = src[plane + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    x.expect_rank(4, "pixel_unshuffle")?;
    let (n, c, oh, ow) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return spec_err(format!(
            "pixel_unshuffle: spatial {oh}x{ow} not divisible by {r}"
        ));
    }
    let (h, w) = (oh / r, ow / r);
    let cr = c * r * r;
    let mut out = vec![T::ZERO; x.len()];
    let src = x.data();
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let plane = ((b * cr) + ch * r * r + i * r + j) * h * w;
                    for y in 0..h {
                        let src_row = ((b * c + ch) * oh + y * r + i) * ow;
                        for xx in 0..w {
                            out[plane + y * w + xx] = src[src_row + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, cr, h, w], out)
}
