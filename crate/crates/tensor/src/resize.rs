//! Separable bilinear / bicubic resampling with half-pixel centres.
//!
//! Each output sample is written as `anchor + Σ wᵢ·(xᵢ − anchor)` where the
//! anchor is the first tap. The weights sum to one, so this is the usual
//! weighted sum, but a constant input is reproduced bit-exactly.

use crate::counter;
use crate::error::{spec_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Bilinear,
    Bicubic,
}

/// Keys cubic convolution coefficient.
pub const BICUBIC_A: f64 = -0.5;

/// Positive rational scale factor `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub num: usize,
    pub den: usize,
}

impl Scale {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return spec_err(format!("scale {num}/{den} must be positive"));
        }
        Ok(Self { num, den })
    }

    pub fn up(s: usize) -> Self {
        Self { num: s, den: 1 }
    }

    pub fn down(s: usize) -> Self {
        Self { num: 1, den: s }
    }

    pub fn apply(&self, extent: usize) -> usize {
        extent * self.num / self.den
    }
}

pub fn keys_cubic(t: f64) -> f64 {
    let a = BICUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Taps `(source index, weight)` for every output position along one axis.
#[derive(Debug, Clone)]
pub struct AxisTaps {
    pub taps: Vec<Vec<(usize, f64)>>,
    pub in_extent: usize,
}

impl AxisTaps {
    pub fn new(in_extent: usize, out_extent: usize, mode: ResizeMode) -> Self {
        let ratio = in_extent as f64 / out_extent as f64;
        let last = in_extent as isize - 1;
        let clamp = |i: isize| i.clamp(0, last) as usize;
        let taps = (0..out_extent)
            .map(|o| {
                let src = (o as f64 + 0.5) * ratio - 0.5;
                match mode {
                    ResizeMode::Bilinear => {
                        let src = src.max(0.0);
                        let i0 = src.floor() as isize;
                        let t = src - i0 as f64;
                        vec![(clamp(i0), 1.0 - t), (clamp(i0 + 1), t)]
                    }
                    ResizeMode::Bicubic => {
                        let i0 = src.floor() as isize;
                        let t = src - i0 as f64;
                        (-1..=2)
                            .map(|k| (clamp(i0 + k), keys_cubic(t - k as f64)))
                            .collect()
                    }
                }
            })
            .collect();
        Self { taps, in_extent }
    }

    pub fn out_extent(&self) -> usize {
        self.taps.len()
    }

    /// Resamples `lines` contiguous lines of `in_extent` samples with element
    /// stride `stride` between samples; used for both axes.
    fn apply<T: Real>(&self, src: &[T], dst: &mut [T], stride: usize) {
        for (o, taps) in self.taps.iter().enumerate() {
            let anchor = src[taps[0].0 * stride];
            let mut acc = T::ZERO;
            for &(i, w) in taps {
                acc += T::from_f64(w) * (src[i * stride] - anchor);
            }
            dst[o * stride] = anchor + acc;
        }
    }

    /// Adjoint of [`AxisTaps::apply`].
    fn apply_adjoint<T: Real>(&self, gout: &[T], gin: &mut [T], stride: usize) {
        for (o, taps) in self.taps.iter().enumerate() {
            let g = gout[o * stride];
            let mut total = 0.0;
            for &(i, w) in taps {
                gin[i * stride] += T::from_f64(w) * g;
                total += w;
            }
            gin[taps[0].0 * stride] += T::from_f64(1.0 - total) * g;
        }
    }
}

/// Resampling plan for the trailing two axes of a tensor.
#[derive(Debug, Clone)]
pub struct ResizePlan {
    pub rows: AxisTaps,
    pub cols: AxisTaps,
}

impl ResizePlan {
    pub fn new(h: usize, w: usize, out_h: usize, out_w: usize, mode: ResizeMode) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return spec_err(format!("resize output {out_h}x{out_w} is empty"));
        }
        Ok(Self {
            rows: AxisTaps::new(h, out_h, mode),
            cols: AxisTaps::new(w, out_w, mode),
        })
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (outer, h, w) = x.trailing_2d()?;
        let (oh, ow) = (self.rows.out_extent(), self.cols.out_extent());
        debug_assert_eq!((h, w), (self.rows.in_extent, self.cols.in_extent));
        let mut tmp = vec![T::ZERO; outer * h * ow];
        for (line, out) in x.data().chunks(w).zip(tmp.chunks_mut(ow)) {
            self.cols.apply(line, out, 1);
        }
        let mut out = vec![T::ZERO; outer * oh * ow];
        for (plane, dst) in tmp.chunks(h * ow).zip(out.chunks_mut(oh * ow)) {
            for c in 0..ow {
                self.rows.apply(&plane[c..], &mut dst[c..], ow);
            }
        }
        counter::add_elementwise(out.len());
        let mut shape = x.shape().to_vec();
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        Tensor::new(&shape, out)
    }

    pub fn backward<T: Real>(&self, input_shape: &[usize], gout: &Tensor<T>) -> Result<Tensor<T>> {
        let (outer, oh, ow) = gout.trailing_2d()?;
        let (h, w) = (self.rows.in_extent, self.cols.in_extent);
        let mut tmp = vec![T::ZERO; outer * h * ow];
        for (plane, dst) in gout.data().chunks(oh * ow).zip(tmp.chunks_mut(h * ow)) {
            for c in 0..ow {
                self.rows.apply_adjoint(&plane[c..], &mut dst[c..], ow);
            }
        }
        let mut gx = vec![T::ZERO; outer * h * w];
        for (line, dst) in tmp.chunks(ow).zip(gx.chunks_mut(w)) {
            self.cols.apply_adjoint(line, dst, 1);
        }
        Tensor::new(input_shape, gx)
    }
}

/// Resizes the trailing two axes by `scale`.
pub fn resize<T: Real>(x: &Tensor<T>, scale: Scale, mode: ResizeMode) -> Result<Tensor<T>> {
    let (_, h, w) = x.trailing_2d()?;
    let plan = ResizePlan::new(h, w, scale.apply(h), scale.apply(w), mode)?;
    plan.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_are_exact() {
        for mode in [ResizeMode::Bilinear, ResizeMode::Bicubic] {
            for scale in [
                Scale::up(2),
                Scale::up(4),
                Scale::down(2),
                Scale::new(3, 2).unwrap(),
            ] {
                let x = Tensor::<f64>::full(&[2, 6, 8], 0.3).unwrap();
                let y = resize(&x, scale, mode).unwrap();
                assert!(y.data().iter().all(|&v| v == 0.3), "{mode:?} {scale:?}");
            }
        }
    }

    #[test]
    fn bilinear_ramp_is_monotone() {
        let x = Tensor::<f64>::new(&[1, 2], vec![0.0, 1.0]).unwrap();
        let y = resize(&x, Scale::up(2), ResizeMode::Bilinear).unwrap();
        assert_eq!(y.shape(), &[2, 4]);
        for row in y.data().chunks(4) {
            assert!(row.windows(2).all(|p| p[0] <= p[1]), "{row:?}");
        }
    }

    #[test]
    fn keys_kernel_partition_of_unity() {
        for i in 0..10 {
            let t = i as f64 / 10.0;
            let s: f64 = (-1..=2).map(|k| keys_cubic(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(keys_cubic(0.0), 1.0);
        assert_eq!(keys_cubic(1.0), 0.0);
        assert_eq!(keys_cubic(2.0), 0.0);
    }

    #[test]
    fn rejects_nonpositive_and_empty() {
        assert!(Scale::new(0, 1).is_err());
        let x = Tensor::<f64>::zeros(&[1, 1]).unwrap();
        assert!(resize(&x, Scale::down(2), ResizeMode::Bilinear).is_err());
    }
}
