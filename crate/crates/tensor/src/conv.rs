//! 2D convolution (grouped, strided, dilated) via im2col, and the `1×k×k`
//! 3D convolution built on top of it.

use crate::counter;
use crate::error::{shape_err, spec_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvSpec {
    /// Stride 1, dilation 1, one group, "same" zero padding.
    pub fn same(kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            kernel_h,
            kernel_w,
            stride: 1,
            dilation: 1,
            groups: 1,
            pad_h: kernel_h.saturating_sub(1) / 2,
            pad_w: kernel_w.saturating_sub(1) / 2,
        }
    }

    pub fn pointwise() -> Self {
        Self::same(1, 1)
    }

    /// Sets the dilation and recomputes "same" padding.
    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self.pad_h = dilation * self.kernel_h.saturating_sub(1) / 2;
        self.pad_w = dilation * self.kernel_w.saturating_sub(1) / 2;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding(mut self, pad_h: usize, pad_w: usize) -> Self {
        self.pad_h = pad_h;
        self.pad_w = pad_w;
        self
    }

    pub fn taps(&self) -> usize {
        self.kernel_h * self.kernel_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return spec_err(format!(
                "kernel extent {}x{} has a zero side",
                self.kernel_h, self.kernel_w
            ));
        }
        if self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return spec_err("stride, dilation and groups must be positive");
        }
        Ok(())
    }

    /// Output extent along one axis, or `None` when the dilated kernel does
    /// not fit in the padded input.
    pub fn out_extent(&self, input: usize, kernel: usize, pad: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * pad;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        match (
            self.out_extent(h, self.kernel_h, self.pad_h),
            self.out_extent(w, self.kernel_w, self.pad_w),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => spec_err(format!(
                "dilated kernel {}x{} (dilation {}) exceeds padded input {}x{}",
                self.kernel_h,
                self.kernel_w,
                self.dilation,
                h + 2 * self.pad_h,
                w + 2 * self.pad_w
            )),
        }
    }
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn k(&self, spec: &ConvSpec) -> usize {
        self.cin_g * spec.taps()
    }
}

fn geometry<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Geometry> {
    spec.validate()?;
    x.expect_rank(4, "conv2d input")?;
    w.expect_rank(4, "conv2d weight")?;
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if kh != spec.kernel_h || kw != spec.kernel_w {
        return shape_err(format!(
            "conv2d weight kernel {kh}x{kw} does not match spec {}x{}",
            spec.kernel_h, spec.kernel_w
        ));
    }
    if cin % spec.groups != 0 || cout % spec.groups != 0 {
        return shape_err(format!(
            "conv2d groups {} must divide in_channels {cin} and out_channels {cout}",
            spec.groups
        ));
    }
    if cin_g != cin / spec.groups {
        return shape_err(format!(
            "conv2d weight expects {cin_g} input channels per group, input has {cin} channels in {} groups",
            spec.groups
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return shape_err(format!(
                "conv2d bias shape {:?} does not match {cout} output channels",
                b.shape()
            ));
        }
    }
    let (oh, ow) = spec.output_hw(h, wd)?;
    Ok(Geometry {
        n,
        cin,
        h,
        w: wd,
        cout,
        cin_g,
        cout_g: cout / spec.groups,
        oh,
        ow,
    })
}

/// Unfolds the receptive fields of one group of one image into `col`
/// laid out as `[cin_g·kh·kw, oh·ow]`.
fn im2col<T: Real>(src: &[T], g: &Geometry, spec: &ConvSpec, col: &mut [T]) {
    let p = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.cin_g {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - spec.pad_h as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix =
                            (ox * spec.stride + kj * spec.dilation) as isize - spec.pad_w as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-adds `col` back into an image plane set (adjoint of [`im2col`]).
fn col2im<T: Real>(col: &[T], g: &Geometry, spec: &ConvSpec, dst: &mut [T]) {
    let p = g.oh * g.ow;
    let mut row = 0;
    for c in 0..g.cin_g {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..spec.kernel_h {
            for kj in 0..spec.kernel_w {
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - spec.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.ow {
                        let ix =
                            (ox * spec.stride + kj * spec.dilation) as isize - spec.pad_w as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            plane[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `x: [N, Cin, H, W]`, `w: [Cout, Cin/groups, kh, kw]`, `b: [Cout]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = geometry(x, w, b, spec)?;
    let p = g.oh * g.ow;
    let k = g.k(spec);
    let mut out = vec![T::ZERO; g.n * g.cout * p];
    let mut col = vec![T::ZERO; k * p];
    let wd = w.data();
    for n in 0..g.n {
        for grp in 0..spec.groups {
            let src_off = (n * g.cin + grp * g.cin_g) * g.h * g.w;
            im2col(&x.data()[src_off..], &g, spec, &mut col);
            for co in grp * g.cout_g..(grp + 1) * g.cout_g {
                let dst = &mut out[(n * g.cout + co) * p..(n * g.cout + co + 1) * p];
                let bias = b.map_or(T::ZERO, |b| b.data()[co]);
                dst.iter_mut().for_each(|v| *v = bias);
                let wrow = &wd[co * k..(co + 1) * k];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let crow = &col[kk * p..(kk + 1) * p];
                    for (d, &c) in dst.iter_mut().zip(crow) {
                        *d += wv * c;
                    }
                }
            }
        }
    }
    counter::add_macs(g.n * g.cout * p * k);
    Ok(Tensor::from_parts(vec![g.n, g.cout, g.oh, g.ow], out))
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d`] with respect to input, weight and bias given the
/// output gradient `gout: [N, Cout, oh, ow]`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    gout: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(x, w, None, spec)?;
    if gout.shape() != [g.n, g.cout, g.oh, g.ow] {
        return shape_err(format!(
            "conv2d backward: output gradient {:?} does not match {:?}",
            gout.shape(),
            [g.n, g.cout, g.oh, g.ow]
        ));
    }
    let p = g.oh * g.ow;
    let k = g.k(spec);
    let wd = w.data();
    let gd = gout.data();
    let mut gx = vec![T::ZERO; x.len()];
    let mut gw = vec![T::ZERO; w.len()];
    let mut gb = vec![T::ZERO; g.cout];
    let mut col = vec![T::ZERO; k * p];
    let mut gcol = vec![T::ZERO; k * p];
    for n in 0..g.n {
        for grp in 0..spec.groups {
            let src_off = (n * g.cin + grp * g.cin_g) * g.h * g.w;
            im2col(&x.data()[src_off..], &g, spec, &mut col);
            gcol.iter_mut().for_each(|v| *v = T::ZERO);
            for co in grp * g.cout_g..(grp + 1) * g.cout_g {
                let go = &gd[(n * g.cout + co) * p..(n * g.cout + co + 1) * p];
                gb[co] += go.iter().copied().sum::<T>();
                let wrow = &wd[co * k..(co + 1) * k];
                let gwrow = &mut gw[co * k..(co + 1) * k];
                for kk in 0..k {
                    let crow = &col[kk * p..(kk + 1) * p];
                    let mut acc = T::ZERO;
                    for (&a, &c) in go.iter().zip(crow) {
                        acc += a * c;
                    }
                    gwrow[kk] += acc;
                    let wv = wrow[kk];
                    let gc = &mut gcol[kk * p..(kk + 1) * p];
                    for (d, &a) in gc.iter_mut().zip(go) {
                        *d += wv * a;
                    }
                }
            }
            col2im(&gcol, &g, spec, &mut gx[src_off..]);
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(x.shape().to_vec(), gx),
        weight: Tensor::from_parts(w.shape().to_vec(), gw),
        bias: Tensor::from_parts(vec![g.cout], gb),
    })
}

const TO_SLICES: [usize; 5] = [0, 2, 1, 3, 4];

fn conv3d_parts<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, Tensor<T>)> {
    x.expect_rank(5, "conv3d input")?;
    w.expect_rank(5, "conv3d weight")?;
    if w.shape()[2] != 1 {
        return spec_err(format!(
            "conv3d depth kernel extent must be 1, got {}",
            w.shape()[2]
        ));
    }
    if spec.stride != 1 {
        return spec_err("conv3d_1xkxk supports stride 1 only");
    }
    let (n, c, d, h, wd) = (
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
        x.shape()[4],
    );
    let slices = x.permute(&TO_SLICES)?.reshape(&[n * d, c, h, wd])?;
    let ws = w.shape();
    let w2 = w.reshape(&[ws[0], ws[1], ws[3], ws[4]])?;
    Ok((slices, w2))
}

/// `1×k×k` 3D convolution on `x: [N, C, D, H, W]` with `w: [Cout, Cin/groups, 1, kh, kw]`:
/// the same 2D kernel applied to every depth slice.
pub fn conv3d_1xkxk<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (slices, w2) = conv3d_parts(x, w, spec)?;
    let y = conv2d(&slices, &w2, b, spec)?;
    let (n, d) = (x.shape()[0], x.shape()[2]);
    let (co, oh, ow) = (y.shape()[1], y.shape()[2], y.shape()[3]);
    y.reshape(&[n, d, co, oh, ow])?.permute(&TO_SLICES)
}

pub fn conv3d_1xkxk_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    gout: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (slices, w2) = conv3d_parts(x, w, spec)?;
    gout.expect_rank(5, "conv3d output gradient")?;
    let gs = gout.shape();
    let g2 = gout
        .permute(&TO_SLICES)?
        .reshape(&[gs[0] * gs[2], gs[1], gs[3], gs[4]])?;
    let grads = conv2d_backward(&slices, &w2, spec, &g2)?;
    let xs = x.shape();
    Ok(ConvGrads {
        input: grads
            .input
            .reshape(&[xs[0], xs[2], xs[1], xs[3], xs[4]])?
            .permute(&TO_SLICES)?,
        weight: grads.weight.reshape(w.shape())?,
        bias: grads.bias,
    })
}

/// Number of learnable scalars of a convolution layer.
pub fn conv_param_count(
    in_channels: usize,
    out_channels: usize,
    spec: &ConvSpec,
    bias: bool,
) -> usize {
    out_channels * (in_channels / spec.groups) * spec.taps() + if bias { out_channels } else { 0 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pointwise() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 5], |i| (i as f64).sin()).unwrap();
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        let y = conv2d(&x, &w, Some(&b), &ConvSpec::pointwise()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_window_sums() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f64).unwrap();
        let w = Tensor::ones(&[1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, &ConvSpec::same(3, 3).with_groups(1)).unwrap();
        assert_eq!(y.at(&[0, 0, 1, 1]), 45.0);
        assert_eq!(y.at(&[0, 0, 0, 0]), 12.0);
    }

    #[test]
    fn dilated_impulse_response_on_multiples_of_three() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 13, 13]).unwrap();
        x.set(&[0, 0, 6, 6], 1.0);
        let w = Tensor::from_fn(&[1, 1, 3, 3], |i| 1.0 + i as f64).unwrap();
        let y = conv2d(&x, &w, None, &ConvSpec::same(3, 3).with_dilation(3)).unwrap();
        for r in 0..13 {
            for c in 0..13 {
                let v = y.at(&[0, 0, r, c]);
                let on_tap = (r as isize - 6) % 3 == 0
                    && (c as isize - 6) % 3 == 0
                    && (r as isize - 6).abs() <= 3
                    && (c as isize - 6).abs() <= 3;
                assert_eq!(v != 0.0, on_tap, "({r},{c}) = {v}");
            }
        }
    }

    #[test]
    fn errors() {
        let x = Tensor::<f64>::zeros(&[1, 4, 5, 5]).unwrap();
        let w = Tensor::zeros(&[4, 3, 3, 3]).unwrap();
        assert!(matches!(
            conv2d(&x, &w, None, &ConvSpec::same(3, 3)),
            Err(crate::TensorError::Shape(_))
        ));
        let bad = ConvSpec::same(0, 3);
        let w0 = Tensor::zeros(&[4, 4, 1, 3]).unwrap();
        assert!(matches!(
            conv2d(&x, &w0, None, &bad),
            Err(crate::TensorError::InvalidSpec(_))
        ));
        let grouped = ConvSpec::same(3, 3).with_groups(3);
        let wg = Tensor::zeros(&[3, 1, 3, 3]).unwrap();
        assert!(conv2d(&x, &wg, None, &grouped).is_err());
    }

    #[test]
    fn conv3d_parameter_count() {
        assert_eq!(conv_param_count(1, 64, &ConvSpec::same(3, 3), true), 640);
        assert_eq!(
            conv_param_count(64, 64, &ConvSpec::same(3, 3), true),
            36_928
        );
    }
}
