//! Light-field container and the geometric operations on it: luma
//! conversion, EPI slicing, bicubic degradation, patching and the joint
//! spatial-angular flip/rotation augmentation.

use lgfn_tensor::{resize, Real, ResizeMode, Scale, Tensor};

use crate::error::{LgfnError, Result};

/// A 4D array of sub-aperture images, stored as `[U, V, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LightField<T = f32> {
    data: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LfDims {
    pub u: usize,
    pub v: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl LfDims {
    pub fn views(&self) -> usize {
        self.u * self.v
    }

    pub fn shape(&self) -> [usize; 5] {
        [self.u, self.v, self.c, self.h, self.w]
    }
}

impl<T: Real> LightField<T> {
    /// Wraps a `[U, V, C, H, W]` tensor without touching its values.
    pub fn new(data: Tensor<T>) -> Result<Self> {
        if data.rank() != 5 {
            return Err(LgfnError::InvalidInput(format!(
                "light field must be [U, V, C, H, W], got {:?}",
                data.shape()
            )));
        }
        Ok(Self { data })
    }

    /// Wraps a tensor and clamps every value into `[0, 1]`.
    pub fn ingest(data: Tensor<T>) -> Result<Self> {
        let clamped = data.map(|v| v.max(T::ZERO).min(T::ONE));
        Self::new(clamped)
    }

    pub fn from_fn(
        dims: LfDims,
        mut f: impl FnMut(usize, usize, usize, usize, usize) -> T,
    ) -> Result<Self> {
        let LfDims { u: _, v, c, h, w } = dims;
        let t = Tensor::from_fn(&dims.shape(), |i| {
            let x = i % w;
            let y = (i / w) % h;
            let ch = (i / (w * h)) % c;
            let vv = (i / (w * h * c)) % v;
            let uu = i / (w * h * c * v);
            f(uu, vv, ch, y, x)
        })?;
        Self::new(t)
    }

    pub fn dims(&self) -> LfDims {
        let s = self.data.shape();
        LfDims {
            u: s[0],
            v: s[1],
            c: s[2],
            h: s[3],
            w: s[4],
        }
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn at(&self, u: usize, v: usize, c: usize, h: usize, w: usize) -> T {
        self.data.at(&[u, v, c, h, w])
    }

    /// The `[C, H, W]` image of view `(u, v)`.
    pub fn view(&self, u: usize, v: usize) -> Result<Tensor<T>> {
        let d = self.dims();
        if u >= d.u || v >= d.v {
            return Err(LgfnError::Bounds(format!(
                "view ({u}, {v}) outside {}x{} angular grid",
                d.u, d.v
            )));
        }
        let n = d.c * d.h * d.w;
        let start = (u * d.v + v) * n;
        Ok(Tensor::new(
            &[d.c, d.h, d.w],
            self.data.data()[start..start + n].to_vec(),
        )?)
    }

    /// Applies `f` to every `[C, H, W]` view and reassembles the field.
    pub fn map_views(&self, mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Self> {
        let d = self.dims();
        let mut data = Vec::new();
        let mut view_shape = None;
        for u in 0..d.u {
            for v in 0..d.v {
                let out = f(&self.view(u, v)?)?;
                if out.rank() != 3 || view_shape.is_some_and(|s: [usize; 3]| s != out.shape()) {
                    return Err(LgfnError::InvalidInput(format!(
                        "view transform produced inconsistent shape {:?}",
                        out.shape()
                    )));
                }
                view_shape = Some([out.shape()[0], out.shape()[1], out.shape()[2]]);
                data.extend_from_slice(out.data());
            }
        }
        let [c, h, w] = view_shape.expect("light field has at least one view");
        Self::new(Tensor::new(&[d.u, d.v, c, h, w], data)?)
    }

    pub fn cast<U: Real>(&self) -> LightField<U> {
        LightField {
            data: self.data.cast(),
        }
    }
}

/// BT.601 limited-range luma: `Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255`.
pub fn rgb_to_y<T: Real>(lf: &LightField<T>) -> Result<LightField<T>> {
    let d = lf.dims();
    if d.c != 3 {
        return Err(LgfnError::InvalidInput(format!(
            "rgb_to_y needs 3 channels, got {}",
            d.c
        )));
    }
    lf.map_views(|view| {
        let plane = d.h * d.w;
        let px = view.data();
        let y = (0..plane)
            .map(|i| {
                let (r, g, b) = (
                    px[i].to_f64(),
                    px[plane + i].to_f64(),
                    px[2 * plane + i].to_f64(),
                );
                let y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0;
                T::from_f64(y.clamp(0.0, 1.0))
            })
            .collect();
        Ok(Tensor::new(&[1, d.h, d.w], y)?)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EpiOrientation {
    /// Fixed `(u, h)`; pixels indexed `[v, w]`.
    Horizontal,
    /// Fixed `(v, w)`; pixels indexed `[u, h]`.
    Vertical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpiImage<T = f32> {
    pub orientation: EpiOrientation,
    /// `(u, h)` for horizontal, `(v, w)` for vertical.
    pub fixed: (usize, usize),
    pub pixels: Tensor<T>,
}

/// Slices an epipolar-plane image out of channel 0 (luma) of the field.
pub fn extract_epi<T: Real>(
    lf: &LightField<T>,
    orientation: EpiOrientation,
    fixed: (usize, usize),
) -> Result<EpiImage<T>> {
    let d = lf.dims();
    let (a, b) = fixed;
    let pixels = match orientation {
        EpiOrientation::Horizontal => {
            if a >= d.u || b >= d.h {
                return Err(LgfnError::Bounds(format!(
                    "horizontal EPI (u={a}, h={b}) outside U={} H={}",
                    d.u, d.h
                )));
            }
            Tensor::from_fn(&[d.v, d.w], |i| lf.at(a, i / d.w, 0, b, i % d.w))?
        }
        EpiOrientation::Vertical => {
            if a >= d.v || b >= d.w {
                return Err(LgfnError::Bounds(format!(
                    "vertical EPI (v={a}, w={b}) outside V={} W={}",
                    d.v, d.w
                )));
            }
            Tensor::from_fn(&[d.u, d.h], |i| lf.at(i / d.h, a, 0, i % d.h, b))?
        }
    };
    Ok(EpiImage {
        orientation,
        fixed,
        pixels,
    })
}

/// Per-view bicubic downscale by the integer factor `s`.
pub fn degrade_bicubic<T: Real>(hr: &LightField<T>, s: usize) -> Result<LightField<T>> {
    let d = hr.dims();
    if s == 0 || d.h % s != 0 || d.w % s != 0 {
        return Err(LgfnError::InvalidInput(format!(
            "spatial extent {}x{} not divisible by scale {s}",
            d.h, d.w
        )));
    }
    hr.map_views(|view| Ok(resize(view, Scale::down(s), ResizeMode::Bicubic)?))
}

/// Aligned low/high resolution light fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair<T = f32> {
    pub lr: LightField<T>,
    pub hr: LightField<T>,
    pub scale: usize,
}

impl<T: Real> SamplePair<T> {
    pub fn new(lr: LightField<T>, hr: LightField<T>, scale: usize) -> Result<Self> {
        let (l, h) = (lr.dims(), hr.dims());
        if scale == 0
            || (l.u, l.v, l.c) != (h.u, h.v, h.c)
            || h.h != scale * l.h
            || h.w != scale * l.w
        {
            return Err(LgfnError::InvalidInput(format!(
                "sample pair mismatch: lr {:?} hr {:?} scale {scale}",
                l.shape(),
                h.shape()
            )));
        }
        Ok(Self { lr, hr, scale })
    }

    /// Builds a pair by bicubic degradation of `hr`.
    pub fn from_hr(hr: LightField<T>, scale: usize) -> Result<Self> {
        let lr = degrade_bicubic(&hr, scale)?;
        Self::new(lr, hr, scale)
    }
}

fn crop<T: Real>(lf: &LightField<T>, y: usize, x: usize, size: usize) -> Result<LightField<T>> {
    let t = lf.tensor().narrow(3, y, size)?.narrow(4, x, size)?;
    LightField::new(t)
}

/// Number of patches [`extract_patches`] emits along one spatial axis.
pub fn patch_grid(extent: usize, patch: usize, stride: usize) -> usize {
    if patch > extent || stride == 0 {
        0
    } else {
        (extent - patch) / stride + 1
    }
}

/// Cuts aligned `lr_patch × lr_patch` / `s·lr_patch × s·lr_patch` crops on a
/// regular grid, keeping the full angular extent.
pub fn extract_patches<T: Real>(
    pair: &SamplePair<T>,
    lr_patch: usize,
    stride: usize,
) -> Result<Vec<SamplePair<T>>> {
    let d = pair.lr.dims();
    if stride == 0 || lr_patch == 0 || lr_patch > d.h || lr_patch > d.w {
        return Err(LgfnError::InvalidInput(format!(
            "patch {lr_patch} (stride {stride}) does not fit lr field {}x{}",
            d.h, d.w
        )));
    }
    let s = pair.scale;
    let mut out = Vec::new();
    for gy in 0..patch_grid(d.h, lr_patch, stride) {
        for gx in 0..patch_grid(d.w, lr_patch, stride) {
            let (y, x) = (gy * stride, gx * stride);
            out.push(SamplePair::new(
                crop(&pair.lr, y, x, lr_patch)?,
                crop(&pair.hr, s * y, s * x, s * lr_patch)?,
                s,
            )?);
        }
    }
    Ok(out)
}

/// One of the eight joint flip/rotation augmentations.
///
/// Bit 0 flips horizontally (W together with V), bit 1 flips vertically
/// (H together with U), bit 2 then rotates by 90° in both the spatial and
/// the angular plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugmentCode(u8);

impl AugmentCode {
    pub const IDENTITY: Self = Self(0);

    pub fn new(code: u8) -> Result<Self> {
        if code > 7 {
            return Err(LgfnError::InvalidInput(format!(
                "augmentation code {code} outside 0..7"
            )));
        }
        Ok(Self(code))
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..8).map(Self)
    }

    pub fn code(&self) -> u8 {
        self.0
    }

    pub fn flips_horizontal(&self) -> bool {
        self.0 & 1 != 0
    }

    pub fn flips_vertical(&self) -> bool {
        self.0 & 2 != 0
    }

    pub fn rotates(&self) -> bool {
        self.0 & 4 != 0
    }

    /// The code whose action undoes this one.
    pub fn inverse(&self) -> Self {
        if !self.rotates() {
            return *self;
        }
        // R∘F = F'∘R with horizontal and vertical flips exchanged; the inverse of
        // R∘F is F∘R⁻¹ = F∘R∘(hv) = R∘F'∘(hv).
        let h = self.flips_horizontal();
        let v = self.flips_vertical();
        let (h2, v2) = (!v, !h);
        Self(4 | (h2 as u8) | ((v2 as u8) << 1))
    }
}

/// Source position in the original field for output position `(u, v, y, x)`
/// of a plane transform over a `rows × cols` grid.
fn rotate_src(i: usize, j: usize, cols: usize) -> (usize, usize) {
    // out[i][j] = in[j][cols - 1 - i]  (counter-clockwise)
    (j, cols - 1 - i)
}

/// Applies a joint spatial/angular augmentation to a single field.
pub fn augment_field<T: Real>(lf: &LightField<T>, code: AugmentCode) -> Result<LightField<T>> {
    let d = lf.dims();
    if code.rotates() && (d.h != d.w || d.u != d.v) {
        return Err(LgfnError::InvalidInput(format!(
            "rotation needs square extents, got angular {}x{} spatial {}x{}",
            d.u, d.v, d.h, d.w
        )));
    }
    let fh = code.flips_horizontal();
    let fv = code.flips_vertical();
    LightField::from_fn(d, |u, v, c, y, x| {
        let (u, v, y, x) = if code.rotates() {
            let (su, sv) = rotate_src(u, v, d.v);
            let (sy, sx) = rotate_src(y, x, d.w);
            (su, sv, sy, sx)
        } else {
            (u, v, y, x)
        };
        let (u, y) = if fv {
            (d.u - 1 - u, d.h - 1 - y)
        } else {
            (u, y)
        };
        let (v, x) = if fh {
            (d.v - 1 - v, d.w - 1 - x)
        } else {
            (v, x)
        };
        lf.at(u, v, c, y, x)
    })
}

/// Applies the same augmentation to both halves of a pair.
pub fn augment<T: Real>(pair: &SamplePair<T>, code: AugmentCode) -> Result<SamplePair<T>> {
    if code == AugmentCode::IDENTITY {
        return Ok(pair.clone());
    }
    SamplePair::new(
        augment_field(&pair.lr, code)?,
        augment_field(&pair.hr, code)?,
        pair.scale,
    )
}

/// `[U, V, 1, H, W] → [1, U·V, H, W]`; view `(u, v)` lands in slice `u·V + v`.
pub fn to_feature_layout<T: Real>(lf: &LightField<T>) -> Result<Tensor<T>> {
    let d = lf.dims();
    if d.c != 1 {
        return Err(LgfnError::InvalidInput(format!(
            "feature layout needs a single channel, got {}",
            d.c
        )));
    }
    Ok(lf.tensor().reshape(&[1, d.u * d.v, d.h, d.w])?)
}

pub fn from_feature_layout<T: Real>(t: &Tensor<T>, u: usize, v: usize) -> Result<LightField<T>> {
    let s = t.shape();
    if s.len() != 4 || s[0] != 1 || s[1] != u * v {
        return Err(LgfnError::InvalidInput(format!(
            "feature tensor {s:?} does not hold {u}x{v} views"
        )));
    }
    LightField::new(t.reshape(&[u, v, 1, s[2], s[3]])?)
}
