//! Window pooling over the trailing two axes.

use crate::counter;
use crate::error::{shape_err, spec_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Per-output window bounds along one axis: `[start, end)`.
type Windows = Vec<(usize, usize)>;

/// Pooling result plus what the backward pass needs.
pub struct Pooled<T> {
    pub output: Tensor<T>,
    rows: Windows,
    cols: Windows,
    /// Flat input index of the selected element per output (max pooling).
    argmax: Vec<usize>,
    kind: PoolKind,
    input_shape: Vec<usize>,
}

fn fixed_windows(extent: usize, kernel: usize, stride: usize) -> Windows {
    let n = (extent - kernel) / stride + 1;
    (0..n)
        .map(|i| (i * stride, (i * stride + kernel).min(extent)))
        .collect()
}

fn adaptive_windows(extent: usize, out: usize) -> Windows {
    (0..out)
        .map(|i| (i * extent / out, ((i + 1) * extent).div_ceil(out)))
        .collect()
}

fn run<T: Real>(x: &Tensor<T>, kind: PoolKind, rows: Windows, cols: Windows) -> Result<Pooled<T>> {
    let (outer, h, w) = x.trailing_2d()?;
    let (oh, ow) = (rows.len(), cols.len());
    let mut out = Vec::with_capacity(outer * oh * ow);
    let mut argmax = Vec::new();
    let data = x.data();
    for o in 0..outer {
        let plane = o * h * w;
        for &(r0, r1) in &rows {
            for &(c0, c1) in &cols {
                match kind {
                    PoolKind::Max => {
                        let mut best = plane + r0 * w + c0;
                        for r in r0..r1 {
                            for c in c0..c1 {
                                let i = plane + r * w + c;
                                if data[i] > data[best] {
                                    best = i;
                                }
                            }
                        }
                        argmax.push(best);
                        out.push(data[best]);
                    }
                    PoolKind::Avg => {
                        let mut acc = T::ZERO;
                        for r in r0..r1 {
                            for c in c0..c1 {
                                acc += data[plane + r * w + c];
                            }
                        }
                        let count = (r1 - r0) * (c1 - c0);
                        out.push(acc / T::from_f64(count as f64));
                    }
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    counter::add_elementwise(out.len());
    Ok(Pooled {
        output: Tensor::from_parts(shape, out),
        rows,
        cols,
        argmax,
        kind,
        input_shape: x.shape().to_vec(),
    })
}

/// Window pooling with floor output sizing and no padding.
pub fn pool2d<T: Real>(
    x: &Tensor<T>,
    kind: PoolKind,
    kernel: usize,
    stride: usize,
) -> Result<Pooled<T>> {
    if kernel == 0 || stride == 0 {
        return spec_err("pool kernel and stride must be positive");
    }
    let (_, h, w) = x.trailing_2d()?;
    if kernel > h || kernel > w {
        return spec_err(format!("pool kernel {kernel} larger than input {h}x{w}"));
    }
    run(
        x,
        kind,
        fixed_windows(h, kernel, stride),
        fixed_windows(w, kernel, stride),
    )
}

/// Adaptive pooling to a fixed `out_h × out_w` grid.
pub fn adaptive_pool2d<T: Real>(
    x: &Tensor<T>,
    kind: PoolKind,
    out_h: usize,
    out_w: usize,
) -> Result<Pooled<T>> {
    if out_h == 0 || out_w == 0 {
        return spec_err("adaptive pool output extents must be positive");
    }
    let (_, h, w) = x.trailing_2d()?;
    if out_h > h || out_w > w {
        return spec_err(format!(
            "adaptive pool output {out_h}x{out_w} larger than input {h}x{w}"
        ));
    }
    run(
        x,
        kind,
        adaptive_windows(h, out_h),
        adaptive_windows(w, out_w),
    )
}

impl<T: Real> Pooled<T> {
    /// Flat input index chosen for every output (empty for average pooling).
    pub fn selected(&self) -> &[usize] {
        &self.argmax
    }

    /// Gradient with respect to the pooled input. Max pooling routes the
    /// gradient to the first maximal element of each window.
    pub fn backward(&self, gout: &Tensor<T>) -> Result<Tensor<T>> {
        if gout.shape() != self.output.shape() {
            return shape_err(format!(
                "pool backward: gradient {:?} does not match output {:?}",
                gout.shape(),
                self.output.shape()
            ));
        }
        let mut gx = vec![T::ZERO; self.input_shape.iter().product()];
        let r = self.input_shape.len();
        let (h, w) = (self.input_shape[r - 2], self.input_shape[r - 1]);
        let g = gout.data();
        match self.kind {
            PoolKind::Max => {
                for (&i, &gv) in self.argmax.iter().zip(g) {
                    gx[i] += gv;
                }
            }
            PoolKind::Avg => {
                let per_plane = self.rows.len() * self.cols.len();
                for (idx, &gv) in g.iter().enumerate() {
                    let plane = (idx / per_plane) * h * w;
                    let local = idx % per_plane;
                    let (r0, r1) = self.rows[local / self.cols.len()];
                    let (c0, c1) = self.cols[local % self.cols.len()];
                    let share = gv / T::from_f64(((r1 - r0) * (c1 - c0)) as f64);
                    for rr in r0..r1 {
                        for cc in c0..c1 {
                            gx[plane + rr * w + cc] += share;
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_parts(self.input_shape.clone(), gx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Tensor<f64> {
        Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn single_window() {
        assert_eq!(
            pool2d(&grid(), PoolKind::Max, 2, 2).unwrap().output.data(),
            &[4.0]
        );
        assert_eq!(
            pool2d(&grid(), PoolKind::Avg, 2, 2).unwrap().output.data(),
            &[2.5]
        );
    }

    #[test]
    fn adaptive_global() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f64).unwrap();
        assert_eq!(
            adaptive_pool2d(&x, PoolKind::Max, 1, 1)
                .unwrap()
                .output
                .data(),
            &[9.0]
        );
        let c = Tensor::<f64>::full(&[1, 2, 4, 5], 0.7).unwrap();
        let avg = adaptive_pool2d(&c, PoolKind::Avg, 1, 1).unwrap().output;
        assert!(avg.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn oversized_windows_rejected() {
        assert!(pool2d(&grid(), PoolKind::Max, 3, 1).is_err());
        assert!(adaptive_pool2d(&grid(), PoolKind::Avg, 3, 1).is_err());
        assert!(pool2d(&grid(), PoolKind::Max, 0, 1).is_err());
    }
}
