//! Brute-force reference implementations used by the test suites.
//!
//! Written for obviousness, not speed: every output element is computed
//! directly from its definition, sharing no code with the kernels.

use crate::conv::ConvSpec;
use crate::pool::PoolKind;
use crate::resize::ResizeMode;
use crate::tensor::{ComplexTensor, Tensor};

pub fn conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    s: &ConvSpec,
) -> Tensor<f64> {
    let [n, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, cin_g, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * s.pad_h - s.dilation * (kh - 1) - 1) / s.stride + 1;
    let ow = (wd + 2 * s.pad_w - s.dilation * (kw - 1) - 1) / s.stride + 1;
    let cout_g = cout / s.groups;
    let _ = cin;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]).unwrap();
    for b_ in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin_g {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s.stride + ky * s.dilation) as i64 - s.pad_h as i64;
                                let ix = (ox * s.stride + kx * s.dilation) as i64 - s.pad_w as i64;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.at(&[co, ci, ky, kx])
                                        * x.at(&[b_, g * cin_g + ci, iy as usize, ix as usize]);
                                }
                            }
                        }
                    }
                    out.set(&[b_, co, oy, ox], acc);
                }
            }
        }
    }
    out
}

/// `1×k×k` 3D convolution as independent 2D convolutions per depth slice.
pub fn conv3d_1xkxk(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    s: &ConvSpec,
) -> Tensor<f64> {
    let [n, c, d, h, wd] = [
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        x.shape()[3],
        x.shape()[4],
    ];
    let ws = w.shape();
    let w2 = w.reshape(&[ws[0], ws[1], ws[3], ws[4]]).unwrap();
    let mut slices = Vec::new();
    for z in 0..d {
        let slice = Tensor::from_fn(&[n, c, h, wd], |i| {
            let (bn, rest) = (i / (c * h * wd), i % (c * h * wd));
            let (ch, p) = (rest / (h * wd), rest % (h * wd));
            x.at(&[bn, ch, z, p / wd, p % wd])
        })
        .unwrap();
        slices.push(conv2d(&slice, &w2, b, s));
    }
    let (co, oh, ow) = (
        slices[0].shape()[1],
        slices[0].shape()[2],
        slices[0].shape()[3],
    );
    Tensor::from_fn(&[n, co, d, oh, ow], |i| {
        let p = i % (oh * ow);
        let z = (i / (oh * ow)) % d;
        let ch = (i / (oh * ow * d)) % co;
        let bn = i / (oh * ow * d * co);
        slices[z].at(&[bn, ch, p / ow, p % ow])
    })
    .unwrap()
}

pub fn pool2d(x: &Tensor<f64>, kind: PoolKind, kernel: usize, stride: usize) -> Tensor<f64> {
    let (outer, h, w) = x.trailing_2d().unwrap();
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = Vec::new();
    for o in 0..outer {
        for r in 0..oh {
            for c in 0..ow {
                let mut vals = Vec::new();
                for i in 0..kernel {
                    for j in 0..kernel {
                        vals.push(x.data()[o * h * w + (r * stride + i) * w + c * stride + j]);
                    }
                }
                out.push(reduce(&vals, kind));
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let k = shape.len();
    shape[k - 2] = oh;
    shape[k - 1] = ow;
    Tensor::new(&shape, out).unwrap()
}

/// Global reduction of each trailing `H×W` plane.
pub fn global_pool(x: &Tensor<f64>, kind: PoolKind) -> Vec<f64> {
    let (_, h, w) = x.trailing_2d().unwrap();
    x.data().chunks(h * w).map(|p| reduce(p, kind)).collect()
}

fn reduce(vals: &[f64], kind: PoolKind) -> f64 {
    match kind {
        PoolKind::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        PoolKind::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
    }
}

pub fn pixel_shuffle(x: &Tensor<f64>, r: usize) -> Tensor<f64> {
    let [n, cr, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let c = cr / (r * r);
    let mut out = Tensor::zeros(&[n, c, h * r, w * r]).unwrap();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h * r {
                for xx in 0..w * r {
                    let src_c = ch * r * r + (y % r) * r + (xx % r);
                    out.set(&[b, ch, y, xx], x.at(&[b, src_c, y / r, xx / r]));
                }
            }
        }
    }
    out
}

fn tent(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Direct 2D kernel summation with half-pixel centres and edge replication.
pub fn resize(x: &Tensor<f64>, out_h: usize, out_w: usize, mode: ResizeMode) -> Tensor<f64> {
    let (outer, h, w) = x.trailing_2d().unwrap();
    let axis_weights = |o: usize, inn: usize, outn: usize| -> Vec<(usize, f64)> {
        let mut src = (o as f64 + 0.5) * inn as f64 / outn as f64 - 0.5;
        let (lo, hi): (i64, i64) = match mode {
            ResizeMode::Bilinear => {
                src = src.max(0.0);
                (src.floor() as i64, src.floor() as i64 + 1)
            }
            ResizeMode::Bicubic => (src.floor() as i64 - 1, src.floor() as i64 + 2),
        };
        (lo..=hi)
            .map(|i| {
                let wgt = match mode {
                    ResizeMode::Bilinear => tent(src - i as f64),
                    ResizeMode::Bicubic => cubic(src - i as f64),
                };
                (i.clamp(0, inn as i64 - 1) as usize, wgt)
            })
            .collect()
    };
    let mut out = Vec::new();
    for o in 0..outer {
        for r in 0..out_h {
            let wr = axis_weights(r, h, out_h);
            for c in 0..out_w {
                let wc = axis_weights(c, w, out_w);
                let mut acc = 0.0;
                for &(i, a) in &wr {
                    for &(j, b) in &wc {
                        acc += a * b * x.data()[o * h * w + i * w + j];
                    }
                }
                out.push(acc);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let k = shape.len();
    shape[k - 2] = out_h;
    shape[k - 1] = out_w;
    Tensor::new(&shape, out).unwrap()
}

/// Quadratic-sum 2D DFT: every bin summed over every sample.
pub fn dft2d(x: &Tensor<f64>) -> ComplexTensor<f64> {
    let (outer, h, w) = x.trailing_2d().unwrap();
    let mut re = Vec::new();
    let mut im = Vec::new();
    for o in 0..outer {
        for k in 0..h {
            for l in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for m in 0..h {
                    for n in 0..w {
                        let theta = -2.0
                            * std::f64::consts::PI
                            * ((k * m) as f64 / h as f64 + (l * n) as f64 / w as f64);
                        let v = x.data()[o * h * w + m * w + n];
                        sr += v * theta.cos();
                        si += v * theta.sin();
                    }
                }
                re.push(sr);
                im.push(si);
            }
        }
    }
    ComplexTensor::new(
        Tensor::new(x.shape(), re).unwrap(),
        Tensor::new(x.shape(), im).unwrap(),
    )
    .unwrap()
}
