//! Unnormalized 2D discrete Fourier transform over the trailing two axes.
//!
//! Separable: every row, then every column, goes through a 1D transform.
//! Power-of-two lengths use an iterative radix-2 FFT, other lengths a direct
//! DFT against a precomputed twiddle table.

use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::{ComplexTensor, Tensor};

/// 1D transform of a fixed length and direction.
struct LinePlan<T> {
    n: usize,
    /// `e^{sign·2πik/n}` for `k < n`.
    cos: Vec<T>,
    sin: Vec<T>,
    /// Bit-reversal permutation, present for power-of-two `n`.
    bitrev: Option<Vec<usize>>,
}

impl<T: Real> LinePlan<T> {
    fn new(n: usize, sign: f64) -> Self {
        let (sin, cos) = (0..n)
            .map(|k| {
                let (s, c) = (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin_cos();
                (T::from_f64(sign * s), T::from_f64(c))
            })
            .unzip();
        let bitrev = (n.is_power_of_two() && n > 1).then(|| {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| i.reverse_bits() >> (usize::BITS - bits))
                .collect()
        });
        Self {
            n,
            cos,
            sin,
            bitrev,
        }
    }

    /// Transforms `re`/`im` (length `n`) in place; `br`/`bi` are scratch.
    fn run(&self, re: &mut [T], im: &mut [T], br: &mut [T], bi: &mut [T]) {
        let n = self.n;
        match &self.bitrev {
            Some(rev) => {
                for (i, &r) in rev.iter().enumerate() {
                    br[i] = re[r];
                    bi[i] = im[r];
                }
                let mut len = 2;
                while len <= n {
                    let half = len / 2;
                    let step = n / len;
                    for start in (0..n).step_by(len) {
                        for k in 0..half {
                            let (c, s) = (self.cos[k * step], self.sin[k * step]);
                            let (a, b) = (start + k, start + k + half);
                            let tr = br[b] * c - bi[b] * s;
                            let ti = br[b] * s + bi[b] * c;
                            br[b] = br[a] - tr;
                            bi[b] = bi[a] - ti;
                            br[a] += tr;
                            bi[a] += ti;
                        }
                    }
                    len *= 2;
                }
            }
            None => {
                for k in 0..n {
                    let mut ar = T::ZERO;
                    let mut ai = T::ZERO;
                    let mut idx = 0;
                    for j in 0..n {
                        let (c, s) = (self.cos[idx], self.sin[idx]);
                        ar += re[j] * c - im[j] * s;
                        ai += re[j] * s + im[j] * c;
                        idx += k;
                        if idx >= n {
                            idx -= n;
                        }
                    }
                    br[k] = ar;
                    bi[k] = ai;
                }
            }
        }
        re.copy_from_slice(&br[..n]);
        im.copy_from_slice(&bi[..n]);
    }
}

fn transform<T: Real>(x: &ComplexTensor<T>, sign: f64) -> Result<ComplexTensor<T>> {
    let (outer, h, w) = x.real.trailing_2d()?;
    let mut re = x.real.clone();
    let mut im = x.imag.clone();
    let (plan_h, plan_w) = (LinePlan::new(h, sign), LinePlan::new(w, sign));
    let m = h.max(w);
    let (mut br, mut bi) = (vec![T::ZERO; m], vec![T::ZERO; m]);
    let (mut lr, mut li) = (vec![T::ZERO; h], vec![T::ZERO; h]);
    let (rd, id) = (re.data_mut(), im.data_mut());
    for o in 0..outer {
        let base = o * h * w;
        for r in 0..h {
            let s = base + r * w;
            plan_w.run(&mut rd[s..s + w], &mut id[s..s + w], &mut br, &mut bi);
        }
        for c in 0..w {
            for r in 0..h {
                lr[r] = rd[base + r * w + c];
                li[r] = id[base + r * w + c];
            }
            plan_h.run(&mut lr, &mut li, &mut br, &mut bi);
            for r in 0..h {
                rd[base + r * w + c] = lr[r];
                id[base + r * w + c] = li[r];
            }
        }
    }
    ComplexTensor::new(re, im)
}

/// Forward DFT of a real tensor: `X[k,l] = Σ x[m,n]·e^{−2πi(km/H + ln/W)}`.
pub fn fft2d<T: Real>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let zero = Tensor::zeros(x.shape())?;
    transform(&ComplexTensor::new(x.clone(), zero)?, -1.0)
}

/// Unnormalized complex DFT in either direction.
pub fn dft2d<T: Real>(x: &ComplexTensor<T>, inverse: bool) -> Result<ComplexTensor<T>> {
    transform(x, if inverse { 1.0 } else { -1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_dc_only() {
        let x = Tensor::<f64>::full(&[3, 5], 0.25).unwrap();
        let f = fft2d(&x).unwrap();
        assert!((f.real.data()[0] - 0.25 * 15.0).abs() < 1e-12);
        for i in 1..15 {
            assert!(f.real.data()[i].abs() < 1e-9 && f.imag.data()[i].abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_round_trip_scales_by_size() {
        let x = Tensor::<f64>::from_fn(&[2, 4, 6], |i| (i as f64 * 0.37).cos()).unwrap();
        let f = fft2d(&x).unwrap();
        let back = dft2d(&f, true).unwrap();
        for (a, b) in back.real.data().iter().zip(x.data()) {
            assert!((a / 24.0 - b).abs() < 1e-12);
        }
    }
}
