//! Luma PSNR / SSIM, scene-then-dataset averaging, and the interpolation
//! baselines.

use lgfn_tensor::{resize, Real, ResizeMode, Scale, Tensor};
use serde::Serialize;

use crate::error::{LgfnError, Result};
use crate::lightfield::LightField;

/// PSNR reported for a zero-error pair.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    Ok(a.expect_same_shape(b, "metric inputs")?)
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(peak² / MSE)` over the whole image, capped at 100 dB.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5), dynamic range
/// 1, averaged over every window position that fits inside the image.
/// Inputs are `[H, W]` or any tensor whose leading axes are all 1.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b)?;
    let (outer, h, w) = a.trailing_2d()?;
    if outer != 1 {
        return Err(LgfnError::InvalidInput(format!(
            "ssim takes a single plane, got shape {:?}",
            a.shape()
        )));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(LgfnError::InvalidInput(format!(
            "image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let av: Vec<f64> = a.data().iter().map(|v| v.to_f64()).collect();
    let bv: Vec<f64> = b.data().iter().map(|v| v.to_f64()).collect();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, gi) in g.iter().enumerate() {
                let row = (y + i) * w + x;
                for (j, gj) in g.iter().enumerate() {
                    let wgt = gi * gj;
                    let (p, q) = (av[row + j], bv[row + j]);
                    ma += wgt * p;
                    mb += wgt * q;
                    saa += wgt * p * p;
                    sbb += wgt * q * q;
                    sab += wgt * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Mean of `vals` that does not depend on their order.
fn order_free_mean(mut vals: Vec<f64>) -> f64 {
    vals.sort_by(f64::total_cmp);
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneScore {
    pub scene: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetReport {
    pub scenes: Vec<SceneScore>,
    pub psnr: f64,
    pub ssim: f64,
    pub notes: &'static str,
}

pub const REPORT_NOTES: &str =
    "Y channel; PSNR over full views (no border crop, capped at 100 dB); SSIM mean over valid 11x11 windows";

/// Scores one scene: PSNR and SSIM of every view, each averaged over views.
pub fn score_scene<T: Real>(
    id: &str,
    sr: &LightField<T>,
    hr: &LightField<T>,
) -> Result<SceneScore> {
    let (ds, dh) = (sr.dims(), hr.dims());
    if ds != dh {
        return Err(LgfnError::InvalidInput(format!(
            "scene {id}: sr {:?} vs hr {:?}",
            ds.shape(),
            dh.shape()
        )));
    }
    if ds.c != 1 {
        return Err(LgfnError::InvalidInput(format!(
            "scene {id}: metrics run on luma, got {} channels",
            ds.c
        )));
    }
    let mut ps = Vec::with_capacity(ds.views());
    let mut ss = Vec::with_capacity(ds.views());
    for u in 0..ds.u {
        for v in 0..ds.v {
            let (a, b) = (sr.view(u, v)?, hr.view(u, v)?);
            ps.push(psnr(&a, &b, 1.0)?);
            ss.push(ssim(&a, &b)?);
        }
    }
    Ok(SceneScore {
        scene: id.to_string(),
        psnr: order_free_mean(ps),
        ssim: order_free_mean(ss),
    })
}

/// Per-scene means over views, then the unweighted mean over scenes.
pub fn evaluate<T: Real>(
    ids: &[String],
    sr: &[LightField<T>],
    hr: &[LightField<T>],
) -> Result<DatasetReport> {
    if sr.len() != hr.len() || sr.len() != ids.len() {
        return Err(LgfnError::InvalidInput(format!(
            "{} ids, {} sr scenes, {} hr scenes",
            ids.len(),
            sr.len(),
            hr.len()
        )));
    }
    if sr.is_empty() {
        return Err(LgfnError::InvalidInput("no scenes to evaluate".into()));
    }
    let scenes = ids
        .iter()
        .zip(sr.iter().zip(hr))
        .map(|(id, (s, h))| score_scene(id, s, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(scenes))
}

/// Dataset means from already computed scene scores.
pub fn aggregate(scenes: Vec<SceneScore>) -> DatasetReport {
    DatasetReport {
        psnr: order_free_mean(scenes.iter().map(|s| s.psnr).collect()),
        ssim: order_free_mean(scenes.iter().map(|s| s.ssim).collect()),
        scenes,
        notes: REPORT_NOTES,
    }
}

/// Plain-text table with `PSNR / SSIM` cells.
pub fn format_report(r: &DatasetReport) -> String {
    let width = r
        .scenes
        .iter()
        .map(|s| s.scene.len())
        .max()
        .unwrap_or(0)
        .max(7);
    let mut out = format!("{:<width$}  PSNR / SSIM\n", "scene");
    for s in &r.scenes {
        out.push_str(&format!(
            "{:<width$}  {:.2} / {:.4}\n",
            s.scene, s.psnr, s.ssim
        ));
    }
    out.push_str(&format!(
        "{:<width$}  {:.2} / {:.4}\n",
        "average", r.psnr, r.ssim
    ));
    out.push_str(&format!("({})\n", r.notes));
    out
}

/// Published ×4 bicubic PSNR / SSIM per benchmark and on average. Shown next
/// to locally measured baselines for manual comparison; never gated.
pub const REFERENCE_BICUBIC_X4: [(&str, f64, f64); 6] = [
    ("EPFL", 25.14, 0.8324),
    ("HCInew", 27.61, 0.8517),
    ("HCIold", 32.42, 0.9344),
    ("INRIA", 26.82, 0.8867),
    ("STFgantry", 25.93, 0.8452),
    ("average", 27.58, 0.8701),
];

/// Measured bicubic scores followed by the published ×4 bicubic rows.
pub fn format_bicubic_comparison(measured: &DatasetReport) -> String {
    let mut out = format!(
        "bicubic (measured): {:.2} / {:.4} over {} scene(s)\n",
        measured.psnr,
        measured.ssim,
        measured.scenes.len()
    );
    out.push_str("bicubic x4 (published, for reference only):\n");
    for (name, p, s) in REFERENCE_BICUBIC_X4 {
        out.push_str(&format!("  {name:<10} {p:.2} / {s:.4}\n"));
    }
    out
}

/// Per-view interpolation upscale by `s`.
pub fn baseline_sr<T: Real>(
    lr: &LightField<T>,
    s: usize,
    mode: ResizeMode,
) -> Result<LightField<T>> {
    lr.map_views(|view| Ok(resize(view, Scale::up(s), mode)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(g[i], g[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn small_images_rejected() {
        let a = Tensor::<f64>::zeros(&[10, 20]).unwrap();
        assert!(matches!(ssim(&a, &a), Err(LgfnError::InvalidInput(_))));
    }

    #[test]
    fn order_free_mean_is_bit_stable() {
        let v = vec![0.1, 1e8, 0.3, -1e8, 0.7];
        let mut r = v.clone();
        r.reverse();
        assert_eq!(order_free_mean(v).to_bits(), order_free_mean(r).to_bits());
    }
}
