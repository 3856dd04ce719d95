use lgfn::metrics::{aggregate, format_report, mse, PSNR_CAP_DB};
use lgfn::*;
use lgfn_tensor::{ResizeMode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[h, w], |_| rng.random_range(0.0..1.0)).unwrap()
}

/// Plain-loop SSIM with an explicitly built 2D Gaussian window.
fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, g) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *g = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *g;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let mut m = [0.0; 5];
            for (i, row) in win.iter().enumerate() {
                for (j, g) in row.iter().enumerate() {
                    let g = g / total;
                    let (p, q) = (a.at(&[y + i, x + j]), b.at(&[y + i, x + j]));
                    m[0] += g * p;
                    m[1] += g * q;
                    m[2] += g * p * p;
                    m[3] += g * q * q;
                    m[4] += g * p * q;
                }
            }
            let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
            acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2)
                / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn psnr_closed_forms() {
    let a = image(1, 16, 16).map(|x| 0.1 + 0.8 * x);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    let b = a.map(|x| x + 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-6);
    let c = a.map(|x| x + 0.05);
    let gain = psnr(&a, &c, 1.0).unwrap() - psnr(&a, &b, 1.0).unwrap();
    assert!((gain - 20.0 * 2f64.log10()).abs() < 1e-6);
    assert!((gain - 6.02).abs() < 0.01);
    let odd = a.map(|x| x - 0.037);
    let expected = 10.0 * (1.0 / (0.037f64 * 0.037)).log10();
    assert!((psnr(&a, &odd, 1.0).unwrap() - expected).abs() < 1e-6);
    assert!(psnr(&a, &image(2, 16, 15), 1.0).is_err());
}

#[test]
fn psnr_falls_as_noise_grows() {
    let a = image(3, 12, 12);
    let noise = image(4, 12, 12).map(|x| x - 0.5);
    let mut last = f64::INFINITY;
    for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let b = a.zip_map(&noise, |x, n| x + amp * n).unwrap();
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn mse_is_the_mean_squared_difference() {
    let a = Tensor::new(&[2, 2], vec![0.0, 0.5, 1.0, 0.25]).unwrap();
    let b = Tensor::new(&[2, 2], vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    assert!((mse(&a, &b).unwrap() - (0.25 + 0.0 + 1.0 + 0.0625) / 4.0).abs() < 1e-15);
}

#[test]
fn ssim_of_identical_images_is_exactly_one() {
    for (h, w) in [(11, 11), (16, 23), (32, 32)] {
        let a = image(5 + h as u64, h, w);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn ssim_matches_the_direct_window_sum() {
    for seed in 0..4 {
        let a = image(10 + seed, 14, 17);
        let b = a
            .zip_map(&image(20 + seed, 14, 17), |x, n| 0.7 * x + 0.3 * n)
            .unwrap();
        let s = ssim(&a, &b).unwrap();
        assert!((s - ssim_oracle(&a, &b)).abs() < 1e-12);
        assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-15);
        assert!(s.abs() <= 1.0);
    }
}

#[test]
fn ssim_of_inverted_binary_pattern_is_near_minus_one() {
    let a = Tensor::from_fn(&[24, 24], |i| {
        if (i / 24 / 3 + i % 24 / 3) % 2 == 0 {
            0.0
        } else {
            1.0
        }
    })
    .unwrap();
    let b = a.map(|x| 1.0 - x);
    assert!(ssim(&a, &b).unwrap() < 0.1);
}

#[test]
fn ssim_rejects_small_images() {
    let a = image(6, 10, 12);
    assert!(matches!(ssim(&a, &a), Err(LgfnError::InvalidInput(_))));
}

fn field(seed: u64, u: usize, v: usize) -> LightField<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LightField::from_fn(
        LfDims {
            u,
            v,
            c: 1,
            h: 12,
            w: 12,
        },
        |_, _, _, _, _| rng.random_range(0.0..1.0),
    )
    .unwrap()
}

#[test]
fn single_view_report_equals_view_metrics() {
    let (sr, hr) = (field(1, 1, 1), field(2, 1, 1));
    let r = evaluate(
        &["s".to_string()],
        std::slice::from_ref(&sr),
        std::slice::from_ref(&hr),
    )
    .unwrap();
    let (a, b) = (sr.view(0, 0).unwrap(), hr.view(0, 0).unwrap());
    assert_eq!(r.psnr, psnr(&a, &b, 1.0).unwrap());
    assert_eq!(r.ssim, ssim(&a, &b).unwrap());
}

#[test]
fn dataset_mean_is_over_scenes() {
    let scenes = vec![
        SceneScore {
            scene: "a".into(),
            psnr: 20.0,
            ssim: 0.5,
        },
        SceneScore {
            scene: "b".into(),
            psnr: 30.0,
            ssim: 0.9,
        },
    ];
    let r = aggregate(scenes);
    assert_eq!(r.psnr, 25.0);
    assert!((r.ssim - 0.7).abs() < 1e-15);
    let text = format_report(&r);
    assert!(text.contains("25.00 / 0.7000"), "{text}");
    assert!(text.contains("PSNR / SSIM"));
}

/// A scene with one view and a scene with four views weigh the same.
#[test]
fn scene_level_averaging_is_not_pixel_pooling() {
    let hr1 = LightField::from_fn(
        LfDims {
            u: 1,
            v: 1,
            c: 1,
            h: 12,
            w: 12,
        },
        |_, _, _, _, _| 0.5f64,
    )
    .unwrap();
    let sr1 = LightField::from_fn(hr1.dims(), |_, _, _, _, _| 0.6).unwrap();
    let hr2 = LightField::from_fn(
        LfDims {
            u: 2,
            v: 2,
            c: 1,
            h: 12,
            w: 12,
        },
        |_, _, _, _, _| 0.5f64,
    )
    .unwrap();
    let sr2 = LightField::from_fn(hr2.dims(), |_, _, _, _, _| 0.5 + 0.01 * 10f64.sqrt()).unwrap();
    let r = evaluate(&["one".into(), "four".into()], &[sr1, sr2], &[hr1, hr2]).unwrap();
    assert!((r.scenes[0].psnr - 20.0).abs() < 1e-9);
    assert!((r.scenes[1].psnr - 30.0).abs() < 1e-9);
    assert!((r.psnr - 25.0).abs() < 1e-9);
}

#[test]
fn evaluation_is_order_free() {
    let ids: Vec<String> = (0..3).map(|i| format!("scene{i}")).collect();
    let sr: Vec<_> = (0..3).map(|i| field(30 + i, 2, 2)).collect();
    let hr: Vec<_> = (0..3).map(|i| field(40 + i, 2, 2)).collect();
    let r = evaluate(&ids, &sr, &hr).unwrap();
    let order = [2, 0, 1];
    let ids2: Vec<String> = order.iter().map(|&i| ids[i].clone()).collect();
    let sr2: Vec<_> = order.iter().map(|&i| sr[i].clone()).collect();
    let hr2: Vec<_> = order.iter().map(|&i| hr[i].clone()).collect();
    let r2 = evaluate(&ids2, &sr2, &hr2).unwrap();
    assert_eq!(r.psnr.to_bits(), r2.psnr.to_bits());
    assert_eq!(r.ssim.to_bits(), r2.ssim.to_bits());
    assert!(evaluate(&ids[..2], &sr, &hr).is_err());
    assert!(evaluate::<f64>(&[], &[], &[]).is_err());
}

#[test]
fn metrics_need_luma_fields() {
    let rgb = LightField::from_fn(
        LfDims {
            u: 1,
            v: 1,
            c: 3,
            h: 12,
            w: 12,
        },
        |_, _, _, _, _| 0.5f64,
    )
    .unwrap();
    assert!(evaluate(
        &["x".into()],
        std::slice::from_ref(&rgb),
        std::slice::from_ref(&rgb)
    )
    .is_err());
}

#[test]
fn baselines_keep_constants_and_scale_extents() {
    let c = LightField::from_fn(
        LfDims {
            u: 2,
            v: 2,
            c: 1,
            h: 6,
            w: 5,
        },
        |_, _, _, _, _| 0.42f64,
    )
    .unwrap();
    for mode in [ResizeMode::Bilinear, ResizeMode::Bicubic] {
        let up = baseline_sr(&c, 4, mode).unwrap();
        assert_eq!(
            up.dims(),
            LfDims {
                u: 2,
                v: 2,
                c: 1,
                h: 24,
                w: 20
            }
        );
        assert!(up.tensor().data().iter().all(|&x| (x - 0.42).abs() < 1e-12));
    }
}

#[test]
fn smooth_field_baselines_exceed_thirty_db() {
    let hr = LightField::from_fn(
        LfDims {
            u: 3,
            v: 3,
            c: 1,
            h: 64,
            w: 64,
        },
        |u, v, _, y, x| {
            let (y, x) = (y as f64 + u as f64, x as f64 + v as f64);
            0.5 + 0.2 * (0.05 * x).sin() * (0.04 * y).cos() + 0.1 * (0.03 * (x + y)).sin()
        },
    )
    .unwrap();
    let pair = SamplePair::from_hr(hr, 4).unwrap();
    for mode in [ResizeMode::Bilinear, ResizeMode::Bicubic] {
        let up = baseline_sr(&pair.lr, 4, mode).unwrap();
        let r = evaluate(&["smooth".into()], &[up], std::slice::from_ref(&pair.hr)).unwrap();
        assert!(r.psnr > 30.0, "{mode:?}: {}", r.psnr);
    }
}

#[test]
fn bicubic_comparison_lists_measured_and_published_rows() {
    let r = aggregate(vec![SceneScore {
        scene: "a".into(),
        psnr: 28.0,
        ssim: 0.8,
    }]);
    let text = lgfn::metrics::format_bicubic_comparison(&r);
    assert!(text.starts_with("bicubic (measured): 28.00 / 0.8000 over 1 scene(s)"));
    assert!(text.contains("average    27.58 / 0.8701"), "{text}");
    assert_eq!(text.lines().count(), 8);
}
