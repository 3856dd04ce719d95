use std::fs;

use lgfn::io::{encode_pnm, import_views, lf_load, lf_store, PnmImage};
use lgfn::lightfield::{
    augment, augment_field, degrade_bicubic, extract_epi, extract_patches, from_feature_layout,
    patch_grid, rgb_to_y, to_feature_layout, EpiOrientation,
};
use lgfn::*;
use lgfn_tensor::{resize, ResizeMode, Scale, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims(u: usize, v: usize, c: usize, h: usize, w: usize) -> LfDims {
    LfDims { u, v, c, h, w }
}

fn random_field(seed: u64, d: LfDims) -> LightField<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LightField::from_fn(d, |_, _, _, _, _| rng.random_range(0.0..1.0)).unwrap()
}

/// Every view is the same texture shifted by `d` pixels per angular step,
/// so horizontal EPIs hold lines of slope `d` (and vertical ones too).
fn disparity_field(n_ang: usize, n: usize, d: i64) -> LightField<f64> {
    let texture = |y: i64, x: i64| {
        let (y, x) = (y.rem_euclid(97) as f64, x.rem_euclid(89) as f64);
        (0.37 * x).sin() * 0.3 + (0.23 * y + 0.11 * x).cos() * 0.2 + 0.5 + 0.001 * (x * y)
    };
    LightField::from_fn(dims(n_ang, n_ang, 1, n, n), |u, v, _, y, x| {
        texture(y as i64 + d * u as i64, x as i64 + d * v as i64)
    })
    .unwrap()
}

fn write_pnm(dir: &std::path::Path, name: &str, img: &PnmImage) {
    fs::write(dir.join(name), encode_pnm(img)).unwrap();
}

#[test]
fn lf4_round_trip_through_a_file() {
    let lf = random_field(1, dims(5, 5, 1, 32, 32));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.lf4");
    lf_store(&lf, &path).unwrap();
    assert_eq!(lf_load(&path).unwrap(), lf);
    let small = random_field(2, dims(2, 2, 3, 4, 4));
    lf_store(&small, &path).unwrap();
    assert_eq!(
        fs::metadata(&path).unwrap().len() as usize,
        28 + 2 * 2 * 3 * 4 * 4 * 4
    );
}

#[test]
fn lf4_with_foreign_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.lf4");
    let mut bytes = b"XXXX".to_vec();
    bytes.extend_from_slice(&[0u8; 24]);
    fs::write(&path, bytes).unwrap();
    assert!(matches!(lf_load(&path), Err(LgfnError::Format(_))));
    assert!(matches!(
        lf_load(dir.path().join("missing.lf4")),
        Err(LgfnError::Io { .. })
    ));
}

#[test]
fn constant_pgm_views_import_to_a_constant_field() {
    let dir = tempfile::tempdir().unwrap();
    let img = PnmImage {
        width: 32,
        height: 32,
        channels: 1,
        samples: vec![128; 32 * 32],
    };
    for u in 0..5 {
        for v in 0..5 {
            write_pnm(dir.path(), &format!("view_{u}_{v}.pgm"), &img);
        }
    }
    let lf = import_views(dir.path(), 5, 5).unwrap();
    assert_eq!(lf.dims(), dims(5, 5, 1, 32, 32));
    assert!(lf.tensor().data().iter().all(|&x| x == 128.0 / 255.0));
}

#[test]
fn mismatched_view_is_named_in_the_error() {
    let dir = tempfile::tempdir().unwrap();
    for u in 0..2 {
        for v in 0..2 {
            let w = if (u, v) == (1, 0) { 31 } else { 32 };
            let img = PnmImage {
                width: w,
                height: 32,
                channels: 1,
                samples: vec![7; w * 32],
            };
            write_pnm(dir.path(), &format!("view_{u}_{v}.pgm"), &img);
        }
    }
    let err = import_views(dir.path(), 2, 2).unwrap_err();
    assert!(err.to_string().contains("view_1_0.pgm"), "{err}");
    fs::remove_file(dir.path().join("view_0_1.pgm")).unwrap();
    let err = import_views(dir.path(), 2, 2).unwrap_err();
    assert!(err.to_string().contains("view_0_1"), "{err}");
}

#[test]
fn ppm_import_then_luma_matches_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    // black, white, pure red
    let img = PnmImage {
        width: 3,
        height: 1,
        channels: 3,
        samples: vec![0, 0, 0, 255, 255, 255, 255, 0, 0],
    };
    write_pnm(dir.path(), "view_0_0.ppm", &img);
    let lf = import_views(dir.path(), 1, 1).unwrap();
    assert_eq!(lf.dims(), dims(1, 1, 3, 1, 3));
    let y = rgb_to_y(&lf.cast::<f64>()).unwrap();
    let expected = [16.0 / 255.0, 235.0 / 255.0, (65.481 + 16.0) / 255.0];
    for (x, e) in (0..3).map(|i| y.at(0, 0, 0, 0, i)).zip(expected) {
        assert!((x - e).abs() < 1e-6, "{x} vs {e}");
    }
}

#[test]
fn luma_rejects_single_channel_input() {
    let lf = random_field(3, dims(1, 1, 1, 2, 2));
    assert!(matches!(rgb_to_y(&lf), Err(LgfnError::InvalidInput(_))));
}

#[test]
fn ingest_clamps_into_unit_range() {
    let t = Tensor::new(&[1, 1, 1, 1, 3], vec![-0.5f32, 0.25, 1.5]).unwrap();
    let lf = LightField::ingest(t).unwrap();
    assert_eq!(lf.tensor().data(), &[0.0, 0.25, 1.0]);
}

#[test]
fn epi_slices_follow_the_index_map() {
    let lf = random_field(4, dims(3, 4, 1, 5, 6));
    let h = extract_epi(&lf, EpiOrientation::Horizontal, (2, 3)).unwrap();
    assert_eq!(h.pixels.shape(), &[4, 6]);
    let v = extract_epi(&lf, EpiOrientation::Vertical, (1, 5)).unwrap();
    assert_eq!(v.pixels.shape(), &[3, 5]);
    for a in 0..4 {
        for w in 0..6 {
            assert_eq!(h.pixels.at(&[a, w]), lf.at(2, a, 0, 3, w));
        }
    }
    for a in 0..3 {
        for y in 0..5 {
            assert_eq!(v.pixels.at(&[a, y]), lf.at(a, 1, 0, y, 5));
        }
    }
    assert!(matches!(
        extract_epi(&lf, EpiOrientation::Horizontal, (3, 0)),
        Err(LgfnError::Bounds(_))
    ));
    assert!(matches!(
        extract_epi(&lf, EpiOrientation::Vertical, (0, 6)),
        Err(LgfnError::Bounds(_))
    ));
}

#[test]
fn epi_lines_have_the_constructed_slope() {
    let d = 2;
    let lf = disparity_field(5, 24, d);
    let epi = extract_epi(&lf, EpiOrientation::Horizontal, (1, 7))
        .unwrap()
        .pixels;
    for v in 0..4 {
        for w in 0..20 {
            assert_eq!(epi.at(&[v + 1, w]), epi.at(&[v, w + d as usize]));
        }
    }
}

#[test]
fn degradation_keeps_constants_and_is_identity_at_unit_scale() {
    let c = LightField::from_fn(dims(2, 2, 1, 8, 8), |_, _, _, _, _| 0.3f64).unwrap();
    let lr = degrade_bicubic(&c, 2).unwrap();
    assert_eq!(lr.dims(), dims(2, 2, 1, 4, 4));
    assert!(lr.tensor().data().iter().all(|&x| (x - 0.3).abs() < 1e-12));
    let f = random_field(5, dims(2, 3, 1, 6, 6)).cast::<f64>();
    let same = degrade_bicubic(&f, 1).unwrap();
    assert!(same.tensor().max_abs_diff(f.tensor()).unwrap() < 1e-6);
    assert!(degrade_bicubic(&f, 4).is_err());
}

#[test]
fn degradation_is_per_view_resize() {
    let f = LightField::from_fn(dims(2, 2, 1, 8, 8), |u, v, _, y, x| {
        0.1 * u as f64 + 0.05 * v as f64 + 0.02 * y as f64 + 0.03 * x as f64
    })
    .unwrap();
    let lr = degrade_bicubic(&f, 2).unwrap();
    for u in 0..2 {
        for v in 0..2 {
            let r = resize(&f.view(u, v).unwrap(), Scale::down(2), ResizeMode::Bicubic).unwrap();
            assert_eq!(lr.view(u, v).unwrap(), r);
        }
    }
}

#[test]
fn patches_tile_the_field() {
    let hr = random_field(6, dims(2, 2, 1, 128, 128));
    let pair = SamplePair::from_hr(hr, 2).unwrap();
    assert_eq!(extract_patches(&pair, 32, 32).unwrap().len(), 4);
    assert_eq!(extract_patches(&pair, 32, 16).unwrap().len(), 9);
    let single = SamplePair::from_hr(random_field(7, dims(1, 1, 1, 64, 64)), 2).unwrap();
    assert_eq!(extract_patches(&single, 32, 32).unwrap().len(), 1);
    assert!(extract_patches(&single, 33, 1).is_err());
    let patches = extract_patches(&pair, 32, 32).unwrap();
    for (i, p) in patches.iter().enumerate() {
        assert_eq!(p.lr.dims(), dims(2, 2, 1, 32, 32));
        assert_eq!(p.hr.dims(), dims(2, 2, 1, 64, 64));
        let (gy, gx) = (i / 2, i % 2);
        assert_eq!(
            p.lr.at(1, 0, 0, 3, 5),
            pair.lr.at(1, 0, 0, 32 * gy + 3, 32 * gx + 5)
        );
        assert_eq!(
            p.hr.at(0, 1, 0, 9, 2),
            pair.hr.at(0, 1, 0, 64 * gy + 9, 64 * gx + 2)
        );
    }
    assert_eq!(patch_grid(64, 32, 32), 2);
    assert_eq!(patch_grid(70, 32, 19), 3);
}

#[test]
fn pair_invariants_are_enforced() {
    let lr = random_field(8, dims(2, 2, 1, 8, 8));
    let hr = random_field(9, dims(2, 2, 1, 16, 15));
    assert!(SamplePair::new(lr.clone(), hr, 2).is_err());
    let hr = random_field(9, dims(2, 3, 1, 16, 16));
    assert!(SamplePair::new(lr, hr, 2).is_err());
}

#[test]
fn augmentation_has_eight_distinct_invertible_codes() {
    let pair = SamplePair::from_hr(random_field(10, dims(3, 3, 1, 8, 8)), 2).unwrap();
    assert_eq!(augment(&pair, AugmentCode::IDENTITY).unwrap(), pair);
    let variants: Vec<_> = AugmentCode::all()
        .map(|c| augment(&pair, c).unwrap())
        .collect();
    for i in 0..8 {
        for j in 0..i {
            assert_ne!(variants[i].hr, variants[j].hr, "codes {i} and {j} coincide");
        }
        let code = AugmentCode::new(i as u8).unwrap();
        assert_eq!(augment(&variants[i], code.inverse()).unwrap(), pair);
    }
    let hflip = AugmentCode::new(1).unwrap();
    assert_eq!(augment(&variants[1], hflip).unwrap(), pair);
    assert!(AugmentCode::new(8).is_err());
}

#[test]
fn rotation_needs_square_extents() {
    let lf = random_field(11, dims(3, 3, 1, 8, 6));
    assert!(augment_field(&lf, AugmentCode::new(4).unwrap()).is_err());
    assert!(augment_field(&lf, AugmentCode::new(3).unwrap()).is_ok());
    let lf = random_field(12, dims(2, 3, 1, 8, 8));
    assert!(augment_field(&lf, AugmentCode::new(5).unwrap()).is_err());
}

/// Expected EPI of the augmented field, built from EPIs of the original:
/// flips reverse both EPI axes (angle and space move together), rotation
/// swaps the horizontal and vertical EPI families.
fn expected_epi(
    lf: &LightField<f64>,
    code: AugmentCode,
    orient: EpiOrientation,
    fixed: (usize, usize),
) -> Tensor<f64> {
    let d = lf.dims();
    let flip_both = |t: &Tensor<f64>| {
        let (r, c) = (t.shape()[0], t.shape()[1]);
        Tensor::from_fn(&[r, c], |i| t.at(&[r - 1 - i / c, c - 1 - i % c])).unwrap()
    };
    // horizontal/vertical EPI of the flipped (not yet rotated) field
    let flipped_epi = |orient: EpiOrientation, (a, b): (usize, usize)| {
        let (fa, fb, same_axis_flip) = match orient {
            EpiOrientation::Horizontal => (
                code.flips_vertical(),
                code.flips_vertical(),
                code.flips_horizontal(),
            ),
            EpiOrientation::Vertical => (
                code.flips_horizontal(),
                code.flips_horizontal(),
                code.flips_vertical(),
            ),
        };
        let (na, nb) = match orient {
            EpiOrientation::Horizontal => (d.u, d.h),
            EpiOrientation::Vertical => (d.v, d.w),
        };
        let a = if fa { na - 1 - a } else { a };
        let b = if fb { nb - 1 - b } else { b };
        let e = extract_epi(lf, orient, (a, b)).unwrap().pixels;
        if same_axis_flip {
            flip_both(&e)
        } else {
            e
        }
    };
    if !code.rotates() {
        return flipped_epi(orient, fixed);
    }
    let (a, b) = fixed;
    match orient {
        EpiOrientation::Horizontal => {
            flipped_epi(EpiOrientation::Vertical, (d.v - 1 - a, d.w - 1 - b))
        }
        EpiOrientation::Vertical => flip_both(&flipped_epi(EpiOrientation::Horizontal, (a, b))),
    }
}

#[test]
fn epi_extraction_commutes_with_every_augmentation() {
    let lf = disparity_field(5, 16, 1);
    for code in AugmentCode::all() {
        let aug = augment_field(&lf, code).unwrap();
        for orient in [EpiOrientation::Horizontal, EpiOrientation::Vertical] {
            for fixed in [(0, 0), (1, 5), (4, 15), (2, 9)] {
                let got = extract_epi(&aug, orient, fixed).unwrap().pixels;
                assert_eq!(
                    got,
                    expected_epi(&lf, code, orient, fixed),
                    "code {} {orient:?} {fixed:?}",
                    code.code()
                );
            }
        }
        // the augmented field is still a disparity-1 field: EPI lines keep their slope
        let epi = extract_epi(&aug, EpiOrientation::Horizontal, (2, 8))
            .unwrap()
            .pixels;
        for v in 0..4 {
            for w in 0..15 {
                assert_eq!(
                    epi.at(&[v + 1, w]),
                    epi.at(&[v, w + 1]),
                    "code {}",
                    code.code()
                );
            }
        }
    }
}

#[test]
fn feature_layout_round_trip() {
    let lf = random_field(13, dims(5, 5, 1, 6, 7));
    let t = to_feature_layout(&lf).unwrap();
    assert_eq!(t.shape(), &[1, 25, 6, 7]);
    for u in 0..5 {
        for v in 0..5 {
            let slice = t.narrow(1, u * 5 + v, 1).unwrap();
            assert_eq!(slice.data(), lf.view(u, v).unwrap().data());
        }
    }
    assert_eq!(from_feature_layout(&t, 5, 5).unwrap(), lf);
    let one = random_field(14, dims(1, 1, 1, 3, 4));
    let t1 = to_feature_layout(&one).unwrap();
    assert_eq!(t1.shape(), &[1, 1, 3, 4]);
    assert_eq!(t1.data(), one.tensor().data());
    assert!(to_feature_layout(&random_field(15, dims(1, 1, 3, 2, 2))).is_err());
}
