use lgfn::config::AttentionMode;
use lgfn::io::{decode_lf4, encode_lf4};
use lgfn::lightfield::{augment, extract_patches, patch_grid};
use lgfn::params::ParamGroup;
use lgfn::*;
use lgfn_tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(seed: u64, u: usize, v: usize, c: usize, h: usize, w: usize) -> LightField<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LightField::from_fn(LfDims { u, v, c, h, w }, |_, _, _, _, _| {
        rng.random_range(0.0..1.0)
    })
    .unwrap()
}

fn config(c: usize, lgfm: usize, scale: usize, flags: u8, cascade: bool) -> LgfnConfig {
    let mut cfg = LgfnConfig::default().with_scale(scale).with_modules(
        flags & 1 != 0,
        flags & 2 != 0,
        flags & 4 != 0,
    );
    cfg.channels = c;
    cfg.num_lgfm = lgfm;
    if cascade {
        cfg = cfg.with_mode(AttentionMode::Cascade);
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augment_inverse_restores_the_pair(seed in 0u64..1000, n in 1usize..4, code in 0u8..8) {
        let hr = field(seed, n, n, 1, 8, 8);
        let pair = SamplePair::from_hr(hr, 2).unwrap();
        let c = AugmentCode::new(code).unwrap();
        let back = augment(&augment(&pair, c).unwrap(), c.inverse()).unwrap();
        prop_assert_eq!(back.lr.tensor(), pair.lr.tensor());
        prop_assert_eq!(back.hr.tensor(), pair.hr.tensor());
    }

    #[test]
    fn patch_count_follows_the_grid(h in 4usize..20, w in 4usize..20, p in 1usize..6, stride in 1usize..6, s in 1usize..4) {
        let hr = field(h as u64 * 31 + w as u64, 1, 2, 1, h * s, w * s);
        let pair = SamplePair::from_hr(hr, s).unwrap();
        let patches = extract_patches(&pair, p.min(h).min(w), stride).unwrap();
        let p = p.min(h).min(w);
        prop_assert_eq!(patches.len(), patch_grid(h, p, stride) * patch_grid(w, p, stride));
        for q in &patches {
            let (l, r) = (q.lr.dims(), q.hr.dims());
            prop_assert_eq!((l.h, l.w), (p, p));
            prop_assert_eq!((r.h, r.w, r.u, r.v), (s * p, s * p, l.u, l.v));
        }
    }

    #[test]
    fn lf4_round_trip_is_bit_exact(seed in 0u64..1000, u in 1usize..4, c in 1usize..4, h in 1usize..9) {
        let lf = field(seed, u, 2, c, h, 3);
        let back = decode_lf4(&encode_lf4(&lf)).unwrap();
        prop_assert_eq!(back.tensor(), lf.tensor());
    }

    #[test]
    fn ingest_clamps_to_unit_range(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_fn(&[2, 2, 1, 3, 3], |_| rng.random_range(-2.0f32..3.0)).unwrap();
        let lf = LightField::ingest(t.clone()).unwrap();
        for (&a, &b) in lf.tensor().data().iter().zip(t.data()) {
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, b.clamp(0.0, 1.0));
        }
    }

    #[test]
    fn cost_report_is_self_consistent(
        c in prop::sample::select(vec![4usize, 8, 12, 16]),
        lgfm in 1usize..4,
        scale in prop::sample::select(vec![2usize, 4]),
        flags in 0u8..8,
        cascade in any::<bool>(),
    ) {
        let cfg = config(c, lgfm, scale, flags, cascade);
        let r = analyze(&cfg).unwrap();
        prop_assert_eq!(r.params_by_group.iter().map(|g| g.params).sum::<usize>(), r.params_total);
        prop_assert_eq!(r.flops_total, 2 * r.macs_total);
        prop_assert_eq!(init_params::<f32>(&cfg, 0).unwrap().scalar_count(), r.params_total);
        if flags & 4 == 0 {
            prop_assert_eq!(r.group(ParamGroup::Ecam), 0);
        }
    }

    #[test]
    fn psnr_and_ssim_are_symmetric(seed in 0u64..1000) {
        let a = field(seed, 1, 1, 1, 12, 13).view(0, 0).unwrap();
        let b = field(seed + 1, 1, 1, 1, 12, 13).view(0, 0).unwrap();
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(s <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forward_shape_contract_and_purity(
        n in 1usize..4,
        hq in 1usize..4,
        wq in 1usize..4,
        scale in prop::sample::select(vec![2usize, 4]),
        flags in 0u8..8,
        cascade in any::<bool>(),
        seed in 0u64..100,
    ) {
        let cfg = config(8, 1, scale, flags, cascade).with_angular(n);
        let (h, w) = (4 * hq, 4 * wq);
        let params = init_params::<f32>(&cfg, seed).unwrap();
        let lr = field(seed, n, n, 1, h, w);
        let (a, _) = lgfn_forward(&lr, &params, &cfg, false).unwrap();
        prop_assert_eq!(a.dims(), LfDims { u: n, v: n, c: 1, h: scale * h, w: scale * w });
        prop_assert!(a.tensor().data().iter().all(|x| x.is_finite()));
        let (b, _) = lgfn_forward(&lr, &params, &cfg, false).unwrap();
        prop_assert_eq!(a.tensor(), b.tensor());
    }
}
