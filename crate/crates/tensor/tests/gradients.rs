use lgfn_tensor::{
    gradcheck, Activation, ConvSpec, GradTape, PoolKind, ResizeMode, Result, Tensor, Var,
    LEAKY_SLOPE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-4;
const KERNEL_TOL: f64 = 1e-4;

fn random(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(seed: u64, shape: &[usize]) -> Tensor<f64> {
    random(seed, shape).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Reduces `y` to a scalar with fixed pseudo-random weights.
fn project(tape: &mut GradTape<f64>, y: &Var<f64>) -> Result<Var<f64>> {
    let r = tape.constant(random(999, y.shape()));
    let p = tape.mul(y, &r)?;
    tape.sum(&p)
}

fn check(
    name: &str,
    point: &[Tensor<f64>],
    f: impl Fn(&mut GradTape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
) {
    let report = gradcheck(f, point, EPS).unwrap();
    assert!(
        report.max_rel_error <= KERNEL_TOL,
        "{name}: max rel error {} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn sum_of_inputs_has_unit_gradient() {
    let report = gradcheck(|t, v| t.sum(&v[0]), &[random(1, &[3, 4])], EPS).unwrap();
    assert!(report.max_rel_error < 1e-10);
}

#[test]
fn conv2d_l1_to_target() {
    let x = random(2, &[1, 2, 6, 6]);
    let w = random(3, &[3, 2, 3, 3]);
    let b = random(4, &[3]);
    let target = random(5, &[1, 3, 6, 6]).map(|v| 4.0 + v);
    check("conv2d l1", &[x, w, b], move |t, v| {
        let y = t.conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::same(3, 3))?;
        let tg = t.constant(target.clone());
        t.l1_loss(&y, &tg)
    });
}

#[test]
fn conv2d_variants() {
    let specs = [
        (
            "strided depthwise",
            ConvSpec::same(3, 3).with_stride(2).with_groups(4),
            1,
        ),
        (
            "dilated depthwise",
            ConvSpec::same(3, 3).with_dilation(2).with_groups(4),
            1,
        ),
        ("grouped 5x5", ConvSpec::same(5, 5).with_groups(2), 2),
        ("pointwise", ConvSpec::pointwise(), 4),
    ];
    for (i, (name, spec, cin_g)) in specs.into_iter().enumerate() {
        let x = random(10 + i as u64, &[2, 4, 7, 8]);
        let w = random(20 + i as u64, &[4, cin_g, spec.kernel_h, spec.kernel_w]);
        let b = random(30 + i as u64, &[4]);
        check(name, &[x, w, b], move |t, v| {
            let y = t.conv2d(&v[0], &v[1], Some(&v[2]), spec)?;
            project(t, &y)
        });
    }
}

#[test]
fn conv3d_1x3x3() {
    let x = random(40, &[1, 2, 3, 4, 5]);
    let w = random(41, &[3, 2, 1, 3, 3]);
    let b = random(42, &[3]);
    check("conv3d", &[x, w, b], |t, v| {
        let y = t.conv3d_1xkxk(&v[0], &v[1], Some(&v[2]), ConvSpec::same(3, 3))?;
        project(t, &y)
    });
}

#[test]
fn pooling() {
    let x = random(50, &[1, 2, 8, 8]);
    for kind in [PoolKind::Max, PoolKind::Avg] {
        check("pool2d", std::slice::from_ref(&x), move |t, v| {
            let y = t.pool2d(&v[0], kind, 2, 2)?;
            project(t, &y)
        });
        check("adaptive", std::slice::from_ref(&x), move |t, v| {
            let y = t.adaptive_pool2d(&v[0], kind, 1, 1)?;
            project(t, &y)
        });
    }
}

#[test]
fn shuffle_and_resize() {
    check("pixel_shuffle", &[random(60, &[1, 8, 3, 2])], |t, v| {
        let y = t.pixel_shuffle(&v[0], 2)?;
        project(t, &y)
    });
    for mode in [ResizeMode::Bilinear, ResizeMode::Bicubic] {
        check("resize up", &[random(61, &[2, 4, 5])], move |t, v| {
            let y = t.resize(&v[0], 8, 10, mode)?;
            project(t, &y)
        });
        check("resize down", &[random(62, &[2, 8, 8])], move |t, v| {
            let y = t.resize(&v[0], 4, 4, mode)?;
            project(t, &y)
        });
    }
}

#[test]
fn activations() {
    for kind in [
        Activation::Gelu,
        Activation::LeakyRelu(LEAKY_SLOPE),
        Activation::Sigmoid,
    ] {
        check("activation", &[away_from_zero(70, &[3, 5])], move |t, v| {
            let y = t.activation(&v[0], kind)?;
            project(t, &y)
        });
    }
}

#[test]
fn elementwise_and_layout() {
    let a = random(80, &[2, 3, 2, 2]);
    let b = random(81, &[2, 3, 2, 2]);
    let g = random(82, &[2, 3, 1, 1]);
    check("mul/add/sub/scale", &[a.clone(), b.clone()], |t, v| {
        let p = t.mul(&v[0], &v[1])?;
        let s = t.sub(&p, &v[1])?;
        let q = t.add(&s, &v[0])?;
        let y = t.scale(&q, 0.5)?;
        project(t, &y)
    });
    check("mul_broadcast", &[a.clone(), g], |t, v| {
        let y = t.mul_broadcast(&v[0], &v[1])?;
        project(t, &y)
    });
    check("narrow/concat/permute/reshape", &[a], |t, v| {
        let l = t.narrow(&v[0], 1, 0, 1)?;
        let r = t.narrow(&v[0], 1, 1, 2)?;
        let c = t.concat(&[&r, &l], 1)?;
        let p = t.permute(&c, &[3, 1, 0, 2])?;
        let y = t.reshape(&p, &[6, 4])?;
        project(t, &y)
    });
}

#[test]
fn losses() {
    let a = random(90, &[2, 4, 6]);
    let b = away_from_zero(91, &[2, 4, 6]).add(&a).unwrap();
    check("l1", &[a.clone(), b.clone()], |t, v| {
        t.l1_loss(&v[0], &v[1])
    });
    check("spectral charbonnier", &[a, b], |t, v| {
        t.spectral_charbonnier(&v[0], &v[1], 1e-3)
    });
}

#[test]
fn non_finite_value_is_reported() {
    let x = Tensor::<f64>::full(&[2], f64::MAX).unwrap();
    let err = gradcheck(
        |t, v| {
            let y = t.scale(&v[0], 10.0)?;
            t.sum(&y)
        },
        &[x],
        EPS,
    );
    assert!(matches!(err, Err(lgfn_tensor::TensorError::Evaluation(_))));
}

#[test]
fn each_recorded_input_gets_one_gradient() {
    let mut tape = GradTape::new();
    let x = tape.leaf(random(100, &[4]));
    let y = tape.mul(&x, &x).unwrap();
    let z = tape.add(&y, &x).unwrap();
    let s = tape.sum(&z).unwrap();
    let g = tape.backward(&s).unwrap();
    for (gv, xv) in g.get(&x).unwrap().data().iter().zip(x.value().data()) {
        assert!((gv - (2.0 * xv + 1.0)).abs() < 1e-14);
    }
    let mut inference = GradTape::<f64>::inference();
    let c = inference.leaf(random(100, &[4]));
    let d = inference.mul(&c, &c).unwrap();
    assert!(!d.is_tracked() && inference.is_empty());
}
