//! The gradient suite: central-difference checks of every differentiable
//! kernel plus the end-to-end tiny model, in 64-bit precision.

use lgfn_tensor::{
    gradcheck, gradcheck_with_floor, Activation, ConvSpec, GradTape, GradcheckReport, PoolKind,
    ResizeMode, Tensor, TensorError, Var, LEAKY_SLOPE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::LgfnConfig;
use crate::error::Result;
use crate::model::{lgfn_forward_var, ForwardTrace};
use crate::params::{init_params, BoundParams};
use crate::train::{combined_loss_var, TrainConfig};

pub const KERNEL_EPS: f64 = 1e-4;
pub const KERNEL_TOLERANCE: f64 = 1e-4;
pub const MODEL_EPS: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Relative-error denominator floor for the end-to-end check. Through the
/// full network the finite-difference estimate carries roughly 3e-9 of
/// roundoff noise, so components below the floor are compared in absolute
/// terms (`|a − n| ≤ tolerance · floor`).
pub const MODEL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub components: usize,
    pub refined: usize,
    pub on_kink: usize,
    /// `(input index, element index, analytic, numeric)` of the worst component.
    pub worst: (usize, usize, f64, f64),
}

impl GradCase {
    fn new(name: impl Into<String>, r: GradcheckReport, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_error: r.max_rel_error,
            tolerance,
            components: r.components,
            refined: r.refined,
            on_kink: r.on_kink,
            worst: r.worst,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.on_kink == 0 && self.components > 0
    }
}

type Case = (
    &'static str,
    Vec<Tensor<f64>>,
    Box<dyn Fn(&mut GradTape<f64>, &[Var<f64>]) -> lgfn_tensor::Result<Var<f64>>>,
);

struct Gen(ChaCha8Rng);

impl Gen {
    fn t(&mut self, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| self.0.random_range(-1.0..1.0)).expect("positive extents")
    }

    /// Values at least 0.05 away from zero.
    fn off_zero(&mut self, shape: &[usize]) -> Tensor<f64> {
        self.t(shape)
            .map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
    }
}

/// Reduces `y` to a scalar with fixed, unevenly spread weights in [-1, 1).
fn proj(t: &mut GradTape<f64>, y: &Var<f64>) -> lgfn_tensor::Result<Var<f64>> {
    let w = Tensor::from_fn(y.shape(), |i| ((i * 7919 + 13) % 29) as f64 / 14.5 - 1.0)?;
    let r = t.constant(w);
    let p = t.mul(y, &r)?;
    t.sum(&p)
}

fn kernel_cases(seed: u64) -> Vec<Case> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut cases: Vec<Case> = Vec::new();

    let target = g.t(&[1, 3, 6, 6]).map(|v| v + 4.0);
    cases.push((
        "conv2d 3x3 + l1",
        vec![g.t(&[1, 2, 6, 6]), g.t(&[3, 2, 3, 3]), g.t(&[3])],
        Box::new(move |t, v| {
            let y = t.conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::same(3, 3))?;
            let tg = t.constant(target.clone());
            t.l1_loss(&y, &tg)
        }),
    ));
    let convs = [
        (
            "conv2d strided depthwise",
            ConvSpec::same(3, 3).with_stride(2).with_groups(4),
            1,
        ),
        (
            "conv2d dilated depthwise",
            ConvSpec::same(3, 3).with_dilation(3).with_groups(4),
            1,
        ),
        ("conv2d grouped 5x5", ConvSpec::same(5, 5).with_groups(2), 2),
        ("conv2d pointwise", ConvSpec::pointwise(), 4),
    ];
    for (name, spec, cin_g) in convs {
        cases.push((
            name,
            vec![
                g.t(&[2, 4, 7, 8]),
                g.t(&[4, cin_g, spec.kernel_h, spec.kernel_w]),
                g.t(&[4]),
            ],
            Box::new(move |t, v| {
                let y = t.conv2d(&v[0], &v[1], Some(&v[2]), spec)?;
                proj(t, &y)
            }),
        ));
    }
    cases.push((
        "conv3d 1x3x3",
        vec![g.t(&[1, 2, 3, 4, 5]), g.t(&[3, 2, 1, 3, 3]), g.t(&[3])],
        Box::new(move |t, v| {
            let y = t.conv3d_1xkxk(&v[0], &v[1], Some(&v[2]), ConvSpec::same(3, 3))?;
            proj(t, &y)
        }),
    ));
    for kind in [PoolKind::Max, PoolKind::Avg] {
        cases.push((
            if kind == PoolKind::Max {
                "max pool 2x2"
            } else {
                "avg pool 2x2"
            },
            vec![g.t(&[1, 2, 8, 8])],
            Box::new(move |t, v| {
                let y = t.pool2d(&v[0], kind, 2, 2)?;
                proj(t, &y)
            }),
        ));
        cases.push((
            if kind == PoolKind::Max {
                "adaptive max pool"
            } else {
                "adaptive avg pool"
            },
            vec![g.t(&[1, 2, 8, 8])],
            Box::new(move |t, v| {
                let y = t.adaptive_pool2d(&v[0], kind, 1, 1)?;
                proj(t, &y)
            }),
        ));
    }
    cases.push((
        "pixel shuffle",
        vec![g.t(&[1, 8, 3, 2])],
        Box::new(move |t, v| {
            let y = t.pixel_shuffle(&v[0], 2)?;
            proj(t, &y)
        }),
    ));
    for (mode, up, down) in [
        (ResizeMode::Bilinear, "bilinear up", "bilinear down"),
        (ResizeMode::Bicubic, "bicubic up", "bicubic down"),
    ] {
        cases.push((
            up,
            vec![g.t(&[2, 4, 5])],
            Box::new(move |t, v| {
                let y = t.resize(&v[0], 8, 10, mode)?;
                proj(t, &y)
            }),
        ));
        cases.push((
            down,
            vec![g.t(&[2, 8, 8])],
            Box::new(move |t, v| {
                let y = t.resize(&v[0], 4, 4, mode)?;
                proj(t, &y)
            }),
        ));
    }
    for (name, kind) in [
        ("gelu", Activation::Gelu),
        ("leaky relu", Activation::LeakyRelu(LEAKY_SLOPE)),
        ("sigmoid", Activation::Sigmoid),
    ] {
        cases.push((
            name,
            vec![g.off_zero(&[3, 5])],
            Box::new(move |t, v| {
                let y = t.activation(&v[0], kind)?;
                proj(t, &y)
            }),
        ));
    }
    cases.push((
        "add/sub/mul/scale",
        vec![g.t(&[2, 3, 2, 2]), g.t(&[2, 3, 2, 2])],
        Box::new(move |t, v| {
            let p = t.mul(&v[0], &v[1])?;
            let s = t.sub(&p, &v[1])?;
            let q = t.add(&s, &v[0])?;
            let y = t.scale(&q, 0.5)?;
            proj(t, &y)
        }),
    ));
    cases.push((
        "broadcast gate",
        vec![g.t(&[2, 3, 2, 2]), g.t(&[2, 3, 1, 1])],
        Box::new(move |t, v| {
            let y = t.mul_broadcast(&v[0], &v[1])?;
            proj(t, &y)
        }),
    ));
    cases.push((
        "narrow/concat/permute/reshape",
        vec![g.t(&[2, 3, 2, 2])],
        Box::new(move |t, v| {
            let l = t.narrow(&v[0], 1, 0, 1)?;
            let r = t.narrow(&v[0], 1, 1, 2)?;
            let c = t.concat(&[&r, &l], 1)?;
            let p = t.permute(&c, &[3, 1, 0, 2])?;
            let y = t.reshape(&p, &[6, 4])?;
            proj(t, &y)
        }),
    ));
    let a = g.t(&[2, 4, 6]);
    let b = g.off_zero(&[2, 4, 6]).add(&a).expect("same shape");
    cases.push((
        "l1 loss",
        vec![a.clone(), b.clone()],
        Box::new(|t, v| t.l1_loss(&v[0], &v[1])),
    ));
    cases.push((
        "fft charbonnier loss",
        vec![a, b],
        Box::new(|t, v| t.spectral_charbonnier(&v[0], &v[1], 1e-3)),
    ));
    cases
}

/// One gradcheck per differentiable kernel at `ε = 1e-4`.
pub fn kernel_suite(seed: u64) -> Result<Vec<GradCase>> {
    kernel_cases(seed)
        .into_iter()
        .map(|(name, point, f)| {
            let r = gradcheck(f, &point, KERNEL_EPS)?;
            Ok(GradCase::new(name, r, KERNEL_TOLERANCE))
        })
        .collect()
}

/// Gradcheck of the combined loss through the tiny model (C=8, one LGFM,
/// 2×2 views of 8×8) with respect to every parameter and the input.
pub fn model_gradcheck(seed: u64) -> Result<GradCase> {
    let cfg = LgfnConfig::tiny().with_angular(2);
    let params = init_params::<f64>(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(100));
    let s = cfg.scale;
    let lr = Tensor::from_fn(&[2, 2, 1, 8, 8], |_| rng.random_range(0.0..1.0))?;
    let hr = Tensor::from_fn(&[2, 2, 1, 8 * s, 8 * s], |_| rng.random_range(2.0..3.0))?;
    let mut point: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    // non-zero biases so every term of every bias gradient is exercised
    for t in point.iter_mut().filter(|t| t.rank() == 1) {
        *t = Tensor::from_fn(t.shape(), |_| rng.random_range(-0.1..0.1))?;
    }
    point.push(lr);
    let n = params.len();
    let tcfg = TrainConfig::default();
    let eval_err = |e: crate::error::LgfnError| TensorError::Evaluation(e.to_string());
    let r = gradcheck_with_floor(
        |tape, v| {
            let p = BoundParams::from_vars(&params, &v[..n]).map_err(eval_err)?;
            let target = tape.constant(hr.clone());
            let sr = lgfn_forward_var(tape, &p, &cfg, &v[n], &mut ForwardTrace::disabled())
                .map_err(eval_err)?;
            let (total, _, _) = combined_loss_var(tape, &sr, &target, &tcfg).map_err(eval_err)?;
            Ok(total)
        },
        &point,
        MODEL_EPS,
        MODEL_FLOOR,
    )?;
    Ok(GradCase::new("end-to-end tiny model", r, MODEL_TOLERANCE))
}

/// Kernel suite followed by the end-to-end check.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut cases = kernel_suite(seed)?;
    cases.push(model_gradcheck(seed)?);
    Ok(cases)
}

pub fn format_suite(cases: &[GradCase]) -> String {
    let width = cases.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in cases {
        out.push_str(&format!(
            "{} {:<width$}  max rel {:.2e} (tol {:.0e}, {} components, {} refined, worst {:?})\n",
            if c.passed() { "ok  " } else { "FAIL" },
            c.name,
            c.max_rel_error,
            c.tolerance,
            c.components,
            c.refined,
            c.worst
        ));
    }
    out
}
