//! Forward pass of the network on a [`GradTape`].
//!
//! Feature maps live in `[1, C, U·V, H, W]`. Each LGFM branch folds the
//! angular axis into one spatial axis, runs DGCE and the attention stage as
//! batched 2D convolutions, unfolds and adds its input back.

use indexmap::IndexMap;
use lgfn_tensor::{Activation, ConvSpec, GradTape, PoolKind, Real, ResizeMode, Tensor, Var};

use crate::config::{AttentionMode, Direction, LgfnConfig};
use crate::error::{LgfnError, Result};
use crate::lightfield::LightField;
use crate::params::{branch_prefix, BoundParams, ParamStore};

/// Named intermediates of one forward pass. Collects nothing unless enabled.
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace<T> {
    enabled: bool,
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn enabled() -> Self {
        Self {
            enabled: true,
            entries: IndexMap::new(),
        }
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            entries: IndexMap::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    fn record(&mut self, scope: &str, symbol: &str, v: &Var<T>) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        let key = if scope.is_empty() {
            symbol.to_string()
        } else {
            format!("{scope}.{symbol}")
        };
        if self
            .entries
            .insert(key.clone(), v.value().clone())
            .is_some()
        {
            return Err(LgfnError::InvalidInput(format!(
                "trace symbol {key} recorded twice"
            )));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Tensor<T>> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn conv<T: Real>(
    tape: &mut GradTape<T>,
    p: &BoundParams<T>,
    name: &str,
    x: &Var<T>,
    spec: ConvSpec,
) -> Result<Var<T>> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    Ok(tape.conv2d(x, w, Some(b), spec)?)
}

fn depthwise(k: usize, channels: usize) -> ConvSpec {
    ConvSpec::same(k, k).with_groups(channels)
}

fn expect_channels<T: Real>(x: &Var<T>, c: usize, what: &str) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != c {
        return Err(LgfnError::Tensor(lgfn_tensor::TensorError::Shape(format!(
            "{what} expects [N, {c}, H, W], got {s:?}"
        ))));
    }
    Ok(())
}

/// Double-gated convolution extraction on `x: [N, C, H, W]`.
pub fn dgce_forward<T: Real>(
    tape: &mut GradTape<T>,
    p: &BoundParams<T>,
    prefix: &str,
    cfg: &LgfnConfig,
    x: &Var<T>,
    trace: &mut ForwardTrace<T>,
) -> Result<Var<T>> {
    expect_channels(x, cfg.channels, "DGCE")?;
    let h = cfg.dgce_half();
    let pre = format!("{prefix}.dgce");
    let e = conv(tape, p, &format!("{pre}.expand"), x, ConvSpec::pointwise())?;
    let f21 = tape.narrow(&e, 1, 0, h)?;
    let f22 = tape.narrow(&e, 1, h, h)?;
    let ga = conv(tape, p, &format!("{pre}.dw_a"), &f21, depthwise(3, h))?;
    let ga = tape.activation(&ga, Activation::Gelu)?;
    let gb = conv(tape, p, &format!("{pre}.dw_b"), &f22, depthwise(3, h))?;
    let gb = tape.activation(&gb, Activation::Gelu)?;
    let t1 = tape.mul(&ga, &f22)?;
    let t2 = tape.mul(&gb, &f21)?;
    let f23 = tape.add(&t1, &t2)?;
    let fused = conv(tape, p, &format!("{pre}.fuse"), &f23, ConvSpec::pointwise())?;
    let skip = tape.add(x, &fused)?;
    let f24 = conv(tape, p, &format!("{pre}.out"), &skip, ConvSpec::pointwise())?;
    trace.record(prefix, "F_21", &f21)?;
    trace.record(prefix, "F_22", &f22)?;
    trace.record(prefix, "F_23", &f23)?;
    trace.record(prefix, "F_24", &f24)?;
    Ok(f24)
}

/// Efficient spatial attention on `x: [N, C, H, W]`; `H` and `W` must be
/// multiples of the ESAM downscale.
pub fn esam_forward<T: Real>(
    tape: &mut GradTape<T>,
    p: &BoundParams<T>,
    prefix: &str,
    cfg: &LgfnConfig,
    x: &Var<T>,
    trace: &mut ForwardTrace<T>,
) -> Result<Var<T>> {
    expect_channels(x, cfg.channels, "ESAM")?;
    let (hh, ww) = (x.shape()[2], x.shape()[3]);
    let d = cfg.esam_downscale;
    if hh % d != 0 || ww % d != 0 {
        return Err(LgfnError::Tensor(lgfn_tensor::TensorError::Shape(format!(
            "ESAM input {hh}x{ww} is not divisible by {d}"
        ))));
    }
    let r = cfg.esam_channels();
    let lka = cfg.lka;
    let pre = format!("{prefix}.esam");
    let f25 = conv(tape, p, &format!("{pre}.reduce"), x, ConvSpec::pointwise())?;
    let down = conv(
        tape,
        p,
        &format!("{pre}.down"),
        &f25,
        depthwise(3, r).with_stride(2),
    )?;
    let f26 = tape.pool2d(&down, PoolKind::Max, 2, 2)?;
    let a = conv(
        tape,
        p,
        &format!("{pre}.lka_dw"),
        &f26,
        depthwise(lka.dw_kernel, r),
    )?;
    let a = conv(
        tape,
        p,
        &format!("{pre}.lka_dilated"),
        &a,
        depthwise(lka.dilated_kernel, r).with_dilation(lka.dilation),
    )?;
    let a = conv(tape, p, &format!("{pre}.lka_pw"), &a, ConvSpec::pointwise())?;
    let f27 = tape.resize(&a, hh, ww, ResizeMode::Bilinear)?;
    let sum = tape.add(&f25, &f27)?;
    let f28 = conv(
        tape,
        p,
        &format!("{pre}.expand"),
        &sum,
        ConvSpec::pointwise(),
    )?;
    let gate = tape.activation(&f28, Activation::Sigmoid)?;
    let f29 = tape.mul(&gate, x)?;
    for (s, v) in [
        ("F_25", &f25),
        ("F_26", &f26),
        ("F_27", &f27),
        ("F_28", &f28),
        ("F_29", &f29),
    ] {
        trace.record(prefix, s, v)?;
    }
    Ok(f29)
}

/// Efficient channel attention on `x: [N, C, H, W]`.
pub fn ecam_forward<T: Real>(
    tape: &mut GradTape<T>,
    p: &BoundParams<T>,
    prefix: &str,
    cfg: &LgfnConfig,
    x: &Var<T>,
    trace: &mut ForwardTrace<T>,
) -> Result<Var<T>> {
    let c = cfg.channels;
    expect_channels(x, c, "ECAM")?;
    if c < 3 {
        return Err(LgfnError::Config(format!(
            "ECAM needs at least 3 channels, got {c}"
        )));
    }
    let n = x.shape()[0];
    // the k=3 channel convolution runs as a 1×3 conv over [N, 1, 1, C]
    let spec = ConvSpec::same(1, 3);
    let pre = format!("{prefix}.ecam");
    let mut gates = Vec::with_capacity(2);
    for (kind, name) in [(PoolKind::Max, "max_conv"), (PoolKind::Avg, "avg_conv")] {
        let pooled = tape.adaptive_pool2d(x, kind, 1, 1)?;
        let row = tape.reshape(&pooled, &[n, 1, 1, c])?;
        gates.push(conv(tape, p, &format!("{pre}.{name}"), &row, spec)?);
    }
    let (f30, f31) = (gates[0].clone(), gates[1].clone());
    let s30 = tape.activation(&f30, Activation::Sigmoid)?;
    let s31 = tape.activation(&f31, Activation::Sigmoid)?;
    let gate = tape.add(&s30, &s31)?;
    let gate = tape.reshape(&gate, &[n, c, 1, 1])?;
    let f32_ = tape.mul_broadcast(x, &gate)?;
    trace.record(prefix, "F_30", &f30)?;
    trace.record(prefix, "F_31", &f31)?;
    trace.record(prefix, "F_32", &f32_)?;
    Ok(f32_)
}

const H_AXES: [usize; 5] = [1, 0, 3, 2, 4];
const V_AXES: [usize; 5] = [2, 0, 1, 3, 4];
const V_INVERSE: [usize; 5] = [1, 2, 0, 3, 4];

/// `[1, C, U·V, H, W]` → `[U, C, H, V·W]` (horizontal) or `[V, C, U·H, W]`
/// (vertical).
pub fn fold<T: Real>(
    tape: &mut GradTape<T>,
    x: &Var<T>,
    u: usize,
    v: usize,
    dir: Direction,
) -> Result<Var<T>> {
    let s = x.shape();
    if s.len() != 5 || s[0] != 1 || s[2] != u * v {
        return Err(LgfnError::InvalidInput(format!(
            "feature map {s:?} is not [1, C, {u}·{v}, H, W]"
        )));
    }
    let (c, h, w) = (s[1], s[3], s[4]);
    let x = tape.reshape(x, &[c, u, v, h, w])?;
    Ok(match dir {
        Direction::Horizontal => {
            let t = tape.permute(&x, &H_AXES)?;
            tape.reshape(&t, &[u, c, h, v * w])?
        }
        Direction::Vertical => {
            let t = tape.permute(&x, &V_AXES)?;
            tape.reshape(&t, &[v, c, u * h, w])?
        }
    })
}

/// Inverse of [`fold`].
pub fn unfold<T: Real>(
    tape: &mut GradTape<T>,
    x: &Var<T>,
    u: usize,
    v: usize,
    dir: Direction,
) -> Result<Var<T>> {
    let c = x.shape()[1];
    Ok(match dir {
        Direction::Horizontal => {
            let (h, w) = (x.shape()[2], x.shape()[3] / v);
            let t = tape.reshape(x, &[u, c, h, v, w])?;
            let t = tape.permute(&t, &H_AXES)?;
            tape.reshape(&t, &[1, c, u * v, h, w])?
        }
        Direction::Vertical => {
            let (h, w) = (x.shape()[2] / u, x.shape()[3]);
            let t = tape.reshape(x, &[v, c, u, h, w])?;
            let t = tape.permute(&t, &V_INVERSE)?;
            tape.reshape(&t, &[1, c, u * v, h, w])?
        }
    })
}

/// DGCE followed by the attention stage on a folded `[N, C, H, W]` map.
fn branch_body<T: Real>(
    tape: &mut GradTape<T>,
    p: &BoundParams<T>,
    prefix: &str,
    cfg: &LgfnConfig,
    x: &Var<T>,
    trace: &mut ForwardTrace<T>,
) -> Result<Var<T>> {
    let f24 = if cfg.enable_dgce {
        dgce_forward(tape, p, prefix, cfg, x, trace)?
    } else {
        x.clone()
    };
    Ok(
        match (cfg.enable_esam, cfg.enable_ecam, cfg.attention_mode) {
            (false, false, _) => f24,
            (true, false, _) => esam_forward(tape, p, prefix, cfg, &f24, trace)?,
            (false, true, _) => ecam_forward(tape, p, prefix, cfg, &f24, trace)?,
            (true, true, AttentionMode::Cascade) => {
                let s = esam_forward(tape, p, prefix, cfg, &f24, trace)?;
                ecam_forward(tape, p, prefix, cfg, &s, trace)?
            }
            (true, true, AttentionMode::Parallel) => {
                let s = esam_forward(tape, p, prefix, cfg, &f24, trace)?;
                let c = ecam_forward(tape, p, prefix, cfg, &f24, trace)?;
                let both = tape.add(&s, &c)?;
                tape.scale(&both, 0.5)?
            }
        },
    )
}

/// One LGFM branch on `[1, C, U·V, H, W]` with its local residual.
#[allow(clippy::too_many_arguments)]
pub fn lgfm_forward<T: Real>(
    tape: &mut GradTape<T>,
    p: &BoundParams<T>,
    prefix: &str,
    cfg: &LgfnConfig,
    x: &Var<T>,
    (u, v): (usize, usize),
    dir: Direction,
    trace: &mut ForwardTrace<T>,
) -> Result<Var<T>> {
    if !(cfg.enable_dgce || cfg.enable_esam || cfg.enable_ecam) {
        return Ok(x.clone());
    }
    let folded = fold(tape, x, u, v, dir)?;
    let body = branch_body(tape, p, prefix, cfg, &folded, trace)?;
    let back = unfold(tape, &body, u, v, dir)?;
    Ok(tape.add(&back, x)?)
}

/// Full network on a `[U, V, 1, H, W]` low-resolution field held in a tape
/// variable. Returns `[U, V, 1, sH, sW]`.
pub fn lgfn_forward_var<T: Real>(
    tape: &mut GradTape<T>,
    p: &BoundParams<T>,
    cfg: &LgfnConfig,
    lr: &Var<T>,
    trace: &mut ForwardTrace<T>,
) -> Result<Var<T>> {
    let s = lr.shape();
    if s.len() != 5 || s[2] != 1 {
        return Err(LgfnError::InvalidInput(format!(
            "network input must be a [U, V, 1, H, W] luma field, got {s:?}"
        )));
    }
    let (u, v, h, w) = (s[0], s[1], s[3], s[4]);
    let (c, sc) = (cfg.channels, cfg.scale);
    let uv = u * v;

    let f0 = tape.reshape(lr, &[1, 1, uv, h, w])?;
    let sw = p.get("shallow.weight")?;
    let sb = p.get("shallow.bias")?;
    let f_init = tape.conv3d_1xkxk(&f0, sw, Some(sb), ConvSpec::same(3, 3))?;
    trace.record("", "F_init", &f_init)?;

    let mut x = f_init.clone();
    for (i, j, dir) in cfg.branches() {
        let prefix = branch_prefix(i, j);
        x = lgfm_forward(tape, p, &prefix, cfg, &x, (u, v), dir, trace)?;
    }
    let f1 = tape.add(&x, &f_init)?;
    trace.record("", "F_1", &f1)?;

    let fw = p.get("fusion.weight")?;
    let fb = p.get("fusion.bias")?;
    let f_fuse = tape.conv3d_1xkxk(&f1, fw, Some(fb), ConvSpec::same(3, 3))?;
    trace.record("", "F_fuse", &f_fuse)?;

    let t = tape.permute(&f_fuse, &[0, 2, 1, 3, 4])?;
    let t = tape.reshape(&t, &[uv, c, h, w])?;
    let t = conv(tape, p, "upsampler.expand", &t, ConvSpec::pointwise())?;
    let t = tape.pixel_shuffle(&t, sc)?;
    let t = tape.activation(&t, Activation::LeakyRelu(lgfn_tensor::LEAKY_SLOPE))?;
    let t = conv(tape, p, "upsampler.out", &t, ConvSpec::same(3, 3))?;
    let lr_views = tape.reshape(lr, &[uv, 1, h, w])?;
    let base = tape.resize(&lr_views, sc * h, sc * w, ResizeMode::Bilinear)?;
    let hr = tape.add(&t, &base)?;
    let hr = tape.reshape(&hr, &[u, v, 1, sc * h, sc * w])?;
    trace.record("", "F_HR", &hr)?;
    Ok(hr)
}

/// Inference on a luma light field. Nothing is retained for backward.
pub fn lgfn_forward<T: Real>(
    lr: &LightField<T>,
    params: &ParamStore<T>,
    cfg: &LgfnConfig,
    record_trace: bool,
) -> Result<(LightField<T>, ForwardTrace<T>)> {
    cfg.validate()?;
    let mut tape = GradTape::inference();
    let p = params.bind(&mut tape);
    let x = tape.constant(lr.tensor().clone());
    let mut trace = if record_trace {
        ForwardTrace::enabled()
    } else {
        ForwardTrace::disabled()
    };
    let y = lgfn_forward_var(&mut tape, &p, cfg, &x, &mut trace)?;
    Ok((LightField::new(y.value().clone())?, trace))
}
