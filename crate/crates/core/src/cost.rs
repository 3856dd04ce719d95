//! Closed-form parameter and operation counts.
//!
//! Operation counts follow the convention of the tensor crate's counter:
//! a convolution costs `output elements × taps × input channels per group`
//! MACs, every pointwise/pooling/resampling op one elementwise op per output
//! element, and `FLOPs = 2·MACs`. Elementwise ops are reported beside the
//! FLOPs, not inside them.

use serde::Serialize;

use crate::config::{AblationVariant, AttentionMode, Direction, LgfnConfig};
use crate::error::{LgfnError, Result};
use crate::params::ParamGroup;

/// Light-field extents the operation count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InputSpec {
    pub u: usize,
    pub v: usize,
    pub h: usize,
    pub w: usize,
    pub scale: usize,
}

impl InputSpec {
    /// 5×5 views of 32×32 at the config's scale.
    pub fn reference(cfg: &LgfnConfig) -> Self {
        Self {
            u: cfg.angular,
            v: cfg.angular,
            h: 32,
            w: 32,
            scale: cfg.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GroupParams {
    pub group: &'static str,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub params_total: usize,
    pub params_by_group: Vec<GroupParams>,
    pub macs_total: u64,
    /// Activations, gates, sums, pooling and resampling outputs.
    pub elementwise_total: u64,
    /// `2·macs_total`.
    pub flops_total: u64,
    pub input_spec: InputSpec,
    pub convention: &'static str,
}

impl CostReport {
    pub fn group(&self, g: ParamGroup) -> usize {
        self.params_by_group
            .iter()
            .find(|p| p.group == g.name())
            .map_or(0, |p| p.params)
    }
}

pub const FLOPS_CONVENTION: &str = "1 MAC = 2 FLOPs; elementwise ops counted separately";

fn conv_params(cin_g: usize, cout: usize, taps: usize) -> usize {
    cout * cin_g * taps + cout
}

pub fn dgce_params(cfg: &LgfnConfig) -> usize {
    let (c, h) = (cfg.channels, cfg.dgce_half());
    conv_params(c, 2 * h, 1)
        + 2 * conv_params(1, h, 9)
        + conv_params(h, c, 1)
        + conv_params(c, c, 1)
}

pub fn esam_params(cfg: &LgfnConfig) -> usize {
    let (c, r, l) = (cfg.channels, cfg.esam_channels(), cfg.lka);
    conv_params(c, r, 1)
        + conv_params(1, r, 9)
        + conv_params(1, r, l.dw_kernel * l.dw_kernel)
        + conv_params(1, r, l.dilated_kernel * l.dilated_kernel)
        + conv_params(r, r, 1)
        + conv_params(r, c, 1)
}

pub fn ecam_params() -> usize {
    2 * conv_params(1, 1, 3)
}

/// Learnable scalars per group, in [`ParamGroup::ALL`] order.
pub fn count_params(cfg: &LgfnConfig) -> Result<Vec<GroupParams>> {
    cfg.validate()?;
    let c = cfg.channels;
    let s2 = cfg.scale * cfg.scale;
    let n = cfg.branches().len();
    let on = |flag: bool, v: usize| if flag { n * v } else { 0 };
    Ok(ParamGroup::ALL
        .iter()
        .map(|&g| GroupParams {
            group: g.name(),
            params: match g {
                ParamGroup::Shallow => conv_params(1, c, 9),
                ParamGroup::Dgce => on(cfg.enable_dgce, dgce_params(cfg)),
                ParamGroup::Esam => on(cfg.enable_esam, esam_params(cfg)),
                ParamGroup::Ecam => on(cfg.enable_ecam, ecam_params()),
                ParamGroup::Fusion => conv_params(c, c, 9),
                ParamGroup::Upsampler => conv_params(c, c * s2, 1) + conv_params(c, 1, 9),
            },
        })
        .collect())
}

#[derive(Default)]
struct Tally {
    macs: u64,
    elementwise: u64,
}

impl Tally {
    fn conv(&mut self, out_elems: usize, taps: usize, cin_g: usize) {
        self.macs += (out_elems * taps * cin_g) as u64;
    }

    fn ew(&mut self, elems: usize) {
        self.elementwise += elems as u64;
    }
}

/// Cost of one DGCE on `n` maps of `c × p` pixels.
fn dgce_ops(t: &mut Tally, cfg: &LgfnConfig, n: usize, p: usize) {
    let (c, h) = (cfg.channels, cfg.dgce_half());
    t.conv(n * 2 * h * p, 1, c);
    t.conv(2 * n * h * p, 9, 1);
    // two GELUs, two gating products, their sum
    t.ew(5 * n * h * p);
    t.conv(n * c * p, 1, h);
    t.ew(n * c * p);
    t.conv(n * c * p, 1, c);
}

fn esam_ops(t: &mut Tally, cfg: &LgfnConfig, n: usize, hh: usize, ww: usize) {
    let (c, r, l) = (cfg.channels, cfg.esam_channels(), cfg.lka);
    let p = hh * ww;
    let p2 = (hh / 2) * (ww / 2);
    let p4 = (hh / 4) * (ww / 4);
    t.conv(n * r * p, 1, c);
    t.conv(n * r * p2, 9, 1);
    t.ew(n * r * p4);
    t.conv(n * r * p4, l.dw_kernel * l.dw_kernel, 1);
    t.conv(n * r * p4, l.dilated_kernel * l.dilated_kernel, 1);
    t.conv(n * r * p4, 1, r);
    // bilinear restore, skip sum
    t.ew(2 * n * r * p);
    t.conv(n * c * p, 1, r);
    // sigmoid, gating
    t.ew(2 * n * c * p);
}

fn ecam_ops(t: &mut Tally, cfg: &LgfnConfig, n: usize, p: usize) {
    let c = cfg.channels;
    // two global pools, two sigmoids, gate sum
    t.ew(5 * n * c);
    t.conv(2 * n * c, 3, 1);
    t.ew(n * c * p);
}

/// Parameters plus the MAC / elementwise totals of one forward pass over
/// `input`.
pub fn count_flops(cfg: &LgfnConfig, input: InputSpec) -> Result<CostReport> {
    let groups = count_params(cfg)?;
    if input.scale != cfg.scale {
        return Err(LgfnError::Config(format!(
            "input scale {} differs from config scale {}",
            input.scale, cfg.scale
        )));
    }
    let InputSpec { u, v, h, w, scale } = input;
    let (c, uv, hw) = (cfg.channels, u * v, h * w);
    let s2 = scale * scale;
    let mut t = Tally::default();

    t.conv(c * uv * hw, 9, 1);
    let any = cfg.enable_dgce || cfg.enable_esam || cfg.enable_ecam;
    for (_, _, dir) in cfg.branches() {
        if !any {
            continue;
        }
        let (n, hh, ww) = match dir {
            Direction::Horizontal => (u, h, v * w),
            Direction::Vertical => (v, u * h, w),
        };
        if cfg.enable_esam && (hh % cfg.esam_downscale != 0 || ww % cfg.esam_downscale != 0) {
            return Err(LgfnError::Config(format!(
                "folded extent {hh}x{ww} is not divisible by {}",
                cfg.esam_downscale
            )));
        }
        let p = hh * ww;
        if cfg.enable_dgce {
            dgce_ops(&mut t, cfg, n, p);
        }
        if cfg.enable_esam {
            esam_ops(&mut t, cfg, n, hh, ww);
        }
        if cfg.enable_ecam {
            ecam_ops(&mut t, cfg, n, p);
        }
        if cfg.enable_esam && cfg.enable_ecam && cfg.attention_mode == AttentionMode::Parallel {
            t.ew(2 * n * c * p);
        }
        // local residual
        t.ew(c * uv * hw);
    }
    // global residual
    t.ew(c * uv * hw);
    t.conv(c * uv * hw, 9, c);
    t.conv(uv * c * s2 * hw, 1, c);
    t.ew(uv * c * s2 * hw);
    t.conv(uv * s2 * hw, 9, c);
    // bilinear base, final sum
    t.ew(2 * uv * s2 * hw);

    Ok(CostReport {
        params_total: groups.iter().map(|g| g.params).sum(),
        params_by_group: groups,
        macs_total: t.macs,
        elementwise_total: t.elementwise,
        flops_total: 2 * t.macs,
        input_spec: input,
        convention: FLOPS_CONVENTION,
    })
}

pub fn analyze(cfg: &LgfnConfig) -> Result<CostReport> {
    count_flops(cfg, InputSpec::reference(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: &'static str,
    pub params: usize,
    /// Parameters removed relative to the first (full) row.
    pub delta: i64,
    pub flops: u64,
}

pub fn ablation_table(variants: &[AblationVariant]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for var in variants {
        let r = analyze(&var.config)?;
        rows.push(AblationRow {
            label: var.label,
            params: r.params_total,
            delta: 0,
            flops: r.flops_total,
        });
    }
    if let Some(full) = rows.first().map(|r| r.params as i64) {
        for r in &mut rows {
            r.delta = r.params as i64 - full;
        }
    }
    Ok(rows)
}

/// `label | params | Δ | FLOPs` as aligned text.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<16} {:>10} {:>10} {:>10}\n",
        "variant", "params", "delta", "GFLOPs"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>9.1}k {:>9.1}k {:>10.2}\n",
            r.label,
            r.params as f64 / 1e3,
            r.delta as f64 / 1e3,
            r.flops as f64 / 1e9
        ));
    }
    out
}

pub fn format_report(r: &CostReport) -> String {
    let mut out = String::new();
    let i = r.input_spec;
    out.push_str(&format!(
        "input: {}x{} views of {}x{}, scale x{}\n",
        i.u, i.v, i.h, i.w, i.scale
    ));
    for g in &r.params_by_group {
        out.push_str(&format!("  {:<10} {:>9}\n", g.group, g.params));
    }
    out.push_str(&format!(
        "params: {} ({:.1}k)\nMACs: {}\nelementwise: {}\nFLOPs: {} ({:.2}G; {})\n",
        r.params_total,
        r.params_total as f64 / 1e3,
        r.macs_total,
        r.elementwise_total,
        r.flops_total,
        r.flops_total as f64 / 1e9,
        r.convention
    ));
    out
}
