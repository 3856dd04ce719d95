use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lgfn::cost::{format_ablation, format_report as format_cost};
use lgfn::gradsuite::{format_suite, gradient_suite};
use lgfn::io::{encode_pnm, export_views, import_views, lf_load, lf_store, view_to_pnm};
use lgfn::lightfield::{extract_epi, extract_patches, rgb_to_y, EpiOrientation};
use lgfn::metrics::{format_bicubic_comparison, format_report};
use lgfn::params::checkpoint_load_for;
use lgfn::*;
use lgfn_tensor::ResizeMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Lgfn(#[from] LgfnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Config {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Usage(String),
    #[error("gradient suite failed")]
    GradcheckFailed,
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Training data: HR scenes (`.lf4` files or view directories) cut into
/// aligned patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DataConfig {
    scenes: Vec<PathBuf>,
    lr_patch: usize,
    stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scenes: Vec::new(),
            lr_patch: 32,
            stride: 32,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CliConfig {
    model: LgfnConfig,
    train: TrainConfig,
    data: DataConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Parallel,
    Cascade,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrientArg {
    H,
    V,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON config (`model`, `train`, `data` sections); unknown keys are rejected
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for initialization, shuffling and augmentation
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["2", "4"])]
    scale: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    no_dgce: bool,
    #[arg(long)]
    no_esam: bool,
    #[arg(long)]
    no_ecam: bool,
}

impl ConfigArgs {
    /// File values first, then flag overrides.
    fn load(&self) -> CliResult<CliConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })?;
                let mut cfg: CliConfig =
                    serde_json::from_str(&text).map_err(|source| CliError::Config {
                        path: path.clone(),
                        source,
                    })?;
                let base = path.parent().unwrap_or(Path::new(""));
                for s in &mut cfg.data.scenes {
                    if s.is_relative() {
                        *s = base.join(&*s);
                    }
                }
                cfg
            }
            None => CliConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(scale) = &self.scale {
            cfg.model.scale = scale.parse().expect("restricted by clap");
        }
        if let Some(mode) = self.mode {
            cfg.model.attention_mode = match mode {
                ModeArg::Parallel => AttentionMode::Parallel,
                ModeArg::Cascade => AttentionMode::Cascade,
            };
        }
        cfg.model.enable_dgce &= !self.no_dgce;
        cfg.model.enable_esam &= !self.no_esam;
        cfg.model.enable_ecam &= !self.no_ecam;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lgfn",
    version,
    about = "Light-field super-resolution with LGFN"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parameter and FLOP counts for a configuration
    Analyze {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write the report as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of every kernel and the tiny model
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on the configured scenes; writes checkpoints and a JSONL log
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for checkpoints and `train.jsonl`
        #[arg(long)]
        out: PathBuf,
        /// Resume from these weights
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Super-resolve a light field (`.lf4` or view directory)
    Sr {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        /// Output directory: `sr.lf4` plus one PGM per view under `views/`
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR / SSIM of SR fields against HR fields
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Ground-truth scenes
        #[arg(long, required = true, num_args = 1..)]
        hr: Vec<PathBuf>,
        /// Super-resolved scenes, in the same order as `--hr`
        #[arg(long, num_args = 1.., conflicts_with = "checkpoint")]
        sr: Vec<PathBuf>,
        /// Super-resolve the bicubic-degraded HR scenes with this model
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the report as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write epipolar-plane images as PGM
    Epi {
        #[command(flatten)]
        cfg: ConfigArgs,
        input: PathBuf,
        #[arg(long, value_enum)]
        orientation: OrientArg,
        /// Fixed coordinates `a,b`: `(u,h)` for h, `(v,w)` for v; repeatable
        #[arg(long = "at", required = true, value_parser = parse_pair)]
        at: Vec<(usize, usize)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and FLOP table over the six module variants
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let n = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((n(a)?, n(b)?))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.into(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(LgfnError::from)?;
    write(path, text + "\n")
}

/// Loads a `.lf4` file or a directory of `view_{u}_{v}` images as luma,
/// center-cropped to `angular × angular` views.
fn load_luma(path: &Path, angular: usize) -> CliResult<LightField<f32>> {
    let lf = if path.is_dir() {
        import_views(path, angular, angular)?
    } else {
        lf_load(path)?
    };
    let lf = if lf.dims().c == 3 { rgb_to_y(&lf)? } else { lf };
    let d = lf.dims();
    if d.c != 1 {
        return Err(CliError::Input(format!(
            "{}: expected 1 or 3 channels, got {}",
            path.display(),
            d.c
        )));
    }
    if d.u < angular || d.v < angular {
        return Err(CliError::Input(format!(
            "{}: {}x{} views, need at least {angular}x{angular}",
            path.display(),
            d.u,
            d.v
        )));
    }
    let t = lf
        .tensor()
        .narrow(0, (d.u - angular) / 2, angular)
        .and_then(|t| t.narrow(1, (d.v - angular) / 2, angular))
        .map_err(LgfnError::from)?;
    Ok(LightField::new(t)?)
}

/// Crops the spatial extent down to a multiple of `s`.
fn mod_crop(lf: LightField<f32>, s: usize) -> CliResult<LightField<f32>> {
    let d = lf.dims();
    if d.h < s || d.w < s {
        return Err(CliError::Input(format!(
            "field {}x{} smaller than scale {s}",
            d.h, d.w
        )));
    }
    let t = lf
        .tensor()
        .narrow(3, 0, d.h - d.h % s)
        .and_then(|t| t.narrow(4, 0, d.w - d.w % s))
        .map_err(LgfnError::from)?;
    Ok(LightField::new(t)?)
}

fn scene_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn analyze_cmd(cfg: &ConfigArgs, out: Option<&Path>) -> CliResult<()> {
    let c = cfg.load()?;
    let report = analyze(&c.model)?;
    print!("{}", format_cost(&report));
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn gradcheck_cmd(seed: u64) -> CliResult<()> {
    let cases = gradient_suite(seed)?;
    print!("{}", format_suite(&cases));
    if cases.iter().all(|c| c.passed()) {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed)
    }
}

fn train_cmd(cfg: &ConfigArgs, out: &Path, checkpoint: Option<&Path>) -> CliResult<()> {
    let c = cfg.load()?;
    if c.data.scenes.is_empty() {
        return Err(CliError::Input(
            "config lists no training scenes (data.scenes)".into(),
        ));
    }
    let s = c.model.scale;
    let mut samples = Vec::new();
    for path in &c.data.scenes {
        let hr = mod_crop(load_luma(path, c.model.angular)?, s)?;
        let pair = SamplePair::from_hr(hr, s)?;
        samples.extend(extract_patches(&pair, c.data.lr_patch, c.data.stride)?);
    }
    let init = checkpoint
        .map(|p| checkpoint_load_for(p, &c.model))
        .transpose()?;
    let mut tcfg = c.train.clone();
    tcfg.checkpoint_dir = Some(out.to_path_buf());
    tcfg.log_path = Some(out.join("train.jsonl"));
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.into(),
        source,
    })?;
    write_json(&out.join("config.json"), &c)?;
    println!(
        "{} patches from {} scene(s)",
        samples.len(),
        c.data.scenes.len()
    );
    let outcome = train_loop(&samples, &c.model, &tcfg, init)?;
    for e in &outcome.epochs {
        println!(
            "epoch {:>4}  lr {:.2e}  loss {:.6}",
            e.epoch, e.lr, e.mean_total
        );
    }
    for p in &outcome.checkpoints {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn super_resolve(
    lr: &LightField<f32>,
    params: &ParamStore<f32>,
    cfg: &LgfnConfig,
) -> CliResult<LightField<f32>> {
    Ok(lgfn_forward(lr, params, cfg, false)?.0)
}

fn sr_cmd(cfg: &ConfigArgs, checkpoint: &Path, input: &Path, out: &Path) -> CliResult<()> {
    let c = cfg.load()?;
    let params = checkpoint_load_for(checkpoint, &c.model)?;
    let lr = load_luma(input, c.model.angular)?;
    let sr = super_resolve(&lr, &params, &c.model)?;
    let path = out.join("sr.lf4");
    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.into(),
        source,
    })?;
    lf_store(&sr, &path)?;
    export_views(&sr, out.join("views"))?;
    let d = sr.dims();
    println!(
        "wrote {} ({}x{} views of {}x{})",
        path.display(),
        d.u,
        d.v,
        d.h,
        d.w
    );
    Ok(())
}

fn eval_cmd(
    cfg: &ConfigArgs,
    hr: &[PathBuf],
    sr: &[PathBuf],
    checkpoint: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let c = cfg.load()?;
    if !sr.is_empty() && sr.len() != hr.len() {
        return Err(CliError::Usage(format!(
            "{} --sr paths for {} --hr paths",
            sr.len(),
            hr.len()
        )));
    }
    let s = c.model.scale;
    let params = checkpoint
        .map(|p| checkpoint_load_for(p, &c.model))
        .transpose()?;
    let ids: Vec<String> = hr.iter().map(|p| scene_id(p)).collect();
    let mut hrs = Vec::new();
    let mut bicubic = Vec::new();
    let mut outputs = Vec::new();
    for (i, path) in hr.iter().enumerate() {
        let h = mod_crop(load_luma(path, c.model.angular)?, s)?;
        let pair = SamplePair::from_hr(h, s)?;
        bicubic.push(baseline_sr(&pair.lr, s, ResizeMode::Bicubic)?);
        if let Some(p) = &params {
            outputs.push(super_resolve(&pair.lr, p, &c.model)?);
        } else if let Some(sr_path) = sr.get(i) {
            outputs.push(load_luma(sr_path, c.model.angular)?);
        }
        hrs.push(pair.hr);
    }
    let baseline = evaluate(&ids, &bicubic, &hrs)?;
    let report = if outputs.is_empty() {
        print!("{}", format_report(&baseline));
        baseline.clone()
    } else {
        let r = evaluate(&ids, &outputs, &hrs)?;
        print!("{}", format_report(&r));
        r
    };
    print!("{}", format_bicubic_comparison(&baseline));
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn epi_cmd(
    cfg: &ConfigArgs,
    input: &Path,
    orientation: OrientArg,
    at: &[(usize, usize)],
    out: &Path,
) -> CliResult<()> {
    let c = cfg.load()?;
    let lf = load_luma(input, c.model.angular)?;
    let (orient, tag) = match orientation {
        OrientArg::H => (EpiOrientation::Horizontal, "h"),
        OrientArg::V => (EpiOrientation::Vertical, "v"),
    };
    for &(a, b) in at {
        let epi = extract_epi(&lf, orient, (a, b))?;
        let (rows, cols) = (epi.pixels.shape()[0], epi.pixels.shape()[1]);
        let img = view_to_pnm(
            &epi.pixels
                .reshape(&[1, rows, cols])
                .map_err(LgfnError::from)?,
        )?;
        let path = out.join(format!("epi_{tag}_{a}_{b}.pgm"));
        write(&path, encode_pnm(&img))?;
        println!("wrote {} ({rows}x{cols})", path.display());
    }
    Ok(())
}

fn ablate_cmd(cfg: &ConfigArgs, out: Option<&Path>) -> CliResult<()> {
    let c = cfg.load()?;
    let rows = ablation_table(&ablation_variants(&c.model))?;
    print!("{}", format_ablation(&rows));
    if let Some(path) = out {
        write_json(path, &rows)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Analyze { cfg, out } => analyze_cmd(cfg, out.as_deref()),
        Command::Gradcheck { seed } => gradcheck_cmd(*seed),
        Command::Train {
            cfg,
            out,
            checkpoint,
        } => train_cmd(cfg, out, checkpoint.as_deref()),
        Command::Sr {
            cfg,
            checkpoint,
            input,
            out,
        } => sr_cmd(cfg, checkpoint, input, out),
        Command::Eval {
            cfg,
            hr,
            sr,
            checkpoint,
            out,
        } => eval_cmd(cfg, hr, sr, checkpoint.as_deref(), out.as_deref()),
        Command::Epi {
            cfg,
            input,
            orientation,
            at,
            out,
        } => epi_cmd(cfg, input, *orientation, at, out),
        Command::Ablate { cfg, out } => ablate_cmd(cfg, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, CliError::Usage(_)) {
                2
            } else {
                1
            })
        }
    }
}
