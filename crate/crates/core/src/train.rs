//! Losses, Adam, the step schedule and the training loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use lgfn_tensor::{GradTape, Real, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::LgfnConfig;
use crate::error::{io_err, LgfnError, Result};
use crate::lightfield::{augment, AugmentCode, SamplePair};
use crate::model::{lgfn_forward_var, ForwardTrace};
use crate::params::{checkpoint_save, init_params, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Epochs between learning-rate halvings.
    pub halve_every: usize,
    pub epochs: usize,
    pub w_l1: f64,
    pub w_fft: f64,
    pub charbonnier_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Draw one of the eight flip/rotation variants per step.
    pub augment: bool,
    /// Shuffle the sample order every epoch.
    pub shuffle: bool,
    /// Write a checkpoint every this many epochs (0 disables periodic ones).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            halve_every: 15,
            epochs: 100,
            w_l1: 0.01,
            w_fft: 1.0,
            charbonnier_eps: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            augment: true,
            shuffle: true,
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LgfnError::Config(m.to_string()));
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad("lr0 must be positive");
        }
        if self.halve_every == 0 {
            return bad("halve_every must be at least 1");
        }
        if !(self.w_l1 >= 0.0 && self.w_fft >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.charbonnier_eps > 0.0) {
            return bad("charbonnier_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// `lr0 · 0.5^⌊epoch / halve_every⌋`.
pub fn lr_at(epoch: usize, tcfg: &TrainConfig) -> f64 {
    let halvings = (epoch / tcfg.halve_every).min(i32::MAX as usize) as i32;
    tcfg.lr0 * 0.5f64.powi(halvings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerms {
    pub l1: f64,
    pub fft_charbonnier: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.l1.is_finite() && self.fft_charbonnier.is_finite() && self.total.is_finite()
    }
}

/// Builds the weighted loss on the tape; returns `(total, l1, fft)`.
pub fn combined_loss_var<T: Real>(
    tape: &mut GradTape<T>,
    sr: &Var<T>,
    hr: &Var<T>,
    tcfg: &TrainConfig,
) -> Result<(Var<T>, Var<T>, Var<T>)> {
    let l1 = tape.l1_loss(sr, hr)?;
    let fft = tape.spectral_charbonnier(sr, hr, tcfg.charbonnier_eps)?;
    let a = tape.scale(&l1, tcfg.w_l1)?;
    let b = tape.scale(&fft, tcfg.w_fft)?;
    let total = tape.add(&a, &b)?;
    Ok((total, l1, fft))
}

fn eval_loss<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>, tcfg: &TrainConfig) -> Result<LossTerms> {
    let mut tape = GradTape::inference();
    let a = tape.constant(sr.clone());
    let b = tape.constant(hr.clone());
    let (t, l, f) = combined_loss_var(&mut tape, &a, &b, tcfg)?;
    Ok(LossTerms {
        l1: l.value().item().to_f64(),
        fft_charbonnier: f.value().item().to_f64(),
        total: t.value().item().to_f64(),
    })
}

/// Mean absolute difference.
pub fn l1_loss<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>) -> Result<f64> {
    Ok(eval_loss(sr, hr, &TrainConfig::default())?.l1)
}

/// Mean over DFT bins of `sqrt(|DFT(sr) − DFT(hr)|² + eps²)`, transforming
/// the trailing two axes of every leading slice.
pub fn fft_charbonnier_loss<T: Real>(sr: &Tensor<T>, hr: &Tensor<T>, eps: f64) -> Result<f64> {
    let tcfg = TrainConfig {
        charbonnier_eps: eps,
        ..TrainConfig::default()
    };
    Ok(eval_loss(sr, hr, &tcfg)?.fft_charbonnier)
}

/// `w_l1·l1 + w_fft·fft_charbonnier` with the weights of `tcfg`.
pub fn combined_loss<T: Real>(
    sr: &Tensor<T>,
    hr: &Tensor<T>,
    tcfg: &TrainConfig,
) -> Result<LossTerms> {
    eval_loss(sr, hr, tcfg)
}

/// Adam moments, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T = f32> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub t: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(params: &ParamStore<T>) -> Result<Self> {
        let mut m = ParamStore::new();
        for (name, p) in params.iter() {
            m.insert(name.clone(), Tensor::zeros(p.shape())?)?;
        }
        Ok(Self {
            v: m.clone(),
            m,
            t: 0,
        })
    }
}

/// One bias-corrected Adam update. Gradients are looked up by name, so the
/// result does not depend on how `grads` is ordered.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut OptimState<T>,
    lr: f64,
    tcfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(LgfnError::Tensor(lgfn_tensor::TensorError::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        ))));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (tcfg.beta1, tcfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        p.expect_same_shape(g, name)?;
        let m = state.m.get_mut(name)?;
        let v = state.v.get_mut(name)?;
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let gf = gi.to_f64();
            let mf = b1 * mi.to_f64() + (1.0 - b1) * gf;
            let vf = b2 * vi.to_f64() + (1.0 - b2) * gf * gf;
            *mi = T::from_f64(mf);
            *vi = T::from_f64(vf);
            let step = lr * (mf / c1) / ((vf / c2).sqrt() + tcfg.adam_eps);
            *pi = T::from_f64(pi.to_f64() - step);
        }
    }
    Ok(())
}

/// Forward, loss and parameter gradients for one sample.
pub fn loss_and_grads<T: Real>(
    params: &ParamStore<T>,
    cfg: &LgfnConfig,
    pair: &SamplePair<T>,
    tcfg: &TrainConfig,
) -> Result<(LossTerms, ParamStore<T>)> {
    let mut tape = GradTape::new();
    let bound = params.bind(&mut tape);
    let lr = tape.constant(pair.lr.tensor().clone());
    let hr = tape.constant(pair.hr.tensor().clone());
    let sr = lgfn_forward_var(&mut tape, &bound, cfg, &lr, &mut ForwardTrace::disabled())?;
    let (total, l1, fft) = combined_loss_var(&mut tape, &sr, &hr, tcfg)?;
    let terms = LossTerms {
        l1: l1.value().item().to_f64(),
        fft_charbonnier: fft.value().item().to_f64(),
        total: total.value().item().to_f64(),
    };
    let g = tape.backward(&total)?;
    let mut grads = ParamStore::new();
    for (name, var) in bound.iter() {
        grads.insert(name.clone(), g.get_or_zeros(var))?;
    }
    Ok((terms, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub l1: f64,
    pub fft_charbonnier: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_l1: f64,
    pub mean_fft_charbonnier: f64,
    pub mean_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T = f32> {
    pub params: ParamStore<T>,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Batch-1 Adam over `epochs × samples`, starting from `init` or from a
/// seeded initialization.
pub fn train_loop<T: Real>(
    samples: &[SamplePair<T>],
    cfg: &LgfnConfig,
    tcfg: &TrainConfig,
    init: Option<ParamStore<T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    tcfg.validate()?;
    if samples.is_empty() {
        return Err(LgfnError::InvalidInput("no training samples".into()));
    }
    for s in samples {
        if s.scale != cfg.scale || s.lr.dims().c != 1 {
            return Err(LgfnError::InvalidInput(format!(
                "training samples must be luma pairs at scale {}, got {} channels at scale {}",
                cfg.scale,
                s.lr.dims().c,
                s.scale
            )));
        }
    }
    let mut params = match init {
        Some(p) => {
            p.check_against(cfg)?;
            p
        }
        None => init_params(cfg, tcfg.seed)?,
    };
    let mut state = OptimState::new(&params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5eed_da7a);
    let mut log = match &tcfg.log_path {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => None,
    };
    if let Some(dir) = &tcfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut out = TrainOutcome {
        params: ParamStore::new(),
        steps: Vec::new(),
        epochs: Vec::new(),
        checkpoints: Vec::new(),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0;
    for epoch in 0..tcfg.epochs {
        let lr = lr_at(epoch, tcfg);
        if tcfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut s_l1, mut s_fft, mut s_tot) = (0.0, 0.0, 0.0);
        for &i in &order {
            step += 1;
            let sample = if tcfg.augment {
                let code = AugmentCode::new(rng.random_range(0..8u8))?;
                augment(&samples[i], code)?
            } else {
                samples[i].clone()
            };
            let (terms, grads) = loss_and_grads(&params, cfg, &sample, tcfg)?;
            if !terms.is_finite() {
                return Err(LgfnError::NonFiniteLoss {
                    step,
                    l1: terms.l1,
                    fft: terms.fft_charbonnier,
                    total: terms.total,
                });
            }
            adam_step(&mut params, &grads, &mut state, lr, tcfg)?;
            let entry = StepLog {
                step,
                epoch,
                lr,
                l1: terms.l1,
                fft_charbonnier: terms.fft_charbonnier,
                total: terms.total,
            };
            if let (Some(w), Some(p)) = (log.as_mut(), &tcfg.log_path) {
                serde_json::to_writer(&mut *w, &entry)?;
                w.write_all(b"\n").map_err(io_err(p))?;
            }
            out.steps.push(entry);
            s_l1 += terms.l1;
            s_fft += terms.fft_charbonnier;
            s_tot += terms.total;
        }
        let n = order.len() as f64;
        out.epochs.push(EpochLog {
            epoch,
            lr,
            mean_l1: s_l1 / n,
            mean_fft_charbonnier: s_fft / n,
            mean_total: s_tot / n,
        });
        if let Some(dir) = &tcfg.checkpoint_dir {
            if tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0 {
                let path = dir.join(format!("epoch_{:04}.lgfn", epoch + 1));
                checkpoint_save(&params, &path)?;
                out.checkpoints.push(path);
            }
        }
    }
    if let (Some(w), Some(p)) = (log.as_mut(), &tcfg.log_path) {
        w.flush().map_err(io_err(p))?;
    }
    if let Some(dir) = &tcfg.checkpoint_dir {
        let path = dir.join("final.lgfn");
        checkpoint_save(&params, &path)?;
        out.checkpoints.push(path);
    }
    out.params = params;
    Ok(out)
}
