//! LGFN light-field super-resolution: light-field containers and
//! augmentation, the DGCE / ESAM / ECAM network, losses and Adam training,
//! PSNR/SSIM evaluation and closed-form cost accounting.

pub mod config;
pub mod cost;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod lightfield;
pub mod metrics;
pub mod model;
pub mod params;
pub mod train;

pub use config::{
    ablation_variants, AblationVariant, AttentionMode, Direction, Expansion, LgfnConfig, LkaSpec,
};
pub use cost::{ablation_table, analyze, count_flops, count_params, CostReport, InputSpec};
pub use error::{LgfnError, Result};
pub use lightfield::{AugmentCode, LfDims, LightField, SamplePair};
pub use metrics::{baseline_sr, evaluate, psnr, ssim, DatasetReport, SceneScore};
pub use model::{lgfn_forward, lgfn_forward_var, ForwardTrace};
pub use params::{checkpoint_load, checkpoint_save, init_params, ParamGroup, ParamStore};
pub use train::{adam_step, combined_loss, lr_at, train_loop, OptimState, TrainConfig};
