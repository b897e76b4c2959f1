//! Semi-supervised dual-domain adaptation for semantic segmentation.
//!
//! A student network is trained jointly on labeled source and labeled target
//! images, and on unlabeled target images mixed ClassMix / ComplexMix style
//! with pseudo-labels from an EMA teacher.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod mixing;
pub mod model;
pub mod params;
pub mod persist;
pub mod pseudo;
pub mod raster;
pub mod train;

pub use error::{Error, Result};
pub use eval::{evaluate, ConfusionMatrix};
pub use losses::{ce_loss, combined_loss, CeOutput, LossReport};
pub use mixing::{classmix_mask, complexmix_mask, generate_mask, mix_images, mix_labels, MixConfig, MixVariant};
pub use model::{ema_update, init_network, ForwardTrace, NetworkConfig, Role, SegNetwork};
pub use params::{Param, ParamSet};
pub use pseudo::{argmax_label, one_hot};
pub use raster::{LabelMap, LogitGrad, MixMask, ProbMap, SegImage, IGNORE};
pub use train::{lr_schedule, run_ablation, run_training, train_step, TrainConfig, TrainMode, TrainState};
