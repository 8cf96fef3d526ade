//! Synthetic stand-in for a multi-modal tumour segmentation task.
//!
//! Each scan is a square grid of pixels with four noisy feature channels and
//! a label map made of three concentric ellipses. A small per-pixel MLP is
//! trained on fixed pixel subsamples with plain mini-batch SGD.

mod model;
mod scan;
mod train;

pub use model::{mlp_layout, softmax, MlpModel, INIT_SCALE};
pub use scan::{
    Sample, Scan, ScanGenerator, SizeParams, BACKGROUND, EDEMA, ENHANCING, NECROTIC, NUM_CHANNELS,
    NUM_CLASSES,
};
pub use train::{
    local_steps, local_train, JobTag, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_PIXELS_PER_SCAN,
    DIVERGENCE_LIMIT,
};
