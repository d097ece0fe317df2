//! Vision-based force estimation toolkit.
//!
//! Estimates the 6-D tool/tissue interaction force from video and tool
//! kinematics with a two-stage recurrent convolutional model:
//!
//! 1. **data** – signal model, normalization, resampling, dataset splits.
//! 2. **video** – mean-frame removal, ROI tracking, space-time frames.
//! 3. **nnet** – CNN feature extractor and CIFG-LSTM stack with exact
//!    backward passes, parameter store, checkpoints, gradient checking.
//! 4. **loss** – RMSE + gradient-difference composite loss.
//! 5. **optim** – RMSProp and the two training stages.
//! 6. **metrics** – RMSE, PCC, MRE and per-component summaries.
//! 7. **armax** – linear ARMAX baseline.
//! 8. **synth** – synthetic pushing/pulling episodes with a force oracle.

pub mod armax;
pub mod data;
pub mod error;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nnet;
pub mod optim;
pub mod synth;
pub mod video;

pub use error::{Error, Result};
