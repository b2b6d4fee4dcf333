//! The learnable stack: neighbor-axis convolutions, the learned
//! convolutional sparse coding block, hierarchical abstraction and
//! propagation levels, the per-event head, loss and training.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

pub mod layers;
pub mod model;
pub mod params;
pub mod train;

pub use layers::{sfe_forward, soft_threshold, sum_pool};
pub use model::{
    backward, bce_logit, calibrate, class_weights, feature_propagation_level, forward_plan, lcsc_block, loss_bce,
    loss_bce_weighted, set_abstraction_level, ssfe_forward, wednet_forward, ForwardCache, LevelPlan, WindowPlan,
};
pub use params::{FpParams, LcscHyperParams, ModelParams, NetworkShape, SaParams};
pub use train::{evaluate, initial_params, train, train_from, EpochRecord, LabeledWindow, TrainConfig, TrainOutcome};

/// Floating-point element of the network (`f32` for training, `f64` for checks).
pub trait Scalar:
    Float + LinalgScalar + ScalarOperand + AddAssign + SubAssign + Sum + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
