//! Hand-derived building blocks for the fixed MLP family used by the VAE.

mod batchnorm;
mod dense;
mod optim;
mod schedule;

pub use batchnorm::{BatchNorm, BatchNormCache, BN_EPSILON, BN_MOMENTUM};
pub use dense::{relu_backward_in_place, relu_in_place, Dense};
pub use optim::{
    accumulate_gradients, clip_global_norm, global_norm, Adam, AdamConfig, StepReport,
};
pub use schedule::{LrSchedule, PlateauTracker, ScheduleKind, LR_FLOOR};

use rand::Rng;

use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Dropout probability for hidden layer `layer` (0-based within its stack).
pub fn dropout_rate(layer: usize) -> f64 {
    (0.1 + 0.05 * layer as f64).min(0.3)
}

/// Inverted-dropout mask: each entry is `0` or `1/(1-p)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Matrix<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    let mut mask = Matrix::zeros(rows, cols);
    for v in mask.as_mut_slice() {
        if rng.random::<f64>() >= p {
            *v = keep;
        }
    }
    mask
}
