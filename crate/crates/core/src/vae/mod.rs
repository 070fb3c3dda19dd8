//! Dense variational autoencoder over fixed-width windows.

mod loss;
mod network;
mod params;

pub use loss::{anneal_factor, composite_loss, kl_divergence, LossBreakdown, LossConfig, LossGradients};
pub use network::{Forward, LatentState, Mode, LOGVAR_CLAMP};
pub use params::{Architecture, HiddenLayer, ModelParams, SkipSettings, TensorKind};

/// Gradients share the parameter layout; running statistics stay zero.
pub type Gradients<T> = ModelParams<T>;
