use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Dense};
use crate::scalar::Scalar;

/// Layer widths of the encoder and decoder stacks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub window: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            window: 48,
            encoder_hidden: vec![512, 256, 128],
            latent_dim: 16,
            decoder_hidden: vec![128, 256, 512],
        }
    }
}

impl Architecture {
    /// Same topology with a quarter of the hidden width, for quick runs.
    pub fn reduced() -> Self {
        Self {
            window: 48,
            encoder_hidden: vec![128, 64, 32],
            latent_dim: 16,
            decoder_hidden: vec![32, 64, 128],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config("window width must be at least 2"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("latent dimension must be positive"));
        }
        if self.encoder_hidden.is_empty() || self.decoder_hidden.is_empty() {
            return Err(Error::config("encoder and decoder need at least one hidden layer"));
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&w| w == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Confidence-dependent global skip: `beta = beta0 * exp(-decay * confidence)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipSettings {
    pub alpha_init: f64,
    pub beta0: f64,
    pub beta_decay: f64,
}

impl Default for SkipSettings {
    fn default() -> Self {
        Self {
            alpha_init: 0.8,
            beta0: 0.8,
            beta_decay: 0.5,
        }
    }
}

/// Dense → batch norm → ReLU → dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer<T> {
    pub dense: Dense<T>,
    pub norm: BatchNorm<T>,
}

impl<T: Scalar> HiddenLayer<T> {
    fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            dense: Dense::glorot(inputs, outputs, rng),
            norm: BatchNorm::new(outputs),
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        let mut norm = BatchNorm::new(outputs);
        norm.gamma.iter_mut().for_each(|g| *g = T::zero());
        norm.running_var.iter_mut().for_each(|v| *v = T::zero());
        Self {
            dense: Dense::zeros(inputs, outputs),
            norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Updated by the optimizer.
    Trainable,
    /// Batch-norm running statistics.
    Running,
    /// The confidence-driven global skip scalar.
    GlobalSkip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Architecture,
    pub skip: SkipSettings,
    pub encoder: Vec<HiddenLayer<T>>,
    pub mu_head: Dense<T>,
    pub logvar_head: Dense<T>,
    pub decoder: Vec<HiddenLayer<T>>,
    pub output: Dense<T>,
    /// One learnable skip weight per decoder hidden layer.
    pub skip_alpha: Vec<T>,
    pub global_beta: T,
}

fn widths(input: usize, hidden: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .zip(hidden.iter().copied())
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-initialized model; batch norm starts at unit scale and neutral running stats.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, skip: SkipSettings, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let encoder = widths(arch.window, &arch.encoder_hidden)
            .map(|(i, o)| HiddenLayer::glorot(i, o, rng))
            .collect();
        let top = *arch.encoder_hidden.last().expect("validated");
        let mu_head = Dense::glorot(top, arch.latent_dim, rng);
        let logvar_head = Dense::glorot(top, arch.latent_dim, rng);
        let decoder: Vec<_> = widths(arch.latent_dim, &arch.decoder_hidden)
            .map(|(i, o)| HiddenLayer::glorot(i, o, rng))
            .collect();
        let output = Dense::glorot(*arch.decoder_hidden.last().expect("validated"), arch.window, rng);
        Ok(Self {
            skip_alpha: vec![T::lit(skip.alpha_init); decoder.len()],
            global_beta: T::lit(skip.beta0),
            arch,
            skip,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            output,
        })
    }

    /// All-zero tensors with this model's layout (used as a gradient buffer).
    pub fn zeros_like(&self) -> Self {
        Self::zeros_like_arch(&self.arch, self.skip)
    }

    /// Every tensor with its stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, TensorKind, &[T])> {
        let mut out: Vec<(String, TensorKind, &[T])> = Vec::new();
        for (l, layer) in self.encoder.iter().enumerate() {
            push_hidden(&mut out, &format!("encoder.{l}"), layer);
        }
        out.push(("mu_head.weight".into(), TensorKind::Trainable, self.mu_head.weights.as_slice()));
        out.push(("mu_head.bias".into(), TensorKind::Trainable, &self.mu_head.bias));
        out.push(("logvar_head.weight".into(), TensorKind::Trainable, self.logvar_head.weights.as_slice()));
        out.push(("logvar_head.bias".into(), TensorKind::Trainable, &self.logvar_head.bias));
        for (l, layer) in self.decoder.iter().enumerate() {
            push_hidden(&mut out, &format!("decoder.{l}"), layer);
        }
        out.push(("output.weight".into(), TensorKind::Trainable, self.output.weights.as_slice()));
        out.push(("output.bias".into(), TensorKind::Trainable, &self.output.bias));
        out.push(("skip_alpha".into(), TensorKind::Trainable, &self.skip_alpha));
        out.push(("global_beta".into(), TensorKind::GlobalSkip, std::slice::from_ref(&self.global_beta)));
        out
    }

    /// Mutable view of every tensor, in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, TensorKind, &mut [T])> {
        let mut out: Vec<(String, TensorKind, &mut [T])> = Vec::new();
        for (l, layer) in self.encoder.iter_mut().enumerate() {
            push_hidden_mut(&mut out, &format!("encoder.{l}"), layer);
        }
        out.push(("mu_head.weight".into(), TensorKind::Trainable, self.mu_head.weights.as_mut_slice()));
        out.push(("mu_head.bias".into(), TensorKind::Trainable, &mut self.mu_head.bias));
        out.push(("logvar_head.weight".into(), TensorKind::Trainable, self.logvar_head.weights.as_mut_slice()));
        out.push(("logvar_head.bias".into(), TensorKind::Trainable, &mut self.logvar_head.bias));
        for (l, layer) in self.decoder.iter_mut().enumerate() {
            push_hidden_mut(&mut out, &format!("decoder.{l}"), layer);
        }
        out.push(("output.weight".into(), TensorKind::Trainable, self.output.weights.as_mut_slice()));
        out.push(("output.bias".into(), TensorKind::Trainable, &mut self.output.bias));
        out.push(("skip_alpha".into(), TensorKind::Trainable, &mut self.skip_alpha));
        out.push(("global_beta".into(), TensorKind::GlobalSkip, std::slice::from_mut(&mut self.global_beta)));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        self.tensors_mut()
            .into_iter()
            .filter(|(_, kind, _)| *kind == TensorKind::Trainable)
            .map(|(_, _, t)| t)
            .collect()
    }

    pub fn trainable(&self) -> Vec<Vec<T>> {
        self.tensors()
            .into_iter()
            .filter(|(_, kind, _)| *kind == TensorKind::Trainable)
            .map(|(_, _, t)| t.to_vec())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| crate::scalar::all_finite(t))
    }

    /// Recomputes the global skip from a batch reconstruction loss and returns it.
    pub fn update_global_skip(&mut self, recon_loss: f64) -> T {
        let confidence = 1.0 / (1.0 + recon_loss.max(0.0));
        self.global_beta = T::lit(self.skip.beta0 * (-self.skip.beta_decay * confidence).exp());
        self.global_beta
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros_like_arch(&self.arch, self.skip);
        for ((_, _, src), (_, _, dst)) in self.tensors().into_iter().zip(out.tensors_mut()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::lit(s.to_f64_lossy());
            }
        }
        out
    }

    fn zeros_like_arch(arch: &Architecture, skip: SkipSettings) -> Self {
        let encoder: Vec<HiddenLayer<T>> = widths(arch.window, &arch.encoder_hidden)
            .map(|(i, o)| HiddenLayer::zeros(i, o))
            .collect();
        let decoder: Vec<HiddenLayer<T>> = widths(arch.latent_dim, &arch.decoder_hidden)
            .map(|(i, o)| HiddenLayer::zeros(i, o))
            .collect();
        let top = arch.encoder_hidden.last().copied().unwrap_or(0);
        Self {
            arch: arch.clone(),
            skip,
            mu_head: Dense::zeros(top, arch.latent_dim),
            logvar_head: Dense::zeros(top, arch.latent_dim),
            output: Dense::zeros(arch.decoder_hidden.last().copied().unwrap_or(0), arch.window),
            skip_alpha: vec![T::zero(); decoder.len()],
            global_beta: T::zero(),
            encoder,
            decoder,
        }
    }

    /// Empty model for a given layout, ready to be filled tensor by tensor.
    pub fn empty(arch: Architecture, skip: SkipSettings) -> Result<Self> {
        arch.validate()?;
        Ok(Self::zeros_like_arch(&arch, skip))
    }
}

fn push_hidden<'a, T: Scalar>(out: &mut Vec<(String, TensorKind, &'a [T])>, prefix: &str, layer: &'a HiddenLayer<T>) {
    out.push((format!("{prefix}.weight"), TensorKind::Trainable, layer.dense.weights.as_slice()));
    out.push((format!("{prefix}.bias"), TensorKind::Trainable, &layer.dense.bias));
    out.push((format!("{prefix}.bn.gamma"), TensorKind::Trainable, &layer.norm.gamma));
    out.push((format!("{prefix}.bn.shift"), TensorKind::Trainable, &layer.norm.shift));
    out.push((format!("{prefix}.bn.running_mean"), TensorKind::Running, &layer.norm.running_mean));
    out.push((format!("{prefix}.bn.running_var"), TensorKind::Running, &layer.norm.running_var));
}

fn push_hidden_mut<'a, T: Scalar>(
    out: &mut Vec<(String, TensorKind, &'a mut [T])>,
    prefix: &str,
    layer: &'a mut HiddenLayer<T>,
) {
    out.push((format!("{prefix}.weight"), TensorKind::Trainable, layer.dense.weights.as_mut_slice()));
    out.push((format!("{prefix}.bias"), TensorKind::Trainable, &mut layer.dense.bias));
    out.push((format!("{prefix}.bn.gamma"), TensorKind::Trainable, &mut layer.norm.gamma));
    out.push((format!("{prefix}.bn.shift"), TensorKind::Trainable, &mut layer.norm.shift));
    out.push((format!("{prefix}.bn.running_mean"), TensorKind::Running, &mut layer.norm.running_mean));
    out.push((format!("{prefix}.bn.running_var"), TensorKind::Running, &mut layer.norm.running_var));
}
