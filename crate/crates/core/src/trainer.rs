//! Mini-batch training loop with annealed KL, schedules and early stopping.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{accumulate_gradients, Adam, AdamConfig, LrSchedule, PlateauTracker, ScheduleKind};
use crate::scalar::Scalar;
use crate::vae::{composite_loss, LossBreakdown, LossConfig, Mode, ModelParams};

pub const TRAIN_LOG_HEADER: [&str; 9] =
    ["epoch", "recon", "kl", "temporal", "mean", "total", "val_total", "lr", "grad_norm"];

/// Consecutive non-finite batches tolerated before training is abandoned.
pub const DIVERGENCE_LIMIT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Validation quantity driving early stopping, plateau detection and
    /// best-parameter restoration.
    pub monitor: Monitor,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Epochs without improvement before the plateau component halves the rate.
    pub plateau_patience: usize,
    pub kl_delta_threshold: f64,
    pub grad_norm_threshold: f64,
    pub loss: LossConfig,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    pub accumulation_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            monitor: Monitor::Recon,
            batch_size: 128,
            schedule: LrSchedule::default(),
            patience: 10,
            min_delta: 1e-4,
            plateau_patience: 5,
            kl_delta_threshold: 1e-5,
            grad_norm_threshold: 0.1,
            loss: LossConfig::default(),
            clip_norm: 1.0,
            weight_decay: 1e-5,
            seed: 0,
            validation_fraction: 0.1,
            accumulation_steps: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::config(format!(
                "validation fraction must lie in (0, 0.5), got {}",
                self.validation_fraction
            )));
        }
        if self.accumulation_steps == 0 {
            return Err(Error::config("accumulation steps must be at least 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip threshold must be positive"));
        }
        if self.weight_decay < 0.0 || self.min_delta < 0.0 {
            return Err(Error::config("weight decay and min_delta must be non-negative"));
        }
        self.schedule.validate()
    }

    fn stop_rules(&self) -> StopRules {
        StopRules {
            patience: self.patience,
            min_delta: self.min_delta,
            kl_delta: self.kl_delta_threshold,
            grad_norm: self.grad_norm_threshold,
            max_epochs: self.epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Validation reconstruction loss.
    #[default]
    Recon,
    /// Validation composite loss, which also moves with the KL annealing factor.
    Total,
}

impl Monitor {
    pub fn pick(self, loss: &LossBreakdown) -> f64 {
        match self {
            Monitor::Recon => loss.recon,
            Monitor::Total => loss.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub validation: LossBreakdown,
    pub lr: f64,
    /// Mean post-clip global gradient norm over the epoch's updates.
    pub grad_norm: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub stop_reason: Option<StopReason>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// Every logged number except wall time, epoch by epoch.
    pub fn numeric_rows(&self) -> Vec<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                vec![
                    r.train.recon,
                    r.train.kl,
                    r.train.temporal,
                    r.train.mean,
                    r.train.total,
                    r.validation.recon,
                    r.validation.total,
                    r.lr,
                    r.grad_norm,
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRAIN_LOG_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                format!("{:e}", r.train.recon),
                format!("{:e}", r.train.kl),
                format!("{:e}", r.train.temporal),
                format!("{:e}", r.train.mean),
                format!("{:e}", r.train.total),
                format!("{:e}", r.validation.total),
                format!("{:e}", r.lr),
                format!("{:e}", r.grad_norm),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Validation loss stopped improving within the patience window.
    Patience,
    /// KL change and gradient norm both fell below their thresholds.
    KlStabilized,
    EpochLimit,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Patience => "primary: validation loss did not improve within patience",
            StopReason::KlStabilized => "secondary: KL divergence stabilized and gradient norm below threshold",
            StopReason::EpochLimit => "epoch limit reached",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop(StopReason),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRules {
    pub patience: usize,
    pub min_delta: f64,
    pub kl_delta: f64,
    pub grad_norm: f64,
    pub max_epochs: usize,
}

impl Default for StopRules {
    fn default() -> Self {
        TrainConfig::default().stop_rules()
    }
}

/// Decides whether to stop after the latest epoch. Nothing fires until more
/// than `patience` epochs are recorded, except the epoch limit.
pub fn early_stop_check(val_losses: &[f64], kl_history: &[f64], grad_norm: f64, rules: &StopRules) -> StopDecision {
    let n = val_losses.len();
    if n >= rules.max_epochs {
        return StopDecision::Stop(StopReason::EpochLimit);
    }
    let p = rules.patience.max(1);
    if n <= p {
        return StopDecision::Continue;
    }
    let reference = val_losses[..n - p].iter().copied().fold(f64::INFINITY, f64::min);
    let recent = val_losses[n - p..].iter().copied().fold(f64::INFINITY, f64::min);
    if recent > reference - rules.min_delta {
        return StopDecision::Stop(StopReason::Patience);
    }
    if let [.., prev, last] = kl_history {
        if (last - prev).abs() < rules.kl_delta && grad_norm < rules.grad_norm {
            return StopDecision::Stop(StopReason::KlStabilized);
        }
    }
    StopDecision::Continue
}

/// Mean absolute epoch-to-epoch change of the training reconstruction loss
/// over early, middle and late phases of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceProfile {
    pub initial: f64,
    pub mid: f64,
    pub late: f64,
}

pub fn convergence_profile(log: &TrainLog) -> Result<ConvergenceProfile> {
    let losses: Vec<f64> = log.records.iter().map(|r| r.train.recon).collect();
    profile_of(&losses)
}

fn profile_of(losses: &[f64]) -> Result<ConvergenceProfile> {
    if losses.len() < 21 {
        return Err(Error::InsufficientData {
            needed: 21,
            got: losses.len(),
        });
    }
    // deltas[k] is the change into epoch k + 2 (1-based).
    let deltas: Vec<f64> = losses.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(ConvergenceProfile {
        initial: mean(&deltas[..9]),
        mid: mean(&deltas[9..19]),
        late: mean(&deltas[19..]),
    })
}

#[derive(Default)]
struct Sums {
    recon: f64,
    kl: f64,
    temporal: f64,
    mean: f64,
    total: f64,
    anneal: f64,
    weight: f64,
}

impl Sums {
    fn add(&mut self, b: &LossBreakdown, weight: f64) {
        self.recon += b.recon * weight;
        self.kl += b.kl * weight;
        self.temporal += b.temporal * weight;
        self.mean += b.mean * weight;
        self.total += b.total * weight;
        self.anneal = b.anneal;
        self.weight += weight;
    }

    fn finish(&self, config: &LossConfig) -> LossBreakdown {
        let w = self.weight.max(f64::MIN_POSITIVE);
        LossBreakdown {
            recon: self.recon / w,
            kl: self.kl / w,
            temporal: self.temporal / w,
            mean: self.mean / w,
            anneal: self.anneal,
            lambda_temporal: config.lambda_temporal,
            lambda_mean: config.lambda_mean,
            total: self.total / w,
        }
    }
}

/// Validation loss in inference mode, using the current KL weight.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, windows: &Matrix<T>, step: usize, config: &LossConfig) -> Result<LossBreakdown> {
    let fwd = params.infer(windows)?;
    Ok(composite_loss(windows, &fwd.reconstruction, &fwd.latent, step, config)?.0)
}

/// Trains `params` on the rows of `windows` and returns the parameters with the
/// lowest monitored validation loss together with the per-epoch log.
pub fn train<T: Scalar>(
    mut params: ModelParams<T>,
    windows: &Matrix<T>,
    config: &TrainConfig,
) -> Result<(ModelParams<T>, TrainLog)> {
    config.validate()?;
    if windows.cols() != params.arch.window {
        return Err(Error::shape(format!(
            "model expects windows of {} samples, got {}",
            params.arch.window,
            windows.cols()
        )));
    }
    let total = windows.rows();
    let n_val = (total as f64 * config.validation_fraction).floor() as usize;
    if n_val == 0 || n_val >= total {
        return Err(Error::InsufficientData {
            needed: (1.0 / config.validation_fraction).ceil() as usize + 1,
            got: total,
        });
    }
    let n_train = total - n_val;
    let val_windows = windows.select_rows(&(n_train..total).collect::<Vec<_>>());

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::<T>::new(AdamConfig {
        weight_decay: config.weight_decay,
        clip_norm: Some(config.clip_norm),
        ..AdamConfig::default()
    });
    let mut plateau = PlateauTracker::new(config.schedule.plateau_factor, config.plateau_patience, config.min_delta);
    let rules = config.stop_rules();

    let mut log = TrainLog::default();
    let mut best: Option<(f64, ModelParams<T>)> = None;
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut step = 0usize;
    let mut bad_batches = 0usize;
    let mut val_history = Vec::new();
    let mut kl_history = Vec::new();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = Sums::default();
        let mut pending: Vec<Vec<Vec<T>>> = Vec::new();
        let mut norm_sum = 0.0;
        let mut updates = 0usize;
        let mut last_lr = config.schedule.lr_at(step, epoch, plateau.multiplier())?;
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();

        for (b, chunk) in batches.iter().enumerate() {
            let batch = windows.select_rows(chunk);
            let outcome = params
                .forward(&batch, Mode::TRAIN, &mut rng)
                .and_then(|fwd| {
                    let (loss, lg) = composite_loss(&batch, &fwd.reconstruction, &fwd.latent, step, &config.loss)?;
                    let grads = params.backward(&fwd, &lg)?;
                    let trainable = grads.trainable();
                    if !trainable.iter().all(|g| crate::scalar::all_finite(g)) {
                        return Err(Error::numeric("non-finite gradient"));
                    }
                    Ok((fwd, loss, trainable))
                });
            let (fwd, loss, grads) = match outcome {
                Ok(v) => v,
                Err(Error::Numeric(reason)) => {
                    bad_batches += 1;
                    log::warn!("epoch {epoch} batch {b}: {reason}");
                    if bad_batches >= DIVERGENCE_LIMIT {
                        return Err(Error::Divergence {
                            reason: format!("{DIVERGENCE_LIMIT} consecutive non-finite batches ({reason})"),
                            log: Box::new(log),
                        });
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            bad_batches = 0;
            params.absorb_batch_stats(&fwd)?;
            params.update_global_skip(loss.recon);
            sums.add(&loss, chunk.len() as f64);
            pending.push(grads);

            if pending.len() == config.accumulation_steps || b + 1 == batches.len() {
                let averaged = accumulate_gradients(&pending)?;
                pending.clear();
                last_lr = config.schedule.lr_at(step, epoch, plateau.multiplier())?;
                let report = adam.step(&mut params.trainable_mut(), &averaged, last_lr)?;
                norm_sum += report.norm_after_clip;
                updates += 1;
                step += 1;
            }
        }

        let train_loss = sums.finish(&config.loss);
        let validation = match evaluate(&params, &val_windows, step, &config.loss) {
            Ok(v) => v,
            Err(Error::Numeric(reason)) => {
                return Err(Error::Divergence {
                    reason: format!("validation loss is not finite ({reason})"),
                    log: Box::new(log),
                })
            }
            Err(e) => return Err(e),
        };
        let record = EpochRecord {
            epoch,
            train: train_loss,
            validation,
            lr: last_lr,
            grad_norm: if updates > 0 { norm_sum / updates as f64 } else { 0.0 },
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: recon {:.5} kl {:.4} val {:.5} lr {:.2e} beta {:.3}",
            record.train.recon,
            record.train.kl,
            record.validation.total,
            record.lr,
            params.global_beta.to_f64_lossy()
        );
        let grad_norm = record.grad_norm;
        log.records.push(record);

        let monitored = config.monitor.pick(&validation);
        if best.as_ref().is_none_or(|(v, _)| monitored < *v) {
            best = Some((monitored, params.clone()));
            log.best_epoch = Some(epoch);
        }
        if config.schedule.has(ScheduleKind::Plateau) && plateau.observe(monitored) {
            log::debug!("epoch {epoch}: plateau, learning-rate multiplier now {}", plateau.multiplier());
        }
        val_history.push(monitored);
        kl_history.push(train_loss.kl);
        if let StopDecision::Stop(reason) = early_stop_check(&val_history, &kl_history, grad_norm, &rules) {
            log::info!("stopping after epoch {epoch}: {reason}");
            log.stop_reason = Some(reason);
            break;
        }
    }

    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((params, log))
}
