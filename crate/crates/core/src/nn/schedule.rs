use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest learning rate a schedule will emit.
pub const LR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    StepDecay,
    Warmup,
    Cosine,
    Plateau,
}

/// A composition of schedule components. The learning rate is
/// `base * warmup(step) * (cosine(step) | step_decay(epoch)) * plateau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub components: Vec<ScheduleKind>,
    pub base_lr: f64,
    /// Epochs per halving for step decay.
    pub decay_epochs: usize,
    pub warmup_steps: usize,
    /// Horizon for cosine decay, in optimizer steps.
    pub total_steps: usize,
    pub plateau_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            components: vec![ScheduleKind::Warmup, ScheduleKind::StepDecay, ScheduleKind::Plateau],
            base_lr: 1e-4,
            decay_epochs: 100,
            warmup_steps: 1000,
            total_steps: 0,
            plateau_factor: 0.5,
        }
    }
}

impl LrSchedule {
    pub fn single(kind: ScheduleKind, base_lr: f64) -> Self {
        Self {
            components: vec![kind],
            base_lr,
            ..Self::default()
        }
    }

    pub fn has(&self, kind: ScheduleKind) -> bool {
        self.components.contains(&kind)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base learning rate must be positive, got {}", self.base_lr)));
        }
        if self.has(ScheduleKind::Cosine) && self.total_steps == 0 {
            return Err(Error::config("cosine schedule needs a positive total step count"));
        }
        if self.has(ScheduleKind::Cosine) && self.has(ScheduleKind::StepDecay) {
            return Err(Error::config("cosine and step decay cannot be combined"));
        }
        if self.has(ScheduleKind::StepDecay) && self.decay_epochs == 0 {
            return Err(Error::config("step decay needs a positive decay interval"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::config("plateau factor must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Learning rate at optimizer step `step` during epoch `epoch`, given the
    /// current plateau multiplier (1.0 when no reduction has happened).
    pub fn lr_at(&self, step: usize, epoch: usize, plateau_multiplier: f64) -> Result<f64> {
        self.validate()?;
        let mut lr = self.base_lr;
        if self.has(ScheduleKind::Warmup) && self.warmup_steps > 0 {
            lr *= (step as f64 / self.warmup_steps as f64).min(1.0);
        }
        if self.has(ScheduleKind::Cosine) {
            let progress = (step as f64 / self.total_steps as f64).min(1.0);
            lr *= 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        } else if self.has(ScheduleKind::StepDecay) {
            lr *= 0.5f64.powi((epoch / self.decay_epochs) as i32);
        }
        if self.has(ScheduleKind::Plateau) {
            lr *= plateau_multiplier;
        }
        Ok(lr.max(LR_FLOOR))
    }
}

/// Tracks the monitored loss and shrinks a multiplier when it stalls.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauTracker {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    wait: usize,
    multiplier: f64,
}

impl PlateauTracker {
    pub fn new(factor: f64, patience: usize, min_delta: f64) -> Self {
        Self {
            factor,
            patience,
            min_delta,
            best: f64::INFINITY,
            wait: 0,
            multiplier: 1.0,
        }
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }

    /// Records one monitored value; returns true when the multiplier was reduced.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait >= self.patience.max(1) {
            self.wait = 0;
            self.multiplier *= self.factor;
            return true;
        }
        false
    }
}
