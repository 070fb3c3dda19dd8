use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-5,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam with global-norm clipping and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub norm_before_clip: f64,
    pub norm_after_clip: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place. Nothing is modified when an error is returned.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>], lr: f64) -> Result<StepReport> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!(
                    "tensor {i}: {} parameters but {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            if !crate::scalar::all_finite(g) {
                return Err(Error::numeric(format!("non-finite gradient in tensor {i}")));
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len() || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::shape("gradient layout changed between optimizer steps"));
        }

        let norm = global_norm(grads);
        let scale = match self.config.clip_norm {
            Some(tau) if norm > tau => tau / norm,
            _ => 1.0,
        };

        self.steps += 1;
        let t = self.steps as i32;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let correction1 = T::one() - b1.powi(t);
        let correction2 = T::one() - b2.powi(t);
        let eps = T::lit(self.config.epsilon);
        let lr_t = T::lit(lr);
        let decay = T::lit(lr * self.config.weight_decay);
        let scale_t = T::lit(scale);

        for (k, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.first[k], &mut self.second[k], &grads[k]);
            for i in 0..p.len() {
                let gi = g[i] * scale_t;
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= decay * p[i];
                p[i] -= lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepReport {
            norm_before_clip: norm,
            norm_after_clip: norm * scale,
        })
    }
}

/// Euclidean norm over every entry of every tensor, accumulated in `f64`.
pub fn global_norm<T: Scalar>(grads: &[Vec<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| {
            let x = v.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `tau`; returns the norm before and after.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Vec<T>], tau: f64) -> (f64, f64) {
    let norm = global_norm(grads);
    if norm > tau && norm > 0.0 {
        let scale = T::lit(tau / norm);
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= scale);
    }
    (norm, global_norm(grads))
}

/// Elementwise mean of equally shaped gradient sets (summed in order, then divided).
pub fn accumulate_gradients<T: Scalar>(sets: &[Vec<Vec<T>>]) -> Result<Vec<Vec<T>>> {
    let Some(first) = sets.first() else {
        return Err(Error::config("cannot accumulate an empty list of gradients"));
    };
    let mut total = first.clone();
    for set in &sets[1..] {
        if set.len() != total.len() || set.iter().zip(&total).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::shape("gradient sets differ in shape"));
        }
        for (acc, g) in total.iter_mut().zip(set) {
            for (a, &v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
    }
    let n = T::from_usize_lossy(sets.len());
    total.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v /= n);
    Ok(total)
}
