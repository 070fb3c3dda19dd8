use serde::{Deserialize, Serialize};

use super::network::LatentState;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Optimizer steps over which the KL weight ramps from 0 to 1.
    pub anneal_steps: usize,
    pub lambda_temporal: f64,
    pub lambda_mean: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            anneal_steps: 5000,
            lambda_temporal: 0.1,
            lambda_mean: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub temporal: f64,
    pub mean: f64,
    pub anneal: f64,
    pub lambda_temporal: f64,
    pub lambda_mean: f64,
    pub total: f64,
}

/// Loss gradients with respect to the reconstruction and the latent statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients<T> {
    pub recon: Matrix<T>,
    pub mu: Matrix<T>,
    pub logvar: Matrix<T>,
}

impl<T: Scalar> LossGradients<T> {
    pub fn zeros(batch: usize, window: usize, latent: usize) -> Self {
        Self {
            recon: Matrix::zeros(batch, window),
            mu: Matrix::zeros(batch, latent),
            logvar: Matrix::zeros(batch, latent),
        }
    }
}

/// KL weight at optimizer step `step`: `min(1, step / anneal_steps)`.
pub fn anneal_factor(step: usize, anneal_steps: usize) -> f64 {
    if anneal_steps == 0 {
        1.0
    } else {
        (step as f64 / anneal_steps as f64).min(1.0)
    }
}

/// Batch-mean KL divergence of diagonal Gaussians from the standard normal.
pub fn kl_divergence<T: Scalar>(latent: &LatentState<T>) -> f64 {
    let rows = latent.mu.rows().max(1) as f64;
    let total: f64 = latent
        .mu
        .as_slice()
        .iter()
        .zip(latent.logvar.as_slice())
        .map(|(&m, &lv)| {
            let (m, lv) = (m.to_f64_lossy(), lv.to_f64_lossy());
            0.5 * (m * m + lv.exp() - 1.0 - lv)
        })
        .sum();
    (total / rows).max(0.0)
}

/// Composite training loss and its gradients.
pub fn composite_loss<T: Scalar>(
    x: &Matrix<T>,
    x_hat: &Matrix<T>,
    latent: &LatentState<T>,
    step: usize,
    config: &LossConfig,
) -> Result<(LossBreakdown, LossGradients<T>)> {
    if x.rows() != x_hat.rows() || x.cols() != x_hat.cols() {
        return Err(Error::shape(format!(
            "target is {}x{} but reconstruction is {}x{}",
            x.rows(),
            x.cols(),
            x_hat.rows(),
            x_hat.cols()
        )));
    }
    if latent.mu.rows() != x.rows() {
        return Err(Error::shape("latent batch size differs from window batch size"));
    }
    let (rows, width) = (x.rows(), x.cols());
    if width < 2 {
        return Err(Error::config("temporal loss needs windows of at least 2 samples"));
    }
    if rows == 0 {
        return Err(Error::shape("empty batch"));
    }
    let n = (rows * width) as f64;
    let n_diff = (rows * (width - 1)) as f64;
    let mut grads = LossGradients::zeros(rows, width, latent.mu.cols());

    let mut recon = 0.0;
    let mut temporal = 0.0;
    let (mut sum_x, mut sum_hat) = (0.0, 0.0);
    for r in 0..rows {
        let (xr, hr) = (x.row(r), x_hat.row(r));
        let gr = grads.recon.row_mut(r);
        for i in 0..width {
            let (xv, hv) = (xr[i].to_f64_lossy(), hr[i].to_f64_lossy());
            let d = hv - xv;
            recon += d * d;
            sum_x += xv;
            sum_hat += hv;
            gr[i] = T::lit(2.0 * d / n);
        }
    }
    let lambda_t = config.lambda_temporal;
    for r in 0..rows {
        let (xr, hr) = (x.row(r), x_hat.row(r));
        let gr = grads.recon.row_mut(r);
        for i in 0..width - 1 {
            let d = (hr[i + 1].to_f64_lossy() - hr[i].to_f64_lossy()) - (xr[i + 1].to_f64_lossy() - xr[i].to_f64_lossy());
            temporal += d * d;
            let g = T::lit(lambda_t * 2.0 * d / n_diff);
            gr[i + 1] += g;
            gr[i] -= g;
        }
    }
    recon /= n;
    temporal /= n_diff;
    let mean_gap = (sum_hat - sum_x) / n;
    let mean = mean_gap.abs();
    let lambda_m = config.lambda_mean;
    if mean_gap != 0.0 {
        let g = T::lit(lambda_m * mean_gap.signum() / n);
        grads.recon.as_mut_slice().iter_mut().for_each(|v| *v += g);
    }

    let kl = kl_divergence(latent);
    let anneal = anneal_factor(step, config.anneal_steps);
    let scale = anneal / rows as f64;
    for ((gm, gl), (&m, &lv)) in grads
        .mu
        .as_mut_slice()
        .iter_mut()
        .zip(grads.logvar.as_mut_slice())
        .zip(latent.mu.as_slice().iter().zip(latent.logvar.as_slice()))
    {
        *gm = T::lit(scale * m.to_f64_lossy());
        *gl = T::lit(scale * 0.5 * (lv.to_f64_lossy().exp() - 1.0));
    }

    let total = recon + anneal * kl + lambda_t * temporal + lambda_m * mean;
    if !total.is_finite() {
        return Err(Error::numeric("non-finite loss"));
    }
    Ok((
        LossBreakdown {
            recon,
            kl,
            temporal,
            mean,
            anneal,
            lambda_temporal: lambda_t,
            lambda_mean: lambda_m,
            total,
        },
        grads,
    ))
}
