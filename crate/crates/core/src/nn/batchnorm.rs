use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPSILON: f64 = 1e-5;

/// Per-unit batch normalization with learnable scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache<T> {
    pub normalized: Matrix<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
    pub used_batch_stats: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(units: usize) -> Self {
        Self {
            gamma: vec![T::one(); units],
            shift: vec![T::zero(); units],
            running_mean: vec![T::zero(); units],
            running_var: vec![T::one(); units],
        }
    }

    pub fn units(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes with batch statistics (`batch_stats`) or the frozen running
    /// statistics, then applies `gamma * x + shift`.
    pub fn forward(&self, input: &Matrix<T>, batch_stats: bool) -> (Matrix<T>, BatchNormCache<T>) {
        let (rows, units) = (input.rows(), input.cols());
        let eps = T::lit(BN_EPSILON);
        let (mean, var) = if batch_stats {
            let n = T::from_usize_lossy(rows.max(1));
            let mut mean = vec![T::zero(); units];
            for r in 0..rows {
                for (m, &v) in mean.iter_mut().zip(input.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![T::zero(); units];
            for r in 0..rows {
                for ((s, &v), &m) in var.iter_mut().zip(input.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n);
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mut normalized = Matrix::zeros(rows, units);
        let mut out = Matrix::zeros(rows, units);
        for r in 0..rows {
            let x = input.row(r);
            let xn = normalized.row_mut(r);
            for j in 0..units {
                xn[j] = (x[j] - mean[j]) * inv_std[j];
            }
            let y = out.row_mut(r);
            for j in 0..units {
                y[j] = self.gamma[j] * normalized.get(r, j) + self.shift[j];
            }
        }
        (
            out,
            BatchNormCache {
                normalized,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                used_batch_stats: batch_stats,
            },
        )
    }

    /// Returns `dL/d input` and accumulates the scale/shift gradients.
    pub fn backward(
        &self,
        cache: &BatchNormCache<T>,
        grad_out: &Matrix<T>,
        grad_gamma: &mut [T],
        grad_shift: &mut [T],
    ) -> Matrix<T> {
        let (rows, units) = (grad_out.rows(), grad_out.cols());
        let mut sum_dxhat = vec![T::zero(); units];
        let mut sum_dxhat_xhat = vec![T::zero(); units];
        for r in 0..rows {
            let g = grad_out.row(r);
            let xn = cache.normalized.row(r);
            for j in 0..units {
                grad_gamma[j] += g[j] * xn[j];
                grad_shift[j] += g[j];
                let dxhat = g[j] * self.gamma[j];
                sum_dxhat[j] += dxhat;
                sum_dxhat_xhat[j] += dxhat * xn[j];
            }
        }

        let mut grad_in = Matrix::zeros(rows, units);
        let n = T::from_usize_lossy(rows.max(1));
        for r in 0..rows {
            let g = grad_out.row(r);
            let xn = cache.normalized.row(r);
            let gi = grad_in.row_mut(r);
            for j in 0..units {
                let dxhat = g[j] * self.gamma[j];
                gi[j] = if cache.used_batch_stats {
                    cache.inv_std[j] * (dxhat - sum_dxhat[j] / n - xn[j] * sum_dxhat_xhat[j] / n)
                } else {
                    cache.inv_std[j] * dxhat
                };
            }
        }
        grad_in
    }

    /// `running = momentum * running + (1 - momentum) * batch`
    pub fn update_running(&mut self, cache: &BatchNormCache<T>, momentum: T) {
        let keep = T::one() - momentum;
        for j in 0..self.units() {
            self.running_mean[j] = momentum * self.running_mean[j] + keep * cache.batch_mean[j];
            self.running_var[j] = momentum * self.running_var[j] + keep * cache.batch_var[j];
        }
    }
}
