use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::loss::LossGradients;
use super::params::{HiddenLayer, ModelParams};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{dropout_mask, dropout_rate, relu_backward_in_place, relu_in_place, BatchNormCache, BN_MOMENTUM};
use crate::scalar::{all_finite, Scalar};

/// Bound applied to the log-variance head output.
pub const LOGVAR_CLAMP: f64 = 10.0;

/// Which stochastic and batch-dependent behaviours are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Normalize with batch statistics instead of running statistics.
    pub batch_stats: bool,
    pub dropout: bool,
    /// Draw latent noise; otherwise the latent code is the mean.
    pub sample: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        batch_stats: true,
        dropout: true,
        sample: true,
    };
    pub const INFER: Mode = Mode {
        batch_stats: false,
        dropout: false,
        sample: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub mu: Matrix<T>,
    /// Clamped log-variance.
    pub logvar: Matrix<T>,
    pub z: Matrix<T>,
    pub eps: Matrix<T>,
}

#[derive(Debug, Clone)]
struct HiddenCache<T> {
    input: Matrix<T>,
    pre_relu: Matrix<T>,
    bn: BatchNormCache<T>,
    mask: Option<Matrix<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    encoder: Vec<HiddenCache<T>>,
    top: Matrix<T>,
    logvar_raw: Matrix<T>,
    decoder: Vec<HiddenCache<T>>,
    last_hidden: Matrix<T>,
    input: Matrix<T>,
}

/// Result of a full encode/decode pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub reconstruction: Matrix<T>,
    pub latent: LatentState<T>,
    cache: Option<Cache<T>>,
}

impl<T> Forward<T> {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

fn hidden_forward<T: Scalar, R: Rng + ?Sized>(
    layer: &HiddenLayer<T>,
    index: usize,
    input: &Matrix<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Matrix<T>, HiddenCache<T>)> {
    let dense = layer.dense.forward(input)?;
    let (pre_relu, bn) = layer.norm.forward(&dense, mode.batch_stats);
    let mut out = pre_relu.clone();
    relu_in_place(&mut out);
    let mask = mode
        .dropout
        .then(|| dropout_mask::<T, R>(out.rows(), out.cols(), dropout_rate(index), rng));
    if let Some(mask) = &mask {
        for (o, &m) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *o *= m;
        }
    }
    Ok((
        out,
        HiddenCache {
            input: input.clone(),
            pre_relu,
            bn,
            mask,
        },
    ))
}

fn hidden_backward<T: Scalar>(
    layer: &HiddenLayer<T>,
    cache: &HiddenCache<T>,
    grad_out: &Matrix<T>,
    grad: &mut HiddenLayer<T>,
) -> Matrix<T> {
    let mut d = grad_out.clone();
    if let Some(mask) = &cache.mask {
        for (g, &m) in d.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *g *= m;
        }
    }
    relu_backward_in_place(&cache.pre_relu, &mut d);
    let da = layer.norm.backward(&cache.bn, &d, &mut grad.norm.gamma, &mut grad.norm.shift);
    layer.dense.backward(&cache.input, &da, &mut grad.dense)
}

fn ensure_finite<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<()> {
    if all_finite(m.as_slice()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite values in {what}")))
    }
}

impl<T: Scalar> ModelParams<T> {
    fn check_width(&self, m: &Matrix<T>, width: usize, what: &str) -> Result<()> {
        if m.cols() != width {
            return Err(Error::shape(format!("{what} must have width {width}, got {}", m.cols())));
        }
        Ok(())
    }

    fn encode_impl<R: Rng + ?Sized>(
        &self,
        x: &Matrix<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(LatentState<T>, Vec<HiddenCache<T>>, Matrix<T>, Matrix<T>)> {
        self.check_width(x, self.arch.window, "input windows")?;
        let mut caches = Vec::with_capacity(self.encoder.len());
        let mut h = x.clone();
        for (l, layer) in self.encoder.iter().enumerate() {
            let (out, cache) = hidden_forward(layer, l, &h, mode, rng)?;
            caches.push(cache);
            h = out;
        }
        let mu = self.mu_head.forward(&h)?;
        let logvar_raw = self.logvar_head.forward(&h)?;
        let bound = T::lit(LOGVAR_CLAMP);
        let logvar = logvar_raw.map(|v| v.max(-bound).min(bound));
        let mut eps = Matrix::zeros(mu.rows(), mu.cols());
        let z = if mode.sample {
            for e in eps.as_mut_slice() {
                let draw: f64 = StandardNormal.sample(rng);
                *e = T::lit(draw);
            }
            let mut z = mu.clone();
            let half = T::lit(0.5);
            for ((zi, &lv), &e) in z.as_mut_slice().iter_mut().zip(logvar.as_slice()).zip(eps.as_slice()) {
                *zi += (half * lv).exp() * e;
            }
            z
        } else {
            mu.clone()
        };
        ensure_finite(&z, "latent code")?;
        Ok((LatentState { mu, logvar, z, eps }, caches, h, logvar_raw))
    }

    fn decode_impl<R: Rng + ?Sized>(
        &self,
        z: &Matrix<T>,
        x: &Matrix<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Matrix<T>, Vec<HiddenCache<T>>, Matrix<T>)> {
        self.check_width(z, self.arch.latent_dim, "latent code")?;
        self.check_width(x, self.arch.window, "input windows")?;
        if z.rows() != x.rows() {
            return Err(Error::shape(format!(
                "{} latent rows but {} input windows",
                z.rows(),
                x.rows()
            )));
        }
        let mut caches = Vec::with_capacity(self.decoder.len());
        let mut u = z.clone();
        for (l, layer) in self.decoder.iter().enumerate() {
            let (mut out, cache) = hidden_forward(layer, l, &u, mode, rng)?;
            let shared = u.cols().min(out.cols());
            let alpha = self.skip_alpha[l];
            for r in 0..out.rows() {
                let src = &u.row(r)[..shared];
                for (o, &s) in out.row_mut(r)[..shared].iter_mut().zip(src) {
                    *o += alpha * s;
                }
            }
            caches.push(cache);
            u = out;
        }
        let mut recon = self.output.forward(&u)?;
        for (o, &xi) in recon.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *o += self.global_beta * xi;
        }
        ensure_finite(&recon, "reconstruction")?;
        Ok((recon, caches, u))
    }

    /// Latent distribution for a batch of windows.
    pub fn encode<R: Rng + ?Sized>(&self, x: &Matrix<T>, mode: Mode, rng: &mut R) -> Result<LatentState<T>> {
        Ok(self.encode_impl(x, mode, rng)?.0)
    }

    /// Reconstructs windows from latent codes; `x` feeds the global skip path.
    pub fn decode<R: Rng + ?Sized>(&self, z: &Matrix<T>, x: &Matrix<T>, mode: Mode, rng: &mut R) -> Result<Matrix<T>> {
        Ok(self.decode_impl(z, x, mode, rng)?.0)
    }

    pub fn encode_infer(&self, x: &Matrix<T>) -> Result<LatentState<T>> {
        self.encode(x, Mode::INFER, &mut ChaCha8Rng::seed_from_u64(0))
    }

    pub fn decode_infer(&self, z: &Matrix<T>, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.decode(z, x, Mode::INFER, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Inference-mode reconstruction without gradient caches.
    pub fn reconstruct(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let latent = self.encode_infer(x)?;
        self.decode_infer(&latent.z, x)
    }

    /// Full pass that records everything needed by [`ModelParams::backward`].
    pub fn forward<R: Rng + ?Sized>(&self, x: &Matrix<T>, mode: Mode, rng: &mut R) -> Result<Forward<T>> {
        let (latent, encoder, top, logvar_raw) = self.encode_impl(x, mode, rng)?;
        let (reconstruction, decoder, last_hidden) = self.decode_impl(&latent.z, x, mode, rng)?;
        Ok(Forward {
            reconstruction,
            latent,
            cache: Some(Cache {
                encoder,
                top,
                logvar_raw,
                decoder,
                last_hidden,
                input: x.clone(),
            }),
        })
    }

    /// Inference-mode pass; the result carries no caches.
    pub fn infer(&self, x: &Matrix<T>) -> Result<Forward<T>> {
        let latent = self.encode_infer(x)?;
        let reconstruction = self.decode_infer(&latent.z, x)?;
        Ok(Forward {
            reconstruction,
            latent,
            cache: None,
        })
    }

    /// Folds the batch statistics of a batch-stat pass into the running statistics.
    pub fn absorb_batch_stats(&mut self, fwd: &Forward<T>) -> Result<()> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("forward pass has no cached batch statistics".into()))?;
        let momentum = T::lit(BN_MOMENTUM);
        for (layer, c) in self.encoder.iter_mut().zip(&cache.encoder) {
            if c.bn.used_batch_stats {
                layer.norm.update_running(&c.bn, momentum);
            }
        }
        for (layer, c) in self.decoder.iter_mut().zip(&cache.decoder) {
            if c.bn.used_batch_stats {
                layer.norm.update_running(&c.bn, momentum);
            }
        }
        Ok(())
    }

    /// Gradients of a loss with respect to every tensor, given its gradients
    /// with respect to the reconstruction and the latent statistics.
    pub fn backward(&self, fwd: &Forward<T>, loss: &LossGradients<T>) -> Result<ModelParams<T>> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward pass requires a recorded forward pass".into()))?;
        let rec = &fwd.reconstruction;
        if loss.recon.rows() != rec.rows() || loss.recon.cols() != rec.cols() {
            return Err(Error::shape("reconstruction gradient does not match the forward pass"));
        }
        let mut g = self.zeros_like();

        let d_recon = &loss.recon;
        g.global_beta = d_recon
            .as_slice()
            .iter()
            .zip(cache.input.as_slice())
            .map(|(&d, &x)| d * x)
            .sum();
        let mut du = self.output.backward(&cache.last_hidden, d_recon, &mut g.output);

        for l in (0..self.decoder.len()).rev() {
            let c = &cache.decoder[l];
            let shared = c.input.cols().min(du.cols());
            let mut d_alpha = T::zero();
            for r in 0..du.rows() {
                for (&d, &s) in du.row(r)[..shared].iter().zip(&c.input.row(r)[..shared]) {
                    d_alpha += d * s;
                }
            }
            g.skip_alpha[l] = d_alpha;
            let mut d_in = hidden_backward(&self.decoder[l], c, &du, &mut g.decoder[l]);
            let alpha = self.skip_alpha[l];
            for r in 0..du.rows() {
                let src = &du.row(r)[..shared];
                for (di, &s) in d_in.row_mut(r)[..shared].iter_mut().zip(src) {
                    *di += alpha * s;
                }
            }
            du = d_in;
        }

        let latent = &fwd.latent;
        let mut d_mu = du.clone();
        for (d, &e) in d_mu.as_mut_slice().iter_mut().zip(loss.mu.as_slice()) {
            *d += e;
        }
        let bound = T::lit(LOGVAR_CLAMP);
        let half = T::lit(0.5);
        let mut d_lv = Matrix::zeros(du.rows(), du.cols());
        for i in 0..d_lv.as_slice().len() {
            let raw = cache.logvar_raw.as_slice()[i];
            if raw < -bound || raw > bound {
                continue;
            }
            let lv = latent.logvar.as_slice()[i];
            let e = latent.eps.as_slice()[i];
            d_lv.as_mut_slice()[i] = du.as_slice()[i] * e * half * (half * lv).exp() + loss.logvar.as_slice()[i];
        }

        let mut d_top = self.mu_head.backward(&cache.top, &d_mu, &mut g.mu_head);
        let d_top_lv = self.logvar_head.backward(&cache.top, &d_lv, &mut g.logvar_head);
        for (a, &b) in d_top.as_mut_slice().iter_mut().zip(d_top_lv.as_slice()) {
            *a += b;
        }
        for l in (0..self.encoder.len()).rev() {
            d_top = hidden_backward(&self.encoder[l], &cache.encoder[l], &d_top, &mut g.encoder[l]);
        }
        Ok(g)
    }
}
