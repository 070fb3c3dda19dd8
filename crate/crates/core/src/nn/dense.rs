use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};
use crate::scalar::Scalar;

/// Fully connected layer computing `out = W·in + b` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[out × in]`
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![T::zero(); outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for w in layer.weights.as_mut_slice() {
            *w = T::lit(rng.random_range(-limit..limit));
        }
        layer
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, input: &Matrix<T>) -> Result<Matrix<T>> {
        if input.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "dense layer expects width {}, got {}",
                self.in_dim(),
                input.cols()
            )));
        }
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        for b in 0..input.rows() {
            let x = input.row(b);
            let y = out.row_mut(b);
            for (o, yo) in y.iter_mut().enumerate() {
                *yo = dot(self.weights.row(o), x) + self.bias[o];
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` (same layout as `self`)
    /// and returns `dL/d input`.
    pub fn backward(&self, input: &Matrix<T>, grad_out: &Matrix<T>, grad: &mut Dense<T>) -> Matrix<T> {
        let mut grad_in = Matrix::zeros(input.rows(), self.in_dim());
        for b in 0..input.rows() {
            let x = input.row(b);
            let g = grad_out.row(b);
            for (o, &go) in g.iter().enumerate() {
                if go == T::zero() {
                    continue;
                }
                grad.bias[o] += go;
                axpy(go, x, grad.weights.row_mut(o));
                axpy(go, self.weights.row(o), grad_in.row_mut(b));
            }
        }
        grad_in
    }
}

pub fn relu_in_place<T: Scalar>(m: &mut Matrix<T>) {
    for v in m.as_mut_slice() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the pre-activation was not positive.
pub fn relu_backward_in_place<T: Scalar>(pre: &Matrix<T>, grad: &mut Matrix<T>) {
    for (g, &p) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= T::zero() {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_emit_bias() {
        let mut layer = Dense::<f64>::zeros(3, 2);
        layer.bias = vec![0.5, -1.0];
        let out = layer.forward(&Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap()).unwrap();
        assert_eq!(out.row(0), &[0.5, -1.0]);
        assert_eq!(out.row(1), &[0.5, -1.0]);
    }

    #[test]
    fn scalar_layer() {
        let layer = Dense {
            weights: Matrix::from_vec(1, 1, vec![2.0]).unwrap(),
            bias: vec![1.0],
        };
        let out = layer.forward(&Matrix::from_vec(1, 1, vec![3.0]).unwrap()).unwrap();
        assert_eq!(out.get(0, 0), 7.0);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let layer = Dense::<f64>::zeros(3, 2);
        assert!(matches!(layer.forward(&Matrix::zeros(1, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = Dense::<f64>::glorot(4, 5, &mut rng);
        for b in &mut layer.bias {
            *b = rng.random_range(-1.0..1.0);
        }
        let input = Matrix::from_vec(7, 4, (0..28).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let out = layer.forward(&input).unwrap();
        for r in 0..7 {
            for o in 0..5 {
                let mut acc = layer.bias[o];
                for i in 0..4 {
                    acc += layer.weights.get(o, i) * input.get(r, i);
                }
                assert!((out.get(r, o) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn squared_error_hand_derivative() {
        // L = (w x - t)^2 with w=1, b=0, x=2, t=0  =>  dL/dw = 2 (w x - t) x = 8
        let layer = Dense {
            weights: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            bias: vec![0.0],
        };
        let x = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let y = layer.forward(&x).unwrap();
        let dy = Matrix::from_vec(1, 1, vec![2.0 * (y.get(0, 0) - 0.0)]).unwrap();
        let mut grad = Dense::zeros(1, 1);
        let dx = layer.backward(&x, &dy, &mut grad);
        assert_eq!(grad.weights.get(0, 0), 8.0);
        assert_eq!(grad.bias[0], 4.0);
        assert_eq!(dx.get(0, 0), 4.0);
    }
}
