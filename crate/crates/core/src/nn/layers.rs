use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{dropout_mask, Mode};
use crate::error::{Error, Result};

/// Fully connected layer `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        Dense {
            w: Array2::from_shape_fn((output_dim, input_dim), |_| rng.random_range(-limit..limit)),
            b: Array1::zeros(output_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (DenseGrads, Array2<f64>) {
        let mut w = Array2::zeros(self.w.raw_dim());
        general_mat_mul(1.0, &dy.t(), x, 0.0, &mut w);
        let grads = DenseGrads {
            w,
            b: dy.sum_axis(Axis(0)),
        };
        (grads, dy.dot(&self.w))
    }
}

/// Batch normalization over the batch axis of `[batch, features]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    /// Weight kept by the running statistics at each update.
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub(crate) xhat: Array2<f64>,
    pub(crate) inv_std: Array1<f64>,
    pub(crate) batch_mean: Array1<f64>,
    /// Unbiased batch variance, used for the running estimate.
    pub(crate) batch_var: Array1<f64>,
    pub(crate) train: bool,
}

impl BatchNorm {
    pub fn new(dim: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum,
            eps,
        }
    }

    /// Pure forward; call [`BatchNorm::update_running`] with the cache to commit train statistics.
    pub fn forward(&self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, BatchNormCache)> {
        let n = x.nrows();
        let (mean, var, train) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::InsufficientData {
                        what: "batch normalization batch",
                        reason: "training needs at least two samples for a batch variance".into(),
                    });
                }
                let mean = x.mean_axis(Axis(0)).expect("non-empty");
                let var = x.var_axis(Axis(0), 0.0);
                (mean, var, true)
            }
            Mode::Eval => (self.running_mean.clone(), self.running_var.clone(), false),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (x - &mean) * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        let batch_var = if train { &var * (n as f64 / (n as f64 - 1.0)) } else { var };
        Ok((
            y,
            BatchNormCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var,
                train,
            },
        ))
    }

    pub fn update_running(&mut self, cache: &BatchNormCache) {
        if !cache.train {
            return;
        }
        let m = self.momentum;
        self.running_mean = &self.running_mean * m + &cache.batch_mean * (1.0 - m);
        self.running_var = &self.running_var * m + &cache.batch_var * (1.0 - m);
    }

    /// Returns `(dgamma, dbeta, dx)`.
    pub fn backward(&self, cache: &BatchNormCache, dy: &Array2<f64>) -> (Array1<f64>, Array1<f64>, Array2<f64>) {
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let dx = if cache.train {
            let n = dy.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            let inner = &dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
            inner * &(&cache.inv_std / n)
        } else {
            dxhat * &cache.inv_std
        };
        (dgamma, dbeta, dx)
    }
}

/// Inverted dropout on `[batch, features]` activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn forward<R: Rng + ?Sized>(&self, x: &Array2<f64>, mode: Mode, rng: &mut R) -> (Array2<f64>, Option<Array2<f64>>) {
        if mode == Mode::Eval || self.rate == 0.0 {
            return (x.clone(), None);
        }
        let mask = Array2::from_shape_vec(x.raw_dim(), dropout_mask(x.len(), self.rate, rng)).expect("mask shape");
        (x * &mask, Some(mask))
    }

    pub fn backward(dy: &Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
        match mask {
            Some(m) => dy * m,
            None => dy.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_grads, project};
    use crate::rng::RngSeed;

    #[test]
    fn dense_gradients() {
        let d = Dense::init(4, 3, &mut RngSeed(1).rng());
        let x = project((5, 4), 2);
        let proj = project((5, 3), 3);
        let loss = |d: &Dense, x: &Array2<f64>| (d.forward(x) * &proj).sum();
        let (g, dx) = d.backward(&x, &proj);
        check_grads("dense w", g.w.as_slice().unwrap(), |i, h| {
            let mut d2 = d.clone();
            d2.w.as_slice_mut().unwrap()[i] += h;
            loss(&d2, &x)
        }, 4);
        check_grads("dense b", g.b.as_slice().unwrap(), |i, h| {
            let mut d2 = d.clone();
            d2.b[i] += h;
            loss(&d2, &x)
        }, 5);
        check_grads("dense x", dx.as_slice().unwrap(), |i, h| {
            let mut x2 = x.clone();
            x2.as_slice_mut().unwrap()[i] += h;
            loss(&d, &x2)
        }, 6);
    }

    fn bn() -> BatchNorm {
        let mut bn = BatchNorm::new(3, 0.9, 1e-5);
        bn.gamma = Array1::from(vec![1.5, 0.7, -0.4]);
        bn.beta = Array1::from(vec![0.2, -1.0, 0.3]);
        bn.running_mean = Array1::from(vec![0.1, 0.2, -0.3]);
        bn.running_var = Array1::from(vec![0.9, 1.3, 0.5]);
        bn
    }

    #[test]
    fn batchnorm_gradients_both_modes() {
        for mode in [Mode::Train, Mode::Eval] {
            let bn = bn();
            let x = project((6, 3), 7);
            let proj = project((6, 3), 8);
            let loss = |bn: &BatchNorm, x: &Array2<f64>| (bn.forward(x, mode).unwrap().0 * &proj).sum();
            let (_, cache) = bn.forward(&x, mode).unwrap();
            let (dg, db, dx) = bn.backward(&cache, &proj);
            check_grads("bn gamma", dg.as_slice().unwrap(), |i, h| {
                let mut b = bn.clone();
                b.gamma[i] += h;
                loss(&b, &x)
            }, 9);
            check_grads("bn beta", db.as_slice().unwrap(), |i, h| {
                let mut b = bn.clone();
                b.beta[i] += h;
                loss(&b, &x)
            }, 10);
            check_grads("bn x", dx.as_slice().unwrap(), |i, h| {
                let mut x2 = x.clone();
                x2.as_slice_mut().unwrap()[i] += h;
                loss(&bn, &x2)
            }, 11);
        }
    }

    #[test]
    fn batchnorm_train_statistics() {
        let bn = bn();
        let x = project((50, 3), 12) * 3.0 + 1.0;
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        for j in 0..3 {
            let col = y.column(j);
            let mean = col.mean().unwrap();
            let std = col.var(0.0).sqrt();
            assert!((mean - bn.beta[j]).abs() < 1e-6);
            assert!((std - bn.gamma[j].abs()).abs() < 1e-5 * bn.gamma[j].abs() + 1e-6);
        }
    }

    #[test]
    fn batchnorm_constant_feature_gives_beta() {
        let bn = bn();
        let mut x = project((4, 3), 13);
        x.column_mut(1).fill(2.5);
        let (y, _) = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.column(1).iter().all(|&v| v == bn.beta[1]));
    }

    #[test]
    fn batchnorm_single_sample_train_is_error() {
        assert!(bn().forward(&project((1, 3), 1), Mode::Train).is_err());
        assert!(bn().forward(&project((1, 3), 1), Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_converge() {
        use rand_distr::{Distribution, Normal};
        let mut bn = BatchNorm::new(2, 0.9, 1e-5);
        let mut r = RngSeed(3).rng();
        let dist = Normal::new(4.0, 2.0).unwrap();
        for _ in 0..500 {
            let x = Array2::from_shape_fn((32, 2), |_| dist.sample(&mut r));
            let (_, c) = bn.forward(&x, Mode::Train).unwrap();
            bn.update_running(&c);
        }
        for j in 0..2 {
            assert!((bn.running_mean[j] - 4.0).abs() < 0.02 * 4.0, "{}", bn.running_mean[j]);
            assert!((bn.running_var[j] - 4.0).abs() < 0.5);
        }
    }

    #[test]
    fn dropout_modes() {
        let x = project((20, 10), 1);
        let d = Dropout { rate: 0.5 };
        let (y, m) = d.forward(&x, Mode::Eval, &mut RngSeed(0).rng());
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, m) = d.forward(&x, Mode::Train, &mut RngSeed(0).rng());
        let m = m.unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(y, &x * &m);
        let dy = project((20, 10), 2);
        assert_eq!(Dropout::backward(&dy, Some(&m)), &dy * &m);
    }
}
