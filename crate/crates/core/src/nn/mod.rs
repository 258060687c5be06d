//! Hand-differentiated network building blocks.
//!
//! Every layer exposes a `forward` that returns a cache and a `backward` that
//! consumes it. Sequences are time-major `[steps, batch, features]` arrays.
//! All arithmetic is `f64`; matrix products go through `ndarray`'s
//! single-threaded kernels, so results are bit-identical across runs.

pub mod adam;
pub mod checkpoint;
mod classifier;
mod layers;
pub mod loss;
mod lstm;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointHeader, Tensor};
pub(crate) use classifier::load_into;
pub use classifier::{Classifier, ClassifierCache, ClassifierGrads, LstmLayerSpec, NetworkSpec};
pub use layers::{BatchNorm, BatchNormCache, Dense, DenseGrads, Dropout};
pub use loss::{bce_with_logits, kl_bernoulli, kl_bernoulli_logits};
pub use lstm::{LstmCache, LstmGrads, LstmLayer};

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub(crate) fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Stack `[steps, features]` windows into a time-major `[steps, batch, features]` batch.
pub fn to_time_major<'a>(windows: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Array3<f64> {
    let views: Vec<_> = windows.into_iter().collect();
    let (t, f) = views.first().map(|v| v.dim()).unwrap_or((0, 0));
    let mut out = Array3::zeros((t, views.len(), f));
    for (b, v) in views.iter().enumerate() {
        assert_eq!(v.dim(), (t, f), "windows in a batch must share a shape");
        out.slice_mut(ndarray::s![.., b, ..]).assign(v);
    }
    out
}

/// Inverse of [`to_time_major`] for a single batch member.
pub fn window_of(batch: &Array3<f64>, b: usize) -> Array2<f64> {
    batch.slice(ndarray::s![.., b, ..]).to_owned()
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use crate::rng::RngSeed;
    use ndarray::{Array, Dimension, ShapeBuilder};
    use rand::Rng;

    pub fn project<Sh: ShapeBuilder>(shape: Sh, seed: u64) -> Array<f64, Sh::Dim>
    where
        Sh::Dim: Dimension,
    {
        let mut r = RngSeed(seed).rng();
        Array::from_shape_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    /// Compare `analytic` against central differences of `f(i, delta)` at up to 10 random indices.
    pub fn check_grads(name: &str, analytic: &[f64], f: impl Fn(usize, f64) -> f64, seed: u64) {
        let h = 1e-5;
        let mut r = RngSeed(seed).rng();
        let n = analytic.len();
        let picks: Vec<usize> = if n <= 10 { (0..n).collect() } else { (0..10).map(|_| r.random_range(0..n)).collect() };
        for i in picks {
            let numeric = (f(i, h) - f(i, -h)) / (2.0 * h);
            let a = analytic[i];
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            assert!(
                diff < 1e-7 || diff / scale < 1e-4,
                "{name}[{i}]: analytic {a:e} vs numeric {numeric:e}"
            );
        }
    }
}
