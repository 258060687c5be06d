//! Denoising sequence-to-sequence LSTM autoencoder used to pretrain the
//! classifier's LSTM stack on unlabeled windows.
//!
//! The encoder mirrors the classifier's LSTM layers and reads the noised
//! window; its latent is the final hidden state of the top layer. The decoder
//! receives that latent at every step, runs the layers in mirrored order and
//! projects each step back to the feature space.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, Tensor};
use crate::nn::{to_time_major, Adam, Classifier, Dense, DenseGrads, LstmCache, LstmGrads, LstmLayer, Mode, NetworkSpec};
use crate::rng::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledSource {
    All,
    ActiveSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AePretrainSpec {
    /// Std of the Gaussian input noise, in standardized units.
    pub noise_sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub unlabeled_source: UnlabeledSource,
    pub holdout_fraction: f64,
    /// Decode the sequence back to front.
    pub reverse_decode: bool,
}

impl Default for AePretrainSpec {
    fn default() -> Self {
        AePretrainSpec {
            noise_sigma: 0.05,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            unlabeled_source: UnlabeledSource::All,
            holdout_fraction: 0.1,
            reverse_decode: false,
        }
    }
}

impl AePretrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma", "must be non-negative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("ae", "epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::invalid("holdout_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Mean squared error over every element.
pub fn ae_loss(x: &Array3<f64>, x_hat: &Array3<f64>) -> f64 {
    assert_eq!(x.dim(), x_hat.dim(), "reconstruction shape");
    let n = x.len().max(1) as f64;
    x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    /// Classifier topology whose LSTM stack the encoder mirrors.
    pub spec: NetworkSpec,
    pub encoder: Vec<LstmLayer>,
    pub decoder: Vec<LstmLayer>,
    pub proj: Dense,
    pub reverse_decode: bool,
}

#[derive(Debug, Clone)]
pub struct AeCache {
    enc: Vec<LstmCache>,
    dec: Vec<LstmCache>,
    dec_top: Array2<f64>,
    pub reconstruction: Array3<f64>,
    pub latents: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct AeGrads {
    pub encoder: Vec<LstmGrads>,
    pub decoder: Vec<LstmGrads>,
    pub proj: DenseGrads,
}

impl AeGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for g in self.encoder.iter().chain(&self.decoder) {
            v.extend([sl(&g.w), sl(&g.u), sl(&g.b)]);
        }
        v.extend([sl(&self.proj.w), sl(&self.proj.b)]);
        v
    }
}

fn sl<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, reverse_decode: bool, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut encoder = Vec::new();
        let mut d = spec.input_dim;
        for l in &spec.lstm_layers {
            encoder.push(LstmLayer::init(d, l.hidden, l.dropout, l.recurrent_dropout, rng));
            d = l.hidden;
        }
        let mut decoder = Vec::new();
        for l in spec.lstm_layers.iter().rev() {
            decoder.push(LstmLayer::init(d, l.hidden, 0.0, 0.0, rng));
            d = l.hidden;
        }
        let proj = Dense::init(d, spec.input_dim, rng);
        Ok(Autoencoder {
            spec,
            encoder,
            decoder,
            proj,
            reverse_decode,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.top_hidden()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            v.push(l.w.as_slice_mut().expect("standard layout"));
            v.push(l.u.as_slice_mut().expect("standard layout"));
            v.push(l.b.as_slice_mut().expect("standard layout"));
        }
        v.push(self.proj.w.as_slice_mut().expect("standard layout"));
        v.push(self.proj.b.as_slice_mut().expect("standard layout"));
        v
    }

    /// Encode `x` (time-major) with optional input noise and reconstruct it.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Array3<f64>, noise_sigma: f64, mode: Mode, rng: &mut R) -> Result<AeCache> {
        let (t, b, f) = x.dim();
        if f != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "autoencoder input",
                expected: self.spec.input_dim.to_string(),
                actual: f.to_string(),
            });
        }
        if t == 0 {
            return Err(Error::invalid("window", "sequence has no steps"));
        }
        let mut input = x.clone();
        if noise_sigma > 0.0 {
            input.mapv_inplace(|v| {
                let z: f64 = StandardNormal.sample(rng);
                v + noise_sigma * z
            });
        }
        let mut enc = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let c = layer.forward(&input, mode, rng)?;
            input = c.outputs().to_owned();
            enc.push(c);
        }
        let latents = input.slice(s![t - 1, .., ..]).to_owned();
        let mut dec_in = Array3::zeros((t, b, latents.ncols()));
        for mut step in dec_in.outer_iter_mut() {
            step.assign(&latents);
        }
        let mut dec = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let c = layer.forward(&dec_in, mode, rng)?;
            dec_in = c.outputs().to_owned();
            dec.push(c);
        }
        let top = dec_in.dim().2;
        let dec_top = dec_in.into_shape_with_order((t * b, top)).expect("contiguous");
        let flat = self.proj.forward(&dec_top);
        let mut reconstruction = Array3::zeros((t, b, f));
        for ti in 0..t {
            let src = if self.reverse_decode { t - 1 - ti } else { ti };
            reconstruction
                .slice_mut(s![src, .., ..])
                .assign(&flat.slice(s![ti * b..(ti + 1) * b, ..]));
        }
        Ok(AeCache {
            enc,
            dec,
            dec_top,
            reconstruction,
            latents,
        })
    }

    /// Returns the loss against the clean input and its gradients.
    pub fn backward(&self, cache: &AeCache, x: &Array3<f64>) -> (f64, AeGrads) {
        let (t, b, f) = x.dim();
        let loss = ae_loss(x, &cache.reconstruction);
        let scale = 2.0 / x.len() as f64;
        let mut dflat = Array2::zeros((t * b, f));
        for ti in 0..t {
            let src = if self.reverse_decode { t - 1 - ti } else { ti };
            let d = (&cache.reconstruction.slice(s![src, .., ..]) - &x.slice(s![src, .., ..])) * scale;
            dflat.slice_mut(s![ti * b..(ti + 1) * b, ..]).assign(&d);
        }
        let (proj_g, dtop) = self.proj.backward(&cache.dec_top, &dflat);
        let mut grad_seq = dtop.into_shape_with_order((t, b, self.proj.input_dim())).expect("contiguous");
        let mut dec_g = Vec::with_capacity(self.decoder.len());
        for (layer, c) in self.decoder.iter().zip(&cache.dec).rev() {
            let (g, dx) = layer.backward(c, &grad_seq);
            dec_g.push(g);
            grad_seq = dx;
        }
        dec_g.reverse();
        let dlatent = grad_seq.sum_axis(Axis(0));
        let h = dlatent.ncols();
        let mut grad_seq = Array3::zeros((t, b, h));
        grad_seq.slice_mut(s![t - 1, .., ..]).assign(&dlatent);
        let mut enc_g = Vec::with_capacity(self.encoder.len());
        for (layer, c) in self.encoder.iter().zip(&cache.enc).rev() {
            let (g, dx) = layer.backward(c, &grad_seq);
            enc_g.push(g);
            grad_seq = dx;
        }
        enc_g.reverse();
        (
            loss,
            AeGrads {
                encoder: enc_g,
                decoder: dec_g,
                proj: proj_g,
            },
        )
    }

    /// Clean, eval-mode latents of `[steps, features]` windows.
    pub fn latents(&self, windows: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((windows.len(), self.latent_dim()));
        let mut unused = RngSeed(0).rng();
        for (start, chunk) in (0..windows.len()).step_by(256).zip(windows.chunks(256)) {
            let x = to_time_major(chunk.iter().cloned());
            let c = self.forward(&x, 0.0, Mode::Eval, &mut unused)?;
            out.slice_mut(s![start..start + chunk.len(), ..]).assign(&c.latents);
        }
        Ok(out)
    }

    /// Eval-mode reconstruction error of standardized windows, without noise.
    pub fn reconstruction_mse(&self, windows: &[ArrayView2<'_, f64>]) -> Result<f64> {
        if windows.is_empty() {
            return Ok(f64::NAN);
        }
        let mut unused = RngSeed(0).rng();
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in windows.chunks(256) {
            let x = to_time_major(chunk.iter().cloned());
            let c = self.forward(&x, 0.0, Mode::Eval, &mut unused)?;
            total += ae_loss(&x, &c.reconstruction) * x.len() as f64;
            count += x.len();
        }
        Ok(total / count as f64)
    }

    pub fn to_checkpoint(&self, seed: Option<u64>, step: u64, extra: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        for (prefix, layers) in [("enc", &self.encoder), ("dec", &self.decoder)] {
            for (i, l) in layers.iter().enumerate() {
                tensors.push(Tensor::new(format!("{prefix}{i}.w"), l.w.shape(), sl(&l.w)));
                tensors.push(Tensor::new(format!("{prefix}{i}.u"), l.u.shape(), sl(&l.u)));
                tensors.push(Tensor::new(format!("{prefix}{i}.b"), l.b.shape(), sl(&l.b)));
            }
        }
        tensors.push(Tensor::new("proj.w", self.proj.w.shape(), sl(&self.proj.w)));
        tensors.push(Tensor::new("proj.b", self.proj.b.shape(), sl(&self.proj.b)));
        Ok(Checkpoint {
            kind: "autoencoder".into(),
            spec: serde_json::json!({ "network": self.spec, "reverse_decode": self.reverse_decode }),
            seed,
            step,
            extra,
            tensors,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "autoencoder" {
            return Err(Error::format("checkpoint", format!("expected an autoencoder, found `{}`", ck.kind)));
        }
        let spec: NetworkSpec = serde_json::from_value(ck.spec["network"].clone())?;
        let reverse = ck.spec["reverse_decode"].as_bool().unwrap_or(false);
        let mut ae = Autoencoder::new(spec, reverse, &mut RngSeed(0).rng())?;
        use crate::nn::load_into as load;
        for (prefix, layers) in [("enc", &mut ae.encoder), ("dec", &mut ae.decoder)] {
            for (i, l) in layers.iter_mut().enumerate() {
                load(ck, &format!("{prefix}{i}.w"), &mut l.w)?;
                load(ck, &format!("{prefix}{i}.u"), &mut l.u)?;
                load(ck, &format!("{prefix}{i}.b"), &mut l.b)?;
            }
        }
        load(ck, "proj.w", &mut ae.proj.w)?;
        load(ck, "proj.b", &mut ae.proj.b)?;
        Ok(ae)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub train_mse: f64,
    pub holdout_mse: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: Autoencoder,
    pub curve: Vec<LossPoint>,
    /// Holdout reconstruction error of the untrained model.
    pub initial_holdout_mse: f64,
}

/// Train the autoencoder on standardized `[steps, features]` windows.
pub fn pretrain(
    windows: &[ArrayView2<'_, f64>],
    network: &NetworkSpec,
    spec: &AePretrainSpec,
    seed: RngSeed,
) -> Result<Pretrained> {
    spec.validate()?;
    if windows.len() < 2 {
        return Err(Error::InsufficientData {
            what: "autoencoder pretraining",
            reason: format!("{} windows", windows.len()),
        });
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.shuffle(&mut seed.derive_rng(&[0xae01]));
    let n_hold = ((windows.len() as f64 * spec.holdout_fraction).round() as usize).min(windows.len() - 1);
    let (hold_idx, train_idx) = order.split_at(n_hold);
    let hold: Vec<_> = hold_idx.iter().map(|&i| windows[i]).collect();
    let mut train_idx = train_idx.to_vec();

    let mut model = Autoencoder::new(network.clone(), spec.reverse_decode, &mut seed.derive_rng(&[0xae02]))?;
    let initial_holdout_mse = model.reconstruction_mse(&hold)?;
    let mut adam = Adam::new(spec.learning_rate);
    let mut curve = Vec::with_capacity(spec.epochs);
    for epoch in 1..=spec.epochs {
        train_idx.shuffle(&mut seed.derive_rng(&[0xae03, epoch as u64]));
        let mut total = 0.0;
        let mut count = 0usize;
        for (bi, batch) in train_idx.chunks(spec.batch_size).enumerate() {
            let x = to_time_major(batch.iter().map(|&i| windows[i]));
            let mut rng = seed.derive_rng(&[0xae04, epoch as u64, bi as u64]);
            let cache = model.forward(&x, spec.noise_sigma, Mode::Train, &mut rng)?;
            let (loss, grads) = model.backward(&cache, &x);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "autoencoder loss at epoch {epoch}, batch {bi}; lower the learning rate (now {}) or check input scaling",
                    spec.learning_rate
                )));
            }
            adam.step(model.param_slices_mut(), &grads.slices());
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let holdout_mse = if hold.is_empty() { f64::NAN } else { model.reconstruction_mse(&hold)? };
        curve.push(LossPoint {
            epoch,
            train_mse: total / count as f64,
            holdout_mse,
        });
    }
    Ok(Pretrained {
        model,
        curve,
        initial_holdout_mse,
    })
}

/// Initialize a classifier whose LSTM stack is copied from the autoencoder's encoder.
pub fn transplant<R: Rng + ?Sized>(ae: &Autoencoder, spec: &NetworkSpec, rng: &mut R) -> Result<Classifier> {
    let mut clf = Classifier::new(spec.clone(), rng)?;
    if clf.lstm.len() != ae.encoder.len() {
        return Err(Error::LayerShape {
            layer: "lstm".into(),
            reason: format!("classifier has {} LSTM layers, encoder has {}", clf.lstm.len(), ae.encoder.len()),
        });
    }
    for (i, (dst, src)) in clf.lstm.iter_mut().zip(&ae.encoder).enumerate() {
        if dst.w.dim() != src.w.dim() || dst.u.dim() != src.u.dim() {
            return Err(Error::LayerShape {
                layer: format!("lstm{i}"),
                reason: format!(
                    "classifier expects input {} / hidden {}, encoder has input {} / hidden {}",
                    dst.input_dim(),
                    dst.hidden_dim(),
                    src.input_dim(),
                    src.hidden_dim()
                ),
            });
        }
        dst.w.assign(&src.w);
        dst.u.assign(&src.u);
        dst.b.assign(&src.b);
    }
    Ok(clf)
}
