use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Tensor};
use super::layers::{BatchNorm, BatchNormCache, Dense, DenseGrads, Dropout};
use super::lstm::{LstmCache, LstmGrads, LstmLayer};
use super::Mode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerSpec {
    pub hidden: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub recurrent_dropout: f64,
}

/// Classifier topology: stacked LSTM, optional batch norm on the final hidden
/// state, optional ReLU dense layer with dropout, single-logit output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub lstm_layers: Vec<LstmLayerSpec>,
    pub batch_norm: bool,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    /// Width of the hidden dense layer; 0 connects the LSTM output straight to the logit.
    pub dense_hidden: usize,
    #[serde(default)]
    pub dense_dropout: f64,
}

fn default_bn_momentum() -> f64 {
    0.9
}

fn default_bn_eps() -> f64 {
    1e-3
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be positive"));
        }
        if self.lstm_layers.is_empty() {
            return Err(Error::invalid("lstm_layers", "need at least one LSTM layer"));
        }
        let rate_ok = |r: f64| (0.0..1.0).contains(&r);
        for (i, l) in self.lstm_layers.iter().enumerate() {
            if l.hidden == 0 {
                return Err(Error::invalid("lstm_layers", format!("layer {i} has zero units")));
            }
            if !rate_ok(l.dropout) || !rate_ok(l.recurrent_dropout) {
                return Err(Error::invalid("lstm_layers", format!("layer {i} dropout rates must lie in [0, 1)")));
            }
        }
        if !rate_ok(self.dense_dropout) {
            return Err(Error::invalid("dense_dropout", "must lie in [0, 1)"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("batch_norm", "need eps > 0 and momentum in [0, 1)"));
        }
        Ok(())
    }

    pub fn top_hidden(&self) -> usize {
        self.lstm_layers.last().map_or(0, |l| l.hidden)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub spec: NetworkSpec,
    pub lstm: Vec<LstmLayer>,
    pub bn: Option<BatchNorm>,
    pub hidden: Option<Dense>,
    pub out: Dense,
}

#[derive(Debug, Clone)]
pub struct ClassifierCache {
    lstm: Vec<LstmCache>,
    bn: Option<BatchNormCache>,
    head_in: Array2<f64>,
    hidden_pre: Option<Array2<f64>>,
    drop_mask: Option<Array2<f64>>,
    out_in: Array2<f64>,
    logits: Vec<f64>,
}

impl ClassifierCache {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub lstm: Vec<LstmGrads>,
    pub bn: Option<(Array1<f64>, Array1<f64>)>,
    pub hidden: Option<DenseGrads>,
    pub out: DenseGrads,
}

impl ClassifierGrads {
    /// Gradient slices in [`Classifier::param_slices_mut`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for g in &self.lstm {
            v.extend([slice(&g.w), slice(&g.u), slice(&g.b)]);
        }
        if let Some((dg, db)) = &self.bn {
            v.extend([slice(dg), slice(db)]);
        }
        if let Some(h) = &self.hidden {
            v.extend([slice(&h.w), slice(&h.b)]);
        }
        v.extend([slice(&self.out.w), slice(&self.out.b)]);
        v
    }

    pub fn add_assign(&mut self, other: &ClassifierGrads) {
        for (a, b) in self.lstm.iter_mut().zip(&other.lstm) {
            a.w += &b.w;
            a.u += &b.u;
            a.b += &b.b;
        }
        if let (Some(a), Some(b)) = (&mut self.bn, &other.bn) {
            a.0 += &b.0;
            a.1 += &b.1;
        }
        if let (Some(a), Some(b)) = (&mut self.hidden, &other.hidden) {
            a.w += &b.w;
            a.b += &b.b;
        }
        self.out.w += &other.out.w;
        self.out.b += &other.out.b;
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut lstm = Vec::with_capacity(spec.lstm_layers.len());
        let mut d = spec.input_dim;
        for l in &spec.lstm_layers {
            lstm.push(LstmLayer::init(d, l.hidden, l.dropout, l.recurrent_dropout, rng));
            d = l.hidden;
        }
        let bn = spec.batch_norm.then(|| BatchNorm::new(d, spec.bn_momentum, spec.bn_eps));
        let hidden = (spec.dense_hidden > 0).then(|| Dense::init(d, spec.dense_hidden, rng));
        let out_in = if spec.dense_hidden > 0 { spec.dense_hidden } else { d };
        let out = Dense::init(out_in, 1, rng);
        Ok(Classifier {
            spec,
            lstm,
            bn,
            hidden,
            out,
        })
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.lstm.len() {
            v.extend([format!("lstm{i}.w"), format!("lstm{i}.u"), format!("lstm{i}.b")]);
        }
        if self.bn.is_some() {
            v.extend(["bn.gamma".into(), "bn.beta".into()]);
        }
        if self.hidden.is_some() {
            v.extend(["dense.w".into(), "dense.b".into()]);
        }
        v.extend(["out.w".into(), "out.b".into()]);
        v
    }

    /// Trainable parameters; batch-norm running statistics are excluded.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.lstm {
            v.push(slice_mut(&mut l.w));
            v.push(slice_mut(&mut l.u));
            v.push(slice_mut(&mut l.b));
        }
        if let Some(bn) = &mut self.bn {
            v.push(slice_mut(&mut bn.gamma));
            v.push(slice_mut(&mut bn.beta));
        }
        if let Some(h) = &mut self.hidden {
            v.push(slice_mut(&mut h.w));
            v.push(slice_mut(&mut h.b));
        }
        v.push(slice_mut(&mut self.out.w));
        v.push(slice_mut(&mut self.out.b));
        v
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.lstm {
            v.extend([slice(&l.w), slice(&l.u), slice(&l.b)]);
        }
        if let Some(bn) = &self.bn {
            v.extend([slice(&bn.gamma), slice(&bn.beta)]);
        }
        if let Some(h) = &self.hidden {
            v.extend([slice(&h.w), slice(&h.b)]);
        }
        v.extend([slice(&self.out.w), slice(&self.out.b)]);
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Forward a time-major batch `[steps, batch, features]`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Array3<f64>, mode: Mode, rng: &mut R) -> Result<ClassifierCache> {
        let mut caches = Vec::with_capacity(self.lstm.len());
        let mut input = x.clone();
        for layer in &self.lstm {
            let c = layer.forward(&input, mode, rng)?;
            input = c.outputs().to_owned();
            caches.push(c);
        }
        let t = input.dim().0;
        if t == 0 {
            return Err(Error::invalid("window", "sequence has no steps"));
        }
        let last = input.slice(s![t - 1, .., ..]).to_owned();
        let (head_in, bn_cache) = match &self.bn {
            Some(bn) => {
                let (y, c) = bn.forward(&last, mode)?;
                (y, Some(c))
            }
            None => (last, None),
        };
        let (hidden_pre, drop_mask, out_in) = match &self.hidden {
            Some(h) => {
                let pre = h.forward(&head_in);
                let act = pre.mapv(|v| v.max(0.0));
                let (dropped, mask) = Dropout { rate: self.spec.dense_dropout }.forward(&act, mode, rng);
                (Some(pre), mask, dropped)
            }
            None => (None, None, head_in.clone()),
        };
        let logits = self.out.forward(&out_in).column(0).to_vec();
        Ok(ClassifierCache {
            lstm: caches,
            bn: bn_cache,
            head_in,
            hidden_pre,
            drop_mask,
            out_in,
            logits,
        })
    }

    /// Gradients of `Σ dlogits[b] · logit[b]` and the input gradient.
    pub fn backward(&self, cache: &ClassifierCache, dlogits: &[f64]) -> (ClassifierGrads, Array3<f64>) {
        let batch = dlogits.len();
        let dy = Array2::from_shape_vec((batch, 1), dlogits.to_vec()).expect("logit gradient shape");
        let (out_g, mut d) = self.out.backward(&cache.out_in, &dy);
        let hidden_g = match (&self.hidden, &cache.hidden_pre) {
            (Some(h), Some(pre)) => {
                d = Dropout::backward(&d, cache.drop_mask.as_ref());
                d.zip_mut_with(pre, |g, &p| {
                    if p <= 0.0 {
                        *g = 0.0
                    }
                });
                let (g, dx) = h.backward(&cache.head_in, &d);
                d = dx;
                Some(g)
            }
            _ => None,
        };
        let bn_g = match (&self.bn, &cache.bn) {
            (Some(bn), Some(c)) => {
                let (dg, db, dx) = bn.backward(c, &d);
                d = dx;
                Some((dg, db))
            }
            _ => None,
        };
        let (t, _, top) = cache.lstm.last().expect("at least one layer").outputs().dim();
        let mut grad_seq = Array3::zeros((t, batch, top));
        grad_seq.slice_mut(s![t - 1, .., ..]).assign(&d);
        let mut lstm_g = Vec::with_capacity(self.lstm.len());
        for (layer, c) in self.lstm.iter().zip(&cache.lstm).rev() {
            let (g, dx) = layer.backward(c, &grad_seq);
            lstm_g.push(g);
            grad_seq = dx;
        }
        lstm_g.reverse();
        (
            ClassifierGrads {
                lstm: lstm_g,
                bn: bn_g,
                hidden: hidden_g,
                out: out_g,
            },
            grad_seq,
        )
    }

    /// Commit batch-norm running statistics from a train-mode pass.
    pub fn update_running_stats(&mut self, cache: &ClassifierCache) {
        if let (Some(bn), Some(c)) = (&mut self.bn, &cache.bn) {
            bn.update_running(c);
        }
    }

    /// Eval-mode final hidden state of the top LSTM layer, `[batch, hidden]`.
    pub fn encode(&self, x: &Array3<f64>) -> Result<Array2<f64>> {
        let mut unused = crate::rng::RngSeed(0).rng();
        let mut input = x.clone();
        for layer in &self.lstm {
            input = layer.forward(&input, Mode::Eval, &mut unused)?.outputs().to_owned();
        }
        let t = input.dim().0;
        if t == 0 {
            return Err(Error::invalid("window", "sequence has no steps"));
        }
        Ok(input.slice(s![t - 1, .., ..]).to_owned())
    }

    /// Eval-mode probabilities; consumes no randomness.
    pub fn predict_proba(&self, x: &Array3<f64>) -> Result<Vec<f64>> {
        let mut unused = crate::rng::RngSeed(0).rng();
        let cache = self.forward(x, Mode::Eval, &mut unused)?;
        Ok(cache.logits.iter().map(|&z| super::sigmoid(z)).collect())
    }

    pub fn to_checkpoint(&self, seed: Option<u64>, step: u64, extra: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        for (i, l) in self.lstm.iter().enumerate() {
            tensors.push(Tensor::new(format!("lstm{i}.w"), l.w.shape(), slice(&l.w)));
            tensors.push(Tensor::new(format!("lstm{i}.u"), l.u.shape(), slice(&l.u)));
            tensors.push(Tensor::new(format!("lstm{i}.b"), l.b.shape(), slice(&l.b)));
        }
        if let Some(bn) = &self.bn {
            for (name, a) in [
                ("bn.gamma", &bn.gamma),
                ("bn.beta", &bn.beta),
                ("bn.running_mean", &bn.running_mean),
                ("bn.running_var", &bn.running_var),
            ] {
                tensors.push(Tensor::new(name, a.shape(), slice(a)));
            }
        }
        if let Some(h) = &self.hidden {
            tensors.push(Tensor::new("dense.w", h.w.shape(), slice(&h.w)));
            tensors.push(Tensor::new("dense.b", h.b.shape(), slice(&h.b)));
        }
        tensors.push(Tensor::new("out.w", self.out.w.shape(), slice(&self.out.w)));
        tensors.push(Tensor::new("out.b", self.out.b.shape(), slice(&self.out.b)));
        Ok(Checkpoint {
            kind: "classifier".into(),
            spec: serde_json::to_value(&self.spec)?,
            seed,
            step,
            extra,
            tensors,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != "classifier" {
            return Err(Error::format("checkpoint", format!("expected a classifier, found `{}`", ck.kind)));
        }
        let spec: NetworkSpec = serde_json::from_value(ck.spec.clone())?;
        let mut model = Classifier::new(spec, &mut crate::rng::RngSeed(0).rng())?;
        for (i, l) in model.lstm.iter_mut().enumerate() {
            load_into(ck, &format!("lstm{i}.w"), &mut l.w)?;
            load_into(ck, &format!("lstm{i}.u"), &mut l.u)?;
            load_into(ck, &format!("lstm{i}.b"), &mut l.b)?;
        }
        if let Some(bn) = &mut model.bn {
            load_into(ck, "bn.gamma", &mut bn.gamma)?;
            load_into(ck, "bn.beta", &mut bn.beta)?;
            load_into(ck, "bn.running_mean", &mut bn.running_mean)?;
            load_into(ck, "bn.running_var", &mut bn.running_var)?;
        }
        if let Some(h) = &mut model.hidden {
            load_into(ck, "dense.w", &mut h.w)?;
            load_into(ck, "dense.b", &mut h.b)?;
        }
        load_into(ck, "out.w", &mut model.out.w)?;
        load_into(ck, "out.b", &mut model.out.b)?;
        if !model.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(model)
    }
}

pub(crate) fn load_into<D: ndarray::Dimension>(ck: &Checkpoint, name: &str, dst: &mut ndarray::Array<f64, D>) -> Result<()> {
    let t = ck.tensor(name)?;
    if t.shape != dst.shape() {
        return Err(Error::LayerShape {
            layer: name.to_string(),
            reason: format!("checkpoint has {:?}, model expects {:?}", t.shape, dst.shape()),
        });
    }
    dst.as_slice_mut().expect("standard layout").copy_from_slice(&t.data);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_grads, project};
    use crate::nn::loss::bce_with_logits;
    use crate::rng::RngSeed;

    fn spec(bn: bool, dense: usize, dropout: f64) -> NetworkSpec {
        NetworkSpec {
            input_dim: 3,
            lstm_layers: vec![
                LstmLayerSpec { hidden: 4, dropout, recurrent_dropout: dropout },
                LstmLayerSpec { hidden: 3, dropout, recurrent_dropout: 0.0 },
            ],
            batch_norm: bn,
            bn_momentum: 0.9,
            bn_eps: 1e-3,
            dense_hidden: dense,
            dense_dropout: dropout,
        }
    }

    #[test]
    fn full_network_gradients() {
        for (bn, dense, dropout) in [(true, 5, 0.3), (false, 0, 0.0), (true, 0, 0.2)] {
            let model = Classifier::new(spec(bn, dense, dropout), &mut RngSeed(1).rng()).unwrap();
            let x = project((6, 4, 3), 2);
            let y = vec![1.0, 0.0, 1.0, 0.0];
            let loss = |m: &Classifier, x: &Array3<f64>| {
                let c = m.forward(x, Mode::Train, &mut RngSeed(9).rng()).unwrap();
                bce_with_logits(c.logits(), &y).0
            };
            let cache = model.forward(&x, Mode::Train, &mut RngSeed(9).rng()).unwrap();
            let (_, dl) = bce_with_logits(cache.logits(), &y);
            let (grads, dx) = model.backward(&cache, &dl);
            let gs = grads.slices();
            assert_eq!(gs.len(), model.param_names().len());
            for (k, g) in gs.iter().enumerate() {
                check_grads(&model.param_names()[k], g, |i, h| {
                    let mut m = model.clone();
                    m.param_slices_mut()[k][i] += h;
                    loss(&m, &x)
                }, 100 + k as u64);
            }
            check_grads("input", dx.as_slice().unwrap(), |i, h| {
                let mut x2 = x.clone();
                x2.as_slice_mut().unwrap()[i] += h;
                loss(&model, &x2)
            }, 7);
        }
    }

    #[test]
    fn eval_forward_is_pure() {
        let model = Classifier::new(spec(true, 5, 0.3), &mut RngSeed(1).rng()).unwrap();
        let x = project((6, 2, 3), 2);
        let a = model.predict_proba(&x).unwrap();
        let b = model.predict_proba(&x).unwrap();
        assert_eq!(a, b);
        // a single window works in eval mode even with batch norm
        let one = x.slice(s![.., 0..1, ..]).to_owned();
        assert!((model.predict_proba(&one).unwrap()[0] - a[0]).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = Classifier::new(spec(true, 5, 0.3), &mut RngSeed(1).rng()).unwrap();
        model.bn.as_mut().unwrap().running_mean[0] = 0.25;
        let ck = model.to_checkpoint(Some(1), 4, serde_json::Value::Null).unwrap();
        let back = Classifier::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(false, 0, 0.0);
        s.lstm_layers.clear();
        assert!(Classifier::new(s, &mut RngSeed(0).rng()).is_err());
        let mut s = spec(false, 0, 0.0);
        s.lstm_layers[0].dropout = 1.0;
        assert!(s.validate().is_err());
    }
}
