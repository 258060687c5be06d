//! LSTM layer with analytic backpropagation through time.
//!
//! Gate layout along the `4H` axis is `[input, forget, candidate, output]`.
//! Sequences are time-major: `[steps, batch, features]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{dropout_mask, sigmoid, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4H × D`
    pub w: Array2<f64>,
    /// `4H × H`
    pub u: Array2<f64>,
    /// `4H`
    pub b: Array1<f64>,
    pub dropout: f64,
    pub recurrent_dropout: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// Inputs after dropout, `[T, B, D]`.
    x: Array3<f64>,
    in_mask: Option<Array3<f64>>,
    rec_mask: Option<Array2<f64>>,
    /// Activated gates, `[T, B, 4H]`.
    gates: Array3<f64>,
    /// Cell states `c_0..c_T` (index 0 is the zero initial state).
    c: Array3<f64>,
    /// Hidden states `h_0..h_T`.
    h: Array3<f64>,
}

impl LstmCache {
    /// Hidden states `h_1..h_T`, `[T, B, H]`.
    pub fn outputs(&self) -> ndarray::ArrayView3<'_, f64> {
        self.h.slice(s![1.., .., ..])
    }
}

impl LstmLayer {
    /// Glorot-uniform input weights, orthogonal recurrent weights, forget bias 1.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, dropout: f64, recurrent_dropout: f64, rng: &mut R) -> Self {
        let h4 = 4 * hidden_dim;
        let limit = (6.0 / (input_dim + h4) as f64).sqrt();
        let w = Array2::from_shape_fn((h4, input_dim), |_| rng.random_range(-limit..limit));
        let u = orthogonal(h4, hidden_dim, rng);
        let mut b = Array1::zeros(h4);
        b.slice_mut(s![hidden_dim..2 * hidden_dim]).fill(1.0);
        LstmLayer {
            w,
            u,
            b,
            dropout,
            recurrent_dropout,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmLayer {
            w: Array2::zeros((4 * hidden_dim, input_dim)),
            u: Array2::zeros((4 * hidden_dim, hidden_dim)),
            b: Array1::zeros(4 * hidden_dim),
            dropout: 0.0,
            recurrent_dropout: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn zero_grads(&self) -> LstmGrads {
        LstmGrads {
            w: Array2::zeros(self.w.raw_dim()),
            u: Array2::zeros(self.u.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward<R: Rng + ?Sized>(&self, x: &Array3<f64>, mode: Mode, rng: &mut R) -> Result<LstmCache> {
        let (t_len, batch, d) = x.dim();
        if d != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "lstm input",
                expected: self.input_dim().to_string(),
                actual: d.to_string(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lstm input".into()));
        }
        let h = self.hidden_dim();
        let train = mode == Mode::Train;

        let in_mask = (train && self.dropout > 0.0).then(|| {
            let m = dropout_mask(t_len * batch * d, self.dropout, rng);
            Array3::from_shape_vec((t_len, batch, d), m).expect("mask shape")
        });
        let rec_mask = (train && self.recurrent_dropout > 0.0).then(|| {
            Array2::from_shape_vec((batch, h), dropout_mask(batch * h, self.recurrent_dropout, rng)).expect("mask shape")
        });
        let xm = match &in_mask {
            Some(m) => x * m,
            None => x.to_owned(),
        }
        .as_standard_layout()
        .into_owned();

        // input projections for all steps at once
        let x2 = xm.view().into_shape_with_order((t_len * batch, d)).expect("contiguous");
        let mut z_all = Array2::zeros((t_len * batch, 4 * h));
        general_mat_mul(1.0, &x2, &self.w.t(), 0.0, &mut z_all);
        z_all += &self.b;
        let mut gates = z_all.into_shape_with_order((t_len, batch, 4 * h)).expect("contiguous");

        let mut c_all = Array3::zeros((t_len + 1, batch, h));
        let mut h_all = Array3::zeros((t_len + 1, batch, h));
        let mut h_in = Array2::zeros((batch, h));
        for t in 0..t_len {
            h_in.assign(&h_all.index_axis(Axis(0), t));
            if let Some(m) = &rec_mask {
                h_in *= m;
            }
            let mut z = gates.index_axis_mut(Axis(0), t);
            general_mat_mul(1.0, &h_in, &self.u.t(), 1.0, &mut z);
            for bi in 0..batch {
                let mut zrow = z.row_mut(bi);
                let zs = zrow.as_slice_mut().expect("contiguous gates");
                let (gi, rest) = zs.split_at_mut(h);
                let (gf, rest) = rest.split_at_mut(h);
                let (gg, go) = rest.split_at_mut(h);
                for k in 0..h {
                    gi[k] = sigmoid(gi[k]);
                    gf[k] = sigmoid(gf[k]);
                    gg[k] = gg[k].tanh();
                    go[k] = sigmoid(go[k]);
                    let c_prev: f64 = c_all[[t, bi, k]];
                    let c = gf[k] * c_prev + gi[k] * gg[k];
                    c_all[[t + 1, bi, k]] = c;
                    h_all[[t + 1, bi, k]] = go[k] * c.tanh();
                }
            }
        }
        Ok(LstmCache {
            x: xm,
            in_mask,
            rec_mask,
            gates,
            c: c_all,
            h: h_all,
        })
    }

    /// Gradients for upstream gradient `grad_out` on every output step (`[T, B, H]`).
    pub fn backward(&self, cache: &LstmCache, grad_out: &Array3<f64>) -> (LstmGrads, Array3<f64>) {
        let (t_len, batch, d) = cache.x.dim();
        let h = self.hidden_dim();
        assert_eq!(grad_out.dim(), (t_len, batch, h), "lstm grad_out shape");

        let mut dz_all = Array3::<f64>::zeros((t_len, batch, 4 * h));
        let mut dh_next = Array2::<f64>::zeros((batch, h));
        let mut dc_next = Array2::<f64>::zeros((batch, h));
        let mut grads = self.zero_grads();
        let mut h_in = Array2::zeros((batch, h));

        for t in (0..t_len).rev() {
            {
                let gates = cache.gates.index_axis(Axis(0), t);
                let mut dz = dz_all.index_axis_mut(Axis(0), t);
                for bi in 0..batch {
                    for k in 0..h {
                        let i = gates[[bi, k]];
                        let f = gates[[bi, h + k]];
                        let g = gates[[bi, 2 * h + k]];
                        let o = gates[[bi, 3 * h + k]];
                        let c = cache.c[[t + 1, bi, k]];
                        let c_prev = cache.c[[t, bi, k]];
                        let tc = c.tanh();
                        let dh = grad_out[[t, bi, k]] + dh_next[[bi, k]];
                        let d_o = dh * tc;
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[[bi, k]];
                        dz[[bi, k]] = dc * g * i * (1.0 - i);
                        dz[[bi, h + k]] = dc * c_prev * f * (1.0 - f);
                        dz[[bi, 2 * h + k]] = dc * i * (1.0 - g * g);
                        dz[[bi, 3 * h + k]] = d_o * o * (1.0 - o);
                        dc_next[[bi, k]] = dc * f;
                    }
                }
            }
            let dz = dz_all.index_axis(Axis(0), t);
            h_in.assign(&cache.h.index_axis(Axis(0), t));
            if let Some(m) = &cache.rec_mask {
                h_in *= m;
            }
            general_mat_mul(1.0, &dz.t(), &h_in, 1.0, &mut grads.u);
            let mut dh_prev = dz.dot(&self.u);
            if let Some(m) = &cache.rec_mask {
                dh_prev *= m;
            }
            dh_next = dh_prev;
        }

        let dz2 = dz_all.view().into_shape_with_order((t_len * batch, 4 * h)).expect("contiguous");
        let x2 = cache.x.view().into_shape_with_order((t_len * batch, d)).expect("contiguous");
        general_mat_mul(1.0, &dz2.t(), &x2, 0.0, &mut grads.w);
        grads.b = dz2.sum_axis(Axis(0));
        let mut dx2 = Array2::zeros((t_len * batch, d));
        general_mat_mul(1.0, &dz2, &self.w, 0.0, &mut dx2);
        let mut dx = dx2.into_shape_with_order((t_len, batch, d)).expect("contiguous");
        if let Some(m) = &cache.in_mask {
            dx *= m;
        }
        (grads, dx)
    }
}

/// `rows × cols` matrix (rows ≥ cols) with orthonormal columns.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng));
    for j in 0..cols {
        for k in 0..j {
            let proj: f64 = a.column(j).dot(&a.column(k));
            let ck = a.column(k).to_owned();
            a.column_mut(j).scaled_add(-proj, &ck);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_grads, project};
    use crate::rng::RngSeed;

    fn rand3(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
        let mut r = RngSeed(seed).rng();
        Array3::from_shape_fn(shape, |_| r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let layer = LstmLayer::zeros(3, 4);
        let cache = layer.forward(&rand3((5, 2, 3), 1), Mode::Train, &mut RngSeed(0).rng()).unwrap();
        assert!(cache.outputs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_recurrence_by_hand() {
        let mut layer = LstmLayer::zeros(1, 1);
        layer.w = Array2::from_shape_vec((4, 1), vec![0.5, -0.3, 0.8, 0.2]).unwrap();
        layer.u = Array2::from_shape_vec((4, 1), vec![0.1, 0.4, -0.6, 0.7]).unwrap();
        layer.b = Array1::from(vec![0.05, 1.0, -0.1, 0.0]);
        let x = Array3::from_shape_vec((2, 1, 1), vec![1.5, -0.7]).unwrap();
        let out = layer.forward(&x, Mode::Eval, &mut RngSeed(0).rng()).unwrap();

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut expected = vec![];
        for xt in [1.5, -0.7] {
            let i = sig(0.5 * xt + 0.1 * h + 0.05);
            let f = sig(-0.3 * xt + 0.4 * h + 1.0);
            let g = (0.8 * xt - 0.6 * h - 0.1).tanh();
            let o = sig(0.2 * xt + 0.7 * h);
            c = f * c + i * g;
            h = o * c.tanh();
            expected.push(h);
        }
        for (t, e) in expected.iter().enumerate() {
            assert!((out.outputs()[[t, 0, 0]] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_is_deterministic_and_rng_free() {
        let layer = LstmLayer::init(3, 4, 0.3, 0.4, &mut RngSeed(1).rng());
        let x = rand3((6, 2, 3), 2);
        let a = layer.forward(&x, Mode::Eval, &mut RngSeed(5).rng()).unwrap();
        let b = layer.forward(&x, Mode::Eval, &mut RngSeed(99).rng()).unwrap();
        assert_eq!(a.outputs(), b.outputs());
    }

    #[test]
    fn dimension_mismatch() {
        let layer = LstmLayer::zeros(3, 4);
        assert!(layer.forward(&rand3((2, 2, 2), 1), Mode::Eval, &mut RngSeed(0).rng()).is_err());
    }

    #[test]
    fn orthogonal_columns() {
        let q = orthogonal(8, 2, &mut RngSeed(4).rng());
        let g = q.t().dot(&q);
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    fn loss_and_grads(layer: &LstmLayer, x: &Array3<f64>, proj: &Array3<f64>, seed: u64) -> (f64, LstmGrads, Array3<f64>) {
        let cache = layer.forward(x, Mode::Train, &mut RngSeed(seed).rng()).unwrap();
        let loss = (&cache.outputs() * proj).sum();
        let (g, dx) = layer.backward(&cache, proj);
        (loss, g, dx)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (dropout, rec) in [(0.0, 0.0), (0.3, 0.4)] {
            let layer = LstmLayer::init(3, 4, dropout, rec, &mut RngSeed(11).rng());
            let x = rand3((5, 2, 3), 12);
            let proj = project((5, 2, 4), 13);
            let (_, grads, dx) = loss_and_grads(&layer, &x, &proj, 7);

            let f_w = |i: usize, delta: f64| {
                let mut l = layer.clone();
                l.w.as_slice_mut().unwrap()[i] += delta;
                loss_and_grads(&l, &x, &proj, 7).0
            };
            check_grads("lstm w", grads.w.as_slice().unwrap(), f_w, 21);
            let f_u = |i: usize, delta: f64| {
                let mut l = layer.clone();
                l.u.as_slice_mut().unwrap()[i] += delta;
                loss_and_grads(&l, &x, &proj, 7).0
            };
            check_grads("lstm u", grads.u.as_slice().unwrap(), f_u, 22);
            let f_b = |i: usize, delta: f64| {
                let mut l = layer.clone();
                l.b[i] += delta;
                loss_and_grads(&l, &x, &proj, 7).0
            };
            check_grads("lstm b", grads.b.as_slice().unwrap(), f_b, 23);
            let f_x = |i: usize, delta: f64| {
                let mut xx = x.clone();
                xx.as_slice_mut().unwrap()[i] += delta;
                loss_and_grads(&layer, &xx, &proj, 7).0
            };
            check_grads("lstm x", dx.as_slice().unwrap(), f_x, 24);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let layer = LstmLayer::init(3, 4, 0.0, 0.0, &mut RngSeed(1).rng());
        let cache = layer.forward(&rand3((4, 2, 3), 2), Mode::Train, &mut RngSeed(0).rng()).unwrap();
        let (g, dx) = layer.backward(&cache, &Array3::zeros((4, 2, 4)));
        assert!(g.w.iter().chain(g.u.iter()).chain(g.b.iter()).chain(dx.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_sample_gradients() {
        let layer = LstmLayer::init(2, 3, 0.0, 0.0, &mut RngSeed(1).rng());
        let x = rand3((4, 2, 2), 3);
        let proj = project((4, 2, 3), 4);
        let (_, both, _) = loss_and_grads(&layer, &x, &proj, 0);
        let mut sum = layer.zero_grads();
        for b in 0..2 {
            let xb = x.slice(s![.., b..b + 1, ..]).to_owned();
            let pb = proj.slice(s![.., b..b + 1, ..]).to_owned();
            let (_, g, _) = loss_and_grads(&layer, &xb, &pb, 0);
            sum.w += &g.w;
            sum.u += &g.u;
            sum.b += &g.b;
        }
        for (a, b) in both.w.iter().chain(both.u.iter()).chain(both.b.iter()).zip(sum.w.iter().chain(sum.u.iter()).chain(sum.b.iter())) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
