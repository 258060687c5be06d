//! Gradient saliency of the stress logit with respect to each input cell.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{to_time_major, Classifier, Mode};
use crate::rng::RngSeed;

/// Averaged, max-normalized `[steps, features]` importance map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub values: Array2<f64>,
    pub feature_names: Vec<String>,
    /// Minutes per time step.
    pub resolution: f64,
    pub sample_count: usize,
    /// Every gradient was zero, so the map could not be normalized.
    pub degenerate: bool,
}

/// `|d logit / d x|` for a batch of standardized windows, one map per window.
pub fn batch_saliency(model: &Classifier, windows: &[ArrayView2<'_, f64>]) -> Result<Vec<Array2<f64>>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(256) {
        let x = to_time_major(chunk.iter().copied());
        // eval mode touches no randomness and couples no samples
        let cache = model.forward(&x, Mode::Eval, &mut RngSeed(0).rng())?;
        let (_, dx) = model.backward(&cache, &vec![1.0; chunk.len()]);
        for b in 0..chunk.len() {
            out.push(dx.slice(s![.., b, ..]).mapv(f64::abs));
        }
    }
    Ok(out)
}

pub fn sample_saliency(model: &Classifier, window: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(batch_saliency(model, &[window])?.pop().expect("one map"))
}

/// Mean of per-sample maps, scaled so the largest cell is 1.
pub fn normalize_average(maps: &[Array2<f64>], feature_names: Vec<String>, resolution: f64) -> Result<SaliencyMap> {
    let first = maps.first().ok_or_else(|| Error::InsufficientData {
        what: "saliency",
        reason: "no windows".into(),
    })?;
    let mut sum = Array2::<f64>::zeros(first.raw_dim());
    for m in maps {
        if m.raw_dim() != first.raw_dim() {
            return Err(Error::DimensionMismatch {
                context: "saliency maps",
                expected: format!("{:?}", first.shape()),
                actual: format!("{:?}", m.shape()),
            });
        }
        sum += m;
    }
    let mean = sum / maps.len() as f64;
    let peak = mean.iter().copied().fold(0.0, f64::max);
    let degenerate = !(peak > 0.0);
    let values = if degenerate { mean } else { mean / peak };
    if feature_names.len() != values.ncols() {
        return Err(Error::DimensionMismatch {
            context: "saliency feature names",
            expected: values.ncols().to_string(),
            actual: feature_names.len().to_string(),
        });
    }
    Ok(SaliencyMap {
        values,
        feature_names,
        resolution,
        sample_count: maps.len(),
        degenerate,
    })
}

pub fn average_saliency(
    model: &Classifier,
    windows: &[ArrayView2<'_, f64>],
    feature_names: Vec<String>,
    resolution: f64,
) -> Result<SaliencyMap> {
    normalize_average(&batch_saliency(model, windows)?, feature_names, resolution)
}

/// Length in minutes of the longest run of final steps that each have a cell above `threshold`.
pub fn effective_horizon(map: &SaliencyMap, threshold: f64) -> f64 {
    let steps = map
        .values
        .outer_iter()
        .rev()
        .take_while(|row| row.iter().any(|&v| v > threshold))
        .count();
    steps as f64 * map.resolution
}

impl SaliencyMap {
    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    /// Mean saliency of each feature over all steps.
    pub fn feature_means(&self) -> Vec<f64> {
        self.values.mean_axis(Axis(0)).expect("non-empty map").to_vec()
    }

    /// Rows are steps (oldest first), columns features, then a horizon line.
    pub fn write_csv(&self, path: &Path, threshold: f64) -> Result<()> {
        let mut out = String::from("step,minutes_before_end");
        for n in &self.feature_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        let t = self.steps();
        for (i, row) in self.values.outer_iter().enumerate() {
            out.push_str(&format!("{i},{}", (t - i) as f64 * self.resolution));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("# horizon_minutes,{}\n", effective_horizon(self, threshold)));
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Long-format `step,feature,value` rows for plotting.
    pub fn write_heatmap_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "feature", "value"])?;
        for ((t, f), v) in self.values.indexed_iter() {
            w.write_record([t.to_string(), self.feature_names[f].clone(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_grads;
    use crate::nn::{LstmLayerSpec, NetworkSpec};
    use ndarray::Array1;
    use rand::Rng;

    fn net(bn: bool, dense: usize) -> Classifier {
        let spec = NetworkSpec {
            input_dim: 3,
            lstm_layers: vec![
                LstmLayerSpec { hidden: 4, dropout: 0.2, recurrent_dropout: 0.1 },
                LstmLayerSpec { hidden: 3, dropout: 0.0, recurrent_dropout: 0.0 },
            ],
            batch_norm: bn,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            dense_hidden: dense,
            dense_dropout: 0.3,
        };
        let mut m = Classifier::new(spec, &mut RngSeed(7).rng()).unwrap();
        if let Some(b) = m.bn.as_mut() {
            b.running_mean = Array1::from(vec![0.1, -0.2, 0.05]);
            b.running_var = Array1::from(vec![0.5, 1.5, 0.8]);
        }
        m
    }

    fn window(seed: u64, t: usize) -> Array2<f64> {
        let mut r = RngSeed(seed).rng();
        Array2::from_shape_fn((t, 3), |_| r.random_range(-1.0..1.0))
    }

    fn logit(m: &Classifier, w: &Array2<f64>) -> f64 {
        m.forward(&to_time_major([w.view()]), Mode::Eval, &mut RngSeed(0).rng()).unwrap().logits()[0]
    }

    #[test]
    fn matches_finite_differences() {
        for (bn, dense) in [(false, 0), (true, 5)] {
            let m = net(bn, dense);
            let w = window(1, 6);
            let x = to_time_major([w.view()]);
            let cache = m.forward(&x, Mode::Eval, &mut RngSeed(0).rng()).unwrap();
            let (_, dx) = m.backward(&cache, &[1.0]);
            let signed: Vec<f64> = dx.iter().copied().collect();
            check_grads("saliency", &signed, |i, h| {
                let mut w2 = w.clone();
                w2.as_slice_mut().unwrap()[i] += h;
                logit(&m, &w2)
            }, 3);
            let sal = sample_saliency(&m, w.view()).unwrap();
            for (a, b) in sal.iter().zip(&signed) {
                assert_eq!(*a, b.abs());
            }
        }
    }

    #[test]
    fn batch_matches_single() {
        let m = net(true, 5);
        let ws: Vec<_> = (0..5).map(|i| window(i, 4)).collect();
        let views: Vec<_> = ws.iter().map(|w| w.view()).collect();
        let batch = batch_saliency(&m, &views).unwrap();
        for (w, b) in ws.iter().zip(&batch) {
            let single = sample_saliency(&m, w.view()).unwrap();
            assert!((&single - b).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn dead_feature_path_is_zero() {
        let mut m = net(false, 0);
        m.lstm[0].w.column_mut(1).fill(0.0);
        let sal = sample_saliency(&m, window(2, 5).view()).unwrap();
        assert!(sal.column(1).iter().all(|&v| v == 0.0));
        assert!(sal.column(0).iter().any(|&v| v > 0.0));
    }

    #[test]
    fn saturated_single_step_net_is_proportional_to_weights() {
        // gates i, o pinned open, forget irrelevant at t=1; at x=0 only the
        // candidate path carries gradient
        let spec = NetworkSpec {
            input_dim: 3,
            lstm_layers: vec![LstmLayerSpec { hidden: 1, dropout: 0.0, recurrent_dropout: 0.0 }],
            batch_norm: false,
            bn_momentum: 0.9,
            bn_eps: 1e-3,
            dense_hidden: 0,
            dense_dropout: 0.0,
        };
        let mut m = Classifier::new(spec, &mut RngSeed(1).rng()).unwrap();
        let wg = [0.5, -2.0, 1.0];
        let mut w = Array2::zeros((4, 3));
        w.row_mut(0).assign(&Array1::from(vec![0.3, 0.1, -0.7]));
        w.row_mut(2).assign(&Array1::from(wg.to_vec()));
        w.row_mut(3).assign(&Array1::from(vec![-0.4, 0.9, 0.2]));
        m.lstm[0].w = w;
        m.lstm[0].b = Array1::from(vec![3.0, 1.0, 0.0, 2.0]);
        m.out.w = Array2::from_elem((1, 1), 1.7);
        let map = average_saliency(&m, &[Array2::zeros((1, 3)).view()], vec!["a".into(), "b".into(), "c".into()], 5.0).unwrap();
        for (v, g) in map.values.row(0).iter().zip(wg) {
            assert!((v - g.abs() / 2.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn averaging_properties() {
        let m = net(true, 5);
        let ws: Vec<_> = (0..4).map(|i| window(10 + i, 6)).collect();
        let views: Vec<_> = ws.iter().map(|w| w.view()).collect();
        let names: Vec<String> = (0..3).map(|i| format!("f{i}")).collect();
        let map = average_saliency(&m, &views, names.clone(), 5.0).unwrap();
        assert_eq!(map.values.iter().copied().fold(0.0, f64::max), 1.0);
        assert!(map.values.iter().all(|&v| v >= 0.0));
        let doubled: Vec<_> = views.iter().chain(&views).copied().collect();
        let map2 = average_saliency(&m, &doubled, names.clone(), 5.0).unwrap();
        assert!((&map.values - &map2.values).iter().all(|d| d.abs() < 1e-12));
        let per = batch_saliency(&m, &views).unwrap();
        let scaled: Vec<_> = per.iter().map(|p| p * 3.5).collect();
        let map3 = normalize_average(&scaled, names.clone(), 5.0).unwrap();
        assert!((&map.values - &map3.values).iter().all(|d| d.abs() < 1e-12));
        let one = average_saliency(&m, &views[..1], names, 5.0).unwrap();
        let raw = &per[0];
        let peak = raw.iter().copied().fold(0.0, f64::max);
        assert!((&one.values - &(raw / peak)).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn horizon_rules() {
        let mk = |values: Array2<f64>| SaliencyMap {
            feature_names: vec!["a".into(); values.ncols()],
            values,
            resolution: 5.0,
            sample_count: 1,
            degenerate: false,
        };
        assert_eq!(effective_horizon(&mk(Array2::ones((20, 3))), 0.5), 100.0);
        assert_eq!(effective_horizon(&mk(Array2::from_elem((20, 3), 0.4)), 0.5), 0.0);
        let mut v = Array2::from_elem((30, 3), 0.2);
        v.slice_mut(s![18.., 1]).fill(0.9);
        v[[5, 0]] = 1.0;
        assert_eq!(effective_horizon(&mk(v.clone()), 0.5), 60.0);
        v[[25, 1]] = 0.3;
        assert_eq!(effective_horizon(&mk(v), 0.5), 20.0);
    }

    #[test]
    fn degenerate_map_flagged() {
        let map = normalize_average(&[Array2::zeros((3, 2))], vec!["a".into(), "b".into()], 1.0).unwrap();
        assert!(map.degenerate);
        assert!(normalize_average(&[], vec![], 1.0).is_err());
    }
}
